//! Monte Carlo model of backward gradient propagation through residual blocks.
//!
//! Each block's Jacobian is `J = I + (σ/√W)·H` with `H` having i.i.d.
//! `N(0, 1/W)` entries, and the gradient at layer ℓ is
//! `g_ℓ = J_{ℓ+1}ᵀ ⋯ J_Dᵀ g_D` starting from a random unit `g_D`.
//! Nothing about attention or MLP structure enters: this reproduces the
//! random-matrix idealisation, not a trained transformer.
//!
//! Under this model `E‖g_ℓ‖²` *grows* by `(1 + σ²/W)` per block, so the raw
//! norm ratio is not a decay curve. What decays is the share of `g_ℓ` still
//! pointing along `g_D`; [`GradientProfile::ratios`] records that retention
//! `|cos(g_ℓ, g_D)|` and [`GradientProfile::norm_ratios`] keeps the norm
//! growth for comparison. The [`SimMode::NormRecursion`] mode instead
//! evaluates the closed-form contraction `E‖g_ℓ‖² = E‖g_{ℓ+1}‖²(1 − σ²/W)`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::fit_exponential_decay;
use crate::rng::{stream_rng, DEFAULT_SEED};
use crate::scaling_law::{d_crit, ScalingLawParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SimMode {
    MatrixProduct,
    NormRecursion,
}

impl std::str::FromStr for SimMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "matrix" | "matrix-product" | "matrixproduct" => Ok(SimMode::MatrixProduct),
            "recursion" | "norm-recursion" | "normrecursion" => Ok(SimMode::NormRecursion),
            other => Err(Error::InvalidInput(format!(
                "unknown simulation mode `{other}` (expected matrix or recursion)"
            ))),
        }
    }
}

/// How `Hᵀg` is drawn in [`SimMode::MatrixProduct`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JacobianSampler {
    /// Draw `Hᵀg ~ N(0, ‖g‖²/W · I)` directly. Each `H_k` is fresh and applied
    /// to one vector, so this has exactly the distribution of the dense product.
    Projected,
    /// Materialise every `H_k`. O(W²) per block; for cross-checking.
    Dense,
}

/// Aggregation of per-trial norms into `norm_ratios`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregation {
    /// Mean of ‖g‖.
    Norm,
    /// Root of the mean of ‖g‖².
    SquaredNorm,
}

pub const DEFAULT_WORK_CAP: f64 = 2e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub depth: u64,
    pub width: u64,
    pub sigma: f64,
    pub trials: u64,
    pub rng_seed: u64,
    pub mode: SimMode,
    pub sampler: JacobianSampler,
    pub aggregation: Aggregation,
    /// Upper bound on random draws (or multiply-adds for the dense sampler).
    pub work_cap: f64,
}

/// Default simulated depth: three critical depths under the log law, κ = 2.43.
pub fn default_depth(width: u64) -> Result<u64> {
    let dc = d_crit(width, &ScalingLawParams::table1())?;
    Ok(((3.0 * dc).ceil() as u64).max(2))
}

impl SimConfig {
    pub fn for_width(width: u64) -> Result<Self> {
        Ok(Self {
            depth: default_depth(width)?,
            width,
            sigma: 1.0,
            trials: 64,
            rng_seed: DEFAULT_SEED,
            mode: SimMode::MatrixProduct,
            sampler: JacobianSampler::Projected,
            aggregation: Aggregation::Norm,
            work_cap: DEFAULT_WORK_CAP,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::InvalidInput("trials must be at least 1".into()));
        }
        if self.depth < 2 {
            return Err(Error::InvalidInput(format!(
                "depth must be at least 2, got {}",
                self.depth
            )));
        }
        if self.width < 1 {
            return Err(Error::InvalidInput("width must be at least 1".into()));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidInput(format!(
                "sigma must be finite and non-negative, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    pub fn work_estimate(&self) -> f64 {
        let per_block = match self.sampler {
            JacobianSampler::Projected => self.width as f64,
            JacobianSampler::Dense => (self.width as f64).powi(2),
        };
        per_block * (self.depth - 1) as f64 * self.trials as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientProfile {
    pub width: u64,
    pub depth: u64,
    pub mode: SimMode,
    pub sigma: f64,
    pub trials: u64,
    /// Index `ℓ − 1` holds layer ℓ; the last entry (layer D) is exactly 1.
    pub ratios: Vec<f64>,
    /// Standard error of each mean ratio (zero for the closed-form mode).
    pub std_err: Vec<f64>,
    /// ‖g_ℓ‖/‖g_D‖ aggregated over trials.
    pub norm_ratios: Vec<f64>,
    /// Persistence length fitted to `ratios`; infinite when there is no decay.
    pub tau_hat: f64,
    pub no_decay: bool,
}

impl GradientProfile {
    /// `(layer, ratio)` pairs for layers 1..=D.
    pub fn layers(&self) -> Vec<(u64, f64)> {
        self.ratios
            .iter()
            .enumerate()
            .map(|(i, r)| (i as u64 + 1, *r))
            .collect()
    }

    fn finish(mut self) -> Result<Self> {
        let fit = fit_exponential_decay(&self.layers())?;
        self.tau_hat = fit.tau_hat;
        self.no_decay = fit.no_decay;
        Ok(self)
    }
}

struct Trial {
    coherence: Vec<f64>,
    norms: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn run_trial(cfg: &SimConfig, trial: u64) -> Trial {
    let w = cfg.width as usize;
    let d = cfg.depth as usize;
    let mut rng = stream_rng(cfg.rng_seed, (cfg.width << 32) | trial);
    let mut g: Vec<f64> = (0..w).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n0 = dot(&g, &g).sqrt();
    g.iter_mut().for_each(|v| *v /= n0);
    let top = g.clone();
    let top_norm = dot(&top, &top).sqrt();
    let eps = cfg.sigma / (cfg.width as f64).sqrt();
    let entry_sd = 1.0 / (cfg.width as f64).sqrt();

    let mut coherence = vec![0.0; d];
    let mut norms = vec![0.0; d];
    coherence[d - 1] = 1.0;
    norms[d - 1] = 1.0;
    let mut update = vec![0.0; w];
    for layer in (0..d - 1).rev() {
        match cfg.sampler {
            JacobianSampler::Projected => {
                let scale = dot(&g, &g).sqrt() * entry_sd;
                for u in update.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *u = scale * z;
                }
            }
            JacobianSampler::Dense => {
                // (Hᵀg)_j = Σ_i H_ij g_i, with H filled row by row
                update.iter_mut().for_each(|u| *u = 0.0);
                for gi in g.iter() {
                    for u in update.iter_mut() {
                        let z: f64 = rng.sample(StandardNormal);
                        *u += z * entry_sd * gi;
                    }
                }
            }
        }
        for (gv, u) in g.iter_mut().zip(&update) {
            *gv += eps * u;
        }
        let norm = dot(&g, &g).sqrt();
        norms[layer] = norm / top_norm;
        coherence[layer] = if norm > 0.0 {
            dot(&g, &top).abs() / (norm * top_norm)
        } else {
            0.0
        };
    }
    Trial { coherence, norms }
}

/// Monte Carlo Jacobian-product simulation.
pub fn simulate_matrix_product(cfg: &SimConfig) -> Result<GradientProfile> {
    cfg.validate()?;
    let work = cfg.work_estimate();
    if work > cfg.work_cap {
        return Err(Error::WorkCap {
            estimate: work,
            cap: cfg.work_cap,
        });
    }
    let trials: Vec<Trial> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, t))
        .collect();

    let d = cfg.depth as usize;
    let n = trials.len() as f64;
    let mut ratios = vec![0.0; d];
    let mut std_err = vec![0.0; d];
    let mut norm_ratios = vec![0.0; d];
    for layer in 0..d {
        let mean = trials.iter().map(|t| t.coherence[layer]).sum::<f64>() / n;
        let var = if trials.len() > 1 {
            trials
                .iter()
                .map(|t| (t.coherence[layer] - mean).powi(2))
                .sum::<f64>()
                / (n - 1.0)
        } else {
            0.0
        };
        ratios[layer] = mean;
        std_err[layer] = (var / n).sqrt();
        norm_ratios[layer] = match cfg.aggregation {
            Aggregation::Norm => trials.iter().map(|t| t.norms[layer]).sum::<f64>() / n,
            Aggregation::SquaredNorm => {
                (trials.iter().map(|t| t.norms[layer].powi(2)).sum::<f64>() / n).sqrt()
            }
        };
    }
    ratios[d - 1] = 1.0;
    norm_ratios[d - 1] = 1.0;
    GradientProfile {
        width: cfg.width,
        depth: cfg.depth,
        mode: SimMode::MatrixProduct,
        sigma: cfg.sigma,
        trials: cfg.trials,
        ratios,
        std_err,
        norm_ratios,
        tau_hat: f64::NAN,
        no_decay: false,
    }
    .finish()
}

/// Closed-form recursion `ratio_ℓ = (1 − σ²/W)^{(D−ℓ)/2}`.
pub fn simulate_norm_recursion(cfg: &SimConfig) -> Result<GradientProfile> {
    cfg.validate()?;
    let x = cfg.sigma * cfg.sigma / cfg.width as f64;
    if x >= 1.0 {
        return Err(Error::Domain(format!(
            "σ²/W = {x} ≥ 1 makes the contraction factor non-positive"
        )));
    }
    let half_log = 0.5 * (-x).ln_1p();
    let d = cfg.depth;
    let ratios: Vec<f64> = (1..=d).map(|l| ((d - l) as f64 * half_log).exp()).collect();
    GradientProfile {
        width: cfg.width,
        depth: d,
        mode: SimMode::NormRecursion,
        sigma: cfg.sigma,
        trials: cfg.trials,
        norm_ratios: ratios.clone(),
        std_err: vec![0.0; d as usize],
        ratios,
        tau_hat: f64::NAN,
        no_decay: false,
    }
    .finish()
}

pub fn simulate(cfg: &SimConfig) -> Result<GradientProfile> {
    match cfg.mode {
        SimMode::MatrixProduct => simulate_matrix_product(cfg),
        SimMode::NormRecursion => simulate_norm_recursion(cfg),
    }
}

/// Depth used for each width in a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DepthRule {
    Fixed(u64),
    /// `ceil(multiple · κ·ln W)`.
    CritMultiple { multiple: f64, kappa: f64 },
}

impl DepthRule {
    pub fn depth_for(&self, width: u64) -> Result<u64> {
        match *self {
            DepthRule::Fixed(d) => Ok(d),
            DepthRule::CritMultiple { multiple, kappa } => {
                let dc = d_crit(width, &ScalingLawParams::table1().with_kappa(kappa))?;
                Ok(((multiple * dc).ceil() as u64).max(2))
            }
        }
    }
}

/// Simulate each width and return the profiles in input order.
pub fn sweep_profiles(
    widths: &[u64],
    template: &SimConfig,
    depth: DepthRule,
) -> Result<Vec<GradientProfile>> {
    if widths.len() < 3 {
        return Err(Error::Precondition(format!(
            "a τ sweep needs at least 3 widths, got {}",
            widths.len()
        )));
    }
    widths
        .par_iter()
        .map(|&width| {
            let wrap = |e: Error| Error::AtWidth {
                width,
                source: Box::new(e),
            };
            let cfg = SimConfig {
                width,
                depth: depth.depth_for(width).map_err(wrap)?,
                ..*template
            };
            simulate(&cfg).map_err(wrap)
        })
        .collect()
}

/// `(width, τ̂)` curve ready for [`crate::fit::fit_tau_models`].
pub fn sweep_tau(widths: &[u64], template: &SimConfig, depth: DepthRule) -> Result<Vec<(u64, f64)>> {
    Ok(sweep_profiles(widths, template, depth)?
        .into_iter()
        .map(|p| (p.width, p.tau_hat))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(width: u64, depth: u64, sigma: f64, trials: u64) -> SimConfig {
        SimConfig {
            depth,
            width,
            sigma,
            trials,
            ..SimConfig::for_width(width).unwrap()
        }
    }

    #[test]
    fn zero_sigma_is_identity_chain() {
        let p = simulate_matrix_product(&cfg(64, 12, 0.0, 8)).unwrap();
        for r in &p.ratios {
            assert!((r - 1.0).abs() <= 10.0 * f64::EPSILON, "{r}");
        }
        assert!(p.no_decay || p.tau_hat > 1e12);
    }

    #[test]
    fn depth_two_has_one_interior_value() {
        let p = simulate_matrix_product(&cfg(32, 2, 1e-12, 4)).unwrap();
        assert_eq!(p.ratios.len(), 2);
        assert!((p.ratios[0] - 1.0).abs() <= 10.0 * f64::EPSILON);
        assert_eq!(p.ratios[1], 1.0);
    }

    #[test]
    fn norms_grow_while_coherence_decays() {
        let p = simulate_matrix_product(&cfg(64, 40, 1.0, 64)).unwrap();
        assert!(p.norm_ratios[0] > 1.0);
        assert!(p.ratios[0] < 1.0);
        assert!(p.tau_hat.is_finite() && p.tau_hat > 0.0);
    }

    #[test]
    fn seed_determinism() {
        let c = cfg(128, 20, 1.0, 16);
        assert_eq!(simulate_matrix_product(&c).unwrap(), simulate_matrix_product(&c).unwrap());
        let other = SimConfig { rng_seed: 7, ..c };
        assert_ne!(
            simulate_matrix_product(&c).unwrap().ratios,
            simulate_matrix_product(&other).unwrap().ratios
        );
    }

    #[test]
    fn dense_and_projected_agree_in_distribution() {
        let base = cfg(48, 24, 2.0, 400);
        let proj = simulate_matrix_product(&base).unwrap();
        let dense = simulate_matrix_product(&SimConfig {
            sampler: JacobianSampler::Dense,
            ..base
        })
        .unwrap();
        for l in 0..23 {
            let se = (proj.std_err[l].powi(2) + dense.std_err[l].powi(2)).sqrt();
            assert!(
                (proj.ratios[l] - dense.ratios[l]).abs() < 4.0 * se + 1e-12,
                "layer {l}: {} vs {} (se {se})",
                proj.ratios[l],
                dense.ratios[l]
            );
        }
    }

    #[test]
    fn work_cap_refuses_with_estimate() {
        let c = SimConfig {
            sampler: JacobianSampler::Dense,
            work_cap: 1e6,
            ..cfg(1024, 10, 1.0, 4)
        };
        match simulate_matrix_product(&c) {
            Err(Error::WorkCap { estimate, .. }) => assert_eq!(estimate, 1024.0 * 1024.0 * 9.0 * 4.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn recursion_closed_form() {
        let p = simulate_norm_recursion(&cfg(512, 30, 1.0, 1)).unwrap();
        assert_eq!(p.ratios[29], 1.0);
        let want = (1.0 - 1.0 / 512.0f64).powf(29.0 / 2.0);
        assert!((p.ratios[0] - want).abs() < 1e-14);
        let tau = -2.0 / (1.0 - 1.0 / 512.0f64).ln();
        assert!((p.tau_hat - tau).abs() / tau < 1e-10);
    }

    #[test]
    fn recursion_domain_error() {
        assert!(matches!(
            simulate_norm_recursion(&cfg(4, 10, 2.0, 1)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn sweep_needs_three_widths() {
        let t = SimConfig::for_width(512).unwrap();
        assert!(matches!(
            sweep_tau(&[512], &t, DepthRule::Fixed(10)),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn sweep_errors_carry_width() {
        let t = SimConfig {
            mode: SimMode::NormRecursion,
            sigma: 20.0,
            ..SimConfig::for_width(512).unwrap()
        };
        let err = sweep_tau(&[256, 512, 1024], &t, DepthRule::Fixed(10)).unwrap_err();
        assert!(matches!(err, Error::AtWidth { width: 256, .. }), "{err}");
    }

    #[test]
    fn default_depth_is_three_critical_depths() {
        assert_eq!(default_depth(512).unwrap(), 46);
    }
}
