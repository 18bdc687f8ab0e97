//! Univariate fits used on persistence-length curves and gradient profiles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordinary least squares `y = slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Precondition(
            "linear fit needs at least two paired points".into(),
        ));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Precondition("x values are all identical".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let pred: Vec<f64> = x.iter().map(|v| slope * v + intercept).collect();
    Ok(LinearFit {
        slope,
        intercept,
        r_squared: r_squared(y, &pred),
    })
}

/// `1 − SS_res/SS_tot`, defined as 0 when the observations have no variance.
pub fn r_squared(observed: &[f64], predicted: &[f64]) -> f64 {
    let n = observed.len() as f64;
    let mean = observed.iter().sum::<f64>() / n;
    let ss_tot: f64 = observed.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = observed
        .iter()
        .zip(predicted)
        .map(|(o, p)| (o - p).powi(2))
        .sum();
    if ss_tot == 0.0 {
        0.0
    } else {
        1.0 - ss_res / ss_tot
    }
}

/// `τ = c·W^a`, fitted in log-log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub c: f64,
    pub a: f64,
    pub r_squared: f64,
}

/// `τ = c·ln W`, fitted through the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogFit {
    pub c: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauModels {
    pub power: PowerFit,
    pub log: LogFit,
}

impl TauModels {
    pub fn power_preferred(&self) -> bool {
        self.power.r_squared > self.log.r_squared
    }
}

/// Fit both persistence-length forms to `(width, τ)` points. R² for both is
/// computed on τ itself, not on the transformed scale.
pub fn fit_tau_models(curve: &[(u64, f64)]) -> Result<TauModels> {
    let mut widths: Vec<u64> = curve.iter().map(|(w, _)| *w).collect();
    widths.sort_unstable();
    widths.dedup();
    if widths.len() < 3 {
        return Err(Error::Precondition(format!(
            "need at least 3 distinct widths, got {}",
            widths.len()
        )));
    }
    if let Some((w, t)) = curve.iter().find(|(w, t)| !(*t > 0.0) || !t.is_finite() || *w < 2) {
        return Err(Error::Precondition(format!(
            "τ must be positive and finite with width ≥ 2 (width {w}, τ {t})"
        )));
    }
    let ln_w: Vec<f64> = curve.iter().map(|(w, _)| (*w as f64).ln()).collect();
    let taus: Vec<f64> = curve.iter().map(|(_, t)| *t).collect();
    let ln_t: Vec<f64> = taus.iter().map(|t| t.ln()).collect();

    let ll = linear_fit(&ln_w, &ln_t)?;
    let (pc, pa) = (ll.intercept.exp(), ll.slope);
    let power_pred: Vec<f64> = curve.iter().map(|(w, _)| pc * (*w as f64).powf(pa)).collect();

    let lc = ln_w.iter().zip(&taus).map(|(x, y)| x * y).sum::<f64>()
        / ln_w.iter().map(|x| x * x).sum::<f64>();
    let log_pred: Vec<f64> = ln_w.iter().map(|x| lc * x).collect();

    Ok(TauModels {
        power: PowerFit {
            c: pc,
            a: pa,
            r_squared: r_squared(&taus, &power_pred),
        },
        log: LogFit {
            c: lc,
            r_squared: r_squared(&taus, &log_pred),
        },
    })
}

/// Fitted rates at or below this magnitude count as no decay.
pub const FLAT_RATE: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Persistence length; `f64::INFINITY` when the profile shows no decay.
    pub tau_hat: f64,
    /// Set when `tau_hat` is the infinite sentinel.
    pub no_decay: bool,
}

/// Least-squares fit of `ln(ratio) = −(D − ℓ)/τ` through the origin, where
/// `D` is the largest layer index in the profile.
///
/// Ratios must be positive and equal 1 at the top layer. Values slightly
/// above 1 elsewhere are tolerated so that noisy measurements can be fitted.
pub fn fit_exponential_decay(profile: &[(u64, f64)]) -> Result<DecayFit> {
    let top = profile
        .iter()
        .map(|(l, _)| *l)
        .max()
        .ok_or_else(|| Error::Precondition("empty gradient profile".into()))?;
    let top_ratio = profile
        .iter()
        .find(|(l, _)| *l == top)
        .map(|(_, r)| *r)
        .unwrap_or(f64::NAN);
    if (top_ratio - 1.0).abs() > 1e-12 {
        return Err(Error::Precondition(format!(
            "ratio at the top layer must be 1, got {top_ratio}"
        )));
    }
    if let Some((l, r)) = profile.iter().find(|(_, r)| !(*r > 0.0) || !r.is_finite()) {
        return Err(Error::Precondition(format!(
            "ratio at layer {l} must be positive, got {r}"
        )));
    }
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (l, r) in profile {
        let dist = (top - l) as f64;
        sxy += dist * r.ln();
        sxx += dist * dist;
    }
    if sxx == 0.0 {
        return Err(Error::Precondition(
            "profile needs at least one layer below the top".into(),
        ));
    }
    let slope = sxy / sxx;
    // rounding in an identity chain leaves rates of a few ulps either way
    if slope.abs() <= FLAT_RATE {
        return Ok(DecayFit {
            tau_hat: f64::INFINITY,
            no_decay: true,
        });
    }
    if slope > 0.0 {
        return Err(Error::Domain(format!(
            "profile grows towards the input (fitted rate {slope:.3e} per layer); no decay length"
        )));
    }
    Ok(DecayFit {
        tau_hat: -1.0 / slope,
        no_decay: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    const WIDTHS: [u64; 4] = [256, 512, 1024, 1536];

    #[test]
    fn noiseless_power_law_recovered() {
        let curve: Vec<(u64, f64)> = WIDTHS.iter().map(|&w| (w, 2.06 * (w as f64).powf(0.44))).collect();
        let m = fit_tau_models(&curve).unwrap();
        assert_abs_diff_eq!(m.power.c, 2.06, epsilon = 1e-6);
        assert_abs_diff_eq!(m.power.a, 0.44, epsilon = 1e-6);
        assert_abs_diff_eq!(m.power.r_squared, 1.0, epsilon = 1e-12);
        assert!(m.power_preferred());
    }

    #[test]
    fn noiseless_log_law_recovered() {
        let curve: Vec<(u64, f64)> = WIDTHS.iter().map(|&w| (w, 5.79 * (w as f64).ln())).collect();
        let m = fit_tau_models(&curve).unwrap();
        assert_abs_diff_eq!(m.log.c, 5.79, epsilon = 1e-12);
        assert_abs_diff_eq!(m.log.r_squared, 1.0, epsilon = 1e-12);
        assert!(m.power.r_squared < 1.0);
    }

    #[test]
    fn tau_models_preconditions() {
        assert!(fit_tau_models(&[(256, 1.0), (512, 2.0), (256, 1.5)]).is_err());
        assert!(fit_tau_models(&[(256, 1.0), (512, -2.0), (1024, 3.0)]).is_err());
    }

    fn exact_profile(depth: u64, tau: f64) -> Vec<(u64, f64)> {
        (1..=depth)
            .map(|l| (l, (-((depth - l) as f64) / tau).exp()))
            .collect()
    }

    #[test]
    fn exact_decay_recovered() {
        let fit = fit_exponential_decay(&exact_profile(60, 20.0)).unwrap();
        assert_abs_diff_eq!(fit.tau_hat, 20.0, epsilon = 1e-9);
    }

    #[test]
    fn one_over_e_at_tau_layers_below_top() {
        let p = exact_profile(60, 20.0);
        let (_, r) = p.iter().find(|(l, _)| *l == 40).unwrap();
        assert_abs_diff_eq!(*r, (-1.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn noisy_decay_within_ten_percent() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let mut p = exact_profile(60, 20.0);
        for (l, r) in p.iter_mut() {
            if *l != 60 {
                *r *= 1.0 + noise.sample(&mut rng);
            }
        }
        let fit = fit_exponential_decay(&p).unwrap();
        assert!((fit.tau_hat - 20.0).abs() / 20.0 < 0.10, "{}", fit.tau_hat);
    }

    #[test]
    fn flat_profile_flagged_infinite() {
        let p: Vec<(u64, f64)> = (1..=10).map(|l| (l, 1.0)).collect();
        let fit = fit_exponential_decay(&p).unwrap();
        assert!(fit.no_decay && fit.tau_hat.is_infinite());
    }

    #[test]
    fn growing_profile_rejected() {
        let p: Vec<(u64, f64)> = (1..=10).map(|l| (l, 1.0 + (10 - l) as f64 * 0.01)).collect();
        assert!(matches!(fit_exponential_decay(&p), Err(Error::Domain(_))));
    }

    #[test]
    fn top_ratio_must_be_one() {
        assert!(fit_exponential_decay(&[(1, 0.5), (2, 0.9)]).is_err());
        assert!(fit_exponential_decay(&[(1, 0.0), (2, 1.0)]).is_err());
    }

    #[test]
    fn r_squared_zero_variance_convention() {
        assert_eq!(r_squared(&[3.0, 3.0, 3.0], &[3.1, 2.9, 3.0]), 0.0);
    }
}
