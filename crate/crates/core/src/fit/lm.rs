//! Levenberg–Marquardt with a central-difference Jacobian.
//!
//! Minimises `S(x) = Σ rᵢ(x)²` for a residual function that may refuse a
//! point (returns `None`), which the solver treats like an uphill step.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Relative step for the central-difference Jacobian.
pub const FD_RELATIVE_STEP: f64 = 1e-6;

const MAX_DAMPING: f64 = 1e16;
const MIN_DAMPING: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmSettings {
    pub max_iterations: usize,
    pub residual_tolerance: f64,
    pub param_tolerance: f64,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
}

impl Default for LmSettings {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            residual_tolerance: 1e-10,
            param_tolerance: 1e-8,
            initial_damping: 1e-3,
            damping_up: 10.0,
            damping_down: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    /// Relative decrease of the objective fell below `residual_tolerance`.
    ResidualTolerance,
    /// Accepted step shorter than `param_tolerance` relative to `x`.
    ParamTolerance,
    /// Gradient vanished.
    Stationary,
    /// No downhill step found before damping saturated.
    DampingExhausted,
    MaxIterations,
    /// Non-finite residuals at the start or a Jacobian/system that cannot be solved.
    Singular,
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub x: Vec<f64>,
    pub residuals: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
    /// Objective after each accepted step, starting with the initial value.
    pub history: Vec<f64>,
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn jacobian<F>(f: &F, x: &[f64], m: usize) -> Option<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut probe = x.to_vec();
    for j in 0..n {
        let h = FD_RELATIVE_STEP * x[j].abs().max(1.0);
        probe[j] = x[j] + h;
        let up = f(&probe)?;
        probe[j] = x[j] - h;
        let down = f(&probe)?;
        probe[j] = x[j];
        for i in 0..m {
            let d = (up[i] - down[i]) / (2.0 * h);
            if !d.is_finite() {
                return None;
            }
            jac[(i, j)] = d;
        }
    }
    Some(jac)
}

pub fn minimize<F>(f: F, x0: &[f64], settings: &LmSettings) -> LmOutcome
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let mut x = x0.to_vec();
    let n = x.len();
    let singular = |x: Vec<f64>| LmOutcome {
        x,
        residuals: Vec::new(),
        objective: f64::INFINITY,
        iterations: 0,
        converged: false,
        termination: Termination::Singular,
        history: Vec::new(),
    };
    let mut r = match f(&x) {
        Some(r) if r.iter().all(|v| v.is_finite()) => r,
        _ => return singular(x),
    };
    let m = r.len();
    let mut s = sum_sq(&r);
    let mut history = vec![s];
    let mut lambda = settings.initial_damping;
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;

    'outer: while iterations < settings.max_iterations {
        iterations += 1;
        let Some(jac) = jacobian(&f, &x, m) else {
            termination = Termination::Singular;
            break;
        };
        let rv = DVector::from_column_slice(&r);
        let grad = jac.tr_mul(&rv);
        if grad.amax() <= f64::EPSILON * (1.0 + s) {
            termination = Termination::Stationary;
            break;
        }
        let jtj = jac.tr_mul(&jac);
        let max_diag = (0..n).map(|j| jtj[(j, j)]).fold(0.0_f64, f64::max);
        let floor = (max_diag * 1e-12).max(f64::MIN_POSITIVE);

        loop {
            let mut lhs = jtj.clone();
            for j in 0..n {
                lhs[(j, j)] += lambda * jtj[(j, j)].max(floor);
            }
            let step = match lhs.cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => {
                    lambda *= settings.damping_up;
                    if lambda > MAX_DAMPING {
                        termination = Termination::Singular;
                        break 'outer;
                    }
                    continue;
                }
            };
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let accepted = f(&trial)
                .filter(|rt| rt.iter().all(|v| v.is_finite()))
                .map(|rt| (sum_sq(&rt), rt))
                .filter(|(st, _)| *st <= s);
            match accepted {
                Some((s_new, r_new)) => {
                    let decrease = s - s_new;
                    let step_norm = step.norm();
                    let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    x = trial;
                    r = r_new;
                    s = s_new;
                    history.push(s);
                    lambda = (lambda * settings.damping_down).max(MIN_DAMPING);
                    if decrease <= settings.residual_tolerance * s
                        || s <= f64::MIN_POSITIVE
                    {
                        termination = Termination::ResidualTolerance;
                        break 'outer;
                    }
                    if step_norm <= settings.param_tolerance * (x_norm + settings.param_tolerance)
                    {
                        termination = Termination::ParamTolerance;
                        break 'outer;
                    }
                    break;
                }
                None => {
                    lambda *= settings.damping_up;
                    if lambda > MAX_DAMPING {
                        termination = Termination::DampingExhausted;
                        break 'outer;
                    }
                }
            }
        }
    }

    let converged = match termination {
        Termination::ResidualTolerance | Termination::ParamTolerance | Termination::Stationary => {
            true
        }
        // Saturated damping at a point where no representable step improves S
        // is a minimum to working precision.
        Termination::DampingExhausted => true,
        Termination::MaxIterations | Termination::Singular => false,
    };

    LmOutcome {
        x,
        residuals: r,
        objective: s,
        iterations,
        converged,
        termination,
        history,
    }
}
