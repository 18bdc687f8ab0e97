//! Estimating [`ScalingLawParams`] from observed losses.
//!
//! The fit minimises `Σ (L̂ᵢ − Lᵢ)²` with Levenberg–Marquardt over the free
//! subset of the parameter vector. Positive-only parameters (A, B, γ, κ, c)
//! are optimised on a log scale and the persistence exponent `a` on a logit
//! scale. Records whose token count is unknown get a free per-scale-group
//! offset in place of the data term `B/T^δ`.
//!
//! Residuals are always evaluated in a canonical record order, so the result
//! does not depend on how the caller ordered the input.

pub mod curves;
pub mod lm;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{count_params, LossRecord, ScaleGroup};
use crate::rng::{stream_rng, DEFAULT_SEED};
use crate::scaling_law::{DcritForm, ScalingLawParams, KAPLAN_ALPHA, KAPLAN_DELTA};

pub use curves::{
    fit_exponential_decay, fit_tau_models, linear_fit, r_squared, DecayFit, LinearFit, LogFit,
    PowerFit, TauModels,
};
pub use lm::{LmOutcome, LmSettings, Termination};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamName {
    A,
    Alpha,
    B,
    Delta,
    Gamma,
    Mu,
    Kappa,
    TauC,
    TauA,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scale {
    Linear,
    Log,
    Logit,
}

impl ParamName {
    pub const ALL: [ParamName; 9] = [
        ParamName::A,
        ParamName::Alpha,
        ParamName::B,
        ParamName::Delta,
        ParamName::Gamma,
        ParamName::Mu,
        ParamName::Kappa,
        ParamName::TauC,
        ParamName::TauA,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ParamName::A => "a",
            ParamName::Alpha => "alpha",
            ParamName::B => "b",
            ParamName::Delta => "delta",
            ParamName::Gamma => "gamma",
            ParamName::Mu => "mu",
            ParamName::Kappa => "kappa",
            ParamName::TauC => "tau_c",
            ParamName::TauA => "tau_a",
        }
    }

    pub fn get(&self, p: &ScalingLawParams) -> f64 {
        match self {
            ParamName::A => p.a,
            ParamName::Alpha => p.alpha,
            ParamName::B => p.b,
            ParamName::Delta => p.delta,
            ParamName::Gamma => p.gamma,
            ParamName::Mu => p.mu,
            ParamName::Kappa => p.kappa,
            ParamName::TauC => p.tau_c,
            ParamName::TauA => p.tau_a,
        }
    }

    pub fn set(&self, p: &mut ScalingLawParams, v: f64) {
        match self {
            ParamName::A => p.a = v,
            ParamName::Alpha => p.alpha = v,
            ParamName::B => p.b = v,
            ParamName::Delta => p.delta = v,
            ParamName::Gamma => p.gamma = v,
            ParamName::Mu => p.mu = v,
            ParamName::Kappa => p.kappa = v,
            ParamName::TauC => p.tau_c = v,
            ParamName::TauA => p.tau_a = v,
        }
    }

    fn scale(&self) -> Scale {
        match self {
            ParamName::A | ParamName::B | ParamName::Gamma | ParamName::Kappa | ParamName::TauC => {
                Scale::Log
            }
            ParamName::TauA => Scale::Logit,
            ParamName::Alpha | ParamName::Delta | ParamName::Mu => Scale::Linear,
        }
    }

    fn to_internal(self, v: f64) -> f64 {
        match self.scale() {
            Scale::Linear => v,
            Scale::Log => v.ln(),
            Scale::Logit => (v / (1.0 - v)).ln(),
        }
    }

    fn to_external(self, x: f64) -> f64 {
        match self.scale() {
            Scale::Linear => x,
            Scale::Log => x.exp(),
            Scale::Logit => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Standard deviation of multi-start jitter on the internal scale.
    fn jitter(&self) -> f64 {
        match self.scale() {
            Scale::Log => 0.5,
            Scale::Logit => 0.3,
            Scale::Linear => match self {
                ParamName::Mu => 0.2,
                _ => 0.05,
            },
        }
    }
}

impl fmt::Display for ParamName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ParamName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        ParamName::ALL
            .into_iter()
            .find(|p| p.as_str() == key)
            .ok_or_else(|| Error::InvalidInput(format!("unknown parameter `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iterations: usize,
    pub residual_tolerance: f64,
    pub param_tolerance: f64,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    /// 0 skips the bootstrap; otherwise at least 100.
    pub bootstrap_resamples: usize,
    pub rng_seed: u64,
    pub free_params: BTreeSet<ParamName>,
    pub fixed_params: BTreeMap<ParamName, f64>,
    pub multi_starts: usize,
    /// Allow records with unknown tokens, each scale group getting its own offset.
    pub group_offsets: bool,
    pub dcrit_form: DcritForm,
}

pub const MIN_BOOTSTRAP_RESAMPLES: usize = 100;

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            residual_tolerance: 1e-10,
            param_tolerance: 1e-8,
            initial_damping: 1e-3,
            damping_up: 10.0,
            damping_down: 0.1,
            bootstrap_resamples: 1000,
            rng_seed: DEFAULT_SEED,
            free_params: [
                ParamName::A,
                ParamName::Alpha,
                ParamName::B,
                ParamName::Gamma,
                ParamName::Mu,
                ParamName::Kappa,
            ]
            .into_iter()
            .collect(),
            fixed_params: [
                (ParamName::Delta, KAPLAN_DELTA),
                (ParamName::TauC, 2.06),
                (ParamName::TauA, 0.44),
            ]
            .into_iter()
            .collect(),
            multi_starts: 5,
            group_offsets: false,
            dcrit_form: DcritForm::LogLaw,
        }
    }
}

impl FitConfig {
    /// Move `name` into the free set.
    pub fn free(mut self, name: ParamName) -> Self {
        self.fixed_params.remove(&name);
        self.free_params.insert(name);
        self
    }

    /// Pin `name` at `value`.
    pub fn fix(mut self, name: ParamName, value: f64) -> Self {
        self.free_params.remove(&name);
        self.fixed_params.insert(name, value);
        self
    }

    /// Switch the critical-depth form. Under the power law the free scale
    /// moves from κ to `c` when κ was free.
    pub fn with_form(mut self, form: DcritForm) -> Self {
        if form == DcritForm::PowerLaw && self.free_params.contains(&ParamName::Kappa) {
            let kappa = ScalingLawParams::table1().kappa;
            self = self.fix(ParamName::Kappa, kappa).free(ParamName::TauC);
        }
        self.dcrit_form = form;
        self
    }

    pub fn lm_settings(&self) -> LmSettings {
        LmSettings {
            max_iterations: self.max_iterations,
            residual_tolerance: self.residual_tolerance,
            param_tolerance: self.param_tolerance,
            initial_damping: self.initial_damping,
            damping_up: self.damping_up,
            damping_down: self.damping_down,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1".into());
        }
        for (name, v) in [
            ("residual_tolerance", self.residual_tolerance),
            ("param_tolerance", self.param_tolerance),
            ("initial_damping", self.initial_damping),
        ] {
            if !(v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.damping_up > 1.0) {
            return bad(format!("damping_up must exceed 1, got {}", self.damping_up));
        }
        if !(self.damping_down > 0.0 && self.damping_down < 1.0) {
            return bad(format!(
                "damping_down must lie in (0, 1), got {}",
                self.damping_down
            ));
        }
        if self.bootstrap_resamples != 0 && self.bootstrap_resamples < MIN_BOOTSTRAP_RESAMPLES {
            return bad(format!(
                "bootstrap_resamples must be 0 or at least {MIN_BOOTSTRAP_RESAMPLES}, got {}",
                self.bootstrap_resamples
            ));
        }
        if self.multi_starts == 0 {
            return bad("multi_starts must be at least 1".into());
        }
        if let Some(p) = self.free_params.iter().find(|p| self.fixed_params.contains_key(p)) {
            return bad(format!("parameter `{p}` is both free and fixed"));
        }
        if let Some(p) = ParamName::ALL
            .iter()
            .find(|p| !self.free_params.contains(p) && !self.fixed_params.contains_key(p))
        {
            return bad(format!("parameter `{p}` is neither free nor fixed"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ScalingLawParams,
    /// Offsets standing in for the data term of token-less scale groups.
    pub group_offsets: BTreeMap<ScaleGroup, f64>,
    pub r_squared: f64,
    pub rmse: f64,
    /// Sum of squared residuals.
    pub objective: f64,
    /// Observed minus predicted, in input order.
    pub residuals: Vec<f64>,
    pub free_params: BTreeSet<ParamName>,
    /// Percentile 95% intervals for the free parameters; empty without bootstrap.
    pub ci95: BTreeMap<ParamName, (f64, f64)>,
    pub bootstrap_converged: Option<usize>,
    pub converged: bool,
    pub iterations_used: usize,
    pub termination: Termination,
    pub n_records: usize,
    pub notes: Vec<String>,
}

#[derive(Clone, Copy)]
struct Row {
    n: f64,
    tokens: Option<f64>,
    depth: f64,
    width: f64,
    ln_w: f64,
    loss: f64,
    group: ScaleGroup,
}

impl Row {
    fn from_record(r: &LossRecord) -> Self {
        let width = r.arch.width() as f64;
        Self {
            n: count_params(&r.arch) as f64,
            tokens: r.tokens,
            depth: r.arch.depth() as f64,
            width,
            ln_w: width.ln(),
            loss: r.loss,
            group: r.scale_group,
        }
    }

    fn d_crit(&self, p: &ScalingLawParams) -> f64 {
        match p.dcrit_form {
            DcritForm::LogLaw => p.kappa * self.ln_w,
            DcritForm::PowerLaw => p.tau_c * self.width.powf(p.tau_a),
        }
    }

    fn penalty(&self, p: &ScalingLawParams) -> f64 {
        let dc = self.d_crit(p);
        if !(dc > 0.0) {
            return f64::NAN;
        }
        crate::scaling_law::penalty_at(self.depth, self.width, dc, p)
    }

    fn predict(&self, p: &ScalingLawParams, offsets: &[(ScaleGroup, f64)]) -> f64 {
        let data = match self.tokens {
            Some(t) => p.b / t.powf(p.delta),
            None => offsets
                .iter()
                .find(|(g, _)| *g == self.group)
                .map(|(_, v)| *v)
                .unwrap_or(f64::NAN),
        };
        p.a / self.n.powf(p.alpha) + data + self.penalty(p)
    }
}

struct Problem {
    rows: Vec<Row>,
    base: ScalingLawParams,
    free: Vec<ParamName>,
    offset_groups: Vec<ScaleGroup>,
}

impl Problem {
    fn unpack(&self, x: &[f64]) -> (ScalingLawParams, Vec<(ScaleGroup, f64)>) {
        let mut p = self.base;
        for (name, v) in self.free.iter().zip(x) {
            name.set(&mut p, name.to_external(*v));
        }
        let offsets = self
            .offset_groups
            .iter()
            .zip(&x[self.free.len()..])
            .map(|(g, v)| (*g, *v))
            .collect();
        (p, offsets)
    }

    fn residuals(&self, x: &[f64]) -> Option<Vec<f64>> {
        let (p, offsets) = self.unpack(x);
        let r: Vec<f64> = self.rows.iter().map(|row| row.predict(&p, &offsets) - row.loss).collect();
        r.iter().all(|v| v.is_finite()).then_some(r)
    }

    fn with_rows(&self, rows: Vec<Row>) -> Self {
        Self {
            rows,
            base: self.base,
            free: self.free.clone(),
            offset_groups: self.offset_groups.clone(),
        }
    }

    fn solve(&self, x0: &[f64], settings: &LmSettings) -> LmOutcome {
        lm::minimize(|x| self.residuals(x), x0, settings)
    }
}

fn sort_key(r: &LossRecord) -> (u64, u64, u64, u64, ScaleGroup) {
    (
        r.arch.depth(),
        r.arch.width(),
        r.tokens.map_or(0, f64::to_bits),
        r.loss.to_bits(),
        r.scale_group,
    )
}

/// Initial values: fixed entries as given, otherwise α=0.2, δ=0.1, γ=0.1,
/// μ=0.3, κ=2.5, c=2.06, a=0.44, with A and B solved from the smallest and
/// largest records that have token counts.
fn initial_params(rows: &[Row], config: &FitConfig) -> ScalingLawParams {
    let mut p = ScalingLawParams {
        a: 1.0,
        alpha: 0.2,
        b: 1.0,
        delta: 0.1,
        gamma: 0.1,
        mu: 0.3,
        kappa: 2.5,
        tau_c: 2.06,
        tau_a: 0.44,
        dcrit_form: config.dcrit_form,
    };
    for (name, v) in &config.fixed_params {
        name.set(&mut p, *v);
    }
    let with_tokens: Vec<&Row> = rows.iter().filter(|r| r.tokens.is_some()).collect();
    let small = with_tokens.iter().min_by(|x, y| x.n.total_cmp(&y.n));
    let large = with_tokens.iter().max_by(|x, y| x.n.total_cmp(&y.n));
    let (Some(s), Some(l)) = (small, large) else {
        return p;
    };
    let ns = s.n.powf(-p.alpha);
    let nl = l.n.powf(-p.alpha);
    let ts = s.tokens.unwrap().powf(-p.delta);
    let tl = l.tokens.unwrap().powf(-p.delta);
    let a_free = config.free_params.contains(&ParamName::A);
    let b_free = config.free_params.contains(&ParamName::B);
    match (a_free, b_free) {
        (true, true) => {
            let det = ns * tl - nl * ts;
            if det.abs() > 1e-300 {
                p.a = (s.loss * tl - l.loss * ts) / det;
                p.b = (ns * l.loss - nl * s.loss) / det;
            }
        }
        (true, false) => p.a = 0.5 * ((s.loss - p.b * ts) / ns + (l.loss - p.b * tl) / nl),
        (false, true) => p.b = 0.5 * ((s.loss - p.a * ns) / ts + (l.loss - p.a * nl) / tl),
        (false, false) => {}
    }
    // keep the log-scale start finite when the two-point solve goes negative
    if !(p.a > 0.0) || !p.a.is_finite() {
        p.a = 1.0;
    }
    if !(p.b > 0.0) || !p.b.is_finite() {
        p.b = 1e-3;
    }
    p
}

fn build_problem(records: &[LossRecord], config: &FitConfig) -> Result<(Problem, Vec<usize>)> {
    config.validate()?;
    for r in records {
        r.validate()?;
        if r.tokens.is_none() && !config.group_offsets {
            return Err(Error::UnknownTokens(format!(
                "{} ({}); enable group offsets to include it",
                r.arch, r.scale_group
            )));
        }
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by_key(|&i| sort_key(&records[i]));
    let rows: Vec<Row> = order.iter().map(|&i| Row::from_record(&records[i])).collect();

    let offset_groups: Vec<ScaleGroup> = rows
        .iter()
        .filter(|r| r.tokens.is_none())
        .map(|r| r.group)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let free: Vec<ParamName> = config.free_params.iter().copied().collect();
    let dim = free.len() + offset_groups.len();
    if records.len() < dim + 1 {
        return Err(Error::Precondition(format!(
            "{} records cannot identify {} free parameters (need at least {})",
            records.len(),
            dim,
            dim + 1
        )));
    }
    let mut base = initial_params(&rows, config);
    for (name, v) in &config.fixed_params {
        name.set(&mut base, *v);
    }
    base.dcrit_form = config.dcrit_form;
    Ok((
        Problem {
            rows,
            base,
            free,
            offset_groups,
        },
        order,
    ))
}

fn initial_vector(problem: &Problem) -> Vec<f64> {
    let p = problem.base;
    let mut x: Vec<f64> = problem.free.iter().map(|n| n.to_internal(n.get(&p))).collect();
    for g in &problem.offset_groups {
        let resid: Vec<f64> = problem
            .rows
            .iter()
            .filter(|r| r.group == *g && r.tokens.is_none())
            .map(|r| r.loss - p.a / r.n.powf(p.alpha) - r.penalty(&p))
            .collect();
        x.push(resid.iter().sum::<f64>() / resid.len() as f64);
    }
    x
}

/// Profile scan of the critical-depth scale: geometric grid from base/span to base·span.
const PROFILE_SPAN: f64 = 8.0;
const PROFILE_POINTS: usize = 25;

/// The penalty switches rows on and off as the critical-depth scale moves,
/// leaving flat regions LM cannot cross. Fit with that scale pinned on a grid
/// and return the full start vector at the best grid point.
fn profile_start(problem: &Problem, x0: &[f64], scale: ParamName, settings: &LmSettings) -> Option<Vec<f64>> {
    let j = problem.free.iter().position(|n| *n == scale)?;
    let sub_free: Vec<ParamName> = problem.free.iter().copied().filter(|n| *n != scale).collect();
    let sub_x0: Vec<f64> = x0.iter().enumerate().filter(|(i, _)| *i != j).map(|(_, v)| *v).collect();
    let centre = scale.get(&problem.base);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for i in 0..PROFILE_POINTS {
        let t = 2.0 * i as f64 / (PROFILE_POINTS - 1) as f64 - 1.0;
        let value = centre * PROFILE_SPAN.powf(t);
        let mut base = problem.base;
        scale.set(&mut base, value);
        let sub = Problem {
            rows: problem.rows.clone(),
            base,
            free: sub_free.clone(),
            offset_groups: problem.offset_groups.clone(),
        };
        let out = sub.solve(&sub_x0, settings);
        if !out.objective.is_finite() || best.as_ref().is_some_and(|(b, _)| *b <= out.objective) {
            continue;
        }
        let mut full = out.x.clone();
        full.insert(j, scale.to_internal(value));
        best = Some((out.objective, full));
    }
    best.map(|(_, x)| x)
}

fn multi_start(problem: &Problem, config: &FitConfig) -> Result<LmOutcome> {
    let settings = config.lm_settings();
    let x0 = initial_vector(problem);
    let scale_param = match config.dcrit_form {
        DcritForm::LogLaw => ParamName::Kappa,
        DcritForm::PowerLaw => ParamName::TauC,
    };
    let profile = profile_start(problem, &x0, scale_param, &settings);
    let mut best: Option<LmOutcome> = None;
    for k in 0..config.multi_starts {
        let start = if k == 0 {
            profile.clone().unwrap_or_else(|| x0.clone())
        } else {
            let mut rng = stream_rng(config.rng_seed, (1 << 48) + k as u64);
            let mut x = x0.clone();
            for (j, v) in x.iter_mut().enumerate() {
                let sd = problem.free.get(j).map_or(0.1, |n| n.jitter());
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += sd * z;
            }
            x
        };
        let out = problem.solve(&start, &settings);
        if out.termination == Termination::Singular && !out.objective.is_finite() {
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => (out.converged && !b.converged)
                || (out.converged == b.converged && out.objective < b.objective),
        };
        if better {
            best = Some(out);
        }
    }
    best.ok_or_else(|| {
        Error::NonConvergence(format!(
            "all {} starts hit singular or non-finite normal equations",
            config.multi_starts
        ))
    })
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

type Intervals = BTreeMap<ParamName, (f64, f64)>;

fn run_bootstrap(
    problem: &Problem,
    estimate: &[f64],
    config: &FitConfig,
) -> Result<(Intervals, usize)> {
    let resamples = config.bootstrap_resamples;
    if resamples < MIN_BOOTSTRAP_RESAMPLES {
        return Err(Error::Precondition(format!(
            "bootstrap needs at least {MIN_BOOTSTRAP_RESAMPLES} resamples, got {resamples}"
        )));
    }
    let settings = config.lm_settings();
    let n = problem.rows.len();
    let draws: Vec<Option<ScalingLawParams>> = (0..resamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(config.rng_seed, i as u64);
            let rows: Vec<Row> = (0..n)
                .map(|_| problem.rows[rng.random_range(0..n)])
                .collect();
            let sub = problem.with_rows(rows);
            let out = sub.solve(estimate, &settings);
            out.converged.then(|| sub.unpack(&out.x).0)
        })
        .collect();
    let converged = draws.iter().filter(|d| d.is_some()).count();
    let failed = resamples - converged;
    if failed * 2 > resamples {
        return Err(Error::NonConvergence(format!(
            "{failed} of {resamples} bootstrap refits did not converge"
        )));
    }
    let (point, _) = problem.unpack(estimate);
    let mut ci = BTreeMap::new();
    for name in &problem.free {
        let mut vals: Vec<f64> = draws.iter().flatten().map(|p| name.get(p)).collect();
        vals.sort_by(f64::total_cmp);
        let est = name.get(&point);
        let lo = percentile(&vals, 0.025).min(est);
        let hi = percentile(&vals, 0.975).max(est);
        ci.insert(*name, (lo, hi));
    }
    Ok((ci, converged))
}

fn fit_problem(
    records: &[LossRecord],
    config: &FitConfig,
    with_bootstrap: bool,
) -> Result<(FitResult, Problem, Vec<f64>)> {
    let (problem, order) = build_problem(records, config)?;
    let out = multi_start(&problem, config)?;
    let (params, offsets) = problem.unpack(&out.x);

    let mut residuals = vec![0.0; records.len()];
    for (k, &i) in order.iter().enumerate() {
        residuals[i] = -out.residuals[k];
    }
    let observed: Vec<f64> = records.iter().map(|r| r.loss).collect();
    let predicted: Vec<f64> = observed.iter().zip(&residuals).map(|(o, e)| o - e).collect();
    let r2 = r_squared(&observed, &predicted);
    let rmse = (out.objective / records.len() as f64).sqrt();

    let mut notes = Vec::new();
    if config.free_params.contains(&ParamName::Alpha) {
        notes.push(format!(
            "capacity exponent α = {:.4}; published fit 0.22 [-0.21, 0.65], Kaplan α ≈ {KAPLAN_ALPHA}",
            params.alpha
        ));
    }
    let max_penalty = problem
        .rows
        .iter()
        .map(|r| r.penalty(&params))
        .fold(0.0_f64, f64::max);
    let above = problem.rows.iter().filter(|r| r.depth > r.d_crit(&params)).count();
    if max_penalty < 1e-6 {
        notes.push(format!(
            "depth penalty contributes < 1e-6 nats on every record ({above} above critical depth); γ, μ and κ are not identified by these data"
        ));
    }
    if !out.converged {
        notes.push(format!("optimizer stopped without converging: {:?}", out.termination));
    }

    let mut result = FitResult {
        params,
        group_offsets: offsets.into_iter().collect(),
        r_squared: r2,
        rmse,
        objective: out.objective,
        residuals,
        free_params: config.free_params.clone(),
        ci95: BTreeMap::new(),
        bootstrap_converged: None,
        converged: out.converged,
        iterations_used: out.iterations,
        termination: out.termination,
        n_records: records.len(),
        notes,
    };
    if with_bootstrap && config.bootstrap_resamples > 0 {
        let (ci, ok) = run_bootstrap(&problem, &out.x, config)?;
        result.ci95 = ci;
        result.bootstrap_converged = Some(ok);
    }
    Ok((result, problem, out.x))
}

/// Fit the loss model, including bootstrap intervals when
/// `config.bootstrap_resamples > 0`.
pub fn fit_scaling_law(records: &[LossRecord], config: &FitConfig) -> Result<FitResult> {
    fit_problem(records, config, true).map(|(r, _, _)| r)
}

/// Percentile 95% intervals from row-resampled refits, each started at the
/// full-data optimum. Resample `i` draws from ChaCha stream `i` of the seed.
pub fn bootstrap_ci(
    records: &[LossRecord],
    config: &FitConfig,
) -> Result<BTreeMap<ParamName, (f64, f64)>> {
    if config.bootstrap_resamples < MIN_BOOTSTRAP_RESAMPLES {
        return Err(Error::Precondition(format!(
            "bootstrap needs at least {MIN_BOOTSTRAP_RESAMPLES} resamples, got {}",
            config.bootstrap_resamples
        )));
    }
    let (_, problem, x) = fit_problem(records, config, false)?;
    run_bootstrap(&problem, &x, config).map(|(ci, _)| ci)
}

/// Initial parameter vector the fitter would start from, exposed for reports.
pub fn initial_guess(records: &[LossRecord], config: &FitConfig) -> Result<ScalingLawParams> {
    let (problem, _) = build_problem(records, config)?;
    Ok(problem.base)
}

/// Refit with every free parameter started at `start`; used to check that a
/// returned optimum is a fixed point of the solver.
pub fn refit_from(
    records: &[LossRecord],
    config: &FitConfig,
    start: &FitResult,
) -> Result<FitResult> {
    let (problem, order) = build_problem(records, config)?;
    let mut x: Vec<f64> = problem
        .free
        .iter()
        .map(|n| n.to_internal(n.get(&start.params)))
        .collect();
    for g in &problem.offset_groups {
        x.push(start.group_offsets.get(g).copied().unwrap_or(0.0));
    }
    let out = problem.solve(&x, &config.lm_settings());
    if !out.objective.is_finite() {
        return Err(Error::NonConvergence("refit produced non-finite residuals".into()));
    }
    let (params, offsets) = problem.unpack(&out.x);
    let mut residuals = vec![0.0; records.len()];
    for (k, &i) in order.iter().enumerate() {
        residuals[i] = -out.residuals[k];
    }
    let observed: Vec<f64> = records.iter().map(|r| r.loss).collect();
    let predicted: Vec<f64> = observed.iter().zip(&residuals).map(|(o, e)| o - e).collect();
    Ok(FitResult {
        params,
        group_offsets: offsets.into_iter().collect(),
        r_squared: r_squared(&observed, &predicted),
        rmse: (out.objective / records.len() as f64).sqrt(),
        objective: out.objective,
        residuals,
        free_params: config.free_params.clone(),
        ci95: BTreeMap::new(),
        bootstrap_converged: None,
        converged: out.converged,
        iterations_used: out.iterations,
        termination: out.termination,
        n_records: records.len(),
        notes: Vec::new(),
    })
}

/// Objective trajectory of the first start, for checking monotone descent.
pub fn descent_history(records: &[LossRecord], config: &FitConfig) -> Result<Vec<f64>> {
    let (problem, _) = build_problem(records, config)?;
    let x0 = initial_vector(&problem);
    Ok(problem.solve(&x0, &config.lm_settings()).history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;

    fn rec(d: u64, w: u64, t: Option<f64>, loss: f64, g: ScaleGroup) -> LossRecord {
        LossRecord::new(Architecture::new(d, w).unwrap(), t, loss, None, g).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(FitConfig::default().validate().is_ok());
        let c = FitConfig { damping_up: 1.0, ..FitConfig::default() };
        assert!(c.validate().is_err());
        let c = FitConfig::default().fix(ParamName::A, 1.0);
        assert!(c.validate().is_ok());
        let mut c = FitConfig::default();
        c.fixed_params.remove(&ParamName::Delta);
        assert!(c.validate().is_err());
        let mut c = FitConfig::default();
        c.fixed_params.insert(ParamName::A, 1.0);
        assert!(c.validate().is_err());
        let c = FitConfig { bootstrap_resamples: 50, ..FitConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn param_name_round_trip() {
        for p in ParamName::ALL {
            assert_eq!(p.as_str().parse::<ParamName>().unwrap(), p);
            let v = match p {
                ParamName::TauA => 0.3,
                _ => 1.7,
            };
            assert!((p.to_external(p.to_internal(v)) - v).abs() < 1e-14);
        }
    }

    #[test]
    fn too_few_records() {
        let recs: Vec<LossRecord> = (1..=4)
            .map(|d| rec(d * 2, 512, Some(6.4e9), 3.0 + d as f64 * 0.1, ScaleGroup::Baseline))
            .collect();
        let c = FitConfig {
            bootstrap_resamples: 0,
            ..FitConfig::default()
        };
        assert!(matches!(fit_scaling_law(&recs, &c), Err(Error::Precondition(_))));
    }

    #[test]
    fn unknown_tokens_need_offsets() {
        let recs: Vec<LossRecord> = (1..=10)
            .map(|d| rec(d * 4, 1024, None, 3.0, ScaleGroup::OneB))
            .collect();
        let c = FitConfig {
            bootstrap_resamples: 0,
            ..FitConfig::default()
        };
        assert!(matches!(fit_scaling_law(&recs, &c), Err(Error::UnknownTokens(_))));
    }

    #[test]
    fn constant_losses_give_zero_r_squared() {
        let recs: Vec<LossRecord> = [(2, 256), (4, 256), (8, 512), (12, 512), (2, 1024), (8, 1024), (4, 1536), (12, 1536)]
            .iter()
            .map(|&(d, w)| rec(d, w, Some(6.4e9), 3.5, ScaleGroup::Baseline))
            .collect();
        let c = FitConfig {
            bootstrap_resamples: 0,
            ..FitConfig::default()
        };
        let fit = fit_scaling_law(&recs, &c).unwrap();
        assert_eq!(fit.r_squared, 0.0);
        assert!(fit.rmse < 1e-3, "{}", fit.rmse);
    }

    #[test]
    fn percentile_interpolates() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.5), 2.0);
        assert_eq!(percentile(&v, 0.0), 0.0);
        assert!((percentile(&v, 0.025) - 0.1).abs() < 1e-12);
    }
}
