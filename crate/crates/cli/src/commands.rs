use std::fmt::Write as _;
use std::io::Write as _;

use archscale_core::audit::{audit_report, builtin_shapes, load_roster_csv, AuditReport};
use archscale_core::dataset::{verify_against_paper, Dataset, VerifyReport};
use archscale_core::fit::{fit_scaling_law, fit_tau_models, FitConfig, FitResult, ParamName, TauModels};
use archscale_core::gradsim::{
    sweep_profiles, simulate, Aggregation, DepthRule, GradientProfile, JacobianSampler, SimConfig, SimMode,
};
use archscale_core::model::{compute_flops, count_params, tokens_for_compute, Architecture, ParamBreakdown, ScaleGroup};
use archscale_core::planner::{
    closed_form_exponents, fit_scaling_exponents, optimize_shape, ClosedForm, ExponentFit, PlanQuery, PlanResult,
    SEVENB_OPTIMAL_FLOPS,
};
use archscale_core::scaling_law::{
    capacity_term, d_crit, data_term, penalty, predict_loss, tau, DcritForm, ScalingLawParams, KAPLAN_ALPHA,
    KAPLAN_DELTA,
};
use archscale_core::Error;
use serde_json::json;

use crate::svg::{Mark, Plot, Series};
use crate::{
    AggregationArg, AuditArgs, Cli, Command, DataArgs, DcritArgs, FitArgs, Failure, Format, ModeArg, PlanArgs,
    PredictArgs, ReportArgs, SamplerArg, SimulateArgs,
};

/// Result body plus a failure to report after the body has been written.
type Output = (String, Option<Failure>);

pub fn run(cli: &Cli) -> Result<(), Failure> {
    let (body, after) = match &cli.command {
        Command::Fit(a) => fit(cli, a)?,
        Command::Predict(a) => (predict(cli, a)?, None),
        Command::Dcrit(a) => (dcrit(cli, a)?, None),
        Command::Audit(a) => (audit(cli, a)?, None),
        Command::Plan(a) => (plan(cli, a)?, None),
        Command::Simulate(a) => (simulate_cmd(cli, a)?, None),
        Command::Verify(a) => verify(cli, a)?,
        Command::Report(a) => (report(cli, a)?, None),
    };
    match &cli.output {
        Some(path) => std::fs::write(path, &body)
            .map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(body.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Failure::Invalid(format!("stdout: {e}")))?;
        }
    }
    after.map_or(Ok(()), Err)
}

fn unsupported(cmd: &str, format: Format) -> Failure {
    Failure::Invalid(format!("`{cmd}` does not support --format {}", format_name(format)))
}

fn format_name(f: Format) -> &'static str {
    match f {
        Format::Text => "text",
        Format::Json => "json",
        Format::Csv => "csv",
        Format::Svg => "svg",
    }
}

fn params(cli: &Cli) -> ScalingLawParams {
    let p = ScalingLawParams::table1().with_form(cli.dcrit_form);
    match cli.kappa {
        Some(k) => p.with_kappa(k),
        None => p,
    }
}

fn checked_params(cli: &Cli) -> Result<ScalingLawParams, Failure> {
    let p = params(cli);
    p.validate()?;
    Ok(p)
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String, Failure> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Failure::Invalid(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn render(plot: &Plot) -> Result<String, Failure> {
    plot.render().map_err(Failure::Invalid)
}

pub fn load_data(args: &DataArgs) -> Result<Dataset, Failure> {
    if args.data == "bundled" {
        match std::env::var_os("ARCHSCALE_DATA") {
            Some(p) if !p.is_empty() => Ok(Dataset::load_csv(std::path::Path::new(&p))?),
            _ => Ok(Dataset::bundled()),
        }
    } else {
        Ok(Dataset::load_csv(std::path::Path::new(&args.data))?)
    }
}

// ---------------------------------------------------------------- fit

fn fit_config(cli: &Cli, args: &FitArgs, offsets: bool) -> Result<FitConfig, Failure> {
    let mut cfg = FitConfig {
        bootstrap_resamples: args.resamples,
        rng_seed: cli.seed,
        multi_starts: args.starts,
        group_offsets: offsets,
        ..FitConfig::default()
    }
    .with_form(cli.dcrit_form);
    if let Some(k) = cli.kappa {
        cfg = cfg.fix(ParamName::Kappa, k);
    }
    for name in &args.free {
        cfg = cfg.free(name.parse()?);
    }
    for spec in &args.fix {
        let (name, value) = spec
            .split_once('=')
            .ok_or_else(|| Failure::Invalid(format!("--fix expects name=value, got `{spec}`")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| Failure::Invalid(format!("--fix {name}: `{value}` is not a number")))?;
        cfg = cfg.fix(name.parse()?, value);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn select_group(ds: &Dataset, group: &str) -> Result<Vec<archscale_core::LossRecord>, Failure> {
    let records = if group.eq_ignore_ascii_case("all") {
        ds.records.clone()
    } else {
        ds.group(group.parse::<ScaleGroup>()?)
    };
    if records.is_empty() {
        return Err(Failure::Invalid(format!("no records in group `{group}`")));
    }
    Ok(records)
}

fn fit_text(r: &FitResult) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "records     {}", r.n_records);
    let _ = writeln!(s, "R²          {:.4}", r.r_squared);
    let _ = writeln!(s, "rmse        {:.5}", r.rmse);
    let _ = writeln!(
        s,
        "converged   {} ({:?}, {} iterations)",
        if r.converged { "yes" } else { "no" },
        r.termination,
        r.iterations_used
    );
    if let Some(ok) = r.bootstrap_converged {
        let _ = writeln!(s, "bootstrap   {ok} refits converged");
    }
    let _ = writeln!(s, "\n{:<8} {:>12}  95% CI", "param", "estimate");
    for name in ParamName::ALL {
        let v = name.get(&r.params);
        match r.ci95.get(&name) {
            Some((lo, hi)) => {
                let _ = writeln!(s, "{:<8} {:>12.5}  [{lo:.4}, {hi:.4}]", name.as_str(), v);
            }
            None if r.free_params.contains(&name) => {
                let _ = writeln!(s, "{:<8} {:>12.5}", name.as_str(), v);
            }
            None => {
                let _ = writeln!(s, "{:<8} {:>12.5}  fixed", name.as_str(), v);
            }
        }
    }
    for (g, v) in &r.group_offsets {
        let _ = writeln!(s, "{:<8} {:>12.5}  offset for {g}", "offset", v);
    }
    for n in &r.notes {
        let _ = writeln!(s, "note: {n}");
    }
    s
}

fn fit(cli: &Cli, args: &FitArgs) -> Result<Output, Failure> {
    let ds = load_data(&args.data)?;
    let records = select_group(&ds, &args.group)?;
    let offsets = records.iter().any(|r| r.tokens.is_none());
    let cfg = fit_config(cli, args, offsets)?;
    let r = fit_scaling_law(&records, &cfg)?;
    let body = match cli.format {
        Format::Text => fit_text(&r),
        Format::Json => to_json(&r)?,
        Format::Csv => {
            let mut s = String::from("parameter,estimate,ci_low,ci_high\n");
            for name in ParamName::ALL {
                let (lo, hi) = r
                    .ci95
                    .get(&name)
                    .map(|(a, b)| (a.to_string(), b.to_string()))
                    .unwrap_or_default();
                let _ = writeln!(s, "{},{},{lo},{hi}", name.as_str(), name.get(&r.params));
            }
            for (g, v) in &r.group_offsets {
                let _ = writeln!(s, "offset_{g},{v},,");
            }
            s
        }
        Format::Svg => {
            let pts: Vec<(f64, f64)> = records
                .iter()
                .zip(&r.residuals)
                .map(|(rec, e)| (rec.loss, rec.loss - e))
                .collect();
            let lo = pts.iter().map(|p| p.0.min(p.1)).fold(f64::INFINITY, f64::min);
            let hi = pts.iter().map(|p| p.0.max(p.1)).fold(f64::NEG_INFINITY, f64::max);
            render(&Plot {
                title: format!("fit, R² = {:.3}", r.r_squared),
                x_label: "observed loss (nats)".into(),
                y_label: "predicted loss (nats)".into(),
                series: vec![
                    Series::new("records", pts, Mark::Points),
                    Series::new("y = x", vec![(lo, lo), (hi, hi)], Mark::Line),
                ],
                ..Plot::default()
            })?
        }
    };
    let after = (!r.converged)
        .then(|| Failure::NonConvergence(format!("fit stopped without converging ({:?})", r.termination)));
    Ok((body, after))
}

// ---------------------------------------------------------------- predict

fn predict(cli: &Cli, args: &PredictArgs) -> Result<String, Failure> {
    let p = checked_params(cli)?;
    let arch = Architecture::new(args.depth, args.width)?;
    let tokens = match (args.tokens, args.compute) {
        (Some(t), _) => t,
        (None, Some(c)) => tokens_for_compute(&arch, c)?,
        (None, None) => return Err(Failure::Invalid("give --tokens or --compute".into())),
    };
    let loss = predict_loss(&arch, Some(tokens), &p)?;
    let n = count_params(&arch);
    let dc = d_crit(arch.width(), &p)?;
    let phi = penalty(&arch, &p)?;
    let cap = capacity_term(&arch, &p);
    let data = data_term(tokens, &p);
    let flops = compute_flops(&arch, tokens)?;
    Ok(match cli.format {
        Format::Text if args.explain => {
            let mut s = String::new();
            let _ = writeln!(s, "architecture    {arch}");
            for (label, formula, value) in ParamBreakdown::of(&arch).lines() {
                let _ = writeln!(s, "  {label:<18} {formula:<8} {value}");
            }
            let _ = writeln!(s, "  {:<18} {:<8} {n}", "total N", "");
            let _ = writeln!(s, "tokens T        {tokens:e}");
            let _ = writeln!(s, "compute 6NT     {flops:e}");
            let _ = writeln!(s, "A/N^α           {cap:.5}");
            let _ = writeln!(s, "B/T^δ           {data:.5}");
            let _ = writeln!(s, "D_crit(W)       {dc:.2}");
            let _ = writeln!(s, "penalty Φ       {phi:.5}");
            let _ = writeln!(s, "loss            {loss:.4}");
            s
        }
        Format::Text => format!("{loss:.4}\n"),
        Format::Json => to_json(&json!({
            "depth": arch.depth(),
            "width": arch.width(),
            "params": n as f64,
            "tokens": tokens,
            "compute": flops,
            "capacity_term": cap,
            "data_term": data,
            "d_crit": dc,
            "penalty": phi,
            "loss": loss,
        }))?,
        Format::Csv => format!(
            "depth,width,params,tokens,d_crit,penalty,loss\n{},{},{n},{tokens},{dc},{phi},{loss}\n",
            arch.depth(),
            arch.width()
        ),
        Format::Svg => return Err(unsupported("predict", cli.format)),
    })
}

// ---------------------------------------------------------------- dcrit

fn dcrit(cli: &Cli, args: &DcritArgs) -> Result<String, Failure> {
    let p = checked_params(cli)?;
    let rows = args
        .width
        .iter()
        .map(|&w| Ok((w, d_crit(w, &p)?)))
        .collect::<Result<Vec<_>, Error>>()?;
    Ok(match cli.format {
        Format::Text if rows.len() == 1 => format!("{:.1}\n", rows[0].1),
        Format::Text => rows.iter().map(|(w, d)| format!("{w}\t{d:.1}\n")).collect(),
        Format::Json => to_json(
            &rows
                .iter()
                .map(|(w, d)| json!({"width": w, "d_crit": d}))
                .collect::<Vec<_>>(),
        )?,
        Format::Csv => {
            let mut s = String::from("width,d_crit\n");
            for (w, d) in &rows {
                let _ = writeln!(s, "{w},{d}");
            }
            s
        }
        Format::Svg => render(&Plot {
            title: "critical depth".into(),
            x_label: "width".into(),
            y_label: "D_crit (layers)".into(),
            series: vec![Series::new(
                form_label(p.dcrit_form),
                rows.iter().map(|(w, d)| (*w as f64, *d)).collect(),
                Mark::Line,
            )],
            ..Plot::default()
        })?,
    })
}

fn form_label(form: DcritForm) -> &'static str {
    match form {
        DcritForm::LogLaw => "κ·ln W",
        DcritForm::PowerLaw => "c·W^a",
    }
}

// ---------------------------------------------------------------- audit

fn audit_csv(r: &AuditReport) -> String {
    let mut s = String::from("name,depth,width,d_crit,ratio,verdict\n");
    for e in &r.entries {
        let _ = writeln!(s, "{},{},{},{},{},{}", e.name, e.depth, e.width, e.d_crit, e.ratio, e.verdict);
    }
    s
}

fn audit(cli: &Cli, args: &AuditArgs) -> Result<String, Failure> {
    let p = checked_params(cli)?;
    let roster = match &args.roster {
        Some(path) => load_roster_csv(path)?,
        None => builtin_shapes(),
    };
    let r = audit_report(&roster, &p)?;
    Ok(match cli.format {
        Format::Text => r.to_text(),
        Format::Json => {
            let mut s = r.to_json()?;
            s.push('\n');
            s
        }
        Format::Csv => audit_csv(&r),
        Format::Svg => {
            let wmin = r.entries.iter().map(|e| e.width).min().unwrap_or(2).max(2);
            let wmax = r.entries.iter().map(|e| e.width).max().unwrap_or(2).max(wmin + 1);
            let curve = (0..=40)
                .map(|i| {
                    let w = (wmin as f64 * (wmax as f64 / wmin as f64).powf(i as f64 / 40.0)).round() as u64;
                    Ok((w as f64, d_crit(w.max(2), &p)?))
                })
                .collect::<Result<Vec<_>, Error>>()?;
            render(&Plot {
                title: "depth vs critical depth".into(),
                x_label: "width".into(),
                y_label: "layers".into(),
                log_x: true,
                series: vec![
                    Series::new("models", r.entries.iter().map(|e| (e.width as f64, e.depth as f64)).collect(), Mark::Points),
                    Series::new("D_crit", curve, Mark::Line),
                ],
                ..Plot::default()
            })?
        }
    })
}

// ---------------------------------------------------------------- plan

fn plan_query(cli: &Cli, args: &PlanArgs, budget: f64) -> Result<PlanQuery, Failure> {
    Ok(PlanQuery {
        compute_budget: budget,
        params: checked_params(cli)?,
        depth_range: (args.min_depth, args.max_depth),
        width_range: (args.min_width, args.max_width),
        width_step: args.width_step,
    })
}

fn plan_text(r: &PlanResult) -> String {
    let b = r.best;
    let n = Architecture::new(b.depth, b.width).map(|a| count_params(&a)).unwrap_or(0);
    let mut s = String::new();
    let _ = writeln!(s, "budget          {:e} FLOPs", r.compute_budget);
    let _ = writeln!(s, "best shape      {}L×{}W", b.depth, b.width);
    let _ = writeln!(s, "params          {n}");
    let _ = writeln!(s, "tokens          {:e}", b.tokens);
    let _ = writeln!(s, "predicted loss  {:.4}", b.predicted_loss);
    let _ = writeln!(s, "D/D_crit        {:.3}", r.d_over_dcrit);
    if r.degenerate {
        let _ = writeln!(
            s,
            "note: γ = 0, so loss depends on N only; this shape is the tie-break among equal-N optima"
        );
    }
    let mut top: Vec<_> = r.frontier.iter().collect();
    top.sort_by(|a, b| a.predicted_loss.total_cmp(&b.predicted_loss).then(a.depth.cmp(&b.depth)));
    let _ = writeln!(s, "\nbest depths     width   loss");
    for p in top.iter().take(5) {
        let _ = writeln!(s, "{:>11}  {:>6}   {:.6}", p.depth, p.width, p.predicted_loss);
    }
    s
}

fn sweep_text(f: &ExponentFit, cf: &ClosedForm) -> String {
    let mut s = String::from("budget        D*     W*\n");
    for (c, d, w) in &f.optima {
        let _ = writeln!(s, "{c:<10.2e} {d:>5} {w:>6}");
    }
    let (cd, cw, cr) = f.claimed;
    let _ = writeln!(s, "\n              fitted   claimed");
    let _ = writeln!(s, "d_exp         {:>7.4}  {cd}", f.d_exp);
    let _ = writeln!(s, "w_exp         {:>7.4}  {cw}", f.w_exp);
    let _ = writeln!(s, "w_exp/d_exp   {:>7.3}  {cr}", f.ratio);
    let _ = writeln!(s, "R² (D*, W*)   {:.3}, {:.3}", f.d_r_squared, f.w_r_squared);
    let _ = writeln!(
        s,
        "printed closed form at α={KAPLAN_ALPHA}, δ={KAPLAN_DELTA}: d_exp = {:.3}, w_exp = {:.3} ({} the claimed {cd}, {cw})",
        cf.d_exp,
        cf.w_exp,
        if cf.consistent_with_claim { "matches" } else { "does not match" }
    );
    s
}

fn plan(cli: &Cli, args: &PlanArgs) -> Result<String, Failure> {
    if !args.sweep.is_empty() {
        let template = plan_query(cli, args, 1.0)?;
        let f = fit_scaling_exponents(&args.sweep, &template)?;
        let cf = closed_form_exponents(KAPLAN_ALPHA, KAPLAN_DELTA)?;
        return Ok(match cli.format {
            Format::Text => sweep_text(&f, &cf),
            Format::Json => to_json(&json!({"fit": f, "closed_form": cf}))?,
            Format::Csv => {
                let mut s = String::from("budget,depth,width\n");
                for (c, d, w) in &f.optima {
                    let _ = writeln!(s, "{c:e},{d},{w}");
                }
                s
            }
            Format::Svg => render(&Plot {
                title: "compute-optimal shape".into(),
                x_label: "compute (FLOPs)".into(),
                y_label: "D*, W*".into(),
                log_x: true,
                log_y: true,
                series: vec![
                    Series::new("D*", f.optima.iter().map(|(c, d, _)| (*c, *d as f64)).collect(), Mark::Points),
                    Series::new("W*", f.optima.iter().map(|(c, _, w)| (*c, *w as f64)).collect(), Mark::Points),
                ],
                ..Plot::default()
            })?,
        });
    }
    let q = plan_query(cli, args, args.budget.unwrap_or(SEVENB_OPTIMAL_FLOPS))?;
    let r = optimize_shape(&q)?;
    Ok(match cli.format {
        Format::Text => plan_text(&r),
        Format::Json => {
            let mut s = r.to_json()?;
            s.push('\n');
            s
        }
        Format::Csv => r.frontier_csv(),
        Format::Svg => {
            let dc = d_crit(r.best.width, &q.params)?;
            render(&Plot {
                title: format!("best loss per depth at C = {:.2e}", q.compute_budget),
                x_label: "depth".into(),
                y_label: "predicted loss (nats)".into(),
                series: vec![Series::new(
                    "frontier",
                    r.frontier.iter().map(|p| (p.depth as f64, p.predicted_loss)).collect(),
                    Mark::Line,
                )],
                guides: vec![(dc, format!("D_crit(W={})", r.best.width))],
                highlight: Some((
                    r.best.depth as f64,
                    r.best.predicted_loss,
                    format!("{}L×{}W", r.best.depth, r.best.width),
                )),
                ..Plot::default()
            })?
        }
    })
}

// ---------------------------------------------------------------- simulate

fn sim_template(cli: &Cli, args: &SimulateArgs) -> Result<SimConfig, Failure> {
    let w0 = args.width[0];
    Ok(SimConfig {
        depth: args.depth.unwrap_or(2),
        width: w0,
        sigma: args.sigma,
        trials: args.trials,
        rng_seed: cli.seed,
        mode: match args.mode {
            ModeArg::Matrix => SimMode::MatrixProduct,
            ModeArg::Recursion => SimMode::NormRecursion,
        },
        sampler: match args.sampler {
            SamplerArg::Projected => JacobianSampler::Projected,
            SamplerArg::Dense => JacobianSampler::Dense,
        },
        aggregation: match args.aggregation {
            AggregationArg::Norm => Aggregation::Norm,
            AggregationArg::Squared => Aggregation::SquaredNorm,
        },
        work_cap: args.work_cap,
    })
}

fn profiles_csv(ps: &[GradientProfile]) -> String {
    let mut s = String::from("width,depth,layer,ratio\n");
    for p in ps {
        for (l, r) in p.layers() {
            let _ = writeln!(s, "{},{},{l},{r}", p.width, p.depth);
        }
    }
    s
}

fn tau_label(t: f64) -> String {
    if t.is_finite() { format!("{t:.2}") } else { "∞ (no decay)".into() }
}

fn simulate_cmd(cli: &Cli, args: &SimulateArgs) -> Result<String, Failure> {
    let template = sim_template(cli, args)?;
    let kappa = params(cli).kappa;
    let rule = match args.depth {
        Some(d) => DepthRule::Fixed(d),
        None => DepthRule::CritMultiple { multiple: 3.0, kappa },
    };
    let sweep = args.width.len() >= 3;
    let profiles = if sweep {
        sweep_profiles(&args.width, &template, rule)?
    } else {
        args.width
            .iter()
            .map(|&w| {
                let cfg = SimConfig { width: w, depth: rule.depth_for(w)?, ..template };
                simulate(&cfg)
            })
            .collect::<Result<Vec<_>, Error>>()?
    };
    let models: Option<TauModels> = if sweep {
        Some(fit_tau_models(&profiles.iter().map(|p| (p.width, p.tau_hat)).collect::<Vec<_>>())?)
    } else {
        None
    };
    Ok(match cli.format {
        Format::Text => {
            let mut s = String::from("width  depth   τ̂          first-layer ratio\n");
            for p in &profiles {
                let _ = writeln!(s, "{:>5}  {:>5}   {:<10} {:.5}", p.width, p.depth, tau_label(p.tau_hat), p.ratios[0]);
            }
            if let Some(m) = &models {
                let _ = writeln!(s, "\nτ = c·W^a   c = {:.4}, a = {:.4}, R² = {:.4}", m.power.c, m.power.a, m.power.r_squared);
                let _ = writeln!(s, "τ = c·ln W  c = {:.4}, R² = {:.4}", m.log.c, m.log.r_squared);
                let _ = writeln!(
                    s,
                    "preferred: {}",
                    if m.power_preferred() { "power law" } else { "log law" }
                );
            }
            s
        }
        Format::Json => to_json(&json!({"profiles": profiles, "tau_models": models}))?,
        Format::Csv => profiles_csv(&profiles),
        Format::Svg => match &models {
            Some(m) => {
                let wmin = *args.width.iter().min().unwrap() as f64;
                let wmax = *args.width.iter().max().unwrap() as f64;
                let grid: Vec<f64> = (0..=40).map(|i| wmin * (wmax / wmin).powf(i as f64 / 40.0)).collect();
                render(&Plot {
                    title: "persistence length vs width".into(),
                    x_label: "width".into(),
                    y_label: "τ (layers)".into(),
                    log_x: true,
                    log_y: true,
                    series: vec![
                        Series::new("simulated", profiles.iter().map(|p| (p.width as f64, p.tau_hat)).collect(), Mark::Points),
                        Series::new(
                            format!("c·W^a, R²={:.3}", m.power.r_squared),
                            grid.iter().map(|w| (*w, m.power.c * w.powf(m.power.a))).collect(),
                            Mark::Line,
                        ),
                        Series::new(
                            format!("c·ln W, R²={:.3}", m.log.r_squared),
                            grid.iter().map(|w| (*w, m.log.c * w.ln())).collect(),
                            Mark::Line,
                        ),
                    ],
                    ..Plot::default()
                })?
            }
            None => render(&Plot {
                title: "signal retention by layer".into(),
                x_label: "layer".into(),
                y_label: "ratio to top layer".into(),
                series: profiles
                    .iter()
                    .map(|p| {
                        Series::new(
                            format!("W={}", p.width),
                            p.layers().into_iter().map(|(l, r)| (l as f64, r)).collect(),
                            Mark::Line,
                        )
                    })
                    .collect(),
                ..Plot::default()
            })?,
        },
    })
}

// ---------------------------------------------------------------- verify

fn verify(cli: &Cli, args: &DataArgs) -> Result<Output, Failure> {
    let ds = load_data(args)?;
    let report = verify_against_paper(&ds)?;
    let body = match cli.format {
        Format::Text => report.to_string(),
        Format::Json => to_json(&report)?,
        Format::Csv => {
            let mut s = String::from("check,status,detail\n");
            for c in &report.checks {
                let _ = writeln!(s, "{},{},\"{}\"", c.name, c.status, c.detail.replace('"', "\"\""));
            }
            s
        }
        Format::Svg => ucurve_svg(cli, &ds)?,
    };
    Ok((body, failed_checks(&report)))
}

fn failed_checks(report: &VerifyReport) -> Option<Failure> {
    let failed: Vec<&str> = report
        .checks
        .iter()
        .filter(|c| c.status == archscale_core::dataset::CheckStatus::Fail)
        .map(|c| c.name.as_str())
        .collect();
    (!failed.is_empty()).then(|| Failure::Checks(format!("verification failed: {}", failed.join(", "))))
}

fn ucurve_svg(cli: &Cli, ds: &Dataset) -> Result<String, Failure> {
    let mut pts: Vec<(f64, f64)> = ds
        .records
        .iter()
        .filter(|r| r.scale_group == ScaleGroup::Baseline && r.arch.width() == 512)
        .map(|r| (r.arch.depth() as f64, r.loss))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let min = pts.iter().copied().min_by(|a, b| a.1.total_cmp(&b.1));
    let dc = d_crit(512, &checked_params(cli)?)?;
    render(&Plot {
        title: "loss vs depth at W = 512".into(),
        x_label: "depth (layers)".into(),
        y_label: "loss (nats)".into(),
        series: vec![Series::new("W=512", pts, Mark::Line)],
        guides: vec![(dc, format!("D_crit = {dc:.1}"))],
        highlight: min.map(|(d, l)| (d, l, format!("minimum {d}L"))),
        ..Plot::default()
    })
}

// ---------------------------------------------------------------- report

fn report(cli: &Cli, args: &ReportArgs) -> Result<String, Failure> {
    if !matches!(cli.format, Format::Text | Format::Json) {
        return Err(unsupported("report", cli.format));
    }
    let p = checked_params(cli)?;
    let ds = load_data(&args.data)?;

    let widths = [256u64, 512, 1024, 1536];
    let dcrit_rows = widths
        .iter()
        .map(|&w| Ok((w, d_crit(w, &p.with_form(DcritForm::LogLaw))?, tau(w, &p, DcritForm::PowerLaw)?)))
        .collect::<Result<Vec<_>, Error>>()?;

    let verify = verify_against_paper(&ds)?;

    let base = ds.group(ScaleGroup::Baseline);
    let cfg = FitConfig {
        bootstrap_resamples: args.resamples,
        rng_seed: cli.seed,
        ..FitConfig::default()
    }
    .with_form(cli.dcrit_form);
    let cfg = match cli.kappa {
        Some(k) => cfg.fix(ParamName::Kappa, k),
        None => cfg,
    };
    let base_fit = fit_scaling_law(&base, &cfg)?;
    let tokens = 6.4e9;
    let l16 = predict_loss(&Architecture::new(16, 512)?, Some(tokens), &base_fit.params)?;
    let l24 = predict_loss(&Architecture::new(24, 512)?, Some(tokens), &base_fit.params)?;
    let all_fit = fit_scaling_law(
        &ds.records,
        &FitConfig {
            group_offsets: true,
            bootstrap_resamples: 0,
            ..cfg.clone()
        },
    )?;

    let sim_tmpl = SimConfig { rng_seed: cli.seed, ..SimConfig::for_width(512)? };
    let profiles = sweep_profiles(&widths, &sim_tmpl, DepthRule::CritMultiple { multiple: 3.0, kappa: p.kappa })?;
    let curve: Vec<(u64, f64)> = profiles.iter().map(|q| (q.width, q.tau_hat)).collect();
    let tau_models = fit_tau_models(&curve)?;

    let plan7b = optimize_shape(&PlanQuery::new(SEVENB_OPTIMAL_FLOPS, p))?;
    let exps = fit_scaling_exponents(&[1e18, 1e19, 1e20, 1e21, 1e22], &PlanQuery::new(1.0, p))?;
    let cf = closed_form_exponents(KAPLAN_ALPHA, KAPLAN_DELTA)?;
    let audit = audit_report(&builtin_shapes(), &p)?;

    if cli.format == Format::Json {
        return to_json(&json!({
            "d_crit": dcrit_rows.iter().map(|(w, d, t)| json!({"width": w, "log_law": d, "power_law": t})).collect::<Vec<_>>(),
            "verify": verify,
            "baseline_fit": base_fit,
            "baseline_fit_ranking": {"loss_16x512": l16, "loss_24x512": l24},
            "all_groups_fit": all_fit,
            "simulation": {"profiles_tau": curve, "tau_models": tau_models},
            "plan_7b": {"best": plan7b.best, "d_over_dcrit": plan7b.d_over_dcrit},
            "exponents": exps,
            "closed_form": cf,
            "audit": audit,
        }));
    }

    let mut s = String::new();
    let _ = writeln!(s, "== critical depth ==");
    let _ = writeln!(s, "width   κ·ln W (κ={})   c·W^a (c={}, a={})", p.kappa, p.tau_c, p.tau_a);
    for (w, d, t) in &dcrit_rows {
        let _ = writeln!(s, "{w:>5}   {d:>14.2}   {t:>17.2}");
    }
    let _ = writeln!(s, "the two calibrations differ by about 2× at these widths");

    let _ = writeln!(s, "\n== dataset checks ==");
    s.push_str(&verify.to_string());

    let _ = writeln!(s, "\n== fit on {} baseline records ==", base.len());
    s.push_str(&fit_text(&base_fit));
    if let Some((lo, hi)) = base_fit.ci95.get(&ParamName::Kappa) {
        let overlap = *lo <= 2.77 && *hi >= 2.09;
        let _ = writeln!(
            s,
            "κ interval [{lo:.3}, {hi:.3}] {} the published [2.09, 2.77]",
            if overlap { "overlaps" } else { "does not overlap" }
        );
    }
    let _ = writeln!(
        s,
        "fitted model at 6.4e9 tokens: 16L×512W {l16:.4}, 24L×512W {l24:.4} ({})",
        if l24 > l16 { "deeper ranks worse, as observed" } else { "deeper ranks better, unlike the data" }
    );

    let _ = writeln!(s, "\n== fit on all {} records with per-group offsets ==", ds.records.len());
    s.push_str(&fit_text(&all_fit));

    let _ = writeln!(s, "\n== simulated persistence length (σ = 1, {} trials) ==", sim_tmpl.trials);
    for q in &profiles {
        let _ = writeln!(s, "W = {:>5}  D = {:>3}  τ̂ = {}", q.width, q.depth, tau_label(q.tau_hat));
    }
    let _ = writeln!(
        s,
        "power law a = {:.3} (R² {:.4}); log law c = {:.2} (R² {:.4})",
        tau_models.power.a, tau_models.power.r_squared, tau_models.log.c, tau_models.log.r_squared
    );
    let _ = writeln!(s, "random residual blocks give τ ≈ 2W/σ² + 1, linear in W; the measured W^0.44 comes from trained models");

    let _ = writeln!(s, "\n== compute-optimal shape ==");
    s.push_str(&plan_text(&plan7b));
    s.push('\n');
    s.push_str(&sweep_text(&exps, &cf));

    let _ = writeln!(s, "\n== depth audit ==");
    s.push_str(&audit.to_text());
    Ok(s)
}
