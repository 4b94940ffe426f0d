//! The `run` pipeline: exponents, optional supersolution calibration, solve,
//! comparison, optional blow-up analysis.

use std::time::Instant;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use parasys::blowup::{
    estimate_blowup_time, fit_rate, theory_exponents, windowed_norm_history, with_rerun, BlowupReport, BlowupTime,
    WindowedHistory,
};
use parasys::exponents::{classify_regime, strong_coupling_scan, weight_grid, ExponentReport, Nonlinearity, ScanDiscrepancy};
use parasys::fields::{Field, GRID_TOL_REL};
use parasys::mild::{
    comparison_check, direct_solve, monotone_solve, relative_sup_difference, time_grid, transform_solve,
    ComparisonReport, Reaction, SolveResult, SolveStatus, TracePoint,
};
use parasys::semigroup::{Method, SemigroupEngine};
use parasys::supersolution::{
    calibrate_gamma, check_smallness_condition, majorant_initial_data, power_law_envelope, profile_for_data,
    threshold_data, verify_profile, Calibration, EnvelopeCheck, SmallnessCheck, SupersolutionProfile, ViolationReport,
};

use crate::config::{ConfigError, Expectation, RunConfig, SolverMode, SupersolutionConfig};

/// One verdict of the run, with the tolerance it was checked under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub tol: f64,
    /// How `value` is compared with `tol`.
    pub relation: String,
    pub detail: String,
}

impl Check {
    fn at_most(name: &str, value: f64, tol: f64, detail: impl Into<String>) -> Self {
        Check { name: name.into(), pass: value <= tol, value, tol, relation: "<=".into(), detail: detail.into() }
    }

    fn at_least(name: &str, value: f64, tol: f64, detail: impl Into<String>) -> Self {
        Check { name: name.into(), pass: value >= tol, value, tol, relation: ">=".into(), detail: detail.into() }
    }

    fn holds(name: &str, pass: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            pass,
            value: pass as u8 as f64,
            tol: 1.0,
            relation: "==".into(),
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Config,
    Numerical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: String,
    pub kind: ErrorKind,
    pub message: String,
}

pub fn classify_error(e: &anyhow::Error) -> ErrorKind {
    for cause in e.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return ErrorKind::Config;
        }
        if let Some(pe) = cause.downcast_ref::<parasys::Error>() {
            return if pe.is_input_error() { ErrorKind::Config } else { ErrorKind::Numerical };
        }
        if cause.downcast_ref::<toml::de::Error>().is_some() {
            return ErrorKind::Config;
        }
    }
    ErrorKind::Numerical
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub dim: usize,
    pub points: Vec<usize>,
    pub half_width: f64,
    pub spacing: f64,
    pub method: Method,
    pub truncated: bool,
    pub grid_tol_rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSummary {
    pub cases: usize,
    pub search_true: usize,
    pub closed_form_discrepancies: usize,
    pub amended_discrepancies: usize,
    pub exact_vs_search: usize,
    /// The first discrepancies of the published closed forms.
    pub examples: Vec<ScanDiscrepancy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileInfo {
    pub mode: String,
    pub sigma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub a_exp: f64,
    pub b_exp: f64,
    pub horizon: f64,
}

impl From<&SupersolutionProfile> for ProfileInfo {
    fn from(p: &SupersolutionProfile) -> Self {
        ProfileInfo {
            mode: p.mode.to_string(),
            sigma: p.sigma,
            alpha: p.alpha,
            beta: p.beta,
            a_exp: p.a_exp,
            b_exp: p.b_exp,
            horizon: p.horizon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupersolutionSection {
    pub calibration: Option<Calibration>,
    pub gamma: f64,
    pub threshold_fraction: Option<f64>,
    pub smallness: SmallnessCheck,
    pub profile: ProfileInfo,
    pub inequality: ViolationReport,
    pub comparison: Option<ComparisonReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub solver: String,
    pub status: SolveStatus,
    pub iterations: usize,
    pub residual: Option<f64>,
    pub tol_solve: Option<f64>,
    pub last_time: f64,
    pub outputs: usize,
    pub final_sup: Vec<f64>,
    pub max_sup: Vec<f64>,
    pub max_undershoot: f64,
    pub monotone_violation: f64,
    pub notes: Vec<String>,
}

impl SolveSummary {
    fn new(solver: &str, r: &SolveResult, tol_solve: Option<f64>) -> Self {
        let k = r.components.len();
        let last = r.trace.last();
        SolveSummary {
            solver: solver.into(),
            status: r.status,
            iterations: r.iterations,
            residual: r.residual,
            tol_solve,
            last_time: r.last_time,
            outputs: r.t_grid.len(),
            final_sup: last.map(|p| p.sup.clone()).unwrap_or_default(),
            max_sup: (0..k).map(|c| r.trace.iter().map(|p| p.sup[c]).fold(0.0, f64::max)).collect(),
            max_undershoot: r.max_undershoot,
            monotone_violation: r.monotone_violation,
            notes: r.notes.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub solvers: (String, String),
    pub relative_sup_difference: f64,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupSection {
    pub blew_up: bool,
    pub time: Option<BlowupTime>,
    pub rerun: Option<BlowupTime>,
    pub fit: Option<BlowupReport>,
    pub half_width_over_diffusion_length: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: String,
    pub seed: u64,
    pub config: RunConfig,
    pub grid: Option<GridInfo>,
    pub exponents: ExponentReport,
    pub scan: Option<ScanSummary>,
    pub supersolution: Option<SupersolutionSection>,
    pub solves: Vec<SolveSummary>,
    pub cross_validation: Option<CrossValidation>,
    pub envelope: Vec<EnvelopeCheck>,
    pub blowup: Option<BlowupSection>,
    pub checks: Vec<Check>,
    pub errors: Vec<StageError>,
    pub pass: bool,
    pub wall_clock_seconds: f64,
}

/// Report plus the series written by the csv and plotdata emitters.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub trace: Vec<TracePoint>,
    /// `(t, T - t, sup norms)` inside the rate-fit window.
    pub rate_series: Vec<(f64, f64, Vec<f64>)>,
    pub windowed: Option<WindowedHistory>,
}

impl RunOutput {
    pub fn exit_code(&self) -> i32 {
        let r = &self.report;
        if r.errors.iter().any(|e| e.kind == ErrorKind::Numerical) {
            4
        } else if r.errors.iter().any(|e| e.kind == ErrorKind::Config) {
            3
        } else if r.pass {
            0
        } else {
            2
        }
    }
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    report: RunReport,
}

impl Ctx<'_> {
    fn fail(&mut self, stage: &str, e: anyhow::Error) {
        log::error!("{stage}: {e:#}");
        self.report.errors.push(StageError { stage: stage.into(), kind: classify_error(&e), message: format!("{e:#}") });
    }

    fn check(&mut self, c: Check) {
        if !c.pass {
            log::warn!("check {} failed: {} {} {} ({})", c.name, c.value, c.relation, c.tol, c.detail);
        }
        self.report.checks.push(c);
    }
}

pub fn run(cfg: &RunConfig) -> anyhow::Result<RunOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let exponents = classify_regime(&cfg.system, cfg.analysis.r.as_deref())
        .map_err(|e| ConfigError(e.to_string()))
        .context("exponents")?;
    let mut ctx = Ctx {
        cfg,
        report: RunReport {
            tool: format!("parasys {}", env!("CARGO_PKG_VERSION")),
            seed: cfg.seed,
            config: cfg.clone(),
            grid: None,
            exponents,
            scan: None,
            supersolution: None,
            solves: Vec::new(),
            cross_validation: None,
            envelope: Vec::new(),
            blowup: None,
            checks: Vec::new(),
            errors: Vec::new(),
            pass: true,
            wall_clock_seconds: 0.0,
        },
    };
    let mut out = RunOutput { report: ctx.report.clone(), trace: Vec::new(), rate_series: Vec::new(), windowed: None };

    if let Some(scan) = &cfg.analysis.scan {
        let grid = weight_grid(64.0, scan.grid_points);
        let rep = strong_coupling_scan(&scan.lattice, &scan.pstars, &grid);
        ctx.check(Check::at_most(
            "closed_forms_match_weight_search",
            rep.closed_form.len() as f64,
            0.0,
            format!("{} lattice cases", rep.cases),
        ));
        ctx.check(Check::at_most("amended_forms_match_weight_search", rep.amended.len() as f64, 0.0, ""));
        ctx.check(Check::at_most("exact_solver_matches_weight_search", rep.exact_vs_search as f64, 0.0, ""));
        ctx.report.scan = Some(ScanSummary {
            cases: rep.cases,
            search_true: rep.search_true,
            closed_form_discrepancies: rep.closed_form.len(),
            amended_discrepancies: rep.amended.len(),
            exact_vs_search: rep.exact_vs_search,
            examples: rep.closed_form.into_iter().take(12).collect(),
        });
    }

    if !cfg.data.is_empty() {
        if let Err(e) = solve_stages(&mut ctx, &mut out) {
            ctx.fail("solve", e);
        }
    }

    let r = &mut ctx.report;
    r.pass = r.errors.is_empty() && r.checks.iter().all(|c| c.pass);
    r.wall_clock_seconds = start.elapsed().as_secs_f64();
    out.report = ctx.report;
    Ok(out)
}

fn solve_stages(ctx: &mut Ctx, out: &mut RunOutput) -> anyhow::Result<()> {
    let cfg = ctx.cfg;
    let engine = cfg.engine()?;
    let domain = engine.domain().clone();
    ctx.report.grid = Some(GridInfo {
        dim: domain.dim(),
        points: domain.points().to_vec(),
        half_width: domain.half_width(),
        spacing: domain.min_spacing(),
        method: engine.method(),
        truncated: domain.is_truncated(),
        grid_tol_rel: GRID_TOL_REL,
    });
    let mut data = cfg.sample_data(&domain).context("initial data")?;

    let mut profile = None;
    if let Some(sc) = &cfg.analysis.supersolution {
        match supersolution_stage(ctx, sc, &engine, &mut data) {
            Ok(p) => profile = Some(p),
            Err(e) => ctx.fail("supersolution", e),
        }
    }

    let solver = &cfg.solver;
    let grid = time_grid(solver.horizon, solver.per_decade, solver.decades)?;
    let reaction = Reaction::system(&cfg.system);
    let ctl = solver.controller();
    let is_exp = matches!(cfg.system.nonlinearity, Nonlinearity::StrongExp { .. });
    let picard = |d: &[Field]| monotone_solve(&reaction, d, &engine, &grid, &solver.picard);
    let direct = |d: &[Field]| direct_solve(&reaction, d, &engine, solver.horizon, &grid, &ctl);
    let transform = |d: &[Field]| transform_solve(&cfg.system, &d[0], &d[1], &engine, solver.horizon, &grid, &ctl);
    let mut runs: Vec<(&str, SolveResult)> = Vec::new();
    match solver.mode {
        SolverMode::Picard => runs.push(("picard", picard(&data).context("picard solve")?)),
        SolverMode::Direct => runs.push(("direct", direct(&data).context("direct solve")?)),
        SolverMode::Transform => runs.push(("transform", transform(&data).context("transformed solve")?)),
        SolverMode::Compare if is_exp => {
            runs.push(("transform", transform(&data).context("transformed solve")?));
            runs.push(("direct", direct(&data).context("direct solve")?));
        }
        SolverMode::Compare => {
            runs.push(("picard", picard(&data).context("picard solve")?));
            runs.push(("direct", direct(&data).context("direct solve")?));
        }
    }
    for (name, r) in &runs {
        let tol = (*name == "picard").then_some(solver.picard.tol_solve);
        ctx.report.solves.push(SolveSummary::new(name, r, tol));
        if *name == "picard" {
            let scale = r.trace.iter().flat_map(|p| p.sup.iter()).fold(0.0f64, |m, s| m.max(*s));
            ctx.check(Check::at_most(
                "picard_monotone",
                r.monotone_violation,
                GRID_TOL_REL * scale.max(f64::MIN_POSITIVE),
                "largest decrease between consecutive iterates",
            ));
            if r.status != SolveStatus::BlowUpSuspected {
                ctx.check(Check::at_most(
                    "picard_converged",
                    r.residual.unwrap_or(f64::INFINITY),
                    solver.picard.tol_solve,
                    format!("{} iterations", r.iterations),
                ));
            }
        }
    }
    if runs.len() == 2 && runs.iter().all(|(_, r)| !r.is_blowup()) {
        let d = relative_sup_difference(&runs[0].1, &runs[1].1)?;
        ctx.check(Check::at_most("solvers_agree", d, solver.compare_tol, format!("{} vs {}", runs[0].0, runs[1].0)));
        ctx.report.cross_validation = Some(CrossValidation {
            solvers: (runs[0].0.into(), runs[1].0.into()),
            relative_sup_difference: d,
            tol: solver.compare_tol,
        });
    }
    let primary = &runs[0].1;
    out.trace = primary.trace.clone();

    match cfg.analysis.expect {
        Some(Expectation::Bounded) => ctx.check(Check::holds(
            "bounded_to_horizon",
            !primary.is_blowup() && primary.last_time >= solver.horizon * (1.0 - 1e-12),
            format!("{} reached t = {}", runs[0].0, primary.last_time),
        )),
        Some(Expectation::Blowup) if cfg.analysis.blowup.is_none() => ctx.check(Check::holds(
            "blows_up",
            primary.is_blowup(),
            format!("{} stopped at t = {}", runs[0].0, primary.last_time),
        )),
        _ => {}
    }

    if let (Some(p), Some(sc)) = (&profile, &cfg.analysis.supersolution) {
        if primary.status == SolveStatus::Converged {
            let rep = comparison_check(primary, p, &engine, sc.tol_cmp)?;
            ctx.check(Check::at_most(
                "solution_below_profile",
                rep.violation_u.max(rep.violation_v),
                sc.tol_cmp,
                format!("worst at t = {}", rep.worst_time),
            ));
            if let Some(s) = ctx.report.supersolution.as_mut() {
                s.comparison = Some(rep);
            }
        } else {
            ctx.check(Check::holds("solution_below_profile", false, "solve did not converge"));
        }
    }

    if cfg.analysis.envelope {
        if let Some(r) = &cfg.analysis.r {
            for (c, &rc) in r.iter().enumerate() {
                let states: Vec<(f64, &Field)> =
                    primary.t_grid.iter().copied().zip(primary.components[c].iter()).collect();
                let env = power_law_envelope(&states, rc)?;
                ctx.check(Check::holds(
                    &format!("envelope_component_{c}"),
                    env.constant.is_finite(),
                    format!("C = {:e} at t = {}", env.constant, env.t),
                ));
                ctx.report.envelope.push(env);
            }
        }
    }

    if let Some(bc) = &cfg.analysis.blowup {
        if let Err(e) = blowup_stage(ctx, out, &engine, &data, bc) {
            ctx.fail("blowup", e);
        }
    }
    Ok(())
}

fn supersolution_stage(
    ctx: &mut Ctx,
    sc: &SupersolutionConfig,
    engine: &SemigroupEngine,
    data: &mut Vec<Field>,
) -> anyhow::Result<SupersolutionProfile> {
    let spec = &ctx.cfg.system;
    let r = ctx.cfg.analysis.r.as_ref().expect("validated");
    let (r1, r2) = (r[0], r[1]);
    let shape = majorant_initial_data(&data[0], &data[1], r1, r2)?;
    let calibration = match sc.gamma {
        Some(_) => None,
        None => Some(
            calibrate_gamma(&shape, spec, r1, r2, sc.r, sc.rho, sc.t1, sc.condition, engine, &sc.calibration)
                .context("gamma calibration")?,
        ),
    };
    let gamma = sc.gamma.unwrap_or_else(|| calibration.as_ref().unwrap().gamma);
    if let Some(f) = sc.threshold_fraction {
        let (u0, v0) = threshold_data(&shape, spec, r1, r2, sc.rho, f * gamma, sc.condition)?;
        *data = vec![u0, v0];
    }
    let big_w = majorant_initial_data(&data[0], &data[1], r1, r2)?;
    let smallness = check_smallness_condition(&big_w, spec, r1, r2, sc.rho, gamma, sc.condition)?;
    let horizon = (sc.rho * sc.rho).min(sc.t1);
    let profile = profile_for_data(&data[0], &data[1], spec, r1, r2, sc.r, sc.condition.mode(), horizon)?;
    let grid = time_grid(horizon, sc.calibration.per_decade, sc.calibration.decades)?;
    let inequality = verify_profile(&profile, engine, &grid, sc.tol_cmp)?;
    ctx.check(Check::at_most(
        "smallness_condition",
        smallness.lhs,
        smallness.rhs,
        format!("gamma = {gamma:e}"),
    ));
    ctx.check(Check::at_most(
        "supersolution_inequality",
        inequality.max_violation,
        sc.tol_cmp,
        format!("over (0, {horizon}]"),
    ));
    ctx.report.supersolution = Some(SupersolutionSection {
        calibration,
        gamma,
        threshold_fraction: sc.threshold_fraction,
        smallness,
        profile: (&profile).into(),
        inequality,
        comparison: None,
    });
    Ok(profile)
}

fn blowup_stage(
    ctx: &mut Ctx,
    out: &mut RunOutput,
    engine: &SemigroupEngine,
    data: &[Field],
    bc: &crate::config::BlowupConfig,
) -> anyhow::Result<()> {
    let cfg = ctx.cfg;
    let spec = &cfg.system;
    let reaction = Reaction::system(spec);
    let horizon = cfg.solver.horizon;
    let mut ctl = cfg.solver.controller();
    ctl.snapshot_growth = Some(bc.snapshot_growth);
    let run = direct_solve(&reaction, data, engine, horizon, &[], &ctl).context("blow-up run")?;
    let mut section =
        BlowupSection { blew_up: run.is_blowup(), time: None, rerun: None, fit: None, half_width_over_diffusion_length: None };
    if cfg.analysis.expect == Some(Expectation::Blowup) {
        ctx.check(Check::holds("blows_up", run.is_blowup(), format!("run stopped at t = {}", run.last_time)));
    }
    if !run.is_blowup() {
        ctx.report.blowup = Some(section);
        return Ok(());
    }
    if out.trace.is_empty() || ctx.cfg.solver.mode != SolverMode::Direct {
        out.trace = run.trace.clone();
    }
    let theta = theory_exponents(spec)?;
    let first = estimate_blowup_time(&run, theta[0], 0)?;
    let mut combined = first.clone();
    if bc.rerun {
        // the halved run sets the uncertainty; a further halving must stay inside it
        let refine = |k: f64| {
            let mut fine = ctl;
            fine.dt_init /= k;
            fine.dt_max /= k;
            fine.dt_min /= k;
            fine.snapshot_growth = None;
            fine
        };
        let run2 = direct_solve(&reaction, data, engine, horizon, &[], &refine(2.0)).context("blow-up rerun")?;
        let second = estimate_blowup_time(&run2, theta[0], 0)?;
        combined = with_rerun(&first, &second);
        let run3 = direct_solve(&reaction, data, engine, horizon, &[], &refine(4.0)).context("blow-up rerun")?;
        let third = estimate_blowup_time(&run3, theta[0], 0)?;
        ctx.check(Check::at_most(
            "t_est_stable_under_refinement",
            (third.t_est - second.t_est).abs(),
            combined.uncertainty,
            "step bounds halved twice",
        ));
        section.rerun = Some(second);
    }
    let fit = fit_rate(&run, spec, &combined, bc.window, ctl.dt_min)?;
    let scaling_only = fit.scaling_only;
    for (c, (&sup, ratio)) in fit.empirical_limsup.iter().zip(&fit.ratio).enumerate() {
        ctx.check(Check::at_least(
            &format!("empirical_limsup_positive_{c}"),
            sup,
            f64::MIN_POSITIVE,
            "max over the window of (T-t)^theta ||u||",
        ));
        if !scaling_only {
            ctx.check(Check::at_least(
                &format!("rate_at_least_theory_{c}"),
                *ratio,
                0.85,
                format!("fitted {} vs theory {}", fit.fitted_exp[c], fit.theory_exp[c]),
            ));
        }
    }
    if engine.domain().is_truncated() {
        let ratio = engine.domain().half_width() / (4.0 * combined.t_est.sqrt());
        section.half_width_over_diffusion_length = Some(ratio);
        ctx.check(Check::at_least("box_covers_diffusion_length", ratio, 1.0, "half-width / 4 sqrt(T_est)"));
    }
    let (lo, hi) = fit.window;
    out.rate_series = run
        .trace
        .iter()
        .filter(|p| p.t >= lo && p.t <= hi)
        .map(|p| (p.t, combined.t_est - p.t, p.sup.clone()))
        .collect();
    if let Some(r) = bc.r_norm {
        let hist = windowed_norm_history(&run, spec, combined.t_est, r)?;
        let mut fit = fit;
        fit.windowed_norms = Some(hist.clone());
        section.fit = Some(fit);
        out.windowed = Some(hist);
    } else {
        section.fit = Some(fit);
    }
    section.time = Some(combined);
    ctx.report.blowup = Some(section);
    Ok(())
}
