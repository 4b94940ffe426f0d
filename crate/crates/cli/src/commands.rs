//! Subcommands of the `parasys` binary.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use parasys::blowup::{estimate_blowup_time, fit_rate, theory_exponents};
use parasys::exponents::{
    classify_regime, compute_ab, strong_coupling_scan, weight_grid, DomainKind, Nonlinearity, SystemSpec,
};
use parasys::fields::{sample_function, Domain, Field, InitialDatum};
use parasys::lorentz::{lp_norm, uloc_norm, weak_norm};
use parasys::mild::{DtController, SolveResult, SolveStatus, TracePoint};
use parasys::semigroup::{log_grid, smoothing_ratio, Method, SemigroupEngine};
use parasys::supersolution::{
    check_smallness_condition, majorant_initial_data, smallness_functional, verify_profile, ProfileMode,
    SmallnessCondition, SupersolutionProfile,
};

use crate::config::{BlowupConfig, ConfigError, Format, RunConfig};
use crate::emit::emit;
use crate::pipeline::run;

#[derive(Debug, Parser)]
#[command(name = "parasys", version, about = "Supersolutions, mild solutions and blow-up rates for coupled heat systems")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; reports go to stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed echoed into reports.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "PARASYS_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exponent algebra and regime verdicts.
    Exponents(ExponentsArgs),
    /// Weak-Lebesgue and uniformly local norms of a field.
    Norms(NormsArgs),
    /// Applies the heat semigroup to a field.
    Semigroup(SemigroupArgs),
    /// The smoothing ratio t -> ||S(t)phi|| t^{N/2r} / |||phi|||_{r,rho}, as CSV.
    Smoothing(SmoothingArgs),
    /// Builds a supersolution profile and checks it.
    Supersolution(SupersolutionArgs),
    /// Solves the configured system and writes the time series.
    Simulate,
    /// Blow-up time and rate fit, from a config or a recorded trace.
    Blowup(BlowupArgs),
    /// The full configured pipeline.
    Run,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Variant {
    Weak,
    KComponent,
    StrongPower,
    StrongExp,
}

#[derive(Debug, Args)]
pub struct SystemArgs {
    #[arg(long, value_enum, default_value = "weak")]
    pub variant: Variant,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub q: Option<f64>,
    /// `p1,p2,q1,q2` for strong coupling, `p_1,...,p_k` for the cycle.
    #[arg(long, value_delimiter = ',')]
    pub exponents: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    #[arg(long, default_value = "whole_space")]
    pub domain_kind: DomainKind,
}

impl SystemArgs {
    pub fn spec(&self) -> anyhow::Result<SystemSpec> {
        let e = &self.exponents;
        let nl = match self.variant {
            Variant::Weak => match (self.p, self.q) {
                (Some(p), Some(q)) => Nonlinearity::WeaklyCoupled { p, q },
                _ => bail!(ConfigError("weak coupling needs --p and --q".into())),
            },
            Variant::KComponent => Nonlinearity::KComponent { p: e.clone() },
            Variant::StrongPower | Variant::StrongExp => {
                let [p1, p2, q1, q2] = e[..] else {
                    bail!(ConfigError("strong coupling needs --exponents p1,p2,q1,q2".into()));
                };
                if matches!(self.variant, Variant::StrongPower) {
                    Nonlinearity::StrongPower { p1, p2, q1, q2 }
                } else {
                    Nonlinearity::StrongExp { p1, p2, q1, q2 }
                }
            }
        };
        SystemSpec::new(nl, self.dim, self.domain_kind).map_err(|e| ConfigError(e.to_string()).into())
    }
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long, default_value_t = 10.0)]
    pub half_width: f64,
    #[arg(long, default_value_t = 257)]
    pub points: usize,
    #[arg(long, default_value = "spectral-sine")]
    pub method: Method,
}

impl GridArgs {
    fn domain(&self, dim: usize) -> anyhow::Result<Arc<Domain>> {
        Ok(Arc::new(Domain::centered(dim, self.half_width, self.points).map_err(|e| ConfigError(e.to_string()))?))
    }
}

#[derive(Debug, Args)]
pub struct FieldArgs {
    /// Binary field file.
    #[arg(long, conflicts_with = "data")]
    pub field: Option<PathBuf>,
    /// Initial-data descriptor, e.g. `power_law(d=1,r=2)`.
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    #[command(flatten)]
    pub grid: GridArgs,
}

impl FieldArgs {
    fn load(&self) -> anyhow::Result<Field> {
        match (&self.field, &self.data) {
            (Some(path), _) => {
                let f = std::fs::File::open(path)
                    .map_err(|e| ConfigError(format!("cannot open {}: {e}", path.display())))?;
                Ok(Field::read_binary(std::io::BufReader::new(f))?)
            }
            (None, Some(text)) => {
                let d = self.grid.domain(self.dim)?;
                Ok(sample_function(&d, &InitialDatum::parse(text)?)?)
            }
            (None, None) => bail!(ConfigError("give --field or --data".into())),
        }
    }
}

#[derive(Debug, Args)]
pub struct ExponentsArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    /// Integrability indices of the data.
    #[arg(long, value_delimiter = ',')]
    pub r: Vec<f64>,
    /// Scan the strong-coupling weight conditions over a lattice.
    #[arg(long)]
    pub scan: bool,
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,1.5,2,3")]
    pub lattice: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "3,2,1.6666666666666667,1.5")]
    pub pstars: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct NormsArgs {
    #[command(flatten)]
    pub field: FieldArgs,
    #[arg(long, value_delimiter = ',', default_value = "2")]
    pub r: Vec<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SemigroupArgs {
    #[command(flatten)]
    pub field: FieldArgs,
    #[arg(long)]
    pub t: f64,
    /// Binary output field.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// CSV output field.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SmoothingArgs {
    #[command(flatten)]
    pub field: FieldArgs,
    #[arg(long, default_value_t = 2.0)]
    pub r: f64,
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub t_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub t_max: f64,
    #[arg(long, default_value_t = 31)]
    pub count: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SupersolutionCheck {
    Profile,
    Inequality,
    Smallness,
}

#[derive(Debug, Args)]
pub struct SupersolutionArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    pub u0: String,
    #[arg(long)]
    pub v0: String,
    /// Integrability indices `r1,r2` of the data.
    #[arg(long, value_delimiter = ',', required = true)]
    pub r: Vec<f64>,
    /// Index fixing the weights `r_i / r`; defaults to `min(r1, r2)`.
    #[arg(long)]
    pub r_weights: Option<f64>,
    #[arg(long, default_value = "drift")]
    pub mode: ProfileMode,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub horizon: f64,
    #[arg(long, value_enum, default_value = "inequality")]
    pub check: SupersolutionCheck,
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct BlowupArgs {
    /// Trace CSV (`t,dt,sup_0,...`) of a finished run.
    #[arg(long, conflicts_with = "config")]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub system: SystemArgs,
    /// Index of the windowed uniformly local norms.
    #[arg(long)]
    pub r: Option<f64>,
    /// Fit window `lo,hi` in `(T - t) / T`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub window: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1e-10)]
    pub dt_min: f64,
}

fn write_json(out: Option<&Path>, name: &str, value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
            let path = dir.join(name);
            std::fs::write(&path, text + "\n").with_context(|| format!("cannot write {}", path.display()))?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let Some(path) = &cli.config else {
        bail!(ConfigError("this subcommand needs --config".into()));
    };
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Runs the parsed command and returns the process exit code.
pub fn execute(cli: &Cli) -> anyhow::Result<i32> {
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Exponents(a) => exponents(cli, a),
        Command::Norms(a) => {
            let f = a.field.load()?;
            let mut rows = Vec::new();
            for &r in &a.r {
                let uloc = a.rho.map(|rho| uloc_norm(&f, r, rho)).transpose()?;
                rows.push(json!({
                    "r": r,
                    "weak": weak_norm(&f, r)?.norm,
                    "lebesgue": lp_norm(&f, r)?,
                    "uniformly_local": uloc.map(|u| u.norm),
                    "rho": a.rho,
                }));
            }
            write_json(out, "norms.json", &json!({ "sup": f.linf_norm(), "norms": rows }))?;
            Ok(0)
        }
        Command::Semigroup(a) => {
            let f = a.field.load()?;
            let engine = SemigroupEngine::new(f.domain().clone(), a.field.grid.method);
            let ev = engine.apply_with_stats(&f, a.t)?;
            if let Some(path) = &a.output {
                let w = std::fs::File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
                ev.field.write_binary(std::io::BufWriter::new(w))?;
            }
            if let Some(path) = &a.csv {
                let w = std::fs::File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
                ev.field.write_csv(std::io::BufWriter::new(w))?;
            }
            let summary = json!({
                "t": a.t,
                "method": engine.method(),
                "sup_before": f.linf_norm(),
                "sup_after": ev.field.linf_norm(),
                "undershoot": ev.undershoot,
            });
            write_json(out, "semigroup.json", &summary)?;
            Ok(0)
        }
        Command::Smoothing(a) => smoothing(cli, a),
        Command::Supersolution(a) => supersolution(cli, a),
        Command::Simulate => {
            let mut cfg = load_config(cli)?;
            cfg.analysis.supersolution = None;
            cfg.analysis.blowup = None;
            cfg.analysis.scan = None;
            if cfg.output.formats.is_empty() {
                cfg.output.formats = vec![Format::Json, Format::Csv];
            }
            finish(cli, &cfg)
        }
        Command::Blowup(a) => blowup(cli, a),
        Command::Run => {
            let cfg = load_config(cli)?;
            finish(cli, &cfg)
        }
    }
}

fn finish(cli: &Cli, cfg: &RunConfig) -> anyhow::Result<i32> {
    let output = run(cfg)?;
    let formats: BTreeSet<Format> = cfg.output.formats.iter().copied().collect();
    match cli.out.clone().or_else(|| cfg.output.dir.clone()) {
        Some(dir) => {
            for path in emit(&output, &formats, &dir, &cfg.output.stem)? {
                log::info!("wrote {}", path.display());
            }
        }
        None => println!("{}", serde_json::to_string_pretty(&output.report)?),
    }
    Ok(output.exit_code())
}

fn exponents(cli: &Cli, a: &ExponentsArgs) -> anyhow::Result<i32> {
    let (spec, r) = match &cli.config {
        Some(_) => {
            let cfg = load_config(cli)?;
            (cfg.system, cfg.analysis.r)
        }
        None => (a.system.spec()?, (!a.r.is_empty()).then(|| a.r.clone())),
    };
    let report = classify_regime(&spec, r.as_deref()).map_err(|e| ConfigError(e.to_string()))?;
    let mut code = 0;
    let scan = if a.scan {
        let s = strong_coupling_scan(&a.lattice, &a.pstars, &weight_grid(64.0, 257));
        if !s.closed_form.is_empty() || s.exact_vs_search > 0 {
            code = 2;
        }
        Some(json!({
            "cases": s.cases,
            "search_true": s.search_true,
            "closed_form_discrepancies": s.closed_form.len(),
            "amended_discrepancies": s.amended.len(),
            "exact_vs_search": s.exact_vs_search,
            "examples": s.closed_form.iter().take(12).collect::<Vec<_>>(),
        }))
    } else {
        None
    };
    write_json(cli.out.as_deref(), "exponents.json", &json!({ "report": report, "scan": scan }))?;
    Ok(code)
}

fn smoothing(cli: &Cli, a: &SmoothingArgs) -> anyhow::Result<i32> {
    let f = a.field.load()?;
    let engine = SemigroupEngine::new(f.domain().clone(), a.field.grid.method);
    let grid = log_grid(a.t_min, a.t_max, a.count);
    let samples = smoothing_ratio(&engine, &f, a.r, a.rho, &grid)?;
    let mut text = String::from("t,sup,ratio\n");
    for s in &samples {
        text.push_str(&format!("{:e},{:e},{:e}\n", s.t, s.sup_norm, s.ratio));
    }
    match cli.out.as_deref() {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join("smoothing.csv"), text)?;
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    let worst = samples.iter().map(|s| s.ratio).fold(0.0, f64::max);
    log::info!("largest smoothing ratio {worst:e}");
    Ok(0)
}

fn supersolution(cli: &Cli, a: &SupersolutionArgs) -> anyhow::Result<i32> {
    let spec = a.system.spec()?;
    let d = a.grid.domain(spec.dim)?;
    let engine = SemigroupEngine::new(d.clone(), a.grid.method);
    let u0 = sample_function(&d, &InitialDatum::parse(&a.u0)?)?;
    let v0 = sample_function(&d, &InitialDatum::parse(&a.v0)?)?;
    let [r1, r2] = a.r[..] else {
        bail!(ConfigError("--r takes two indices".into()));
    };
    let rw = a.r_weights.unwrap_or(r1.min(r2));
    let (alpha, beta) = (a.alpha.unwrap_or(r1 / rw), a.beta.unwrap_or(r2 / rw));
    let (ae, be) = compute_ab(&spec, &[alpha, beta])?;
    let sigma = match a.sigma {
        Some(s) => s,
        None => SupersolutionProfile::default_sigma(a.mode, ae, be, rw)?,
    };
    let w0 = majorant_initial_data(&u0, &v0, alpha, beta)?;
    let profile = SupersolutionProfile::new(a.mode, sigma, alpha, beta, ae, be, w0, a.horizon)?;
    let functional = match a.mode {
        ProfileMode::SublinearExponential => None,
        _ => Some(smallness_functional(&profile, &engine, a.horizon)?),
    };
    let (pass, max_violation, margin) = match a.check {
        SupersolutionCheck::Profile => (functional.is_none_or(f64::is_finite), None, None),
        SupersolutionCheck::Inequality => {
            let grid = parasys::mild::time_grid(a.horizon, 64, 6.0)?;
            let rep = verify_profile(&profile, &engine, &grid, a.tol)?;
            (rep.pass, Some(rep.max_violation), None)
        }
        SupersolutionCheck::Smallness => {
            let which = match a.mode {
                ProfileMode::PureSemigroup => SmallnessCondition::Cond33,
                _ => SmallnessCondition::Cond31,
            };
            let big_w = majorant_initial_data(&u0, &v0, r1, r2)?;
            let rep = check_smallness_condition(&big_w, &spec, r1, r2, a.rho, a.gamma, which)?;
            (rep.pass, None, Some(rep.margin))
        }
    };
    let report = json!({
        "mode": a.mode.to_string(),
        "sigma": sigma,
        "alpha": alpha,
        "beta": beta,
        "a_exp": ae,
        "b_exp": be,
        "functional_value": functional,
        "pass": pass,
        "max_violation": max_violation,
        "tol": a.tol,
        "margin": margin,
    });
    write_json(cli.out.as_deref(), "supersolution.json", &report)?;
    Ok(if pass { 0 } else { 2 })
}

/// Reads a trace written by the csv emitter.
pub fn read_trace(path: &Path) -> anyhow::Result<Vec<TracePoint>> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if !header.starts_with("t,dt,") {
        bail!(ConfigError(format!("{} is not a trace file", path.display())));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let v: Vec<f64> = l
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
            if v.len() < 3 {
                bail!(ConfigError(format!("{}: short row", path.display())));
            }
            Ok(TracePoint { t: v[0], dt: v[1], sup: v[2..].to_vec() })
        })
        .collect()
}

fn blowup(cli: &Cli, a: &BlowupArgs) -> anyhow::Result<i32> {
    let window = a.window.as_ref().map(|w| (w[0], w[1]));
    if let Some(path) = &a.trace {
        if a.r.is_some() {
            bail!(ConfigError("windowed norms need field snapshots; use --config".into()));
        }
        let spec = a.system.spec()?;
        let trace = read_trace(path)?;
        let k = trace.first().map_or(0, |p| p.sup.len());
        let run = SolveResult {
            status: SolveStatus::BlowUpSuspected,
            t_grid: Vec::new(),
            components: vec![Vec::new(); k],
            residual: None,
            iterations: trace.len(),
            last_time: trace.last().map_or(0.0, |p| p.t),
            trace,
            snapshots: Vec::new(),
            max_undershoot: 0.0,
            monotone_violation: 0.0,
            notes: Vec::new(),
        };
        let theta = theory_exponents(&spec)?;
        let time = estimate_blowup_time(&run, theta[0], 0)?;
        let fit = fit_rate(&run, &spec, &time, window, a.dt_min)?;
        write_json(cli.out.as_deref(), "blowup.json", &json!({ "time": time, "fit": fit }))?;
        return Ok(0);
    }
    let mut cfg = load_config(cli)?;
    let mut bc = cfg.analysis.blowup.clone().unwrap_or_default();
    if a.r.is_some() {
        bc.r_norm = a.r;
    }
    if window.is_some() {
        bc.window = window;
    }
    cfg.analysis.blowup = Some(BlowupConfig { ..bc });
    cfg.analysis.supersolution = None;
    if cfg.solver.dt.is_none() {
        cfg.solver.dt = Some(DtController::for_horizon(cfg.solver.horizon));
    }
    if cfg.output.formats.is_empty() {
        cfg.output.formats = vec![Format::Json, Format::Csv, Format::Plotdata];
    }
    finish(cli, &cfg)
}
