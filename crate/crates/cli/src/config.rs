//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use parasys::exponents::{DomainKind, SystemSpec};
use parasys::fields::{sample_function, Domain, Field, InitialDatum};
use parasys::mild::{DtController, PicardSettings};
use parasys::semigroup::{Method, SemigroupEngine};
use parasys::supersolution::{CalibrationSettings, SmallnessCondition};

/// Marks errors caused by the configuration rather than by the numerics.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid configuration: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn invalid<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(ConfigError(msg.into()).into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSpec,
    pub domain: DomainConfig,
    /// One initial datum per component.
    #[serde(default)]
    pub data: Vec<DataSource>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Echoed into reports; no stage of the pipeline draws random numbers.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub half_width: f64,
    pub points: usize,
    #[serde(default)]
    pub method: Method,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileRef {
    pub file: PathBuf,
}

/// A binary field file, a structured descriptor, or the compact text syntax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataSource {
    File(FileRef),
    Datum(InitialDatum),
    Text(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    #[default]
    Picard,
    Direct,
    Transform,
    /// Picard against direct splitting, or the transformed solve against
    /// direct splitting for the exponential system.
    Compare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub mode: SolverMode,
    pub horizon: f64,
    pub per_decade: usize,
    pub decades: f64,
    pub picard: PicardSettings,
    /// Step control for splitting runs; scaled from the horizon when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<DtController>,
    /// Agreement required between the two solvers in `compare` mode.
    pub compare_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            mode: SolverMode::Picard,
            horizon: 1.0,
            per_decade: 64,
            decades: 6.0,
            picard: PicardSettings::default(),
            dt: None,
            compare_tol: 1e-3,
        }
    }
}

impl SolverConfig {
    pub fn controller(&self) -> DtController {
        self.dt.unwrap_or_else(|| DtController::for_horizon(self.horizon))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    Bounded,
    Blowup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Integrability indices `r_i` of the data.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub supersolution: Option<SupersolutionConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blowup: Option<BlowupConfig>,
    /// Check the power-law envelope `u <= C(|x| + t^2)^{-N/r_i} + C`.
    pub envelope: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expect: Option<Expectation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupersolutionConfig {
    pub condition: SmallnessCondition,
    /// Index with `1 <= r <= min(r1, r2)` fixing the weights `r_i / r`.
    pub r: f64,
    pub rho: f64,
    pub t1: f64,
    /// Use this `gamma` instead of calibrating.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Replace the data by the threshold data for `threshold_fraction * gamma`,
    /// keeping the shape of the configured data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_fraction: Option<f64>,
    #[serde(default)]
    pub calibration: CalibrationSettings,
    #[serde(default = "default_tol_cmp")]
    pub tol_cmp: f64,
}

fn default_tol_cmp() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlowupConfig {
    /// Fit window in `(T - t) / T`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<(f64, f64)>,
    /// Index of the windowed uniformly local norms; none skips them.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_norm: Option<f64>,
    /// Repeat the run with all step bounds halved.
    pub rerun: bool,
    pub snapshot_growth: f64,
}

impl Default for BlowupConfig {
    fn default() -> Self {
        BlowupConfig { window: None, r_norm: None, rerun: true, snapshot_growth: 1.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanConfig {
    pub lattice: Vec<f64>,
    pub pstars: Vec<f64>,
    pub grid_points: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            lattice: vec![0.0, 0.5, 1.0, 1.5, 2.0, 3.0],
            pstars: vec![3.0, 2.0, 5.0 / 3.0, 1.5],
            grid_points: 257,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
    Plotdata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    pub formats: Vec<Format>,
    pub stem: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: None, formats: vec![Format::Json], stem: "report".into() }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Reads and validates a config file. Relative data files are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = RunConfig::from_toml(&text).with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for d in &mut cfg.data {
            if let DataSource::File(f) = d {
                if f.file.is_relative() {
                    f.file = base.join(&f.file);
                }
                if !f.file.exists() {
                    return invalid(format!("data file {} does not exist", f.file.display()));
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.system.validate().map_err(|e| ConfigError(e.to_string()))?;
        let k = self.system.components();
        if !self.data.is_empty() && self.data.len() != k {
            return invalid(format!("{} data entries for a {k}-component system", self.data.len()));
        }
        let s = &self.solver;
        if !(s.horizon > 0.0 && s.horizon.is_finite()) {
            return invalid("solver.horizon must be positive and finite");
        }
        if !(s.picard.tol_solve > 0.0 && s.compare_tol > 0.0 && s.decades > 0.0) || s.per_decade == 0 {
            return invalid("solver tolerances and grid sizes must be positive");
        }
        if let Some(r) = &self.analysis.r {
            if r.len() != k || r.iter().any(|x| !(*x >= 1.0)) {
                return invalid(format!("analysis.r needs {k} indices >= 1"));
            }
        }
        if let Some(sup) = &self.analysis.supersolution {
            if self.analysis.r.is_none() || k != 2 {
                return invalid("the supersolution check needs a two-component system and analysis.r");
            }
            if !(sup.rho > 0.0 && sup.t1 > 0.0 && sup.tol_cmp > 0.0) {
                return invalid("supersolution rho, t1 and tol_cmp must be positive");
            }
            if let Some(g) = sup.gamma {
                if !(g > 0.0) {
                    return invalid("supersolution.gamma must be positive");
                }
            }
            if let Some(f) = sup.threshold_fraction {
                if !(f > 0.0) {
                    return invalid("supersolution.threshold_fraction must be positive");
                }
            }
        }
        if let Some(b) = &self.analysis.blowup {
            if !(b.snapshot_growth > 1.0) {
                return invalid("blowup.snapshot_growth must exceed 1");
            }
            if let Some((lo, hi)) = b.window {
                if !(0.0 < lo && lo < hi) {
                    return invalid("blowup.window must satisfy 0 < lo < hi");
                }
            }
            if b.r_norm.is_some() && k != 2 {
                return invalid("windowed norms are available for two-component systems");
            }
        }
        if self.domain.points < 3 || !(self.domain.half_width > 0.0) {
            return invalid("domain needs at least 3 points per axis and a positive half-width");
        }
        if self.data.is_empty() && self.analysis.scan.is_none() {
            return invalid("no initial data given");
        }
        self.build_domain()?
            .validate_diffusion_length(s.horizon)
            .map_err(|e| ConfigError(e.to_string()))?;
        Ok(())
    }

    pub fn build_domain(&self) -> anyhow::Result<Arc<Domain>> {
        // a box stands in for every unbounded domain kind
        let truncated = self.system.domain_kind != DomainKind::Box;
        let d = Domain::centered(self.system.dim, self.domain.half_width, self.domain.points)
            .map_err(|e| ConfigError(e.to_string()))?
            .with_truncation(truncated);
        Ok(Arc::new(d))
    }

    pub fn engine(&self) -> anyhow::Result<SemigroupEngine> {
        Ok(SemigroupEngine::new(self.build_domain()?, self.domain.method))
    }

    pub fn sample_data(&self, domain: &Arc<Domain>) -> anyhow::Result<Vec<Field>> {
        self.data.iter().map(|d| d.sample(domain)).collect()
    }
}

impl DataSource {
    pub fn sample(&self, domain: &Arc<Domain>) -> anyhow::Result<Field> {
        match self {
            DataSource::Datum(d) => Ok(sample_function(domain, d)?),
            DataSource::Text(t) => Ok(sample_function(domain, &InitialDatum::parse(t)?)?),
            DataSource::File(f) => {
                let file = std::fs::File::open(&f.file)
                    .map_err(|e| ConfigError(format!("cannot open {}: {e}", f.file.display())))?;
                let field = Field::read_binary(std::io::BufReader::new(file))?;
                if field.domain().points() != domain.points()
                    || field.domain().lower() != domain.lower()
                    || field.domain().upper() != domain.upper()
                {
                    bail!(ConfigError(format!("{} was sampled on a different grid", f.file.display())));
                }
                Field::from_values(domain.clone(), field.into_values(), true).map_err(Into::into)
            }
        }
    }
}
