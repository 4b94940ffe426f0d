//! Box domains, sampled fields and elementary pointwise operations.
//!
//! A [`Domain`] is a tensor grid on an axis-aligned box, boundary points
//! included. A [`Field`] stores one value per grid point in row-major order
//! (last axis fastest). Dirichlet-zero boundary values are stored
//! explicitly so that every field can be written out as-is.

use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};

/// Relative tolerance separating floating-point dust from genuine sign
/// violations: `eps_grid = GRID_TOL_REL * max |f|`.
pub const GRID_TOL_REL: f64 = 1e-12;

/// Axis-aligned box `[a_1,b_1] x ... x [a_N,b_N]` sampled on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DomainRepr", into = "DomainRepr")]
pub struct Domain {
    lower: Vec<f64>,
    upper: Vec<f64>,
    points: Vec<usize>,
    truncated: bool,
}

#[derive(Serialize, Deserialize)]
struct DomainRepr {
    lower: Vec<f64>,
    upper: Vec<f64>,
    points: Vec<usize>,
    #[serde(default)]
    truncated: bool,
}

impl TryFrom<DomainRepr> for Domain {
    type Error = Error;
    fn try_from(r: DomainRepr) -> Result<Self> {
        let bounds: Vec<(f64, f64)> = r.lower.iter().copied().zip(r.upper.iter().copied()).collect();
        if r.lower.len() != r.upper.len() {
            bail!(Config, "lower/upper bound lists differ in length");
        }
        Ok(Domain::new(&bounds, &r.points)?.with_truncation(r.truncated))
    }
}

impl From<Domain> for DomainRepr {
    fn from(d: Domain) -> Self {
        DomainRepr { lower: d.lower, upper: d.upper, points: d.points, truncated: d.truncated }
    }
}

impl Domain {
    pub fn new(bounds: &[(f64, f64)], points: &[usize]) -> Result<Self> {
        let dim = bounds.len();
        if !(1..=3).contains(&dim) {
            bail!(Config, "dimension {dim} unsupported (1, 2 or 3)");
        }
        if points.len() != dim {
            bail!(Config, "expected {dim} per-axis point counts, got {}", points.len());
        }
        for (axis, &(a, b)) in bounds.iter().enumerate() {
            if !(a.is_finite() && b.is_finite() && a < b) {
                bail!(Config, "axis {axis}: need finite bounds with a < b, got [{a}, {b}]");
            }
            if points[axis] < 3 {
                bail!(Config, "axis {axis}: need at least 3 points, got {}", points[axis]);
            }
        }
        Ok(Domain {
            lower: bounds.iter().map(|b| b.0).collect(),
            upper: bounds.iter().map(|b| b.1).collect(),
            points: points.to_vec(),
            truncated: false,
        })
    }

    /// The cube `[-half_width, half_width]^dim` with `n` points per axis.
    pub fn centered(dim: usize, half_width: f64, n: usize) -> Result<Self> {
        Domain::new(&vec![(-half_width, half_width); dim], &vec![n; dim])
    }

    /// Marks the box as a stand-in for the whole space.
    pub fn with_truncation(mut self, truncated: bool) -> Self {
        self.truncated = truncated;
        self
    }

    pub fn dim(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn is_truncated(&self) -> bool {
        self.truncated
    }

    pub fn length(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.length(axis) / (self.points[axis] - 1) as f64
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).fold(f64::INFINITY, f64::min)
    }

    /// Volume attributed to each grid point.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }

    /// Total number of grid points, boundary included.
    pub fn len(&self) -> usize {
        self.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Measure of the grid, `len() * cell_volume()`.
    pub fn measure(&self) -> f64 {
        self.len() as f64 * self.cell_volume()
    }

    pub fn diameter(&self) -> f64 {
        (0..self.dim()).map(|a| self.length(a).powi(2)).sum::<f64>().sqrt()
    }

    /// Smallest distance from the box center to a wall.
    pub fn half_width(&self) -> f64 {
        (0..self.dim()).map(|a| 0.5 * self.length(a)).fold(f64::INFINITY, f64::min)
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.dim()];
        for axis in (0..self.dim().saturating_sub(1)).rev() {
            strides[axis] = strides[axis + 1] * self.points[axis + 1];
        }
        strides
    }

    /// Per-axis grid indices of a flat index.
    pub fn multi_index(&self, mut flat: usize) -> [usize; 3] {
        let mut idx = [0usize; 3];
        for axis in (0..self.dim()).rev() {
            idx[axis] = flat % self.points[axis];
            flat /= self.points[axis];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.points).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    /// Physical coordinates of a flat index; unused axes are zero.
    pub fn coord(&self, flat: usize) -> [f64; 3] {
        let idx = self.multi_index(flat);
        let mut x = [0.0; 3];
        for axis in 0..self.dim() {
            x[axis] = self.lower[axis] + idx[axis] as f64 * self.spacing(axis);
        }
        x
    }

    pub fn is_boundary(&self, flat: usize) -> bool {
        let idx = self.multi_index(flat);
        (0..self.dim()).any(|a| idx[a] == 0 || idx[a] + 1 == self.points[a])
    }

    /// Interior points per axis.
    pub fn interior_shape(&self) -> Vec<usize> {
        self.points.iter().map(|n| n - 2).collect()
    }

    pub fn interior_len(&self) -> usize {
        self.interior_shape().iter().product()
    }

    /// Flat indices of interior points in row-major interior order.
    pub fn interior_indices(&self) -> Vec<usize> {
        let shape = self.interior_shape();
        let total: usize = shape.iter().product();
        let mut out = Vec::with_capacity(total);
        let mut idx = [1usize; 3];
        for _ in 0..total {
            out.push(self.flat_index(&idx[..self.dim()]));
            for axis in (0..self.dim()).rev() {
                idx[axis] += 1;
                if idx[axis] + 1 < self.points[axis] {
                    break;
                }
                idx[axis] = 1;
            }
        }
        out
    }

    /// Rejects truncated boxes too small for the diffusion length of `t_max`.
    pub fn validate_diffusion_length(&self, t_max: f64) -> Result<()> {
        if self.truncated {
            let needed = 4.0 * t_max.max(0.0).sqrt();
            if self.half_width() < needed {
                bail!(
                    Config,
                    "truncated box half-width {} is below 4*sqrt(t_max) = {needed}",
                    self.half_width()
                );
            }
        }
        Ok(())
    }

    fn distance_to(&self, flat: usize, center: &[f64]) -> f64 {
        let x = self.coord(flat);
        (0..self.dim())
            .map(|a| {
                let c = center.get(a).copied().unwrap_or(0.0);
                (x[a] - c).powi(2)
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Closed-form initial data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialDatum {
    Constant {
        value: f64,
    },
    /// `amplitude * exp(-|x-c|^2 / (2 width^2))`.
    GaussianBump {
        amplitude: f64,
        width: f64,
        #[serde(default)]
        center: Vec<f64>,
    },
    /// `d |x-c|^{-N/r}`, capped at its value one grid spacing from `c`.
    /// An optional `envelope` multiplies by `exp(-|x-c|^2 / (2 envelope^2))`,
    /// which keeps the datum below the pure power law.
    PowerLaw {
        d: f64,
        r: f64,
        #[serde(default)]
        center: Vec<f64>,
        #[serde(default)]
        envelope: Option<f64>,
    },
    /// `height` on the open ball `B(c, radius)`, zero elsewhere.
    Indicator {
        height: f64,
        radius: f64,
        #[serde(default)]
        center: Vec<f64>,
    },
    Sum {
        terms: Vec<InitialDatum>,
    },
}

impl InitialDatum {
    /// Parses the compact command-line syntax, e.g.
    /// `gaussian(amplitude=1,width=0.5)+constant(value=0.1)`.
    ///
    /// Kinds: `constant`, `gaussian`, `power_law`, `indicator`. Centers are
    /// given as `center=0;0`.
    pub fn parse(text: &str) -> Result<Self> {
        let terms: Vec<InitialDatum> = split_top_level(text, '+')
            .into_iter()
            .map(|t| parse_term(t.trim()))
            .collect::<Result<_>>()?;
        match terms.len() {
            0 => bail!(Config, "empty initial-data descriptor"),
            1 => Ok(terms.into_iter().next().unwrap()),
            _ => Ok(InitialDatum::Sum { terms }),
        }
    }

    fn value_at(&self, domain: &Domain, flat: usize) -> f64 {
        match self {
            InitialDatum::Constant { value } => *value,
            InitialDatum::GaussianBump { amplitude, width, center } => {
                let d = domain.distance_to(flat, center);
                amplitude * (-d * d / (2.0 * width * width)).exp()
            }
            InitialDatum::PowerLaw { d, r, center, envelope } => {
                let n = domain.dim() as f64;
                let dist = domain.distance_to(flat, center).max(domain.min_spacing());
                let mut v = d * dist.powf(-n / r);
                if let Some(w) = envelope {
                    let raw = domain.distance_to(flat, center);
                    v *= (-raw * raw / (2.0 * w * w)).exp();
                }
                v
            }
            InitialDatum::Indicator { height, radius, center } => {
                if domain.distance_to(flat, center) < *radius {
                    *height
                } else {
                    0.0
                }
            }
            InitialDatum::Sum { terms } => terms.iter().map(|t| t.value_at(domain, flat)).sum(),
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        let check_center = |c: &Vec<f64>| -> Result<()> {
            if !c.is_empty() && c.len() != dim {
                bail!(Config, "center has {} coordinates, domain has dimension {dim}", c.len());
            }
            Ok(())
        };
        match self {
            InitialDatum::Constant { value } => {
                if *value < 0.0 {
                    bail!(Domain, "negative constant {value} for nonnegative datum");
                }
            }
            InitialDatum::GaussianBump { amplitude, width, center } => {
                check_center(center)?;
                if *amplitude < 0.0 {
                    bail!(Domain, "negative gaussian amplitude {amplitude}");
                }
                if *width <= 0.0 {
                    bail!(Config, "gaussian width must be positive, got {width}");
                }
            }
            InitialDatum::PowerLaw { d, r, center, envelope } => {
                check_center(center)?;
                if *d < 0.0 {
                    bail!(Domain, "negative power-law amplitude {d}");
                }
                if *r < 1.0 {
                    bail!(Config, "power-law index r must be >= 1, got {r}");
                }
                if envelope.is_some_and(|w| w <= 0.0) {
                    bail!(Config, "power-law envelope must be positive");
                }
            }
            InitialDatum::Indicator { height, radius, center } => {
                check_center(center)?;
                if *height < 0.0 {
                    bail!(Domain, "negative indicator height {height}");
                }
                if *radius <= 0.0 {
                    bail!(Config, "indicator radius must be positive, got {radius}");
                }
            }
            InitialDatum::Sum { terms } => {
                for t in terms {
                    t.validate(dim)?;
                }
            }
        }
        Ok(())
    }
}

fn split_top_level(text: &str, sep: char) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in text.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            c if c == sep && depth == 0 => {
                out.push(&text[start..i]);
                start = i + c.len_utf8();
            }
            _ => {}
        }
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

fn parse_term(term: &str) -> Result<InitialDatum> {
    let (kind, args) = match term.find('(') {
        Some(open) if term.ends_with(')') => (&term[..open], &term[open + 1..term.len() - 1]),
        _ => bail!(Config, "malformed descriptor term `{term}`"),
    };
    let mut kv = std::collections::BTreeMap::new();
    for pair in split_top_level(args, ',') {
        let pair = pair.trim();
        if pair.is_empty() {
            continue;
        }
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value in `{pair}`")))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let num = |kv: &std::collections::BTreeMap<String, String>, key: &str| -> Result<f64> {
        kv.get(key)
            .ok_or_else(|| Error::Config(format!("`{kind}` needs `{key}`")))?
            .parse::<f64>()
            .map_err(|e| Error::Config(format!("`{key}`: {e}")))
    };
    let center = |kv: &std::collections::BTreeMap<String, String>| -> Result<Vec<f64>> {
        match kv.get("center") {
            None => Ok(Vec::new()),
            Some(c) => c
                .split(';')
                .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Config(format!("center: {e}"))))
                .collect(),
        }
    };
    let allowed: &[&str] = match kind.trim() {
        "constant" => &["value"],
        "gaussian" | "gaussian_bump" => &["amplitude", "width", "center"],
        "power_law" => &["d", "r", "center", "envelope"],
        "indicator" => &["height", "radius", "center"],
        other => bail!(Config, "unknown initial-data descriptor `{other}`"),
    };
    if let Some(bad) = kv.keys().find(|k| !allowed.contains(&k.as_str())) {
        bail!(Config, "`{kind}` does not take `{bad}`");
    }
    Ok(match kind.trim() {
        "constant" => InitialDatum::Constant { value: num(&kv, "value")? },
        "gaussian" | "gaussian_bump" => InitialDatum::GaussianBump {
            amplitude: num(&kv, "amplitude")?,
            width: num(&kv, "width")?,
            center: center(&kv)?,
        },
        "power_law" => InitialDatum::PowerLaw {
            d: num(&kv, "d")?,
            r: num(&kv, "r")?,
            center: center(&kv)?,
            envelope: if kv.contains_key("envelope") { Some(num(&kv, "envelope")?) } else { None },
        },
        _ => InitialDatum::Indicator {
            height: num(&kv, "height")?,
            radius: num(&kv, "radius")?,
            center: center(&kv)?,
        },
    })
}

/// Scalar maps applied pointwise by [`Field::map`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PointwiseMap {
    Identity,
    /// `x -> x^sigma`; needs a nonnegative field unless `sigma` is an integer.
    Power(f64),
    /// `x -> c x`.
    Scale(f64),
    /// `x -> e^x`; the boundary trace becomes `e^{boundary}`.
    Exp,
    /// `x -> ln x`; needs strictly positive values everywhere.
    Log,
}

/// A sampled function on a [`Domain`].
///
/// Fields are immutable; every operation returns a new field.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    domain: Arc<Domain>,
    values: Vec<f64>,
    nonneg: bool,
    boundary_value: f64,
    blown_up: bool,
}

impl Field {
    pub fn zeros(domain: Arc<Domain>) -> Self {
        let n = domain.len();
        Field { domain, values: vec![0.0; n], nonneg: true, boundary_value: 0.0, blown_up: false }
    }

    /// Builds a field from raw values. Boundary values are forced to zero;
    /// non-finite values are rejected.
    pub fn from_values(domain: Arc<Domain>, mut values: Vec<f64>, nonneg: bool) -> Result<Self> {
        if values.len() != domain.len() {
            bail!(Config, "expected {} values, got {}", domain.len(), values.len());
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            bail!(BlownUp, "non-finite value {} at grid index {i}", values[i]);
        }
        for (i, v) in values.iter_mut().enumerate() {
            if domain.is_boundary(i) {
                *v = 0.0;
            }
        }
        let field = Field { domain, values, nonneg, boundary_value: 0.0, blown_up: false };
        if nonneg {
            field.check_nonneg()?;
        }
        Ok(field)
    }

    /// Values sampled from `f` at every interior point; boundary set to zero.
    pub fn from_fn(domain: Arc<Domain>, nonneg: bool, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let dim = domain.dim();
        let values = (0..domain.len())
            .map(|i| if domain.is_boundary(i) { 0.0 } else { f(&domain.coord(i)[..dim]) })
            .collect();
        Field::from_values(domain, values, nonneg)
    }

    /// Interior values on a zero boundary, already checked by the caller.
    pub(crate) fn from_interior_unchecked(domain: Arc<Domain>, values: Vec<f64>, nonneg: bool) -> Self {
        Field { domain, values, nonneg, boundary_value: 0.0, blown_up: false }
    }

    /// A field whose boundary trace is the constant `boundary_value` instead
    /// of zero. Used for transformed variables and drift-shifted profiles.
    pub fn with_boundary_value(domain: Arc<Domain>, mut values: Vec<f64>, boundary_value: f64) -> Result<Self> {
        if values.len() != domain.len() {
            bail!(Config, "expected {} values, got {}", domain.len(), values.len());
        }
        if values.iter().any(|v| !v.is_finite()) || !boundary_value.is_finite() {
            bail!(BlownUp, "non-finite values in boundary-valued field");
        }
        for (i, v) in values.iter_mut().enumerate() {
            if domain.is_boundary(i) {
                *v = boundary_value;
            }
        }
        let nonneg = values.iter().all(|&v| v >= 0.0);
        Ok(Field { domain, values, nonneg, boundary_value, blown_up: false })
    }

    /// A sentinel for a field whose values overflowed.
    pub fn blown_up(domain: Arc<Domain>) -> Self {
        let mut f = Field::zeros(domain);
        f.blown_up = true;
        f
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_nonneg(&self) -> bool {
        self.nonneg
    }

    pub fn boundary_value(&self) -> f64 {
        self.boundary_value
    }

    pub fn is_blown_up(&self) -> bool {
        self.blown_up
    }

    /// `eps_grid` for this field.
    pub fn grid_tolerance(&self) -> f64 {
        GRID_TOL_REL * self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    fn check_nonneg(&self) -> Result<()> {
        let tol = self.grid_tolerance();
        if let Some((i, v)) = self.values.iter().enumerate().find(|(_, &v)| v < -tol) {
            bail!(Domain, "value {v} at grid index {i} violates nonnegativity (tolerance {tol:e})");
        }
        Ok(())
    }

    /// `max |f|`, or `+inf` for a blown-up field.
    pub fn linf_norm(&self) -> f64 {
        if self.blown_up {
            return f64::INFINITY;
        }
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Maximum over interior points only.
    pub fn interior_max(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.domain.is_boundary(*i))
            .fold(f64::NEG_INFINITY, |m, (_, &v)| m.max(v))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn map(&self, map: PointwiseMap) -> Result<Field> {
        match map {
            PointwiseMap::Identity => Ok(self.clone()),
            PointwiseMap::Scale(c) => Ok(Field {
                domain: self.domain.clone(),
                values: self.values.iter().map(|v| c * v).collect(),
                nonneg: self.nonneg && c >= 0.0,
                boundary_value: c * self.boundary_value,
                blown_up: self.blown_up,
            }),
            PointwiseMap::Power(sigma) => {
                let integer = sigma.fract() == 0.0;
                let tol = self.grid_tolerance();
                let mut values = Vec::with_capacity(self.values.len());
                for (i, &v) in self.values.iter().enumerate() {
                    let x = if v < 0.0 && v >= -tol { 0.0 } else { v };
                    if x < 0.0 && !integer {
                        bail!(Domain, "fractional power {sigma} of negative value {x} at grid index {i}");
                    }
                    values.push(if self.domain.is_boundary(i) && self.boundary_value == 0.0 {
                        0.0
                    } else {
                        x.powf(sigma)
                    });
                }
                if values.iter().any(|v| !v.is_finite()) {
                    bail!(BlownUp, "power {sigma} overflowed");
                }
                let boundary_value = if self.boundary_value == 0.0 { 0.0 } else { self.boundary_value.powf(sigma) };
                Ok(Field {
                    domain: self.domain.clone(),
                    nonneg: values.iter().all(|&v| v >= 0.0),
                    values,
                    boundary_value,
                    blown_up: false,
                })
            }
            PointwiseMap::Exp => {
                let values: Vec<f64> = self.values.iter().map(|v| v.exp()).collect();
                if values.iter().any(|v| !v.is_finite()) {
                    bail!(BlownUp, "exponential overflowed");
                }
                Ok(Field {
                    domain: self.domain.clone(),
                    values,
                    nonneg: true,
                    boundary_value: self.boundary_value.exp(),
                    blown_up: false,
                })
            }
            PointwiseMap::Log => {
                if let Some(i) = self.values.iter().position(|&v| v <= 0.0) {
                    bail!(Domain, "logarithm of non-positive value {} at grid index {i}", self.values[i]);
                }
                let values: Vec<f64> = self.values.iter().map(|v| v.ln()).collect();
                Ok(Field {
                    domain: self.domain.clone(),
                    nonneg: values.iter().all(|&v| v >= 0.0),
                    values,
                    boundary_value: self.boundary_value.ln(),
                    blown_up: false,
                })
            }
        }
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &Field, b: f64) -> Result<Field> {
        if self.domain != other.domain {
            bail!(Config, "cannot combine fields on different domains");
        }
        let values: Vec<f64> = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        Ok(Field {
            domain: self.domain.clone(),
            nonneg: values.iter().all(|&v| v >= 0.0),
            values,
            boundary_value: a * self.boundary_value + b * other.boundary_value,
            blown_up: self.blown_up || other.blown_up,
        })
    }

    /// Adds a spatial constant to every point, boundary included.
    pub fn shift(&self, c: f64) -> Result<Field> {
        let values = self.values.iter().map(|v| v + c).collect();
        Field::with_boundary_value(self.domain.clone(), values, self.boundary_value + c)
    }

    /// Pointwise maximum difference `max (self - other)`, over interior points.
    pub fn max_excess_over(&self, other: &Field) -> (f64, usize) {
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, (a, b)) in self.values.iter().zip(&other.values).enumerate() {
            if self.domain.is_boundary(i) {
                continue;
            }
            if a - b > best.0 {
                best = (a - b, i);
            }
        }
        best
    }

    /// Clips negative dust to zero, returning the largest clipped magnitude.
    pub fn clip_negative(&mut self) -> f64 {
        let mut worst = 0.0f64;
        for v in &mut self.values {
            if *v < 0.0 {
                worst = worst.max(-*v);
                *v = 0.0;
            }
        }
        self.nonneg = true;
        worst
    }

    /// Binary layout (little endian): `u64 dim`, `dim x u64` point counts,
    /// `dim x (f64 lower, f64 upper)`, then the values as row-major `f64`.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = &self.domain;
        w.write_all(&(d.dim() as u64).to_le_bytes())?;
        for &n in d.points() {
            w.write_all(&(n as u64).to_le_bytes())?;
        }
        for axis in 0..d.dim() {
            w.write_all(&d.lower[axis].to_le_bytes())?;
            w.write_all(&d.upper[axis].to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Field> {
        let io = |e: std::io::Error| Error::Config(format!("reading field: {e}"));
        let mut buf8 = [0u8; 8];
        let mut read_u64 = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut buf8).map_err(io)?;
            Ok(u64::from_le_bytes(buf8))
        };
        let dim = read_u64(&mut r)? as usize;
        if !(1..=3).contains(&dim) {
            bail!(Config, "field header has dimension {dim}");
        }
        let points: Vec<usize> = (0..dim).map(|_| read_u64(&mut r).map(|n| n as usize)).collect::<Result<_>>()?;
        let mut bounds = Vec::with_capacity(dim);
        for _ in 0..dim {
            let lo = f64::from_bits(read_u64(&mut r)?);
            let hi = f64::from_bits(read_u64(&mut r)?);
            bounds.push((lo, hi));
        }
        let domain = Arc::new(Domain::new(&bounds, &points)?);
        let mut values = Vec::with_capacity(domain.len());
        for _ in 0..domain.len() {
            values.push(f64::from_bits(read_u64(&mut r)?));
        }
        let nonneg = values.iter().all(|&v| v >= 0.0);
        let boundary_zero = (0..domain.len()).all(|i| !domain.is_boundary(i) || values[i] == 0.0);
        if boundary_zero {
            Field::from_values(domain, values, nonneg)
        } else {
            let b = values[0];
            Field::with_boundary_value(domain, values, b)
        }
    }

    /// CSV with one row per grid point: coordinates, then the value.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let names = ["x", "y", "z"];
        let dim = self.domain.dim();
        writeln!(w, "{},value", names[..dim].join(","))?;
        for (i, v) in self.values.iter().enumerate() {
            let x = self.domain.coord(i);
            let coords: Vec<String> = x[..dim].iter().map(|c| format!("{c:.12e}")).collect();
            writeln!(w, "{},{:.17e}", coords.join(","), v)?;
        }
        Ok(())
    }
}

/// Samples a closed-form datum on the grid. The result is nonnegative with
/// a zero boundary trace.
pub fn sample_function(domain: &Arc<Domain>, datum: &InitialDatum) -> Result<Field> {
    datum.validate(domain.dim())?;
    let values = (0..domain.len())
        .map(|i| if domain.is_boundary(i) { 0.0 } else { datum.value_at(domain, i) })
        .collect();
    Field::from_values(domain.clone(), values, true)
}
