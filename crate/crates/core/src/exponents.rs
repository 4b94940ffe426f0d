//! Exponent algebra and regime classification for the coupled systems.

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};

/// The nonlinear coupling under study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum Nonlinearity {
    /// `u_t = Lu + v^p`, `v_t = Lv + u^q`.
    WeaklyCoupled { p: f64, q: f64 },
    /// `(u_i)_t = L u_i + u_{i+1}^{p_i}`, indices cyclic.
    KComponent { p: Vec<f64> },
    /// `u_t = Lu + u^{p1} v^{p2}`, `v_t = Lv + u^{q1} v^{q2}`.
    StrongPower { p1: f64, p2: f64, q1: f64, q2: f64 },
    /// `u_t = Lu + e^{p1 u + p2 v}`, `v_t = Lv + e^{q1 u + q2 v}`.
    StrongExp { p1: f64, p2: f64, q1: f64, q2: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    #[default]
    WholeSpace,
    HalfSpace,
    Exterior,
    Box,
}

impl std::str::FromStr for DomainKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "whole_space" | "whole-space" => DomainKind::WholeSpace,
            "half_space" | "half-space" => DomainKind::HalfSpace,
            "exterior" => DomainKind::Exterior,
            "box" => DomainKind::Box,
            other => bail!(Config, "unknown domain kind `{other}`"),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub nonlinearity: Nonlinearity,
    pub dim: usize,
    #[serde(default)]
    pub domain_kind: DomainKind,
}

impl SystemSpec {
    pub fn new(nonlinearity: Nonlinearity, dim: usize, domain_kind: DomainKind) -> Result<Self> {
        let spec = SystemSpec { nonlinearity, dim, domain_kind };
        spec.validate()?;
        Ok(spec)
    }

    pub fn weakly_coupled(p: f64, q: f64, dim: usize) -> Result<Self> {
        SystemSpec::new(Nonlinearity::WeaklyCoupled { p, q }, dim, DomainKind::WholeSpace)
    }

    pub fn strong_power(p1: f64, p2: f64, q1: f64, q2: f64, dim: usize) -> Result<Self> {
        SystemSpec::new(Nonlinearity::StrongPower { p1, p2, q1, q2 }, dim, DomainKind::WholeSpace)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            bail!(Config, "dimension must be at least 1");
        }
        let all: Vec<f64> = match &self.nonlinearity {
            Nonlinearity::WeaklyCoupled { p, q } => vec![*p, *q],
            Nonlinearity::KComponent { p } => {
                if p.is_empty() {
                    bail!(Config, "k-component system needs at least one exponent");
                }
                p.clone()
            }
            Nonlinearity::StrongPower { p1, p2, q1, q2 } | Nonlinearity::StrongExp { p1, p2, q1, q2 } => {
                vec![*p1, *p2, *q1, *q2]
            }
        };
        if let Some(e) = all.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
            bail!(Domain, "exponents must be finite and nonnegative, got {e}");
        }
        Ok(())
    }

    /// Number of unknowns.
    pub fn components(&self) -> usize {
        match &self.nonlinearity {
            Nonlinearity::KComponent { p } => p.len(),
            _ => 2,
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self.nonlinearity {
            Nonlinearity::WeaklyCoupled { .. } => "weakly_coupled",
            Nonlinearity::KComponent { .. } => "k_component",
            Nonlinearity::StrongPower { .. } => "strong_power",
            Nonlinearity::StrongExp { .. } => "strong_exp",
        }
    }

    /// The system with the two unknowns exchanged.
    pub fn swapped(&self) -> SystemSpec {
        let nonlinearity = match &self.nonlinearity {
            Nonlinearity::WeaklyCoupled { p, q } => Nonlinearity::WeaklyCoupled { p: *q, q: *p },
            Nonlinearity::KComponent { p } => {
                let mut p = p.clone();
                p.rotate_left(1);
                Nonlinearity::KComponent { p }
            }
            Nonlinearity::StrongPower { p1, p2, q1, q2 } => {
                Nonlinearity::StrongPower { p1: *q2, p2: *q1, q1: *p2, q2: *p1 }
            }
            Nonlinearity::StrongExp { p1, p2, q1, q2 } => {
                Nonlinearity::StrongExp { p1: *q2, p2: *q1, q1: *p2, q2: *p1 }
            }
        };
        SystemSpec { nonlinearity, ..self.clone() }
    }

    /// Power exponents `(p1, p2, q1, q2)` of the two-component system seen
    /// as a strongly coupled power system. For the exponential system these
    /// are the exponents satisfied by `e^u`, `e^v` once the gradient terms
    /// are dropped.
    pub fn as_strong_power(&self) -> Option<[f64; 4]> {
        match self.nonlinearity {
            Nonlinearity::WeaklyCoupled { p, q } => Some([0.0, p, q, 0.0]),
            Nonlinearity::StrongPower { p1, p2, q1, q2 } => Some([p1, p2, q1, q2]),
            Nonlinearity::StrongExp { p1, p2, q1, q2 } => Some([p1 + 1.0, p2, q1, q2 + 1.0]),
            Nonlinearity::KComponent { .. } => None,
        }
    }
}

fn check_indices(r: &[f64], expected: usize) -> Result<()> {
    if r.len() != expected {
        bail!(Config, "expected {expected} integrability indices, got {}", r.len());
    }
    if let Some(x) = r.iter().find(|x| !(x.is_finite() && **x >= 1.0)) {
        bail!(Domain, "integrability indices must lie in [1, inf), got {x}");
    }
    Ok(())
}

/// `P = N(p/r2 - 1/r1)`, `Q = N(q/r1 - 1/r2)` and their analogues.
///
/// For the k-component system `P` and `Q` are the maximum and minimum over
/// `i` of `N(p_i/r_{i+1} - 1/r_i)`.
pub fn compute_pq(spec: &SystemSpec, r: &[f64]) -> Result<(f64, f64)> {
    let n = spec.dim as f64;
    match &spec.nonlinearity {
        Nonlinearity::KComponent { p } => {
            check_indices(r, p.len())?;
            let k = p.len();
            let terms = (0..k).map(|i| n * (p[i] / r[(i + 1) % k] - 1.0 / r[i]));
            Ok(terms.fold((f64::NEG_INFINITY, f64::INFINITY), |(mx, mn), x| (mx.max(x), mn.min(x))))
        }
        _ => {
            check_indices(r, 2)?;
            let [p1, p2, q1, q2] = spec.as_strong_power().expect("two-component system");
            Ok((n * ((p1 - 1.0) / r[0] + p2 / r[1]), n * (q1 / r[0] + (q2 - 1.0) / r[1])))
        }
    }
}

/// Exponents of the scalar majorant `w_t = Lw + alpha w^A + beta w^B` built
/// from `U_i = u_i^{alpha_i}`.
pub fn compute_ab(spec: &SystemSpec, weights: &[f64]) -> Result<(f64, f64)> {
    if weights.len() != spec.components() {
        bail!(Config, "expected {} weights, got {}", spec.components(), weights.len());
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 1.0)) {
        bail!(Domain, "weights must be finite and >= 1, got {w}");
    }
    match &spec.nonlinearity {
        Nonlinearity::KComponent { p } => {
            let k = p.len();
            let terms = (0..k).map(|i| 1.0 - 1.0 / weights[i] + p[i] / weights[(i + 1) % k]);
            Ok(terms.fold((f64::NEG_INFINITY, f64::INFINITY), |(mx, mn), x| (mx.max(x), mn.min(x))))
        }
        _ => {
            let [p1, p2, q1, q2] = spec.as_strong_power().expect("two-component system");
            let (a, b) = (weights[0], weights[1]);
            Ok((1.0 + (p1 - 1.0) / a + p2 / b, 1.0 + q1 / a + (q2 - 1.0) / b))
        }
    }
}

/// Critical integrability indices, at which `P = Q = 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalR {
    pub r_star: Option<Vec<f64>>,
    /// `q1 p2 - (p1-1)(q2-1)`, or `pq - 1` for weak coupling.
    pub delta: Option<f64>,
    pub reason: Option<String>,
}

pub fn critical_r(spec: &SystemSpec) -> CriticalR {
    let n = spec.dim as f64;
    let undefined = |delta: Option<f64>, why: String| CriticalR { r_star: None, delta, reason: Some(why) };
    match &spec.nonlinearity {
        Nonlinearity::KComponent { p } => {
            // x_i = 1/r_i solves p_i x_{i+1} - x_i = 2/N cyclically.
            let k = p.len();
            let prod: f64 = p.iter().product();
            if prod <= 1.0 {
                return undefined(Some(prod - 1.0), format!("product of exponents {prod} <= 1"));
            }
            let r: Vec<f64> = (0..k)
                .map(|i| {
                    let mut sum = 0.0;
                    let mut partial = 1.0;
                    for j in 0..k {
                        sum += partial;
                        partial *= p[(i + j) % k];
                    }
                    (n / 2.0) * (prod - 1.0) / sum
                })
                .collect();
            CriticalR { r_star: Some(r), delta: Some(prod - 1.0), reason: None }
        }
        Nonlinearity::WeaklyCoupled { p, q } => {
            let d = p * q - 1.0;
            if d <= 0.0 {
                return undefined(Some(d), format!("pq - 1 = {d} <= 0"));
            }
            CriticalR { r_star: Some(vec![n / 2.0 * d / (p + 1.0), n / 2.0 * d / (q + 1.0)]), delta: Some(d), reason: None }
        }
        _ => {
            let [p1, p2, q1, q2] = spec.as_strong_power().expect("two-component system");
            let delta = q1 * p2 - (p1 - 1.0) * (q2 - 1.0);
            let (d1, d2) = (1.0 - q2 + p2, 1.0 - p1 + q1);
            if delta <= 0.0 {
                return undefined(Some(delta), format!("delta = {delta} <= 0"));
            }
            if d1 <= 0.0 || d2 <= 0.0 {
                return undefined(Some(delta), format!("denominators 1-q2+p2 = {d1}, 1-p1+q1 = {d2} not both positive"));
            }
            CriticalR { r_star: Some(vec![n / 2.0 * delta / d1, n / 2.0 * delta / d2]), delta: Some(delta), reason: None }
        }
    }
}

/// Critical scalar exponent `p*` of the domain.
pub fn fujita_exponent(kind: DomainKind, n: usize) -> Result<f64> {
    let nf = n as f64;
    match kind {
        _ if n == 0 => bail!(Config, "dimension must be at least 1"),
        DomainKind::WholeSpace => Ok(1.0 + 2.0 / nf),
        DomainKind::HalfSpace => Ok(1.0 + 2.0 / (nf + 1.0)),
        DomainKind::Exterior if n >= 2 => Ok(1.0 + 2.0 / nf),
        DomainKind::Exterior => bail!(Unsupported, "exterior domains need N >= 2"),
        DomainKind::Box => bail!(Unsupported, "no tabulated critical exponent for a bounded box"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    GlobalAllBoundedData,
    GlobalSmallData,
    LocalOnly,
    NoGlobalPositive,
    Indeterminate,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Verdict::GlobalAllBoundedData => "global_all_bounded_data",
            Verdict::GlobalSmallData => "global_small_data",
            Verdict::LocalOnly => "local_only",
            Verdict::NoGlobalPositive => "no_global_positive",
            Verdict::Indeterminate => "indeterminate",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentReport {
    pub variant: String,
    pub dim: usize,
    pub domain_kind: DomainKind,
    /// Integrability indices used for `P`, `Q`, `A`, `B`, when given.
    pub r: Option<Vec<f64>>,
    pub p_exp: Option<f64>,
    pub q_exp: Option<f64>,
    /// `A`, `B` at `alpha_i = r_i / min r`, or at unit weights without indices.
    pub a_exp: f64,
    pub b_exp: f64,
    pub r_star: Option<Vec<f64>>,
    pub delta: Option<f64>,
    pub fujita: Option<f64>,
    pub verdict: Verdict,
    /// What the indices `r` guarantee for data in the matching uniformly
    /// local weak spaces.
    pub data_class_verdict: Option<Verdict>,
    pub conditions_log: Vec<String>,
}

/// Tolerance used when an inequality of the classification is an exact tie.
pub const TIE_TOL: f64 = 1e-12;

/// Closed form of: some `alpha, beta >= 1` make both majorant exponents
/// `<= 1`. Holds iff `p1 <= 1`, `q2 <= 1` and `delta <= 0`.
pub fn all_data_global_closed_form(e: [f64; 4]) -> bool {
    let [p1, p2, q1, q2] = e;
    let delta = q1 * p2 - (p1 - 1.0) * (q2 - 1.0);
    p1 <= 1.0 && q2 <= 1.0 && delta <= TIE_TOL
}

/// Closed form of: some `alpha, beta >= 1` make both majorant exponents
/// exceed `pstar`.
pub fn small_data_global_closed_form(e: [f64; 4], pstar: f64) -> (bool, usize) {
    let [p1, p2, q1, q2] = e;
    let delta = q1 * p2 - (p1 - 1.0) * (q2 - 1.0);
    if p1 + p2 > pstar + TIE_TOL && q1 + q2 > pstar + TIE_TOL {
        return (true, 1);
    }
    if p1 < 1.0 && p1 + p2 <= pstar + TIE_TOL && pstar + TIE_TOL < q1 + q2 && delta > (pstar - 1.0) * (1.0 - p1 + q1) + TIE_TOL
    {
        return (true, 2);
    }
    if q2 < 1.0 && q1 + q2 <= pstar + TIE_TOL && pstar + TIE_TOL < p1 + p2 && delta > (pstar - 1.0) * (1.0 - q2 + p2) + TIE_TOL
    {
        return (true, 3);
    }
    (false, 0)
}

/// Which weight-existence condition to decide.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightCondition {
    /// `A <= 1` and `B <= 1`.
    AllData,
    /// `A > pstar` and `B > pstar`.
    SmallData { pstar: f64 },
}

/// Feasibility of `c_i a >= d_i` (strict where flagged) for `a` in `(0, 1]`,
/// or in `[0, 1]` when `closed_at_zero`.
fn feasible_1d(constraints: &[(f64, f64, bool)], closed_at_zero: bool) -> bool {
    // (value, strict) for the lower and upper end of the feasible interval
    let mut lo = (0.0, !closed_at_zero);
    let mut hi = (1.0, false);
    let tighten = |end: &mut (f64, bool), bound: f64, strict: bool, is_lower: bool| {
        let better = if is_lower { bound > end.0 + TIE_TOL } else { bound < end.0 - TIE_TOL };
        if better {
            *end = (bound, strict);
        } else if (bound - end.0).abs() <= TIE_TOL {
            end.1 |= strict;
        }
    };
    for &(c, d, strict) in constraints {
        if c.abs() <= TIE_TOL {
            let ok = if strict { d < -TIE_TOL } else { d <= TIE_TOL };
            if !ok {
                return false;
            }
        } else {
            tighten(if c > 0.0 { &mut lo } else { &mut hi }, d / c, strict, c > 0.0);
        }
    }
    if lo.0 < hi.0 - TIE_TOL {
        true
    } else {
        (lo.0 - hi.0).abs() <= TIE_TOL && !lo.1 && !hi.1
    }
}

/// Exact decision of whether some weights satisfy `cond`.
///
/// With `a = 1/alpha`, `b = 1/beta` both conditions are linear inequalities
/// in `(a, b)` on `(0,1]^2` whose feasible set is invariant under scaling up
/// (the right-hand sides are `0` or `pstar - 1 > 0`). A feasible point can
/// therefore be pushed to the edges `a = 1` or `b = 1`, leaving two
/// one-variable problems. `allow_infinite` admits `a = 0` or `b = 0`.
pub fn weights_exist_exact(e: [f64; 4], cond: WeightCondition, allow_infinite: bool) -> bool {
    let [p1, p2, q1, q2] = e;
    // Rows: coefficient of a, coefficient of b, for A - 1 and B - 1.
    let rows = [(p1 - 1.0, p2), (q1, q2 - 1.0)];
    let edge = |fixed_b: bool| -> bool {
        let cons: Vec<(f64, f64, bool)> = rows
            .iter()
            .map(|&(ca, cb)| {
                let (coef, constant) = if fixed_b { (ca, cb) } else { (cb, ca) };
                match cond {
                    // coef x + constant <= 0  <=>  -coef x >= constant
                    WeightCondition::AllData => (-coef, constant, false),
                    // coef x + constant > m  <=>  coef x > m - constant
                    WeightCondition::SmallData { pstar } => (coef, pstar - 1.0 - constant, true),
                }
            })
            .collect();
        feasible_1d(&cons, allow_infinite)
    };
    edge(true) || edge(false)
}

/// Searches `alpha, beta` over `grid` for majorant exponents that satisfy
/// `accept(A - 1, B - 1)`.
pub fn search_weights(e: [f64; 4], grid: &[f64], accept: impl Fn(f64, f64) -> bool) -> Option<(f64, f64)> {
    let [p1, p2, q1, q2] = e;
    for &alpha in grid {
        for &beta in grid {
            let a = (p1 - 1.0) / alpha + p2 / beta;
            let b = q1 / alpha + (q2 - 1.0) / beta;
            if accept(a, b) {
                return Some((alpha, beta));
            }
        }
    }
    None
}

/// Weight grid on `[1, hi]`: `count` log-spaced points together with the
/// integers, so that rational ratios of small integers are hit exactly.
pub fn weight_grid(hi: f64, count: usize) -> Vec<f64> {
    let mut g: Vec<f64> = (0..count).map(|i| hi.powf(i as f64 / (count - 1) as f64)).collect();
    g.extend((1..=hi.floor() as usize).map(|i| i as f64));
    g.sort_by(f64::total_cmp);
    g.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    g
}

/// Verdict on the class of data with the given integrability indices.
fn data_class(max_pq: f64, min_pq: f64, log: &mut Vec<String>) -> Verdict {
    if max_pq <= TIE_TOL {
        log.push(format!("max(P,Q) = {max_pq} <= 0: global solutions for data in the uniformly local weak classes"));
        Verdict::GlobalAllBoundedData
    } else if (max_pq - 2.0).abs() <= 1e-9 && (min_pq - 2.0).abs() <= 1e-9 {
        log.push("P = Q = 2: global solutions for small data in the critical weak classes".into());
        Verdict::GlobalSmallData
    } else if max_pq <= 2.0 + TIE_TOL {
        log.push(format!("0 < max(P,Q) = {max_pq} <= 2: local solutions under the uniformly local smallness condition"));
        Verdict::LocalOnly
    } else {
        log.push(format!("max(P,Q) = {max_pq} > 2: no existence claim for this data class"));
        Verdict::Indeterminate
    }
}

/// Regime verdict for the system, plus a data-class verdict when indices
/// are supplied.
pub fn classify_regime(spec: &SystemSpec, r: Option<&[f64]>) -> Result<ExponentReport> {
    spec.validate()?;
    let mut log = Vec::new();
    let crit = critical_r(spec);
    if let Some(why) = &crit.reason {
        log.push(format!("critical indices undefined: {why}"));
    }
    let fujita = match fujita_exponent(spec.domain_kind, spec.dim) {
        Ok(p) => Some(p),
        Err(e) => {
            log.push(format!("critical exponent unavailable: {e}"));
            None
        }
    };
    let (mut p_exp, mut q_exp, mut data_class_verdict) = (None, None, None);
    let weights: Vec<f64> = match r {
        Some(r) => {
            let (p, q) = compute_pq(spec, r)?;
            p_exp = Some(p);
            q_exp = Some(q);
            data_class_verdict = Some(data_class(p.max(q), p.min(q), &mut log));
            let rmin = r.iter().copied().fold(f64::INFINITY, f64::min);
            r.iter().map(|ri| ri / rmin).collect()
        }
        None => vec![1.0; spec.components()],
    };
    let (a_exp, b_exp) = compute_ab(spec, &weights)?;

    let verdict = match &spec.nonlinearity {
        Nonlinearity::KComponent { .. } => {
            log.push("no regime trichotomy is available for k-component systems".into());
            Verdict::Indeterminate
        }
        Nonlinearity::StrongExp { .. } => {
            log.push("exponential coupling: transformed variables tend to 1 at infinity; no regime claim".into());
            Verdict::Indeterminate
        }
        Nonlinearity::WeaklyCoupled { p, q } => {
            let (p, q) = (*p, *q);
            if p * q <= 1.0 + TIE_TOL {
                log.push(format!("pq = {} <= 1: global solutions for all bounded data", p * q));
                Verdict::GlobalAllBoundedData
            } else if spec.domain_kind == DomainKind::Box {
                log.push("bounded box: the critical-exponent hypothesis is an assumption here".into());
                Verdict::Indeterminate
            } else if let Some(ps) = fujita {
                let lhs = (p * q - 1.0) / (p.max(q) + 1.0);
                if lhs > ps - 1.0 + TIE_TOL {
                    log.push(format!("(pq-1)/(max(p,q)+1) = {lhs} > p* - 1 = {}: global positive solutions for some data", ps - 1.0));
                    Verdict::GlobalSmallData
                } else if spec.domain_kind == DomainKind::WholeSpace {
                    log.push(format!(
                        "(max(p,q)+1)/(pq-1) = {} >= N/2: no global positive solution on the whole space",
                        1.0 / lhs
                    ));
                    Verdict::NoGlobalPositive
                } else {
                    log.push(format!("(pq-1)/(max(p,q)+1) = {lhs} <= p* - 1 off the whole space: no claim"));
                    Verdict::Indeterminate
                }
            } else {
                Verdict::Indeterminate
            }
        }
        Nonlinearity::StrongPower { .. } => {
            let e = spec.as_strong_power().unwrap();
            if all_data_global_closed_form(e) {
                log.push("p1 <= 1, q2 <= 1, delta <= 0: global solutions for all bounded data".into());
                Verdict::GlobalAllBoundedData
            } else if spec.domain_kind == DomainKind::Box {
                log.push("bounded box: the critical-exponent hypothesis is an assumption here".into());
                Verdict::Indeterminate
            } else if let Some(ps) = fujita {
                let (ok, clause) = small_data_global_closed_form(e, ps);
                if ok {
                    let text = match clause {
                        1 => "p1+p2 > p* and q1+q2 > p*",
                        2 => "p1 < 1, p1+p2 <= p* < q1+q2, delta > (p*-1)(1-p1+q1)",
                        _ => "q2 < 1, q1+q2 <= p* < p1+p2, delta > (p*-1)(1-q2+p2)",
                    };
                    log.push(format!("{text}: global positive solutions for some data"));
                    Verdict::GlobalSmallData
                } else if spec.domain_kind == DomainKind::WholeSpace {
                    log.push("no weights push both majorant exponents above p*; the condition is optimal on the whole space".into());
                    Verdict::NoGlobalPositive
                } else {
                    log.push("small-data condition fails off the whole space: no claim".into());
                    Verdict::Indeterminate
                }
            } else {
                Verdict::Indeterminate
            }
        }
    };
    Ok(ExponentReport {
        variant: spec.variant_name().into(),
        dim: spec.dim,
        domain_kind: spec.domain_kind,
        r: r.map(|r| r.to_vec()),
        p_exp,
        q_exp,
        a_exp,
        b_exp,
        r_star: crit.r_star,
        delta: crit.delta,
        fujita,
        verdict,
        data_class_verdict,
        conditions_log: log,
    })
}

/// Amended closed form for finite weights: the paper's conditions plus
/// `p1 < 1 or p2 = 0` and `q2 < 1 or q1 = 0`. Without them the case
/// `delta = 0` on the boundary `p1 = 1` or `q2 = 1` is reached only in the
/// limit of an infinite weight.
pub fn all_data_global_amended(e: [f64; 4]) -> bool {
    let [p1, p2, q1, q2] = e;
    all_data_global_closed_form(e) && (p1 < 1.0 || p2 <= TIE_TOL) && (q2 < 1.0 || q1 <= TIE_TOL)
}

/// Amended closed form: the second clause also needs `p2 > pstar - 1` and
/// the third `q1 > pstar - 1`, since for `alpha, beta >= 1`
/// `A - 1 < p2` and `B - 1 < q1` in those clauses.
pub fn small_data_global_amended(e: [f64; 4], pstar: f64) -> bool {
    let [_, p2, q1, _] = e;
    match small_data_global_closed_form(e, pstar) {
        (false, _) => false,
        (true, 2) => p2 > pstar - 1.0 + TIE_TOL,
        (true, 3) => q1 > pstar - 1.0 + TIE_TOL,
        (true, _) => true,
    }
}

/// One lattice point where a characterization and the weight search disagree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanDiscrepancy {
    pub exponents: [f64; 4],
    pub pstar: Option<f64>,
    pub condition: String,
    pub characterization: bool,
    pub search: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ScanReport {
    pub cases: usize,
    pub search_true: usize,
    /// The published closed forms against the grid search.
    pub closed_form: Vec<ScanDiscrepancy>,
    /// The amended closed forms against the grid search.
    pub amended: Vec<ScanDiscrepancy>,
    /// Exact edge solver against the grid search.
    pub exact_vs_search: usize,
}

/// Compares the closed-form characterizations of both weight-existence
/// conditions with a direct search over `grid` and with the exact edge
/// solver, for every exponent tuple drawn from `lattice` and every `p*` in
/// `pstars`.
pub fn strong_coupling_scan(lattice: &[f64], pstars: &[f64], grid: &[f64]) -> ScanReport {
    use rayon::prelude::*;
    let mut tuples = Vec::new();
    for &p1 in lattice {
        for &p2 in lattice {
            for &q1 in lattice {
                for &q2 in lattice {
                    tuples.push([p1, p2, q1, q2]);
                }
            }
        }
    }
    let conditions: Vec<WeightCondition> = std::iter::once(WeightCondition::AllData)
        .chain(pstars.iter().map(|&pstar| WeightCondition::SmallData { pstar }))
        .collect();
    tuples
        .par_iter()
        .map(|&e| {
            let mut rep = ScanReport::default();
            for &cond in &conditions {
                let (closed, amended, found, name, pstar) = match cond {
                    WeightCondition::AllData => (
                        all_data_global_closed_form(e),
                        all_data_global_amended(e),
                        search_weights(e, grid, |a, b| a <= TIE_TOL && b <= TIE_TOL).is_some(),
                        "all_data",
                        None,
                    ),
                    WeightCondition::SmallData { pstar } => (
                        small_data_global_closed_form(e, pstar).0,
                        small_data_global_amended(e, pstar),
                        search_weights(e, grid, |a, b| a + 1.0 > pstar + TIE_TOL && b + 1.0 > pstar + TIE_TOL).is_some(),
                        "small_data",
                        Some(pstar),
                    ),
                };
                let exact = weights_exist_exact(e, cond, false);
                rep.cases += 1;
                rep.search_true += found as usize;
                rep.exact_vs_search += (exact != found) as usize;
                let entry = |characterization| ScanDiscrepancy {
                    exponents: e,
                    pstar,
                    condition: name.into(),
                    characterization,
                    search: found,
                };
                if closed != found {
                    rep.closed_form.push(entry(closed));
                }
                if amended != found {
                    rep.amended.push(entry(amended));
                }
            }
            rep
        })
        .reduce(ScanReport::default, |mut a, b| {
            a.cases += b.cases;
            a.search_true += b.search_true;
            a.exact_vs_search += b.exact_vs_search;
            a.closed_form.extend(b.closed_form);
            a.amended.extend(b.amended);
            a
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weak(p: f64, q: f64, n: usize) -> SystemSpec {
        SystemSpec::weakly_coupled(p, q, n).unwrap()
    }

    #[test]
    fn pq_examples() {
        let (p, q) = compute_pq(&weak(2.0, 3.0, 4), &[10.0 / 3.0, 2.5]).unwrap();
        assert!((p - 2.0).abs() < 1e-14 && (q - 2.0).abs() < 1e-14);
        let (p, q) = compute_pq(&weak(2.0, 3.0, 1), &[1.5, 3.0]).unwrap();
        assert!(p.abs() < 1e-15);
        assert!((q - (6.0 - 1.0) / 3.0).abs() < 1e-14);
        assert!(compute_pq(&weak(2.0, 3.0, 1), &[0.5, 3.0]).is_err());
    }

    #[test]
    fn strong_reduction_matches_weak() {
        let s = SystemSpec::strong_power(0.0, 2.5, 1.5, 0.0, 3).unwrap();
        let w = weak(2.5, 1.5, 3);
        assert_eq!(compute_pq(&s, &[2.0, 4.0]).unwrap(), compute_pq(&w, &[2.0, 4.0]).unwrap());
        let cs = critical_r(&s);
        let cw = critical_r(&w);
        assert!((cs.delta.unwrap() - (2.5 * 1.5 - 1.0)).abs() < 1e-14);
        for (a, b) in cs.r_star.unwrap().iter().zip(cw.r_star.unwrap()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn ab_examples() {
        assert_eq!(compute_ab(&weak(2.0, 3.0, 2), &[1.0, 1.0]).unwrap(), (2.0, 3.0));
        let s = SystemSpec::strong_power(1.0, 2.0, 1.0, 1.0, 2).unwrap();
        let (a1, _) = compute_ab(&s, &[1.0, 3.0]).unwrap();
        let (a2, _) = compute_ab(&s, &[7.0, 3.0]).unwrap();
        assert_eq!(a1, a2);
        assert!(compute_ab(&weak(2.0, 3.0, 2), &[0.9, 1.0]).is_err());
    }

    #[test]
    fn critical_examples() {
        let c = critical_r(&weak(3.0, 3.0, 2));
        assert_eq!(c.r_star.unwrap(), vec![2.0, 2.0]);
        let d = critical_r(&SystemSpec::strong_power(2.0, 1.0, 1.0, 2.0, 2).unwrap());
        assert_eq!(d.delta, Some(0.0));
        assert!(d.r_star.is_none() && d.reason.is_some());
    }

    #[test]
    fn k_component_critical_indices_give_two() {
        let spec = SystemSpec::new(Nonlinearity::KComponent { p: vec![2.0, 3.0, 1.5] }, 3, DomainKind::WholeSpace).unwrap();
        let r = critical_r(&spec).r_star.unwrap();
        let (pk, qk) = compute_pq(&spec, &r).unwrap();
        assert!((pk - 2.0).abs() < 1e-12 && (qk - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fujita_table() {
        assert_eq!(fujita_exponent(DomainKind::WholeSpace, 2).unwrap(), 2.0);
        assert_eq!(fujita_exponent(DomainKind::HalfSpace, 1).unwrap(), 2.0);
        assert_eq!(fujita_exponent(DomainKind::Exterior, 2).unwrap(), 2.0);
        assert!(matches!(fujita_exponent(DomainKind::Exterior, 1), Err(Error::Unsupported(_))));
    }

    #[test]
    fn regime_examples() {
        assert_eq!(classify_regime(&weak(0.5, 2.0, 1), None).unwrap().verdict, Verdict::GlobalAllBoundedData);
        assert_eq!(classify_regime(&weak(3.0, 3.0, 2), None).unwrap().verdict, Verdict::GlobalSmallData);
        assert_eq!(classify_regime(&weak(2.0, 2.0, 2), None).unwrap().verdict, Verdict::NoGlobalPositive);
        let boxed = SystemSpec::new(Nonlinearity::WeaklyCoupled { p: 3.0, q: 3.0 }, 2, DomainKind::Box).unwrap();
        assert_eq!(classify_regime(&boxed, None).unwrap().verdict, Verdict::Indeterminate);
    }

    #[test]
    fn data_class_at_critical_indices() {
        let spec = weak(3.0, 3.0, 2);
        let rep = classify_regime(&spec, Some(&[2.0, 2.0])).unwrap();
        assert_eq!(rep.data_class_verdict, Some(Verdict::GlobalSmallData));
        // equal indices give unit weights, so A = p and B = q
        assert!((rep.a_exp - 3.0).abs() < 1e-14 && (rep.b_exp - 3.0).abs() < 1e-14);
        assert_eq!(critical_r(&spec).r_star.unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn exact_solver_examples() {
        // u-equation source 1 keeps A below one whatever the weights
        let e = [0.0, 0.0, 0.0, 2.0];
        assert!(small_data_global_closed_form(e, 5.0 / 3.0).0);
        assert!(!weights_exist_exact(e, WeightCondition::SmallData { pstar: 5.0 / 3.0 }, false));
        assert!(!small_data_global_amended(e, 5.0 / 3.0));
        // delta = 0 on q2 = 1 needs alpha = infinity
        let e = [0.0, 0.0, 0.5, 1.0];
        assert!(all_data_global_closed_form(e));
        assert!(!weights_exist_exact(e, WeightCondition::AllData, false));
        assert!(!all_data_global_amended(e));
        let e = [0.5, 0.5, 0.5, 0.5];
        assert!(weights_exist_exact(e, WeightCondition::AllData, false));
        assert!(weights_exist_exact([3.0, 3.0, 3.0, 3.0], WeightCondition::SmallData { pstar: 3.0 }, false));
    }

    #[test]
    fn weak_small_data_condition_matches_weight_search() {
        let grid = weight_grid(64.0, 129);
        for &p in &[0.5f64, 1.0, 1.5, 2.0, 3.0, 4.0] {
            for &q in &[0.5, 1.0, 1.5, 2.0, 3.0, 4.0] {
                for n in 1..=3 {
                    let ps = 1.0 + 2.0 / n as f64;
                    let closed = p * q > 1.0 && (p * q - 1.0) / (p.max(q) + 1.0) > ps - 1.0 + TIE_TOL;
                    let e = [0.0, p, q, 0.0];
                    let found = search_weights(e, &grid, |a, b| a + 1.0 > ps + TIE_TOL && b + 1.0 > ps + TIE_TOL).is_some();
                    assert_eq!(closed, found, "p={p} q={q} N={n}");
                }
            }
        }
    }
}
