//! Explicit supersolutions of the scalar majorant
//! `w_t = Lw + alpha w^A + beta w^B`, the smallness functionals that make
//! them work, and a numerical check of the supersolution inequality.

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::exponents::{compute_ab, compute_pq, SystemSpec};
use crate::fields::{Field, PointwiseMap};
use crate::lorentz::uloc_norm;
use crate::mild::{duhamel_sweep, time_grid, Reaction};
use crate::semigroup::SemigroupEngine;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileMode {
    /// `2 [S(t) w0^sigma]^{1/sigma} + 2t`
    WithLinearDrift,
    /// `2 [S(t) w0^sigma]^{1/sigma}`
    PureSemigroup,
    /// `e^{(alpha+beta)t} S(t) w0 + e^{(alpha+beta)t} - 1`
    SublinearExponential,
}

impl std::str::FromStr for ProfileMode {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "with_linear_drift" | "drift" => ProfileMode::WithLinearDrift,
            "pure_semigroup" | "pure" => ProfileMode::PureSemigroup,
            "sublinear_exponential" | "sublinear" => ProfileMode::SublinearExponential,
            other => bail!(Config, "unknown profile mode `{other}`"),
        })
    }
}

impl std::fmt::Display for ProfileMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ProfileMode::WithLinearDrift => "with_linear_drift",
            ProfileMode::PureSemigroup => "pure_semigroup",
            ProfileMode::SublinearExponential => "sublinear_exponential",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupersolutionProfile {
    pub mode: ProfileMode,
    pub sigma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub a_exp: f64,
    pub b_exp: f64,
    /// Majorant initial datum `u0^alpha + v0^beta`.
    pub w0: Field,
    pub horizon: f64,
}

impl SupersolutionProfile {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mode: ProfileMode,
        sigma: f64,
        alpha: f64,
        beta: f64,
        a_exp: f64,
        b_exp: f64,
        w0: Field,
        horizon: f64,
    ) -> Result<Self> {
        if !(alpha >= 1.0 && beta >= 1.0) {
            bail!(Domain, "weights must be >= 1, got alpha = {alpha}, beta = {beta}");
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            bail!(Range, "horizon must be positive and finite, got {horizon}");
        }
        if !w0.is_nonneg() || w0.is_blown_up() {
            bail!(Domain, "majorant datum must be finite and nonnegative");
        }
        let (mx, mn) = (a_exp.max(b_exp), a_exp.min(b_exp));
        match mode {
            ProfileMode::WithLinearDrift if !(sigma > 1.0 && sigma <= mx) => {
                bail!(Domain, "drift profile needs 1 < sigma <= max(A,B) = {mx}, got {sigma}")
            }
            ProfileMode::PureSemigroup if !(mn > 1.0 && sigma > 1.0 && sigma <= mn) => {
                bail!(Domain, "pure profile needs 1 < sigma <= min(A,B) = {mn}, got {sigma}")
            }
            ProfileMode::SublinearExponential if mx > 1.0 => {
                bail!(Domain, "sublinear profile needs max(A,B) <= 1, got {mx}")
            }
            _ => {}
        }
        Ok(SupersolutionProfile { mode, sigma, alpha, beta, a_exp, b_exp, w0, horizon })
    }

    /// Default `sigma`: strictly inside the admissible interval, away from 1.
    pub fn default_sigma(mode: ProfileMode, a_exp: f64, b_exp: f64, r: f64) -> Result<f64> {
        let (mx, mn) = (a_exp.max(b_exp), a_exp.min(b_exp));
        let sigma = match mode {
            ProfileMode::WithLinearDrift => mx.min(r).min(1.0 + (mx - 1.0) / 2.0),
            ProfileMode::PureSemigroup => mn.min(r),
            ProfileMode::SublinearExponential => return Ok(1.0),
        };
        if !(sigma > 1.0) {
            bail!(Domain, "no admissible sigma > 1 (max(A,B) = {mx}, min(A,B) = {mn}, r = {r})");
        }
        Ok(sigma)
    }

    pub fn majorant(&self) -> Reaction {
        Reaction::Majorant { alpha: self.alpha, beta: self.beta, a: self.a_exp, b: self.b_exp }
    }
}

/// `w0 = u0^alpha + v0^beta`.
pub fn majorant_initial_data(u0: &Field, v0: &Field, alpha: f64, beta: f64) -> Result<Field> {
    if !(alpha >= 1.0 && beta >= 1.0) {
        bail!(Domain, "weights must be >= 1, got alpha = {alpha}, beta = {beta}");
    }
    if !u0.is_nonneg() || !v0.is_nonneg() {
        bail!(Domain, "majorant data need nonnegative fields");
    }
    u0.map(PointwiseMap::Power(alpha))?.combine(1.0, &v0.map(PointwiseMap::Power(beta))?, 1.0)
}

/// The profile at time `t`, with `t = 0` giving the limit value.
pub fn evaluate_profile(profile: &SupersolutionProfile, engine: &SemigroupEngine, t: f64) -> Result<Field> {
    if !(t >= 0.0) {
        bail!(Range, "profile time must be nonnegative, got {t}");
    }
    if t > profile.horizon * (1.0 + 1e-12) {
        bail!(Range, "t = {t} beyond the profile horizon {}", profile.horizon);
    }
    match profile.mode {
        ProfileMode::WithLinearDrift | ProfileMode::PureSemigroup => {
            let s = profile.sigma;
            let evolved = engine.apply(&profile.w0.map(PointwiseMap::Power(s))?, t)?;
            let w = evolved.map(PointwiseMap::Power(1.0 / s))?.map(PointwiseMap::Scale(2.0))?;
            if profile.mode == ProfileMode::WithLinearDrift {
                w.shift(2.0 * t)
            } else {
                Ok(w)
            }
        }
        ProfileMode::SublinearExponential => {
            let g = ((profile.alpha + profile.beta) * t).exp();
            engine.apply(&profile.w0, t)?.map(PointwiseMap::Scale(g))?.shift(g - 1.0)
        }
    }
}

/// Nodes `10^{j/64}` below `horizon`, then `horizon`, preceded by `0`.
/// The grid does not depend on the horizon, so the functional below is
/// monotone in it.
fn anchored_grid(horizon: f64) -> Vec<f64> {
    let mut g = vec![0.0];
    let mut j = -12 * 64;
    loop {
        let t = 10f64.powf(j as f64 / 64.0);
        if t >= horizon * (1.0 - 1e-12) {
            break;
        }
        g.push(t);
        j += 1;
    }
    g.push(horizon);
    g
}

/// `sup_{0<t<=T} ||S(t)w0^s||^{1-1/s} int_0^t ||S(s)w0^s||^{e} ds` with
/// `e = max(A,B)/sigma - 1`, or the sum of the `A` and `B` terms for the
/// pure profile. Returns `+inf` when the inner integral diverges.
pub fn smallness_functional(profile: &SupersolutionProfile, engine: &SemigroupEngine, horizon: f64) -> Result<f64> {
    if !(horizon > 0.0) {
        bail!(Range, "horizon must be positive, got {horizon}");
    }
    let s = profile.sigma;
    let exps: Vec<f64> = match profile.mode {
        ProfileMode::WithLinearDrift => vec![profile.a_exp.max(profile.b_exp) / s - 1.0],
        ProfileMode::PureSemigroup => vec![profile.a_exp / s - 1.0, profile.b_exp / s - 1.0],
        ProfileMode::SublinearExponential => bail!(Domain, "the sublinear profile has no smallness functional"),
    };
    if profile.w0.linf_norm() == 0.0 {
        return Ok(0.0);
    }
    let grid = anchored_grid(horizon);
    let ws = engine.gather_interior(&profile.w0.map(PointwiseMap::Power(s))?);
    let zero = vec![vec![0.0; ws.len()]; grid.len()];
    let evolved = duhamel_sweep(engine, &grid, Some(&ws), &zero)?;
    let g: Vec<f64> = evolved.iter().map(|x| x.iter().fold(0.0f64, |m, v| m.max(v.abs()))).collect();
    let integrand: Vec<f64> = g.iter().map(|&gi| exps.iter().map(|&e| gi.powf(e)).sum()).collect();
    if integrand.iter().any(|v| !v.is_finite()) {
        return Ok(f64::INFINITY);
    }
    let mut integral = 0.0;
    let mut best = 0.0f64;
    for j in 1..grid.len() {
        integral += 0.5 * (grid[j] - grid[j - 1]) * (integrand[j] + integrand[j - 1]);
        best = best.max(g[j].powf(1.0 - 1.0 / s) * integral);
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmallnessCondition {
    /// `|||W0|||_{1,rho} <= gamma rho^{N(1 - 2/max(P,Q))}`
    Cond31,
    /// `|||W0|||_{1,rho} <= gamma max(rho^{N(1-2/P)}, rho^{N(1-2/Q)})`
    Cond33,
}

impl SmallnessCondition {
    pub fn mode(self) -> ProfileMode {
        match self {
            SmallnessCondition::Cond31 => ProfileMode::WithLinearDrift,
            SmallnessCondition::Cond33 => ProfileMode::PureSemigroup,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallnessCheck {
    pub which: SmallnessCondition,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs / lhs`; infinite for zero data.
    pub margin: f64,
    pub pass: bool,
}

fn smallness_rhs(spec: &SystemSpec, r1: f64, r2: f64, rho: f64, gamma: f64, which: SmallnessCondition) -> Result<f64> {
    let n = spec.dim as f64;
    let (p, q) = compute_pq(spec, &[r1, r2])?;
    Ok(match which {
        SmallnessCondition::Cond31 => {
            let m = p.max(q);
            if !(m > 0.0) {
                bail!(Domain, "max(P,Q) = {m} must be positive");
            }
            gamma * rho.powf(n * (1.0 - 2.0 / m))
        }
        SmallnessCondition::Cond33 => {
            if !(p > 0.0 && q > 0.0) {
                bail!(Domain, "P = {p} and Q = {q} must both be positive");
            }
            gamma * rho.powf(n * (1.0 - 2.0 / p)).max(rho.powf(n * (1.0 - 2.0 / q)))
        }
    })
}

/// Evaluates the uniformly local smallness condition on `W0 = u0^{r1} + v0^{r2}`.
pub fn check_smallness_condition(
    w0_big: &Field,
    spec: &SystemSpec,
    r1: f64,
    r2: f64,
    rho: f64,
    gamma: f64,
    which: SmallnessCondition,
) -> Result<SmallnessCheck> {
    if !(gamma > 0.0) {
        bail!(Config, "gamma must be positive");
    }
    let rhs = smallness_rhs(spec, r1, r2, rho, gamma, which)?;
    let lhs = uloc_norm(w0_big, 1.0, rho)?.norm;
    let margin = if lhs == 0.0 { f64::INFINITY } else { rhs / lhs };
    Ok(SmallnessCheck { which, lhs, rhs, margin, pass: lhs <= rhs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    /// `max (F[w] - w)_+` relative to `||w(t)||_inf`, over positive nodes.
    pub max_violation: f64,
    pub absolute: f64,
    pub t: f64,
    pub index: usize,
    pub tol: f64,
    pub pass: bool,
}

/// Computes `F[w](t) = S(t)w0 + int_0^t S(t-s)[alpha w^A + beta w^B] ds` for
/// the candidate `w` given at every node of `t_grid` (which starts at 0),
/// and reports the largest excess of `F[w]` over `w`.
pub fn verify_supersolution_inequality(
    candidate: &[Field],
    w0: &Field,
    majorant: &Reaction,
    engine: &SemigroupEngine,
    t_grid: &[f64],
    tol: f64,
) -> Result<ViolationReport> {
    if !matches!(majorant, Reaction::Majorant { .. }) {
        bail!(Config, "the supersolution inequality is checked for the scalar majorant");
    }
    if candidate.len() != t_grid.len() {
        bail!(Config, "candidate has {} states for {} nodes", candidate.len(), t_grid.len());
    }
    if candidate.iter().any(|c| c.is_blown_up() || c.values().iter().any(|v| !v.is_finite())) {
        bail!(BlownUp, "candidate is not finite");
    }
    let states: Vec<Vec<f64>> = candidate.iter().map(|c| engine.gather_interior(c)).collect();
    let sources: Vec<Vec<f64>> = states.iter().map(|s| majorant.eval(std::slice::from_ref(s)).remove(0)).collect();
    let f = duhamel_sweep(engine, t_grid, Some(&engine.gather_interior(w0)), &sources)?;
    let mut rep = ViolationReport { max_violation: 0.0, absolute: 0.0, t: 0.0, index: 0, tol, pass: true };
    let interior = engine.domain().interior_indices();
    for j in 1..t_grid.len() {
        let scale = candidate[j].linf_norm().max(f64::MIN_POSITIVE);
        for (k, (fk, wk)) in f[j].iter().zip(&states[j]).enumerate() {
            let excess = fk - wk;
            if excess / scale > rep.max_violation {
                rep.max_violation = excess / scale;
                rep.absolute = excess;
                rep.t = t_grid[j];
                rep.index = interior[k];
            }
        }
    }
    rep.pass = rep.max_violation <= tol;
    Ok(rep)
}

/// [`verify_supersolution_inequality`] for a closed-form profile.
pub fn verify_profile(
    profile: &SupersolutionProfile,
    engine: &SemigroupEngine,
    t_grid: &[f64],
    tol: f64,
) -> Result<ViolationReport> {
    let candidate: Vec<Field> =
        t_grid.iter().map(|&t| evaluate_profile(profile, engine, t)).collect::<Result<_>>()?;
    verify_supersolution_inequality(&candidate, &profile.w0, &profile.majorant(), engine, t_grid, tol)
}

/// Two-component data `u0 = (W0/2)^{1/r1}`, `v0 = (W0/2)^{1/r2}` with `W0` a
/// multiple of `shape` sitting exactly on the smallness threshold for `gamma`.
#[allow(clippy::too_many_arguments)]
pub fn threshold_data(
    shape: &Field,
    spec: &SystemSpec,
    r1: f64,
    r2: f64,
    rho: f64,
    gamma: f64,
    which: SmallnessCondition,
) -> Result<(Field, Field)> {
    let rhs = smallness_rhs(spec, r1, r2, rho, gamma, which)?;
    let norm = uloc_norm(shape, 1.0, rho)?.norm;
    if !(norm > 0.0) {
        bail!(Domain, "reference shape must be nonzero");
    }
    let half = shape.map(PointwiseMap::Scale(0.5 * rhs / norm))?;
    Ok((half.map(PointwiseMap::Power(1.0 / r1))?, half.map(PointwiseMap::Power(1.0 / r2))?))
}

/// Profile for data `(u0, v0)` with integrability indices `(r1, r2)` and
/// `1 <= r <= min(r1, r2)`: weights `r1/r`, `r2/r` and the default sigma.
#[allow(clippy::too_many_arguments)]
pub fn profile_for_data(
    u0: &Field,
    v0: &Field,
    spec: &SystemSpec,
    r1: f64,
    r2: f64,
    r: f64,
    mode: ProfileMode,
    horizon: f64,
) -> Result<SupersolutionProfile> {
    if !(r >= 1.0 && r <= r1.min(r2)) {
        bail!(Domain, "need 1 <= r <= min(r1, r2), got r = {r}");
    }
    let (alpha, beta) = (r1 / r, r2 / r);
    let (a, b) = compute_ab(spec, &[alpha, beta])?;
    let sigma = SupersolutionProfile::default_sigma(mode, a, b, r)?;
    let w0 = majorant_initial_data(u0, v0, alpha, beta)?;
    SupersolutionProfile::new(mode, sigma, alpha, beta, a, b, w0, horizon)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSettings {
    pub gamma_lo: f64,
    pub gamma_hi: f64,
    /// Stop when `gamma_hi / gamma_lo` falls below `1 + rel_tol`.
    pub rel_tol: f64,
    pub per_decade: usize,
    pub decades: f64,
    pub tol_cmp: f64,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        CalibrationSettings { gamma_lo: 1e-8, gamma_hi: 1e3, rel_tol: 1e-3, per_decade: 64, decades: 6.0, tol_cmp: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTrial {
    pub gamma: f64,
    pub max_violation: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub which: SmallnessCondition,
    /// Largest gamma found for which the profile passes.
    pub gamma: f64,
    /// Horizon `min(rho^2, T1)` over which the check ran.
    pub horizon: f64,
    pub sigma: f64,
    /// True when even `gamma_hi` passed, so `gamma` is only a lower bound.
    pub capped: bool,
    pub trials: Vec<CalibrationTrial>,
}

/// Finds by bisection in `log gamma` the largest `gamma` for which the
/// profile built from threshold data on `shape` passes the supersolution
/// check over `(0, min(rho^2, t1)]`.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_gamma(
    shape: &Field,
    spec: &SystemSpec,
    r1: f64,
    r2: f64,
    r: f64,
    rho: f64,
    t1: f64,
    which: SmallnessCondition,
    engine: &SemigroupEngine,
    settings: &CalibrationSettings,
) -> Result<Calibration> {
    if !(settings.gamma_lo > 0.0 && settings.gamma_hi > settings.gamma_lo && settings.rel_tol > 0.0) {
        bail!(Config, "calibration needs 0 < gamma_lo < gamma_hi and a positive tolerance");
    }
    let horizon = (rho * rho).min(t1);
    let grid = time_grid(horizon, settings.per_decade, settings.decades)?;
    let mut trials = Vec::new();
    let mut sigma = f64::NAN;
    let mut trial = |gamma: f64| -> Result<bool> {
        let (u0, v0) = threshold_data(shape, spec, r1, r2, rho, gamma, which)?;
        let profile = profile_for_data(&u0, &v0, spec, r1, r2, r, which.mode(), horizon)?;
        sigma = profile.sigma;
        let rep = verify_profile(&profile, engine, &grid, settings.tol_cmp)?;
        trials.push(CalibrationTrial { gamma, max_violation: rep.max_violation, pass: rep.pass });
        Ok(rep.pass)
    };
    let (mut lo, mut hi) = (settings.gamma_lo, settings.gamma_hi);
    if !trial(lo)? {
        bail!(Internal, "the profile fails already at gamma = {lo:e}");
    }
    let capped = trial(hi)?;
    if !capped {
        while hi / lo > 1.0 + settings.rel_tol {
            let mid = (lo * hi).sqrt();
            if trial(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    } else {
        lo = hi;
    }
    Ok(Calibration { which, gamma: lo, horizon, sigma, capped, trials })
}

/// Smallest `C` with `u(x,t) <= C (|x| + t^2)^{-N/r} + C` over the samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCheck {
    pub r: f64,
    pub constant: f64,
    pub t: f64,
    pub x: Vec<f64>,
}

pub fn power_law_envelope(states: &[(f64, &Field)], r: f64) -> Result<EnvelopeCheck> {
    if !(r >= 1.0) {
        bail!(Domain, "envelope index must be >= 1, got {r}");
    }
    let mut best = EnvelopeCheck { r, constant: 0.0, t: 0.0, x: vec![] };
    for (t, f) in states {
        let d = f.domain();
        let n = d.dim() as f64;
        for (k, u) in f.values().iter().enumerate() {
            let c = d.coord(k);
            let dist = c[..d.dim()].iter().map(|x| x * x).sum::<f64>().sqrt();
            let g = (dist + t * t).powf(-n / r);
            let ratio = u.max(0.0) / (g + 1.0);
            if !ratio.is_finite() {
                bail!(Range, "non-finite state at t = {t}");
            }
            if ratio > best.constant {
                best = EnvelopeCheck { r, constant: ratio, t: *t, x: c[..d.dim()].to_vec() };
            }
        }
    }
    Ok(best)
}
