//! Blow-up time estimation and rate fits for time-stepping traces.

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::exponents::{critical_r, Nonlinearity, SystemSpec};
use crate::lorentz::uloc_norm;
use crate::mild::{SolveResult, SolveStatus, TracePoint};

/// Lower-bound rate exponents `theta_i` with `||u_i(t)|| >~ (T-t)^{-theta_i}`.
///
/// For the k-component system these are the scaling exponents
/// `N / (2 r_i*)`; no rate claim backs them.
pub fn theory_exponents(spec: &SystemSpec) -> Result<Vec<f64>> {
    match &spec.nonlinearity {
        Nonlinearity::StrongExp { .. } => bail!(Unsupported, "no rate exponent for the exponential system"),
        Nonlinearity::KComponent { .. } => {
            let crit = critical_r(spec);
            let Some(r) = crit.r_star else {
                bail!(Domain, "critical indices undefined: {}", crit.reason.unwrap_or_default());
            };
            Ok(r.iter().map(|ri| spec.dim as f64 / (2.0 * ri)).collect())
        }
        _ => {
            let [p1, p2, q1, q2] = spec.as_strong_power().expect("two-component system");
            let delta = q1 * p2 - (p1 - 1.0) * (q2 - 1.0);
            let (a, b) = (1.0 - q2 + p2, 1.0 - p1 + q1);
            if !(delta > 0.0 && a > 0.0 && b > 0.0) {
                bail!(Domain, "rate exponents need delta = {delta} > 0 and positive numerators ({a}, {b})");
            }
            Ok(vec![a / delta, b / delta])
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupTime {
    pub t_est: f64,
    pub uncertainty: f64,
    /// Zero of the straight-line fit of `||u||^{-1/theta}` against `t`.
    pub linear_estimate: f64,
    /// Blow-up time of the nonlinear fit `log||u|| = c - theta log(T - t)`.
    pub nonlinear_estimate: Option<f64>,
    pub nonlinear_theta: Option<f64>,
    pub last_time: f64,
    pub points: usize,
}

fn least_squares_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

fn solve3(m: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&m);
    if d.abs() < 1e-300 || !d.is_finite() {
        return None;
    }
    let mut x = [0.0; 3];
    for (k, xk) in x.iter_mut().enumerate() {
        let mut mk = m;
        for i in 0..3 {
            mk[i][k] = b[i];
        }
        *xk = det(&mk) / d;
    }
    Some(x)
}

/// Levenberg-Marquardt fit of `log y = c - theta log(T - t)` with `T` kept
/// above the last sample time. Returns `(c, theta, T)`.
fn fit_power_singularity(t: &[f64], y: &[f64], theta0: f64, t0: f64) -> Option<(f64, f64, f64)> {
    let t_last = *t.last()?;
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let residuals = |c: f64, th: f64, tt: f64| -> Vec<f64> {
        t.iter().zip(&ly).map(|(ti, li)| c - th * (tt - ti).ln() - li).collect()
    };
    let cost = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>();
    let mut th = theta0;
    let mut tt = t0.max(t_last + 1e-12 * t_last.abs().max(1.0));
    let mut c = t.iter().zip(&ly).map(|(ti, li)| li + th * (tt - ti).ln()).sum::<f64>() / t.len() as f64;
    let mut r = residuals(c, th, tt);
    let mut f = cost(&r);
    let mut mu = 1e-3;
    for _ in 0..500 {
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for (i, ti) in t.iter().enumerate() {
            let j = [1.0, -(tt - ti).ln(), -th / (tt - ti)];
            for a in 0..3 {
                jtr[a] += j[a] * r[i];
                for b in 0..3 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let mut improved = false;
        for _ in 0..40 {
            let mut m = jtj;
            for (a, row) in m.iter_mut().enumerate() {
                row[a] += mu * jtj[a][a].max(1e-300);
            }
            let Some(step) = solve3(m, [-jtr[0], -jtr[1], -jtr[2]]) else {
                mu *= 10.0;
                continue;
            };
            let (nc, nth, ntt) = (c + step[0], th + step[1], tt + step[2]);
            if ntt > t_last && nth.is_finite() {
                let nr = residuals(nc, nth, ntt);
                let nf = cost(&nr);
                if nf < f {
                    let rel = (f - nf) / f.max(1e-300);
                    (c, th, tt, r, f) = (nc, nth, ntt, nr, nf);
                    mu = (mu / 3.0).max(1e-12);
                    improved = true;
                    if rel < 1e-14 {
                        return Some((c, th, tt));
                    }
                    break;
                }
            }
            mu *= 4.0;
        }
        if !improved {
            break;
        }
    }
    Some((c, th, tt))
}

/// Samples of the trace where component `c` grows rapidly: sup at least
/// 100 times its initial scale, and never fewer than the last 8 samples.
fn growth_tail(trace: &[TracePoint], c: usize) -> Vec<&TracePoint> {
    let base = trace.iter().map(|p| p.sup[c]).find(|s| *s > 0.0).unwrap_or(1.0).max(1e-300);
    let start = trace.iter().position(|p| p.sup[c] >= 100.0 * base).unwrap_or(trace.len());
    let start = start.min(trace.len().saturating_sub(8));
    trace[start..].iter().collect()
}

/// Estimates the blow-up time from the growth of component `c`, taking
/// `theta` as the starting rate exponent.
pub fn estimate_blowup_time(run: &SolveResult, theta: f64, c: usize) -> Result<BlowupTime> {
    if run.status != SolveStatus::BlowUpSuspected {
        bail!(NotABlowup, "run ended with status {:?}", run.status);
    }
    if !(theta > 0.0) {
        bail!(Domain, "rate exponent must be positive, got {theta}");
    }
    let tail = growth_tail(&run.trace, c);
    if tail.len() < 4 || tail.windows(2).any(|w| w[1].sup[c] < w[0].sup[c]) {
        bail!(NotABlowup, "no monotone growth at the end of the trace");
    }
    let t: Vec<f64> = tail.iter().map(|p| p.t).collect();
    let y: Vec<f64> = tail.iter().map(|p| p.sup[c]).collect();
    let z: Vec<f64> = y.iter().map(|v| v.powf(-1.0 / theta)).collect();
    let (a, b) = least_squares_line(&t, &z);
    if !(b < 0.0) {
        bail!(NotABlowup, "inverse power of the sup norm does not decrease");
    }
    let last_time = run.last_time.max(*t.last().unwrap());
    let linear = (-a / b).max(last_time);
    let nonlinear = fit_power_singularity(&t, &y, theta, linear);
    let last_dt = run.trace.last().map_or(0.0, |p| p.dt);
    let (t_est, uncertainty, nl_t, nl_th) = match nonlinear {
        Some((_, th, tt)) if th > 0.0 && tt.is_finite() => {
            (tt, (tt - linear).abs().max(last_dt).max(tt - last_time), Some(tt), Some(th))
        }
        _ => (linear, last_dt.max(linear - last_time), None, None),
    };
    Ok(BlowupTime {
        t_est,
        uncertainty,
        linear_estimate: linear,
        nonlinear_estimate: nl_t,
        nonlinear_theta: nl_th,
        last_time,
        points: t.len(),
    })
}

/// Combines an estimate with one from a rerun at a finer step.
pub fn with_rerun(first: &BlowupTime, rerun: &BlowupTime) -> BlowupTime {
    let mut out = first.clone();
    out.uncertainty = first.uncertainty.max(rerun.uncertainty).max((first.t_est - rerun.t_est).abs());
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedSample {
    pub t: f64,
    pub rho: f64,
    pub norms: Vec<f64>,
    pub scaled: Vec<f64>,
    pub scaled_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedHistory {
    pub r: f64,
    pub r_star: Vec<f64>,
    pub ell_star: f64,
    pub samples: Vec<WindowedSample>,
    /// Minimum of the summed scaled norms over the resolved samples.
    pub empirical_liminf: f64,
    pub truncated: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupReport {
    pub t_est: f64,
    pub uncertainty: f64,
    pub window: (f64, f64),
    pub points: usize,
    pub fitted_exp: Vec<f64>,
    pub theory_exp: Vec<f64>,
    /// `fitted / theory` per component.
    pub ratio: Vec<f64>,
    /// Max over the window of `(T-t)^theta ||u(t)||`.
    pub empirical_limsup: Vec<f64>,
    /// Min over the window of the same quantity.
    pub empirical_liminf: Vec<f64>,
    /// True when the exponents are scaling exponents without a rate theorem.
    pub scaling_only: bool,
    pub windowed_norms: Option<WindowedHistory>,
    pub notes: Vec<String>,
}

/// Fits `log||u_i||` against `log(T_est - t)` over a window of `T_est - t`
/// given relative to `T_est`, default `[1e-3, 1e-1]`. The window is widened
/// toward earlier times until it covers half a decade of resolved samples.
pub fn fit_rate(
    run: &SolveResult,
    spec: &SystemSpec,
    time: &BlowupTime,
    window: Option<(f64, f64)>,
    dt_min: f64,
) -> Result<BlowupReport> {
    let theory = theory_exponents(spec)?;
    let t_est = time.t_est;
    if !(t_est > 0.0) || t_est < run.last_time {
        bail!(Domain, "blow-up time {t_est} must lie beyond the last resolved time {}", run.last_time);
    }
    let (lo, mut hi) = window.unwrap_or((1e-3, 1e-1));
    if !(0.0 < lo && lo < hi) {
        bail!(Config, "window must satisfy 0 < lo < hi");
    }
    let mut notes = Vec::new();
    if t_est * lo <= 3.0 * dt_min {
        bail!(FitQuality, "window end T - t = {:e} within 3 dt_min of the blow-up time", t_est * lo);
    }
    let k = theory.len();
    let pick = |hi: f64| -> Vec<&TracePoint> {
        run.trace
            .iter()
            .filter(|p| {
                let tau = (t_est - p.t) / t_est;
                tau >= lo && tau <= hi && p.sup.iter().all(|s| *s > 0.0)
            })
            .collect()
    };
    let decades = |pts: &[&TracePoint]| -> f64 {
        if pts.len() < 2 {
            return 0.0;
        }
        let taus = pts.iter().map(|p| t_est - p.t);
        let (mn, mx) = taus.fold((f64::INFINITY, 0.0f64), |(a, b), x| (a.min(x), b.max(x)));
        (mx / mn).log10()
    };
    let mut pts = pick(hi);
    while (decades(&pts) < 0.5 || pts.len() < 5) && hi < 1.0 {
        hi = (hi * 2.0).min(1.0);
        pts = pick(hi);
        notes.push(format!("window widened to T - t <= {hi} T"));
    }
    if decades(&pts) < 0.5 || pts.len() < 5 {
        bail!(FitQuality, "window covers {:.2} decades with {} samples", decades(&pts), pts.len());
    }
    let x: Vec<f64> = pts.iter().map(|p| (t_est - p.t).ln()).collect();
    let mut fitted = Vec::with_capacity(k);
    let mut sup_c = Vec::with_capacity(k);
    let mut inf_c = Vec::with_capacity(k);
    for c in 0..k {
        let y: Vec<f64> = pts.iter().map(|p| p.sup[c].ln()).collect();
        let (_, slope) = least_squares_line(&x, &y);
        fitted.push(-slope);
        let scaled = pts.iter().map(|p| (t_est - p.t).powf(theory[c]) * p.sup[c]);
        let (mn, mx) = scaled.fold((f64::INFINITY, 0.0f64), |(a, b), s| (a.min(s), b.max(s)));
        sup_c.push(mx);
        inf_c.push(mn);
    }
    if fitted.iter().any(|f| !f.is_finite()) {
        bail!(FitQuality, "non-finite fitted exponent");
    }
    let t_first = pts.first().unwrap().t;
    let t_last = pts.last().unwrap().t;
    Ok(BlowupReport {
        t_est,
        uncertainty: time.uncertainty,
        window: (t_first, t_last),
        points: pts.len(),
        ratio: fitted.iter().zip(&theory).map(|(f, t)| f / t).collect(),
        fitted_exp: fitted,
        theory_exp: theory,
        empirical_limsup: sup_c,
        empirical_liminf: inf_c,
        scaling_only: matches!(spec.nonlinearity, Nonlinearity::KComponent { .. }),
        windowed_norms: None,
        notes,
    })
}

/// `|||u_i(t)|||_{r, rho(t)}` with `rho(t) = sqrt(T - t)` over the run's
/// snapshots, scaled by `(T - t)^{(N/2)(1/r_i* - 1/r)}`.
pub fn windowed_norm_history(run: &SolveResult, spec: &SystemSpec, t_est: f64, r: f64) -> Result<WindowedHistory> {
    let crit = critical_r(spec);
    let Some(r_star) = crit.r_star else {
        bail!(Domain, "critical indices undefined: {}", crit.reason.unwrap_or_default());
    };
    let min_star = r_star.iter().copied().fold(f64::INFINITY, f64::min);
    let ell_star = (1.0 / min_star).max(1.0);
    if let Some(rs) = r_star.iter().find(|rs| !(r > ell_star * **rs)) {
        bail!(Domain, "index r = {r} must exceed l* r* = {}", ell_star * rs);
    }
    if run.snapshots.is_empty() {
        bail!(Config, "run recorded no snapshots");
    }
    let n = spec.dim as f64;
    let inv_r = if r.is_infinite() { 0.0 } else { 1.0 / r };
    let mut samples = Vec::new();
    let mut warnings = Vec::new();
    let mut truncated = false;
    for snap in &run.snapshots {
        let tau = t_est - snap.t;
        if !(tau > 0.0) {
            continue;
        }
        let rho = tau.sqrt();
        let mut norms = Vec::with_capacity(snap.fields.len());
        for f in &snap.fields {
            match uloc_norm(f, r, rho) {
                Ok(u) => norms.push(u.norm),
                Err(crate::Error::Resolution(why)) => {
                    truncated = true;
                    warnings.push(format!("series truncated at t = {}: {why}", snap.t));
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if truncated {
            break;
        }
        let scaled: Vec<f64> =
            norms.iter().zip(&r_star).map(|(m, rs)| tau.powf(n / 2.0 * (1.0 / rs - inv_r)) * m).collect();
        let scaled_sum = scaled.iter().sum();
        samples.push(WindowedSample { t: snap.t, rho, norms, scaled, scaled_sum });
    }
    let empirical_liminf = samples.iter().map(|s| s.scaled_sum).fold(f64::INFINITY, f64::min);
    Ok(WindowedHistory { r, r_star, ell_star, samples, empirical_liminf, truncated, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{sample_function, Domain, InitialDatum};
    use crate::mild::{direct_solve, DtController, Reaction};
    use crate::semigroup::{Method, SemigroupEngine};
    use std::sync::Arc;

    fn ode_trace(theta: f64, t_blow: f64, n: usize) -> SolveResult {
        // ||u|| = (T - t)^{-theta}, sampled geometrically toward T
        let mut trace = Vec::new();
        let mut prev = 0.0;
        for i in 0..n {
            let tau = t_blow * 10f64.powf(-6.0 * i as f64 / (n - 1) as f64);
            let t = t_blow - tau;
            let s = tau.powf(-theta);
            trace.push(TracePoint { t, dt: t - prev, sup: vec![s, s] });
            prev = t;
        }
        SolveResult {
            status: SolveStatus::BlowUpSuspected,
            t_grid: vec![],
            components: vec![vec![], vec![]],
            residual: None,
            iterations: n,
            last_time: prev,
            trace,
            snapshots: vec![],
            max_undershoot: 0.0,
            monotone_violation: 0.0,
            notes: vec![],
        }
    }

    #[test]
    fn theory_exponent_examples() {
        let s = SystemSpec::weakly_coupled(2.0, 2.0, 1).unwrap();
        assert_eq!(theory_exponents(&s).unwrap(), vec![1.0, 1.0]);
        let s = SystemSpec::weakly_coupled(3.0, 1.0, 1).unwrap();
        assert_eq!(theory_exponents(&s).unwrap(), vec![2.0, 1.0]);
        let s = SystemSpec::strong_power(1.0, 1.0, 1.0, 1.0, 1).unwrap();
        assert_eq!(theory_exponents(&s).unwrap(), vec![1.0, 1.0]);
        // (0, p, q, 0) reduces to the weakly coupled exponents
        let a = theory_exponents(&SystemSpec::strong_power(0.0, 3.0, 2.0, 0.0, 2).unwrap()).unwrap();
        let b = theory_exponents(&SystemSpec::weakly_coupled(3.0, 2.0, 2).unwrap()).unwrap();
        assert!((a[0] - b[0]).abs() < 1e-15 && (a[1] - b[1]).abs() < 1e-15);
    }

    #[test]
    fn synthetic_power_singularity() {
        for &theta in &[0.5, 1.0, 2.0] {
            let run = ode_trace(theta, 0.7, 200);
            let est = estimate_blowup_time(&run, theta * 1.2, 0).unwrap();
            assert!((est.t_est - 0.7).abs() < 1e-6, "{est:?}");
            let spec = SystemSpec::weakly_coupled(2.0, 2.0, 1).unwrap();
            let rep = fit_rate(&run, &spec, &est, None, 1e-12).unwrap();
            assert!((rep.fitted_exp[0] - theta).abs() < 1e-3 * theta, "{rep:?}");
        }
    }

    #[test]
    fn bounded_run_is_not_a_blowup() {
        let mut run = ode_trace(1.0, 1.0, 50);
        run.status = SolveStatus::Converged;
        assert!(matches!(estimate_blowup_time(&run, 1.0, 0), Err(crate::Error::NotABlowup(_))));
    }

    #[test]
    fn constant_data_blows_up_at_the_ode_time() {
        // u' = v^2, v' = u^2 with u = v = 1 collapses to u' = u^2, T = 1
        let d = Arc::new(Domain::centered(1, 20.0, 201).unwrap());
        let engine = SemigroupEngine::new(d.clone(), Method::SpectralDifference);
        let one = sample_function(&d, &InitialDatum::Constant { value: 1.0 }).unwrap();
        let spec = SystemSpec::weakly_coupled(2.0, 2.0, 1).unwrap();
        let mut ctl = DtController::for_horizon(2.0);
        ctl.snapshot_growth = Some(1.5);
        let run = direct_solve(&Reaction::system(&spec), &[one.clone(), one], &engine, 2.0, &[], &ctl).unwrap();
        assert_eq!(run.status, SolveStatus::BlowUpSuspected);
        let est = estimate_blowup_time(&run, 1.0, 0).unwrap();
        assert!((est.t_est - 1.0).abs() < 0.02, "{est:?}");
        let rep = fit_rate(&run, &spec, &est, None, ctl.dt_min).unwrap();
        assert!((rep.fitted_exp[0] - 1.0).abs() < 0.05, "{rep:?}");
        assert!(rep.empirical_liminf.iter().all(|c| *c > 0.0));
        let hist = windowed_norm_history(&run, &spec, est.t_est, f64::INFINITY).unwrap();
        assert!(hist.empirical_liminf > 0.1, "{hist:?}");
        // r = infinity: the scaled series is (T-t)^{N/(2 r*)} sup u + same for v
        let s = &hist.samples[3];
        let rs = hist.r_star[0];
        let tau = est.t_est - s.t;
        assert!((s.scaled[0] - tau.powf(0.5 / rs) * s.norms[0]).abs() < 1e-12 * s.scaled[0]);
    }

    #[test]
    fn lm_solver_recovers_parameters() {
        let t: Vec<f64> = (0..40).map(|i| 0.9 - 0.5 * 0.8f64.powi(i)).collect();
        let y: Vec<f64> = t.iter().map(|ti| 3.0 * (1.3 - ti).powf(-0.75)).collect();
        let (c, th, tt) = fit_power_singularity(&t, &y, 1.0, 1.2).unwrap();
        assert!((c - 3f64.ln()).abs() < 1e-8 && (th - 0.75).abs() < 1e-8 && (tt - 1.3).abs() < 1e-8);
    }
}
