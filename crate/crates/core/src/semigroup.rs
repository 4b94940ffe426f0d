//! The Dirichlet heat semigroup on a box.
//!
//! The default engine expands interior values in the sine basis of the box
//! (a type-I discrete sine transform per axis) and damps mode `k` by
//! `exp(-(k pi / L)^2 t)`. That symbol makes sine modes decay exactly but
//! lets discontinuous data ring slightly below zero. The `spectral-fd`
//! variant uses the symbol of the second-order difference Laplacian
//! instead, so `S(t) = exp(t Delta_h)` is exactly positive and order
//! preserving. A Crank-Nicolson engine is kept as an independent
//! cross-check.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::fields::{Domain, Field};
use crate::lorentz;

/// Gauss kernel `(4 pi t)^{-N/2} exp(-|x-y|^2 / 4t)`.
pub fn heat_kernel(x: &[f64], y: &[f64], t: f64) -> Result<f64> {
    if !(t > 0.0) {
        bail!(Domain, "heat kernel needs t > 0, got {t}");
    }
    if x.len() != y.len() {
        bail!(Config, "points have different dimensions");
    }
    let n = x.len() as f64;
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((4.0 * std::f64::consts::PI * t).powf(-n / 2.0) * (-d2 / (4.0 * t)).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    SpectralSine,
    SpectralDifference,
    CrankNicolson,
}

impl std::str::FromStr for Method {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectral" | "spectral-sine" => Ok(Method::SpectralSine),
            "spectral-fd" | "spectral-difference" => Ok(Method::SpectralDifference),
            "crank-nicolson" | "cn" => Ok(Method::CrankNicolson),
            other => bail!(Config, "unknown semigroup method `{other}`"),
        }
    }
}

/// Type-I discrete sine transform of length `m`,
/// `X_k = sum_{n=1}^{m} x_n sin(pi k n / (m+1))`, computed through a complex
/// FFT of length `2(m+1)`. Applying it twice multiplies by `(m+1)/2`.
#[derive(Clone)]
struct Dst1 {
    m: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl Dst1 {
    fn new(m: usize, planner: &mut FftPlanner<f64>) -> Self {
        Dst1 { m, fft: planner.plan_fft_forward(2 * (m + 1)) }
    }

    fn apply(&self, line: &mut [f64], buf: &mut Vec<Complex<f64>>) {
        let m = self.m;
        buf.clear();
        buf.resize(2 * (m + 1), Complex::new(0.0, 0.0));
        for n in 0..m {
            buf[n + 1].re = line[n];
            buf[2 * (m + 1) - 1 - n].re = -line[n];
        }
        self.fft.process(buf);
        for k in 0..m {
            line[k] = -0.5 * buf[k + 1].im;
        }
    }
}

/// Heat semigroup on a fixed domain. Immutable after construction.
#[derive(Clone)]
pub struct SemigroupEngine {
    domain: Arc<Domain>,
    method: Method,
    /// Per-axis eigenvalues for `k = 1..=n-2`.
    axis_eigen: Vec<Vec<f64>>,
    /// Sum of per-axis eigenvalues for every interior mode, row-major.
    eigen: Vec<f64>,
    dst: Vec<Dst1>,
    interior: Vec<usize>,
    shape: Vec<usize>,
    cn_steps: usize,
}

impl std::fmt::Debug for SemigroupEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SemigroupEngine")
            .field("domain", &self.domain)
            .field("method", &self.method)
            .field("modes", &self.eigen.len())
            .finish()
    }
}

/// Result of [`SemigroupEngine::apply_with_stats`].
#[derive(Debug, Clone)]
pub struct Evolved {
    pub field: Field,
    /// Largest negative value removed when clipping a nonnegative evolution.
    pub undershoot: f64,
}

impl SemigroupEngine {
    pub fn new(domain: Arc<Domain>, method: Method) -> Self {
        let mut planner = FftPlanner::new();
        let shape = domain.interior_shape();
        let axis_eigen: Vec<Vec<f64>> = (0..domain.dim())
            .map(|a| {
                let l = domain.length(a);
                let h = domain.spacing(a);
                (1..=shape[a])
                    .map(|k| match method {
                        Method::SpectralDifference => {
                            let s = (k as f64 * std::f64::consts::PI * h / (2.0 * l)).sin();
                            4.0 * s * s / (h * h)
                        }
                        _ => (k as f64 * std::f64::consts::PI / l).powi(2),
                    })
                    .collect()
            })
            .collect();
        let total: usize = shape.iter().product();
        let mut eigen = vec![0.0; total];
        for (flat, e) in eigen.iter_mut().enumerate() {
            let mut rest = flat;
            for a in (0..shape.len()).rev() {
                *e += axis_eigen[a][rest % shape[a]];
                rest /= shape[a];
            }
        }
        let dst = shape.iter().map(|&m| Dst1::new(m, &mut planner)).collect();
        let interior = domain.interior_indices();
        SemigroupEngine { domain, method, axis_eigen, eigen, dst, interior, shape, cn_steps: 256 }
    }

    pub fn spectral(domain: Arc<Domain>) -> Self {
        SemigroupEngine::new(domain, Method::SpectralSine)
    }

    /// Number of Crank-Nicolson steps per application.
    pub fn with_cn_steps(mut self, steps: usize) -> Self {
        self.cn_steps = steps.max(4);
        self
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.domain
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn is_spectral(&self) -> bool {
        self.method != Method::CrankNicolson
    }

    /// Per-axis eigenvalues, strictly increasing and positive.
    pub fn axis_eigenvalues(&self) -> &[Vec<f64>] {
        &self.axis_eigen
    }

    /// Eigenvalue of every interior mode, in the order used by [`Self::to_modal`].
    pub fn mode_eigenvalues(&self) -> &[f64] {
        &self.eigen
    }

    /// Interior values of a field in row-major interior order.
    pub fn gather_interior(&self, f: &Field) -> Vec<f64> {
        let v = f.values();
        self.interior.iter().map(|&i| v[i]).collect()
    }

    /// Full-grid values from interior values, boundary zero.
    pub fn scatter_interior(&self, interior: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.domain.len()];
        for (&i, &v) in self.interior.iter().zip(interior) {
            out[i] = v;
        }
        out
    }

    fn transform(&self, data: &mut [f64]) {
        let dim = self.shape.len();
        for axis in 0..dim {
            let m = self.shape[axis];
            let stride: usize = self.shape[axis + 1..].iter().product();
            let dst = &self.dst[axis];
            if stride == 1 {
                data.par_chunks_mut(m).for_each_init(Vec::new, |buf, line| dst.apply(line, buf));
            } else {
                let block = m * stride;
                data.par_chunks_mut(block).for_each_init(
                    || (Vec::new(), vec![0.0; m]),
                    |(buf, line), chunk| {
                        for offset in 0..stride {
                            for k in 0..m {
                                line[k] = chunk[offset + k * stride];
                            }
                            dst.apply(line, buf);
                            for k in 0..m {
                                chunk[offset + k * stride] = line[k];
                            }
                        }
                    },
                );
            }
        }
    }

    /// Sine coefficients of interior values.
    pub fn to_modal(&self, interior: &[f64]) -> Vec<f64> {
        let mut data = interior.to_vec();
        self.transform(&mut data);
        data
    }

    /// Interior values from sine coefficients; inverse of [`Self::to_modal`].
    pub fn from_modal(&self, modal: &[f64]) -> Vec<f64> {
        let mut data = modal.to_vec();
        self.transform(&mut data);
        let scale: f64 = self.shape.iter().map(|&m| 2.0 / (m + 1) as f64).product();
        data.iter_mut().for_each(|v| *v *= scale);
        data
    }

    /// Damps modal coefficients in place by `exp(-lambda t)`.
    pub fn damp_modal(&self, modal: &mut [f64], t: f64) {
        modal.par_iter_mut().zip(self.eigen.par_iter()).for_each(|(c, &l)| *c *= (-l * t).exp());
    }

    /// `S(t)` applied to interior values, without clipping.
    pub fn apply_interior(&self, interior: &[f64], t: f64) -> Vec<f64> {
        if t == 0.0 {
            return interior.to_vec();
        }
        match self.method {
            Method::SpectralSine | Method::SpectralDifference => {
                let mut modal = self.to_modal(interior);
                self.damp_modal(&mut modal, t);
                self.from_modal(&modal)
            }
            Method::CrankNicolson => self.crank_nicolson(interior, t),
        }
    }

    /// `S(t) phi`. Negative ringing of a nonnegative input is clipped to zero.
    pub fn apply(&self, phi: &Field, t: f64) -> Result<Field> {
        Ok(self.apply_with_stats(phi, t)?.field)
    }

    pub fn apply_with_stats(&self, phi: &Field, t: f64) -> Result<Evolved> {
        if !(t >= 0.0) {
            bail!(Domain, "semigroup time must be nonnegative, got {t}");
        }
        if phi.domain() != &self.domain {
            bail!(Config, "field domain does not match the engine domain");
        }
        if phi.is_blown_up() {
            bail!(BlownUp, "cannot evolve a blown-up field");
        }
        if phi.boundary_value() != 0.0 {
            bail!(Domain, "semigroup acts on zero-boundary fields only");
        }
        if t == 0.0 {
            return Ok(Evolved { field: phi.clone(), undershoot: 0.0 });
        }
        let out = self.apply_interior(&self.gather_interior(phi), t);
        let mut field = Field::from_interior_unchecked(self.domain.clone(), self.scatter_interior(&out), false);
        let mut undershoot = 0.0;
        if phi.is_nonneg() {
            undershoot = field.clip_negative();
        }
        Ok(Evolved { field, undershoot })
    }

    /// Locally one-dimensional Crank-Nicolson with the second-order
    /// difference Laplacian. The first two steps are replaced by four
    /// backward-Euler half steps to damp the high modes of rough data.
    fn crank_nicolson(&self, interior: &[f64], t: f64) -> Vec<f64> {
        let steps = self.cn_steps;
        let dt = t / steps as f64;
        let mut u = interior.to_vec();
        for _ in 0..4 {
            for axis in 0..self.shape.len() {
                self.line_solve(&mut u, axis, 0.5 * dt, 0.0);
            }
        }
        for _ in 2..steps {
            for axis in 0..self.shape.len() {
                self.line_solve(&mut u, axis, 0.5 * dt, 0.5 * dt);
            }
        }
        u
    }

    /// Solves `(I - a D) x = (I + b D) u` along every line of `axis`.
    fn line_solve(&self, u: &mut [f64], axis: usize, a: f64, b: f64) {
        let m = self.shape[axis];
        let h = self.domain.spacing(axis);
        let ra = a / (h * h);
        let rb = b / (h * h);
        let stride: usize = self.shape[axis + 1..].iter().product();
        let block = m * stride;
        u.par_chunks_mut(block).for_each_init(
            || (vec![0.0; m], vec![0.0; m], vec![0.0; m]),
            |(line, rhs, cp), chunk| {
                for offset in 0..stride {
                    for k in 0..m {
                        line[k] = chunk[offset + k * stride];
                    }
                    for k in 0..m {
                        let left = if k > 0 { line[k - 1] } else { 0.0 };
                        let right = if k + 1 < m { line[k + 1] } else { 0.0 };
                        rhs[k] = line[k] + rb * (left - 2.0 * line[k] + right);
                    }
                    // Thomas algorithm for the constant tridiagonal (-ra, 1+2ra, -ra)
                    let diag = 1.0 + 2.0 * ra;
                    cp[0] = -ra / diag;
                    rhs[0] /= diag;
                    for k in 1..m {
                        let denom = diag + ra * cp[k - 1];
                        cp[k] = -ra / denom;
                        rhs[k] = (rhs[k] + ra * rhs[k - 1]) / denom;
                    }
                    for k in (0..m - 1).rev() {
                        rhs[k] -= cp[k] * rhs[k + 1];
                    }
                    for k in 0..m {
                        chunk[offset + k * stride] = rhs[k];
                    }
                }
            },
        );
    }
}

/// One sample of the smoothing estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingSample {
    pub t: f64,
    pub sup_norm: f64,
    pub ratio: f64,
}

/// `t -> ||S(t) phi||_inf t^{N/(2r)} / |||phi|||_{r,rho}` over `t_grid`.
///
/// The maximum of the returned ratios is the empirical smoothing constant.
pub fn smoothing_ratio(
    engine: &SemigroupEngine,
    phi: &Field,
    r: f64,
    rho: f64,
    t_grid: &[f64],
) -> Result<Vec<SmoothingSample>> {
    for &t in t_grid {
        if !(t > 0.0 && t <= rho * rho) {
            bail!(Range, "smoothing times must lie in (0, rho^2] = (0, {}], got {t}", rho * rho);
        }
    }
    let norm = lorentz::uloc_norm(phi, r, rho)?.norm;
    let sup = phi.linf_norm();
    if norm == 0.0 {
        if sup != 0.0 {
            bail!(Internal, "uniformly local norm vanishes for a nonzero field");
        }
        return Ok(t_grid.iter().map(|&t| SmoothingSample { t, sup_norm: 0.0, ratio: 0.0 }).collect());
    }
    let n = engine.domain().dim() as f64;
    t_grid
        .par_iter()
        .map(|&t| {
            let s = engine.apply(phi, t)?.linf_norm();
            let weight = if r.is_infinite() { 1.0 } else { t.powf(n / (2.0 * r)) };
            Ok(SmoothingSample { t, sup_norm: s, ratio: s * weight / norm })
        })
        .collect()
}

/// `count` points log-spaced on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![hi];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{sample_function, InitialDatum};
    use std::f64::consts::PI;

    fn naive_dst(x: &[f64]) -> Vec<f64> {
        let m = x.len();
        (1..=m)
            .map(|k| (1..=m).map(|n| x[n - 1] * (PI * (k * n) as f64 / (m + 1) as f64).sin()).sum())
            .collect()
    }

    #[test]
    fn dst_matches_direct_sum() {
        let mut planner = FftPlanner::new();
        let x: Vec<f64> = (0..13).map(|i| ((i * 7 % 5) as f64 - 1.3).sin()).collect();
        let dst = Dst1::new(13, &mut planner);
        let mut y = x.clone();
        dst.apply(&mut y, &mut Vec::new());
        for (a, b) in y.iter().zip(naive_dst(&x)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_values() {
        assert!((heat_kernel(&[0.3], &[0.3], 1.0 / (4.0 * PI)).unwrap() - 1.0).abs() < 1e-15);
        let v = heat_kernel(&[0.0], &[2.0], 1.0).unwrap();
        assert!((v - (4.0 * PI).powf(-0.5) * (-1.0f64).exp()).abs() < 1e-15);
        let v3 = heat_kernel(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], 0.7).unwrap();
        assert!((v3 - (4.0 * PI * 0.7).powf(-1.5)).abs() < 1e-14);
        assert!(heat_kernel(&[0.0], &[0.0], 0.0).is_err());
    }

    #[test]
    fn first_mode_decays_exactly() {
        for dim in 1..=2 {
            let d = Arc::new(Domain::new(&vec![(0.0, 2.0); dim], &vec![33; dim]).unwrap());
            let engine = SemigroupEngine::spectral(d.clone());
            let phi = Field::from_fn(d.clone(), true, |x| x.iter().map(|xi| (PI * xi / 2.0).sin()).product()).unwrap();
            let t = 0.37;
            let out = engine.apply(&phi, t).unwrap();
            let decay = (-(dim as f64) * (PI / 2.0).powi(2) * t).exp();
            for (a, b) in out.values().iter().zip(phi.values()) {
                assert!((a - decay * b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_time_is_identity_and_negative_time_errors() {
        let d = Arc::new(Domain::centered(1, 1.0, 17).unwrap());
        let engine = SemigroupEngine::spectral(d.clone());
        let phi = sample_function(&d, &InitialDatum::Indicator { height: 1.0, radius: 0.5, center: vec![] }).unwrap();
        assert_eq!(engine.apply(&phi, 0.0).unwrap(), phi);
        assert!(engine.apply(&phi, -1.0).is_err());
    }

    #[test]
    fn crank_nicolson_agrees_with_spectral_on_smooth_data() {
        let d = Arc::new(Domain::centered(2, 3.0, 81).unwrap());
        let phi = sample_function(&d, &InitialDatum::GaussianBump { amplitude: 1.0, width: 0.5, center: vec![] }).unwrap();
        let a = SemigroupEngine::spectral(d.clone()).apply(&phi, 0.2).unwrap();
        let b = SemigroupEngine::new(d.clone(), Method::CrankNicolson).apply(&phi, 0.2).unwrap();
        let diff = a.combine(1.0, &b, -1.0).unwrap().linf_norm();
        assert!(diff < 2e-3 * a.linf_norm(), "diff {diff}");
    }

    #[test]
    fn difference_symbol_is_positive_on_rough_data() {
        let d = Arc::new(Domain::centered(1, 4.0, 129).unwrap());
        let phi = sample_function(&d, &InitialDatum::Indicator { height: 1.0, radius: 1.0, center: vec![] }).unwrap();
        let fd = SemigroupEngine::new(d.clone(), Method::SpectralDifference);
        let sine = SemigroupEngine::spectral(d.clone());
        let mut ringing = 0.0f64;
        for t in log_grid(1e-4, 1.0, 20) {
            assert!(fd.apply_with_stats(&phi, t).unwrap().undershoot < 1e-14);
            ringing = ringing.max(sine.apply_with_stats(&phi, t).unwrap().undershoot);
        }
        assert!(ringing > 1e-3);
    }

    #[test]
    fn difference_symbol_matches_crank_nicolson() {
        let d = Arc::new(Domain::centered(1, 2.0, 65).unwrap());
        let phi = sample_function(&d, &InitialDatum::Indicator { height: 1.0, radius: 0.5, center: vec![] }).unwrap();
        let a = SemigroupEngine::new(d.clone(), Method::SpectralDifference).apply(&phi, 0.1).unwrap();
        let b = SemigroupEngine::new(d.clone(), Method::CrankNicolson).with_cn_steps(4000).apply(&phi, 0.1).unwrap();
        assert!(a.combine(1.0, &b, -1.0).unwrap().linf_norm() < 1e-5);
    }

    #[test]
    fn semigroup_law_three_dims() {
        let d = Arc::new(Domain::centered(3, 2.0, 17).unwrap());
        let engine = SemigroupEngine::spectral(d.clone());
        let phi = sample_function(&d, &InitialDatum::GaussianBump { amplitude: 2.0, width: 0.4, center: vec![0.1, 0.0, -0.2] })
            .unwrap();
        let a = engine.apply(&engine.apply(&phi, 0.05).unwrap(), 0.1).unwrap();
        let b = engine.apply(&phi, 0.15).unwrap();
        assert!(a.combine(1.0, &b, -1.0).unwrap().linf_norm() <= 1e-10 * phi.linf_norm());
    }

    #[test]
    fn smoothing_of_zero_is_zero() {
        let d = Arc::new(Domain::centered(1, 2.0, 65).unwrap());
        let engine = SemigroupEngine::spectral(d.clone());
        let s = smoothing_ratio(&engine, &Field::zeros(d), 2.0, 1.0, &[0.1, 0.5, 1.0]).unwrap();
        assert!(s.iter().all(|x| x.ratio == 0.0));
    }

    #[test]
    fn smoothing_times_beyond_rho_squared_are_rejected() {
        let d = Arc::new(Domain::centered(1, 2.0, 65).unwrap());
        let engine = SemigroupEngine::spectral(d.clone());
        assert!(smoothing_ratio(&engine, &Field::zeros(d), 2.0, 0.5, &[0.3]).is_err());
    }
}
