//! Mild solutions: monotone Picard iteration of the Duhamel map, a
//! Strang-split direct solver used as an independent check, the
//! exponential transform for the exponential system, and the pointwise
//! comparison against a supersolution profile.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::exponents::{Nonlinearity, SystemSpec};
use crate::fields::{Domain, Field, PointwiseMap, GRID_TOL_REL};
use crate::semigroup::SemigroupEngine;
use crate::supersolution::{evaluate_profile, SupersolutionProfile};

/// Right-hand side of a reaction-diffusion problem, without the Laplacian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reaction {
    System { spec: SystemSpec },
    /// Scalar majorant `alpha w^A + beta w^B`.
    Majorant { alpha: f64, beta: f64, a: f64, b: f64 },
}

/// `x^e` with `0^0 = 1` and negative dust treated as zero.
#[inline]
fn pw(x: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else if x <= 0.0 {
        0.0
    } else if e == 1.0 {
        x
    } else if e == 2.0 {
        x * x
    } else {
        x.powf(e)
    }
}

impl Reaction {
    pub fn system(spec: &SystemSpec) -> Self {
        Reaction::System { spec: spec.clone() }
    }

    pub fn components(&self) -> usize {
        match self {
            Reaction::System { spec } => spec.components(),
            Reaction::Majorant { .. } => 1,
        }
    }

    /// Whether solutions stay nonnegative for nonnegative data.
    pub fn preserves_sign(&self) -> bool {
        !matches!(self, Reaction::System { spec } if matches!(spec.nonlinearity, Nonlinearity::StrongExp { .. }))
    }

    /// Source terms for every component, evaluated pointwise.
    pub fn eval(&self, states: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let zip2 = |a: &[f64], b: &[f64], f: &(dyn Fn(f64, f64) -> f64 + Sync)| -> Vec<f64> {
            a.par_iter().zip(b.par_iter()).map(|(&x, &y)| f(x, y)).collect()
        };
        match self {
            Reaction::Majorant { alpha, beta, a, b } => {
                vec![states[0].par_iter().map(|&w| alpha * pw(w, *a) + beta * pw(w, *b)).collect()]
            }
            Reaction::System { spec } => match &spec.nonlinearity {
                Nonlinearity::WeaklyCoupled { p, q } => vec![
                    states[1].par_iter().map(|&v| pw(v, *p)).collect(),
                    states[0].par_iter().map(|&u| pw(u, *q)).collect(),
                ],
                Nonlinearity::KComponent { p } => {
                    let k = p.len();
                    (0..k).map(|i| states[(i + 1) % k].par_iter().map(|&x| pw(x, p[i])).collect()).collect()
                }
                Nonlinearity::StrongPower { p1, p2, q1, q2 } => vec![
                    zip2(&states[0], &states[1], &|u, v| pw(u, *p1) * pw(v, *p2)),
                    zip2(&states[0], &states[1], &|u, v| pw(u, *q1) * pw(v, *q2)),
                ],
                Nonlinearity::StrongExp { p1, p2, q1, q2 } => vec![
                    zip2(&states[0], &states[1], &|u, v| (p1 * u + p2 * v).exp()),
                    zip2(&states[0], &states[1], &|u, v| (q1 * u + q2 * v).exp()),
                ],
            },
        }
    }
}

/// Geometric time grid `0, t_min, ..., horizon` with `per_decade` nodes per
/// decade over `decades` decades below the horizon.
pub fn time_grid(horizon: f64, per_decade: usize, decades: f64) -> Result<Vec<f64>> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        bail!(Range, "horizon must be positive and finite, got {horizon}");
    }
    if per_decade == 0 || !(decades > 0.0) {
        bail!(Config, "time grid needs positive nodes per decade and decades");
    }
    let count = (decades * per_decade as f64).ceil() as usize;
    let t_min = horizon * 10f64.powf(-decades);
    let mut grid = vec![0.0];
    grid.extend((0..=count).map(|k| t_min * 10f64.powf(decades * k as f64 / count as f64)));
    *grid.last_mut().unwrap() = horizon;
    Ok(grid)
}

/// Weights `(w_left, w_right)` with
/// `int_0^h e^{-lambda (h - s)} f(s) ds = w_left f(0) + w_right f(h)`
/// for `f` linear on `[0, h]`.
#[inline]
fn linear_source_weights(lambda: f64, h: f64) -> (f64, f64) {
    let z = lambda * h;
    let (e1, e2) = if z < 1e-3 {
        (1.0 - z / 2.0 + z * z / 6.0 - z * z * z / 24.0, 0.5 - z / 6.0 + z * z / 24.0 - z * z * z / 120.0)
    } else {
        let em = (-z).exp_m1();
        (-em / z, (z + em) / (z * z))
    };
    (h * (e1 - e2), h * e2)
}

/// `S(t_j) u0 + int_0^{t_j} S(t_j - s) f(s) ds` at every node of `t_grid`,
/// with `f` interpolated linearly in time between nodes and the semigroup
/// applied exactly in modal space. Inputs and outputs are interior values.
pub fn duhamel_sweep(
    engine: &SemigroupEngine,
    t_grid: &[f64],
    initial: Option<&[f64]>,
    sources: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    if !engine.is_spectral() {
        bail!(Unsupported, "the Duhamel sweep needs a spectral engine");
    }
    if sources.len() != t_grid.len() || t_grid.first() != Some(&0.0) {
        bail!(Config, "sources must be given at every node of a time grid starting at 0");
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        bail!(Config, "time grid must be strictly increasing");
    }
    let lambda = engine.mode_eigenvalues();
    let modal_src: Vec<Vec<f64>> = sources.iter().map(|s| engine.to_modal(s)).collect();
    let init_modal = initial.map(|u0| engine.to_modal(u0));
    let mut out = Vec::with_capacity(t_grid.len());
    let mut acc = vec![0.0; lambda.len()];
    let mut total = acc.clone();
    for j in 0..t_grid.len() {
        if j > 0 {
            let h = t_grid[j] - t_grid[j - 1];
            let (prev, cur) = (&modal_src[j - 1], &modal_src[j]);
            acc.par_iter_mut().enumerate().for_each(|(k, d)| {
                let (wl, wr) = linear_source_weights(lambda[k], h);
                *d = (-lambda[k] * h).exp() * *d + wl * prev[k] + wr * cur[k];
            });
        }
        match &init_modal {
            Some(u0) => {
                let t = t_grid[j];
                total.par_iter_mut().enumerate().for_each(|(k, x)| *x = acc[k] + u0[k] * (-lambda[k] * t).exp());
            }
            None => total.copy_from_slice(&acc),
        }
        out.push(engine.from_modal(&total));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    BlowUpSuspected,
    MaxIter,
}

/// One accepted step of a time-stepping run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: f64,
    pub dt: f64,
    /// Sup norm of each component.
    pub sup: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub fields: Vec<Field>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub t_grid: Vec<f64>,
    /// `components[c][j]` is component `c` at `t_grid[j]`.
    pub components: Vec<Vec<Field>>,
    /// Final relative Picard increment; `None` for time stepping.
    pub residual: Option<f64>,
    pub iterations: usize,
    pub trace: Vec<TracePoint>,
    /// Extra states recorded during rapid growth.
    pub snapshots: Vec<Snapshot>,
    /// Last time the state was resolved.
    pub last_time: f64,
    /// Largest negative value clipped after a semigroup application.
    pub max_undershoot: f64,
    /// Largest decrease between consecutive Picard iterates.
    pub monotone_violation: f64,
    pub notes: Vec<String>,
}

impl SolveResult {
    pub fn u(&self) -> &[Field] {
        &self.components[0]
    }

    pub fn v(&self) -> &[Field] {
        &self.components[self.components.len().min(2) - 1]
    }

    /// Sup norm of component `c` at every node of `t_grid`.
    pub fn sup_series(&self, c: usize) -> Vec<f64> {
        self.components[c].iter().map(Field::linf_norm).collect()
    }

    pub fn is_blowup(&self) -> bool {
        self.status == SolveStatus::BlowUpSuspected
    }
}

/// Picard iterate on a fixed time grid, interior values per component and node.
#[derive(Debug, Clone)]
pub struct IterationState {
    pub n: usize,
    pub t_grid: Arc<Vec<f64>>,
    pub states: Vec<Vec<Vec<f64>>>,
    /// Relative sup-norm change from the previous iterate.
    pub increment: f64,
    pub monotone_ok: bool,
    /// Largest decrease from the previous iterate (absolute).
    pub monotone_violation: f64,
    pub undershoot: f64,
    /// Sources `F(u_{n-1})` behind the current iterate; zero for the seed.
    pub sources: Vec<Vec<Vec<f64>>>,
}

impl IterationState {
    fn sup(&self) -> f64 {
        self.states.iter().flatten().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn field(&self, domain: &Arc<Domain>, engine: &SemigroupEngine, c: usize, j: usize) -> Field {
        Field::from_interior_unchecked(domain.clone(), engine.scatter_interior(&self.states[c][j]), false)
    }
}

fn check_data(engine: &SemigroupEngine, data: &[Field], reaction: &Reaction) -> Result<Vec<Vec<f64>>> {
    if data.len() != reaction.components() {
        bail!(Config, "expected {} initial fields, got {}", reaction.components(), data.len());
    }
    data.iter()
        .map(|f| {
            if f.domain() != engine.domain() {
                bail!(Config, "initial field domain does not match the engine domain");
            }
            if f.is_blown_up() {
                bail!(BlownUp, "initial field is not finite");
            }
            if reaction.preserves_sign() && !f.is_nonneg() {
                bail!(Domain, "initial data must be nonnegative");
            }
            Ok(engine.gather_interior(f))
        })
        .collect()
}

fn clip(v: &mut [f64]) -> f64 {
    let mut worst = 0.0f64;
    for x in v.iter_mut() {
        if *x < 0.0 {
            worst = worst.max(-*x);
            *x = 0.0;
        }
    }
    worst
}

/// First Picard iterate: `S(t) u_0` for each component.
pub fn picard_seed(
    reaction: &Reaction,
    data: &[Field],
    engine: &SemigroupEngine,
    t_grid: &[f64],
) -> Result<IterationState> {
    let init = check_data(engine, data, reaction)?;
    let zero = vec![vec![0.0; engine.domain().interior_len()]; t_grid.len()];
    let mut undershoot = 0.0f64;
    let mut states = Vec::with_capacity(init.len());
    for u0 in &init {
        let mut s = duhamel_sweep(engine, t_grid, Some(u0), &zero)?;
        if reaction.preserves_sign() {
            s.iter_mut().for_each(|x| undershoot = undershoot.max(clip(x)));
        }
        states.push(s);
    }
    Ok(IterationState {
        n: 1,
        t_grid: Arc::new(t_grid.to_vec()),
        states,
        increment: f64::INFINITY,
        monotone_ok: true,
        monotone_violation: 0.0,
        undershoot,
        sources: vec![zero; init.len()],
    })
}

/// One Picard step `u_{n+1}(t) = S(t) u_0 + int_0^t S(t-s) F(u_n(s)) ds`,
/// computed as `u_n` plus the Duhamel term of `F(u_n) - F(u_{n-1})`.
/// For sign-preserving reactions negative parts of that increment are
/// measured as the monotonicity violation and removed, so rounding in
/// small values never reaches a non-Lipschitz power twice.
/// A non-finite iterate is reported as [`Error::BlownUp`].
pub fn picard_step(
    state: &IterationState,
    reaction: &Reaction,
    data: &[Field],
    engine: &SemigroupEngine,
) -> Result<IterationState> {
    check_data(engine, data, reaction)?;
    let t_grid = &state.t_grid;
    let nodes = t_grid.len();
    let k = reaction.components();
    // sources[c][j]
    let mut sources = vec![Vec::with_capacity(nodes); k];
    for j in 0..nodes {
        let at_node: Vec<Vec<f64>> = (0..k).map(|c| state.states[c][j].clone()).collect();
        for (c, s) in reaction.eval(&at_node).into_iter().enumerate() {
            sources[c].push(s);
        }
    }
    if sources.iter().flatten().flatten().any(|v| !v.is_finite()) {
        bail!(BlownUp, "source overflowed at Picard iterate {}", state.n);
    }
    let sign = reaction.preserves_sign();
    let mut states = Vec::with_capacity(k);
    let (mut diff, mut drop) = (0.0f64, 0.0f64);
    for c in 0..k {
        let delta: Vec<Vec<f64>> = sources[c]
            .iter()
            .zip(&state.sources[c])
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect();
        let inc = duhamel_sweep(engine, t_grid, None, &delta)?;
        let mut s = state.states[c].clone();
        for (row, di) in s.iter_mut().zip(&inc) {
            for (x, d) in row.iter_mut().zip(di) {
                if sign && *d < 0.0 {
                    drop = drop.max(-d);
                } else {
                    *x += d;
                    diff = diff.max(d.abs());
                }
            }
        }
        states.push(s);
    }
    let mut next = IterationState {
        n: state.n + 1,
        t_grid: t_grid.clone(),
        states,
        increment: 0.0,
        monotone_ok: true,
        monotone_violation: 0.0,
        undershoot: state.undershoot,
        sources,
    };
    let scale = next.sup();
    if !scale.is_finite() {
        bail!(BlownUp, "Picard iterate {} is not finite", next.n);
    }
    next.increment = if scale > 0.0 { diff / scale } else { 0.0 };
    next.monotone_violation = drop;
    next.monotone_ok = drop <= GRID_TOL_REL * scale.max(f64::MIN_POSITIVE);
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardSettings {
    pub max_iter: usize,
    pub tol_solve: f64,
    /// Iterates above `blowup_factor` times the data scale count as divergence.
    pub blowup_factor: f64,
}

impl Default for PicardSettings {
    fn default() -> Self {
        PicardSettings { max_iter: 200, tol_solve: 1e-6, blowup_factor: 1e8 }
    }
}

fn data_scale(data: &[Field]) -> f64 {
    data.iter().map(Field::linf_norm).sum::<f64>().max(1.0)
}

/// Minimal solution as the limit of the Picard iterates started from
/// `S(t) u_0`. Monotonicity is asserted at every step.
pub fn monotone_solve(
    reaction: &Reaction,
    data: &[Field],
    engine: &SemigroupEngine,
    t_grid: &[f64],
    settings: &PicardSettings,
) -> Result<SolveResult> {
    if !(settings.tol_solve > 0.0) || settings.max_iter == 0 {
        bail!(Config, "Picard tolerance and iteration cap must be positive");
    }
    let threshold = settings.blowup_factor * data_scale(data);
    let mut state = picard_seed(reaction, data, engine, t_grid)?;
    let mut status = SolveStatus::MaxIter;
    let mut worst_drop = 0.0f64;
    let mut notes = Vec::new();
    while state.n < settings.max_iter {
        let next = match picard_step(&state, reaction, data, engine) {
            Ok(next) => next,
            Err(Error::BlownUp(why)) => {
                notes.push(why);
                status = SolveStatus::BlowUpSuspected;
                break;
            }
            Err(e) => return Err(e),
        };
        if next.sup() > threshold {
            notes.push(format!("iterate {} exceeded {threshold:e}", next.n));
            state = next;
            status = SolveStatus::BlowUpSuspected;
            break;
        }
        if !next.monotone_ok {
            bail!(
                Internal,
                "Picard iterate {} decreased by {:e}; quadrature and grid are inconsistent",
                next.n,
                next.monotone_violation
            );
        }
        worst_drop = worst_drop.max(next.monotone_violation);
        state = next;
        log::debug!("picard iterate {} increment {:e}", state.n, state.increment);
        if state.increment <= settings.tol_solve {
            status = SolveStatus::Converged;
            break;
        }
    }
    if state.n == 1 && state.sup() == 0.0 && status == SolveStatus::MaxIter {
        status = SolveStatus::Converged;
    }
    let domain = engine.domain().clone();
    let k = reaction.components();
    let components: Vec<Vec<Field>> = (0..k)
        .map(|c| (0..t_grid.len()).map(|j| state.field(&domain, engine, c, j).with_sign(reaction)).collect())
        .collect();
    let trace = (0..t_grid.len())
        .map(|j| TracePoint {
            t: t_grid[j],
            dt: if j == 0 { 0.0 } else { t_grid[j] - t_grid[j - 1] },
            sup: (0..k).map(|c| components[c][j].linf_norm()).collect(),
        })
        .collect();
    Ok(SolveResult {
        status,
        t_grid: t_grid.to_vec(),
        components,
        residual: Some(state.increment),
        iterations: state.n,
        trace,
        snapshots: Vec::new(),
        last_time: *t_grid.last().unwrap(),
        max_undershoot: state.undershoot,
        monotone_violation: worst_drop,
        notes,
    })
}

trait WithSign {
    fn with_sign(self, reaction: &Reaction) -> Field;
}

impl WithSign for Field {
    fn with_sign(self, reaction: &Reaction) -> Field {
        if reaction.preserves_sign() {
            let domain = self.domain().clone();
            Field::from_interior_unchecked(domain, self.into_values(), true)
        } else {
            self
        }
    }
}

/// Step-size control for [`direct_solve`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DtController {
    pub dt_init: f64,
    pub dt_max: f64,
    pub dt_min: f64,
    /// Largest accepted relative change of any component per step.
    pub growth_cap: f64,
    /// Sup norm, relative to the data scale, above which a forced step
    /// below `dt_min` is declared blow-up.
    pub blowup_factor: f64,
    /// Record a snapshot whenever the summed sup norm grows by this factor.
    pub snapshot_growth: Option<f64>,
}

impl DtController {
    pub fn for_horizon(horizon: f64) -> Self {
        DtController {
            dt_init: horizon / 400.0,
            dt_max: horizon / 400.0,
            dt_min: horizon * 1e-10,
            growth_cap: 0.1,
            blowup_factor: 1e8,
            snapshot_growth: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_init && self.dt_init <= self.dt_max) {
            bail!(Config, "need 0 < dt_min <= dt_init <= dt_max");
        }
        if !(self.growth_cap > 0.0 && self.blowup_factor > 1.0) {
            bail!(Config, "growth cap must be positive and blow-up factor above 1");
        }
        if let Some(g) = self.snapshot_growth {
            if !(g > 1.0) {
                bail!(Config, "snapshot growth factor must exceed 1");
            }
        }
        Ok(())
    }
}

type Rhs<'a> = dyn Fn(&[Vec<f64>]) -> Vec<Vec<f64>> + Sync + 'a;

fn axpy_states(x: &[Vec<f64>], a: f64, k: &[Vec<f64>]) -> Vec<Vec<f64>> {
    x.iter()
        .zip(k)
        .map(|(xc, kc)| xc.par_iter().zip(kc.par_iter()).map(|(x, k)| x + a * k).collect())
        .collect()
}

fn rk4(rhs: &Rhs, x: &[Vec<f64>], dt: f64) -> Vec<Vec<f64>> {
    let k1 = rhs(x);
    let k2 = rhs(&axpy_states(x, dt / 2.0, &k1));
    let k3 = rhs(&axpy_states(x, dt / 2.0, &k2));
    let k4 = rhs(&axpy_states(x, dt, &k3));
    x.iter()
        .enumerate()
        .map(|(c, xc)| {
            xc.par_iter()
                .enumerate()
                .map(|(i, v)| v + dt / 6.0 * (k1[c][i] + 2.0 * k2[c][i] + 2.0 * k3[c][i] + k4[c][i]))
                .collect()
        })
        .collect()
}

fn sup_of(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

struct Stepper<'a> {
    engine: &'a SemigroupEngine,
    rhs: &'a Rhs<'a>,
    clip_negative: bool,
}

impl Stepper<'_> {
    /// Strang step: half diffusion, reaction by RK4, half diffusion.
    fn step(&self, x: &[Vec<f64>], dt: f64) -> (Vec<Vec<f64>>, f64) {
        let mut undershoot = 0.0f64;
        let mut diffuse = |s: &[Vec<f64>]| -> Vec<Vec<f64>> {
            s.iter()
                .map(|c| {
                    let mut out = self.engine.apply_interior(c, dt / 2.0);
                    if self.clip_negative {
                        undershoot = undershoot.max(clip(&mut out));
                    }
                    out
                })
                .collect()
        };
        let half = diffuse(x);
        let reacted = rk4(self.rhs, &half, dt);
        let out = diffuse(&reacted);
        (out, undershoot)
    }
}

/// Integrates `x_t = Lx + rhs(x)` by Strang splitting with adaptive steps.
/// Returns the result in the layout of [`SolveResult`], on interior values.
fn integrate(
    stepper: &Stepper,
    init: Vec<Vec<f64>>,
    horizon: f64,
    output_times: &[f64],
    ctl: &DtController,
    scale: f64,
) -> Result<Integrated> {
    ctl.validate()?;
    if !(horizon > 0.0) {
        bail!(Range, "horizon must be positive, got {horizon}");
    }
    if output_times.iter().any(|&t| !(0.0..=horizon).contains(&t)) || output_times.windows(2).any(|w| w[1] <= w[0]) {
        bail!(Config, "output times must increase within [0, horizon]");
    }
    let threshold = ctl.blowup_factor * scale;
    let tol = GRID_TOL_REL;
    let mut x = init;
    let mut t = 0.0;
    let mut dt = ctl.dt_init;
    let mut out = Integrated::default();
    let sups = |x: &[Vec<f64>]| x.iter().map(|c| sup_of(c)).collect::<Vec<f64>>();
    out.trace.push(TracePoint { t: 0.0, dt: 0.0, sup: sups(&x) });
    let mut next_out = 0;
    while next_out < output_times.len() && output_times[next_out] == 0.0 {
        out.outputs.push((0.0, x.clone()));
        next_out += 1;
    }
    let mut last_snap = sups(&x).iter().sum::<f64>();
    if ctl.snapshot_growth.is_some() {
        out.snapshots.push((0.0, x.clone()));
    }
    while t < horizon {
        let target = if next_out < output_times.len() { output_times[next_out] } else { horizon };
        let mut h = dt.min(target - t);
        let landing = h == target - t;
        let mut halved = false;
        let (y, under, forced, growth) = loop {
            let (y, under) = stepper.step(&x, h);
            let finite = y.iter().flatten().all(|v| v.is_finite());
            let growth = if finite {
                x.iter()
                    .zip(&y)
                    .map(|(a, b)| {
                        let d = a.iter().zip(b).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
                        d / sup_of(a).max(sup_of(b)).max(1e-2 * scale)
                    })
                    .fold(0.0, f64::max)
            } else {
                f64::INFINITY
            };
            if growth <= ctl.growth_cap {
                break (y, under, false, growth);
            }
            if h / 2.0 >= ctl.dt_min {
                h /= 2.0;
                halved = true;
                continue;
            }
            break (y, under, true, growth);
        };
        let total: f64 = sups(&y).iter().sum();
        if forced && (!total.is_finite() || total > threshold) {
            out.blowup = true;
            out.notes.push(format!("step below dt_min = {:e} at t = {t} with sup {total:e}", ctl.dt_min));
            break;
        }
        if !total.is_finite() {
            out.blowup = true;
            out.notes.push(format!("non-finite state after t = {t}"));
            break;
        }
        if under > tol * total.max(f64::MIN_POSITIVE) {
            bail!(
                Internal,
                "semigroup undershoot {under:e} at t = {t} exceeds the grid tolerance; use the spectral-fd method for rough data"
            );
        }
        out.max_undershoot = out.max_undershoot.max(under);
        if forced {
            out.notes.push(format!("forced step {h:e} at t = {t}"));
        }
        t = if landing && !halved { target } else { t + h };
        x = y;
        out.trace.push(TracePoint { t, dt: h, sup: sups(&x) });
        if let Some(g) = ctl.snapshot_growth {
            if total >= g * last_snap {
                out.snapshots.push((t, x.clone()));
                last_snap = total;
            }
        }
        while next_out < output_times.len() && output_times[next_out] <= t {
            out.outputs.push((t, x.clone()));
            next_out += 1;
        }
        if total > threshold * 1e8 {
            out.blowup = true;
            out.notes.push(format!("sup {total:e} at t = {t} beyond any resolvable scale"));
            break;
        }
        if halved || forced {
            dt = h.max(ctl.dt_min);
        } else if growth < ctl.growth_cap / 4.0 {
            dt = (dt * 1.5).min(ctl.dt_max);
        }
    }
    out.last_time = t;
    Ok(out)
}

#[derive(Default)]
struct Integrated {
    outputs: Vec<(f64, Vec<Vec<f64>>)>,
    snapshots: Vec<(f64, Vec<Vec<f64>>)>,
    trace: Vec<TracePoint>,
    blowup: bool,
    last_time: f64,
    max_undershoot: f64,
    notes: Vec<String>,
}

impl Integrated {
    fn into_result(self, fields: impl Fn(&[f64]) -> Field, k: usize) -> SolveResult {
        let mut components = vec![Vec::with_capacity(self.outputs.len()); k];
        let mut t_grid = Vec::with_capacity(self.outputs.len());
        for (t, states) in &self.outputs {
            t_grid.push(*t);
            for (c, s) in states.iter().enumerate() {
                components[c].push(fields(s));
            }
        }
        let snapshots = self
            .snapshots
            .iter()
            .map(|(t, states)| Snapshot { t: *t, fields: states.iter().map(|s| fields(s)).collect() })
            .collect();
        SolveResult {
            status: if self.blowup { SolveStatus::BlowUpSuspected } else { SolveStatus::Converged },
            t_grid,
            components,
            residual: None,
            iterations: self.trace.len() - 1,
            trace: self.trace,
            snapshots,
            last_time: self.last_time,
            max_undershoot: self.max_undershoot,
            monotone_violation: 0.0,
            notes: self.notes,
        }
    }
}

/// Method-of-lines solve by Strang splitting: exact semigroup half steps
/// around an RK4 reaction step, with the step halved whenever any
/// component changes by more than the growth cap.
pub fn direct_solve(
    reaction: &Reaction,
    data: &[Field],
    engine: &SemigroupEngine,
    horizon: f64,
    output_times: &[f64],
    ctl: &DtController,
) -> Result<SolveResult> {
    let init = check_data(engine, data, reaction)?;
    let rhs = |x: &[Vec<f64>]| reaction.eval(x);
    let stepper = Stepper { engine, rhs: &rhs, clip_negative: reaction.preserves_sign() };
    let run = integrate(&stepper, init, horizon, output_times, ctl, data_scale(data))?;
    let domain = engine.domain().clone();
    let nonneg = reaction.preserves_sign();
    Ok(run.into_result(
        |s| Field::from_interior_unchecked(domain.clone(), engine.scatter_interior(s), nonneg),
        reaction.components(),
    ))
}

/// `|grad a|^2` on interior values with zero Dirichlet data, by fourth
/// order central differences and odd reflection across the boundary.
fn grad_squared(a: &[f64], shape: &[usize], spacing: &[f64]) -> Vec<f64> {
    let dim = shape.len();
    let strides: Vec<usize> = (0..dim).map(|d| shape[d + 1..].iter().product()).collect();
    (0..a.len())
        .into_par_iter()
        .map(|i| {
            let mut g2 = 0.0;
            for d in 0..dim {
                let m = shape[d] as isize;
                let k = ((i / strides[d]) % shape[d]) as isize;
                let at = |off: isize| -> f64 {
                    let j = k + off;
                    // odd reflection about the boundary nodes -1 and m
                    if j == -1 || j == m {
                        0.0
                    } else if j < -1 {
                        -a[(i as isize + (-2 - j - k) * strides[d] as isize) as usize]
                    } else if j > m {
                        -a[(i as isize + (2 * m - j - k) * strides[d] as isize) as usize]
                    } else {
                        a[(i as isize + off * strides[d] as isize) as usize]
                    }
                };
                let h = spacing[d];
                let g = (at(-2) - 8.0 * at(-1) + 8.0 * at(1) - at(2)) / (12.0 * h);
                g2 += g * g;
            }
            g2
        })
        .collect()
}

/// Solves the exponential system through `U = e^u`, `V = e^v`. The
/// unknowns are `U - 1`, `V - 1`, which vanish on the boundary of the
/// truncated box; the transformed equations keep the gradient terms
/// `-|grad U|^2 / U`, so the map back `u = ln U` is exact.
pub fn transform_solve(
    spec: &SystemSpec,
    u0: &Field,
    v0: &Field,
    engine: &SemigroupEngine,
    horizon: f64,
    output_times: &[f64],
    ctl: &DtController,
) -> Result<SolveResult> {
    let Nonlinearity::StrongExp { p1, p2, q1, q2 } = spec.nonlinearity else {
        bail!(Config, "transform mode applies to the exponential system only");
    };
    let reaction = Reaction::system(spec);
    let init: Vec<Vec<f64>> = check_data(engine, &[u0.clone(), v0.clone()], &reaction)?
        .into_iter()
        .map(|x| x.iter().map(|v| v.exp_m1()).collect())
        .collect();
    let domain = engine.domain().clone();
    let shape = domain.interior_shape();
    let spacing: Vec<f64> = (0..domain.dim()).map(|d| domain.spacing(d)).collect();
    let rhs = |x: &[Vec<f64>]| -> Vec<Vec<f64>> {
        let (a, b) = (&x[0], &x[1]);
        let ga = grad_squared(a, &shape, &spacing);
        let gb = grad_squared(b, &shape, &spacing);
        let fa = (0..a.len())
            .into_par_iter()
            .map(|i| {
                let (uu, vv) = (1.0 + a[i], 1.0 + b[i]);
                pw(uu, p1 + 1.0) * pw(vv, p2) - ga[i] / uu
            })
            .collect();
        let fb = (0..b.len())
            .into_par_iter()
            .map(|i| {
                let (uu, vv) = (1.0 + a[i], 1.0 + b[i]);
                pw(uu, q1) * pw(vv, q2 + 1.0) - gb[i] / vv
            })
            .collect();
        vec![fa, fb]
    };
    let stepper = Stepper { engine, rhs: &rhs, clip_negative: false };
    let scale = data_scale(&[u0.clone(), v0.clone()]);
    let mut run = integrate(&stepper, init, horizon, output_times, ctl, scale.exp())?;
    if run.outputs.iter().chain(&run.snapshots).flat_map(|(_, s)| s.iter().flatten()).any(|&x| x <= -1.0) {
        bail!(Internal, "transformed variable left the range U > 0");
    }
    run.notes.push("transformed variables equal 1 on the boundary of the truncated box".into());
    Ok(run.into_result(
        |s| {
            let back: Vec<f64> = s.iter().map(|x| x.ln_1p()).collect();
            Field::from_interior_unchecked(domain.clone(), engine.scatter_interior(&back), false)
        },
        2,
    ))
}

/// Largest relative sup-norm difference between two runs at their common
/// output times, per component relative to the first run's largest sup norm.
pub fn relative_sup_difference(a: &SolveResult, b: &SolveResult) -> Result<f64> {
    if a.components.len() != b.components.len() {
        bail!(Config, "runs have different numbers of components");
    }
    let mut worst = 0.0f64;
    let mut common = 0;
    for (ja, ta) in a.t_grid.iter().enumerate() {
        let Some(jb) = b.t_grid.iter().position(|tb| (tb - ta).abs() <= 1e-12 * ta.abs().max(1.0)) else {
            continue;
        };
        common += 1;
        for c in 0..a.components.len() {
            let scale = a.components[c].iter().map(Field::linf_norm).fold(0.0, f64::max);
            let d = a.components[c][ja].combine(1.0, &b.components[c][jb], -1.0)?.linf_norm();
            if scale > 0.0 {
                worst = worst.max(d / scale);
            } else {
                worst = worst.max(d);
            }
        }
    }
    if common == 0 {
        bail!(Config, "runs share no output times");
    }
    Ok(worst)
}

/// Result of [`comparison_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// `max (u^alpha - w)_+` relative to the profile's sup norm at that time.
    pub violation_u: f64,
    pub violation_v: f64,
    pub worst_time: f64,
    pub worst_index: usize,
    pub tol: f64,
    pub pass: bool,
}

/// Checks `u^alpha <= w` and `v^beta <= w` at every positive time of the
/// solution grid, with `w` the supersolution profile.
pub fn comparison_check(
    solution: &SolveResult,
    profile: &SupersolutionProfile,
    engine: &SemigroupEngine,
    tol: f64,
) -> Result<ComparisonReport> {
    if solution.components.len() != 2 {
        bail!(Config, "comparison needs a two-component solution");
    }
    if solution.u().first().map(|f| f.domain()) != Some(profile.w0.domain()) {
        bail!(Config, "solution and profile live on different grids");
    }
    let mut rep = ComparisonReport {
        violation_u: 0.0,
        violation_v: 0.0,
        worst_time: 0.0,
        worst_index: 0,
        tol,
        pass: true,
    };
    let mut worst = 0.0f64;
    for (j, &t) in solution.t_grid.iter().enumerate() {
        if t <= 0.0 || t > profile.horizon {
            continue;
        }
        let w = evaluate_profile(profile, engine, t)?;
        let scale = w.linf_norm().max(f64::MIN_POSITIVE);
        for (c, weight) in [(0usize, profile.alpha), (1, profile.beta)] {
            let lifted = solution.components[c][j].map(PointwiseMap::Power(weight))?;
            let (excess, idx) = lifted.max_excess_over(&w);
            let rel = excess.max(0.0) / scale;
            if c == 0 {
                rep.violation_u = rep.violation_u.max(rel);
            } else {
                rep.violation_v = rep.violation_v.max(rel);
            }
            if rel > worst {
                worst = rel;
                rep.worst_time = t;
                rep.worst_index = idx;
            }
        }
    }
    rep.pass = rep.violation_u <= tol && rep.violation_v <= tol;
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{sample_function, InitialDatum};
    use crate::semigroup::Method;

    fn line(n: usize, hw: f64) -> Arc<Domain> {
        Arc::new(Domain::centered(1, hw, n).unwrap())
    }

    fn gauss(d: &Arc<Domain>, a: f64, w: f64) -> Field {
        sample_function(d, &InitialDatum::GaussianBump { amplitude: a, width: w, center: vec![0.0; d.dim()] }).unwrap()
    }

    #[test]
    fn source_weights_match_quadrature() {
        for &(lambda, h) in &[(0.0, 0.3), (1e-6, 0.1), (2.0, 0.5), (400.0, 0.01), (1e3, 0.05)] {
            let (wl, wr) = linear_source_weights(lambda, h);
            let n = 20000;
            let (mut ql, mut qr) = (0.0, 0.0);
            for i in 0..n {
                let s = (i as f64 + 0.5) * h / n as f64;
                let k = (-lambda * (h - s)).exp() * h / n as f64;
                ql += k * (1.0 - s / h);
                qr += k * s / h;
            }
            assert!((wl - ql).abs() < 1e-7 * h && (wr - qr).abs() < 1e-7 * h, "lambda {lambda}");
        }
        // stiff limit: w_left -> 1/(lambda^2 h), w_right -> 1/lambda - 1/(lambda^2 h)
        let (lambda, h) = (1e5, 0.2);
        let (wl, wr) = linear_source_weights(lambda, h);
        let tail = 1.0 / (lambda * lambda * h);
        assert!((wl - tail).abs() < 1e-9 * tail && (wr - (1.0 / lambda - tail)).abs() < 1e-12 / lambda);
    }

    #[test]
    fn zero_data_is_a_fixed_point() {
        let d = line(65, 4.0);
        let engine = SemigroupEngine::new(d.clone(), Method::SpectralDifference);
        let spec = SystemSpec::weakly_coupled(2.0, 3.0, 1).unwrap();
        let grid = time_grid(0.5, 16, 3.0).unwrap();
        let z = Field::zeros(d);
        let res = monotone_solve(&Reaction::system(&spec), &[z.clone(), z], &engine, &grid, &PicardSettings::default())
            .unwrap();
        assert_eq!(res.status, SolveStatus::Converged);
        assert!(res.u().iter().chain(res.v()).all(|f| f.linf_norm() == 0.0));
    }

    #[test]
    fn first_iterate_is_the_free_evolution() {
        let d = line(129, 5.0);
        let engine = SemigroupEngine::spectral(d.clone());
        let spec = SystemSpec::weakly_coupled(2.0, 2.0, 1).unwrap();
        let grid = time_grid(1.0, 8, 2.0).unwrap();
        let u0 = gauss(&d, 1.0, 0.7);
        let s = picard_seed(&Reaction::system(&spec), &[u0.clone(), u0.clone()], &engine, &grid).unwrap();
        for (j, &t) in grid.iter().enumerate() {
            let direct = engine.apply(&u0, t).unwrap();
            let f = s.field(&d, &engine, 0, j);
            assert!(f.combine(1.0, &direct, -1.0).unwrap().linf_norm() < 1e-13);
        }
    }

    #[test]
    fn constant_source_duhamel_matches_midpoint_quadrature() {
        // p = 0: the second iterate adds int_0^t S(t-s) 1 ds
        let d = line(65, 3.0);
        let engine = SemigroupEngine::spectral(d.clone());
        let spec = SystemSpec::weakly_coupled(0.0, 1.0, 1).unwrap();
        let grid = time_grid(0.5, 16, 3.0).unwrap();
        let u0 = gauss(&d, 0.5, 0.5);
        let data = [u0.clone(), Field::zeros(d.clone())];
        let reaction = Reaction::system(&spec);
        let s1 = picard_seed(&reaction, &data, &engine, &grid).unwrap();
        let s2 = picard_step(&s1, &reaction, &data, &engine).unwrap();
        let t = 0.5;
        let ones = vec![1.0; d.interior_len()];
        let m = 4000;
        let mut quad = vec![0.0; ones.len()];
        for i in 0..m {
            let s = (i as f64 + 0.5) * t / m as f64;
            let e = engine.apply_interior(&ones, t - s);
            quad.iter_mut().zip(e).for_each(|(q, x)| *q += x * t / m as f64);
        }
        let free = engine.gather_interior(&engine.apply(&u0, t).unwrap());
        let got = &s2.states[0][grid.len() - 1];
        let err = got.iter().zip(&free).zip(&quad).fold(0.0f64, |e, ((g, f), q)| e.max((g - f - q).abs()));
        assert!(err < 1e-6, "err {err}");
    }

    #[test]
    fn picard_is_monotone_and_matches_direct() {
        let d = line(129, 6.0);
        let engine = SemigroupEngine::new(d.clone(), Method::SpectralDifference);
        let spec = SystemSpec::weakly_coupled(2.0, 2.0, 1).unwrap();
        let u0 = gauss(&d, 0.4, 0.8);
        let v0 = gauss(&d, 0.3, 1.0);
        let grid = time_grid(1.0, 64, 4.0).unwrap();
        let reaction = Reaction::system(&spec);
        let pic = monotone_solve(&reaction, &[u0.clone(), v0.clone()], &engine, &grid, &PicardSettings::default()).unwrap();
        assert_eq!(pic.status, SolveStatus::Converged);
        let outs: Vec<f64> = grid.iter().copied().step_by(32).chain([1.0]).collect();
        let dir = direct_solve(&reaction, &[u0, v0], &engine, 1.0, &outs, &DtController::for_horizon(1.0)).unwrap();
        assert_eq!(dir.status, SolveStatus::Converged);
        let diff = relative_sup_difference(&pic, &dir).unwrap();
        assert!(diff < 1e-3, "diff {diff}");
    }

    #[test]
    fn splitting_without_reaction_is_the_semigroup() {
        let d = line(129, 5.0);
        let engine = SemigroupEngine::spectral(d.clone());
        let u0 = gauss(&d, 1.0, 0.5);
        let ctl = DtController::for_horizon(0.5);
        let heat = Reaction::Majorant { alpha: 0.0, beta: 0.0, a: 2.0, b: 2.0 };
        let res = direct_solve(&heat, std::slice::from_ref(&u0), &engine, 0.5, &[0.25, 0.5], &ctl).unwrap();
        for (j, &t) in res.t_grid.iter().enumerate() {
            let exact = engine.apply(&u0, t).unwrap();
            assert!(res.u()[j].combine(1.0, &exact, -1.0).unwrap().linf_norm() < 1e-8);
        }
    }

    #[test]
    fn constant_data_follows_the_ode() {
        // w' = 2 w^2 from w = 0.5 blows up at t = 1; compare at t = 0.5
        let d = line(401, 20.0);
        let engine = SemigroupEngine::new(d.clone(), Method::SpectralDifference);
        let w0 = sample_function(&d, &InitialDatum::Constant { value: 0.5 }).unwrap();
        let maj = Reaction::Majorant { alpha: 1.0, beta: 1.0, a: 2.0, b: 2.0 };
        let res = direct_solve(&maj, &[w0], &engine, 0.5, &[0.5], &DtController::for_horizon(0.5)).unwrap();
        let exact = 1.0 / (1.0 / 0.5 - 2.0 * 0.5);
        let center = res.u()[0].values()[200];
        assert!((center - exact).abs() / exact < 1e-2, "{center} vs {exact}");
    }

    #[test]
    fn large_data_blows_up() {
        let d = line(129, 6.0);
        let engine = SemigroupEngine::new(d.clone(), Method::SpectralDifference);
        let spec = SystemSpec::weakly_coupled(2.0, 2.0, 1).unwrap();
        let u0 = gauss(&d, 20.0, 1.0);
        let reaction = Reaction::system(&spec);
        let grid = time_grid(1.0, 16, 3.0).unwrap();
        let pic = monotone_solve(&reaction, &[u0.clone(), u0.clone()], &engine, &grid, &PicardSettings::default()).unwrap();
        assert_eq!(pic.status, SolveStatus::BlowUpSuspected);
        let dir = direct_solve(&reaction, &[u0.clone(), u0], &engine, 1.0, &[1.0], &DtController::for_horizon(1.0)).unwrap();
        assert_eq!(dir.status, SolveStatus::BlowUpSuspected);
        assert!(dir.last_time < 0.1);
    }

    #[test]
    fn transform_round_trip() {
        let d = line(257, 8.0);
        let engine = SemigroupEngine::spectral(d.clone());
        let spec = SystemSpec::new(
            Nonlinearity::StrongExp { p1: 0.5, p2: 0.5, q1: 1.0, q2: 0.0 },
            1,
            crate::exponents::DomainKind::WholeSpace,
        )
        .unwrap();
        let u0 = gauss(&d, 0.5, 1.0);
        let v0 = gauss(&d, 0.3, 1.5);
        let outs = [0.05, 0.1, 0.2];
        let ctl = DtController::for_horizon(0.2);
        let direct = direct_solve(&Reaction::system(&spec), &[u0.clone(), v0.clone()], &engine, 0.2, &outs, &ctl).unwrap();
        let tr = transform_solve(&spec, &u0, &v0, &engine, 0.2, &outs, &ctl).unwrap();
        let diff = relative_sup_difference(&direct, &tr).unwrap();
        assert!(diff < 1e-3, "diff {diff}");
    }

    #[test]
    fn gradient_of_a_sine_mode() {
        let d = line(201, 1.0);
        let shape = d.interior_shape();
        let h = d.spacing(0);
        let a: Vec<f64> = (1..=shape[0]).map(|i| (std::f64::consts::PI * (i as f64 * h) / 2.0).sin()).collect();
        let g = grad_squared(&a, &shape, &[h]);
        for (i, gi) in g.iter().enumerate() {
            let x = (i + 1) as f64 * h;
            let exact = (std::f64::consts::PI / 2.0 * (std::f64::consts::PI * x / 2.0).cos()).powi(2);
            assert!((gi - exact).abs() < 1e-6, "{i}");
        }
    }
}
