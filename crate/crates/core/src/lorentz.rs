//! Distribution functions, rearrangements and weak-Lorentz norms.
//!
//! A grid function is treated as piecewise constant, each grid point owning
//! one cell of volume `h_1 ... h_N`. With that convention the distribution
//! function, the nonincreasing rearrangement `f*` and its running average
//! `f**` are computed exactly by a weighted sort.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::fields::{Domain, Field};

/// `mu(lambda) = |{ |f| > lambda }|`.
pub fn distribution_function(f: &Field, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        bail!(Domain, "distribution function needs lambda >= 0, got {lambda}");
    }
    let count = f.values().iter().filter(|v| v.abs() > lambda).count();
    Ok(count as f64 * f.domain().cell_volume())
}

/// Piecewise description of `f*` and `f**`.
///
/// Piece `i` covers `s in ((i) w, (i+1) w]` with `w` the cell volume;
/// `s_grid[i]` is its right end, `fstar[i]` the value of `f*` on it and
/// `fstarstar[i]` the value of `f**` at `s_grid[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RearrangementTable {
    pub cell: f64,
    pub s_grid: Vec<f64>,
    pub fstar: Vec<f64>,
    pub fstarstar: Vec<f64>,
}

impl RearrangementTable {
    fn from_sorted(sorted_desc: Vec<f64>, cell: f64) -> Self {
        let mut s_grid = Vec::with_capacity(sorted_desc.len());
        let mut fstarstar = Vec::with_capacity(sorted_desc.len());
        let mut acc = 0.0;
        for (i, &v) in sorted_desc.iter().enumerate() {
            acc += v;
            let s = (i + 1) as f64 * cell;
            s_grid.push(s);
            fstarstar.push(acc / (i + 1) as f64);
        }
        RearrangementTable { cell, s_grid, fstar: sorted_desc, fstarstar }
    }

    /// Total measure covered by the table.
    pub fn measure(&self) -> f64 {
        self.s_grid.last().copied().unwrap_or(0.0)
    }

    /// `integral_0^infty f*`.
    pub fn integral(&self) -> f64 {
        self.fstarstar.last().map_or(0.0, |m| m * self.measure())
    }

    /// `f*(s)`; zero past the measure of the domain.
    pub fn fstar_at(&self, s: f64) -> f64 {
        if s < 0.0 {
            return f64::NAN;
        }
        let j = (s / self.cell).floor() as usize;
        self.fstar.get(j).copied().unwrap_or(0.0)
    }

    /// `f**(s) = (1/s) integral_0^s f*`.
    pub fn fstarstar_at(&self, s: f64) -> f64 {
        if !(s > 0.0) {
            return self.fstar.first().copied().unwrap_or(0.0);
        }
        let j = (s / self.cell).floor() as usize;
        if j >= self.fstar.len() {
            return self.integral() / s;
        }
        let before = if j == 0 { 0.0 } else { self.fstarstar[j - 1] * j as f64 * self.cell };
        (before + (s - j as f64 * self.cell) * self.fstar[j]) / s
    }

    /// `sup_s s^{1/r} f**(s)` and the `s` where it is attained.
    ///
    /// On each piece `s^{1/r} f**(s) = K s^{1/r-1} + v s^{1/r}` with `K >= 0`,
    /// which has no interior maximum for `r > 1`, so only piece ends are
    /// inspected. Past the domain the function decreases.
    pub fn weak_norm(&self, r: f64) -> (f64, f64) {
        if self.fstar.is_empty() {
            return (0.0, 0.0);
        }
        if r.is_infinite() {
            return (self.fstar[0], 0.0);
        }
        if r <= 1.0 {
            return (self.integral(), self.measure());
        }
        let inv = 1.0 / r;
        let mut best = (0.0, 0.0);
        for (&s, &m) in self.s_grid.iter().zip(&self.fstarstar) {
            let v = s.powf(inv) * m;
            if v > best.0 {
                best = (v, s);
            }
        }
        best
    }
}

/// Weighted sort of `|f|`.
pub fn rearrange(f: &Field) -> Result<RearrangementTable> {
    if f.values().is_empty() {
        bail!(Domain, "cannot rearrange an empty field");
    }
    Ok(rearrange_values(f.values().iter().map(|v| v.abs()).collect(), f.domain().cell_volume()))
}

fn rearrange_values(mut values: Vec<f64>, cell: f64) -> RearrangementTable {
    values.sort_unstable_by(|a, b| b.total_cmp(a));
    RearrangementTable::from_sorted(values, cell)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakNorm {
    pub norm: f64,
    pub attaining_s: f64,
}

/// `||f||_{L^{r,infty}} = sup_s s^{1/r} f**(s)`; `r = infinity` gives the sup norm.
pub fn weak_norm(f: &Field, r: f64) -> Result<WeakNorm> {
    check_index(r)?;
    if r.is_infinite() {
        return Ok(WeakNorm { norm: f.linf_norm(), attaining_s: 0.0 });
    }
    let (norm, attaining_s) = rearrange(f)?.weak_norm(r);
    Ok(WeakNorm { norm, attaining_s })
}

/// Discrete `L^r` norm, cell-volume weighted.
pub fn lp_norm(f: &Field, r: f64) -> Result<f64> {
    check_index(r)?;
    if r.is_infinite() {
        return Ok(f.linf_norm());
    }
    let sum: f64 = f.values().iter().map(|v| v.abs().powf(r)).sum();
    Ok((sum * f.domain().cell_volume()).powf(1.0 / r))
}

fn check_index(r: f64) -> Result<()> {
    if !(r >= 1.0) {
        bail!(Domain, "integrability index must be >= 1, got {r}");
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UlocNorm {
    pub norm: f64,
    pub attaining_center: Vec<f64>,
}

/// Multi-index offsets of grid points in the open ball of radius `rho`.
fn ball_offsets(domain: &Domain, rho: f64) -> Vec<[isize; 3]> {
    let dim = domain.dim();
    let reach: Vec<isize> = (0..dim)
        .map(|a| ((rho / domain.spacing(a)).ceil() as isize).min(domain.points()[a] as isize))
        .collect();
    let mut out = Vec::new();
    let mut idx = [0isize; 3];
    for a in 0..dim {
        idx[a] = -reach[a];
    }
    loop {
        let d2: f64 = (0..dim).map(|a| (idx[a] as f64 * domain.spacing(a)).powi(2)).sum();
        if d2 < rho * rho {
            out.push(idx);
        }
        let mut axis = dim;
        loop {
            if axis == 0 {
                return out;
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] <= reach[axis] {
                break;
            }
            idx[axis] = -reach[axis];
        }
    }
}

fn ball_values(domain: &Domain, values: &[f64], center: usize, offsets: &[[isize; 3]], out: &mut Vec<f64>) {
    out.clear();
    let dim = domain.dim();
    let c = domain.multi_index(center);
    let pts = domain.points();
    let strides = domain.strides();
    'next: for off in offsets {
        let mut flat = 0usize;
        for a in 0..dim {
            let i = c[a] as isize + off[a];
            if i < 0 || i >= pts[a] as isize {
                continue 'next;
            }
            flat += i as usize * strides[a];
        }
        out.push(values[flat].abs());
    }
}

/// `|||f|||_{r,rho} = sup_x ||f||_{L^{r,infty}(Omega cap B(x,rho))}` with
/// centers at grid points and cells counted when their center is in the ball.
///
/// Centers are visited in decreasing order of the local `L^r` norm, which
/// bounds the local weak norm from above, and the scan stops once that bound
/// falls below the best value found.
pub fn uloc_norm(f: &Field, r: f64, rho: f64) -> Result<UlocNorm> {
    check_index(r)?;
    if !(rho > 0.0) {
        bail!(Domain, "localization radius must be positive, got {rho}");
    }
    let domain = f.domain().as_ref();
    if rho < domain.min_spacing() {
        bail!(Resolution, "rho = {rho} is below the grid spacing {}", domain.min_spacing());
    }
    let dim = domain.dim();
    if r.is_infinite() {
        let (i, _) = f
            .values()
            .iter()
            .enumerate()
            .fold((0, -1.0), |best, (i, v)| if v.abs() > best.1 { (i, v.abs()) } else { best });
        return Ok(UlocNorm { norm: f.linf_norm(), attaining_center: domain.coord(i)[..dim].to_vec() });
    }
    if rho > domain.diameter() {
        let w = weak_norm(f, r)?;
        return Ok(UlocNorm { norm: w.norm, attaining_center: domain.coord(domain.len() / 2)[..dim].to_vec() });
    }
    let offsets = ball_offsets(domain, rho);
    let cell = domain.cell_volume();
    let values = f.values();
    let powered: Vec<f64> = values.iter().map(|v| v.abs().powf(r)).collect();
    let mut bounds: Vec<(f64, usize)> = (0..domain.len())
        .into_par_iter()
        .map_init(Vec::new, |buf, center| {
            ball_values(domain, &powered, center, &offsets, buf);
            ((buf.iter().sum::<f64>() * cell).powf(1.0 / r), center)
        })
        .collect();
    bounds.sort_unstable_by(|a, b| b.0.total_cmp(&a.0));
    let mut best = (0.0f64, bounds.first().map_or(0, |b| b.1));
    // Batches keep the scan parallel while still allowing an early exit.
    let batch = 64;
    for chunk in bounds.chunks(batch) {
        if chunk[0].0 <= best.0 {
            break;
        }
        let local: Vec<(f64, usize)> = chunk
            .par_iter()
            .filter(|(bound, _)| *bound > best.0)
            .map_init(Vec::new, |b, &(_, center)| {
                ball_values(domain, values, center, &offsets, b);
                (rearrange_values(std::mem::take(b), cell).weak_norm(r).0, center)
            })
            .collect();
        for (v, c) in local {
            if v > best.0 {
                best = (v, c);
            }
        }
    }
    Ok(UlocNorm { norm: best.0, attaining_center: domain.coord(best.1)[..dim].to_vec() })
}

/// Volume of the unit ball in `R^N`.
pub fn unit_ball_volume(n: usize) -> f64 {
    let nf = n as f64;
    std::f64::consts::PI.powf(nf / 2.0) / gamma_half_integer(nf / 2.0 + 1.0)
}

fn gamma_half_integer(x: f64) -> f64 {
    // Gamma on positive integers and half integers by recursion.
    if (x - 1.0).abs() < 1e-12 {
        1.0
    } else if (x - 0.5).abs() < 1e-12 {
        std::f64::consts::PI.sqrt()
    } else {
        (x - 1.0) * gamma_half_integer(x - 1.0)
    }
}
