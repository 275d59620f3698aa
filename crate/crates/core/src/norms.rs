//! The weight `R(x) = sqrt(1 + x²)` and the weighted norms built on it.
//!
//! All norms are grid sups: they approximate the continuous sups over ℝ by the
//! maximum over grid nodes in `[-L, L]`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::PhaseGrid;
use crate::quadrature::simpson_by;

/// `R(x) = sqrt(1 + x²)`.
#[inline]
pub fn weight(x: f64) -> f64 {
    (1.0 + x * x).sqrt()
}

/// `R(x)^p`, with a cheap path for the common `p = 2`.
#[inline]
pub fn weight_pow(x: f64, p: f64) -> f64 {
    let r2 = 1.0 + x * x;
    if p == 2.0 {
        r2
    } else {
        r2.powf(0.5 * p)
    }
}

/// `R(x)^{-p}`.
#[inline]
pub fn weight_decay(x: f64, p: f64) -> f64 {
    let r2 = 1.0 + x * x;
    if p == 2.0 {
        1.0 / r2
    } else {
        r2.powf(-0.5 * p)
    }
}

/// A real profile sampled at the x-nodes of a grid, with its decay exponent.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedProfile {
    pub values: Vec<f64>,
    pub exponent: f64,
}

impl WeightedProfile {
    pub fn new(values: Vec<f64>, exponent: f64) -> Result<Self> {
        if !(exponent > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "decay exponent must exceed 1 (got {exponent})"
            )));
        }
        Ok(Self { values, exponent })
    }
}

/// `max_j |σ(x_j)| R^p(x_j)` over the given nodes.
pub fn weighted_sup_norm_at(values: &[f64], xs: &[f64], p: f64) -> Result<f64> {
    debug_assert_eq!(values.len(), xs.len());
    let mut best = 0.0f64;
    for (&s, &x) in values.iter().zip(xs) {
        if !s.is_finite() {
            return Err(Error::InvalidProfile(format!("non-finite value {s} at x = {x}")));
        }
        best = best.max(s.abs() * weight_pow(x, p));
    }
    Ok(best)
}

/// `‖σ‖_p` over the x-nodes of `grid`.
pub fn weighted_sup_norm(sigma: &WeightedProfile, grid: &PhaseGrid) -> Result<f64> {
    if sigma.values.len() != grid.x_count {
        return Err(Error::InvalidProfile(format!(
            "profile has {} values, grid has {} x-nodes",
            sigma.values.len(),
            grid.x_count
        )));
    }
    weighted_sup_norm_at(&sigma.values, &grid.x_nodes(), sigma.exponent)
}

/// Largest weighted value at the two boundary nodes `±L`. When this equals the
/// full norm the sup is attained at the truncation edge rather than inside.
pub fn boundary_weighted_value(values: &[f64], grid: &PhaseGrid, p: f64) -> f64 {
    let last = grid.x_count - 1;
    (values[0].abs() * weight_pow(grid.x(0), p)).max(values[last].abs() * weight_pow(grid.x(last), p))
}

/// Second-order derivative of samples with spacing `h`: centered inside,
/// one-sided at the ends.
#[inline]
pub(crate) fn fd_derivative(get: impl Fn(usize) -> f64, n: usize, k: usize, h: f64) -> f64 {
    if k == 0 {
        (-3.0 * get(0) + 4.0 * get(1) - get(2)) / (2.0 * h)
    } else if k == n - 1 {
        (3.0 * get(n - 1) - 4.0 * get(n - 2) + get(n - 3)) / (2.0 * h)
    } else {
        (get(k + 1) - get(k - 1)) / (2.0 * h)
    }
}

/// The four terms of the triple norm, kept separately for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TripleNorm {
    pub sup: f64,
    pub sup_dv: f64,
    pub weighted_dx: f64,
    pub weighted_density: f64,
}

impl TripleNorm {
    pub fn total(&self) -> f64 {
        self.sup + self.sup_dv + self.weighted_dx + self.weighted_density
    }
}

/// `‖|h|‖ = ‖h‖_∞ + ‖∂_v h‖_∞ + ‖∂_x h‖_p + ‖∫ h dv‖_p` for a snapshot stored
/// x-major with v contiguous.
pub fn triple_norm_terms(h: &[f64], grid: &PhaseGrid, p: f64) -> Result<TripleNorm> {
    let (nx, nv) = (grid.x_count, grid.v_count);
    if h.len() != nx * nv {
        return Err(Error::InvalidProfile(format!(
            "snapshot has {} values, grid needs {}",
            h.len(),
            nx * nv
        )));
    }
    if let Some(bad) = h.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidProfile(format!(
            "non-finite snapshot value at node (j = {}, i = {})",
            bad / nv,
            bad % nv
        )));
    }
    let (dx, dv) = (grid.dx(), grid.dv());
    let mut norm = TripleNorm {
        sup: 0.0,
        sup_dv: 0.0,
        weighted_dx: 0.0,
        weighted_density: 0.0,
    };
    for j in 0..nx {
        let row = &h[j * nv..(j + 1) * nv];
        let wp = weight_pow(grid.x(j), p);
        for i in 0..nv {
            norm.sup = norm.sup.max(row[i].abs());
            let dvh = fd_derivative(|k| row[k], nv, i, dv);
            norm.sup_dv = norm.sup_dv.max(dvh.abs());
            let dxh = fd_derivative(|k| h[k * nv + i], nx, j, dx);
            norm.weighted_dx = norm.weighted_dx.max(dxh.abs() * wp);
        }
        let density = simpson_by(nv, dv, |i| row[i]);
        norm.weighted_density = norm.weighted_density.max(density.abs() * wp);
    }
    Ok(norm)
}

pub fn triple_norm(h: &[f64], grid: &PhaseGrid, p: f64) -> Result<f64> {
    triple_norm_terms(h, grid, p).map(|t| t.total())
}
