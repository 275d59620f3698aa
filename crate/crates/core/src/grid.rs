//! Uniform phase-space and time grids.
//!
//! Nodes are laid out symmetrically about the origin: `x_j = (j - cx) dx` with
//! `cx = (Nx - 1) / 2`, and likewise for `v`. This makes `x = 0` and `v = 0`
//! exact nodes and `v_i = -v_{Nv-1-i}` hold bitwise, which the symmetric
//! quadrature relies on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    pub x_half_width: f64,
    pub x_count: usize,
    pub v_half_width: f64,
    pub v_count: usize,
    pub time_horizon: f64,
    pub time_count: usize,
}

impl PhaseGrid {
    pub fn new(
        x_half_width: f64,
        x_count: usize,
        v_half_width: f64,
        v_count: usize,
        time_horizon: f64,
        time_count: usize,
    ) -> Result<Self> {
        let grid = Self {
            x_half_width,
            x_count,
            v_half_width,
            v_count,
            time_horizon,
            time_count,
        };
        let problems = grid.problems();
        if problems.is_empty() {
            Ok(grid)
        } else {
            Err(Error::InvalidParameter(problems.join("; ")))
        }
    }

    /// Every violated grid invariant, as human-readable messages.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.x_half_width.is_finite() && self.x_half_width > 0.0) {
            out.push(format!("x_half_width must be > 0 (got {})", self.x_half_width));
        }
        if !(self.v_half_width.is_finite() && self.v_half_width > 0.0) {
            out.push(format!("v_half_width must be > 0 (got {})", self.v_half_width));
        }
        if !(self.time_horizon.is_finite() && self.time_horizon > 0.0) {
            out.push(format!("time_horizon must be > 0 (got {})", self.time_horizon));
        }
        if self.x_count < 5 || self.x_count % 2 == 0 {
            out.push(format!("x_count must be odd and >= 5 (got {})", self.x_count));
        }
        if self.v_count < 5 || self.v_count % 2 == 0 {
            out.push(format!("v_count must be odd and >= 5 (got {})", self.v_count));
        }
        if self.time_count < 2 {
            out.push(format!("time_count must be >= 2 (got {})", self.time_count));
        }
        out
    }

    #[inline]
    pub fn x_center(&self) -> f64 {
        ((self.x_count - 1) / 2) as f64
    }

    #[inline]
    pub fn v_center(&self) -> f64 {
        ((self.v_count - 1) / 2) as f64
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        self.x_half_width / self.x_center()
    }

    #[inline]
    pub fn dv(&self) -> f64 {
        self.v_half_width / self.v_center()
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.time_horizon / (self.time_count - 1) as f64
    }

    #[inline]
    pub fn x(&self, j: usize) -> f64 {
        (j as f64 - self.x_center()) * self.dx()
    }

    #[inline]
    pub fn v(&self, i: usize) -> f64 {
        (i as f64 - self.v_center()) * self.dv()
    }

    #[inline]
    pub fn t(&self, m: usize) -> f64 {
        m as f64 * self.dt()
    }

    pub fn x_nodes(&self) -> Vec<f64> {
        (0..self.x_count).map(|j| self.x(j)).collect()
    }

    pub fn v_nodes(&self) -> Vec<f64> {
        (0..self.v_count).map(|i| self.v(i)).collect()
    }

    pub fn t_nodes(&self) -> Vec<f64> {
        (0..self.time_count).map(|m| self.t(m)).collect()
    }

    /// Number of nodes in one phase-space snapshot.
    #[inline]
    pub fn phase_len(&self) -> usize {
        self.x_count * self.v_count
    }

    /// Same phase grid with a different time axis.
    pub fn with_time(&self, time_horizon: f64, time_count: usize) -> Result<Self> {
        Self::new(
            self.x_half_width,
            self.x_count,
            self.v_half_width,
            self.v_count,
            time_horizon,
            time_count,
        )
    }

    /// Halve every spacing (x, v and t).
    pub fn refined(&self) -> Self {
        Self {
            x_count: 2 * self.x_count - 1,
            v_count: 2 * self.v_count - 1,
            time_count: 2 * self.time_count - 1,
            ..*self
        }
    }

    /// Same spacings on the phase axes, checked against another grid.
    pub fn same_phase_axes(&self, other: &PhaseGrid) -> bool {
        self.x_half_width == other.x_half_width
            && self.x_count == other.x_count
            && self.v_half_width == other.v_half_width
            && self.v_count == other.v_count
    }
}

/// Index helpers for `(m, j, i)` phase-time arrays stored time-major, then
/// x, with v contiguous.
#[inline]
pub fn phase_index(grid: &PhaseGrid, j: usize, i: usize) -> usize {
    j * grid.v_count + i
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacings_and_symmetry() {
        let g = PhaseGrid::new(20.0, 401, 4.0, 129, 0.5, 51).unwrap();
        assert_eq!(g.dx(), 0.1);
        assert_eq!(g.dv(), 0.0625);
        assert!((g.dt() - 0.01).abs() < 1e-15);
        assert_eq!(g.x(200), 0.0);
        assert_eq!(g.v(64), 0.0);
        for i in 0..g.v_count {
            assert_eq!(g.v(i), -g.v(g.v_count - 1 - i));
        }
        for j in 0..g.x_count {
            assert_eq!(g.x(j), -g.x(g.x_count - 1 - j));
        }
        assert!((g.x(400) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_even_counts_and_bad_widths() {
        let err = PhaseGrid::new(-1.0, 400, 4.0, 128, 0.0, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("x_half_width"));
        assert!(msg.contains("x_count"));
        assert!(msg.contains("v_count"));
        assert!(msg.contains("time_horizon"));
        assert!(msg.contains("time_count"));
    }

    #[test]
    fn refinement_halves_spacings() {
        let g = PhaseGrid::new(20.0, 101, 4.0, 33, 0.5, 13).unwrap();
        let r = g.refined();
        assert!((r.dx() - g.dx() / 2.0).abs() < 1e-15);
        assert!((r.dv() - g.dv() / 2.0).abs() < 1e-15);
        assert!((r.dt() - g.dt() / 2.0).abs() < 1e-15);
    }
}
