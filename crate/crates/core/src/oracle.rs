//! Independent time-marching solver used to cross-check the Picard solver:
//! symmetric (Strang) splitting of the x- and v-advections with cubic
//! semi-Lagrangian interpolation in the advected coordinate.
//!
//! The x-axis is padded with ghost cells so that nothing entering the box
//! during the run is affected by the outer boundary. Ghost cells start from
//! the analytic initial data; the field there comes from the tail model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_range, map_rows_mut, Execution};
use crate::field::{cubic_eval, density_values, field_from_density, TailMode, TailModel};
use crate::grid::PhaseGrid;
use crate::picard::{Origin, SolutionHistory};
use crate::profiles::InitialData;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplittingOrder {
    /// Half x-step, full v-step, half x-step.
    Strang,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    Cubic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub grid: PhaseGrid,
    pub splitting: SplittingOrder,
    pub interpolation: Interpolation,
    /// Splitting steps per time-node interval.
    pub steps_per_interval: usize,
    pub tail_mode: TailMode,
    /// Run with `E ≡ 0` (free streaming) for diagnostics.
    pub zero_field: bool,
    pub execution: Execution,
}

impl OracleConfig {
    pub fn new(grid: PhaseGrid) -> Self {
        Self {
            grid,
            splitting: SplittingOrder::Strang,
            interpolation: Interpolation::Cubic,
            steps_per_interval: 1,
            tail_mode: TailMode::PowerLaw,
            zero_field: false,
            execution: Execution::Parallel,
        }
    }

    /// Ghost cells per side.
    pub fn ghost_cells(&self) -> usize {
        let g = &self.grid;
        (g.v_half_width * g.time_horizon / g.dx()).ceil() as usize + 10
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    /// `max|v| Δt / Δx` for the splitting step.
    pub cfl: f64,
    pub warning: Option<String>,
    pub ghost_cells: usize,
    /// Range of `f` over all stored nodes, against the range of `f0`.
    pub min_f: f64,
    pub max_f: f64,
    pub min_f0: f64,
    pub max_f0: f64,
}

impl OracleReport {
    /// Largest excursion of `f` outside the range of `f0`.
    pub fn overshoot(&self) -> f64 {
        (self.min_f0 - self.min_f).max(self.max_f - self.max_f0).max(0.0)
    }
}

struct Padded {
    nx: usize,
    nv: usize,
    ghost: usize,
    dx: f64,
    dv: f64,
}

impl Padded {
    fn x(&self, grid: &PhaseGrid, j: usize) -> f64 {
        (j as f64 - self.ghost as f64 - grid.x_center()) * self.dx
    }
}

/// `f(x, v) <- f(x - v τ, v)` on every velocity column.
fn advect_x(f: &mut [f64], pad: &Padded, vs: &[f64], tau: f64, exec: Execution) {
    let (nx, nv) = (pad.nx, pad.nv);
    let cols = map_range(exec, nv, |i| {
        let col: Vec<f64> = (0..nx).map(|j| f[j * nv + i]).collect();
        let shift = vs[i] * tau / pad.dx;
        let last = (nx - 1) as f64;
        (0..nx)
            .map(|j| {
                let u = j as f64 - shift;
                if u <= 0.0 {
                    col[0]
                } else if u >= last {
                    col[nx - 1]
                } else {
                    cubic_eval(&col, u)
                }
            })
            .collect::<Vec<f64>>()
    });
    for (i, col) in cols.iter().enumerate() {
        for (j, val) in col.iter().enumerate() {
            f[j * nv + i] = *val;
        }
    }
}

/// `f(x, v) <- f(x, v + E(x) τ)`, zero beyond the velocity range.
fn advect_v(f: &mut [f64], pad: &Padded, e: &[f64], tau: f64, exec: Execution) {
    let nv = pad.nv;
    let last = (nv - 1) as f64;
    map_rows_mut(exec, f, nv, |j, row| {
        let shift = e[j] * tau / pad.dv;
        if shift == 0.0 {
            return;
        }
        let old = row.to_vec();
        for (i, slot) in row.iter_mut().enumerate() {
            let u = i as f64 + shift;
            *slot = if (0.0..=last).contains(&u) { cubic_eval(&old, u) } else { 0.0 };
        }
    });
}

/// Field on the padded axis: the box part from the density inside the box,
/// the ghost part from the tail model.
fn padded_field(f: &[f64], pad: &Padded, grid: &PhaseGrid, data: &InitialData, tail: &TailModel) -> Result<Vec<f64>> {
    let per = grid.phase_len();
    let start = pad.ghost * pad.nv;
    let rho = density_values(&f[start..start + per], grid, &data.background)?;
    let snap = field_from_density(&rho, grid, tail);
    let n = grid.x_count;
    Ok((0..pad.nx)
        .map(|j| {
            if j < pad.ghost {
                snap.values[0] - snap.tail_minus * tail.increment(-pad.x(grid, j))
            } else if j >= pad.ghost + n {
                snap.values[n - 1] + snap.tail_plus * tail.increment(pad.x(grid, j))
            } else {
                snap.values[j - pad.ghost]
            }
        })
        .collect())
}

/// March `f0` through the splitting scheme, recording `f` on the box at every
/// time node of `cfg.grid`.
pub fn splitting_solve(data: &InitialData, cfg: &OracleConfig) -> Result<(SolutionHistory, OracleReport)> {
    let grid = cfg.grid;
    if cfg.steps_per_interval == 0 {
        return Err(Error::InvalidParameter("steps_per_interval must be >= 1".into()));
    }
    let ghost = cfg.ghost_cells();
    let pad = Padded {
        nx: grid.x_count + 2 * ghost,
        nv: grid.v_count,
        ghost,
        dx: grid.dx(),
        dv: grid.dv(),
    };
    let tail = TailModel::new(cfg.tail_mode, grid.x_half_width, data.decay_exponent);
    let vs = grid.v_nodes();
    let mut f: Vec<f64> = (0..pad.nx)
        .flat_map(|j| {
            let x = pad.x(&grid, j);
            vs.iter().map(move |&v| data.f0(x, v)).collect::<Vec<_>>()
        })
        .collect();
    let tau = grid.dt() / cfg.steps_per_interval as f64;
    let cfl = grid.v_half_width * tau / grid.dx();
    let warning = (cfl > 1.0).then(|| format!("max|v| dt / dx = {cfl:.3} exceeds 1"));

    let per = grid.phase_len();
    let box_slice = |f: &[f64]| f[ghost * pad.nv..ghost * pad.nv + per].to_vec();
    let mut history = Vec::with_capacity(per * grid.time_count);
    history.extend(box_slice(&f));
    for _ in 1..grid.time_count {
        for _ in 0..cfg.steps_per_interval {
            advect_x(&mut f, &pad, &vs, 0.5 * tau, cfg.execution);
            if !cfg.zero_field {
                let e = padded_field(&f, &pad, &grid, data, &tail)?;
                advect_v(&mut f, &pad, &e, tau, cfg.execution);
            }
            advect_x(&mut f, &pad, &vs, 0.5 * tau, cfg.execution);
        }
        history.extend(box_slice(&f));
    }
    let (min_f, max_f) = history
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let report = OracleReport {
        cfl,
        warning,
        ghost_cells: ghost,
        min_f,
        max_f,
        min_f0: data.report.min_f0,
        max_f0: data.report.max_f0,
    };
    let sol = SolutionHistory::from_levels(
        grid,
        data.background,
        data.decay_exponent,
        history,
        cfg.tail_mode,
        Origin::Oracle,
        cfg.execution,
    )?;
    Ok((sol, report))
}

/// Largest node-wise `|f_a - f_b|` over all stored nodes.
pub fn max_node_difference(a: &SolutionHistory, b: &SolutionHistory) -> Result<f64> {
    if a.grid != b.grid {
        return Err(Error::InvalidComparison("solutions live on different grids".into()));
    }
    Ok(a.f.iter().zip(&b.f).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::{make_initial_data, BackgroundProfile, PerturbationShape};

    fn grid() -> PhaseGrid {
        PhaseGrid::new(10.0, 101, 3.0, 49, 0.4, 9).unwrap()
    }

    #[test]
    fn unperturbed_background_is_stationary() {
        let g = grid();
        let bg = BackgroundProfile::new(1.0, 1.0).unwrap();
        let data = make_initial_data(bg, 0.0, 2.0, PerturbationShape::QuarticBump, &g).unwrap();
        let (sol, rep) = splitting_solve(&data, &OracleConfig::new(g)).unwrap();
        assert!(rep.warning.is_none());
        for m in 0..g.time_count {
            for (k, &f) in sol.level(m).iter().enumerate() {
                assert!((f - bg.value(g.v(k % g.v_count))).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_field_mode_streams_freely() {
        let g = grid();
        let bg = BackgroundProfile::new(1.0, 1.0).unwrap();
        let data = make_initial_data(bg, 0.05, 2.0, PerturbationShape::QuarticBump, &g).unwrap();
        let run = |g: PhaseGrid| {
            let mut cfg = OracleConfig::new(g);
            cfg.zero_field = true;
            let (sol, _) = splitting_solve(&data, &cfg).unwrap();
            let m = g.time_count - 1;
            let t = g.t(m);
            let mut worst = 0.0f64;
            for j in 0..g.x_count {
                for i in 0..g.v_count {
                    let (x, v) = (g.x(j), g.v(i));
                    worst = worst.max((sol.level(m)[j * g.v_count + i] - data.f0(x - t * v, v)).abs());
                }
            }
            worst
        };
        let coarse = run(g);
        let mid = run(PhaseGrid::new(10.0, 201, 3.0, 49, 0.4, 9).unwrap());
        let fine = run(PhaseGrid::new(10.0, 401, 3.0, 49, 0.4, 9).unwrap());
        // shifts below one cell make the per-step cubic error O(Δx³ v Δt)
        assert!(coarse < 1e-4, "{coarse}");
        assert!(mid < coarse / 6.0 && fine < mid / 6.0, "{coarse} {mid} {fine}");
    }

    #[test]
    fn large_steps_raise_a_warning() {
        let g = PhaseGrid::new(10.0, 101, 3.0, 49, 0.4, 3).unwrap();
        let bg = BackgroundProfile::new(1.0, 1.0).unwrap();
        let data = make_initial_data(bg, 0.0, 2.0, PerturbationShape::QuarticBump, &g).unwrap();
        let (_, rep) = splitting_solve(&data, &OracleConfig::new(g)).unwrap();
        assert!(rep.warning.is_some());
    }
}
