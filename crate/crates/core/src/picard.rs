//! The fixed-point map `f ↦ f̃` (transport of `f0` along the characteristics
//! of the field built from `f`), the Picard iteration on it, and continuation
//! of a solution to a longer horizon.
//!
//! Arrays are stored time-major: `f[(m * Nx + j) * Nv + i]`.

use serde::Serialize;

use crate::characteristics::{Tracer, DEFAULT_SUBSTEPS};
use crate::diagnostics::field_impulse;
use crate::error::{Error, Result};
use crate::exec::{map_range, map_rows_mut, Execution};
use crate::field::{density_values, DensitySnapshot, FieldHistory, StageField, TailMode, TailModel};
use crate::grid::PhaseGrid;
use crate::norms::{triple_norm, weighted_sup_norm_at};
use crate::profiles::{BackgroundProfile, InitialData};
use crate::quadrature::simpson_by;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iters: usize,
    pub substeps: usize,
    pub tail_mode: TailMode,
    pub execution: Execution,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: 25,
            substeps: DEFAULT_SUBSTEPS,
            tail_mode: TailMode::PowerLaw,
            execution: Execution::Parallel,
        }
    }
}

impl SolveOptions {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            out.push(format!("tol must be > 0 (got {})", self.tol));
        }
        if self.max_iters == 0 {
            out.push("max_iters must be >= 1".into());
        }
        if self.substeps == 0 {
            out.push("substeps must be >= 1".into());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    /// `f0` held constant in time (the first iterate).
    Frozen,
    Iterate(usize),
    Converged,
    /// Produced by the splitting oracle.
    Oracle,
}

/// By-products of one application of the map.
#[derive(Debug, Clone, PartialEq)]
pub struct MapStats {
    /// `ρ0 - ∫∫ E F'(V) dv ds` per `(m, j)`, the Duhamel reconstruction of `ρ̃`.
    pub duhamel_density: Vec<f64>,
    pub traced: usize,
    pub culled: usize,
    pub left_box: usize,
    pub max_impulse: f64,
}

#[derive(Debug, Clone)]
pub struct SolutionHistory {
    pub grid: PhaseGrid,
    pub exponent: f64,
    pub background: BackgroundProfile,
    pub f: Vec<f64>,
    pub densities: Vec<DensitySnapshot>,
    pub field: FieldHistory,
    pub origin: Origin,
    pub stats: Option<MapStats>,
}

impl SolutionHistory {
    /// Assemble a history from `f` at every node; densities and field are
    /// rebuilt from `f`.
    pub fn from_levels(
        grid: PhaseGrid,
        background: BackgroundProfile,
        exponent: f64,
        f: Vec<f64>,
        tail_mode: TailMode,
        origin: Origin,
        execution: Execution,
    ) -> Result<Self> {
        let per = grid.phase_len();
        if f.len() != per * grid.time_count {
            return Err(Error::InvalidParameter(format!(
                "history has {} values, grid needs {}",
                f.len(),
                per * grid.time_count
            )));
        }
        let rho = map_range(execution, grid.time_count, |m| {
            density_values(&f[m * per..(m + 1) * per], &grid, &background)
        });
        let densities = rho
            .into_iter()
            .enumerate()
            .map(|(m, r)| DensitySnapshot::new(r?, grid.t(m), exponent, &grid))
            .collect::<Result<Vec<_>>>()?;
        let tail = TailModel::new(tail_mode, grid.x_half_width, exponent);
        let field = FieldHistory::from_densities(grid, tail, &densities)?;
        Ok(Self {
            grid,
            exponent,
            background,
            f,
            densities,
            field,
            origin,
            stats: None,
        })
    }

    /// First iterate: `f0` at every time node.
    pub fn frozen(data: &InitialData, grid: &PhaseGrid, tail_mode: TailMode, execution: Execution) -> Result<Self> {
        let snap = data.f0_snapshot(grid);
        let mut f = Vec::with_capacity(snap.len() * grid.time_count);
        for _ in 0..grid.time_count {
            f.extend_from_slice(&snap);
        }
        Self::from_levels(*grid, data.background, data.decay_exponent, f, tail_mode, Origin::Frozen, execution)
    }

    pub fn level(&self, m: usize) -> &[f64] {
        let per = self.grid.phase_len();
        &self.f[m * per..(m + 1) * per]
    }

    /// `g = F - f` at time node `m`.
    pub fn g_level(&self, m: usize) -> Vec<f64> {
        let nv = self.grid.v_count;
        let bgv: Vec<f64> = self.grid.v_nodes().iter().map(|&v| self.background.value(v)).collect();
        self.level(m)
            .iter()
            .enumerate()
            .map(|(k, &f)| bgv[k % nv] - f)
            .collect()
    }

    /// `‖|g(t_m)|‖` at every time node.
    pub fn triple_norms(&self, execution: Execution) -> Result<Vec<f64>> {
        map_range(execution, self.grid.time_count, |m| {
            triple_norm(&self.g_level(m), &self.grid, self.exponent)
        })
        .into_iter()
        .collect()
    }

    pub fn tail_mode(&self) -> TailMode {
        self.field.tail.mode
    }
}

/// Per-row output of the map.
struct RowResult {
    rho: f64,
    rebuilt: f64,
    traced: usize,
    culled: usize,
    left: usize,
    max_impulse: f64,
    failure: Option<(usize, f64, f64)>,
}

/// Velocity magnitude beyond which a backward characteristic started at time
/// node `m` can never reach the support of `f0` or `F`, per node.
fn velocity_cutoffs(stages: &StageField, data: &InitialData) -> Vec<f64> {
    let nt = stages.history().grid.time_count;
    let sub = stages.substeps;
    let h = 2.0 * stages.half_step();
    let mut out = Vec::with_capacity(nt);
    let mut acc = 0.0;
    out.push(data.velocity_cutoff());
    for m in 1..nt {
        for n in (m - 1) * sub..m * sub {
            let k = 2 * n;
            acc += h / 6.0 * (stages.sup_bound(k) + 4.0 * stages.sup_bound(k + 1) + stages.sup_bound(k + 2));
        }
        out.push(data.velocity_cutoff() + acc * (1.0 + 1e-9) + 1e-12);
    }
    out
}

/// Apply the map to every time node from `fixed_levels` on; earlier nodes are
/// copied from `input`.
pub fn apply_map_window(
    input: &SolutionHistory,
    data: &InitialData,
    opts: &SolveOptions,
    fixed_levels: usize,
) -> Result<SolutionHistory> {
    let grid = input.grid;
    let (nx, nv) = (grid.x_count, grid.v_count);
    let per = grid.phase_len();
    let fixed = fixed_levels.clamp(1, grid.time_count);
    if opts.substeps == 0 {
        return Err(Error::InvalidParameter("substeps must be >= 1".into()));
    }

    let stages = StageField::new(&input.field, opts.substeps);
    let cutoffs = velocity_cutoffs(&stages, data);
    let bg = data.background;
    let tracer = Tracer::new(&stages).with_duhamel(&bg);
    let v_nodes = grid.v_nodes();
    let bg_nodes: Vec<f64> = v_nodes.iter().map(|&v| bg.value(v)).collect();
    let dv = grid.dv();

    let mut f = input.f.clone();
    let rows = map_rows_mut(opts.execution, &mut f[fixed * per..], nv, |r, row| {
        let m = fixed + r / nx;
        let x = grid.x(r % nx);
        let cutoff = cutoffs[m];
        let mut rebuilt = vec![0.0; nv];
        let mut out = RowResult {
            rho: 0.0,
            rebuilt: 0.0,
            traced: 0,
            culled: 0,
            left: 0,
            max_impulse: 0.0,
            failure: None,
        };
        for (i, slot) in row.iter_mut().enumerate() {
            let v = v_nodes[i];
            if v.abs() > cutoff {
                *slot = 0.0;
                out.culled += 1;
                continue;
            }
            let end = tracer.backward(m, 0, x, v);
            if !(end.x.is_finite() && end.v.is_finite()) {
                out.failure.get_or_insert((m, x, v));
                *slot = f64::NAN;
                continue;
            }
            *slot = data.f0(end.x, end.v);
            rebuilt[i] = data.g0(end.x, end.v) - end.duhamel;
            out.traced += 1;
            out.left += end.left_box as usize;
            out.max_impulse = out.max_impulse.max(end.impulse);
        }
        out.rho = simpson_by(nv, dv, |i| bg_nodes[i] - row[i]);
        out.rebuilt = simpson_by(nv, dv, |i| rebuilt[i]);
        out
    });

    if let Some((m, x, v)) = rows.iter().find_map(|r| r.failure) {
        return Err(Error::IntegrationFailure(format!(
            "non-finite characteristic from t = {}, x = {x}, v = {v}",
            grid.t(m)
        )));
    }

    let mut densities = input.densities[..fixed].to_vec();
    let mut duhamel_density: Vec<f64> = input.densities[..fixed].iter().flat_map(|d| d.values.iter().copied()).collect();
    let mut stats = MapStats {
        duhamel_density: Vec::new(),
        traced: 0,
        culled: 0,
        left_box: 0,
        max_impulse: 0.0,
    };
    for (k, chunk) in rows.chunks(nx).enumerate() {
        let m = fixed + k;
        let values: Vec<f64> = chunk.iter().map(|r| r.rho).collect();
        densities.push(DensitySnapshot::new(values, grid.t(m), input.exponent, &grid)?);
        duhamel_density.extend(chunk.iter().map(|r| r.rebuilt));
        for r in chunk {
            stats.traced += r.traced;
            stats.culled += r.culled;
            stats.left_box += r.left;
            stats.max_impulse = stats.max_impulse.max(r.max_impulse);
        }
    }
    stats.duhamel_density = duhamel_density;
    let field = FieldHistory::from_densities(grid, input.field.tail, &densities)?;
    Ok(SolutionHistory {
        grid,
        exponent: input.exponent,
        background: input.background,
        f,
        densities,
        field,
        origin: Origin::Iterate(match input.origin {
            Origin::Iterate(k) => k + 1,
            _ => 1,
        }),
        stats: Some(stats),
    })
}

/// One application of the map on a fresh history (`f̃(0) = f0`).
pub fn apply_map(input: &SolutionHistory, data: &InitialData, opts: &SolveOptions) -> Result<SolutionHistory> {
    apply_map_window(input, data, opts, 1)
}

/// Least-squares fit of `ln d_k + ln k! = a + k ln q`, the factorial
/// contraction model `d_k ≈ A q^k / k!` with `q = C3 · δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FactorialFit {
    /// Per-iteration ratio `q`.
    pub ratio: f64,
    /// `q / δ`.
    pub c3: f64,
    pub amplitude: f64,
    pub points: usize,
}

pub fn fit_factorial(distances: &[f64], duration: f64) -> Option<FactorialFit> {
    let mut ln_fact = 0.0;
    let mut pts = Vec::new();
    for (k, &d) in distances.iter().enumerate() {
        if k > 0 {
            ln_fact += (k as f64).ln();
        }
        if d > 0.0 && d.is_finite() {
            pts.push((k as f64, d.ln() + ln_fact));
        }
    }
    if pts.len() < 2 {
        return None;
    }
    let (slope, intercept) = least_squares(&pts);
    let ratio = slope.exp();
    Some(FactorialFit {
        ratio,
        c3: ratio / duration,
        amplitude: intercept.exp(),
        points: pts.len(),
    })
}

/// Slope and intercept of the least-squares line through `pts`.
pub(crate) fn least_squares(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuationCheck {
    pub norm_cap: f64,
    pub sup_norm_before: f64,
    pub sup_norm_extension: f64,
    pub cap_respected: bool,
}

/// Record of a Picard solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationTrace {
    /// `d_k = sup_t ‖(ρ^(k+1) - ρ^(k))(t)‖_p`.
    pub distances: Vec<f64>,
    /// `r_k = d_{k+1} / d_k`.
    pub ratios: Vec<f64>,
    /// Field impulse of each iterate.
    pub c1_per_iterate: Vec<f64>,
    /// `‖|g^(k)(t_m)|‖` per iterate and time node.
    pub triple_norm_history: Vec<Vec<f64>>,
    pub converged: bool,
    pub iterations: usize,
    pub tolerance: f64,
    pub window_start: f64,
    pub window_end: f64,
    pub fit: Option<FactorialFit>,
    pub continuation: Option<ContinuationCheck>,
}

impl IterationTrace {
    fn new(tol: f64, window_start: f64, window_end: f64) -> Self {
        Self {
            distances: Vec::new(),
            ratios: Vec::new(),
            c1_per_iterate: Vec::new(),
            triple_norm_history: Vec::new(),
            converged: false,
            iterations: 0,
            tolerance: tol,
            window_start,
            window_end,
            fit: None,
            continuation: None,
        }
    }

    pub fn c1_final(&self) -> f64 {
        self.c1_per_iterate.last().copied().unwrap_or(0.0)
    }
}

/// A solve result, whether or not it met the tolerance.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub solution: SolutionHistory,
    pub trace: IterationTrace,
}

fn density_distance(a: &SolutionHistory, b: &SolutionHistory, from: usize) -> Result<f64> {
    let xs = a.grid.x_nodes();
    let mut worst = 0.0f64;
    for m in from..a.grid.time_count {
        let diff: Vec<f64> = a.densities[m]
            .values
            .iter()
            .zip(&b.densities[m].values)
            .map(|(p, q)| p - q)
            .collect();
        worst = worst.max(weighted_sup_norm_at(&diff, &xs, a.exponent)?);
    }
    Ok(worst)
}

/// Iterate the map on time nodes `fixed_levels..` starting from `initial`.
/// `observer` sees every iterate as it is produced.
pub fn solve_window(
    initial: SolutionHistory,
    fixed_levels: usize,
    data: &InitialData,
    opts: &SolveOptions,
    observer: &mut dyn FnMut(usize, &SolutionHistory),
) -> Result<SolveOutcome> {
    let problems = opts.problems();
    if !problems.is_empty() {
        return Err(Error::InvalidParameter(problems.join("; ")));
    }
    let grid = initial.grid;
    let fixed = fixed_levels.clamp(1, grid.time_count);
    let mut trace = IterationTrace::new(opts.tol, grid.t(fixed - 1), grid.time_horizon);
    let mut current = initial;
    for k in 0..opts.max_iters {
        let next = apply_map_window(&current, data, opts, fixed)?;
        let d = density_distance(&next, &current, fixed)?;
        trace.distances.push(d);
        trace.c1_per_iterate.push(field_impulse(&next.field));
        trace.triple_norm_history.push(next.triple_norms(opts.execution)?);
        trace.iterations = k + 1;
        observer(k, &next);
        current = next;
        if d < opts.tol * trace.distances[0].max(1.0) {
            trace.converged = true;
            break;
        }
    }
    trace.ratios = trace
        .distances
        .windows(2)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
        .collect();
    trace.fit = fit_factorial(&trace.distances, trace.window_end - trace.window_start);
    if trace.converged {
        current.origin = Origin::Converged;
    }
    Ok(SolveOutcome {
        solution: current,
        trace,
    })
}

/// Solve from `f0` on `[0, T_end]`, returning the last iterate whether or not
/// it converged.
pub fn solve_outcome(
    data: &InitialData,
    grid: &PhaseGrid,
    opts: &SolveOptions,
    observer: &mut dyn FnMut(usize, &SolutionHistory),
) -> Result<SolveOutcome> {
    let initial = SolutionHistory::frozen(data, grid, opts.tail_mode, opts.execution)?;
    solve_window(initial, 1, data, opts, observer)
}

/// Solve from `f0` on `[0, T_end]`; `NonConvergence` if the tolerance is not
/// met within `max_iters`.
pub fn solve(data: &InitialData, grid: &PhaseGrid, opts: &SolveOptions) -> Result<(SolutionHistory, IterationTrace)> {
    let out = solve_outcome(data, grid, opts, &mut |_, _| {})?;
    if out.trace.converged {
        Ok((out.solution, out.trace))
    } else {
        Err(Error::NonConvergence {
            trace: Box::new(out.trace),
        })
    }
}

/// Continue a solution on `[0, T]` to `[0, T + delta]`, returning the last
/// iterate whether or not it converged.
pub fn extend_outcome(
    sol: &SolutionHistory,
    data: &InitialData,
    delta: f64,
    opts: &SolveOptions,
    norm_cap: f64,
) -> Result<SolveOutcome> {
    let before = sol
        .triple_norms(opts.execution)?
        .into_iter()
        .fold(0.0f64, f64::max);
    if before > norm_cap {
        return Err(Error::ContinuationRefused {
            norm: before,
            cap: norm_cap,
        });
    }
    let grid = sol.grid;
    let dt = grid.dt();
    let steps = (delta / dt).round();
    if !(delta > 0.0) || steps < 1.0 || (steps * dt - delta).abs() > 1e-9 * delta.max(dt) {
        return Err(Error::InvalidParameter(format!(
            "extension length {delta} must be a positive multiple of the time step {dt}"
        )));
    }
    let steps = steps as usize;
    let count = grid.time_count + steps;
    let ext_grid = grid.with_time(dt * (count - 1) as f64, count)?;
    let mut f = sol.f.clone();
    let last = sol.level(grid.time_count - 1).to_vec();
    for _ in 0..steps {
        f.extend_from_slice(&last);
    }
    let initial = SolutionHistory::from_levels(
        ext_grid,
        sol.background,
        sol.exponent,
        f,
        sol.tail_mode(),
        Origin::Frozen,
        opts.execution,
    )?;
    let mut out = solve_window(initial, grid.time_count, data, opts, &mut |_, _| {})?;
    let after = out.solution.triple_norms(opts.execution)?[grid.time_count..]
        .iter()
        .fold(0.0f64, |a, &b| a.max(b));
    out.trace.continuation = Some(ContinuationCheck {
        norm_cap,
        sup_norm_before: before,
        sup_norm_extension: after,
        cap_respected: after <= norm_cap,
    });
    Ok(out)
}

/// Continue a solution on `[0, T]` to `[0, T + delta]`.
pub fn extend(
    sol: &SolutionHistory,
    data: &InitialData,
    delta: f64,
    opts: &SolveOptions,
    norm_cap: f64,
) -> Result<(SolutionHistory, IterationTrace)> {
    let out = extend_outcome(sol, data, delta, opts, norm_cap)?;
    if out.trace.converged {
        Ok((out.solution, out.trace))
    } else {
        Err(Error::NonConvergence {
            trace: Box::new(out.trace),
        })
    }
}
