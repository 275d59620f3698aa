//! Charge density `ρ = ∫ (F - f) dv` and the field
//! `E(x) = ½ (∫_{-∞}^x ρ - ∫_x^∞ ρ)`.
//!
//! Inside `[-L, L]` the prefix integral is a cumulative trapezoid. Beyond the
//! box the density is closed with the power law `ρ(±L) (R(L)/R(y))^p`, whose
//! integrals give the tail masses `T∓` and the off-box field.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::PhaseGrid;
use crate::norms::{weight_pow, weighted_sup_norm_at};
use crate::profiles::BackgroundProfile;
use crate::quadrature::{simpson_by, trapezoid_prefix, weight_tail_integral, weight_tail_partial};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TailMode {
    /// Extend `ρ` past `±L` as `ρ(±L) (R(L)/R(y))^p`.
    #[default]
    PowerLaw,
    /// Treat `ρ` as zero outside the box.
    Zero,
}

/// Power-law closure of the density outside `[-L, L]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailModel {
    pub mode: TailMode,
    pub half_width: f64,
    pub exponent: f64,
    /// `∫_L^∞ R^{-p}`.
    pub tail_integral: f64,
    /// `R(L)^p`.
    edge_weight: f64,
}

impl TailModel {
    pub fn new(mode: TailMode, half_width: f64, exponent: f64) -> Self {
        Self {
            mode,
            half_width,
            exponent,
            tail_integral: weight_tail_integral(half_width, exponent),
            edge_weight: weight_pow(half_width, exponent),
        }
    }

    /// Tail coefficient `ρ(edge) R(L)^p` (zero in zero-tail mode).
    #[inline]
    pub fn coefficient(&self, rho_edge: f64) -> f64 {
        match self.mode {
            TailMode::PowerLaw => rho_edge * self.edge_weight,
            TailMode::Zero => 0.0,
        }
    }

    /// `∫_L^y R^{-p}` for `y >= L`.
    #[inline]
    pub fn increment(&self, y: f64) -> f64 {
        if y <= self.half_width {
            return 0.0;
        }
        if self.exponent == 2.0 {
            return (y.atan() - self.half_width.atan()).min(self.tail_integral);
        }
        weight_tail_partial(self.half_width, y, self.exponent)
    }
}

/// `ρ` at one time node.
#[derive(Debug, Clone, PartialEq)]
pub struct DensitySnapshot {
    pub values: Vec<f64>,
    pub time: f64,
    pub exponent: f64,
    /// Cached `‖ρ‖_p`.
    pub norm: f64,
}

impl DensitySnapshot {
    pub fn new(values: Vec<f64>, time: f64, exponent: f64, grid: &PhaseGrid) -> Result<Self> {
        let norm = weighted_sup_norm_at(&values, &grid.x_nodes(), exponent)?;
        Ok(Self {
            values,
            time,
            exponent,
            norm,
        })
    }
}

/// Simpson over v of `F(v_i) - f(x_j, v_i)` for every x-node.
pub fn density_values(f: &[f64], grid: &PhaseGrid, bg: &BackgroundProfile) -> Result<Vec<f64>> {
    let nv = grid.v_count;
    if f.len() != grid.phase_len() {
        return Err(Error::InvalidProfile(format!(
            "snapshot has {} values, grid needs {}",
            f.len(),
            grid.phase_len()
        )));
    }
    let background: Vec<f64> = grid.v_nodes().iter().map(|&v| bg.value(v)).collect();
    let dv = grid.dv();
    let mut out = Vec::with_capacity(grid.x_count);
    for row in f.chunks_exact(nv) {
        if let Some(i) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidProfile(format!("non-finite f at v-index {i}")));
        }
        out.push(simpson_by(nv, dv, |i| background[i] - row[i]));
    }
    Ok(out)
}

pub fn charge_density(
    f: &[f64],
    grid: &PhaseGrid,
    bg: &BackgroundProfile,
    exponent: f64,
    time: f64,
) -> Result<DensitySnapshot> {
    DensitySnapshot::new(density_values(f, grid, bg)?, time, exponent, grid)
}

/// Field values at the x-nodes of one time node plus the tail data needed to
/// evaluate it off the box.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSnapshot {
    pub values: Vec<f64>,
    /// Tail coefficients `c∓ = ρ(∓L) R(L)^p`.
    pub tail_minus: f64,
    pub tail_plus: f64,
    /// `T₋ + ∫_{-L}^{L} ρ + T₊`.
    pub total_mass: f64,
}

impl FieldSnapshot {
    /// `E(-∞)` and `E(+∞)` implied by the tail model.
    pub fn far_field(&self, tail: &TailModel) -> (f64, f64) {
        let n = self.values.len();
        (
            self.values[0] - self.tail_minus * tail.tail_integral,
            self.values[n - 1] + self.tail_plus * tail.tail_integral,
        )
    }

    /// Sup of `|E|` over ℝ for this snapshot: the node values and the far-field
    /// limits (the tail field is monotone between `E(±L)` and `E(±∞)`).
    pub fn sup_abs(&self, tail: &TailModel) -> f64 {
        let (lo, hi) = self.far_field(tail);
        self.values
            .iter()
            .fold(lo.abs().max(hi.abs()), |acc, v| acc.max(v.abs()))
    }

    pub fn max_abs_nodes(&self) -> f64 {
        self.values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }
}

/// `E(x_j) = P(x_j) - M/2` with `P` the prefix mass from `-∞`.
pub fn field_from_density(rho: &[f64], grid: &PhaseGrid, tail: &TailModel) -> FieldSnapshot {
    let n = rho.len();
    let prefix = trapezoid_prefix(rho, grid.dx());
    let tail_minus = tail.coefficient(rho[0]);
    let tail_plus = tail.coefficient(rho[n - 1]);
    let mass_minus = tail_minus * tail.tail_integral;
    let mass_plus = tail_plus * tail.tail_integral;
    let total_mass = mass_minus + prefix[n - 1] + mass_plus;
    let half = 0.5 * total_mass;
    let values = prefix.iter().map(|&p| (mass_minus + p) - half).collect();
    FieldSnapshot {
        values,
        tail_minus,
        tail_plus,
        total_mass,
    }
}

/// Lagrange weights of the 4-point stencil at local coordinate `θ ∈ [0, 3]`.
#[inline]
pub(crate) fn cubic_weights(th: f64) -> [f64; 4] {
    let a = th - 1.0;
    let b = th - 2.0;
    let c = th - 3.0;
    [
        -(a * b * c) / 6.0,
        th * b * c / 2.0,
        -(th * a * c) / 2.0,
        th * a * b / 6.0,
    ]
}

/// Stencil start and local coordinate for fractional index `u ∈ [0, n-1]`.
#[inline]
pub(crate) fn cubic_stencil(u: f64, n: usize) -> (usize, f64) {
    let base = (u.floor() as isize - 1).clamp(0, n as isize - 4) as usize;
    (base, u - base as f64)
}

/// Cubic interpolation written as offsets from the second stencil node, so
/// constant data is reproduced exactly.
#[inline]
pub(crate) fn cubic_eval(row: &[f64], u: f64) -> f64 {
    let (base, th) = cubic_stencil(u, row.len());
    let w = cubic_weights(th);
    let c = row[base + 1];
    c + w[0] * (row[base] - c) + w[2] * (row[base + 2] - c) + w[3] * (row[base + 3] - c)
}

/// Fractional node index of `x` on the x-axis, snapped to an exact integer
/// when `x` is a node up to rounding.
#[inline]
pub(crate) fn fractional_index(x: f64, inv_dx: f64, center: f64) -> f64 {
    let u = x * inv_dx + center;
    let r = u.round();
    if (u - r).abs() < 1e-9 {
        r
    } else {
        u
    }
}

/// Field snapshots at every time node with the interpolation contract:
/// cubic Lagrange in x, linear in t, tail model beyond `±L`.
#[derive(Debug, Clone)]
pub struct FieldHistory {
    pub grid: PhaseGrid,
    pub tail: TailModel,
    pub snapshots: Vec<FieldSnapshot>,
}

impl FieldHistory {
    pub fn new(grid: PhaseGrid, tail: TailModel, snapshots: Vec<FieldSnapshot>) -> Result<Self> {
        if snapshots.len() != grid.time_count {
            return Err(Error::InvalidParameter(format!(
                "{} field snapshots for {} time nodes",
                snapshots.len(),
                grid.time_count
            )));
        }
        if snapshots.iter().any(|s| s.values.len() != grid.x_count) {
            return Err(Error::InvalidParameter("field snapshot length differs from x_count".into()));
        }
        Ok(Self {
            grid,
            tail,
            snapshots,
        })
    }

    /// Build snapshots from density values at every time node.
    pub fn from_densities(grid: PhaseGrid, tail: TailModel, densities: &[DensitySnapshot]) -> Result<Self> {
        let snaps = densities
            .iter()
            .map(|d| field_from_density(&d.values, &grid, &tail))
            .collect();
        Self::new(grid, tail, snaps)
    }

    /// A history whose field is the same closure of `(t, x)` at every node,
    /// with no tail beyond the box (for synthetic experiments).
    pub fn from_fn<F: Fn(f64, f64) -> f64>(grid: PhaseGrid, exponent: f64, field: F) -> Result<Self> {
        let tail = TailModel::new(TailMode::Zero, grid.x_half_width, exponent);
        let snaps = (0..grid.time_count)
            .map(|m| {
                let t = grid.t(m);
                let values: Vec<f64> = (0..grid.x_count).map(|j| field(t, grid.x(j))).collect();
                let total_mass = values[grid.x_count - 1] - values[0];
                FieldSnapshot {
                    values,
                    tail_minus: 0.0,
                    tail_plus: 0.0,
                    total_mass,
                }
            })
            .collect();
        Self::new(grid, tail, snaps)
    }

    pub fn time_span(&self) -> f64 {
        self.grid.time_horizon
    }

    /// Field at `(t, x)`.
    pub fn interp(&self, t: f64, x: f64) -> Result<f64> {
        let g = &self.grid;
        let span = g.time_horizon;
        if !t.is_finite() || t < -1e-12 * span || t > span * (1.0 + 1e-12) {
            return Err(Error::OutOfRange(format!("t = {t} outside [0, {span}]")));
        }
        let mut tau = (t / g.dt()).clamp(0.0, (g.time_count - 1) as f64);
        if (tau - tau.round()).abs() < 1e-9 {
            tau = tau.round();
        }
        let mut m = tau.floor() as usize;
        if m >= g.time_count - 1 {
            m = g.time_count - 2;
        }
        let w = tau - m as f64;
        let (a, b) = (&self.snapshots[m], &self.snapshots[m + 1]);
        let lerp = |p: f64, q: f64| if w == 0.0 { p } else { (1.0 - w) * p + w * q };
        Ok(self.eval_lerped(x, |k| lerp(a.values[k], b.values[k]), lerp(a.tail_minus, b.tail_minus), lerp(a.tail_plus, b.tail_plus)))
    }

    #[inline]
    fn eval_lerped<V: Fn(usize) -> f64>(&self, x: f64, value: V, c_minus: f64, c_plus: f64) -> f64 {
        let g = &self.grid;
        let n = g.x_count;
        let u = fractional_index(x, 1.0 / g.dx(), g.x_center());
        if u < 0.0 {
            value(0) - c_minus * self.tail.increment(-x)
        } else if u > (n - 1) as f64 {
            value(n - 1) + c_plus * self.tail.increment(x)
        } else {
            let (base, th) = cubic_stencil(u, n);
            let w = cubic_weights(th);
            w[0] * value(base) + w[1] * value(base + 1) + w[2] * value(base + 2) + w[3] * value(base + 3)
        }
    }

    /// Sup of `|E(t_m, ·)|` over ℝ per time node.
    pub fn sup_abs_per_node(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.sup_abs(&self.tail)).collect()
    }

    /// Concatenate a later history whose first node coincides with this one's
    /// last node.
    pub fn concat(&self, later: &FieldHistory) -> Result<FieldHistory> {
        if !self.grid.same_phase_axes(&later.grid) || (self.grid.dt() - later.grid.dt()).abs() > 1e-12 * self.grid.dt() {
            return Err(Error::InvalidComparison("field histories have different grids".into()));
        }
        let count = self.grid.time_count + later.grid.time_count - 1;
        let horizon = self.grid.dt() * (count - 1) as f64;
        let grid = self.grid.with_time(horizon, count)?;
        let mut snaps = self.snapshots.clone();
        snaps.extend(later.snapshots.iter().skip(1).cloned());
        Self::new(grid, self.tail, snaps)
    }
}

/// Precomputed field rows at the RK4 stage times of a fixed-step flow with
/// `substeps` steps per snapshot interval.
///
/// Stage times are `k Δt / (2 substeps)` for `k = 0..=2 substeps (Nt - 1)`, so
/// every step lies inside one linear-in-time piece.
#[derive(Debug, Clone)]
pub struct StageField<'a> {
    history: &'a FieldHistory,
    pub substeps: usize,
    rows: Vec<f64>,
    tails: Vec<(f64, f64)>,
    nx: usize,
    inv_dx: f64,
    center: f64,
}

impl<'a> StageField<'a> {
    pub fn new(history: &'a FieldHistory, substeps: usize) -> Self {
        let g = &history.grid;
        let nx = g.x_count;
        let per = 2 * substeps;
        let stages = per * (g.time_count - 1) + 1;
        let mut rows = Vec::with_capacity(stages * nx);
        let mut tails = Vec::with_capacity(stages);
        for k in 0..stages {
            let m = (k / per).min(g.time_count - 1);
            let r = k - m * per;
            let a = &history.snapshots[m];
            if r == 0 {
                rows.extend_from_slice(&a.values);
                tails.push((a.tail_minus, a.tail_plus));
            } else {
                let b = &history.snapshots[m + 1];
                let w = r as f64 / per as f64;
                rows.extend(a.values.iter().zip(&b.values).map(|(&p, &q)| (1.0 - w) * p + w * q));
                tails.push(((1.0 - w) * a.tail_minus + w * b.tail_minus, (1.0 - w) * a.tail_plus + w * b.tail_plus));
            }
        }
        Self {
            history,
            substeps,
            rows,
            tails,
            nx,
            inv_dx: 1.0 / g.dx(),
            center: g.x_center(),
        }
    }

    pub fn history(&self) -> &FieldHistory {
        self.history
    }

    /// Stage step `Δt / (2 substeps)`.
    pub fn half_step(&self) -> f64 {
        self.history.grid.dt() / (2 * self.substeps) as f64
    }

    /// Stage index of time node `m`.
    #[inline]
    pub fn node_stage(&self, m: usize) -> usize {
        2 * self.substeps * m
    }

    pub fn stage_count(&self) -> usize {
        self.tails.len()
    }

    /// Row of stage `k`.
    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k * self.nx..(k + 1) * self.nx]
    }

    /// Field at stage `k`, position `x`. Returns whether `x` is outside the box.
    #[inline]
    pub fn eval(&self, k: usize, x: f64) -> (f64, bool) {
        let row = &self.rows[k * self.nx..(k + 1) * self.nx];
        let u = x * self.inv_dx + self.center;
        if u < 0.0 {
            let (cm, _) = self.tails[k];
            (row[0] - cm * self.history.tail.increment(-x), true)
        } else if u > (self.nx - 1) as f64 {
            let (_, cp) = self.tails[k];
            (row[self.nx - 1] + cp * self.history.tail.increment(x), true)
        } else {
            (cubic_eval(row, u), false)
        }
    }

    /// Upper bound on `sup_x |E|` at stage `k`, covering cubic overshoot
    /// (Lebesgue constant 1.25) and the tail.
    pub fn sup_bound(&self, k: usize) -> f64 {
        let row = self.row(k);
        let (cm, cp) = self.tails[k];
        let ti = self.history.tail.tail_integral;
        let nodes = row.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let far = (row[0] - cm * ti).abs().max((row[self.nx - 1] + cp * ti).abs());
        1.25 * nodes.max(far)
    }
}

/// Max interior mismatch between the centered derivative of `E` and `ρ`.
pub fn derivative_mismatch(e: &[f64], rho: &[f64], dx: f64) -> f64 {
    let n = e.len();
    (1..n - 1)
        .map(|j| ((e[j + 1] - e[j - 1]) / (2.0 * dx) - rho[j]).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::norms::weight_decay;
    use crate::profiles::{make_initial_data, PerturbationShape};
    use crate::quadrature::weight_full_integral;

    fn grid() -> PhaseGrid {
        PhaseGrid::new(20.0, 401, 4.0, 129, 0.5, 11).unwrap()
    }

    #[test]
    fn neutral_background_has_zero_density() {
        let g = grid();
        let bg = BackgroundProfile::new(1.0, 1.0).unwrap();
        let f: Vec<f64> = (0..g.x_count).flat_map(|_| g.v_nodes().into_iter().map(|v| bg.value(v))).collect();
        let rho = charge_density(&f, &g, &bg, 2.0, 0.0).unwrap();
        assert!(rho.values.iter().all(|&r| r == 0.0));
        assert_eq!(rho.norm, 0.0);
    }

    #[test]
    fn density_of_builtin_perturbation() {
        let g = grid();
        let bg = BackgroundProfile::new(1.0, 1.0).unwrap();
        let data = make_initial_data(bg, 0.05, 2.0, PerturbationShape::QuarticBump, &g).unwrap();
        let rho = charge_density(&data.f0_snapshot(&g), &g, &bg, 2.0, 0.0).unwrap();
        // refined-quadrature oracle for ∫φ: midpoint rule on 2·10⁶ cells
        let n = 2_000_000;
        let h = 2.0 / n as f64;
        let phi_int: f64 = (0..n)
            .map(|k| {
                let v = -1.0 + (k as f64 + 0.5) * h;
                (1.0 - v * v).powi(4)
            })
            .sum::<f64>()
            * h;
        assert!((phi_int - 256.0 / 315.0).abs() < 1e-10);
        for j in (0..g.x_count).step_by(17) {
            let expect = 0.05 * weight_decay(g.x(j), 2.0) * phi_int;
            assert!((rho.values[j] - expect).abs() < 1e-6 * expect, "j={j}");
        }
    }

    #[test]
    fn odd_velocity_part_does_not_change_density() {
        let g = grid();
        let bg = BackgroundProfile::new(1.0, 1.0).unwrap();
        let mut even = vec![0.0; g.phase_len()];
        let mut full = vec![0.0; g.phase_len()];
        for j in 0..g.x_count {
            for i in 0..g.v_count {
                let (x, v) = (g.x(j), g.v(i));
                let e = bg.value(v) - 0.01 * weight_decay(x, 2.0) * (-v * v).exp();
                even[j * g.v_count + i] = e;
                full[j * g.v_count + i] = e + 0.02 * weight_decay(x, 2.0) * v * (-v * v).exp();
            }
        }
        let a = density_values(&even, &g, &bg).unwrap();
        let b = density_values(&full, &g, &bg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_snapshot_is_rejected() {
        let g = grid();
        let bg = BackgroundProfile::new(1.0, 1.0).unwrap();
        let mut f = vec![0.0; g.phase_len()];
        f[10] = f64::INFINITY;
        assert!(matches!(charge_density(&f, &g, &bg, 2.0, 0.0), Err(Error::InvalidProfile(_))));
    }

    #[test]
    fn zero_density_gives_zero_field() {
        let g = grid();
        let tail = TailModel::new(TailMode::PowerLaw, g.x_half_width, 2.0);
        let s = field_from_density(&vec![0.0; g.x_count], &g, &tail);
        assert!(s.values.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn even_density_gives_odd_field() {
        let g = grid();
        let tail = TailModel::new(TailMode::PowerLaw, g.x_half_width, 2.0);
        let rho: Vec<f64> = g.x_nodes().iter().map(|&x| weight_decay(x, 2.0) * (1.0 + 0.3 * x.cos())).collect();
        let s = field_from_density(&rho, &g, &tail);
        let scale = s.max_abs_nodes();
        for j in 0..g.x_count {
            let k = g.x_count - 1 - j;
            assert!((s.values[j] + s.values[k]).abs() <= 1e-12 * scale);
        }
        let (lo, hi) = s.far_field(&tail);
        assert!((lo + hi).abs() <= 1e-12 * scale);
        assert!((hi - 0.5 * s.total_mass).abs() <= 1e-12 * scale);
        // E(L) - E(-L) equals the trapezoid mass over the box
        let box_mass = crate::quadrature::trapezoid(&rho, g.dx());
        let norm = weighted_sup_norm_at(&rho, &g.x_nodes(), 2.0).unwrap();
        assert!((s.values[g.x_count - 1] - s.values[0] - box_mass).abs() <= 1e-10 * norm);
    }

    #[test]
    fn indicator_density_matches_prefix_oracle() {
        let g = PhaseGrid::new(4.0, 81, 1.0, 5, 1.0, 2).unwrap();
        let tail = TailModel::new(TailMode::PowerLaw, g.x_half_width, 2.0);
        let rho: Vec<f64> = g.x_nodes().iter().map(|&x| if x.abs() <= 1.0 + 1e-12 { 1.0 } else { 0.0 }).collect();
        let s = field_from_density(&rho, &g, &tail);
        // exact: E = x inside, ±1 outside; trapezoid smears the jump by half a cell
        let dx = g.dx();
        let mut prefix = 0.0;
        let total: f64 = dx * rho.iter().sum::<f64>();
        for j in 0..g.x_count {
            let x = g.x(j);
            assert!((s.values[j] - x.clamp(-1.0, 1.0)).abs() <= 0.5 * dx + 1e-12, "x={x}");
            // independent prefix sum of the same trapezoid rule (zero edge values)
            if j > 0 {
                prefix += 0.5 * dx * (rho[j - 1] + rho[j]);
            }
            assert!((s.values[j] - (prefix - 0.5 * total)).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn field_bound_and_compatibility_refinement() {
        let errs: Vec<f64> = [201usize, 401, 801]
            .iter()
            .map(|&nx| {
                let g = PhaseGrid::new(20.0, nx, 1.0, 5, 1.0, 2).unwrap();
                let tail = TailModel::new(TailMode::PowerLaw, g.x_half_width, 2.0);
                let rho: Vec<f64> = g.x_nodes().iter().map(|&x| weight_decay(x - 0.5, 2.0) * 0.02).collect();
                let s = field_from_density(&rho, &g, &tail);
                let norm = weighted_sup_norm_at(&rho, &g.x_nodes(), 2.0).unwrap();
                assert!(s.max_abs_nodes() <= 1.05 * norm * weight_full_integral(2.0));
                derivative_mismatch(&s.values, &rho, g.dx())
            })
            .collect();
        assert!(errs[0] / errs[1] >= 3.5 && errs[1] / errs[2] >= 3.5, "{errs:?}");
    }

    #[test]
    fn zero_tail_mode_differs_only_by_tail_mass() {
        let g = grid();
        let rho: Vec<f64> = g.x_nodes().iter().map(|&x| weight_decay(x, 2.0)).collect();
        let pl = field_from_density(&rho, &g, &TailModel::new(TailMode::PowerLaw, 20.0, 2.0));
        let zt = field_from_density(&rho, &g, &TailModel::new(TailMode::Zero, 20.0, 2.0));
        let tail_mass = rho[0] * 401.0 * (std::f64::consts::FRAC_PI_2 - 20f64.atan());
        assert!((pl.total_mass - zt.total_mass - 2.0 * tail_mass).abs() < 1e-12);
    }

    fn history_from(g: PhaseGrid, f: impl Fn(f64, f64) -> f64) -> FieldHistory {
        FieldHistory::from_fn(g, 2.0, f).unwrap()
    }

    #[test]
    fn interp_reproduces_nodes_and_linear_fields() {
        let g = PhaseGrid::new(5.0, 51, 1.0, 5, 1.0, 11).unwrap();
        let h = history_from(g, |t, x| (x * 1.3).sin() * (1.0 + t));
        for m in 0..g.time_count {
            for j in 0..g.x_count {
                assert_eq!(h.interp(g.t(m), g.x(j)).unwrap(), h.snapshots[m].values[j]);
            }
        }
        let lin = history_from(g, |t, x| 2.0 * x - 0.5 + t * (0.3 * x + 1.0));
        let (t0, t1) = (g.t(3), g.t(4));
        let tm = 0.5 * (t0 + t1);
        for &x in &[-4.93, -0.17, 0.0, 2.71, 4.99] {
            let mean = 0.5 * (lin.interp(t0, x).unwrap() + lin.interp(t1, x).unwrap());
            assert!((lin.interp(tm, x).unwrap() - mean).abs() < 1e-13);
            assert!((lin.interp(tm, x).unwrap() - (2.0 * x - 0.5 + tm * (0.3 * x + 1.0))).abs() < 1e-13);
        }
        assert!(matches!(h.interp(1.5, 0.0), Err(Error::OutOfRange(_))));
        assert!(matches!(h.interp(-0.1, 0.0), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn interp_error_refinement() {
        // E = sin(x) e^{-t}: error should scale like Δx⁴ + Δt².
        let err = |nx: usize, nt: usize| {
            let g = PhaseGrid::new(5.0, nx, 1.0, 5, 1.0, nt).unwrap();
            let h = history_from(g, |t, x| x.sin() * (-t).exp());
            let mut worst = 0.0f64;
            for k in 0..997 {
                let t = (k as f64 * 0.618_033_988_7).fract();
                let x = -5.0 + 10.0 * (k as f64 * 0.414_213_562_3).fract();
                worst = worst.max((h.interp(t, x).unwrap() - x.sin() * (-t).exp()).abs());
            }
            worst
        };
        // time refinement with a fine x grid: second order
        let (a, b) = (err(2001, 11), err(2001, 21));
        assert!(a / b > 3.5, "time ratio {}", a / b);
        // space refinement with a fine t grid: fourth order
        let (c, d) = (err(41, 4001), err(81, 4001));
        assert!(c / d > 12.0, "space ratio {}", c / d);
    }

    #[test]
    fn off_box_queries_follow_tail_model() {
        let g = grid();
        let tail = TailModel::new(TailMode::PowerLaw, g.x_half_width, 2.0);
        let rho: Vec<f64> = g.x_nodes().iter().map(|&x| weight_decay(x, 2.0)).collect();
        let snap = field_from_density(&rho, &g, &tail);
        let hist = FieldHistory::new(g.with_time(1.0, 2).unwrap(), tail, vec![snap.clone(), snap.clone()]).unwrap();
        let e = hist.interp(0.3, 25.0).unwrap();
        let expect = snap.values[400] + rho[400] * 401.0 * (25f64.atan() - 20f64.atan());
        assert!((e - expect).abs() < 1e-14);
        let far = hist.interp(0.3, 1e15).unwrap();
        assert!((far - snap.far_field(&tail).1).abs() < 1e-12);
        let left = hist.interp(0.3, -25.0).unwrap();
        assert!((left + e).abs() < 1e-13);
    }

    #[test]
    fn stage_field_matches_interp_at_nodes_and_midpoints() {
        let g = PhaseGrid::new(5.0, 51, 1.0, 5, 1.0, 6).unwrap();
        let h = history_from(g, |t, x| (x * 0.7).cos() * (1.0 - t));
        let sf = StageField::new(&h, 4);
        assert_eq!(sf.stage_count(), 2 * 4 * 5 + 1);
        for k in 0..sf.stage_count() {
            let t = k as f64 * sf.half_step();
            for &x in &[-4.7, -1.05, 0.0, 0.33, 3.9] {
                let (a, _) = sf.eval(k, x);
                assert!((a - h.interp(t, x).unwrap()).abs() < 1e-14);
            }
            assert!(sf.sup_bound(k) >= sf.row(k).iter().fold(0.0f64, |a, v| a.max(v.abs())));
        }
    }
}
