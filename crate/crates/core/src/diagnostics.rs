//! Numerical experiments for the a-priori estimates behind the solver: the
//! field impulse and velocity drift of characteristics, the weighted
//! integral bounds, support growth, spatial decay, and the Duhamel, charge
//! and volume consistency checks.
//!
//! "Bounded in x" is tested as a trend: the least-squares slope of
//! `log(I R^p)` against `log R` over the outer half of the probes must not
//! exceed [`GROWTH_SLOPE_LIMIT`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::characteristics::{flow_between, flow_jacobian, Tracer};
use crate::error::{Error, Result};
use crate::exec::{map_range, Execution};
use crate::field::{cubic_stencil, cubic_weights, derivative_mismatch, FieldHistory, StageField};
use crate::grid::PhaseGrid;
use crate::norms::{weight, weight_decay, weight_pow, weighted_sup_norm_at, WeightedProfile};
use crate::picard::{least_squares, SolutionHistory};
use crate::quadrature::{simpson_by, trapezoid, weight_integral, weight_tail_integral};

pub const GROWTH_SLOPE_LIMIT: f64 = 0.1;

/// Threshold below which `g` counts as zero when measuring velocity support.
pub const SUPPORT_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeRow {
    pub x: f64,
    pub value: f64,
    /// `value · R^p(x)` (or the ratio for the comparison experiment).
    pub weighted: f64,
}

/// Outcome of one experiment. `worst_violation` is signed slack: `<= 0` iff
/// the check passed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaReport {
    pub lemma: String,
    pub samples: usize,
    pub worst_violation: f64,
    pub constants: BTreeMap<String, f64>,
    pub family: Option<String>,
    pub pass: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub probes: Vec<ProbeRow>,
}

impl LemmaReport {
    fn new(lemma: &str, samples: usize, worst_violation: f64) -> Self {
        Self {
            lemma: lemma.into(),
            samples,
            worst_violation,
            constants: BTreeMap::new(),
            family: None,
            pass: worst_violation <= 0.0,
            probes: Vec::new(),
        }
    }

    fn with(mut self, key: &str, value: f64) -> Self {
        self.constants.insert(key.into(), value);
        self
    }
}

/// `C1_meas`: the trapezoid in time of `sup_x |E(s, ·)|` (far-field limits
/// included), maximised over the end time.
pub fn field_impulse(hist: &FieldHistory) -> f64 {
    field_impulse_curve(hist).last().copied().unwrap_or(0.0)
}

/// Running field impulse `∫_0^{t_m} sup_x |E| ds` per time node.
pub fn field_impulse_curve(hist: &FieldHistory) -> Vec<f64> {
    let sup = hist.sup_abs_per_node();
    let dt = hist.grid.dt();
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(sup.len());
    out.push(0.0);
    for w in sup.windows(2) {
        acc += 0.5 * dt * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

/// `k`-th element of the van der Corput sequence in `base`.
pub fn halton(mut k: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while k > 0 {
        f /= base as f64;
        r += f * (k % base) as f64;
        k /= base;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Settings {
    pub samples: usize,
    pub substeps: usize,
    /// Multiplier on `C1_meas` in the tested bound (`1` for the plain check).
    pub c1_scale: f64,
    pub execution: Execution,
}

impl Default for Lemma1Settings {
    fn default() -> Self {
        Self {
            samples: 10_000,
            substeps: crate::characteristics::DEFAULT_SUBSTEPS,
            c1_scale: 1.0,
            execution: Execution::Parallel,
        }
    }
}

/// Velocity drift along characteristics: `|v| - C1 - ε <= |V(s)| <= |v| + C1 + ε`
/// for quasi-random `(s <= t, x, v)`, plus `½|v| <= |V| <= 3/2 |v|` when
/// `|v| > 2 (C1 + ε)`. `ε` is ten times the largest change of `V(s)` when the
/// integrator step is halved.
pub fn check_lemma1(sol: &SolutionHistory, settings: &Lemma1Settings) -> Result<LemmaReport> {
    if settings.substeps == 0 || settings.samples == 0 {
        return Err(Error::InvalidParameter("lemma 1 needs samples >= 1 and substeps >= 1".into()));
    }
    let grid = sol.grid;
    let coarse = StageField::new(&sol.field, settings.substeps);
    let fine = StageField::new(&sol.field, 2 * settings.substeps);
    let (tc, tf) = (Tracer::new(&coarse), Tracer::new(&fine));
    let c1 = field_impulse(&sol.field) * settings.c1_scale;
    let nt = grid.time_count;
    let ends = map_range(settings.execution, settings.samples, |k| {
        let k = k + 1;
        let m = 1 + ((halton(k, 2) * (nt - 1) as f64) as usize).min(nt - 2);
        let n = ((halton(k, 3) * (m + 1) as f64) as usize).min(m);
        let x = grid.x_half_width * (2.0 * halton(k, 5) - 1.0);
        let v = grid.v_half_width * (2.0 * halton(k, 7) - 1.0);
        let a = tc.backward(m, n, x, v);
        let b = tf.backward(m, n, x, v);
        (v, a.v, (a.v - b.v).abs())
    });
    if ends.iter().any(|e| !e.1.is_finite()) {
        return Err(Error::IntegrationFailure("non-finite characteristic in lemma 1 sampling".into()));
    }
    let self_conv = ends.iter().fold(0.0f64, |a, e| a.max(e.2));
    let eps = 10.0 * self_conv + 1e-14;
    let mut worst = f64::NEG_INFINITY;
    let mut count = 0usize;
    for &(v, vs, _) in &ends {
        let (av, avs) = (v.abs(), vs.abs());
        let mut slack = (av - c1 - eps - avs).max(avs - av - c1 - eps);
        if av > 2.0 * (c1 + eps) {
            slack = slack.max(0.5 * av - avs).max(avs - 1.5 * av);
        }
        if slack > 0.0 {
            count += 1;
        }
        worst = worst.max(slack);
    }
    Ok(LemmaReport::new("lemma1", settings.samples, worst)
        .with("c1_meas", c1)
        .with("epsilon", eps)
        .with("self_convergence", self_conv)
        .with("violations", count as f64))
}

/// Profile of the synthetic field in the weighted-integral experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticProfile {
    /// `B S(x) / max(1, S(∞))` with `S(x) = ∫_0^x R^{-p}`.
    Primitive,
    /// `𝓔 ≡ B`.
    Constant,
}

/// A field `𝓔` with `|𝓔| <= B`, `|𝓔'| <= B R^{-p}` and a test function
/// `H(v) = (1 - v²/W_H²)^4` supported on `[-W_H, W_H]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticFieldSpec {
    pub bound: f64,
    pub profile: SyntheticProfile,
    pub h_radius: f64,
    pub exponent: f64,
}

impl SyntheticFieldSpec {
    pub fn new(bound: f64, profile: SyntheticProfile, h_radius: f64, exponent: f64) -> Result<Self> {
        let spec = Self {
            bound,
            profile,
            h_radius,
            exponent,
        };
        if !(bound >= 0.0 && bound.is_finite()) || !(h_radius > 0.0) || !(exponent > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "synthetic field needs B >= 0, W_H > 0, p > 1 (got {bound}, {h_radius}, {exponent})"
            )));
        }
        Ok(spec)
    }

    fn primitive_scale(&self) -> f64 {
        let full = weight_integral(0.0, 1.0, self.exponent) + weight_tail_integral(1.0, self.exponent);
        self.bound / full.max(1.0)
    }

    pub fn field(&self, x: f64) -> f64 {
        match self.profile {
            SyntheticProfile::Constant => self.bound,
            SyntheticProfile::Primitive => self.primitive_scale() * weight_integral(0.0, x, self.exponent),
        }
    }

    pub fn field_d1(&self, x: f64) -> f64 {
        match self.profile {
            SyntheticProfile::Constant => 0.0,
            SyntheticProfile::Primitive => self.primitive_scale() * weight_decay(x, self.exponent),
        }
    }

    pub fn h(&self, v: f64) -> f64 {
        let u = 1.0 - (v / self.h_radius).powi(2);
        if u <= 0.0 {
            0.0
        } else {
            u.powi(4)
        }
    }

    pub fn h_d1(&self, v: f64) -> f64 {
        let r2 = self.h_radius * self.h_radius;
        let u = 1.0 - v * v / r2;
        if u <= 0.0 {
            0.0
        } else {
            -8.0 * v / r2 * u.powi(3)
        }
    }

    /// Largest `|𝓔| / B` and `|𝓔'| R^p / B` on a dense grid over `[-span, span]`.
    pub fn verify_bounds(&self, span: f64) -> (f64, f64) {
        let n = 20_001;
        let b = self.bound.max(f64::MIN_POSITIVE);
        let mut worst = (0.0f64, 0.0f64);
        for k in 0..n {
            let x = span * (2.0 * k as f64 / (n - 1) as f64 - 1.0);
            worst.0 = worst.0.max(self.field(x).abs() / b);
            worst.1 = worst.1.max(self.field_d1(x).abs() * weight_pow(x, self.exponent) / b);
        }
        worst
    }

    pub fn family(&self) -> String {
        match self.profile {
            SyntheticProfile::Constant => format!("constant B={}", self.bound),
            SyntheticProfile::Primitive => format!("primitive-of-weight B={} p={}", self.bound, self.exponent),
        }
    }
}

/// Slope of `log y` against `log R(x)` over the probes with `x >= max/2`,
/// ignoring non-positive values. `None` when fewer than two points remain.
pub fn growth_slope(rows: &[ProbeRow]) -> Option<f64> {
    let xmax = rows.iter().fold(0.0f64, |a, r| a.max(r.x.abs()));
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.x.abs() >= 0.5 * xmax && r.weighted > 0.0 && r.weighted.is_finite())
        .map(|r| (weight(r.x).ln(), r.weighted.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    Some(least_squares(&pts).0)
}

/// Velocity grid covering the support of `H` pushed by at most `impulse`.
fn lemma_velocity_nodes(h_radius: f64, impulse: f64, count: usize) -> (Vec<f64>, f64) {
    let half = h_radius + impulse + 0.25 * h_radius;
    let dv = 2.0 * half / (count - 1) as f64;
    let c = (count - 1) as f64 / 2.0;
    ((0..count).map(|i| (i as f64 - c) * dv).collect(), dv)
}

/// Velocity nodes used by the weighted-integral experiment.
pub const LEMMA2_VELOCITY_NODES: usize = 401;

/// `I(x) = |∫ 𝓔(X(s)) H'(V(s)) dv|` along flows of `hist` from `(t, x, v)`
/// back to `s`; reports `sup I R^p / B` and the growth trend.
pub fn check_lemma2(
    spec: &SyntheticFieldSpec,
    hist: &FieldHistory,
    probes: &[f64],
    s: f64,
    t: f64,
    substeps: usize,
    execution: Execution,
) -> Result<LemmaReport> {
    if probes.len() < 4 {
        return Err(Error::InsufficientData("lemma 2 needs at least 4 probes".into()));
    }
    let impulse = field_impulse(hist);
    let (vs, dv) = lemma_velocity_nodes(spec.h_radius, impulse, LEMMA2_VELOCITY_NODES);
    let rows = map_range(execution, probes.len(), |k| -> Result<ProbeRow> {
        let x = probes[k];
        let mut integrand = Vec::with_capacity(vs.len());
        for &v in &vs {
            let end = flow_between(t, s, x, v, hist, substeps)?;
            integrand.push(spec.field(end.x) * spec.h_d1(end.v));
        }
        let value = simpson_by(vs.len(), dv, |i| integrand[i]).abs();
        Ok(ProbeRow {
            x,
            value,
            weighted: value * weight_pow(x, spec.exponent),
        })
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let sup = rows.iter().fold(0.0f64, |a, r| a.max(r.weighted));
    let slope = growth_slope(&rows);
    let violation = slope.map_or(-GROWTH_SLOPE_LIMIT, |k| k - GROWTH_SLOPE_LIMIT);
    let b = spec.bound;
    let mut rep = LemmaReport::new("lemma2", rows.len(), violation)
        .with("sup_weighted", sup)
        .with("fitted_c", if b > 0.0 { sup / b } else { 0.0 })
        .with("growth_slope", slope.unwrap_or(f64::NEG_INFINITY).max(-1e300))
        .with("bound", b)
        .with("s", s)
        .with("t", t);
    rep.family = Some(spec.family());
    rep.probes = rows;
    Ok(rep)
}

/// Centered (one-sided at the edges) `∂_v` of one phase snapshot.
pub fn dv_snapshot(g: &[f64], grid: &PhaseGrid) -> Vec<f64> {
    let nv = grid.v_count;
    let dv = grid.dv();
    let mut out = vec![0.0; g.len()];
    for (row, o) in g.chunks_exact(nv).zip(out.chunks_exact_mut(nv)) {
        for i in 0..nv {
            o[i] = crate::norms::fd_derivative(|k| row[k], nv, i, dv);
        }
    }
    out
}

/// Tensor cubic interpolation of a phase snapshot at `(x, v)`: zero outside
/// the velocity range, constant in x beyond the box.
///
/// `g` itself does not decay in x once the field has a far-field limit
/// (`F(v) - F(V0)` stays of order `E(±∞) t`); only `∂_x g` and `∫ g dv` do,
/// so the edge column is the right continuation.
pub fn phase_interp(values: &[f64], grid: &PhaseGrid, x: f64, v: f64) -> f64 {
    let (nx, nv) = (grid.x_count, grid.v_count);
    let uv = v / grid.dv() + grid.v_center();
    if !(0.0..=(nv - 1) as f64).contains(&uv) {
        return 0.0;
    }
    let ux = (x / grid.dx() + grid.x_center()).clamp(0.0, (nx - 1) as f64);
    let (bx, tx) = cubic_stencil(ux, nx);
    let (bv, tv) = cubic_stencil(uv, nv);
    let (wx, wv) = (cubic_weights(tx), cubic_weights(tv));
    let mut acc = 0.0;
    for (a, wa) in wx.iter().enumerate() {
        let row = &values[(bx + a) * nv..(bx + a + 1) * nv];
        acc += wa * (wv[0] * row[bv] + wv[1] * row[bv + 1] + wv[2] * row[bv + 2] + wv[3] * row[bv + 3]);
    }
    acc
}

fn node_of(grid: &PhaseGrid, s: f64) -> Result<usize> {
    let u = s / grid.dt();
    let m = u.round();
    if (u - m).abs() > 1e-9 || m < 0.0 || m as usize >= grid.time_count {
        return Err(Error::InvalidParameter(format!("s = {s} is not a time node")));
    }
    Ok(m as usize)
}

/// `|∫ (E - E_h)(s, X(s)) ∂_v g̃_h(s, X(s), V(s)) dv|` with flows of run `a`,
/// relative to `‖(ρ - ρ_h)(s)‖_p R^{-p}(x)`. `s` must be a time node.
pub fn check_lemma4(
    a: &SolutionHistory,
    b: &SolutionHistory,
    s: f64,
    t: f64,
    probes: &[f64],
    substeps: usize,
    execution: Execution,
) -> Result<LemmaReport> {
    if a.grid != b.grid || a.background != b.background || a.exponent != b.exponent {
        return Err(Error::InvalidComparison("runs differ in grid, background or exponent".into()));
    }
    if probes.len() < 4 {
        return Err(Error::InsufficientData("lemma 4 needs at least 4 probes".into()));
    }
    let grid = a.grid;
    let m = node_of(&grid, s)?;
    let p = a.exponent;
    let diff: Vec<f64> = a.densities[m]
        .values
        .iter()
        .zip(&b.densities[m].values)
        .map(|(x, y)| x - y)
        .collect();
    let rho_gap = weighted_sup_norm_at(&diff, &grid.x_nodes(), p)?;
    let dvg = dv_snapshot(&b.g_level(m), &grid);
    let vs = grid.v_nodes();
    let dv = grid.dv();
    let rows = map_range(execution, probes.len(), |k| -> Result<ProbeRow> {
        let x = probes[k];
        let mut integrand = Vec::with_capacity(vs.len());
        for &v in &vs {
            let end = flow_between(t, s, x, v, &a.field, substeps)?;
            let de = a.field.interp(s, end.x)? - b.field.interp(s, end.x)?;
            integrand.push(de * phase_interp(&dvg, &grid, end.x, end.v));
        }
        let value = simpson_by(vs.len(), dv, |i| integrand[i]).abs();
        let denom = rho_gap * weight_decay(x, p);
        let weighted = if value == 0.0 {
            0.0
        } else if denom > 0.0 {
            value / denom
        } else {
            f64::INFINITY
        };
        Ok(ProbeRow { x, value, weighted })
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let sup = rows.iter().fold(0.0f64, |acc, r| acc.max(r.weighted));
    let slope = growth_slope(&rows);
    let mut violation = slope.map_or(-GROWTH_SLOPE_LIMIT, |k| k - GROWTH_SLOPE_LIMIT);
    if !sup.is_finite() {
        violation = f64::INFINITY;
    }
    let mut rep = LemmaReport::new("lemma4", rows.len(), violation)
        .with("fitted_c", sup)
        .with("growth_slope", slope.unwrap_or(f64::NEG_INFINITY).max(-1e300))
        .with("density_gap", rho_gap)
        .with("s", s)
        .with("t", t);
    rep.probes = rows;
    Ok(rep)
}

/// Fitted spatial decay exponent: minus the slope of `log|σ|` against `log R`
/// over nodes with `|x| ∈ [L/2, L]` and `|σ| > 1e-14`.
pub fn decay_fit(sigma: &WeightedProfile, grid: &PhaseGrid) -> Result<f64> {
    if sigma.values.len() != grid.x_count {
        return Err(Error::InvalidProfile("profile length differs from x_count".into()));
    }
    decay_fit_at(&sigma.values, &grid.x_nodes(), grid.x_half_width)
}

pub fn decay_fit_at(values: &[f64], xs: &[f64], half_width: f64) -> Result<f64> {
    let pts: Vec<(f64, f64)> = values
        .iter()
        .zip(xs)
        .filter(|(s, x)| x.abs() >= 0.5 * half_width && x.abs() <= half_width * (1.0 + 1e-12) && s.abs() > 1e-14)
        .map(|(s, x)| (weight(*x).ln(), s.abs().ln()))
        .collect();
    if pts.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "{} usable nodes in the outer half-domain",
            pts.len()
        )));
    }
    Ok(-least_squares(&pts).0)
}

/// Measured velocity support of `g` per time node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportCurve {
    /// Largest `|v_i|` with `max_j |g(t, x_j, v_i)| > 1e-12` (0 if none).
    pub raw: Vec<f64>,
    /// Running max over `[0, t]` of `max(raw, W)`.
    pub envelope: Vec<f64>,
}

pub fn support_curve(sol: &SolutionHistory) -> SupportCurve {
    let grid = sol.grid;
    let nv = grid.v_count;
    let w = sol.background.support_radius;
    let raw: Vec<f64> = (0..grid.time_count)
        .map(|m| {
            let g = sol.g_level(m);
            let mut q = 0.0f64;
            for row in g.chunks_exact(nv) {
                for (i, val) in row.iter().enumerate() {
                    if val.abs() > SUPPORT_THRESHOLD {
                        q = q.max(grid.v(i).abs());
                    }
                }
            }
            q
        })
        .collect();
    let mut env = Vec::with_capacity(raw.len());
    let mut run = 0.0f64;
    for &q in &raw {
        run = run.max(q.max(w));
        env.push(run);
    }
    SupportCurve { raw, envelope: env }
}

/// Support bound check: `Q(t) <= 2 max(Q(0), C1_meas) + Δv`.
pub fn check_support(sol: &SolutionHistory) -> LemmaReport {
    let curve = support_curve(sol);
    let c1 = field_impulse(&sol.field);
    let bound = 2.0 * curve.envelope[0].max(c1) + sol.grid.dv();
    let worst = curve.envelope.iter().fold(f64::NEG_INFINITY, |a, &q| a.max(q - bound));
    LemmaReport::new("lemma3", curve.envelope.len(), worst)
        .with("q0", curve.envelope[0])
        .with("q_max", *curve.envelope.last().unwrap())
        .with("c1_meas", c1)
        .with("bound", bound)
}

/// Decay exponents of `ρ(t_m, ·)` at every node where one can be fitted.
pub fn decay_exponents(sol: &SolutionHistory) -> Vec<Option<f64>> {
    let xs = sol.grid.x_nodes();
    sol.densities
        .iter()
        .map(|d| decay_fit_at(&d.values, &xs, sol.grid.x_half_width).ok())
        .collect()
}

/// Weighted sup over time nodes of `ρ̃ - (ρ0 - ∫∫ E F')`, using the
/// reconstruction stored by the last map application.
pub fn duhamel_residual(sol: &SolutionHistory) -> Result<f64> {
    let stats = sol
        .stats
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("solution carries no map statistics".into()))?;
    let nx = sol.grid.x_count;
    let xs = sol.grid.x_nodes();
    let mut worst = 0.0f64;
    for (m, d) in sol.densities.iter().enumerate() {
        let rebuilt = &stats.duhamel_density[m * nx..(m + 1) * nx];
        let diff: Vec<f64> = d.values.iter().zip(rebuilt).map(|(a, b)| a - b).collect();
        worst = worst.max(weighted_sup_norm_at(&diff, &xs, sol.exponent)?);
    }
    Ok(worst)
}

/// Max over time nodes of the centered-difference mismatch `|∂_x E - ρ|`.
pub fn field_compatibility(sol: &SolutionHistory) -> f64 {
    let dx = sol.grid.dx();
    sol.field
        .snapshots
        .iter()
        .zip(&sol.densities)
        .map(|(e, r)| derivative_mismatch(&e.values, &r.values, dx))
        .fold(0.0, f64::max)
}

/// Largest `|E(t_m, x_j)| / (‖ρ(t_m)‖_p ∫ R^{-p})` over all nodes.
pub fn field_bound_ratio(sol: &SolutionHistory) -> f64 {
    let full = crate::quadrature::weight_full_integral(sol.exponent);
    sol.field
        .snapshots
        .iter()
        .zip(&sol.densities)
        .map(|(e, r)| {
            let bound = r.norm * full;
            let top = e.max_abs_nodes();
            if top == 0.0 {
                0.0
            } else {
                top / bound
            }
        })
        .fold(0.0, f64::max)
}

/// Charge drift inside the box against the boundary flux.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeutralityReport {
    /// `|∫_{-L}^{L} ρ(t) - ∫_{-L}^{L} ρ(0)|` per time node.
    pub drift: Vec<f64>,
    /// `∫_0^t (|j(s, -L)| + |j(s, L)|) ds` per time node, `j = -∫ v g dv`.
    pub flux: Vec<f64>,
    pub worst_excess: f64,
}

pub fn neutrality_drift(sol: &SolutionHistory, slack: f64) -> NeutralityReport {
    let grid = sol.grid;
    let (nx, nv) = (grid.x_count, grid.v_count);
    let dx = grid.dx();
    let dv = grid.dv();
    let mass: Vec<f64> = sol.densities.iter().map(|d| trapezoid(&d.values, dx)).collect();
    let edge_flux: Vec<f64> = (0..grid.time_count)
        .map(|m| {
            let g = sol.g_level(m);
            let j = |jx: usize| {
                let row = &g[jx * nv..(jx + 1) * nv];
                simpson_by(nv, dv, |i| grid.v(i) * row[i]).abs()
            };
            j(0) + j(nx - 1)
        })
        .collect();
    let mut flux = vec![0.0];
    for w in edge_flux.windows(2) {
        let last = *flux.last().unwrap();
        flux.push(last + 0.5 * grid.dt() * (w[0] + w[1]));
    }
    let drift: Vec<f64> = mass.iter().map(|m| (m - mass[0]).abs()).collect();
    let worst_excess = drift
        .iter()
        .zip(&flux)
        .map(|(d, f)| d - f - slack)
        .fold(f64::NEG_INFINITY, f64::max);
    NeutralityReport {
        drift,
        flux,
        worst_excess,
    }
}

/// Largest `|det ∂(X, V)/∂(x, v) - 1|` over quasi-random starting points.
pub fn volume_defect(sol: &SolutionHistory, samples: usize, substeps: usize) -> Result<f64> {
    let grid = sol.grid;
    let t = grid.time_horizon;
    let mut worst = 0.0f64;
    for k in 1..=samples {
        let x = 0.5 * grid.x_half_width * (2.0 * halton(k, 2) - 1.0);
        let v = 0.5 * grid.v_half_width * (2.0 * halton(k, 3) - 1.0);
        let j = flow_jacobian(t, x, v, &sol.field, substeps, 1e-4)?;
        worst = worst.max((j - 1.0).abs());
    }
    Ok(worst)
}
