//! Backward integration of the characteristic system
//! `dX/ds = V`, `dV/ds = -E(s, X)` through an interpolated field history.
//!
//! Integration is classical RK4 with a fixed step `Δt / substeps`. Alongside
//! the state the integrator accumulates the field impulse `∫ |E(s, X(s))| ds`
//! (with the RK4 stage weights, so `|V(0) - v| <= impulse` holds by the
//! triangle inequality) and, optionally, the Duhamel path integral
//! `∫ E(s, X(s)) F'(V(s)) ds` by the trapezoid rule over step nodes.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{FieldHistory, StageField};
use crate::profiles::BackgroundProfile;

/// Default RK4 steps per snapshot interval.
pub const DEFAULT_SUBSTEPS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CharEndpoint {
    pub x: f64,
    pub v: f64,
    pub impulse: f64,
    pub left_box: bool,
    /// `∫ E(s, X(s)) F'(V(s)) ds` over the path, when requested.
    pub duhamel: f64,
}

/// Integrate `n` RK4 steps of signed size `h` from `(x, v)`.
///
/// `field(j, x)` returns the field at local half-step `j` (time `s_0 + j h/2`)
/// and whether `x` lies outside the box.
#[inline]
fn rk4_path<F>(n: usize, h: f64, x: f64, v: f64, mut field: F, fprime: Option<&BackgroundProfile>) -> CharEndpoint
where
    F: FnMut(usize, f64) -> (f64, bool),
{
    let (mut x, mut v) = (x, v);
    let half = 0.5 * h;
    let ah = h.abs();
    let mut impulse = 0.0;
    let mut duhamel = 0.0;
    let mut left = false;
    let (mut e_node, out0) = field(0, x);
    left |= out0;
    for step in 0..n {
        let j = 2 * step;
        let e1 = e_node;
        let k1x = v;
        let (e2, o2) = field(j + 1, x + half * k1x);
        let k2x = v - half * e1;
        let (e3, o3) = field(j + 1, x + half * k2x);
        let k3x = v - half * e2;
        let (e4, o4) = field(j + 2, x + h * k3x);
        let k4x = v - h * e3;
        let x_next = x + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        let v_next = v - h / 6.0 * (e1 + 2.0 * e2 + 2.0 * e3 + e4);
        impulse += ah / 6.0 * (e1.abs() + 2.0 * e2.abs() + 2.0 * e3.abs() + e4.abs());
        let (e_next, o_next) = if step + 1 < n || fprime.is_some() {
            field(j + 2, x_next)
        } else {
            (0.0, false)
        };
        if let Some(bg) = fprime {
            duhamel += 0.5 * ah * (e1 * bg.d1(v) + e_next * bg.d1(v_next));
        }
        left |= o2 | o3 | o4 | o_next;
        x = x_next;
        v = v_next;
        e_node = e_next;
    }
    CharEndpoint {
        x,
        v,
        impulse,
        left_box: left,
        duhamel,
    }
}

fn check_finite(end: CharEndpoint) -> Result<CharEndpoint> {
    if end.x.is_finite() && end.v.is_finite() && end.impulse.is_finite() {
        Ok(end)
    } else {
        Err(Error::IntegrationFailure(format!(
            "non-finite characteristic state (X = {}, V = {})",
            end.x, end.v
        )))
    }
}

/// Trajectory integration through a precomputed [`StageField`], between time
/// nodes.
#[derive(Debug, Clone, Copy)]
pub struct Tracer<'s, 'h> {
    pub stages: &'s StageField<'h>,
    pub background: Option<&'s BackgroundProfile>,
}

impl<'s, 'h> Tracer<'s, 'h> {
    pub fn new(stages: &'s StageField<'h>) -> Self {
        Self {
            stages,
            background: None,
        }
    }

    pub fn with_duhamel(mut self, bg: &'s BackgroundProfile) -> Self {
        self.background = Some(bg);
        self
    }

    fn half_width(&self) -> f64 {
        self.stages.history().grid.x_half_width
    }

    /// Flow from time node `from` back to time node `to <= from`.
    #[inline]
    pub fn backward(&self, from: usize, to: usize, x: f64, v: f64) -> CharEndpoint {
        debug_assert!(to <= from);
        let s = self.stages;
        let start = s.node_stage(from);
        let n = (from - to) * s.substeps;
        let h = -2.0 * s.half_step();
        let lim = self.half_width();
        let mut end = rk4_path(n, h, x, v, |j, xq| s.eval(start - j, xq), self.background);
        end.left_box |= x.abs() > lim;
        end
    }

    /// Flow from time node `from` forward to time node `to >= from`.
    pub fn forward(&self, from: usize, to: usize, x: f64, v: f64) -> CharEndpoint {
        debug_assert!(to >= from);
        let s = self.stages;
        let start = s.node_stage(from);
        let n = (to - from) * s.substeps;
        let h = 2.0 * s.half_step();
        rk4_path(n, h, x, v, |j, xq| s.eval(start + j, xq), self.background)
    }

    /// Backward then forward again; max deviation from the start point.
    pub fn roundtrip_error(&self, from: usize, x: f64, v: f64) -> f64 {
        let back = self.backward(from, 0, x, v);
        let again = self.forward(0, from, back.x, back.v);
        (again.x - x).abs().max((again.v - v).abs())
    }
}

/// Number of steps and signed step for a path of length `t - s` with nominal
/// step `Δt / substeps`.
fn path_steps(hist: &FieldHistory, span: f64, substeps: usize) -> usize {
    let nominal = hist.grid.dt() / substeps as f64;
    ((span / nominal) - 1e-9).ceil().max(1.0) as usize
}

fn generic_path(
    t: f64,
    s: f64,
    x: f64,
    v: f64,
    hist: &FieldHistory,
    substeps: usize,
    bg: Option<&BackgroundProfile>,
) -> Result<CharEndpoint> {
    if substeps == 0 {
        return Err(Error::InvalidParameter("substeps must be >= 1".into()));
    }
    let span = hist.time_span();
    for (name, val) in [("t", t), ("s", s)] {
        if !(val >= -1e-12 * span && val <= span * (1.0 + 1e-12)) {
            return Err(Error::OutOfRange(format!("{name} = {val} outside [0, {span}]")));
        }
    }
    if t == s {
        return Ok(CharEndpoint {
            x,
            v,
            impulse: 0.0,
            left_box: x.abs() > hist.grid.x_half_width,
            duhamel: 0.0,
        });
    }
    let n = path_steps(hist, (t - s).abs(), substeps);
    let h = (s - t) / n as f64;
    let lim = hist.grid.x_half_width;
    let mut failure = None;
    let end = rk4_path(
        n,
        h,
        x,
        v,
        |j, xq| {
            let tq = if j == 2 * n { s } else { t + j as f64 * 0.5 * h };
            match hist.interp(tq.clamp(0.0, span), xq) {
                Ok(e) => (e, xq.abs() > lim),
                Err(err) => {
                    failure.get_or_insert(err);
                    (f64::NAN, true)
                }
            }
        },
        bg,
    );
    if let Some(err) = failure {
        return Err(err);
    }
    check_finite(end)
}

/// `(X, V)(0; t, x, v)` with impulse and box-exit flag.
pub fn flow_backward(t: f64, x: f64, v: f64, hist: &FieldHistory, substeps: usize) -> Result<CharEndpoint> {
    generic_path(t, 0.0, x, v, hist, substeps, None)
}

/// `(X, V)(s; t, x, v)` for any `s` (earlier or later than `t`).
pub fn flow_between(t: f64, s: f64, x: f64, v: f64, hist: &FieldHistory, substeps: usize) -> Result<CharEndpoint> {
    generic_path(t, s, x, v, hist, substeps, None)
}

/// Backward flow that also accumulates the Duhamel integral with `F'`.
pub fn flow_backward_duhamel(
    t: f64,
    x: f64,
    v: f64,
    hist: &FieldHistory,
    substeps: usize,
    bg: &BackgroundProfile,
) -> Result<CharEndpoint> {
    generic_path(t, 0.0, x, v, hist, substeps, Some(bg))
}

/// Integrate back to `s = 0` and forward to `t` again; returns
/// `max(|x_back - x|, |v_back - v|)`.
pub fn flow_roundtrip_error(t: f64, x: f64, v: f64, hist: &FieldHistory, substeps: usize) -> Result<f64> {
    let back = flow_backward(t, x, v, hist, substeps)?;
    let again = flow_between(0.0, t, back.x, back.v, hist, substeps)?;
    Ok((again.x - x).abs().max((again.v - v).abs()))
}

/// Determinant of the Jacobian of `(x, v) -> (X, V)(0; t, x, v)`, by centered
/// differences with offset `eta`.
pub fn flow_jacobian(t: f64, x: f64, v: f64, hist: &FieldHistory, substeps: usize, eta: f64) -> Result<f64> {
    let at = |dx: f64, dv: f64| flow_backward(t, x + dx, v + dv, hist, substeps);
    let (xp, xm) = (at(eta, 0.0)?, at(-eta, 0.0)?);
    let (vp, vm) = (at(0.0, eta)?, at(0.0, -eta)?);
    let dxdx = (xp.x - xm.x) / (2.0 * eta);
    let dvdx = (xp.v - xm.v) / (2.0 * eta);
    let dxdv = (vp.x - vm.x) / (2.0 * eta);
    let dvdv = (vp.v - vm.v) / (2.0 * eta);
    Ok(dxdx * dvdv - dxdv * dvdx)
}

/// Sampled path `(s, X(s), V(s))` at every step node, from `t` down to 0.
pub fn trace_path(t: f64, x: f64, v: f64, hist: &FieldHistory, substeps: usize) -> Result<Vec<(f64, f64, f64)>> {
    let n = path_steps(hist, t, substeps);
    let h = t / n as f64;
    let mut out = vec![(t, x, v)];
    let (mut xc, mut vc) = (x, v);
    for k in 0..n {
        let s_hi = t - k as f64 * h;
        let s_lo = if k + 1 == n { 0.0 } else { t - (k + 1) as f64 * h };
        let e = flow_between(s_hi, s_lo, xc, vc, hist, 1)?;
        xc = e.x;
        vc = e.v;
        out.push((s_lo, xc, vc));
    }
    Ok(out)
}
