//! Background ion profile `F(v)` and initial data `f0 = F - g0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::PhaseGrid;
use crate::norms::{triple_norm, weight_decay, weight_pow};
use crate::quadrature::simpson_by;

/// Fixed ion background `F(v) = A_F (W² - v²)⁴ / W⁸` on `|v| <= W`, zero
/// outside. The quartic power makes `F` three times continuously
/// differentiable across `±W`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundProfile {
    pub support_radius: f64,
    pub amplitude: f64,
}

/// `(r² - v²)⁴ / r⁸` and its first two derivatives on `|v| <= r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct QuarticBump {
    r2: f64,
    inv_r8: f64,
}

impl QuarticBump {
    pub(crate) fn new(radius: f64) -> Self {
        let r2 = radius * radius;
        Self {
            r2,
            inv_r8: 1.0 / (r2 * r2 * r2 * r2),
        }
    }

    #[inline]
    pub(crate) fn value(&self, v: f64) -> f64 {
        let s = self.r2 - v * v;
        if s <= 0.0 {
            return 0.0;
        }
        let s2 = s * s;
        s2 * s2 * self.inv_r8
    }

    #[inline]
    pub(crate) fn d1(&self, v: f64) -> f64 {
        let s = self.r2 - v * v;
        if s <= 0.0 {
            return 0.0;
        }
        -8.0 * v * s * s * s * self.inv_r8
    }

    #[inline]
    pub(crate) fn d2(&self, v: f64) -> f64 {
        let s = self.r2 - v * v;
        if s <= 0.0 {
            return 0.0;
        }
        // d/dv [-8 v s³] = -8 s³ + 48 v² s²
        (-8.0 * s + 48.0 * v * v) * s * s * self.inv_r8
    }
}

impl BackgroundProfile {
    /// Tolerance for the third-derivative jump at the support edge, relative
    /// to `A_F / W³`.
    pub const EDGE_JUMP_TOL: f64 = 1e-4;

    pub fn new(support_radius: f64, amplitude: f64) -> Result<Self> {
        let mut problems = Vec::new();
        if !(support_radius.is_finite() && support_radius > 0.0) {
            problems.push(format!("support radius W must be > 0 (got {support_radius})"));
        }
        if !(amplitude.is_finite() && amplitude > 0.0) {
            problems.push(format!("background amplitude A_F must be > 0 (got {amplitude})"));
        }
        if !problems.is_empty() {
            return Err(Error::InvalidParameter(problems.join("; ")));
        }
        let bg = Self {
            support_radius,
            amplitude,
        };
        let jump = bg.edge_third_derivative_jump();
        let limit = Self::EDGE_JUMP_TOL * amplitude / support_radius.powi(3);
        if jump > limit {
            return Err(Error::InvalidProfile(format!(
                "background not C3 at its support edge: jump {jump:e} > {limit:e}"
            )));
        }
        Ok(bg)
    }

    #[inline]
    fn bump(&self) -> QuarticBump {
        QuarticBump::new(self.support_radius)
    }

    #[inline]
    pub fn value(&self, v: f64) -> f64 {
        self.amplitude * self.bump().value(v)
    }

    #[inline]
    pub fn d1(&self, v: f64) -> f64 {
        self.amplitude * self.bump().d1(v)
    }

    #[inline]
    pub fn d2(&self, v: f64) -> f64 {
        self.amplitude * self.bump().d2(v)
    }

    /// Largest difference between one-sided third finite differences taken
    /// inside and outside the support at `±W`.
    pub fn edge_third_derivative_jump(&self) -> f64 {
        let w = self.support_radius;
        let h = 1e-7 * w;
        let third = |v0: f64, dir: f64| {
            let f = |k: f64| self.value(v0 + dir * k * h);
            dir * (f(3.0) - 3.0 * f(2.0) + 3.0 * f(1.0) - f(0.0)) / (h * h * h)
        };
        let mut worst = 0.0f64;
        for edge in [-w, w] {
            let inside = third(edge, -edge.signum());
            let outside = third(edge, edge.signum());
            worst = worst.max((inside - outside).abs());
        }
        worst
    }
}

/// Shape of the perturbation `g0(x, v) = A_g R^{-p}(x) φ(v)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PerturbationShape {
    /// `φ(v) = (W² - v²)⁴ / W⁸`, the background's own shape.
    QuarticBump,
    /// Same bump with its own support radius.
    ScaledBump { radius: f64 },
}

impl PerturbationShape {
    pub fn radius(&self, bg: &BackgroundProfile) -> f64 {
        match *self {
            PerturbationShape::QuarticBump => bg.support_radius,
            PerturbationShape::ScaledBump { radius } => radius,
        }
    }
}

/// Bounds measured while validating initial data on a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidationReport {
    /// `max (|g0| + |∂_v g0|) R^p` over nodes.
    pub decay_constant: f64,
    pub triple_norm: f64,
    pub min_f0: f64,
    pub max_f0: f64,
    pub v_support_radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialData {
    pub background: BackgroundProfile,
    pub amplitude: f64,
    pub decay_exponent: f64,
    pub shape: PerturbationShape,
    pub report: ValidationReport,
    bump: QuarticBump,
}

impl InitialData {
    #[inline]
    pub fn phi(&self, v: f64) -> f64 {
        self.bump.value(v)
    }

    #[inline]
    pub fn phi_d1(&self, v: f64) -> f64 {
        self.bump.d1(v)
    }

    #[inline]
    pub fn g0(&self, x: f64, v: f64) -> f64 {
        if self.amplitude == 0.0 {
            return 0.0;
        }
        self.amplitude * weight_decay(x, self.decay_exponent) * self.bump.value(v)
    }

    #[inline]
    pub fn g0_dv(&self, x: f64, v: f64) -> f64 {
        if self.amplitude == 0.0 {
            return 0.0;
        }
        self.amplitude * weight_decay(x, self.decay_exponent) * self.bump.d1(v)
    }

    #[inline]
    pub fn f0(&self, x: f64, v: f64) -> f64 {
        self.background.value(v) - self.g0(x, v)
    }

    /// Velocity radius outside which both `F` and `g0` vanish.
    pub fn velocity_cutoff(&self) -> f64 {
        self.background
            .support_radius
            .max(self.report.v_support_radius)
            .max(self.shape.radius(&self.background))
    }

    /// `f0` on every node of one phase snapshot.
    pub fn f0_snapshot(&self, grid: &PhaseGrid) -> Vec<f64> {
        let mut out = Vec::with_capacity(grid.phase_len());
        for j in 0..grid.x_count {
            let x = grid.x(j);
            for i in 0..grid.v_count {
                out.push(self.f0(x, grid.v(i)));
            }
        }
        out
    }

    /// `g0 = F - f0` on every node of one phase snapshot.
    pub fn g0_snapshot(&self, grid: &PhaseGrid) -> Vec<f64> {
        let mut out = Vec::with_capacity(grid.phase_len());
        for j in 0..grid.x_count {
            let x = grid.x(j);
            for i in 0..grid.v_count {
                out.push(self.g0(x, grid.v(i)));
            }
        }
        out
    }

    /// `∫ φ dv` over the phase grid's velocity nodes.
    pub fn phi_integral(&self, grid: &PhaseGrid) -> f64 {
        simpson_by(grid.v_count, grid.dv(), |i| self.phi(grid.v(i)))
    }
}

/// Build validated initial data `f0 = F - A_g R^{-p}(x) φ(v)`.
pub fn make_initial_data(
    background: BackgroundProfile,
    amplitude: f64,
    decay_exponent: f64,
    shape: PerturbationShape,
    grid: &PhaseGrid,
) -> Result<InitialData> {
    let mut problems = Vec::new();
    if !(decay_exponent > 1.0 && decay_exponent.is_finite()) {
        problems.push(format!("decay exponent p must exceed 1 (got {decay_exponent})"));
    }
    if !amplitude.is_finite() {
        problems.push(format!("perturbation amplitude must be finite (got {amplitude})"));
    }
    let radius = shape.radius(&background);
    if !(radius.is_finite() && radius > 0.0) {
        problems.push(format!("perturbation support radius must be > 0 (got {radius})"));
    }
    if !problems.is_empty() {
        return Err(Error::InvalidParameter(problems.join("; ")));
    }

    let mut data = InitialData {
        background,
        amplitude,
        decay_exponent,
        shape,
        report: ValidationReport {
            decay_constant: 0.0,
            triple_norm: 0.0,
            min_f0: 0.0,
            max_f0: 0.0,
            v_support_radius: radius,
        },
        bump: QuarticBump::new(radius),
    };

    let mut min_f0 = f64::INFINITY;
    let mut max_f0 = f64::NEG_INFINITY;
    let mut decay_constant = 0.0f64;
    let mut measured_support = 0.0f64;
    for j in 0..grid.x_count {
        let x = grid.x(j);
        let wp = weight_pow(x, decay_exponent);
        for i in 0..grid.v_count {
            let v = grid.v(i);
            let f0 = data.f0(x, v);
            if f0 < 0.0 {
                return Err(Error::PositivityViolation { x, v, value: f0 });
            }
            min_f0 = min_f0.min(f0);
            max_f0 = max_f0.max(f0);
            let g = data.g0(x, v);
            decay_constant = decay_constant.max((g.abs() + data.g0_dv(x, v).abs()) * wp);
            if g.abs() > 1e-14 {
                measured_support = measured_support.max(v.abs());
            }
        }
    }
    let tn = triple_norm(&data.g0_snapshot(grid), grid, decay_exponent)?;
    if !tn.is_finite() {
        return Err(Error::InvalidProfile("triple norm of g0 is not finite".into()));
    }
    data.report = ValidationReport {
        decay_constant,
        triple_norm: tn,
        min_f0,
        max_f0,
        v_support_radius: match shape {
            PerturbationShape::QuarticBump => background.support_radius,
            // custom shapes: the widest node carrying a non-negligible perturbation
            PerturbationShape::ScaledBump { .. } if amplitude != 0.0 => measured_support,
            PerturbationShape::ScaledBump { radius } => radius,
        },
    };
    Ok(data)
}
