//! Quadrature rules shared by the norms, field and diagnostics modules.

/// Composite Simpson weight (without the `h/3` factor) of node `i` out of `n`.
#[inline]
fn simpson_weight(i: usize, n: usize) -> f64 {
    if i == 0 || i == n - 1 {
        1.0
    } else if i % 2 == 1 {
        4.0
    } else {
        2.0
    }
}

/// Composite Simpson rule over an odd number of equally spaced samples.
///
/// Mirror nodes are summed in pairs from the outside in, so an integrand that
/// is odd on a symmetric grid integrates to exactly zero.
pub fn simpson(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    debug_assert!(n >= 3 && n % 2 == 1, "Simpson needs an odd sample count");
    let c = n / 2;
    let mut acc = 0.0;
    for i in 0..c {
        acc += simpson_weight(i, n) * (values[i] + values[n - 1 - i]);
    }
    acc += simpson_weight(c, n) * values[c];
    acc * h / 3.0
}

/// Simpson over samples produced on the fly by `f(i)`, same summation order as
/// [`simpson`].
#[inline]
pub fn simpson_by<F: FnMut(usize) -> f64>(n: usize, h: f64, mut f: F) -> f64 {
    let c = n / 2;
    let mut acc = 0.0;
    for i in 0..c {
        let w = simpson_weight(i, n);
        let lo = f(i);
        let hi = f(n - 1 - i);
        acc += w * (lo + hi);
    }
    acc += simpson_weight(c, n) * f(c);
    acc * h / 3.0
}

/// Cumulative trapezoid: `out[j] = ∫_{x_0}^{x_j}` with `out[0] = 0`.
pub fn trapezoid_prefix(values: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in values.windows(2) {
        acc += 0.5 * h * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    trapezoid_prefix(values, h).last().copied().unwrap_or(0.0)
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    adaptive_step(f, a, b, fa, fm, fb, whole, tol, 48)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + adaptive_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

const WEIGHT_QUAD_TOL: f64 = 1e-14;

/// `∫_a^b (1 + y²)^{-p/2} dy` for finite `a <= b`.
///
/// Uses `y = tan θ`, which turns the integrand into `cos^{p-2} θ` on a bounded
/// interval.
pub fn weight_integral(a: f64, b: f64, p: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    if a > b {
        return -weight_integral(b, a, p);
    }
    let (ta, tb) = (a.atan(), b.atan());
    if p == 2.0 {
        return tb - ta;
    }
    let expo = p - 2.0;
    let g = move |th: f64| th.cos().powf(expo);
    adaptive_simpson(&g, ta, tb, WEIGHT_QUAD_TOL * (tb - ta).max(1e-300))
}

/// `∫_l^∞ (1 + y²)^{-p/2} dy` for `l > 0`, `p > 1`.
///
/// Substituting `y = l w^{-1/(p-1)}` gives `l^{1-p}/(p-1) ∫_0^1 (1 + y(w)^{-2})^{-p/2} dw`,
/// a bounded smooth integrand for every `p > 1`.
pub fn weight_tail_integral(l: f64, p: f64) -> f64 {
    weight_tail_partial(l, f64::INFINITY, p)
}

/// `∫_l^y (1 + s²)^{-p/2} ds` for `0 < l <= y <= ∞`, via the same substitution.
pub fn weight_tail_partial(l: f64, y: f64, p: f64) -> f64 {
    debug_assert!(l > 0.0 && p > 1.0);
    if y <= l {
        return 0.0;
    }
    let q = p - 1.0;
    let w_lo = if y.is_finite() { (l / y).powf(q) } else { 0.0 };
    let inv_l2 = 1.0 / (l * l);
    let two_over_q = 2.0 / q;
    let h = move |w: f64| (1.0 + w.powf(two_over_q) * inv_l2).powf(-0.5 * p);
    let scale = l.powf(1.0 - p) / q;
    scale * adaptive_simpson(&h, w_lo, 1.0, WEIGHT_QUAD_TOL)
}

/// `∫_ℝ (1 + y²)^{-p/2} dy`.
pub fn weight_full_integral(p: f64) -> f64 {
    2.0 * (weight_integral(0.0, 1.0, p) + weight_tail_integral(1.0, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn simpson_is_exact_for_cubics() {
        let h = 0.25;
        let vals: Vec<f64> = (0..9)
            .map(|i| {
                let x = i as f64 * h;
                x * x * x - 2.0 * x + 1.0
            })
            .collect();
        // ∫_0^2 x³ - 2x + 1 = 4 - 4 + 2
        assert!((simpson(&vals, h) - 2.0).abs() < 1e-14);
        assert_eq!(simpson(&vals, h), simpson_by(9, h, |i| vals[i]));
    }

    #[test]
    fn simpson_odd_integrand_cancels_exactly() {
        let n = 33;
        let h = 0.125;
        let c = (n - 1) / 2;
        let vals: Vec<f64> = (0..n)
            .map(|i| {
                let v = (i as f64 - c as f64) * h;
                v.sin() * (1.0 + v * v)
            })
            .collect();
        assert_eq!(simpson(&vals, h), 0.0);
    }

    #[test]
    fn trapezoid_prefix_of_linear_is_exact() {
        let vals = [0.0, 1.0, 2.0, 3.0];
        let p = trapezoid_prefix(&vals, 1.0);
        assert_eq!(p, vec![0.0, 0.5, 2.0, 4.5]);
    }

    #[test]
    fn weight_integrals_match_closed_forms() {
        // p = 2: atan
        assert!((weight_tail_integral(20.0, 2.0) - (PI / 2.0 - 20f64.atan())).abs() < 1e-13);
        // p = 3: ∫ (1+y²)^{-3/2} = y / sqrt(1+y²)
        let exact = |y: f64| y / (1.0 + y * y).sqrt();
        assert!((weight_integral(-1.0, 3.0, 3.0) - (exact(3.0) - exact(-1.0))).abs() < 1e-12);
        assert!((weight_tail_integral(2.0, 3.0) - (1.0 - exact(2.0))).abs() < 1e-12);
        assert!((weight_tail_partial(2.0, 5.0, 3.0) - (exact(5.0) - exact(2.0))).abs() < 1e-12);
        assert!((weight_full_integral(2.0) - PI).abs() < 1e-12);
        assert!((weight_full_integral(3.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn weight_tail_handles_heavy_tails() {
        // p = 1.5: compare against a brute-force substitution-free sum on a long range
        // plus the asymptotic remainder ∫_Y^∞ y^{-1.5} = 2 / sqrt(Y).
        let l = 3.0;
        let big = 1.0e6;
        let body = weight_tail_partial(l, big, 1.5);
        let approx_rest = 2.0 / big.sqrt();
        let total = weight_tail_integral(l, 1.5);
        assert!((total - body - approx_rest).abs() < 1e-8);
    }
}
