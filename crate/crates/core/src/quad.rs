//! Small numerical kernels shared by the operators: exponentially weighted
//! integration of piecewise-linear data, bisection and golden-section search.

/// Weights `(w_a, w_b)` with
/// `∫_0^d e^{-c w} [(1 - w/d) f_a + (w/d) f_b] dw = w_a f_a + w_b f_b`.
pub(crate) fn exp_linear_weights(c: f64, d: f64) -> (f64, f64) {
    if d <= 0.0 {
        return (0.0, 0.0);
    }
    let x = c * d;
    if x.abs() < 1e-5 {
        let wa = d * (0.5 - x / 6.0 + x * x / 24.0);
        let wb = d * (0.5 - x / 3.0 + x * x / 8.0);
        return (wa, wb);
    }
    let e = (-x).exp();
    let q = -(-x).exp_m1() / x;
    ((1.0 - q) / c, (q - e) / c)
}

/// `(1 - e^{-x}) / x`, accurate near zero.
pub(crate) fn one_minus_exp_over(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - 0.5 * x
    } else {
        -(-x).exp_m1() / x
    }
}

/// Bisection on `[lo, hi]` where `f(lo)` and `f(hi)` have opposite signs
/// (or one of them is zero). Returns `None` if the interval is not a bracket.
pub(crate) fn bisect<F: FnMut(f64) -> f64>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> Option<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() || !flo.is_finite() || !fhi.is_finite() {
        return None;
    }
    for _ in 0..200 {
        if (hi - lo).abs() <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return Some(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Golden-section minimisation of a unimodal `f` on `[a, b]`.
pub(crate) fn golden_section_min<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (a, b);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}
