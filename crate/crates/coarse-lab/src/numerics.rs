//! Numeric toolbox: overflow-safe hyperbolic helpers, bracketed 1-D
//! minimization, monotone bisection, quantiles, least squares.

/// Tolerance used by golden-section searches on geodesic parameters.
pub const GOLDEN_TOL: f64 = 1e-7;

/// arccosh(1 + q) for q >= 0, stable both near 0 and for very large q.
pub fn acosh1p(q: f64) -> f64 {
    let q = q.max(0.0);
    if q > 1e150 {
        // sqrt(q*(q+2)) would overflow; acosh(1+q) = ln(2q) + O(1/q)
        q.ln() + std::f64::consts::LN_2
    } else {
        (q + (q * (q + 2.0)).sqrt()).ln_1p()
    }
}

/// ln(cosh z), exact for |z| up to f64 range.
pub fn log_cosh(z: f64) -> f64 {
    let a = z.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// ln(sinh z) for z > 0.
pub fn log_sinh(z: f64) -> f64 {
    debug_assert!(z > 0.0);
    z + (-(-2.0 * z).exp_m1()).ln() - std::f64::consts::LN_2
}

/// ln(cosh z - 1), stable for small and large |z|.
pub fn log_cosh_m1(z: f64) -> f64 {
    let a = z.abs();
    if a < 1e-4 {
        // cosh z - 1 = z^2/2 (1 + z^2/12 + ...)
        (a * a / 2.0).ln() + (a * a / 12.0).ln_1p()
    } else {
        // cosh z - 1 = 2 sinh^2(z/2)
        std::f64::consts::LN_2 + 2.0 * log_sinh(a / 2.0)
    }
}

/// ln(e^a + e^b), tolerating -inf inputs.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Solves cosh d = e^l for d >= 0 given l = ln cosh d >= 0.
pub fn acosh_from_log_cosh(l: f64) -> f64 {
    if l <= 0.0 {
        return 0.0;
    }
    l + (-(-2.0 * l).exp_m1()).sqrt().ln_1p()
}

/// Golden-section minimum of a unimodal function on [a, b].
/// Returns (argmin, min).
pub fn golden_section_min<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> (f64, f64) {
    const INVPHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = if a <= b { (a, b) } else { (b, a) };
    let mut c = b - INVPHI * (b - a);
    let mut d = a + INVPHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a) > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INVPHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INVPHI * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    if fx <= fc && fx <= fd {
        (x, fx)
    } else if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Brackets a minimum of a convex function by walking downhill from `start`
/// with doubling steps. Returns an interval guaranteed to contain the
/// minimizer when `f` is convex.
pub fn bracket_min<F: FnMut(f64) -> f64>(mut f: F, start: f64, init_step: f64) -> (f64, f64) {
    let step = init_step.abs().max(1e-12);
    let f0 = f(start);
    let fp = f(start + step);
    let fm = f(start - step);
    if f0 <= fp && f0 <= fm {
        return (start - step, start + step);
    }
    let dir = if fp < fm { 1.0 } else { -1.0 };
    let mut prev = start;
    let mut cur = start + dir * step;
    let mut fcur = if dir > 0.0 { fp } else { fm };
    let mut width = step;
    for _ in 0..200 {
        width *= 2.0;
        let next = cur + dir * width;
        let fnext = f(next);
        if fnext >= fcur {
            return if dir > 0.0 { (prev, next) } else { (next, prev) };
        }
        prev = cur;
        cur = next;
        fcur = fnext;
    }
    (cur - width.copysign(dir), cur + width.copysign(dir))
}

/// Bracket + golden section for convex functions on the whole line.
pub fn minimize_convex<F: FnMut(f64) -> f64>(
    mut f: F,
    start: f64,
    init_step: f64,
    tol: f64,
) -> (f64, f64) {
    let (a, b) = bracket_min(&mut f, start, init_step);
    golden_section_min(f, a, b, tol)
}

/// sup { r >= 0 : g(r) <= c } for a nondecreasing g with g(r) -> sup g.
/// Returns None when the set is unbounded (g stays <= c forever), 0.0 when
/// it is empty or just {0}.
pub fn sup_level<F: FnMut(f64) -> f64>(mut g: F, c: f64) -> Option<f64> {
    if g(0.0) > c {
        return Some(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut found = false;
    for _ in 0..1100 {
        if g(hi) > c {
            found = true;
            break;
        }
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            break;
        }
    }
    if !found {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) <= c {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Least-squares line fit. Returns (slope, intercept).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2, "need at least two points for a line fit");
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Interpolated quantile of an unsorted sample, q in [0, 1].
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("NaN in quantile input"));
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < v.len() {
        v[i] * (1.0 - frac) + v[i + 1] * frac
    } else {
        v[i]
    }
}
