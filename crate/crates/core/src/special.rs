//! Scalar special functions: the principal Lambert-W branch and a few
//! numerically stable logistic helpers.

use std::f64::consts::E;

const HALLEY_TOL: f64 = 1e-12;
const HALLEY_MAX_ITER: usize = 64;

/// Principal branch `W₀(x)` for `x ≥ -1/e`, solved by Halley iteration.
///
/// Returns `NaN` below the branch point.
pub fn lambert_w0(x: f64) -> f64 {
    let branch = -1.0 / E;
    if x.is_nan() || x < branch {
        return f64::NAN;
    }
    if x == branch {
        return -1.0;
    }
    if x == 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return f64::INFINITY;
    }
    if x > 1e2 {
        // w e^w = x  <=>  w + ln w = ln x, better conditioned for large x
        return wright_omega(x.ln());
    }
    let mut w = if x < -0.3 {
        // series about the branch point
        let p = (2.0 * (E * x + 1.0)).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else if x < 3.0 {
        x / (1.0 + x).max(0.5)
    } else {
        let l = x.ln();
        l - l.ln()
    };
    for _ in 0..HALLEY_MAX_ITER {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        if wp1.abs() < 1e-300 {
            break;
        }
        let step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1));
        w -= step;
        if step.abs() <= HALLEY_TOL * (1.0 + w.abs()) * 1e-3 {
            break;
        }
    }
    w
}

/// `W₀(e^y)`, i.e. the root of `w + ln w = y`, valid for every real `y`
/// without forming `e^y`.
pub fn wright_omega(y: f64) -> f64 {
    if y.is_nan() {
        return f64::NAN;
    }
    if y == f64::INFINITY {
        return f64::INFINITY;
    }
    if y < -700.0 {
        // W(x) ~ x for tiny x
        return y.exp();
    }
    let mut w = if y > 1.0 {
        y - y.ln()
    } else {
        let x = y.exp();
        x / (1.0 + x)
    };
    for _ in 0..HALLEY_MAX_ITER {
        // g(w) = w + ln w - y, g' = 1 + 1/w, g'' = -1/w^2
        let g = w + w.ln() - y;
        let g1 = 1.0 + 1.0 / w;
        let g2 = -1.0 / (w * w);
        let step = 2.0 * g * g1 / (2.0 * g1 * g1 - g * g2);
        let next = w - step;
        w = if next > 0.0 { next } else { w / 2.0 };
        if step.abs() <= HALLEY_TOL * w.max(1e-300) * 1e-3 {
            break;
        }
    }
    w
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function `1 / (1 + e^{-x})`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
