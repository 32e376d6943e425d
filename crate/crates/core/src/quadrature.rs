//! One-dimensional quadrature: adaptive Simpson for the divergence oracle and
//! Gauss–Hermite rules for smooth Gaussian expectations.

use crate::error::{Error, Result};

pub const MAX_DEPTH: usize = 40;

/// Adaptive Simpson on `[a, b]` to absolute tolerance `tol`.
///
/// Fails if some panel has not met its share of the tolerance (or the
/// rounding floor of its own magnitude) after [`MAX_DEPTH`] bisections, or if
/// the integrand is not finite.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) || b < a {
        return Err(Error::InvalidInput(format!("bad interval [{a}, {b}]")));
    }
    if a == b {
        return Ok(0.0);
    }
    // seed with a fixed number of panels so narrow peaks are not skipped
    const PANELS: usize = 64;
    let h = (b - a) / PANELS as f64;
    let mut total = 0.0;
    for i in 0..PANELS {
        let lo = a + h * i as f64;
        let hi = if i + 1 == PANELS { b } else { lo + h };
        let fa = eval(&f, lo)?;
        let fb = eval(&f, hi)?;
        let m = 0.5 * (lo + hi);
        let fm = eval(&f, m)?;
        let whole = simpson(lo, hi, fa, fm, fb);
        total += recurse(&f, lo, hi, fa, fm, fb, whole, tol / PANELS as f64, MAX_DEPTH)?;
    }
    Ok(total)
}

fn eval<F: Fn(f64) -> f64>(f: &F, x: f64) -> Result<f64> {
    let y = f(x);
    if y.is_finite() {
        Ok(y)
    } else {
        Err(Error::OracleFailure(format!("integrand is {y} at x = {x}")))
    }
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = eval(f, lm)?;
    let frm = eval(f, rm)?;
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    // rounding noise in the panel sets a floor below which bisection is futile
    let floor = 64.0 * f64::EPSILON * (left.abs() + right.abs());
    let unsplittable = b - a <= 16.0 * f64::EPSILON * a.abs().max(b.abs()).max(1.0);
    if delta.abs() <= 15.0 * tol.max(floor) || unsplittable {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(Error::OracleFailure(format!(
            "no convergence on [{a}, {b}] after {MAX_DEPTH} refinements (error estimate {})",
            delta.abs() / 15.0
        )));
    }
    Ok(recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)?
        + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)?)
}

/// Gauss–Hermite rule for expectations under a normal law.
///
/// Nodes and weights are rescaled so that
/// `E[h(X)] ≈ Σ wᵢ h(μ + σ zᵢ)` for `X ~ N(μ, σ²)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    /// Standard-normal abscissae.
    pub nodes: Vec<f64>,
    /// Probability weights (sum to 1).
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// `n`-point rule; Newton iteration on the orthonormal Hermite recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Hermite rule needs at least one node");
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let m = n.div_ceil(2);
        let pim4 = std::f64::consts::PI.powf(-0.25);
        let nf = n as f64;
        let mut z = 0.0f64;
        for i in 0..m {
            // initial guesses for the largest roots first
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        // physicists' rule for e^{-x²}; map to the standard normal
        let s = std::f64::consts::PI.sqrt();
        let mut nodes: Vec<f64> = x.iter().map(|v| v * std::f64::consts::SQRT_2).collect();
        let mut weights: Vec<f64> = w.iter().map(|v| v / s).collect();
        nodes.reverse();
        weights.reverse();
        GaussHermite { nodes, weights }
    }

    /// `E[h(X)]` for `X ~ N(mean, sd²)`.
    pub fn expect<F: FnMut(f64) -> f64>(&self, mean: f64, sd: f64, mut h: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(z, w)| w * h(mean + sd * z))
            .sum()
    }
}
