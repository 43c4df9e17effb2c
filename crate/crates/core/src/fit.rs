//! Least-squares fitting helpers.
//!
//! Decay rates, symbol-class orders, and contact indices are all read off
//! from regressions of sampled data: straight lines in log-log coordinates
//! for rates and orders, a two-predictor plane for the mixed
//! frequency/time orders, and weighted polynomial fits for local surface
//! graphs.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Largest absolute residual of the fit.
    pub max_residual: f64,
}

/// Ordinary least squares for y = slope * x + intercept.
pub fn line_fit(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("line fit needs at least two points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|&v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(&a, &b)| (a - mx) * (b - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::DegenerateGrid { context: "line fit abscissae".into() });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let max_residual = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| (b - slope * a - intercept).abs())
        .fold(0.0, f64::max);
    Ok(LineFit { slope, intercept, max_residual })
}

/// Slope of log |v| against log t. Non-positive or non-finite values are
/// rejected: a vanishing sample has no decay rate.
pub fn loglog_slope(t: &[f64], v: &[f64]) -> Result<LineFit> {
    let mut xs = Vec::with_capacity(t.len());
    let mut ys = Vec::with_capacity(t.len());
    for (&ti, &vi) in t.iter().zip(v) {
        if !(ti > 0.0) || !(vi > 0.0) || !vi.is_finite() {
            continue;
        }
        xs.push(ti.ln());
        ys.push(vi.ln());
    }
    if xs.len() < t.len() / 2 || xs.len() < 2 {
        return Err(Error::invalid(
            "log-log fit: too many non-positive samples to trust the rate",
        ));
    }
    line_fit(&xs, &ys)
}

#[derive(Debug, Clone, Copy)]
pub struct PlaneFit {
    /// Coefficient of the first predictor.
    pub a: f64,
    /// Coefficient of the second predictor.
    pub b: f64,
    pub intercept: f64,
    pub max_residual: f64,
}

/// Least squares for z = a x + b y + c over scattered (x, y, z) samples.
pub fn plane_fit(x: &[f64], y: &[f64], z: &[f64]) -> Result<PlaneFit> {
    let n = x.len();
    if n != y.len() || n != z.len() || n < 3 {
        return Err(Error::invalid("plane fit needs at least three points"));
    }
    let nf = n as f64;
    let (mx, my, mz) = (
        x.iter().sum::<f64>() / nf,
        y.iter().sum::<f64>() / nf,
        z.iter().sum::<f64>() / nf,
    );
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    let mut sxz = 0.0;
    let mut syz = 0.0;
    for i in 0..n {
        let (dx, dy, dz) = (x[i] - mx, y[i] - my, z[i] - mz);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
        sxz += dx * dz;
        syz += dy * dz;
    }
    let det = sxx * syy - sxy * sxy;
    if det.abs() <= 1e-14 * (sxx * syy).max(1e-300) {
        return Err(Error::DegenerateGrid { context: "plane fit predictors".into() });
    }
    let a = (syy * sxz - sxy * syz) / det;
    let b = (sxx * syz - sxy * sxz) / det;
    let intercept = mz - a * mx - b * my;
    let max_residual = (0..n)
        .map(|i| (z[i] - a * x[i] - b * y[i] - intercept).abs())
        .fold(0.0, f64::max);
    Ok(PlaneFit { a, b, intercept, max_residual })
}

/// Weighted polynomial least squares: coefficients c_0..c_deg of
/// sum c_k x^k fitted to (x, y) with weights w (all positive).
pub fn poly_fit(x: &[f64], y: &[f64], w: &[f64], deg: usize) -> Result<Vec<f64>> {
    let n = x.len();
    if n != y.len() || n != w.len() || n < deg + 1 {
        return Err(Error::invalid("polynomial fit: need more points than coefficients"));
    }
    // Scale abscissae to [-1, 1] for conditioning, undo at the end.
    let xmax = x.iter().fold(0.0f64, |m, &v| m.max(v.abs())).max(1e-300);
    let mut vand = DMatrix::zeros(n, deg + 1);
    let mut rhs = DMatrix::zeros(n, 1);
    for i in 0..n {
        let sw = w[i].sqrt();
        let xs = x[i] / xmax;
        let mut p = 1.0;
        for k in 0..=deg {
            vand[(i, k)] = sw * p;
            p *= xs;
        }
        rhs[(i, 0)] = sw * y[i];
    }
    let qr = vand.qr();
    let q = qr.q();
    let r = qr.r();
    let mut b = q.transpose() * rhs;
    // Back substitution on the square upper-triangular factor.
    let m = deg + 1;
    let mut coeffs = vec![0.0; m];
    for k in (0..m).rev() {
        let mut acc = b[(k, 0)];
        for j in (k + 1)..m {
            acc -= r[(k, j)] * coeffs[j];
        }
        let d = r[(k, k)];
        if d.abs() < 1e-13 * r[(0, 0)].abs().max(1e-300) {
            return Err(Error::IllConditioned {
                context: "polynomial fit".into(),
                cond: f64::INFINITY,
            });
        }
        coeffs[k] = acc / d;
        b[(k, 0)] = coeffs[k];
    }
    // Undo the scaling: coefficient of x^k gains xmax^{-k}.
    for (k, c) in coeffs.iter_mut().enumerate() {
        *c /= xmax.powi(k as i32);
    }
    Ok(coeffs)
}

/// Keep only samples with abscissa in the trailing `fraction` of the
/// logarithmic range; used for asymptotic fits where the transient must
/// be discarded.
pub fn trailing_log_window(t: &[f64], v: &[f64], fraction: f64) -> (Vec<f64>, Vec<f64>) {
    let tmax = t.iter().cloned().fold(f64::MIN, f64::max);
    let tmin = t.iter().cloned().fold(f64::MAX, f64::min).max(1e-300);
    let cut = (tmin.ln() + (1.0 - fraction) * (tmax.ln() - tmin.ln())).exp();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&ti, &vi) in t.iter().zip(v) {
        if ti >= cut {
            xs.push(ti);
            ys.push(vi);
        }
    }
    (xs, ys)
}
