//! Adaptive quadrature on Gauss-Legendre panels.
//!
//! Integrands in this crate are smooth away from isolated kinks (the zone
//! seam), so a fixed 15-point rule with bisection-based error control is
//! enough. Long-time integrals with `dt/t` weights go through `log_domain`,
//! which substitutes u = log t and keeps panel counts independent of the
//! horizon.

use crate::error::{Error, Result};

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1],
/// computed by Newton iteration on the Legendre polynomial.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        // Chebyshev-like initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre recurrence for P_n(x) and P'_n(x).
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

const PANEL_N: usize = 15;

thread_local! {
    static PANEL_RULE: (Vec<f64>, Vec<f64>) = gauss_legendre(PANEL_N);
}

fn panel(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64) -> f64 {
    PANEL_RULE.with(|(x, w)| {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        let mut acc = 0.0;
        for i in 0..PANEL_N {
            acc += w[i] * f(mid + half * x[i]);
        }
        acc * half
    })
}

/// Adaptive integral of `f` over [a, b]. The error estimate on each panel is
/// the difference between the whole-panel rule and the sum of its halves.
pub fn integrate(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let mut total = 0.0;
    let mut stack = vec![(a, b, panel(&mut f, a, b), 0u32)];
    let mut panels = 0usize;
    while let Some((lo, hi, whole, depth)) = stack.pop() {
        panels += 1;
        if panels > 200_000 {
            return Err(Error::QuadratureFailure { a, b, err: f64::INFINITY });
        }
        let mid = 0.5 * (lo + hi);
        let left = panel(&mut f, lo, mid);
        let right = panel(&mut f, mid, hi);
        if !(whole + left + right).is_finite() {
            // Non-finite samples would otherwise slip through the depth cap.
            return Err(Error::QuadratureFailure { a: lo, b: hi, err: f64::INFINITY });
        }
        let err = (whole - left - right).abs();
        let local_tol = tol * ((hi - lo) / (b - a)).abs().max(1e-300);
        // Refining below the roundoff of the panel values is pointless, so
        // the acceptance threshold is floored there.
        let floor = 100.0 * f64::EPSILON * (whole.abs() + left.abs() + right.abs());
        if err <= local_tol.max(floor).max(1e-300) || depth >= 40 {
            if depth >= 40 && err > (10.0 * local_tol).max(floor) {
                return Err(Error::QuadratureFailure { a: lo, b: hi, err });
            }
            total += left + right;
        } else {
            stack.push((lo, mid, left, depth + 1));
            stack.push((mid, hi, right, depth + 1));
        }
    }
    Ok(total)
}

/// Integral of `f(t) dt/t` over [a, b] (0 < a <= b) via u = log t.
pub fn integrate_log_weight(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    assert!(a > 0.0 && b >= a);
    integrate(|u| f(u.exp()), a.ln(), b.ln(), tol)
}

/// Integral of `f(t) dt` over [a, b] with the substitution u = log t, for
/// integrands that decay like powers of t. Requires a > 0.
pub fn integrate_via_log(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    assert!(a > 0.0 && b >= a);
    integrate(
        |u| {
            let t = u.exp();
            f(t) * t
        },
        a.ln(),
        b.ln(),
        tol,
    )
}

/// Cumulative integrals of `f` along a strictly increasing grid: the result
/// has the same length, entry k holding the integral from grid[0] to grid[k].
pub fn cumulative(mut f: impl FnMut(f64) -> f64, grid: &[f64], tol: f64) -> Result<Vec<f64>> {
    if grid.len() < 2 {
        return Err(Error::DegenerateGrid { context: "cumulative quadrature".into() });
    }
    let span = grid[grid.len() - 1] - grid[0];
    let mut out = Vec::with_capacity(grid.len());
    out.push(0.0);
    let mut acc = 0.0;
    for w in grid.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::DegenerateGrid { context: "cumulative quadrature".into() });
        }
        acc += integrate(&mut f, w[0], w[1], tol * (w[1] - w[0]) / span)?;
        out.push(acc);
    }
    Ok(out)
}

/// Geometric grid from a to b with `n` points (inclusive). Requires a > 0.
pub fn log_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(a > 0.0 && b > a && n >= 2);
    let (la, lb) = (a.ln(), b.ln());
    (0..n)
        .map(|i| (la + (lb - la) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Uniform grid from a to b with `n` points (inclusive).
pub fn linear_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}
