//! Adaptive Runge-Kutta-Fehlberg 7(8) integration for matrix-valued linear
//! systems.
//!
//! States are complex matrices (vectors are d x 1), which covers both the
//! fundamental solution E(t, s, xi) and the iterated integrals of the
//! Peano-Baker series. Error control is per unit step: each step is allowed
//! an error budget proportional to its share of the total span, so the
//! accumulated error over the interval stays near the requested tolerance
//! regardless of how many steps the controller takes.

use crate::error::{Error, Result};
use crate::linalg::CMat;
use num_complex::Complex;

// Fehlberg 7(8), 13 stages. The solution is advanced with the eighth-order
// weights; the embedded seventh-order weights differ only through stages
// 0, 10, 11, 12, which gives the cheap error estimate below.
const STAGES: usize = 13;

const C: [f64; STAGES] = [
    0.0,
    2.0 / 27.0,
    1.0 / 9.0,
    1.0 / 6.0,
    5.0 / 12.0,
    0.5,
    5.0 / 6.0,
    1.0 / 6.0,
    2.0 / 3.0,
    1.0 / 3.0,
    1.0,
    0.0,
    1.0,
];

const A: [[f64; 12]; STAGES] = [
    [0.0; 12],
    [2.0 / 27.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 36.0, 1.0 / 12.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 24.0, 0.0, 1.0 / 8.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [5.0 / 12.0, 0.0, -25.0 / 16.0, 25.0 / 16.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 20.0, 0.0, 0.0, 0.25, 0.2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [
        -25.0 / 108.0,
        0.0,
        0.0,
        125.0 / 108.0,
        -65.0 / 27.0,
        125.0 / 54.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
    ],
    [
        31.0 / 300.0,
        0.0,
        0.0,
        0.0,
        61.0 / 225.0,
        -2.0 / 9.0,
        13.0 / 900.0,
        0.0,
        0.0,
        0.0,
        0.0,
        0.0,
    ],
    [
        2.0,
        0.0,
        0.0,
        -53.0 / 6.0,
        704.0 / 45.0,
        -107.0 / 9.0,
        67.0 / 90.0,
        3.0,
        0.0,
        0.0,
        0.0,
        0.0,
    ],
    [
        -91.0 / 108.0,
        0.0,
        0.0,
        23.0 / 108.0,
        -976.0 / 135.0,
        311.0 / 54.0,
        -19.0 / 60.0,
        17.0 / 6.0,
        -1.0 / 12.0,
        0.0,
        0.0,
        0.0,
    ],
    [
        2383.0 / 4100.0,
        0.0,
        0.0,
        -341.0 / 164.0,
        4496.0 / 1025.0,
        -301.0 / 82.0,
        2133.0 / 4100.0,
        45.0 / 82.0,
        45.0 / 164.0,
        18.0 / 41.0,
        0.0,
        0.0,
    ],
    [
        3.0 / 205.0,
        0.0,
        0.0,
        0.0,
        0.0,
        -6.0 / 41.0,
        -3.0 / 205.0,
        -3.0 / 41.0,
        3.0 / 41.0,
        6.0 / 41.0,
        0.0,
        0.0,
    ],
    [
        -1777.0 / 4100.0,
        0.0,
        0.0,
        -341.0 / 164.0,
        4496.0 / 1025.0,
        -289.0 / 82.0,
        2193.0 / 4100.0,
        51.0 / 82.0,
        33.0 / 164.0,
        12.0 / 41.0,
        0.0,
        1.0,
    ],
];

const B8: [f64; STAGES] = [
    0.0,
    0.0,
    0.0,
    0.0,
    0.0,
    34.0 / 105.0,
    9.0 / 35.0,
    9.0 / 35.0,
    9.0 / 280.0,
    9.0 / 280.0,
    0.0,
    41.0 / 840.0,
    41.0 / 840.0,
];

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_steps: usize,
    /// Initial step guess; derived from the span when absent.
    pub h_init: Option<f64>,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions { rel_tol: 1e-10, abs_tol: 1e-12, max_steps: 4_000_000, h_init: None }
    }
}

impl OdeOptions {
    pub fn with_tol(tol: f64) -> Self {
        OdeOptions { rel_tol: tol, abs_tol: tol * 1e-2, ..Default::default() }
    }
}

struct Stepper<'a> {
    f: &'a mut dyn FnMut(f64, &CMat) -> CMat,
    k: Vec<CMat>,
}

impl<'a> Stepper<'a> {
    fn new(f: &'a mut dyn FnMut(f64, &CMat) -> CMat, shape: (usize, usize)) -> Self {
        let k = (0..STAGES).map(|_| CMat::zeros(shape.0, shape.1)).collect();
        Stepper { f, k }
    }

    /// One RKF78 step from (t, y) with size h. Returns (y_next, err_norm).
    fn step(&mut self, t: f64, y: &CMat, h: f64) -> (CMat, f64) {
        self.k[0] = (self.f)(t, y);
        for s in 1..STAGES {
            let mut arg = y.clone();
            for j in 0..s {
                let a = A[s][j];
                if a != 0.0 {
                    arg += &self.k[j] * Complex::new(a * h, 0.0);
                }
            }
            self.k[s] = (self.f)(t + C[s] * h, &arg);
        }
        let mut y_next = y.clone();
        for s in 0..STAGES {
            let b = B8[s];
            if b != 0.0 {
                y_next += &self.k[s] * Complex::new(b * h, 0.0);
            }
        }
        // b7 - b8 is supported on stages 0, 10, 11, 12 with weight 41/840.
        let diff = &self.k[0] + &self.k[10] - &self.k[11] - &self.k[12];
        let err = diff.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt() * (41.0 / 840.0) * h.abs();
        (y_next, err)
    }
}

fn state_norm(y: &CMat) -> f64 {
    y.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Integrate dy/dt = f(t, y) from t0 to t1 (either direction), reporting the
/// state at every grid point. `grid` must be strictly monotone and start at
/// t0; the first output entry is `y0` itself.
pub fn integrate_grid(
    f: &mut dyn FnMut(f64, &CMat) -> CMat,
    grid: &[f64],
    y0: &CMat,
    opts: &OdeOptions,
) -> Result<Vec<CMat>> {
    integrate_grid_counted(f, grid, y0, opts).map(|(states, _)| states)
}

/// Like `integrate_grid`, additionally reporting the number of attempted
/// steps (accepted and rejected; each costs one full stage sweep).
pub fn integrate_grid_counted(
    f: &mut dyn FnMut(f64, &CMat) -> CMat,
    grid: &[f64],
    y0: &CMat,
    opts: &OdeOptions,
) -> Result<(Vec<CMat>, usize)> {
    if grid.len() < 2 {
        return Err(Error::DegenerateGrid { context: "ode output grid".into() });
    }
    let dir = (grid[grid.len() - 1] - grid[0]).signum();
    if dir == 0.0 {
        return Err(Error::DegenerateGrid { context: "ode output grid".into() });
    }
    for w in grid.windows(2) {
        if (w[1] - w[0]) * dir <= 0.0 {
            return Err(Error::DegenerateGrid { context: "ode output grid".into() });
        }
    }
    let span = (grid[grid.len() - 1] - grid[0]).abs();
    let mut stepper = Stepper::new(f, y0.shape());
    let mut out = Vec::with_capacity(grid.len());
    out.push(y0.clone());

    let mut t = grid[0];
    let mut y = y0.clone();
    let mut h = opts.h_init.unwrap_or(span * 1e-3) * dir;
    let mut steps = 0usize;
    let mut next_idx = 1usize;

    while next_idx < grid.len() {
        let target = grid[next_idx];
        // Clip to land exactly on the next output point.
        let mut h_try = h;
        let mut clipped = false;
        if (t + h_try - target) * dir >= 0.0 {
            h_try = target - t;
            clipped = true;
        }
        if h_try.abs() < 1e-14 * (t.abs() + 1.0) {
            // Already at the target up to roundoff.
            t = target;
            out.push(y.clone());
            next_idx += 1;
            continue;
        }
        let (y_next, err) = stepper.step(t, &y, h_try);
        steps += 1;
        if steps > opts.max_steps {
            return Err(Error::OdeFailure {
                t,
                reason: format!(
                    "step budget of {} exhausted (possible stiffness; last h = {:.3e})",
                    opts.max_steps, h_try
                ),
            });
        }
        let ynorm = state_norm(&y).max(state_norm(&y_next));
        let tol_step =
            (opts.abs_tol + opts.rel_tol * ynorm) * (h_try.abs() / span).max(1e-300);
        // Below the roundoff floor the estimate is noise; accept.
        let floor = 40.0 * f64::EPSILON * ynorm;
        let accepted = err <= tol_step.max(floor) || !y_next.iter().all(|z| z.is_finite());
        if !y_next.iter().all(|z| z.is_finite()) {
            return Err(Error::OdeFailure { t, reason: "state became non-finite".into() });
        }
        if accepted {
            t += h_try;
            y = y_next;
            if clipped && (t - target).abs() <= 1e-12 * (target.abs() + 1.0) {
                t = target;
                out.push(y.clone());
                next_idx += 1;
            }
        }
        // Step-size update (order-8 local error, per-unit-step budget).
        let ratio = if err > 0.0 { (tol_step.max(floor) / err).powf(1.0 / 7.0) } else { 5.0 };
        let factor = (0.9 * ratio).clamp(0.1, 5.0);
        let h_new = if clipped { h } else { h_try } * factor;
        h = h_new;
        if h.abs() < 1e3 * f64::EPSILON * (t.abs() + 1.0) {
            return Err(Error::OdeFailure {
                t,
                reason: format!("step size underflow (h = {:.3e}); system too stiff", h),
            });
        }
    }
    Ok((out, steps))
}

/// Integrate from t0 to t1 and return only the final state.
pub fn integrate_to(
    f: &mut dyn FnMut(f64, &CMat) -> CMat,
    t0: f64,
    t1: f64,
    y0: &CMat,
    opts: &OdeOptions,
) -> Result<CMat> {
    if t0 == t1 {
        return Ok(y0.clone());
    }
    let states = integrate_grid(f, &[t0, t1], y0, opts)?;
    Ok(states.into_iter().next_back().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cx, fro_norm};

    #[test]
    fn scalar_exponential() {
        let lam = cx(-0.3, 2.0);
        let mut f = |_t: f64, y: &CMat| y * lam;
        let y0 = CMat::from_element(1, 1, cx(1.0, 0.0));
        let opts = OdeOptions::with_tol(1e-12);
        let y = integrate_to(&mut f, 0.0, 5.0, &y0, &opts).unwrap();
        let expect = (lam * 5.0).exp();
        assert!((y[(0, 0)] - expect).norm() < 1e-10);
    }

    #[test]
    fn matrix_rotation_long_time() {
        // E' = i A E with A = [[0, 1], [1, 0]]:
        // E(t) = cos(t) I + i sin(t) A, unitary for all t.
        let a = CMat::from_row_slice(2, 2, &[cx(0.0, 0.0), cx(1.0, 0.0), cx(1.0, 0.0), cx(0.0, 0.0)]);
        let mut f = |_t: f64, y: &CMat| {
            let ia = a.map(|z| z * cx(0.0, 1.0));
            &ia * y
        };
        let y0 = CMat::identity(2, 2);
        let opts = OdeOptions::with_tol(1e-11);
        let t_end = 200.0;
        let y = integrate_to(&mut f, 0.0, t_end, &y0, &opts).unwrap();
        let expect = CMat::from_row_slice(
            2,
            2,
            &[
                cx(t_end.cos(), 0.0),
                cx(0.0, t_end.sin()),
                cx(0.0, t_end.sin()),
                cx(t_end.cos(), 0.0),
            ],
        );
        assert!(fro_norm(&(&y - &expect)) < 1e-8);
    }

    #[test]
    fn grid_output_matches_direct() {
        let lam = cx(0.0, 1.7);
        let y0 = CMat::from_element(1, 1, cx(1.0, 0.0));
        let opts = OdeOptions::with_tol(1e-11);
        let grid = [0.0, 0.7, 1.9, 4.0, 9.3];
        let mut f = |_t: f64, y: &CMat| y * lam;
        let states = integrate_grid(&mut f, &grid, &y0, &opts).unwrap();
        for (i, &t) in grid.iter().enumerate() {
            let expect = (lam * t).exp();
            assert!((states[i][(0, 0)] - expect).norm() < 1e-9, "t = {t}");
        }
    }

    #[test]
    fn backward_integration() {
        let lam = cx(-0.5, 0.9);
        let y0 = CMat::from_element(1, 1, (lam * 3.0).exp());
        let mut f = |_t: f64, y: &CMat| y * lam;
        let opts = OdeOptions::with_tol(1e-12);
        let y = integrate_to(&mut f, 3.0, 0.0, &y0, &opts).unwrap();
        assert!((y[(0, 0)] - cx(1.0, 0.0)).norm() < 1e-10);
    }

    #[test]
    fn nonautonomous_closed_form() {
        // y' = i t y => y = exp(i t^2 / 2).
        let mut f = |t: f64, y: &CMat| y * cx(0.0, t);
        let y0 = CMat::from_element(1, 1, cx(1.0, 0.0));
        let opts = OdeOptions::with_tol(1e-12);
        let y = integrate_to(&mut f, 0.0, 6.0, &y0, &opts).unwrap();
        let expect = cx(0.0, 18.0).exp();
        assert!((y[(0, 0)] - expect).norm() < 1e-9);
    }
}
