//! Phase-space geometry.
//!
//! Phase space splits along the hypersurface (1+t)|xi| = N into the
//! pseudodifferential zone (below) and the hyperbolic zone (above). The
//! separating time t_xi is where a fixed frequency crosses from one to the
//! other, and the auxiliary weight h(t, xi) interpolates between N/(1+t)
//! and |xi| so that second-order equations can be reduced to first-order
//! systems with a weight that never degenerates.

/// Zone constant and smoothing width for the auxiliary weight.
#[derive(Debug, Clone, Copy)]
pub struct ZoneConfig {
    pub n: f64,
    /// Width of the blend region of `aux_h`, in units of theta = (1+t)|xi|/N.
    pub smoothing_width: f64,
}

impl Default for ZoneConfig {
    fn default() -> Self {
        ZoneConfig { n: 1.0, smoothing_width: 1.0 }
    }
}

impl ZoneConfig {
    pub fn new(n: f64, smoothing_width: f64) -> Self {
        assert!(n > 0.0, "zone constant must be positive");
        assert!(
            smoothing_width > 0.0 && smoothing_width <= 1.0,
            "smoothing width must lie in (0, 1]"
        );
        ZoneConfig { n, smoothing_width }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Zone {
    Pseudodifferential,
    Hyperbolic,
}

pub fn norm(xi: &[f64]) -> f64 {
    xi.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Time at which the frequency xi crosses from the pseudodifferential into
/// the hyperbolic zone: N/|xi| - 1 for 0 < |xi| <= N, zero for |xi| >= N,
/// +infinity at xi = 0 (that frequency never leaves the pd zone).
pub fn separating_time(xi: &[f64], cfg: &ZoneConfig) -> f64 {
    separating_time_radial(norm(xi), cfg)
}

pub fn separating_time_radial(xi_norm: f64, cfg: &ZoneConfig) -> f64 {
    if xi_norm == 0.0 {
        f64::INFINITY
    } else if xi_norm >= cfg.n {
        0.0
    } else {
        cfg.n / xi_norm - 1.0
    }
}

/// Which zone the point (t, xi) lies in; the common boundary counts as
/// hyperbolic.
pub fn zone_of(t: f64, xi_norm: f64, cfg: &ZoneConfig) -> Zone {
    if (1.0 + t) * xi_norm >= cfg.n {
        Zone::Hyperbolic
    } else {
        Zone::Pseudodifferential
    }
}

/// Quintic Hermite step: 0 at 0, 1 at 1, with two vanishing derivatives at
/// both ends.
fn smoothstep(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        x * x * x * (10.0 + x * (-15.0 + 6.0 * x))
    }
}

fn smoothstep_d(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        0.0
    } else {
        30.0 * x * x * (1.0 - x) * (1.0 - x)
    }
}

/// The auxiliary weight h(t, xi): N/(1+t) in the pd zone, |xi| beyond the
/// blend region of the hyperbolic zone, and a C^2 monotone blend in between.
/// Always >= max(|xi|, N/(1+t)) / 2 for smoothing_width <= 1.
pub fn aux_h(t: f64, xi: &[f64], cfg: &ZoneConfig) -> f64 {
    aux_h_radial(t, norm(xi), cfg)
}

pub fn aux_h_radial(t: f64, xi_norm: f64, cfg: &ZoneConfig) -> f64 {
    let pd = cfg.n / (1.0 + t);
    let theta = (1.0 + t) * xi_norm / cfg.n;
    let chi = 1.0 - smoothstep((theta - 1.0) / cfg.smoothing_width);
    pd * chi + xi_norm * (1.0 - chi)
}

/// Time derivative of `aux_h`, in closed form (the reduction of second-order
/// equations needs d/dt h / h without difference noise).
pub fn aux_h_dt_radial(t: f64, xi_norm: f64, cfg: &ZoneConfig) -> f64 {
    let pd = cfg.n / (1.0 + t);
    let theta = (1.0 + t) * xi_norm / cfg.n;
    let x = (theta - 1.0) / cfg.smoothing_width;
    let chi = 1.0 - smoothstep(x);
    let dchi_dtheta = -smoothstep_d(x) / cfg.smoothing_width;
    let dtheta_dt = xi_norm / cfg.n;
    -cfg.n / ((1.0 + t) * (1.0 + t)) * chi + (pd - xi_norm) * dchi_dtheta * dtheta_dt
}
