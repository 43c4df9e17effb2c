//! Slowness surfaces of averaged eigenvalue branches and their contact
//! geometry.
//!
//! For a branch lambda_j of the principal symbol the averaged phase is
//! theta_j(t, xi) = (1/t) int_0^t lambda_j(tau, xi) dtau. The level set
//! { xi : theta_j(t, xi) = 1 } is the slowness surface of the branch at
//! time t. Large-time dispersive rates are governed by how flat that
//! surface can be against its tangent lines, measured by the contact
//! functionals kappa (inf over tangent directions) and kappa0 (sup), and
//! the orders gamma, gamma0 at which they first become positive.

use std::cell::RefCell;
use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::SymbolModel;
use crate::quad;
use crate::spectral::{branch_lambdas, spectral_frame, SpectralFrame};
use crate::zones::norm;

/// Contact sums at or below this threshold count as vanishing when the
/// orders gamma and gamma0 are selected. Reported alongside the raw values.
pub const CONTACT_ZERO: f64 = 1e-6;

/// Certified accuracy of theta_j at every stored surface point.
pub const LEVEL_TOL: f64 = 1e-10;

/// Coarsest angular spacing accepted by contact_index: half a degree.
pub const MAX_ANGULAR_STEP: f64 = PI / 360.0;

/// Local graph fits with a worse design condition number are skipped.
const FIT_COND_MAX: f64 = 1e10;

/// Half-width of the local fit patch in grid steps.
const PATCH_HALF: i64 = 10;
const PATCH_HALF_3D: i64 = 6;

/// Tangent directions sampled when extremising the contact sums on a
/// two dimensional tangent plane.
const TANGENT_SWEEP: usize = 180;

const FACTORIAL: [f64; 9] = [
    1.0, 1.0, 2.0, 6.0, 24.0, 120.0, 720.0, 5040.0, 40320.0,
];

/// Sampling grid on the unit sphere of directions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AngularGrid {
    /// `count` directions spaced uniformly on the unit circle.
    Circle { count: usize },
    /// Latitude-longitude grid with a half-step offset away from the poles.
    Sphere { rows: usize, cols: usize },
}

impl AngularGrid {
    pub fn ambient_dim(&self) -> usize {
        match self {
            AngularGrid::Circle { .. } => 2,
            AngularGrid::Sphere { .. } => 3,
        }
    }

    /// Largest angular spacing between adjacent directions.
    pub fn max_step(&self) -> f64 {
        match *self {
            AngularGrid::Circle { count } => TAU / count.max(1) as f64,
            AngularGrid::Sphere { rows, cols } => {
                (PI / rows.max(1) as f64).max(TAU / cols.max(1) as f64)
            }
        }
    }

    fn directions(&self) -> Vec<Vec<f64>> {
        match *self {
            AngularGrid::Circle { count } => (0..count)
                .map(|i| {
                    let th = TAU * i as f64 / count as f64;
                    vec![th.cos(), th.sin()]
                })
                .collect(),
            AngularGrid::Sphere { rows, cols } => {
                let mut out = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    let polar = PI * (r as f64 + 0.5) / rows as f64;
                    let (sp, cp) = polar.sin_cos();
                    for c in 0..cols {
                        let az = TAU * c as f64 / cols as f64;
                        out.push(vec![sp * az.cos(), sp * az.sin(), cp]);
                    }
                }
                out
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            AngularGrid::Circle { count } => count >= 16,
            AngularGrid::Sphere { rows, cols } => rows >= 8 && cols >= 16,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(
                "angular grid too coarse: need at least 16 circle directions or an 8 x 16 sphere grid",
            ))
        }
    }
}

/// Level set { xi : theta_j(t, xi) = 1 } sampled over an angular grid.
#[derive(Clone, Debug)]
pub struct SlownessSurface {
    pub t: f64,
    /// Branch index into the ascending eigenvalue order.
    pub j: usize,
    /// Ambient space dimension (2 or 3).
    pub n: usize,
    /// Unit directions in grid order.
    pub omegas: Vec<Vec<f64>>,
    /// Radius per direction; None where the branch never reaches level one.
    pub radii: Vec<Option<f64>>,
    grid: AngularGrid,
}

impl SlownessSurface {
    /// Points r(omega) * omega for the directions where the surface exists.
    pub fn points(&self) -> Vec<Vec<f64>> {
        self.omegas
            .iter()
            .zip(&self.radii)
            .filter_map(|(w, r)| r.map(|r| w.iter().map(|c| c * r).collect()))
            .collect()
    }

    /// Fraction of directions where the level set exists.
    pub fn coverage(&self) -> f64 {
        if self.radii.is_empty() {
            return 0.0;
        }
        self.radii.iter().filter(|r| r.is_some()).count() as f64 / self.radii.len() as f64
    }

    pub fn grid(&self) -> AngularGrid {
        self.grid
    }

    /// CSV rows "omega...,r" for the defined directions.
    pub fn csv(&self) -> String {
        let mut out = String::from(if self.n == 2 {
            "omega_x,omega_y,r\n"
        } else {
            "omega_x,omega_y,omega_z,r\n"
        });
        for (w, r) in self.omegas.iter().zip(&self.radii) {
            if let Some(r) = r {
                for c in w {
                    out.push_str(&format!("{c:.16e},"));
                }
                out.push_str(&format!("{r:.16e}\n"));
            }
        }
        out
    }
}

/// Time-averaged eigenvalue branch (1/t) int_0^t lambda_j(tau, xi) dtau with
/// labels tracked against `frame`. The frame must cover [0, t] at the same
/// xi (or a scalar multiple; see `tracking_frame`).
pub fn theta(
    sym: &SymbolModel,
    frame: &SpectralFrame,
    t: f64,
    j: usize,
    xi: &[f64],
) -> Result<f64> {
    averaged_branch(sym, frame, t, j, xi, 1.0)
}

/// Spectral frame along [0, t] at fixed xi, log-spaced densely enough to
/// track branch labels through the time average.
pub fn tracking_frame(sym: &SymbolModel, t: f64, xi: &[f64]) -> Result<SpectralFrame> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::invalid("tracking frame needs a finite t > 0"));
    }
    let w_max = (1.0 + t).ln();
    let nodes = ((8.0 * w_max).ceil() as usize + 2).max(9);
    let path: Vec<(f64, Vec<f64>)> = (0..nodes)
        .map(|i| {
            let w = w_max * i as f64 / (nodes - 1) as f64;
            (w.exp() - 1.0, xi.to_vec())
        })
        .collect();
    spectral_frame(sym, &path)
}

/// Shared core of `theta`: the frame's reference eigenvalues are rescaled by
/// `ref_scale` so one frame per direction serves every radius on the ray.
fn averaged_branch(
    sym: &SymbolModel,
    frame: &SpectralFrame,
    t: f64,
    j: usize,
    xi: &[f64],
    ref_scale: f64,
) -> Result<f64> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::invalid("branch average needs a finite t > 0"));
    }
    if j >= sym.dim {
        return Err(Error::Dimension {
            context: "branch index".into(),
            expected: format!("< {}", sym.dim),
            got: j.to_string(),
        });
    }
    if norm(xi) == 0.0 {
        return Err(Error::invalid("branch average needs xi != 0"));
    }
    let failed: RefCell<Option<Error>> = RefCell::new(None);
    let refs: RefCell<Vec<f64>> = RefCell::new(vec![0.0; sym.dim]);
    let tol = 1e-12 * t.max(1.0) * (1.0 + norm(xi));
    let integral = quad::integrate(
        |tau| {
            if failed.borrow().is_some() {
                return 0.0;
            }
            let mut refs = refs.borrow_mut();
            let near = frame.nearest(tau);
            for (r, l) in refs.iter_mut().zip(&near.lambdas) {
                *r = l * ref_scale;
            }
            match branch_lambdas(sym, tau, xi, Some(&refs)) {
                Ok(l) => l[j],
                Err(e) => {
                    failed.borrow_mut().get_or_insert(e);
                    0.0
                }
            }
        },
        0.0,
        t,
        tol,
    )?;
    if let Some(e) = failed.borrow_mut().take() {
        return Err(e);
    }
    Ok(integral / t)
}

/// Slowness surface of branch j at time t over the given angular grid.
///
/// Each direction gets its own label-tracking frame at unit radius; the
/// radius is then solved from theta_j(t, r omega) = 1. The homogeneity of
/// the principal part makes 1 / theta_j(t, omega) an excellent initial
/// guess, so Newton usually certifies in one step; a bracketed bisection
/// covers symbols that are only approximately homogeneous. Directions where
/// the branch average never reaches level one are marked empty.
pub fn slowness_surface(
    sym: &SymbolModel,
    t: f64,
    j: usize,
    grid: &AngularGrid,
) -> Result<SlownessSurface> {
    grid.validate()?;
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::invalid("slowness surface needs a finite t > 0"));
    }
    if grid.ambient_dim() != sym.space_dim {
        return Err(Error::Dimension {
            context: "angular grid ambient dimension".into(),
            expected: sym.space_dim.to_string(),
            got: grid.ambient_dim().to_string(),
        });
    }
    if j >= sym.dim {
        return Err(Error::Dimension {
            context: "branch index".into(),
            expected: format!("< {}", sym.dim),
            got: j.to_string(),
        });
    }
    let omegas = grid.directions();
    let radii = omegas
        .par_iter()
        .map(|w| direction_radius(sym, t, j, w))
        .collect::<Result<Vec<_>>>()?;
    check_neighbour_ratios(grid, &radii)?;
    Ok(SlownessSurface {
        t,
        j,
        n: grid.ambient_dim(),
        omegas,
        radii,
        grid: *grid,
    })
}

fn direction_radius(sym: &SymbolModel, t: f64, j: usize, omega: &[f64]) -> Result<Option<f64>> {
    let frame = tracking_frame(sym, t, omega)?;
    let base = averaged_branch(sym, &frame, t, j, omega, 1.0)?;
    // Averages at or below this level put the radius beyond 1e8; the level
    // set along such a direction is treated as empty.
    if !(base > 1e-8) {
        return Ok(None);
    }
    let level = |r: f64| -> Result<f64> {
        let xi: Vec<f64> = omega.iter().map(|w| w * r).collect();
        averaged_branch(sym, &frame, t, j, &xi, r)
    };
    let mut r = 1.0 / base;
    let mut g = level(r)? - 1.0;
    for _ in 0..40 {
        if g.abs() <= LEVEL_TOL {
            return Ok(Some(r));
        }
        // d(theta)/dr = theta / r exactly for a homogeneous branch.
        let slope = (g + 1.0) / r;
        if !(slope > 0.0) {
            break;
        }
        r = (r - g / slope).clamp(0.25 * r, 4.0 * r);
        g = level(r)? - 1.0;
    }
    if g.abs() <= LEVEL_TOL {
        return Ok(Some(r));
    }
    // Bracketed fallback for branch averages that are not linear in r.
    let (mut lo, mut hi) = (r, r);
    let (mut glo, mut ghi) = (g, g);
    for _ in 0..60 {
        if glo > 0.0 {
            lo *= 0.5;
            glo = level(lo)? - 1.0;
        }
        if ghi < 0.0 {
            hi *= 2.0;
            ghi = level(hi)? - 1.0;
        }
        if glo <= 0.0 && ghi >= 0.0 {
            break;
        }
    }
    if !(glo <= 0.0 && ghi >= 0.0) {
        return Ok(None);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let gm = level(mid)? - 1.0;
        if gm.abs() <= LEVEL_TOL {
            return Ok(Some(mid));
        }
        if gm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    let mid = 0.5 * (lo + hi);
    let res = (level(mid)? - 1.0).abs();
    if res <= LEVEL_TOL {
        Ok(Some(mid))
    } else {
        Err(Error::invalid(format!(
            "level-one radius did not certify along a direction: residual {res:.3e}"
        )))
    }
}

/// Adjacent radii must stay within a factor of two of each other; a larger
/// jump means the grid is too coarse to resolve the branch.
fn check_neighbour_ratios(grid: &AngularGrid, radii: &[Option<f64>]) -> Result<()> {
    let check = |a: usize, b: usize| -> Result<()> {
        if let (Some(ra), Some(rb)) = (radii[a], radii[b]) {
            let ratio = ra / rb;
            if !(0.5..=2.0).contains(&ratio) {
                return Err(Error::invalid(format!(
                    "adjacent slowness radii jump by a factor {ratio:.3}; refine the angular grid"
                )));
            }
        }
        Ok(())
    };
    match *grid {
        AngularGrid::Circle { count } => {
            for i in 0..count {
                check(i, (i + 1) % count)?;
            }
        }
        AngularGrid::Sphere { rows, cols } => {
            for r in 0..rows {
                for c in 0..cols {
                    let i = r * cols + c;
                    check(i, r * cols + (c + 1) % cols)?;
                    if r + 1 < rows {
                        check(i, (r + 1) * cols + c)?;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Contact orders of a slowness surface.
#[derive(Clone, Debug)]
pub struct ContactIndexReport {
    /// Least order with kappa above the threshold, if one exists at or
    /// below the requested maximum.
    pub gamma: Option<usize>,
    /// kappa(Sigma, g) for g = 2..=gamma_max: minimum over surface points of
    /// the contact sum minimised over tangent directions.
    pub kappa_values: Vec<f64>,
    /// Least order with kappa0 above the threshold.
    pub gamma0: Option<usize>,
    /// Same minima with the contact sum maximised over tangent directions.
    pub kappa0_values: Vec<f64>,
    /// Second fundamental form is sign-semidefinite at every fitted point.
    pub convex: bool,
    /// Surface point attaining the kappa minimum at the selected order.
    pub worst_point: Vec<f64>,
    /// Positivity threshold used for the order selection.
    pub threshold: f64,
    /// Fit centres dropped because the local regression was ill conditioned.
    pub skipped: usize,
}

struct CenterFit {
    point: Vec<f64>,
    /// Contact sums for g = 2..=gamma_max, minimised over tangent directions.
    sums: Vec<f64>,
    /// Same, maximised over tangent directions.
    sums0: Vec<f64>,
    sff_min: f64,
    sff_max: f64,
}

/// Contact indices of the surface up to order `gamma_max`.
///
/// At every fitted centre the surface is written as a graph h over its
/// tangent space (the frame is tilted until the fitted gradient vanishes)
/// and the radial derivatives of h up to gamma_max are read off a weighted
/// least-squares polynomial of degree gamma_max + 2 on the surrounding
/// patch. kappa(Sigma, g) is the minimum over centres of the tangent-wise
/// infimum of sum_{j=2}^{g} |d^j h|, kappa0 uses the supremum, and gamma /
/// gamma0 are the first orders where those exceed the threshold.
pub fn contact_index(surface: &SlownessSurface, gamma_max: usize) -> Result<ContactIndexReport> {
    if !(2..=6).contains(&gamma_max) {
        return Err(Error::invalid("contact order gamma_max must lie in 2..=6"));
    }
    if surface.grid.max_step() > MAX_ANGULAR_STEP * (1.0 + 1e-9) {
        return Err(Error::invalid(format!(
            "angular resolution {:.4} deg is coarser than the half-degree the local fits need",
            surface.grid.max_step().to_degrees()
        )));
    }
    let (fits, skipped) = match surface.grid {
        AngularGrid::Circle { .. } => contact_fits_2d(surface, gamma_max),
        AngularGrid::Sphere { .. } => contact_fits_3d(surface, gamma_max),
    };
    if fits.is_empty() {
        return Err(Error::invalid(
            "no local fit survived: surface is empty, too sparse, or degenerate",
        ));
    }
    let orders = gamma_max - 1;
    let mut kappa_values = vec![f64::INFINITY; orders];
    let mut kappa0_values = vec![f64::INFINITY; orders];
    let mut sff_lo = f64::INFINITY;
    let mut sff_hi = f64::NEG_INFINITY;
    for f in &fits {
        for g in 0..orders {
            kappa_values[g] = kappa_values[g].min(f.sums[g]);
            kappa0_values[g] = kappa0_values[g].min(f.sums0[g]);
        }
        sff_lo = sff_lo.min(f.sff_min);
        sff_hi = sff_hi.max(f.sff_max);
    }
    let gamma = (0..orders)
        .find(|&g| kappa_values[g] > CONTACT_ZERO)
        .map(|g| g + 2);
    let gamma0 = (0..orders)
        .find(|&g| kappa0_values[g] > CONTACT_ZERO)
        .map(|g| g + 2);
    let sel = gamma.unwrap_or(gamma_max) - 2;
    let worst = fits
        .iter()
        .min_by(|a, b| a.sums[sel].partial_cmp(&b.sums[sel]).unwrap())
        .expect("fits nonempty");
    let convex = sff_hi <= CONTACT_ZERO || sff_lo >= -CONTACT_ZERO;
    Ok(ContactIndexReport {
        gamma,
        kappa_values,
        gamma0,
        kappa0_values,
        convex,
        worst_point: worst.point.clone(),
        threshold: CONTACT_ZERO,
        skipped,
    })
}

/// Largest branch contact order of the model at time t. Branches whose
/// level set is empty in every direction are skipped; every remaining
/// branch must certify an order at or below gamma_max.
pub fn model_gamma(
    sym: &SymbolModel,
    t: f64,
    grid: &AngularGrid,
    gamma_max: usize,
) -> Result<usize> {
    let mut best: Option<usize> = None;
    for j in 0..sym.dim {
        let surf = slowness_surface(sym, t, j, grid)?;
        if surf.radii.iter().all(|r| r.is_none()) {
            continue;
        }
        let report = contact_index(&surf, gamma_max)?;
        match report.gamma {
            Some(g) => best = Some(best.map_or(g, |b| b.max(g))),
            None => {
                return Err(Error::invalid(format!(
                    "branch {j} shows no contact order at or below {gamma_max}"
                )))
            }
        }
    }
    best.ok_or_else(|| Error::invalid("no branch reaches level one on this grid"))
}

fn dot2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn unit3(a: [f64; 3]) -> Option<[f64; 3]> {
    let n = dot3(a, a).sqrt();
    if n > 0.0 {
        Some([a[0] / n, a[1] / n, a[2] / n])
    } else {
        None
    }
}

/// Weighted least-squares polynomial fit in scaled local coordinates.
/// Exponent pairs (a, b) address the monomial y1^a y2^b; univariate fits
/// pass b = 0 throughout. Returns unscaled coefficients, or None when the
/// design condition number exceeds the skip threshold.
fn ls_fit(
    y1: &[f64],
    y2: &[f64],
    h: &[f64],
    w: &[f64],
    exps: &[(usize, usize)],
    rho: f64,
) -> Option<Vec<f64>> {
    let m = h.len();
    let k = exps.len();
    if m < k + 2 || !(rho > 0.0) {
        return None;
    }
    let mut design = DMatrix::zeros(m, k);
    let mut rhs = DVector::zeros(m);
    for r in 0..m {
        let sw = w[r].sqrt();
        let u = y1[r] / rho;
        let v = y2[r] / rho;
        for (c, &(a, b)) in exps.iter().enumerate() {
            design[(r, c)] = sw * u.powi(a as i32) * v.powi(b as i32);
        }
        rhs[r] = sw * h[r];
    }
    let gram = design.transpose() * &design;
    let moment = design.transpose() * rhs;
    let svd = gram.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 0.0) || (smax / smin).sqrt() > FIT_COND_MAX {
        return None;
    }
    let sol = svd.solve(&moment, 0.0).ok()?;
    Some(
        exps.iter()
            .zip(sol.iter())
            .map(|(&(a, b), c)| c / rho.powi((a + b) as i32))
            .collect(),
    )
}

fn contact_fits_2d(surface: &SlownessSurface, gamma_max: usize) -> (Vec<CenterFit>, usize) {
    let count = surface.omegas.len();
    let deg = gamma_max + 2;
    let exps: Vec<(usize, usize)> = (0..=deg).map(|m| (m, 0)).collect();
    let pts: Vec<Option<[f64; 2]>> = surface
        .omegas
        .iter()
        .zip(&surface.radii)
        .map(|(w, r)| r.map(|r| [w[0] * r, w[1] * r]))
        .collect();
    let results: Vec<Option<Option<CenterFit>>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let center = pts[i]?;
            let mut patch = Vec::with_capacity(2 * PATCH_HALF as usize + 1);
            for off in -PATCH_HALF..=PATCH_HALF {
                let idx = (i as i64 + off).rem_euclid(count as i64) as usize;
                match pts[idx] {
                    Some(p) => patch.push(p),
                    None => return None,
                }
            }
            // Initial tangent from the nearest neighbours, outward normal.
            let prev = pts[(i + count - 1) % count].expect("patch covered");
            let next = pts[(i + 1) % count].expect("patch covered");
            let mut u = [next[0] - prev[0], next[1] - prev[1]];
            let un = dot2(u, u).sqrt();
            if !(un > 0.0) {
                return Some(None);
            }
            u = [u[0] / un, u[1] / un];
            let mut nor = [u[1], -u[0]];
            if dot2(nor, center) < 0.0 {
                nor = [-nor[0], -nor[1]];
            }
            let coeffs = match graph_fit_2d(&patch, center, u, nor, &exps) {
                Some(c) => c,
                None => return Some(None),
            };
            let derivs: Vec<f64> = (2..=gamma_max).map(|j| FACTORIAL[j] * coeffs[j]).collect();
            // With two antipodal tangent directions the odd derivatives only
            // change sign, so the inf and sup of the contact sums coincide.
            let mut sums = Vec::with_capacity(gamma_max - 1);
            let mut acc = 0.0;
            for d in &derivs {
                acc += d.abs();
                sums.push(acc);
            }
            let sff = 2.0 * coeffs[2];
            Some(Some(CenterFit {
                point: center.to_vec(),
                sums0: sums.clone(),
                sums,
                sff_min: sff,
                sff_max: sff,
            }))
        })
        .collect();
    let mut fits = Vec::new();
    let mut skipped = 0usize;
    for r in results.into_iter().flatten() {
        match r {
            Some(f) => fits.push(f),
            None => skipped += 1,
        }
    }
    (fits, skipped)
}

/// Tilt-iterated graph fit over a curve patch: refit until the linear
/// coefficient vanishes, so the frame is the true tangent/normal pair.
fn graph_fit_2d(
    patch: &[[f64; 2]],
    center: [f64; 2],
    mut u: [f64; 2],
    mut nor: [f64; 2],
    exps: &[(usize, usize)],
) -> Option<Vec<f64>> {
    let m = patch.len();
    let mut y = vec![0.0; m];
    let mut h = vec![0.0; m];
    let mut w = vec![0.0; m];
    let zeros = vec![0.0; m];
    for _ in 0..8 {
        let mut rho: f64 = 0.0;
        for (k, q) in patch.iter().enumerate() {
            let d = [q[0] - center[0], q[1] - center[1]];
            y[k] = dot2(d, u);
            h[k] = dot2(d, nor);
            rho = rho.max(y[k].abs());
        }
        if !(rho > 0.0) {
            return None;
        }
        for k in 0..m {
            w[k] = (-2.0 * (y[k] / rho).powi(2)).exp();
        }
        let coeffs = ls_fit(&y, &zeros, &h, &w, exps, rho)?;
        let tilt = coeffs[1];
        if tilt.abs() <= 1e-12 {
            if dot2(nor, center) < 0.0 {
                return None;
            }
            return Some(coeffs);
        }
        let s = (1.0 + tilt * tilt).sqrt();
        let u_new = [(u[0] + tilt * nor[0]) / s, (u[1] + tilt * nor[1]) / s];
        nor = [(nor[0] - tilt * u[0]) / s, (nor[1] - tilt * u[1]) / s];
        u = u_new;
    }
    None
}

fn contact_fits_3d(surface: &SlownessSurface, gamma_max: usize) -> (Vec<CenterFit>, usize) {
    let (rows, cols) = match surface.grid {
        AngularGrid::Sphere { rows, cols } => (rows, cols),
        AngularGrid::Circle { .. } => unreachable!("dispatched on grid kind"),
    };
    let deg = gamma_max + 2;
    let mut exps = Vec::new();
    for total in 0..=deg {
        for a in (0..=total).rev() {
            exps.push((a, total - a));
        }
    }
    let pts: Vec<Option<[f64; 3]>> = surface
        .omegas
        .iter()
        .zip(&surface.radii)
        .map(|(w, r)| r.map(|r| [w[0] * r, w[1] * r, w[2] * r]))
        .collect();
    // Fit centres are subsampled; the patches still use the full grid, so
    // the minima move by at most the curvature variation over one stride.
    let row_step = (rows / 30).max(1);
    let col_step = (cols / 60).max(1);
    let centres: Vec<(usize, usize)> = (0..rows)
        .step_by(row_step)
        .flat_map(|r| (0..cols).step_by(col_step).map(move |c| (r, c)))
        .collect();
    let results: Vec<Option<Option<CenterFit>>> = centres
        .into_par_iter()
        .map(|(ri, ci)| {
            let center = pts[ri * cols + ci]?;
            let mut patch = Vec::new();
            for dr in -PATCH_HALF_3D..=PATCH_HALF_3D {
                let rr = ri as i64 + dr;
                if rr < 0 || rr >= rows as i64 {
                    continue;
                }
                for dc in -PATCH_HALF_3D..=PATCH_HALF_3D {
                    let cc = (ci as i64 + dc).rem_euclid(cols as i64) as usize;
                    match pts[rr as usize * cols + cc] {
                        Some(p) => patch.push(p),
                        None => return None,
                    }
                }
            }
            let east = pts[ri * cols + (ci + 1) % cols]?;
            let west = pts[ri * cols + (ci + cols - 1) % cols]?;
            let south = pts[(ri + 1).min(rows - 1) * cols + ci]?;
            let north = pts[ri.saturating_sub(1) * cols + ci]?;
            let du = [east[0] - west[0], east[1] - west[1], east[2] - west[2]];
            let dv = [south[0] - north[0], south[1] - north[1], south[2] - north[2]];
            let u = match unit3(du) {
                Some(u) => u,
                None => return Some(None),
            };
            let mut nor = match unit3(cross3(du, dv)) {
                Some(n) => n,
                None => return Some(None),
            };
            if dot3(nor, center) < 0.0 {
                nor = [-nor[0], -nor[1], -nor[2]];
            }
            let v = match unit3(cross3(nor, u)) {
                Some(v) => v,
                None => return Some(None),
            };
            let coeffs = match graph_fit_3d(&patch, center, u, v, nor, &exps) {
                Some(c) => c,
                None => return Some(None),
            };
            let fit = summarise_3d(&coeffs, &exps, gamma_max, center);
            Some(Some(fit))
        })
        .collect();
    let mut fits = Vec::new();
    let mut skipped = 0usize;
    for r in results.into_iter().flatten() {
        match r {
            Some(f) => fits.push(f),
            None => skipped += 1,
        }
    }
    (fits, skipped)
}

fn graph_fit_3d(
    patch: &[[f64; 3]],
    center: [f64; 3],
    mut u: [f64; 3],
    mut v: [f64; 3],
    mut nor: [f64; 3],
    exps: &[(usize, usize)],
) -> Option<Vec<f64>> {
    let m = patch.len();
    let mut y1 = vec![0.0; m];
    let mut y2 = vec![0.0; m];
    let mut h = vec![0.0; m];
    let mut w = vec![0.0; m];
    for _ in 0..8 {
        let mut rho: f64 = 0.0;
        for (k, q) in patch.iter().enumerate() {
            let d = [q[0] - center[0], q[1] - center[1], q[2] - center[2]];
            y1[k] = dot3(d, u);
            y2[k] = dot3(d, v);
            h[k] = dot3(d, nor);
            rho = rho.max((y1[k] * y1[k] + y2[k] * y2[k]).sqrt());
        }
        if !(rho > 0.0) {
            return None;
        }
        for k in 0..m {
            w[k] = (-2.0 * (y1[k] * y1[k] + y2[k] * y2[k]) / (rho * rho)).exp();
        }
        let coeffs = ls_fit(&y1, &y2, &h, &w, exps, rho)?;
        let g1 = coeff_of(&coeffs, exps, 1, 0);
        let g2 = coeff_of(&coeffs, exps, 0, 1);
        if (g1 * g1 + g2 * g2).sqrt() <= 1e-12 {
            if dot3(nor, center) < 0.0 {
                return None;
            }
            return Some(coeffs);
        }
        let tilted = [
            nor[0] - g1 * u[0] - g2 * v[0],
            nor[1] - g1 * u[1] - g2 * v[1],
            nor[2] - g1 * u[2] - g2 * v[2],
        ];
        nor = unit3(tilted)?;
        let u_proj = [
            u[0] - dot3(u, nor) * nor[0],
            u[1] - dot3(u, nor) * nor[1],
            u[2] - dot3(u, nor) * nor[2],
        ];
        u = unit3(u_proj)?;
        v = unit3(cross3(nor, u))?;
    }
    None
}

fn coeff_of(coeffs: &[f64], exps: &[(usize, usize)], a: usize, b: usize) -> f64 {
    exps.iter()
        .position(|&e| e == (a, b))
        .map(|i| coeffs[i])
        .unwrap_or(0.0)
}

/// Contact sums on a two dimensional tangent plane: sweep unit directions,
/// evaluate the radial derivatives of each homogeneous layer, and track the
/// extremes of the cumulative absolute sums.
fn summarise_3d(
    coeffs: &[f64],
    exps: &[(usize, usize)],
    gamma_max: usize,
    center: [f64; 3],
) -> CenterFit {
    let orders = gamma_max - 1;
    let mut sums = vec![f64::INFINITY; orders];
    let mut sums0 = vec![f64::NEG_INFINITY; orders];
    for s in 0..TANGENT_SWEEP {
        let psi = PI * s as f64 / TANGENT_SWEEP as f64;
        let (sn, cs) = psi.sin_cos();
        let mut acc = 0.0;
        for j in 2..=gamma_max {
            let mut hom = 0.0;
            for (c, &(a, b)) in coeffs.iter().zip(exps) {
                if a + b == j {
                    hom += c * cs.powi(a as i32) * sn.powi(b as i32);
                }
            }
            acc += (FACTORIAL[j] * hom).abs();
            sums[j - 2] = sums[j - 2].min(acc);
            sums0[j - 2] = sums0[j - 2].max(acc);
        }
    }
    let c20 = coeff_of(coeffs, exps, 2, 0);
    let c11 = coeff_of(coeffs, exps, 1, 1);
    let c02 = coeff_of(coeffs, exps, 0, 2);
    // Eigenvalues of the Hessian [[2 c20, c11], [c11, 2 c02]].
    let tr = c20 + c02;
    let det = ((c20 - c02) * (c20 - c02) + c11 * c11).sqrt();
    CenterFit {
        point: center.to_vec(),
        sums,
        sums0,
        sff_min: tr - det,
        sff_max: tr + det,
    }
}
