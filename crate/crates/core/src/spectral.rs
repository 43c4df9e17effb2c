//! Eigenstructure of the principal symbol: tracked eigenvalue branches, a
//! phase-fixed diagonaliser with M^{-1} A_hom M = diag(lambda), the
//! conjugated lower-order symbol, and the dissipation bracket [kappa+,
//! kappa-] fitted from its diagonal.

use crate::error::{Error, Result};
use crate::fit;
use crate::linalg::{
    complex_eigen, cond_spectral, cx, diag, fix_phase, fro_norm, invert, match_by_value, CMat, C,
};
use crate::models::SymbolModel;
use crate::quad;
use crate::zones::{norm, separating_time, ZoneConfig};

/// Relative eigenvalue gap (against |xi|) below which strict hyperbolicity
/// is declared broken.
pub const COLLISION_TOL: f64 = 1e-8;

/// One labelled eigendecomposition of the principal symbol.
#[derive(Clone, Debug)]
pub struct FramePoint {
    pub t: f64,
    pub xi: Vec<f64>,
    /// Real eigenvalues; label order is the frame's branch order.
    pub lambdas: Vec<f64>,
    /// Unit eigenvector columns, anchor entry real positive.
    pub m: CMat,
    pub m_inv: CMat,
}

/// Eigenstructure tracked along a trajectory. `delta` is the uniform
/// relative gap: min over samples of min_{i<j} |lambda_i - lambda_j| / |xi|.
#[derive(Clone, Debug)]
pub struct SpectralFrame {
    pub points: Vec<FramePoint>,
    pub delta: f64,
    pub dim: usize,
}

impl SpectralFrame {
    /// Sample nearest in t; labels elsewhere are matched against it.
    pub fn nearest(&self, t: f64) -> &FramePoint {
        self.points
            .iter()
            .min_by(|a, b| {
                let da = (a.t - t).abs();
                let db = (b.t - t).abs();
                da.partial_cmp(&db).unwrap()
            })
            .expect("frame has at least one point")
    }
}

fn decompose(sym: &SymbolModel, t: f64, xi: &[f64]) -> Result<(Vec<f64>, CMat)> {
    let xin = norm(xi);
    if xin <= 0.0 {
        return Err(Error::invalid(
            "principal-symbol eigenstructure requires xi != 0",
        ));
    }
    let a_hom = sym.eval_principal(t, xi);
    let (vals, vecs) = complex_eigen(&a_hom)?;
    let scale = vals
        .iter()
        .map(|z| z.norm())
        .fold(0.0f64, f64::max)
        .max(xin);
    let imag = vals.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    if imag > 1e-10 * scale {
        return Err(Error::NonRealSpectrum {
            t,
            xi_norm: xin,
            imag,
        });
    }
    Ok((vals.iter().map(|z| z.re).collect(), vecs))
}

fn min_gap(lambdas: &[f64]) -> f64 {
    let d = lambdas.len();
    let mut gap = f64::INFINITY;
    for i in 0..d {
        for j in (i + 1)..d {
            gap = gap.min((lambdas[i] - lambdas[j]).abs());
        }
    }
    gap
}

/// Collision check plus branch labelling shared by the full decomposition
/// and the values-only path.
fn label_order(
    t: f64,
    xin: f64,
    lambdas: &[f64],
    reference: Option<&[f64]>,
) -> Result<Vec<usize>> {
    let d = lambdas.len();
    let gap = min_gap(lambdas);
    if d > 1 && gap < COLLISION_TOL * xin {
        return Err(Error::EigenvalueCollision {
            t,
            xi_norm: xin,
            gap,
            threshold: COLLISION_TOL * xin,
        });
    }
    Ok(match reference {
        Some(prev) => {
            let prev_c: Vec<C> = prev.iter().map(|&l| cx(l, 0.0)).collect();
            let new_c: Vec<C> = lambdas.iter().map(|&l| cx(l, 0.0)).collect();
            match_by_value(&prev_c, &new_c)
        }
        None => {
            let mut idx: Vec<usize> = (0..d).collect();
            idx.sort_by(|&a, &b| lambdas[a].partial_cmp(&lambdas[b]).unwrap());
            idx
        }
    })
}

/// Labelled eigenvalues only: the branch values of `frame_point` without the
/// eigenvector bookkeeping. Validation (real spectrum, collision gap, label
/// continuation) is identical, so averages built on this fail the same way;
/// it just skips the diagonaliser inversion and its certificate, which the
/// values never depend on.
pub fn branch_lambdas(
    sym: &SymbolModel,
    t: f64,
    xi: &[f64],
    reference: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let (lambdas, _) = decompose(sym, t, xi)?;
    let order = label_order(t, norm(xi), &lambdas, reference)?;
    Ok(order.iter().map(|&k| lambdas[k]).collect())
}

/// Labelled, phase-fixed decomposition at one point. With `reference`
/// eigenvalues the labels continue those branches; otherwise ascending.
pub fn frame_point(
    sym: &SymbolModel,
    t: f64,
    xi: &[f64],
    reference: Option<&[f64]>,
) -> Result<FramePoint> {
    let (lambdas, vecs) = decompose(sym, t, xi)?;
    let xin = norm(xi);
    let d = lambdas.len();

    let order = label_order(t, xin, &lambdas, reference)?;
    let lambdas_ord: Vec<f64> = order.iter().map(|&k| lambdas[k]).collect();
    let mut m = CMat::zeros(d, d);
    for (i, &k) in order.iter().enumerate() {
        m.set_column(i, &vecs.column(k));
    }
    fix_phase(&mut m);
    let m_inv = invert(&m, "principal-symbol diagonaliser")?;

    // Certify the decomposition before letting anything downstream use it.
    let a_hom = sym.eval_principal(t, xi);
    let lam_c: Vec<C> = lambdas_ord.iter().map(|&l| cx(l, 0.0)).collect();
    let resid = fro_norm(&(&m_inv * &a_hom * &m - diag(&lam_c)));
    if resid > 1e-10 * fro_norm(&a_hom).max(f64::MIN_POSITIVE) {
        return Err(Error::IllConditioned {
            context: format!("diagonalisation residual {resid:.3e} at t = {t}, |xi| = {xin}"),
            cond: cond_spectral(&m),
        });
    }

    Ok(FramePoint {
        t,
        xi: xi.to_vec(),
        lambdas: lambdas_ord,
        m,
        m_inv,
    })
}

/// Decompositions along a path, branch labels carried by continuity:
/// successive assignments minimise total eigenvalue displacement, the first
/// sample is labelled in ascending order.
pub fn spectral_frame(sym: &SymbolModel, path: &[(f64, Vec<f64>)]) -> Result<SpectralFrame> {
    if path.is_empty() {
        return Err(Error::invalid("spectral frame needs a nonempty path"));
    }
    let mut points = Vec::with_capacity(path.len());
    let mut delta = f64::INFINITY;
    for (t, xi) in path {
        let reference = points.last().map(|p: &FramePoint| p.lambdas.as_slice());
        let p = frame_point(sym, *t, xi, reference)?;
        delta = delta.min(min_gap(&p.lambdas) / norm(xi));
        points.push(p);
    }
    let dim = points[0].lambdas.len();
    Ok(SpectralFrame { points, delta, dim })
}

/// d/dt of the inverse diagonaliser by a 4th-order stencil with step
/// 1e-3 (1+t), labels matched to `center`. Falls back to a one-sided
/// stencil when t - 2h would leave the time domain.
fn d_dt_m_inv(sym: &SymbolModel, center: &FramePoint) -> Result<CMat> {
    let t = center.t;
    let h = 1e-3 * (1.0 + t);
    let d = center.lambdas.len();
    let nodes: &[(f64, f64)] = if t - 2.0 * h >= 0.0 {
        &[(-2.0, 1.0), (-1.0, -8.0), (1.0, 8.0), (2.0, -1.0)]
    } else {
        &[
            (0.0, -25.0),
            (1.0, 48.0),
            (2.0, -36.0),
            (3.0, 16.0),
            (4.0, -3.0),
        ]
    };
    let mut acc = CMat::zeros(d, d);
    for &(off, w) in nodes {
        let p = frame_point(sym, t + off * h, &center.xi, Some(&center.lambdas))?;
        acc += p.m_inv * cx(w, 0.0);
    }
    Ok(acc * cx(1.0 / (12.0 * h), 0.0))
}

/// Full conjugated lower-order symbol
/// R0 = M^{-1} (A - A_hom) M + (D_t M^{-1}) M  with D_t = -i d/dt.
pub fn conjugated_lower(
    sym: &SymbolModel,
    frame: &SpectralFrame,
    t: f64,
    xi: &[f64],
) -> Result<CMat> {
    let near = frame.nearest(t);
    if (near.t - t).abs() > 1.0 + t {
        return Err(Error::FrameTooSparse { t, nearest: near.t });
    }
    let center = frame_point(sym, t, xi, Some(&near.lambdas))?;
    let dt_m_inv = d_dt_m_inv(sym, &center)? * cx(0.0, -1.0);
    let lower = sym.eval_lower(t, xi);
    Ok(&center.m_inv * lower * &center.m + dt_m_inv * &center.m)
}

/// Diagonal part of the conjugated lower-order symbol. No truncation is
/// applied: the full diagonal is used, and any integrable off-class part
/// lands in the fitted offsets downstream.
pub fn subprincipal(sym: &SymbolModel, frame: &SpectralFrame, t: f64, xi: &[f64]) -> Result<CMat> {
    let r0 = conjugated_lower(sym, frame, t, xi)?;
    let d = r0.nrows();
    let mut f0 = CMat::zeros(d, d);
    for i in 0..d {
        f0[(i, i)] = r0[(i, i)];
    }
    Ok(f0)
}

/// Two-sided affine bracket for the integrated subprincipal dissipation:
/// kappa_plus log((1+t)/(1+s)) + C_plus <= Im int_s^t (F0)_jj
///   <= kappa_minus log((1+t)/(1+s)) + C_minus.
#[derive(Clone, Debug)]
pub struct KappaEstimate {
    pub kappa_plus: f64,
    pub kappa_minus: f64,
    pub c_plus: f64,
    pub c_minus: f64,
    /// Raw extreme ratios y / x over the sampled pairs, before envelope
    /// fitting; pairs shorter than one octave in (1+t) are excluded when
    /// longer ones exist.
    pub ratio_min: f64,
    pub ratio_max: f64,
    /// (s, t, xi) attaining ratio_min and ratio_max, in that order.
    pub witnesses: Vec<(f64, f64, Vec<f64>)>,
}

/// Fits the bracket over a set of (s, t, xi) pairs with t >= s >= t_xi.
/// Envelope construction: per distinct log-ratio x, the min and max of
/// Im int_s^t (F0)_jj over all pairs and diagonal entries; least-squares
/// lines through the two envelopes give (kappa_plus, C_plus) and
/// (kappa_minus, C_minus).
pub fn estimate_kappa(
    sym: &SymbolModel,
    cfg: &ZoneConfig,
    grid: &[(f64, f64, Vec<f64>)],
) -> Result<KappaEstimate> {
    if grid.is_empty() {
        return Err(Error::invalid("kappa estimation needs a nonempty grid"));
    }
    let d = sym.dim;

    // (x, y, index into grid)
    let mut pts: Vec<(f64, f64, usize)> = Vec::new();
    for (idx, (s, t, xi)) in grid.iter().enumerate() {
        if !(t >= s) {
            return Err(Error::invalid(format!(
                "kappa grid pair has t = {t} < s = {s}"
            )));
        }
        let t_xi = separating_time(xi, cfg);
        if *s < t_xi {
            return Err(Error::OutsideZone {
                t: *s,
                xi_norm: norm(xi),
                zone: "hyperbolic",
                n: cfg.n,
            });
        }
        let frame = spectral_frame(sym, &[(*s, xi.clone()), (*t, xi.clone())])?;
        let x = ((1.0 + t) / (1.0 + s)).ln();
        for j in 0..d {
            let mut inner: Option<Error> = None;
            let y = quad::integrate(
                |tau| match subprincipal(sym, &frame, tau, xi) {
                    Ok(f0) => f0[(j, j)].im,
                    Err(e) => {
                        inner.get_or_insert(e);
                        0.0
                    }
                },
                *s,
                *t,
                1e-11 * (t - s).max(1.0),
            );
            if let Some(e) = inner {
                return Err(e);
            }
            pts.push((x, y?, idx));
        }
    }

    // Group by distinct x to build the two envelopes.
    let mut xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * a.abs().max(1.0));
    let mut lo = vec![f64::INFINITY; xs.len()];
    let mut hi = vec![f64::NEG_INFINITY; xs.len()];
    for &(x, y, _) in &pts {
        let k = xs
            .iter()
            .position(|&gx| (gx - x).abs() <= 1e-9 * gx.abs().max(1.0))
            .unwrap();
        lo[k] = lo[k].min(y);
        hi[k] = hi[k].max(y);
    }

    let (mut kappa_plus, c_plus, mut kappa_minus, c_minus);
    if xs.len() >= 2 {
        let f_lo = fit::line_fit(&xs, &lo)?;
        let f_hi = fit::line_fit(&xs, &hi)?;
        kappa_plus = f_lo.slope;
        c_plus = f_lo.intercept;
        kappa_minus = f_hi.slope;
        c_minus = f_hi.intercept;
    } else {
        let x = xs[0].max(f64::MIN_POSITIVE);
        kappa_plus = lo[0] / x;
        kappa_minus = hi[0] / x;
        c_plus = 0.0;
        c_minus = 0.0;
    }
    // The envelopes can cross within fit noise when the true bracket is a
    // single line; collapse to the mean so the bracket stays ordered.
    if kappa_plus > kappa_minus {
        let mid = 0.5 * (kappa_plus + kappa_minus);
        kappa_plus = mid;
        kappa_minus = mid;
    }

    // Raw ratio extremes over pairs spanning at least one octave (all pairs
    // if none do), with their witnesses.
    let long: Vec<&(f64, f64, usize)> = {
        let l: Vec<_> = pts.iter().filter(|p| p.0 >= std::f64::consts::LN_2).collect();
        if l.is_empty() {
            pts.iter().collect()
        } else {
            l
        }
    };
    let mut ratio_min = f64::INFINITY;
    let mut ratio_max = f64::NEG_INFINITY;
    let (mut arg_min, mut arg_max) = (0usize, 0usize);
    for p in long {
        let r = p.1 / p.0.max(f64::MIN_POSITIVE);
        if r < ratio_min {
            ratio_min = r;
            arg_min = p.2;
        }
        if r > ratio_max {
            ratio_max = r;
            arg_max = p.2;
        }
    }
    let witnesses = vec![grid[arg_min].clone(), grid[arg_max].clone()];

    Ok(KappaEstimate {
        kappa_plus,
        kappa_minus,
        c_plus,
        c_minus,
        ratio_min,
        ratio_max,
        witnesses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::{CoeffMatrix, ScalarCoefficient};
    use crate::models::{build_first_order, build_klein_gordon, build_wave_dissipation};

    fn wave_model(b: ScalarCoefficient) -> SymbolModel {
        build_wave_dissipation(b).unwrap()
    }

    #[test]
    fn frame_on_symmetric_offdiagonal_symbol() {
        let sym = wave_model(ScalarCoefficient::power(0.5, -1.0));
        let path: Vec<(f64, Vec<f64>)> =
            (0..20).map(|k| (0.5 * k as f64, vec![3.0])).collect();
        let frame = spectral_frame(&sym, &path).unwrap();
        assert!((frame.delta - 2.0).abs() < 1e-10);
        for p in &frame.points {
            assert!((p.lambdas[0] + 3.0).abs() < 1e-10);
            assert!((p.lambdas[1] - 3.0).abs() < 1e-10);
            let gram = p.m.adjoint() * &p.m;
            assert!(fro_norm(&(gram - CMat::identity(2, 2))) < 1e-10);
        }
    }

    #[test]
    fn frame_on_diagonal_symbol() {
        let sym = SymbolModel::custom(
            2,
            1,
            |_t, xi: &[f64]| diag(&[cx(xi[0], 0.0), cx(-xi[0], 0.0)]),
            |_t, xi: &[f64]| diag(&[cx(xi[0], 0.0), cx(-xi[0], 0.0)]),
        );
        let frame = spectral_frame(&sym, &[(1.0, vec![2.0])]).unwrap();
        let p = &frame.points[0];
        assert!((frame.delta - 2.0).abs() < 1e-12);
        // Ascending labels swap the native order; M is the swap permutation.
        assert!((p.lambdas[0] + 2.0).abs() < 1e-12);
        assert!((p.m[(1, 0)] - cx(1.0, 0.0)).norm() < 1e-12);
        assert!((p.m[(0, 1)] - cx(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn near_collision_is_reported() {
        let sym = SymbolModel::custom(
            2,
            1,
            |_t, xi: &[f64]| {
                let x = xi[0].abs();
                CMat::from_row_slice(2, 2, &[cx(0.0, 0.0), cx(x, 0.0), cx(1e-20 * x, 0.0), cx(0.0, 0.0)])
            },
            |_t, xi: &[f64]| {
                let x = xi[0].abs();
                CMat::from_row_slice(2, 2, &[cx(0.0, 0.0), cx(x, 0.0), cx(1e-20 * x, 0.0), cx(0.0, 0.0)])
            },
        );
        let err = spectral_frame(&sym, &[(0.0, vec![1.0])]).unwrap_err();
        assert!(matches!(err, Error::EigenvalueCollision { .. }), "{err}");
    }

    #[test]
    fn non_real_spectrum_is_reported() {
        let sym = SymbolModel::custom(
            2,
            1,
            |_t, xi: &[f64]| {
                let x = xi[0];
                CMat::from_row_slice(2, 2, &[cx(0.0, 0.0), cx(x, 0.0), cx(-x, 0.0), cx(0.0, 0.0)])
            },
            |_t, xi: &[f64]| {
                let x = xi[0];
                CMat::from_row_slice(2, 2, &[cx(0.0, 0.0), cx(x, 0.0), cx(-x, 0.0), cx(0.0, 0.0)])
            },
        );
        let err = spectral_frame(&sym, &[(0.0, vec![1.0])]).unwrap_err();
        assert!(matches!(err, Error::NonRealSpectrum { .. }), "{err}");
    }

    #[test]
    fn diagonaliser_is_homogeneous_in_xi() {
        let sym = wave_model(ScalarCoefficient::power(1.5, -1.0));
        for rho in [2.0, 10.0, 250.0] {
            let base = frame_point(&sym, 3.0, &[1.5], None).unwrap();
            let scaled = frame_point(&sym, 3.0, &[1.5 * rho], None).unwrap();
            assert!(fro_norm(&(&base.m - &scaled.m)) < 1e-10);
        }
    }

    /// Self-adjoint principal part with rotating eigenvectors: the gauge
    /// term diag((D_t M^*) M) must stay real, so F0 is real-diagonal here
    /// (the lower-order part is zero).
    #[test]
    fn unitary_frame_gauge_term_is_real() {
        let a_hom = |t: f64, xi: &[f64]| {
            let phi = 0.4 / (1.0 + t);
            let (c, s) = (phi.cos(), phi.sin());
            // U diag(1,-1) U^H with U = [[c, i s], [i s, c]].
            let u = CMat::from_row_slice(2, 2, &[cx(c, 0.0), cx(0.0, s), cx(0.0, s), cx(c, 0.0)]);
            let d0 = diag(&[cx(xi[0].abs(), 0.0), cx(-xi[0].abs(), 0.0)]);
            &u * d0 * u.adjoint()
        };
        let sym = SymbolModel::custom(2, 1, a_hom, a_hom);
        let path: Vec<(f64, Vec<f64>)> = (0..12).map(|k| (k as f64, vec![4.0])).collect();
        let frame = spectral_frame(&sym, &path).unwrap();
        for &t in &[0.5, 2.0, 7.5] {
            let f0 = subprincipal(&sym, &frame, t, &[4.0]).unwrap();
            for j in 0..2 {
                assert!(f0[(j, j)].im.abs() < 1e-8, "Im F0 = {}", f0[(j, j)].im);
            }
        }
    }

    #[test]
    fn wave_subprincipal_is_half_dissipation() {
        // Oscillating scale-invariant damping.
        let b = ScalarCoefficient::new(
            |t: f64| cx((0.5 + 0.25 * (3.0 * (1.0 + t).ln() + 0.7).sin()) / (1.0 + t), 0.0),
            1.0,
        );
        let sym = wave_model(b.clone());
        let frame = spectral_frame(&sym, &[(1.0, vec![2.0]), (50.0, vec![2.0])]).unwrap();
        for &t in &[1.0, 4.0, 17.0, 42.0] {
            let f0 = subprincipal(&sym, &frame, t, &[2.0]).unwrap();
            let want = cx(0.0, 0.5 * b.value_re(t));
            for j in 0..2 {
                assert!((f0[(j, j)] - want).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn klein_gordon_subprincipal_decays_two_orders() {
        let sym = build_klein_gordon(ScalarCoefficient::constant(1.0), 1.0).unwrap();
        let xi = vec![5.0];
        let frame = spectral_frame(&sym, &[(10.0, xi.clone()), (1e4, xi.clone())]).unwrap();
        let ts = [1e2, 1e3, 1e4];
        let vals: Vec<f64> = ts
            .iter()
            .map(|&t| {
                let f0 = subprincipal(&sym, &frame, t, &xi).unwrap();
                f0[(0, 0)].norm().max(f0[(1, 1)].norm())
            })
            .collect();
        let fitted = fit::loglog_slope(&ts.map(|t| 1.0 + t), &vals).unwrap();
        assert!(fitted.slope < -1.8, "slope {}", fitted.slope);
        assert!(vals[0] < 1.0 / 5.0 * 1e-3);
    }

    #[test]
    fn constant_symmetric_system_has_zero_subprincipal() {
        let a1 = CoeffMatrix::constant(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let sym = build_first_order(vec![a1], CoeffMatrix::zeros(2, 2)).unwrap();
        let frame = spectral_frame(&sym, &[(0.0, vec![1.0]), (10.0, vec![1.0])]).unwrap();
        let f0 = subprincipal(&sym, &frame, 5.0, &[1.0]).unwrap();
        assert!(fro_norm(&f0) < 1e-10);

        let cfg = ZoneConfig::default();
        let grid = vec![(1.0, 5.0, vec![2.0]), (2.0, 60.0, vec![2.0])];
        let est = estimate_kappa(&sym, &cfg, &grid).unwrap();
        assert!(est.kappa_plus.abs() < 1e-9);
        assert!(est.kappa_minus.abs() < 1e-9);
    }

    /// b = mu0/(1+t) has Im int F0_jj = (mu0/2) log((1+t)/(1+s)) exactly,
    /// so the bracket collapses onto slope mu0/2 with zero offsets.
    #[test]
    fn kappa_closed_form_power_dissipation() {
        let sym = wave_model(ScalarCoefficient::power(2.0, -1.0));
        let cfg = ZoneConfig::default();
        let grid = vec![
            (1.0, 3.0, vec![1.0]),
            (1.0, 10.0, vec![1.0]),
            (2.0, 40.0, vec![1.0]),
            (5.0, 200.0, vec![1.0]),
        ];
        let est = estimate_kappa(&sym, &cfg, &grid).unwrap();
        assert!((est.kappa_plus - 1.0).abs() < 1e-6, "{}", est.kappa_plus);
        assert!((est.kappa_minus - 1.0).abs() < 1e-6, "{}", est.kappa_minus);
        assert!(est.c_plus.abs() < 1e-6);
        assert!(est.c_minus.abs() < 1e-6);
        assert!(est.kappa_plus <= est.kappa_minus);
    }

    /// First-order system whose dissipative limit is normal with eigenvector
    /// frame aligned to the principal part: the bracket endpoints are the
    /// eigenvalues of the skew part of B_inf.
    #[test]
    fn kappa_bracket_matches_skew_spectrum() {
        // B_inf = M diag(0.4 i, 1.1 i) M^H, M = (1/sqrt2)[[1,1],[-1,1]].
        let diag_entry = |s: f64| ScalarCoefficient::power(s, -1.0).scaled(cx(0.0, 1.0));
        let b = CoeffMatrix::from_entries(
            2,
            2,
            vec![
                diag_entry(0.75),
                diag_entry(0.35),
                diag_entry(0.35),
                diag_entry(0.75),
            ],
        );
        let a1 = CoeffMatrix::constant(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let sym = build_first_order(vec![a1], b).unwrap();
        assert!((sym.predictions.kappa_plus.unwrap() - 0.4).abs() < 1e-10);
        assert!((sym.predictions.kappa_minus.unwrap() - 1.1).abs() < 1e-10);

        let cfg = ZoneConfig::default();
        let grid = vec![
            (1.0, 8.0, vec![1.0]),
            (1.0, 30.0, vec![1.0]),
            (3.0, 100.0, vec![1.0]),
            (2.0, 300.0, vec![3.0]),
        ];
        let est = estimate_kappa(&sym, &cfg, &grid).unwrap();
        assert!((est.kappa_plus - 0.4).abs() < 1e-6, "{}", est.kappa_plus);
        assert!((est.kappa_minus - 1.1).abs() < 1e-6, "{}", est.kappa_minus);
    }

    /// Refining the pair grid may only widen the bracket, up to the grid
    /// tolerance of the fit.
    #[test]
    fn kappa_bracket_grows_under_refinement() {
        let b = ScalarCoefficient::new(
            |t: f64| cx((0.5 + 0.2 * (1.0 + t).ln().sin()) / (1.0 + t), 0.0),
            1.0,
        );
        let sym = wave_model(b);
        let cfg = ZoneConfig::default();
        let coarse = vec![
            (1.0, 30.0, vec![1.0]),
            (1.0, 300.0, vec![1.0]),
            (2.0, 2000.0, vec![1.0]),
        ];
        let mut fine = coarse.clone();
        fine.extend([
            (1.0, 10.0, vec![1.0]),
            (5.0, 500.0, vec![2.0]),
            (1.0, 10000.0, vec![2.0]),
        ]);
        let a = estimate_kappa(&sym, &cfg, &coarse).unwrap();
        let b = estimate_kappa(&sym, &cfg, &fine).unwrap();
        // The raw ratio bracket obeys the superset property exactly.
        assert!(b.ratio_min <= a.ratio_min + 1e-12);
        assert!(b.ratio_max >= a.ratio_max - 1e-12);
        // The fitted envelope slopes move by at most the grid tolerance.
        let tol = 0.1;
        assert!(b.kappa_plus <= a.kappa_plus + tol, "{} vs {}", b.kappa_plus, a.kappa_plus);
        assert!(b.kappa_minus >= a.kappa_minus - tol, "{} vs {}", b.kappa_minus, a.kappa_minus);
    }
}
