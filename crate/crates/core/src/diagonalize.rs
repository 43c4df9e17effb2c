//! Hyperbolic-zone diagonalisation hierarchy. Starting from the conjugated
//! lower-order symbol R0, each step peels one more order off the remainder:
//! an elementary transform I + P with P_ij = (R_{k-1})_ij / (lambda_j -
//! lambda_i) moves the off-diagonal part of R_{k-1} into a remainder R_k
//! that is one power of |xi| smaller and one power of (1+t) faster, while
//! the diagonal accumulates into F_{k-1}. The remainder is always evaluated
//! from the operator identity itself, so the conjugation is exact up to
//! stencil error in D_t.

use crate::error::{Error, Result};
use crate::fit;
use crate::linalg::{cx, diag, fro_norm, invert, spectral_norm, CMat, C};
use crate::models::SymbolModel;
use crate::spectral::{conjugated_lower, frame_point, SpectralFrame};
use crate::zones::{norm, zone_of, Zone, ZoneConfig};

/// Deepest supported hierarchy level. Level k costs k stacked t-derivatives
/// of the inputs and every family here has kappa_minus = kappa_plus, so two
/// levels suffice with one in reserve.
pub const MAX_LEVEL: usize = 3;

/// The hierarchy evaluated at one phase-space point.
#[derive(Clone, Debug)]
pub struct DiagSample {
    pub t: f64,
    pub xi: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// Cumulative transform N_k = (I + P_1) ... (I + P_k) and its inverse.
    pub n_cum: CMat,
    pub n_cum_inv: CMat,
    /// Accumulated diagonal F_{k-1} = diag R_0 + ... + diag R_{k-1}.
    pub f_prev: CMat,
    /// Remainder after k steps.
    pub r_k: CMat,
    /// Largest elementary correction norm over the levels; the hierarchy is
    /// trustworthy only while this stays well below 1.
    pub max_p_norm: f64,
}

/// One hierarchy level over a set of samples.
#[derive(Clone, Debug)]
pub struct DiagStep {
    pub k: usize,
    pub samples: Vec<DiagSample>,
}

/// Intermediate state: everything the recursion knows at one point.
struct Levels {
    lambdas: Vec<f64>,
    /// R_0 .. R_k.
    r: Vec<CMat>,
    /// Elementary transforms I + P_j for j = 1..k.
    n_elem: Vec<CMat>,
    max_p_norm: f64,
}

fn off_diagonal_quotient(r_prev: &CMat, lambdas: &[f64], t: f64, xin: f64) -> Result<CMat> {
    let d = lambdas.len();
    let mut p = CMat::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            if i != j {
                p[(i, j)] = r_prev[(i, j)] / cx(lambdas[j] - lambdas[i], 0.0);
            }
        }
    }
    let pn = spectral_norm(&p);
    if pn >= 1.0 {
        return Err(Error::invalid(format!(
            "elementary correction |P| = {pn:.3} >= 1 at t = {t}, |xi| = {xin}; \
             the sample sits too close to the zone boundary, rerun with a larger N"
        )));
    }
    Ok(p)
}

/// Elementary transform N_j = I + P_j at (t, xi); needs the hierarchy up to
/// level j-1 at that point.
fn elementary_at(
    sym: &SymbolModel,
    frame: &SpectralFrame,
    t: f64,
    xi: &[f64],
    j: usize,
) -> Result<CMat> {
    let lv = levels_at(sym, frame, t, xi, j - 1)?;
    let p = off_diagonal_quotient(lv.r.last().unwrap(), &lv.lambdas, t, norm(xi))?;
    Ok(CMat::identity(p.nrows(), p.ncols()) + p)
}

/// d/dt of the elementary transform by the 4th-order stencil with step
/// 1e-3 (1+t) (one-sided at the t = 0 end).
fn d_dt_elementary(
    sym: &SymbolModel,
    frame: &SpectralFrame,
    t: f64,
    xi: &[f64],
    j: usize,
    dim: usize,
) -> Result<CMat> {
    let h = 1e-3 * (1.0 + t);
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
    let mut acc = CMat::zeros(dim, dim);
    for &(off, w) in nodes {
        acc += elementary_at(sym, frame, t + off * h, xi, j)? * cx(w, 0.0);
    }
    Ok(acc * cx(1.0 / (12.0 * h), 0.0))
}

/// The hierarchy at one point up to level k. Each remainder comes from the
/// exact per-level identity
///   (D_t - D - F_{j-2} - R_{j-1}) N_j = N_j (D_t - D - F_{j-1} - R_j),
/// solved for R_j:
///   R_j = N_j^{-1} (R_{j-1} N_j + [D + F_{j-2}, N_j] - N_j diag R_{j-1} - D_t N_j),
/// which telescopes into the global identity against R_0 under the
/// cumulative product of the N_j.
fn levels_at(
    sym: &SymbolModel,
    frame: &SpectralFrame,
    t: f64,
    xi: &[f64],
    k: usize,
) -> Result<Levels> {
    let near = frame.nearest(t);
    let center = frame_point(sym, t, xi, Some(&near.lambdas))?;
    let d = center.lambdas.len();
    let r0 = conjugated_lower(sym, frame, t, xi)?;
    let mut lv = Levels {
        lambdas: center.lambdas,
        r: vec![r0],
        n_elem: Vec::new(),
        max_p_norm: 0.0,
    };
    let xin = norm(xi);
    for j in 1..=k {
        let r_prev = lv.r[j - 1].clone();
        let p = off_diagonal_quotient(&r_prev, &lv.lambdas, t, xin)?;
        lv.max_p_norm = lv.max_p_norm.max(spectral_norm(&p));
        let n_j = CMat::identity(d, d) + &p;
        let n_j_inv = invert(&n_j, "elementary diagonalisation transform")?;
        let dt_n_j = d_dt_elementary(sym, frame, t, xi, j, d)? * cx(0.0, -1.0);

        // D + F_{j-2}: the diagonal the commutator acts against.
        let lam_c: Vec<C> = lv.lambdas.iter().map(|&l| cx(l, 0.0)).collect();
        let mut d_eff = diag(&lam_c);
        for r in lv.r.iter().take(j - 1) {
            for i in 0..d {
                d_eff[(i, i)] += r[(i, i)];
            }
        }
        let mut f_step = CMat::zeros(d, d);
        for i in 0..d {
            f_step[(i, i)] = r_prev[(i, i)];
        }

        let bracket =
            &r_prev * &n_j + &d_eff * &n_j - &n_j * &d_eff - &n_j * f_step - dt_n_j;
        let r_j = n_j_inv * bracket;
        lv.r.push(r_j);
        lv.n_elem.push(n_j);
    }
    Ok(lv)
}

/// Evaluates the hierarchy at level k over the given samples. Each sample
/// must have xi != 0 and sit far enough into the hyperbolic zone that every
/// elementary correction satisfies |P| < 1 (checked).
pub fn diag_step(
    sym: &SymbolModel,
    frame: &SpectralFrame,
    k: usize,
    samples: &[(f64, Vec<f64>)],
) -> Result<DiagStep> {
    if k == 0 || k > MAX_LEVEL {
        return Err(Error::invalid(format!(
            "hierarchy level k = {k} outside 1..={MAX_LEVEL}"
        )));
    }
    let mut out = Vec::with_capacity(samples.len());
    for (t, xi) in samples {
        let lv = levels_at(sym, frame, *t, xi, k)?;
        let d = lv.lambdas.len();
        let mut n_cum = CMat::identity(d, d);
        for n in &lv.n_elem {
            n_cum = n_cum * n;
        }
        let n_cum_inv = invert(&n_cum, "cumulative diagonalisation transform")?;
        let mut f_prev = CMat::zeros(d, d);
        for r in lv.r.iter().take(k) {
            for i in 0..d {
                f_prev[(i, i)] += r[(i, i)];
            }
        }
        out.push(DiagSample {
            t: *t,
            xi: xi.clone(),
            lambdas: lv.lambdas,
            n_cum,
            n_cum_inv,
            f_prev,
            r_k: lv.r[k].clone(),
            max_p_norm: lv.max_p_norm,
        });
    }
    Ok(DiagStep { k, samples: out })
}

/// Residual of the global operator identity
///   (D_t - D - R0) N_k - N_k (D_t - D - F_{k-1} - R_k)
/// at a sample, as a matrix norm. The D_t terms cancel outside of D_t N_k,
/// which is evaluated by the stencil.
pub fn identity_residual(
    sym: &SymbolModel,
    frame: &SpectralFrame,
    sample: &DiagSample,
) -> Result<f64> {
    let t = sample.t;
    let xi = &sample.xi;
    let d = sample.lambdas.len();
    let k = {
        // Recover k from the cumulative data: number of elementary levels.
        // The caller's DiagStep knows it; recomputing keeps the signature
        // small and the check self-contained.
        let mut k = 1;
        while k < MAX_LEVEL {
            let lv = levels_at(sym, frame, t, xi, k)?;
            if fro_norm(&(&lv.r[k] - &sample.r_k)) <= 1e-12 * fro_norm(&sample.r_k).max(1.0) {
                break;
            }
            k += 1;
        }
        k
    };

    let h = 1e-3 * (1.0 + t);
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
    let mut dt_n = CMat::zeros(d, d);
    for &(off, w) in nodes {
        let lv = levels_at(sym, frame, t + off * h, xi, k)?;
        let mut n_cum = CMat::identity(d, d);
        for n in &lv.n_elem {
            n_cum = n_cum * n;
        }
        dt_n += n_cum * cx(w, 0.0);
    }
    dt_n *= cx(1.0 / (12.0 * h), 0.0);
    let dt_n = dt_n * cx(0.0, -1.0);

    let lam_c: Vec<C> = sample.lambdas.iter().map(|&l| cx(l, 0.0)).collect();
    let d_mat = diag(&lam_c);
    let r0 = conjugated_lower(sym, frame, t, xi)?;
    let lhs = dt_n.clone() - &d_mat * &sample.n_cum - &r0 * &sample.n_cum;
    let rhs = -(&sample.n_cum * &d_mat) - &sample.n_cum * &sample.f_prev
        - &sample.n_cum * &sample.r_k;
    Ok(fro_norm(&(lhs - rhs)))
}

/// Fitted two-variable power law |a(t, xi)| ~ C |xi|^{m1} (1+t)^{-m2}.
#[derive(Clone, Debug)]
pub struct ClassFit {
    pub m1: f64,
    pub m2: f64,
    /// Envelope constant: every sample satisfies the bound with this C.
    pub c: f64,
    /// Largest log-scale deviation from the fitted plane.
    pub residual: f64,
    /// Zone constant the grid was checked against.
    pub zone_n: f64,
}

/// Certifies a symbol class on hyperbolic-zone samples by regressing
/// log |a| on log |xi| and log (1+t). The grid must span at least two
/// decades in both variables and stay inside the hyperbolic zone.
pub fn fit_symbol_class(
    mut sampler: impl FnMut(f64, &[f64]) -> Result<CMat>,
    cfg: &ZoneConfig,
    grid: &[(f64, Vec<f64>)],
) -> Result<ClassFit> {
    let mut lx = Vec::with_capacity(grid.len());
    let mut lt = Vec::with_capacity(grid.len());
    let mut ly = Vec::with_capacity(grid.len());
    let mut skipped = 0usize;
    for (t, xi) in grid {
        let xin = norm(xi);
        if zone_of(*t, xin, cfg) != Zone::Hyperbolic {
            return Err(Error::OutsideZone {
                t: *t,
                xi_norm: xin,
                zone: "hyperbolic",
                n: cfg.n,
            });
        }
        let v = spectral_norm(&sampler(*t, xi)?);
        if v <= 0.0 {
            skipped += 1;
            continue;
        }
        lx.push(xin.ln());
        lt.push((1.0 + t).ln());
        ly.push(v.ln());
    }
    if skipped * 2 > grid.len() {
        return Err(Error::DegenerateGrid {
            context: format!("symbol-class fit: {skipped} of {} samples vanish", grid.len()),
        });
    }
    let decades = |v: &[f64]| {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (hi - lo) / std::f64::consts::LN_10
    };
    if lx.is_empty() || decades(&lx) < 2.0 - 1e-9 || decades(&lt) < 2.0 - 1e-9 {
        return Err(Error::DegenerateGrid {
            context: format!(
                "symbol-class fit needs >= 2 decades in |xi| and 1+t; got {:.2} and {:.2}",
                if lx.is_empty() { 0.0 } else { decades(&lx) },
                if lt.is_empty() { 0.0 } else { decades(&lt) },
            ),
        });
    }
    let plane = fit::plane_fit(&lx, &lt, &ly)?;
    Ok(ClassFit {
        m1: plane.a,
        m2: -plane.b,
        c: (plane.intercept + plane.max_residual).exp(),
        residual: plane.max_residual,
        zone_n: cfg.n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::{CoeffMatrix, ScalarCoefficient};
    use crate::models::{build_first_order, build_wave_dissipation};
    use crate::ode;
    use crate::spectral::spectral_frame;

    fn wave(mu0: f64) -> SymbolModel {
        build_wave_dissipation(ScalarCoefficient::power(mu0, -1.0)).unwrap()
    }

    fn frame_for(sym: &SymbolModel, xi: &[f64], t_max: f64) -> SpectralFrame {
        let path: Vec<(f64, Vec<f64>)> = crate::quad::log_grid(1.0, 1.0 + t_max, 9)
            .into_iter()
            .map(|u| (u - 1.0, xi.to_vec()))
            .collect();
        spectral_frame(sym, &path).unwrap()
    }

    #[test]
    fn zero_lower_order_part_is_fixed_point() {
        let a1 = CoeffMatrix::constant(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let sym = build_first_order(vec![a1], CoeffMatrix::zeros(2, 2)).unwrap();
        let frame = frame_for(&sym, &[3.0], 100.0);
        let step = diag_step(&sym, &frame, 1, &[(2.0, vec![3.0]), (50.0, vec![3.0])]).unwrap();
        for s in &step.samples {
            assert!(fro_norm(&(&s.n_cum - CMat::identity(2, 2))) < 1e-10);
            assert!(fro_norm(&s.f_prev) < 1e-10);
            assert!(fro_norm(&s.r_k) < 1e-9);
        }
    }

    #[test]
    fn diagonal_lower_order_part_moves_into_f() {
        // Principal part diag(xi, -xi); the lower-order part stays diagonal
        // under the (permutation) diagonaliser, so N = I and R_1 = 0.
        let full = |t: f64, xi: &[f64]| {
            let l = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![
                cx(xi[0], 0.0) + cx(0.0, 0.4 / (1.0 + t)),
                cx(-xi[0], 0.0) + cx(0.0, 1.1 / (1.0 + t)),
            ]));
            l
        };
        let principal =
            |_t: f64, xi: &[f64]| diag(&[cx(xi[0], 0.0), cx(-xi[0], 0.0)]);
        let sym = SymbolModel::custom(2, 1, full, principal);
        let frame = frame_for(&sym, &[2.0], 100.0);
        let step = diag_step(&sym, &frame, 1, &[(5.0, vec![2.0])]).unwrap();
        let s = &step.samples[0];
        assert!(fro_norm(&(&s.n_cum - CMat::identity(2, 2))) < 1e-10);
        assert!(fro_norm(&s.r_k) < 1e-9);
        // F0 carries the two dissipation rates (order swapped with the
        // ascending eigenvalue labels).
        let f: Vec<f64> = (0..2).map(|i| s.f_prev[(i, i)].im * 6.0).collect();
        assert!((f[0] - 1.1).abs() < 1e-8 && (f[1] - 0.4).abs() < 1e-8, "{f:?}");
    }

    #[test]
    fn first_remainder_is_one_order_smaller() {
        let sym = wave(1.0);
        let cfg = ZoneConfig::default();
        let mut grid = Vec::new();
        for &t in &[0.0, 1.0, 4.0, 10.0, 30.0, 100.0] {
            for &x in &[10.0, 30.0, 100.0, 300.0, 1000.0] {
                grid.push((t, vec![x]));
            }
        }
        let frame = frame_for(&sym, &[10.0], 100.0);
        let fitted = fit_symbol_class(
            |t, xi| {
                let step = diag_step(&sym, &frame, 1, &[(t, xi.to_vec())])?;
                Ok(step.samples[0].r_k.clone())
            },
            &cfg,
            &grid,
        )
        .unwrap();
        assert!((fitted.m1 + 1.0).abs() < 0.1, "m1 = {}", fitted.m1);
        assert!((fitted.m2 - 2.0).abs() < 0.1, "m2 = {}", fitted.m2);
    }

    #[test]
    fn second_remainder_is_two_orders_smaller() {
        let sym = wave(1.0);
        let cfg = ZoneConfig::default();
        let mut grid = Vec::new();
        for &t in &[0.0, 1.0, 4.0, 10.0, 30.0, 100.0] {
            for &x in &[10.0, 30.0, 100.0, 300.0, 1000.0] {
                grid.push((t, vec![x]));
            }
        }
        let frame = frame_for(&sym, &[10.0], 100.0);
        let fitted = fit_symbol_class(
            |t, xi| {
                let step = diag_step(&sym, &frame, 2, &[(t, xi.to_vec())])?;
                Ok(step.samples[0].r_k.clone())
            },
            &cfg,
            &grid,
        )
        .unwrap();
        assert!((fitted.m1 + 2.0).abs() < 0.15, "m1 = {}", fitted.m1);
        assert!((fitted.m2 - 3.0).abs() < 0.15, "m2 = {}", fitted.m2);
    }

    #[test]
    fn elementary_correction_shrinks_like_inverse_phase() {
        let sym = wave(1.0);
        let frame = frame_for(&sym, &[10.0], 1000.0);
        for &(t, x) in &[(0.0, 10.0), (3.0, 25.0), (40.0, 10.0), (100.0, 400.0)] {
            let step = diag_step(&sym, &frame, 1, &[(t, vec![x])]).unwrap();
            let s = &step.samples[0];
            let bound = 1.0 / (x * (1.0 + t));
            let dev = spectral_norm(&(&s.n_cum - CMat::identity(2, 2)));
            assert!(dev <= bound, "|N1 - I| = {dev} vs 1/(|xi|(1+t)) = {bound}");
        }
    }

    #[test]
    fn oversized_correction_asks_for_larger_zone_constant() {
        let sym = wave(50.0);
        let frame = frame_for(&sym, &[1.0], 10.0);
        let err = diag_step(&sym, &frame, 1, &[(0.0, vec![1.0])]).unwrap_err();
        assert!(err.to_string().contains("larger N"), "{err}");
    }

    #[test]
    fn operator_identity_holds_at_both_levels() {
        // Oscillating damping exercises every D_t term in the identity.
        let b = ScalarCoefficient::new(
            |t: f64| cx((0.8 + 0.3 * (2.0 * (1.0 + t).ln()).sin()) / (1.0 + t), 0.0),
            1.0,
        );
        let sym = build_wave_dissipation(b).unwrap();
        let frame = frame_for(&sym, &[8.0], 200.0);
        for k in 1..=2usize {
            for &(t, x) in &[(1.0, 8.0), (10.0, 20.0), (60.0, 8.0)] {
                let step = diag_step(&sym, &frame, k, &[(t, vec![x])]).unwrap();
                let resid = identity_residual(&sym, &frame, &step.samples[0]).unwrap();
                let a_norm = fro_norm(&sym.eval_full(t, &[x]));
                assert!(
                    resid <= 1e-8 * a_norm,
                    "k = {k}, t = {t}: residual {resid:.3e} vs {:.3e}",
                    1e-8 * a_norm
                );
            }
        }
    }

    /// Solving the level-1 system and conjugating back reproduces the
    /// fundamental solution of the original system.
    #[test]
    fn conjugation_reproduces_fundamental_solution() {
        let sym = wave(1.0);
        let xi = vec![10.0];
        let frame = frame_for(&sym, &xi, 100.0);
        let (s, t1) = (5.0, 50.0);
        let opts = ode::OdeOptions::with_tol(1e-11);

        let mut direct = |t: f64, y: &CMat| sym.eval_full(t, &xi) * y * cx(0.0, 1.0);
        let e_orig = ode::integrate_to(&mut direct, s, t1, &CMat::identity(2, 2), &opts).unwrap();

        let mut transformed = |t: f64, y: &CMat| {
            let step = diag_step(&sym, &frame, 1, &[(t, xi.clone())]).unwrap();
            let smp = &step.samples[0];
            let lam: Vec<C> = smp.lambdas.iter().map(|&l| cx(l, 0.0)).collect();
            let gen = diag(&lam) + &smp.f_prev + &smp.r_k;
            gen * y * cx(0.0, 1.0)
        };
        let e_trans =
            ode::integrate_to(&mut transformed, s, t1, &CMat::identity(2, 2), &opts).unwrap();

        let at = |t: f64| {
            let step = diag_step(&sym, &frame, 1, &[(t, xi.clone())]).unwrap();
            let smp = &step.samples[0];
            let point = frame_point(&sym, t, &xi, Some(&smp.lambdas)).unwrap();
            (&point.m * &smp.n_cum, &smp.n_cum_inv * &point.m_inv)
        };
        let (w_t, _) = at(t1);
        let (_, w_s_inv) = at(s);
        let rebuilt = w_t * e_trans * w_s_inv;
        let rel = fro_norm(&(&rebuilt - &e_orig)) / fro_norm(&e_orig);
        assert!(rel < 1e-6, "relative mismatch {rel:.3e}");
    }

    #[test]
    fn exact_power_laws_are_recovered() {
        let cfg = ZoneConfig::default();
        let mut grid = Vec::new();
        for &t in &[0.0, 2.0, 9.0, 40.0, 99.0] {
            for &x in &[1.0, 5.0, 20.0, 100.0] {
                grid.push((t, vec![x]));
            }
        }
        let f1 = fit_symbol_class(
            |t, xi| Ok(CMat::from_element(1, 1, cx(1.0 / (xi[0] * (1.0 + t) * (1.0 + t)), 0.0))),
            &cfg,
            &grid,
        )
        .unwrap();
        assert!((f1.m1 + 1.0).abs() < 0.02 && (f1.m2 - 2.0).abs() < 0.02);

        let f2 = fit_symbol_class(
            |_t, xi| Ok(CMat::from_element(1, 1, cx(xi[0], 0.0))),
            &cfg,
            &grid,
        )
        .unwrap();
        assert!((f2.m1 - 1.0).abs() < 0.02 && f2.m2.abs() < 0.02);
    }

    #[test]
    fn single_decade_grid_is_rejected() {
        let cfg = ZoneConfig::default();
        let grid: Vec<(f64, Vec<f64>)> = vec![
            (1.0, vec![1.0]),
            (2.0, vec![2.0]),
            (4.0, vec![4.0]),
            (8.0, vec![8.0]),
        ];
        let err = fit_symbol_class(
            |_t, xi| Ok(CMat::from_element(1, 1, cx(xi[0], 0.0))),
            &cfg,
            &grid,
        )
        .unwrap_err();
        assert!(matches!(err, Error::DegenerateGrid { .. }), "{err}");
    }
}
