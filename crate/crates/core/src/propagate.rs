//! Fundamental solutions and their hyperbolic-zone product form.
//!
//! The propagator solves D_t E = A(t, xi) E adaptively; the product form
//! rebuilds E(t, t_xi, xi) from the diagonalisation hierarchy as
//! M N_k E_k~ Q_k N_k^{-1} M^{-1} with the diagonal WKB factor E_k~ and the
//! Peano-Baker matrix Q_k driven by the phase-conjugated level-k remainder.
//! Decay exponents are read off by trailing-window fits of log |E| against
//! log(1 + t).

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rayon::prelude::*;

use crate::diagonalize::{diag_step, DiagStep};
use crate::error::{Error, Result};
use crate::fit;
use crate::linalg::{cx, invert, spectral_norm, CMat, C};
use crate::models::SymbolModel;
use crate::ode::{self, OdeOptions};
use crate::quad;
use crate::spectral::{frame_point, spectral_frame, SpectralFrame};
use crate::zones::{norm, separating_time, ZoneConfig};

/// Loosest accuracy at which a solve is still worth trusting; requests for
/// less are rejected rather than silently honoured.
pub const MIN_SOLVE_TOL: f64 = 1e-12;

/// Term cap for the Peano-Baker series. Factorial decay of the exponential
/// majorant makes this ample whenever the kernel mass stays moderate.
pub const PEANO_TERM_CAP: usize = 60;

/// Largest admissible kernel L^1 mass. Beyond this the majorant tail cannot
/// fall under any useful tolerance within the term cap.
pub const PEANO_MASS_MAX: f64 = 20.0;

/// Residual ceiling past which a decay fit is flagged unreliable.
pub const DECAY_RESIDUAL_MAX: f64 = 0.5;

/// Fraction of the logarithmic time range used by decay fits. Trailing
/// enough to shed the transient, wide enough to average the bounded
/// oscillation of the norm around its power envelope.
pub const DECAY_WINDOW_FRACTION: f64 = 0.8;

/// Counters accumulated by a `Propagator` across its solves.
#[derive(Clone, Debug, Default)]
pub struct SolveStats {
    pub solves: usize,
    /// Attempted integrator steps (accepted and rejected) over all solves.
    pub steps: usize,
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol >= MIN_SOLVE_TOL) {
        return Err(Error::invalid(format!(
            "solver tolerance {tol:.3e} below the {MIN_SOLVE_TOL:.0e} floor"
        )));
    }
    Ok(())
}

fn solve_counted(
    sym: &SymbolModel,
    s: f64,
    t: f64,
    xi: &[f64],
    tol: f64,
) -> Result<(CMat, usize)> {
    check_tol(tol)?;
    if !s.is_finite() || !t.is_finite() || s < 0.0 || t < 0.0 {
        return Err(Error::invalid("propagation times must be finite and nonnegative"));
    }
    let d = sym.dim;
    let eye = CMat::identity(d, d);
    if s == t {
        return Ok((eye, 0));
    }
    let (lo, hi, backward) = if s < t { (s, t, false) } else { (t, s, true) };
    let mut bad: Option<f64> = None;
    let mut rhs = |tau: f64, y: &CMat| {
        let a = sym.eval_full(tau, xi);
        if bad.is_none() && !a.iter().all(|z| z.is_finite()) {
            bad = Some(tau);
        }
        (a * y) * cx(0.0, 1.0)
    };
    let opts = OdeOptions::with_tol(tol);
    let solved = ode::integrate_grid_counted(&mut rhs, &[lo, hi], &eye, &opts);
    if let Some(tau) = bad {
        return Err(Error::OdeFailure {
            t: tau,
            reason: "coefficient matrix sample has non-finite entries".into(),
        });
    }
    let (states, steps) = solved?;
    let e = states.into_iter().next_back().unwrap();
    if backward {
        Ok((invert(&e, "backward propagator")?, steps))
    } else {
        Ok((e, steps))
    }
}

/// Fundamental solution E(t, s, xi) of D_t E = A(t, xi) E with E(s, s) = I,
/// by adaptive integration with relative error near `tol`. A backward
/// request (t < s) inverts the forward solve, so E(t, s) E(s, t) = I holds
/// up to one matrix inversion.
pub fn fundamental_solution(
    sym: &SymbolModel,
    s: f64,
    t: f64,
    xi: &[f64],
    tol: f64,
) -> Result<CMat> {
    solve_counted(sym, s, t, xi, tol).map(|(e, _)| e)
}

/// The two-parameter family E(t, s, xi) with bookkeeping. Coincident times
/// return the identity exactly, without a solve.
pub struct Propagator {
    sym: SymbolModel,
    pub tol: f64,
    solves: AtomicUsize,
    steps: AtomicUsize,
}

impl Propagator {
    pub fn new(sym: &SymbolModel, tol: f64) -> Result<Self> {
        check_tol(tol)?;
        Ok(Propagator {
            sym: sym.clone(),
            tol,
            solves: AtomicUsize::new(0),
            steps: AtomicUsize::new(0),
        })
    }

    pub fn e(&self, t: f64, s: f64, xi: &[f64]) -> Result<CMat> {
        let (e, steps) = solve_counted(&self.sym, s, t, xi, self.tol)?;
        if t != s {
            self.solves.fetch_add(1, Ordering::Relaxed);
            self.steps.fetch_add(steps, Ordering::Relaxed);
        }
        Ok(e)
    }

    pub fn stats(&self) -> SolveStats {
        SolveStats {
            solves: self.solves.load(Ordering::Relaxed),
            steps: self.steps.load(Ordering::Relaxed),
        }
    }

    /// Relative defect of the composition E(t, s) = E(t, r) E(r, s).
    pub fn cocycle_defect(&self, t: f64, r: f64, s: f64, xi: &[f64]) -> Result<f64> {
        let whole = self.e(t, s, xi)?;
        let late = self.e(t, r, xi)?;
        let early = self.e(r, s, xi)?;
        let scale = spectral_norm(&whole).max(f64::MIN_POSITIVE);
        Ok(spectral_norm(&(&whole - late * early)) / scale)
    }

    /// Relative defect of det E(t, s, xi) against exp(i int_s^t trace A).
    pub fn liouville_defect(&self, t: f64, s: f64, xi: &[f64]) -> Result<f64> {
        let e = self.e(t, s, xi)?;
        let det = e.determinant();
        let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
        let qtol = (self.tol * 1e-2).max(1e-13);
        let tr_re = quad::integrate(|tau| self.sym.eval_full(tau, xi).trace().re, lo, hi, qtol)?;
        let tr_im = quad::integrate(|tau| self.sym.eval_full(tau, xi).trace().im, lo, hi, qtol)?;
        let sign = if s <= t { 1.0 } else { -1.0 };
        let expected = (cx(tr_re, tr_im) * cx(0.0, sign)).exp();
        Ok((det - expected).norm() / expected.norm())
    }
}

/// Truncated Peano-Baker series with its certificate.
#[derive(Clone, Debug)]
pub struct PeanoBakerResult {
    pub q: CMat,
    /// Terms summed, counting the leading identity.
    pub terms_used: usize,
    /// Rigorous bound on the dropped tail from the exponential majorant;
    /// exactly zero when a term vanished identically and truncated the
    /// series.
    pub tail_bound: f64,
}

/// Composite-Simpson cumulative integral of uniformly spaced samples. Odd
/// nodes get the quadratic half-panel; exact for cubics.
fn cumulative_simpson_mat(vals: &[CMat], h: f64) -> Vec<CMat> {
    let n = vals.len();
    let (r, c) = vals[0].shape();
    let mut out = vec![CMat::zeros(r, c); n];
    let mut i = 2;
    while i < n {
        out[i] = &out[i - 2]
            + (&vals[i - 2] + &vals[i - 1] * cx(4.0, 0.0) + &vals[i]) * cx(h / 3.0, 0.0);
        i += 2;
    }
    let mut i = 1;
    while i < n {
        out[i] = &out[i - 1]
            + (&vals[i - 1] * cx(5.0, 0.0) + &vals[i] * cx(8.0, 0.0) - &vals[i + 1])
                * cx(h / 12.0, 0.0);
        i += 2;
    }
    out
}

fn cumulative_simpson_c(vals: &[C], h: f64) -> Vec<C> {
    let n = vals.len();
    let mut out = vec![cx(0.0, 0.0); n];
    let mut i = 2;
    while i < n {
        out[i] = out[i - 2] + (vals[i - 2] + vals[i - 1] * 4.0 + vals[i]) * (h / 3.0);
        i += 2;
    }
    let mut i = 1;
    while i < n {
        out[i] = out[i - 1] + (vals[i - 1] * 5.0 + vals[i] * 8.0 - vals[i + 1]) * (h / 12.0);
        i += 2;
    }
    out
}

fn simpson_total(vals: &[f64], h: f64) -> f64 {
    let n = vals.len();
    let mut acc = 0.0;
    let mut i = 2;
    while i < n {
        acc += (vals[i - 2] + 4.0 * vals[i - 1] + vals[i]) * (h / 3.0);
        i += 2;
    }
    acc
}

/// Tail of the exponential majorant: sum over j > terms of mass^j / j!.
fn majorant_tail(mass: f64, terms: usize) -> f64 {
    let mut term = 1.0f64;
    for j in 1..=terms {
        term *= mass / j as f64;
    }
    let mut tail = 0.0;
    let mut j = terms + 1;
    loop {
        term *= mass / j as f64;
        tail += term;
        if term <= 1e-3 * f64::EPSILON * tail.max(1e-300) || j > terms + 400 {
            break;
        }
        j += 1;
    }
    tail
}

/// Sums the iterated-integral series for the solution of D_t Q = K(t) Q,
/// Q(s) = I, on s <= t. Terms are added until the exponential-majorant
/// tail drops below `tol`; the grid doubles until the summed matrix
/// stabilises. A kernel with divergent or oversized L^1 mass is rejected.
pub fn peano_baker(
    mut kernel: impl FnMut(f64) -> Result<CMat>,
    s: f64,
    t: f64,
    tol: f64,
) -> Result<PeanoBakerResult> {
    if !(tol > 0.0) {
        return Err(Error::invalid("Peano-Baker tolerance must be positive"));
    }
    if !(t >= s) {
        return Err(Error::invalid("Peano-Baker series needs s <= t"));
    }
    let probe = kernel(s)?;
    let d = probe.nrows();
    let eye = CMat::identity(d, d);
    if s == t {
        return Ok(PeanoBakerResult { q: eye, terms_used: 1, tail_bound: 0.0 });
    }

    let mut prev: Option<PeanoBakerResult> = None;
    let mut last_gap = f64::INFINITY;
    let mut panels = 256usize;
    loop {
        let h = (t - s) / panels as f64;
        let mut vals = Vec::with_capacity(panels + 1);
        for i in 0..=panels {
            let tau = if i == panels { t } else { s + h * i as f64 };
            vals.push(kernel(tau)?);
        }
        let norms: Vec<f64> = vals.iter().map(spectral_norm).collect();
        let mass = simpson_total(&norms, h);
        if !mass.is_finite() || mass > PEANO_MASS_MAX {
            return Err(Error::DivergentLimit {
                context: format!("Peano-Baker majorant mass {mass:.3e}"),
            });
        }

        let mut q = eye.clone();
        let mut term: Vec<CMat> = vec![eye.clone(); panels + 1];
        let mut terms_used = 1usize;
        let mut tail = majorant_tail(mass, 0);
        let mut ell = 0usize;
        while tail > tol {
            ell += 1;
            if ell > PEANO_TERM_CAP {
                return Err(Error::SeriesTail { tail, tol, terms: PEANO_TERM_CAP });
            }
            let prod: Vec<CMat> = vals.iter().zip(&term).map(|(k, x)| k * x).collect();
            term = cumulative_simpson_mat(&prod, h)
                .into_iter()
                .map(|m| m * cx(0.0, 1.0))
                .collect();
            let sup = term.iter().map(spectral_norm).fold(0.0f64, f64::max);
            if sup == 0.0 {
                // The next iterated integral vanishes identically, hence so
                // do all later ones: the series has terminated exactly.
                tail = 0.0;
                break;
            }
            q += term.last().unwrap();
            terms_used += 1;
            tail = majorant_tail(mass, ell);
        }

        let result = PeanoBakerResult { q, terms_used, tail_bound: tail };
        if let Some(p) = prev {
            let scale = spectral_norm(&result.q).max(1.0);
            last_gap = spectral_norm(&(&result.q - &p.q));
            if last_gap <= tol.max(1e-13) * scale {
                return Ok(result);
            }
        }
        prev = Some(result);
        panels *= 2;
        if panels > 16384 {
            return Err(Error::QuadratureFailure { a: s, b: t, err: last_gap });
        }
    }
}

fn diag_sample_at(
    sym: &SymbolModel,
    frame: &SpectralFrame,
    k: usize,
    tau: f64,
    xi: &[f64],
) -> Result<(Vec<f64>, Vec<C>)> {
    let step = diag_step(sym, frame, k, &[(tau, xi.to_vec())])?;
    let sample = &step.samples[0];
    let d = sample.lambdas.len();
    let fdiag: Vec<C> = (0..d).map(|j| sample.f_prev[(j, j)]).collect();
    Ok((sample.lambdas.clone(), fdiag))
}

fn wkb_diagonal(
    sym: &SymbolModel,
    frame: &SpectralFrame,
    k: usize,
    s: f64,
    t: f64,
    xi: &[f64],
) -> Result<CMat> {
    let d = sym.dim;
    if s == t {
        return Ok(CMat::identity(d, d));
    }
    let (lo, hi, sign) = if s < t { (s, t, 1.0) } else { (t, s, -1.0) };
    // The re/im passes and the d entries revisit the same abscissas; cache
    // the hierarchy per node.
    let memo = std::cell::RefCell::new(std::collections::BTreeMap::<u64, (Vec<f64>, Vec<C>)>::new());
    let inner = std::cell::RefCell::new(None::<Error>);
    let sample = |tau: f64| -> Option<(Vec<f64>, Vec<C>)> {
        if let Some(v) = memo.borrow().get(&tau.to_bits()) {
            return Some(v.clone());
        }
        match diag_sample_at(sym, frame, k, tau, xi) {
            Ok(v) => {
                memo.borrow_mut().insert(tau.to_bits(), v.clone());
                Some(v)
            }
            Err(e) => {
                inner.borrow_mut().get_or_insert(e);
                None
            }
        }
    };
    let mut entries = Vec::with_capacity(d);
    for j in 0..d {
        let re = quad::integrate(
            |tau| sample(tau).map_or(0.0, |(lam, f)| lam[j] + f[j].re),
            lo,
            hi,
            1e-10,
        )?;
        let im = quad::integrate(|tau| sample(tau).map_or(0.0, |(_, f)| f[j].im), lo, hi, 1e-10)?;
        if let Some(e) = inner.borrow_mut().take() {
            return Err(e);
        }
        // exp(i * sign * (re + i im)) entrywise.
        entries.push(C::from_polar((-sign * im).exp(), sign * re));
    }
    let mut out = CMat::zeros(d, d);
    for j in 0..d {
        out[(j, j)] = entries[j];
    }
    Ok(out)
}

/// Diagonal WKB factor exp(i int_s^t (lambda_j + (F_{k-1})_jj) dtau) of the
/// level-k hierarchy. Entry moduli are exp(-Im of the integrated diagonal):
/// for real principal eigenvalues the modulus is governed by Im F alone.
#[derive(Clone)]
pub struct WKBFactor {
    sym: SymbolModel,
    frame: SpectralFrame,
    pub k: usize,
    pub dim: usize,
}

impl WKBFactor {
    pub fn new(sym: &SymbolModel, frame: &SpectralFrame, k: usize) -> Self {
        WKBFactor { sym: sym.clone(), frame: frame.clone(), k, dim: sym.dim }
    }

    /// One sample of the diagonal matrix at (t, s, xi).
    pub fn eval(&self, t: f64, s: f64, xi: &[f64]) -> Result<CMat> {
        wkb_diagonal(&self.sym, &self.frame, self.k, s, t, xi)
    }
}

/// One sample of the level-k WKB factor, per-entry adaptive quadrature of
/// lambda_j + (F_{k-1})_jj. The hyperbolic-zone requirement is enforced by
/// the hierarchy itself: elementary corrections outside the zone exceed the
/// contraction bound and error out.
pub fn wkb_factor(
    sym: &SymbolModel,
    frame: &SpectralFrame,
    step: &DiagStep,
    s: f64,
    t: f64,
    xi: &[f64],
) -> Result<CMat> {
    wkb_diagonal(sym, frame, step.k, s, t, xi)
}

/// Interpolation weights for equispaced 4-point Lagrange at offset u from
/// the first node, u in [0, 3].
fn lagrange4(u: f64) -> [f64; 4] {
    [
        -(u - 1.0) * (u - 2.0) * (u - 3.0) / 6.0,
        u * (u - 2.0) * (u - 3.0) / 2.0,
        -u * (u - 1.0) * (u - 3.0) / 2.0,
        u * (u - 1.0) * (u - 2.0) / 6.0,
    ]
}

/// Everything the product form needs, cached on a uniform grid in
/// w = log((1+tau)/(1+s)): the level-k remainder, the cumulative complex
/// phases of D + F_{k-1}, and the endpoint diagonalisers. The remainder and
/// the phases are smooth in w (all oscillation lives in exp(i phi)), so
/// low-order interpolation off this grid is accurate and the oscillatory
/// kernel can be sampled densely at negligible cost.
struct HypPieces {
    dim: usize,
    s: f64,
    w_h: f64,
    r_vals: Vec<CMat>,
    phi: Vec<Vec<C>>,
    m_t: CMat,
    m_s_inv: CMat,
    n_t: CMat,
    n_s_inv: CMat,
}

impl HypPieces {
    fn build(
        sym: &SymbolModel,
        k: usize,
        t: f64,
        xi: &[f64],
        cfg: &ZoneConfig,
        n_c: usize,
    ) -> Result<HypPieces> {
        debug_assert!(n_c % 2 == 1 && n_c >= 5);
        let d = sym.dim;
        let xin = norm(xi);
        if !(xin > 0.0) {
            return Err(Error::invalid("product form needs xi != 0"));
        }
        if (1.0 + t) * xin < cfg.n {
            return Err(Error::OutsideZone { t, xi_norm: xin, zone: "hyperbolic", n: cfg.n });
        }
        let s = separating_time(xi, cfg);
        if !(t > s) {
            return Err(Error::invalid(
                "product form needs t strictly past the separating time",
            ));
        }

        let w_max = ((1.0 + t) / (1.0 + s)).ln();
        let tau_at = |w: f64| (1.0 + s) * w.exp() - 1.0;

        let n_f = ((8.0 * w_max).ceil() as usize + 2).max(9);
        let mut path = Vec::with_capacity(n_f);
        for i in 0..n_f {
            let w = w_max * i as f64 / (n_f - 1) as f64;
            let tau = if i == n_f - 1 { t } else { tau_at(w) };
            path.push((tau, xi.to_vec()));
        }
        let frame = spectral_frame(sym, &path)?;

        let w_h = w_max / (n_c - 1) as f64;
        let mut samples = Vec::with_capacity(n_c);
        for i in 0..n_c {
            let tau = if i == 0 {
                s
            } else if i == n_c - 1 {
                t
            } else {
                tau_at(w_h * i as f64)
            };
            samples.push((tau, xi.to_vec()));
        }
        let step = diag_step(sym, &frame, k, &samples)?;

        // Cumulative phases of lambda_j + (F_{k-1})_jj, integrated in w with
        // the (1+tau) jacobian.
        let mut phi = vec![vec![cx(0.0, 0.0); d]; n_c];
        for j in 0..d {
            let integrand: Vec<C> = step
                .samples
                .iter()
                .map(|sm| (sm.f_prev[(j, j)] + cx(sm.lambdas[j], 0.0)) * (1.0 + sm.t))
                .collect();
            let cum = cumulative_simpson_c(&integrand, w_h);
            for (i, v) in cum.into_iter().enumerate() {
                phi[i][j] = v;
            }
        }

        let m_t = frame_point(sym, t, xi, Some(&frame.nearest(t).lambdas))?.m;
        let m_s_inv = frame_point(sym, s, xi, Some(&frame.nearest(s).lambdas))?.m_inv;
        let n_t = step.samples[n_c - 1].n_cum.clone();
        let n_s_inv = step.samples[0].n_cum_inv.clone();
        let r_vals = step.samples.into_iter().map(|sm| sm.r_k).collect();

        Ok(HypPieces { dim: d, s, w_h, r_vals, phi, m_t, m_s_inv, n_t, n_s_inv })
    }

    /// Phase-conjugated remainder exp(-i phi_i) (R_k)_ij exp(i phi_j) at tau,
    /// off the cached grid.
    fn kernel(&self, tau: f64) -> CMat {
        let d = self.dim;
        let n = self.r_vals.len();
        let w = ((1.0 + tau) / (1.0 + self.s)).ln().max(0.0);
        let cell = ((w / self.w_h).floor() as usize).min(n - 2);
        let base = cell.saturating_sub(1).min(n - 4);
        let u = w / self.w_h - base as f64;
        let wts = lagrange4(u);

        let mut r = CMat::zeros(d, d);
        let mut ph = vec![cx(0.0, 0.0); d];
        for (off, &wt) in wts.iter().enumerate() {
            let idx = base + off;
            r += &self.r_vals[idx] * cx(wt, 0.0);
            for j in 0..d {
                ph[j] += self.phi[idx][j] * wt;
            }
        }
        let mut out = CMat::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                // exp(i (ph_j - ph_i)) with complex phases; split to avoid
                // overflow when the imaginary parts are both large.
                let e = (cx(0.0, 1.0) * (ph[j] - ph[i])).exp();
                out[(i, j)] = r[(i, j)] * e;
            }
        }
        out
    }

    fn e_diag(&self) -> CMat {
        let d = self.dim;
        let mut out = CMat::zeros(d, d);
        let last = &self.phi[self.phi.len() - 1];
        for j in 0..d {
            out[(j, j)] = (cx(0.0, 1.0) * last[j]).exp();
        }
        out
    }
}

/// The kernel driving Q_k on [t_sep, t]: the level-k remainder conjugated by
/// the WKB phases, sampled off a smooth cache.
pub struct ResidualKernel {
    pieces: Arc<HypPieces>,
    pub t_start: f64,
    pub dim: usize,
}

impl ResidualKernel {
    pub fn eval(&self, tau: f64) -> CMat {
        self.pieces.kernel(tau)
    }
}

/// Builds the phase-conjugated level-k remainder of the model at frequency
/// xi, valid on [t_start, t].
pub fn residual_kernel(
    sym: &SymbolModel,
    k: usize,
    t: f64,
    xi: &[f64],
    cfg: &ZoneConfig,
) -> Result<ResidualKernel> {
    let pieces = HypPieces::build(sym, k, t, xi, cfg, 257)?;
    Ok(ResidualKernel { t_start: pieces.s, dim: pieces.dim, pieces: Arc::new(pieces) })
}

/// Reconstruction diagnostics for the hyperbolic-zone product form.
#[derive(Clone, Debug)]
pub struct ProductReport {
    pub k: usize,
    pub t_sep: f64,
    pub xi_norm: f64,
    /// Relative spectral-norm deviation of the assembled product from the
    /// direct solve over [t_sep, t].
    pub deviation: f64,
    pub direct_norm: f64,
    pub product_norm: f64,
    pub peano: PeanoBakerResult,
}

/// Assembles M N_k E_k~ Q_k N_k^{-1}(t_sep) M^{-1}(t_sep) at (t, xi) and
/// compares it against the direct adaptive solve of the full system.
pub fn product_representation(
    sym: &SymbolModel,
    k: usize,
    t: f64,
    xi: &[f64],
    cfg: &ZoneConfig,
) -> Result<ProductReport> {
    if k < 2 {
        return Err(Error::invalid("product form needs hierarchy level k >= 2"));
    }
    let pieces = HypPieces::build(sym, k, t, xi, cfg, 513)?;
    // The conjugated kernel oscillates at the eigenvalue gaps, and Simpson
    // on the uniform series grid pays the fourth power of that frequency;
    // 1e-7 keeps the panel count within its cap for |xi| up to ~10 while
    // staying far below the deviation scale of interest.
    let peano = peano_baker(|tau| Ok(pieces.kernel(tau)), pieces.s, t, 1e-7)?;
    let prod =
        &pieces.m_t * &pieces.n_t * pieces.e_diag() * &peano.q * &pieces.n_s_inv * &pieces.m_s_inv;
    let direct = fundamental_solution(sym, pieces.s, t, xi, 1e-10)?;
    let direct_norm = spectral_norm(&direct);
    let deviation = spectral_norm(&(&prod - &direct)) / direct_norm.max(f64::MIN_POSITIVE);
    Ok(ProductReport {
        k,
        t_sep: pieces.s,
        xi_norm: norm(xi),
        deviation,
        direct_norm,
        product_norm: spectral_norm(&prod),
        peano,
    })
}

/// Radial divided differences of Q_k(t, t_xi, xi) in |xi|: first- and
/// second-order difference norms at relative step `rel_h` along the ray
/// through xi. A bounded-derivative probe; no exponent is asserted, callers
/// fit their own slopes across frequencies.
pub fn qk_xi_sensitivity(
    sym: &SymbolModel,
    k: usize,
    t: f64,
    xi: &[f64],
    rel_h: f64,
    cfg: &ZoneConfig,
) -> Result<(f64, f64)> {
    if !(rel_h > 0.0 && rel_h < 0.5) {
        return Err(Error::invalid("relative step must lie in (0, 0.5)"));
    }
    let xin = norm(xi);
    let q_at = |scale: f64| -> Result<CMat> {
        let xs: Vec<f64> = xi.iter().map(|&c| c * scale).collect();
        let pieces = HypPieces::build(sym, k, t, &xs, cfg, 129)?;
        Ok(peano_baker(|tau| Ok(pieces.kernel(tau)), pieces.s, t, 1e-9)?.q)
    };
    let q_lo = q_at(1.0 - rel_h)?;
    let q_mid = q_at(1.0)?;
    let q_hi = q_at(1.0 + rel_h)?;
    let h = rel_h * xin;
    let first = spectral_norm(&(&q_hi - &q_lo)) / (2.0 * h);
    let second = spectral_norm(&(&q_hi - &q_mid * cx(2.0, 0.0) + &q_lo)) / (h * h);
    Ok((first, second))
}

/// Trailing-window power-law fit of the propagator norm.
#[derive(Clone, Debug)]
pub struct DecayFit {
    /// Fitted power of (1+t); negative means decay.
    pub exponent: f64,
    pub intercept: f64,
    /// Time range the fit actually used.
    pub window: (f64, f64),
    /// Largest deviation of log norm from the fitted line over the window.
    pub residual: f64,
    /// False when the residual exceeds `DECAY_RESIDUAL_MAX`.
    pub reliable: bool,
}

/// Fits log |E(t, 0, xi)| (optionally with per-component row weights, e.g. a
/// |xi|-weighted first component) against log(1+t) over the trailing window
/// of the grid. The grid must hold at least 8 points and span two decades
/// in 1+t.
pub fn decay_fit(
    sym: &SymbolModel,
    xi: &[f64],
    t_grid: &[f64],
    component_weights: Option<&[f64]>,
) -> Result<DecayFit> {
    let n = t_grid.len();
    if n < 8 {
        return Err(Error::invalid("decay fit needs at least 8 grid points"));
    }
    if t_grid[0] < 0.0 {
        return Err(Error::invalid("decay fit grid must start at t >= 0"));
    }
    let span = (1.0 + t_grid[n - 1]) / (1.0 + t_grid[0]);
    if span < 100.0 {
        return Err(Error::DegenerateGrid {
            context: format!("decay-fit grid spans {:.2} decades, needs 2", span.log10()),
        });
    }
    let d = sym.dim;
    let weights = match component_weights {
        Some(w) => {
            if w.len() != d {
                return Err(Error::Dimension {
                    context: "decay-fit component weights".into(),
                    expected: format!("{d}"),
                    got: format!("{}", w.len()),
                });
            }
            let mut m = CMat::zeros(d, d);
            for (i, &wi) in w.iter().enumerate() {
                m[(i, i)] = cx(wi, 0.0);
            }
            Some(m)
        }
        None => None,
    };

    let prepend = t_grid[0] > 0.0;
    let mut solve_grid = Vec::with_capacity(n + 1);
    if prepend {
        solve_grid.push(0.0);
    }
    solve_grid.extend_from_slice(t_grid);

    let eye = CMat::identity(d, d);
    let mut rhs = |tau: f64, y: &CMat| (sym.eval_full(tau, xi) * y) * cx(0.0, 1.0);
    let states = ode::integrate_grid(&mut rhs, &solve_grid, &eye, &OdeOptions::with_tol(1e-10))?;
    let states = if prepend { &states[1..] } else { &states[..] };

    let mut shifted = Vec::with_capacity(n);
    let mut norms = Vec::with_capacity(n);
    for (i, e) in states.iter().enumerate() {
        let v = match &weights {
            Some(w) => spectral_norm(&(w * e)),
            None => spectral_norm(e),
        };
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::OdeFailure {
                t: t_grid[i],
                reason: format!("propagator norm {v} unusable for a rate fit"),
            });
        }
        shifted.push(1.0 + t_grid[i]);
        norms.push(v);
    }

    let (mut tw, mut vw) = fit::trailing_log_window(&shifted, &norms, DECAY_WINDOW_FRACTION);
    if tw.len() < 8 {
        tw = shifted[n - 8..].to_vec();
        vw = norms[n - 8..].to_vec();
    }
    let xs: Vec<f64> = tw.iter().map(|&x| x.ln()).collect();
    let ys: Vec<f64> = vw.iter().map(|&v| v.ln()).collect();
    let line = fit::line_fit(&xs, &ys)?;
    Ok(DecayFit {
        exponent: line.slope,
        intercept: line.intercept,
        window: (tw[0] - 1.0, tw[tw.len() - 1] - 1.0),
        residual: line.max_residual,
        reliable: line.max_residual <= DECAY_RESIDUAL_MAX,
    })
}

/// Decay fits across a frequency set; distinct frequencies are independent
/// solves and run concurrently.
pub fn decay_fits_par(
    sym: &SymbolModel,
    xi_set: &[Vec<f64>],
    t_grid: &[f64],
    component_weights: Option<&[f64]>,
) -> Vec<Result<DecayFit>> {
    xi_set
        .par_iter()
        .map(|xi| decay_fit(sym, xi, t_grid, component_weights))
        .collect()
}
