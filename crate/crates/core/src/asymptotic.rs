//! Large-time asymptotics at bounded frequencies: the Fuchs-type form
//! t D_t U = (Lambda + R~) U, the pd-zone exponent mu, dichotomy checks,
//! Levinson mode construction, and the Hartman-Wintner reduction step.
//!
//! Everything here is allowed to probe xi = 0: it is the deepest point of
//! the pseudodifferential zone and the cleanest place to read mu.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fit;
use crate::linalg::{
    complex_eigen, cond_spectral, cx, diag, fix_phase, fro_norm, invert, spectral_norm, CMat,
    CVec, C,
};
use crate::models::{FamilyTag, SymbolModel};
use crate::ode::{self, OdeOptions};
use crate::quad;
use crate::zones::{norm, separating_time, ZoneConfig};

/// Integration cap when probing sigma-integrals whose natural upper limit is
/// infinite (xi = 0, or a separating time beyond reach).
pub const SIGMA_CAP: f64 = 1e8;

/// Per-octave Raabe statistic below which a capped integral tail is
/// classified divergent. Raabe ~ p for increments ~ k^{-p}; the sum
/// converges iff p > 1, and the margin absorbs estimation noise.
pub const RAABE_DIVERGENT: f64 = 1.25;

/// Declared tolerance on the trailing-window spread of the liminf quotient;
/// larger spreads mark the mode as not settled.
pub const MU_SPREAD_TOL: f64 = 0.05;

/// Smallest admissible strong-dichotomy gap; the Hartman-Wintner step
/// refuses to divide by anything closer.
pub const DICHOTOMY_GAP_MIN: f64 = 1e-6;

const MTILDE_COND_MAX: f64 = 1e8;

type LambdaFn = Arc<dyn Fn(f64) -> Vec<C> + Send + Sync>;
type MatFn = Arc<dyn Fn(f64) -> CMat + Send + Sync>;
type ResFn = Arc<dyn Fn(f64, &[f64]) -> Result<CMat> + Send + Sync>;

/// Diagonal limit structure of the zero-frequency symbol: t A(t, 0) is
/// conjugated by `mtilde` to `lambda` plus an L^sigma(dt/t) remainder.
#[derive(Clone)]
pub struct LargeTimeSymbol {
    pub dim: usize,
    /// Integrability exponent claimed for the Fuchs residual.
    pub sigma: f64,
    /// The limit of t A(t, 0) when the constant-limit route applied.
    pub limit_matrix: Option<CMat>,
    lambda: LambdaFn,
    mtilde: MatFn,
    mtilde_constant: bool,
}

impl std::fmt::Debug for LargeTimeSymbol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LargeTimeSymbol")
            .field("dim", &self.dim)
            .field("sigma", &self.sigma)
            .field("limit_matrix", &self.limit_matrix.is_some())
            .field("mtilde_constant", &self.mtilde_constant)
            .finish()
    }
}

impl std::fmt::Debug for FuchsResidual {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FuchsResidual")
            .field("dim", &self.dim)
            .field("probe", &self.probe)
            .finish()
    }
}

impl LargeTimeSymbol {
    /// Constant spectrum and diagonaliser.
    pub fn constant(lambda: Vec<C>, mtilde: CMat, sigma: f64) -> Result<Self> {
        let d = lambda.len();
        if mtilde.nrows() != d || mtilde.ncols() != d {
            return Err(Error::Dimension {
                context: "large-time diagonaliser".into(),
                expected: format!("{d}x{d}"),
                got: format!("{}x{}", mtilde.nrows(), mtilde.ncols()),
            });
        }
        if sigma < 1.0 {
            return Err(Error::invalid("integrability exponent sigma must be >= 1"));
        }
        let cond = cond_spectral(&mtilde);
        if !cond.is_finite() || cond > MTILDE_COND_MAX {
            return Err(Error::IllConditioned { context: "large-time diagonaliser".into(), cond });
        }
        Ok(LargeTimeSymbol {
            dim: d,
            sigma,
            limit_matrix: None,
            lambda: Arc::new(move |_| lambda.clone()),
            mtilde: Arc::new(move |_| mtilde.clone()),
            mtilde_constant: true,
        })
    }

    /// Time-dependent diagonal entries with the identity diagonaliser. The
    /// entries must stay bounded; a fitted growth in log t is rejected.
    pub fn varying(
        dim: usize,
        lambda: impl Fn(f64) -> Vec<C> + Send + Sync + 'static,
        sigma: f64,
    ) -> Result<Self> {
        if sigma < 1.0 {
            return Err(Error::invalid("integrability exponent sigma must be >= 1"));
        }
        let lam: LambdaFn = Arc::new(lambda);
        validate_bounded(dim, &lam)?;
        Ok(LargeTimeSymbol {
            dim,
            sigma,
            limit_matrix: None,
            lambda: lam,
            mtilde: Arc::new(move |_| CMat::identity(dim, dim)),
            mtilde_constant: true,
        })
    }

    pub fn lambda(&self, t: f64) -> Vec<C> {
        (self.lambda)(t)
    }

    pub fn lambda_matrix(&self, t: f64) -> CMat {
        diag(&(self.lambda)(t))
    }

    pub fn mtilde(&self, t: f64) -> CMat {
        (self.mtilde)(t)
    }

    pub fn mtilde_constant(&self) -> bool {
        self.mtilde_constant
    }
}

/// Entries bounded with bounded scale-invariant derivative t d/dt, checked
/// on a log-spaced sample of [1, 1e6].
fn validate_bounded(dim: usize, lam: &LambdaFn) -> Result<()> {
    let ts = quad::log_grid(1.0, 1e6, 31);
    let mut sups = Vec::with_capacity(ts.len());
    for &t in &ts {
        let v = lam(t);
        if v.len() != dim {
            return Err(Error::Dimension {
                context: "large-time spectrum".into(),
                expected: format!("{dim}"),
                got: format!("{}", v.len()),
            });
        }
        let s = v.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
        if !s.is_finite() {
            return Err(Error::invalid(format!("large-time spectrum not finite at t = {t:.3e}")));
        }
        sups.push(s);
    }
    let lx: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let lf = fit::line_fit(&lx, &sups)?;
    let scale = 1.0 + sups.iter().cloned().fold(0.0f64, f64::max);
    if lf.slope.abs() > 0.05 * scale {
        return Err(Error::DivergentLimit { context: "large-time spectrum growth".into() });
    }
    for &t in &[2.0, 30.0, 1e3, 1e5] {
        let h = 1e-3 * t;
        let up = lam(t + h);
        let dn = lam(t - h);
        let deriv = (0..dim)
            .map(|j| (up[j] - dn[j]).norm() / (2.0 * h) * t)
            .fold(0.0f64, f64::max);
        if !deriv.is_finite() || deriv > 1e3 * scale {
            return Err(Error::DivergentLimit { context: "large-time spectrum derivative".into() });
        }
    }
    Ok(())
}

/// Extracts the large-time structure of `sym` at xi = 0.
///
/// When t A(t, 0) has a limit (analytic where the family provides one,
/// otherwise certified numerically on the trailing decade of `horizon`),
/// the limit matrix is eigen-decomposed: constant diagonaliser, constant
/// spectrum, eigenvalues ordered by (Im, Re). When the limit oscillates but
/// the zero-frequency symbol is diagonal, the diagonal of (1+t) A(t, 0) is
/// kept as a time-dependent spectrum instead. Anything else is refused.
///
/// The integrability exponent is read from a declared "sigma" entry in the
/// model parameters and defaults to 1.
pub fn large_time_symbol(sym: &SymbolModel, horizon: (f64, f64)) -> Result<LargeTimeSymbol> {
    let (lo, hi) = horizon;
    if !(hi.is_finite() && hi > 0.0 && hi > lo) {
        return Err(Error::invalid("horizon end must exceed its start"));
    }
    let lo = lo.max(1.0);
    if hi < 10.0 * lo {
        return Err(Error::invalid("horizon must span at least a decade"));
    }
    let sigma = sym
        .params
        .iter()
        .find(|(k, _)| k == "sigma")
        .map(|&(_, v)| v)
        .unwrap_or(1.0);
    if sigma < 1.0 {
        return Err(Error::invalid("integrability exponent sigma must be >= 1"));
    }

    let d = sym.dim;
    let zero = vec![0.0; sym.space_dim];
    let n = ((12.0 * (hi / lo).log10()).ceil() as usize + 1).max(24);
    let ts = quad::log_grid(lo, hi, n);
    let mut xs = Vec::with_capacity(ts.len());
    for &t in &ts {
        let x = sym.eval_full(t, &zero) * cx(t, 0.0);
        if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::invalid(format!("symbol not finite at xi = 0, t = {t:.3e}")));
        }
        xs.push(x);
    }

    let analytic = sym.predictions.fuchs_limit.clone().or_else(|| {
        if sym.family == FamilyTag::FirstOrderDifferential {
            // At xi = 0 the symbol is the dissipative part alone.
            sym.predictions.dissipative_limit.clone()
        } else {
            None
        }
    });
    let a_inf = analytic.or_else(|| tail_limit(&ts, &xs));

    if let Some(a_inf) = a_inf {
        let (vals, vecs) = complex_eigen(&a_inf)?;
        let mut order: Vec<usize> = (0..d).collect();
        // Im first, Re as tie-break. Equal imaginary parts come back from
        // the eigensolver with ~1e-16 jitter, so snap them before comparing
        // or the tie-break never fires.
        let snap = 1e-9 * (1.0 + vals.iter().map(|v| v.norm()).fold(0.0, f64::max));
        order.sort_by(|&i, &j| {
            let di = vals[i].im - vals[j].im;
            if di.abs() > snap {
                di.partial_cmp(&0.0).unwrap_or(std::cmp::Ordering::Equal)
            } else {
                vals[i]
                    .re
                    .partial_cmp(&vals[j].re)
                    .unwrap_or(std::cmp::Ordering::Equal)
            }
        });
        let lambda: Vec<C> = order.iter().map(|&k| vals[k]).collect();
        let mut mtilde = CMat::zeros(d, d);
        for (col, &k) in order.iter().enumerate() {
            mtilde.set_column(col, &vecs.column(k));
        }
        fix_phase(&mut mtilde);
        let cond = cond_spectral(&mtilde);
        if !cond.is_finite() || cond > MTILDE_COND_MAX {
            return Err(Error::IllConditioned { context: "large-time diagonaliser".into(), cond });
        }
        return Ok(LargeTimeSymbol {
            dim: d,
            sigma,
            limit_matrix: Some(a_inf),
            lambda: Arc::new(move |_| lambda.clone()),
            mtilde: Arc::new(move |_| mtilde.clone()),
            mtilde_constant: true,
        });
    }

    // No limit. A bounded oscillating diagonal still carries a Fuchs form
    // with M~ = I; the (1+t) scaling reads the coefficient off exactly for
    // models declared in powers of (1+t), and differs from the t scaling by
    // an integrable term that belongs to the residual.
    let scale = xs
        .iter()
        .flat_map(|x| x.iter().map(|z| z.norm()))
        .fold(1.0f64, f64::max);
    let off = xs
        .iter()
        .map(|x| {
            let mut m = 0.0f64;
            for i in 0..d {
                for j in 0..d {
                    if i != j {
                        m = m.max(x[(i, j)].norm());
                    }
                }
            }
            m
        })
        .fold(0.0f64, f64::max);
    if off > 1e-10 * scale {
        return Err(Error::DivergentLimit { context: "t A(t, 0)".into() });
    }
    let symc = sym.clone();
    let sd = sym.space_dim;
    let lam: LambdaFn = Arc::new(move |t| {
        let a = symc.eval_full(t, &vec![0.0; sd]);
        (0..d).map(|j| a[(j, j)] * cx(1.0 + t, 0.0)).collect()
    });
    validate_bounded(d, &lam)?;
    Ok(LargeTimeSymbol {
        dim: d,
        sigma,
        limit_matrix: None,
        lambda: lam,
        mtilde: Arc::new(move |_| CMat::identity(d, d)),
        mtilde_constant: true,
    })
}

/// Certifies a limit of the sampled tail: differences from the endpoint must
/// shrink toward it monotonically (30% slack) and end below 1e-3 relative.
fn tail_limit(ts: &[f64], xs: &[CMat]) -> Option<CMat> {
    let last = xs.last()?;
    let t_end = *ts.last()?;
    let scale = 1.0 + fro_norm(last);
    let mut errs = Vec::new();
    for (t, x) in ts.iter().zip(xs).rev().skip(1) {
        if *t < t_end / 10.0 {
            break;
        }
        errs.push(fro_norm(&(x - last)) / scale);
    }
    if errs.len() < 4 || errs[0] > 1e-3 {
        return None;
    }
    for w in errs.windows(2) {
        // Walking backwards from the endpoint the error may only grow.
        if w[1] < w[0] / 1.3 - 1e-14 {
            return None;
        }
    }
    Some(last.clone())
}

/// The Fuchs residual R~ = t M~^{-1} A M~ - Lambda + (t D_t M~^{-1}) M~,
/// with D_t = -i d/dt, so that U^ = M~^{-1} U solves t D_t U^ = (Lambda+R~)U^
/// whenever D_t U = A U. (Check on A = 0, scalar M~ = m: U^ = u/m obeys
/// t D_t U^ = it (m'/m) U^ = (t D_t m^{-1}) m U^.) The derivative term
/// vanishes for constant M~.
pub fn fuchs_residual(sym: &SymbolModel, lts: &LargeTimeSymbol, t: f64, xi: &[f64]) -> Result<CMat> {
    if t <= 0.0 {
        return Err(Error::invalid("Fuchs residual needs t > 0"));
    }
    let a = sym.eval_full(t, xi);
    let m = lts.mtilde(t);
    let mi = invert(&m, "large-time diagonaliser")?;
    let mut r = (&mi * a * &m) * cx(t, 0.0) - lts.lambda_matrix(t);
    if !lts.mtilde_constant {
        let lts_inner = lts.clone();
        let dmi = d_dt_mat(lts.dim, |s| invert(&lts_inner.mtilde(s), "large-time diagonaliser"), t)?;
        r += (dmi * cx(0.0, -t)) * m;
    }
    Ok(r)
}

/// The residual as an evaluable object. `probe` is the frequency at which
/// one-frequency reductions (the Hartman-Wintner step) read it.
#[derive(Clone)]
pub struct FuchsResidual {
    pub dim: usize,
    pub probe: Vec<f64>,
    f: ResFn,
}

impl FuchsResidual {
    pub fn from_model(sym: &SymbolModel, lts: &LargeTimeSymbol) -> Self {
        let probe = vec![0.0; sym.space_dim];
        let symc = sym.clone();
        let ltsc = lts.clone();
        FuchsResidual {
            dim: lts.dim,
            probe,
            f: Arc::new(move |t, xi| fuchs_residual(&symc, &ltsc, t, xi)),
        }
    }

    /// Frequency-independent residual, e.g. a synthetic test system.
    pub fn from_fn(
        dim: usize,
        probe_dim: usize,
        f: impl Fn(f64) -> CMat + Send + Sync + 'static,
    ) -> Self {
        FuchsResidual {
            dim,
            probe: vec![0.0; probe_dim],
            f: Arc::new(move |t, _| Ok(f(t))),
        }
    }

    pub fn eval(&self, t: f64, xi: &[f64]) -> Result<CMat> {
        (self.f)(t, xi)
    }

    pub fn at_probe(&self, t: f64) -> Result<CMat> {
        (self.f)(t, &self.probe)
    }
}

/// One frequency's share of the sigma-integral diagnostics.
#[derive(Clone, Debug)]
pub struct SigmaRow {
    pub xi_norm: f64,
    /// The integral, +inf when the tail is classified divergent.
    pub value: f64,
    /// What was actually accumulated up to the separating time or the cap.
    pub partial: f64,
    /// Per-octave increments of the capped integral. Octaves rather than
    /// decades: residuals built from dyadic coefficient bumps then feed each
    /// bin one bump, so the increments track the underlying sequence instead
    /// of aliasing against it.
    pub octaves: Vec<f64>,
    /// Raabe statistic of the trailing octaves; None when the reach was
    /// finite or the tail vanished before classification was needed.
    pub raabe: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SigmaIntegral {
    /// sup over the admissible frequencies of int_1^{t_xi} |R~|^sigma dt/t.
    pub sup: f64,
    pub rows: Vec<SigmaRow>,
}

/// Discretizes sup over `xi_set` of the L^sigma(dt/t) integral of the
/// residual up to the separating time. Frequencies whose separating time is
/// below 1 do not constrain the sup and are skipped. Unbounded reaches are
/// capped at `SIGMA_CAP` and the tail is classified by its per-octave
/// increments; divergence is reported as +inf alongside the partial value.
pub fn sigma_integrability(
    res: &FuchsResidual,
    sigma: f64,
    xi_set: &[Vec<f64>],
    cfg: &ZoneConfig,
) -> Result<SigmaIntegral> {
    if sigma < 1.0 {
        return Err(Error::invalid("integrability exponent sigma must be >= 1"));
    }
    let mut rows = Vec::new();
    for xi in xi_set {
        let t_sep = separating_time(xi, cfg);
        if t_sep < 1.0 {
            continue;
        }
        let reach = t_sep.min(SIGMA_CAP);
        let capped = t_sep > SIGMA_CAP;
        let mut octaves = Vec::new();
        let mut lo = 1.0f64;
        while lo < reach {
            let hi = (lo * 2.0).min(reach);
            let mut inner: Option<Error> = None;
            let inc = quad::integrate_log_weight(
                |t| match res.eval(t, xi) {
                    Ok(r) => spectral_norm(&r).powf(sigma),
                    Err(e) => {
                        inner.get_or_insert(e);
                        0.0
                    }
                },
                lo,
                hi,
                1e-9,
            )?;
            if let Some(e) = inner {
                return Err(e);
            }
            octaves.push(inc);
            lo = hi;
        }
        let partial: f64 = octaves.iter().sum();
        let (value, raabe) = if !capped {
            (partial, None)
        } else {
            let (divergent, raabe) = classify_tail(&octaves);
            if divergent {
                (f64::INFINITY, raabe)
            } else {
                let m = octaves.len();
                let tail = if m >= 2 && octaves[m - 1] > 0.0 && octaves[m - 2] > 0.0 {
                    let r = (octaves[m - 1] / octaves[m - 2]).min(0.95);
                    octaves[m - 1] * r / (1.0 - r)
                } else {
                    0.0
                };
                (partial + tail, raabe)
            }
        };
        rows.push(SigmaRow { xi_norm: norm(xi), value, partial, octaves, raabe });
    }
    if rows.is_empty() {
        return Err(Error::DegenerateGrid {
            context: "no frequency in the set has separating time >= 1".into(),
        });
    }
    let sup = rows.iter().map(|r| r.value).fold(0.0f64, f64::max);
    Ok(SigmaIntegral { sup, rows })
}

/// Convergence of a positive series from its trailing behaviour. Increments
/// ~ rho^k k^{-p} give a Raabe statistic k (I_k / I_{k+1} - 1) tending to p
/// for rho = 1 and to +inf for rho < 1, so small statistics mean the sum
/// diverges (p <= 1) or nearly does.
fn classify_tail(inc: &[f64]) -> (bool, Option<f64>) {
    let total: f64 = inc.iter().sum();
    let m = inc.len();
    if total <= 1e-299 || m < 2 || inc[m - 1] <= 1e-12 * total {
        return (false, None);
    }
    if m < 4 {
        // Too few octaves to classify; the capped value stands.
        return (false, None);
    }
    if inc[m - 1] >= inc[m - 2] {
        return (true, None);
    }
    if inc[m - 1] / inc[m - 2] <= 0.5 {
        // Faster than 1/t in octave terms; geometrically summable.
        return (false, None);
    }
    let mut stats = Vec::new();
    for k in m.saturating_sub(9)..m - 1 {
        if inc[k + 1] > 0.0 {
            // Octave k covers [2^k, 2^{k+1}]; 1-based index for the test.
            stats.push((k + 1) as f64 * (inc[k] / inc[k + 1] - 1.0));
        }
    }
    if stats.is_empty() {
        return (false, None);
    }
    stats.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let raabe = stats[stats.len() / 2];
    (raabe < RAABE_DIVERGENT, Some(raabe))
}

/// Trailing-window diagnostics for one mode's liminf quotient.
#[derive(Clone, Debug)]
pub struct MuWindow {
    pub mode: usize,
    /// Minimum of the quotient over each trailing window, outermost first.
    pub minima: Vec<f64>,
    pub spread: f64,
    pub settled: bool,
}

#[derive(Clone, Debug)]
pub struct MuReport {
    pub mu_j: Vec<f64>,
    pub mu: f64,
    pub horizon: (f64, f64),
    pub window_trace: Vec<MuWindow>,
}

/// Estimates mu_j = liminf of Im int_1^t lambda_j dtau/tau / log t by the
/// minimum over trailing windows covering the last two decades of the
/// horizon, and mu as the smallest mu_j. A spread above `MU_SPREAD_TOL`
/// between window minima marks the mode as not settled; the minimum is
/// still returned.
pub fn mu_exponent(lts: &LargeTimeSymbol, horizon: (f64, f64)) -> Result<MuReport> {
    let t1 = horizon.1;
    if t1 < 1e4 {
        return Err(Error::invalid("mu estimation needs a horizon through 1e4"));
    }
    let n = ((32.0 * t1.log10()).ceil() as usize + 1).max(64);
    let grid = quad::log_grid(1.0, t1, n);
    let lx: Vec<f64> = grid.iter().map(|t| t.ln()).collect();

    let mut mu_j = Vec::with_capacity(lts.dim);
    let mut window_trace = Vec::with_capacity(lts.dim);
    let nw = 7usize;
    for j in 0..lts.dim {
        let lamc = lts.clone();
        let cum = quad::cumulative(|s| lamc.lambda(s)[j].im / s, &grid, 1e-11)?;
        let mut minima = Vec::with_capacity(nw);
        for k in 0..nw {
            let hi = t1 * 100f64.powf(-(k as f64) / nw as f64);
            let lo = t1 * 100f64.powf(-((k + 1) as f64) / nw as f64);
            let mut m = f64::INFINITY;
            for (i, &t) in grid.iter().enumerate() {
                if t >= lo && t <= hi {
                    m = m.min(cum[i] / lx[i]);
                }
            }
            minima.push(m);
        }
        let lo_min = minima.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi_min = minima.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let spread = hi_min - lo_min;
        mu_j.push(lo_min);
        window_trace.push(MuWindow { mode: j, minima, spread, settled: spread <= MU_SPREAD_TOL });
    }
    let mu = mu_j.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(MuReport { mu_j, mu, horizon, window_trace })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DichotomyKind {
    Weak,
    Strong,
    Failed,
}

/// Per-pair dichotomy evidence: the pointwise imaginary gap and the growth
/// rates of the running sup/inf of Im int (lambda_i - lambda_j) dtau/tau
/// across the second half of the horizon (log-time units).
#[derive(Clone, Debug)]
pub struct PairEvidence {
    pub i: usize,
    pub j: usize,
    pub gap: f64,
    pub bounded_above: bool,
    pub bounded_below: bool,
    pub envelope_slopes: (f64, f64),
}

#[derive(Clone, Debug)]
pub struct DichotomyVerdict {
    pub kind: DichotomyKind,
    pub sigma: f64,
    pub pair_evidence: Vec<PairEvidence>,
}

/// Checks the dichotomy hypothesis matching `sigma`: for sigma = 1 each pair
/// needs Im int_1^t (lambda_i - lambda_j) dtau/tau bounded on at least one
/// side (judged by running-extrema growth), for sigma > 1 a uniform
/// pointwise gap |Im(lambda_i - lambda_j)| >= `DICHOTOMY_GAP_MIN`.
pub fn dichotomy(lts: &LargeTimeSymbol, sigma: f64, horizon: (f64, f64)) -> Result<DichotomyVerdict> {
    let lo = horizon.0.max(1.0);
    let hi = horizon.1;
    if hi < 100.0 * lo {
        return Err(Error::invalid("dichotomy check needs at least two decades"));
    }
    let n = ((32.0 * (hi / lo).log10()).ceil() as usize + 1).max(64);
    let grid = quad::log_grid(lo, hi, n);

    let mut evidence = Vec::new();
    let mut all_one_sided = true;
    let mut min_gap = f64::INFINITY;
    for i in 0..lts.dim {
        for j in (i + 1)..lts.dim {
            let ltsc = lts.clone();
            let gap = grid
                .iter()
                .map(|&t| {
                    let lam = ltsc.lambda(t);
                    (lam[i].im - lam[j].im).abs()
                })
                .fold(f64::INFINITY, f64::min);
            min_gap = min_gap.min(gap);

            let ltsc = lts.clone();
            let cum = quad::cumulative(
                |s| {
                    let lam = ltsc.lambda(s);
                    (lam[i].im - lam[j].im) / s
                },
                &grid,
                1e-11,
            )?;
            // Boundedness from the growth of the running extrema: a bounded
            // integral stops raising its running sup (resp. lowering its
            // running inf) once a full oscillation has been seen, while a
            // drift keeps pushing it at its rate. Fitting envelopes directly
            // would wobble with the oscillation phase; the running extrema
            // are monotone by construction.
            let mid = (lo * hi).sqrt();
            let mut s_half = f64::NEG_INFINITY;
            let mut i_half = f64::INFINITY;
            let mut s_end = f64::NEG_INFINITY;
            let mut i_end = f64::INFINITY;
            for (k, &t) in grid.iter().enumerate() {
                s_end = s_end.max(cum[k]);
                i_end = i_end.min(cum[k]);
                if t <= mid {
                    s_half = s_end;
                    i_half = i_end;
                }
            }
            let half_span = (hi / mid).ln();
            let slope_hi = (s_end - s_half) / half_span;
            let slope_lo = (i_end - i_half) / half_span;
            let g_range = s_end - i_end;
            let tol = 0.02 * (1.0 + g_range / (hi / lo).ln());
            let bounded_above = slope_hi <= tol;
            let bounded_below = slope_lo >= -tol;
            if !(bounded_above || bounded_below) {
                all_one_sided = false;
            }
            evidence.push(PairEvidence {
                i,
                j,
                gap,
                bounded_above,
                bounded_below,
                envelope_slopes: (slope_hi, slope_lo),
            });
        }
    }
    let kind = if lts.dim < 2 {
        DichotomyKind::Strong
    } else if sigma > 1.0 {
        if min_gap >= DICHOTOMY_GAP_MIN {
            DichotomyKind::Strong
        } else {
            DichotomyKind::Failed
        }
    } else if all_one_sided {
        DichotomyKind::Weak
    } else {
        DichotomyKind::Failed
    };
    Ok(DichotomyVerdict { kind, sigma, pair_evidence: evidence })
}

/// One Hartman-Wintner reduction: moves diag R~ into the spectrum and
/// conjugates by I + Q, Q_ij = R~_ij / (lambda_j - lambda_i), leaving a
/// remainder of integrability exponent max(sigma/2, 1).
///
/// The residual is read at its probe frequency; the returned pair is frozen
/// there. The remainder is computed from the exact conjugation identity, so
/// it retains the product and derivative terms beyond the leading
/// commutator cancellation. Upstream evaluation failures inside the
/// returned closures surface as non-finite entries, which the consuming
/// quadrature or ODE layer reports with a location.
pub fn hartman_wintner_step(
    lts: &LargeTimeSymbol,
    res: &FuchsResidual,
) -> Result<(LargeTimeSymbol, FuchsResidual)> {
    let d = lts.dim;
    if d != res.dim {
        return Err(Error::Dimension {
            context: "Hartman-Wintner step".into(),
            expected: format!("{d}"),
            got: format!("{}", res.dim),
        });
    }
    let mut gap = f64::INFINITY;
    for &t in &quad::log_grid(1.0, 1e6, 140) {
        let lam = lts.lambda(t);
        for i in 0..d {
            for j in (i + 1)..d {
                gap = gap.min((lam[i].im - lam[j].im).abs());
            }
        }
    }
    if !(gap >= DICHOTOMY_GAP_MIN) {
        return Err(Error::DichotomyUnverified {
            context: format!("strong dichotomy gap {gap:.3e} below {DICHOTOMY_GAP_MIN:.0e}"),
        });
    }

    let base = lts.clone();
    let resc = res.clone();
    let q_at: Arc<dyn Fn(f64) -> Result<CMat> + Send + Sync> = Arc::new(move |t: f64| {
        let lam = base.lambda(t);
        let r = resc.at_probe(t)?;
        let mut q = CMat::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    let den = lam[j] - lam[i];
                    if den.norm() < DICHOTOMY_GAP_MIN {
                        return Err(Error::DichotomyUnverified {
                            context: format!("spectral gap {:.3e} at t = {t:.3e}", den.norm()),
                        });
                    }
                    q[(i, j)] = r[(i, j)] / den;
                }
            }
        }
        Ok(q)
    });

    let lam1: LambdaFn = {
        let base = lts.clone();
        let resc = res.clone();
        Arc::new(move |t| {
            let mut lam = base.lambda(t);
            match resc.at_probe(t) {
                Ok(r) => {
                    for (j, v) in lam.iter_mut().enumerate() {
                        *v += r[(j, j)];
                    }
                }
                Err(_) => {
                    for v in lam.iter_mut() {
                        *v = cx(f64::NAN, f64::NAN);
                    }
                }
            }
            lam
        })
    };
    let mtilde1: MatFn = {
        let base = lts.clone();
        let q = q_at.clone();
        Arc::new(move |t| match q(t) {
            Ok(qm) => base.mtilde(t) * (CMat::identity(d, d) + qm),
            Err(_) => CMat::from_element(d, d, cx(f64::NAN, f64::NAN)),
        })
    };
    let r1: ResFn = {
        let base = lts.clone();
        let resc = res.clone();
        let q = q_at.clone();
        Arc::new(move |t, _| {
            let lam_mat = base.lambda_matrix(t);
            let r = resc.at_probe(t)?;
            let qm = q(t)?;
            let iq = CMat::identity(d, d) + &qm;
            let iq_inv = invert(&iq, "Hartman-Wintner conjugation")?;
            let dq = d_dt_mat(d, |s| q(s), t)?;
            let t_dt_q = dq * cx(0.0, -t);
            let gen_v = iq_inv * ((&lam_mat + &r) * iq - t_dt_q);
            let mut lam1_mat = lam_mat;
            for j in 0..d {
                lam1_mat[(j, j)] += r[(j, j)];
            }
            Ok(gen_v - lam1_mat)
        })
    };

    let stepped = LargeTimeSymbol {
        dim: d,
        sigma: (lts.sigma / 2.0).max(1.0),
        limit_matrix: None,
        lambda: lam1,
        mtilde: mtilde1,
        mtilde_constant: false,
    };
    let remainder = FuchsResidual { dim: d, probe: res.probe.clone(), f: r1 };
    Ok((stepped, remainder))
}

/// One asymptotic mode: samples of v_j(t) = M~ U^(t) e_j exp(-i phase_j(t)),
/// its tail limit, and the tail drift.
#[derive(Clone, Debug)]
pub struct AsymptoticMode {
    pub v: Vec<CVec>,
    pub phase: Vec<C>,
    pub v_limit: CVec,
    pub defect: f64,
}

#[derive(Clone, Debug)]
pub struct AsymptoticBasis {
    pub ts: Vec<f64>,
    pub modes: Vec<AsymptoticMode>,
    /// Per-mode tail sup of |v_j(t) - v_j(end)| over the last decade.
    pub convergence_defect: Vec<f64>,
    /// Relative deviation of det U^(end) from the Liouville value
    /// exp(i int (sum lambda_j + tr R~) dtau/tau); the trace term vanishes
    /// for trace-free residuals, recovering the pure phase-sum identity.
    pub wronskian_defect: f64,
    /// Relative deviation of M~(end) U^(end) from a direct solve of the
    /// original system started at M~(1).
    pub reconstruction_defect: f64,
    /// |E^{-1}| |det E| / (d |E|^{d-1}) for E(end, 1, xi); at most 1 up to
    /// roundoff by the adjugate bound.
    pub inverse_bound_ratio: f64,
}

/// Integrates the Fuchs system t D_t U^ = (Lambda + R~) U^ from U^(1) = I,
/// strips the phases exp(i int lambda_j dtau/tau), and reports how well the
/// stripped modes settle, the Wronskian identity, and the reconstruction of
/// the fundamental solution E(t, 1, xi) = M~(t) U^(t) M~(1)^{-1}.
pub fn levinson_modes(
    sym: &SymbolModel,
    lts: &LargeTimeSymbol,
    xi: &[f64],
    horizon: (f64, f64),
    cfg: &ZoneConfig,
) -> Result<AsymptoticBasis> {
    let d = lts.dim;
    let t_end = horizon.1;
    let xn = norm(xi);
    if !(t_end >= 100.0) {
        return Err(Error::invalid("mode construction needs a horizon through 100"));
    }
    if (1.0 + t_end) * xn > cfg.n {
        return Err(Error::OutsideZone {
            t: t_end,
            xi_norm: xn,
            zone: "pseudodifferential",
            n: cfg.n,
        });
    }
    let res = FuchsResidual::from_model(sym, lts);
    let n = ((24.0 * t_end.log10()).ceil() as usize + 1).max(48);
    let grid = quad::log_grid(1.0, t_end, n);

    let mut inner: Option<Error> = None;
    let mut f = |t: f64, y: &CMat| -> CMat {
        match res.eval(t, xi) {
            Ok(mut g) => {
                let lam = lts.lambda(t);
                for j in 0..d {
                    g[(j, j)] += lam[j];
                }
                (g * y) * cx(0.0, 1.0 / t)
            }
            Err(e) => {
                inner.get_or_insert(e);
                CMat::zeros(d, d)
            }
        }
    };
    let us = ode::integrate_grid(&mut f, &grid, &CMat::identity(d, d), &OdeOptions::with_tol(1e-10))?;
    if let Some(e) = inner {
        return Err(e);
    }

    let mut phases = vec![vec![cx(0.0, 0.0); grid.len()]; d];
    for (j, ph) in phases.iter_mut().enumerate() {
        let ltsc = lts.clone();
        let re = quad::cumulative(|s| ltsc.lambda(s)[j].re / s, &grid, 1e-12)?;
        let ltsc = lts.clone();
        let im = quad::cumulative(|s| ltsc.lambda(s)[j].im / s, &grid, 1e-12)?;
        for (i, p) in ph.iter_mut().enumerate() {
            *p = cx(re[i], im[i]);
        }
    }

    let mut modes = Vec::with_capacity(d);
    let mut convergence_defect = Vec::with_capacity(d);
    for j in 0..d {
        let mut v = Vec::with_capacity(grid.len());
        for (i, &t) in grid.iter().enumerate() {
            let w: CVec = lts.mtilde(t) * us[i].column(j);
            v.push(strip_phase(&w, phases[j][i]));
        }
        let v_limit: CVec = v.last().expect("nonempty grid").clone();
        if v_limit.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::OdeFailure {
                t: t_end,
                reason: "non-finite mode amplitude after phase stripping".into(),
            });
        }
        let mut defect = 0.0f64;
        for (vi, &t) in v.iter().zip(&grid) {
            if t >= t_end / 10.0 {
                defect = defect.max((vi - &v_limit).norm());
            }
        }
        convergence_defect.push(defect);
        modes.push(AsymptoticMode { v, phase: phases[j].clone(), v_limit, defect });
    }

    // Liouville check on the transformed system.
    let u_end = us.last().expect("nonempty grid");
    let det_u = u_end.clone().determinant();
    let sum_phase: C = (0..d).map(|j| *phases[j].last().expect("nonempty grid")).sum();
    let mut inner_tr: Option<Error> = None;
    let mut tr_part = |pick: fn(C) -> f64| {
        quad::integrate_log_weight(
            |t| match res.eval(t, xi) {
                Ok(r) => pick((0..d).map(|j| r[(j, j)]).sum()),
                Err(e) => {
                    inner_tr.get_or_insert(e);
                    0.0
                }
            },
            1.0,
            t_end,
            1e-12,
        )
    };
    let tr_re = tr_part(|z| z.re)?;
    let tr_im = tr_part(|z| z.im)?;
    if let Some(e) = inner_tr {
        return Err(e);
    }
    let target = (cx(0.0, 1.0) * (sum_phase + cx(tr_re, tr_im))).exp();
    let wronskian_defect = (det_u - target).norm() / target.norm().max(1e-300);

    // Reconstruction against a direct solve of D_t U = A U.
    let m1 = lts.mtilde(1.0);
    let mut fd = |t: f64, y: &CMat| (sym.eval_full(t, xi) * y) * cx(0.0, 1.0);
    let direct = ode::integrate_to(&mut fd, 1.0, t_end, &m1, &OdeOptions::with_tol(1e-10))?;
    let rec = lts.mtilde(t_end) * u_end;
    let reconstruction_defect =
        spectral_norm(&(&rec - &direct)) / spectral_norm(&direct).max(1e-300);

    let e = &rec * invert(&m1, "large-time diagonaliser")?;
    let e_inv = invert(&e, "reconstructed propagator")?;
    let det_e = e.clone().determinant();
    let inverse_bound_ratio = spectral_norm(&e_inv) * det_e.norm()
        / ((d as f64) * spectral_norm(&e).powi(d as i32 - 1)).max(1e-300);

    Ok(AsymptoticBasis {
        ts: grid,
        modes,
        convergence_defect,
        wronskian_defect,
        reconstruction_defect,
        inverse_bound_ratio,
    })
}

/// w exp(-i phi) with the real magnitude split into two factors so that a
/// large Im phi cannot overflow before cancelling against |w|.
fn strip_phase(w: &CVec, phi: C) -> CVec {
    let unit = C::from_polar(1.0, -phi.re);
    let half = cx((phi.im / 2.0).exp(), 0.0);
    ((w * unit) * half) * half
}

/// Scale-aware derivative of a matrix-valued function, fourth order in the
/// step 1e-3 (1 + t); one-sided at the left edge of the domain.
fn d_dt_mat(dim: usize, f: impl Fn(f64) -> Result<CMat>, t: f64) -> Result<CMat> {
    let h = 1e-3 * (1.0 + t);
    let (nodes, weights): (&[f64], &[f64]) = if t - 2.0 * h > 0.5 {
        (&[-2.0, -1.0, 1.0, 2.0], &[1.0, -8.0, 8.0, -1.0])
    } else {
        (&[0.0, 1.0, 2.0, 3.0, 4.0], &[-25.0, 48.0, -36.0, 16.0, -3.0])
    };
    let mut acc = CMat::zeros(dim, dim);
    for (&s, &w) in nodes.iter().zip(weights) {
        acc += f(t + s * h)? * cx(w / (12.0 * h), 0.0);
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::{CoeffMatrix, ScalarCoefficient};
    use crate::models;

    fn kg(m0: f64) -> SymbolModel {
        models::build_klein_gordon(ScalarCoefficient::constant(m0), m0).expect("mass model")
    }

    /// gamma + sin(log t), continued by its limit below t = 1.
    fn drifting_sine(gamma: f64) -> ScalarCoefficient {
        ScalarCoefficient::new(move |t: f64| cx(gamma + t.max(1e-12).ln().sin(), 0.0), 0.0)
    }

    fn oscillating(g1: f64, g2: f64) -> SymbolModel {
        models::build_oscillating_pair(drifting_sine(g1), drifting_sine(g2)).expect("pair model")
    }

    /// A(t, xi) = A_inf / t exactly; the residual vanishes identically.
    fn pure_fuchs(a_inf: CMat) -> SymbolModel {
        let d = a_inf.nrows();
        let a = a_inf.clone();
        models::SymbolModel::custom(
            d,
            1,
            move |t: f64, _xi: &[f64]| &a * cx(1.0 / t.max(1e-12), 0.0),
            move |_t: f64, _xi: &[f64]| CMat::zeros(d, d),
        )
    }

    /// Transport diag(1, -1) xi with scale-invariant diagonal damping
    /// i diag(0.4, 1.1) / (1+t).
    fn damped_pair() -> SymbolModel {
        let a1 = CoeffMatrix::constant(&[&[1.0, 0.0], &[0.0, -1.0]]);
        let b = CoeffMatrix::from_entries(
            2,
            2,
            vec![
                ScalarCoefficient::power(0.4, -1.0).scaled(cx(0.0, 1.0)),
                ScalarCoefficient::zero(),
                ScalarCoefficient::zero(),
                ScalarCoefficient::power(1.1, -1.0).scaled(cx(0.0, 1.0)),
            ],
        );
        models::build_first_order(vec![a1], b).expect("first-order model")
    }

    #[test]
    fn mass_limit_matches_closed_form_spectrum() {
        let sym = kg(1.0);
        let lts = large_time_symbol(&sym, (1.0, 1e5)).expect("limit");
        let a = lts.limit_matrix.as_ref().expect("constant route");
        let want = CMat::from_row_slice(
            2,
            2,
            &[cx(0.0, 1.0), cx(1.0, 0.0), cx(1.0, 0.0), cx(0.0, 0.0)],
        );
        assert!(fro_norm(&(a - want)) < 1e-12);
        // Spectrum i/2 +- sqrt(m0^2 - 1/4), ordered by (Im, Re).
        let lam = lts.lambda(17.0);
        let s = (3.0f64).sqrt() / 2.0;
        assert!((lam[0] - cx(-s, 0.5)).norm() < 1e-10);
        assert!((lam[1] - cx(s, 0.5)).norm() < 1e-10);
    }

    #[test]
    fn wave_damping_limit_is_diagonal_with_identity_frame() {
        let sym = models::build_wave_dissipation(ScalarCoefficient::power(1.5, -1.0))
            .expect("wave model");
        let lts = large_time_symbol(&sym, (1.0, 1e5)).expect("limit");
        let lam = lts.lambda(3.0);
        assert!((lam[0] - cx(0.0, 0.0)).norm() < 1e-12);
        assert!((lam[1] - cx(0.0, 1.5)).norm() < 1e-12);
        let m = lts.mtilde(3.0);
        assert!(fro_norm(&(&m - CMat::identity(2, 2))) < 1e-12);
        let a = lts.limit_matrix.as_ref().expect("constant route");
        assert!((a[(1, 1)] - cx(0.0, 1.5)).norm() < 1e-12);
    }

    #[test]
    fn first_order_limit_uses_dissipative_part() {
        let sym = damped_pair();
        let lts = large_time_symbol(&sym, (1.0, 1e5)).expect("limit");
        let lam = lts.lambda(2.0);
        assert!((lam[0] - cx(0.0, 0.4)).norm() < 1e-10);
        assert!((lam[1] - cx(0.0, 1.1)).norm() < 1e-10);
        // Distinct imaginary parts: a uniform gap for any sigma.
        let v = dichotomy(&lts, 2.0, (1.0, 1e5)).expect("verdict");
        assert_eq!(v.kind, DichotomyKind::Strong);
        assert!((v.pair_evidence[0].gap - 0.7).abs() < 1e-10);
    }

    #[test]
    fn oscillating_symbol_keeps_time_dependent_spectrum() {
        let sym = oscillating(0.2, 0.7);
        let lts = large_time_symbol(&sym, (1.0, 1e5)).expect("limit");
        assert!(lts.limit_matrix.is_none());
        let t = 10.0f64;
        let lam = lts.lambda(t);
        assert!((lam[0] - cx(0.0, 0.2 + t.ln().sin())).norm() < 1e-12);
        assert!((lam[1] - cx(0.0, 0.7 + t.ln().sin())).norm() < 1e-12);
    }

    #[test]
    fn divergent_zero_frequency_limit_is_rejected() {
        let sym = models::SymbolModel::custom(
            2,
            1,
            |t: f64, _xi: &[f64]| {
                CMat::from_row_slice(
                    2,
                    2,
                    &[cx(0.0, 0.0), cx((1.0 + t).ln().sin(), 0.0), cx(0.0, 0.0), cx(0.0, 0.0)],
                )
            },
            |_t, _xi| CMat::zeros(2, 2),
        );
        match large_time_symbol(&sym, (1.0, 1e5)) {
            Err(Error::DivergentLimit { .. }) => {}
            other => panic!("expected divergent limit, got {other:?}"),
        }
    }

    #[test]
    fn defective_limit_is_rejected() {
        let j = CMat::from_row_slice(2, 2, &[cx(0.0, 1.0), cx(0.0, 1.0), cx(0.0, 0.0), cx(0.0, 1.0)]);
        let sym = pure_fuchs(j);
        let r = large_time_symbol(&sym, (1.0, 1e5));
        assert!(
            matches!(r, Err(Error::IllConditioned { .. }) | Err(Error::EigenNoConvergence { .. })),
            "expected a diagonalisability failure, got {r:?}"
        );
    }

    #[test]
    fn exact_scaling_has_zero_residual() {
        let a_inf =
            CMat::from_row_slice(2, 2, &[cx(0.0, 0.3), cx(0.0, 0.6), cx(0.0, 0.0), cx(0.0, 0.9)]);
        let sym = pure_fuchs(a_inf);
        let lts = large_time_symbol(&sym, (1.0, 1e4)).expect("limit");
        let res = FuchsResidual::from_model(&sym, &lts);
        for &t in &[1.0, 7.0, 1e3] {
            let r = res.at_probe(t).expect("residual");
            assert!(spectral_norm(&r) < 1e-10, "residual {} at t = {t}", spectral_norm(&r));
        }
    }

    #[test]
    fn zero_residual_integral_is_zero() {
        let res = FuchsResidual::from_fn(2, 1, |_| CMat::zeros(2, 2));
        let cfg = ZoneConfig::default();
        let out = sigma_integrability(&res, 1.0, &[vec![0.0]], &cfg).expect("integral");
        assert_eq!(out.sup, 0.0);
    }

    #[test]
    fn logarithmic_tail_is_flagged_divergent() {
        // |R~| = 1/log(e + t): the integral grows like log log t, which no
        // finite cap reveals by size alone; the decade increments do.
        let res = FuchsResidual::from_fn(2, 1, |t: f64| {
            CMat::identity(2, 2) * cx(1.0 / (std::f64::consts::E + t).ln(), 0.0)
        });
        let cfg = ZoneConfig::default();
        let out = sigma_integrability(&res, 1.0, &[vec![0.0]], &cfg).expect("integral");
        assert!(out.sup.is_infinite());
        let row = &out.rows[0];
        assert!(row.partial.is_finite() && row.partial < 5.0);
        let raabe = row.raabe.expect("tail statistic");
        assert!(raabe < RAABE_DIVERGENT, "raabe = {raabe}");
    }

    #[test]
    fn decaying_mass_correction_is_summable() {
        let sym = kg(1.0);
        let lts = large_time_symbol(&sym, (1.0, 1e5)).expect("limit");
        let res = FuchsResidual::from_model(&sym, &lts);
        let cfg = ZoneConfig::default();
        let out = sigma_integrability(&res, 1.0, &[vec![0.0]], &cfg).expect("integral");
        assert!(out.sup.is_finite());
        assert!(out.sup > 0.01 && out.sup < 2.0, "sup = {}", out.sup);
    }

    #[test]
    fn principal_part_contribution_is_capped_by_zone_constant() {
        // At xi != 0 the residual carries t A_hom; its integral up to the
        // separating time stays below a constant set by N alone. The values
        // converge as |xi| -> 0 but only at a sqrt(|xi|) rate (the crossover
        // where |xi| t overtakes the decaying part sits at t ~ |xi|^{-1/2}),
        // so check contraction of consecutive gaps rather than flat
        // agreement.
        let sym = damped_pair();
        let lts = large_time_symbol(&sym, (1.0, 1e5)).expect("limit");
        let res = FuchsResidual::from_model(&sym, &lts);
        let cfg = ZoneConfig::default();
        let set = vec![vec![1e-2], vec![1e-3], vec![1e-4]];
        let out = sigma_integrability(&res, 1.0, &set, &cfg).expect("integral");
        assert_eq!(out.rows.len(), 3);
        assert!(out.sup <= 2.5, "sup = {}", out.sup);
        for row in &out.rows {
            assert!(
                row.value > 1.2 && row.value < 2.2,
                "xi = {}: value = {}",
                row.xi_norm,
                row.value
            );
        }
        let d1 = (out.rows[0].value - out.rows[1].value).abs();
        let d2 = (out.rows[1].value - out.rows[2].value).abs();
        assert!(d2 < d1, "gaps must shrink: {} then {}", d1, d2);
        assert!(d2 < 0.08, "d2 = {}", d2);
    }

    #[test]
    fn mass_perturbation_summability_routes_by_exponent() {
        let cfg = ZoneConfig::default();
        // Bump amplitudes in l^2 but not l^1: divergent at sigma = 1,
        // finite at sigma = 2.
        let amps: Vec<f64> = (0..28).map(|j| 0.6 / (j as f64 + 1.0)).collect();
        let sym = models::build_klein_gordon(ScalarCoefficient::bump_sum(1.0, amps), 1.0)
            .expect("mass model");
        let lts = large_time_symbol(&sym, (1.0, 1e5)).expect("limit");
        let res = FuchsResidual::from_model(&sym, &lts);
        let slow = sigma_integrability(&res, 1.0, &[vec![0.0]], &cfg).expect("integral");
        assert!(slow.sup.is_infinite(), "partial = {}", slow.rows[0].partial);
        let fast = sigma_integrability(&res, 2.0, &[vec![0.0]], &cfg).expect("integral");
        assert!(fast.sup.is_finite(), "raabe = {:?}", fast.rows[0].raabe);

        // Summable amplitudes keep sigma = 1.
        let amps: Vec<f64> = (0..28).map(|j| 0.6 * 0.5f64.powi(j)).collect();
        let sym = models::build_klein_gordon(ScalarCoefficient::bump_sum(1.0, amps), 1.0)
            .expect("mass model");
        let lts = large_time_symbol(&sym, (1.0, 1e5)).expect("limit");
        let res = FuchsResidual::from_model(&sym, &lts);
        let out = sigma_integrability(&res, 1.0, &[vec![0.0]], &cfg).expect("integral");
        assert!(out.sup.is_finite(), "sup = {}", out.sup);
    }

    #[test]
    fn flat_spectrum_has_zero_exponent() {
        let lts = LargeTimeSymbol::varying(2, |_| vec![cx(0.0, 0.0); 2], 1.0).expect("symbol");
        let rep = mu_exponent(&lts, (1.0, 1e4)).expect("report");
        assert_eq!(rep.mu, 0.0);
        assert!(rep.window_trace.iter().all(|w| w.settled));
    }

    #[test]
    fn unit_mass_exponent_is_one_half() {
        let sym = kg(1.0);
        let lts = large_time_symbol(&sym, (1.0, 1e5)).expect("limit");
        let rep = mu_exponent(&lts, (1.0, 1e4)).expect("report");
        assert!((rep.mu - 0.5).abs() < 0.02, "mu = {}", rep.mu);
        assert!(rep.mu_j.iter().all(|m| (m - 0.5).abs() < 0.02));
        assert_eq!(rep.mu, rep.mu_j.iter().cloned().fold(f64::INFINITY, f64::min));
    }

    #[test]
    fn oscillating_rates_average_to_their_offsets() {
        let sym = oscillating(0.2, 0.7);
        let lts = large_time_symbol(&sym, (1.0, 1e5)).expect("limit");
        let rep = mu_exponent(&lts, (1.0, 1e4)).expect("report");
        assert!((rep.mu_j[0] - 0.2).abs() < 0.02, "mu_1 = {}", rep.mu_j[0]);
        assert!((rep.mu_j[1] - 0.7).abs() < 0.02, "mu_2 = {}", rep.mu_j[1]);
        assert!((rep.mu - 0.2).abs() < 0.02);
        // The window spread records the unresolved oscillation.
        assert_eq!(rep.window_trace.len(), 2);
        assert!(rep.window_trace[0].spread > 0.0);
    }

    #[test]
    fn constant_spectrum_is_one_sided_for_each_pair() {
        let lts = LargeTimeSymbol::constant(
            vec![cx(0.0, 0.3), cx(0.0, 1.1)],
            CMat::identity(2, 2),
            1.0,
        )
        .expect("symbol");
        let v = dichotomy(&lts, 1.0, (1.0, 1e5)).expect("verdict");
        assert_eq!(v.kind, DichotomyKind::Weak);
        let p = &v.pair_evidence[0];
        assert!(p.bounded_above || p.bounded_below);
    }

    #[test]
    fn oscillating_difference_is_bounded_on_both_sides() {
        // Im int sin(log tau) dtau/tau = 1 - cos(log t) stays in [0, 2].
        let lts = LargeTimeSymbol::varying(
            2,
            |t: f64| vec![cx(0.0, 0.3 + t.ln().sin()), cx(0.0, 0.3)],
            1.0,
        )
        .expect("symbol");
        let v = dichotomy(&lts, 1.0, (1.0, 1e6)).expect("verdict");
        assert_eq!(v.kind, DichotomyKind::Weak);
        let p = &v.pair_evidence[0];
        assert!(p.bounded_above && p.bounded_below, "slopes {:?}", p.envelope_slopes);
    }

    #[test]
    fn equal_imaginary_parts_fail_strong_dichotomy() {
        // Both Fuchs eigenvalues have Im = 1/2 above the mass threshold, so
        // no pointwise gap exists for sigma > 1 and the reduction refuses.
        let sym = kg(1.0);
        let lts = large_time_symbol(&sym, (1.0, 1e5)).expect("limit");
        let v = dichotomy(&lts, 2.0, (1.0, 1e5)).expect("verdict");
        assert_eq!(v.kind, DichotomyKind::Failed);
        assert!(v.pair_evidence[0].gap < 1e-10);
        let res = FuchsResidual::from_model(&sym, &lts);
        match hartman_wintner_step(&lts, &res) {
            Err(Error::DichotomyUnverified { .. }) => {}
            other => panic!("expected a refused step, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn diagonal_residual_moves_into_spectrum() {
        let lts = LargeTimeSymbol::constant(
            vec![cx(0.0, 0.2), cx(0.0, 0.9)],
            CMat::identity(2, 2),
            1.0,
        )
        .expect("symbol");
        let res = FuchsResidual::from_fn(2, 1, |t: f64| {
            CMat::from_row_slice(
                2,
                2,
                &[cx(0.3 / t, 0.0), cx(0.0, 0.0), cx(0.0, 0.0), cx(0.0, 0.1 / t)],
            )
        });
        let (stepped, remainder) = hartman_wintner_step(&lts, &res).expect("step");
        let t = 5.0;
        let lam = stepped.lambda(t);
        assert!((lam[0] - (cx(0.0, 0.2) + cx(0.3 / t, 0.0))).norm() < 1e-12);
        assert!((lam[1] - (cx(0.0, 0.9) + cx(0.0, 0.1 / t))).norm() < 1e-12);
        // Q = 0, so the conjugation is exact and nothing is left over.
        let r1 = remainder.at_probe(t).expect("remainder");
        assert!(spectral_norm(&r1) < 1e-12);
        assert!((stepped.sigma - 1.0).abs() < 1e-15);
    }

    #[test]
    fn conjugated_system_reproduces_original_solutions() {
        // det(I + Q) = 1 - 1/t for this residual: the conjugation is
        // singular exactly at t = 1, so solutions are compared from t = 2.
        let lts = LargeTimeSymbol::constant(
            vec![cx(0.0, 0.0), cx(0.0, 1.0)],
            CMat::identity(2, 2),
            2.0,
        )
        .expect("symbol");
        let res = FuchsResidual::from_fn(2, 1, |t: f64| {
            let r = t.powf(-0.5);
            CMat::from_row_slice(2, 2, &[cx(0.0, 0.0), cx(r, 0.0), cx(r, 0.0), cx(0.0, 0.0)])
        });
        let (stepped, remainder) = hartman_wintner_step(&lts, &res).expect("step");
        assert!((stepped.sigma - 1.0).abs() < 1e-15);

        let (t0, t1) = (2.0, 1e4);
        let opts = OdeOptions::with_tol(1e-10);
        let mut f_orig = |t: f64, y: &CMat| {
            let mut g = res.at_probe(t).expect("residual");
            let lam = lts.lambda(t);
            for j in 0..2 {
                g[(j, j)] += lam[j];
            }
            (g * y) * cx(0.0, 1.0 / t)
        };
        let e_orig = ode::integrate_to(&mut f_orig, t0, t1, &CMat::identity(2, 2), &opts)
            .expect("original solve");
        let mut f_new = |t: f64, y: &CMat| {
            let mut g = remainder.at_probe(t).expect("remainder");
            let lam = stepped.lambda(t);
            for j in 0..2 {
                g[(j, j)] += lam[j];
            }
            (g * y) * cx(0.0, 1.0 / t)
        };
        let e_new = ode::integrate_to(&mut f_new, t0, t1, &CMat::identity(2, 2), &opts)
            .expect("stepped solve");

        // M~ of the stepped symbol is I + Q; map the stepped solution back.
        let p1 = stepped.mtilde(t1);
        let p0 = invert(&stepped.mtilde(t0), "conjugation at start").expect("invertible");
        let mapped = p1 * e_new * p0;
        let rel = spectral_norm(&(&mapped - &e_orig)) / spectral_norm(&e_orig);
        assert!(rel < 1e-6, "transform defect {rel}");
    }

    #[test]
    fn step_halves_the_integrability_exponent() {
        let lts = LargeTimeSymbol::constant(
            vec![cx(0.0, 0.0), cx(0.0, 1.0)],
            CMat::identity(2, 2),
            2.0,
        )
        .expect("symbol");
        let res = FuchsResidual::from_fn(2, 1, |t: f64| {
            let r = 0.5 * t.powf(-0.5);
            CMat::from_row_slice(2, 2, &[cx(0.0, 0.0), cx(r, 0.0), cx(r, 0.0), cx(0.0, 0.0)])
        });
        let (stepped, remainder) = hartman_wintner_step(&lts, &res).expect("step");
        assert!((stepped.sigma - 1.0).abs() < 1e-15);
        // The remainder is L^1(dt/t) although the input was only L^2.
        let cfg = ZoneConfig::default();
        let out = sigma_integrability(&remainder, 1.0, &[vec![0.0]], &cfg).expect("integral");
        assert!(out.sup.is_finite() && out.sup < 10.0, "sup = {}", out.sup);
    }

    #[test]
    fn stepped_residual_matches_symbol_rederivation() {
        // The step returns the remainder in closed form; recomputing the
        // residual of the stepped symbol from the model must agree. The
        // oscillating mass keeps the residual off-diagonal, so the stepped
        // frame is genuinely time-dependent and the rederivation exercises
        // the frame-derivative term.
        let sym = models::build_klein_gordon(
            ScalarCoefficient::sin_log(0.3, 0.2, 1.0, 0.0),
            0.3,
        )
        .expect("mass model");
        let lts = large_time_symbol(&sym, (1.0, 1e5)).expect("limit");
        let res = FuchsResidual::from_model(&sym, &lts);
        let q_probe = {
            let lam = lts.lambda(2.0);
            let r = res.at_probe(2.0).expect("residual");
            r[(0, 1)].norm() / (lam[1] - lam[0]).norm()
        };
        assert!(q_probe > 1e-3, "conjugation should be nontrivial, |Q| = {q_probe}");
        let (stepped, remainder) = hartman_wintner_step(&lts, &res).expect("step");
        let rederived = FuchsResidual::from_model(&sym, &stepped);
        for &t in &[2.0, 10.0, 100.0] {
            let a = remainder.at_probe(t).expect("closed form");
            let b = rederived.at_probe(t).expect("rederived");
            let rel = fro_norm(&(&a - &b)) / (1.0 + fro_norm(&a));
            assert!(rel < 1e-5, "mismatch {rel} at t = {t}");
        }
    }

    #[test]
    fn free_modes_are_exact() {
        let a_inf =
            CMat::from_row_slice(2, 2, &[cx(0.0, 0.3), cx(0.0, 0.6), cx(0.0, 0.0), cx(0.0, 0.9)]);
        let sym = pure_fuchs(a_inf);
        let lts = large_time_symbol(&sym, (1.0, 1e4)).expect("limit");
        let cfg = ZoneConfig::default();
        let basis = levinson_modes(&sym, &lts, &[0.0], (1.0, 1e4), &cfg).expect("modes");
        for (j, mode) in basis.modes.iter().enumerate() {
            // Phase stripping amplifies solver error on the fast-decaying
            // mode by the spread of the spectrum; 1e-6 leaves ~40x headroom.
            assert!(mode.defect < 1e-6, "defect {} for mode {j}", mode.defect);
            let want: CVec = lts.mtilde(1.0).column(j).into_owned();
            assert!((&mode.v_limit - &want).norm() < 1e-6);
        }
        assert!(basis.wronskian_defect < 1e-6);
        assert!(basis.reconstruction_defect < 1e-6);
        assert!(basis.inverse_bound_ratio <= 1.0 + 1e-9);
    }

    #[test]
    fn mass_modes_converge_to_limit_eigenvectors() {
        // The constant-mass residual is diagonal at xi = 0, so the modes
        // settle like 1/t; at xi = 1e-6 the frequency coupling adds a drift
        // of order (xi (1+t))^2 / 2, still below 1e-3 at this horizon.
        let sym = kg(1.0);
        let lts = large_time_symbol(&sym, (1.0, 1e5)).expect("limit");
        let cfg = ZoneConfig::default();
        let basis = levinson_modes(&sym, &lts, &[1e-6], (1.0, 3e4), &cfg).expect("modes");
        for (j, mode) in basis.modes.iter().enumerate() {
            assert!(mode.defect < 5e-3, "defect {} for mode {j}", mode.defect);
            // Collinearity with the limit eigenvector; the residual's
            // diagonal contributes a scalar factor the phases do not strip.
            let want: CVec = lts.mtilde(1.0).column(j).into_owned();
            let overlap = mode.v_limit.dotc(&want).norm() / (mode.v_limit.norm() * want.norm());
            assert!(overlap > 1.0 - 1e-6, "overlap {overlap} for mode {j}");
        }
        assert!(basis.wronskian_defect < 1e-6, "wronskian {}", basis.wronskian_defect);
        assert!(basis.reconstruction_defect < 1e-6, "recon {}", basis.reconstruction_defect);
    }

    #[test]
    fn modes_reject_frequencies_leaving_the_zone() {
        let sym = kg(1.0);
        let lts = large_time_symbol(&sym, (1.0, 1e5)).expect("limit");
        let cfg = ZoneConfig::default();
        match levinson_modes(&sym, &lts, &[1e-2], (1.0, 1e4), &cfg) {
            Err(Error::OutsideZone { .. }) => {}
            other => panic!("expected a zone error, got {:?}", other.map(|_| ())),
        }
    }

    /// max over the sampled window of |E(t, s)| ((1+t)/(1+s))^mu.
    fn norm_ratio_extremes(
        sym: &SymbolModel,
        s: f64,
        xi: &[f64],
        t_end: f64,
        mu_eff: f64,
        split: f64,
    ) -> (f64, f64) {
        let n = ((24.0 * (t_end / s).log10()).ceil() as usize + 1).max(32);
        let grid = quad::log_grid(s, t_end, n);
        let mut f = |t: f64, y: &CMat| (sym.eval_full(t, xi) * y) * cx(0.0, 1.0);
        let es = ode::integrate_grid(
            &mut f,
            &grid,
            &CMat::identity(sym.dim, sym.dim),
            &OdeOptions::with_tol(1e-9),
        )
        .expect("propagator sweep");
        let mut early = 0.0f64;
        let mut late = 0.0f64;
        for (&t, e) in grid.iter().zip(&es) {
            let ratio = spectral_norm(e) * ((1.0 + t) / (1.0 + s)).powf(mu_eff);
            if t <= split {
                early = early.max(ratio);
            } else {
                late = late.max(ratio);
            }
        }
        (early, late)
    }

    #[test]
    fn pd_zone_norms_obey_the_exponent_uniformly() {
        // A single constant must cap |E(t, s)| ((1+t)/(1+s))^mu over the
        // whole zone: the late-window maximum may not exceed the early one
        // by more than a modest factor.
        let cases: Vec<(SymbolModel, f64)> = vec![(kg(1.0), 0.5), (oscillating(0.2, 0.7), 0.2)];
        for (sym, mu) in cases {
            for &s in &[1.0, 10.0, 100.0] {
                for xi in [vec![0.0], vec![1e-6]] {
                    let (early, late) = norm_ratio_extremes(&sym, s, &xi, 1e5, mu, 1e3);
                    assert!(
                        late <= 1.15 * early,
                        "late {late} vs early {early} (s = {s}, family {:?})",
                        sym.family
                    );
                }
            }
        }
    }

    #[test]
    fn square_summable_mass_needs_the_epsilon_loss() {
        // With bump amplitudes only in l^2 the Hoelder loss is genuine: the
        // ratio at exponent mu - 0.05 must stop growing by the far window.
        let amps: Vec<f64> = (0..28).map(|j| 0.1 / (j as f64 + 1.0)).collect();
        let sym = models::build_klein_gordon(ScalarCoefficient::bump_sum(1.0, amps), 1.0)
            .expect("mass model");
        let n = 24 * 6 + 1;
        let grid = quad::log_grid(1.0, 1e6, n);
        let mut f = |t: f64, y: &CMat| (sym.eval_full(t, &[0.0]) * y) * cx(0.0, 1.0);
        let es = ode::integrate_grid(&mut f, &grid, &CMat::identity(2, 2), &OdeOptions::with_tol(1e-9))
            .expect("propagator sweep");
        let mut lx = Vec::new();
        let mut ly = Vec::new();
        for (&t, e) in grid.iter().zip(&es) {
            if t >= 1e4 {
                lx.push(t.ln());
                ly.push((spectral_norm(e) * (1.0 + t).powf(0.45)).ln());
            }
        }
        let lf = fit::line_fit(&lx, &ly).expect("trend");
        assert!(lf.slope < 0.02, "ratio still growing: slope {}", lf.slope);
    }

    #[test]
    fn hoelder_envelope_dominates_phase_integrals() {
        // int_1^t r dtau/tau <= |r|_{L^sigma} (log t)^{1/sigma'}; checked as
        // stated for three residual profiles, with equality for constants.
        let cases: Vec<(Box<dyn Fn(f64) -> f64>, f64)> = vec![
            (Box::new(|t: f64| t.powf(-0.25)), 2.0),
            (Box::new(|t: f64| 1.0 / (1.0 + t.ln())), 2.0),
            (Box::new(|_t: f64| 0.3), 1.5),
        ];
        for (r, sigma) in &cases {
            for &t in &[10.0, 1e3, 1e6] {
                let lhs = quad::integrate_log_weight(|s| r(s), 1.0, t, 1e-12).expect("lhs");
                let norm_sig = quad::integrate_log_weight(|s| r(s).powf(*sigma), 1.0, t, 1e-12)
                    .expect("norm")
                    .powf(1.0 / sigma);
                let rhs = norm_sig * t.ln().powf(1.0 - 1.0 / sigma);
                assert!(lhs <= rhs * (1.0 + 1e-9), "lhs {lhs} rhs {rhs} at t = {t}");
            }
        }
        // The constant profile attains the bound.
        let t: f64 = 1e3;
        let lhs = 0.3 * t.ln();
        let rhs = (0.3f64.powf(1.5) * t.ln()).powf(1.0 / 1.5) * t.ln().powf(1.0 / 3.0);
        assert!((lhs - rhs).abs() < 1e-9 * rhs);
    }

    #[test]
    fn frequency_derivatives_stay_bounded_at_the_crossover() {
        // |D_xi^a E(t_xi, 0, xi)| |xi|^|a| (1 + t_xi)^mu over small |xi|,
        // derivatives by divided differences: bounded, no drift.
        let sym = kg(1.0);
        let mu = 0.5;
        let opts = OdeOptions::with_tol(1e-10);
        let mut p1 = Vec::new();
        let mut p2 = Vec::new();
        let mut lx = Vec::new();
        let xis = quad::log_grid(1e-4, 0.5, 8);
        for &x in &xis {
            let t_xi = 1.0 / x - 1.0;
            if t_xi <= 1.0 {
                continue;
            }
            let h = 0.05 * x;
            let solve = |xv: f64| {
                let mut f = |t: f64, y: &CMat| (sym.eval_full(t, &[xv]) * y) * cx(0.0, 1.0);
                ode::integrate_to(&mut f, 0.0, t_xi, &CMat::identity(2, 2), &opts)
                    .expect("crossover solve")
            };
            let em = solve(x - h);
            let e0 = solve(x);
            let ep = solve(x + h);
            let d1 = (&ep - &em) * cx(1.0 / (2.0 * h), 0.0);
            let d2 = (ep + em - &e0 * cx(2.0, 0.0)) * cx(1.0 / (h * h), 0.0);
            let w = (1.0 + t_xi).powf(mu);
            p1.push(spectral_norm(&d1) * x * w);
            p2.push(spectral_norm(&d2) * x * x * w);
            lx.push(x.ln());
        }
        for p in [&p1, &p2] {
            let top = p.iter().cloned().fold(0.0f64, f64::max);
            let bot = p.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(top / bot < 30.0, "spread {} over the xi range", top / bot);
            let lf = fit::line_fit(&lx, &p.iter().map(|v| v.ln()).collect::<Vec<_>>())
                .expect("trend");
            assert!(lf.slope.abs() < 0.3, "drift slope {}", lf.slope);
        }
    }
}
