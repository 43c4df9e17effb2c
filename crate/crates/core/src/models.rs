//! Symbol models: the map (t, xi) -> A(t, xi) for each supported family.
//!
//! Every model separates the positively homogeneous principal part
//! A_hom(t, xi) from the full symbol; the difference carries the decay
//! structure that the exponent machinery feeds on. Families with closed-form
//! limits record them in `AnalyticPredictions`, which is advisory metadata
//! only: no solver reads it, the test suite compares against it.

use std::fmt;
use std::sync::Arc;

use crate::coeff::{CoeffMatrix, ScalarCoefficient};
use crate::error::{Error, Result};
use crate::fit;
use crate::linalg::{cx, hermitian_eigen, CMat};
use crate::quad;
use crate::zones::{aux_h_dt_radial, aux_h_radial, norm, ZoneConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FamilyTag {
    FirstOrderDifferential,
    WaveDissipation,
    KleinGordon,
    OscillatingPair,
    Cosmology,
    Custom,
}

/// Closed-form expectations, where the family supplies them. Never consumed
/// by solvers; exponents computed from the symbol are compared against these
/// in tests and reports.
#[derive(Clone, Debug, Default)]
pub struct AnalyticPredictions {
    pub kappa_plus: Option<f64>,
    pub kappa_minus: Option<f64>,
    /// Large-time (pd-zone) exponent.
    pub mu: Option<f64>,
    /// Per-mode imaginary parts of the Fuchs spectrum.
    pub mu_components: Option<Vec<f64>>,
    /// Hyperbolic-zone dissipation exponent: liminf int_1^t b / log t for
    /// wave-type models (the energy decays with half this rate).
    pub mu_hyperbolic: Option<f64>,
    /// (1+t) B(t) -> B_inf for first-order families.
    pub dissipative_limit: Option<CMat>,
    /// t A(t, 0) -> A_inf for Fuchs-type models.
    pub fuchs_limit: Option<CMat>,
}

type SymbolFn = Arc<dyn Fn(f64, &[f64]) -> CMat + Send + Sync>;

#[derive(Clone)]
pub struct SymbolModel {
    pub dim: usize,
    pub space_dim: usize,
    pub family: FamilyTag,
    /// Named scalar parameters for reports.
    pub params: Vec<(String, f64)>,
    pub predictions: AnalyticPredictions,
    pub warnings: Vec<String>,
    full: SymbolFn,
    principal: SymbolFn,
}

impl fmt::Debug for SymbolModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SymbolModel")
            .field("dim", &self.dim)
            .field("space_dim", &self.space_dim)
            .field("family", &self.family)
            .field("params", &self.params)
            .finish()
    }
}

impl SymbolModel {
    pub fn custom(
        dim: usize,
        space_dim: usize,
        full: impl Fn(f64, &[f64]) -> CMat + Send + Sync + 'static,
        principal: impl Fn(f64, &[f64]) -> CMat + Send + Sync + 'static,
    ) -> Self {
        SymbolModel {
            dim,
            space_dim,
            family: FamilyTag::Custom,
            params: Vec::new(),
            predictions: AnalyticPredictions::default(),
            warnings: Vec::new(),
            full: Arc::new(full),
            principal: Arc::new(principal),
        }
    }

    pub fn eval_full(&self, t: f64, xi: &[f64]) -> CMat {
        (self.full)(t, xi)
    }

    pub fn eval_principal(&self, t: f64, xi: &[f64]) -> CMat {
        (self.principal)(t, xi)
    }

    /// A - A_hom: the part below principal order.
    pub fn eval_lower(&self, t: f64, xi: &[f64]) -> CMat {
        self.eval_full(t, xi) - self.eval_principal(t, xi)
    }
}

/// A(t, xi) = sum_j A_j(t) xi_j + B(t) with T{0} first-order coefficients
/// and a T{1} dissipative part.
pub fn build_first_order(a_coeffs: Vec<CoeffMatrix>, b: CoeffMatrix) -> Result<SymbolModel> {
    if a_coeffs.is_empty() {
        return Err(Error::invalid("at least one first-order coefficient matrix required"));
    }
    let d = a_coeffs[0].shape().0;
    if d < 2 {
        return Err(Error::invalid("first-order systems need dimension >= 2"));
    }
    for (j, a) in a_coeffs.iter().enumerate() {
        if a.shape() != (d, d) {
            return Err(Error::Dimension {
                context: format!("first-order coefficient matrix {j}"),
                expected: format!("{d}x{d}"),
                got: format!("{}x{}", a.shape().0, a.shape().1),
            });
        }
        if a.decay_class() < 0.0 {
            return Err(Error::invalid(format!(
                "coefficient matrix {j} claims growth (T{{{}}}); T{{0}} required",
                a.decay_class()
            )));
        }
    }
    if b.shape() != (d, d) {
        return Err(Error::Dimension {
            context: "dissipative matrix".into(),
            expected: format!("{d}x{d}"),
            got: format!("{}x{}", b.shape().0, b.shape().1),
        });
    }
    if b.decay_class() < 1.0 {
        return Err(Error::invalid(format!(
            "dissipative matrix claims T{{{}}}; T{{1}} required",
            b.decay_class()
        )));
    }
    let space_dim = a_coeffs.len();

    let mut predictions = AnalyticPredictions::default();
    // (1+t) B(t) -> B_inf entrywise, when every entry has a scaled limit.
    let mut b_inf = CMat::zeros(d, d);
    let mut have_b_inf = true;
    for i in 0..d {
        for j in 0..d {
            match b.entry(i, j).scaled_limit() {
                Some(v) => b_inf[(i, j)] = v,
                None => {
                    have_b_inf = false;
                }
            }
        }
    }
    if have_b_inf {
        // With t-constant A_j the subprincipal integrals are Rayleigh
        // quotients of the skew part of B_inf, so its extreme eigenvalues
        // bound kappa +/-. (For the systems of interest B_inf = i * real
        // diagonal, and the skew part is that diagonal.)
        let a_const = a_coeffs.iter().all(|a| {
            let (r, c) = a.shape();
            (0..r).all(|i| {
                (0..c).all(|j| {
                    matches!(a.entry(i, j).preset, crate::coeff::Preset::Constant(_))
                })
            })
        });
        if a_const {
            let skew = (&b_inf - b_inf.adjoint()).map(|z| z / cx(0.0, 2.0));
            let (vals, _) = hermitian_eigen(&skew);
            predictions.kappa_plus = vals.iter().cloned().reduce(f64::min);
            predictions.kappa_minus = vals.iter().cloned().reduce(f64::max);
        }
        predictions.dissipative_limit = Some(b_inf);
    }

    let a_full = a_coeffs.clone();
    let b_full = b.clone();
    let full = move |t: f64, xi: &[f64]| {
        assert_eq!(xi.len(), a_full.len(), "frequency dimension mismatch");
        let mut m = b_full.eval(t);
        for (j, a) in a_full.iter().enumerate() {
            if xi[j] != 0.0 {
                m += a.eval(t) * cx(xi[j], 0.0);
            }
        }
        m
    };
    let principal = move |t: f64, xi: &[f64]| {
        assert_eq!(xi.len(), a_coeffs.len(), "frequency dimension mismatch");
        let mut m = CMat::zeros(d, d);
        for (j, a) in a_coeffs.iter().enumerate() {
            if xi[j] != 0.0 {
                m += a.eval(t) * cx(xi[j], 0.0);
            }
        }
        m
    };

    Ok(SymbolModel {
        dim: d,
        space_dim,
        family: FamilyTag::FirstOrderDifferential,
        params: Vec::new(),
        predictions,
        warnings: Vec::new(),
        full: Arc::new(full),
        principal: Arc::new(principal),
    })
}

/// The damped-wave symbol [[0, |xi|], [|xi|, i b(t)]] of a wave equation
/// with dissipation b u_t.
pub fn build_wave_dissipation(b: ScalarCoefficient) -> Result<SymbolModel> {
    if b.decay_class < 1.0 {
        return Err(Error::invalid(format!(
            "dissipation claims T{{{}}}; scale-invariant damping needs T{{1}}",
            b.decay_class
        )));
    }
    let mut warnings = Vec::new();
    for i in 0..40 {
        let t = 10f64.powf(i as f64 / 5.0) - 1.0;
        let v = b.value(t);
        if v.im.abs() > 1e-12 * (1.0 + v.norm()) {
            return Err(Error::invalid("dissipation must be real-valued"));
        }
        if v.re < -1e-14 {
            warnings.push(format!(
                "dissipation negative at t = {t:.3e}; weak dichotomy unverified"
            ));
            break;
        }
    }

    let mut predictions = AnalyticPredictions::default();
    let scaled_limit_re = b.scaled_limit().filter(|z| z.im == 0.0).map(|z| z.re);
    if let Some(mu0) = scaled_limit_re {
        predictions.mu_hyperbolic = Some(mu0);
        predictions.kappa_plus = Some(mu0 / 2.0);
        predictions.kappa_minus = Some(mu0 / 2.0);
        // t A(t, 0) -> [[0, 0], [0, i mu0]]: Fuchs spectrum {0, i mu0}.
        predictions.fuchs_limit =
            Some(CMat::from_row_slice(2, 2, &[cx(0.0, 0.0), cx(0.0, 0.0), cx(0.0, 0.0), cx(0.0, mu0)]));
        predictions.mu_components = Some(vec![0.0, mu0]);
        predictions.mu = Some(0f64.min(mu0));
    }
    let params = match scaled_limit_re {
        Some(mu0) => vec![("mu0".to_string(), mu0)],
        None => Vec::new(),
    };

    let bb = b.clone();
    let full = move |t: f64, xi: &[f64]| {
        let x = norm(xi);
        CMat::from_row_slice(
            2,
            2,
            &[cx(0.0, 0.0), cx(x, 0.0), cx(x, 0.0), cx(0.0, bb.value_re(t))],
        )
    };
    let principal = |_t: f64, xi: &[f64]| {
        let x = norm(xi);
        CMat::from_row_slice(2, 2, &[cx(0.0, 0.0), cx(x, 0.0), cx(x, 0.0), cx(0.0, 0.0)])
    };

    Ok(SymbolModel {
        dim: 2,
        space_dim: 1,
        family: FamilyTag::WaveDissipation,
        params,
        predictions,
        warnings,
        full: Arc::new(full),
        principal: Arc::new(principal),
    })
}

/// The Klein-Gordon symbol of u_tt - Lap u + m^2(t)/(1+t)^2 u = 0 in the
/// unknown (w u^, D_t u^) with w = sqrt(|xi|^2 + (1+t)^{-2}).
pub fn build_klein_gordon(m: ScalarCoefficient, m0: f64) -> Result<SymbolModel> {
    if m0 <= 0.0 {
        return Err(Error::invalid("mass limit m0 must be positive"));
    }
    for i in 0..40 {
        let t = 10f64.powf(i as f64 / 5.0) - 1.0;
        let v = m.value(t);
        if v.im.abs() > 1e-12 || v.re <= 0.0 {
            return Err(Error::invalid(format!(
                "mass coefficient must be real and strictly positive (t = {t:.3e})"
            )));
        }
    }
    if m.decay_class < 0.0 {
        return Err(Error::invalid("mass coefficient must claim T{0}"));
    }

    let mut predictions = AnalyticPredictions::default();
    predictions.fuchs_limit = Some(CMat::from_row_slice(
        2,
        2,
        &[cx(0.0, 1.0), cx(1.0, 0.0), cx(m0 * m0, 0.0), cx(0.0, 0.0)],
    ));
    // Closed-form exponent of the source family.
    predictions.mu = Some(if m0 >= 0.5 { 0.5 } else { 0.5 + (0.25 - m0 * m0).sqrt() });
    // Imaginary parts of spec A_inf = i/2 +- sqrt(m0^2 - 1/4).
    predictions.mu_components = Some(if m0 >= 0.5 {
        vec![0.5, 0.5]
    } else {
        let s = (0.25 - m0 * m0).sqrt();
        vec![0.5 - s, 0.5 + s]
    });

    let mm = m.clone();
    let full = move |t: f64, xi: &[f64]| {
        let x = norm(xi);
        let shift = 1.0 / (1.0 + t);
        let w = (x * x + shift * shift).sqrt();
        let mv = mm.value_re(t);
        CMat::from_row_slice(
            2,
            2,
            &[
                cx(0.0, shift * shift * shift / (w * w)),
                cx(w, 0.0),
                cx((x * x + mv * mv * shift * shift) / w, 0.0),
                cx(0.0, 0.0),
            ],
        )
    };
    let principal = |_t: f64, xi: &[f64]| {
        let x = norm(xi);
        CMat::from_row_slice(2, 2, &[cx(0.0, 0.0), cx(x, 0.0), cx(x, 0.0), cx(0.0, 0.0)])
    };

    Ok(SymbolModel {
        dim: 2,
        space_dim: 1,
        family: FamilyTag::KleinGordon,
        params: vec![("m0".to_string(), m0)],
        predictions,
        warnings: Vec::new(),
        full: Arc::new(full),
        principal: Arc::new(principal),
    })
}

/// [[0, |xi|], [|xi|, 0]] + i/(1+t) diag(b1, b2): two wave modes coupled
/// only through the principal part, with oscillation-capable dissipation.
pub fn build_oscillating_pair(
    b1: ScalarCoefficient,
    b2: ScalarCoefficient,
) -> Result<SymbolModel> {
    for b in [&b1, &b2] {
        if b.decay_class < 0.0 {
            return Err(Error::invalid("oscillating coefficients must claim T{0}"));
        }
        for i in 0..20 {
            let t = 10f64.powf(i as f64 / 3.0) - 1.0;
            if b.value(t).im.abs() > 1e-12 {
                return Err(Error::invalid("oscillating coefficients must be real-valued"));
            }
        }
    }

    let mut predictions = AnalyticPredictions::default();
    let means = (b1.log_average(), b2.log_average());
    if let (Some(g1), Some(g2)) = means {
        predictions.mu_components = Some(vec![g1, g2]);
        predictions.mu = Some(g1.min(g2));
    }
    use crate::coeff::Preset;
    if let (Preset::Constant(c1), Preset::Constant(c2)) = (&b1.preset, &b2.preset) {
        // F0 = i (b1 + b2) / (2 (1+t)) I integrates exactly.
        predictions.kappa_plus = Some((c1 + c2) / 2.0);
        predictions.kappa_minus = Some((c1 + c2) / 2.0);
    }

    let (c1, c2) = (b1.clone(), b2.clone());
    let full = move |t: f64, xi: &[f64]| {
        let x = norm(xi);
        let s = 1.0 / (1.0 + t);
        CMat::from_row_slice(
            2,
            2,
            &[
                cx(0.0, s * c1.value_re(t)),
                cx(x, 0.0),
                cx(x, 0.0),
                cx(0.0, s * c2.value_re(t)),
            ],
        )
    };
    let principal = |_t: f64, xi: &[f64]| {
        let x = norm(xi);
        CMat::from_row_slice(2, 2, &[cx(0.0, 0.0), cx(x, 0.0), cx(x, 0.0), cx(0.0, 0.0)])
    };

    Ok(SymbolModel {
        dim: 2,
        space_dim: 1,
        family: FamilyTag::OscillatingPair,
        params: Vec::new(),
        predictions,
        warnings: Vec::new(),
        full: Arc::new(full),
        principal: Arc::new(principal),
    })
}

/// Weight used to form the first component of the reduced unknown
/// V = (w u^, D_t u^).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Weight {
    /// The smoothed zone weight h(t, xi); uniformly positive everywhere.
    AuxH,
    /// sqrt(|xi|^2 + (1+t)^{-2}); the worked Klein-Gordon choice.
    SqrtShift,
    /// Plain |xi|; degenerates at xi = 0, valid on the hyperbolic zone only.
    PlainXi,
}

/// Coefficients of D_t^2 U = (A2(t, D_x) + B1(t, D_x) + C(t)) U + i B0 D_t U,
/// written for the equation
/// d_t^2 U + sum_ij A_ij d_i d_j-type terms ... the blocks are given at
/// symbol level: the spatial principal symbol is sum_ij a2[i][j](t) xi_i xi_j
/// (positive definite on the sphere for a hyperbolic problem), first-order
/// terms contribute i sum_j b1[j](t) xi_j, b0 multiplies d_t U, and c is the
/// zeroth-order block.
#[derive(Clone, Debug)]
pub struct SecondOrderSystem {
    pub a2: Vec<Vec<CoeffMatrix>>,
    pub b1: Vec<CoeffMatrix>,
    pub b0: CoeffMatrix,
    pub c: CoeffMatrix,
}

impl SecondOrderSystem {
    /// Scalar equation u_tt - Lap u + damping u_t + potential u = 0 in n
    /// space dimensions.
    pub fn scalar_wave(
        n: usize,
        damping: ScalarCoefficient,
        potential: ScalarCoefficient,
    ) -> Self {
        let mut a2 = Vec::with_capacity(n);
        for i in 0..n {
            let mut row = Vec::with_capacity(n);
            for j in 0..n {
                row.push(if i == j {
                    CoeffMatrix::from_entries(1, 1, vec![ScalarCoefficient::constant(1.0)])
                } else {
                    CoeffMatrix::zeros(1, 1)
                });
            }
            a2.push(row);
        }
        SecondOrderSystem {
            a2,
            b1: (0..n).map(|_| CoeffMatrix::zeros(1, 1)).collect(),
            b0: CoeffMatrix::from_entries(1, 1, vec![damping]),
            c: CoeffMatrix::from_entries(1, 1, vec![potential]),
        }
    }

    fn block_dim(&self) -> usize {
        self.b0.shape().0
    }

    fn space_dim(&self) -> usize {
        self.a2.len()
    }

    /// sum_ij a2[i][j](t) xi_i xi_j.
    fn principal_block(&self, t: f64, xi: &[f64]) -> CMat {
        let m = self.block_dim();
        let mut acc = CMat::zeros(m, m);
        for (i, row) in self.a2.iter().enumerate() {
            for (j, blk) in row.iter().enumerate() {
                let w = xi[i] * xi[j];
                if w != 0.0 {
                    acc += blk.eval(t) * cx(w, 0.0);
                }
            }
        }
        acc
    }
}

/// Reduce a second-order system to the first-order symbol in the unknown
/// V = (w u^, D_t u^):
///
///   [[ (D_t w)/w I,              w I   ],
///    [ (a2 + i b1 + c)/w,        i b0  ]]
///
/// with the homogeneous principal part [[0, |xi| I], [a2/|xi|, 0]].
pub fn reduce_second_order(
    sys: &SecondOrderSystem,
    weight: Weight,
    cfg: &ZoneConfig,
) -> Result<SymbolModel> {
    let m = sys.block_dim();
    let n = sys.space_dim();
    if sys.b0.shape() != (m, m) || sys.c.shape() != (m, m) {
        return Err(Error::Dimension {
            context: "second-order zero/first-order blocks".into(),
            expected: format!("{m}x{m}"),
            got: format!("{}x{} and {}x{}", sys.b0.shape().0, sys.b0.shape().1, sys.c.shape().0, sys.c.shape().1),
        });
    }
    if sys.b1.len() != n || sys.a2.iter().any(|r| r.len() != n) {
        return Err(Error::invalid("second-order coefficient grid is ragged"));
    }

    // Strict hyperbolicity of the spatial principal part: positive distinct
    // eigenvalues of a2 on a (t, direction) sample grid.
    let dirs = sample_directions(n);
    for &t in &[0.0, 1.0, 10.0, 100.0] {
        for dir in &dirs {
            let blk = sys.principal_block(t, dir);
            let scale = blk.iter().map(|z| z.norm()).fold(1e-300, f64::max);
            let (vals, _) = hermitian_eigen(&blk);
            let mut sorted = vals.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (k, &v) in sorted.iter().enumerate() {
                if v <= 1e-12 * scale {
                    return Err(Error::invalid(format!(
                        "second-order principal symbol not positive at t = {t}, xi = {dir:?} (eigenvalue {v:.3e})"
                    )));
                }
                if k > 0 && v - sorted[k - 1] <= 1e-9 * scale {
                    return Err(Error::invalid(format!(
                        "second-order principal symbol has coalescing eigenvalues at t = {t}, xi = {dir:?}"
                    )));
                }
            }
        }
    }

    let d = 2 * m;
    let cfg = *cfg;
    let sys_full = sys.clone();
    let full = move |t: f64, xi: &[f64]| {
        let x = norm(xi);
        let (w, dtw) = match weight {
            Weight::AuxH => (aux_h_radial(t, x, &cfg), aux_h_dt_radial(t, x, &cfg)),
            Weight::SqrtShift => {
                let s = 1.0 / (1.0 + t);
                let w = (x * x + s * s).sqrt();
                (w, -s * s * s / w)
            }
            Weight::PlainXi => {
                assert!(x > 0.0, "plain |xi| weight degenerates at xi = 0");
                (x, 0.0)
            }
        };
        // D_t w / w = -i (d_t w) / w.
        let dtw_over_w = cx(0.0, -dtw / w);
        let mut a = CMat::zeros(d, d);
        for i in 0..m {
            a[(i, i)] = dtw_over_w;
            a[(i, m + i)] = cx(w, 0.0);
        }
        let mut lower = sys_full.principal_block(t, xi) + sys_full.c.eval(t);
        for (j, blk) in sys_full.b1.iter().enumerate() {
            if xi[j] != 0.0 {
                lower += blk.eval(t) * cx(0.0, xi[j]);
            }
        }
        let b0 = sys_full.b0.eval(t);
        for i in 0..m {
            for j in 0..m {
                a[(m + i, j)] = lower[(i, j)] / cx(w, 0.0);
                a[(m + i, m + j)] = cx(0.0, 1.0) * b0[(i, j)];
            }
        }
        a
    };
    let sys_pr = sys.clone();
    let principal = move |t: f64, xi: &[f64]| {
        let x = norm(xi);
        let mut a = CMat::zeros(d, d);
        if x == 0.0 {
            return a;
        }
        let blk = sys_pr.principal_block(t, xi);
        for i in 0..m {
            a[(i, m + i)] = cx(x, 0.0);
            for j in 0..m {
                a[(m + i, j)] = blk[(i, j)] / cx(x, 0.0);
            }
        }
        a
    };

    Ok(SymbolModel {
        dim: d,
        space_dim: n,
        family: FamilyTag::Custom,
        params: Vec::new(),
        predictions: AnalyticPredictions::default(),
        warnings: Vec::new(),
        full: Arc::new(full),
        principal: Arc::new(principal),
    })
}

fn sample_directions(n: usize) -> Vec<Vec<f64>> {
    let mut dirs = Vec::new();
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        dirs.push(e.clone());
        e[i] = -1.0;
        dirs.push(e);
    }
    if n > 1 {
        let v = vec![1.0 / (n as f64).sqrt(); n];
        dirs.push(v);
    }
    dirs
}

const TAU_CAP: f64 = 1e12;
const T_CAP: f64 = 1e15;

struct PrimitiveTable {
    a: ScalarCoefficient,
    knots: Vec<f64>,
    cum: Vec<f64>,
}

impl PrimitiveTable {
    fn build(a: &ScalarCoefficient) -> Result<PrimitiveTable> {
        let mut knots = vec![0.0f64];
        let mut cum = vec![0.0f64];
        let mut t = 0.0f64;
        let mut step = 1e-4f64;
        while *cum.last().unwrap() < TAU_CAP && t < T_CAP {
            let next = t + step;
            let seg = quad::integrate(|s| a.value_re(s), t, next, 1e-13 * (1.0 + step))?;
            t = next;
            knots.push(t);
            cum.push(cum.last().unwrap() + seg);
            step *= 1.25;
            if knots.len() > 8000 {
                break;
            }
        }
        Ok(PrimitiveTable { a: a.clone(), knots, cum })
    }

    fn primitive(&self, t: f64) -> Result<f64> {
        if t < 0.0 {
            return Err(Error::invalid("primitive requested at negative time"));
        }
        let i = match self.knots.binary_search_by(|k| k.partial_cmp(&t).unwrap()) {
            Ok(i) => return Ok(self.cum[i]),
            Err(i) => i,
        };
        if i == 0 || i >= self.knots.len() {
            return Err(Error::invalid(format!(
                "time {t:.3e} outside the precomputed scale-factor range"
            )));
        }
        let base = self.cum[i - 1];
        let seg = quad::integrate(
            |s| self.a.value_re(s),
            self.knots[i - 1],
            t,
            1e-13 * (1.0 + t - self.knots[i - 1]),
        )?;
        Ok(base + seg)
    }

    /// Solve primitive(t) = tau by bisection within the bracketing segment.
    fn inverse(&self, tau: f64) -> Result<f64> {
        if tau < 0.0 {
            return Err(Error::invalid("inverse time requested at negative value"));
        }
        if tau == 0.0 {
            return Ok(0.0);
        }
        let last = *self.cum.last().unwrap();
        if tau > last {
            return Err(Error::invalid(format!(
                "inverse time {tau:.3e} beyond the precomputed range (max {last:.3e})"
            )));
        }
        let i = self.cum.partition_point(|&c| c < tau);
        let (mut lo, mut hi) = (self.knots[i - 1], self.knots[i]);
        let base = self.cum[i - 1];
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            let val = base
                + quad::integrate(
                    |s| self.a.value_re(s),
                    self.knots[i - 1],
                    mid,
                    1e-13 * (1.0 + mid - self.knots[i - 1]),
                )?;
            if val < tau {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-13 * (1.0 + hi) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// The transformed coefficients of a wave equation on a background with
/// scale factor a(t), after passing to the new time tau = int_0^t a.
pub struct CosmologyTransform {
    pub scale_factor: ScalarCoefficient,
    /// b(tau): effective dissipation of the transformed equation.
    pub dissipation: ScalarCoefficient,
    /// m(tau): effective mass term of the transformed equation.
    pub mass: ScalarCoefficient,
    pub space_dim: u32,
    pub m0: f64,
    /// int_0^infty a; always +inf here (finite values are rejected).
    pub horizon: f64,
    pub b_in_t1: bool,
    pub m_in_t2: bool,
    pub admissible: bool,
    table: Arc<PrimitiveTable>,
}

impl fmt::Debug for CosmologyTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CosmologyTransform")
            .field("space_dim", &self.space_dim)
            .field("m0", &self.m0)
            .field("admissible", &self.admissible)
            .finish()
    }
}

impl CosmologyTransform {
    /// A(t) = int_0^t a.
    pub fn primitive(&self, t: f64) -> Result<f64> {
        self.table.primitive(t)
    }

    /// A^{-1}(tau), to relative accuracy 1e-12.
    pub fn inverse_time(&self, tau: f64) -> Result<f64> {
        self.table.inverse(tau)
    }

    /// The reduced first-order symbol of the transformed equation
    /// v_tautau - Lap v + b(tau) v_tau + m(tau) v = 0.
    pub fn to_wave_model(&self, weight: Weight, cfg: &ZoneConfig) -> Result<SymbolModel> {
        let sys = SecondOrderSystem::scalar_wave(
            self.space_dim as usize,
            self.dissipation.clone(),
            self.mass.clone(),
        );
        let mut model = reduce_second_order(&sys, weight, cfg)?;
        model.family = FamilyTag::Cosmology;
        model.params = vec![
            ("m0".to_string(), self.m0),
            ("space_dim".to_string(), self.space_dim as f64),
        ];
        Ok(model)
    }
}

/// Change time so that a wave equation with propagation speed a(t) becomes a
/// damped wave equation with the coefficients of `CosmologyTransform`.
/// Rejected when int_0^infty a is finite (the transformed problem then lives
/// on a bounded interval).
pub fn liouville_transform(
    a: ScalarCoefficient,
    m0: f64,
    n_space: u32,
) -> Result<CosmologyTransform> {
    // Positivity of the scale factor on a sample grid. Exact zeros are left
    // alone: a positive a can underflow at large t, and the summability
    // check below then rejects the finite horizon with a better message.
    for i in 0..60 {
        let t = 10f64.powf(i as f64 / 5.0) - 1.0;
        let v = a.value(t);
        if v.im.abs() > 1e-12 || v.re < 0.0 || (v.re == 0.0 && t < 100.0) {
            return Err(Error::invalid(format!(
                "scale factor must be real and strictly positive (t = {t:.3e})"
            )));
        }
    }

    // Decide whether int_0^infty a diverges by dyadic segments.
    let mut segs = Vec::new();
    let mut total = 0.0f64;
    let mut divergent = false;
    for k in 0..46u32 {
        let lo = (1u64 << k) as f64 - 1.0;
        let hi = (1u64 << (k + 1)) as f64 - 1.0;
        let s = quad::integrate(|t| a.value_re(t), lo, hi, 1e-10 * (hi - lo))?;
        total += s;
        segs.push(s);
        if total > TAU_CAP {
            divergent = true;
            break;
        }
    }
    if !divergent {
        let tail_ok = segs.len() >= 6
            && segs.windows(2).rev().take(5).all(|w| w[1] < 0.9 * w[0] + 1e-300);
        if tail_ok {
            let ratio = segs[segs.len() - 1] / segs[segs.len() - 2].max(1e-300);
            let t_estimate = total + segs[segs.len() - 1] * ratio / (1.0 - ratio).max(0.05);
            return Err(Error::invalid(format!(
                "scale factor has finite total integral (about {t_estimate:.6e}); the transformed problem lives on a bounded interval"
            )));
        }
        // Neither clearly summable nor past the cap: treat slow growth as
        // divergent (log-type integrals land here).
    }

    let table = Arc::new(PrimitiveTable::build(&a)?);

    // Admissibility: b in T{1} iff q_b = |a'| (1 + A) / a^2 stays bounded;
    // m in T{2} iff a / (1 + A) stays bounded below. Certified by slopes of
    // the sampled quantities in log time.
    let t_max = table.knots.last().unwrap().min(1e8);
    let mut ts = Vec::new();
    let mut qb = Vec::new();
    let mut qm = Vec::new();
    for i in 0..40 {
        let t = 10f64.powf((i as f64 / 39.0) * t_max.log10().max(1.0));
        if t > t_max {
            break;
        }
        let av = a.value_re(t);
        let da = a.deriv(t, 1).re;
        let big_a = table.primitive(t)?;
        ts.push(1.0 + t);
        qb.push((da.abs() * (1.0 + big_a) / (av * av)).max(1e-300));
        qm.push((av / (1.0 + big_a)).max(1e-300));
    }
    let b_in_t1 = match fit::loglog_slope(&ts, &qb) {
        Ok(f) => f.slope < 0.05 || qb.iter().all(|&v| v < 1e-10),
        Err(_) => qb.iter().all(|&v| v < 1e-10),
    };
    let m_in_t2 = match fit::loglog_slope(&ts, &qm) {
        Ok(f) => f.slope > -0.05,
        Err(_) => false,
    };
    let admissible = b_in_t1 && (m_in_t2 || m0 == 0.0);

    let t1 = Arc::clone(&table);
    let a1 = a.clone();
    let factor = 2.0 - n_space as f64;
    let dissipation = ScalarCoefficient::new(
        move |tau| {
            let t = t1.inverse(tau).expect("tau outside precomputed range");
            let av = a1.value_re(t);
            cx(factor * a1.deriv(t, 1).re / (av * av), 0.0)
        },
        1.0,
    );
    let t2 = Arc::clone(&table);
    let a2 = a.clone();
    let mass = ScalarCoefficient::new(
        move |tau| {
            let t = t2.inverse(tau).expect("tau outside precomputed range");
            let av = a2.value_re(t);
            cx(m0 / (av * av), 0.0)
        },
        if m_in_t2 { 2.0 } else { 0.0 },
    );

    Ok(CosmologyTransform {
        scale_factor: a,
        dissipation,
        mass,
        space_dim: n_space,
        m0,
        horizon: f64::INFINITY,
        b_in_t1,
        m_in_t2,
        admissible,
        table,
    })
}
