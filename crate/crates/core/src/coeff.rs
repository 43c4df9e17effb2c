//! Scalar time-dependent coefficients.
//!
//! Coefficients enter the symbol models as functions of t alone, each with a
//! claimed decay class T{l}: the k-th derivative is expected to decay like
//! (1+t)^{-l-k}. The claim is metadata here; `diagonalize::fit_symbol_class`
//! certifies it numerically. Presets cover everything the model families
//! need: constants, powers of (1+t), oscillations in log time, and sums of
//! dyadically scaled bumps.

use std::fmt;
use std::sync::Arc;

use crate::linalg::{cx, C, CMat};

type TimeFn = Arc<dyn Fn(f64) -> C + Send + Sync>;

/// Construction metadata: the closed-form predictions of the model families
/// (limit exponents, limit matrices) are only available for preset shapes.
#[derive(Clone, Debug, PartialEq)]
pub enum Preset {
    Constant(f64),
    Power { scale: f64, exponent: f64 },
    SinLog { offset: f64, amp: f64, omega: f64, phase: f64 },
    BumpSum { base: f64 },
    Custom,
}

#[derive(Clone)]
pub struct ScalarCoefficient {
    eval: TimeFn,
    /// Analytic first derivative where available; higher orders and the
    /// fallback path use central differences.
    deriv1: Option<TimeFn>,
    /// Claimed decay class l of T{l}.
    pub decay_class: f64,
    pub preset: Preset,
    /// Carries lim (1+t) f(t) through complex rescaling, where the preset
    /// alone can no longer express it.
    limit_override: Option<C>,
}

impl fmt::Debug for ScalarCoefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScalarCoefficient(T{{{}}})", self.decay_class)
    }
}

/// 4th-order central difference with step proportional to (1+t); clamps the
/// left arm at t = 0 by shrinking the step instead of crossing it.
fn central_diff(f: &dyn Fn(f64) -> C, t: f64) -> C {
    let mut h = 1e-3 * (1.0 + t);
    if t - 2.0 * h < 0.0 {
        h = (t / 2.0).max(1e-8);
    }
    if t - 2.0 * h < 0.0 {
        // One-sided 5-point stencil at the left boundary.
        let h = 1e-6 * (1.0 + t);
        return (f(t) * (-25.0) + f(t + h) * 48.0 + f(t + 2.0 * h) * (-36.0)
            + f(t + 3.0 * h) * 16.0
            + f(t + 4.0 * h) * (-3.0))
            / (12.0 * h);
    }
    (f(t - 2.0 * h) - f(t - h) * 8.0 + f(t + h) * 8.0 - f(t + 2.0 * h)) / (12.0 * h)
}

impl ScalarCoefficient {
    pub fn new(eval: impl Fn(f64) -> C + Send + Sync + 'static, decay_class: f64) -> Self {
        ScalarCoefficient {
            eval: Arc::new(eval),
            deriv1: None,
            decay_class,
            preset: Preset::Custom,
            limit_override: None,
        }
    }

    pub fn with_derivative(
        mut self,
        deriv: impl Fn(f64) -> C + Send + Sync + 'static,
    ) -> Self {
        self.deriv1 = Some(Arc::new(deriv));
        self
    }

    pub fn constant(c: f64) -> Self {
        Self::constant_complex(cx(c, 0.0))
    }

    pub fn constant_complex(c: C) -> Self {
        let cls = if c.norm() == 0.0 { f64::INFINITY } else { 0.0 };
        let preset =
            if c.im == 0.0 { Preset::Constant(c.re) } else { Preset::Custom };
        ScalarCoefficient {
            eval: Arc::new(move |_| c),
            deriv1: Some(Arc::new(|_| cx(0.0, 0.0))),
            decay_class: cls,
            preset,
            limit_override: None,
        }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    /// scale * (1+t)^exponent.
    pub fn power(scale: f64, exponent: f64) -> Self {
        ScalarCoefficient {
            eval: Arc::new(move |t| cx(scale * (1.0 + t).powf(exponent), 0.0)),
            deriv1: Some(Arc::new(move |t| {
                cx(scale * exponent * (1.0 + t).powf(exponent - 1.0), 0.0)
            })),
            decay_class: -exponent,
            preset: Preset::Power { scale, exponent },
            limit_override: None,
        }
    }

    /// offset + amp * sin(omega * log(1+t) + phase). Bounded with all
    /// derivatives gaining a factor (1+t)^{-1}, hence T{0}.
    pub fn sin_log(offset: f64, amp: f64, omega: f64, phase: f64) -> Self {
        ScalarCoefficient {
            eval: Arc::new(move |t| {
                cx(offset + amp * (omega * (1.0 + t).ln() + phase).sin(), 0.0)
            }),
            deriv1: Some(Arc::new(move |t| {
                cx(amp * omega * (omega * (1.0 + t).ln() + phase).cos() / (1.0 + t), 0.0)
            })),
            decay_class: 0.0,
            preset: Preset::SinLog { offset, amp, omega, phase },
            limit_override: None,
        }
    }

    /// base + sum_j amps[j] * psi(2^{-j} t) with psi a fixed C^2 bump
    /// supported on [1, 2]. Each term is active on t in [2^j, 2^{j+1}].
    pub fn bump_sum(base: f64, amps: Vec<f64>) -> Self {
        let val = move |t: f64| {
            let mut acc = base;
            for (j, &a) in amps.iter().enumerate() {
                acc += a * bump(t / (1u64 << j) as f64);
            }
            cx(acc, 0.0)
        };
        ScalarCoefficient {
            eval: Arc::new(val),
            deriv1: None,
            decay_class: 0.0,
            preset: Preset::BumpSum { base },
            limit_override: None,
        }
    }

    pub fn value(&self, t: f64) -> C {
        (self.eval)(t)
    }

    pub fn value_re(&self, t: f64) -> f64 {
        (self.eval)(t).re
    }

    /// Long-time average in logarithmic time,
    /// lim (1/log t) int_1^t f(tau) dtau/tau, where the preset admits one in
    /// closed form. This is the value the large-time exponents of the
    /// oscillating families collapse to.
    pub fn log_average(&self) -> Option<f64> {
        match &self.preset {
            Preset::Constant(c) => Some(*c),
            Preset::Power { scale, exponent } => {
                if *exponent == 0.0 {
                    Some(*scale)
                } else if *exponent < 0.0 {
                    Some(0.0)
                } else {
                    None
                }
            }
            Preset::SinLog { offset, .. } => Some(*offset),
            // Finitely many dyadic bumps contribute o(log t) mass.
            Preset::BumpSum { base } => Some(*base),
            Preset::Custom => None,
        }
    }

    /// lim (1+t) f(t) where the preset admits one: the effective constant of
    /// a scale-invariant (T{1}-critical) coefficient.
    pub fn scaled_limit(&self) -> Option<C> {
        if let Some(v) = self.limit_override {
            return Some(v);
        }
        match &self.preset {
            Preset::Constant(c) if *c == 0.0 => Some(cx(0.0, 0.0)),
            Preset::Power { scale, exponent } => {
                if *exponent == -1.0 {
                    Some(cx(*scale, 0.0))
                } else if *exponent < -1.0 || *scale == 0.0 {
                    Some(cx(0.0, 0.0))
                } else {
                    None
                }
            }
            Preset::BumpSum { base } if *base == 0.0 => Some(cx(0.0, 0.0)),
            _ => None,
        }
    }

    /// Multiply the coefficient by a complex constant. Real factors keep the
    /// preset shape; complex ones fall back to Custom but preserve the
    /// scaled limit.
    pub fn scaled(self, z: C) -> Self {
        let limit = self.scaled_limit().map(|v| v * z);
        let preset = if z.im == 0.0 {
            match self.preset.clone() {
                Preset::Constant(c) => Preset::Constant(c * z.re),
                Preset::Power { scale, exponent } => {
                    Preset::Power { scale: scale * z.re, exponent }
                }
                Preset::SinLog { offset, amp, omega, phase } => {
                    Preset::SinLog { offset: offset * z.re, amp: amp * z.re, omega, phase }
                }
                _ => Preset::Custom,
            }
        } else {
            Preset::Custom
        };
        let eval = self.eval.clone();
        let deriv1 = self.deriv1.clone().map(|d| {
            Arc::new(move |t: f64| d(t) * z) as TimeFn
        });
        ScalarCoefficient {
            eval: Arc::new(move |t| eval(t) * z),
            deriv1,
            decay_class: self.decay_class,
            preset,
            limit_override: limit,
        }
    }

    /// k-th derivative; analytic for k = 1 when known, nested central
    /// differences otherwise. Accuracy degrades with k, which is fine for
    /// the slope fits that consume high orders.
    pub fn deriv(&self, t: f64, k: usize) -> C {
        match k {
            0 => self.value(t),
            1 => match &self.deriv1 {
                Some(d) => d(t),
                None => central_diff(&|s| self.value(s), t),
            },
            _ => central_diff(&|s| self.deriv(s, k - 1), t),
        }
    }
}

/// C^2 bump supported on [1, 2], peaking at 1 in the middle.
fn bump(s: f64) -> f64 {
    if s <= 1.0 || s >= 2.0 {
        0.0
    } else {
        64.0 * ((s - 1.0) * (2.0 - s)).powi(3)
    }
}

/// A matrix of scalar coefficients, evaluated entrywise.
#[derive(Clone, Debug)]
pub struct CoeffMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<ScalarCoefficient>,
}

impl CoeffMatrix {
    pub fn from_entries(rows: usize, cols: usize, entries: Vec<ScalarCoefficient>) -> Self {
        assert_eq!(entries.len(), rows * cols, "entry count must match shape");
        CoeffMatrix { rows, cols, entries }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        let entries = (0..rows * cols).map(|_| ScalarCoefficient::zero()).collect();
        CoeffMatrix { rows, cols, entries }
    }

    /// Constant real matrix.
    pub fn constant(m: &[&[f64]]) -> Self {
        let rows = m.len();
        let cols = m[0].len();
        let mut entries = Vec::with_capacity(rows * cols);
        for r in m {
            assert_eq!(r.len(), cols, "ragged constant matrix");
            for &v in *r {
                entries.push(ScalarCoefficient::constant(v));
            }
        }
        CoeffMatrix { rows, cols, entries }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn entry(&self, i: usize, j: usize) -> &ScalarCoefficient {
        &self.entries[i * self.cols + j]
    }

    pub fn eval(&self, t: f64) -> CMat {
        CMat::from_fn(self.rows, self.cols, |i, j| self.entry(i, j).value(t))
    }

    pub fn deriv(&self, t: f64, k: usize) -> CMat {
        CMat::from_fn(self.rows, self.cols, |i, j| self.entry(i, j).deriv(t, k))
    }

    /// Largest claimed decay class that every entry satisfies (entries that
    /// are identically zero claim +inf and do not constrain it).
    pub fn decay_class(&self) -> f64 {
        self.entries.iter().map(|e| e.decay_class).fold(f64::INFINITY, f64::min)
    }
}
