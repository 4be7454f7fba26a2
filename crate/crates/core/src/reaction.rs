//! Reaction functions `f: ℝ → ℝ`.

use std::sync::Arc;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wavelet::{BasisDescriptor, WaveletBasis};

/// Default probe step for [`ReactionModel::lipschitz_constant`].
pub const DEFAULT_LIPSCHITZ_STEP: f64 = 1e-4;

/// Polynomial core with degree-7 Hermite tails that bring the function and its
/// first three derivatives to zero at the ends of the support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncatedSpline {
    /// Core polynomial in `x`, increasing degree.
    pub core: Vec<f64>,
    pub core_interval: (f64, f64),
    pub support: (f64, f64),
    /// Left tail in `s = x - support.0`.
    pub left_tail: Vec<f64>,
    /// Right tail in `s = x - support.1`.
    pub right_tail: Vec<f64>,
}

impl TruncatedSpline {
    /// Builds the tails for a given core polynomial.
    pub fn new(core: Vec<f64>, core_interval: (f64, f64), support: (f64, f64)) -> Result<Self> {
        let (c0, c1) = core_interval;
        let (s0, s1) = support;
        if !(s0 < c0 && c0 < c1 && c1 < s1) {
            return Err(Error::invalid("spline needs support.0 < core.0 < core.1 < support.1"));
        }
        let left_tail = hermite_to_zero(&core, c0, s0)?;
        let right_tail = hermite_to_zero(&core, c1, s1)?;
        Ok(Self { core, core_interval, support, left_tail, right_tail })
    }

    /// `order`-th derivative at `x` (orders 0..=3 are continuous everywhere).
    pub fn derivative(&self, x: f64, order: usize) -> f64 {
        let (c0, c1) = self.core_interval;
        let (s0, s1) = self.support;
        if x <= s0 || x >= s1 {
            0.0
        } else if x < c0 {
            poly_derivative(&self.left_tail, x - s0, order)
        } else if x > c1 {
            poly_derivative(&self.right_tail, x - s1, order)
        } else {
            poly_derivative(&self.core, x, order)
        }
    }
}

/// Degree-7 polynomial `q(s) = Σ_{k=4}^{7} b_k s^k` in `s = x - edge` (so
/// `q` and its first three derivatives vanish at the edge) matching
/// `p^{(i)}(knot)` for `i = 0..=3`.
fn hermite_to_zero(core: &[f64], knot: f64, edge: f64) -> Result<Vec<f64>> {
    let u = knot - edge;
    // D^i s^k at s = u
    let dmono = |k: usize, i: usize| -> f64 {
        let falling: f64 = (0..i).map(|r| (k - r) as f64).product();
        falling * u.powi((k - i) as i32)
    };
    let a = Matrix4::from_fn(|i, c| dmono(c + 4, i));
    let rhs = Vector4::from_fn(|i, _| poly_derivative(core, knot, i));
    let sol = a.lu().solve(&rhs).ok_or_else(|| Error::NumericalAbort("singular Hermite system".into()))?;
    let mut q = vec![0.0; 8];
    q[4..].copy_from_slice(sol.as_slice());
    Ok(q)
}

fn poly_derivative(coeffs: &[f64], x: f64, order: usize) -> f64 {
    let mut acc = 0.0;
    for k in (order..coeffs.len()).rev() {
        let falling: f64 = (0..order).map(|r| (k - r) as f64).product();
        acc = acc * x + coeffs[k] * falling;
    }
    acc
}

/// A reaction function.
#[derive(Debug, Clone, PartialEq)]
pub enum ReactionModel {
    Zero,
    Constant(f64),
    /// Polynomial core truncated to compact support by Hermite tails.
    Spline(TruncatedSpline),
    /// Smooth bump `height · exp(1 - 1/(1 - r²))`, `r = (x - center)/radius`.
    Bump { center: f64, radius: f64, height: f64 },
    /// `value` on `[lo, hi)`, zero elsewhere.
    Indicator { lo: f64, hi: f64, value: f64 },
    /// Pointwise sum of several models.
    Sum(Vec<ReactionModel>),
    /// `Σ_μ c_μ ψ_μ`, vanishing outside `Ξ`.
    Expansion { basis: Arc<WaveletBasis>, coeffs: Vec<f64> },
}

/// The truncated Allen–Cahn reaction with stable states ±3:
/// `f₀(x) = -(x³ - 9x)` on `[-3.25, 3.25]`, C³ tails on the bands out to
/// ±3.5, zero beyond.
pub fn allen_cahn_truncated() -> ReactionModel {
    ReactionModel::Spline(
        TruncatedSpline::new(vec![0.0, 9.0, 0.0, -1.0], (-3.25, 3.25), (-3.5, 3.5))
            .expect("static spline configuration"),
    )
}

/// Model `Σ c_μ ψ_μ` for a basis.
pub fn from_coefficients(basis: Arc<WaveletBasis>, coeffs: Vec<f64>) -> Result<ReactionModel> {
    if coeffs.len() != basis.dim() {
        return Err(Error::DimensionMismatch { expected: basis.dim(), found: coeffs.len() });
    }
    Ok(ReactionModel::Expansion { basis, coeffs })
}

impl ReactionModel {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            ReactionModel::Zero => 0.0,
            ReactionModel::Constant(c) => *c,
            ReactionModel::Spline(s) => s.derivative(x, 0),
            ReactionModel::Bump { center, radius, height } => {
                let r = (x - center) / radius;
                if r.abs() < 1.0 {
                    height * (1.0 - 1.0 / (1.0 - r * r)).exp()
                } else {
                    0.0
                }
            }
            ReactionModel::Indicator { lo, hi, value } => {
                if x >= *lo && x < *hi {
                    *value
                } else {
                    0.0
                }
            }
            ReactionModel::Sum(terms) => terms.iter().map(|t| t.eval(x)).sum(),
            ReactionModel::Expansion { basis, coeffs } => basis.reconstruct_at(coeffs, x),
        }
    }

    /// Interval outside which the model vanishes; `None` if not compactly supported.
    pub fn support(&self) -> Option<(f64, f64)> {
        match self {
            ReactionModel::Zero => Some((0.0, 0.0)),
            ReactionModel::Constant(c) => (*c == 0.0).then_some((0.0, 0.0)),
            ReactionModel::Spline(s) => Some(s.support),
            ReactionModel::Bump { center, radius, .. } => Some((center - radius, center + radius)),
            ReactionModel::Indicator { lo, hi, .. } => Some((*lo, *hi)),
            ReactionModel::Sum(terms) => terms.iter().try_fold((f64::INFINITY, f64::NEG_INFINITY), |acc, t| {
                let (a, b) = t.support()?;
                Some(if a == b { acc } else { (acc.0.min(a), acc.1.max(b)) })
            }).map(|(a, b)| if a > b { (0.0, 0.0) } else { (a, b) }),
            ReactionModel::Expansion { basis, .. } => Some(basis.xi()),
        }
    }

    /// Upper-biased Lipschitz bound: the largest difference quotient on a probe
    /// grid of step `h` covering the support, plus `sup |f|` on that grid.
    /// Models without compact support are probed on `[-1, 1]`.
    pub fn lipschitz_constant(&self, h: f64) -> Result<f64> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::invalid(format!("probe step must be positive, got {h}")));
        }
        let (lo, hi) = self.support().unwrap_or((-1.0, 1.0));
        let n = ((hi - lo) / h).ceil() as usize + 2;
        let mut slope = 0.0f64;
        let mut sup = 0.0f64;
        let mut prev = self.eval(lo - h);
        sup = sup.max(prev.abs());
        for i in 0..=n {
            let x = lo + i as f64 * h;
            let v = self.eval(x);
            slope = slope.max((v - prev).abs() / h);
            sup = sup.max(v.abs());
            prev = v;
        }
        Ok(slope + sup)
    }

    /// `∫|f|` by midpoint quadrature over the support.
    pub fn l1_norm(&self, h: f64) -> f64 {
        match self.support() {
            None => f64::INFINITY,
            Some((lo, hi)) => {
                let n = ((hi - lo) / h).ceil().max(1.0) as usize;
                let step = (hi - lo) / n as f64;
                (0..n).map(|i| self.eval(lo + (i as f64 + 0.5) * step).abs() * step).sum()
            }
        }
    }

    /// `sup |f'|` by difference quotients over the support.
    pub fn derivative_sup(&self, h: f64) -> f64 {
        match self.support() {
            None => 0.0,
            Some((lo, hi)) => {
                let n = ((hi - lo) / h).ceil() as usize + 2;
                (0..=n)
                    .map(|i| {
                        let x = lo - h + i as f64 * h;
                        ((self.eval(x + h) - self.eval(x)) / h).abs()
                    })
                    .fold(0.0, f64::max)
            }
        }
    }

    pub fn descriptor(&self) -> ModelDescriptor {
        match self {
            ReactionModel::Zero => ModelDescriptor::Zero,
            ReactionModel::Constant(value) => ModelDescriptor::Constant { value: *value },
            ReactionModel::Spline(s) => ModelDescriptor::Spline(s.clone()),
            ReactionModel::Bump { center, radius, height } => {
                ModelDescriptor::Bump { center: *center, radius: *radius, height: *height }
            }
            ReactionModel::Indicator { lo, hi, value } => {
                ModelDescriptor::Indicator { lo: *lo, hi: *hi, value: *value }
            }
            ReactionModel::Sum(terms) => ModelDescriptor::Sum { terms: terms.iter().map(|t| t.descriptor()).collect() },
            ReactionModel::Expansion { basis, coeffs } => {
                ModelDescriptor::Expansion { basis: basis.descriptor(), coeffs: coeffs.clone() }
            }
        }
    }
}

/// Structured-text form of a [`ReactionModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelDescriptor {
    Zero,
    Constant { value: f64 },
    AllenCahn,
    Spline(TruncatedSpline),
    Bump { center: f64, radius: f64, height: f64 },
    Indicator { lo: f64, hi: f64, value: f64 },
    Sum { terms: Vec<ModelDescriptor> },
    Expansion { basis: BasisDescriptor, coeffs: Vec<f64> },
}

impl ModelDescriptor {
    pub fn build(&self) -> Result<ReactionModel> {
        Ok(match self {
            ModelDescriptor::Zero => ReactionModel::Zero,
            ModelDescriptor::Constant { value } => ReactionModel::Constant(*value),
            ModelDescriptor::AllenCahn => allen_cahn_truncated(),
            ModelDescriptor::Spline(s) => ReactionModel::Spline(s.clone()),
            ModelDescriptor::Bump { center, radius, height } => {
                if !(*radius > 0.0) {
                    return Err(Error::invalid("bump radius must be positive"));
                }
                ReactionModel::Bump { center: *center, radius: *radius, height: *height }
            }
            ModelDescriptor::Indicator { lo, hi, value } => {
                ReactionModel::Indicator { lo: *lo, hi: *hi, value: *value }
            }
            ModelDescriptor::Sum { terms } => {
                ReactionModel::Sum(terms.iter().map(|t| t.build()).collect::<Result<_>>()?)
            }
            ModelDescriptor::Expansion { basis, coeffs } => {
                from_coefficients(Arc::new(basis.build()?), coeffs.clone())?
            }
        })
    }
}
