//! Orthonormal wavelet systems on the parameter interval `Ξ`.
//!
//! Elements are addressed by a [`MultiIndex`] `(j, k)`. Level `j = 0` holds
//! the scaling block (for Haar the single function `|Ξ|^{-1/2}·1_Ξ`), and level
//! `j ≥ 1` holds the wavelets at dyadic resolution `j0 + j - 1`, where `j0` is
//! the coarsest level of the family (0 for Haar). The prior weight of an
//! element is driven by `|μ| = j`. A basis with cut-off `M` contains the
//! levels `0..=M`; for Haar its dimension is exactly `2^M`.
//!
//! Daubechies elements are interior translates only: every function is
//! supported inside `Ξ`, at the price of not spanning all of `L²(Ξ)` near the
//! boundary.

pub mod daubechies;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reaction::ReactionModel;
use daubechies::CascadeTable;

/// Default parameter interval.
pub const DEFAULT_XI: (f64, f64) = (-3.5, 3.5);

/// Multi-index `μ = (j, k)`; `|μ| = j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MultiIndex {
    pub j: u32,
    pub k: u32,
}

impl MultiIndex {
    pub fn level(&self) -> u32 {
        self.j
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    Haar,
    Daubechies { vanishing_moments: usize, cascade_depth: u32 },
}

/// Serializable description from which a basis is rebuilt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisDescriptor {
    pub family: Family,
    pub xi: (f64, f64),
    pub max_level: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadrature_step: Option<f64>,
}

impl BasisDescriptor {
    pub fn haar(xi: (f64, f64), max_level: u32) -> Self {
        Self { family: Family::Haar, xi, max_level, quadrature_step: None }
    }

    pub fn build(&self) -> Result<WaveletBasis> {
        let mut b = match self.family {
            Family::Haar => build_haar(self.xi, self.max_level)?,
            Family::Daubechies { vanishing_moments, cascade_depth } => {
                build_daubechies(self.xi, self.max_level, vanishing_moments, cascade_depth)?
            }
        };
        if let Some(h) = self.quadrature_step {
            b = b.with_quadrature_step(h)?;
        }
        Ok(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Element {
    index: MultiIndex,
    scaling: bool,
    dyadic_level: u32,
}

/// Contiguous run of elements sharing one dyadic level and kind.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Block {
    first: usize,
    count: usize,
    dyadic_level: u32,
    scaling: bool,
}

/// Ordered wavelet family `{ψ_μ : |μ| ≤ M}` on `Ξ`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletBasis {
    xi: (f64, f64),
    family: Family,
    max_level: u32,
    coarsest: u32,
    elements: Vec<Element>,
    blocks: Vec<Block>,
    table: Option<Arc<CascadeTable>>,
    quadrature_step: f64,
}

/// Haar system on `Ξ`: the scaling function plus Haar wavelets at dyadic
/// levels `0..M-1`.
pub fn build_haar(xi: (f64, f64), max_level: u32) -> Result<WaveletBasis> {
    check_interval(xi)?;
    if max_level > 24 {
        return Err(Error::invalid(format!("cut-off {max_level} is too large")));
    }
    let mut elements = vec![Element { index: MultiIndex { j: 0, k: 0 }, scaling: true, dyadic_level: 0 }];
    let mut blocks = vec![Block { first: 0, count: 1, dyadic_level: 0, scaling: true }];
    for l in 0..max_level {
        let count = 1usize << l;
        blocks.push(Block { first: elements.len(), count, dyadic_level: l, scaling: false });
        for k in 0..count {
            elements.push(Element {
                index: MultiIndex { j: l + 1, k: k as u32 },
                scaling: false,
                dyadic_level: l,
            });
        }
    }
    let width = xi.1 - xi.0;
    Ok(WaveletBasis {
        xi,
        family: Family::Haar,
        max_level,
        coarsest: 0,
        elements,
        blocks,
        table: None,
        quadrature_step: width * 2f64.powi(-(max_level as i32 + 6)),
    })
}

/// Interior Daubechies system with `p` vanishing moments, tabulated by the
/// cascade algorithm to resolution `2^{-cascade_depth}`. The coarsest level is
/// the smallest `j0` with `2^{j0} ≥ 2p - 1`.
pub fn build_daubechies(xi: (f64, f64), max_level: u32, p: usize, cascade_depth: u32) -> Result<WaveletBasis> {
    let support = 2 * p.max(1) - 1;
    let j0 = (support as f64).log2().ceil() as u32;
    build_daubechies_from_level(xi, j0, max_level, p, cascade_depth)
}

/// As [`build_daubechies`] with an explicit coarsest level; fails if no
/// translate fits inside `Ξ` at that level.
pub fn build_daubechies_from_level(
    xi: (f64, f64),
    coarsest: u32,
    max_level: u32,
    p: usize,
    cascade_depth: u32,
) -> Result<WaveletBasis> {
    check_interval(xi)?;
    if p < 2 {
        return Err(Error::invalid(format!("Daubechies family needs p >= 2, got {p}")));
    }
    if !(8..=20).contains(&cascade_depth) {
        return Err(Error::invalid(format!("cascade depth must be in 8..=20, got {cascade_depth}")));
    }
    let support = 2 * p - 1;
    let translates = |level: u32| -> Result<usize> {
        let cells = 1usize << level;
        if cells < support {
            Err(Error::invalid(format!(
                "no Daubechies-{p} translate fits inside Xi at level {level}"
            )))
        } else {
            Ok(cells - support + 1)
        }
    };
    if coarsest + max_level > 24 {
        return Err(Error::invalid("cut-off too large"));
    }
    let table = Arc::new(CascadeTable::new(p, cascade_depth)?);
    let mut elements = Vec::new();
    let mut blocks = Vec::new();
    let count = translates(coarsest)?;
    blocks.push(Block { first: 0, count, dyadic_level: coarsest, scaling: true });
    for k in 0..count {
        elements.push(Element { index: MultiIndex { j: 0, k: k as u32 }, scaling: true, dyadic_level: coarsest });
    }
    for l in 0..max_level {
        let level = coarsest + l;
        let count = translates(level)?;
        blocks.push(Block { first: elements.len(), count, dyadic_level: level, scaling: false });
        for k in 0..count {
            elements.push(Element {
                index: MultiIndex { j: l + 1, k: k as u32 },
                scaling: false,
                dyadic_level: level,
            });
        }
    }
    let finest = coarsest + max_level.saturating_sub(1);
    let width = xi.1 - xi.0;
    Ok(WaveletBasis {
        xi,
        family: Family::Daubechies { vanishing_moments: p, cascade_depth },
        max_level,
        coarsest,
        elements,
        blocks,
        table: Some(table),
        // align with the cascade table at the finest level
        quadrature_step: width * 2f64.powi(-((finest + cascade_depth.min(14)) as i32)),
    })
}

fn check_interval(xi: (f64, f64)) -> Result<()> {
    if !(xi.0.is_finite() && xi.1.is_finite() && xi.1 > xi.0) {
        return Err(Error::invalid(format!("degenerate interval Xi = ({}, {})", xi.0, xi.1)));
    }
    Ok(())
}

impl WaveletBasis {
    pub fn dim(&self) -> usize {
        self.elements.len()
    }

    pub fn xi(&self) -> (f64, f64) {
        self.xi
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn max_level(&self) -> u32 {
        self.max_level
    }

    /// Dyadic level of the scaling block.
    pub fn coarsest_level(&self) -> u32 {
        self.coarsest
    }

    pub fn quadrature_step(&self) -> f64 {
        self.quadrature_step
    }

    pub fn with_quadrature_step(mut self, h: f64) -> Result<Self> {
        if !(h > 0.0 && h < self.xi.1 - self.xi.0) {
            return Err(Error::invalid(format!("invalid quadrature step {h}")));
        }
        self.quadrature_step = h;
        Ok(self)
    }

    pub fn descriptor(&self) -> BasisDescriptor {
        BasisDescriptor { family: self.family, xi: self.xi, max_level: self.max_level, quadrature_step: None }
    }

    pub fn indices(&self) -> impl Iterator<Item = MultiIndex> + '_ {
        self.elements.iter().map(|e| e.index)
    }

    pub fn index(&self, i: usize) -> MultiIndex {
        self.elements[i].index
    }

    /// Position of `μ` in the coefficient layout.
    pub fn position(&self, mu: MultiIndex) -> Option<usize> {
        self.elements.iter().position(|e| e.index == mu)
    }

    /// `|μ|` for every element, in layout order.
    pub fn levels(&self) -> Vec<u32> {
        self.elements.iter().map(|e| e.index.j).collect()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.xi.0 && x <= self.xi.1
    }

    /// For Haar families, the number `2^M` of cells of `Ξ` on which every
    /// element is constant.
    pub fn haar_cells(&self) -> Option<usize> {
        self.table.is_none().then_some(1usize << self.max_level)
    }

    /// Haar cell containing `x` (the right end of `Ξ` belongs to the last
    /// cell), consistent with [`Self::for_each_nonzero`].
    #[inline]
    pub fn haar_cell(&self, x: f64) -> Option<usize> {
        if self.table.is_some() || !self.contains(x) {
            return None;
        }
        let cells = 1usize << self.max_level;
        let s = (x - self.xi.0) / (self.xi.1 - self.xi.0) * cells as f64;
        Some((s.floor() as usize).min(cells - 1))
    }

    /// Calls `visit(position, ψ_μ(x))` for every element that may be nonzero at `x`.
    #[inline]
    pub fn for_each_nonzero(&self, x: f64, mut visit: impl FnMut(usize, f64)) {
        if !self.contains(x) {
            return;
        }
        let width = self.xi.1 - self.xi.0;
        let u = (x - self.xi.0) / width;
        let norm = width.sqrt().recip();
        match &self.table {
            None => {
                // Haar
                visit(0, norm);
                for b in &self.blocks[1..] {
                    let cells = 1usize << b.dyadic_level;
                    let s = u * cells as f64;
                    let k = (s.floor() as usize).min(cells - 1);
                    let amp = norm * (cells as f64).sqrt();
                    let v = if s - (k as f64) < 0.5 { amp } else { -amp };
                    visit(b.first + k, v);
                }
            }
            Some(t) => {
                let support = t.support();
                for b in &self.blocks {
                    let cells = (1u64 << b.dyadic_level) as f64;
                    let s = u * cells;
                    let amp = norm * cells.sqrt();
                    let lo = (s - support).floor().max(0.0) as usize;
                    let hi = (s.floor() as usize).min(b.count - 1);
                    if s - support >= b.count as f64 {
                        continue;
                    }
                    for k in lo..=hi {
                        let arg = s - k as f64;
                        let v = if b.scaling { t.phi_at(arg) } else { t.psi_at(arg) };
                        if v != 0.0 {
                            visit(b.first + k, amp * v);
                        }
                    }
                }
            }
        }
    }

    /// Sparse evaluation into `out` (cleared first).
    pub fn evaluate_sparse(&self, x: f64, out: &mut Vec<(usize, f64)>) {
        out.clear();
        self.for_each_nonzero(x, |i, v| out.push((i, v)));
    }

    /// Dense `Ψ(x)`; the zero vector outside `Ξ`.
    pub fn evaluate(&self, x: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        self.for_each_nonzero(x, |i, val| v[i] += val);
        v
    }

    /// `Σ_μ c_μ ψ_μ(x)`.
    pub fn reconstruct_at(&self, coeffs: &[f64], x: f64) -> f64 {
        let mut acc = 0.0;
        self.for_each_nonzero(x, |i, v| acc += coeffs[i] * v);
        acc
    }

    /// Midpoint quadrature nodes on `Ξ` at the basis quadrature step.
    pub fn quadrature_nodes(&self) -> (Vec<f64>, f64) {
        quadrature_nodes(self.xi, self.quadrature_step)
    }

    /// Coefficients `⟨f, ψ_μ⟩` by composite midpoint quadrature.
    pub fn project_fn(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        let (nodes, h) = self.quadrature_nodes();
        let mut c = vec![0.0; self.dim()];
        for x in nodes {
            let fx = f(x);
            if fx != 0.0 {
                self.for_each_nonzero(x, |i, v| c[i] += fx * v * h);
            }
        }
        c
    }

    /// `P_M f` coefficients of a reaction model.
    pub fn project(&self, f: &ReactionModel) -> Vec<f64> {
        self.project_fn(|x| f.eval(x))
    }

    /// Quadrature Gram matrix of the family (row-major, `dim × dim`).
    pub fn gram(&self) -> Vec<f64> {
        let d = self.dim();
        let (nodes, h) = self.quadrature_nodes();
        let mut g = vec![0.0; d * d];
        let mut buf = Vec::new();
        for x in nodes {
            self.evaluate_sparse(x, &mut buf);
            for &(a, va) in &buf {
                for &(b, vb) in &buf {
                    g[a * d + b] += va * vb * h;
                }
            }
        }
        g
    }

    /// Largest deviation of the quadrature Gram matrix from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let d = self.dim();
        self.gram()
            .iter()
            .enumerate()
            .map(|(idx, v)| (v - if idx / d == idx % d { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max)
    }

    /// `‖f‖_{L²(Ξ)}` by quadrature at the basis step.
    pub fn l2_norm_fn(&self, f: impl Fn(f64) -> f64) -> f64 {
        let (nodes, h) = self.quadrature_nodes();
        nodes.into_iter().map(|x| f(x).powi(2) * h).sum::<f64>().sqrt()
    }

    /// `⟨f, g⟩_{L²(Ξ)}` by quadrature at the basis step.
    pub fn inner_fn(&self, f: impl Fn(f64) -> f64, g: impl Fn(f64) -> f64) -> f64 {
        let (nodes, h) = self.quadrature_nodes();
        nodes.into_iter().map(|x| f(x) * g(x) * h).sum()
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: len });
        }
        Ok(())
    }

    /// Wavelet Sobolev norm `(Σ_μ 2^{2s|μ|} c_μ²)^{1/2}`.
    pub fn sobolev_norm(&self, coeffs: &[f64], s: f64) -> Result<f64> {
        self.check_dim(coeffs.len())?;
        Ok(self
            .elements
            .iter()
            .zip(coeffs)
            .map(|(e, c)| 2f64.powf(2.0 * s * e.index.j as f64) * c * c)
            .sum::<f64>()
            .sqrt())
    }

    /// Diagonal prior covariance `2^{-2β₀|μ|}`.
    pub fn prior_covariance(&self, beta0: f64) -> Result<PriorSpec> {
        PriorSpec::new(self, beta0)
    }
}

pub fn quadrature_nodes(xi: (f64, f64), step: f64) -> (Vec<f64>, f64) {
    let width = xi.1 - xi.0;
    let n = (width / step).round().max(1.0) as usize;
    let h = width / n as f64;
    ((0..n).map(|i| xi.0 + (i as f64 + 0.5) * h).collect(), h)
}

/// Gaussian series prior `f = Σ 2^{-β₀|μ|} Z_μ ψ_μ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub beta0: f64,
    pub max_level: u32,
    pub variances: Vec<f64>,
}

impl PriorSpec {
    pub fn new(basis: &WaveletBasis, beta0: f64) -> Result<Self> {
        if !(beta0.is_finite() && beta0 >= 0.0) {
            return Err(Error::invalid(format!("beta0 must be >= 0, got {beta0}")));
        }
        let variances = basis.levels().iter().map(|&j| 2f64.powf(-2.0 * beta0 * j as f64)).collect();
        Ok(Self { beta0, max_level: basis.max_level(), variances })
    }

    /// Multiplies every variance by `factor`.
    pub fn scaled(mut self, factor: f64) -> Self {
        self.variances.iter_mut().for_each(|v| *v *= factor);
        self
    }

    pub fn dim(&self) -> usize {
        self.variances.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn haar_level_zero_is_normalised_indicator() {
        let b = build_haar(DEFAULT_XI, 0).unwrap();
        assert_eq!(b.dim(), 1);
        let c = 7f64.powf(-0.5);
        for x in [-3.5, -1.0, 0.0, 3.4] {
            assert!((b.evaluate(x)[0] - c).abs() < 1e-15);
        }
        assert_eq!(b.evaluate(3.6), vec![0.0]);
    }

    #[test]
    fn haar_dimension_is_two_to_the_cutoff() {
        for m in 0..=8 {
            assert_eq!(build_haar(DEFAULT_XI, m).unwrap().dim(), 1 << m);
        }
        let b = build_haar(DEFAULT_XI, 7).unwrap();
        assert_eq!(b.index(0), MultiIndex { j: 0, k: 0 });
        assert_eq!(b.index(127), MultiIndex { j: 7, k: 63 });
        let idx: Vec<_> = b.indices().collect();
        let mut sorted = idx.clone();
        sorted.sort();
        assert_eq!(idx, sorted, "lexicographic (j, k) layout");
    }

    #[test]
    fn haar_exact_inner_products() {
        let b = build_haar(DEFAULT_XI, 3).unwrap();
        let g = b.gram();
        let d = b.dim();
        let p1 = b.position(MultiIndex { j: 1, k: 0 }).unwrap();
        let p20 = b.position(MultiIndex { j: 2, k: 0 }).unwrap();
        let p21 = b.position(MultiIndex { j: 2, k: 1 }).unwrap();
        assert!((g[p1 * d + p1] - 1.0).abs() < 1e-12);
        assert!(g[p20 * d + p21].abs() < 1e-12);
        assert!(b.orthonormality_defect() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn haar_is_constant_on_its_cells(x in -3.6f64..3.6) {
            let b = build_haar(DEFAULT_XI, 5).unwrap();
            match b.haar_cell(x) {
                None => proptest::prop_assert!(b.evaluate(x).iter().all(|v| *v == 0.0)),
                Some(c) => {
                    let mid = DEFAULT_XI.0 + (c as f64 + 0.5) * 7.0 / 32.0;
                    proptest::prop_assert_eq!(b.evaluate(x), b.evaluate(mid));
                }
            }
        }
    }

    #[test]
    fn haar_one_nonzero_per_level() {
        let b = build_haar(DEFAULT_XI, 5).unwrap();
        let mut buf = Vec::new();
        for x in [-3.2, -0.01, 0.0, 1.7, 3.49] {
            b.evaluate_sparse(x, &mut buf);
            assert_eq!(buf.len(), 6);
            let dense = b.evaluate(x);
            assert_eq!(dense.iter().filter(|v| **v != 0.0).count(), 6);
        }
        b.evaluate_sparse(-4.0, &mut buf);
        assert!(buf.is_empty());
    }

    #[test]
    fn daubechies_orthonormality() {
        // D4 is only Hölder-0.55, so its interpolated table needs depth 14
        for (p, depth) in [(2usize, 14u32), (3, 12), (4, 12), (6, 12)] {
            let b = build_daubechies(DEFAULT_XI, 3, p, depth).unwrap();
            let defect = b.orthonormality_defect();
            assert!(defect < 1e-6, "p={p} defect={defect}");
        }
    }

    #[test]
    fn daubechies_matches_table_lookup() {
        let b = build_daubechies(DEFAULT_XI, 2, 3, 12).unwrap();
        let t = daubechies::CascadeTable::new(3, 12).unwrap();
        let x = 0.613;
        let u = (x - DEFAULT_XI.0) / 7.0;
        let v = b.evaluate(x);
        let j0 = b.coarsest_level();
        let amp = |lvl: u32| 7f64.powf(-0.5) * 2f64.powf(lvl as f64 / 2.0);
        // scaling element k = 2 at the coarsest level
        let expect = amp(j0) * t.phi_at(u * 2f64.powi(j0 as i32) - 2.0);
        assert!((v[2] - expect).abs() < 1e-14);
        let pos = b.position(MultiIndex { j: 2, k: 5 }).unwrap();
        let expect = amp(j0 + 1) * t.psi_at(u * 2f64.powi(j0 as i32 + 1) - 5.0);
        assert!((v[pos] - expect).abs() < 1e-14);
    }

    #[test]
    fn daubechies_rejects_bad_levels() {
        assert!(build_daubechies_from_level(DEFAULT_XI, 1, 2, 2, 10).is_err());
        assert!(build_daubechies(DEFAULT_XI, 2, 1, 10).is_err());
        assert!(build_daubechies(DEFAULT_XI, 2, 2, 4).is_err());
        assert!(build_haar((1.0, 1.0), 2).is_err());
    }

    #[test]
    fn project_basis_function_gives_unit_vector() {
        let b = build_haar(DEFAULT_XI, 4).unwrap();
        for i in [0usize, 3, 11] {
            let c = b.project_fn(|x| b.evaluate(x)[i]);
            for (j, v) in c.iter().enumerate() {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((v - e).abs() < 1e-12);
            }
        }
        assert!(b.project_fn(|_| 0.0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sobolev_norm_examples() {
        let b = build_haar(DEFAULT_XI, 7).unwrap();
        let c: Vec<f64> = (0..b.dim()).map(|i| (i as f64 * 0.37).sin()).collect();
        let eucl = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((b.sobolev_norm(&c, 0.0).unwrap() - eucl).abs() < 1e-12);
        let mut e = vec![0.0; b.dim()];
        e[b.dim() - 1] = 1.0;
        assert!((b.sobolev_norm(&e, 0.5).unwrap() - 2f64.powf(3.5)).abs() < 1e-12);
        let brute: f64 = b.levels().iter().zip(&c).map(|(&j, v)| 4f64.powi(j as i32) * v * v).sum();
        assert!((b.sobolev_norm(&c, 1.0).unwrap() - brute.sqrt()).abs() < 1e-10);
        assert!(b.sobolev_norm(&c[1..], 1.0).is_err());
    }

    #[test]
    fn prior_covariance_examples() {
        let b = build_haar(DEFAULT_XI, 7).unwrap();
        let p = b.prior_covariance(0.0).unwrap();
        assert!(p.variances.iter().all(|v| *v == 1.0));
        let p = b.prior_covariance(0.5).unwrap();
        assert!((p.variances[127] - 2f64.powi(-7)).abs() < 1e-18);
        let p = b.prior_covariance(1.0).unwrap();
        let i = b.position(MultiIndex { j: 3, k: 1 }).unwrap();
        assert!((p.variances[i] - 2f64.powi(-6)).abs() < 1e-18);
        assert!(p.variances.windows(2).all(|w| w[1] <= w[0]));
        assert!(b.prior_covariance(-1.0).is_err());
    }

    #[test]
    fn descriptor_roundtrip() {
        let d = BasisDescriptor {
            family: Family::Daubechies { vanishing_moments: 3, cascade_depth: 10 },
            xi: DEFAULT_XI,
            max_level: 2,
            quadrature_step: None,
        };
        let s = toml::to_string(&d).unwrap();
        let back: BasisDescriptor = toml::from_str(&s).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.build().unwrap().descriptor(), d);
    }
}
