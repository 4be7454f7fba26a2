//! Daubechies filters and cascade tabulation of `φ` and `ψ`.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

type C64 = Complex<f64>;

/// Minimum-phase Daubechies scaling filter with `p` vanishing moments
/// (length `2p`, normalised to `Σ h_k = √2`).
///
/// Built by spectral factorisation: the roots of
/// `P(y) = Σ_{k<p} C(p-1+k, k) y^k` are mapped through `y = (2 - z - 1/z)/4`
/// and the roots inside the unit disc are kept.
pub fn daubechies_filter(p: usize) -> Result<Vec<f64>> {
    if p < 1 {
        return Err(Error::invalid("Daubechies filter needs p >= 1"));
    }
    // P(y) coefficients in increasing degree
    let coeffs: Vec<f64> = (0..p).map(|k| binomial(p - 1 + k, k)).collect();
    let y_roots = polynomial_roots(&coeffs)?;

    let mut poly = vec![C64::new(1.0, 0.0)];
    for _ in 0..p {
        poly = poly_mul(&poly, &[C64::new(1.0, 0.0), C64::new(1.0, 0.0)]);
    }
    for y in y_roots {
        let c = C64::new(1.0, 0.0) - y * 2.0;
        let disc = (c * c - 1.0).sqrt();
        let (z1, z2) = (c + disc, c - disc);
        let z = if z1.norm() < z2.norm() { z1 } else { z2 };
        poly = poly_mul(&poly, &[-z, C64::new(1.0, 0.0)]);
    }
    let mut h: Vec<f64> = poly.iter().map(|c| c.re).collect();
    let s: f64 = h.iter().sum();
    let norm = std::f64::consts::SQRT_2 / s;
    h.iter_mut().for_each(|v| *v *= norm);
    // orient so that the largest taps come first (standard D2p ordering)
    let head: f64 = h[..p].iter().map(|v| v * v).sum();
    let tail: f64 = h[p..].iter().map(|v| v * v).sum();
    if tail > head {
        h.reverse();
    }
    Ok(h)
}

/// Quadrature-mirror wavelet filter `g_k = (-1)^k h_{L-1-k}`.
pub fn wavelet_filter(h: &[f64]) -> Vec<f64> {
    let l = h.len();
    (0..l).map(|k| if k % 2 == 0 { h[l - 1 - k] } else { -h[l - 1 - k] }).collect()
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn poly_mul(a: &[C64], b: &[C64]) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_eval(coeffs: &[f64], z: C64) -> (C64, C64) {
    let mut v = C64::new(0.0, 0.0);
    let mut d = C64::new(0.0, 0.0);
    for &c in coeffs.iter().rev() {
        d = d * z + v;
        v = v * z + c;
    }
    (v, d)
}

/// Roots of a real polynomial given in increasing degree (Durand–Kerner,
/// Newton-polished).
fn polynomial_roots(coeffs: &[f64]) -> Result<Vec<C64>> {
    let deg = coeffs.len() - 1;
    if deg == 0 {
        return Ok(Vec::new());
    }
    let lead = coeffs[deg];
    let monic: Vec<f64> = coeffs.iter().map(|c| c / lead).collect();
    let radius = 1.0 + monic[..deg].iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let seed = C64::new(0.4, 0.9);
    let mut roots: Vec<C64> = (0..deg).map(|k| seed.powu(k as u32) * (radius / 2.0)).collect();
    for _ in 0..2000 {
        let mut delta = 0.0f64;
        for i in 0..deg {
            let (v, _) = poly_eval(&monic, roots[i]);
            let mut denom = C64::new(1.0, 0.0);
            for j in 0..deg {
                if i != j {
                    denom *= roots[i] - roots[j];
                }
            }
            let step = v / denom;
            roots[i] -= step;
            delta = delta.max(step.norm());
        }
        if delta < 1e-15 {
            break;
        }
    }
    for r in roots.iter_mut() {
        for _ in 0..3 {
            let (v, d) = poly_eval(&monic, *r);
            if d.norm() > 0.0 {
                *r -= v / d;
            }
        }
    }
    if roots.iter().any(|r| !r.re.is_finite() || !r.im.is_finite()) {
        return Err(Error::NumericalAbort("root finding for Daubechies filter diverged".into()));
    }
    Ok(roots)
}

/// Dyadic tables of `φ` and `ψ` on `[0, L-1]` at spacing `2^{-depth}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeTable {
    pub filter: Vec<f64>,
    pub depth: u32,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
}

impl CascadeTable {
    pub fn new(p: usize, depth: u32) -> Result<Self> {
        let h = daubechies_filter(p)?;
        let g = wavelet_filter(&h);
        let l = h.len();
        let res = 1usize << depth;
        let len = (l - 1) * res + 1;
        let mut phi = vec![0.0; len];

        // integer samples: eigenvector of A_{nm} = √2 h_{2n-m} with Σ φ(n) = 1
        let inner = l - 2;
        let mut a = DMatrix::<f64>::zeros(inner, inner);
        for n in 1..=inner {
            for m in 1..=inner {
                let idx = 2 * n as isize - m as isize;
                if idx >= 0 && (idx as usize) < l {
                    a[(n - 1, m - 1)] = std::f64::consts::SQRT_2 * h[idx as usize];
                }
            }
            a[(n - 1, n - 1)] -= 1.0;
        }
        let mut rhs = DVector::<f64>::zeros(inner);
        for m in 0..inner {
            a[(inner - 1, m)] = 1.0;
        }
        rhs[inner - 1] = 1.0;
        let ints = a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::NumericalAbort("singular cascade eigen-system".into()))?;
        for n in 1..=inner {
            phi[n * res] = ints[n - 1];
        }

        // refine: φ(x) = √2 Σ h_k φ(2x - k)
        for level in 1..=depth {
            let stride = res >> level;
            let mut i = stride;
            while i < len {
                let mut acc = 0.0;
                for (k, hk) in h.iter().enumerate() {
                    let j = 2 * i as isize - (k * res) as isize;
                    if j >= 0 && (j as usize) < len {
                        acc += hk * phi[j as usize];
                    }
                }
                phi[i] = std::f64::consts::SQRT_2 * acc;
                i += 2 * stride;
            }
        }

        let psi = (0..len)
            .map(|i| {
                let mut acc = 0.0;
                for (k, gk) in g.iter().enumerate() {
                    let j = 2 * i as isize - (k * res) as isize;
                    if j >= 0 && (j as usize) < len {
                        acc += gk * phi[j as usize];
                    }
                }
                std::f64::consts::SQRT_2 * acc
            })
            .collect();

        Ok(Self { filter: h, depth, phi, psi })
    }

    /// Support length `L - 1 = 2p - 1`.
    pub fn support(&self) -> f64 {
        (self.filter.len() - 1) as f64
    }

    pub fn phi_at(&self, x: f64) -> f64 {
        lookup(&self.phi, self.depth, x)
    }

    pub fn psi_at(&self, x: f64) -> f64 {
        lookup(&self.psi, self.depth, x)
    }
}

#[inline]
fn lookup(table: &[f64], depth: u32, x: f64) -> f64 {
    if !(x > 0.0) {
        return 0.0;
    }
    let t = x * (1u64 << depth) as f64;
    let i = t.floor() as usize;
    if i + 1 >= table.len() {
        return 0.0;
    }
    let frac = t - i as f64;
    table[i] * (1.0 - frac) + table[i + 1] * frac
}
