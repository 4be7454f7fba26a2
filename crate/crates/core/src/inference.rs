//! Sufficient statistics, the conjugate Gaussian posterior and the
//! Girsanov / LAN decompositions of the log-likelihood.
//!
//! The drift residual of a step is taken in the implicit form used by the
//! simulator, `r = X_{m+1} - X_m - ν dt Δ_h X_{m+1}`, which equals
//! `dt f(X_m) + √(dt/dy) ξ_m` exactly for simulated paths. Basis functions
//! are evaluated at the left point `X_m`.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{laplacian_into, SpaceTimePath};
use crate::reaction::ReactionModel;
use crate::rng::{stream, CounterRng};
use crate::sim::StepObserver;
use crate::stats::quantile_sorted;
use crate::wavelet::{BasisDescriptor, PriorSpec, WaveletBasis};

/// `G = ∫∫ Ψ(X)Ψ(X)ᵀ dy dt` and `a = ∫⟨Ψ(X_t), dX_t - ΔX_t dt⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub gram: DMatrix<f64>,
    pub score: DVector<f64>,
    pub lambda: f64,
    pub horizon: f64,
}

impl SufficientStats {
    pub fn dim(&self) -> usize {
        self.score.len()
    }

    /// Sum of statistics from independent observations on a common domain.
    pub fn merge(&mut self, other: &SufficientStats) -> Result<()> {
        if other.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: other.dim() });
        }
        self.gram += &other.gram;
        self.score += &other.score;
        self.horizon += other.horizon;
        Ok(())
    }
}

/// Implicit drift residuals of one step: `next - prev - ν dt Δ_h next`.
pub(crate) fn step_residuals(prev: &[f64], next: &[f64], dy: f64, dt: f64, diffusivity: f64, out: &mut [f64]) {
    laplacian_into(next, dy, out);
    for i in 0..next.len() {
        out[i] = next[i] - prev[i] - diffusivity * dt * out[i];
    }
}

/// Streaming accumulator for [`SufficientStats`]; usable as a simulation
/// observer.
pub struct StatsAccumulator<'a> {
    basis: &'a WaveletBasis,
    dy: f64,
    dt: f64,
    diffusivity: f64,
    lambda: f64,
    steps: usize,
    resid: Vec<f64>,
    // Haar: per-cell occupation counts and residual sums
    cell_count: Vec<f64>,
    cell_resid: Vec<f64>,
    // general families
    gram: Vec<f64>,
    score: Vec<f64>,
    buf: Vec<(usize, f64)>,
}

impl<'a> StatsAccumulator<'a> {
    pub fn new(basis: &'a WaveletBasis, lambda: f64, dy: f64, dt: f64, diffusivity: f64) -> Self {
        let d = basis.dim();
        let cells = basis.haar_cells().unwrap_or(0);
        let general = basis.haar_cells().is_none();
        Self {
            basis,
            dy,
            dt,
            diffusivity,
            lambda,
            steps: 0,
            resid: Vec::new(),
            cell_count: vec![0.0; cells],
            cell_resid: vec![0.0; cells],
            gram: if general { vec![0.0; d * d] } else { Vec::new() },
            score: if general { vec![0.0; d] } else { Vec::new() },
            buf: Vec::new(),
        }
    }

    pub fn for_path(basis: &'a WaveletBasis, path: &SpaceTimePath) -> Self {
        Self::new(basis, path.lambda(), path.grid().dy(), path.dt(), path.diffusivity())
    }

    pub fn push(&mut self, step: usize, prev: &[f64], next: &[f64]) -> Result<()> {
        self.resid.resize(next.len(), 0.0);
        step_residuals(prev, next, self.dy, self.dt, self.diffusivity, &mut self.resid);
        if let Some(i) = self.resid.iter().position(|r| !r.is_finite()) {
            return Err(Error::NumericalAbort(format!("non-finite residual at step {step}, cell {i}")));
        }
        if self.basis.haar_cells().is_some() {
            for (x, r) in prev.iter().zip(&self.resid) {
                if let Some(c) = self.basis.haar_cell(*x) {
                    self.cell_count[c] += 1.0;
                    self.cell_resid[c] += r;
                }
            }
        } else {
            let d = self.basis.dim();
            let w = self.dy * self.dt;
            for (x, r) in prev.iter().zip(&self.resid) {
                self.basis.evaluate_sparse(*x, &mut self.buf);
                for &(a, va) in &self.buf {
                    self.score[a] += va * r * self.dy;
                    for &(b, vb) in &self.buf {
                        self.gram[a * d + b] += va * vb * w;
                    }
                }
            }
        }
        self.steps += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<SufficientStats> {
        let d = self.basis.dim();
        let mut gram = DMatrix::<f64>::zeros(d, d);
        let mut score = DVector::<f64>::zeros(d);
        if let Some(cells) = self.basis.haar_cells() {
            let (lo, hi) = self.basis.xi();
            let width = (hi - lo) / cells as f64;
            for c in 0..cells {
                if self.cell_count[c] == 0.0 {
                    continue;
                }
                let mut psi = Vec::new();
                self.basis.evaluate_sparse(lo + (c as f64 + 0.5) * width, &mut psi);
                let wg = self.cell_count[c] * self.dy * self.dt;
                let ws = self.cell_resid[c] * self.dy;
                for &(a, va) in &psi {
                    score[a] += va * ws;
                    for &(b, vb) in &psi {
                        gram[(a, b)] += va * vb * wg;
                    }
                }
            }
        } else {
            gram.copy_from_slice(&self.gram);
            gram = gram.transpose();
            score.copy_from_slice(&self.score);
        }
        if let Some(i) = score.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericalAbort(format!("non-finite score entry {i}")));
        }
        Ok(SufficientStats { gram, score, lambda: self.lambda, horizon: self.steps as f64 * self.dt })
    }
}

impl StepObserver for StatsAccumulator<'_> {
    fn observe(&mut self, step: usize, prev: &[f64], next: &[f64], _noise: &[f64]) -> Result<()> {
        self.push(step, prev, next)
    }
}

pub fn accumulate_stats(path: &SpaceTimePath, basis: &WaveletBasis) -> Result<SufficientStats> {
    let mut acc = StatsAccumulator::for_path(basis, path);
    for (m, prev, next) in path.increments() {
        acc.push(m, prev, next)?;
    }
    acc.finish()
}

/// `ℓ(c) = aᵀc - ½ cᵀGc`.
pub fn log_likelihood(stats: &SufficientStats, coeffs: &[f64]) -> Result<f64> {
    if coeffs.len() != stats.dim() {
        return Err(Error::DimensionMismatch { expected: stats.dim(), found: coeffs.len() });
    }
    let c = DVector::from_column_slice(coeffs);
    Ok(stats.score.dot(&c) - 0.5 * c.dot(&(&stats.gram * &c)))
}

/// Gaussian posterior `N(μ, Q)` with `Q = (G + Σ⁻¹)⁻¹`, `μ = Q a`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorGaussian {
    pub mean: DVector<f64>,
    /// Lower-triangular `L` with `L Lᵀ = Q`.
    pub cov_factor: DMatrix<f64>,
    pub basis: BasisDescriptor,
    pub prior: PriorSpec,
    /// Diagonal jitter that was needed to factorise `G + Σ⁻¹` (0 normally).
    pub jitter: f64,
}

impl PosteriorGaussian {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.cov_factor * self.cov_factor.transpose()
    }

    /// Pointwise sd `(Ψ(x)ᵀ Q Ψ(x))^{1/2}`.
    pub fn pointwise_sd(&self, basis: &WaveletBasis, x: f64) -> f64 {
        let mut v = DVector::<f64>::zeros(self.dim());
        basis.for_each_nonzero(x, |i, val| v[i] += val);
        (self.cov_factor.transpose() * v).norm()
    }
}

fn cholesky_with_jitter(a: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let d = a.nrows();
    let scale = a.trace() / d as f64;
    for eps in [0.0, 1e-12, 1e-10] {
        let mut m = a.clone();
        for i in 0..d {
            m[(i, i)] += eps * scale;
        }
        if let Some(c) = m.cholesky() {
            return Ok((c, eps * scale));
        }
    }
    Err(Error::Factorization("matrix is not positive definite even after jitter".into()))
}

pub fn posterior(stats: &SufficientStats, prior: &PriorSpec, basis: BasisDescriptor) -> Result<PosteriorGaussian> {
    let d = stats.dim();
    if prior.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, found: prior.dim() });
    }
    if prior.variances.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::invalid("prior variances must be positive and finite"));
    }
    if stats.gram.iter().chain(stats.score.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Factorization("non-finite sufficient statistics".into()));
    }
    let mut precision = stats.gram.clone();
    for i in 0..d {
        precision[(i, i)] += 1.0 / prior.variances[i];
    }
    let precision = (&precision + precision.transpose()) * 0.5;
    let (chol, jitter) = cholesky_with_jitter(&precision)?;
    let mean = chol.solve(&stats.score);
    let q = chol.inverse();
    let q = (&q + q.transpose()) * 0.5;
    let (qchol, _) = cholesky_with_jitter(&q)?;
    Ok(PosteriorGaussian { mean, cov_factor: qchol.l(), basis, prior: prior.clone(), jitter })
}

/// Relative MAP residual `‖a - (G + Σ⁻¹) μ‖_∞ / ‖a‖_∞` of a fitted posterior
/// (absolute when `a = 0`).
pub fn conjugacy_residual(stats: &SufficientStats, post: &PosteriorGaussian) -> Result<f64> {
    let d = stats.dim();
    if post.dim() != d || post.prior.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, found: post.dim() });
    }
    let mut r = &stats.score - &stats.gram * &post.mean;
    for i in 0..d {
        r[i] -= post.mean[i] / post.prior.variances[i];
    }
    let scale = stats.score.amax();
    Ok(if scale > 0.0 { r.amax() / scale } else { r.amax() })
}

/// `n` posterior draws `μ + L z` as rows; draw `i` uses counter step `i` of
/// the posterior stream of `(seed, key)`.
pub fn sample_posterior_keyed(post: &PosteriorGaussian, n: usize, seed: u128, key: u32) -> DMatrix<f64> {
    let d = post.dim();
    let rng = CounterRng::new(seed);
    let mut out = DMatrix::<f64>::zeros(n, d);
    let mut z = vec![0.0; d];
    for i in 0..n {
        rng.fill_normals(stream::POSTERIOR, key, i as u32, &mut z);
        let draw = &post.mean + &post.cov_factor * DVector::from_column_slice(&z);
        out.row_mut(i).copy_from(&draw.transpose());
    }
    out
}

pub fn sample_posterior(post: &PosteriorGaussian, n: usize, seed: u128) -> DMatrix<f64> {
    sample_posterior_keyed(post, n, seed, 0)
}

/// Pointwise credible band of `f(x) = Ψ(x)ᵀ θ` under the posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct CredibleBand {
    pub x: Vec<f64>,
    pub lower: Vec<f64>,
    pub median: Vec<f64>,
    pub upper: Vec<f64>,
    pub sd_analytic: Vec<f64>,
    pub sd_empirical: Vec<f64>,
}

impl CredibleBand {
    /// CSV with header `x,lower,median,upper,sd_analytic`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,lower,median,upper,sd_analytic\n");
        for i in 0..self.x.len() {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                self.x[i], self.lower[i], self.median[i], self.upper[i], self.sd_analytic[i]
            ));
        }
        s
    }
}

pub fn credible_band(
    post: &PosteriorGaussian,
    basis: &WaveletBasis,
    xs: &[f64],
    level: f64,
    n_draws: usize,
    seed: u128,
) -> Result<CredibleBand> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("credible level must lie in (0, 1), got {level}")));
    }
    if n_draws == 0 {
        return Err(Error::invalid("need at least one posterior draw"));
    }
    if basis.dim() != post.dim() {
        return Err(Error::DimensionMismatch { expected: post.dim(), found: basis.dim() });
    }
    let draws = sample_posterior(post, n_draws, seed);
    let psi: Vec<Vec<(usize, f64)>> = xs
        .iter()
        .map(|&x| {
            let mut v = Vec::new();
            basis.evaluate_sparse(x, &mut v);
            v
        })
        .collect();
    let mut band = CredibleBand {
        x: xs.to_vec(),
        lower: Vec::with_capacity(xs.len()),
        median: Vec::with_capacity(xs.len()),
        upper: Vec::with_capacity(xs.len()),
        sd_analytic: Vec::with_capacity(xs.len()),
        sd_empirical: Vec::with_capacity(xs.len()),
    };
    let alpha = (1.0 - level) / 2.0;
    let mut values = vec![0.0; n_draws];
    for (j, p) in psi.iter().enumerate() {
        for (i, v) in values.iter_mut().enumerate() {
            *v = p.iter().map(|&(k, w)| draws[(i, k)] * w).sum();
        }
        let m = values.iter().sum::<f64>() / n_draws as f64;
        let var = if n_draws > 1 {
            values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n_draws - 1) as f64
        } else {
            0.0
        };
        values.sort_by(f64::total_cmp);
        band.lower.push(quantile_sorted(&values, alpha));
        band.median.push(quantile_sorted(&values, 0.5));
        band.upper.push(quantile_sorted(&values, 1.0 - alpha));
        band.sd_empirical.push(var.sqrt());
        band.sd_analytic.push(post.pointwise_sd(basis, xs[j]));
    }
    Ok(band)
}

/// Terms of `ℓ(f) - ℓ(f₀) = √λ M̂ - (λ/2) ĥ²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GirsanovTerms {
    /// `M̂ = λ^{-1/2} Σ (f - f₀)(X_m) e_m dy` with noise increments `e`.
    pub martingale_term: f64,
    /// `ĥ² = λ^{-1} Σ (f - f₀)²(X_m) dy dt`.
    pub hellinger_sq: f64,
    /// `ℓ(f) - ℓ(f₀)` from the sufficient statistics and the direct sums for `f₀`.
    pub loglik_diff: f64,
}

/// Direct sums `Σ g(X_m) r_m dy` and `Σ g(X_m)² dy dt` for a function `g`.
fn function_loglik_terms(path: &SpaceTimePath, g: &ReactionModel) -> (f64, f64) {
    let (dy, dt) = (path.grid().dy(), path.dt());
    let mut resid = vec![0.0; path.grid().n()];
    let (mut lin, mut quad) = (0.0, 0.0);
    for (_, prev, next) in path.increments() {
        step_residuals(prev, next, dy, dt, path.diffusivity(), &mut resid);
        for (x, r) in prev.iter().zip(&resid) {
            let v = g.eval(*x);
            lin += v * r * dy;
            quad += v * v * dy * dt;
        }
    }
    (lin, quad)
}

pub fn girsanov_decomposition(
    path: &SpaceTimePath,
    basis: &WaveletBasis,
    stats: &SufficientStats,
    f_coeffs: &[f64],
    f0: &ReactionModel,
) -> Result<GirsanovTerms> {
    if f_coeffs.len() != basis.dim() {
        return Err(Error::DimensionMismatch { expected: basis.dim(), found: f_coeffs.len() });
    }
    let lambda = path.lambda();
    let (dy, dt) = (path.grid().dy(), path.dt());
    let mut resid = vec![0.0; path.grid().n()];
    let (mut mart, mut hsq) = (0.0, 0.0);
    for (_, prev, next) in path.increments() {
        step_residuals(prev, next, dy, dt, path.diffusivity(), &mut resid);
        for (x, r) in prev.iter().zip(&resid) {
            let f0x = f0.eval(*x);
            let diff = basis.reconstruct_at(f_coeffs, *x) - f0x;
            mart += diff * (r - f0x * dt) * dy;
            hsq += diff * diff * dy * dt;
        }
    }
    let (lin0, quad0) = function_loglik_terms(path, f0);
    let loglik_diff = log_likelihood(stats, f_coeffs)? - (lin0 - 0.5 * quad0);
    Ok(GirsanovTerms { martingale_term: mart / lambda.sqrt(), hellinger_sq: hsq / lambda, loglik_diff })
}

/// `W_λ(h) = λ^{-1/2} Σ h(X_m) e_m dy` and `ℐ_λ(h) = λ^{-1} Σ h(X_m)² dy dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LanStatistics {
    pub w_lambda: f64,
    pub i_lambda: f64,
}

/// Noise increments come from the recorded `ξ` when present, otherwise from
/// the residuals under `f0`.
pub fn lan_statistics(path: &SpaceTimePath, h: &ReactionModel, f0: Option<&ReactionModel>) -> Result<LanStatistics> {
    let (dy, dt) = (path.grid().dy(), path.dt());
    let n = path.grid().n();
    let lambda = path.lambda();
    let amp = path.noise_scale() * (dt / dy).sqrt();
    let noise = path.noise_record();
    if noise.is_none() && f0.is_none() {
        return Err(Error::invalid("noise increments need a noise record or the generating reaction"));
    }
    let mut e = vec![0.0; n];
    let (mut w, mut i_sum) = (0.0, 0.0);
    for (m, prev, next) in path.increments() {
        match (noise, f0) {
            (Some(xi), _) => {
                for (ei, z) in e.iter_mut().zip(&xi[m * n..(m + 1) * n]) {
                    *ei = amp * z;
                }
            }
            (None, Some(f0)) => {
                step_residuals(prev, next, dy, dt, path.diffusivity(), &mut e);
                for (ei, x) in e.iter_mut().zip(prev) {
                    *ei -= f0.eval(*x) * dt;
                }
            }
            (None, None) => unreachable!(),
        }
        for (x, ei) in prev.iter().zip(&e) {
            let hx = h.eval(*x);
            w += hx * ei * dy;
            i_sum += hx * hx * dy * dt;
        }
    }
    Ok(LanStatistics { w_lambda: w / lambda.sqrt(), i_lambda: i_sum / lambda })
}

#[derive(Serialize, Deserialize)]
struct PosteriorFile {
    dim: usize,
    basis: BasisDescriptor,
    prior: PriorSpec,
    jitter: f64,
    mean: Vec<f64>,
    /// Lower triangle of `L`, row-major.
    cov_factor: Vec<f64>,
}

pub fn posterior_to_json(post: &PosteriorGaussian) -> Result<String> {
    let d = post.dim();
    let mut packed = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        for j in 0..=i {
            packed.push(post.cov_factor[(i, j)]);
        }
    }
    let file = PosteriorFile {
        dim: d,
        basis: post.basis,
        prior: post.prior.clone(),
        jitter: post.jitter,
        mean: post.mean.iter().copied().collect(),
        cov_factor: packed,
    };
    serde_json::to_string_pretty(&file).map_err(|e| Error::Format(e.to_string()))
}

pub fn posterior_from_json(text: &str) -> Result<PosteriorGaussian> {
    let f: PosteriorFile = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    let d = f.dim;
    if f.mean.len() != d || f.cov_factor.len() != d * (d + 1) / 2 || f.prior.dim() != d {
        return Err(Error::Format("posterior arrays do not match dim".into()));
    }
    let mut l = DMatrix::<f64>::zeros(d, d);
    let mut it = f.cov_factor.iter();
    for i in 0..d {
        for j in 0..=i {
            l[(i, j)] = *it.next().expect("length checked");
        }
    }
    Ok(PosteriorGaussian {
        mean: DVector::from_vec(f.mean),
        cov_factor: l,
        basis: f.basis,
        prior: f.prior,
        jitter: f.jitter,
    })
}

pub fn save_posterior(post: &PosteriorGaussian, file: &Path) -> Result<()> {
    std::fs::write(file, posterior_to_json(post)?)?;
    Ok(())
}

pub fn load_posterior(file: &Path) -> Result<PosteriorGaussian> {
    posterior_from_json(&std::fs::read_to_string(file)?)
}
