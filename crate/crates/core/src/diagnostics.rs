//! Path functionals: Hellinger semi-metric, spatial ergodic averages,
//! occupation times, density estimates and tail summaries.
//!
//! All time integrals are left-point Riemann sums over frames `0..n_steps`,
//! matching the likelihood statistics.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::grid::SpaceTimePath;
use crate::reaction::ReactionModel;
use crate::sim::{replicate_with, simulate_streaming, ProxyConfig};
use crate::stats::{mean, quantile_sorted, variance};

/// Occupation-time scale `2^7`.
pub const OCCUPATION_SCALE: f64 = 128.0;
/// Occupation-time window half-width `2^{-8}`.
pub const OCCUPATION_HALF_WIDTH: f64 = 1.0 / 256.0;
/// Default histogram range for density estimates.
pub const DENSITY_RANGE: (f64, f64) = (-4.0, 4.0);
/// Default histogram bin width `2 · 2^{-8}`.
pub const DENSITY_BIN_WIDTH: f64 = 1.0 / 128.0;
/// Tail levels reported by [`concentration_summary`].
pub const TAIL_LEVELS: [f64; 4] = [0.9, 0.95, 0.99, 0.995];

/// Frames `0..n_steps` (left points of every time step).
fn left_frames(path: &SpaceTimePath) -> impl Iterator<Item = &[f64]> {
    path.increments().map(|(_, prev, _)| prev)
}

/// `λ⁻¹ Σ (f - g)²(X_m(y_i)) dy dt`.
pub fn hellinger_sq(path: &SpaceTimePath, f: &ReactionModel, g: &ReactionModel) -> f64 {
    spatial_average(path, |x| (f.eval(x) - g.eval(x)).powi(2))
}

/// `𝒢_λ(g) = ∫₀ᵀ λ⁻¹ ∫ g(X_t(y)) dy dt` as a Riemann sum.
pub fn spatial_average(path: &SpaceTimePath, g: impl Fn(f64) -> f64) -> f64 {
    let w = path.grid().dy() * path.dt() / path.lambda();
    left_frames(path).map(|frame| frame.iter().map(|&x| g(x)).sum::<f64>()).sum::<f64>() * w
}

/// Streaming version of [`spatial_average`] for use as a simulation observer.
pub struct SpatialAverager<G> {
    g: G,
    weight: f64,
    sum: f64,
}

impl<G: Fn(f64) -> f64> SpatialAverager<G> {
    pub fn new(g: G, lambda: f64, dy: f64, dt: f64) -> Self {
        Self { g, weight: dy * dt / lambda, sum: 0.0 }
    }

    pub fn value(&self) -> f64 {
        self.sum * self.weight
    }
}

impl<G: Fn(f64) -> f64> crate::sim::StepObserver for SpatialAverager<G> {
    fn observe(&mut self, _step: usize, prev: &[f64], _next: &[f64], _noise: &[f64]) -> Result<()> {
        self.sum += prev.iter().map(|&x| (self.g)(x)).sum::<f64>();
        Ok(())
    }
}

/// `M(x) = scale · Σ 1(|X_m(y_i) - x| ≤ half_width) dy dt` for each `x`.
pub fn occupation_time(path: &SpaceTimePath, xs: &[f64], half_width: f64, scale: f64) -> Result<Vec<f64>> {
    if !(half_width > 0.0) {
        return Err(Error::invalid(format!("half-width must be positive, got {half_width}")));
    }
    let w = path.grid().dy() * path.dt() * scale;
    // sort path values once, then count by binary search
    let mut values: Vec<f64> = left_frames(path).flatten().copied().collect();
    values.sort_by(f64::total_cmp);
    Ok(xs
        .iter()
        .map(|&x| {
            let lo = values.partition_point(|&v| v < x - half_width);
            let hi = values.partition_point(|&v| v <= x + half_width);
            (hi - lo) as f64 * w
        })
        .collect())
}

/// Histogram estimate of the time-integrated marginal density `p_{f₀}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub bin_centers: Vec<f64>,
    pub bin_halfwidth: f64,
    pub values: Vec<f64>,
    /// `Σ values · 2·halfwidth`.
    pub total_mass: f64,
    /// Time–space mass (per unit length and replicate) falling outside the bins.
    pub outside_mass: f64,
}

impl DensityEstimate {
    pub fn bin_width(&self) -> f64 {
        2.0 * self.bin_halfwidth
    }

    /// Value of the bin containing `z` (0 outside the histogram).
    pub fn at(&self, z: f64) -> f64 {
        let lo = self.bin_centers[0] - self.bin_halfwidth;
        let k = ((z - lo) / self.bin_width()).floor();
        if k < 0.0 || k >= self.values.len() as f64 {
            0.0
        } else {
            self.values[k as usize]
        }
    }

    /// Indices of bins meeting `[a, b]`.
    pub fn bins_meeting(&self, a: f64, b: f64) -> impl Iterator<Item = usize> + '_ {
        (0..self.values.len()).filter(move |&k| {
            let c = self.bin_centers[k];
            c + self.bin_halfwidth > a && c - self.bin_halfwidth < b
        })
    }

    pub fn min_on(&self, a: f64, b: f64) -> f64 {
        self.bins_meeting(a, b).map(|k| self.values[k]).fold(f64::INFINITY, f64::min)
    }

    pub fn max_on(&self, a: f64, b: f64) -> f64 {
        self.bins_meeting(a, b).map(|k| self.values[k]).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("z,p_hat\n");
        for (z, p) in self.bin_centers.iter().zip(&self.values) {
            s.push_str(&format!("{z},{p}\n"));
        }
        s
    }
}

/// Pooled occupation histogram; feed paths (or simulation steps) and call
/// [`DensityAccumulator::finish`].
#[derive(Debug, Clone)]
pub struct DensityAccumulator {
    lo: f64,
    width: f64,
    counts: Vec<f64>,
    outside: f64,
    lambda: Option<f64>,
    weight: f64,
    replicates: usize,
}

impl DensityAccumulator {
    pub fn new(range: (f64, f64), bin_width: f64) -> Result<Self> {
        if !(bin_width > 0.0 && range.1 > range.0) {
            return Err(Error::invalid("density histogram needs a positive bin width and range"));
        }
        let bins = ((range.1 - range.0) / bin_width).round().max(1.0) as usize;
        Ok(Self {
            lo: range.0,
            width: (range.1 - range.0) / bins as f64,
            counts: vec![0.0; bins],
            outside: 0.0,
            lambda: None,
            weight: 0.0,
            replicates: 0,
        })
    }

    pub fn with_defaults() -> Self {
        Self::new(DENSITY_RANGE, DENSITY_BIN_WIDTH).expect("static histogram layout")
    }

    /// Starts a new replicate with time–space cell weight `dy dt`.
    pub fn begin_replicate(&mut self, lambda: f64, dy: f64, dt: f64) -> Result<()> {
        match self.lambda {
            Some(l) if (l - lambda).abs() > 1e-12 * l => {
                return Err(Error::invalid("pooled paths must share lambda"));
            }
            _ => self.lambda = Some(lambda),
        }
        self.weight = dy * dt;
        self.replicates += 1;
        Ok(())
    }

    pub fn push_frame(&mut self, frame: &[f64]) {
        for &x in frame {
            let k = ((x - self.lo) / self.width).floor();
            if k >= 0.0 && k < self.counts.len() as f64 {
                self.counts[k as usize] += self.weight;
            } else {
                self.outside += self.weight;
            }
        }
    }

    pub fn push_path(&mut self, path: &SpaceTimePath) -> Result<()> {
        self.begin_replicate(path.lambda(), path.grid().dy(), path.dt())?;
        for frame in left_frames(path) {
            self.push_frame(frame);
        }
        Ok(())
    }

    /// Merges another accumulator with the same layout.
    pub fn merge(&mut self, other: &DensityAccumulator) -> Result<()> {
        if other.counts.len() != self.counts.len() || other.lo != self.lo || other.width != self.width {
            return Err(Error::invalid("histogram layouts differ"));
        }
        if let (Some(a), Some(b)) = (self.lambda, other.lambda) {
            if (a - b).abs() > 1e-12 * a {
                return Err(Error::invalid("pooled paths must share lambda"));
            }
        }
        self.lambda = self.lambda.or(other.lambda);
        for (c, o) in self.counts.iter_mut().zip(&other.counts) {
            *c += o;
        }
        self.outside += other.outside;
        self.replicates += other.replicates;
        Ok(())
    }

    pub fn finish(&self) -> Result<DensityEstimate> {
        let lambda = self.lambda.ok_or_else(|| Error::invalid("density estimate needs at least one path"))?;
        let norm = lambda * self.replicates as f64;
        let values: Vec<f64> = self.counts.iter().map(|c| c / (norm * self.width)).collect();
        let total_mass = values.iter().sum::<f64>() * self.width;
        Ok(DensityEstimate {
            bin_centers: (0..values.len()).map(|k| self.lo + (k as f64 + 0.5) * self.width).collect(),
            bin_halfwidth: self.width / 2.0,
            values,
            total_mass,
            outside_mass: self.outside / norm,
        })
    }
}

impl crate::sim::StepObserver for DensityAccumulator {
    fn observe(&mut self, _step: usize, prev: &[f64], _next: &[f64], _noise: &[f64]) -> Result<()> {
        self.push_frame(prev);
        Ok(())
    }
}

/// Pools the occupation of `paths` into a histogram with the default layout.
pub fn density_estimate(paths: &[SpaceTimePath]) -> Result<DensityEstimate> {
    if paths.is_empty() {
        return Err(Error::invalid("density estimate needs at least one path"));
    }
    let mut acc = DensityAccumulator::with_defaults();
    for p in paths {
        acc.push_path(p)?;
    }
    acc.finish()
}

/// `‖f‖₀² = Σ_bins f(z)² p̂(z) · width`.
pub fn zero_norm_sq(f: impl Fn(f64) -> f64, p_hat: &DensityEstimate) -> f64 {
    let w = p_hat.bin_width();
    p_hat.bin_centers.iter().zip(&p_hat.values).map(|(&z, &p)| f(z).powi(2) * p * w).sum()
}

/// Tail quantiles of centred, `√λ/‖g‖_{L¹}`-scaled samples of `𝒢_λ(g)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailSummary {
    pub sample_count: usize,
    pub center: f64,
    pub levels: Vec<f64>,
    /// Empirical quantiles of `|scaled sample|` at `levels`.
    pub quantiles: Vec<f64>,
    /// Smallest `C` with `2 exp(-q_ℓ² / (2C)) ≥ 1 - ℓ` at every level.
    pub fitted_c: f64,
    /// `|N(0, C)|` quantiles at `levels` for the fitted `C`.
    pub reference_quantiles: Vec<f64>,
}

impl TailSummary {
    /// Envelope radius `√(2 C ln(2/(1-ℓ)))` at which the sub-Gaussian bound
    /// equals `1 - ℓ`.
    pub fn envelope(c: f64, level: f64) -> f64 {
        (2.0 * c * (2.0 / (1.0 - level)).ln()).sqrt()
    }
}

/// Smallest sub-Gaussian constant whose envelope dominates the given
/// quantiles of `|Y|`.
pub fn fit_subgaussian_constant(levels: &[f64], quantiles: &[f64]) -> f64 {
    levels
        .iter()
        .zip(quantiles)
        .map(|(l, q)| q * q / (2.0 * (2.0 / (1.0 - l)).ln()))
        .fold(0.0, f64::max)
}

pub fn concentration_summary(samples: &[f64], l1_norm_g: f64, lambda: f64) -> Result<TailSummary> {
    if samples.len() < 100 {
        return Err(Error::invalid(format!("tail summary needs >= 100 samples, got {}", samples.len())));
    }
    if !(l1_norm_g > 0.0 && lambda > 0.0) {
        return Err(Error::invalid("tail summary needs positive ||g||_L1 and lambda"));
    }
    let center = mean(samples);
    let scale = lambda.sqrt() / l1_norm_g;
    let mut scaled: Vec<f64> = samples.iter().map(|s| ((s - center) * scale).abs()).collect();
    scaled.sort_by(f64::total_cmp);
    let levels = TAIL_LEVELS.to_vec();
    let quantiles: Vec<f64> = levels.iter().map(|&l| quantile_sorted(&scaled, l)).collect();
    let fitted_c = fit_subgaussian_constant(&levels, &quantiles);
    let normal = Normal::standard();
    let reference_quantiles =
        levels.iter().map(|&l| fitted_c.sqrt() * normal.inverse_cdf((1.0 + l) / 2.0)).collect();
    Ok(TailSummary { sample_count: samples.len(), center, levels, quantiles, fitted_c, reference_quantiles })
}

/// Monte Carlo estimate of `∫₀ᵀ E g(Z_t)` with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenteringEstimate {
    pub value: f64,
    pub std_error: f64,
    pub replicates: u32,
}

/// Centring constant of the ergodic theorem from limit-proxy simulations
/// started at the constant `chi`: each replicate averages `g` over the
/// central half of the proxy domain and integrates in time.
pub fn ergodic_centering(
    model: &ReactionModel,
    g: impl Fn(f64) -> f64 + Sync,
    chi: f64,
    proxy: &ProxyConfig,
    replicates: u32,
    seed: u128,
) -> Result<CenteringEstimate> {
    let gs: [&(dyn Fn(f64) -> f64 + Sync); 1] = [&g];
    Ok(ergodic_centering_many(model, &gs, chi, proxy, replicates, seed)?[0])
}

/// [`ergodic_centering`] for several test functions on shared proxy paths.
pub fn ergodic_centering_many(
    model: &ReactionModel,
    gs: &[&(dyn Fn(f64) -> f64 + Sync)],
    chi: f64,
    proxy: &ProxyConfig,
    replicates: u32,
    seed: u128,
) -> Result<Vec<CenteringEstimate>> {
    let cfg = proxy.sim_config(model.clone(), chi, seed)?;
    let central = cfg.grid.central_half();
    let dt = cfg.horizon / cfg.n_steps()? as f64;
    let per_rep = replicate_with(&cfg, replicates, |c| {
        let mut sums = vec![0.0; gs.len()];
        let cells = central.len() as f64;
        simulate_streaming(c, &mut |_: usize, prev: &[f64], _: &[f64], _: &[f64]| {
            let xs = &prev[central.clone()];
            for (s, g) in sums.iter_mut().zip(gs) {
                *s += xs.iter().map(|&x| g(x)).sum::<f64>() / cells * dt;
            }
            Ok(())
        })?;
        Ok(sums)
    })?;
    Ok((0..gs.len())
        .map(|k| {
            let v: Vec<f64> = per_rep.iter().map(|r| r[k]).collect();
            CenteringEstimate { value: mean(&v), std_error: (variance(&v) / v.len() as f64).sqrt(), replicates }
        })
        .collect())
}
