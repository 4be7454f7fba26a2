//! Ergodic averages, occupation densities and centring on simulated paths.

use spde_bayes::diagnostics::{
    ergodic_centering, zero_norm_sq, DensityAccumulator, DensityEstimate, SpatialAverager,
};
use spde_bayes::reaction::{allen_cahn_truncated, ReactionModel};
use spde_bayes::sim::{replicate_with, simulate_streaming, ProxyConfig, SimConfig};
use spde_bayes::stats::{mean, variance};

fn bump(x: f64) -> f64 {
    ReactionModel::Bump { center: 0.0, radius: 1.0, height: 1.0 }.eval(x)
}

fn averages(cfg: &SimConfig, reps: u32, g: impl Fn(f64) -> f64 + Copy + Sync) -> Vec<f64> {
    replicate_with(cfg, reps, |c| {
        let mut avg = SpatialAverager::new(g, c.grid.lambda(), c.grid.dy(), c.dt);
        simulate_streaming(c, &mut avg)?;
        Ok(avg.value())
    })
    .unwrap()
}

fn densities(cfg: &SimConfig, reps: u32) -> Vec<DensityAccumulator> {
    replicate_with(cfg, reps, |c| {
        let mut acc = DensityAccumulator::with_defaults();
        acc.begin_replicate(c.grid.lambda(), c.grid.dy(), c.dt)?;
        simulate_streaming(c, &mut acc)?;
        Ok(acc)
    })
    .unwrap()
}

fn pooled(accs: &[DensityAccumulator]) -> DensityEstimate {
    let mut pooled = DensityAccumulator::with_defaults();
    for a in accs {
        pooled.merge(a).unwrap();
    }
    pooled.finish().unwrap()
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    (mean(xs), (variance(xs) / xs.len() as f64).sqrt())
}

fn ac(lambda: f64, seed: u128) -> SimConfig {
    SimConfig::new(lambda, allen_cahn_truncated(), seed).unwrap()
}

#[test]
fn variance_of_spatial_average_halves_when_lambda_doubles() {
    let v16 = variance(&averages(&ac(16.0, 31), 400, bump));
    let v32 = variance(&averages(&ac(32.0, 32), 400, bump));
    let ratio = v16 / v32;
    assert!((1.4..=2.8).contains(&ratio), "Var ratio {ratio}");
}

#[test]
fn zero_norm_agrees_with_spatial_average() {
    let accs = densities(&ac(64.0, 40), 16);
    let p_hat = pooled(&accs);
    let fs: [fn(f64) -> f64; 3] = [bump, |x| x / 3.0, |x| (x - 1.0).max(0.0)];
    for f in fs {
        let per_rep: Vec<f64> = accs.iter().map(|a| zero_norm_sq(f, &a.finish().unwrap())).collect();
        // same paths: only the binning of X separates the two, on the histogram range
        let in_range = move |x: f64| if (-4.0..4.0).contains(&x) { f(x).powi(2) } else { 0.0 };
        let same = mean(&averages(&ac(64.0, 40), 16, in_range));
        let pooled_norm = zero_norm_sq(f, &p_hat);
        assert!((pooled_norm - mean(&per_rep)).abs() < 1e-12 * pooled_norm);
        assert!((pooled_norm / same - 1.0).abs() < 1e-3, "{pooled_norm} vs {same}");
        // fresh paths: agreement within the joint Monte Carlo error
        let (fresh, se_fresh) = mean_se(&averages(&ac(64.0, 41), 16, move |x| f(x).powi(2)));
        let (_, se_density) = mean_se(&per_rep);
        let joint = se_fresh.hypot(se_density);
        assert!((pooled_norm - fresh).abs() <= 3.0 * joint, "{pooled_norm} vs {fresh} (joint se {joint})");
    }
}

/// Sums adjacent histogram bins into blocks of `k`.
fn coarsen(p: &DensityEstimate, k: usize) -> (Vec<f64>, Vec<f64>) {
    let centers = p.bin_centers.chunks(k).map(|c| mean(c)).collect();
    let values = p.values.chunks(k).map(|v| mean(v)).collect();
    (centers, values)
}

#[test]
fn zero_model_density_is_symmetric_and_unimodal() {
    let cfg = SimConfig::new(64.0, ReactionModel::Zero, 50).unwrap();
    let accs = densities(&cfg, 16);
    // blocks of width 1/4; block edges are symmetric about 0
    let blocks: Vec<(Vec<f64>, Vec<f64>)> = accs.iter().map(|a| coarsen(&a.finish().unwrap(), 32)).collect();
    let (z, v) = coarsen(&pooled(&accs), 32);
    for k in (0..z.len()).filter(|&k| z[k] < 0.0 && z[k] > -1.5) {
        let mirror = z.len() - 1 - k;
        let diffs: Vec<f64> = blocks.iter().map(|(_, b)| b[k] - b[mirror]).collect();
        let (d, se) = mean_se(&diffs);
        // six blocks tested, so four standard errors
        assert!(d.abs() <= 4.0 * se, "z={}: {d} ± {se}", z[k]);
    }
    let peak = v.iter().enumerate().fold(0, |b, (k, x)| if *x > v[b] { k } else { b });
    assert!(z[peak].abs() < 0.25, "peak at {}", z[peak]);
    assert!(v[..=peak].windows(2).all(|w| w[1] >= w[0]));
    assert!(v[peak..].windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn zero_norm_is_sandwiched_by_density_bounds() {
    let p = pooled(&densities(&ac(32.0, 60), 8));
    let (lo, hi) = (p.min_on(-3.5, 3.5), p.max_on(-3.5, 3.5));
    assert!(lo > 0.0);
    let w = p.bin_width();
    for (c, r) in [(0.0, 3.4), (-2.0, 1.0), (2.9, 0.5), (1.0, 0.1)] {
        let f = ReactionModel::Bump { center: c, radius: r, height: 1.0 };
        let l2: f64 = p.bin_centers.iter().map(|&z| f.eval(z).powi(2) * w).sum();
        let zero = zero_norm_sq(|x| f.eval(x), &p);
        assert!(lo * l2 <= zero && zero <= hi * l2, "{lo} {l2} {zero} {hi}");
    }
}

#[test]
fn odd_test_function_has_zero_centering() {
    let proxy = ProxyConfig::default();
    let c = ergodic_centering(&allen_cahn_truncated(), |x| x, 0.0, &proxy, 100, 70).unwrap();
    assert!(c.value.abs() <= 3.0 * c.std_error, "{} ± {}", c.value, c.std_error);
}

#[test]
fn centering_matches_large_domain_average() {
    let proxy = ProxyConfig::default();
    let c = ergodic_centering(&allen_cahn_truncated(), bump, 0.0, &proxy, 200, 80).unwrap();
    let g = averages(&ac(128.0, 81), 200, bump);
    let se = (variance(&g) / g.len() as f64).sqrt();
    let joint = (se * se + c.std_error * c.std_error).sqrt();
    assert!((mean(&g) - c.value).abs() <= 3.0 * joint, "{} vs {} (joint se {joint})", mean(&g), c.value);
}
