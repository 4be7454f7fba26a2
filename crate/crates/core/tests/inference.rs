//! Likelihood and posterior properties on simulated paths.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use spde_bayes::diagnostics::hellinger_sq;
use spde_bayes::inference::{accumulate_stats, conjugacy_residual, girsanov_decomposition, lan_statistics, posterior};
use spde_bayes::reaction::{allen_cahn_truncated, from_coefficients, ReactionModel};
use spde_bayes::rng::{stream, CounterRng};
use spde_bayes::sim::{replicate, simulate, SimConfig};
use spde_bayes::stats::{mean, variance};
use spde_bayes::wavelet::{build_haar, PriorSpec, DEFAULT_XI};
use std::sync::Arc;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gram_is_psd_and_posterior_is_the_map(seed in any::<u64>(), m in 0u32..6, lambda in 1.0f64..6.0, beta0 in 0.0f64..2.0) {
        let mut cfg = SimConfig::new(lambda, allen_cahn_truncated(), seed as u128).unwrap();
        cfg.horizon = 0.05;
        cfg.dt = 1e-3;
        let path = simulate(&cfg).unwrap();
        let basis = build_haar(DEFAULT_XI, m).unwrap();
        let stats = accumulate_stats(&path, &basis).unwrap();
        let g = &stats.gram;
        prop_assert!((g - g.transpose()).amax() <= 1e-12 * (1.0 + g.amax()));
        let min_eig = g.clone().symmetric_eigen().eigenvalues.min();
        prop_assert!(min_eig >= -1e-10 * g.amax().max(1e-300), "min eigenvalue {}", min_eig);
        let prior = PriorSpec::new(&basis, beta0).unwrap();
        let post = posterior(&stats, &prior, basis.descriptor()).unwrap();
        prop_assert!(conjugacy_residual(&stats, &post).unwrap() <= 1e-8);
    }
}

#[test]
fn martingale_term_has_mean_zero_under_the_truth() {
    let lambda = 16.0;
    let basis = build_haar(DEFAULT_XI, 3).unwrap();
    let coeffs: Vec<f64> = (0..basis.dim()).map(|i| ((i * 5 + 1) as f64).cos() * 3.0).collect();
    let f0 = allen_cahn_truncated();
    let cfg = SimConfig::new(lambda, f0.clone(), 404).unwrap();
    let terms = replicate(&cfg, 200, |_, p| {
        let s = accumulate_stats(p, &basis)?;
        let g = girsanov_decomposition(p, &basis, &s, &coeffs, &f0)?;
        Ok(lambda.sqrt() * g.martingale_term)
    })
    .unwrap();
    let se = (variance(&terms) / terms.len() as f64).sqrt();
    assert!(mean(&terms).abs() <= 3.0 * se, "mean {} se {se}", mean(&terms));
}

#[test]
fn lan_score_variance_matches_information() {
    let h = ReactionModel::Bump { center: 2.5, radius: 1.5, height: 1.0 };
    let f0 = allen_cahn_truncated();
    let mut cfg = SimConfig::new(100.0, f0.clone(), 512).unwrap();
    cfg.horizon = 0.25;
    let stats = replicate(&cfg, 200, |_, p| lan_statistics(p, &h, Some(&f0))).unwrap();
    let w: Vec<f64> = stats.iter().map(|s| s.w_lambda).collect();
    let info = mean(&stats.iter().map(|s| s.i_lambda).collect::<Vec<_>>());
    let ratio = variance(&w) / info;
    assert!((ratio - 1.0).abs() < 0.25, "Var W / I = {ratio}");
}

/// Pilot at λ = 50 (50 replicates × 20 pairs, seed 6) gave ratios in
/// [0.101, 0.185]; the bracket halves and doubles that range.
const HELLINGER_L2_BRACKET: (f64, f64) = (0.05, 0.37);

#[test]
fn hellinger_is_equivalent_to_l2_on_the_sieve() {
    let basis = Arc::new(build_haar(DEFAULT_XI, 4).unwrap());
    let d = basis.dim();
    let rng = CounterRng::new(8080);
    let pairs: Vec<DVector<f64>> = (0..20)
        .map(|k| DVector::from_fn(d, |i, _| rng.normal(stream::SYNTHETIC, k, 0, i as u32)))
        .collect();
    let lambda = 50.0;
    let cfg = SimConfig::new(lambda, allen_cahn_truncated(), 6).unwrap();
    let grams: Vec<DMatrix<f64>> = replicate(&cfg, 50, |r, p| {
        let s = accumulate_stats(p, &basis)?;
        if r == 0 {
            // the quadratic form in G agrees with the direct Riemann sum
            let diff = from_coefficients(basis.clone(), pairs[0].iter().cloned().collect())?;
            let direct = hellinger_sq(p, &diff, &ReactionModel::Zero);
            let form = pairs[0].dot(&(&s.gram * &pairs[0])) / lambda;
            assert!((direct - form).abs() <= 1e-10 * (1.0 + direct), "{direct} vs {form}");
        }
        Ok(s.gram)
    })
    .unwrap();
    // ‖f - g‖²_{L²(Ξ)} = |c|² by orthonormality
    let ratios: Vec<f64> =
        grams.iter().flat_map(|g| pairs.iter().map(move |c| c.dot(&(g * c)) / lambda / c.norm_squared())).collect();
    let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().cloned().fold(0.0, f64::max);
    assert!(lo > HELLINGER_L2_BRACKET.0 && hi < HELLINGER_L2_BRACKET.1, "ratios in [{lo}, {hi}]");
}
