//! Study runners. Each returns a [`StudyReport`] whose checks compare the
//! study's statistics against the brackets in [`thresholds`].

use crate::diagnostics::{
    concentration_summary, ergodic_centering, fit_subgaussian_constant, occupation_time, DensityAccumulator,
    DensityEstimate, TailSummary, OCCUPATION_HALF_WIDTH, OCCUPATION_SCALE, TAIL_LEVELS,
};
use crate::error::{Error, Result};
use crate::grid::SpaceTimePath;
use crate::inference::{
    accumulate_stats, conjugacy_residual, credible_band, posterior, posterior_to_json, sample_posterior_keyed,
    StatsAccumulator, SufficientStats,
};
use crate::pathio::write_path;
use crate::reaction::{ReactionModel, DEFAULT_LIPSCHITZ_STEP};
use crate::sim::{replicate_with, simulate, simulate_streaming, with_threads, InitialCondition, SimConfig};
use crate::stats::{ks_distance_std_normal, mean, median, quantile_sorted, spearman, variance};
use crate::wavelet::{PriorSpec, WaveletBasis};

use super::config::{StudyConfig, StudyKind};
use super::report::{columns_csv, Check, SlopeFit, StudyReport};

/// Acceptance brackets, frozen after pilot runs.
pub mod thresholds {
    /// Log-log slope of the median `L²(Ξ)` error in the contraction study.
    pub const CONTRACTION_SLOPE: (f64, f64) = (-0.55, -0.15);
    /// Log-log slope of `Var 𝒢_λ(g)`.
    pub const ERGODIC_VARIANCE_SLOPE: (f64, f64) = (-1.4, -0.6);
    /// Upper bound on the log-log slope of `|E 𝒢_λ(g) - centring|`.
    pub const ERGODIC_BIAS_SLOPE_MAX: f64 = -0.5;
    /// `max λ Var / min λ Var` across the ladder.
    pub const ERGODIC_SCALED_VARIANCE_RATIO_MAX: f64 = 2.0;
    /// Quantile level at which tails are compared with the envelope.
    pub const TAIL_LEVEL: f64 = 0.99;
    /// Exceedance counts may sit this many binomial sds above `n (1 - level)`.
    pub const TAIL_BINOMIAL_SIGMAS: f64 = 3.0;
    /// Allowed relative drift of the fitted sub-Gaussian constant along the ladder.
    pub const CONCENTRATION_C_DRIFT: f64 = 0.5;
    pub const BVM_KS_MAX: f64 = 0.12;
    pub const BVM_VARIANCE_RATIO: (f64, f64) = (0.65, 1.35);
    pub const FIGURE_COVERAGE_MIN: f64 = 0.8;
    pub const FIGURE_SPEARMAN_MAX: f64 = -0.5;
    pub const FIGURE_MASS_TOL: f64 = 0.01;
    /// Relative MAP residual allowed on every posterior fit.
    pub const CONJUGACY_RESIDUAL_MAX: f64 = 1e-8;
    /// Posterior draws per replicate pooled in the BvM study.
    pub const BVM_DRAWS_PER_REPLICATE: usize = 20;
}

use thresholds::*;

/// Runs the study named by `cfg.kind` on `threads` workers.
pub fn run_study(cfg: &StudyConfig, threads: Option<usize>) -> Result<StudyReport> {
    cfg.validate()?;
    with_threads(threads, || match cfg.kind {
        StudyKind::Simulate => run_simulate(cfg),
        StudyKind::Posterior => run_posterior(cfg),
        StudyKind::Contraction => run_contraction_study(cfg),
        StudyKind::Ergodicity => run_ergodicity_study(cfg),
        StudyKind::Bvm => run_bvm_study(cfg),
        StudyKind::Concentration => run_concentration_study(cfg),
        StudyKind::Figure => reproduce_figure(cfg),
    })?
}

fn lambda_tag(lambda: f64) -> String {
    format!("lambda_{lambda}")
}

fn put_stat(report: &mut StudyReport, name: impl Into<String>, value: f64) {
    if value.is_finite() {
        report.statistics.insert(name.into(), value);
    }
}

fn step_dt(c: &SimConfig) -> Result<f64> {
    Ok(c.horizon / c.n_steps()? as f64)
}

/// Simulates one replicate and accumulates its sufficient statistics, and
/// optionally its occupation histogram, without storing the path.
fn stream_stats(c: &SimConfig, basis: &WaveletBasis, mut density: Option<&mut DensityAccumulator>) -> Result<SufficientStats> {
    let lambda = c.grid.lambda();
    let dt = step_dt(c)?;
    let mut acc = StatsAccumulator::new(basis, lambda, c.grid.dy(), dt, 1.0);
    if let Some(d) = density.as_deref_mut() {
        d.begin_replicate(lambda, c.grid.dy(), dt)?;
    }
    simulate_streaming(c, &mut |m: usize, prev: &[f64], next: &[f64], _: &[f64]| {
        if let Some(d) = density.as_deref_mut() {
            d.push_frame(prev);
        }
        acc.push(m, prev, next)
    })?;
    acc.finish()
}

/// Distance from the walls (in the original coordinate) beyond which cells
/// count as interior for the paired boundary-bias estimate.
pub const BOUNDARY_STRIP: f64 = 2.0;

/// `𝒢_λ(g)` for every replicate at one λ, with the same average restricted to
/// cells at least `min(BOUNDARY_STRIP, λ/4)` from the walls.
fn spatial_average_samples(cfg: &StudyConfig, lambda: f64, g: &ReactionModel) -> Result<Vec<(f64, f64)>> {
    let sim = cfg.sim_config(lambda)?;
    let n = sim.grid.n();
    let k = ((BOUNDARY_STRIP.min(lambda / 4.0) / sim.grid.dy()).round() as usize).min((n - 1) / 2);
    replicate_with(&sim, cfg.replicates, |c| {
        let dt = step_dt(c)?;
        let (mut full, mut inner) = (0.0, 0.0);
        let mut gv = vec![0.0; n];
        simulate_streaming(c, &mut |_: usize, prev: &[f64], _: &[f64], _: &[f64]| {
            for (o, &x) in gv.iter_mut().zip(prev) {
                *o = g.eval(x);
            }
            full += gv.iter().sum::<f64>() / n as f64 * dt;
            inner += gv[k..n - k].iter().sum::<f64>() / (n - 2 * k) as f64 * dt;
            Ok(())
        })?;
        Ok((full, inner))
    })
}

fn constant_initial_value(cfg: &StudyConfig) -> Result<f64> {
    match &cfg.initial {
        InitialCondition::Zero => Ok(0.0),
        InitialCondition::Constant { value } => Ok(*value),
        _ => Err(Error::Config("initial: the centring constant is only implemented for constant initial conditions".into())),
    }
}

/// Heat-map rows `(t, y, X)` keeping every `stride`-th frame.
pub fn heatmap_csv(path: &SpaceTimePath, stride: usize) -> Result<String> {
    let stride = stride.max(1);
    let nodes = path.grid().nodes();
    let (mut t, mut y, mut x) = (Vec::new(), Vec::new(), Vec::new());
    for m in (0..=path.n_steps()).step_by(stride) {
        let tm = m as f64 * path.dt();
        for (yi, xi) in nodes.iter().zip(path.frame(m)) {
            t.push(tm);
            y.push(*yi);
            x.push(*xi);
        }
    }
    columns_csv(&["t", "y", "X"], &[&t, &y, &x])
}

fn density_csv(d: &DensityEstimate) -> String {
    d.to_csv()
}

pub fn run_simulate(cfg: &StudyConfig) -> Result<StudyReport> {
    let mut report = StudyReport::new(cfg, &["terminal_mean", "terminal_sd", "path_min", "path_max"])?;
    for &lambda in &cfg.lambdas {
        let sim = cfg.sim_config(lambda)?;
        let paths = replicate_with(&sim, cfg.replicates, |c| {
            let p = simulate(c)?;
            let term = p.terminal();
            let (lo, hi) = p.range();
            let row = vec![mean(term), variance(term).sqrt(), lo, hi];
            Ok((row, if c.replicate_id == 0 { Some(p) } else { None }))
        })?;
        for (r, (row, p)) in paths.into_iter().enumerate() {
            report.push_row(lambda, r as u32, row)?;
            if let Some(p) = p {
                let mut buf = Vec::new();
                write_path(&p, &mut buf)?;
                report.attach(&format!("path_{}.spde1", lambda_tag(lambda)), buf);
                if lambda == cfg.lambdas[0] {
                    report.attach("heatmap.csv", heatmap_csv(&p, cfg.figure.time_stride)?);
                }
            }
        }
    }
    report.aggregates = report.compute_aggregates();
    Ok(report)
}

fn band_grid(cfg: &StudyConfig) -> Vec<f64> {
    let (a, b) = cfg.basis.xi;
    let n = cfg.figure.x_points;
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

pub fn run_posterior(cfg: &StudyConfig) -> Result<StudyReport> {
    let path = match &cfg.input_path {
        Some(file) => crate::pathio::load_path(std::path::Path::new(file))?,
        None => simulate(&cfg.sim_config(cfg.lambdas[0])?)?,
    };
    let lambda = path.lambda();
    let basis = cfg.basis.build(lambda)?;
    let prior = PriorSpec::new(&basis, cfg.basis.beta0)?;
    let stats = accumulate_stats(&path, &basis)?;
    let post = posterior(&stats, &prior, basis.descriptor())?;
    let f0 = cfg.model()?;
    let err = basis.l2_norm_fn(|x| basis.reconstruct_at(post.mean.as_slice(), x) - f0.eval(x));
    let resid = conjugacy_residual(&stats, &post)?;
    let mut report = StudyReport::new(cfg, &["dim", "max_level", "l2_error", "conjugacy_residual"])?;
    report.push_row(lambda, 0, vec![basis.dim() as f64, basis.max_level() as f64, err, resid])?;
    report.aggregates = report.compute_aggregates();
    report.checks.push(Check::at_most("conjugacy_residual", resid, CONJUGACY_RESIDUAL_MAX));
    let band =
        credible_band(&post, &basis, &band_grid(cfg), cfg.figure.band_level, cfg.figure.posterior_draws, cfg.seed_for(lambda))?;
    report.attach("posterior.json", posterior_to_json(&post)?);
    report.attach("band.csv", band.to_csv());
    Ok(report)
}

/// Posterior contraction around `f₀` along the λ ladder.
///
/// Per replicate: `‖f̂ - f₀‖_{L²(Ξ)}` of the posterior mean, and the
/// posterior root-mean-square distance `(‖f̂ - f₀‖² + tr Q)^{1/2}`
/// (exact for orthonormal bases).
pub fn run_contraction_study(cfg: &StudyConfig) -> Result<StudyReport> {
    let f0 = cfg.model()?;
    let mut report =
        StudyReport::new(cfg, &["max_level", "l2_error", "posterior_radius", "conjugacy_residual"])?;
    let mut medians = Vec::new();
    for &lambda in &cfg.lambdas {
        let basis = cfg.basis.build(lambda)?;
        let prior = PriorSpec::new(&basis, cfg.basis.beta0)?;
        let rows = replicate_with(&cfg.sim_config(lambda)?, cfg.replicates, |c| {
            let stats = stream_stats(c, &basis, None)?;
            let post = posterior(&stats, &prior, basis.descriptor())?;
            let err = basis.l2_norm_fn(|x| basis.reconstruct_at(post.mean.as_slice(), x) - f0.eval(x));
            let radius = (err * err + post.cov_factor.norm_squared()).sqrt();
            Ok(vec![basis.max_level() as f64, err, radius, conjugacy_residual(&stats, &post)?])
        })?;
        for (r, row) in rows.into_iter().enumerate() {
            report.push_row(lambda, r as u32, row)?;
        }
        medians.push(median(&report.column_at(lambda, "l2_error")?));
    }
    report.aggregates = report.compute_aggregates();
    for (l, m) in cfg.lambdas.iter().zip(&medians) {
        put_stat(&mut report, format!("median_l2_error_{}", lambda_tag(*l)), *m);
    }
    let max_resid = report.rows.iter().map(|r| r.values[3]).fold(0.0, f64::max);
    report.checks.push(Check::at_most("max_conjugacy_residual", max_resid, CONJUGACY_RESIDUAL_MAX));
    if cfg.lambdas.len() >= 2 {
        report.checks.push(Check::flag("median_error_strictly_decreasing", medians.windows(2).all(|w| w[1] < w[0])));
        let fit = SlopeFit::fit("median_l2_error", &cfg.lambdas, &medians, -1.0 / 3.0)?;
        report.checks.push(Check::within("median_error_slope", fit.slope, CONTRACTION_SLOPE.0, CONTRACTION_SLOPE.1));
        report.fits.push(fit);
    }
    Ok(report)
}

/// Binomial upper bound on the number of exceedances of the level-`TAIL_LEVEL`
/// envelope among `n` samples.
fn exceedance_bound(n: usize) -> f64 {
    let p = 1.0 - TAIL_LEVEL;
    n as f64 * p + TAIL_BINOMIAL_SIGMAS * (n as f64 * p * (1.0 - p)).sqrt()
}

/// Spatial ergodicity of `𝒢_λ(g)` along the λ ladder: bias against the
/// limit-proxy centring, variance scaling and sub-Gaussian tails.
pub fn run_ergodicity_study(cfg: &StudyConfig) -> Result<StudyReport> {
    let f0 = cfg.model()?;
    let g = cfg.test_function()?;
    let chi = constant_initial_value(cfg)?;
    let l1 = g.l1_norm(DEFAULT_LIPSCHITZ_STEP);
    let proxy_seed = cfg.seed_for(cfg.proxy.lambda) | (1u128 << 63);
    let centre = ergodic_centering(&f0, |x| g.eval(x), chi, &cfg.proxy_config(), cfg.proxy.replicates, proxy_seed)?;

    let mut report = StudyReport::new(cfg, &["spatial_average", "interior_average"])?;
    put_stat(&mut report, "centering", centre.value);
    put_stat(&mut report, "centering_se", centre.std_error);
    put_stat(&mut report, "g_l1_norm", l1);
    put_stat(&mut report, "g_derivative_sup", g.derivative_sup(DEFAULT_LIPSCHITZ_STEP));

    let mut samples = Vec::new();
    let mut boundary = Vec::new();
    for &lambda in &cfg.lambdas {
        let pairs = spatial_average_samples(cfg, lambda, &g)?;
        for (r, (x, y)) in pairs.iter().enumerate() {
            report.push_row(lambda, r as u32, vec![*x, *y])?;
        }
        samples.push(pairs.iter().map(|p| p.0).collect::<Vec<f64>>());
        boundary.push(pairs.iter().map(|p| p.0 - p.1).collect::<Vec<f64>>());
    }
    report.aggregates = report.compute_aggregates();

    let n = cfg.replicates as f64;
    let se = |v: f64| (v / n).sqrt();
    let mut biases = Vec::new();
    let mut paired = Vec::new();
    let mut vars = Vec::new();
    for ((&lambda, xs), ds) in cfg.lambdas.iter().zip(&samples).zip(&boundary) {
        let v = if xs.len() > 1 { variance(xs) } else { 0.0 };
        let b = mean(xs) - centre.value;
        let tag = lambda_tag(lambda);
        put_stat(&mut report, format!("bias_{tag}"), b);
        put_stat(&mut report, format!("bias_se_{tag}"), (v / n + centre.std_error.powi(2)).sqrt());
        put_stat(&mut report, format!("variance_{tag}"), v);
        put_stat(&mut report, format!("scaled_variance_{tag}"), lambda * v);
        // full minus interior average on the same path: the boundary-layer
        // part of the bias without the replicate-to-replicate noise
        let dv = if ds.len() > 1 { variance(ds) } else { 0.0 };
        put_stat(&mut report, format!("boundary_bias_{tag}"), mean(ds));
        put_stat(&mut report, format!("boundary_bias_se_{tag}"), se(dv));
        biases.push(b.abs());
        paired.push(mean(ds).abs());
        vars.push(v);
    }

    let degenerate = vars.iter().all(|v| *v <= 1e-24) && biases.iter().all(|b| *b <= 1e-10);
    if degenerate {
        // constant test function: the statistic is deterministic and centred
        report.checks.push(Check::flag("degenerate_statistic_vanishes", true));
        return Ok(report);
    }
    if cfg.lambdas.len() >= 2 {
        let vfit = SlopeFit::fit("variance", &cfg.lambdas, &vars, -1.0)?;
        report.checks.push(Check::within("variance_slope", vfit.slope, ERGODIC_VARIANCE_SLOPE.0, ERGODIC_VARIANCE_SLOPE.1));
        report.fits.push(vfit);
        let bfit = SlopeFit::fit("abs_bias", &cfg.lambdas, &biases, -1.0)?;
        report.checks.push(Check::at_most("bias_slope", bfit.slope, ERGODIC_BIAS_SLOPE_MAX));
        report.fits.push(bfit);
        if paired.iter().all(|p| *p > 0.0) {
            report.fits.push(SlopeFit::fit("abs_boundary_bias", &cfg.lambdas, &paired, -1.0)?);
        }
        let scaled: Vec<f64> = cfg.lambdas.iter().zip(&vars).map(|(l, v)| l * v).collect();
        let ratio = scaled.iter().cloned().fold(f64::MIN, f64::max) / scaled.iter().cloned().fold(f64::MAX, f64::min);
        report.checks.push(Check::at_most("scaled_variance_ratio", ratio, ERGODIC_SCALED_VARIANCE_RATIO_MAX));
    }

    // sub-Gaussian constant fitted on the pooled scaled samples, then
    // exceedances of its envelope counted per λ
    let scaled: Vec<Vec<f64>> = cfg
        .lambdas
        .iter()
        .zip(&samples)
        .map(|(&l, xs)| {
            let m = mean(xs);
            xs.iter().map(|x| ((x - m) * l.sqrt() / l1).abs()).collect()
        })
        .collect();
    let mut pooled: Vec<f64> = scaled.iter().flatten().copied().collect();
    pooled.sort_by(f64::total_cmp);
    let quantiles: Vec<f64> = TAIL_LEVELS.iter().map(|&l| quantile_sorted(&pooled, l)).collect();
    let c = fit_subgaussian_constant(&TAIL_LEVELS, &quantiles);
    let radius = TailSummary::envelope(c, TAIL_LEVEL);
    put_stat(&mut report, "pooled_subgaussian_c", c);
    put_stat(&mut report, "envelope_radius", radius);
    for (&lambda, s) in cfg.lambdas.iter().zip(&scaled) {
        let count = s.iter().filter(|v| **v > radius).count();
        report.checks.push(Check::at_most(
            &format!("tail_exceedances_{}", lambda_tag(lambda)),
            count as f64,
            exceedance_bound(s.len()),
        ));
    }
    Ok(report)
}

/// Tail behaviour of `𝒢_λ(g)`: a sub-Gaussian constant fitted at each λ,
/// the first λ's constant used as the envelope everywhere.
pub fn run_concentration_study(cfg: &StudyConfig) -> Result<StudyReport> {
    let g = cfg.test_function()?;
    let l1 = g.l1_norm(DEFAULT_LIPSCHITZ_STEP);
    let mut report = StudyReport::new(cfg, &["spatial_average"])?;
    let mut summaries = Vec::new();
    for &lambda in &cfg.lambdas {
        let xs: Vec<f64> = spatial_average_samples(cfg, lambda, &g)?.into_iter().map(|p| p.0).collect();
        for (r, x) in xs.iter().enumerate() {
            report.push_row(lambda, r as u32, vec![*x])?;
        }
        summaries.push(concentration_summary(&xs, l1, lambda)?);
    }
    report.aggregates = report.compute_aggregates();

    let k99 = TAIL_LEVELS.iter().position(|&l| l == TAIL_LEVEL).expect("tail level is tabulated");
    let c_ref = summaries[0].fitted_c;
    let (mut lam, mut lev, mut q, mut refq) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (&lambda, s) in cfg.lambdas.iter().zip(&summaries) {
        let tag = lambda_tag(lambda);
        put_stat(&mut report, format!("fitted_c_{tag}"), s.fitted_c);
        put_stat(&mut report, format!("q99_{tag}"), s.quantiles[k99]);
        report.checks.push(Check::at_most(
            &format!("q99_within_envelope_{tag}"),
            s.quantiles[k99],
            TailSummary::envelope(c_ref, TAIL_LEVEL),
        ));
        for i in 0..s.levels.len() {
            lam.push(lambda);
            lev.push(s.levels[i]);
            q.push(s.quantiles[i]);
            refq.push(s.reference_quantiles[i]);
        }
    }
    if summaries.len() >= 2 {
        let c_last = summaries[summaries.len() - 1].fitted_c;
        if c_ref == 0.0 {
            report.checks.push(Check::flag("fitted_c_stable", c_last == 0.0));
        } else {
            report.checks.push(Check::within(
                "fitted_c_stable",
                c_last / c_ref,
                1.0 - CONCENTRATION_C_DRIFT,
                1.0 + CONCENTRATION_C_DRIFT,
            ));
        }
    }
    report.attach("tails.csv", columns_csv(&["lambda", "level", "quantile", "reference_quantile"], &[&lam, &lev, &q, &refq])?);
    Ok(report)
}

/// Plug-in BvM variance `‖γ/p̂‖₀² = Σ γ²/p̂ · width` over bins with `p̂ > 0`,
/// and the `γ²` mass on empty bins.
pub fn bvm_plugin_variance(gamma: &ReactionModel, p_hat: &DensityEstimate) -> (f64, f64) {
    let w = p_hat.bin_width();
    let mut v = 0.0;
    let mut lost = 0.0;
    for (&z, &p) in p_hat.bin_centers.iter().zip(&p_hat.values) {
        let g2 = gamma.eval(z).powi(2);
        if p > 0.0 {
            v += g2 / p * w;
        } else {
            lost += g2 * w;
        }
    }
    (v, lost)
}

/// Bernstein–von Mises check for the linear functional `⟨f, γ⟩_{L²(Ξ)}`.
///
/// The statistic `√λ ⟨f̂ - f₀, γ⟩` is standardised by the plug-in variance
/// computed from the occupation density pooled over the study's replicates.
pub fn run_bvm_study(cfg: &StudyConfig) -> Result<StudyReport> {
    let f0 = cfg.model()?;
    let gamma = cfg.test_function()?;
    let mut report = StudyReport::new(cfg, &["statistic", "posterior_sd", "conjugacy_residual"])?;
    for &lambda in &cfg.lambdas {
        let tag = lambda_tag(lambda);
        let basis = cfg.basis.build(lambda)?;
        let prior = PriorSpec::new(&basis, cfg.basis.beta0)?;
        let gcoef = nalgebra::DVector::from_vec(basis.project(&gamma));
        let gnorm = basis.l2_norm_fn(|x| gamma.eval(x));
        if !(gnorm > 0.0) || gcoef.norm() <= 1e-8 * gnorm {
            return Err(Error::Config(format!(
                "test_function: gamma is orthogonal to the approximation space at lambda {lambda}, so the statistic is degenerate"
            )));
        }
        let f0_gamma = basis.inner_fn(|x| f0.eval(x), |x| gamma.eval(x));
        let seed = cfg.seed_for(lambda);
        let per_rep = replicate_with(&cfg.sim_config(lambda)?, cfg.replicates, |c| {
            let mut dens = DensityAccumulator::with_defaults();
            let stats = stream_stats(c, &basis, Some(&mut dens))?;
            let post = posterior(&stats, &prior, basis.descriptor())?;
            let stat = lambda.sqrt() * (post.mean.dot(&gcoef) - f0_gamma);
            let sd = lambda.sqrt() * (post.cov_factor.transpose() * &gcoef).norm();
            let draws = sample_posterior_keyed(&post, BVM_DRAWS_PER_REPLICATE, seed, c.replicate_id);
            let draw_stats: Vec<f64> = (0..draws.nrows())
                .map(|i| lambda.sqrt() * (draws.row(i).transpose() - &post.mean).dot(&gcoef))
                .collect();
            Ok((vec![stat, sd, conjugacy_residual(&stats, &post)?], dens, draw_stats))
        })?;
        let mut pooled = DensityAccumulator::with_defaults();
        let mut draw_pool = Vec::new();
        for (r, (row, dens, draws)) in per_rep.into_iter().enumerate() {
            report.push_row(lambda, r as u32, row)?;
            pooled.merge(&dens)?;
            draw_pool.extend(draws);
        }
        let p_hat = pooled.finish()?;
        let (v_hat, lost) = bvm_plugin_variance(&gamma, &p_hat);
        let stats = report.column_at(lambda, "statistic")?;
        let standardised: Vec<f64> = stats.iter().map(|s| s / v_hat.sqrt()).collect();
        let ks = ks_distance_std_normal(&standardised);
        let ratio = variance(&stats) / v_hat;
        let draws_std: Vec<f64> = draw_pool.iter().map(|s| s / v_hat.sqrt()).collect();
        let sds = report.column_at(lambda, "posterior_sd")?;
        let resid = report.column_at(lambda, "conjugacy_residual")?.into_iter().fold(0.0, f64::max);

        put_stat(&mut report, format!("plugin_variance_{tag}"), v_hat);
        put_stat(&mut report, format!("gamma_mass_on_empty_bins_{tag}"), lost);
        put_stat(&mut report, format!("empirical_variance_{tag}"), variance(&stats));
        put_stat(&mut report, format!("mean_statistic_{tag}"), mean(&stats));
        put_stat(&mut report, format!("posterior_variance_ratio_{tag}"), mean(&sds.iter().map(|s| s * s).collect::<Vec<_>>()) / v_hat);
        put_stat(&mut report, format!("posterior_draw_variance_ratio_{tag}"), variance(&draw_pool) / v_hat);
        put_stat(&mut report, format!("posterior_draw_ks_{tag}"), ks_distance_std_normal(&draws_std));
        put_stat(&mut report, format!("max_level_{tag}"), basis.max_level() as f64);
        report.checks.push(Check::at_most(&format!("ks_distance_{tag}"), ks, BVM_KS_MAX));
        report.checks.push(Check::within(&format!("variance_ratio_{tag}"), ratio, BVM_VARIANCE_RATIO.0, BVM_VARIANCE_RATIO.1));
        report.checks.push(Check::at_most(&format!("max_conjugacy_residual_{tag}"), resid, CONJUGACY_RESIDUAL_MAX));
        report.attach(&format!("density_{tag}.csv"), density_csv(&p_hat));
    }
    report.aggregates = report.compute_aggregates();
    Ok(report)
}

/// Single-path illustration at the first λ of the ladder: heat map, credible
/// band, and occupation time against posterior variance.
///
/// Files: `heatmap.csv` (`t,y,X`), `band.csv`
/// (`x,lower,median,upper,sd_analytic`) and `occupation.csv`
/// (`x,occupation,posterior_variance`, one row per occupation window inside
/// Ξ).
pub fn reproduce_figure(cfg: &StudyConfig) -> Result<StudyReport> {
    let lambda = cfg.lambdas[0];
    let path = simulate(&cfg.sim_config(lambda)?)?;
    let f0 = cfg.model()?;
    let basis = cfg.basis.build(lambda)?;
    let prior = PriorSpec::new(&basis, cfg.basis.beta0)?;
    let stats = accumulate_stats(&path, &basis)?;
    let post = posterior(&stats, &prior, basis.descriptor())?;
    let resid = conjugacy_residual(&stats, &post)?;

    let band =
        credible_band(&post, &basis, &band_grid(cfg), cfg.figure.band_level, cfg.figure.posterior_draws, cfg.seed_for(lambda))?;
    let (wa, wb) = cfg.figure.coverage_window;
    let window: Vec<usize> = (0..band.x.len()).filter(|&i| band.x[i] >= wa && band.x[i] <= wb).collect();
    let covered = window
        .iter()
        .filter(|&&i| {
            let f = f0.eval(band.x[i]);
            band.lower[i] <= f && f <= band.upper[i]
        })
        .count();
    let coverage = if window.is_empty() { f64::NAN } else { covered as f64 / window.len() as f64 };

    // windows of width 2h centred on (k + 1/2) 2h tile the line
    let hw = OCCUPATION_HALF_WIDTH;
    let step = 2.0 * hw;
    let (lo, hi) = path.range();
    let (xa, xb) = basis.xi();
    let k0 = (lo.min(xa) / step).floor() as i64 - 1;
    let k1 = (hi.max(xb) / step).ceil() as i64 + 1;
    let centres: Vec<f64> = (k0..=k1).map(|k| (k as f64 + 0.5) * step).collect();
    let occ = occupation_time(&path, &centres, hw, OCCUPATION_SCALE)?;
    let mass_ratio = occ.iter().sum::<f64>() / OCCUPATION_SCALE / (lambda * path.horizon());

    let inside: Vec<usize> = (0..centres.len()).filter(|&i| centres[i] > xa && centres[i] < xb).collect();
    let xs: Vec<f64> = inside.iter().map(|&i| centres[i]).collect();
    let occ_in: Vec<f64> = inside.iter().map(|&i| occ[i]).collect();
    let var_in: Vec<f64> = xs.iter().map(|&x| post.pointwise_sd(&basis, x).powi(2)).collect();
    let rho = spearman(&occ_in, &var_in)?;

    let mut report = StudyReport::new(cfg, &["coverage", "spearman", "mass_ratio", "conjugacy_residual"])?;
    report.push_row(lambda, 0, vec![coverage, rho, mass_ratio, resid])?;
    report.aggregates = report.compute_aggregates();
    put_stat(&mut report, "coverage", coverage);
    put_stat(&mut report, "spearman", rho);
    put_stat(&mut report, "mass_ratio", mass_ratio);
    put_stat(&mut report, "path_min", lo);
    put_stat(&mut report, "path_max", hi);
    report.checks.push(Check::at_least("band_coverage", coverage, FIGURE_COVERAGE_MIN));
    report.checks.push(Check::at_most("spearman_variance_occupation", rho, FIGURE_SPEARMAN_MAX));
    report.checks.push(Check::within("occupation_mass_ratio", mass_ratio, 1.0 - FIGURE_MASS_TOL, 1.0 + FIGURE_MASS_TOL));
    report.checks.push(Check::at_most("conjugacy_residual", resid, CONJUGACY_RESIDUAL_MAX));

    report.attach("heatmap.csv", heatmap_csv(&path, cfg.figure.time_stride)?);
    report.attach("band.csv", band.to_csv());
    report.attach("occupation.csv", columns_csv(&["x", "occupation", "posterior_variance"], &[&xs, &occ_in, &var_in])?);
    Ok(report)
}
