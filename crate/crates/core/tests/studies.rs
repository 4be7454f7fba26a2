use proptest::prelude::*;
use spde_bayes::experiments::report::{Aggregate, SlopeFit};
use spde_bayes::experiments::{emit_report, parse_config_str, run_study, StudyReport};
use spde_bayes::Error;

const SMALL_GRID: &str = "
[grid]
unit_interval = [-0.5, 0.5]
points_per_unit = 16
horizon = 0.05
dt = 0.001
";

fn run(text: &str) -> spde_bayes::Result<StudyReport> {
    run_study(&parse_config_str(&format!("{text}{SMALL_GRID}"))?, Some(1))
}

#[test]
fn constant_test_function_is_flagged_degenerate() {
    let report = run(
        "kind = \"ergodicity\"
lambdas = [4.0, 8.0]
replicates = 5
test_function = { kind = \"constant\", value = 1.0 }
proxy = { lambda = 16.0, points_per_unit = 16, replicates = 2 }
",
    )
    .unwrap();
    assert!(report.check("degenerate_statistic_vanishes").unwrap().passed);
    assert!(report.check("variance_slope").is_none());
    for tag in ["lambda_4", "lambda_8"] {
        assert!(report.statistics[&format!("variance_{tag}")] <= 1e-24);
        assert!(report.statistics[&format!("bias_{tag}")].abs() <= 1e-10);
    }
}

#[test]
fn bvm_with_gamma_outside_xi_is_a_config_error() {
    let err = run(
        "kind = \"bvm\"
lambdas = [4.0]
replicates = 2
test_function = { kind = \"bump\", center = 5.0, radius = 0.5, height = 1.0 }
",
    )
    .unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    assert!(err.to_string().contains("test_function"));
}

#[test]
fn rerun_gives_byte_identical_report() {
    let text = "kind = \"contraction\"\nlambdas = [4.0, 8.0]\nreplicates = 1\n";
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let files_a = emit_report(&run(text).unwrap(), a.path()).unwrap();
    let files_b = emit_report(&run(text).unwrap(), b.path()).unwrap();
    assert_eq!(files_a.len(), files_b.len());
    for (x, y) in files_a.iter().zip(&files_b) {
        assert_eq!(x.file_name(), y.file_name());
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{}", x.display());
    }
}

#[test]
fn aggregates_recompute_from_rows() {
    let report = run("kind = \"contraction\"\nlambdas = [4.0, 8.0]\nreplicates = 3\n").unwrap();
    let back = StudyReport::from_json(&report.to_json().unwrap()).unwrap();
    assert_eq!(back.compute_aggregates(), report.aggregates);
    let col = report.column_index("l2_error").unwrap();
    for lambda in [4.0, 8.0] {
        let xs: Vec<f64> = report.rows.iter().filter(|r| r.lambda == lambda).map(|r| r.values[col]).collect();
        assert_eq!(xs.len(), 3);
        let agg = report.aggregate(lambda, "l2_error").unwrap();
        assert!((agg.mean - xs.iter().sum::<f64>() / 3.0).abs() <= 1e-15 * agg.mean.abs());
        let mut sorted = xs.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(agg.median, sorted[1]);
        assert_eq!(agg, &Aggregate::from_values(lambda, "l2_error", &xs));
    }
}

proptest! {
    #[test]
    fn slope_fit_recovers_exact_power_laws(c in 0.01f64..100.0, s in -2.0f64..2.0, n in 2usize..6) {
        let lambdas: Vec<f64> = (0..n).map(|k| 8.0 * 2f64.powi(k as i32)).collect();
        let values: Vec<f64> = lambdas.iter().map(|l| c * l.powf(s)).collect();
        let fit = SlopeFit::fit("power", &lambdas, &values, s).unwrap();
        prop_assert!((fit.slope - s).abs() <= 1e-10, "{} vs {}", fit.slope, s);
        prop_assert!((fit.intercept - c.ln()).abs() <= 1e-9);
        prop_assert!(fit.slope_se.abs() <= 1e-8);
    }
}
