use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_spde-bayes"));
    c.env_remove("SPDE_BAYES_THREADS");
    c
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    bin()
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const SMALL_GRID: &str = "[grid]\nunit_interval = [-0.5, 0.5]\npoints_per_unit = 16\nhorizon = 0.05\ndt = 0.001\n";

#[test]
fn unknown_key_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "kind = \"bvm\"\nreplicats = 4\n");
    let out = run(&["bvm"], &cfg, &dir.path().join("o"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("replicats"));
}

#[test]
fn missing_config_and_kind_mismatch_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["figure"], &dir.path().join("nope.toml"), &dir.path().join("o"));
    assert_eq!(out.status.code(), Some(2));
    let cfg = write(dir.path(), "c.toml", "kind = \"bvm\"\n");
    let out = run(&["figure"], &cfg, &dir.path().join("o"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_thread_env_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "kind = \"simulate\"\n");
    let out = bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .env("SPDE_BAYES_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn blow_up_exits_with_numerical_code() {
    let dir = tempfile::tempdir().unwrap();
    let text = "lambdas = [1.0]\nreplicates = 1\n[model]\nkind = \"constant\"\nvalue = 1e308\n\
                [grid]\nunit_interval = [-0.5, 0.5]\npoints_per_unit = 16\nhorizon = 3.0\ndt = 1.0\n";
    let cfg = write(dir.path(), "c.toml", text);
    let out = run(&["simulate"], &cfg, &dir.path().join("o"));
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_writes_report_and_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &format!("lambdas = [2.0]\nreplicates = 2\n{SMALL_GRID}"));
    let o = dir.path().join("o");
    let out = run(&["simulate", "--seed", "5"], &cfg, &o);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["report.json", "rows.csv", "heatmap.csv", "path_lambda_2.spde1"] {
        assert!(o.join(f).is_file(), "{f}");
    }
    let path = spde_bayes::pathio::load_path(&o.join("path_lambda_2.spde1")).unwrap();
    assert_eq!(path.grid().n(), 32);
    assert_eq!(path.n_steps(), 50);
    let heat = fs::read_to_string(o.join("heatmap.csv")).unwrap();
    assert!(heat.starts_with("t,y,X\n"));
    let report = fs::read_to_string(o.join("report.json")).unwrap();
    assert!(report.contains("\"seed\": 5"));
}

#[test]
fn reports_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &format!("lambdas = [4.0, 8.0]\nreplicates = 3\n{SMALL_GRID}"));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run(&["contraction", "--threads", "1"], &cfg, &a).status.success());
    let out = bin()
        .args(["contraction", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&b)
        .env("SPDE_BAYES_THREADS", "3")
        .output()
        .unwrap();
    assert!(out.status.success());
    for f in ["report.json", "rows.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}
