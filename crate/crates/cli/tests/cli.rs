//! Runs the built `survsdr` binary end to end.

use std::path::Path;
use std::process::{Command, Output};

use survsdr::simulate::{generate, SimSetting};

fn survsdr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_survsdr")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn write_data(dir: &Path, n: usize) -> String {
    let (ds, _) = generate(&SimSetting::new(1, 6, n, 5)).unwrap();
    let path = dir.join("data.csv");
    ds.write_csv(std::fs::File::create(&path).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn usage_errors_exit_with_two() {
    let o = survsdr(&["fit", "--data", "whatever.csv", "--method", "cpsir"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--d"));
    let o = survsdr(&["fit", "--data", "whatever.csv", "--method", "forward", "--d", "2"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("requires d = 1"), "{}", stderr(&o));
    assert_eq!(code(&survsdr(&["simulate", "--setting", "5"])), 2);
    assert_eq!(code(&survsdr(&["bootstrap", "--method", "cpsir"])), 2);
    assert_eq!(code(&survsdr(&["--help"])), 0);
}

#[test]
fn runtime_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.csv");
    let o = survsdr(&["fit", "--data", missing.to_str().unwrap(), "--d", "1", "--method", "cpsir"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("missing.csv"));

    let data = write_data(tmp.path(), 60);
    let out = tmp.path().join("b");
    let o = survsdr(&["bootstrap", "--data", &data, "--d", "1", "--method", "cpsir", "--n-boot", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("at least 2"), "{}", stderr(&o));
}

#[test]
fn fit_writes_loadings_projection_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_data(tmp.path(), 120);
    let out = tmp.path().join("fit");
    let o = survsdr(&["fit", "--data", &data, "--d", "1", "--method", "ircp", "--out", out.to_str().unwrap(), "--threads", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let raw = read(out.join("b_hat.csv"));
    let mut lines = raw.lines();
    assert_eq!(lines.next(), Some("variable,b1"));
    let loadings: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(loadings.len(), 6);
    assert!((loadings.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-10);
    // sign rule: the largest entry is positive
    let big = loadings.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
    assert!(big > 0.0);

    let norm = read(out.join("b_normalized.csv"));
    assert!(norm.lines().next().unwrap().starts_with("variable,anchor,b1"));
    assert!(norm.lines().any(|l| l.ends_with(",1,1")));

    let proj = read(out.join("projected.csv"));
    assert_eq!(proj.lines().next(), Some("z1,time,status"));
    assert_eq!(proj.lines().count(), 121);

    let manifest: serde_json::Value = serde_json::from_str(&read(out.join("manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "fit");
    assert_eq!(manifest["config"]["method"], "ircp");
    assert_eq!(manifest["config"]["d"], 1);
    assert!(manifest["wall_time_seconds"].as_f64().unwrap() >= 0.0);
    assert_eq!(manifest["init_method"], "cpsir");
}

#[test]
fn config_file_and_manifest_reproduce_a_fit() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_data(tmp.path(), 100);
    let a = tmp.path().join("a");
    let o = survsdr(&["fit", "--data", &data, "--d", "1", "--method", "forward", "--out", a.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let cfg = tmp.path().join("cfg.json");
    let b = tmp.path().join("b");
    let text = serde_json::json!({"data": data, "d": 1, "method": "forward", "out": b.to_str().unwrap()});
    std::fs::write(&cfg, text.to_string()).unwrap();
    let o = survsdr(&["fit", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read(a.join("b_hat.csv")), read(b.join("b_hat.csv")));

    // rerun from the manifest, redirecting output on the command line
    let c = tmp.path().join("c");
    let m = a.join("manifest.json");
    let o = survsdr(&["fit", "--config", m.to_str().unwrap(), "--out", c.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["b_hat.csv", "b_normalized.csv", "projected.csv"] {
        assert_eq!(read(a.join(f)), read(c.join(f)), "{f}");
    }
}

#[test]
fn simulate_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let o = survsdr(&[
            "simulate", "--setting", "1", "--n", "120", "--reps", "3", "--methods", "cpsir,ircp", "--seed", "9",
            "--out", out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["replications.csv", "summary.csv"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f}");
    }
    let reps = read(a.join("replications.csv"));
    assert_eq!(reps.lines().count(), 7);
    assert!(read(a.join("timing.csv")).starts_with("method,reps,mean_seconds,sd_seconds"));
}

#[test]
fn single_replication_leaves_sd_empty() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s");
    let o = survsdr(&["simulate", "--setting", "2", "--n", "150", "--methods", "cpsir", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = read(out.join("summary.csv"));
    let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(summary.lines().count(), 2);
    assert_eq!(row[4], "2");
    assert!(!row[6].is_empty() && row[7].is_empty() && row[9].is_empty() && row[11].is_empty());
}

#[test]
fn bootstrap_on_data_and_on_a_setting() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_data(tmp.path(), 150);
    let out = tmp.path().join("bd");
    let o = survsdr(&["bootstrap", "--data", &data, "--d", "1", "--method", "cpsir", "--n-boot", "20", "--anchors", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = read(out.join("bootstrap.csv"));
    assert_eq!(table.lines().next(), Some("parameter,variable,row,column,estimate,sd,lower,upper"));
    assert_eq!(table.lines().count(), 6);
    assert!(table.lines().nth(1).unwrap().starts_with("beta_2,X2,2,1,"));
    assert_eq!(read(out.join("replicates.csv")).lines().count(), 21);

    let out = tmp.path().join("bs");
    let o = survsdr(&["bootstrap", "--setting", "1", "--n", "150", "--reps", "4", "--n-boot", "10", "--method", "cpsir", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cov = read(out.join("coverage.csv"));
    assert_eq!(cov.lines().next(), Some("parameter,row,column,truth,mean,sd,sd_hat,coverage"));
    assert_eq!(cov.lines().count(), 6);
}
