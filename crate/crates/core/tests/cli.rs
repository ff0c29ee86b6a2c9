//! End-to-end runs of the `cvxnn` binary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cvxnn"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        out.insert(p.file_name().unwrap().into(), std::fs::read(&p).unwrap());
    }
    out
}

fn example_one(dir: &Path) -> PathBuf {
    let p = dir.join("example1.csv");
    std::fs::write(&p, "x1,x2\n2,2\n3,3\n1,0\n").unwrap();
    p
}

#[test]
fn enumerate_reports_count_and_bound() {
    let tmp = tempfile::tempdir().unwrap();
    example_one(tmp.path());
    let o = run(tmp.path(), &["enumerate", "--data", "example1.csv", "--out", "o"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("P=4, bound=6"), "{}", stdout(&o));
    let text = std::fs::read_to_string(tmp.path().join("o/patterns.txt")).unwrap();
    let bits: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).map(|l| &l[..3]).collect();
    assert_eq!(bits, ["000", "001", "110", "111"]);
}

#[test]
fn rank_guardrail_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    example_one(tmp.path());
    let o = run(tmp.path(), &["enumerate", "--data", "example1.csv", "--r-max", "1", "--out", "o"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("rank 2"));
}

#[test]
fn sampling_twice_gives_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    for dir in ["a", "b"] {
        let o = run(tmp.path(), &["sample", "--count", "100", "--seed", "7", "--generator", "planted_relu:n=12,d=3", "--out", dir]);
        assert_eq!(o.status.code(), Some(0));
    }
    let a = std::fs::read(tmp.path().join("a/patterns.txt")).unwrap();
    let b = std::fs::read(tmp.path().join("b/patterns.txt")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn convolutional_sampling_records_its_source() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), &["sample", "--method", "conv", "--image", "8x8", "--filter", "3x3", "--count", "40", "--out", "c"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(tmp.path().join("c/patterns.txt")).unwrap();
    assert!(text.lines().nth(1).unwrap().contains("source=convolutional"));
}

#[test]
fn train_convex_writes_a_passing_parity_record() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), &["train-convex", "--generator", "toy1d", "--bias", "--beta", "1e-3", "--out", "t"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let parity: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("t/parity.json")).unwrap()).unwrap();
    assert_eq!(parity["passed"], true);
    assert!(parity["relative_gap"].as_f64().unwrap() <= 1e-6);
    for f in ["network.txt", "weights.csv", "report.json", "trajectory.jsonl", "manifest.toml", "manifest.json"] {
        assert!(tmp.path().join("t").join(f).exists(), "missing {f}");
    }
}

#[test]
fn interpolation_prints_the_residual() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), &["train-convex", "--generator", "toy1d", "--bias", "--interpolate", "1e-6", "--out", "t"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let line = stdout(&o);
    let r: f64 = line.split("residual=").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap();
    assert!(r <= 1.01e-6, "{line}");
}

#[test]
fn rank_option_records_the_ratio() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(
        tmp.path(),
        &["train-convex", "--generator", "rank_deficient_gaussian:n=10,d=6,k=3", "--beta", "0.1", "--rank", "2", "--out", "t"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let s: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("t/summary.json")).unwrap()).unwrap();
    assert!(s["ratio"].as_f64().unwrap() >= 1.0);
}

#[test]
fn solver_stall_and_parity_failures_have_distinct_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(
        tmp.path(),
        &["train-convex", "--generator", "planted_relu:n=10,d=3", "--beta", "1e-3", "--solver", "admm", "--max-iters", "3", "--out", "t"],
    );
    assert_eq!(o.status.code(), Some(4));
    assert!(tmp.path().join("t/parity.json").exists());
}

#[test]
fn missing_inputs_are_data_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), &["compare", "--data", "no_such_labels.csv", "--out", "c"]);
    assert_eq!(o.status.code(), Some(3));
    std::fs::write(tmp.path().join("nolabels.csv"), "x1,x2\n1,2\n3,4\n").unwrap();
    let o = run(tmp.path(), &["compare", "--data", "nolabels.csv", "--label-cols", "0", "--out", "c"]);
    assert_eq!(o.status.code(), Some(3));
    std::fs::write(tmp.path().join("bad.csv"), "x,y\n1,2\n3,oops\n").unwrap();
    let o = run(tmp.path(), &["train-convex", "--data", "bad.csv", "--out", "c"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(tmp.path(), &["enumerate", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(tmp.path(), &["train-convex", "--beta", "-1", "--out", "t"]).status.code(), Some(2));
}

#[test]
fn compare_rows_never_beat_the_convex_optimum() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(
        tmp.path(),
        &["compare", "--generator", "toy1d", "--bias", "--beta", "1e-3", "--m", "8", "--lr", "0.02", "--epochs", "2000", "--seeds", "10", "--out", "c"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("c/compare.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("method,seed,lr,m,train_objective,test_metric"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 11);
    let convex: f64 = rows[0][4].parse().unwrap();
    for r in &rows[1..] {
        assert!(r[4].parse::<f64>().unwrap() >= convex - 1e-9);
    }
}

#[test]
fn config_rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(tmp.path(), &["train-convex", "--generator", "planted_relu:n=8,d=2", "--beta", "0.1", "--seed", "3", "--out", "r"]);
    assert_eq!(o.status.code(), Some(0));
    let first = snapshot(&tmp.path().join("r"));
    let o2 = run(tmp.path(), &["train-convex", "--config", "r/manifest.toml"]);
    assert_eq!(o2.status.code(), Some(0));
    assert_eq!(stdout(&o), stdout(&o2));
    assert_eq!(first, snapshot(&tmp.path().join("r")));
    let o3 = run(tmp.path(), &["train-convex", "--config", "r/manifest.json"]);
    assert_eq!(stdout(&o), stdout(&o3));
    assert_eq!(first, snapshot(&tmp.path().join("r")));
}
