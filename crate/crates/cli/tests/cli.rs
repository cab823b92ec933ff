use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gomkl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gomkl")).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("exp.conf");
    fs::write(&path, body).unwrap();
    path.display().to_string()
}

const SMALL: &str = "\
# tiny synthetic setup
dataset = synthetic
samples = 240
nodes = 4
features = 4
sigmas = 1, 3
topology = ring
baselines = single_kernel:1
";

#[test]
fn run_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_config(dir.path(), SMALL);
    let out = dir.path().join("results");
    let o = gomkl(&["run", &conf, "--out", out.to_str().unwrap(), "--seeds", "4,5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["metrics_4.csv", "metrics_5.csv", "summary.txt", "loss_curve.svg"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert_eq!(stdout, fs::read_to_string(out.join("summary.txt")).unwrap());
    assert!(stdout.contains("seeds: 4,5"));
}

#[test]
fn sweeps() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_config(dir.path(), SMALL);
    let out = dir.path().join("sweeps");
    let o = gomkl(&["sweep-topology", &conf, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("topology_summary.txt").exists());
    assert!(out.join("topology_curves.csv").exists());
    let o = gomkl(&["sweep-quantization", &conf, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(out.join("quantization_summary.txt")).unwrap();
    assert!(summary.lines().any(|l| l.starts_with("m7,")));
}

#[test]
fn config_errors_exit_with_one_line_each() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_config(dir.path(), "quantizer = 1\nfeatures = 20\nnodes = 1\nwhatever = 3\n");
    let out = dir.path().join("none");
    let o = gomkl(&["run", &conf, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let stderr = String::from_utf8(o.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 3, "{stderr}");
    assert!(stderr.lines().all(|l| l.starts_with("config error: ")));
    assert!(!out.exists());

    let o = gomkl(&["run", &dir.path().join("missing.conf").display().to_string()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn runtime_faults_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "1,2,1\n3,oops,-1\n").unwrap();
    let conf = write_config(dir.path(), "dataset = banana\ndata_path = bad.csv\nnodes = 2\n");
    let o = gomkl(&["run", &conf, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}
