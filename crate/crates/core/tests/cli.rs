use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn sprime(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sprime")).current_dir(dir).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("experiment.toml");
    fs::write(&path, text).unwrap();
    path
}

fn run_dir(out: &Output) -> PathBuf {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    PathBuf::from(String::from_utf8(out.stdout.clone()).unwrap().lines().last().unwrap())
}

fn summary(dir: &Path, run: &Path) -> Value {
    serde_json::from_slice(&fs::read(dir.join(run).join("summary.json")).unwrap()).unwrap()
}

#[test]
fn config_errors_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "dt = 0.01\nbogus = 3\n");
    let out = sprime(tmp.path(), &["flow", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
    assert!(!tmp.path().join("out").exists(), "nothing is written on a config error");

    let out = sprime(tmp.path(), &["flow", "--dt=-0.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dt"));

    let out = sprime(tmp.path(), &["no-such-kind"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn forward_rejects_q_at_or_below_quarter_dimension() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "d = 1\nq = 0.2\n");
    let out = sprime(tmp.path(), &["forward", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("q must exceed d/4"));
}

#[test]
fn monotonicity_identity_case() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "d = 1\np = 1.0\nN = 16\nsamples = 100\n");
    let out = sprime(tmp.path(), &["monotonicity", "--config", cfg.to_str().unwrap()]);
    let s = summary(tmp.path(), &run_dir(&out));
    let c_hat = s["result"]["C_hat"].as_f64().unwrap();
    assert!(c_hat <= 1e-8, "C_hat = {c_hat}");
}

#[test]
fn frozen_flow_does_not_move() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"
T = 0.5
[[sigma]]
variant = "constant"
value = 0.0
[[b]]
variant = "constant"
value = 0.0
"#,
    );
    let out = sprime(tmp.path(), &["flow", "--config", cfg.to_str().unwrap(), "--paths", "3"]);
    let run = run_dir(&out);
    let s = summary(tmp.path(), &run);
    assert_eq!(s["result"]["max_displacement"].as_f64(), Some(0.0));
    assert_eq!(s["result"]["conservation"]["pass"].as_bool(), Some(true));
    let series = fs::read_to_string(tmp.path().join(&run).join("series.csv")).unwrap();
    assert_eq!(series.lines().next(), Some("path,t,z_1,alive"));
    assert_eq!(series.lines().count(), 1 + 3 * 51);
}

#[test]
fn unbounded_fields_are_a_hypothesis_violation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"
T = 0.5
M = 50
[y]
variant = "dirac"
location = [0.0]
[[sigma]]
variant = "constant"
value = 1.0
[[b]]
variant = "smooth"
function = { kind = "polynomial", coefficients = [0.0, 0.0, 0.0, 4.0] }
"#,
    );
    let out = sprime(tmp.path(), &["evolve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn summaries_are_reproducible_across_runs_and_workers() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "name = \"repro\"\nT = 0.2\nN = 6\nM = 300\n");
    let cfg = cfg.to_str().unwrap();
    let a = run_dir(&sprime(tmp.path(), &["evolve", "--config", cfg, "--workers", "1"]));
    let b = run_dir(&sprime(tmp.path(), &["evolve", "--config", cfg, "--workers", "4"]));
    assert_ne!(a, b);
    assert!(a.starts_with("out/repro"));
    for file in ["summary.json", "series.csv", "config.resolved"] {
        let x = fs::read(tmp.path().join(&a).join(file)).unwrap();
        let y = fs::read(tmp.path().join(&b).join(file)).unwrap();
        assert_eq!(x, y, "{file} differs");
    }
    let c = run_dir(&sprime(tmp.path(), &["evolve", "--config", cfg, "--seed", "7"]));
    assert_ne!(
        fs::read(tmp.path().join(&a).join("summary.json")).unwrap(),
        fs::read(tmp.path().join(&c).join("summary.json")).unwrap()
    );
}

#[test]
fn resolved_config_reruns_to_the_same_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let a = run_dir(&sprime(tmp.path(), &["kernel", "--paths", "100", "--dt", "0.02"]));
    let resolved = tmp.path().join(&a).join("config.resolved");
    let text = fs::read_to_string(&resolved).unwrap();
    assert!(text.contains("M = 100") && text.contains("dt = 0.02") && text.contains("seed = "));
    let b = run_dir(&sprime(tmp.path(), &["kernel", "--config", resolved.to_str().unwrap()]));
    assert_eq!(
        fs::read(tmp.path().join(&a).join("summary.json")).unwrap(),
        fs::read(tmp.path().join(&b).join("summary.json")).unwrap()
    );
}

#[test]
fn every_kind_writes_its_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    for kind in ["flow", "evolve", "kernel", "forward", "monotonicity", "sobolev-probe", "uniqueness"] {
        let cfg = write_config(tmp.path(), "T = 0.1\nN = 6\nsamples = 100\nlevels = 2\n");
        let out = sprime(tmp.path(), &[kind, "--config", cfg.to_str().unwrap(), "--paths", "20"]);
        let run = run_dir(&out);
        assert!(run.starts_with(format!("out/{kind}")), "{kind}: {run:?}");
        for file in ["summary.json", "series.csv", "config.resolved"] {
            assert!(tmp.path().join(&run).join(file).is_file(), "{kind}: missing {file}");
        }
        assert_eq!(summary(tmp.path(), &run)["kind"].as_str(), Some(kind));
    }
}
