use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use adsmc::harness::export::{read_metrics, read_trace};

fn scenarios() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn adsmc(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adsmc")).args(args).arg("--out").arg(out).output().unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

const SCALAR: &str = r#"
name = "tiny"
duration_s = 2.0
sample_period_s = 0.02
skip_settle_s = 0.5
[scalar]
initial = 2.0
drift = { linear = -0.5 }
adc = { bits = 10, fsr = 8.0 }
control = { rho = 0.5, adc_compensation = true }
[scalar.trajectory]
kind = "constant"
points = [[0.0, 1.0]]
"#;

#[test]
fn run_writes_trace_metrics_and_summary() {
    let out = tempfile::tempdir().unwrap();
    let sc = scenarios().join("engine_additive.toml");
    let o = adsmc(&["run", sc.to_str().unwrap()], out.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = read_trace(&out.path().join("engine_additive.trace.csv")).unwrap();
    assert_eq!(trace.len(), 1500);
    let m = read_metrics(&out.path().join("engine_additive.metrics.json")).unwrap();
    assert_eq!(m.rows, 1500);
    assert!(out.path().join("engine_additive.summary.csv").exists());
    assert!(String::from_utf8_lossy(&o.stdout).contains("t_exh"));
}

#[test]
fn json_format_round_trips() {
    let out = tempfile::tempdir().unwrap();
    let sc = write(out.path(), "tiny.toml", SCALAR);
    let o = adsmc(&["run", sc.to_str().unwrap(), "--format", "json"], out.path());
    assert!(o.status.success());
    let trace = read_trace(&out.path().join("tiny.trace.json")).unwrap();
    assert_eq!(trace.len(), 100);
    assert_eq!(trace.columns[0], "t");
}

#[test]
fn ab_writes_both_variants() {
    let out = tempfile::tempdir().unwrap();
    let sc = write(out.path(), "tiny.toml", SCALAR);
    let o = adsmc(&["ab", sc.to_str().unwrap()], out.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["tiny.baseline.trace.csv", "tiny.compensated.trace.csv", "tiny.ab.metrics.json", "tiny.ab.summary.csv"] {
        assert!(out.path().join(f).exists(), "missing {f}");
    }
}

#[test]
fn sweep_runs_every_scenario() {
    let out = tempfile::tempdir().unwrap();
    let o = adsmc(&["sweep", scenarios().to_str().unwrap()], out.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(out.path().join("sweep.summary.csv")).unwrap();
    for name in ["engine_additive", "engine_combined", "scalar_benchmark", "engine_ab"] {
        assert!(summary.contains(name), "{name} missing from sweep summary");
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let sc = scenarios().join("engine_combined.toml");
    assert!(adsmc(&["run", sc.to_str().unwrap()], a.path()).status.success());
    assert!(adsmc(&["run", sc.to_str().unwrap()], b.path()).status.success());
    for f in ["engine_combined.trace.csv", "engine_combined.metrics.json", "engine_combined.summary.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn exit_codes() {
    let out = tempfile::tempdir().unwrap();
    let bad = write(out.path(), "bad.toml", &SCALAR.replace("sample_period_s = 0.02", "sample_period_s = -1.0"));
    assert_eq!(adsmc(&["run", bad.to_str().unwrap()], out.path()).status.code(), Some(1));

    let unknown = write(out.path(), "unknown.toml", &format!("{SCALAR}\nextra = 1\n"));
    assert_eq!(adsmc(&["run", unknown.to_str().unwrap()], out.path()).status.code(), Some(1));

    let diverge = SCALAR
        .replace("drift = { linear = -0.5 }", "drift = { linear = 1.0e6 }")
        .replace("adc = { bits = 10, fsr = 8.0 }\n", "")
        .replace("control = { rho = 0.5, adc_compensation = true }", "control = { actuator_limits = [0.0, 0.0] }");
    let diverge = write(out.path(), "diverge.toml", &diverge);
    let o = adsmc(&["run", diverge.to_str().unwrap()], out.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("step"));

    let clamp = SCALAR.replace("[scalar]\n", "[scalar]\ninjection = { mode = \"additive\", alpha = 1.0 }\n").replace(
        "control = { rho = 0.5, adc_compensation = true }",
        "control = { adapt = { mode = \"additive\", kappa = 1e-4 }, estimate_band = [-0.01, 0.01] }",
    );
    let clamp = write(out.path(), "clamp.toml", &clamp);
    assert_eq!(adsmc(&["run", clamp.to_str().unwrap()], out.path()).status.code(), Some(0));
    assert_eq!(adsmc(&["run", clamp.to_str().unwrap(), "--strict-invariants"], out.path()).status.code(), Some(3));
}
