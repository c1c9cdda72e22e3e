use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const FAST: &str = "\
[hbt]
duration_s = 0.05
[hom]
duration_s = 0.05
[snr]
duration_s = 0.05
[readout]
trials = 10000
histogram_shots = 1000
[transfer]
trials_per_state = 2000
[linkrun]
duration_s = 1.0
";

fn qlink(args: &[&str], out: &Path, config: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_qlink"));
    cmd.args(args).arg("--out").arg(out).env_remove("QLINK_OUT");
    if let Some(text) = config {
        let path = out.with_extension("toml");
        fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(path);
    }
    cmd.output().unwrap()
}

fn data_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn plan_reports_oband_pump() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o");
    let r = qlink(&["plan"], &out, None);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let rows = data_lines(&out.join("plan.csv"));
    assert!(rows[1].contains(",1623."), "{rows:?}");
    assert!(rows[1].contains("AntiStokes"));
}

#[test]
fn ppln_sweep_peaks_near_130_mw() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o");
    assert!(qlink(&["ppln"], &out, None).status.success());
    let rows = data_lines(&out.join("ppln.csv"));
    assert_eq!(rows[0], "pump_mw,efficiency,noise_hz");
    let best = rows[1..]
        .iter()
        .map(|r| {
            let v: Vec<f64> = r.split(',').map(|x| x.parse().unwrap()).collect();
            (v[0], v[1])
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    assert!((best.0 - 130.0).abs() <= 5.0, "{best:?}");
    assert!((best.1 - 0.122).abs() <= 0.005, "{best:?}");
}

#[test]
fn every_subcommand_writes_provenance() {
    let dir = TempDir::new().unwrap();
    for sub in ["plan", "ppln", "hbt", "hom", "snr", "readout", "transfer", "linkrun"] {
        let out = dir.path().join(sub);
        let r = qlink(&[sub, "--seed", "5"], &out, Some(FAST));
        assert!(r.status.success(), "{sub}: {}", String::from_utf8_lossy(&r.stderr));
        let listed = String::from_utf8(r.stdout).unwrap();
        assert!(!listed.is_empty());
        for entry in fs::read_dir(&out).unwrap() {
            let path = entry.unwrap().path();
            let text = fs::read_to_string(&path).unwrap();
            assert!(text.contains("config_sha256"), "{}", path.display());
            assert!(!text.contains('\r'));
            assert!(listed.contains(path.file_name().unwrap().to_str().unwrap()));
        }
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    for (out, seed) in [(&a, "3"), (&b, "3"), (&c, "4")] {
        assert!(qlink(&["hbt", "--seed", seed], out, Some(FAST)).status.success());
        assert!(qlink(&["linkrun", "--seed", seed], out, Some(FAST)).status.success());
    }
    for name in ["hbt_histogram.csv", "hbt.json", "trace.jsonl", "heralds.csv"] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    assert_ne!(
        data_lines(&a.join("hbt_histogram.csv")),
        data_lines(&c.join("hbt_histogram.csv"))
    );
    assert_eq!(json(&c.join("hbt.json"))["provenance"]["seed"], 4);
}

#[test]
fn invalid_config_fails_with_json_error() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o");
    let r = qlink(&["ppln"], &out, Some("[ppln.converter]\neta_opt = 1.2\n"));
    assert!(!r.status.success());
    let err: serde_json::Value = serde_json::from_slice(&r.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "invalid");
    assert_eq!(err["error"]["section"], "ppln");
    assert_eq!(err["error"]["line"], 2);
    assert!(err["error"]["message"].as_str().unwrap().contains("eta_opt"));
    assert!(!out.exists());
}

#[test]
fn unknown_key_fails() {
    let dir = TempDir::new().unwrap();
    let r = qlink(&["plan"], &dir.path().join("o"), Some("[plan]\nmemory = 737\n"));
    assert!(!r.status.success());
    let err: serde_json::Value = serde_json::from_slice(&r.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "unknown_key");
}

#[test]
fn model_errors_are_reported() {
    let dir = TempDir::new().unwrap();
    // A pump cannot sit between the memory and target frequencies.
    let r = qlink(&["plan"], &dir.path().join("o"), Some("[plan]\nfirst_pump_nm = 1000.0\n"));
    assert!(!r.status.success());
    let err: serde_json::Value = serde_json::from_slice(&r.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "model");
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let dir = TempDir::new().unwrap();
    let r = qlink(&["frobnicate"], &dir.path().join("o"), None);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("Usage"));
}

#[test]
fn empty_config_equals_preset() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(qlink(&["plan"], &a, Some("")).status.success());
    assert!(qlink(&["plan", "--preset", "paper-defaults"], &b, None).status.success());
    assert_eq!(
        fs::read(a.join("plan.csv")).unwrap(),
        fs::read(b.join("plan.csv")).unwrap()
    );
}

#[test]
fn output_dir_from_environment() {
    let dir = TempDir::new().unwrap();
    let target = dir.path().join("env-out");
    let r = Command::new(env!("CARGO_BIN_EXE_qlink"))
        .arg("plan")
        .env("QLINK_OUT", &target)
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(r.status.success());
    assert!(target.join("plan.csv").exists());
}
