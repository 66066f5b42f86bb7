//! End-to-end checks of the `soliton-lab` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
[experiment]
preset = "orbital"

[model]
id = "gp"

[wave]
c = 1.2

[grid]
n = 512
length = 60.0

[time]
t_final = 2.0
t_snap = 0.25
c_stab = 1.0
formulation = "hydro"

[perturbation]
amplitude = 0.01
amplitudes = [0.01, 0.005]
shape = "gaussian"
center = 0.0
width = 3.0
eta_weight = 1.0
v_weight = 1.0
"#;

fn soliton_lab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_soliton-lab"))
        .args(args)
        .env("SOLITON_LAB_OUT", out)
        .output()
        .expect("binary runs")
}

fn bundles(root: &Path) -> Vec<std::path::PathBuf> {
    let mut v: Vec<_> = fs::read_dir(root).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_dir()).collect();
    v.sort();
    v
}

#[test]
fn run_then_verify_then_tamper() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("orbital.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let out = tmp.path().join("out");
    let run = soliton_lab(&["run", cfg.to_str().unwrap()], &out);
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(run.status.success(), "{stdout}\n{}", String::from_utf8_lossy(&run.stderr));
    assert!(stdout.contains("criterion  6"));

    let dirs = bundles(&out);
    assert_eq!(dirs.len(), 1);
    let bundle = &dirs[0];
    assert!(bundle.file_name().unwrap().to_string_lossy().starts_with("orbital-"));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(bundle.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["version"].as_str().unwrap().split('.').count(), 3);
    assert_eq!(summary["acceptance"][0]["criterion"], 6);
    assert!(summary["files"].as_object().unwrap().contains_key("modulation_alpha_1.00e-2.csv"));

    let ok = soliton_lab(&["verify", bundle.to_str().unwrap()], &out);
    assert!(ok.status.success());

    let csv = bundle.join("orbital.csv");
    let mut text = fs::read_to_string(&csv).unwrap();
    text.push_str("0,0,0,0,0\n");
    fs::write(&csv, text).unwrap();
    let bad = soliton_lab(&["verify", bundle.to_str().unwrap()], &out);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stdout).contains("digest mismatch: orbital.csv"));
}

#[test]
fn sweep_writes_one_bundle_per_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("orbital.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let out = tmp.path().join("out");
    let r = soliton_lab(&["sweep", cfg.to_str().unwrap(), "--param", "c=1.10:1.20:0.05"], &out);
    assert!(r.status.code().is_some(), "{}", String::from_utf8_lossy(&r.stderr));
    let stdout = String::from_utf8_lossy(&r.stdout);
    for c in ["c = 1.1", "c = 1.15", "c = 1.2"] {
        assert!(stdout.contains(c), "{stdout}");
    }
    assert_eq!(bundles(&out).len(), 3);
}

#[test]
fn supersonic_sweep_is_rejected_before_compute() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("orbital.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let out = tmp.path().join("out");
    let r = soliton_lab(&["sweep", cfg.to_str().unwrap(), "--param", "c=1.30:1.45:0.05"], &out);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("c_s"));
    assert!(!out.exists());
}

#[test]
fn module_errors_name_module_hash_and_last_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("spectral.toml");
    // The coefficient grid is only built inside the preset, after validation.
    let text = r#"
[experiment]
preset = "spectral-sweep"

[wave]
c = 1.2
speeds = [1.2]

[grid]
n = 256
length = 40.0
length_over_nu = 42.0

[spectral]
refine_n = 512
q_n = 100
"#;
    fs::write(&cfg, text).unwrap();
    let out = tmp.path().join("out");
    let r = soliton_lab(&["run", cfg.to_str().unwrap()], &out);
    let stderr = String::from_utf8_lossy(&r.stderr);
    assert!(!r.status.success());
    assert!(stderr.contains("spectral_grid failed (config "), "{stderr}");
    assert!(stderr.contains("config.toml"), "{stderr}");
    let bundle = &bundles(&out)[0];
    assert!(bundle.join("error.json").exists());
    assert!(!bundle.join("summary.json").exists());
}
