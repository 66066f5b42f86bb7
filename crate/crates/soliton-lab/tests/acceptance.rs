//! Acceptance gate: runs every shipped preset config and checks all thirteen criteria.
//!
//! Prints one PASS/FAIL line per criterion, then fails if any criterion failed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use soliton_lab::cli::{run_experiment, AcceptanceEntry, ExperimentConfig};

const PRESETS: [&str; 8] = [
    "profile-sweep",
    "cross-check",
    "orbital",
    "spectral-sweep",
    "transonic-constants",
    "monotonicity",
    "virial",
    "asymptotic",
];

fn config(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(format!("{name}.toml"));
    ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Reduced orbital run used for the repeatability check.
fn small_config() -> ExperimentConfig {
    let mut cfg = config("orbital");
    cfg.wave.c = 1.2;
    cfg.grid.n = 512;
    cfg.grid.length = 60.0;
    cfg.time.t_final = 5.0;
    cfg.perturbation.amplitudes = vec![1e-2, 5e-3];
    cfg.diagnostics.write_trajectory = true;
    cfg
}

fn csv_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

fn determinism(root: &Path) -> AcceptanceEntry {
    let cfg = small_config();
    let dirs: Vec<PathBuf> = ["first", "second"].iter().map(|d| root.join(d)).collect();
    let runs: Vec<_> = dirs.iter().map(|d| run_experiment(&cfg, d).expect("repeat run")).collect();
    let a = csv_bytes(&dirs[0].join(&runs[0].run_id));
    let b = csv_bytes(&dirs[1].join(&runs[1].run_id));
    let differing = a.iter().filter(|(k, v)| b.get(*k) != Some(v)).count() + b.keys().filter(|k| !a.contains_key(*k)).count();
    AcceptanceEntry {
        criterion: 13,
        name: "determinism".into(),
        pass: !a.is_empty() && differing == 0 && runs[0].files == runs[1].files,
        value: Some(differing as f64),
        threshold: 0.0,
        detail: format!("{} CSV files compared byte for byte across two runs", a.len()),
    }
}

#[test]
fn acceptance_criteria() {
    let root = tempfile::tempdir().unwrap();
    let results: Vec<(String, Result<Vec<AcceptanceEntry>, String>)> = PRESETS
        .par_iter()
        .map(|name| {
            let r = run_experiment(&config(name), &root.path().join("presets")).map(|s| s.acceptance).map_err(|e| e.to_string());
            (name.to_string(), r)
        })
        .collect();
    let mut entries = Vec::new();
    let mut errors = Vec::new();
    for (name, r) in results {
        match r {
            Ok(e) => entries.extend(e),
            Err(e) => errors.push(format!("{name}: {e}")),
        }
    }
    entries.push(determinism(root.path()));
    entries.sort_by_key(|e| e.criterion);
    for e in &entries {
        println!("{}", e.line());
    }
    for e in &errors {
        println!("ERROR {e}");
    }
    let seen: Vec<u32> = entries.iter().map(|e| e.criterion).collect();
    assert_eq!(seen, (1..=13).collect::<Vec<_>>(), "each criterion must report exactly once");
    assert!(errors.is_empty(), "presets failed to run: {errors:?}");
    let failed: Vec<u32> = entries.iter().filter(|e| !e.pass).map(|e| e.criterion).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
