//! Config-driven experiment presets, artifact bundles and bundle verification.
//!
//! A config is a TOML file with the sections `experiment`, `model`, `wave`, `grid`,
//! `time`, `perturbation`, `diagnostics`, plus optional preset sections. Each run writes
//! a bundle `<root>/<preset>-<hash>/` holding the resolved config, CSV artifacts and a
//! `summary.json` with the acceptance block and the SHA-256 of every artifact.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::diagnostics::{
    asymptotic_report, default_tau, localized_momentum, monotonicity_report, select_gamma, smoothing_report,
    virial_series, weighted_decay_report, GAMMA_SCAN,
};
use crate::dynamics::{
    dispersion_frequency, hydro_to_classical, momentum, run, run_classical, DynamicsError, Perturbation, RunConfig,
    RunStatus, Trajectory,
};
use crate::modulation::{residual, track, ModulationError, ModulationTrack};
use crate::nonlinearity::{sound_speed, Nonlinearity, NonlinearityError, PolynomialModel};
use crate::operators::{
    assemble_h_c, assemble_t_limit, lowest_eigenvalues, q_coefficients, spectral_report, transonic_constants,
    virial_form_lhs, OperatorError,
};
use crate::profile::{build_profile, nu_c, ProfileError};
use crate::spectral_grid::{energy_norm, Grid, GridError, MIN_POINTS};

/// Semantic version of the bundle layout.
pub const BUNDLE_VERSION: &str = "1.0.0";
/// Environment variable naming the output root.
pub const OUTPUT_ENV: &str = "SOLITON_LAB_OUT";
pub const DEFAULT_OUTPUT: &str = "soliton-lab-out";
/// Frozen `τ_c` for Gross-Pitaevskii at `c = 1.4`, from an exact rational evaluation.
pub const GP_TAU_AT_1_4: f64 = 0.089_239_668_156_096_74;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    ProfileSweep,
    CrossCheck,
    Orbital,
    SpectralSweep,
    TransonicConstants,
    Monotonicity,
    Virial,
    Asymptotic,
}

impl Preset {
    pub fn id(self) -> &'static str {
        match self {
            Preset::ProfileSweep => "profile-sweep",
            Preset::CrossCheck => "cross-check",
            Preset::Orbital => "orbital",
            Preset::SpectralSweep => "spectral-sweep",
            Preset::TransonicConstants => "transonic-constants",
            Preset::Monotonicity => "monotonicity",
            Preset::Virial => "virial",
            Preset::Asymptotic => "asymptotic",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub preset: Preset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

/// Model identifier plus parameter map: `gp`, `beta` (`beta`), or `polynomial` (`a1`, `a2`, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub id: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self { id: "gp".into(), params: BTreeMap::new() }
    }
}

impl ModelSpec {
    pub fn build(&self) -> Result<PolynomialModel<f64>, NonlinearityError> {
        match self.id.as_str() {
            "gp" => Ok(PolynomialModel::gross_pitaevskii()),
            "beta" => {
                let beta = self.params.get("beta").copied().ok_or_else(|| {
                    NonlinearityError::InvalidParameter("model `beta` needs parameter `beta`".into())
                })?;
                PolynomialModel::beta_family(beta)
            }
            "polynomial" => {
                let mut coeffs = Vec::new();
                while let Some(&a) = self.params.get(&format!("a{}", coeffs.len() + 1)) {
                    coeffs.push(a);
                }
                if coeffs.len() != self.params.len() {
                    return Err(NonlinearityError::InvalidParameter(
                        "polynomial parameters must be a1, a2, ... without gaps".into(),
                    ));
                }
                PolynomialModel::new("polynomial", coeffs)
            }
            other => Err(NonlinearityError::InvalidParameter(format!("unknown model id `{other}`"))),
        }
    }

    pub fn label(&self) -> String {
        let params: Vec<String> = self.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        if params.is_empty() {
            self.id.clone()
        } else {
            format!("{}({})", self.id, params.join(","))
        }
    }
}

/// One `(model, c)` cell of a profile sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSpec {
    pub model: ModelSpec,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveSection {
    pub c: f64,
    /// Speeds for the sweep presets.
    #[serde(default)]
    pub speeds: Vec<f64>,
}

impl Default for WaveSection {
    fn default() -> Self {
        Self { c: 1.0, speeds: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub n: usize,
    /// Half-length `L` of the box `[-L, L)`.
    pub length: f64,
    /// When set, the half-length is raised to `length_over_nu / ν_c`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_over_nu: Option<f64>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { n: 2048, length: 100.0, length_over_nu: None }
    }
}

impl GridSection {
    pub fn half_length(&self, nu: f64) -> f64 {
        self.length_over_nu.map_or(self.length, |k| self.length.max(k / nu))
    }

    pub fn for_nu(&self, nu: f64) -> Result<Grid<f64>, GridError> {
        Grid::new(self.n, self.half_length(nu))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    Hydro,
    Classical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub t_final: f64,
    pub t_snap: f64,
    /// Fixed step; defaults to the stability bound (hydro) or `4e-3` (classical).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub c_stab: f64,
    pub formulation: Formulation,
}

impl Default for TimeSection {
    fn default() -> Self {
        Self { t_final: 50.0, t_snap: 0.25, dt: None, c_stab: 1.0, formulation: Formulation::Hydro }
    }
}

pub const DEFAULT_CLASSICAL_DT: f64 = 4e-3;

impl TimeSection {
    /// Step policy on `grid`, with `dt` adjusted to divide `t_snap`.
    pub fn run_config(&self, grid: &Grid<f64>) -> RunConfig {
        let target = match (self.dt, self.formulation) {
            (Some(dt), _) => dt,
            (None, Formulation::Hydro) => return RunConfig::stable(grid, self.t_snap, self.c_stab),
            (None, Formulation::Classical) => DEFAULT_CLASSICAL_DT,
        };
        let steps = (self.t_snap / target).ceil().max(1.0);
        RunConfig { c_stab: self.c_stab, ..RunConfig::new(self.t_snap / steps, self.t_snap) }
    }
}

/// Perturbation shape, relative amplitude `α₀`, and an optional amplitude list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSection {
    pub amplitude: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub amplitudes: Vec<f64>,
    #[serde(flatten)]
    pub profile: Perturbation,
}

impl Default for PerturbationSection {
    fn default() -> Self {
        Self {
            amplitude: 1e-2,
            amplitudes: Vec::new(),
            profile: Perturbation::Gaussian { center: 0.0, width: 3.0, eta_weight: 1.0, v_weight: 1.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsSection {
    /// Cutoff offset `R`.
    pub r: f64,
    /// Cutoff drift `σ`; defaults to `-ν²/4`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    /// Cutoff steepness; defaults to `ν/2`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    /// Offset used for the `R → ±∞` limits; defaults to `L/2`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_far: Option<f64>,
    pub rho: Vec<f64>,
    pub gamma_scan: Vec<f64>,
    pub transient: f64,
    pub bump_width: f64,
    /// Half-width of the window for the localized norm.
    pub window: f64,
    /// Mollifier width applied to `θ` before differentiation.
    pub mollifier: f64,
    pub write_trajectory: bool,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            r: 10.0,
            sigma: None,
            tau: None,
            r_far: None,
            rho: vec![1.0],
            gamma_scan: GAMMA_SCAN.to_vec(),
            transient: 1.0,
            bump_width: 5.0,
            window: 20.0,
            mollifier: 1.5,
            write_trajectory: false,
        }
    }
}

/// Secondary runs of the `cross-check` preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrossCheckSection {
    pub order_amplitude: f64,
    pub order_t_final: f64,
    pub compare_c: f64,
    pub compare_n: usize,
    pub compare_length: f64,
    pub compare_t_final: f64,
    pub classical_dt: f64,
    pub dispersion_modes: Vec<usize>,
    pub dispersion_n: usize,
    pub dispersion_length: f64,
    pub dispersion_amplitude: f64,
}

impl Default for CrossCheckSection {
    fn default() -> Self {
        Self {
            order_amplitude: 0.1,
            order_t_final: 20.0,
            compare_c: 1.2,
            compare_n: 2048,
            compare_length: 100.0,
            compare_t_final: 5.0,
            classical_dt: 2.5e-4,
            dispersion_modes: vec![2, 5, 9],
            dispersion_n: 256,
            dispersion_length: 20.0,
            dispersion_amplitude: 1e-6,
        }
    }
}

/// Secondary grids of the `spectral-sweep` and `transonic-constants` presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectralSection {
    pub eigen_count: usize,
    pub refine_n: usize,
    pub compared_eigenvalues: usize,
    pub q_n: usize,
    pub q_length: f64,
    pub gauss_fields: u64,
    pub limit_n: usize,
    pub limit_length: f64,
    pub convergence_nu2: Vec<f64>,
}

impl Default for SpectralSection {
    fn default() -> Self {
        Self {
            eigen_count: 6,
            refine_n: 1024,
            compared_eigenvalues: 3,
            q_n: 2048,
            q_length: 120.0,
            gauss_fields: 20,
            limit_n: 256,
            limit_length: 50.0,
            convergence_nu2: vec![0.04, 0.01, 0.0025],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directory: Option<PathBuf>,
}

/// One experiment: a preset plus everything it reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cases: Vec<CaseSpec>,
    #[serde(default)]
    pub wave: WaveSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub time: TimeSection,
    #[serde(default)]
    pub perturbation: PerturbationSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub cross_check: CrossCheckSection,
    #[serde(default)]
    pub spectral: SpectralSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{module} failed (config {config_hash}, last good artifact: {last_good}): {message}")]
    Module { module: &'static str, config_hash: String, last_good: String, message: String },
    #[error("bundle {bundle}: {message}")]
    Verify { bundle: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A module error before the config hash and artifact trail are attached.
#[derive(Debug)]
struct Stage {
    module: &'static str,
    message: String,
}

macro_rules! stage_from {
    ($($ty:ty => $module:literal),* $(,)?) => {
        $(impl From<$ty> for Stage {
            fn from(e: $ty) -> Self {
                Stage { module: $module, message: e.to_string() }
            }
        })*
    };
}

stage_from! {
    NonlinearityError => "nonlinearity",
    ProfileError => "profile",
    GridError => "spectral_grid",
    DynamicsError => "dynamics",
    ModulationError => "modulation",
    OperatorError => "operators",
    std::io::Error => "cli",
    csv::Error => "cli",
    serde_json::Error => "cli",
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// SHA-256 of the canonical JSON form, ignoring the output location.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputSection::default();
        let canonical = serde_json::to_string(&c).expect("config serializes to JSON");
        hex(&Sha256::digest(canonical.as_bytes()))
    }

    pub fn short_hash(&self) -> String {
        self.hash()[..12].to_string()
    }

    /// Config value for `--param` keys: `c`, `alpha`, `n`, `L`, or a dotted path.
    pub fn with_param(&self, key: &str, value: f64) -> Result<Self, CliError> {
        let path = match key {
            "c" => "wave.c",
            "alpha" | "amplitude" => "perturbation.amplitude",
            "n" => "grid.n",
            "L" | "length" => "grid.length",
            "T" => "time.t_final",
            other => other,
        };
        let mut doc = toml::Value::try_from(self).map_err(|e| CliError::Config(e.to_string()))?;
        let mut slot = &mut doc;
        let parts: Vec<&str> = path.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = slot
                .as_table_mut()
                .ok_or_else(|| CliError::Config(format!("`{path}` does not name a config field")))?;
            if i + 1 == parts.len() {
                // Unset optional fields are absent from the table; unknown ones fail on re-parse.
                let v = match table.get(*part) {
                    Some(toml::Value::Integer(_)) if value.fract() == 0.0 => toml::Value::Integer(value as i64),
                    Some(toml::Value::Integer(_)) => {
                        return Err(CliError::Config(format!("`{path}` takes integers, got {value}")))
                    }
                    _ => toml::Value::Float(value),
                };
                table.insert((*part).to_string(), v);
                break;
            }
            slot = table
                .get_mut(*part)
                .ok_or_else(|| CliError::Config(format!("`{path}` does not name a config field")))?;
        }
        doc.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))
    }

    /// All speeds the preset will use, paired with their models.
    fn speed_cells(&self) -> Vec<(ModelSpec, f64)> {
        let with_model = |cs: &[f64]| cs.iter().map(|&c| (self.model.clone(), c)).collect::<Vec<_>>();
        match self.experiment.preset {
            Preset::ProfileSweep if !self.cases.is_empty() => {
                self.cases.iter().map(|k| (k.model.clone(), k.c)).collect()
            }
            Preset::ProfileSweep | Preset::SpectralSweep | Preset::TransonicConstants if !self.wave.speeds.is_empty() => {
                with_model(&self.wave.speeds)
            }
            _ => with_model(&[self.wave.c]),
        }
    }

    /// Checks every module precondition that can be checked without computing.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.grid.n < MIN_POINTS || !self.grid.n.is_power_of_two() {
            return bad(format!("grid.n = {} must be a power of two ≥ {MIN_POINTS}", self.grid.n));
        }
        if !(self.grid.length > 0.0) {
            return bad(format!("grid.length = {} must be positive", self.grid.length));
        }
        let t = &self.time;
        if !(t.t_final > 0.0 && t.t_snap > 0.0 && t.t_snap <= t.t_final && t.c_stab > 0.0) {
            return bad("time: need 0 < t_snap ≤ t_final and c_stab > 0".into());
        }
        if t.dt.is_some_and(|dt| !(dt > 0.0)) {
            return bad("time.dt must be positive".into());
        }
        let amps = std::iter::once(self.perturbation.amplitude).chain(self.perturbation.amplitudes.iter().copied());
        for a in amps {
            if !(a > 0.0 && a < 1.0) {
                return bad(format!("perturbation amplitude {a} outside (0, 1)"));
            }
        }
        for (spec, c) in self.speed_cells() {
            let model = spec.build().map_err(|e| CliError::Config(e.to_string()))?;
            let cs = sound_speed(&model).map_err(|e| CliError::Config(e.to_string()))?;
            if !(c > 0.0 && c < cs) {
                return bad(format!("speed c = {c} for model {} must satisfy 0 < c < c_s = {cs}", spec.label()));
            }
            let nu = (cs * cs - c * c).sqrt();
            let l = self.grid.half_length(nu);
            if let (Some(dt), Formulation::Hydro) = (t.dt, t.formulation) {
                let g = self.grid.for_nu(nu).map_err(|e| CliError::Config(e.to_string()))?;
                let bound = t.c_stab / g.k_max().powi(2);
                if dt > bound {
                    return bad(format!("time.dt = {dt} exceeds the stability bound {bound:e} at c = {c}"));
                }
            }
            if l < 40.0 / nu {
                return bad(format!("grid half-length {l} below 40/ν = {} at c = {c}", 40.0 / nu));
            }
        }
        if self.experiment.preset == Preset::CrossCheck {
            let x = &self.cross_check;
            let model = self.model.build().map_err(|e| CliError::Config(e.to_string()))?;
            let nu = nu_c(&model, x.compare_c).map_err(|e| CliError::Config(e.to_string()))?;
            if x.compare_length < 40.0 / nu || x.compare_n < MIN_POINTS || !(x.classical_dt > 0.0) {
                return bad(format!("cross_check: need compare_length ≥ 40/ν = {} and a valid grid and step", 40.0 / nu));
            }
        }
        Ok(())
    }

    fn run_model(&self) -> Result<PolynomialModel<f64>, Stage> {
        Ok(self.model.build()?)
    }
}

/// One line of the acceptance block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceEntry {
    pub criterion: u32,
    pub name: String,
    pub pass: bool,
    /// `None` when the measured value is not finite.
    pub value: Option<f64>,
    pub threshold: f64,
    pub detail: String,
}

impl AcceptanceEntry {
    fn new(criterion: u32, name: &str, pass: bool, value: f64, threshold: f64, detail: String) -> Self {
        let value = value.is_finite().then_some(value);
        Self { criterion, name: name.into(), pass: pass && value.is_some(), value, threshold, detail }
    }

    pub fn line(&self) -> String {
        let value = self.value.map_or("non-finite".to_string(), |v| format!("{v:.4e}"));
        format!(
            "{} criterion {:>2} {}: value {} threshold {:.4e} ({})",
            if self.pass { "PASS" } else { "FAIL" },
            self.criterion,
            self.name,
            value,
            self.threshold,
            self.detail
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleSummary {
    pub version: String,
    pub preset: Preset,
    pub run_id: String,
    pub config_hash: String,
    pub model: String,
    pub acceptance: Vec<AcceptanceEntry>,
    /// Fitted constants, infima and tables.
    pub data: serde_json::Value,
    /// SHA-256 of each artifact, keyed by file name.
    pub files: BTreeMap<String, String>,
}

impl BundleSummary {
    pub fn all_pass(&self) -> bool {
        self.acceptance.iter().all(|e| e.pass)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Artifact directory with a record of what has been written.
pub struct Bundle {
    pub dir: PathBuf,
    files: BTreeMap<String, String>,
    last_good: Option<PathBuf>,
}

impl Bundle {
    pub fn create(dir: PathBuf) -> std::io::Result<Self> {
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, files: BTreeMap::new(), last_good: None })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        self.last_good = Some(path);
        Ok(())
    }

    fn csv(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>) -> Result<(), Stage> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        Ok(self.write(name, &buf)?)
    }

    fn columns(&mut self, name: &str, headers: &[&str], cols: &[&[f64]]) -> Result<(), Stage> {
        self.csv(name, |buf| {
            let mut w = csv::Writer::from_writer(buf);
            w.write_record(headers)?;
            for i in 0..cols.first().map_or(0, |c| c.len()) {
                w.write_record(cols.iter().map(|c| format!("{:.17e}", c[i])))?;
            }
            w.flush()?;
            Ok(())
        })
    }

    fn last_good(&self) -> String {
        self.last_good.as_ref().map_or("none".into(), |p| p.display().to_string())
    }
}

/// Output root: the config's directory, else `$SOLITON_LAB_OUT`, else `./soliton-lab-out`.
pub fn output_root(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output
        .directory
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT))
}

pub fn bundle_dir(root: &Path, cfg: &ExperimentConfig) -> PathBuf {
    root.join(format!("{}-{}", cfg.experiment.preset, cfg.short_hash()))
}

struct Outcome {
    acceptance: Vec<AcceptanceEntry>,
    data: serde_json::Value,
}

/// Validates `cfg`, runs its preset and writes the bundle under `root`.
pub fn run_experiment(cfg: &ExperimentConfig, root: &Path) -> Result<BundleSummary, CliError> {
    cfg.validate()?;
    let config_hash = cfg.hash();
    let dir = bundle_dir(root, cfg);
    let mut bundle = Bundle::create(dir)?;
    bundle.write("config.toml", cfg.to_toml().as_bytes())?;
    let result = match cfg.experiment.preset {
        Preset::ProfileSweep => profile_sweep(cfg, &mut bundle),
        Preset::CrossCheck => cross_check(cfg, &mut bundle),
        Preset::Orbital => orbital(cfg, &mut bundle),
        Preset::SpectralSweep => spectral_sweep(cfg, &mut bundle),
        Preset::TransonicConstants => transonic(cfg, &mut bundle),
        Preset::Monotonicity => monotonicity(cfg, &mut bundle),
        Preset::Virial => virial(cfg, &mut bundle),
        Preset::Asymptotic => asymptotic(cfg, &mut bundle),
    };
    let outcome = match result {
        Ok(o) => o,
        Err(stage) => {
            let err = CliError::Module {
                module: stage.module,
                config_hash,
                last_good: bundle.last_good(),
                message: stage.message,
            };
            let report = serde_json::json!({ "version": BUNDLE_VERSION, "error": err.to_string() });
            bundle.write("error.json", report.to_string().as_bytes())?;
            return Err(err);
        }
    };
    let summary = BundleSummary {
        version: BUNDLE_VERSION.into(),
        preset: cfg.experiment.preset,
        run_id: format!("{}-{}", cfg.experiment.preset, cfg.short_hash()),
        config_hash,
        model: cfg.model.label(),
        acceptance: outcome.acceptance,
        data: outcome.data,
        files: bundle.files.clone(),
    };
    let text = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Config(e.to_string()))?;
    fs::write(bundle.dir.join("summary.json"), text)?;
    Ok(summary)
}

/// Result of checking a bundle against its summary.
#[derive(Debug, Clone)]
pub struct Verification {
    pub summary: BundleSummary,
    pub mismatched_files: Vec<String>,
    pub hash_matches: bool,
}

impl Verification {
    pub fn intact(&self) -> bool {
        self.mismatched_files.is_empty() && self.hash_matches
    }
}

/// Recomputes artifact digests and the config hash of a bundle.
pub fn verify_bundle(dir: &Path) -> Result<Verification, CliError> {
    let fail = |message: String| CliError::Verify { bundle: dir.to_path_buf(), message };
    let text = fs::read_to_string(dir.join("summary.json")).map_err(|e| fail(format!("summary.json: {e}")))?;
    let summary: BundleSummary = serde_json::from_str(&text).map_err(|e| fail(format!("summary.json: {e}")))?;
    let major = |v: &str| v.split('.').next().map(str::to_string);
    if major(&summary.version) != major(BUNDLE_VERSION) {
        return Err(fail(format!("bundle version {} incompatible with {BUNDLE_VERSION}", summary.version)));
    }
    let mut mismatched_files = Vec::new();
    for (name, digest) in &summary.files {
        match fs::read(dir.join(name)) {
            Ok(bytes) if sha256_hex(&bytes) == *digest => {}
            _ => mismatched_files.push(name.clone()),
        }
    }
    let cfg = ExperimentConfig::load(&dir.join("config.toml"))?;
    let hash_matches = cfg.hash() == summary.config_hash;
    Ok(Verification { summary, mismatched_files, hash_matches })
}

/// Parses `start:stop:step` into the inclusive list of values.
pub fn parse_range(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Config(format!("range `{spec}` is not start:stop:step"));
    let parts: Vec<f64> = spec.split(':').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
    let [start, stop, step] = parts[..] else { return Err(bad()) };
    if !(step > 0.0) || stop < start {
        return Err(bad());
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12).collect())
}

/// Parses `key=start:stop:step`.
pub fn parse_param(spec: &str) -> Result<(String, Vec<f64>), CliError> {
    let (key, range) =
        spec.split_once('=').ok_or_else(|| CliError::Config(format!("`{spec}` is not key=start:stop:step")))?;
    Ok((key.trim().to_string(), parse_range(range)?))
}

/// Expands a sweep into cell configs, validating each before any compute.
pub fn sweep_cells(base: &ExperimentConfig, key: &str, values: &[f64]) -> Result<Vec<ExperimentConfig>, CliError> {
    let cells: Vec<ExperimentConfig> = values.iter().map(|&v| base.with_param(key, v)).collect::<Result<_, _>>()?;
    for c in &cells {
        c.validate()?;
    }
    Ok(cells)
}

/// Runs sweep cells on the worker pool; each cell owns its bundle directory.
pub fn run_sweep(cells: &[ExperimentConfig], root: &Path) -> Vec<Result<BundleSummary, CliError>> {
    cells.par_iter().map(|c| run_experiment(c, root)).collect()
}

fn status_ok(traj: &Trajectory<f64>, track: &ModulationTrack) -> Result<(), String> {
    if traj.status != RunStatus::Ok {
        return Err(format!("run stopped early: {:?}", traj.status));
    }
    match &track.truncated {
        Some(why) => Err(format!("modulation truncated: {why}")),
        None => Ok(()),
    }
}

/// Perturbed run at the configured speed followed by modulation tracking.
fn perturbed_run(
    cfg: &ExperimentConfig,
    model: &PolynomialModel<f64>,
    alpha: f64,
) -> Result<(Grid<f64>, Trajectory<f64>, ModulationTrack), Stage> {
    let c = cfg.wave.c;
    let grid = cfg.grid.for_nu(nu_c(model, c)?)?;
    let wave = build_profile(model, c, &grid)?;
    let initial = cfg.perturbation.profile.apply(&grid, &wave.state(), alpha);
    let rc = cfg.time.run_config(&grid);
    let traj = match cfg.time.formulation {
        Formulation::Hydro => run(&grid, model, &initial, cfg.time.t_final, &rc)?,
        Formulation::Classical => {
            run_classical(&grid, model, &hydro_to_classical(&grid, &initial), 0.0, cfg.time.t_final, &rc)?
        }
    };
    let tr = track(&grid, model, &traj, (0.0, c))?;
    Ok((grid, traj, tr))
}

fn write_run(bundle: &mut Bundle, cfg: &ExperimentConfig, suffix: &str, grid: &Grid<f64>, traj: &Trajectory<f64>, tr: &ModulationTrack) -> Result<(), Stage> {
    bundle.csv(&format!("modulation{suffix}.csv"), |w| tr.write_csv(w))?;
    if cfg.diagnostics.write_trajectory {
        bundle.csv(&format!("trajectory{suffix}.csv"), |w| traj.write_csv(grid, w))?;
    }
    Ok(())
}

fn max_abs(u: &[f64]) -> f64 {
    u.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

fn profile_sweep(cfg: &ExperimentConfig, bundle: &mut Bundle) -> Result<Outcome, Stage> {
    let gp = PolynomialModel::gross_pitaevskii();
    let started = Instant::now();
    let oracle_grid = cfg.grid.for_nu(1.0)?;
    let wave = build_profile(&gp, 1.0, &oracle_grid)?;
    let elapsed = started.elapsed().as_secs_f64();
    let eta_err = wave
        .grid
        .x()
        .iter()
        .zip(&wave.eta)
        .map(|(&x, &e)| (e - 0.5 / (x / 2.0).cosh().powi(2)).abs())
        .fold(0.0, f64::max);
    let v_err = wave.eta.iter().zip(&wave.v).map(|(&e, &v)| (v - e / (2.0 * (1.0 - e))).abs()).fold(0.0, f64::max);
    bundle.csv("profile_gp_c1.csv", |w| wave.write_csv(w))?;
    let oracle_err = eta_err.max(v_err);
    let mut acceptance = vec![AcceptanceEntry::new(
        1,
        "GP exact-soliton oracle",
        oracle_err <= 1e-8 && elapsed < 1.0,
        oracle_err,
        1e-8,
        format!("sup η error {eta_err:.2e}, sup v error {v_err:.2e}, build {elapsed:.3} s"),
    )];

    let cells = cfg.speed_cells();
    let rows: Vec<Result<(String, f64, [f64; 7]), Stage>> = cells
        .par_iter()
        .map(|(spec, c)| {
            let model = spec.build()?;
            let grid = cfg.grid.for_nu(nu_c(&model, *c)?)?;
            let w = build_profile(&model, *c, &grid)?;
            Ok((
                spec.label(),
                *c,
                [w.nu, w.xi, w.ode_residual, w.first_integral_residual, w.decay_rate_fit, w.amplitude_mc, w.momentum()],
            ))
        })
        .collect();
    let rows: Vec<(String, f64, [f64; 7])> = rows.into_iter().collect::<Result<_, _>>()?;
    bundle.csv("profile_sweep.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["model", "c", "nu", "xi", "ode_residual", "first_integral_residual", "decay_rate_fit", "amplitude_mc", "momentum"])?;
        for (label, c, vals) in &rows {
            let mut rec = vec![label.clone(), format!("{c:.17e}")];
            rec.extend(vals.iter().map(|u| format!("{u:.17e}")));
            w.write_record(rec)?;
        }
        w.flush()?;
        Ok(())
    })?;
    let worst_ode = rows.iter().map(|r| r.2[2]).fold(0.0, f64::max);
    let worst_fi = rows.iter().map(|r| r.2[3]).fold(0.0, f64::max);
    let has_gp = cells.iter().any(|(s, _)| s.id == "gp");
    let has_beta = cells.iter().any(|(s, _)| s.id == "beta");
    acceptance.push(AcceptanceEntry::new(
        2,
        "profile residuals across models",
        rows.len() >= 10 && has_gp && has_beta && worst_ode <= 1e-6 && worst_fi <= 1e-8,
        worst_ode,
        1e-6,
        format!("{} cells, worst first-integral residual {worst_fi:.2e} (≤ 1e-8)", rows.len()),
    ));
    let data = serde_json::json!({
        "oracle": { "eta_error": eta_err, "v_error": v_err, "build_seconds": elapsed },
        "cells": rows.iter().map(|(m, c, v)| serde_json::json!({
            "model": m, "c": c, "nu": v[0], "xi": v[1], "ode_residual": v[2], "first_integral_residual": v[3],
        })).collect::<Vec<_>>(),
    });
    Ok(Outcome { acceptance, data })
}

fn cross_check(cfg: &ExperimentConfig, bundle: &mut Bundle) -> Result<Outcome, Stage> {
    let model = cfg.run_model()?;
    let x = &cfg.cross_check;
    let c = cfg.wave.c;
    let grid = cfg.grid.for_nu(nu_c(&model, c)?)?;
    let wave = build_profile(&model, c, &grid)?;
    let rc = cfg.time.run_config(&grid);
    let order_rc = |f: f64| RunConfig::new(rc.dt * f, rc.t_snap);
    let perturbed = cfg.perturbation.profile.apply(&grid, &wave.state(), x.order_amplitude);

    let runs: Vec<Result<Trajectory<f64>, DynamicsError>> = [
        (wave.state(), cfg.time.t_final, rc),
        (perturbed.clone(), x.order_t_final, order_rc(1.0)),
        (perturbed, x.order_t_final, order_rc(0.5)),
    ]
    .into_par_iter()
    .map(|(s, t, r)| run(&grid, &model, &s, t, &r))
    .collect();
    let mut runs = runs.into_iter();
    let mut next = || runs.next().expect("three runs").map_err(Stage::from);
    let (exact, coarse, fine) = (next()?, next()?, next()?);

    let times = exact.times();
    let errors: Vec<f64> =
        exact.snapshots.iter().map(|s| energy_norm(&grid, &residual(&grid, s, c * s.time, &wave))).collect();
    bundle.columns("transport.csv", &["t", "frame_error_xnorm", "energy", "momentum"], &[&times, &errors, &exact.energy_series, &exact.momentum_series])?;
    let transport_err = errors.iter().copied().fold(0.0, f64::max);
    let p_drift = exact.momentum_drift();
    let (d1, d2) = (coarse.energy_drift(), fine.energy_drift());
    let order = (d1 / d2).log2();
    let statuses_ok = [&exact, &coarse, &fine].iter().all(|t| t.status == RunStatus::Ok);
    let mut acceptance = vec![AcceptanceEntry::new(
        3,
        "soliton transport",
        statuses_ok && transport_err <= 1e-6 && p_drift <= 1e-10 && order >= 3.5 && d2 > 1e-13,
        transport_err,
        1e-6,
        format!(
            "momentum drift {p_drift:.2e} (≤ 1e-10), energy drift {d1:.2e} → {d2:.2e} under dt halving, observed order {order:.2} (≥ 3.5)"
        ),
    )];

    let cmp_c = x.compare_c;
    let cmp_grid = Grid::new(x.compare_n, x.compare_length)?;
    let cmp_wave = build_profile(&model, cmp_c, &cmp_grid)?;
    let initial = cfg.perturbation.profile.apply(&cmp_grid, &cmp_wave.state(), cfg.perturbation.amplitude);
    let hydro_rc = RunConfig { c_stab: cfg.time.c_stab, ..RunConfig::stable(&cmp_grid, cfg.time.t_snap, cfg.time.c_stab) };
    let steps = (cfg.time.t_snap / x.classical_dt).ceil();
    let classical_rc = RunConfig::new(cfg.time.t_snap / steps, cfg.time.t_snap);
    let (h, k) = rayon::join(
        || run(&cmp_grid, &model, &initial, x.compare_t_final, &hydro_rc),
        || run_classical(&cmp_grid, &model, &hydro_to_classical(&cmp_grid, &initial), 0.0, x.compare_t_final, &classical_rc),
    );
    let (h, k) = (h?, k?);
    let diffs: Vec<f64> = h.snapshots.iter().zip(&k.snapshots).map(|(a, b)| energy_norm(&cmp_grid, &a.sub(b))).collect();
    let cmp_times = h.times();
    bundle.columns("cross_formulation.csv", &["t", "xnorm_difference"], &[&cmp_times[..diffs.len()], &diffs])?;
    let diff = diffs.iter().copied().fold(0.0, f64::max);
    acceptance.push(AcceptanceEntry::new(
        4,
        "hydrodynamic vs classical evolution",
        h.status == RunStatus::Ok && k.status == RunStatus::Ok && diffs.len() == h.snapshots.len() && diff <= 1e-5,
        diff,
        1e-5,
        format!("c = {cmp_c}, n = {}, T = {}, hydro dt {:.2e}, classical dt {:.2e}", x.compare_n, x.compare_t_final, hydro_rc.dt, classical_rc.dt),
    ));

    let dgrid = Grid::new(x.dispersion_n, x.dispersion_length)?;
    let disp: Vec<(f64, f64, f64)> = x
        .dispersion_modes
        .par_iter()
        .map(|&m| {
            let (w, exact) = dispersion_frequency(&dgrid, &model, m, x.dispersion_amplitude, 20.0, 400);
            (m as f64, w, exact)
        })
        .collect();
    let modes: Vec<f64> = disp.iter().map(|d| d.0).collect();
    let measured: Vec<f64> = disp.iter().map(|d| d.1).collect();
    let exact_w: Vec<f64> = disp.iter().map(|d| d.2).collect();
    let rel: Vec<f64> = disp.iter().map(|d| ((d.1 - d.2) / d.2).abs()).collect();
    bundle.columns("dispersion.csv", &["mode", "measured", "exact", "relative_error"], &[&modes, &measured, &exact_w, &rel])?;
    let worst = rel.iter().copied().fold(0.0, f64::max);
    acceptance.push(AcceptanceEntry::new(
        5,
        "dispersion relation",
        !rel.is_empty() && worst <= 5e-3,
        worst,
        5e-3,
        format!("modes {:?}", x.dispersion_modes),
    ));
    let data = serde_json::json!({
        "transport": { "frame_error": transport_err, "momentum_drift": p_drift, "energy_drift": [d1, d2], "energy_order": order },
        "cross_formulation": { "max_difference": diff },
        "dispersion": disp.iter().map(|d| serde_json::json!({ "mode": d.0, "measured": d.1, "exact": d.2 })).collect::<Vec<_>>(),
    });
    Ok(Outcome { acceptance, data })
}

fn ratio_spread(u: &[f64]) -> f64 {
    let hi = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = u.iter().copied().fold(f64::INFINITY, f64::min);
    hi / lo
}

fn orbital(cfg: &ExperimentConfig, bundle: &mut Bundle) -> Result<Outcome, Stage> {
    let model = cfg.run_model()?;
    let amps = if cfg.perturbation.amplitudes.is_empty() {
        vec![cfg.perturbation.amplitude]
    } else {
        cfg.perturbation.amplitudes.clone()
    };
    let cells: Vec<Result<_, Stage>> = amps.par_iter().map(|&a| perturbed_run(cfg, &model, a)).collect();
    let mut rows = Vec::new();
    let mut problems = Vec::new();
    for (&alpha, cell) in amps.iter().zip(cells) {
        let (grid, traj, tr) = cell?;
        if let Err(why) = status_ok(&traj, &tr) {
            problems.push(format!("α₀ = {alpha}: {why}"));
        }
        write_run(bundle, cfg, &format!("_alpha_{alpha:.2e}"), &grid, &traj, &tr)?;
        let sup = tr.sup_eps();
        rows.push((alpha, sup, tr.max_ortho_residual(), tr.sup_c_dot(), tr.sup_c_dot() / (sup * sup)));
    }
    let linear: Vec<f64> = rows.iter().map(|r| r.1 / r.0).collect();
    let quad: Vec<f64> = rows.iter().map(|r| r.4).collect();
    let spread = ratio_spread(&linear);
    let ortho = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    let quad_spread = ratio_spread(&quad);
    let alphas: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let sups: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let orthos: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let cdots: Vec<f64> = rows.iter().map(|r| r.3).collect();
    bundle.columns("orbital.csv", &["alpha", "sup_eps_xnorm", "max_ortho_residual", "sup_c_dot", "c_dot_over_eps_sq"], &[&alphas, &sups, &orthos, &cdots, &quad])?;
    let pass = problems.is_empty() && rows.len() >= 2 && spread <= 1.2 && ortho <= 1e-9 && quad_spread <= 2.0;
    let acceptance = vec![AcceptanceEntry::new(
        6,
        "orbital-stability scaling",
        pass,
        spread,
        1.2,
        format!(
            "spread of sup‖ε‖/α₀ over {} amplitudes; orthogonality {ortho:.2e} (≤ 1e-9); spread of sup|c'|/sup‖ε‖² {quad_spread:.3} (≤ 2){}",
            rows.len(),
            if problems.is_empty() { String::new() } else { format!("; {}", problems.join("; ")) }
        ),
    )];
    let data = serde_json::json!({
        "cells": rows.iter().map(|r| serde_json::json!({
            "alpha": r.0, "sup_eps": r.1, "max_ortho_residual": r.2, "sup_c_dot": r.3, "c_dot_over_eps_sq": r.4,
        })).collect::<Vec<_>>(),
        "linear_spread": spread,
        "quadratic_spread": quad_spread,
    });
    Ok(Outcome { acceptance, data })
}

struct SpectralRow {
    c: f64,
    nu2: f64,
    eigs: Vec<f64>,
    refined: Vec<f64>,
    negative_count: usize,
    alignment: f64,
    lc: f64,
    refine_delta: f64,
    identity_residual: f64,
    min_q1: f64,
    min_q1_tilde: f64,
    tail_rel: f64,
    gauss_rel: f64,
}

fn spectral_row(cfg: &ExperimentConfig, model: &PolynomialModel<f64>, c: f64) -> Result<SpectralRow, Stage> {
    let s = &cfg.spectral;
    let nu = nu_c(model, c)?;
    let grid = cfg.grid.for_nu(nu)?;
    let wave = build_profile(model, c, &grid)?;
    let rep = spectral_report(model, &wave, s.eigen_count);
    let fine = build_profile(model, c, &Grid::new(s.refine_n, grid.half_length())?)?;
    let refined = lowest_eigenvalues(&assemble_h_c(&fine), s.eigen_count);
    let k = s.compared_eigenvalues.min(rep.eigs.len()).min(refined.len());
    let refine_delta = (0..k).map(|i| (rep.eigs[i] - refined[i]).abs()).fold(0.0, f64::max);

    let qgrid = Grid::new(s.q_n, s.q_length.max(40.0 / nu))?;
    let qwave = build_profile(model, c, &qgrid)?;
    let q = q_coefficients(&qwave)?;
    let identity_residual = max_abs(&q.identity_residual(&qgrid));
    let min_q1 = q.q1_over_eta.iter().copied().fold(f64::INFINITY, f64::min);
    let min_q1_tilde = q.q1_tilde_over_eta.iter().copied().fold(f64::INFINITY, f64::min);
    let tail_rel = match (transonic_constants(model, c), qgrid.x().iter().position(|&x| x >= 30.0 / nu)) {
        (Ok(t), Some(j)) => ((q.q1_over_eta[j] - t.k0) / t.k0).abs().max(((q.q1_tilde_over_eta[j] - t.k1) / t.k1).abs()),
        _ => f64::NAN,
    };
    let gauss_rel = (0..s.gauss_fields)
        .map(|seed| {
            let e = Perturbation::RandomBumps { count: 4, spread: 8.0, seed }.fields(&qgrid);
            let lhs = virial_form_lhs(&qwave, &q, &e);
            let rhs = q.gauss_reduced_form(&qgrid, &e);
            ((lhs - rhs) / rhs).abs()
        })
        .fold(0.0, f64::max);
    Ok(SpectralRow {
        c,
        nu2: rep.nu2,
        eigs: rep.eigs,
        refined,
        negative_count: rep.negative_count,
        alignment: rep.kernel_alignment,
        lc: rep.lc,
        refine_delta,
        identity_residual,
        min_q1,
        min_q1_tilde,
        tail_rel,
        gauss_rel,
    })
}

fn spectral_sweep(cfg: &ExperimentConfig, bundle: &mut Bundle) -> Result<Outcome, Stage> {
    let model = cfg.run_model()?;
    let speeds: Vec<f64> = cfg.speed_cells().into_iter().map(|(_, c)| c).collect();
    let rows: Vec<Result<SpectralRow, Stage>> = speeds.par_iter().map(|&c| spectral_row(cfg, &model, c)).collect();
    let rows: Vec<SpectralRow> = rows.into_iter().collect::<Result<_, _>>()?;
    bundle.csv("spectrum.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["c", "index", "eigenvalue", "refined_eigenvalue"])?;
        for r in &rows {
            for (i, l) in r.eigs.iter().enumerate() {
                let refined = r.refined.get(i).copied().unwrap_or(f64::NAN);
                w.write_record([format!("{:.17e}", r.c), i.to_string(), format!("{l:.17e}"), format!("{refined:.17e}")])?;
            }
        }
        w.flush()?;
        Ok(())
    })?;
    let col = |f: fn(&SpectralRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    bundle.columns(
        "spectral_summary.csv",
        &["c", "nu2", "negative_count", "kernel_alignment", "lc", "refine_delta", "identity_residual", "min_q1_over_eta", "min_q1_tilde_over_eta", "tail_relative_error", "gauss_relative_error"],
        &[
            &col(|r| r.c),
            &col(|r| r.nu2),
            &col(|r| r.negative_count as f64),
            &col(|r| r.alignment),
            &col(|r| r.lc),
            &col(|r| r.refine_delta),
            &col(|r| r.identity_residual),
            &col(|r| r.min_q1),
            &col(|r| r.min_q1_tilde),
            &col(|r| r.tail_rel),
            &col(|r| r.gauss_rel),
        ],
    )?;
    let min_align = rows.iter().map(|r| r.alignment).fold(f64::INFINITY, f64::min);
    let min_lc = rows.iter().map(|r| r.lc).fold(f64::INFINITY, f64::min);
    let worst_refine = rows.iter().map(|r| r.refine_delta).fold(0.0, f64::max);
    let counts: Vec<usize> = rows.iter().map(|r| r.negative_count).collect();
    let spectral_pass =
        rows.len() >= 5 && counts.iter().all(|&k| k == 1) && min_align >= 0.999 && min_lc > 0.0 && worst_refine <= 1e-4;
    let mut acceptance = vec![AcceptanceEntry::new(
        7,
        "spectral structure of H_c",
        spectral_pass,
        worst_refine,
        1e-4,
        format!(
            "{} speeds, negative counts {counts:?}, min kernel alignment {min_align:.9}, min l_c {min_lc:.4e}",
            rows.len()
        ),
    )];
    let id_res = rows.iter().map(|r| r.identity_residual).fold(0.0, f64::max);
    let min_q = rows.iter().map(|r| r.min_q1.min(r.min_q1_tilde)).fold(f64::INFINITY, f64::min);
    let tail = rows.iter().map(|r| r.tail_rel).fold(0.0, |a: f64, b| if b.is_nan() { f64::NAN } else { a.max(b) });
    let gauss = rows.iter().map(|r| r.gauss_rel).fold(0.0, f64::max);
    acceptance.push(AcceptanceEntry::new(
        9,
        "coefficient identities",
        !rows.is_empty() && id_res <= 1e-6 && min_q > 0.0 && tail <= 0.01 && gauss <= 1e-6,
        id_res,
        1e-6,
        format!(
            "min q₁/η, q̃₁/η {min_q:.4e} (> 0); tail error vs k₀, k₁ {tail:.2e} (≤ 1e-2); Gauss-form error {gauss:.2e} over {} fields (≤ 1e-6)",
            cfg.spectral.gauss_fields
        ),
    ));
    let data = serde_json::json!({
        "speeds": rows.iter().map(|r| serde_json::json!({
            "c": r.c, "nu2": r.nu2, "eigenvalues": r.eigs, "refined": r.refined, "negative_count": r.negative_count,
            "kernel_alignment": r.alignment, "lc": r.lc,
        })).collect::<Vec<_>>(),
    });
    Ok(Outcome { acceptance, data })
}

fn transonic(cfg: &ExperimentConfig, bundle: &mut Bundle) -> Result<Outcome, Stage> {
    let model = cfg.run_model()?;
    let s = &cfg.spectral;
    let cs = sound_speed(&model)?;
    let speeds: Vec<f64> = cfg.speed_cells().into_iter().map(|(_, c)| c).collect();
    let limit_grid = Grid::new(s.limit_n, s.limit_length)?;
    let mut rows = Vec::new();
    for &c in &speeds {
        let t = transonic_constants(&model, c)?;
        let bottom = lowest_eigenvalues(&assemble_t_limit(&t, &limit_grid), 1)[0];
        rows.push((t, bottom));
    }
    let col = |f: &dyn Fn(&(crate::operators::TransonicConstants, f64)) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    bundle.columns(
        "transonic_constants.csv",
        &["c", "nu2", "k0", "k1", "k2", "k3", "tau_c", "tau_over_nu2", "t_limit_bottom", "determinant_defect"],
        &[
            &col(&|r| r.0.c),
            &col(&|r| r.0.nu2),
            &col(&|r| r.0.k0),
            &col(&|r| r.0.k1),
            &col(&|r| r.0.k2),
            &col(&|r| r.0.k3),
            &col(&|r| r.0.tau_c),
            &col(&|r| r.0.tau_c / r.0.nu2),
            &col(&|r| r.1),
            &col(&|r| r.0.determinant_defect()),
        ],
    )?;
    let defect = rows.iter().map(|r| r.0.determinant_defect().abs()).fold(0.0, f64::max);
    let bottom_err = rows.iter().map(|r| (r.1 - r.0.tau_c).abs()).fold(0.0, f64::max);
    let min_tau = rows.iter().map(|r| r.0.tau_c).fold(f64::INFINITY, f64::min);
    let ratios: Vec<f64> = s
        .convergence_nu2
        .iter()
        .map(|&nu2| transonic_constants(&model, (cs * cs - nu2).sqrt()).map(|t| t.tau_c / t.nu2))
        .collect::<Result<_, _>>()?;
    let successive = ratios.windows(2).map(|w| (w[1] / w[0] - 1.0).abs()).fold(0.0, f64::max);
    let limit = rows.first().map_or(f64::NAN, |r| r.0.tau_ratio_limit());
    let oracle = if model.name() == "gp" {
        let t = transonic_constants(&model, 1.4)?;
        Some((t.tau_c - GP_TAU_AT_1_4).abs())
    } else {
        None
    };
    let pass = !rows.is_empty()
        && min_tau > 0.0
        && defect <= 1e-12
        && bottom_err <= 1e-3
        && ratios.len() >= 2
        && successive <= 0.1
        && oracle.is_none_or(|e| e <= 1e-4);
    let acceptance = vec![AcceptanceEntry::new(
        8,
        "transonic constants",
        pass,
        defect,
        1e-12,
        format!(
            "{} speeds, min τ_c {min_tau:.4e}; |bottom(T∞) - τ_c| {bottom_err:.2e} (≤ 1e-3); τ/ν² ratios {ratios:?}, successive change {successive:.3} (≤ 0.1); GP τ_c(1.4) error {}",
            rows.len(),
            oracle.map_or("n/a".into(), |e| format!("{e:.2e} (≤ 1e-4)"))
        ),
    )];
    let data = serde_json::json!({
        "table": rows.iter().map(|(t, b)| serde_json::json!({
            "c": t.c, "nu2": t.nu2, "k0": t.k0, "k1": t.k1, "k2": t.k2, "k3": t.k3, "tau_c": t.tau_c,
            "tau_over_nu2": t.tau_c / t.nu2, "t_limit_bottom": b,
        })).collect::<Vec<_>>(),
        "convergence_nu2": s.convergence_nu2,
        "tau_over_nu2": ratios,
        "tau_over_nu2_limit": limit,
    });
    Ok(Outcome { acceptance, data })
}

fn monotonicity(cfg: &ExperimentConfig, bundle: &mut Bundle) -> Result<Outcome, Stage> {
    let model = cfg.run_model()?;
    let d = &cfg.diagnostics;
    let nu = nu_c(&model, cfg.wave.c)?;
    let sigma = d.sigma.unwrap_or(-nu * nu / 4.0);
    let tau = d.tau.unwrap_or(default_tau(nu));
    let (grid, traj, tr) = perturbed_run(cfg, &model, cfg.perturbation.amplitude)?;
    write_run(bundle, cfg, "", &grid, &traj, &tr)?;
    let rep = monotonicity_report(&grid, &model, &traj, &tr, d.r, sigma, tau)?;
    bundle.columns(
        "monotonicity.csv",
        &["t", "p_r", "rate_analytic", "rate_fd", "lower_bound", "tail_allowance"],
        &[&rep.times, &rep.p_r, &rep.rate_analytic, &rep.rate_fd, &rep.lower_bound, &rep.tail_allowance],
    )?;
    let r_far = d.r_far.unwrap_or(grid.half_length() / 2.0);
    let mut limit_err: f64 = 0.0;
    for (s, &a) in traj.snapshots.iter().zip(&tr.a) {
        let p = momentum(&grid, s);
        let left = localized_momentum(&grid, s, a, -r_far, tau);
        let right = localized_momentum(&grid, s, a, r_far, tau);
        limit_err = limit_err.max(((left - p) / p).abs()).max((right / p).abs());
    }
    let status = status_ok(&traj, &tr);
    let acceptance = vec![AcceptanceEntry::new(
        10,
        "monotonicity of localized momentum",
        status.is_ok() && rep.rate_mismatch <= 1e-3 && rep.verdict >= 0.99 && limit_err <= 1e-3,
        rep.rate_mismatch,
        1e-3,
        format!(
            "R = {}, σ = {sigma:.4e}, τ = {tau:.4e}; κ̂ = {:.4e}, verdict {:.4} (≥ 0.99); R → ∓{r_far} limit error {limit_err:.2e} (≤ 1e-3){}",
            d.r,
            rep.kappa_hat,
            rep.verdict,
            status.err().map_or(String::new(), |e| format!("; {e}"))
        ),
    )];
    let data = serde_json::json!({
        "r": d.r, "sigma": sigma, "tau": tau, "kappa_hat": rep.kappa_hat, "kappa": rep.kappa,
        "tail_constant": rep.tail_constant, "verdict": rep.verdict, "rate_mismatch": rep.rate_mismatch,
        "limit_error": limit_err, "r_far": r_far,
        "calibration": "kappa_hat is the infimum over snapshots of (rate + tail allowance)/weight; kappa = kappa_hat/2; the tail constant is fitted on the unperturbed wave in its own frame",
    });
    Ok(Outcome { acceptance, data })
}

fn virial(cfg: &ExperimentConfig, bundle: &mut Bundle) -> Result<Outcome, Stage> {
    let model = cfg.run_model()?;
    let d = &cfg.diagnostics;
    let (grid, traj, tr) = perturbed_run(cfg, &model, cfg.perturbation.amplitude)?;
    write_run(bundle, cfg, "", &grid, &traj, &tr)?;
    let series: Vec<Result<_, ProfileError>> = d.gamma_scan.par_iter().map(|&g| virial_series(&grid, &model, &tr, g)).collect();
    let series: Vec<_> = series.into_iter().collect::<Result<_, _>>()?;
    let mins: Vec<f64> = series.iter().map(|s| s.min_ratio_after(d.transient)).collect();
    bundle.columns("virial_scan.csv", &["gamma", "min_ratio"], &[&d.gamma_scan, &mins])?;
    let chosen = select_gamma(&series, d.transient);
    let status = status_ok(&traj, &tr);
    let (acceptance, data) = match chosen.and_then(|g| series.iter().find(|s| s.gamma == g)) {
        Some(s) => {
            bundle.columns(
                "virial.csv",
                &["t", "n", "n_rate", "e_tilde_xnorm", "ratio", "n_bound"],
                &[&s.times, &s.n, &s.n_rate, &s.e_tilde_xnorm, &s.ratio, &s.n_bound],
            )?;
            let min_ratio = s.min_ratio_after(d.transient);
            let integral = s.e_tilde_integral();
            let sup_n = s.sup_abs_n();
            let dominated = integral.is_finite() && integral <= 2.0 * sup_n / min_ratio;
            let bounded = s.n.iter().zip(&s.n_bound).all(|(n, b)| n.abs() <= *b);
            let entry = AcceptanceEntry::new(
                11,
                "virial positivity",
                status.is_ok() && min_ratio > 0.0 && dominated && bounded,
                min_ratio,
                0.0,
                format!(
                    "γ = {}; ∫‖ẽ‖² = {integral:.4e} ≤ 2 sup|n|/min ratio = {:.4e}: {dominated}; |n| ≤ bound: {bounded}{}",
                    s.gamma,
                    2.0 * sup_n / min_ratio,
                    status.err().map_or(String::new(), |e| format!("; {e}"))
                ),
            );
            let data = serde_json::json!({
                "gamma": s.gamma, "min_ratio": min_ratio, "e_tilde_integral": integral, "sup_abs_n": sup_n,
                "scan": d.gamma_scan.iter().zip(&mins).map(|(g, m)| serde_json::json!({ "gamma": g, "min_ratio": m })).collect::<Vec<_>>(),
            });
            (vec![entry], data)
        }
        None => {
            let best = mins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let entry = AcceptanceEntry::new(
                11,
                "virial positivity",
                false,
                best,
                0.0,
                format!("no γ in {:?} gives a positive ratio", d.gamma_scan),
            );
            (vec![entry], serde_json::json!({ "scan": mins }))
        }
    };
    Ok(Outcome { acceptance, data })
}

fn asymptotic(cfg: &ExperimentConfig, bundle: &mut Bundle) -> Result<Outcome, Stage> {
    let model = cfg.run_model()?;
    let d = &cfg.diagnostics;
    let (grid, traj, tr) = perturbed_run(cfg, &model, cfg.perturbation.amplitude)?;
    write_run(bundle, cfg, "", &grid, &traj, &tr)?;
    let rep = asymptotic_report(&grid, &tr, d.window, d.transient, d.mollifier);
    bundle.columns("asymptotic.csv", &["t", "local_xnorm", "theta_rate"], &[&rep.times, &rep.local_norm, &rep.theta_rate])?;
    let decay: Vec<serde_json::Value> = d
        .rho
        .iter()
        .map(|&rho| serde_json::json!({ "rho": rho, "sup_window": weighted_decay_report(&grid, &traj, &tr, rho).sup }))
        .collect();
    let smoothing = smoothing_report(&grid, &traj, &tr, 1, 1.0).map(|w| w.sup);
    let tv_ratio = rep.c_variation_last_quarter / rep.c_variation_total;
    let status = status_ok(&traj, &tr);
    let acceptance = vec![AcceptanceEntry::new(
        12,
        "asymptotic-stability signature",
        status.is_ok() && rep.decay_fraction >= 0.5 && tv_ratio <= 0.1 && rep.theta_rate_tail <= 1e-3,
        rep.decay_fraction,
        0.5,
        format!(
            "local norm on |x| ≤ {} from {:.4e} to {:.4e}; c variation last quarter / total {tv_ratio:.4} (≤ 0.1); late sup|θ'| {:.2e} (≤ 1e-3){}",
            d.window,
            rep.peak,
            rep.final_local,
            rep.theta_rate_tail,
            status.err().map_or(String::new(), |e| format!("; {e}"))
        ),
    )];
    let data = serde_json::json!({
        "peak": rep.peak, "final": rep.final_local, "decay_fraction": rep.decay_fraction,
        "c_variation_total": rep.c_variation_total, "c_variation_last_quarter": rep.c_variation_last_quarter,
        "theta_rate_tail": rep.theta_rate_tail, "weighted_decay": decay, "smoothing_sup": smoothing,
    });
    Ok(Outcome { acceptance, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
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
t_final = 1.0
t_snap = 0.25
c_stab = 1.0
formulation = "hydro"

[perturbation]
amplitude = 0.01
shape = "gaussian"
center = 0.0
width = 3.0
eta_weight = 1.0
v_weight = 1.0
"#;

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash(), again.hash());
        assert_eq!(cfg.diagnostics, DiagnosticsSection::default());
    }

    #[test]
    fn hash_ignores_output_location_only() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let mut moved = cfg.clone();
        moved.output.directory = Some("/elsewhere".into());
        assert_eq!(cfg.hash(), moved.hash());
        let faster = cfg.with_param("c", 1.25).unwrap();
        assert_ne!(cfg.hash(), faster.hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn supersonic_speed_is_rejected() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap().with_param("c", 1.5).unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("c_s"), "{err}");
        assert!(ExperimentConfig::from_toml(MINIMAL).unwrap().with_param("c", 2f64.sqrt()).unwrap().validate().is_err());
    }

    #[test]
    fn unknown_fields_and_models_are_rejected() {
        assert!(ExperimentConfig::from_toml(&MINIMAL.replace("c = 1.2", "c = 1.2\nspeed = 3")).is_err());
        let cfg = ExperimentConfig::from_toml(&MINIMAL.replace("id = \"gp\"", "id = \"cubic-quintic\"")).unwrap();
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }

    #[test]
    fn unstable_fixed_step_is_rejected() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap().with_param("time.dt", 0.1).unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("stability"));
    }

    #[test]
    fn model_specs() {
        let beta = ModelSpec { id: "beta".into(), params: [("beta".to_string(), 0.5)].into() };
        assert_eq!(beta.build().unwrap().coeffs(), &[1.0, 0.5]);
        let poly = ModelSpec { id: "polynomial".into(), params: [("a1".to_string(), 1.0), ("a2".to_string(), 0.2)].into() };
        assert_eq!(poly.build().unwrap().coeffs(), &[1.0, 0.2]);
        let gap = ModelSpec { id: "polynomial".into(), params: [("a1".to_string(), 1.0), ("a3".to_string(), 0.2)].into() };
        assert!(gap.build().is_err());
        assert_eq!(beta.label(), "beta(beta=0.5)");
    }

    #[test]
    fn ranges_are_inclusive() {
        let v = parse_range("1.30:1.41:0.01").unwrap();
        assert_eq!(v.len(), 12);
        assert_eq!(v[0], 1.3);
        assert_eq!(v[11], 1.41);
        let (k, v) = parse_param("alpha=0.0025:0.01:0.0025").unwrap();
        assert_eq!((k.as_str(), v.len()), ("alpha", 4));
        assert!(parse_param("c=1:0:0.1").is_err());
        assert!(parse_param("c1.0:2.0:0.1").is_err());
    }

    #[test]
    fn with_param_edits_dotted_paths() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.with_param("n", 1024.0).unwrap().grid.n, 1024);
        assert_eq!(cfg.with_param("diagnostics.r", 5.0).unwrap().diagnostics.r, 5.0);
        assert!(cfg.with_param("n", 1000.5).is_err());
        assert!(cfg.with_param("grid.width", 1.0).is_err());
    }

    #[test]
    fn classical_step_divides_snapshot_interval() {
        let mut t = TimeSection { formulation: Formulation::Classical, t_snap: 0.5, ..TimeSection::default() };
        let g = Grid::new(512, 60.0).unwrap();
        let rc = t.run_config(&g);
        assert!((0.5 / rc.dt - (0.5 / rc.dt).round()).abs() < 1e-9 && rc.dt <= DEFAULT_CLASSICAL_DT);
        t.formulation = Formulation::Hydro;
        assert!(t.run_config(&g).dt <= 1.0 / g.k_max().powi(2));
    }

    #[test]
    fn acceptance_entries_fail_on_non_finite_values() {
        let e = AcceptanceEntry::new(1, "x", true, f64::NAN, 1.0, String::new());
        assert!(!e.pass && e.value.is_none());
        assert!(e.line().starts_with("FAIL"));
    }
}
