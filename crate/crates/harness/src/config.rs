//! Experiment configuration: JSON in, validated [`Settings`] out.
//!
//! Every field is optional; missing ones take per-experiment defaults. Unknown
//! keys are rejected. Validation runs before any compute and reports the
//! offending key as `path:line:col: message`.

use std::fmt;
use std::path::{Path, PathBuf};

use cbl_core::base_flow::DEFAULT_DELTA0;
use cbl_core::linear::{resolution_floor, CFL_LIMIT};
use cbl_core::nonlinear::NONLINEAR_CFL_LIMIT;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    VerifyJk,
    VerifyKernels,
    VerifyGreens,
    LinearDecay,
    EnergyAudit,
    NonlinearRun,
    ThresholdSweep,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        Self::VerifyJk,
        Self::VerifyKernels,
        Self::VerifyGreens,
        Self::LinearDecay,
        Self::EnergyAudit,
        Self::NonlinearRun,
        Self::ThresholdSweep,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::VerifyJk => "verify-jk",
            Self::VerifyKernels => "verify-kernels",
            Self::VerifyGreens => "verify-greens",
            Self::LinearDecay => "linear-decay",
            Self::EnergyAudit => "energy-audit",
            Self::NonlinearRun => "nonlinear-run",
            Self::ThresholdSweep => "threshold-sweep",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Tolerance overrides as written in the config file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceOverrides {
    pub greens: Option<f64>,
    pub jk_norm_ratio: Option<f64>,
    pub jk_norm_growth: Option<f64>,
    pub jk_commutator_ratio: Option<f64>,
    pub jk_adjoint_defect: Option<f64>,
    pub jk_defect_reduction: Option<f64>,
    pub kernel_slope: Option<f64>,
    pub remainder_slack: Option<f64>,
    pub decay_nu_slope: Option<f64>,
    pub decay_k_slope: Option<f64>,
    pub energy_slack: Option<f64>,
    pub c0: Option<f64>,
    pub heat_oracle: Option<f64>,
    pub deviation_slope: Option<f64>,
    pub rate_fraction: Option<f64>,
}

/// The config file as parsed.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<ExperimentKind>,
    pub n_y: Option<usize>,
    pub k_max: Option<usize>,
    pub k: Option<Vec<i64>>,
    pub mu: Option<Vec<f64>>,
    pub nu: Option<Vec<f64>>,
    pub amplitudes: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub defect_grids: Option<Vec<usize>>,
    pub k_ref: Option<i64>,
    pub nu_ref: Option<f64>,
    pub eps: Option<[f64; 2]>,
    pub m: Option<f64>,
    pub cfl: Option<f64>,
    pub dt_scale: Option<f64>,
    pub horizon: Option<f64>,
    pub sample_every: Option<usize>,
    pub consistency: Option<bool>,
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub tolerances: ToleranceOverrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    pub greens: f64,
    pub jk_norm_ratio: f64,
    pub jk_norm_growth: f64,
    pub jk_commutator_ratio: f64,
    pub jk_adjoint_defect: f64,
    pub jk_defect_reduction: f64,
    pub kernel_slope: f64,
    pub remainder_slack: f64,
    pub decay_nu_slope: f64,
    pub decay_k_slope: f64,
    pub energy_slack: f64,
    pub c0: f64,
    pub heat_oracle: f64,
    pub deviation_slope: f64,
    pub rate_fraction: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            greens: 1e-6,
            jk_norm_ratio: 3.0,
            jk_norm_growth: 1.5,
            jk_commutator_ratio: 4.0,
            jk_adjoint_defect: 1e-6,
            jk_defect_reduction: 0.5,
            kernel_slope: 0.15,
            remainder_slack: cbl_core::kernels::REMAINDER_SLACK,
            decay_nu_slope: 0.05,
            decay_k_slope: 0.08,
            energy_slack: 1e-10,
            c0: cbl_core::energy::DEFAULT_C0,
            heat_oracle: 1e-8,
            deviation_slope: 0.2,
            rate_fraction: 0.5,
        }
    }
}

/// Fully resolved settings. Serialized (minus the output directory) to form
/// the config hash.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub kind: ExperimentKind,
    pub n_y: usize,
    pub k_max: usize,
    pub k: Vec<i64>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub seed: u64,
    pub samples: usize,
    pub defect_grids: Vec<usize>,
    pub k_ref: i64,
    pub nu_ref: f64,
    pub eps: [f64; 2],
    pub m: f64,
    pub cfl: f64,
    pub dt_scale: f64,
    pub horizon: f64,
    pub sample_every: usize,
    pub consistency: bool,
    pub tolerances: Tolerances,
    #[serde(skip)]
    pub out_dir: Option<PathBuf>,
}

pub const DEFAULT_SEED: u64 = 2024;

impl Settings {
    /// Defaults for `kind` with nothing overridden.
    pub fn defaults(kind: ExperimentKind) -> Self {
        use ExperimentKind::*;
        let base = Settings {
            kind,
            n_y: 128,
            k_max: 8,
            k: vec![1],
            mu: vec![1e-3],
            nu: vec![1e-3],
            amplitudes: vec![],
            seed: DEFAULT_SEED,
            samples: 0,
            defect_grids: vec![],
            k_ref: 1,
            nu_ref: 1e-4,
            eps: [0.01, 0.01],
            m: 1.0,
            cfl: 0.2,
            dt_scale: 0.05,
            horizon: 0.0,
            sample_every: 5,
            consistency: false,
            tolerances: Tolerances::default(),
            out_dir: None,
        };
        match kind {
            VerifyGreens => Settings {
                k: vec![1, 4, 16],
                samples: 100,
                ..base
            },
            VerifyJk => Settings {
                n_y: 256,
                k: (1..=32).collect(),
                defect_grids: vec![64, 128, 256],
                ..base
            },
            VerifyKernels => Settings {
                k: vec![2, 4, 8, 16, 32, 64],
                samples: 10_000,
                ..base
            },
            LinearDecay => Settings {
                n_y: 192,
                k: vec![1, 2, 4, 8],
                nu: vec![1e-2, 1e-3, 1e-4, 1e-5],
                mu: vec![],
                horizon: 12.0,
                sample_every: 10,
                ..base
            },
            EnergyAudit => Settings {
                k: vec![1, 2, 4, 8],
                mu: vec![1e-2, 1e-3],
                nu: vec![1e-2, 1e-3],
                samples: 500,
                horizon: 4.0,
                ..base
            },
            NonlinearRun => Settings {
                n_y: 64,
                consistency: true,
                horizon: 2.0,
                ..base
            },
            ThresholdSweep => Settings {
                n_y: 64,
                mu: vec![1e-4, 3e-4, 1e-3, 3e-3, 1e-2],
                nu: vec![],
                amplitudes: vec![0.25, 0.5, 1.0, 2.0, 4.0, 8.0],
                horizon: 2.0,
                ..base
            },
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("settings serialize");
        hex(&Sha256::digest(json.as_bytes()))
    }

    /// `ν` values for threshold sweeps, which tie `ν = μ`.
    pub fn sweep_pairs(&self) -> Vec<(f64, f64)> {
        self.mu.iter().map(|&m| (m, m)).collect()
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// A config error anchored to a position in the source file.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: PathBuf,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}: {}", self.path.display(), self.line, self.column, self.message)
    }
}

impl std::error::Error for ConfigError {}

/// Reads, parses and validates a config file for `kind`.
pub fn load(path: &Path, kind: ExperimentKind) -> Result<Settings, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        path: path.to_path_buf(),
        line: 0,
        column: 0,
        message: format!("cannot read config: {e}"),
    })?;
    parse(&text, path, kind)
}

pub fn parse(text: &str, path: &Path, kind: ExperimentKind) -> Result<Settings, ConfigError> {
    let raw: ExperimentConfig = serde_json::from_str(text).map_err(|e| ConfigError {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let src = Source { text, path };
    resolve(raw, kind, &src)
}

struct Source<'a> {
    text: &'a str,
    path: &'a Path,
}

impl Source<'_> {
    /// Error anchored at the first occurrence of `"key"`, or at 1:1 when the
    /// value came from a default.
    fn err(&self, key: &str, message: impl Into<String>) -> ConfigError {
        let needle = format!("\"{key}\"");
        let (line, column) = match self.text.find(&needle) {
            Some(off) => {
                let before = &self.text[..off];
                let line = before.matches('\n').count() + 1;
                let col = before.len() - before.rfind('\n').map_or(0, |p| p + 1) + 1;
                (line, col)
            }
            None => (1, 1),
        };
        ConfigError {
            path: self.path.to_path_buf(),
            line,
            column,
            message: message.into(),
        }
    }
}

fn resolve(raw: ExperimentConfig, kind: ExperimentKind, src: &Source<'_>) -> Result<Settings, ConfigError> {
    use ExperimentKind::*;
    if let Some(k) = raw.experiment {
        if k != kind {
            return Err(src.err("experiment", format!("config is for {k}, but {kind} was requested")));
        }
    }
    let d = Settings::defaults(kind);
    let t = raw.tolerances;
    let dt = d.tolerances;
    let tolerances = Tolerances {
        greens: t.greens.unwrap_or(dt.greens),
        jk_norm_ratio: t.jk_norm_ratio.unwrap_or(dt.jk_norm_ratio),
        jk_norm_growth: t.jk_norm_growth.unwrap_or(dt.jk_norm_growth),
        jk_commutator_ratio: t.jk_commutator_ratio.unwrap_or(dt.jk_commutator_ratio),
        jk_adjoint_defect: t.jk_adjoint_defect.unwrap_or(dt.jk_adjoint_defect),
        jk_defect_reduction: t.jk_defect_reduction.unwrap_or(dt.jk_defect_reduction),
        kernel_slope: t.kernel_slope.unwrap_or(dt.kernel_slope),
        remainder_slack: t.remainder_slack.unwrap_or(dt.remainder_slack),
        decay_nu_slope: t.decay_nu_slope.unwrap_or(dt.decay_nu_slope),
        decay_k_slope: t.decay_k_slope.unwrap_or(dt.decay_k_slope),
        energy_slack: t.energy_slack.unwrap_or(dt.energy_slack),
        c0: t.c0.unwrap_or(dt.c0),
        heat_oracle: t.heat_oracle.unwrap_or(dt.heat_oracle),
        deviation_slope: t.deviation_slope.unwrap_or(dt.deviation_slope),
        rate_fraction: t.rate_fraction.unwrap_or(dt.rate_fraction),
    };
    let k_given = raw.k.is_some();
    let mut s = Settings {
        kind,
        n_y: raw.n_y.unwrap_or(d.n_y),
        k_max: raw.k_max.unwrap_or(d.k_max),
        k: raw.k.unwrap_or(d.k),
        mu: raw.mu.unwrap_or(d.mu),
        nu: raw.nu.unwrap_or(d.nu),
        amplitudes: raw.amplitudes.unwrap_or(d.amplitudes),
        seed: raw.seed.unwrap_or(d.seed),
        samples: raw.samples.unwrap_or(d.samples),
        defect_grids: raw.defect_grids.unwrap_or(d.defect_grids),
        k_ref: raw.k_ref.unwrap_or(d.k_ref),
        nu_ref: raw.nu_ref.unwrap_or(d.nu_ref),
        eps: raw.eps.unwrap_or(d.eps),
        m: raw.m.unwrap_or(d.m),
        cfl: raw.cfl.unwrap_or(d.cfl),
        dt_scale: raw.dt_scale.unwrap_or(d.dt_scale),
        horizon: raw.horizon.unwrap_or(d.horizon),
        sample_every: raw.sample_every.unwrap_or(d.sample_every),
        consistency: raw.consistency.unwrap_or(d.consistency),
        tolerances,
        out_dir: raw.out_dir,
    };
    if kind == LinearDecay && raw.k_ref.is_none() && k_given {
        s.k_ref = s.k.iter().copied().min().unwrap_or(1);
    }
    validate(&s, src)?;
    Ok(s)
}

fn positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

fn validate(s: &Settings, src: &Source<'_>) -> Result<(), ConfigError> {
    use ExperimentKind::*;
    if !s.n_y.is_multiple_of(2) || s.n_y < 8 {
        return Err(src.err("n_y", format!("n_y = {} must be even and at least 8", s.n_y)));
    }
    if s.n_y > 1024 {
        return Err(src.err("n_y", format!("n_y = {} exceeds the supported maximum 1024", s.n_y)));
    }
    if s.k.is_empty() {
        return Err(src.err("k", "wavenumber list is empty"));
    }
    if let Some(k) = s.k.iter().find(|&&k| k < 1) {
        return Err(src.err("k", format!("wavenumber {k} must be a positive integer")));
    }
    if let Some(v) = s.mu.iter().chain(&s.nu).find(|v| !positive(**v)) {
        let key = if s.mu.contains(v) { "mu" } else { "nu" };
        return Err(src.err(key, format!("diffusivity {v} must be positive and finite")));
    }
    if let Some(v) = s.amplitudes.iter().find(|v| !positive(**v)) {
        return Err(src.err("amplitudes", format!("amplitude multiplier {v} must be positive")));
    }
    if !positive(s.nu_ref) {
        return Err(src.err("nu_ref", "nu_ref must be positive"));
    }
    if s.k_ref < 1 {
        return Err(src.err("k_ref", "k_ref must be a positive integer"));
    }
    if !(s.eps[0] > 0.0 && s.eps[1] > 0.0) {
        return Err(src.err("eps", "eps entries must be positive"));
    }
    if !(s.m >= 0.0 && s.m.is_finite()) {
        return Err(src.err("m", "m must be nonnegative"));
    }
    if s.sample_every == 0 {
        return Err(src.err("sample_every", "sample_every must be at least 1"));
    }
    let t = &s.tolerances;
    for (name, v) in [
        ("greens", t.greens),
        ("jk_norm_ratio", t.jk_norm_ratio),
        ("jk_norm_growth", t.jk_norm_growth),
        ("jk_commutator_ratio", t.jk_commutator_ratio),
        ("jk_adjoint_defect", t.jk_adjoint_defect),
        ("jk_defect_reduction", t.jk_defect_reduction),
        ("kernel_slope", t.kernel_slope),
        ("remainder_slack", t.remainder_slack),
        ("decay_nu_slope", t.decay_nu_slope),
        ("decay_k_slope", t.decay_k_slope),
        ("energy_slack", t.energy_slack),
        ("c0", t.c0),
        ("heat_oracle", t.heat_oracle),
        ("deviation_slope", t.deviation_slope),
        ("rate_fraction", t.rate_fraction),
    ] {
        if !positive(v) {
            return Err(src.err(name, format!("tolerance {name} = {v} must be positive")));
        }
    }
    // Linear steps use dt = dt_scale/|k| against a base flow with
    // max|U| ≤ 1 + δ₀.
    let linear_cfl = |s: &Settings| -> Result<(), ConfigError> {
        let measured = s.dt_scale * (1.0 + DEFAULT_DELTA0);
        if !positive(s.dt_scale) || measured > CFL_LIMIT {
            return Err(src.err(
                "dt_scale",
                format!("dt_scale = {} gives CFL number {measured:.4} > {CFL_LIMIT}", s.dt_scale),
            ));
        }
        Ok(())
    };
    let guard = |key: &str, diffusivity: f64| -> Result<(), ConfigError> {
        let required = resolution_floor(diffusivity);
        if s.n_y < required {
            return Err(src.err(
                key,
                format!(
                    "resolution guard: n_y = {} is below the required {required} for diffusivity {diffusivity:e}",
                    s.n_y
                ),
            ));
        }
        Ok(())
    };
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    match s.kind {
        VerifyGreens => {
            if s.samples == 0 {
                return Err(src.err("samples", "samples must be at least 1"));
            }
        }
        VerifyJk => {
            if s.defect_grids.len() < 2 {
                return Err(src.err("defect_grids", "need at least two grids for the defect sequence"));
            }
            if let Some(n) = s.defect_grids.iter().find(|&&n| n % 2 != 0 || !(8..=1024).contains(&n)) {
                return Err(src.err("defect_grids", format!("grid size {n} must be even and in 8..=1024")));
            }
            if s.defect_grids.windows(2).any(|w| w[1] <= w[0]) {
                return Err(src.err("defect_grids", "grid sizes must increase"));
            }
        }
        VerifyKernels => {
            if s.k.len() < 2 {
                return Err(src.err("k", "slope fits need at least two wavenumbers"));
            }
            if s.samples == 0 {
                return Err(src.err("samples", "samples must be at least 1"));
            }
        }
        LinearDecay => {
            if s.nu.is_empty() {
                return Err(src.err("nu", "viscosity grid is empty"));
            }
            if !positive(s.horizon) {
                return Err(src.err("horizon", "horizon must be positive"));
            }
            guard("nu", min(&s.nu).min(s.nu_ref))?;
            linear_cfl(s)?;
        }
        EnergyAudit => {
            if s.mu.is_empty() || s.nu.is_empty() {
                return Err(src.err("mu", "diffusivity grids must be nonempty"));
            }
            if !positive(s.horizon) {
                return Err(src.err("horizon", "horizon must be positive"));
            }
            guard("nu", min(&s.mu).min(min(&s.nu)))?;
            linear_cfl(s)?;
        }
        NonlinearRun | ThresholdSweep => {
            if s.k_max < 4 {
                return Err(src.err("k_max", format!("k_max = {} must be at least 4", s.k_max)));
            }
            if !(s.cfl > 0.0 && s.cfl <= NONLINEAR_CFL_LIMIT) {
                return Err(src.err(
                    "cfl",
                    format!("CFL target {} must lie in (0, {NONLINEAR_CFL_LIMIT}]", s.cfl),
                ));
            }
            if !positive(s.horizon) {
                return Err(src.err("horizon", "horizon must be positive"));
            }
            if s.kind == NonlinearRun {
                if s.mu.len() != 1 || s.nu.len() != 1 {
                    return Err(src.err("mu", "nonlinear-run takes exactly one mu and one nu"));
                }
                guard("mu", s.mu[0].min(s.nu[0]))?;
            } else {
                if s.amplitudes.is_empty() {
                    return Err(src.err("amplitudes", "amplitude grid is empty"));
                }
                if s.mu.is_empty() {
                    return Err(src.err("mu", "mu grid is empty"));
                }
                if !s.nu.is_empty() && s.nu != s.mu {
                    return Err(src.err("nu", "threshold sweeps tie nu = mu; omit nu or repeat the mu grid"));
                }
                guard("mu", min(&s.mu))?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(text: &str, kind: ExperimentKind) -> Result<Settings, ConfigError> {
        parse(text, Path::new("c.json"), kind)
    }

    #[test]
    fn defaults_validate() {
        for kind in ExperimentKind::ALL {
            let s = p("{}", kind).unwrap();
            assert_eq!(s, Settings::defaults(kind));
        }
    }

    #[test]
    fn odd_grid_is_line_anchored() {
        let e = p("{\n  \"seed\": 1,\n  \"n_y\": 63\n}", ExperimentKind::VerifyGreens).unwrap_err();
        assert_eq!((e.line, e.column), (3, 3));
        assert!(e.to_string().starts_with("c.json:3:3: n_y = 63"));
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = p("{\"tolerances\": {\"greenz\": 1}}", ExperimentKind::VerifyGreens).unwrap_err();
        assert!(e.message.contains("greenz"), "{e}");
        assert_eq!(e.line, 1);
        assert!(p("{\"nn_y\": 4}", ExperimentKind::VerifyGreens).is_err());
    }

    /// Field names serde lists when it rejects an unknown key.
    fn accepted_keys(text: &str) -> Vec<String> {
        let e = p(text, ExperimentKind::VerifyGreens).unwrap_err();
        let tail = e.message.split("expected one of").nth(1).expect("field list");
        let mut keys: Vec<String> = tail.split('`').skip(1).step_by(2).map(String::from).collect();
        keys.sort();
        keys
    }

    #[test]
    fn published_schema_matches_parser() {
        let schema: serde_json::Value = serde_json::from_str(include_str!("../../../docs/config-schema.json")).unwrap();
        let keys = |v: &serde_json::Value| {
            let mut k: Vec<String> = v["properties"].as_object().unwrap().keys().cloned().collect();
            k.sort();
            k
        };
        assert_eq!(keys(&schema), accepted_keys("{\"zz_unknown\": 1}"));
        assert_eq!(keys(&schema["properties"]["tolerances"]), accepted_keys("{\"tolerances\": {\"zz_unknown\": 1}}"));
    }

    #[test]
    fn sweep_guards() {
        let e = p("{\"amplitudes\": []}", ExperimentKind::ThresholdSweep).unwrap_err();
        assert!(e.message.contains("amplitude grid is empty"));
        let e = p("{\"n_y\": 16, \"mu\": [1e-4]}", ExperimentKind::ThresholdSweep).unwrap_err();
        assert!(e.message.contains("resolution guard"));
        let e = p("{\"cfl\": 0.9}", ExperimentKind::NonlinearRun).unwrap_err();
        assert!(e.message.contains("CFL"));
        let e = p("{\"dt_scale\": 0.6}", ExperimentKind::LinearDecay).unwrap_err();
        assert!(e.message.contains("CFL"));
        let e = p("{\"experiment\": \"verify-jk\"}", ExperimentKind::LinearDecay).unwrap_err();
        assert!(e.message.contains("verify-jk"));
    }

    #[test]
    fn hash_tracks_settings_not_output() {
        let a = p("{\"out_dir\": \"x\"}", ExperimentKind::VerifyGreens).unwrap();
        let b = p("{}", ExperimentKind::VerifyGreens).unwrap();
        let c = p("{\"seed\": 3}", ExperimentKind::VerifyGreens).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(b.hash(), c.hash());
        assert_eq!(b.hash().len(), 64);
    }
}
