//! Batch runner for the channel Boussinesq experiments: validated JSON configs
//! in, CSV tables, SVG plots and a checksummed manifest out.

pub mod anchors;
pub mod config;
pub mod experiments;
pub mod manifest;
pub mod report;
pub mod svg;
pub mod table;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cbl_core::CblError;

use crate::config::{ConfigError, Settings};
use crate::manifest::{now_rfc3339, Assertion, Manifest, RunDir, RunStatus, CODE_VERSION, MANIFEST_FORMAT};
use crate::svg::PlotSpec;
use crate::table::{CsvData, Table};

/// Exit status for configuration and usage errors.
pub const EXIT_INVALID: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    /// The run stopped on a non-finite or runaway state. `files` are staged
    /// artifacts (such as a last-good checkpoint) to keep.
    #[error("numerical abort: {message}")]
    Numerical { message: String, files: Vec<String> },
    #[error(transparent)]
    Core(CblError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

impl From<CblError> for HarnessError {
    fn from(e: CblError) -> Self {
        match e {
            CblError::NonFinite { .. } | CblError::Cfl { .. } => HarnessError::Numerical {
                message: e.to_string(),
                files: Vec::new(),
            },
            CblError::Io(io) => HarnessError::Io(io),
            other => HarnessError::Core(other),
        }
    }
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Numerical { .. } => 3,
            _ => EXIT_INVALID,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// What an experiment produces before anything is written.
#[derive(Debug, Default)]
pub struct Outcome {
    pub tables: Vec<Table>,
    pub assertions: Vec<Assertion>,
    pub info: BTreeMap<String, serde_json::Value>,
    pub plots: Vec<PlotSpec>,
    /// Files the experiment wrote into the staging directory itself.
    pub files: Vec<String>,
}

impl Outcome {
    pub fn info(&mut self, key: &str, value: impl serde::Serialize) {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.info.insert(key.to_string(), v);
    }

    pub fn check(&mut self, anchor: &str, name: impl Into<String>, passed: bool, measured: f64, expected: impl Into<String>) {
        self.assertions.push(Assertion::new(anchor, name, passed, measured, expected));
    }
}

/// Runner options that do not affect results.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub plot: bool,
}

/// Where a run writes: `--out`, then the config's `out_dir`, then
/// `$CBL_OUT_ROOT/<kind>-<hash prefix>`, then `./cbl-runs/<kind>-<hash prefix>`.
pub fn output_dir(settings: &Settings, out: Option<&Path>) -> PathBuf {
    if let Some(o) = out {
        return o.to_path_buf();
    }
    if let Some(o) = &settings.out_dir {
        return o.clone();
    }
    let root = std::env::var_os("CBL_OUT_ROOT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("cbl-runs"));
    root.join(format!("{}-{}", settings.kind, &settings.hash()[..12]))
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        self.manifest.status.exit_code()
    }
}

/// Runs one experiment and writes its directory. Assertion failures and
/// numerical aborts still produce a manifest; only errors that prevent a
/// meaningful run are returned as `Err`.
pub fn run_experiment(settings: &Settings, opts: &RunOptions) -> Result<RunReport> {
    let started_at = now_rfc3339();
    let dir = output_dir(settings, opts.out.as_deref());
    let mut rd = RunDir::create(&dir)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = opts.jobs {
        builder = builder.num_threads(j);
    }
    let pool = builder.build().map_err(|e| HarnessError::Invalid(e.to_string()))?;
    log::info!("{} -> {}", settings.kind, dir.display());
    let staging = rd.staging().to_path_buf();
    let result = pool.install(|| experiments::run(settings, &staging));

    let (status, error, outcome) = match result {
        Ok(o) => {
            let status = if o.assertions.iter().all(|a| a.passed) {
                RunStatus::Pass
            } else {
                RunStatus::Fail
            };
            (status, None, o)
        }
        Err(HarnessError::Numerical { message, files }) => {
            log::error!("numerical abort: {message}");
            let o = Outcome {
                files,
                ..Default::default()
            };
            (RunStatus::Aborted, Some(message), o)
        }
        Err(e) => return Err(e),
    };
    for t in &outcome.tables {
        rd.stage(&t.file, &t.to_bytes()?)?;
    }
    for f in &outcome.files {
        rd.adopt(f);
    }
    if opts.plot {
        for spec in &outcome.plots {
            let table = outcome
                .tables
                .iter()
                .find(|t| t.file == spec.csv)
                .ok_or_else(|| HarnessError::Invalid(format!("plot {} reads unknown table {}", spec.file, spec.csv)))?;
            let data = CsvData::parse(&table.to_bytes()?).map_err(|e| HarnessError::Invalid(e.to_string()))?;
            let svg = svg::render(spec, &data).map_err(HarnessError::Invalid)?;
            rd.stage(&spec.file, svg.as_bytes())?;
        }
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT,
        experiment: settings.kind,
        config_hash: settings.hash(),
        code_version: CODE_VERSION.to_string(),
        seed: settings.seed,
        started_at,
        finished_at: now_rfc3339(),
        status,
        error,
        settings: serde_json::to_value(settings).unwrap_or(serde_json::Value::Null),
        artifacts: Vec::new(),
        assertions: outcome.assertions,
        info: outcome.info,
        plots: outcome.plots,
    };
    let manifest = rd.commit(manifest)?;
    Ok(RunReport { dir, manifest })
}
