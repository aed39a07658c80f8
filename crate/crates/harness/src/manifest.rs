//! Run manifests and the staging directory that produces them.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, ExperimentKind};
use crate::svg::PlotSpec;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: u32 = 1;
pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub anchor: String,
    pub name: String,
    pub passed: bool,
    /// `None` when the measurement was not finite.
    pub measured: Option<f64>,
    pub expected: String,
}

impl Assertion {
    pub fn new(anchor: &str, name: impl Into<String>, passed: bool, measured: f64, expected: impl Into<String>) -> Self {
        Self {
            anchor: anchor.to_string(),
            name: name.into(),
            passed,
            measured: measured.is_finite().then_some(measured),
            expected: expected.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Pass,
    Fail,
    Aborted,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Pass => 0,
            RunStatus::Fail => 1,
            RunStatus::Aborted => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: u32,
    pub experiment: ExperimentKind,
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
    pub started_at: String,
    pub finished_at: String,
    pub status: RunStatus,
    pub error: Option<String>,
    pub settings: serde_json::Value,
    pub artifacts: Vec<Artifact>,
    pub assertions: Vec<Assertion>,
    pub info: BTreeMap<String, serde_json::Value>,
    pub plots: Vec<PlotSpec>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self, String> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}:{}:{}: {e}", path.display(), e.line(), e.column()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn now_rfc3339() -> String {
    time::OffsetDateTime::now_utc()
        .format(&time::format_description::well_known::Rfc3339)
        .unwrap_or_default()
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Output directory under construction. Artifacts go to a private staging
/// directory and are moved into place on [`RunDir::commit`], which writes the
/// manifest last.
#[derive(Debug)]
pub struct RunDir {
    dir: PathBuf,
    staging: PathBuf,
    staged: Vec<String>,
}

impl RunDir {
    /// Creates `dir` and invalidates any previous manifest in it.
    pub fn create(dir: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        match fs::remove_file(dir.join(MANIFEST_FILE)) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(e),
        }
        let staging = dir.join(format!(".staging-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir_all(&staging)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            staging,
            staged: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn staging(&self) -> &Path {
        &self.staging
    }

    pub fn stage(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        fs::write(self.staging.join(name), bytes)?;
        self.adopt(name);
        Ok(())
    }

    /// Registers a file that was written into the staging directory directly.
    pub fn adopt(&mut self, name: &str) {
        if !self.staged.iter().any(|s| s == name) {
            self.staged.push(name.to_string());
        }
    }

    /// Moves staged files into place, fills in the artifact list and writes
    /// the manifest.
    pub fn commit(self, mut manifest: Manifest) -> std::io::Result<Manifest> {
        let mut artifacts = Vec::new();
        for name in &self.staged {
            let src = self.staging.join(name);
            let bytes = fs::read(&src)?;
            fs::rename(&src, self.dir.join(name))?;
            artifacts.push(Artifact {
                path: name.clone(),
                sha256: sha256_hex(&bytes),
                bytes: bytes.len() as u64,
            });
        }
        fs::remove_dir_all(&self.staging)?;
        manifest.artifacts = artifacts;
        let json = serde_json::to_vec_pretty(&manifest).map_err(std::io::Error::other)?;
        write_atomic(&self.dir.join(MANIFEST_FILE), &json)?;
        Ok(manifest)
    }
}
