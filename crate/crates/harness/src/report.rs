//! `cbl report <dir>`: summary text plus regenerated SVGs.

use std::fmt::Write;
use std::fs;
use std::path::Path;

use crate::anchors;
use crate::manifest::{sha256_hex, write_atomic, Manifest, RunStatus};
use crate::svg;
use crate::table::CsvData;
use crate::EXIT_INVALID;

#[derive(Debug, Clone)]
pub struct Report {
    pub text: String,
    pub exit_code: i32,
    pub svgs: Vec<String>,
}

fn fmt_measured(v: Option<f64>) -> String {
    match v {
        Some(x) if x != 0.0 && (x.abs() < 1e-3 || x.abs() >= 1e4) => format!("{x:.4e}"),
        Some(x) => format!("{x:.4}"),
        None => "non-finite".into(),
    }
}

/// Builds the report for a run directory. A missing or unreadable manifest,
/// or an artifact that no longer matches its checksum, gives exit 2.
pub fn emit_report(dir: &Path) -> Report {
    let m = match Manifest::read(dir) {
        Ok(m) => m,
        Err(e) => {
            return Report {
                text: format!("invalid run directory: {e}\n"),
                exit_code: EXIT_INVALID,
                svgs: vec![],
            }
        }
    };
    let mut out = String::new();
    let _ = writeln!(out, "run       {}", m.experiment);
    let _ = writeln!(out, "config    {}", m.config_hash);
    let _ = writeln!(out, "code      {}", m.code_version);
    let _ = writeln!(out, "seed      {}", m.seed);
    let _ = writeln!(out, "started   {}", m.started_at);
    let _ = writeln!(out, "finished  {}", m.finished_at);

    let mut corrupt = Vec::new();
    for a in &m.artifacts {
        match fs::read(dir.join(&a.path)) {
            Ok(b) if sha256_hex(&b) == a.sha256 => {}
            Ok(_) => corrupt.push(format!("{}: checksum mismatch", a.path)),
            Err(e) => corrupt.push(format!("{}: {e}", a.path)),
        }
    }
    let _ = writeln!(out, "artifacts {} ({} damaged)", m.artifacts.len(), corrupt.len());
    for c in &corrupt {
        let _ = writeln!(out, "  DAMAGED {c}");
    }
    if let Some(e) = &m.error {
        let _ = writeln!(out, "aborted   {e}");
    }

    let _ = writeln!(out);
    for a in &m.assertions {
        let result = anchors::describe(&a.anchor).unwrap_or_else(|| "undocumented anchor".into());
        let _ = writeln!(
            out,
            "{} {} [{}]\n     measured {} expected {}\n     {}",
            if a.passed { "PASS" } else { "FAIL" },
            a.name,
            a.anchor,
            fmt_measured(a.measured),
            a.expected,
            result
        );
    }
    if !m.info.is_empty() {
        let _ = writeln!(out, "\ninformational");
        for (k, v) in &m.info {
            let _ = writeln!(out, "  {k} = {v}");
        }
    }

    let mut svgs = Vec::new();
    let mut plot_errors = Vec::new();
    for spec in &m.plots {
        let rendered = fs::read(dir.join(&spec.csv))
            .map_err(|e| e.to_string())
            .and_then(|b| CsvData::parse(&b).map_err(|e| e.to_string()))
            .and_then(|d| svg::render(spec, &d));
        match rendered {
            Ok(s) => match write_atomic(&dir.join(&spec.file), s.as_bytes()) {
                Ok(()) => svgs.push(spec.file.clone()),
                Err(e) => plot_errors.push(format!("{}: {e}", spec.file)),
            },
            Err(e) => plot_errors.push(format!("{}: {e}", spec.file)),
        }
    }
    if !m.plots.is_empty() {
        let _ = writeln!(out, "\nplots     {}", svgs.join(" "));
    }
    for e in &plot_errors {
        let _ = writeln!(out, "  PLOT ERROR {e}");
    }

    let failed = m.assertions.iter().filter(|a| !a.passed).count();
    let exit_code = if !corrupt.is_empty() || !plot_errors.is_empty() {
        EXIT_INVALID
    } else if m.status == RunStatus::Aborted {
        3
    } else if failed > 0 || m.status == RunStatus::Fail {
        1
    } else {
        0
    };
    let _ = writeln!(
        out,
        "\nstatus    {} ({} of {} assertions passed)",
        match exit_code {
            0 => "PASS",
            1 => "FAIL",
            3 => "ABORTED",
            _ => "INVALID",
        },
        m.assertions.len() - failed,
        m.assertions.len()
    );
    Report {
        text: out,
        exit_code,
        svgs,
    }
}
