//! One module per experiment kind. Each returns an [`Outcome`]; nothing is
//! written here except binary artifacts placed in the staging directory.

use std::path::Path;
use std::sync::Arc;

use cbl_core::ChannelGrid;

use crate::config::{ExperimentKind, Settings};
use crate::{Outcome, Result};

pub mod energy_audit;
pub mod greens;
pub mod jk;
pub mod kernels;
pub mod linear_decay;
pub mod nonlinear;
pub mod sweep;

pub fn run(s: &Settings, staging: &Path) -> Result<Outcome> {
    match s.kind {
        ExperimentKind::VerifyGreens => greens::run(s),
        ExperimentKind::VerifyJk => jk::run(s),
        ExperimentKind::VerifyKernels => kernels::run(s),
        ExperimentKind::LinearDecay => linear_decay::run(s),
        ExperimentKind::EnergyAudit => energy_audit::run(s),
        ExperimentKind::NonlinearRun => nonlinear::run(s, staging),
        ExperimentKind::ThresholdSweep => sweep::run(s),
    }
}

pub(crate) fn grid(n: usize) -> Result<Arc<ChannelGrid>> {
    Ok(Arc::new(ChannelGrid::new(n)?))
}

/// `max/min` of positive values.
pub(crate) fn spread(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    max / min
}

/// Whether `|measured − target| ≤ tol`.
pub(crate) fn within(measured: f64, target: f64, tol: f64) -> bool {
    (measured - target).abs() <= tol
}
