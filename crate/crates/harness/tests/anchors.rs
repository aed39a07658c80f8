use std::collections::BTreeSet;
use std::path::Path;

use cbl_harness::config::{self, ExperimentKind};
use cbl_harness::{anchors, run_experiment, RunOptions};

fn small(kind: ExperimentKind) -> &'static str {
    match kind {
        ExperimentKind::VerifyGreens => r#"{"n_y": 32, "k": [1, 2], "samples": 5}"#,
        ExperimentKind::VerifyJk => r#"{"n_y": 32, "k": [1, 2, 3], "defect_grids": [16, 32]}"#,
        ExperimentKind::VerifyKernels => r#"{"n_y": 32, "k": [2, 4], "samples": 50}"#,
        ExperimentKind::LinearDecay => r#"{"n_y": 64, "k": [1, 2], "nu": [1e-2, 1e-3], "nu_ref": 1e-2, "horizon": 6}"#,
        ExperimentKind::EnergyAudit => {
            r#"{"n_y": 32, "k": [1], "mu": [1e-2], "nu": [1e-2], "samples": 5, "horizon": 0.5}"#
        }
        ExperimentKind::NonlinearRun => r#"{"n_y": 32, "k_max": 4, "mu": [1e-2], "nu": [1e-2], "horizon": 0.3}"#,
        ExperimentKind::ThresholdSweep => r#"{"n_y": 32, "k_max": 4, "mu": [1e-2, 3e-2], "amplitudes": [1, 2], "horizon": 0.2}"#,
    }
}

#[test]
fn every_documented_anchor_is_emitted() {
    let tmp = tempfile::tempdir().unwrap();
    let mut emitted = BTreeSet::new();
    for kind in ExperimentKind::ALL {
        let s = config::parse(small(kind), Path::new("small.json"), kind).unwrap_or_else(|e| panic!("{e}"));
        let opts = RunOptions {
            out: Some(tmp.path().join(kind.as_str())),
            jobs: Some(2),
            plot: false,
        };
        let r = run_experiment(&s, &opts).unwrap_or_else(|e| panic!("{kind}: {e}"));
        for a in &r.manifest.assertions {
            assert!(anchors::ALL.contains(&a.anchor.as_str()), "undocumented anchor {}", a.anchor);
            emitted.insert(a.anchor.clone());
        }
    }
    let documented: BTreeSet<String> = anchors::ALL.iter().map(|a| a.to_string()).collect();
    let missing: Vec<_> = documented.difference(&emitted).collect();
    assert!(missing.is_empty(), "never emitted: {missing:?}");
}
