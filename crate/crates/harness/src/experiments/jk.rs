//! verify-jk: norm, commutator and adjointness sweeps for `𝔍_k`.

use cbl_core::jk::{build_jk, commutator_norm};
use rayon::prelude::*;

use crate::anchors::*;
use crate::config::Settings;
use crate::svg::PlotSpec;
use crate::table::Table;
use crate::{Outcome, Result};

pub fn run(s: &Settings) -> Result<Outcome> {
    let tol = s.tolerances;
    let g = super::grid(s.n_y)?;
    let rows: Vec<(i64, f64, bool, f64, bool)> = s
        .k
        .par_iter()
        .map(|&k| -> Result<_> {
            let op = build_jk(k, g.clone())?;
            let n = op.norm_estimate();
            let c = commutator_norm(&op);
            Ok((k, n.value, n.converged, c.value, c.converged))
        })
        .collect::<Result<_>>()?;
    let defects: Vec<(usize, f64)> = s
        .defect_grids
        .par_iter()
        .map(|&n| -> Result<_> {
            let op = build_jk(s.k_ref, super::grid(n)?)?;
            Ok((n, op.adjoint_defect()))
        })
        .collect::<Result<_>>()?;

    let mut out = Outcome::default();
    let mut t = Table::new("jk_norms.csv", &["k", "norm", "norm_converged", "commutator_over_k", "commutator_converged"]);
    for &(k, n, nc, c, cc) in &rows {
        t.push(vec![k.into(), n.into(), nc.into(), c.into(), cc.into()]);
    }
    out.tables.push(t);
    let mut t = Table::new("jk_defects.csv", &["n_y", "k", "adjoint_defect"]);
    for &(n, d) in &defects {
        t.push(vec![n.into(), s.k_ref.into(), d.into()]);
    }
    out.tables.push(t);

    let norms: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let comms: Vec<f64> = rows.iter().map(|r| r.3).collect();
    let ratio = super::spread(&norms);
    out.check(
        JK_NORM_UNIFORM,
        format!("norm max/min over k={}..{}", s.k[0], s.k[s.k.len() - 1]),
        ratio <= tol.jk_norm_ratio,
        ratio,
        format!("<= {}", tol.jk_norm_ratio),
    );
    let growth = norms[norms.len() - 1] / norms[0];
    out.check(
        JK_NORM_NO_GROWTH,
        "norm at largest k over norm at smallest k",
        growth <= tol.jk_norm_growth,
        growth,
        format!("<= {}", tol.jk_norm_growth),
    );
    let cr = super::spread(&comms);
    out.check(
        JK_COMMUTATOR_UNIFORM,
        "commutator/|k| max/min",
        cr <= tol.jk_commutator_ratio,
        cr,
        format!("<= {}", tol.jk_commutator_ratio),
    );
    // The absolute bound applies at n_y = 128 when that grid is in the sequence,
    // otherwise at the finest grid.
    let (n_abs, d_abs) = defects
        .iter()
        .copied()
        .find(|d| d.0 == 128)
        .unwrap_or(defects[defects.len() - 1]);
    out.check(
        JK_SELF_ADJOINT,
        format!("adjointness defect at n_y={n_abs}, k={}", s.k_ref),
        d_abs <= tol.jk_adjoint_defect,
        d_abs,
        format!("<= {:e}", tol.jk_adjoint_defect),
    );
    for w in defects.windows(2) {
        let r = w[1].1 / w[0].1;
        out.check(
            JK_SELF_ADJOINT_CONVERGENCE,
            format!("defect ratio n_y {} -> {}", w[0].0, w[1].0),
            r <= tol.jk_defect_reduction,
            r,
            format!("<= {}", tol.jk_defect_reduction),
        );
    }
    out.info("power_iterations_all_converged", rows.iter().all(|r| r.2 && r.4));
    out.plots.push(PlotSpec::new("jk_norms.svg", "jk_norms.csv", "k", "norm", "J_k operator norm").log(true, false));
    out.plots.push(
        PlotSpec::new("jk_commutator.svg", "jk_norms.csv", "k", "commutator_over_k", "commutator norm / |k|").log(true, false),
    );
    out.plots.push(
        PlotSpec::new("jk_defects.svg", "jk_defects.csv", "n_y", "adjoint_defect", "adjointness defect").log(true, true),
    );
    Ok(out)
}
