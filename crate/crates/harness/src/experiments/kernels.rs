//! verify-kernels: `k`-scaling of the Taylor-remainder kernels and pointwise
//! remainder bounds.

use cbl_core::base_flow::assemble_base_flow;
use cbl_core::kernels::{
    kernel_scaling, measure_remainder_constants, random_pairs, reference_w, TaylorRemainder,
    REMAINDER_REFERENCE_CONSTANTS,
};

use crate::anchors::*;
use crate::config::Settings;
use crate::svg::PlotSpec;
use crate::table::Table;
use crate::{Outcome, Result};

const NORM_NAMES: [&str; 4] = ["size", "d_y", "d_yp", "d_y_d_yp"];
const EXPECTED_SLOPES: [f64; 4] = [-2.0, -1.0, -1.0, 0.0];

pub fn run(s: &Settings) -> Result<Outcome> {
    let tol = s.tolerances;
    let g = super::grid(s.n_y)?;
    let w = reference_w(&g);
    let base = assemble_base_flow(&g, &w, 0.0, f64::INFINITY)?;
    let scaling = kernel_scaling(&s.k, &base, &g)?;

    let mut out = Outcome::default();
    let mut t = Table::new("kernel_norms.csv", &["kernel", "norm", "series", "k", "value"]);
    for (name, list) in [("K1", &scaling.k1), ("K2", &scaling.k2)] {
        for (k, n) in scaling.ks.iter().zip(list) {
            for (c, v) in n.as_array().iter().enumerate() {
                t.push(vec![
                    name.into(),
                    NORM_NAMES[c].into(),
                    format!("{name} {}", NORM_NAMES[c]).into(),
                    (*k).into(),
                    (*v).into(),
                ]);
            }
        }
    }
    out.tables.push(t);
    let mut t = Table::new("kernel_slopes.csv", &["kernel", "norm", "slope", "expected"]);
    for (name, slopes) in [("K1", scaling.k1_slopes), ("K2", scaling.k2_slopes)] {
        for c in 0..4 {
            t.push(vec![name.into(), NORM_NAMES[c].into(), slopes[c].into(), EXPECTED_SLOPES[c].into()]);
            let anchor = match c {
                0 => KERNEL_SIZE_DECAY,
                3 => KERNEL_MIXED_DERIVATIVE_BOUND,
                _ => KERNEL_DERIVATIVE_DECAY,
            };
            out.check(
                anchor,
                format!("{name} {} log-log slope over k={}..{}", NORM_NAMES[c], s.k[0], s.k[s.k.len() - 1]),
                super::within(slopes[c], EXPECTED_SLOPES[c], tol.kernel_slope),
                slopes[c],
                format!("{} ± {}", EXPECTED_SLOPES[c], tol.kernel_slope),
            );
        }
    }
    out.tables.push(t);

    let tr = TaylorRemainder::new(&g, &base)?;
    let pairs = random_pairs(s.seed, "remainder-pairs", s.samples);
    let measured = measure_remainder_constants(&tr, &pairs, base.w_h4);
    let mut t = Table::new("remainder_bounds.csv", &["ratio", "measured", "reference", "limit"]);
    for (i, name) in ["h", "h_y+h_yp", "h_y_yp"].iter().enumerate() {
        let limit = REMAINDER_REFERENCE_CONSTANTS[i] * tol.remainder_slack;
        t.push(vec![(*name).into(), measured[i].into(), REMAINDER_REFERENCE_CONSTANTS[i].into(), limit.into()]);
        out.check(
            TAYLOR_REMAINDER_POINTWISE,
            format!("max {name} ratio over {} pairs", s.samples),
            measured[i] <= limit,
            measured[i],
            format!("<= {limit:.6}"),
        );
    }
    out.tables.push(t);
    out.info("w_h4", base.w_h4);
    out.plots.push(
        PlotSpec::new("kernel_norms.svg", "kernel_norms.csv", "k", "value", "kernel norms")
            .log(true, true)
            .group("series"),
    );
    Ok(out)
}
