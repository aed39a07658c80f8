//! linear-decay: fitted decay rates of `θ_k` around Couette flow and their
//! scaling in `ν` and `k`.

use std::sync::Arc;

use cbl_core::base_flow::BaseFlow;
use cbl_core::fit::loglog_fit;
use cbl_core::linear::{evolve_mode, fit_decay_rate, ActiveFields, DecayQuantity, LinearModeProblem};
use cbl_core::{ChannelGrid, ComplexVec};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::anchors::*;
use crate::config::Settings;
use crate::svg::PlotSpec;
use crate::table::{format_float, Table};
use crate::{Outcome, Result};

pub struct DecayRun {
    pub nu: f64,
    pub k: i64,
    pub rate: f64,
    pub r_squared: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// `τ = ν^{-1/3}|k|^{-2/3}`.
pub fn tau(nu: f64, k: i64) -> f64 {
    nu.powf(-1.0 / 3.0) * (k as f64).powf(-2.0 / 3.0)
}

/// One θ-only run from `sin(π(y+1)/2)`, fitted over `[horizon/3, horizon]·τ`.
pub fn decay_run(g: &Arc<ChannelGrid>, nu: f64, k: i64, s: &Settings) -> Result<DecayRun> {
    let base = Arc::new(BaseFlow::couette(g));
    let theta = g.sample_complex(|y| Complex64::new((std::f64::consts::PI * (y + 1.0) / 2.0).sin(), 0.0));
    let p = LinearModeProblem::new(g.clone(), k, 0, nu, nu, base)?
        .with_fields(ActiveFields::ThetaOnly)
        .with_initial(ComplexVec::zeros(g.len()), theta)?;
    let tau = tau(nu, k);
    let traj = evolve_mode(&p, s.horizon * tau, s.dt_scale / k as f64, s.sample_every)?;
    let fit = fit_decay_rate(&traj, DecayQuantity::ThetaWeighted, Some((s.horizon / 3.0 * tau, s.horizon * tau)))?;
    Ok(DecayRun {
        nu,
        k,
        rate: fit.rate,
        r_squared: fit.r_squared,
        times: traj.times(),
        values: traj.series(DecayQuantity::ThetaWeighted),
    })
}

pub fn run(s: &Settings) -> Result<Outcome> {
    let tol = s.tolerances;
    let g = super::grid(s.n_y)?;
    let mut keys: Vec<(f64, i64)> = s.nu.iter().map(|&nu| (nu, s.k_ref)).collect();
    for &k in &s.k {
        if !keys.contains(&(s.nu_ref, k)) {
            keys.push((s.nu_ref, k));
        }
    }
    let runs: Vec<DecayRun> = keys
        .par_iter()
        .map(|&(nu, k)| decay_run(&g, nu, k, s))
        .collect::<Result<_>>()?;
    let find = |nu: f64, k: i64| runs.iter().find(|r| r.nu == nu && r.k == k).expect("run");

    let mut out = Outcome::default();
    let mut t = Table::new("decay_rates.csv", &["nu", "k", "fitted_rate", "r_squared"]);
    let mut curves = Table::new("decay_curves.csv", &["run", "nu", "k", "t", "weighted_norm_sq"]);
    for r in &runs {
        t.push(vec![r.nu.into(), r.k.into(), r.rate.into(), r.r_squared.into()]);
        let label = format!("nu={:e} k={}", r.nu, r.k);
        for (tt, v) in r.times.iter().zip(&r.values) {
            curves.push(vec![label.clone().into(), r.nu.into(), r.k.into(), (*tt).into(), (*v).into()]);
        }
    }
    out.tables.push(t);
    out.tables.push(curves);

    if s.nu.len() >= 2 {
        let rates: Vec<f64> = s.nu.iter().map(|&nu| find(nu, s.k_ref).rate).collect();
        let slope = loglog_fit(&s.nu, &rates).map_or(f64::NAN, |f| f.slope);
        out.check(
            DECAY_VISCOSITY_SCALING,
            format!("log-log slope of rate vs nu at k={}", s.k_ref),
            super::within(slope, 1.0 / 3.0, tol.decay_nu_slope),
            slope,
            format!("0.33 ± {}", tol.decay_nu_slope),
        );
        out.plots.push(
            PlotSpec::new("decay_rate_nu.svg", "decay_rates.csv", "nu", "fitted_rate", "decay rate vs viscosity")
                .log(true, true)
                .filter("k", s.k_ref.to_string()),
        );
    }
    if s.k.len() >= 2 {
        let ks: Vec<f64> = s.k.iter().map(|&k| k as f64).collect();
        let rates: Vec<f64> = s.k.iter().map(|&k| find(s.nu_ref, k).rate).collect();
        let slope = loglog_fit(&ks, &rates).map_or(f64::NAN, |f| f.slope);
        out.check(
            DECAY_WAVENUMBER_SCALING,
            format!("log-log slope of rate vs k at nu={:e}", s.nu_ref),
            super::within(slope, 2.0 / 3.0, tol.decay_k_slope),
            slope,
            format!("0.67 ± {}", tol.decay_k_slope),
        );
        out.plots.push(
            PlotSpec::new("decay_rate_k.svg", "decay_rates.csv", "k", "fitted_rate", "decay rate vs wavenumber")
                .log(true, true)
                .filter("nu", format_float(s.nu_ref)),
        );
    }
    let min_r2 = runs.iter().map(|r| r.r_squared).fold(f64::INFINITY, f64::min);
    out.info("min_r_squared", min_r2);
    out.plots.push(
        PlotSpec::new("decay_curves.svg", "decay_curves.csv", "t", "weighted_norm_sq", "weighted theta norm")
            .log(false, true)
            .group("run"),
    );
    Ok(out)
}
