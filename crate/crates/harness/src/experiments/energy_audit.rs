//! energy-audit: Lyapunov behaviour of `E_{θ,k}`, the growth bound on
//! `E_{ω,k}`, and the coercivity window.

use std::f64::consts::PI;
use std::sync::Arc;

use cbl_core::base_flow::{assemble_base_flow, DEFAULT_DELTA0};
use cbl_core::energy::{coercivity_window, jk_full_norm, FunctionalConstants};
use cbl_core::jk::build_jk;
use cbl_core::linear::{evolve_mode, EnergySetup, LinearModeProblem};
use cbl_core::rng::{stream, Rng};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::anchors::*;
use crate::config::Settings;
use crate::experiments::greens::random_dirichlet;
use crate::svg::PlotSpec;
use crate::table::Table;
use crate::{HarnessError, Outcome, Result};

struct Audit {
    mu: f64,
    nu: f64,
    k: i64,
    max_theta_increase: f64,
    max_omega_excess: f64,
    required_c0: f64,
    series: Vec<(f64, f64, f64, f64)>,
}

pub fn run(s: &Settings) -> Result<Outcome> {
    let tol = s.tolerances;
    let constants = FunctionalConstants::from_c0(tol.c0)?;
    let g = super::grid(s.n_y)?;
    let w0 = g.sample(|y| (PI * (y + 1.0)).sin());
    let scale = DEFAULT_DELTA0 / g.sobolev_h4_norm(&w0)?;
    let base = Arc::new(assemble_base_flow(&g, &w0.map(|v| v * scale), 0.0, DEFAULT_DELTA0)?);
    let jks: Vec<_> = s
        .k
        .par_iter()
        .map(|&k| build_jk(k, g.clone()).map(Arc::new))
        .collect::<std::result::Result<_, _>>()?;
    let mut guard_ok = true;
    for op in &jks {
        guard_ok &= constants.check_positivity_guard(jk_full_norm(op)).is_ok();
    }

    let mut jobs = Vec::new();
    for &mu in &s.mu {
        for &nu in &s.nu {
            for (i, &k) in s.k.iter().enumerate() {
                jobs.push((mu, nu, k, i));
            }
        }
    }
    let audits: Vec<Audit> = jobs
        .par_iter()
        .map(|&(mu, nu, k, i)| -> Result<Audit> {
            let theta = g.sample_complex(|y| Complex64::new((PI * (y + 1.0) / 2.0).sin(), 0.0));
            let omega = g.sample_complex(|y| Complex64::new((PI * (y + 1.0)).sin(), 0.3 * (1.0 - y * y)));
            let p = LinearModeProblem::new(g.clone(), k, 0, mu, nu, base.clone())?
                .with_energy(EnergySetup {
                    constants,
                    jk: Some(jks[i].clone()),
                })?
                .with_initial(omega, theta)?;
            let traj = evolve_mode(&p, s.horizon * nu.powf(-1.0 / 3.0), s.dt_scale / k as f64, s.sample_every)?;
            let e_omega0 = traj.samples[0]
                .e_omega
                .ok_or_else(|| HarnessError::Invalid("vorticity energy not recorded".into()))?;
            let growth = mu.powf(-1.0 / 3.0) * (k as f64).powf(4.0 / 3.0);
            let mut max_theta_increase = f64::NEG_INFINITY;
            let mut max_omega_excess = f64::NEG_INFINITY;
            let mut required_c0: f64 = 0.0;
            let mut series = Vec::new();
            for (j, sm) in traj.samples.iter().enumerate() {
                let eo = sm.e_omega.unwrap_or(f64::NAN);
                let bound = e_omega0 + tol.c0 * growth * sm.theta_sq_integral;
                if j > 0 {
                    max_theta_increase = max_theta_increase.max(sm.e_theta - traj.samples[j - 1].e_theta);
                    max_omega_excess = max_omega_excess.max(eo - bound);
                    if sm.theta_sq_integral > 0.0 {
                        required_c0 = required_c0.max((eo - e_omega0) / (growth * sm.theta_sq_integral));
                    }
                }
                series.push((sm.t, sm.e_theta, eo, bound));
            }
            Ok(Audit {
                mu,
                nu,
                k,
                max_theta_increase,
                max_omega_excess,
                required_c0,
                series,
            })
        })
        .collect::<Result<_>>()?;

    let mut out = Outcome::default();
    let mut t = Table::new(
        "energy_audit.csv",
        &["mu", "nu", "k", "max_e_theta_increase", "max_e_omega_excess", "required_c0"],
    );
    let mut series = Table::new("energy_series.csv", &["run", "t", "e_theta", "e_omega", "e_omega_bound"]);
    for a in &audits {
        t.push(vec![
            a.mu.into(),
            a.nu.into(),
            a.k.into(),
            a.max_theta_increase.into(),
            a.max_omega_excess.into(),
            a.required_c0.into(),
        ]);
        let label = format!("mu={:e} nu={:e} k={}", a.mu, a.nu, a.k);
        for &(tt, et, eo, b) in &a.series {
            series.push(vec![label.as_str().into(), tt.into(), et.into(), eo.into(), b.into()]);
        }
        out.check(
            ENERGY_THETA_LYAPUNOV,
            format!("largest E_theta increase between samples, {label}"),
            a.max_theta_increase <= tol.energy_slack,
            a.max_theta_increase,
            format!("<= {:e}", tol.energy_slack),
        );
        out.check(
            ENERGY_OMEGA_BOUND,
            format!("largest E_omega excess over the C0 bound, {label}"),
            a.max_omega_excess <= tol.energy_slack,
            a.max_omega_excess,
            format!("<= {:e} with C0 = {}", tol.energy_slack, tol.c0),
        );
    }
    out.tables.push(t);
    out.tables.push(series);

    let mut rng = stream(s.seed, "energy-coercivity");
    let mut held = 0usize;
    for _ in 0..s.samples {
        let k: i64 = rng.random_range(1..=32);
        let nu = 10f64.powf(rng.random_range(-5.0..-1.0));
        let th = random_dirichlet(&g, &mut rng);
        if coercivity_window(&g, k, &th, nu)?.holds() {
            held += 1;
        }
    }
    out.check(
        ENERGY_THETA_COERCIVITY,
        format!("coercivity window on {} random states", s.samples),
        held == s.samples,
        held as f64,
        format!("{} (every state)", s.samples),
    );
    out.info("w_in_h4", base.w_h4);
    out.info("positivity_guard_holds", guard_ok);
    out.info(
        "required_c0_max",
        audits.iter().map(|a| a.required_c0).fold(0.0, f64::max),
    );
    out.plots.push(
        PlotSpec::new("energy_theta.svg", "energy_series.csv", "t", "e_theta", "E_theta along linear runs")
            .log(false, true)
            .group("run"),
    );
    Ok(out)
}
