//! nonlinear-run: one budget-sized run with energy time series and a final
//! checkpoint, plus consistency checks of the nonlinear stepper.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use cbl_core::base_flow::{assemble_base_flow, heat_evolve, BaseFlow, DEFAULT_DELTA0};
use cbl_core::energy::FunctionalConstants;
use cbl_core::fit::loglog_fit;
use cbl_core::jk::{build_jk, JkOperator};
use cbl_core::linear::fit_decay_series;
use cbl_core::nonlinear::{
    budget_initial_data, read_checkpoint, run_nonlinear, write_checkpoint, Classification, FlowField, NonlinearOutput,
    NonlinearRun, NonlinearStepper, SpectralOps,
};
use cbl_core::ChannelGrid;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::anchors::*;
use crate::config::Settings;
use crate::svg::PlotSpec;
use crate::table::Table;
use crate::{HarnessError, Outcome, Result};

/// Grid, spectral operators, base flow and `𝔍_k` shared by the nonlinear runs.
pub struct NonlinearSetup {
    pub grid: Arc<ChannelGrid>,
    pub ops: Arc<SpectralOps>,
    pub base: Arc<BaseFlow>,
    pub jk: Vec<Arc<JkOperator>>,
    pub constants: FunctionalConstants,
}

impl NonlinearSetup {
    /// Base flow `W ∝ sin(π(y+1))` with `‖W‖_{H⁴} = δ₀`.
    pub fn new(s: &Settings) -> Result<Self> {
        let grid = super::grid(s.n_y)?;
        let ops = Arc::new(SpectralOps::new(grid.clone(), s.k_max)?);
        let w0 = grid.sample(|y| (PI * (y + 1.0)).sin());
        let scale = DEFAULT_DELTA0 / grid.sobolev_h4_norm(&w0)?;
        let base = Arc::new(assemble_base_flow(&grid, &w0.map(|v| v * scale), 0.0, DEFAULT_DELTA0)?);
        let jk = (1..=s.k_max as i64)
            .into_par_iter()
            .map(|k| build_jk(k, grid.clone()).map(Arc::new))
            .collect::<std::result::Result<_, _>>()?;
        let constants = FunctionalConstants::from_c0(s.tolerances.c0)?.with_m(s.m);
        Ok(Self {
            grid,
            ops,
            base,
            jk,
            constants,
        })
    }

    /// Integrates budget data times `multiplier` over `horizon·λ^{-1/3}` with
    /// a step fitted to the initial velocity.
    pub fn budget_run(&self, s: &Settings, mu: f64, nu: f64, multiplier: f64, dump: Option<&Path>) -> Result<(NonlinearRun, NonlinearOutput)> {
        let f0 = budget_initial_data(self.grid.clone(), s.k_max, mu, nu, s.m, (s.eps[0], s.eps[1]), multiplier)?;
        let dt = NonlinearRun::field_dt(mu, nu, &self.ops, &f0, &self.base, s.cfl)?;
        let run = NonlinearRun {
            mu,
            nu,
            constants: self.constants,
            dt,
            t_final: s.horizon * mu.min(nu).powf(-1.0 / 3.0),
            sample_every: s.sample_every,
            advection: true,
        };
        let stepper = NonlinearStepper::new(self.ops.clone(), run, self.base.clone())?;
        let out = run_nonlinear(&f0, &stepper, &self.jk, dump)?;
        Ok((run, out))
    }
}

/// Largest of `ℰ_θ(t)/ℰ_θ(0)` and `ℰ_ω(t)/ℰ_ω(0)`.
pub fn max_energy_ratio(out: &NonlinearOutput) -> f64 {
    let e0 = &out.records[0].energies;
    out.records
        .iter()
        .map(|r| {
            (r.energies.script_e_theta() / e0.script_e_theta()).max(r.energies.script_e_omega() / e0.script_e_omega())
        })
        .fold(0.0, f64::max)
}

fn bit_equal(a: &FlowField, b: &FlowField) -> bool {
    let same = |x: &[cbl_core::ComplexVec], y: &[cbl_core::ComplexVec]| {
        x.len() == y.len()
            && x.iter().zip(y).all(|(u, v)| {
                u.len() == v.len() && u.iter().zip(v.iter()).all(|(p, q)| p.re.to_bits() == q.re.to_bits() && p.im.to_bits() == q.im.to_bits())
            })
    };
    a.t.to_bits() == b.t.to_bits() && same(a.omega_modes(), b.omega_modes()) && same(a.theta_modes(), b.theta_modes())
}

pub fn run(s: &Settings, staging: &Path) -> Result<Outcome> {
    let tol = s.tolerances;
    let (mu, nu) = (s.mu[0], s.nu[0]);
    let setup = NonlinearSetup::new(s)?;
    let dump = staging.join("last_good.cblb");
    let (run, result) = match setup.budget_run(s, mu, nu, 1.0, Some(&dump)) {
        Ok(r) => r,
        Err(HarnessError::Numerical { message, .. }) => {
            let files = if dump.exists() { vec!["last_good.cblb".to_string()] } else { vec![] };
            return Err(HarnessError::Numerical { message, files });
        }
        Err(e) => return Err(e),
    };

    let mut out = Outcome::default();
    let mut t = Table::new(
        "timeseries.csv",
        &["t", "script_e_theta", "script_e_omega", "nonzero_omega", "enstrophy", "theta_mean", "zero_mode_imag"],
    );
    for r in &result.records {
        t.push(vec![
            r.energies.t.into(),
            r.energies.script_e_theta().into(),
            r.energies.script_e_omega().into(),
            r.nonzero_omega.into(),
            r.enstrophy.into(),
            r.theta_mean.into(),
            r.zero_mode_imag.into(),
        ]);
    }
    out.tables.push(t);

    let ratio = max_energy_ratio(&result);
    out.check(
        NONLINEAR_STABILITY,
        format!("largest aggregate energy ratio, mu={mu:e} nu={nu:e}"),
        result.classification == Classification::Stable,
        ratio,
        format!("<= {} (stable)", cbl_core::nonlinear::STABILITY_FACTOR),
    );
    let times = result.times();
    let q: Vec<f64> = result.records.iter().map(|r| r.nonzero_omega).collect();
    let required = tol.rate_fraction * setup.constants.delta1 * run.lambda().powf(1.0 / 3.0);
    let rate = fit_decay_series(&times, &q, (0.25 * run.t_final, run.t_final))
        .map(|f| f.rate)
        .unwrap_or(f64::NAN);
    out.check(
        NONLINEAR_DECAY_RATE,
        "fitted decay rate of the nonzero-mode vorticity energy",
        rate >= required,
        rate,
        format!(">= {required:.6e}"),
    );

    let ckpt = staging.join("final.cblb");
    write_checkpoint(&ckpt, &result.final_field, mu, nu)?;
    out.files.push("final.cblb".into());
    let back = read_checkpoint(&ckpt)?;
    let exact = bit_equal(&back.field, &result.final_field) && back.mu == mu && back.nu == nu;
    out.check(CHECKPOINT_ROUND_TRIP, "final checkpoint reloads bit-exactly", exact, exact as i64 as f64, "1");

    out.info("dt", run.dt);
    out.info("t_final", run.t_final);
    out.info("steps", (run.t_final / run.dt).ceil());
    out.info("classification", result.classification.as_str());
    out.plots.push(
        PlotSpec::new("nonzero_energy.svg", "timeseries.csv", "t", "nonzero_omega", "nonzero-mode vorticity energy")
            .log(false, true),
    );
    out.plots.push(
        PlotSpec::new("aggregate_energy.svg", "timeseries.csv", "t", "script_e_omega", "aggregate vorticity energy")
            .log(false, true),
    );

    if s.consistency {
        consistency(s, &setup, run, &mut out)?;
    }
    Ok(out)
}

fn consistency(s: &Settings, setup: &NonlinearSetup, run: NonlinearRun, out: &mut Outcome) -> Result<()> {
    let tol = s.tolerances;
    let g = &setup.grid;
    let plain = FunctionalConstants {
        c_alpha: 0.0,
        c_beta: 0.0,
        ..setup.constants
    };
    let cx = |v: &cbl_core::RealVec| v.map(|x| Complex64::new(x, 0.0));

    // x-independent data against the exact heat semigroup.
    let dt = 0.005;
    let heat = NonlinearRun {
        dt,
        t_final: 100.0 * dt,
        constants: plain,
        ..run
    };
    let st = NonlinearStepper::new(setup.ops.clone(), heat, setup.base.clone())?;
    let w0 = g.sample(|y| (PI * (y + 1.0)).sin() + 0.3 * (1.0 - y * y) * y);
    let t0 = g.sample(|y| (PI * (y + 1.0) / 2.0).sin());
    let mut f = FlowField::zeros(g.clone(), s.k_max);
    f.set_mode(0, cx(&w0), cx(&t0))?;
    f.refresh_psi(&setup.ops)?;
    for _ in 0..100 {
        f = st.step(&f)?;
    }
    let we = heat_evolve(g, &w0, run.mu, f.t)?;
    let te = heat_evolve(g, &t0, run.nu, f.t)?;
    let err = (f.omega(0).map(|z| z.re) - we).amax().max((f.theta(0).map(|z| z.re) - te).amax());
    out.check(
        NONLINEAR_HEAT_ORACLE,
        "max deviation from the heat oracles after 100 steps",
        err <= tol.heat_oracle,
        err,
        format!("<= {:e}", tol.heat_oracle),
    );

    // Zero data stays exactly zero.
    let mut z = FlowField::zeros(g.clone(), s.k_max);
    for _ in 0..20 {
        z = st.step(&z)?;
    }
    let zmax = z
        .omega_modes()
        .iter()
        .chain(z.theta_modes())
        .map(|v| v.camax())
        .fold(0.0, f64::max);
    out.check(NONLINEAR_ZERO_DATA, "largest entry after 20 steps from zero", zmax == 0.0, zmax, "0 exactly");

    // Nonlinear minus linear evolution against the data size.
    let amps = [1e-3, 1e-4, 1e-5];
    let dev_dt = run.dt.min(0.025);
    let devs: Vec<f64> = amps
        .par_iter()
        .map(|&a| -> Result<f64> {
            let f0 = budget_initial_data(g.clone(), s.k_max, 1.0, 1.0, s.m, (a, a), 1.0)?;
            let full = NonlinearRun {
                dt: dev_dt,
                t_final: 5.0,
                constants: plain,
                sample_every: 10,
                ..run
            };
            let lin = NonlinearRun { advection: false, ..full };
            let a = run_nonlinear(&f0, &NonlinearStepper::new(setup.ops.clone(), full, setup.base.clone())?, &[], None)?;
            let b = run_nonlinear(&f0, &NonlinearStepper::new(setup.ops.clone(), lin, setup.base.clone())?, &[], None)?;
            let mut d = 0.0;
            for k in 0..=s.k_max {
                d += g.norm_sq(&(a.final_field.omega(k) - b.final_field.omega(k)))
                    + g.norm_sq(&(a.final_field.theta(k) - b.final_field.theta(k)));
            }
            Ok(d.sqrt())
        })
        .collect::<Result<_>>()?;
    let slope = loglog_fit(&amps, &devs).map_or(f64::NAN, |f| f.slope);
    out.check(
        NONLINEAR_QUADRATIC_DEVIATION,
        "log-log slope of nonlinear-linear deviation vs amplitude",
        super::within(slope, 2.0, tol.deviation_slope),
        slope,
        format!("2 ± {}", tol.deviation_slope),
    );
    let mut t = Table::new("deviation.csv", &["amplitude", "deviation"]);
    for (a, d) in amps.iter().zip(&devs) {
        t.push(vec![(*a).into(), (*d).into()]);
    }
    out.tables.push(t);
    Ok(())
}
