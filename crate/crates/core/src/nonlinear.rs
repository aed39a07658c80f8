//! Pseudo-spectral solver for the full `σ = 1` perturbation system
//!
//! ```text
//! ∂_t ω = −U∂_xω + U″∂_xψ − u·∇ω + μΔω − ∂_xθ
//! ∂_t θ = −U∂_xθ − u·∇θ + νΔθ,     Δψ = ω,   u = (∂_yψ, −∂_xψ)
//! ```
//!
//! Fourier in `x` (modes `0..=K` stored, negative modes by conjugation),
//! Chebyshev collocation in `y`. Products are formed on `3K + 1` points in `x`
//! and on a 3/2-padded Gauss–Lobatto grid in `y`, so quadratic terms are free
//! of aliasing for every stored mode.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::base_flow::BaseFlow;
use crate::cheb::{resample, ChebTransform};
use crate::energy::{aggregate_script_energies, AggregateParams, EnergyBreakdown, FunctionalConstants, ModeView};
use crate::error::{CblError, Result};
use crate::grid::{ChannelGrid, ComplexVec};
use crate::jk::JkOperator;
use crate::linear::{resolution_floor, ImplicitSolve, ARS_DELTA, ARS_GAMMA};
use crate::poisson::ModePoissonSolver;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Advective CFL limit for [`NonlinearStepper`].
pub const NONLINEAR_CFL_LIMIT: f64 = 0.5;
/// Growth factor separating stable from unstable runs.
pub const STABILITY_FACTOR: f64 = 10.0;

/// Modes `k = 0..=K` of `ω` and `θ`, with a cached stream function.
#[derive(Debug, Clone)]
pub struct FlowField {
    grid: Arc<ChannelGrid>,
    pub t: f64,
    omega: Vec<ComplexVec>,
    theta: Vec<ComplexVec>,
    psi: Vec<ComplexVec>,
    psi_valid: bool,
}

impl FlowField {
    pub fn zeros(grid: Arc<ChannelGrid>, k_max: usize) -> Self {
        let z = vec![ComplexVec::zeros(grid.len()); k_max + 1];
        Self {
            grid,
            t: 0.0,
            omega: z.clone(),
            theta: z.clone(),
            psi: z,
            psi_valid: true,
        }
    }

    pub fn grid(&self) -> &Arc<ChannelGrid> {
        &self.grid
    }

    pub fn k_max(&self) -> usize {
        self.omega.len() - 1
    }

    pub fn omega(&self, k: usize) -> &ComplexVec {
        &self.omega[k]
    }

    pub fn theta(&self, k: usize) -> &ComplexVec {
        &self.theta[k]
    }

    pub fn omega_modes(&self) -> &[ComplexVec] {
        &self.omega
    }

    pub fn theta_modes(&self) -> &[ComplexVec] {
        &self.theta
    }

    pub fn psi_valid(&self) -> bool {
        self.psi_valid
    }

    pub fn psi(&self, k: usize) -> Result<&ComplexVec> {
        if !self.psi_valid {
            return Err(CblError::StaleCache);
        }
        Ok(&self.psi[k])
    }

    /// Replaces mode `k`, pinning walls and, for `k = 0`, dropping imaginary
    /// parts. Invalidates the `ψ` cache.
    pub fn set_mode(&mut self, k: usize, omega: ComplexVec, theta: ComplexVec) -> Result<()> {
        if k > self.k_max() {
            return Err(CblError::InvalidParameter {
                name: "k",
                value: k as f64,
                reason: "beyond the stored range",
            });
        }
        self.grid.check_len(omega.len())?;
        self.grid.check_len(theta.len())?;
        self.omega[k] = omega;
        self.theta[k] = theta;
        restore_invariants(&mut self.omega[k], k);
        restore_invariants(&mut self.theta[k], k);
        self.psi_valid = false;
        Ok(())
    }

    pub fn refresh_psi(&mut self, ops: &SpectralOps) -> Result<()> {
        for k in 0..=self.k_max() {
            self.psi[k] = ops.solve_psi(k, &self.omega[k])?;
        }
        self.psi_valid = true;
        Ok(())
    }

    /// Largest `|Im|` over the zero modes of `ω` and `θ`.
    pub fn zero_mode_imag(&self) -> f64 {
        self.omega[0].iter().chain(self.theta[0].iter()).map(|z| z.im.abs()).fold(0.0, f64::max)
    }

    /// Largest wall value over all modes.
    pub fn boundary_defect(&self) -> f64 {
        let n = self.grid.n_y();
        self.omega
            .iter()
            .chain(&self.theta)
            .flat_map(|f| [f[0].norm(), f[n].norm()])
            .fold(0.0, f64::max)
    }

    /// `Σ_k ∫|ω_k|²` over all signed modes.
    pub fn enstrophy(&self) -> f64 {
        self.omega
            .iter()
            .enumerate()
            .map(|(k, f)| if k == 0 { 1.0 } else { 2.0 } * self.grid.norm_sq(f))
            .sum()
    }

    /// `∫∫θ dx dy` over one period.
    pub fn theta_mean(&self) -> f64 {
        let re = self.theta[0].map(|z| z.re);
        2.0 * std::f64::consts::PI * self.grid.integrate(&re)
    }

    fn is_finite(&self) -> bool {
        self.omega
            .iter()
            .chain(&self.theta)
            .all(|f| f.iter().all(|z| z.re.is_finite() && z.im.is_finite()))
    }
}

fn restore_invariants(f: &mut ComplexVec, k: usize) {
    let n = f.len() - 1;
    f[0] = ZERO;
    f[n] = ZERO;
    if k == 0 {
        for z in f.iter_mut() {
            z.im = 0.0;
        }
    }
}

/// Which field is advected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Omega,
    Theta,
}

/// Transforms and Poisson solvers shared read-only across steps and runs.
#[derive(Clone)]
pub struct SpectralOps {
    grid: Arc<ChannelGrid>,
    k_max: usize,
    nx: usize,
    cheb: ChebTransform,
    cheb_pad: ChebTransform,
    fft_fwd: Arc<dyn Fft<f64>>,
    fft_inv: Arc<dyn Fft<f64>>,
    zero_poisson: ImplicitSolve,
    poisson: Vec<ModePoissonSolver>,
}

impl std::fmt::Debug for SpectralOps {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralOps")
            .field("n_y", &self.grid.n_y())
            .field("k_max", &self.k_max)
            .field("nx", &self.nx)
            .finish()
    }
}

impl SpectralOps {
    pub fn new(grid: Arc<ChannelGrid>, k_max: usize) -> Result<Self> {
        let n = grid.n_y();
        let nx = 3 * k_max + 1;
        let mut planner = FftPlanner::new();
        let m = n - 1;
        let zero_poisson = ImplicitSolve::from_interior(grid.d2().view((1, 1), (m, m)).into_owned())?;
        let poisson = (1..=k_max)
            .map(|k| ModePoissonSolver::new(k as i64, grid.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            k_max,
            nx,
            cheb: ChebTransform::new(n),
            cheb_pad: ChebTransform::new(3 * n / 2),
            fft_fwd: planner.plan_fft_forward(nx),
            fft_inv: planner.plan_fft_inverse(nx),
            zero_poisson,
            poisson,
            grid,
        })
    }

    pub fn grid(&self) -> &Arc<ChannelGrid> {
        &self.grid
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// Number of collocation points in `x`.
    pub fn nx(&self) -> usize {
        self.nx
    }

    /// `Δ_k ψ = ω` with `ψ(±1) = 0`; for `k = 0` this is `∂²_yψ₀ = ω₀`.
    pub fn solve_psi(&self, k: usize, omega: &ComplexVec) -> Result<ComplexVec> {
        if k == 0 {
            Ok(self.zero_poisson.solve(omega))
        } else {
            self.poisson[k - 1].solve(omega)
        }
    }

    fn check_field(&self, field: &FlowField) -> Result<()> {
        if field.k_max() != self.k_max || field.grid.n_y() != self.grid.n_y() {
            return Err(CblError::LengthMismatch {
                expected: self.k_max + 1,
                got: field.k_max() + 1,
            });
        }
        if !field.psi_valid {
            return Err(CblError::StaleCache);
        }
        Ok(())
    }

    /// Padded physical samples of `Σ_k c_k e^{ikx}` with `c_{-k} = conj(c_k)`;
    /// rows are padded `y` nodes, columns `x` nodes.
    fn to_physical(&self, modes: &[ComplexVec]) -> DMatrix<f64> {
        let padded: Vec<Vec<Complex64>> = modes
            .iter()
            .map(|f| resample(&self.cheb, &self.cheb_pad, f.as_slice()))
            .collect();
        let mp = self.cheb_pad.n() + 1;
        let mut out = DMatrix::zeros(mp, self.nx);
        let mut buf = vec![ZERO; self.nx];
        for j in 0..mp {
            buf.iter_mut().for_each(|z| *z = ZERO);
            for (k, p) in padded.iter().enumerate() {
                if k == 0 {
                    buf[0] = Complex64::new(p[j].re, 0.0);
                } else {
                    buf[k] = p[j];
                    buf[self.nx - k] = p[j].conj();
                }
            }
            self.fft_inv.process(&mut buf);
            for (x, z) in buf.iter().enumerate() {
                out[(j, x)] = z.re;
            }
        }
        out
    }

    /// Modes `0..=K` of a padded physical field, truncated back to `n_y`.
    fn to_modes(&self, phys: &DMatrix<f64>) -> Vec<ComplexVec> {
        let mp = phys.nrows();
        let mut coeffs = vec![vec![ZERO; mp]; self.k_max + 1];
        let mut buf = vec![ZERO; self.nx];
        let scale = 1.0 / self.nx as f64;
        for j in 0..mp {
            for (x, z) in buf.iter_mut().enumerate() {
                *z = Complex64::new(phys[(j, x)], 0.0);
            }
            self.fft_fwd.process(&mut buf);
            for (k, c) in coeffs.iter_mut().enumerate() {
                c[j] = buf[k] * scale;
            }
        }
        coeffs
            .iter()
            .map(|c| ComplexVec::from_vec(resample(&self.cheb_pad, &self.cheb, c)))
            .collect()
    }

    /// `(u·∇ω, u·∇θ)` for every stored mode, plus `(max|u₁|, max|u₂|)` on the
    /// padded grid.
    pub fn advection_all(&self, field: &FlowField) -> Result<(Vec<ComplexVec>, Vec<ComplexVec>, (f64, f64))> {
        self.check_field(field)?;
        let g = &self.grid;
        let ik = |k: usize| Complex64::new(0.0, k as f64);
        let dx = |f: &[ComplexVec]| -> Vec<ComplexVec> { f.iter().enumerate().map(|(k, v)| v * ik(k)).collect() };
        let dy = |f: &[ComplexVec]| -> Vec<ComplexVec> { f.iter().map(|v| g.diff(v)).collect() };
        let psi_y = self.to_physical(&dy(&field.psi));
        let psi_x = self.to_physical(&dx(&field.psi));
        let max_u = (psi_y.amax(), psi_x.amax());
        let adv = |f: &[ComplexVec]| {
            let fx = self.to_physical(&dx(f));
            let fy = self.to_physical(&dy(f));
            let prod = psi_y.component_mul(&fx) - psi_x.component_mul(&fy);
            let mut modes = self.to_modes(&prod);
            modes[0].iter_mut().for_each(|z| z.im = 0.0);
            modes
        };
        Ok((adv(&field.omega), adv(&field.theta), max_u))
    }

    /// The `k`-th Fourier coefficient of `u·∇f`.
    pub fn advection_mode(&self, field: &FlowField, k: usize, target: Target) -> Result<ComplexVec> {
        if k > self.k_max {
            return Err(CblError::InvalidParameter {
                name: "k",
                value: k as f64,
                reason: "beyond the stored range",
            });
        }
        let (a, b, _) = self.advection_all(field)?;
        Ok(match target {
            Target::Omega => a[k].clone(),
            Target::Theta => b[k].clone(),
        })
    }
}

/// Reference `O(K² n_y)` convolution
/// `Σ_ℓ [∂_yψ_{k−ℓ}·iℓ f_ℓ − i(k−ℓ)ψ_{k−ℓ}·∂_y f_ℓ]` with pointwise products on
/// the collocation grid (no padding).
pub fn advection_direct(field: &FlowField, k: i64, target: Target) -> Result<ComplexVec> {
    if !field.psi_valid {
        return Err(CblError::StaleCache);
    }
    let g = &field.grid;
    let kk = field.k_max() as i64;
    let f = match target {
        Target::Omega => &field.omega,
        Target::Theta => &field.theta,
    };
    let get = |modes: &[ComplexVec], j: i64| -> ComplexVec {
        let v = &modes[j.unsigned_abs() as usize];
        if j < 0 {
            v.map(|z| z.conj())
        } else {
            v.clone()
        }
    };
    let mut out = ComplexVec::zeros(g.len());
    for l in -kk..=kk {
        let q = k - l;
        if q.abs() > kk {
            continue;
        }
        let fl = get(f, l);
        let pq = get(&field.psi, q);
        let dpq = g.diff(&pq);
        let dfl = g.diff(&fl);
        for j in 0..g.len() {
            out[j] += dpq[j] * Complex64::new(0.0, l as f64) * fl[j] - Complex64::new(0.0, q as f64) * pq[j] * dfl[j];
        }
    }
    Ok(out)
}

/// Physical and numerical parameters of a nonlinear run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinearRun {
    pub mu: f64,
    pub nu: f64,
    pub constants: FunctionalConstants,
    pub dt: f64,
    pub t_final: f64,
    pub sample_every: usize,
    /// When false the quadratic terms are dropped (the linearized system).
    pub advection: bool,
}

impl NonlinearRun {
    pub fn lambda(&self) -> f64 {
        self.mu.min(self.nu)
    }

    /// `T = 2λ^{-1/3}`.
    pub fn classification_horizon(mu: f64, nu: f64) -> f64 {
        2.0 * mu.min(nu).powf(-1.0 / 3.0)
    }

    /// `min(cfl/(K max|U|), 0.05λ^{-1/3})`.
    pub fn default_dt(mu: f64, nu: f64, k_max: usize, base: &BaseFlow, cfl: f64) -> f64 {
        let adv = (k_max.max(1) as f64) * base.max_abs_u().max(1.0);
        (cfl / adv).min(0.05 * mu.min(nu).powf(-1.0 / 3.0))
    }

    /// [`Self::default_dt`] further limited by the perturbation velocity of
    /// `field`, so that the initial state meets the CFL target.
    pub fn field_dt(mu: f64, nu: f64, ops: &SpectralOps, field: &FlowField, base: &BaseFlow, cfl: f64) -> Result<f64> {
        let mut f = field.clone();
        if !f.psi_valid {
            f.refresh_psi(ops)?;
        }
        let (_, _, (u1, u2)) = ops.advection_all(&f)?;
        let k = ops.k_max as f64;
        let ny = ops.grid.n_y() as f64;
        let rate = k * (base.max_abs_u() + u1) + u2 * k.max(ny * ny / 2.0);
        Ok(Self::default_dt(mu, nu, ops.k_max, base, cfl).min(cfl / rate.max(1e-300)))
    }

    pub fn validate(&self, n_y: usize) -> Result<()> {
        for (name, v) in [("mu", self.mu), ("nu", self.nu), ("dt", self.dt), ("t_final", self.t_final)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CblError::InvalidParameter {
                    name,
                    value: v,
                    reason: "must be positive",
                });
            }
        }
        if self.sample_every == 0 {
            return Err(CblError::InvalidParameter {
                name: "sample_every",
                value: 0.0,
                reason: "must be nonzero",
            });
        }
        let required = resolution_floor(self.lambda());
        if n_y < required {
            return Err(CblError::UnderResolved {
                n_y,
                required,
                diffusivity: self.lambda(),
            });
        }
        Ok(())
    }
}

/// IMEX stepper bound to one step size.
#[derive(Debug, Clone)]
pub struct NonlinearStepper {
    ops: Arc<SpectralOps>,
    base: Arc<BaseFlow>,
    run: NonlinearRun,
    omega_solve: Vec<ImplicitSolve>,
    theta_solve: Vec<ImplicitSolve>,
}

impl NonlinearStepper {
    pub fn new(ops: Arc<SpectralOps>, run: NonlinearRun, base: Arc<BaseFlow>) -> Result<Self> {
        run.validate(ops.grid.n_y())?;
        ops.grid.check_len(base.u.len())?;
        let h = ARS_GAMMA * run.dt;
        let mk = |c: f64| {
            (0..=ops.k_max)
                .map(|k| ImplicitSolve::new(&ops.grid, c, (k * k) as f64, h))
                .collect::<Result<Vec<_>>>()
        };
        Ok(Self {
            omega_solve: mk(run.mu)?,
            theta_solve: mk(run.nu)?,
            ops,
            base,
            run,
        })
    }

    pub fn run(&self) -> &NonlinearRun {
        &self.run
    }

    pub fn ops(&self) -> &Arc<SpectralOps> {
        &self.ops
    }

    fn explicit(&self, field: &FlowField) -> Result<(Vec<ComplexVec>, Vec<ComplexVec>)> {
        let k_max = self.ops.k_max;
        let n = self.ops.grid.len();
        let (adv_o, adv_t, max_u) = if self.run.advection {
            self.ops.advection_all(field)?
        } else {
            let z = vec![ComplexVec::zeros(n); k_max + 1];
            (z.clone(), z, (0.0, 0.0))
        };
        let ny = self.ops.grid.n_y() as f64;
        let measured = self.run.dt
            * (k_max as f64 * (self.base.max_abs_u() + max_u.0) + max_u.1 * (k_max as f64).max(ny * ny / 2.0));
        if measured > NONLINEAR_CFL_LIMIT {
            return Err(CblError::Cfl {
                measured,
                limit: NONLINEAR_CFL_LIMIT,
            });
        }
        let (u, u2) = (&self.base.u, &self.base.u2);
        let mut eo = Vec::with_capacity(k_max + 1);
        let mut et = Vec::with_capacity(k_max + 1);
        for k in 0..=k_max {
            let ik = Complex64::new(0.0, k as f64);
            let (om, th, ps) = (&field.omega[k], &field.theta[k], &field.psi[k]);
            eo.push(ComplexVec::from_fn(n, |j, _| {
                -ik * u[j] * om[j] + ik * u2[j] * ps[j] - adv_o[k][j] - ik * th[j]
            }));
            et.push(ComplexVec::from_fn(n, |j, _| -ik * u[j] * th[j] - adv_t[k][j]));
        }
        Ok((eo, et))
    }

    /// One ARS(2,2,2) step; the input must carry a valid `ψ` cache and the
    /// output does.
    pub fn step(&self, field: &FlowField) -> Result<FlowField> {
        self.ops.check_field(field)?;
        let (dt, g, d) = (self.run.dt, ARS_GAMMA, ARS_DELTA);
        let c = |a: f64| Complex64::new(a * dt, 0.0);
        let (eo0, et0) = self.explicit(field)?;

        let mut y1 = field.clone();
        y1.t = field.t + g * dt;
        let mut lo = Vec::with_capacity(eo0.len());
        let mut lt = Vec::with_capacity(eo0.len());
        for k in 0..=self.ops.k_max {
            let ro = &field.omega[k] + &eo0[k] * c(g);
            let rt = &field.theta[k] + &et0[k] * c(g);
            y1.omega[k] = self.omega_solve[k].solve(&ro);
            y1.theta[k] = self.theta_solve[k].solve(&rt);
            restore_invariants(&mut y1.omega[k], k);
            restore_invariants(&mut y1.theta[k], k);
            lo.push((&y1.omega[k] - &ro) / c(g));
            lt.push((&y1.theta[k] - &rt) / c(g));
        }
        y1.refresh_psi(&self.ops)?;
        let (eo1, et1) = self.explicit(&y1)?;

        let mut next = field.clone();
        next.t = field.t + dt;
        for k in 0..=self.ops.k_max {
            let ro = &field.omega[k] + &eo0[k] * c(d) + &eo1[k] * c(1.0 - d) + &lo[k] * c(1.0 - g);
            let rt = &field.theta[k] + &et0[k] * c(d) + &et1[k] * c(1.0 - d) + &lt[k] * c(1.0 - g);
            next.omega[k] = self.omega_solve[k].solve(&ro);
            next.theta[k] = self.theta_solve[k].solve(&rt);
            restore_invariants(&mut next.omega[k], k);
            restore_invariants(&mut next.theta[k], k);
        }
        if !next.is_finite() {
            return Err(CblError::NonFinite { t: next.t });
        }
        next.refresh_psi(&self.ops)?;
        debug_assert!(next.zero_mode_imag() <= 1e-12);
        debug_assert!(next.boundary_defect() == 0.0);
        Ok(next)
    }
}

/// Convenience single step; builds the implicit factorizations each call.
pub fn nonlinear_step(field: &FlowField, ops: Arc<SpectralOps>, run: NonlinearRun, base: Arc<BaseFlow>) -> Result<FlowField> {
    NonlinearStepper::new(ops, run, base)?.step(field)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Stable,
    Unstable,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Classification::Stable => "stable",
            Classification::Unstable => "unstable",
        }
    }
}

/// Diagnostics at one sample time.
#[derive(Debug, Clone)]
pub struct NonlinearRecord {
    pub energies: EnergyBreakdown,
    /// `Σ_{k≠0}|k|^{2m}E_{ω,k}` without the time weight.
    pub nonzero_omega: f64,
    pub enstrophy: f64,
    pub theta_mean: f64,
    pub zero_mode_imag: f64,
}

#[derive(Debug, Clone)]
pub struct NonlinearOutput {
    pub records: Vec<NonlinearRecord>,
    pub final_field: FlowField,
    pub classification: Classification,
}

impl NonlinearOutput {
    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.energies.t).collect()
    }
}

/// `ℰ_θ(t) ≤ 10ℰ_θ(0)` and `ℰ_ω(t) ≤ 10ℰ_ω(0)` at every sample.
pub fn classify(records: &[NonlinearRecord]) -> Classification {
    let Some(first) = records.first() else {
        return Classification::Stable;
    };
    let (t0, w0) = (first.energies.script_e_theta(), first.energies.script_e_omega());
    let ok = records.iter().all(|r| {
        r.energies.script_e_theta() <= STABILITY_FACTOR * t0 && r.energies.script_e_omega() <= STABILITY_FACTOR * w0
    });
    if ok {
        Classification::Stable
    } else {
        Classification::Unstable
    }
}

fn record(field: &FlowField, jk: &[Arc<JkOperator>], run: &NonlinearRun) -> Result<NonlinearRecord> {
    let g = &field.grid;
    let views: Vec<ModeView<'_>> = (1..=field.k_max())
        .map(|k| ModeView {
            k: k as i64,
            omega: &field.omega[k],
            theta: &field.theta[k],
            psi: &field.psi[k],
            jk: jk.get(k - 1).map(|a| a.as_ref()),
        })
        .collect();
    let params = AggregateParams { mu: run.mu, nu: run.nu };
    let energies = aggregate_script_energies(g, (&field.omega[0], &field.theta[0]), &views, field.t, &params, &run.constants)?;
    Ok(NonlinearRecord {
        nonzero_omega: energies.nonzero_omega_sum(run.constants.m),
        energies,
        enstrophy: field.enstrophy(),
        theta_mean: field.theta_mean(),
        zero_mode_imag: field.zero_mode_imag(),
    })
}

/// Integrates to `run.t_final`, sampling every `run.sample_every` steps and at
/// the end. `jk[k-1]` must be `𝔍_k` for `k = 1..=K` when `c_α` or `c_β` is
/// nonzero. On a non-finite state the last good field is written to `dump`
/// (if given) before the error is returned.
pub fn run_nonlinear(
    field0: &FlowField,
    stepper: &NonlinearStepper,
    jk: &[Arc<JkOperator>],
    dump: Option<&Path>,
) -> Result<NonlinearOutput> {
    let run = stepper.run;
    let mut field = field0.clone();
    if !field.psi_valid {
        field.refresh_psi(&stepper.ops)?;
    }
    let steps = ((run.t_final / run.dt) - 1e-9).ceil().max(1.0) as usize;
    let mut records = vec![record(&field, jk, &run)?];
    for n in 1..=steps {
        match stepper.step(&field) {
            Ok(next) => field = next,
            Err(e) => {
                if let (CblError::NonFinite { .. }, Some(path)) = (&e, dump) {
                    write_checkpoint(path, &field, run.mu, run.nu)?;
                    log::error!("non-finite state after t = {:.6e}; last good state written to {}", field.t, path.display());
                }
                return Err(e);
            }
        }
        if n % run.sample_every == 0 || n == steps {
            records.push(record(&field, jk, &run)?);
        }
    }
    let classification = classify(&records);
    Ok(NonlinearOutput {
        records,
        final_field: field,
        classification,
    })
}

/// `Σ_{j≤1} ‖(c^{1/3}∂_y)^j ⟨∂_x⟩^{m−j/3} f‖_{L²(𝕋×[-1,1])}` for a real field
/// given by its modes `k ≥ 0`.
pub fn budget_norm(grid: &ChannelGrid, modes: &[ComplexVec], coeff: f64, m: f64) -> f64 {
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    for (k, f) in modes.iter().enumerate() {
        let mult = if k == 0 { 1.0 } else { 2.0 };
        let bracket = 1.0 + (k * k) as f64;
        s0 += mult * bracket.powf(m) * grid.norm_sq(f);
        s1 += mult * bracket.powf(m - 1.0 / 3.0) * coeff.powf(2.0 / 3.0) * grid.norm_sq(&grid.diff(f));
    }
    let tp = 2.0 * std::f64::consts::PI;
    (tp * s0).sqrt() + (tp * s1).sqrt()
}

/// Initial data saturating the smallness hypotheses, times `multiplier`:
/// `ω_k, θ_k ∝ k^{−m} sin(π(y+1))` for `k = 1..=4`, scaled so the vorticity norm
/// equals `ε₀ min(μ^{1/2}, ν^{1/2})` and the temperature norm `ε₁ min(μ, ν)`.
pub fn budget_initial_data(
    grid: Arc<ChannelGrid>,
    k_max: usize,
    mu: f64,
    nu: f64,
    m: f64,
    eps: (f64, f64),
    multiplier: f64,
) -> Result<FlowField> {
    if k_max < 4 {
        return Err(CblError::InvalidParameter {
            name: "k_max",
            value: k_max as f64,
            reason: "initial data occupies k = 1..4",
        });
    }
    let profile = grid.sample_complex(|y| Complex64::new((std::f64::consts::PI * (y + 1.0)).sin(), 0.0));
    let modes: Vec<ComplexVec> = (0..=k_max)
        .map(|k| {
            if (1..=4).contains(&k) {
                &profile * Complex64::new((k as f64).powf(-m), 0.0)
            } else {
                ComplexVec::zeros(grid.len())
            }
        })
        .collect();
    let w_target = multiplier * eps.0 * mu.sqrt().min(nu.sqrt());
    let t_target = multiplier * eps.1 * mu.min(nu);
    let w_scale = w_target / budget_norm(&grid, &modes, mu, m);
    let t_scale = t_target / budget_norm(&grid, &modes, nu, m);
    let mut field = FlowField::zeros(grid, k_max);
    for (k, f) in modes.iter().enumerate() {
        field.set_mode(k, f * Complex64::new(w_scale, 0.0), f * Complex64::new(t_scale, 0.0))?;
    }
    Ok(field)
}

const MAGIC: &[u8; 4] = b"CBLB";
/// Checkpoint layout version.
pub const CHECKPOINT_VERSION: u32 = 1;

/// Writes `magic, version, K, n_y, μ, ν, t` then `ω` and `θ` mode blocks
/// (row-major, `re, im` pairs), all little-endian. Written to a sibling
/// temporary file and renamed into place.
pub fn write_checkpoint(path: &Path, field: &FlowField, mu: f64, nu: f64) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(field.k_max() as u64).to_le_bytes());
    buf.extend_from_slice(&(field.grid.n_y() as u64).to_le_bytes());
    for v in [mu, nu, field.t] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for block in [&field.omega, &field.theta] {
        for f in block.iter() {
            for z in f.iter() {
                buf.extend_from_slice(&z.re.to_le_bytes());
                buf.extend_from_slice(&z.im.to_le_bytes());
            }
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub field: FlowField,
    pub mu: f64,
    pub nu: f64,
}

/// Reads a checkpoint; `ψ` is left stale.
pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |m: &str| CblError::Checkpoint(m.to_string());
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated"))?;
        pos += n;
        Ok(s)
    };
    if take(4)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let k_max = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let n_y = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let mut f64s = |n: usize| -> Result<Vec<f64>> {
        (0..n)
            .map(|_| Ok(f64::from_le_bytes(take(8)?.try_into().unwrap())))
            .collect()
    };
    let head = f64s(3)?;
    let body_len = 2 * (k_max + 1) * (n_y + 1) * 2;
    if k_max > 1 << 20 || n_y > 1 << 20 {
        return Err(bad("implausible header"));
    }
    let body = f64s(body_len)?;
    if pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    let grid = Arc::new(ChannelGrid::new(n_y)?);
    let mut field = FlowField::zeros(grid, k_max);
    field.t = head[2];
    let mut it = body.chunks_exact(2).map(|c| Complex64::new(c[0], c[1]));
    for block in [&mut field.omega, &mut field.theta] {
        for f in block.iter_mut() {
            for z in f.iter_mut() {
                *z = it.next().expect("length checked");
            }
        }
    }
    field.psi_valid = false;
    Ok(Checkpoint {
        field,
        mu: head[0],
        nu: head[1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base_flow::heat_evolve;
    use std::f64::consts::PI;

    fn setup(n: usize, k_max: usize) -> (Arc<ChannelGrid>, Arc<SpectralOps>) {
        let g = Arc::new(ChannelGrid::new(n).unwrap());
        let ops = Arc::new(SpectralOps::new(g.clone(), k_max).unwrap());
        (g, ops)
    }

    fn run(mu: f64, nu: f64, dt: f64, t_final: f64) -> NonlinearRun {
        NonlinearRun {
            mu,
            nu,
            constants: FunctionalConstants {
                c_alpha: 0.0,
                c_beta: 0.0,
                ..Default::default()
            },
            dt,
            t_final,
            sample_every: 10,
            advection: true,
        }
    }

    fn poly(g: &ChannelGrid, a: f64, b: f64, c: f64) -> ComplexVec {
        g.sample_complex(|y| Complex64::new(a * (1.0 - y * y) * (1.0 + b * y), c * (1.0 - y * y) * y * y))
    }

    #[test]
    fn zero_field_has_zero_advection() {
        let (g, ops) = setup(16, 3);
        let f = FlowField::zeros(g, 3);
        let (a, b, u) = ops.advection_all(&f).unwrap();
        assert!(a.iter().chain(&b).all(|v| v.camax() == 0.0));
        assert_eq!(u, (0.0, 0.0));
    }

    #[test]
    fn x_independent_field_does_not_self_advect() {
        let (g, ops) = setup(24, 2);
        let mut f = FlowField::zeros(g.clone(), 2);
        f.set_mode(0, poly(&g, 1.0, 0.3, 0.0), poly(&g, 0.5, -0.2, 0.0)).unwrap();
        assert!(matches!(ops.advection_all(&f), Err(CblError::StaleCache)));
        f.refresh_psi(&ops).unwrap();
        let (a, b, _) = ops.advection_all(&f).unwrap();
        assert!(a.iter().chain(&b).all(|v| v.camax() == 0.0));
    }

    #[test]
    fn pseudo_spectral_matches_direct_convolution() {
        let (g, ops) = setup(32, 3);
        let mut f = FlowField::zeros(g.clone(), 3);
        f.set_mode(0, poly(&g, 0.4, 0.1, 0.0), poly(&g, 0.2, 0.5, 0.0)).unwrap();
        f.set_mode(1, poly(&g, 1.0, 0.5, 0.3), poly(&g, -0.3, 0.2, 0.7)).unwrap();
        f.set_mode(2, poly(&g, 0.2, -0.4, 0.1), poly(&g, 0.6, 0.0, -0.2)).unwrap();
        f.set_mode(3, poly(&g, 0.1, 0.2, -0.5), poly(&g, 0.3, 0.1, 0.2)).unwrap();
        f.refresh_psi(&ops).unwrap();
        for target in [Target::Omega, Target::Theta] {
            for k in 0..=3 {
                let a = ops.advection_mode(&f, k, target).unwrap();
                let b = advection_direct(&f, k as i64, target).unwrap();
                let err = (&a - &b).camax() / b.camax().max(1e-300);
                assert!(err < 1e-8, "k={k} {err}");
            }
        }
    }

    #[test]
    fn zero_perturbation_stays_zero() {
        let (g, ops) = setup(32, 4);
        let base = Arc::new(BaseFlow::couette(&g));
        let st = NonlinearStepper::new(ops, run(1e-2, 1e-2, 0.05, 1.0), base).unwrap();
        let mut f = FlowField::zeros(g, 4);
        for _ in 0..20 {
            f = st.step(&f).unwrap();
        }
        assert!(f.omega_modes().iter().chain(f.theta_modes()).all(|v| v.camax() == 0.0));
    }

    #[test]
    fn zero_mode_follows_heat_flow() {
        let (g, ops) = setup(48, 2);
        let base = Arc::new(BaseFlow::couette(&g));
        let (mu, nu, dt) = (1e-2, 2e-2, 0.005);
        let st = NonlinearStepper::new(ops.clone(), run(mu, nu, dt, 1.0), base).unwrap();
        let w0 = g.sample(|y| (PI * (y + 1.0)).sin() + 0.3 * (1.0 - y * y) * y);
        let t0 = g.sample(|y| (PI * (y + 1.0) / 2.0).sin());
        let cx = |v: &crate::grid::RealVec| v.map(|x| Complex64::new(x, 0.0));
        let mut f = FlowField::zeros(g.clone(), 2);
        f.set_mode(0, cx(&w0), cx(&t0)).unwrap();
        f.refresh_psi(&ops).unwrap();
        for _ in 0..100 {
            f = st.step(&f).unwrap();
        }
        let t = 100.0 * dt;
        let we = heat_evolve(&g, &w0, mu, t).unwrap();
        let te = heat_evolve(&g, &t0, nu, t).unwrap();
        let ew = (f.omega(0).map(|z| z.re) - we).amax();
        let et = (f.theta(0).map(|z| z.re) - te).amax();
        assert!(ew < 1e-8 && et < 1e-8, "{ew} {et}");
        assert_eq!(f.zero_mode_imag(), 0.0);
        assert!(f.omega(1).camax() == 0.0);
    }

    #[test]
    fn cfl_and_validation() {
        let (g, ops) = setup(32, 4);
        let base = Arc::new(BaseFlow::couette(&g));
        assert!(NonlinearStepper::new(ops.clone(), run(1e-2, 1e-2, 0.0, 1.0), base.clone()).is_err());
        assert!(matches!(
            NonlinearStepper::new(ops.clone(), run(1e-6, 1e-2, 0.05, 1.0), base.clone()),
            Err(CblError::UnderResolved { .. })
        ));
        let st = NonlinearStepper::new(ops.clone(), run(1e-2, 1e-2, 0.2, 1.0), base).unwrap();
        let f = FlowField::zeros(g, 4);
        assert!(matches!(st.step(&f), Err(CblError::Cfl { .. })));
    }

    #[test]
    fn budget_data_hits_budget() {
        let g = Arc::new(ChannelGrid::new(32).unwrap());
        let f = budget_initial_data(g.clone(), 5, 1e-3, 4e-3, 1.0, (0.01, 0.02), 1.0).unwrap();
        let wn = budget_norm(&g, f.omega_modes(), 1e-3, 1.0);
        let tn = budget_norm(&g, f.theta_modes(), 4e-3, 1.0);
        assert!((wn - 0.01 * 1e-3f64.sqrt()).abs() < 1e-15);
        assert!((tn - 0.02 * 1e-3).abs() < 1e-17);
        assert_eq!(f.omega(5).camax(), 0.0);
        assert!(f.omega(1)[4].re.abs() > f.omega(2)[4].re.abs());
        assert!(budget_initial_data(g, 3, 1e-3, 1e-3, 1.0, (0.01, 0.01), 1.0).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let g = Arc::new(ChannelGrid::new(16).unwrap());
        let mut f = FlowField::zeros(g.clone(), 2);
        f.t = 1.0 / 3.0;
        f.set_mode(1, poly(&g, 0.1, 0.7, 1e-300), poly(&g, -3.3, 0.2, 0.1)).unwrap();
        let dir = std::env::temp_dir().join(format!("cbl-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("state.cblb");
        write_checkpoint(&p, &f, 1e-3, 2e-3).unwrap();
        let c = read_checkpoint(&p).unwrap();
        assert_eq!((c.mu, c.nu, c.field.t), (1e-3, 2e-3, f.t));
        for k in 0..=2 {
            assert_eq!(c.field.omega(k), f.omega(k));
            assert_eq!(c.field.theta(k), f.theta(k));
        }
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(read_checkpoint(&p), Err(CblError::Checkpoint(_))));
        std::fs::write(&p, b"XXXX").unwrap();
        assert!(matches!(read_checkpoint(&p), Err(CblError::Checkpoint(_))));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn classifier() {
        assert_eq!(classify(&[]), Classification::Stable);
    }
}
