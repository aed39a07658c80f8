//! Per-mode linearized system over a near-Couette base flow:
//!
//! ```text
//! ∂_t ω + ikUω − ikU″ψ − μ(−σk² + ∂²_y)ω = −ikθ
//! ∂_t θ + ikUθ − ν(−σk² + ∂²_y)θ = 0
//! Δ_k ψ = ω,   ω = θ = ψ = 0 at y = ±1
//! ```
//!
//! stepped with the two-stage, second-order, stiffly accurate IMEX
//! Runge–Kutta scheme ARS(2,2,2): dissipation implicit, everything else
//! explicit.

use std::sync::Arc;

use nalgebra::{DMatrix, LU};
use num_complex::Complex64;

use crate::base_flow::{u_antiderivative, BaseFlow, HeatEvolver};
use crate::energy::{dissipation_components, energy_omega_k, energy_theta_k, Dissipation, FunctionalConstants, OmegaForm};
use crate::error::{CblError, Result};
use crate::fit::{linear_fit, LineFit};
use crate::grid::{ChannelGrid, ComplexVec, RealVec};
use crate::jk::JkOperator;
use crate::poisson::ModePoissonSolver;

/// Implicit diagonal coefficient `γ = 1 − 1/√2`.
pub const ARS_GAMMA: f64 = 1.0 - std::f64::consts::FRAC_1_SQRT_2;
/// Explicit weight `δ = 1 − 1/(2γ)`.
pub const ARS_DELTA: f64 = 1.0 - 1.0 / (2.0 * ARS_GAMMA);
/// Advective CFL limit `Δt·|k|·max|U|`.
pub const CFL_LIMIT: f64 = 0.5;

/// Smallest admissible `n_y` for `σ = 0` runs at diffusivity `ν`: `4ν^{-1/4}`.
pub fn resolution_floor(nu: f64) -> usize {
    (4.0 * nu.powf(-0.25)).ceil() as usize
}

#[derive(Debug, Clone)]
pub enum BasePolicy {
    /// `U` fixed at the supplied snapshot.
    Frozen,
    /// `W` re-evolved by the heat flow at every stage time.
    CoEvolving { evolver: Arc<HeatEvolver>, w_in: RealVec },
}

/// Which equations are integrated. `ThetaOnly` and `OmegaOnly` delete the
/// other equation entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActiveFields {
    Both,
    ThetaOnly,
    OmegaOnly,
}

impl ActiveFields {
    fn omega(self) -> bool {
        self != ActiveFields::ThetaOnly
    }

    fn theta(self) -> bool {
        self != ActiveFields::OmegaOnly
    }
}

#[derive(Debug, Clone)]
pub struct LinearState {
    pub t: f64,
    pub omega: ComplexVec,
    pub theta: ComplexVec,
}

impl LinearState {
    pub fn zeros(grid: &ChannelGrid) -> Self {
        Self {
            t: 0.0,
            omega: ComplexVec::zeros(grid.len()),
            theta: ComplexVec::zeros(grid.len()),
        }
    }
}

/// Energy bookkeeping attached to a problem: constants and, when `c_α` or
/// `c_β` is nonzero, the matching `𝔍_k`.
#[derive(Debug, Clone)]
pub struct EnergySetup {
    pub constants: FunctionalConstants,
    pub jk: Option<Arc<JkOperator>>,
}

#[derive(Debug, Clone)]
pub struct LinearModeProblem {
    k: i64,
    sigma: u8,
    mu: f64,
    nu: f64,
    grid: Arc<ChannelGrid>,
    base: Arc<BaseFlow>,
    policy: BasePolicy,
    fields: ActiveFields,
    poisson: Option<Arc<ModePoissonSolver>>,
    energy: Option<EnergySetup>,
    initial: LinearState,
}

impl LinearModeProblem {
    /// Frozen base flow, both equations active, zero initial data.
    pub fn new(grid: Arc<ChannelGrid>, k: i64, sigma: u8, mu: f64, nu: f64, base: Arc<BaseFlow>) -> Result<Self> {
        if k == 0 {
            return Err(CblError::ZeroWavenumber);
        }
        if sigma > 1 {
            return Err(CblError::InvalidParameter {
                name: "sigma",
                value: sigma as f64,
                reason: "must be 0 or 1",
            });
        }
        for (name, v) in [("mu", mu), ("nu", nu)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CblError::InvalidParameter {
                    name,
                    value: v,
                    reason: "must be positive",
                });
            }
        }
        grid.check_len(base.u.len())?;
        if sigma == 0 && grid.n_y() < resolution_floor(nu) {
            return Err(CblError::UnderResolved {
                n_y: grid.n_y(),
                required: resolution_floor(nu),
                diffusivity: nu,
            });
        }
        let poisson = Some(Arc::new(ModePoissonSolver::new(k, grid.clone())?));
        let initial = LinearState::zeros(&grid);
        Ok(Self {
            k,
            sigma,
            mu,
            nu,
            grid,
            base,
            policy: BasePolicy::Frozen,
            fields: ActiveFields::Both,
            poisson,
            energy: None,
            initial,
        })
    }

    pub fn with_fields(mut self, fields: ActiveFields) -> Self {
        self.fields = fields;
        if !fields.omega() {
            self.poisson = None;
        } else if self.poisson.is_none() {
            self.poisson = ModePoissonSolver::new(self.k, self.grid.clone()).ok().map(Arc::new);
        }
        self
    }

    pub fn with_policy(mut self, policy: BasePolicy) -> Result<Self> {
        if let BasePolicy::CoEvolving { evolver, w_in } = &policy {
            self.grid.check_len(w_in.len())?;
            if !Arc::ptr_eq(evolver.grid(), &self.grid) && evolver.grid().n_y() != self.grid.n_y() {
                return Err(CblError::LengthMismatch {
                    expected: self.grid.len(),
                    got: evolver.grid().len(),
                });
            }
        }
        self.policy = policy;
        Ok(self)
    }

    pub fn with_energy(mut self, setup: EnergySetup) -> Result<Self> {
        if let Some(op) = &setup.jk {
            if op.k() != self.k {
                return Err(CblError::InvalidParameter {
                    name: "jk",
                    value: op.k() as f64,
                    reason: "operator built for a different wavenumber",
                });
            }
        }
        self.energy = Some(setup);
        Ok(self)
    }

    /// Sets the initial data; boundary values are pinned to zero.
    pub fn with_initial(mut self, omega: ComplexVec, theta: ComplexVec) -> Result<Self> {
        self.grid.check_len(omega.len())?;
        self.grid.check_len(theta.len())?;
        let mut s = LinearState { t: 0.0, omega, theta };
        pin(&mut s.omega);
        pin(&mut s.theta);
        self.initial = s;
        Ok(self)
    }

    pub fn k(&self) -> i64 {
        self.k
    }

    pub fn sigma(&self) -> u8 {
        self.sigma
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn grid(&self) -> &Arc<ChannelGrid> {
        &self.grid
    }

    pub fn base(&self) -> &Arc<BaseFlow> {
        &self.base
    }

    pub fn fields(&self) -> ActiveFields {
        self.fields
    }

    pub fn initial(&self) -> &LinearState {
        &self.initial
    }

    /// Largest `Δt` allowed by the advective CFL bound.
    pub fn max_dt(&self) -> f64 {
        CFL_LIMIT / (self.k.unsigned_abs() as f64 * self.base.max_abs_u().max(1.0))
    }

    /// `U` and `U″` at time `t` under the configured policy.
    fn base_at(&self, t: f64) -> Result<(RealVec, RealVec)> {
        match &self.policy {
            BasePolicy::Frozen => Ok((self.base.u.clone(), self.base.u2.clone())),
            BasePolicy::CoEvolving { evolver, w_in } => {
                let w = evolver.evolve(w_in, t)?;
                Ok((u_antiderivative(&self.grid, &w), self.grid.d1() * &w))
            }
        }
    }

    fn psi(&self, omega: &ComplexVec) -> Result<ComplexVec> {
        match &self.poisson {
            Some(p) => p.solve(omega),
            None => Ok(ComplexVec::zeros(self.grid.len())),
        }
    }
}

fn pin(f: &mut ComplexVec) {
    let n = f.len();
    f[0] = Complex64::new(0.0, 0.0);
    f[n - 1] = Complex64::new(0.0, 0.0);
}

/// `LU` of the interior block of `I − γΔt·c(∂²_y − σk²)`.
#[derive(Debug, Clone)]
pub(crate) struct ImplicitSolve {
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl ImplicitSolve {
    pub(crate) fn new(grid: &ChannelGrid, coeff: f64, sigma_k2: f64, h: f64) -> Result<Self> {
        let m = grid.n_y() - 1;
        let mut a: DMatrix<f64> = grid.d2().view((1, 1), (m, m)) * (-h * coeff);
        for i in 0..m {
            a[(i, i)] += 1.0 + h * coeff * sigma_k2;
        }
        Self::from_interior(a)
    }

    pub(crate) fn from_interior(a: DMatrix<f64>) -> Result<Self> {
        let lu = a.lu();
        if !lu.is_invertible() {
            return Err(CblError::Singular("implicit dissipation block"));
        }
        Ok(Self { lu })
    }

    /// Interior solve; boundary entries of `rhs` are ignored and zero in the result.
    pub(crate) fn solve(&self, rhs: &ComplexVec) -> ComplexVec {
        let m = rhs.len() - 2;
        let re = rhs.rows(1, m).map(|z| z.re);
        let im = rhs.rows(1, m).map(|z| z.im);
        let xr = self.lu.solve(&re).expect("checked invertible");
        let xi = self.lu.solve(&im).expect("checked invertible");
        let mut out = ComplexVec::zeros(m + 2);
        for i in 0..m {
            out[i + 1] = Complex64::new(xr[i], xi[i]);
        }
        out
    }
}

/// A problem bound to a fixed step size; reuse it across steps.
#[derive(Debug, Clone)]
pub struct LinearStepper<'a> {
    problem: &'a LinearModeProblem,
    dt: f64,
    omega_solve: ImplicitSolve,
    theta_solve: ImplicitSolve,
}

impl<'a> LinearStepper<'a> {
    pub fn new(problem: &'a LinearModeProblem, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(CblError::InvalidParameter {
                name: "dt",
                value: dt,
                reason: "must be positive",
            });
        }
        let measured = dt * problem.k.unsigned_abs() as f64 * problem.base.max_abs_u();
        if measured > CFL_LIMIT {
            return Err(CblError::Cfl {
                measured,
                limit: CFL_LIMIT,
            });
        }
        let sk2 = problem.sigma as f64 * (problem.k * problem.k) as f64;
        let h = ARS_GAMMA * dt;
        Ok(Self {
            problem,
            dt,
            omega_solve: ImplicitSolve::new(&problem.grid, problem.mu, sk2, h)?,
            theta_solve: ImplicitSolve::new(&problem.grid, problem.nu, sk2, h)?,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Explicit right-hand sides `(−ikUω + ikU″ψ − ikθ, −ikUθ)`.
    fn explicit(&self, s: &LinearState, t: f64) -> Result<(ComplexVec, ComplexVec)> {
        let p = self.problem;
        let ik = Complex64::new(0.0, p.k as f64);
        let (u, u2) = p.base_at(t)?;
        let n = p.grid.len();
        let mut eo = ComplexVec::zeros(n);
        let mut et = ComplexVec::zeros(n);
        if p.fields.theta() {
            for j in 0..n {
                et[j] = -ik * u[j] * s.theta[j];
            }
        }
        if p.fields.omega() {
            let shear = u2.iter().any(|v| *v != 0.0);
            let psi = if shear { p.psi(&s.omega)? } else { ComplexVec::zeros(n) };
            for j in 0..n {
                eo[j] = -ik * u[j] * s.omega[j] + ik * u2[j] * psi[j];
                if p.fields.theta() {
                    eo[j] -= ik * s.theta[j];
                }
            }
        }
        Ok((eo, et))
    }

    pub fn step(&self, s: &LinearState) -> Result<LinearState> {
        let p = self.problem;
        let (dt, g, d) = (self.dt, ARS_GAMMA, ARS_DELTA);
        let (eo0, et0) = self.explicit(s, s.t)?;

        let r1o = &s.omega + &eo0 * Complex64::new(g * dt, 0.0);
        let r1t = &s.theta + &et0 * Complex64::new(g * dt, 0.0);
        let y1 = LinearState {
            t: s.t + g * dt,
            omega: if p.fields.omega() { self.omega_solve.solve(&r1o) } else { s.omega.clone() },
            theta: if p.fields.theta() { self.theta_solve.solve(&r1t) } else { s.theta.clone() },
        };
        // L·Y₁ recovered from the stage equation, interior rows only.
        let lo = (&y1.omega - &r1o) / Complex64::new(g * dt, 0.0);
        let lt = (&y1.theta - &r1t) / Complex64::new(g * dt, 0.0);
        let (eo1, et1) = self.explicit(&y1, y1.t)?;

        let c = |a: f64| Complex64::new(a * dt, 0.0);
        let mut next = s.clone();
        next.t = s.t + dt;
        if p.fields.omega() {
            let mut r = &s.omega + &eo0 * c(d) + &eo1 * c(1.0 - d) + &lo * c(1.0 - g);
            pin(&mut r);
            next.omega = self.omega_solve.solve(&r);
        }
        if p.fields.theta() {
            let mut r = &s.theta + &et0 * c(d) + &et1 * c(1.0 - d) + &lt * c(1.0 - g);
            pin(&mut r);
            next.theta = self.theta_solve.solve(&r);
        }
        if next.omega.iter().chain(next.theta.iter()).any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            log::error!("non-finite state in linear step at t = {:.6e}, k = {}", next.t, p.k);
            return Err(CblError::NonFinite { t: next.t });
        }
        Ok(next)
    }
}

/// One IMEX step; builds the implicit factorizations, so prefer
/// [`LinearStepper`] in loops.
pub fn linear_step(problem: &LinearModeProblem, state: &LinearState, dt: f64) -> Result<LinearState> {
    LinearStepper::new(problem, dt)?.step(state)
}

/// Diagnostics at one sample time.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSample {
    pub t: f64,
    pub theta_norm: f64,
    pub dtheta_norm: f64,
    pub omega_norm: f64,
    pub domega_norm: f64,
    pub e_theta: f64,
    pub e_omega: Option<f64>,
    pub dissipation: Dissipation,
    /// `∫₀ᵗ ‖θ‖²` accumulated per step by the trapezoid rule.
    pub theta_sq_integral: f64,
    /// `∫₀ᵗ Dis` per component, same accumulation.
    pub dissipation_integral: Dissipation,
}

#[derive(Debug, Clone)]
pub struct ModeTrajectory {
    pub k: i64,
    pub mu: f64,
    pub nu: f64,
    pub dt: f64,
    pub samples: Vec<ModeSample>,
    pub final_state: LinearState,
}

/// Scalar series a decay rate can be fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayQuantity {
    /// `‖θ‖² + ν^{2/3}|k|^{-2/3}‖∂_yθ‖²`.
    ThetaWeighted,
    ThetaL2,
    ETheta,
    OmegaL2,
}

impl ModeTrajectory {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn series(&self, q: DecayQuantity) -> Vec<f64> {
        let w = self.nu.powf(2.0 / 3.0) * (self.k.unsigned_abs() as f64).powf(-2.0 / 3.0);
        self.samples
            .iter()
            .map(|s| match q {
                DecayQuantity::ThetaWeighted => s.theta_norm.powi(2) + w * s.dtheta_norm.powi(2),
                DecayQuantity::ThetaL2 => s.theta_norm.powi(2),
                DecayQuantity::ETheta => s.e_theta,
                DecayQuantity::OmegaL2 => s.omega_norm.powi(2),
            })
            .collect()
    }

    /// Enhanced-dissipation time scale `ν^{-1/3}|k|^{-2/3}`.
    pub fn tau(&self) -> f64 {
        self.nu.powf(-1.0 / 3.0) * (self.k.unsigned_abs() as f64).powf(-2.0 / 3.0)
    }
}

struct Snapshot {
    theta_norm: f64,
    dtheta_norm: f64,
    omega_norm: f64,
    domega_norm: f64,
    dis: Dissipation,
}

fn snapshot(p: &LinearModeProblem, s: &LinearState) -> Result<Snapshot> {
    let g = &p.grid;
    let psi = p.psi(&s.omega)?;
    Ok(Snapshot {
        theta_norm: g.norm(&s.theta),
        dtheta_norm: g.norm(&g.diff(&s.theta)),
        omega_norm: g.norm(&s.omega),
        domega_norm: g.norm(&g.diff(&s.omega)),
        dis: dissipation_components(g, p.k, &s.omega, &s.theta, &psi, p.mu, p.nu)?,
    })
}

fn add_trapezoid(acc: &mut Dissipation, a: &Dissipation, b: &Dissipation, h: f64) {
    for i in 0..3 {
        acc.theta[i] += 0.5 * h * (a.theta[i] + b.theta[i]);
    }
    for i in 0..5 {
        acc.omega[i] += 0.5 * h * (a.omega[i] + b.omega[i]);
    }
}

fn sample(p: &LinearModeProblem, s: &LinearState, snap: &Snapshot, theta_int: f64, dis_int: Dissipation) -> Result<ModeSample> {
    let g = &p.grid;
    let e_omega = match &p.energy {
        Some(e) if p.fields.omega() => {
            let form = if p.sigma == 0 { OmegaForm::Linear } else { OmegaForm::Modified };
            Some(energy_omega_k(g, p.k, &s.omega, p.mu, &e.constants, e.jk.as_deref(), form)?)
        }
        _ => None,
    };
    Ok(ModeSample {
        t: s.t,
        theta_norm: snap.theta_norm,
        dtheta_norm: snap.dtheta_norm,
        omega_norm: snap.omega_norm,
        domega_norm: snap.domega_norm,
        e_theta: energy_theta_k(g, p.k, &s.theta, p.nu)?,
        e_omega,
        dissipation: snap.dis,
        theta_sq_integral: theta_int,
        dissipation_integral: dis_int,
    })
}

/// Integrates to `t_final` with `⌈t_final/Δt⌉` equal steps (the step is
/// shortened to land on `t_final`), sampling every `sample_every` steps and at
/// the end.
pub fn evolve_mode(problem: &LinearModeProblem, t_final: f64, dt: f64, sample_every: usize) -> Result<ModeTrajectory> {
    if !(t_final > 0.0) || sample_every == 0 {
        return Err(CblError::InvalidParameter {
            name: "t_final",
            value: t_final,
            reason: "horizon must be positive and sample_every nonzero",
        });
    }
    if !(dt > 0.0) {
        return Err(CblError::InvalidParameter {
            name: "dt",
            value: dt,
            reason: "must be positive",
        });
    }
    let steps = ((t_final / dt) - 1e-9).ceil().max(1.0) as usize;
    let h = t_final / steps as f64;
    let stepper = LinearStepper::new(problem, h)?;
    let mut state = problem.initial.clone();
    let mut snap = snapshot(problem, &state)?;
    let mut theta_int = 0.0;
    let mut dis_int = Dissipation::default();
    let mut samples = vec![sample(problem, &state, &snap, theta_int, dis_int)?];
    for n in 1..=steps {
        let next = stepper.step(&state)?;
        let next_snap = snapshot(problem, &next)?;
        theta_int += 0.5 * h * (snap.theta_norm.powi(2) + next_snap.theta_norm.powi(2));
        add_trapezoid(&mut dis_int, &snap.dis, &next_snap.dis, h);
        state = next;
        state.t = n as f64 * h;
        snap = next_snap;
        if n % sample_every == 0 || n == steps {
            samples.push(sample(problem, &state, &snap, theta_int, dis_int)?);
        }
    }
    Ok(ModeTrajectory {
        k: problem.k,
        mu: problem.mu,
        nu: problem.nu,
        dt: h,
        samples,
        final_state: state,
    })
}

/// Result of fitting `q(t) ≈ C e^{−rate·t}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub rate: f64,
    pub r_squared: f64,
    pub samples: usize,
}

/// Least-squares slope of `−ln q` against `t` over `[lo, hi]`.
pub fn fit_decay_series(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<DecayFit> {
    let (lo, hi) = window;
    let mut ts = Vec::new();
    let mut ls = Vec::new();
    for (t, v) in times.iter().zip(values) {
        if *t < lo || *t > hi {
            continue;
        }
        if !(*v > 0.0) {
            return Err(CblError::NonPositiveSample { t: *t, value: *v });
        }
        ts.push(*t);
        ls.push(-v.ln());
    }
    let fit: LineFit = linear_fit(&ts, &ls).ok_or(CblError::EmptyWindow { lo, hi })?;
    Ok(DecayFit {
        rate: fit.slope,
        r_squared: fit.r_squared,
        samples: ts.len(),
    })
}

/// Decay rate of a trajectory quantity. The default window starts at
/// `0.2ν^{-1/3}` and runs to the last sample.
pub fn fit_decay_rate(traj: &ModeTrajectory, quantity: DecayQuantity, window: Option<(f64, f64)>) -> Result<DecayFit> {
    let t_end = traj.samples.last().map(|s| s.t).unwrap_or(0.0);
    let window = window.unwrap_or((0.2 * traj.nu.powf(-1.0 / 3.0), t_end));
    let t0 = traj.samples.first().map(|s| s.t).unwrap_or(0.0);
    if window.0 < t0 - 1e-12 || window.1 > t_end + 1e-9 * t_end.max(1.0) || window.0 >= window.1 {
        return Err(CblError::EmptyWindow {
            lo: window.0,
            hi: window.1,
        });
    }
    fit_decay_series(&traj.times(), &traj.series(quantity), window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base_flow::assemble_base_flow;
    use std::f64::consts::PI;

    fn couette_problem(n: usize, k: i64, sigma: u8, mu: f64, nu: f64) -> LinearModeProblem {
        let g = Arc::new(ChannelGrid::new(n).unwrap());
        let base = Arc::new(BaseFlow::couette(&g));
        LinearModeProblem::new(g, k, sigma, mu, nu, base).unwrap()
    }

    fn half_sine(g: &ChannelGrid) -> ComplexVec {
        g.sample_complex(|y| Complex64::new((PI * (y + 1.0) / 2.0).sin(), 0.0))
    }

    #[test]
    fn tableau() {
        assert!((ARS_GAMMA - 0.292_893_218_813_452_4).abs() < 1e-15);
        assert!((ARS_DELTA + 0.707_106_781_186_547_5).abs() < 1e-15);
    }

    #[test]
    fn validation() {
        let g = Arc::new(ChannelGrid::new(32).unwrap());
        let b = Arc::new(BaseFlow::couette(&g));
        assert!(matches!(
            LinearModeProblem::new(g.clone(), 0, 0, 0.1, 0.1, b.clone()),
            Err(CblError::ZeroWavenumber)
        ));
        assert!(LinearModeProblem::new(g.clone(), 1, 2, 0.1, 0.1, b.clone()).is_err());
        assert!(LinearModeProblem::new(g.clone(), 1, 0, -0.1, 0.1, b.clone()).is_err());
        assert!(matches!(
            LinearModeProblem::new(g.clone(), 1, 0, 0.1, 1e-5, b.clone()),
            Err(CblError::UnderResolved { required: 72, .. })
        ));
        assert!(LinearModeProblem::new(g.clone(), 1, 1, 0.1, 1e-5, b).is_ok());
        let p = couette_problem(32, 2, 0, 0.1, 0.1);
        assert!(matches!(LinearStepper::new(&p, 0.3), Err(CblError::Cfl { .. })));
        assert!(LinearStepper::new(&p, 0.25).is_ok());
        assert!(LinearStepper::new(&p, 0.0).is_err());
    }

    #[test]
    fn zero_state_stays_zero() {
        let p = couette_problem(32, 1, 0, 1e-2, 1e-2);
        let s = LinearState::zeros(p.grid());
        let n = linear_step(&p, &s, 0.05).unwrap();
        assert_eq!(n.omega.camax() + n.theta.camax(), 0.0);
        assert!((n.t - 0.05).abs() < 1e-15);
    }

    #[test]
    fn theta_norm_non_increasing_couette() {
        let p = couette_problem(64, 3, 0, 1e-3, 1e-3).with_fields(ActiveFields::ThetaOnly);
        let g = p.grid().clone();
        let p = p.with_initial(ComplexVec::zeros(g.len()), half_sine(&g)).unwrap();
        let st = LinearStepper::new(&p, 0.05 / 3.0).unwrap();
        let mut s = p.initial().clone();
        let mut prev = g.norm(&s.theta);
        for _ in 0..400 {
            s = st.step(&s).unwrap();
            let now = g.norm(&s.theta);
            assert!(now <= prev + 1e-14, "{now} > {prev}");
            prev = now;
        }
        assert_eq!(s.theta[0], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn omega_decoupled_without_shear_curvature() {
        let p = couette_problem(48, 2, 0, 1e-2, 1e-2).with_fields(ActiveFields::OmegaOnly);
        let g = p.grid().clone();
        let om = g.sample_complex(|y| Complex64::new((1.0 - y * y) * (3.0 * y).sin(), 1.0 - y * y));
        let p = p.with_initial(om, ComplexVec::zeros(g.len())).unwrap();
        let st = LinearStepper::new(&p, 0.025).unwrap();
        let mut s = p.initial().clone();
        let mut prev = g.norm(&s.omega);
        for _ in 0..200 {
            s = st.step(&s).unwrap();
            let now = g.norm(&s.omega);
            assert!(now <= prev + 1e-14);
            prev = now;
        }
    }

    #[test]
    fn one_way_coupling_is_bit_exact() {
        let g = Arc::new(ChannelGrid::new(32).unwrap());
        let w = g.sample(|y| 0.001 * (PI * (y + 1.0)).sin());
        let base = Arc::new(assemble_base_flow(&g, &w, 0.0, 1.0).unwrap());
        let om = g.sample_complex(|y| Complex64::new((1.0 - y * y) * y.exp(), 0.2 * (1.0 - y * y)));
        let both = LinearModeProblem::new(g.clone(), 2, 1, 1e-2, 1e-2, base.clone())
            .unwrap()
            .with_initial(om.clone(), ComplexVec::zeros(g.len()))
            .unwrap();
        let only = both.clone().with_fields(ActiveFields::OmegaOnly);
        let a = evolve_mode(&both, 1.0, 0.02, 10).unwrap();
        let b = evolve_mode(&only, 1.0, 0.02, 10).unwrap();
        assert_eq!(a.final_state.omega, b.final_state.omega);
    }

    #[test]
    fn step_halving_order() {
        let g = Arc::new(ChannelGrid::new(32).unwrap());
        let w = g.sample(|y| 0.01 * (PI * (y + 1.0)).sin());
        let base = Arc::new(assemble_base_flow(&g, &w, 0.0, 1.0).unwrap());
        let om = g.sample_complex(|y| Complex64::new((1.0 - y * y) * y.cos(), 0.0));
        let p = LinearModeProblem::new(g.clone(), 2, 0, 1e-2, 1e-2, base)
            .unwrap()
            .with_initial(om, half_sine(&g))
            .unwrap();
        let run = |dt| evolve_mode(&p, 2.0, dt, 1000).unwrap().final_state;
        let (a, b, c) = (run(0.04), run(0.02), run(0.01));
        let diff = |x: &LinearState, y: &LinearState| {
            (g.norm(&(&x.omega - &y.omega)).powi(2) + g.norm(&(&x.theta - &y.theta)).powi(2)).sqrt()
        };
        let order = (diff(&a, &b) / diff(&b, &c)).log2();
        assert!(order >= 1.8, "order {order}");
    }

    #[test]
    fn energy_theta_monotone_on_couette() {
        let p = couette_problem(64, 1, 0, 1e-3, 1e-3).with_fields(ActiveFields::ThetaOnly);
        let g = p.grid().clone();
        let p = p.with_initial(ComplexVec::zeros(g.len()), half_sine(&g)).unwrap();
        let tr = evolve_mode(&p, 40.0, 0.05, 4).unwrap();
        for w in tr.samples.windows(2) {
            assert!(w[1].e_theta <= w[0].e_theta + 1e-10);
        }
        assert!(tr.samples.last().unwrap().theta_sq_integral > 0.0);
    }

    #[test]
    fn co_evolving_matches_frozen_when_w_vanishes() {
        let p = couette_problem(32, 1, 0, 1e-2, 1e-2).with_fields(ActiveFields::ThetaOnly);
        let g = p.grid().clone();
        let p = p.with_initial(ComplexVec::zeros(g.len()), half_sine(&g)).unwrap();
        let ev = Arc::new(HeatEvolver::new(g.clone(), 1e-2).unwrap());
        let q = p
            .clone()
            .with_policy(BasePolicy::CoEvolving {
                evolver: ev,
                w_in: RealVec::zeros(g.len()),
            })
            .unwrap();
        let a = evolve_mode(&p, 1.0, 0.05, 5).unwrap();
        let b = evolve_mode(&q, 1.0, 0.05, 5).unwrap();
        let d = g.norm(&(&a.final_state.theta - &b.final_state.theta));
        assert!(d < 1e-13, "{d}");
    }

    #[test]
    fn decay_fit_synthetic() {
        let t: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let v: Vec<f64> = t.iter().map(|x| (-2.0 * x).exp()).collect();
        let f = fit_decay_series(&t, &v, (0.0, 5.0)).unwrap();
        assert!((f.rate - 2.0).abs() < 1e-10);
        let c = vec![3.0; t.len()];
        assert!(fit_decay_series(&t, &c, (0.0, 5.0)).unwrap().rate.abs() < 1e-14);
        let mut bad = v.clone();
        bad[10] = 0.0;
        assert!(matches!(fit_decay_series(&t, &bad, (0.0, 5.0)), Err(CblError::NonPositiveSample { .. })));
        assert!(matches!(fit_decay_series(&t, &v, (10.0, 20.0)), Err(CblError::EmptyWindow { .. })));
    }
}
