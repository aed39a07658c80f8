//! Coercive energy functionals, dissipation functionals and their weighted
//! aggregates over a spectrum of modes.

use num_complex::Complex64;

use crate::error::{CblError, Result};
use crate::grid::{ChannelGrid, ComplexVec};
use crate::jk::{estimate_operator_norm, JkOperator};

/// Forcing constant used when none is configured: 1.2× the smallest value for
/// which the vorticity-energy forcing bound held along `σ = 0` runs with
/// `μ = ν ∈ {1e-2, 1e-3}`, mixed `(μ, ν)` pairs, `k ∈ {1, 2, 4, 8}`,
/// `‖W_in‖_{H⁴} = 0.01`, `n_y = 128`, horizon `4ν^{-1/3}` (largest needed: 76.94).
pub const DEFAULT_C0: f64 = 92.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FunctionalConstants {
    pub c0: f64,
    pub c_alpha: f64,
    pub c_beta: f64,
    pub delta1: f64,
    pub m: f64,
    pub poincare_c0: f64,
}

impl FunctionalConstants {
    pub fn from_c0(c0: f64) -> Result<Self> {
        if !(c0 > 0.0 && c0.is_finite()) {
            return Err(CblError::InvalidParameter {
                name: "C0",
                value: c0,
                reason: "must be positive",
            });
        }
        let poincare_c0 = (std::f64::consts::PI / 2.0).powi(2);
        Ok(Self {
            c0,
            c_alpha: (4.0 / c0).min(1.0),
            c_beta: (1.0 / (16.0 * c0)).min(1.0),
            delta1: (0.125f64).min(poincare_c0 / 4.0),
            m: 1.0,
            poincare_c0,
        })
    }

    pub fn with_m(mut self, m: f64) -> Self {
        self.m = m;
        self
    }

    /// Rejects constants for which `E_{ω,k}` could lose positivity given the
    /// measured `L²_w → L²_w` norm of `𝔍_k`.
    pub fn check_positivity_guard(&self, jk_norm: f64) -> Result<()> {
        if self.c_alpha * jk_norm > 64.0 {
            return Err(CblError::InvalidParameter {
                name: "c_alpha",
                value: self.c_alpha,
                reason: "c_alpha·‖J_k‖ exceeds 64",
            });
        }
        if self.c_beta * jk_norm > 2.0 {
            return Err(CblError::InvalidParameter {
                name: "c_beta",
                value: self.c_beta,
                reason: "c_beta·‖J_k‖ exceeds 2",
            });
        }
        Ok(())
    }
}

impl Default for FunctionalConstants {
    fn default() -> Self {
        Self::from_c0(DEFAULT_C0).expect("default constant is valid")
    }
}

/// Full-grid weighted norm of `𝔍_k`, the one that controls `Re⟨f, 𝔍_k f⟩` for
/// functions that need not vanish at the walls.
pub fn jk_full_norm(op: &JkOperator) -> f64 {
    estimate_operator_norm(op.matrix(), op.grid().quad_weights().as_slice(), None).value
}

fn kpow(k: i64, p: f64) -> f64 {
    (k.unsigned_abs() as f64).powf(p)
}

fn check_mode(grid: &ChannelGrid, k: i64, f: &ComplexVec) -> Result<()> {
    if k == 0 {
        return Err(CblError::ZeroWavenumber);
    }
    grid.check_len(f.len())
}

/// `Re⟨ik f, ∂_y f⟩`.
fn cross_term(grid: &ChannelGrid, k: i64, f: &ComplexVec, df: &ComplexVec) -> f64 {
    let ikf = f * Complex64::new(0.0, k as f64);
    grid.inner_unchecked(&ikf, df).re
}

/// `16‖θ‖² + ν^{2/3}|k|^{-2/3}‖θ'‖² + ν^{1/3}|k|^{-4/3} Re⟨ikθ, θ'⟩`.
pub fn energy_theta_k(grid: &ChannelGrid, k: i64, theta: &ComplexVec, nu: f64) -> Result<f64> {
    check_mode(grid, k, theta)?;
    let d = grid.diff(theta);
    Ok(16.0 * grid.norm_sq(theta)
        + nu.powf(2.0 / 3.0) * kpow(k, -2.0 / 3.0) * grid.norm_sq(&d)
        + nu.powf(1.0 / 3.0) * kpow(k, -4.0 / 3.0) * cross_term(grid, k, theta, &d))
}

/// Bounds `15.5‖θ‖² + ½w‖θ'‖² ≤ E_{θ,k} ≤ 16.5‖θ‖² + 3/2·w‖θ'‖²` with
/// `w = ν^{2/3}|k|^{-2/3}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoercivityWindow {
    pub lower: f64,
    pub energy: f64,
    pub upper: f64,
}

impl CoercivityWindow {
    pub fn holds(&self) -> bool {
        let slack = 1e-12 * self.upper.abs();
        self.lower <= self.energy + slack && self.energy <= self.upper + slack
    }
}

pub fn coercivity_window(grid: &ChannelGrid, k: i64, theta: &ComplexVec, nu: f64) -> Result<CoercivityWindow> {
    let energy = energy_theta_k(grid, k, theta, nu)?;
    let n0 = grid.norm_sq(theta);
    let n1 = grid.norm_sq(&grid.diff(theta));
    let w = nu.powf(2.0 / 3.0) * kpow(k, -2.0 / 3.0);
    Ok(CoercivityWindow {
        lower: 15.5 * n0 + 0.5 * w * n1,
        energy,
        upper: 16.5 * n0 + 1.5 * w * n1,
    })
}

/// Which vorticity functional: the form without the `c_β` term, or the
/// modified form used for the `σ = 1` system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OmegaForm {
    Linear,
    Modified,
}

/// Individual terms of `E_{ω,k}`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OmegaTerms {
    pub l2: f64,
    pub gradient: f64,
    pub cross: f64,
    pub jk: f64,
    pub jk_gradient: f64,
}

impl OmegaTerms {
    pub fn total(&self) -> f64 {
        self.l2 + self.gradient + self.cross + self.jk + self.jk_gradient
    }
}

pub fn energy_omega_terms(
    grid: &ChannelGrid,
    k: i64,
    omega: &ComplexVec,
    mu: f64,
    constants: &FunctionalConstants,
    jk: Option<&JkOperator>,
    form: OmegaForm,
) -> Result<OmegaTerms> {
    check_mode(grid, k, omega)?;
    let d = grid.diff(omega);
    let w = kpow(k, -2.0 / 3.0) * mu.powf(2.0 / 3.0);
    let mut t = OmegaTerms {
        l2: 128.0 * grid.norm_sq(omega),
        gradient: 4.0 * w * grid.norm_sq(&d),
        cross: mu.powf(1.0 / 3.0) * kpow(k, -4.0 / 3.0) * cross_term(grid, k, omega, &d),
        ..Default::default()
    };
    let needs_jk = constants.c_alpha != 0.0 || (form == OmegaForm::Modified && constants.c_beta != 0.0);
    if needs_jk {
        let op = jk.ok_or(CblError::InvalidParameter {
            name: "jk",
            value: k as f64,
            reason: "operator required when c_alpha or c_beta is nonzero",
        })?;
        if op.k() != k {
            return Err(CblError::InvalidParameter {
                name: "jk",
                value: op.k() as f64,
                reason: "operator built for a different wavenumber",
            });
        }
        t.jk = constants.c_alpha * op.quadratic_form(omega)?;
        if form == OmegaForm::Modified {
            t.jk_gradient = constants.c_beta * w * op.quadratic_form(&d)?;
        }
    }
    Ok(t)
}

pub fn energy_omega_k(
    grid: &ChannelGrid,
    k: i64,
    omega: &ComplexVec,
    mu: f64,
    constants: &FunctionalConstants,
    jk: Option<&JkOperator>,
    form: OmegaForm,
) -> Result<f64> {
    Ok(energy_omega_terms(grid, k, omega, mu, constants, jk, form)?.total())
}

/// `Dis_{θ,1..3}` and `Dis_{ω,1..5}` with `∇_k = (ik, ∂_y)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dissipation {
    pub theta: [f64; 3],
    pub omega: [f64; 5],
}

/// `(‖∇_k f‖², ‖∂_y ∇_k f‖²)`.
fn grad_k_norms(grid: &ChannelGrid, k: i64, f: &ComplexVec) -> (f64, f64, f64) {
    let k2 = (k * k) as f64;
    let d = grid.diff(f);
    let d2 = grid.diff2(f);
    let n0 = grid.norm_sq(f);
    let n1 = grid.norm_sq(&d);
    let n2 = grid.norm_sq(&d2);
    (n0, k2 * n0 + n1, k2 * n1 + n2)
}

pub fn dissipation_components(
    grid: &ChannelGrid,
    k: i64,
    omega: &ComplexVec,
    theta: &ComplexVec,
    psi: &ComplexVec,
    mu: f64,
    nu: f64,
) -> Result<Dissipation> {
    check_mode(grid, k, omega)?;
    grid.check_len(theta.len())?;
    grid.check_len(psi.len())?;
    let (t0, t1, t2) = grad_k_norms(grid, k, theta);
    let (w0, w1, w2) = grad_k_norms(grid, k, omega);
    let (_, p1, p2) = grad_k_norms(grid, k, psi);
    let k2 = (k * k) as f64;
    Ok(Dissipation {
        theta: [
            nu * t1,
            nu.powf(5.0 / 3.0) * kpow(k, -2.0 / 3.0) * t2,
            nu.powf(1.0 / 3.0) * kpow(k, 2.0 / 3.0) * t0,
        ],
        omega: [
            mu * w1,
            mu.powf(5.0 / 3.0) * kpow(k, -2.0 / 3.0) * w2,
            mu.powf(1.0 / 3.0) * kpow(k, 2.0 / 3.0) * w0,
            k2 * p1,
            mu.powf(2.0 / 3.0) * kpow(k, 4.0 / 3.0) * p2,
        ],
    })
}

/// `‖f‖² + c^{2/3}|k|^{-2/3}‖f'‖²`.
pub fn phi_initial(grid: &ChannelGrid, k: i64, f: &ComplexVec, coeff: f64) -> Result<f64> {
    check_mode(grid, k, f)?;
    let d = grid.diff(f);
    Ok(grid.norm_sq(f) + coeff.powf(2.0 / 3.0) * kpow(k, -2.0 / 3.0) * grid.norm_sq(&d))
}

/// Parameters of the aggregate functionals; `λ = min(μ, ν)` is derived.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateParams {
    pub mu: f64,
    pub nu: f64,
}

impl AggregateParams {
    pub fn lambda(&self) -> f64 {
        self.mu.min(self.nu)
    }
}

/// One stored mode `k ≥ 1`; its Hermitian partner `−k` is implied.
#[derive(Debug, Clone, Copy)]
pub struct ModeView<'a> {
    pub k: i64,
    pub omega: &'a ComplexVec,
    pub theta: &'a ComplexVec,
    pub psi: &'a ComplexVec,
    pub jk: Option<&'a JkOperator>,
}

/// Per-mode values and the weighted aggregates.
#[derive(Debug, Clone, Default)]
pub struct EnergyBreakdown {
    pub t: f64,
    pub ks: Vec<i64>,
    pub e_theta: Vec<f64>,
    pub e_omega: Vec<f64>,
    pub cross_theta: Vec<f64>,
    pub cross_omega: Vec<f64>,
    pub dissipation: Vec<Dissipation>,
    pub script_e_theta_zero: f64,
    pub script_e_theta_nonzero: f64,
    pub script_e_omega_zero: f64,
    pub script_e_omega_nonzero: f64,
    pub script_d_theta_zero: f64,
    pub script_d_theta_nonzero: f64,
    pub script_d_omega_zero: f64,
    pub script_d_omega_nonzero: f64,
}

impl EnergyBreakdown {
    pub fn script_e_theta(&self) -> f64 {
        self.script_e_theta_zero + self.script_e_theta_nonzero
    }

    pub fn script_e_omega(&self) -> f64 {
        self.script_e_omega_zero + self.script_e_omega_nonzero
    }

    pub fn script_d_theta(&self) -> f64 {
        self.script_d_theta_zero + self.script_d_theta_nonzero
    }

    pub fn script_d_omega(&self) -> f64 {
        self.script_d_omega_zero + self.script_d_omega_nonzero
    }

    /// `Σ_{k≠0} |k|^{2m} E_{ω,k}` without the time weight.
    pub fn nonzero_omega_sum(&self, m: f64) -> f64 {
        2.0 * self
            .ks
            .iter()
            .zip(&self.e_omega)
            .map(|(k, e)| kpow(*k, 2.0 * m) * e)
            .sum::<f64>()
    }
}

/// Zero-mode weights `e^{2δ₁λt}` and nonzero-mode weights `e^{2δ₁λ^{1/3}t}`;
/// the nonzero sums count each stored mode twice (`±k`).
pub fn aggregate_script_energies(
    grid: &ChannelGrid,
    zero: (&ComplexVec, &ComplexVec),
    modes: &[ModeView<'_>],
    t: f64,
    params: &AggregateParams,
    constants: &FunctionalConstants,
) -> Result<EnergyBreakdown> {
    let (mu, nu) = (params.mu, params.nu);
    let lam = params.lambda();
    let w0 = (2.0 * constants.delta1 * lam * t).exp();
    let wn = (2.0 * constants.delta1 * lam.powf(1.0 / 3.0) * t).exp();
    let (omega0, theta0) = zero;
    grid.check_len(omega0.len())?;
    grid.check_len(theta0.len())?;

    let mut out = EnergyBreakdown {
        t,
        ..Default::default()
    };
    let th1 = grid.norm_sq(&grid.diff(theta0));
    let om1 = grid.norm_sq(&grid.diff(omega0));
    out.script_e_theta_zero = w0 * (16.0 * grid.norm_sq(theta0) + nu.powf(2.0 / 3.0) * th1);
    out.script_e_omega_zero = w0 * (128.0 * grid.norm_sq(omega0) + 4.0 * mu.powf(2.0 / 3.0) * om1);
    out.script_d_theta_zero =
        w0 * (32.0 * nu * th1 + 2.0 * nu.powf(5.0 / 3.0) * grid.norm_sq(&grid.diff2(theta0)));
    out.script_d_omega_zero =
        w0 * (256.0 * mu * om1 + 8.0 * mu.powf(5.0 / 3.0) * grid.norm_sq(&grid.diff2(omega0)));

    let (mut et, mut eo, mut dt, mut dw) = (0.0, 0.0, 0.0, 0.0);
    for mv in modes {
        if mv.k <= 0 {
            return Err(CblError::InvalidParameter {
                name: "k",
                value: mv.k as f64,
                reason: "stored modes must have k ≥ 1",
            });
        }
        let e_t = energy_theta_k(grid, mv.k, mv.theta, nu)?;
        let terms = energy_omega_terms(grid, mv.k, mv.omega, mu, constants, mv.jk, OmegaForm::Modified)?;
        let dis = dissipation_components(grid, mv.k, mv.omega, mv.theta, mv.psi, mu, nu)?;
        let weight = 2.0 * kpow(mv.k, 2.0 * constants.m);
        et += weight * e_t;
        eo += weight * terms.total();
        dt += weight * dis.theta.iter().sum::<f64>();
        dw += weight * dis.omega.iter().sum::<f64>();
        let dth = grid.diff(mv.theta);
        out.cross_theta
            .push(nu.powf(1.0 / 3.0) * kpow(mv.k, -4.0 / 3.0) * cross_term(grid, mv.k, mv.theta, &dth));
        out.cross_omega.push(terms.cross);
        out.ks.push(mv.k);
        out.e_theta.push(e_t);
        out.e_omega.push(terms.total());
        out.dissipation.push(dis);
    }
    out.script_e_theta_nonzero = wn * et;
    out.script_e_omega_nonzero = wn * eo;
    out.script_d_theta_nonzero = wn * dt;
    out.script_d_omega_nonzero = wn * dw;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jk::build_jk;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn sine(grid: &ChannelGrid) -> ComplexVec {
        grid.sample_complex(|y| Complex64::new((PI * (y + 1.0) / 2.0).sin(), 0.0))
    }

    #[test]
    fn constants_structure() {
        let c = FunctionalConstants::from_c0(8.0).unwrap();
        assert_eq!(c.c_alpha, 0.5);
        assert_eq!(c.c_beta, 1.0 / 128.0);
        assert_eq!(FunctionalConstants::default().c0, DEFAULT_C0);
        assert_eq!(c.delta1, 0.125);
        let small = FunctionalConstants::from_c0(0.01).unwrap();
        assert_eq!((small.c_alpha, small.c_beta), (1.0, 1.0));
        assert!(FunctionalConstants::from_c0(-1.0).is_err());
        assert!(c.check_positivity_guard(2.0).is_ok());
        assert!(small.check_positivity_guard(3.0).is_err());
    }

    #[test]
    fn theta_energy_examples() {
        let g = ChannelGrid::new(64).unwrap();
        let s = sine(&g);
        assert_abs_diff_eq!(energy_theta_k(&g, 1, &s, 1.0).unwrap(), 16.0 + (PI / 2.0).powi(2), epsilon = 1e-10);
        assert_abs_diff_eq!(energy_theta_k(&g, 1, &s, 1.0).unwrap(), 18.4674, epsilon = 1e-4);
        assert_eq!(energy_theta_k(&g, 2, &ComplexVec::zeros(65), 0.1).unwrap(), 0.0);
        let d = g.diff(&s);
        assert!(cross_term(&g, 3, &s, &d).abs() < 1e-10);
        assert!(energy_theta_k(&g, 0, &s, 1.0).is_err());
    }

    #[test]
    fn omega_energy_examples() {
        let g = Arc::new(ChannelGrid::new(64).unwrap());
        let s = sine(&g);
        let mut c = FunctionalConstants::default();
        c.c_alpha = 0.0;
        c.c_beta = 0.0;
        let e = energy_omega_k(&g, 1, &s, 1.0, &c, None, OmegaForm::Modified).unwrap();
        assert_abs_diff_eq!(e, 128.0 + 4.0 * (PI / 2.0).powi(2), epsilon = 1e-9);
        assert_abs_diff_eq!(e, 137.870, epsilon = 1e-3);

        let op = build_jk(2, g.clone()).unwrap();
        let full = FunctionalConstants::default();
        let norm = jk_full_norm(&op);
        let f = g.sample_complex(|y| Complex64::new((1.0 - y * y) * (2.0 * y).cos(), (1.0 - y * y) * y));
        let q = op.quadratic_form(&f).unwrap();
        assert!(q.abs() <= norm * g.norm_sq(&f) * (1.0 + 1e-9));
        assert!(energy_omega_k(&g, 2, &f, 0.1, &full, None, OmegaForm::Linear).is_err());
        let lin = energy_omega_terms(&g, 2, &f, 0.1, &full, Some(&op), OmegaForm::Linear).unwrap();
        assert_eq!(lin.jk_gradient, 0.0);
        assert_abs_diff_eq!(lin.jk, full.c_alpha * q, epsilon = 1e-14);
    }

    #[test]
    fn dissipation_examples() {
        let g = ChannelGrid::new(32).unwrap();
        let z = ComplexVec::zeros(33);
        let d = dissipation_components(&g, 1, &z, &z, &z, 0.1, 0.1).unwrap();
        assert_eq!(d, Dissipation::default());
        let psi = g.sample_complex(|y| Complex64::new(1.0 - y * y, 0.0));
        let d = dissipation_components(&g, 1, &z, &z, &psi, 0.1, 0.1).unwrap();
        assert_abs_diff_eq!(d.omega[3], 56.0 / 15.0, epsilon = 1e-12);
        let om = g.sample_complex(|y| Complex64::new(y.cos() * (1.0 - y * y), 0.3 * y));
        let a = dissipation_components(&g, 3, &om, &om, &psi, 0.01, 0.02).unwrap();
        let b = dissipation_components(&g, 3, &(&om * Complex64::new(2.0, 0.0)), &om, &psi, 0.01, 0.02).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(b.omega[i], 4.0 * a.omega[i], epsilon = 1e-12 * b.omega[i].abs().max(1.0));
        }
    }

    #[test]
    fn phi_examples() {
        let g = ChannelGrid::new(64).unwrap();
        let s = sine(&g);
        assert_abs_diff_eq!(phi_initial(&g, 1, &s, 1.0).unwrap(), 1.0 + (PI / 2.0).powi(2), epsilon = 1e-10);
        assert!(phi_initial(&g, 1, &s, 1.0).unwrap() >= phi_initial(&g, 1, &s, 1e-3).unwrap());
        assert_eq!(phi_initial(&g, 1, &ComplexVec::zeros(65), 1.0).unwrap(), 0.0);
    }

    #[test]
    fn aggregate_weights() {
        let g = ChannelGrid::new(32).unwrap();
        let z = ComplexVec::zeros(33);
        let c = FunctionalConstants {
            c_alpha: 0.0,
            c_beta: 0.0,
            ..Default::default()
        };
        let p = AggregateParams { mu: 1e-2, nu: 1e-3 };
        let e = aggregate_script_energies(&g, (&z, &z), &[], 1.0, &p, &c).unwrap();
        assert_eq!(e.script_e_theta() + e.script_e_omega() + e.script_d_theta() + e.script_d_omega(), 0.0);

        let th = g.sample_complex(|y| Complex64::new(1.0 - y * y, 0.0));
        let view = |k| ModeView {
            k,
            omega: &z,
            theta: &th,
            psi: &z,
            jk: None,
        };
        let t = 2.0;
        let e1 = aggregate_script_energies(&g, (&z, &z), &[view(1)], t, &p, &c).unwrap();
        let wn = (2.0 * c.delta1 * p.lambda().powf(1.0 / 3.0) * t).exp();
        let et1 = energy_theta_k(&g, 1, &th, p.nu).unwrap();
        assert_abs_diff_eq!(e1.script_e_theta_nonzero, 2.0 * wn * et1, epsilon = 1e-12);

        let e3 = aggregate_script_energies(&g, (&z, &z), &[view(3)], t, &p, &c).unwrap();
        let e3m2 = aggregate_script_energies(&g, (&z, &z), &[view(3)], t, &p, &c.with_m(2.0)).unwrap();
        assert_abs_diff_eq!(e3m2.script_e_theta_nonzero / e3.script_e_theta_nonzero, 9.0, epsilon = 1e-12);

        let zero_theta = g.sample_complex(|y| Complex64::new((PI * (y + 1.0) / 2.0).sin(), 0.0));
        let e0 = aggregate_script_energies(&g, (&z, &zero_theta), &[], 0.0, &p, &c).unwrap();
        assert_abs_diff_eq!(
            e0.script_e_theta_zero,
            16.0 + p.nu.powf(2.0 / 3.0) * (PI / 2.0).powi(2),
            epsilon = 1e-10
        );
    }

    #[test]
    fn coercivity_window_on_random_states() {
        use crate::rng::{stream, Rng};
        let g = ChannelGrid::new(48).unwrap();
        let mut r = stream(2024, "coercivity-window");
        for _ in 0..500 {
            let k: i64 = r.random_range(1..=32);
            let nu = 10f64.powf(r.random_range(-5.0..-1.0));
            let c: Vec<(f64, f64)> = (0..8).map(|_| (r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))).collect();
            let th = g.sample_complex(|y| {
                let s: Complex64 = c
                    .iter()
                    .enumerate()
                    .map(|(n, (a, b))| Complex64::new(*a, *b) * (n as f64 * y.acos()).cos())
                    .sum();
                s * (1.0 - y * y)
            });
            assert!(coercivity_window(&g, k, &th, nu).unwrap().holds());
        }
    }
}
