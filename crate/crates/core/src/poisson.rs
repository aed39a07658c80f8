//! Per-mode Biot–Savart inversion `(∂²_y − k²) ψ_k = ω_k`, `ψ_k(±1) = 0`.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, LU};
use num_complex::Complex64;

use crate::base_flow::check_dirichlet;
use crate::error::{CblError, Result};
use crate::grid::{real_matvec, ChannelGrid, ComplexVec, GaussRule};

/// Closed-form `G_k(y, y')` solving `Δ_k G = δ(y − y')` with Dirichlet data.
///
/// Evaluated through `expm1` so that no hyperbolic function is formed at
/// large `|k|`; depends only on `|k|`.
pub fn greens_gk(k: i64, y: f64, yp: f64) -> Result<f64> {
    if k == 0 {
        return Err(CblError::ZeroWavenumber);
    }
    Ok(gk_abs(k.unsigned_abs() as f64, y, yp))
}

/// `G_k` for real `k > 0`.
pub(crate) fn gk_abs(k: f64, y: f64, yp: f64) -> f64 {
    let (lo, hi) = if y <= yp { (y, yp) } else { (yp, y) };
    let a = k * (1.0 - hi);
    let b = k * (1.0 + lo);
    // sinh(a) sinh(b) / sinh(2k) = e^{a+b-2k} (1-e^{-2a})(1-e^{-2b}) / (2 (1-e^{-4k}))
    let num = (-(-2.0 * a).exp_m1()) * (-(-2.0 * b).exp_m1());
    let den = 2.0 * k * (-(-4.0 * k).exp_m1());
    -(a + b - 2.0 * k).exp() * num / den
}

/// `(G, ∂_y G, ∂_{y'} G, ∂_y ∂_{y'} G)` for `k > 0`; on the diagonal the
/// one-sided derivative limits are averaged.
pub(crate) fn gk_derivs(k: f64, y: f64, yp: f64) -> [f64; 4] {
    if y == yp {
        let l = gk_derivs_branch(k, y, yp, true);
        let r = gk_derivs_branch(k, y, yp, false);
        return [l[0], 0.5 * (l[1] + r[1]), 0.5 * (l[2] + r[2]), 0.5 * (l[3] + r[3])];
    }
    gk_derivs_branch(k, y, yp, y < yp)
}

fn gk_derivs_branch(k: f64, y: f64, yp: f64, below: bool) -> [f64; 4] {
    // Products of hyperbolics over sinh(2k), each written as an exponential of
    // the summed arguments times bounded factors.
    let (p, q) = if below { (1.0 - yp, 1.0 + y) } else { (1.0 - y, 1.0 + yp) };
    let e = (k * (p + q) - 2.0 * k).exp() / (-(-4.0 * k).exp_m1());
    let sh = |x: f64| -(-2.0 * k * x).exp_m1();
    let ch = |x: f64| 1.0 + (-2.0 * k * x).exp();
    // sinh(kp)sinh(kq)/sinh(2k) = e · sh(p) sh(q) / 2, similarly for cosh
    let ss = e * sh(p) * sh(q) / 2.0;
    let sc = e * sh(p) * ch(q) / 2.0;
    let cs = e * ch(p) * sh(q) / 2.0;
    let cc = e * ch(p) * ch(q) / 2.0;
    let g = -ss / k;
    if below {
        [g, -sc, cs, k * cc]
    } else {
        [g, cs, -sc, k * cc]
    }
}

/// Direct collocation solver and Green's quadrature for one wavenumber.
#[derive(Debug, Clone)]
pub struct ModePoissonSolver {
    k: i64,
    grid: Arc<ChannelGrid>,
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    /// Built on first use; the time steppers only need the direct solve.
    green: OnceLock<DMatrix<f64>>,
}

impl ModePoissonSolver {
    pub fn new(k: i64, grid: Arc<ChannelGrid>) -> Result<Self> {
        if k == 0 {
            return Err(CblError::ZeroWavenumber);
        }
        let n = grid.n_y();
        let m = n - 1;
        let k2 = (k * k) as f64;
        let mut a = grid.d2().view((1, 1), (m, m)).into_owned();
        for i in 0..m {
            a[(i, i)] -= k2;
        }
        let lu = a.lu();
        if !lu.is_invertible() {
            return Err(CblError::Singular("mode Laplacian"));
        }
        Ok(Self {
            k,
            grid,
            lu,
            green: OnceLock::new(),
        })
    }

    pub fn k(&self) -> i64 {
        self.k
    }

    pub fn grid(&self) -> &Arc<ChannelGrid> {
        &self.grid
    }

    /// Green's matrix with quadrature folded in: `ψ ≈ G ω`.
    pub fn green_matrix(&self) -> &DMatrix<f64> {
        self.green.get_or_init(|| green_matrix(self.k, &self.grid))
    }

    /// Direct solve; boundary values of `ω` are ignored.
    pub fn solve(&self, omega: &ComplexVec) -> Result<ComplexVec> {
        self.grid.check_len(omega.len())?;
        let n = self.grid.n_y();
        let re = omega.rows(1, n - 1).map(|z| z.re);
        let im = omega.rows(1, n - 1).map(|z| z.im);
        let xr = self.lu.solve(&re).ok_or(CblError::Singular("mode Laplacian"))?;
        let xi = self.lu.solve(&im).ok_or(CblError::Singular("mode Laplacian"))?;
        let mut psi = ComplexVec::zeros(n + 1);
        for i in 0..n - 1 {
            psi[i + 1] = Complex64::new(xr[i], xi[i]);
        }
        Ok(psi)
    }

    /// `ψ(y_i) = ∫ G_k(y_i, y') ω(y') dy'`.
    pub fn solve_green(&self, omega: &ComplexVec) -> Result<ComplexVec> {
        self.grid.check_len(omega.len())?;
        Ok(real_matvec(self.green_matrix(), omega))
    }

    /// Discrete `Δ_k ψ` on all nodes.
    pub fn apply_laplacian(&self, psi: &ComplexVec) -> ComplexVec {
        let k2 = (self.k * self.k) as f64;
        self.grid.diff2(psi) - psi * Complex64::new(k2, 0.0)
    }
}

/// Rows are `y_i`; entry `(i, j)` is the weight of `ω(y_j)` in
/// `∫ G_k(y_i, y') ω(y') dy'`. Each row splits at the kink `y' = y_i` and uses
/// Gauss–Legendre against the barycentric interpolant of `ω`.
fn green_matrix(k: i64, grid: &ChannelGrid) -> DMatrix<f64> {
    let n = grid.n_y();
    let kk = k.unsigned_abs() as f64;
    let rule = GaussRule::new(n + 32);
    let mut out = DMatrix::zeros(n + 1, n + 1);
    for i in 1..n {
        let y = grid.nodes()[i];
        for (lo, hi) in [(-1.0, y), (y, 1.0)] {
            let (ts, ws) = rule.mapped(lo, hi);
            let interp = grid.interpolation_matrix(&ts);
            for (r, (tp, wt)) in ts.iter().zip(&ws).enumerate() {
                let c = wt * gk_abs(kk, y, *tp);
                for j in 0..=n {
                    out[(i, j)] += c * interp[(r, j)];
                }
            }
        }
    }
    out
}

/// `ψ_k` from `ω_k` by direct solve.
pub fn solve_poisson_k(k: i64, grid: &Arc<ChannelGrid>, omega: &ComplexVec) -> Result<ComplexVec> {
    ModePoissonSolver::new(k, grid.clone())?.solve(omega)
}

/// `(u1_k, u2_k) = (∂_y ψ_k, −i k ψ_k)`.
pub fn velocity_from_psi(grid: &ChannelGrid, k: i64, psi: &ComplexVec) -> Result<(ComplexVec, ComplexVec)> {
    grid.check_len(psi.len())?;
    check_dirichlet(grid, |j| psi[j].norm())?;
    let u1 = grid.diff(psi);
    let u2 = psi * Complex64::new(0.0, -(k as f64));
    Ok((u1, u2))
}

/// Both sides of `‖Δ_k ψ‖² = k⁴‖ψ‖² + ‖ψ''‖² + 2k²‖ψ'‖²` and the lower bound
/// `‖ω‖² ≥ ½ (|k|‖ψ‖ + |k|‖ψ'‖)²`.
#[derive(Debug, Clone, Copy)]
pub struct VorticityIdentityReport {
    pub lhs: f64,
    pub rhs: f64,
    pub relative_defect: f64,
    pub lower_bound: f64,
    pub lower_bound_holds: bool,
}

pub fn vorticity_identity_check(grid: &ChannelGrid, k: i64, psi: &ComplexVec) -> Result<VorticityIdentityReport> {
    grid.check_len(psi.len())?;
    check_dirichlet(grid, |j| psi[j].norm())?;
    let k2 = (k * k) as f64;
    let dpsi = grid.diff(psi);
    let d2psi = grid.diff2(psi);
    let omega = &d2psi - psi * Complex64::new(k2, 0.0);
    let lhs = grid.norm_sq(&omega);
    let n0 = grid.norm_sq(psi);
    let n1 = grid.norm_sq(&dpsi);
    let rhs = k2 * k2 * n0 + grid.norm_sq(&d2psi) + 2.0 * k2 * n1;
    let relative_defect = if lhs == 0.0 && rhs == 0.0 {
        0.0
    } else {
        (lhs - rhs).abs() / lhs.max(rhs)
    };
    let ak = (k as f64).abs();
    let lower_bound = 0.5 * (ak * n0.sqrt() + ak * n1.sqrt()).powi(2);
    Ok(VorticityIdentityReport {
        lhs,
        rhs,
        relative_defect,
        lower_bound,
        lower_bound_holds: lhs >= lower_bound * (1.0 - 1e-12),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn grid(n: usize) -> Arc<ChannelGrid> {
        Arc::new(ChannelGrid::new(n).unwrap())
    }

    fn naive_gk(k: f64, y: f64, yp: f64) -> f64 {
        let (lo, hi) = if y <= yp { (y, yp) } else { (yp, y) };
        -(k * (1.0 - hi)).sinh() * (k * (1.0 + lo)).sinh() / (k * (2.0 * k).sinh())
    }

    #[test]
    fn gk_examples() {
        let v = greens_gk(1, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(v, -(1f64.sinh().powi(2)) / 2f64.sinh(), epsilon = 1e-15);
        assert_abs_diff_eq!(v, -0.380798, epsilon = 1e-6);
        assert_eq!(greens_gk(3, 1.0, 0.2).unwrap(), 0.0);
        assert_eq!(greens_gk(2, 0.3, -0.4).unwrap(), greens_gk(2, -0.4, 0.3).unwrap());
        assert_eq!(greens_gk(-2, 0.3, -0.4).unwrap(), greens_gk(2, 0.3, -0.4).unwrap());
        assert!(matches!(greens_gk(0, 0.0, 0.0), Err(CblError::ZeroWavenumber)));
    }

    #[test]
    fn gk_matches_naive_form_and_survives_large_k() {
        for k in [1.0, 3.0, 17.0] {
            for (y, yp) in [(0.2, -0.5), (-0.9, 0.95), (0.4, 0.4)] {
                let a = gk_abs(k, y, yp);
                let b = naive_gk(k, y, yp);
                assert!((a - b).abs() <= 1e-14 * b.abs().max(1e-300) + 1e-300, "{k} {y} {yp}");
            }
        }
        let v = gk_abs(1e4, 0.1, 0.1);
        assert!(v.is_finite() && v < 0.0);
        assert_abs_diff_eq!(v, -1.0 / 2e4, epsilon = 1e-12);
    }

    #[test]
    fn gk_derivatives_match_finite_differences() {
        let h = 1e-6;
        for k in [1.0, 5.0] {
            for (y, yp) in [(0.3, -0.2), (-0.6, 0.1)] {
                let d = gk_derivs(k, y, yp);
                assert_abs_diff_eq!(d[0], gk_abs(k, y, yp), epsilon = 1e-14);
                let fy = (gk_abs(k, y + h, yp) - gk_abs(k, y - h, yp)) / (2.0 * h);
                let fyp = (gk_abs(k, y, yp + h) - gk_abs(k, y, yp - h)) / (2.0 * h);
                let h2 = 1e-4;
                let fyy = (gk_abs(k, y + h2, yp + h2) - gk_abs(k, y + h2, yp - h2)
                    - gk_abs(k, y - h2, yp + h2)
                    + gk_abs(k, y - h2, yp - h2))
                    / (4.0 * h2 * h2);
                assert_abs_diff_eq!(d[1], fy, epsilon = 1e-7);
                assert_abs_diff_eq!(d[2], fyp, epsilon = 1e-7);
                assert_abs_diff_eq!(d[3], fyy, epsilon = 1e-6 * (1.0 + k * k));
            }
        }
        // the jump of ∂_y G across the diagonal is 1
        let below = gk_derivs(2.0, 0.1 - 1e-12, 0.1);
        let above = gk_derivs(2.0, 0.1 + 1e-12, 0.1);
        assert_abs_diff_eq!(above[1] - below[1], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn manufactured_solutions() {
        let g = grid(64);
        let om = g.sample_complex(|y| Complex64::new(-2.0 - 4.0 * (1.0 - y * y), 0.0));
        let psi = solve_poisson_k(2, &g, &om).unwrap();
        for (j, y) in g.nodes().iter().enumerate() {
            assert_abs_diff_eq!(psi[j].re, 1.0 - y * y, epsilon = 1e-8);
        }
        let s = |y: f64| (PI * (y + 1.0) / 2.0).sin();
        let om = g.sample_complex(|y| Complex64::new(-(1.0 + PI * PI / 4.0) * s(y), 0.0));
        let psi = solve_poisson_k(1, &g, &om).unwrap();
        for (j, y) in g.nodes().iter().enumerate() {
            assert_abs_diff_eq!(psi[j].re, s(*y), epsilon = 1e-10);
        }
        let zero = solve_poisson_k(3, &g, &ComplexVec::zeros(65)).unwrap();
        assert_eq!(zero.camax(), 0.0);
    }

    #[test]
    fn green_matrix_boundary_zero_and_agrees_with_solve() {
        let g = grid(64);
        let s = ModePoissonSolver::new(4, g.clone()).unwrap();
        assert_eq!(s.green_matrix().row(0).amax(), 0.0);
        assert_eq!(s.green_matrix().row(64).amax(), 0.0);
        let om = g.sample_complex(|y| Complex64::new((3.0 * y).cos() * (1.0 - y * y), y.exp()));
        let a = s.solve(&om).unwrap();
        let b = s.solve_green(&om).unwrap();
        assert!(g.norm(&(&a - &b)) / g.norm(&a) < 1e-10);
    }

    #[test]
    fn velocity_examples() {
        let g = grid(16);
        let psi = g.sample_complex(|y| Complex64::new(1.0 - y * y, 0.0));
        let (u1, u2) = velocity_from_psi(&g, 1, &psi).unwrap();
        for (j, y) in g.nodes().iter().enumerate() {
            assert_abs_diff_eq!(u1[j].re, -2.0 * y, epsilon = 1e-12);
            assert_abs_diff_eq!(u2[j].im, -(1.0 - y * y), epsilon = 1e-15);
        }
        // divergence i k u1 + ∂_y u2
        let div = u1 * Complex64::new(0.0, 1.0) + g.diff(&u2);
        assert!(div.camax() < 1e-10);
        let (a, b) = velocity_from_psi(&g, 1, &ComplexVec::zeros(17)).unwrap();
        assert_eq!(a.camax() + b.camax(), 0.0);
    }

    #[test]
    fn identity_on_eigenfunction() {
        let g = grid(64);
        let psi = g.sample_complex(|y| Complex64::new((PI * (y + 1.0) / 2.0).sin(), 0.0));
        let r = vorticity_identity_check(&g, 1, &psi).unwrap();
        assert!(r.relative_defect < 1e-8);
        let exact = (1.0 + (PI / 2.0).powi(2)).powi(2);
        assert_abs_diff_eq!(r.lhs, exact, epsilon = 1e-8);
        assert!(r.lower_bound_holds);
        let z = vorticity_identity_check(&g, 1, &ComplexVec::zeros(65)).unwrap();
        assert_eq!((z.lhs, z.rhs), (0.0, 0.0));
    }
}
