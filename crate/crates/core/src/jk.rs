//! The singular integral operator
//! `𝔍_k[f](y) = k · p.v.∫ G_k(y, y') f(y') / (2i (y − y')) dy'`.
//!
//! Each row is split at the singular point. On either side the Green's
//! function is a single smooth branch `A` or `B`, so the integrand is
//! `[A(t) − A(y)]/(y − t) · f(t)` (bounded, Gauss–Legendre against the
//! barycentric interpolant of `f`) plus `G_k(y, y) · p.v.∫ f(t)/(y − t) dt`,
//! taken analytically on the Chebyshev interpolant.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{CblError, Result};
use crate::grid::{ChannelGrid, ComplexVec, GaussRule};
use crate::poisson::gk_abs;

/// How the Cauchy singularity on the diagonal was handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagStrategy {
    /// Branch-wise subtraction with the kink limit taken inside each smooth
    /// branch, plus analytic p.v. moments of the Chebyshev interpolant.
    SplitBranchSubtraction,
}

#[derive(Debug, Clone)]
pub struct JkOperator {
    k: i64,
    grid: Arc<ChannelGrid>,
    matrix: DMatrix<Complex64>,
    diag_strategy: DiagStrategy,
}

/// Extra Gauss–Legendre points beyond `n_y` on each half-row.
const EXTRA_POINTS: usize = 80;

pub fn build_jk(k: i64, grid: Arc<ChannelGrid>) -> Result<JkOperator> {
    if k == 0 {
        return Err(CblError::ZeroWavenumber);
    }
    let n = grid.n_y();
    let ak = k.unsigned_abs() as f64;
    let s2k = (2.0 * ak).sinh();
    let pv = pv_weights(&grid);
    let rule = GaussRule::new(n + EXTRA_POINTS);
    let prefactor = Complex64::new(0.0, -(k as f64) / 2.0);
    let mut matrix = DMatrix::zeros(n + 1, n + 1);
    let mut row = vec![0.0; n + 1];
    for i in 1..n {
        let y = grid.nodes()[i];
        row.iter_mut().for_each(|r| *r = 0.0);

        // left branch A(t) = -sinh(k(1-y)) sinh(k(1+t)) / (k s)
        let (ts, ws) = rule.mapped(-1.0, y);
        let interp = grid.interpolation_matrix(&ts);
        let sy = (ak * (1.0 - y)).sinh();
        for (r, (t, wt)) in ts.iter().zip(&ws).enumerate() {
            let h = ak * (t - y) / 2.0;
            let reg = -sy * 2.0 * (ak * (2.0 + y + t) / 2.0).cosh() / (ak * s2k) * (-(ak / 2.0) * sinhc(h));
            let c = wt * reg;
            for j in 0..=n {
                row[j] += c * interp[(r, j)];
            }
        }

        // right branch B(t) = -sinh(k(1+y)) sinh(k(1-t)) / (k s)
        let (ts, ws) = rule.mapped(y, 1.0);
        let interp = grid.interpolation_matrix(&ts);
        let sy = (ak * (1.0 + y)).sinh();
        for (r, (t, wt)) in ts.iter().zip(&ws).enumerate() {
            let h = ak * (y - t) / 2.0;
            let reg = -sy * 2.0 * (ak * (2.0 - t - y) / 2.0).cosh() / (ak * s2k) * ((ak / 2.0) * sinhc(h));
            let c = wt * reg;
            for j in 0..=n {
                row[j] += c * interp[(r, j)];
            }
        }

        let gyy = gk_abs(ak, y, y);
        for j in 0..=n {
            row[j] += gyy * pv[(i, j)];
            matrix[(i, j)] = prefactor * row[j];
        }
    }
    Ok(JkOperator {
        k,
        grid,
        matrix,
        diag_strategy: DiagStrategy::SplitBranchSubtraction,
    })
}

fn sinhc(h: f64) -> f64 {
    if h.abs() < 1e-8 {
        1.0
    } else {
        h.sinh() / h
    }
}

/// `P[i, j]`: weight of `f(y_j)` in `p.v.∫ p_N f(t) / (y_i − t) dt` with `p_N`
/// the Chebyshev interpolant. Boundary rows are zero.
pub(crate) fn pv_weights(grid: &ChannelGrid) -> DMatrix<f64> {
    let n = grid.n_y();
    let nf = n as f64;
    let cbar = |j: usize| if j == 0 || j == n { 2.0 } else { 1.0 };
    // values -> Chebyshev coefficients
    let vinv = DMatrix::from_fn(n + 1, n + 1, |m, j| {
        2.0 / (nf * cbar(m) * cbar(j)) * (std::f64::consts::PI * (m * j) as f64 / nf).cos()
    });
    let mut q = DMatrix::zeros(n + 1, n + 1);
    for i in 1..n {
        let x = grid.nodes()[i];
        // Q_m(x) = p.v.∫ T_m(t)/(t - x) dt
        let mut qm = vec![0.0; n + 1];
        qm[0] = ((1.0 - x) / (1.0 + x)).ln();
        qm[1] = 2.0 + x * qm[0];
        for m in 1..n {
            let int_t = if m == 1 {
                0.0
            } else if m % 2 == 0 {
                2.0 / (1.0 - (m * m) as f64)
            } else {
                0.0
            };
            qm[m + 1] = 2.0 * int_t + 2.0 * x * qm[m] - qm[m - 1];
        }
        for m in 0..=n {
            q[(i, m)] = -qm[m];
        }
    }
    q * vinv
}

impl JkOperator {
    pub fn k(&self) -> i64 {
        self.k
    }

    pub fn grid(&self) -> &Arc<ChannelGrid> {
        &self.grid
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn diag_strategy(&self) -> DiagStrategy {
        self.diag_strategy
    }

    pub fn apply(&self, f: &ComplexVec) -> Result<ComplexVec> {
        self.grid.check_len(f.len())?;
        Ok(&self.matrix * f)
    }

    /// `Re⟨f, 𝔍_k f⟩`.
    pub fn quadratic_form(&self, f: &ComplexVec) -> Result<f64> {
        let jf = self.apply(f)?;
        Ok(self.grid.inner_unchecked(f, &jf).re)
    }

    /// Norm on the resolved Dirichlet subspace.
    pub fn norm_estimate(&self) -> NormEstimate {
        let basis = self.grid.dirichlet_basis(self.grid.resolved_degree());
        estimate_operator_norm(&self.matrix, self.grid.quad_weights().as_slice(), Some(&basis))
    }

    /// `‖M − M^H‖ / ‖M‖` with `M = Qᵀ W J Q` the Galerkin matrix on the
    /// resolved Dirichlet subspace.
    pub fn adjoint_defect(&self) -> f64 {
        let basis = self.grid.dirichlet_basis(self.grid.resolved_degree());
        let m = galerkin(&self.matrix, self.grid.quad_weights().as_slice(), &basis);
        let diff = &m - m.adjoint();
        let d = m.ncols();
        let ones = vec![1.0; d];
        let num = estimate_operator_norm(&diff, &ones, None).value;
        let den = estimate_operator_norm(&m, &ones, None).value;
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    }
}

pub fn apply_jk(op: &JkOperator, f: &ComplexVec) -> Result<ComplexVec> {
    op.apply(f)
}

fn galerkin(a: &DMatrix<Complex64>, w: &[f64], basis: &DMatrix<f64>) -> DMatrix<Complex64> {
    let qc = basis.map(|x| Complex64::new(x, 0.0));
    let mut wq = qc.clone();
    for (i, wi) in w.iter().enumerate() {
        wq.row_mut(i).scale_mut(*wi);
    }
    wq.transpose() * a * qc
}

/// Power-iteration estimate of an operator norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub const POWER_MAX_ITER: usize = 200;
pub const POWER_TOL: f64 = 1e-10;

/// `‖A‖` from `L²_w` (restricted to the span of a `w`-orthonormal `basis`, if
/// given) to `L²_w`, by power iteration on `B^H B` with `B = W^{1/2} A Q`.
pub fn estimate_operator_norm(a: &DMatrix<Complex64>, w: &[f64], basis: Option<&DMatrix<f64>>) -> NormEstimate {
    let sw: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
    let b = match basis {
        Some(q) => {
            let mut b = a * q.map(|x| Complex64::new(x, 0.0));
            for (i, s) in sw.iter().enumerate() {
                b.row_mut(i).scale_mut(*s);
            }
            b
        }
        None => {
            let mut b = a.clone();
            for (i, s) in sw.iter().enumerate() {
                b.row_mut(i).scale_mut(*s);
            }
            for (j, s) in sw.iter().enumerate() {
                if *s > 0.0 {
                    b.column_mut(j).unscale_mut(*s);
                }
            }
            b
        }
    };
    power_norm(&b)
}

/// Largest singular value of `b` by power iteration on `b^H b`.
pub fn power_norm(b: &DMatrix<Complex64>) -> NormEstimate {
    let d = b.ncols();
    if d == 0 || b.iter().all(|z| *z == Complex64::new(0.0, 0.0)) {
        return NormEstimate {
            value: 0.0,
            iterations: 0,
            converged: true,
        };
    }
    let bh = b.adjoint();
    let mut v = ComplexVec::from_fn(d, |j, _| {
        Complex64::new(1.0 + 0.37 * ((j * 7919) % 13) as f64, 0.11 * ((j * 104729) % 7) as f64)
    });
    v /= Complex64::new(v.norm(), 0.0);
    let mut est = 0.0;
    for it in 1..=POWER_MAX_ITER {
        let u = &bh * (b * &v);
        let nrm = u.norm();
        if nrm == 0.0 {
            return NormEstimate {
                value: 0.0,
                iterations: it,
                converged: true,
            };
        }
        let next = nrm.sqrt();
        v = u / Complex64::new(nrm, 0.0);
        if it > 1 && (next - est).abs() <= POWER_TOL * next {
            return NormEstimate {
                value: next,
                iterations: it,
                converged: true,
            };
        }
        est = next;
    }
    log::debug!("power iteration hit the cap of {POWER_MAX_ITER} iterations");
    NormEstimate {
        value: est,
        iterations: POWER_MAX_ITER,
        converged: false,
    }
}

/// `‖[D₁, 𝔍_k]‖ / |k|` on the resolved Dirichlet subspace.
pub fn commutator_norm(op: &JkOperator) -> NormEstimate {
    let grid = op.grid();
    let d1 = grid.d1().map(|x| Complex64::new(x, 0.0));
    let c = &d1 * op.matrix() - op.matrix() * &d1;
    let basis = grid.dirichlet_basis(grid.resolved_degree());
    let mut e = estimate_operator_norm(&c, grid.quad_weights().as_slice(), Some(&basis));
    e.value /= op.k().unsigned_abs() as f64;
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn grid(n: usize) -> Arc<ChannelGrid> {
        Arc::new(ChannelGrid::new(n).unwrap())
    }

    /// p.v.∫ G_k(y,t) f(t)/(y−t) dt by symmetric pairs around `y`.
    fn pv_oracle(k: f64, y: f64, f: impl Fn(f64) -> f64) -> f64 {
        let r = (1.0 - y.abs()).min(1.0);
        let rule = GaussRule::new(400);
        let mut s = 0.0;
        // pairs t = y ∓ σ
        let (sig, ws) = rule.mapped(0.0, r);
        for (sg, w) in sig.iter().zip(&ws) {
            let a = gk_abs(k, y, y - sg) * f(y - sg);
            let b = gk_abs(k, y, y + sg) * f(y + sg);
            s += w * (a - b) / sg;
        }
        let (lo, hi) = if y >= 0.0 { (-1.0, y - r) } else { (y + r, 1.0) };
        if hi > lo {
            let (ts, ws) = rule.mapped(lo, hi);
            for (t, w) in ts.iter().zip(&ws) {
                s += w * gk_abs(k, y, *t) * f(*t) / (y - t);
            }
        }
        s
    }

    #[test]
    fn pv_weights_exact_on_polynomials() {
        let g = grid(16);
        let p = pv_weights(&g);
        let f = g.sample(|t| t * t);
        let pf = &p * &f;
        for i in 1..16 {
            let x = g.nodes()[i];
            // p.v.∫ t²/(x−t) dt = −2x − x² ln((1−x)/(1+x))
            let exact = -2.0 * x - x * x * ((1.0 - x) / (1.0 + x)).ln();
            assert_abs_diff_eq!(pf[i], exact, epsilon = 1e-11);
        }
    }

    #[test]
    fn matches_pair_oracle() {
        let g = grid(64);
        let op = build_jk(1, g.clone()).unwrap();
        let one = g.sample_complex(|_| Complex64::new(1.0, 0.0));
        let out = op.apply(&one).unwrap();
        for i in [10, 20, 32, 45] {
            let y = g.nodes()[i];
            let exact = Complex64::new(0.0, -0.5) * pv_oracle(1.0, y, |_| 1.0);
            let err = (out[i] - exact).norm();
            assert!(err <= 1e-4 * exact.norm().max(1e-3), "y={y} {} vs {}", out[i], exact);
        }
        // odd sign dependence on k
        let neg = build_jk(-1, g.clone()).unwrap().apply(&one).unwrap();
        assert!((&neg + &out).camax() < 1e-14);
    }

    #[test]
    fn conjugation_law_and_real_inputs() {
        let g = grid(32);
        let op = build_jk(3, g.clone()).unwrap();
        let f = g.sample_complex(|y| Complex64::new(y.sin(), (2.0 * y).cos()));
        let lhs = op.apply(&f).unwrap().map(|z| z.conj());
        let rhs = -op.apply(&f.map(|z| z.conj())).unwrap();
        assert!((&lhs - &rhs).camax() < 1e-12);
        let real = g.sample_complex(|y| Complex64::new(y.exp(), 0.0));
        assert!(op.apply(&real).unwrap().iter().all(|z| z.re.abs() < 1e-14));
        assert_eq!(op.apply(&ComplexVec::zeros(33)).unwrap().camax(), 0.0);
    }

    #[test]
    fn self_convergence_on_sine() {
        let coarse = grid(64);
        let fine = grid(128);
        let s = |y: f64| Complex64::new((PI * (y + 1.0) / 2.0).sin(), 0.0);
        let a = build_jk(1, coarse.clone()).unwrap().apply(&coarse.sample_complex(s)).unwrap();
        let b = build_jk(1, fine.clone()).unwrap().apply(&fine.sample_complex(s)).unwrap();
        let b_on_coarse = ComplexVec::from_fn(65, |j, _| b[2 * j]);
        let rel = coarse.norm(&(&a - &b_on_coarse)) / coarse.norm(&b_on_coarse);
        assert!(rel < 1e-4, "{rel}");
    }

    #[test]
    fn norm_estimator_sanity() {
        let w = vec![0.5; 6];
        let id = DMatrix::<Complex64>::identity(6, 6);
        assert_abs_diff_eq!(estimate_operator_norm(&id, &w, None).value, 1.0, epsilon = 1e-10);
        let z = DMatrix::<Complex64>::zeros(6, 6);
        assert_eq!(estimate_operator_norm(&z, &w, None).value, 0.0);
        let diag = DMatrix::from_diagonal(&ComplexVec::from_fn(6, |i, _| Complex64::new(i as f64 - 2.5, 0.0)));
        let e = estimate_operator_norm(&diag, &w, None);
        assert_abs_diff_eq!(e.value, 2.5, epsilon = 1e-8);
    }

    #[test]
    fn commutator_with_identity_vanishes() {
        let g = grid(16);
        let d1 = g.d1().map(|x| Complex64::new(x, 0.0));
        let id = DMatrix::<Complex64>::identity(17, 17);
        let c = &d1 * &id - &id * &d1;
        assert!(estimate_operator_norm(&c, g.quad_weights().as_slice(), None).value <= 1e-10);
    }

    #[test]
    fn adjoint_defect_small_on_resolved_subspace() {
        let op = build_jk(2, grid(64)).unwrap();
        let d = op.adjoint_defect();
        assert!(d < 1e-6, "{d}");
        assert!(op.norm_estimate().value > 0.1);
    }

    #[test]
    fn rejects_zero_mode() {
        assert!(matches!(build_jk(0, grid(8)), Err(CblError::ZeroWavenumber)));
    }
}
