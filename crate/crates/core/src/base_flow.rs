//! Near-Couette base flow `U(t, y) = y + ∂_y ∫ G(y, y') W(t, y') dy'` driven by the
//! Dirichlet heat flow `W(t) = e^{μ t ∂²} W_in`.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::cheb::ChebTransform;
use crate::error::{CblError, Result};
use crate::grid::{ChannelGrid, GaussRule, RealVec};

/// Boundary values above this are treated as violating the Dirichlet condition.
pub const BOUNDARY_TOL: f64 = 1e-10;

/// Green's function of `∂²_y` on `[-1, 1]` with homogeneous Dirichlet data.
pub fn zero_mode_green(y: f64, yp: f64) -> f64 {
    if y <= yp {
        0.5 * (yp - 1.0) * (y + 1.0)
    } else {
        0.5 * (yp + 1.0) * (y - 1.0)
    }
}

/// `∂_y G(y, y')`; at `y = y'` the average of the one-sided limits.
pub fn zero_mode_green_dy(y: f64, yp: f64) -> f64 {
    if y < yp {
        0.5 * (yp - 1.0)
    } else if y > yp {
        0.5 * (yp + 1.0)
    } else {
        0.5 * yp
    }
}

pub(crate) fn check_dirichlet(grid: &ChannelGrid, values: impl Fn(usize) -> f64) -> Result<()> {
    for (j, y) in [(0, 1.0), (grid.n_y(), -1.0)] {
        let v = values(j);
        if v.abs() > BOUNDARY_TOL {
            return Err(CblError::BoundaryViolation { y, value: v });
        }
    }
    Ok(())
}

/// Exact-in-time propagator for the semi-discrete Dirichlet heat equation.
///
/// The interior block of `d2` has real, distinct, negative eigenvalues and a
/// well-conditioned eigenbasis, so `e^{μ t D2}` is applied spectrally.
#[derive(Debug, Clone)]
pub struct HeatEvolver {
    grid: Arc<ChannelGrid>,
    mu: f64,
    eigvals: RealVec,
    vecs: DMatrix<f64>,
    vecs_inv: DMatrix<f64>,
}

impl HeatEvolver {
    pub fn new(grid: Arc<ChannelGrid>, mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(CblError::InvalidParameter {
                name: "mu",
                value: mu,
                reason: "must be positive",
            });
        }
        let n = grid.n_y();
        let m = n - 1;
        let a = grid.d2().view((1, 1), (m, m)).into_owned();
        let (eigvals, vecs) = real_eigen(a)?;
        let vecs_inv = vecs
            .clone()
            .try_inverse()
            .ok_or(CblError::Singular("heat eigenbasis"))?;
        Ok(Self {
            grid,
            mu,
            eigvals,
            vecs,
            vecs_inv,
        })
    }

    pub fn grid(&self) -> &Arc<ChannelGrid> {
        &self.grid
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Eigenvalues of the interior second-derivative block, most negative first.
    pub fn spectrum(&self) -> &RealVec {
        &self.eigvals
    }

    /// `W(t)` from `W(0) = w_in`.
    pub fn evolve(&self, w_in: &RealVec, t: f64) -> Result<RealVec> {
        self.grid.check_len(w_in.len())?;
        check_dirichlet(&self.grid, |j| w_in[j])?;
        if !(t >= 0.0) {
            return Err(CblError::InvalidParameter {
                name: "t",
                value: t,
                reason: "must be nonnegative",
            });
        }
        let n = self.grid.n_y();
        let interior = w_in.rows(1, n - 1).into_owned();
        let mut c = &self.vecs_inv * interior;
        for (ci, lam) in c.iter_mut().zip(self.eigvals.iter()) {
            *ci *= (self.mu * t * lam).exp();
        }
        let out = &self.vecs * c;
        let mut w = RealVec::zeros(n + 1);
        w.rows_mut(1, n - 1).copy_from(&out);
        Ok(w)
    }
}

/// Eigen-decomposition of a real matrix with real, simple spectrum via Schur
/// form and triangular back-substitution.
fn real_eigen(a: DMatrix<f64>) -> Result<(RealVec, DMatrix<f64>)> {
    let m = a.nrows();
    let scale = a.amax().max(1.0);
    let (q, t) = a.schur().unpack();
    for i in 1..m {
        if t[(i, i - 1)].abs() > 1e-10 * scale {
            return Err(CblError::Singular("complex eigenvalue in heat operator"));
        }
    }
    let lam = RealVec::from_fn(m, |i, _| t[(i, i)]);
    let mut y = DMatrix::zeros(m, m);
    for i in 0..m {
        y[(i, i)] = 1.0;
        for j in (0..i).rev() {
            let s: f64 = (j + 1..=i).map(|l| t[(j, l)] * y[(l, i)]).sum();
            let mut d = t[(j, j)] - lam[i];
            if d.abs() < 1e-14 * scale {
                d = 1e-14 * scale;
            }
            y[(j, i)] = -s / d;
        }
    }
    let mut v = q * y;
    for mut col in v.column_iter_mut() {
        let nrm = col.norm();
        col /= nrm;
    }
    Ok((lam, v))
}

/// `W(t)` for a single evolution; builds a throwaway [`HeatEvolver`].
pub fn heat_evolve(grid: &Arc<ChannelGrid>, w_in: &RealVec, mu: f64, t: f64) -> Result<RealVec> {
    HeatEvolver::new(grid.clone(), mu)?.evolve(w_in, t)
}

/// Base flow snapshot sampled on the grid.
#[derive(Debug, Clone)]
pub struct BaseFlow {
    pub t: f64,
    pub w: RealVec,
    pub u: RealVec,
    pub u1: RealVec,
    pub u2: RealVec,
    pub u3: RealVec,
    pub delta0_budget: f64,
    /// `‖W‖_{H⁴}` at this time.
    pub w_h4: f64,
    /// Max relative difference between the quadrature and antiderivative routes for `U`.
    pub route_defect: f64,
}

impl BaseFlow {
    /// Exact Couette flow `U = y`.
    pub fn couette(grid: &ChannelGrid) -> Self {
        let n = grid.len();
        Self {
            t: 0.0,
            w: RealVec::zeros(n),
            u: grid.nodes().clone(),
            u1: RealVec::from_element(n, 1.0),
            u2: RealVec::zeros(n),
            u3: RealVec::zeros(n),
            delta0_budget: DEFAULT_DELTA0,
            w_h4: 0.0,
            route_defect: 0.0,
        }
    }

    /// Whether the smallness hypothesis `‖W‖_{H⁴} ≤ δ₀` holds.
    pub fn hypothesis_holds(&self) -> bool {
        self.w_h4 <= self.delta0_budget
    }

    pub fn max_abs_u(&self) -> f64 {
        self.u.amax()
    }
}

pub const DEFAULT_DELTA0: f64 = 0.01;

/// Builds `U, U', U'', U'''` from `W`; `U` is computed twice and the routes compared.
pub fn assemble_base_flow(grid: &ChannelGrid, w: &RealVec, t: f64, delta0: f64) -> Result<BaseFlow> {
    grid.check_len(w.len())?;
    check_dirichlet(grid, |j| w[j])?;
    let w_h4 = grid.sobolev_h4_norm(w)?;
    if w_h4 > delta0 {
        log::warn!(
            "base flow smallness hypothesis violated: ‖W‖_H4 = {w_h4:.6e} > δ₀ = {delta0:.3e}"
        );
    }
    let u1 = w.map(|x| 1.0 + x);
    let u2 = grid.d1() * w;
    let u3 = grid.d2() * w;
    let u = u_antiderivative(grid, w);
    let u_q = u_quadrature(grid, w);
    let route_defect = (&u - &u_q).amax() / u.amax().max(1e-300);
    Ok(BaseFlow {
        t,
        w: w.clone(),
        u,
        u1,
        u2,
        u3,
        delta0_budget: delta0,
        w_h4,
        route_defect,
    })
}

/// `U = y + Φ'` with `Φ' = ∫W + c`, the constant fixed by `Φ(±1) = 0`.
pub fn u_antiderivative(grid: &ChannelGrid, w: &RealVec) -> RealVec {
    let n = grid.n_y();
    let tr = ChebTransform::new(n);
    let vals: Vec<Complex64> = w.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let c: Vec<f64> = tr.forward(&vals).iter().map(|z| z.re).collect();
    // coefficients of the antiderivative, degree n + 1
    let mut b = vec![0.0; n + 2];
    for (k, ck) in c.iter().enumerate() {
        match k {
            0 => b[1] += ck,
            1 => b[2] += ck / 4.0,
            _ => {
                b[k + 1] += ck / (2.0 * (k + 1) as f64);
                b[k - 1] -= ck / (2.0 * (k - 1) as f64);
            }
        }
    }
    let anti = grid.sample(|y| {
        let th = y.clamp(-1.0, 1.0).acos();
        b.iter()
            .enumerate()
            .map(|(m, bm)| bm * (m as f64 * th).cos())
            .sum()
    });
    let shift = -grid.integrate(&anti) / 2.0;
    RealVec::from_fn(n + 1, |j, _| grid.nodes()[j] + anti[j] + shift)
}

/// `U(y) = y + ∫ ∂_y G(y, y') W(y') dy'` by Gauss–Legendre on each side of the kink.
pub fn u_quadrature(grid: &ChannelGrid, w: &RealVec) -> RealVec {
    let n = grid.n_y();
    let rule = GaussRule::new(n / 2 + 8);
    RealVec::from_fn(n + 1, |i, _| {
        let y = grid.nodes()[i];
        let mut acc = 0.0;
        for (lo, hi) in [(-1.0, y), (y, 1.0)] {
            if hi <= lo {
                continue;
            }
            let (ts, ws) = rule.mapped(lo, hi);
            for (tp, wt) in ts.iter().zip(&ws) {
                // evaluate strictly inside the sub-interval
                acc += wt * zero_mode_green_dy(y, *tp) * grid.interpolate(w, *tp);
            }
        }
        y + acc
    })
}

/// Outcome of checking `‖W(t)‖_{H⁴}` along a heat trajectory.
#[derive(Debug, Clone)]
pub struct WEstimateReport {
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    pub non_increasing: bool,
    pub within_budget: bool,
    /// The variant `‖W(t)‖_{H⁴} ≤ ‖W_in‖²_{H⁴}`; recorded, never asserted.
    pub squared_variant_holds: bool,
}

impl WEstimateReport {
    pub fn passed(&self) -> bool {
        self.non_increasing && self.within_budget
    }
}

pub fn check_w_estimate(
    grid: &ChannelGrid,
    trajectory: &[(f64, RealVec)],
    delta0: f64,
) -> Result<WEstimateReport> {
    let norms = trajectory
        .iter()
        .map(|(_, w)| grid.sobolev_h4_norm(w))
        .collect::<Result<Vec<_>>>()?;
    let n0 = norms.first().copied().unwrap_or(0.0);
    let ratios: Vec<f64> = norms
        .iter()
        .map(|&x| if n0 == 0.0 { if x == 0.0 { 0.0 } else { f64::INFINITY } } else { x / n0 })
        .collect();
    let slack = 1e-10;
    let non_increasing = ratios.windows(2).all(|p| p[1] <= p[0] + slack);
    let within_budget = n0 > delta0 || norms.iter().all(|&x| x <= delta0 * (1.0 + slack));
    let squared_variant_holds = norms.iter().all(|&x| x <= n0 * n0 + slack);
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    Ok(WEstimateReport {
        ratios,
        max_ratio,
        non_increasing,
        within_budget,
        squared_variant_holds,
    })
}
