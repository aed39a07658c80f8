//! Chebyshev–Gauss–Lobatto discretization of the wall-normal direction `y ∈ [-1, 1]`.
//!
//! Nodes are ordered from the upper wall to the lower wall, `y_j = cos(jπ/n_y)`,
//! so `y_0 = 1` and `y_{n_y} = -1`. All grid functions in the crate are sampled
//! on these nodes and integrated with Clenshaw–Curtis weights.

use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{CblError, Result};

pub type RealVec = DVector<f64>;
pub type ComplexVec = DVector<Complex64>;

/// Immutable collocation grid with differentiation and quadrature data.
#[derive(Debug, Clone)]
pub struct ChannelGrid {
    n_y: usize,
    nodes: RealVec,
    d1: DMatrix<f64>,
    d2: DMatrix<f64>,
    quad_weights: RealVec,
    bary: RealVec,
}

impl ChannelGrid {
    /// Builds the grid with `n_y + 1` nodes. `n_y` must be even and at least 2.
    pub fn new(n_y: usize) -> Result<Self> {
        if n_y < 2 || !n_y.is_multiple_of(2) {
            return Err(CblError::InvalidGridSize(n_y));
        }
        let n = n_y;
        // sin form keeps the node set exactly symmetric with y_{n/2} = 0
        let nodes = RealVec::from_fn(n + 1, |j, _| {
            (PI * (n as f64 - 2.0 * j as f64) / (2.0 * n as f64)).sin()
        });

        let mut bary = RealVec::from_fn(n + 1, |j, _| if j % 2 == 0 { 1.0 } else { -1.0 });
        bary[0] *= 0.5;
        bary[n] *= 0.5;

        let mut d1 = cheb_d1(&nodes);
        // absorb the rounding of the row sums into the diagonal
        let one = RealVec::from_element(n + 1, 1.0);
        for _ in 0..2 {
            let r = &d1 * &one;
            for i in 0..=n {
                d1[(i, i)] -= r[i];
            }
        }
        let d2 = &d1 * &d1;
        let quad_weights = clenshaw_curtis_weights(n);
        Ok(Self {
            n_y,
            nodes,
            d1,
            d2,
            quad_weights,
            bary,
        })
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    /// Number of nodes, `n_y + 1`.
    pub fn len(&self) -> usize {
        self.n_y + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nodes(&self) -> &RealVec {
        &self.nodes
    }

    pub fn d1(&self) -> &DMatrix<f64> {
        &self.d1
    }

    pub fn d2(&self) -> &DMatrix<f64> {
        &self.d2
    }

    pub fn quad_weights(&self) -> &RealVec {
        &self.quad_weights
    }

    /// Smallest node spacing (at the walls).
    pub fn min_spacing(&self) -> f64 {
        self.nodes[0] - self.nodes[1]
    }

    pub fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(CblError::LengthMismatch {
                expected: self.len(),
                got: len,
            });
        }
        Ok(())
    }

    /// Samples a real function on the nodes.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> RealVec {
        self.nodes.map(f)
    }

    /// Samples a function on the nodes into a complex grid function.
    pub fn sample_complex(&self, f: impl Fn(f64) -> Complex64) -> ComplexVec {
        self.nodes.map(f)
    }

    /// `⟨f, g⟩ = Σ_j w_j f_j conj(g_j)`.
    pub fn inner_product(&self, f: &ComplexVec, g: &ComplexVec) -> Result<Complex64> {
        self.check_len(f.len())?;
        self.check_len(g.len())?;
        Ok(self.inner_unchecked(f, g))
    }

    pub(crate) fn inner_unchecked(&self, f: &ComplexVec, g: &ComplexVec) -> Complex64 {
        self.quad_weights
            .iter()
            .zip(f.iter().zip(g.iter()))
            .map(|(w, (a, b))| a * b.conj() * *w)
            .sum()
    }

    /// Squared L² norm of a complex grid function.
    pub fn norm_sq(&self, f: &ComplexVec) -> f64 {
        self.quad_weights
            .iter()
            .zip(f.iter())
            .map(|(w, a)| w * a.norm_sqr())
            .sum()
    }

    pub fn norm(&self, f: &ComplexVec) -> f64 {
        self.norm_sq(f).sqrt()
    }

    pub fn norm_sq_real(&self, f: &RealVec) -> f64 {
        self.quad_weights.iter().zip(f.iter()).map(|(w, a)| w * a * a).sum()
    }

    pub fn integrate(&self, f: &RealVec) -> f64 {
        self.quad_weights.dot(f)
    }

    /// `d1 · f` for complex data.
    pub fn diff(&self, f: &ComplexVec) -> ComplexVec {
        real_matvec(&self.d1, f)
    }

    /// `d2 · f` for complex data.
    pub fn diff2(&self, f: &ComplexVec) -> ComplexVec {
        real_matvec(&self.d2, f)
    }

    /// `sqrt(Σ_{j≤4} ‖d1^j f‖²)`.
    pub fn sobolev_h4_norm(&self, f: &RealVec) -> Result<f64> {
        self.check_len(f.len())?;
        let mut acc = 0.0;
        let mut g = f.clone();
        for j in 0..=4 {
            if j > 0 {
                g = &self.d1 * g;
            }
            acc += self.norm_sq_real(&g);
        }
        Ok(acc.sqrt())
    }

    /// Barycentric interpolation matrix from the nodes to arbitrary points in `[-1, 1]`.
    pub fn interpolation_matrix(&self, points: &[f64]) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(points.len(), n);
        for (r, &t) in points.iter().enumerate() {
            if let Some(j) = self.nodes.iter().position(|&x| x == t) {
                m[(r, j)] = 1.0;
                continue;
            }
            let mut denom = 0.0;
            for j in 0..n {
                let c = self.bary[j] / (t - self.nodes[j]);
                m[(r, j)] = c;
                denom += c;
            }
            for j in 0..n {
                m[(r, j)] /= denom;
            }
        }
        m
    }

    /// Evaluates the polynomial interpolant of `values` at `t`.
    pub fn interpolate(&self, values: &RealVec, t: f64) -> f64 {
        if let Some(j) = self.nodes.iter().position(|&x| x == t) {
            return values[j];
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..self.len() {
            let c = self.bary[j] / (t - self.nodes[j]);
            num += c * values[j];
            den += c;
        }
        num / den
    }

    /// Columns `(1 - y²) T_n(y)`, `n = 0..=degree`, orthonormalized in the
    /// quadrature inner product. This is the resolved subspace of functions
    /// vanishing at the walls on which operator norms are measured.
    pub fn dirichlet_basis(&self, degree: usize) -> DMatrix<f64> {
        let n = self.len();
        let cols = degree + 1;
        let mut basis = DMatrix::from_fn(n, cols, |j, c| {
            let y = self.nodes[j];
            (1.0 - y * y) * (c as f64 * y.clamp(-1.0, 1.0).acos()).cos()
        });
        // two passes of modified Gram–Schmidt
        for _ in 0..2 {
            for c in 0..cols {
                for p in 0..c {
                    let proj: f64 = (0..n)
                        .map(|j| self.quad_weights[j] * basis[(j, c)] * basis[(j, p)])
                        .sum();
                    for j in 0..n {
                        basis[(j, c)] -= proj * basis[(j, p)];
                    }
                }
                let nrm: f64 = (0..n)
                    .map(|j| self.quad_weights[j] * basis[(j, c)].powi(2))
                    .sum::<f64>()
                    .sqrt();
                for j in 0..n {
                    basis[(j, c)] /= nrm;
                }
            }
        }
        basis
    }

    /// Default degree of the resolved subspace used for operator norms.
    pub fn resolved_degree(&self) -> usize {
        self.n_y / 4
    }
}

/// Real matrix times complex vector.
pub fn real_matvec(m: &DMatrix<f64>, f: &ComplexVec) -> ComplexVec {
    let re = m * f.map(|z| z.re);
    let im = m * f.map(|z| z.im);
    ComplexVec::from_fn(f.len(), |i, _| Complex64::new(re[i], im[i]))
}

fn cheb_d1(x: &RealVec) -> DMatrix<f64> {
    let n1 = x.len();
    let n = n1 - 1;
    let c = |j: usize| {
        let s = if j.is_multiple_of(2) { 1.0 } else { -1.0 };
        if j == 0 || j == n {
            2.0 * s
        } else {
            s
        }
    };
    let mut d = DMatrix::zeros(n1, n1);
    for i in 0..n1 {
        for j in 0..n1 {
            if i != j {
                d[(i, j)] = c(i) / c(j) / (x[i] - x[j]);
            }
        }
    }
    // negative-sum trick: rows annihilate constants to rounding
    for i in 0..n1 {
        let s: f64 = (0..n1).filter(|&j| j != i).map(|j| d[(i, j)]).sum();
        d[(i, i)] = -s;
    }
    d
}

fn clenshaw_curtis_weights(n: usize) -> RealVec {
    let mut w = RealVec::zeros(n + 1);
    let nf = n as f64;
    let mut v = vec![1.0; n.saturating_sub(1)];
    // n is even
    w[0] = 1.0 / (nf * nf - 1.0);
    w[n] = w[0];
    for k in 1..n / 2 {
        for (idx, vi) in v.iter_mut().enumerate() {
            let theta = PI * (idx + 1) as f64 / nf;
            *vi -= 2.0 * (2.0 * k as f64 * theta).cos() / (4.0 * (k * k) as f64 - 1.0);
        }
    }
    for (idx, vi) in v.iter_mut().enumerate() {
        let theta = PI * (idx + 1) as f64 / nf;
        *vi -= (nf * theta).cos() / (nf * nf - 1.0);
    }
    for (idx, vi) in v.iter().enumerate() {
        w[idx + 1] = 2.0 * vi / nf;
    }
    w
}

/// Gauss–Legendre rule mapped to `[a, b]`.
#[derive(Debug, Clone)]
pub struct GaussRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussRule {
    pub fn new(points: usize) -> Self {
        let quad = GaussLegendre::new(NonZeroUsize::new(points.max(1)).expect("nonzero"));
        let (nodes, weights) = quad.as_node_weight_pairs().iter().copied().unzip();
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights on `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        let t = self.nodes.iter().map(|x| mid + half * x).collect();
        let w = self.weights.iter().map(|x| half * x).collect();
        (t, w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rejects_bad_sizes() {
        assert!(ChannelGrid::new(0).is_err());
        assert!(ChannelGrid::new(3).is_err());
        assert!(ChannelGrid::new(2).is_ok());
    }

    #[test]
    fn nodes_for_two() {
        let g = ChannelGrid::new(2).unwrap();
        assert_eq!(g.nodes().as_slice(), &[1.0, 0.0, -1.0]);
    }

    #[test]
    fn endpoints_exact_and_decreasing() {
        for n in [4, 16, 64, 256] {
            let g = ChannelGrid::new(n).unwrap();
            assert_eq!(g.nodes()[0], 1.0);
            assert_eq!(g.nodes()[n], -1.0);
            assert!(g.nodes().as_slice().windows(2).all(|w| w[0] > w[1]));
        }
    }

    #[test]
    fn exact_low_degree_derivatives() {
        let g = ChannelGrid::new(4).unwrap();
        let y = g.sample(|y| y);
        let dy = g.d1() * &y;
        for v in dy.iter() {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-13);
        }
        let y2 = g.sample(|y| y * y);
        let d2y = g.d2() * &y2;
        for v in d2y.iter() {
            assert_abs_diff_eq!(*v, 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn constants_annihilated_and_weights_sum() {
        for n in [2, 8, 64, 256] {
            let g = ChannelGrid::new(n).unwrap();
            let one = RealVec::from_element(n + 1, 1.0);
            let d = g.d1() * &one;
            assert!(d.amax() <= 1e-12, "n={n}: {}", d.amax());
            assert_abs_diff_eq!(g.quad_weights().sum(), 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn d2_matches_d1_squared() {
        let g = ChannelGrid::new(256).unwrap();
        let prod = g.d1() * g.d1();
        let rel = (&prod - g.d2()).norm() / prod.norm();
        assert!(rel <= 1e-8);
    }

    #[test]
    fn clenshaw_curtis_exact_on_monomials() {
        for n in [4, 10, 32] {
            let g = ChannelGrid::new(n).unwrap();
            for p in 0..=n {
                let f = g.sample(|y| y.powi(p as i32));
                let exact = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
                assert_abs_diff_eq!(g.integrate(&f), exact, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn spectral_accuracy_on_exp() {
        let mut prev = f64::INFINITY;
        for n in [8, 16, 32, 64] {
            let g = ChannelGrid::new(n).unwrap();
            let f = g.sample(f64::exp);
            let err = (g.d1() * &f - &f).amax();
            if prev > 1e-12 * (n * n) as f64 {
                assert!(err <= prev / 10.0, "n={n} err={err} prev={prev}");
            } else {
                // rounding floor of d1 grows like n²·eps
                assert!(err <= 1e-11, "n={n} err={err}");
            }
            prev = err;
        }
    }

    #[test]
    fn inner_product_examples() {
        let g = ChannelGrid::new(64).unwrap();
        let one = g.sample_complex(|_| Complex64::new(1.0, 0.0));
        let y = g.sample_complex(|y| Complex64::new(y, 0.0));
        let s = g.sample_complex(|y| Complex64::new((PI * (y + 1.0) / 2.0).sin(), 0.0));
        assert_abs_diff_eq!(g.inner_product(&one, &one).unwrap().re, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g.inner_product(&s, &s).unwrap().re, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g.inner_product(&one, &y).unwrap().norm(), 0.0, epsilon = 1e-14);
        let short = ComplexVec::zeros(3);
        assert!(g.inner_product(&one, &short).is_err());
    }

    #[test]
    fn h4_norm_examples() {
        let g = ChannelGrid::new(64).unwrap();
        assert_eq!(g.sobolev_h4_norm(&RealVec::zeros(65)).unwrap(), 0.0);
        let s = g.sample(|y| (PI * (y + 1.0) / 2.0).sin());
        let expected: f64 = (0..=4).map(|j| (PI / 2.0).powi(2 * j)).sum::<f64>().sqrt();
        assert_abs_diff_eq!(g.sobolev_h4_norm(&s).unwrap(), expected, epsilon = 1e-8);
        assert_abs_diff_eq!(expected, 7.851, epsilon = 1e-3);
        let c = g.sample(|_| -3.0);
        assert_abs_diff_eq!(g.sobolev_h4_norm(&c).unwrap(), 2f64.sqrt() * 3.0, epsilon = 1e-8);
    }

    #[test]
    fn interpolation_reproduces_polynomials() {
        let g = ChannelGrid::new(16).unwrap();
        let f = g.sample(|y| 3.0 * y.powi(5) - y + 0.5);
        for t in [-0.93_f64, -0.2, 0.0, 0.41, 0.999] {
            let exact = 3.0 * t.powi(5) - t + 0.5;
            assert_abs_diff_eq!(g.interpolate(&f, t), exact, epsilon = 1e-12);
            let m = g.interpolation_matrix(&[t]);
            assert_abs_diff_eq!((m * &f)[0], exact, epsilon = 1e-12);
        }
    }

    #[test]
    fn dirichlet_basis_is_orthonormal() {
        let g = ChannelGrid::new(64).unwrap();
        let q = g.dirichlet_basis(16);
        let w = DMatrix::from_diagonal(g.quad_weights());
        let gram = q.transpose() * w * &q;
        let defect = (gram - DMatrix::identity(17, 17)).amax();
        assert!(defect < 1e-12);
        assert!(q.row(0).amax() < 1e-14 && q.row(64).amax() < 1e-14);
    }

    #[test]
    fn gauss_rule_integrates_polynomials() {
        let r = GaussRule::new(5);
        let (t, w) = r.mapped(0.5, 2.0);
        let s: f64 = t.iter().zip(&w).map(|(x, w)| w * x.powi(9)).sum();
        assert_abs_diff_eq!(s, (2f64.powi(10) - 0.5f64.powi(10)) / 10.0, epsilon = 1e-11);
    }
}
