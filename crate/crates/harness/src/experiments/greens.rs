//! verify-greens: mode Poisson solve, Green's quadrature and the vorticity identity.

use cbl_core::poisson::{vorticity_identity_check, ModePoissonSolver};
use cbl_core::rng::{stream, Rng};
use cbl_core::{ChannelGrid, ComplexVec};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::anchors::*;
use crate::config::Settings;
use crate::svg::PlotSpec;
use crate::table::Table;
use crate::{Outcome, Result};

/// Smooth test vorticity vanishing at the walls.
fn test_omega(g: &ChannelGrid) -> ComplexVec {
    g.sample_complex(|y| Complex64::new(y.exp() * (3.0 * y).cos(), (2.0 * y).sin()) * (1.0 - y * y))
}

/// `(1 − y²) Σ_{n<8} c_n T_n(y)` with complex `c_n` uniform in the unit square.
pub fn random_dirichlet(g: &ChannelGrid, rng: &mut impl Rng) -> ComplexVec {
    let c: Vec<Complex64> = (0..8)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    g.sample_complex(|y| {
        let t = y.clamp(-1.0, 1.0).acos();
        let s: Complex64 = c.iter().enumerate().map(|(n, a)| a * (n as f64 * t).cos()).sum();
        s * (1.0 - y * y)
    })
}

struct Row {
    k: i64,
    residual: f64,
    green_gap: f64,
    identity: f64,
    lower_bound: bool,
}

pub fn run(s: &Settings) -> Result<Outcome> {
    let g = super::grid(s.n_y)?;
    let rows: Vec<Row> = s
        .k
        .par_iter()
        .map(|&k| -> Result<Row> {
            let solver = ModePoissonSolver::new(k, g.clone())?;
            let omega = test_omega(&g);
            let psi = solver.solve(&omega)?;
            let mut r = solver.apply_laplacian(&psi) - &omega;
            let n = g.n_y();
            // The collocation solve imposes the walls in place of the equation there.
            r[0] = Complex64::new(0.0, 0.0);
            r[n] = Complex64::new(0.0, 0.0);
            let residual = g.norm(&r) / g.norm(&omega);
            let green = solver.solve_green(&omega)?;
            let green_gap = g.norm(&(&green - &psi)) / g.norm(&psi);
            let mut rng = stream(s.seed, &format!("greens-identity-k{k}"));
            let mut identity: f64 = 0.0;
            let mut lower_bound = true;
            for _ in 0..s.samples {
                let p = random_dirichlet(&g, &mut rng);
                let rep = vorticity_identity_check(&g, k, &p)?;
                identity = identity.max(rep.relative_defect);
                lower_bound &= rep.lower_bound_holds;
            }
            Ok(Row {
                k,
                residual,
                green_gap,
                identity,
                lower_bound,
            })
        })
        .collect::<Result<_>>()?;

    let tol = s.tolerances.greens;
    let mut out = Outcome::default();
    let mut t = Table::new(
        "greens.csv",
        &["k", "poisson_residual", "green_vs_direct", "identity_defect_max", "lower_bound_holds"],
    );
    for r in &rows {
        t.push(vec![r.k.into(), r.residual.into(), r.green_gap.into(), r.identity.into(), r.lower_bound.into()]);
        let exp = format!("<= {tol:e}");
        out.check(GREENS_POISSON_INVERSE, format!("Poisson residual k={}", r.k), r.residual <= tol, r.residual, &exp);
        out.check(
            GREENS_QUADRATURE_AGREEMENT,
            format!("Green's quadrature vs direct solve k={}", r.k),
            r.green_gap <= tol,
            r.green_gap,
            &exp,
        );
        out.check(
            GREENS_VORTICITY_IDENTITY,
            format!("vorticity identity defect over {} states k={}", s.samples, r.k),
            r.identity <= tol,
            r.identity,
            &exp,
        );
        out.check(
            GREENS_VORTICITY_LOWER_BOUND,
            format!("vorticity lower bound over {} states k={}", s.samples, r.k),
            r.lower_bound,
            r.lower_bound as i64 as f64,
            "1 (holds for every state)",
        );
    }
    out.tables.push(t);
    out.plots.push(
        PlotSpec::new("greens_residual.svg", "greens.csv", "k", "poisson_residual", "Poisson residual by wavenumber")
            .log(true, true),
    );
    out.plots.push(
        PlotSpec::new("greens_quadrature.svg", "greens.csv", "k", "green_vs_direct", "Green's quadrature vs direct solve")
            .log(true, true),
    );
    Ok(out)
}
