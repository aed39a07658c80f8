//! Assertion anchors and their documented meaning.

pub const GREENS_POISSON_INVERSE: &str = "greens-poisson-inverse";
pub const GREENS_QUADRATURE_AGREEMENT: &str = "greens-quadrature-agreement";
pub const GREENS_VORTICITY_IDENTITY: &str = "greens-vorticity-identity";
pub const GREENS_VORTICITY_LOWER_BOUND: &str = "greens-vorticity-lower-bound";
pub const JK_NORM_UNIFORM: &str = "jk-norm-uniform";
pub const JK_NORM_NO_GROWTH: &str = "jk-norm-no-growth";
pub const JK_COMMUTATOR_UNIFORM: &str = "jk-commutator-uniform";
pub const JK_SELF_ADJOINT: &str = "jk-self-adjoint";
pub const JK_SELF_ADJOINT_CONVERGENCE: &str = "jk-self-adjoint-convergence";
pub const KERNEL_SIZE_DECAY: &str = "kernel-size-decay";
pub const KERNEL_DERIVATIVE_DECAY: &str = "kernel-derivative-decay";
pub const KERNEL_MIXED_DERIVATIVE_BOUND: &str = "kernel-mixed-derivative-bound";
pub const TAYLOR_REMAINDER_POINTWISE: &str = "taylor-remainder-pointwise";
pub const DECAY_VISCOSITY_SCALING: &str = "decay-viscosity-scaling";
pub const DECAY_WAVENUMBER_SCALING: &str = "decay-wavenumber-scaling";
pub const ENERGY_THETA_LYAPUNOV: &str = "energy-theta-lyapunov";
pub const ENERGY_OMEGA_BOUND: &str = "energy-omega-bound";
pub const ENERGY_THETA_COERCIVITY: &str = "energy-theta-coercivity";
pub const NONLINEAR_HEAT_ORACLE: &str = "nonlinear-heat-oracle";
pub const NONLINEAR_QUADRATIC_DEVIATION: &str = "nonlinear-quadratic-deviation";
pub const NONLINEAR_ZERO_DATA: &str = "nonlinear-zero-data";
pub const CHECKPOINT_ROUND_TRIP: &str = "checkpoint-round-trip";
pub const NONLINEAR_STABILITY: &str = "nonlinear-stability";
pub const NONLINEAR_DECAY_RATE: &str = "nonlinear-decay-rate";
pub const THRESHOLD_SMALL_DATA_STABLE: &str = "threshold-small-data-stable";
pub const THRESHOLD_MONOTONE: &str = "threshold-monotone";

pub const ALL: &[&str] = &[
    GREENS_POISSON_INVERSE,
    GREENS_QUADRATURE_AGREEMENT,
    GREENS_VORTICITY_IDENTITY,
    GREENS_VORTICITY_LOWER_BOUND,
    JK_NORM_UNIFORM,
    JK_NORM_NO_GROWTH,
    JK_COMMUTATOR_UNIFORM,
    JK_SELF_ADJOINT,
    JK_SELF_ADJOINT_CONVERGENCE,
    KERNEL_SIZE_DECAY,
    KERNEL_DERIVATIVE_DECAY,
    KERNEL_MIXED_DERIVATIVE_BOUND,
    TAYLOR_REMAINDER_POINTWISE,
    DECAY_VISCOSITY_SCALING,
    DECAY_WAVENUMBER_SCALING,
    ENERGY_THETA_LYAPUNOV,
    ENERGY_OMEGA_BOUND,
    ENERGY_THETA_COERCIVITY,
    NONLINEAR_HEAT_ORACLE,
    NONLINEAR_QUADRATIC_DEVIATION,
    NONLINEAR_ZERO_DATA,
    CHECKPOINT_ROUND_TRIP,
    NONLINEAR_STABILITY,
    NONLINEAR_DECAY_RATE,
    THRESHOLD_SMALL_DATA_STABLE,
    THRESHOLD_MONOTONE,
];

/// The mapping table from `docs/assertion-anchors.md`.
pub const TABLE_MARKDOWN: &str = include_str!("../../../docs/assertion-anchors.md");

/// `(anchor, result)` rows of the documented table, in order.
pub fn documented() -> Vec<(String, String)> {
    TABLE_MARKDOWN
        .lines()
        .filter_map(|line| {
            let cells: Vec<&str> = line.trim().strip_prefix('|')?.split('|').map(str::trim).collect();
            let anchor = cells.first()?.strip_prefix('`')?.strip_suffix('`')?;
            Some((anchor.to_string(), cells.get(1)?.to_string()))
        })
        .collect()
}

pub fn describe(anchor: &str) -> Option<String> {
    documented().into_iter().find(|(a, _)| a == anchor).map(|(_, d)| d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_matches_constants() {
        let doc: Vec<String> = documented().into_iter().map(|(a, _)| a).collect();
        assert_eq!(doc, ALL.iter().map(|s| s.to_string()).collect::<Vec<_>>());
        assert!(describe(JK_SELF_ADJOINT).unwrap().contains("self-adjoint"));
        assert!(describe("no-such-anchor").is_none());
    }
}
