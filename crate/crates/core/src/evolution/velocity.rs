//! Finite propagation speed of weighted norms.

use serde::{Deserialize, Serialize};

use super::{GeneratorParams, Trajectory};

/// Slack on the ratio bound absorbing integrator error.
pub const RATIO_SLACK: f64 = 1e-6;

/// Outcome of a bound check along a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub passed: bool,
    pub max_ratio: f64,
    /// `e^{−C t} ‖ρ_t‖_m / A` at every recorded time.
    pub ratios: Vec<f64>,
    /// The growth rate `C`.
    pub rate: f64,
}

/// Growth rate `4d·e^m·u + g` of the weighted norm.
pub fn growth_rate(dim: usize, m: f64, params: &GeneratorParams) -> f64 {
    4.0 * dim as f64 * m.exp() * params.u.abs() + params.g
}

/// Verifies `‖ρ_t‖_m ≤ e^{C t} ‖ρ_0‖_m` at every recorded time.
pub fn group_velocity_check(traj: &Trajectory, m: f64, params: &GeneratorParams) -> CheckResult {
    let Some(first) = traj.states.first() else {
        return CheckResult { passed: true, max_ratio: 0.0, ratios: Vec::new(), rate: 0.0 };
    };
    let rate = growth_rate(first.lattice().dim(), m, params);
    let a = first.weighted_norm(m);
    let ratios: Vec<f64> = traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(&t, s)| (-rate * t).exp() * s.weighted_norm(m) / a)
        .collect();
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    CheckResult { passed: max_ratio <= 1.0 + RATIO_SLACK, max_ratio, ratios, rate }
}
