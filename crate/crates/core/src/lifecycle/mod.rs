//! The stochastic life-cycle problem: Picard iteration on the solution map,
//! regression estimates of conditional expectations, borrowing limits and
//! optimality diagnostics.

mod backward;
mod borrowing;
mod bsde;
mod diagnostics;
mod estimator;
mod picard;

pub use borrowing::{
    borrowing_limit_violations, borrowing_limits, gbm_limit_factors, natural_borrowing_limit, LimitViolations,
};
pub use bsde::{compounded_bsde_value, linear_bsde_value};
pub use diagnostics::{
    euler_equation_residual, expected_wealth_sweep, payoff_evaluate, perturbed_payoff, EulerResidual, Payoff,
    SweepReport, SweepRow,
};
pub use estimator::{estimate_conditional_expectation, Design, NestedMc, NodeFit, RegressionSpec, RIDGE_PENALTY};
pub use picard::{
    consumption_from_terminal, forward_wealth, picard_solve, theta_map_apply, InitialGuess, LifecycleProblem,
    LifecycleSolution, PicardOptions, Preferences, RegressionTarget,
};
