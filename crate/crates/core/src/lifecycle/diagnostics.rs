use rayon::prelude::*;

use super::estimator::{scaled_conditional_marginal, Design, RegressionSpec};
use super::picard::{forward_wealth, LifecycleProblem, PicardOptions, Preferences};
use crate::error::{config_err, Result};
use crate::model::{DiscountSpec, PathEnsemble, RatePath, UtilitySpec};
use crate::stats;

/// Per-node Euler-equation residuals and their summary.
#[derive(Debug, Clone, PartialEq)]
pub struct EulerResidual {
    /// Cross-sectional mean of `|u1'(c_j) / E[u1'(c_{j+k}) | x_j] - growth_j|`
    /// for every node `j` with `j + k` on the grid.
    pub per_node: Vec<f64>,
    pub mean: f64,
    pub max: f64,
}

/// Euler-equation check over a horizon of `lag` grid steps: the marginal
/// rate of substitution against `exp(int_t^{t+lag dt} (r - delta))`. The
/// conditional expectation is regressed on `(w_j, eta_j)` in scaled form.
pub fn euler_equation_residual(
    ensemble: &PathEnsemble,
    rate: &RatePath,
    u1: &UtilitySpec,
    delta: f64,
    spec: &RegressionSpec,
    lag: usize,
) -> Result<EulerResidual> {
    let grid = ensemble.grid();
    if lag == 0 || lag > grid.steps() {
        return config_err(format!("Euler horizon must be between 1 and {} steps, got {lag}", grid.steps()));
    }
    let nodes = grid.nodes();
    let per_node: Vec<f64> = (0..grid.len() - lag)
        .into_par_iter()
        .map(|j| {
            let growth = (rate.integral(nodes[j], nodes[j + lag]) - delta * lag as f64 * grid.dt()).exp();
            let design = Design::new(spec, ensemble.wealth_at(j), ensemble.income_at(j));
            let expected = scaled_conditional_marginal(&design, ensemble.consumption_at(j + lag), u1);
            let now = ensemble.consumption_at(j);
            let total: f64 = now.iter().zip(&expected).map(|(&c, &e)| (u1.marginal(c) / e - growth).abs()).sum();
            total / now.len() as f64
        })
        .collect();
    let mean = stats::mean(&per_node);
    let max = per_node.iter().copied().fold(0.0, f64::max);
    Ok(EulerResidual { per_node, mean, max })
}

/// Monte Carlo payoff with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Payoff {
    pub mean: f64,
    pub stderr: f64,
}

/// Pathwise `sum_{j<M} e^{-delta a_j} u1(c_j) dt + lambda e^{-delta L} u2(w_L)
/// - penalty max(-w_L, 0)^2`, with `a_j` the age at node `j`, averaged over
/// paths.
pub fn payoff_evaluate(
    ensemble: &PathEnsemble,
    disc: DiscountSpec,
    u1: &UtilitySpec,
    u2: &UtilitySpec,
    penalty: f64,
) -> Payoff {
    payoff_of(ensemble, ensemble.wealth(), ensemble.consumption(), disc, u1, u2, penalty)
}

fn payoff_of(
    ensemble: &PathEnsemble,
    wealth: &[f64],
    consumption: &[f64],
    disc: DiscountSpec,
    u1: &UtilitySpec,
    u2: &UtilitySpec,
    penalty: f64,
) -> Payoff {
    let grid = ensemble.grid();
    let (n, m, dt) = (ensemble.n_paths(), grid.steps(), grid.dt());
    let weights: Vec<f64> = (0..=m).map(|j| (-disc.delta * j as f64 * dt).exp()).collect();
    let values: Vec<f64> = (0..n)
        .map(|i| {
            let running: f64 = (0..m).map(|j| weights[j] * u1.value(consumption[j * n + i])).sum::<f64>() * dt;
            let w_l = wealth[m * n + i];
            running + disc.lambda * weights[m] * u2.value(w_l) - penalty * (-w_l).max(0.0).powi(2)
        })
        .collect();
    let (mean, stderr) = stats::mean_stderr(&values);
    Payoff { mean, stderr }
}

/// Payoff after multiplying consumption at node `j` by `factors[j]` on
/// every path, with wealth recomputed from the budget recursion on the same
/// income draws.
pub fn perturbed_payoff(
    ensemble: &PathEnsemble,
    rate: &RatePath,
    prefs: &Preferences,
    factors: &[f64],
    penalty: f64,
) -> Result<Payoff> {
    let grid = ensemble.grid();
    if factors.len() != grid.len() {
        return config_err(format!("expected {} consumption factors, got {}", grid.len(), factors.len()));
    }
    let n = ensemble.n_paths();
    let c: Vec<f64> = ensemble.consumption().iter().enumerate().map(|(k, &v)| v * factors[k / n]).collect();
    let w = forward_wealth(&rate.sample(grid), grid.dt(), ensemble.initial_wealth(), ensemble.income(), &c);
    Ok(payoff_of(ensemble, &w, &c, prefs.disc, &prefs.u1, &prefs.u2, penalty))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub rate: f64,
    pub mean_wealth: f64,
    pub stderr: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Mean wealth strictly increases along the rows (in the given order).
    pub strictly_increasing: bool,
}

/// Mean wealth at age `t_probe` under each constant rate, every row solved
/// on the same simulated income draws.
pub fn expected_wealth_sweep(
    problem: &LifecycleProblem,
    rates: &[f64],
    t_probe: f64,
    opts: &PicardOptions,
    stream: u64,
) -> Result<SweepReport> {
    let grid = problem.grid;
    let j = grid
        .node_index(grid.t0() + t_probe, 1e-9 * (1.0 + grid.horizon()))
        .ok_or_else(|| crate::error::Error::OutOfRange { t: t_probe, lo: 0.0, hi: grid.horizon() })?;
    let mut rows = Vec::with_capacity(rates.len());
    for &r in rates {
        if !r.is_finite() {
            return config_err(format!("sweep rates must be finite, got {r}"));
        }
        let sol = problem.solve(&RatePath::constant(grid, r), stream, opts)?;
        let (mean, stderr) = stats::mean_stderr(sol.ensemble.wealth_at(j));
        rows.push(SweepRow {
            rate: r,
            mean_wealth: mean,
            stderr,
            converged: sol.converged,
            iterations: sol.iterations,
        });
    }
    let strictly_increasing = rows.windows(2).all(|w| w[1].mean_wealth > w[0].mean_wealth);
    Ok(SweepReport { rows, strictly_increasing })
}
