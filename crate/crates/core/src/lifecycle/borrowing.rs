use super::estimator::{Design, RegressionSpec};
use crate::model::{IncomeModel, PathEnsemble, RatePath, TimeGrid};

/// Discount weights `exp(-int_{t_0}^{t_s} r)` at the cohort's grid nodes.
fn discount_to_birth(rate: &RatePath, grid: &TimeGrid) -> Vec<f64> {
    let t0 = grid.t0();
    grid.nodes().iter().map(|&t| (-rate.integral(t0, t)).exp()).collect()
}

/// Reverse cumulative trapezoid: `out[j] = int_{t_j}^{t_M} f`.
fn tail_trapezoid(values: &[f64], dt: f64) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for j in (0..values.len() - 1).rev() {
        out[j] = out[j + 1] + 0.5 * dt * (values[j] + values[j + 1]);
    }
    out
}

/// GBM factor `A_j = int_{t_j}^{L} exp(-int_{t_j}^{s} r) e^{mu (s - t_j)} ds`
/// (trapezoid in `s`); the limit at node `j` is `-eta_j A_j`.
pub fn gbm_limit_factors(rate: &RatePath, grid: &TimeGrid, mu: f64) -> Vec<f64> {
    let d = discount_to_birth(rate, grid);
    let t0 = grid.t0();
    let growth: Vec<f64> = grid.nodes().iter().map(|&t| (mu * (t - t0)).exp()).collect();
    let weighted: Vec<f64> = d.iter().zip(&growth).map(|(a, b)| a * b).collect();
    let tail = tail_trapezoid(&weighted, grid.dt());
    tail.iter().zip(&weighted).map(|(t, w)| t / w).collect()
}

/// Natural borrowing limit `-E[int_{t_j}^{L} exp(-int_{t_j}^{s} r) eta_s ds | F_{t_j}]`
/// on every path at node `j`. GBM uses the exact conditional income mean;
/// other models regress the pathwise discounted future income on current
/// income.
pub fn natural_borrowing_limit(rate: &RatePath, model: &IncomeModel, ensemble: &PathEnsemble, j: usize) -> Vec<f64> {
    borrowing_limits(rate, model, ensemble, &[j]).pop().expect("one node requested")
}

/// Limits at several nodes, sharing the discounting work.
pub fn borrowing_limits(
    rate: &RatePath,
    model: &IncomeModel,
    ensemble: &PathEnsemble,
    nodes: &[usize],
) -> Vec<Vec<f64>> {
    let grid = ensemble.grid();
    let n = ensemble.n_paths();
    if let crate::model::IncomeDynamics::Gbm { mu, .. } = model.dynamics {
        let factors = gbm_limit_factors(rate, grid, mu);
        return nodes.iter().map(|&j| ensemble.income_at(j).iter().map(|e| -e * factors[j]).collect()).collect();
    }
    let d = discount_to_birth(rate, grid);
    let dt = grid.dt();
    let income = ensemble.income();
    // pathwise int_{t_j}^{L} (d_s / d_j) eta_s ds for every node, computed backward
    let mut tails = vec![0.0; n * grid.len()];
    for j in (0..grid.steps()).rev() {
        for i in 0..n {
            let a = d[j] * income[j * n + i];
            let b = d[j + 1] * income[(j + 1) * n + i];
            tails[j * n + i] = tails[(j + 1) * n + i] + 0.5 * dt * (a + b);
        }
    }
    let spec = RegressionSpec { wealth: false, ..RegressionSpec::default() };
    nodes
        .iter()
        .map(|&j| {
            let target: Vec<f64> = tails[j * n..(j + 1) * n].iter().map(|v| v / d[j]).collect();
            let eta = ensemble.income_at(j);
            let design = Design::new(&spec, ensemble.wealth_at(j), eta);
            design.fitted(&design.fit(&target)).into_iter().map(|v| -v.max(0.0)).collect()
        })
        .collect()
}

/// Count of (path, node) pairs with wealth below the limit by more than
/// `slack`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitViolations {
    pub violations: usize,
    pub pairs: usize,
    /// Largest shortfall `limit - w` observed (negative when none).
    pub worst_shortfall: f64,
}

impl LimitViolations {
    pub fn fraction(&self) -> f64 {
        self.violations as f64 / self.pairs.max(1) as f64
    }
}

pub fn borrowing_limit_violations(
    rate: &RatePath,
    model: &IncomeModel,
    ensemble: &PathEnsemble,
    slack: f64,
) -> LimitViolations {
    let nodes: Vec<usize> = (0..ensemble.grid().len()).collect();
    let limits = borrowing_limits(rate, model, ensemble, &nodes);
    let mut out = LimitViolations { violations: 0, pairs: 0, worst_shortfall: f64::NEG_INFINITY };
    for (j, lim) in limits.iter().enumerate() {
        for (w, l) in ensemble.wealth_at(j).iter().zip(lim) {
            out.pairs += 1;
            out.worst_shortfall = out.worst_shortfall.max(l - w);
            if *w < l - slack {
                out.violations += 1;
            }
        }
    }
    out
}
