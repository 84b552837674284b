//! Backward induction on the discrete Euler equation over a (wealth,
//! income) grid. Used to start the Picard iteration near its fixed point.
//!
//! With `Y_j = u1'(c_j)`, the optimality condition of the discretized problem
//! is `Y_M = lambda u2'(w_M)` and `Y_j = e^{int (r - delta)} E[Y_{j+1}]`,
//! where `w_{j+1} = w_j + (r_j w_j + eta_j - c_j) dt` is known at node `j`.
//! Fixing end-of-step wealth `a = w_{j+1}` makes the right-hand side
//! explicit; consumption and start-of-step wealth follow (endogenous grid).

use crate::model::{IncomeModel, RatePath, TimeGrid};

use super::Preferences;

/// Probabilists' Gauss-Hermite nodes and weights (weights sum to 1).
fn gauss_hermite() -> [(f64, f64); 9] {
    [
        (-4.512745863399783, 2.234_584_400_774_66e-5),
        (-3.205_429_002_856_47, 2.789_141_321_231_77e-3),
        (-2.076_847_978_677_83, 4.991_640_676_521_79e-2),
        (-1.023255663789133, 2.440_975_028_949_39e-1),
        (0.0, 4.063_492_063_492_06e-1),
        (1.023255663789133, 2.440_975_028_949_39e-1),
        (2.076_847_978_677_83, 4.991_640_676_521_79e-2),
        (3.205_429_002_856_47, 2.789_141_321_231_77e-3),
        (4.512745863399783, 2.234_584_400_774_66e-5),
    ]
}

/// Consumption policy on a rectangular grid per node, interpolated
/// linearly in wealth and in log income.
pub(crate) struct GridPolicy {
    wealth: Vec<f64>,
    log_income: Vec<f64>,
    /// `[node][income][wealth]`, flattened.
    consumption: Vec<f64>,
}

fn bracket(xs: &[f64], x: f64) -> (usize, f64) {
    let n = xs.len();
    let k = xs.partition_point(|&v| v <= x).clamp(1, n - 1) - 1;
    (k, (x - xs[k]) / (xs[k + 1] - xs[k]))
}

impl GridPolicy {
    fn idx(&self, j: usize, e: usize, w: usize) -> usize {
        (j * self.log_income.len() + e) * self.wealth.len() + w
    }

    /// Consumption at node `j`: linear in wealth (extrapolated), cubic
    /// Catmull-Rom in log income (held constant outside the grid). Linear
    /// interpolation in income would add a convexity bias to every
    /// one-step expectation that swamps the true precautionary term.
    pub(crate) fn consumption(&self, j: usize, w: f64, eta: f64) -> f64 {
        let ne = self.log_income.len();
        let le = eta.max(1e-300).ln().clamp(self.log_income[0], self.log_income[ne - 1]);
        let (e, t) = bracket(&self.log_income, le);
        let (k, tw) = bracket(&self.wealth, w);
        let at = |e: usize| {
            let a = self.consumption[self.idx(j, e, k)];
            let b = self.consumption[self.idx(j, e, k + 1)];
            a + tw * (b - a)
        };
        let (p1, p2) = (at(e), at(e + 1));
        let p0 = if e > 0 { at(e - 1) } else { 2.0 * p1 - p2 };
        let p3 = if e + 2 < ne { at(e + 2) } else { 2.0 * p2 - p1 };
        let c = p1 + 0.5 * t * (p2 - p0 + t * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3 + t * (3.0 * (p1 - p2) + p3 - p0)));
        c.max(0.0)
    }
}

pub(crate) struct BackwardSetup<'a> {
    pub prefs: &'a Preferences,
    pub income: &'a IncomeModel,
    pub rate: &'a RatePath,
    pub grid: &'a TimeGrid,
    pub income_range: (f64, f64),
    pub wealth_range: (f64, f64),
}

pub(crate) fn solve_backward(s: &BackwardSetup) -> GridPolicy {
    const N_WEALTH: usize = 241;
    const N_INCOME: usize = 41;
    let (u1, u2, disc) = (&s.prefs.u1, &s.prefs.u2, s.prefs.disc);
    let (lo, hi) = s.wealth_range;
    let wealth: Vec<f64> = (0..N_WEALTH).map(|k| lo + (hi - lo) * k as f64 / (N_WEALTH - 1) as f64).collect();
    let (e_lo, e_hi) = (s.income_range.0.max(1e-8 * s.income_range.1.max(1e-8)), s.income_range.1.max(1e-8));
    let (l_lo, l_hi) = (e_lo.ln(), e_hi.ln().max(e_lo.ln() + 1e-6));
    let log_income: Vec<f64> = (0..N_INCOME).map(|k| l_lo + (l_hi - l_lo) * k as f64 / (N_INCOME - 1) as f64).collect();
    let steps = s.grid.steps();
    let dt = s.grid.dt();
    let nodes = s.grid.nodes();
    let rates = s.rate.sample(s.grid);
    let mut policy = GridPolicy { wealth, log_income, consumption: vec![0.0; (steps + 1) * N_INCOME * N_WEALTH] };

    for e in 0..N_INCOME {
        for k in 0..N_WEALTH {
            let i = policy.idx(steps, e, k);
            policy.consumption[i] = u1.inverse_marginal(disc.lambda * u2.marginal(policy.wealth[k]));
        }
    }
    let quad = gauss_hermite();
    for j in (0..steps).rev() {
        let growth = (s.rate.integral(nodes[j], nodes[j + 1]) - disc.delta * dt).exp();
        let age = j as f64 * dt;
        for e in 0..N_INCOME {
            let eta = policy.log_income[e].exp();
            let next_eta: Vec<(f64, f64)> = quad.iter().map(|&(z, wq)| (s.income.step(age, eta, dt, z), wq)).collect();
            let mut w_endo = Vec::with_capacity(N_WEALTH);
            let mut c_endo = Vec::with_capacity(N_WEALTH);
            for &a in &policy.wealth {
                let ey: f64 = next_eta.iter().map(|&(en, wq)| wq * u1.marginal(policy.consumption(j + 1, a, en))).sum();
                let c = u1.inverse_marginal(growth * ey);
                w_endo.push((a - (eta - c) * dt) / (1.0 + rates[j] * dt));
                c_endo.push(c);
            }
            for k in 0..N_WEALTH {
                let w = policy.wealth[k];
                let (m, t) = bracket(&w_endo, w);
                let c = c_endo[m] + t * (c_endo[m + 1] - c_endo[m]);
                let i = policy.idx(j, e, k);
                policy.consumption[i] = c.max(0.0);
            }
        }
    }
    policy
}
