//! The noiseless life-cycle problem: the CRRA closed form and a discrete
//! solver for general utilities and income paths.

use crate::error::{config_err, Error, Result};
use crate::model::{discount_factor, DiscountSpec, RatePath, TimeGrid, UtilitySpec};

/// Optimal consumption and wealth for a noiseless life-cycle problem.
#[derive(Debug, Clone, PartialEq)]
pub struct DeterministicSolution {
    pub grid: TimeGrid,
    pub income: Vec<f64>,
    pub consumption: Vec<f64>,
    pub wealth: Vec<f64>,
    pub terminal_wealth: f64,
    /// Compounded lifetime income, `int_0^L e^{int_s^L r} eta_s ds`.
    pub xi: f64,
    /// Compounded consumption weight per unit of terminal wealth.
    pub theta: f64,
}

/// Wealth from the budget identity `w' = r w + eta - c` by variation of
/// constants, with trapezoid quadrature of the discounted net flow.
pub fn wealth_by_variation_of_constants(
    r: &RatePath,
    grid: &TimeGrid,
    w0: f64,
    income: &[f64],
    consumption: &[f64],
) -> Vec<f64> {
    let t0 = grid.t0();
    let growth: Vec<f64> = grid.nodes().iter().map(|&t| r.integral(t0, t)).collect();
    let flow: Vec<f64> = (0..grid.len()).map(|j| (-growth[j]).exp() * (income[j] - consumption[j])).collect();
    let acc = grid.cumulative_trapezoid(&flow);
    (0..grid.len()).map(|j| growth[j].exp() * (w0 + acc[j])).collect()
}

/// Closed-form optimum for `u1 = u2` CRRA with risk aversion `gamma` and
/// income `eta0 * e^{mu * age}` on `grid` (ages measured from `grid.t0()`).
pub fn solve_deterministic_crra(
    w0: f64,
    eta0: f64,
    mu: f64,
    r: &RatePath,
    disc: DiscountSpec,
    gamma: f64,
    grid: &TimeGrid,
) -> Result<DeterministicSolution> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return config_err(format!("risk aversion must be positive, got {gamma}"));
    }
    if disc.lambda <= 0.0 {
        return config_err("the closed form needs a positive bequest weight");
    }
    let (t0, end) = (grid.t0(), grid.end());
    let nodes = grid.nodes();
    let income: Vec<f64> = nodes.iter().map(|&t| eta0 * (mu * (t - t0)).exp()).collect();
    // c_t = weight_t * w_L
    let scale = disc.lambda.powf(-1.0 / gamma);
    let weight: Vec<f64> =
        nodes.iter().map(|&t| scale * (-(r.integral(t, end) - disc.delta * (end - t)) / gamma).exp()).collect();
    let compound: Vec<f64> = nodes.iter().map(|&t| r.integral(t, end).exp()).collect();
    let xi = grid.trapezoid(&compound.iter().zip(&income).map(|(a, b)| a * b).collect::<Vec<_>>());
    let theta = grid.trapezoid(&compound.iter().zip(&weight).map(|(a, b)| a * b).collect::<Vec<_>>());
    if 1.0 + theta == 0.0 {
        return Err(Error::Numerical("1 + theta vanished in the closed form".into()));
    }
    let terminal_wealth = (r.integral(t0, end).exp() * w0 + xi) / (1.0 + theta);
    let consumption: Vec<f64> = weight.iter().map(|w| w * terminal_wealth).collect();
    let wealth = wealth_by_variation_of_constants(r, grid, w0, &income, &consumption);
    Ok(DeterministicSolution { grid: *grid, income, consumption, wealth, terminal_wealth, xi, theta })
}

/// Noiseless solution of the discretized problem: consumption
/// `c_j = (u1')^{-1}(lambda * D_j * u2'(x))` and forward Euler wealth, with
/// the terminal value `x` chosen so that the recursion ends at `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePath {
    pub consumption: Vec<f64>,
    pub wealth: Vec<f64>,
}

/// `lambda * exp(int_{t_j}^L (r - delta))` per node, the factor in front of
/// the conditional expected marginal bequest.
pub fn marginal_weights(r: &RatePath, disc: DiscountSpec, grid: &TimeGrid) -> Vec<f64> {
    grid.nodes().iter().map(|&t| disc.lambda * discount_factor(r, disc.delta, t, grid.end())).collect()
}

/// Euler recursion `w_{j+1} = w_j + (r_j w_j + eta_j - c_j) dt`.
pub fn euler_wealth(rates: &[f64], dt: f64, w0: f64, income: &[f64], consumption: &[f64]) -> Vec<f64> {
    let mut w = Vec::with_capacity(rates.len());
    w.push(w0);
    for j in 0..rates.len() - 1 {
        let prev = w[j];
        w.push(prev + (rates[j] * prev + income[j] - consumption[j]) * dt);
    }
    w
}

fn terminal_of(rates: &[f64], dt: f64, w0: f64, income: &[f64], cons: impl Fn(usize) -> f64) -> f64 {
    let mut w = w0;
    for j in 0..rates.len() - 1 {
        w += (rates[j] * w + income[j] - cons(j)) * dt;
    }
    w
}

pub fn solve_discrete_path(
    u1: &UtilitySpec,
    u2: &UtilitySpec,
    weights: &[f64],
    rates: &[f64],
    dt: f64,
    w0: f64,
    income: &[f64],
) -> Result<DiscretePath> {
    let policy = |x: f64, j: usize| u1.inverse_marginal(weights[j] * u2.marginal(x));
    let excess = |x: f64| terminal_of(rates, dt, w0, income, |j| policy(x, j)) - x;
    // Wealth is decreasing in consumption, so the no-consumption terminal
    // wealth bounds the root from above.
    let hi0 = terminal_of(rates, dt, w0, income, |_| 0.0);
    let mut hi = hi0;
    let mut step = 1.0 + hi.abs();
    let mut lo = hi - step;
    let mut found = false;
    for _ in 0..200 {
        if excess(lo) > 0.0 {
            found = true;
            break;
        }
        hi = lo;
        step *= 2.0;
        lo = hi0 - step;
    }
    if !found {
        return Err(Error::Numerical(format!("no terminal-wealth bracket below {hi0}")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = 0.5 * (lo + hi);
    let consumption: Vec<f64> = (0..rates.len()).map(|j| policy(x, j)).collect();
    let wealth = euler_wealth(rates, dt, w0, income, &consumption);
    Ok(DiscretePath { consumption, wealth })
}

/// `int_0^L e^{-delta s} u1(c_s) ds + lambda e^{-delta L} u2(w_L)` with the
/// trapezoid rule.
pub fn deterministic_payoff(
    sol: &DeterministicSolution,
    disc: DiscountSpec,
    u1: &UtilitySpec,
    u2: &UtilitySpec,
) -> f64 {
    let g = &sol.grid;
    let t0 = g.t0();
    let flow: Vec<f64> =
        g.nodes().iter().zip(&sol.consumption).map(|(&t, &c)| (-disc.delta * (t - t0)).exp() * u1.value(c)).collect();
    g.trapezoid(&flow) + disc.lambda * (-disc.delta * g.horizon()).exp() * u2.value(sol.terminal_wealth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::rng;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn reference(steps: usize) -> (RatePath, DiscountSpec, TimeGrid) {
        let g = TimeGrid::new(0.0, 60.0, steps).unwrap();
        (RatePath::constant(g, 0.03), DiscountSpec::new(0.02, 100.0).unwrap(), g)
    }

    #[test]
    fn log_utility_without_growth_consumes_terminal_wealth() {
        let g = TimeGrid::new(0.0, 60.0, 600).unwrap();
        let r = RatePath::constant(g, 0.0);
        let s = solve_deterministic_crra(10.0, 0.0, 0.0, &r, DiscountSpec::new(0.0, 1.0).unwrap(), 1.0, &g).unwrap();
        assert_relative_eq!(s.terminal_wealth, 10.0 / 61.0, max_relative = 1e-12);
        assert!(s.consumption.iter().all(|&c| (c - 10.0 / 61.0).abs() < 1e-12));
        assert_relative_eq!(s.wealth[600], 10.0 / 61.0, max_relative = 1e-10);
    }

    #[test]
    fn empty_economy_stays_empty() {
        let (r, d, g) = reference(600);
        let s = solve_deterministic_crra(0.0, 0.0, 0.01, &r, d, 2.0, &g).unwrap();
        assert!(s.consumption.iter().chain(&s.wealth).all(|&v| v == 0.0));
    }

    #[test]
    fn reference_household_shapes() {
        let (r, d, g) = reference(600);
        let s = solve_deterministic_crra(10.0, 1.0, 0.01, &r, d, 2.0, &g).unwrap();
        assert!(s.consumption.windows(2).all(|w| w[1] > w[0]));
        // wealth dips while consumption exceeds income, then rebuilds
        let trough = s.wealth.iter().cloned().fold(f64::MAX, f64::min);
        assert!(trough < s.wealth[0] && trough < s.wealth[600]);
        assert!(s.terminal_wealth > 0.0);
        assert_relative_eq!(s.wealth[600], s.terminal_wealth, max_relative = 1e-12);
    }

    #[test]
    fn budget_residual_is_first_order() {
        let (r, d, g) = reference(600);
        let s = solve_deterministic_crra(10.0, 1.0, 0.01, &r, d, 2.0, &g).unwrap();
        let dt = g.dt();
        for j in 1..600 {
            let fd = (s.wealth[j + 1] - s.wealth[j - 1]) / (2.0 * dt);
            let rhs = 0.03 * s.wealth[j] + s.income[j] - s.consumption[j];
            assert!((fd - rhs).abs() < 10.0 * dt, "node {j}: {fd} vs {rhs}");
        }
    }

    #[test]
    fn refinement_changes_little() {
        let (r, d, g) = reference(300);
        let coarse = solve_deterministic_crra(10.0, 1.0, 0.01, &r, d, 2.0, &g).unwrap();
        let (r, d, g) = reference(600);
        let fine = solve_deterministic_crra(10.0, 1.0, 0.01, &r, d, 2.0, &g).unwrap();
        assert!((coarse.consumption[0] - fine.consumption[0]).abs() < 1e-2 * fine.consumption[0]);
        assert!((coarse.terminal_wealth - fine.terminal_wealth).abs() < 1e-2 * fine.terminal_wealth);
    }

    #[test]
    fn euler_integration_reproduces_closed_form_wealth() {
        let (r, d, g) = reference(600);
        let s = solve_deterministic_crra(10.0, 1.0, 0.01, &r, d, 2.0, &g).unwrap();
        let w = euler_wealth(&r.sample(&g), g.dt(), 10.0, &s.income, &s.consumption);
        for (a, b) in w.iter().zip(&s.wealth) {
            assert!((a - b).abs() < 1e-2 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn discrete_solver_matches_closed_form() {
        let (r, d, g) = reference(600);
        let s = solve_deterministic_crra(10.0, 1.0, 0.01, &r, d, 2.0, &g).unwrap();
        let u = UtilitySpec::crra(2.0).unwrap();
        let p =
            solve_discrete_path(&u, &u, &marginal_weights(&r, d, &g), &r.sample(&g), g.dt(), 10.0, &s.income).unwrap();
        for j in 0..=600 {
            assert!((p.consumption[j] - s.consumption[j]).abs() <= 1e-2 * s.consumption[j]);
            assert!((p.wealth[j] - s.wealth[j]).abs() <= 1e-2 * (1.0 + s.wealth[j].abs()));
        }
    }

    #[test]
    fn closed_form_beats_perturbed_policies() {
        let (r, d, g) = reference(600);
        let s = solve_deterministic_crra(10.0, 1.0, 0.01, &r, d, 2.0, &g).unwrap();
        let u = UtilitySpec::crra(2.0).unwrap();
        let best = deterministic_payoff(&s, d, &u, &u);
        assert!(best.is_finite());
        let mut rng = rng::stream(7, rng::DOMAIN_PERTURB, 0, 0);
        for k in 0..21 {
            let xi: f64 = if k == 0 { 0.05 } else { rng.gen_range(-0.1..0.1) };
            let mut p = s.clone();
            p.consumption.iter_mut().for_each(|c| *c *= 1.0 + xi);
            p.wealth = wealth_by_variation_of_constants(&r, &g, 10.0, &p.income, &p.consumption);
            p.terminal_wealth = p.wealth[600];
            assert!(deterministic_payoff(&p, d, &u, &u) < best, "xi = {xi}");
        }
    }

    #[test]
    fn payoff_of_unit_log_consumption_is_zero() {
        let g = TimeGrid::new(0.0, 30.0, 30).unwrap();
        let u = UtilitySpec::crra(1.0).unwrap();
        let sol = DeterministicSolution {
            grid: g,
            income: vec![1.0; 31],
            consumption: vec![1.0; 31],
            wealth: vec![0.0; 31],
            terminal_wealth: 0.0,
            xi: 0.0,
            theta: 0.0,
        };
        assert_eq!(deterministic_payoff(&sol, DiscountSpec::new(0.0, 0.0).unwrap(), &u, &u), 0.0);
    }

    #[test]
    fn zero_bequest_weight_is_rejected_by_the_closed_form() {
        let (r, _, g) = reference(60);
        assert!(solve_deterministic_crra(1.0, 1.0, 0.0, &r, DiscountSpec::new(0.0, 0.0).unwrap(), 2.0, &g).is_err());
    }
}
