use std::collections::HashMap;

use rayon::prelude::*;

use super::backward::{solve_backward, BackwardSetup};
use super::estimator::{scaled_conditional_marginal, Design, RegressionSpec};
use crate::deterministic::{marginal_weights, solve_discrete_path};
use crate::error::{config_err, Result};
use crate::model::{DiscountSpec, IncomeModel, PathEnsemble, RatePath, TimeGrid, UtilitySpec, WealthLaw};
use crate::stats;

/// Consumption utility, bequest utility and discounting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preferences {
    pub u1: UtilitySpec,
    pub u2: UtilitySpec,
    pub disc: DiscountSpec,
}

/// A single cohort's problem: preferences, income, the law of wealth at
/// birth and the simulation size.
#[derive(Debug, Clone)]
pub struct LifecycleProblem {
    pub prefs: Preferences,
    pub income: IncomeModel,
    pub wealth_law: WealthLaw,
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub seed: u64,
}

impl LifecycleProblem {
    pub fn simulate(&self, stream: u64) -> Result<PathEnsemble> {
        PathEnsemble::simulate(self.grid, &self.income, self.wealth_law, self.n_paths, self.seed, stream)
    }

    pub fn solve(&self, rate: &RatePath, stream: u64, opts: &PicardOptions) -> Result<LifecycleSolution> {
        picard_solve(&self.prefs, &self.income, self.simulate(stream)?, rate, opts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialGuess {
    /// Each path's optimum for the noiseless problem started from its own
    /// initial wealth and income.
    Deterministic,
    /// Forward simulation of the policy obtained by backward induction on
    /// the discrete Euler equation over a (wealth, income) grid.
    Backward,
    /// Wealth held at its initial value.
    InitialWealth,
}

/// How `E[u2'(w_L) | state]` is regressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegressionTarget {
    /// Project `u2'(w_L)` directly.
    Direct,
    /// Fit a level `m(state)` for `w_L`, then project the ratio
    /// `u2'(w_L) / u2'(m)`. The level is known at the node, so the product
    /// is still a conditional mean, but relative accuracy is uniform across
    /// rich and poor paths.
    Scaled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardOptions {
    /// Sup-norm tolerance on `Theta(w) - w`; `None` means
    /// `1e-6 * (1 + |mean initial wealth|)`.
    pub tol: Option<f64>,
    pub max_iter: usize,
    /// Initial relaxation `theta` in `w <- w + theta (Theta(w) - w)`; halved
    /// after three consecutive iterations whose residual did not shrink.
    pub damping: f64,
    pub regression: RegressionSpec,
    pub target: RegressionTarget,
    pub initial: InitialGuess,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            tol: None,
            max_iter: 200,
            damping: 1.0,
            regression: RegressionSpec::default(),
            target: RegressionTarget::Scaled,
            initial: InitialGuess::Deterministic,
        }
    }
}

impl PicardOptions {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.tol {
            if !(t.is_finite() && t > 0.0) {
                return config_err(format!("fixed-point tolerance must be positive, got {t}"));
            }
        }
        if self.max_iter == 0 {
            return config_err("max_iter must be at least 1");
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return config_err(format!("damping must lie in (0, 1], got {}", self.damping));
        }
        if !(1..=8).contains(&self.regression.degree) {
            return config_err(format!("regression degree must lie in 1..=8, got {}", self.regression.degree));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LifecycleSolution {
    /// Best iterate `w` (smallest residual) and the consumption and wealth
    /// it generates: the stored wealth is `Theta(w)`, so the budget
    /// recursion holds exactly on the ensemble.
    pub ensemble: PathEnsemble,
    pub rate: RatePath,
    pub iterations: usize,
    /// `sup |Theta(w_k) - w_k|` per iteration (undamped).
    pub residuals: Vec<f64>,
    /// Ratios of successive residuals.
    pub contraction_ratios: Vec<f64>,
    pub converged: bool,
    pub tolerance: f64,
    /// Relaxation in force when the iteration stopped.
    pub final_damping: f64,
    pub kappa_used: f64,
    /// Node fits that needed the ridge fallback, summed over iterations.
    pub ridge_fallbacks: usize,
}

impl LifecycleSolution {
    pub fn final_residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(f64::NAN)
    }
}

/// The solution map `w -> Theta(w)` for a fixed ensemble and rate path.
struct ThetaMap<'a> {
    prefs: Preferences,
    spec: RegressionSpec,
    target: RegressionTarget,
    weights: Vec<f64>,
    rates: Vec<f64>,
    dt: f64,
    n: usize,
    len: usize,
    income: &'a [f64],
    w0: &'a [f64],
}

impl<'a> ThetaMap<'a> {
    fn new(
        prefs: Preferences,
        spec: RegressionSpec,
        target: RegressionTarget,
        rate: &RatePath,
        ensemble: &'a PathEnsemble,
    ) -> Self {
        let grid = ensemble.grid();
        Self {
            prefs,
            spec,
            target,
            weights: marginal_weights(rate, prefs.disc, grid),
            rates: rate.sample(grid),
            dt: grid.dt(),
            n: ensemble.n_paths(),
            len: grid.len(),
            income: ensemble.income(),
            w0: ensemble.initial_wealth(),
        }
    }

    /// Regression estimate of `E[g | w_j, eta_j]` at every path's own state,
    /// plus whether the ridge fallback was needed.
    fn conditional_marginal(&self, w: &[f64], g: &[f64], j: usize) -> (Vec<f64>, bool) {
        let n = self.n;
        let (wj, eta) = (&w[j * n..(j + 1) * n], &self.income[j * n..(j + 1) * n]);
        let design = Design::new(&self.spec, wj, eta);
        let est = match self.target {
            RegressionTarget::Direct => design.fitted(&design.fit(g)),
            RegressionTarget::Scaled => scaled_conditional_marginal(&design, &w[(self.len - 1) * n..], &self.prefs.u2),
        };
        (est, design.used_ridge())
    }

    /// Consumption at node `j` implied by the wealth iterate `w`, given the
    /// terminal marginals `g` and their range. Fitted values are confined to
    /// the range of `g`, which contains every conditional mean of `g`.
    fn node_consumption(&self, w: &[f64], g: &[f64], range: (f64, f64), j: usize) -> (Vec<f64>, bool) {
        let u1 = &self.prefs.u1;
        let weight = self.weights[j];
        if j == self.len - 1 {
            return (g.iter().map(|&m| u1.inverse_marginal(weight * m)).collect(), false);
        }
        let (est, ridge) = self.conditional_marginal(w, g, j);
        (est.iter().map(|&m| u1.inverse_marginal(weight * m.clamp(range.0, range.1))).collect(), ridge)
    }

    fn terminal_marginals(&self, w: &[f64]) -> (Vec<f64>, (f64, f64)) {
        let g: Vec<f64> = w[(self.len - 1) * self.n..].iter().map(|&x| self.prefs.u2.marginal(x)).collect();
        let range = g.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        (g, range)
    }

    /// Consumption (node-major) for a wealth iterate, plus the number of
    /// ridge fallbacks. Nodes are fitted independently and collected in
    /// order, so the result does not depend on the worker count.
    fn consumption(&self, w: &[f64]) -> (Vec<f64>, usize) {
        let (g, range) = self.terminal_marginals(w);
        let per_node: Vec<(Vec<f64>, bool)> =
            (0..self.len).into_par_iter().map(|j| self.node_consumption(w, &g, range, j)).collect();
        let ridges = per_node.iter().filter(|(_, r)| *r).count();
        let mut c = Vec::with_capacity(self.n * self.len);
        for (v, _) in per_node {
            c.extend(v);
        }
        (c, ridges)
    }

    fn apply(&self, w: &[f64]) -> (Vec<f64>, Vec<f64>, usize) {
        let (c, ridges) = self.consumption(w);
        let next = forward_wealth(&self.rates, self.dt, self.w0, self.income, &c);
        (c, next, ridges)
    }
}

/// Node-major wealth from the budget recursion
/// `w_{j+1} = w_j + (r_j w_j + eta_j - c_j) dt`.
pub fn forward_wealth(rates: &[f64], dt: f64, w0: &[f64], income: &[f64], c: &[f64]) -> Vec<f64> {
    let n = w0.len();
    let len = rates.len();
    let mut w = vec![0.0; n * len];
    w[..n].copy_from_slice(w0);
    for j in 0..len - 1 {
        let (head, tail) = w.split_at_mut((j + 1) * n);
        let prev = &head[j * n..];
        let r = rates[j];
        for (i, next) in tail[..n].iter_mut().enumerate() {
            let k = j * n + i;
            *next = prev[i] + (r * prev[i] + income[k] - c[k]) * dt;
        }
    }
    w
}

/// Consumption at node `j` with the ensemble's wealth as the previous
/// iterate: `(u1')^{-1}(lambda D_j E[u2'(w_L) | w_j, eta_j])`.
pub fn consumption_from_terminal(
    prefs: &Preferences,
    rate: &RatePath,
    ensemble: &PathEnsemble,
    spec: &RegressionSpec,
    target: RegressionTarget,
    j: usize,
) -> Vec<f64> {
    let map = ThetaMap::new(*prefs, *spec, target, rate, ensemble);
    let (g, range) = map.terminal_marginals(ensemble.wealth());
    map.node_consumption(ensemble.wealth(), &g, range, j).0
}

/// One application of the solution map to the ensemble's wealth; returns
/// `(consumption, new wealth)`, both node-major.
pub fn theta_map_apply(
    prefs: &Preferences,
    rate: &RatePath,
    ensemble: &PathEnsemble,
    spec: &RegressionSpec,
    target: RegressionTarget,
) -> (Vec<f64>, Vec<f64>) {
    let (c, w, _) = ThetaMap::new(*prefs, *spec, target, rate, ensemble).apply(ensemble.wealth());
    (c, w)
}

fn noiseless_income(model: &IncomeModel, eta0: f64, grid: &TimeGrid) -> Vec<f64> {
    let dt = grid.dt();
    let mut out = Vec::with_capacity(grid.len());
    out.push(eta0);
    for j in 0..grid.steps() {
        let prev = out[j];
        out.push(model.step(j as f64 * dt, prev, dt, 0.0));
    }
    out
}

/// Node-major initial iterate: each path's noiseless optimum. Paths sharing
/// an initial state share one solve.
fn deterministic_guess(
    prefs: &Preferences,
    model: &IncomeModel,
    rate: &RatePath,
    ensemble: &PathEnsemble,
) -> Result<Vec<f64>> {
    let grid = ensemble.grid();
    let n = ensemble.n_paths();
    let weights = marginal_weights(rate, prefs.disc, grid);
    let rates = rate.sample(grid);
    let keys: Vec<(u64, u64)> =
        ensemble.initial_wealth().iter().zip(ensemble.income_at(0)).map(|(w, e)| (w.to_bits(), e.to_bits())).collect();
    let mut unique = keys.clone();
    unique.sort_unstable();
    unique.dedup();
    let solved: Vec<Result<Vec<f64>>> = unique
        .par_iter()
        .map(|&(w, e)| {
            let income = noiseless_income(model, f64::from_bits(e), grid);
            solve_discrete_path(&prefs.u1, &prefs.u2, &weights, &rates, grid.dt(), f64::from_bits(w), &income)
                .map(|p| p.wealth)
        })
        .collect();
    let mut table = HashMap::with_capacity(unique.len());
    for (k, s) in unique.into_iter().zip(solved) {
        table.insert(k, s?);
    }
    let mut out = vec![0.0; n * grid.len()];
    for (i, k) in keys.iter().enumerate() {
        for (j, v) in table[k].iter().enumerate() {
            out[j * n + i] = *v;
        }
    }
    Ok(out)
}

fn backward_guess(
    prefs: &Preferences,
    model: &IncomeModel,
    rate: &RatePath,
    ensemble: &PathEnsemble,
) -> Result<Vec<f64>> {
    let grid = ensemble.grid();
    let n = ensemble.n_paths();
    let det = deterministic_guess(prefs, model, rate, ensemble)?;
    let (lo, hi) = det.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let pad = 0.5 * (hi - lo) + 1.0 + 0.5 * hi.abs().max(lo.abs());
    let income = ensemble.income();
    let (elo, ehi) = income.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let policy = solve_backward(&BackwardSetup {
        prefs,
        income: model,
        rate,
        grid,
        income_range: (elo, ehi),
        wealth_range: (lo - pad, hi + pad),
    });
    let rates = rate.sample(grid);
    let dt = grid.dt();
    let mut out = vec![0.0; n * grid.len()];
    out[..n].copy_from_slice(ensemble.initial_wealth());
    for j in 0..grid.steps() {
        for i in 0..n {
            let (w, eta) = (out[j * n + i], income[j * n + i]);
            let c = policy.consumption(j, w, eta);
            out[(j + 1) * n + i] = w + (rates[j] * w + eta - c) * dt;
        }
    }
    Ok(out)
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| {
        let d = (x - y).abs();
        if d.is_nan() || m.is_nan() {
            f64::NAN
        } else {
            m.max(d)
        }
    })
}

/// Damped Picard iteration for the fixed point `w = Theta(w)` on a
/// simulated ensemble. Convergence is declared when the undamped residual
/// `sup |Theta(w) - w|` falls below the tolerance. Non-convergence is not an
/// error: the solution carries `converged = false` and the residual history.
pub fn picard_solve(
    prefs: &Preferences,
    model: &IncomeModel,
    mut ensemble: PathEnsemble,
    rate: &RatePath,
    opts: &PicardOptions,
) -> Result<LifecycleSolution> {
    opts.validate()?;
    let tol = opts.tol.unwrap_or_else(|| 1e-6 * (1.0 + stats::mean(ensemble.initial_wealth()).abs()));
    let map = ThetaMap::new(*prefs, opts.regression, opts.target, rate, &ensemble);
    let mut x = match opts.initial {
        InitialGuess::Deterministic => deterministic_guess(prefs, model, rate, &ensemble)?,
        InitialGuess::Backward => backward_guess(prefs, model, rate, &ensemble)?,
        InitialGuess::InitialWealth => {
            let n = ensemble.n_paths();
            let w0 = ensemble.initial_wealth();
            (0..ensemble.grid().len() * n).map(|k| w0[k % n]).collect()
        }
    };

    let mut residuals: Vec<f64> = Vec::new();
    let mut ratios = Vec::new();
    let mut ridge_fallbacks = 0;
    let mut converged = false;
    let mut theta = opts.damping;
    let mut streak = 0;
    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;

    for _ in 0..opts.max_iter {
        let (c, g, ridges) = map.apply(&x);
        ridge_fallbacks += ridges;
        let res = sup_distance(&g, &x);
        if let Some(&p) = residuals.last() {
            ratios.push(res / p);
        }
        residuals.push(res);
        if !res.is_finite() {
            break;
        }
        if best.as_ref().is_none_or(|(r, _, _)| res <= *r) {
            best = Some((res, c, g.clone()));
        }
        if res < tol {
            converged = true;
            break;
        }
        if ratios.last().is_some_and(|&r| r >= 1.0) {
            streak += 1;
            if streak == 3 {
                theta *= 0.5;
                streak = 0;
            }
        } else {
            streak = 0;
        }
        for (a, b) in x.iter_mut().zip(&g) {
            *a += theta * (b - *a);
        }
    }

    let (c, w) = match best {
        Some((_, c, w)) => (c, w),
        None => {
            let (c, g, _) = map.apply(&x);
            (c, g)
        }
    };
    ensemble.set_trajectories(w, c);
    Ok(LifecycleSolution {
        ensemble,
        rate: rate.clone(),
        iterations: residuals.len(),
        residuals,
        contraction_ratios: ratios,
        converged,
        tolerance: tol,
        final_damping: theta,
        kappa_used: prefs.u1.kappa(),
        ridge_fallbacks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::IncomeLaw;

    fn problem(horizon: f64, steps: usize, sigma: f64, lambda: f64, n: usize) -> (LifecycleProblem, RatePath) {
        let grid = TimeGrid::new(0.0, horizon, steps).unwrap();
        let u = UtilitySpec::crra(2.0).unwrap();
        let prefs = Preferences { u1: u, u2: u, disc: DiscountSpec::new(0.02, lambda).unwrap() };
        let income = IncomeModel::gbm(0.01, sigma, IncomeLaw::Point(1.0)).unwrap();
        let p = LifecycleProblem { prefs, income, wealth_law: WealthLaw::Point(10.0), grid, n_paths: n, seed: 7 };
        (p, RatePath::constant(grid, 0.03))
    }

    #[test]
    fn geometric_and_balanced_budgets() {
        let rates = vec![0.03; 11];
        let w = forward_wealth(&rates, 0.1, &[2.0, 3.0], &[0.0; 22], &[0.0; 22]);
        for j in 0..11 {
            assert!((w[j * 2] - 2.0 * 1.003f64.powi(j as i32)).abs() < 1e-13);
        }
        let eta: Vec<f64> = (0..22).map(|k| 0.5 + k as f64 * 0.1).collect();
        let w = forward_wealth(&[0.0; 11], 0.1, &[2.0, 3.0], &eta, &eta);
        assert!(w.chunks(2).all(|p| p == [2.0, 3.0]));
    }

    #[test]
    fn terminal_node_collapses_to_pathwise_marginal() {
        let (p, r) = problem(5.0, 50, 0.1, 100.0, 200);
        let sol = p.solve(&r, 0, &PicardOptions::default()).unwrap();
        let spec = RegressionSpec::default();
        let c = consumption_from_terminal(&p.prefs, &r, &sol.ensemble, &spec, RegressionTarget::Scaled, 50);
        let u = p.prefs.u1;
        for (ci, wi) in c.iter().zip(sol.ensemble.wealth_at(50)) {
            assert_eq!(*ci, u.inverse_marginal(100.0 * u.marginal(*wi)));
        }
    }

    #[test]
    fn unit_marginal_gives_unit_consumption() {
        // lambda D_j u2'(w_L) = u1'(1) = 1 on every path when w_L = sqrt(lambda D_j).
        let (p, r) = problem(5.0, 50, 0.1, 100.0, 300);
        let mut ens = p.simulate(0).unwrap();
        let j = 20;
        let weight = marginal_weights(&r, p.prefs.disc, &p.grid)[j];
        let n = ens.n_paths();
        let mut w = ens.wealth().to_vec();
        for v in &mut w[50 * n..] {
            *v = weight.sqrt();
        }
        let c0 = vec![0.0; w.len()];
        ens.set_trajectories(w, c0);
        for target in [RegressionTarget::Direct, RegressionTarget::Scaled] {
            let c = consumption_from_terminal(&p.prefs, &r, &ens, &RegressionSpec::default(), target, j);
            assert!(c.iter().all(|v| (v - 1.0).abs() < 1e-9), "{target:?}");
        }
    }

    #[test]
    fn zero_bequest_weight_consumes_the_cap_at_once() {
        let (p, r) = problem(5.0, 50, 0.1, 0.0, 100);
        let sol = p.solve(&r, 0, &PicardOptions::default()).unwrap();
        // The first application already consumes kappa everywhere; the
        // second reproduces its output exactly.
        assert!(sol.converged);
        assert_eq!(sol.iterations, 2);
        assert_eq!(sol.residuals[1], 0.0);
        assert!(sol.ensemble.consumption().iter().all(|&c| c == p.prefs.u1.kappa()));
    }

    #[test]
    fn short_horizon_converges_from_any_start() {
        let (p, r) = problem(5.0, 50, 0.1, 100.0, 1000);
        let a = p.solve(&r, 0, &PicardOptions::default()).unwrap();
        let b = p.solve(&r, 0, &PicardOptions { initial: InitialGuess::InitialWealth, ..Default::default() }).unwrap();
        let c = p.solve(&r, 0, &PicardOptions { initial: InitialGuess::Backward, ..Default::default() }).unwrap();
        assert!(a.converged && b.converged && c.converged);
        for other in [&b, &c] {
            let d = sup_distance(a.ensemble.wealth(), other.ensemble.wealth());
            assert!(d < 1e-4, "{d}");
        }
        assert!(a.ensemble.consumption().iter().all(|&c| (0.0..=a.kappa_used).contains(&c)));
    }

    #[test]
    fn rejects_bad_options() {
        assert!(PicardOptions { damping: 0.0, ..Default::default() }.validate().is_err());
        assert!(PicardOptions { max_iter: 0, ..Default::default() }.validate().is_err());
        assert!(PicardOptions { tol: Some(-1.0), ..Default::default() }.validate().is_err());
    }
}
