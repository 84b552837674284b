use crate::error::{config_err, Result};
use crate::lifecycle::{picard_solve, LifecycleProblem, LifecycleSolution, PicardOptions};
use crate::model::{RatePath, TimeGrid};
use crate::stats;

/// Exogenous capital supply `K_t`.
#[derive(Debug, Clone, PartialEq)]
pub enum CapitalSupply {
    Constant(f64),
    /// Values at the nodes of the economy's grid.
    Path(Vec<f64>),
}

impl CapitalSupply {
    pub fn values(&self, grid: &TimeGrid) -> Result<Vec<f64>> {
        let v = match self {
            Self::Constant(k) => vec![*k; grid.len()],
            Self::Path(v) if v.len() == grid.len() => v.clone(),
            Self::Path(v) => return config_err(format!("capital path needs {} values, got {}", grid.len(), v.len())),
        };
        if v.iter().any(|k| !k.is_finite()) {
            return config_err("capital supply must be finite");
        }
        Ok(v)
    }

    /// Same supply moved up by `by` at every date.
    pub fn shifted(&self, by: f64) -> Self {
        match self {
            Self::Constant(k) => Self::Constant(k + by),
            Self::Path(v) => Self::Path(v.iter().map(|k| k + by).collect()),
        }
    }
}

/// `dK/dt` by centered differences, one-sided at the ends.
pub fn capital_derivative(k: &[f64], dt: f64) -> Vec<f64> {
    let n = k.len();
    (0..n)
        .map(|j| match j {
            _ if n < 2 => 0.0,
            0 => (k[1] - k[0]) / dt,
            _ if j == n - 1 => (k[n - 1] - k[n - 2]) / dt,
            _ => (k[j + 1] - k[j - 1]) / (2.0 * dt),
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct EquilibriumOptions {
    /// Clearing tolerance on `sup_t |E[W_t] - K_t|`; `1e-3 (1 + sup |K|)`
    /// when unset.
    pub tol: Option<f64>,
    pub max_iter: usize,
    /// Weight on the new rate in `r <- (1 - theta) r + theta Phi(r)`.
    pub damping: f64,
    /// Constant starting rate.
    pub initial_rate: f64,
    pub picard: PicardOptions,
    /// `R` in the a-priori ball `sup |r| <= R + 2 |nu| |w_0|` (OLG only).
    pub ball_radius: f64,
    /// Add the clearing-level correction to the OLG rate map.
    pub level_correction: bool,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        Self {
            tol: None,
            max_iter: 100,
            damping: 0.5,
            initial_rate: 0.03,
            picard: PicardOptions::default(),
            ball_radius: 1.0,
            level_correction: true,
        }
    }
}

impl EquilibriumOptions {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.tol {
            if !(t.is_finite() && t > 0.0) {
                return config_err(format!("clearing tolerance must be positive, got {t}"));
            }
        }
        if self.max_iter == 0 {
            return config_err("equilibrium max_iter must be at least 1");
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return config_err(format!("equilibrium damping must lie in (0, 1], got {}", self.damping));
        }
        if !self.initial_rate.is_finite() {
            return config_err("initial rate must be finite");
        }
        if !(self.ball_radius > 0.0 && self.ball_radius.is_finite()) {
            return config_err(format!("ball radius must be positive, got {}", self.ball_radius));
        }
        self.picard.validate()
    }

    pub(crate) fn tolerance(&self, capital: &[f64]) -> f64 {
        self.tol.unwrap_or_else(|| 1e-3 * (1.0 + capital.iter().fold(0.0f64, |m, k| m.max(k.abs()))))
    }
}

/// Pathwise check of `|E[W_t] - K_t| <= tol + 3 se_t` at every date.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClearingCheck {
    pub sup_deviation: f64,
    /// `max_t |E[W_t] - K_t| / (tol + 3 se_t)`; at most one when passing.
    pub worst_ratio: f64,
    pub passes: bool,
}

impl ClearingCheck {
    pub fn evaluate(deviation: &[f64], stderr: &[f64], tol: f64) -> Self {
        let sup_deviation = deviation.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        let worst_ratio = deviation.iter().zip(stderr).map(|(d, s)| d.abs() / (tol + 3.0 * s)).fold(0.0, f64::max);
        Self { sup_deviation, worst_ratio, passes: worst_ratio <= 1.0 }
    }
}

#[derive(Debug, Clone)]
pub struct EquilibriumResult {
    /// The last rate path evaluated; on convergence, the equilibrium rate.
    pub rate: RatePath,
    /// `sup_t |E[W_t] - K_t|` per outer iteration.
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub tolerance: f64,
    /// Dates at which clearing is measured, with capital, expected aggregate
    /// wealth and its Monte Carlo standard error there.
    pub times: Vec<f64>,
    pub capital: Vec<f64>,
    pub aggregate_wealth: Vec<f64>,
    pub aggregate_stderr: Vec<f64>,
    /// Every inner Picard solve of the final iterate converged.
    pub inner_converged: bool,
    /// Clearing re-checked on a fresh seed at the returned rate.
    pub verification: Option<ClearingCheck>,
    /// `sup |Phi(r) - r|` at the returned rate (OLG only).
    pub phi_residual: Option<f64>,
    /// Iterations on which the a-priori ball projection was active, and the
    /// ball radius used (OLG only).
    pub projections: usize,
    pub ball_bound: Option<f64>,
}

impl EquilibriumResult {
    pub fn clearing_residual(&self) -> Vec<f64> {
        self.aggregate_wealth.iter().zip(&self.capital).map(|(w, k)| w - k).collect()
    }

    /// Outer residuals never increase from iteration `from` (1-based) on.
    pub fn residuals_nonincreasing_after(&self, from: usize) -> bool {
        self.residuals.iter().skip(from.saturating_sub(1)).collect::<Vec<_>>().windows(2).all(|w| w[1] <= w[0])
    }
}

pub(crate) fn fresh_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Single-cohort economy: households live on `problem.grid` and the capital
/// supply must be held by them at every date.
#[derive(Debug, Clone)]
pub struct LifecycleEconomy {
    pub problem: LifecycleProblem,
    pub capital: CapitalSupply,
}

/// Cross-sectional means per node of one solved ensemble.
#[derive(Debug, Clone)]
pub(crate) struct NodeMeans {
    pub wealth: Vec<f64>,
    pub wealth_se: Vec<f64>,
    pub consumption: Vec<f64>,
    pub income: Vec<f64>,
}

impl NodeMeans {
    pub fn of(sol: &LifecycleSolution) -> Self {
        let e = &sol.ensemble;
        let len = e.grid().len();
        let (wealth, wealth_se) = (0..len).map(|j| stats::mean_stderr(e.wealth_at(j))).unzip();
        Self {
            wealth,
            wealth_se,
            consumption: (0..len).map(|j| stats::mean(e.consumption_at(j))).collect(),
            income: (0..len).map(|j| stats::mean(e.income_at(j))).collect(),
        }
    }
}

impl LifecycleEconomy {
    /// Household problem at `rate` with initial wealth shifted so that its
    /// sample mean is `K_0`.
    pub fn solve_households(
        &self,
        rate: &RatePath,
        k0: f64,
        seed: u64,
        opts: &PicardOptions,
    ) -> Result<LifecycleSolution> {
        let p = &self.problem;
        let mut ens = crate::model::PathEnsemble::simulate(p.grid, &p.income, p.wealth_law, p.n_paths, seed, 0)?;
        ens.center_initial_wealth(k0);
        picard_solve(&p.prefs, &p.income, ens, rate, opts)
    }
}

/// `(dK/dt + E[c_t] - E[eta_t]) / K_t`: the rate that makes the expected
/// budget hold the capital supply fixed, node by node.
pub fn lifecycle_rate_update(consumption: &[f64], income: &[f64], capital: &[f64], capital_dt: &[f64]) -> Vec<f64> {
    consumption
        .iter()
        .zip(income)
        .zip(capital.iter().zip(capital_dt))
        .map(|((c, e), (k, kd))| (kd + c - e) / k)
        .collect()
}

pub fn lifecycle_equilibrium_solve(economy: &LifecycleEconomy, opts: &EquilibriumOptions) -> Result<EquilibriumResult> {
    let start = RatePath::constant(economy.problem.grid, opts.initial_rate);
    solve_from(economy, start, opts)
}

fn solve_from(economy: &LifecycleEconomy, start: RatePath, opts: &EquilibriumOptions) -> Result<EquilibriumResult> {
    opts.validate()?;
    let grid = economy.problem.grid;
    let k = economy.capital.values(&grid)?;
    let kdot = capital_derivative(&k, grid.dt());
    let zero_capital = k.iter().all(|&v| v == 0.0);
    if !zero_capital && k.contains(&0.0) {
        return config_err("capital supply must be nonzero at every date, or identically zero");
    }
    let tol = opts.tolerance(&k);
    let seed = economy.problem.seed;
    let mut rate = start;
    let mut residuals = Vec::new();
    loop {
        let sol = economy.solve_households(&rate, k[0], seed, &opts.picard)?;
        let m = NodeMeans::of(&sol);
        let res = m.wealth.iter().zip(&k).map(|(w, k)| (w - k).abs()).fold(0.0, f64::max);
        residuals.push(res);
        let converged = res <= tol;
        if converged || residuals.len() >= opts.max_iter {
            let verification = if converged {
                let fresh = economy.solve_households(&rate, k[0], fresh_seed(seed), &opts.picard)?;
                let fm = NodeMeans::of(&fresh);
                let dev: Vec<f64> = fm.wealth.iter().zip(&k).map(|(w, k)| w - k).collect();
                Some(ClearingCheck::evaluate(&dev, &fm.wealth_se, tol))
            } else {
                None
            };
            return Ok(EquilibriumResult {
                rate,
                residuals,
                converged,
                tolerance: tol,
                times: grid.nodes(),
                capital: k,
                aggregate_wealth: m.wealth,
                aggregate_stderr: m.wealth_se,
                inner_converged: sol.converged,
                verification,
                phi_residual: None,
                projections: 0,
                ball_bound: None,
            });
        }
        let target = if zero_capital {
            // Root-finding on E[c_t] = E[eta_t]: consumption rises with the
            // rate roughly in proportion to wealth held.
            let scale = m.wealth.iter().map(|w| w.abs()).sum::<f64>() / m.wealth.len() as f64;
            let scale = scale.max(1.0);
            rate.values()
                .iter()
                .zip(m.consumption.iter().zip(&m.income))
                .map(|(r, (c, e))| r - (c - e) / scale)
                .collect()
        } else {
            lifecycle_rate_update(&m.consumption, &m.income, &k, &kdot)
        };
        rate = rate.relax_towards(&RatePath::new(grid, target)?, opts.damping);
    }
}

#[derive(Debug, Clone)]
pub struct SensitivityReport {
    pub times: Vec<f64>,
    /// Centered differences `(r(K + h) - r(K - h)) / 2h` at `h = dK/2`...
    pub dr_dk: Vec<f64>,
    /// ...and at `h = dK`.
    pub dr_dk_coarse: Vec<f64>,
    /// `sup |dr_dk - dr_dk_coarse|`, O(dK^2) for a smooth rate.
    pub richardson_gap: f64,
    /// `d/dh E[c_t](r + h dr/dK, K + h) - K dr/dK_t - r_t` per node.
    pub identity_residual: Vec<f64>,
    pub identity_sup: f64,
    pub rate_norm: f64,
    /// All perturbed equilibria converged.
    pub all_converged: bool,
}

/// Finite-difference sensitivity of the equilibrium rate to the capital
/// supply, and the residual of the differentiated clearing identity along
/// the estimated direction. Moving `K` also moves mean initial wealth, so the
/// directional bump shifts both the rate and initial wealth.
pub fn rate_sensitivity_dk(
    economy: &LifecycleEconomy,
    base: &EquilibriumResult,
    dk: f64,
    opts: &EquilibriumOptions,
) -> Result<SensitivityReport> {
    if !base.converged {
        return config_err("sensitivity needs a converged base equilibrium");
    }
    if !(dk > 0.0 && dk.is_finite()) {
        return config_err(format!("capital perturbation must be positive, got {dk}"));
    }
    let grid = economy.problem.grid;
    let k = economy.capital.values(&grid)?;
    if k.contains(&0.0) {
        return config_err("sensitivity identity needs nonzero capital");
    }
    let mut all_converged = true;
    let mut solve = |h: f64| -> Result<Vec<f64>> {
        let e = LifecycleEconomy { problem: economy.problem.clone(), capital: economy.capital.shifted(h) };
        let r = solve_from(&e, base.rate.clone(), opts)?;
        all_converged &= r.converged;
        Ok(r.rate.values().to_vec())
    };
    let central =
        |a: &[f64], b: &[f64], h: f64| a.iter().zip(b).map(|(x, y)| (x - y) / (2.0 * h)).collect::<Vec<f64>>();
    let coarse = central(&solve(dk)?, &solve(-dk)?, dk);
    let h = 0.5 * dk;
    let fine = central(&solve(h)?, &solve(-h)?, h);
    let richardson_gap = fine.iter().zip(&coarse).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let r = base.rate.values();
    let mut bumped = |s: f64| -> Result<Vec<f64>> {
        let path = RatePath::new(grid, r.iter().zip(&fine).map(|(r, d)| r + s * d).collect())?;
        let sol = economy.solve_households(&path, k[0] + s, economy.problem.seed, &opts.picard)?;
        all_converged &= sol.converged;
        Ok(NodeMeans::of(&sol).consumption)
    };
    let (up, down) = (bumped(h)?, bumped(-h)?);
    let identity_residual: Vec<f64> =
        (0..grid.len()).map(|j| (up[j] - down[j]) / (2.0 * h) - k[j] * fine[j] - r[j]).collect();
    let identity_sup = identity_residual.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(SensitivityReport {
        times: grid.nodes(),
        dr_dk: fine,
        dr_dk_coarse: coarse,
        richardson_gap,
        identity_residual,
        identity_sup,
        rate_norm: base.rate.sup_norm(),
        all_converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifecycle::Preferences;
    use crate::model::{DiscountSpec, IncomeLaw, IncomeModel, UtilitySpec, WealthLaw};

    fn economy(lambda: f64, sigma: f64, k: f64, n: usize) -> LifecycleEconomy {
        let grid = TimeGrid::new(0.0, 5.0, 50).unwrap();
        let u = UtilitySpec::crra(2.0).unwrap();
        let problem = LifecycleProblem {
            prefs: Preferences { u1: u, u2: u, disc: DiscountSpec::new(0.02, lambda).unwrap() },
            income: IncomeModel::gbm(0.01, sigma, IncomeLaw::Point(1.0)).unwrap(),
            wealth_law: WealthLaw::Uniform(5.0, 15.0),
            grid,
            n_paths: n,
            seed: 7,
        };
        LifecycleEconomy { problem, capital: CapitalSupply::Constant(k) }
    }

    #[test]
    fn synthetic_update_arithmetic() {
        let r = lifecycle_rate_update(&[1.3; 4], &[1.0; 4], &[10.0; 4], &[0.0; 4]);
        assert!(r.iter().all(|v| (v - 0.03).abs() < 1e-15));
        let r = lifecycle_rate_update(&[0.7, 2.0], &[0.7, 2.0], &[10.0, -3.0], &[0.0; 2]);
        assert_eq!(r, vec![0.0, 0.0]);
        let r = lifecycle_rate_update(&[1.0], &[1.0], &[10.0], &[0.5]);
        assert_eq!(r, vec![0.05]);
    }

    #[test]
    fn capital_derivative_is_exact_on_lines() {
        let d = capital_derivative(&[1.0, 1.5, 2.0, 2.5], 0.5);
        assert_eq!(d, vec![1.0; 4]);
        assert_eq!(capital_derivative(&[3.0], 0.1), vec![0.0]);
    }

    #[test]
    fn noiseless_economy_clears_exactly() {
        let e = economy(100.0, 0.0, 10.0, 8);
        let res = lifecycle_equilibrium_solve(&e, &EquilibriumOptions::default()).unwrap();
        assert!(res.converged, "{:?}", res.residuals);
        assert!(res.verification.unwrap().passes);
        let dev = res.clearing_residual();
        assert!(dev.iter().all(|d| d.abs() <= res.tolerance));
    }

    #[test]
    fn zero_bequest_sensitivity_degenerates() {
        // lambda = 0 pins consumption at the cap whatever the rate, so the
        // identity reduces to dr/dK = -r/K.
        let e = economy(0.0, 0.0, 1e6, 4);
        let opts = EquilibriumOptions { tol: Some(1e-6), initial_rate: 1.0, ..Default::default() };
        let base = lifecycle_equilibrium_solve(&e, &opts).unwrap();
        assert!(base.converged, "{:?}", base.residuals);
        let rep = rate_sensitivity_dk(&e, &base, 1e3, &opts).unwrap();
        assert!(rep.all_converged);
        for (d, r) in rep.dr_dk.iter().zip(base.rate.values()) {
            assert!((d + r / 1e6).abs() <= 1e-5 * (r / 1e6).abs(), "{d} vs {}", -r / 1e6);
        }
        assert!(rep.identity_sup <= 1e-6 * rep.rate_norm, "{}", rep.identity_sup);
    }

    #[test]
    fn rejects_mixed_zero_capital_and_unconverged_base() {
        let mut e = economy(100.0, 0.0, 10.0, 4);
        let mut k = vec![10.0; 51];
        k[3] = 0.0;
        e.capital = CapitalSupply::Path(k);
        assert!(lifecycle_equilibrium_solve(&e, &EquilibriumOptions::default()).is_err());
        e.capital = CapitalSupply::Path(vec![1.0; 3]);
        assert!(lifecycle_equilibrium_solve(&e, &EquilibriumOptions::default()).is_err());
        let e = economy(100.0, 0.0, 10.0, 4);
        let opts = EquilibriumOptions { max_iter: 1, ..Default::default() };
        let base = lifecycle_equilibrium_solve(&e, &opts).unwrap();
        assert!(!base.converged);
        assert!(rate_sensitivity_dk(&e, &base, 0.1, &opts).is_err());
    }
}
