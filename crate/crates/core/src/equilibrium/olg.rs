use rayon::prelude::*;

use super::demography::DemographicFlow;
use super::lifecycle::{fresh_seed, ClearingCheck, EquilibriumOptions, EquilibriumResult, NodeMeans};
use crate::error::{config_err, Error, Result};
use crate::lifecycle::{picard_solve, LifecycleSolution, PicardOptions, Preferences};
use crate::model::{IncomeModel, PathEnsemble, RatePath, TimeGrid, WealthLaw};
use crate::stats;

/// Overlapping-generations economy on the calendar window of `flow`, with a
/// constant capital supply.
#[derive(Debug, Clone)]
pub struct OlgEconomy {
    pub prefs: Preferences,
    pub income: IncomeModel,
    pub wealth_law: WealthLaw,
    /// Added to every household's drawn initial wealth.
    pub wealth_shift: f64,
    pub flow: DemographicFlow,
    pub capital: f64,
    /// Grid steps per lifespan.
    pub steps: usize,
    pub n_paths: usize,
    pub n_cohorts: usize,
    pub seed: u64,
}

/// Birth dates `b_i = T0 - L + i * spacing` covering everyone alive in the
/// window. Lifespans and spacings are whole numbers of grid steps, so every
/// evaluation date `t = b_i` in the window sees the cohorts born at `t` and
/// `t - L` on their grids.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortLayout {
    pub births: Vec<f64>,
    pub spacing: f64,
    pub dt: f64,
    pub steps: usize,
    /// Birth spacings per lifespan.
    pub per_life: usize,
}

fn whole(x: f64) -> Option<usize> {
    let r = x.round();
    ((x - r).abs() <= 1e-9 * x.abs().max(1.0) && r >= 1.0).then_some(r as usize)
}

impl CohortLayout {
    pub fn new(flow: &DemographicFlow, steps: usize, n_cohorts: usize) -> Result<Self> {
        let l = flow.lifespan();
        let (t0, t1) = flow.window();
        if steps < 2 {
            return config_err(format!("need at least 2 steps per lifespan, got {steps}"));
        }
        if n_cohorts < 3 {
            return config_err(format!("need at least 3 cohorts, got {n_cohorts}"));
        }
        let spacing = (t1 - t0 + l) / (n_cohorts - 1) as f64;
        let dt = l / steps as f64;
        let per_life = whole(l / spacing).ok_or_else(|| {
            Error::Config(format!(
                "lifespan {l} is not a whole number of birth spacings {spacing}; adjust the window or cohort count"
            ))
        })?;
        whole(spacing / dt).ok_or_else(|| {
            Error::Config(format!(
                "birth spacing {spacing} is not a whole number of grid steps {dt}; adjust the step count"
            ))
        })?;
        if per_life + 1 >= n_cohorts {
            return config_err("the window must contain at least two birth dates");
        }
        let births = (0..n_cohorts).map(|i| t0 - l + i as f64 * spacing).collect();
        Ok(Self { births, spacing, dt, steps, per_life })
    }

    pub fn lifespan(&self) -> f64 {
        self.dt * self.steps as f64
    }

    /// Evaluation dates: the birth dates inside the window.
    pub fn rate_grid(&self) -> TimeGrid {
        let first = self.births[self.per_life];
        let n = self.births.len() - 1 - self.per_life;
        TimeGrid::new(first, n as f64 * self.spacing, n).expect("layout validated")
    }

    pub fn cohort_grid(&self, i: usize) -> TimeGrid {
        TimeGrid::new(self.births[i], self.lifespan(), self.steps).expect("layout validated")
    }

    /// Cohort pair and weight interpolating linearly in the birth date.
    fn bracket(&self, b: f64) -> Result<(usize, f64)> {
        let last = self.births.len() - 1;
        let p = (b - self.births[0]) / self.spacing;
        if p < -1e-9 || p > last as f64 + 1e-9 {
            return Err(Error::OutOfRange { t: b, lo: self.births[0], hi: self.births[last] });
        }
        let p = p.clamp(0.0, last as f64);
        let i = (p.floor() as usize).min(last);
        let frac = p - i as f64;
        Ok(if frac <= 1e-9 {
            (i, 0.0)
        } else if frac >= 1.0 - 1e-9 {
            (i + 1, 0.0)
        } else {
            (i, frac)
        })
    }

    /// Linear functional `b -> value of cohort b at node j`, as
    /// `(cohort, node, coefficient)` terms.
    fn point(&self, b: f64, node: usize, coef: f64, out: &mut Vec<Term>) -> Result<()> {
        let (i, frac) = self.bracket(b)?;
        out.push(Term { cohort: i, node, coef: coef * (1.0 - frac) });
        if frac > 0.0 {
            out.push(Term { cohort: i + 1, node, coef: coef * frac });
        }
        Ok(())
    }

    /// `int_{t-L}^{t} x^b_t weight(b) db` by the trapezoid rule over ages on
    /// the cohort grid, cohorts interpolated linearly in the birth date.
    fn integral(&self, t: f64, weight: impl Fn(f64) -> Result<f64>) -> Result<Vec<Term>> {
        let mut out = Vec::with_capacity(2 * (self.steps + 1));
        for j in 0..=self.steps {
            let b = t - j as f64 * self.dt;
            let tw = if j == 0 || j == self.steps { 0.5 * self.dt } else { self.dt };
            self.point(b, j, tw * weight(b)?, &mut out)?;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy)]
struct Term {
    cohort: usize,
    node: usize,
    coef: f64,
}

/// Solved cohorts on a common rate path.
#[derive(Debug, Clone)]
pub struct CohortFamily {
    pub layout: CohortLayout,
    pub solutions: Vec<LifecycleSolution>,
    means: Vec<NodeMeans>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Field {
    Wealth,
    Consumption,
    Income,
}

impl CohortFamily {
    pub fn all_converged(&self) -> bool {
        self.solutions.iter().all(|s| s.converged)
    }

    /// Cross-sectional mean of `field` for cohort `i` at its node `j`.
    pub fn mean(&self, field: Field, i: usize, j: usize) -> f64 {
        let m = &self.means[i];
        match field {
            Field::Wealth => m.wealth[j],
            Field::Consumption => m.consumption[j],
            Field::Income => m.income[j],
        }
    }

    pub fn wealth_stderr(&self, i: usize, j: usize) -> f64 {
        self.means[i].wealth_se[j]
    }

    fn apply(&self, terms: &[Term], field: Field) -> f64 {
        terms.iter().map(|t| t.coef * self.mean(field, t.cohort, t.node)).sum()
    }

    /// Standard error of `apply(terms, Wealth)`: cohorts are independent,
    /// nodes within a cohort are combined path by path.
    fn wealth_stderr_of(&self, terms: &[Term]) -> f64 {
        let mut by_cohort: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.solutions.len()];
        for t in terms {
            by_cohort[t.cohort].push((t.node, t.coef));
        }
        by_cohort
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_empty())
            .map(|(i, v)| {
                let e = &self.solutions[i].ensemble;
                let values: Vec<f64> =
                    (0..e.n_paths()).map(|p| v.iter().map(|&(j, c)| c * e.wealth_at(j)[p]).sum()).collect();
                stats::mean_stderr(&values).1.powi(2)
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Expected aggregates at one calendar date.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregates {
    pub wealth: f64,
    pub wealth_stderr: f64,
    pub consumption: f64,
    pub income: f64,
}

fn check_window(flow: &DemographicFlow, t: f64) -> Result<()> {
    let (lo, hi) = flow.window();
    let slack = 1e-9 * (1.0 + lo.abs().max(hi.abs()));
    if t < lo - slack || t > hi + slack {
        return Err(Error::OutOfRange { t, lo, hi });
    }
    Ok(())
}

/// Expected aggregate wealth, consumption and income at `t`: cohort means
/// weighted by `n(t, b)` over the living birth dates.
pub fn olg_aggregates(family: &CohortFamily, flow: &DemographicFlow, t: f64) -> Result<Aggregates> {
    check_window(flow, t)?;
    let terms = family.layout.integral(t, |b| Ok(flow.density(t, b)))?;
    Ok(Aggregates {
        wealth: family.apply(&terms, Field::Wealth),
        wealth_stderr: family.wealth_stderr_of(&terms),
        consumption: family.apply(&terms, Field::Consumption),
        income: family.apply(&terms, Field::Income),
    })
}

/// `K Phi_L(r)_t`, the right side of the OLG rate equation. Along the budget
/// recursion, initial mean wealth plus the integrated expected drift of a
/// cohort equals its expected wealth, so the boundary and `d_t n` terms are
/// evaluated from cohort wealth means directly.
fn phi_numerator(family: &CohortFamily, flow: &DemographicFlow, t: f64) -> Result<f64> {
    let layout = &family.layout;
    let l = layout.lifespan();
    let mut oldest = Vec::new();
    layout.point(t - l, layout.steps, 1.0, &mut oldest)?;
    let mut newborn = Vec::new();
    layout.point(t, 0, 1.0, &mut newborn)?;
    let boundary = family.apply(&oldest, Field::Wealth) * flow.density(t, t - l)
        - family.apply(&newborn, Field::Wealth) * flow.density(t, t);
    let living = layout.integral(t, |b| Ok(flow.density(t, b)))?;
    let net_income = family.apply(&living, Field::Income) - family.apply(&living, Field::Consumption);
    let shifting = layout.integral(t, |b| flow.density_dt(t, b))?;
    Ok(boundary - net_income - family.apply(&shifting, Field::Wealth))
}

fn phi_at(family: &CohortFamily, flow: &DemographicFlow, capital: f64, t: f64) -> Result<f64> {
    let num = phi_numerator(family, flow, t)?;
    Ok(if capital != 0.0 { num / capital } else { num })
}

/// `Phi_L(r)` on the evaluation dates for cohorts solved at `r`. The rate
/// equation reads `K r_t = (right side)`; with `K = 0` the right side itself
/// is returned.
pub fn olg_phi_map(family: &CohortFamily, flow: &DemographicFlow, capital: f64) -> Result<RatePath> {
    if !flow.has_time_derivative() {
        return config_err("the OLG rate map needs the time derivative of the demographic density");
    }
    let grid = family.layout.rate_grid();
    let values = grid.nodes().into_iter().map(|t| phi_at(family, flow, capital, t)).collect::<Result<Vec<_>>>()?;
    RatePath::new(grid, values)
}

impl OlgEconomy {
    pub fn layout(&self) -> Result<CohortLayout> {
        CohortLayout::new(&self.flow, self.steps, self.n_cohorts)
    }

    fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return config_err("need at least one path per cohort");
        }
        if !self.capital.is_finite() || !self.wealth_shift.is_finite() {
            return config_err("capital and wealth shift must be finite");
        }
        Ok(())
    }

    fn solve_cohort(
        &self,
        grid: TimeGrid,
        rate: &RatePath,
        seed: u64,
        stream: u64,
        opts: &PicardOptions,
    ) -> Result<LifecycleSolution> {
        let mut ens = PathEnsemble::simulate(grid, &self.income, self.wealth_law, self.n_paths, seed, stream)?;
        ens.shift_initial_wealth(self.wealth_shift);
        picard_solve(&self.prefs, &self.income, ens, rate, opts)
    }

    /// Every cohort solved at `rate`; cohort `i` draws from stream `i`.
    pub fn solve_cohorts(&self, rate: &RatePath, seed: u64, opts: &PicardOptions) -> Result<CohortFamily> {
        self.validate()?;
        let layout = self.layout()?;
        let solutions = (0..layout.births.len())
            .into_par_iter()
            .map(|i| self.solve_cohort(layout.cohort_grid(i), rate, seed, i as u64, opts))
            .collect::<Result<Vec<_>>>()?;
        let means = solutions.iter().map(NodeMeans::of).collect();
        Ok(CohortFamily { layout, solutions, means })
    }

    /// `sup_b E|w^b_b|` estimated from the cohorts' initial wealth.
    fn initial_wealth_norm(family: &CohortFamily) -> f64 {
        family
            .solutions
            .iter()
            .map(|s| s.ensemble.initial_wealth().iter().map(|w| w.abs()).sum::<f64>() / s.ensemble.n_paths() as f64)
            .fold(0.0, f64::max)
    }
}

struct Evaluation {
    family: CohortFamily,
    phi: Vec<f64>,
    wealth: Vec<f64>,
    stderr: Vec<f64>,
}

fn evaluate(economy: &OlgEconomy, rate: &RatePath, seed: u64, opts: &PicardOptions) -> Result<Evaluation> {
    let family = economy.solve_cohorts(rate, seed, opts)?;
    let times = family.layout.rate_grid().nodes();
    let mut phi = Vec::with_capacity(times.len());
    let mut wealth = Vec::with_capacity(times.len());
    let mut stderr = Vec::with_capacity(times.len());
    for &t in &times {
        phi.push(phi_at(&family, &economy.flow, economy.capital, t)?);
        let agg = olg_aggregates(&family, &economy.flow, t)?;
        wealth.push(agg.wealth);
        stderr.push(agg.wealth_stderr);
    }
    Ok(Evaluation { family, phi, wealth, stderr })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Damped iteration `r <- (1 - theta) r + theta G(r)` from a constant start,
/// projected onto the a-priori ball. With the level correction,
/// `G(r) = Phi(r) - (r / K + 1 / S) (W(r) - K)` where `S` is a secant
/// estimate of `dW/dr` from a probe at `r + 0.01`; `G = Phi` wherever the
/// market clears.
pub fn olg_equilibrium_solve(economy: &OlgEconomy, opts: &EquilibriumOptions) -> Result<EquilibriumResult> {
    opts.validate()?;
    economy.validate()?;
    if !economy.flow.has_time_derivative() {
        return config_err("the OLG rate map needs the time derivative of the demographic density");
    }
    let layout = economy.layout()?;
    let grid = layout.rate_grid();
    let k = economy.capital;
    let tol = opts.tolerance(&[k]);
    let seed = economy.seed;
    let flow_norm = economy.flow.norm()?;
    let mut rate = RatePath::constant(grid, opts.initial_rate);
    let mut residuals = Vec::new();
    let mut projections = 0usize;
    let mut ball = None;
    let mut slope = None;
    loop {
        let ev = evaluate(economy, &rate, seed, &opts.picard)?;
        let bound = *ball
            .get_or_insert_with(|| opts.ball_radius + 2.0 * flow_norm * OlgEconomy::initial_wealth_norm(&ev.family));
        let dev: Vec<f64> = ev.wealth.iter().map(|w| w - k).collect();
        let res = dev.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        residuals.push(res);
        let converged = res <= tol;
        if converged || residuals.len() >= opts.max_iter {
            let phi_residual = ev.phi.iter().zip(rate.values()).map(|(p, r)| (p - r).abs()).fold(0.0, f64::max);
            let verification = if converged {
                let fresh = evaluate(economy, &rate, fresh_seed(seed), &opts.picard)?;
                let fdev: Vec<f64> = fresh.wealth.iter().map(|w| w - k).collect();
                Some(ClearingCheck::evaluate(&fdev, &fresh.stderr, tol))
            } else {
                None
            };
            // The projection diagnostic: an iteration pinned to the ball on
            // most steps means the lifespan is outside the contraction regime.
            let pinned = projections * 2 > residuals.len();
            return Ok(EquilibriumResult {
                rate,
                residuals,
                converged: converged && !pinned,
                tolerance: tol,
                times: grid.nodes(),
                capital: vec![k; grid.len()],
                aggregate_wealth: ev.wealth,
                aggregate_stderr: ev.stderr,
                inner_converged: ev.family.all_converged(),
                verification,
                phi_residual: Some(phi_residual),
                projections,
                ball_bound: Some(bound),
            });
        }
        let target: Vec<f64> = if opts.level_correction && k != 0.0 {
            let s = match slope {
                Some(s) => s,
                None => {
                    let probe = evaluate(economy, &rate.shifted(0.01), seed, &opts.picard)?;
                    let s = (mean(&probe.wealth) - mean(&ev.wealth)) / 0.01;
                    if !(s.is_finite() && s > 0.0) {
                        return Err(Error::Numerical(format!(
                            "aggregate wealth does not increase with the rate near {}",
                            opts.initial_rate
                        )));
                    }
                    *slope.insert(s)
                }
            };
            ev.phi.iter().zip(rate.values()).zip(&dev).map(|((p, r), d)| p - (r / k + 1.0 / s) * d).collect()
        } else {
            ev.phi.clone()
        };
        let next = rate.relax_towards(&RatePath::new(grid, target)?, opts.damping);
        let clamped = next.values().iter().any(|v| v.abs() > bound);
        if clamped {
            projections += 1;
        }
        rate = next.map(|v| v.clamp(-bound, bound))?;
    }
}

/// Constant-rate equilibrium of a stationary economy.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryRate {
    pub rate: f64,
    /// Final bracket and the number of aggregate-wealth evaluations.
    pub bracket: (f64, f64),
    pub evaluations: usize,
    /// Aggregate wealth of the reference cohort at the returned rate, with
    /// its standard error.
    pub wealth: f64,
    pub stderr: f64,
    /// Every `(rate, W(rate) - K)` evaluated, in order.
    pub history: Vec<(f64, f64)>,
}

/// Stationary aggregate wealth at a constant rate from one reference
/// cohort: all cohorts share the age profile, so
/// `W = int_0^L E[w_a] n(0, -a) da`.
fn stationary_wealth(economy: &OlgEconomy, r: f64, paths: usize, opts: &PicardOptions) -> Result<(f64, f64)> {
    let layout = economy.layout()?;
    let grid = TimeGrid::new(0.0, layout.lifespan(), layout.steps)?;
    let e = OlgEconomy { n_paths: paths, ..economy.clone() };
    let stream = economy.n_cohorts as u64;
    let sol = e.solve_cohort(grid, &RatePath::constant(grid, r), economy.seed, stream, opts)?;
    let weights: Vec<f64> = (0..=layout.steps)
        .map(|j| {
            let tw = if j == 0 || j == layout.steps { 0.5 } else { 1.0 } * layout.dt;
            tw * economy.flow.density(0.0, -(j as f64) * layout.dt)
        })
        .collect();
    let ens = &sol.ensemble;
    let values: Vec<f64> =
        (0..paths).map(|p| weights.iter().enumerate().map(|(j, w)| w * ens.wealth_at(j)[p]).sum()).collect();
    Ok(stats::mean_stderr(&values))
}

/// Bisection for the constant rate with stationary aggregate wealth equal to
/// `K`, on `[lo, hi]` widened (doubling its width) up to four times until
/// the clearing error changes sign.
pub fn stationary_rate_bisect(
    economy: &OlgEconomy,
    bracket: (f64, f64),
    reference_paths: usize,
    opts: &PicardOptions,
) -> Result<StationaryRate> {
    economy.validate()?;
    if !economy.flow.is_stationary() {
        return config_err("constant-rate search needs a stationary demographic flow");
    }
    let (mut lo, mut hi) = bracket;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return config_err(format!("rate bracket needs lo < hi, got [{lo}, {hi}]"));
    }
    if reference_paths == 0 {
        return config_err("need at least one reference path");
    }
    let k = economy.capital;
    let mut history = Vec::new();
    let mut f = |r: f64| -> Result<f64> {
        let excess = stationary_wealth(economy, r, reference_paths, opts)?.0 - k;
        history.push((r, excess));
        Ok(excess)
    };
    let (mut f_lo, mut f_hi) = (f(lo)?, f(hi)?);
    let mut widenings = 0;
    while f_lo * f_hi > 0.0 {
        if widenings == 4 {
            return Err(Error::NoBracket { lo, hi });
        }
        let half = hi - lo;
        lo -= 0.5 * half;
        hi += 0.5 * half;
        f_lo = f(lo)?;
        f_hi = f(hi)?;
        widenings += 1;
    }
    while hi - lo > 1e-4 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid)?;
        if fm == 0.0 {
            lo = mid;
            hi = mid;
        } else if (fm > 0.0) == (f_hi > 0.0) {
            hi = mid;
            f_hi = fm;
        } else {
            lo = mid;
        }
    }
    let rate = 0.5 * (lo + hi);
    let (wealth, stderr) = stationary_wealth(economy, rate, reference_paths, opts)?;
    history.push((rate, wealth - k));
    Ok(StationaryRate { rate, bracket: (lo, hi), evaluations: history.len(), wealth, stderr, history })
}

/// Cross-cohort comparison of mean wealth at fixed ages.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortAgreement {
    pub ages: Vec<f64>,
    /// Largest `|m_i - mean of the others| / se` over cohorts and ages.
    pub worst_z: f64,
    pub passes: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationarityReport {
    pub times: Vec<f64>,
    pub aggregate_wealth: Vec<f64>,
    pub aggregate_stderr: Vec<f64>,
    /// `|W_t - K|` against `|W_ref - K| + 3 sqrt(se_t^2 + se_ref^2)`: the
    /// family is independent of the reference cohort that set the rate.
    pub clearing: ClearingCheck,
    pub cohorts: CohortAgreement,
}

/// Re-simulates the cohort family on a fresh seed at the constant rate and
/// checks first-order stationarity of aggregate wealth and the equality of
/// age profiles across birth dates.
pub fn stationary_checks(
    economy: &OlgEconomy,
    found: &StationaryRate,
    opts: &PicardOptions,
) -> Result<StationarityReport> {
    let layout = economy.layout()?;
    let grid = layout.rate_grid();
    let fresh = fresh_seed(economy.seed);
    let family = economy.solve_cohorts(&RatePath::constant(grid, found.rate), fresh, opts)?;
    let times = grid.nodes();
    let aggs = times.iter().map(|&t| olg_aggregates(&family, &economy.flow, t)).collect::<Result<Vec<_>>>()?;
    let dev: Vec<f64> = aggs.iter().map(|a| a.wealth - economy.capital).collect();
    let se: Vec<f64> = aggs.iter().map(|a| a.wealth_stderr.hypot(found.stderr)).collect();
    let clearing = ClearingCheck::evaluate(&dev, &se, (found.wealth - economy.capital).abs());

    let nodes = [layout.steps / 2, layout.steps];
    let n = family.solutions.len();
    let mut worst_z: f64 = 0.0;
    for &j in &nodes {
        let m: Vec<f64> = (0..n).map(|i| family.mean(Field::Wealth, i, j)).collect();
        let s: Vec<f64> = (0..n).map(|i| family.wealth_stderr(i, j)).collect();
        let (sum_m, sum_v) = (m.iter().sum::<f64>(), s.iter().map(|x| x * x).sum::<f64>());
        for i in 0..n {
            let others = (sum_m - m[i]) / (n - 1) as f64;
            let others_v = (sum_v - s[i] * s[i]) / ((n - 1) * (n - 1)) as f64;
            let se = (s[i] * s[i] + others_v).sqrt();
            let z = if se > 0.0 {
                (m[i] - others).abs() / se
            } else if m[i] == others {
                0.0
            } else {
                f64::INFINITY
            };
            worst_z = worst_z.max(z);
        }
    }
    Ok(StationarityReport {
        times,
        aggregate_wealth: aggs.iter().map(|a| a.wealth).collect(),
        aggregate_stderr: aggs.iter().map(|a| a.wealth_stderr).collect(),
        clearing,
        cohorts: CohortAgreement {
            ages: nodes.iter().map(|&j| j as f64 * layout.dt).collect(),
            worst_z,
            passes: worst_z <= 3.0,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub base_rate: f64,
    pub shifts: Vec<f64>,
    pub rates: Vec<f64>,
    /// `|r(eps) - r(0)| / eps`.
    pub ratios: Vec<f64>,
    /// Largest ratio: the empirical Lipschitz constant.
    pub constant: f64,
}

/// Response of the stationary rate to shifting every household's initial
/// wealth by `eps`, on common random numbers.
pub fn stationary_stability(
    economy: &OlgEconomy,
    bracket: (f64, f64),
    reference_paths: usize,
    shifts: &[f64],
    opts: &PicardOptions,
) -> Result<StabilityReport> {
    let base = stationary_rate_bisect(economy, bracket, reference_paths, opts)?;
    let mut rates = Vec::with_capacity(shifts.len());
    for &eps in shifts {
        if !(eps.is_finite() && eps != 0.0) {
            return config_err(format!("wealth shifts must be finite and nonzero, got {eps}"));
        }
        let e = OlgEconomy { wealth_shift: economy.wealth_shift + eps, ..economy.clone() };
        rates.push(stationary_rate_bisect(&e, bracket, reference_paths, opts)?.rate);
    }
    let ratios: Vec<f64> = rates.iter().zip(shifts).map(|(r, e)| (r - base.rate).abs() / e.abs()).collect();
    let constant = ratios.iter().copied().fold(0.0, f64::max);
    Ok(StabilityReport { base_rate: base.rate, shifts: shifts.to_vec(), rates, ratios, constant })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::FlowKind;
    use crate::model::{DiscountSpec, IncomeLaw, UtilitySpec};

    fn economy(kind: FlowKind, sigma: f64, n_paths: usize) -> OlgEconomy {
        let u = UtilitySpec::crra(2.0).unwrap();
        OlgEconomy {
            prefs: Preferences { u1: u, u2: u, disc: DiscountSpec::new(0.02, 100.0).unwrap() },
            income: IncomeModel::gbm(0.01, sigma, IncomeLaw::Point(1.0)).unwrap(),
            wealth_law: WealthLaw::Point(10.0),
            wealth_shift: 0.0,
            flow: DemographicFlow::new(kind, 5.0, (0.0, 5.0)).unwrap(),
            capital: 10.0,
            steps: 50,
            n_paths,
            n_cohorts: 21,
            seed: 3,
        }
    }

    #[test]
    fn layout_geometry() {
        let e = economy(FlowKind::StationaryUniform, 0.0, 2);
        let l = e.layout().unwrap();
        assert_eq!(l.births.len(), 21);
        assert!((l.births[0] + 5.0).abs() < 1e-12 && (l.births[20] - 5.0).abs() < 1e-12);
        assert_eq!(l.per_life, 10);
        let g = l.rate_grid();
        assert_eq!(g.len(), 11);
        assert!((g.t0() - 0.0).abs() < 1e-12 && (g.end() - 5.0).abs() < 1e-12);
        let bad = OlgEconomy { steps: 7, ..e.clone() };
        assert!(bad.layout().is_err());
        let bad = OlgEconomy { n_cohorts: 8, ..e };
        assert!(bad.layout().is_err());
    }

    #[test]
    fn unit_income_aggregates_to_unit_mass() {
        let mut e = economy(FlowKind::StationaryExponential { growth: 0.02 }, 0.0, 2);
        e.income = IncomeModel::gbm(0.0, 0.0, IncomeLaw::Point(1.0)).unwrap();
        let fam = e
            .solve_cohorts(&RatePath::constant(e.layout().unwrap().rate_grid(), 0.03), 1, &PicardOptions::default())
            .unwrap();
        for t in [0.0, 1.25, 2.5, 5.0] {
            let a = olg_aggregates(&fam, &e.flow, t).unwrap();
            assert!((a.income - 1.0).abs() < 1e-6, "{t}: {}", a.income);
        }
        assert!(olg_aggregates(&fam, &e.flow, 5.5).is_err());
    }

    #[test]
    fn identical_cohorts_average_the_age_profile() {
        let e = economy(FlowKind::StationaryUniform, 0.0, 2);
        let fam = e
            .solve_cohorts(&RatePath::constant(e.layout().unwrap().rate_grid(), 0.03), 1, &PicardOptions::default())
            .unwrap();
        let profile: Vec<f64> = (0..=50).map(|j| fam.mean(Field::Wealth, 0, j)).collect();
        let direct = TimeGrid::new(0.0, 5.0, 50).unwrap().trapezoid(&profile) / 5.0;
        for t in [0.0, 0.7, 2.5, 5.0] {
            let a = olg_aggregates(&fam, &e.flow, t).unwrap();
            assert!((a.wealth - direct).abs() < 1e-9 * direct, "{t}: {} vs {direct}", a.wealth);
            assert_eq!(a.wealth_stderr, 0.0);
        }
    }

    #[test]
    fn narrow_flow_recovers_one_cohort() {
        let l = 5.0;
        let width = 0.2;
        let centre = 1.0;
        let density: crate::equilibrium::BirthDensity =
            std::sync::Arc::new(
                move |t: f64, b: f64| if (t - b - centre).abs() <= width / 2.0 { 1.0 / width } else { 0.0 },
            );
        let flow = DemographicFlow::new(FlowKind::Custom { density, time_derivative: None }, l, (0.0, 5.0)).unwrap();
        let e = OlgEconomy { flow, ..economy(FlowKind::StationaryUniform, 0.0, 2) };
        let fam = e
            .solve_cohorts(&RatePath::constant(e.layout().unwrap().rate_grid(), 0.03), 1, &PicardOptions::default())
            .unwrap();
        // cohort 10 is born at 0 and is one year old at t = 1
        let a = olg_aggregates(&fam, &e.flow, 1.0).unwrap();
        let target = fam.mean(Field::Wealth, 10, 10);
        assert!((a.wealth - target).abs() < 1e-2 * target, "{} vs {target}", a.wealth);
        assert!(olg_phi_map(&fam, &e.flow, 10.0).is_err());
    }

    #[test]
    fn uniform_phi_has_no_birth_wealth_or_growth_terms() {
        let e = economy(FlowKind::StationaryUniform, 0.0, 2);
        let r = 0.03;
        let fam = e
            .solve_cohorts(&RatePath::constant(e.layout().unwrap().rate_grid(), r), 1, &PicardOptions::default())
            .unwrap();
        let phi = olg_phi_map(&fam, &e.flow, e.capital).unwrap();
        // Identical cohorts at a constant rate: K Phi = r W - dW/dt = r W.
        let w = olg_aggregates(&fam, &e.flow, 2.5).unwrap().wealth;
        for v in phi.values() {
            assert!((v - r * w / e.capital).abs() < 5e-3 * r * w / e.capital, "{v} vs {}", r * w / e.capital);
        }
    }

    #[test]
    fn balanced_households_leave_only_boundary_terms() {
        // eta = c and zero rate: wealth never moves, so K Phi is the
        // boundary term (n(t,t-L) - n(t,t)) w0 plus the d_t n term -w0.
        let mut e = economy(FlowKind::StationaryExponential { growth: 0.3 }, 0.0, 2);
        e.prefs.disc = DiscountSpec::new(0.0, 0.0).unwrap();
        let layout = e.layout().unwrap();
        let fam = e.solve_cohorts(&RatePath::constant(layout.rate_grid(), 0.0), 1, &PicardOptions::default()).unwrap();
        let mut fam = fam;
        for s in &mut fam.solutions {
            let n = s.ensemble.wealth().len();
            let inc = s.ensemble.income().to_vec();
            s.ensemble.set_trajectories(vec![10.0; n], inc);
        }
        fam.means = fam.solutions.iter().map(NodeMeans::of).collect();
        let phi = olg_phi_map(&fam, &e.flow, 1.0).unwrap();
        let t = 2.5;
        let expected = 10.0 * (e.flow.density(t, t - 5.0) - e.flow.density(t, t)) + 10.0 * 0.3;
        for v in phi.values() {
            assert!((v - expected).abs() < 1e-3, "{v} vs {expected}");
        }
    }

    #[test]
    fn noiseless_stationary_rate_clears() {
        let e = economy(FlowKind::StationaryUniform, 0.0, 2);
        let found = stationary_rate_bisect(&e, (-0.1, 0.2), 2, &PicardOptions::default()).unwrap();
        assert!(found.bracket.1 - found.bracket.0 <= 1e-4);
        assert!((found.wealth - e.capital).abs() < 0.05, "{found:?}");
        let far = OlgEconomy { capital: 1e6, ..e };
        assert!(matches!(
            stationary_rate_bisect(&far, (0.0, 0.1), 2, &PicardOptions::default()),
            Err(Error::NoBracket { .. })
        ));
    }
}
