use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{rng, IncomeModel, TimeGrid};
use crate::error::{config_err, Result};

/// Law of wealth at birth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WealthLaw {
    Point(f64),
    Uniform(f64, f64),
    Pareto { scale: f64, shape: f64 },
}

impl WealthLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Point(v) if !v.is_finite() => config_err("initial wealth must be finite"),
            Self::Uniform(a, b) if !(a.is_finite() && b.is_finite() && a < b) => {
                config_err(format!("uniform initial wealth needs a < b, got ({a}, {b})"))
            }
            Self::Pareto { scale, shape }
                if !(scale > 0.0 && shape > 0.0 && scale.is_finite() && shape.is_finite()) =>
            {
                config_err(format!("Pareto initial wealth needs positive scale and shape, got ({scale}, {shape})"))
            }
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Point(v) => v,
            Self::Uniform(a, b) => a + (b - a) * rng.gen::<f64>(),
            Self::Pareto { scale, shape } => {
                let u: f64 = rng.gen();
                scale * (1.0 - u).powf(-1.0 / shape)
            }
        }
    }

    /// Population mean (infinite for Pareto tails with shape <= 1).
    pub fn mean(&self) -> f64 {
        match *self {
            Self::Point(v) => v,
            Self::Uniform(a, b) => 0.5 * (a + b),
            Self::Pareto { scale, shape } if shape > 1.0 => scale * shape / (shape - 1.0),
            Self::Pareto { .. } => f64::INFINITY,
        }
    }
}

/// `n_paths` simulated households on a common grid. Arrays are stored
/// node-major: the value of path `i` at node `j` lives at `j * n_paths + i`.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    grid: TimeGrid,
    n_paths: usize,
    seed: u64,
    stream: u64,
    wealth_law: WealthLaw,
    pub(crate) income: Vec<f64>,
    pub(crate) wealth: Vec<f64>,
    pub(crate) consumption: Vec<f64>,
}

struct PathDraw {
    w0: f64,
    income: Vec<f64>,
}

fn draw_path(model: &IncomeModel, law: &WealthLaw, grid: &TimeGrid, seed: u64, stream: u64, path: usize) -> PathDraw {
    let mut rng = rng::stream(seed, rng::DOMAIN_PATHS, stream, path as u64);
    let eta0 = model.initial.sample(&mut rng);
    let w0 = law.sample(&mut rng);
    let dt = grid.dt();
    let mut income = Vec::with_capacity(grid.len());
    income.push(eta0);
    let mut eta = eta0;
    for j in 0..grid.steps() {
        let z: f64 = rng.sample(StandardNormal);
        eta = model.step(j as f64 * dt, eta, dt, z);
        income.push(eta);
    }
    PathDraw { w0, income }
}

impl PathEnsemble {
    /// Draws initial conditions and income paths. Path `i` of stream `stream`
    /// always receives the same draws for a given seed.
    pub fn simulate(
        grid: TimeGrid,
        model: &IncomeModel,
        wealth_law: WealthLaw,
        n_paths: usize,
        seed: u64,
        stream: u64,
    ) -> Result<Self> {
        if n_paths == 0 {
            return config_err("ensemble needs at least one path");
        }
        model.validate()?;
        wealth_law.validate()?;
        let draws: Vec<PathDraw> =
            (0..n_paths).into_par_iter().map(|i| draw_path(model, &wealth_law, &grid, seed, stream, i)).collect();
        let len = grid.len();
        let mut income = vec![0.0; len * n_paths];
        let mut wealth = vec![0.0; len * n_paths];
        for (i, d) in draws.iter().enumerate() {
            for j in 0..len {
                income[j * n_paths + i] = d.income[j];
            }
            wealth[i] = d.w0;
        }
        Ok(Self { grid, n_paths, seed, stream, wealth_law, income, wealth, consumption: vec![0.0; len * n_paths] })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn wealth_law(&self) -> WealthLaw {
        self.wealth_law
    }

    fn slice(v: &[f64], n: usize, j: usize) -> &[f64] {
        &v[j * n..(j + 1) * n]
    }

    pub fn income_at(&self, j: usize) -> &[f64] {
        Self::slice(&self.income, self.n_paths, j)
    }

    pub fn wealth_at(&self, j: usize) -> &[f64] {
        Self::slice(&self.wealth, self.n_paths, j)
    }

    pub fn consumption_at(&self, j: usize) -> &[f64] {
        Self::slice(&self.consumption, self.n_paths, j)
    }

    pub fn initial_wealth(&self) -> &[f64] {
        self.wealth_at(0)
    }

    pub fn terminal_wealth(&self) -> &[f64] {
        self.wealth_at(self.grid.steps())
    }

    pub fn income(&self) -> &[f64] {
        &self.income
    }

    pub fn wealth(&self) -> &[f64] {
        &self.wealth
    }

    pub fn consumption(&self) -> &[f64] {
        &self.consumption
    }

    fn path_of(&self, v: &[f64], i: usize) -> Vec<f64> {
        (0..self.grid.len()).map(|j| v[j * self.n_paths + i]).collect()
    }

    pub fn income_path(&self, i: usize) -> Vec<f64> {
        self.path_of(&self.income, i)
    }

    pub fn wealth_path(&self, i: usize) -> Vec<f64> {
        self.path_of(&self.wealth, i)
    }

    pub fn consumption_path(&self, i: usize) -> Vec<f64> {
        self.path_of(&self.consumption, i)
    }

    /// Adds `by` to every path's initial wealth.
    pub fn shift_initial_wealth(&mut self, by: f64) {
        for w in &mut self.wealth[..self.n_paths] {
            *w += by;
        }
    }

    /// Shifts initial wealth so that its sample mean equals `target`.
    pub fn center_initial_wealth(&mut self, target: f64) {
        let mean = self.initial_wealth().iter().sum::<f64>() / self.n_paths as f64;
        self.shift_initial_wealth(target - mean);
    }

    /// Replaces the wealth and consumption arrays (node-major).
    pub fn set_trajectories(&mut self, wealth: Vec<f64>, consumption: Vec<f64>) {
        assert_eq!(wealth.len(), self.wealth.len());
        assert_eq!(consumption.len(), self.consumption.len());
        self.wealth = wealth;
        self.consumption = consumption;
    }
}

/// Income paths only, node-major, as produced by [`PathEnsemble::simulate`]
/// on stream 0.
pub fn simulate_income(model: &IncomeModel, grid: &TimeGrid, n_paths: usize, seed: u64) -> Result<Vec<f64>> {
    Ok(PathEnsemble::simulate(*grid, model, WealthLaw::Point(0.0), n_paths, seed, 0)?.income)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::IncomeLaw;

    #[test]
    fn degenerate_income_is_constant() {
        let m = IncomeModel::gbm(0.0, 0.0, IncomeLaw::Point(5.0)).unwrap();
        let g = TimeGrid::new(0.0, 10.0, 20).unwrap();
        let inc = simulate_income(&m, &g, 3, 1).unwrap();
        assert!(inc.iter().all(|&v| v == 5.0));
    }

    #[test]
    fn noiseless_gbm_recursion_is_exact() {
        let m = IncomeModel::gbm(0.01, 0.0, IncomeLaw::Point(1.0)).unwrap();
        let g = TimeGrid::new(0.0, 0.1, 1).unwrap();
        let inc = simulate_income(&m, &g, 1, 9).unwrap();
        assert_eq!(inc[1], 1.001);
        let g = TimeGrid::new(0.0, 6.0, 60).unwrap();
        let e = PathEnsemble::simulate(g, &m, WealthLaw::Point(0.0), 2, 3, 0).unwrap();
        for j in 0..g.steps() {
            for (a, b) in e.income_at(j).iter().zip(e.income_at(j + 1)) {
                assert_eq!(*b, a + 0.01 * a * g.dt());
            }
        }
    }

    #[test]
    fn zero_paths_and_bad_laws_are_rejected() {
        let m = IncomeModel::gbm(0.0, 0.1, IncomeLaw::Point(1.0)).unwrap();
        let g = TimeGrid::new(0.0, 1.0, 10).unwrap();
        assert!(PathEnsemble::simulate(g, &m, WealthLaw::Point(0.0), 0, 1, 0).is_err());
        let bad = WealthLaw::Pareto { scale: 0.0, shape: 3.0 };
        assert!(PathEnsemble::simulate(g, &m, bad, 5, 1, 0).is_err());
        let bad_income = IncomeModel { dynamics: m.dynamics.clone(), initial: IncomeLaw::LogNormal { m: 0.0, s: 0.0 } };
        assert!(simulate_income(&bad_income, &g, 5, 1).is_err());
    }

    #[test]
    fn pareto_draws_respect_the_scale() {
        let law = WealthLaw::Pareto { scale: 10.0, shape: 3.0 };
        let mut r = rng::stream(1, 0, 0, 0);
        assert!((0..1000).map(|_| law.sample(&mut r)).all(|w| w >= 10.0));
        assert_eq!(law.mean(), 15.0);
    }

    #[test]
    fn centering_sets_the_sample_mean() {
        let m = IncomeModel::gbm(0.0, 0.1, IncomeLaw::Point(1.0)).unwrap();
        let g = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let mut e = PathEnsemble::simulate(g, &m, WealthLaw::Uniform(0.0, 4.0), 101, 5, 0).unwrap();
        e.center_initial_wealth(10.0);
        let mean = e.initial_wealth().iter().sum::<f64>() / 101.0;
        assert!((mean - 10.0).abs() < 1e-12);
    }
}
