//! Run configuration. Every section has defaults for a desk-scale economy
//! (lifespan 5, 50 steps, 1000 paths) with the usual preference and income
//! parameters, so a config file only needs the keys it changes.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use olg_core::equilibrium::{DemographicFlow, EquilibriumOptions, FlowKind};
use olg_core::lifecycle::{
    InitialGuess, LifecycleProblem, PicardOptions, Preferences, RegressionSpec, RegressionTarget,
};
use olg_core::model::{DiscountSpec, IncomeLaw, IncomeModel, TimeGrid, UtilitySpec, WealthLaw};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub income: IncomeConfig,
    pub population: PopulationConfig,
    pub grid: GridConfig,
    pub solver: SolverConfig,
    pub equilibrium: EquilibriumConfig,
    pub sweep: SweepConfig,
    pub nbl: NblConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub gamma1: f64,
    pub gamma2: f64,
    pub eps: f64,
    pub p: f64,
    pub c_max: f64,
    pub delta: f64,
    pub lambda: f64,
    /// Constant interest rate for household-level commands.
    pub rate: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { gamma1: 2.0, gamma2: 2.0, eps: 1e-3, p: 2.0, c_max: 1e6, delta: 0.02, lambda: 100.0, rate: 0.03 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum IncomeKind {
    Gbm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum IncomeLawConfig {
    Point(f64),
    Uniform([f64; 2]),
    LogNormal { m: f64, s: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum WealthLawConfig {
    Point(f64),
    Uniform([f64; 2]),
    Pareto { scale: f64, shape: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IncomeConfig {
    pub kind: IncomeKind,
    pub mu: f64,
    pub sigma: f64,
    pub initial: IncomeLawConfig,
}

impl Default for IncomeConfig {
    fn default() -> Self {
        Self { kind: IncomeKind::Gbm, mu: 0.01, sigma: 0.1, initial: IncomeLawConfig::Point(1.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopulationConfig {
    pub initial_wealth: WealthLawConfig,
    pub n_paths: usize,
    pub seed: u64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self { initial_wealth: WealthLawConfig::Point(10.0), n_paths: 1000, seed: 42 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub horizon: f64,
    pub steps: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { horizon: 5.0, steps: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Scaled,
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialGuessKind {
    Deterministic,
    Backward,
    InitialWealth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Fixed-point tolerance; `null` uses `1e-6 (1 + |mean w0|)`.
    pub tol: Option<f64>,
    pub damping: f64,
    pub max_iter: usize,
    pub degree: usize,
    pub estimator: EstimatorKind,
    pub initial_guess: InitialGuessKind,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = PicardOptions::default();
        Self {
            tol: d.tol,
            damping: d.damping,
            max_iter: d.max_iter,
            degree: d.regression.degree,
            estimator: EstimatorKind::Scaled,
            initial_guess: InitialGuessKind::Deterministic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FlowConfig {
    Uniform,
    Exponential { growth: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EquilibriumConfig {
    pub capital: f64,
    /// Calendar window `[T0, T1]` of the OLG economy.
    pub window: [f64; 2],
    pub cohorts: usize,
    pub flow: FlowConfig,
    /// Initial bracket for the stationary-rate bisection.
    pub bracket: [f64; 2],
    /// Wealth-unit clearing tolerance; `null` uses `1e-3 (1 + sup|K|)`.
    pub tol: Option<f64>,
    pub max_iter: usize,
    pub damping: f64,
    pub initial_rate: f64,
    pub ball_radius: f64,
    pub level_correction: bool,
    /// Paths of the stationary reference cohort; 0 means
    /// `n_paths * (cohorts in one lifespan + 1)`.
    pub reference_paths: usize,
}

impl Default for EquilibriumConfig {
    fn default() -> Self {
        let d = EquilibriumOptions::default();
        Self {
            capital: 10.0,
            window: [0.0, 5.0],
            cohorts: 21,
            flow: FlowConfig::Exponential { growth: 0.02 },
            bracket: [0.0, 0.1],
            tol: d.tol,
            max_iter: d.max_iter,
            damping: d.damping,
            initial_rate: d.initial_rate,
            ball_radius: d.ball_radius,
            level_correction: d.level_correction,
            reference_paths: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub rates: Vec<f64>,
    /// Age at which mean wealth is reported; `null` is half the lifespan.
    pub probe_age: Option<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { rates: vec![-1.0, 0.1, 0.2, 0.3, 0.4, 0.5], probe_age: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NblConfig {
    /// Ages of the static panel.
    pub static_ages: Vec<f64>,
    pub eta_max: f64,
    pub eta_points: usize,
}

impl Default for NblConfig {
    fn default() -> Self {
        Self { static_ages: vec![1.0, 2.5, 4.0], eta_max: 3.0, eta_points: 31 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: String,
    pub emit_paths: bool,
    pub sample_paths: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: "runs".into(), emit_paths: true, sample_paths: 10 }
    }
}

fn cfg<T>(r: olg_core::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Config(e.to_string()))
}

impl RunConfig {
    /// Parses a config document, or the `config` embedded in a run
    /// manifest.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid JSON: {e}")))?;
        let value = match value {
            serde_json::Value::Object(mut m) if m.contains_key("config_hash") => {
                m.remove("config").ok_or_else(|| CliError::Config("manifest has no embedded config".into()))?
            }
            v => v,
        };
        let config: Self = serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        let m = &self.model;
        let rates = [m.rate, self.equilibrium.initial_rate, self.equilibrium.bracket[0], self.equilibrium.bracket[1]];
        if rates.iter().chain(&self.sweep.rates).any(|r| !r.is_finite()) {
            return bad("all rates must be finite".into());
        }
        if !(self.grid.horizon.is_finite() && self.grid.horizon > 0.0) {
            return bad(format!("grid.horizon must be positive, got {}", self.grid.horizon));
        }
        if self.grid.steps < 10 {
            return bad(format!("grid.steps must be at least 10, got {}", self.grid.steps));
        }
        if self.population.n_paths < 1 {
            return bad("population.n_paths must be at least 1".into());
        }
        if !(self.income.mu.is_finite() && self.income.sigma.is_finite() && self.income.sigma >= 0.0) {
            return bad("income.mu must be finite and income.sigma nonnegative".into());
        }
        if !self.equilibrium.capital.is_finite() {
            return bad("equilibrium.capital must be finite".into());
        }
        if self.nbl.eta_points < 2 || !(self.nbl.eta_max.is_finite() && self.nbl.eta_max > 0.0) {
            return bad("nbl needs eta_points >= 2 and a positive eta_max".into());
        }
        for &a in &self.nbl.static_ages {
            if !(0.0..=self.grid.horizon).contains(&a) {
                return bad(format!("nbl.static_ages entry {a} lies outside [0, {}]", self.grid.horizon));
            }
        }
        if let Some(a) = self.sweep.probe_age {
            if !(0.0..=self.grid.horizon).contains(&a) {
                return bad(format!("sweep.probe_age {a} lies outside [0, {}]", self.grid.horizon));
            }
        }
        self.preferences()?;
        self.income_model()?;
        cfg(self.wealth_law().validate())?;
        self.grid()?;
        cfg(self.picard().validate())?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn preferences(&self) -> Result<Preferences, CliError> {
        let m = &self.model;
        Ok(Preferences {
            u1: cfg(UtilitySpec::new(m.gamma1, m.eps, m.p, m.c_max))?,
            u2: cfg(UtilitySpec::new(m.gamma2, m.eps, m.p, m.c_max))?,
            disc: cfg(DiscountSpec::new(m.delta, m.lambda))?,
        })
    }

    pub fn income_law(&self) -> IncomeLaw {
        match self.income.initial {
            IncomeLawConfig::Point(v) => IncomeLaw::Point(v),
            IncomeLawConfig::Uniform([a, b]) => IncomeLaw::Uniform(a, b),
            IncomeLawConfig::LogNormal { m, s } => IncomeLaw::LogNormal { m, s },
        }
    }

    pub fn income_model(&self) -> Result<IncomeModel, CliError> {
        match self.income.kind {
            IncomeKind::Gbm => cfg(IncomeModel::gbm(self.income.mu, self.income.sigma, self.income_law())),
        }
    }

    pub fn wealth_law(&self) -> WealthLaw {
        match self.population.initial_wealth {
            WealthLawConfig::Point(v) => WealthLaw::Point(v),
            WealthLawConfig::Uniform([a, b]) => WealthLaw::Uniform(a, b),
            WealthLawConfig::Pareto { scale, shape } => WealthLaw::Pareto { scale, shape },
        }
    }

    pub fn grid(&self) -> Result<TimeGrid, CliError> {
        cfg(TimeGrid::new(0.0, self.grid.horizon, self.grid.steps))
    }

    pub fn picard(&self) -> PicardOptions {
        let s = &self.solver;
        PicardOptions {
            tol: s.tol,
            max_iter: s.max_iter,
            damping: s.damping,
            regression: RegressionSpec { degree: s.degree, ..Default::default() },
            target: match s.estimator {
                EstimatorKind::Scaled => RegressionTarget::Scaled,
                EstimatorKind::Direct => RegressionTarget::Direct,
            },
            initial: match s.initial_guess {
                InitialGuessKind::Deterministic => InitialGuess::Deterministic,
                InitialGuessKind::Backward => InitialGuess::Backward,
                InitialGuessKind::InitialWealth => InitialGuess::InitialWealth,
            },
        }
    }

    pub fn problem(&self) -> Result<LifecycleProblem, CliError> {
        Ok(LifecycleProblem {
            prefs: self.preferences()?,
            income: self.income_model()?,
            wealth_law: self.wealth_law(),
            grid: self.grid()?,
            n_paths: self.population.n_paths,
            seed: self.population.seed,
        })
    }

    pub fn equilibrium_options(&self) -> EquilibriumOptions {
        let e = &self.equilibrium;
        EquilibriumOptions {
            tol: e.tol,
            max_iter: e.max_iter,
            damping: e.damping,
            initial_rate: e.initial_rate,
            picard: self.picard(),
            ball_radius: e.ball_radius,
            level_correction: e.level_correction,
        }
    }

    pub fn flow(&self) -> Result<DemographicFlow, CliError> {
        let kind = match self.equilibrium.flow {
            FlowConfig::Uniform => FlowKind::StationaryUniform,
            FlowConfig::Exponential { growth } => FlowKind::StationaryExponential { growth },
        };
        let [t0, t1] = self.equilibrium.window;
        cfg(DemographicFlow::new(kind, self.grid.horizon, (t0, t1)))
    }
}
