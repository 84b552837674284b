use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{config_err, Result};

/// Coefficient function of (time since birth, income level).
pub type Coefficient = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Income diffusion `dη = μ(t, η) dt + σ(t, η) dB`.
#[derive(Clone)]
pub enum IncomeDynamics {
    /// Geometric Brownian motion with drift rate `mu` and volatility `sigma`.
    Gbm { mu: f64, sigma: f64 },
    /// General Itô diffusion; both functions receive time since birth.
    Custom { drift: Coefficient, vol: Coefficient },
}

impl fmt::Debug for IncomeDynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Gbm { mu, sigma } => f.debug_struct("Gbm").field("mu", mu).field("sigma", sigma).finish(),
            Self::Custom { .. } => f.write_str("Custom"),
        }
    }
}

/// Law of income at birth, supported on `[0, inf)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IncomeLaw {
    Point(f64),
    Uniform(f64, f64),
    /// `exp(m + s Z)`.
    LogNormal {
        m: f64,
        s: f64,
    },
}

impl IncomeLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Point(v) if !(v.is_finite() && v >= 0.0) => {
                config_err(format!("initial income must be >= 0, got {v}"))
            }
            Self::Uniform(a, b) if !(a.is_finite() && b.is_finite() && 0.0 <= a && a < b) => {
                config_err(format!("uniform initial income needs 0 <= a < b, got ({a}, {b})"))
            }
            Self::LogNormal { m, s } if !(m.is_finite() && s.is_finite() && s > 0.0) => {
                config_err(format!("log-normal initial income needs a positive scale, got s = {s}"))
            }
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Point(v) => v,
            Self::Uniform(a, b) => a + (b - a) * rng.gen::<f64>(),
            Self::LogNormal { m, s } => {
                let z: f64 = rng.sample(StandardNormal);
                (m + s * z).exp()
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Self::Point(v) => v,
            Self::Uniform(a, b) => 0.5 * (a + b),
            Self::LogNormal { m, s } => (m + 0.5 * s * s).exp(),
        }
    }
}

/// Income process together with its law at birth.
#[derive(Debug, Clone)]
pub struct IncomeModel {
    pub dynamics: IncomeDynamics,
    pub initial: IncomeLaw,
}

impl IncomeModel {
    pub fn gbm(mu: f64, sigma: f64, initial: IncomeLaw) -> Result<Self> {
        let m = Self { dynamics: IncomeDynamics::Gbm { mu, sigma }, initial };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if let IncomeDynamics::Gbm { mu, sigma } = self.dynamics {
            if !mu.is_finite() || !(sigma.is_finite() && sigma >= 0.0) {
                return config_err(format!("GBM needs finite drift and volatility >= 0, got ({mu}, {sigma})"));
            }
        }
        self.initial.validate()
    }

    pub fn drift(&self, age: f64, eta: f64) -> f64 {
        match &self.dynamics {
            IncomeDynamics::Gbm { mu, .. } => mu * eta,
            IncomeDynamics::Custom { drift, .. } => drift(age, eta),
        }
    }

    pub fn vol(&self, age: f64, eta: f64) -> f64 {
        match &self.dynamics {
            IncomeDynamics::Gbm { sigma, .. } => sigma * eta,
            IncomeDynamics::Custom { vol, .. } => vol(age, eta),
        }
    }

    /// One Euler-Maruyama step, floored at zero income.
    pub fn step(&self, age: f64, eta: f64, dt: f64, z: f64) -> f64 {
        (eta + self.drift(age, eta) * dt + self.vol(age, eta) * dt.sqrt() * z).max(0.0)
    }

    /// `E[η_s | η_t = eta]` when it is known in closed form (GBM).
    pub fn conditional_mean(&self, t: f64, s: f64, eta: f64) -> Option<f64> {
        match self.dynamics {
            IncomeDynamics::Gbm { mu, .. } => Some(eta * (mu * (s - t)).exp()),
            IncomeDynamics::Custom { .. } => None,
        }
    }

    pub fn is_gbm(&self) -> bool {
        matches!(self.dynamics, IncomeDynamics::Gbm { .. })
    }

    /// Same model with the noise switched off.
    pub fn noiseless(&self) -> Self {
        let dynamics = match &self.dynamics {
            IncomeDynamics::Gbm { mu, .. } => IncomeDynamics::Gbm { mu: *mu, sigma: 0.0 },
            IncomeDynamics::Custom { drift, .. } => {
                IncomeDynamics::Custom { drift: drift.clone(), vol: Arc::new(|_, _| 0.0) }
            }
        };
        Self { dynamics, initial: self.initial }
    }
}
