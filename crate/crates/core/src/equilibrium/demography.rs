use std::fmt;
use std::sync::Arc;

use crate::error::{config_err, Result};

pub type BirthDensity = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum FlowKind {
    /// `n(t, b) = 1 / L` on `[t - L, t]`.
    StationaryUniform,
    /// Age density proportional to `exp(-g (t - b))`: a population growing
    /// at rate `g`.
    StationaryExponential { growth: f64 },
    /// Arbitrary density `n(t, b)`; the time derivative is needed by the
    /// Leibniz identity and the OLG rate map.
    Custom { density: BirthDensity, time_derivative: Option<BirthDensity> },
}

impl fmt::Debug for FlowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::StationaryUniform => write!(f, "StationaryUniform"),
            Self::StationaryExponential { growth } => write!(f, "StationaryExponential {{ growth: {growth} }}"),
            Self::Custom { time_derivative, .. } => {
                write!(f, "Custom {{ time_derivative: {} }}", if time_derivative.is_some() { "yes" } else { "no" })
            }
        }
    }
}

/// Flow of birth-date densities `n(t, .)` supported on `[t - L, t]`, used on
/// the calendar window `[T0, T1]`.
#[derive(Debug, Clone)]
pub struct DemographicFlow {
    kind: FlowKind,
    lifespan: f64,
    window: (f64, f64),
}

/// Composite Simpson rule with `panels` (rounded up to even) subintervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = (panels.max(2) + 1) & !1;
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n).map(|k| f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 }).sum();
    (f(a) + f(b) + inner) * h / 3.0
}

const PANELS: usize = 2000;

impl DemographicFlow {
    pub fn new(kind: FlowKind, lifespan: f64, window: (f64, f64)) -> Result<Self> {
        if !(lifespan > 0.0 && lifespan.is_finite()) {
            return config_err(format!("lifespan must be positive and finite, got {lifespan}"));
        }
        if !(window.0.is_finite() && window.1.is_finite() && window.0 < window.1) {
            return config_err(format!("calendar window needs T0 < T1, got [{}, {}]", window.0, window.1));
        }
        if let FlowKind::StationaryExponential { growth } = kind {
            if !growth.is_finite() {
                return config_err("population growth rate must be finite");
            }
        }
        Ok(Self { kind, lifespan, window })
    }

    pub fn kind(&self) -> &FlowKind {
        &self.kind
    }

    pub fn lifespan(&self) -> f64 {
        self.lifespan
    }

    pub fn window(&self) -> (f64, f64) {
        self.window
    }

    /// Shift-invariant flows: `n(t, b)` depends on the age `t - b` only.
    pub fn is_stationary(&self) -> bool {
        !matches!(self.kind, FlowKind::Custom { .. })
    }

    fn age_density(&self, age: f64) -> f64 {
        match self.kind {
            FlowKind::StationaryUniform => 1.0 / self.lifespan,
            FlowKind::StationaryExponential { growth } if growth.abs() * self.lifespan < 1e-12 => 1.0 / self.lifespan,
            FlowKind::StationaryExponential { growth } => {
                growth / -(-growth * self.lifespan).exp_m1() * (-growth * age).exp()
            }
            FlowKind::Custom { .. } => unreachable!("custom flows are not age-indexed"),
        }
    }

    fn in_support(&self, t: f64, b: f64) -> bool {
        let age = t - b;
        age >= -1e-12 * (1.0 + t.abs()) && age <= self.lifespan * (1.0 + 1e-12) + 1e-12
    }

    /// `n(t, b)`, zero off the support `[t - L, t]`.
    pub fn density(&self, t: f64, b: f64) -> f64 {
        if !self.in_support(t, b) {
            return 0.0;
        }
        match &self.kind {
            FlowKind::Custom { density, .. } => density(t, b),
            _ => self.age_density((t - b).clamp(0.0, self.lifespan)),
        }
    }

    /// `d/dt n(t, b)` at fixed birth date.
    pub fn density_dt(&self, t: f64, b: f64) -> Result<f64> {
        if !self.in_support(t, b) {
            return Ok(0.0);
        }
        match &self.kind {
            FlowKind::StationaryUniform => Ok(0.0),
            FlowKind::StationaryExponential { growth } => Ok(-growth * self.density(t, b)),
            FlowKind::Custom { time_derivative: Some(d), .. } => Ok(d(t, b)),
            FlowKind::Custom { time_derivative: None, .. } => {
                config_err("custom demographic flow has no time derivative of its density")
            }
        }
    }

    pub fn has_time_derivative(&self) -> bool {
        !matches!(self.kind, FlowKind::Custom { time_derivative: None, .. })
    }

    /// `int_{t-L}^{t} n(t, b) db` by Simpson quadrature.
    pub fn total_mass(&self, t: f64) -> f64 {
        simpson(|b| self.density(t, b), t - self.lifespan, t, PANELS)
    }

    /// `sup |n| + sup |d_t n|` over the window: exact for the stationary
    /// kinds, sampled on a 201 x 201 (time, age) lattice otherwise.
    pub fn norm(&self) -> Result<f64> {
        match self.kind {
            FlowKind::StationaryUniform => Ok(1.0 / self.lifespan),
            FlowKind::StationaryExponential { growth } => {
                let peak = self.age_density(0.0).max(self.age_density(self.lifespan));
                Ok(peak * (1.0 + growth.abs()))
            }
            FlowKind::Custom { .. } => {
                let (t0, t1) = self.window;
                let mut n_sup: f64 = 0.0;
                let mut dn_sup: f64 = 0.0;
                for p in 0..=200 {
                    let t = t0 + (t1 - t0) * p as f64 / 200.0;
                    for q in 0..=200 {
                        let b = t - self.lifespan * q as f64 / 200.0;
                        n_sup = n_sup.max(self.density(t, b).abs());
                        dn_sup = dn_sup.max(self.density_dt(t, b)?.abs());
                    }
                }
                Ok(n_sup + dn_sup)
            }
        }
    }
}

/// Both sides of the Leibniz rule for `t -> int_{t-L}^{t} f(t, b) n(t, b) db`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeibnizCheck {
    /// `f(t,t) n(t,t) - f(t,t-L) n(t,t-L) + int d_t f n + int f d_t n`.
    pub analytic: f64,
    /// Fourth-order centered difference of the integral.
    pub finite_difference: f64,
}

impl LeibnizCheck {
    pub fn error(&self) -> f64 {
        (self.analytic - self.finite_difference).abs()
    }
}

pub fn leibniz_derivative_check(
    f: &dyn Fn(f64, f64) -> f64,
    df_dt: &dyn Fn(f64, f64) -> f64,
    flow: &DemographicFlow,
    t: f64,
) -> Result<LeibnizCheck> {
    let l = flow.lifespan();
    if !flow.has_time_derivative() {
        return config_err("custom demographic flow has no time derivative of its density");
    }
    let boundary = f(t, t) * flow.density(t, t) - f(t, t - l) * flow.density(t, t - l);
    let transport = simpson(|b| df_dt(t, b) * flow.density(t, b), t - l, t, PANELS);
    let growth = simpson(|b| f(t, b) * flow.density_dt(t, b).unwrap_or(0.0), t - l, t, PANELS);
    let integral = |s: f64| simpson(|b| f(s, b) * flow.density(s, b), s - l, s, PANELS);
    let h = 1e-2 * l.min(1.0);
    let fd =
        (-integral(t + 2.0 * h) + 8.0 * integral(t + h) - 8.0 * integral(t - h) + integral(t - 2.0 * h)) / (12.0 * h);
    Ok(LeibnizCheck { analytic: boundary + transport + growth, finite_difference: fd })
}
