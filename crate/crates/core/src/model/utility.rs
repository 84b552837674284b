use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// CRRA utility `x^(1-γ)/(1-γ)` (log for `γ = 1`) above a threshold `eps`,
/// continued below it by the concave quadratic that matches value and slope
/// at `eps` and has curvature `-eps^(-p)`.
///
/// Consumption recovered through [`UtilitySpec::inverse_marginal`] is
/// confined to `[0, c_max]`; `kappa` is the resulting bound on consumption.
/// The Lipschitz constants of the inverse marginal and of the marginal are
/// measured numerically at construction and reported alongside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilitySpec {
    gamma: f64,
    eps: f64,
    p: f64,
    c_max: f64,
    kappa: f64,
    lip_inverse: f64,
    lip_marginal: f64,
}

impl UtilitySpec {
    pub const DEFAULT_EPS: f64 = 1e-3;
    pub const DEFAULT_P: f64 = 2.0;
    pub const DEFAULT_C_MAX: f64 = 1e6;

    /// Regularized CRRA utility with the default `eps`, `p` and consumption cap.
    pub fn crra(gamma: f64) -> Result<Self> {
        Self::new(gamma, Self::DEFAULT_EPS, Self::DEFAULT_P, Self::DEFAULT_C_MAX)
    }

    pub fn new(gamma: f64, eps: f64, p: f64, c_max: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return config_err(format!("risk aversion must be positive, got {gamma}"));
        }
        if !(eps.is_finite() && eps > 0.0) {
            return config_err(format!("regularization threshold must be positive, got {eps}"));
        }
        if !(p.is_finite() && p >= 1.0) {
            return config_err(format!("quadratic-branch exponent must be >= 1, got {p}"));
        }
        if !(c_max.is_finite() && c_max > eps) {
            return config_err(format!("consumption cap must exceed eps, got {c_max}"));
        }
        let mut u = Self { gamma, eps, p, c_max, kappa: f64::NAN, lip_inverse: f64::NAN, lip_marginal: f64::NAN };
        u.measure_constants();
        Ok(u)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn c_max(&self) -> f64 {
        self.c_max
    }

    /// Upper bound on consumption: `sup_{y >= 0} inverse_marginal(y)`.
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Measured Lipschitz constant of `inverse_marginal` on `[0, inf)`.
    pub fn lip_inverse(&self) -> f64 {
        self.lip_inverse
    }

    /// Measured Lipschitz constant of `marginal` on `[0, inf)`.
    pub fn lip_marginal(&self) -> f64 {
        self.lip_marginal
    }

    fn crra_value(&self, x: f64) -> f64 {
        if self.gamma == 1.0 {
            x.ln()
        } else {
            x.powf(1.0 - self.gamma) / (1.0 - self.gamma)
        }
    }

    fn crra_marginal(&self, x: f64) -> f64 {
        if self.gamma == 1.0 {
            1.0 / x
        } else if self.gamma == 2.0 {
            1.0 / (x * x)
        } else {
            x.powf(-self.gamma)
        }
    }

    /// Curvature of the quadratic branch, `eps^(-p)`.
    fn quad_curvature(&self) -> f64 {
        self.eps.powf(-self.p)
    }

    pub fn value(&self, x: f64) -> f64 {
        if x >= self.eps {
            self.crra_value(x)
        } else {
            let d = x - self.eps;
            self.crra_value(self.eps) + self.crra_marginal(self.eps) * d - 0.5 * self.quad_curvature() * d * d
        }
    }

    pub fn marginal(&self, x: f64) -> f64 {
        if x >= self.eps {
            self.crra_marginal(x)
        } else {
            self.crra_marginal(self.eps) - self.quad_curvature() * (x - self.eps)
        }
    }

    /// Second derivative (one-sided from above at `eps`).
    pub fn curvature(&self, x: f64) -> f64 {
        if x >= self.eps {
            -self.gamma * x.powf(-self.gamma - 1.0)
        } else {
            -self.quad_curvature()
        }
    }

    /// Consumption `x` in `[0, c_max]` with `marginal(x) = y`, obtained by
    /// inverting each branch of the implemented marginal in closed form.
    /// Arguments beyond `marginal(0)` map to 0, arguments below
    /// `marginal(c_max)` (including 0) map to `c_max`.
    pub fn inverse_marginal(&self, y: f64) -> f64 {
        let y = y.max(0.0);
        let knot = self.crra_marginal(self.eps);
        let x = if y >= knot {
            self.eps + (knot - y) / self.quad_curvature()
        } else if y <= 0.0 {
            self.c_max
        } else if self.gamma == 2.0 {
            1.0 / y.sqrt()
        } else if self.gamma == 1.0 {
            1.0 / y
        } else {
            y.powf(-1.0 / self.gamma)
        };
        x.clamp(0.0, self.c_max)
    }

    /// Reference inverse of the marginal by bracketed bisection on
    /// `[0, c_max]`; agrees with [`Self::inverse_marginal`] to rounding.
    pub fn inverse_marginal_bisect(&self, y: f64) -> f64 {
        let y = y.max(0.0);
        if y >= self.marginal(0.0) {
            return 0.0;
        }
        if y <= self.marginal(self.c_max) {
            return self.c_max;
        }
        // Bisect in log-space above eps so relative accuracy is uniform.
        let (mut lo, mut hi) = if y >= self.marginal(self.eps) { (0.0, self.eps) } else { (self.eps, self.c_max) };
        let log_space = lo > 0.0;
        for _ in 0..200 {
            let mid = if log_space { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
            if mid <= lo || mid >= hi {
                break;
            }
            if self.marginal(mid) > y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn measure_constants(&mut self) {
        // kappa: sup of the inverse over a log grid of arguments, plus y = 0.
        let y_top = self.marginal(0.0) * 10.0;
        let y_bot = self.marginal(self.c_max) * 0.1;
        let n = 4000;
        let ratio = (y_top / y_bot).ln() / n as f64;
        let ys: Vec<f64> = std::iter::once(0.0).chain((0..=n).map(|k| y_bot * (ratio * k as f64).exp())).collect();
        self.kappa = ys.iter().map(|&y| self.inverse_marginal(y).abs()).fold(0.0, f64::max);
        self.lip_inverse = ys
            .windows(2)
            .map(|w| ((self.inverse_marginal(w[1]) - self.inverse_marginal(w[0])) / (w[1] - w[0])).abs())
            .fold(0.0, f64::max);

        let mut xs: Vec<f64> = (0..=20).map(|k| self.eps * k as f64 / 20.0).collect();
        let xr = (self.c_max / self.eps).ln() / n as f64;
        xs.extend((1..=n).map(|k| self.eps * (xr * k as f64).exp()));
        self.lip_marginal = xs
            .windows(2)
            .map(|w| ((self.marginal(w[1]) - self.marginal(w[0])) / (w[1] - w[0])).abs())
            .fold(0.0, f64::max);
    }
}
