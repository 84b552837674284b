use serde::{Deserialize, Serialize};

use super::RatePath;
use crate::error::{config_err, Result};

/// Time preference and bequest weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscountSpec {
    /// Discount rate `δ` (1/yr).
    pub delta: f64,
    /// Bequest intensity `λ`.
    pub lambda: f64,
}

impl DiscountSpec {
    pub fn new(delta: f64, lambda: f64) -> Result<Self> {
        if !(delta.is_finite() && delta >= 0.0) {
            return config_err(format!("discount rate must be >= 0, got {delta}"));
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return config_err(format!("bequest intensity must be >= 0, got {lambda}"));
        }
        Ok(Self { delta, lambda })
    }
}

/// `exp(int_t^T (r_s - delta) ds)` with the trapezoid rule on the rate grid.
pub fn discount_factor(r: &RatePath, delta: f64, t: f64, big_t: f64) -> f64 {
    (r.integral(t, big_t) - delta * (big_t - t)).exp()
}
