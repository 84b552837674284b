use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// Uniform time grid `t_j = t0 + j * dt`, `j = 0..=steps`, covering a
/// lifespan of `horizon` years.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t0: f64,
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, horizon: f64, steps: usize) -> Result<Self> {
        if !t0.is_finite() {
            return config_err("grid start must be finite");
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return config_err(format!("lifespan must be positive, got {horizon}"));
        }
        if steps == 0 {
            return config_err("grid needs at least one step");
        }
        Ok(Self { t0, horizon, steps })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    /// Lifespan `L`.
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn end(&self) -> f64 {
        self.t0 + self.horizon
    }

    /// Number of steps `M`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of nodes, `M + 1`.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        if j == self.steps {
            self.end()
        } else {
            self.t0 + j as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|j| self.node(j)).collect()
    }

    /// Same spacing, shifted to start at `t0`.
    pub fn shifted_to(&self, t0: f64) -> Self {
        Self { t0, ..*self }
    }

    /// Fractional node position of time `t`, clamped to `[0, M]`.
    pub fn position(&self, t: f64) -> f64 {
        ((t - self.t0) / self.dt()).clamp(0.0, self.steps as f64)
    }

    /// Linear interpolation of node values at time `t` (constant outside).
    pub fn interpolate(&self, values: &[f64], t: f64) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        let pos = self.position(t);
        let j = (pos.floor() as usize).min(self.steps - 1);
        let w = pos - j as f64;
        if w == 0.0 {
            values[j]
        } else {
            values[j] * (1.0 - w) + values[j + 1] * w
        }
    }

    /// Composite trapezoid rule for node values over the whole grid.
    pub fn trapezoid(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        let inner: f64 = values[1..self.steps].iter().sum();
        self.dt() * (0.5 * (values[0] + values[self.steps]) + inner)
    }

    /// Running trapezoid integrals from `t0` to each node.
    pub fn cumulative_trapezoid(&self, values: &[f64]) -> Vec<f64> {
        debug_assert_eq!(values.len(), self.len());
        let dt = self.dt();
        let mut out = Vec::with_capacity(values.len());
        let mut acc = 0.0;
        out.push(0.0);
        for w in values.windows(2) {
            acc += 0.5 * dt * (w[0] + w[1]);
            out.push(acc);
        }
        out
    }

    /// Nearest node index to `t`, if `t` lies on the grid within `tol`.
    pub fn node_index(&self, t: f64, tol: f64) -> Option<usize> {
        let pos = (t - self.t0) / self.dt();
        let j = pos.round();
        if j < 0.0 || j > self.steps as f64 {
            return None;
        }
        ((self.node(j as usize) - t).abs() <= tol).then_some(j as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nodes_increase_and_close_the_horizon() {
        let g = TimeGrid::new(1.5, 60.0, 600).unwrap();
        let nodes = g.nodes();
        assert_eq!(nodes.len(), 601);
        assert!(nodes.windows(2).all(|w| w[1] > w[0]));
        assert!((g.dt() * g.steps() as f64 - g.horizon()).abs() < 1e-12);
        assert_eq!(*nodes.last().unwrap(), 61.5);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(TimeGrid::new(0.0, 0.0, 10).is_err());
        assert!(TimeGrid::new(0.0, -1.0, 10).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 0).is_err());
        assert!(TimeGrid::new(f64::NAN, 1.0, 3).is_err());
    }

    #[test]
    fn interpolation_is_piecewise_linear() {
        let g = TimeGrid::new(0.0, 2.0, 2).unwrap();
        let v = [0.0, 2.0, 6.0];
        assert_eq!(g.interpolate(&v, 0.5), 1.0);
        assert_eq!(g.interpolate(&v, 1.5), 4.0);
        assert_eq!(g.interpolate(&v, -3.0), 0.0);
        assert_eq!(g.interpolate(&v, 9.0), 6.0);
        assert_eq!(g.node_index(1.0, 1e-12), Some(1));
        assert_eq!(g.node_index(1.3, 1e-12), None);
    }
}
