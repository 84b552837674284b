use super::TimeGrid;
use crate::error::{config_err, Result};

/// Deterministic interest-rate path: node values on a grid, linearly
/// interpolated between nodes and held constant outside the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RatePath {
    grid: TimeGrid,
    values: Vec<f64>,
    cumulative: Vec<f64>,
}

impl RatePath {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return config_err(format!("rate path needs {} values, got {}", grid.len(), values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return config_err("rate path values must be finite");
        }
        let dt = grid.dt();
        let mut cumulative = Vec::with_capacity(values.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in values.windows(2) {
            acc += 0.5 * dt * (w[0] + w[1]);
            cumulative.push(acc);
        }
        Ok(Self { grid, values, cumulative })
    }

    pub fn constant(grid: TimeGrid, r: f64) -> Self {
        Self::new(grid, vec![r; grid.len()]).expect("constant rate path must be finite")
    }

    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.nodes().into_iter().map(f).collect())
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, t: f64) -> f64 {
        self.grid.interpolate(&self.values, t)
    }

    /// Rate sampled at the nodes of another grid.
    pub fn sample(&self, grid: &TimeGrid) -> Vec<f64> {
        grid.nodes().into_iter().map(|t| self.at(t)).collect()
    }

    /// Same rate function represented on another grid.
    pub fn resample(&self, grid: TimeGrid) -> Self {
        Self::new(grid, self.sample(&grid)).expect("resampled rates stay finite")
    }

    /// `int_{t0}^{t} r_s ds` of the interpolant (negative for `t < t0`).
    fn antiderivative(&self, t: f64) -> f64 {
        let g = &self.grid;
        if t <= g.t0() {
            return (t - g.t0()) * self.values[0];
        }
        if t >= g.end() {
            return self.cumulative[g.steps()] + (t - g.end()) * self.values[g.steps()];
        }
        let pos = (t - g.t0()) / g.dt();
        let j = (pos.floor() as usize).min(g.steps() - 1);
        let w = pos - j as f64;
        let (a, b) = (self.values[j], self.values[j + 1]);
        self.cumulative[j] + g.dt() * (a * w + 0.5 * (b - a) * w * w)
    }

    /// `int_a^b r_s ds`, exact for the piecewise-linear interpolant, so the
    /// trapezoid rule on the nodes.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        self.antiderivative(b) - self.antiderivative(a)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `sup |self - other|` over this path's nodes.
    pub fn distance(&self, other: &RatePath) -> f64 {
        self.grid.nodes().iter().zip(&self.values).map(|(&t, v)| (v - other.at(t)).abs()).fold(0.0, f64::max)
    }

    /// `(1 - theta) * self + theta * other`, on this path's grid.
    pub fn relax_towards(&self, other: &RatePath, theta: f64) -> Self {
        let values =
            self.grid.nodes().iter().zip(&self.values).map(|(&t, v)| (1.0 - theta) * v + theta * other.at(t)).collect();
        Self::new(self.grid, values).expect("convex combination of finite paths")
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn shifted(&self, by: f64) -> Self {
        self.map(|v| v + by).expect("shifted rates stay finite")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_path_norm_and_integral() {
        let g = TimeGrid::new(0.0, 60.0, 600).unwrap();
        let r = RatePath::constant(g, 0.03);
        assert_eq!(r.sup_norm(), 0.03);
        assert_relative_eq!(r.integral(0.0, 60.0), 1.8, max_relative = 1e-13);
        assert_relative_eq!(r.integral(-10.0, 70.0), 2.4, max_relative = 1e-13);
        assert_eq!(r.integral(5.0, 5.0), 0.0);
    }

    #[test]
    fn integral_of_linear_path_is_exact_off_nodes() {
        let g = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let r = RatePath::from_fn(g, |t| 2.0 * t).unwrap();
        assert_relative_eq!(r.integral(0.1, 0.9), 0.81 - 0.01, max_relative = 1e-13);
        assert_relative_eq!(r.at(0.3), 0.6, max_relative = 1e-13);
        // Beyond the grid the rate is held at its last value, 2.
        assert_relative_eq!(r.integral(1.0, 1.5), 1.0, max_relative = 1e-13);
    }

    #[test]
    fn relaxation_and_distance() {
        let g = TimeGrid::new(0.0, 1.0, 2).unwrap();
        let a = RatePath::constant(g, 0.0);
        let b = RatePath::constant(g, 1.0);
        let c = a.relax_towards(&b, 0.25);
        assert_eq!(c.values(), &[0.25, 0.25, 0.25]);
        assert_eq!(a.distance(&b), 1.0);
    }
}
