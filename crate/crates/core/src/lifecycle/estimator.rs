use nalgebra::{DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::{rng, IncomeModel, PathEnsemble, TimeGrid, UtilitySpec};
use crate::stats;

/// Least-squares projection onto polynomials of total degree `degree` in the
/// selected state variables at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionSpec {
    pub degree: usize,
    pub wealth: bool,
    pub income: bool,
}

impl Default for RegressionSpec {
    fn default() -> Self {
        Self { degree: 3, wealth: true, income: true }
    }
}

/// Ridge penalty (per observation) used when the design is rank deficient.
pub const RIDGE_PENALTY: f64 = 1e-8;

/// Standardized monomial basis in `(w, eta)`.
#[derive(Debug, Clone)]
struct Basis {
    center: [f64; 2],
    scale: [f64; 2],
    degree: usize,
    exponents: Vec<[usize; 2]>,
}

impl Basis {
    /// Variables are standardized; those without cross-sectional spread
    /// are dropped.
    fn new(spec: &RegressionSpec, wealth: &[f64], income: &[f64]) -> Self {
        let n = wealth.len();
        let mut center = [0.0; 2];
        let mut scale = [1.0; 2];
        let mut active = [false; 2];
        for (k, (xs, on)) in [(wealth, spec.wealth), (income, spec.income)].into_iter().enumerate() {
            if !on || n < 2 {
                continue;
            }
            let m = stats::mean(xs);
            let sd = stats::std_dev(xs);
            if sd > 1e-12 * (1.0 + m.abs()) {
                center[k] = m;
                scale[k] = sd;
                active[k] = true;
            }
        }
        Self { center, scale, degree: spec.degree, exponents: monomials(spec.degree, active) }
    }

    fn len(&self) -> usize {
        self.exponents.len()
    }

    fn row(&self, w: f64, eta: f64, out: &mut [f64]) {
        let zw = (w - self.center[0]) / self.scale[0];
        let ze = (eta - self.center[1]) / self.scale[1];
        let mut pw = [1.0; 9];
        let mut pe = [1.0; 9];
        for k in 1..=self.degree {
            pw[k] = pw[k - 1] * zw;
            pe[k] = pe[k - 1] * ze;
        }
        for (o, &[a, b]) in out.iter_mut().zip(&self.exponents) {
            *o = pw[a] * pe[b];
        }
    }
}

enum Solver {
    Qr(nalgebra::linalg::QR<f64, Dyn, Dyn>),
    Ridge(nalgebra::linalg::Cholesky<f64, Dyn>),
}

/// Design matrix of one node's cross-section, factorized once and reused
/// for every target regressed on the same states.
pub struct Design {
    basis: Basis,
    x: DMatrix<f64>,
    solver: Solver,
    /// Upper-triangular factor with `R^T R = X^T X` (plus ridge).
    r_factor: DMatrix<f64>,
}

impl Design {
    /// Householder QR when the design has full column rank; otherwise the
    /// ridge-penalized normal equations.
    pub fn new(spec: &RegressionSpec, wealth: &[f64], income: &[f64]) -> Self {
        assert!(spec.degree <= 8, "regression degree above 8 is not supported");
        let basis = Basis::new(spec, wealth, income);
        let (n, p) = (wealth.len(), basis.len());
        let mut x = DMatrix::zeros(n, p);
        let mut row = vec![0.0; p];
        for i in 0..n {
            basis.row(wealth[i], income[i], &mut row);
            for (k, v) in row.iter().enumerate() {
                x[(i, k)] = *v;
            }
        }
        if n >= p {
            let qr = x.clone().qr();
            let r = qr.r();
            let diag_max = (0..p).map(|k| r[(k, k)].abs()).fold(0.0, f64::max);
            if (0..p).all(|k| r[(k, k)].abs() > 1e-10 * diag_max) {
                return Self { basis, x, solver: Solver::Qr(qr), r_factor: r };
            }
        }
        let mut xtx = x.transpose() * &x;
        for k in 0..p {
            xtx[(k, k)] += RIDGE_PENALTY * n.max(1) as f64;
        }
        let chol = xtx.cholesky().expect("ridge system is positive definite");
        let r_factor = chol.l().transpose();
        Self { basis, x, solver: Solver::Ridge(chol), r_factor }
    }

    pub fn used_ridge(&self) -> bool {
        matches!(self.solver, Solver::Ridge(_))
    }

    pub fn fit(&self, target: &[f64]) -> NodeFit {
        let p = self.basis.len();
        let y = DVector::from_column_slice(target);
        let solved = match &self.solver {
            Solver::Qr(qr) => {
                let mut qty = y.clone();
                qr.q_tr_mul(&mut qty);
                self.r_factor.solve_upper_triangular(&qty.rows(0, p).into_owned())
            }
            Solver::Ridge(chol) => Some(chol.solve(&(self.x.transpose() * &y))),
        };
        let coef = solved.filter(|c| c.iter().all(|v| v.is_finite())).unwrap_or_else(|| DVector::zeros(p));
        let resid = &y - &self.x * &coef;
        let dof = target.len().saturating_sub(p).max(1);
        NodeFit {
            basis: self.basis.clone(),
            coef: coef.iter().copied().collect(),
            r_factor: self.r_factor.clone(),
            resid_var: resid.norm_squared() / dof as f64,
            ridge: self.used_ridge(),
        }
    }

    /// Fitted values at the design's own states.
    pub fn fitted(&self, fit: &NodeFit) -> Vec<f64> {
        let coef = DVector::from_column_slice(&fit.coef);
        (&self.x * coef).iter().copied().collect()
    }
}

/// `E[u'(v) | state]` at the design's own states, fitted in scaled form:
/// a level `m` for `v`, then the ratio `u'(v) / u'(m)`, multiplied back.
pub(crate) fn scaled_conditional_marginal(design: &Design, values: &[f64], u: &UtilitySpec) -> Vec<f64> {
    let level = design.fitted(&design.fit(values));
    let base: Vec<f64> = level.iter().map(|&m| u.marginal(m)).collect();
    let ratio: Vec<f64> = values.iter().zip(&base).map(|(&v, b)| u.marginal(v) / b).collect();
    let fitted = design.fitted(&design.fit(&ratio));
    fitted.iter().zip(&base).map(|(a, b)| a * b).collect()
}

/// Fitted conditional-expectation function at one node.
#[derive(Debug, Clone)]
pub struct NodeFit {
    basis: Basis,
    coef: Vec<f64>,
    r_factor: DMatrix<f64>,
    resid_var: f64,
    ridge: bool,
}

fn monomials(degree: usize, active: [bool; 2]) -> Vec<[usize; 2]> {
    let mut out = Vec::new();
    for total in 0..=degree {
        for a in (0..=total).rev() {
            let b = total - a;
            if (a > 0 && !active[0]) || (b > 0 && !active[1]) {
                continue;
            }
            out.push([a, b]);
        }
    }
    out
}

impl NodeFit {
    pub fn fit(spec: &RegressionSpec, wealth: &[f64], income: &[f64], target: &[f64]) -> Self {
        Design::new(spec, wealth, income).fit(target)
    }

    fn row(&self, w: f64, eta: f64) -> Vec<f64> {
        let mut row = vec![0.0; self.coef.len()];
        self.basis.row(w, eta, &mut row);
        row
    }

    pub fn predict(&self, w: f64, eta: f64) -> f64 {
        self.row(w, eta).iter().zip(&self.coef).map(|(a, b)| a * b).sum()
    }

    /// Standard error of the fitted mean at a state, under homoskedastic
    /// residuals.
    pub fn predict_stderr(&self, w: f64, eta: f64) -> f64 {
        let x = DVector::from_vec(self.row(w, eta));
        match self.r_factor.transpose().solve_lower_triangular(&x) {
            Some(v) => (self.resid_var * v.norm_squared()).sqrt(),
            None => f64::NAN,
        }
    }

    pub fn used_ridge(&self) -> bool {
        self.ridge
    }

    pub fn n_terms(&self) -> usize {
        self.coef.len()
    }
}

/// Regression estimate of `E[target | w_j, eta_j]` on every path.
pub fn estimate_conditional_expectation(
    spec: &RegressionSpec,
    ensemble: &PathEnsemble,
    j: usize,
    target: &[f64],
) -> Vec<f64> {
    let (w, eta) = (ensemble.wealth_at(j), ensemble.income_at(j));
    let design = Design::new(spec, w, eta);
    design.fitted(&design.fit(target))
}

/// Nested Monte Carlo: re-simulates `inner` income continuations from
/// `eta_j` at node `j` to the end of the grid and averages `f(eta_L)`.
/// Returns the mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NestedMc {
    pub inner: usize,
    pub seed: u64,
}

impl NestedMc {
    pub fn terminal_income_expectation(
        &self,
        model: &IncomeModel,
        grid: &TimeGrid,
        j: usize,
        eta_j: f64,
        probe: u64,
        f: impl Fn(f64) -> f64,
    ) -> (f64, f64) {
        let mut rng = rng::stream(self.seed, rng::DOMAIN_NESTED, probe, j as u64);
        let dt = grid.dt();
        let values: Vec<f64> = (0..self.inner)
            .map(|_| {
                let mut eta = eta_j;
                for k in j..grid.steps() {
                    let z: f64 = rng.sample(StandardNormal);
                    eta = model.step(k as f64 * dt, eta, dt, z);
                }
                f(eta)
            })
            .collect();
        stats::mean_stderr(&values)
    }
}
