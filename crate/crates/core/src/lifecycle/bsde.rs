use super::estimator::{Design, RegressionSpec};
use crate::model::{PathEnsemble, RatePath};

/// Value at node `j` of the linear BSDE `dy = -r y dt + z dB`, `y_L = g`:
/// `y_j = exp(int_{t_j}^{L} r) E[g | w_j, eta_j]`. The rate is
/// deterministic, so it factors out of the conditional expectation.
pub fn linear_bsde_value(
    rate: &RatePath,
    ensemble: &PathEnsemble,
    g: &[f64],
    j: usize,
    spec: &RegressionSpec,
) -> Vec<f64> {
    let grid = ensemble.grid();
    let growth = rate.integral(grid.node(j), grid.end()).exp();
    let design = Design::new(spec, ensemble.wealth_at(j), ensemble.income_at(j));
    design.fitted(&design.fit(g)).into_iter().map(|v| growth * v).collect()
}

/// `exp(int_{t_0}^{t_j} r) y_j`, a martingale in `j` when `y` solves the
/// linear BSDE.
pub fn compounded_bsde_value(
    rate: &RatePath,
    ensemble: &PathEnsemble,
    g: &[f64],
    j: usize,
    spec: &RegressionSpec,
) -> Vec<f64> {
    let grid = ensemble.grid();
    let back = rate.integral(grid.t0(), grid.node(j)).exp();
    linear_bsde_value(rate, ensemble, g, j, spec).into_iter().map(|v| back * v).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{IncomeLaw, IncomeModel, TimeGrid, WealthLaw};
    use crate::stats;

    fn setup() -> (TimeGrid, RatePath, PathEnsemble) {
        let g = TimeGrid::new(0.0, 60.0, 600).unwrap();
        let model = IncomeModel::gbm(0.01, 0.1, IncomeLaw::Point(1.0)).unwrap();
        let ens = PathEnsemble::simulate(g, &model, WealthLaw::Uniform(5.0, 15.0), 2000, 9, 0).unwrap();
        (g, RatePath::constant(g, 0.03), ens)
    }

    #[test]
    fn constant_terminal_value_compounds() {
        let (_, r, ens) = setup();
        let y = linear_bsde_value(&r, &ens, &vec![1.0; 2000], 0, &RegressionSpec::default());
        for v in y {
            assert!((v - 1.8f64.exp()).abs() <= 1e-12 * 1.8f64.exp());
        }
    }

    #[test]
    fn measurable_terminal_value_collapses() {
        let (_, r, ens) = setup();
        let g = ens.income_at(600).to_vec();
        let y = linear_bsde_value(&r, &ens, &g, 600, &RegressionSpec { degree: 1, ..Default::default() });
        for (a, b) in y.iter().zip(&g) {
            assert!((a - b).abs() < 1e-10 * (1.0 + b));
        }
    }

    #[test]
    fn compounded_value_is_a_martingale() {
        let (_, r, ens) = setup();
        let g: Vec<f64> = ens.income_at(600).iter().zip(ens.wealth_at(600)).map(|(e, w)| e * e + 0.1 * w).collect();
        let spec = RegressionSpec::default();
        let start = stats::mean(&compounded_bsde_value(&r, &ens, &g, 0, &spec));
        for j in [100, 300, 550, 600] {
            let (m, se) = stats::mean_stderr(&compounded_bsde_value(&r, &ens, &g, j, &spec));
            assert!((m - start).abs() <= 3.0 * se, "node {j}: {m} vs {start} (se {se})");
        }
    }
}
