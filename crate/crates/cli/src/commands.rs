use serde_json::{json, Value};

use olg_core::deterministic::solve_deterministic_crra;
use olg_core::equilibrium::{
    lifecycle_equilibrium_solve, olg_equilibrium_solve, stationary_checks, stationary_rate_bisect, CapitalSupply,
    ClearingCheck, EquilibriumResult, LifecycleEconomy, OlgEconomy,
};
use olg_core::lifecycle::{
    borrowing_limit_violations, borrowing_limits, expected_wealth_sweep, gbm_limit_factors, LifecycleSolution,
};
use olg_core::model::{IncomeDynamics, PathEnsemble, RatePath, TimeGrid};
use olg_core::stats;

use crate::config::RunConfig;
use crate::output::{num, Csv, InvariantFlag, RunDir};
use crate::CliError;

/// What a command reports back for the manifest and the exit code.
pub struct Outcome {
    pub converged: bool,
    pub convergence: Value,
    pub invariants: Vec<InvariantFlag>,
}

fn solver<T>(r: olg_core::Result<T>) -> Result<T, CliError> {
    r.map_err(CliError::from)
}

pub fn det_lifecycle(config: &RunConfig, dir: &RunDir) -> Result<Outcome, CliError> {
    let m = &config.model;
    if m.gamma1 != m.gamma2 {
        return Err(CliError::Config("the closed form needs gamma1 == gamma2".into()));
    }
    let grid = config.grid()?;
    let rate = RatePath::constant(grid, m.rate);
    let prefs = config.preferences()?;
    let (w0, eta0) = (config.wealth_law().mean(), config.income_law().mean());
    let sol = solver(solve_deterministic_crra(w0, eta0, config.income.mu, &rate, prefs.disc, m.gamma1, &grid))?;
    let mut csv = Csv::new(&["t", "income", "consumption", "wealth"]);
    for (j, t) in grid.nodes().into_iter().enumerate() {
        csv.floats(&[t, sol.income[j], sol.consumption[j], sol.wealth[j]]);
    }
    dir.write("det_trajectories.csv", &csv)?;
    Ok(Outcome {
        converged: true,
        convergence: json!({ "closed_form": true, "terminal_wealth": sol.terminal_wealth }),
        invariants: vec![InvariantFlag::new(
            "consumption_nonnegative",
            sol.consumption.iter().all(|&c| c >= 0.0),
            String::new(),
        )],
    })
}

fn picard_summary(sol: &LifecycleSolution) -> Value {
    json!({
        "converged": sol.converged,
        "iterations": sol.iterations,
        "final_residual": sol.final_residual(),
        "tolerance": sol.tolerance,
        "contraction_ratios": sol.contraction_ratios,
        "final_damping": sol.final_damping,
        "ridge_fallbacks": sol.ridge_fallbacks,
    })
}

fn picard_history(sol: &LifecycleSolution) -> Csv {
    let mut csv = Csv::new(&["iteration", "residual", "ratio"]);
    for (k, r) in sol.residuals.iter().enumerate() {
        let ratio =
            if k == 0 { String::new() } else { sol.contraction_ratios.get(k - 1).map(|&x| num(x)).unwrap_or_default() };
        csv.row(&[(k + 1).to_string(), num(*r), ratio]);
    }
    csv
}

/// Invariants every household run is checked against.
pub fn household_invariants(sol: &LifecycleSolution, config: &RunConfig) -> Vec<InvariantFlag> {
    let e = &sol.ensemble;
    let kappa = sol.kappa_used;
    let bound = e.consumption().iter().all(|&c| (0.0..=kappa).contains(&c));
    let w0 = config.wealth_law().mean().abs();
    let nbl = borrowing_limit_violations(&sol.rate, &config.income_model().expect("validated"), e, 1e-6 * (1.0 + w0));
    let min_terminal = e.terminal_wealth().iter().copied().fold(f64::INFINITY, f64::min);
    vec![
        InvariantFlag::new("consumption_bound", bound, format!("0 <= c <= {kappa:e}")),
        InvariantFlag::new(
            "borrowing_limit",
            nbl.fraction() <= 1e-3,
            format!("violation fraction {:.3e}", nbl.fraction()),
        ),
        InvariantFlag::new(
            "terminal_positivity",
            min_terminal >= -1e-3 * (1.0 + w0),
            format!("min terminal wealth {min_terminal:.6e}"),
        ),
    ]
}

pub fn sto_lifecycle(config: &RunConfig, dir: &RunDir) -> Result<Outcome, CliError> {
    let problem = config.problem()?;
    let grid = problem.grid;
    let rate = RatePath::constant(grid, config.model.rate);
    let sol = solver(problem.solve(&rate, 0, &config.picard()))?;
    let e = &sol.ensemble;
    dir.write("picard_residuals.csv", &picard_history(&sol))?;

    let quantiles = [0.05, 0.25, 0.5, 0.75, 0.95];
    let mut header = vec!["t".to_string()];
    for v in ["w", "c", "eta"] {
        header.extend([format!("{v}_mean"), format!("{v}_std")]);
        header.extend(quantiles.iter().map(|q| format!("{v}_q{:02}", (q * 100.0f64).round() as u32)));
    }
    let mut stats_csv = Csv::new(&header);
    for (j, t) in grid.nodes().into_iter().enumerate() {
        let mut row = vec![t];
        for xs in [e.wealth_at(j), e.consumption_at(j), e.income_at(j)] {
            row.extend([stats::mean(xs), stats::std_dev(xs)]);
            row.extend(quantiles.iter().map(|&q| stats::quantile(xs, q)));
        }
        stats_csv.floats(&row);
    }
    dir.write("ensemble_stats.csv", &stats_csv)?;

    let k = config.output.sample_paths.min(e.n_paths());
    let nodes: Vec<usize> = (0..grid.len()).collect();
    let limits = borrowing_limits(&rate, &problem.income, e, &nodes);
    let mut header = vec!["t".to_string(), "mean_limit".to_string()];
    header.extend((0..k).map(|i| format!("limit_{i}")));
    let mut nbl = Csv::new(&header);
    for (j, t) in grid.nodes().into_iter().enumerate() {
        let mut row = vec![t, stats::mean(&limits[j])];
        row.extend_from_slice(&limits[j][..k]);
        nbl.floats(&row);
    }
    dir.write("nbl.csv", &nbl)?;

    if config.output.emit_paths {
        write_paths(dir, e, &grid, k)?;
    }
    Ok(Outcome {
        converged: sol.converged,
        convergence: picard_summary(&sol),
        invariants: household_invariants(&sol, config),
    })
}

fn write_paths(dir: &RunDir, e: &PathEnsemble, grid: &TimeGrid, k: usize) -> Result<(), CliError> {
    let mut paths = Csv::new(&["path", "t", "income", "consumption", "wealth"]);
    for i in 0..k {
        let (eta, c, w) = (e.income_path(i), e.consumption_path(i), e.wealth_path(i));
        for (j, t) in grid.nodes().into_iter().enumerate() {
            paths.row(&[i.to_string(), num(t), num(eta[j]), num(c[j]), num(w[j])]);
        }
    }
    dir.write("sample_paths.csv", &paths)?;
    // every path at birth, mid-life and death, for wealth histograms
    let mut snaps = Csv::new(&["path", "age", "wealth"]);
    for j in [0, grid.steps() / 2, grid.steps()] {
        let age = num(grid.node(j) - grid.t0());
        for (i, w) in e.wealth_at(j).iter().enumerate() {
            snaps.row(&[i.to_string(), age.clone(), num(*w)]);
        }
    }
    dir.write("wealth_snapshots.csv", &snaps)
}

pub fn nbl(config: &RunConfig, dir: &RunDir) -> Result<Outcome, CliError> {
    let problem = config.problem()?;
    let grid = problem.grid;
    let rate = RatePath::constant(grid, config.model.rate);
    let IncomeDynamics::Gbm { mu, .. } = problem.income.dynamics else {
        return Err(CliError::Config("the borrowing-limit panels need GBM income".into()));
    };
    let e = solver(problem.simulate(0))?;
    let nodes: Vec<usize> = (0..grid.len()).collect();
    let limits = borrowing_limits(&rate, &problem.income, &e, &nodes);
    let k = config.output.sample_paths.min(e.n_paths());
    let mut header = vec!["t".to_string(), "mean_limit".to_string()];
    header.extend((0..k).map(|i| format!("limit_{i}")));
    let mut dynamic = Csv::new(&header);
    for (j, t) in grid.nodes().into_iter().enumerate() {
        let mut row = vec![t, stats::mean(&limits[j])];
        row.extend_from_slice(&limits[j][..k]);
        dynamic.floats(&row);
    }
    dir.write("nbl_dynamic.csv", &dynamic)?;

    let factors = gbm_limit_factors(&rate, &grid, mu);
    let ages = &config.nbl.static_ages;
    let at_age: Vec<f64> = ages.iter().map(|&a| grid.interpolate(&factors, a)).collect();
    let mut header = vec!["eta".to_string()];
    header.extend(ages.iter().map(|a| format!("limit_at_{a}")));
    let mut panel = Csv::new(&header);
    let n = config.nbl.eta_points;
    for i in 0..n {
        let eta = config.nbl.eta_max * i as f64 / (n - 1) as f64;
        let mut row = vec![eta];
        row.extend(at_age.iter().map(|f| if eta == 0.0 { 0.0 } else { -eta * f }));
        panel.floats(&row);
    }
    dir.write("nbl_static.csv", &panel)?;

    let terminal_zero = limits[grid.steps()].iter().all(|&v| v == 0.0);
    let ordered = at_age.windows(2).all(|w| w[1] <= w[0]);
    Ok(Outcome {
        converged: true,
        convergence: json!({ "closed_form": true, "limit_factor_at_birth": factors[0] }),
        invariants: vec![
            InvariantFlag::new("terminal_limit_zero", terminal_zero, String::new()),
            InvariantFlag::new("older_limits_tighter", ordered, "static panel, increasing ages".into()),
        ],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EquilibriumMode {
    Lifecycle,
    Olg,
    Stationary,
}

fn check_json(c: &Option<ClearingCheck>) -> Value {
    match c {
        Some(c) => json!({ "sup_deviation": c.sup_deviation, "worst_ratio": c.worst_ratio, "passes": c.passes }),
        None => Value::Null,
    }
}

fn write_equilibrium(dir: &RunDir, res: &EquilibriumResult) -> Result<(), CliError> {
    let mut rate = Csv::new(&["t", "r"]);
    for (t, r) in res.rate.grid().nodes().into_iter().zip(res.rate.values()) {
        rate.floats(&[t, *r]);
    }
    dir.write("rate_path.csv", &rate)?;
    let mut clearing = Csv::new(&["t", "expected_wealth", "stderr", "capital", "deviation"]);
    for (i, &t) in res.times.iter().enumerate() {
        let (w, k) = (res.aggregate_wealth[i], res.capital[i]);
        clearing.floats(&[t, w, res.aggregate_stderr[i], k, w - k]);
    }
    dir.write("clearing_residual.csv", &clearing)?;
    let mut iters = Csv::new(&["iteration", "residual"]);
    for (k, r) in res.residuals.iter().enumerate() {
        iters.row(&[(k + 1).to_string(), num(*r)]);
    }
    dir.write("iterations.csv", &iters)
}

fn equilibrium_outcome(res: &EquilibriumResult) -> Outcome {
    let verified = res.verification.as_ref().map(|v| v.passes).unwrap_or(false);
    Outcome {
        converged: res.converged,
        convergence: json!({
            "converged": res.converged,
            "iterations": res.residuals.len(),
            "clearing_residual": res.residuals.last(),
            "tolerance": res.tolerance,
            "inner_converged": res.inner_converged,
            "verification": check_json(&res.verification),
            "phi_residual": res.phi_residual,
            "projections": res.projections,
            "ball_bound": res.ball_bound,
        }),
        invariants: vec![
            InvariantFlag::new("fresh_seed_clearing", verified, "within tolerance plus 3 standard errors".into()),
            InvariantFlag::new("households_converged", res.inner_converged, String::new()),
        ],
    }
}

fn olg_economy(config: &RunConfig) -> Result<OlgEconomy, CliError> {
    Ok(OlgEconomy {
        prefs: config.preferences()?,
        income: config.income_model()?,
        wealth_law: config.wealth_law(),
        wealth_shift: 0.0,
        flow: config.flow()?,
        capital: config.equilibrium.capital,
        steps: config.grid.steps,
        n_paths: config.population.n_paths,
        n_cohorts: config.equilibrium.cohorts,
        seed: config.population.seed,
    })
}

pub fn equilibrium(config: &RunConfig, mode: EquilibriumMode, dir: &RunDir) -> Result<Outcome, CliError> {
    let opts = config.equilibrium_options();
    match mode {
        EquilibriumMode::Lifecycle => {
            let economy = LifecycleEconomy {
                problem: config.problem()?,
                capital: CapitalSupply::Constant(config.equilibrium.capital),
            };
            let res = solver(lifecycle_equilibrium_solve(&economy, &opts))?;
            write_equilibrium(dir, &res)?;
            Ok(equilibrium_outcome(&res))
        }
        EquilibriumMode::Olg => {
            let res = solver(olg_equilibrium_solve(&olg_economy(config)?, &opts))?;
            write_equilibrium(dir, &res)?;
            Ok(equilibrium_outcome(&res))
        }
        EquilibriumMode::Stationary => stationary(config, dir),
    }
}

fn stationary(config: &RunConfig, dir: &RunDir) -> Result<Outcome, CliError> {
    let economy = olg_economy(config)?;
    let layout = solver(economy.layout())?;
    let picard = config.picard();
    let paths = match config.equilibrium.reference_paths {
        0 => config.population.n_paths * (layout.per_life + 1),
        n => n,
    };
    let [lo, hi] = config.equilibrium.bracket;
    let found = solver(stationary_rate_bisect(&economy, (lo, hi), paths, &picard))?;
    let checks = solver(stationary_checks(&economy, &found, &picard))?;

    let mut rate = Csv::new(&["t", "r"]);
    for &t in &checks.times {
        rate.floats(&[t, found.rate]);
    }
    dir.write("rate_path.csv", &rate)?;
    let k = config.equilibrium.capital;
    let mut clearing = Csv::new(&["t", "expected_wealth", "stderr", "capital", "deviation"]);
    for (i, &t) in checks.times.iter().enumerate() {
        let w = checks.aggregate_wealth[i];
        clearing.floats(&[t, w, checks.aggregate_stderr[i], k, w - k]);
    }
    dir.write("clearing_residual.csv", &clearing)?;
    let mut iters = Csv::new(&["iteration", "rate", "excess_wealth"]);
    for (i, (r, x)) in found.history.iter().enumerate() {
        iters.row(&[(i + 1).to_string(), num(*r), num(*x)]);
    }
    dir.write("iterations.csv", &iters)?;

    Ok(Outcome {
        converged: true,
        convergence: json!({
            "rate": found.rate,
            "bracket": [found.bracket.0, found.bracket.1],
            "evaluations": found.evaluations,
            "reference_paths": paths,
            "reference_wealth": found.wealth,
            "reference_stderr": found.stderr,
            "clearing": check_json(&Some(checks.clearing)),
            "cohort_worst_z": checks.cohorts.worst_z,
        }),
        invariants: vec![
            InvariantFlag::new(
                "stationary_clearing",
                checks.clearing.passes,
                format!("worst ratio {:.3}", checks.clearing.worst_ratio),
            ),
            InvariantFlag::new(
                "cohort_profiles_agree",
                checks.cohorts.passes,
                format!("worst z {:.3}", checks.cohorts.worst_z),
            ),
        ],
    })
}

pub fn sweep(config: &RunConfig, dir: &RunDir) -> Result<Outcome, CliError> {
    let problem = config.problem()?;
    let age = config.sweep.probe_age.unwrap_or(0.5 * config.grid.horizon);
    let rep = solver(expected_wealth_sweep(&problem, &config.sweep.rates, age, &config.picard(), 0))?;
    let mut csv = Csv::new(&["r", "mean_wealth", "stderr", "converged", "iterations"]);
    for row in &rep.rows {
        csv.row(&[
            num(row.rate),
            num(row.mean_wealth),
            num(row.stderr),
            u8::from(row.converged).to_string(),
            row.iterations.to_string(),
        ]);
    }
    dir.write("sweep.csv", &csv)?;

    let positive: Vec<_> = rep.rows.iter().filter(|r| r.rate > 0.0).collect();
    let increasing = positive.windows(2).all(|w| w[1].rate <= w[0].rate || w[1].mean_wealth > w[0].mean_wealth);
    let low = rep.rows.iter().filter(|r| r.rate <= -1.0).all(|r| r.mean_wealth <= 3.0 * r.stderr);
    Ok(Outcome {
        converged: true,
        convergence: json!({ "rows": rep.rows.len(), "all_converged": rep.rows.iter().all(|r| r.converged) }),
        invariants: vec![
            InvariantFlag::new("increasing_in_rate", increasing, "over positive rates".into()),
            InvariantFlag::new("nonpositive_at_minus_one", low, "within 3 standard errors".into()),
        ],
    })
}
