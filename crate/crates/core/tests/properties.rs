use proptest::prelude::*;

use olg_core::deterministic::{deterministic_payoff, solve_deterministic_crra, wealth_by_variation_of_constants};
use olg_core::lifecycle::{
    theta_map_apply, Design, LifecycleProblem, PicardOptions, Preferences, RegressionSpec, RegressionTarget,
};
use olg_core::model::{DiscountSpec, IncomeLaw, IncomeModel, PathEnsemble, RatePath, TimeGrid, UtilitySpec, WealthLaw};
use olg_core::stats;

fn gammas() -> impl Strategy<Value = f64> {
    prop_oneof![Just(1.0), Just(2.0), 0.3f64..6.0]
}

fn small_problem(n_paths: usize, seed: u64) -> LifecycleProblem {
    let u = UtilitySpec::crra(2.0).unwrap();
    LifecycleProblem {
        prefs: Preferences { u1: u, u2: u, disc: DiscountSpec::new(0.02, 100.0).unwrap() },
        income: IncomeModel::gbm(0.01, 0.1, IncomeLaw::Point(1.0)).unwrap(),
        wealth_law: WealthLaw::Uniform(0.0, 2.0),
        grid: TimeGrid::new(0.0, 5.0, 50).unwrap(),
        n_paths,
        seed,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn utility_is_concave_on_random_triples(g in gammas(), a in -1.0f64..50.0, b in -1.0f64..50.0, s in 0.0f64..1.0) {
        let u = UtilitySpec::crra(g).unwrap();
        let (x, y) = (a.min(b), a.max(b));
        prop_assume!(y - x > 1e-9);
        let z = x + s * (y - x);
        let chord = (1.0 - s) * u.value(x) + s * u.value(y);
        prop_assert!(u.value(z) >= chord - 1e-9 * (1.0 + chord.abs()));
        prop_assert!(u.marginal(x) >= u.marginal(y));
        prop_assert!(u.curvature(z) < 0.0);
    }

    #[test]
    fn inverse_marginal_undoes_the_marginal(g in gammas(), log_x in (1e-3f64).ln()..(1e6f64).ln()) {
        let u = UtilitySpec::crra(g).unwrap();
        let x = log_x.exp().clamp(u.eps(), u.c_max());
        let back = u.inverse_marginal(u.marginal(x));
        prop_assert!((back - x).abs() <= 1e-8 * x.max(1.0), "x {x} back {back}");
    }

    #[test]
    fn consumption_never_exceeds_kappa(g in gammas(), log_y in -40.0f64..40.0) {
        let u = UtilitySpec::crra(g).unwrap();
        let c = u.inverse_marginal(log_y.exp());
        prop_assert!((0.0..=u.kappa()).contains(&c));
        prop_assert!(u.inverse_marginal(0.0) <= u.kappa());
    }

    #[test]
    fn rate_integral_is_additive(vals in prop::collection::vec(-0.2f64..0.2, 11), a in 0.0f64..10.0, b in 0.0f64..10.0, c in 0.0f64..10.0) {
        let r = RatePath::new(TimeGrid::new(0.0, 10.0, 10).unwrap(), vals).unwrap();
        let whole = r.integral(a, c);
        let split = r.integral(a, b) + r.integral(b, c);
        prop_assert!((whole - split).abs() <= 1e-12);
        prop_assert!(r.integral(a, a).abs() <= 1e-15);
    }

    #[test]
    fn regression_reproduces_polynomials(coef in prop::collection::vec(-3.0f64..3.0, 6), seed in 0u64..1000) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..200).map(|_| rng.gen_range(-5.0..20.0)).collect();
        let eta: Vec<f64> = (0..200).map(|_| rng.gen_range(0.2..3.0)).collect();
        let y: Vec<f64> = w.iter().zip(&eta).map(|(&w, &e)| {
            coef[0] + coef[1] * w + coef[2] * e + coef[3] * w * w + coef[4] * w * e + coef[5] * e * e
        }).collect();
        let design = Design::new(&RegressionSpec { degree: 2, wealth: true, income: true }, &w, &eta);
        let fitted = design.fitted(&design.fit(&y));
        let scale = y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (f, t) in fitted.iter().zip(&y) {
            prop_assert!((f - t).abs() <= 1e-8 * scale);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn theta_map_consumption_respects_the_bound(seed in 0u64..10_000, scale in 0.5f64..50.0) {
        let p = small_problem(200, seed);
        let mut e = p.simulate(0).unwrap();
        // an arbitrary wealth iterate, including negative terminal values
        let w: Vec<f64> = e.wealth().iter().enumerate().map(|(k, _)| scale * ((k as f64 * 0.37).sin())).collect();
        let c0 = e.consumption().to_vec();
        e.set_trajectories(w, c0);
        let rate = RatePath::constant(p.grid, 0.03);
        let (c, next) = theta_map_apply(&p.prefs, &rate, &e, &RegressionSpec::default(), RegressionTarget::Scaled);
        let kappa = p.prefs.u1.kappa();
        prop_assert!(c.iter().all(|&x| (0.0..=kappa).contains(&x)));
        prop_assert!(next.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn closed_form_beats_smooth_perturbations(amp in 0.01f64..0.1, sign in prop::bool::ANY, k in 1usize..4, phase in 0.0f64..std::f64::consts::TAU) {
        let grid = TimeGrid::new(0.0, 60.0, 6000).unwrap();
        let rate = RatePath::constant(grid, 0.03);
        let disc = DiscountSpec::new(0.02, 100.0).unwrap();
        let u = UtilitySpec::crra(2.0).unwrap();
        let best = solve_deterministic_crra(1.0, 1.0, 0.01, &rate, disc, 2.0, &grid).unwrap();
        let evaluate = |cons: Vec<f64>| {
            let wealth = wealth_by_variation_of_constants(&rate, &grid, 1.0, &best.income, &cons);
            let mut s = best.clone();
            s.terminal_wealth = *wealth.last().unwrap();
            s.consumption = cons;
            s.wealth = wealth;
            deterministic_payoff(&s, disc, &u, &u)
        };
        let base = evaluate(best.consumption.clone());
        let a = if sign { amp } else { -amp };
        let bumped: Vec<f64> = grid.nodes().iter().zip(&best.consumption)
            .map(|(&t, &c)| c * (1.0 + a * (k as f64 * std::f64::consts::PI * t / 60.0 + phase).sin()))
            .collect();
        prop_assert!(evaluate(bumped) < base);
    }
}

#[test]
fn closed_form_refinement_is_first_order() {
    let rate_at = |g: TimeGrid| RatePath::constant(g, 0.03);
    let disc = DiscountSpec::new(0.02, 100.0).unwrap();
    let terminal = |steps| {
        let g = TimeGrid::new(0.0, 60.0, steps).unwrap();
        let s = solve_deterministic_crra(1.0, 1.0, 0.01, &rate_at(g), disc, 2.0, &g).unwrap();
        *s.wealth.last().unwrap()
    };
    let (coarse, mid, fine) = (terminal(600), terminal(1200), terminal(2400));
    let (e1, e2) = ((coarse - mid).abs(), (mid - fine).abs());
    assert!(e1 < 1e-2 * fine.abs().max(1.0), "coarse gap {e1}");
    // successive differences shrink at least as fast as dt
    assert!(e2 <= 0.6 * e1 + 1e-12, "gaps {e1} then {e2}");
}

#[test]
fn gbm_mean_matches_within_four_standard_errors() {
    let grid = TimeGrid::new(0.0, 10.0, 100).unwrap();
    let model = IncomeModel::gbm(0.02, 0.2, IncomeLaw::Point(1.0)).unwrap();
    let e = PathEnsemble::simulate(grid, &model, WealthLaw::Point(0.0), 20_000, 7, 0).unwrap();
    for j in [10, 50, 100] {
        let (m, se) = stats::mean_stderr(e.income_at(j));
        let exact = (0.02 * grid.node(j)).exp();
        assert!((m - exact).abs() <= 4.0 * se, "node {j}: {m} vs {exact} (se {se})");
    }
}

#[test]
fn solutions_are_identical_across_thread_counts() {
    let p = small_problem(300, 11);
    let rate = RatePath::constant(p.grid, 0.03);
    let opts = PicardOptions { max_iter: 30, ..PicardOptions::default() };
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| p.solve(&rate, 3, &opts).unwrap())
    };
    let (one, many) = (run(1), run(8));
    assert_eq!(one.residuals, many.residuals);
    assert_eq!(one.ensemble.wealth(), many.ensemble.wealth());
    assert_eq!(one.ensemble.consumption(), many.ensemble.consumption());
}

#[test]
fn picard_residuals_settle_after_the_first_iterations() {
    let p = small_problem(500, 5);
    let rate = RatePath::constant(p.grid, 0.03);
    let sol = p.solve(&rate, 0, &PicardOptions::default()).unwrap();
    assert!(sol.converged, "residuals {:?}", sol.residuals);
    let tail = &sol.residuals[3.min(sol.residuals.len())..];
    for w in tail.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-9), "residuals {:?}", sol.residuals);
    }
}
