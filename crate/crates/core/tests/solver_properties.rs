use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stik_core::linalg::{rel_diff, DenseMatrix};
use stik_core::linops::{LinearOperator, RowBlockView};
use stik_core::problems::{gen_test_problem, NoiseSpec, ProblemName, TestProblemSpec};
use stik_core::sampling::{SamplePlan, Strategy};
use stik_core::solvers::{
    block_views, run, run_with_observer, stacked_tikhonov, tikhonov_direct, InverseProblem, LsqrOptions, Method,
    RunConfig, Selector, SolverState,
};

const STRATEGIES: [Strategy; 3] = [Strategy::Cyclic, Strategy::RandomCyclic, Strategy::RandomReplacement];

fn random_problem(m: usize, n: usize, seed: u64) -> InverseProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DenseMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let b = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    InverseProblem::standard(Arc::new(a), b).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn stik_iterates_solve_stacked_problems(
        seed in 0u64..10_000,
        nb_idx in 0usize..3,
        strat in 0usize..3,
        incs in prop::collection::vec(0.01f64..1.0, 12),
    ) {
        let p = random_problem(30, 8, seed);
        let nb = [2, 5, 10][nb_idx];
        let plan = SamplePlan::contiguous(30, nb).unwrap();
        let views = block_views(&p, &plan).unwrap();
        let mut schedule = plan.schedule(STRATEGIES[strat], seed);
        let mut state = SolverState::new(Method::Stik, &p, None, LsqrOptions::default()).unwrap();
        let mut seen: Vec<&RowBlockView> = Vec::new();
        for (k, inc) in incs.iter().enumerate() {
            let tau = schedule.next_block(k + 1);
            state.stik_step(&views[tau], &views[tau].select(&p.b), *inc).unwrap();
            seen.push(&views[tau]);
            let oracle = stacked_tikhonov(&p, &seen, state.lambda_cum(), None).unwrap();
            prop_assert!(rel_diff(state.x(), &oracle) < 1e-8);

            let h = state.hessian().unwrap();
            prop_assert!(h.max_abs_asymmetry() < 1e-12);
            prop_assert!(state.factor_error().unwrap() < 1e-10);
            prop_assert!(state.lambda_cum() > 0.0);
        }
    }

    #[test]
    fn rrls_iterates_solve_stacked_problems(
        seed in 0u64..10_000,
        nb_idx in 0usize..3,
        strat in 0usize..3,
        lambda in 0.01f64..5.0,
    ) {
        let p = random_problem(30, 8, seed);
        let nb = [2, 5, 10][nb_idx];
        let plan = SamplePlan::contiguous(30, nb).unwrap();
        let views = block_views(&p, &plan).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let y0: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut schedule = plan.schedule(STRATEGIES[strat], seed);
        let mut state = SolverState::new(Method::Rrls { lambda }, &p, Some(y0.clone()), LsqrOptions::default()).unwrap();
        let mut seen: Vec<&RowBlockView> = Vec::new();
        for k in 1..=2 * nb {
            let tau = schedule.next_block(k);
            state.rrls_step(&views[tau], &views[tau].select(&p.b)).unwrap();
            seen.push(&views[tau]);
            let oracle = stacked_tikhonov(&p, &seen, lambda, Some(&y0)).unwrap();
            prop_assert!(rel_diff(state.x(), &oracle) < 1e-8);
            prop_assert!(state.hessian().unwrap().max_abs_asymmetry() < 1e-12);
            prop_assert!(state.factor_error().unwrap() < 1e-10);
        }
    }

    #[test]
    fn epoch_parameter_bookkeeping_is_exact(
        seed in 0u64..1000,
        incs in prop::collection::vec(0.001f64..0.5, 1..4),
    ) {
        let p = random_problem(20, 4, seed);
        let plan = SamplePlan::contiguous(20, 5).unwrap();
        let inc = incs[0];
        let cfg = RunConfig::new(Method::Stik, incs.len(), Strategy::RandomCyclic, Selector::Fixed { increment: inc });
        let out = run(&p, &plan, &cfg).unwrap();
        for rec in out.records.iter().filter(|r| r.k % 5 == 0) {
            let j = (rec.k / 5) as f64;
            prop_assert_eq!(rec.lambda_eff, rec.lambda_cum / j);
        }
    }
}

#[test]
fn first_epoch_is_independent_of_block_order() {
    let p = random_problem(40, 6, 3);
    let plan = SamplePlan::contiguous(40, 8).unwrap();
    let reference = {
        let cfg = RunConfig::new(Method::Stik, 1, Strategy::Cyclic, Selector::Fixed { increment: 0.05 });
        run(&p, &plan, &cfg).unwrap().x
    };
    for seed in 0..5 {
        let mut cfg = RunConfig::new(Method::Stik, 1, Strategy::RandomCyclic, Selector::Fixed { increment: 0.05 });
        cfg.seed = seed;
        let x = run(&p, &plan, &cfg).unwrap().x;
        assert!(rel_diff(&x, &reference) < 1e-10, "seed {seed}");
    }
}

#[test]
fn single_block_rrls_is_one_tikhonov_solve() {
    let p = random_problem(12, 4, 9);
    let plan = SamplePlan::contiguous(12, 1).unwrap();
    let cfg = RunConfig::new(Method::Rrls { lambda: 0.3 }, 1, Strategy::Cyclic, Selector::Fixed { increment: 0.0 });
    let out = run(&p, &plan, &cfg).unwrap();
    assert!(rel_diff(&out.x, &tikhonov_direct(&p, 0.3).unwrap()) < 1e-12);
}

#[test]
fn constant_increments_recover_tikhonov_on_gravity() {
    let p = gen_test_problem(&TestProblemSpec {
        name: ProblemName::Gravity,
        n: 100,
        noise: NoiseSpec::Level(0.01),
        seed: 1,
    })
    .unwrap();
    let plan = SamplePlan::contiguous(100, 10).unwrap();
    let lambda = 0.0196;
    let cfg = RunConfig::new(Method::Stik, 1, Strategy::Cyclic, Selector::Fixed { increment: lambda / 10.0 });
    let out = run(&p, &plan, &cfg).unwrap();
    assert!(rel_diff(&out.x, &tikhonov_direct(&p, lambda).unwrap()) < 1e-8);
}

#[test]
fn rrls_epochs_trend_to_least_squares_on_toy() {
    let (a, _, b) = stik_core::problems::toy2d(0);
    let p = InverseProblem::standard(Arc::new(a), b).unwrap();
    let plan = SamplePlan::contiguous(10, 10).unwrap();
    let mut cfg = RunConfig::new(Method::Rrls { lambda: 0.2 }, 50, Strategy::RandomCyclic, Selector::Fixed { increment: 0.0 });
    cfg.seed = 4;
    let x_ls = tikhonov_direct(&p, 0.0).unwrap();
    let mut dist = Vec::new();
    run_with_observer(&p, &plan, &cfg, |rec, y| {
        if rec.k % 10 == 0 {
            let j = (rec.k / 10) as f64;
            let oracle = tikhonov_direct(&p, 0.2 / j).unwrap();
            assert!(rel_diff(y, &oracle) < 1e-8, "epoch {j}");
            dist.push(rel_diff(y, &x_ls));
        }
    })
    .unwrap();
    assert!(dist.windows(2).all(|w| w[1] <= w[0]));
    assert!(dist.last().unwrap() < &dist[0]);
}

#[test]
fn limited_variants_never_build_a_dense_curvature() {
    let p = random_problem(20, 5, 2);
    for m in [Method::Sg, Method::Sbk, Method::SlimTik { memory: 3 }] {
        let state = SolverState::new(m, &p, None, LsqrOptions::default()).unwrap();
        assert_ne!(state.curvature_kind(), "full");
        assert!(state.hessian().is_none());
    }
}

#[test]
fn memory_buffer_keeps_most_recent_blocks() {
    let p = random_problem(24, 4, 5);
    let plan = SamplePlan::contiguous(24, 6).unwrap();
    let views = block_views(&p, &plan).unwrap();
    let mut state = SolverState::new(Method::SlimTik { memory: 2 }, &p, None, LsqrOptions::default()).unwrap();
    for (k, v) in views.iter().enumerate() {
        let held: Vec<usize> = state.memory().unwrap().map(|b| b.rows()[0]).collect();
        let expected: Vec<usize> = (k.saturating_sub(2)..k).map(|i| views[i].rows()[0]).collect();
        assert_eq!(held, expected, "before step {}", k + 1);
        state.variant_step(v, &v.select(&p.b), 0.01).unwrap();
    }
}

#[test]
fn sg_without_regularization_is_a_gradient_step() {
    let p = random_problem(10, 3, 6);
    let plan = SamplePlan::contiguous(10, 2).unwrap();
    let views = block_views(&p, &plan).unwrap();
    let x0 = vec![0.3, -0.2, 0.1];
    let mut state = SolverState::new(Method::Sg, &p, Some(x0.clone()), LsqrOptions::default()).unwrap();
    let bb = views[1].select(&p.b);
    state.variant_step(&views[1], &bb, 0.0).unwrap();
    let r: Vec<f64> = views[1].apply(&x0).unwrap().iter().zip(&bb).map(|(a, b)| a - b).collect();
    let g = views[1].apply_adjoint(&r).unwrap();
    let expected: Vec<f64> = x0.iter().zip(&g).map(|(x, g)| x - g).collect();
    assert!(rel_diff(state.x(), &expected) < 1e-12);
}
