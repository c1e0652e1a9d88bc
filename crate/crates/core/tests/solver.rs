use bsvrb::oracle::exact_hypergradient;
use bsvrb::problems::{make_quadratic, synthetic, HyperWeightMbbo, HyperWeightOptions};
use bsvrb::restart::{build_schedule, run_restarted, StageMultipliers, Variant};
use bsvrb::solver::{lazy_y_catchup, run, SolverState};
use bsvrb::{Algorithm, CountingOracle, HyperParams, ProblemOracle, RunOptions, Selection, V1, V2};
use nalgebra::DVector;
use proptest::prelude::*;

fn params() -> HyperParams {
    HyperParams {
        blocks_per_iter: 3,
        batch_size: 8,
        iterations: 200,
        eta: 0.05,
        beta: 0.05,
        alpha: 0.05,
        alpha_bar: 0.05,
        tau_t: 0.2,
        tau_bar_t: 0.2,
        seed: 11,
        ..HyperParams::default()
    }
}

fn same_x<A: Algorithm>(p: &dyn ProblemOracle, a: &HyperParams, b: &HyperParams) -> bool {
    let ra = run::<A>(p, a, &RunOptions::quiet(), None).unwrap();
    let rb = run::<A>(p, b, &RunOptions::quiet(), None).unwrap();
    ra.last.x() == rb.last.x() && ra.last.samples() == rb.last.samples()
}

#[test]
fn runs_are_reproducible() {
    let p = make_quadratic(8, 4, 3, 0.2, 1).unwrap();
    assert!(same_x::<V1>(&p, &params(), &params()));
    assert!(same_x::<V2>(&p, &params(), &params()));
    let other = HyperParams { seed: 12, ..params() };
    assert!(!same_x::<V2>(&p, &params(), &other));
}

#[test]
fn parallel_evaluation_changes_nothing() {
    let p = make_quadratic(8, 4, 3, 0.2, 2).unwrap();
    let par = HyperParams {
        parallel: true,
        ..params()
    };
    assert!(same_x::<V1>(&p, &params(), &par));
    assert!(same_x::<V2>(&p, &params(), &par));
}

#[test]
fn both_solvers_reduce_the_gradient() {
    let p = make_quadratic(10, 4, 3, 0.1, 3).unwrap();
    let prm = HyperParams {
        iterations: 3000,
        ..params()
    };
    let x0 = DVector::from_element(4, 1.0);
    let g0 = exact_hypergradient(&p, &x0).unwrap().norm();
    for g in [
        run::<V1>(&p, &prm, &RunOptions::quiet(), Some(&x0)).unwrap().last.x().clone(),
        run::<V2>(&p, &prm, &RunOptions::quiet(), Some(&x0)).unwrap().last.x().clone(),
    ] {
        let g = exact_hypergradient(&p, &g).unwrap().norm();
        assert!(g < 0.1 * g0, "{g} vs {g0}");
    }
}

#[test]
fn trace_rows_follow_the_schedule() {
    let p = make_quadratic(6, 3, 2, 0.1, 4).unwrap();
    let prm = HyperParams {
        iterations: 55,
        ..params()
    };
    let opts = RunOptions {
        eval_every: 10,
        wall_clock: false,
        ..RunOptions::default().with_diagnostics()
    };
    let out = run::<V2>(&p, &prm, &opts, None).unwrap();
    let iters: Vec<u64> = out.trace.rows().iter().map(|r| r.iter).collect();
    assert_eq!(iters, vec![0, 10, 20, 30, 40, 50, 55]);
    for r in out.trace.rows() {
        assert!(r.exact_grad_norm.is_some() && r.upper_loss.is_some());
        assert!(r.delta_y.unwrap() >= 0.0 && r.delta_tracker.unwrap() >= 0.0);
    }
    assert!(out.trace.rows().windows(2).all(|w| w[1].samples > w[0].samples));
}

#[test]
fn random_iterate_selection_is_seeded() {
    let p = make_quadratic(6, 3, 2, 0.1, 5).unwrap();
    let opts = RunOptions {
        selection: Selection::RandomIterate,
        ..RunOptions::quiet()
    };
    let a = run::<V1>(&p, &params(), &opts, None).unwrap();
    let b = run::<V1>(&p, &params(), &opts, None).unwrap();
    assert_eq!(a.selected_iter, b.selected_iter);
    assert!(a.selected_iter < params().iterations);
    assert_eq!(a.selected.x(), b.selected.x());
}

#[test]
fn hyperweight_runs_keep_invariants() {
    let data = synthetic(200, 6, 0.8, 0.5, 1).unwrap().with_split(0.6, 0.2, 1).unwrap();
    let p = CountingOracle::new(
        HyperWeightMbbo::new(
            &data,
            5,
            (1.0, 5.0),
            1,
            HyperWeightOptions {
                lambda_reg: 0.05,
                dense_hessian: false,
                ..Default::default()
            },
        )
        .unwrap(),
    );
    let l_g = p.constants().l_g;
    let prm = HyperParams {
        tau: 1.0 / l_g,
        tau_bar_t: 0.2 / l_g,
        iterations: 100,
        ..params()
    };
    let opts = RunOptions {
        check_invariants: true,
        ..RunOptions::quiet()
    };
    let out = run::<V2>(&p, &prm, &opts, None).unwrap();
    assert!(out.last.x().iter().all(|v| v.is_finite()));
    assert_eq!(p.dense_hessian_calls(), 0);
    assert!(run::<V1>(&p, &prm, &opts, None).is_err());
}

#[test]
fn restart_cold_and_warm_both_finish() {
    let p = make_quadratic(6, 3, 2, 0.1, 6).unwrap();
    let base = HyperParams {
        blocks_per_iter: 2,
        batch_size: 4,
        ..HyperParams::default()
    };
    let mult = StageMultipliers {
        max_stage_iterations: 200,
        ..StageMultipliers::default()
    };
    let probe = build_schedule(1.0, &base, 6, p.constants(), Variant::V2, &mult).unwrap();
    let sched = build_schedule(probe.epsilon_1 / 4.0, &base, 6, p.constants(), Variant::V2, &mult).unwrap();
    assert_eq!(sched.len(), 3);
    let opts = RunOptions {
        selection: Selection::RandomIterate,
        check_invariants: true,
        ..RunOptions::quiet()
    };
    for carry in [true, false] {
        let mut calls = vec![0u64; 3];
        let out = run_restarted::<V2>(&p, &sched, &opts, None, carry, &mut |k, _| {
            calls[k] += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(out.stages.len(), 3);
        let lens: Vec<u64> = sched.stages.iter().map(|s| s.params.iterations).collect();
        assert_eq!(calls, lens);
        assert!(out.stages.windows(2).all(|w| w[1].samples > w[0].samples));
    }
}

proptest! {
    #[test]
    fn catchup_equals_repeated_steps(
        y0 in prop::collection::vec(-2.0f64..2.0, 3),
        s in prop::collection::vec(-2.0f64..2.0, 3),
        k in 1u64..40,
        step in 0.001f64..0.5,
    ) {
        let s = DVector::from_vec(s);
        let mut y = DVector::from_vec(y0.clone());
        let mut y_prev = y.clone();
        lazy_y_catchup(&mut y, &mut y_prev, &s, k, step);
        let mut z = DVector::from_vec(y0);
        let mut z_prev = z.clone();
        for _ in 0..k {
            z_prev = z.clone();
            z -= &s * step;
        }
        prop_assert!((&y - &z).amax() < 1e-10);
        prop_assert!((&y_prev - &z_prev).amax() < 1e-10);
    }

    #[test]
    fn lazy_v1_matches_eager_for_any_seed(seed in 0u64..1000, i in 1usize..6) {
        let p = make_quadratic(6, 3, 2, 0.3, seed).unwrap();
        let lazy = HyperParams { blocks_per_iter: i, iterations: 40, seed, ..params() };
        let eager = HyperParams { lazy_y: false, ..lazy.clone() };
        let a = run::<V1>(&p, &lazy, &RunOptions::quiet(), None).unwrap();
        let b = run::<V1>(&p, &eager, &RunOptions::quiet(), None).unwrap();
        prop_assert!((a.last.x() - b.last.x()).amax() < 1e-12);
    }
}
