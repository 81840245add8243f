use std::sync::Arc;

use cbo_core::dataset::Dataset;
use cbo_core::diagnostics::{diameter, ergodicity};
use cbo_core::engine::{consensus_point, sample_diffusion, step, transition_matrix, Solver};
use cbo_core::harness::{percentile_summary, run_experiment, ExperimentConfig, Metric};
use cbo_core::oracle::subset_size;
use cbo_core::suite::v_recursion;
use cbo_core::*;
use ndarray::Array2;
use proptest::prelude::*;

fn params(n: usize, d: usize, gamma: f64, xi: f64, alpha: f64) -> CboParams {
    CboParams { gamma, xi, alpha, n_particles: n, dim: d, noise_mode: NoiseMode::PerParticle, max_iter: 0, consensus_tol: 0.0 }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn summary_ordering(values in prop::collection::vec(-1e6f64..1e6, 1..200)) {
        let s = percentile_summary(&values).unwrap();
        prop_assert!(s.min <= s.p50 && s.p50 <= s.p75 && s.p75 <= s.p90 && s.p90 <= s.max);
        prop_assert!(s.min <= s.mean + 1e-9 * s.mean.abs() && s.mean <= s.max + 1e-9 * s.max.abs());
    }

    #[test]
    fn step_contracts_without_diffusion(
        n in 1usize..12, d in 1usize..4, gamma in 0.01f64..1.0, alpha in 0.0f64..50.0, seed in any::<u64>()
    ) {
        let p = params(n, d, gamma, 0.0, alpha);
        let sd = SeedSpec::new(seed, StreamId::new(0, 0, 0, Lane::Init));
        let e = init_ensemble(&InitSpec::uniform_cube(-4.0, 4.0, d), &p, sd).unwrap();
        let f: Vec<f64> = e.rows().iter().map(|x| cbo_core::objectives::rastrigin(x)).collect();
        let cp = consensus_point(e.positions(), &f, alpha).unwrap();
        let draw = sample_diffusion(&p, sd);
        let next = step(&e, &cp, gamma, &draw).unwrap();
        for s in 0..d {
            let before = diameter(&e.component(s));
            let after = diameter(&next.component(s));
            prop_assert!(after <= (1.0 - gamma) * before + 1e-10);
            let m = transition_matrix(&cp.weights, gamma, &draw, s);
            prop_assert!(ergodicity(&m) >= gamma - 1e-10);
        }
    }

    #[test]
    fn consensus_inside_hull(rows in prop::collection::vec(prop::collection::vec(-50f64..50.0, 2), 1..20), alpha in 0.0f64..1e5) {
        let x = Array2::from_shape_vec((rows.len(), 2), rows.concat()).unwrap();
        let f: Vec<f64> = rows.iter().map(|r| r[0] * r[0] + r[1].abs()).collect();
        let cp = consensus_point(&x, &f, alpha).unwrap();
        for s in 0..2 {
            let col = x.column(s);
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(cp.point[s] >= lo - 1e-9 && cp.point[s] <= hi + 1e-9);
        }
        prop_assert!((cp.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

fn dataset(m: usize, d: usize) -> Arc<Dataset> {
    let ds = synthetic_dataset(m, d, 0.1, SeedSpec::new(5, StreamId::new(0, 0, 0, Lane::Synthetic))).unwrap();
    Arc::new(ds)
}

#[test]
fn subsampled_ledger_is_exact() {
    let ds = dataset(37, 3);
    for ell in [0.05, 0.3, 1.0] {
        let p = CboParams { max_iter: 25, ..params(9, 3, 0.1, 0.05, 100.0) };
        let problem = Problem::new(Objective::FiniteSum(ds.clone()), OracleSpec::Subsample(SubsampleSpec::new(ell))).unwrap();
        let rec = run(&p, &problem, &InitSpec::uniform_cube(-1.0, 1.0, 3), SeedSpec::new(1, StreamId::new(0, 0, 0, Lane::Init)), &RunOptions::default())
            .unwrap();
        assert_eq!(rec.ledger.component_evals, (25 * 9 * subset_size(ell, 37)) as u64);
        assert_eq!(rec.ledger.cost, 25.0 * 3.0 * (subset_size(ell, 37) as f64 + 2.0));
    }
}

#[test]
fn campaigns_are_deterministic_and_cost_consistent() {
    let ds = dataset(80, 2);
    let cfg = ExperimentConfig {
        params: CboParams { max_iter: 300, consensus_tol: 1e-3, ..params(30, 2, 0.1, 0.0056, 1e3) },
        init: InitSpec::uniform_cube(-10.0, 10.0, 2),
        objective: Objective::FiniteSum(ds.clone()),
        noise_sweep: vec![],
        ell_sweep: vec![1.0, 0.5, 0.1],
        alpha_sweep: vec![],
        runs: 8,
        metric: Metric::Accuracy(ds),
        master_seed: 3,
        best_alpha: false,
    };
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a, b);
    for r in &a.rows {
        let expected = r.mean_it * 2.0 * (subset_size(r.ell, 80) as f64 + 2.0);
        assert!((r.mean_cost - expected).abs() <= 1e-9 * expected);
        assert!((r.mean_evals - r.mean_it * 30.0 * subset_size(r.ell, 80) as f64 / 80.0).abs() < 1e-9 * r.mean_evals.max(1.0));
    }
}

#[test]
fn stepwise_solver_matches_run() {
    let p = CboParams { max_iter: 40, ..params(15, 2, 0.1, 0.05, 50.0) };
    let problem = Problem::new(Objective::RotatedRastrigin { angle: 0.4 }, OracleSpec::Gaussian(NoiseSpec::new(0.1, 0.1))).unwrap();
    let init = InitSpec::uniform_cube(-3.0, 3.0, 2);
    let seed = SeedSpec::new(8, StreamId::new(3, 0, 0, Lane::Init));
    let rec = run(&p, &problem, &init, seed, &RunOptions::default()).unwrap();
    let mut s = Solver::new(p, problem, &init, seed, false).unwrap();
    for _ in 0..40 {
        s.advance().unwrap();
    }
    assert_eq!(s.ensemble().positions(), rec.final_ensemble.positions());
}

#[test]
fn mean_squared_distance_recursion_holds_statistically() {
    let p = CboParams { max_iter: 0, ..params(50, 1, 0.1, 0.0056, 10.0) };
    let pts = v_recursion(&p, &InitSpec::uniform_cube(-3.0, 3.0, 1), OracleSpec::Gaussian(NoiseSpec::new(0.1, 0.0)), 500, &[0, 1, 10, 30], 77)
        .unwrap();
    for r in pts {
        assert!(r.mean_next <= r.rhs + 3.0 * r.stderr_next, "{r:?}");
    }
}
