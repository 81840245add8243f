//! Property suite behind `cbo check`: randomized and Monte Carlo checks of
//! the update rule, the per-step bounds and the statistical decay rates.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::diagnostics::{
    complexity_schedule, diameter, ergodicity, gaussian_max_moment_check, k_star, laplace_gap_bound, mean_squared_distance,
    step_bound_monitor, v_recursion_rhs, LaplaceParams,
};
use crate::engine::{consensus_point, sample_diffusion, step, transition_matrix, Solver};
use crate::error::Result;
use crate::harness::cost;
use crate::model::{init_ensemble, theta, CboParams, Ensemble, InitSpec, NoiseMode};
use crate::objectives::{finite_sum_loss, rastrigin, Objective};
use crate::oracle::{subset_size, NoiseSpec, OracleSpec, Problem, SubsampleSpec};
use crate::rng::{Lane, SeedSpec, StreamId};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.into(), passed, detail }
    }
}

/// Sample sizes of the suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scale {
    pub matrix_steps: usize,
    pub bound_steps: usize,
    pub moment_trials: usize,
    pub decay_runs: usize,
    pub recursion_runs: usize,
    pub laplace_trials: usize,
}

impl Scale {
    pub const QUICK: Scale = Scale {
        matrix_steps: 200,
        bound_steps: 2_000,
        moment_trials: 20_000,
        decay_runs: 200,
        recursion_runs: 500,
        laplace_trials: 1_000,
    };
    pub const FULL: Scale = Scale {
        matrix_steps: 1_000,
        bound_steps: 10_000,
        moment_trials: 100_000,
        decay_runs: 200,
        recursion_runs: 1_000,
        laplace_trials: 1_000,
    };
}

fn seed(master: u64, run: u64, lane: Lane) -> SeedSpec {
    SeedSpec::new(master, StreamId::new(run, 0, 0, lane))
}

fn random_params(rng: &mut impl Rng, gammas: &[f64], xis: &[f64]) -> CboParams {
    CboParams {
        gamma: gammas[rng.random_range(0..gammas.len())],
        xi: xis[rng.random_range(0..xis.len())],
        alpha: [0.1, 1.0, 10.0, 100.0][rng.random_range(0..4)],
        n_particles: rng.random_range(1..=16),
        dim: rng.random_range(1..=4),
        noise_mode: if rng.random_bool(0.5) { NoiseMode::PerParticle } else { NoiseMode::Shared },
        max_iter: 0,
        consensus_tol: 0.0,
    }
}

/// Largest deviations `(|M y - step|, |row sum - 1|)` over `steps`
/// randomized steps with gamma in {0.1, 0.5, 1} and xi in {0, 0.05, 0.1}.
pub fn matrix_equivalence(steps: usize, master: u64) -> Result<(f64, f64)> {
    let per = (0..steps)
        .into_par_iter()
        .map(|t| {
            let sd = seed(master, t as u64, Lane::MonteCarlo);
            let mut rng = sd.rng();
            let p = random_params(&mut rng, &[0.1, 0.5, 1.0], &[0.0, 0.05, 0.1]);
            let e = init_ensemble(&InitSpec::uniform_cube(-5.0, 5.0, p.dim), &p, sd)?;
            let f: Vec<f64> = e.rows().iter().map(|x| rastrigin(x) + rng.random_range(-1.0..1.0)).collect();
            let cp = consensus_point(e.positions(), &f, p.alpha)?;
            let draw = sample_diffusion(&p, sd);
            let next = step(&e, &cp, p.gamma, &draw)?;
            let (mut dev, mut row_dev) = (0.0_f64, 0.0_f64);
            for s in 0..p.dim {
                let m = transition_matrix(&cp.weights, p.gamma, &draw, s);
                for row in m.rows() {
                    row_dev = row_dev.max((row.sum() - 1.0).abs());
                }
                let my = m.dot(&Array1::from(e.component(s)));
                for (a, b) in my.iter().zip(next.positions().column(s)) {
                    dev = dev.max((a - b).abs());
                }
            }
            Ok((dev, row_dev))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per.into_iter().fold((0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1))))
}

/// Counts of realized steps violating the contraction, ergodicity and
/// consensus-gap bounds, next to the number of steps checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BoundViolations {
    pub steps: usize,
    pub contraction: usize,
    pub ergodicity: usize,
    pub consensus_gap: usize,
}

/// Runs noisy Rastrigin trajectories (N <= 16, d <= 4, gamma in {0.1, 0.5},
/// xi in {0, 0.05}) and monitors every realized step.
pub fn step_bounds(steps: usize, master: u64) -> Result<BoundViolations> {
    const LEN: usize = 20;
    let trajectories = steps.div_ceil(LEN);
    let per = (0..trajectories)
        .into_par_iter()
        .map(|t| {
            let sd = seed(master, t as u64, Lane::MonteCarlo);
            let mut rng = sd.rng();
            let p = random_params(&mut rng, &[0.1, 0.5], &[0.0, 0.05]);
            let noise = NoiseSpec::new(rng.random_range(0.0..0.5), rng.random_range(0.0..0.2));
            let problem = Problem::new(Objective::Rastrigin, OracleSpec::Gaussian(noise))?;
            let mut solver = Solver::new(p.clone(), problem, &InitSpec::uniform_cube(-3.0, 3.0, p.dim), sd, true)?;
            let mut c = BoundViolations { steps: 0, contraction: 0, ergodicity: 0, consensus_gap: 0 };
            let len = LEN.min(steps - t * LEN);
            for _ in 0..len {
                let before = solver.ensemble().clone();
                let trace = solver.advance()?;
                let exact = trace.evaluation.exact.as_ref().expect("exact values tracked");
                let exact_cp = consensus_point(before.positions(), exact, p.alpha)?;
                let matrices: Vec<Array2<f64>> =
                    (0..p.dim).map(|s| transition_matrix(&trace.consensus.weights, p.gamma, &trace.draw, s)).collect();
                let err = trace.evaluation.err_inf().expect("exact values tracked");
                let rep = step_bound_monitor(
                    &before,
                    solver.ensemble(),
                    &matrices,
                    &trace.draw,
                    p.gamma,
                    &exact_cp.point,
                    &trace.consensus.point,
                    p.alpha,
                    err,
                )?;
                c.steps += 1;
                c.contraction += usize::from(!rep.contraction_ok.iter().all(|&b| b));
                c.ergodicity += usize::from(!rep.erg_bound_ok.iter().all(|&b| b));
                c.consensus_gap += usize::from(!rep.gap_bound_ok.iter().all(|&b| b));
            }
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per.into_iter().fold(BoundViolations { steps: 0, contraction: 0, ergodicity: 0, consensus_gap: 0 }, |a, b| {
        BoundViolations {
            steps: a.steps + b.steps,
            contraction: a.contraction + b.contraction,
            ergodicity: a.ergodicity + b.ergodicity,
            consensus_gap: a.consensus_gap + b.consensus_gap,
        }
    }))
}

/// Largest gap between `ergodicity` and an explicit triple loop over
/// `trials` random matrices with `N <= 32`.
pub fn ergodicity_brute_force(trials: usize, master: u64) -> f64 {
    (0..trials)
        .map(|t| {
            let mut rng = seed(master, t as u64, Lane::MonteCarlo).rng();
            let n = rng.random_range(1..=32);
            let m: Array2<f64> = Array2::from_shape_fn((n, n), |_| rng.random_range(-0.2..1.0));
            let mut brute = f64::INFINITY;
            for i in 0..n {
                for l in 0..n {
                    brute = brute.min((0..n).map(|j| m[[i, j]].min(m[[l, j]])).sum::<f64>());
                }
            }
            (ergodicity(&m) - brute).abs()
        })
        .fold(0.0, f64::max)
}

/// `(N, xi, report)` for every cell of N in {1, 10, 100} and xi in
/// {0.0056, 0.1, 1}.
pub fn max_moment_grid(trials: usize, master: u64) -> Vec<(usize, f64, crate::diagnostics::MaxMomentReport)> {
    let mut out = Vec::new();
    for (a, &n) in [1usize, 10, 100].iter().enumerate() {
        for (b, &xi) in [0.0056, 0.1, 1.0].iter().enumerate() {
            let sd = seed(master, (3 * a + b) as u64, Lane::MonteCarlo);
            out.push((n, xi, gaussian_max_moment_check(n, xi, trials, sd)));
        }
    }
    out
}

/// Largest `|mean over all k-subsets - f(x)|` over random datasets with
/// `M <= 6` and every subset size.
pub fn subsample_unbiasedness(trials: usize, master: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let mut rng = seed(master, t as u64, Lane::MonteCarlo).rng();
        let m = rng.random_range(1..=6);
        let d = rng.random_range(1..=3);
        let feats = Array2::from_shape_fn((m, d), |_| rng.random_range(-2.0..2.0));
        let labels = (0..m).map(|_| u8::from(rng.random_bool(0.5))).collect();
        let ds = Dataset::new(feats, labels, "enum")?;
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let full = finite_sum_loss(&x, &ds, None)?;
        for k in 1..=m {
            let (mut total, mut count) = (0.0, 0usize);
            for mask in 0u32..(1 << m) {
                if mask.count_ones() as usize == k {
                    let subset: Vec<usize> = (0..m).filter(|j| mask >> j & 1 == 1).collect();
                    total += finite_sum_loss(&x, &ds, Some(&subset))?;
                    count += 1;
                }
            }
            worst = worst.max((total / count as f64 - full).abs());
        }
    }
    Ok(worst)
}

/// Runs subsampled trajectories and returns the number of runs whose
/// component count differs from `iterations N ceil(ell M)`.
pub fn ledger_mismatches(runs: usize, master: u64) -> Result<usize> {
    let mut bad = 0;
    for r in 0..runs {
        let sd = seed(master, r as u64, Lane::MonteCarlo);
        let mut rng = sd.rng();
        let (m, d) = (rng.random_range(1..=40), rng.random_range(1..=3));
        let ell = [0.1, 0.25, 0.5, 1.0][r % 4];
        let feats = Array2::from_shape_fn((m, d), |_| rng.random_range(-1.0..1.0));
        let labels = (0..m).map(|_| u8::from(rng.random_bool(0.5))).collect();
        let ds = Arc::new(Dataset::new(feats, labels, "ledger")?);
        let p = CboParams {
            gamma: 0.1,
            xi: 0.05,
            alpha: 10.0,
            n_particles: rng.random_range(1..=10),
            dim: d,
            noise_mode: NoiseMode::PerParticle,
            max_iter: rng.random_range(0..=15),
            consensus_tol: 0.0,
        };
        let problem = Problem::new(Objective::FiniteSum(ds), OracleSpec::Subsample(SubsampleSpec::new(ell)))?;
        let rec = crate::engine::run(&p, &problem, &InitSpec::uniform_cube(-1.0, 1.0, d), sd, &Default::default())?;
        let expected = (rec.iterations * p.n_particles * subset_size(ell, m)) as u64;
        bad += usize::from(rec.ledger.component_evals != expected);
    }
    Ok(bad)
}

/// Empirical mean diameters and the reference `theta^k mean diam_0` at a
/// checkpoint, summed over components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayPoint {
    pub k: usize,
    pub mean_diam: f64,
    pub bound: f64,
}

/// Mean diameter of `runs` Rastrigin trajectories at each checkpoint versus
/// `theta^k` times the mean initial diameter.
pub fn diameter_decay(params: &CboParams, init: &InitSpec, runs: usize, checkpoints: &[usize], master: u64) -> Result<Vec<DecayPoint>> {
    let horizon = checkpoints.iter().copied().max().unwrap_or(0);
    let problem = Problem::new(Objective::Rastrigin, OracleSpec::Exact)?;
    let traces = (0..runs)
        .into_par_iter()
        .map(|r| {
            let mut solver = Solver::new(params.clone(), problem.clone(), init, seed(master, r as u64, Lane::Init), false)?;
            let diam = |e: &Ensemble| (0..e.dim()).map(|s| diameter(&e.component(s))).sum::<f64>();
            let mut out = vec![diam(solver.ensemble())];
            for _ in 0..horizon {
                solver.advance()?;
                out.push(diam(solver.ensemble()));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_at = |k: usize| traces.iter().map(|t| t[k]).sum::<f64>() / runs as f64;
    let th = params.theta();
    let d0 = mean_at(0);
    Ok(checkpoints.iter().map(|&k| DecayPoint { k, mean_diam: mean_at(k), bound: th.powi(k as i32) * d0 }).collect())
}

/// Empirical `E[V_{k+1}]`, its standard error and the one-step recursion
/// bound evaluated with empirical means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecursionPoint {
    pub k: usize,
    pub mean_next: f64,
    pub stderr_next: f64,
    pub rhs: f64,
}

pub fn v_recursion(params: &CboParams, init: &InitSpec, oracle: OracleSpec, runs: usize, checkpoints: &[usize], master: u64) -> Result<Vec<RecursionPoint>> {
    let horizon = checkpoints.iter().copied().max().unwrap_or(0) + 1;
    let problem = Problem::new(Objective::Rastrigin, oracle)?;
    let x_star = vec![0.0; params.dim];
    let traces = (0..runs)
        .into_par_iter()
        .map(|r| {
            let mut solver = Solver::new(params.clone(), problem.clone(), init, seed(master, r as u64, Lane::Init), false)?;
            let mut v = Vec::with_capacity(horizon + 1);
            let mut cp = Vec::with_capacity(horizon);
            for _ in 0..horizon {
                v.push(mean_squared_distance(solver.ensemble(), &x_star));
                let trace = solver.advance()?;
                cp.push(trace.consensus.point.iter().map(|c| c * c).sum::<f64>());
            }
            v.push(mean_squared_distance(solver.ensemble(), &x_star));
            Ok((v, cp))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = runs as f64;
    Ok(checkpoints
        .iter()
        .map(|&k| {
            let mean_v = traces.iter().map(|t| t.0[k]).sum::<f64>() / n;
            let mean_cp = traces.iter().map(|t| t.1[k]).sum::<f64>() / n;
            let next: Vec<f64> = traces.iter().map(|t| t.0[k + 1]).collect();
            let mean_next = next.iter().sum::<f64>() / n;
            let var = next.iter().map(|v| (v - mean_next).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            RecursionPoint { k, mean_next, stderr_next: (var / n).sqrt(), rhs: v_recursion_rhs(params.gamma, params.xi, mean_v, mean_cp) }
        })
        .collect())
}

/// Checks the quantitative Laplace bound on random d = 1 Rastrigin
/// ensembles. The growth condition uses `nu = 1/2` with `beta` fitted on a
/// grid of `B_{R0}`, `R0 = 1/2`; `f_inf` is the grid minimum of `f` on
/// `R0 <= |x| <= 5`, `f_r` the grid maximum on `B_r`, and `q` is drawn with
/// `q + f_r <= f_inf`. Returns `(violations, empty ball cases)`.
pub fn laplace_trials(trials: usize, master: u64) -> Result<(usize, usize)> {
    let (r, r0, nu) = (0.02, 0.5, 0.5);
    let grid = |lo: f64, hi: f64| (0..=1000).map(move |i| lo + (hi - lo) * i as f64 / 1000.0);
    let f = |x: f64| rastrigin(&[x]);
    let f_r = grid(-r, r).map(f).fold(0.0, f64::max);
    let f_inf = grid(r0, 5.0).map(f).fold(f64::INFINITY, f64::min);
    let beta = 0.99 * grid(-r0, r0).filter(|x| x.abs() > 0.0).map(|x| f(x).powf(nu) / x.abs()).fold(f64::INFINITY, f64::min);
    let mut bad = 0;
    let mut empty = 0;
    for t in 0..trials {
        let sd = seed(master, t as u64, Lane::MonteCarlo);
        let mut rng = sd.rng();
        let n = rng.random_range(1..=20);
        let width = [0.03, 0.5, 3.0][t % 3];
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-width..width)]).collect();
        let e = Ensemble::from_rows(&rows, 0)?;
        let f: Vec<f64> = rows.iter().map(|x| rastrigin(x)).collect();
        let p = LaplaceParams {
            alpha: [1.0, 10.0, 100.0, 1000.0][rng.random_range(0..4)],
            beta,
            nu,
            q: rng.random_range(0.01..f_inf - f_r),
            f_r,
            r,
        };
        let rep = laplace_gap_bound(&e, &f, &[0.0], &p)?;
        bad += usize::from(!rep.satisfied);
        empty += usize::from(rep.ball_count == 0);
    }
    Ok((bad, empty))
}

fn rastrigin_params(n: usize) -> CboParams {
    CboParams {
        gamma: 0.1,
        xi: 0.0056,
        alpha: 1e4,
        n_particles: n,
        dim: 1,
        noise_mode: NoiseMode::PerParticle,
        max_iter: 100,
        consensus_tol: 0.0,
    }
}

/// Runs every check at the given scale.
pub fn run_suite(scale: Scale, master: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();

    let (dev, row) = matrix_equivalence(scale.matrix_steps, master)?;
    out.push(CheckOutcome::new(
        "matrix form matches particle update",
        dev <= 1e-12 && row <= 1e-12,
        format!("{} steps, max |My - step| = {dev:.2e}, max |row sum - 1| = {row:.2e}", scale.matrix_steps),
    ));

    let c = step_bounds(scale.bound_steps, master)?;
    out.push(CheckOutcome::new(
        "per-step diameter, ergodicity and consensus-gap bounds",
        c.contraction == 0 && c.ergodicity == 0 && c.consensus_gap == 0,
        format!(
            "{} steps, violations: contraction {}, ergodicity {}, gap {}",
            c.steps, c.contraction, c.ergodicity, c.consensus_gap
        ),
    ));

    let gap = ergodicity_brute_force(200, master);
    out.push(CheckOutcome::new("ergodicity matches brute force", gap <= 1e-12, format!("max deviation {gap:.2e}")));

    let grid = max_moment_grid(scale.moment_trials, master);
    let failing = grid.iter().filter(|(_, _, r)| !r.holds()).count();
    let worst = grid.iter().map(|(_, _, r)| r.empirical_second / r.bound_second).fold(0.0, f64::max);
    out.push(CheckOutcome::new(
        "Gaussian max-moment bounds",
        failing == 0,
        format!("{} trials per cell, {failing} failing cells, worst second-moment ratio {worst:.3}", scale.moment_trials),
    ));

    let unbiased = subsample_unbiasedness(200, master)?;
    let ledger = ledger_mismatches(40, master)?;
    out.push(CheckOutcome::new(
        "subsampling is unbiased and fully charged",
        unbiased <= 1e-14 && ledger == 0,
        format!("max enumeration gap {unbiased:.2e}, ledger mismatches {ledger}"),
    ));

    let p = rastrigin_params(100);
    let decay = diameter_decay(&p, &InitSpec::uniform_cube(-3.0, 3.0, 1), scale.decay_runs, &[10, 50, 100], master)?;
    out.push(CheckOutcome::new(
        "expected diameter decays at rate theta",
        decay.iter().all(|d| d.mean_diam <= d.bound),
        decay.iter().map(|d| format!("k={} {:.2e} <= {:.2e}", d.k, d.mean_diam, d.bound)).collect::<Vec<_>>().join(", "),
    ));

    let p = CboParams { alpha: 10.0, ..rastrigin_params(50) };
    let rec = v_recursion(
        &p,
        &InitSpec::uniform_cube(-3.0, 3.0, 1),
        OracleSpec::Gaussian(NoiseSpec::new(0.1, 0.0)),
        scale.recursion_runs,
        &[0, 5, 20],
        master,
    )?;
    out.push(CheckOutcome::new(
        "mean squared distance recursion",
        rec.iter().all(|r| r.mean_next <= r.rhs + 3.0 * r.stderr_next),
        rec.iter().map(|r| format!("k={} {:.3e} <= {:.3e}", r.k, r.mean_next, r.rhs)).collect::<Vec<_>>().join(", "),
    ));

    let (bad, empty) = laplace_trials(scale.laplace_trials, master)?;
    out.push(CheckOutcome::new(
        "quantitative Laplace bound",
        bad == 0,
        format!("{} ensembles ({empty} with an empty ball), {bad} violations", scale.laplace_trials),
    ));

    let th = theta(0.1, 0.0056, 100);
    let sched = complexity_schedule(1e-2, 0.5, 0.1, 0.0056, 1.0, 100)?;
    let k = k_star(0.9, 1.0, 0.01);
    out.push(CheckOutcome::new(
        "closed-form constants",
        th < 1.0 && (sched.mu - 0.90501568).abs() < 1e-12 && k == 44,
        format!("theta = {th:.10}, mu = {:.8}, k* = {k}", sched.mu),
    ));

    let c = cost(136.7, 7, 1.0, 2857);
    out.push(CheckOutcome::new(
        "cost model",
        (c - 2.736e6).abs() / 2.736e6 < 5e-4 && cost(1.0, 1, 1.0, 1) == 3.0,
        format!("cost(136.7, 7, 1, 2857) = {c:.6e}"),
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let scale = Scale {
            matrix_steps: 50,
            bound_steps: 200,
            moment_trials: 2_000,
            decay_runs: 200,
            recursion_runs: 300,
            laplace_trials: 100,
        };
        for c in run_suite(scale, 5).unwrap() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn laplace_trials_cover_both_cases() {
        let (bad, empty) = laplace_trials(300, 1).unwrap();
        assert_eq!(bad, 0);
        assert!(empty > 0 && empty < 300);
    }
}
