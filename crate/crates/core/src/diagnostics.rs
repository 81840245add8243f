//! Quantities from the convergence analysis and checks of its inequalities
//! against realized runs.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::engine::DiffusionDraw;
use crate::error::{CboError, Result};
use crate::model::{init_ensemble, theta, CboParams, Ensemble, InitSpec};
use crate::rng::{Lane, SeedSpec};

/// Absolute slack on inequalities that hold exactly in real arithmetic.
pub const STEP_TOLERANCE: f64 = 1e-10;

/// `max_i y_i - min_i y_i`.
pub fn diameter(y: &[f64]) -> f64 {
    let (lo, hi) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if y.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// Ergodicity coefficient `min_{i,l} sum_j min(M_ij, M_lj)`.
pub fn ergodicity(m: &Array2<f64>) -> f64 {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "ergodicity coefficient needs a square matrix");
    let mut best = f64::INFINITY;
    for i in 0..n {
        let ri = m.row(i);
        for l in i..n {
            let rl = m.row(l);
            let overlap: f64 = ri.iter().zip(rl).map(|(a, b)| a.min(*b)).sum();
            best = best.min(overlap);
        }
    }
    best
}

/// `V = (1/N) sum_i ||x^i - x*||^2`.
pub fn mean_squared_distance(ensemble: &Ensemble, x_star: &[f64]) -> f64 {
    assert_eq!(ensemble.dim(), x_star.len(), "reference point has wrong dimension");
    let total: f64 = ensemble
        .positions()
        .rows()
        .into_iter()
        .map(|row| row.iter().zip(x_star).map(|(x, s)| (x - s) * (x - s)).sum::<f64>())
        .sum();
    total / ensemble.n_particles() as f64
}

/// Per-component check of one realized step against the diameter
/// contraction, the ergodicity lower bound and the noisy/exact consensus
/// gap bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepBoundReport {
    pub diam_before: Vec<f64>,
    pub diam_after: Vec<f64>,
    pub erg: Vec<f64>,
    pub eta_max: Vec<f64>,
    pub contraction_ok: Vec<bool>,
    pub erg_bound_ok: Vec<bool>,
    pub consensus_gap: Vec<f64>,
    pub gap_bound_ok: Vec<bool>,
}

impl StepBoundReport {
    pub fn all_ok(&self) -> bool {
        self.contraction_ok.iter().chain(&self.erg_bound_ok).chain(&self.gap_bound_ok).all(|&b| b)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn step_bound_monitor(
    before: &Ensemble,
    after: &Ensemble,
    matrices: &[Array2<f64>],
    draw: &DiffusionDraw,
    gamma: f64,
    exact_cp: &[f64],
    noisy_cp: &[f64],
    alpha: f64,
    err_inf: f64,
) -> Result<StepBoundReport> {
    let (n, d) = (before.n_particles(), before.dim());
    if after.n_particles() != n || after.dim() != d {
        return Err(CboError::Shape("before/after ensembles differ in shape".into()));
    }
    if after.iteration() != before.iteration() + 1 {
        return Err(CboError::Shape(format!(
            "ensembles are not consecutive: iterations {} and {}",
            before.iteration(),
            after.iteration()
        )));
    }
    if matrices.len() != d || matrices.iter().any(|m| m.dim() != (n, n)) {
        return Err(CboError::Shape(format!("need {d} transition matrices of size {n}x{n}")));
    }
    if draw.eta.dim() != (n, d) || exact_cp.len() != d || noisy_cp.len() != d {
        return Err(CboError::Shape("diffusion draw or consensus points have the wrong shape".into()));
    }

    let mut report = StepBoundReport {
        diam_before: Vec::with_capacity(d),
        diam_after: Vec::with_capacity(d),
        erg: Vec::with_capacity(d),
        eta_max: Vec::with_capacity(d),
        contraction_ok: Vec::with_capacity(d),
        erg_bound_ok: Vec::with_capacity(d),
        consensus_gap: Vec::with_capacity(d),
        gap_bound_ok: Vec::with_capacity(d),
    };
    for s in 0..d {
        let db = diameter(&before.component(s));
        let da = diameter(&after.component(s));
        let erg = ergodicity(&matrices[s]);
        let eta_max = draw.max_abs(s);
        let gap = (exact_cp[s] - noisy_cp[s]).abs();
        report.contraction_ok.push(da <= (1.0 - erg) * db + STEP_TOLERANCE);
        report.erg_bound_ok.push(erg >= gamma - 4.0 * eta_max - STEP_TOLERANCE);
        report.gap_bound_ok.push(gap <= alpha * err_inf * db + STEP_TOLERANCE);
        report.diam_before.push(db);
        report.diam_after.push(da);
        report.erg.push(erg);
        report.eta_max.push(eta_max);
        report.consensus_gap.push(gap);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MaxMomentReport {
    pub empirical_first: f64,
    pub empirical_second: f64,
    pub bound_first: f64,
    pub bound_second: f64,
    /// Standard errors of the two Monte Carlo means.
    pub stderr_first: f64,
    pub stderr_second: f64,
}

impl MaxMomentReport {
    pub fn holds(&self) -> bool {
        self.empirical_first <= self.bound_first && self.empirical_second <= self.bound_second
    }
}

/// Monte Carlo estimate of `E[max_i |eta_i|]` and `E[max_i eta_i^2]` for `N`
/// i.i.d. `N(0, xi^2)` variables, next to the bounds `2 xi sqrt(ln(sqrt2 N))`
/// and `4 xi^2 ln(sqrt2 N)`. Trial `t` reads stream `(run, t, 0, MonteCarlo)`.
pub fn gaussian_max_moment_check(n: usize, xi: f64, trials: usize, seed: SeedSpec) -> MaxMomentReport {
    let log_term = (std::f64::consts::SQRT_2 * n as f64).ln();
    let bound_first = 2.0 * xi * log_term.sqrt();
    let bound_second = 4.0 * xi * xi * log_term;
    let (s1, s1sq, s2, s2sq) = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed.at(t as u64, 0, Lane::MonteCarlo).rng();
            let m = (0..n).map(|_| (xi * rng.sample::<f64, _>(StandardNormal)).abs()).fold(0.0, f64::max);
            (m, m * m, m * m, m.powi(4))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0.0, 0.0, 0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2, a.3 + b.3));
    let t = trials.max(1) as f64;
    let (m1, m2) = (s1 / t, s2 / t);
    let se = |mean: f64, sq: f64| ((sq / t - mean * mean).max(0.0) / t).sqrt();
    MaxMomentReport {
        empirical_first: m1,
        empirical_second: m2,
        bound_first,
        bound_second,
        stderr_first: se(m1, s1sq),
        stderr_second: se(m2, s2sq),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MvMode {
    /// Any oracle satisfying the variance growth condition.
    Generic,
    /// Gaussian absolute/relative noise.
    Gaussian,
}

/// Bound `M_v` on `E[||E_k||_inf^2]^{1/2}`.
pub fn mv_bound(t0: f64, t1: f64, mf: f64, n: usize, mode: MvMode) -> f64 {
    let level = (t0 + t1 * mf * mf).sqrt();
    match mode {
        MvMode::Generic => (n as f64).sqrt() * level,
        MvMode::Gaussian => 2.0 * level * (std::f64::consts::SQRT_2 * n as f64).ln().sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LaplaceCase {
    /// At least one particle inside the ball `B_r`.
    Occupied,
    /// No particle inside the ball.
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LaplaceReport {
    pub case: LaplaceCase,
    pub ball_count: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

/// Parameters of the local growth condition
/// `(f(x) - f*)^nu >= beta ||x - x*||` and of the ball `B_r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct LaplaceParams {
    pub alpha: f64,
    pub beta: f64,
    pub nu: f64,
    pub q: f64,
    /// `max_{B_r} f`.
    pub f_r: f64,
    pub r: f64,
}

/// Compares `||x^alpha - x*||`, with `x^alpha` built from exact values, to
/// the quantitative Laplace bound for the ensemble's ball occupancy.
pub fn laplace_gap_bound(ensemble: &Ensemble, fvals_exact: &[f64], x_star: &[f64], p: &LaplaceParams) -> Result<LaplaceReport> {
    if !(p.beta > 0.0) {
        return Err(CboError::InvalidParams(format!("beta must be positive, got {}", p.beta)));
    }
    if !(p.nu > 0.0 && p.q > 0.0 && p.r > 0.0) {
        return Err(CboError::InvalidParams("nu, q and r must be positive".into()));
    }
    let n = ensemble.n_particles();
    if fvals_exact.len() != n || x_star.len() != ensemble.dim() {
        return Err(CboError::Shape("values or reference point have the wrong length".into()));
    }
    let cp = crate::engine::consensus_point(ensemble.positions(), fvals_exact, p.alpha)?;
    let dist = |x: &[f64]| x.iter().zip(x_star).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let lhs = dist(&cp.point);
    let distances: Vec<f64> = ensemble.positions().rows().into_iter().map(|r| dist(r.as_slice().unwrap())).collect();
    let total: f64 = distances.iter().sum();
    let ball_count = distances.iter().filter(|&&r| r <= p.r).count();
    let inner = (p.q + p.f_r).powf(p.nu) / p.beta;
    let (case, tail) = if ball_count > 0 {
        (LaplaceCase::Occupied, (-p.alpha * p.q).exp() / ball_count as f64 * total)
    } else {
        let fmax = fvals_exact.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (LaplaceCase::Empty, (p.alpha * (fmax - p.q)).exp() * total / n as f64)
    };
    let rhs = inner + tail;
    Ok(LaplaceReport { case, ball_count, lhs, rhs, satisfied: lhs <= rhs })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComplexitySchedule {
    pub mu: f64,
    pub sigma_hat: f64,
    pub k_star: u64,
    pub theta: f64,
}

/// Iterations `ceil(log_{1/mu}(V0 / eps))` after which the mean squared
/// distance is below `eps`; zero when `V0 <= eps`.
pub fn k_star(mu: f64, v0: f64, eps: f64) -> u64 {
    let k = ((v0 / eps).ln() / (1.0 / mu).ln()).ceil();
    if k > 0.0 {
        k as u64
    } else {
        0
    }
}

pub fn complexity_schedule(eps: f64, tau: f64, gamma: f64, xi: f64, v0: f64, n: usize) -> Result<ComplexitySchedule> {
    if !(eps > 0.0) {
        return Err(CboError::InvalidParams(format!("eps must be positive, got {eps}")));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(CboError::InvalidParams(format!("tau must lie in (0, 1), got {tau}")));
    }
    let g2 = gamma * gamma + xi * xi;
    let gap = 1.0 - (1.0 - gamma).powi(2) - xi * xi;
    if !(gap > 0.0) {
        return Err(CboError::InvalidParams(format!("contraction gap 1 - (1-gamma)^2 - xi^2 = {gap} is not positive")));
    }
    let mu = 1.0 - (1.0 - tau) * gap;
    let sigma_hat = (tau / 4.0 * gap / (g2 + g2.sqrt())).min((tau / 2.0 * gap / g2).sqrt());
    Ok(ComplexitySchedule { mu, sigma_hat, k_star: k_star(mu, v0, eps), theta: theta(gamma, xi, n) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct TheoryInputs {
    /// Hessian norm bound.
    pub mh: f64,
    /// Gradient bound along the consensus trajectory.
    pub mg: f64,
    pub gamma: f64,
    pub xi: f64,
    pub alpha: f64,
    pub mv: f64,
    pub d0: f64,
    pub f_star: f64,
    /// `E[exp(-alpha f(x_0))]`.
    pub e_exp_f0: f64,
    pub eps_margin: f64,
    pub n_particles: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoryReport {
    pub gamma_a: f64,
    pub gamma_b: f64,
    pub theta: f64,
    /// Right-hand side of the initial-distribution condition; `None` when
    /// `theta >= 1`.
    pub rhs: Option<f64>,
    pub lhs: f64,
    pub condition_holds: Option<bool>,
}

pub fn theory_constants(inp: &TheoryInputs) -> TheoryReport {
    let g2 = inp.gamma * inp.gamma + inp.xi * inp.xi;
    let gamma_a = inp.mh * (1.0 + (1.0 - inp.gamma).powi(2) + inp.xi * inp.xi).sqrt() * g2.sqrt() * inp.d0;
    let gamma_b = inp.mg * (inp.gamma * inp.alpha * inp.mv + inp.xi) * inp.d0.sqrt();
    let th = theta(inp.gamma, inp.xi, inp.n_particles);
    let lhs = (1.0 - inp.eps_margin) * inp.e_exp_f0;
    let rhs = (th < 1.0).then(|| {
        let scale = inp.alpha * (-inp.alpha * inp.f_star).exp();
        let term = |g: f64, c: f64| if g == 0.0 { 0.0 } else { scale * g / (1.0 - (-c * (1.0 - th)).exp()) };
        term(gamma_a, 2.0) + term(gamma_b, 1.0)
    });
    TheoryReport { gamma_a, gamma_b, theta: th, rhs, lhs, condition_holds: rhs.map(|r| lhs >= r) }
}

/// Monte Carlo estimate of `D0 = sum_s E[diam(y^s_0)^2]` over `samples`
/// initial ensembles (runs `0..samples`).
pub fn estimate_d0(init: &InitSpec, params: &CboParams, master_seed: u64, samples: usize) -> Result<f64> {
    let values: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|r| {
            let seed = SeedSpec::new(master_seed, crate::rng::StreamId::new(r as u64, 0, 0, Lane::Init));
            let e = init_ensemble(init, params, seed)?;
            Ok((0..e.dim()).map(|s| diameter(&e.component(s)).powi(2)).sum::<f64>())
        })
        .collect::<Result<_>>()?;
    Ok(values.iter().sum::<f64>() / samples.max(1) as f64)
}

/// Right-hand side of the one-step recursion for `E[V_{k+1}]` given
/// `E[V_k]` and `E[||xhat_k - x*||^2]`.
pub fn v_recursion_rhs(gamma: f64, xi: f64, mean_v: f64, mean_cp_sq: f64) -> f64 {
    let g2 = gamma * gamma + xi * xi;
    (1.0 - 2.0 * gamma + g2) * mean_v + g2 * mean_cp_sq + 2.0 * (g2 + g2.sqrt()) * mean_v.sqrt() * mean_cp_sq.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NoiseMode;
    use crate::rng::StreamId;
    use ndarray::array;
    use rand::SeedableRng;

    #[test]
    fn diameter_examples() {
        assert_eq!(diameter(&[1.0, 3.0, 2.0]), 2.0);
        assert_eq!(diameter(&[4.5; 6]), 0.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let y: Vec<f64> = (0..50).map(|_| rng.random_range(-10.0..10.0)).collect();
        let mut brute: f64 = 0.0;
        for a in &y {
            for b in &y {
                brute = brute.max((a - b).abs());
            }
        }
        assert_eq!(diameter(&y), brute);
    }

    fn ergodicity_brute(m: &Array2<f64>) -> f64 {
        let n = m.nrows();
        let mut best = f64::INFINITY;
        for i in 0..n {
            for l in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += if m[[i, j]] < m[[l, j]] { m[[i, j]] } else { m[[l, j]] };
                }
                best = best.min(acc);
            }
        }
        best
    }

    #[test]
    fn ergodicity_examples() {
        assert_eq!(ergodicity(&Array2::eye(2)), 0.0);
        assert_eq!(ergodicity(&array![[0.2, 0.3, 0.5], [0.2, 0.3, 0.5], [0.2, 0.3, 0.5]]), 1.0);
        assert_eq!(ergodicity(&array![[0.5, 0.5], [0.25, 0.75]]), 0.75);
    }

    #[test]
    fn ergodicity_matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for n in [1, 2, 5, 17, 32] {
            let m = Array2::from_shape_fn((n, n), |_| rng.random_range(-0.5..1.0));
            assert!((ergodicity(&m) - ergodicity_brute(&m)).abs() <= 1e-12);
        }
    }

    #[test]
    fn msd_examples() {
        let e = Ensemble::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0]], 0).unwrap();
        assert_eq!(mean_squared_distance(&e, &[1.0, 2.0]), 0.0);
        let e = Ensemble::from_rows(&[vec![3.0]], 0).unwrap();
        assert_eq!(mean_squared_distance(&e, &[1.0]), 4.0);
        let rows: Vec<Vec<f64>> = (0..9).map(|i| vec![i as f64 * 0.5 - 2.0, (i % 4) as f64]).collect();
        let e = Ensemble::from_rows(&rows, 0).unwrap();
        let xs = [0.25, -1.0];
        let mut naive = 0.0;
        for r in &rows {
            for s in 0..2 {
                naive += (r[s] - xs[s]) * (r[s] - xs[s]);
            }
        }
        naive /= 9.0;
        assert!((mean_squared_distance(&e, &xs) - naive).abs() <= 1e-14 * naive);
    }

    #[test]
    fn max_moment_examples() {
        let seed = SeedSpec::new(5, StreamId::new(0, 0, 0, Lane::MonteCarlo));
        let r = gaussian_max_moment_check(1, 1.0, 100_000, seed);
        assert!((r.bound_second - 1.386_294_361_119_890_6).abs() < 1e-12);
        assert!((r.empirical_second - 1.0).abs() < 0.02);
        assert!(r.holds());

        let r = gaussian_max_moment_check(7, 0.0, 100, seed);
        assert_eq!((r.empirical_first, r.empirical_second, r.bound_first, r.bound_second), (0.0, 0.0, 0.0, 0.0));

        let r = gaussian_max_moment_check(100, 1.0, 100_000, seed);
        assert!((r.bound_second - 19.806_975_105_072_256).abs() < 1e-9, "{}", r.bound_second);
        assert!(r.holds());
    }

    #[test]
    fn mv_bound_examples() {
        assert_eq!(mv_bound(0.0, 0.0, 5.0, 10, MvMode::Generic), 0.0);
        assert_eq!(mv_bound(0.0, 0.0, 5.0, 10, MvMode::Gaussian), 0.0);
        assert_eq!(mv_bound(1.0, 0.0, 3.0, 4, MvMode::Generic), 2.0);
        assert!((mv_bound(1.0, 0.0, 3.0, 100, MvMode::Gaussian) - 4.450_502_792_390_12).abs() < 1e-12);
    }

    #[test]
    fn complexity_examples() {
        let c = complexity_schedule(1e-3, 0.5, 0.1, 0.0056, 1.0, 100).unwrap();
        assert!((c.mu - 0.905_015_68).abs() < 1e-12, "{}", c.mu);
        assert!(c.mu > 0.0 && c.mu < 1.0);
        assert_eq!(k_star(0.9, 1.0, 0.01), 44);
        assert_eq!(k_star(0.9, 0.01, 0.01), 0);
        let c = complexity_schedule(2.0, 0.5, 0.1, 0.0056, 2.0, 100).unwrap();
        assert_eq!(c.k_star, 0);
        assert!(complexity_schedule(1e-3, 0.5, 0.1, 2.0, 1.0, 100).is_err());
        assert!(complexity_schedule(1e-3, 1.0, 0.1, 0.0, 1.0, 100).is_err());
    }

    fn inputs() -> TheoryInputs {
        TheoryInputs {
            mh: 1.0,
            mg: 1.0,
            gamma: 1.0,
            xi: 0.0,
            alpha: 1.0,
            mv: 1.0,
            d0: 1.0,
            f_star: 0.0,
            e_exp_f0: 0.5,
            eps_margin: 0.1,
            n_particles: 10,
        }
    }

    #[test]
    fn theory_constant_examples() {
        let r = theory_constants(&inputs());
        assert!((r.gamma_a - 1.0).abs() < 1e-15);
        assert!((r.gamma_b - 1.0).abs() < 1e-15);
        assert_eq!(r.theta, 0.0);

        let r = theory_constants(&TheoryInputs { mh: 0.0, mv: 0.0, ..inputs() });
        assert_eq!((r.gamma_a, r.gamma_b), (0.0, 0.0));
        assert_eq!(r.rhs, Some(0.0));
        assert_eq!(r.condition_holds, Some(true));

        let r = theory_constants(&TheoryInputs { gamma: 0.01, xi: 0.1, ..inputs() });
        assert!(r.theta >= 1.0);
        assert_eq!(r.rhs, None);
    }

    #[test]
    fn laplace_branches() {
        let p = LaplaceParams { alpha: 5.0, beta: 1.0, nu: 0.5, q: 0.1, f_r: 0.2, r: 0.1 };
        let e = Ensemble::from_rows(&[vec![0.0]], 0).unwrap();
        let rep = laplace_gap_bound(&e, &[0.0], &[0.0], &p).unwrap();
        assert_eq!(rep.lhs, 0.0);
        assert!(rep.satisfied);
        assert_eq!(rep.case, LaplaceCase::Occupied);

        let e = Ensemble::from_rows(&[vec![1.0], vec![-2.0]], 0).unwrap();
        let rep = laplace_gap_bound(&e, &[1.0, 4.0], &[0.0], &p).unwrap();
        assert_eq!(rep.case, LaplaceCase::Empty);
        assert_eq!(rep.ball_count, 0);

        assert!(laplace_gap_bound(&e, &[1.0, 4.0], &[0.0], &LaplaceParams { beta: 0.0, ..p }).is_err());
    }

    #[test]
    fn d0_of_unit_interval() {
        // E[(max - min)^2] for 2 uniforms on [0,1] is 1/6
        let params = CboParams {
            gamma: 0.1,
            xi: 0.0,
            alpha: 1.0,
            n_particles: 2,
            dim: 1,
            noise_mode: NoiseMode::PerParticle,
            max_iter: 0,
            consensus_tol: 0.0,
        };
        let d0 = estimate_d0(&InitSpec::uniform_cube(0.0, 1.0, 1), &params, 3, 200_000).unwrap();
        assert!((d0 - 1.0 / 6.0).abs() < 3e-3, "{d0}");
    }
}
