//! Consensus-based particle dynamics.
//!
//! One iteration evaluates the oracle at every particle with fresh
//! randomness, forms the Gibbs-weighted consensus point from the noisy
//! values, draws the component-wise diffusion multipliers and moves every
//! particle by `(gamma + eta^i_s) (xhat_s - x^i_s)` in each coordinate.
//!
//! All reductions (weight normalisation, consensus sums, stopping metric)
//! run sequentially in particle order, so results never depend on thread
//! count.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::diagnostics::{diameter, mean_squared_distance};
use crate::error::{CboError, Result};
use crate::model::{init_ensemble, CboParams, Ensemble, InitSpec, NoiseMode};
use crate::oracle::{error_inf_norm, oracle_error, Problem};
use crate::rng::{Lane, SeedSpec, SHARED_PARTICLE};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsensusPoint {
    pub point: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Gibbs weights `exp(-alpha (f_i - min f))`, normalised, and the weighted
/// mean of the particle positions. Shifting by the minimum is exact algebra
/// and keeps the largest weight at 1 before normalisation.
pub fn consensus_point(positions: &Array2<f64>, fhat: &[f64], alpha: f64) -> Result<ConsensusPoint> {
    let n = positions.nrows();
    if n == 0 {
        return Err(CboError::Shape("consensus point of an empty ensemble".into()));
    }
    if fhat.len() != n {
        return Err(CboError::Shape(format!("{} values for {n} particles", fhat.len())));
    }
    if let Some(i) = fhat.iter().position(|v| !v.is_finite()) {
        return Err(CboError::NonFinite(format!("oracle value of particle {i} is {}", fhat[i])));
    }
    let fmin = fhat.iter().copied().fold(f64::INFINITY, f64::min);
    let mut weights: Vec<f64> = fhat.iter().map(|&f| (-alpha * (f - fmin)).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);

    let mut point = vec![0.0; positions.ncols()];
    for (row, &w) in positions.rows().into_iter().zip(&weights) {
        for (p, &x) in point.iter_mut().zip(row) {
            *p += w * x;
        }
    }
    Ok(ConsensusPoint { point, weights })
}

/// Diffusion multipliers `eta^i_{k,s}`, one row per particle.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionDraw {
    pub eta: Array2<f64>,
    pub mode: NoiseMode,
}

impl DiffusionDraw {
    pub fn zeros(n: usize, d: usize, mode: NoiseMode) -> Self {
        Self { eta: Array2::zeros((n, d)), mode }
    }

    /// `max_i |eta^i_s|`.
    pub fn max_abs(&self, s: usize) -> f64 {
        self.eta.column(s).iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Draws `N(0, xi^2)` multipliers for the iteration addressed by `seed`.
/// Per-particle mode reads stream `(run, i, k, Diffusion)` for particle `i`;
/// shared mode reads one stream and copies it into every row.
pub fn sample_diffusion(params: &CboParams, seed: SeedSpec) -> DiffusionDraw {
    let (n, d) = (params.n_particles, params.dim);
    let mut draw = DiffusionDraw::zeros(n, d, params.noise_mode);
    if params.xi == 0.0 {
        return draw;
    }
    let k = seed.stream.iteration;
    match params.noise_mode {
        NoiseMode::PerParticle => {
            for (i, mut row) in draw.eta.rows_mut().into_iter().enumerate() {
                let mut rng = seed.at(i as u64, k, Lane::Diffusion).rng();
                for v in row.iter_mut() {
                    *v = params.xi * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        NoiseMode::Shared => {
            let mut rng = seed.at(SHARED_PARTICLE, k, Lane::Diffusion).rng();
            let shared: Vec<f64> = (0..d).map(|_| params.xi * rng.sample::<f64, _>(StandardNormal)).collect();
            for mut row in draw.eta.rows_mut() {
                row.iter_mut().zip(&shared).for_each(|(v, s)| *v = *s);
            }
        }
    }
    draw
}

/// `x^i_s <- x^i_s + (gamma + eta^i_s)(xhat_s - x^i_s)`.
pub fn step(ensemble: &Ensemble, cp: &ConsensusPoint, gamma: f64, draw: &DiffusionDraw) -> Result<Ensemble> {
    let (n, d) = (ensemble.n_particles(), ensemble.dim());
    if cp.point.len() != d || draw.eta.dim() != (n, d) {
        return Err(CboError::Shape(format!(
            "ensemble {n}x{d}, consensus length {}, diffusion {:?}",
            cp.point.len(),
            draw.eta.dim()
        )));
    }
    let mut next = ensemble.positions().clone();
    for (mut row, eta) in next.rows_mut().into_iter().zip(draw.eta.rows()) {
        for s in 0..d {
            let x = row[s];
            row[s] = x + (gamma + eta[s]) * (cp.point[s] - x);
        }
    }
    Ok(Ensemble::from_parts_unchecked(next, ensemble.iteration() + 1))
}

/// Matrix `M^s_k` of the component update `y^s_{k+1} = M^s_k y^s_k`:
/// diagonal `1 - gamma - eta_i + (gamma + eta_i) v_i`, off-diagonal
/// `(gamma + eta_i) v_j`.
pub fn transition_matrix(weights: &[f64], gamma: f64, draw: &DiffusionDraw, s: usize) -> Array2<f64> {
    let n = weights.len();
    let eta = draw.eta.column(s);
    Array2::from_shape_fn((n, n), |(i, j)| {
        let g = gamma + eta[i];
        let off = g * weights[j];
        if i == j {
            1.0 - g + off
        } else {
            off
        }
    })
}

/// Mean Euclidean distance of the particles to their plain average.
pub fn stopping_metric(ensemble: &Ensemble) -> f64 {
    let pos = ensemble.positions();
    let n = pos.nrows() as f64;
    let mut avg = vec![0.0; pos.ncols()];
    for row in pos.rows() {
        avg.iter_mut().zip(row).for_each(|(a, x)| *a += x);
    }
    avg.iter_mut().for_each(|a| *a /= n);
    let total: f64 = pos
        .rows()
        .into_iter()
        .map(|row| row.iter().zip(&avg).map(|(x, a)| (x - a) * (x - a)).sum::<f64>().sqrt())
        .sum();
    total / n
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxIter,
    ConsensusTol,
}

/// Oracle work charged to a run. `cost` follows `k d (evals_per_call + 2)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Ledger {
    pub iterations: usize,
    pub oracle_calls: u64,
    pub component_evals: u64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsRow {
    pub iter: usize,
    pub stopping_metric: f64,
    pub diam: Vec<f64>,
    pub v_k: Option<f64>,
    pub cost_so_far: f64,
    pub err_inf: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub final_ensemble: Ensemble,
    pub final_consensus: ConsensusPoint,
    pub iterations: usize,
    pub termination: Termination,
    pub ledger: Ledger,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Vec<DiagnosticsRow>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    /// Record a [`DiagnosticsRow`] per iteration.
    pub diagnostics: bool,
    /// Also evaluate the exact objective at every particle. Doubles oracle
    /// work for subsampled objectives; never charged to the ledger.
    pub track_exact: bool,
    /// Reference minimizer for `V_k`.
    pub x_star: Option<Vec<f64>>,
}

/// Oracle values at the current ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub fhat: Vec<f64>,
    pub exact: Option<Vec<f64>>,
    pub component_evals: u64,
}

impl Evaluation {
    /// `||E_k||_inf`, when exact values were tracked.
    pub fn err_inf(&self) -> Option<f64> {
        let exact = self.exact.as_ref()?;
        let errs: Vec<f64> = exact.iter().zip(&self.fhat).map(|(&f, &g)| oracle_error(f, g)).collect();
        Some(error_inf_norm(&errs))
    }
}

/// Everything one iteration consumed, for inspection by checks.
#[derive(Debug, Clone)]
pub struct IterationTrace {
    pub evaluation: Evaluation,
    pub consensus: ConsensusPoint,
    pub draw: DiffusionDraw,
}

/// Stepwise driver for a single run.
#[derive(Debug, Clone)]
pub struct Solver {
    params: CboParams,
    problem: Problem,
    seed: SeedSpec,
    track_exact: bool,
    ensemble: Ensemble,
    ledger: Ledger,
}

impl Solver {
    /// Validates the configuration and draws the initial ensemble. The run
    /// index is taken from `seed.stream.run`.
    pub fn new(params: CboParams, problem: Problem, init: &InitSpec, seed: SeedSpec, track_exact: bool) -> Result<Self> {
        params.ensure_valid()?;
        problem.objective.check_dim(params.dim)?;
        let ensemble = init_ensemble(init, &params, seed)?;
        Ok(Self { params, problem, seed, track_exact, ensemble, ledger: Ledger::default() })
    }

    /// Starts from a given ensemble instead of drawing one.
    pub fn from_ensemble(params: CboParams, problem: Problem, ensemble: Ensemble, seed: SeedSpec, track_exact: bool) -> Result<Self> {
        params.ensure_valid()?;
        problem.objective.check_dim(params.dim)?;
        if ensemble.n_particles() != params.n_particles || ensemble.dim() != params.dim {
            return Err(CboError::Shape("ensemble does not match n_particles x dim".into()));
        }
        Ok(Self { params, problem, seed, track_exact, ensemble, ledger: Ledger::default() })
    }

    pub fn params(&self) -> &CboParams {
        &self.params
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn ensemble(&self) -> &Ensemble {
        &self.ensemble
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn iteration(&self) -> usize {
        self.ensemble.iteration()
    }

    pub fn cost_per_iteration(&self) -> f64 {
        self.params.dim as f64 * (self.problem.evals_per_call() as f64 + 2.0)
    }

    /// Oracle values at every particle; particle `i` at iteration `k` reads
    /// stream `(run, i, k, Oracle)`.
    pub fn evaluate(&self) -> Result<Evaluation> {
        let k = self.iteration() as u64;
        let n = self.params.n_particles;
        let mut fhat = Vec::with_capacity(n);
        let mut exact = self.track_exact.then(|| Vec::with_capacity(n));
        let mut component_evals = 0;
        for (i, row) in self.ensemble.positions().rows().into_iter().enumerate() {
            let x = row.as_slice().expect("standard layout");
            let rec = self.problem.evaluate(x, self.seed.at(i as u64, k, Lane::Oracle), self.track_exact)?;
            if !rec.value.is_finite() {
                return Err(CboError::Diverged { iteration: self.iteration() });
            }
            fhat.push(rec.value);
            component_evals += rec.component_evals;
            if let (Some(ex), Some(v)) = (exact.as_mut(), rec.exact_value) {
                ex.push(v);
            }
        }
        Ok(Evaluation { fhat, exact, component_evals })
    }

    pub fn consensus(&self, evaluation: &Evaluation) -> Result<ConsensusPoint> {
        consensus_point(self.ensemble.positions(), &evaluation.fhat, self.params.alpha)
    }

    /// Moves the ensemble given this iteration's oracle values and consensus
    /// point, and charges the ledger.
    pub fn apply(&mut self, evaluation: Evaluation, consensus: ConsensusPoint) -> Result<IterationTrace> {
        let k = self.iteration() as u64;
        let draw = sample_diffusion(&self.params, self.seed.at(0, k, Lane::Diffusion));
        let next = step(&self.ensemble, &consensus, self.params.gamma, &draw)?;
        if next.positions().iter().any(|v| !v.is_finite()) {
            return Err(CboError::Diverged { iteration: next.iteration() });
        }
        self.ensemble = next;
        self.ledger.iterations += 1;
        self.ledger.oracle_calls += self.params.n_particles as u64;
        self.ledger.component_evals += evaluation.component_evals;
        self.ledger.cost = self.ledger.iterations as f64 * self.cost_per_iteration();
        Ok(IterationTrace { evaluation, consensus, draw })
    }

    /// One full iteration regardless of stopping rules.
    pub fn advance(&mut self) -> Result<IterationTrace> {
        let evaluation = self.evaluate()?;
        let consensus = self.consensus(&evaluation)?;
        self.apply(evaluation, consensus)
    }

    /// Iterates until `max_iter` or the consensus tolerance is met. The
    /// final consensus point is evaluated at the terminal ensemble with that
    /// iteration's oracle streams and is not charged to the ledger.
    pub fn run(mut self, options: &RunOptions) -> Result<RunRecord> {
        let mut rows = options.diagnostics.then(Vec::new);
        let tol = self.params.consensus_tol;
        loop {
            let evaluation = self.evaluate()?;
            let consensus = self.consensus(&evaluation)?;
            let metric = (tol > 0.0 || rows.is_some()).then(|| stopping_metric(&self.ensemble));
            if let Some(rows) = rows.as_mut() {
                rows.push(DiagnosticsRow {
                    iter: self.iteration(),
                    stopping_metric: metric.unwrap_or_default(),
                    diam: (0..self.params.dim).map(|s| diameter(&self.ensemble.component(s))).collect(),
                    v_k: options.x_star.as_ref().map(|xs| mean_squared_distance(&self.ensemble, xs)),
                    cost_so_far: self.ledger.cost,
                    err_inf: evaluation.err_inf(),
                });
            }
            let termination = if tol > 0.0 && metric.is_some_and(|m| m <= tol) {
                Some(Termination::ConsensusTol)
            } else if self.iteration() >= self.params.max_iter {
                Some(Termination::MaxIter)
            } else {
                None
            };
            if let Some(termination) = termination {
                return Ok(RunRecord {
                    iterations: self.iteration(),
                    final_ensemble: self.ensemble,
                    final_consensus: consensus,
                    termination,
                    ledger: self.ledger,
                    diagnostics: rows,
                });
            }
            self.apply(evaluation, consensus)?;
        }
    }
}

/// Runs one seeded trajectory to completion.
pub fn run(
    params: &CboParams,
    problem: &Problem,
    init: &InitSpec,
    seed: SeedSpec,
    options: &RunOptions,
) -> Result<RunRecord> {
    Solver::new(params.clone(), problem.clone(), init, seed, options.track_exact)?.run(options)
}
