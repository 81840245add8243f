//! Ensemble state, algorithm parameters and initial laws.

use ndarray::Array2;
use rand::distr::Uniform;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{CboError, Result};
use crate::rng::{Lane, SeedSpec};

/// Particle positions at one iteration: row `i` is particle `i`, column `s`
/// is coordinate `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    positions: Array2<f64>,
    iteration: usize,
}

impl Ensemble {
    pub fn new(positions: Array2<f64>, iteration: usize) -> Result<Self> {
        if positions.nrows() == 0 || positions.ncols() == 0 {
            return Err(CboError::Shape("ensemble must have at least one particle and one dimension".into()));
        }
        if let Some(bad) = positions.iter().position(|v| !v.is_finite()) {
            return Err(CboError::NonFinite(format!(
                "ensemble entry ({}, {})",
                bad / positions.ncols(),
                bad % positions.ncols()
            )));
        }
        Ok(Self { positions, iteration })
    }

    /// Builds an ensemble from per-particle rows.
    pub fn from_rows(rows: &[Vec<f64>], iteration: usize) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(CboError::Shape("ragged particle rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let positions = Array2::from_shape_vec((n, d), flat).map_err(|e| CboError::Shape(e.to_string()))?;
        Self::new(positions, iteration)
    }

    pub(crate) fn from_parts_unchecked(positions: Array2<f64>, iteration: usize) -> Self {
        Self { positions, iteration }
    }

    pub fn positions(&self) -> &Array2<f64> {
        &self.positions
    }

    pub fn into_positions(self) -> Array2<f64> {
        self.positions
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn n_particles(&self) -> usize {
        self.positions.nrows()
    }

    pub fn dim(&self) -> usize {
        self.positions.ncols()
    }

    /// Component slice `y^s`: coordinate `s` of every particle.
    pub fn component(&self, s: usize) -> Vec<f64> {
        self.positions.column(s).to_vec()
    }

    pub fn particle(&self, i: usize) -> Vec<f64> {
        self.positions.row(i).to_vec()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.positions.rows().into_iter().map(|r| r.to_vec()).collect()
    }
}

impl Serialize for Ensemble {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = serializer.serialize_struct("Ensemble", 2)?;
        st.serialize_field("iteration", &self.iteration)?;
        st.serialize_field("positions", &self.rows())?;
        st.end()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Independent diffusion multipliers for every particle.
    #[default]
    PerParticle,
    /// One multiplier per coordinate shared by all particles.
    Shared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CboParams {
    pub gamma: f64,
    pub xi: f64,
    pub alpha: f64,
    pub n_particles: usize,
    pub dim: usize,
    #[serde(default)]
    pub noise_mode: NoiseMode,
    pub max_iter: usize,
    /// Stop once the mean distance to the ensemble average drops to this
    /// value. Zero disables the rule.
    #[serde(default)]
    pub consensus_tol: f64,
}

impl CboParams {
    pub fn theta(&self) -> f64 {
        theta(self.gamma, self.xi, self.n_particles)
    }

    /// Fails with the first error of [`validate_params`].
    pub fn ensure_valid(&self) -> Result<()> {
        let report = validate_params(self);
        match report.errors.first() {
            Some(e) => Err(CboError::InvalidParams(e.clone())),
            None => Ok(()),
        }
    }
}

/// Contraction constant `1 - gamma + 8 xi sqrt(ln(sqrt(2) N))`.
pub fn theta(gamma: f64, xi: f64, n_particles: usize) -> f64 {
    1.0 - gamma + 8.0 * xi * (std::f64::consts::SQRT_2 * n_particles as f64).ln().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub theta: f64,
    pub warnings: Vec<String>,
    pub errors: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }
}

pub fn validate_params(params: &CboParams) -> ValidationReport {
    let mut errors = Vec::new();
    let mut warnings = Vec::new();
    if !(params.gamma > 0.0 && params.gamma <= 1.0) {
        errors.push(format!("gamma must lie in (0, 1], got {}", params.gamma));
    }
    if !(params.xi >= 0.0 && params.xi.is_finite()) {
        errors.push(format!("xi must be finite and nonnegative, got {}", params.xi));
    }
    if !(params.alpha > 0.0 && params.alpha.is_finite()) {
        errors.push(format!("alpha must be finite and positive, got {}", params.alpha));
    }
    if params.n_particles == 0 {
        errors.push("n_particles must be at least 1".into());
    }
    if params.dim == 0 {
        errors.push("dim must be at least 1".into());
    }
    if !(params.consensus_tol >= 0.0) {
        errors.push(format!("consensus_tol must be nonnegative, got {}", params.consensus_tol));
    }
    let theta = params.theta();
    if theta >= 1.0 {
        warnings.push(format!("theta = {theta:.6} >= 1: convergence is not guaranteed by the contraction bound"));
    }
    ValidationReport { theta, warnings, errors }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitSpec {
    UniformBox { lower: Vec<f64>, upper: Vec<f64> },
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
}

impl InitSpec {
    pub fn uniform_cube(lower: f64, upper: f64, dim: usize) -> Self {
        InitSpec::UniformBox { lower: vec![lower; dim], upper: vec![upper; dim] }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let (a, b, what) = match self {
            InitSpec::UniformBox { lower, upper } => (lower, upper, "lower/upper"),
            InitSpec::Gaussian { mean, std } => (mean, std, "mean/std"),
        };
        if a.len() != dim || b.len() != dim {
            return Err(CboError::InvalidInit(format!(
                "{what} must have length {dim}, got {} and {}",
                a.len(),
                b.len()
            )));
        }
        match self {
            InitSpec::UniformBox { lower, upper } => {
                for (s, (l, u)) in lower.iter().zip(upper).enumerate() {
                    if !(l.is_finite() && u.is_finite() && l < u) {
                        return Err(CboError::InvalidInit(format!("box side {s}: need lower < upper, got [{l}, {u}]")));
                    }
                }
            }
            InitSpec::Gaussian { mean, std } => {
                for (s, (m, sd)) in mean.iter().zip(std).enumerate() {
                    if !(m.is_finite() && sd.is_finite() && *sd >= 0.0) {
                        return Err(CboError::InvalidInit(format!("gaussian coordinate {s}: mean {m}, std {sd}")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Draws `N` i.i.d. particles from the initial law. Particle `i` reads its
/// coordinates from stream `(run, i, 0, Init)`.
pub fn init_ensemble(init: &InitSpec, params: &CboParams, seed: SeedSpec) -> Result<Ensemble> {
    if params.n_particles == 0 || params.dim == 0 {
        return Err(CboError::InvalidParams("n_particles and dim must be positive".into()));
    }
    init.validate(params.dim)?;
    let (n, d) = (params.n_particles, params.dim);
    let mut positions = Array2::zeros((n, d));
    for (i, mut row) in positions.rows_mut().into_iter().enumerate() {
        let mut rng = seed.at(i as u64, 0, Lane::Init).rng();
        match init {
            InitSpec::UniformBox { lower, upper } => {
                for s in 0..d {
                    let u = Uniform::new(lower[s], upper[s]).expect("validated bounds");
                    row[s] = rng.sample(u);
                }
            }
            InitSpec::Gaussian { mean, std } => {
                for s in 0..d {
                    let law = Normal::new(mean[s], std[s]).expect("validated std");
                    row[s] = law.sample(&mut rng);
                }
            }
        }
    }
    Ensemble::new(positions, 0)
}
