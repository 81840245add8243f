//! Stochastic objective oracles: additive/relative Gaussian noise and
//! finite-sum subsampling.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{CboError, Result};
use crate::objectives::{finite_sum_loss, Objective};
use crate::rng::SeedSpec;

/// `f_hat = f + w0 + w1 f` with `w0 ~ N(0, sigma0^2)`, `w1 ~ N(0, sigma1^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(default)]
    pub sigma0: f64,
    #[serde(default)]
    pub sigma1: f64,
}

impl NoiseSpec {
    pub fn new(sigma0: f64, sigma1: f64) -> Self {
        Self { sigma0, sigma1 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0 >= 0.0 && self.sigma1 >= 0.0 && self.sigma0.is_finite() && self.sigma1.is_finite()) {
            return Err(CboError::InvalidParams(format!(
                "noise levels must be finite and nonnegative, got ({}, {})",
                self.sigma0, self.sigma1
            )));
        }
        Ok(())
    }

    pub fn is_exact(&self) -> bool {
        self.sigma0 == 0.0 && self.sigma1 == 0.0
    }

    /// Noise growth constants `(t0, t1) = (sigma0^2, sigma1^2)`.
    pub fn growth_constants(&self) -> (f64, f64) {
        (self.sigma0 * self.sigma0, self.sigma1 * self.sigma1)
    }
}

/// Uniform subsampling without replacement of `ceil(ell M)` components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsampleSpec {
    pub ell: f64,
}

impl SubsampleSpec {
    pub fn new(ell: f64) -> Self {
        Self { ell }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ell > 0.0 && self.ell <= 1.0) {
            return Err(CboError::InvalidParams(format!("sampling fraction must lie in (0, 1], got {}", self.ell)));
        }
        Ok(())
    }

    pub fn subset_size(&self, m: usize) -> usize {
        subset_size(self.ell, m)
    }
}

/// `ceil(ell M)`, ignoring floating-point fuzz just above an integer and
/// clamped to `[1, M]`.
pub fn subset_size(ell: f64, m: usize) -> usize {
    let raw = ell * m as f64;
    let nearest = raw.round();
    let k = if (raw - nearest).abs() <= 1e-9 * nearest.max(1.0) { nearest } else { raw.ceil() };
    (k as usize).clamp(1, m.max(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub value: f64,
    pub exact_value: Option<f64>,
    pub component_evals: u64,
}

pub fn gaussian_noisy_oracle(f_value: f64, spec: &NoiseSpec, seed: SeedSpec) -> f64 {
    if spec.is_exact() {
        return f_value;
    }
    let mut rng = seed.rng();
    let w0: f64 = rng.sample(StandardNormal);
    let w1: f64 = rng.sample(StandardNormal);
    f_value + spec.sigma0 * w0 + spec.sigma1 * w1 * f_value
}

/// Mean component loss over a fresh uniform subset of size `ceil(ell M)`.
/// With `ceil(ell M) = M` the full sum is evaluated in row order.
pub fn subsample_oracle(x: &[f64], dataset: &Dataset, spec: &SubsampleSpec, seed: SeedSpec) -> Result<EvalRecord> {
    spec.validate()?;
    let m = dataset.len();
    if m == 0 {
        return Err(CboError::Empty("subsampling an empty dataset".into()));
    }
    let k = spec.subset_size(m);
    let value = if k == m {
        finite_sum_loss(x, dataset, None)?
    } else {
        let mut rng = seed.rng();
        let subset = index::sample(&mut rng, m, k).into_vec();
        finite_sum_loss(x, dataset, Some(&subset))?
    };
    Ok(EvalRecord { value, exact_value: None, component_evals: k as u64 })
}

/// `|f - f_hat|`.
pub fn oracle_error(exact: f64, noisy: f64) -> f64 {
    (exact - noisy).abs()
}

/// Max norm of a vector of per-particle oracle errors.
pub fn error_inf_norm(errors: &[f64]) -> f64 {
    errors.iter().fold(0.0, |acc, &e| acc.max(e.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleSpec {
    #[default]
    Exact,
    Gaussian(NoiseSpec),
    Subsample(SubsampleSpec),
}

/// An objective paired with the oracle that estimates it.
#[derive(Debug, Clone)]
pub struct Problem {
    pub objective: Objective,
    pub oracle: OracleSpec,
}

impl Problem {
    pub fn new(objective: Objective, oracle: OracleSpec) -> Result<Self> {
        match &oracle {
            OracleSpec::Exact => {}
            OracleSpec::Gaussian(n) => n.validate()?,
            OracleSpec::Subsample(s) => {
                s.validate()?;
                if objective.dataset().is_none() {
                    return Err(CboError::Config("subsampling requires a finite-sum objective".into()));
                }
            }
        }
        Ok(Self { objective, oracle })
    }

    /// Components charged per oracle call.
    pub fn evals_per_call(&self) -> u64 {
        match (&self.oracle, self.objective.dataset()) {
            (OracleSpec::Subsample(s), Some(ds)) => s.subset_size(ds.len()) as u64,
            (_, Some(ds)) => ds.len() as u64,
            (_, None) => 1,
        }
    }

    /// Number of components `M` of a finite-sum objective, 1 otherwise.
    pub fn component_count(&self) -> usize {
        self.objective.dataset().map_or(1, |ds| ds.len())
    }

    pub fn sampling_fraction(&self) -> f64 {
        match self.oracle {
            OracleSpec::Subsample(s) => s.ell,
            _ => 1.0,
        }
    }

    pub fn evaluate(&self, x: &[f64], seed: SeedSpec, want_exact: bool) -> Result<EvalRecord> {
        match &self.oracle {
            OracleSpec::Exact => {
                let f = self.objective.value(x)?;
                Ok(EvalRecord { value: f, exact_value: want_exact.then_some(f), component_evals: self.evals_per_call() })
            }
            OracleSpec::Gaussian(noise) => {
                let f = self.objective.value(x)?;
                Ok(EvalRecord {
                    value: gaussian_noisy_oracle(f, noise, seed),
                    exact_value: want_exact.then_some(f),
                    component_evals: self.evals_per_call(),
                })
            }
            OracleSpec::Subsample(spec) => {
                let ds = self.objective.dataset().expect("checked in Problem::new");
                let mut rec = subsample_oracle(x, ds, spec, seed)?;
                if want_exact {
                    rec.exact_value = Some(finite_sum_loss(x, ds, None)?);
                }
                Ok(rec)
            }
        }
    }
}
