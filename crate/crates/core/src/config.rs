//! TOML configuration for runs, sweeps and bound evaluation.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::{load_dataset, split_dataset, synthetic_dataset, Dataset, LabelColumn};
use crate::diagnostics::MvMode;
use crate::error::{CboError, Result};
use crate::harness::{ExperimentConfig, Metric, OutputFormat};
use crate::model::{CboParams, InitSpec, NoiseMode};
use crate::objectives::Objective;
use crate::oracle::{NoiseSpec, OracleSpec, Problem, SubsampleSpec};
use crate::rng::{Lane, SeedSpec, StreamId, SHARED_PARTICLE};

/// Environment variable that redirects every output file into a directory.
pub const OUTPUT_DIR_ENV: &str = "CBO_OUTPUT_DIR";

/// A scalar broadcast to every coordinate, or one value per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coords {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Coords {
    fn expand(&self, dim: usize) -> Vec<f64> {
        match self {
            Coords::Scalar(v) => vec![*v; dim],
            Coords::Vector(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    #[default]
    UniformBox,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    #[serde(default)]
    pub kind: InitKind,
    pub lower: Option<Coords>,
    pub upper: Option<Coords>,
    pub mean: Option<Coords>,
    pub std: Option<Coords>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    #[default]
    Rastrigin,
    RotatedRastrigin,
    FiniteSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSection {
    #[serde(default)]
    pub kind: ObjectiveKind,
    #[serde(default = "default_angle")]
    pub angle: f64,
}

fn default_angle() -> f64 {
    std::f64::consts::FRAC_PI_3
}

impl Default for ObjectiveSection {
    fn default() -> Self {
        Self { kind: ObjectiveKind::default(), angle: default_angle() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub m: usize,
    #[serde(default)]
    pub flip: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub label_column: LabelColumn,
    pub synthetic: Option<SyntheticSection>,
    /// Training rows; the remainder is the test set.
    pub train_size: Option<usize>,
    #[serde(default)]
    pub split_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default = "one")]
    pub runs: usize,
    #[serde(default)]
    pub alpha_sweep: Vec<f64>,
    #[serde(default)]
    pub ell_sweep: Vec<f64>,
    /// `[sigma0, sigma1]` pairs.
    #[serde(default)]
    pub noise_sweep: Vec<[f64; 2]>,
    pub x_star: Option<Vec<f64>>,
    #[serde(default = "yes")]
    pub best_alpha: bool,
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub format: OutputFormat,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            runs: 1,
            alpha_sweep: Vec::new(),
            ell_sweep: Vec::new(),
            noise_sweep: Vec::new(),
            x_star: None,
            best_alpha: true,
            output: None,
            format: OutputFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default)]
    pub track_exact: bool,
    pub x_star: Option<Vec<f64>>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// `E[V_0]`; estimated from the initial distribution when absent.
    pub v0: Option<f64>,
    /// Bound on `|f|` along the trajectory.
    #[serde(default = "default_unit")]
    pub mf: f64,
    #[serde(default = "default_mv_mode")]
    pub mv_mode: MvMode,
    #[serde(default = "default_unit")]
    pub mh: f64,
    #[serde(default = "default_unit")]
    pub mg: f64,
    #[serde(default)]
    pub f_star: f64,
    /// `E[exp(-alpha f(x_0))]`; estimated when absent.
    pub e_exp_f0: Option<f64>,
    #[serde(default)]
    pub eps_margin: f64,
    /// `D_0`; estimated when absent.
    pub d0: Option<f64>,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_eps() -> f64 {
    1e-2
}

fn default_tau() -> f64 {
    0.5
}

fn default_unit() -> f64 {
    1.0
}

fn default_mv_mode() -> MvMode {
    MvMode::Gaussian
}

fn default_samples() -> usize {
    1000
}

impl Default for BoundsSection {
    fn default() -> Self {
        Self {
            eps: default_eps(),
            tau: default_tau(),
            v0: None,
            mf: 1.0,
            mv_mode: MvMode::Gaussian,
            mh: 1.0,
            mg: 1.0,
            f_star: 0.0,
            e_exp_f0: None,
            eps_margin: 0.0,
            d0: None,
            samples: default_samples(),
        }
    }
}

/// Parsed configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub gamma: f64,
    pub xi: f64,
    pub alpha: f64,
    pub n_particles: usize,
    pub dim: usize,
    #[serde(default)]
    pub noise_mode: NoiseMode,
    pub max_iter: usize,
    #[serde(default)]
    pub consensus_tol: f64,
    #[serde(default)]
    pub seed: u64,
    pub init: Option<InitSection>,
    #[serde(default)]
    pub objective: ObjectiveSection,
    #[serde(default)]
    pub noise: NoiseSpec,
    pub subsample: Option<SubsampleSpec>,
    pub dataset: Option<DatasetSection>,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub bounds: BoundsSection,
    /// Directory relative paths resolve against; set by [`Config::load`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Training and optional test data resolved from a dataset section.
#[derive(Debug, Clone)]
pub struct DataSplit {
    pub train: Arc<Dataset>,
    pub test: Option<Arc<Dataset>>,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CboError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn params(&self) -> Result<CboParams> {
        let p = CboParams {
            gamma: self.gamma,
            xi: self.xi,
            alpha: self.alpha,
            n_particles: self.n_particles,
            dim: self.dim,
            noise_mode: self.noise_mode,
            max_iter: self.max_iter,
            consensus_tol: self.consensus_tol,
        };
        p.ensure_valid()?;
        Ok(p)
    }

    /// Initial distribution; `[-3, 3]^d` when the section is absent.
    pub fn init_spec(&self) -> Result<InitSpec> {
        let d = self.dim;
        let spec = match &self.init {
            None => InitSpec::uniform_cube(-3.0, 3.0, d),
            Some(s) => {
                let need = |c: &Option<Coords>, key: &str| {
                    c.as_ref().map(|c| c.expand(d)).ok_or_else(|| CboError::Config(format!("init.{key} is required")))
                };
                match s.kind {
                    InitKind::UniformBox => InitSpec::UniformBox { lower: need(&s.lower, "lower")?, upper: need(&s.upper, "upper")? },
                    InitKind::Gaussian => InitSpec::Gaussian { mean: need(&s.mean, "mean")?, std: need(&s.std, "std")? },
                }
            }
        };
        spec.validate(d)?;
        Ok(spec)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn data(&self) -> Result<Option<DataSplit>> {
        let Some(sec) = &self.dataset else {
            return Ok(None);
        };
        let full = match (&sec.path, &sec.synthetic) {
            (Some(p), None) => load_dataset(&self.resolve(p), &sec.label_column)?,
            (None, Some(s)) => synthetic_dataset(
                s.m,
                self.dim,
                s.flip,
                SeedSpec::new(s.seed, StreamId::new(0, SHARED_PARTICLE, 0, Lane::Synthetic)),
            )?,
            _ => return Err(CboError::Config("dataset needs exactly one of path or synthetic".into())),
        };
        if full.dim() != self.dim {
            return Err(CboError::Config(format!("dataset has {} features but dim = {}", full.dim(), self.dim)));
        }
        Ok(Some(match sec.train_size {
            None => DataSplit { train: Arc::new(full), test: None },
            Some(n) => {
                let (train, test) =
                    split_dataset(&full, n, SeedSpec::new(sec.split_seed, StreamId::new(0, SHARED_PARTICLE, 0, Lane::Split)))?;
                DataSplit { train: Arc::new(train), test: Some(Arc::new(test)) }
            }
        }))
    }

    pub fn objective(&self, data: Option<&DataSplit>) -> Result<Objective> {
        let obj = match self.objective.kind {
            ObjectiveKind::Rastrigin => Objective::Rastrigin,
            ObjectiveKind::RotatedRastrigin => Objective::RotatedRastrigin { angle: self.objective.angle },
            ObjectiveKind::FiniteSum => match data {
                Some(d) => Objective::FiniteSum(d.train.clone()),
                None => return Err(CboError::Config("finite_sum objective needs a [dataset] section".into())),
            },
        };
        obj.check_dim(self.dim)?;
        Ok(obj)
    }

    /// Oracle of a single run: subsampling when `[subsample]` is present,
    /// otherwise Gaussian noise from `[noise]`.
    pub fn oracle(&self) -> Result<OracleSpec> {
        self.noise.validate()?;
        match self.subsample {
            Some(_) if !self.noise.is_exact() => Err(CboError::Config("noise and subsample cannot be combined".into())),
            Some(s) => Ok(OracleSpec::Subsample(s)),
            None if self.noise.is_exact() => Ok(OracleSpec::Exact),
            None => Ok(OracleSpec::Gaussian(self.noise)),
        }
    }

    pub fn problem(&self, data: Option<&DataSplit>) -> Result<Problem> {
        Problem::new(self.objective(data)?, self.oracle()?)
    }

    pub fn seed_spec(&self) -> SeedSpec {
        SeedSpec::new(self.seed, StreamId::new(0, 0, 0, Lane::Init))
    }

    /// Sweep description. The metric is the distance to `experiment.x_star`
    /// (or the known minimizer) for Rastrigin objectives and accuracy on the
    /// test split (or the training set) for finite sums.
    pub fn experiment(&self, data: Option<&DataSplit>) -> Result<ExperimentConfig> {
        let exp = &self.experiment;
        if exp.runs == 0 {
            return Err(CboError::Config("experiment.runs must be at least 1".into()));
        }
        let objective = self.objective(data)?;
        let metric = match (&objective, data) {
            (Objective::FiniteSum(train), d) => {
                Metric::Accuracy(d.and_then(|d| d.test.clone()).unwrap_or_else(|| train.clone()))
            }
            _ => {
                let x_star = exp
                    .x_star
                    .clone()
                    .or_else(|| objective.minimizer(self.dim))
                    .ok_or_else(|| CboError::Config("experiment.x_star is required".into()))?;
                if x_star.len() != self.dim {
                    return Err(CboError::Config("experiment.x_star has the wrong dimension".into()));
                }
                Metric::Error(x_star)
            }
        };
        let mut noise_sweep: Vec<NoiseSpec> = exp.noise_sweep.iter().map(|&[a, b]| NoiseSpec::new(a, b)).collect();
        for n in &noise_sweep {
            n.validate()?;
        }
        if noise_sweep.is_empty() && !self.noise.is_exact() {
            noise_sweep.push(self.noise);
        }
        let mut ell_sweep = exp.ell_sweep.clone();
        if ell_sweep.is_empty() {
            if let Some(s) = self.subsample {
                ell_sweep.push(s.ell);
            }
        }
        for &ell in &ell_sweep {
            SubsampleSpec::new(ell).validate()?;
        }
        if !ell_sweep.is_empty() && !matches!(objective, Objective::FiniteSum(_)) {
            return Err(CboError::Config("ell_sweep requires a finite_sum objective".into()));
        }
        if !ell_sweep.is_empty() && !noise_sweep.is_empty() {
            return Err(CboError::Config("noise and subsampling sweeps cannot be combined".into()));
        }
        Ok(ExperimentConfig {
            params: self.params()?,
            init: self.init_spec()?,
            objective,
            noise_sweep,
            ell_sweep,
            alpha_sweep: exp.alpha_sweep.clone(),
            runs: exp.runs,
            metric,
            master_seed: self.seed,
            best_alpha: exp.best_alpha,
        })
    }
}

/// Places `path` under `$CBO_OUTPUT_DIR` when the variable is set.
pub fn output_path(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) if !dir.is_empty() => {
            let name = path.file_name().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("output"));
            PathBuf::from(dir).join(name)
        }
        _ => path.to_path_buf(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "gamma = 0.1\nxi = 0.0056\nalpha = 1e4\nn_particles = 100\ndim = 1\nmax_iter = 1000\n";

    #[test]
    fn minimal_config_defaults() {
        let c = Config::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.noise_mode, NoiseMode::PerParticle);
        assert_eq!(c.consensus_tol, 0.0);
        assert_eq!(c.init_spec().unwrap(), InitSpec::uniform_cube(-3.0, 3.0, 1));
        assert_eq!(c.oracle().unwrap(), OracleSpec::Exact);
        assert!(matches!(c.objective(None).unwrap(), Objective::Rastrigin));
        let e = c.experiment(None).unwrap();
        assert_eq!(e.runs, 1);
        assert!(matches!(e.metric, Metric::Error(ref x) if x == &vec![0.0]));
    }

    #[test]
    fn init_broadcast_and_vectors() {
        let text = format!("{MINIMAL}dim = 2\n");
        assert!(Config::from_toml_str(&text).is_err());
        let text = MINIMAL.replace("dim = 1", "dim = 2")
            + "[init]\nkind = \"uniform_box\"\nlower = -1000.0\nupper = [1000.0, 5.0]\n";
        let c = Config::from_toml_str(&text).unwrap();
        assert_eq!(c.init_spec().unwrap(), InitSpec::UniformBox { lower: vec![-1000.0; 2], upper: vec![1000.0, 5.0] });
        let bad = MINIMAL.to_string() + "[init]\nlower = 1.0\nupper = 1.0\n";
        assert!(Config::from_toml_str(&bad).unwrap().init_spec().is_err());
        let gauss = MINIMAL.to_string() + "[init]\nkind = \"gaussian\"\nmean = 0.0\nstd = 2.0\n";
        assert!(matches!(Config::from_toml_str(&gauss).unwrap().init_spec().unwrap(), InitSpec::Gaussian { .. }));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(Config::from_toml_str(&(MINIMAL.to_string() + "gama = 0.1\n")).is_err());
        let c = Config::from_toml_str(&MINIMAL.replace("gamma = 0.1", "gamma = 1.5")).unwrap();
        assert!(c.params().is_err());
        let c = Config::from_toml_str(&(MINIMAL.to_string() + "[noise]\nsigma0 = -1.0\n")).unwrap();
        assert!(c.oracle().is_err());
        let c = Config::from_toml_str(&(MINIMAL.to_string() + "[objective]\nkind = \"finite_sum\"\n")).unwrap();
        assert!(c.objective(None).is_err());
    }

    #[test]
    fn synthetic_classification_config() {
        let text = MINIMAL.replace("dim = 1", "dim = 3")
            + "[objective]\nkind = \"finite_sum\"\n[subsample]\nell = 0.5\n\
               [dataset]\ntrain_size = 40\nsplit_seed = 2\n[dataset.synthetic]\nm = 50\nflip = 0.0\nseed = 9\n\
               [experiment]\nruns = 2\nell_sweep = [1.0, 0.5]\n";
        let c = Config::from_toml_str(&text).unwrap();
        let data = c.data().unwrap().unwrap();
        assert_eq!(data.train.len(), 40);
        assert_eq!(data.test.as_ref().unwrap().len(), 10);
        assert_eq!(c.oracle().unwrap(), OracleSpec::Subsample(SubsampleSpec::new(0.5)));
        let e = c.experiment(Some(&data)).unwrap();
        assert_eq!(e.ell_sweep, vec![1.0, 0.5]);
        assert!(matches!(e.metric, Metric::Accuracy(ref t) if t.len() == 10));
    }

    #[test]
    fn noise_sweep_pairs() {
        let text = MINIMAL.to_string() + "[experiment]\nruns = 3\nnoise_sweep = [[0.0, 0.0], [0.1, 0.0], [0.0, 0.5]]\nalpha_sweep = [1e4, 10.0]\n";
        let e = Config::from_toml_str(&text).unwrap().experiment(None).unwrap();
        assert_eq!(e.noise_sweep, vec![NoiseSpec::new(0.0, 0.0), NoiseSpec::new(0.1, 0.0), NoiseSpec::new(0.0, 0.5)]);
        assert_eq!(e.alpha_sweep, vec![1e4, 10.0]);
    }
}
