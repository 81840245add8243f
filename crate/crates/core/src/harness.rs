//! Multi-run campaigns, summary statistics, the cost model and result
//! files.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{accuracy, Dataset};
use crate::engine::{run, RunOptions, RunRecord};
use crate::error::{CboError, Result};
use crate::model::{CboParams, InitSpec};
use crate::objectives::Objective;
use crate::oracle::{subset_size, NoiseSpec, OracleSpec, Problem, SubsampleSpec};
use crate::rng::{Lane, SeedSpec, StreamId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub p50: f64,
    pub p75: f64,
    pub p90: f64,
}

impl StatsSummary {
    fn nan() -> Self {
        Self { mean: f64::NAN, min: f64::NAN, max: f64::NAN, p50: f64::NAN, p75: f64::NAN, p90: f64::NAN }
    }
}

/// Nearest-rank percentile of sorted data: the value at 1-based rank
/// `ceil(p n / 100)`.
pub fn nearest_rank(sorted: &[f64], p: u32) -> f64 {
    let n = sorted.len();
    let rank = (p as usize * n).div_ceil(100).max(1);
    sorted[rank - 1]
}

pub fn percentile_summary(values: &[f64]) -> Result<StatsSummary> {
    if values.is_empty() {
        return Err(CboError::Empty("summary of an empty sample".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    Ok(StatsSummary {
        mean,
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        p50: nearest_rank(&sorted, 50),
        p75: nearest_rank(&sorted, 75),
        p90: nearest_rank(&sorted, 90),
    })
}

/// Work of a classification run: `iterations d (ceil(ell M) + 2)`.
pub fn cost(iterations: f64, d: usize, ell: f64, m: usize) -> f64 {
    iterations * d as f64 * (subset_size(ell, m) as f64 + 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostLedger {
    pub iterations: usize,
    pub component_evals: u64,
    pub cost: f64,
}

/// How a run is scored.
#[derive(Debug, Clone)]
pub enum Metric {
    /// `||xhat - x*||` at termination; smaller is better.
    Error(Vec<f64>),
    /// Classification accuracy of the terminal consensus point; larger is
    /// better.
    Accuracy(Arc<Dataset>),
}

impl Metric {
    fn score(&self, record: &RunRecord) -> Result<f64> {
        let x = &record.final_consensus.point;
        match self {
            Metric::Error(x_star) => {
                if x_star.len() != x.len() {
                    return Err(CboError::Shape("x_star has the wrong dimension".into()));
                }
                Ok(x.iter().zip(x_star).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            }
            Metric::Accuracy(ds) => accuracy(x, ds),
        }
    }

    fn better(&self, a: f64, b: f64) -> bool {
        match self {
            Metric::Error(_) => a < b,
            Metric::Accuracy(_) => a > b,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub params: CboParams,
    pub init: InitSpec,
    pub objective: Objective,
    /// Gaussian noise cells; ignored when `ell_sweep` is non-empty.
    pub noise_sweep: Vec<NoiseSpec>,
    /// Subsampling cells for finite-sum objectives.
    pub ell_sweep: Vec<f64>,
    /// Gibbs weights to try in every cell; empty means `params.alpha`.
    pub alpha_sweep: Vec<f64>,
    pub runs: usize,
    pub metric: Metric,
    pub master_seed: u64,
    /// Also report the best alpha per cell.
    pub best_alpha: bool,
}

impl ExperimentConfig {
    fn cells(&self) -> Vec<(f64, f64, f64, OracleSpec)> {
        if !self.ell_sweep.is_empty() {
            self.ell_sweep
                .iter()
                .map(|&ell| (0.0, 0.0, ell, OracleSpec::Subsample(SubsampleSpec::new(ell))))
                .collect()
        } else if self.noise_sweep.is_empty() {
            vec![(0.0, 0.0, 1.0, OracleSpec::Exact)]
        } else {
            self.noise_sweep
                .iter()
                .map(|n| {
                    let oracle = if n.is_exact() { OracleSpec::Exact } else { OracleSpec::Gaussian(*n) };
                    (n.sigma0, n.sigma1, 1.0, oracle)
                })
                .collect()
        }
    }

    fn alphas(&self) -> Vec<f64> {
        if self.alpha_sweep.is_empty() {
            vec![self.params.alpha]
        } else {
            self.alpha_sweep.clone()
        }
    }
}

/// One sweep cell. Column order is the output schema.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub sigma0: f64,
    pub sigma1: f64,
    pub ell: f64,
    pub alpha: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub p50: f64,
    pub p75: f64,
    pub p90: f64,
    pub mean_it: f64,
    pub mean_evals: f64,
    pub mean_cost: f64,
    pub runs_ok: usize,
    pub runs_failed: usize,
}

impl ResultRow {
    pub fn summary(&self) -> StatsSummary {
        StatsSummary { mean: self.mean, min: self.min, max: self.max, p50: self.p50, p75: self.p75, p90: self.p90 }
    }
}

/// Score and ledger of one completed run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunOutcome {
    pub score: f64,
    pub ledger: CostLedger,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunFailure {
    pub cell: usize,
    pub alpha: f64,
    pub run: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentTable {
    pub rows: Vec<ResultRow>,
    /// Best alpha per cell, in cell order.
    pub best: Vec<ResultRow>,
    pub failures: Vec<RunFailure>,
    /// Per-row scores of the successful runs, in run order.
    pub scores: Vec<Vec<f64>>,
}

pub fn run_seed(master_seed: u64, run: usize) -> SeedSpec {
    SeedSpec::new(master_seed, StreamId::new(run as u64, 0, 0, Lane::Init))
}

/// Executes `runs` seeded runs in parallel. Run `r` uses stream run index
/// `r` in every cell.
pub fn run_campaign(
    params: &CboParams,
    problem: &Problem,
    init: &InitSpec,
    metric: &Metric,
    runs: usize,
    master_seed: u64,
) -> Vec<Result<RunOutcome>> {
    (0..runs)
        .into_par_iter()
        .map(|r| {
            let rec = run(params, problem, init, run_seed(master_seed, r), &RunOptions::default())?;
            Ok(RunOutcome {
                score: metric.score(&rec)?,
                ledger: CostLedger {
                    iterations: rec.iterations,
                    component_evals: rec.ledger.component_evals,
                    cost: rec.ledger.cost,
                },
            })
        })
        .collect()
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentTable> {
    if config.runs == 0 {
        return Err(CboError::Config("runs must be at least 1".into()));
    }
    let m = match &config.objective {
        Objective::FiniteSum(ds) => ds.len(),
        _ => 1,
    };
    let mut table = ExperimentTable { rows: Vec::new(), best: Vec::new(), failures: Vec::new(), scores: Vec::new() };
    for (cell, (sigma0, sigma1, ell, oracle)) in config.cells().into_iter().enumerate() {
        let problem = Problem::new(config.objective.clone(), oracle)?;
        let mut cell_rows = Vec::new();
        for alpha in config.alphas() {
            let params = CboParams { alpha, ..config.params.clone() };
            let outcomes = run_campaign(&params, &problem, &config.init, &config.metric, config.runs, config.master_seed);
            let mut ok = Vec::new();
            for (r, o) in outcomes.into_iter().enumerate() {
                match o {
                    Ok(o) => ok.push(o),
                    Err(e) => table.failures.push(RunFailure { cell, alpha, run: r, error: e.to_string() }),
                }
            }
            let scores: Vec<f64> = ok.iter().map(|o| o.score).collect();
            let summary = if scores.is_empty() { StatsSummary::nan() } else { percentile_summary(&scores)? };
            let count = ok.len().max(1) as f64;
            let mean_it = ok.iter().map(|o| o.ledger.iterations as f64).sum::<f64>() / count;
            let mean_evals = ok.iter().map(|o| o.ledger.component_evals as f64).sum::<f64>() / count / m as f64;
            let row = ResultRow {
                sigma0,
                sigma1,
                ell,
                alpha,
                mean: summary.mean,
                min: summary.min,
                max: summary.max,
                p50: summary.p50,
                p75: summary.p75,
                p90: summary.p90,
                mean_it,
                mean_evals,
                mean_cost: mean_it * problem.cost_scale(params.dim),
                runs_ok: ok.len(),
                runs_failed: config.runs - ok.len(),
            };
            cell_rows.push(row);
            table.scores.push(scores);
        }
        if config.best_alpha && cell_rows.len() > 1 {
            let best = cell_rows
                .iter()
                .filter(|r| r.runs_ok > 0)
                .fold(None::<&ResultRow>, |acc, r| match acc {
                    Some(b) if !config.metric.better(r.mean, b.mean) => Some(b),
                    _ => Some(r),
                });
            if let Some(b) = best {
                table.best.push(*b);
            }
        }
        table.rows.extend(cell_rows);
    }
    Ok(table)
}

impl Problem {
    /// Cost of one iteration per unit of dimension: `evals_per_call + 2`,
    /// times `d`.
    pub fn cost_scale(&self, d: usize) -> f64 {
        d as f64 * (self.evals_per_call() as f64 + 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

pub fn emit_results(rows: &[ResultRow], format: OutputFormat, path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(CboError::Empty("no result rows to write".into()));
    }
    match format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_path(path)?;
            for row in rows {
                w.serialize(row)?;
            }
            w.flush()?;
        }
        OutputFormat::Json => {
            let file = std::fs::File::create(path)?;
            serde_json::to_writer_pretty(std::io::BufWriter::new(file), rows)?;
        }
    }
    Ok(())
}

pub fn read_results(path: &Path, format: OutputFormat) -> Result<Vec<ResultRow>> {
    match format {
        OutputFormat::Csv => {
            let mut r = csv::Reader::from_path(path)?;
            r.deserialize().map(|row| row.map_err(CboError::from)).collect()
        }
        OutputFormat::Json => Ok(serde_json::from_reader(std::fs::File::open(path)?)?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NoiseMode;

    #[test]
    fn percentile_examples() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(percentile_summary(&v).unwrap().p50, 5.0);
        let s = percentile_summary(&[2.5]).unwrap();
        assert_eq!((s.mean, s.min, s.max, s.p50, s.p75, s.p90), (2.5, 2.5, 2.5, 2.5, 2.5, 2.5));
        let v: Vec<f64> = (1..=100).rev().map(f64::from).collect();
        let s = percentile_summary(&v).unwrap();
        assert_eq!((s.p50, s.p75, s.p90), (50.0, 75.0, 90.0));
        assert!(percentile_summary(&[]).is_err());
    }

    #[test]
    fn cost_examples() {
        assert_eq!(cost(1.0, 1, 1.0, 1), 3.0);
        let c = cost(136.7, 7, 1.0, 2857);
        assert!((c / 2.736e6 - 1.0).abs() < 5e-4, "{c}");
        let c = cost(6283.5, 7, 0.1, 2857);
        assert!((c / 1.2668e7 - 1.0).abs() < 5e-4, "{c}");
    }

    fn rastrigin_config(runs: usize, max_iter: usize) -> ExperimentConfig {
        ExperimentConfig {
            params: CboParams {
                gamma: 0.1,
                xi: 0.0056,
                alpha: 1e4,
                n_particles: 20,
                dim: 1,
                noise_mode: NoiseMode::PerParticle,
                max_iter,
                consensus_tol: 0.0,
            },
            init: InitSpec::uniform_cube(-3.0, 3.0, 1),
            objective: Objective::Rastrigin,
            noise_sweep: vec![],
            ell_sweep: vec![],
            alpha_sweep: vec![],
            runs,
            metric: Metric::Error(vec![0.0]),
            master_seed: 17,
            best_alpha: true,
        }
    }

    #[test]
    fn degenerate_campaign_reports_initial_consensus() {
        let cfg = rastrigin_config(1, 0);
        let table = run_experiment(&cfg).unwrap();
        assert_eq!(table.rows.len(), 1);
        let problem = Problem::new(Objective::Rastrigin, OracleSpec::Exact).unwrap();
        let rec = run(&cfg.params, &problem, &cfg.init, run_seed(17, 0), &RunOptions::default()).unwrap();
        let err = rec.final_consensus.point[0].abs();
        assert_eq!(table.rows[0].mean, err);
        assert_eq!(table.rows[0].mean_it, 0.0);
    }

    #[test]
    fn best_alpha_row_and_ordering() {
        let mut cfg = rastrigin_config(8, 100);
        cfg.alpha_sweep = vec![1e4, 0.1];
        cfg.noise_sweep = vec![NoiseSpec::new(0.0, 0.0), NoiseSpec::new(0.5, 0.0)];
        let table = run_experiment(&cfg).unwrap();
        assert_eq!(table.rows.len(), 4);
        assert_eq!(table.best.len(), 2);
        for row in &table.rows {
            assert!(row.min <= row.p50 && row.p50 <= row.p75 && row.p75 <= row.p90 && row.p90 <= row.max);
            assert!(row.min <= row.mean && row.mean <= row.max);
            assert_eq!(row.runs_ok + row.runs_failed, 8);
        }
        let cell0 = &table.rows[0..2];
        let best0 = if cell0[0].mean <= cell0[1].mean { cell0[0] } else { cell0[1] };
        assert_eq!(table.best[0], best0);
    }

    #[test]
    fn unstable_runs_are_counted_not_fatal() {
        let mut cfg = rastrigin_config(3, 3000);
        cfg.params.gamma = 1.0;
        cfg.params.xi = 50.0;
        let table = run_experiment(&cfg).unwrap();
        assert_eq!(table.rows[0].runs_failed, 3);
        assert_eq!(table.failures.len(), 3);
        assert!(table.rows[0].mean.is_nan());
    }

    fn sample_rows() -> Vec<ResultRow> {
        vec![
            ResultRow {
                sigma0: 0.1,
                sigma1: 0.0,
                ell: 1.0,
                alpha: 10.0,
                mean: 1.62e-3,
                min: 7.99e-7,
                max: 6.98e-3,
                p50: 1.0 / 3.0,
                p75: 2.41e-3,
                p90: 3.41e-3,
                mean_it: 1000.0,
                mean_evals: 100000.0,
                mean_cost: 3000.0,
                runs_ok: 100,
                runs_failed: 0,
            },
            ResultRow { sigma1: 0.5, alpha: 0.1, p50: std::f64::consts::PI, ..sample_rows_first() },
        ]
    }

    fn sample_rows_first() -> ResultRow {
        ResultRow {
            sigma0: 0.0,
            sigma1: 0.0,
            ell: 0.25,
            alpha: 1e3,
            mean: 0.9,
            min: 0.8,
            max: 0.95,
            p50: 0.9,
            p75: 0.92,
            p90: 0.93,
            mean_it: 136.7,
            mean_evals: 34221.0,
            mean_cost: 686300.0,
            runs_ok: 20,
            runs_failed: 0,
        }
    }

    #[test]
    fn csv_schema_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.csv");
        let rows = sample_rows();
        emit_results(&rows[..1], OutputFormat::Csv, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[0],
            "sigma0,sigma1,ell,alpha,mean,min,max,p50,p75,p90,mean_it,mean_evals,mean_cost,runs_ok,runs_failed"
        );
        emit_results(&rows, OutputFormat::Csv, &path).unwrap();
        let back = read_results(&path, OutputFormat::Csv).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn json_rows_share_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.json");
        emit_results(&sample_rows(), OutputFormat::Json, &path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let arr = v.as_array().unwrap();
        let keys = |o: &serde_json::Value| o.as_object().unwrap().keys().cloned().collect::<Vec<_>>();
        assert_eq!(keys(&arr[0]), keys(&arr[1]));
        assert_eq!(read_results(&path, OutputFormat::Json).unwrap(), sample_rows());
        assert!(emit_results(&[], OutputFormat::Json, &path).is_err());
        assert!(emit_results(&sample_rows(), OutputFormat::Csv, Path::new("/nonexistent/dir/x.csv")).is_err());
    }
}
