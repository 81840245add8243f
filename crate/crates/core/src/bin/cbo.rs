use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use cbo_core::config::{output_path, Config};
use cbo_core::dataset::{load_dataset, split_dataset, synthetic_dataset, LabelColumn};
use cbo_core::diagnostics::{complexity_schedule, estimate_d0, mean_squared_distance, mv_bound, theory_constants, MvMode, TheoryInputs};
use cbo_core::engine::{run, DiagnosticsRow, RunOptions};
use cbo_core::harness::{emit_results, run_experiment, OutputFormat};
use cbo_core::model::{init_ensemble, validate_params};
use cbo_core::rng::{Lane, SeedSpec, StreamId, SHARED_PARTICLE};
use cbo_core::suite::{run_suite, Scale};
use cbo_core::{CboError, Result};

#[derive(Parser)]
#[command(name = "cbo", version, about = "Consensus-based optimization with noisy oracles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one seeded trajectory and print the run record as JSON.
    Run {
        config: PathBuf,
        /// Write the record here instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Per-iteration diagnostics CSV.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Run the multi-run campaign described by the `[experiment]` section.
    Sweep {
        config: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Run the property suite and print a pass/fail table.
    Check {
        /// Use the full sample sizes.
        #[arg(long)]
        full: bool,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
    /// Evaluate theoretical constants for a configuration.
    Bounds { config: PathBuf },
    /// Generate or split datasets.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Linearly separable data with label noise.
    Synth {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 0.0)]
        flip: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Random train/test split of a CSV file.
    Split {
        input: PathBuf,
        #[arg(long)]
        train_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Label column name or zero-based index.
        #[arg(long, default_value = "label")]
        label_column: String,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        test_out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run { config, output, diagnostics } => cmd_run(&config, output, diagnostics),
        Command::Sweep { config, output, format } => cmd_sweep(&config, output, format),
        Command::Check { full, seed } => cmd_check(full, seed),
        Command::Bounds { config } => cmd_bounds(&config),
        Command::Dataset { command } => cmd_dataset(command),
    }
}

fn write_json(value: &impl serde::Serialize, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => {
            let file = std::fs::File::create(p)?;
            serde_json::to_writer_pretty(std::io::BufWriter::new(file), value)?;
        }
        None => {
            let mut out = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut out, value)?;
            writeln!(out)?;
        }
    }
    Ok(())
}

fn write_diagnostics(rows: &[DiagnosticsRow], dim: usize, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let has_v = rows.first().is_some_and(|r| r.v_k.is_some());
    let has_err = rows.first().is_some_and(|r| r.err_inf.is_some());
    let mut header = vec!["iter".to_string(), "stopping_metric".to_string()];
    header.extend((1..=dim).map(|s| format!("diam_{s}")));
    if has_v {
        header.push("v_k".into());
    }
    header.push("cost_so_far".into());
    if has_err {
        header.push("err_inf".into());
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.iter.to_string(), r.stopping_metric.to_string()];
        rec.extend(r.diam.iter().map(f64::to_string));
        if let Some(v) = r.v_k {
            rec.push(v.to_string());
        }
        rec.push(r.cost_so_far.to_string());
        if let Some(e) = r.err_inf {
            rec.push(e.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_run(path: &Path, output: Option<PathBuf>, diagnostics: Option<PathBuf>) -> Result<ExitCode> {
    let cfg = Config::load(path)?;
    let params = cfg.params()?;
    for w in validate_params(&params).warnings {
        eprintln!("warning: {w}");
    }
    let data = cfg.data()?;
    let problem = cfg.problem(data.as_ref())?;
    let diag_path = diagnostics.or_else(|| cfg.diagnostics.output.as_ref().map(|p| cfg.resolve(p)));
    let options = RunOptions {
        diagnostics: cfg.diagnostics.enabled || diag_path.is_some(),
        track_exact: cfg.diagnostics.track_exact,
        x_star: cfg.diagnostics.x_star.clone().or_else(|| problem.objective.minimizer(params.dim)),
    };
    let mut record = run(&params, &problem, &cfg.init_spec()?, cfg.seed_spec(), &options)?;
    if let (Some(p), Some(rows)) = (&diag_path, &record.diagnostics) {
        write_diagnostics(rows, params.dim, &output_path(p))?;
        record.diagnostics = None;
    }
    write_json(&record, output.map(|p| output_path(&p)).as_deref())?;
    Ok(ExitCode::SUCCESS)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
    let name = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}{suffix}.{ext}"),
        None => format!("{stem}{suffix}"),
    };
    path.with_file_name(name)
}

fn cmd_sweep(path: &Path, output: Option<PathBuf>, format: Option<Format>) -> Result<ExitCode> {
    let cfg = Config::load(path)?;
    let data = cfg.data()?;
    let experiment = cfg.experiment(data.as_ref())?;
    let format = format.map(OutputFormat::from).unwrap_or(cfg.experiment.format);
    let default_name = match format {
        OutputFormat::Csv => "results.csv",
        OutputFormat::Json => "results.json",
    };
    let out = output
        .or_else(|| cfg.experiment.output.as_ref().map(|p| cfg.resolve(p)))
        .unwrap_or_else(|| PathBuf::from(default_name));
    let out = output_path(&out);
    let table = run_experiment(&experiment)?;
    for f in &table.failures {
        eprintln!("run {} (cell {}, alpha {}) failed: {}", f.run, f.cell, f.alpha, f.error);
    }
    emit_results(&table.rows, format, &out)?;
    if !table.best.is_empty() {
        emit_results(&table.best, format, &sibling(&out, "_best"))?;
    }
    println!("{} rows written to {}", table.rows.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_check(full: bool, seed: u64) -> Result<ExitCode> {
    let outcomes = run_suite(if full { Scale::FULL } else { Scale::QUICK }, seed)?;
    let width = outcomes.iter().map(|o| o.name.len()).max().unwrap_or(0);
    for o in &outcomes {
        println!("{}  {:width$}  {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} passed, {failed} failed", outcomes.len() - failed);
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_bounds(path: &Path) -> Result<ExitCode> {
    let cfg = Config::load(path)?;
    let params = cfg.params()?;
    let init = cfg.init_spec()?;
    let b = &cfg.bounds;
    let data = cfg.data()?;
    let objective = cfg.objective(data.as_ref())?;
    let (t0, t1) = cfg.noise.growth_constants();
    let n = params.n_particles;
    let samples = b.samples.max(1);
    let x_star = cfg.experiment.x_star.clone().or_else(|| objective.minimizer(params.dim));
    let v0 = match (b.v0, &x_star) {
        (Some(v), _) => v,
        (None, Some(xs)) => {
            let mut total = 0.0;
            for r in 0..samples {
                let e = init_ensemble(&init, &params, SeedSpec::new(cfg.seed, StreamId::new(r as u64, 0, 0, Lane::Init)))?;
                total += mean_squared_distance(&e, xs);
            }
            total / samples as f64
        }
        (None, None) => return Err(CboError::Config("bounds.v0 is required when the minimizer is unknown".into())),
    };
    let d0 = match b.d0 {
        Some(d) => d,
        None => estimate_d0(&init, &params, cfg.seed, samples)?,
    };
    let e_exp_f0 = match b.e_exp_f0 {
        Some(e) => e,
        None => {
            let mut total = 0.0;
            for r in 0..samples {
                let seed = SeedSpec::new(cfg.seed, StreamId::new(r as u64, SHARED_PARTICLE, 0, Lane::MonteCarlo));
                let single = cbo_core::CboParams { n_particles: 1, ..params.clone() };
                let e = init_ensemble(&init, &single, seed)?;
                total += (-params.alpha * objective.value(&e.particle(0))?).exp();
            }
            total / samples as f64
        }
    };
    let mv = mv_bound(t0, t1, b.mf, n, b.mv_mode);
    let schedule = complexity_schedule(b.eps, b.tau, params.gamma, params.xi, v0, n);
    let theory = theory_constants(&TheoryInputs {
        mh: b.mh,
        mg: b.mg,
        gamma: params.gamma,
        xi: params.xi,
        alpha: params.alpha,
        mv,
        d0,
        f_star: b.f_star,
        e_exp_f0,
        eps_margin: b.eps_margin,
        n_particles: n,
    });
    let report = json!({
        "validation": validate_params(&params),
        "theta": params.theta(),
        "mv_bound": {
            "generic": mv_bound(t0, t1, b.mf, n, MvMode::Generic),
            "gaussian": mv_bound(t0, t1, b.mf, n, MvMode::Gaussian),
            "selected": mv,
        },
        "v0": v0,
        "d0": d0,
        "e_exp_f0": e_exp_f0,
        "complexity_schedule": schedule.as_ref().ok(),
        "complexity_error": schedule.as_ref().err().map(|e| e.to_string()),
        "theory": theory,
    });
    write_json(&report, None)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_dataset(command: DatasetCommand) -> Result<ExitCode> {
    match command {
        DatasetCommand::Synth { m, d, flip, seed, output } => {
            let ds = synthetic_dataset(m, d, flip, SeedSpec::new(seed, StreamId::new(0, SHARED_PARTICLE, 0, Lane::Synthetic)))?;
            let out = output_path(&output);
            ds.write_csv(&out)?;
            println!("{} rows written to {}", ds.len(), out.display());
        }
        DatasetCommand::Split { input, train_size, seed, label_column, train_out, test_out } => {
            let label = match label_column.parse::<usize>() {
                Ok(i) => LabelColumn::Index(i),
                Err(_) => LabelColumn::Name(label_column),
            };
            let ds = load_dataset(&input, &label)?;
            let (train, test) = split_dataset(&ds, train_size, SeedSpec::new(seed, StreamId::new(0, SHARED_PARTICLE, 0, Lane::Split)))?;
            train.write_csv(&output_path(&train_out))?;
            test.write_csv(&output_path(&test_out))?;
            println!("{} training rows, {} test rows", train.len(), test.len());
        }
    }
    Ok(ExitCode::SUCCESS)
}
