//! `selguide` command line: `sample`, `sweep`, `bench`, `tune`, `validate-config`.
//!
//! Exit codes: 0 success, 1 configuration/usage error, 2 runtime error.

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{ConfigError, Overrides, Settings};
use crate::experiments::{bench, gs_tune, run_batch, run_seeds, window_sweep};
use crate::sampler::{SamplerKind, Trajectory};

pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "selguide", version, about = "Selective classifier-free guidance experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw endpoints for a range of seeds.
    Sample(CommonArgs),
    /// Slide an equal-width skip window across the loop.
    Sweep(CommonArgs),
    /// Simulated time and savings per skipped fraction.
    Bench(CommonArgs),
    /// Retune the guidance scale under a fixed skip fraction.
    Tune(CommonArgs),
    /// Parse and validate a config, print the resolved settings.
    ValidateConfig(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: out/<subcommand>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of seeds (runs use master_seed + index).
    #[arg(long)]
    seeds: Option<usize>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Skip the unconditional branch in the last FRAC of iterations.
    #[arg(long, value_name = "FRAC")]
    skip_last: Option<f64>,
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    sampler: Option<SamplerKind>,
    #[arg(long)]
    steps: Option<usize>,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            steps: self.steps,
            seed: self.seed,
            seeds: self.seeds,
            skip_last: self.skip_last,
            scale: self.scale,
            sampler: self.sampler,
        }
    }

    fn settings(&self) -> Result<Settings, ConfigError> {
        match &self.config {
            Some(path) => Settings::from_file(path, &self.overrides()),
            None => Settings::from_overrides(&self.overrides()),
        }
    }
}

#[derive(Debug)]
enum CliError {
    Config(ConfigError),
    Runtime(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e)
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        match e {
            // experiment geometry comes straight from `experiment.*` keys
            crate::Error::InvalidSweep(m) | crate::Error::InvalidExperiment(m) => {
                Self::Config(ConfigError::InvalidValue {
                    key: "experiment".into(),
                    message: m,
                })
            }
            other => Self::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

/// Parse `argv` (including the program name) and run. Returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            EXIT_OK
        }
        Err(CliError::Config(e)) => {
            eprintln!("config error: {e}");
            EXIT_CONFIG
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn dispatch(command: Command) -> Result<String, CliError> {
    match command {
        Command::Sample(args) => cmd_sample(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Bench(args) => cmd_bench(&args),
        Command::Tune(args) => cmd_tune(&args),
        Command::ValidateConfig(args) => {
            let settings = args.settings()?;
            print!("{}", settings.echo());
            Ok(format!(
                "config ok: {} steps, scale {}, {} mixture components",
                settings.schedule.num_steps,
                settings.guidance.scale,
                settings.mixture.components.len()
            ))
        }
    }
}

fn prepare_out(args: &CommonArgs, name: &str, settings: &Settings) -> Result<PathBuf, CliError> {
    let dir = args
        .out
        .clone()
        .unwrap_or_else(|| Path::new("out").join(name));
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.echo"), settings.echo())?;
    Ok(dir)
}

fn write_json<T: Serialize>(dir: &Path, command: &str, body: &T) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct Envelope<'a, T> {
        schema_version: u32,
        command: &'a str,
        #[serde(flatten)]
        body: &'a T,
    }
    let text = serde_json::to_string_pretty(&Envelope {
        schema_version: SCHEMA_VERSION,
        command,
        body,
    })
    .map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(dir.join("summary.json"), text + "\n")?;
    Ok(())
}

fn write_csv(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn cmd_sample(args: &CommonArgs) -> Result<String, CliError> {
    let settings = args.settings()?;
    let config = settings.run_config()?;
    let dir = prepare_out(args, "sample", &settings)?;
    let seeds = run_seeds(config.seed, settings.experiment.seeds);
    let runs = run_batch(&config, &seeds)?;
    let d = config.mixture.dim();
    let n = config.schedule.num_steps();

    let coords: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    let mut header = vec!["seed".to_string()];
    header.extend(coords.iter().cloned());
    header.extend(strings(&["nfe", "simulated_time"]));
    write_csv(
        &dir.join("endpoints.csv"),
        &header,
        runs.iter().map(|r| {
            let mut row = vec![r.seed.to_string()];
            row.extend(r.endpoint.iter().map(f64::to_string));
            row.push(r.nfe_total.to_string());
            row.push(r.simulated_time.to_string());
            row
        }),
    )?;

    if config.record_trajectory {
        let mut header = strings(&["seed", "step", "t", "skipped"]);
        header.extend(coords);
        let rows = runs.iter().flat_map(|r: &Trajectory| {
            let states = r.states.as_deref().unwrap_or_default();
            states.iter().enumerate().map(move |(k, x)| {
                let skipped = k > 0 && r.skip_flags[k - 1];
                let mut row = vec![r.seed.to_string(), k.to_string(), (n - k).to_string(), skipped.to_string()];
                row.extend(x.iter().map(f64::to_string));
                row
            })
        });
        write_csv(&dir.join("trajectory.csv"), &header, rows)?;
    }

    #[derive(Serialize)]
    struct SampleSummary {
        n_seeds: usize,
        num_steps: usize,
        skipped_iters: usize,
        nfe: usize,
        simulated_time: f64,
    }
    let first = &runs[0];
    write_json(
        &dir,
        "sample",
        &SampleSummary {
            n_seeds: runs.len(),
            num_steps: n,
            skipped_iters: first.skipped_iters(),
            nfe: first.nfe_total,
            simulated_time: first.simulated_time,
        },
    )?;
    let wall: f64 = runs.iter().map(|r| r.wall_time).sum();
    Ok(format!(
        "sample: {} runs, nfe {} per run, {:.4} simulated s per run, {:.4} wall s total -> {}",
        runs.len(),
        first.nfe_total,
        first.simulated_time,
        wall,
        dir.display()
    ))
}

fn cmd_sweep(args: &CommonArgs) -> Result<String, CliError> {
    let settings = args.settings()?;
    let config = settings.run_config()?;
    let dir = prepare_out(args, "sweep", &settings)?;
    let ex = &settings.experiment;
    let res = window_sweep(&config, ex.width_frac, ex.n_positions, ex.seeds)?;
    write_csv(
        &dir.join("sweep.csv"),
        &strings(&[
            "start_frac",
            "end_frac",
            "skipped_iters",
            "nfe",
            "simulated_time",
            "endpoint_mse",
            "sliced_w2",
            "sliced_w2_baseline",
        ]),
        res.positions.iter().map(|p| {
            vec![
                p.start_frac.to_string(),
                p.end_frac.to_string(),
                p.skipped_iters.to_string(),
                p.nfe.to_string(),
                p.simulated_time.to_string(),
                p.endpoint_mse.to_string(),
                p.sliced_w2.to_string(),
                p.sliced_w2_baseline.to_string(),
            ]
        }),
    )?;
    write_json(&dir, "sweep", &res)?;
    let mses: Vec<String> = res.positions.iter().map(|p| format!("{:.4}", p.endpoint_mse)).collect();
    Ok(format!(
        "sweep: {} windows of {} iterations, endpoint mse [{}] -> {}",
        res.positions.len(),
        res.window_iters,
        mses.join(", "),
        dir.display()
    ))
}

fn cmd_bench(args: &CommonArgs) -> Result<String, CliError> {
    let settings = args.settings()?;
    let config = settings.run_config()?;
    let dir = prepare_out(args, "bench", &settings)?;
    let ex = &settings.experiment;
    let res = bench(&config, &ex.fractions, ex.seeds, ex.warmup)?;
    write_csv(
        &dir.join("bench.csv"),
        &strings(&[
            "f",
            "f_effective",
            "skipped_iters",
            "nfe",
            "simulated_time",
            "saving",
            "predicted_saving",
            "endpoint_mse",
            "sliced_w2",
        ]),
        res.rows.iter().map(|r| {
            vec![
                r.f.to_string(),
                r.f_effective.to_string(),
                r.skipped_iters.to_string(),
                r.nfe.to_string(),
                r.simulated_time.to_string(),
                r.saving.to_string(),
                r.predicted_saving.to_string(),
                r.endpoint_mse.to_string(),
                r.sliced_w2.to_string(),
            ]
        }),
    )?;

    #[derive(Serialize)]
    struct BenchSummary<'a> {
        fitted_u: Option<f64>,
        #[serde(flatten)]
        result: &'a crate::experiments::BenchResult,
    }
    write_json(
        &dir,
        "bench",
        &BenchSummary {
            fitted_u: res.fit.map(|f| f.u),
            result: &res,
        },
    )?;
    let savings: Vec<String> = res
        .rows
        .iter()
        .skip(1)
        .map(|r| format!("{:.1}%", 100.0 * r.saving))
        .collect();
    let wall: f64 = res.rows.iter().map(|r| r.wall_time).sum();
    Ok(format!(
        "bench: baseline {:.2} simulated s, savings [{}], fitted u {} ({:.4} wall s per image) -> {}",
        res.baseline_time,
        savings.join(", "),
        res.fit.map_or("n/a".to_string(), |f| format!("{:.4}", f.u)),
        wall / res.rows.len() as f64,
        dir.display()
    ))
}

fn cmd_tune(args: &CommonArgs) -> Result<String, CliError> {
    let settings = args.settings()?;
    let config = settings.run_config()?;
    let dir = prepare_out(args, "tune", &settings)?;
    let ex = &settings.experiment;
    let fraction = args.skip_last.unwrap_or(ex.tune_fraction);
    let res = gs_tune(&config, fraction, &ex.scale_grid, ex.seeds)?;
    write_csv(
        &dir.join("tune.csv"),
        &strings(&["scale", "endpoint_mse", "sliced_w2"]),
        res.curve.iter().map(|p| {
            vec![
                p.scale.to_string(),
                p.endpoint_mse.to_string(),
                p.sliced_w2.to_string(),
            ]
        }),
    )?;
    write_json(&dir, "tune", &res)?;
    Ok(format!(
        "tune: skip last {}, best scale {} (endpoint mse {:.4}) vs baseline scale {} -> {}",
        res.f,
        res.best_scale,
        res.best_endpoint_mse,
        res.baseline_scale,
        dir.display()
    ))
}
