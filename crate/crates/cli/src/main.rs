mod config;
mod error;
mod experiment;
mod presets;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::experiment::{execute, Artifacts, Mode, OutputDir};
use crate::presets::{isserlis_audit, isserlis_csv, preset, Preset, PRESET_NAMES};

/// Simulate rough processes and measure their regularized odd variations.
#[derive(Parser)]
#[command(name = "oddvar", version)]
struct Cli {
    /// Worker threads; 0 uses every available core. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Output directory; defaults to `oddvar-out/<preset or config name>`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also write the sampled paths to `ensemble.bin`.
    #[arg(long, global = true)]
    dump_ensemble: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a named experiment.
    Preset {
        /// One of the names listed by `oddvar preset --help`.
        #[arg(long_help = format!("One of: {}", PRESET_NAMES.join(", ")))]
        name: String,
    },
    /// Monte Carlo sweep, quadrature and condition checks for a TOML config.
    Run { config: PathBuf },
    /// Condition checks only.
    Check { config: PathBuf },
    /// Quadrature only.
    Theory { config: PathBuf },
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'static str,
    workers: usize,
    wall_time_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<&'a ExperimentConfig>,
    files: Vec<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let workers = match cli.workers {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        w => w,
    };
    match oddvar::parallel::with_workers(workers, || dispatch(&cli, workers))
        .map_err(CliError::from)
        .and_then(|r| r)
    {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("oddvar: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(cli: &Cli, workers: usize) -> Result<(), CliError> {
    let started = Instant::now();
    let (mode, path, verb) = match &cli.command {
        Command::Preset { name } => return run_preset(cli, name, workers, started),
        Command::Run { config } => (Mode::Run, config, "run"),
        Command::Check { config } => (Mode::Check, config, "check"),
        Command::Theory { config } => (Mode::Theory, config, "theory"),
    };
    let resolved = ExperimentConfig::load(path)?.resolve()?;
    let root = cli
        .out
        .clone()
        .or_else(|| resolved.config.output.clone())
        .unwrap_or_else(|| default_root(path.file_stem().map_or("experiment".as_ref(), |s| s.as_ref())));
    let mut out = OutputDir::create(&root)?;
    let artifacts = execute(&resolved, mode, &mut out, cli.dump_ensemble, &[])?;
    print_summary(&root, &artifacts);
    let manifest = Manifest {
        command: verb,
        version: env!("CARGO_PKG_VERSION"),
        workers,
        wall_time_seconds: started.elapsed().as_secs_f64(),
        config: Some(&resolved.config),
        files: Vec::new(),
    };
    finish(out, manifest)
}

fn default_root(stem: &Path) -> PathBuf {
    Path::new("oddvar-out").join(stem)
}

/// Writes `manifest.json` listing every file written before it.
fn finish(mut out: OutputDir, mut manifest: Manifest) -> Result<(), CliError> {
    manifest.files = out.files().to_vec();
    manifest.files.push(out.path().join("manifest.json"));
    out.write_json("manifest.json", &manifest)
}

fn run_preset(cli: &Cli, name: &str, workers: usize, started: Instant) -> Result<(), CliError> {
    let root = cli.out.clone().unwrap_or_else(|| default_root(name.as_ref()));
    let preset = preset(name)?;
    let mut out = OutputDir::create(&root)?;
    match preset {
        Preset::IsserlisAudit => {
            let audit = isserlis_audit(6)?;
            out.write_json("isserlis.json", &audit)?;
            out.write("isserlis.csv", isserlis_csv(&audit).as_bytes())?;
            println!(
                "{name}: pairing audit {}",
                if audit.passed { "passed" } else { "FAILED" }
            );
        }
        Preset::Runs(runs) => {
            let mut summary = String::from(
                "label,model,n_paths,mc_slope,mc_half_width,quadrature_slope,final_over_initial,checks_passed\n",
            );
            for run in runs {
                let run_root = root.join(&run.label);
                let mut run_out = OutputDir::create(&run_root)?;
                let run_started = Instant::now();
                let resolved = run.config.resolve()?;
                let artifacts = execute(&resolved, Mode::Run, &mut run_out, cli.dump_ensemble, &run.expectations)?;
                print_summary(&run_root, &artifacts);
                summary.push_str(&summary_row(&run.label, &resolved.config, &artifacts));
                let manifest = Manifest {
                    command: "preset",
                    version: env!("CARGO_PKG_VERSION"),
                    workers,
                    wall_time_seconds: run_started.elapsed().as_secs_f64(),
                    config: Some(&resolved.config),
                    files: Vec::new(),
                };
                finish(run_out, manifest)?;
            }
            out.write("summary.csv", summary.as_bytes())?;
        }
    }
    let manifest = Manifest {
        command: "preset",
        version: env!("CARGO_PKG_VERSION"),
        workers,
        wall_time_seconds: started.elapsed().as_secs_f64(),
        config: None,
        files: Vec::new(),
    };
    finish(out, manifest)
}

fn optional(value: Option<f64>) -> String {
    value.map_or_else(String::new, |v| v.to_string())
}

fn summary_row(label: &str, config: &ExperimentConfig, artifacts: &Artifacts) -> String {
    let fit = artifacts.ladder.as_ref().and_then(|l| l.fit.as_ref());
    format!(
        "{label},\"{}\",{},{},{},{},{},{}\n",
        config.model,
        config.n_paths,
        optional(fit.map(|f| f.slope)),
        optional(fit.map(|f| f.half_width)),
        optional(artifacts.theory.as_ref().and_then(|t| t.slope)),
        optional(artifacts.ladder.as_ref().map(|l| l.final_over_initial())),
        artifacts.checks_passed()
    )
}

fn print_summary(root: &Path, artifacts: &Artifacts) {
    println!("{}", root.display());
    if let Some(ladder) = &artifacts.ladder {
        for record in &ladder.records {
            println!(
                "  eps {:<12} mean {:+.6e} mean_sq {:.6e}",
                record.eps, record.mean, record.mean_sq
            );
        }
        if let Some(fit) = &ladder.fit {
            println!("  slope {:.4} ± {:.4}", fit.slope, fit.half_width);
        }
        for a in &ladder.annotations {
            println!("  [{}] {}: {}", if a.passed { "pass" } else { "FAIL" }, a.id, a.detail);
        }
    }
    if let Some(theory) = &artifacts.theory {
        match (&theory.omitted, theory.slope) {
            (Some(why), _) => println!("  quadrature omitted: {why}"),
            (None, Some(slope)) => println!("  quadrature slope {slope:.4}"),
            (None, None) => {}
        }
    }
    if let Some(conditions) = &artifacts.conditions {
        for verdict in &conditions.verdicts {
            println!("  {verdict}");
        }
        for note in &conditions.skipped {
            println!("  skipped {note}");
        }
    }
}
