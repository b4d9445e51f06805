use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ensemble_copula::data::{generate_synthetic, save_dataset, SyntheticSpec};
use ensemble_copula::pipeline::{estimate_stage, forecast_stage, run_all, verify_stage, RunConfig, VerificationReport};
use ensemble_copula::{Error, Result};

/// Ensemble BMA marginals joined by a Gaussian copula: estimation,
/// forecasting and verification.
#[derive(Debug, Parser)]
#[command(name = "enscop", version)]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Restrict to these stations (comma separated).
    #[arg(long, global = true, value_delimiter = ',')]
    stations: Option<Vec<String>>,
    /// Worker threads.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate per-station correlation matrices from the calibration data.
    Estimate,
    /// Sample copula and independence forecasts for the test data.
    Forecast,
    /// Score all methods and write the reports.
    Verify,
    /// Estimate, forecast and verify.
    RunAll,
    /// Write a synthetic dataset from a spec file.
    Synth {
        spec: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(stations) = &cli.stations {
        cfg.stations = Some(stations.clone());
    }
    if let Some(jobs) = cli.jobs {
        cfg.jobs = Some(jobs as usize);
    }
    Ok(cfg)
}

fn print_report(report: &VerificationReport) {
    println!(
        "{:<14}{:>10}{:>10}{:>10}{:>10}{:>8}",
        "method", "ES", "EE", "Delta", "DS", "cases"
    );
    for r in &report.methods {
        let s = &r.summary;
        println!(
            "{:<14}{:>10.4}{:>10.4}{:>10.4}{:>10.4}{:>8}",
            r.method.name(),
            s.es,
            s.ee,
            s.delta,
            s.ds,
            s.cases
        );
    }
}

fn synth(spec_path: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let text = fs::read_to_string(spec_path).map_err(|e| Error::Io {
        path: spec_path.to_path_buf(),
        source: e,
    })?;
    let mut spec: SyntheticSpec = serde_json::from_str(&text).map_err(|e| Error::Synthetic(e.to_string()))?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let data = generate_synthetic(&spec)?;
    let (calibration, test) = data.split_at(spec.test_start());
    fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    save_dataset(&calibration, out.join("calibration.csv"))?;
    save_dataset(&test, out.join("test.csv"))?;
    let truth = serde_json::json!({
        "spec": spec,
        "correlation": spec.correlation_matrix()?.to_rows(),
        "calibration": calibration.manifest(),
        "test": test.manifest(),
    });
    let path = out.join("truth.json");
    fs::write(&path, serde_json::to_string_pretty(&truth)? + "\n").map_err(|e| Error::Io { path, source: e })?;
    println!(
        "wrote {} calibration and {} test station-days to {}",
        calibration.len(),
        test.len(),
        out.display()
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth { spec, out } => synth(spec, out, cli.seed),
        Command::Estimate => {
            let s = estimate_stage(&load_config(cli)?)?;
            println!("estimated {} correlation matrices", s.matrices.len());
            for (station, st) in &s.status {
                for w in &st.warnings {
                    eprintln!("warning: {station}: {w}");
                }
            }
            Ok(())
        }
        Command::Forecast => {
            let s = forecast_stage(&load_config(cli)?)?;
            println!("forecast {} station-days", s.cases.len());
            Ok(())
        }
        Command::Verify => {
            print_report(&verify_stage(&load_config(cli)?)?);
            Ok(())
        }
        Command::RunAll => {
            print_report(&run_all(&load_config(cli)?)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{report}");
            ExitCode::from(1)
        }
    }
}
