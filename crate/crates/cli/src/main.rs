use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use fedns::simulator::{export_report, read_metrics, run_experiment};
use fedns::sweep::{parse_sweep, run_sweep, SweepOptions, WORKERS_ENV};

/// Federated learning experiments with noise sifting.
#[derive(Parser)]
#[command(name = "fedns", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its report files.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every cell of a sweep spec.
    Sweep {
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Parallel experiments.
        #[arg(long, env = WORKERS_ENV)]
        workers: Option<usize>,
    },
    /// Print the summary of a report or sweep directory.
    Inspect { dir: PathBuf },
}

fn run(config: &Path, out: &Path) -> Result<()> {
    let cfg = fedns::parse_config(config)?;
    let outcome = run_experiment::<f64>(&cfg)?;
    let r = &outcome.report;
    export_report(r, out)?;
    let detection = r
        .detection_accuracy
        .map_or_else(|| "n/a".to_string(), |a| format!("{a:.4}"));
    println!(
        "final_accuracy={:.4} detection_accuracy={detection} rounds={} seconds={:.1}",
        r.final_accuracy(),
        r.rounds.len(),
        r.wall_clock_seconds
    );
    Ok(())
}

fn sweep(spec_path: &Path, out: &Path, workers: Option<usize>) -> Result<bool> {
    let spec = parse_sweep(spec_path)?;
    let outcome = run_sweep(&spec, out, SweepOptions { workers, shuffle_seed: None })?;
    let failed = outcome.runs.iter().filter(|r| r.outcome.is_err()).count();
    for r in outcome.runs.iter().filter(|r| r.outcome.is_err()) {
        eprintln!("cell {} repeat {} failed: {}", r.cell, r.repeat, r.outcome.as_ref().unwrap_err());
    }
    println!(
        "runs={} failed={failed} aggregate={}",
        outcome.runs.len(),
        out.join("aggregate.csv").display()
    );
    Ok(failed == 0)
}

fn print_csv_table(path: &Path) -> Result<()> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.len()).max().unwrap_or(0))
        .collect();
    for row in rows {
        let line: Vec<String> = row.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
        println!("{}", line.join("  ").trim_end());
    }
    Ok(())
}

fn inspect(dir: &Path) -> Result<()> {
    let aggregate = dir.join("aggregate.csv");
    if aggregate.exists() {
        return print_csv_table(&aggregate);
    }
    let summary = dir.join("summary.txt");
    let text = fs::read_to_string(&summary).with_context(|| format!("reading {}", summary.display()))?;
    print!("{text}");
    println!();
    println!("{:>5}  {:>8}  {:>8}  {:>7}  detection", "round", "accuracy", "loss", "clients");
    for m in read_metrics(dir)? {
        let status = serde_status(&m.detection);
        println!(
            "{:>5}  {:>8.4}  {:>8.4}  {:>7}  {status}",
            m.round,
            m.test_accuracy,
            m.global_loss,
            m.participating.len()
        );
    }
    Ok(())
}

fn serde_status(s: &fedns::simulator::DetectionStatus) -> &'static str {
    use fedns::simulator::DetectionStatus::*;
    match s {
        Pending => "pending",
        Done => "done",
        Abstained => "abstained",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out } => run(&config, &out).map(|_| true),
        Command::Sweep { spec, out, workers } => sweep(&spec, &out, workers),
        Command::Inspect { dir } => inspect(&dir).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
