use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ventmech::ident_pipeline::{PipelineConfig, ThresholdMode};
use ventmech::workflow::{
    cmd_analyze, cmd_identify, cmd_simulate, cmd_validate, SimulateOverrides,
};

#[derive(Parser)]
#[command(
    name = "ventmech",
    version,
    about = "Breath-by-breath respiratory mechanics"
)]
struct Cli {
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a patient spec to a recording CSV plus a `.truth.json` sidecar.
    Simulate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Pressure noise, percent of peak-to-peak.
        #[arg(long)]
        noise_p: Option<f64>,
        /// Flow noise, percent of peak-to-peak.
        #[arg(long)]
        noise_f: Option<f64>,
    },
    /// Fit every breath of a recording and write one JSON line per breath.
    Identify {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// `ventilator` or `fixed:<percent>`.
        #[arg(long, default_value = "ventilator")]
        threshold: ThresholdMode,
        #[arg(long)]
        no_warm_start: bool,
    },
    /// Tables, titration summary and P-V exports from a fit file.
    Analyze {
        /// Fits in JSON lines.
        #[arg(long)]
        input: PathBuf,
        /// Recording the fits came from.
        #[arg(long)]
        recording: PathBuf,
        /// Output directory.
        #[arg(long)]
        output: PathBuf,
        /// Ground-truth sidecar; defaults to `<recording>.truth.json` if present.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Run the bundled scenario battery and print a pass/fail table.
    Validate {
        /// Noiseless scenarios only.
        #[arg(long)]
        quick: bool,
    },
}

fn run(cli: Cli) -> ventmech::Result<bool> {
    match cli.command {
        Command::Simulate {
            input,
            output,
            seed,
            noise_p,
            noise_f,
        } => {
            let r = cmd_simulate(
                &input,
                &output,
                SimulateOverrides {
                    seed,
                    noise_pct_p: noise_p,
                    noise_pct_f: noise_f,
                },
            )?;
            println!(
                "{} samples, {} breaths -> {}",
                r.samples,
                r.cycles,
                r.recording.display()
            );
            if cli.verbose {
                eprintln!("ground truth -> {}", r.truth.display());
            }
        }
        Command::Identify {
            input,
            output,
            threshold,
            no_warm_start,
        } => {
            threshold.validate()?;
            let cfg = PipelineConfig {
                threshold_mode: threshold,
                warm_start: !no_warm_start,
                ..PipelineConfig::default()
            };
            let summary = cmd_identify(&input, &output, &cfg)?;
            println!("{summary}");
        }
        Command::Analyze {
            input,
            recording,
            output,
            truth,
        } => {
            let r = cmd_analyze(&input, &recording, &output, truth.as_deref())?;
            print!("{}", r.report);
            if let Some(t) = &r.titration {
                println!(
                    "best PEEP (linear compliance): {} cmH2O",
                    t.best_peep_linear
                );
            }
            if cli.verbose {
                for p in &r.outputs {
                    eprintln!("wrote {}", p.display());
                }
            }
        }
        Command::Validate { quick } => {
            let r = cmd_validate(quick);
            if cli.verbose {
                print!("{}", r.table);
            } else {
                for row in r.rows.iter().filter(|r| !r.passed) {
                    println!(
                        "FAIL {} {} {} = {}",
                        row.criterion, row.scenario, row.check, row.value
                    );
                }
            }
            let n_pass = r.rows.iter().filter(|r| r.passed).count();
            println!("{n_pass}/{} checks passed", r.rows.len());
            return Ok(r.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
