//! Identifies every breath of a recording CSV and prints the fit table.
//! Without an argument a quadratic-model patient is simulated first.
//!
//! `cargo run --example identify_recording -- [recording.csv]`

use ventmech::analysis::{format_report, DEFAULT_EPS_LIN};
use ventmech::ident_pipeline::{run_pipeline, PipelineConfig, PipelineSummary};
use ventmech::patient_sim::simulate_recording;
use ventmech::signal_io::{load_recording, segment_cycles, RecordingFormat};
use ventmech::validation::quadratic_spec;

fn main() -> ventmech::Result<()> {
    let recording = match std::env::args().nth(1) {
        Some(path) => load_recording(path, RecordingFormat::Csv)?,
        None => simulate_recording(&quadratic_spec())?.recording,
    };
    let cycles = segment_cycles(&recording);
    println!(
        "{} breaths at {} Hz",
        cycles.len(),
        recording.sample_rate_hz
    );
    let fits = run_pipeline(&cycles, &PipelineConfig::default())?;
    print!("{}", format_report(&fits, DEFAULT_EPS_LIN));
    println!("{}", PipelineSummary::from_fits(&fits));
    Ok(())
}
