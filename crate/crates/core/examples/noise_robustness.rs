//! Mean NRMSE of both models on the desk patients as measurement noise grows.
//!
//! `cargo run --release --example noise_robustness`

use ventmech::ident_pipeline::PipelineConfig;
use ventmech::validation::{desk_patients, region_spec, run_scenario, Placement};

fn main() -> ventmech::Result<()> {
    let cfg = PipelineConfig::default();
    println!(
        "{:<10} {:<7} {:>6} {:>8} {:>8}",
        "patient", "region", "noise", "LM%", "NLM%"
    );
    for patient in desk_patients() {
        for placement in Placement::ALL {
            for noise in [0.0, 3.0, 5.0, 10.0] {
                let spec = region_spec(&patient, placement, (noise, noise), 42);
                let run = run_scenario(&spec, &cfg)?;
                let (lm, nlm) = run.mean_nrmse();
                println!(
                    "{:<10} {:<7} {:>5}% {:>8.2} {:>8.2}",
                    patient.name,
                    placement.name(),
                    noise,
                    lm,
                    nlm
                );
            }
        }
    }
    Ok(())
}
