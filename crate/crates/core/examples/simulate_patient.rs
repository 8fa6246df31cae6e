//! Simulates a sigmoid patient at three PEEP levels and writes the
//! recordings with their ground-truth sidecars.
//!
//! `cargo run --example simulate_patient -- [out_dir]`

use std::path::PathBuf;

use ventmech::patient_sim::simulate_recording;
use ventmech::signal_io::save_recording;
use ventmech::validation::{desk_patients, region_spec, Placement};
use ventmech::workflow::truth_path;

fn main() -> ventmech::Result<()> {
    let out = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "target/sim".into()),
    );
    std::fs::create_dir_all(&out).map_err(|e| ventmech::Error::Argument(e.to_string()))?;
    let patient = desk_patients()[0];
    for placement in Placement::ALL {
        let spec = region_spec(&patient, placement, (0.0, 0.0), 1);
        let sim = simulate_recording(&spec)?;
        let path = out.join(format!("{}.csv", placement.name()));
        save_recording(&sim.recording, &path)?;
        sim.truth.save(truth_path(&path))?;
        let c = &sim.truth.cycles[0];
        println!(
            "{:<7} PEEP {:>5.2} cmH2O  V_eq {:>7.1} ml  VT {:>6.1} ml  reference a2 {:+.2e}  -> {}",
            placement.name(),
            c.peep_cmh2o,
            c.v_eq_ml.unwrap_or(f64::NAN),
            c.vt_ml,
            c.a2_ref,
            path.display()
        );
    }
    Ok(())
}
