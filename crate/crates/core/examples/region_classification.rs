//! Fits the hysteresis scenarios from FRC towards TLC and compares the
//! fitted region with the one implied by the loop-free curve.
//!
//! `cargo run --release --example region_classification`

use ventmech::analysis::{classify_quadratic, DEFAULT_EPS_LIN};
use ventmech::ident_pipeline::PipelineConfig;
use ventmech::validation::{hysteresis_scenarios, run_scenario};

fn main() -> ventmech::Result<()> {
    println!(
        "{:<24} {:>9} {:>10} {:>7} {:>15} {:>15}",
        "scenario", "a1", "a2", "ratio", "fitted", "expected"
    );
    for sc in hysteresis_scenarios() {
        let run = run_scenario(&sc.spec, &PipelineConfig::default())?;
        let (a1, a2, vt) = run.mean_quadratic();
        let call = classify_quadratic(a1, a2, vt, DEFAULT_EPS_LIN)?;
        let t = &run.sim.truth.cycles[run.sim.truth.cycles.len() / 2];
        let truth = classify_quadratic(t.a1_ref, t.a2_ref, t.vt_ml, DEFAULT_EPS_LIN)?;
        println!(
            "{:<24} {:>9.5} {:>10.2e} {:>7.3} {:>15} {:>15}",
            sc.name,
            a1,
            a2,
            call.curvature_ratio,
            call.region.to_string(),
            truth.region.to_string()
        );
    }
    Ok(())
}
