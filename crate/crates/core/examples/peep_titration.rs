//! Staircase PEEP titration: per-level means and the best level.
//!
//! `cargo run --release --example peep_titration`

use ventmech::analysis::{summarize_titration, DEFAULT_EPS_LIN};
use ventmech::ident_pipeline::PipelineConfig;
use ventmech::validation::{run_scenario, titration_spec};

fn main() -> ventmech::Result<()> {
    let spec = titration_spec();
    let run = run_scenario(&spec, &PipelineConfig::default())?;
    let summary =
        summarize_titration(&run.fits, &run.cycles, Some(&spec.program), DEFAULT_EPS_LIN)?;
    println!(
        "{:>5} {:<11} {:>4} {:>9} {:>10} {:>7} {:>7} {:>15}",
        "PEEP", "leg", "n", "a1", "a2", "C", "NLM%", "region"
    );
    for l in &summary.levels {
        println!(
            "{:>5} {:<11} {:>4} {:>9.5} {:>10.2e} {:>7.1} {:>7.2} {:>15}{}",
            l.peep_cmh2o,
            format!("{:?}", l.leg).to_lowercase(),
            l.n_accepted,
            l.mean_a1,
            l.mean_a2,
            l.mean_c_linear,
            l.mean_nrmse_nlm,
            l.region.region.to_string(),
            if l.flagged { " *" } else { "" }
        );
    }
    println!("best PEEP: {} cmH2O", summary.best_peep_linear);
    for n in &summary.notes {
        println!("note: {n}");
    }
    Ok(())
}
