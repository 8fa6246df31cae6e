//! File-level operations behind the `ventmech` subcommands.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::analysis::{
    cycle_legs, export_pv_curves, fit_comparison, format_report, summarize_titration,
    write_comparison_csv, write_titration_csv, TitrationSummary, DEFAULT_EPS_LIN,
};
use crate::error::{Error, Result};
use crate::ident_pipeline::{
    read_jsonl, run_pipeline, write_jsonl, FitResult, PipelineConfig, PipelineSummary,
};
use crate::patient_sim::{simulate_recording, GroundTruth, PatientSpec};
use crate::signal_io::{
    load_recording, save_recording, segment_cycles, BreathCycle, RecordingFormat,
};
use crate::validation::{format_rows, validate_all, ValidationRow};

/// Ground-truth sidecar written next to a simulated recording.
pub fn truth_path(recording: &Path) -> PathBuf {
    let mut s = recording.as_os_str().to_owned();
    s.push(".truth.json");
    PathBuf::from(s)
}

/// Optional overrides applied to a loaded patient spec.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimulateOverrides {
    pub seed: Option<u64>,
    pub noise_pct_p: Option<f64>,
    pub noise_pct_f: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateReport {
    pub recording: PathBuf,
    pub truth: PathBuf,
    pub samples: usize,
    pub cycles: usize,
}

pub fn cmd_simulate(
    spec_path: &Path,
    out: &Path,
    overrides: SimulateOverrides,
) -> Result<SimulateReport> {
    let mut spec = PatientSpec::load(spec_path)?;
    if let Some(s) = overrides.seed {
        spec.seed = s;
    }
    if let Some(p) = overrides.noise_pct_p {
        spec.program.noise_pct_p = p;
    }
    if let Some(f) = overrides.noise_pct_f {
        spec.program.noise_pct_f = f;
    }
    let sim = simulate_recording(&spec)?;
    save_recording(&sim.recording, out)?;
    let truth = truth_path(out);
    sim.truth.save(&truth)?;
    Ok(SimulateReport {
        recording: out.to_path_buf(),
        truth,
        samples: sim.recording.len(),
        cycles: sim.truth.cycles.len(),
    })
}

fn segmented(recording: &Path) -> Result<Vec<BreathCycle>> {
    let ts = load_recording(recording, RecordingFormat::Csv)?;
    let cycles = segment_cycles(&ts);
    if cycles.is_empty() {
        return Err(Error::Empty(format!(
            "no complete cycles in {}",
            recording.display()
        )));
    }
    Ok(cycles)
}

pub fn cmd_identify(input: &Path, out: &Path, cfg: &PipelineConfig) -> Result<PipelineSummary> {
    let cycles = segmented(input)?;
    let fits = run_pipeline(&cycles, cfg)?;
    let file = File::create(out).map_err(|e| Error::io(out, e))?;
    let mut w = BufWriter::new(file);
    write_jsonl(&fits, &mut w)?;
    w.flush().map_err(|e| Error::io(out, e))?;
    Ok(PipelineSummary::from_fits(&fits))
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalyzeReport {
    pub outputs: Vec<PathBuf>,
    pub report: String,
    pub titration: Option<TitrationSummary>,
}

/// Comparison table, titration summary, P-V exports and a text report.
/// The ground-truth sidecar, when present, supplies the PEEP schedule.
pub fn cmd_analyze(
    fits_path: &Path,
    recording: &Path,
    out_dir: &Path,
    truth: Option<&Path>,
) -> Result<AnalyzeReport> {
    let file = File::open(fits_path).map_err(|e| Error::io(fits_path, e))?;
    let fits: Vec<FitResult> = read_jsonl(BufReader::new(file))?;
    let cycles = segmented(recording)?;
    let aligned =
        fits.len() == cycles.len() && fits.iter().enumerate().all(|(i, f)| f.cycle_index == i);
    if !aligned {
        return Err(Error::Argument(format!(
            "{} fits do not match the {} cycles of {}",
            fits.len(),
            cycles.len(),
            recording.display()
        )));
    }
    let sidecar = truth.map(Path::to_path_buf).or_else(|| {
        let p = truth_path(recording);
        p.exists().then_some(p)
    });
    let truth = sidecar.map(GroundTruth::load).transpose()?;
    let program = truth.as_ref().map(|t| &t.spec.program);

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut outputs = Vec::new();

    let comparison = out_dir.join("fit_comparison.csv");
    write_comparison_csv(&fit_comparison(&fits), &comparison)?;
    outputs.push(comparison);

    let titration = match summarize_titration(&fits, &cycles, program, DEFAULT_EPS_LIN) {
        Ok(s) => {
            let csv = out_dir.join("titration.csv");
            write_titration_csv(&s, &csv)?;
            let json = out_dir.join("titration_summary.json");
            let body = serde_json::to_string_pretty(&s)?;
            fs::write(&json, body).map_err(|e| Error::io(&json, e))?;
            outputs.push(csv);
            outputs.push(json);
            Some(s)
        }
        Err(Error::Empty(_)) => None,
        Err(e) => return Err(e),
    };

    let case = recording
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("recording");
    let legs = cycle_legs(&cycles, program);
    outputs.extend(export_pv_curves(&fits, &cycles, &legs, out_dir, case)?);

    let report = format_report(&fits, DEFAULT_EPS_LIN);
    let report_path = out_dir.join("report.txt");
    fs::write(&report_path, &report).map_err(|e| Error::io(&report_path, e))?;
    outputs.push(report_path);

    Ok(AnalyzeReport {
        outputs,
        report,
        titration,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidateReport {
    pub rows: Vec<ValidationRow>,
    pub table: String,
}

impl ValidateReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }
}

pub fn cmd_validate(quick: bool) -> ValidateReport {
    let rows = validate_all(quick);
    let table = format_rows(&rows);
    ValidateReport { rows, table }
}
