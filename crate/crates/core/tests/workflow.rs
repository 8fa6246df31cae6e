use std::path::{Path, PathBuf};
use std::process::Command;

use ventmech::ident_pipeline::{read_jsonl, PipelineConfig};
use ventmech::patient_sim::{GroundTruth, PatientSpec, PeepStep};
use ventmech::signal_io::{load_recording, save_recording, RecordingFormat};
use ventmech::workflow::{cmd_analyze, cmd_identify, cmd_simulate, truth_path, SimulateOverrides};
use ventmech::Error;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(format!("{name}.json"))
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ventmech"))
}

#[test]
fn simulate_identify_analyze_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("tit.csv");
    let fits = dir.path().join("fits.jsonl");
    let out = dir.path().join("out");

    let sim = cmd_simulate(&scenario("titration"), &rec, SimulateOverrides::default()).unwrap();
    assert_eq!(sim.truth, truth_path(&rec));
    let truth = GroundTruth::load(&sim.truth).unwrap();
    assert_eq!(truth.cycles.len(), sim.cycles);

    let summary = cmd_identify(&rec, &fits, &PipelineConfig::default()).unwrap();
    assert_eq!(summary.cycles, sim.cycles);
    let parsed = read_jsonl(std::io::BufReader::new(std::fs::File::open(&fits).unwrap())).unwrap();
    assert_eq!(parsed.len(), sim.cycles);

    let report = cmd_analyze(&fits, &rec, &out, None).unwrap();
    let names: Vec<String> = report
        .outputs
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    for expected in [
        "fit_comparison.csv",
        "titration.csv",
        "titration_summary.json",
        "tit_ascending_pv.csv",
        "tit_descending_pv.csv",
        "report.txt",
    ] {
        assert!(
            names.iter().any(|n| n == expected),
            "missing {expected} in {names:?}"
        );
        assert!(out.join(expected).exists());
    }
    assert_eq!(report.titration.unwrap().best_peep_linear, 15.0);
}

#[test]
fn seed_and_noise_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let over = |seed| SimulateOverrides {
        seed: Some(seed),
        noise_pct_p: Some(3.0),
        noise_pct_f: Some(3.5),
    };
    cmd_simulate(&scenario("sigmoid_linear"), &a, over(7)).unwrap();
    cmd_simulate(&scenario("sigmoid_linear"), &b, over(8)).unwrap();
    let ta = GroundTruth::load(truth_path(&a)).unwrap();
    assert_eq!(ta.spec.seed, 7);
    assert_eq!(ta.spec.program.noise_pct_p, 3.0);
    let ra = load_recording(&a, RecordingFormat::Csv).unwrap();
    let rb = load_recording(&b, RecordingFormat::Csv).unwrap();
    assert_ne!(ra.pressure, rb.pressure);
}

#[test]
fn mismatched_fits_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("lin.csv");
    let other = dir.path().join("lip.csv");
    let fits = dir.path().join("fits.jsonl");
    cmd_simulate(
        &scenario("sigmoid_linear"),
        &rec,
        SimulateOverrides::default(),
    )
    .unwrap();
    cmd_identify(&rec, &fits, &PipelineConfig::default()).unwrap();

    let mut spec = PatientSpec::load(scenario("sigmoid_lip")).unwrap();
    spec.program.peep_schedule[0].n_cycles = 4;
    let spec_path = dir.path().join("short.json");
    spec.save(&spec_path).unwrap();
    cmd_simulate(&spec_path, &other, SimulateOverrides::default()).unwrap();

    let err = cmd_analyze(&fits, &other, &dir.path().join("out"), None).unwrap_err();
    assert!(matches!(err, Error::Argument(_)), "{err}");
}

#[test]
fn recording_without_breaths_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("flat.csv");
    let ts =
        ventmech::signal_io::TimeSeries::new(100.0, 0.0, vec![5.0; 500], vec![0.0; 500]).unwrap();
    save_recording(&ts, &rec).unwrap();
    let err = cmd_identify(
        &rec,
        &dir.path().join("f.jsonl"),
        &PipelineConfig::default(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Empty(_)), "{err}");
}

#[test]
fn single_breath_gives_single_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = PatientSpec::load(scenario("sigmoid_linear")).unwrap();
    spec.program.peep_schedule = vec![PeepStep {
        peep_cmh2o: 13.0,
        n_cycles: 1,
    }];
    let spec_path = dir.path().join("one.json");
    spec.save(&spec_path).unwrap();
    let rec = dir.path().join("one.csv");
    let fits = dir.path().join("one.jsonl");
    cmd_simulate(&spec_path, &rec, SimulateOverrides::default()).unwrap();
    let summary = cmd_identify(&rec, &fits, &PipelineConfig::default()).unwrap();
    assert_eq!(summary.cycles, 1);
    let out = dir.path().join("out");
    let report = cmd_analyze(&fits, &rec, &out, None).unwrap();
    let rows = std::fs::read_to_string(out.join("fit_comparison.csv")).unwrap();
    assert_eq!(rows.lines().count(), 2, "{rows}");
    assert_eq!(report.titration.unwrap().levels.len(), 1);
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("r.csv");
    let fits = dir.path().join("r.jsonl");
    let ok = bin()
        .args(["simulate", "--input"])
        .arg(scenario("sigmoid_uip"))
        .arg("--output")
        .arg(&rec)
        .args(["--seed", "3", "--noise-p", "3", "--noise-f", "3.5"])
        .status()
        .unwrap();
    assert!(ok.success());
    let ok = bin()
        .args(["identify", "--threshold", "fixed:50", "--input"])
        .arg(&rec)
        .arg("--output")
        .arg(&fits)
        .status()
        .unwrap();
    assert!(ok.success());
    let ok = bin()
        .args(["analyze", "--input"])
        .arg(&fits)
        .arg("--recording")
        .arg(&rec)
        .arg("--output")
        .arg(dir.path().join("out"))
        .status()
        .unwrap();
    assert!(ok.success());

    let bad = bin()
        .args(["identify", "--threshold", "fixed:150", "--input"])
        .arg(&rec)
        .arg("--output")
        .arg(&fits)
        .output()
        .unwrap();
    assert!(!bad.status.success());

    // PEEP far above the sigmoid midpoint drives the volume off the curve.
    let mut spec = PatientSpec::load(scenario("sigmoid_uip")).unwrap();
    spec.program.peep_schedule[0].peep_cmh2o = 45.0;
    spec.program.amplitude = 30.0;
    let spec_path = dir.path().join("off.json");
    spec.save(&spec_path).unwrap();
    let off = bin()
        .args(["simulate", "--input"])
        .arg(&spec_path)
        .arg("--output")
        .arg(dir.path().join("off.csv"))
        .output()
        .unwrap();
    assert!(!off.status.success());
    let msg = String::from_utf8_lossy(&off.stderr);
    assert!(msg.contains("envelope"), "{msg}");
}
