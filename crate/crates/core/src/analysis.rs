//! Clinical reading of identified breaths: ventilation region from the
//! quadratic curvature, PEEP titration trends, linear versus quadratic fit
//! comparison, and plot-ready exports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ident_pipeline::{FitResult, FitStatus};
use crate::lung_models::RespiratoryModel;
use crate::patient_sim::{legs_of_levels, Leg, VentilatorProgram};
use crate::signal_io::BreathCycle;

/// Curvature ratio below which `a2` is treated as negligible.
pub const DEFAULT_EPS_LIN: f64 = 0.1;

/// PEEP values closer than this belong to the same level, cmH2O.
pub const PEEP_LEVEL_TOL: f64 = 1.0;

/// Points per model curve in P-V exports.
pub const CURVE_POINTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Atelectasis,
    Linear,
    Overdistension,
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Region::Atelectasis => "atelectasis",
            Region::Linear => "linear",
            Region::Overdistension => "overdistension",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionCall {
    pub region: Region,
    /// `|a2|·VT² / (a1·VT)`.
    pub curvature_ratio: f64,
    pub a2_sign: i8,
}

/// Region from quadratic coefficients and tidal volume.
pub fn classify_quadratic(a1: f64, a2: f64, vt_ml: f64, eps_lin: f64) -> Result<RegionCall> {
    if !(a1 > 0.0) {
        return Err(Error::Unphysiological(a1));
    }
    if !(vt_ml > 0.0) {
        return Err(Error::Argument(format!(
            "tidal volume {vt_ml} ml must be positive"
        )));
    }
    let curvature_ratio = a2.abs() * vt_ml * vt_ml / (a1 * vt_ml);
    let a2_sign = if a2 > 0.0 {
        1
    } else if a2 < 0.0 {
        -1
    } else {
        0
    };
    let region = if curvature_ratio < eps_lin {
        Region::Linear
    } else if a2 > 0.0 {
        Region::Overdistension
    } else {
        Region::Atelectasis
    };
    Ok(RegionCall {
        region,
        curvature_ratio,
        a2_sign,
    })
}

/// Region of an identified breath.
pub fn classify_region(fit: &FitResult, vt_ml: f64, eps_lin: f64) -> Result<RegionCall> {
    let q = fit.quadratic.ok_or_else(|| {
        Error::Argument(format!("cycle {} has no quadratic model", fit.cycle_index))
    })?;
    classify_quadratic(q.a1_cmh2o_per_ml, q.a2_cmh2o_per_ml2, vt_ml, eps_lin)
}

/// Consecutive breaths at one PEEP level.
#[derive(Debug, Clone, PartialEq)]
struct Occurrence {
    peep: f64,
    members: Vec<usize>,
}

fn occurrences(cycles: &[BreathCycle]) -> Vec<Occurrence> {
    let mut out: Vec<Occurrence> = Vec::new();
    for (i, c) in cycles.iter().enumerate() {
        match out.last_mut() {
            Some(o) if (c.peep_cmh2o - o.peep).abs() <= PEEP_LEVEL_TOL => o.members.push(i),
            _ => out.push(Occurrence {
                peep: c.peep_cmh2o,
                members: vec![i],
            }),
        }
    }
    for o in &mut out {
        o.peep =
            o.members.iter().map(|&i| cycles[i].peep_cmh2o).sum::<f64>() / o.members.len() as f64;
    }
    out
}

/// Titration leg of every breath. Legs come from the program when its step
/// count matches the PEEP levels found in the breaths, otherwise they are
/// inferred: ascending up to the highest level, descending after it.
pub fn cycle_legs(cycles: &[BreathCycle], program: Option<&VentilatorProgram>) -> Vec<Leg> {
    let occ = occurrences(cycles);
    let declared = program
        .map(|p| p.legs())
        .filter(|legs| legs.len() == occ.len());
    let legs =
        declared.unwrap_or_else(|| legs_of_levels(&occ.iter().map(|o| o.peep).collect::<Vec<_>>()));
    let mut out = vec![Leg::Ascending; cycles.len()];
    for (o, leg) in occ.iter().zip(legs) {
        for &i in &o.members {
            out[i] = leg;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TitrationLevel {
    pub peep_cmh2o: f64,
    pub leg: Leg,
    /// Accepted breaths contributing to the means.
    pub n_accepted: usize,
    pub n_cycles: usize,
    pub mean_a1: f64,
    pub mean_a2: f64,
    pub mean_c_linear: f64,
    pub mean_nrmse_lm: f64,
    pub mean_nrmse_nlm: f64,
    pub mean_vt_ml: f64,
    pub region: RegionCall,
    /// Set when the region call is not linear.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TitrationSummary {
    pub levels: Vec<TitrationLevel>,
    /// Level with the largest mean `1/a1` on the descending leg.
    pub best_peep_linear: f64,
    pub notes: Vec<String>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Per-level means over accepted breaths, grouped by PEEP level and leg.
pub fn summarize_titration(
    fits: &[FitResult],
    cycles: &[BreathCycle],
    program: Option<&VentilatorProgram>,
    eps_lin: f64,
) -> Result<TitrationSummary> {
    if fits.len() != cycles.len() {
        return Err(Error::Argument(format!(
            "{} fits but {} cycles",
            fits.len(),
            cycles.len()
        )));
    }
    let legs = cycle_legs(cycles, program);
    // Groups keyed by leg and PEEP level, in order of first appearance.
    let mut groups: Vec<(Leg, f64, Vec<usize>)> = Vec::new();
    for (i, c) in cycles.iter().enumerate() {
        let leg = legs[i];
        match groups
            .iter_mut()
            .find(|(l, p, _)| *l == leg && (c.peep_cmh2o - *p).abs() <= PEEP_LEVEL_TOL)
        {
            Some(g) => g.2.push(i),
            None => groups.push((leg, c.peep_cmh2o, vec![i])),
        }
    }

    let mut notes = Vec::new();
    let mut levels = Vec::new();
    for (leg, _, members) in groups {
        let peep = mean(members.iter().map(|&i| cycles[i].peep_cmh2o));
        let acc: Vec<usize> = members
            .iter()
            .copied()
            .filter(|&i| fits[i].is_accepted() && fits[i].quadratic.is_some())
            .collect();
        if acc.is_empty() {
            notes.push(format!(
                "PEEP {peep:.1} ({leg:?}): no accepted cycles, level omitted"
            ));
            continue;
        }
        let q = |i: usize| fits[i].quadratic.unwrap();
        let mean_a1 = mean(acc.iter().map(|&i| q(i).a1_cmh2o_per_ml));
        let mean_a2 = mean(acc.iter().map(|&i| q(i).a2_cmh2o_per_ml2));
        let mean_vt = mean(acc.iter().map(|&i| cycles[i].vt_insp_ml));
        let region = match classify_quadratic(mean_a1, mean_a2, mean_vt, eps_lin) {
            Ok(r) => r,
            Err(e) => {
                notes.push(format!("PEEP {peep:.1} ({leg:?}): {e}, level omitted"));
                continue;
            }
        };
        levels.push(TitrationLevel {
            peep_cmh2o: peep,
            leg,
            n_accepted: acc.len(),
            n_cycles: members.len(),
            mean_a1,
            mean_a2,
            mean_c_linear: mean(
                acc.iter()
                    .filter_map(|&i| fits[i].linear.map(|m| m.c_ml_per_cmh2o)),
            ),
            mean_nrmse_lm: mean(acc.iter().filter_map(|&i| fits[i].nrmse_linear_pct)),
            mean_nrmse_nlm: mean(acc.iter().filter_map(|&i| fits[i].nrmse_quadratic_pct)),
            mean_vt_ml: mean_vt,
            flagged: region.region != Region::Linear,
            region,
        });
    }
    if levels.is_empty() {
        return Err(Error::Empty("no accepted cycles at any PEEP level".into()));
    }

    let mut candidates: Vec<&TitrationLevel> =
        levels.iter().filter(|l| l.leg == Leg::Descending).collect();
    if candidates.is_empty() {
        notes.push("no descending leg; best PEEP chosen over all levels".into());
        candidates = levels.iter().collect();
    }
    let best = candidates
        .iter()
        .max_by(|a, b| (1.0 / a.mean_a1).total_cmp(&(1.0 / b.mean_a1)))
        .expect("non-empty");
    Ok(TitrationSummary {
        best_peep_linear: best.peep_cmh2o,
        levels,
        notes,
    })
}

/// Writes the per-level `a1`/`a2`-versus-PEEP series.
pub fn write_titration_csv(summary: &TitrationSummary, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record([
        "peep_cmH2O",
        "leg",
        "n_accepted",
        "mean_a1",
        "mean_a2",
        "mean_c_linear",
        "mean_nrmse_lm",
        "mean_nrmse_nlm",
        "mean_vt_ml",
        "region",
        "flagged",
    ])
    .map_err(|e| csv_err(path, e))?;
    for l in &summary.levels {
        w.write_record([
            l.peep_cmh2o.to_string(),
            leg_name(l.leg).to_string(),
            l.n_accepted.to_string(),
            l.mean_a1.to_string(),
            l.mean_a2.to_string(),
            l.mean_c_linear.to_string(),
            l.mean_nrmse_lm.to_string(),
            l.mean_nrmse_nlm.to_string(),
            l.mean_vt_ml.to_string(),
            l.region.region.to_string(),
            l.flagged.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

fn leg_name(leg: Leg) -> &'static str {
    match leg {
        Leg::Ascending => "ascending",
        Leg::Descending => "descending",
    }
}

fn status_name(s: FitStatus) -> &'static str {
    match s {
        FitStatus::Accepted => "accepted",
        FitStatus::AcceptedAfterRetry => "accepted_after_retry",
        FitStatus::Discarded => "discarded",
        FitStatus::DiscardedFirstCycle => "discarded_first_cycle",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub cycle: usize,
    pub status: FitStatus,
    pub nrmse_lm: Option<f64>,
    pub nrmse_nlm: Option<f64>,
    /// `nrmse_nlm - nrmse_lm`.
    pub delta: Option<f64>,
}

/// Linear versus quadratic fit score per breath, discarded breaths included.
pub fn fit_comparison(fits: &[FitResult]) -> Vec<ComparisonRow> {
    fits.iter()
        .map(|f| ComparisonRow {
            cycle: f.cycle_index,
            status: f.status,
            nrmse_lm: f.nrmse_linear_pct,
            nrmse_nlm: f.nrmse_quadratic_pct,
            delta: f.nrmse_delta(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PvSeries {
    Linear,
    Quadratic,
    Measured,
}

/// One point of a P-V export.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PvPoint {
    pub series: PvSeries,
    pub v_ml: f64,
    pub pc_cmh2o: f64,
}

/// Model curves over `[0, VT]` and the measured `(pv - F·Raw, V)` scatter
/// of one breath, with `Raw` from the quadratic fit.
pub fn pv_curve_points(fit: &FitResult, cycle: &BreathCycle) -> Vec<PvPoint> {
    let vt = cycle.vt_insp_ml.max(0.0);
    let grid = |i: usize| vt * i as f64 / (CURVE_POINTS - 1) as f64;
    let mut out = Vec::with_capacity(2 * CURVE_POINTS + cycle.len());
    if let Some(m) = fit.linear {
        out.extend((0..CURVE_POINTS).map(|i| PvPoint {
            series: PvSeries::Linear,
            v_ml: grid(i),
            pc_cmh2o: m.pc_of_v(grid(i)),
        }));
    }
    if let Some(q) = fit.quadratic {
        out.extend((0..CURVE_POINTS).map(|i| PvPoint {
            series: PvSeries::Quadratic,
            v_ml: grid(i),
            pc_cmh2o: q.pc_of_v(grid(i)),
        }));
    }
    let raw = fit
        .quadratic
        .map(|q| q.raw_cmh2o_s_per_ml)
        .or(fit.linear.map(|m| m.raw_cmh2o_s_per_ml));
    if let Some(raw) = raw {
        out.extend((0..cycle.len()).map(|k| PvPoint {
            series: PvSeries::Measured,
            v_ml: cycle.volume[k],
            pc_cmh2o: cycle.pv[k] - cycle.flow[k] * raw,
        }));
    }
    out
}

/// Writes one P-V CSV per leg, named `<case>_<leg>_pv.csv`.
pub fn export_pv_curves(
    fits: &[FitResult],
    cycles: &[BreathCycle],
    legs: &[Leg],
    out_dir: impl AsRef<Path>,
    case: &str,
) -> Result<Vec<PathBuf>> {
    if fits.len() != cycles.len() || legs.len() != cycles.len() {
        return Err(Error::Argument("fits, cycles and legs must align".into()));
    }
    let out_dir = out_dir.as_ref();
    let mut written = Vec::new();
    for leg in [Leg::Ascending, Leg::Descending] {
        let idx: Vec<usize> = (0..cycles.len()).filter(|&i| legs[i] == leg).collect();
        if idx.is_empty() {
            continue;
        }
        let path = out_dir.join(format!("{case}_{}_pv.csv", leg_name(leg)));
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        w.write_record([
            "cycle",
            "peep_cmH2O",
            "status",
            "series",
            "v_ml",
            "pc_cmH2O",
        ])
        .map_err(|e| csv_err(&path, e))?;
        for i in idx {
            let f = &fits[i];
            for p in pv_curve_points(f, &cycles[i]) {
                let series = match p.series {
                    PvSeries::Linear => "linear",
                    PvSeries::Quadratic => "quadratic",
                    PvSeries::Measured => "measured",
                };
                w.write_record([
                    f.cycle_index.to_string(),
                    cycles[i].peep_cmh2o.to_string(),
                    status_name(f.status).to_string(),
                    series.to_string(),
                    p.v_ml.to_string(),
                    p.pc_cmh2o.to_string(),
                ])
                .map_err(|e| csv_err(&path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Plain-text table of the quadratic fits: coefficients and the linear and
/// quadratic pressure terms at the breath's tidal volume.
pub fn format_report(fits: &[FitResult], eps_lin: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>5}  {:<22} {:>9} {:>10} {:>8} {:>9} {:>8} {:>8}  region",
        "cycle", "status", "a1", "a2", "a1*VT", "a2*VT^2", "NRMSE_L", "NRMSE_Q"
    );
    for f in fits {
        let status = status_name(f.status);
        let pct = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.2}"));
        match f.quadratic {
            Some(q) => {
                let (lin, quad) = q.pressure_terms(f.vt_ml);
                let region =
                    classify_quadratic(q.a1_cmh2o_per_ml, q.a2_cmh2o_per_ml2, f.vt_ml, eps_lin)
                        .map_or_else(|e| format!("({e})"), |r| r.region.to_string());
                let _ = writeln!(
                    s,
                    "{:>5}  {:<22} {:>9.4} {:>10.3e} {:>8.1} {:>9.1} {:>8} {:>8}  {}",
                    f.cycle_index,
                    status,
                    q.a1_cmh2o_per_ml,
                    q.a2_cmh2o_per_ml2,
                    lin,
                    quad,
                    pct(f.nrmse_linear_pct),
                    pct(f.nrmse_quadratic_pct),
                    region
                );
            }
            None => {
                let _ = writeln!(
                    s,
                    "{:>5}  {:<22} {:>9} {:>10} {:>8} {:>9} {:>8} {:>8}  {}",
                    f.cycle_index,
                    status,
                    "-",
                    "-",
                    "-",
                    "-",
                    pct(f.nrmse_linear_pct),
                    "-",
                    f.note.as_deref().unwrap_or("")
                );
            }
        }
    }
    s
}

/// Writes the fit comparison table as CSV.
pub fn write_comparison_csv(rows: &[ComparisonRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["cycle", "status", "nrmse_lm", "nrmse_nlm", "delta"])
        .map_err(|e| csv_err(path, e))?;
    let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
    for r in rows {
        w.write_record([
            r.cycle.to_string(),
            status_name(r.status).to_string(),
            opt(r.nrmse_lm),
            opt(r.nrmse_nlm),
            opt(r.delta),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lung_models::{LinearLungModel, QuadraticLungModel};

    fn fit(index: usize, status: FitStatus, a1: f64, a2: f64) -> FitResult {
        FitResult {
            cycle_index: index,
            status,
            linear: Some(LinearLungModel::new(1.0 / a1, 0.01).unwrap()),
            nrmse_linear_pct: Some(95.0),
            quadratic: Some(QuadraticLungModel::new(a1, a2, 0.01).unwrap()),
            nrmse_quadratic_pct: Some(98.0),
            threshold_pct: Some(50.0),
            aux_used: false,
            iters: 5,
            peep_cmh2o: 5.0,
            vt_ml: 400.0,
            note: None,
            linear_report: None,
            quadratic_report: None,
        }
    }

    fn cycle(peep: f64, vt: f64) -> BreathCycle {
        let n = 8;
        let volume: Vec<f64> = (0..n).map(|k| vt * (k as f64 / (n - 1) as f64)).collect();
        BreathCycle {
            start_idx: 0,
            end_idx: n,
            insp_end_idx: n - 1,
            dt_s: 1.0 / 256.0,
            pv: volume.iter().map(|v| v / 50.0).collect(),
            flow: vec![0.0; n],
            volume,
            peep_cmh2o: peep,
            pip_cmh2o: peep + 10.0,
            plateau_cmh2o: peep + 8.0,
            pif_ml_s: 500.0,
            vt_insp_ml: vt,
            flags: vec![],
        }
    }

    #[test]
    fn linear_row() {
        let r = classify_quadratic(0.020, 1.38e-6, 480.0, DEFAULT_EPS_LIN).unwrap();
        assert!((r.curvature_ratio - 0.0331).abs() < 1e-3);
        assert_eq!(r.region, Region::Linear);
    }

    #[test]
    fn atelectasis_row() {
        let r = classify_quadratic(0.084, -1.02e-4, 320.0, DEFAULT_EPS_LIN).unwrap();
        assert!((r.curvature_ratio - 0.389).abs() < 1e-2);
        assert_eq!(r.region, Region::Atelectasis);
        assert_eq!(r.a2_sign, -1);
    }

    #[test]
    fn zero_curvature_is_linear() {
        for vt in [1.0, 500.0, 1e6] {
            let r = classify_quadratic(0.02, 0.0, vt, DEFAULT_EPS_LIN).unwrap();
            assert_eq!(r.region, Region::Linear);
            assert_eq!(r.a2_sign, 0);
        }
    }

    #[test]
    fn unphysiological_a1() {
        assert!(matches!(
            classify_quadratic(-0.01, 1e-5, 400.0, DEFAULT_EPS_LIN),
            Err(Error::Unphysiological(_))
        ));
    }

    #[test]
    fn empty_comparison() {
        assert!(fit_comparison(&[]).is_empty());
    }

    #[test]
    fn comparison_keeps_discarded() {
        let mut f = fit(1, FitStatus::Discarded, 0.02, 0.0);
        f.nrmse_quadratic_pct = None;
        let rows = fit_comparison(&[fit(0, FitStatus::Accepted, 0.02, 0.0), f]);
        assert_eq!(rows.len(), 2);
        assert!((rows[0].delta.unwrap() - 3.0).abs() < 1e-12);
        assert_eq!(rows[1].delta, None);
    }

    #[test]
    fn concave_export() {
        let f = fit(0, FitStatus::Accepted, 0.03, -2e-5);
        let pts: Vec<f64> = pv_curve_points(&f, &cycle(5.0, 400.0))
            .into_iter()
            .filter(|p| p.series == PvSeries::Quadratic)
            .map(|p| p.pc_cmh2o)
            .collect();
        assert_eq!(pts.len(), CURVE_POINTS);
        assert!(pts.windows(3).all(|w| w[0] - 2.0 * w[1] + w[2] <= 1e-12));
    }

    #[test]
    fn linear_export_collinear() {
        let f = fit(0, FitStatus::Accepted, 0.03, 0.0);
        let pts: Vec<PvPoint> = pv_curve_points(&f, &cycle(5.0, 400.0))
            .into_iter()
            .filter(|p| p.series == PvSeries::Linear)
            .collect();
        let slope = (pts[1].pc_cmh2o - pts[0].pc_cmh2o) / (pts[1].v_ml - pts[0].v_ml);
        for p in &pts {
            assert!((p.pc_cmh2o - slope * p.v_ml).abs() < 1e-9);
        }
    }

    #[test]
    fn single_level_summary() {
        let fits: Vec<FitResult> = (0..3)
            .map(|i| fit(i, FitStatus::Accepted, 0.02, 1e-6))
            .collect();
        let cycles = vec![cycle(5.0, 400.0); 3];
        let s = summarize_titration(&fits, &cycles, None, DEFAULT_EPS_LIN).unwrap();
        assert_eq!(s.levels.len(), 1);
        assert_eq!(s.best_peep_linear, 5.0);
        assert_eq!(s.levels[0].n_accepted, 3);
    }

    #[test]
    fn inferred_legs_and_best_level() {
        let peeps = [5.0, 10.0, 15.0, 10.0, 5.0];
        let a1 = [0.03, 0.02, 0.04, 0.015, 0.03];
        let cycles: Vec<BreathCycle> = peeps.iter().map(|&p| cycle(p, 400.0)).collect();
        let fits: Vec<FitResult> = a1
            .iter()
            .enumerate()
            .map(|(i, &a)| fit(i, FitStatus::Accepted, a, 0.0))
            .collect();
        let legs = cycle_legs(&cycles, None);
        assert_eq!(legs[2], Leg::Ascending);
        assert_eq!(legs[3], Leg::Descending);
        let s = summarize_titration(&fits, &cycles, None, DEFAULT_EPS_LIN).unwrap();
        assert_eq!(s.levels.len(), 5);
        // Descending leg only: PEEP 10 on the way down has the lowest a1.
        assert_eq!(s.best_peep_linear, 10.0);
    }

    #[test]
    fn discarded_excluded_from_means() {
        let cycles = vec![cycle(5.0, 400.0); 2];
        let fits = vec![
            fit(0, FitStatus::Accepted, 0.02, 0.0),
            fit(1, FitStatus::Discarded, 0.04, 0.0),
        ];
        let s = summarize_titration(&fits, &cycles, None, DEFAULT_EPS_LIN).unwrap();
        assert_eq!(s.levels[0].mean_a1, 0.02);
        let none = vec![fit(0, FitStatus::Discarded, 0.02, 0.0); 2];
        assert!(matches!(
            summarize_titration(&none, &cycles, None, DEFAULT_EPS_LIN),
            Err(Error::Empty(_))
        ));
    }
}
