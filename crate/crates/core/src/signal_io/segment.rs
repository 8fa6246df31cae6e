use serde::{Deserialize, Serialize};

use super::{integrate_flow, BreathCycle, CycleFlag, TimeSeries};
use crate::error::{Error, Result};

/// Tuning for zero-crossing breath detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentOptions {
    /// Flow must stay on the new side of zero at least this long.
    pub debounce_s: f64,
    /// PEEP is the mean pressure over this window before each cycle start.
    pub peep_window_s: f64,
    /// A run on the new side must also reach this fraction of the
    /// recording's peak flow on that side. Rejects noise runs near zero flow.
    pub min_excursion_frac: f64,
}

impl Default for SegmentOptions {
    fn default() -> Self {
        Self {
            debounce_s: 0.030,
            peep_window_s: 0.050,
            min_excursion_frac: 0.25,
        }
    }
}

impl SegmentOptions {
    pub fn debounce_samples(&self, fs: f64) -> usize {
        ((self.debounce_s * fs) - 1e-9).ceil().max(1.0) as usize
    }

    pub fn peep_window_samples(&self, fs: f64) -> usize {
        ((self.peep_window_s * fs) - 1e-9).ceil().max(1.0) as usize
    }
}

/// Landmark values used by the linear initializer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landmarks {
    pub pip_cmh2o: f64,
    pub plateau_cmh2o: f64,
    pub pif_ml_s: f64,
    pub peep_cmh2o: f64,
    pub vt_insp_ml: f64,
    pub flags: Vec<CycleFlag>,
}

struct Run {
    start: usize,
    len: usize,
    positive: bool,
    peak: f64,
}

fn runs(flow: &[f64]) -> Vec<Run> {
    let mut out: Vec<Run> = Vec::new();
    for (k, &f) in flow.iter().enumerate() {
        let positive = f > 0.0;
        match out.last_mut() {
            Some(r) if r.positive == positive => {
                r.len += 1;
                r.peak = r.peak.max(f.abs());
            }
            _ => out.push(Run {
                start: k,
                len: 1,
                positive,
                peak: f.abs(),
            }),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Transition {
    Start(usize),
    InspEnd(usize),
}

fn transitions(flow: &[f64], debounce: usize, excursion_frac: f64) -> Vec<Transition> {
    let peak_in = flow.iter().cloned().fold(0.0_f64, f64::max);
    let peak_ex = flow.iter().cloned().fold(0.0_f64, |m, f| m.max(-f));
    let runs = runs(flow);
    let mut state: Option<bool> = None;
    let mut out = Vec::new();
    for (i, run) in runs.iter().enumerate() {
        let side_peak = if run.positive { peak_in } else { peak_ex };
        let confirmed =
            run.len >= debounce && side_peak > 0.0 && run.peak >= excursion_frac * side_peak;
        if i == 0 {
            if run.len >= debounce || confirmed {
                state = Some(run.positive);
            }
            continue;
        }
        if !confirmed || state == Some(run.positive) {
            continue;
        }
        // Unsettled lead-in (e.g. noise around zero flow) long enough to
        // count as the opposite phase.
        if state.is_none() && run.start >= debounce {
            state = Some(!run.positive);
        }
        match (state, run.positive) {
            (Some(false), true) => out.push(Transition::Start(run.start)),
            (Some(true), false) => out.push(Transition::InspEnd(run.start)),
            _ => {}
        }
        state = Some(run.positive);
    }
    out
}

/// Splits a recording into complete breaths with the default options.
pub fn segment_cycles(ts: &TimeSeries) -> Vec<BreathCycle> {
    segment_cycles_with(ts, &SegmentOptions::default())
}

/// Splits a recording into complete breaths.
///
/// A cycle runs from one debounced expiratory-to-inspiratory flow crossing to
/// the next; its inspiration ends at the debounced crossing back. Fragments
/// before the first and after the last detected start are dropped, as is a
/// first cycle without a full PEEP window in front of it.
pub fn segment_cycles_with(ts: &TimeSeries, opts: &SegmentOptions) -> Vec<BreathCycle> {
    let fs = ts.sample_rate_hz;
    let debounce = opts.debounce_samples(fs);
    let window = opts.peep_window_samples(fs);
    let trans = transitions(&ts.flow, debounce, opts.min_excursion_frac);

    let mut cycles = Vec::new();
    for (i, t) in trans.iter().enumerate() {
        let Transition::Start(start) = *t else {
            continue;
        };
        let Some(Transition::InspEnd(insp_end)) = trans.get(i + 1).copied() else {
            continue;
        };
        let Some(Transition::Start(end)) = trans.get(i + 2).copied() else {
            continue;
        };
        if start < window {
            continue;
        }
        let peep = ts.pressure[start - window..start].iter().sum::<f64>() / window as f64;
        cycles.push(build_cycle(
            &ts.pressure[start..end],
            &ts.flow[start..end],
            ts.dt(),
            peep,
            start,
            insp_end - start,
        ));
    }
    cycles
}

/// First sample at or below zero flow after flow has been positive.
pub(super) fn first_expiratory_sample(flow: &[f64]) -> Option<usize> {
    let first_pos = flow.iter().position(|&f| f > 0.0)?;
    flow[first_pos..]
        .iter()
        .position(|&f| f <= 0.0)
        .map(|k| k + first_pos)
}

pub(super) fn build_cycle(
    pressure: &[f64],
    flow: &[f64],
    dt_s: f64,
    peep_cmh2o: f64,
    start_idx: usize,
    insp_end_rel: usize,
) -> BreathCycle {
    let n = pressure.len();
    let volume = integrate_flow(flow, dt_s);
    let pv: Vec<f64> = pressure.iter().map(|p| p - peep_cmh2o).collect();
    let pip = pressure.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pif = flow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let vt = volume.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    // Pressure where flow crosses zero, interpolated between the last
    // inspiratory and first expiratory sample.
    let plateau = if insp_end_rel == 0 {
        pressure[0]
    } else {
        let (f0, f1) = (flow[insp_end_rel - 1], flow[insp_end_rel]);
        let (p0, p1) = (pressure[insp_end_rel - 1], pressure[insp_end_rel]);
        if f0 - f1 > 0.0 {
            p0 + (p1 - p0) * f0 / (f0 - f1)
        } else {
            p1
        }
    };

    BreathCycle {
        start_idx,
        end_idx: start_idx + n,
        insp_end_idx: start_idx + insp_end_rel,
        dt_s,
        pv,
        flow: flow.to_vec(),
        volume,
        peep_cmh2o,
        pip_cmh2o: pip,
        plateau_cmh2o: plateau,
        pif_ml_s: pif,
        vt_insp_ml: vt,
        flags: landmark_flags(pip, plateau, peep_cmh2o),
    }
}

const PRESSURE_EQ_TOL: f64 = 1e-9;

fn landmark_flags(pip: f64, plateau: f64, peep: f64) -> Vec<CycleFlag> {
    let mut flags = Vec::new();
    if pip < plateau {
        flags.push(CycleFlag::PipBelowPlateau);
    }
    if (plateau - peep).abs() <= PRESSURE_EQ_TOL * peep.abs().max(1.0) {
        flags.push(CycleFlag::PlateauEqualsPeep);
    } else if plateau < peep {
        flags.push(CycleFlag::PlateauBelowPeep);
    }
    flags
}

/// Validated landmark values of a segmented cycle.
pub fn cycle_landmarks(cycle: &BreathCycle) -> Result<Landmarks> {
    if !(cycle.vt_insp_ml > 0.0) {
        return Err(Error::DegenerateCycle(format!(
            "tidal volume {} ml is not positive",
            cycle.vt_insp_ml
        )));
    }
    Ok(Landmarks {
        pip_cmh2o: cycle.pip_cmh2o,
        plateau_cmh2o: cycle.plateau_cmh2o,
        pif_ml_s: cycle.pif_ml_s,
        peep_cmh2o: cycle.peep_cmh2o,
        vt_insp_ml: cycle.vt_insp_ml,
        flags: landmark_flags(cycle.pip_cmh2o, cycle.plateau_cmh2o, cycle.peep_cmh2o),
    })
}
