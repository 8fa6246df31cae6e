//! Recording ingestion, breath segmentation and per-cycle landmarks.
//!
//! Units are fixed internally: pressure in cmH2O, flow in ml/s (positive is
//! inspiration), volume in ml, time in s.

mod csv_io;
mod segment;

pub use csv_io::{load_recording, read_csv, save_recording, write_csv, RecordingFormat};
pub use segment::{
    cycle_landmarks, segment_cycles, segment_cycles_with, Landmarks, SegmentOptions,
};

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nominal acquisition rate of the mouth pressure/flow sensor.
pub const NOMINAL_SAMPLE_RATE_HZ: f64 = 256.0;

/// Uniformly sampled mouth pressure and flow.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub sample_rate_hz: f64,
    pub t0_s: f64,
    /// Total mouth pressure, cmH2O.
    pub pressure: Vec<f64>,
    /// Flow, ml/s.
    pub flow: Vec<f64>,
}

impl TimeSeries {
    pub fn new(sample_rate_hz: f64, t0_s: f64, pressure: Vec<f64>, flow: Vec<f64>) -> Result<Self> {
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::Argument(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if !t0_s.is_finite() {
            return Err(Error::Argument("t0 must be finite".into()));
        }
        if pressure.len() != flow.len() {
            return Err(Error::Argument(format!(
                "pressure has {} samples but flow has {}",
                pressure.len(),
                flow.len()
            )));
        }
        if pressure.len() < 2 {
            return Err(Error::Argument(
                "a recording needs at least 2 samples".into(),
            ));
        }
        if let Some(k) = pressure
            .iter()
            .zip(&flow)
            .position(|(p, f)| !p.is_finite() || !f.is_finite())
        {
            return Err(Error::Argument(format!("non-finite sample at index {k}")));
        }
        Ok(Self {
            sample_rate_hz,
            t0_s,
            pressure,
            flow,
        })
    }

    pub fn len(&self) -> usize {
        self.pressure.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pressure.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate_hz
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0_s + k as f64 / self.sample_rate_hz
    }

    /// Sub-recording over `range`, with `t0` shifted accordingly.
    pub fn slice(&self, range: Range<usize>) -> Result<Self> {
        if range.end > self.len() || range.start >= range.end {
            return Err(Error::Argument(format!(
                "slice {range:?} out of bounds for {} samples",
                self.len()
            )));
        }
        Self::new(
            self.sample_rate_hz,
            self.time(range.start),
            self.pressure[range.clone()].to_vec(),
            self.flow[range].to_vec(),
        )
    }
}

/// Landmark-ordering warnings. Real recordings can violate these, so they
/// are reported rather than rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleFlag {
    /// PIP < plateau.
    PipBelowPlateau,
    /// Plateau < PEEP.
    PlateauBelowPeep,
    /// Plateau equals PEEP; the compliance initializer would divide by zero.
    PlateauEqualsPeep,
}

/// One segmented respiratory cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct BreathCycle {
    /// First sample (inclusive) in the parent recording.
    pub start_idx: usize,
    /// One past the last sample in the parent recording.
    pub end_idx: usize,
    /// First expiratory sample in the parent recording.
    pub insp_end_idx: usize,
    pub dt_s: f64,
    /// Variable pressure `P - PEEP`, cmH2O.
    pub pv: Vec<f64>,
    pub flow: Vec<f64>,
    /// Volume from trapezoidal integration, `volume[0] == 0`.
    pub volume: Vec<f64>,
    pub peep_cmh2o: f64,
    pub pip_cmh2o: f64,
    pub plateau_cmh2o: f64,
    pub pif_ml_s: f64,
    pub vt_insp_ml: f64,
    pub flags: Vec<CycleFlag>,
}

impl BreathCycle {
    pub fn len(&self) -> usize {
        self.pv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pv.is_empty()
    }

    /// Index of `insp_end_idx` relative to the cycle start.
    pub fn insp_len(&self) -> usize {
        self.insp_end_idx - self.start_idx
    }

    /// Builds a cycle directly from per-sample arrays (e.g. synthetic data).
    /// Volume is integrated from `flow`; landmarks are computed the same way
    /// as in segmentation except PEEP, which is supplied.
    pub fn from_samples(
        pressure: &[f64],
        flow: &[f64],
        dt_s: f64,
        peep_cmh2o: f64,
    ) -> Result<Self> {
        if pressure.len() != flow.len() || pressure.len() < 2 {
            return Err(Error::Argument(
                "cycle needs equal-length pressure and flow with at least 2 samples".into(),
            ));
        }
        let insp_end = segment::first_expiratory_sample(flow)
            .ok_or_else(|| Error::DegenerateCycle("flow never turns expiratory in cycle".into()))?;
        Ok(segment::build_cycle(
            pressure, flow, dt_s, peep_cmh2o, 0, insp_end,
        ))
    }
}

/// Cumulative trapezoidal integral of `flow` with `V[0] = 0`.
pub fn integrate_flow(flow: &[f64], dt: f64) -> Vec<f64> {
    assert!(dt > 0.0, "integration step must be positive");
    let mut volume = Vec::with_capacity(flow.len());
    let mut acc = 0.0;
    if let Some(&first) = flow.first() {
        volume.push(0.0);
        let mut prev = first;
        for &f in &flow[1..] {
            acc += dt * (f + prev) / 2.0;
            volume.push(acc);
            prev = f;
        }
    }
    volume
}
