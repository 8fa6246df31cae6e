//! Simulated ventilated patients with known lung mechanics.
//!
//! A patient couples an elastic pressure-volume curve with a linear airway
//! resistance through the equation of motion and is driven by a pressure- or
//! volume-controlled ventilator running a PEEP schedule. The output is a
//! canonical recording plus per-breath ground truth.

mod curves;

pub use curves::{
    hysteresis_pc, sigmoid_pc, HysteresisPV, LoopSpan, LoopTracker, Phase, SigmoidPV,
};

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nls_solver::linear_lsq;
use crate::signal_io::TimeSeries;

/// Fraction of the sigmoid's vital range kept clear at both ends; volumes
/// outside are treated as beyond RV/TLC.
pub const ENVELOPE_MARGIN: f64 = 0.01;

/// Allowed retreat of the volume against the declared phase, ml.
pub const LOOP_TRACKER_TOL_ML: f64 = 0.5;

/// Zero-flow hold at the first PEEP before the first breath, s.
pub const LEAD_IN_S: f64 = 0.25;
/// Zero-flow hold at the new PEEP when the schedule changes level, s.
pub const STEP_HOLD_S: f64 = 0.1;
/// Length of the next breath's onset appended after the last full cycle, s.
pub const TRAILER_S: f64 = 0.25;

/// Quadratic elastic curve `Pc = a1·v + a2·v²` around the equilibrium volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticPV {
    pub a1_cmh2o_per_ml: f64,
    pub a2_cmh2o_per_ml2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PvCurve {
    Sigmoid(SigmoidPV),
    Hysteresis(HysteresisPV),
    Quadratic(QuadraticPV),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VentMode {
    /// Volume control: constant inspiratory flow, passive expiration.
    Vcv,
    /// Pressure control: trapezoidal pressure above PEEP.
    Pcv,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeepStep {
    pub peep_cmh2o: f64,
    pub n_cycles: usize,
}

/// Titration leg a PEEP level belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Leg {
    Ascending,
    Descending,
}

fn default_rise_time() -> f64 {
    0.1
}

fn default_sample_rate() -> f64 {
    crate::signal_io::NOMINAL_SAMPLE_RATE_HZ
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VentilatorProgram {
    pub mode: VentMode,
    pub peep_schedule: Vec<PeepStep>,
    pub breath_rate_per_min: f64,
    /// Inspiratory share of each breath period.
    pub insp_fraction: f64,
    /// PCV: driving pressure above PEEP, cmH2O. VCV: tidal volume, ml.
    pub amplitude: f64,
    /// PCV pressure rise (and fall) time, s.
    #[serde(default = "default_rise_time")]
    pub rise_time_s: f64,
    #[serde(default)]
    pub noise_pct_p: f64,
    #[serde(default)]
    pub noise_pct_f: f64,
    #[serde(default = "default_sample_rate")]
    pub sample_rate_hz: f64,
}

impl Default for VentilatorProgram {
    fn default() -> Self {
        Self {
            mode: VentMode::Pcv,
            peep_schedule: vec![PeepStep {
                peep_cmh2o: 5.0,
                n_cycles: 10,
            }],
            breath_rate_per_min: 15.0,
            insp_fraction: 0.33,
            amplitude: 10.0,
            rise_time_s: default_rise_time(),
            noise_pct_p: 0.0,
            noise_pct_f: 0.0,
            sample_rate_hz: default_sample_rate(),
        }
    }
}

impl VentilatorProgram {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Argument(m));
        if self.peep_schedule.is_empty() {
            return bad("PEEP schedule is empty".into());
        }
        for (i, s) in self.peep_schedule.iter().enumerate() {
            if !(s.peep_cmh2o >= 0.0 && s.peep_cmh2o.is_finite()) || s.n_cycles == 0 {
                return bad(format!("PEEP step {i} invalid: {s:?}"));
            }
        }
        if !(self.breath_rate_per_min > 0.0 && self.breath_rate_per_min.is_finite()) {
            return bad("breath rate must be positive".into());
        }
        if !(self.insp_fraction > 0.2 && self.insp_fraction < 0.6) {
            return bad(format!(
                "inspiratory fraction {} outside (0.2, 0.6)",
                self.insp_fraction
            ));
        }
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return bad("amplitude must be positive".into());
        }
        if !(self.rise_time_s >= 0.0 && 2.0 * self.rise_time_s < self.t_insp_s()) {
            return bad("rise time must be non-negative and fit twice in inspiration".into());
        }
        if !(self.noise_pct_p >= 0.0 && self.noise_pct_f >= 0.0) {
            return bad("noise percentages must be non-negative".into());
        }
        if !(self.sample_rate_hz > 0.0) {
            return bad("sample rate must be positive".into());
        }
        Ok(())
    }

    pub fn period_s(&self) -> f64 {
        60.0 / self.breath_rate_per_min
    }

    pub fn t_insp_s(&self) -> f64 {
        self.insp_fraction * self.period_s()
    }

    pub fn samples_per_cycle(&self) -> usize {
        (self.period_s() * self.sample_rate_hz).round() as usize
    }

    pub fn total_cycles(&self) -> usize {
        self.peep_schedule.iter().map(|s| s.n_cycles).sum()
    }

    /// Leg of each schedule step: up to and including the first maximum is
    /// ascending, everything after is descending.
    pub fn legs(&self) -> Vec<Leg> {
        let peeps: Vec<f64> = self.peep_schedule.iter().map(|s| s.peep_cmh2o).collect();
        legs_of_levels(&peeps)
    }

    /// PCV drive above PEEP at time `tau` into the breath.
    fn pcv_drive(&self, tau: f64) -> f64 {
        let (amp, rise, ti) = (self.amplitude, self.rise_time_s, self.t_insp_s());
        if tau < rise {
            amp * tau / rise
        } else if tau < ti {
            amp
        } else if tau < ti + rise {
            amp * (1.0 - (tau - ti) / rise)
        } else {
            0.0
        }
    }
}

/// Ascending up to and including the first maximum, descending after.
pub fn legs_of_levels(levels: &[f64]) -> Vec<Leg> {
    let apex = levels
        .iter()
        .enumerate()
        .fold(None::<(usize, f64)>, |best, (i, &p)| match best {
            Some((_, bp)) if bp >= p => best,
            _ => Some((i, p)),
        })
        .map(|(i, _)| i)
        .unwrap_or(0);
    (0..levels.len())
        .map(|i| {
            if i <= apex {
                Leg::Ascending
            } else {
                Leg::Descending
            }
        })
        .collect()
}

/// Staircase PEEP schedule `min, min+step, …, max, …, min` with
/// `cycles_per_step` breaths per level and default PCV settings otherwise.
pub fn titration_program(
    peep_min: f64,
    peep_max: f64,
    step: f64,
    cycles_per_step: usize,
) -> Result<VentilatorProgram> {
    if !(peep_min <= peep_max) || !(step > 0.0) || cycles_per_step == 0 {
        return Err(Error::Argument(format!(
            "titration needs peep_min <= peep_max, step > 0 and cycles > 0 \
             (got {peep_min}, {peep_max}, {step}, {cycles_per_step})"
        )));
    }
    let mut up = Vec::new();
    let mut k = 0;
    loop {
        let p = peep_min + k as f64 * step;
        if p > peep_max + 1e-9 {
            break;
        }
        up.push(p);
        k += 1;
    }
    if up.last().is_some_and(|&p| (p - peep_max).abs() > 1e-9) {
        up.push(peep_max);
    }
    let mut levels = up.clone();
    levels.extend(up.iter().rev().skip(1));
    Ok(VentilatorProgram {
        peep_schedule: levels
            .into_iter()
            .map(|peep_cmh2o| PeepStep {
                peep_cmh2o,
                n_cycles: cycles_per_step,
            })
            .collect(),
        ..VentilatorProgram::default()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientSpec {
    pub pv_curve: PvCurve,
    pub raw_cmh2o_s_per_ml: f64,
    pub program: VentilatorProgram,
    #[serde(default)]
    pub seed: u64,
}

impl PatientSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.raw_cmh2o_s_per_ml > 0.0 && self.raw_cmh2o_s_per_ml.is_finite()) {
            return Err(Error::Argument("Raw must be positive".into()));
        }
        match &self.pv_curve {
            PvCurve::Sigmoid(s) => s.validate()?,
            PvCurve::Hysteresis(h) => h.validate()?,
            PvCurve::Quadratic(q) => {
                if !(q.a1_cmh2o_per_ml > 0.0 && q.a2_cmh2o_per_ml2.is_finite()) {
                    return Err(Error::Argument("quadratic patient needs a1 > 0".into()));
                }
            }
        }
        self.program.validate()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Equilibrium volume at `peep` on a sigmoid-based curve.
    pub fn equilibrium_volume(&self, peep: f64) -> Option<f64> {
        match &self.pv_curve {
            PvCurve::Sigmoid(s) => Some(s.volume_at(peep)),
            PvCurve::Hysteresis(h) => Some(h.base.volume_at(peep)),
            PvCurve::Quadratic(_) => None,
        }
    }

    /// Elastic pressure above PEEP at relative volume `v` on the curve
    /// without hysteresis.
    pub fn base_pc(&self, peep: f64, v: f64) -> Result<f64> {
        StepElastic::new(self, 0, peep)?.pc(v, Phase::Inspiration, None)
    }
}

/// Per-breath ground truth written alongside a simulated recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleTruth {
    pub index: usize,
    pub step: usize,
    pub peep_cmh2o: f64,
    pub leg: Leg,
    /// First sample of the breath in the recording.
    pub start_sample: usize,
    pub n_samples: usize,
    /// Volume above PEEP equilibrium at the breath start, ml.
    pub v_start_ml: f64,
    /// Peak volume above the breath start, ml.
    pub vt_ml: f64,
    /// Absolute equilibrium volume for sigmoid-based curves.
    pub v_eq_ml: Option<f64>,
    pub span: LoopSpan,
    /// Quadratic least-squares fit of the loop-free elastic curve over the breath.
    pub a1_ref: f64,
    pub a2_ref: f64,
    pub raw_cmh2o_s_per_ml: f64,
    /// Sign of the elastic curve's second difference over the breath.
    pub curvature_sign: i8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: PatientSpec,
    pub cycles: Vec<CycleTruth>,
}

impl GroundTruth {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Output of [`simulate_recording`].
#[derive(Debug, Clone)]
pub struct SimulatedRecording {
    /// Recording with noise applied.
    pub recording: TimeSeries,
    pub clean: TimeSeries,
    /// Volume above the current step's equilibrium, ml.
    pub volume_ml: Vec<f64>,
    pub phase: Vec<Phase>,
    pub peep_cmh2o: Vec<f64>,
    pub span: Vec<LoopSpan>,
    /// Noise half-ranges actually applied, `(pressure, flow)`.
    pub noise_amplitude: (f64, f64),
    pub truth: GroundTruth,
}

impl SimulatedRecording {
    /// `P - PEEP - F·Raw - Pc(V)` on the clean signals for every sample.
    pub fn equation_of_motion_residuals(&self) -> Result<Vec<f64>> {
        let spec = &self.truth.spec;
        let raw = spec.raw_cmh2o_s_per_ml;
        let mut out = Vec::with_capacity(self.clean.len());
        let mut cached: Option<(f64, StepElastic)> = None;
        for k in 0..self.clean.len() {
            let peep = self.peep_cmh2o[k];
            if cached.as_ref().is_none_or(|(p, _)| *p != peep) {
                cached = Some((peep, StepElastic::new(spec, 0, peep)?));
            }
            let el = &cached.as_ref().unwrap().1;
            let pc = el.pc(self.volume_ml[k], self.phase[k], Some(&self.span[k]))?;
            out.push(self.clean.pressure[k] - peep - self.clean.flow[k] * raw - pc);
        }
        Ok(out)
    }
}

/// Elastic behaviour at one PEEP level, in volume relative to equilibrium.
#[derive(Debug, Clone)]
enum StepElastic {
    Sigmoid {
        curve: SigmoidPV,
        loop_width: f64,
        v_eq: f64,
        peep: f64,
        step: usize,
    },
    Quadratic {
        a1: f64,
        a2: f64,
        peep: f64,
        step: usize,
    },
}

impl StepElastic {
    fn new(spec: &PatientSpec, step: usize, peep: f64) -> Result<Self> {
        let (curve, loop_width) = match spec.pv_curve {
            PvCurve::Sigmoid(s) => (s, 0.0),
            PvCurve::Hysteresis(h) => (h.base, h.loop_width_cmh2o),
            PvCurve::Quadratic(q) => {
                return Ok(StepElastic::Quadratic {
                    a1: q.a1_cmh2o_per_ml,
                    a2: q.a2_cmh2o_per_ml2,
                    peep,
                    step,
                })
            }
        };
        let v_eq = curve.volume_at(peep);
        let el = StepElastic::Sigmoid {
            curve,
            loop_width,
            v_eq,
            peep,
            step,
        };
        el.check_envelope(0.0)?;
        Ok(el)
    }

    fn out_of_envelope(&self, detail: String) -> Error {
        let (step, peep) = match *self {
            StepElastic::Sigmoid { step, peep, .. } | StepElastic::Quadratic { step, peep, .. } => {
                (step, peep)
            }
        };
        Error::OutOfEnvelope {
            step,
            peep_cmh2o: peep,
            detail,
        }
    }

    fn check_envelope(&self, v: f64) -> Result<()> {
        match *self {
            StepElastic::Sigmoid { curve, v_eq, .. } => {
                let abs = v_eq + v;
                let lo = curve.a_ml + ENVELOPE_MARGIN * curve.b_ml;
                let hi = curve.a_ml + (1.0 - ENVELOPE_MARGIN) * curve.b_ml;
                if !(abs >= lo && abs <= hi) {
                    return Err(self.out_of_envelope(format!(
                        "lung volume {abs:.1} ml outside [{lo:.1}, {hi:.1}] ml"
                    )));
                }
            }
            StepElastic::Quadratic { a1, a2, .. } => {
                if !(a1 + 2.0 * a2 * v > 0.0) || !v.is_finite() {
                    return Err(self.out_of_envelope(format!(
                        "volume {v:.1} ml beyond the monotone range of the quadratic curve"
                    )));
                }
            }
        }
        Ok(())
    }

    fn has_loop(&self) -> bool {
        matches!(*self, StepElastic::Sigmoid { loop_width, .. } if loop_width > 0.0)
    }

    /// Elastic pressure above PEEP at volume `v` above equilibrium.
    fn pc(&self, v: f64, phase: Phase, span: Option<&LoopSpan>) -> Result<f64> {
        self.check_envelope(v)?;
        match *self {
            StepElastic::Sigmoid {
                curve,
                loop_width,
                v_eq,
                peep,
                ..
            } => {
                let base = sigmoid_pc(&curve, v_eq + v)
                    .map_err(|e| self.out_of_envelope(e.to_string()))?;
                let w = span.map_or(0.0, |s| s.half_width(loop_width, v));
                let signed = match phase {
                    Phase::Inspiration => w,
                    Phase::Expiration => -w,
                };
                Ok(base + signed - peep)
            }
            StepElastic::Quadratic { a1, a2, .. } => Ok(v * (a1 + a2 * v)),
        }
    }
}

struct CycleSamples {
    pressure: Vec<f64>,
    flow: Vec<f64>,
    volume: Vec<f64>,
    phase: Vec<Phase>,
    /// Volume at the first sample of the following breath.
    v_next: f64,
}

struct CycleCtx<'a> {
    program: &'a VentilatorProgram,
    elastic: &'a StepElastic,
    raw: f64,
    peep: f64,
    dt: f64,
    n: usize,
}

impl CycleCtx<'_> {
    fn flow(&self, p: f64, v: f64, phase: Phase, span: &LoopSpan) -> Result<f64> {
        Ok((p - self.peep - self.elastic.pc(v, phase, Some(span))?) / self.raw)
    }

    fn rk4(&self, p0: f64, p1: f64, v: f64, phase: Phase, span: &LoopSpan) -> Result<f64> {
        let h = self.dt;
        let pm = 0.5 * (p0 + p1);
        let k1 = self.flow(p0, v, phase, span)?;
        let k2 = self.flow(pm, v + 0.5 * h * k1, phase, span)?;
        let k3 = self.flow(pm, v + 0.5 * h * k2, phase, span)?;
        let k4 = self.flow(p1, v + h * k3, phase, span)?;
        Ok(v + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
    }

    fn pcv(&self, v_start: f64, span: &LoopSpan) -> Result<CycleSamples> {
        let p_at = |k: usize| self.peep + self.program.pcv_drive(k as f64 * self.dt);
        let mut out = CycleSamples {
            pressure: Vec::with_capacity(self.n),
            flow: Vec::with_capacity(self.n),
            volume: Vec::with_capacity(self.n),
            phase: Vec::with_capacity(self.n),
            v_next: 0.0,
        };
        let mut v = v_start;
        let f0 = self.flow(p_at(0), v, Phase::Inspiration, span)?;
        let mut phase = if f0 < 0.0 {
            Phase::Expiration
        } else {
            Phase::Inspiration
        };
        for k in 0..self.n {
            let p = p_at(k);
            let f = self.flow(p, v, phase, span)?;
            out.pressure.push(p);
            out.flow.push(f);
            out.volume.push(v);
            out.phase.push(phase);
            // The next breath starts at PEEP with no drive.
            let p_next = if k + 1 < self.n {
                p_at(k + 1)
            } else {
                self.peep
            };
            v = self.rk4(p, p_next, v, phase, span)?;
            if f > 0.0 {
                phase = Phase::Inspiration;
            } else if f < 0.0 {
                phase = Phase::Expiration;
            }
        }
        out.v_next = v;
        Ok(out)
    }

    fn vcv(&self, v_start: f64, span: &LoopSpan) -> Result<CycleSamples> {
        let n_insp = ((self.program.t_insp_s() / self.dt).round() as usize).clamp(1, self.n - 1);
        let f_insp = self.program.amplitude / (n_insp as f64 * self.dt);
        let mut out = CycleSamples {
            pressure: Vec::with_capacity(self.n),
            flow: Vec::with_capacity(self.n),
            volume: Vec::with_capacity(self.n),
            phase: Vec::with_capacity(self.n),
            v_next: 0.0,
        };
        for k in 0..n_insp {
            let v = v_start + f_insp * k as f64 * self.dt;
            let pc = self.elastic.pc(v, Phase::Inspiration, Some(span))?;
            out.pressure.push(self.peep + f_insp * self.raw + pc);
            out.flow.push(f_insp);
            out.volume.push(v);
            out.phase.push(Phase::Inspiration);
        }
        let mut v = v_start + self.program.amplitude;
        for _ in n_insp..self.n {
            let f = self.flow(self.peep, v, Phase::Expiration, span)?;
            out.pressure.push(self.peep);
            out.flow.push(f);
            out.volume.push(v);
            out.phase.push(Phase::Expiration);
            v = self.rk4(self.peep, self.peep, v, Phase::Expiration, span)?;
        }
        out.v_next = v;
        Ok(out)
    }

    /// Runs one breath. With a hysteresis loop the upper turning point is
    /// iterated until it matches the peak volume the breath reaches.
    fn run(&self, v_start: f64) -> Result<(CycleSamples, LoopSpan)> {
        let quasi_static_top = match self.program.mode {
            VentMode::Vcv => v_start + self.program.amplitude,
            VentMode::Pcv => {
                // Volume where Pc reaches the driving pressure, by bisection.
                let target = self.program.amplitude;
                let (mut lo, mut hi) = (v_start, v_start + 1.0);
                while self
                    .elastic
                    .pc(hi, Phase::Inspiration, None)
                    .is_ok_and(|p| p < target)
                    && hi - v_start < 1e5
                {
                    lo = hi;
                    hi = v_start + 2.0 * (hi - v_start);
                }
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    match self.elastic.pc(mid, Phase::Inspiration, None) {
                        Ok(p) if p < target => lo = mid,
                        _ => hi = mid,
                    }
                }
                lo
            }
        };
        let mut span = LoopSpan {
            v_min_ml: v_start,
            v_max_ml: quasi_static_top,
        };
        let simulate = |span: &LoopSpan| match self.program.mode {
            VentMode::Pcv => self.pcv(v_start, span),
            VentMode::Vcv => self.vcv(v_start, span),
        };
        let peak = |s: &CycleSamples| s.volume.iter().cloned().fold(v_start, f64::max);
        let mut samples = simulate(&span)?;
        if self.elastic.has_loop() && self.program.mode == VentMode::Pcv {
            // Upper turning point `s` solves `peak(s) = s`. A zero-width span
            // overshoots and one above the loop-free quasi-static top
            // undershoots, so bisection on that bracket converges.
            let (mut lo, mut hi) = (v_start, quasi_static_top.max(peak(&samples)) + 1.0);
            for _ in 0..200 {
                if hi - lo <= 1e-10 * hi.abs().max(1.0) {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                span.v_max_ml = mid;
                samples = simulate(&span)?;
                if peak(&samples) > mid {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            span.v_max_ml = 0.5 * (lo + hi);
            samples = simulate(&span)?;
        } else {
            span.v_max_ml = peak(&samples);
            if self.elastic.has_loop() {
                samples = simulate(&span)?;
            }
        }
        if self.elastic.has_loop() {
            self.check_limbs(&span)?;
        }
        Ok((samples, span))
    }

    fn check_limbs(&self, span: &LoopSpan) -> Result<()> {
        for i in 1..64 {
            let v = span.v_min_ml + (span.v_max_ml - span.v_min_ml) * i as f64 / 64.0;
            let pe = self.elastic.pc(v, Phase::Expiration, Some(span))?;
            if pe < 0.0 {
                return Err(Error::SimulationState(format!(
                    "expiratory limb falls {:.3} cmH2O below PEEP {} at {v:.1} ml; loop too wide",
                    -pe, self.peep
                )));
            }
        }
        Ok(())
    }
}

/// Quadratic fit of the loop-free curve over `[v_start, v_start + vt]`
/// expressed relative to the breath start.
fn reference_quadratic(el: &StepElastic, v_start: f64, vt: f64) -> Result<(f64, f64, i8)> {
    let base0 = el.pc(v_start, Phase::Inspiration, None)?;
    let n = 101;
    let xs: Vec<f64> = (0..n).map(|i| vt * i as f64 / (n - 1) as f64).collect();
    let ys = xs
        .iter()
        .map(|x| Ok(el.pc(v_start + x, Phase::Inspiration, None)? - base0))
        .collect::<Result<Vec<f64>>>()?;
    let design = DMatrix::from_fn(n, 2, |i, j| if j == 0 { xs[i] } else { xs[i] * xs[i] });
    let sol = linear_lsq(&design, &DVector::from_vec(ys.clone()))?;
    let second_diff = ys[0] - 2.0 * ys[n / 2] + ys[n - 1];
    let sign = if second_diff > 0.0 {
        1
    } else if second_diff < 0.0 {
        -1
    } else {
        0
    };
    Ok((sol.x[0], sol.x[1], sign))
}

/// Generates a recording from a patient definition.
///
/// The recording opens with a zero-flow hold at the first PEEP, inserts a
/// short zero-flow hold whenever the PEEP level changes (the lung starts
/// each level at its equilibrium volume), and ends with the onset of one
/// more breath so the last scheduled breath is complete.
pub fn simulate_recording(spec: &PatientSpec) -> Result<SimulatedRecording> {
    spec.validate()?;
    let prog = &spec.program;
    let fs = prog.sample_rate_hz;
    let dt = 1.0 / fs;
    let n_cycle = prog.samples_per_cycle();
    let legs = prog.legs();

    let mut pressure = Vec::new();
    let mut flow = Vec::new();
    let mut volume = Vec::new();
    let mut phases = Vec::new();
    let mut peeps = Vec::new();
    let mut spans = Vec::new();
    let mut truths = Vec::new();

    let hold = |n: usize,
                peep: f64,
                pressure: &mut Vec<f64>,
                flow: &mut Vec<f64>,
                volume: &mut Vec<f64>,
                phases: &mut Vec<Phase>,
                peeps: &mut Vec<f64>,
                spans: &mut Vec<LoopSpan>| {
        for _ in 0..n {
            pressure.push(peep);
            flow.push(0.0);
            volume.push(0.0);
            phases.push(Phase::Expiration);
            peeps.push(peep);
            spans.push(LoopSpan {
                v_min_ml: 0.0,
                v_max_ml: 0.0,
            });
        }
    };

    let mut cycle_index = 0;
    let mut last_state: Option<(StepElastic, f64, f64)> = None;
    for (step_idx, step) in prog.peep_schedule.iter().enumerate() {
        let peep = step.peep_cmh2o;
        let elastic = StepElastic::new(spec, step_idx, peep)?;
        let n_hold = if step_idx == 0 {
            (LEAD_IN_S * fs).round() as usize
        } else {
            (STEP_HOLD_S * fs).round() as usize
        };
        hold(
            n_hold,
            peep,
            &mut pressure,
            &mut flow,
            &mut volume,
            &mut phases,
            &mut peeps,
            &mut spans,
        );

        let ctx = CycleCtx {
            program: prog,
            elastic: &elastic,
            raw: spec.raw_cmh2o_s_per_ml,
            peep,
            dt,
            n: n_cycle,
        };
        let mut v = 0.0;
        for _ in 0..step.n_cycles {
            let (s, span) = ctx.run(v)?;
            if matches!(spec.pv_curve, PvCurve::Hysteresis(_)) {
                let mut tracker = LoopTracker::new(LOOP_TRACKER_TOL_ML);
                for (vk, ph) in s.volume.iter().zip(&s.phase) {
                    tracker.observe(*vk, *ph)?;
                }
            }
            let vt = s.volume.iter().cloned().fold(v, f64::max) - v;
            let (a1_ref, a2_ref, curvature_sign) = reference_quadratic(&elastic, v, vt)?;
            truths.push(CycleTruth {
                index: cycle_index,
                step: step_idx,
                peep_cmh2o: peep,
                leg: legs[step_idx],
                start_sample: pressure.len(),
                n_samples: n_cycle,
                v_start_ml: v,
                vt_ml: vt,
                v_eq_ml: spec.equilibrium_volume(peep),
                span,
                a1_ref,
                a2_ref,
                raw_cmh2o_s_per_ml: spec.raw_cmh2o_s_per_ml,
                curvature_sign,
            });
            cycle_index += 1;
            pressure.extend(&s.pressure);
            flow.extend(&s.flow);
            volume.extend(&s.volume);
            phases.extend(&s.phase);
            peeps.extend(std::iter::repeat_n(peep, n_cycle));
            spans.extend(std::iter::repeat_n(span, n_cycle));
            v = s.v_next;
        }
        last_state = Some((elastic, peep, v));
    }

    // Onset of one more breath closes the final scheduled cycle.
    if let Some((elastic, peep, v)) = last_state {
        let ctx = CycleCtx {
            program: prog,
            elastic: &elastic,
            raw: spec.raw_cmh2o_s_per_ml,
            peep,
            dt,
            n: n_cycle,
        };
        let (s, span) = ctx.run(v)?;
        let n_trail = ((TRAILER_S * fs).round() as usize).min(n_cycle);
        pressure.extend(&s.pressure[..n_trail]);
        flow.extend(&s.flow[..n_trail]);
        volume.extend(&s.volume[..n_trail]);
        phases.extend(&s.phase[..n_trail]);
        peeps.extend(std::iter::repeat_n(peep, n_trail));
        spans.extend(std::iter::repeat_n(span, n_trail));
    }

    let clean = TimeSeries::new(fs, 0.0, pressure, flow)?;
    let (noisy, noise_amplitude) =
        add_uniform_noise(&clean, prog.noise_pct_p, prog.noise_pct_f, spec.seed)?;
    Ok(SimulatedRecording {
        recording: noisy,
        clean,
        volume_ml: volume,
        phase: phases,
        peep_cmh2o: peeps,
        span: spans,
        noise_amplitude,
        truth: GroundTruth {
            spec: spec.clone(),
            cycles: truths,
        },
    })
}

fn peak_to_peak(x: &[f64]) -> f64 {
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    hi - lo
}

/// Adds independent uniform noise on `[-A, A]` to each channel, where `A` is
/// the given percentage of the clean channel's peak-to-peak range.
pub fn add_uniform_noise(
    clean: &TimeSeries,
    pct_p: f64,
    pct_f: f64,
    seed: u64,
) -> Result<(TimeSeries, (f64, f64))> {
    let amp_p = pct_p / 100.0 * peak_to_peak(&clean.pressure);
    let amp_f = pct_f / 100.0 * peak_to_peak(&clean.flow);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jitter = |x: &[f64], amp: f64| -> Vec<f64> {
        x.iter()
            .map(|&v| {
                if amp > 0.0 {
                    v + rng.random_range(-amp..=amp)
                } else {
                    v
                }
            })
            .collect()
    };
    let pressure = jitter(&clean.pressure, amp_p);
    let flow = jitter(&clean.flow, amp_f);
    Ok((
        TimeSeries::new(clean.sample_rate_hz, clean.t0_s, pressure, flow)?,
        (amp_p, amp_f),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn titration_staircase() {
        let p = titration_program(5.0, 20.0, 5.0, 3).unwrap();
        let levels: Vec<f64> = p.peep_schedule.iter().map(|s| s.peep_cmh2o).collect();
        assert_eq!(levels, vec![5.0, 10.0, 15.0, 20.0, 15.0, 10.0, 5.0]);
        assert_eq!(p.total_cycles(), 21);
        assert_eq!(
            p.legs(),
            vec![
                Leg::Ascending,
                Leg::Ascending,
                Leg::Ascending,
                Leg::Ascending,
                Leg::Descending,
                Leg::Descending,
                Leg::Descending
            ]
        );
    }

    #[test]
    fn titration_single_level() {
        let p = titration_program(5.0, 5.0, 1.0, 2).unwrap();
        assert_eq!(p.peep_schedule.len(), 1);
        assert_eq!(p.total_cycles(), 2);
    }

    #[test]
    fn titration_rejects_bad_args() {
        assert!(titration_program(10.0, 5.0, 1.0, 2).is_err());
        assert!(titration_program(5.0, 10.0, 0.0, 2).is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = PatientSpec {
            pv_curve: PvCurve::Hysteresis(HysteresisPV {
                base: SigmoidPV::default(),
                loop_width_cmh2o: 3.0,
            }),
            raw_cmh2o_s_per_ml: 0.01,
            program: VentilatorProgram::default(),
            seed: 7,
        };
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("\"kind\":\"hysteresis\""));
        let back: PatientSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn insp_fraction_bounds() {
        for insp_fraction in [0.7, 0.2] {
            let p = VentilatorProgram {
                insp_fraction,
                ..VentilatorProgram::default()
            };
            assert!(p.validate().is_err());
        }
    }
}
