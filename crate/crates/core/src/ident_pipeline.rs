//! Per-breath identification: ventilator-style linear estimate, linear and
//! quadratic Levenberg–Marquardt fits, NRMSE gate and a single retry.
//!
//! The quadratic fit of each breath starts from the last accepted quadratic
//! model. A breath whose fit falls below the gate is retried once from a
//! fresh linear-based seed; a second failure discards it. A failing first
//! breath is discarded without retry.

use std::io::{BufRead, Write};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lung_models::{
    residuals, simulate_volume, LinearLungModel, QuadraticLungModel, RespiratoryModel,
};
use crate::nls_solver::{linear_lsq, lm_minimize, Diverged, LmOptions, LmReport, LmStatus};
use crate::signal_io::BreathCycle;

/// `(C, Raw)` bounds for the linear fit.
pub const LINEAR_LOWER: [f64; 2] = [1.0, 1e-4];
pub const LINEAR_UPPER: [f64; 2] = [500.0, 1.0];
/// `(a1, a2, Raw)` bounds for the quadratic fit.
pub const QUADRATIC_LOWER: [f64; 3] = [1e-4, -1e-2, 1e-4];
pub const QUADRATIC_UPPER: [f64; 3] = [1.0, 1e-2, 1.0];

/// Seed multipliers for `(a1, a2)` on the retry.
pub const RETRY_SEED_FACTORS: (f64, f64) = (1.2, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// NRMSE of the unrefined landmark-based linear model of the same breath.
    #[default]
    VentilatorLinear,
    Fixed(f64),
}

impl FromStr for ThresholdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "ventilator" || s == "ventilator_linear" {
            return Ok(ThresholdMode::VentilatorLinear);
        }
        let value = s.strip_prefix("fixed:").ok_or_else(|| {
            Error::Argument(format!(
                "threshold must be 'ventilator' or 'fixed:X', got {s:?}"
            ))
        })?;
        let x: f64 = value
            .parse()
            .map_err(|_| Error::Argument(format!("cannot parse threshold value {value:?}")))?;
        let mode = ThresholdMode::Fixed(x);
        mode.validate()?;
        Ok(mode)
    }
}

impl ThresholdMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ThresholdMode::Fixed(x) if !(0.0..=100.0).contains(&x) => Err(Error::Argument(
                format!("fixed threshold {x} outside [0, 100]"),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub threshold_mode: ThresholdMode,
    pub lm_options_linear: LmOptions,
    pub lm_options_quadratic: LmOptions,
    pub warm_start: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            threshold_mode: ThresholdMode::VentilatorLinear,
            lm_options_linear: LmOptions::with_bounds(LINEAR_LOWER.to_vec(), LINEAR_UPPER.to_vec()),
            lm_options_quadratic: LmOptions::with_bounds(
                QUADRATIC_LOWER.to_vec(),
                QUADRATIC_UPPER.to_vec(),
            ),
            warm_start: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Accepted,
    AcceptedAfterRetry,
    Discarded,
    DiscardedFirstCycle,
}

impl FitStatus {
    pub fn is_accepted(self) -> bool {
        matches!(self, FitStatus::Accepted | FitStatus::AcceptedAfterRetry)
    }
}

/// Outcome of identification on one breath.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "FitRecord", from = "FitRecord")]
pub struct FitResult {
    pub cycle_index: usize,
    pub status: FitStatus,
    pub linear: Option<LinearLungModel>,
    pub nrmse_linear_pct: Option<f64>,
    /// For discarded breaths, the last model tried.
    pub quadratic: Option<QuadraticLungModel>,
    pub nrmse_quadratic_pct: Option<f64>,
    pub threshold_pct: Option<f64>,
    pub aux_used: bool,
    /// Jacobian evaluations over every solver run on this breath.
    pub iters: usize,
    pub peep_cmh2o: f64,
    pub vt_ml: f64,
    pub note: Option<String>,
    /// Not serialized.
    pub linear_report: Option<LmReport>,
    /// Not serialized. The last quadratic run.
    pub quadratic_report: Option<LmReport>,
}

impl FitResult {
    pub fn is_accepted(&self) -> bool {
        self.status.is_accepted()
    }

    /// `nrmse_quadratic - nrmse_linear`, when both are known.
    pub fn nrmse_delta(&self) -> Option<f64> {
        Some(self.nrmse_quadratic_pct? - self.nrmse_linear_pct?)
    }
}

/// Flat JSON form of a [`FitResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub index: usize,
    pub status: FitStatus,
    pub c: Option<f64>,
    pub raw_linear: Option<f64>,
    pub raw: Option<f64>,
    pub a1: Option<f64>,
    pub a2: Option<f64>,
    pub nrmse_linear: Option<f64>,
    pub nrmse_quadratic: Option<f64>,
    pub threshold: Option<f64>,
    pub iters: usize,
    pub peep: f64,
    pub vt: f64,
    pub aux_used: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

fn finite(x: Option<f64>) -> Option<f64> {
    x.filter(|v| v.is_finite())
}

impl From<FitResult> for FitRecord {
    fn from(f: FitResult) -> Self {
        FitRecord {
            index: f.cycle_index,
            status: f.status,
            c: finite(f.linear.map(|m| m.c_ml_per_cmh2o)),
            raw_linear: finite(f.linear.map(|m| m.raw_cmh2o_s_per_ml)),
            raw: finite(f.quadratic.map(|m| m.raw_cmh2o_s_per_ml)),
            a1: finite(f.quadratic.map(|m| m.a1_cmh2o_per_ml)),
            a2: finite(f.quadratic.map(|m| m.a2_cmh2o_per_ml2)),
            nrmse_linear: finite(f.nrmse_linear_pct),
            nrmse_quadratic: finite(f.nrmse_quadratic_pct),
            threshold: finite(f.threshold_pct),
            iters: f.iters,
            peep: f.peep_cmh2o,
            vt: f.vt_ml,
            aux_used: f.aux_used,
            note: f.note,
        }
    }
}

impl From<FitRecord> for FitResult {
    fn from(r: FitRecord) -> Self {
        let linear = match (r.c, r.raw_linear) {
            (Some(c), Some(raw)) => Some(LinearLungModel {
                c_ml_per_cmh2o: c,
                raw_cmh2o_s_per_ml: raw,
            }),
            _ => None,
        };
        let quadratic = match (r.a1, r.a2, r.raw) {
            (Some(a1), Some(a2), Some(raw)) => Some(QuadraticLungModel {
                a1_cmh2o_per_ml: a1,
                a2_cmh2o_per_ml2: a2,
                raw_cmh2o_s_per_ml: raw,
            }),
            _ => None,
        };
        FitResult {
            cycle_index: r.index,
            status: r.status,
            linear,
            nrmse_linear_pct: r.nrmse_linear,
            quadratic,
            nrmse_quadratic_pct: r.nrmse_quadratic,
            threshold_pct: r.threshold,
            aux_used: r.aux_used,
            iters: r.iters,
            peep_cmh2o: r.peep,
            vt_ml: r.vt,
            note: r.note,
            linear_report: None,
            quadratic_report: None,
        }
    }
}

/// One JSON object per line.
pub fn write_jsonl<W: Write>(fits: &[FitResult], mut w: W) -> Result<()> {
    for f in fits {
        serde_json::to_writer(&mut w, f)?;
        w.write_all(b"\n")
            .map_err(|e| Error::io("<jsonl writer>", e))?;
    }
    w.flush().map_err(|e| Error::io("<jsonl writer>", e))
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<FitResult>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<jsonl reader>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// `100·(1 - ‖v - v̂‖ / ‖v - mean(v)‖)`; negative for fits worse than the mean.
pub fn nrmse_pct(v: &[f64], v_hat: &[f64]) -> Result<f64> {
    if v.len() != v_hat.len() || v.len() < 2 {
        return Err(Error::Argument(format!(
            "NRMSE needs equal lengths >= 2, got {} and {}",
            v.len(),
            v_hat.len()
        )));
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let den = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>().sqrt();
    if !(den > 0.0) {
        return Err(Error::ConstantSignal);
    }
    let num = v
        .iter()
        .zip(v_hat)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(100.0 * (1.0 - num / den))
}

/// NRMSE of a model's predicted volume on a breath; `-inf` if it diverges.
pub fn model_nrmse<M: RespiratoryModel + ?Sized>(model: &M, cycle: &BreathCycle) -> Result<f64> {
    let pred = simulate_volume(model, &cycle.pv, cycle.dt_s);
    if pred.diverged {
        return Ok(f64::NEG_INFINITY);
    }
    nrmse_pct(&cycle.volume, &pred.volume)
}

fn clamp_into(x: f64, lo: f64, hi: f64) -> f64 {
    x.max(lo).min(hi)
}

/// Landmark estimate `C = VT / (Pplat - PEEP)`, `Raw = (PIP - Pplat) / PIF`
/// with no clamping.
pub fn landmark_linear(cycle: &BreathCycle) -> Result<(f64, f64)> {
    let dp = cycle.plateau_cmh2o - cycle.peep_cmh2o;
    if !(dp > 0.0) {
        return Err(Error::DegenerateCycle(format!(
            "plateau {} not above PEEP {}",
            cycle.plateau_cmh2o, cycle.peep_cmh2o
        )));
    }
    if !(cycle.pif_ml_s > 0.0) {
        return Err(Error::DegenerateCycle(
            "peak inspiratory flow is zero".into(),
        ));
    }
    if !(cycle.vt_insp_ml > 0.0) {
        return Err(Error::DegenerateCycle(
            "inspired volume is not positive".into(),
        ));
    }
    Ok((
        cycle.vt_insp_ml / dp,
        (cycle.pip_cmh2o - cycle.plateau_cmh2o) / cycle.pif_ml_s,
    ))
}

/// Landmark estimate clamped into the linear solver bounds.
pub fn linear_init(cycle: &BreathCycle) -> Result<LinearLungModel> {
    let (c, raw) = landmark_linear(cycle)?;
    Ok(LinearLungModel {
        c_ml_per_cmh2o: clamp_into(c, LINEAR_LOWER[0], LINEAR_UPPER[0]),
        raw_cmh2o_s_per_ml: clamp_into(raw, LINEAR_LOWER[1], LINEAR_UPPER[1]),
    })
}

fn clamp_to_opts(theta: &mut [f64], opts: &LmOptions) {
    for (i, t) in theta.iter_mut().enumerate() {
        if let (Some(&lo), Some(&hi)) = (opts.lower.get(i), opts.upper.get(i)) {
            *t = clamp_into(*t, lo, hi);
        }
    }
}

fn with_scale(opts: &LmOptions, theta0: &[f64]) -> LmOptions {
    let mut o = opts.clone();
    if o.scale.is_empty() {
        o.scale = theta0.iter().map(|t| t.abs()).collect();
    }
    o
}

/// Fits `(C, Raw)` by minimizing the volume prediction error.
pub fn identify_linear(
    cycle: &BreathCycle,
    init: &LinearLungModel,
    opts: &LmOptions,
) -> Result<(LinearLungModel, LmReport)> {
    let theta0 = [init.c_ml_per_cmh2o, init.raw_cmh2o_s_per_ml];
    let f = |th: &[f64]| {
        let m = LinearLungModel {
            c_ml_per_cmh2o: th[0],
            raw_cmh2o_s_per_ml: th[1],
        };
        let r = residuals(&m, cycle);
        if r.diverged {
            Err(Diverged)
        } else {
            Ok(r.values)
        }
    };
    let rep = lm_minimize(f, &theta0, &with_scale(opts, &theta0))?;
    let model = LinearLungModel {
        c_ml_per_cmh2o: rep.theta[0],
        raw_cmh2o_s_per_ml: rep.theta[1],
    };
    Ok((model, rep))
}

/// Least-squares seed for the quadratic model from `pv - F·Raw = a1·V + a2·V²`
/// with `Raw` taken from the linear fit.
pub fn quadratic_init(cycle: &BreathCycle, lin: &LinearLungModel) -> Result<QuadraticLungModel> {
    let n = cycle.len();
    let raw = lin.raw_cmh2o_s_per_ml;
    if cycle.volume.iter().all(|v| v.abs() < 1e-9) {
        return Err(Error::DegenerateDesign(
            "volume is zero throughout the breath".into(),
        ));
    }
    let design = DMatrix::from_fn(n, 2, |i, j| {
        let v = cycle.volume[i];
        if j == 0 {
            v
        } else {
            v * v
        }
    });
    let target = DVector::from_fn(n, |i, _| cycle.pv[i] - cycle.flow[i] * raw);
    let sol = linear_lsq(&design, &target)?;
    if sol.degenerate {
        return Err(Error::DegenerateDesign(
            "volume and squared volume are collinear".into(),
        ));
    }
    QuadraticLungModel::new(sol.x[0], sol.x[1], raw)
}

/// Fits `(a1, a2, Raw)` by minimizing the volume prediction error.
pub fn identify_quadratic(
    cycle: &BreathCycle,
    init: &QuadraticLungModel,
    opts: &LmOptions,
) -> Result<(QuadraticLungModel, LmReport)> {
    let mut theta0 = [
        init.a1_cmh2o_per_ml,
        init.a2_cmh2o_per_ml2,
        init.raw_cmh2o_s_per_ml,
    ];
    clamp_to_opts(&mut theta0, opts);
    let f = |th: &[f64]| {
        let m = QuadraticLungModel {
            a1_cmh2o_per_ml: th[0],
            a2_cmh2o_per_ml2: th[1],
            raw_cmh2o_s_per_ml: th[2],
        };
        let r = residuals(&m, cycle);
        if r.diverged {
            Err(Diverged)
        } else {
            Ok(r.values)
        }
    };
    let rep = lm_minimize(f, &theta0, &with_scale(opts, &theta0))?;
    let model = QuadraticLungModel {
        a1_cmh2o_per_ml: rep.theta[0],
        a2_cmh2o_per_ml2: rep.theta[1],
        raw_cmh2o_s_per_ml: rep.theta[2],
    };
    Ok((model, rep))
}

fn solver_failed(status: LmStatus) -> bool {
    matches!(status, LmStatus::Singular | LmStatus::DivergedResidual)
}

struct QuadAttempt {
    model: QuadraticLungModel,
    report: LmReport,
    nrmse: f64,
}

impl QuadAttempt {
    fn passes(&self, threshold: f64) -> bool {
        !solver_failed(self.report.status)
            && self.model.is_physiological()
            && self.nrmse >= threshold
    }
}

fn attempt(
    cycle: &BreathCycle,
    seed: &QuadraticLungModel,
    opts: &LmOptions,
) -> Result<QuadAttempt> {
    let (model, report) = identify_quadratic(cycle, seed, opts)?;
    let nrmse = if report.status == LmStatus::DivergedResidual {
        f64::NEG_INFINITY
    } else {
        model_nrmse(&model, cycle)?
    };
    Ok(QuadAttempt {
        model,
        report,
        nrmse,
    })
}

/// Identification state carried from breath to breath.
#[derive(Debug, Clone, Default)]
pub struct PipelineState {
    /// Last accepted quadratic model.
    pub warm: Option<QuadraticLungModel>,
    pub processed: usize,
}

/// Runs the full per-breath procedure on one breath.
pub fn identify_cycle(
    cycle: &BreathCycle,
    cycle_index: usize,
    state: &mut PipelineState,
    cfg: &PipelineConfig,
) -> Result<FitResult> {
    cfg.threshold_mode.validate()?;
    let first = state.processed == 0;
    state.processed += 1;
    let mut fit = FitResult {
        cycle_index,
        status: FitStatus::Discarded,
        linear: None,
        nrmse_linear_pct: None,
        quadratic: None,
        nrmse_quadratic_pct: None,
        threshold_pct: None,
        aux_used: false,
        iters: 0,
        peep_cmh2o: cycle.peep_cmh2o,
        vt_ml: cycle.vt_insp_ml,
        note: None,
        linear_report: None,
        quadratic_report: None,
    };
    let discard = |mut fit: FitResult, note: String| {
        fit.status = if first {
            FitStatus::DiscardedFirstCycle
        } else {
            FitStatus::Discarded
        };
        fit.note = Some(note);
        Ok(fit)
    };

    let init = match linear_init(cycle) {
        Ok(m) => m,
        Err(e) => return discard(fit, e.to_string()),
    };
    let threshold = match cfg.threshold_mode {
        ThresholdMode::VentilatorLinear => model_nrmse(&init, cycle),
        ThresholdMode::Fixed(x) => Ok(x),
    };
    let threshold = match threshold {
        Ok(t) => t,
        Err(e) => return discard(fit, e.to_string()),
    };
    fit.threshold_pct = Some(threshold);

    let (lin, lin_rep) = identify_linear(cycle, &init, &cfg.lm_options_linear)?;
    fit.iters += lin_rep.iters;
    let lin_failed = solver_failed(lin_rep.status);
    fit.linear = Some(lin);
    fit.nrmse_linear_pct = Some(model_nrmse(&lin, cycle)?);
    fit.linear_report = Some(lin_rep);
    if lin_failed {
        return discard(fit, "linear identification failed".into());
    }

    let fresh_seed = || quadratic_init(cycle, &lin);
    let seed = match state.warm.filter(|_| cfg.warm_start) {
        Some(w) => w,
        None => match fresh_seed() {
            Ok(s) => s,
            Err(e) => return discard(fit, e.to_string()),
        },
    };
    let first_try = attempt(cycle, &seed, &cfg.lm_options_quadratic)?;
    fit.iters += first_try.report.iters;
    let passed = first_try.passes(threshold);
    fit.quadratic = Some(first_try.model);
    fit.nrmse_quadratic_pct = Some(first_try.nrmse);
    fit.quadratic_report = Some(first_try.report);
    if passed {
        fit.status = FitStatus::Accepted;
        state.warm = Some(first_try.model);
        return Ok(fit);
    }
    if first {
        return discard(fit, "quadratic fit below gate on first breath".into());
    }

    fit.aux_used = true;
    let retry_seed = match fresh_seed() {
        Ok(s) => QuadraticLungModel {
            a1_cmh2o_per_ml: s.a1_cmh2o_per_ml * RETRY_SEED_FACTORS.0,
            a2_cmh2o_per_ml2: s.a2_cmh2o_per_ml2 * RETRY_SEED_FACTORS.1,
            ..s
        },
        Err(e) => return discard(fit, e.to_string()),
    };
    let retry = attempt(cycle, &retry_seed, &cfg.lm_options_quadratic)?;
    fit.iters += retry.report.iters;
    let passed = retry.passes(threshold);
    fit.quadratic = Some(retry.model);
    fit.nrmse_quadratic_pct = Some(retry.nrmse);
    fit.quadratic_report = Some(retry.report);
    if passed {
        fit.status = FitStatus::AcceptedAfterRetry;
        state.warm = Some(retry.model);
        Ok(fit)
    } else {
        discard(fit, "quadratic fit below gate after retry".into())
    }
}

/// Identifies every breath in order. Fails only if no breath is accepted.
pub fn run_pipeline(cycles: &[BreathCycle], cfg: &PipelineConfig) -> Result<Vec<FitResult>> {
    let mut state = PipelineState::default();
    let fits = cycles
        .iter()
        .enumerate()
        .map(|(i, c)| identify_cycle(c, i, &mut state, cfg))
        .collect::<Result<Vec<_>>>()?;
    if !fits.iter().any(FitResult::is_accepted) {
        let diag: Vec<String> = fits
            .iter()
            .map(|f| {
                format!(
                    "cycle {}: {:?} ({})",
                    f.cycle_index,
                    f.status,
                    f.note.as_deref().unwrap_or("-")
                )
            })
            .collect();
        return Err(Error::Empty(if diag.is_empty() {
            "no cycles to identify".into()
        } else {
            format!("all cycles discarded: {}", diag.join("; "))
        }));
    }
    Ok(fits)
}

/// Counts and mean scores over a fit sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub cycles: usize,
    pub accepted: usize,
    pub accepted_after_retry: usize,
    pub discarded: usize,
    pub mean_nrmse_linear: Option<f64>,
    pub mean_nrmse_quadratic: Option<f64>,
}

impl PipelineSummary {
    pub fn from_fits(fits: &[FitResult]) -> Self {
        let mean =
            |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
        let acc: Vec<&FitResult> = fits.iter().filter(|f| f.is_accepted()).collect();
        Self {
            cycles: fits.len(),
            accepted: fits
                .iter()
                .filter(|f| f.status == FitStatus::Accepted)
                .count(),
            accepted_after_retry: fits
                .iter()
                .filter(|f| f.status == FitStatus::AcceptedAfterRetry)
                .count(),
            discarded: fits.iter().filter(|f| !f.is_accepted()).count(),
            mean_nrmse_linear: mean(
                acc.iter()
                    .filter_map(|f| finite(f.nrmse_linear_pct))
                    .collect(),
            ),
            mean_nrmse_quadratic: mean(
                acc.iter()
                    .filter_map(|f| finite(f.nrmse_quadratic_pct))
                    .collect(),
            ),
        }
    }
}

impl std::fmt::Display for PipelineSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let pct = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.2}%"));
        write!(
            f,
            "cycles: {}  accepted: {}  accepted after retry: {}  discarded: {}\n\
             mean NRMSE linear: {}  quadratic: {}",
            self.cycles,
            self.accepted,
            self.accepted_after_retry,
            self.discarded,
            pct(self.mean_nrmse_linear),
            pct(self.mean_nrmse_quadratic)
        )
    }
}
