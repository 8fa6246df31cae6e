//! Single-compartment respiratory models driven by variable pressure.
//!
//! The equation of motion `Pv = V'·Raw + Pc(V)` is integrated forward from
//! `V(0) = 0` to predict the volume a model produces for a measured `Pv`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal_io::BreathCycle;

/// Predicted volume beyond this magnitude (ml) is treated as divergence.
pub const DIVERGENCE_LIMIT_ML: f64 = 1e5;

/// Elastic recoil pressure plus a linear airway resistance.
pub trait RespiratoryModel {
    /// Elastic pressure `Pc(V)` at volume `v` above the operating point, cmH2O.
    fn pc_of_v(&self, v: f64) -> f64;
    /// Airway resistance, cmH2O·s/ml.
    fn raw(&self) -> f64;
}

/// `Pc(V) = V / C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearLungModel {
    pub c_ml_per_cmh2o: f64,
    pub raw_cmh2o_s_per_ml: f64,
}

impl LinearLungModel {
    pub fn new(c_ml_per_cmh2o: f64, raw_cmh2o_s_per_ml: f64) -> Result<Self> {
        let m = Self {
            c_ml_per_cmh2o,
            raw_cmh2o_s_per_ml,
        };
        if !m.is_valid() {
            return Err(Error::Argument(format!(
                "linear model needs C > 0 and Raw > 0, got C = {c_ml_per_cmh2o}, Raw = {raw_cmh2o_s_per_ml}"
            )));
        }
        Ok(m)
    }

    pub fn is_valid(&self) -> bool {
        self.c_ml_per_cmh2o.is_finite()
            && self.raw_cmh2o_s_per_ml.is_finite()
            && self.c_ml_per_cmh2o > 0.0
            && self.raw_cmh2o_s_per_ml > 0.0
    }

    pub fn elastance(&self) -> f64 {
        1.0 / self.c_ml_per_cmh2o
    }

    /// Time constant `Raw·C`, s.
    pub fn tau_s(&self) -> f64 {
        self.raw_cmh2o_s_per_ml * self.c_ml_per_cmh2o
    }

    /// The quadratic model with zero curvature that reproduces this one.
    pub fn as_quadratic(&self) -> QuadraticLungModel {
        QuadraticLungModel {
            a1_cmh2o_per_ml: self.elastance(),
            a2_cmh2o_per_ml2: 0.0,
            raw_cmh2o_s_per_ml: self.raw_cmh2o_s_per_ml,
        }
    }
}

impl RespiratoryModel for LinearLungModel {
    fn pc_of_v(&self, v: f64) -> f64 {
        v / self.c_ml_per_cmh2o
    }

    fn raw(&self) -> f64 {
        self.raw_cmh2o_s_per_ml
    }
}

/// `Pc(V) = V·(a1 + a2·V)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticLungModel {
    pub a1_cmh2o_per_ml: f64,
    pub a2_cmh2o_per_ml2: f64,
    pub raw_cmh2o_s_per_ml: f64,
}

impl QuadraticLungModel {
    /// Requires finite values and `Raw > 0`. A non-positive `a1` is accepted
    /// here and reported by [`QuadraticLungModel::is_physiological`].
    pub fn new(a1: f64, a2: f64, raw: f64) -> Result<Self> {
        if !(a1.is_finite() && a2.is_finite() && raw.is_finite() && raw > 0.0) {
            return Err(Error::Argument(format!(
                "quadratic model needs finite parameters and Raw > 0, got a1 = {a1}, a2 = {a2}, Raw = {raw}"
            )));
        }
        Ok(Self {
            a1_cmh2o_per_ml: a1,
            a2_cmh2o_per_ml2: a2,
            raw_cmh2o_s_per_ml: raw,
        })
    }

    pub fn is_physiological(&self) -> bool {
        self.a1_cmh2o_per_ml > 0.0
    }

    /// `d²Pc/dV²`, constant for the quadratic.
    pub fn curvature(&self) -> f64 {
        2.0 * self.a2_cmh2o_per_ml2
    }

    /// Linear and quadratic pressure terms at volume `vt`: `(a1·vt, a2·vt²)`.
    pub fn pressure_terms(&self, vt: f64) -> (f64, f64) {
        (self.a1_cmh2o_per_ml * vt, self.a2_cmh2o_per_ml2 * vt * vt)
    }
}

impl RespiratoryModel for QuadraticLungModel {
    fn pc_of_v(&self, v: f64) -> f64 {
        v * (self.a1_cmh2o_per_ml + self.a2_cmh2o_per_ml2 * v)
    }

    fn raw(&self) -> f64 {
        self.raw_cmh2o_s_per_ml
    }
}

/// Model volume aligned to the input samples.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumePrediction {
    /// Truncated at the first diverging sample when `diverged` is set.
    pub volume: Vec<f64>,
    pub diverged: bool,
}

/// Integrates `V' = (pv - Pc(V)) / Raw` from `V(0) = 0` with classical RK4,
/// one step per sample and `pv` linearly interpolated at the half step.
pub fn simulate_volume<M: RespiratoryModel + ?Sized>(
    model: &M,
    pv: &[f64],
    dt: f64,
) -> VolumePrediction {
    simulate_volume_substeps(model, pv, dt, 1)
}

/// As [`simulate_volume`] with each sample interval split into `substeps`
/// RK4 steps over the piecewise-linear `pv`. Output stays at sample times.
pub fn simulate_volume_substeps<M: RespiratoryModel + ?Sized>(
    model: &M,
    pv: &[f64],
    dt: f64,
    substeps: usize,
) -> VolumePrediction {
    assert!(dt > 0.0 && substeps > 0);
    let mut volume = Vec::with_capacity(pv.len());
    if pv.is_empty() {
        return VolumePrediction {
            volume,
            diverged: false,
        };
    }
    let inv_raw = 1.0 / model.raw();
    let deriv = |p: f64, v: f64| (p - model.pc_of_v(v)) * inv_raw;
    let h = dt / substeps as f64;
    let mut v = 0.0;
    volume.push(v);
    for w in pv.windows(2) {
        let (p0, p1) = (w[0], w[1]);
        let slope = p1 - p0;
        for s in 0..substeps {
            let frac = s as f64 / substeps as f64;
            let half = 0.5 / substeps as f64;
            let pa = p0 + slope * frac;
            let pm = p0 + slope * (frac + half);
            let pb = p0 + slope * (frac + 2.0 * half);
            let k1 = deriv(pa, v);
            let k2 = deriv(pm, v + 0.5 * h * k1);
            let k3 = deriv(pm, v + 0.5 * h * k2);
            let k4 = deriv(pb, v + h * k3);
            v += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        if !v.is_finite() || v.abs() > DIVERGENCE_LIMIT_ML {
            return VolumePrediction {
                volume,
                diverged: true,
            };
        }
        volume.push(v);
    }
    VolumePrediction {
        volume,
        diverged: false,
    }
}

/// Prediction error `V̂ - V` over one cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub values: Vec<f64>,
    pub diverged: bool,
}

impl Residuals {
    /// Sum of squares, `+inf` when the prediction diverged.
    pub fn cost(&self) -> f64 {
        if self.diverged {
            f64::INFINITY
        } else {
            self.values.iter().map(|r| r * r).sum()
        }
    }
}

pub fn residuals<M: RespiratoryModel + ?Sized>(model: &M, cycle: &BreathCycle) -> Residuals {
    let pred = simulate_volume(model, &cycle.pv, cycle.dt_s);
    let values = pred
        .volume
        .iter()
        .zip(&cycle.volume)
        .map(|(vh, v)| vh - v)
        .collect();
    Residuals {
        values,
        diverged: pred.diverged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DT: f64 = 1.0 / 256.0;

    #[test]
    fn pc_of_v_values() {
        let lin = LinearLungModel::new(50.0, 0.01).unwrap();
        assert_eq!(lin.pc_of_v(0.0), 0.0);
        assert_eq!(lin.pc_of_v(100.0), 2.0);
        let q = QuadraticLungModel::new(0.020, 1.38e-6, 0.01).unwrap();
        let (lin_term, quad_term) = q.pressure_terms(480.0);
        assert!((lin_term - 9.6).abs() < 1e-12);
        assert!((quad_term - 1.38e-6 * 480.0 * 480.0).abs() < 1e-12);
        assert!((q.pc_of_v(480.0) - 9.918).abs() < 1e-3);
    }

    #[test]
    fn zero_pressure_is_equilibrium() {
        let q = QuadraticLungModel::new(0.03, -2e-5, 0.01).unwrap();
        let pred = simulate_volume(&q, &[0.0; 300], DT);
        assert!(!pred.diverged);
        assert!(pred.volume.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_step_response() {
        let lin = LinearLungModel::new(50.0, 0.01).unwrap();
        let mut pv = vec![10.0; 1000];
        pv[0] = 10.0;
        let pred = simulate_volume(&lin, &pv, DT);
        // t = 0.5 s is sample 128.
        let expected = 500.0 * (1.0 - (-1.0_f64).exp());
        assert!((pred.volume[128] - expected).abs() / expected < 1e-3);
    }

    #[test]
    fn linear_steady_state_after_seven_tau() {
        let lin = LinearLungModel::new(40.0, 0.02).unwrap();
        let n = (7.0 * lin.tau_s() / DT).ceil() as usize + 1;
        let pred = simulate_volume(&lin, &vec![12.0; n], DT);
        let target = 40.0 * 12.0;
        assert!((pred.volume[n - 1] - target).abs() / target < 1e-3);
    }

    #[test]
    fn divergence_is_flagged_and_truncated() {
        let q = QuadraticLungModel::new(0.01, -1e-3, 0.001).unwrap();
        let pred = simulate_volume(&q, &[30.0; 2000], DT);
        assert!(pred.diverged);
        assert!(pred.volume.len() < 2000);
        assert!(pred.volume.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn residuals_zero_on_rest() {
        let c = BreathCycle {
            start_idx: 0,
            end_idx: 4,
            insp_end_idx: 2,
            dt_s: DT,
            pv: vec![0.0; 4],
            flow: vec![0.0; 4],
            volume: vec![0.0; 4],
            peep_cmh2o: 5.0,
            pip_cmh2o: 5.0,
            plateau_cmh2o: 5.0,
            pif_ml_s: 0.0,
            vt_insp_ml: 0.0,
            flags: vec![],
        };
        let r = residuals(&LinearLungModel::new(50.0, 0.01).unwrap(), &c);
        assert_eq!(r.values, vec![0.0; 4]);
        assert_eq!(r.cost(), 0.0);
    }

    #[test]
    fn nesting_identity_on_pc() {
        let lin = LinearLungModel::new(37.0, 0.015).unwrap();
        let q = lin.as_quadratic();
        for v in [-50.0, 0.0, 12.5, 480.0] {
            assert!((lin.pc_of_v(v) - q.pc_of_v(v)).abs() <= 1e-12 * lin.pc_of_v(v).abs().max(1.0));
        }
    }

    #[test]
    fn raw_must_be_positive() {
        assert!(LinearLungModel::new(50.0, 0.0).is_err());
        assert!(QuadraticLungModel::new(0.02, 0.0, -1.0).is_err());
        assert!(!QuadraticLungModel::new(-0.02, 0.0, 0.01)
            .unwrap()
            .is_physiological());
    }
}
