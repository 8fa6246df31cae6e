use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Venegas sigmoid `V = a + b / (1 + exp(-(P - c) / d))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmoidPV {
    pub a_ml: f64,
    pub b_ml: f64,
    pub c_cmh2o: f64,
    pub d_cmh2o: f64,
}

impl Default for SigmoidPV {
    /// Inflection points near 7 and 23 cmH2O, midpoint at 15 cmH2O.
    fn default() -> Self {
        Self {
            a_ml: 0.0,
            b_ml: 4000.0,
            c_cmh2o: 15.0,
            d_cmh2o: 4.0,
        }
    }
}

impl SigmoidPV {
    pub fn new(a_ml: f64, b_ml: f64, c_cmh2o: f64, d_cmh2o: f64) -> Result<Self> {
        let s = Self {
            a_ml,
            b_ml,
            c_cmh2o,
            d_cmh2o,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.a_ml, self.b_ml, self.c_cmh2o, self.d_cmh2o]
            .iter()
            .all(|x| x.is_finite());
        if !finite || self.b_ml <= 0.0 || self.d_cmh2o <= 0.0 {
            return Err(Error::Argument(format!(
                "sigmoid needs finite constants with b > 0 and d > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Forward curve: volume at alveolar pressure `p`.
    pub fn volume_at(&self, p: f64) -> f64 {
        self.a_ml + self.b_ml / (1.0 + (-(p - self.c_cmh2o) / self.d_cmh2o).exp())
    }

    /// `dV/dP` at pressure `p`.
    pub fn compliance_at(&self, p: f64) -> f64 {
        let s = 1.0 / (1.0 + (-(p - self.c_cmh2o) / self.d_cmh2o).exp());
        self.b_ml / self.d_cmh2o * s * (1.0 - s)
    }

    /// Lower inflection point, taken as `c - 2d`.
    pub fn lip_cmh2o(&self) -> f64 {
        self.c_cmh2o - 2.0 * self.d_cmh2o
    }

    /// Upper inflection point, taken as `c + 2d`.
    pub fn uip_cmh2o(&self) -> f64 {
        self.c_cmh2o + 2.0 * self.d_cmh2o
    }

    pub fn midpoint_volume(&self) -> f64 {
        self.a_ml + self.b_ml / 2.0
    }

    /// Sign of `d²P/dV²` at volume `v`: negative below the midpoint
    /// (concave, atelectasis side), positive above it (overdistension side).
    pub fn curvature_sign_at(&self, v: f64) -> i8 {
        let mid = self.midpoint_volume();
        if v > mid {
            1
        } else if v < mid {
            -1
        } else {
            0
        }
    }
}

/// Analytic inverse of the sigmoid: pressure at volume `v`, defined on the
/// open interval `(a, a + b)`.
pub fn sigmoid_pc(curve: &SigmoidPV, v: f64) -> Result<f64> {
    let lo = curve.a_ml;
    let hi = curve.a_ml + curve.b_ml;
    if !(v > lo && v < hi) {
        return Err(Error::Argument(format!(
            "volume {v} ml outside the sigmoid range ({lo}, {hi})"
        )));
    }
    let ratio = curve.b_ml / (v - curve.a_ml) - 1.0;
    if !(ratio > 0.0) {
        return Err(Error::Argument(format!(
            "volume {v} ml numerically at the top of the sigmoid"
        )));
    }
    Ok(curve.c_cmh2o - curve.d_cmh2o * ratio.ln())
}

/// Sigmoid base curve with a closed hysteresis loop around it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HysteresisPV {
    pub base: SigmoidPV,
    /// Pressure separation of the two limbs at mid-loop, cmH2O.
    pub loop_width_cmh2o: f64,
}

impl Default for HysteresisPV {
    fn default() -> Self {
        Self {
            base: SigmoidPV::default(),
            loop_width_cmh2o: 3.0,
        }
    }
}

impl HysteresisPV {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if !(self.loop_width_cmh2o >= 0.0 && self.loop_width_cmh2o.is_finite()) {
            return Err(Error::Argument("loop width must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Volume interval over which the loop is open for one breath.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopSpan {
    pub v_min_ml: f64,
    pub v_max_ml: f64,
}

impl LoopSpan {
    /// Half-separation `w(v)`, zero at and outside the turning points.
    pub fn half_width(&self, loop_width: f64, v: f64) -> f64 {
        let range = self.v_max_ml - self.v_min_ml;
        if !(range > 0.0) || v <= self.v_min_ml || v >= self.v_max_ml {
            return 0.0;
        }
        0.5 * loop_width * (std::f64::consts::PI * (v - self.v_min_ml) / range).sin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Inspiration,
    Expiration,
}

/// Pressure on the inspiratory (`+w`) or expiratory (`-w`) limb at volume `v`.
pub fn hysteresis_pc(curve: &HysteresisPV, span: &LoopSpan, v: f64, phase: Phase) -> Result<f64> {
    let base = sigmoid_pc(&curve.base, v)?;
    let w = span.half_width(curve.loop_width_cmh2o, v);
    Ok(match phase {
        Phase::Inspiration => base + w,
        Phase::Expiration => base - w,
    })
}

/// Tracks volumes on a loop and rejects motion against the declared phase.
/// Within one phase the volume may not retreat more than `tol_ml` from the
/// extreme reached so far, which allows for the one-sample lag between a
/// flow reversal and the phase label following it.
#[derive(Debug, Clone)]
pub struct LoopTracker {
    extreme: Option<(f64, Phase)>,
    tol_ml: f64,
}

impl LoopTracker {
    pub fn new(tol_ml: f64) -> Self {
        Self {
            extreme: None,
            tol_ml,
        }
    }

    pub fn observe(&mut self, v: f64, phase: Phase) -> Result<()> {
        let ext = match self.extreme {
            Some((ext, prev_phase)) if prev_phase == phase => {
                let moved_wrong = match phase {
                    Phase::Expiration => v > ext + self.tol_ml,
                    Phase::Inspiration => v < ext - self.tol_ml,
                };
                if moved_wrong {
                    return Err(Error::SimulationState(format!(
                        "volume moved from {ext} to {v} ml during declared {phase:?}"
                    )));
                }
                match phase {
                    Phase::Expiration => ext.min(v),
                    Phase::Inspiration => ext.max(v),
                }
            }
            _ => v,
        };
        self.extreme = Some((ext, phase));
        Ok(())
    }

    pub fn reset(&mut self) {
        self.extreme = None;
    }
}
