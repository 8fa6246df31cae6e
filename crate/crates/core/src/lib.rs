//! Breath-by-breath identification of respiratory mechanics.
//!
//! Pressure and flow measured at the mouth of a sedated, mechanically
//! ventilated patient are split into breaths; for each breath a linear
//! (`Pc = V/C`) and a quadratic (`Pc = a1·V + a2·V²`) elastic model with
//! airway resistance are fitted by Levenberg–Marquardt, and the quadratic
//! fit is kept or discarded by an NRMSE gate. A simulated patient with
//! sigmoidal and hysteretic pressure-volume behaviour provides ground truth.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod ident_pipeline;
pub mod lung_models;
pub mod nls_solver;
pub mod patient_sim;
pub mod signal_io;
pub mod validation;
pub mod workflow;

pub use error::{Error, Result};
