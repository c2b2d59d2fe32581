//! Approximate expectation-maximization for two-dimensional multi-target
//! detection: recovering a disk-supported image, up to rotation, from one
//! large noisy measurement holding many rotated, well-separated copies.
//!
//! Modules follow the pipeline:
//!
//! * [`basis`]: steerable Fourier-Bessel expansion, steering, projection.
//! * [`sim`]: synthetic measurements and their binary file format.
//! * [`em`]: patch model, E-step, M-step and the iteration driver.
//! * [`eval`]: rotation-invariant error, restart selection, sweeps.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod config;
pub mod em;
mod error;
pub mod eval;
mod image;
pub mod sim;

pub use basis::{BasisIndex, BasisSpec, BasisTable, CoeffVec, SupportRadius};
pub use config::{EmConfig, NoiseLevel, SimConfig};
pub use em::{EmState, PatchSet, Posterior, RhoDist, RotationGrid, ShiftCropTable};
pub use error::{MtdError, Result};
pub use eval::{SweepKind, SweepSpec, TrialRecord};
pub use image::Image;
pub use num_complex::Complex64;
pub use sim::{Measurement, Placement};
