//! Approximate EM over non-overlapping patches.
//!
//! The measurement is tiled into `L x L` patches. Each patch is modelled as
//! a crop of the zero-padded, circularly shifted, rotated target plus white
//! noise, with `4 L^2` shift hypotheses and `K` rotation hypotheses. The
//! E-step forms the posterior over (shift, rotation) for every patch; the
//! M-step solves a linear system for the coefficients and updates the shift
//! distribution in closed form.

mod driver;
mod estep;
mod mstep;
mod patches;
mod tables;

pub use driver::{run_em, EmSolver, EmState};
pub use estep::{e_step, patch_loglik_table, sufficient_stats, SufficientStats};
pub use mstep::{
    m_step_alpha, m_step_rho, normal_equations, q_value, solve_alpha, NormalEquations,
};
pub use patches::{partition, shift_crop, PatchSet, RhoDist, RotationGrid};
pub use tables::{Predictions, ShiftCropTable};

/// Posterior weights `w[m, shift, rotation]`, patch-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub n_patches: usize,
    pub n_shifts: usize,
    pub k: usize,
    pub weights: Vec<f64>,
}

impl Posterior {
    #[inline]
    pub fn get(&self, patch: usize, shift: usize, rot: usize) -> f64 {
        self.weights[(patch * self.n_shifts + shift) * self.k + rot]
    }

    /// Weights of one patch, laid out `[shift][rotation]`.
    pub fn patch(&self, patch: usize) -> &[f64] {
        let len = self.n_shifts * self.k;
        &self.weights[patch * len..(patch + 1) * len]
    }
}
