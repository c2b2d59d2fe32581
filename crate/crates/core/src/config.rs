//! Plain configuration records shared by the simulator, solver and sweeps.

use serde::{Deserialize, Serialize};

use crate::error::{MtdError, Result};

/// Noise specification: either a target SNR or an explicit standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLevel {
    Snr(f64),
    Sigma(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Measurement side length `N` in pixels.
    pub size: usize,
    /// Target density `p * pi * n^2 / N^2`.
    pub gamma: f64,
    pub noise: NoiseLevel,
    pub seed: u64,
    /// Consecutive rejected darts after which placement stops.
    pub max_placement_attempts: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            size: 250,
            gamma: 0.04,
            noise: NoiseLevel::Snr(5.0),
            seed: 0,
            max_placement_attempts: 10_000,
        }
    }
}

impl SimConfig {
    pub fn validate(&self, side: usize) -> Result<()> {
        if self.size < side {
            return Err(MtdError::invalid(format!(
                "measurement size {} smaller than image side {side}",
                self.size
            )));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(MtdError::invalid("gamma must be positive"));
        }
        // Disks of radius 2n around the centers are disjoint, so 4 * gamma
        // cannot exceed the hexagonal packing density pi / (2 sqrt 3).
        let gamma_max = std::f64::consts::PI / (8.0 * 3f64.sqrt());
        if self.gamma > gamma_max {
            return Err(MtdError::invalid(format!(
                "gamma {} exceeds the packing bound {gamma_max:.4}",
                self.gamma
            )));
        }
        match self.noise {
            NoiseLevel::Snr(s) if !(s > 0.0) => Err(MtdError::invalid("snr must be positive")),
            NoiseLevel::Sigma(s) if !(s >= 0.0) || !s.is_finite() => {
                Err(MtdError::invalid("sigma must be nonnegative and finite"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    /// Number of rotation hypotheses `K`.
    pub k: usize,
    /// Stop once the monitored log-likelihood rises by no more than this.
    pub epsilon: f64,
    pub max_iters: usize,
    /// Relative Tikhonov weight for the coefficient solve, scaled by the
    /// mean diagonal of the normal matrix. Zero disables it.
    pub ridge: f64,
    pub n_restarts: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            k: 8,
            epsilon: 1e-6,
            max_iters: 200,
            ridge: 1e-10,
            n_restarts: 1,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(MtdError::invalid("K must be >= 1"));
        }
        if !(self.epsilon > 0.0) {
            return Err(MtdError::invalid("epsilon must be positive"));
        }
        if self.max_iters == 0 {
            return Err(MtdError::invalid("max_iters must be >= 1"));
        }
        if !(self.ridge >= 0.0) {
            return Err(MtdError::invalid("ridge must be nonnegative"));
        }
        if self.n_restarts == 0 {
            return Err(MtdError::invalid("n_restarts must be >= 1"));
        }
        Ok(())
    }
}
