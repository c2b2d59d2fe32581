use std::sync::Arc;

use nalgebra::DMatrix;

use super::patches::RotationGrid;
use crate::basis::{BasisSpec, BasisTable};
use crate::error::{MtdError, Result};

/// Linear maps from real coefficients to predicted patches for every
/// (shift, rotation) hypothesis.
///
/// The map for shift `s` and rotation `r` is `G = C_s S_r`, where `S_r` is
/// the `L^2 x d` synthesis matrix of the rotated image and `C_s` selects the
/// image pixels that the shift-crop operator moves into the patch. Only the
/// `K` synthesis matrices and the shift geometry are stored; `G` and its
/// Gram matrix are assembled on request.
#[derive(Debug, Clone)]
pub struct ShiftCropTable {
    spec: Arc<BasisSpec>,
    side: usize,
    k: usize,
    real_dim: usize,
    synth: Vec<DMatrix<f64>>,
    /// `visible[s * L^2 + q]`: image pixel `q` lands inside the patch.
    visible: Vec<bool>,
    /// Shifts whose crop holds no pixel of the image support.
    empty: Vec<bool>,
}

/// Per-iteration predicted images and crop energies for fixed coefficients.
#[derive(Debug, Clone)]
pub struct Predictions {
    /// Rotated images, `[pixel][rotation]`.
    pub images: Vec<f64>,
    /// `||G_{s,r} alpha||^2`, `[shift][rotation]`.
    pub energy: Vec<f64>,
}

impl ShiftCropTable {
    pub fn new(table: &BasisTable, grid: &RotationGrid) -> Self {
        let side = table.side();
        let period = 2 * side;
        let pixels = side * side;
        let support = table.support_mask();
        let synth: Vec<_> = grid
            .angles()
            .iter()
            .map(|&phi| table.real_synthesis_matrix(phi))
            .collect();

        let mut visible = vec![false; period * period * pixels];
        let mut empty = vec![true; period * period];
        for lx in 0..period {
            for ly in 0..period {
                let s = lx * period + ly;
                for a in 0..side {
                    if (a + period - lx) % period >= side {
                        continue;
                    }
                    for b in 0..side {
                        if (b + period - ly) % period < side {
                            visible[s * pixels + a * side + b] = true;
                            if support[a * side + b] {
                                empty[s] = false;
                            }
                        }
                    }
                }
            }
        }
        ShiftCropTable {
            spec: table.spec().clone(),
            side,
            k: grid.len(),
            real_dim: table.spec().real_dim(),
            synth,
            visible,
            empty,
        }
    }

    pub fn spec(&self) -> &Arc<BasisSpec> {
        &self.spec
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn period(&self) -> usize {
        2 * self.side
    }

    pub fn num_shifts(&self) -> usize {
        4 * self.side * self.side
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn real_dim(&self) -> usize {
        self.real_dim
    }

    pub fn shift_index(&self, lx: usize, ly: usize) -> usize {
        lx * self.period() + ly
    }

    pub fn shift_of(&self, s: usize) -> (usize, usize) {
        (s / self.period(), s % self.period())
    }

    pub fn is_empty_shift(&self, s: usize) -> bool {
        self.empty[s]
    }

    pub(crate) fn empty_flags(&self) -> &[bool] {
        &self.empty
    }

    /// Synthesis matrix of the image rotated by the `r`-th grid angle.
    pub fn synthesis(&self, r: usize) -> &DMatrix<f64> {
        &self.synth[r]
    }

    pub fn visible(&self, s: usize) -> &[bool] {
        let p = self.side * self.side;
        &self.visible[s * p..(s + 1) * p]
    }

    /// `G_{s,r}` as an `L^2 x d` matrix over patch pixels.
    pub fn design(&self, s: usize, r: usize) -> DMatrix<f64> {
        let side = self.side;
        let period = self.period();
        let (lx, ly) = self.shift_of(s);
        let synth = &self.synth[r];
        let mut g = DMatrix::zeros(side * side, self.real_dim);
        for i in 0..side {
            let a = (i + lx) % period;
            if a >= side {
                continue;
            }
            for j in 0..side {
                let b = (j + ly) % period;
                if b < side {
                    g.row_mut(i * side + j).copy_from(&synth.row(a * side + b));
                }
            }
        }
        g
    }

    /// `G^T G = S_r^T diag(visible_s) S_r`.
    pub fn gram(&self, s: usize, r: usize) -> DMatrix<f64> {
        let synth = &self.synth[r];
        let vis = self.visible(s);
        let mut out = DMatrix::zeros(self.real_dim, self.real_dim);
        for (q, &v) in vis.iter().enumerate() {
            if v {
                let row = synth.row(q);
                out += row.transpose() * row;
            }
        }
        out
    }

    pub fn predict(&self, s: usize, r: usize, alpha_real: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(alpha_real)?;
        let g = self.design(s, r);
        Ok((g * nalgebra::DVector::from_column_slice(alpha_real))
            .as_slice()
            .to_vec())
    }

    pub(crate) fn check_dim(&self, alpha_real: &[f64]) -> Result<()> {
        if alpha_real.len() != self.real_dim {
            return Err(MtdError::SpecMismatch(format!(
                "expected {} real coefficients, got {}",
                self.real_dim,
                alpha_real.len()
            )));
        }
        Ok(())
    }

    /// Rotated images and crop energies for the given coefficients.
    pub fn predictions(&self, alpha_real: &[f64]) -> Result<Predictions> {
        self.check_dim(alpha_real)?;
        let pixels = self.side * self.side;
        let k = self.k;
        let mut images = vec![0.0; pixels * k];
        for (r, synth) in self.synth.iter().enumerate() {
            for q in 0..pixels {
                let row = synth.row(q);
                images[q * k + r] = row.iter().zip(alpha_real).map(|(a, b)| a * b).sum();
            }
        }
        let shifts = self.num_shifts();
        let mut energy = vec![0.0; shifts * k];
        for s in 0..shifts {
            let vis = self.visible(s);
            for (q, &v) in vis.iter().enumerate() {
                if v {
                    for r in 0..k {
                        let x = images[q * k + r];
                        energy[s * k + r] += x * x;
                    }
                }
            }
        }
        Ok(Predictions { images, energy })
    }
}
