use std::f64::consts::PI;

use crate::error::{MtdError, Result};
use crate::image::Image;
use crate::sim::Measurement;

/// Non-overlapping `L x L` tiles of the top-left `floor(N/L) L` square,
/// stored contiguously in row-major tile order.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    side: usize,
    count: usize,
    data: Vec<f64>,
}

impl PatchSet {
    pub fn from_patches(side: usize, patches: &[Image]) -> Result<Self> {
        let mut data = Vec::with_capacity(patches.len() * side * side);
        for p in patches {
            if p.side() != side {
                return Err(MtdError::invalid("patch sizes differ"));
            }
            data.extend_from_slice(p.as_slice());
        }
        Ok(PatchSet {
            side,
            count: patches.len(),
            data,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn patch(&self, m: usize) -> &[f64] {
        let len = self.side * self.side;
        &self.data[m * len..(m + 1) * len]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn image(&self, m: usize) -> Image {
        Image::from_vec(self.side, self.patch(m).to_vec()).unwrap()
    }
}

pub fn partition(measurement: &Measurement, side: usize) -> Result<PatchSet> {
    let size = measurement.size;
    if side == 0 || size < side {
        return Err(MtdError::invalid(format!(
            "measurement of size {size} cannot hold a {side}x{side} patch"
        )));
    }
    let per_row = size / side;
    let mut data = Vec::with_capacity(per_row * per_row * side * side);
    for bi in 0..per_row {
        for bj in 0..per_row {
            for i in 0..side {
                let start = (bi * side + i) * size + bj * side;
                data.extend_from_slice(&measurement.pixels[start..start + side]);
            }
        }
    }
    Ok(PatchSet {
        side,
        count: per_row * per_row,
        data,
    })
}

/// Zero-pad to `2L x 2L` (image top-left), shift circularly by `(lx, ly)`,
/// keep the top-left `L x L` block.
pub fn shift_crop(image: &Image, lx: usize, ly: usize) -> Result<Image> {
    let side = image.side();
    let period = 2 * side;
    if lx >= period || ly >= period {
        return Err(MtdError::invalid(format!(
            "shift ({lx}, {ly}) outside {{0..{}}}^2",
            period - 1
        )));
    }
    let mut out = Image::zeros(side);
    for i in 0..side {
        let a = (i + lx) % period;
        if a >= side {
            continue;
        }
        for j in 0..side {
            let b = (j + ly) % period;
            if b < side {
                out.set(i, j, image.get(a, b));
            }
        }
    }
    Ok(out)
}

/// `K` equispaced rotation hypotheses `2 pi k / K`.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationGrid {
    angles: Vec<f64>,
}

impl RotationGrid {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(MtdError::invalid("rotation grid needs K >= 1"));
        }
        Ok(RotationGrid {
            angles: (0..k).map(|i| 2.0 * PI * i as f64 / k as f64).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }
}

/// Distribution over the `4 L^2` shift hypotheses of a patch.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoDist {
    weights: Vec<f64>,
}

impl RhoDist {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(MtdError::invalid(
                "shift distribution must be nonnegative and finite",
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(MtdError::invalid(format!(
                "shift distribution sums to {total}, not 1"
            )));
        }
        Ok(RhoDist { weights })
    }

    pub fn uniform(side: usize) -> Self {
        let count = 4 * side * side;
        RhoDist {
            weights: vec![1.0 / count as f64; count],
        }
    }

    /// Prior from a density guess: each of the `(2L-1)^2` shifts that put
    /// part of the copy's square inside the patch gets the expected number
    /// of centers per pixel, `gamma / (pi n^2)`; the rest of the mass is
    /// spread over the shifts with no overlap.
    pub fn from_density(side: usize, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(MtdError::invalid("density must be positive"));
        }
        let n = ((side - 1) / 2).max(1) as f64;
        let period = 2 * side;
        let overlapping = (period - 1) * (period - 1);
        let empty = period * period - overlapping;
        let per_center = (gamma / (PI * n * n)).min(1.0 / overlapping as f64);
        let rest = (1.0 - per_center * overlapping as f64) / empty as f64;
        let weights = (0..period * period)
            .map(|s| {
                if s / period == side || s % period == side {
                    rest
                } else {
                    per_center
                }
            })
            .collect();
        RhoDist::new(weights)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn measurement(size: usize) -> Measurement {
        Measurement {
            size,
            pixels: (0..size * size).map(|v| v as f64).collect(),
            placements: vec![],
            sigma: 1.0,
        }
    }

    fn numbered(side: usize) -> Image {
        Image::from_vec(side, (0..side * side).map(|v| v as f64 + 1.0).collect()).unwrap()
    }

    #[test]
    fn partition_single_patch() {
        let m = measurement(5);
        let p = partition(&m, 5).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.patch(0), m.pixels.as_slice());
    }

    #[test]
    fn partition_tiles_reassemble() {
        let m = measurement(10);
        let p = partition(&m, 5).unwrap();
        assert_eq!(p.len(), 4);
        let mut rebuilt = vec![0.0; 100];
        for t in 0..4 {
            let (bi, bj) = (t / 2, t % 2);
            for i in 0..5 {
                for j in 0..5 {
                    rebuilt[(bi * 5 + i) * 10 + bj * 5 + j] = p.patch(t)[i * 5 + j];
                }
            }
        }
        assert_eq!(rebuilt, m.pixels);
    }

    #[test]
    fn partition_crops_remainder() {
        let m = measurement(12);
        let p = partition(&m, 5).unwrap();
        assert_eq!(p.len(), 4);
        let used: Vec<f64> = p.as_flat().to_vec();
        for r in 10..12 {
            for c in 0..12 {
                assert!(!used.contains(&m.pixels[r * 12 + c]));
                assert!(!used.contains(&m.pixels[c * 12 + r]));
            }
        }
        assert!(partition(&measurement(4), 5).is_err());
    }

    #[test]
    fn shift_crop_identity_and_empty() {
        let img = numbered(5);
        assert_eq!(shift_crop(&img, 0, 0).unwrap(), img);
        assert_eq!(shift_crop(&img, 5, 5).unwrap(), Image::zeros(5));
        assert_eq!(shift_crop(&img, 5, 0).unwrap(), Image::zeros(5));
        assert!(shift_crop(&img, 10, 0).is_err());
    }

    #[test]
    fn shift_crop_moves_content() {
        let img = numbered(5);
        // shift (1, 0): output row i reads input row i + 1
        let s = shift_crop(&img, 1, 0).unwrap();
        for j in 0..5 {
            assert_eq!(s.get(0, j), img.get(1, j));
            assert_eq!(s.get(4, j), 0.0);
        }
        // shift (9, 9): only output (1,1) reads input (0,0)... and beyond
        let s = shift_crop(&img, 9, 9).unwrap();
        assert_eq!(s.get(0, 0), 0.0);
        assert_eq!(s.get(1, 1), img.get(0, 0));
        assert_eq!(s.get(4, 4), img.get(3, 3));
    }

    #[test]
    fn shift_crop_is_linear() {
        let a = numbered(5);
        let mut b = numbered(5);
        b.scale(-0.3);
        let mut sum = Image::zeros(5);
        for (i, v) in sum.as_mut_slice().iter_mut().enumerate() {
            *v = 2.0 * a.as_slice()[i] + 3.0 * b.as_slice()[i];
        }
        for (lx, ly) in [(0, 0), (3, 7), (9, 2), (6, 6)] {
            let lhs = shift_crop(&sum, lx, ly).unwrap();
            let sa = shift_crop(&a, lx, ly).unwrap();
            let sb = shift_crop(&b, lx, ly).unwrap();
            for i in 0..25 {
                let rhs = 2.0 * sa.as_slice()[i] + 3.0 * sb.as_slice()[i];
                assert!((lhs.as_slice()[i] - rhs).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rotation_grid_angles() {
        let g = RotationGrid::new(4).unwrap();
        assert_eq!(g.angles(), &[0.0, PI / 2.0, PI, 1.5 * PI]);
        assert!(RotationGrid::new(0).is_err());
    }

    #[test]
    fn rho_constructors() {
        let u = RhoDist::uniform(5);
        assert_eq!(u.len(), 100);
        assert!((u.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let d = RhoDist::from_density(5, 0.03).unwrap();
        assert!((d.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let c = 0.03 / (PI * 4.0);
        assert!((d.weights()[0] - c).abs() < 1e-15);
        assert!(d.weights()[5 * 10] > c);
        assert!(RhoDist::new(vec![0.5, 0.6]).is_err());
        assert!(RhoDist::new(vec![1.5, -0.5]).is_err());
    }
}
