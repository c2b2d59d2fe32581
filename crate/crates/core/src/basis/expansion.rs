use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::bessel::{bessel_j_unchecked, bessel_roots};
use crate::error::{MtdError, Result};
use crate::image::Image;

/// One `(nu, q)` basis label. Serialized as the pair `[nu, q]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "(u32, u32)", into = "(u32, u32)")]
pub struct BasisIndex {
    pub nu: u32,
    pub q: u32,
}

impl From<(u32, u32)> for BasisIndex {
    fn from((nu, q): (u32, u32)) -> Self {
        BasisIndex { nu, q }
    }
}

impl From<BasisIndex> for (u32, u32) {
    fn from(i: BasisIndex) -> Self {
        (i.nu, i.q)
    }
}

/// Radial scale used when sampling the continuous basis on the pixel grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportRadius {
    /// `r = |l| / (n + 1/2)`: the disk inscribed in the `L x L` square.
    #[default]
    Inscribed,
    /// `r = |l| / n`: boundary pixels on the axes land exactly on `r = 1`.
    Pixels,
}

/// Image radius, ordered `(nu, q)` index set and the matching Bessel zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSpec {
    n: usize,
    indices: Vec<BasisIndex>,
    roots: Vec<f64>,
    bandlimit: Option<f64>,
    support: SupportRadius,
}

impl BasisSpec {
    /// Builds a spec from an arbitrary list of labels; they are reordered by
    /// increasing zero (ties by `nu`, then `q`).
    pub fn new(n: usize, indices: &[BasisIndex], support: SupportRadius) -> Result<Self> {
        if n == 0 {
            return Err(MtdError::invalid("image radius n must be >= 1"));
        }
        if indices.is_empty() {
            return Err(MtdError::invalid("index set must not be empty"));
        }
        let mut labelled = Vec::with_capacity(indices.len());
        for idx in indices {
            if idx.q == 0 {
                return Err(MtdError::invalid(format!(
                    "q must be >= 1 in ({}, {})",
                    idx.nu, idx.q
                )));
            }
            let root = bessel_roots(idx.nu, idx.q as usize)[idx.q as usize - 1];
            labelled.push((root, *idx));
        }
        sort_labelled(&mut labelled);
        for w in labelled.windows(2) {
            if w[0].1 == w[1].1 {
                return Err(MtdError::invalid(format!(
                    "duplicate basis index ({}, {})",
                    w[0].1.nu, w[0].1.q
                )));
            }
        }
        Ok(BasisSpec {
            n,
            roots: labelled.iter().map(|p| p.0).collect(),
            indices: labelled.into_iter().map(|p| p.1).collect(),
            bandlimit: None,
            support,
        })
    }

    /// All labels whose zero does not exceed `bandlimit`.
    pub fn from_bandlimit(n: usize, bandlimit: f64, support: SupportRadius) -> Result<Self> {
        if !(bandlimit > 0.0) {
            return Err(MtdError::invalid("bandlimit must be positive"));
        }
        let mut labelled = Vec::new();
        let mut nu = 0u32;
        loop {
            let mut q = 1usize;
            let mut any = false;
            loop {
                let root = bessel_roots(nu, q)[q - 1];
                if root > bandlimit {
                    break;
                }
                labelled.push((root, BasisIndex { nu, q: q as u32 }));
                any = true;
                q += 1;
            }
            if !any {
                break;
            }
            nu += 1;
        }
        if labelled.is_empty() {
            return Err(MtdError::invalid(format!(
                "no basis zero below bandlimit {bandlimit}"
            )));
        }
        let indices: Vec<_> = labelled.iter().map(|p| p.1).collect();
        let mut spec = BasisSpec::new(n, &indices, support)?;
        spec.bandlimit = Some(bandlimit);
        Ok(spec)
    }

    pub fn with_support(mut self, support: SupportRadius) -> Self {
        self.support = support;
        self
    }

    /// Image radius `n` in pixels.
    pub fn radius(&self) -> usize {
        self.n
    }

    /// Image diameter `L = 2n + 1`.
    pub fn side(&self) -> usize {
        2 * self.n + 1
    }

    pub fn indices(&self) -> &[BasisIndex] {
        &self.indices
    }

    pub fn roots(&self) -> &[f64] {
        &self.roots
    }

    pub fn bandlimit(&self) -> Option<f64> {
        self.bandlimit
    }

    pub fn support(&self) -> SupportRadius {
        self.support
    }

    pub fn support_radius(&self) -> f64 {
        match self.support {
            SupportRadius::Inscribed => self.n as f64 + 0.5,
            SupportRadius::Pixels => self.n as f64,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Dimension of the real parameterization: one slot for each `nu = 0`
    /// coefficient, two (real, imaginary) for every other one.
    pub fn real_dim(&self) -> usize {
        self.indices
            .iter()
            .map(|i| if i.nu == 0 { 1 } else { 2 })
            .sum()
    }
}

fn sort_labelled(v: &mut [(f64, BasisIndex)]) {
    v.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.nu.cmp(&b.1.nu))
            .then(a.1.q.cmp(&b.1.q))
    });
}

/// The `count` labels with the smallest zeros.
pub fn build_index_set(n: usize, count: usize) -> Result<BasisSpec> {
    if count == 0 {
        return Err(MtdError::invalid("count must be >= 1"));
    }
    let mut labelled: Vec<(f64, BasisIndex)> = bessel_roots(0, count)
        .into_iter()
        .enumerate()
        .map(|(k, r)| {
            (
                r,
                BasisIndex {
                    nu: 0,
                    q: k as u32 + 1,
                },
            )
        })
        .collect();
    let mut nu = 1u32;
    loop {
        sort_labelled(&mut labelled);
        labelled.truncate(count);
        let bound = labelled[count - 1].0;
        let roots = bessel_roots(nu, count);
        if roots[0] > bound {
            break;
        }
        labelled.extend(
            roots
                .into_iter()
                .enumerate()
                .take_while(|(_, r)| *r <= bound)
                .map(|(k, r)| {
                    (
                        r,
                        BasisIndex {
                            nu,
                            q: k as u32 + 1,
                        },
                    )
                }),
        );
        nu += 1;
    }
    let indices: Vec<_> = labelled.iter().map(|p| p.1).collect();
    BasisSpec::new(n, &indices, SupportRadius::default())
}

/// Complex expansion coefficients for `nu >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffVec {
    spec: Arc<BasisSpec>,
    values: Vec<Complex64>,
}

#[derive(Serialize, Deserialize)]
struct CoeffJson {
    n: usize,
    indices: Vec<BasisIndex>,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl CoeffVec {
    pub fn new(spec: Arc<BasisSpec>, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(MtdError::invalid(format!(
                "expected {} coefficients, got {}",
                spec.len(),
                values.len()
            )));
        }
        for (idx, v) in spec.indices().iter().zip(&values) {
            if idx.nu == 0 && v.im != 0.0 {
                return Err(MtdError::invalid(format!(
                    "coefficient (0, {}) must be real, has imaginary part {}",
                    idx.q, v.im
                )));
            }
            if !v.re.is_finite() || !v.im.is_finite() {
                return Err(MtdError::NonFinite(format!(
                    "coefficient ({}, {})",
                    idx.nu, idx.q
                )));
            }
        }
        Ok(CoeffVec { spec, values })
    }

    pub fn zeros(spec: Arc<BasisSpec>) -> Self {
        let values = vec![Complex64::new(0.0, 0.0); spec.len()];
        CoeffVec { spec, values }
    }

    pub fn spec(&self) -> &Arc<BasisSpec> {
        &self.spec
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Stacked real parameters: `Re` for `nu = 0`, `(Re, Im)` otherwise.
    pub fn to_real(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.spec.real_dim());
        for (idx, v) in self.spec.indices().iter().zip(&self.values) {
            out.push(v.re);
            if idx.nu != 0 {
                out.push(v.im);
            }
        }
        out
    }

    pub fn from_real(spec: Arc<BasisSpec>, real: &[f64]) -> Result<Self> {
        if real.len() != spec.real_dim() {
            return Err(MtdError::invalid(format!(
                "expected {} real parameters, got {}",
                spec.real_dim(),
                real.len()
            )));
        }
        let mut values = Vec::with_capacity(spec.len());
        let mut it = real.iter();
        for idx in spec.indices() {
            let re = *it.next().unwrap();
            let im = if idx.nu == 0 {
                0.0
            } else {
                *it.next().unwrap()
            };
            values.push(Complex64::new(re, im));
        }
        CoeffVec::new(spec, values)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(CoeffJson {
            n: self.spec.radius(),
            indices: self.spec.indices().to_vec(),
            re: self.values.iter().map(|v| v.re).collect(),
            im: self.values.iter().map(|v| v.im).collect(),
        })
        .expect("coefficient JSON is always serializable")
    }

    /// Parses `{ "n", "indices", "re", "im" }`; the stored order is kept
    /// only if it already matches the sorted index set.
    pub fn from_json(value: &serde_json::Value, support: SupportRadius) -> Result<Self> {
        let raw: CoeffJson = serde_json::from_value(value.clone())?;
        if raw.re.len() != raw.indices.len() || raw.im.len() != raw.indices.len() {
            return Err(MtdError::Format("re/im/indices lengths differ".into()));
        }
        let spec = Arc::new(BasisSpec::new(raw.n, &raw.indices, support)?);
        let mut values = vec![Complex64::new(0.0, 0.0); spec.len()];
        for ((idx, re), im) in raw.indices.iter().zip(&raw.re).zip(&raw.im) {
            let pos = spec.indices().iter().position(|i| i == idx).unwrap();
            values[pos] = Complex64::new(*re, *im);
        }
        CoeffVec::new(spec, values)
    }

    /// Reinterprets the same coefficients against an equal spec instance.
    pub fn with_spec(&self, spec: Arc<BasisSpec>) -> Result<Self> {
        if *spec != *self.spec {
            return Err(MtdError::SpecMismatch("coefficient spec differs".into()));
        }
        Ok(CoeffVec {
            spec,
            values: self.values.clone(),
        })
    }
}

/// Basis images sampled on the `L x L` pixel grid, row-major.
#[derive(Debug, Clone)]
pub struct BasisTable {
    spec: Arc<BasisSpec>,
    images: Vec<Vec<Complex64>>,
}

impl BasisTable {
    pub fn spec(&self) -> &Arc<BasisSpec> {
        &self.spec
    }

    pub fn image(&self, k: usize) -> &[Complex64] {
        &self.images[k]
    }

    pub fn side(&self) -> usize {
        self.spec.side()
    }

    /// `L^2 x real_dim` matrix mapping real parameters to the image rotated
    /// by `phi`.
    pub fn real_synthesis_matrix(&self, phi: f64) -> DMatrix<f64> {
        let pixels = self.side() * self.side();
        let mut m = DMatrix::zeros(pixels, self.spec.real_dim());
        let mut col = 0;
        for (k, idx) in self.spec.indices().iter().enumerate() {
            let img = &self.images[k];
            if idx.nu == 0 {
                for (p, v) in img.iter().enumerate() {
                    m[(p, col)] = v.re;
                }
                col += 1;
            } else {
                let phase = Complex64::from_polar(1.0, idx.nu as f64 * phi);
                for (p, v) in img.iter().enumerate() {
                    let s = v * phase;
                    m[(p, col)] = 2.0 * s.re;
                    m[(p, col + 1)] = -2.0 * s.im;
                }
                col += 2;
            }
        }
        m
    }

    /// Pixels inside the sampled support disk.
    pub fn support_mask(&self) -> Vec<bool> {
        let n = self.spec.radius() as f64;
        let r = self.spec.support_radius();
        let side = self.side();
        (0..side * side)
            .map(|p| {
                let dx = (p / side) as f64 - n;
                let dy = (p % side) as f64 - n;
                (dx * dx + dy * dy).sqrt() <= r
            })
            .collect()
    }

    fn check(&self, coeffs: &CoeffVec) -> Result<()> {
        if !Arc::ptr_eq(&self.spec, coeffs.spec()) && *self.spec != **coeffs.spec() {
            return Err(MtdError::SpecMismatch(
                "coefficients and basis table use different specs".into(),
            ));
        }
        Ok(())
    }
}

/// Samples every basis image at integer offsets `l` from the disk center.
pub fn build_basis(spec: Arc<BasisSpec>) -> BasisTable {
    let n = spec.radius() as isize;
    let side = spec.side();
    let scale = spec.support_radius();
    let images = spec
        .indices()
        .iter()
        .zip(spec.roots())
        .map(|(idx, &root)| {
            let mut img = vec![Complex64::new(0.0, 0.0); side * side];
            for row in 0..side {
                for col in 0..side {
                    let lx = row as isize - n;
                    let ly = col as isize - n;
                    let r = ((lx * lx + ly * ly) as f64).sqrt() / scale;
                    if r > 1.0 {
                        continue;
                    }
                    let theta = (ly as f64).atan2(lx as f64);
                    let radial = bessel_j_unchecked(idx.nu, root * r);
                    img[row * side + col] =
                        Complex64::from_polar(1.0, idx.nu as f64 * theta) * radial;
                }
            }
            img
        })
        .collect();
    BasisTable { spec, images }
}

/// Real image of the expansion rotated by `phi`.
pub fn synthesize(coeffs: &CoeffVec, phi: f64, table: &BasisTable) -> Result<Image> {
    table.check(coeffs)?;
    let side = table.side();
    let mut out = Image::zeros(side);
    let pixels = out.as_mut_slice();
    for (k, (idx, a)) in table.spec.indices().iter().zip(coeffs.values()).enumerate() {
        let weight = if idx.nu == 0 { 1.0 } else { 2.0 };
        let steered = a * Complex64::from_polar(1.0, idx.nu as f64 * phi);
        for (px, b) in pixels.iter_mut().zip(&table.images[k]) {
            // conj pair folded in: a psi + conj(a psi) = 2 Re(a psi)
            *px += weight * (steered * b).re;
        }
    }
    Ok(out)
}

/// Multiplies each coefficient by `exp(i nu phi)`.
pub fn steer(coeffs: &CoeffVec, phi: f64) -> CoeffVec {
    let values = coeffs
        .spec()
        .indices()
        .iter()
        .zip(coeffs.values())
        .map(|(idx, a)| {
            if idx.nu == 0 {
                *a
            } else {
                a * Complex64::from_polar(1.0, idx.nu as f64 * phi.rem_euclid(2.0 * PI))
            }
        })
        .collect();
    CoeffVec {
        spec: coeffs.spec().clone(),
        values,
    }
}

/// Minimum-norm least-squares coefficients of `image` over real images in
/// the span of the basis.
pub fn project(image: &Image, table: &BasisTable) -> Result<CoeffVec> {
    let side = table.side();
    if image.side() != side {
        return Err(MtdError::invalid(format!(
            "image is {}x{}, basis expects {side}x{side}",
            image.side(),
            image.side()
        )));
    }
    let a = table.real_synthesis_matrix(0.0);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) {
        return Err(MtdError::Singular("basis images are all zero".into()));
    }
    let b = DVector::from_column_slice(image.as_slice());
    let solve = |rhs: &DVector<f64>| {
        svd.solve(rhs, smax * 1e-12)
            .map_err(|e| MtdError::Singular(e.to_string()))
    };
    let mut x = solve(&b)?;
    // One step of iterative refinement; the synthesis matrix is badly
    // conditioned for large index sets.
    x += solve(&(&b - &a * &x))?;
    CoeffVec::from_real(table.spec.clone(), x.as_slice())
}
