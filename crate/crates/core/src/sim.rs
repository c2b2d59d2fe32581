//! Synthetic measurements: well-separated, uniformly rotated copies of the
//! target image plus white Gaussian noise.
//!
//! Randomness comes from a single `ChaCha20Rng` stream seeded with
//! `SimConfig::seed`, consumed in a fixed order: placements, then one
//! rotation per placement, then the noise field in row-major order.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::basis::{synthesize, BasisTable, CoeffVec};
use crate::config::{NoiseLevel, SimConfig};
use crate::error::{MtdError, Result};
use crate::image::Image;

const MAGIC: &[u8; 4] = b"MTD2";
const FORMAT_VERSION: u16 = 1;

/// One copy of the target: 1-based center `(x, y)` (row, column) and angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub x: usize,
    pub y: usize,
    pub phi: f64,
}

/// An `N x N` measurement, row-major, with ground truth when simulated.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub size: usize,
    pub pixels: Vec<f64>,
    pub placements: Vec<Placement>,
    pub sigma: f64,
}

impl Measurement {
    pub fn achieved_p(&self) -> usize {
        self.placements.len()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.size + col]
    }

    /// The `side x side` window centered on a placement.
    pub fn window(&self, placement: &Placement, side: usize) -> Image {
        let n = (side - 1) / 2;
        let (r0, c0) = (placement.x - 1 - n, placement.y - 1 - n);
        let mut img = Image::zeros(side);
        for i in 0..side {
            for j in 0..side {
                img.set(i, j, self.get(r0 + i, c0 + j));
            }
        }
        img
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&to_u32(self.size)?.to_le_bytes())?;
        w.write_all(&self.sigma.to_le_bytes())?;
        w.write_all(&to_u32(self.placements.len())?.to_le_bytes())?;
        for p in &self.placements {
            w.write_all(&to_u32(p.x)?.to_le_bytes())?;
            w.write_all(&to_u32(p.y)?.to_le_bytes())?;
            w.write_all(&p.phi.to_le_bytes())?;
        }
        for v in &self.pixels {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(MtdError::Format(format!(
                "bad magic bytes {magic:?}, expected \"MTD2\""
            )));
        }
        let version = u16::from_le_bytes(read_array(&mut r)?);
        if version != FORMAT_VERSION {
            return Err(MtdError::Format(format!(
                "unsupported measurement format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let size = u32::from_le_bytes(read_array(&mut r)?) as usize;
        let sigma = f64::from_le_bytes(read_array(&mut r)?);
        let count = u32::from_le_bytes(read_array(&mut r)?) as usize;
        let mut placements = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let x = u32::from_le_bytes(read_array(&mut r)?) as usize;
            let y = u32::from_le_bytes(read_array(&mut r)?) as usize;
            let phi = f64::from_le_bytes(read_array(&mut r)?);
            placements.push(Placement { x, y, phi });
        }
        let mut pixels = Vec::with_capacity(size * size);
        for _ in 0..size * size {
            pixels.push(f64::from_le_bytes(read_array(&mut r)?));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(MtdError::Format("trailing bytes after pixel data".into()));
        }
        Ok(Measurement {
            size,
            pixels,
            placements,
            sigma,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Measurement::read_from(BufReader::new(File::open(path)?))
    }
}

fn to_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| MtdError::Format(format!("{v} does not fit in u32")))
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => MtdError::Format("truncated measurement file".into()),
        _ => MtdError::Io(e),
    })?;
    Ok(buf)
}

/// Number of grid offsets `l` in `{-n..n}^2` with `|l| <= n`.
pub fn disk_area_pixels(n: usize) -> usize {
    let n = n as i64;
    (-n..=n)
        .flat_map(|x| (-n..=n).map(move |y| (x, y)))
        .filter(|(x, y)| x * x + y * y <= n * n)
        .count()
}

fn image_radius(image: &Image) -> usize {
    (image.side() - 1) / 2
}

/// Noise level giving `SNR = ||F||_F^2 / (A sigma^2)`.
pub fn sigma_from_snr(snr: f64, image: &Image) -> Result<f64> {
    if !(snr > 0.0) {
        return Err(MtdError::invalid("snr must be positive"));
    }
    let energy = image.norm_sqr();
    if energy == 0.0 {
        return Err(MtdError::invalid("SNR is undefined for an all-zero image"));
    }
    let area = disk_area_pixels(image_radius(image)) as f64;
    Ok((energy / (area * snr)).sqrt())
}

pub fn snr_from_sigma(sigma: f64, image: &Image) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(MtdError::invalid("sigma must be positive"));
    }
    let area = disk_area_pixels(image_radius(image)) as f64;
    Ok(image.norm_sqr() / (area * sigma * sigma))
}

/// `floor(gamma N^2 / (pi n^2))`.
pub fn target_count(size: usize, n: usize, gamma: f64) -> usize {
    (gamma * (size * size) as f64 / (PI * (n * n) as f64)).floor() as usize
}

/// Dart throwing: uniform 1-based centers in `{n+1..N-n}^2`, rejected when
/// within `4n` of an accepted center. Stops at the target count or after
/// `max_attempts` consecutive rejections.
pub fn sample_placements<R: Rng + ?Sized>(
    size: usize,
    n: usize,
    gamma: f64,
    max_attempts: usize,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    let side = 2 * n + 1;
    if size < side {
        return Vec::new();
    }
    let target = target_count(size, n, gamma);
    let min_sq = (16 * n * n) as i64;
    let cell = (4 * n).max(1);
    let cells = size / cell + 1;
    let mut grid: Vec<Vec<(usize, usize)>> = vec![Vec::new(); cells * cells];
    let mut accepted = Vec::with_capacity(target);
    let mut rejections = 0usize;

    while accepted.len() < target && rejections < max_attempts {
        let x = rng.gen_range(n + 1..=size - n);
        let y = rng.gen_range(n + 1..=size - n);
        let (cx, cy) = (x / cell, y / cell);
        let mut clash = false;
        'scan: for gx in cx.saturating_sub(1)..=(cx + 1).min(cells - 1) {
            for gy in cy.saturating_sub(1)..=(cy + 1).min(cells - 1) {
                for &(px, py) in &grid[gx * cells + gy] {
                    let dx = px as i64 - x as i64;
                    let dy = py as i64 - y as i64;
                    if dx * dx + dy * dy <= min_sq {
                        clash = true;
                        break 'scan;
                    }
                }
            }
        }
        if clash {
            rejections += 1;
        } else {
            rejections = 0;
            grid[cx * cells + cy].push((x, y));
            accepted.push((x, y));
        }
    }
    accepted
}

/// True when every pair of centers is more than `4n` apart.
pub fn is_well_separated(placements: &[Placement], n: usize) -> bool {
    let min_sq = (16 * n * n) as i64;
    placements.iter().enumerate().all(|(i, a)| {
        placements[i + 1..].iter().all(|b| {
            let dx = a.x as i64 - b.x as i64;
            let dy = a.y as i64 - b.y as i64;
            dx * dx + dy * dy > min_sq
        })
    })
}

/// Simulates a measurement containing rotated copies of `coeffs`.
pub fn generate(coeffs: &CoeffVec, cfg: &SimConfig, table: &BasisTable) -> Result<Measurement> {
    let side = table.side();
    cfg.validate(side)?;
    let n = table.spec().radius();
    let reference = synthesize(coeffs, 0.0, table)?;
    let sigma = match cfg.noise {
        NoiseLevel::Snr(snr) => sigma_from_snr(snr, &reference)?,
        NoiseLevel::Sigma(s) => s,
    };

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let centers = sample_placements(cfg.size, n, cfg.gamma, cfg.max_placement_attempts, &mut rng);
    let placements: Vec<Placement> = centers
        .into_iter()
        .map(|(x, y)| Placement {
            x,
            y,
            phi: rng.gen_range(0.0..2.0 * PI),
        })
        .collect();

    let size = cfg.size;
    let mut pixels = vec![0.0; size * size];
    for p in &placements {
        let copy = synthesize(coeffs, p.phi, table)?;
        let (r0, c0) = (p.x - 1 - n, p.y - 1 - n);
        for i in 0..side {
            let row = &mut pixels[(r0 + i) * size + c0..(r0 + i) * size + c0 + side];
            for (dst, src) in row
                .iter_mut()
                .zip(&copy.as_slice()[i * side..(i + 1) * side])
            {
                *dst += src;
            }
        }
    }
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| MtdError::invalid(e.to_string()))?;
        for v in pixels.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(Measurement {
        size,
        pixels,
        placements,
        sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_basis, build_index_set};
    use crate::Complex64;
    use std::sync::Arc;

    fn setup() -> (BasisTable, CoeffVec) {
        let spec = Arc::new(build_index_set(2, 10).unwrap());
        let table = build_basis(spec.clone());
        let values = (0..spec.len())
            .map(|k| {
                let im = if spec.indices()[k].nu == 0 {
                    0.0
                } else {
                    0.3 - 0.1 * k as f64
                };
                Complex64::new(1.0 + 0.2 * k as f64, im)
            })
            .collect();
        (table, CoeffVec::new(spec, values).unwrap())
    }

    /// Counts lattice points by scanning the bounding square directly.
    #[test]
    fn disk_area_enumeration() {
        assert_eq!(disk_area_pixels(0), 1);
        assert_eq!(disk_area_pixels(1), 5);
        assert_eq!(disk_area_pixels(2), 13);
        assert_eq!(disk_area_pixels(4), 49);
    }

    #[test]
    fn sigma_snr_formula_and_inverse() {
        let mut img = Image::zeros(5);
        img.set(2, 2, 10.0);
        let s = sigma_from_snr(2.0, &img).unwrap();
        assert!((s - (100.0f64 / 26.0).sqrt()).abs() < 1e-12);
        assert!((s - 1.96116).abs() < 1e-5);
        let back = snr_from_sigma(s, &img).unwrap();
        assert!((back - 2.0).abs() < 1e-12);
        assert!(sigma_from_snr(1e12, &img).unwrap() < 1e-5);
        assert!(sigma_from_snr(2.0, &Image::zeros(5)).is_err());
    }

    #[test]
    fn target_count_arithmetic() {
        assert_eq!(target_count(100, 2, 0.04), 31);
    }

    #[test]
    fn single_placement_respects_border() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let gamma = PI * 4.0 / (30.0 * 30.0) * 1.5; // target 1
        for _ in 0..200 {
            let p = sample_placements(30, 2, gamma, 100, &mut rng);
            assert_eq!(p.len(), 1);
            let (x, y) = p[0];
            assert!((3..=28).contains(&x) && (3..=28).contains(&y));
        }
    }

    #[test]
    fn placements_are_separated() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let centers = sample_placements(100, 2, 0.04, 10_000, &mut rng);
        assert!(centers.len() <= 31);
        let placements: Vec<_> = centers
            .iter()
            .map(|&(x, y)| Placement { x, y, phi: 0.0 })
            .collect();
        assert!(is_well_separated(&placements, 2));
    }

    #[test]
    fn noiseless_single_copy_is_stamped_exactly() {
        let (table, a) = setup();
        let cfg = SimConfig {
            size: 40,
            gamma: PI * 4.0 / 1600.0 * 1.2,
            noise: NoiseLevel::Sigma(0.0),
            seed: 3,
            ..SimConfig::default()
        };
        let m = generate(&a, &cfg, &table).unwrap();
        assert_eq!(m.achieved_p(), 1);
        let p = m.placements[0];
        let want = synthesize(&a, p.phi, &table).unwrap();
        assert_eq!(m.window(&p, 5), want);
        let mut outside = m.pixels.clone();
        for i in 0..5 {
            for j in 0..5 {
                outside[(p.x - 3 + i) * 40 + p.y - 3 + j] = 0.0;
            }
        }
        assert!(outside.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn noiseless_copies_are_disjoint() {
        let (table, a) = setup();
        let cfg = SimConfig {
            size: 200,
            noise: NoiseLevel::Sigma(0.0),
            seed: 12,
            ..SimConfig::default()
        };
        let m = generate(&a, &cfg, &table).unwrap();
        assert!(m.achieved_p() > 100);
        let mut rest = m.pixels.clone();
        for p in &m.placements {
            let want = synthesize(&a, p.phi, &table).unwrap();
            assert_eq!(m.window(p, 5), want);
            for i in 0..5 {
                for j in 0..5 {
                    rest[(p.x - 3 + i) * 200 + p.y - 3 + j] = 0.0;
                }
            }
        }
        assert!(rest.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_given_seed() {
        let (table, a) = setup();
        let cfg = SimConfig {
            size: 120,
            seed: 99,
            ..SimConfig::default()
        };
        let m1 = generate(&a, &cfg, &table).unwrap();
        let m2 = generate(&a, &cfg, &table).unwrap();
        assert!(m1
            .pixels
            .iter()
            .zip(&m2.pixels)
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(m1.placements, m2.placements);
    }

    #[test]
    fn pure_noise_variance() {
        let spec = Arc::new(build_index_set(2, 10).unwrap());
        let table = build_basis(spec.clone());
        let zero = CoeffVec::zeros(spec);
        let cfg = SimConfig {
            size: 300,
            noise: NoiseLevel::Sigma(1.7),
            seed: 5,
            ..SimConfig::default()
        };
        let m = generate(&zero, &cfg, &table).unwrap();
        let count = m.pixels.len() as f64;
        let var = m.pixels.iter().map(|v| v * v).sum::<f64>() / count;
        let s2 = 1.7 * 1.7;
        // standard error of the mean of squares of N(0, s^2) is s^2 sqrt(2/count)
        assert!((var - s2).abs() < 3.0 * s2 * (2.0 / count).sqrt());
    }

    #[test]
    fn binary_round_trip_and_bad_magic() {
        let (table, a) = setup();
        let cfg = SimConfig {
            size: 60,
            seed: 1,
            ..SimConfig::default()
        };
        let m = generate(&a, &cfg, &table).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"MTD2");
        assert_eq!(
            buf.len(),
            4 + 2 + 4 + 8 + 4 + m.achieved_p() * 16 + 60 * 60 * 8
        );
        let back = Measurement::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, m);

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            Measurement::read_from(bad.as_slice()),
            Err(MtdError::Format(_))
        ));
        let mut wrong_version = buf.clone();
        wrong_version[4] = 2;
        assert!(matches!(
            Measurement::read_from(wrong_version.as_slice()),
            Err(MtdError::Format(_))
        ));
        assert!(Measurement::read_from(&buf[..buf.len() - 3]).is_err());
    }

    #[test]
    fn rejects_bad_config() {
        let (table, a) = setup();
        let cfg = SimConfig {
            size: 3,
            ..SimConfig::default()
        };
        assert!(generate(&a, &cfg, &table).is_err());
        let cfg = SimConfig {
            gamma: 0.5,
            ..SimConfig::default()
        };
        assert!(generate(&a, &cfg, &table).is_err());
        let cfg = SimConfig {
            noise: NoiseLevel::Snr(-1.0),
            ..SimConfig::default()
        };
        assert!(generate(&a, &cfg, &table).is_err());
    }
}
