use nalgebra::DMatrix;
use rayon::prelude::*;

use super::patches::{PatchSet, RhoDist};
use super::tables::{Predictions, ShiftCropTable};
use super::Posterior;
use crate::basis::CoeffVec;
use crate::error::{MtdError, Result};
use crate::image::Image;

/// Patches per work unit. Partial sums are formed per unit and reduced in
/// order, so results do not depend on the number of worker threads.
const CHUNK: usize = 32;

/// Everything the M-step and the convergence monitor need from one pass
/// over the patches.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    /// `sum_m w[m, s, r]`, laid out `[shift][rotation]`.
    pub weight: Vec<f64>,
    /// `sum_m sum_s w[m, s, r] C_s^T patch_m`, laid out `[pixel][rotation]`.
    pub back: Vec<f64>,
    /// `sum_m sum_r w[m, s, r]`.
    pub rho_mass: Vec<f64>,
    /// `sum_m log sum_{s,r} p(M_m | s, r, alpha) rho[s] / K`.
    pub loglik: f64,
    /// `sum_m ||M_m||^2`.
    pub patch_energy: f64,
    pub n_patches: usize,
}

impl SufficientStats {
    fn zeros(tables: &ShiftCropTable) -> Self {
        let k = tables.k();
        let side = tables.side();
        SufficientStats {
            weight: vec![0.0; tables.num_shifts() * k],
            back: vec![0.0; side * side * k],
            rho_mass: vec![0.0; tables.num_shifts()],
            loglik: 0.0,
            patch_energy: 0.0,
            n_patches: 0,
        }
    }

    fn merge(&mut self, other: &SufficientStats) {
        add_into(&mut self.weight, &other.weight);
        add_into(&mut self.back, &other.back);
        add_into(&mut self.rho_mass, &other.rho_mass);
        self.loglik += other.loglik;
        self.patch_energy += other.patch_energy;
        self.n_patches += other.n_patches;
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// Predicted patches for all shifts with horizontal lag `lx`, restricted to
/// the patch rows `first_row..first_row + rows` that overlap the image.
struct LagBlock {
    lx: usize,
    first_row: usize,
    rows: usize,
    /// Column-major, `2L K` rows indexed `ly * K + r`, `rows * L` columns.
    pred: Vec<f64>,
}

/// Shared read-only context for one E-step.
struct Context<'a> {
    tables: &'a ShiftCropTable,
    blocks: Vec<LagBlock>,
    energy: Vec<f64>,
    log_prior: Vec<f64>,
    inv_two_var: f64,
}

impl<'a> Context<'a> {
    fn new(
        tables: &'a ShiftCropTable,
        alpha: &CoeffVec,
        rho: &RhoDist,
        sigma: f64,
    ) -> Result<Self> {
        check_sigma(sigma)?;
        check_alpha(tables, alpha)?;
        if rho.len() != tables.num_shifts() {
            return Err(MtdError::invalid(format!(
                "shift distribution has {} entries, expected {}",
                rho.len(),
                tables.num_shifts()
            )));
        }
        let k = tables.k();
        let log_k = (k as f64).ln();
        let preds = tables.predictions(&alpha.to_real())?;
        let log_prior = rho
            .weights()
            .iter()
            .flat_map(|w| std::iter::repeat_n(w.ln() - log_k, k))
            .collect();
        Ok(Context {
            tables,
            blocks: lag_blocks(tables, &preds),
            energy: preds.energy,
            log_prior,
            inv_two_var: 0.5 / (sigma * sigma),
        })
    }

    /// `-||patch - G_{s,r} alpha||^2 / (2 sigma^2)` for every patch (column)
    /// of `x` and every hypothesis (row).
    fn loglik(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let t = self.tables;
        let side = t.side();
        let rows = t.num_shifts() * t.k();
        let band = t.period() * t.k();
        let count = x.ncols();
        let mut out = DMatrix::zeros(rows, count);
        for blk in &self.blocks {
            let inner = blk.rows * side;
            gemm(
                (band, inner, count),
                (&blk.pred, 0, 1, band),
                (x.as_slice(), blk.first_row * side, 1, side * side),
                (out.as_mut_slice(), blk.lx * band, 1, rows),
            );
        }
        let cols = out.as_mut_slice().chunks_exact_mut(rows);
        for (col, patch) in cols.zip(x.as_slice().chunks_exact(side * side)) {
            let pp: f64 = patch.iter().map(|v| v * v).sum();
            for (c, e) in col.iter_mut().zip(&self.energy) {
                *c = -(pp - 2.0 * *c + e) * self.inv_two_var;
            }
        }
        out
    }

    /// Posteriors of the patches in `x`, one column each, and the sum of
    /// their log normalizers.
    fn posteriors(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
        let k = self.tables.k();
        let empty = self.tables.empty_flags();
        let mut w = self.loglik(x);
        let mut lse_sum = 0.0;
        let rows = w.nrows();
        for col in w.as_mut_slice().chunks_exact_mut(rows) {
            let mut max = f64::NEG_INFINITY;
            for (v, p) in col.iter_mut().zip(&self.log_prior) {
                *v += p;
                max = max.max(*v);
            }
            if !max.is_finite() {
                return Err(MtdError::NonFinite(
                    "no (shift, rotation) hypothesis has positive probability".into(),
                ));
            }
            let mut total = 0.0;
            for (s, row) in col.chunks_exact_mut(k).enumerate() {
                if empty[s] {
                    // every rotation predicts the same all-zero patch
                    let e = (row[0] - max).exp();
                    row.fill(e);
                    total += e * k as f64;
                } else {
                    for v in row.iter_mut() {
                        let d = *v - max;
                        // exp underflows to exactly zero below this anyway
                        *v = if d < -746.0 { 0.0 } else { d.exp() };
                        total += *v;
                    }
                }
            }
            // a NaN anywhere in the column ends up here
            if total.is_nan() {
                return Err(MtdError::NonFinite("patch log-likelihood is NaN".into()));
            }
            let inv = 1.0 / total;
            col.iter_mut().for_each(|v| *v *= inv);
            lse_sum += max + total.ln();
        }
        Ok((w, lse_sum))
    }
}

fn lag_blocks(tables: &ShiftCropTable, preds: &Predictions) -> Vec<LagBlock> {
    let side = tables.side();
    let period = tables.period();
    let k = tables.k();
    let band = period * k;
    let mut blocks = Vec::new();
    for lx in 0..period {
        // patch row i sees image row (i + lx) mod 2L
        let valid: Vec<usize> = (0..side).filter(|i| (i + lx) % period < side).collect();
        let Some(&first_row) = valid.first() else {
            continue;
        };
        let rows = valid.len();
        let mut pred = vec![0.0; band * rows * side];
        for (ii, &i) in valid.iter().enumerate() {
            let a = (i + lx) % period;
            for j in 0..side {
                let col = &mut pred[(ii * side + j) * band..(ii * side + j + 1) * band];
                for ly in 0..period {
                    let b = (j + ly) % period;
                    if b < side {
                        let q = a * side + b;
                        col[ly * k..(ly + 1) * k]
                            .copy_from_slice(&preds.images[q * k..(q + 1) * k]);
                    }
                }
            }
        }
        blocks.push(LagBlock {
            lx,
            first_row,
            rows,
            pred,
        });
    }
    blocks
}

/// `C = A B` for strided column-major views given as
/// `(data, offset, row stride, column stride)`.
fn gemm(
    (m, k, n): (usize, usize, usize),
    a: (&[f64], usize, usize, usize),
    b: (&[f64], usize, usize, usize),
    c: (&mut [f64], usize, usize, usize),
) {
    fn last(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
        (rows - 1) * rs + (cols - 1) * cs
    }
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    assert!(a.1 + last(m, k, a.2, a.3) < a.0.len());
    assert!(b.1 + last(k, n, b.2, b.3) < b.0.len());
    assert!(c.1 + last(m, n, c.2, c.3) < c.0.len());
    // SAFETY: the asserts above keep every addressed element in bounds, and
    // `c` is a unique borrow so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr().add(a.1),
            a.2 as isize,
            a.3 as isize,
            b.0.as_ptr().add(b.1),
            b.2 as isize,
            b.3 as isize,
            0.0,
            c.0.as_mut_ptr().add(c.1),
            c.2 as isize,
            c.3 as isize,
        );
    }
}

/// Patches `first..first + count` as matrix columns.
fn patch_columns(patches: &PatchSet, first: usize, count: usize) -> DMatrix<f64> {
    let len = patches.side() * patches.side();
    DMatrix::from_column_slice(
        len,
        count,
        &patches.as_flat()[first * len..(first + count) * len],
    )
}

/// Adds the statistics of patches `x` (columns) with posteriors `w`.
fn accumulate(
    tables: &ShiftCropTable,
    x: &DMatrix<f64>,
    w: &DMatrix<f64>,
    stats: &mut SufficientStats,
) {
    let side = tables.side();
    let period = tables.period();
    let k = tables.k();
    let band = period * k;
    let rows = w.nrows();
    let count = x.ncols();
    for col in w.column_iter() {
        let col = col.as_slice();
        add_into(&mut stats.weight, col);
        for (mass, row) in stats.rho_mass.iter_mut().zip(col.chunks_exact(k)) {
            *mass += row.iter().sum::<f64>();
        }
    }
    // fully overwritten by each product below
    let mut corr = vec![0.0; band * side * side];
    for lx in 0..period {
        let valid: Vec<usize> = (0..side).filter(|i| (i + lx) % period < side).collect();
        let Some(&first_row) = valid.first() else {
            continue;
        };
        let inner = valid.len() * side;
        // corr[ly * K + r, (i, j)] = sum_m w[m, (lx, ly), r] patch_m[i, j]
        let corr = &mut corr[..band * inner];
        gemm(
            (band, count, inner),
            (w.as_slice(), lx * band, 1, rows),
            (x.as_slice(), first_row * side, side * side, 1),
            (corr, 0, 1, band),
        );
        for (ii, &i) in valid.iter().enumerate() {
            let a = (i + lx) % period;
            for j in 0..side {
                let col = &corr[(ii * side + j) * band..(ii * side + j + 1) * band];
                for ly in 0..period {
                    let b = (j + ly) % period;
                    if b < side {
                        let dst = &mut stats.back[(a * side + b) * k..(a * side + b + 1) * k];
                        add_into(dst, &col[ly * k..(ly + 1) * k]);
                    }
                }
            }
        }
    }
    stats.patch_energy += x.norm_squared();
    stats.n_patches += count;
}

pub(crate) fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(MtdError::invalid(format!(
            "sigma must be positive and finite, got {sigma}"
        )));
    }
    Ok(())
}

pub(crate) fn check_alpha(tables: &ShiftCropTable, alpha: &CoeffVec) -> Result<()> {
    if **alpha.spec() != **tables.spec() {
        return Err(MtdError::SpecMismatch(
            "coefficients do not match the prediction tables".into(),
        ));
    }
    Ok(())
}

fn check_patches(tables: &ShiftCropTable, patches: &PatchSet) -> Result<()> {
    if patches.side() != tables.side() {
        return Err(MtdError::invalid(format!(
            "patches are {}x{}, tables expect {}",
            patches.side(),
            patches.side(),
            tables.side()
        )));
    }
    Ok(())
}

/// Unnormalized log-likelihoods `-||patch - G_{s,r} alpha||^2 / (2 sigma^2)`,
/// laid out `[shift][rotation]`.
pub fn patch_loglik_table(
    patch: &Image,
    alpha: &CoeffVec,
    sigma: f64,
    tables: &ShiftCropTable,
) -> Result<Vec<f64>> {
    if patch.side() != tables.side() {
        return Err(MtdError::invalid("patch size does not match the tables"));
    }
    let rho = RhoDist::uniform(tables.side());
    let ctx = Context::new(tables, alpha, &rho, sigma)?;
    let len = patch.side() * patch.side();
    let x = DMatrix::from_column_slice(len, 1, patch.as_slice());
    Ok(ctx.loglik(&x).as_slice().to_vec())
}

/// Chunk boundaries `(first, count)` over `n` patches.
fn chunks(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .step_by(CHUNK)
        .map(|first| (first, CHUNK.min(n - first)))
        .collect()
}

/// Full posterior and the monitored log-likelihood. Stores
/// `N_d x 4L^2 x K` weights; [`sufficient_stats`] avoids that.
pub fn e_step(
    patches: &PatchSet,
    alpha: &CoeffVec,
    rho: &RhoDist,
    sigma: f64,
    tables: &ShiftCropTable,
) -> Result<(Posterior, f64)> {
    check_patches(tables, patches)?;
    let ctx = Context::new(tables, alpha, rho, sigma)?;
    let parts: Vec<(DMatrix<f64>, f64)> = chunks(patches.len())
        .into_par_iter()
        .map(|(first, count)| ctx.posteriors(&patch_columns(patches, first, count)))
        .collect::<Result<_>>()?;
    let mut weights = Vec::with_capacity(patches.len() * tables.num_shifts() * tables.k());
    let mut loglik = 0.0;
    for (w, lse) in &parts {
        weights.extend_from_slice(w.as_slice());
        loglik += lse;
    }
    let post = Posterior {
        n_patches: patches.len(),
        n_shifts: tables.num_shifts(),
        k: tables.k(),
        weights,
    };
    Ok((post, loglik))
}

/// Sufficient statistics of an existing posterior.
pub(crate) fn stats_from_posterior(
    post: &Posterior,
    patches: &PatchSet,
    tables: &ShiftCropTable,
) -> Result<SufficientStats> {
    check_patches(tables, patches)?;
    if post.n_patches != patches.len()
        || post.n_shifts != tables.num_shifts()
        || post.k != tables.k()
    {
        return Err(MtdError::invalid(
            "posterior dimensions do not match patches and tables",
        ));
    }
    let per_patch = post.n_shifts * post.k;
    let mut stats = SufficientStats::zeros(tables);
    for (first, count) in chunks(patches.len()) {
        let w = DMatrix::from_column_slice(
            per_patch,
            count,
            &post.weights[first * per_patch..(first + count) * per_patch],
        );
        accumulate(
            tables,
            &patch_columns(patches, first, count),
            &w,
            &mut stats,
        );
    }
    Ok(stats)
}

/// E-step fused with the accumulation of M-step statistics; memory is
/// independent of the number of patches.
pub fn sufficient_stats(
    patches: &PatchSet,
    alpha: &CoeffVec,
    rho: &RhoDist,
    sigma: f64,
    tables: &ShiftCropTable,
) -> Result<SufficientStats> {
    check_patches(tables, patches)?;
    let ctx = Context::new(tables, alpha, rho, sigma)?;
    let partials: Vec<SufficientStats> = chunks(patches.len())
        .into_par_iter()
        .map(|(first, count)| {
            let x = patch_columns(patches, first, count);
            let (w, lse) = ctx.posteriors(&x)?;
            let mut stats = SufficientStats::zeros(tables);
            stats.loglik = lse;
            accumulate(tables, &x, &w, &mut stats);
            Ok(stats)
        })
        .collect::<Result<_>>()?;
    let mut total = SufficientStats::zeros(tables);
    for p in &partials {
        total.merge(p);
    }
    Ok(total)
}
