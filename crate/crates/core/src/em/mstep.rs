use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::estep::{check_alpha, check_sigma, stats_from_posterior, SufficientStats};
use super::patches::{PatchSet, RhoDist};
use super::tables::ShiftCropTable;
use super::Posterior;
use crate::basis::{BasisSpec, CoeffVec};
use crate::config::EmConfig;
use crate::error::{MtdError, Result};

/// `A alpha = rhs` with `A = sum W_{s,r} G^T G` and `rhs = sum G^T b_{s,r}`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalEquations {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

/// Assembles the coefficient normal equations from one pass of statistics.
/// Cost does not depend on the number of patches.
pub fn normal_equations(stats: &SufficientStats, tables: &ShiftCropTable) -> NormalEquations {
    let side = tables.side();
    let pixels = side * side;
    let k = tables.k();
    let d = tables.real_dim();

    // Total posterior weight under which each image pixel is observed.
    let mut seen = vec![0.0; pixels * k];
    for s in 0..tables.num_shifts() {
        let w = &stats.weight[s * k..(s + 1) * k];
        for (q, &v) in tables.visible(s).iter().enumerate() {
            if v {
                for (acc, x) in seen[q * k..(q + 1) * k].iter_mut().zip(w) {
                    *acc += x;
                }
            }
        }
    }

    let mut matrix = DMatrix::zeros(d, d);
    let mut rhs = DVector::zeros(d);
    for r in 0..k {
        let synth = tables.synthesis(r);
        for q in 0..pixels {
            let row = synth.row(q);
            let weight = seen[q * k + r];
            if weight != 0.0 {
                matrix.ger(weight, &row.transpose(), &row.transpose(), 1.0);
            }
            let b = stats.back[q * k + r];
            if b != 0.0 {
                rhs.axpy(b, &row.transpose(), 1.0);
            }
        }
    }
    NormalEquations { matrix, rhs }
}

/// Solves `(A + lambda I) x = rhs` with `lambda = ridge * tr(A) / d`
/// (or `ridge` itself when `A` vanishes).
pub fn solve_alpha(eq: &NormalEquations, ridge: f64, spec: &Arc<BasisSpec>) -> Result<CoeffVec> {
    let d = eq.matrix.nrows();
    let trace = eq.matrix.trace();
    let lambda = if trace > 0.0 {
        ridge * trace / d as f64
    } else {
        ridge
    };
    let mut a = eq.matrix.clone();
    for i in 0..d {
        a[(i, i)] += lambda;
    }
    let x = match a.clone().cholesky() {
        Some(chol) => chol.solve(&eq.rhs),
        None if lambda > 0.0 => {
            let svd = a.svd(true, true);
            let tol = svd.singular_values.max() * 1e-14;
            svd.solve(&eq.rhs, tol)
                .map_err(|e| MtdError::Singular(e.to_string()))?
        }
        None => {
            return Err(MtdError::Singular(
                "coefficient normal matrix is singular (posterior mass on empty shifts?); \
                 set a positive ridge"
                    .into(),
            ))
        }
    };
    if x.iter().any(|v| !v.is_finite()) {
        return Err(MtdError::NonFinite("coefficient update".into()));
    }
    CoeffVec::from_real(spec.clone(), x.as_slice())
}

pub fn m_step_alpha(
    post: &Posterior,
    patches: &PatchSet,
    tables: &ShiftCropTable,
    cfg: &EmConfig,
) -> Result<CoeffVec> {
    let stats = stats_from_posterior(post, patches, tables)?;
    solve_alpha(&normal_equations(&stats, tables), cfg.ridge, tables.spec())
}

pub(crate) fn rho_from_mass(mass: &[f64], n_patches: usize) -> Result<RhoDist> {
    if n_patches == 0 {
        return Err(MtdError::invalid("no patches"));
    }
    let inv = 1.0 / n_patches as f64;
    RhoDist::new(mass.iter().map(|m| m * inv).collect())
}

/// `rho[s] = (1 / N_d) sum_m sum_r w[m, s, r]`.
pub fn m_step_rho(post: &Posterior) -> Result<RhoDist> {
    let k = post.k;
    let mut mass = vec![0.0; post.n_shifts];
    for m in 0..post.n_patches {
        for (s, row) in post.patch(m).chunks_exact(k).enumerate() {
            mass[s] += row.iter().sum::<f64>();
        }
    }
    rho_from_mass(&mass, post.n_patches)
}

/// Expected complete-data log-likelihood from statistics, dropping the
/// Gaussian normalizing constant.
pub(crate) fn q_from_stats(
    stats: &SufficientStats,
    eq: &NormalEquations,
    alpha_real: &[f64],
    rho: &RhoDist,
    sigma: f64,
) -> Result<f64> {
    let x = DVector::from_column_slice(alpha_real);
    let residual = stats.patch_energy - 2.0 * x.dot(&eq.rhs) + (&eq.matrix * &x).dot(&x);
    let mut prior = 0.0;
    for (mass, w) in stats.rho_mass.iter().zip(rho.weights()) {
        if *mass > 0.0 {
            if *w <= 0.0 {
                return Err(MtdError::NonFinite(
                    "log of a zero shift probability carrying posterior weight".into(),
                ));
            }
            prior += mass * w.ln();
        }
    }
    Ok(-residual / (2.0 * sigma * sigma) + prior)
}

/// `sum_m sum_{s,r} w[m,s,r] (log p(M_m | s, r, alpha) + log rho[s])`.
pub fn q_value(
    alpha: &CoeffVec,
    rho: &RhoDist,
    post: &Posterior,
    patches: &PatchSet,
    tables: &ShiftCropTable,
    sigma: f64,
) -> Result<f64> {
    check_sigma(sigma)?;
    check_alpha(tables, alpha)?;
    let stats = stats_from_posterior(post, patches, tables)?;
    let eq = normal_equations(&stats, tables);
    q_from_stats(&stats, &eq, &alpha.to_real(), rho, sigma)
}
