use std::sync::Arc;
use std::time::Instant;

use log::debug;

use super::estep::sufficient_stats;
use super::mstep::{normal_equations, q_from_stats, rho_from_mass, solve_alpha};
use super::patches::{partition, PatchSet, RhoDist, RotationGrid};
use super::tables::ShiftCropTable;
use crate::basis::{build_basis, CoeffVec};
use crate::config::EmConfig;
use crate::error::{MtdError, Result};
use crate::sim::Measurement;

/// Outcome of one EM run.
#[derive(Debug, Clone, PartialEq)]
pub struct EmState {
    pub alpha: CoeffVec,
    pub rho: RhoDist,
    /// Completed E/M cycles.
    pub iter: usize,
    /// Monitored log-likelihood of `(alpha, rho)`.
    pub loglik: f64,
    /// Monitored log-likelihood of the initial guess and of every iterate.
    pub history: Vec<f64>,
    /// `Q(alpha_{k+1}, rho_{k+1} | alpha_k, rho_k)` for each cycle.
    pub q_history: Vec<f64>,
    pub wall_seconds: f64,
}

/// Patches and prediction tables, reusable across restarts.
#[derive(Debug, Clone)]
pub struct EmSolver {
    patches: PatchSet,
    tables: ShiftCropTable,
}

impl EmSolver {
    pub fn new(patches: PatchSet, tables: ShiftCropTable) -> Result<Self> {
        if patches.side() != tables.side() {
            return Err(MtdError::invalid(
                "patch size does not match prediction tables",
            ));
        }
        if patches.is_empty() {
            return Err(MtdError::invalid("no patches"));
        }
        Ok(EmSolver { patches, tables })
    }

    /// Partitions `measurement` and builds tables for the basis of `spec`.
    pub fn for_measurement(
        measurement: &Measurement,
        spec: &Arc<crate::basis::BasisSpec>,
        k: usize,
    ) -> Result<Self> {
        let basis = build_basis(spec.clone());
        let grid = RotationGrid::new(k)?;
        let tables = ShiftCropTable::new(&basis, &grid);
        EmSolver::new(partition(measurement, spec.side())?, tables)
    }

    pub fn patches(&self) -> &PatchSet {
        &self.patches
    }

    pub fn tables(&self) -> &ShiftCropTable {
        &self.tables
    }

    /// Alternates E- and M-steps until the monitored log-likelihood rises by
    /// at most `cfg.epsilon` or `cfg.max_iters` cycles have run.
    pub fn run(
        &self,
        sigma: f64,
        cfg: &EmConfig,
        alpha0: &CoeffVec,
        rho0: &RhoDist,
    ) -> Result<EmState> {
        cfg.validate()?;
        if cfg.k != self.tables.k() {
            return Err(MtdError::invalid(format!(
                "config asks for K = {} but tables were built for K = {}",
                cfg.k,
                self.tables.k()
            )));
        }
        let start = Instant::now();
        let spec = self.tables.spec().clone();
        let mut alpha = alpha0.with_spec(spec.clone())?;
        let mut rho = rho0.clone();
        let mut stats = sufficient_stats(&self.patches, &alpha, &rho, sigma, &self.tables)?;
        let mut history = vec![stats.loglik];
        let mut q_history = Vec::new();
        let mut iter = 0;

        while iter < cfg.max_iters {
            let eq = normal_equations(&stats, &self.tables);
            let next_alpha = solve_alpha(&eq, cfg.ridge, &spec)?;
            let next_rho = rho_from_mass(&stats.rho_mass, stats.n_patches)?;
            q_history.push(q_from_stats(
                &stats,
                &eq,
                &next_alpha.to_real(),
                &next_rho,
                sigma,
            )?);
            alpha = next_alpha;
            rho = next_rho;
            let prev = stats.loglik;
            stats = sufficient_stats(&self.patches, &alpha, &rho, sigma, &self.tables)?;
            history.push(stats.loglik);
            iter += 1;
            debug!(
                "em iter {iter}: loglik {:.9e} (delta {:.3e})",
                stats.loglik,
                stats.loglik - prev
            );
            if stats.loglik - prev <= cfg.epsilon {
                break;
            }
        }
        Ok(EmState {
            alpha,
            rho,
            iter,
            loglik: stats.loglik,
            history,
            q_history,
            wall_seconds: start.elapsed().as_secs_f64(),
        })
    }
}

/// One EM run on a measurement.
pub fn run_em(
    measurement: &Measurement,
    sigma: f64,
    cfg: &EmConfig,
    alpha0: &CoeffVec,
    rho0: &RhoDist,
) -> Result<EmState> {
    cfg.validate()?;
    EmSolver::for_measurement(measurement, alpha0.spec(), cfg.k)?.run(sigma, cfg, alpha0, rho0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_index_set, steer, synthesize};
    use crate::em::estep::e_step;
    use crate::em::mstep::{m_step_alpha, m_step_rho, q_value};
    use crate::BasisTable;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn truth() -> (BasisTable, CoeffVec) {
        let spec = Arc::new(build_index_set(2, 10).unwrap());
        let basis = build_basis(spec.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let real: Vec<f64> = (0..spec.real_dim())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        (basis, CoeffVec::from_real(spec, &real).unwrap())
    }

    fn single_copy(basis: &BasisTable, alpha: &CoeffVec, phi: f64) -> Measurement {
        let size = 15;
        let mut pixels = vec![0.0; size * size];
        let img = synthesize(alpha, phi, basis).unwrap();
        // center at 1-based (8, 8): window rows 5..10 (0-based)
        for i in 0..5 {
            for j in 0..5 {
                pixels[(5 + i) * size + 5 + j] = img.get(i, j);
            }
        }
        Measurement {
            size,
            pixels,
            placements: vec![],
            sigma: 0.0,
        }
    }

    #[test]
    fn truth_is_a_fixed_point() {
        let (basis, alpha) = truth();
        let m = single_copy(&basis, &alpha, std::f64::consts::FRAC_PI_2);
        let cfg = EmConfig {
            k: 4,
            max_iters: 2,
            epsilon: 1e-12,
            ..EmConfig::default()
        };
        let state = run_em(&m, 1e-3, &cfg, &alpha, &RhoDist::uniform(5)).unwrap();
        assert!(state.iter <= 2);
        let err: f64 = state
            .alpha
            .values()
            .iter()
            .zip(alpha.values())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-8 * alpha.norm(), "{err}");
    }

    #[test]
    fn iteration_budget_is_respected() {
        let (basis, alpha) = truth();
        let m = single_copy(&basis, &alpha, 0.3);
        let init = steer(&alpha, 0.9);
        let zero = EmConfig {
            max_iters: 0,
            ..EmConfig::default()
        };
        assert!(run_em(&m, 0.5, &zero, &init, &RhoDist::uniform(5)).is_err());
        let one = EmConfig {
            max_iters: 1,
            epsilon: 1e-300,
            ..EmConfig::default()
        };
        let s = run_em(&m, 0.5, &one, &init, &RhoDist::uniform(5)).unwrap();
        assert_eq!(s.iter, 1);
        assert_eq!(s.history.len(), 2);
        assert_eq!(s.q_history.len(), 1);
    }

    #[test]
    fn m_step_increases_q_and_loglik() {
        let (basis, alpha) = truth();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut m = single_copy(&basis, &alpha, 1.0);
        m.pixels
            .iter_mut()
            .for_each(|v| *v += rng.gen_range(-0.5..0.5));
        let solver = EmSolver::for_measurement(&m, alpha.spec(), 4).unwrap();
        let mut a = steer(&alpha, 2.0);
        let mut rho = RhoDist::uniform(5);
        let cfg = EmConfig {
            k: 4,
            ..EmConfig::default()
        };
        let mut prev_ll = f64::NEG_INFINITY;
        for _ in 0..10 {
            let (post, ll) = e_step(solver.patches(), &a, &rho, 0.4, solver.tables()).unwrap();
            assert!(ll >= prev_ll - 1e-9 * ll.abs());
            prev_ll = ll;
            let q_old = q_value(&a, &rho, &post, solver.patches(), solver.tables(), 0.4).unwrap();
            let a_new = m_step_alpha(&post, solver.patches(), solver.tables(), &cfg).unwrap();
            let rho_new = m_step_rho(&post).unwrap();
            let q_new = q_value(
                &a_new,
                &rho_new,
                &post,
                solver.patches(),
                solver.tables(),
                0.4,
            )
            .unwrap();
            assert!(q_new >= q_old - 1e-9 * q_old.abs());
            a = a_new;
            rho = rho_new;
        }
    }

    #[test]
    fn k_mismatch_is_rejected() {
        let (basis, alpha) = truth();
        let m = single_copy(&basis, &alpha, 0.0);
        let solver = EmSolver::for_measurement(&m, alpha.spec(), 4).unwrap();
        let cfg = EmConfig {
            k: 8,
            ..EmConfig::default()
        };
        assert!(solver.run(1.0, &cfg, &alpha, &RhoDist::uniform(5)).is_err());
    }
}
