use std::f64::consts::PI;

use crate::basis::CoeffVec;
use crate::em::EmState;
use crate::error::{MtdError, Result};

const GRID: usize = 1024;
const ANGLE_TOL: f64 = 1e-10;

/// `min_phi ||truth - steer(est, phi)|| / ||truth||`.
///
/// The minimum is located on a 1024-point grid and refined by golden-section
/// search inside the bracket around the best grid point.
pub fn rotation_error(truth: &CoeffVec, est: &CoeffVec) -> Result<f64> {
    if **truth.spec() != **est.spec() {
        return Err(MtdError::SpecMismatch(
            "truth and estimate use different bases".into(),
        ));
    }
    let scale = truth.norm();
    if scale == 0.0 {
        return Err(MtdError::invalid(
            "relative error is undefined for a zero truth vector",
        ));
    }
    let orders: Vec<f64> = truth.spec().indices().iter().map(|i| i.nu as f64).collect();
    let dist = |phi: f64| -> f64 {
        truth
            .values()
            .iter()
            .zip(est.values())
            .zip(&orders)
            .map(|((t, e), nu)| {
                (t - e * num_complex::Complex64::from_polar(1.0, nu * phi)).norm_sqr()
            })
            .sum::<f64>()
    };

    let step = 2.0 * PI / GRID as f64;
    let (best_i, best_val) =
        (0..GRID)
            .map(|i| (i, dist(i as f64 * step)))
            .fold(
                (0, f64::INFINITY),
                |acc, x| if x.1 < acc.1 { x } else { acc },
            );

    let (mut lo, mut hi) = ((best_i as f64 - 1.0) * step, (best_i as f64 + 1.0) * step);
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (dist(x1), dist(x2));
    while hi - lo > ANGLE_TOL {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = dist(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = dist(x2);
        }
    }
    let refined = dist(0.5 * (lo + hi)).min(f1).min(f2);
    Ok(best_val.min(refined).max(0.0).sqrt() / scale)
}

/// The state with the largest final log-likelihood; earliest wins ties.
pub fn select_best(states: &[EmState]) -> Result<&EmState> {
    let mut iter = states.iter();
    let mut best = iter
        .next()
        .ok_or_else(|| MtdError::invalid("no EM runs to select from"))?;
    for s in iter {
        if s.loglik > best.loglik {
            best = s;
        }
    }
    Ok(best)
}

/// Least-squares slope of `log y` against `log x`.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 3 {
        return Err(MtdError::invalid(format!(
            "slope fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|(x, y)| !(*x > 0.0) || !(*y > 0.0)) {
        return Err(MtdError::invalid("log-log fit needs positive coordinates"));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(MtdError::invalid("slope fit needs distinct x values"));
    }
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_index_set, steer};
    use crate::em::RhoDist;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn random(seed: u64) -> CoeffVec {
        let spec = Arc::new(build_index_set(2, 10).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let real: Vec<f64> = (0..spec.real_dim())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        CoeffVec::from_real(spec, &real).unwrap()
    }

    #[test]
    fn identical_and_zero_estimates() {
        let a = random(1);
        assert!(rotation_error(&a, &a).unwrap() < 1e-12);
        let zero = CoeffVec::zeros(a.spec().clone());
        assert_eq!(rotation_error(&a, &zero).unwrap(), 1.0);
        assert!(rotation_error(&zero, &a).is_err());
    }

    #[test]
    fn steered_estimate_has_no_error() {
        let a = random(2);
        for phi in [1.234, 0.0001, 3.0, 6.2] {
            assert!(rotation_error(&a, &steer(&a, phi)).unwrap() < 1e-9);
        }
    }

    /// Dense brute-force scan as an independent check of the refinement.
    #[test]
    fn matches_dense_scan() {
        let a = random(3);
        let b = random(4);
        let got = rotation_error(&a, &b).unwrap();
        let mut best = f64::INFINITY;
        for i in 0..200_000 {
            let phi = 2.0 * PI * i as f64 / 200_000.0;
            let s = steer(&b, phi);
            let d: f64 = a
                .values()
                .iter()
                .zip(s.values())
                .map(|(x, y)| (x - y).norm_sqr())
                .sum();
            best = best.min(d);
        }
        let want = best.sqrt() / a.norm();
        assert!(got <= want + 1e-12);
        assert!(want - got < 1e-8);
    }

    fn state(loglik: f64, tag: f64) -> EmState {
        let a = random(5);
        EmState {
            alpha: steer(&a, tag),
            rho: RhoDist::uniform(5),
            iter: tag as usize,
            loglik,
            history: vec![loglik],
            q_history: vec![],
            wall_seconds: 0.0,
        }
    }

    #[test]
    fn selection_rules() {
        let one = vec![state(-1.0, 0.0)];
        assert_eq!(select_best(&one).unwrap(), &one[0]);
        let three = vec![state(-5.0, 0.0), state(-3.0, 1.0), state(-4.0, 2.0)];
        assert_eq!(select_best(&three).unwrap().iter, 1);
        let tie = vec![state(-2.0, 7.0), state(-2.0, 8.0)];
        assert_eq!(select_best(&tie).unwrap().iter, 7);
        assert!(select_best(&[]).is_err());
    }

    #[test]
    fn slope_fits() {
        let pts: Vec<_> = [250.0f64, 500.0, 1000.0, 2000.0]
            .iter()
            .map(|n| (n * n, (n * n).powf(-0.5)))
            .collect();
        assert!((fit_loglog_slope(&pts).unwrap() + 0.5).abs() < 1e-12);
        let flat: Vec<_> = [1.0, 2.0, 3.0].iter().map(|x| (*x, 0.3)).collect();
        assert!(fit_loglog_slope(&flat).unwrap().abs() < 1e-15);
        assert!(fit_loglog_slope(&pts[..2]).is_err());
    }
}
