use std::io::{Read, Write};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metric::{fit_loglog_slope, rotation_error, select_best};
use crate::basis::{build_basis, build_index_set, project, BasisTable, CoeffVec, SupportRadius};
use crate::config::{EmConfig, NoiseLevel, SimConfig};
use crate::em::{EmSolver, RhoDist};
use crate::error::{MtdError, Result};
use crate::image::Image;
use crate::sim::generate;

/// Frobenius norm of the random pixel image before projection.
const TRUTH_NORM: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    /// Sweep values are SNRs.
    Snr,
    /// Sweep values are measurement side lengths `N`.
    Size,
    /// Sweep values are rotation grid sizes `K`.
    K,
}

impl SweepKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepKind::Snr => "snr",
            SweepKind::Size => "size",
            SweepKind::K => "k",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub kind: SweepKind,
    pub grid: Vec<f64>,
    pub trials: usize,
    /// Image radius `n`.
    pub radius: usize,
    /// Number of expansion coefficients (`nu >= 0`).
    pub coeffs: usize,
    pub support: SupportRadius,
    pub sim: SimConfig,
    pub em: EmConfig,
    /// Density used to initialize the shift distribution.
    pub gamma_init: f64,
    pub seed_base: u64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(MtdError::invalid("sweep grid is empty"));
        }
        if self.grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(MtdError::invalid("sweep grid must be strictly increasing"));
        }
        if self.trials == 0 {
            return Err(MtdError::invalid("trials must be >= 1"));
        }
        let integral = matches!(self.kind, SweepKind::Size | SweepKind::K);
        if integral && self.grid.iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
            return Err(MtdError::invalid(
                "size and k sweeps need positive integer values",
            ));
        }
        self.em.validate()
    }
}

/// One row of sweep output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub kind: SweepKind,
    pub sweep_value: f64,
    pub trial: usize,
    pub error: f64,
    pub loglik: f64,
    pub iterations: usize,
    pub wall_seconds: f64,
    pub seed: u64,
}

/// Ground truth as in the experiments: i.i.d. `U[0,1]` pixels, scaled to
/// Frobenius norm 10, projected onto the basis.
pub fn random_truth<R: Rng + ?Sized>(rng: &mut R, table: &BasisTable) -> Result<CoeffVec> {
    let side = table.side();
    let mut img = Image::from_vec(side, (0..side * side).map(|_| rng.gen::<f64>()).collect())?;
    let norm = img.frobenius_norm();
    img.scale(TRUTH_NORM / norm);
    project(&img, table)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn trial_seed(base: u64, value: f64, trial: usize) -> u64 {
    base ^ splitmix(value.to_bits() ^ splitmix(trial as u64))
}

/// Runs one trial of `spec` at `value`.
pub fn run_trial(
    spec: &SweepSpec,
    table: &BasisTable,
    value: f64,
    trial: usize,
) -> Result<TrialRecord> {
    let seed = trial_seed(spec.seed_base, value, trial);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let truth = random_truth(&mut rng, table)?;

    let mut sim = spec.sim.clone();
    let mut em = spec.em.clone();
    match spec.kind {
        SweepKind::Snr => sim.noise = NoiseLevel::Snr(value),
        SweepKind::Size => sim.size = value as usize,
        SweepKind::K => em.k = value as usize,
    }
    sim.seed = rng.next_u64();
    let measurement = generate(&truth, &sim, table)?;
    let sigma = measurement.sigma;
    if !(sigma > 0.0) {
        return Err(MtdError::invalid("sweeps need a positive noise level"));
    }

    let solver = EmSolver::for_measurement(&measurement, table.spec(), em.k)?;
    let rho0 = RhoDist::from_density(table.side(), spec.gamma_init)?;
    let start = Instant::now();
    let mut states = Vec::with_capacity(em.n_restarts);
    for _ in 0..em.n_restarts {
        let alpha0 = random_truth(&mut rng, table)?;
        states.push(solver.run(sigma, &em, &alpha0, &rho0)?);
    }
    let wall_seconds = start.elapsed().as_secs_f64();
    let best = select_best(&states)?;
    Ok(TrialRecord {
        kind: spec.kind,
        sweep_value: value,
        trial,
        error: rotation_error(&truth, &best.alpha)?,
        loglik: best.loglik,
        iterations: best.iter,
        wall_seconds,
        seed,
    })
}

/// Every grid value times every trial, in grid-major order. Trials run in
/// parallel; each derives its own seed from `seed_base`, the value and the
/// trial index.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<TrialRecord>> {
    spec.validate()?;
    let basis = Arc::new(build_index_set(spec.radius, spec.coeffs)?.with_support(spec.support));
    let table = build_basis(basis);
    let jobs: Vec<(f64, usize)> = spec
        .grid
        .iter()
        .flat_map(|&v| (0..spec.trials).map(move |t| (v, t)))
        .collect();
    jobs.par_iter()
        .map(|&(v, t)| run_trial(spec, &table, v, t))
        .collect()
}

pub fn write_records<W: Write>(records: &[TrialRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(r: R) -> Result<Vec<TrialRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize()
        .map(|rec| rec.map_err(MtdError::from))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryPoint {
    pub sweep_value: f64,
    pub trials: usize,
    pub mean_error: f64,
    pub std_error: f64,
    pub mean_wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub kind: SweepKind,
    pub points: Vec<SummaryPoint>,
    /// Log-log slope of mean error against `N^2` (size sweeps) or the
    /// sweep value; absent with fewer than three grid values.
    pub error_slope: Option<f64>,
    /// Same for mean wall time.
    pub wall_slope: Option<f64>,
}

/// Per-value mean and sample standard deviation, plus log-log slopes.
pub fn summarize(records: &[TrialRecord]) -> Result<Summary> {
    let first = records
        .first()
        .ok_or_else(|| MtdError::invalid("no records to summarize"))?;
    let kind = first.kind;
    if records.iter().any(|r| r.kind != kind) {
        return Err(MtdError::invalid("records mix sweep kinds"));
    }
    let mut values: Vec<f64> = records.iter().map(|r| r.sweep_value).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let points: Vec<SummaryPoint> = values
        .iter()
        .map(|&v| {
            let errs: Vec<f64> = records
                .iter()
                .filter(|r| r.sweep_value == v)
                .map(|r| r.error)
                .collect();
            let walls: Vec<f64> = records
                .iter()
                .filter(|r| r.sweep_value == v)
                .map(|r| r.wall_seconds)
                .collect();
            let n = errs.len() as f64;
            let mean = errs.iter().sum::<f64>() / n;
            let var = if errs.len() > 1 {
                errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            SummaryPoint {
                sweep_value: v,
                trials: errs.len(),
                mean_error: mean,
                std_error: var.sqrt(),
                mean_wall_seconds: walls.iter().sum::<f64>() / n,
            }
        })
        .collect();
    let x = |v: f64| if kind == SweepKind::Size { v * v } else { v };
    let error_pts: Vec<_> = points
        .iter()
        .map(|p| (x(p.sweep_value), p.mean_error))
        .collect();
    let wall_pts: Vec<_> = points
        .iter()
        .map(|p| (x(p.sweep_value), p.mean_wall_seconds))
        .collect();
    Ok(Summary {
        kind,
        error_slope: fit_loglog_slope(&error_pts).ok(),
        wall_slope: fit_loglog_slope(&wall_pts).ok(),
        points,
    })
}
