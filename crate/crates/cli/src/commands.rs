use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;
use mtd_core::basis::{build_basis, build_index_set};
use mtd_core::em::EmSolver;
use mtd_core::eval::{
    random_truth, read_records, rotation_error, run_sweep, select_best,
    summarize as summarize_records, write_records,
};
use mtd_core::sim::generate;
use mtd_core::{BasisSpec, CoeffVec, Measurement, RhoDist};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde_json::{json, Value};

use crate::config::{Init, RunConfig};
use crate::error::CliError;
use crate::Common;

fn provenance(command: &str) -> Value {
    json!({
        "tool": "mtd",
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "git": env!("MTD_GIT_DESCRIBE"),
    })
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn require<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    p.as_deref()
        .ok_or_else(|| CliError::Config(format!("--{flag} is required")))
}

fn write_json(path: Option<&Path>, value: &Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn read_json(path: &Path) -> Result<Value, CliError> {
    let file = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Reads coefficients from a bare coefficient file or from the given field
/// of a larger document (simulation sidecar, recovery output).
fn read_coeffs(path: &Path, field: &str, cfg: &RunConfig) -> Result<CoeffVec, CliError> {
    let doc = read_json(path)?;
    let value = doc.get(field).unwrap_or(&doc);
    Ok(CoeffVec::from_json(value, cfg.support)?)
}

fn basis_spec(cfg: &RunConfig) -> Result<Arc<BasisSpec>, CliError> {
    Ok(Arc::new(
        build_index_set(cfg.radius, cfg.coeffs)?.with_support(cfg.support),
    ))
}

pub fn simulate(cfg: &RunConfig, common: &Common, truth: Option<&Path>) -> Result<(), CliError> {
    let out = require(&common.out, "out")?;
    let spec = basis_spec(cfg)?;
    let table = build_basis(spec.clone());
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let coeffs = match truth {
        Some(p) => read_coeffs(p, "truth", cfg)?.with_spec(spec)?,
        None => random_truth(&mut rng, &table)?,
    };
    let mut sim = cfg.sim();
    sim.seed = rng.next_u64();
    let m = generate(&coeffs, &sim, &table)?;
    m.save(out)?;
    info!(
        "wrote {} ({} copies, sigma {:.4e})",
        out.display(),
        m.achieved_p(),
        m.sigma
    );
    let meta = json!({
        "provenance": provenance("simulate"),
        "config": cfg,
        "truth": coeffs.to_json(),
        "sigma": m.sigma,
        "achieved_p": m.achieved_p(),
    });
    write_json(Some(&sidecar(out)), &meta)
}

pub fn recover(cfg: &RunConfig, common: &Common) -> Result<(), CliError> {
    let input = require(&common.input, "in")?;
    let m = Measurement::load(input)?;
    let sigma = cfg.sigma.unwrap_or(m.sigma);
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(CliError::Config(
            "measurement is noiseless; pass a positive noise level with --set sigma=...".into(),
        ));
    }
    let spec = basis_spec(cfg)?;
    let table = build_basis(spec.clone());
    let meta = sidecar(input);
    let truth = if meta.exists() {
        Some(read_coeffs(&meta, "truth", cfg)?.with_spec(spec.clone())?)
    } else {
        None
    };

    let em = cfg.em();
    em.validate()?;
    let solver = EmSolver::for_measurement(&m, &spec, em.k)?;
    let rho0 = RhoDist::from_density(spec.side(), cfg.gamma_init)?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut states = Vec::with_capacity(em.n_restarts);
    for restart in 0..em.n_restarts {
        let alpha0 = match cfg.init {
            Init::Random => random_truth(&mut rng, &table)?,
            Init::Truth => truth.clone().ok_or_else(|| {
                CliError::Config("init=truth needs the simulation sidecar".into())
            })?,
        };
        let state = solver.run(sigma, &em, &alpha0, &rho0)?;
        info!(
            "restart {restart}: loglik {:.9e} after {} iterations ({:.2}s)",
            state.loglik, state.iter, state.wall_seconds
        );
        states.push(state);
    }
    let best = select_best(&states)?;
    let best_index = states
        .iter()
        .position(|s| std::ptr::eq(s, best))
        .unwrap_or(0);
    let mut out = json!({
        "provenance": provenance("recover"),
        "config": cfg,
        "sigma": sigma,
        "alpha": best.alpha.to_json(),
        "rho": best.rho.weights(),
        "loglik": best.loglik,
        "loglik_history": best.history,
        "q_history": best.q_history,
        "iterations": best.iter,
        "wall_seconds": best.wall_seconds,
        "best_restart": best_index,
        "restarts": states.iter().map(|s| json!({
            "loglik": s.loglik,
            "iterations": s.iter,
            "wall_seconds": s.wall_seconds,
        })).collect::<Vec<_>>(),
    });
    if let Some(t) = &truth {
        out["error"] = json!(rotation_error(t, &best.alpha)?);
    }
    write_json(common.out.as_deref(), &out)
}

pub fn sweep(cfg: &RunConfig, common: &Common) -> Result<(), CliError> {
    let out = require(&common.out, "out")?;
    let records = run_sweep(&cfg.sweep())?;
    let mut w = BufWriter::new(File::create(out)?);
    write_records(&records, &mut w)?;
    w.flush()?;
    info!("wrote {} rows to {}", records.len(), out.display());
    let meta = json!({ "provenance": provenance("sweep"), "config": cfg });
    write_json(Some(&sidecar(out)), &meta)
}

pub fn summarize(cfg: &RunConfig, common: &Common) -> Result<(), CliError> {
    let input = require(&common.input, "in")?;
    let file = File::open(input).map_err(|e| CliError::Io(format!("{}: {e}", input.display())))?;
    let records = read_records(BufReader::new(file))?;
    let summary = summarize_records(&records)?;
    let out = json!({
        "provenance": provenance("summarize"),
        "config": cfg,
        "input": input.display().to_string(),
        "summary": summary,
    });
    write_json(common.out.as_deref(), &out)
}

pub fn eval_error(
    cfg: &RunConfig,
    common: &Common,
    truth: &Path,
    estimate: &Path,
) -> Result<(), CliError> {
    let t = read_coeffs(truth, "truth", cfg)?;
    let e = read_coeffs(estimate, "alpha", cfg)?.with_spec(t.spec().clone())?;
    let out = json!({
        "provenance": provenance("eval-error"),
        "config": cfg,
        "error": rotation_error(&t, &e)?,
    });
    write_json(common.out.as_deref(), &out)
}
