//! Proxy ground truth: one high-resolution PF run, cached on disk.
//!
//! The cache key is a SHA-256 over the model parameters, the observations, and
//! the reference run parameters, with floats hashed by their bit patterns.
//! Cache hits are bit-identical replays: estimates are stored as JSON f64s,
//! which round-trip exactly.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mvpf::filter::{run_pf_par, ObservationSeries};
use mvpf::lattice::{derive_seed, LevelGrid};

use crate::config::ExperimentConfig;

/// Reference particle counts by the single-level guideline at eps =
/// Delta_ref: N = M = ceil(const_sl * 4^ref_level).
pub fn reference_count(cfg: &ExperimentConfig) -> usize {
    cfg.single_level_count(cfg.ref_level)
}

pub fn reference_seed(cfg: &ExperimentConfig) -> u64 {
    derive_seed(cfg.seed, "reference", &[cfg.ref_level as u64])
}

fn cache_key(cfg: &ExperimentConfig, obs: &ObservationSeries) -> String {
    let mut h = Sha256::new();
    h.update(b"mvpf-reference-v1");
    h.update(cfg.model.as_str().as_bytes());
    for v in [cfg.theta, cfg.sigma, cfg.tau, cfg.x0, cfg.const_sl] {
        h.update(v.to_bits().to_le_bytes());
    }
    h.update((cfg.t as u64).to_le_bytes());
    h.update(cfg.ref_level.to_le_bytes());
    h.update((reference_count(cfg) as u64).to_le_bytes());
    h.update(reference_seed(cfg).to_le_bytes());
    h.update((obs.len() as u64).to_le_bytes());
    h.update(obs.tau().to_bits().to_le_bytes());
    for k in 0..obs.len() {
        for v in obs.at(k) {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    let digest = h.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    ref_level: u32,
    count: usize,
    estimates: Vec<f64>,
}

pub fn cache_path(cache_dir: &Path, key: &str) -> PathBuf {
    cache_dir.join(format!("ref-{key}.json"))
}

/// Reference estimates of pi_t(phi), phi(x) = x, at every unit time. Serves
/// from the content-addressed cache when possible; otherwise runs the
/// reference PF and stores it.
pub fn reference_filter(
    cfg: &ExperimentConfig,
    obs: &ObservationSeries,
    cache_dir: &Path,
) -> Result<Vec<f64>> {
    if cfg.ref_level <= cfg.level_max {
        bail!(
            "ref_level {} must exceed the sweep maximum {}",
            cfg.ref_level,
            cfg.level_max
        );
    }
    let key = cache_key(cfg, obs);
    let path = cache_path(cache_dir, &key);
    if path.exists() {
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading reference cache {}", path.display()))?;
        let entry: CacheEntry = serde_json::from_str(&text)
            .with_context(|| format!("parsing reference cache {}", path.display()))?;
        if entry.key == key && entry.estimates.len() == obs.len() {
            return Ok(entry.estimates);
        }
        // Stale or corrupt entry: fall through and recompute.
    }

    let model = cfg.build_model();
    let count = reference_count(cfg);
    let run = run_pf_par(
        &model,
        LevelGrid::new(cfg.ref_level),
        count,
        count,
        obs,
        |x: &[f64]| x[0],
        reference_seed(cfg),
    )?;
    let entry = CacheEntry {
        key: key.clone(),
        ref_level: cfg.ref_level,
        count,
        estimates: run.estimates.clone(),
    };
    std::fs::create_dir_all(cache_dir)
        .with_context(|| format!("creating cache dir {}", cache_dir.display()))?;
    std::fs::write(&path, serde_json::to_string_pretty(&entry)?)
        .with_context(|| format!("writing reference cache {}", path.display()))?;
    Ok(run.estimates)
}
