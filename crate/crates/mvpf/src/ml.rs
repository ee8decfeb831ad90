//! Multilevel estimator assembly and parameter selection.
//!
//! The MLPF estimate is the level-0 PF estimate plus independent CPF
//! increments up to level L. Particle counts per level follow the rule
//! N_l ~ eps^-2 Delta_l^(1/3), M_l ~ eps^-2 |log2 eps| Delta_l^(5/6)
//! with L ~ |log2 eps|, post-adjusted so the N_l sequence is strictly
//! decreasing with gaps N_l - N_{l+1} >= L - l.

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::filter::{self, ObservationSeries};
use crate::lattice::{derive_seed, LevelGrid};
use crate::model::ModelSpec;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MlConstants {
    pub const_n: f64,
    pub const_m: f64,
    pub const_l: f64,
}

impl Default for MlConstants {
    fn default() -> Self {
        Self {
            const_n: 1.0,
            const_m: 1.0,
            const_l: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlConfig {
    pub big_l: u32,
    pub n_per_level: Vec<usize>,
    pub m_per_level: Vec<usize>,
    pub eps: f64,
    pub constants: MlConstants,
}

impl MlConfig {
    pub fn validate(&self) -> Result<()> {
        let levels = self.big_l as usize + 1;
        if self.n_per_level.len() != levels || self.m_per_level.len() != levels {
            return Err(invalid(format!(
                "config needs {} per-level counts, got n: {}, m: {}",
                levels,
                self.n_per_level.len(),
                self.m_per_level.len()
            )));
        }
        if self.n_per_level.iter().chain(&self.m_per_level).any(|&c| c == 0) {
            return Err(invalid("all per-level particle counts must be >= 1"));
        }
        if !(self.eps > 0.0) {
            return Err(invalid("eps must be positive"));
        }
        for l in 0..self.big_l as usize {
            let gap = self.big_l as usize - l;
            if self.n_per_level[l] < self.n_per_level[l + 1] + gap {
                return Err(invalid(format!(
                    "gap condition violated at level {l}: N_{l} = {} < N_{} + {gap}",
                    self.n_per_level[l],
                    l + 1,
                )));
            }
        }
        Ok(())
    }
}

/// Particle allocation for a target accuracy eps following the module-level
/// rule, with minimal upward adjustment of the N_l to restore the gap
/// condition.
pub fn select_params(eps: f64, constants: MlConstants) -> Result<MlConfig> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(invalid(format!("eps must lie in (0, 1), got {eps}")));
    }
    if !(constants.const_n > 0.0 && constants.const_m > 0.0 && constants.const_l > 0.0) {
        return Err(invalid("proportionality constants must be positive"));
    }
    let log_eps = eps.log2().abs();
    let big_l = (constants.const_l * log_eps).ceil() as u32;
    let inv_eps2 = 1.0 / (eps * eps);
    let mut n_per_level = Vec::with_capacity(big_l as usize + 1);
    let mut m_per_level = Vec::with_capacity(big_l as usize + 1);
    for l in 0..=big_l {
        let dt_third = 2.0f64.powf(-(l as f64) / 3.0);
        let dt_five_sixths = 2.0f64.powf(-5.0 * l as f64 / 6.0);
        let n = (constants.const_n * inv_eps2 * dt_third).ceil().max(2.0);
        let m = (constants.const_m * inv_eps2 * log_eps * dt_five_sixths)
            .ceil()
            .max(2.0);
        n_per_level.push(n as usize);
        m_per_level.push(m as usize);
    }
    // Gap fixup from the top: lift each N_l just enough to leave a gap of
    // L - l above its successor.
    for l in (0..big_l as usize).rev() {
        let gap = big_l as usize - l;
        if n_per_level[l] < n_per_level[l + 1] + gap {
            n_per_level[l] = n_per_level[l + 1] + gap;
        }
    }
    let cfg = MlConfig {
        big_l,
        n_per_level,
        m_per_level,
        eps,
        constants,
    };
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Clone, Debug)]
pub struct MlRun {
    pub estimates: Vec<f64>,
    pub cost: f64,
}

/// Closed-form cost of the configured estimator over `t` unit intervals:
/// sum_l Delta_l^-1 M_l (M_l + N_l) t.
pub fn theoretical_cost(cfg: &MlConfig, t: usize) -> f64 {
    let mut per_unit = 0.0;
    for l in 0..=cfg.big_l {
        let steps = (1u64 << l) as f64;
        let m = cfg.m_per_level[l as usize] as f64;
        let n = cfg.n_per_level[l as usize] as f64;
        per_unit += steps * m * (m + n);
    }
    per_unit * t as f64
}

/// Seed assigned to one level of the multilevel estimator. Exposed so a
/// degenerate L = 0 run can be reproduced with a direct [`filter::run_pf`].
pub fn mlpf_level_seed(seed: u64, level: u32) -> u64 {
    derive_seed(seed, "mlpf-level", &[level as u64])
}

fn run_mlpf_with_seeds<F>(
    model: &ModelSpec,
    obs: &ObservationSeries,
    phi: &F,
    cfg: &MlConfig,
    level_seeds: &[u64],
) -> Result<MlRun>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    assert_eq!(level_seeds.len(), cfg.big_l as usize + 1);

    // The L+1 runs are independent; run them concurrently and fold the
    // telescoping sum in level order afterwards.
    let per_level: Vec<Result<(Vec<f64>, f64)>> = (0..=cfg.big_l as usize)
        .into_par_iter()
        .map(|l| {
            let n = cfg.n_per_level[l];
            let m = cfg.m_per_level[l];
            if l == 0 {
                let run = filter::run_pf(model, LevelGrid::new(0), n, m, obs, phi, level_seeds[0])?;
                Ok((run.estimates, run.cost))
            } else {
                let run = filter::run_cpf(
                    model,
                    LevelGrid::new(l as u32),
                    n,
                    m,
                    obs,
                    phi,
                    level_seeds[l],
                )?;
                Ok((run.increments, run.cost))
            }
        })
        .collect();

    let mut estimates: Option<Vec<f64>> = None;
    let mut cost = 0.0;
    for term in per_level {
        let (values, run_cost) = term?;
        cost += run_cost;
        match &mut estimates {
            None => estimates = Some(values),
            Some(acc) => {
                for (a, v) in acc.iter_mut().zip(&values) {
                    *a += v;
                }
            }
        }
    }
    Ok(MlRun {
        estimates: estimates.expect("at least the level-0 term exists"),
        cost,
    })
}

/// MLPF estimator: level-0 PF plus independent CPF increments, each level on
/// its own derived seed ([`mlpf_level_seed`]).
pub fn run_mlpf<F>(
    model: &ModelSpec,
    obs: &ObservationSeries,
    phi: F,
    cfg: &MlConfig,
    seed: u64,
) -> Result<MlRun>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let seeds: Vec<u64> = (0..=cfg.big_l).map(|l| mlpf_level_seed(seed, l)).collect();
    run_mlpf_with_seeds(model, obs, &phi, cfg, &seeds)
}
