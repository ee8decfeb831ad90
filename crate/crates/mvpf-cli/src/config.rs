//! Experiment configuration: defaults, profiles, config file, CLI overrides.
//!
//! Precedence, lowest to highest: full-scale defaults, profile overlay,
//! config file, command-line flags. The config file is TOML with exactly the
//! `ExperimentConfig` keys; unknown keys are hard errors.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use mvpf::lattice::MAX_LEVEL;
use mvpf::ml::MlConstants;
use mvpf::model::ModelSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Kuramoto,
    ModifiedKuramoto,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Kuramoto => "kuramoto",
            ModelKind::ModifiedKuramoto => "modified_kuramoto",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Laptop-scale defaults: level-6 reference, 32 replications, sweep
    /// levels 2..5, reduced proportionality constants.
    Desk,
    /// Full-scale parameters: level-9 data, level-7 reference, 128
    /// replications, sweep levels 2..6, unit constants.
    Paper,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub theta: f64,
    pub sigma: f64,
    pub tau: f64,
    pub x0: f64,
    /// Number of unit-time observation intervals (T).
    pub t: usize,
    pub data_level: u32,
    pub data_particles: usize,
    pub ref_level: u32,
    pub replications: usize,
    pub level_min: u32,
    pub level_max: u32,
    pub seed: u64,
    /// Multilevel proportionality constants (N_l, M_l, L).
    pub const_n: f64,
    pub const_m: f64,
    pub const_l: f64,
    /// Single-level guideline constant: N = M = ceil(const_sl * 4^L).
    pub const_sl: f64,
    /// Record measured wall time in the sweep CSV. Off by default so repeated
    /// runs with one seed stay byte-identical; timings always go to the
    /// manifest.
    pub measure_wall_time: bool,
    /// Also emit per-time MSE rows next to the final-time sweep table.
    pub per_time_mse: bool,
}

impl ExperimentConfig {
    /// Full-scale experiment values; see the `paper` profile.
    pub fn paper_defaults() -> Self {
        Self {
            model: ModelKind::Kuramoto,
            theta: 0.0,
            sigma: 0.2,
            tau: 1.0,
            x0: 1.0,
            t: 50,
            data_level: 9,
            data_particles: 5000,
            ref_level: 7,
            replications: 128,
            level_min: 2,
            level_max: 6,
            seed: 1,
            const_n: 1.0,
            const_m: 1.0,
            const_l: 1.0,
            const_sl: 1.0,
            measure_wall_time: false,
            per_time_mse: false,
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        let mut cfg = Self::paper_defaults();
        if profile == Profile::Desk {
            // Everything a single workstation core can carry in tens of
            // minutes: coarser data and reference, fewer replications, and
            // constants halved (slopes are invariant to the constants, which
            // only shift both log axes).
            cfg.data_level = 7;
            cfg.data_particles = 1000;
            cfg.ref_level = 6;
            cfg.replications = 32;
            cfg.level_max = 5;
            cfg.const_n = 0.5;
            cfg.const_m = 0.5;
            cfg.const_sl = 0.5;
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            bail!("sigma must be positive and finite, got {}", self.sigma);
        }
        if !(self.tau >= 0.0) || !self.tau.is_finite() {
            bail!("tau must be non-negative and finite, got {}", self.tau);
        }
        if !self.theta.is_finite() || !self.x0.is_finite() {
            bail!("theta and x0 must be finite");
        }
        if self.t == 0 {
            bail!("t (number of observation times) must be >= 1");
        }
        if self.data_particles == 0 {
            bail!("data_particles must be >= 1");
        }
        if self.replications < 2 {
            bail!("replications must be >= 2, got {}", self.replications);
        }
        if self.level_min > self.level_max {
            bail!(
                "level_min {} exceeds level_max {}",
                self.level_min,
                self.level_max
            );
        }
        if self.ref_level <= self.level_max {
            bail!(
                "ref_level {} must exceed the sweep maximum {}",
                self.ref_level,
                self.level_max
            );
        }
        for (name, level) in [
            ("data_level", self.data_level),
            ("ref_level", self.ref_level),
            ("level_max", self.level_max),
        ] {
            if level > MAX_LEVEL {
                bail!("{name} {level} exceeds the supported maximum {MAX_LEVEL}");
            }
        }
        for (name, c) in [
            ("const_n", self.const_n),
            ("const_m", self.const_m),
            ("const_l", self.const_l),
            ("const_sl", self.const_sl),
        ] {
            if !(c > 0.0) || !c.is_finite() {
                bail!("{name} must be positive and finite, got {c}");
            }
        }
        Ok(())
    }

    pub fn constants(&self) -> MlConstants {
        MlConstants {
            const_n: self.const_n,
            const_m: self.const_m,
            const_l: self.const_l,
        }
    }

    pub fn build_model(&self) -> ModelSpec {
        match self.model {
            ModelKind::Kuramoto => ModelSpec::kuramoto(self.theta, self.sigma, self.x0),
            ModelKind::ModifiedKuramoto => {
                ModelSpec::modified_kuramoto(self.theta, self.sigma, self.x0)
            }
        }
    }

    /// Single-level particle count at sweep level l: N = M = ceil(c * 4^l).
    pub fn single_level_count(&self, level: u32) -> usize {
        let raw = self.const_sl * 4.0f64.powi(level as i32);
        raw.ceil().max(2.0) as usize
    }

    /// Sweep levels for the single-level estimator.
    pub fn sl_levels(&self) -> Vec<u32> {
        (self.level_min..=self.level_max).collect()
    }

    /// Sweep levels for the multilevel estimator: starts one above the
    /// single-level minimum so the coarsest telescoping sum is nontrivial.
    pub fn ml_levels(&self) -> Vec<u32> {
        (self.level_min + 1..=self.level_max).collect()
    }
}

/// On-disk schema: every field optional, unknown keys rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigFile {
    pub model: Option<ModelKind>,
    pub theta: Option<f64>,
    pub sigma: Option<f64>,
    pub tau: Option<f64>,
    pub x0: Option<f64>,
    #[serde(alias = "T")]
    pub t: Option<usize>,
    pub data_level: Option<u32>,
    pub data_particles: Option<usize>,
    pub ref_level: Option<u32>,
    pub replications: Option<usize>,
    pub level_min: Option<u32>,
    pub level_max: Option<u32>,
    pub seed: Option<u64>,
    pub const_n: Option<f64>,
    pub const_m: Option<f64>,
    pub const_l: Option<f64>,
    pub const_sl: Option<f64>,
    pub measure_wall_time: Option<bool>,
    pub per_time_mse: Option<bool>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config file {}", path.display()))
    }

    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        take!(
            model,
            theta,
            sigma,
            tau,
            x0,
            t,
            data_level,
            data_particles,
            ref_level,
            replications,
            level_min,
            level_max,
            seed,
            const_n,
            const_m,
            const_l,
            const_sl,
            measure_wall_time,
            per_time_mse
        );
    }
}

/// 17-significant-digit float formatting used for every CSV number, enough to
/// round-trip any f64 exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_profile_overrides() {
        let desk = ExperimentConfig::for_profile(Profile::Desk);
        assert_eq!(desk.ref_level, 6);
        assert_eq!(desk.replications, 32);
        assert_eq!(desk.level_max, 5);
        assert_eq!(desk.t, 50);
        let paper = ExperimentConfig::for_profile(Profile::Paper);
        assert_eq!(paper.ref_level, 7);
        assert_eq!(paper.replications, 128);
        assert_eq!(paper.data_level, 9);
        assert_eq!(paper.const_sl, 1.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<ConfigFile>("sigma = 0.3\nwat = 1\n").unwrap_err();
        assert!(err.to_string().contains("wat"), "{err}");
    }

    #[test]
    fn file_overrides_apply() {
        let file: ConfigFile = toml::from_str("sigma = 0.4\nreplications = 8\nT = 10\n").unwrap();
        let mut cfg = ExperimentConfig::for_profile(Profile::Desk);
        file.apply(&mut cfg);
        assert_eq!(cfg.sigma, 0.4);
        assert_eq!(cfg.replications, 8);
        assert_eq!(cfg.t, 10);
        assert_eq!(cfg.ref_level, 6);
    }

    #[test]
    fn validation_rules() {
        let mut cfg = ExperimentConfig::for_profile(Profile::Desk);
        cfg.validate().unwrap();
        cfg.ref_level = cfg.level_max;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::for_profile(Profile::Desk);
        cfg.replications = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::for_profile(Profile::Desk);
        cfg.sigma = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::for_profile(Profile::Desk);
        cfg.tau = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn single_level_counts_follow_the_guideline() {
        let desk = ExperimentConfig::for_profile(Profile::Desk);
        assert_eq!(desk.single_level_count(2), 8);
        assert_eq!(desk.single_level_count(6), 2048);
        let paper = ExperimentConfig::for_profile(Profile::Paper);
        assert_eq!(paper.single_level_count(7), 16384);
    }

    #[test]
    fn sweep_level_ranges() {
        let desk = ExperimentConfig::for_profile(Profile::Desk);
        assert_eq!(desk.sl_levels(), vec![2, 3, 4, 5]);
        assert_eq!(desk.ml_levels(), vec![3, 4, 5]);
    }

    #[test]
    fn float_formatting_round_trips() {
        for v in [0.0, 1.0, -0.123456789123456789, 1.0 / 3.0, 2.0f64.powi(-40)] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
    }
}
