//! Dyadic time grids and named RNG streams.
//!
//! Every consumer of randomness (law approximation, filter particles,
//! resampling, data simulation) owns a stream derived from the run seed and a
//! structured [`StreamId`]. Derivation hashes the full label, so streams with
//! different ids never overlap and any one of them is reproducible in
//! isolation. The law/filter separation is a correctness requirement of the
//! driven particle filter, not a convenience: the filter must treat the law
//! lattice as an exogenous input.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{invalid, Result};

/// Grids finer than 2^-30 per unit time are outside any sane use of this crate
/// and would overflow step counting downstream.
pub const MAX_LEVEL: u32 = 30;

/// Discretization level l with spacing dt = 2^-l over unit intervals.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LevelGrid {
    level: u32,
}

impl LevelGrid {
    pub fn new(level: u32) -> Self {
        assert!(level <= MAX_LEVEL, "level {level} exceeds MAX_LEVEL");
        Self { level }
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// Delta_l = 2^-l, exact in binary floating point.
    pub fn dt(&self) -> f64 {
        1.0 / self.steps_per_unit() as f64
    }

    pub fn steps_per_unit(&self) -> u64 {
        1u64 << self.level
    }

    pub fn coarser(&self) -> Option<LevelGrid> {
        self.level.checked_sub(1).map(|l| Self { level: l })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Law,
    Filter,
    Resample,
    Data,
}

impl Role {
    fn tag(self) -> u8 {
        match self {
            Role::Law => 0,
            Role::Filter => 1,
            Role::Resample => 2,
            Role::Data => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub replication: u64,
    pub role: Role,
    pub level: u32,
}

/// A seedable random stream addressed by (seed, stream id). The ChaCha key is
/// the SHA-256 of the full label, so distinct ids give unrelated streams.
#[derive(Clone, Debug)]
pub struct RngStream {
    pub seed: u64,
    pub id: StreamId,
    rng: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64, id: StreamId) -> Self {
        let mut h = Sha256::new();
        h.update(b"mvpf-stream-v1");
        h.update(seed.to_le_bytes());
        h.update(id.replication.to_le_bytes());
        h.update([id.role.tag()]);
        h.update(id.level.to_le_bytes());
        let digest = h.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        Self {
            seed,
            id,
            rng: ChaCha12Rng::from_seed(key),
        }
    }

    /// count x dim i.i.d. N(0, dt I) rows, flattened row-major.
    pub fn gaussian_increments(&mut self, count: usize, dim: usize, dt: f64) -> Result<Vec<f64>> {
        if count == 0 || dim == 0 {
            return Err(invalid("gaussian_increments needs count >= 1 and dim >= 1"));
        }
        if !(dt > 0.0) {
            return Err(invalid(format!("increment variance dt must be > 0, got {dt}")));
        }
        let scale = dt.sqrt();
        let mut out = Vec::with_capacity(count * dim);
        for _ in 0..count * dim {
            let z: f64 = self.rng.sample(StandardNormal);
            out.push(scale * z);
        }
        Ok(out)
    }

    pub fn standard_normals(&mut self, count: usize) -> Vec<f64> {
        (0..count).map(|_| self.rng.sample(StandardNormal)).collect()
    }

    /// Uniform draw on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen()
    }
}

/// Two consecutive fine increments and their bit-exact sum, which is the
/// coarse driving increment of the synchronous coupling.
#[derive(Clone, Debug)]
pub struct CoupledIncrements {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub coarse: Vec<f64>,
}

/// Draws one coarse step's worth of coupled noise at the fine grid: two
/// N(0, Delta_l I) increments plus their sum. The coarse increment is never
/// sampled on its own.
pub fn coupled_increments(
    stream: &mut RngStream,
    fine: LevelGrid,
    dim: usize,
) -> Result<CoupledIncrements> {
    if fine.level() == 0 {
        return Err(invalid("coupled increments need fine level >= 1"));
    }
    let first = stream.gaussian_increments(1, dim, fine.dt())?;
    let second = stream.gaussian_increments(1, dim, fine.dt())?;
    let coarse = first.iter().zip(&second).map(|(a, b)| a + b).collect();
    Ok(CoupledIncrements {
        first,
        second,
        coarse,
    })
}

/// Child seed for fanning a base seed out to replications and sweep cells.
pub fn derive_seed(seed: u64, tag: &str, indices: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(b"mvpf-seed-v1");
    h.update(seed.to_le_bytes());
    h.update((tag.len() as u64).to_le_bytes());
    h.update(tag.as_bytes());
    for ix in indices {
        h.update(ix.to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(role: Role) -> StreamId {
        StreamId {
            replication: 0,
            role,
            level: 3,
        }
    }

    #[test]
    fn grid_arithmetic_is_exact() {
        for level in 0..=12 {
            let g = LevelGrid::new(level);
            assert_eq!(g.dt() * g.steps_per_unit() as f64, 1.0);
            assert!(g.dt() > 0.0 && g.dt() <= 1.0);
        }
        assert_eq!(LevelGrid::new(0).coarser(), None);
        assert_eq!(LevelGrid::new(4).coarser(), Some(LevelGrid::new(3)));
    }

    #[test]
    fn increments_match_requested_variance() {
        // SE of the sample variance of N(0, dt) is about dt * sqrt(2/n).
        let mut s = RngStream::new(7, id(Role::Law));
        let n = 100_000;
        let dt = 0.25;
        let draws = s.gaussian_increments(n, 1, dt).unwrap();
        let var = draws.iter().map(|x| x * x).sum::<f64>() / n as f64;
        let tol = 3.0 * dt * (2.0 / n as f64).sqrt();
        assert!((var - dt).abs() < tol, "var {var} outside {dt} +/- {tol}");
    }

    #[test]
    fn same_stream_is_deterministic() {
        let a = RngStream::new(42, id(Role::Filter))
            .gaussian_increments(64, 2, 0.5)
            .unwrap();
        let b = RngStream::new(42, id(Role::Filter))
            .gaussian_increments(64, 2, 0.5)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_roles_are_uncorrelated() {
        let n = 10_000;
        let a = RngStream::new(9, id(Role::Law)).standard_normals(n);
        let b = RngStream::new(9, id(Role::Filter)).standard_normals(n);
        let r = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / n as f64;
        assert!(r.abs() < 3.0 / (n as f64).sqrt(), "correlation {r}");
    }

    #[test]
    fn consuming_law_stream_leaves_filter_stream_unchanged() {
        let mut law = RngStream::new(5, id(Role::Law));
        let before = RngStream::new(5, id(Role::Filter)).standard_normals(32);
        let _ = law.gaussian_increments(1000, 1, 0.125).unwrap();
        let after = RngStream::new(5, id(Role::Filter)).standard_normals(32);
        assert_eq!(before, after);
    }

    #[test]
    fn distinct_labels_differ() {
        let base = RngStream::new(1, id(Role::Law)).standard_normals(8);
        let other_rep = RngStream::new(
            1,
            StreamId {
                replication: 1,
                role: Role::Law,
                level: 3,
            },
        )
        .standard_normals(8);
        let other_level = RngStream::new(
            1,
            StreamId {
                replication: 0,
                role: Role::Law,
                level: 4,
            },
        )
        .standard_normals(8);
        assert_ne!(base, other_rep);
        assert_ne!(base, other_level);
    }

    #[test]
    fn coupled_sum_is_bit_exact() {
        let mut s = RngStream::new(11, id(Role::Law));
        let fine = LevelGrid::new(4);
        for _ in 0..100 {
            let inc = coupled_increments(&mut s, fine, 3).unwrap();
            for c in 0..3 {
                assert_eq!(inc.coarse[c], inc.first[c] + inc.second[c]);
            }
        }
    }

    #[test]
    fn coupled_coarse_variance() {
        let mut s = RngStream::new(13, id(Role::Law));
        let fine = LevelGrid::new(1);
        let n = 100_000;
        let mut sq = 0.0;
        for _ in 0..n {
            let inc = coupled_increments(&mut s, fine, 1).unwrap();
            sq += inc.coarse[0] * inc.coarse[0];
        }
        let var = sq / n as f64;
        // 2 * Delta_1 = Delta_0 = 1.
        let tol = 3.0 * (2.0f64 / n as f64).sqrt();
        assert!((var - 1.0).abs() < tol, "var {var}");
    }

    #[test]
    fn argument_validation() {
        let mut s = RngStream::new(0, id(Role::Law));
        assert!(s.gaussian_increments(1, 1, 0.0).is_err());
        assert!(s.gaussian_increments(1, 1, -1.0).is_err());
        assert!(s.gaussian_increments(0, 1, 0.5).is_err());
        assert!(coupled_increments(&mut s, LevelGrid::new(0), 1).is_err());
    }

    #[test]
    fn derive_seed_varies_per_component() {
        let base = derive_seed(3, "sl", &[2, 0]);
        assert_eq!(base, derive_seed(3, "sl", &[2, 0]));
        assert_ne!(base, derive_seed(4, "sl", &[2, 0]));
        assert_ne!(base, derive_seed(3, "ml", &[2, 0]));
        assert_ne!(base, derive_seed(3, "sl", &[2, 1]));
    }
}
