//! Interacting-particle approximation of the marginal laws over one unit
//! interval, single level and synchronously coupled fine/coarse pair.
//!
//! One call covers the interval [t-1, t]: it takes the terminal cloud of the
//! previous interval (or the Dirac mass at x0 for t = 1) and returns the cloud
//! at every grid time. The filter consumes those clouds as the mean-field
//! input for its own particles; chaining across intervals is the caller's job.

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::lattice::{LevelGrid, RngStream};
use crate::model::{self, ModelSpec, ParticleCloud, StepScratch};

/// Clouds at grid times t-1+k*dt for k = 0..=steps_per_unit.
#[derive(Clone, Debug)]
pub struct LawLattice {
    grid: LevelGrid,
    clouds: Vec<ParticleCloud>,
    pub m: usize,
}

impl LawLattice {
    pub fn grid(&self) -> LevelGrid {
        self.grid
    }

    /// Cloud at grid index k (k = 0 is the input cloud).
    pub fn cloud(&self, k: usize) -> &ParticleCloud {
        &self.clouds[k]
    }

    pub fn num_clouds(&self) -> usize {
        self.clouds.len()
    }

    pub fn terminal(&self) -> &ParticleCloud {
        self.clouds.last().expect("lattice is never empty")
    }
}

fn check_input(model: &ModelSpec, m: usize, input: &ParticleCloud) -> Result<()> {
    if m == 0 {
        return Err(invalid("law approximation needs m >= 1 particles"));
    }
    if input.n != m {
        return Err(invalid(format!(
            "input cloud has {} particles, expected m = {}",
            input.n, m
        )));
    }
    if input.dim != model.dim {
        return Err(invalid("input cloud dimension does not match the model"));
    }
    Ok(())
}

/// Advances every particle of `prev` by one Euler step with mean-field terms
/// measured against `prev` itself (self-interaction included). `incs` holds
/// one row per particle. The parallel path pins the reduction order per
/// particle, so it is bit-identical to the sequential one.
fn step_cloud(
    model: &ModelSpec,
    prev: &ParticleCloud,
    incs: &[f64],
    dt: f64,
    par: bool,
) -> Result<ParticleCloud> {
    let d = model.dim;
    let mut next = vec![0.0; prev.n * d];
    let advance = |i: usize, out: &mut [f64], scratch: &mut StepScratch| {
        let x = prev.particle(i);
        let (s1, s2) = model.mean_field_pair(x, prev);
        model::euler_step_into(model, x, s1, s2, dt, &incs[i * d..(i + 1) * d], scratch, out);
    };
    if par {
        next.par_chunks_mut(d).enumerate().for_each_init(
            || StepScratch::new(d),
            |scratch, (i, out)| advance(i, out, scratch),
        );
    } else {
        let mut scratch = StepScratch::new(d);
        for (i, out) in next.chunks_mut(d).enumerate() {
            advance(i, out, &mut scratch);
        }
    }
    ParticleCloud::new(next, prev.n, d)
}

/// Coarse-side step of the coupling: one coefficient evaluation per particle,
/// the two fine increments applied in sequence.
fn step_cloud_coarse(
    model: &ModelSpec,
    prev: &ParticleCloud,
    incs_first: &[f64],
    incs_second: &[f64],
    dt: f64,
    par: bool,
) -> Result<ParticleCloud> {
    let d = model.dim;
    let mut next = vec![0.0; prev.n * d];
    let advance = |i: usize, out: &mut [f64], scratch: &mut StepScratch| {
        let x = prev.particle(i);
        let (s1, s2) = model.mean_field_pair(x, prev);
        model::euler_step_coupled_into(
            model,
            x,
            s1,
            s2,
            dt,
            &incs_first[i * d..(i + 1) * d],
            &incs_second[i * d..(i + 1) * d],
            scratch,
            out,
        );
    };
    if par {
        next.par_chunks_mut(d).enumerate().for_each_init(
            || StepScratch::new(d),
            |scratch, (i, out)| advance(i, out, scratch),
        );
    } else {
        let mut scratch = StepScratch::new(d);
        for (i, out) in next.chunks_mut(d).enumerate() {
            advance(i, out, &mut scratch);
        }
    }
    ParticleCloud::new(next, prev.n, d)
}

fn propagate_law_impl(
    model: &ModelSpec,
    grid: LevelGrid,
    m: usize,
    input: &ParticleCloud,
    stream: &mut RngStream,
    par: bool,
) -> Result<LawLattice> {
    check_input(model, m, input)?;
    let steps = grid.steps_per_unit() as usize;
    let mut clouds = Vec::with_capacity(steps + 1);
    clouds.push(input.clone());
    for k in 0..steps {
        let incs = stream.gaussian_increments(m, model.dim, grid.dt())?;
        let next = step_cloud(model, &clouds[k], &incs, grid.dt(), par)?;
        clouds.push(next);
    }
    Ok(LawLattice { grid, clouds, m })
}

/// Algorithm 1 over one unit interval: m interacting particles on the level-l
/// grid, mean-field terms from index-ordered sums over all m particles.
/// Cost is Theta(steps_per_unit * m^2) kernel evaluations.
pub fn propagate_law(
    model: &ModelSpec,
    grid: LevelGrid,
    m: usize,
    input: &ParticleCloud,
    stream: &mut RngStream,
) -> Result<LawLattice> {
    propagate_law_impl(model, grid, m, input, stream, false)
}

/// Same computation with the particle loop parallelized. Increments are drawn
/// up front in stream order and each particle's interaction sum keeps index
/// order, so the output is bit-identical to [`propagate_law`].
pub fn propagate_law_par(
    model: &ModelSpec,
    grid: LevelGrid,
    m: usize,
    input: &ParticleCloud,
    stream: &mut RngStream,
) -> Result<LawLattice> {
    propagate_law_impl(model, grid, m, input, stream, true)
}

fn propagate_law_coupled_impl(
    model: &ModelSpec,
    fine: LevelGrid,
    m: usize,
    input_fine: &ParticleCloud,
    input_coarse: &ParticleCloud,
    stream: &mut RngStream,
    par: bool,
) -> Result<(LawLattice, LawLattice)> {
    if fine.level() == 0 {
        return Err(invalid("coupled law propagation needs fine level >= 1"));
    }
    check_input(model, m, input_fine)?;
    check_input(model, m, input_coarse)?;
    let coarse = fine.coarser().expect("level >= 1 has a coarser grid");
    let half = coarse.steps_per_unit() as usize;
    let d = model.dim;

    let mut fine_clouds = Vec::with_capacity(2 * half + 1);
    let mut coarse_clouds = Vec::with_capacity(half + 1);
    fine_clouds.push(input_fine.clone());
    coarse_clouds.push(input_coarse.clone());

    for kc in 0..half {
        // Identical draw order to the plain fine propagation: one m x d block
        // per fine step. The coarse step reuses both blocks, never the stream.
        let wa = stream.gaussian_increments(m, d, fine.dt())?;
        let next_a = step_cloud(model, &fine_clouds[2 * kc], &wa, fine.dt(), par)?;
        fine_clouds.push(next_a);
        let wb = stream.gaussian_increments(m, d, fine.dt())?;
        let next_b = step_cloud(model, &fine_clouds[2 * kc + 1], &wb, fine.dt(), par)?;
        fine_clouds.push(next_b);
        let next_c = step_cloud_coarse(model, &coarse_clouds[kc], &wa, &wb, coarse.dt(), par)?;
        coarse_clouds.push(next_c);
    }

    Ok((
        LawLattice {
            grid: fine,
            clouds: fine_clouds,
            m,
        },
        LawLattice {
            grid: coarse,
            clouds: coarse_clouds,
            m,
        },
    ))
}

/// Coupled law approximation at levels l and l-1 over one unit interval. The
/// fine system is advanced exactly as in [`propagate_law`]; the coarse system
/// consumes the summed fine increments (synchronous coupling).
pub fn propagate_law_coupled(
    model: &ModelSpec,
    fine: LevelGrid,
    m: usize,
    input_fine: &ParticleCloud,
    input_coarse: &ParticleCloud,
    stream: &mut RngStream,
) -> Result<(LawLattice, LawLattice)> {
    propagate_law_coupled_impl(model, fine, m, input_fine, input_coarse, stream, false)
}

pub fn propagate_law_coupled_par(
    model: &ModelSpec,
    fine: LevelGrid,
    m: usize,
    input_fine: &ParticleCloud,
    input_coarse: &ParticleCloud,
    stream: &mut RngStream,
) -> Result<(LawLattice, LawLattice)> {
    propagate_law_coupled_impl(model, fine, m, input_fine, input_coarse, stream, true)
}
