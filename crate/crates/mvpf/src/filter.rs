//! Driven particle filter and coupled particle filter.
//!
//! The filter never interacts its own particles: every mean-field term is
//! evaluated against the law lattice produced by an independent stream. That
//! independence is what makes the filter consistent for the McKean-Vlasov
//! filtering problem, so the law, filter, and resampling streams are kept
//! strictly separate here.
//!
//! Weights are handled in log space throughout: the Gaussian log-likelihood is
//! shifted by its maximum before exponentiation, so weight underflow cannot
//! occur for finite particle states.

use crate::error::{invalid, Result};
use crate::lattice::{LevelGrid, RngStream, Role, StreamId};
use crate::law;
use crate::model::{self, ModelSpec, ParticleCloud, StepScratch};
use crate::resample::{multinomial_indices, normalize_log_weights, MaximalCoupler, WeightVector};
use rayon::prelude::*;

/// Observations y_1..y_T at unit times with N(x, tau^2 I) likelihood.
#[derive(Clone, Debug)]
pub struct ObservationSeries {
    data: Vec<f64>,
    len: usize,
    dim: usize,
    tau: f64,
}

impl ObservationSeries {
    pub fn new(rows: Vec<Vec<f64>>, tau: f64) -> Result<Self> {
        if rows.is_empty() {
            return Err(invalid("observation series needs T >= 1"));
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(invalid(format!("observation noise tau must be > 0, got {tau}")));
        }
        let dim = rows[0].len();
        if dim == 0 {
            return Err(invalid("observations must have dimension >= 1"));
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in &rows {
            if row.len() != dim {
                return Err(invalid("observation rows have inconsistent dimensions"));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(invalid("observations must be finite"));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            data,
            len: rows.len(),
            dim,
            tau,
        })
    }

    pub fn scalar(values: &[f64], tau: f64) -> Result<Self> {
        Self::new(values.iter().map(|v| vec![*v]).collect(), tau)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Observation at time t-1+1, i.e. index k = 0 is y_1.
    pub fn at(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }
}

/// N(x, tau^2 I) density at y.
pub fn likelihood(x: &[f64], y: &[f64], tau: f64) -> f64 {
    log_likelihood(x, y, tau).exp()
}

pub fn log_likelihood(x: &[f64], y: &[f64], tau: f64) -> f64 {
    debug_assert!(tau > 0.0);
    debug_assert_eq!(x.len(), y.len());
    let d = x.len() as f64;
    let mut sq = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        let diff = yi - xi;
        sq += diff * diff;
    }
    -0.5 * d * (2.0 * std::f64::consts::PI * tau * tau).ln() - sq / (2.0 * tau * tau)
}

/// Output of one PF run: unit-time estimates of pi_t(phi) plus cost metadata.
#[derive(Clone, Debug)]
pub struct FilterRun {
    pub estimates: Vec<f64>,
    pub level: u32,
    pub n: usize,
    pub m: usize,
    pub cost: f64,
    pub seed: u64,
}

/// Output of one CPF run. `increments` holds the per-time estimates of
/// pi_t^l(phi) - pi_t^{l-1}(phi); the per-level estimates are kept for
/// diagnostics and marginal checks.
#[derive(Clone, Debug)]
pub struct CpfRun {
    pub increments: Vec<f64>,
    pub fine_estimates: Vec<f64>,
    pub coarse_estimates: Vec<f64>,
    pub fine_level: u32,
    pub n: usize,
    pub m: usize,
    pub cost: f64,
    pub seed: u64,
}

/// The three private streams of one filter run.
pub(crate) struct FilterStreams {
    pub law: RngStream,
    pub filter: RngStream,
    pub resample: RngStream,
}

impl FilterStreams {
    pub(crate) fn for_seed(seed: u64, level: u32) -> Self {
        let id = |role| StreamId {
            replication: 0,
            role,
            level,
        };
        Self {
            law: RngStream::new(seed, id(Role::Law)),
            filter: RngStream::new(seed, id(Role::Filter)),
            resample: RngStream::new(seed, id(Role::Resample)),
        }
    }
}

/// Weight model. `Flat` replaces G by a constant, which turns the filter into
/// an unweighted mean-field chain; only tests use it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Weighting {
    Gaussian,
    #[allow(dead_code)]
    Flat,
}

fn check_filter_args(model: &ModelSpec, n: usize, m: usize, obs: &ObservationSeries) -> Result<()> {
    if n == 0 || m == 0 {
        return Err(invalid("particle counts n and m must be >= 1"));
    }
    if obs.dim() != model.dim {
        return Err(invalid("observation dimension does not match the model"));
    }
    Ok(())
}

/// Advances all filter particles one Euler step against a law cloud, reading
/// `state` and writing `next`. Parallel mode splits over particles; each
/// particle's interaction sum is sequential, so results are bit-identical.
fn advance_particles(
    model: &ModelSpec,
    state: &[f64],
    next: &mut [f64],
    cloud: &ParticleCloud,
    incs: &[f64],
    dt: f64,
    par: bool,
) {
    let d = model.dim;
    let advance = |i: usize, out: &mut [f64], scratch: &mut StepScratch| {
        let x = &state[i * d..(i + 1) * d];
        let (s1, s2) = model.mean_field_pair(x, cloud);
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
}

/// Coarse-side counterpart: one coefficient evaluation, both fine increments.
fn advance_particles_coupled(
    model: &ModelSpec,
    state: &[f64],
    next: &mut [f64],
    cloud: &ParticleCloud,
    incs_first: &[f64],
    incs_second: &[f64],
    dt: f64,
    par: bool,
) {
    let d = model.dim;
    let advance = |i: usize, out: &mut [f64], scratch: &mut StepScratch| {
        let x = &state[i * d..(i + 1) * d];
        let (s1, s2) = model.mean_field_pair(x, cloud);
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
}

fn weights_for(
    state: &[f64],
    n: usize,
    d: usize,
    y: &[f64],
    tau: f64,
    weighting: Weighting,
    logw: &mut Vec<f64>,
) -> Result<WeightVector> {
    logw.clear();
    for i in 0..n {
        let x = &state[i * d..(i + 1) * d];
        logw.push(match weighting {
            Weighting::Gaussian => log_likelihood(x, y, tau),
            Weighting::Flat => 0.0,
        });
    }
    normalize_log_weights(logw)
}

fn weighted_estimate<F>(state: &[f64], d: usize, w: &WeightVector, phi: &F) -> f64
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut est = 0.0;
    for (i, wi) in w.weights().iter().enumerate() {
        est += wi * phi(&state[i * d..(i + 1) * d]);
    }
    est
}

pub(crate) fn run_pf_with<F>(
    model: &ModelSpec,
    grid: LevelGrid,
    n: usize,
    m: usize,
    obs: &ObservationSeries,
    phi: &F,
    streams: &mut FilterStreams,
    weighting: Weighting,
    par: bool,
) -> Result<FilterRun>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    check_filter_args(model, n, m, obs)?;
    let d = model.dim;
    let dt = grid.dt();
    let steps = grid.steps_per_unit() as usize;
    let unit_cost = steps as f64 * m as f64 * (m + n) as f64;

    let mut law_cloud = ParticleCloud::dirac(&model.x0, m)?;
    let mut state: Vec<f64> = model.x0.repeat(n);
    let mut next = vec![0.0; n * d];
    let mut logw = Vec::with_capacity(n);
    let mut estimates = Vec::with_capacity(obs.len());
    let mut cost = 0.0;

    for t in 0..obs.len() {
        let lat = if par {
            law::propagate_law_par(model, grid, m, &law_cloud, &mut streams.law)?
        } else {
            law::propagate_law(model, grid, m, &law_cloud, &mut streams.law)?
        };
        for k in 1..=steps {
            let incs = streams.filter.gaussian_increments(n, d, dt)?;
            advance_particles(model, &state, &mut next, lat.cloud(k - 1), &incs, dt, par);
            std::mem::swap(&mut state, &mut next);
        }
        let w = weights_for(&state, n, d, obs.at(t), obs.tau(), weighting, &mut logw)?;
        estimates.push(weighted_estimate(&state, d, &w, phi));
        let idx = multinomial_indices(&w, n, &mut streams.resample)?;
        for (j, &i) in idx.iter().enumerate() {
            next[j * d..(j + 1) * d].copy_from_slice(&state[i * d..(i + 1) * d]);
        }
        std::mem::swap(&mut state, &mut next);
        law_cloud = lat.terminal().clone();
        cost += unit_cost;
    }

    Ok(FilterRun {
        estimates,
        level: grid.level(),
        n,
        m,
        cost,
        seed: streams.law.seed,
    })
}

/// Particle filter for pi_t^l(phi) (Algorithm 2): an m-particle law lattice on
/// its own stream drives n filter particles, weighted by the Gaussian
/// likelihood and multinomially resampled at every unit time. Estimates are
/// recorded before resampling. Cost accrues as steps_per_unit * m * (m + n)
/// per unit interval, one unit per kernel or drift evaluation.
pub fn run_pf<F>(
    model: &ModelSpec,
    grid: LevelGrid,
    n: usize,
    m: usize,
    obs: &ObservationSeries,
    phi: F,
    seed: u64,
) -> Result<FilterRun>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut streams = FilterStreams::for_seed(seed, grid.level());
    run_pf_with(model, grid, n, m, obs, &phi, &mut streams, Weighting::Gaussian, false)
}

/// [`run_pf`] with the particle loops parallelized; bit-identical output.
pub fn run_pf_par<F>(
    model: &ModelSpec,
    grid: LevelGrid,
    n: usize,
    m: usize,
    obs: &ObservationSeries,
    phi: F,
    seed: u64,
) -> Result<FilterRun>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut streams = FilterStreams::for_seed(seed, grid.level());
    run_pf_with(model, grid, n, m, obs, &phi, &mut streams, Weighting::Gaussian, true)
}

pub(crate) fn run_cpf_with<F>(
    model: &ModelSpec,
    fine: LevelGrid,
    n: usize,
    m: usize,
    obs: &ObservationSeries,
    phi: &F,
    streams: &mut FilterStreams,
    weighting: Weighting,
    par: bool,
) -> Result<CpfRun>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if fine.level() == 0 {
        return Err(invalid("coupled filter needs fine level >= 1"));
    }
    check_filter_args(model, n, m, obs)?;
    let coarse = fine.coarser().expect("level >= 1 has a coarser grid");
    let d = model.dim;
    let dt_f = fine.dt();
    let dt_c = coarse.dt();
    let half = coarse.steps_per_unit() as usize;
    let unit_cost = fine.steps_per_unit() as f64 * m as f64 * (m + n) as f64;

    let mut law_f = ParticleCloud::dirac(&model.x0, m)?;
    let mut law_c = law_f.clone();
    let mut state_f: Vec<f64> = model.x0.repeat(n);
    let mut state_c = state_f.clone();
    let mut next = vec![0.0; n * d];
    let mut logw = Vec::with_capacity(n);
    let mut increments = Vec::with_capacity(obs.len());
    let mut fine_estimates = Vec::with_capacity(obs.len());
    let mut coarse_estimates = Vec::with_capacity(obs.len());
    let mut cost = 0.0;

    for t in 0..obs.len() {
        let (lat_f, lat_c) = if par {
            law::propagate_law_coupled_par(model, fine, m, &law_f, &law_c, &mut streams.law)?
        } else {
            law::propagate_law_coupled(model, fine, m, &law_f, &law_c, &mut streams.law)?
        };
        for kc in 0..half {
            // Same stream order as the plain PF at the fine level: one n x d
            // block per fine step. The coarse particles reuse both blocks.
            let wa = streams.filter.gaussian_increments(n, d, dt_f)?;
            advance_particles(model, &state_f, &mut next, lat_f.cloud(2 * kc), &wa, dt_f, par);
            std::mem::swap(&mut state_f, &mut next);
            let wb = streams.filter.gaussian_increments(n, d, dt_f)?;
            advance_particles(model, &state_f, &mut next, lat_f.cloud(2 * kc + 1), &wb, dt_f, par);
            std::mem::swap(&mut state_f, &mut next);
            advance_particles_coupled(
                model, &state_c, &mut next, lat_c.cloud(kc), &wa, &wb, dt_c, par,
            );
            std::mem::swap(&mut state_c, &mut next);
        }

        let y = obs.at(t);
        let wf = weights_for(&state_f, n, d, y, obs.tau(), weighting, &mut logw)?;
        let wc = weights_for(&state_c, n, d, y, obs.tau(), weighting, &mut logw)?;
        // Increment accumulated as per-pair differences in index order; when
        // the two systems coincide every term is exactly zero.
        let mut inc = 0.0;
        for i in 0..n {
            let pf = wf.weights()[i] * phi(&state_f[i * d..(i + 1) * d]);
            let pc = wc.weights()[i] * phi(&state_c[i * d..(i + 1) * d]);
            inc += pf - pc;
        }
        increments.push(inc);
        fine_estimates.push(weighted_estimate(&state_f, d, &wf, phi));
        coarse_estimates.push(weighted_estimate(&state_c, d, &wc, phi));

        let coupler = MaximalCoupler::new(&wf, &wc)?;
        let mut next_c = vec![0.0; n * d];
        for j in 0..n {
            let (i1, i2) = coupler.sample(&mut streams.resample);
            next[j * d..(j + 1) * d].copy_from_slice(&state_f[i1 * d..(i1 + 1) * d]);
            next_c[j * d..(j + 1) * d].copy_from_slice(&state_c[i2 * d..(i2 + 1) * d]);
        }
        std::mem::swap(&mut state_f, &mut next);
        state_c = next_c;

        law_f = lat_f.terminal().clone();
        law_c = lat_c.terminal().clone();
        cost += unit_cost;
    }

    Ok(CpfRun {
        increments,
        fine_estimates,
        coarse_estimates,
        fine_level: fine.level(),
        n,
        m,
        cost,
        seed: streams.law.seed,
    })
}

/// Coupled particle filter for pi_t^l(phi) - pi_t^{l-1}(phi) (Algorithm 4).
/// Fine and coarse systems share Brownian increments (synchronous coupling),
/// are driven by the coupled law lattices, and are resampled as pairs through
/// the maximal coupling. Cost is accounted on the fine grid, matching the
/// multilevel cost model Delta_l^{-1} m (m + n) per unit time.
pub fn run_cpf<F>(
    model: &ModelSpec,
    fine: LevelGrid,
    n: usize,
    m: usize,
    obs: &ObservationSeries,
    phi: F,
    seed: u64,
) -> Result<CpfRun>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut streams = FilterStreams::for_seed(seed, fine.level());
    run_cpf_with(model, fine, n, m, obs, &phi, &mut streams, Weighting::Gaussian, false)
}

/// [`run_cpf`] with the particle loops parallelized; bit-identical output.
pub fn run_cpf_par<F>(
    model: &ModelSpec,
    fine: LevelGrid,
    n: usize,
    m: usize,
    obs: &ObservationSeries,
    phi: F,
    seed: u64,
) -> Result<CpfRun>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut streams = FilterStreams::for_seed(seed, fine.level());
    run_cpf_with(model, fine, n, m, obs, &phi, &mut streams, Weighting::Gaussian, true)
}
