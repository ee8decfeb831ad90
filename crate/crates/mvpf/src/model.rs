//! McKean-Vlasov model abstraction and the two benchmark models.
//!
//! The dynamics are `dX = a(X, xi1_bar) dt + b(X, xi2_bar) dW` where the
//! mean-field arguments are empirical averages of interaction kernels over a
//! particle cloud. Coefficients are plain function values so user models plug
//! in through the same [`ModelSpec`] as the built-in Kuramoto variants.

use std::sync::Arc;

use crate::error::{invalid, Result};

/// Coefficient callback: writes `a(x, s)` (length d) or `b(x, s)` (row-major
/// d x d) into `out`.
pub type CoefFn = dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync;
/// Interaction kernel `xi(x, y)`.
pub type KernelFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;

#[derive(Clone)]
pub struct ModelSpec {
    pub dim: usize,
    pub x0: Vec<f64>,
    drift: Arc<CoefFn>,
    diffusion: Arc<CoefFn>,
    kernel1: Arc<KernelFn>,
    kernel2: Arc<KernelFn>,
}

impl ModelSpec {
    pub fn new(
        dim: usize,
        x0: Vec<f64>,
        drift: Arc<CoefFn>,
        diffusion: Arc<CoefFn>,
        kernel1: Arc<KernelFn>,
        kernel2: Arc<KernelFn>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("model dimension must be positive"));
        }
        if x0.len() != dim {
            return Err(invalid(format!(
                "x0 has length {}, expected {}",
                x0.len(),
                dim
            )));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(invalid("x0 must be finite"));
        }
        Ok(Self {
            dim,
            x0,
            drift,
            diffusion,
            kernel1,
            kernel2,
        })
    }

    /// Kuramoto mean-field model: d = 1, a(x, s) = theta + s, b = sigma,
    /// xi1(x, y) = sin(x - y). xi2 is unused by the diffusion and set to 0.
    pub fn kuramoto(theta: f64, sigma: f64, x0: f64) -> Self {
        Self::new(
            1,
            vec![x0],
            Arc::new(move |_x, s, out| out[0] = theta + s),
            Arc::new(move |_x, _s, out| out[0] = sigma),
            Arc::new(|x, y| (x[0] - y[0]).sin()),
            Arc::new(|_x, _y| 0.0),
        )
        .expect("kuramoto construction is valid")
    }

    /// Kuramoto with state-dependent diffusion b(x, s) = sigma / (1 + x^2).
    pub fn modified_kuramoto(theta: f64, sigma: f64, x0: f64) -> Self {
        Self::new(
            1,
            vec![x0],
            Arc::new(move |_x, s, out| out[0] = theta + s),
            Arc::new(move |x, _s, out| out[0] = sigma / (1.0 + x[0] * x[0])),
            Arc::new(|x, y| (x[0] - y[0]).sin()),
            Arc::new(|_x, _y| 0.0),
        )
        .expect("modified kuramoto construction is valid")
    }

    pub fn drift_into(&self, x: &[f64], s: f64, out: &mut [f64]) {
        (self.drift)(x, s, out)
    }

    pub fn diffusion_into(&self, x: &[f64], s: f64, out: &mut [f64]) {
        (self.diffusion)(x, s, out)
    }

    pub fn kernel1(&self, x: &[f64], y: &[f64]) -> f64 {
        (self.kernel1)(x, y)
    }

    pub fn kernel2(&self, x: &[f64], y: &[f64]) -> f64 {
        (self.kernel2)(x, y)
    }

    /// Both mean-field values `(xi1_bar, xi2_bar)` against `cloud` in a single
    /// pass over the particles.
    pub fn mean_field_pair(&self, x: &[f64], cloud: &ParticleCloud) -> (f64, f64) {
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for y in cloud.rows() {
            s1 += (self.kernel1)(x, y);
            s2 += (self.kernel2)(x, y);
        }
        let n = cloud.n as f64;
        (s1 / n, s2 / n)
    }
}

impl std::fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelSpec")
            .field("dim", &self.dim)
            .field("x0", &self.x0)
            .finish()
    }
}

/// Empirical measure (1/n) sum of Dirac masses, stored row-major n x dim.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleCloud {
    positions: Vec<f64>,
    pub n: usize,
    pub dim: usize,
}

impl ParticleCloud {
    pub fn new(positions: Vec<f64>, n: usize, dim: usize) -> Result<Self> {
        if n == 0 || dim == 0 {
            return Err(invalid("particle cloud needs n >= 1 and dim >= 1"));
        }
        if positions.len() != n * dim {
            return Err(invalid(format!(
                "cloud storage has length {}, expected {}",
                positions.len(),
                n * dim
            )));
        }
        if positions.iter().any(|v| !v.is_finite()) {
            return Err(invalid("particle positions must be finite"));
        }
        Ok(Self { positions, n, dim })
    }

    /// n copies of a single point.
    pub fn dirac(x: &[f64], n: usize) -> Result<Self> {
        let mut positions = Vec::with_capacity(n * x.len());
        for _ in 0..n {
            positions.extend_from_slice(x);
        }
        Self::new(positions, n, x.len())
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.positions.chunks_exact(self.dim)
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for row in self.rows() {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= self.n as f64;
        }
        out
    }
}

/// (1/n) sum_j kernel(x, X^j) over the cloud, in fixed index order.
pub fn mean_field<K>(kernel: &K, x: &[f64], cloud: &ParticleCloud) -> f64
where
    K: Fn(&[f64], &[f64]) -> f64 + ?Sized,
{
    let mut sum = 0.0;
    for y in cloud.rows() {
        sum += kernel(x, y);
    }
    sum / cloud.n as f64
}

/// Reusable buffers for the drift vector and diffusion matrix so the particle
/// loops stay allocation-free.
pub(crate) struct StepScratch {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl StepScratch {
    pub(crate) fn new(dim: usize) -> Self {
        Self {
            a: vec![0.0; dim],
            b: vec![0.0; dim * dim],
        }
    }
}

pub(crate) fn euler_step_into(
    model: &ModelSpec,
    x: &[f64],
    s1: f64,
    s2: f64,
    dt: f64,
    dw: &[f64],
    scratch: &mut StepScratch,
    out: &mut [f64],
) {
    let d = model.dim;
    debug_assert!(dt > 0.0);
    debug_assert_eq!(x.len(), d);
    debug_assert_eq!(dw.len(), d);
    model.drift_into(x, s1, &mut scratch.a);
    model.diffusion_into(x, s2, &mut scratch.b);
    for r in 0..d {
        let mut noise = 0.0;
        for c in 0..d {
            noise += scratch.b[r * d + c] * dw[c];
        }
        out[r] = x[r] + scratch.a[r] * dt + noise;
    }
}

/// Coarse Euler step driven by two consecutive fine increments. The
/// coefficients are evaluated once and the increments are applied in sequence,
/// so when a = 0 and b = I the result is bit-identical to composing the two
/// fine steps (the telescoping-collapse contract of the coupled filter).
pub(crate) fn euler_step_coupled_into(
    model: &ModelSpec,
    x: &[f64],
    s1: f64,
    s2: f64,
    dt: f64,
    dw_first: &[f64],
    dw_second: &[f64],
    scratch: &mut StepScratch,
    out: &mut [f64],
) {
    let d = model.dim;
    debug_assert!(dt > 0.0);
    model.drift_into(x, s1, &mut scratch.a);
    model.diffusion_into(x, s2, &mut scratch.b);
    for r in 0..d {
        let mut n1 = 0.0;
        let mut n2 = 0.0;
        for c in 0..d {
            n1 += scratch.b[r * d + c] * dw_first[c];
            n2 += scratch.b[r * d + c] * dw_second[c];
        }
        out[r] = ((x[r] + scratch.a[r] * dt) + n1) + n2;
    }
}

/// One Euler-Maruyama step `x + a(x, s1) dt + b(x, s2) dW` with precomputed
/// mean-field values s1 and s2.
pub fn euler_step(model: &ModelSpec, x: &[f64], s1: f64, s2: f64, dt: f64, dw: &[f64]) -> Vec<f64> {
    let mut scratch = StepScratch::new(model.dim);
    let mut out = vec![0.0; model.dim];
    euler_step_into(model, x, s1, s2, dt, dw, &mut scratch, &mut out);
    out
}

/// Coarse-side step of the synchronous coupling: one coefficient evaluation,
/// the two fine Brownian increments applied in order.
pub fn euler_step_coupled(
    model: &ModelSpec,
    x: &[f64],
    s1: f64,
    s2: f64,
    dt: f64,
    dw_first: &[f64],
    dw_second: &[f64],
) -> Vec<f64> {
    let mut scratch = StepScratch::new(model.dim);
    let mut out = vec![0.0; model.dim];
    euler_step_coupled_into(model, x, s1, s2, dt, dw_first, dw_second, &mut scratch, &mut out);
    out
}
