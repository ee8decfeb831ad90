//! Particle filters for partially observed McKean-Vlasov SDEs.
//!
//! A McKean-Vlasov diffusion is an SDE whose coefficients depend on the law of
//! the solution through averaged interaction kernels,
//!
//! ```text
//! dX_t = a(X_t, xi1_bar(X_t, mu_t)) dt + b(X_t, xi2_bar(X_t, mu_t)) dW_t,
//! xij_bar(x, mu) = \int xi_j(x, y) mu(dy),
//! ```
//!
//! with `mu_t` the law of `X_t`. The law is not available in closed form, so
//! every filtering scheme here first approximates it with an interacting
//! particle system on a dyadic Euler grid ([`law`]), then runs a particle
//! filter against unit-time Gaussian observations ([`filter`]). Coupled filters
//! at consecutive discretization levels ([`filter::run_cpf`]) feed a multilevel
//! estimator ([`ml`]) whose cost/error trade-off beats the single-level filter.
//!
//! All randomness flows through named counter-derived streams
//! ([`lattice::RngStream`]), so every estimator is reproducible from one `u64`
//! seed and the law, filter, and resampling streams never alias.

pub mod error;
pub mod filter;
pub mod lattice;
pub mod law;
pub mod ml;
pub mod model;
pub mod resample;

pub use error::{Error, Result};
