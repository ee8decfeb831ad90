//! Experiment harness around the `mvpf` library: configuration profiles,
//! data simulation, reference caching, and the MSE-versus-cost sweep.

pub mod config;
pub mod data;
pub mod reference;
pub mod sweep;
