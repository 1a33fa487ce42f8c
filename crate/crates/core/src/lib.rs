//! Magnitude-guided residual caching for iterative denoising samplers.
//!
//! The premise: across most of a sampling trajectory, consecutive update
//! residuals differ mainly by a slowly varying magnitude factor. Record
//! that factor once per model (`trace`, `stats`, `calibrate`), then at run
//! time reuse cached residuals for steps where the estimated deviation
//! stays within a budget (`cache`). The `flowsim` module provides an exact
//! Gaussian-mixture flow so every claim can be checked against ground
//! truth, and `metrics` scores the damage.
//!
//! ```
//! use magcache_core::{flowsim, calibrate, cache};
//! use std::collections::BTreeSet;
//!
//! let spec = flowsim::SimSpec { dim_side: 4, num_components: 2, batch: 2,
//!     num_steps: 10, ..Default::default() };
//! let (gmm, sampler) = spec.build().unwrap();
//! let (_, trace) = flowsim::sample_baseline(&gmm, &sampler, 1).unwrap();
//! let curve = calibrate::calibrate_from_trace(&trace, BTreeSet::new(), "demo").unwrap();
//! let config = cache::CacheConfig::new(0.12, 2, 0.2).unwrap();
//! let schedule = cache::derive_schedule(&curve, &config).unwrap();
//! assert!(schedule.computed_count <= 10);
//! ```

pub mod cache;
pub mod calibrate;
pub mod flowsim;
pub mod image;
pub mod metrics;
pub mod stats;
pub mod trace;

pub use cache::{
    CacheConfig, CacheController, CacheError, CacheState, Decision, ErrorModel, Preset,
    SkipSchedule,
};
pub use calibrate::{CurveError, MagnitudeCurve};
pub use flowsim::{ExecutionLog, FlowSimError, GmmSpec, SamplerConfig, SimSpec};
pub use image::{GrayImage, ImageError};
pub use metrics::{MetricsError, QualityReport};
pub use stats::{MagnitudeStats, StatsError};
pub use trace::{ResidualTrace, TraceError};
