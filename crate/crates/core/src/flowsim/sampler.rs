//! Euler integration of the exact velocity field, with and without caching.
//!
//! Both samplers share one step routine so that a run whose every step is
//! computed is bitwise identical to the baseline, not merely close.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::gmm::{marginal_velocity, GmmSpec};
use super::FlowSimError;
use crate::cache::{CacheConfig, CacheController, Decision};
use crate::calibrate::MagnitudeCurve;
use crate::trace::ResidualTrace;

/// Integration settings: number of Euler steps and batch size.
///
/// The interpolation schedule is fixed to the straight line, so the step
/// grid is uniform: step `i` is evaluated at time `1 - i / num_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerConfig {
    pub num_steps: usize,
    pub batch: usize,
}

impl SamplerConfig {
    pub fn new(num_steps: usize, batch: usize) -> Result<Self, FlowSimError> {
        let config = Self { num_steps, batch };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), FlowSimError> {
        if self.num_steps < 2 {
            return Err(FlowSimError::InvalidSpec(format!(
                "num_steps must be at least 2, got {}",
                self.num_steps
            )));
        }
        if self.batch == 0 {
            return Err(FlowSimError::InvalidSpec("batch must be positive".into()));
        }
        Ok(())
    }
}

/// What a cached run actually did: per-step decisions and the number of
/// velocity evaluations (per batch, not multiplied by batch size).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionLog {
    pub decisions: Vec<bool>,
    pub model_calls: usize,
}

fn model_id(gmm: &GmmSpec) -> String {
    format!("gmm-sim-d{}-m{}", gmm.dim(), gmm.num_components())
}

/// Initial state: one standard normal draw per batch element and channel,
/// from a stream independent of the mixture's own seed.
fn init_state(batch: usize, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..batch * dim)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect()
}

fn step_time(i: usize, num_steps: usize) -> f64 {
    1.0 - i as f64 / num_steps as f64
}

/// Evaluates the velocity for one batch element, records the residual and
/// advances the element one Euler step.
fn compute_step(gmm: &GmmSpec, x: &mut [f64], t: f64, dt: f64, residual_out: &mut [f32]) {
    let v = marginal_velocity(gmm, x, t);
    for c in 0..x.len() {
        residual_out[c] = (v[c] - x[c]) as f32;
        x[c] -= dt * v[c];
    }
}

/// Advances one batch element by reconstructing the velocity from a cached
/// residual instead of calling the model.
fn skip_step(x: &mut [f64], dt: f64, residual: &[f32]) {
    for c in 0..x.len() {
        let v = x[c] + residual[c] as f64;
        x[c] -= dt * v;
    }
}

/// Runs the sampler with a model call at every step.
///
/// Returns the final batch states (flat `[batch][dim]`) and the residual
/// trace of the whole run, ready for calibration.
pub fn sample_baseline(
    gmm: &GmmSpec,
    config: &SamplerConfig,
    seed: u64,
) -> Result<(Vec<f64>, ResidualTrace), FlowSimError> {
    config.validate()?;
    let dim = gmm.dim();
    let (steps, batch) = (config.num_steps, config.batch);
    let mut x = init_state(batch, dim, seed);
    let mut data = vec![0f32; steps * batch * dim];
    let dt = 1.0 / steps as f64;
    for i in 0..steps {
        let t = step_time(i, steps);
        for n in 0..batch {
            let element = &mut x[n * dim..(n + 1) * dim];
            let row = &mut data[(i * batch + n) * dim..(i * batch + n + 1) * dim];
            compute_step(gmm, element, t, dt, row);
        }
    }
    let trace = ResidualTrace::from_vec(model_id(gmm), steps, batch, dim, data)?;
    Ok((x, trace))
}

/// Runs the sampler under a caching policy.
///
/// Computed steps are executed exactly as in [`sample_baseline`]; skipped
/// steps reuse the cached residual of the whole batch. The curve must be
/// calibrated for the same number of steps the sampler runs.
pub fn sample_cached(
    gmm: &GmmSpec,
    config: &SamplerConfig,
    curve: &MagnitudeCurve,
    cache_config: &CacheConfig,
    seed: u64,
) -> Result<(Vec<f64>, ExecutionLog), FlowSimError> {
    config.validate()?;
    if curve.num_steps() != config.num_steps {
        return Err(FlowSimError::CurveMismatch {
            curve_steps: curve.num_steps(),
            sampler_steps: config.num_steps,
        });
    }
    let dim = gmm.dim();
    let (steps, batch) = (config.num_steps, config.batch);
    let mut controller = CacheController::new(curve, cache_config.clone())?;
    let mut x = init_state(batch, dim, seed);
    let dt = 1.0 / steps as f64;
    let mut decisions = Vec::with_capacity(steps);
    let mut model_calls = 0usize;
    for i in 0..steps {
        let t = step_time(i, steps);
        match controller.decide(i)? {
            Decision::Compute => {
                let mut residual = vec![0f32; batch * dim];
                for n in 0..batch {
                    let element = &mut x[n * dim..(n + 1) * dim];
                    let row = &mut residual[n * dim..(n + 1) * dim];
                    compute_step(gmm, element, t, dt, row);
                }
                controller.on_residual(i, residual)?;
                model_calls += 1;
                decisions.push(true);
            }
            Decision::Skip => {
                let cached = controller
                    .cached_residual()
                    .expect("skip decision without a cached residual");
                for n in 0..batch {
                    let element = &mut x[n * dim..(n + 1) * dim];
                    skip_step(element, dt, &cached[n * dim..(n + 1) * dim]);
                }
                decisions.push(false);
            }
        }
    }
    Ok((
        x,
        ExecutionLog {
            decisions,
            model_calls,
        },
    ))
}
