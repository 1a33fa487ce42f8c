//! Magnitude statistics over residual traces.
//!
//! Everything here reduces the f32 trace payload in f64: per-token L2 norms
//! over channels, then token means of step-to-step norm ratios. Tokens whose
//! reference norm is below [`NORM_FLOOR`] are left out of a mean instead of
//! blowing it up; a step where that removes every token is an error.

use thiserror::Error;

use crate::trace::ResidualTrace;

/// Smallest token norm that still participates in ratio statistics.
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StatsError {
    #[error("no token at step {reference} has norm >= 1e-12; step {step} has no ratio")]
    DegenerateStep { step: usize, reference: usize },
    #[error("invalid span t_hat={t_hat}, t={t} for {num_steps} steps; need t_hat < t < num_steps")]
    InvalidSpan {
        t_hat: usize,
        t: usize,
        num_steps: usize,
    },
}

/// Per-step summary of a trace: magnitude ratios, their spread across
/// tokens, and direction drift. Index 0 holds the conventional values
/// 1, 0, 0 since step 0 has no predecessor.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeStats {
    pub gamma: Vec<f64>,
    pub sigma: Vec<f64>,
    pub cos_dist: Vec<f64>,
}

impl MagnitudeStats {
    /// Computes all three statistics in one pass over the trace.
    pub fn compute(trace: &ResidualTrace) -> Result<Self, StatsError> {
        Ok(Self {
            gamma: magnitude_ratio(trace)?,
            sigma: ratio_variability(trace)?,
            cos_dist: residual_cosine_distance(trace)?,
        })
    }

    pub fn num_steps(&self) -> usize {
        self.gamma.len()
    }
}

/// L2 norm of every token vector, flat `[step][token]`, accumulated in f64.
fn token_norms(trace: &ResidualTrace) -> Vec<f64> {
    let steps = trace.num_steps();
    let tokens = trace.num_tokens();
    let mut norms = Vec::with_capacity(steps * tokens);
    for t in 0..steps {
        for n in 0..tokens {
            let mut sq = 0.0f64;
            for &v in trace.token(t, n) {
                let v = v as f64;
                sq += v * v;
            }
            norms.push(sq.sqrt());
        }
    }
    norms
}

/// Mean over admissible tokens of `norms[t][n] / norms[t_hat][n]`.
///
/// A token is admissible when its reference norm at `t_hat` is at least
/// [`NORM_FLOOR`]. Shared by the per-step ratio and the gap ratio so the
/// two agree bit for bit on single-step spans.
fn span_ratio_mean(
    norms: &[f64],
    num_tokens: usize,
    t_hat: usize,
    t: usize,
) -> Result<f64, StatsError> {
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for n in 0..num_tokens {
        let reference = norms[t_hat * num_tokens + n];
        if reference < NORM_FLOOR {
            continue;
        }
        sum += norms[t * num_tokens + n] / reference;
        count += 1;
    }
    if count == 0 {
        return Err(StatsError::DegenerateStep {
            step: t,
            reference: t_hat,
        });
    }
    Ok(sum / count as f64)
}

/// Population standard deviation of the same ratios `span_ratio_mean`
/// averages, over the same admissible token set.
fn span_ratio_std(
    norms: &[f64],
    num_tokens: usize,
    t_hat: usize,
    t: usize,
) -> Result<f64, StatsError> {
    let mean = span_ratio_mean(norms, num_tokens, t_hat, t)?;
    let mut sq_dev = 0.0f64;
    let mut count = 0usize;
    for n in 0..num_tokens {
        let reference = norms[t_hat * num_tokens + n];
        if reference < NORM_FLOOR {
            continue;
        }
        let d = norms[t * num_tokens + n] / reference - mean;
        sq_dev += d * d;
        count += 1;
    }
    Ok((sq_dev / count as f64).sqrt())
}

/// Step-to-step magnitude ratio, averaged over tokens.
///
/// Entry `t` is the mean over tokens of `|r_t| / |r_{t-1}|`; entry 0 is 1 by
/// convention. Fails with [`StatsError::DegenerateStep`] when every token
/// norm at some predecessor step is below the floor.
pub fn magnitude_ratio(trace: &ResidualTrace) -> Result<Vec<f64>, StatsError> {
    let norms = token_norms(trace);
    let tokens = trace.num_tokens();
    let mut gamma = Vec::with_capacity(trace.num_steps());
    gamma.push(1.0);
    for t in 1..trace.num_steps() {
        gamma.push(span_ratio_mean(&norms, tokens, t - 1, t)?);
    }
    Ok(gamma)
}

/// Spread of the per-token magnitude ratios around their mean, population
/// form. Entry 0 is 0 by convention.
pub fn ratio_variability(trace: &ResidualTrace) -> Result<Vec<f64>, StatsError> {
    let norms = token_norms(trace);
    let tokens = trace.num_tokens();
    let mut sigma = Vec::with_capacity(trace.num_steps());
    sigma.push(0.0);
    for t in 1..trace.num_steps() {
        sigma.push(span_ratio_std(&norms, tokens, t - 1, t)?);
    }
    Ok(sigma)
}

/// Mean over tokens of `1 - cos(r_t, r_{t-1})`. Entry 0 is 0 by convention.
///
/// Tokens where either vector has norm below the floor are excluded; the
/// cosine is clamped to `[-1, 1]` so rounding cannot push a distance
/// outside `[0, 2]`.
pub fn residual_cosine_distance(trace: &ResidualTrace) -> Result<Vec<f64>, StatsError> {
    let steps = trace.num_steps();
    let tokens = trace.num_tokens();
    let norms = token_norms(trace);
    let mut dist = Vec::with_capacity(steps);
    dist.push(0.0);
    for t in 1..steps {
        let mut sum = 0.0f64;
        let mut count = 0usize;
        for n in 0..tokens {
            let na = norms[(t - 1) * tokens + n];
            let nb = norms[t * tokens + n];
            if na < NORM_FLOOR || nb < NORM_FLOOR {
                continue;
            }
            let prev = trace.token(t - 1, n);
            let cur = trace.token(t, n);
            let mut dot = 0.0f64;
            for c in 0..prev.len() {
                dot += prev[c] as f64 * cur[c] as f64;
            }
            let cos = (dot / (na * nb)).clamp(-1.0, 1.0);
            sum += 1.0 - cos;
            count += 1;
        }
        if count == 0 {
            return Err(StatsError::DegenerateStep {
                step: t,
                reference: t - 1,
            });
        }
        dist.push(sum / count as f64);
    }
    Ok(dist)
}

/// Mean over tokens of `|r_t| / |r_t_hat|` across an arbitrary span.
///
/// This is the quantity a cached residual actually has to approximate when
/// steps `t_hat+1..=t` are skipped. Requires `t_hat < t < num_steps`.
pub fn gap_ratio(trace: &ResidualTrace, t_hat: usize, t: usize) -> Result<f64, StatsError> {
    if t_hat >= t || t >= trace.num_steps() {
        return Err(StatsError::InvalidSpan {
            t_hat,
            t,
            num_steps: trace.num_steps(),
        });
    }
    let norms = token_norms(trace);
    span_ratio_mean(&norms, trace.num_tokens(), t_hat, t)
}

/// Product of per-step ratios over a span: `gamma[t_hat+1] * ... * gamma[t]`.
///
/// The usual estimate of [`gap_ratio`] when only per-step ratios are known.
/// An empty span (`t_hat == t`) gives 1.
pub fn product_ratio(gamma: &[f64], t_hat: usize, t: usize) -> f64 {
    assert!(
        t_hat <= t && t < gamma.len(),
        "invalid span t_hat={t_hat}, t={t} for {} entries",
        gamma.len()
    );
    let mut product = 1.0f64;
    for &g in &gamma[t_hat + 1..=t] {
        product *= g;
    }
    product
}
