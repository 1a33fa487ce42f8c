//! Residual caching policy: when to call the model and when to reuse.
//!
//! The decision rule is deliberately cheap. Given a calibrated magnitude
//! curve, the error of reusing a residual cached at step `t_hat` for step
//! `t` is estimated as `|1 - prod(gamma[t_hat+1..=t])|`. Estimates add up
//! across consecutive skips; a skip is taken only while the running total
//! stays within the tolerance, the run stays short, and the step is not
//! otherwise forced to compute (warmup prefix, pins, empty cache).

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibrate::MagnitudeCurve;
use crate::stats::product_ratio;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid span t_hat={t_hat}, t={t} for {num_steps} steps")]
    IndexOutOfRange {
        t_hat: usize,
        t: usize,
        num_steps: usize,
    },
    #[error("step {t} out of range for {num_steps} steps")]
    StepOutOfRange { t: usize, num_steps: usize },
    #[error("steps must be visited in increasing order: got {t} after {last}")]
    NonMonotonicStep { last: usize, t: usize },
    #[error("protocol violation: {0}")]
    ProtocolViolation(&'static str),
    #[error("malformed schedule: {0}")]
    MalformedSchedule(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

/// How the error of a single skip is estimated from the curve.
///
/// `Multiplicative` accounts for the whole span since the last computed
/// step; `Naive` looks only at the current step's ratio, which understates
/// the risk of long runs on decaying curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorModel {
    Multiplicative,
    Naive,
}

impl ErrorModel {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorModel::Multiplicative => "multiplicative",
            ErrorModel::Naive => "naive",
        }
    }
}

impl FromStr for ErrorModel {
    type Err = CacheError;

    fn from_str(s: &str) -> Result<Self, CacheError> {
        match s {
            "multiplicative" => Ok(ErrorModel::Multiplicative),
            "naive" => Ok(ErrorModel::Naive),
            other => Err(CacheError::InvalidConfig(format!(
                "unknown error model {other:?}, expected \"multiplicative\" or \"naive\""
            ))),
        }
    }
}

/// Runtime knobs of the caching policy.
///
/// `delta` is the per-run error tolerance; `f64::INFINITY` disables the
/// budget so only `max_skip` limits reuse. `retain_fraction` keeps an
/// untouched prefix of steps where content forms. Pinned steps here are
/// merged with the curve's own pins.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheConfig {
    pub delta: f64,
    pub max_skip: usize,
    pub retain_fraction: f64,
    pub pinned_steps: BTreeSet<usize>,
    pub error_model: ErrorModel,
}

impl CacheConfig {
    pub fn new(delta: f64, max_skip: usize, retain_fraction: f64) -> Result<Self, CacheError> {
        let config = Self {
            delta,
            max_skip,
            retain_fraction,
            pinned_steps: BTreeSet::new(),
            error_model: ErrorModel::Multiplicative,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CacheError> {
        if self.delta.is_nan() || self.delta < 0.0 {
            return Err(CacheError::InvalidConfig(format!(
                "delta must be >= 0 or infinite, got {}",
                self.delta
            )));
        }
        if !(0.0..=1.0).contains(&self.retain_fraction) {
            return Err(CacheError::InvalidConfig(format!(
                "retain_fraction must be in [0, 1], got {}",
                self.retain_fraction
            )));
        }
        Ok(())
    }
}

/// Published configurations from the video models this policy was tuned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    OpenSoraFast,
    OpenSoraSlow,
    WanFast,
    WanSlow,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::OpenSoraFast,
        Preset::OpenSoraSlow,
        Preset::WanFast,
        Preset::WanSlow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::OpenSoraFast => "open-sora-fast",
            Preset::OpenSoraSlow => "open-sora-slow",
            Preset::WanFast => "wan-fast",
            Preset::WanSlow => "wan-slow",
        }
    }

    pub fn config(self) -> CacheConfig {
        let (delta, max_skip) = match self {
            Preset::OpenSoraFast => (0.12, 3),
            Preset::OpenSoraSlow => (0.06, 1),
            Preset::WanFast => (0.12, 4),
            Preset::WanSlow => (0.12, 2),
        };
        CacheConfig {
            delta,
            max_skip,
            retain_fraction: 0.2,
            pinned_steps: BTreeSet::new(),
            error_model: ErrorModel::Multiplicative,
        }
    }
}

impl FromStr for Preset {
    type Err = CacheError;

    fn from_str(s: &str) -> Result<Self, CacheError> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
                CacheError::InvalidConfig(format!(
                    "unknown preset {s:?}, expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

/// What to do at one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Compute,
    Skip,
}

/// Mutable part of the policy: where the cache came from and how much
/// estimated error has piled up since.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CacheState {
    last_computed: Option<usize>,
    accumulated_error: f64,
    cached_residual: Option<Vec<f32>>,
    run_length: usize,
    last_visited: Option<usize>,
    awaiting_residual: Option<usize>,
}

impl CacheState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Step whose residual the cache holds (or will hold once supplied).
    pub fn last_computed(&self) -> Option<usize> {
        self.last_computed
    }

    /// Estimated error accumulated since the last computed step.
    pub fn accumulated_error(&self) -> f64 {
        self.accumulated_error
    }

    pub fn cached_residual(&self) -> Option<&[f32]> {
        self.cached_residual.as_deref()
    }

    /// Number of consecutive skips since the last computed step.
    pub fn run_length(&self) -> usize {
        self.run_length
    }
}

/// Warmup length: the first `floor(retain_fraction * num_steps)` steps are
/// always computed.
pub fn retained_prefix_length(retain_fraction: f64, num_steps: usize) -> usize {
    assert!(
        (0.0..=1.0).contains(&retain_fraction),
        "retain_fraction must be in [0, 1], got {retain_fraction}"
    );
    (retain_fraction * num_steps as f64).floor() as usize
}

/// Estimated output error of reusing the residual from `t_hat` at step `t`.
pub fn skip_error(
    curve: &MagnitudeCurve,
    t_hat: usize,
    t: usize,
    model: ErrorModel,
) -> Result<f64, CacheError> {
    if t_hat >= t || t >= curve.num_steps() {
        return Err(CacheError::IndexOutOfRange {
            t_hat,
            t,
            num_steps: curve.num_steps(),
        });
    }
    Ok(match model {
        ErrorModel::Multiplicative => (1.0 - product_ratio(curve.gamma(), t_hat, t)).abs(),
        ErrorModel::Naive => (1.0 - curve.gamma()[t]).abs(),
    })
}

/// Decides one step and returns the advanced state.
///
/// The step is computed when it falls in the warmup prefix, is pinned by
/// either the curve or the config, the cache is empty, or taking the skip
/// would either push the accumulated estimate past `delta` or stretch the
/// run past `max_skip`. Otherwise it is skipped and the candidate estimate
/// is committed. A `Compute` decision drops the now stale cached residual;
/// the caller owes the fresh one via [`on_residual`].
pub fn decide(
    state: &CacheState,
    config: &CacheConfig,
    curve: &MagnitudeCurve,
    t: usize,
) -> Result<(Decision, CacheState), CacheError> {
    config.validate()?;
    if t >= curve.num_steps() {
        return Err(CacheError::StepOutOfRange {
            t,
            num_steps: curve.num_steps(),
        });
    }
    if let Some(last) = state.last_visited {
        if t <= last {
            return Err(CacheError::NonMonotonicStep { last, t });
        }
    }

    let mut next = state.clone();
    next.last_visited = Some(t);

    let forced = t < retained_prefix_length(config.retain_fraction, curve.num_steps())
        || curve.pinned_steps().contains(&t)
        || config.pinned_steps.contains(&t)
        || state.cached_residual.is_none();

    if !forced {
        let t_hat = state.last_computed.ok_or(CacheError::ProtocolViolation(
            "cached residual without a computed step",
        ))?;
        let eps = skip_error(curve, t_hat, t, config.error_model)?;
        let candidate = state.accumulated_error + eps;
        if candidate <= config.delta && t - t_hat <= config.max_skip {
            next.accumulated_error = candidate;
            next.run_length = t - t_hat;
            return Ok((Decision::Skip, next));
        }
    }

    next.last_computed = Some(t);
    next.accumulated_error = 0.0;
    next.run_length = 0;
    next.cached_residual = None;
    next.awaiting_residual = Some(t);
    Ok((Decision::Compute, next))
}

/// Stores the residual produced by the compute decision at step `t`.
pub fn on_residual(
    state: &CacheState,
    t: usize,
    residual: Vec<f32>,
) -> Result<CacheState, CacheError> {
    if state.awaiting_residual != Some(t) {
        return Err(CacheError::ProtocolViolation(
            "residual supplied without a matching compute decision",
        ));
    }
    let mut next = state.clone();
    next.cached_residual = Some(residual);
    next.awaiting_residual = None;
    Ok(next)
}

/// Stateful wrapper that walks steps in order against one curve and config.
pub struct CacheController<'c> {
    curve: &'c MagnitudeCurve,
    config: CacheConfig,
    state: CacheState,
}

impl<'c> CacheController<'c> {
    pub fn new(curve: &'c MagnitudeCurve, config: CacheConfig) -> Result<Self, CacheError> {
        config.validate()?;
        Ok(Self {
            curve,
            config,
            state: CacheState::new(),
        })
    }

    pub fn decide(&mut self, t: usize) -> Result<Decision, CacheError> {
        let (decision, next) = decide(&self.state, &self.config, self.curve, t)?;
        self.state = next;
        Ok(decision)
    }

    pub fn on_residual(&mut self, t: usize, residual: Vec<f32>) -> Result<(), CacheError> {
        self.state = on_residual(&self.state, t, residual)?;
        Ok(())
    }

    pub fn cached_residual(&self) -> Option<&[f32]> {
        self.state.cached_residual()
    }

    pub fn state(&self) -> &CacheState {
        &self.state
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }
}

/// A fully materialized plan for one run.
///
/// `decisions[t]` is true where the model is called. `estimated_error[t]`
/// is the accumulated estimate after deciding step `t`, zero at computed
/// steps.
#[derive(Debug, Clone, PartialEq)]
pub struct SkipSchedule {
    pub decisions: Vec<bool>,
    pub estimated_error: Vec<f64>,
    pub computed_count: usize,
    pub model_call_speedup: f64,
    pub config: CacheConfig,
}

impl SkipSchedule {
    pub fn num_steps(&self) -> usize {
        self.decisions.len()
    }

    /// Indices of the computed steps.
    pub fn computed_steps(&self) -> Vec<usize> {
        self.decisions
            .iter()
            .enumerate()
            .filter_map(|(t, &c)| c.then_some(t))
            .collect()
    }
}

/// Runs the policy offline over every step of the curve.
///
/// Decisions never look at residual values, only at the curve, so a plan
/// derived here matches what an online controller does step by step.
pub fn derive_schedule(
    curve: &MagnitudeCurve,
    config: &CacheConfig,
) -> Result<SkipSchedule, CacheError> {
    config.validate()?;
    let mut state = CacheState::new();
    let mut decisions = Vec::with_capacity(curve.num_steps());
    let mut estimated_error = Vec::with_capacity(curve.num_steps());
    for t in 0..curve.num_steps() {
        let (decision, next) = decide(&state, config, curve, t)?;
        state = next;
        match decision {
            Decision::Compute => {
                state = on_residual(&state, t, Vec::new())?;
                decisions.push(true);
                estimated_error.push(0.0);
            }
            Decision::Skip => {
                decisions.push(false);
                estimated_error.push(state.accumulated_error());
            }
        }
    }
    let computed_count = decisions.iter().filter(|&&c| c).count();
    let model_call_speedup = curve.num_steps() as f64 / computed_count as f64;
    Ok(SkipSchedule {
        decisions,
        estimated_error,
        computed_count,
        model_call_speedup,
        config: config.clone(),
    })
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum DeltaDoc {
    Value(f64),
    Keyword(String),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDoc {
    delta: DeltaDoc,
    max_skip: u64,
    retain_fraction: f64,
    pinned_steps: Vec<u64>,
    error_model: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleDoc {
    decisions: Vec<u8>,
    estimated_error: Vec<f64>,
    computed_count: u64,
    model_call_speedup: f64,
    config: ConfigDoc,
}

/// Writes a schedule as pretty-printed JSON. An unbounded tolerance is
/// spelled `"unbounded"` since JSON has no infinity literal.
pub fn save_schedule<W: Write>(schedule: &SkipSchedule, mut sink: W) -> Result<(), CacheError> {
    let config = &schedule.config;
    let doc = ScheduleDoc {
        decisions: schedule.decisions.iter().map(|&c| c as u8).collect(),
        estimated_error: schedule.estimated_error.clone(),
        computed_count: schedule.computed_count as u64,
        model_call_speedup: schedule.model_call_speedup,
        config: ConfigDoc {
            delta: if config.delta.is_infinite() {
                DeltaDoc::Keyword("unbounded".into())
            } else {
                DeltaDoc::Value(config.delta)
            },
            max_skip: config.max_skip as u64,
            retain_fraction: config.retain_fraction,
            pinned_steps: config.pinned_steps.iter().map(|&s| s as u64).collect(),
            error_model: config.error_model.as_str().into(),
        },
    };
    serde_json::to_writer_pretty(&mut sink, &doc)
        .map_err(|e| CacheError::MalformedSchedule(e.to_string()))?;
    sink.write_all(b"\n")?;
    Ok(())
}

/// Parses a schedule JSON document and checks its internal consistency.
pub fn load_schedule<R: Read>(mut source: R) -> Result<SkipSchedule, CacheError> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let doc: ScheduleDoc =
        serde_json::from_str(&text).map_err(|e| CacheError::MalformedSchedule(e.to_string()))?;

    let delta = match doc.config.delta {
        DeltaDoc::Value(v) => v,
        DeltaDoc::Keyword(ref k) if k == "unbounded" => f64::INFINITY,
        DeltaDoc::Keyword(k) => {
            return Err(CacheError::MalformedSchedule(format!(
                "delta must be a number or \"unbounded\", got {k:?}"
            )))
        }
    };
    let config = CacheConfig {
        delta,
        max_skip: doc.config.max_skip as usize,
        retain_fraction: doc.config.retain_fraction,
        pinned_steps: doc
            .config
            .pinned_steps
            .iter()
            .map(|&s| s as usize)
            .collect(),
        error_model: doc.config.error_model.parse()?,
    };
    config.validate()?;

    if doc.decisions.is_empty() {
        return Err(CacheError::MalformedSchedule(
            "decisions must not be empty".into(),
        ));
    }
    if let Some(&bad) = doc.decisions.iter().find(|&&d| d > 1) {
        return Err(CacheError::MalformedSchedule(format!(
            "decisions entries must be 0 or 1, got {bad}"
        )));
    }
    if doc.decisions[0] != 1 {
        return Err(CacheError::MalformedSchedule(
            "step 0 must be computed".into(),
        ));
    }
    if doc.estimated_error.len() != doc.decisions.len() {
        return Err(CacheError::MalformedSchedule(format!(
            "estimated_error has {} entries for {} decisions",
            doc.estimated_error.len(),
            doc.decisions.len()
        )));
    }
    for (t, (&d, &e)) in doc.decisions.iter().zip(&doc.estimated_error).enumerate() {
        if !e.is_finite() || e < 0.0 {
            return Err(CacheError::MalformedSchedule(format!(
                "estimated_error[{t}] must be finite and >= 0, got {e}"
            )));
        }
        if d == 1 && e != 0.0 {
            return Err(CacheError::MalformedSchedule(format!(
                "estimated_error[{t}] must be 0 at a computed step, got {e}"
            )));
        }
    }
    let ones = doc.decisions.iter().filter(|&&d| d == 1).count();
    if ones as u64 != doc.computed_count {
        return Err(CacheError::MalformedSchedule(format!(
            "computed_count is {} but decisions contain {} ones",
            doc.computed_count, ones
        )));
    }
    let expected_speedup = doc.decisions.len() as f64 / ones as f64;
    if (doc.model_call_speedup - expected_speedup).abs() > 1e-9 * expected_speedup {
        return Err(CacheError::MalformedSchedule(format!(
            "model_call_speedup is {} but steps/calls gives {}",
            doc.model_call_speedup, expected_speedup
        )));
    }

    Ok(SkipSchedule {
        decisions: doc.decisions.iter().map(|&d| d == 1).collect(),
        estimated_error: doc.estimated_error,
        computed_count: ones,
        model_call_speedup: doc.model_call_speedup,
        config,
    })
}
