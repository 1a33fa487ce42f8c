//! Exact flow-matching simulator used as the test bed for caching claims.
//!
//! The data distribution is a Gaussian mixture over images of soft bumps,
//! the velocity field is computed in closed form, and sampling is plain
//! Euler. No training, no network: the only approximations in the whole
//! pipeline are the integrator and whatever the caching policy skips.

mod gmm;
mod sampler;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::CacheError;
use crate::image::GrayImage;
use crate::trace::TraceError;

pub use gmm::{marginal_velocity, GmmSpec};
pub use sampler::{sample_baseline, sample_cached, ExecutionLog, SamplerConfig};

#[derive(Debug, Error)]
pub enum FlowSimError {
    #[error("invalid simulator spec: {0}")]
    InvalidSpec(String),
    #[error("curve covers {curve_steps} steps but the sampler runs {sampler_steps}")]
    CurveMismatch {
        curve_steps: usize,
        sampler_steps: usize,
    },
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

/// Complete description of a simulator run, loadable from JSON.
///
/// Every field has a default, so a spec file only needs the keys it wants
/// to override. `dim_side` is the image edge length; the state dimension
/// is its square.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSpec {
    pub dim_side: usize,
    pub num_components: usize,
    pub data_std: f64,
    pub num_steps: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            dim_side: 16,
            num_components: 8,
            data_std: 0.1,
            num_steps: 50,
            batch: 32,
            seed: 42,
        }
    }
}

impl SimSpec {
    /// Builds the mixture and sampler settings this spec describes.
    pub fn build(&self) -> Result<(GmmSpec, SamplerConfig), FlowSimError> {
        let gmm =
            GmmSpec::procedural(self.dim_side, self.num_components, self.data_std, self.seed)?;
        let config = SamplerConfig::new(self.num_steps, self.batch)?;
        Ok((gmm, config))
    }

    pub fn load<R: Read>(mut source: R) -> Result<Self, FlowSimError> {
        let mut text = String::new();
        source.read_to_string(&mut text)?;
        let spec: SimSpec =
            serde_json::from_str(&text).map_err(|e| FlowSimError::InvalidSpec(e.to_string()))?;
        spec.build()?;
        Ok(spec)
    }

    pub fn save<W: Write>(&self, mut sink: W) -> Result<(), FlowSimError> {
        serde_json::to_writer_pretty(&mut sink, self)
            .map_err(|e| FlowSimError::InvalidSpec(e.to_string()))?;
        sink.write_all(b"\n")?;
        Ok(())
    }
}

/// Global value range of a batch of samples, for consistent rendering.
pub fn batch_value_range(samples: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in samples {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

/// Maps one sample vector onto a square grayscale image.
///
/// Values are scaled linearly from `[lo, hi]` to `[0, 1]` and clamped, so
/// rendering the whole batch with one shared range keeps images
/// comparable. A degenerate range yields mid-gray.
pub fn render_image(sample: &[f64], side: usize, lo: f64, hi: f64) -> GrayImage {
    assert_eq!(sample.len(), side * side, "sample does not fill the grid");
    let pixels: Vec<f64> = if hi <= lo {
        vec![0.5; sample.len()]
    } else {
        sample
            .iter()
            .map(|&v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
            .collect()
    };
    GrayImage::new(side, side, pixels).expect("scaled pixels are always valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spec_builds() {
        let spec = SimSpec::default();
        let (gmm, config) = spec.build().unwrap();
        assert_eq!(gmm.dim(), 256);
        assert_eq!(gmm.num_components(), 8);
        assert_eq!(config.num_steps, 50);
        assert_eq!(config.batch, 32);
    }

    #[test]
    fn partial_spec_json_fills_defaults() {
        let spec = SimSpec::load("{\"num_steps\": 12, \"batch\": 2}".as_bytes()).unwrap();
        assert_eq!(spec.num_steps, 12);
        assert_eq!(spec.batch, 2);
        assert_eq!(spec.dim_side, 16);
        assert_eq!(spec.seed, 42);
    }

    #[test]
    fn unknown_spec_keys_are_rejected() {
        assert!(SimSpec::load("{\"sigma\": 1.0}".as_bytes()).is_err());
    }

    #[test]
    fn nonsense_spec_values_are_rejected_on_load() {
        assert!(SimSpec::load("{\"dim_side\": 0}".as_bytes()).is_err());
        assert!(SimSpec::load("{\"num_steps\": 1}".as_bytes()).is_err());
        assert!(SimSpec::load("{\"data_std\": 0.0}".as_bytes()).is_err());
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = SimSpec {
            dim_side: 8,
            num_components: 3,
            data_std: 0.25,
            num_steps: 20,
            batch: 4,
            seed: 7,
        };
        let mut buf = Vec::new();
        spec.save(&mut buf).unwrap();
        let back = SimSpec::load(buf.as_slice()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn rendering_scales_and_clamps() {
        let sample = [0.0, 1.0, 2.0, 4.0];
        let img = render_image(&sample, 2, 1.0, 3.0);
        assert_eq!(img.pixel(0, 0), 0.0); // below lo, clamped
        assert_eq!(img.pixel(1, 0), 0.0);
        assert_eq!(img.pixel(0, 1), 0.5);
        assert_eq!(img.pixel(1, 1), 1.0); // above hi, clamped
    }

    #[test]
    fn degenerate_range_renders_mid_gray() {
        let img = render_image(&[3.0, 3.0, 3.0, 3.0], 2, 3.0, 3.0);
        assert!(img.pixels().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn value_range_covers_the_batch() {
        let (lo, hi) = batch_value_range(&[0.5, -1.0, 2.0, 0.0]);
        assert_eq!(lo, -1.0);
        assert_eq!(hi, 2.0);
    }
}
