//! Image quality metrics and the run report that carries them.
//!
//! SSIM follows the standard single-scale recipe: an 11x11 Gaussian window
//! with sigma 1.5, stability constants from a unit dynamic range, and the
//! mean taken over valid window positions only (no padding).

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::SkipSchedule;
use crate::image::GrayImage;

/// Reported PSNR for a perfect match, standing in for infinity.
pub const PSNR_CAP_DB: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 1e-4; // (0.01 * peak)^2 at peak = 1
const SSIM_C2: f64 = 9e-4; // (0.03 * peak)^2 at peak = 1

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("image sizes differ: {a_width}x{a_height} vs {b_width}x{b_height}")]
    SizeMismatch {
        a_width: usize,
        a_height: usize,
        b_width: usize,
        b_height: usize,
    },
    #[error("image {width}x{height} is smaller than the {window}x{window} window")]
    ImageTooSmall {
        width: usize,
        height: usize,
        window: usize,
    },
    #[error("peak must be positive and finite, got {0}")]
    InvalidPeak(f64),
    #[error("malformed report: {0}")]
    Malformed(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

fn check_same_size(a: &GrayImage, b: &GrayImage) -> Result<(), MetricsError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(MetricsError::SizeMismatch {
            a_width: a.width(),
            a_height: a.height(),
            b_width: b.width(),
            b_height: b.height(),
        });
    }
    Ok(())
}

/// Mean squared error between two same-sized images.
pub fn mse(a: &GrayImage, b: &GrayImage) -> Result<f64, MetricsError> {
    check_same_size(a, b)?;
    let mut sum = 0.0f64;
    for (x, y) in a.pixels().iter().zip(b.pixels()) {
        let d = x - y;
        sum += d * d;
    }
    Ok(sum / a.pixels().len() as f64)
}

/// Peak signal-to-noise ratio in dB.
///
/// Identical images have infinite PSNR; that case is reported as
/// [`PSNR_CAP_DB`]. Any nonzero error returns the plain formula value,
/// even when it lands above the cap.
pub fn psnr(a: &GrayImage, b: &GrayImage, peak: f64) -> Result<f64, MetricsError> {
    if !peak.is_finite() || peak <= 0.0 {
        return Err(MetricsError::InvalidPeak(peak));
    }
    let err = mse(a, b)?;
    if err == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (peak * peak / err).log10())
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut kernel = [0.0f64; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, k) in kernel.iter_mut().enumerate() {
        let d = i as f64 - half;
        *k = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *k;
    }
    for k in &mut kernel {
        *k /= sum;
    }
    kernel
}

/// Valid-region separable convolution with a symmetric 1D kernel.
fn filter_valid(src: &[f64], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    let span = kernel.len();
    let out_w = width - span + 1;
    // Horizontal pass.
    let mut rows = vec![0.0f64; out_w * height];
    for y in 0..height {
        for x in 0..out_w {
            let mut acc = 0.0;
            for (i, &k) in kernel.iter().enumerate() {
                acc += k * src[y * width + x + i];
            }
            rows[y * out_w + x] = acc;
        }
    }
    // Vertical pass.
    let out_h = height - span + 1;
    let mut out = vec![0.0f64; out_w * out_h];
    for y in 0..out_h {
        for x in 0..out_w {
            let mut acc = 0.0;
            for (i, &k) in kernel.iter().enumerate() {
                acc += k * rows[(y + i) * out_w + x];
            }
            out[y * out_w + x] = acc;
        }
    }
    out
}

/// Mean structural similarity between two same-sized images.
///
/// Requires both dimensions to be at least the window size. Returns a
/// value in `[-1, 1]`; 1 means identical.
pub fn ssim(a: &GrayImage, b: &GrayImage) -> Result<f64, MetricsError> {
    check_same_size(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricsError::ImageTooSmall {
            width: w,
            height: h,
            window: SSIM_WINDOW,
        });
    }
    let kernel = gaussian_kernel();
    let pa = a.pixels();
    let pb = b.pixels();
    let sq_a: Vec<f64> = pa.iter().map(|v| v * v).collect();
    let sq_b: Vec<f64> = pb.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = pa.iter().zip(pb).map(|(x, y)| x * y).collect();

    let mu_a = filter_valid(pa, w, h, &kernel);
    let mu_b = filter_valid(pb, w, h, &kernel);
    let e_aa = filter_valid(&sq_a, w, h, &kernel);
    let e_bb = filter_valid(&sq_b, w, h, &kernel);
    let e_ab = filter_valid(&ab, w, h, &kernel);

    let mut total = 0.0f64;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
        let den = (ma * ma + mb * mb + SSIM_C1) * (var_a + var_b + SSIM_C2);
        total += num / den;
    }
    Ok(total / mu_a.len() as f64)
}

/// Model-call speedup a schedule promises: total steps over computed steps.
pub fn speedup(schedule: &SkipSchedule) -> f64 {
    schedule.num_steps() as f64 / schedule.computed_count as f64
}

/// Quality summary of one cached run against its baseline.
///
/// `lpips` is reserved for runs scored with a learned perceptual metric;
/// this crate never fills it, but files that carry one stay readable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualityReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub mse: f64,
    pub computed_steps: usize,
    pub total_steps: usize,
    pub model_call_speedup: f64,
    pub lpips: Option<f64>,
}

impl QualityReport {
    fn validate(&self) -> Result<(), MetricsError> {
        if !self.psnr_db.is_finite() {
            return Err(MetricsError::Malformed(format!(
                "psnr_db must be finite, got {}",
                self.psnr_db
            )));
        }
        if !self.ssim.is_finite() || self.ssim.abs() > 1.0 + 1e-9 {
            return Err(MetricsError::Malformed(format!(
                "ssim must be in [-1, 1], got {}",
                self.ssim
            )));
        }
        if !self.mse.is_finite() || self.mse < 0.0 {
            return Err(MetricsError::Malformed(format!(
                "mse must be finite and >= 0, got {}",
                self.mse
            )));
        }
        if self.computed_steps == 0 || self.computed_steps > self.total_steps {
            return Err(MetricsError::Malformed(format!(
                "computed_steps {} out of range for {} total steps",
                self.computed_steps, self.total_steps
            )));
        }
        let expected = self.total_steps as f64 / self.computed_steps as f64;
        if (self.model_call_speedup - expected).abs() > 1e-9 * expected {
            return Err(MetricsError::Malformed(format!(
                "model_call_speedup is {} but steps/calls gives {}",
                self.model_call_speedup, expected
            )));
        }
        if let Some(l) = self.lpips {
            if !l.is_finite() || l < 0.0 {
                return Err(MetricsError::Malformed(format!(
                    "lpips must be finite and >= 0, got {l}"
                )));
            }
        }
        Ok(())
    }
}

pub fn save_report<W: Write>(report: &QualityReport, mut sink: W) -> Result<(), MetricsError> {
    report.validate()?;
    serde_json::to_writer_pretty(&mut sink, report)
        .map_err(|e| MetricsError::Malformed(e.to_string()))?;
    sink.write_all(b"\n")?;
    Ok(())
}

pub fn load_report<R: Read>(mut source: R) -> Result<QualityReport, MetricsError> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let report: QualityReport =
        serde_json::from_str(&text).map_err(|e| MetricsError::Malformed(e.to_string()))?;
    report.validate()?;
    Ok(report)
}
