//! Per-model magnitude curves: calibration from a trace and JSON persistence.
//!
//! A curve is the one artifact that travels between an offline recording run
//! and later scheduling runs, so it is validated on every load and written
//! deterministically (stable key order, sorted pinned steps).

use std::collections::BTreeSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{magnitude_ratio, StatsError};
use crate::trace::ResidualTrace;

#[derive(Debug, Error)]
pub enum CurveError {
    #[error("malformed curve: {0}")]
    Malformed(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

/// Calibrated magnitude profile of one model at one step count.
///
/// `gamma[t]` is the expected residual magnitude ratio between steps `t-1`
/// and `t`; `gamma[0]` is fixed at 1. Pinned steps are steps the calibration
/// marks as never skippable, over and above whatever a runtime config pins.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeCurve {
    model_id: String,
    gamma: Vec<f64>,
    pinned_steps: BTreeSet<usize>,
    source_note: String,
}

impl MagnitudeCurve {
    pub fn new(
        model_id: impl Into<String>,
        gamma: Vec<f64>,
        pinned_steps: BTreeSet<usize>,
        source_note: impl Into<String>,
    ) -> Result<Self, CurveError> {
        if gamma.is_empty() {
            return Err(CurveError::Malformed("gamma must not be empty".into()));
        }
        if gamma[0] != 1.0 {
            return Err(CurveError::Malformed(format!(
                "gamma[0] must be 1.0, got {}",
                gamma[0]
            )));
        }
        for (t, &g) in gamma.iter().enumerate() {
            if !g.is_finite() || g <= 0.0 {
                return Err(CurveError::Malformed(format!(
                    "gamma[{t}] must be positive and finite, got {g}"
                )));
            }
        }
        if let Some(&bad) = pinned_steps.iter().find(|&&s| s >= gamma.len()) {
            return Err(CurveError::Malformed(format!(
                "pinned step {bad} out of range for {} steps",
                gamma.len()
            )));
        }
        Ok(Self {
            model_id: model_id.into(),
            gamma,
            pinned_steps,
            source_note: source_note.into(),
        })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn num_steps(&self) -> usize {
        self.gamma.len()
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn pinned_steps(&self) -> &BTreeSet<usize> {
        &self.pinned_steps
    }

    pub fn source_note(&self) -> &str {
        &self.source_note
    }
}

/// Builds a curve by measuring magnitude ratios on a recorded trace.
///
/// One representative trace is enough in practice; averaging across several
/// runs is the caller's concern and can be folded into the note.
pub fn calibrate_from_trace(
    trace: &ResidualTrace,
    pinned_steps: BTreeSet<usize>,
    source_note: impl Into<String>,
) -> Result<MagnitudeCurve, CurveError> {
    let gamma = magnitude_ratio(trace)?;
    MagnitudeCurve::new(trace.model_id(), gamma, pinned_steps, source_note)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CurveDoc {
    model_id: String,
    num_steps: u64,
    gamma: Vec<f64>,
    pinned_steps: Vec<u64>,
    source_note: String,
}

/// Writes a curve as pretty-printed JSON with a stable field order.
pub fn save_curve<W: Write>(curve: &MagnitudeCurve, mut sink: W) -> Result<(), CurveError> {
    let doc = CurveDoc {
        model_id: curve.model_id.clone(),
        num_steps: curve.gamma.len() as u64,
        gamma: curve.gamma.clone(),
        pinned_steps: curve.pinned_steps.iter().map(|&s| s as u64).collect(),
        source_note: curve.source_note.clone(),
    };
    serde_json::to_writer_pretty(&mut sink, &doc)
        .map_err(|e| CurveError::Malformed(e.to_string()))?;
    sink.write_all(b"\n")?;
    Ok(())
}

/// Parses and fully validates a curve JSON document.
pub fn load_curve<R: Read>(mut source: R) -> Result<MagnitudeCurve, CurveError> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let doc: CurveDoc =
        serde_json::from_str(&text).map_err(|e| CurveError::Malformed(e.to_string()))?;
    if doc.num_steps as usize != doc.gamma.len() {
        return Err(CurveError::Malformed(format!(
            "num_steps is {} but gamma has {} entries",
            doc.num_steps,
            doc.gamma.len()
        )));
    }
    let pinned: BTreeSet<usize> = doc.pinned_steps.iter().map(|&s| s as usize).collect();
    MagnitudeCurve::new(doc.model_id, doc.gamma, pinned, doc.source_note)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_curve() -> MagnitudeCurve {
        MagnitudeCurve::new(
            "demo",
            vec![1.0, 0.97, 1.02, 0.97, 0.9],
            BTreeSet::from([0, 4]),
            "hand built",
        )
        .unwrap()
    }

    fn save_to_string(curve: &MagnitudeCurve) -> String {
        let mut buf = Vec::new();
        save_curve(curve, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn calibration_measures_a_scaled_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base: Vec<f32> = (0..6).map(|_| rng.random_range(0.5f32..1.0)).collect();
        let mut data = Vec::new();
        for t in 0..4 {
            let s = 0.5f32.powi(t);
            data.extend(base.iter().map(|&b| s * b));
        }
        let trace = ResidualTrace::from_vec("half", 4, 3, 2, data).unwrap();
        let curve = calibrate_from_trace(&trace, BTreeSet::from([1]), "unit test").unwrap();
        assert_eq!(curve.model_id(), "half");
        assert_eq!(curve.num_steps(), 4);
        assert_eq!(curve.gamma()[0], 1.0);
        for &g in &curve.gamma()[1..] {
            assert_eq!(g, 0.5);
        }
        assert!(curve.pinned_steps().contains(&1));
        assert_eq!(curve.source_note(), "unit test");
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let curve = sample_curve();
        let first = save_to_string(&curve);
        let loaded = load_curve(first.as_bytes()).unwrap();
        assert_eq!(loaded, curve);
        let second = save_to_string(&loaded);
        assert_eq!(first, second);
    }

    #[test]
    fn json_has_the_expected_keys_in_order() {
        let text = save_to_string(&sample_curve());
        let model = text.find("\"model_id\"").unwrap();
        let steps = text.find("\"num_steps\"").unwrap();
        let gamma = text.find("\"gamma\"").unwrap();
        let pinned = text.find("\"pinned_steps\"").unwrap();
        let note = text.find("\"source_note\"").unwrap();
        assert!(model < steps && steps < gamma && gamma < pinned && pinned < note);
    }

    #[test]
    fn load_rejects_gamma_head_not_one() {
        let text = save_to_string(&sample_curve()).replace("1.0,", "0.5,");
        assert!(matches!(
            load_curve(text.as_bytes()),
            Err(CurveError::Malformed(_))
        ));
    }

    #[test]
    fn load_rejects_length_mismatch() {
        let text = save_to_string(&sample_curve()).replace("\"num_steps\": 5", "\"num_steps\": 4");
        assert!(matches!(
            load_curve(text.as_bytes()),
            Err(CurveError::Malformed(_))
        ));
    }

    #[test]
    fn load_rejects_unknown_and_missing_keys() {
        let full = save_to_string(&sample_curve());
        let extra = full.replace("\"model_id\"", "\"extra\": 1,\n  \"model_id\"");
        assert!(matches!(
            load_curve(extra.as_bytes()),
            Err(CurveError::Malformed(_))
        ));
        let missing =
            "{\"model_id\": \"x\", \"num_steps\": 1, \"gamma\": [1.0], \"pinned_steps\": []}";
        assert!(matches!(
            load_curve(missing.as_bytes()),
            Err(CurveError::Malformed(_))
        ));
    }

    #[test]
    fn load_rejects_out_of_range_pin() {
        let text = save_to_string(&sample_curve()).replace("4\n", "9\n");
        assert!(matches!(
            load_curve(text.as_bytes()),
            Err(CurveError::Malformed(_))
        ));
    }

    #[test]
    fn new_rejects_non_positive_gamma() {
        let err = MagnitudeCurve::new("m", vec![1.0, 0.0], BTreeSet::new(), "").unwrap_err();
        assert!(matches!(err, CurveError::Malformed(_)));
        let err = MagnitudeCurve::new("m", vec![1.0, -0.5], BTreeSet::new(), "").unwrap_err();
        assert!(matches!(err, CurveError::Malformed(_)));
    }

    #[test]
    fn new_rejects_empty_gamma() {
        assert!(matches!(
            MagnitudeCurve::new("m", vec![], BTreeSet::new(), ""),
            Err(CurveError::Malformed(_))
        ));
    }

    #[test]
    fn gamma_values_round_trip_exactly() {
        let gamma = vec![
            1.0,
            0.1 + 0.2,
            std::f64::consts::PI / 3.0,
            0.9999999999999999,
        ];
        let curve = MagnitudeCurve::new("rt", gamma.clone(), BTreeSet::new(), "").unwrap();
        let loaded = load_curve(save_to_string(&curve).as_bytes()).unwrap();
        for (a, b) in gamma.iter().zip(loaded.gamma()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
