//! Composite similarity score and the sigmoid-calibrated authenticity index.
//!
//! The score is a plain linear combination of the raw channel values,
//! `s = a1 * psnr + a2 * ssim + a3 * (1 - lpips) + a4 * clip`, and the index
//! is `A = exp(-sigma s) / (1 + exp(-sigma s)) = 1 / (1 + exp(sigma s))`.
//! Channels are not normalized: the weight magnitudes are only meaningful on
//! the raw scales (PSNR in dB, the rest unit-scale).
//!
//! ```
//! use authindex::index::{a_index, composite_score, WeightVector};
//! use authindex::metrics::MetricVector;
//!
//! let w = WeightVector::published();
//! let s = composite_score(&MetricVector::new(30.0, 0.90, 0.10, 0.95), &w);
//! assert!((s - 4.7095).abs() < 1e-4);
//! assert!((a_index(s, &w) - 0.014223).abs() < 1e-6);
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{load_image, ImageBuffer, ImageError};
use crate::inverters::{invert_checked, Inverter, InverterError, PairRecord};
use crate::metrics::{metric_vector, MetricError, MetricVector, Providers};

/// Search bounds for every weight.
pub const WEIGHT_BOUND: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeightError {
    #[error("weight {name} = {value} lies outside [-10, 10]")]
    OutOfBounds { name: &'static str, value: f64 },
    #[error("sigmoid scale must be positive and finite (got {0})")]
    InvalidSigma(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub alpha4: f64,
    pub sigma: f64,
}

impl WeightVector {
    pub fn new(alphas: [f64; 4], sigma: f64) -> Result<Self, WeightError> {
        let w = WeightVector { alpha1: alphas[0], alpha2: alphas[1], alpha3: alphas[2], alpha4: alphas[3], sigma };
        w.validate()?;
        Ok(w)
    }

    /// The published calibration: PSNR -0.0181, SSIM 1.380, (1-LPIPS) -4.058,
    /// CLIP 8.066, sigma 0.9.
    pub const fn published() -> Self {
        WeightVector { alpha1: -0.0181, alpha2: 1.380, alpha3: -4.058, alpha4: 8.066, sigma: 0.9 }
    }

    pub fn alphas(&self) -> [f64; 4] {
        [self.alpha1, self.alpha2, self.alpha3, self.alpha4]
    }

    pub fn validate(&self) -> Result<(), WeightError> {
        const NAMES: [&str; 4] = ["alpha1", "alpha2", "alpha3", "alpha4"];
        for (name, value) in NAMES.into_iter().zip(self.alphas()) {
            if !(-WEIGHT_BOUND..=WEIGHT_BOUND).contains(&value) {
                return Err(WeightError::OutOfBounds { name, value });
            }
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(WeightError::InvalidSigma(self.sigma));
        }
        Ok(())
    }

    /// Same sigma, all alphas negated; maps every index value `A` to `1 - A`.
    pub fn negated(&self) -> Self {
        WeightVector {
            alpha1: -self.alpha1,
            alpha2: -self.alpha2,
            alpha3: -self.alpha3,
            alpha4: -self.alpha4,
            sigma: self.sigma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Label::Real => "real",
            Label::Fake => "fake",
        })
    }
}

/// One scored record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSample {
    pub record_id: String,
    pub label: Label,
    pub composite: f64,
    pub a_index: f64,
}

impl ScoreSample {
    pub fn from_metrics(record_id: impl Into<String>, label: Label, m: &MetricVector, w: &WeightVector) -> Self {
        let composite = composite_score(m, w);
        ScoreSample { record_id: record_id.into(), label, composite, a_index: a_index(composite, w) }
    }
}

pub fn composite_score(m: &MetricVector, w: &WeightVector) -> f64 {
    w.alpha1 * m.psnr + w.alpha2 * m.ssim + w.alpha3 * (1.0 - m.lpips) + w.alpha4 * m.clip
}

/// `1 / (1 + exp(sigma s))`, evaluated without overflow for any finite `s`.
pub fn a_index(s: f64, w: &WeightVector) -> f64 {
    logistic_neg(w.sigma * s)
}

/// `1 / (1 + exp(t))`.
fn logistic_neg(t: f64) -> f64 {
    if t >= 0.0 {
        let e = (-t).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + t.exp())
    }
}

/// `dA/ds = -sigma A (1 - A)`.
pub fn a_index_derivative(s: f64, w: &WeightVector) -> f64 {
    let a = a_index(s, w);
    -w.sigma * a * (1.0 - a)
}

/// `dA/dm` for each channel, in `(psnr, ssim, lpips, clip)` order.
pub fn a_index_channel_gradient(m: &MetricVector, w: &WeightVector) -> [f64; 4] {
    let d = a_index_derivative(composite_score(m, w), w);
    [d * w.alpha1, d * w.alpha2, -d * w.alpha3, d * w.alpha4]
}

#[derive(Debug, Error)]
pub enum RecordErrorKind {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Inverter(#[from] InverterError),
    #[error("no inverted image in the manifest and no inverter configured")]
    NoInversion,
}

/// A failure while scoring one record.
#[derive(Debug, Error)]
#[error("record {record_id}: {kind}")]
pub struct RecordError {
    pub record_id: String,
    #[source]
    pub kind: RecordErrorKind,
}

impl RecordError {
    pub fn new(record_id: impl Into<String>, kind: impl Into<RecordErrorKind>) -> Self {
        RecordError { record_id: record_id.into(), kind: kind.into() }
    }
}

/// Loads the original and obtains its inversion: the manifest's file when
/// present, otherwise `inverter(x)`.
pub fn resolve_pair(rec: &PairRecord, inverter: Option<&dyn Inverter>) -> Result<(ImageBuffer, ImageBuffer), RecordError> {
    let err = |k: RecordErrorKind| RecordError::new(rec.record_id.clone(), k);
    let x = load_image(&rec.original()).map_err(|e| err(e.into()))?;
    let x_inv = match (rec.inverted(), inverter) {
        (Some(path), _) => load_image(&path).map_err(|e| err(e.into()))?,
        (None, Some(inv)) => invert_checked(inv, &x).map_err(|e| err(e.into()))?,
        (None, None) => return Err(err(RecordErrorKind::NoInversion)),
    };
    Ok((x, x_inv))
}

/// All four channels for one record. A fully precomputed record never touches
/// the filesystem.
pub fn record_metrics(
    rec: &PairRecord,
    providers: &Providers,
    inverter: Option<&dyn Inverter>,
) -> Result<MetricVector, RecordError> {
    if let Some(full) = rec.precomputed.as_ref().and_then(|p| p.complete()) {
        return Ok(full);
    }
    let (x, x_inv) = resolve_pair(rec, inverter)?;
    metric_vector(&x, &x_inv, providers, rec.precomputed.as_ref())
        .map_err(|e| RecordError::new(rec.record_id.clone(), e))
}

pub fn score_record(
    rec: &PairRecord,
    w: &WeightVector,
    providers: &Providers,
    inverter: Option<&dyn Inverter>,
) -> Result<ScoreSample, RecordError> {
    let m = record_metrics(rec, providers, inverter)?;
    Ok(ScoreSample::from_metrics(rec.record_id.clone(), rec.label, &m, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const PUBLISHED: WeightVector = WeightVector::published();

    #[test]
    fn composite_examples() {
        let s = composite_score(&MetricVector::new(30.0, 0.90, 0.10, 0.95), &PUBLISHED);
        // -0.543 + 1.242 - 3.6522 + 7.6627
        assert!((s - 4.7095).abs() < 1e-9);
        let zero = WeightVector { alpha1: 0.0, alpha2: 0.0, alpha3: 0.0, alpha4: 0.0, sigma: 1.0 };
        assert_eq!(composite_score(&MetricVector::new(12.0, 0.3, 0.7, -0.2), &zero), 0.0);
        let ident = composite_score(&MetricVector::identical(), &PUBLISHED);
        assert!((ident - 3.578).abs() < 1e-9);
    }

    #[test]
    fn index_examples() {
        assert_eq!(a_index(0.0, &PUBLISHED), 0.5);
        let s = 4.7095;
        let expected = 1.0 / (1.0 + (0.9f64 * s).exp());
        assert!((a_index(s, &PUBLISHED) - expected).abs() < 1e-15);
        assert!((a_index(s, &PUBLISHED) - 0.01424).abs() < 1e-4);
        assert!((a_index(-s, &PUBLISHED) - 0.98576).abs() < 1e-4);
    }

    #[test]
    fn extreme_scores_do_not_overflow() {
        let w = WeightVector { sigma: 1.0, ..PUBLISHED };
        for s in [-745.0, -700.0, 700.0, 745.0, f64::MAX / 2.0, -f64::MAX / 2.0] {
            let a = a_index(s, &w);
            assert!(a.is_finite() && (0.0..=1.0).contains(&a), "s={s} a={a}");
        }
        assert!(a_index(-700.0, &w) > 0.999);
        assert!(a_index(700.0, &w) < 1e-300);
    }

    #[test]
    fn weight_validation() {
        assert!(WeightVector::new([0.0, 0.0, 0.0, 10.5], 0.9).is_err());
        assert!(WeightVector::new([0.0; 4], 0.0).is_err());
        assert!(PUBLISHED.validate().is_ok());
    }

    #[test]
    fn negation_mirrors_the_index() {
        let m = MetricVector::new(24.0, 0.7, 0.3, 0.8);
        let a = a_index(composite_score(&m, &PUBLISHED), &PUBLISHED);
        let n = PUBLISHED.negated();
        let b = a_index(composite_score(&m, &n), &n);
        assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn higher_clip_lowers_the_index() {
        let m = MetricVector::new(25.0, 0.8, 0.2, 0.7);
        let bumped = MetricVector { clip: 0.75, ..m };
        let a = a_index(composite_score(&m, &PUBLISHED), &PUBLISHED);
        let b = a_index(composite_score(&bumped, &PUBLISHED), &PUBLISHED);
        assert!(b < a);
        assert!(a_index_channel_gradient(&m, &PUBLISHED)[3] < 0.0);
    }

    #[test]
    fn identity_record_scores_the_identity_vector() {
        let dir = tempfile::tempdir().unwrap();
        let img = crate::synth::natural_image(16, 16, 3, 8);
        crate::image::save_image(&img, &dir.path().join("a.png")).unwrap();
        let mut rec = PairRecord::new("a", "a.png", Label::Fake, "g");
        rec.inverted_path = Some("a.png".into());
        rec.base_dir = dir.path().to_path_buf();
        let s = score_record(&rec, &PUBLISHED, &Providers::reference(), None).unwrap();
        let expected = a_index(composite_score(&MetricVector::identical(), &PUBLISHED), &PUBLISHED);
        assert_eq!(s.a_index, expected);
        assert!((expected - 0.0384).abs() < 1e-4);
    }

    #[test]
    fn fully_precomputed_record_skips_files() {
        let mut rec = PairRecord::new("p", "does/not/exist.png", Label::Real, "g");
        rec.precomputed = Some(MetricVector::new(20.0, 0.5, 0.4, 0.7).into());
        let s = score_record(&rec, &PUBLISHED, &Providers::reference(), None).unwrap();
        assert!(s.a_index > 0.0 && s.a_index < 1.0);
        rec.precomputed.as_mut().unwrap().clip = None;
        let err = score_record(&rec, &PUBLISHED, &Providers::reference(), None).unwrap_err();
        assert_eq!(err.record_id, "p");
        assert!(matches!(err.kind, RecordErrorKind::Image(ImageError::MissingFile(_))));
    }

    proptest! {
        #[test]
        fn symmetric_about_one_half(s in -50.0f64..50.0) {
            prop_assert!((a_index(-s, &PUBLISHED) + a_index(s, &PUBLISHED) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn strictly_decreasing(a in -30.0f64..30.0, gap in 1e-6f64..10.0) {
            prop_assert!(a_index(a, &PUBLISHED) > a_index(a + gap, &PUBLISHED));
        }

        #[test]
        fn derivative_matches_finite_differences(s in -10.0f64..10.0) {
            let h = 1e-5;
            let fd = (a_index(s + h, &PUBLISHED) - a_index(s - h, &PUBLISHED)) / (2.0 * h);
            let an = a_index_derivative(s, &PUBLISHED);
            prop_assert!((fd - an).abs() <= 1e-6 * an.abs());
        }
    }
}
