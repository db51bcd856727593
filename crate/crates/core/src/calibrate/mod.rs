//! Weight fitting, distribution overlap and FPR-controlled thresholds.
//!
//! Weights are fitted by differential evolution against the overlap between
//! the real and fake A-index distributions. Thresholds are then chosen from the
//! fake-class scores only: `tau` is the smallest observed score such that the
//! fraction of fakes *strictly above* it stays within the FPR budget, and an
//! image is certified authentic when its index is `>= tau`.

mod de;
mod kde;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::{a_index, Label, ScoreSample, WeightVector};
use crate::metrics::MetricVector;

pub use de::{differential_evolution, DeConfig, DeOutcome};
pub use kde::{overlap_estimate, overlap_with, silverman_bandwidth, KdeSettings, OverlapDetail, MIN_KDE_SAMPLES};

/// Default sigmoid scale; not searched by the optimizer.
pub const DEFAULT_SIGMA: f64 = 0.9;
/// Default false-positive budget.
pub const DEFAULT_FPR: f64 = 0.01;
/// Best overlap at or above this for three generations means the classes are inseparable.
pub const DEGENERATE_OVERLAP: f64 = 1.0 - 1e-6;

pub const RESULT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("{what}: need at least {needed} samples, got {got}")]
    InsufficientSamples { what: &'static str, needed: usize, got: usize },
    #[error("false-positive target must lie in (0, 1) (got {0})")]
    InvalidFpr(f64),
    #[error("scores must be finite")]
    NonFiniteScore,
    #[error("invalid calibration config: {0}")]
    InvalidConfig(String),
    #[error(
        "objective stuck at full overlap after {generations} generations: the real and fake \
         metric vectors cannot be separated by any weighting (check that the two manifests \
         really contain different classes)"
    )]
    DegenerateObjective { generations: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Authentic,
    PlausiblyDeniable,
}

/// Authentic iff `a_index >= tau`.
pub fn classify(a_index: f64, tau: f64) -> Decision {
    if a_index >= tau {
        Decision::Authentic
    } else {
        Decision::PlausiblyDeniable
    }
}

/// Smallest sample count for which `fpr_target` is resolvable (`n * fpr >= 1`).
pub fn min_samples_for(fpr_target: f64) -> usize {
    (1.0 / fpr_target - 1e-9).ceil().max(1.0) as usize
}

/// Fraction of `scores` strictly above `tau`.
pub fn empirical_fpr(scores: &[f64], tau: f64) -> f64 {
    scores.iter().filter(|&&s| s > tau).count() as f64 / scores.len() as f64
}

/// Smallest observed score `tau` with `#{s > tau} / n <= fpr_target`.
pub fn calibrate_threshold(fake_scores: &[f64], fpr_target: f64) -> Result<f64, CalibrationError> {
    if !(fpr_target > 0.0 && fpr_target < 1.0) {
        return Err(CalibrationError::InvalidFpr(fpr_target));
    }
    let needed = min_samples_for(fpr_target);
    if fake_scores.len() < needed {
        return Err(CalibrationError::InsufficientSamples { what: "fake scores", needed, got: fake_scores.len() });
    }
    if fake_scores.iter().any(|s| !s.is_finite()) {
        return Err(CalibrationError::NonFiniteScore);
    }
    let mut sorted = fake_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let allowed = (fpr_target * n as f64 + 1e-9).floor() as usize;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        // j is the last index equal to sorted[i]
        if n - (j + 1) <= allowed {
            return Ok(sorted[i]);
        }
        i = j + 1;
    }
    unreachable!("the maximum always satisfies the budget")
}

/// Same quantile rule on scores of adversarially perturbed fakes.
pub fn calibrate_security_threshold(attacked_fake_scores: &[f64], fpr_target: f64) -> Result<f64, CalibrationError> {
    calibrate_threshold(attacked_fake_scores, fpr_target)
}

/// Outcome of [`fit_weights`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub weights: WeightVector,
    pub overlap: f64,
    pub generations: usize,
    pub converged: bool,
    /// True when the optimizer's best member was negated so that real images
    /// score higher than fakes (the overlap is unchanged by negation).
    pub reoriented: bool,
    pub best_history: Vec<f64>,
}

fn index_values(features: &[[f64; 4]], alphas: &[f64], sigma: f64) -> Vec<f64> {
    let w = WeightVector { alpha1: alphas[0], alpha2: alphas[1], alpha3: alphas[2], alpha4: alphas[3], sigma };
    features.iter().map(|f| a_index(w.alpha1 * f[0] + w.alpha2 * f[1] + w.alpha3 * f[2] + w.alpha4 * f[3], &w)).collect()
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Fits the four channel weights by minimizing the KDE overlap of the real
/// and fake A-index distributions under the fixed sigmoid scale `sigma`.
pub fn fit_weights(
    real: &[MetricVector],
    fake: &[MetricVector],
    cfg: &DeConfig,
    sigma: f64,
) -> Result<FitOutcome, CalibrationError> {
    if cfg.bounds.len() != 4 {
        return Err(CalibrationError::InvalidConfig(format!("expected 4 weight bounds, got {}", cfg.bounds.len())));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(CalibrationError::InvalidConfig(format!("sigma must be positive (got {sigma})")));
    }
    for (what, set) in [("real metric vectors", real), ("fake metric vectors", fake)] {
        if set.len() < MIN_KDE_SAMPLES {
            return Err(CalibrationError::InsufficientSamples { what, needed: MIN_KDE_SAMPLES, got: set.len() });
        }
    }
    let fr: Vec<[f64; 4]> = real.iter().map(MetricVector::features).collect();
    let ff: Vec<[f64; 4]> = fake.iter().map(MetricVector::features).collect();
    if fr.iter().chain(&ff).flatten().any(|v| !v.is_finite()) {
        return Err(CalibrationError::NonFiniteScore);
    }
    let objective = |alphas: &[f64]| {
        overlap_estimate(&index_values(&fr, alphas, sigma), &index_values(&ff, alphas, sigma)).unwrap_or(1.0)
    };
    let out = differential_evolution(objective, cfg, Some(DEGENERATE_OVERLAP))?;
    let mut weights = WeightVector { alpha1: out.best[0], alpha2: out.best[1], alpha3: out.best[2], alpha4: out.best[3], sigma };
    let reoriented = median(&index_values(&fr, &out.best, sigma)) < median(&index_values(&ff, &out.best, sigma));
    let bounds_symmetric = cfg.bounds.iter().all(|&(lo, hi)| lo == -hi);
    if reoriented && bounds_symmetric {
        weights = weights.negated();
    }
    Ok(FitOutcome {
        weights,
        overlap: out.objective,
        generations: out.generations,
        converged: out.converged,
        reoriented: reoriented && bounds_symmetric,
        best_history: out.best_history,
    })
}

/// Scores already-computed metric vectors under `w`.
pub fn score_metrics(
    rows: &[(String, Label, MetricVector)],
    w: &WeightVector,
) -> Vec<ScoreSample> {
    rows.iter().map(|(id, label, m)| ScoreSample::from_metrics(id.clone(), *label, m, w)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleCounts {
    pub real: usize,
    pub fake: usize,
}

/// Everything one calibration run produces; serialized as versioned JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub version: u32,
    pub generator_tag: String,
    pub weights: WeightVector,
    pub overlap: f64,
    pub fpr_target: f64,
    pub tau_safety: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_security: Option<f64>,
    /// Fraction of real scores at or above `tau_safety`.
    pub recall_at_tau: f64,
    pub counts: SampleCounts,
    pub kde: KdeSettings,
    pub de_config: DeConfig,
    pub generations: usize,
    pub converged: bool,
    pub reoriented: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack_config: Option<serde_json::Value>,
    pub real_scores: Vec<ScoreSample>,
    pub fake_scores: Vec<ScoreSample>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attacked_fake_scores: Vec<ScoreSample>,
}

impl CalibrationResult {
    pub fn real_values(&self) -> Vec<f64> {
        self.real_scores.iter().map(|s| s.a_index).collect()
    }

    pub fn fake_values(&self) -> Vec<f64> {
        self.fake_scores.iter().map(|s| s.a_index).collect()
    }

    /// Checks the recomputable invariants: overlap, FPR at `tau_safety`,
    /// `tau_security >= tau_safety`, and index/composite consistency.
    pub fn check_invariants(&self) -> Result<(), String> {
        for s in self.real_scores.iter().chain(&self.fake_scores) {
            let a = a_index(s.composite, &self.weights);
            if (a - s.a_index).abs() > 1e-12 {
                return Err(format!("{}: stored index {} != recomputed {}", s.record_id, s.a_index, a));
            }
        }
        let overlap = overlap_estimate(&self.real_values(), &self.fake_values()).map_err(|e| e.to_string())?;
        if (overlap - self.overlap).abs() > 1e-9 {
            return Err(format!("stored overlap {} != recomputed {}", self.overlap, overlap));
        }
        let fpr = empirical_fpr(&self.fake_values(), self.tau_safety);
        if fpr > self.fpr_target {
            return Err(format!("FPR {fpr} at tau_safety exceeds target {}", self.fpr_target));
        }
        if let Some(sec) = self.tau_security {
            if sec < self.tau_safety - 1e-12 {
                return Err(format!("tau_security {sec} below tau_safety {}", self.tau_safety));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("calibration result serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Builds a [`CalibrationResult`] from fitted weights and per-record metrics.
#[allow(clippy::too_many_arguments)]
pub fn assemble_result(
    generator_tag: &str,
    fit: &FitOutcome,
    real: &[(String, MetricVector)],
    fake: &[(String, MetricVector)],
    fpr_target: f64,
    de_config: &DeConfig,
) -> Result<CalibrationResult, CalibrationError> {
    let w = fit.weights;
    let real_scores: Vec<ScoreSample> =
        real.iter().map(|(id, m)| ScoreSample::from_metrics(id.clone(), Label::Real, m, &w)).collect();
    let fake_scores: Vec<ScoreSample> =
        fake.iter().map(|(id, m)| ScoreSample::from_metrics(id.clone(), Label::Fake, m, &w)).collect();
    let rv: Vec<f64> = real_scores.iter().map(|s| s.a_index).collect();
    let fv: Vec<f64> = fake_scores.iter().map(|s| s.a_index).collect();
    let tau_safety = calibrate_threshold(&fv, fpr_target)?;
    let recall_at_tau = rv.iter().filter(|&&a| a >= tau_safety).count() as f64 / rv.len() as f64;
    Ok(CalibrationResult {
        version: RESULT_VERSION,
        generator_tag: generator_tag.to_string(),
        weights: w,
        overlap: overlap_estimate(&rv, &fv)?,
        fpr_target,
        tau_safety,
        tau_security: None,
        recall_at_tau,
        counts: SampleCounts { real: rv.len(), fake: fv.len() },
        kde: KdeSettings::default(),
        de_config: de_config.clone(),
        generations: fit.generations,
        converged: fit.converged,
        reoriented: fit.reoriented,
        attack_config: None,
        real_scores,
        fake_scores,
        attacked_fake_scores: Vec::new(),
    })
}

/// Per-generator thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEntry {
    pub tau_safety: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_security: Option<f64>,
}

/// Thresholds keyed by generator tag. The key `"default"` applies to tags
/// without their own entry.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ThresholdRegistry {
    pub version: u32,
    pub thresholds: BTreeMap<String, ThresholdEntry>,
}

impl ThresholdRegistry {
    pub fn single(tau_safety: f64) -> Self {
        let mut thresholds = BTreeMap::new();
        thresholds.insert("default".to_string(), ThresholdEntry { tau_safety, tau_security: None });
        ThresholdRegistry { version: RESULT_VERSION, thresholds }
    }

    pub fn lookup(&self, generator_tag: &str) -> Option<ThresholdEntry> {
        self.thresholds.get(generator_tag).or_else(|| self.thresholds.get("default")).copied()
    }

    pub fn insert_result(&mut self, result: &CalibrationResult) {
        self.version = RESULT_VERSION;
        self.thresholds.insert(
            result.generator_tag.clone(),
            ThresholdEntry { tau_safety: result.tau_safety, tau_security: result.tau_security },
        );
    }

    /// Reads either a registry file or a single calibration result.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        if value.get("thresholds").is_some() {
            serde_json::from_value(value).map_err(|e| format!("{}: {e}", path.display()))
        } else {
            let result: CalibrationResult =
                serde_json::from_value(value).map_err(|e| format!("{}: {e}", path.display()))?;
            let mut reg = ThresholdRegistry::default();
            reg.insert_result(&result);
            Ok(reg)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Sort-and-count oracle: walk every candidate and keep the first that fits.
    fn brute_force_threshold(scores: &[f64], q: f64) -> f64 {
        let mut cands = scores.to_vec();
        cands.sort_by(f64::total_cmp);
        *cands
            .iter()
            .find(|&&t| scores.iter().filter(|&&s| s > t).count() as f64 / scores.len() as f64 <= q)
            .unwrap()
    }

    #[test]
    fn threshold_examples() {
        let scores: Vec<f64> = (1..=1000).map(|i| 0.001 * i as f64).collect();
        let tau = calibrate_threshold(&scores, 0.01).unwrap();
        assert_eq!(tau, 0.001 * 990.0);
        assert_eq!(scores.iter().filter(|&&s| s > tau).count(), 10);

        assert_eq!(calibrate_threshold(&[0.3; 200], 0.01).unwrap(), 0.3);

        let hundred: Vec<f64> = (1..=100).map(|i| i as f64 / 100.0).collect();
        assert_eq!(calibrate_threshold(&hundred, 0.5).unwrap(), 0.5);
    }

    #[test]
    fn threshold_errors() {
        assert!(matches!(
            calibrate_threshold(&[0.1; 99], 0.01),
            Err(CalibrationError::InsufficientSamples { needed: 100, got: 99, .. })
        ));
        assert!(matches!(calibrate_threshold(&[0.1; 10], 0.0), Err(CalibrationError::InvalidFpr(_))));
        assert!(matches!(calibrate_threshold(&[0.1; 10], 1.0), Err(CalibrationError::InvalidFpr(_))));
        assert_eq!(min_samples_for(0.01), 100);
        assert_eq!(min_samples_for(0.5), 2);
    }

    #[test]
    fn security_threshold_tracks_shifts() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let clean: Vec<f64> = (0..500).map(|_| rng.random_range(0.0..0.05)).collect();
        let attacked: Vec<f64> = clean.iter().map(|s| s + 0.002).collect();
        let safety = calibrate_threshold(&clean, 0.01).unwrap();
        let security = calibrate_security_threshold(&attacked, 0.01).unwrap();
        assert!((security - (safety + 0.002)).abs() < 1e-15);
        assert_eq!(calibrate_security_threshold(&clean, 0.01).unwrap(), safety);
    }

    #[test]
    fn classify_is_inclusive() {
        assert_eq!(classify(0.05, 0.0365), Decision::Authentic);
        assert_eq!(classify(0.0365, 0.0365), Decision::Authentic);
        assert_eq!(classify(0.01, 0.0365), Decision::PlausiblyDeniable);
    }

    #[test]
    fn registry_falls_back_to_default() {
        let mut reg = ThresholdRegistry::single(0.02);
        reg.thresholds.insert("sd21".into(), ThresholdEntry { tau_safety: 0.015, tau_security: None });
        assert_eq!(reg.lookup("sd21").unwrap().tau_safety, 0.015);
        assert_eq!(reg.lookup("other").unwrap().tau_safety, 0.02);
    }

    proptest! {
        #[test]
        fn threshold_respects_budget(
            scores in prop::collection::vec(0.0f64..1.0, 100..400),
            q in prop::sample::select(vec![0.01, 0.05, 0.1, 0.25]),
        ) {
            let tau = calibrate_threshold(&scores, q).unwrap();
            prop_assert!(empirical_fpr(&scores, tau) <= q);
            prop_assert_eq!(tau, brute_force_threshold(&scores, q));
        }

        #[test]
        fn threshold_is_shift_equivariant(
            ints in prop::collection::vec(0u32..10_000, 100..300),
            shift in -4i32..4,
        ) {
            // dyadic values keep the shifted list exactly representable
            let scores: Vec<f64> = ints.iter().map(|&i| i as f64 / 1024.0).collect();
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift as f64).collect();
            let a = calibrate_threshold(&scores, 0.01).unwrap();
            let b = calibrate_threshold(&shifted, 0.01).unwrap();
            prop_assert_eq!(b, a + shift as f64);
        }
    }
}
