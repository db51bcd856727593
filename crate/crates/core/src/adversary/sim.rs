//! Sample-then-refine attacker: draw candidates for one prompt, keep the
//! highest-scoring one, then push it further with a maximizing attack.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::ThresholdEntry;
use crate::image::{load_image, ImageBuffer};
use crate::index::WeightVector;
use crate::inverters::{Inverter, InverterError};
use crate::metrics::Providers;
use crate::synth::SyntheticSource;

use super::{pgd_attack, self_score, AdversaryError, AttackConfig, AttackResult, Direction};

/// Deterministic candidate images for a prompt, keyed by seed index.
pub trait CandidateSource: Send + Sync {
    fn name(&self) -> String;
    fn candidate(&self, prompt_tag: &str, seed_index: u64) -> Result<ImageBuffer, InverterError>;
}

/// Procedural candidates of a fixed size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticGenerator {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl CandidateSource for SyntheticGenerator {
    fn name(&self) -> String {
        format!("synthetic-{}x{}x{}", self.height, self.width, self.channels)
    }

    fn candidate(&self, prompt_tag: &str, seed_index: u64) -> Result<ImageBuffer, InverterError> {
        Ok(SyntheticSource::new(self.height, self.width, self.channels, prompt_tag).candidate(seed_index))
    }
}

/// Pre-rendered candidates; seed index `i` is the `i`-th path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileCandidates {
    pub paths: Vec<PathBuf>,
}

impl CandidateSource for FileCandidates {
    fn name(&self) -> String {
        format!("files({})", self.paths.len())
    }

    fn candidate(&self, _prompt_tag: &str, seed_index: u64) -> Result<ImageBuffer, InverterError> {
        let path = self.paths.get(seed_index as usize).ok_or_else(|| InverterError::Failed {
            name: self.name(),
            reason: format!("no candidate for seed index {seed_index}"),
        })?;
        Ok(load_image(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackerSimConfig {
    pub n_candidates: usize,
    /// The refinement always maximizes; the configured direction is ignored.
    pub refine: AttackConfig,
}

impl Default for AttackerSimConfig {
    fn default() -> Self {
        AttackerSimConfig { n_candidates: 100, refine: AttackConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackerSimReport {
    pub prompt_tag: String,
    pub source: String,
    pub candidate_scores: Vec<f64>,
    pub selected_index: usize,
    pub selected_a_index: f64,
    pub refined_a_index: f64,
    pub attack: AttackResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected_clears_safety: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refined_clears_safety: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refined_clears_security: Option<bool>,
}

/// First index of the maximum.
fn argmax(scores: &[f64]) -> usize {
    scores.iter().enumerate().fold(0, |best, (i, &s)| if s > scores[best] { i } else { best })
}

pub fn attacker_sim(
    source: &dyn CandidateSource,
    prompt_tag: &str,
    cfg: &AttackerSimConfig,
    w: &WeightVector,
    providers: &Providers,
    inverter: &dyn Inverter,
    thresholds: Option<ThresholdEntry>,
) -> Result<AttackerSimReport, AdversaryError> {
    if cfg.n_candidates == 0 {
        return Err(AdversaryError::EmptyCandidateSet);
    }
    let score = |i: u64| -> Result<f64, AdversaryError> {
        let img = source.candidate(prompt_tag, i)?;
        self_score(&img, inverter, w, providers)
    };
    let ids: Vec<u64> = (0..cfg.n_candidates as u64).collect();
    let candidate_scores: Vec<f64> = if inverter.descriptor().thread_safe {
        ids.par_iter().map(|&i| score(i)).collect::<Result<_, _>>()?
    } else {
        ids.iter().map(|&i| score(i)).collect::<Result<_, _>>()?
    };
    let selected_index = argmax(&candidate_scores);
    let winner = source.candidate(prompt_tag, selected_index as u64)?;
    let refine = AttackConfig { direction: Direction::Maximize, ..cfg.refine };
    let attack = pgd_attack(&winner, inverter, w, providers, &refine)?;
    let selected_a_index = candidate_scores[selected_index];
    let refined_a_index = attack.a_index_after;
    Ok(AttackerSimReport {
        prompt_tag: prompt_tag.to_string(),
        source: source.name(),
        selected_a_index,
        refined_a_index,
        selected_clears_safety: thresholds.map(|t| selected_a_index >= t.tau_safety),
        refined_clears_safety: thresholds.map(|t| refined_a_index >= t.tau_safety),
        refined_clears_security: thresholds.and_then(|t| t.tau_security.map(|s| refined_a_index >= s)),
        candidate_scores,
        selected_index,
        attack,
    })
}
