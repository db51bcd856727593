use serde::{Deserialize, Serialize};

use crate::calibrate::Decision;
use crate::index::Label;

pub const HISTOGRAM_BINS: usize = 64;

/// The parts of a scored row that summaries depend on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredItem {
    pub label: Label,
    pub a_index: f64,
    pub decision: Option<Decision>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub total: usize,
    pub authentic: usize,
    pub plausibly_deniable: usize,
}

/// Counts and rates over scored rows. Real is the positive class: a true
/// positive is a real item certified authentic.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n_scored: usize,
    pub real: ClassCounts,
    pub fake: ClassCounts,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    /// Probability that a random real item outscores a random fake one.
    pub auc: Option<f64>,
    pub mean_a_index_real: Option<f64>,
    pub mean_a_index_fake: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl Summary {
    pub fn from_items(items: &[ScoredItem]) -> Summary {
        let mut s = Summary { n_scored: items.len(), ..Default::default() };
        let (mut reals, mut fakes) = (Vec::new(), Vec::new());
        let mut decided = 0;
        for it in items {
            let counts = match it.label {
                Label::Real => {
                    reals.push(it.a_index);
                    &mut s.real
                }
                Label::Fake => {
                    fakes.push(it.a_index);
                    &mut s.fake
                }
            };
            counts.total += 1;
            match it.decision {
                Some(Decision::Authentic) => counts.authentic += 1,
                Some(Decision::PlausiblyDeniable) => counts.plausibly_deniable += 1,
                None => continue,
            }
            decided += 1;
        }
        let tp = s.real.authentic;
        let fp = s.fake.authentic;
        let fn_ = s.real.plausibly_deniable;
        let tn = s.fake.plausibly_deniable;
        if decided > 0 {
            s.accuracy = ratio(tp + tn, decided);
            s.precision = ratio(tp, tp + fp);
            s.recall = ratio(tp, tp + fn_);
            s.f1 = match (s.precision, s.recall) {
                (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
                (Some(_), Some(_)) => Some(0.0),
                _ => None,
            };
        }
        s.auc = auc(&reals, &fakes);
        s.mean_a_index_real = mean(&reals);
        s.mean_a_index_fake = mean(&fakes);
        s
    }
}

/// Rank-sum AUC with ties counted as one half. `None` unless both classes are present.
pub fn auc(positive: &[f64], negative: &[f64]) -> Option<f64> {
    if positive.is_empty() || negative.is_empty() {
        return None;
    }
    let mut all: Vec<(f64, bool)> =
        positive.iter().map(|&v| (v, true)).chain(negative.iter().map(|&v| (v, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // average of 1-based ranks i+1 ..= j+1
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * all[i..=j].iter().filter(|e| e.1).count() as f64;
        i = j + 1;
    }
    let (np, nn) = (positive.len() as f64, negative.len() as f64);
    Some((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Fixed 64-bin counts over `[0, 1]` per class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: usize,
    pub real: Vec<usize>,
    pub fake: Vec<usize>,
}

impl Histogram {
    pub fn from_items(items: &[ScoredItem]) -> Histogram {
        let mut h = Histogram { bins: HISTOGRAM_BINS, real: vec![0; HISTOGRAM_BINS], fake: vec![0; HISTOGRAM_BINS] };
        for it in items {
            let bin = ((it.a_index.clamp(0.0, 1.0) * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
            match it.label {
                Label::Real => h.real[bin] += 1,
                Label::Fake => h.fake[bin] += 1,
            }
        }
        h
    }
}

/// Before/after attack counts. The success rate for a class is the share of
/// items classified correctly before the attack whose decision flipped after
/// it; items wrong before the attack are left out of the denominator.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub before: Summary,
    pub after: Summary,
    pub correct_before_real: usize,
    pub flipped_real: usize,
    pub correct_before_fake: usize,
    pub flipped_fake: usize,
    pub asr_real: Option<f64>,
    pub asr_fake: Option<f64>,
}

impl AttackSummary {
    pub fn from_pairs(before: &[ScoredItem], after: &[ScoredItem]) -> AttackSummary {
        let mut s = AttackSummary {
            before: Summary::from_items(before),
            after: Summary::from_items(after),
            ..Default::default()
        };
        for (b, a) in before.iter().zip(after) {
            let correct = |it: &ScoredItem| match (it.label, it.decision) {
                (Label::Real, Some(Decision::Authentic)) | (Label::Fake, Some(Decision::PlausiblyDeniable)) => true,
                _ => false,
            };
            if !correct(b) {
                continue;
            }
            let flipped = a.decision != b.decision;
            match b.label {
                Label::Real => {
                    s.correct_before_real += 1;
                    s.flipped_real += flipped as usize;
                }
                Label::Fake => {
                    s.correct_before_fake += 1;
                    s.flipped_fake += flipped as usize;
                }
            }
        }
        s.asr_real = ratio(s.flipped_real, s.correct_before_real);
        s.asr_fake = ratio(s.flipped_fake, s.correct_before_fake);
        s
    }
}
