//! End-to-end runs: score, calibrate, attack, attacker simulation, video and
//! report re-checking. Every command returns a serializable report; nothing
//! here parses command-line arguments.

mod commands;
mod summary;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adversary::{AdversaryError, AttackerSimReport, Direction};
use crate::calibrate::{CalibrationError, Decision};
use crate::index::{Label, ScoreSample};
use crate::inverters::{Inverter, ManifestError, ReferenceInverter, ReferenceInverterConfig};
use crate::metrics::MetricVector;
use crate::video::FramePlan;

pub use commands::{
    cmd_attack, cmd_attacker_sim, cmd_calibrate, cmd_report, cmd_score, cmd_video, AttackRunConfig, AttackerSimRunConfig,
    CalibrateConfig, CalibrateOutcome, CandidateChoice, ReportCheck, ScoreConfig, VideoConfig,
};
pub use summary::{auc, AttackSummary, ClassCounts, Histogram, ScoredItem, Summary, HISTOGRAM_BINS};

pub const REPORT_VERSION: u32 = 1;

/// How attack success is counted; echoed in attack report metadata.
pub const ASR_DEFINITION: &str =
    "share of items classified correctly before the attack whose decision flipped after it; \
     items misclassified before the attack are excluded from the denominator";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
}

impl PipelineError {
    /// 2 for bad configuration or inputs, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_)
            | PipelineError::Manifest(_)
            | PipelineError::Format { .. }
            | PipelineError::Adversary(
                AdversaryError::LiveInverterRequired
                | AdversaryError::InvalidConfig(_)
                | AdversaryError::EmptyCandidateSet,
            )
            | PipelineError::Calibration(CalibrationError::InvalidConfig(_) | CalibrationError::InvalidFpr(_)) => 2,
            _ => 1,
        }
    }
}

/// Where inversions come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InverterChoice {
    Reference(ReferenceInverterConfig),
    /// Inverted files listed in the manifest; no live inverter.
    External,
}

impl InverterChoice {
    pub fn build(&self) -> Result<Option<Arc<dyn Inverter>>, PipelineError> {
        match self {
            InverterChoice::Reference(cfg) => {
                let inv = ReferenceInverter::new(*cfg).map_err(PipelineError::Config)?;
                Ok(Some(Arc::new(inv)))
            }
            InverterChoice::External => Ok(None),
        }
    }
}

/// Direction used per record by attack runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionPolicy {
    /// Push fakes up and reals down, i.e. toward misclassification.
    Auto,
    Maximize,
    Minimize,
}

impl DirectionPolicy {
    pub fn resolve(self, label: Label) -> Direction {
        match (self, label) {
            (DirectionPolicy::Maximize, _) | (DirectionPolicy::Auto, Label::Fake) => Direction::Maximize,
            (DirectionPolicy::Minimize, _) | (DirectionPolicy::Auto, Label::Real) => Direction::Minimize,
        }
    }
}

impl std::str::FromStr for DirectionPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(DirectionPolicy::Auto),
            other => other.parse::<Direction>().map(|d| match d {
                Direction::Maximize => DirectionPolicy::Maximize,
                Direction::Minimize => DirectionPolicy::Minimize,
            }),
        }
    }
}

/// One scored record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub record_id: String,
    pub label: Label,
    pub generator_tag: String,
    pub psnr: f64,
    pub ssim: f64,
    pub lpips: f64,
    pub clip: f64,
    pub composite: f64,
    pub a_index: f64,
    pub tau: Option<f64>,
    pub decision: Option<Decision>,
}

impl RecordRow {
    pub fn new(sample: &ScoreSample, generator_tag: &str, m: &MetricVector, tau: Option<f64>) -> Self {
        RecordRow {
            record_id: sample.record_id.clone(),
            label: sample.label,
            generator_tag: generator_tag.to_string(),
            psnr: m.psnr,
            ssim: m.ssim,
            lpips: m.lpips,
            clip: m.clip,
            composite: sample.composite,
            a_index: sample.a_index,
            tau,
            decision: tau.map(|t| crate::calibrate::classify(sample.a_index, t)),
        }
    }

    pub fn sample(&self) -> ScoreSample {
        ScoreSample { record_id: self.record_id.clone(), label: self.label, composite: self.composite, a_index: self.a_index }
    }

    pub fn item(&self) -> ScoredItem {
        ScoredItem { label: self.label, a_index: self.a_index, decision: self.decision }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordFailure {
    pub record_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub record_id: String,
    pub label: Label,
    pub generator_tag: String,
    pub direction: Direction,
    pub tau: f64,
    pub a_index_before: f64,
    pub a_index_after: f64,
    pub decision_before: Decision,
    pub decision_after: Decision,
    pub linf_norm: f64,
    pub best_iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub rows: Vec<AttackRow>,
    pub summary: AttackSummary,
}

impl AttackReport {
    pub fn from_rows(rows: Vec<AttackRow>) -> Self {
        let before: Vec<ScoredItem> =
            rows.iter().map(|r| ScoredItem { label: r.label, a_index: r.a_index_before, decision: Some(r.decision_before) }).collect();
        let after: Vec<ScoredItem> =
            rows.iter().map(|r| ScoredItem { label: r.label, a_index: r.a_index_after, decision: Some(r.decision_after) }).collect();
        let summary = AttackSummary::from_pairs(&before, &after);
        AttackReport { rows, summary }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub frame_index: usize,
    pub path: String,
    pub a_index: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRow {
    pub video_id: String,
    pub label: Label,
    pub generator_tag: Option<String>,
    pub plan: FramePlan,
    pub frames: Vec<FrameScore>,
    pub a_index: f64,
    pub tau: Option<f64>,
    pub decision: Option<Decision>,
}

impl VideoRow {
    pub fn item(&self) -> ScoredItem {
        ScoredItem { label: self.label, a_index: self.a_index, decision: self.decision }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: u32,
    pub run_id: String,
    pub command: String,
    /// Every parameter that affects the results.
    pub config_echo: serde_json::Value,
    pub metadata: serde_json::Value,
    pub per_record_scores: Vec<RecordRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub videos: Vec<VideoRow>,
    pub errors: Vec<RecordFailure>,
    pub warnings: Vec<String>,
    pub summary: Summary,
    pub histogram: Histogram,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attacker_sim: Option<AttackerSimReport>,
}

/// First 16 hex digits of the SHA-256 of the command and its config echo.
pub fn run_id(command: &str, config_echo: &serde_json::Value) -> String {
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update([0u8]);
    h.update(config_echo.to_string().as_bytes());
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

impl RunReport {
    pub(crate) fn assemble(
        command: &str,
        config_echo: serde_json::Value,
        metadata: serde_json::Value,
        mut rows: Vec<RecordRow>,
        mut videos: Vec<VideoRow>,
        mut errors: Vec<RecordFailure>,
        warnings: Vec<String>,
    ) -> RunReport {
        rows.sort_by(|a, b| a.record_id.cmp(&b.record_id));
        videos.sort_by(|a, b| a.video_id.cmp(&b.video_id));
        errors.sort_by(|a, b| a.record_id.cmp(&b.record_id));
        let mut report = RunReport {
            version: REPORT_VERSION,
            run_id: run_id(command, &config_echo),
            command: command.to_string(),
            config_echo,
            metadata,
            per_record_scores: rows,
            videos,
            errors,
            warnings,
            summary: Summary::default(),
            histogram: Histogram::from_items(&[]),
            attack: None,
            attacker_sim: None,
        };
        let (summary, histogram) = report.recompute();
        report.summary = summary;
        report.histogram = histogram;
        report
    }

    /// Items the summary is computed from: videos for video runs, records otherwise.
    pub fn items(&self) -> Vec<ScoredItem> {
        if self.videos.is_empty() {
            self.per_record_scores.iter().map(RecordRow::item).collect()
        } else {
            self.videos.iter().map(VideoRow::item).collect()
        }
    }

    pub fn recompute(&self) -> (Summary, Histogram) {
        let items = self.items();
        (Summary::from_items(&items), Histogram::from_items(&items))
    }

    /// Differences between the stored summaries and a recomputation from the rows.
    pub fn inconsistencies(&self) -> Vec<String> {
        let mut out = Vec::new();
        let (summary, histogram) = self.recompute();
        if summary != self.summary {
            out.push("summary does not match the per-record rows".into());
        }
        if histogram != self.histogram {
            out.push("histogram does not match the per-record rows".into());
        }
        if let Some(a) = &self.attack {
            if AttackReport::from_rows(a.rows.clone()).summary != a.summary {
                out.push("attack summary does not match the attack rows".into());
            }
        }
        for r in &self.per_record_scores {
            if let Some(t) = r.tau {
                if r.decision != Some(crate::calibrate::classify(r.a_index, t)) {
                    out.push(format!("{}: decision does not match a_index and tau", r.record_id));
                }
            }
        }
        out
    }

    /// 1 when there were records and none could be scored, else 0.
    pub fn exit_code(&self) -> i32 {
        let scored = self.per_record_scores.len() + self.videos.len();
        if scored == 0 && !self.errors.is_empty() {
            1
        } else {
            0
        }
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn write_json(&self, path: &Path) -> Result<(), PipelineError> {
        write_text(path, &self.to_json_string())
    }

    pub fn load(path: &Path) -> Result<RunReport, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Format { path: path.to_path_buf(), detail: e.to_string() })
    }

    /// Per-record table (or per-video / per-attack table for those runs) as CSV.
    pub fn scores_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let result = if let Some(a) = &self.attack {
            a.rows.iter().try_for_each(|r| w.serialize(r))
        } else if !self.videos.is_empty() {
            #[derive(Serialize)]
            struct VideoCsv<'a> {
                video_id: &'a str,
                label: Label,
                frames_used: usize,
                a_index: f64,
                tau: Option<f64>,
                decision: Option<Decision>,
            }
            self.videos.iter().try_for_each(|v| {
                w.serialize(VideoCsv {
                    video_id: &v.video_id,
                    label: v.label,
                    frames_used: v.frames.len(),
                    a_index: v.a_index,
                    tau: v.tau,
                    decision: v.decision,
                })
            })
        } else if self.per_record_scores.is_empty() {
            w.write_record([
                "record_id", "label", "generator_tag", "psnr", "ssim", "lpips", "clip", "composite", "a_index", "tau",
                "decision",
            ])
        } else {
            self.per_record_scores.iter().try_for_each(|r| w.serialize(r))
        };
        result.expect("writing CSV to memory");
        String::from_utf8(w.into_inner().expect("flush to memory")).expect("CSV is UTF-8")
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), PipelineError> {
        write_text(path, &self.scores_csv())
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| PipelineError::Io { path: dir.to_path_buf(), source })?;
    }
    std::fs::write(path, text).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
}

/// Runs `f` on a pool of `workers` threads, or on the global pool.
pub(crate) fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, PipelineError> {
    match workers {
        Some(0) => Err(PipelineError::Config("workers must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| PipelineError::Config(format!("cannot start {n} workers: {e}"))),
        None => Ok(f()),
    }
}

/// Stable per-record seed offset.
pub(crate) fn id_seed(base: u64, id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325u64 ^ base, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}
