//! Frame sampling and frame-mean aggregation for videos.
//!
//! Videos arrive as ordered lists of pre-extracted frame files; no container
//! decoding happens here.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::index::Label;
use crate::inverters::{jsonl_lines, optional_str, parse_label, required_str, ManifestError};

/// Frames between samples when the video is long enough.
pub const FRAME_STRIDE: usize = 30;
pub const DEFAULT_SAMPLE_COUNT: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VideoError {
    #[error("no frame scores to aggregate")]
    EmptyInput,
    #[error("frame and sample counts must be positive (got total {total}, count {count})")]
    InvalidPlan { total: usize, count: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FramePlan {
    pub total_frames: usize,
    pub sample_count: usize,
    pub indices: Vec<usize>,
}

/// One frame every 30 when `total >= 30 * count`, otherwise `count` frames
/// spread evenly from first to last (deduplicated for very short videos).
pub fn plan_frames(total_frames: usize, sample_count: usize) -> Result<FramePlan, VideoError> {
    if total_frames == 0 || sample_count == 0 {
        return Err(VideoError::InvalidPlan { total: total_frames, count: sample_count });
    }
    let indices = if total_frames >= FRAME_STRIDE * sample_count {
        (0..sample_count).map(|i| i * FRAME_STRIDE).collect()
    } else if sample_count == 1 {
        vec![0]
    } else {
        let span = (total_frames - 1) as f64 / (sample_count - 1) as f64;
        let mut v: Vec<usize> = (0..sample_count).map(|i| (i as f64 * span).round() as usize).collect();
        v.dedup();
        v
    };
    Ok(FramePlan { total_frames, sample_count, indices })
}

/// Mean of the per-frame indices.
pub fn video_a_index(frame_scores: &[f64]) -> Result<f64, VideoError> {
    if frame_scores.is_empty() {
        return Err(VideoError::EmptyInput);
    }
    Ok(frame_scores.iter().sum::<f64>() / frame_scores.len() as f64)
}

/// One line of a video manifest:
/// `{"id", "frames": [...], "inverted_frames"?: [...], "label", "generator"?}`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub video_id: String,
    pub frames: Vec<String>,
    /// Aligned with `frames` when inversions were computed externally.
    pub inverted_frames: Option<Vec<String>>,
    pub label: Label,
    pub generator_tag: Option<String>,
    pub extra: Map<String, Value>,
    pub base_dir: PathBuf,
}

impl VideoRecord {
    pub fn frame_path(&self, i: usize) -> PathBuf {
        self.base_dir.join(&self.frames[i])
    }

    pub fn inverted_frame_path(&self, i: usize) -> Option<PathBuf> {
        self.inverted_frames.as_ref().map(|v| self.base_dir.join(&v[i]))
    }
}

fn string_list(obj: &Map<String, Value>, field: &str, line: usize) -> Result<Option<Vec<String>>, ManifestError> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| v.as_str().map(str::to_string).ok_or_else(|| ManifestError::schema(field, line, "must hold strings")))
            .collect::<Result<Vec<_>, _>>()
            .map(Some),
        Some(_) => Err(ManifestError::schema(field, line, "must be an array of paths")),
    }
}

pub fn parse_video_manifest(text: &str, base_dir: &Path) -> Result<Vec<VideoRecord>, ManifestError> {
    const KNOWN: [&str; 5] = ["id", "frames", "inverted_frames", "label", "generator"];
    let mut out = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for ml in jsonl_lines(text)? {
        let (obj, line) = (&ml.object, ml.line);
        if obj.contains_key("_header") {
            continue;
        }
        let video_id = required_str(obj, "id", line)?;
        let frames = string_list(obj, "frames", line)?.ok_or_else(|| ManifestError::schema("frames", line, "is missing"))?;
        if frames.is_empty() {
            return Err(ManifestError::schema("frames", line, "must not be empty"));
        }
        let inverted_frames = string_list(obj, "inverted_frames", line)?;
        if inverted_frames.as_ref().is_some_and(|v| v.len() != frames.len()) {
            return Err(ManifestError::schema("inverted_frames", line, "must have one entry per frame"));
        }
        let label = parse_label(obj.get("label"), line)?;
        if let Some(&first_line) = seen.get(&video_id) {
            return Err(ManifestError::DuplicateId { id: video_id, line, first_line });
        }
        seen.insert(video_id.clone(), line);
        out.push(VideoRecord {
            video_id,
            frames,
            inverted_frames,
            label,
            generator_tag: optional_str(obj, "generator", line)?,
            extra: obj.iter().filter(|(k, _)| !KNOWN.contains(&k.as_str())).map(|(k, v)| (k.clone(), v.clone())).collect(),
            base_dir: base_dir.to_path_buf(),
        });
    }
    Ok(out)
}

pub fn load_video_manifest(path: &Path) -> Result<Vec<VideoRecord>, ManifestError> {
    let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io { path: path.to_path_buf(), source })?;
    parse_video_manifest(&text, path.parent().unwrap_or(Path::new("")))
}
