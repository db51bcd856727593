//! JSON-Lines pair manifests.
//!
//! One record per line:
//! `{"id", "original", "inverted"?, "label", "generator", "caption"?, "precomputed"?}`.
//! An optional first line `{"_header": {...}}` carries producer metadata.
//! Unknown top-level fields are kept and written back after the known ones.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};
use thiserror::Error;

use crate::index::Label;
use crate::metrics::PartialMetrics;

pub const MANIFEST_SCHEMA_VERSION: u64 = 1;

const KNOWN_FIELDS: [&str; 7] = ["id", "original", "inverted", "label", "generator", "caption", "precomputed"];
const CHANNELS: [&str; 4] = ["psnr", "ssim", "lpips", "clip"];

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: not valid JSON: {detail}")]
    Parse { line: usize, detail: String },
    #[error("line {line}: field `{field}` {detail}")]
    Schema { field: String, line: usize, detail: String },
    #[error("line {line}: duplicate id `{id}` (first seen on line {first_line})")]
    DuplicateId { id: String, line: usize, first_line: usize },
}

impl ManifestError {
    pub fn schema(field: impl Into<String>, line: usize, detail: impl Into<String>) -> Self {
        ManifestError::Schema { field: field.into(), line, detail: detail.into() }
    }
}

/// One non-blank manifest line.
pub(crate) struct ManifestLine {
    pub line: usize,
    pub object: Map<String, Value>,
}

/// Splits JSONL text into objects, numbering lines from 1 and skipping blank ones.
pub(crate) fn jsonl_lines(text: &str) -> Result<Vec<ManifestLine>, ManifestError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value =
            serde_json::from_str(raw).map_err(|e| ManifestError::Parse { line, detail: e.to_string() })?;
        match value {
            Value::Object(object) => out.push(ManifestLine { line, object }),
            _ => return Err(ManifestError::Parse { line, detail: "expected a JSON object".into() }),
        }
    }
    Ok(out)
}

pub(crate) fn required_str(obj: &Map<String, Value>, field: &str, line: usize) -> Result<String, ManifestError> {
    match obj.get(field) {
        None | Some(Value::Null) => Err(ManifestError::schema(field, line, "is missing")),
        Some(Value::String(s)) if !s.is_empty() => Ok(s.clone()),
        Some(Value::String(_)) => Err(ManifestError::schema(field, line, "must not be empty")),
        Some(_) => Err(ManifestError::schema(field, line, "must be a string")),
    }
}

pub(crate) fn optional_str(obj: &Map<String, Value>, field: &str, line: usize) -> Result<Option<String>, ManifestError> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(ManifestError::schema(field, line, "must be a string")),
    }
}

pub(crate) fn parse_label(value: Option<&Value>, line: usize) -> Result<Label, ManifestError> {
    match value {
        None | Some(Value::Null) => Err(ManifestError::schema("label", line, "is missing")),
        Some(Value::String(s)) if s == "real" => Ok(Label::Real),
        Some(Value::String(s)) if s == "fake" => Ok(Label::Fake),
        Some(other) => Err(ManifestError::schema("label", line, format!("must be \"real\" or \"fake\" (got {other})"))),
    }
}

fn parse_precomputed(value: Option<&Value>, line: usize) -> Result<Option<PartialMetrics>, ManifestError> {
    let obj = match value {
        None | Some(Value::Null) => return Ok(None),
        Some(Value::Object(o)) => o,
        Some(_) => return Err(ManifestError::schema("precomputed", line, "must be an object")),
    };
    let mut pm = PartialMetrics::default();
    for (key, v) in obj {
        let field = format!("precomputed.{key}");
        if !CHANNELS.contains(&key.as_str()) {
            return Err(ManifestError::schema(field, line, "is not a metric channel (psnr, ssim, lpips, clip)"));
        }
        let num = v.as_f64().filter(|x| x.is_finite()).ok_or_else(|| ManifestError::schema(&field, line, "must be a finite number"))?;
        match key.as_str() {
            "psnr" => pm.psnr = Some(num),
            "ssim" => pm.ssim = Some(num),
            "lpips" => pm.lpips = Some(num),
            _ => pm.clip = Some(num),
        }
    }
    Ok(Some(pm))
}

/// One (original, inverted) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub record_id: String,
    /// As written in the manifest; see [`PairRecord::original`].
    pub original_path: String,
    pub inverted_path: Option<String>,
    pub label: Label,
    pub generator_tag: String,
    pub caption: Option<String>,
    pub precomputed: Option<PartialMetrics>,
    /// Unknown top-level fields, in input order.
    pub extra: Map<String, Value>,
    /// Directory that relative paths resolve against.
    pub base_dir: PathBuf,
}

impl PairRecord {
    pub fn new(record_id: impl Into<String>, original_path: impl Into<String>, label: Label, generator_tag: impl Into<String>) -> Self {
        PairRecord {
            record_id: record_id.into(),
            original_path: original_path.into(),
            inverted_path: None,
            label,
            generator_tag: generator_tag.into(),
            caption: None,
            precomputed: None,
            extra: Map::new(),
            base_dir: PathBuf::new(),
        }
    }

    pub fn original(&self) -> PathBuf {
        self.base_dir.join(&self.original_path)
    }

    pub fn inverted(&self) -> Option<PathBuf> {
        self.inverted_path.as_ref().map(|p| self.base_dir.join(p))
    }

    fn from_line(ml: &ManifestLine, base_dir: &Path) -> Result<Self, ManifestError> {
        let obj = &ml.object;
        let line = ml.line;
        Ok(PairRecord {
            record_id: required_str(obj, "id", line)?,
            original_path: required_str(obj, "original", line)?,
            inverted_path: optional_str(obj, "inverted", line)?,
            label: parse_label(obj.get("label"), line)?,
            generator_tag: required_str(obj, "generator", line)?,
            caption: optional_str(obj, "caption", line)?,
            precomputed: parse_precomputed(obj.get("precomputed"), line)?,
            extra: obj.iter().filter(|(k, _)| !KNOWN_FIELDS.contains(&k.as_str())).map(|(k, v)| (k.clone(), v.clone())).collect(),
            base_dir: base_dir.to_path_buf(),
        })
    }

    /// Canonical JSON form: known fields in schema order, then the extras.
    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("id".into(), Value::from(self.record_id.clone()));
        m.insert("original".into(), Value::from(self.original_path.clone()));
        if let Some(p) = &self.inverted_path {
            m.insert("inverted".into(), Value::from(p.clone()));
        }
        m.insert("label".into(), Value::from(self.label.to_string()));
        m.insert("generator".into(), Value::from(self.generator_tag.clone()));
        if let Some(c) = &self.caption {
            m.insert("caption".into(), Value::from(c.clone()));
        }
        if let Some(pm) = &self.precomputed {
            m.insert("precomputed".into(), serde_json::to_value(pm).expect("metrics serialize"));
        }
        m.extend(self.extra.clone());
        Value::Object(m)
    }
}

/// A parsed manifest: optional header plus records in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub header: Option<Value>,
    pub records: Vec<PairRecord>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Canonical text; [`parse_manifest`] of this text reproduces `self`.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        if let Some(h) = &self.header {
            let mut m = Map::new();
            m.insert("_header".into(), h.clone());
            out.push_str(&Value::Object(m).to_string());
            out.push('\n');
        }
        for r in &self.records {
            out.push_str(&r.to_json().to_string());
            out.push('\n');
        }
        out
    }
}

/// Parses manifest text; relative paths will resolve against `base_dir`.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<Manifest, ManifestError> {
    let mut manifest = Manifest::default();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, ml) in jsonl_lines(text)?.into_iter().enumerate() {
        if let Some(h) = ml.object.get("_header") {
            if i != 0 {
                return Err(ManifestError::schema("_header", ml.line, "is only allowed on the first line"));
            }
            if let Some(v) = h.get("schema_version") {
                if v.as_u64() != Some(MANIFEST_SCHEMA_VERSION) {
                    return Err(ManifestError::schema(
                        "_header.schema_version",
                        ml.line,
                        format!("must be {MANIFEST_SCHEMA_VERSION} (got {v})"),
                    ));
                }
            }
            manifest.header = Some(h.clone());
            continue;
        }
        let rec = PairRecord::from_line(&ml, base_dir)?;
        if let Some(&first_line) = seen.get(&rec.record_id) {
            return Err(ManifestError::DuplicateId { id: rec.record_id, line: ml.line, first_line });
        }
        seen.insert(rec.record_id.clone(), ml.line);
        manifest.records.push(rec);
    }
    Ok(manifest)
}

pub fn load_manifest(path: &Path) -> Result<Manifest, ManifestError> {
    let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io { path: path.to_path_buf(), source })?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new("")))
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<(), ManifestError> {
    std::fs::write(path, manifest.to_jsonl()).map_err(|source| ManifestError::Io { path: path.to_path_buf(), source })
}
