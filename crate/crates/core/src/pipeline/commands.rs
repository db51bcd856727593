use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::adversary::{
    attacker_sim, dump_attack_images, pgd_attack, AdversaryError, AttackConfig, AttackerSimConfig, CandidateSource,
    Direction, FileCandidates, SyntheticGenerator,
};
use crate::calibrate::{
    assemble_result, calibrate_security_threshold, classify, fit_weights, CalibrationResult, DeConfig, ThresholdRegistry,
};
use crate::image::{load_image, ImageBuffer};
use crate::index::{record_metrics, Label, ScoreSample, WeightVector};
use crate::inverters::{invert_checked, load_manifest, Inverter, PairRecord};
use crate::metrics::{metric_vector, MetricVector, Providers};
use crate::video::{load_video_manifest, plan_frames, video_a_index, VideoRecord};

use super::{
    id_seed, with_workers, AttackReport, AttackRow, DirectionPolicy, FrameScore, InverterChoice, PipelineError,
    RecordFailure, RecordRow, RunReport, VideoRow, ASR_DEFINITION,
};

/// Maps `f` over `items`, in parallel unless the inverter asks for serialized calls.
fn map_items<T, R, F>(items: &[T], parallel: bool, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if parallel {
        items.par_iter().map(f).collect()
    } else {
        items.iter().map(f).collect()
    }
}

fn parallel_ok(inverter: Option<&Arc<dyn Inverter>>) -> bool {
    inverter.is_none_or(|i| i.descriptor().thread_safe)
}

fn metadata(providers: &Providers, inverter: Option<&Arc<dyn Inverter>>, workers: Option<usize>) -> serde_json::Value {
    json!({
        "providers": providers.describe(),
        "inverter": inverter.map(|i| serde_json::to_value(i.descriptor()).expect("descriptor serializes")),
        "workers": workers,
        "crate_version": env!("CARGO_PKG_VERSION"),
    })
}

fn manifest_inversion_warnings(records: &[PairRecord], inverter: Option<&Arc<dyn Inverter>>) -> Vec<String> {
    if inverter.is_none() {
        return Vec::new();
    }
    records
        .iter()
        .filter(|r| r.inverted_path.is_some())
        .map(|r| format!("record {}: using the manifest's inverted image instead of the configured inverter", r.record_id))
        .collect()
}

fn tau_for(registry: Option<&ThresholdRegistry>, tag: &str, warnings: &mut Vec<String>) -> Option<f64> {
    let reg = registry?;
    let entry = reg.lookup(tag);
    if entry.is_none() {
        warnings.push(format!("no threshold for generator `{tag}` and no default; decisions left empty"));
    }
    entry.map(|e| e.tau_safety)
}

fn failure(id: &str, err: impl std::fmt::Display) -> RecordFailure {
    RecordFailure { record_id: id.to_string(), error: err.to_string() }
}

fn split<R>(results: Vec<Result<R, RecordFailure>>) -> (Vec<R>, Vec<RecordFailure>) {
    let mut ok = Vec::new();
    let mut bad = Vec::new();
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => bad.push(e),
        }
    }
    (ok, bad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub manifest: PathBuf,
    pub weights: WeightVector,
    #[serde(default)]
    pub thresholds: Option<ThresholdRegistry>,
    pub inverter: InverterChoice,
    #[serde(skip)]
    pub workers: Option<usize>,
}

/// Scores every record. Individual failures become error entries; the
/// command itself fails only on unreadable configuration.
pub fn cmd_score(cfg: &ScoreConfig, providers: &Providers) -> Result<RunReport, PipelineError> {
    cfg.weights.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
    let manifest = load_manifest(&cfg.manifest)?;
    let inverter = cfg.inverter.build()?;
    let mut warnings = manifest_inversion_warnings(&manifest.records, inverter.as_ref());
    let inv = inverter.as_deref();
    let results = with_workers(cfg.workers, || {
        map_items(&manifest.records, parallel_ok(inverter.as_ref()), |rec| {
            record_metrics(rec, providers, inv).map(|m| (ScoreSample::from_metrics(rec.record_id.clone(), rec.label, &m, &cfg.weights), m))
        })
    })?;
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for (rec, res) in manifest.records.iter().zip(results) {
        match res {
            Ok((sample, m)) => {
                let tau = tau_for(cfg.thresholds.as_ref(), &rec.generator_tag, &mut warnings);
                rows.push(RecordRow::new(&sample, &rec.generator_tag, &m, tau));
            }
            Err(e) => errors.push(failure(&rec.record_id, e.kind)),
        }
    }
    warnings.dedup();
    info!("scored {} of {} records", rows.len(), manifest.len());
    let echo = json!({
        "manifest": cfg.manifest.display().to_string(),
        "weights": cfg.weights,
        "thresholds": cfg.thresholds,
        "inverter": cfg.inverter,
        "providers": providers.describe(),
    });
    Ok(RunReport::assemble("score", echo, metadata(providers, inverter.as_ref(), cfg.workers), rows, Vec::new(), errors, warnings))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrateConfig {
    /// One mixed manifest or separate real and fake manifests; records are
    /// split by their own labels.
    pub manifests: Vec<PathBuf>,
    /// Tag stored with the result. Defaults to the fakes' generator when they
    /// share one, else `default`.
    pub generator_tag: Option<String>,
    pub de: DeConfig,
    pub sigma: f64,
    pub fpr: f64,
    pub inverter: InverterChoice,
    /// When set, fakes are attacked and a security threshold is fitted too.
    pub attack: Option<AttackConfig>,
    #[serde(skip)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrateOutcome {
    pub result: CalibrationResult,
    pub errors: Vec<RecordFailure>,
    pub warnings: Vec<String>,
}

fn attacked_sample(
    rec: &PairRecord,
    inverter: &dyn Inverter,
    w: &WeightVector,
    providers: &Providers,
    attack: &AttackConfig,
) -> Result<ScoreSample, AdversaryError> {
    let x = load_image(&rec.original())?;
    let cfg = AttackConfig { direction: Direction::Maximize, rng_seed: id_seed(attack.rng_seed, &rec.record_id), ..*attack };
    let result = pgd_attack(&x, inverter, w, providers, &cfg)?;
    let y = invert_checked(inverter, &result.perturbed(&x))?;
    let m = metric_vector(&x, &y, providers, None)?;
    Ok(ScoreSample::from_metrics(rec.record_id.clone(), Label::Fake, &m, w))
}

pub fn cmd_calibrate(cfg: &CalibrateConfig, providers: &Providers) -> Result<CalibrateOutcome, PipelineError> {
    if cfg.manifests.is_empty() {
        return Err(PipelineError::Config("calibration needs at least one manifest".into()));
    }
    cfg.de.validate()?;
    let inverter = cfg.inverter.build()?;
    if cfg.attack.is_some() && inverter.is_none() {
        return Err(AdversaryError::LiveInverterRequired.into());
    }
    if let Some(a) = &cfg.attack {
        a.validate()?;
    }
    let mut records = Vec::new();
    for path in &cfg.manifests {
        records.extend(load_manifest(path)?.records);
    }
    let mut warnings = manifest_inversion_warnings(&records, inverter.as_ref());
    let inv = inverter.as_deref();
    let parallel = parallel_ok(inverter.as_ref());
    let results = with_workers(cfg.workers, || {
        map_items(&records, parallel, |rec| {
            record_metrics(rec, providers, inv).map_err(|e| failure(&rec.record_id, e.kind))
        })
    })?;
    let mut errors = Vec::new();
    let (mut real, mut fake): (Vec<(String, MetricVector)>, Vec<(String, MetricVector)>) = (Vec::new(), Vec::new());
    let mut fake_records = Vec::new();
    for (rec, res) in records.iter().zip(results) {
        match (res, rec.label) {
            (Ok(m), Label::Real) => real.push((rec.record_id.clone(), m)),
            (Ok(m), Label::Fake) => {
                fake.push((rec.record_id.clone(), m));
                fake_records.push(rec.clone());
            }
            (Err(e), _) => errors.push(e),
        }
    }
    let tag = cfg.generator_tag.clone().unwrap_or_else(|| {
        let mut tags: Vec<&str> = fake_records.iter().map(|r| r.generator_tag.as_str()).collect();
        tags.sort_unstable();
        tags.dedup();
        match tags.as_slice() {
            [one] => one.to_string(),
            _ => "default".to_string(),
        }
    });
    info!("fitting weights on {} real and {} fake records", real.len(), fake.len());
    let real_m: Vec<MetricVector> = real.iter().map(|(_, m)| *m).collect();
    let fake_m: Vec<MetricVector> = fake.iter().map(|(_, m)| *m).collect();
    let fit = with_workers(cfg.workers, || fit_weights(&real_m, &fake_m, &cfg.de, cfg.sigma))??;
    if !fit.converged {
        warnings.push(format!("optimizer stopped after {} generations without meeting the tolerance", fit.generations));
    }
    let mut result = assemble_result(&tag, &fit, &real, &fake, cfg.fpr, &cfg.de)?;
    if let (Some(attack), Some(inv)) = (&cfg.attack, inverter.as_deref()) {
        let w = result.weights;
        let attacked = with_workers(cfg.workers, || {
            map_items(&fake_records, parallel, |rec| {
                attacked_sample(rec, inv, &w, providers, attack).map_err(|e| failure(&rec.record_id, e))
            })
        })?;
        let (attacked, attack_errors) = split(attacked);
        errors.extend(attack_errors);
        let values: Vec<f64> = attacked.iter().map(|s| s.a_index).collect();
        let tau_sec = calibrate_security_threshold(&values, cfg.fpr)?;
        result.tau_security = Some(tau_sec.max(result.tau_safety));
        if tau_sec < result.tau_safety {
            warnings.push(format!(
                "attacked fakes gave a threshold {tau_sec} below the clean one; the clean threshold is kept as the floor"
            ));
        }
        result.attacked_fake_scores = attacked;
        result.attack_config = Some(serde_json::to_value(attack).expect("attack config serializes"));
    }
    errors.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    for w in &warnings {
        warn!("{w}");
    }
    Ok(CalibrateOutcome { result, errors, warnings })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRunConfig {
    pub manifest: PathBuf,
    pub weights: WeightVector,
    pub thresholds: ThresholdRegistry,
    /// Base settings; the direction comes from `direction` and the seed is
    /// mixed with each record id.
    pub attack: AttackConfig,
    pub direction: DirectionPolicy,
    pub inverter: InverterChoice,
    /// Where to write original, perturbed and amplified-delta images.
    pub dump_dir: Option<PathBuf>,
    #[serde(skip)]
    pub workers: Option<usize>,
}

fn attack_record(
    rec: &PairRecord,
    cfg: &AttackRunConfig,
    inverter: &dyn Inverter,
    providers: &Providers,
) -> Result<(RecordRow, AttackRow), String> {
    let tau = cfg
        .thresholds
        .lookup(&rec.generator_tag)
        .ok_or_else(|| format!("no threshold for generator `{}`", rec.generator_tag))?
        .tau_safety;
    let x = load_image(&rec.original()).map_err(|e| e.to_string())?;
    let y = invert_checked(inverter, &x).map_err(|e| e.to_string())?;
    let m = metric_vector(&x, &y, providers, None).map_err(|e| e.to_string())?;
    let before = ScoreSample::from_metrics(rec.record_id.clone(), rec.label, &m, &cfg.weights);
    let direction = cfg.direction.resolve(rec.label);
    let acfg = AttackConfig { direction, rng_seed: id_seed(cfg.attack.rng_seed, &rec.record_id), ..cfg.attack };
    let result = pgd_attack(&x, inverter, &cfg.weights, providers, &acfg).map_err(|e| e.to_string())?;
    if let Some(dir) = &cfg.dump_dir {
        dump_attack_images(&x, &result, dir, &rec.record_id).map_err(|e| e.to_string())?;
    }
    let row = AttackRow {
        record_id: rec.record_id.clone(),
        label: rec.label,
        generator_tag: rec.generator_tag.clone(),
        direction,
        tau,
        a_index_before: result.a_index_before,
        a_index_after: result.a_index_after,
        decision_before: classify(result.a_index_before, tau),
        decision_after: classify(result.a_index_after, tau),
        linf_norm: result.linf_norm,
        best_iteration: result.best_iteration,
    };
    Ok((RecordRow::new(&before, &rec.generator_tag, &m, Some(tau)), row))
}

pub fn cmd_attack(cfg: &AttackRunConfig, providers: &Providers) -> Result<RunReport, PipelineError> {
    cfg.weights.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
    cfg.attack.validate()?;
    let inverter = cfg.inverter.build()?.ok_or(AdversaryError::LiveInverterRequired)?;
    let manifest = load_manifest(&cfg.manifest)?;
    let mut warnings = Vec::new();
    if manifest.records.iter().any(|r| r.inverted_path.is_some() || r.precomputed.is_some()) {
        warnings.push("manifest inversions and precomputed metrics are ignored; attacks re-run the live inverter".into());
    }
    let parallel = inverter.descriptor().thread_safe;
    let results = with_workers(cfg.workers, || {
        map_items(&manifest.records, parallel, |rec| {
            attack_record(rec, cfg, inverter.as_ref(), providers).map_err(|e| failure(&rec.record_id, e))
        })
    })?;
    let (pairs, errors) = split(results);
    let (rows, attack_rows): (Vec<RecordRow>, Vec<AttackRow>) = pairs.into_iter().unzip();
    let mut attack_rows = attack_rows;
    attack_rows.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    let echo = json!({
        "manifest": cfg.manifest.display().to_string(),
        "weights": cfg.weights,
        "thresholds": cfg.thresholds,
        "attack": cfg.attack,
        "direction": cfg.direction,
        "inverter": cfg.inverter,
        "providers": providers.describe(),
    });
    let mut meta = metadata(providers, Some(&inverter), cfg.workers);
    meta["asr_definition"] = json!(ASR_DEFINITION);
    let mut report = RunReport::assemble("attack", echo, meta, rows, Vec::new(), errors, warnings);
    report.attack = Some(AttackReport::from_rows(attack_rows));
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CandidateChoice {
    Synthetic { height: usize, width: usize, channels: usize },
    Files { paths: Vec<PathBuf> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackerSimRunConfig {
    pub prompt_tag: String,
    pub candidates: CandidateChoice,
    pub sim: AttackerSimConfig,
    pub weights: WeightVector,
    pub thresholds: Option<ThresholdRegistry>,
    /// Registry key used to look up thresholds.
    pub generator_tag: String,
    pub inverter: InverterChoice,
    #[serde(skip)]
    pub workers: Option<usize>,
}

pub fn cmd_attacker_sim(cfg: &AttackerSimRunConfig, providers: &Providers) -> Result<RunReport, PipelineError> {
    cfg.weights.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
    let inverter = cfg.inverter.build()?.ok_or(AdversaryError::LiveInverterRequired)?;
    let source: Box<dyn CandidateSource> = match &cfg.candidates {
        CandidateChoice::Synthetic { height, width, channels } => {
            Box::new(SyntheticGenerator { height: *height, width: *width, channels: *channels })
        }
        CandidateChoice::Files { paths } => Box::new(FileCandidates { paths: paths.clone() }),
    };
    let mut warnings = Vec::new();
    let entry = cfg.thresholds.as_ref().and_then(|r| r.lookup(&cfg.generator_tag));
    if cfg.thresholds.is_some() && entry.is_none() {
        warnings.push(format!("no threshold for generator `{}`", cfg.generator_tag));
    }
    let sim = with_workers(cfg.workers, || {
        attacker_sim(source.as_ref(), &cfg.prompt_tag, &cfg.sim, &cfg.weights, providers, inverter.as_ref(), entry)
    })??;
    let echo = json!({
        "prompt_tag": cfg.prompt_tag,
        "candidates": cfg.candidates,
        "sim": cfg.sim,
        "weights": cfg.weights,
        "thresholds": entry,
        "inverter": cfg.inverter,
        "providers": providers.describe(),
    });
    let mut report = RunReport::assemble(
        "attacker-sim",
        echo,
        metadata(providers, Some(&inverter), cfg.workers),
        Vec::new(),
        Vec::new(),
        Vec::new(),
        warnings,
    );
    report.attacker_sim = Some(sim);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoConfig {
    pub manifest: PathBuf,
    pub sample_count: usize,
    pub weights: WeightVector,
    pub thresholds: Option<ThresholdRegistry>,
    pub inverter: InverterChoice,
    #[serde(skip)]
    pub workers: Option<usize>,
}

fn frame_index(
    v: &VideoRecord,
    i: usize,
    w: &WeightVector,
    providers: &Providers,
    inverter: Option<&dyn Inverter>,
) -> Result<f64, String> {
    let load = |p: &Path| load_image(p).map_err(|e| format!("frame {i}: {e}"));
    let x = load(&v.frame_path(i))?;
    let y: ImageBuffer = match (v.inverted_frame_path(i), inverter) {
        (Some(p), _) => load(&p)?,
        (None, Some(inv)) => invert_checked(inv, &x).map_err(|e| format!("frame {i}: {e}"))?,
        (None, None) => return Err("no inverted frames in the manifest and no inverter configured".into()),
    };
    let m = metric_vector(&x, &y, providers, None).map_err(|e| format!("frame {i}: {e}"))?;
    Ok(ScoreSample::from_metrics(String::new(), v.label, &m, w).a_index)
}

fn score_video(
    v: &VideoRecord,
    cfg: &VideoConfig,
    providers: &Providers,
    inverter: Option<&dyn Inverter>,
    tau: Option<f64>,
) -> Result<VideoRow, String> {
    let plan = plan_frames(v.frames.len(), cfg.sample_count).map_err(|e| e.to_string())?;
    let frames = plan
        .indices
        .iter()
        .map(|&i| {
            frame_index(v, i, &cfg.weights, providers, inverter)
                .map(|a_index| FrameScore { frame_index: i, path: v.frames[i].clone(), a_index })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let values: Vec<f64> = frames.iter().map(|f| f.a_index).collect();
    let a_index = video_a_index(&values).map_err(|e| e.to_string())?;
    Ok(VideoRow {
        video_id: v.video_id.clone(),
        label: v.label,
        generator_tag: v.generator_tag.clone(),
        plan,
        frames,
        a_index,
        tau,
        decision: tau.map(|t| classify(a_index, t)),
    })
}

/// Scores each video as the mean index of its sampled frames. A video whose
/// frames cannot be read becomes an error entry; the rest proceed.
pub fn cmd_video(cfg: &VideoConfig, providers: &Providers) -> Result<RunReport, PipelineError> {
    cfg.weights.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
    if cfg.sample_count == 0 {
        return Err(PipelineError::Config("frame sample count must be positive".into()));
    }
    let videos = load_video_manifest(&cfg.manifest)?;
    let inverter = cfg.inverter.build()?;
    let mut warnings = Vec::new();
    let taus: Vec<Option<f64>> = videos
        .iter()
        .map(|v| tau_for(cfg.thresholds.as_ref(), v.generator_tag.as_deref().unwrap_or("default"), &mut warnings))
        .collect();
    warnings.dedup();
    let inv = inverter.as_deref();
    let indexed: Vec<(usize, &VideoRecord)> = videos.iter().enumerate().collect();
    let results = with_workers(cfg.workers, || {
        map_items(&indexed, parallel_ok(inverter.as_ref()), |&(k, v)| {
            score_video(v, cfg, providers, inv, taus[k]).map_err(|e| failure(&v.video_id, e))
        })
    })?;
    let (rows, errors) = split(results);
    let echo = json!({
        "manifest": cfg.manifest.display().to_string(),
        "sample_count": cfg.sample_count,
        "weights": cfg.weights,
        "thresholds": cfg.thresholds,
        "inverter": cfg.inverter,
        "providers": providers.describe(),
    });
    Ok(RunReport::assemble("video", echo, metadata(providers, inverter.as_ref(), cfg.workers), Vec::new(), rows, errors, warnings))
}

/// A stored report with its summaries recomputed from the rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportCheck {
    pub report: RunReport,
    /// Empty when the stored summaries agree with the rows.
    pub mismatches: Vec<String>,
}

pub fn cmd_report(path: &Path) -> Result<ReportCheck, PipelineError> {
    let mut report = RunReport::load(path)?;
    let mismatches = report.inconsistencies();
    let (summary, histogram) = report.recompute();
    report.summary = summary;
    report.histogram = histogram;
    if let Some(a) = report.attack.take() {
        report.attack = Some(AttackReport::from_rows(a.rows));
    }
    Ok(ReportCheck { report, mismatches })
}
