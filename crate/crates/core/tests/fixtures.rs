mod common;

use authindex::calibrate::ThresholdRegistry;
use authindex::index::WeightVector;
use authindex::inverters::{load_manifest, parse_manifest, MANIFEST_SCHEMA_VERSION};
use authindex::metrics::Providers;
use authindex::pipeline::{cmd_score, InverterChoice, ScoreConfig};
use common::fixtures_dir;
use serde_json::json;

#[test]
fn adapter_manifest_validates_against_schema_v1() {
    let m = load_manifest(&fixtures_dir().join("adapter/manifest.jsonl")).unwrap();
    assert_eq!(m.len(), 4);
    let header = m.header.as_ref().unwrap();
    assert_eq!(header["schema_version"], MANIFEST_SCHEMA_VERSION);
    for r in &m.records {
        assert!(r.original().exists(), "{}", r.original().display());
        assert!(r.inverted().unwrap().exists());
        let p = r.precomputed.unwrap();
        assert!(p.psnr.is_none() && p.ssim.is_none());
        let clip = p.clip.unwrap();
        assert!((-1.0..=1.0).contains(&clip));
        assert!(p.lpips.unwrap() >= 0.0);
    }
}

#[test]
fn adapter_header_echoes_default_inversion_settings() {
    let m = load_manifest(&fixtures_dir().join("adapter/manifest.jsonl")).unwrap();
    let spec = &m.header.unwrap()["spec"];
    let expected = json!({
        "steps": 28, "guidance": 3.5, "eta_base": 0.95, "eta_trend": "constant",
        "eta_start": 0, "eta_end": 9, "gamma": 0.5, "seed": 42, "precision_tag": "half-precision",
    });
    for (k, v) in expected.as_object().unwrap() {
        assert_eq!(&spec[k], v, "{k}");
    }
}

#[test]
fn adapter_identical_pair_has_identity_channels() {
    let m = load_manifest(&fixtures_dir().join("adapter/manifest.jsonl")).unwrap();
    let control = m.records.iter().find(|r| r.record_id == "a003").unwrap();
    let p = control.precomputed.unwrap();
    assert!(p.lpips.unwrap() <= 1e-4);
    assert!(p.clip.unwrap() >= 0.999);
}

#[test]
fn adapter_manifest_round_trips_unchanged() {
    let path = fixtures_dir().join("adapter/manifest.jsonl");
    let m = load_manifest(&path).unwrap();
    let again = parse_manifest(&m.to_jsonl(), path.parent().unwrap()).unwrap();
    assert_eq!(m.header, again.header);
    assert_eq!(m.records, again.records);
    assert_eq!(again.to_jsonl(), m.to_jsonl());
}

#[test]
fn adapter_manifest_scores_without_a_live_inverter() {
    let cfg = ScoreConfig {
        manifest: fixtures_dir().join("adapter/manifest.jsonl"),
        weights: WeightVector::published(),
        thresholds: Some(ThresholdRegistry::load(&fixtures_dir().join("published_thresholds.json")).unwrap()),
        inverter: InverterChoice::External,
        workers: None,
    };
    let report = cmd_score(&cfg, &Providers::reference()).unwrap();
    assert!(report.errors.is_empty(), "{:?}", report.errors);
    assert_eq!(report.per_record_scores.len(), 4);
    let control = report.per_record_scores.iter().find(|r| r.record_id == "a003").unwrap();
    assert_eq!((control.psnr, control.ssim, control.lpips, control.clip), (100.0, 1.0, 0.0, 1.0));
    assert!(report.per_record_scores.iter().all(|r| r.tau == Some(0.0368)));
    assert!(report.inconsistencies().is_empty());
    assert_eq!(report.summary.real.total, 2);
}

#[test]
fn published_threshold_registry_loads() {
    let reg = ThresholdRegistry::load(&fixtures_dir().join("published_thresholds.json")).unwrap();
    let tau = |k: &str| reg.lookup(k).unwrap().tau_safety;
    assert_eq!(tau("SD2.1"), 0.015);
    assert_eq!(tau("SD3-medium"), 0.0368);
    assert_eq!(tau("SD3.5-medium"), 0.0365);
    assert_eq!(tau("FluxDev"), 0.035);
    assert_eq!(tau("FluxDev+LoRA"), 0.038);
    assert!(reg.lookup("unknown").is_none());
    assert_eq!(reg.thresholds.len(), 5);
}
