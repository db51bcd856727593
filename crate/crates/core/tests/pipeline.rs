mod common;

use authindex::adversary::AttackConfig;
use authindex::calibrate::{empirical_fpr, DeConfig, ThresholdRegistry};
use authindex::index::{Label, WeightVector};
use authindex::inverters::{Inverter, ReferenceInverterConfig};
use authindex::metrics::Providers;
use authindex::pipeline::{
    auc, cmd_attack, cmd_calibrate, cmd_report, cmd_score, cmd_video, AttackRunConfig, CalibrateConfig, DirectionPolicy,
    InverterChoice, PipelineError, RunReport, ScoreConfig, VideoConfig,
};
use authindex::synth::natural_image;
use common::{reference, separable_specs, write_corpus, PairSpec};

const IDENTITY_A_INDEX: f64 = 0.038_411;

fn score_cfg(manifest: std::path::PathBuf) -> ScoreConfig {
    ScoreConfig {
        manifest,
        weights: WeightVector::published(),
        thresholds: None,
        inverter: InverterChoice::External,
        workers: Some(2),
    }
}

#[test]
fn identity_pairs_score_the_identity_index() {
    let dir = tempfile::tempdir().unwrap();
    let specs: Vec<PairSpec> = (0..4)
        .map(|i| {
            let x = natural_image(16, 16, 3, i);
            PairSpec::new(format!("id{i}"), Label::Real, x.clone(), Some(x))
        })
        .collect();
    let report = cmd_score(&score_cfg(write_corpus(dir.path(), "m.jsonl", &specs)), &Providers::reference()).unwrap();
    assert_eq!(report.per_record_scores.len(), 4);
    for row in &report.per_record_scores {
        assert!((row.a_index - IDENTITY_A_INDEX).abs() < 1e-5, "{}", row.a_index);
        assert_eq!(row.psnr, 100.0);
    }
    assert_eq!(report.exit_code(), 0);
}

#[test]
fn empty_manifest_is_a_successful_empty_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.jsonl");
    std::fs::write(&path, "").unwrap();
    let report = cmd_score(&score_cfg(path), &Providers::reference()).unwrap();
    assert!(report.per_record_scores.is_empty() && report.errors.is_empty());
    assert_eq!(report.exit_code(), 0);
    assert!(report.scores_csv().starts_with("record_id,label"));
}

#[test]
fn unreadable_image_becomes_an_error_entry() {
    let dir = tempfile::tempdir().unwrap();
    let specs: Vec<PairSpec> = (0..3)
        .map(|i| {
            let x = natural_image(16, 16, 1, i);
            PairSpec::new(format!("r{i}"), Label::Fake, x.clone(), Some(x))
        })
        .collect();
    let manifest = write_corpus(dir.path(), "m.jsonl", &specs);
    std::fs::write(dir.path().join("img/r1.png"), b"not a png").unwrap();
    let report = cmd_score(&score_cfg(manifest), &Providers::reference()).unwrap();
    assert_eq!(report.per_record_scores.len(), 2);
    assert_eq!(report.errors.len(), 1);
    assert_eq!(report.errors[0].record_id, "r1");
    assert_eq!(report.exit_code(), 0);
}

#[test]
fn all_records_failing_sets_exit_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    std::fs::write(&path, "{\"id\":\"a\",\"original\":\"missing.png\",\"label\":\"real\",\"generator\":\"g\"}\n").unwrap();
    let report = cmd_score(&score_cfg(path), &Providers::reference()).unwrap();
    assert_eq!(report.exit_code(), 1);
}

#[test]
fn bad_manifest_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    std::fs::write(&path, "{\"id\":\"a\",\"original\":\"x.png\",\"generator\":\"g\"}\n").unwrap();
    let err = cmd_score(&score_cfg(path), &Providers::reference()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn thresholds_drive_decisions_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let specs = separable_specs("s", 6, 6, 16, 3);
    let mut cfg = score_cfg(write_corpus(dir.path(), "m.jsonl", &specs));
    let report = cmd_score(&cfg, &Providers::reference()).unwrap();
    let mut fakes: Vec<f64> =
        report.per_record_scores.iter().filter(|r| r.label == Label::Fake).map(|r| r.a_index).collect();
    fakes.sort_by(f64::total_cmp);
    cfg.thresholds = Some(ThresholdRegistry::single(*fakes.last().unwrap() + 1e-9));
    let report = cmd_score(&cfg, &Providers::reference()).unwrap();
    assert_eq!(report.summary.fake.authentic, 0);
    assert!(report.inconsistencies().is_empty());
    let hist_total: usize = report.histogram.real.iter().chain(&report.histogram.fake).sum();
    assert_eq!(hist_total, report.per_record_scores.len());
}

#[test]
fn score_tables_are_independent_of_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let specs: Vec<PairSpec> =
        (0..12).map(|i| PairSpec::new(format!("w{i:02}"), Label::Real, natural_image(16, 16, 3, 40 + i), None)).collect();
    let manifest = write_corpus(dir.path(), "m.jsonl", &specs);
    let run = |workers| {
        let cfg = ScoreConfig {
            inverter: InverterChoice::Reference(ReferenceInverterConfig::default()),
            workers: Some(workers),
            ..score_cfg(manifest.clone())
        };
        cmd_score(&cfg, &Providers::reference()).unwrap()
    };
    let (a, b) = (run(1), run(4));
    assert_eq!(a.scores_csv(), b.scores_csv());
    assert_eq!(a.to_json_string().replace("\"workers\": 1", "\"workers\": 4"), b.to_json_string());
    assert_eq!(a.run_id, b.run_id);
}

fn calibrate_cfg(manifests: Vec<std::path::PathBuf>, attack: Option<AttackConfig>) -> CalibrateConfig {
    CalibrateConfig {
        manifests,
        generator_tag: None,
        de: DeConfig { max_iterations: 120, ..DeConfig::with_seed(11) },
        sigma: 0.9,
        fpr: 0.01,
        inverter: InverterChoice::Reference(ReferenceInverterConfig::default()),
        attack,
        workers: None,
    }
}

#[test]
fn calibration_on_separable_corpora_controls_heldout_fpr() {
    let dir = tempfile::tempdir().unwrap();
    let real = write_corpus(dir.path(), "real.jsonl", &separable_specs("r", 40, 0, 16, 1));
    let fake = write_corpus(dir.path(), "fake.jsonl", &separable_specs("f", 0, 150, 16, 2));
    let outcome = cmd_calibrate(&calibrate_cfg(vec![real, fake], None), &Providers::reference()).unwrap();
    let r = &outcome.result;
    assert!(outcome.errors.is_empty());
    assert!(r.overlap <= 0.1, "overlap {}", r.overlap);
    assert_eq!(r.generator_tag, "synthetic");
    r.check_invariants().unwrap();
    let held_dir = tempfile::tempdir().unwrap();
    let held = write_corpus(held_dir.path(), "held.jsonl", &separable_specs("h", 0, 200, 16, 9));
    let cfg = ScoreConfig { weights: r.weights, ..score_cfg(held) };
    let report = cmd_score(&cfg, &Providers::reference()).unwrap();
    let scores: Vec<f64> = report.per_record_scores.iter().map(|s| s.a_index).collect();
    let fpr = empirical_fpr(&scores, r.tau_safety);
    assert!(fpr <= 0.01, "held-out FPR {fpr}");
}

#[test]
fn security_threshold_never_drops_below_safety() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_corpus(dir.path(), "mixed.jsonl", &separable_specs("m", 20, 100, 16, 4));
    let attack = AttackConfig { iterations: 0, ..AttackConfig::default() };
    let mut cfg = calibrate_cfg(vec![m], Some(attack));
    cfg.de.max_iterations = 40;
    let outcome = cmd_calibrate(&cfg, &Providers::reference()).unwrap();
    // attacked fakes are re-inverted live while clean scores used the manifest files
    let r = &outcome.result;
    assert!(r.tau_security.unwrap() >= r.tau_safety);
    assert_eq!(r.attacked_fake_scores.len(), 100);
    let live: Vec<f64> = r.attacked_fake_scores.iter().map(|s| s.a_index).collect();
    let live_tau = authindex::calibrate::calibrate_threshold(&live, 0.01).unwrap();
    assert_eq!(r.tau_security.unwrap(), live_tau.max(r.tau_safety));
}

#[test]
fn zero_iteration_attack_on_live_pairs_matches_safety_exactly() {
    let dir = tempfile::tempdir().unwrap();
    // no inverted files: clean scores and attacked scores both come from the live inverter
    let specs: Vec<PairSpec> = (0..120)
        .map(|i| {
            let label = if i < 20 { Label::Real } else { Label::Fake };
            PairSpec::new(format!("z{i:03}"), label, natural_image(16, 16, 3, 500 + i as u64), None)
        })
        .collect();
    let m = write_corpus(dir.path(), "mixed.jsonl", &specs);
    let attack = AttackConfig { iterations: 0, ..AttackConfig::default() };
    let mut cfg = calibrate_cfg(vec![m], Some(attack));
    cfg.de.max_iterations = 30;
    let o = cmd_calibrate(&cfg, &Providers::reference()).unwrap();
    assert_eq!(o.result.tau_security, Some(o.result.tau_safety));
}

#[test]
fn calibration_requires_enough_fakes() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_corpus(dir.path(), "mixed.jsonl", &separable_specs("q", 12, 12, 16, 5));
    let err = cmd_calibrate(&calibrate_cfg(vec![m], None), &Providers::reference()).unwrap_err();
    assert!(err.to_string().contains("need at least 100"), "{err}");
}

fn attack_cfg(manifest: std::path::PathBuf, tau: f64, iterations: usize) -> AttackRunConfig {
    AttackRunConfig {
        manifest,
        weights: WeightVector::published(),
        thresholds: ThresholdRegistry::single(tau),
        attack: AttackConfig { iterations, ..AttackConfig::default() },
        direction: DirectionPolicy::Auto,
        inverter: InverterChoice::Reference(ReferenceInverterConfig::default()),
        dump_dir: None,
        workers: None,
    }
}

#[test]
fn zero_iteration_attack_changes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let specs: Vec<PairSpec> = (0..6)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Real } else { Label::Fake };
            PairSpec::new(format!("a{i}"), label, natural_image(16, 16, 3, 70 + i), None)
        })
        .collect();
    let m = write_corpus(dir.path(), "m.jsonl", &specs);
    let report = cmd_attack(&attack_cfg(m, 0.02, 0), &Providers::reference()).unwrap();
    let a = report.attack.as_ref().unwrap();
    assert_eq!(a.summary.before, a.summary.after);
    assert!(a.summary.asr_fake.unwrap_or(0.0) == 0.0 && a.summary.asr_real.unwrap_or(0.0) == 0.0);
    assert!(report.inconsistencies().is_empty());
}

#[test]
fn attack_needs_a_live_inverter() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_corpus(dir.path(), "m.jsonl", &separable_specs("e", 1, 1, 16, 6));
    let cfg = AttackRunConfig { inverter: InverterChoice::External, ..attack_cfg(m, 0.02, 1) };
    let err = cmd_attack(&cfg, &Providers::reference()).unwrap_err();
    assert!(matches!(err, PipelineError::Adversary(authindex::adversary::AdversaryError::LiveInverterRequired)));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn attack_report_counts_match_rows() {
    let dir = tempfile::tempdir().unwrap();
    let specs: Vec<PairSpec> =
        (0..8).map(|i| PairSpec::new(format!("f{i}"), Label::Fake, natural_image(16, 16, 3, 90 + i), None)).collect();
    let m = write_corpus(dir.path(), "m.jsonl", &specs);
    let inv = reference(0.6, 0);
    let befores: Vec<f64> = specs
        .iter()
        .map(|s| {
            let y = inv.invert(&s.original).unwrap();
            let m = authindex::metrics::metric_vector(&s.original, &y, &Providers::reference(), None).unwrap();
            authindex::index::ScoreSample::from_metrics("x", Label::Fake, &m, &WeightVector::published()).a_index
        })
        .collect();
    let tau = befores.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1e-6;
    let report = cmd_attack(&attack_cfg(m, tau, 5), &Providers::reference()).unwrap();
    let a = report.attack.as_ref().unwrap();
    assert_eq!(a.rows.len(), 8);
    let flipped = a.rows.iter().filter(|r| r.decision_before != r.decision_after).count();
    assert_eq!(a.summary.flipped_fake, flipped);
    assert_eq!(a.summary.correct_before_fake, 8);
    for r in &a.rows {
        assert!(r.linf_norm <= 8.0 / 255.0 + 1e-12);
        assert!(r.a_index_after >= r.a_index_before);
    }
}

fn write_video_manifest(dir: &std::path::Path, videos: &[(&str, Label, Vec<u64>)], missing: Option<&str>) -> std::path::PathBuf {
    std::fs::create_dir_all(dir.join("frames")).unwrap();
    let mut text = String::new();
    for (id, label, seeds) in videos {
        let mut frames = Vec::new();
        let mut inverted = Vec::new();
        for (k, seed) in seeds.iter().enumerate() {
            let x = natural_image(16, 16, 3, *seed);
            let f = format!("frames/{id}_{k}.png");
            let g = format!("frames/{id}_{k}_inv.png");
            let fidelity = if *label == Label::Fake { 0.95 } else { 0.3 };
            authindex::image::save_image(&x, &dir.join(&f)).unwrap();
            authindex::image::save_image(&reference(fidelity, 1).invert(&x).unwrap(), &dir.join(&g)).unwrap();
            frames.push(f);
            inverted.push(g);
        }
        if missing == Some(*id) {
            std::fs::remove_file(dir.join(&frames[0])).unwrap();
        }
        text.push_str(
            &serde_json::json!({"id": id, "frames": frames, "inverted_frames": inverted, "label": label}).to_string(),
        );
        text.push('\n');
    }
    let path = dir.join("videos.jsonl");
    std::fs::write(&path, text).unwrap();
    path
}

fn video_cfg(manifest: std::path::PathBuf) -> VideoConfig {
    VideoConfig {
        manifest,
        sample_count: 8,
        weights: WeightVector::published(),
        thresholds: None,
        inverter: InverterChoice::External,
        workers: None,
    }
}

#[test]
fn separable_videos_have_unit_auc() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_video_manifest(
        dir.path(),
        &[("real", Label::Real, (0..10).collect()), ("fake", Label::Fake, (100..110).collect())],
        None,
    );
    // the published weights were fitted to learned providers and are not
    // monotone in fidelity under the reference ones; ssim + clip is
    let weights = WeightVector::new([0.0, 1.0, 0.0, 1.0], 0.9).unwrap();
    let report = cmd_video(&VideoConfig { weights, ..video_cfg(m) }, &Providers::reference()).unwrap();
    assert_eq!(report.videos.len(), 2);
    let real = report.videos.iter().find(|v| v.label == Label::Real).unwrap();
    let fake = report.videos.iter().find(|v| v.label == Label::Fake).unwrap();
    assert!(real.a_index > fake.a_index);
    assert_eq!(report.summary.auc, Some(1.0));
    assert_eq!(auc(&[real.a_index], &[fake.a_index]), Some(1.0));
    assert_eq!(real.plan.indices, vec![0, 1, 3, 4, 5, 6, 8, 9]);
}

#[test]
fn identity_frame_videos_equal_their_frame_index() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("f")).unwrap();
    let x = natural_image(16, 16, 3, 1);
    authindex::image::save_image(&x, &dir.path().join("f/a.png")).unwrap();
    let frames = vec!["f/a.png"; 3];
    let line = serde_json::json!({"id": "v", "frames": frames, "inverted_frames": frames, "label": "real"});
    std::fs::write(dir.path().join("v.jsonl"), format!("{line}\n")).unwrap();
    let report = cmd_video(&video_cfg(dir.path().join("v.jsonl")), &Providers::reference()).unwrap();
    let v = &report.videos[0];
    assert!(v.frames.iter().all(|f| f.a_index == v.a_index));
    assert!((v.a_index - IDENTITY_A_INDEX).abs() < 1e-5);
}

#[test]
fn missing_frame_fails_only_its_video() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_video_manifest(
        dir.path(),
        &[("ok", Label::Real, (0..4).collect()), ("broken", Label::Fake, (10..14).collect())],
        Some("broken"),
    );
    let report = cmd_video(&video_cfg(m), &Providers::reference()).unwrap();
    assert_eq!(report.videos.len(), 1);
    assert_eq!(report.errors.len(), 1);
    assert_eq!(report.errors[0].record_id, "broken");
}

#[test]
fn report_recheck_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let specs = separable_specs("t", 4, 4, 16, 8);
    let mut cfg = score_cfg(write_corpus(dir.path(), "m.jsonl", &specs));
    cfg.thresholds = Some(ThresholdRegistry::single(0.03));
    let report = cmd_score(&cfg, &Providers::reference()).unwrap();
    let path = dir.path().join("report.json");
    report.write_json(&path).unwrap();
    let check = cmd_report(&path).unwrap();
    assert!(check.mismatches.is_empty());
    assert_eq!(check.report, report);

    let mut tampered: RunReport = RunReport::load(&path).unwrap();
    tampered.per_record_scores[0].a_index = 0.99;
    tampered.write_json(&path).unwrap();
    let check = cmd_report(&path).unwrap();
    assert!(!check.mismatches.is_empty());
}
