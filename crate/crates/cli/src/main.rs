use std::path::{Path, PathBuf};
use std::process::ExitCode;

use authindex::adversary::{AttackConfig, AttackerSimConfig, Direction, GradientMode};
use authindex::calibrate::{DeConfig, ThresholdRegistry, DEFAULT_FPR, DEFAULT_SIGMA};
use authindex::index::WeightVector;
use authindex::inverters::ReferenceInverterConfig;
use authindex::metrics::Providers;
use authindex::pipeline::{
    cmd_attack, cmd_attacker_sim, cmd_calibrate, cmd_report, cmd_score, cmd_video, AttackRunConfig, AttackerSimRunConfig,
    CalibrateConfig, CandidateChoice, DirectionPolicy, InverterChoice, PipelineError, RunReport, ScoreConfig, VideoConfig,
};
use authindex::video::DEFAULT_SAMPLE_COUNT;
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info, warn};

#[derive(Parser)]
#[command(name = "authindex", version, about = "Inversion-based authenticity scoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score every record of a pair manifest.
    Score(ScoreArgs),
    /// Fit weights and thresholds from labeled manifests.
    Calibrate(CalibrateArgs),
    /// Run the perturbation attack on every record and report flips.
    Attack(AttackArgs),
    /// Sample candidates for one prompt, keep the best and refine it.
    AttackerSim(AttackerSimArgs),
    /// Score videos from their sampled frames.
    Video(VideoArgs),
    /// Re-check a stored report against its per-record rows.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum InverterKind {
    Reference,
    External,
}

#[derive(Clone, Copy, ValueEnum)]
enum GradientKind {
    Analytic,
    FiniteDifference,
}

#[derive(Args)]
struct Common {
    /// Output file (JSON); printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the per-record table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Seed for the optimizer, the attack and the reference inverter's noise.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; all cores when absent.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum, default_value = "reference")]
    inverter: InverterKind,
    #[arg(long, default_value_t = 0.6)]
    ref_fidelity: f64,
    #[arg(long, default_value_t = 1.5)]
    ref_blur: f64,
    #[arg(long, default_value_t = 0.01)]
    ref_noise: f64,
}

impl Common {
    fn inverter(&self) -> InverterChoice {
        match self.inverter {
            InverterKind::Reference => InverterChoice::Reference(ReferenceInverterConfig {
                blur_sigma: self.ref_blur,
                noise_sigma: self.ref_noise,
                noise_seed: self.seed,
                fidelity: self.ref_fidelity,
            }),
            InverterKind::External => InverterChoice::External,
        }
    }
}

#[derive(Args)]
struct AttackFlags {
    /// Budget as a fraction of the pixel maximum; `8/255` style fractions are accepted.
    #[arg(long, default_value = "8/255", value_parser = parse_fraction)]
    epsilon: f64,
    /// Defaults to a quarter of the budget.
    #[arg(long, value_parser = parse_fraction)]
    step_size: Option<f64>,
    #[arg(long, default_value_t = 40)]
    iterations: usize,
    #[arg(long, value_enum, default_value = "analytic")]
    gradient: GradientKind,
    /// Coordinates probed per step with finite differences.
    #[arg(long, default_value_t = 512)]
    fd_samples: usize,
}

impl AttackFlags {
    fn config(&self, seed: u64) -> AttackConfig {
        AttackConfig {
            step_size: self.step_size.unwrap_or(self.epsilon / 4.0),
            iterations: self.iterations,
            gradient_mode: match self.gradient {
                GradientKind::Analytic => GradientMode::Analytic,
                GradientKind::FiniteDifference => GradientMode::FiniteDifference,
            },
            fd_samples: self.fd_samples,
            rng_seed: seed,
            ..AttackConfig::with_epsilon(self.epsilon)
        }
    }
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Weight file or calibration result; the published weights when absent.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Threshold registry or calibration result.
    #[arg(long)]
    thresholds: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct CalibrateArgs {
    /// One mixed manifest, or one per class; repeat the flag.
    #[arg(long, required = true)]
    manifest: Vec<PathBuf>,
    /// Tag stored with the thresholds.
    #[arg(long)]
    generator: Option<String>,
    #[arg(long, default_value_t = DEFAULT_FPR)]
    fpr: f64,
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    sigma: f64,
    #[arg(long, default_value_t = 20)]
    population: usize,
    #[arg(long, default_value_t = 300)]
    max_generations: usize,
    /// Also attack every fake and fit a security threshold.
    #[arg(long)]
    attack: bool,
    #[command(flatten)]
    attack_flags: AttackFlags,
    /// Registry file to create or update with the new thresholds.
    #[arg(long)]
    registry: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    thresholds: PathBuf,
    /// `auto` pushes each record toward the wrong decision.
    #[arg(long, default_value = "auto")]
    direction: DirectionPolicy,
    #[command(flatten)]
    attack_flags: AttackFlags,
    /// Write original, perturbed and amplified-delta images here.
    #[arg(long)]
    dump_dir: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct AttackerSimArgs {
    #[arg(long)]
    prompt: String,
    #[arg(long, default_value_t = 100)]
    candidates: usize,
    /// Pre-rendered candidates (in seed order) instead of synthetic ones.
    #[arg(long)]
    candidate_file: Vec<PathBuf>,
    /// Side of the synthetic candidates in pixels.
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value = "default")]
    generator: String,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    thresholds: Option<PathBuf>,
    #[command(flatten)]
    attack_flags: AttackFlags,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct VideoArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SAMPLE_COUNT)]
    frames: usize,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    thresholds: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ReportArgs {
    /// A report written by another subcommand.
    #[arg(long)]
    input: PathBuf,
    /// Where to write the recomputed report.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    let value = match s.split_once('/') {
        Some((n, d)) => {
            let n: f64 = n.trim().parse().map_err(|e| format!("{s}: {e}"))?;
            let d: f64 = d.trim().parse().map_err(|e| format!("{s}: {e}"))?;
            n / d
        }
        None => s.trim().parse().map_err(|e| format!("{s}: {e}"))?,
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(format!("{s} is not a finite number"))
    }
}

fn config_err(msg: impl Into<String>) -> PipelineError {
    PipelineError::Config(msg.into())
}

/// Accepts a bare weight vector, `{"weights": ...}` or a calibration result.
fn load_weights(path: Option<&Path>) -> Result<WeightVector, PipelineError> {
    let Some(path) = path else {
        return Ok(WeightVector::published());
    };
    let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    let inner = value.get("weights").cloned().unwrap_or(value);
    let w: WeightVector = serde_json::from_value(inner).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    w.validate().map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    Ok(w)
}

fn load_thresholds(path: Option<&Path>) -> Result<Option<ThresholdRegistry>, PipelineError> {
    path.map(|p| ThresholdRegistry::load(p).map_err(config_err)).transpose()
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), PipelineError> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|source| PipelineError::Io { path: dir.to_path_buf(), source })?;
            }
            std::fs::write(path, text).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn emit_report(report: &RunReport, out: Option<&Path>, csv: Option<&Path>) -> Result<i32, PipelineError> {
    for w in &report.warnings {
        warn!("{w}");
    }
    for e in &report.errors {
        error!("{}: {}", e.record_id, e.error);
    }
    emit(&report.to_json_string(), out)?;
    if let Some(csv) = csv {
        report.write_csv(csv)?;
    }
    Ok(report.exit_code())
}

fn run(cli: Cli) -> Result<i32, PipelineError> {
    let providers = Providers::reference();
    match cli.command {
        Command::Score(a) => {
            let cfg = ScoreConfig {
                manifest: a.manifest,
                weights: load_weights(a.weights.as_deref())?,
                thresholds: load_thresholds(a.thresholds.as_deref())?,
                inverter: a.common.inverter(),
                workers: a.common.workers,
            };
            let report = cmd_score(&cfg, &providers)?;
            emit_report(&report, a.common.out.as_deref(), a.common.csv.as_deref())
        }
        Command::Calibrate(a) => {
            let seed = a.common.seed;
            let cfg = CalibrateConfig {
                manifests: a.manifest,
                generator_tag: a.generator,
                de: DeConfig { population: a.population, max_iterations: a.max_generations, ..DeConfig::with_seed(seed) },
                sigma: a.sigma,
                fpr: a.fpr,
                inverter: a.common.inverter(),
                attack: a.attack.then(|| a.attack_flags.config(seed)),
                workers: a.common.workers,
            };
            let outcome = cmd_calibrate(&cfg, &providers)?;
            for e in &outcome.errors {
                error!("{}: {}", e.record_id, e.error);
            }
            let r = &outcome.result;
            info!(
                "{}: overlap {:.4}, tau_safety {:.6}, tau_security {:?}, recall {:.3}",
                r.generator_tag, r.overlap, r.tau_safety, r.tau_security, r.recall_at_tau
            );
            let mut text = r.to_json();
            text.push('\n');
            emit(&text, a.common.out.as_deref())?;
            if let Some(path) = &a.registry {
                let mut reg = if path.exists() { ThresholdRegistry::load(path).map_err(config_err)? } else { ThresholdRegistry::default() };
                reg.insert_result(r);
                let mut text = serde_json::to_string_pretty(&reg).expect("registry serializes");
                text.push('\n');
                emit(&text, Some(path))?;
            }
            Ok(0)
        }
        Command::Attack(a) => {
            let cfg = AttackRunConfig {
                manifest: a.manifest,
                weights: load_weights(a.weights.as_deref())?,
                thresholds: ThresholdRegistry::load(&a.thresholds).map_err(config_err)?,
                attack: a.attack_flags.config(a.common.seed),
                direction: a.direction,
                inverter: a.common.inverter(),
                dump_dir: a.dump_dir,
                workers: a.common.workers,
            };
            let report = cmd_attack(&cfg, &providers)?;
            emit_report(&report, a.common.out.as_deref(), a.common.csv.as_deref())
        }
        Command::AttackerSim(a) => {
            let candidates = if a.candidate_file.is_empty() {
                CandidateChoice::Synthetic { height: a.size, width: a.size, channels: 3 }
            } else {
                CandidateChoice::Files { paths: a.candidate_file }
            };
            let cfg = AttackerSimRunConfig {
                prompt_tag: a.prompt,
                candidates,
                sim: AttackerSimConfig {
                    n_candidates: a.candidates,
                    refine: AttackConfig { direction: Direction::Maximize, ..a.attack_flags.config(a.common.seed) },
                },
                weights: load_weights(a.weights.as_deref())?,
                thresholds: load_thresholds(a.thresholds.as_deref())?,
                generator_tag: a.generator,
                inverter: a.common.inverter(),
                workers: a.common.workers,
            };
            let report = cmd_attacker_sim(&cfg, &providers)?;
            emit_report(&report, a.common.out.as_deref(), a.common.csv.as_deref())
        }
        Command::Video(a) => {
            let cfg = VideoConfig {
                manifest: a.manifest,
                sample_count: a.frames,
                weights: load_weights(a.weights.as_deref())?,
                thresholds: load_thresholds(a.thresholds.as_deref())?,
                inverter: a.common.inverter(),
                workers: a.common.workers,
            };
            let report = cmd_video(&cfg, &providers)?;
            emit_report(&report, a.common.out.as_deref(), a.common.csv.as_deref())
        }
        Command::Report(a) => {
            let check = cmd_report(&a.input)?;
            for m in &check.mismatches {
                error!("{m}");
            }
            emit(&check.report.to_json_string(), a.out.as_deref())?;
            if let Some(csv) = &a.csv {
                check.report.write_csv(csv)?;
            }
            Ok(if check.mismatches.is_empty() { 0 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
