//! ℓ∞-bounded sign-gradient attacks on the index through an inverter.
//!
//! The objective is `A(x, inv(x + delta))`: the reference image stays fixed
//! while the perturbed image goes through the inverter.

mod gradient;
mod sim;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{save_image, ImageBuffer, ImageError};
use crate::index::{a_index, composite_score, WeightVector};
use crate::inverters::{invert_checked, Inverter, InverterError};
use crate::metrics::{metric_vector, MetricError, Providers};

pub use gradient::{gradient, objective};
pub use sim::{attacker_sim, AttackerSimConfig, AttackerSimReport, CandidateSource, FileCandidates, SyntheticGenerator};

/// Largest accepted budget, as a fraction of the image maximum.
pub const MAX_EPSILON: f64 = 64.0 / 255.0;

#[derive(Debug, Error)]
pub enum AdversaryError {
    #[error("invalid attack config: {0}")]
    InvalidConfig(String),
    #[error("analytic gradients need a differentiable inverter, but {0} is not")]
    NonDifferentiableInverter(String),
    #[error("analytic gradients need provider derivatives, but {0} has none")]
    NonDifferentiableProvider(String),
    #[error("attacks need a live inverter; precomputed inversions cannot be re-run")]
    LiveInverterRequired,
    #[error("the candidate set is empty")]
    EmptyCandidateSet,
    #[error(transparent)]
    Inverter(#[from] InverterError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Maximize,
    Minimize,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Maximize => 1.0,
            Direction::Minimize => -1.0,
        }
    }

    fn improves(self, candidate: f64, incumbent: f64) -> bool {
        match self {
            Direction::Maximize => candidate > incumbent,
            Direction::Minimize => candidate < incumbent,
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "maximize" | "max" => Ok(Direction::Maximize),
            "minimize" | "min" => Ok(Direction::Minimize),
            _ => Err(format!("unknown direction `{s}` (expected maximize or minimize)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Budget as a fraction of the image maximum.
    pub epsilon: f64,
    /// Per-step size as a fraction of the image maximum.
    pub step_size: f64,
    pub iterations: usize,
    pub direction: Direction,
    pub gradient_mode: GradientMode,
    /// Coordinates probed per iteration in finite-difference mode.
    pub fd_samples: usize,
    pub rng_seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig::with_epsilon(8.0 / 255.0)
    }
}

impl AttackConfig {
    /// Defaults with `step_size = epsilon / 4`.
    pub fn with_epsilon(epsilon: f64) -> Self {
        AttackConfig {
            epsilon,
            step_size: epsilon / 4.0,
            iterations: 40,
            direction: Direction::Maximize,
            gradient_mode: GradientMode::Analytic,
            fd_samples: 512,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), AdversaryError> {
        let bad = |m: String| Err(AdversaryError::InvalidConfig(m));
        if !(self.epsilon >= 0.0 && self.epsilon <= MAX_EPSILON) {
            return bad(format!("epsilon must lie in [0, 64/255] (got {})", self.epsilon));
        }
        if !(self.step_size >= 0.0 && self.step_size <= 2.0 * self.epsilon) {
            return bad(format!("step size must lie in [0, 2 * epsilon] (got {})", self.step_size));
        }
        if self.fd_samples == 0 {
            return bad("fd_samples must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    /// Best perturbation, same layout as the input samples.
    #[serde(skip)]
    pub delta: Vec<f64>,
    pub a_index_before: f64,
    pub a_index_after: f64,
    /// Objective after each iterate, starting with the unperturbed input.
    pub objective_trace: Vec<f64>,
    /// Best objective so far, aligned with `objective_trace`.
    pub best_trace: Vec<f64>,
    pub best_iteration: usize,
    /// Largest absolute perturbation as a fraction of the image maximum.
    pub linf_norm: f64,
    pub config: AttackConfig,
}

impl AttackResult {
    pub fn perturbed(&self, x: &ImageBuffer) -> ImageBuffer {
        x.with_data(x.data().iter().zip(&self.delta).map(|(v, d)| v + d).collect()).expect("clamped")
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("attack result serializes")
    }
}

fn linf(delta: &[f64]) -> f64 {
    delta.iter().fold(0.0, |m, d| m.max(d.abs()))
}

fn sign(g: f64) -> f64 {
    if g > 0.0 {
        1.0
    } else if g < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Projected sign-gradient ascent (or descent) on `A(x, inv(x + delta))`.
pub fn pgd_attack(
    x: &ImageBuffer,
    inverter: &dyn Inverter,
    w: &WeightVector,
    providers: &Providers,
    cfg: &AttackConfig,
) -> Result<AttackResult, AdversaryError> {
    cfg.validate()?;
    if cfg.gradient_mode == GradientMode::Analytic && !inverter.descriptor().differentiable {
        return Err(AdversaryError::NonDifferentiableInverter(inverter.descriptor().name));
    }
    let max = x.max_value();
    let eps = cfg.epsilon * max;
    let step = cfg.step_size * max * cfg.direction.sign();
    let mut delta = vec![0.0; x.len()];
    let mut z = x.clone();
    let start = objective(x, &z, inverter, w, providers)?;
    let mut objective_trace = vec![start];
    let mut best_trace = vec![start];
    let (mut best, mut best_delta, mut best_iteration) = (start, delta.clone(), 0);
    for it in 0..cfg.iterations {
        let seed = cfg.rng_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(it as u64);
        let g = gradient(&z, x, inverter, w, providers, cfg.gradient_mode, cfg.fd_samples, seed)?;
        let data: Vec<f64> = x
            .data()
            .iter()
            .zip(delta.iter_mut())
            .zip(&g)
            .map(|((&xv, d), &gv)| {
                *d = (*d + step * sign(gv)).clamp(-eps, eps);
                (xv + *d).clamp(0.0, max)
            })
            .collect();
        z = x.with_data(data)?;
        for ((d, zv), xv) in delta.iter_mut().zip(z.data()).zip(x.data()) {
            *d = zv - xv;
        }
        debug_assert!(linf(&delta) <= eps * (1.0 + 1e-12));
        let value = objective(x, &z, inverter, w, providers)?;
        objective_trace.push(value);
        if cfg.direction.improves(value, best) {
            best = value;
            best_delta.clone_from(&delta);
            best_iteration = it + 1;
        }
        best_trace.push(best);
    }
    Ok(AttackResult {
        linf_norm: linf(&best_delta) / max,
        delta: best_delta,
        a_index_before: start,
        a_index_after: best,
        objective_trace,
        best_trace,
        best_iteration,
        config: *cfg,
    })
}

/// Writes `x`, `x + delta` and `delta` amplified tenfold around mid-gray.
pub fn dump_attack_images(x: &ImageBuffer, result: &AttackResult, dir: &Path, stem: &str) -> Result<(), AdversaryError> {
    let mid = 0.5 * x.max_value();
    let amplified = x.with_data(result.delta.iter().map(|d| mid + 10.0 * d).collect())?;
    save_image(x, &dir.join(format!("{stem}_original.png")))?;
    save_image(&result.perturbed(x), &dir.join(format!("{stem}_perturbed.png")))?;
    save_image(&amplified, &dir.join(format!("{stem}_delta_x10.png")))?;
    Ok(())
}

/// Index of `x` against its own inversion.
pub fn self_score(
    x: &ImageBuffer,
    inverter: &dyn Inverter,
    w: &WeightVector,
    providers: &Providers,
) -> Result<f64, AdversaryError> {
    let y = invert_checked(inverter, x)?;
    let m = metric_vector(x, &y, providers, None)?;
    Ok(a_index(composite_score(&m, w), w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inverters::{ReferenceInverter, ReferenceInverterConfig};
    use crate::metrics::SsimConfig;
    use crate::synth::natural_image;

    fn setup() -> (ReferenceInverter, Providers) {
        let inv = ReferenceInverter::new(ReferenceInverterConfig { blur_sigma: 1.5, noise_sigma: 0.01, noise_seed: 1, fidelity: 0.6 })
            .unwrap();
        (inv, Providers::reference().with_ssim(SsimConfig::with_window(7)))
    }

    #[test]
    fn zero_iterations_is_the_identity() {
        let (inv, p) = setup();
        let x = natural_image(16, 16, 3, 2);
        let r = pgd_attack(&x, &inv, &WeightVector::published(), &p, &AttackConfig { iterations: 0, ..Default::default() })
            .unwrap();
        assert!(r.delta.iter().all(|&d| d == 0.0));
        assert_eq!(r.a_index_after, r.a_index_before);
        assert_eq!(r.a_index_before, self_score(&x, &inv, &WeightVector::published(), &p).unwrap());
        assert_eq!(r.objective_trace.len(), 1);
    }

    #[test]
    fn budget_and_range_hold_and_trace_is_monotone() {
        let (inv, p) = setup();
        let x = natural_image(16, 16, 3, 3);
        for direction in [Direction::Maximize, Direction::Minimize] {
            let cfg = AttackConfig { iterations: 8, direction, ..Default::default() };
            let r = pgd_attack(&x, &inv, &WeightVector::published(), &p, &cfg).unwrap();
            assert!(r.linf_norm <= 8.0 / 255.0 + 1e-12);
            assert!(r.perturbed(&x).data().iter().all(|&v| (0.0..=255.0).contains(&v)));
            let ok = r.best_trace.windows(2).all(|w| match direction {
                Direction::Maximize => w[1] >= w[0],
                Direction::Minimize => w[1] <= w[0],
            });
            assert!(ok);
            assert_eq!(*r.best_trace.last().unwrap(), r.a_index_after);
        }
    }

    #[test]
    fn deterministic() {
        let (inv, p) = setup();
        let x = natural_image(12, 12, 3, 4);
        let cfg = AttackConfig { iterations: 3, gradient_mode: GradientMode::FiniteDifference, fd_samples: 50, ..Default::default() };
        let a = pgd_attack(&x, &inv, &WeightVector::published(), &p, &cfg).unwrap();
        let b = pgd_attack(&x, &inv, &WeightVector::published(), &p, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn analytic_mode_needs_a_differentiable_inverter() {
        let (inv, p) = setup();
        let opaque = crate::inverters::OpaqueInverter(std::sync::Arc::new(inv));
        let x = natural_image(12, 12, 3, 4);
        let err = pgd_attack(&x, &opaque, &WeightVector::published(), &p, &AttackConfig::default()).unwrap_err();
        assert!(matches!(err, AdversaryError::NonDifferentiableInverter(_)));
    }

    #[test]
    fn config_invariants() {
        assert!(AttackConfig::default().validate().is_ok());
        assert!(AttackConfig::with_epsilon(65.0 / 255.0).validate().is_err());
        let mut c = AttackConfig::default();
        c.step_size = 3.0 * c.epsilon;
        assert!(c.validate().is_err());
        assert_eq!("minimize".parse::<Direction>().unwrap(), Direction::Minimize);
    }
}
