//! DE/rand/1/bin.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::CalibrationError;

/// Consecutive generations at full overlap before the objective is declared degenerate.
const DEGENERATE_GENERATIONS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeConfig {
    pub population: usize,
    pub mutation_f: f64,
    pub crossover_cr: f64,
    pub max_iterations: usize,
    pub bounds: Vec<(f64, f64)>,
    pub tolerance: f64,
    pub rng_seed: u64,
}

impl DeConfig {
    /// Population 20, F 0.6, CR 0.7, 300 generations, `[-10, 10]^4`, tolerance 1e-10.
    pub fn with_seed(rng_seed: u64) -> Self {
        DeConfig {
            population: 20,
            mutation_f: 0.6,
            crossover_cr: 0.7,
            max_iterations: 300,
            bounds: vec![(-10.0, 10.0); 4],
            tolerance: 1e-10,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        let bad = |msg: String| Err(CalibrationError::InvalidConfig(msg));
        if self.population < 4 {
            return bad(format!("population must be at least 4 (got {})", self.population));
        }
        if !(self.mutation_f > 0.0 && self.mutation_f < 2.0) {
            return bad(format!("mutation factor must lie in (0, 2) (got {})", self.mutation_f));
        }
        if !(0.0..=1.0).contains(&self.crossover_cr) {
            return bad(format!("crossover rate must lie in [0, 1] (got {})", self.crossover_cr));
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive".into());
        }
        if !(self.tolerance > 0.0) {
            return bad("tolerance must be positive".into());
        }
        if self.bounds.is_empty() {
            return bad("bounds must not be empty".into());
        }
        if let Some((i, b)) = self.bounds.iter().enumerate().find(|(_, b)| !(b.0 < b.1 && b.0.is_finite() && b.1.is_finite())) {
            return bad(format!("bounds[{i}] = [{}, {}] is not a finite interval", b.0, b.1));
        }
        Ok(())
    }
}

impl Default for DeConfig {
    fn default() -> Self {
        DeConfig::with_seed(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeOutcome {
    pub best: Vec<f64>,
    pub objective: f64,
    /// Completed generations (not counting initialization).
    pub generations: usize,
    pub converged: bool,
    /// Best objective after initialization and after each generation.
    pub best_history: Vec<f64>,
}

fn argmin(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold(0, |best, (i, v)| if *v < values[best] { i } else { best })
}

fn spread(values: &[f64]) -> f64 {
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    hi - lo
}

/// Minimizes `objective` over the box in `cfg.bounds`.
///
/// Each generation builds all trial vectors from the generation's starting
/// population with one seeded RNG, evaluates them in parallel, then applies
/// greedy selection in member order, so the result is independent of thread
/// scheduling. `degenerate_at`, when set, aborts with
/// [`CalibrationError::DegenerateObjective`] once the best objective sits at or
/// above that value for three consecutive generations.
pub fn differential_evolution<F>(
    objective: F,
    cfg: &DeConfig,
    degenerate_at: Option<f64>,
) -> Result<DeOutcome, CalibrationError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    let eval = |x: &[f64]| {
        let v = objective(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let dim = cfg.bounds.len();
    let np = cfg.population;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut pop: Vec<Vec<f64>> = (0..np)
        .map(|_| cfg.bounds.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect())
        .collect();
    let mut fit: Vec<f64> = pop.par_iter().map(|x| eval(x)).collect();
    let mut best_history = vec![fit[argmin(&fit)]];
    let mut stuck = 0usize;
    let mut generations = 0usize;
    let mut converged = false;

    while generations < cfg.max_iterations {
        if spread(&fit) < cfg.tolerance {
            converged = true;
            break;
        }
        let trials: Vec<Vec<f64>> = (0..np)
            .map(|i| {
                let mut pick = |taken: &[usize]| loop {
                    let r = rng.random_range(0..np);
                    if r != i && !taken.contains(&r) {
                        return r;
                    }
                };
                let r1 = pick(&[]);
                let r2 = pick(&[r1]);
                let r3 = pick(&[r1, r2]);
                let forced = rng.random_range(0..dim);
                (0..dim)
                    .map(|j| {
                        let (lo, hi) = cfg.bounds[j];
                        let mutant = (pop[r1][j] + cfg.mutation_f * (pop[r2][j] - pop[r3][j])).clamp(lo, hi);
                        if j == forced || rng.random::<f64>() < cfg.crossover_cr {
                            mutant
                        } else {
                            pop[i][j]
                        }
                    })
                    .collect()
            })
            .collect();
        let trial_fit: Vec<f64> = trials.par_iter().map(|x| eval(x)).collect();
        for (i, (trial, tf)) in trials.into_iter().zip(trial_fit).enumerate() {
            if tf <= fit[i] {
                pop[i] = trial;
                fit[i] = tf;
            }
        }
        generations += 1;
        let best = fit[argmin(&fit)];
        best_history.push(best);
        if let Some(limit) = degenerate_at {
            stuck = if best >= limit { stuck + 1 } else { 0 };
            if stuck >= DEGENERATE_GENERATIONS {
                return Err(CalibrationError::DegenerateObjective { generations });
            }
        }
    }
    let b = argmin(&fit);
    Ok(DeOutcome { best: pop[b].clone(), objective: fit[b], generations, converged, best_history })
}
