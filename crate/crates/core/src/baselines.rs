//! Simulation-based reference optimizers: differential evolution and random
//! schedules.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = BaselineError> = std::result::Result<T, E>;

/// DE/rand/1/bin settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeConfig {
    pub population: usize,
    /// Differential weight.
    pub f: f64,
    /// Crossover rate.
    pub cr: f64,
    /// Total objective evaluations, initial population included.
    pub max_evaluations: usize,
    pub seed: u64,
}

impl Default for DeConfig {
    fn default() -> Self {
        Self {
            population: 20,
            f: 0.5,
            cr: 0.9,
            max_evaluations: 800,
            seed: 0,
        }
    }
}

impl DeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 4 {
            return Err(BaselineError::Config(format!(
                "population {} is below 4",
                self.population
            )));
        }
        if !(self.f > 0.0 && self.f <= 2.0) || !(0.0..=1.0).contains(&self.cr) {
            return Err(BaselineError::Config(format!(
                "need F in (0, 2] and CR in [0, 1], got {} and {}",
                self.f, self.cr
            )));
        }
        if self.max_evaluations < self.population {
            return Err(BaselineError::Config(format!(
                "budget {} is smaller than the population {}",
                self.max_evaluations, self.population
            )));
        }
        Ok(())
    }
}

/// Best value after a generation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeHistoryRow {
    pub generation: usize,
    pub evaluations: usize,
    pub best_npv: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeResult {
    pub best: Vec<f64>,
    pub best_value: f64,
    pub evaluations: usize,
    pub history: Vec<DeHistoryRow>,
}

/// Folds `v` back into `[lo, hi]` by mirroring at the violated bound.
pub fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    let r = if v < lo {
        lo + (lo - v)
    } else if v > hi {
        hi - (v - hi)
    } else {
        v
    };
    r.clamp(lo, hi)
}

fn score(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::NEG_INFINITY
    }
}

/// Maximizes `objective` over the box `bounds` with greedy one-to-one
/// selection. Non-finite objective values rank last. Trials of a generation
/// are evaluated in parallel; the last generation is truncated so that the
/// objective is called exactly `max_evaluations` times.
pub fn de_optimize<F>(objective: F, bounds: &[[f64; 2]], cfg: &DeConfig) -> Result<DeResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    if bounds.is_empty() || bounds.iter().any(|b| !(b[0] <= b[1])) {
        return Err(BaselineError::Config(
            "bounds must be non-empty with lower ≤ upper".into(),
        ));
    }
    let d = bounds.len();
    let np = cfg.population;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pop: Vec<Vec<f64>> = (0..np)
        .map(|_| {
            bounds
                .iter()
                .map(|b| {
                    if b[1] > b[0] {
                        rng.gen_range(b[0]..=b[1])
                    } else {
                        b[0]
                    }
                })
                .collect()
        })
        .collect();
    let mut fit: Vec<f64> = pop.par_iter().map(|x| score(objective(x))).collect();
    let mut evaluations = np;
    let best_of = |fit: &[f64]| (0..np).fold(0, |b, i| if fit[i] > fit[b] { i } else { b });
    let mut history = vec![DeHistoryRow {
        generation: 0,
        evaluations,
        best_npv: fit[best_of(&fit)],
    }];

    let mut generation = 0;
    while evaluations < cfg.max_evaluations {
        generation += 1;
        let n_trials = (cfg.max_evaluations - evaluations).min(np);
        let trials: Vec<Vec<f64>> = (0..n_trials)
            .map(|i| {
                let mut pick = || loop {
                    let r = rng.gen_range(0..np);
                    if r != i {
                        break r;
                    }
                };
                let r1 = pick();
                let r2 = loop {
                    let r = pick();
                    if r != r1 {
                        break r;
                    }
                };
                let r3 = loop {
                    let r = pick();
                    if r != r1 && r != r2 {
                        break r;
                    }
                };
                let jrand = rng.gen_range(0..d);
                (0..d)
                    .map(|j| {
                        if j == jrand || rng.gen::<f64>() < cfg.cr {
                            let v = pop[r1][j] + cfg.f * (pop[r2][j] - pop[r3][j]);
                            reflect(v, bounds[j][0], bounds[j][1])
                        } else {
                            pop[i][j]
                        }
                    })
                    .collect()
            })
            .collect();
        let values: Vec<f64> = trials.par_iter().map(|x| score(objective(x))).collect();
        evaluations += n_trials;
        for (i, (x, v)) in trials.into_iter().zip(values).enumerate() {
            if v >= fit[i] {
                pop[i] = x;
                fit[i] = v;
            }
        }
        history.push(DeHistoryRow {
            generation,
            evaluations,
            best_npv: fit[best_of(&fit)],
        });
    }
    let b = best_of(&fit);
    Ok(DeResult {
        best: pop[b].clone(),
        best_value: fit[b],
        evaluations,
        history,
    })
}

/// Objective values of uniformly drawn schedules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomSummary {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl RandomSummary {
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            values,
        }
    }
}

/// Draws `n` points uniformly from `bounds` and evaluates each; `objective`
/// also receives the draw index.
pub fn random_baseline<F>(
    n: usize,
    bounds: &[[f64; 2]],
    seed: u64,
    objective: F,
) -> Result<RandomSummary>
where
    F: Fn(usize, &[f64]) -> f64 + Sync,
{
    if n == 0 {
        return Err(BaselineError::Config(
            "need at least one random schedule".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            bounds
                .iter()
                .map(|b| {
                    if b[1] > b[0] {
                        rng.gen_range(b[0]..=b[1])
                    } else {
                        b[0]
                    }
                })
                .collect()
        })
        .collect();
    let values = points
        .par_iter()
        .enumerate()
        .map(|(i, x)| objective(i, x))
        .collect();
    Ok(RandomSummary::from_values(values))
}

pub fn write_history_csv(path: &Path, history: &[DeHistoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in history {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
