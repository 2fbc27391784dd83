//! One-dimensional sanity task: reach `x = 0.5` and stay there.
//!
//! State `x`, action `a ∈ [−1, 1]`, reward `−(x − 0.5)²`, next state `a`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ActMode, Agent, Experience, ReplayBuffer, Result, SacConfig};

pub const TARGET: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MoveToTarget {
    pub horizon: usize,
}

impl Default for MoveToTarget {
    fn default() -> Self {
        Self { horizon: 10 }
    }
}

impl MoveToTarget {
    pub fn reward(x: f64) -> f64 {
        -(x - TARGET).powi(2)
    }

    /// Best achievable return from `x0`: only the first reward is forced.
    pub fn optimal_return(&self, x0: f64) -> f64 {
        Self::reward(x0)
    }

    /// Expected return of uniformly random actions from `x0`.
    pub fn random_return(&self, x0: f64) -> f64 {
        // E[(a − 0.5)²] for a ~ U(−1, 1) is 1/3 + 1/4
        Self::reward(x0) - (self.horizon as f64 - 1.0) * (1.0 / 3.0 + 0.25)
    }

    /// Undiscounted return of the deterministic policy from `x0`.
    pub fn policy_return(&self, agent: &Agent<f32>, x0: f64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut x = x0;
        let mut ret = 0.0;
        for _ in 0..self.horizon {
            ret += Self::reward(x);
            x = agent.act(&[x], ActMode::Deterministic, &mut rng)?.0[0];
        }
        Ok(ret)
    }

    /// `(R − R_random) / (R_optimal − R_random)` averaged over `starts`.
    pub fn normalized_score(&self, agent: &Agent<f32>, starts: &[f64]) -> Result<f64> {
        let mut s = 0.0;
        for &x0 in starts {
            let r = self.policy_return(agent, x0)?;
            s += (r - self.random_return(x0)) / (self.optimal_return(x0) - self.random_return(x0));
        }
        Ok(s / starts.len() as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticReport {
    /// `(episode, normalized score)` at every evaluation.
    pub scores: Vec<(usize, f64)>,
    /// Mean `log π` of the sampled batch at each update.
    pub log_probs: Vec<f64>,
    pub alphas: Vec<f64>,
    pub entropy_target: f64,
}

impl DiagnosticReport {
    /// First evaluated episode reaching `threshold`.
    pub fn first_reaching(&self, threshold: f64) -> Option<usize> {
        self.scores
            .iter()
            .find(|(_, s)| *s >= threshold)
            .map(|(e, _)| *e)
    }

    /// Mean of the last `n` recorded `log π` values.
    pub fn final_log_prob(&self, n: usize) -> f64 {
        let tail = &self.log_probs[self.log_probs.len().saturating_sub(n)..];
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }
}

/// Trains a fresh agent on the task, scoring the deterministic policy every
/// `eval_every` episodes from a fixed set of starts.
pub fn run(
    env: MoveToTarget,
    config: SacConfig,
    episodes: usize,
    eval_every: usize,
    seed: u64,
) -> Result<(Agent<f32>, DiagnosticReport)> {
    let mut agent = Agent::<f32>::new(1, 1, config.clone(), seed)?;
    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD1A6);
    let starts: Vec<f64> = (0..9).map(|i| -1.0 + 0.25 * i as f64).collect();
    let mut report = DiagnosticReport {
        scores: Vec::new(),
        log_probs: Vec::new(),
        alphas: Vec::new(),
        entropy_target: agent.entropy_target(),
    };
    for ep in 1..=episodes {
        let mut x: f64 = rng.gen_range(-1.0..1.0);
        for t in 0..env.horizon {
            let a = agent.act(&[x], ActMode::Stochastic, &mut rng)?.0[0];
            buffer.push(Experience {
                z: vec![x],
                a: vec![a],
                r: MoveToTarget::reward(x),
                z_next: vec![a],
                done: t + 1 == env.horizon,
            })?;
            x = a;
            if buffer.len() >= config.batch_size {
                for _ in 0..config.updates_per_step {
                    let batch = buffer.sample(config.batch_size, &mut rng)?;
                    let s = agent.update(&batch, &mut rng)?;
                    report.log_probs.push(s.mean_log_prob);
                    report.alphas.push(s.alpha);
                }
            }
        }
        if ep % eval_every.max(1) == 0 || ep == episodes {
            report
                .scores
                .push((ep, env.normalized_score(&agent, &starts)?));
        }
    }
    Ok((agent, report))
}
