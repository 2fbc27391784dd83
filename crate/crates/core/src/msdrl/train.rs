use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::{discounted_sum, rollout_policy};
use super::{ControlEnv, EconParams, MdpConfig, MsdrlError, Result};
use crate::sac::{ActMode, Agent, Experience, ReplayBuffer, UpdateStats};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyTrainConfig {
    pub iterations: usize,
    /// Episodes rolled out in parallel per iteration.
    pub episodes_per_iteration: usize,
    pub eval_every: usize,
    /// Cap on the scenarios scored at each evaluation.
    pub eval_scenarios: usize,
    /// Multiplies USD rewards before they reach the agent.
    pub reward_scale: f64,
    pub seed: u64,
}

impl Default for PolicyTrainConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            episodes_per_iteration: 1,
            eval_every: 1,
            eval_scenarios: 80,
            reward_scale: 1e-6,
            seed: 0,
        }
    }
}

impl PolicyTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0
            || self.episodes_per_iteration == 0
            || self.eval_scenarios == 0
            || !(self.reward_scale > 0.0)
        {
            return Err(MsdrlError::Config(
                "iterations, episodes, evaluation scenarios and reward scale must be positive"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// One row of `train_curve.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iteration: usize,
    /// Mean NPV of this iteration's exploratory episodes, USD.
    pub episode_npv: f64,
    /// Mean NPV of the deterministic policy over the evaluation scenarios.
    pub eval_npv: Option<f64>,
    /// Mean discounted agent return, in scaled reward units.
    pub episode_return: f64,
    pub alpha: f64,
    pub q_loss: f64,
    pub policy_loss: f64,
    pub mean_log_prob: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedPolicy {
    pub last: Agent<f32>,
    /// Agent at the evaluation with the highest mean NPV.
    pub best: Agent<f32>,
    pub best_iteration: usize,
    pub best_eval_npv: f64,
    pub curve: Vec<CurveRow>,
    /// Environment steps taken, counting every parallel episode.
    pub env_steps: usize,
}

/// Deterministic actions of `agent` as an environment policy.
pub fn greedy(agent: &Agent<f32>) -> impl FnMut(&[f64]) -> Result<Vec<f64>> + '_ {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    move |obs| Ok(agent.act(obs, ActMode::Deterministic, &mut rng)?.0)
}

/// Soft actor-critic against `env`. Each iteration starts episodes from
/// scenarios drawn out of `train_ids`, stores every transition, and performs
/// `updates_per_step` updates per stored transition once the buffer holds a
/// batch. The deterministic policy is scored on `eval_ids` every
/// `eval_every` iterations and at the end.
pub fn train_policy<E: ControlEnv + ?Sized>(
    env: &mut E,
    mut agent: Agent<f32>,
    mdp: &MdpConfig,
    econ: &EconParams,
    train_ids: &[usize],
    eval_ids: &[usize],
    cfg: &PolicyTrainConfig,
    curve_csv: Option<&Path>,
) -> Result<TrainedPolicy> {
    cfg.validate()?;
    mdp.validate()?;
    if agent.obs_dim != env.obs_dim() || agent.act_dim != mdp.n_actions() {
        return Err(MsdrlError::Config(format!(
            "agent maps {} → {}, environment needs {} → {}",
            agent.obs_dim,
            agent.act_dim,
            env.obs_dim(),
            mdp.n_actions()
        )));
    }
    if train_ids.is_empty() || eval_ids.is_empty() {
        return Err(MsdrlError::Config(
            "need at least one training and one evaluation scenario".into(),
        ));
    }
    let sac = agent.config.clone();
    let eval_ids = &eval_ids[..eval_ids.len().min(cfg.eval_scenarios)];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut buffer = ReplayBuffer::new(sac.buffer_capacity);
    let mut writer = curve_csv.map(csv::Writer::from_path).transpose()?;
    let na = mdp.n_actions();
    let mut curve = Vec::with_capacity(cfg.iterations);
    let mut best = (agent.clone(), 0, f64::NEG_INFINITY);
    let mut env_steps = 0;

    for it in 1..=cfg.iterations {
        let ids: Vec<usize> = (0..cfg.episodes_per_iteration)
            .map(|_| *train_ids.choose(&mut rng).expect("non-empty"))
            .collect();
        let mut obs = env.reset(&ids)?;
        let obs_dim = env.obs_dim();
        let mut rewards = vec![Vec::with_capacity(mdp.horizon); ids.len()];
        let mut stats = Vec::new();
        for t in 0..mdp.horizon {
            let (actions, _) = agent.act(&obs, ActMode::Stochastic, &mut rng)?;
            let (next, r) = env.step(&actions)?;
            env_steps += ids.len();
            for i in 0..ids.len() {
                rewards[i].push(r[i]);
                buffer.push(Experience {
                    z: obs[i * obs_dim..(i + 1) * obs_dim].to_vec(),
                    a: actions[i * na..(i + 1) * na].to_vec(),
                    r: r[i] * cfg.reward_scale,
                    z_next: next[i * obs_dim..(i + 1) * obs_dim].to_vec(),
                    done: t + 1 == mdp.horizon,
                })?;
            }
            obs = next;
            if buffer.len() >= sac.batch_size {
                for _ in 0..ids.len() * sac.updates_per_step {
                    let batch = buffer.sample(sac.batch_size, &mut rng)?;
                    stats.push(agent.update(&batch, &mut rng)?);
                }
            }
        }

        let n = ids.len() as f64;
        let episode_npv = rewards
            .iter()
            .map(|r| discounted_sum(r, econ, mdp.dt_days))
            .sum::<f64>()
            / n;
        let episode_return = rewards
            .iter()
            .map(|r| {
                r.iter()
                    .rev()
                    .fold(0.0, |acc, x| x * cfg.reward_scale + sac.gamma * acc)
            })
            .sum::<f64>()
            / n;
        let eval_npv = if it % cfg.eval_every.max(1) == 0 || it == cfg.iterations {
            let res = rollout_policy(env, eval_ids, greedy(&agent), mdp, econ)?;
            let mean = res.iter().map(|r| r.predicted_npv).sum::<f64>() / res.len() as f64;
            if mean > best.2 {
                best = (agent.clone(), it, mean);
            }
            Some(mean)
        } else {
            None
        };
        let avg = |f: fn(&UpdateStats) -> f64| {
            if stats.is_empty() {
                f64::NAN
            } else {
                stats.iter().map(f).sum::<f64>() / stats.len() as f64
            }
        };
        let row = CurveRow {
            iteration: it,
            episode_npv,
            eval_npv,
            episode_return,
            alpha: agent.alpha(),
            q_loss: avg(|s| s.q_loss),
            policy_loss: avg(|s| s.policy_loss),
            mean_log_prob: avg(|s| s.mean_log_prob),
        };
        if let Some(w) = writer.as_mut() {
            w.serialize(&row)?;
            w.flush()?;
        }
        if let Some(v) = eval_npv {
            info!("iteration {it}: eval NPV {v:.4e} USD, α {:.4}", row.alpha);
        }
        curve.push(row);
    }

    Ok(TrainedPolicy {
        last: agent,
        best: best.0,
        best_iteration: best.1,
        best_eval_npv: best.2,
        curve,
        env_steps,
    })
}
