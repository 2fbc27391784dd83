//! Soft actor-critic with twin critics, target networks and a learned
//! entropy temperature.

mod buffer;
pub mod diagnostic;

pub use buffer::{Batch, Experience, ReplayBuffer};

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::tensor::{
    init_params, read_checkpoint, write_checkpoint, AdamConfig, Binding, Graph, LayerSpec, Network,
    ParamStore, Tensor, TensorError, Var,
};

#[derive(Debug, Error)]
pub enum SacError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = SacError> = std::result::Result<T, E>;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const SQUASH_EPS: f64 = 1e-6;
const LOG_ALPHA: &str = "log_alpha";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacConfig {
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    pub buffer_capacity: usize,
    /// Defaults to `−N_a`.
    pub entropy_target: Option<f64>,
    /// Disables temperature learning when set.
    pub fixed_alpha: Option<f64>,
    pub initial_alpha: f64,
    pub updates_per_step: usize,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            tau: 0.005,
            batch_size: 128,
            learning_rate: 3e-4,
            hidden: 256,
            buffer_capacity: 20_000,
            entropy_target: None,
            fixed_alpha: None,
            initial_alpha: 0.1,
            updates_per_step: 1,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(SacError::Config(format!(
                "discount {} must lie in (0, 1)",
                self.gamma
            )));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(SacError::Config(format!(
                "smoothing {} must lie in (0, 1]",
                self.tau
            )));
        }
        if self.batch_size == 0 || self.hidden == 0 || self.buffer_capacity == 0 {
            return Err(SacError::Config(
                "batch size, width and buffer capacity must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0)
            || !(self.initial_alpha > 0.0)
            || self.fixed_alpha.is_some_and(|a| !(a >= 0.0))
        {
            return Err(SacError::Config(
                "learning rate and temperatures must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn entropy_target_for(&self, act_dim: usize) -> f64 {
        self.entropy_target.unwrap_or(-(act_dim as f64))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActMode {
    Stochastic,
    Deterministic,
}

/// Loss values and temperature after one update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub q_loss: f64,
    pub policy_loss: f64,
    pub alpha: f64,
    pub mean_log_prob: f64,
}

/// Policy, twin critics, their targets and the temperature.
#[derive(Clone, Debug)]
pub struct Agent<S: Scalar> {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub config: SacConfig,
    pub policy: ParamStore<S>,
    pub q1: ParamStore<S>,
    pub q2: ParamStore<S>,
    pub q1_target: ParamStore<S>,
    pub q2_target: ParamStore<S>,
    pub log_alpha: ParamStore<S>,
}

fn trunk(hidden: usize, obs_dim: usize) -> Network {
    Network::mlp("pi", &[obs_dim, hidden, hidden], Some(LayerSpec::ReLU))
}

fn critic(prefix: &str, hidden: usize, obs_dim: usize, act_dim: usize) -> Network {
    Network::mlp(prefix, &[obs_dim + act_dim, hidden, hidden, 1], None)
}

/// `min(Q1, Q2)` of each row, kept as a graph node.
fn twin_min<S: Scalar>(g: &mut Graph<S>, q1: Var, q2: Var) -> Result<Var> {
    Ok(g.minimum(q1, q2)?)
}

impl<S: Scalar> Agent<S> {
    pub fn new(obs_dim: usize, act_dim: usize, config: SacConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if obs_dim == 0 || act_dim == 0 {
            return Err(SacError::Config(
                "observation and action sizes must be positive".into(),
            ));
        }
        let h = config.hidden;
        let mut policy = init_params(&trunk(h, obs_dim), seed)?;
        policy.merge(init_params(
            &Network::mlp("pi.mu", &[h, act_dim], None),
            seed.wrapping_add(1),
        )?)?;
        policy.merge(init_params(
            &Network::mlp("pi.log_std", &[h, act_dim], None),
            seed.wrapping_add(2),
        )?)?;
        let q1 = init_params(&critic("q1", h, obs_dim, act_dim), seed.wrapping_add(3))?;
        let q2 = init_params(&critic("q2", h, obs_dim, act_dim), seed.wrapping_add(4))?;
        let alpha0 = config
            .fixed_alpha
            .unwrap_or(config.initial_alpha)
            .max(f64::MIN_POSITIVE);
        let mut log_alpha = ParamStore::new();
        log_alpha.insert(LOG_ALPHA, Tensor::scalar(S::from_f64c(alpha0.ln())))?;
        Ok(Self {
            obs_dim,
            act_dim,
            q1_target: q1.values_only(),
            q2_target: q2.values_only(),
            q1,
            q2,
            policy,
            log_alpha,
            config,
        })
    }

    pub fn alpha(&self) -> f64 {
        match self.config.fixed_alpha {
            Some(a) => a,
            None => self
                .log_alpha
                .value(LOG_ALPHA)
                .map(|t| t.item().to_f64c().exp())
                .unwrap_or(f64::NAN),
        }
    }

    pub fn entropy_target(&self) -> f64 {
        self.config.entropy_target_for(self.act_dim)
    }

    fn rows(&self, values: &[f64], width: usize, what: &str) -> Result<usize> {
        if width == 0 || values.len() % width != 0 {
            return Err(SacError::Usage(format!(
                "{what} length {} is not a multiple of {width}",
                values.len()
            )));
        }
        Ok(values.len() / width)
    }

    /// `(μ, ln σ)` of the pre-squash Gaussian, `ln σ` clamped.
    pub fn policy_head(
        &self,
        g: &mut Graph<S>,
        policy: &ParamStore<S>,
        obs: Var,
        binding: Binding,
    ) -> Result<(Var, Var)> {
        let h = self.config.hidden;
        let feat = trunk(h, self.obs_dim).forward(g, policy, obs, binding)?;
        let mu =
            Network::mlp("pi.mu", &[h, self.act_dim], None).forward(g, policy, feat, binding)?;
        let ls = Network::mlp("pi.log_std", &[h, self.act_dim], None)
            .forward(g, policy, feat, binding)?;
        let ls = g.clamp(ls, S::from_f64c(LOG_STD_MIN), S::from_f64c(LOG_STD_MAX));
        Ok((mu, ls))
    }

    /// Reparameterized squashed sample `a = tanh(μ + σ·ε)` and its log
    /// density per row, `[n, 1]`.
    pub fn squashed_sample(
        &self,
        g: &mut Graph<S>,
        mu: Var,
        log_std: Var,
        noise: &[f64],
    ) -> Result<(Var, Var)> {
        let n = g.value(mu).rows();
        let eps = g.constant(Tensor::from_f64(&[n, self.act_dim], noise)?);
        let std = g.exp(log_std);
        let scaled = g.mul(std, eps)?;
        let u = g.add(mu, scaled)?;
        let a = g.tanh(u);
        // log N(u; μ, σ) = −ε²/2 − ln σ − ln(2π)/2
        let e2 = g.square(eps);
        let e2 = g.scale(e2, S::from_f64c(-0.5));
        let gauss = g.sub(e2, log_std)?;
        let gauss = g.add_const(
            gauss,
            S::from_f64c(-0.5 * (2.0 * std::f64::consts::PI).ln()),
        );
        let a2 = g.square(a);
        let one_minus = g.scale(a2, S::from_f64c(-1.0));
        let one_minus = g.add_const(one_minus, S::from_f64c(1.0 + SQUASH_EPS));
        let jac = g.ln(one_minus);
        let per = g.sub(gauss, jac)?;
        let logp = g.sum_cols(per)?;
        Ok((a, logp))
    }

    fn q_value(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        prefix: &str,
        obs: Var,
        act: Var,
        binding: Binding,
    ) -> Result<Var> {
        let x = g.concat_cols(&[obs, act])?;
        Ok(
            critic(prefix, self.config.hidden, self.obs_dim, self.act_dim)
                .forward(g, store, x, binding)?,
        )
    }

    pub fn draw_noise<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        (0..n * self.act_dim)
            .map(|_| StandardNormal.sample(rng))
            .collect()
    }

    /// Actions for `obs` rows and, in stochastic mode, their log densities.
    pub fn act<R: Rng>(
        &self,
        obs: &[f64],
        mode: ActMode,
        rng: &mut R,
    ) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        let n = self.rows(obs, self.obs_dim, "observation")?;
        let mut g = Graph::new();
        let o = g.constant(Tensor::from_f64(&[n, self.obs_dim], obs)?);
        let (mu, ls) = self.policy_head(&mut g, &self.policy, o, Binding::Frozen)?;
        match mode {
            ActMode::Deterministic => {
                let a = g.tanh(mu);
                Ok((g.value(a).to_f64_vec(), None))
            }
            ActMode::Stochastic => {
                let noise = self.draw_noise(n, rng);
                let (a, lp) = self.squashed_sample(&mut g, mu, ls, &noise)?;
                // f32 tanh can round to ±1
                let a = g
                    .value(a)
                    .to_f64_vec()
                    .into_iter()
                    .map(|v| v.clamp(-1.0 + 1e-7, 1.0 - 1e-7))
                    .collect();
                Ok((a, Some(g.value(lp).to_f64_vec())))
            }
        }
    }

    /// `r + γ·(1 − done)·(min_j Q_targ,j(z′, a′) − α·log π(a′|z′))` with
    /// `a′` drawn from the current policy using `next_noise`.
    pub fn q_targets(&self, batch: &Batch, next_noise: &[f64], alpha: f64) -> Result<Vec<f64>> {
        let n = batch.len;
        let mut g = Graph::new();
        let zn = g.constant(Tensor::from_f64(&[n, self.obs_dim], &batch.z_next)?);
        let (mu, ls) = self.policy_head(&mut g, &self.policy, zn, Binding::Frozen)?;
        let (a, lp) = self.squashed_sample(&mut g, mu, ls, next_noise)?;
        let t1 = self.q_value(&mut g, &self.q1_target, "q1", zn, a, Binding::Frozen)?;
        let t2 = self.q_value(&mut g, &self.q2_target, "q2", zn, a, Binding::Frozen)?;
        let m = twin_min(&mut g, t1, t2)?;
        let (m, lp) = (g.value(m).to_f64_vec(), g.value(lp).to_f64_vec());
        Ok((0..n)
            .map(|i| {
                batch.r[i] + self.config.gamma * (1.0 - batch.done[i]) * (m[i] - alpha * lp[i])
            })
            .collect())
    }

    /// Critic losses `mean (Q_j(z, a) − y)²` for given targets. Returns the
    /// graph and both loss nodes.
    pub fn q_loss_graph(
        &self,
        q1: &ParamStore<S>,
        q2: &ParamStore<S>,
        batch: &Batch,
        targets: &[f64],
    ) -> Result<(Graph<S>, Var, Var)> {
        let n = batch.len;
        if n == 0 {
            return Err(SacError::Usage("empty batch".into()));
        }
        let mut g = Graph::new();
        let z = g.constant(Tensor::from_f64(&[n, self.obs_dim], &batch.z)?);
        let a = g.constant(Tensor::from_f64(&[n, self.act_dim], &batch.a)?);
        let y = g.constant(Tensor::from_f64(&[n, 1], targets)?);
        let mut losses = Vec::with_capacity(2);
        for (store, prefix) in [(q1, "q1"), (q2, "q2")] {
            let q = self.q_value(&mut g, store, prefix, z, a, Binding::Trainable)?;
            let d = g.sub(q, y)?;
            let sq = g.square(d);
            losses.push(g.mean(sq));
        }
        Ok((g, losses[0], losses[1]))
    }

    /// `mean(α·log π(a|z) − min_j Q_j(z, a))` with `a` reparameterized; the
    /// critics enter as constants. Returns the graph, the loss and the
    /// per-row log densities.
    pub fn policy_loss_graph(
        &self,
        policy: &ParamStore<S>,
        obs: &[f64],
        noise: &[f64],
        alpha: f64,
    ) -> Result<(Graph<S>, Var, Var)> {
        let n = self.rows(obs, self.obs_dim, "observation")?;
        if n == 0 {
            return Err(SacError::Usage("empty batch".into()));
        }
        let mut g = Graph::new();
        let z = g.constant(Tensor::from_f64(&[n, self.obs_dim], obs)?);
        let (mu, ls) = self.policy_head(&mut g, policy, z, Binding::Trainable)?;
        let (a, lp) = self.squashed_sample(&mut g, mu, ls, noise)?;
        let q1 = self.q_value(&mut g, &self.q1, "q1", z, a, Binding::Frozen)?;
        let q2 = self.q_value(&mut g, &self.q2, "q2", z, a, Binding::Frozen)?;
        let m = twin_min(&mut g, q1, q2)?;
        let ent = g.scale(lp, S::from_f64c(alpha));
        let per = g.sub(ent, m)?;
        let loss = g.mean(per);
        Ok((g, loss, lp))
    }

    /// `mean(−α·(log π + H₀))` with `α = exp(log_alpha)` and the log
    /// densities held fixed.
    pub fn alpha_loss_graph(
        &self,
        log_alpha: &ParamStore<S>,
        log_probs: &[f64],
    ) -> Result<(Graph<S>, Var)> {
        let n = log_probs.len();
        if n == 0 {
            return Err(SacError::Usage("empty batch".into()));
        }
        let h0 = self.entropy_target();
        let shifted: Vec<f64> = log_probs.iter().map(|lp| -(lp + h0)).collect();
        let mut g = Graph::new();
        let la = g.param(log_alpha, LOG_ALPHA)?;
        let alpha = g.exp(la);
        let c = g.constant(Tensor::from_f64(&[n, 1], &shifted)?);
        let per = g.mul_scalar_var(c, alpha)?;
        let loss = g.mean(per);
        Ok((g, loss))
    }

    /// One round of critic, actor, temperature and target updates.
    pub fn update<R: Rng>(&mut self, batch: &Batch, rng: &mut R) -> Result<UpdateStats> {
        let adam = AdamConfig::new(self.config.learning_rate, 0.0);
        let alpha = self.alpha();
        let next_noise = self.draw_noise(batch.len, rng);
        let y = self.q_targets(batch, &next_noise, alpha)?;
        let (g, l1, l2) = self.q_loss_graph(&self.q1, &self.q2, batch, &y)?;
        let q_loss = g.value(l1).item().to_f64c() + g.value(l2).item().to_f64c();
        let sum = {
            let mut g = g;
            let s = g.add(l1, l2)?;
            let grads = g.backward(s)?;
            (grads.for_store(&self.q1), grads.for_store(&self.q2), q_loss)
        };
        self.q1.adam_step(&sum.0, &adam)?;
        self.q2.adam_step(&sum.1, &adam)?;

        let noise = self.draw_noise(batch.len, rng);
        let (g, loss, lp) = self.policy_loss_graph(&self.policy, &batch.z, &noise, alpha)?;
        let policy_loss = g.value(loss).item().to_f64c();
        let log_probs = g.value(lp).to_f64_vec();
        let grads = g.backward(loss)?.for_store(&self.policy);
        self.policy.adam_step(&grads, &adam)?;

        if self.config.fixed_alpha.is_none() {
            let (g, loss) = self.alpha_loss_graph(&self.log_alpha, &log_probs)?;
            let grads: BTreeMap<String, Tensor<S>> = g.backward(loss)?.for_store(&self.log_alpha);
            self.log_alpha.adam_step(&grads, &adam)?;
        }
        self.q1_target.polyak_from(&self.q1, self.config.tau)?;
        self.q2_target.polyak_from(&self.q2, self.config.tau)?;
        Ok(UpdateStats {
            q_loss: sum.2,
            policy_loss,
            alpha: self.alpha(),
            mean_log_prob: log_probs.iter().sum::<f64>() / log_probs.len() as f64,
        })
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        let mut all = ParamStore::new();
        for (prefix, store) in self.stores() {
            for (name, t) in store.iter() {
                all.insert(format!("{prefix}/{name}"), t.clone())?;
            }
        }
        let meta = serde_json::json!({
            "kind": "sac",
            "obs_dim": self.obs_dim,
            "act_dim": self.act_dim,
            "config": self.config,
            "extra": extra,
        });
        write_checkpoint(path, &all, meta)?;
        Ok(())
    }

    fn stores(&self) -> [(&'static str, &ParamStore<S>); 6] {
        [
            ("policy", &self.policy),
            ("q1", &self.q1),
            ("q2", &self.q2),
            ("q1_target", &self.q1_target),
            ("q2_target", &self.q2_target),
            ("alpha", &self.log_alpha),
        ]
    }

    /// Loads an agent and the `extra` metadata saved with it.
    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let ck = read_checkpoint::<S>(path)?;
        let m = &ck.metadata;
        if m["kind"] != "sac" {
            return Err(SacError::Usage(format!(
                "{} is not an agent checkpoint",
                path.display()
            )));
        }
        let obs_dim = m["obs_dim"].as_u64().unwrap_or(0) as usize;
        let act_dim = m["act_dim"].as_u64().unwrap_or(0) as usize;
        let config: SacConfig = serde_json::from_value(m["config"].clone())?;
        let mut agent = Self::new(obs_dim, act_dim, config, 0)?;
        let mut parts: BTreeMap<&str, ParamStore<S>> = BTreeMap::new();
        for (name, t) in ck.store.iter() {
            let (prefix, rest) = name
                .split_once('/')
                .ok_or_else(|| SacError::Usage(format!("unexpected tensor {name}")))?;
            parts.entry(prefix).or_default().insert(rest, t.clone())?;
        }
        let mut take = |k: &str, like: &ParamStore<S>| -> Result<ParamStore<S>> {
            let s = parts.remove(k).unwrap_or_default();
            for (n, t) in like.iter() {
                if s.value(n).map(|v| v.shape() != t.shape()).unwrap_or(true) {
                    return Err(SacError::Usage(format!(
                        "agent checkpoint lacks {k}/{n} of shape {:?}",
                        t.shape()
                    )));
                }
            }
            Ok(s)
        };
        agent.policy = take("policy", &agent.policy)?;
        agent.q1 = take("q1", &agent.q1)?;
        agent.q2 = take("q2", &agent.q2)?;
        agent.q1_target = take("q1_target", &agent.q1_target)?;
        agent.q2_target = take("q2_target", &agent.q2_target)?;
        agent.log_alpha = take("alpha", &agent.log_alpha)?;
        Ok((agent, m["extra"].clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> Agent<f64> {
        let cfg = SacConfig {
            hidden: 8,
            batch_size: 4,
            ..SacConfig::default()
        };
        Agent::new(3, 2, cfg, 5).unwrap()
    }

    #[test]
    fn targets_start_equal_to_critics() {
        let a = small();
        for (n, t) in a.q1.iter() {
            assert_eq!(t, a.q1_target.value(n).unwrap());
        }
        assert!((a.alpha() - 0.1).abs() < 1e-6);
        assert_eq!(a.entropy_target(), -2.0);
    }

    #[test]
    fn actions_lie_in_open_box() {
        let a = small();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let obs: Vec<f64> = (0..30).map(|i| (i as f64).sin() * 5.0).collect();
        let (act, lp) = a.act(&obs, ActMode::Stochastic, &mut rng).unwrap();
        assert!(act.iter().all(|v| v.abs() < 1.0));
        assert_eq!(lp.unwrap().len(), 10);
        let (det, none) = a.act(&obs, ActMode::Deterministic, &mut rng).unwrap();
        assert!(none.is_none() && det.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn gamma_zero_targets_equal_rewards() {
        let mut a = small();
        a.config.gamma = 1e-300;
        let b = Batch {
            len: 1,
            z: vec![0.1, 0.2, 0.3],
            a: vec![0.0, 0.5],
            r: vec![2.5],
            z_next: vec![0.0; 3],
            done: vec![0.0],
        };
        let y = a.q_targets(&b, &[0.0, 0.0], 1.0).unwrap();
        assert!((y[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn fixed_alpha_never_moves() {
        let cfg = SacConfig {
            hidden: 8,
            fixed_alpha: Some(0.25),
            ..SacConfig::default()
        };
        let mut a: Agent<f64> = Agent::new(1, 1, cfg, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = Batch {
            len: 2,
            z: vec![0.1, 0.2],
            a: vec![0.3, -0.3],
            r: vec![1.0, 0.0],
            z_next: vec![0.2, 0.1],
            done: vec![0.0, 1.0],
        };
        let s = a.update(&b, &mut rng).unwrap();
        assert_eq!(s.alpha, 0.25);
    }

    #[test]
    fn checkpoint_round_trip() {
        let a = small();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("agent.ckpt");
        a.save(&p, serde_json::json!({"note": 1})).unwrap();
        let (b, extra) = Agent::<f64>::load(&p).unwrap();
        assert_eq!(extra["note"], 1);
        assert_eq!(
            b.policy.value("pi.mu.0.weight").unwrap(),
            a.policy.value("pi.mu.0.weight").unwrap()
        );
        assert_eq!(
            b.q2_target.value("q2.2.bias").unwrap(),
            a.q2_target.value("q2.2.bias").unwrap()
        );
        assert_eq!(b.config, a.config);
    }
}
