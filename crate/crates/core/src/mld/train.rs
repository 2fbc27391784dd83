use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{augmented_loss, evaluate, Mld, MldArch, MldError, PreparedEpisode, Result};
use crate::scalar::Scalar;
use crate::scenario::NormStats;
use crate::tensor::AdamConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 25,
            learning_rate: 1e-3,
            weight_decay: 5e-4,
            lambda: 10.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0)
            || self.batch_size == 0
            || !(self.learning_rate >= 0.0)
            || !(self.weight_decay >= 0.0)
        {
            return Err(MldError::Config(
                "need λ > 0, batch size ≥ 1, and non-negative rate and decay".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Batch averages of the unweighted loss terms.
    pub l_mse: f64,
    pub l_jec: f64,
    pub test_rmse: f64,
    pub test_r2: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<S: Scalar> {
    /// Parameters at the epoch with the lowest test RMSE.
    pub best: Mld<S>,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
    /// First epoch whose loss turned non-finite; training stopped there.
    pub diverged_at: Option<usize>,
}

/// Mini-batch Adam on the augmented loss. Test metrics are computed after
/// every epoch; `checkpoint` is rewritten whenever they improve and `log_csv`
/// receives one row per epoch.
pub fn train_mld<S: Scalar>(
    arch: &MldArch,
    norm: &NormStats,
    train: &[PreparedEpisode],
    test: &[PreparedEpisode],
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
    log_csv: Option<&Path>,
) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    if train.len() < 2 * cfg.batch_size {
        return Err(MldError::Data(format!(
            "{} training episodes; at least two batches of {} are needed",
            train.len(),
            cfg.batch_size
        )));
    }
    let monitor = if test.is_empty() { train } else { test };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Mld::new(arch.clone(), arch.init::<S>(cfg.seed)?, norm.clone());
    let adam = AdamConfig::new(cfg.learning_rate, cfg.weight_decay);
    let mut writer = match log_csv {
        Some(p) => Some(csv::Writer::from_path(p)?),
        None => None,
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Mld<S>)> = None;
    let mut diverged_at = None;
    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut mse, mut jec, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PreparedEpisode> = chunk.iter().map(|&i| &train[i]).collect();
            let lg = augmented_loss(arch, &model.params, &batch, cfg.lambda, None)?;
            let v = lg.values();
            if !v.total.is_finite() {
                warn!("loss became non-finite in epoch {epoch}");
                diverged_at = Some(epoch);
                break 'epochs;
            }
            let grads = lg.graph.backward(lg.total)?.for_store(&model.params);
            model.params.adam_step(&grads, &adam)?;
            mse += v.mse;
            jec += v.jec;
            batches += 1;
        }
        if !model.params.is_finite() {
            diverged_at = Some(epoch);
            break;
        }
        let ev = evaluate(&model, monitor)?;
        let row = EpochLog {
            epoch,
            l_mse: mse / batches as f64,
            l_jec: jec / batches as f64,
            test_rmse: ev.rmse,
            test_r2: ev.r2,
        };
        info!(
            "epoch {epoch}: mse {:.5} jec {:.5} rmse {:.3} r2 {:.4}",
            row.l_mse, row.l_jec, row.test_rmse, row.test_r2
        );
        if let Some(w) = writer.as_mut() {
            w.serialize(&row)?;
            w.flush()?;
        }
        if best.as_ref().map_or(true, |b| ev.rmse < b.0) {
            if let Some(p) = checkpoint {
                model.save(p)?;
            }
            best = Some((ev.rmse, epoch, model.clone()));
        }
        log.push(row);
    }
    let (best_epoch, best) = match best {
        Some((_, e, m)) => (e, m),
        None => {
            return Err(MldError::Diverged {
                epoch: diverged_at.unwrap_or(0),
            })
        }
    };
    Ok(TrainOutcome {
        best,
        best_epoch,
        log,
        diverged_at,
    })
}
