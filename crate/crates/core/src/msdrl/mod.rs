//! Well-control optimization with a SAC agent trained inside the learned
//! latent dynamics, plus verification on the simulator.

mod env;
mod eval;
mod train;

pub use env::{ControlEnv, LatentEnv, SimulatorEnv};
pub use eval::{
    discounted_sum, evaluate_on_simulator, read_schedule_csv, rollout_policy, simulate_npv,
    write_eval_csv, write_schedule_csv, EvalRecord,
};
pub use train::{greedy, train_policy, CurveRow, PolicyTrainConfig, TrainedPolicy};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mld::MldError;
use crate::reservoir::SimError;
use crate::sac::SacError;
use crate::scenario::{ControlSchedule, ScenarioError};

#[derive(Debug, Error)]
pub enum MsdrlError {
    #[error(transparent)]
    Mld(#[from] MldError),
    #[error(transparent)]
    Sac(#[from] SacError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = MsdrlError> = std::result::Result<T, E>;

/// Cash-flow coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EconParams {
    /// USD per m³ of injected CO₂.
    pub rc: f64,
    /// USD per m³ of produced brine.
    pub rb: f64,
    /// Annual discount rate.
    pub b: f64,
}

impl Default for EconParams {
    fn default() -> Self {
        Self {
            rc: 0.0246,
            rb: 10.0,
            b: 0.0,
        }
    }
}

impl EconParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rc >= 0.0 && self.rb >= 0.0 && self.b >= 0.0) {
            return Err(MsdrlError::Config(
                "economic coefficients must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// `lower + (a + 1)/2 · (upper − lower)` per component, clamped to the box.
pub fn action_to_controls(action: &[f64], bounds: &[[f64; 2]]) -> Vec<f64> {
    action
        .iter()
        .zip(bounds)
        .map(|(&a, b)| (b[0] + (a + 1.0) / 2.0 * (b[1] - b[0])).clamp(b[0], b[1]))
        .collect()
}

/// Inverse of [`action_to_controls`].
pub fn controls_to_action(controls: &[f64], bounds: &[[f64; 2]]) -> Vec<f64> {
    controls
        .iter()
        .zip(bounds)
        .map(|(&x, b)| {
            if b[1] > b[0] {
                2.0 * (x - b[0]) / (b[1] - b[0]) - 1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Undiscounted cash flow of one step: `(rc·Qc − rb·Qb)·Δt` with `Qc` the
/// commanded injection and `Qb` the total brine rate, both in m³/day.
pub fn reward(qc: f64, qb: f64, econ: &EconParams, dt_days: f64) -> Result<f64> {
    if !(qc >= 0.0 && qb >= 0.0) {
        return Err(MsdrlError::Data(format!(
            "rates must be non-negative, got Qc={qc} Qb={qb}"
        )));
    }
    Ok((econ.rc * qc - econ.rb * qb) * dt_days)
}

/// `Σ (rc·Qc,n − rb·Qb,n)·Δt_n / (1 + b)^{t_n}` with `t_n` the end of step
/// `n` in years.
pub fn npv(qc: &[f64], qb: &[f64], econ: &EconParams, dt_days: &[f64]) -> Result<f64> {
    if qc.len() != qb.len() || qc.len() != dt_days.len() {
        return Err(MsdrlError::Data(
            "rate and step lists differ in length".into(),
        ));
    }
    let mut t = 0.0;
    let mut total = 0.0;
    for ((&c, &b), &dt) in qc.iter().zip(qb).zip(dt_days) {
        t += dt / 365.0;
        total += reward(c, b, econ, dt)? / (1.0 + econ.b).powf(t);
    }
    Ok(total)
}

/// Horizon, step length and control box of the decision problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdpConfig {
    pub horizon: usize,
    pub dt_days: f64,
    pub bounds: Vec<[f64; 2]>,
    pub n_injectors: usize,
}

impl MdpConfig {
    pub fn from_data(cfg: &crate::scenario::DataConfig) -> Self {
        Self {
            horizon: cfg.horizon,
            dt_days: cfg.dt_days,
            bounds: cfg.action_bounds(),
            n_injectors: cfg.wells().injectors.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || !(self.dt_days > 0.0) || self.bounds.iter().any(|b| !(b[0] < b[1]))
        {
            return Err(MsdrlError::Config(
                "need H ≥ 1, Δt > 0 and lower < upper bounds".into(),
            ));
        }
        Ok(())
    }

    pub fn n_actions(&self) -> usize {
        self.bounds.len()
    }

    pub fn injection(&self, controls: &[f64]) -> f64 {
        controls[..self.n_injectors].iter().sum()
    }

    pub fn schedule(&self, steps: &[Vec<f64>]) -> ControlSchedule {
        let flat: Vec<f64> = steps.iter().flatten().copied().collect();
        ControlSchedule::from_flat(&flat, self.n_injectors, self.n_actions())
    }
}

/// Outcome of one policy rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub schedule: ControlSchedule,
    pub predicted_npv: f64,
    pub simulated_npv: Option<f64>,
    /// Undiscounted cash flow per step, USD.
    pub per_step_rewards: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_mapping_endpoints_and_inverse() {
        let b = [[5.0e5, 1.5e6], [150.0, 170.0]];
        assert_eq!(action_to_controls(&[-1.0, -1.0], &b), vec![5.0e5, 150.0]);
        assert_eq!(action_to_controls(&[1.0, 1.0], &b), vec![1.5e6, 170.0]);
        assert_eq!(action_to_controls(&[0.0, 0.0], &b), vec![1.0e6, 160.0]);
        for x in [[5.0e5, 150.0], [7.3e5, 161.25], [1.5e6, 170.0]] {
            let back = action_to_controls(&controls_to_action(&x, &b), &b);
            assert!(
                (back[0] - x[0]).abs() <= 1e-12 * x[0] && (back[1] - x[1]).abs() <= 1e-12 * x[1]
            );
        }
    }

    #[test]
    fn reward_arithmetic() {
        let e = EconParams::default();
        assert_eq!(reward(0.0, 0.0, &e, 365.0).unwrap(), 0.0);
        assert!((reward(1e6, 1000.0, &e, 365.0).unwrap() - 5.329e6).abs() < 1e-3);
        assert!((reward(0.0, 1000.0, &e, 365.0).unwrap() + 3.65e6).abs() < 1e-6);
        assert!(reward(-1.0, 0.0, &e, 1.0).is_err());
    }

    #[test]
    fn npv_discounting() {
        let e = EconParams::default();
        let qc = [1e6, 8e5];
        let qb = [500.0, 700.0];
        let sum: f64 = (0..2)
            .map(|i| reward(qc[i], qb[i], &e, 365.0).unwrap())
            .sum();
        assert_eq!(npv(&qc, &qb, &e, &[365.0, 365.0]).unwrap(), sum);
        let d = EconParams { b: 0.1, ..e };
        let c = reward(1e6, 0.0, &d, 365.0).unwrap();
        assert!((npv(&[1e6], &[0.0], &d, &[365.0]).unwrap() - c / 1.1).abs() < 1e-6);
        assert_eq!(npv(&[0.0; 3], &[0.0; 3], &e, &[365.0; 3]).unwrap(), 0.0);
    }
}
