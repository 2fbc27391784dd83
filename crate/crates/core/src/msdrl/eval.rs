use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::{
    action_to_controls, npv, ControlEnv, EconParams, EpisodeResult, MdpConfig, MsdrlError, Result,
};
use crate::reservoir::{SimConfig, Simulator};
use crate::scenario::{ControlSchedule, Scenario};

/// `Σ r_n / (1 + b)^{t_n}` for equally spaced steps.
pub fn discounted_sum(rewards: &[f64], econ: &EconParams, dt_days: f64) -> f64 {
    let mut t = 0.0;
    let mut total = 0.0;
    for r in rewards {
        t += dt_days / 365.0;
        total += r / (1.0 + econ.b).powf(t);
    }
    total
}

/// Runs one episode per scenario index through `env`, choosing actions with
/// `policy` (observations in, action rows out).
pub fn rollout_policy<E, P>(
    env: &mut E,
    scenarios: &[usize],
    mut policy: P,
    mdp: &MdpConfig,
    econ: &EconParams,
) -> Result<Vec<EpisodeResult>>
where
    E: ControlEnv + ?Sized,
    P: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = scenarios.len();
    let na = mdp.n_actions();
    let mut obs = env.reset(scenarios)?;
    let mut controls: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(mdp.horizon); n];
    let mut rewards: Vec<Vec<f64>> = vec![Vec::with_capacity(mdp.horizon); n];
    for _ in 0..mdp.horizon {
        let actions = policy(&obs)?;
        if actions.len() != n * na {
            return Err(MsdrlError::Config(format!(
                "policy returned {} values for {n}×{na} actions",
                actions.len()
            )));
        }
        let (next, r) = env.step(&actions)?;
        for (i, a) in actions.chunks(na).enumerate() {
            controls[i].push(action_to_controls(a, &mdp.bounds));
            rewards[i].push(r[i]);
        }
        obs = next;
    }
    Ok(controls
        .into_iter()
        .zip(rewards)
        .map(|(c, r)| EpisodeResult {
            schedule: mdp.schedule(&c),
            predicted_npv: discounted_sum(&r, econ, mdp.dt_days),
            simulated_npv: None,
            per_step_rewards: r,
        })
        .collect())
}

/// NPV of `schedule` on the simulator.
pub fn simulate_npv(
    scenario: &Scenario,
    sim: SimConfig,
    schedule: &ControlSchedule,
    mdp: &MdpConfig,
    econ: &EconParams,
) -> Result<f64> {
    let traj = Simulator::new(scenario, sim)?.run_episode(schedule, mdp.dt_days)?;
    let qc: Vec<f64> = schedule
        .steps
        .iter()
        .map(|c| c.injector_rates.iter().sum())
        .collect();
    let qb: Vec<f64> = traj.responses.iter().map(|r| r.total_brine()).collect();
    npv(&qc, &qb, econ, &traj.dt_days)
}

/// One row of `eval_results.csv`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRecord {
    pub scenario: usize,
    pub predicted_npv: f64,
    pub simulated_npv: Option<f64>,
    /// `(predicted − simulated) / |simulated|`
    pub gap: Option<f64>,
    pub error: Option<String>,
}

/// Replays each schedule on its scenario's simulator, filling in
/// `simulated_npv`. Failures are recorded per scenario.
pub fn evaluate_on_simulator(
    results: &mut [EpisodeResult],
    scenarios: &[Scenario],
    ids: &[usize],
    sim: SimConfig,
    mdp: &MdpConfig,
    econ: &EconParams,
) -> Vec<EvalRecord> {
    let outcomes: Vec<Result<f64>> = results
        .par_iter()
        .zip(ids)
        .map(|(r, &i)| simulate_npv(&scenarios[i], sim, &r.schedule, mdp, econ))
        .collect();
    results
        .iter_mut()
        .zip(ids)
        .zip(outcomes)
        .map(|((r, &i), out)| match out {
            Ok(v) => {
                r.simulated_npv = Some(v);
                EvalRecord {
                    scenario: i,
                    predicted_npv: r.predicted_npv,
                    simulated_npv: Some(v),
                    gap: Some((r.predicted_npv - v) / v.abs()),
                    error: None,
                }
            }
            Err(e) => EvalRecord {
                scenario: i,
                predicted_npv: r.predicted_npv,
                simulated_npv: None,
                gap: None,
                error: Some(e.to_string()),
            },
        })
        .collect()
}

pub fn write_eval_csv(path: &Path, records: &[EvalRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-step physical controls: `step, inj_0.., bhp_0..`.
pub fn write_schedule_csv(path: &Path, schedule: &ControlSchedule) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if let Some(first) = schedule.steps.first() {
        let mut header = vec!["step".to_string()];
        header.extend((0..first.injector_rates.len()).map(|i| format!("inj_{i}_m3_per_day")));
        header.extend((0..first.producer_bhps.len()).map(|i| format!("bhp_{i}_bar")));
        w.write_record(&header)?;
    }
    for (t, c) in schedule.steps.iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(c.to_vec().iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_schedule_csv(path: &Path, n_injectors: usize) -> Result<ControlSchedule> {
    let mut r = csv::Reader::from_path(path)?;
    let mut steps = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let values = rec
            .iter()
            .skip(1)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|e| MsdrlError::Data(format!("{}: {e}", path.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        steps.push(crate::reservoir::Controls::from_slice(&values, n_injectors));
    }
    Ok(ControlSchedule { steps })
}
