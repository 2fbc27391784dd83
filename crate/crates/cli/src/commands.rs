use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use latentflow::baselines::{
    de_optimize, random_baseline, write_history_csv, DeResult, RandomSummary,
};
use latentflow::mld::{
    evaluate, percentile, prepare_dataset, train_mld, EpochLog, Mld, MldArch, TrainOutcome,
};
use latentflow::msdrl::{
    evaluate_on_simulator, greedy, rollout_policy, simulate_npv, train_policy, write_eval_csv,
    write_schedule_csv, EvalRecord, LatentEnv, SimulatorEnv, TrainedPolicy,
};
use latentflow::sac::Agent;
use latentflow::scenario::{generate_dataset, Dataset, Mode, Scenario, Split};
use log::{info, warn};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Failure, Result};

/// Simulates the configured dataset into `out`.
pub fn gen_data(cfg: &RunConfig, out: &Path, jobs: usize) -> Result<Dataset> {
    cfg.echo(out)?;
    let ds = generate_dataset(&cfg.data, jobs)?;
    ds.write(out)?;
    Ok(ds)
}

/// Per-test-episode accuracy written next to a trained surrogate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub episode: usize,
    pub r2: f64,
    /// Total brine over the horizon and all producers, m³.
    pub predicted_cum_brine: f64,
    pub simulated_cum_brine: f64,
}

#[derive(Serialize)]
struct SweepRow {
    lambda: f64,
    epoch: usize,
    l_mse: f64,
    l_jec: f64,
    test_rmse: f64,
    test_r2: f64,
}

fn check_dataset(cfg: &RunConfig, ds: &Dataset) -> Result<()> {
    let d = ds.config();
    let c = &cfg.data;
    if d.grid != c.grid
        || d.wells() != c.wells()
        || d.horizon != c.horizon
        || d.dt_days != c.dt_days
        || d.sim.bounds != c.sim.bounds
    {
        return Err(Failure::config(
            "dataset grid, wells, horizon or control bounds differ from the config",
        ));
    }
    Ok(())
}

fn lambda_tag(l: f64) -> String {
    format!("{l}").replace('.', "p")
}

/// Trains one surrogate per `lambdas` entry. A single value writes
/// `mld.ckpt` and `mld_log.csv`; several also write a tagged checkpoint and
/// log per value plus `lambda_sweep.csv`.
pub fn train_mld_cmd(
    cfg: &RunConfig,
    dataset: &Path,
    lambdas: &[f64],
    out: &Path,
) -> Result<Vec<(f64, TrainOutcome<f32>)>> {
    let ds = Dataset::load(dataset)?;
    check_dataset(cfg, &ds)?;
    cfg.echo(out)?;
    let norm = ds
        .norm_stats()
        .ok_or_else(|| Failure::data("dataset has no training episodes"))?;
    let arch = MldArch::for_data(ds.config(), cfg.mask());
    let train = prepare_dataset(&ds, Split::Train)?;
    let test = prepare_dataset(&ds, Split::Test)?;
    let test_ids: Vec<usize> = ds.split(Split::Test).iter().map(|e| e.index).collect();
    let lambdas = if lambdas.is_empty() {
        vec![cfg.mld.lambda]
    } else {
        lambdas.to_vec()
    };
    let sweep = lambdas.len() > 1;
    let mut sweep_csv = if sweep {
        Some(csv::Writer::from_path(out.join("lambda_sweep.csv"))?)
    } else {
        None
    };
    let mut outcomes = Vec::new();
    for &lambda in &lambdas {
        let tc = latentflow::mld::TrainConfig {
            lambda,
            ..cfg.mld.clone()
        };
        let (ck, log) = if sweep {
            let t = lambda_tag(lambda);
            (
                out.join(format!("mld_lambda_{t}.ckpt")),
                out.join(format!("mld_log_lambda_{t}.csv")),
            )
        } else {
            (out.join("mld.ckpt"), out.join("mld_log.csv"))
        };
        info!("training surrogate with λ = {lambda}");
        let o = train_mld::<f32>(&arch, norm, &train, &test, &tc, Some(&ck), Some(&log))?;
        if let Some(e) = o.diverged_at {
            return Err(Failure {
                code: crate::error::NUMERIC,
                message: format!("training with λ = {lambda} diverged at epoch {e}"),
            });
        }
        if let Some(w) = sweep_csv.as_mut() {
            for row in &o.log {
                w.serialize(SweepRow {
                    lambda,
                    epoch: row.epoch,
                    l_mse: row.l_mse,
                    l_jec: row.l_jec,
                    test_rmse: row.test_rmse,
                    test_r2: row.test_r2,
                })?;
            }
            w.flush()?;
        }
        if !test.is_empty() {
            let eval = evaluate(&o.best, &test)?;
            let name = if sweep {
                format!("mld_test_cases_lambda_{}.csv", lambda_tag(lambda))
            } else {
                "mld_test_cases.csv".into()
            };
            let mut w = csv::Writer::from_path(out.join(name))?;
            let dt = cfg.data.dt_days;
            for (k, (p, e)) in eval.predictions.iter().zip(&test).enumerate() {
                w.serialize(TestCase {
                    episode: test_ids[k],
                    r2: eval.per_case_r2[k],
                    predicted_cum_brine: p.iter().sum::<f64>() * dt,
                    simulated_cum_brine: e.physical_responses.iter().sum::<f64>() * dt,
                })?;
            }
            w.flush()?;
            info!(
                "λ = {lambda}: best epoch {}, test R² {:.4}, RMSE {:.3}",
                o.best_epoch, eval.r2, eval.rmse
            );
        }
        outcomes.push((lambda, o));
    }
    Ok(outcomes)
}

fn load_mld(cfg: &RunConfig, path: &Path) -> Result<Mld<f32>> {
    let mld = Mld::<f32>::load(path)?;
    let a = &mld.arch;
    let g = &cfg.data.grid;
    if a.n_actions != cfg.mdp().n_actions() || (a.nx, a.ny, a.nz) != (g.nx, g.ny, g.nz) {
        return Err(Failure::config(format!(
            "{} was trained for a {}×{}×{} grid with {} controls",
            path.display(),
            a.nx,
            a.ny,
            a.nz,
            a.n_actions
        )));
    }
    Ok(mld)
}

/// Aquifers a policy is trained on and the subset scored during training.
pub fn training_scenarios(cfg: &RunConfig) -> Result<(Vec<Scenario>, Vec<usize>)> {
    Ok(match cfg.data.mode {
        Mode::Deterministic => (vec![cfg.data.deterministic_scenario()?], vec![0]),
        Mode::Generalizable => {
            let all = cfg.data.scenarios(cfg.data.root_seed, cfg.data.count)?;
            let train: Vec<Scenario> = all.into_iter().take(cfg.data.n_train).collect();
            let k = cfg.policy.eval_scenarios.min(train.len());
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.policy.seed ^ 0xE7A1);
            let mut ids = sample(&mut rng, train.len(), k).into_vec();
            ids.sort_unstable();
            (train, ids)
        }
    })
}

/// Aquifers a trained policy is scored on.
pub fn evaluation_scenarios(cfg: &RunConfig) -> Result<Vec<Scenario>> {
    Ok(match cfg.data.mode {
        Mode::Deterministic => vec![cfg.data.deterministic_scenario()?],
        Mode::Generalizable => cfg.data.held_out_scenarios(cfg.held_out)?,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AgentMeta {
    pub best_iteration: usize,
    pub best_eval_npv: f64,
    pub env_steps: usize,
    pub runtime_s: f64,
}

/// Trains the agent inside the surrogate; `agent.ckpt` holds the policy
/// with the best evaluation NPV and `agent_last.ckpt` the final one.
pub fn train_agent_cmd(cfg: &RunConfig, mld_path: &Path, out: &Path) -> Result<TrainedPolicy> {
    let mld = load_mld(cfg, mld_path)?;
    cfg.echo(out)?;
    let (scenarios, eval_ids) = training_scenarios(cfg)?;
    let mdp = cfg.mdp();
    let mut env = LatentEnv::new(&mld, &scenarios, cfg.data.sim, mdp.clone(), cfg.econ)?;
    let agent = Agent::<f32>::new(
        mld.arch.latent_dim,
        mdp.n_actions(),
        cfg.sac.clone(),
        cfg.policy.seed,
    )?;
    let train_ids: Vec<usize> = (0..scenarios.len()).collect();
    let t = Instant::now();
    let trained = train_policy(
        &mut env,
        agent,
        &mdp,
        &cfg.econ,
        &train_ids,
        &eval_ids,
        &cfg.policy,
        Some(&out.join("train_curve.csv")),
    )?;
    let meta = AgentMeta {
        best_iteration: trained.best_iteration,
        best_eval_npv: trained.best_eval_npv,
        env_steps: trained.env_steps,
        runtime_s: t.elapsed().as_secs_f64(),
    };
    trained
        .best
        .save(&out.join("agent.ckpt"), serde_json::to_value(&meta)?)?;
    trained
        .last
        .save(&out.join("agent_last.ckpt"), serde_json::to_value(&meta)?)?;
    Ok(trained)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalSummary {
    pub scenarios: usize,
    pub mean_predicted_npv: f64,
    pub mean_simulated_npv: Option<f64>,
    /// Training simulations plus verification runs.
    pub simulator_calls: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalOptions {
    /// Replays every schedule on the simulator.
    pub simulate: bool,
    /// Predicts with the simulator itself, so every gap is zero.
    pub self_test: bool,
}

/// Rolls the deterministic policy out in the surrogate for every evaluation
/// scenario and writes `eval_results.csv` and `schedules/`.
pub fn evaluate_cmd(
    cfg: &RunConfig,
    agent_path: &Path,
    mld_path: &Path,
    opts: EvalOptions,
    out: &Path,
) -> Result<Vec<EvalRecord>> {
    let mld = load_mld(cfg, mld_path)?;
    let (agent, _) = Agent::<f32>::load(agent_path)?;
    cfg.echo(out)?;
    let scenarios = evaluation_scenarios(cfg)?;
    let ids: Vec<usize> = (0..scenarios.len()).collect();
    let mdp = cfg.mdp();
    let mut env = LatentEnv::new(&mld, &scenarios, cfg.data.sim, mdp.clone(), cfg.econ)?;
    let mut results = rollout_policy(&mut env, &ids, greedy(&agent), &mdp, &cfg.econ)?;
    if opts.self_test {
        let mut sim_env = SimulatorEnv::new(&scenarios, cfg.data.sim, mdp.clone(), cfg.econ)?;
        let mut replayed = Vec::with_capacity(results.len());
        for (i, r) in results.iter().enumerate() {
            let actions: Vec<Vec<f64>> = r
                .schedule
                .steps
                .iter()
                .map(|c| latentflow::msdrl::controls_to_action(&c.to_vec(), &mdp.bounds))
                .collect();
            let mut t = 0;
            let open_loop = |_: &[f64]| {
                t += 1;
                Ok(actions[t - 1].clone())
            };
            replayed.extend(rollout_policy(
                &mut sim_env,
                &[i],
                open_loop,
                &mdp,
                &cfg.econ,
            )?);
        }
        results = replayed;
    }
    let records: Vec<EvalRecord> = if opts.simulate || opts.self_test {
        evaluate_on_simulator(
            &mut results,
            &scenarios,
            &ids,
            cfg.data.sim,
            &mdp,
            &cfg.econ,
        )
    } else {
        results
            .iter()
            .zip(&ids)
            .map(|(r, &i)| EvalRecord {
                scenario: i,
                predicted_npv: r.predicted_npv,
                simulated_npv: None,
                gap: None,
                error: None,
            })
            .collect()
    };
    for rec in records.iter().filter(|r| r.error.is_some()) {
        warn!(
            "scenario {}: {}",
            rec.scenario,
            rec.error.as_deref().unwrap_or_default()
        );
    }
    write_eval_csv(&out.join("eval_results.csv"), &records)?;
    let sched_dir = out.join("schedules");
    fs::create_dir_all(&sched_dir)?;
    for (r, i) in results.iter().zip(&ids) {
        write_schedule_csv(&sched_dir.join(format!("scenario_{i}.csv")), &r.schedule)?;
    }
    let n = records.len() as f64;
    let simulated: Vec<f64> = records.iter().filter_map(|r| r.simulated_npv).collect();
    let summary = EvalSummary {
        scenarios: records.len(),
        mean_predicted_npv: records.iter().map(|r| r.predicted_npv).sum::<f64>() / n,
        mean_simulated_npv: (!simulated.is_empty())
            .then(|| simulated.iter().sum::<f64>() / simulated.len() as f64),
        simulator_calls: cfg.data.n_train
            + if opts.simulate || opts.self_test {
                records.len()
            } else {
                0
            },
    };
    fs::write(
        out.join("eval_summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(records)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DeSummary {
    pub evaluations: usize,
    pub runtime_s: f64,
    pub best_npv: f64,
}

/// Differential evolution against the simulator on the fixed aquifer.
pub fn baseline_de_cmd(cfg: &RunConfig, out: &Path) -> Result<DeResult> {
    if cfg.data.mode != Mode::Deterministic {
        return Err(Failure::config(
            "the DE baseline optimizes the single aquifer of deterministic mode",
        ));
    }
    cfg.echo(out)?;
    let scen = cfg.data.deterministic_scenario()?;
    let mdp = cfg.mdp();
    let na = mdp.n_actions();
    let bounds: Vec<[f64; 2]> = (0..mdp.horizon)
        .flat_map(|_| mdp.bounds.iter().copied())
        .collect();
    let t = Instant::now();
    let objective = |x: &[f64]| {
        let steps: Vec<Vec<f64>> = x.chunks(na).map(<[f64]>::to_vec).collect();
        simulate_npv(&scen, cfg.data.sim, &mdp.schedule(&steps), &mdp, &cfg.econ)
            .unwrap_or(f64::NAN)
    };
    let r = de_optimize(objective, &bounds, &cfg.de)?;
    write_history_csv(&out.join("de_history.csv"), &r.history)?;
    let steps: Vec<Vec<f64>> = r.best.chunks(na).map(<[f64]>::to_vec).collect();
    write_schedule_csv(&out.join("de_best_schedule.csv"), &mdp.schedule(&steps))?;
    let summary = DeSummary {
        evaluations: r.evaluations,
        runtime_s: t.elapsed().as_secs_f64(),
        best_npv: r.best_value,
    };
    fs::write(
        out.join("de_summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(r)
}

#[derive(Serialize)]
struct RandomRow {
    draw: usize,
    scenario: usize,
    npv: f64,
}

/// Uniform random schedules on the simulator: `random_schedules` draws on
/// the fixed aquifer, or one draw per held-out aquifer in generalizable mode.
pub fn baseline_random_cmd(cfg: &RunConfig, out: &Path) -> Result<RandomSummary> {
    cfg.echo(out)?;
    let scenarios = evaluation_scenarios(cfg)?;
    let n = match cfg.data.mode {
        Mode::Deterministic => cfg.random_schedules,
        Mode::Generalizable => scenarios.len(),
    };
    let mdp = cfg.mdp();
    let na = mdp.n_actions();
    let bounds: Vec<[f64; 2]> = (0..mdp.horizon)
        .flat_map(|_| mdp.bounds.iter().copied())
        .collect();
    let summary = random_baseline(n, &bounds, cfg.random_seed(), |i, x| {
        let steps: Vec<Vec<f64>> = x.chunks(na).map(<[f64]>::to_vec).collect();
        simulate_npv(
            &scenarios[i % scenarios.len()],
            cfg.data.sim,
            &mdp.schedule(&steps),
            &mdp,
            &cfg.econ,
        )
        .unwrap_or(f64::NAN)
    })?;
    let mut w = csv::Writer::from_path(out.join("random_npv.csv"))?;
    for (i, v) in summary.values.iter().enumerate() {
        w.serialize(RandomRow {
            draw: i,
            scenario: i % scenarios.len(),
            npv: *v,
        })?;
    }
    w.flush()?;
    fs::write(
        out.join("random_summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(summary)
}

pub const PLOT_INPUTS: [&str; 7] = [
    "mld_log.csv",
    "lambda_sweep.csv",
    "mld_test_cases.csv",
    "train_curve.csv",
    "eval_results.csv",
    "de_history.csv",
    "random_npv.csv",
];

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|x| x.map_err(|e| Failure::data(format!("{}: {e}", path.display()))))
        .collect()
}

fn write_long(
    path: &Path,
    key: &str,
    rows: impl IntoIterator<Item = (Vec<String>, &'static str, f64)>,
    extra: &[&str],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = extra.to_vec();
    header.extend([key, "metric", "value"]);
    w.write_record(&header)?;
    for (mut k, m, v) in rows {
        k.push(m.to_string());
        k.push(v.to_string());
        w.write_record(&k)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct SweepIn {
    lambda: f64,
    epoch: usize,
    l_mse: f64,
    l_jec: f64,
    test_rmse: f64,
    test_r2: f64,
}

#[derive(Deserialize)]
struct CurveIn {
    iteration: usize,
    episode_npv: f64,
    eval_npv: Option<f64>,
    alpha: f64,
    q_loss: Option<f64>,
    policy_loss: Option<f64>,
}

fn epoch_metrics(l: &EpochLog) -> [(&'static str, f64); 4] {
    [
        ("l_mse", l.l_mse),
        ("l_jec", l.l_jec),
        ("test_rmse", l.test_rmse),
        ("test_r2", l.test_r2),
    ]
}

/// Turns the logs of a run directory into plot-ready CSVs under `out` and
/// returns the files written.
pub fn export_plots(run: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let present: Vec<&str> = PLOT_INPUTS
        .iter()
        .copied()
        .filter(|f| run.join(f).is_file())
        .collect();
    if present.is_empty() {
        return Err(Failure::data(format!(
            "{} holds none of the expected logs: {}",
            run.display(),
            PLOT_INPUTS.join(", ")
        )));
    }
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    let mut emit = |name: &str| {
        let p = out.join(name);
        written.push(p.clone());
        p
    };
    if present.contains(&"mld_log.csv") {
        let log: Vec<EpochLog> = read_rows(&run.join("mld_log.csv"))?;
        let rows = log
            .iter()
            .flat_map(|l| epoch_metrics(l).map(|(m, v)| (vec![l.epoch.to_string()], m, v)));
        write_long(&emit("loss_curves.csv"), "epoch", rows, &[])?;
    }
    if present.contains(&"lambda_sweep.csv") {
        let log: Vec<SweepIn> = read_rows(&run.join("lambda_sweep.csv"))?;
        let rows = log.iter().flat_map(|l| {
            [
                ("l_mse", l.l_mse),
                ("l_jec", l.l_jec),
                ("test_rmse", l.test_rmse),
                ("test_r2", l.test_r2),
            ]
            .map(|(m, v)| (vec![l.lambda.to_string(), l.epoch.to_string()], m, v))
        });
        write_long(&emit("lambda_sweep.csv"), "epoch", rows, &["lambda"])?;
    }
    if present.contains(&"mld_test_cases.csv") {
        let cases: Vec<TestCase> = read_rows(&run.join("mld_test_cases.csv"))?;
        let r2: Vec<f64> = cases.iter().map(|c| c.r2).collect();
        let mut w = csv::Writer::from_path(emit("r2_percentiles.csv"))?;
        w.write_record(["percentile", "r2"])?;
        for p in [10.0, 50.0, 90.0] {
            let v =
                percentile(&r2, p).ok_or_else(|| Failure::data("no finite per-case R² values"))?;
            w.write_record([format!("P{p}"), v.to_string()])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(emit("r2_cases.csv"))?;
        w.write_record(["rank", "episode", "r2"])?;
        let mut sorted = cases.clone();
        sorted.sort_by(|a, b| a.r2.total_cmp(&b.r2));
        for (k, c) in sorted.iter().enumerate() {
            w.write_record([k.to_string(), c.episode.to_string(), c.r2.to_string()])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(emit("crossplot.csv"))?;
        w.write_record([
            "episode",
            "simulated_cum_brine_m3",
            "predicted_cum_brine_m3",
        ])?;
        for c in &cases {
            w.write_record([
                c.episode.to_string(),
                c.simulated_cum_brine.to_string(),
                c.predicted_cum_brine.to_string(),
            ])?;
        }
        w.flush()?;
    }
    if present.contains(&"train_curve.csv") {
        let curve: Vec<CurveIn> = read_rows(&run.join("train_curve.csv"))?;
        let mut w = csv::Writer::from_path(emit("npv_curve.csv"))?;
        w.write_record(["iteration", "episode_npv", "eval_npv"])?;
        for c in &curve {
            w.write_record([
                c.iteration.to_string(),
                c.episode_npv.to_string(),
                c.eval_npv.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(emit("alpha_curve.csv"))?;
        w.write_record(["iteration", "alpha", "q_loss", "policy_loss"])?;
        for c in &curve {
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            w.write_record([
                c.iteration.to_string(),
                c.alpha.to_string(),
                opt(c.q_loss),
                opt(c.policy_loss),
            ])?;
        }
        w.flush()?;
    }
    for f in ["eval_results.csv", "de_history.csv", "random_npv.csv"] {
        if present.contains(&f) {
            fs::copy(run.join(f), emit(f))?;
        }
    }
    let de: Option<DeSummary> = read_json(&run.join("de_summary.json"))?;
    let ev: Option<EvalSummary> = read_json(&run.join("eval_summary.json"))?;
    if let (Some(de), Some(ev)) = (de, ev) {
        let mut w = csv::Writer::from_path(emit("comparison.csv"))?;
        w.write_record(["method", "simulator_calls", "best_npv"])?;
        w.write_record([
            "msdrl".to_string(),
            ev.simulator_calls.to_string(),
            ev.mean_simulated_npv
                .unwrap_or(ev.mean_predicted_npv)
                .to_string(),
        ])?;
        w.write_record([
            "de".to_string(),
            de.evaluations.to_string(),
            de.best_npv.to_string(),
        ])?;
        w.flush()?;
    }
    for f in PLOT_INPUTS.iter().filter(|f| !present.contains(f)) {
        warn!("{} not found; skipped", run.join(f).display());
    }
    Ok(written)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Option<T>> {
    if !path.is_file() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_str(&fs::read_to_string(path)?)?))
}
