use latentflow::mld::{Mld, MldArch, ModalityMask};
use latentflow::msdrl::*;
use latentflow::sac::{Agent, SacConfig};
use latentflow::scenario::{DataConfig, NormStats, Range};

fn desk() -> (DataConfig, MdpConfig) {
    let cfg = DataConfig::default();
    let mdp = MdpConfig::from_data(&cfg);
    (cfg, mdp)
}

fn untrained_mld(cfg: &DataConfig) -> Mld<f32> {
    let arch = MldArch::for_data(cfg, ModalityMask::state_only());
    let norm = NormStats {
        state: vec![Range::new(150.0, 200.0), Range::new(0.0, 1.0)],
        static_fields: vec![Range::new(0.0, 10.0); 2 * arch.nz],
        relperm: vec![Range::new(0.0, 1.0); 6],
        controls: cfg
            .action_bounds()
            .iter()
            .map(|b| Range::new(b[0], b[1]))
            .collect(),
        responses: vec![Range::new(0.0, 500.0); arch.n_responses],
    };
    Mld::new(arch.clone(), arch.init(7).unwrap(), norm)
}

fn small_sac() -> SacConfig {
    SacConfig {
        hidden: 32,
        batch_size: 16,
        ..SacConfig::default()
    }
}

#[test]
fn simulator_environment_has_zero_gap() {
    let (cfg, mdp) = desk();
    let econ = EconParams {
        b: 0.08,
        ..EconParams::default()
    };
    let scen = cfg.deterministic_scenario().unwrap();
    let mut env = SimulatorEnv::new(&[scen.clone()], cfg.sim, mdp.clone(), econ).unwrap();
    let mut t = 0;
    let policy = |_: &[f64]| {
        t += 1;
        Ok((0..mdp.n_actions())
            .map(|i| ((t * 7 + i) as f64).sin() * 0.9)
            .collect())
    };
    let mut res = rollout_policy(&mut env, &[0], policy, &mdp, &econ).unwrap();
    let recs = evaluate_on_simulator(&mut res, &[scen], &[0], cfg.sim, &mdp, &econ);
    assert_eq!(recs[0].gap, Some(0.0));
    assert_eq!(recs[0].simulated_npv, Some(res[0].predicted_npv));
    assert_eq!(res[0].schedule.horizon(), mdp.horizon);
}

#[test]
fn predicted_npv_is_sum_of_rewards_without_discounting() {
    let (cfg, mdp) = desk();
    let econ = EconParams::default();
    let mld = untrained_mld(&cfg);
    let scen = cfg.deterministic_scenario().unwrap();
    let mut env = LatentEnv::new(&mld, &[scen], cfg.sim, mdp.clone(), econ).unwrap();
    let res = rollout_policy(
        &mut env,
        &[0, 0],
        |o: &[f64]| Ok(vec![0.5; o.len() / 64 * 5]),
        &mdp,
        &econ,
    )
    .unwrap();
    assert_eq!(res.len(), 2);
    assert_eq!(
        res[0].predicted_npv,
        res[0].per_step_rewards.iter().sum::<f64>()
    );
    assert_eq!(res[0], res[1]);
    let inj = mdp.bounds[0][0] + 0.75 * (mdp.bounds[0][1] - mdp.bounds[0][0]);
    assert!((res[0].schedule.steps[3].injector_rates[0] - inj).abs() < 1e-9);
}

#[test]
fn latent_training_smoke_run_is_reproducible() {
    let (cfg, mdp) = desk();
    let econ = EconParams::default();
    let mld = untrained_mld(&cfg);
    let scen = cfg.deterministic_scenario().unwrap();
    let mut env = LatentEnv::new(&mld, &[scen], cfg.sim, mdp.clone(), econ).unwrap();
    let pc = PolicyTrainConfig {
        iterations: 5,
        episodes_per_iteration: 2,
        eval_every: 2,
        ..PolicyTrainConfig::default()
    };
    let run = |env: &mut LatentEnv<f32>| {
        let agent = Agent::<f32>::new(64, 5, small_sac(), 3).unwrap();
        train_policy(env, agent, &mdp, &econ, &[0], &[0], &pc, None).unwrap()
    };
    let a = run(&mut env);
    let b = run(&mut env);
    assert_eq!(a.curve.len(), 5);
    assert_eq!(a.env_steps, 5 * 2 * mdp.horizon);
    assert!(a.curve.iter().filter(|r| r.eval_npv.is_some()).count() == 3);
    assert!(a.curve.iter().skip(1).all(|r| r.q_loss.is_finite()));
    assert_eq!(a.curve, b.curve);
    assert!(a.best_eval_npv.is_finite());
}

#[test]
fn mismatched_agent_is_a_config_error() {
    let (cfg, mdp) = desk();
    let econ = EconParams::default();
    let mld = untrained_mld(&cfg);
    let scen = cfg.deterministic_scenario().unwrap();
    let mut env = LatentEnv::new(&mld, &[scen], cfg.sim, mdp.clone(), econ).unwrap();
    let agent = Agent::<f32>::new(32, 5, small_sac(), 0).unwrap();
    let err = train_policy(
        &mut env,
        agent,
        &mdp,
        &econ,
        &[0],
        &[0],
        &PolicyTrainConfig::default(),
        None,
    )
    .unwrap_err();
    assert!(matches!(err, MsdrlError::Config(_)));
}

#[test]
fn schedule_csv_round_trip() {
    let (_, mdp) = desk();
    let steps: Vec<Vec<f64>> = (0..mdp.horizon)
        .map(|t| action_to_controls(&[0.1 * t as f64 - 0.5; 5], &mdp.bounds))
        .collect();
    let schedule = mdp.schedule(&steps);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    write_schedule_csv(&path, &schedule).unwrap();
    assert_eq!(read_schedule_csv(&path, mdp.n_injectors).unwrap(), schedule);
}
