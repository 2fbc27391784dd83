//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.
//!
//! `ACCEPTANCE_DIR` sets the work directory, `ACCEPTANCE_ONLY=4,5` restricts
//! the run to some criteria, and `ACCEPTANCE_REUSE=1` keeps artefacts of an
//! earlier run instead of recomputing them.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Instant;

use latentflow::mld::{
    evaluate, prepare_dataset, train_mld, EpochLog, MldArch, ModalityMask, PreparedEpisode,
    TrainConfig,
};
use latentflow::reservoir::{mass_balance_residual, Simulator};
use latentflow::sac::diagnostic::{run as sac_diagnostic, MoveToTarget};
use latentflow::sac::{Agent, Batch, Experience, SacConfig};
use latentflow::scenario::{Dataset, NormStats, Split};
use latentflow::seed::{derive_seed, stream};
use latentflow_cli::commands::{
    baseline_de_cmd, baseline_random_cmd, evaluate_cmd, gen_data, train_agent_cmd, train_mld_cmd,
    EvalOptions,
};
use latentflow_cli::RunConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[path = "../../core/tests/support/grad_suite.rs"]
mod grad_suite;
#[path = "../../core/tests/support/physics.rs"]
mod physics;

const SEEDS_MLD: u64 = 3;
const SEEDS_POLICY: u64 = 5;
const DESK_ROOT: u64 = 2024;

struct Harness {
    dir: PathBuf,
    reuse: bool,
    only: Option<Vec<usize>>,
    results: Vec<(usize, bool)>,
}

impl Harness {
    fn wants(&self, id: usize) -> bool {
        self.only.as_ref().map_or(true, |o| o.contains(&id))
    }

    fn report(&mut self, id: usize, name: &str, pass: bool, detail: String) {
        println!(
            "criterion {id:>2} {} {name}: {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
        std::io::stdout().flush().ok();
        self.results.push((id, pass));
    }

    /// Loads `name` from an earlier run when reuse is on, else computes and
    /// stores it.
    fn cached<T: Serialize + DeserializeOwned>(&self, name: &str, f: impl FnOnce() -> T) -> T {
        let path = self.dir.join("cache").join(format!("{name}.json"));
        if self.reuse {
            if let Some(v) = fs::read_to_string(&path)
                .ok()
                .and_then(|s| serde_json::from_str(&s).ok())
            {
                return v;
            }
        }
        let v = f();
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
        v
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn std_err(v: &[f64]) -> f64 {
    let m = mean(v);
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0);
    (var / v.len() as f64).sqrt()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn gradient_fidelity(h: &mut Harness) {
    let t = Instant::now();
    let mut worst = (0.0f64, "");
    for case in grad_suite::cases() {
        let e = case.worst_error();
        if !(e <= worst.0) {
            worst = (e, case.name);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = worst.0 < grad_suite::TOLERANCE && secs < 120.0;
    h.report(
        1,
        "gradient fidelity",
        pass,
        format!(
            "worst relative error {:.2e} ({}), limit 1e-4; {secs:.1} s",
            worst.0, worst.1
        ),
    );
}

fn conservation(h: &mut Harness) {
    let cfg = RunConfig::default().resolve(None).unwrap();
    let scenarios = cfg
        .data
        .scenarios(derive_seed(DESK_ROOT, 0xACCE), 100)
        .unwrap();
    let schedules = cfg.data.schedules(100).unwrap();
    let (mut worst, mut sat_ok) = (0.0f64, true);
    for (sc, sched) in scenarios.iter().zip(&schedules) {
        let sim = Simulator::new(sc, cfg.data.sim).unwrap();
        let traj = sim.run_episode(sched, cfg.data.dt_days).unwrap();
        let [w, g] = mass_balance_residual(&sim, &traj);
        worst = worst.max(w).max(g);
        sat_ok &= traj
            .states
            .iter()
            .all(|s| s.water_saturation.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
    h.report(
        2,
        "simulator conservation",
        worst < 1e-8 && sat_ok,
        format!("worst mass-balance residual {worst:.2e} over 100 episodes, saturations in [0,1]: {sat_ok}"),
    );
}

fn physics_oracle(h: &mut Harness) {
    let t = Instant::now();
    let f = physics::buckley_leverett_front();
    let secs = t.elapsed().as_secs_f64();
    let rel = (f.simulated - f.welge).abs() / f.welge;
    h.report(
        3,
        "Buckley-Leverett front",
        rel < 0.05 && secs < 60.0,
        format!(
            "front {:.1} m vs Welge {:.1} m ({:.2}% off); {secs:.1} s",
            f.simulated,
            f.welge,
            100.0 * rel
        ),
    );
}

#[derive(Clone, Serialize, Deserialize)]
struct MldRun {
    ckpt: PathBuf,
    log: Vec<EpochLog>,
    r2: f64,
    rmse: f64,
    seconds: f64,
}

impl MldRun {
    fn last(&self) -> &EpochLog {
        self.log.last().unwrap()
    }
}

/// The deterministic desk case: one dataset, surrogates trained on it with
/// varying λ, training size and seed.
struct Desk {
    cfg: RunConfig,
    dir: PathBuf,
    norm: NormStats,
    arch: MldArch,
    train: Vec<PreparedEpisode>,
    test: Vec<PreparedEpisode>,
    runs: BTreeMap<(String, usize, u64), MldRun>,
}

fn stage_seed(k: u64, s: u64) -> u64 {
    derive_seed(DESK_ROOT + k, s)
}

impl Desk {
    fn new(h: &Harness) -> Self {
        let cfg = RunConfig::default().resolve(Some(DESK_ROOT)).unwrap();
        let dir = h.dir.join("desk");
        let dataset = dir.join("dataset");
        let ds = if h.reuse && dataset.join("data.bin").is_file() {
            Dataset::load(&dataset).unwrap()
        } else {
            let t = Instant::now();
            let ds = gen_data(&cfg, &dataset, 1).unwrap();
            println!(
                "  desk dataset: {} episodes in {:.0} s",
                ds.episodes.len(),
                t.elapsed().as_secs_f64()
            );
            ds
        };
        Self {
            norm: ds.norm_stats().unwrap().clone(),
            arch: MldArch::for_data(ds.config(), cfg.mask()),
            train: prepare_dataset(&ds, Split::Train).unwrap(),
            test: prepare_dataset(&ds, Split::Test).unwrap(),
            cfg,
            dir,
            runs: BTreeMap::new(),
        }
    }

    /// Surrogate trained on the first `n_train` training episodes with the
    /// `k`-th seed.
    fn mld(&mut self, h: &Harness, lambda: f64, n_train: usize, k: u64) -> MldRun {
        let key = (format!("{lambda}"), n_train, k);
        if let Some(r) = self.runs.get(&key) {
            return r.clone();
        }
        let name = format!("mld_l{}_n{n_train}_s{k}", key.0);
        let ckpt = self.dir.join(format!("{name}.ckpt"));
        let run = h.cached(&name, || {
            let tc = TrainConfig {
                lambda,
                seed: stage_seed(k, stream::MLD),
                ..self.cfg.mld.clone()
            };
            let t = Instant::now();
            let o = train_mld::<f32>(
                &self.arch,
                &self.norm,
                &self.train[..n_train],
                &self.test,
                &tc,
                Some(&ckpt),
                None,
            )
            .unwrap();
            let seconds = t.elapsed().as_secs_f64();
            assert!(o.diverged_at.is_none(), "{name} diverged");
            let e = evaluate(&o.best, &self.test).unwrap();
            println!(
                "  {name}: test R² {:.4}, RMSE {:.2}, {seconds:.0} s",
                e.r2, e.rmse
            );
            MldRun {
                ckpt: ckpt.clone(),
                log: o.log,
                r2: e.r2,
                rmse: e.rmse,
                seconds,
            }
        });
        self.runs.insert(key, run.clone());
        run
    }
}

fn mld_reproduction(h: &mut Harness, desk: &mut Desk) {
    let r = desk.mld(h, 10.0, 300, 0);
    let rmse: Vec<f64> = r.log.iter().map(|l| l.test_rmse).collect();
    let min = rmse.iter().copied().fold(f64::INFINITY, f64::min);
    let tail = mean(&rmse[rmse.len().saturating_sub(20)..]);
    let spread = (tail - min) / min;
    let pass = r.r2 >= 0.95 && r.seconds <= 1800.0 && spread <= 0.05;
    h.report(
        4,
        "MLD desk reproduction",
        pass,
        format!(
            "test R² {:.4} (≥ 0.95), training {:.0} s (≤ 1800), last-20 RMSE average {:.2}% above minimum (≤ 5%)",
            r.r2,
            r.seconds,
            100.0 * spread
        ),
    );
}

fn lambda_sweep(h: &mut Harness, desk: &mut Desk) {
    let lambdas = [0.1, 1.0, 10.0, 100.0];
    let mut r2: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut trend = 0;
    for k in 0..SEEDS_MLD {
        for (i, &l) in lambdas.iter().enumerate() {
            r2.entry(i).or_default().push(desk.mld(h, l, 300, k).r2);
        }
        let (a, b) = (desk.mld(h, 100.0, 300, k), desk.mld(h, 10.0, 300, k));
        if a.last().l_mse < b.last().l_mse && a.last().l_jec > b.last().l_jec {
            trend += 1;
        }
    }
    let means: Vec<f64> = (0..4).map(|i| mean(&r2[&i])).collect();
    let best = (0..4)
        .max_by(|&a, &b| means[a].total_cmp(&means[b]))
        .unwrap();
    let tie = 2.0 * (std_err(&r2[&best]).powi(2) + std_err(&r2[&2]).powi(2)).sqrt();
    let r2_ok = best == 2 || means[best] - means[2] <= tie;
    let pass = trend == SEEDS_MLD as usize && r2_ok;
    let summary: Vec<String> = lambdas
        .iter()
        .zip(&means)
        .map(|(l, m)| format!("λ={l}: {m:.4}"))
        .collect();
    h.report(
        5,
        "λ-sweep trend",
        pass,
        format!(
            "λ=100 has lower L_MSE and higher L_JEC than λ=10 in {trend}/{SEEDS_MLD} seeds; mean test R² {}; best λ={} (tie margin {tie:.4})",
            summary.join(", "),
            lambdas[best]
        ),
    );
}

fn sample_efficiency(h: &mut Harness, desk: &mut Desk) {
    let sizes = [100, 200, 300];
    let medians: Vec<f64> = sizes
        .iter()
        .map(|&n| {
            median(
                &(0..SEEDS_MLD)
                    .map(|k| desk.mld(h, 10.0, n, k).r2)
                    .collect::<Vec<_>>(),
            )
        })
        .collect();
    let pass = medians.windows(2).all(|w| w[1] >= w[0]);
    let s: Vec<String> = sizes
        .iter()
        .zip(&medians)
        .map(|(n, m)| format!("{n}: {m:.4}"))
        .collect();
    h.report(
        6,
        "sample-efficiency trend",
        pass,
        format!("median test R² by training size {}", s.join(", ")),
    );
}

fn sac_correctness(h: &mut Harness) {
    #[derive(Serialize, Deserialize)]
    struct Diag {
        first: Option<usize>,
        log_prob: f64,
        h0: f64,
    }
    let d = h.cached("sac_diagnostic", || {
        let cfg = SacConfig {
            hidden: 64,
            ..SacConfig::default()
        };
        let (_, short) = sac_diagnostic(MoveToTarget::default(), cfg.clone(), 200, 10, 0).unwrap();
        let (_, long) = sac_diagnostic(MoveToTarget::default(), cfg, 3000, 100, 0).unwrap();
        Diag {
            first: short.first_reaching(0.95),
            log_prob: long.final_log_prob(2000),
            h0: long.entropy_target,
        }
    });
    let frozen = targets_are_gradient_free();
    let pass = d.first.is_some_and(|e| e <= 200) && (d.log_prob + d.h0).abs() <= 0.5 && frozen;
    h.report(
        7,
        "SAC correctness",
        pass,
        format!(
            "95% of optimal return at episode {:?} (≤ 200); mean log π {:.3} vs −H₀ = {:.1}; targets move only by Polyak averaging: {frozen}",
            d.first, d.log_prob, -d.h0
        ),
    );
}

fn targets_are_gradient_free() -> bool {
    let cfg = SacConfig {
        hidden: 16,
        batch_size: 8,
        tau: 0.2,
        ..SacConfig::default()
    };
    let mut agent = Agent::<f64>::new(3, 2, cfg, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let exps: Vec<Experience> = (0..8)
        .map(|i| Experience {
            z: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            a: (0..2).map(|_| rng.gen_range(-0.9..0.9)).collect(),
            r: rng.gen_range(-1.0..1.0),
            z_next: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            done: i % 4 == 3,
        })
        .collect();
    let batch = Batch::from_experiences(&exps);
    let mut ok = true;
    for _ in 0..5 {
        let before = [agent.q1_target.clone(), agent.q2_target.clone()];
        agent.update(&batch, &mut rng).unwrap();
        for (old, (target, online)) in before
            .iter()
            .zip([(&agent.q1_target, &agent.q1), (&agent.q2_target, &agent.q2)])
        {
            for (name, t) in target.iter() {
                let (o, b) = (online.value(name).unwrap(), old.value(name).unwrap());
                for ((&t, &o), &b) in t.data().iter().zip(o.data()).zip(b.data()) {
                    ok &= (t - (0.2 * o + 0.8 * b)).abs() < 1e-12;
                }
            }
        }
    }
    ok
}

#[derive(Clone, Serialize, Deserialize)]
struct PolicyRun {
    predicted: f64,
    simulated: f64,
    best_iteration: usize,
}

fn policy_run(h: &Harness, cfg: &RunConfig, mld: &Path, out: &Path, name: &str) -> PolicyRun {
    h.cached(name, || {
        let t = Instant::now();
        let trained = train_agent_cmd(cfg, mld, out).unwrap();
        let rec = evaluate_cmd(
            cfg,
            &out.join("agent.ckpt"),
            mld,
            EvalOptions {
                simulate: true,
                self_test: false,
            },
            out,
        )
        .unwrap();
        let predicted = mean(&rec.iter().map(|r| r.predicted_npv).collect::<Vec<_>>());
        let simulated = mean(&rec.iter().map(|r| r.simulated_npv.expect("simulated")).collect::<Vec<_>>());
        println!(
            "  {name}: predicted {predicted:.4e}, simulated {simulated:.4e} USD, best iteration {}, {:.0} s",
            trained.best_iteration,
            t.elapsed().as_secs_f64()
        );
        PolicyRun {
            predicted,
            simulated,
            best_iteration: trained.best_iteration,
        }
    })
}

fn msdrl_comparisons(h: &mut Harness, desk: &mut Desk) {
    let mut auto = Vec::new();
    let mut fixed = Vec::new();
    let mut de = Vec::new();
    for k in 0..SEEDS_POLICY {
        let mld = desk.mld(h, 10.0, 300, k).ckpt;
        let mut cfg = desk.cfg.clone();
        cfg.policy.seed = stage_seed(k, stream::AGENT);
        cfg.de.seed = stage_seed(k, stream::DE);
        let dir = desk.dir.join(format!("seed{k}"));
        auto.push(policy_run(
            h,
            &cfg,
            &mld,
            &dir.join("autotuned"),
            &format!("msdrl_auto_s{k}"),
        ));
        if h.wants(9) {
            let mut fc = cfg.clone();
            fc.sac.fixed_alpha = Some(0.25);
            fixed.push(policy_run(
                h,
                &fc,
                &mld,
                &dir.join("fixed"),
                &format!("msdrl_fixed_s{k}"),
            ));
        }
        if h.wants(8) {
            de.push(h.cached(&format!("de_s{k}"), || {
                let t = Instant::now();
                let r = baseline_de_cmd(&cfg, &dir.join("de")).unwrap();
                println!(
                    "  de_s{k}: best {:.4e} USD after {} runs, {:.0} s",
                    r.best_value,
                    r.evaluations,
                    t.elapsed().as_secs_f64()
                );
                (r.best_value, r.evaluations)
            }));
        }
    }
    if h.wants(8) {
        let wins = auto
            .iter()
            .zip(&de)
            .filter(|(a, d)| a.simulated >= d.0)
            .count();
        let calls = desk.cfg.data.n_train as f64;
        let ratio = calls / de[0].1 as f64;
        let pairs: Vec<String> = auto
            .iter()
            .zip(&de)
            .map(|(a, d)| format!("{:.4e}/{:.4e}", a.simulated, d.0))
            .collect();
        h.report(
            8,
            "MSDRL vs DE",
            wins >= 4 && ratio <= 0.40,
            format!(
                "MSDRL ≥ DE in {wins}/5 seeds (MSDRL/DE NPV {}); simulator calls {calls:.0} vs {} = {:.1}% (≤ 40%)",
                pairs.join(", "),
                de[0].1,
                100.0 * ratio
            ),
        );
    }
    if h.wants(9) {
        let wins = auto
            .iter()
            .zip(&fixed)
            .filter(|(a, f)| a.simulated >= f.simulated)
            .count();
        let pairs: Vec<String> = auto
            .iter()
            .zip(&fixed)
            .map(|(a, f)| format!("{:.4e}/{:.4e}", a.simulated, f.simulated))
            .collect();
        h.report(
            9,
            "autotuned vs fixed α",
            wins >= 4,
            format!(
                "autotuned ≥ fixed α=0.25 in {wins}/5 seeds (autotuned/fixed NPV {})",
                pairs.join(", ")
            ),
        );
    }
    if h.wants(10) {
        let gaps: Vec<f64> = auto
            .iter()
            .map(|a| (a.predicted - a.simulated).abs() / a.simulated.abs())
            .collect();
        let worst = gaps.iter().copied().fold(0.0, f64::max);
        let g: Vec<String> = gaps.iter().map(|g| format!("{:.2}%", 100.0 * g)).collect();
        h.report(
            10,
            "surrogate-simulator gap",
            worst <= 0.10,
            format!(
                "relative NPV gap at the returned optimum {} (≤ 10%)",
                g.join(", ")
            ),
        );
    }
}

fn generalizable(h: &mut Harness) {
    let dir = h.dir.join("generalizable");
    let base = RunConfig::generalizable().resolve(Some(DESK_ROOT)).unwrap();
    let dataset = dir.join("dataset");
    if !(h.reuse && dataset.join("data.bin").is_file()) {
        let t = Instant::now();
        let ds = gen_data(&base, &dataset, 1).unwrap();
        println!(
            "  generalizable dataset: {} episodes in {:.0} s",
            ds.episodes.len(),
            t.elapsed().as_secs_f64()
        );
    }
    let arm = |mask: ModalityMask, tag: &str| {
        let mut cfg = base.clone();
        cfg.modality = Some(mask);
        let out = dir.join(tag);
        let ckpt = out.join("mld.ckpt");
        if !(h.reuse && ckpt.is_file()) {
            let t = Instant::now();
            train_mld_cmd(&cfg, &dataset, &[], &out).unwrap();
            println!(
                "  generalizable {tag} surrogate: {:.0} s",
                t.elapsed().as_secs_f64()
            );
        }
        policy_run(h, &cfg, &ckpt, &out, &format!("generalizable_{tag}"))
    };
    let multi = arm(ModalityMask::all(), "multimodal");
    let uni = arm(ModalityMask::state_only(), "unimodal");
    let random = h.cached("generalizable_random", || {
        baseline_random_cmd(&base, &dir.join("random"))
            .unwrap()
            .mean
    });
    let gain = multi.simulated / random - 1.0;
    let pass = gain >= 0.02 && multi.simulated >= uni.simulated;
    h.report(
        11,
        "generalizable mode",
        pass,
        format!(
            "mean NPV on {} held-out aquifers: multimodal {:.4e}, unimodal {:.4e}, random {:.4e} USD; gain over random {:.2}% (≥ 2%)",
            base.held_out,
            multi.simulated,
            uni.simulated,
            random,
            100.0 * gain
        ),
    );
}

/// Field-wise comparison of two CSV files, numbers to `tol`.
fn csv_matches(a: &Path, b: &Path, tol: f64) -> bool {
    let (Ok(x), Ok(y)) = (fs::read_to_string(a), fs::read_to_string(b)) else {
        return false;
    };
    let (x, y): (Vec<&str>, Vec<&str>) = (x.lines().collect(), y.lines().collect());
    x.len() == y.len()
        && x.iter().zip(&y).all(|(l, m)| {
            let (f, g): (Vec<&str>, Vec<&str>) = (l.split(',').collect(), m.split(',').collect());
            f.len() == g.len()
                && f.iter()
                    .zip(&g)
                    .all(|(u, v)| match (u.parse::<f64>(), v.parse::<f64>()) {
                        (Ok(p), Ok(q)) => (p.is_nan() && q.is_nan()) || (p - q).abs() <= tol,
                        _ => u == v,
                    })
        })
}

fn determinism(h: &mut Harness) {
    let dir = h.dir.join("determinism");
    let _ = fs::remove_dir_all(&dir);
    let mut cfg = RunConfig::default();
    cfg.data.count = 12;
    cfg.data.n_train = 10;
    cfg.data.n_test = 2;
    cfg.data.horizon = 4;
    cfg.mld.epochs = 3;
    cfg.mld.batch_size = 4;
    cfg.sac.hidden = 32;
    cfg.sac.batch_size = 16;
    cfg.policy.iterations = 15;
    cfg.de.population = 6;
    cfg.random_schedules = 4;
    fs::create_dir_all(&dir).unwrap();
    let cfg_path = dir.join("config.json");
    fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let c = cfg_path.to_str().unwrap();
    let run = |args: &[&str]| {
        let st = Command::new(env!("CARGO_BIN_EXE_latentflow"))
            .args(args)
            .env_remove("LATENTFLOW_SEED")
            .env("RUST_LOG", "error")
            .stdout(Stdio::null())
            .status()
            .unwrap();
        assert!(st.success(), "{args:?}");
    };
    for tag in ["a", "b"] {
        let r = dir.join(tag);
        let s = |p: &str| r.join(p).to_str().unwrap().to_string();
        let (ds, mld, agent, ev, de, rnd) = (
            s("ds"),
            s("mld"),
            s("agent"),
            s("eval"),
            s("de"),
            s("random"),
        );
        let seed = ["--seed", "11"];
        run(&[&["gen-data", "--config", c, "--out", &ds][..], &seed].concat());
        run(&[
            &["train-mld", "--config", c, "--dataset", &ds, "--out", &mld][..],
            &seed,
        ]
        .concat());
        let ck = format!("{mld}/mld.ckpt");
        run(&[
            &["train-agent", "--config", c, "--mld", &ck, "--out", &agent][..],
            &seed,
        ]
        .concat());
        let ag = format!("{agent}/agent.ckpt");
        run(&[
            &[
                "evaluate",
                "--config",
                c,
                "--agent",
                &ag,
                "--mld",
                &ck,
                "--simulate",
                "--out",
                &ev,
            ][..],
            &seed,
        ]
        .concat());
        run(&[
            &["baseline-de", "--config", c, "--budget", "30", "--out", &de][..],
            &seed,
        ]
        .concat());
        run(&[
            &["baseline-random", "--config", c, "--out", &rnd][..],
            &seed,
        ]
        .concat());
    }
    let (a, b) = (dir.join("a"), dir.join("b"));
    let bytes = |p: &str| {
        fs::read(a.join(p))
            .ok()
            .is_some_and(|x| fs::read(b.join(p)).ok().as_ref() == Some(&x))
    };
    let checks = [
        (
            "dataset bytes",
            bytes("ds/data.bin") && bytes("ds/manifest.json"),
        ),
        (
            "MLD log",
            csv_matches(&a.join("mld/mld_log.csv"), &b.join("mld/mld_log.csv"), 1e-6),
        ),
        (
            "training curve",
            csv_matches(
                &a.join("agent/train_curve.csv"),
                &b.join("agent/train_curve.csv"),
                1e-6,
            ),
        ),
        (
            "evaluation",
            csv_matches(
                &a.join("eval/eval_results.csv"),
                &b.join("eval/eval_results.csv"),
                1e-6,
            ),
        ),
        (
            "DE history",
            csv_matches(
                &a.join("de/de_history.csv"),
                &b.join("de/de_history.csv"),
                1e-6,
            ),
        ),
        (
            "random baseline",
            csv_matches(
                &a.join("random/random_npv.csv"),
                &b.join("random/random_npv.csv"),
                1e-6,
            ),
        ),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    h.report(
        12,
        "determinism",
        failed.is_empty(),
        if failed.is_empty() {
            "every command reproduced its outputs on re-run".into()
        } else {
            format!("differences in {}", failed.join(", "))
        },
    );
}

fn main() {
    let dir = std::env::var_os("ACCEPTANCE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance"));
    let reuse = std::env::var("ACCEPTANCE_REUSE").is_ok_and(|v| v == "1");
    if !reuse {
        let _ = fs::remove_dir_all(&dir);
    }
    fs::create_dir_all(&dir).unwrap();
    let only = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut h = Harness {
        dir,
        reuse,
        only,
        results: Vec::new(),
    };
    let start = Instant::now();
    println!("acceptance run in {}", h.dir.display());

    if h.wants(1) {
        gradient_fidelity(&mut h);
    }
    if h.wants(2) {
        conservation(&mut h);
    }
    if h.wants(3) {
        physics_oracle(&mut h);
    }
    if [4, 5, 6, 8, 9, 10].iter().any(|&i| h.wants(i)) {
        let mut desk = Desk::new(&h);
        if h.wants(4) {
            mld_reproduction(&mut h, &mut desk);
        }
        if h.wants(5) {
            lambda_sweep(&mut h, &mut desk);
        }
        if h.wants(6) {
            sample_efficiency(&mut h, &mut desk);
        }
        if [8, 9, 10].iter().any(|&i| h.wants(i)) {
            msdrl_comparisons(&mut h, &mut desk);
        }
    }
    if h.wants(7) {
        sac_correctness(&mut h);
    }
    if h.wants(11) {
        generalizable(&mut h);
    }
    if h.wants(12) {
        determinism(&mut h);
    }

    h.results.sort_by_key(|r| r.0);
    let passed = h.results.iter().filter(|r| r.1).count();
    println!(
        "acceptance: {passed}/{} criteria passed in {:.0} s",
        h.results.len(),
        start.elapsed().as_secs_f64()
    );
    if passed != h.results.len() {
        std::process::exit(1);
    }
}
