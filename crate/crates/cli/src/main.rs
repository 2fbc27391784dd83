use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use latentflow_cli::commands::{self, EvalOptions};
use latentflow_cli::{Failure, RunConfig};

/// Surrogate-based CO2 storage well-control optimization.
#[derive(Parser)]
#[command(name = "latentflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON). Built-in desk defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the root seed.
    #[arg(long, env = "LATENTFLOW_SEED")]
    seed: Option<u64>,
    /// Worker threads for simulation-heavy steps.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory; defaults to `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the training dataset.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train the latent dynamics model.
    TrainMld {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        /// One or more loss weights; several run a sweep.
        #[arg(long, value_delimiter = ',')]
        lambda: Vec<f64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train the control policy inside the learned model.
    TrainAgent {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mld: PathBuf,
        /// Disables temperature tuning.
        #[arg(long)]
        fixed_alpha: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Score a trained policy.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        agent: PathBuf,
        #[arg(long)]
        mld: PathBuf,
        /// Replay the schedules on the simulator.
        #[arg(long)]
        simulate: bool,
        /// Use the simulator as the predicting environment.
        #[arg(long)]
        self_test: bool,
    },
    /// Differential evolution on the simulator.
    BaselineDe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Uniformly random schedules on the simulator.
    BaselineRandom {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Convert run logs into plot-ready CSV files.
    ExportPlots {
        /// Run directory holding the logs.
        #[arg(long)]
        run: PathBuf,
        /// Defaults to `<run>/plots`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Common {
    fn resolve(&self, edit: impl FnOnce(&mut RunConfig)) -> Result<(RunConfig, PathBuf), Failure> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        edit(&mut cfg);
        let cfg = cfg.resolve(self.seed)?;
        let out = self.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
        if self.jobs == 0 {
            return Err(Failure::config("--jobs must be at least 1"));
        }
        // a second initialization only happens in tests and is harmless
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build_global();
        Ok((cfg, out))
    }
}

fn print(path: &Path, what: &str) {
    println!("{what}: {}", path.display());
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenData { common } => {
            let (cfg, out) = common.resolve(|_| {})?;
            let ds = commands::gen_data(&cfg, &out, common.jobs)?;
            let m = ds.manifest();
            println!(
                "{} episodes ({} train, {} test), {} failures, {} floats per episode",
                m.episodes.len(),
                ds.split(latentflow::scenario::Split::Train).len(),
                ds.split(latentflow::scenario::Split::Test).len(),
                m.failures.len(),
                m.layout.floats_per_episode
            );
            print(&out, "dataset");
        }
        Command::TrainMld {
            common,
            dataset,
            lambda,
            epochs,
        } => {
            let (cfg, out) = common.resolve(|c| {
                if let Some(e) = epochs {
                    c.mld.epochs = e;
                }
            })?;
            for (l, o) in commands::train_mld_cmd(&cfg, &dataset, &lambda, &out)? {
                let last = o.log.last();
                println!(
                    "λ={l}: best epoch {}, final test R² {:.4}, RMSE {:.3}",
                    o.best_epoch,
                    last.map_or(f64::NAN, |r| r.test_r2),
                    last.map_or(f64::NAN, |r| r.test_rmse)
                );
            }
            print(&out, "model");
        }
        Command::TrainAgent {
            common,
            mld,
            fixed_alpha,
            iterations,
        } => {
            let (cfg, out) = common.resolve(|c| {
                if fixed_alpha.is_some() {
                    c.sac.fixed_alpha = fixed_alpha;
                }
                if let Some(i) = iterations {
                    c.policy.iterations = i;
                }
            })?;
            let t = commands::train_agent_cmd(&cfg, &mld, &out)?;
            println!(
                "best iteration {}, predicted NPV {:.6e} USD",
                t.best_iteration, t.best_eval_npv
            );
            print(&out, "agent");
        }
        Command::Evaluate {
            common,
            agent,
            mld,
            simulate,
            self_test,
        } => {
            let (cfg, out) = common.resolve(|_| {})?;
            let recs = commands::evaluate_cmd(
                &cfg,
                &agent,
                &mld,
                EvalOptions {
                    simulate,
                    self_test,
                },
                &out,
            )?;
            for r in &recs {
                match (r.simulated_npv, r.gap) {
                    (Some(s), Some(g)) => println!(
                        "scenario {}: predicted {:.6e}, simulated {:.6e}, gap {:+.4}",
                        r.scenario, r.predicted_npv, s, g
                    ),
                    _ => println!("scenario {}: predicted {:.6e}", r.scenario, r.predicted_npv),
                }
            }
            print(&out.join("eval_results.csv"), "results");
        }
        Command::BaselineDe { common, budget } => {
            let (cfg, out) = common.resolve(|c| {
                if let Some(b) = budget {
                    c.de.max_evaluations = b;
                }
            })?;
            let r = commands::baseline_de_cmd(&cfg, &out)?;
            println!(
                "{} evaluations, best NPV {:.6e} USD",
                r.evaluations, r.best_value
            );
            print(&out.join("de_history.csv"), "history");
        }
        Command::BaselineRandom { common, n } => {
            let (cfg, out) = common.resolve(|c| {
                if let Some(n) = n {
                    c.random_schedules = n;
                }
            })?;
            let s = commands::baseline_random_cmd(&cfg, &out)?;
            println!(
                "{} schedules, mean NPV {:.6e} USD, std {:.3e}",
                s.values.len(),
                s.mean,
                s.std
            );
            print(&out.join("random_npv.csv"), "values");
        }
        Command::ExportPlots { run, out } => {
            let out = out.unwrap_or_else(|| run.join("plots"));
            for p in commands::export_plots(&run, &out)? {
                print(&p, "wrote");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code as u8)
        }
    }
}
