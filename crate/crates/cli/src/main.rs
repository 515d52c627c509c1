//! `sagin`: train, compare and inspect link-selection policies.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sagin_core::baselines::{policy_from_checkpoint, PolicyKind};
use sagin_core::channel::{fspl_db, noise_floor_dbm, propagation_delay, LinkKind};
use sagin_core::env::{Environment, SaginEnv};
use sagin_core::harness::{self, compare, load_runs, run_experiment_with, ExperimentConfig, Metric, Profile};
use sagin_core::nn::{gradient_check, random_small_net};
use sagin_core::rng::stream;
use sagin_core::{Checkpoint, Error};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_ORDERING: u8 = 4;

#[derive(Parser)]
#[command(name = "sagin", version, about = "Space-air-ground multiconnectivity link selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one policy and save its traces (and checkpoint, for learners).
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        policy: PolicyKind,
    },
    /// Run every configured policy and report the orderings.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        /// Restrict the sweep to one policy (may be repeated).
        #[arg(long)]
        policy: Vec<PolicyKind>,
        /// Exit with status 4 if any expected ordering is violated.
        #[arg(long)]
        strict: bool,
        /// Re-read existing traces from `--out` instead of training.
        #[arg(long)]
        from_traces: bool,
    },
    /// Greedy evaluation of a saved checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
    },
    /// Finite-difference check of the network gradients.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        nets: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Print the radio anchor values.
    Physics,
}

#[derive(Args)]
struct RunArgs {
    /// TOML file mirroring the experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    profile: Option<Profile>,
}

impl RunArgs {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(p) = self.profile {
            cfg.episodes = p.episodes();
        }
        if let Some(n) = self.episodes {
            cfg.episodes = n;
        }
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        Ok(cfg)
    }
}

fn print_summary(rows: &[harness::SummaryRow]) {
    print!("{:<12} {:>5}", "policy", "seeds");
    for m in Metric::ALL {
        print!(" {:>26}", m.column());
    }
    println!();
    for row in rows {
        print!("{:<12} {:>5}", row.policy.name(), row.seeds);
        for m in Metric::ALL {
            let s = row.stat(m);
            print!(" {:>14.6e} ± {:<9.2e}", s.mean, s.std);
        }
        println!();
    }
}

fn progress(r: &harness::RunRecords) {
    eprintln!("finished {} seed {} ({} episodes)", r.policy, r.seed, r.records.len());
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Train { run, policy } => {
            let mut cfg = run.resolve()?;
            cfg.policies = vec![policy];
            cfg.checkpoints = policy.is_learning();
            let result = run_experiment_with(&cfg, progress)?;
            print_summary(&result.summary);
            println!("traces written to {}", cfg.out_dir.display());
            Ok(0)
        }
        Command::Compare {
            run,
            policy,
            strict,
            from_traces,
        } => {
            let mut cfg = run.resolve()?;
            if !policy.is_empty() {
                cfg.policies = policy;
            }
            let runs = if from_traces {
                cfg.validate()?;
                load_runs(&cfg)?
            } else {
                run_experiment_with(&cfg, progress)?.runs
            };
            let report = compare(&runs)?;
            print_summary(&report.summary);
            println!();
            print!("{}", report.to_text());
            if strict && report.violations() > 0 {
                eprintln!("{} ordering(s) violated", report.violations());
                return Ok(EXIT_ORDERING);
            }
            Ok(0)
        }
        Command::Eval {
            checkpoint,
            config,
            seed,
            episodes,
        } => {
            let cfg = match config {
                Some(path) => ExperimentConfig::load(&path)?,
                None => ExperimentConfig::default(),
            };
            let ckpt = Checkpoint::load(&checkpoint)?;
            let mut policy = policy_from_checkpoint(&ckpt)?;
            let mut env = SaginEnv::new(cfg.effective_env(), seed)?;
            if env.observation_dim() != ckpt.nets[0].1.input_dim() {
                return Err(Error::Checkpoint("checkpoint does not match the environment".into()));
            }
            let records = harness::evaluate(&mut env, policy.as_mut(), episodes, cfg.steps, |_| {})?;
            println!(
                "{} (trained {} episodes, seed {}), greedy over {} episodes:",
                ckpt.policy,
                ckpt.episodes,
                ckpt.seed,
                records.len()
            );
            for m in Metric::ALL {
                let v: Vec<f64> = records.iter().map(|r| m.value(r)).collect();
                let s = harness::Stat::of(&v);
                println!("  {:<14} {:.6e} ± {:.2e}", m.column(), s.mean, s.std);
            }
            Ok(0)
        }
        Command::Gradcheck { nets, seed } => {
            let mut rng = stream(seed, "gradcheck");
            let mut worst: f64 = 0.0;
            for i in 0..nets {
                let net = random_small_net(&mut rng);
                let err = gradient_check(&net, seed.wrapping_add(i as u64))?;
                println!("net {i:>2} {:<16} {:<8} max rel err {err:.3e}", format!("{:?}", net.sizes()), net.head().name());
                worst = worst.max(err);
            }
            let ok = worst < 1e-4;
            println!("max relative error {worst:.3e} ({})", if ok { "pass" } else { "FAIL" });
            Ok(if ok { 0 } else { EXIT_FAILURE })
        }
        Command::Physics => {
            println!("{:<36} {:>14}", "quantity", "value");
            println!("{:<36} {:>10.4} dB", "FSPL 100 m @ 28 GHz", fspl_db(100.0, 28e9));
            println!("{:<36} {:>10.4} dBm", "noise floor 100 MHz, NF 7 dB", noise_floor_dbm(100e6, 7.0));
            println!("{:<36} {:>10.6} ms", "propagation delay 550 km", propagation_delay(550e3) * 1e3);
            println!();
            let env = ExperimentConfig::default().env;
            println!("{:<6} {:>10} {:>9} {:>9} {:>8} {:>12}", "link", "bw (MHz)", "f (GHz)", "tx (dBm)", "cost (W)", "noise (dBm)");
            for kind in LinkKind::ALL {
                let p = &env.links[kind];
                println!(
                    "{:<6} {:>10.0} {:>9.1} {:>9.1} {:>8.1} {:>12.2}",
                    kind.name(),
                    p.bandwidth_hz / 1e6,
                    p.carrier_frequency_hz / 1e9,
                    p.tx_power_dbm,
                    p.power_cost_w,
                    noise_floor_dbm(p.bandwidth_hz, p.noise_figure_db)
                );
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() {
                EXIT_CONFIG
            } else if e.is_io() {
                EXIT_IO
            } else {
                EXIT_FAILURE
            })
        }
    }
}
