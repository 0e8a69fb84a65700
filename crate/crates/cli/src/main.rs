use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};
use sparse_policy::algos::Algo;
use sparse_policy::gates::{GateMode, Sparsity};
use sparse_policy::harness::{
    self, decompose_checkpoint, evaluate_checkpoint, rank_sweep_checkpoint, run_experiment,
    write_rank_sweep, Checkpoint, ExperimentConfig, RANK_SWEEP_CSV,
};
use sparse_policy::Error;

#[derive(Parser)]
#[command(name = "sparse-policy", version, about = "Train, sweep, evaluate and compress sparse RL policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one policy and write CSV logs, a summary and a checkpoint.
    Train(TrainArgs),
    /// Run every (coefficient, seed) pair of a config file.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Evaluate a checkpoint greedily.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value = "sampled")]
        gate_mode: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Factor a checkpoint's weights at one rank, or sweep a rank range.
    #[command(group(ArgGroup::new("ranks").required(true).args(["rank", "rank_min"])))]
    Decompose {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long, requires = "rank_max")]
        rank_min: Option<usize>,
        #[arg(long, requires = "rank_min")]
        rank_max: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Evaluation episodes per rank.
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Summarize runs and rank sweeps found under a directory.
    Report {
        dir: PathBuf,
        /// Print JSON instead of the text table.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    env: String,
    #[arg(long, default_value = "dqn")]
    algo: String,
    #[arg(long, default_value = "none")]
    sparsity: String,
    #[arg(long, default_value_t = 0.0)]
    coeff: f64,
    /// Defaults to the algorithm's episode budget.
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Extra config overrides, `key=value` (same keys as config files).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn train(a: TrainArgs) -> Result<(), Failure> {
    let algo: Algo = a.algo.parse()?;
    let mut exp = ExperimentConfig::new(&a.env, algo)?;
    exp.algo.sparsity = a.sparsity.parse::<Sparsity>()?;
    exp.algo.lambda_c = a.coeff;
    exp.algo.seed = a.seed;
    if let Some(n) = a.episodes {
        exp.algo.episodes = n;
    }
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Config(format!("--set expects key=value, got {kv:?}")))?;
        exp.set(k.trim(), v.trim())?;
    }
    let run = run_experiment(&a.env, &exp.algo, &a.out)?;
    let s = &run.summary;
    println!(
        "{} {} sparsity={} coeff={} seed={}: {} episodes, final reward {}, sparsity {}%, converged at eval {}",
        s.env,
        s.algo,
        s.sparsity,
        s.lambda_c,
        s.seed,
        s.episodes_run,
        s.final_reward.map_or("-".into(), |r| format!("{r:.2}")),
        s.sparsity_pct.map_or("-".into(), |p| format!("{p:.2}")),
        s.convergence_step.map_or("-".into(), |c| c.to_string()),
    );
    println!("wrote {}", a.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train(a) => train(a),
        Command::Sweep { config, workers } => {
            let text = fs::read_to_string(&config)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", config.display())))?;
            let cfg = ExperimentConfig::parse(&text)?;
            let out = harness::sweep(&cfg, workers)?;
            println!("coefficient,reward,sparsity_pct,conv_steps,score");
            for r in &out.rows {
                let conv = r.conv_steps.map(|c| c.to_string()).unwrap_or_default();
                println!("{},{},{},{},{}", r.coefficient, r.reward, r.sparsity_pct, conv, r.score);
            }
            let b = out.best_row();
            println!(
                "best coefficient {} (score {}), policy at {}",
                b.coefficient,
                b.score,
                out.best_checkpoint.display()
            );
            Ok(())
        }
        Command::Eval {
            ckpt,
            episodes,
            gate_mode,
            seed,
        } => {
            let mode: GateMode = gate_mode.parse()?;
            let c = Checkpoint::load(&ckpt)?;
            let s = evaluate_checkpoint(&c, episodes, seed, mode)?;
            print!("mean {} std {} over {episodes} episodes", s.mean, s.std);
            if let Some(rate) = s.success_rate {
                print!(", success rate {rate}");
            }
            println!();
            Ok(())
        }
        Command::Decompose {
            ckpt,
            rank,
            rank_min,
            rank_max,
            out,
            episodes,
            seed,
        } => {
            let c = Checkpoint::load(&ckpt)?;
            fs::create_dir_all(&out).map_err(|e| Failure::Runtime(e.to_string()))?;
            if let Some(r) = rank {
                let f = decompose_checkpoint(&c, r)?;
                let path = out.join(format!("rank_{r}.splc"));
                f.save(&path)?;
                println!(
                    "rank {r}: {} -> {} parameters, wrote {}",
                    c.model.param_count(),
                    f.model.param_count(),
                    path.display()
                );
            } else {
                let (a, b) = (rank_min.unwrap_or(1), rank_max.unwrap_or(1));
                if a == 0 || a > b {
                    return Err(Failure::Config(format!("invalid rank range {a}..={b}")));
                }
                let ranks: Vec<usize> = (a..=b).collect();
                let rows = rank_sweep_checkpoint(&c, &ranks, episodes, seed)?;
                let path = out.join(RANK_SWEEP_CSV);
                write_rank_sweep(&path, &rows)?;
                for r in &rows {
                    println!("{}", r.csv_line());
                }
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Report { dir, json } => {
            let rep = harness::report(&dir)?;
            if json {
                println!("{}", rep.to_json()?);
            } else {
                print!("{}", rep.to_text());
            }
            if dir.is_dir() {
                fs::write(dir.join("report.json"), rep.to_json()?).map_err(|e| Failure::Runtime(e.to_string()))?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
