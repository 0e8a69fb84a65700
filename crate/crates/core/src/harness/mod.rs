//! Experiment plumbing: configs, runs with CSV logs, checkpoints, sweeps,
//! evaluation, rank sweeps and reports.

mod checkpoint;
mod config;
mod report;
mod sweep;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CheckpointKind, Model, FORMAT_VERSION, MAGIC};
pub use config::{algo_kv, default_target, ExperimentConfig, ScoreMode, DEFAULT_COEFFICIENTS, REACH_COEFFICIENTS};
pub use report::{report, Report, ReportRow};
pub use sweep::{
    select_best, sweep, SweepOutcome, SweepRow, SweepRunRow, SWEEP_HEADER, SWEEP_RUNS_HEADER,
};

use crate::algos::{
    derive_seed, evaluate_policy, policy_sparsity, train, AlgoConfig, EvalRow, EvalStats, Monitor, RunRecord,
    TrainRow, STREAM_EVAL, STREAM_SPARSITY,
};
use crate::error::{Error, Result};
use crate::gates::GateMode;
use crate::lowrank::{decompose_network, rank_sweep, CompressedNetwork, RankSweepRow, RANK_SWEEP_HEADER};

pub const TRAIN_HEADER: &str = "episode,return,epsilon,loss,l_sp,sparsity_pct";
pub const EVAL_HEADER: &str = "episode,mean,std,sparsity_pct";
pub const TRAIN_CSV: &str = "train.csv";
pub const EVAL_CSV: &str = "eval.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const CONFIG_TXT: &str = "config.txt";
pub const POLICY_FILE: &str = "policy.splc";
pub const RANK_SWEEP_CSV: &str = "rank_sweep.csv";

/// Streams rows into `train.csv` / `eval.csv` as training produces them.
pub struct CsvMonitor {
    train: BufWriter<File>,
    eval: BufWriter<File>,
}

impl CsvMonitor {
    pub fn create(dir: &Path) -> Result<Self> {
        let mut train = BufWriter::new(File::create(dir.join(TRAIN_CSV))?);
        let mut eval = BufWriter::new(File::create(dir.join(EVAL_CSV))?);
        writeln!(train, "{TRAIN_HEADER}")?;
        writeln!(eval, "{EVAL_HEADER}")?;
        Ok(CsvMonitor { train, eval })
    }

    pub fn flush(&mut self) -> Result<()> {
        self.train.flush()?;
        self.eval.flush()?;
        Ok(())
    }
}

impl Monitor for CsvMonitor {
    fn train_row(&mut self, r: &TrainRow) -> Result<()> {
        writeln!(
            self.train,
            "{},{},{},{},{},{}",
            r.episode, r.ret, r.epsilon, r.loss, r.l_sp, r.sparsity_pct
        )?;
        Ok(())
    }

    fn eval_row(&mut self, r: &EvalRow) -> Result<()> {
        writeln!(self.eval, "{},{},{},{}", r.episode, r.mean, r.std, r.sparsity_pct)?;
        self.eval.flush()?;
        Ok(())
    }
}

/// Machine-readable outcome of one training run (`summary.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub env: String,
    pub algo: String,
    pub sparsity: String,
    pub lambda_c: f64,
    pub seed: u64,
    pub episodes_run: usize,
    pub final_reward: Option<f64>,
    pub final_std: Option<f64>,
    pub sparsity_pct: Option<f64>,
    pub success_rate: Option<f64>,
    /// 1-based index of the first evaluation meeting the target.
    pub convergence_step: Option<usize>,
    pub target_reward: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: RunRecord,
    pub summary: RunSummary,
    pub checkpoint: Checkpoint,
    pub dir: PathBuf,
}

impl RunOutput {
    pub fn checkpoint_path(&self) -> PathBuf {
        self.dir.join(POLICY_FILE)
    }
}

/// Trains on `env` with `cfg`, writing `train.csv`, `eval.csv`, `config.txt`,
/// `summary.json` and `policy.splc` into `dir`. A run that stops between
/// evaluations gets one closing evaluation so every run reports a final reward.
pub fn run_experiment(env: &str, cfg: &AlgoConfig, dir: &Path) -> Result<RunOutput> {
    crate::envs::env_spec(env)?;
    cfg.validate()?;
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join(CONFIG_TXT),
        format!("env = {env}\nalgo = {}\n{}", cfg.algo, algo_kv(cfg)),
    )?;
    let mut monitor = CsvMonitor::create(dir)?;
    let mut record = train(env, cfg, &mut monitor)?;
    let last_eval = record.eval.last().map(|e| e.episode);
    if record.episodes_run > 0 && last_eval != Some(record.episodes_run) {
        let stats = evaluate_policy(
            env,
            &record.policy.net,
            record.policy.head,
            cfg.eval_episodes,
            derive_seed(cfg.seed, STREAM_EVAL, 0),
            cfg.eval_gate_mode,
        )?;
        let row = EvalRow {
            episode: record.episodes_run,
            mean: stats.mean,
            std: stats.std,
            sparsity_pct: policy_sparsity(&record.policy.net, cfg.sparsity, derive_seed(cfg.seed, STREAM_SPARSITY, 0)),
            success_rate: stats.success_rate,
        };
        monitor.eval_row(&row)?;
        record.eval.push(row);
        if record.convergence_step.is_none() && cfg.target_reward.is_some_and(|t| stats.mean >= t) {
            record.convergence_step = Some(record.eval.len());
        }
    }
    monitor.flush()?;

    let fin = record.final_eval();
    let summary = RunSummary {
        env: env.to_string(),
        algo: cfg.algo.to_string(),
        sparsity: cfg.sparsity.to_string(),
        lambda_c: cfg.lambda_c,
        seed: cfg.seed,
        episodes_run: record.episodes_run,
        final_reward: fin.map(|e| e.mean),
        final_std: fin.map(|e| e.std),
        sparsity_pct: fin.map(|e| e.sparsity_pct),
        success_rate: fin.and_then(|e| e.success_rate),
        convergence_step: record.convergence_step,
        target_reward: cfg.target_reward,
    };
    fs::write(dir.join(SUMMARY_JSON), to_json(&summary)?)?;
    let checkpoint = Checkpoint {
        env: env.to_string(),
        algo: cfg.algo,
        head: record.policy.head,
        sparsity: cfg.sparsity,
        lambda_c: cfg.lambda_c,
        seed: cfg.seed,
        episodes: record.episodes_run,
        model: Model::Network(record.policy.net.clone()),
    };
    checkpoint.save(&dir.join(POLICY_FILE))?;
    Ok(RunOutput {
        record,
        summary,
        checkpoint,
        dir: dir.to_path_buf(),
    })
}

pub(crate) fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::InvalidInput(e.to_string()))
}

/// Greedy evaluation of a checkpoint on its own environment.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, episodes: usize, seed: u64, gate_mode: GateMode) -> Result<EvalStats> {
    evaluate_policy(&ckpt.env, &ckpt.model, ckpt.head, episodes, seed, gate_mode)
}

/// Rank-`rank` factorization of a checkpoint's policy (gates folded in
/// deterministically).
pub fn decompose_checkpoint(ckpt: &Checkpoint, rank: usize) -> Result<Checkpoint> {
    let net = match &ckpt.model {
        Model::Network(n) => n,
        Model::Factored(_) => {
            return Err(Error::InvalidInput("checkpoint is already factored".into()));
        }
    };
    Ok(Checkpoint {
        model: Model::Factored(decompose_network(net, rank)?),
        ..ckpt.clone()
    })
}

/// Evaluates the checkpoint's policy factored at every rank in `ranks`.
/// Factored policies are gate-free, so `seed` fixes the evaluation episodes only.
pub fn rank_sweep_checkpoint(ckpt: &Checkpoint, ranks: &[usize], episodes: usize, seed: u64) -> Result<Vec<RankSweepRow>> {
    let net = match &ckpt.model {
        Model::Network(n) => n,
        Model::Factored(_) => {
            return Err(Error::InvalidInput("rank sweeps start from an unfactored policy".into()));
        }
    };
    rank_sweep(net, ranks, |c: &CompressedNetwork| {
        let s = evaluate_policy(&ckpt.env, c, ckpt.head, episodes, seed, GateMode::Deterministic)?;
        Ok((s.mean, s.std))
    })
}

pub fn write_rank_sweep(path: &Path, rows: &[RankSweepRow]) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "{RANK_SWEEP_HEADER}")?;
    for r in rows {
        writeln!(f, "{}", r.csv_line())?;
    }
    f.flush()?;
    Ok(())
}

/// Smallest rank whose evaluation mean reaches `threshold`.
pub fn minimal_performant_rank(rows: &[RankSweepRow], threshold: f64) -> Option<usize> {
    rows.iter()
        .filter(|r| r.eval_reward_mean >= threshold)
        .map(|r| r.rank)
        .min()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algos::Algo;
    use crate::gates::Sparsity;

    fn quick(algo: Algo) -> AlgoConfig {
        let mut cfg = AlgoConfig::new(algo);
        cfg.episodes = 12;
        cfg.eval_every = 5;
        cfg.eval_episodes = 2;
        cfg.seed = 9;
        cfg
    }

    fn read(dir: &Path, f: &str) -> String {
        fs::read_to_string(dir.join(f)).unwrap()
    }

    #[test]
    fn run_writes_all_artifacts_with_closing_eval() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = quick(Algo::Dqn);
        cfg.sparsity = Sparsity::L0;
        cfg.lambda_c = 1e-3;
        let out = run_experiment("cartpole", &cfg, dir.path()).unwrap();
        let train = read(dir.path(), TRAIN_CSV);
        let eval = read(dir.path(), EVAL_CSV);
        assert_eq!(train.lines().next(), Some(TRAIN_HEADER));
        assert_eq!(eval.lines().next(), Some(EVAL_HEADER));
        assert_eq!(train.lines().count(), 13);
        let episodes: Vec<&str> = eval.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(episodes, ["5", "10", "12"]);
        assert!(train.ends_with('\n') && eval.ends_with('\n'));
        let back = Checkpoint::load(&out.checkpoint_path()).unwrap();
        assert_eq!(back, out.checkpoint);
        assert_eq!(back.kind(), CheckpointKind::Gated);
        let summary: RunSummary = serde_json::from_str(&read(dir.path(), SUMMARY_JSON)).unwrap();
        assert_eq!(summary, out.summary);
        assert_eq!(summary.episodes_run, 12);
        let parsed = ExperimentConfig::parse(&read(dir.path(), CONFIG_TXT)).unwrap();
        assert_eq!(parsed.algo, cfg);
    }

    #[test]
    fn identical_configs_give_identical_files() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let mut cfg = quick(Algo::Ppo);
        cfg.ppo.rollout_steps = 128;
        cfg.sparsity = Sparsity::L0;
        cfg.lambda_c = 1e-2;
        run_experiment("acrobot", &cfg, a.path()).unwrap();
        run_experiment("acrobot", &cfg, b.path()).unwrap();
        for f in [TRAIN_CSV, EVAL_CSV, SUMMARY_JSON, POLICY_FILE] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn zero_episode_run_is_valid_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = quick(Algo::Dqn);
        cfg.episodes = 0;
        let out = run_experiment("cartpole", &cfg, dir.path()).unwrap();
        assert_eq!(read(dir.path(), TRAIN_CSV), format!("{TRAIN_HEADER}\n"));
        assert_eq!(read(dir.path(), EVAL_CSV), format!("{EVAL_HEADER}\n"));
        assert_eq!(out.summary.final_reward, None);
        assert!(Checkpoint::load(&out.checkpoint_path()).is_ok());
    }

    #[test]
    fn unknown_env_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let e = run_experiment("pong", &quick(Algo::Dqn), dir.path()).unwrap_err();
        assert!(e.is_config());
    }

    #[test]
    fn full_rank_factorization_evaluates_like_the_original() {
        let mut cfg = quick(Algo::Dqn);
        cfg.episodes = 0;
        let dir = tempfile::tempdir().unwrap();
        let out = run_experiment("cartpole", &cfg, dir.path()).unwrap();
        let full = decompose_checkpoint(&out.checkpoint, 64).unwrap();
        assert_eq!(full.kind(), CheckpointKind::Factored);
        let a = evaluate_checkpoint(&out.checkpoint, 3, 1, GateMode::Deterministic).unwrap();
        let b = evaluate_checkpoint(&full, 3, 1, GateMode::Deterministic).unwrap();
        assert!((a.mean - b.mean).abs() < 1e-6);
        assert!(decompose_checkpoint(&full, 2).is_err());
        let rows = rank_sweep_checkpoint(&out.checkpoint, &[1, 2, 64], 2, 1).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows[0].size_decrease_pct > rows[1].size_decrease_pct);
        let p = dir.path().join(RANK_SWEEP_CSV);
        write_rank_sweep(&p, &rows).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap().lines().count(), 4);
    }

    #[test]
    fn minimal_rank_picks_smallest_passing() {
        let row = |rank, m| RankSweepRow {
            rank,
            params_dense: 10,
            params_factored: 5,
            size_decrease_pct: 50.0,
            eval_reward_mean: m,
            eval_reward_std: 0.0,
        };
        let rows = [row(1, 10.0), row(2, 480.0), row(3, 300.0), row(4, 500.0)];
        assert_eq!(minimal_performant_rank(&rows, 475.0), Some(2));
        assert_eq!(minimal_performant_rank(&rows, 600.0), None);
    }
}
