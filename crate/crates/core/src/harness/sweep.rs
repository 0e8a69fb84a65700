use std::fs;
use std::io::Write;
use std::path::PathBuf;

use rayon::prelude::*;

use super::{run_experiment, ExperimentConfig, RunSummary, ScoreMode, POLICY_FILE};
use crate::envs::env_spec;
use crate::error::{Error, Result};
use crate::gates::Sparsity;

pub const SWEEP_HEADER: &str = "coefficient,reward,sparsity_pct,conv_steps,score";
pub const SWEEP_RUNS_HEADER: &str = "coefficient,seed,reward,sparsity_pct,conv_steps,episodes_run,score";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_RUNS_CSV: &str = "sweep_runs.csv";
pub const BEST_POLICY: &str = "best.splc";

/// One training run of the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRunRow {
    pub coefficient: f64,
    pub seed: u64,
    pub reward: f64,
    pub sparsity_pct: f64,
    pub conv_steps: Option<usize>,
    pub episodes_run: usize,
    pub score: f64,
    pub dir: PathBuf,
}

/// Per-coefficient aggregate: medians over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub coefficient: f64,
    pub reward: f64,
    pub sparsity_pct: f64,
    /// Median over the seeds that converged; `None` if none did.
    pub conv_steps: Option<f64>,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub runs: Vec<SweepRunRow>,
    /// Index into `rows` of the winning coefficient.
    pub best: usize,
    pub best_checkpoint: PathBuf,
}

impl SweepOutcome {
    pub fn best_row(&self) -> &SweepRow {
        &self.rows[self.best]
    }
}

pub(crate) fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn score(mode: ScoreMode, reward: f64, sparsity: f64, target: f64, floor: f64) -> f64 {
    match mode {
        ScoreMode::Raw => reward + sparsity,
        ScoreMode::Normalized => {
            let r = if target > floor {
                (100.0 * (reward - floor) / (target - floor)).clamp(0.0, 100.0)
            } else {
                0.0
            };
            r + sparsity
        }
    }
}

/// Index of the highest (score, sparsity) pair; earlier rows win exact ties.
pub fn select_best(candidates: &[(f64, f64)]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &(s, sp)) in candidates.iter().enumerate() {
        best = match best {
            Some(b) => {
                let (bs, bsp) = candidates[b];
                if s > bs || (s == bs && sp > bsp) {
                    Some(i)
                } else {
                    Some(b)
                }
            }
            None => Some(i),
        };
    }
    best
}

fn coefficient_dir(c: f64) -> String {
    format!("coef_{c:e}")
}

/// Trains one run per (coefficient, seed) on up to `workers` threads and picks
/// the coefficient maximizing reward + sparsity percent.
pub fn sweep(cfg: &ExperimentConfig, workers: usize) -> Result<SweepOutcome> {
    cfg.validate()?;
    if cfg.coefficients.is_empty() {
        return Err(Error::Config("sweep needs at least one coefficient".into()));
    }
    if cfg.algo.sparsity == Sparsity::None {
        return Err(Error::Config("sweep needs a sparsity method (l0, l1 or l2)".into()));
    }
    let spec = env_spec(&cfg.env)?;
    let target = cfg.algo.target_reward.unwrap_or(spec.target_reward);
    let floor = if target > 0.0 { 0.0 } else { -(spec.max_steps as f64) };
    fs::create_dir_all(&cfg.out_dir)?;

    let jobs: Vec<(f64, u64)> = cfg
        .coefficients
        .iter()
        .flat_map(|&c| cfg.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let run = |&(c, seed): &(f64, u64)| -> Result<(RunSummary, PathBuf)> {
        let mut algo = cfg.algo.clone();
        algo.lambda_c = c;
        algo.seed = seed;
        let dir = cfg.out_dir.join(coefficient_dir(c)).join(format!("seed_{seed}"));
        let out = run_experiment(&cfg.env, &algo, &dir)?;
        Ok((out.summary, dir))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    let results: Vec<Result<(RunSummary, PathBuf)>> = pool.install(|| jobs.par_iter().map(run).collect());

    let mut runs = Vec::with_capacity(jobs.len());
    for r in results {
        let (s, dir) = r?;
        let reward = s.final_reward.unwrap_or(f64::NAN);
        let sparsity = s.sparsity_pct.unwrap_or(0.0);
        runs.push(SweepRunRow {
            coefficient: s.lambda_c,
            seed: s.seed,
            reward,
            sparsity_pct: sparsity,
            conv_steps: s.convergence_step,
            episodes_run: s.episodes_run,
            score: score(cfg.score_mode, reward, sparsity, target, floor),
            dir,
        });
    }

    let mut rows = Vec::with_capacity(cfg.coefficients.len());
    for &c in &cfg.coefficients {
        let group: Vec<&SweepRunRow> = runs.iter().filter(|r| r.coefficient == c).collect();
        let reward = median(&mut group.iter().map(|r| r.reward).collect::<Vec<_>>());
        let sparsity_pct = median(&mut group.iter().map(|r| r.sparsity_pct).collect::<Vec<_>>());
        let mut conv: Vec<f64> = group.iter().filter_map(|r| r.conv_steps.map(|v| v as f64)).collect();
        rows.push(SweepRow {
            coefficient: c,
            reward,
            sparsity_pct,
            conv_steps: if conv.is_empty() { None } else { Some(median(&mut conv)) },
            score: score(cfg.score_mode, reward, sparsity_pct, target, floor),
        });
    }
    let key = |s: f64| if s.is_nan() { f64::NEG_INFINITY } else { s };
    let best = select_best(&rows.iter().map(|r| (key(r.score), r.sparsity_pct)).collect::<Vec<_>>())
        .expect("at least one coefficient");
    let best_c = rows[best].coefficient;
    let in_best: Vec<&SweepRunRow> = runs.iter().filter(|r| r.coefficient == best_c).collect();
    let best_run = select_best(&in_best.iter().map(|r| (key(r.score), r.sparsity_pct)).collect::<Vec<_>>())
        .expect("at least one seed");
    let best_checkpoint = cfg.out_dir.join(BEST_POLICY);
    fs::copy(in_best[best_run].dir.join(POLICY_FILE), &best_checkpoint)?;

    let mut f = fs::File::create(cfg.out_dir.join(SWEEP_CSV))?;
    writeln!(f, "{SWEEP_HEADER}")?;
    for r in &rows {
        let conv = r.conv_steps.map(|v| v.to_string()).unwrap_or_default();
        writeln!(f, "{},{},{},{},{}", r.coefficient, r.reward, r.sparsity_pct, conv, r.score)?;
    }
    let mut f = fs::File::create(cfg.out_dir.join(SWEEP_RUNS_CSV))?;
    writeln!(f, "{SWEEP_RUNS_HEADER}")?;
    for r in &runs {
        let conv = r.conv_steps.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            r.coefficient, r.seed, r.reward, r.sparsity_pct, conv, r.episodes_run, r.score
        )?;
    }
    fs::write(cfg.out_dir.join("sweep_config.txt"), cfg.to_kv())?;

    Ok(SweepOutcome {
        rows,
        runs,
        best,
        best_checkpoint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algos::Algo;

    #[test]
    fn reward_plus_sparsity_objective() {
        // (r=500, S=28) scores 528 and beats (r=480, S=30) at 510.
        let a = score(ScoreMode::Raw, 500.0, 28.0, 500.0, 0.0);
        let b = score(ScoreMode::Raw, 480.0, 30.0, 500.0, 0.0);
        assert_eq!((a, b), (528.0, 510.0));
        assert_eq!(select_best(&[(a, 28.0), (b, 30.0)]), Some(0));
    }

    #[test]
    fn ties_go_to_sparser_policy() {
        assert_eq!(select_best(&[(510.0, 10.0), (510.0, 30.0), (509.0, 90.0)]), Some(1));
        assert_eq!(select_best(&[(1.0, 5.0)]), Some(0));
        assert_eq!(select_best(&[]), None);
    }

    #[test]
    fn normalized_scores_map_reward_to_percent() {
        assert_eq!(score(ScoreMode::Normalized, 250.0, 10.0, 500.0, 0.0), 60.0);
        assert_eq!(score(ScoreMode::Normalized, -100.0, 0.0, -100.0, -500.0), 100.0);
        assert_eq!(score(ScoreMode::Normalized, -500.0, 5.0, -100.0, -500.0), 5.0);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0]), 2.5);
    }

    fn small(coefficients: Vec<f64>, seeds: Vec<u64>) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new("cartpole", Algo::Dqn).unwrap();
        cfg.algo.sparsity = Sparsity::L0;
        cfg.algo.episodes = 6;
        cfg.algo.eval_every = 3;
        cfg.algo.eval_episodes = 2;
        cfg.coefficients = coefficients;
        cfg.seeds = seeds;
        cfg
    }

    #[test]
    fn sweep_writes_tables_and_best_policy() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(vec![0.0, 1e-2], vec![1, 2]);
        cfg.out_dir = dir.path().to_path_buf();
        let out = sweep(&cfg, 2).unwrap();
        assert_eq!(out.rows.len(), 2);
        assert_eq!(out.runs.len(), 4);
        for r in &out.rows {
            assert_eq!(r.score, r.reward + r.sparsity_pct);
        }
        for r in &out.runs {
            assert_eq!(r.score, r.reward + r.sparsity_pct);
        }
        let text = fs::read_to_string(dir.path().join(SWEEP_CSV)).unwrap();
        assert_eq!(text.lines().next(), Some(SWEEP_HEADER));
        assert_eq!(text.lines().count(), 3);
        assert!(out.best_checkpoint.exists());
        // Worker count does not change results.
        let dir2 = tempfile::tempdir().unwrap();
        cfg.out_dir = dir2.path().to_path_buf();
        let serial = sweep(&cfg, 1).unwrap();
        assert_eq!(
            fs::read(dir.path().join(SWEEP_RUNS_CSV)).unwrap(),
            fs::read(dir2.path().join(SWEEP_RUNS_CSV)).unwrap()
        );
        assert_eq!(serial.best, out.best);
    }

    #[test]
    fn single_coefficient_is_best_and_zero_penalty_scores_reward() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(vec![0.0], vec![3]);
        cfg.out_dir = dir.path().to_path_buf();
        let out = sweep(&cfg, 1).unwrap();
        assert_eq!(out.best, 0);
        let r = out.best_row();
        assert!(r.sparsity_pct < 5.0);
        assert!((r.score - r.reward).abs() < 5.0);
    }

    #[test]
    fn sweep_requires_sparsity_and_coefficients() {
        let mut cfg = small(vec![], vec![1]);
        assert!(sweep(&cfg, 1).unwrap_err().is_config());
        cfg.coefficients = vec![1e-3];
        cfg.algo.sparsity = Sparsity::None;
        assert!(sweep(&cfg, 1).unwrap_err().is_config());
    }
}
