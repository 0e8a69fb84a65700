use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{to_json, RunSummary, EVAL_CSV, RANK_SWEEP_CSV, SUMMARY_JSON, TRAIN_CSV};
use crate::error::Result;
use crate::lowrank::{RankSweepRow, RANK_SWEEP_HEADER};

/// One run, dense-vs-sparse comparison style.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub run: String,
    pub env: String,
    pub algo: String,
    pub policy: String,
    pub sparsity_pct: Option<f64>,
    pub coefficient: f64,
    pub eval_reward: Option<f64>,
    pub conv_steps: Option<usize>,
    pub training_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankTable {
    pub path: String,
    pub rows: Vec<RankSweepRow>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Report {
    pub runs: Vec<ReportRow>,
    pub rank_sweeps: Vec<RankTable>,
    pub warnings: Vec<String>,
}

fn files_named(dir: &Path, name: &str, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            files_named(&p, name, out)?;
        } else if e.file_name() == name {
            out.push(p);
        }
    }
    Ok(())
}

fn relative(root: &Path, p: &Path) -> String {
    let r = p.strip_prefix(root).unwrap_or(p);
    let s = r.display().to_string();
    if s.is_empty() {
        ".".into()
    } else {
        s
    }
}

fn parse_rank_csv(text: &str) -> std::result::Result<Vec<RankSweepRow>, String> {
    let mut lines = text.lines();
    if lines.next() != Some(RANK_SWEEP_HEADER) {
        return Err("unexpected header".into());
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || format!("line {}: malformed row", i + 2);
            if f.len() != 6 {
                return Err(bad());
            }
            Ok(RankSweepRow {
                rank: f[0].parse().map_err(|_| bad())?,
                params_dense: f[1].parse().map_err(|_| bad())?,
                params_factored: f[2].parse().map_err(|_| bad())?,
                size_decrease_pct: f[3].parse().map_err(|_| bad())?,
                eval_reward_mean: f[4].parse().map_err(|_| bad())?,
                eval_reward_std: f[5].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// Collects every run (`summary.json`) and rank sweep (`rank_sweep.csv`)
/// under `dir`. Unreadable or incomplete artifacts become warnings.
pub fn report(dir: &Path) -> Result<Report> {
    let mut rep = Report::default();
    if !dir.is_dir() {
        rep.warnings.push(format!("{} is not a directory", dir.display()));
        return Ok(rep);
    }
    let mut summaries = Vec::new();
    files_named(dir, SUMMARY_JSON, &mut summaries)?;
    for path in summaries {
        let run_dir = path.parent().unwrap_or(dir);
        let name = relative(dir, run_dir);
        let s: RunSummary = match fs::read_to_string(&path).map(|t| serde_json::from_str(&t)) {
            Ok(Ok(s)) => s,
            Ok(Err(e)) => {
                rep.warnings.push(format!("{name}: unreadable summary: {e}"));
                continue;
            }
            Err(e) => {
                rep.warnings.push(format!("{name}: {e}"));
                continue;
            }
        };
        for f in [TRAIN_CSV, EVAL_CSV] {
            if !run_dir.join(f).is_file() {
                rep.warnings.push(format!("{name}: missing {f}"));
            }
        }
        if s.final_reward.is_none() {
            rep.warnings.push(format!("{name}: no evaluation recorded"));
        }
        rep.runs.push(ReportRow {
            run: name,
            policy: if s.sparsity == "none" {
                "dense".into()
            } else {
                format!("sparse ({})", s.sparsity)
            },
            env: s.env,
            algo: s.algo,
            sparsity_pct: s.sparsity_pct,
            coefficient: s.lambda_c,
            eval_reward: s.final_reward,
            conv_steps: s.convergence_step,
            training_steps: s.episodes_run,
        });
    }
    let mut sweeps = Vec::new();
    files_named(dir, RANK_SWEEP_CSV, &mut sweeps)?;
    for path in sweeps {
        let name = relative(dir, &path);
        match fs::read_to_string(&path).map_err(|e| e.to_string()).and_then(|t| parse_rank_csv(&t)) {
            Ok(rows) => rep.rank_sweeps.push(RankTable { path: name, rows }),
            Err(e) => rep.warnings.push(format!("{name}: {e}")),
        }
    }
    if rep.runs.is_empty() && rep.rank_sweeps.is_empty() {
        rep.warnings.push(format!("no runs or rank sweeps found under {}", dir.display()));
    }
    Ok(rep)
}

fn opt<T: std::fmt::Display>(v: Option<T>, prec: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.prec$}"))
}

impl Report {
    pub fn to_json(&self) -> Result<String> {
        to_json(self)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if !self.runs.is_empty() {
            let _ = writeln!(
                s,
                "{:<32} {:<10} {:<6} {:<12} {:>9} {:>11} {:>11} {:>10} {:>10}",
                "run", "env", "algo", "policy", "sparsity", "coefficient", "eval_reward", "conv_steps", "train_eps"
            );
            for r in &self.runs {
                let _ = writeln!(
                    s,
                    "{:<32} {:<10} {:<6} {:<12} {:>9} {:>11.1e} {:>11} {:>10} {:>10}",
                    r.run,
                    r.env,
                    r.algo,
                    r.policy,
                    opt(r.sparsity_pct, 2),
                    r.coefficient,
                    opt(r.eval_reward, 1),
                    opt(r.conv_steps, 0),
                    r.training_steps
                );
            }
        }
        for t in &self.rank_sweeps {
            let _ = writeln!(s, "\n{}", t.path);
            let _ = writeln!(
                s,
                "{:>5} {:>12} {:>15} {:>14} {:>11} {:>10}",
                "rank", "params_dense", "params_factored", "size_decrease", "eval_reward", "eval_std"
            );
            for r in &t.rows {
                let _ = writeln!(
                    s,
                    "{:>5} {:>12} {:>15} {:>13.2}% {:>11.1} {:>10.1}",
                    r.rank, r.params_dense, r.params_factored, r.size_decrease_pct, r.eval_reward_mean, r.eval_reward_std
                );
            }
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algos::{Algo, AlgoConfig};
    use crate::harness::{rank_sweep_checkpoint, run_experiment, write_rank_sweep};

    #[test]
    fn empty_directory_warns() {
        let dir = tempfile::tempdir().unwrap();
        let rep = report(dir.path()).unwrap();
        assert!(rep.runs.is_empty() && rep.rank_sweeps.is_empty());
        assert!(!rep.warnings.is_empty());
        assert!(!report(&dir.path().join("nope")).unwrap().warnings.is_empty());
    }

    #[test]
    fn one_run_and_a_rank_sweep() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = AlgoConfig::new(Algo::Dqn);
        cfg.episodes = 4;
        cfg.eval_every = 2;
        cfg.eval_episodes = 1;
        let out = run_experiment("cartpole", &cfg, &dir.path().join("dense")).unwrap();
        let rep = report(dir.path()).unwrap();
        assert_eq!(rep.runs.len(), 1);
        assert_eq!(rep.runs[0].policy, "dense");
        assert_eq!(rep.runs[0].training_steps, 4);
        assert!(rep.warnings.is_empty(), "{:?}", rep.warnings);

        let rows = rank_sweep_checkpoint(&out.checkpoint, &[1, 3], 1, 0).unwrap();
        write_rank_sweep(&dir.path().join(RANK_SWEEP_CSV), &rows).unwrap();
        let rep = report(dir.path()).unwrap();
        assert_eq!(rep.rank_sweeps.len(), 1);
        assert_eq!(rep.rank_sweeps[0].rows, rows);
        let text = rep.to_text();
        assert!(text.contains("dense") && text.contains("params_factored"));
        let json: serde_json::Value = serde_json::from_str(&rep.to_json().unwrap()).unwrap();
        assert_eq!(json["runs"].as_array().unwrap().len(), 1);
    }

    #[test]
    fn missing_csv_gives_partial_report() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = AlgoConfig::new(Algo::Dqn);
        cfg.episodes = 2;
        cfg.eval_every = 2;
        cfg.eval_episodes = 1;
        run_experiment("cartpole", &cfg, dir.path()).unwrap();
        fs::remove_file(dir.path().join(TRAIN_CSV)).unwrap();
        fs::write(dir.path().join(RANK_SWEEP_CSV), "garbage\n").unwrap();
        let rep = report(dir.path()).unwrap();
        assert_eq!(rep.runs.len(), 1);
        assert_eq!(rep.warnings.len(), 2, "{:?}", rep.warnings);
    }
}
