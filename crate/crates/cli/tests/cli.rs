use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparse-policy"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn text(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn train_eval_decompose_report() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let o = cli(&[
        "train", "--env", "cartpole", "--algo", "dqn", "--sparsity", "l0", "--coeff", "1e-3", "--episodes", "10",
        "--seed", "2", "--out", p(&run), "--set", "eval_episodes=2",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["train.csv", "eval.csv", "summary.json", "config.txt", "policy.splc"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let ckpt = run.join("policy.splc");

    for mode in ["sampled", "deterministic"] {
        let o = cli(&["eval", "--ckpt", p(&ckpt), "--episodes", "2", "--gate-mode", mode]);
        assert_eq!(code(&o), 0);
        assert!(text(&o).starts_with("mean "));
    }

    let out = dir.path().join("ranks");
    let o = cli(&["decompose", "--ckpt", p(&ckpt), "--rank", "3", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("rank_3.splc").is_file());
    let o = cli(&["eval", "--ckpt", p(&out.join("rank_3.splc")), "--episodes", "1"]);
    assert_eq!(code(&o), 0);
    let o = cli(&[
        "decompose", "--ckpt", p(&ckpt), "--rank-min", "1", "--rank-max", "3", "--out", p(&out), "--episodes", "1",
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_to_string(out.join("rank_sweep.csv")).unwrap().lines().count(), 4);

    let o = cli(&["report", p(dir.path())]);
    assert_eq!(code(&o), 0);
    let t = text(&o);
    assert!(t.contains("sparse (l0)") && t.contains("rank_sweep.csv"), "{t}");
    assert!(dir.path().join("report.json").is_file());
    let o = cli(&["report", p(dir.path()), "--json"]);
    assert!(text(&o).trim_start().starts_with('{'));
}

#[test]
fn sweep_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let cfg = dir.path().join("sweep.cfg");
    fs::write(
        &cfg,
        format!(
            "env = acrobot\nalgo = ppo\nsparsity = l0\ncoefficients = 0, 5e-3\nseeds = 1\n\
             episodes = 2\neval_every = 2\neval_episodes = 1\nppo.rollout_steps = 64\nout = {}\n",
            out.display()
        ),
    )
    .unwrap();
    let o = cli(&["sweep", "--config", p(&cfg), "--workers", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(text(&o).contains("best coefficient"));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("coefficient,reward,sparsity_pct,conv_steps,score"));
    assert!(out.join("best.splc").is_file());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    // Configuration problems exit with 2.
    assert_eq!(code(&cli(&["train", "--env", "pong", "--out", p(&out)])), 2);
    assert_eq!(code(&cli(&["train", "--env", "cartpole", "--algo", "sac", "--out", p(&out)])), 2);
    assert_eq!(
        code(&cli(&["train", "--env", "cartpole", "--out", p(&out), "--set", "nonsense=1"])),
        2
    );
    assert_eq!(code(&cli(&["sweep", "--config", p(&dir.path().join("missing.cfg"))])), 2);
    assert_eq!(code(&cli(&["frobnicate"])), 2);
    // Runtime problems exit with 3.
    let junk = dir.path().join("junk.splc");
    fs::write(&junk, b"SPLC\x01\x00\xff").unwrap();
    let o = cli(&["eval", "--ckpt", p(&junk)]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("truncated"));
    assert_eq!(code(&cli(&["eval", "--ckpt", p(&dir.path().join("none.splc"))])), 3);
    // A zero rank is a usage error.
    let run = dir.path().join("run");
    assert_eq!(code(&cli(&["train", "--env", "cartpole", "--episodes", "0", "--out", p(&run)])), 0);
    let o = cli(&["decompose", "--ckpt", p(&run.join("policy.splc")), "--rank", "0", "--out", p(&out)]);
    assert_eq!(code(&o), 2);
}
