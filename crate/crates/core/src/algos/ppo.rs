use rand::seq::SliceRandom;
use rand::Rng;

use super::{
    add_sparsity_grad, derive_seed, discrete_spec, episode_sparsity, penalty_value, sparsity_loss,
    stream_rng, AlgoConfig, Monitor, Optimizer, Policy, PolicyHead, RunRecord, Tracker, TrainRow,
    Algo, STREAM_AUX_INIT, STREAM_EXPLORE, STREAM_GATES, STREAM_POLICY_INIT, STREAM_REPLAY,
    STREAM_TRAIN_ENV,
};
use crate::envs::{make_env, Action};
use crate::error::{Error, Result};
use crate::gates::Gating;
use crate::nn::{Matrix, Network};

/// Generalized advantage estimates by backward recursion. `dones[t]` ends an
/// episode after step t: no bootstrap and no accumulation across it.
/// `value_next` bootstraps the final step when it is not done.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    value_next: f64,
    dones: &[bool],
    gamma: f64,
    lam: f64,
) -> Result<Vec<f64>> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(Error::Shape(format!(
            "gae inputs differ in length: {n} rewards, {} values, {} dones",
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let next = if t + 1 == n { value_next } else { values[t + 1] };
        let delta = rewards[t] + gamma * next * live - values[t];
        acc = delta + gamma * lam * live * acc;
        adv[t] = acc;
    }
    Ok(adv)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpoLoss {
    /// −mean(min(r·Â, clip(r)·Â)) − λ_h·mean(H)
    pub loss: f64,
    pub surrogate: f64,
    pub entropy: f64,
    /// dL/d logits.
    pub grad: Matrix,
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// Clipped surrogate with entropy bonus over categorical logits.
pub fn ppo_loss(
    logits: &Matrix,
    actions: &[usize],
    old_logprobs: &[f64],
    advantages: &[f64],
    clip_eps: f64,
    entropy_coef: f64,
) -> Result<PpoLoss> {
    let b = logits.rows();
    if b == 0 || actions.len() != b || old_logprobs.len() != b || advantages.len() != b {
        return Err(Error::Shape("ppo batch fields differ in length".into()));
    }
    let n = logits.cols();
    let inv_b = 1.0 / b as f64;
    let mut grad = Matrix::zeros(b, n);
    let mut surrogate = 0.0;
    let mut entropy = 0.0;
    for i in 0..b {
        let a = actions[i];
        if a >= n {
            return Err(Error::Shape(format!("action {a} outside {n} logits")));
        }
        let logp = log_softmax(logits.row(i));
        let p: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        let h: f64 = -p.iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>();
        let ratio = (logp[a] - old_logprobs[i]).exp();
        let adv = advantages[i];
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * adv;
        surrogate += unclipped.min(clipped);
        entropy += h;
        // The clipped branch is constant in θ unless the ratio is inside the band.
        let inside = (1.0 - clip_eps..=1.0 + clip_eps).contains(&ratio);
        let d_ratio = if unclipped <= clipped || inside { adv } else { 0.0 };
        let d_logp = -inv_b * d_ratio * ratio;
        let row = &mut grad.data_mut()[i * n..(i + 1) * n];
        for j in 0..n {
            let onehot = if j == a { 1.0 } else { 0.0 };
            row[j] += d_logp * (onehot - p[j]);
            // −λ_h/b · dH/dlogit_j, with dH/dlogit_j = −p_j (log p_j + H)
            row[j] += entropy_coef * inv_b * p[j] * (logp[j] + h);
        }
    }
    surrogate *= inv_b;
    entropy *= inv_b;
    Ok(PpoLoss {
        loss: -surrogate - entropy_coef * entropy,
        surrogate,
        entropy,
        grad,
    })
}

fn sample_categorical(logits: &[f64], rng: &mut impl Rng) -> (usize, f64) {
    let logp = log_softmax(logits);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, l) in logp.iter().enumerate() {
        acc += l.exp();
        if u < acc {
            return (i, *l);
        }
    }
    let last = logp.len() - 1;
    (last, logp[last])
}

fn rows_of(data: &[Vec<f64>], idx: &[usize]) -> Result<Matrix> {
    let cols = data[0].len();
    let mut v = Vec::with_capacity(idx.len() * cols);
    for &i in idx {
        v.extend_from_slice(&data[i]);
    }
    Matrix::from_vec(idx.len(), cols, v)
}

fn value_of(net: &Network, obs: &[f64]) -> Result<f64> {
    let x = Matrix::from_vec(1, obs.len(), obs.to_vec())?;
    Ok(net.predict(&x, Gating::Deterministic)?.get(0, 0))
}

pub fn train_ppo(env_name: &str, cfg: &AlgoConfig, monitor: &mut dyn Monitor) -> Result<RunRecord> {
    cfg.validate()?;
    if cfg.algo != Algo::Ppo {
        return Err(Error::Config(format!("train_ppo called with algo {}", cfg.algo)));
    }
    let spec = discrete_spec(env_name)?;
    let n_actions = spec.n_actions().unwrap_or(0);
    let mut env = make_env(env_name)?;
    let mut policy = cfg.build_net(spec.obs_dim, n_actions, STREAM_POLICY_INIT)?;
    let mut vsizes = vec![spec.obs_dim];
    vsizes.extend(&cfg.hidden);
    vsizes.push(1);
    let mut value = Network::mlp(&vsizes, cfg.activation, derive_seed(cfg.seed, STREAM_AUX_INIT, 0))?;
    let mut opt_p = cfg.optimizer(cfg.lr);
    let mut opt_v = Optimizer::new(cfg.ppo.value_lr, cfg.ppo.value_lr, cfg.grad_clip);
    let mut act_rng = stream_rng(cfg.seed, STREAM_EXPLORE);
    let mut gate_rng = stream_rng(cfg.seed, STREAM_GATES);
    let mut shuffle_rng = stream_rng(cfg.seed, STREAM_REPLAY);
    let mut tracker = Tracker::new(env_name, cfg, monitor);
    let b = cfg.batch_size;
    let n = cfg.ppo.rollout_steps;

    let mut episode = 0usize;
    let mut last_loss = 0.0;
    let mut done_training = cfg.episodes == 0;
    let mut obs = env.reset(derive_seed(cfg.seed, STREAM_TRAIN_ENV, 1));
    let mut ret = 0.0;

    while !done_training {
        let mut states = Vec::with_capacity(n);
        let mut actions = Vec::with_capacity(n);
        let mut logps = Vec::with_capacity(n);
        let mut rewards = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        let mut dones = Vec::with_capacity(n);
        for _ in 0..n {
            let x = Matrix::from_vec(1, obs.len(), obs.clone())?;
            let logits = policy.predict(&x, Gating::Sampled(&mut gate_rng))?;
            let (a, logp) = sample_categorical(logits.row(0), &mut act_rng);
            let v = value_of(&value, &obs)?;
            let step = env.step(&Action::Discrete(a))?;
            ret += step.reward;
            let mut r = step.reward;
            if step.truncated {
                // Time limit, not a true terminal: fold the bootstrap into the reward.
                r += cfg.gamma * value_of(&value, &step.observation)?;
            }
            states.push(obs.clone());
            actions.push(a);
            logps.push(logp);
            rewards.push(r);
            values.push(v);
            dones.push(step.done);
            if step.done {
                episode += 1;
                let row = TrainRow {
                    episode,
                    ret,
                    epsilon: 0.0,
                    loss: last_loss,
                    l_sp: penalty_value(&policy, cfg.sparsity),
                    sparsity_pct: episode_sparsity(&policy, cfg, episode),
                };
                if tracker.end_episode(row, &policy, PolicyHead::Greedy)? || episode >= cfg.episodes {
                    done_training = true;
                    break;
                }
                ret = 0.0;
                obs = env.reset(derive_seed(cfg.seed, STREAM_TRAIN_ENV, episode as u64 + 1));
            } else {
                obs = step.observation;
            }
        }
        if done_training {
            break;
        }

        let value_next = if *dones.last().unwrap_or(&true) { 0.0 } else { value_of(&value, &obs)? };
        let adv = gae(&rewards, &values, value_next, &dones, cfg.gamma, cfg.ppo.gae_lambda)?;
        let returns: Vec<f64> = adv.iter().zip(&values).map(|(a, v)| a + v).collect();
        let (mean, std) = super::mean_std(&adv);
        let norm_adv: Vec<f64> = adv.iter().map(|a| (a - mean) / (std + 1e-8)).collect();

        let mut order: Vec<usize> = (0..states.len()).collect();
        let mut loss_sum = 0.0;
        let mut loss_n = 0usize;
        for _ in 0..cfg.ppo.epochs {
            order.shuffle(&mut shuffle_rng);
            for chunk in order.chunks(b) {
                let x = rows_of(&states, chunk)?;
                let acts: Vec<usize> = chunk.iter().map(|&i| actions[i]).collect();
                let old: Vec<f64> = chunk.iter().map(|&i| logps[i]).collect();
                let advs: Vec<f64> = chunk.iter().map(|&i| norm_adv[i]).collect();
                let (logits, cache) = policy.forward(&x, Gating::Sampled(&mut gate_rng))?;
                let pl = ppo_loss(&logits, &acts, &old, &advs, cfg.ppo.clip_eps, cfg.ppo.entropy_coef)?;
                let mut grads = policy.backward(&cache, &pl.grad)?;
                add_sparsity_grad(&policy, &mut grads, cfg.sparsity, cfg.lambda_c, chunk.len());
                loss_sum += pl.loss + sparsity_loss(&policy, cfg.sparsity, cfg.lambda_c, chunk.len());
                loss_n += 1;
                opt_p.step(&mut policy, &mut grads)?;

                let (v, vcache) = value.forward(&x, Gating::Deterministic)?;
                let k = chunk.len() as f64;
                let dv: Vec<f64> = chunk
                    .iter()
                    .enumerate()
                    .map(|(j, &i)| 2.0 * (v.get(j, 0) - returns[i]) / k)
                    .collect();
                let mut vg = value.backward(&vcache, &Matrix::from_vec(chunk.len(), 1, dv)?)?;
                opt_v.step(&mut value, &mut vg)?;
            }
        }
        last_loss = if loss_n > 0 { loss_sum / loss_n as f64 } else { 0.0 };
    }
    Ok(tracker.finish(Policy {
        net: policy,
        head: PolicyHead::Greedy,
    }))
}
