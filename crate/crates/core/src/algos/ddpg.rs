use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use super::{
    add_sparsity_grad, derive_seed, episode_sparsity, penalty_value, policy_input, rng_dyn,
    sparsity_loss, stream_rng, Algo, AlgoConfig, Monitor, Optimizer, Policy, PolicyHead, RunRecord,
    Tracker, TrainRow, STREAM_AUX_INIT, STREAM_DEMOS, STREAM_EXPLORE, STREAM_GATES,
    STREAM_POLICY_INIT, STREAM_REPLAY, STREAM_TRAIN_ENV,
};
use crate::envs::{make_env, reach_reward, scripted_expert, Action, ActionSpec};
use crate::error::{Error, Result};
use crate::gates::{GateMode, Gating, Sparsity};
use crate::nn::{Gradients, Matrix, Network};
use crate::replay::{her_relabel, knn_expert_action, Demo, GoalTransition, ReplayBuffer, Transition};

/// target ← (1 − τ)·target + τ·online, elementwise over every parameter slot.
pub fn polyak_update(target: &mut Network, online: &Network, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidInput(format!("tau {tau} outside [0, 1]")));
    }
    if target.layer_sizes() != online.layer_sizes() || target.is_gated() != online.is_gated() {
        return Err(Error::Shape("polyak update between differently shaped networks".into()));
    }
    let src = online.param_slices();
    for (t, o) in target.param_slices_mut().into_iter().zip(src) {
        for (tv, ov) in t.iter_mut().zip(o) {
            *tv = (1.0 - tau) * *tv + tau * ov;
        }
    }
    Ok(())
}

/// One training batch; inputs are state‖goal rows.
#[derive(Debug, Clone)]
pub struct DdpgBatch {
    pub inputs: Matrix,
    pub actions: Matrix,
    pub rewards: Vec<f64>,
    pub next_inputs: Matrix,
    pub dones: Vec<bool>,
    /// Expert action for each input row.
    pub expert: Matrix,
    /// Expert action for each next-input row.
    pub expert_next: Matrix,
}

pub struct DdpgNets<'a> {
    pub actor: &'a Network,
    pub critic: &'a Network,
    pub target_actor: &'a Network,
    pub target_critic: &'a Network,
}

#[derive(Debug, Clone)]
pub struct DdpgLosses {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub actor_grads: Gradients,
    pub critic_grads: Gradients,
}

fn concat_cols(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows() != b.rows() {
        return Err(Error::Shape("row counts differ".into()));
    }
    let mut data = Vec::with_capacity(a.rows() * (a.cols() + b.cols()));
    for i in 0..a.rows() {
        data.extend_from_slice(a.row(i));
        data.extend_from_slice(b.row(i));
    }
    Matrix::from_vec(a.rows(), a.cols() + b.cols(), data)
}

fn tanh_all(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.tanh());
    out
}

fn row_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Actor and critic objectives with the demonstration distance penalty:
///
/// critic: mean (Q(s‖g, a) − y)², y = r + γ(1−d)·(Q̄(s′‖g, ā′) − α‖ā′ − a_e(s′‖g)‖)
/// actor:  −mean (Q(s‖g, π(s‖g)) − α‖π(s‖g) − a_e(s‖g)‖)
///
/// with ā′ the target actor's action, plus λ_c·penalty/b for each network.
/// Both gradients are taken at the current parameters.
#[allow(clippy::too_many_arguments)]
pub fn ddpg_losses(
    batch: &DdpgBatch,
    nets: &DdpgNets<'_>,
    alpha: f64,
    gamma: f64,
    sparsity: Sparsity,
    lambda_c: f64,
    gate_mode: GateMode,
    rng: &mut dyn RngCore,
) -> Result<DdpgLosses> {
    let b = batch.inputs.rows();
    let act_dim = batch.actions.cols();
    if b == 0
        || batch.rewards.len() != b
        || batch.dones.len() != b
        || batch.actions.rows() != b
        || batch.next_inputs.rows() != b
        || batch.expert.rows() != b
        || batch.expert_next.rows() != b
    {
        return Err(Error::Shape("ddpg batch fields differ in length".into()));
    }
    if batch.expert.cols() != act_dim || batch.expert_next.cols() != act_dim {
        return Err(Error::InvalidInput("expert actions missing or mis-shaped".into()));
    }
    let inv_b = 1.0 / b as f64;

    let next_actions = tanh_all(&nets.target_actor.predict(&batch.next_inputs, Gating::new(gate_mode, rng))?);
    let q_next = nets
        .target_critic
        .predict(&concat_cols(&batch.next_inputs, &next_actions)?, Gating::new(gate_mode, rng))?;
    let y: Vec<f64> = (0..b)
        .map(|i| {
            if batch.dones[i] {
                return batch.rewards[i];
            }
            let d = row_distance(next_actions.row(i), batch.expert_next.row(i));
            batch.rewards[i] + gamma * (q_next.get(i, 0) - alpha * d)
        })
        .collect();

    let (q, qcache) = nets
        .critic
        .forward(&concat_cols(&batch.inputs, &batch.actions)?, Gating::new(gate_mode, rng))?;
    let mut critic_loss = 0.0;
    let mut dq = Vec::with_capacity(b);
    for i in 0..b {
        let diff = q.get(i, 0) - y[i];
        critic_loss += diff * diff * inv_b;
        dq.push(2.0 * diff * inv_b);
    }
    let mut critic_grads = nets.critic.backward(&qcache, &Matrix::from_vec(b, 1, dq)?)?;
    add_sparsity_grad(nets.critic, &mut critic_grads, sparsity, lambda_c, b);
    critic_loss += sparsity_loss(nets.critic, sparsity, lambda_c, b);

    let (pre, acache) = nets.actor.forward(&batch.inputs, Gating::new(gate_mode, rng))?;
    let a = tanh_all(&pre);
    let (qa, cache) = nets
        .critic
        .forward(&concat_cols(&batch.inputs, &a)?, Gating::new(gate_mode, rng))?;
    let through_critic = nets.critic.backward(&cache, &Matrix::from_vec(b, 1, vec![-inv_b; b])?)?;
    let in_dim = batch.inputs.cols();
    let mut actor_loss = 0.0;
    let mut dpre = Matrix::zeros(b, act_dim);
    for i in 0..b {
        let ai = a.row(i);
        let ei = batch.expert.row(i);
        let dist = row_distance(ai, ei);
        actor_loss -= (qa.get(i, 0) - alpha * dist) * inv_b;
        for j in 0..act_dim {
            let mut g = through_critic.input.get(i, in_dim + j);
            if dist > 0.0 {
                g += alpha * inv_b * (ai[j] - ei[j]) / dist;
            }
            dpre.set(i, j, g * (1.0 - ai[j] * ai[j]));
        }
    }
    let mut actor_grads = nets.actor.backward(&acache, &dpre)?;
    add_sparsity_grad(nets.actor, &mut actor_grads, sparsity, lambda_c, b);
    actor_loss += sparsity_loss(nets.actor, sparsity, lambda_c, b);

    Ok(DdpgLosses {
        actor_loss,
        critic_loss,
        actor_grads,
        critic_grads,
    })
}

fn fill_demos(env_name: &str, capacity: usize, seed: u64) -> Result<ReplayBuffer<Demo>> {
    let mut env = make_env(env_name)?;
    let mut demos = ReplayBuffer::new(capacity)?;
    let mut episode = 0u64;
    while demos.len() < capacity {
        let mut obs = env.reset(derive_seed(seed, STREAM_DEMOS, episode));
        episode += 1;
        let goal = env
            .desired_goal()
            .ok_or_else(|| Error::Config(format!("{env_name} is not goal-conditioned")))?;
        loop {
            let action = scripted_expert(&obs, &goal);
            demos.push(Demo {
                input: policy_input(&obs, Some(&goal)),
                action: action.clone(),
            });
            let step = env.step(&Action::Continuous(action))?;
            obs = step.observation;
            if step.done || demos.len() >= capacity {
                break;
            }
        }
    }
    Ok(demos)
}

fn expert_rows(demos: &ReplayBuffer<Demo>, inputs: &Matrix, k: usize) -> Result<Matrix> {
    let mut data = Vec::new();
    let mut cols = 0;
    for i in 0..inputs.rows() {
        let a = knn_expert_action(demos, inputs.row(i), k)?;
        cols = a.len();
        data.extend(a);
    }
    Matrix::from_vec(inputs.rows(), cols, data)
}

fn transition_action(t: &Transition) -> &[f64] {
    match &t.a {
        Action::Continuous(v) => v,
        Action::Discrete(_) => &[],
    }
}

pub fn train_ddpg_her_dex(env_name: &str, cfg: &AlgoConfig, monitor: &mut dyn Monitor) -> Result<RunRecord> {
    cfg.validate()?;
    if cfg.algo != Algo::DdpgHerDex {
        return Err(Error::Config(format!("train_ddpg_her_dex called with algo {}", cfg.algo)));
    }
    let mut env = make_env(env_name)?;
    let spec = env.spec().clone();
    let (act_dim, goal_dim) = match (&spec.action_spec, spec.goal_dim) {
        (ActionSpec::Continuous { dim, .. }, Some(g)) => (*dim, g),
        _ => {
            return Err(Error::Config(format!(
                "{env_name} is not a goal-conditioned continuous-action environment"
            )))
        }
    };
    let in_dim = spec.obs_dim + goal_dim;
    let mut actor = cfg.build_net(in_dim, act_dim, STREAM_POLICY_INIT)?;
    let mut critic = cfg.build_net(in_dim + act_dim, 1, STREAM_AUX_INIT)?;
    let mut target_actor = actor.clone();
    let mut target_critic = critic.clone();
    let mut opt_a = cfg.optimizer(cfg.lr);
    let mut opt_c = Optimizer::new(cfg.ddpg.critic_lr, cfg.gate_lr.unwrap_or(cfg.ddpg.critic_lr), cfg.grad_clip);
    let mut tracker = Tracker::new(env_name, cfg, monitor);
    if cfg.episodes == 0 {
        return Ok(tracker.finish(Policy { net: actor, head: PolicyHead::Tanh }));
    }

    let demos = fill_demos(env_name, cfg.ddpg.expert_buffer, cfg.seed)?;
    let mut agent: ReplayBuffer<GoalTransition> = ReplayBuffer::new(cfg.ddpg.agent_buffer)?;
    let mut noise_rng = stream_rng(cfg.seed, STREAM_EXPLORE);
    let mut gate_rng = stream_rng(cfg.seed, STREAM_GATES);
    let mut replay_rng = stream_rng(cfg.seed, STREAM_REPLAY);
    let b = cfg.batch_size;
    let k = cfg.ddpg.knn_k;

    for episode in 1..=cfg.episodes {
        let eps = 1.0 - (episode - 1) as f64 / cfg.episodes as f64;
        let mut obs = env.reset(derive_seed(cfg.seed, STREAM_TRAIN_ENV, episode as u64));
        let goal = env.desired_goal().unwrap_or_default();
        let mut achieved = env.achieved_goal().unwrap_or_else(|| obs.clone());
        let mut ret = 0.0;
        let mut trajectory = Vec::new();
        loop {
            let x = Matrix::from_vec(1, in_dim, policy_input(&obs, Some(&goal)))?;
            let pre = actor.predict(&x, Gating::Sampled(&mut gate_rng))?;
            let action: Vec<f64> = pre
                .row(0)
                .iter()
                .map(|v| {
                    let n: f64 = StandardNormal.sample(&mut noise_rng);
                    (v.tanh() + eps * cfg.ddpg.noise_scale * n).clamp(-1.0, 1.0)
                })
                .collect();
            let step = env.step(&Action::Continuous(action.clone()))?;
            ret += step.reward;
            let achieved_next = step.achieved_goal.clone().unwrap_or_else(|| step.observation.clone());
            trajectory.push(GoalTransition {
                t: Transition {
                    s: obs,
                    a: Action::Continuous(action),
                    r: step.reward,
                    s_next: step.observation.clone(),
                    done: step.terminal(),
                },
                desired_goal: goal.clone(),
                achieved_goal: achieved,
                achieved_goal_next: achieved_next.clone(),
            });
            obs = step.observation;
            achieved = achieved_next;
            if step.done {
                break;
            }
        }
        let relabeled = her_relabel(
            &trajectory,
            cfg.ddpg.her_strategy,
            cfg.ddpg.k_future,
            rng_dyn(&mut replay_rng),
            reach_reward,
        )?;
        for tr in trajectory.into_iter().chain(relabeled) {
            agent.push(tr);
        }

        let mut loss_sum = 0.0;
        let mut loss_n = 0usize;
        if agent.is_ready(b) {
            for _ in 0..cfg.ddpg.updates_per_episode {
                let idx = agent.sample_uniform_indices(b, rng_dyn(&mut replay_rng))?;
                let batch: Vec<&GoalTransition> = idx.iter().map(|&i| agent.get(i).expect("sampled slot")).collect();
                let mut inputs = Vec::with_capacity(b * in_dim);
                let mut next_inputs = Vec::with_capacity(b * in_dim);
                let mut actions = Vec::with_capacity(b * act_dim);
                for tr in &batch {
                    inputs.extend(policy_input(&tr.t.s, Some(&tr.desired_goal)));
                    next_inputs.extend(policy_input(&tr.t.s_next, Some(&tr.desired_goal)));
                    actions.extend_from_slice(transition_action(&tr.t));
                }
                let inputs = Matrix::from_vec(b, in_dim, inputs)?;
                let next_inputs = Matrix::from_vec(b, in_dim, next_inputs)?;
                let db = DdpgBatch {
                    expert: expert_rows(&demos, &inputs, k)?,
                    expert_next: expert_rows(&demos, &next_inputs, k)?,
                    inputs,
                    next_inputs,
                    actions: Matrix::from_vec(b, act_dim, actions)?,
                    rewards: batch.iter().map(|t| t.t.r).collect(),
                    // Reaching the (possibly relabeled) goal ends the episode.
                    dones: batch.iter().map(|t| t.t.r == 0.0).collect(),
                };
                let nets = DdpgNets {
                    actor: &actor,
                    critic: &critic,
                    target_actor: &target_actor,
                    target_critic: &target_critic,
                };
                let mut l = ddpg_losses(
                    &db,
                    &nets,
                    cfg.ddpg.dex_alpha,
                    cfg.gamma,
                    cfg.sparsity,
                    cfg.lambda_c,
                    GateMode::Sampled,
                    rng_dyn(&mut gate_rng),
                )?;
                loss_sum += l.actor_loss + l.critic_loss;
                loss_n += 1;
                opt_c.step(&mut critic, &mut l.critic_grads)?;
                opt_a.step(&mut actor, &mut l.actor_grads)?;
                polyak_update(&mut target_critic, &critic, cfg.ddpg.tau)?;
                polyak_update(&mut target_actor, &actor, cfg.ddpg.tau)?;
            }
        }
        let row = TrainRow {
            episode,
            ret,
            epsilon: eps,
            loss: if loss_n > 0 { loss_sum / loss_n as f64 } else { 0.0 },
            l_sp: penalty_value(&actor, cfg.sparsity),
            sparsity_pct: episode_sparsity(&actor, cfg, episode),
        };
        if tracker.end_episode(row, &actor, PolicyHead::Tanh)? {
            break;
        }
    }
    Ok(tracker.finish(Policy {
        net: actor,
        head: PolicyHead::Tanh,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn polyak_identities() {
        let online = Network::mlp(&[3, 4, 2], Activation::Relu, 1).unwrap();
        let orig = Network::mlp(&[3, 4, 2], Activation::Relu, 2).unwrap();
        let mut t = orig.clone();
        polyak_update(&mut t, &online, 0.0).unwrap();
        assert_eq!(t, orig);
        polyak_update(&mut t, &online, 1.0).unwrap();
        assert_eq!(t, online);
        assert!(polyak_update(&mut t, &online, 1.5).is_err());
    }

    #[test]
    fn polyak_small_step_arithmetic_and_contraction() {
        let mut online = Network::mlp(&[1, 1], Activation::Identity, 0).unwrap();
        online.layers_mut()[0].weight.data_mut()[0] = 10.0;
        let mut t = online.clone();
        t.layers_mut()[0].weight.data_mut()[0] = 0.0;
        polyak_update(&mut t, &online, 1e-3).unwrap();
        assert!((t.layers()[0].weight.data()[0] - 0.01).abs() < 1e-15);

        let online = Network::mlp(&[3, 5, 2], Activation::Relu, 7).unwrap();
        let mut t = Network::mlp(&[3, 5, 2], Activation::Relu, 8).unwrap();
        let dist = |a: &Network, b: &Network| -> f64 {
            a.param_slices()
                .iter()
                .zip(b.param_slices())
                .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)))
                .sum::<f64>()
        };
        let before = dist(&t, &online);
        polyak_update(&mut t, &online, 0.3).unwrap();
        assert!((dist(&t, &online) - 0.49 * before).abs() < 1e-9);
        assert_eq!(t.layer_sizes(), online.layer_sizes());
    }

    fn toy_batch(rng: &mut ChaCha8Rng, b: usize, expert_is_actor: Option<&Network>) -> DdpgBatch {
        let mut m = |r: usize, c: usize| {
            Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        let inputs = m(b, 4);
        let next_inputs = m(b, 4);
        let actions = m(b, 2);
        let mut expert = m(b, 2);
        let expert_next = m(b, 2);
        if let Some(actor) = expert_is_actor {
            expert = tanh_all(&actor.predict(&inputs, Gating::Deterministic).unwrap());
        }
        DdpgBatch {
            inputs,
            actions,
            rewards: (0..b).map(|i| if i % 3 == 0 { 0.0 } else { -1.0 }).collect(),
            next_inputs,
            dones: (0..b).map(|i| i % 3 == 0).collect(),
            expert,
            expert_next,
        }
    }

    fn nets() -> (Network, Network, Network, Network) {
        let actor = Network::mlp(&[4, 6, 2], Activation::Tanh, 1).unwrap();
        let critic = Network::mlp(&[6, 6, 1], Activation::Tanh, 2).unwrap();
        let ta = Network::mlp(&[4, 6, 2], Activation::Tanh, 3).unwrap();
        let tc = Network::mlp(&[6, 6, 1], Activation::Tanh, 4).unwrap();
        (actor, critic, ta, tc)
    }

    fn losses(batch: &DdpgBatch, n: &(Network, Network, Network, Network), alpha: f64) -> DdpgLosses {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let nets = DdpgNets {
            actor: &n.0,
            critic: &n.1,
            target_actor: &n.2,
            target_critic: &n.3,
        };
        ddpg_losses(batch, &nets, alpha, 0.9, Sparsity::None, 0.0, GateMode::Deterministic, &mut rng).unwrap()
    }

    #[test]
    fn zero_alpha_is_plain_ddpg() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = nets();
        let batch = toy_batch(&mut rng, 6, None);
        let l = losses(&batch, &n, 0.0);
        // Independent evaluation of the plain objectives.
        let a = tanh_all(&n.0.predict(&batch.inputs, Gating::Deterministic).unwrap());
        let qa = n.1.predict(&concat_cols(&batch.inputs, &a).unwrap(), Gating::Deterministic).unwrap();
        let actor_loss = -qa.data().iter().sum::<f64>() / 6.0;
        assert!((l.actor_loss - actor_loss).abs() < 1e-12);
        let na = tanh_all(&n.2.predict(&batch.next_inputs, Gating::Deterministic).unwrap());
        let qn = n.3.predict(&concat_cols(&batch.next_inputs, &na).unwrap(), Gating::Deterministic).unwrap();
        let q = n.1.predict(&concat_cols(&batch.inputs, &batch.actions).unwrap(), Gating::Deterministic).unwrap();
        let mut critic = 0.0;
        for i in 0..6 {
            let y = batch.rewards[i] + if batch.dones[i] { 0.0 } else { 0.9 * qn.get(i, 0) };
            critic += (q.get(i, 0) - y).powi(2) / 6.0;
        }
        assert!((l.critic_loss - critic).abs() < 1e-12);
    }

    #[test]
    fn expert_matching_actor_pays_no_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = nets();
        let batch = toy_batch(&mut rng, 5, Some(&n.0));
        let with = losses(&batch, &n, 5.0);
        let without = losses(&batch, &n, 0.0);
        assert!((with.actor_loss - without.actor_loss).abs() < 1e-12);
    }

    #[test]
    fn terminal_rows_do_not_bootstrap() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = nets();
        let mut batch = toy_batch(&mut rng, 4, None);
        batch.dones = vec![true; 4];
        let l = losses(&batch, &n, 5.0);
        let q = n.1.predict(&concat_cols(&batch.inputs, &batch.actions).unwrap(), Gating::Deterministic).unwrap();
        let critic: f64 = (0..4).map(|i| (q.get(i, 0) - batch.rewards[i]).powi(2) / 4.0).sum();
        assert!((l.critic_loss - critic).abs() < 1e-12);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut n = nets();
        let batch = toy_batch(&mut rng, 5, None);
        let l = losses(&batch, &n, 2.0);
        for which in 0..2 {
            let analytic: Vec<Vec<f64>> = if which == 0 { &l.actor_grads } else { &l.critic_grads }
                .slices()
                .iter()
                .map(|s| s.to_vec())
                .collect();
            for (slot, g) in analytic.iter().enumerate() {
                for i in 0..g.len() {
                    let h = 1e-6;
                    let net = if which == 0 { &mut n.0 } else { &mut n.1 };
                    let orig = net.param_slices()[slot][i];
                    net.param_slices_mut()[slot][i] = orig + h;
                    let lp = losses(&batch, &n, 2.0);
                    let net = if which == 0 { &mut n.0 } else { &mut n.1 };
                    net.param_slices_mut()[slot][i] = orig - h;
                    let lm = losses(&batch, &n, 2.0);
                    let net = if which == 0 { &mut n.0 } else { &mut n.1 };
                    net.param_slices_mut()[slot][i] = orig;
                    let fd = if which == 0 {
                        (lp.actor_loss - lm.actor_loss) / (2.0 * h)
                    } else {
                        (lp.critic_loss - lm.critic_loss) / (2.0 * h)
                    };
                    assert!((fd - g[i]).abs() < 1e-5 * fd.abs().max(1.0), "net {which} slot {slot}: {fd} vs {}", g[i]);
                }
            }
        }
    }

    #[test]
    fn missing_expert_actions_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = nets();
        let mut batch = toy_batch(&mut rng, 3, None);
        batch.expert = Matrix::zeros(3, 0);
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let nets = DdpgNets {
            actor: &n.0,
            critic: &n.1,
            target_actor: &n.2,
            target_critic: &n.3,
        };
        let e = ddpg_losses(&batch, &nets, 5.0, 0.9, Sparsity::None, 0.0, GateMode::Deterministic, &mut r);
        assert!(matches!(e, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn demo_buffer_fills_with_expert_actions() {
        let demos = fill_demos("pointreach", 300, 1).unwrap();
        assert_eq!(demos.len(), 300);
        for d in demos.iter() {
            assert_eq!(d.input.len(), 6);
            assert_eq!(d.action, scripted_expert(&d.input[..3], &d.input[3..]));
        }
    }

    #[test]
    fn zero_episodes_and_short_run() {
        let mut cfg = AlgoConfig::new(Algo::DdpgHerDex);
        cfg.episodes = 0;
        let rec = train_ddpg_her_dex("pointreach", &cfg, &mut ()).unwrap();
        assert!(rec.train.is_empty());
        assert!(train_ddpg_her_dex("cartpole", &cfg, &mut ()).is_err());
        cfg.episodes = 3;
        cfg.eval_every = 3;
        cfg.ddpg.updates_per_episode = 2;
        cfg.ddpg.expert_buffer = 200;
        cfg.batch_size = 16;
        let rec = train_ddpg_her_dex("pointreach", &cfg, &mut ()).unwrap();
        assert_eq!(rec.train.len(), 3);
        assert!(rec.eval[0].success_rate.is_some());
    }
}
