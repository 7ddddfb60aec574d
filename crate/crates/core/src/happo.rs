//! Trajectories, GAE, sequential advantage decomposition and the clipped
//! policy / value updates.
//!
//! Update order within one round: head -> operation -> tail -> critic(s).
//! Each later policy is trained on the joint advantage multiplied by the
//! probability ratios of the policies already updated in this round.

use serde::Serialize;

use crate::agents::{Agents, Categorical, Critic, FeatureCache, FeaturePolicy, OpCache, OperationPolicy};
use crate::data_io::{RunConfig, ShapingMode, Variant};
use crate::error::{Error, Result};
use crate::feature_space::MaskVector;
use crate::nn::{AdamConfig, Mat, ParamStore};

pub const RATIO_MIN: f64 = 1e-4;
pub const RATIO_MAX: f64 = 1e4;

#[derive(Debug, Clone, PartialEq)]
pub struct TailRecord {
    pub context: Vec<f64>,
    pub mask: Vec<bool>,
    pub action: usize,
    pub log_prob: f64,
}

/// Everything one step needs for re-evaluation during the update.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    /// Normalised statistics half of the critic state (49).
    pub stats: Vec<f64>,
    /// Network-space descriptor tokens of the pool, `N x 7`.
    pub tokens: Mat,
    pub head_action: usize,
    pub head_log_prob: f64,
    pub op_input: Vec<f64>,
    pub op_mask: MaskVector,
    pub op_action: usize,
    pub op_log_prob: f64,
    /// Present exactly at binary-operation steps.
    pub tail: Option<TailRecord>,
    /// One value estimate per critic.
    pub values: Vec<f64>,
    pub reward: f64,
    pub id: f64,
    pub iv: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn tail_steps(&self) -> Vec<usize> {
        (0..self.len()).filter(|&t| self.steps[t].tail.is_some()).collect()
    }

    /// Rewards used for advantages. In shaped-reward mode the redundancy
    /// and relevance terms are folded in as `- beta_id * Id + beta_iv * Iv`.
    pub fn training_rewards(&self, hyper: &TrainHyper) -> Vec<f64> {
        self.steps
            .iter()
            .map(|s| match hyper.shaping {
                ShapingMode::ShapedReward => s.reward - hyper.beta_id * s.id + hyper.beta_iv * s.iv,
                ShapingMode::LossConstant => s.reward,
            })
            .collect()
    }

    pub fn values(&self, critic: usize) -> Vec<f64> {
        self.steps.iter().map(|s| s.values[critic]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainHyper {
    pub gamma: f64,
    pub lambda: f64,
    pub clip_eps: f64,
    pub epochs: usize,
    pub lr_policy: f64,
    pub lr_critic: f64,
    pub entropy_coef: f64,
    pub beta_id: f64,
    pub beta_iv: f64,
    pub shaping: ShapingMode,
    /// `false` trains every agent on the raw joint advantage.
    pub decompose: bool,
}

impl TrainHyper {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            gamma: cfg.gamma,
            lambda: cfg.lambda,
            clip_eps: cfg.clip_eps,
            epochs: cfg.epochs_per_update,
            lr_policy: cfg.lr,
            lr_critic: cfg.lr_critic,
            entropy_coef: cfg.entropy_coef,
            beta_id: cfg.beta_id,
            beta_iv: cfg.beta_iv,
            shaping: cfg.shaping_mode,
            decompose: cfg.variant != Variant::NoDecomp,
        }
    }
}

/// Recursive GAE. `V_T = bootstrap`.
pub fn gae(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if rewards.len() != values.len() {
        return Err(Error::Shape(format!("{} rewards vs {} values", rewards.len(), values.len())));
    }
    let t_len = rewards.len();
    let mut adv = vec![0.0; t_len];
    let mut next_adv = 0.0;
    for t in (0..t_len).rev() {
        let next_v = if t + 1 < t_len { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next_v - values[t];
        next_adv = delta + gamma * lambda * next_adv;
        adv[t] = next_adv;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

pub fn clipped_surrogate(ratio: f64, m: f64, clip_eps: f64) -> f64 {
    (ratio * m).min(ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * m)
}

/// `true` when the clipped branch is the minimum and the clip binds
/// (zero gradient through the ratio).
fn clip_active(ratio: f64, m: f64, clip_eps: f64) -> bool {
    (m > 0.0 && ratio > 1.0 + clip_eps) || (m < 0.0 && ratio < 1.0 - clip_eps)
}

pub fn clamp_ratio(r: f64) -> f64 {
    if r.is_nan() {
        1.0
    } else {
        r.clamp(RATIO_MIN, RATIO_MAX)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PolicyBatch {
    pub loss: f64,
    pub surrogate: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub ratios: Vec<f64>,
}

/// `L = -mean(surrogate) - beta * mean(H) + constant` and `dL/dlogits` for
/// each step. `constant` carries the loss-constant Id/Iv terms (no gradient).
pub fn policy_loss(
    dists: &[Categorical],
    actions: &[usize],
    old_log_probs: &[f64],
    m: &[f64],
    clip_eps: f64,
    entropy_coef: f64,
    constant: f64,
) -> (PolicyBatch, Vec<Vec<f64>>) {
    let n = dists.len();
    if n == 0 {
        return (
            PolicyBatch {
                loss: constant,
                ..Default::default()
            },
            Vec::new(),
        );
    }
    let inv = 1.0 / n as f64;
    let (mut surr, mut ent, mut clipped) = (0.0, 0.0, 0usize);
    let mut ratios = Vec::with_capacity(n);
    let mut grads = Vec::with_capacity(n);
    for t in 0..n {
        let d = &dists[t];
        let a = actions[t];
        let ratio = (d.log_probs[a] - old_log_probs[t]).exp();
        ratios.push(ratio);
        surr += clipped_surrogate(ratio, m[t], clip_eps);
        if (ratio - 1.0).abs() > clip_eps {
            clipped += 1;
        }
        let h = d.entropy();
        ent += h;
        // d surrogate / d log pi(a) = ratio * M on the unclipped branch
        let g_lp = if clip_active(ratio, m[t], clip_eps) { 0.0 } else { ratio * m[t] };
        let g: Vec<f64> = (0..d.probs.len())
            .map(|j| {
                if !d.mask[j] {
                    return 0.0;
                }
                let p = d.probs[j];
                let dlp = if j == a { 1.0 - p } else { -p };
                let dh = -p * (d.log_probs[j] + h);
                -inv * g_lp * dlp - entropy_coef * inv * dh
            })
            .collect();
        grads.push(g);
    }
    let surrogate = surr * inv;
    let entropy = ent * inv;
    (
        PolicyBatch {
            loss: -surrogate - entropy_coef * entropy + constant,
            surrogate,
            entropy,
            clip_fraction: clipped as f64 * inv,
            ratios,
        },
        grads,
    )
}

/// `½ mean (v - R)²`.
pub fn critic_loss(values: &[f64], returns: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    0.5 * values.iter().zip(returns).map(|(v, r)| (v - r).powi(2)).sum::<f64>() / values.len() as f64
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AgentReport {
    pub name: String,
    pub steps: usize,
    /// Loss and clip fraction of the first epoch.
    pub loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    /// max |ratio - 1| in the first epoch (parameters not yet moved).
    pub first_epoch_max_ratio_dev: f64,
    /// mean |ratio - 1| after the agent's update.
    pub mean_abs_ratio_dev: f64,
}

/// Joint advantages and the decomposed factors handed to each agent.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AdvantageSet {
    /// Per critic: advantages and returns.
    pub advantages: Vec<Vec<f64>>,
    pub returns: Vec<Vec<f64>>,
    pub m_head: Vec<f64>,
    pub m_op: Vec<f64>,
    /// Only at binary steps, aligned with `tail_steps`.
    pub m_tail: Vec<f64>,
    pub tail_steps: Vec<usize>,
    /// Re-evaluated log-probs of the updated head/op policies.
    pub head_new_log_probs: Vec<f64>,
    pub op_new_log_probs: Vec<f64>,
    pub ratio_clamps: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MFactorStats {
    /// max |M_op - A_op| over steps; zero when decomposition is bypassed.
    pub op_max_dev: f64,
    pub tail_max_dev: f64,
    pub op_mean_ratio: f64,
    pub tail_mean_ratio: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct UpdateReport {
    pub episode: usize,
    pub aborted: bool,
    pub agents: Vec<AgentReport>,
    pub value_loss: Vec<f64>,
    pub critic_param_count: usize,
    pub critic_input_dim: usize,
    pub m_factors: MFactorStats,
    pub ratio_clamps: usize,
    pub shaping_mode: Option<ShapingMode>,
    /// Id/Iv constant added to the policy losses in loss-constant mode.
    pub info_constant: f64,
    pub mean_reward: f64,
    pub best_score: f64,
}

/// Which advantage vector each agent uses (index into `AdvantageSet::advantages`).
fn critic_for(agents: &Agents, agent: usize) -> usize {
    if agents.critics.len() == 1 {
        0
    } else {
        agent
    }
}

fn head_dist(p: &FeaturePolicy, s: &Step) -> Result<(Categorical, FeatureCache)> {
    let (logits, cache) = p.forward(&s.tokens, None)?;
    Ok((Categorical::new(logits, vec![true; s.tokens.rows()])?, cache))
}

fn tail_dist(p: &FeaturePolicy, s: &Step) -> Result<(Categorical, FeatureCache)> {
    let tr = s.tail.as_ref().expect("tail step");
    let (logits, cache) = p.forward(&s.tokens, Some(&tr.context))?;
    Ok((Categorical::new(logits, tr.mask.clone())?, cache))
}

fn op_dist(p: &OperationPolicy, s: &Step) -> Result<(Categorical, OpCache)> {
    let (logits, cache) = p.forward(&s.op_input)?;
    Ok((Categorical::new(logits, s.op_mask.0.to_vec())?, cache))
}

/// Re-evaluated log-probs of the taken actions under the current parameters.
pub fn head_log_probs(p: &FeaturePolicy, traj: &Trajectory) -> Result<Vec<f64>> {
    traj.steps.iter().map(|s| Ok(head_dist(p, s)?.0.log_probs[s.head_action])).collect()
}

pub fn op_log_probs(p: &OperationPolicy, traj: &Trajectory) -> Result<Vec<f64>> {
    traj.steps.iter().map(|s| Ok(op_dist(p, s)?.0.log_probs[s.op_action])).collect()
}

pub fn tail_log_probs(p: &FeaturePolicy, traj: &Trajectory, steps: &[usize]) -> Result<Vec<f64>> {
    steps
        .iter()
        .map(|&t| {
            let s = &traj.steps[t];
            Ok(tail_dist(p, s)?.0.log_probs[s.tail.as_ref().expect("tail").action])
        })
        .collect()
}

fn nonfinite(what: &str) -> Error {
    Error::NonFinite(format!("{what} update"))
}

/// A policy as seen by the update loop.
trait PolicyNet {
    type Cache;
    fn eval(&self, s: &Step) -> Result<(Categorical, Self::Cache)>;
    fn back(&mut self, cache: &Self::Cache, dlogits: &[f64]);
    fn store_mut(&mut self) -> &mut ParamStore;
}

struct HeadNet<'a>(&'a mut FeaturePolicy);
struct OpNet<'a>(&'a mut OperationPolicy);
struct TailNet<'a>(&'a mut FeaturePolicy);

impl PolicyNet for HeadNet<'_> {
    type Cache = FeatureCache;
    fn eval(&self, s: &Step) -> Result<(Categorical, FeatureCache)> {
        head_dist(self.0, s)
    }
    fn back(&mut self, c: &FeatureCache, g: &[f64]) {
        self.0.backward(c, g);
    }
    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.0.store
    }
}

impl PolicyNet for OpNet<'_> {
    type Cache = OpCache;
    fn eval(&self, s: &Step) -> Result<(Categorical, OpCache)> {
        op_dist(self.0, s)
    }
    fn back(&mut self, c: &OpCache, g: &[f64]) {
        self.0.backward(c, g);
    }
    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.0.store
    }
}

impl PolicyNet for TailNet<'_> {
    type Cache = FeatureCache;
    fn eval(&self, s: &Step) -> Result<(Categorical, FeatureCache)> {
        tail_dist(self.0, s)
    }
    fn back(&mut self, c: &FeatureCache, g: &[f64]) {
        self.0.backward(c, g);
    }
    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.0.store
    }
}

/// E epochs of full-batch clipped ascent for one policy.
#[allow(clippy::too_many_arguments)]
fn train_policy<P: PolicyNet>(
    name: &str,
    net: &mut P,
    steps: &[&Step],
    actions: &[usize],
    old: &[f64],
    m: &[f64],
    hyper: &TrainHyper,
    constant: f64,
) -> Result<AgentReport> {
    let n = actions.len();
    let adam = AdamConfig::with_lr(hyper.lr_policy);
    let mut report = AgentReport {
        name: name.to_owned(),
        steps: n,
        ..Default::default()
    };
    if n == 0 {
        return Ok(report);
    }
    for epoch in 0..hyper.epochs {
        net.store_mut().zero_grad();
        let mut dists = Vec::with_capacity(n);
        let mut caches = Vec::with_capacity(n);
        for s in steps {
            let (d, c) = net.eval(s)?;
            dists.push(d);
            caches.push(c);
        }
        let (batch, grads) = policy_loss(&dists, actions, old, m, hyper.clip_eps, hyper.entropy_coef, constant);
        if !batch.loss.is_finite() {
            return Err(nonfinite(name));
        }
        if epoch == 0 {
            report.loss = batch.loss;
            report.entropy = batch.entropy;
            report.clip_fraction = batch.clip_fraction;
            report.first_epoch_max_ratio_dev = batch.ratios.iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max);
        }
        for (c, g) in caches.iter().zip(&grads) {
            net.back(c, g);
        }
        let store = net.store_mut();
        if !store.grads_finite() {
            return Err(nonfinite(name));
        }
        store.adam_step(&adam);
        if !store.values_finite() {
            return Err(nonfinite(name));
        }
    }
    Ok(report)
}

fn ratios(new: &[f64], old: &[f64], clamps: &mut usize) -> Vec<f64> {
    new.iter()
        .zip(old)
        .map(|(n, o)| {
            let r = (n - o).exp();
            let c = clamp_ratio(r);
            if c != r {
                *clamps += 1;
            }
            c
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// One full update round. On a non-finite loss or gradient every network is
/// restored to its pre-round parameters and the report is marked aborted.
pub fn sequential_update(agents: &mut Agents, traj: &Trajectory, hyper: &TrainHyper) -> Result<(UpdateReport, AdvantageSet)> {
    let backup = agents.clone();
    match update_inner(agents, traj, hyper) {
        Ok(r) => Ok(r),
        Err(Error::NonFinite(what)) => {
            log::warn!("non-finite {what}; restoring parameters");
            *agents = backup;
            let report = UpdateReport {
                aborted: true,
                critic_param_count: agents.critic_param_count(),
                critic_input_dim: agents.critic_input_dim(),
                shaping_mode: Some(hyper.shaping),
                ..Default::default()
            };
            Ok((report, AdvantageSet::default()))
        }
        Err(e) => Err(e),
    }
}

fn update_inner(agents: &mut Agents, traj: &Trajectory, hyper: &TrainHyper) -> Result<(UpdateReport, AdvantageSet)> {
    let rewards = traj.training_rewards(hyper);
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(nonfinite("reward"));
    }
    let mut set = AdvantageSet {
        tail_steps: traj.tail_steps(),
        ..Default::default()
    };
    for c in 0..agents.critics.len() {
        let (a, r) = gae(&rewards, &traj.values(c), 0.0, hyper.gamma, hyper.lambda)?;
        set.advantages.push(a);
        set.returns.push(r);
    }
    let constant = match hyper.shaping {
        ShapingMode::LossConstant => {
            let id = mean(&traj.steps.iter().map(|s| s.id).collect::<Vec<_>>());
            let iv = mean(&traj.steps.iter().map(|s| s.iv).collect::<Vec<_>>());
            hyper.beta_id * id - hyper.beta_iv * iv
        }
        ShapingMode::ShapedReward => 0.0,
    };
    let n = traj.len();
    let mut reports = Vec::new();

    // head
    set.m_head = set.advantages[critic_for(agents, 0)].clone();
    let actions: Vec<usize> = traj.steps.iter().map(|s| s.head_action).collect();
    let old: Vec<f64> = traj.steps.iter().map(|s| s.head_log_prob).collect();
    let all: Vec<&Step> = traj.steps.iter().collect();
    reports.push(train_policy(
        "head",
        &mut HeadNet(&mut agents.head),
        &all,
        &actions,
        &old,
        &set.m_head,
        hyper,
        constant,
    )?);
    set.head_new_log_probs = head_log_probs(&agents.head, traj)?;
    let r_head = ratios(&set.head_new_log_probs, &old, &mut set.ratio_clamps);
    reports[0].mean_abs_ratio_dev = mean(&r_head.iter().map(|r| (r - 1.0).abs()).collect::<Vec<_>>());

    // operation
    let a_op = &set.advantages[critic_for(agents, 1)];
    set.m_op = if hyper.decompose {
        (0..n).map(|t| r_head[t] * a_op[t]).collect()
    } else {
        a_op.clone()
    };
    let actions: Vec<usize> = traj.steps.iter().map(|s| s.op_action).collect();
    let old_op: Vec<f64> = traj.steps.iter().map(|s| s.op_log_prob).collect();
    reports.push(train_policy(
        "op",
        &mut OpNet(&mut agents.op),
        &all,
        &actions,
        &old_op,
        &set.m_op,
        hyper,
        constant,
    )?);
    set.op_new_log_probs = op_log_probs(&agents.op, traj)?;
    let r_op = ratios(&set.op_new_log_probs, &old_op, &mut set.ratio_clamps);
    reports[1].mean_abs_ratio_dev = mean(&r_op.iter().map(|r| (r - 1.0).abs()).collect::<Vec<_>>());

    // tail, binary steps only
    let ts = set.tail_steps.clone();
    let a_tail = &set.advantages[critic_for(agents, 2)];
    set.m_tail = ts
        .iter()
        .map(|&t| if hyper.decompose { r_head[t] * r_op[t] * a_tail[t] } else { a_tail[t] })
        .collect();
    let actions: Vec<usize> = ts.iter().map(|&t| traj.steps[t].tail.as_ref().expect("tail").action).collect();
    let old_tail: Vec<f64> = ts.iter().map(|&t| traj.steps[t].tail.as_ref().expect("tail").log_prob).collect();
    let tail_refs: Vec<&Step> = ts.iter().map(|&t| &traj.steps[t]).collect();
    reports.push(train_policy(
        "tail",
        &mut TailNet(&mut agents.tail),
        &tail_refs,
        &actions,
        &old_tail,
        &set.m_tail,
        hyper,
        constant,
    )?);
    let new_tail = tail_log_probs(&agents.tail, traj, &ts)?;
    let r_tail: Vec<f64> = new_tail.iter().zip(&old_tail).map(|(a, b)| ((a - b).exp() - 1.0).abs()).collect();
    reports[2].mean_abs_ratio_dev = mean(&r_tail);

    // critics
    let mut value_loss = Vec::new();
    for (c, critic) in agents.critics.iter_mut().enumerate() {
        value_loss.push(train_critic(critic, traj, &set.returns[c], hyper)?);
    }

    let op_dev = (0..n).map(|t| (set.m_op[t] - set.advantages[critic_for(agents, 1)][t]).abs()).fold(0.0, f64::max);
    let tail_dev = ts
        .iter()
        .zip(&set.m_tail)
        .map(|(&t, m)| (m - set.advantages[critic_for(agents, 2)][t]).abs())
        .fold(0.0, f64::max);
    let report = UpdateReport {
        episode: 0,
        aborted: false,
        agents: reports,
        value_loss,
        critic_param_count: agents.critic_param_count(),
        critic_input_dim: agents.critic_input_dim(),
        m_factors: MFactorStats {
            op_max_dev: op_dev,
            tail_max_dev: tail_dev,
            op_mean_ratio: if hyper.decompose { mean(&r_head) } else { 1.0 },
            tail_mean_ratio: if hyper.decompose {
                mean(&ts.iter().map(|&t| r_head[t] * r_op[t]).collect::<Vec<_>>())
            } else {
                1.0
            },
        },
        ratio_clamps: set.ratio_clamps,
        shaping_mode: Some(hyper.shaping),
        info_constant: constant,
        mean_reward: mean(&rewards),
        best_score: f64::NAN,
    };
    Ok((report, set))
}

/// E epochs of full-batch MSE regression; returns the first-epoch loss.
fn train_critic(critic: &mut Critic, traj: &Trajectory, returns: &[f64], hyper: &TrainHyper) -> Result<f64> {
    let adam = AdamConfig::with_lr(hyper.lr_critic);
    let n = traj.len();
    let mut first = 0.0;
    for epoch in 0..hyper.epochs {
        critic.store.zero_grad();
        let mut vals = Vec::with_capacity(n);
        for (s, r) in traj.steps.iter().zip(returns) {
            let (v, cache) = critic.forward(&s.stats, &s.tokens)?;
            critic.backward(&cache, (v - r) / n as f64);
            vals.push(v);
        }
        let loss = critic_loss(&vals, returns);
        if !loss.is_finite() || !critic.store.grads_finite() {
            return Err(nonfinite("critic"));
        }
        if epoch == 0 {
            first = loss;
        }
        critic.store.adam_step(&adam);
    }
    Ok(first)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// O(T²) oracle: A_t = sum_l (γλ)^l δ_{t+l}.
    pub(crate) fn gae_brute(r: &[f64], v: &[f64], boot: f64, g: f64, l: f64) -> Vec<f64> {
        let t_len = r.len();
        let delta: Vec<f64> = (0..t_len)
            .map(|t| r[t] + g * if t + 1 < t_len { v[t + 1] } else { boot } - v[t])
            .collect();
        (0..t_len)
            .map(|t| (t..t_len).map(|k| (g * l).powi((k - t) as i32) * delta[k]).sum())
            .collect()
    }

    #[test]
    fn gae_examples_and_oracle() {
        let (a, _) = gae(&[1.0, 1.0], &[0.0, 0.0], 0.0, 1.0, 1.0).unwrap();
        assert_eq!(a, vec![2.0, 1.0]);
        let (a, r) = gae(&[0.5, -1.0, 2.0], &[0.1, 0.2, 0.3], 0.4, 0.9, 0.0).unwrap();
        assert_eq!(a[0], 0.5 + 0.9 * 0.2 - 0.1);
        assert_eq!(r[2], a[2] + 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let t = rng.gen_range(1..=50);
            let r: Vec<f64> = (0..t).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let v: Vec<f64> = (0..t).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let boot = rng.gen_range(-1.0..1.0);
            let (a, _) = gae(&r, &v, boot, 0.99, 0.95).unwrap();
            let b = gae_brute(&r, &v, boot, 0.99, 0.95);
            assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
        }
    }

    #[test]
    fn gae_is_linear_in_rewards() {
        let r = [0.3, -0.7, 1.1];
        let (a, ret) = gae(&r, &[0.0; 3], 0.0, 0.99, 0.95).unwrap();
        let (a3, ret3) = gae(&r.map(|x| 3.0 * x), &[0.0; 3], 0.0, 0.99, 0.95).unwrap();
        for i in 0..3 {
            assert!((a3[i] - 3.0 * a[i]).abs() < 1e-12);
            assert!((ret3[i] - 3.0 * ret[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn surrogate_examples() {
        assert_eq!(clipped_surrogate(1.0, 0.7, 0.2), 0.7);
        assert!((clipped_surrogate(2.0, 1.0, 0.2) - 1.2).abs() < 1e-15);
        // pessimistic min with a negative advantage: min(0.5 M, 0.8 M) = 0.8 M
        assert!((clipped_surrogate(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);
        assert_eq!(clipped_surrogate(1.1, -1.0, 0.2), -1.1);
    }

    #[test]
    fn critic_loss_examples() {
        assert_eq!(critic_loss(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(critic_loss(&[0.0; 3], &[2.0; 3]), 2.0);
    }

    #[test]
    fn policy_loss_terms() {
        let uniform = Categorical::new(vec![0.0; 4], vec![true; 4]).unwrap();
        assert!((uniform.entropy() - 4f64.ln()).abs() < 1e-12);
        let d = vec![uniform.clone(), uniform.clone()];
        let old = vec![uniform.log_probs[0], uniform.log_probs[1]];
        let (b, _) = policy_loss(&d, &[0, 1], &old, &[0.5, -1.0], 0.2, 0.0, 0.0);
        assert!((b.loss + (0.5 - 1.0) / 2.0).abs() < 1e-15);
        let (b1, _) = policy_loss(&d, &[0, 1], &old, &[0.5, -1.0], 0.2, 0.1, 0.0);
        let (b2, _) = policy_loss(&d, &[0, 1], &old, &[0.5, -1.0], 0.2, 0.2, 0.0);
        assert!(b2.loss < b1.loss && b1.loss < b.loss);
    }

    #[test]
    fn policy_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let k = rng.gen_range(2..7);
            let mut mask: Vec<bool> = (0..k).map(|_| rng.gen_bool(0.7)).collect();
            mask[0] = true;
            let logits: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let a = (0..k).filter(|&j| mask[j]).last().unwrap();
            let old = rng.gen_range(-2.5..-0.5);
            let m = rng.gen_range(-1.0..1.0);
            let loss = |z: &[f64]| {
                let d = Categorical::new(z.to_vec(), mask.clone()).unwrap();
                policy_loss(&[d], &[a], &[old], &[m], 0.2, 0.3, 0.0).0.loss
            };
            let d = Categorical::new(logits.clone(), mask.clone()).unwrap();
            let (_, g) = policy_loss(&[d], &[a], &[old], &[m], 0.2, 0.3, 0.0);
            for j in 0..k {
                if !mask[j] {
                    continue;
                }
                let mut up = logits.clone();
                up[j] += 1e-6;
                let mut dn = logits.clone();
                dn[j] -= 1e-6;
                let num = (loss(&up) - loss(&dn)) / 2e-6;
                assert!((num - g[0][j]).abs() < 1e-6, "{num} vs {}", g[0][j]);
            }
        }
    }
}
