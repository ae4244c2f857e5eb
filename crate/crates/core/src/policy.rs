//! GFlowNet policy trained with trajectory balance.
//!
//! A two-hidden-layer LeakyReLU MLP reads the one-hot state encoding and feeds
//! two linear heads: forward logits over the full action alphabet and backward
//! logits over the alphabet without `Stop`. The learnable `log Z` lives in the
//! same flat parameter vector, so a single Adam instance updates everything.
//!
//! For a trajectory `s0 -> ... -> s_T` the residual is
//!
//! ```text
//! delta = log Z + sum_t log P_F(a_t | s_t) - log R(x) - sum_{t>=1} log P_B(a_{t-1} | s_t)
//! ```
//!
//! The final `Stop` transition has a single parent, so its backward term is 0.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Env, FidState, Object, Trajectory};
use crate::error::{Error, Result};
use crate::optim::Adam;

const LEAK: f64 = 0.01;
pub const REWARD_FLOOR: f64 = 1e-20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardTransform {
    pub beta: f64,
    pub rho: f64,
    /// Active-learning round, starting at 1.
    pub round: u32,
    pub exponent: f64,
}

impl RewardTransform {
    pub fn new(beta: f64, rho: f64, round: u32) -> Self {
        RewardTransform { beta, rho, round, exponent: 1.0 }
    }

    /// `(alpha * rho^(round - 1) / beta)^exponent`, floored so `log R` stays finite.
    pub fn apply(&self, alpha: f64) -> f64 {
        self.log_apply(alpha).exp()
    }

    /// `log` of [`RewardTransform::apply`], computed without overflow for late rounds.
    pub fn log_apply(&self, alpha: f64) -> f64 {
        if !(alpha > 0.0) {
            return REWARD_FLOOR.ln();
        }
        let log_scale = (self.round.max(1) - 1) as f64 * self.rho.ln() - self.beta.ln();
        (self.exponent * (alpha.ln() + log_scale)).max(REWARD_FLOOR.ln())
    }
}

pub fn reward_transform(alpha: f64, t: &RewardTransform) -> f64 {
    t.apply(alpha)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub trajectories: usize,
    pub batch_size: usize,
    /// Probability of a uniform legal action at each step.
    pub epsilon: f64,
    pub lr: f64,
    pub lr_log_z: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { trajectories: 2000, batch_size: 16, epsilon: 0.1, lr: 1e-3, lr_log_z: 1e-1 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::config("epsilon", "must lie in [0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if !(self.lr > 0.0 && self.lr_log_z > 0.0) {
            return Err(Error::config("lr", "learning rates must be positive"));
        }
        Ok(())
    }
}

/// How actions are drawn while sampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleMode {
    /// Uniform legal action with probability `epsilon`, otherwise the policy.
    Mixture(f64),
    /// Most probable legal action, lowest index on ties.
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Layout {
    input: usize,
    hidden: usize,
    n_fwd: usize,
    n_bwd: usize,
}

impl Layout {
    fn w1(&self) -> usize {
        0
    }
    fn b1(&self) -> usize {
        self.input * self.hidden
    }
    fn w2(&self) -> usize {
        self.b1() + self.hidden
    }
    fn b2(&self) -> usize {
        self.w2() + self.hidden * self.hidden
    }
    fn wf(&self) -> usize {
        self.b2() + self.hidden
    }
    fn bf(&self) -> usize {
        self.wf() + self.n_fwd * self.hidden
    }
    fn wb(&self) -> usize {
        self.bf() + self.n_fwd
    }
    fn bb(&self) -> usize {
        self.wb() + self.n_bwd * self.hidden
    }
    fn log_z(&self) -> usize {
        self.bb() + self.n_bwd
    }
    fn len(&self) -> usize {
        self.log_z() + 1
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyNet {
    layout: Layout,
    /// `w1` is stored per input feature (`input x hidden`) so sparse inputs read
    /// contiguous columns; the other matrices are row-major `out x in`.
    params: Vec<f64>,
    adam: Adam,
    lr_log_z: f64,
}

/// Serialized form for the `sample` command and run resumption.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicySnapshot {
    pub input: usize,
    pub hidden: usize,
    pub n_forward: usize,
    pub n_backward: usize,
    pub params: Vec<f64>,
}

struct Activations {
    active: Vec<usize>,
    pre1: Vec<f64>,
    h1: Vec<f64>,
    pre2: Vec<f64>,
    h2: Vec<f64>,
    logits_f: Vec<f64>,
    logits_b: Vec<f64>,
}

#[inline]
fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAK * x
    }
}

#[inline]
fn leaky_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAK
    }
}

/// Masked log-softmax; masked entries get `-inf`.
pub fn masked_log_softmax(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &ok)| ok)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits
        .iter()
        .zip(mask)
        .filter(|(_, &ok)| ok)
        .map(|(l, _)| (l - max).exp())
        .sum();
    let lse = max + sum.ln();
    logits
        .iter()
        .zip(mask)
        .map(|(l, &ok)| if ok { l - lse } else { f64::NEG_INFINITY })
        .collect()
}

impl PolicyNet {
    pub fn new<R: Rng + ?Sized>(env: &Env, hidden: usize, config: &TrainConfig, rng: &mut R) -> Self {
        let layout = Layout {
            input: env.encoding_len(),
            hidden,
            n_fwd: env.n_actions(),
            n_bwd: env.n_backward_actions(),
        };
        let mut params = vec![0.0; layout.len()];
        let bound1 = 1.0 / (layout.input as f64).sqrt();
        for w in &mut params[layout.w1()..layout.b1()] {
            *w = rng.random_range(-bound1..bound1);
        }
        let bound2 = 1.0 / (hidden as f64).sqrt();
        for w in &mut params[layout.w2()..layout.b2()] {
            *w = rng.random_range(-bound2..bound2);
        }
        PolicyNet {
            layout,
            adam: Adam::new(layout.len(), config.lr),
            lr_log_z: config.lr_log_z,
            params,
        }
    }

    pub fn from_snapshot(snapshot: &PolicySnapshot, config: &TrainConfig) -> Result<Self> {
        let layout = Layout {
            input: snapshot.input,
            hidden: snapshot.hidden,
            n_fwd: snapshot.n_forward,
            n_bwd: snapshot.n_backward,
        };
        if snapshot.params.len() != layout.len() {
            return Err(Error::Serde(format!(
                "policy snapshot has {} parameters, layout needs {}",
                snapshot.params.len(),
                layout.len()
            )));
        }
        Ok(PolicyNet {
            layout,
            params: snapshot.params.clone(),
            adam: Adam::new(layout.len(), config.lr),
            lr_log_z: config.lr_log_z,
        })
    }

    pub fn snapshot(&self) -> PolicySnapshot {
        PolicySnapshot {
            input: self.layout.input,
            hidden: self.layout.hidden,
            n_forward: self.layout.n_fwd,
            n_backward: self.layout.n_bwd,
            params: self.params.clone(),
        }
    }

    pub fn matches(&self, env: &Env) -> bool {
        self.layout.input == env.encoding_len()
            && self.layout.n_fwd == env.n_actions()
            && self.layout.n_bwd == env.n_backward_actions()
    }

    pub fn log_z(&self) -> f64 {
        self.params[self.layout.log_z()]
    }

    pub fn set_log_z(&mut self, v: f64) {
        let i = self.layout.log_z();
        self.params[i] = v;
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn trunk(&self, env: &Env, state: &FidState) -> Activations {
        let l = self.layout;
        let h = l.hidden;
        let p = &self.params;
        let active = env.active_features(state);
        let mut pre1 = p[l.b1()..l.b1() + h].to_vec();
        for &i in &active {
            let col = &p[l.w1() + i * h..l.w1() + (i + 1) * h];
            for (a, w) in pre1.iter_mut().zip(col) {
                *a += w;
            }
        }
        let h1: Vec<f64> = pre1.iter().map(|&v| leaky(v)).collect();
        let w2 = &p[l.w2()..l.b2()];
        let pre2: Vec<f64> = (0..h)
            .map(|j| p[l.b2() + j] + w2[j * h..(j + 1) * h].iter().zip(&h1).map(|(w, x)| w * x).sum::<f64>())
            .collect();
        let h2: Vec<f64> = pre2.iter().map(|&v| leaky(v)).collect();
        Activations { active, pre1, h1, pre2, h2, logits_f: Vec::new(), logits_b: Vec::new() }
    }

    fn head(&self, w: usize, b: usize, n: usize, h2: &[f64]) -> Vec<f64> {
        let h = self.layout.hidden;
        let p = &self.params;
        (0..n)
            .map(|a| p[b + a] + p[w + a * h..w + (a + 1) * h].iter().zip(h2).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }

    fn forward_full(&self, env: &Env, state: &FidState) -> Activations {
        let l = self.layout;
        let mut act = self.trunk(env, state);
        act.logits_f = self.head(l.wf(), l.bf(), l.n_fwd, &act.h2);
        act.logits_b = self.head(l.wb(), l.bb(), l.n_bwd, &act.h2);
        act
    }

    pub fn forward_logits(&self, env: &Env, state: &FidState) -> Vec<f64> {
        let l = self.layout;
        let act = self.trunk(env, state);
        self.head(l.wf(), l.bf(), l.n_fwd, &act.h2)
    }

    /// Masked forward log-probabilities; illegal actions get `-inf`.
    pub fn forward_logprobs(&self, env: &Env, state: &FidState) -> Vec<f64> {
        masked_log_softmax(&self.forward_logits(env, state), &env.allowed_actions(state))
    }

    /// Masked backward log-probabilities over parent actions of a non-initial, non-terminal state.
    pub fn backward_logprobs(&self, env: &Env, state: &FidState) -> Vec<f64> {
        let act = self.forward_full(env, state);
        masked_log_softmax(&act.logits_b, &env.backward_mask(state))
    }

    pub fn sample_trajectory<R: Rng + ?Sized>(&self, env: &Env, mode: SampleMode, rng: &mut R) -> Trajectory {
        let mut state = env.reset();
        let mut states = vec![state.clone()];
        let mut actions = Vec::new();
        let mut log_pf = 0.0;
        while !state.terminal {
            let mask = env.allowed_actions(&state);
            let logp = masked_log_softmax(&self.forward_logits(env, &state), &mask);
            let legal: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
            let idx = match mode {
                SampleMode::Greedy => *legal
                    .iter()
                    .max_by(|a, b| logp[**a].total_cmp(&logp[**b]).then(b.cmp(a)))
                    .expect("a legal action"),
                SampleMode::Mixture(eps) => {
                    if eps > 0.0 && rng.random::<f64>() < eps {
                        legal[rng.random_range(0..legal.len())]
                    } else {
                        sample_categorical(&legal, &logp, rng)
                    }
                }
            };
            log_pf += logp[idx];
            let action = env.action_at(idx);
            state = env.step(&state, action).expect("sampled from the mask");
            states.push(state.clone());
            actions.push(action);
        }
        let mut traj = Trajectory { states, actions, log_pf, log_pb: 0.0 };
        traj.log_pb = self.trajectory_log_pb(env, &traj);
        traj
    }

    fn trajectory_log_pb(&self, env: &Env, traj: &Trajectory) -> f64 {
        let t_len = traj.actions.len();
        (1..t_len)
            .map(|t| {
                let lp = self.backward_logprobs(env, &traj.states[t]);
                lp[env.action_index(traj.actions[t - 1])]
            })
            .sum()
    }

    /// Trajectory-balance residual, loss, and gradient (accumulated into `grad`, scaled by `weight`).
    pub fn tb_loss_grad(
        &self,
        env: &Env,
        traj: &Trajectory,
        log_reward: f64,
        grad: &mut [f64],
        weight: f64,
    ) -> f64 {
        let l = self.layout;
        let h = l.hidden;
        let t_len = traj.actions.len();
        let acts: Vec<Activations> = traj.states[..t_len].iter().map(|s| self.forward_full(env, s)).collect();
        let mut fwd_probs = Vec::with_capacity(t_len);
        let mut bwd_probs = Vec::with_capacity(t_len);
        let mut sum_pf = 0.0;
        let mut sum_pb = 0.0;
        for (t, act) in acts.iter().enumerate() {
            let lp = masked_log_softmax(&act.logits_f, &env.allowed_actions(&traj.states[t]));
            sum_pf += lp[env.action_index(traj.actions[t])];
            fwd_probs.push(lp);
            if t >= 1 {
                let lb = masked_log_softmax(&act.logits_b, &env.backward_mask(&traj.states[t]));
                sum_pb += lb[env.action_index(traj.actions[t - 1])];
                bwd_probs.push(Some(lb));
            } else {
                bwd_probs.push(None);
            }
        }
        let delta = self.log_z() + sum_pf - log_reward - sum_pb;
        let loss = delta * delta;
        let g = 2.0 * delta * weight;
        grad[l.log_z()] += g;

        let mut dlogits_f = vec![0.0; l.n_fwd];
        let mut dlogits_b = vec![0.0; l.n_bwd];
        let mut dh2 = vec![0.0; h];
        let mut dpre2 = vec![0.0; h];
        let mut dh1 = vec![0.0; h];
        for (t, act) in acts.iter().enumerate() {
            let a_f = env.action_index(traj.actions[t]);
            for (i, d) in dlogits_f.iter_mut().enumerate() {
                let p = fwd_probs[t][i].exp();
                *d = g * ((i == a_f) as u8 as f64 - p);
            }
            let has_b = bwd_probs[t].is_some();
            if let Some(lb) = &bwd_probs[t] {
                let a_b = env.action_index(traj.actions[t - 1]);
                for (i, d) in dlogits_b.iter_mut().enumerate() {
                    let q = lb[i].exp();
                    *d = -g * ((i == a_b) as u8 as f64 - q);
                }
            }
            dh2.fill(0.0);
            for (a, &d) in dlogits_f.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grad[l.bf() + a] += d;
                let row = l.wf() + a * h;
                for j in 0..h {
                    grad[row + j] += d * act.h2[j];
                    dh2[j] += d * self.params[row + j];
                }
            }
            if has_b {
                for (a, &d) in dlogits_b.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    grad[l.bb() + a] += d;
                    let row = l.wb() + a * h;
                    for j in 0..h {
                        grad[row + j] += d * act.h2[j];
                        dh2[j] += d * self.params[row + j];
                    }
                }
            }
            for j in 0..h {
                dpre2[j] = dh2[j] * leaky_grad(act.pre2[j]);
            }
            dh1.fill(0.0);
            for j in 0..h {
                let d = dpre2[j];
                if d == 0.0 {
                    continue;
                }
                grad[l.b2() + j] += d;
                let row = l.w2() + j * h;
                for k in 0..h {
                    grad[row + k] += d * act.h1[k];
                    dh1[k] += d * self.params[row + k];
                }
            }
            for k in 0..h {
                let d = dh1[k] * leaky_grad(act.pre1[k]);
                grad[l.b1() + k] += d;
                for &i in &act.active {
                    grad[l.w1() + i * h + k] += d;
                }
            }
        }
        loss
    }

    /// Trajectory-balance loss and its full gradient for a single trajectory.
    pub fn tb_loss(&self, env: &Env, traj: &Trajectory, reward: f64) -> Result<(f64, Vec<f64>)> {
        if !(reward > 0.0) {
            return Err(Error::NonPositiveReward(reward));
        }
        let mut grad = vec![0.0; self.params.len()];
        let loss = self.tb_loss_grad(env, traj, reward.ln(), &mut grad, 1.0);
        Ok((loss, grad))
    }

    /// Minibatch trajectory-balance training on freshly sampled trajectories,
    /// given the log reward of each terminal pair. Returns the mean loss of each minibatch.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        env: &Env,
        mut log_reward: impl FnMut(&Object, u8) -> Result<f64>,
        config: &TrainConfig,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        config.validate()?;
        self.adam.lr = config.lr;
        self.lr_log_z = config.lr_log_z;
        let steps = config.trajectories.div_ceil(config.batch_size);
        let mut trace = Vec::with_capacity(steps);
        let mut grad = vec![0.0; self.params.len()];
        let log_z_index = self.layout.log_z();
        let z_scale = self.lr_log_z / config.lr;
        for step in 0..steps {
            grad.fill(0.0);
            let mut total = 0.0;
            let weight = 1.0 / config.batch_size as f64;
            for _ in 0..config.batch_size {
                let traj = self.sample_trajectory(env, SampleMode::Mixture(config.epsilon), rng);
                let (x, m) = env.terminal_pair(traj.terminal());
                let log_r = log_reward(&x, m)?;
                if log_r.is_nan() || log_r == f64::NEG_INFINITY {
                    return Err(Error::NonPositiveReward(log_r.exp()));
                }
                total += self.tb_loss_grad(env, &traj, log_r, &mut grad, weight);
            }
            let loss = total / config.batch_size as f64;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { step, loss });
            }
            self.adam
                .step_scaled(&mut self.params, &grad, |i| if i == log_z_index { z_scale } else { 1.0 });
            trace.push(loss);
        }
        Ok(trace)
    }

    /// Exact on-policy terminal distribution by forward propagation over the state DAG.
    pub fn terminal_distribution(&self, env: &Env, max_states: usize) -> Result<BTreeMap<(Object, u8), f64>> {
        let mut out = BTreeMap::new();
        let mut layer: BTreeMap<FidState, f64> = BTreeMap::new();
        layer.insert(env.reset(), 1.0);
        let mut visited = 0usize;
        while !layer.is_empty() {
            visited += layer.len();
            if visited > max_states {
                return Err(Error::TooLarge { size: visited as u128, cap: max_states as u128 });
            }
            let mut next: BTreeMap<FidState, f64> = BTreeMap::new();
            for (state, mass) in layer {
                let logp = self.forward_logprobs(env, &state);
                for (i, lp) in logp.iter().enumerate() {
                    if *lp == f64::NEG_INFINITY {
                        continue;
                    }
                    let child = env.step(&state, env.action_at(i))?;
                    let m = mass * lp.exp();
                    if child.terminal {
                        *out.entry(env.terminal_pair(&child)).or_insert(0.0) += m;
                    } else {
                        *next.entry(child).or_insert(0.0) += m;
                    }
                }
            }
            layer = next;
        }
        Ok(out)
    }
}

fn sample_categorical<R: Rng + ?Sized>(legal: &[usize], logp: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &i in legal {
        acc += logp[i].exp();
        if u < acc {
            return i;
        }
    }
    *legal.last().expect("a legal action")
}

/// Samples `n` terminal pairs from the policy.
pub fn sample_terminals<R: Rng + ?Sized>(
    net: &PolicyNet,
    env: &Env,
    n: usize,
    mode: SampleMode,
    rng: &mut R,
) -> Vec<(Object, u8)> {
    (0..n)
        .map(|_| {
            let mut state = env.reset();
            while !state.terminal {
                let mask = env.allowed_actions(&state);
                let logp = masked_log_softmax(&net.forward_logits(env, &state), &mask);
                let legal: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
                let idx = match mode {
                    SampleMode::Mixture(eps) if eps > 0.0 && rng.random::<f64>() < eps => {
                        legal[rng.random_range(0..legal.len())]
                    }
                    SampleMode::Greedy => *legal
                        .iter()
                        .max_by(|a, b| logp[**a].total_cmp(&logp[**b]).then(b.cmp(a)))
                        .expect("a legal action"),
                    _ => sample_categorical(&legal, &logp, rng),
                };
                state = env.step(&state, env.action_at(idx)).expect("sampled from the mask");
            }
            env.terminal_pair(&state)
        })
        .collect()
}

/// Exact terminal distribution of the uniform-over-legal-actions policy.
pub fn uniform_policy_distribution(env: &Env) -> Result<BTreeMap<(Object, u8), f64>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![(env.reset(), 1.0)];
    while let Some((state, mass)) = stack.pop() {
        let mask = env.allowed_actions(&state);
        let legal: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        let p = mass / legal.len() as f64;
        for i in legal {
            let child = env.step(&state, env.action_at(i))?;
            if child.terminal {
                *out.entry(env.terminal_pair(&child)).or_insert(0.0) += p;
            } else {
                stack.push((child, p));
            }
        }
    }
    Ok(out)
}
