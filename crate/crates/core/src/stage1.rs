//! Trustworthy-client selection with synchronous A2C.
//!
//! A policy with one sigmoid output per client proposes an inclusion mask;
//! the environment fuses the included models uniformly, scores the result on
//! the server holdout and rewards accuracy gained over the all-client fusion
//! plus a bonus for keeping clients. Several workers roll out segments from
//! a shared central actor/critic, update privately, and the central node
//! averages their parameters after every round.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{evaluate, uniform_weights, weighted_aggregate, Dataset};
use crate::error::{ensure_len, Error, Result};
use crate::nn::{
    self, backward, forward_trace, init_net, sgd_step_in_place, Gradients, ModelParams, NetSpec,
    OutputHead,
};
use crate::seed::{self, derive_seed};

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionState {
    n: usize,
    obs: Vec<f64>,
}

impl SelectionState {
    pub fn as_slice(&self) -> &[f64] {
        &self.obs
    }

    pub fn n_clients(&self) -> usize {
        self.n
    }
}

/// Observation layout: `[accs (N), fracs (N), prev_mask (N), global_acc]`.
pub fn encode_selection_state(
    accs: &[f64],
    fracs: &[f64],
    prev_mask: &[bool],
    global_acc: f64,
) -> Result<SelectionState> {
    let n = accs.len();
    if n == 0 {
        return Err(Error::Empty("selection state"));
    }
    ensure_len("sample fractions", n, fracs.len())?;
    ensure_len("previous mask", n, prev_mask.len())?;
    let in_unit = |v: &f64| (0.0..=1.0).contains(v);
    if !accs.iter().all(in_unit) || !fracs.iter().all(in_unit) || !in_unit(&global_acc) {
        return Err(Error::InvalidArgument(
            "accuracies and fractions must lie in [0, 1]".into(),
        ));
    }
    let mut obs = Vec::with_capacity(3 * n + 1);
    obs.extend_from_slice(accs);
    obs.extend_from_slice(fracs);
    obs.extend(prev_mask.iter().map(|&m| if m { 1.0 } else { 0.0 }));
    obs.push(global_acc);
    Ok(SelectionState { n, obs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskAction {
    pub mask: Vec<bool>,
    pub log_prob: f64,
}

impl MaskAction {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

fn log_sigmoid(z: f64) -> f64 {
    // -softplus(-z)
    -((-z).max(0.0) + (-z.abs()).exp().ln_1p())
}

/// `sum_i log Bernoulli(mask_i | sigmoid(logit_i))`, computed from logits
/// for numerical stability.
pub fn mask_log_prob_from_logits(logits: &[f64], mask: &[bool]) -> f64 {
    logits
        .iter()
        .zip(mask)
        .map(|(&z, &m)| if m { log_sigmoid(z) } else { log_sigmoid(-z) })
        .sum()
}

/// `sum_i log Bernoulli(mask_i | p_i)` from probabilities.
pub fn mask_log_prob(probs: &[f64], mask: &[bool]) -> f64 {
    probs
        .iter()
        .zip(mask)
        .map(|(&p, &m)| if m { p.ln() } else { (1.0 - p).ln() })
        .sum()
}

pub fn actor_spec(n_clients: usize, hidden: &[usize]) -> Result<NetSpec> {
    NetSpec::mlp(3 * n_clients + 1, hidden, n_clients, OutputHead::Sigmoid)
}

pub fn critic_spec(n_clients: usize, hidden: &[usize]) -> Result<NetSpec> {
    NetSpec::mlp(3 * n_clients + 1, hidden, 1, OutputHead::Linear)
}

fn check_actor(actor: &ModelParams, state: &SelectionState) -> Result<()> {
    ensure_len("selection actor input", actor.spec.input_dim(), state.obs.len())?;
    ensure_len("selection actor output", state.n, actor.spec.output_dim())
}

fn actor_logits(actor: &ModelParams, state: &SelectionState) -> Result<Vec<f64>> {
    check_actor(actor, state)?;
    let z = nn::logits(actor, &state.obs)?;
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("selection actor logits".into()));
    }
    Ok(z)
}

/// Inclusion probabilities `sigmoid(actor(state))`.
pub fn mask_probabilities(actor: &ModelParams, state: &SelectionState) -> Result<Vec<f64>> {
    Ok(actor_logits(actor, state)?.into_iter().map(nn::sigmoid).collect())
}

fn force_nonempty(mask: &mut [bool], probs: &[f64]) {
    if !mask.iter().any(|&m| m) {
        mask[nn::argmax(probs)] = true;
    }
}

pub fn sample_mask_with(actor: &ModelParams, state: &SelectionState, rng: &mut impl Rng) -> Result<MaskAction> {
    let logits = actor_logits(actor, state)?;
    let probs: Vec<f64> = logits.iter().map(|&z| nn::sigmoid(z)).collect();
    let mut mask: Vec<bool> = probs.iter().map(|&p| rng.random::<f64>() < p).collect();
    force_nonempty(&mut mask, &probs);
    let log_prob = mask_log_prob_from_logits(&logits, &mask);
    Ok(MaskAction { mask, log_prob })
}

/// Independent Bernoulli draw per client; an all-zero draw is replaced by
/// the one-hot mask at the most probable client.
pub fn sample_mask(actor: &ModelParams, state: &SelectionState, seed: u64) -> Result<MaskAction> {
    sample_mask_with(actor, state, &mut seed::rng(seed))
}

/// Deterministic mask `{i : p_i >= threshold}` with the same nonempty rule.
pub fn greedy_mask(probs: &[f64], threshold: f64) -> Vec<bool> {
    let mut mask: Vec<bool> = probs.iter().map(|&p| p >= threshold).collect();
    force_nonempty(&mut mask, probs);
    mask
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardCoeffs {
    pub acc_coeff: f64,
    pub count_coeff: f64,
}

impl Default for RewardCoeffs {
    fn default() -> Self {
        Self {
            acc_coeff: 100.0,
            count_coeff: 10.0,
        }
    }
}

/// `acc_coeff * (acc_mask - acc_all) + count_coeff * k / n`.
pub fn selection_reward(acc_mask: f64, acc_all: f64, k: usize, n: usize, coeffs: &RewardCoeffs) -> Result<f64> {
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("selected count {k} outside 1..={n}")));
    }
    Ok(coeffs.acc_coeff * (acc_mask - acc_all) + coeffs.count_coeff * (k as f64 / n as f64))
}

/// `sum_{i<k} gamma^i r_{t+i} + gamma^k * boot - V(s_t)` with `k = rewards.len()`.
pub fn kstep_advantage(rewards: &[f64], boot_value: f64, state_value: f64, gamma: f64) -> Result<f64> {
    if rewards.is_empty() {
        return Err(Error::Empty("reward window"));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!("gamma {gamma} outside [0, 1]")));
    }
    let mut discount = 1.0;
    let mut ret = 0.0;
    for r in rewards {
        ret += discount * r;
        discount *= gamma;
    }
    Ok(ret + discount * boot_value - state_value)
}

/// The selection environment over one fixed set of uploaded models.
///
/// Fused accuracies are cached per mask, so repeated proposals cost a
/// hash lookup instead of a fusion and a holdout pass.
pub struct SelectionEnv<'a> {
    models: &'a [ModelParams],
    holdout: &'a Dataset,
    accs: Vec<f64>,
    fracs: Vec<f64>,
    acc_all: f64,
    coeffs: RewardCoeffs,
    episode_len: usize,
    cache: Mutex<HashMap<Vec<bool>, f64>>,
}

impl<'a> SelectionEnv<'a> {
    pub fn new(
        models: &'a [ModelParams],
        counts: &[usize],
        holdout: &'a Dataset,
        coeffs: RewardCoeffs,
        episode_len: usize,
    ) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::Empty("client model list"));
        }
        ensure_len("client sample counts", models.len(), counts.len())?;
        if holdout.is_empty() {
            return Err(Error::Empty("server holdout"));
        }
        if episode_len == 0 {
            return Err(Error::InvalidConfig("episode length must be positive".into()));
        }
        let accs = models
            .iter()
            .map(|m| evaluate(m, holdout))
            .collect::<Result<Vec<_>>>()?;
        let fracs = crate::env::proportional_weights(counts)?;
        let env = Self {
            models,
            holdout,
            accs,
            fracs,
            acc_all: 0.0,
            coeffs,
            episode_len,
            cache: Mutex::new(HashMap::new()),
        };
        let acc_all = env.fused_accuracy(&vec![true; models.len()])?;
        Ok(Self { acc_all, ..env })
    }

    pub fn n_clients(&self) -> usize {
        self.models.len()
    }

    pub fn client_accuracies(&self) -> &[f64] {
        &self.accs
    }

    pub fn acc_all(&self) -> f64 {
        self.acc_all
    }

    /// Holdout accuracy of the uniform fusion of the masked models.
    pub fn fused_accuracy(&self, mask: &[bool]) -> Result<f64> {
        ensure_len("mask", self.models.len(), mask.len())?;
        if let Some(&acc) = self.cache.lock().expect("cache lock").get(mask) {
            return Ok(acc);
        }
        let chosen: Vec<&ModelParams> = self
            .models
            .iter()
            .zip(mask)
            .filter_map(|(m, &keep)| keep.then_some(m))
            .collect();
        if chosen.is_empty() {
            return Err(Error::InvalidArgument("empty mask".into()));
        }
        let fused = weighted_aggregate(&chosen, &uniform_weights(chosen.len()))?;
        let acc = evaluate(&fused, self.holdout)?;
        self.cache.lock().expect("cache lock").insert(mask.to_vec(), acc);
        Ok(acc)
    }

    pub fn initial_state(&self) -> SelectionState {
        encode_selection_state(&self.accs, &self.fracs, &vec![true; self.accs.len()], self.acc_all)
            .expect("environment statistics are in range")
    }

    /// Applies `mask` at step `t` of an episode; returns reward, next state
    /// and whether the episode ended.
    pub fn step(&self, mask: &[bool], t: usize) -> Result<(f64, SelectionState, bool)> {
        let acc = self.fused_accuracy(mask)?;
        let k = mask.iter().filter(|&&m| m).count();
        let reward = selection_reward(acc, self.acc_all, k, self.models.len(), &self.coeffs)?;
        let next = encode_selection_state(&self.accs, &self.fracs, mask, acc)?;
        Ok((reward, next, t + 1 >= self.episode_len))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentStep {
    pub state: SelectionState,
    pub action: MaskAction,
    pub reward: f64,
    /// The episode terminated after this step.
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub steps: Vec<SegmentStep>,
    /// State reached after the last step, used for bootstrapping.
    pub final_state: SelectionState,
}

/// Episode progress a worker carries between segments.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeCursor {
    pub state: SelectionState,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct A2CWorker {
    pub actor: ModelParams,
    pub critic: ModelParams,
    pub seed: u64,
}

fn value(critic: &ModelParams, state: &SelectionState) -> Result<f64> {
    Ok(nn::logits(critic, &state.obs)?[0])
}

/// k-step advantage targets for every step of a segment, using `critic`
/// for the state values and bootstraps. Returns `(targets, advantages)`
/// where `advantage = target - V(s_t)`.
pub fn segment_targets(
    critic: &ModelParams,
    segment: &Segment,
    gamma: f64,
    k: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if segment.steps.is_empty() {
        return Err(Error::Empty("segment"));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k-step horizon must be positive".into()));
    }
    let values = segment
        .steps
        .iter()
        .map(|s| value(critic, &s.state))
        .collect::<Result<Vec<_>>>()?;
    let final_value = value(critic, &segment.final_state)?;
    let len = segment.steps.len();
    let mut targets = Vec::with_capacity(len);
    let mut advantages = Vec::with_capacity(len);
    for t in 0..len {
        let mut rewards = Vec::with_capacity(k);
        let mut terminal = false;
        let mut j = t;
        while j < len && rewards.len() < k {
            rewards.push(segment.steps[j].reward);
            terminal = segment.steps[j].done;
            j += 1;
            if terminal {
                break;
            }
        }
        let boot = if terminal {
            0.0
        } else if j < len {
            values[j]
        } else {
            final_value
        };
        let adv = kstep_advantage(&rewards, boot, values[t], gamma)?;
        advantages.push(adv);
        targets.push(adv + values[t]);
    }
    Ok((targets, advantages))
}

/// Policy-gradient surrogate `-mean_t A_t * log pi(a_t | s_t)` and its
/// gradient; advantages are constants.
pub fn actor_objective(
    actor: &ModelParams,
    steps: &[SegmentStep],
    advantages: &[f64],
) -> Result<(f64, Gradients)> {
    if steps.is_empty() {
        return Err(Error::Empty("segment"));
    }
    ensure_len("advantages", steps.len(), advantages.len())?;
    let scale = 1.0 / steps.len() as f64;
    let mut grads = Gradients::zeros_like(actor);
    let mut loss = 0.0;
    for (step, &adv) in steps.iter().zip(advantages) {
        check_actor(actor, &step.state)?;
        let trace = forward_trace(actor, &step.state.obs)?;
        let z = trace.raw_output();
        loss -= adv * mask_log_prob_from_logits(z, &step.action.mask) * scale;
        // d log pi / dz_i = m_i - p_i
        let dz: Vec<f64> = z
            .iter()
            .zip(&step.action.mask)
            .map(|(&zi, &m)| -adv * scale * ((if m { 1.0 } else { 0.0 }) - nn::sigmoid(zi)))
            .collect();
        backward(actor, &trace, &dz, &mut grads)?;
    }
    Ok((loss, grads))
}

/// Critic regression `mean_t (target_t - V(s_t))^2` with fixed targets.
pub fn critic_objective(
    critic: &ModelParams,
    states: &[&SelectionState],
    targets: &[f64],
) -> Result<(f64, Gradients)> {
    if states.is_empty() {
        return Err(Error::Empty("segment"));
    }
    ensure_len("critic targets", states.len(), targets.len())?;
    let scale = 1.0 / states.len() as f64;
    let mut grads = Gradients::zeros_like(critic);
    let mut loss = 0.0;
    for (s, &y) in states.iter().zip(targets) {
        let trace = forward_trace(critic, &s.obs)?;
        let residual = y - trace.raw_output()[0];
        loss += residual * residual * scale;
        backward(critic, &trace, &[-2.0 * residual * scale], &mut grads)?;
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateParams {
    pub gamma: f64,
    pub k: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub max_grad_norm: Option<f64>,
}

/// One A2C update from a rolled-out segment.
pub fn worker_update(worker: &A2CWorker, segment: &Segment, p: &UpdateParams) -> Result<A2CWorker> {
    let (targets, advantages) = segment_targets(&worker.critic, segment, p.gamma, p.k)?;
    let (actor_loss, mut actor_grads) = actor_objective(&worker.actor, &segment.steps, &advantages)?;
    let states: Vec<&SelectionState> = segment.steps.iter().map(|s| &s.state).collect();
    let (critic_loss, critic_grads) = critic_objective(&worker.critic, &states, &targets)?;
    if !actor_loss.is_finite() || !critic_loss.is_finite() {
        return Err(Error::NonFinite("A2C losses".into()));
    }
    if let Some(max) = p.max_grad_norm {
        actor_grads.clip_norm(max);
    }
    let mut next = worker.clone();
    sgd_step_in_place(&mut next.actor, &actor_grads, p.lr_actor)?;
    sgd_step_in_place(&mut next.critic, &critic_grads, p.lr_critic)?;
    Ok(next)
}

fn mean_params(models: &[&ModelParams]) -> Result<ModelParams> {
    let first = models.first().ok_or(Error::Empty("worker list"))?;
    if models.iter().any(|m| !m.same_layout(first)) {
        return Err(Error::LayoutMismatch);
    }
    let mut values = vec![0.0; first.len()];
    for m in models {
        values.iter_mut().zip(&m.values).for_each(|(a, v)| *a += v);
    }
    let n = models.len() as f64;
    values.iter_mut().for_each(|v| *v /= n);
    Ok(ModelParams {
        values,
        spec: first.spec.clone(),
    })
}

/// Coordinatewise mean of worker actors and of worker critics.
pub fn central_aggregate(workers: &[A2CWorker]) -> Result<(ModelParams, ModelParams)> {
    let actors: Vec<&ModelParams> = workers.iter().map(|w| &w.actor).collect();
    let critics: Vec<&ModelParams> = workers.iter().map(|w| &w.critic).collect();
    Ok((mean_params(&actors)?, mean_params(&critics)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage1Config {
    pub gamma: f64,
    pub k: usize,
    pub workers: usize,
    /// Steps per worker segment between central rounds.
    pub segment_len: usize,
    pub episode_len: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    /// Central rounds of training.
    pub rounds: usize,
    pub hidden: Vec<usize>,
    pub coeffs: RewardCoeffs,
    /// Norm cap on the actor gradient; guards against runaway logits once
    /// the policy saturates.
    pub max_grad_norm: Option<f64>,
    pub threshold: f64,
    /// Run workers on the rayon pool; results are identical either way.
    pub parallel: bool,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            k: 5,
            workers: 4,
            segment_len: 8,
            episode_len: 8,
            lr_actor: 1e-3,
            lr_critic: 1e-3,
            rounds: 200,
            hidden: vec![64, 64],
            coeffs: RewardCoeffs::default(),
            max_grad_norm: Some(100.0),
            threshold: 0.5,
            parallel: true,
        }
    }
}

impl Stage1Config {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("stage1: {m}")));
        if self.workers < 1 {
            return bad("need at least one worker");
        }
        if self.rounds < 1 {
            return bad("need at least one round");
        }
        if self.segment_len < 1 || self.episode_len < 1 || self.k < 1 {
            return bad("segment length, episode length and k must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma outside [0, 1]");
        }
        if !(self.lr_actor >= 0.0 && self.lr_critic >= 0.0) {
            return bad("learning rates must be nonnegative");
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad("threshold outside [0, 1]");
        }
        Ok(())
    }

    fn update_params(&self) -> UpdateParams {
        UpdateParams {
            gamma: self.gamma,
            k: self.k,
            lr_actor: self.lr_actor,
            lr_critic: self.lr_critic,
            max_grad_norm: self.max_grad_norm,
        }
    }
}

/// Per-iteration diagnostics of stage-1 training.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Stage1Trace {
    /// Mean per-step reward over all workers in each central round.
    pub rewards: Vec<f64>,
    /// Greedy mask of the central actor after each central round.
    pub greedy_masks: Vec<Vec<bool>>,
}

/// Central actor/critic plus each worker's episode progress.
#[derive(Debug, Clone)]
pub struct SelectionAgent {
    pub actor: ModelParams,
    pub critic: ModelParams,
    pub config: Stage1Config,
    cursors: Vec<Option<EpisodeCursor>>,
    seed: u64,
    iteration: u64,
}

impl SelectionAgent {
    pub fn new(n_clients: usize, config: Stage1Config, seed: u64) -> Result<Self> {
        config.validate()?;
        let actor = init_net(&actor_spec(n_clients, &config.hidden)?, derive_seed(&[seed, 1]))?;
        let critic = init_net(&critic_spec(n_clients, &config.hidden)?, derive_seed(&[seed, 2]))?;
        Ok(Self {
            actor,
            critic,
            cursors: vec![None; config.workers],
            config,
            seed,
            iteration: 0,
        })
    }

    pub fn n_clients(&self) -> usize {
        self.actor.spec.output_dim()
    }

    pub fn iterations(&self) -> u64 {
        self.iteration
    }

    fn rollout(
        &self,
        env: &SelectionEnv<'_>,
        cursor: Option<EpisodeCursor>,
        worker: &A2CWorker,
    ) -> Result<(Segment, Option<EpisodeCursor>)> {
        let mut rng = seed::rng(worker.seed);
        let mut cursor = cursor.unwrap_or_else(|| EpisodeCursor {
            state: env.initial_state(),
            t: 0,
        });
        let mut steps = Vec::with_capacity(self.config.segment_len);
        for _ in 0..self.config.segment_len {
            let action = sample_mask_with(&worker.actor, &cursor.state, &mut rng)?;
            let (reward, next, done) = env.step(&action.mask, cursor.t)?;
            steps.push(SegmentStep {
                state: cursor.state.clone(),
                action,
                reward,
                done,
            });
            cursor = if done {
                EpisodeCursor {
                    state: env.initial_state(),
                    t: 0,
                }
            } else {
                EpisodeCursor {
                    state: next,
                    t: cursor.t + 1,
                }
            };
        }
        // after a terminal last step the bootstrap is unused, so the reset
        // state stands in for the final state
        let final_state = cursor.state.clone();
        Ok((Segment { steps, final_state }, Some(cursor)))
    }

    /// Runs `rounds` central rounds of K-worker training against `env`.
    pub fn train(&mut self, env: &SelectionEnv<'_>, rounds: usize) -> Result<Stage1Trace> {
        if env.n_clients() != self.n_clients() {
            return Err(Error::DimensionMismatch {
                context: "selection environment clients",
                expected: self.n_clients(),
                actual: env.n_clients(),
            });
        }
        let update = self.config.update_params();
        let mut trace = Stage1Trace::default();
        for _ in 0..rounds {
            self.iteration += 1;
            let jobs: Vec<(usize, Option<EpisodeCursor>)> = self.cursors.iter().cloned().enumerate().collect();
            let run = |(w, cursor): (usize, Option<EpisodeCursor>)| -> Result<(A2CWorker, Option<EpisodeCursor>, f64)> {
                let worker = A2CWorker {
                    actor: self.actor.clone(),
                    critic: self.critic.clone(),
                    seed: derive_seed(&[self.seed, self.iteration, w as u64]),
                };
                let (segment, cursor) = self.rollout(env, cursor, &worker)?;
                let mean_reward =
                    segment.steps.iter().map(|s| s.reward).sum::<f64>() / segment.steps.len() as f64;
                Ok((worker_update(&worker, &segment, &update)?, cursor, mean_reward))
            };
            let results: Vec<_> = if self.config.parallel {
                jobs.into_par_iter().map(run).collect::<Result<_>>()?
            } else {
                jobs.into_iter().map(run).collect::<Result<_>>()?
            };
            let workers: Vec<A2CWorker> = results.iter().map(|(w, _, _)| w.clone()).collect();
            let (actor, critic) = central_aggregate(&workers)?;
            self.actor = actor;
            self.critic = critic;
            self.cursors = results.iter().map(|(_, c, _)| c.clone()).collect();
            trace
                .rewards
                .push(results.iter().map(|(_, _, r)| r).sum::<f64>() / results.len() as f64);
            trace.greedy_masks.push(self.greedy(env)?);
        }
        Ok(trace)
    }

    pub fn probabilities(&self, env: &SelectionEnv<'_>) -> Result<Vec<f64>> {
        mask_probabilities(&self.actor, &env.initial_state())
    }

    /// Greedy trust mask from the initial state of `env`.
    pub fn greedy(&self, env: &SelectionEnv<'_>) -> Result<Vec<bool>> {
        Ok(greedy_mask(&self.probabilities(env)?, self.config.threshold))
    }

    /// Drops episode progress, e.g. when the uploaded models change.
    pub fn reset_episodes(&mut self) {
        self.cursors.iter_mut().for_each(|c| *c = None);
    }
}

#[derive(Debug, Clone)]
pub struct SelectionOutcome {
    pub mask: Vec<bool>,
    pub probabilities: Vec<f64>,
    pub agent: SelectionAgent,
    pub trace: Stage1Trace,
}

/// Trains a fresh selection agent on the uploaded models and returns its
/// greedy trust mask.
pub fn select_trustworthy(
    client_models: &[ModelParams],
    counts: &[usize],
    holdout: &Dataset,
    config: &Stage1Config,
    seed: u64,
) -> Result<SelectionOutcome> {
    if client_models.len() < 2 {
        return Err(Error::InvalidArgument("selection needs at least two clients".into()));
    }
    let env = SelectionEnv::new(client_models, counts, holdout, config.coeffs, config.episode_len)?;
    let mut agent = SelectionAgent::new(client_models.len(), config.clone(), seed)?;
    let trace = agent.train(&env, config.rounds)?;
    let probabilities = agent.probabilities(&env)?;
    Ok(SelectionOutcome {
        mask: greedy_mask(&probabilities, config.threshold),
        probabilities,
        agent,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy_state(n: usize) -> SelectionState {
        let accs: Vec<f64> = (0..n).map(|i| 0.2 + 0.1 * i as f64).collect();
        encode_selection_state(&accs, &vec![1.0 / n as f64; n], &vec![true; n], 0.6).unwrap()
    }

    /// Actor whose only nonzero parameters are the output biases.
    fn bias_actor(n: usize, bias: f64) -> ModelParams {
        let spec = actor_spec(n, &[4]).unwrap();
        let mut p = ModelParams::zeros(spec).unwrap();
        let len = p.len();
        p.values[len - n..].iter_mut().for_each(|v| *v = bias);
        p
    }

    #[test]
    fn state_layout() {
        let s = encode_selection_state(&[0.8, 0.1], &[0.5, 0.5], &[true, false], 0.7).unwrap();
        assert_eq!(s.as_slice(), &[0.8, 0.1, 0.5, 0.5, 1.0, 0.0, 0.7]);
        assert_eq!(toy_state(3).as_slice().len(), 10);
        assert!(encode_selection_state(&[0.8], &[0.5, 0.5], &[true], 0.7).is_err());
        assert!(encode_selection_state(&[1.8], &[1.0], &[true], 0.7).is_err());
    }

    #[test]
    fn saturated_policy_includes_everyone() {
        let a = sample_mask(&bias_actor(3, 50.0), &toy_state(3), 1).unwrap();
        assert_eq!(a.mask, vec![true; 3]);
        assert!(a.log_prob.abs() < 1e-12);
    }

    #[test]
    fn coin_flip_log_prob() {
        for seed in 0..20 {
            let a = sample_mask(&bias_actor(3, 0.0), &toy_state(3), seed).unwrap();
            assert!((a.log_prob - 3.0 * 0.5f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn near_zero_policy_falls_back_to_argmax() {
        let mut actor = bias_actor(3, -40.0);
        let len = actor.len();
        actor.values[len - 2] = -35.0; // client 2 is the most probable
        let a = sample_mask(&actor, &toy_state(3), 4).unwrap();
        assert_eq!(a.mask, vec![false, true, false]);
        let probs = mask_probabilities(&actor, &toy_state(3)).unwrap();
        assert!((a.log_prob - mask_log_prob(&probs, &a.mask)).abs() < 1e-9);
    }

    #[test]
    fn greedy_threshold_rule() {
        assert_eq!(greedy_mask(&[0.9, 0.2, 0.6], 0.5), vec![true, false, true]);
        assert_eq!(greedy_mask(&[0.1, 0.3, 0.2], 0.5), vec![false, true, false]);
    }

    #[test]
    fn reward_examples() {
        let c = RewardCoeffs::default();
        assert!((selection_reward(0.7, 0.7, 5, 5, &c).unwrap() - 10.0).abs() < 1e-12);
        assert!((selection_reward(0.75, 0.70, 4, 5, &c).unwrap() - 13.0).abs() < 1e-9);
        assert!(selection_reward(0.5, 0.7, 1, 5, &c).unwrap() < 0.0);
        assert!(selection_reward(0.5, 0.7, 0, 5, &c).is_err());
        assert!(selection_reward(0.5, 0.7, 6, 5, &c).is_err());
    }

    #[test]
    fn advantage_examples() {
        assert!((kstep_advantage(&[1.0, 1.0], 1.0, 0.5, 0.9).unwrap() - 2.21).abs() < 1e-12);
        assert_eq!(kstep_advantage(&[3.0], 7.0, 1.0, 0.0).unwrap(), 2.0);
        assert!((kstep_advantage(&[2.0], 4.0, 1.0, 0.5).unwrap() - (2.0 + 0.5 * 4.0 - 1.0)).abs() < 1e-15);
        assert!(kstep_advantage(&[], 0.0, 0.0, 0.9).is_err());
    }

    #[test]
    fn central_mean_examples() {
        let spec = NetSpec::new(vec![1, 1], OutputHead::Linear).unwrap();
        let w = |a: f64| A2CWorker {
            actor: ModelParams::from_values(spec.clone(), vec![a, 0.0]).unwrap(),
            critic: ModelParams::from_values(spec.clone(), vec![2.0 * a, 1.0]).unwrap(),
            seed: 0,
        };
        let (actor, critic) = central_aggregate(&[w(1.0), w(3.0)]).unwrap();
        assert_eq!(actor.values, vec![2.0, 0.0]);
        assert_eq!(critic.values, vec![4.0, 1.0]);
        let (single, _) = central_aggregate(&[w(5.0)]).unwrap();
        assert_eq!(single.values, vec![5.0, 0.0]);
        assert!(central_aggregate(&[]).is_err());
    }

    fn toy_segment(actor: &ModelParams, rewards: &[f64]) -> Segment {
        let mut rng = seed::rng(3);
        let steps = rewards
            .iter()
            .enumerate()
            .map(|(t, &r)| {
                let state = encode_selection_state(&[0.8, 0.2], &[0.4, 0.6], &[t % 2 == 0, true], 0.5).unwrap();
                SegmentStep {
                    action: sample_mask_with(actor, &state, &mut rng).unwrap(),
                    state,
                    reward: r,
                    done: t + 1 == rewards.len(),
                }
            })
            .collect();
        Segment {
            steps,
            final_state: toy_state(2),
        }
    }

    #[test]
    fn zero_advantage_leaves_actor_unchanged() {
        let actor = init_net(&actor_spec(2, &[6]).unwrap(), 1).unwrap();
        let seg = toy_segment(&actor, &[1.0, 2.0, 3.0]);
        let (_, g) = actor_objective(&actor, &seg.steps, &[0.0; 3]).unwrap();
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn exact_critic_leaves_critic_unchanged() {
        let critic = init_net(&critic_spec(2, &[6]).unwrap(), 2).unwrap();
        let seg = toy_segment(&init_net(&actor_spec(2, &[6]).unwrap(), 1).unwrap(), &[1.0, 2.0]);
        let states: Vec<&SelectionState> = seg.steps.iter().map(|s| &s.state).collect();
        let targets: Vec<f64> = states.iter().map(|s| value(&critic, s).unwrap()).collect();
        let (loss, g) = critic_objective(&critic, &states, &targets).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn segment_targets_respect_terminals() {
        let spec = critic_spec(2, &[3]).unwrap();
        // constant critic V = 1
        let mut critic = ModelParams::zeros(spec).unwrap();
        let len = critic.len();
        critic.values[len - 1] = 1.0;
        let actor = init_net(&actor_spec(2, &[6]).unwrap(), 1).unwrap();
        let seg = toy_segment(&actor, &[1.0, 2.0, 4.0]);
        let (targets, adv) = segment_targets(&critic, &seg, 0.5, 2).unwrap();
        // t=0: 1 + 0.5*2 + 0.25*V(s2) = 2.25
        assert!((targets[0] - 2.25).abs() < 1e-12);
        // t=1: 2 + 0.5*4, terminal after step 2
        assert!((targets[1] - 4.0).abs() < 1e-12);
        assert!((targets[2] - 4.0).abs() < 1e-12);
        assert!((adv[0] - 1.25).abs() < 1e-12);
    }

    #[test]
    fn worker_update_moves_both_networks() {
        let worker = A2CWorker {
            actor: init_net(&actor_spec(2, &[6]).unwrap(), 1).unwrap(),
            critic: init_net(&critic_spec(2, &[6]).unwrap(), 2).unwrap(),
            seed: 0,
        };
        let seg = toy_segment(&worker.actor, &[5.0, -1.0, 2.0]);
        let p = Stage1Config::default().update_params();
        let next = worker_update(&worker, &seg, &p).unwrap();
        assert_ne!(next.actor, worker.actor);
        assert_ne!(next.critic, worker.critic);
    }

    fn assert_fd(values: &[f64], analytic: &[f64], f: impl Fn(&[f64]) -> f64) {
        let eps = 1e-5;
        let mut v = values.to_vec();
        for i in 0..v.len() {
            let orig = v[i];
            v[i] = orig + eps;
            let up = f(&v);
            v[i] = orig - eps;
            let down = f(&v);
            v[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
            assert!(
                (analytic[i] - numeric).abs() / denom < 1e-5,
                "param {i}: analytic {} numeric {numeric}",
                analytic[i]
            );
        }
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let actor = init_net(&actor_spec(2, &[5]).unwrap(), 9).unwrap();
        let seg = toy_segment(&actor, &[1.0, -2.0, 0.5]);
        let adv = [1.5, -0.7, 2.0];
        let (_, g) = actor_objective(&actor, &seg.steps, &adv).unwrap();
        assert_fd(&actor.values, &g.values, |v| {
            let p = ModelParams::from_values(actor.spec.clone(), v.to_vec()).unwrap();
            actor_objective(&p, &seg.steps, &adv).unwrap().0
        });
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let critic = init_net(&critic_spec(2, &[5]).unwrap(), 4).unwrap();
        let seg = toy_segment(&init_net(&actor_spec(2, &[5]).unwrap(), 9).unwrap(), &[1.0, 2.0, 3.0]);
        let states: Vec<&SelectionState> = seg.steps.iter().map(|s| &s.state).collect();
        let targets = [3.0, -1.0, 0.25];
        let (_, g) = critic_objective(&critic, &states, &targets).unwrap();
        assert_fd(&critic.values, &g.values, |v| {
            let p = ModelParams::from_values(critic.spec.clone(), v.to_vec()).unwrap();
            critic_objective(&p, &states, &targets).unwrap().0
        });
    }

    #[test]
    fn config_validation() {
        let c = Stage1Config {
            workers: 0,
            ..Stage1Config::default()
        };
        assert!(c.validate().is_err());
        let c = Stage1Config {
            rounds: 0,
            ..Stage1Config::default()
        };
        assert!(c.validate().is_err());
    }

    proptest! {
        #[test]
        fn one_step_advantage_is_td_residual(r in -50.0f64..50.0, boot in -50.0f64..50.0, v in -50.0f64..50.0, g in 0.0f64..=1.0) {
            let a = kstep_advantage(&[r], boot, v, g).unwrap();
            prop_assert!((a - (r + g * boot - v)).abs() < 1e-9);
        }

        #[test]
        fn reward_increases_with_accuracy(a in 0.0f64..0.99, d in 0.001f64..0.01, all in 0.0f64..1.0, k in 1usize..6) {
            let c = RewardCoeffs::default();
            prop_assert!(selection_reward(a + d, all, k, 5, &c).unwrap() > selection_reward(a, all, k, 5, &c).unwrap());
        }

        #[test]
        fn sampled_masks_are_nonempty_with_exact_log_prob(seed in any::<u64>(), scale in 0.1f64..20.0) {
            let mut actor = init_net(&actor_spec(4, &[8]).unwrap(), seed).unwrap();
            actor.values.iter_mut().for_each(|v| *v *= scale);
            let state = toy_state(4);
            let a = sample_mask(&actor, &state, seed ^ 0xABCD).unwrap();
            prop_assert!(a.count() >= 1);
            let probs = mask_probabilities(&actor, &state).unwrap();
            let recomputed = mask_log_prob(&probs, &a.mask);
            if recomputed.is_finite() {
                prop_assert!((a.log_prob - recomputed).abs() < 1e-9);
            }
        }
    }
}
