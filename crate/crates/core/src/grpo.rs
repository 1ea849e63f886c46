//! Group-relative policy optimization.
//!
//! For each input a group of K outputs is sampled and scored. Rewards are
//! normalized within the group into advantages, and the policy ascends the
//! clipped importance-weighted surrogate minus a KL penalty towards a frozen
//! reference policy.

use std::sync::Mutex;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Example, Token};
use crate::policy::{
    objective_gradient, objective_value, sample, sequence_log_probs, Objective, PolicyError, PolicyParams, SampleResult, Sequence,
};
use crate::reward::{RewardBreakdown, RewardError, RewardMode, RewardWeights, Rewarder};
use crate::seed;
use crate::FormalismDescriptor;

/// Step size that moves the compact policy at a useful pace. The default
/// of 1e-6 suits 7B-parameter models and barely changes a small one.
pub const DESK_LEARNING_RATE: f64 = 1e-2;

#[derive(Debug, thiserror::Error)]
pub enum GrpoError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("a group needs at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("log-probability sequences differ in length ({0} vs {1})")]
    Misaligned(usize, usize),
    #[error("invalid GRPO config: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    EmptyDataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub temperature: f64,
    pub batch_inputs: usize,
    pub learning_rate: f64,
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub inner_epochs: usize,
    pub std_floor: f64,
    pub steps: usize,
    pub reward_mode: RewardMode,
    pub reward_weights: RewardWeights,
    pub seed: u64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 8,
            temperature: 0.6,
            batch_inputs: 8,
            learning_rate: 1e-6,
            clip_epsilon: 0.2,
            kl_beta: 0.01,
            inner_epochs: 1,
            std_floor: 1e-8,
            steps: 200,
            reward_mode: RewardMode::Binary,
            reward_weights: RewardWeights::default(),
            seed: 0,
        }
    }
}

impl GrpoConfig {
    /// Defaults rescaled for the compact policy on mini-SCAN.
    pub fn desk_scale() -> Self {
        GrpoConfig { learning_rate: DESK_LEARNING_RATE, steps: 1000, ..GrpoConfig::default() }
    }

    pub fn validate(&self) -> Result<(), GrpoError> {
        let bad = |m: String| Err(GrpoError::InvalidConfig(m));
        if self.group_size < 2 {
            return bad(format!("group_size must be at least 2, got {}", self.group_size));
        }
        if self.batch_inputs == 0 || self.inner_epochs == 0 {
            return bad("batch_inputs and inner_epochs must be positive".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad(format!("clip_epsilon must lie in (0, 1), got {}", self.clip_epsilon));
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            return bad(format!("kl_beta must be non-negative, got {}", self.kl_beta));
        }
        if !(self.std_floor > 0.0) {
            return bad(format!("std_floor must be positive, got {}", self.std_floor));
        }
        self.reward_weights.validate(self.reward_mode)?;
        Ok(())
    }
}

/// K scored samples for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub source: Vec<Token>,
    pub gold: Vec<Token>,
    pub source_ids: Vec<usize>,
    pub samples: Vec<SampleResult>,
    pub rewards: Vec<RewardBreakdown>,
    pub advantages: Vec<f64>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepStats {
    pub mean_reward: f64,
    pub fraction_exact_match: f64,
    pub mean_kl: f64,
    pub mean_clip_fraction: f64,
    pub grad_norm: f64,
}

/// Â_i = (r_i − μ) / σ with the population σ. Returns the advantages and
/// whether the group is degenerate (σ < `std_floor`, all advantages 0).
pub fn compute_advantages(rewards: &[f64], std_floor: f64) -> Result<(Vec<f64>, bool), GrpoError> {
    let k = rewards.len();
    if k < 2 {
        return Err(GrpoError::GroupTooSmall(k));
    }
    let mean = rewards.iter().sum::<f64>() / k as f64;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / k as f64;
    let std = var.sqrt();
    if std < std_floor {
        return Ok((vec![0.0; k], true));
    }
    Ok((rewards.iter().map(|r| (r - mean) / std).collect(), false))
}

/// min(r·Â, clip(r, 1−ε, 1+ε)·Â).
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// ∂/∂r of [`clipped_surrogate`]: Â where the unclipped branch is active.
fn clipped_surrogate_slope(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    if ratio * advantage <= clipped * advantage {
        advantage
    } else {
        0.0
    }
}

fn k3(current: f64, reference: f64) -> f64 {
    let d = reference - current;
    d.exp() - d - 1.0
}

/// Token-averaged exp(ℓ_ref − ℓ) − (ℓ_ref − ℓ) − 1; zero for empty input.
pub fn kl_term(current: &[f64], reference: &[f64]) -> Result<f64, GrpoError> {
    if current.len() != reference.len() {
        return Err(GrpoError::Misaligned(current.len(), reference.len()));
    }
    if current.is_empty() {
        return Ok(0.0);
    }
    Ok(current.iter().zip(reference).map(|(c, r)| k3(*c, *r)).sum::<f64>() / current.len() as f64)
}

/// Samples and scores a group for `example`; member i uses seed
/// `derive(group_seed, [i])`.
pub fn make_rollout_group(
    params: &PolicyParams,
    example: &Example,
    rewarder: &Rewarder,
    config: &GrpoConfig,
    group_seed: u64,
) -> Result<RolloutGroup, GrpoError> {
    let source_ids = params.vocab.encode(&example.source)?;
    let max_len = params.arch.max_output_len;
    let samples = (0..config.group_size as u64)
        .map(|i| sample(params, &source_ids, config.temperature, seed::derive(group_seed, &[i]), max_len))
        .collect::<Result<Vec<_>, _>>()?;
    let rewards: Vec<RewardBreakdown> =
        samples.iter().map(|s| rewarder.score(&s.tokens(&params.vocab), &example.target)).collect();
    let totals: Vec<f64> = rewards.iter().map(|r| r.total).collect();
    let (advantages, degenerate) = compute_advantages(&totals, config.std_floor)?;
    Ok(RolloutGroup {
        source: example.source.clone(),
        gold: example.target.clone(),
        source_ids,
        samples,
        rewards,
        advantages,
        degenerate,
    })
}

/// The batch objective
/// (1/G) Σ_g (1/K) Σ_i (1/|y_i|) Σ_t [clip(r_it, Â_i) − β·k3_it].
struct GrpoObjective {
    seqs: Vec<Sequence>,
    behavior: Vec<Vec<f64>>,
    reference: Vec<Vec<f64>>,
    advantages: Vec<f64>,
    scale: Vec<f64>,
    epsilon: f64,
    beta: f64,
    telemetry: Mutex<(f64, f64)>,
}

impl GrpoObjective {
    fn new(groups: &[RolloutGroup], reference: &PolicyParams, config: &GrpoConfig) -> Result<Self, GrpoError> {
        let mut seqs = Vec::new();
        let mut behavior = Vec::new();
        let mut advantages = Vec::new();
        let mut scale = Vec::new();
        let g = groups.len() as f64;
        for group in groups {
            let k = group.samples.len() as f64;
            for (s, a) in group.samples.iter().zip(&group.advantages) {
                if s.ids.is_empty() {
                    continue;
                }
                seqs.push(Sequence { source: group.source_ids.clone(), output: s.ids.clone() });
                behavior.push(s.logprobs.clone());
                advantages.push(*a);
                scale.push(1.0 / (g * k * s.ids.len() as f64));
            }
        }
        let reference = seqs
            .par_iter()
            .map(|s| sequence_log_probs(reference, &s.source, &s.output))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(GrpoObjective {
            seqs,
            behavior,
            reference,
            advantages,
            scale,
            epsilon: config.clip_epsilon,
            beta: config.kl_beta,
            telemetry: Mutex::new((0.0, 0.0)),
        })
    }
}

impl Objective for GrpoObjective {
    fn sequences(&self) -> &[Sequence] {
        &self.seqs
    }

    fn evaluate(&self, logprobs: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
        let mut value = 0.0;
        let mut kl_sum = 0.0;
        let mut clipped = 0usize;
        let mut tokens = 0usize;
        let mut grads = Vec::with_capacity(logprobs.len());
        for (i, lp) in logprobs.iter().enumerate() {
            let (adv, w) = (self.advantages[i], self.scale[i]);
            let mut g = Vec::with_capacity(lp.len());
            let mut seq_kl = 0.0;
            for (t, &l) in lp.iter().enumerate() {
                let ratio = (l - self.behavior[i][t]).exp();
                let reference = self.reference[i][t];
                let kl = k3(l, reference);
                value += w * (clipped_surrogate(ratio, adv, self.epsilon) - self.beta * kl);
                let dkl = 1.0 - (reference - l).exp();
                g.push(w * (clipped_surrogate_slope(ratio, adv, self.epsilon) * ratio - self.beta * dkl));
                seq_kl += kl;
                if (ratio - 1.0).abs() > self.epsilon {
                    clipped += 1;
                }
            }
            tokens += lp.len();
            kl_sum += seq_kl / lp.len() as f64;
            grads.push(g);
        }
        let n = logprobs.len().max(1) as f64;
        *self.telemetry.lock().expect("telemetry lock") = (kl_sum / n, clipped as f64 / tokens.max(1) as f64);
        (value, grads)
    }
}

/// The objective on `groups` at `params` and its gradient. The recorded
/// sample log-probabilities act as the behavior policy.
pub fn grpo_objective_gradient(
    params: &PolicyParams,
    reference: &PolicyParams,
    groups: &[RolloutGroup],
    config: &GrpoConfig,
) -> Result<(f64, Vec<f64>), GrpoError> {
    Ok(objective_gradient(params, &GrpoObjective::new(groups, reference, config)?)?)
}

pub fn grpo_objective_value(
    params: &PolicyParams,
    reference: &PolicyParams,
    groups: &[RolloutGroup],
    config: &GrpoConfig,
) -> Result<f64, GrpoError> {
    Ok(objective_value(params, &GrpoObjective::new(groups, reference, config)?)?)
}

/// `inner_epochs` gradient-ascent updates on one batch of groups.
pub fn grpo_step(
    params: &PolicyParams,
    reference: &PolicyParams,
    groups: &[RolloutGroup],
    config: &GrpoConfig,
) -> Result<(PolicyParams, StepStats), GrpoError> {
    let objective = GrpoObjective::new(groups, reference, config)?;
    let mut params = params.clone();
    let (mut kl, mut clip, mut norm) = (0.0, 0.0, 0.0);
    for _ in 0..config.inner_epochs {
        let (_, grad) = objective_gradient(&params, &objective)?;
        let (k, c) = *objective.telemetry.lock().expect("telemetry lock");
        kl += k;
        clip += c;
        norm += grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        params.add_scaled(&grad, config.learning_rate);
    }
    let inner = config.inner_epochs as f64;
    let rewards = groups.iter().flat_map(|g| &g.rewards);
    let n = rewards.clone().count().max(1) as f64;
    let stats = StepStats {
        mean_reward: rewards.clone().map(|r| r.total).sum::<f64>() / n,
        fraction_exact_match: rewards.map(|r| r.binary).sum::<f64>() / n,
        mean_kl: kl / inner,
        mean_clip_fraction: clip / inner,
        grad_norm: norm / inner,
    };
    Ok((params, stats))
}

/// Receives every completed step.
pub trait GrpoObserver {
    fn on_step(&mut self, step: usize, params: &PolicyParams, stats: &StepStats, groups: &[RolloutGroup]);
}

impl<F: FnMut(usize, &PolicyParams, &StepStats, &[RolloutGroup])> GrpoObserver for F {
    fn on_step(&mut self, step: usize, params: &PolicyParams, stats: &StepStats, groups: &[RolloutGroup]) {
        self(step, params, stats, groups)
    }
}

pub fn train_grpo(
    dataset: &Dataset,
    init: &PolicyParams,
    reference: &PolicyParams,
    config: &GrpoConfig,
    descriptor: &FormalismDescriptor,
) -> Result<(PolicyParams, Vec<StepStats>), GrpoError> {
    train_grpo_with(dataset, init, reference, config, descriptor, &mut |_: usize, _: &PolicyParams, _: &StepStats, _: &[RolloutGroup]| {})
}

/// Runs `config.steps` steps over `dataset`, visiting inputs in a seeded
/// order reshuffled every pass. Steps count from 1.
pub fn train_grpo_with(
    dataset: &Dataset,
    init: &PolicyParams,
    reference: &PolicyParams,
    config: &GrpoConfig,
    descriptor: &FormalismDescriptor,
    observer: &mut impl GrpoObserver,
) -> Result<(PolicyParams, Vec<StepStats>), GrpoError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(GrpoError::EmptyDataset);
    }
    let rewarder = Rewarder::new(descriptor.clone(), config.reward_weights, config.reward_mode)?;
    let mut params = init.clone();
    let mut trace = Vec::with_capacity(config.steps);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut pass = 0u64;
    for step in 1..=config.steps {
        let mut batch = Vec::with_capacity(config.batch_inputs);
        while batch.len() < config.batch_inputs {
            if cursor == order.len() {
                order = (0..dataset.len()).collect();
                order.shuffle(&mut seed::rng(seed::derive(config.seed, &[u64::MAX, pass])));
                pass += 1;
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let groups = batch
            .par_iter()
            .enumerate()
            .map(|(slot, &i)| {
                let group_seed = seed::derive(config.seed, &[step as u64, slot as u64]);
                make_rollout_group(&params, &dataset.examples[i], &rewarder, config, group_seed)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let (next, stats) = grpo_step(&params, reference, &groups, config)?;
        params = next;
        observer.on_step(step, &params, &stats, &groups);
        trace.push(stats);
    }
    Ok((params, trace))
}

/// `step,mean_reward,fraction_exact_match,mean_kl,mean_clip_fraction,grad_norm`
/// CSV with six decimals.
pub fn stats_csv(trace: &[StepStats]) -> String {
    let mut out = String::from("step,mean_reward,fraction_exact_match,mean_kl,mean_clip_fraction,grad_norm\n");
    for (i, s) in trace.iter().enumerate() {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            i + 1,
            s.mean_reward,
            s.fraction_exact_match,
            s.mean_kl,
            s.mean_clip_fraction,
            s.grad_norm
        ));
    }
    out
}

#[derive(Serialize)]
struct RolloutRecord {
    step: usize,
    input: String,
    output: String,
    truncated: bool,
    binary: f64,
    prim: f64,
    comp: f64,
    total: f64,
    advantage: f64,
}

/// One JSON line per sample of every group.
pub fn rollout_records(step: usize, params: &PolicyParams, groups: &[RolloutGroup]) -> String {
    let mut out = String::new();
    for g in groups {
        for ((s, r), a) in g.samples.iter().zip(&g.rewards).zip(&g.advantages) {
            let rec = RolloutRecord {
                step,
                input: crate::corpus::join(&g.source),
                output: crate::corpus::join(&s.tokens(&params.vocab)),
                truncated: s.truncated,
                binary: r.binary,
                prim: r.prim,
                comp: r.comp,
                total: r.total,
                advantage: *a,
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
    }
    out
}
