//! Group-relative policy optimization for the rewrite policy.
//!
//! For every training sample a group of G rewrites is sampled from the
//! snapshot policy, rewarded, and standardized within the group to form
//! advantages. The update maximizes the clipped importance-ratio surrogate;
//! the advantage is outcome-level and shared across all steps of a rollout.
//!
//! By default a single inner update runs per snapshot, so ratios are exactly
//! 1 at gradient time and the update reduces to REINFORCE with a group
//! baseline. The clipping machinery still matters with
//! `inner_iterations > 1`, where later passes see drifted ratios.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::policy::{
    sample_rewrite, PolicyParams, RewriteAction, Rollout, TermFeaturizer, FEATURE_DIM,
    NUM_ACTIONS,
};
use crate::retrieval::Retriever;
use crate::reward::{RewardBreakdown, RewardEvaluator};
use crate::synth::QuerySample;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrpoConfig {
    /// Rollouts sampled per training sample.
    pub group_size: usize,
    /// Clip range for the importance ratio.
    pub clip_epsilon: f64,
    /// KL penalty weight; 0 disables the KL term entirely.
    pub kl_beta: f64,
    pub learning_rate: f64,
    /// Samples accumulated into one gradient-descent update.
    pub grad_accum_steps: usize,
    pub epochs: usize,
    /// Guard added to the group standard deviation when standardizing.
    pub advantage_epsilon: f64,
    /// Gradient passes per snapshot; above 1 the ratios drift and clipping
    /// activates.
    pub inner_iterations: usize,
    /// Sampling (and scoring) temperature.
    pub temperature: f64,
    pub seed: u64,
    /// Write a checkpoint every this many steps.
    #[serde(default)]
    pub checkpoint_interval: Option<usize>,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip_epsilon: 0.2,
            kl_beta: 0.0,
            learning_rate: 0.05,
            grad_accum_steps: 4,
            epochs: 1,
            advantage_epsilon: 1e-8,
            inner_iterations: 1,
            temperature: 1.0,
            seed: 0,
            checkpoint_interval: None,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::GroupTooSmall(self.group_size));
        }
        if !(0.0..1.0).contains(&self.clip_epsilon) || self.clip_epsilon == 0.0 {
            return Err(Error::InvalidConfig(format!(
                "clip_epsilon must lie in (0, 1), got {}",
                self.clip_epsilon
            )));
        }
        if self.kl_beta < 0.0 {
            return Err(Error::InvalidConfig("kl_beta must be non-negative".into()));
        }
        if self.learning_rate < 0.0 {
            return Err(Error::InvalidConfig(
                "learning_rate must be non-negative".into(),
            ));
        }
        if self.grad_accum_steps == 0 || self.inner_iterations == 0 {
            return Err(Error::InvalidConfig(
                "grad_accum_steps and inner_iterations must be positive".into(),
            ));
        }
        if self.temperature <= 0.0 {
            return Err(Error::InvalidConfig("temperature must be positive".into()));
        }
        Ok(())
    }
}

/// Standardize rewards within a group: `(r - mean) / (std_pop + eps)`.
/// A group whose rewards are all equal gets all-zero advantages.
pub fn compute_advantages(rewards: &[f64], eps: f64) -> Result<Vec<f64>> {
    let g = rewards.len();
    if g < 2 {
        return Err(Error::GroupTooSmall(g));
    }
    let max = rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = rewards.iter().cloned().fold(f64::INFINITY, f64::min);
    if max == min {
        return Ok(vec![0.0; g]);
    }
    let mean = rewards.iter().sum::<f64>() / g as f64;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g as f64;
    let std = var.sqrt();
    Ok(rewards.iter().map(|r| (r - mean) / (std + eps)).collect())
}

fn validate_shapes(
    current: &[Vec<f64>],
    old: &[Vec<f64>],
    advantages: &[f64],
) -> Result<()> {
    if current.len() != old.len() || current.len() != advantages.len() {
        return Err(Error::InvalidConfig(format!(
            "grpo_loss shape mismatch: {} current rollouts, {} old, {} advantages",
            current.len(),
            old.len(),
            advantages.len()
        )));
    }
    for (i, (cur, prev)) in current.iter().zip(old).enumerate() {
        if cur.len() != prev.len() {
            return Err(Error::InvalidConfig(format!(
                "grpo_loss rollout {i}: {} current steps vs {} old steps",
                cur.len(),
                prev.len()
            )));
        }
        for (t, (c, o)) in cur.iter().zip(prev).enumerate() {
            if !c.is_finite() || !o.is_finite() {
                return Err(Error::NonFiniteLogProb {
                    rollout: i,
                    step: t,
                });
            }
        }
    }
    Ok(())
}

/// Clipped surrogate loss over one group.
///
/// `-(1/G) sum_i (1/|o_i|) sum_t min(rho*adv_i, clip(rho, 1-eps, 1+eps)*adv_i)`
/// plus `kl_beta` times the per-step KL estimator
/// `exp(old-cur) - (old-cur) - 1` averaged the same way. Returns the loss and
/// a per-step flag marking where the clipped branch won.
pub fn grpo_loss(
    current: &[Vec<f64>],
    old: &[Vec<f64>],
    advantages: &[f64],
    cfg: &GrpoConfig,
) -> Result<(f64, Vec<Vec<bool>>)> {
    validate_shapes(current, old, advantages)?;
    let g = current.len() as f64;
    let mut loss = 0.0;
    let mut flags = Vec::with_capacity(current.len());
    for ((cur, prev), adv) in current.iter().zip(old).zip(advantages) {
        let mut rollout_flags = Vec::with_capacity(cur.len());
        if cur.is_empty() {
            flags.push(rollout_flags);
            continue;
        }
        let scale = 1.0 / (g * cur.len() as f64);
        for (c, o) in cur.iter().zip(prev) {
            let rho = (c - o).exp();
            let clipped_rho = rho.clamp(1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
            let surr = rho * adv;
            let surr_clipped = clipped_rho * adv;
            loss -= scale * surr.min(surr_clipped);
            rollout_flags.push(surr_clipped < surr && rho != clipped_rho);
            if cfg.kl_beta > 0.0 {
                let diff = o - c;
                loss += cfg.kl_beta * scale * (diff.exp() - diff - 1.0);
            }
        }
        flags.push(rollout_flags);
    }
    Ok((loss, flags))
}

/// Feature/action view of one rollout, enough to differentiate its
/// log-probabilities with respect to the policy weights.
#[derive(Debug, Clone)]
pub struct RolloutSteps {
    pub features: Vec<[f64; FEATURE_DIM]>,
    pub actions: Vec<RewriteAction>,
}

/// [`grpo_loss`] evaluated through the policy, together with its exact
/// gradient with respect to the weight matrix. Gradient flows only through
/// steps where the unclipped branch is selected.
pub fn grpo_loss_grad(
    params: &PolicyParams,
    rollouts: &[RolloutSteps],
    old_logprobs: &[Vec<f64>],
    advantages: &[f64],
    cfg: &GrpoConfig,
) -> Result<(f64, Vec<f64>, Vec<Vec<bool>>)> {
    let current: Vec<Vec<f64>> = rollouts
        .iter()
        .map(|r| {
            crate::policy::sequence_logprobs(params, &r.features, &r.actions, cfg.temperature)
        })
        .collect();
    let (loss, flags) = grpo_loss(&current, old_logprobs, advantages, cfg)?;

    let g = rollouts.len() as f64;
    let mut grad = vec![0.0; FEATURE_DIM * NUM_ACTIONS];
    for ((rollout, (cur, prev)), adv) in rollouts
        .iter()
        .zip(current.iter().zip(old_logprobs))
        .zip(advantages)
    {
        if cur.is_empty() {
            continue;
        }
        let scale = 1.0 / (g * cur.len() as f64);
        for ((features, action), (c, o)) in
            rollout.features.iter().zip(&rollout.actions).zip(cur.iter().zip(prev))
        {
            let rho = (c - o).exp();
            let clipped_rho = rho.clamp(1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
            let surr = rho * adv;
            let surr_clipped = clipped_rho * adv;
            // d loss / d cur, zero where the clipped branch blocks the ratio
            let mut coeff = if surr <= surr_clipped {
                -scale * adv * rho
            } else {
                0.0
            };
            if cfg.kl_beta > 0.0 {
                coeff += cfg.kl_beta * scale * (1.0 - (o - c).exp());
            }
            if coeff == 0.0 {
                continue;
            }
            let lp = crate::policy::log_softmax(&params.logits(features), cfg.temperature);
            let a = action.index();
            for (i, fi) in features.iter().enumerate() {
                for j in 0..NUM_ACTIONS {
                    let indicator = if j == a { 1.0 } else { 0.0 };
                    grad[i * NUM_ACTIONS + j] +=
                        coeff * fi * (indicator - lp[j].exp()) / cfg.temperature;
                }
            }
        }
    }
    Ok((loss, grad, flags))
}

/// The G rollouts sampled for one training sample, with their rewards and
/// group-standardized advantages.
#[derive(Debug, Clone)]
pub struct RolloutGroup {
    pub sample: QuerySample,
    pub rollouts: Vec<Rollout>,
    pub rewards: Vec<RewardBreakdown>,
    pub advantages: Vec<f64>,
    pub old_logprobs: Vec<Vec<f64>>,
    pub steps: Vec<RolloutSteps>,
}

impl RolloutGroup {
    /// Sample G rewrites for one query under the snapshot params and reward
    /// them as a group.
    pub fn sample(
        snapshot: &PolicyParams,
        sample: &QuerySample,
        ctx: &TrainContext,
        cfg: &GrpoConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let (_, features) = ctx.featurizer.featurize_query(&sample.query);
        let rollouts: Vec<Rollout> = (0..cfg.group_size)
            .map(|_| {
                sample_rewrite(
                    snapshot,
                    ctx.featurizer,
                    &sample.query,
                    cfg.temperature,
                    rng,
                )
            })
            .collect();
        let outputs: Vec<String> = rollouts.iter().map(|r| r.output.clone()).collect();
        let rewards = ctx.evaluator.evaluate_group(sample, &outputs, ctx.retriever)?;
        let totals: Vec<f64> = rewards.iter().map(|r| r.total).collect();
        let advantages = compute_advantages(&totals, cfg.advantage_epsilon)?;
        let old_logprobs: Vec<Vec<f64>> = rollouts.iter().map(|r| r.logprobs.clone()).collect();
        let steps: Vec<RolloutSteps> = rollouts
            .iter()
            .map(|r| RolloutSteps {
                features: features.clone(),
                actions: r.actions.clone(),
            })
            .collect();
        Ok(Self {
            sample: sample.clone(),
            rollouts,
            rewards,
            advantages,
            old_logprobs,
            steps,
        })
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_retrieval: f64,
    pub mean_penalty: f64,
    pub loss: f64,
    pub clip_fraction: f64,
    pub mean_rewrite_len: f64,
}

/// Append-only per-step records, persisted as JSON lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_jsonl(path, &self.records)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self {
            records: io::read_jsonl(path)?,
        })
    }
}

/// Immutable pieces a training step runs against.
pub struct TrainContext<'a> {
    pub featurizer: &'a TermFeaturizer,
    pub retriever: &'a dyn Retriever,
    pub evaluator: &'a RewardEvaluator<'a>,
}

/// One optimization step over a batch of `grad_accum_steps` samples:
/// snapshot the params, sample and reward a rollout group per sample, then
/// apply `inner_iterations` gradient-descent updates of the mean group loss.
pub fn train_step(
    params: &PolicyParams,
    batch: &[QuerySample],
    ctx: &TrainContext,
    cfg: &GrpoConfig,
    step: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(PolicyParams, TrainRecord)> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let snapshot = params.clone();
    let groups: Vec<RolloutGroup> = batch
        .iter()
        .map(|sample| RolloutGroup::sample(&snapshot, sample, ctx, cfg, rng))
        .collect::<Result<_>>()?;

    let mut current = params.clone();
    let mut last_loss = 0.0;
    let mut last_clip = 0.0;
    for _ in 0..cfg.inner_iterations {
        let mut grad_sum = vec![0.0; FEATURE_DIM * NUM_ACTIONS];
        let mut loss_sum = 0.0;
        let mut clipped = 0usize;
        let mut total_steps = 0usize;
        for group in &groups {
            let (loss, grad, flags) = grpo_loss_grad(
                &current,
                &group.steps,
                &group.old_logprobs,
                &group.advantages,
                cfg,
            )?;
            loss_sum += loss;
            for (acc, g) in grad_sum.iter_mut().zip(&grad) {
                *acc += g;
            }
            for rollout_flags in &flags {
                clipped += rollout_flags.iter().filter(|f| **f).count();
                total_steps += rollout_flags.len();
            }
        }
        let n = groups.len() as f64;
        last_loss = loss_sum / n;
        last_clip = if total_steps == 0 {
            0.0
        } else {
            clipped as f64 / total_steps as f64
        };
        for (w, g) in current.w.iter_mut().zip(&grad_sum) {
            *w -= cfg.learning_rate * g / n;
        }
    }

    let mut reward_sum = 0.0;
    let mut retrieval_sum = 0.0;
    let mut penalty_sum = 0.0;
    let mut len_sum = 0.0;
    let mut count = 0usize;
    for group in &groups {
        for reward in &group.rewards {
            reward_sum += reward.total;
            retrieval_sum += reward.retrieval;
            penalty_sum += reward.normalized_penalty;
            count += 1;
        }
        for rollout in &group.rollouts {
            len_sum += rollout.rewritten_query.chars().count() as f64;
        }
    }
    let count = count as f64;
    let record = TrainRecord {
        step,
        mean_reward: reward_sum / count,
        mean_retrieval: retrieval_sum / count,
        mean_penalty: penalty_sum / count,
        loss: last_loss,
        clip_fraction: last_clip,
        mean_rewrite_len: len_sum / count,
    };
    Ok((current, record))
}

/// Canonical dataset order: independent of input permutation so shuffling is
/// a pure function of the seed and the dataset contents.
fn canonical_order(dataset: &[QuerySample]) -> Vec<&QuerySample> {
    let mut ordered: Vec<&QuerySample> = dataset.iter().collect();
    ordered.sort_by(|a, b| {
        (a.target_index, &a.query, &a.answer).cmp(&(b.target_index, &b.query, &b.answer))
    });
    ordered
}

/// Run `epochs` passes over the dataset in seeded shuffled order, updating
/// once per `grad_accum_steps` samples. Checkpoints (when configured) are
/// written into `checkpoint_dir` as `checkpoint_step_{N}.json`.
pub fn train_loop(
    dataset: &[QuerySample],
    initial: PolicyParams,
    ctx: &TrainContext,
    cfg: &GrpoConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<(PolicyParams, TrainLog)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = initial;
    let mut log = TrainLog::default();
    let mut step = 0usize;
    for _ in 0..cfg.epochs {
        let mut order = canonical_order(dataset);
        order.shuffle(&mut rng);
        let owned: Vec<QuerySample> = order.into_iter().cloned().collect();
        for batch in owned.chunks(cfg.grad_accum_steps) {
            step += 1;
            let (next, record) = train_step(&params, batch, ctx, cfg, step, &mut rng)?;
            params = next;
            log.records.push(record);
            if let (Some(interval), Some(dir)) = (cfg.checkpoint_interval, checkpoint_dir) {
                if interval > 0 && step % interval == 0 {
                    params.save(&dir.join(format!("checkpoint_step_{step:05}.json")))?;
                }
            }
        }
    }
    Ok((params, log))
}
