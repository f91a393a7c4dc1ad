//! Proximal policy optimization for the offloading policy.
//!
//! An iteration samples learning tasks (a DAG paired with a transmission
//! rate), rolls out trajectories under a frozen copy of the policy, computes
//! GAE advantages, then runs several epochs of clipped-surrogate updates over
//! episode-sized minibatches.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{adagrad_update, adam_update, AdError, AdamHyper, Graph, ParamId, Tensor, TensorSet};
use crate::dag::{EmbeddingBounds, TaskGraph, DEFAULT_INDEX_LEN};
use crate::policy::{input_features, ParamGroup, PolicyError, TransformerPolicy};
use crate::rng::{self, derive_seed};
use crate::sim::{reset, Decision, EpisodeContext, SimError, SystemProfile};

/// Transmission rates, in Mbps, that training tasks are drawn from.
pub const TRAINING_RATES_MBPS: [f64; 7] = [4.0, 7.0, 10.0, 13.0, 16.0, 19.0, 22.0];
pub const ADVANTAGE_EPS: f64 = 1e-8;
pub const DEFAULT_EVAL_TRAJECTORIES: usize = 20;

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("no training graphs")]
    EmptyDataset,
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adagrad,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_policy: f64,
    pub lr_value: f64,
    pub clip_eps: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub c1: f64,
    pub c2: f64,
    pub epochs_per_iter: usize,
    /// Steps per minibatch, rounded to whole episodes.
    pub batch_size: usize,
    pub iterations: usize,
    pub tasks_per_iter: usize,
    pub trajectories_per_task: usize,
    pub seed: u64,
    pub rates_mbps: Vec<f64>,
    pub optimizer: OptimizerKind,
    /// Multiplies rewards before advantage estimation.
    pub reward_scale: f64,
    /// Applies the policy's dropout during update epochs.
    pub update_dropout: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl TrainConfig {
    pub fn toy() -> Self {
        TrainConfig {
            lr_policy: 0.01,
            lr_value: 0.01,
            clip_eps: 0.2,
            gamma: 0.99,
            lambda: 0.95,
            c1: 0.5,
            c2: 0.01,
            epochs_per_iter: 4,
            batch_size: 100,
            iterations: 200,
            tasks_per_iter: 4,
            trajectories_per_task: 5,
            seed: 0,
            rates_mbps: TRAINING_RATES_MBPS.to_vec(),
            optimizer: OptimizerKind::Adagrad,
            reward_scale: 1.0,
            update_dropout: true,
        }
    }

    pub fn paper() -> Self {
        TrainConfig { lr_policy: 0.1, lr_value: 0.01, c2: 0.5, iterations: 1000, ..Self::toy() }
    }

    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |m: &str| Err(PpoError::InvalidConfig(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if !(self.clip_eps > 0.0) {
            return bad("clip_eps must be positive");
        }
        if !(self.c1 >= 0.0 && self.c2 >= 0.0 && self.lr_policy >= 0.0 && self.lr_value >= 0.0) {
            return bad("coefficients and learning rates must be non-negative");
        }
        if self.epochs_per_iter == 0 || self.batch_size == 0 || self.tasks_per_iter == 0 || self.trajectories_per_task == 0 {
            return bad("epochs, batch size and sampling counts must be positive");
        }
        if self.rates_mbps.is_empty() || self.rates_mbps.iter().any(|r| !(*r > 0.0)) {
            return bad("rates must be a nonempty list of positive values");
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return bad("reward_scale must be positive");
        }
        Ok(())
    }
}

/// GAE advantages and returns for one episode.
///
/// `values` holds `V(s_0..s_T)`, the last entry being the bootstrap value.
pub fn compute_gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>), PpoError> {
    if values.len() != rewards.len() + 1 {
        return Err(PpoError::LengthMismatch(format!("{} rewards need {} values, got {}", rewards.len(), rewards.len() + 1, values.len())));
    }
    let t = rewards.len();
    let mut adv = vec![0.0; t];
    let mut next = 0.0;
    for i in (0..t).rev() {
        let delta = rewards[i] + gamma * values[i + 1] - values[i];
        next = delta + gamma * lambda * next;
        adv[i] = next;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// One episode collected under the sampling policy.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub ctx: Arc<EpisodeContext>,
    pub features: Tensor,
    pub actions: Vec<Decision>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    /// Latency of the final plan, seconds.
    pub latency: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn validate(&self) -> Result<(), PpoError> {
        let n = self.ctx.len();
        if [self.actions.len(), self.log_probs.len(), self.values.len(), self.rewards.len()].iter().any(|&l| l != n) {
            return Err(PpoError::LengthMismatch(format!("trajectory fields disagree with {n} tasks")));
        }
        if !self.rewards.iter().chain(&self.log_probs).chain(&self.values).all(|x| x.is_finite()) {
            return Err(PpoError::NonFinite("trajectory entry".into()));
        }
        Ok(())
    }
}

/// Runs one episode. Sampling uses `seed`; `greedy` takes the argmax action instead.
pub fn rollout(policy: &TransformerPolicy, ctx: Arc<EpisodeContext>, seed: u64, greedy: bool) -> Result<Trajectory, PpoError> {
    let n = ctx.len();
    let mut rng = rng::seeded(seed);
    let mut state = reset(ctx.clone());
    let (mut actions, mut log_probs, mut values, mut rewards) =
        (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    while !state.is_done() {
        let out = policy.act(&state, &mut rng, greedy)?;
        rewards.push(state.step_mut(out.decision)?);
        actions.push(out.decision);
        log_probs.push(out.log_prob);
        values.push(out.value);
    }
    let features = input_features(&ctx.embeddings, &ctx.profile, policy.config.index_len);
    Ok(Trajectory { latency: state.latency(), ctx, features, actions, log_probs, values, rewards })
}

/// Summary of one loss evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    /// Mean entropy per step, nats.
    pub entropy: f64,
    /// Largest `|ratio - 1|` in the batch.
    pub max_ratio_deviation: f64,
    /// Share of steps whose clipped term is the active one.
    pub clip_fraction: f64,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub stats: LossStats,
    /// Indexed by parameter id.
    pub grads: Vec<Tensor>,
}

/// Per-step regression targets and raw advantages for a batch of episodes.
#[derive(Debug, Clone)]
pub struct Targets {
    pub advantages: Vec<Vec<f64>>,
    pub returns: Vec<Vec<f64>>,
}

impl Targets {
    pub fn compute(episodes: &[&Trajectory], config: &TrainConfig) -> Result<Self, PpoError> {
        let mut advantages = Vec::with_capacity(episodes.len());
        let mut returns = Vec::with_capacity(episodes.len());
        for ep in episodes {
            let rewards: Vec<f64> = ep.rewards.iter().map(|r| r * config.reward_scale).collect();
            let mut values = ep.values.clone();
            values.push(0.0);
            let (a, r) = compute_gae(&rewards, &values, config.gamma, config.lambda)?;
            advantages.push(a);
            returns.push(r);
        }
        Ok(Targets { advantages, returns })
    }
}

fn normalize(advantages: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let all: Vec<f64> = advantages.iter().flatten().copied().collect();
    let n = all.len().max(1) as f64;
    let mean = all.iter().sum::<f64>() / n;
    let std = (all.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    advantages.iter().map(|ep| ep.iter().map(|a| (a - mean) / (std + ADVANTAGE_EPS)).collect()).collect()
}

struct EpisodeLoss {
    grads: Vec<Tensor>,
    stats: LossStats,
}

#[allow(clippy::too_many_arguments)]
fn episode_loss(
    policy: &TransformerPolicy,
    ep: &Trajectory,
    adv: &[f64],
    ret: &[f64],
    total_steps: f64,
    config: &TrainConfig,
    train: bool,
    seed: u64,
) -> Result<EpisodeLoss, PpoError> {
    let n = ep.len();
    let mut g = Graph::new();
    let out = policy.episode_on(&mut g, &ep.features, &ep.actions, train, seed)?;
    let logp = g.log_softmax(out.logits, 1)?;
    let onehot: Vec<f64> = ep.actions.iter().flat_map(|d| if *d == Decision::Offload { [0.0, 1.0] } else { [1.0, 0.0] }).collect();
    let onehot = g.constant(Tensor::matrix(n, 2, onehot)?);
    let picked = g.mul(logp, onehot)?;
    let new_logp = g.sum_axis(picked, 1)?;
    let old = g.constant(Tensor::matrix(n, 1, ep.log_probs.clone())?);
    let diff = g.sub(new_logp, old)?;
    let ratio = g.exp(diff)?;
    let adv_c = g.constant(Tensor::matrix(n, 1, adv.to_vec())?);
    let s1 = g.mul(ratio, adv_c)?;
    let clipped = g.clip(ratio, 1.0 - config.clip_eps, 1.0 + config.clip_eps)?;
    let s2 = g.mul(clipped, adv_c)?;
    let surr = g.minimum(s1, s2)?;
    let surr_sum = g.sum(surr)?;

    let ret_c = g.constant(Tensor::matrix(n, 1, ret.to_vec())?);
    let err = g.sub(out.values, ret_c)?;
    let sq = g.mul(err, err)?;
    let value_sum = g.sum(sq)?;

    let probs = g.softmax(out.logits, 1)?;
    let plogp = g.mul(probs, logp)?;
    let neg_entropy_sum = g.sum(plogp)?;

    // loss = (-sum surr + c1 sum sq + c2 sum p log p) / N
    let a = g.scale(surr_sum, -1.0 / total_steps)?;
    let b = g.scale(value_sum, config.c1 / total_steps)?;
    let c = g.scale(neg_entropy_sum, config.c2 / total_steps)?;
    let ab = g.add(a, b)?;
    let loss = g.add(ab, c)?;
    let grads = g.backward(loss)?;

    let ratios = g.value(ratio).data();
    let (s1v, s2v) = (g.value(s1).data(), g.value(s2).data());
    let stats = LossStats {
        total: g.value(loss).item(),
        policy: -g.value(surr_sum).item() / total_steps,
        value: g.value(value_sum).item() / total_steps,
        entropy: -g.value(neg_entropy_sum).item() / total_steps,
        max_ratio_deviation: ratios.iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max),
        clip_fraction: s1v.iter().zip(s2v).filter(|(a, b)| b < a).count() as f64 / total_steps,
        steps: n,
    };
    let grads = (0..policy.params.len()).map(|i| grads.param(ParamId(i)).expect("registered").clone()).collect();
    Ok(EpisodeLoss { grads, stats })
}

/// Clipped-surrogate, value and entropy loss over a batch of episodes, with its
/// gradient.
///
/// Advantages are normalized over the batch inside the call. Every term is a
/// mean over all steps of the batch. Episodes are differentiated in parallel and
/// their gradients summed in batch order, so the result does not depend on the
/// thread count. `train` enables dropout; `seed` drives its masks.
pub fn ppo_loss(
    policy: &TransformerPolicy,
    batch: &[&Trajectory],
    advantages: &[Vec<f64>],
    returns: &[Vec<f64>],
    config: &TrainConfig,
    train: bool,
    seed: u64,
) -> Result<LossOutput, PpoError> {
    if batch.len() != advantages.len() || batch.len() != returns.len() {
        return Err(PpoError::LengthMismatch("batch, advantages and returns differ in episode count".into()));
    }
    for ((ep, a), r) in batch.iter().zip(advantages).zip(returns) {
        if a.len() != ep.len() || r.len() != ep.len() {
            return Err(PpoError::LengthMismatch("advantages or returns disagree with episode length".into()));
        }
    }
    let total_steps = batch.iter().map(|e| e.len()).sum::<usize>();
    if total_steps == 0 {
        return Err(PpoError::LengthMismatch("empty batch".into()));
    }
    let adv = normalize(advantages);
    let parts: Vec<Result<EpisodeLoss, PpoError>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, ep)| {
            episode_loss(policy, ep, &adv[i], &returns[i], total_steps as f64, config, train, derive_seed(&[seed, i as u64]))
        })
        .collect();
    let mut grads: Vec<Tensor> = policy.params.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect();
    let mut stats = LossStats { steps: total_steps, ..LossStats::default() };
    let mut clipped = 0.0;
    for part in parts {
        let part = part?;
        for (acc, g) in grads.iter_mut().zip(&part.grads) {
            acc.add_assign(g);
        }
        stats.total += part.stats.total;
        stats.policy += part.stats.policy;
        stats.value += part.stats.value;
        stats.entropy += part.stats.entropy;
        stats.max_ratio_deviation = stats.max_ratio_deviation.max(part.stats.max_ratio_deviation);
        clipped += part.stats.clip_fraction;
    }
    stats.clip_fraction = clipped;
    if !stats.total.is_finite() || !grads.iter().all(Tensor::all_finite) {
        return Err(PpoError::NonFinite("loss".into()));
    }
    Ok(LossOutput { stats, grads })
}

/// Optimizer moments, one tensor per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    /// Adagrad accumulator, or Adam's first moment.
    pub first: Vec<Tensor>,
    /// Adam's second moment; unused by Adagrad.
    pub second: Vec<Tensor>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, policy: &TransformerPolicy) -> Self {
        let zeros: Vec<Tensor> = policy.params.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect();
        OptimizerState { kind, first: zeros.clone(), second: zeros, step: 0 }
    }

    /// Applies one descent step, the value head with `lr_value` and everything else with `lr_policy`.
    pub fn apply(&mut self, policy: &mut TransformerPolicy, grads: &[Tensor], lr_policy: f64, lr_value: f64) -> Result<(), PpoError> {
        if grads.len() != policy.params.len() {
            return Err(PpoError::LengthMismatch("gradient count".into()));
        }
        self.step += 1;
        for (i, grad) in grads.iter().enumerate() {
            let lr = match policy.params.group(ParamId(i)) {
                ParamGroup::Policy => lr_policy,
                ParamGroup::Value => lr_value,
            };
            let p = std::slice::from_mut(&mut policy.params.tensors[i]);
            let g = std::slice::from_ref(grad);
            match self.kind {
                OptimizerKind::Adagrad => adagrad_update(p, g, std::slice::from_mut(&mut self.first[i]), lr)?,
                OptimizerKind::Adam => adam_update(
                    p,
                    g,
                    std::slice::from_mut(&mut self.first[i]),
                    std::slice::from_mut(&mut self.second[i]),
                    self.step,
                    lr,
                    AdamHyper::default(),
                )?,
            }
        }
        if !policy.params.all_finite() {
            return Err(PpoError::NonFinite("parameters after update".into()));
        }
        Ok(())
    }

    pub fn to_tensor_sets(&self, policy: &TransformerPolicy) -> Vec<(String, TensorSet)> {
        let named = |ts: &[Tensor]| TensorSet { entries: policy.params.names.iter().cloned().zip(ts.iter().cloned()).collect() };
        vec![("optim.first".to_string(), named(&self.first)), ("optim.second".to_string(), named(&self.second))]
    }
}

/// Training DAGs plus what is needed to turn one into an episode.
#[derive(Debug, Clone)]
pub struct TaskPool {
    pub graphs: Vec<TaskGraph>,
    pub bounds: EmbeddingBounds,
    /// Device and edge settings; rates are replaced per learning task.
    pub base_profile: SystemProfile,
    pub index_len: usize,
}

impl TaskPool {
    pub fn new(graphs: Vec<TaskGraph>, bounds: EmbeddingBounds) -> Self {
        TaskPool { graphs, bounds, base_profile: SystemProfile::reference(10.0), index_len: DEFAULT_INDEX_LEN }
    }

    pub fn context(&self, graph: usize, rate_mbps: f64) -> Result<Arc<EpisodeContext>, PpoError> {
        let profile = self.base_profile.with_rate_mbps(rate_mbps)?;
        Ok(Arc::new(EpisodeContext::new(self.graphs[graph].clone(), profile, &self.bounds, self.index_len)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    /// Mean latency of the iteration's sampled trajectories, ms.
    pub mean_al_ms: f64,
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

pub const METRICS_HEADER: &str = "iteration,mean_AL_ms,loss,policy_loss,value_loss,entropy,clip_fraction";

impl IterationMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.iteration, self.mean_al_ms, self.loss, self.policy_loss, self.value_loss, self.entropy, self.clip_fraction
        )
    }
}

pub fn metrics_csv(metrics: &[IterationMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in metrics {
        out.push_str(&m.csv_row());
        out.push('\n');
    }
    out
}

/// Collects one iteration's trajectories under the current parameters.
pub fn collect(policy: &TransformerPolicy, pool: &TaskPool, config: &TrainConfig, iteration: usize) -> Result<Vec<Trajectory>, PpoError> {
    let mut pick = rng::seeded(derive_seed(&[config.seed, iteration as u64, 0x7a5c]));
    let mut jobs = Vec::with_capacity(config.tasks_per_iter * config.trajectories_per_task);
    for k in 0..config.tasks_per_iter {
        let graph = rng::index(&mut pick, pool.graphs.len());
        let rate = config.rates_mbps[rng::index(&mut pick, config.rates_mbps.len())];
        let ctx = pool.context(graph, rate)?;
        for j in 0..config.trajectories_per_task {
            jobs.push((ctx.clone(), derive_seed(&[config.seed, iteration as u64, k as u64, j as u64])));
        }
    }
    jobs.into_par_iter().map(|(ctx, seed)| rollout(policy, ctx, seed, false)).collect()
}

/// Trains `policy` in place and returns per-iteration metrics.
///
/// `on_iteration` sees each iteration's metrics and the updated policy, which is
/// where callers write checkpoints and logs.
pub fn train(
    policy: &mut TransformerPolicy,
    pool: &TaskPool,
    config: &TrainConfig,
    optimizer: &mut OptimizerState,
    mut on_iteration: impl FnMut(&IterationMetrics, &TransformerPolicy) -> Result<(), PpoError>,
) -> Result<Vec<IterationMetrics>, PpoError> {
    config.validate()?;
    if pool.graphs.is_empty() {
        return Err(PpoError::EmptyDataset);
    }
    let mut history = Vec::with_capacity(config.iterations);
    for iteration in 0..config.iterations {
        let trajectories = collect(policy, pool, config, iteration)?;
        for t in &trajectories {
            t.validate()?;
        }
        let refs: Vec<&Trajectory> = trajectories.iter().collect();
        let targets = Targets::compute(&refs, config)?;
        let mean_steps = refs.iter().map(|t| t.len()).sum::<usize>() as f64 / refs.len() as f64;
        let per_batch = ((config.batch_size as f64 / mean_steps).round() as usize).max(1);

        let mut order: Vec<usize> = (0..refs.len()).collect();
        let mut sums = LossStats::default();
        let mut updates = 0usize;
        for epoch in 0..config.epochs_per_iter {
            rng::shuffle(&mut rng::seeded(derive_seed(&[config.seed, iteration as u64, epoch as u64, 0x5eed])), &mut order);
            for (b, chunk) in order.chunks(per_batch).enumerate() {
                let batch: Vec<&Trajectory> = chunk.iter().map(|&i| refs[i]).collect();
                let adv: Vec<Vec<f64>> = chunk.iter().map(|&i| targets.advantages[i].clone()).collect();
                let ret: Vec<Vec<f64>> = chunk.iter().map(|&i| targets.returns[i].clone()).collect();
                let seed = derive_seed(&[config.seed, iteration as u64, epoch as u64, b as u64]);
                let out = ppo_loss(policy, &batch, &adv, &ret, config, config.update_dropout, seed)?;
                optimizer.apply(policy, &out.grads, config.lr_policy, config.lr_value)?;
                sums.total += out.stats.total;
                sums.policy += out.stats.policy;
                sums.value += out.stats.value;
                sums.entropy += out.stats.entropy;
                sums.clip_fraction += out.stats.clip_fraction;
                updates += 1;
            }
        }
        let u = updates as f64;
        let metrics = IterationMetrics {
            iteration,
            mean_al_ms: 1e3 * trajectories.iter().map(|t| t.latency).sum::<f64>() / trajectories.len() as f64,
            loss: sums.total / u,
            policy_loss: sums.policy / u,
            value_loss: sums.value / u,
            entropy: sums.entropy / u,
            clip_fraction: sums.clip_fraction / u,
        };
        on_iteration(&metrics, policy)?;
        history.push(metrics);
    }
    Ok(history)
}

/// Evaluation of one DAG at one rate, milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DagEvaluation {
    pub graph: usize,
    pub rate_mbps: f64,
    /// Best of the sampled trajectories and the greedy rollout.
    pub best_ms: f64,
    /// Mean over the sampled trajectories.
    pub mean_ms: f64,
    pub greedy_ms: f64,
}

/// Samples `trajectories` episodes and one greedy rollout per DAG at `rate_mbps`.
pub fn evaluate(
    policy: &TransformerPolicy,
    pool: &TaskPool,
    rate_mbps: f64,
    trajectories: usize,
    seed: u64,
) -> Result<Vec<DagEvaluation>, PpoError> {
    (0..pool.graphs.len())
        .into_par_iter()
        .map(|graph| {
            let ctx = pool.context(graph, rate_mbps)?;
            let greedy = rollout(policy, ctx.clone(), 0, true)?.latency;
            let mut best = greedy;
            let mut sum = 0.0;
            for j in 0..trajectories {
                let t = rollout(policy, ctx.clone(), derive_seed(&[seed, graph as u64, j as u64]), false)?;
                best = best.min(t.latency);
                sum += t.latency;
            }
            let mean = if trajectories == 0 { greedy } else { sum / trajectories as f64 };
            Ok(DagEvaluation { graph, rate_mbps, best_ms: best * 1e3, mean_ms: mean * 1e3, greedy_ms: greedy * 1e3 })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{generate_dag, GeneratorConfig};
    use crate::policy::PolicyConfig;

    fn tiny_policy() -> TransformerPolicy {
        TransformerPolicy::new(PolicyConfig { layers: 1, heads: 2, d_model: 16, d_k: 8, d_v: 8, d_ff: 32, ..PolicyConfig::toy() })
            .unwrap()
    }

    fn pool(count: usize, n: usize) -> TaskPool {
        let cfg = GeneratorConfig { n, ..GeneratorConfig::default() };
        let graphs = (0..count).map(|i| generate_dag(&GeneratorConfig { seed: i as u64, ..cfg }).unwrap()).collect();
        TaskPool::new(graphs, cfg.embedding_bounds())
    }

    #[test]
    fn gae_lambda_zero_is_td_error() {
        let (a, r) = compute_gae(&[1.0, 2.0], &[0.5, 0.25, 0.0], 0.9, 0.0).unwrap();
        assert_eq!(a, vec![1.0 + 0.9 * 0.25 - 0.5, 2.0 - 0.25]);
        assert_eq!(r[1], 2.0);
    }

    #[test]
    fn gae_rejects_missing_bootstrap() {
        assert!(matches!(compute_gae(&[1.0], &[0.0], 0.9, 0.9), Err(PpoError::LengthMismatch(_))));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::toy().validate().is_ok());
        assert!(TrainConfig::paper().validate().is_ok());
        assert!(TrainConfig { gamma: 0.0, ..TrainConfig::toy() }.validate().is_err());
        assert!(TrainConfig { lambda: 1.5, ..TrainConfig::toy() }.validate().is_err());
        assert!(TrainConfig { clip_eps: 0.0, ..TrainConfig::toy() }.validate().is_err());
        assert!(TrainConfig { rates_mbps: vec![], ..TrainConfig::toy() }.validate().is_err());
    }

    #[test]
    fn rollout_reward_sums_to_minus_latency() {
        let policy = tiny_policy();
        let p = pool(1, 8);
        let t = rollout(&policy, p.context(0, 10.0).unwrap(), 3, false).unwrap();
        t.validate().unwrap();
        assert!((t.rewards.iter().sum::<f64>() + t.latency).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let mut policy = tiny_policy();
        let before = policy.params.clone();
        let config = TrainConfig { iterations: 1, lr_policy: 0.0, lr_value: 0.0, tasks_per_iter: 2, trajectories_per_task: 2, ..TrainConfig::toy() };
        let mut opt = OptimizerState::new(config.optimizer, &policy);
        let m = train(&mut policy, &pool(3, 6), &config, &mut opt, |_, _| Ok(())).unwrap();
        assert_eq!(m.len(), 1);
        assert!(m[0].mean_al_ms > 0.0);
        assert_eq!(policy.params, before);
    }

    #[test]
    fn identity_ratios_at_sampling_parameters() {
        let policy = tiny_policy();
        let p = pool(2, 7);
        let trajs: Vec<Trajectory> = (0..3).map(|s| rollout(&policy, p.context(s % 2, 7.0).unwrap(), s as u64, false).unwrap()).collect();
        let refs: Vec<&Trajectory> = trajs.iter().collect();
        let config = TrainConfig::toy();
        let t = Targets::compute(&refs, &config).unwrap();
        let out = ppo_loss(&policy, &refs, &t.advantages, &t.returns, &config, false, 0).unwrap();
        assert!(out.stats.max_ratio_deviation < 1e-12);
        assert_eq!(out.stats.clip_fraction, 0.0);
    }

    #[test]
    fn empty_pool_rejected() {
        let mut policy = tiny_policy();
        let config = TrainConfig { iterations: 1, ..TrainConfig::toy() };
        let mut opt = OptimizerState::new(config.optimizer, &policy);
        let empty = TaskPool::new(vec![], GeneratorConfig::default().embedding_bounds());
        assert!(matches!(train(&mut policy, &empty, &config, &mut opt, |_, _| Ok(())), Err(PpoError::EmptyDataset)));
    }

    #[test]
    fn greedy_evaluation_bounds_best() {
        let policy = tiny_policy();
        let rows = evaluate(&policy, &pool(3, 6), 8.5, 4, 1).unwrap();
        for r in rows {
            assert!(r.best_ms <= r.greedy_ms);
            assert!(r.best_ms <= r.mean_ms + 1e-12);
        }
    }
}
