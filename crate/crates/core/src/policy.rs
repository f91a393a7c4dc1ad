//! Transformer-encoder actor-critic over the ranked task sequence.
//!
//! Token `i` is the projected task embedding plus a learned decision token
//! (undecided, local or offload) plus a sinusoidal position code. Pre-norm
//! encoder layers follow, then a final layer norm and two per-position heads:
//! the actor emits two logits, the critic one value.
//!
//! With the causal mask on, the output at position `t` only sees tokens
//! `0..=t`. [`TransformerPolicy::episode_outputs`] uses that to score every
//! step of an episode in one pass: the sequence is doubled into decided
//! tokens (what later steps see) and undecided tokens (what step `t` itself
//! sees), and the attention mask lets undecided token `t` read decided tokens
//! `< t` and itself.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AdError, Checkpoint, Graph, ParamId, Tensor, TensorSet, Var};
use crate::dag::TaskEmbedding;
use crate::rng::{self, derive_seed, Rng};
use crate::sim::{Decision, EnvState, SystemProfile};

/// Rates are scaled into `[0, 1]` over this span before entering the network.
pub const RATE_SPAN_MBPS: (f64, f64) = (4.0, 22.0);

const UNDECIDED: usize = 0;
const MASKED_SCORE: f64 = -1e30;
const LN_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("invalid policy config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint does not match the policy: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    /// Key width per head.
    pub d_k: usize,
    /// Value width per head.
    pub d_v: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub action_dim: usize,
    /// Parent/child index vector length of the task embeddings.
    pub index_len: usize,
    /// Position `i` attends only to positions `<= i`.
    pub causal: bool,
    pub init_seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl PolicyConfig {
    /// Small network that trains on a laptop CPU.
    pub fn toy() -> Self {
        PolicyConfig {
            layers: 2,
            heads: 4,
            d_model: 64,
            d_k: 16,
            d_v: 16,
            d_ff: 128,
            dropout: 0.1,
            action_dim: 2,
            index_len: crate::dag::DEFAULT_INDEX_LEN,
            causal: true,
            init_seed: 0,
        }
    }

    /// Hyperparameters of the original large network.
    pub fn paper() -> Self {
        PolicyConfig { layers: 3, heads: 8, d_model: 512, d_k: 1024, d_v: 1024, d_ff: 512, dropout: 0.4, ..Self::toy() }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: &str| Err(PolicyError::InvalidConfig(m.to_string()));
        if self.layers == 0 || self.heads == 0 || self.d_model == 0 || self.d_k == 0 || self.d_v == 0 || self.d_ff == 0 {
            return bad("all sizes must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.action_dim != 2 {
            return bad("actions are binary");
        }
        if self.index_len == 0 {
            return bad("index_len must be positive");
        }
        Ok(())
    }

    /// Width of one input row: five profile features, two index vectors, two rates.
    pub fn input_width(&self) -> usize {
        5 + 2 * self.index_len + 2
    }
}

/// Which optimizer group a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// Encoder, input projection, decision tokens and actor head.
    Policy,
    /// Critic head.
    Value,
}

#[derive(Debug, Clone, Copy)]
struct LayerIds {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
struct Layout {
    input_w: ParamId,
    input_b: ParamId,
    decision: ParamId,
    layers: Vec<LayerIds>,
    final_g: ParamId,
    final_b: ParamId,
    actor_w: ParamId,
    actor_b: ParamId,
    critic_w: ParamId,
    critic_b: ParamId,
}

/// All weights as an ordered list of named tensors; `ParamId(i)` indexes it.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl PolicyParams {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn group(&self, id: ParamId) -> ParamGroup {
        if self.names[id.0].starts_with("critic.") {
            ParamGroup::Value
        } else {
            ParamGroup::Policy
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    pub fn to_tensor_set(&self) -> TensorSet {
        TensorSet { entries: self.names.iter().cloned().zip(self.tensors.iter().cloned()).collect() }
    }
}

struct Builder {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    rng: Rng,
}

impl Builder {
    fn add(&mut self, name: String, t: Tensor) -> ParamId {
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    fn uniform(&mut self, name: String, rows: usize, cols: usize, bound: f64) -> ParamId {
        let data = (0..rows * cols).map(|_| rng::uniform(&mut self.rng, -bound, bound)).collect();
        self.add(name, Tensor::matrix(rows, cols, data).expect("sized"))
    }

    fn xavier(&mut self, name: String, rows: usize, cols: usize) -> ParamId {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        self.uniform(name, rows, cols, bound)
    }

    fn row(&mut self, name: String, cols: usize, value: f64) -> ParamId {
        self.add(name, Tensor::full(&[1, cols], value))
    }
}

fn layout(config: &PolicyConfig, seed: u64) -> (Layout, PolicyParams) {
    let d = config.d_model;
    let mut b = Builder { names: Vec::new(), tensors: Vec::new(), rng: rng::seeded(seed) };
    let input_w = b.xavier("input.w".into(), config.input_width(), d);
    let input_b = b.row("input.b".into(), d, 0.0);
    let decision = b.uniform("decision.table".into(), 3, d, 0.05);
    let mut layers = Vec::with_capacity(config.layers);
    for l in 0..config.layers {
        let p = |s: &str| format!("layer{l}.{s}");
        layers.push(LayerIds {
            ln1_g: b.row(p("ln1.g"), d, 1.0),
            ln1_b: b.row(p("ln1.b"), d, 0.0),
            wq: b.xavier(p("attn.wq"), d, config.heads * config.d_k),
            wk: b.xavier(p("attn.wk"), d, config.heads * config.d_k),
            wv: b.xavier(p("attn.wv"), d, config.heads * config.d_v),
            wo: b.xavier(p("attn.wo"), config.heads * config.d_v, d),
            bo: b.row(p("attn.bo"), d, 0.0),
            ln2_g: b.row(p("ln2.g"), d, 1.0),
            ln2_b: b.row(p("ln2.b"), d, 0.0),
            w1: b.xavier(p("ff.w1"), d, config.d_ff),
            b1: b.row(p("ff.b1"), config.d_ff, 0.0),
            w2: b.xavier(p("ff.w2"), config.d_ff, d),
            b2: b.row(p("ff.b2"), d, 0.0),
        });
    }
    let final_g = b.row("final_ln.g".into(), d, 1.0);
    let final_b = b.row("final_ln.b".into(), d, 0.0);
    // Small heads keep the untrained policy close to uniform.
    let head = 0.01 * (6.0 / (d + 2) as f64).sqrt();
    let actor_w = b.uniform("actor.w".into(), d, config.action_dim, head);
    let actor_b = b.row("actor.b".into(), config.action_dim, 0.0);
    let critic_w = b.uniform("critic.w".into(), d, 1, head);
    let critic_b = b.row("critic.b".into(), 1, 0.0);
    let ids = Layout { input_w, input_b, decision, layers, final_g, final_b, actor_w, actor_b, critic_w, critic_b };
    (ids, PolicyParams { names: b.names, tensors: b.tensors })
}

/// Network input rows for a ranked sequence of embeddings.
pub fn input_features(embeddings: &[TaskEmbedding], profile: &SystemProfile, index_len: usize) -> Tensor {
    let n = embeddings.len();
    let span = RATE_SPAN_MBPS.1 - RATE_SPAN_MBPS.0;
    let rate = |bps: f64| (bps / 1e6 - RATE_SPAN_MBPS.0) / span;
    let mut data = Vec::with_capacity(n * (5 + 2 * index_len + 2));
    for (i, e) in embeddings.iter().enumerate() {
        data.extend_from_slice(&e.profile);
        for list in [&e.parents, &e.children] {
            for slot in 0..index_len {
                let p = list.get(slot).copied().unwrap_or(crate::dag::PAD);
                data.push(if p < 0 { 0.0 } else { (p - i as i64).unsigned_abs() as f64 / n as f64 });
            }
        }
        data.push(rate(profile.rate_up));
        data.push(rate(profile.rate_do));
    }
    Tensor::matrix(n, 5 + 2 * index_len + 2, data).expect("sized")
}

fn positional_encoding(positions: &[usize], d: usize) -> Tensor {
    let mut data = Vec::with_capacity(positions.len() * d);
    for &pos in positions {
        for j in 0..d {
            let freq = 1.0 / 10000f64.powf((2 * (j / 2)) as f64 / d as f64);
            let angle = pos as f64 * freq;
            data.push(if j % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::matrix(positions.len(), d, data).expect("sized")
}

/// Per-position action logits and state values.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    /// `n x 2`.
    pub logits: Tensor,
    /// `n x 1`.
    pub values: Tensor,
}

impl PolicyOutput {
    /// Softmax of the logits at `row`.
    pub fn probs(&self, row: usize) -> [f64; 2] {
        let (a, b) = (self.logits.at(row, 0), self.logits.at(row, 1));
        let m = a.max(b);
        let (ea, eb) = ((a - m).exp(), (b - m).exp());
        [ea / (ea + eb), eb / (ea + eb)]
    }
}

/// Graph handles for the outputs of a forward pass.
#[derive(Debug, Clone, Copy)]
pub struct OutputVars {
    pub logits: Var,
    pub values: Var,
}

/// Handles of every parameter once registered on a graph.
struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    fn v(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

/// Chosen action with its log-probability and the critic's estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActOutcome {
    pub decision: Decision,
    pub log_prob: f64,
    pub value: f64,
    pub probs: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct TransformerPolicy {
    pub config: PolicyConfig,
    pub params: PolicyParams,
    layout: Layout,
}

impl TransformerPolicy {
    pub fn new(config: PolicyConfig) -> Result<Self, PolicyError> {
        config.validate()?;
        let (layout, params) = layout(&config, derive_seed(&[config.init_seed, 0x1417]));
        Ok(TransformerPolicy { config, params, layout })
    }

    pub fn param_count(&self) -> usize {
        self.params.tensors.iter().map(Tensor::numel).sum()
    }

    fn bind(&self, g: &mut Graph) -> Bound {
        Bound { vars: (0..self.params.len()).map(|i| g.param(ParamId(i), &self.params.tensors[i])).collect() }
    }

    fn layer_norm(&self, g: &mut Graph, x: Var, gain: Var, bias: Var) -> Result<Var, AdError> {
        let n = g.layer_norm(x, 1, LN_EPS)?;
        let s = g.mul(n, gain)?;
        g.add(s, bias)
    }

    /// Token matrix for the given decision token indices (0 undecided, 1 local, 2 offload).
    fn tokens(&self, g: &mut Graph, p: &Bound, features: Var, decisions: &[usize], positions: &[usize]) -> Result<Var, AdError> {
        let x = g.matmul(features, p.v(self.layout.input_w))?;
        let x = g.add(x, p.v(self.layout.input_b))?;
        let dec = g.embedding(p.v(self.layout.decision), decisions)?;
        let x = g.add(x, dec)?;
        let pe = g.constant(positional_encoding(positions, self.config.d_model));
        g.add(x, pe)
    }

    /// Encoder stack plus heads. `mask[i * m + j]` allows row `i` to read row `j`; `None` means full attention.
    fn encode(
        &self,
        g: &mut Graph,
        p: &Bound,
        mut h: Var,
        mask: Option<&[bool]>,
        train: bool,
        seed: u64,
    ) -> Result<OutputVars, AdError> {
        let c = &self.config;
        let m = g.value(h).rows();
        let neg = mask.map(|_| Tensor::full(&[m, m], MASKED_SCORE));
        let scale = 1.0 / (c.d_k as f64).sqrt();
        for (l, ids) in self.layout.layers.iter().enumerate() {
            let a = self.layer_norm(g, h, p.v(ids.ln1_g), p.v(ids.ln1_b))?;
            let q = g.matmul(a, p.v(ids.wq))?;
            let k = g.matmul(a, p.v(ids.wk))?;
            let v = g.matmul(a, p.v(ids.wv))?;
            let mut heads = Vec::with_capacity(c.heads);
            for hd in 0..c.heads {
                let qh = g.slice(q, 1, hd * c.d_k, c.d_k)?;
                let kh = g.slice(k, 1, hd * c.d_k, c.d_k)?;
                let vh = g.slice(v, 1, hd * c.d_v, c.d_v)?;
                let kt = g.transpose(kh)?;
                let raw = g.matmul(qh, kt)?;
                let mut scores = g.scale(raw, scale)?;
                if let (Some(mask), Some(neg)) = (mask, &neg) {
                    let fill = g.constant(neg.clone());
                    scores = g.select(mask, scores, fill)?;
                }
                let w = g.softmax(scores, 1)?;
                heads.push(g.matmul(w, vh)?);
            }
            let cat = if heads.len() == 1 { heads[0] } else { g.concat(&heads, 1)? };
            let o = g.matmul(cat, p.v(ids.wo))?;
            let o = g.add(o, p.v(ids.bo))?;
            let o = g.dropout(o, c.dropout, train, derive_seed(&[seed, l as u64, 0]))?;
            h = g.add(h, o)?;

            let f = self.layer_norm(g, h, p.v(ids.ln2_g), p.v(ids.ln2_b))?;
            let f = g.matmul(f, p.v(ids.w1))?;
            let f = g.add(f, p.v(ids.b1))?;
            let f = g.relu(f)?;
            let f = g.matmul(f, p.v(ids.w2))?;
            let f = g.add(f, p.v(ids.b2))?;
            let f = g.dropout(f, c.dropout, train, derive_seed(&[seed, l as u64, 1]))?;
            h = g.add(h, f)?;
        }
        let h = self.layer_norm(g, h, p.v(self.layout.final_g), p.v(self.layout.final_b))?;
        let logits = g.matmul(h, p.v(self.layout.actor_w))?;
        let logits = g.add(logits, p.v(self.layout.actor_b))?;
        let values = g.matmul(h, p.v(self.layout.critic_w))?;
        let values = g.add(values, p.v(self.layout.critic_b))?;
        Ok(OutputVars { logits, values })
    }

    fn causal_mask(m: usize) -> Vec<bool> {
        (0..m * m).map(|idx| idx % m <= idx / m).collect()
    }

    /// Records a forward pass for one state on `g`.
    ///
    /// `plan` holds the decisions taken so far; positions at or beyond
    /// `plan.len()` carry the undecided token.
    pub fn forward_on(
        &self,
        g: &mut Graph,
        features: &Tensor,
        plan: &[Decision],
        train: bool,
        seed: u64,
    ) -> Result<OutputVars, AdError> {
        let n = features.rows();
        let p = self.bind(g);
        let f = g.constant(features.clone());
        let decisions: Vec<usize> = (0..n).map(|i| plan.get(i).map_or(UNDECIDED, |d| 1 + d.bit() as usize)).collect();
        let positions: Vec<usize> = (0..n).collect();
        let h = self.tokens(g, &p, f, &decisions, &positions)?;
        let mask = self.config.causal.then(|| Self::causal_mask(n));
        self.encode(g, &p, h, mask.as_deref(), train, seed)
    }

    /// Logits `n x 2` and values `n x 1` for one state.
    pub fn forward(
        &self,
        embeddings: &[TaskEmbedding],
        profile: &SystemProfile,
        plan: &[Decision],
        train: bool,
        seed: u64,
    ) -> Result<PolicyOutput, PolicyError> {
        if embeddings.is_empty() {
            return Err(PolicyError::InvalidConfig("empty task sequence".into()));
        }
        self.forward_features(&input_features(embeddings, profile, self.config.index_len), plan, train, seed)
    }

    /// [`Self::forward`] on prepared input rows.
    pub fn forward_features(&self, features: &Tensor, plan: &[Decision], train: bool, seed: u64) -> Result<PolicyOutput, PolicyError> {
        let mut g = Graph::new();
        let out = self.forward_on(&mut g, features, plan, train, seed)?;
        Ok(PolicyOutput { logits: g.value(out.logits).clone(), values: g.value(out.values).clone() })
    }

    /// Records per-step outputs for a whole episode: row `t` holds the logits and
    /// value the policy produces in the state before decision `t`.
    pub fn episode_on(
        &self,
        g: &mut Graph,
        features: &Tensor,
        plan: &[Decision],
        train: bool,
        seed: u64,
    ) -> Result<OutputVars, AdError> {
        let n = features.rows();
        if plan.len() != n {
            return Err(AdError::ShapeMismatch(format!("episode has {} decisions for {n} tasks", plan.len())));
        }
        if !self.config.causal {
            return self.episode_stepwise(g, features, plan, train, seed);
        }
        let p = self.bind(g);
        let f = g.constant(features.clone());
        let both = g.concat(&[f, f], 0)?;
        let mut decisions: Vec<usize> = plan.iter().map(|d| 1 + d.bit() as usize).collect();
        decisions.extend(std::iter::repeat_n(UNDECIDED, n));
        let positions: Vec<usize> = (0..n).chain(0..n).collect();
        let h = self.tokens(g, &p, both, &decisions, &positions)?;
        let m = 2 * n;
        let mut mask = vec![false; m * m];
        for i in 0..n {
            // decided token i: causal over decided tokens
            for j in 0..=i {
                mask[i * m + j] = true;
            }
            // undecided token i: decided tokens before it, and itself
            for j in 0..i {
                mask[(n + i) * m + j] = true;
            }
            mask[(n + i) * m + n + i] = true;
        }
        let out = self.encode(g, &p, h, Some(&mask), train, seed)?;
        Ok(OutputVars { logits: g.slice(out.logits, 0, n, n)?, values: g.slice(out.values, 0, n, n)? })
    }

    fn episode_stepwise(
        &self,
        g: &mut Graph,
        features: &Tensor,
        plan: &[Decision],
        train: bool,
        seed: u64,
    ) -> Result<OutputVars, AdError> {
        let n = plan.len();
        let mut logits = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        for t in 0..n {
            let out = self.forward_on(g, features, &plan[..t], train, derive_seed(&[seed, t as u64]))?;
            logits.push(g.slice(out.logits, 0, t, 1)?);
            values.push(g.slice(out.values, 0, t, 1)?);
        }
        Ok(OutputVars { logits: g.concat(&logits, 0)?, values: g.concat(&values, 0)? })
    }

    /// Picks the decision for the task at the state's cursor.
    ///
    /// Samples from the actor's distribution, or takes the most likely action when
    /// `greedy` is set (ties go to local).
    pub fn act(&self, state: &EnvState, rng: &mut Rng, greedy: bool) -> Result<ActOutcome, PolicyError> {
        let cursor = state.cursor();
        if state.is_done() {
            return Err(PolicyError::EpisodeFinished);
        }
        let ctx = &state.ctx;
        let features = input_features(&ctx.embeddings, &ctx.profile, self.config.index_len);
        // Under the causal mask the rows up to the cursor determine the output.
        let features = if self.config.causal { features.head_rows(cursor + 1) } else { features };
        let out = self.forward_features(&features, &state.plan.0, false, 0)?;
        let probs = out.probs(cursor);
        let decision = if greedy {
            if probs[1] > probs[0] {
                Decision::Offload
            } else {
                Decision::Local
            }
        } else if rng::uniform01(rng) < probs[1] {
            Decision::Offload
        } else {
            Decision::Local
        };
        let (a, b) = (out.logits.at(cursor, 0), out.logits.at(cursor, 1));
        let m = a.max(b);
        let lse = m + ((a - m).exp() + (b - m).exp()).ln();
        let chosen = if decision == Decision::Offload { b } else { a };
        Ok(ActOutcome { decision, log_prob: chosen - lse, value: out.values.at(cursor, 0), probs })
    }

    pub fn to_checkpoint(&self, extra: Vec<(String, TensorSet)>) -> Checkpoint {
        let meta = serde_json::to_string(&self.config).expect("config serializes");
        let mut sections = vec![("params".to_string(), self.params.to_tensor_set())];
        sections.extend(extra);
        Checkpoint { meta, sections }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, PolicyError> {
        let config: PolicyConfig =
            serde_json::from_str(&ckpt.meta).map_err(|e| PolicyError::Checkpoint(format!("meta: {e}")))?;
        let mut policy = Self::new(config)?;
        let set = ckpt.section("params").ok_or_else(|| PolicyError::Checkpoint("missing params section".into()))?;
        if set.entries.len() != policy.params.len() {
            return Err(PolicyError::Checkpoint(format!(
                "expected {} tensors, found {}",
                policy.params.len(),
                set.entries.len()
            )));
        }
        for (i, (name, t)) in set.entries.iter().enumerate() {
            if *name != policy.params.names[i] || t.shape() != policy.params.tensors[i].shape() {
                return Err(PolicyError::Checkpoint(format!("tensor {i} is {name} {:?}", t.shape())));
            }
            if !t.all_finite() {
                return Err(PolicyError::Checkpoint(format!("{name} holds non-finite values")));
            }
            policy.params.tensors[i] = t.clone();
        }
        Ok(policy)
    }
}
