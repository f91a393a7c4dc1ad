//! Test-only reference implementations, written independently of the library.

#![allow(dead_code)]

use std::collections::HashMap;

use dagoffload::autodiff::{AdError, Graph, ParamId, Tensor, Var};
use dagoffload::dag::{RankedSequence, Task, TaskGraph};
use dagoffload::generator::{generate_dag, GeneratorConfig};
use dagoffload::sim::SystemProfile;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum Res {
    Device,
    Uplink,
    Edge,
    Downlink,
}

/// Recursive recomputation of the finish-time recurrences.
///
/// `ft(task, r)` is the finish time of `task` on resource `r` (0 when the task
/// does not use it). A resource serves tasks one at a time in rank order, so
/// the earliest a task can start on it is the largest finish time of any
/// earlier-ranked task on that resource.
pub struct ReferenceModel<'a> {
    graph: &'a TaskGraph,
    position: Vec<usize>,
    order: &'a [usize],
    offload: Vec<bool>,
    profile: &'a SystemProfile,
    memo: HashMap<(usize, Res), f64>,
}

impl<'a> ReferenceModel<'a> {
    pub fn new(graph: &'a TaskGraph, seq: &'a RankedSequence, bits: &[u8], profile: &'a SystemProfile) -> Self {
        let mut position = vec![0; graph.len()];
        let mut offload = vec![false; graph.len()];
        for (k, &t) in seq.order.iter().enumerate() {
            position[t] = k;
            offload[t] = bits[k] == 1;
        }
        ReferenceModel { graph, position, order: &seq.order, offload, profile, memo: HashMap::new() }
    }

    fn uses(&self, task: usize, r: Res) -> bool {
        match r {
            Res::Device => !self.offload[task],
            _ => self.offload[task],
        }
    }

    fn duration(&self, task: usize, r: Res) -> f64 {
        let t: &Task = self.graph.task(task);
        let p = self.profile;
        match r {
            Res::Device => t.cycles / p.device_speed,
            Res::Uplink => t.data_up * 8.0 / p.rate_up,
            Res::Edge => t.cycles / p.edge_speed,
            Res::Downlink => t.data_do * 8.0 / p.rate_do,
        }
    }

    fn busy_until(&mut self, task: usize, r: Res) -> f64 {
        let mut free = 0.0f64;
        for k in 0..self.position[task] {
            let other = self.order[k];
            if self.uses(other, r) {
                free = free.max(self.ft(other, r));
            }
        }
        free
    }

    fn parents_max(&mut self, task: usize, rs: &[Res]) -> f64 {
        let parents = self.graph.parents(task).to_vec();
        let mut m = 0.0f64;
        for p in parents {
            for &r in rs {
                m = m.max(self.ft(p, r));
            }
        }
        m
    }

    pub fn ft(&mut self, task: usize, r: Res) -> f64 {
        if !self.uses(task, r) {
            return 0.0;
        }
        if let Some(&v) = self.memo.get(&(task, r)) {
            return v;
        }
        let ready = match r {
            Res::Device => self.parents_max(task, &[Res::Device, Res::Downlink]),
            Res::Uplink => self.parents_max(task, &[Res::Device, Res::Uplink]),
            Res::Edge => self.ft(task, Res::Uplink).max(self.parents_max(task, &[Res::Edge])),
            Res::Downlink => self.ft(task, Res::Edge),
        };
        let start = ready.max(self.busy_until(task, r));
        let v = start + self.duration(task, r);
        self.memo.insert((task, r), v);
        v
    }

    /// Largest of `max(ft_ud, ft_do)` over exit tasks.
    pub fn latency(&mut self) -> f64 {
        let exits: Vec<usize> = self.graph.exit_tasks().collect();
        let mut al = 0.0f64;
        for e in exits {
            al = al.max(self.ft(e, Res::Device).max(self.ft(e, Res::Downlink)));
        }
        al
    }
}

pub fn reference_latency(graph: &TaskGraph, seq: &RankedSequence, bits: &[u8], profile: &SystemProfile) -> f64 {
    ReferenceModel::new(graph, seq, bits, profile).latency()
}

/// Minimum of the reference latency over all `2^n` plans, smallest plan value on ties.
pub fn brute_force(graph: &TaskGraph, seq: &RankedSequence, profile: &SystemProfile) -> (Vec<u8>, f64) {
    let n = graph.len();
    let mut best = (Vec::new(), f64::INFINITY);
    for value in 0u64..(1 << n) {
        let bits: Vec<u8> = (0..n).map(|k| ((value >> (n - 1 - k)) & 1) as u8).collect();
        let al = reference_latency(graph, seq, &bits, profile);
        if al < best.1 {
            best = (bits, al);
        }
    }
    best
}

/// Random generator config with `n` in `1..=max_n`.
pub fn random_config(seed: u64, max_n: usize) -> GeneratorConfig {
    let mut rng = dagoffload::rng::seeded(seed ^ 0xC0FFEE);
    let pick = |rng: &mut dagoffload::rng::Rng, xs: &[f64]| xs[dagoffload::rng::index(rng, xs.len())];
    GeneratorConfig {
        n: 1 + dagoffload::rng::index(&mut rng, max_n),
        fat: pick(&mut rng, &[0.2, 0.4, 0.6, 0.8, 1.0]),
        density: pick(&mut rng, &[0.1, 0.4, 0.7, 1.0]),
        ccr: dagoffload::rng::uniform(&mut rng, 0.1, 1.0),
        seed,
        ..GeneratorConfig::default()
    }
}

pub fn random_graph(seed: u64, max_n: usize) -> TaskGraph {
    generate_dag(&random_config(seed, max_n)).expect("valid random config")
}

pub fn random_bits(seed: u64, n: usize) -> Vec<u8> {
    let mut rng = dagoffload::rng::seeded(seed ^ 0xB175);
    (0..n).map(|_| dagoffload::rng::index(&mut rng, 2) as u8).collect()
}

/// Largest relative error between two gradients, with a `1e-6` floor on the scale.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Records a computation on the graph from its input variables.
pub type Builder = dyn Fn(&mut Graph, &[Var]) -> Result<Var, AdError>;

/// Deterministic test matrix with entries in roughly `[-1, 1]` kept away from 0.
pub fn test_matrix(rows: usize, cols: usize, salt: u64) -> Tensor {
    let mut rng = dagoffload::rng::seeded(salt);
    let data = (0..rows * cols)
        .map(|_| {
            let x = dagoffload::rng::uniform(&mut rng, 0.1, 1.0);
            if dagoffload::rng::index(&mut rng, 2) == 0 { x } else { -x }
        })
        .collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

/// Scalar `sum(f(inputs) * w)` for fixed pseudo-random weights `w`, and its gradient per input.
fn weighted(inputs: &[Tensor], f: &Builder) -> (f64, Vec<Tensor>) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().enumerate().map(|(i, t)| g.param(ParamId(i), t)).collect();
    let out = f(&mut g, &vars).unwrap();
    let shape = g.value(out).shape().to_vec();
    let mut rng = dagoffload::rng::seeded(99);
    let w: Vec<f64> = (0..g.value(out).numel()).map(|_| dagoffload::rng::uniform(&mut rng, -1.0, 1.0)).collect();
    let wv = g.constant(Tensor::new(&shape, w).unwrap());
    let prod = g.mul(out, wv).unwrap();
    let loss = g.sum(prod).unwrap();
    let grads = g.backward(loss).unwrap();
    let per_input = (0..inputs.len()).map(|i| grads.param(ParamId(i)).unwrap().clone()).collect();
    (g.value(loss).item(), per_input)
}

/// Largest relative error between backward and central differences with step `h`.
pub fn fd_check(inputs: &[Tensor], h: f64, f: &Builder) -> f64 {
    let (_, analytic) = weighted(inputs, f);
    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let shifted = |d: f64| {
                let mut xs = inputs.to_vec();
                xs[i].data_mut()[j] += d;
                weighted(&xs, f).0
            };
            let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
            worst = worst.max(rel_err(analytic[i].data()[j], numeric));
        }
    }
    worst
}

pub type Primitive = (&'static str, Vec<Tensor>, Box<Builder>);

/// One finite-difference case per differentiable primitive and broadcast mode.
pub fn primitive_cases() -> Vec<Primitive> {
    let m = |r, c, s| test_matrix(r, c, s);
    let pos = |r, c, s| {
        let t = test_matrix(r, c, s);
        let data = t.data().iter().map(|x| x.abs() + 0.5).collect();
        Tensor::matrix(r, c, data).unwrap()
    };
    let mask: Vec<bool> = (0..12).map(|i| i % 3 != 0).collect();
    vec![
        ("add", vec![m(3, 4, 1), m(3, 4, 2)], Box::new(|g: &mut Graph, v: &[Var]| g.add(v[0], v[1]))),
        ("add_row", vec![m(3, 4, 1), m(1, 4, 2)], Box::new(|g: &mut Graph, v: &[Var]| g.add(v[0], v[1]))),
        ("add_scalar_operand", vec![m(3, 4, 1), m(1, 1, 2)], Box::new(|g: &mut Graph, v: &[Var]| g.add(v[0], v[1]))),
        ("sub", vec![m(3, 4, 3), m(3, 4, 4)], Box::new(|g: &mut Graph, v: &[Var]| g.sub(v[0], v[1]))),
        ("sub_row", vec![m(3, 4, 3), m(1, 4, 4)], Box::new(|g: &mut Graph, v: &[Var]| g.sub(v[0], v[1]))),
        ("mul", vec![m(3, 4, 5), m(3, 4, 6)], Box::new(|g: &mut Graph, v: &[Var]| g.mul(v[0], v[1]))),
        ("mul_row", vec![m(3, 4, 5), m(1, 4, 6)], Box::new(|g: &mut Graph, v: &[Var]| g.mul(v[0], v[1]))),
        ("mul_scalar_operand", vec![m(3, 4, 5), m(1, 1, 6)], Box::new(|g: &mut Graph, v: &[Var]| g.mul(v[0], v[1]))),
        ("div", vec![m(3, 4, 7), pos(3, 4, 8)], Box::new(|g: &mut Graph, v: &[Var]| g.div(v[0], v[1]))),
        ("div_row", vec![m(3, 4, 7), pos(1, 4, 8)], Box::new(|g: &mut Graph, v: &[Var]| g.div(v[0], v[1]))),
        ("scale", vec![m(2, 3, 9)], Box::new(|g: &mut Graph, v: &[Var]| g.scale(v[0], -1.7))),
        ("add_scalar", vec![m(2, 3, 9)], Box::new(|g: &mut Graph, v: &[Var]| g.add_scalar(v[0], 0.3))),
        ("neg", vec![m(2, 3, 10)], Box::new(|g: &mut Graph, v: &[Var]| g.neg(v[0]))),
        ("matmul", vec![m(3, 4, 11), m(4, 2, 12)], Box::new(|g: &mut Graph, v: &[Var]| g.matmul(v[0], v[1]))),
        ("transpose", vec![m(3, 4, 13)], Box::new(|g: &mut Graph, v: &[Var]| g.transpose(v[0]))),
        ("concat_rows", vec![m(2, 3, 14), m(1, 3, 15)], Box::new(|g: &mut Graph, v: &[Var]| g.concat(&[v[0], v[1]], 0))),
        ("concat_cols", vec![m(2, 3, 14), m(2, 2, 15)], Box::new(|g: &mut Graph, v: &[Var]| g.concat(&[v[0], v[1], v[0]], 1))),
        ("slice_rows", vec![m(4, 3, 16)], Box::new(|g: &mut Graph, v: &[Var]| g.slice(v[0], 0, 1, 2))),
        ("slice_cols", vec![m(4, 3, 16)], Box::new(|g: &mut Graph, v: &[Var]| g.slice(v[0], 1, 1, 2))),
        ("sum", vec![m(3, 4, 17)], Box::new(|g: &mut Graph, v: &[Var]| g.sum(v[0]))),
        ("sum_axis0", vec![m(3, 4, 17)], Box::new(|g: &mut Graph, v: &[Var]| g.sum_axis(v[0], 0))),
        ("sum_axis1", vec![m(3, 4, 17)], Box::new(|g: &mut Graph, v: &[Var]| g.sum_axis(v[0], 1))),
        ("mean", vec![m(3, 4, 18)], Box::new(|g: &mut Graph, v: &[Var]| g.mean(v[0]))),
        ("max", vec![m(3, 4, 19)], Box::new(|g: &mut Graph, v: &[Var]| g.max(v[0]))),
        ("exp", vec![m(3, 4, 20)], Box::new(|g: &mut Graph, v: &[Var]| g.exp(v[0]))),
        ("log", vec![pos(3, 4, 21)], Box::new(|g: &mut Graph, v: &[Var]| g.log(v[0]))),
        ("relu", vec![m(3, 4, 22)], Box::new(|g: &mut Graph, v: &[Var]| g.relu(v[0]))),
        ("softmax_axis1", vec![m(3, 4, 23)], Box::new(|g: &mut Graph, v: &[Var]| g.softmax(v[0], 1))),
        ("softmax_axis0", vec![m(3, 4, 23)], Box::new(|g: &mut Graph, v: &[Var]| g.softmax(v[0], 0))),
        ("log_softmax_axis1", vec![m(3, 4, 24)], Box::new(|g: &mut Graph, v: &[Var]| g.log_softmax(v[0], 1))),
        ("log_softmax_axis0", vec![m(3, 4, 24)], Box::new(|g: &mut Graph, v: &[Var]| g.log_softmax(v[0], 0))),
        ("layer_norm_axis1", vec![m(3, 5, 25)], Box::new(|g: &mut Graph, v: &[Var]| g.layer_norm(v[0], 1, 1e-5))),
        ("layer_norm_axis0", vec![m(5, 3, 25)], Box::new(|g: &mut Graph, v: &[Var]| g.layer_norm(v[0], 0, 1e-5))),
        ("dropout", vec![m(4, 6, 26)], Box::new(|g: &mut Graph, v: &[Var]| g.dropout(v[0], 0.3, true, 5))),
        ("embedding", vec![m(3, 4, 27)], Box::new(|g: &mut Graph, v: &[Var]| g.embedding(v[0], &[2, 0, 2, 1]))),
        ("clip", vec![m(3, 4, 28)], Box::new(|g: &mut Graph, v: &[Var]| g.clip(v[0], -0.5, 0.5))),
        ("minimum", vec![m(3, 4, 29), m(3, 4, 30)], Box::new(|g: &mut Graph, v: &[Var]| g.minimum(v[0], v[1]))),
        ("select", vec![m(3, 4, 31), m(3, 4, 32)], Box::new(move |g: &mut Graph, v: &[Var]| g.select(&mask, v[0], v[1]))),
    ]
}

use dagoffload::policy::{PolicyConfig, TransformerPolicy};
use dagoffload::ppo::{ppo_loss, rollout, OptimizerState, TaskPool, Targets, TrainConfig, Trajectory};
use dagoffload::sim::Decision;

pub fn training_pool(count: usize, n: usize, seed: u64) -> TaskPool {
    let cfg = GeneratorConfig { n, ..GeneratorConfig::default() };
    let graphs = (0..count).map(|i| generate_dag(&GeneratorConfig { seed: seed + i as u64, ..cfg }).unwrap()).collect();
    TaskPool::new(graphs, cfg.embedding_bounds())
}

/// `count` sampled episodes cycling over the pool's DAGs at `rate_mbps`.
pub fn sample_episodes(policy: &TransformerPolicy, pool: &TaskPool, count: usize, rate_mbps: f64, seed: u64) -> Vec<Trajectory> {
    (0..count)
        .map(|i| rollout(policy, pool.context(i % pool.graphs.len(), rate_mbps).unwrap(), seed + i as u64, false).unwrap())
        .collect()
}

/// Batch-normalized advantages, computed independently of the library.
pub fn normalized(advantages: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let flat: Vec<f64> = advantages.concat();
    let n = flat.len() as f64;
    let mean = flat.iter().sum::<f64>() / n;
    let var = flat.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    advantages.iter().map(|ep| ep.iter().map(|a| (a - mean) / (var.sqrt() + 1e-8)).collect()).collect()
}

/// Finite-difference check of the full PPO loss of the toy transformer.
///
/// The policy first takes one Adagrad step away from the sampling parameters so
/// that ratios differ from one. For every parameter tensor the coordinate with
/// the largest gradient is compared against central differences with step `h`.
pub fn transformer_loss_fd_check(h: f64) -> f64 {
    let mut policy = TransformerPolicy::new(PolicyConfig { init_seed: 3, ..PolicyConfig::toy() }).unwrap();
    let pool = training_pool(3, 6, 40);
    let eps = sample_episodes(&policy, &pool, 4, 10.0, 7);
    let refs: Vec<&Trajectory> = eps.iter().collect();
    let config = TrainConfig { clip_eps: 0.2, c1: 0.5, c2: 0.01, ..TrainConfig::toy() };
    let t = Targets::compute(&refs, &config).unwrap();
    let first = ppo_loss(&policy, &refs, &t.advantages, &t.returns, &config, true, 11).unwrap();
    OptimizerState::new(config.optimizer, &policy).apply(&mut policy, &first.grads, 0.003, 0.003).unwrap();

    let at = |p: &TransformerPolicy| ppo_loss(p, &refs, &t.advantages, &t.returns, &config, true, 11).unwrap();
    let base = at(&policy);
    let mut worst = 0.0f64;
    for (i, grad) in base.grads.iter().enumerate() {
        let (j, &g) = grad.data().iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).unwrap();
        let shifted = |d: f64| {
            let mut p = policy.clone();
            p.params.tensors[i].data_mut()[j] += d;
            at(&p).stats.total
        };
        let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
        worst = worst.max(rel_err(g, numeric));
    }
    worst
}

pub fn tiny_policy(seed: u64) -> TransformerPolicy {
    TransformerPolicy::new(PolicyConfig { layers: 1, heads: 2, d_model: 16, d_k: 8, d_v: 8, d_ff: 32, init_seed: seed, ..PolicyConfig::toy() })
        .unwrap()
}

pub fn onehot(d: Decision) -> [f64; 2] {
    if d == Decision::Offload { [0.0, 1.0] } else { [1.0, 0.0] }
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dagoffload"))
}

pub fn run_cli(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = cli();
    cmd.args(args).env_remove("OFFLOAD_OUT_DIR").env_remove("OFFLOAD_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

pub fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

/// Every file below `root` with its path relative to `root`, sorted.
pub fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, acc: &mut Vec<(PathBuf, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, acc);
            } else {
                acc.push((path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut acc = Vec::new();
    walk(root, root, &mut acc);
    acc.sort();
    acc
}

/// generate, train and eval through the binary under `dir`; returns the produced files.
pub fn cli_pipeline(dir: &Path, threads: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let env = [("OFFLOAD_THREADS", threads)];
    let data = dir.join("run/data");
    let s = |p: &Path| p.to_str().unwrap().to_string();
    stdout_json(&run_cli(&["generate", "--protocol", "--seed", "3", "--dags", "2", "--tasks", "6", "--out", &s(&data)], &env));
    let config = dir.join("train.toml");
    std::fs::write(
        &config,
        format!(
            "[experiment]\ndataset = {:?}\n\n[policy]\nlayers = 1\nheads = 2\nd_model = 16\nd_k = 8\nd_v = 8\nd_ff = 32\n\n\
             [train]\niterations = 2\ntasks_per_iter = 2\ntrajectories_per_task = 2\n",
            s(&data)
        ),
    )
    .unwrap();
    let train = dir.join("run/train");
    stdout_json(&run_cli(&["train", "--config", &s(&config), "--out", &s(&train)], &env));
    let eval = dir.join("run/eval");
    let ckpt = train.join("policy.ckpt");
    stdout_json(&run_cli(
        &["eval", "--checkpoint", &s(&ckpt), "--dataset", &s(&data), "--trajectories", "3", "--out", &s(&eval)],
        &env,
    ));
    tree(&dir.join("run"))
}
