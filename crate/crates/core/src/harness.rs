//! Experiment plumbing: config files, benchmark sweeps, checkpoints and the
//! full protocol run.
//!
//! An experiment config is TOML with three sections:
//!
//! ```toml
//! [experiment]
//! dataset = "data"              # directory written by `generate`
//! rates_mbps = [8.5, 11.5]
//! algorithms = ["heft", "greedy", "all_local", "all_remote", "policy"]
//! out_dir = "out"
//! seed = 0
//! eval_trajectories = 20
//!
//! [policy]                      # optional, PolicyConfig fields
//! layers = 2
//!
//! [train]                       # optional, TrainConfig fields
//! iterations = 200
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AdError, Checkpoint};
use crate::baselines::{BaselineError, SchedulerKind};
use crate::dag::TaskGraph;
use crate::generator::{generate_dataset, Dataset, DatasetManifest, GenError, Role, PROTOCOL_DAGS_PER_SET, PROTOCOL_TASKS};
use crate::policy::{PolicyConfig, PolicyError, TransformerPolicy};
use crate::ppo::{self, metrics_csv, OptimizerState, PpoError, TaskPool, TrainConfig, DEFAULT_EVAL_TRAJECTORIES};
use crate::rng::derive_seed;
use crate::sim::{evaluate_plan, SimError, SystemProfile};

/// Overrides the output directory of every command.
pub const ENV_OUT_DIR: &str = "OFFLOAD_OUT_DIR";
/// Caps the worker thread count; `1` gives the single-threaded mode.
pub const ENV_THREADS: &str = "OFFLOAD_THREADS";
/// Rates of the final report, Mbps.
pub const REPORT_RATES_MBPS: [f64; 2] = [8.5, 11.5];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("i/o failure on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("dataset not found: {0}")]
    MissingDataset(String),
    #[error(transparent)]
    Generator(#[from] GenError),
    #[error(transparent)]
    Training(#[from] PpoError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    /// Stable machine-readable error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Config(_) | HarnessError::Toml(_) => "config",
            HarnessError::Io { .. } => "io",
            HarnessError::MissingDataset(_) => "missing_dataset",
            HarnessError::Generator(GenError::MissingDataset(_)) => "missing_dataset",
            HarnessError::Generator(_) => "generator",
            HarnessError::Training(_) => "training",
            HarnessError::Policy(_) => "policy",
            HarnessError::Baseline(_) => "baseline",
            HarnessError::Simulation(_) => "simulation",
            HarnessError::Autodiff(_) => "autodiff",
            HarnessError::Json(_) => "json",
        }
    }
}

pub fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

/// Output directory after applying [`ENV_OUT_DIR`].
pub fn resolve_out_dir(configured: &Path) -> PathBuf {
    std::env::var_os(ENV_OUT_DIR).map(PathBuf::from).unwrap_or_else(|| configured.to_path_buf())
}

/// Sizes the global worker pool from [`ENV_THREADS`] or `fallback`.
pub fn init_threads(fallback: Option<usize>) -> Result<(), HarnessError> {
    let from_env = match std::env::var(ENV_THREADS) {
        Ok(v) => Some(v.parse::<usize>().map_err(|_| HarnessError::Config(format!("{ENV_THREADS}={v:?} is not a count")))?),
        Err(_) => None,
    };
    if let Some(n) = from_env.or(fallback) {
        // A pool built earlier in the process stays in place.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    Ok(())
}

/// A scheduler column of the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Baseline(SchedulerKind),
    /// Best of the sampled trajectories and the greedy rollout per DAG.
    PolicyBest,
    /// Mean over the sampled trajectories per DAG.
    PolicyMean,
}

impl Algorithm {
    pub fn name(&self) -> String {
        match self {
            Algorithm::Baseline(k) => k.name(),
            Algorithm::PolicyBest => "policy_best".into(),
            Algorithm::PolicyMean => "policy_mean".into(),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Parses an algorithm list; `policy` expands to both policy aggregations.
pub fn parse_algorithms(names: &[String]) -> Result<Vec<Algorithm>, HarnessError> {
    let mut out = Vec::new();
    for name in names {
        match name.as_str() {
            "policy" => out.extend([Algorithm::PolicyBest, Algorithm::PolicyMean]),
            "policy_best" => out.push(Algorithm::PolicyBest),
            "policy_mean" => out.push(Algorithm::PolicyMean),
            other => out.push(Algorithm::Baseline(SchedulerKind::from_str(other)?)),
        }
    }
    if out.is_empty() {
        return Err(HarnessError::Config("algorithms must be nonempty".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSection {
    /// Dataset directory holding `manifest.json` and the DAG files.
    pub dataset: Option<PathBuf>,
    /// Manifest generated in memory when `dataset` is absent.
    pub manifest: Option<PathBuf>,
    pub rates_mbps: Vec<f64>,
    pub algorithms: Vec<String>,
    /// Set ids to benchmark; empty means every set in the dataset.
    pub sets: Vec<u32>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub eval_trajectories: usize,
    /// Policy checkpoint for the `policy` algorithms.
    pub checkpoint: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            dataset: None,
            manifest: None,
            rates_mbps: REPORT_RATES_MBPS.to_vec(),
            algorithms: ["heft", "greedy", "all_local", "all_remote"].map(String::from).to_vec(),
            sets: Vec::new(),
            out_dir: PathBuf::from("out"),
            seed: 0,
            eval_trajectories: DEFAULT_EVAL_TRAJECTORIES,
            checkpoint: None,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub policy: PolicyConfig,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let config: ExperimentConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_toml(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let e = &self.experiment;
        if e.rates_mbps.is_empty() || e.rates_mbps.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(HarnessError::Config("rates_mbps must be a nonempty list of positive rates".into()));
        }
        parse_algorithms(&e.algorithms)?;
        self.policy.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// Configured set ids, or every set of `dataset`.
    pub fn set_ids(&self, dataset: &Dataset) -> Vec<u32> {
        if self.experiment.sets.is_empty() {
            dataset.sets.iter().map(|(id, _)| *id).collect()
        } else {
            self.experiment.sets.clone()
        }
    }

    pub fn algorithms(&self) -> Result<Vec<Algorithm>, HarnessError> {
        parse_algorithms(&self.experiment.algorithms)
    }

    /// Loads the dataset directory, or generates the manifest in memory.
    pub fn dataset(&self) -> Result<Dataset, HarnessError> {
        match (&self.experiment.dataset, &self.experiment.manifest) {
            (Some(dir), _) => load_dataset(dir),
            (None, Some(manifest)) => Ok(Dataset::generate(DatasetManifest::load(manifest)?)?),
            (None, None) => Err(HarnessError::Config("experiment needs a dataset directory or a manifest".into())),
        }
    }
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, HarnessError> {
    if !dir.join("manifest.json").is_file() {
        return Err(HarnessError::MissingDataset(dir.display().to_string()));
    }
    Ok(Dataset::load(dir)?)
}

/// One `(dataset, rate, algorithm)` cell of a benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub dataset_id: u32,
    pub fat: f64,
    pub density: f64,
    pub ccr: f64,
    pub rate_mbps: f64,
    pub algorithm: String,
    #[serde(rename = "mean_AL_ms")]
    pub mean_al_ms: f64,
    #[serde(rename = "std_AL_ms")]
    pub std_al_ms: f64,
    /// Per-DAG latencies behind the mean, ms.
    pub per_dag_ms: Vec<f64>,
}

pub const BENCHMARK_HEADER: &str = "dataset_id,fat,density,ccr,rate_mbps,algorithm,mean_AL_ms,std_AL_ms";

pub fn benchmark_csv(rows: &[BenchmarkRow]) -> String {
    let mut out = format!("{BENCHMARK_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.4},{:.4},{:.4},{},{},{:.6},{:.6}\n",
            r.dataset_id, r.fat, r.density, r.ccr, r.rate_mbps, r.algorithm, r.mean_al_ms, r.std_al_ms
        ));
    }
    out
}

/// Line-plot data for one rate: one line per algorithm, one point per dataset.
pub fn plot_csv(rows: &[BenchmarkRow], rate_mbps: f64) -> String {
    let mut out = String::from("dataset_id,algorithm,mean_AL_ms\n");
    for r in rows.iter().filter(|r| r.rate_mbps == rate_mbps) {
        out.push_str(&format!("{},{},{:.6}\n", r.dataset_id, r.algorithm, r.mean_al_ms));
    }
    out
}

pub fn plot_file_name(rate_mbps: f64) -> String {
    format!("plot_rate_{rate_mbps}.csv")
}

/// Mean AL per algorithm (rows) and rate (columns), averaged over datasets.
pub fn table_csv(rows: &[BenchmarkRow], rates: &[f64]) -> String {
    let mut algorithms: Vec<&str> = Vec::new();
    for r in rows {
        if !algorithms.contains(&r.algorithm.as_str()) {
            algorithms.push(&r.algorithm);
        }
    }
    let mut out = String::from("algorithm");
    for rate in rates {
        out.push_str(&format!(",{rate}Mbps"));
    }
    out.push('\n');
    for alg in algorithms {
        out.push_str(alg);
        for &rate in rates {
            let cells: Vec<f64> =
                rows.iter().filter(|r| r.algorithm == alg && r.rate_mbps == rate).map(|r| r.mean_al_ms).collect();
            let mean = cells.iter().sum::<f64>() / cells.len().max(1) as f64;
            out.push_str(&format!(",{mean:.6}"));
        }
        out.push('\n');
    }
    out
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len().max(1) as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (mean, (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt())
}

/// Mean of the per-DAG shape parameters, falling back to the set config.
fn set_params(dataset: &Dataset, set_id: u32, graphs: &[TaskGraph]) -> (f64, f64, f64) {
    let known: Vec<_> = graphs.iter().filter_map(TaskGraph::params).collect();
    if known.is_empty() {
        return dataset
            .manifest
            .set(set_id)
            .map(|s| (s.config.fat, s.config.density, s.config.ccr))
            .unwrap_or((f64::NAN, f64::NAN, f64::NAN));
    }
    let n = known.len() as f64;
    (
        known.iter().map(|p| p.fat).sum::<f64>() / n,
        known.iter().map(|p| p.density).sum::<f64>() / n,
        known.iter().map(|p| p.ccr).sum::<f64>() / n,
    )
}

/// Settings of a benchmark sweep.
#[derive(Debug, Clone)]
pub struct BenchmarkSpec<'a> {
    pub set_ids: Vec<u32>,
    pub rates_mbps: Vec<f64>,
    pub algorithms: Vec<Algorithm>,
    pub policy: Option<&'a TransformerPolicy>,
    pub eval_trajectories: usize,
    pub seed: u64,
    pub base_profile: SystemProfile,
}

/// Mean and standard deviation of AL for every `(dataset, rate, algorithm)`.
///
/// Cells run in parallel; rows come back in dataset, rate, algorithm order.
pub fn run_benchmark(dataset: &Dataset, spec: &BenchmarkSpec<'_>) -> Result<Vec<BenchmarkRow>, HarnessError> {
    let needs_policy = spec.algorithms.iter().any(|a| !matches!(a, Algorithm::Baseline(_)));
    if needs_policy && spec.policy.is_none() {
        return Err(HarnessError::Config("policy algorithms need a checkpoint".into()));
    }
    let bounds = dataset.embedding_bounds();
    let mut cells = Vec::new();
    for &set_id in &spec.set_ids {
        let graphs = dataset.graphs(set_id)?;
        if graphs.is_empty() {
            return Err(HarnessError::MissingDataset(format!("set {set_id} has no DAGs")));
        }
        for &rate in &spec.rates_mbps {
            cells.push((set_id, graphs, rate));
        }
    }
    let results: Vec<Result<Vec<BenchmarkRow>, HarnessError>> = cells
        .par_iter()
        .map(|&(set_id, graphs, rate)| {
            let profile = spec.base_profile.with_rate_mbps(rate)?;
            let (fat, density, ccr) = set_params(dataset, set_id, graphs);
            let row = |algorithm: &Algorithm, per_dag_ms: Vec<f64>| {
                let (mean, std) = mean_std(&per_dag_ms);
                BenchmarkRow {
                    dataset_id: set_id,
                    fat,
                    density,
                    ccr,
                    rate_mbps: rate,
                    algorithm: algorithm.name(),
                    mean_al_ms: mean,
                    std_al_ms: std,
                    per_dag_ms,
                }
            };
            let policy_eval = match spec.policy {
                Some(policy) if needs_policy => {
                    let pool = TaskPool {
                        graphs: graphs.to_vec(),
                        bounds,
                        base_profile: spec.base_profile,
                        index_len: policy.config.index_len,
                    };
                    Some(ppo::evaluate(policy, &pool, rate, spec.eval_trajectories, derive_seed(&[spec.seed, set_id as u64]))?)
                }
                _ => None,
            };
            let mut rows = Vec::with_capacity(spec.algorithms.len());
            for alg in &spec.algorithms {
                let per_dag = match (alg, &policy_eval) {
                    (Algorithm::Baseline(kind), _) => {
                        let mut out = Vec::with_capacity(graphs.len());
                        for (i, g) in graphs.iter().enumerate() {
                            let kind = match kind {
                                SchedulerKind::Random(s) => SchedulerKind::Random(derive_seed(&[*s, set_id as u64, i as u64])),
                                k => *k,
                            };
                            let seq = crate::dag::compute_ranks(g, &profile);
                            let plan = kind.plan(g, &seq, &profile)?;
                            out.push(evaluate_plan(g, &seq, &plan, &profile)?.0 * 1e3);
                        }
                        out
                    }
                    (Algorithm::PolicyBest, Some(ev)) => ev.iter().map(|e| e.best_ms).collect(),
                    (Algorithm::PolicyMean, Some(ev)) => ev.iter().map(|e| e.mean_ms).collect(),
                    _ => unreachable!("policy evaluation present whenever requested"),
                };
                rows.push(row(alg, per_dag));
            }
            Ok(rows)
        })
        .collect();
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    Ok(rows)
}

/// Writes `benchmark.csv`, `benchmark.json`, `table.csv` and one plot file per rate.
pub fn write_report(dir: &Path, rows: &[BenchmarkRow], rates: &[f64]) -> Result<(), HarnessError> {
    write_file(&dir.join("benchmark.csv"), benchmark_csv(rows))?;
    write_file(&dir.join("benchmark.json"), serde_json::to_string_pretty(rows)?)?;
    write_file(&dir.join("table.csv"), table_csv(rows, rates))?;
    for &rate in rates {
        write_file(&dir.join(plot_file_name(rate)), plot_csv(rows, rate))?;
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, policy: &TransformerPolicy, optimizer: &OptimizerState) -> Result<(), HarnessError> {
    write_file(path, policy.to_checkpoint(optimizer.to_tensor_sets(policy)).to_bytes())
}

pub fn load_policy(path: &Path) -> Result<TransformerPolicy, HarnessError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(TransformerPolicy::from_checkpoint(&Checkpoint::from_bytes(&bytes)?)?)
}

/// Outcome of a training run written to disk.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub policy: TransformerPolicy,
    pub metrics: Vec<ppo::IterationMetrics>,
    pub checkpoint: PathBuf,
}

/// Trains on the dataset's training split, writing `metrics.csv`,
/// `train_sets.json` and `policy.ckpt` under `out`.
pub fn run_training(
    dataset: &Dataset,
    policy_config: PolicyConfig,
    train_config: &TrainConfig,
    out: &Path,
) -> Result<TrainRun, HarnessError> {
    let train_ids = dataset.manifest.set_ids(Role::Train);
    let graphs: Vec<TaskGraph> = dataset.graphs_with_role(Role::Train).into_iter().cloned().collect();
    if graphs.is_empty() {
        return Err(HarnessError::MissingDataset("no training sets in the split".into()));
    }
    let mut policy = TransformerPolicy::new(policy_config)?;
    let pool = TaskPool {
        graphs,
        bounds: dataset.embedding_bounds(),
        base_profile: SystemProfile::reference(10.0),
        index_len: policy_config.index_len,
    };
    let mut optimizer = OptimizerState::new(train_config.optimizer, &policy);
    write_file(&out.join("train_sets.json"), serde_json::to_string(&train_ids)?)?;
    let metrics = ppo::train(&mut policy, &pool, train_config, &mut optimizer, |_, _| Ok(()))?;
    write_file(&out.join("metrics.csv"), metrics_csv(&metrics))?;
    let checkpoint = out.join("policy.ckpt");
    save_checkpoint(&checkpoint, &policy, &optimizer)?;
    Ok(TrainRun { policy, metrics, checkpoint })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Small DAG sets, small network, few iterations.
    Toy,
    /// Full-size sets and the large network.
    Paper,
}

impl FromStr for Profile {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "toy" => Ok(Profile::Toy),
            "paper" => Ok(Profile::Paper),
            other => Err(HarnessError::Config(format!("unknown profile {other:?}"))),
        }
    }
}

/// Sizes of a protocol run.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolSettings {
    pub dags_per_set: usize,
    pub tasks: usize,
    pub policy: PolicyConfig,
    pub train: TrainConfig,
    pub eval_trajectories: usize,
}

impl ProtocolSettings {
    pub fn for_profile(profile: Profile, seed: u64) -> Self {
        match profile {
            Profile::Toy => ProtocolSettings {
                dags_per_set: 8,
                tasks: 10,
                policy: PolicyConfig { init_seed: seed, ..PolicyConfig::toy() },
                train: TrainConfig { iterations: 60, seed, ..TrainConfig::toy() },
                eval_trajectories: DEFAULT_EVAL_TRAJECTORIES,
            },
            Profile::Paper => ProtocolSettings {
                dags_per_set: PROTOCOL_DAGS_PER_SET,
                tasks: PROTOCOL_TASKS,
                policy: PolicyConfig { init_seed: seed, index_len: PROTOCOL_TASKS, ..PolicyConfig::paper() },
                train: TrainConfig { seed, ..TrainConfig::paper() },
                eval_trajectories: DEFAULT_EVAL_TRAJECTORIES,
            },
        }
    }
}

/// Files of a finished protocol run.
#[derive(Debug, Clone)]
pub struct ProtocolBundle {
    pub dir: PathBuf,
    pub manifest: PathBuf,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub report: PathBuf,
    pub rows: Vec<BenchmarkRow>,
}

/// Generates the 25-set dataset, trains on the 22 training sets and reports on
/// the 3 held-out sets at 8.5 and 11.5 Mbps.
pub fn run_paper_protocol(seed: u64, settings: &ProtocolSettings, out: &Path) -> Result<ProtocolBundle, HarnessError> {
    let manifest = DatasetManifest::paper_protocol(seed, settings.dags_per_set, settings.tasks);
    let data_dir = out.join("dataset");
    generate_dataset(&manifest, &data_dir)?;
    let dataset = Dataset::load(&data_dir)?;
    let run = run_training(&dataset, settings.policy, &settings.train, out)?;
    let mut algorithms: Vec<Algorithm> = [SchedulerKind::Heft, SchedulerKind::Greedy, SchedulerKind::AllLocal, SchedulerKind::AllRemote]
        .into_iter()
        .map(Algorithm::Baseline)
        .collect();
    algorithms.extend([Algorithm::PolicyBest, Algorithm::PolicyMean]);
    let spec = BenchmarkSpec {
        set_ids: dataset.manifest.set_ids(Role::Test),
        rates_mbps: REPORT_RATES_MBPS.to_vec(),
        algorithms,
        policy: Some(&run.policy),
        eval_trajectories: settings.eval_trajectories,
        seed,
        base_profile: SystemProfile::reference(10.0),
    };
    let rows = run_benchmark(&dataset, &spec)?;
    write_report(out, &rows, &REPORT_RATES_MBPS)?;
    Ok(ProtocolBundle {
        dir: out.to_path_buf(),
        manifest: data_dir.join("manifest.json"),
        checkpoint: run.checkpoint,
        metrics: out.join("metrics.csv"),
        report: out.join("benchmark.csv"),
        rows,
    })
}
