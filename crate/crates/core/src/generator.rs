//! Random layered DAGs shaped by `n`, `fat`, `density` and `ccr`, and the
//! dataset files built from them.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::{EmbeddingBounds, GraphParams, Range, Task, TaskGraph};
use crate::rng::{self, derive_seed, Rng};
use crate::sim::{SystemProfile, BITS_PER_BYTE};

/// Shape and ccr values the 25-set protocol samples per DAG.
pub const PROTOCOL_SHAPE_VALUES: [f64; 5] = [0.4, 0.5, 0.6, 0.7, 0.8];
pub const PROTOCOL_CCR_RANGE: (f64, f64) = (0.3, 0.5);
pub const PROTOCOL_SETS: usize = 25;
pub const PROTOCOL_TEST_SETS: usize = 3;
pub const PROTOCOL_DAGS_PER_SET: usize = 100;
pub const PROTOCOL_TASKS: usize = 20;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("i/o failure on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed json in {path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("dataset set {0} not found")]
    MissingDataset(u32),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GenError + '_ {
    move |source| GenError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n: usize,
    pub fat: f64,
    pub density: f64,
    pub ccr: f64,
    pub cycles_range: Range,
    pub data_range: Range,
    pub seed: u64,
    /// Rate at which `ccr` is measured, bits per second.
    #[serde(default = "default_reference_rate")]
    pub reference_rate: f64,
    /// Device clock at which `ccr` is measured, cycles per second.
    #[serde(default = "default_reference_device")]
    pub reference_device: f64,
}

fn default_reference_rate() -> f64 {
    10e6
}

fn default_reference_device() -> f64 {
    1e9
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n: PROTOCOL_TASKS,
            fat: 0.6,
            density: 0.6,
            ccr: 0.4,
            cycles_range: Range::new(1e7, 1e8),
            data_range: Range::new(5e3, 5e4),
            seed: 0,
            reference_rate: default_reference_rate(),
            reference_device: default_reference_device(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: &str| Err(GenError::InvalidConfig(m.to_string()));
        if self.n == 0 {
            return bad("n must be at least 1");
        }
        if !(self.fat > 0.0 && self.fat <= 1.0) {
            return bad("fat must lie in (0, 1]");
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return bad("density must lie in (0, 1]");
        }
        if !(self.ccr.is_finite() && self.ccr > 0.0) {
            return bad("ccr must be positive");
        }
        for (name, r) in [("cycles_range", self.cycles_range), ("data_range", self.data_range)] {
            if !(r.min > 0.0 && r.min <= r.max && r.max.is_finite()) {
                return Err(GenError::InvalidConfig(format!("{name} must be a nonempty positive interval")));
            }
        }
        if !(self.reference_rate > 0.0 && self.reference_device > 0.0) {
            return bad("reference rate and device speed must be positive");
        }
        Ok(())
    }

    pub fn width_max(&self) -> usize {
        ((self.fat * (self.n as f64).sqrt()).round() as usize).max(1)
    }

    /// Embedding normalization bounds implied by this config's ranges.
    pub fn embedding_bounds(&self) -> EmbeddingBounds {
        let reference = SystemProfile::new(self.reference_device, 10e9, 1, self.reference_rate, self.reference_rate)
            .expect("validated reference values");
        EmbeddingBounds::new(self.cycles_range, self.data_range, &reference)
    }
}

/// Level widths summing to `n`.
///
/// The widest level is drawn first and placed whole; the others are drawn from
/// the same range, clipped to it, and the last one is cut to fit. The maximum
/// width therefore equals the first draw, which only grows with `width_max`.
fn level_widths(n: usize, width_max: usize, rng: &mut Rng) -> Vec<usize> {
    let widest = (1 + rng::index(rng, width_max)).min(n);
    let mut widths = Vec::new();
    let mut placed = widest;
    while placed < n {
        let w = (1 + rng::index(rng, width_max)).min(widest).min(n - placed);
        widths.push(w);
        placed += w;
    }
    let at = rng::index(rng, widths.len() + 1);
    widths.insert(at, widest);
    widths
}

/// Draws one DAG. Deterministic for a fixed config.
///
/// Levels, edges and task attributes come from three independent sub-streams
/// of `config.seed`, so changing the shape parameters leaves the other
/// streams untouched.
pub fn generate_dag(config: &GeneratorConfig) -> Result<TaskGraph, GenError> {
    config.validate()?;
    let n = config.n;
    let mut shape_rng = rng::seeded(derive_seed(&[config.seed, 1]));
    let mut edge_rng = rng::seeded(derive_seed(&[config.seed, 2]));
    let mut attr_rng = rng::seeded(derive_seed(&[config.seed, 3]));

    let widths = level_widths(n, config.width_max(), &mut shape_rng);
    let mut levels: Vec<std::ops::Range<usize>> = Vec::with_capacity(widths.len());
    let mut start = 0;
    for w in widths {
        levels.push(start..start + w);
        start += w;
    }

    let mut edges = BTreeSet::new();
    for pair in levels.windows(2) {
        let (upper, lower) = (&pair[0], &pair[1]);
        for v in lower.clone() {
            let u = upper.start + rng::index(&mut edge_rng, upper.len());
            edges.insert((u, v));
        }
        for u in upper.clone() {
            for v in lower.clone() {
                if rng::uniform01(&mut edge_rng) < config.density {
                    edges.insert((u, v));
                }
            }
        }
    }

    let mut tasks: Vec<Task> = (0..n)
        .map(|id| {
            let cycles = rng::uniform(&mut attr_rng, config.cycles_range.min, config.cycles_range.max).round();
            let data_up = rng::uniform(&mut attr_rng, config.data_range.min, config.data_range.max);
            let ratio = rng::uniform(&mut attr_rng, 0.1, 1.0);
            Task { id, cycles, data_up, data_do: ratio * data_up }
        })
        .collect();

    let mean_local = tasks.iter().map(|t| t.cycles / config.reference_device).sum::<f64>() / n as f64;
    let mean_comm = tasks.iter().map(|t| (t.data_up + t.data_do) * BITS_PER_BYTE / config.reference_rate).sum::<f64>()
        / n as f64;
    let scale = config.ccr * mean_local / mean_comm;
    for t in &mut tasks {
        t.data_up *= scale;
        t.data_do *= scale;
    }

    let graph = TaskGraph::new(tasks, edges.into_iter().collect()).expect("layered construction is a valid DAG");
    Ok(graph.with_params(GraphParams { fat: config.fat, density: config.density, ccr: config.ccr }))
}

/// Mean round-trip communication time over mean local compute time at the config's reference point.
pub fn measured_ccr(graphs: &[TaskGraph], reference_rate: f64, reference_device: f64) -> f64 {
    let (mut comm, mut comp, mut count) = (0.0, 0.0, 0usize);
    for g in graphs {
        for t in g.tasks() {
            comm += (t.data_up + t.data_do) * BITS_PER_BYTE / reference_rate;
            comp += t.cycles / reference_device;
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        comm / comp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Every DAG uses the set's config as is.
    Fixed,
    /// fat and density drawn per DAG from {0.4, ..., 0.8}, ccr uniform in [0.3, 0.5].
    PaperProtocol,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetSpec {
    pub set_id: u32,
    pub config: GeneratorConfig,
    pub dag_count: usize,
    pub sampling: Sampling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub set_id: u32,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub prng: String,
    pub sets: Vec<SetSpec>,
    pub split: Vec<SplitEntry>,
}

impl DatasetManifest {
    /// Manifest with every set in the training split.
    pub fn new(seed: u64, sets: Vec<SetSpec>) -> Self {
        let split = sets.iter().map(|s| SplitEntry { set_id: s.set_id, role: Role::Train }).collect();
        DatasetManifest { seed, prng: rng::PRNG_ALGORITHM.to_string(), sets, split }
    }

    /// 25 sets of `dag_count` DAGs with `n` tasks each, 3 held out at random.
    pub fn paper_protocol(seed: u64, dag_count: usize, n: usize) -> Self {
        let base = GeneratorConfig { n, ..GeneratorConfig::default() };
        let sets: Vec<SetSpec> = (0..PROTOCOL_SETS as u32)
            .map(|set_id| SetSpec {
                set_id,
                config: GeneratorConfig { seed: derive_seed(&[seed, set_id as u64]), ..base },
                dag_count,
                sampling: Sampling::PaperProtocol,
            })
            .collect();
        let mut ids: Vec<u32> = sets.iter().map(|s| s.set_id).collect();
        rng::shuffle(&mut rng::seeded(derive_seed(&[seed, 0x5151])), &mut ids);
        let test: BTreeSet<u32> = ids[..PROTOCOL_TEST_SETS].iter().copied().collect();
        let split = sets
            .iter()
            .map(|s| SplitEntry { set_id: s.set_id, role: if test.contains(&s.set_id) { Role::Test } else { Role::Train } })
            .collect();
        DatasetManifest { seed, prng: rng::PRNG_ALGORITHM.to_string(), sets, split }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let mut ids = BTreeSet::new();
        for s in &self.sets {
            if !ids.insert(s.set_id) {
                return Err(GenError::InvalidManifest(format!("duplicate set_id {}", s.set_id)));
            }
            s.config.validate()?;
        }
        let mut covered = BTreeSet::new();
        for e in &self.split {
            if !ids.contains(&e.set_id) {
                return Err(GenError::InvalidManifest(format!("split names unknown set {}", e.set_id)));
            }
            if !covered.insert(e.set_id) {
                return Err(GenError::InvalidManifest(format!("set {} appears twice in split", e.set_id)));
            }
        }
        if covered.len() != ids.len() {
            return Err(GenError::InvalidManifest("split does not cover every set".into()));
        }
        Ok(())
    }

    pub fn set(&self, set_id: u32) -> Result<&SetSpec, GenError> {
        self.sets.iter().find(|s| s.set_id == set_id).ok_or(GenError::MissingDataset(set_id))
    }

    pub fn role(&self, set_id: u32) -> Option<Role> {
        self.split.iter().find(|e| e.set_id == set_id).map(|e| e.role)
    }

    pub fn set_ids(&self, role: Role) -> Vec<u32> {
        self.split.iter().filter(|e| e.role == role).map(|e| e.set_id).collect()
    }

    pub fn load(path: &Path) -> Result<Self, GenError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let manifest: Self =
            serde_json::from_str(&text).map_err(|source| GenError::Json { path: path.to_path_buf(), source })?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

/// Config used for DAG `index` of `set`; independent of every other DAG.
pub fn dag_config(set: &SetSpec, index: usize) -> GeneratorConfig {
    let sub_seed = derive_seed(&[set.config.seed, set.set_id as u64, index as u64]);
    let mut config = GeneratorConfig { seed: sub_seed, ..set.config };
    if set.sampling == Sampling::PaperProtocol {
        let mut r = rng::seeded(derive_seed(&[sub_seed, 0xFA7]));
        config.fat = PROTOCOL_SHAPE_VALUES[rng::index(&mut r, PROTOCOL_SHAPE_VALUES.len())];
        config.density = PROTOCOL_SHAPE_VALUES[rng::index(&mut r, PROTOCOL_SHAPE_VALUES.len())];
        config.ccr = rng::uniform(&mut r, PROTOCOL_CCR_RANGE.0, PROTOCOL_CCR_RANGE.1);
    }
    config
}

/// All DAGs of one set, in index order.
pub fn generate_set(set: &SetSpec) -> Result<Vec<TaskGraph>, GenError> {
    (0..set.dag_count).into_par_iter().map(|i| generate_dag(&dag_config(set, i))).collect()
}

pub fn dag_file_name(set_id: u32, index: usize) -> String {
    format!("dag_{set_id}_{index}.json")
}

/// Writes `manifest.json` and one `dag_<set>_<i>.json` per DAG into `out`.
pub fn generate_dataset(manifest: &DatasetManifest, out: &Path) -> Result<usize, GenError> {
    manifest.validate()?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut written = 0;
    for set in &manifest.sets {
        let graphs = generate_set(set)?;
        for (i, g) in graphs.iter().enumerate() {
            let path = out.join(dag_file_name(set.set_id, i));
            fs::write(&path, g.to_json()).map_err(io_err(&path))?;
            written += 1;
        }
    }
    let path = out.join("manifest.json");
    fs::write(&path, manifest.to_json()).map_err(io_err(&path))?;
    Ok(written)
}

/// A dataset directory loaded back into memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    /// `(set_id, graphs)` in manifest order.
    pub sets: Vec<(u32, Vec<TaskGraph>)>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self, GenError> {
        let manifest = DatasetManifest::load(&dir.join("manifest.json"))?;
        let mut sets = Vec::with_capacity(manifest.sets.len());
        for set in &manifest.sets {
            let mut graphs = Vec::with_capacity(set.dag_count);
            for i in 0..set.dag_count {
                let path = dir.join(dag_file_name(set.set_id, i));
                let text = fs::read_to_string(&path).map_err(io_err(&path))?;
                graphs.push(TaskGraph::from_json(&text).map_err(|source| GenError::Json { path, source })?);
            }
            sets.push((set.set_id, graphs));
        }
        Ok(Dataset { manifest, sets })
    }

    /// Generates the dataset in memory without touching disk.
    pub fn generate(manifest: DatasetManifest) -> Result<Self, GenError> {
        manifest.validate()?;
        let sets = manifest.sets.iter().map(|s| Ok((s.set_id, generate_set(s)?))).collect::<Result<_, GenError>>()?;
        Ok(Dataset { manifest, sets })
    }

    pub fn graphs(&self, set_id: u32) -> Result<&[TaskGraph], GenError> {
        self.sets
            .iter()
            .find(|(id, _)| *id == set_id)
            .map(|(_, g)| g.as_slice())
            .ok_or(GenError::MissingDataset(set_id))
    }

    pub fn graphs_with_role(&self, role: Role) -> Vec<&TaskGraph> {
        let ids = self.manifest.set_ids(role);
        self.sets.iter().filter(|(id, _)| ids.contains(id)).flat_map(|(_, g)| g.iter()).collect()
    }

    /// Normalization bounds shared by every DAG in the dataset.
    pub fn embedding_bounds(&self) -> EmbeddingBounds {
        self.manifest
            .sets
            .first()
            .map(|s| s.config.embedding_bounds())
            .unwrap_or_else(|| GeneratorConfig::default().embedding_bounds())
    }
}
