//! Application DAGs: validation, upward ranks and per-task embeddings.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{task_times, SystemProfile};

/// Default length of the parent/child index vectors.
pub const DEFAULT_INDEX_LEN: usize = 12;

/// Padding sentinel for unused parent/child slots.
pub const PAD: i64 = -1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DagError {
    #[error("graph has no tasks")]
    EmptyGraph,
    #[error("task at position {position} has id {id}; ids must equal positions")]
    IdMismatch { position: usize, id: usize },
    #[error("task {id}: {reason}")]
    InvalidTask { id: usize, reason: String },
    #[error("edge ({parent}, {child}) references a task outside 0..{n}")]
    DanglingEdge { parent: usize, child: usize, n: usize },
    #[error("self edge on task {0}")]
    SelfEdge(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("cycle detected through task {0}")]
    CycleDetected(usize),
    #[error("declared n = {declared} but {actual} tasks listed")]
    CountMismatch { declared: usize, actual: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: usize,
    /// CPU cycles needed to run the task.
    pub cycles: f64,
    /// Bytes sent to the edge when offloaded.
    pub data_up: f64,
    /// Bytes returned from the edge when offloaded.
    pub data_do: f64,
}

/// Generator parameters a DAG was drawn with, carried along for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphParams {
    pub fat: f64,
    pub density: f64,
    pub ccr: f64,
}

/// A validated, immutable task DAG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphFile", into = "GraphFile")]
pub struct TaskGraph {
    tasks: Vec<Task>,
    edges: Vec<(usize, usize)>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    params: Option<GraphParams>,
}

/// On-disk layout: `{n, tasks: [{id, cycles, data_up, data_do}], edges: [[p, c], ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct GraphFile {
    n: usize,
    tasks: Vec<Task>,
    edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    params: Option<GraphParams>,
}

impl TryFrom<GraphFile> for TaskGraph {
    type Error = DagError;

    fn try_from(file: GraphFile) -> Result<Self, DagError> {
        if file.n != file.tasks.len() {
            return Err(DagError::CountMismatch { declared: file.n, actual: file.tasks.len() });
        }
        let edges = file.edges.into_iter().map(|[p, c]| (p, c)).collect();
        let mut graph = TaskGraph::new(file.tasks, edges)?;
        graph.params = file.params;
        Ok(graph)
    }
}

impl From<TaskGraph> for GraphFile {
    fn from(g: TaskGraph) -> Self {
        GraphFile {
            n: g.tasks.len(),
            edges: g.edges.iter().map(|&(p, c)| [p, c]).collect(),
            tasks: g.tasks,
            params: g.params,
        }
    }
}

/// Checks every structural invariant of a would-be graph and reports the first violation.
pub fn validate(tasks: &[Task], edges: &[(usize, usize)]) -> Result<(), DagError> {
    let n = tasks.len();
    if n == 0 {
        return Err(DagError::EmptyGraph);
    }
    for (position, task) in tasks.iter().enumerate() {
        if task.id != position {
            return Err(DagError::IdMismatch { position, id: task.id });
        }
        let bad = |reason: &str| DagError::InvalidTask { id: task.id, reason: reason.to_string() };
        if !(task.cycles.is_finite() && task.cycles > 0.0) {
            return Err(bad("cycles must be positive and finite"));
        }
        if !(task.data_up.is_finite() && task.data_up >= 0.0) {
            return Err(bad("data_up must be non-negative and finite"));
        }
        if !(task.data_do.is_finite() && task.data_do >= 0.0) {
            return Err(bad("data_do must be non-negative and finite"));
        }
    }
    let mut seen = HashSet::with_capacity(edges.len());
    for &(parent, child) in edges {
        if parent >= n || child >= n {
            return Err(DagError::DanglingEdge { parent, child, n });
        }
        if parent == child {
            return Err(DagError::SelfEdge(parent));
        }
        if !seen.insert((parent, child)) {
            return Err(DagError::DuplicateEdge(parent, child));
        }
    }
    let mut children = vec![Vec::new(); n];
    for &(p, c) in edges {
        children[p].push(c);
    }
    topological_order(&children).map(|_| ())
}

/// Kahn's algorithm; smallest ready id first.
fn topological_order(children: &[Vec<usize>]) -> Result<Vec<usize>, DagError> {
    let n = children.len();
    let mut indegree = vec![0usize; n];
    for cs in children {
        for &c in cs {
            indegree[c] += 1;
        }
    }
    let mut ready: std::collections::BTreeSet<usize> = (0..n).filter(|&v| indegree[v] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(v) = ready.pop_first() {
        order.push(v);
        for &c in &children[v] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() < n {
        let stuck = (0..n).find(|&v| indegree[v] > 0).unwrap_or(0);
        return Err(DagError::CycleDetected(stuck));
    }
    Ok(order)
}

impl TaskGraph {
    pub fn new(tasks: Vec<Task>, edges: Vec<(usize, usize)>) -> Result<Self, DagError> {
        validate(&tasks, &edges)?;
        let n = tasks.len();
        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        for &(p, c) in &edges {
            parents[c].push(p);
            children[p].push(c);
        }
        for list in parents.iter_mut().chain(children.iter_mut()) {
            list.sort_unstable();
        }
        Ok(TaskGraph { tasks, edges, parents, children, params: None })
    }

    pub fn with_params(mut self, params: GraphParams) -> Self {
        self.params = Some(params);
        self
    }

    pub fn params(&self) -> Option<GraphParams> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn task(&self, id: usize) -> &Task {
        &self.tasks[id]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn parents(&self, id: usize) -> &[usize] {
        &self.parents[id]
    }

    pub fn children(&self, id: usize) -> &[usize] {
        &self.children[id]
    }

    pub fn entry_tasks(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&v| self.parents[v].is_empty())
    }

    pub fn exit_tasks(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&v| self.children[v].is_empty())
    }

    pub fn is_exit(&self, id: usize) -> bool {
        self.children[id].is_empty()
    }

    pub fn topological_order(&self) -> Vec<usize> {
        topological_order(&self.children).expect("validated graph is acyclic")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("graph serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Graphviz rendering, one node per task labelled with its cycles.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph dag {\n  rankdir=TB;\n");
        for t in &self.tasks {
            let _ = writeln!(out, "  t{} [label=\"{}\\n{:.2e} cyc\"];", t.id, t.id, t.cycles);
        }
        for &(p, c) in &self.edges {
            let _ = writeln!(out, "  t{p} -> t{c};");
        }
        out.push_str("}\n");
        out
    }
}

/// Tasks in scheduling order together with their priority scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSequence {
    /// Task ids, highest rank first.
    pub order: Vec<usize>,
    /// Rank indexed by task id.
    pub rank: Vec<f64>,
    /// Position in `order` indexed by task id.
    pub position: Vec<usize>,
}

impl RankedSequence {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// Upward ranks.
///
/// `rank(v) = avg_cost(v) + max_{c in children(v)} (data_do(v) / r_do + rank(c))`,
/// where `avg_cost` averages local execution and the full offload round trip.
/// Tasks are ordered by descending rank with ties broken by ascending id.
pub fn compute_ranks(graph: &TaskGraph, profile: &SystemProfile) -> RankedSequence {
    let n = graph.len();
    let mut rank = vec![0.0; n];
    let topo = graph.topological_order();
    for &v in topo.iter().rev() {
        let times = task_times(graph.task(v), profile);
        let avg_cost = 0.5 * (times.local + times.offload_round_trip());
        let comm = times.download;
        let tail = graph
            .children(v)
            .iter()
            .map(|&c| comm + rank[c])
            .fold(0.0, f64::max);
        rank[v] = avg_cost + tail;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| rank[b].total_cmp(&rank[a]).then(a.cmp(&b)));
    let mut position = vec![0; n];
    for (pos, &id) in order.iter().enumerate() {
        position[id] = pos;
    }
    RankedSequence { order, rank, position }
}

/// Closed interval used for min-max scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub fn new(min: f64, max: f64) -> Self {
        Range { min, max }
    }

    pub fn scale(&self, x: f64) -> f64 {
        if self.max > self.min {
            (x - self.min) / (self.max - self.min)
        } else {
            0.0
        }
    }
}

/// Normalization bounds for the five profile features.
///
/// Derived from generator ranges and a fixed reference system so embeddings
/// of different DAGs live on one scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingBounds {
    pub cycles: Range,
    pub data_up: Range,
    pub data_do: Range,
    pub local_time: Range,
    pub round_trip: Range,
}

impl EmbeddingBounds {
    pub fn new(cycles: Range, data: Range, reference: &SystemProfile) -> Self {
        let up = |bytes: f64| bytes * 8.0 / reference.rate_up;
        let down = |bytes: f64| bytes * 8.0 / reference.rate_do;
        EmbeddingBounds {
            cycles,
            data_up: data,
            data_do: data,
            local_time: Range::new(cycles.min / reference.device_speed, cycles.max / reference.device_speed),
            round_trip: Range::new(
                up(data.min) + cycles.min / reference.edge_speed + down(0.0),
                up(data.max) + cycles.max / reference.edge_speed + down(data.max),
            ),
        }
    }
}

/// Per-task network input: a normalized profile plus neighbour positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEmbedding {
    /// `[cycles, data_up, data_do, local_exec_time, offload_round_trip_time]`, min-max scaled.
    pub profile: [f64; 5],
    /// Positions of parents in the ranked sequence, padded with [`PAD`].
    pub parents: Vec<i64>,
    /// Positions of children in the ranked sequence, padded with [`PAD`].
    pub children: Vec<i64>,
}

/// One embedding per task, in `seq.order`.
pub fn embed(
    graph: &TaskGraph,
    seq: &RankedSequence,
    profile: &SystemProfile,
    bounds: &EmbeddingBounds,
    index_len: usize,
) -> Vec<TaskEmbedding> {
    assert!(index_len >= 1, "index vectors need at least one slot");
    let neighbours = |ids: &[usize]| -> Vec<i64> {
        let mut positions: Vec<usize> = ids.iter().map(|&id| seq.position[id]).collect();
        // Lower position means higher rank.
        positions.sort_unstable();
        positions.truncate(index_len);
        let mut out: Vec<i64> = positions.into_iter().map(|p| p as i64).collect();
        out.resize(index_len, PAD);
        out
    };
    seq.order
        .iter()
        .map(|&id| {
            let task = graph.task(id);
            let times = task_times(task, profile);
            TaskEmbedding {
                profile: [
                    bounds.cycles.scale(task.cycles),
                    bounds.data_up.scale(task.data_up),
                    bounds.data_do.scale(task.data_do),
                    bounds.local_time.scale(times.local),
                    bounds.round_trip.scale(times.offload_round_trip()),
                ],
                parents: neighbours(graph.parents(id)),
                children: neighbours(graph.children(id)),
            }
        })
        .collect()
}
