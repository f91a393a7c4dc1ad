//! Four-resource latency model and the episodic offloading environment.
//!
//! A task runs either on the device CPU, or travels uplink -> edge CPU ->
//! downlink. Each of the four resources serves one task at a time and tasks
//! claim resources in ranked order. Data sizes are bytes and rates are
//! bits per second; the conversion factor is fixed at 8.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::{compute_ranks, embed, EmbeddingBounds, RankedSequence, Task, TaskEmbedding, TaskGraph};

pub const BITS_PER_BYTE: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("plan has {got} decisions but the graph has {expected} tasks")]
    IncompletePlan { expected: usize, got: usize },
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("invalid system profile: {0}")]
    InvalidProfile(String),
    #[error("invalid decision {0:?}; expected 0 or 1")]
    InvalidDecision(String),
}

/// Device, edge and channel capacities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemProfile {
    /// Device clock, cycles per second.
    pub device_speed: f64,
    /// Edge clock available to one container, cycles per second.
    pub edge_speed: f64,
    /// Whole edge server clock, cycles per second.
    pub edge_total: f64,
    /// Users sharing the edge server equally.
    pub users: u32,
    /// Uplink rate, bits per second.
    pub rate_up: f64,
    /// Downlink rate, bits per second.
    pub rate_do: f64,
}

impl SystemProfile {
    pub fn new(device_speed: f64, edge_total: f64, users: u32, rate_up: f64, rate_do: f64) -> Result<Self, SimError> {
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(device_speed) || !positive(edge_total) {
            return Err(SimError::InvalidProfile("clock speeds must be positive".into()));
        }
        if users == 0 {
            return Err(SimError::InvalidProfile("at least one user shares the edge".into()));
        }
        if !positive(rate_up) || !positive(rate_do) {
            return Err(SimError::InvalidProfile("rates must be positive".into()));
        }
        Ok(SystemProfile {
            device_speed,
            edge_speed: edge_total / users as f64,
            edge_total,
            users,
            rate_up,
            rate_do,
        })
    }

    /// 1 GHz device, one 10 GHz container (4 cores at 2.5 GHz), symmetric rate in Mbps.
    pub fn reference(rate_mbps: f64) -> Self {
        Self::new(1e9, 10e9, 1, rate_mbps * 1e6, rate_mbps * 1e6).expect("reference profile is valid")
    }

    pub fn with_rate_mbps(&self, rate_mbps: f64) -> Result<Self, SimError> {
        Self::new(self.device_speed, self.edge_total, self.users, rate_mbps * 1e6, rate_mbps * 1e6)
    }
}

/// Isolated durations of one task, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskTimes {
    pub upload: f64,
    pub edge: f64,
    pub local: f64,
    pub download: f64,
}

impl TaskTimes {
    pub fn offload_round_trip(&self) -> f64 {
        self.upload + self.edge + self.download
    }
}

pub fn task_times(task: &Task, profile: &SystemProfile) -> TaskTimes {
    TaskTimes {
        upload: task.data_up * BITS_PER_BYTE / profile.rate_up,
        edge: task.cycles / profile.edge_speed,
        local: task.cycles / profile.device_speed,
        download: task.data_do * BITS_PER_BYTE / profile.rate_do,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    Local,
    Offload,
}

impl Decision {
    pub fn from_bit(bit: u8) -> Result<Self, SimError> {
        match bit {
            0 => Ok(Decision::Local),
            1 => Ok(Decision::Offload),
            other => Err(SimError::InvalidDecision(other.to_string())),
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Decision::Local => 0,
            Decision::Offload => 1,
        }
    }
}

/// Decisions aligned with the ranked order (entry `i` is for `seq.order[i]`).
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OffloadingPlan(pub Vec<Decision>);

impl OffloadingPlan {
    pub fn all(n: usize, d: Decision) -> Self {
        OffloadingPlan(vec![d; n])
    }

    pub fn from_bits(bits: &[u8]) -> Result<Self, SimError> {
        bits.iter().map(|&b| Decision::from_bit(b)).collect::<Result<_, _>>().map(OffloadingPlan)
    }

    /// Plan whose decision `i` is bit `n - 1 - i` of `value`, so plan order matches numeric order.
    pub fn from_index(value: u64, n: usize) -> Self {
        OffloadingPlan((0..n).map(|i| if value >> (n - 1 - i) & 1 == 1 { Decision::Offload } else { Decision::Local }).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> Vec<u8> {
        self.0.iter().map(|d| d.bit()).collect()
    }
}

impl fmt::Display for OffloadingPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in &self.0 {
            write!(f, "{}", d.bit())?;
        }
        Ok(())
    }
}

impl FromStr for OffloadingPlan {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(Decision::Local),
                '1' => Ok(Decision::Offload),
                other => Err(SimError::InvalidDecision(other.to_string())),
            })
            .collect::<Result<_, _>>()
            .map(OffloadingPlan)
    }
}

/// Start and finish times of one task on each resource. Unused resources stay at 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskSlot {
    pub st_ud: f64,
    pub ft_ud: f64,
    pub st_up: f64,
    pub ft_up: f64,
    pub st_ec: f64,
    pub ft_ec: f64,
    pub st_do: f64,
    pub ft_do: f64,
}

impl TaskSlot {
    /// Time the task's result is available on the device.
    pub fn completion(&self) -> f64 {
        self.ft_ud.max(self.ft_do)
    }
}

/// Instants at which each resource becomes idle.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ResourceClock {
    pub device: f64,
    pub uplink: f64,
    pub edge: f64,
    pub downlink: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    /// Indexed by task id.
    pub slots: Vec<TaskSlot>,
    pub scheduled: Vec<bool>,
    pub free_at: ResourceClock,
}

impl Schedule {
    pub fn empty(n: usize) -> Self {
        Schedule { slots: vec![TaskSlot::default(); n], scheduled: vec![false; n], free_at: ResourceClock::default() }
    }

    /// Ready time of `task` on the device CPU.
    pub fn ready_device(&self, graph: &TaskGraph, task: usize) -> f64 {
        graph.parents(task).iter().map(|&p| self.slots[p].ft_ud.max(self.slots[p].ft_do)).fold(0.0, f64::max)
    }

    /// Ready time of `task` on the uplink.
    pub fn ready_uplink(&self, graph: &TaskGraph, task: usize) -> f64 {
        graph.parents(task).iter().map(|&p| self.slots[p].ft_ud.max(self.slots[p].ft_up)).fold(0.0, f64::max)
    }

    /// Latest edge finish among the parents of `task`.
    pub fn parents_edge_finish(&self, graph: &TaskGraph, task: usize) -> f64 {
        graph.parents(task).iter().map(|&p| self.slots[p].ft_ec).fold(0.0, f64::max)
    }

    /// Places `task` under `decision`, honouring precedence and resource occupancy.
    pub fn place(&mut self, graph: &TaskGraph, task: usize, times: &TaskTimes, decision: Decision) -> TaskSlot {
        let mut slot = TaskSlot::default();
        match decision {
            Decision::Local => {
                slot.st_ud = self.ready_device(graph, task).max(self.free_at.device);
                slot.ft_ud = slot.st_ud + times.local;
                self.free_at.device = slot.ft_ud;
            }
            Decision::Offload => {
                slot.st_up = self.ready_uplink(graph, task).max(self.free_at.uplink);
                slot.ft_up = slot.st_up + times.upload;
                self.free_at.uplink = slot.ft_up;

                let ready_ec = slot.ft_up.max(self.parents_edge_finish(graph, task));
                slot.st_ec = ready_ec.max(self.free_at.edge);
                slot.ft_ec = slot.st_ec + times.edge;
                self.free_at.edge = slot.ft_ec;

                slot.st_do = slot.ft_ec.max(self.free_at.downlink);
                slot.ft_do = slot.st_do + times.download;
                self.free_at.downlink = slot.ft_do;
            }
        }
        self.slots[task] = slot;
        self.scheduled[task] = true;
        slot
    }

    /// Latest completion among scheduled tasks; 0 for an empty schedule.
    pub fn latency(&self) -> f64 {
        self.slots
            .iter()
            .zip(&self.scheduled)
            .filter(|(_, &s)| s)
            .map(|(slot, _)| slot.completion())
            .fold(0.0, f64::max)
    }
}

/// Application latency of a complete plan together with the schedule it induces.
pub fn evaluate_plan(
    graph: &TaskGraph,
    seq: &RankedSequence,
    plan: &OffloadingPlan,
    profile: &SystemProfile,
) -> Result<(f64, Schedule), SimError> {
    if plan.len() != graph.len() {
        return Err(SimError::IncompletePlan { expected: graph.len(), got: plan.len() });
    }
    let mut schedule = Schedule::empty(graph.len());
    for (&task, &decision) in seq.order.iter().zip(&plan.0) {
        schedule.place(graph, task, &task_times(graph.task(task), profile), decision);
    }
    let latency = graph.exit_tasks().map(|e| schedule.slots[e].completion()).fold(0.0, f64::max);
    Ok((latency, schedule))
}

/// Everything about an episode that does not change while stepping.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeContext {
    pub graph: TaskGraph,
    pub seq: RankedSequence,
    pub embeddings: Vec<TaskEmbedding>,
    pub profile: SystemProfile,
    /// Indexed by task id.
    pub times: Vec<TaskTimes>,
}

impl EpisodeContext {
    pub fn new(graph: TaskGraph, profile: SystemProfile, bounds: &EmbeddingBounds, index_len: usize) -> Self {
        let seq = compute_ranks(&graph, &profile);
        let embeddings = embed(&graph, &seq, &profile, bounds, index_len);
        let times = graph.tasks().iter().map(|t| task_times(t, &profile)).collect();
        EpisodeContext { graph, seq, embeddings, profile, times }
    }

    pub fn len(&self) -> usize {
        self.graph.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graph.is_empty()
    }
}

/// Environment state: the static context, the partial plan and the schedule it induced.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub ctx: Arc<EpisodeContext>,
    pub plan: OffloadingPlan,
    pub schedule: Schedule,
    latency: f64,
}

impl EnvState {
    pub fn cursor(&self) -> usize {
        self.plan.len()
    }

    pub fn is_done(&self) -> bool {
        self.cursor() == self.ctx.len()
    }

    /// Latency of the partial plan.
    pub fn latency(&self) -> f64 {
        self.latency
    }

    /// Task id the next action applies to.
    pub fn current_task(&self) -> Option<usize> {
        self.ctx.seq.order.get(self.cursor()).copied()
    }

    /// Schedules the task at the cursor and returns the reward `-(AL_new - AL_old)`.
    pub fn step_mut(&mut self, decision: Decision) -> Result<f64, SimError> {
        let task = self.current_task().ok_or(SimError::EpisodeFinished)?;
        let slot = self.schedule.place(&self.ctx.graph, task, &self.ctx.times[task], decision);
        self.plan.0.push(decision);
        let previous = self.latency;
        self.latency = previous.max(slot.completion());
        Ok(-(self.latency - previous))
    }

    pub fn step(&self, decision: Decision) -> Result<(EnvState, f64), SimError> {
        let mut next = self.clone();
        let reward = next.step_mut(decision)?;
        Ok((next, reward))
    }
}

pub fn reset(ctx: Arc<EpisodeContext>) -> EnvState {
    let n = ctx.len();
    EnvState { ctx, plan: OffloadingPlan::default(), schedule: Schedule::empty(n), latency: 0.0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::Range;

    fn single(cycles: f64, up: f64, down: f64) -> TaskGraph {
        TaskGraph::new(vec![Task { id: 0, cycles, data_up: up, data_do: down }], vec![]).unwrap()
    }

    fn ctx(graph: TaskGraph, profile: SystemProfile) -> Arc<EpisodeContext> {
        let bounds = EmbeddingBounds::new(Range::new(1e7, 1e8), Range::new(5e3, 5e4), &SystemProfile::reference(10.0));
        Arc::new(EpisodeContext::new(graph, profile, &bounds, 12))
    }

    #[test]
    fn closed_form_task_times() {
        let profile = SystemProfile::reference(8.5);
        let t = task_times(&Task { id: 0, cycles: 1e7, data_up: 5000.0, data_do: 0.0 }, &profile);
        assert!((t.upload * 1e3 - 40_000.0 / 8.5e6 * 1e3).abs() < 1e-12);
        assert!((t.upload * 1e3 - 4.705_882_352_941_176).abs() < 1e-9);
        assert!((t.local - 0.010).abs() < 1e-15);
        assert!((t.edge - 0.001).abs() < 1e-15);
    }

    #[test]
    fn container_share_divides_edge() {
        let p = SystemProfile::new(1e9, 40e9, 4, 1e6, 1e6).unwrap();
        assert_eq!(p.edge_speed, 10e9);
        assert!(SystemProfile::new(1e9, 1e9, 0, 1.0, 1.0).is_err());
        assert!(SystemProfile::new(1e9, 1e9, 1, 0.0, 1.0).is_err());
    }

    #[test]
    fn single_task_local_reward() {
        let p = SystemProfile::reference(8.5);
        let mut s = reset(ctx(single(1e7, 5e3, 5e3), p));
        let r = s.step_mut(Decision::Local).unwrap();
        assert_eq!(r, -0.01);
        assert_eq!(s.schedule.slots[0].ft_ud, 0.01);
        assert_eq!(s.step_mut(Decision::Local), Err(SimError::EpisodeFinished));
    }

    #[test]
    fn single_task_offload_reward() {
        let p = SystemProfile::reference(8.5);
        let g = single(1e7, 5e3, 5e3);
        let t = task_times(g.task(0), &p);
        let mut s = reset(ctx(g, p));
        let r = s.step_mut(Decision::Offload).unwrap();
        assert!((r + (t.upload + t.edge + t.download)).abs() < 1e-15);
        let slot = s.schedule.slots[0];
        assert_eq!(slot.ft_ud, 0.0);
        assert!(0.0 < slot.ft_up && slot.ft_up <= slot.ft_ec && slot.ft_ec <= slot.ft_do);
    }

    #[test]
    fn uplink_serializes_independent_offloads() {
        let p = SystemProfile::reference(8.5);
        let tasks = (0..2).map(|id| Task { id, cycles: 1e7, data_up: 5e3, data_do: 1e3 }).collect();
        let g = TaskGraph::new(tasks, vec![]).unwrap();
        let t = task_times(g.task(0), &p);
        let seq = compute_ranks(&g, &p);
        let (_, sched) = evaluate_plan(&g, &seq, &OffloadingPlan::all(2, Decision::Offload), &p).unwrap();
        let second = seq.order[1];
        assert!((sched.slots[second].ft_up - 2.0 * t.upload).abs() < 1e-15);
    }

    #[test]
    fn serial_local_chain() {
        let tasks = (0..3).map(|id| Task { id, cycles: 1e7, data_up: 1e4, data_do: 1e4 }).collect();
        let g = TaskGraph::new(tasks, vec![(0, 1), (1, 2)]).unwrap();
        let p = SystemProfile::reference(10.0);
        let seq = compute_ranks(&g, &p);
        let (al, _) = evaluate_plan(&g, &seq, &OffloadingPlan::all(3, Decision::Local), &p).unwrap();
        assert!((al - 0.030).abs() < 1e-15);
        assert_eq!(
            evaluate_plan(&g, &seq, &OffloadingPlan::all(2, Decision::Local), &p).unwrap_err(),
            SimError::IncompletePlan { expected: 3, got: 2 }
        );
    }

    #[test]
    fn reset_is_fresh() {
        let p = SystemProfile::reference(10.0);
        let c = ctx(single(1e7, 5e3, 5e3), p);
        let a = reset(c.clone());
        assert_eq!(a.cursor(), 0);
        assert_eq!(a.latency(), 0.0);
        let mut b = reset(c.clone());
        b.step_mut(Decision::Offload).unwrap();
        assert_eq!(reset(c), a);
    }

    #[test]
    fn plan_text_forms() {
        let plan: OffloadingPlan = "0110".parse().unwrap();
        assert_eq!(plan.bits(), vec![0, 1, 1, 0]);
        assert_eq!(plan.to_string(), "0110");
        assert_eq!(OffloadingPlan::from_index(0b0110, 4), plan);
        assert!("012".parse::<OffloadingPlan>().is_err());
    }
}
