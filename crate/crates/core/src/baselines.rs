//! Reference schedulers: HEFT-style, Greedy, fixed placements, random and an
//! exhaustive oracle.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::{RankedSequence, TaskGraph};
use crate::rng;
use crate::sim::{evaluate_plan, task_times, Decision, OffloadingPlan, Schedule, SystemProfile, TaskTimes};

/// Largest DAG the oracle accepts by default.
pub const DEFAULT_ORACLE_CAP: usize = 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BaselineError {
    #[error("oracle limited to {cap} tasks, graph has {n}")]
    TooLarge { n: usize, cap: usize },
    #[error("unknown scheduler {0:?}")]
    UnknownScheduler(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    Heft,
    Greedy,
    AllLocal,
    AllRemote,
    Random(u64),
    Oracle,
}

impl SchedulerKind {
    pub fn name(&self) -> String {
        match self {
            SchedulerKind::Heft => "heft".into(),
            SchedulerKind::Greedy => "greedy".into(),
            SchedulerKind::AllLocal => "all_local".into(),
            SchedulerKind::AllRemote => "all_remote".into(),
            SchedulerKind::Random(_) => "random".into(),
            SchedulerKind::Oracle => "oracle".into(),
        }
    }

    /// Runs the scheduler. The oracle uses [`DEFAULT_ORACLE_CAP`].
    pub fn plan(&self, graph: &TaskGraph, seq: &RankedSequence, profile: &SystemProfile) -> Result<OffloadingPlan, BaselineError> {
        Ok(match *self {
            SchedulerKind::Heft => heft_schedule(graph, seq, profile),
            SchedulerKind::Greedy => greedy_schedule(graph, seq, profile),
            SchedulerKind::AllLocal => OffloadingPlan::all(graph.len(), Decision::Local),
            SchedulerKind::AllRemote => OffloadingPlan::all(graph.len(), Decision::Offload),
            SchedulerKind::Random(seed) => random_schedule(graph.len(), seed),
            SchedulerKind::Oracle => oracle_schedule(graph, seq, profile, DEFAULT_ORACLE_CAP)?.0,
        })
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for SchedulerKind {
    type Err = BaselineError;

    /// Accepts `heft`, `greedy`, `all-local`, `all-remote`, `oracle`, `random` or `random:<seed>`.
    fn from_str(s: &str) -> Result<Self, BaselineError> {
        let normalized = s.trim().to_ascii_lowercase().replace('-', "_");
        Ok(match normalized.as_str() {
            "heft" => SchedulerKind::Heft,
            "greedy" => SchedulerKind::Greedy,
            "all_local" => SchedulerKind::AllLocal,
            "all_remote" => SchedulerKind::AllRemote,
            "oracle" => SchedulerKind::Oracle,
            "random" => SchedulerKind::Random(0),
            other => match other.strip_prefix("random:").and_then(|seed| seed.parse().ok()) {
                Some(seed) => SchedulerKind::Random(seed),
                None => return Err(BaselineError::UnknownScheduler(s.to_string())),
            },
        })
    }
}

fn list_schedule(
    graph: &TaskGraph,
    seq: &RankedSequence,
    profile: &SystemProfile,
    mut choose: impl FnMut(&Schedule, usize, &TaskTimes) -> Decision,
) -> OffloadingPlan {
    let mut schedule = Schedule::empty(graph.len());
    let mut plan = Vec::with_capacity(graph.len());
    for &task in &seq.order {
        let times = task_times(graph.task(task), profile);
        let decision = choose(&schedule, task, &times);
        schedule.place(graph, task, &times, decision);
        plan.push(decision);
    }
    OffloadingPlan(plan)
}

/// Earliest-finish-time placement in rank order, aware of resource occupancy.
/// Ties go to local execution.
pub fn heft_schedule(graph: &TaskGraph, seq: &RankedSequence, profile: &SystemProfile) -> OffloadingPlan {
    list_schedule(graph, seq, profile, |schedule, task, times| {
        let finish = |d| schedule.clone().place(graph, task, times, d).completion();
        if finish(Decision::Offload) < finish(Decision::Local) {
            Decision::Offload
        } else {
            Decision::Local
        }
    })
}

/// Like [`heft_schedule`] but the estimate sees only precedence ready times,
/// not which resources are busy.
pub fn greedy_schedule(graph: &TaskGraph, seq: &RankedSequence, profile: &SystemProfile) -> OffloadingPlan {
    list_schedule(graph, seq, profile, |schedule, task, times| {
        let local = schedule.ready_device(graph, task) + times.local;
        let uploaded = schedule.ready_uplink(graph, task) + times.upload;
        let offload = uploaded.max(schedule.parents_edge_finish(graph, task)) + times.edge + times.download;
        if offload < local {
            Decision::Offload
        } else {
            Decision::Local
        }
    })
}

pub fn random_schedule(n: usize, seed: u64) -> OffloadingPlan {
    let mut r = rng::seeded(seed);
    OffloadingPlan((0..n).map(|_| if rng::index(&mut r, 2) == 1 { Decision::Offload } else { Decision::Local }).collect())
}

/// Exact minimizer of application latency over all `2^n` plans.
///
/// Depth-first over decisions with local explored first, so plans are visited in
/// increasing binary value. A prefix is cut once its latency reaches the best
/// complete latency found so far; latency never decreases as a plan grows, so
/// no cut branch can hold a strictly better plan. Ties keep the smallest value.
pub fn oracle_schedule(
    graph: &TaskGraph,
    seq: &RankedSequence,
    profile: &SystemProfile,
    cap: usize,
) -> Result<(OffloadingPlan, f64), BaselineError> {
    let n = graph.len();
    if n > cap {
        return Err(BaselineError::TooLarge { n, cap });
    }
    let times: Vec<TaskTimes> = seq.order.iter().map(|&t| task_times(graph.task(t), profile)).collect();
    let mut search = OracleSearch {
        graph,
        order: &seq.order,
        times: &times,
        prefix: Vec::with_capacity(n),
        best: f64::INFINITY,
        best_plan: Vec::new(),
    };
    search.descend(Schedule::empty(n), 0.0);
    let plan = OffloadingPlan(search.best_plan);
    let (latency, _) = evaluate_plan(graph, seq, &plan, profile).expect("complete plan");
    Ok((plan, latency))
}

struct OracleSearch<'a> {
    graph: &'a TaskGraph,
    order: &'a [usize],
    times: &'a [TaskTimes],
    prefix: Vec<Decision>,
    best: f64,
    best_plan: Vec<Decision>,
}

impl OracleSearch<'_> {
    fn descend(&mut self, schedule: Schedule, latency: f64) {
        let depth = self.prefix.len();
        if depth == self.order.len() {
            if latency < self.best {
                self.best = latency;
                self.best_plan = self.prefix.clone();
            }
            return;
        }
        let task = self.order[depth];
        for decision in [Decision::Local, Decision::Offload] {
            let mut next = schedule.clone();
            let slot = next.place(self.graph, task, &self.times[depth], decision);
            let grown = latency.max(slot.completion());
            if grown >= self.best {
                continue;
            }
            self.prefix.push(decision);
            self.descend(next, grown);
            self.prefix.pop();
        }
    }
}
