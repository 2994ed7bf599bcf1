//! Discrete-event simulation of a one-forward-one-backward pipeline
//! schedule over the combined encoder+LLM stage chain, plus the gather /
//! scatter routing plan between the two modules' data-parallel groups.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DataItem, ModelSpec, ParallelPlan};
use crate::perf::{PerfError, PerfProfile};
use crate::scheduler::{compute_item_durations, Assignment};

/// Forward or backward pass of one microbatch on one stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Forward,
    Backward,
}

/// One executed operation in the simulated timeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub stage: usize,
    pub microbatch: usize,
    pub kind: EventKind,
    pub start: f64,
    pub end: f64,
}

/// Simulated timeline with per-stage idle accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    /// Events ordered by start time (ties by stage, then kind).
    pub events: Vec<SimEvent>,
    pub makespan: f64,
    /// Per-stage idle time: makespan minus the stage's busy time.
    pub stage_idle: Vec<f64>,
    /// Total idle divided by total busy time across stages.
    pub idle_fraction: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("stage grid has {rows} rows but the plan has {stages} stages")]
    StageCountMismatch { rows: usize, stages: usize },
    #[error("stage {stage} lists {got} microbatch durations, expected {expect}")]
    RaggedStageGrid { stage: usize, got: usize, expect: usize },
    #[error("duration for stage {stage}, microbatch {microbatch} is not finite and non-negative")]
    BadDuration { stage: usize, microbatch: usize },
    #[error("backward/forward ratio must be finite and non-negative, got {0}")]
    BadBackwardRatio(f64),
    #[error("assignment has {got} buckets, plan needs n_mb * l_dp = {expect}")]
    BucketCountMismatch { got: usize, expect: usize },
    #[error("bucket {bucket} references item {item} outside the batch of {len}")]
    BadBucketRef { bucket: usize, item: usize, len: usize },
    #[error("routing needs at least one item per step")]
    NoItemsToRoute,
    #[error(transparent)]
    Perf(#[from] PerfError),
}

/// Closed-form bubble fraction of a uniform-duration pipeline:
/// (p - 1) / m of the busy time is spent idle.
pub fn ideal_bubble_fraction(stages: u32, n_microbatches: u32) -> f64 {
    assert!(stages >= 1 && n_microbatches >= 1);
    (stages - 1) as f64 / n_microbatches as f64
}

/// Per-stage operation list in one-forward-one-backward order: a warmup of
/// min(p-1-s, m) forwards, then alternating forward/backward pairs, then
/// the backward drain.
fn op_sequence(stage: usize, stages: usize, n_mb: usize) -> Vec<(EventKind, usize)> {
    let warmup = (stages - 1 - stage).min(n_mb);
    let mut ops = Vec::with_capacity(2 * n_mb);
    for j in 0..warmup {
        ops.push((EventKind::Forward, j));
    }
    let mut next_f = warmup;
    let mut next_b = 0;
    while next_f < n_mb {
        ops.push((EventKind::Forward, next_f));
        ops.push((EventKind::Backward, next_b));
        next_f += 1;
        next_b += 1;
    }
    while next_b < n_mb {
        ops.push((EventKind::Backward, next_b));
        next_b += 1;
    }
    ops
}

/// Simulates the one-forward-one-backward schedule for one pipeline replica.
///
/// `stage_durations[s][j]` is the forward duration of microbatch `j` on
/// stage `s` (the grid must be plan.total_stages() rows of equal length);
/// backward durations are `backward_ratio` times the forward ones.
pub fn simulate_1f1b(
    plan: &ParallelPlan,
    stage_durations: &[Vec<f64>],
    backward_ratio: f64,
) -> Result<SimTrace, SimError> {
    let stages = plan.total_stages() as usize;
    if stage_durations.len() != stages {
        return Err(SimError::StageCountMismatch { rows: stage_durations.len(), stages });
    }
    if !(backward_ratio.is_finite() && backward_ratio >= 0.0) {
        return Err(SimError::BadBackwardRatio(backward_ratio));
    }
    let n_mb = stage_durations[0].len();
    for (stage, row) in stage_durations.iter().enumerate() {
        if row.len() != n_mb {
            return Err(SimError::RaggedStageGrid { stage, got: row.len(), expect: n_mb });
        }
        for (microbatch, &d) in row.iter().enumerate() {
            if !(d.is_finite() && d >= 0.0) {
                return Err(SimError::BadDuration { stage, microbatch });
            }
        }
    }

    let ops: Vec<Vec<(EventKind, usize)>> =
        (0..stages).map(|s| op_sequence(s, stages, n_mb)).collect();
    let mut f_end = vec![vec![f64::NAN; n_mb]; stages];
    let mut b_end = vec![vec![f64::NAN; n_mb]; stages];
    let mut cursor = vec![0usize; stages];
    let mut clock = vec![0.0f64; stages];
    let mut events = Vec::with_capacity(2 * stages * n_mb);

    let mut remaining: usize = ops.iter().map(Vec::len).sum();
    while remaining > 0 {
        let mut progressed = false;
        for s in 0..stages {
            while cursor[s] < ops[s].len() {
                let (kind, j) = ops[s][cursor[s]];
                // An op is ready once its upstream counterpart has finished:
                // forwards wait on the previous stage, backwards on the next.
                let dep = match kind {
                    EventKind::Forward if s == 0 => Some(0.0),
                    EventKind::Forward => Some(f_end[s - 1][j]).filter(|t| !t.is_nan()),
                    EventKind::Backward if s == stages - 1 => {
                        Some(f_end[s][j]).filter(|t| !t.is_nan())
                    }
                    EventKind::Backward => Some(b_end[s + 1][j]).filter(|t| !t.is_nan()),
                };
                let Some(dep_end) = dep else { break };
                let dur = match kind {
                    EventKind::Forward => stage_durations[s][j],
                    EventKind::Backward => stage_durations[s][j] * backward_ratio,
                };
                let start = clock[s].max(dep_end);
                let end = start + dur;
                match kind {
                    EventKind::Forward => f_end[s][j] = end,
                    EventKind::Backward => b_end[s][j] = end,
                }
                clock[s] = end;
                events.push(SimEvent { stage: s, microbatch: j, kind, start, end });
                cursor[s] += 1;
                remaining -= 1;
                progressed = true;
            }
        }
        assert!(progressed, "pipeline dependency graph is acyclic by construction");
    }

    let makespan = events.iter().fold(0.0f64, |acc, e| acc.max(e.end));
    let mut busy = vec![0.0f64; stages];
    for e in &events {
        busy[e.stage] += e.end - e.start;
    }
    let stage_idle: Vec<f64> = busy.iter().map(|&b| makespan - b).collect();
    let total_busy: f64 = busy.iter().sum();
    let total_idle: f64 = stage_idle.iter().sum();
    let idle_fraction = if total_busy > 0.0 { total_idle / total_busy } else { 0.0 };

    events.sort_by(|a, b| {
        a.start
            .total_cmp(&b.start)
            .then(a.stage.cmp(&b.stage))
            .then(a.microbatch.cmp(&b.microbatch))
    });
    Ok(SimTrace { events, makespan, stage_idle, idle_fraction })
}

/// Simulates a scheduled global batch under the plan and returns the trace
/// of the slowest LLM data-parallel replica (ties to the lowest replica
/// index).
///
/// Bucket k feeds replica k % l_dp as its (k / l_dp)-th microbatch; a
/// stage's forward duration for a microbatch is the bucket's summed
/// per-stage item durations for that module.
pub fn evaluate_schedule(
    plan: &ParallelPlan,
    assignment: &Assignment,
    items: &[DataItem],
    profile: &PerfProfile,
    spec: &ModelSpec,
    backward_ratio: f64,
) -> Result<SimTrace, SimError> {
    let l_dp = plan.l_dp as usize;
    let n_mb = plan.n_mb as usize;
    let expect = n_mb * l_dp;
    if assignment.buckets.len() != expect {
        return Err(SimError::BucketCountMismatch { got: assignment.buckets.len(), expect });
    }
    let durations = compute_item_durations(items, plan, profile, spec, None)?;

    let mut replica_e = vec![vec![0.0f64; n_mb]; l_dp];
    let mut replica_l = vec![vec![0.0f64; n_mb]; l_dp];
    for (k, bucket) in assignment.buckets.iter().enumerate() {
        let replica = k % l_dp;
        let slot = k / l_dp;
        for &i in bucket {
            if i >= items.len() {
                return Err(SimError::BadBucketRef { bucket: k, item: i, len: items.len() });
            }
            replica_e[replica][slot] += durations.e_dur[i];
            replica_l[replica][slot] += durations.l_dur[i];
        }
    }

    let mut worst: Option<SimTrace> = None;
    for r in 0..l_dp {
        let mut grid = Vec::with_capacity(plan.total_stages() as usize);
        for _ in 0..plan.e_pp {
            grid.push(replica_e[r].clone());
        }
        for _ in 0..plan.l_pp {
            grid.push(replica_l[r].clone());
        }
        let trace = simulate_1f1b(plan, &grid, backward_ratio)?;
        let better = match &worst {
            None => true,
            Some(w) => trace.makespan > w.makespan,
        };
        if better {
            worst = Some(trace);
        }
    }
    Ok(worst.expect("l_dp >= 1 guarantees at least one replica"))
}

/// A contiguous slice of the step's items bound for one LLM group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScatterRange {
    pub llm_group: u32,
    /// First item index, inclusive.
    pub start: u64,
    /// One past the last item index.
    pub end: u64,
}

/// Forward-direction routing of encoder outputs to LLM groups through a
/// single communicator rank. The backward direction is the exact reverse:
/// each LLM group returns its range to the communicator, which redistributes
/// to the gathered encoder groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingPlan {
    /// Encoder group designated to run the exchange (always group 0).
    pub communicator: u32,
    /// Encoder groups whose outputs are gathered, in rank order.
    pub gather: Vec<u32>,
    /// Contiguous, maximally equal ranges scattered to the LLM groups.
    pub scatter: Vec<ScatterRange>,
}

/// Splits one step's items across LLM data-parallel groups: group sizes
/// differ by at most one, earlier groups take the remainder.
pub fn plan_routing(e_dp: u32, l_dp: u32, items_per_step: u64) -> Result<RoutingPlan, SimError> {
    assert!(e_dp >= 1 && l_dp >= 1, "data-parallel degrees must be positive");
    if items_per_step == 0 {
        return Err(SimError::NoItemsToRoute);
    }
    let base = items_per_step / l_dp as u64;
    let rem = items_per_step % l_dp as u64;
    let mut scatter = Vec::with_capacity(l_dp as usize);
    let mut start = 0u64;
    for g in 0..l_dp {
        let size = base + u64::from((g as u64) < rem);
        scatter.push(ScatterRange { llm_group: g, start, end: start + size });
        start += size;
    }
    Ok(RoutingPlan { communicator: 0, gather: (0..e_dp).collect(), scatter })
}
