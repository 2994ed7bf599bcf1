//! Microbatch scheduling: partition each global batch's items into
//! m = n_mb * l_dp buckets minimizing the bottleneck stage time, using
//! branch-and-bound under a reproducible node budget with an LPT fallback,
//! plus the adaptive throughput-correction feedback tracker.

use std::collections::{BTreeMap, BinaryHeap};
use std::cmp::Reverse;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::domain::{DataItem, ModelSpec, ParallelPlan};
use crate::perf::{PerfError, PerfProfile};
use crate::planner::stage_durations_at;
use crate::workload::{item_flops, Bucketing};

/// Per-item per-stage durations for both modules, parallel arrays.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ItemDurations {
    pub e_dur: Vec<f64>,
    pub l_dur: Vec<f64>,
}

impl ItemDurations {
    pub fn len(&self) -> usize {
        self.e_dur.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e_dur.is_empty()
    }

    /// The larger of the two stage durations for item `i`.
    pub fn item_max(&self, i: usize) -> f64 {
        self.e_dur[i].max(self.l_dur[i])
    }
}

/// Which solver produced an assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Exact,
    Lpt,
}

/// Whether the assignment is provably optimal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimality {
    Proven,
    Heuristic,
}

/// A partition of item indices into m buckets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// Item indices per bucket; together they partition 0..N.
    pub buckets: Vec<Vec<usize>>,
    /// Bottleneck time: max over buckets of max(sum e_dur, sum l_dur).
    pub c_max: f64,
    pub solver: SolverKind,
    pub optimality: Optimality,
}

impl Assignment {
    /// Recomputes the bottleneck from the bucket lists (summing in list
    /// order, matching how the solvers accumulate loads).
    pub fn recompute_c_max(&self, durations: &ItemDurations) -> f64 {
        let mut worst = 0.0f64;
        for bucket in &self.buckets {
            let mut e = 0.0;
            let mut l = 0.0;
            for &i in bucket {
                e += durations.e_dur[i];
                l += durations.l_dur[i];
            }
            worst = worst.max(e.max(l));
        }
        worst
    }
}

/// Search budget for the exact solver. Node counts are deterministic across
/// machines; the wall-clock cap is for production use only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SolveLimits {
    /// Maximum branch-and-bound nodes to explore (None = unlimited).
    pub max_nodes: Option<u64>,
    /// Optional wall-clock cap.
    pub max_wall: Option<Duration>,
}

impl SolveLimits {
    pub fn unlimited() -> Self {
        Self::default()
    }

    pub fn nodes(max_nodes: u64) -> Self {
        Self { max_nodes: Some(max_nodes), max_wall: None }
    }
}

/// Result of the exact solver: a proven optimum, or the budget ran out.
#[derive(Debug, Clone, PartialEq)]
pub enum ExactOutcome {
    Proven(Assignment),
    /// Budget exhausted; carries the best assignment found so far, if any.
    Timeout(Option<Assignment>),
}

/// Which module a throughput observation belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Module {
    Encoder,
    Llm,
}

/// Correction state for one shape bucket. Throughputs here are effective
/// module rates: item FLOPs divided by the item's per-stage duration, so a
/// corrected prediction converts straight back into a duration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectionEntry {
    /// Model-predicted effective throughput for this bucket.
    pub predicted_thr: f64,
    /// Exponentially averaged observed throughput.
    pub ema_actual_thr: f64,
    /// Deviation: ema_actual_thr - predicted_thr.
    pub deviation: f64,
}

/// Runtime feedback loop replacing model predictions with observed
/// throughput per shape bucket, gated by a cost-benefit rule. Deactivation
/// is permanent for the run; a deactivated tracker ignores observations and
/// applies no corrections.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionTracker {
    bucketing: Bucketing,
    smoothing: f64,
    entries: BTreeMap<(Module, u64), CorrectionEntry>,
    active: bool,
    deactivated: bool,
}

impl Default for CorrectionTracker {
    fn default() -> Self {
        Self::new(Bucketing::PowerOfTwo, 0.2)
    }
}

impl CorrectionTracker {
    /// `smoothing` is the exponential-average weight of each new observation.
    pub fn new(bucketing: Bucketing, smoothing: f64) -> Self {
        assert!(smoothing > 0.0 && smoothing <= 1.0, "smoothing must be in (0, 1]");
        Self { bucketing, smoothing, entries: BTreeMap::new(), active: true, deactivated: false }
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    /// Correction state for the bucket containing `shape`, if any.
    pub fn correction_for(&self, module: Module, shape: u64) -> Option<&CorrectionEntry> {
        self.entries.get(&(module, self.bucketing.bucket_of(shape)))
    }
}

/// Folds one observed throughput into the tracker. `predicted_thr` is what
/// the model forecast for the same work, so the bucket's deviation is the
/// exponential average of the observations minus that forecast. No-op once
/// the tracker is deactivated.
pub fn record_observation(
    tracker: &mut CorrectionTracker,
    module: Module,
    shape: u64,
    actual_thr: f64,
    predicted_thr: f64,
) {
    if !tracker.active {
        return;
    }
    let key = (module, tracker.bucketing.bucket_of(shape));
    let smoothing = tracker.smoothing;
    let entry = tracker
        .entries
        .entry(key)
        .and_modify(|e| {
            e.ema_actual_thr = (1.0 - smoothing) * e.ema_actual_thr + smoothing * actual_thr;
        })
        .or_insert(CorrectionEntry {
            predicted_thr,
            ema_actual_thr: actual_thr,
            deviation: 0.0,
        });
    entry.predicted_thr = predicted_thr;
    entry.deviation = entry.ema_actual_thr - entry.predicted_thr;
}

/// Applies the cost-benefit rule: the tracker stays active only while the
/// mean of the last `window_i` realized benefits strictly exceeds the
/// measured per-iteration cost. Once it fails, deactivation is permanent.
pub fn cost_benefit_step(
    tracker: &mut CorrectionTracker,
    measured_cost_c: f64,
    window_i: usize,
    realized_benefits: &[f64],
) -> bool {
    assert!(window_i >= 1, "window must be at least 1");
    if tracker.deactivated {
        return false;
    }
    let tail = &realized_benefits[realized_benefits.len().saturating_sub(window_i)..];
    let mean = if tail.is_empty() {
        0.0
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    };
    tracker.active = mean > measured_cost_c;
    if !tracker.active {
        tracker.deactivated = true;
    }
    tracker.active
}

/// Per-item per-stage durations under the plan, with tracker corrections
/// applied to shape buckets holding a recorded deviation.
pub fn compute_item_durations(
    items: &[DataItem],
    plan: &ParallelPlan,
    profile: &PerfProfile,
    spec: &ModelSpec,
    tracker: Option<&CorrectionTracker>,
) -> Result<ItemDurations, PerfError> {
    let config = (
        (plan.e_tp, plan.e_pp, plan.e_dp),
        (plan.l_tp, plan.l_pp, plan.l_dp),
    );
    let mut out = ItemDurations {
        e_dur: Vec::with_capacity(items.len()),
        l_dur: Vec::with_capacity(items.len()),
    };
    let tracker = tracker.filter(|t| t.is_active());
    for item in items {
        let (mut e_dur, mut l_dur) = stage_durations_at(
            config,
            item.enc_batch as f64,
            item.llm_seq_len as f64,
            profile,
            spec,
        )?;
        if let Some(t) = tracker {
            let fl = item_flops(item, spec);
            if e_dur > 0.0 {
                if let Some(c) = t.correction_for(Module::Encoder, item.enc_batch as u64) {
                    e_dur = corrected_duration(fl.e_flops, e_dur, c.deviation);
                }
            }
            if l_dur > 0.0 {
                if let Some(c) = t.correction_for(Module::Llm, item.llm_seq_len as u64) {
                    l_dur =
                        corrected_duration(fl.l_attn_flops + fl.l_lin_flops, l_dur, c.deviation);
                }
            }
        }
        out.e_dur.push(e_dur);
        out.l_dur.push(l_dur);
    }
    Ok(out)
}

/// Re-derives a duration from a corrected effective throughput: the model's
/// rate for this item shifted by the bucket's observed deviation. Clamps to
/// a tiny positive rate so corrupt observations cannot produce non-positive
/// throughput.
fn corrected_duration(flops: f64, predicted_dur: f64, deviation: f64) -> f64 {
    let predicted_thr = flops / predicted_dur;
    let corrected = (predicted_thr + deviation).max(predicted_thr * 1e-9);
    flops / corrected
}

/// LPT heuristic: items descending by max(e_dur, l_dur), each placed on the
/// bucket with the smallest current max-stage load (ties to the lowest
/// index). O(N log m) via a priority queue.
pub fn solve_lpt(durations: &ItemDurations, m: usize) -> Assignment {
    assert!(m >= 1, "need at least one bucket");
    let n = durations.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        durations.item_max(b).total_cmp(&durations.item_max(a)).then(a.cmp(&b))
    });

    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut e_loads = vec![0.0f64; m];
    let mut l_loads = vec![0.0f64; m];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> =
        (0..m).map(|j| Reverse((0u64, j))).collect();
    for &i in &order {
        let Reverse((_, j)) = heap.pop().expect("one entry per bucket");
        buckets[j].push(i);
        e_loads[j] += durations.e_dur[i];
        l_loads[j] += durations.l_dur[i];
        heap.push(Reverse((e_loads[j].max(l_loads[j]).to_bits(), j)));
    }
    let c_max = (0..m).fold(0.0f64, |acc, j| acc.max(e_loads[j].max(l_loads[j])));
    Assignment { buckets, c_max, solver: SolverKind::Lpt, optimality: Optimality::Heuristic }
}

/// Shrink factor applied to branch-and-bound pruning bounds so float
/// rounding in the bound arithmetic can only make pruning weaker.
const BOUND_SAFETY: f64 = 1.0 - 1e-12;

struct BnB<'a> {
    e: Vec<f64>,
    l: Vec<f64>,
    order: Vec<usize>,
    m: usize,
    // Suffix statistics over the sorted order.
    suffix_max_item: Vec<f64>,
    suffix_max_e: Vec<f64>,
    suffix_max_l: Vec<f64>,
    avg_lb: f64,
    root_lb: f64,
    // Mutable search state.
    bucket_items: Vec<Vec<usize>>,
    e_loads: Vec<f64>,
    l_loads: Vec<f64>,
    assign: Vec<usize>,
    best: Option<(f64, Vec<usize>)>,
    nodes: u64,
    max_nodes: u64,
    deadline: Option<Instant>,
    stopped: bool,
    durations: &'a ItemDurations,
}

impl BnB<'_> {
    fn current_cmax(&self) -> f64 {
        (0..self.m).fold(0.0f64, |acc, j| acc.max(self.e_loads[j].max(self.l_loads[j])))
    }

    fn lower_bound(&self, depth: usize, cur_cmax: f64) -> f64 {
        let mut lb = self.avg_lb.max(self.suffix_max_item[depth]);
        // The heaviest remaining per-stage load lands on some bucket, whose
        // stage load is already at least the stage floor.
        if depth < self.order.len() {
            let floor_e = self.e_loads.iter().copied().fold(f64::INFINITY, f64::min);
            let floor_l = self.l_loads.iter().copied().fold(f64::INFINITY, f64::min);
            lb = lb.max(floor_e + self.suffix_max_e[depth]);
            lb = lb.max(floor_l + self.suffix_max_l[depth]);
        }
        (lb * BOUND_SAFETY).max(cur_cmax)
    }

    fn out_of_budget(&mut self) -> bool {
        if self.nodes >= self.max_nodes {
            return true;
        }
        if let Some(deadline) = self.deadline {
            if self.nodes.is_multiple_of(1024) && Instant::now() >= deadline {
                return true;
            }
        }
        false
    }

    fn dfs(&mut self, depth: usize, used: usize) {
        if self.stopped {
            return;
        }
        if self.out_of_budget() {
            self.stopped = true;
            return;
        }
        self.nodes += 1;

        let n = self.order.len();
        let cur = self.current_cmax();
        let best_cmax = self.best.as_ref().map_or(f64::INFINITY, |b| b.0);
        if depth == n {
            if cur < best_cmax {
                self.best = Some((cur, self.assign.clone()));
            }
            return;
        }
        if self.lower_bound(depth, cur) >= best_cmax {
            return;
        }

        let item = self.order[depth];
        let limit = (used + 1).min(self.m);
        for j in 0..limit {
            // Buckets with identical loads are interchangeable; trying one
            // of each equivalence class is enough.
            let dup = (0..j).any(|k| {
                self.e_loads[k] == self.e_loads[j] && self.l_loads[k] == self.l_loads[j]
            });
            if dup {
                continue;
            }
            let prev_e = self.e_loads[j];
            let prev_l = self.l_loads[j];
            self.bucket_items[j].push(item);
            // Fresh in-order sums keep loads exactly equal to a later
            // recomputation over the bucket list.
            self.e_loads[j] = self.bucket_items[j].iter().map(|&i| self.e[i]).sum();
            self.l_loads[j] = self.bucket_items[j].iter().map(|&i| self.l[i]).sum();
            self.assign[depth] = j;
            self.dfs(depth + 1, used.max(j + 1));
            self.bucket_items[j].pop();
            self.e_loads[j] = prev_e;
            self.l_loads[j] = prev_l;
            if self.stopped {
                return;
            }
            if let Some((best, _)) = &self.best {
                if *best <= self.root_lb {
                    // Optimum proven by bound; no better leaf can exist.
                    return;
                }
            }
        }
    }
}

/// Exact bottleneck partition via depth-first branch-and-bound with
/// symmetry breaking (buckets first used in index order, equal-load buckets
/// deduplicated) and per-node lower bounds. Returns a proven optimum when
/// the search completes within the limits, otherwise a timeout signal
/// carrying the incumbent.
pub fn solve_exact(durations: &ItemDurations, m: usize, limits: SolveLimits) -> ExactOutcome {
    assert!(m >= 1, "need at least one bucket");
    let n = durations.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        durations.item_max(b).total_cmp(&durations.item_max(a)).then(a.cmp(&b))
    });

    let mut suffix_max_item = vec![0.0f64; n + 1];
    let mut suffix_max_e = vec![0.0f64; n + 1];
    let mut suffix_max_l = vec![0.0f64; n + 1];
    for depth in (0..n).rev() {
        let i = order[depth];
        suffix_max_item[depth] = suffix_max_item[depth + 1].max(durations.item_max(i));
        suffix_max_e[depth] = suffix_max_e[depth + 1].max(durations.e_dur[i]);
        suffix_max_l[depth] = suffix_max_l[depth + 1].max(durations.l_dur[i]);
    }
    let total_e: f64 = order.iter().map(|&i| durations.e_dur[i]).sum();
    let total_l: f64 = order.iter().map(|&i| durations.l_dur[i]).sum();
    let avg_lb = (total_e / m as f64).max(total_l / m as f64) * BOUND_SAFETY;
    let root_lb = avg_lb.max(suffix_max_item[0] * BOUND_SAFETY);

    let mut search = BnB {
        e: durations.e_dur.clone(),
        l: durations.l_dur.clone(),
        order,
        m,
        suffix_max_item,
        suffix_max_e,
        suffix_max_l,
        avg_lb,
        root_lb,
        bucket_items: vec![Vec::new(); m],
        e_loads: vec![0.0; m],
        l_loads: vec![0.0; m],
        assign: vec![usize::MAX; n],
        best: None,
        nodes: 0,
        max_nodes: limits.max_nodes.unwrap_or(u64::MAX),
        deadline: limits.max_wall.map(|w| Instant::now() + w),
        stopped: false,
        durations,
    };
    search.dfs(0, 0);

    let build = |cmax: f64, assign: &[usize], search: &BnB| {
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); m];
        for (depth, &j) in assign.iter().enumerate() {
            buckets[j].push(search.order[depth]);
        }
        Assignment {
            buckets,
            c_max: cmax,
            solver: SolverKind::Exact,
            optimality: Optimality::Proven,
        }
    };

    if search.stopped {
        let incumbent = search.best.as_ref().map(|(cmax, assign)| {
            let mut a = build(*cmax, assign, &search);
            a.optimality = Optimality::Heuristic;
            a
        });
        ExactOutcome::Timeout(incumbent)
    } else {
        let (cmax, assign) =
            search.best.as_ref().expect("complete search always reaches a leaf");
        let assignment = build(*cmax, assign, &search);
        debug_assert_eq!(assignment.recompute_c_max(search.durations), *cmax);
        ExactOutcome::Proven(assignment)
    }
}

/// Hybrid scheduler: exact solve under the limits, falling back to LPT on
/// timeout (keeping the incumbent only when strictly better).
pub fn schedule_batch(
    global_batch: &[DataItem],
    plan: &ParallelPlan,
    profile: &PerfProfile,
    spec: &ModelSpec,
    tracker: Option<&CorrectionTracker>,
    limits: SolveLimits,
) -> Result<Assignment, PerfError> {
    let m = plan.n_mb as usize * plan.l_dp as usize;
    let durations = compute_item_durations(global_batch, plan, profile, spec, tracker)?;
    Ok(match solve_exact(&durations, m, limits) {
        ExactOutcome::Proven(a) => a,
        ExactOutcome::Timeout(incumbent) => {
            let lpt = solve_lpt(&durations, m);
            match incumbent {
                Some(inc) if inc.c_max < lpt.c_max => inc,
                _ => lpt,
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn durs(loads: &[(f64, f64)]) -> ItemDurations {
        ItemDurations {
            e_dur: loads.iter().map(|p| p.0).collect(),
            l_dur: loads.iter().map(|p| p.1).collect(),
        }
    }

    fn single_stage(loads: &[f64]) -> ItemDurations {
        durs(&loads.iter().map(|&x| (x, 0.0)).collect::<Vec<_>>())
    }

    fn assert_partition(a: &Assignment, n: usize) {
        let mut seen = vec![false; n];
        for bucket in &a.buckets {
            for &i in bucket {
                assert!(!seen[i], "item {i} assigned twice");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s), "some item unassigned");
    }

    #[test]
    fn exact_matches_hand_oracle() {
        // Loads {8,7,6,5,4} over 2 buckets: optimum 15 = {8,7} vs {6,5,4}.
        let d = single_stage(&[8.0, 7.0, 6.0, 5.0, 4.0]);
        match solve_exact(&d, 2, SolveLimits::unlimited()) {
            ExactOutcome::Proven(a) => {
                assert_eq!(a.c_max, 15.0);
                assert_eq!(a.optimality, Optimality::Proven);
                assert_partition(&a, 5);
                assert_eq!(a.recompute_c_max(&d), a.c_max);
            }
            other => panic!("expected proven optimum, got {other:?}"),
        }
    }

    #[test]
    fn exact_trivial_cases() {
        let d = durs(&[(3.0, 5.0)]);
        match solve_exact(&d, 1, SolveLimits::unlimited()) {
            ExactOutcome::Proven(a) => assert_eq!(a.c_max, 5.0),
            other => panic!("{other:?}"),
        }
        let two = durs(&[(2.0, 1.0), (2.0, 1.0)]);
        match solve_exact(&two, 2, SolveLimits::unlimited()) {
            ExactOutcome::Proven(a) => {
                assert_eq!(a.c_max, 2.0);
                assert!(a.buckets.iter().all(|b| b.len() == 1));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_budget_times_out_without_incumbent() {
        let d = single_stage(&[1.0, 2.0]);
        match solve_exact(&d, 2, SolveLimits::nodes(0)) {
            ExactOutcome::Timeout(None) => {}
            other => panic!("expected empty timeout, got {other:?}"),
        }
    }

    #[test]
    fn lpt_traces_known_instances() {
        // {5,4,3,3,2,1} over 3 buckets balances perfectly at 6.
        let a = solve_lpt(&single_stage(&[5.0, 4.0, 3.0, 3.0, 2.0, 1.0]), 3);
        assert_eq!(a.c_max, 6.0);
        assert_eq!(a.solver, SolverKind::Lpt);
        assert_partition(&a, 6);

        // Graham's tight case: LPT gets 7 where the optimum is 6.
        let d = single_stage(&[3.0, 3.0, 2.0, 2.0, 2.0]);
        let lpt = solve_lpt(&d, 2);
        assert_eq!(lpt.c_max, 7.0);
        match solve_exact(&d, 2, SolveLimits::unlimited()) {
            ExactOutcome::Proven(opt) => {
                assert_eq!(opt.c_max, 6.0);
                assert_eq!(lpt.c_max / opt.c_max, 7.0 / 6.0);
            }
            other => panic!("{other:?}"),
        }

        // All-equal loads split perfectly when m divides N.
        let eq = solve_lpt(&single_stage(&[2.0; 8]), 4);
        assert_eq!(eq.c_max, 4.0);
    }

    #[test]
    fn lpt_balances_both_stages_jointly() {
        // One encoder-heavy and one llm-heavy item must not share a bucket.
        let d = durs(&[(4.0, 0.0), (0.0, 4.0), (1.0, 1.0), (1.0, 1.0)]);
        let a = solve_lpt(&d, 2);
        assert_eq!(a.c_max, 5.0);
        assert_eq!(a.recompute_c_max(&d), a.c_max);
    }

    #[test]
    fn more_items_than_buckets_pigeonholes() {
        let d = durs(&[(1.0, 2.0), (3.0, 1.0)]);
        let a = solve_lpt(&d, 4);
        assert_eq!(a.c_max, 3.0);
        assert_eq!(a.buckets.iter().filter(|b| !b.is_empty()).count(), 2);
        assert_eq!(a.buckets.len(), 4);
    }

    #[test]
    fn schedule_batch_zero_budget_forces_lpt() {
        use crate::domain::ClusterSpec;
        use crate::perf::{synth_profile, SynthParams};

        let spec = ModelSpec { e_layers: 2, l_layers: 4, e_hidden: 64, l_hidden: 128, e_seq_len: 16 };
        let cluster = ClusterSpec::new(4, 4, 1e15).unwrap();
        let profile = synth_profile(&spec, &cluster, &SynthParams::default());
        let plan = ParallelPlan { e_tp: 1, e_pp: 1, e_dp: 2, l_tp: 1, l_pp: 2, l_dp: 1, n_mb: 2 };
        let items: Vec<DataItem> = (0..6)
            .map(|i| DataItem {
                id: format!("d{i}"),
                enc_batch: 1 + (i % 3) * 4,
                llm_seq_len: 64 << (i % 3),
            })
            .collect();
        let a =
            schedule_batch(&items, &plan, &profile, &spec, None, SolveLimits::nodes(0)).unwrap();
        assert_eq!(a.solver, SolverKind::Lpt);
        assert_partition(&a, 6);
        assert_eq!(a.buckets.len(), 2);

        let exact =
            schedule_batch(&items, &plan, &profile, &spec, None, SolveLimits::unlimited())
                .unwrap();
        assert_eq!(exact.optimality, Optimality::Proven);
        assert!(exact.c_max <= a.c_max);
    }

    #[test]
    fn tracker_records_deviation_and_corrects_durations() {
        let mut t = CorrectionTracker::default();
        record_observation(&mut t, Module::Encoder, 8, 5.0e11, 1.0e12);
        let c = t.correction_for(Module::Encoder, 9).unwrap();
        assert_eq!(c.deviation, -5.0e11);

        // Equal observation leaves no deviation.
        let mut ok = CorrectionTracker::default();
        record_observation(&mut ok, Module::Llm, 100, 2.0e12, 2.0e12);
        assert_eq!(ok.correction_for(Module::Llm, 100).unwrap().deviation, 0.0);

        // Repeated identical observations converge to the observation.
        let mut conv = CorrectionTracker::new(Bucketing::PowerOfTwo, 0.5);
        for _ in 0..64 {
            record_observation(&mut conv, Module::Llm, 32, 3.0e12, 4.0e12);
        }
        let e = conv.correction_for(Module::Llm, 32).unwrap();
        assert!((e.ema_actual_thr - 3.0e12).abs() < 1e-3 * 3.0e12);
    }

    #[test]
    fn halved_throughput_doubles_duration() {
        // A -50% deviation on the bucket makes the corrected effective
        // throughput half the prediction, doubling the duration.
        let d = corrected_duration(1.0e12, 2.0, -0.25e12);
        assert!((d - 4.0).abs() < 1e-12);
    }

    #[test]
    fn cost_benefit_rule_and_permanent_deactivation() {
        let mut t = CorrectionTracker::default();
        assert!(cost_benefit_step(&mut t, 3.0, 4, &[5.0, 5.0, 5.0, 5.0]));
        assert!(t.is_active());
        // Equal benefit deactivates (strict inequality), permanently.
        assert!(!cost_benefit_step(&mut t, 5.0, 4, &[5.0, 5.0, 5.0, 5.0]));
        assert!(!t.is_active());
        assert!(!cost_benefit_step(&mut t, 0.0, 4, &[100.0, 100.0, 100.0, 100.0]));
        assert!(!t.is_active());
        // Observations are ignored after deactivation.
        record_observation(&mut t, Module::Encoder, 4, 1.0, 2.0);
        assert!(t.correction_for(Module::Encoder, 4).is_none());
    }

    #[test]
    fn window_uses_only_last_i_benefits() {
        let mut t = CorrectionTracker::default();
        // Old huge benefits outside the window must not keep it active.
        assert!(!cost_benefit_step(&mut t, 2.0, 2, &[100.0, 100.0, 1.0, 1.0]));
    }
}
