//! Exhaustive data-aware search for the best heterogeneous 3D-parallelism
//! configuration: enumerate every (tp, pp, dp) split of the cluster between
//! the two modules, filter each microbatch count by per-GPU memory
//! feasibility, and return the instance minimizing the estimated iteration
//! makespan. Configurations are evaluated concurrently; sound lower-bound
//! pruning keeps large clusters fast without ever changing the argmin.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{validate_plan, ClusterSpec, DataItem, ModelSpec, ParallelPlan};
use crate::perf::{encoder_throughput, llm_duration, stage_layers, PerfError, PerfProfile};
use crate::workload::{flops_at, ShapeDistribution};

/// One module's parallelism triple (tp, pp, dp).
pub type ModuleComb = (u32, u32, u32);

/// A full configuration: encoder triple plus LLM triple.
pub type Config = (ModuleComb, ModuleComb);

/// Evaluation record for a selected (or candidate) plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEvaluation {
    pub plan: ParallelPlan,
    /// Mean-shape per-microbatch encoder stage duration, seconds.
    pub est_e_dur: f64,
    /// Mean-shape per-microbatch LLM stage duration, seconds.
    pub est_l_dur: f64,
    /// Mean-shape iteration makespan, seconds.
    pub est_makespan: f64,
    /// Per-GPU encoder memory at the guard microbatch shape, bytes.
    pub e_mem: f64,
    /// Per-GPU LLM memory at the guard microbatch shape, bytes.
    pub l_mem: f64,
    /// The value the search minimized (equals `est_makespan` in mean-shape
    /// mode; the sample average in monte-carlo mode).
    pub objective: f64,
    pub feasible: bool,
}

impl PlanEvaluation {
    /// The total order the search minimizes over: objective, then
    /// mean-shape makespan, then n_mb, then the plan tuple. Finite
    /// non-negative floats compare exactly via their bit patterns.
    #[allow(clippy::type_complexity)]
    pub fn selection_key(&self) -> (u64, u64, u32, u32, u32, u32, u32, u32, u32) {
        let p = &self.plan;
        (
            self.objective.to_bits(),
            self.est_makespan.to_bits(),
            p.n_mb,
            p.e_tp,
            p.e_pp,
            p.e_dp,
            p.l_tp,
            p.l_pp,
            p.l_dp,
        )
    }
}

/// Which objective the search minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    /// Evaluate durations at the sample-mean shapes (the fast default).
    MeanShape,
    /// Average the makespan over every retained sample item.
    MonteCarlo,
}

/// Which shape statistic the memory feasibility check uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MemGuard {
    /// Check memory at the mean microbatch shape (the default).
    Mean,
    /// Check memory at the sample's 99th-percentile shape, guarding
    /// heavy-tailed data against under-provisioning.
    P99,
}

/// The memory shortfall of the least-infeasible instance examined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryViolation {
    pub plan: ParallelPlan,
    /// Bytes the worst module would need on one GPU.
    pub required_bytes: f64,
    pub capacity_bytes: f64,
}

/// Planner errors.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error(
        "no memory-feasible configuration: closest was plan {plan:?} needing \
         {required_bytes:.3e} bytes against capacity {capacity_bytes:.3e}",
        plan = closest.plan,
        required_bytes = closest.required_bytes,
        capacity_bytes = closest.capacity_bytes
    )]
    NoFeasibleConfig { closest: MemoryViolation },
    #[error("objective sample is empty")]
    EmptySample,
    #[error(transparent)]
    Perf(#[from] PerfError),
}

/// All ordered (tp, pp, dp) triples with tp * pp * dp = gpus and
/// tp <= gpus_per_node, ascending by tp then pp.
pub fn find_combs(gpus: u32, gpus_per_node: u32) -> Vec<ModuleComb> {
    let mut combs = Vec::new();
    for tp in 1..=gpus.min(gpus_per_node) {
        if !gpus.is_multiple_of(tp) {
            continue;
        }
        let rest = gpus / tp;
        for pp in 1..=rest {
            if rest.is_multiple_of(pp) {
                combs.push((tp, pp, rest / pp));
            }
        }
    }
    combs
}

/// Every way to split the cluster between the modules, crossed with every
/// triple factorization of each side.
pub fn enumerate_configs(cluster: &ClusterSpec) -> Vec<Config> {
    let mut configs = Vec::new();
    for e_gpus in 1..cluster.n_gpus {
        let e_combs = find_combs(e_gpus, cluster.gpus_per_node);
        let l_combs = find_combs(cluster.n_gpus - e_gpus, cluster.gpus_per_node);
        for &e in &e_combs {
            for &l in &l_combs {
                configs.push((e, l));
            }
        }
    }
    configs
}

/// Per-stage forward durations of both modules for one microbatch with the
/// given aggregate shapes: module FLOPs over (group throughput * pp).
pub fn stage_durations_at(
    config: Config,
    enc_batch: f64,
    llm_seq_len: f64,
    profile: &PerfProfile,
    spec: &ModelSpec,
) -> Result<(f64, f64), PerfError> {
    let (e, l) = config;
    let fl = flops_at(enc_batch, llm_seq_len, spec);
    let e_thr = encoder_throughput(profile, enc_batch, e.0)?;
    let e_dur = fl.e_flops / (e_thr * e.1 as f64);
    let l_dur =
        llm_duration(profile, fl.l_attn_flops, fl.l_lin_flops, llm_seq_len, l.0)? / l.1 as f64;
    Ok((e_dur, l_dur))
}

/// Mean-shape stage durations: each replica's microbatch carries
/// gbs / (n_mb * dp) items of the sample-mean shape.
pub fn estimate_stage_durations(
    config: Config,
    n_mb: u32,
    dist: &ShapeDistribution,
    profile: &PerfProfile,
    spec: &ModelSpec,
    gbs: u64,
) -> Result<(f64, f64), PerfError> {
    let (e, l) = config;
    let t_bsz = dist.mean_enc_batch * gbs as f64 / (n_mb as f64 * e.2 as f64);
    let t_seq = dist.mean_llm_seq * gbs as f64 / (n_mb as f64 * l.2 as f64);
    stage_durations_at(config, t_bsz, t_seq, profile, spec)
}

/// Iteration makespan: (n_mb + e_pp + l_pp - 1) pipeline slots, each as long
/// as the slower module's stage.
pub fn makespan(e_pp: u32, l_pp: u32, n_mb: u32, e_dur: f64, l_dur: f64) -> f64 {
    (n_mb as u64 + e_pp as u64 + l_pp as u64 - 1) as f64 * e_dur.max(l_dur)
}

/// Sample-averaged makespan: each item is expanded to a full microbatch of
/// its own shape (gbs / (n_mb * dp) copies per replica), so the average
/// reflects how iteration time varies across the observed shapes.
pub fn expected_makespan(
    config: Config,
    n_mb: u32,
    sample: &[DataItem],
    profile: &PerfProfile,
    spec: &ModelSpec,
    gbs: u64,
) -> Result<f64, PlanError> {
    if sample.is_empty() {
        return Err(PlanError::EmptySample);
    }
    let (e, l) = config;
    let mut total = 0.0;
    for item in sample {
        let t_bsz = item.enc_batch as f64 * gbs as f64 / (n_mb as f64 * e.2 as f64);
        let t_seq = item.llm_seq_len as f64 * gbs as f64 / (n_mb as f64 * l.2 as f64);
        let (e_dur, l_dur) = stage_durations_at(config, t_bsz, t_seq, profile, spec)?;
        total += makespan(e.1, l.1, n_mb, e_dur, l_dur);
    }
    Ok(total / sample.len() as f64)
}

// ---------------------------------------------------------------------------
// Search internals
// ---------------------------------------------------------------------------

/// Shrink factor keeping analytically derived lower bounds sound against
/// floating-point rounding in their own evaluation.
const LB_SAFETY: f64 = 1.0 - 1e-9;

/// Per-config constants for objective lower bounds. With aggregate shapes
/// x(i) = agg / i, the linear FLOP components give per-slot durations of at
/// least ke/i (encoder) and kl/i + ka/i^2 (LLM), using an upper envelope of
/// the relevant throughput grid; both (i+P-1)/i and (i+P-1)/i^2 decrease in
/// i, so their minima sit at i = n_max.
struct LbModel {
    ke: f64,
    kl: f64,
    ka: f64,
    p: u32,
    n_max: u64,
}

impl LbModel {
    /// Lower bound on the objective over every n_mb in [1, n_max].
    fn config_lb(&self) -> f64 {
        let n = self.n_max as f64;
        let factor = (self.n_max + self.p as u64 - 1) as f64 / n;
        (factor * self.ke).max(factor * (self.kl + self.ka / n))
    }

    /// Lower bound on the objective at one specific n_mb.
    fn instance_lb(&self, i: u64) -> f64 {
        let x = i as f64;
        let slots = (i + self.p as u64 - 1) as f64;
        slots * (self.ke / x).max(self.kl / x + self.ka / (x * x))
    }

    /// First n_mb whose linear-component bound can fit under `inc`; values
    /// below it are provably worse (the bound decreases in n_mb). Backs off
    /// two steps so float rounding can only make the window wider.
    fn window_start(&self, inc: f64) -> u64 {
        let k = self.ke.max(self.kl);
        if !inc.is_finite() || k <= 0.0 {
            return 1;
        }
        if inc <= k {
            return u64::MAX;
        }
        let lo = (self.p as f64 - 1.0) * k / (inc - k);
        if lo <= 3.0 {
            1
        } else {
            (lo.floor() as u64).saturating_sub(2).max(1)
        }
    }
}

struct SearchCtx<'a> {
    cluster: &'a ClusterSpec,
    profile: &'a PerfProfile,
    dist: &'a ShapeDistribution,
    spec: &'a ModelSpec,
    gbs: u64,
    mode: Objective,
    /// Shapes the memory check scales: (enc_batch, llm_seq_len) statistics.
    guard_b: f64,
    guard_s: f64,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    plan: ParallelPlan,
    e_dur: f64,
    l_dur: f64,
    est_makespan: f64,
    e_mem: f64,
    l_mem: f64,
    objective: f64,
}

impl Candidate {
    /// The same total order as [`PlanEvaluation::selection_key`].
    #[allow(clippy::type_complexity)]
    fn key(&self) -> (u64, u64, u32, u32, u32, u32, u32, u32, u32) {
        let p = &self.plan;
        (
            self.objective.to_bits(),
            self.est_makespan.to_bits(),
            p.n_mb,
            p.e_tp,
            p.e_pp,
            p.e_dp,
            p.l_tp,
            p.l_pp,
            p.l_dp,
        )
    }
}

#[derive(Debug, Clone, Copy)]
struct Violation {
    plan: ParallelPlan,
    required: f64,
    overshoot: f64,
}

/// Outcome of scanning one module split: the best feasible candidate found
/// (if any) and the nearest memory violation (if any).
type ConfigOutcome = (Option<Candidate>, Option<Violation>);

fn atomic_min_f64(cell: &AtomicU64, value: f64) {
    let mut cur = cell.load(Ordering::Relaxed);
    while f64::from_bits(cur) > value {
        match cell.compare_exchange_weak(
            cur,
            value.to_bits(),
            Ordering::Relaxed,
            Ordering::Relaxed,
        ) {
            Ok(_) => return,
            Err(now) => cur = now,
        }
    }
}

fn plan_of(e: ModuleComb, l: ModuleComb, n_mb: u32) -> ParallelPlan {
    ParallelPlan { e_tp: e.0, e_pp: e.1, e_dp: e.2, l_tp: l.0, l_pp: l.1, l_dp: l.2, n_mb }
}

fn evaluate_config(
    config: Config,
    lbm: &LbModel,
    ctx: &SearchCtx,
    incumbent: &AtomicU64,
) -> Result<ConfigOutcome, PlanError> {
    let (e, l) = config;
    let mut best: Option<Candidate> = None;
    let mut closest: Option<Violation> = None;
    let cap = ctx.cluster.mem_per_gpu;
    let inc0 = f64::from_bits(incumbent.load(Ordering::Relaxed));
    let start = lbm.window_start(inc0);
    if start == u64::MAX {
        return Ok((None, None));
    }

    // Model-state footprints depend only on the configuration, not on n_mb;
    // interpolating them once keeps the bytes identical to what
    // encoder_memory / llm_memory would return for each instance.
    let e_layers = stage_layers(ctx.spec.e_layers, e.1) as f64;
    let l_layers = stage_layers(ctx.spec.l_layers, l.1) as f64;
    let e_model = ctx.profile.e_model_state.interp(&[e_layers, e.0 as f64])?;
    let l_model = ctx.profile.l_model_state.interp(&[l_layers, l.0 as f64])?;
    let e_stages = (e.1 + l.1) as f64;
    let l_stages = l.1 as f64;

    for i in start..=lbm.n_max {
        let inc = f64::from_bits(incumbent.load(Ordering::Relaxed));
        if lbm.instance_lb(i) > inc {
            continue;
        }
        let n_mb = i as u32;
        let plan = plan_of(e, l, n_mb);

        // Mean-shape makespan first: under the mean-shape objective it IS
        // the objective, so an instance that cannot beat the incumbent
        // needs no memory interpolation. While nothing feasible has been
        // found the incumbent is infinite, so every instance still reaches
        // the memory check and violation tracking stays complete.
        let (e_dur, l_dur) =
            estimate_stage_durations(config, n_mb, ctx.dist, ctx.profile, ctx.spec, ctx.gbs)?;
        let est_makespan = makespan(e.1, l.1, n_mb, e_dur, l_dur);
        if ctx.mode == Objective::MeanShape && est_makespan > inc {
            continue;
        }

        // Memory feasibility at the guard shapes, scaled to one microbatch.
        let g_bsz = ctx.guard_b * ctx.gbs as f64 / (i as f64 * e.2 as f64);
        let g_seq = ctx.guard_s * ctx.gbs as f64 / (i as f64 * l.2 as f64);
        let e_act = ctx.profile.e_act_state.interp(&[e_layers, e.0 as f64, g_bsz])?;
        let l_act = ctx.profile.l_act_state.interp(&[l_layers, l.0 as f64, g_seq])?;
        let e_mem = e_model + e_stages * e_act;
        let l_mem = l_model + l_stages * l_act;
        if e_mem > cap || l_mem > cap {
            let required = e_mem.max(l_mem);
            let overshoot = required - cap;
            if closest.is_none_or(|v| overshoot < v.overshoot) {
                closest = Some(Violation { plan, required, overshoot });
            }
            continue;
        }

        let objective = match ctx.mode {
            Objective::MeanShape => est_makespan,
            Objective::MonteCarlo => expected_makespan(
                config,
                n_mb,
                &ctx.dist.sample,
                ctx.profile,
                ctx.spec,
                ctx.gbs,
            )?,
        };
        let cand = Candidate { plan, e_dur, l_dur, est_makespan, e_mem, l_mem, objective };
        if best.is_none_or(|b| cand.key() < b.key()) {
            best = Some(cand);
            atomic_min_f64(incumbent, objective);
        }
    }
    Ok((best, closest))
}

/// Runs the full search and returns the best feasible instance.
///
/// Every enumerated configuration is examined for every n_mb in
/// [1, gbs / l_dp]; instances whose per-GPU memory footprint exceeds the
/// cluster capacity are discarded. Ties break toward smaller mean-shape
/// makespan, then smaller n_mb, then the lexicographically smallest plan,
/// making the result independent of evaluation order. Configurations whose
/// objective lower bound already exceeds the best value found are skipped;
/// the bound is conservative, so pruning never changes the winner.
pub fn optimize(
    cluster: &ClusterSpec,
    profile: &PerfProfile,
    dist: &ShapeDistribution,
    spec: &ModelSpec,
    gbs: u64,
    mode: Objective,
    guard: MemGuard,
) -> Result<PlanEvaluation, PlanError> {
    assert!(gbs >= 1, "gbs must be at least 1");
    profile.validate(cluster.gpus_per_node)?;
    if mode == Objective::MonteCarlo && dist.sample.is_empty() {
        return Err(PlanError::EmptySample);
    }

    let (guard_b, guard_s) = guard_shapes(dist, guard);
    let ctx = SearchCtx { cluster, profile, dist, spec, gbs, mode, guard_b, guard_s };

    let configs = enumerate_configs(cluster);

    // Throughput upper envelopes per tp degree, shared by every config's
    // lower bound.
    let node = cluster.gpus_per_node as usize;
    let mut env_e = vec![f64::INFINITY; node + 1];
    let mut env_lin = vec![f64::INFINITY; node + 1];
    let mut env_attn = vec![f64::INFINITY; node + 1];
    for tp in 1..=node {
        env_e[tp] = profile.e_thr.upper_envelope_2d(tp as f64);
        env_lin[tp] = profile.l_lin_thr.upper_envelope_2d(tp as f64);
        env_attn[tp] = profile.l_attn_thr.upper_envelope_2d(tp as f64);
    }

    let eh = spec.e_hidden as f64;
    let lh = spec.l_hidden as f64;
    let ce = 24.0 * spec.e_layers as f64 * eh * eh * spec.e_seq_len as f64;
    let cl = 24.0 * spec.l_layers as f64 * lh * lh;
    let ca = 4.0 * spec.l_layers as f64 * lh;
    let mean_b = dist.mean_enc_batch;
    let mean_s = dist.mean_llm_seq;
    // Shape extremes the bounds must cover: only the means matter for the
    // mean-shape objective, every sampled item for the Monte-Carlo one.
    let (lo_b, hi_b, lo_s, hi_s) = match mode {
        Objective::MeanShape => (mean_b, mean_b, mean_s, mean_s),
        Objective::MonteCarlo => dist.sample.iter().fold(
            (f64::INFINITY, 0.0f64, f64::INFINITY, 0.0f64),
            |(lb, hb, ls, hs), d| {
                let b = d.enc_batch as f64;
                let s = d.llm_seq_len as f64;
                (lb.min(b), hb.max(b), ls.min(s), hs.max(s))
            },
        ),
    };

    let mut work: Vec<(f64, usize, LbModel)> = Vec::with_capacity(configs.len());
    for (idx, &(e, l)) in configs.iter().enumerate() {
        let n_max = (gbs / l.2 as u64).min(u32::MAX as u64);
        if n_max == 0 {
            continue;
        }
        let agg_b = mean_b * gbs as f64 / e.2 as f64;
        let agg_s = mean_s * gbs as f64 / l.2 as f64;
        let lbm = LbModel {
            ke: LB_SAFETY * ce * agg_b / (env_e[e.0 as usize] * e.1 as f64),
            kl: LB_SAFETY * cl * agg_s / (env_lin[l.0 as usize] * l.1 as f64),
            ka: LB_SAFETY * ca * agg_s * agg_s / (env_attn[l.0 as usize] * l.1 as f64),
            p: e.1 + l.1,
            n_max,
        };
        work.push((lbm.config_lb(), idx, lbm));
    }
    // Most promising configurations first: the incumbent tightens almost
    // immediately, letting the bound skip the bulk of the space.
    work.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    // Second-tier bound for a configuration that survives the cheap test:
    // throughput envelopes restricted to the shapes its microbatches can
    // actually take (widened a hair so rounding keeps them dominating).
    let sharpen = |e: ModuleComb, l: ModuleComb, n_max: u64| {
        let n = n_max as f64;
        let b_lo = lo_b * gbs as f64 / (n * e.2 as f64) * (1.0 - 1e-9);
        let b_hi = hi_b * gbs as f64 / e.2 as f64 * (1.0 + 1e-9);
        let s_lo = lo_s * gbs as f64 / (n * l.2 as f64) * (1.0 - 1e-9);
        let s_hi = hi_s * gbs as f64 / l.2 as f64 * (1.0 + 1e-9);
        let env_e = profile.e_thr.upper_envelope_2d_range(b_lo, b_hi, e.0 as f64);
        let env_lin = profile.l_lin_thr.upper_envelope_2d_range(s_lo, s_hi, l.0 as f64);
        let env_attn = profile.l_attn_thr.upper_envelope_2d_range(s_lo, s_hi, l.0 as f64);
        let agg_b = mean_b * gbs as f64 / e.2 as f64;
        let agg_s = mean_s * gbs as f64 / l.2 as f64;
        LbModel {
            ke: LB_SAFETY * ce * agg_b / (env_e * e.1 as f64),
            kl: LB_SAFETY * cl * agg_s / (env_lin * l.1 as f64),
            ka: LB_SAFETY * ca * agg_s * agg_s / (env_attn * l.1 as f64),
            p: e.1 + l.1,
            n_max,
        }
    };

    let incumbent = AtomicU64::new(f64::INFINITY.to_bits());
    let evaluated: Result<Vec<ConfigOutcome>, PlanError> = work
        .par_iter()
        .map(|(lb, idx, lbm)| {
            let inc = f64::from_bits(incumbent.load(Ordering::Relaxed));
            if *lb > inc {
                return Ok((None, None));
            }
            let (e, l) = configs[*idx];
            let sharp = sharpen(e, l, lbm.n_max);
            if sharp.config_lb() > inc {
                return Ok((None, None));
            }
            evaluate_config(configs[*idx], &sharp, &ctx, &incumbent)
        })
        .collect();
    let evaluated = evaluated?;

    let mut best: Option<Candidate> = None;
    let mut closest: Option<Violation> = None;
    for (cand, viol) in evaluated {
        if let Some(c) = cand {
            if best.is_none_or(|b| c.key() < b.key()) {
                best = Some(c);
            }
        }
        if let Some(v) = viol {
            let better = closest.is_none_or(|c| {
                (v.overshoot.to_bits(), v.plan) < (c.overshoot.to_bits(), c.plan)
            });
            if better {
                closest = Some(v);
            }
        }
    }

    match best {
        Some(c) => {
            debug_assert_eq!(validate_plan(&c.plan, cluster), Ok(()));
            Ok(PlanEvaluation {
                plan: c.plan,
                est_e_dur: c.e_dur,
                est_l_dur: c.l_dur,
                est_makespan: c.est_makespan,
                e_mem: c.e_mem,
                l_mem: c.l_mem,
                objective: c.objective,
                feasible: true,
            })
        }
        None => {
            let closest = closest.map(|v| MemoryViolation {
                plan: v.plan,
                required_bytes: v.required,
                capacity_bytes: cluster.mem_per_gpu,
            });
            // Some config always has l_dp = 1, so at least one instance was
            // memory-checked whenever the search came up empty.
            let closest = closest.expect("infeasible search must record a violation");
            Err(PlanError::NoFeasibleConfig { closest })
        }
    }
}

/// The (enc_batch, llm_seq_len) statistics the memory feasibility check
/// scales to microbatch size: the sample means, or the 99th-percentile
/// shapes (falling back to the means when no sample was retained).
pub fn guard_shapes(dist: &ShapeDistribution, guard: MemGuard) -> (f64, f64) {
    match guard {
        MemGuard::Mean => (dist.mean_enc_batch, dist.mean_llm_seq),
        MemGuard::P99 => percentile_shapes(dist, 0.99)
            .unwrap_or((dist.mean_enc_batch, dist.mean_llm_seq)),
    }
}

/// The q-quantile of enc_batch and llm_seq_len over the retained sample
/// (smallest value covering fraction q), or None for an empty sample.
fn percentile_shapes(dist: &ShapeDistribution, q: f64) -> Option<(f64, f64)> {
    if dist.sample.is_empty() {
        return None;
    }
    let mut bs: Vec<u32> = dist.sample.iter().map(|d| d.enc_batch).collect();
    let mut ss: Vec<u32> = dist.sample.iter().map(|d| d.llm_seq_len).collect();
    bs.sort_unstable();
    ss.sort_unstable();
    let n = bs.len();
    let idx = ((n as f64 * q).ceil() as usize).clamp(1, n) - 1;
    Some((bs[idx] as f64, ss[idx] as f64))
}
