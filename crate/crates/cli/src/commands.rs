//! Subcommand implementations: fit, analyze, plan, schedule, simulate.
//! Every command is deterministic given its arguments (seeds explicit).

use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pipeplan_core::{
    build_distribution, compute_item_durations, encoder_memory, enumerate_configs,
    estimate_stage_durations, evaluate_schedule, expected_makespan, guard_shapes,
    ingest_manifest, llm_memory, makespan, optimize, sample_dataset, schedule_batch,
    synth_profile, Assignment, Bucketing, ClusterSpec, DataItem, MemGuard, ModelSpec,
    Objective, Optimality, ParallelPlan, PerfProfile, PlanError, PlanEvaluation,
    ShapeDistribution, SimTrace, SolveLimits, SolverKind, SynthParams,
};

use crate::formats::{
    self, read_doc, read_manifest, write_doc, BatchScheduleDoc, BatchTraceDoc, ClusterDoc,
    DistributionDoc, MeasurementsDoc, PlanDoc, ProfileDoc, ScheduleDoc, TraceDoc,
    TraceSummaryDoc,
};

/// Planner, microbatch scheduler and pipeline simulator for heterogeneous
/// encoder+LLM training.
#[derive(Debug, Parser)]
#[command(name = "pipeplan", version, about)]
pub struct Cli {
    /// Print extra detail (plan: include the full ranked feasible list).
    #[arg(long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Build a performance profile document (synthetic or fitted).
    Fit(FitArgs),
    /// Sample a dataset manifest into a shape-distribution document.
    Analyze(AnalyzeArgs),
    /// Search for the best parallelism plan.
    Plan(PlanArgs),
    /// Partition each global batch into balanced microbatch buckets.
    Schedule(ScheduleArgs),
    /// Simulate the pipeline and report idle time.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitMode {
    /// Generate a profile from the built-in analytic cost model.
    Synth,
    /// Fit a profile from a raw measurement table.
    Fit,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, value_enum)]
    pub mode: FitMode,
    /// GPUs per node; tp axes cover powers of two up to this (synth mode).
    #[arg(long, default_value_t = 8)]
    pub node: u32,
    #[arg(long, default_value_t = 32)]
    pub e_layers: u32,
    #[arg(long, default_value_t = 32)]
    pub l_layers: u32,
    #[arg(long, default_value_t = 1024)]
    pub e_hidden: u32,
    #[arg(long, default_value_t = 4096)]
    pub l_hidden: u32,
    /// Tokens each encoder instance contributes to the LLM input.
    #[arg(long, default_value_t = 576)]
    pub e_seq_len: u32,
    /// Measurement table (fit mode).
    #[arg(long)]
    pub measurements: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BucketingArg {
    Pow2,
    Fixed,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// JSONL dataset manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Sample size retained for statistics (capped at the dataset size).
    #[arg(long, default_value_t = 4096)]
    pub sample_n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = BucketingArg::Pow2)]
    pub bucketing: BucketingArg,
    /// Bucket width for fixed bucketing.
    #[arg(long, default_value_t = 128)]
    pub bucket_width: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    Mean,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MemGuardArg {
    Mean,
    P99,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Profile document from `fit`.
    #[arg(long)]
    pub profile: PathBuf,
    /// Distribution document from `analyze`.
    #[arg(long)]
    pub dist: PathBuf,
    #[arg(long)]
    pub gpus: u32,
    #[arg(long)]
    pub node: u32,
    /// Usable bytes per GPU.
    #[arg(long)]
    pub mem: f64,
    /// Global batch size in items.
    #[arg(long)]
    pub gbs: u64,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Mean)]
    pub objective: ObjectiveArg,
    #[arg(long, value_enum, default_value_t = MemGuardArg::Mean)]
    pub mem_guard: MemGuardArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    /// Plan document from `plan`.
    #[arg(long)]
    pub plan: PathBuf,
    /// Profile document from `fit`.
    #[arg(long)]
    pub profile: PathBuf,
    /// JSONL dataset manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Branch-and-bound node budget per batch (0 forces the LPT fallback).
    #[arg(long, default_value_t = 1_000_000)]
    pub node_budget: u64,
    /// Optional wall-clock cap per batch, milliseconds.
    #[arg(long)]
    pub time_limit_ms: Option<u64>,
    /// Shuffle the manifest (seeded) before slicing into global batches.
    #[arg(long)]
    pub shuffle: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineArg {
    /// Seeded uniform-random partition with equal bucket counts.
    Random,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Plan document from `plan`.
    #[arg(long)]
    pub plan: PathBuf,
    /// Schedule document from `schedule` (optional with --baseline).
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    /// Profile document from `fit`.
    #[arg(long)]
    pub profile: PathBuf,
    /// JSONL dataset manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Backward pass duration as a multiple of the forward pass.
    #[arg(long, default_value_t = 2.0)]
    pub backward_ratio: f64,
    /// Also simulate a baseline partition for comparison.
    #[arg(long, value_enum)]
    pub baseline: Option<BaselineArg>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Dispatches a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Fit(args) => cmd_fit(&args),
        Cmd::Analyze(args) => cmd_analyze(&args),
        Cmd::Plan(args) => cmd_plan(&args, cli.verbose),
        Cmd::Schedule(args) => cmd_schedule(&args),
        Cmd::Simulate(args) => cmd_simulate(&args),
    }
}

/// True when the error chain bottoms out in planner infeasibility (exit
/// code 3) rather than an input problem (exit code 2).
pub fn is_infeasibility(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| {
        matches!(cause.downcast_ref::<PlanError>(), Some(PlanError::NoFeasibleConfig { .. }))
    })
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let doc = match args.mode {
        FitMode::Synth => {
            let model = ModelSpec {
                e_layers: args.e_layers,
                l_layers: args.l_layers,
                e_hidden: args.e_hidden,
                l_hidden: args.l_hidden,
                e_seq_len: args.e_seq_len,
            };
            // Only the node width matters to the generator; the carrier
            // cluster is otherwise arbitrary.
            let cluster = ClusterSpec::new(args.node.max(2), args.node, 1.0)
                .map_err(|e| anyhow::anyhow!("bad node width: {e}"))?;
            let profile = synth_profile(&model, &cluster, &SynthParams::default());
            ProfileDoc::from_profile(&profile, model, args.node)
        }
        FitMode::Fit => {
            let path = args
                .measurements
                .as_ref()
                .context("--measurements is required in fit mode")?;
            let meas: MeasurementsDoc = read_doc(path)?;
            formats::fit_profile_doc(&meas)?
        }
    };
    write_doc(&args.out, &doc)?;
    println!("wrote profile to {}", args.out.display());
    Ok(())
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<()> {
    let records = read_manifest(&args.manifest)?;
    let items = ingest_manifest(records)?;
    let sample = sample_dataset(&items, args.sample_n.max(1), args.seed)?;
    let bucketing = match args.bucketing {
        BucketingArg::Pow2 => Bucketing::PowerOfTwo,
        BucketingArg::Fixed => Bucketing::FixedWidth(args.bucket_width),
    };
    let dist = build_distribution(&sample, bucketing)?;
    let doc = DistributionDoc::from_distribution(&dist, bucketing, args.seed);
    write_doc(&args.out, &doc)?;
    println!(
        "analyzed {} items (retained {}): mean enc_batch {:.3}, mean llm_seq_len {:.3}",
        items.len(),
        doc.sample.len(),
        doc.mean_enc_batch,
        doc.mean_llm_seq
    );
    Ok(())
}

pub fn cmd_plan(args: &PlanArgs, verbose: bool) -> Result<()> {
    if args.gbs < 1 {
        bail!("--gbs must be at least 1");
    }
    let profile_doc: ProfileDoc = read_doc(&args.profile)?;
    let profile = profile_doc.to_profile()?;
    let model = profile_doc.model;
    let dist_doc: DistributionDoc = read_doc(&args.dist)?;
    let dist = dist_doc.to_distribution();
    let cluster = ClusterSpec::new(args.gpus, args.node, args.mem)
        .map_err(|e| anyhow::anyhow!("bad cluster: {e}"))?;
    let mode = match args.objective {
        ObjectiveArg::Mean => Objective::MeanShape,
        ObjectiveArg::Mc => Objective::MonteCarlo,
    };
    let guard = match args.mem_guard {
        MemGuardArg::Mean => MemGuard::Mean,
        MemGuardArg::P99 => MemGuard::P99,
    };

    let selected = optimize(&cluster, &profile, &dist, &model, args.gbs, mode, guard)?;
    let ranked = if verbose {
        Some(rank_all(&cluster, &profile, &dist, &model, args.gbs, mode, guard)?)
    } else {
        None
    };

    let doc = PlanDoc {
        cluster: ClusterDoc {
            n_gpus: cluster.n_gpus,
            gpus_per_node: cluster.gpus_per_node,
            mem_per_gpu: cluster.mem_per_gpu,
        },
        gbs: args.gbs,
        objective_mode: format!("{:?}", args.objective).to_lowercase(),
        mem_guard: format!("{:?}", args.mem_guard).to_lowercase(),
        selected,
        ranked,
    };
    write_doc(&args.out, &doc)?;
    println!(
        "selected plan {:?} (objective {:.6e} s), wrote {}",
        doc.selected.plan,
        doc.selected.objective,
        args.out.display()
    );
    Ok(())
}

/// Exhaustively evaluates every feasible instance and ranks it by the
/// search's selection order. Meant for verbose inspection of small
/// searches; unlike `optimize` it never prunes.
fn rank_all(
    cluster: &ClusterSpec,
    profile: &PerfProfile,
    dist: &ShapeDistribution,
    model: &ModelSpec,
    gbs: u64,
    mode: Objective,
    guard: MemGuard,
) -> Result<Vec<PlanEvaluation>> {
    let (guard_b, guard_s) = guard_shapes(dist, guard);
    let mut out = Vec::new();
    for (e, l) in enumerate_configs(cluster) {
        let n_max = gbs / l.2 as u64;
        for i in 1..=n_max {
            let n_mb = i as u32;
            let plan = ParallelPlan {
                e_tp: e.0,
                e_pp: e.1,
                e_dp: e.2,
                l_tp: l.0,
                l_pp: l.1,
                l_dp: l.2,
                n_mb,
            };
            let g_bsz = guard_b * gbs as f64 / (i as f64 * e.2 as f64);
            let g_seq = guard_s * gbs as f64 / (i as f64 * l.2 as f64);
            let e_mem = encoder_memory(profile, &plan, model, g_bsz)?;
            let l_mem = llm_memory(profile, &plan, model, g_seq)?;
            if e_mem > cluster.mem_per_gpu || l_mem > cluster.mem_per_gpu {
                continue;
            }
            let (e_dur, l_dur) =
                estimate_stage_durations((e, l), n_mb, dist, profile, model, gbs)?;
            let est_makespan = makespan(e.1, l.1, n_mb, e_dur, l_dur);
            let objective = match mode {
                Objective::MeanShape => est_makespan,
                Objective::MonteCarlo => {
                    expected_makespan((e, l), n_mb, &dist.sample, profile, model, gbs)?
                }
            };
            out.push(PlanEvaluation {
                plan,
                est_e_dur: e_dur,
                est_l_dur: l_dur,
                est_makespan,
                e_mem,
                l_mem,
                objective,
                feasible: true,
            });
        }
    }
    out.sort_by_key(|ev| ev.selection_key());
    Ok(out)
}

pub fn cmd_schedule(args: &ScheduleArgs) -> Result<()> {
    let plan_doc: PlanDoc = read_doc(&args.plan)?;
    if plan_doc.gbs < 1 {
        bail!("plan document has gbs < 1");
    }
    let profile_doc: ProfileDoc = read_doc(&args.profile)?;
    let profile = profile_doc.to_profile()?;
    let model = profile_doc.model;
    let plan = plan_doc.selected.plan;

    let records = read_manifest(&args.manifest)?;
    let mut items = ingest_manifest(records)?;
    if args.shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        items.shuffle(&mut rng);
    }

    let limits = SolveLimits {
        max_nodes: Some(args.node_budget),
        max_wall: args.time_limit_ms.map(Duration::from_millis),
    };
    let mut batches = Vec::new();
    for (index, batch) in items.chunks(plan_doc.gbs as usize).enumerate() {
        let assignment = schedule_batch(batch, &plan, &profile, &model, None, limits)?;
        batches.push(BatchScheduleDoc::from_assignment(index, &assignment, batch));
    }
    let n_batches = batches.len();
    let doc = ScheduleDoc { plan, gbs: plan_doc.gbs, batches };
    write_doc(&args.out, &doc)?;
    println!(
        "scheduled {} batches of up to {} items into {} buckets each, wrote {}",
        n_batches,
        plan_doc.gbs,
        plan.n_mb as u64 * plan.l_dp as u64,
        args.out.display()
    );
    Ok(())
}

/// Seeded uniform-random partition: shuffle the batch, deal round-robin so
/// bucket counts differ by at most one, and report the resulting bottleneck.
fn random_assignment(
    batch: &[DataItem],
    plan: &ParallelPlan,
    profile: &PerfProfile,
    model: &ModelSpec,
    seed: u64,
) -> Result<Assignment> {
    let m = plan.n_mb as usize * plan.l_dp as usize;
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut buckets = vec![Vec::new(); m];
    for (pos, item) in order.into_iter().enumerate() {
        buckets[pos % m].push(item);
    }
    let durations = compute_item_durations(batch, plan, profile, model, None)?;
    let mut assignment = Assignment {
        buckets,
        c_max: 0.0,
        solver: SolverKind::Lpt,
        optimality: Optimality::Heuristic,
    };
    assignment.c_max = assignment.recompute_c_max(&durations);
    Ok(assignment)
}

fn idle_and_busy(trace: &SimTrace) -> (f64, f64) {
    let idle: f64 = trace.stage_idle.iter().sum();
    let stages = trace.stage_idle.len() as f64;
    let busy = stages * trace.makespan - idle;
    (idle, busy)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    if args.schedule.is_none() && args.baseline.is_none() {
        bail!("nothing to simulate: pass --schedule and/or --baseline random");
    }
    let plan_doc: PlanDoc = read_doc(&args.plan)?;
    let plan = plan_doc.selected.plan;
    let profile_doc: ProfileDoc = read_doc(&args.profile)?;
    let profile = profile_doc.to_profile()?;
    let model = profile_doc.model;
    let records = read_manifest(&args.manifest)?;
    let items = ingest_manifest(records)?;

    // The scheduled batches drive the slicing; without a schedule the plan
    // document's gbs slices the manifest directly.
    let schedule_doc: Option<ScheduleDoc> =
        args.schedule.as_ref().map(|p| read_doc(p)).transpose()?;
    if let Some(sched) = &schedule_doc {
        if sched.plan != plan {
            bail!(
                "plan and schedule documents disagree: plan {:?} vs schedule {:?}",
                plan,
                sched.plan
            );
        }
    }
    let gbs = schedule_doc.as_ref().map_or(plan_doc.gbs, |s| s.gbs) as usize;
    if gbs < 1 {
        bail!("gbs must be at least 1");
    }

    let m = plan.n_mb as usize * plan.l_dp as usize;
    let mut batch_docs = Vec::new();
    let mut sched_makespan = 0.0;
    let mut sched_idle = 0.0;
    let mut sched_busy = 0.0;
    let mut base_makespan = 0.0;
    let mut base_idle = 0.0;
    let mut base_busy = 0.0;

    for (index, batch) in items.chunks(gbs).enumerate() {
        // Scheduled (or primary) trace for this batch.
        let scheduled = if let Some(sched) = &schedule_doc {
            let Some(batch_sched) = sched.batches.get(index) else {
                bail!("schedule document has no batch {index}");
            };
            let assignment = assignment_from_doc(batch_sched, batch, m)?;
            evaluate_schedule(&plan, &assignment, batch, &profile, &model, args.backward_ratio)?
        } else {
            let assignment =
                random_assignment(batch, &plan, &profile, &model, seed_for(args.seed, index))?;
            evaluate_schedule(&plan, &assignment, batch, &profile, &model, args.backward_ratio)?
        };
        let (i, b) = idle_and_busy(&scheduled);
        sched_makespan += scheduled.makespan;
        sched_idle += i;
        sched_busy += b;

        // Baseline trace, when both a schedule and a baseline were asked for.
        let baseline = if schedule_doc.is_some() && args.baseline.is_some() {
            let assignment =
                random_assignment(batch, &plan, &profile, &model, seed_for(args.seed, index))?;
            let trace = evaluate_schedule(
                &plan,
                &assignment,
                batch,
                &profile,
                &model,
                args.backward_ratio,
            )?;
            let (i, b) = idle_and_busy(&trace);
            base_makespan += trace.makespan;
            base_idle += i;
            base_busy += b;
            Some(trace)
        } else {
            None
        };
        batch_docs.push(BatchTraceDoc { index, scheduled, baseline });
    }
    if batch_docs.is_empty() {
        bail!("manifest is empty");
    }

    let has_baseline = batch_docs.first().is_some_and(|b| b.baseline.is_some());
    let summary = TraceSummaryDoc {
        scheduled_makespan_total: sched_makespan,
        scheduled_idle_fraction: if sched_busy > 0.0 { sched_idle / sched_busy } else { 0.0 },
        baseline_makespan_total: has_baseline.then_some(base_makespan),
        baseline_idle_fraction: has_baseline
            .then(|| if base_busy > 0.0 { base_idle / base_busy } else { 0.0 }),
        idle_ratio: (has_baseline && base_idle > 0.0).then(|| sched_idle / base_idle),
    };
    let doc = TraceDoc {
        plan,
        backward_ratio: args.backward_ratio,
        baseline_seed: args.baseline.map(|_| args.seed),
        batches: batch_docs,
        summary,
    };
    write_doc(&args.out, &doc)?;
    match (&doc.summary.baseline_idle_fraction, &doc.summary.idle_ratio) {
        (Some(base), Some(ratio)) => println!(
            "simulated {} batches: scheduled idle fraction {:.4} vs baseline {:.4} \
             (idle ratio {:.3}), wrote {}",
            doc.batches.len(),
            doc.summary.scheduled_idle_fraction,
            base,
            ratio,
            args.out.display()
        ),
        _ => println!(
            "simulated {} batches: idle fraction {:.4}, makespan total {:.6e} s, wrote {}",
            doc.batches.len(),
            doc.summary.scheduled_idle_fraction,
            doc.summary.scheduled_makespan_total,
            args.out.display()
        ),
    }
    Ok(())
}

/// Per-batch baseline seed: decorrelates batches while staying reproducible.
fn seed_for(seed: u64, batch_index: usize) -> u64 {
    seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(batch_index as u64)
}

/// Rebuilds an in-memory assignment from a schedule document's id buckets.
fn assignment_from_doc(
    doc: &BatchScheduleDoc,
    batch: &[DataItem],
    m: usize,
) -> Result<Assignment> {
    if doc.buckets.len() != m {
        bail!(
            "plan and schedule documents disagree: batch {} has {} buckets, plan needs {}",
            doc.index,
            doc.buckets.len(),
            m
        );
    }
    let index_of: std::collections::HashMap<&str, usize> =
        batch.iter().enumerate().map(|(i, d)| (d.id.as_str(), i)).collect();
    let mut seen = vec![false; batch.len()];
    let mut buckets = Vec::with_capacity(doc.buckets.len());
    for bucket in &doc.buckets {
        let mut out = Vec::with_capacity(bucket.len());
        for id in bucket {
            let Some(&i) = index_of.get(id.as_str()) else {
                bail!("schedule batch {} references unknown item id {id:?}", doc.index);
            };
            if seen[i] {
                bail!("schedule batch {} assigns item id {id:?} twice", doc.index);
            }
            seen[i] = true;
            out.push(i);
        }
        buckets.push(out);
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        bail!(
            "schedule batch {} leaves item id {:?} unassigned",
            doc.index,
            batch[missing].id
        );
    }
    let solver = if doc.solver == "exact" { SolverKind::Exact } else { SolverKind::Lpt };
    let optimality =
        if doc.optimality == "proven" { Optimality::Proven } else { Optimality::Heuristic };
    Ok(Assignment { buckets, c_max: doc.c_max, solver, optimality })
}
