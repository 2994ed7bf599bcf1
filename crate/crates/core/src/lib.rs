//! Planning toolkit for training pipelines that chain a vision encoder into
//! an LLM: interpolated performance and memory models, an exhaustive search
//! for the expected-makespan-optimal parallelism layout, bottleneck-minimal
//! microbatch scheduling with runtime throughput correction, a
//! one-forward-one-backward pipeline simulator, and inter-module routing.

pub mod domain;
pub mod perf;
pub mod pipesim;
pub mod planner;
pub mod scheduler;
pub mod workload;

pub use domain::{validate_plan, ClusterSpec, DataItem, ModelSpec, ParallelPlan, PlanViolation};
pub use perf::{
    encoder_memory, encoder_throughput, llm_duration, llm_memory, stage_layers, synth_profile,
    AxisMode, InterpGrid, PerfError, PerfProfile, SynthParams,
};
pub use pipesim::{
    evaluate_schedule, ideal_bubble_fraction, plan_routing, simulate_1f1b, EventKind, RoutingPlan,
    ScatterRange, SimError, SimEvent, SimTrace,
};
pub use planner::{
    enumerate_configs, estimate_stage_durations, expected_makespan, find_combs, guard_shapes,
    makespan, optimize, stage_durations_at, Config, MemGuard, MemoryViolation, ModuleComb,
    Objective, PlanError, PlanEvaluation,
};
pub use scheduler::{
    compute_item_durations, cost_benefit_step, record_observation, schedule_batch, solve_exact,
    solve_lpt, Assignment, CorrectionEntry, CorrectionTracker, ExactOutcome, ItemDurations,
    Module, Optimality, SolveLimits, SolverKind,
};
pub use workload::{
    build_distribution, flops_at, ingest_manifest, item_flops, sample_dataset, Bucketing,
    FlopLoad, RawRecord, ShapeDistribution, WorkloadError,
};
