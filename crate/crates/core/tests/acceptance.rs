//! Acceptance suite: twelve numbered criteria spanning the planner, both
//! schedulers, the correction loop, the simulator, interpolation, routing,
//! and search latency. Each test prints one `ACCEPTANCE <n> PASS` line.

use std::time::{Duration, Instant};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use pipeplan_core::{
    build_distribution, compute_item_durations, cost_benefit_step, encoder_memory,
    enumerate_configs, estimate_stage_durations, evaluate_schedule, expected_makespan,
    find_combs, guard_shapes, ideal_bubble_fraction, item_flops, llm_memory, makespan,
    optimize, plan_routing, record_observation, schedule_batch, simulate_1f1b, solve_exact,
    solve_lpt, Assignment, Bucketing, ClusterSpec, CorrectionTracker, DataItem, ExactOutcome,
    InterpGrid, ItemDurations, MemGuard, ModelSpec, Module, Objective, Optimality,
    ParallelPlan, PlanError, SolveLimits, SolverKind, SynthParams,
};

fn pass(n: u32) {
    println!("ACCEPTANCE {n:02} PASS");
}

fn plan_7(e: (u32, u32, u32), l: (u32, u32, u32), n_mb: u32) -> ParallelPlan {
    ParallelPlan {
        e_tp: e.0,
        e_pp: e.1,
        e_dp: e.2,
        l_tp: l.0,
        l_pp: l.1,
        l_dp: l.2,
        n_mb,
    }
}

fn assert_partition(a: &Assignment, n: usize) {
    let mut seen = vec![false; n];
    for bucket in &a.buckets {
        for &i in bucket {
            assert!(!seen[i], "item {i} assigned twice");
            seen[i] = true;
        }
    }
    assert!(seen.iter().all(|&s| s), "some item left unassigned");
}

// ---------------------------------------------------------------------------
// 1. Makespan identity
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_makespan_identity() {
    // (n_mb + e_pp + l_pp - 1) * max(e_dur, l_dur) = (6 + 1 + 3 - 1) * 2.0.
    assert_eq!(makespan(1, 3, 6, 2.0, 1.5), 18.0);
    pass(1);
}

// ---------------------------------------------------------------------------
// 2. Search-space counts vs an independent divisor enumeration
// ---------------------------------------------------------------------------

type Comb = (u32, u32, u32);

/// Triple-loop divisor enumeration, written independently of find_combs.
fn oracle_combs(gpus: u32, node: u32) -> Vec<Comb> {
    let mut v = Vec::new();
    for tp in 1..=gpus {
        for pp in 1..=gpus {
            if tp > node || tp * pp > gpus || !gpus.is_multiple_of(tp * pp) {
                continue;
            }
            v.push((tp, pp, gpus / (tp * pp)));
        }
    }
    v.sort_unstable();
    v
}

fn oracle_configs(n_gpus: u32, node: u32) -> Vec<(Comb, Comb)> {
    let mut v = Vec::new();
    for e_gpus in 1..n_gpus {
        for &e in &oracle_combs(e_gpus, node) {
            for &l in &oracle_combs(n_gpus - e_gpus, node) {
                v.push((e, l));
            }
        }
    }
    v.sort_unstable();
    v
}

#[test]
fn criterion_02_search_space_counts() {
    assert_eq!(find_combs(8, 8).len(), 10);

    for node in [1u32, 2, 4, 8] {
        for n_gpus in 2..=64u32 {
            if node > n_gpus {
                continue;
            }
            let mut combs = find_combs(n_gpus, node);
            combs.sort_unstable();
            assert_eq!(combs, oracle_combs(n_gpus, node), "combs({n_gpus}, {node})");

            let cluster = ClusterSpec::new(n_gpus, node, 1.0).unwrap();
            let mut configs = enumerate_configs(&cluster);
            configs.sort_unstable();
            assert_eq!(configs, oracle_configs(n_gpus, node), "configs({n_gpus}, {node})");
        }
    }

    // The 4-GPU single-node space: 3 + 9 + 3 split configurations, matching
    // the oracle count.
    let cluster = ClusterSpec::new(4, 4, 1.0).unwrap();
    assert_eq!(enumerate_configs(&cluster).len(), oracle_configs(4, 4).len());
    assert_eq!(oracle_configs(4, 4).len(), 15);
    pass(2);
}

// ---------------------------------------------------------------------------
// 3. Planner optimality against a full feasible-set re-enumeration
// ---------------------------------------------------------------------------

fn random_model(rng: &mut ChaCha8Rng) -> ModelSpec {
    ModelSpec {
        e_layers: rng.gen_range(1..=8),
        l_layers: rng.gen_range(1..=8),
        e_hidden: *[64u32, 128, 256].choose(rng).unwrap(),
        l_hidden: *[128u32, 256, 512].choose(rng).unwrap(),
        e_seq_len: rng.gen_range(4..=64),
    }
}

fn random_params(rng: &mut ChaCha8Rng) -> SynthParams {
    SynthParams {
        e_peak_flops: rng.gen_range(5.0e12..5.0e13),
        l_lin_peak_flops: rng.gen_range(5.0e12..8.0e13),
        l_attn_peak_flops: rng.gen_range(2.0e12..3.0e13),
        tp_overhead: rng.gen_range(0.0..0.3),
        e_sat_batch: rng.gen_range(1.0..16.0),
        l_sat_seq: rng.gen_range(128.0..4096.0),
        bytes_per_param: rng.gen_range(2.0..20.0),
        act_bytes_per_token: rng.gen_range(2.0..64.0),
    }
}

#[test]
fn criterion_03_planner_matches_reenumerated_minimum() {
    let mut n_feasible = 0u32;
    let mut n_infeasible = 0u32;

    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x0C3 + seed);
        let n_gpus: u32 = rng.gen_range(2..=16);
        let node = (*[1u32, 2, 4, 8].choose(&mut rng).unwrap()).min(n_gpus);
        let mem = 10f64.powf(rng.gen_range(6.5..10.0));
        let cluster = ClusterSpec::new(n_gpus, node, mem).unwrap();
        let spec = random_model(&mut rng);
        let profile =
            pipeplan_core::synth_profile(&spec, &cluster, &random_params(&mut rng));
        let n_items = rng.gen_range(8..=32);
        let items: Vec<DataItem> = (0..n_items)
            .map(|i| DataItem {
                id: format!("it{i}"),
                enc_batch: rng.gen_range(0..=8),
                llm_seq_len: rng.gen_range(16..=512),
            })
            .collect();
        let dist = build_distribution(&items, Bucketing::PowerOfTwo).unwrap();
        let gbs: u64 = rng.gen_range(1..=64);
        let mode = if seed % 2 == 0 { Objective::MeanShape } else { Objective::MonteCarlo };
        let guard = if seed % 3 == 0 { MemGuard::P99 } else { MemGuard::Mean };
        let (guard_b, guard_s) = guard_shapes(&dist, guard);

        // Independent re-enumeration of the entire feasible set.
        let mut min_objective: Option<f64> = None;
        for (e, l) in enumerate_configs(&cluster) {
            for i in 1..=gbs / l.2 as u64 {
                let n_mb = i as u32;
                let plan = plan_7(e, l, n_mb);
                let g_bsz = guard_b * gbs as f64 / (i as f64 * e.2 as f64);
                let g_seq = guard_s * gbs as f64 / (i as f64 * l.2 as f64);
                let e_mem = encoder_memory(&profile, &plan, &spec, g_bsz).unwrap();
                let l_mem = llm_memory(&profile, &plan, &spec, g_seq).unwrap();
                if e_mem > mem || l_mem > mem {
                    continue;
                }
                let (e_dur, l_dur) =
                    estimate_stage_durations((e, l), n_mb, &dist, &profile, &spec, gbs)
                        .unwrap();
                let objective = match mode {
                    Objective::MeanShape => makespan(e.1, l.1, n_mb, e_dur, l_dur),
                    Objective::MonteCarlo => {
                        expected_makespan((e, l), n_mb, &dist.sample, &profile, &spec, gbs)
                            .unwrap()
                    }
                };
                if min_objective.is_none_or(|m| objective < m) {
                    min_objective = Some(objective);
                }
            }
        }

        match optimize(&cluster, &profile, &dist, &spec, gbs, mode, guard) {
            Ok(ev) => {
                let min = min_objective.expect("search found a plan the oracle did not");
                assert_eq!(ev.objective, min, "seed {seed}: objective is not the minimum");
                assert!(ev.feasible);
                assert_eq!(
                    pipeplan_core::validate_plan(&ev.plan, &cluster),
                    Ok(()),
                    "seed {seed}"
                );
                assert!(ev.plan.n_mb as u64 <= gbs / ev.plan.l_dp as u64);
                // The reported footprints satisfy the memory constraints and
                // reproduce the direct memory-model evaluation bit-for-bit.
                assert!(ev.e_mem <= mem && ev.l_mem <= mem);
                let i = ev.plan.n_mb as u64;
                let g_bsz = guard_b * gbs as f64 / (i as f64 * ev.plan.e_dp as f64);
                let g_seq = guard_s * gbs as f64 / (i as f64 * ev.plan.l_dp as f64);
                assert_eq!(ev.e_mem, encoder_memory(&profile, &ev.plan, &spec, g_bsz).unwrap());
                assert_eq!(ev.l_mem, llm_memory(&profile, &ev.plan, &spec, g_seq).unwrap());
                n_feasible += 1;
            }
            Err(PlanError::NoFeasibleConfig { .. }) => {
                assert!(min_objective.is_none(), "seed {seed}: oracle found a feasible plan");
                n_infeasible += 1;
            }
            Err(e) => panic!("seed {seed}: unexpected error {e}"),
        }
    }

    // The corpus must actually exercise both outcomes.
    assert!(n_feasible >= 10, "only {n_feasible} feasible cases");
    assert!(n_infeasible >= 5, "only {n_infeasible} infeasible cases");
    pass(3);
}

// ---------------------------------------------------------------------------
// 4 + 5. Exact solver vs brute force; LPT vs the Graham bound
// ---------------------------------------------------------------------------

/// 200 seeded single-stage instances (scalar durations, the classical
/// setting of the Graham bound) with dyadic quarter durations so every load
/// sum is exact in f64; N in 5..=12, m in 2..=4.
fn scheduler_corpus() -> Vec<(ItemDurations, usize)> {
    let mut out = Vec::new();
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x0C4 + seed);
        let n = rng.gen_range(5..=12);
        let m = rng.gen_range(2..=4);
        let mut e = Vec::with_capacity(n);
        for _ in 0..n {
            e.push(rng.gen_range(1..=64) as f64 / 4.0);
        }
        let l = vec![0.0; n];
        out.push((ItemDurations { e_dur: e, l_dur: l }, m));
    }
    out
}

/// 100 additional two-stage instances exercising the bottleneck objective
/// max(sum e, sum l); same dyadic grid and size ranges.
fn two_stage_corpus() -> Vec<(ItemDurations, usize)> {
    let mut out = Vec::new();
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x2C4 + seed);
        let n = rng.gen_range(5..=12);
        let m = rng.gen_range(2..=4);
        let mut e = Vec::with_capacity(n);
        let mut l = Vec::with_capacity(n);
        for _ in 0..n {
            e.push(rng.gen_range(1..=64) as f64 / 4.0);
            l.push(rng.gen_range(0..=64) as f64 / 4.0);
        }
        out.push((ItemDurations { e_dur: e, l_dur: l }, m));
    }
    out
}

/// Exhaustive optimum over all assignments, with first-use symmetry and a
/// monotone partial-max cut (loads only grow, so the cut is exact).
fn brute_force_c_max(d: &ItemDurations, m: usize) -> f64 {
    fn rec(
        i: usize,
        used: usize,
        e: &mut Vec<f64>,
        l: &mut Vec<f64>,
        d: &ItemDurations,
        m: usize,
        best: &mut f64,
    ) {
        let cur = (0..used).map(|j| e[j].max(l[j])).fold(0.0, f64::max);
        if cur >= *best {
            return;
        }
        if i == d.len() {
            *best = cur;
            return;
        }
        for j in 0..(used + 1).min(m) {
            e[j] += d.e_dur[i];
            l[j] += d.l_dur[i];
            rec(i + 1, used.max(j + 1), e, l, d, m, best);
            e[j] -= d.e_dur[i];
            l[j] -= d.l_dur[i];
        }
    }
    let mut e = vec![0.0; m];
    let mut l = vec![0.0; m];
    let mut best = f64::INFINITY;
    rec(0, 0, &mut e, &mut l, d, m, &mut best);
    best
}

#[test]
fn criterion_04_exact_solver_matches_brute_force() {
    let corpus: Vec<_> =
        scheduler_corpus().into_iter().chain(two_stage_corpus()).collect();
    for (idx, (d, m)) in corpus.iter().enumerate() {
        let brute = brute_force_c_max(d, *m);
        match solve_exact(d, *m, SolveLimits::unlimited()) {
            ExactOutcome::Proven(a) => {
                assert_eq!(a.c_max, brute, "instance {idx}: c_max differs from brute force");
                assert_eq!(a.optimality, Optimality::Proven);
                assert_eq!(a.solver, SolverKind::Exact);
                assert_partition(&a, d.len());
                assert_eq!(a.recompute_c_max(d), a.c_max);
            }
            ExactOutcome::Timeout(_) => panic!("instance {idx}: unlimited solve timed out"),
        }
    }
    pass(4);
}

#[test]
fn criterion_05_lpt_respects_the_graham_bound() {
    // Dyadic quarters make every load sum exact, so the bound can be checked
    // in exact arithmetic: 3m * lpt <= (4m - 1) * opt.
    for (idx, (d, m)) in scheduler_corpus().iter().enumerate() {
        let opt = brute_force_c_max(d, *m);
        let lpt = solve_lpt(d, *m);
        assert_partition(&lpt, d.len());
        assert_eq!(lpt.recompute_c_max(d), lpt.c_max);
        assert!(lpt.c_max >= opt, "instance {idx}: heuristic beat the optimum");
        let mf = *m as f64;
        assert!(
            3.0 * mf * lpt.c_max <= (4.0 * mf - 1.0) * opt,
            "instance {idx}: LPT {} vs optimum {} violates the Graham bound at m={m}",
            lpt.c_max,
            opt
        );
    }

    // The Graham guarantee is specific to scalar durations: with the
    // two-dimensional bottleneck objective the ratio can reach 1.5 (for
    // example items (2,0),(0,2),(2,0),(0,2),(2,2) on two buckets). What the
    // argmin placement rule does guarantee is load-before <= (E+L)/m <=
    // 2*opt, hence lpt <= 3*opt; the dominance lpt >= opt always holds.
    for (idx, (d, m)) in two_stage_corpus().iter().enumerate() {
        let opt = brute_force_c_max(d, *m);
        let lpt = solve_lpt(d, *m);
        assert_partition(&lpt, d.len());
        assert!(lpt.c_max >= opt, "two-stage instance {idx}: heuristic beat the optimum");
        assert!(
            lpt.c_max <= 3.0 * opt,
            "two-stage instance {idx}: LPT {} vs optimum {}",
            lpt.c_max,
            opt
        );
    }

    // The classical tight case: ratio exactly 7/6 = 4/3 - 1/(3*2).
    let tight = ItemDurations {
        e_dur: vec![3.0, 3.0, 2.0, 2.0, 2.0],
        l_dur: vec![0.0; 5],
    };
    let lpt = solve_lpt(&tight, 2);
    let opt = brute_force_c_max(&tight, 2);
    assert_eq!(lpt.c_max, 7.0);
    assert_eq!(opt, 6.0);
    assert_eq!(3.0 * 2.0 * lpt.c_max, (4.0 * 2.0 - 1.0) * opt);
    pass(5);
}

// ---------------------------------------------------------------------------
// 6. Balance quality at scale
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_scheduler_within_one_percent_of_lower_bound() {
    let spec = ModelSpec {
        e_layers: 8,
        l_layers: 16,
        e_hidden: 256,
        l_hidden: 1024,
        e_seq_len: 64,
    };
    let cluster = ClusterSpec::new(16, 4, 1e12).unwrap();
    let profile = pipeplan_core::synth_profile(&spec, &cluster, &SynthParams::default());
    let plan = plan_7((1, 1, 8), (1, 1, 4), 16); // m = 16 * 4 = 64 buckets

    // Heavy-tailed shapes: Pareto-like sequence lengths, spiky encoder loads.
    let mut rng = ChaCha8Rng::seed_from_u64(0x0C6);
    let items: Vec<DataItem> = (0..2048)
        .map(|i| {
            let u: f64 = rng.gen_range(1e-4..1.0);
            let seq = (48.0 / u.powf(0.7)).clamp(16.0, 16384.0) as u32;
            let enc = if rng.gen_bool(0.3) {
                0
            } else {
                let v: f64 = rng.gen_range(1e-3..1.0);
                (2.0 / v.powf(0.5)).min(64.0) as u32
            };
            DataItem { id: format!("h{i}"), enc_batch: enc, llm_seq_len: seq }
        })
        .collect();

    let a = schedule_batch(&items, &plan, &profile, &spec, None, SolveLimits::nodes(1_000_000))
        .unwrap();
    assert_partition(&a, items.len());

    let d = compute_item_durations(&items, &plan, &profile, &spec, None).unwrap();
    let m = (plan.n_mb * plan.l_dp) as usize;
    let tot_e: f64 = d.e_dur.iter().sum();
    let tot_l: f64 = d.l_dur.iter().sum();
    let max_item = (0..d.len()).map(|i| d.item_max(i)).fold(0.0, f64::max);
    let lb = (tot_e / m as f64).max(tot_l / m as f64).max(max_item);

    assert!(a.c_max >= lb * (1.0 - 1e-9), "bottleneck under the lower bound");
    assert!(
        a.c_max <= 1.01 * lb,
        "c_max {} exceeds the lower bound {} by {:.3}%",
        a.c_max,
        lb,
        100.0 * (a.c_max / lb - 1.0)
    );
    pass(6);
}

// ---------------------------------------------------------------------------
// 7. Simulator bubble identity
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_uniform_bubble_identity() {
    for p in 1u32..=6 {
        for m in 1u32..=32 {
            let (e_pp, l_pp) = if p == 1 { (1, 0) } else { (1, p - 1) };
            let plan = plan_7((1, e_pp, 1), (1, l_pp, 1), m);
            let grid = vec![vec![2.0; m as usize]; p as usize];
            let trace = simulate_1f1b(&plan, &grid, 2.0).unwrap();
            let ideal = ideal_bubble_fraction(p, m);
            if ideal == 0.0 {
                assert_eq!(trace.idle_fraction, 0.0, "p={p} m={m}");
            } else {
                let rel = (trace.idle_fraction - ideal).abs() / ideal;
                assert!(rel <= 1e-9, "p={p} m={m}: idle {} vs {}", trace.idle_fraction, ideal);
            }
        }
    }
    pass(7);
}

// ---------------------------------------------------------------------------
// 8. Scheduling cuts idle time vs random partitioning
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_scheduled_idle_at_most_half_of_random() {
    let spec = ModelSpec {
        e_layers: 8,
        l_layers: 8,
        e_hidden: 256,
        l_hidden: 512,
        e_seq_len: 384,
    };
    // Encoder 1x1x2, LLM 1x2x2: three pipeline stages per replica, two LLM
    // data-parallel replicas, 16 microbatches each -> m = 32 buckets.
    let cluster = ClusterSpec::new(6, 2, 1e12).unwrap();
    let profile = pipeplan_core::synth_profile(&spec, &cluster, &SynthParams::default());
    let plan = plan_7((1, 1, 2), (1, 2, 2), 16);
    let m = (plan.n_mb * plan.l_dp) as usize;

    let mut worst_ratio = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x0C8 + seed);
        // Wide bimodal shapes, correlated across modules (long conversations
        // carry many images): the tail items dominate whichever bucket they
        // stack up in, in both pipeline stages at once.
        let items: Vec<DataItem> = (0..256)
            .map(|i| {
                if rng.gen_bool(0.15) {
                    DataItem {
                        id: format!("t{i}"),
                        enc_batch: rng.gen_range(24..=32),
                        llm_seq_len: rng.gen_range(1536..=4096),
                    }
                } else {
                    DataItem {
                        id: format!("t{i}"),
                        enc_batch: rng.gen_range(2..=6),
                        llm_seq_len: rng.gen_range(64..=256),
                    }
                }
            })
            .collect();

        let sched =
            schedule_batch(&items, &plan, &profile, &spec, None, SolveLimits::nodes(200_000))
                .unwrap();
        let t_sched = evaluate_schedule(&plan, &sched, &items, &profile, &spec, 2.0).unwrap();

        // Seeded uniform-random partition with equal bucket counts.
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut rng);
        let mut buckets = vec![Vec::new(); m];
        for (pos, idx) in order.into_iter().enumerate() {
            buckets[pos % m].push(idx);
        }
        let d = compute_item_durations(&items, &plan, &profile, &spec, None).unwrap();
        let mut random = Assignment {
            buckets,
            c_max: 0.0,
            solver: SolverKind::Lpt,
            optimality: Optimality::Heuristic,
        };
        random.c_max = random.recompute_c_max(&d);
        let t_rand = evaluate_schedule(&plan, &random, &items, &profile, &spec, 2.0).unwrap();

        let idle_sched: f64 = t_sched.stage_idle.iter().sum();
        let idle_rand: f64 = t_rand.stage_idle.iter().sum();
        assert!(idle_rand > 0.0, "seed {seed}: random partition shows no idle");
        assert!(
            idle_sched <= 0.5 * idle_rand,
            "seed {seed}: scheduled idle {idle_sched} vs random {idle_rand}"
        );
        worst_ratio = worst_ratio.max(idle_sched / idle_rand);
    }
    println!("ACCEPTANCE 08 PASS (worst idle ratio {worst_ratio:.3})");
}

// ---------------------------------------------------------------------------
// 9. Adaptive correction activation pattern
// ---------------------------------------------------------------------------

struct CellRun {
    tracker: CorrectionTracker,
    benefits: Vec<f64>,
    mean_iteration: f64,
}

/// Simulated training loop for one (outlier rate, injected latency) cell.
/// Outlier items form their own shape bucket and run slower than predicted
/// by `latency_pct` of the batch's largest predicted stage duration.
fn run_correction_cell(
    rate: f64,
    latency_pct: f64,
    iterations: usize,
    plan: &ParallelPlan,
    profile: &pipeplan_core::PerfProfile,
    spec: &ModelSpec,
    seed: u64,
) -> CellRun {
    let mut tracker = CorrectionTracker::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut benefits = Vec::with_capacity(iterations);
    let mut iteration_sum = 0.0;

    for _ in 0..iterations {
        let items: Vec<DataItem> = (0..48)
            .map(|k| {
                let outlier = rng.gen_bool(rate);
                DataItem {
                    id: format!("x{k}"),
                    enc_batch: rng.gen_range(1..=4),
                    llm_seq_len: if outlier {
                        rng.gen_range(512..=1023)
                    } else {
                        rng.gen_range(256..=511)
                    },
                }
            })
            .collect();

        // Ground truth: predictions plus the injected latency on outliers.
        let pred = compute_item_durations(&items, plan, profile, spec, None).unwrap();
        let max_stage = (0..pred.len()).map(|i| pred.item_max(i)).fold(0.0, f64::max);
        let mut truth = ItemDurations { e_dur: pred.e_dur.clone(), l_dur: pred.l_dur.clone() };
        for (i, item) in items.iter().enumerate() {
            if item.llm_seq_len >= 512 {
                truth.l_dur[i] += latency_pct * max_stage;
            }
        }

        let uncorrected =
            schedule_batch(&items, plan, profile, spec, None, SolveLimits::nodes(0)).unwrap();
        let corrected =
            schedule_batch(&items, plan, profile, spec, Some(&tracker), SolveLimits::nodes(0))
                .unwrap();
        let realized_unc = uncorrected.recompute_c_max(&truth);
        let realized_cor = corrected.recompute_c_max(&truth);
        benefits.push(realized_unc - realized_cor);
        iteration_sum += realized_unc;

        // Feed back what actually happened, as effective throughputs.
        for (i, item) in items.iter().enumerate() {
            if pred.l_dur[i] > 0.0 {
                let fl = item_flops(item, spec);
                let flops = fl.l_attn_flops + fl.l_lin_flops;
                record_observation(
                    &mut tracker,
                    Module::Llm,
                    item.llm_seq_len as u64,
                    flops / truth.l_dur[i],
                    flops / pred.l_dur[i],
                );
            }
        }
    }
    CellRun { tracker, benefits, mean_iteration: iteration_sum / iterations as f64 }
}

#[test]
fn criterion_09_correction_toggle_follows_cost_benefit() {
    let spec = ModelSpec {
        e_layers: 4,
        l_layers: 8,
        e_hidden: 128,
        l_hidden: 512,
        e_seq_len: 16,
    };
    let cluster = ClusterSpec::new(4, 2, 1e12).unwrap();
    let profile = pipeplan_core::synth_profile(&spec, &cluster, &SynthParams::default());
    let plan = plan_7((1, 1, 1), (1, 1, 1), 8); // m = 8 buckets

    let rates = [0.01, 0.03, 0.05];
    let latencies = [0.25, 0.50, 1.00];
    let iterations = 40;
    let window = 20;

    let mut cells: Vec<Vec<CellRun>> = Vec::new();
    for (ri, &rate) in rates.iter().enumerate() {
        let mut row = Vec::new();
        for (li, &lat) in latencies.iter().enumerate() {
            row.push(run_correction_cell(
                rate,
                lat,
                iterations,
                &plan,
                &profile,
                &spec,
                0x0C9 + (ri * 3 + li) as u64,
            ));
        }
        cells.push(row);
    }

    // Recurring monitoring cost: a fixed slice of the mean iteration time,
    // shared by every cell.
    let grand_mean: f64 =
        cells.iter().flatten().map(|c| c.mean_iteration).sum::<f64>() / 9.0;
    let cost_c = 0.04 * grand_mean;

    let mut active = [[false; 3]; 3];
    for (ri, row) in cells.iter_mut().enumerate() {
        for (li, cell) in row.iter_mut().enumerate() {
            let decided = cost_benefit_step(&mut cell.tracker, cost_c, window, &cell.benefits);
            assert_eq!(decided, cell.tracker.is_active());
            // The toggle must equal the rule computed independently here:
            // mean of the last `window` realized benefits, strictly above C.
            let tail = &cell.benefits[cell.benefits.len() - window..];
            let mean_benefit: f64 = tail.iter().sum::<f64>() / window as f64;
            assert_eq!(
                decided,
                mean_benefit > cost_c,
                "cell rate={} latency={}: toggle disagrees with mean benefit {} vs cost {}",
                rates[ri],
                latencies[li],
                mean_benefit,
                cost_c
            );
            active[ri][li] = decided;
        }
    }

    // Qualitative pattern: rare mild anomalies do not pay for monitoring;
    // frequent severe ones do.
    assert!(!active[0][0], "low-rate/low-latency cell should deactivate");
    assert!(active[2][2], "high-rate/high-latency cell should stay active");
    // No cell may be active while a strictly more anomalous cell (higher
    // rate and latency) is deactivated.
    for ri in 0..3 {
        for li in 0..3 {
            if !active[ri][li] {
                continue;
            }
            for (rj, row) in active.iter().enumerate().skip(ri) {
                for (lj, &on) in row.iter().enumerate().skip(li) {
                    assert!(
                        on,
                        "activation pattern is not monotone: ({ri},{li}) on but ({rj},{lj}) off"
                    );
                }
            }
        }
    }
    pass(9);
}

// ---------------------------------------------------------------------------
// 10. Interpolation exactness
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_interpolation_reproduces_knots_and_bilinear_forms() {
    // Knot exactness on a seeded 2-D and 3-D grid with arbitrary values.
    let mut rng = ChaCha8Rng::seed_from_u64(0x0CA);
    let ax0: Vec<f64> = vec![0.5, 1.0, 3.5, 9.25];
    let ax1: Vec<f64> = vec![1.0, 2.0, 7.0];
    let values: Vec<f64> = (0..12).map(|_| rng.gen_range(0.0..1e6)).collect();
    let g2 = InterpGrid::new(vec![ax0.clone(), ax1.clone()], values.clone()).unwrap();
    for (i, &x) in ax0.iter().enumerate() {
        for (j, &y) in ax1.iter().enumerate() {
            assert_eq!(g2.interp(&[x, y]).unwrap(), values[i * 3 + j]);
        }
    }

    let az: Vec<f64> = vec![2.0, 4.0];
    let values3: Vec<f64> = (0..24).map(|_| rng.gen_range(0.0..1e6)).collect();
    let g3 = InterpGrid::new(vec![ax0, ax1, az.clone()], values3.clone()).unwrap();
    for i in 0..4 {
        for j in 0..3 {
            for k in 0..2 {
                let coords = [g3.axes()[0][i], g3.axes()[1][j], az[k]];
                assert_eq!(g3.interp(&coords).unwrap(), values3[(i * 3 + j) * 2 + k]);
            }
        }
    }

    // A bilinear ground truth with dyadic coefficients and knots is
    // reproduced exactly at interior points (every lerp step is exact).
    let f = |x: f64, y: f64| 3.0 + 0.5 * x + 2.0 * y + 0.25 * x * y;
    let xs = vec![0.0, 2.0, 4.0, 8.0];
    let ys = vec![0.0, 1.0, 2.0, 4.0];
    let vals: Vec<f64> = xs.iter().flat_map(|&x| ys.iter().map(move |&y| f(x, y))).collect();
    let bg = InterpGrid::new(vec![xs, ys], vals).unwrap();
    for &x in &[0.5, 1.0, 2.5, 3.0, 5.0, 6.0, 7.5] {
        for &y in &[0.25, 0.5, 1.5, 2.5, 3.0, 3.75] {
            assert_eq!(bg.interp(&[x, y]).unwrap(), f(x, y), "at ({x}, {y})");
        }
    }
    pass(10);
}

// ---------------------------------------------------------------------------
// 11. Routing partition
// ---------------------------------------------------------------------------

#[test]
fn criterion_11_routing_partitions_items_evenly() {
    for e_dp in 1u32..=8 {
        for l_dp in 1u32..=8 {
            for items in 1u64..=64 {
                let r = plan_routing(e_dp, l_dp, items).unwrap();
                assert_eq!(r.communicator, 0);
                // Every encoder group appears exactly once.
                let gather: Vec<u32> = r.gather.clone();
                assert_eq!(gather, (0..e_dp).collect::<Vec<_>>());
                // Scatter ranges partition [0, items) in order.
                assert_eq!(r.scatter.len(), l_dp as usize);
                let mut cursor = 0u64;
                let mut sizes = Vec::new();
                for (g, range) in r.scatter.iter().enumerate() {
                    assert_eq!(range.llm_group, g as u32);
                    assert_eq!(range.start, cursor);
                    assert!(range.end >= range.start);
                    sizes.push(range.end - range.start);
                    cursor = range.end;
                }
                assert_eq!(cursor, items);
                let min = *sizes.iter().min().unwrap();
                let max = *sizes.iter().max().unwrap();
                assert!(max - min <= 1, "shares differ by more than one item");
            }
        }
    }
    assert!(plan_routing(4, 2, 0).is_err());
    pass(11);
}

// ---------------------------------------------------------------------------
// 12. Planner latency at cluster scale
// ---------------------------------------------------------------------------

#[test]
fn criterion_12_thousand_gpu_search_under_one_second() {
    let spec = ModelSpec {
        e_layers: 32,
        l_layers: 48,
        e_hidden: 1280,
        l_hidden: 8192,
        e_seq_len: 1024,
    };
    let cluster = ClusterSpec::new(1024, 8, 80e9).unwrap();
    let profile = pipeplan_core::synth_profile(&spec, &cluster, &SynthParams::default());
    let items: Vec<DataItem> = (0..2048)
        .map(|i| DataItem {
            id: format!("d{i}"),
            enc_batch: [0u32, 1, 2, 4, 6, 8, 12, 16][i % 8],
            llm_seq_len: [256u32, 512, 1024, 1536, 2048, 4096][i % 6],
        })
        .collect();
    let dist = build_distribution(&items, Bucketing::PowerOfTwo).unwrap();

    let t0 = Instant::now();
    let ev = optimize(
        &cluster,
        &profile,
        &dist,
        &spec,
        512,
        Objective::MeanShape,
        MemGuard::Mean,
    )
    .unwrap();
    let elapsed = t0.elapsed();

    assert!(ev.feasible);
    assert!(
        elapsed < Duration::from_secs(1),
        "search took {elapsed:?} on a 1024-GPU cluster"
    );
    println!("ACCEPTANCE 12 PASS ({} ms)", elapsed.as_millis());
}
