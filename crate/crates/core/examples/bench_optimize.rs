//! Times the full plan search on a 1024-GPU cluster at global batch 512.

use std::time::Instant;

use pipeplan_core::*;

fn main() {
    let spec = ModelSpec {
        e_layers: 32,
        l_layers: 48,
        e_hidden: 1280,
        l_hidden: 8192,
        e_seq_len: 1024,
    };
    let cluster = ClusterSpec::new(1024, 8, 80e9).unwrap();
    let profile = synth_profile(&spec, &cluster, &SynthParams::default());

    let items: Vec<DataItem> = (0..2048)
        .map(|i| DataItem {
            id: format!("d{i}"),
            enc_batch: [0u32, 1, 2, 4, 6, 8, 12, 16][i % 8],
            llm_seq_len: [256u32, 512, 1024, 1536, 2048, 4096][i % 6],
        })
        .collect();
    let dist = build_distribution(&items, Bucketing::PowerOfTwo).unwrap();

    for round in 0..3 {
        let t = Instant::now();
        let eval = optimize(
            &cluster,
            &profile,
            &dist,
            &spec,
            512,
            Objective::MeanShape,
            MemGuard::Mean,
        )
        .unwrap();
        println!(
            "round {round}: {:?} objective {:.4} in {:.3?}",
            eval.plan,
            eval.objective,
            t.elapsed()
        );
    }
}
