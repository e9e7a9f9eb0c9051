//! How much episodic memory does rehearsal need? One REPLAY run per
//! per-task capacity, including unbounded memory, on the same curriculum.

use dialogue_cl::data::{BenchmarkSpec, Setting};
use dialogue_cl::harness::{ablate_memory, DataSource, RunConfig};
use dialogue_cl::strategies::StrategyKind;
use dialogue_cl::Result;

fn main() -> Result<()> {
    let mut cfg = RunConfig::synthetic(StrategyKind::Replay, Setting::Intent);
    cfg.data = DataSource::Synthetic {
        spec: BenchmarkSpec {
            n_domains: 4,
            dialogues_per_domain: vec![80],
            disjoint: true,
            seed: 21,
        },
    };
    // a gentler schedule than the default: with large memories the replay
    // pool grows and warm-started phases at a high lr can stall
    cfg.curriculum.train.lr = 3e-3;
    cfg.curriculum.train.epochs = 150;

    let capacities = [Some(1), Some(5), Some(10), Some(50), None];
    let points = ablate_memory(&cfg, &capacities, None)?;
    println!("{:>10}  {:>12}  {:>10}", "capacity", "avg metric", "stored");
    for p in &points {
        let cap = match p.capacity {
            Some(n) => n.to_string(),
            None => "ALL".to_string(),
        };
        println!("{cap:>10}  {:>12.2}  {:>10}", p.avg_metric, p.memory_examples);
    }
    Ok(())
}
