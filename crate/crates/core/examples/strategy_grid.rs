//! Strategy comparison across seeds: the final Avg. Metric for each
//! strategy, mean ± standard deviation over curriculum permutations.

use dialogue_cl::data::{BenchmarkSpec, Setting};
use dialogue_cl::harness::{grid, DataSource, RunConfig};
use dialogue_cl::strategies::StrategyKind;
use dialogue_cl::Result;

fn main() -> Result<()> {
    let mut base = RunConfig::synthetic(StrategyKind::Vanilla, Setting::Intent);
    base.data = DataSource::Synthetic {
        spec: BenchmarkSpec {
            n_domains: 4,
            dialogues_per_domain: vec![80],
            disjoint: true,
            seed: 21,
        },
    };

    let strategies = [
        StrategyKind::Vanilla,
        StrategyKind::Ewc,
        StrategyKind::Replay,
        StrategyKind::Adapter,
        StrategyKind::Multi,
    ];
    let report = grid(&base, &strategies, &[0, 1], None)?;
    println!("{:>8}  {:>14}", "strategy", "avg metric");
    for s in &report.summary {
        println!("{:>8}  {:>8.1} ± {:<4.1}", s.strategy.to_string(), s.mean, s.std);
    }
    Ok(())
}
