//! Train the language model on a single intent-recognition task and
//! watch the loss curve and test accuracy.

use dialogue_cl::data::{benchmark_domains, generate_domain, BenchmarkSpec, Setting};
use dialogue_cl::strategies::{
    tasks_from_domain_data, train_curriculum, CurriculumConfig, StrategyKind,
};
use dialogue_cl::Result;

fn main() -> Result<()> {
    let spec = BenchmarkSpec {
        n_domains: 1,
        dialogues_per_domain: vec![80],
        disjoint: true,
        seed: 3,
    };
    let domain = benchmark_domains(&spec).remove(0);
    let dialogues = generate_domain(&domain, 80, 3)?;
    let data = dialogue_cl::data::DomainData {
        label: format!("{}.{}", domain.corpus, domain.name),
        train: dialogues[..64].to_vec(),
        valid: dialogues[64..72].to_vec(),
        test: dialogues[72..].to_vec(),
    };
    let tasks = tasks_from_domain_data(&[data], Setting::Intent)?;

    let cfg = CurriculumConfig::new(StrategyKind::Vanilla, Setting::Intent);
    let outcome = train_curriculum(&cfg, &tasks)?;

    let log = &outcome.logs[0];
    println!("task: {}", log.task_label);
    for (e, (tr, va)) in log.train_loss.iter().zip(&log.valid_loss).enumerate() {
        if e % 10 == 0 || e + 1 == log.train_loss.len() {
            println!("epoch {e:>3}: train loss {tr:.4}  valid loss {va:.4}");
        }
    }
    println!("kept epoch {}", log.best_epoch);
    println!("test intent accuracy: {:.1}%", outcome.matrix.avg_metric()?);
    Ok(())
}
