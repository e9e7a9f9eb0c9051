//! Experiment orchestration: run configuration (TOML-loadable), seeded
//! curriculum permutation, single runs with persisted artifacts, the
//! strategy×seed grid, the memory-size ablation, and plot-data export.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{load_dataset, make_benchmark, BenchmarkSpec, Setting};
use crate::error::{Error, Result};
use crate::metrics::MetricMatrix;
use crate::model::Checkpoint;
use crate::strategies::{
    tasks_from_domain_data, train_curriculum, CurriculumConfig, CurriculumOutcome,
    ResourceReport, StrategyKind, TaskData,
};

/// Environment variable overriding the output root directory.
pub const OUTPUT_ROOT_ENV: &str = "DIALOGUE_CL_OUT";

/// Where the curriculum's dialogues come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Builtin seeded synthetic benchmark.
    Synthetic { spec: BenchmarkSpec },
    /// Line-delimited dialogue file.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Directory name for the run's artifacts; derived when absent.
    #[serde(default)]
    pub name: Option<String>,
    /// Seed for the task-order permutation.
    #[serde(default)]
    pub curriculum_seed: u64,
    pub data: DataSource,
    pub curriculum: CurriculumConfig,
}

impl RunConfig {
    pub fn synthetic(strategy: StrategyKind, setting: Setting) -> Self {
        RunConfig {
            name: None,
            data: DataSource::Synthetic {
                spec: BenchmarkSpec::default(),
            },
            curriculum_seed: 0,
            curriculum: CurriculumConfig::new(strategy, setting),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(s).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.curriculum.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Stable digest of the resolved configuration.
    pub fn config_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_string(self).expect("config serializes").as_bytes());
        format!("{:x}", h.finalize())
    }

    pub fn run_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            format!(
                "{}-{}-seed{}",
                self.curriculum.strategy.as_str().to_lowercase(),
                self.curriculum.setting.as_str().to_lowercase(),
                self.curriculum_seed
            )
        })
    }
}

/// Seeded Fisher–Yates permutation of the task order.
pub fn permute_curriculum(mut tasks: Vec<TaskData>, seed: u64) -> Vec<TaskData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    tasks.shuffle(&mut rng);
    tasks
}

/// Loads and orders the tasks a config describes.
pub fn resolve_tasks(config: &RunConfig) -> Result<Vec<TaskData>> {
    let domains = match &config.data {
        DataSource::Synthetic { spec } => make_benchmark(spec)?
            .into_iter()
            .map(|(d, dialogues)| {
                let label = format!("{}.{}", d.corpus, d.name);
                crate::data::split_domain(label, dialogues)
            })
            .collect(),
        DataSource::File { path } => load_dataset(path)?,
    };
    let tasks = tasks_from_domain_data(&domains, config.curriculum.setting)?;
    Ok(permute_curriculum(tasks, config.curriculum_seed))
}

/// Everything needed to audit or reproduce a finished run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub config_hash: String,
    pub task_labels: Vec<String>,
    pub avg_metric: f64,
    /// Mean of each matrix row: the learning-dynamics series.
    pub prefix_series: Vec<f64>,
    pub matrix: MetricMatrix,
    pub resources: ResourceReport,
    pub selection_accuracy: Option<f64>,
    pub vocab_hash: String,
    pub task_secs: Vec<f64>,
    pub wall_secs: f64,
    pub lamol_yield: Vec<(usize, usize)>,
}

fn write_matrix_tsv(path: &Path, m: &MetricMatrix) -> Result<()> {
    let mut out = String::new();
    out.push_str("after_task");
    for l in &m.task_labels {
        write!(out, "\t{l}").unwrap();
    }
    out.push('\n');
    for (i, row) in m.rows.iter().enumerate() {
        write!(out, "{}", i + 1).unwrap();
        for v in row {
            write!(out, "\t{v:.4}").unwrap();
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Executes one configured run and writes its artifacts (manifest,
/// metric matrix, checkpoint) into `out_root/<run name>/`.
pub fn run(config: &RunConfig, out_root: &Path) -> Result<RunManifest> {
    let tasks = resolve_tasks(config)?;
    let started = std::time::Instant::now();
    let outcome = train_curriculum(&config.curriculum, &tasks)?;
    let wall_secs = started.elapsed().as_secs_f64();
    let manifest = manifest_of(config, &outcome, wall_secs);

    let dir = out_root.join(config.run_name());
    std::fs::create_dir_all(&dir)?;
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    write_matrix_tsv(
        &dir.join(format!(
            "matrix_{}.tsv",
            config.curriculum.setting.as_str().to_lowercase()
        )),
        &outcome.matrix,
    )?;
    let ckpt = Checkpoint {
        config: outcome.lm.clone(),
        base: outcome.base.clone(),
        adapters: outcome.bank.adapters.clone(),
        tokenizer: Some(outcome.tokenizer.clone()),
    };
    ckpt.save(&dir.join("model.ckpt"))?;
    Ok(manifest)
}

fn manifest_of(config: &RunConfig, outcome: &CurriculumOutcome, wall_secs: f64) -> RunManifest {
    RunManifest {
        config: config.clone(),
        config_hash: config.config_hash(),
        task_labels: outcome.matrix.task_labels.clone(),
        avg_metric: outcome.matrix.avg_metric().unwrap_or(f64::NAN),
        prefix_series: outcome.matrix.prefix_series(),
        matrix: outcome.matrix.clone(),
        resources: outcome.resources,
        selection_accuracy: outcome.selection_accuracy,
        vocab_hash: outcome.tokenizer.vocab_hash(),
        task_secs: outcome.task_secs.clone(),
        wall_secs,
        lamol_yield: outcome.lamol_yield.clone(),
    }
}

/// In-memory variant of [`run`] for callers that do not want artifacts.
pub fn run_in_memory(config: &RunConfig) -> Result<RunManifest> {
    let tasks = resolve_tasks(config)?;
    let started = std::time::Instant::now();
    let outcome = train_curriculum(&config.curriculum, &tasks)?;
    Ok(manifest_of(config, &outcome, started.elapsed().as_secs_f64()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridCell {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub avg_metric: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSummary {
    pub strategy: StrategyKind,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridReport {
    pub cells: Vec<GridCell>,
    pub summary: Vec<GridSummary>,
}

/// Runs the strategy×seed grid, reporting mean ± std of the final
/// Avg. Metric per strategy. Runs execute in parallel.
pub fn grid(
    base_config: &RunConfig,
    strategies: &[StrategyKind],
    seeds: &[u64],
    out_root: Option<&Path>,
) -> Result<GridReport> {
    let mut jobs = Vec::new();
    for &s in strategies {
        for &seed in seeds {
            let mut c = base_config.clone();
            c.curriculum.strategy = s;
            c.curriculum_seed = seed;
            c.curriculum.train.seed = seed;
            c.name = Some(format!(
                "grid-{}-seed{}",
                s.as_str().to_lowercase(),
                seed
            ));
            jobs.push(c);
        }
    }
    let cells: Vec<GridCell> = jobs
        .par_iter()
        .map(|c| {
            let m = match out_root {
                Some(root) => run(c, root)?,
                None => run_in_memory(c)?,
            };
            Ok(GridCell {
                strategy: c.curriculum.strategy,
                seed: c.curriculum_seed,
                avg_metric: m.avg_metric,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let summary = strategies
        .iter()
        .map(|&s| {
            let vals: Vec<f64> = cells
                .iter()
                .filter(|c| c.strategy == s)
                .map(|c| c.avg_metric)
                .collect();
            let n = vals.len();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            GridSummary {
                strategy: s,
                mean,
                std: var.sqrt(),
                n,
            }
        })
        .collect();
    let report = GridReport { cells, summary };
    if let Some(root) = out_root {
        std::fs::create_dir_all(root)?;
        std::fs::write(
            root.join("grid.json"),
            serde_json::to_string_pretty(&report)?,
        )?;
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationPoint {
    /// None = unbounded memory (ALL).
    pub capacity: Option<usize>,
    pub avg_metric: f64,
    pub memory_examples: usize,
}

/// One REPLAY run per capacity, for the metric-vs-memory-size trend.
pub fn ablate_memory(
    base_config: &RunConfig,
    capacities: &[Option<usize>],
    out_root: Option<&Path>,
) -> Result<Vec<AblationPoint>> {
    if base_config.curriculum.strategy != StrategyKind::Replay {
        return Err(Error::Config(
            "memory ablation requires the REPLAY strategy".into(),
        ));
    }
    let points: Vec<AblationPoint> = capacities
        .par_iter()
        .map(|&cap| {
            let mut c = base_config.clone();
            c.curriculum.memory_capacity = cap;
            c.name = Some(match cap {
                Some(n) => format!("ablate-mem-{n}"),
                None => "ablate-mem-all".to_string(),
            });
            let m = match out_root {
                Some(root) => run(&c, root)?,
                None => run_in_memory(&c)?,
            };
            Ok(AblationPoint {
                capacity: cap,
                avg_metric: m.avg_metric,
                memory_examples: m.resources.memory_examples,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(root) = out_root {
        std::fs::create_dir_all(root)?;
        std::fs::write(
            root.join("ablation.json"),
            serde_json::to_string_pretty(&points)?,
        )?;
    }
    Ok(points)
}

/// Columnar plot data: per-strategy Avg. Metric after each task. All
/// manifests must share a setting.
pub fn export_plots(manifests: &[RunManifest]) -> Result<String> {
    if manifests.is_empty() {
        return Err(Error::EmptyData("manifests".into()));
    }
    let setting = manifests[0].config.curriculum.setting;
    if manifests
        .iter()
        .any(|m| m.config.curriculum.setting != setting)
    {
        return Err(Error::Config("manifests mix settings".into()));
    }
    let t = manifests[0].prefix_series.len();
    if manifests.iter().any(|m| m.prefix_series.len() != t) {
        return Err(Error::Config("manifests have different task counts".into()));
    }
    let mut out = String::from("after_task");
    for m in manifests {
        write!(out, "\t{}", m.config.run_name()).unwrap();
    }
    out.push('\n');
    for i in 0..t {
        write!(out, "{}", i + 1).unwrap();
        for m in manifests {
            write!(out, "\t{:.4}", m.prefix_series[i]).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(strategy: StrategyKind) -> RunConfig {
        let mut c = RunConfig::synthetic(strategy, Setting::Intent);
        c.data = DataSource::Synthetic {
            spec: BenchmarkSpec {
                n_domains: 2,
                dialogues_per_domain: vec![30],
                disjoint: true,
                seed: 5,
            },
        };
        c.curriculum.lm.d_model = 16;
        c.curriculum.lm.d_ff = 32;
        c.curriculum.train.epochs = 4;
        c.curriculum.train.lr = 0.01;
        c.curriculum.bottleneck = 8;
        c.curriculum.max_eval_examples = 6;
        c.curriculum.max_new_tokens = 6;
        c
    }

    #[test]
    fn permutation_is_seeded_and_identity_on_singleton() {
        let tasks: Vec<TaskData> = (0..6)
            .map(|i| TaskData {
                label: format!("t{i}"),
                train: vec![],
                valid: vec![],
                test: vec![],
            })
            .collect();
        let a = permute_curriculum(tasks.clone(), 9);
        let b = permute_curriculum(tasks.clone(), 9);
        assert_eq!(
            a.iter().map(|t| &t.label).collect::<Vec<_>>(),
            b.iter().map(|t| &t.label).collect::<Vec<_>>()
        );
        let c = permute_curriculum(tasks.clone(), 10);
        assert_ne!(
            a.iter().map(|t| &t.label).collect::<Vec<_>>(),
            c.iter().map(|t| &t.label).collect::<Vec<_>>()
        );
        let single = permute_curriculum(vec![tasks[0].clone()], 3);
        assert_eq!(single[0].label, "t0");
    }

    #[test]
    fn toml_roundtrip_and_validation() {
        let c = tiny_config(StrategyKind::Replay);
        let text = toml::to_string(&c).unwrap();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, c);
        assert!(RunConfig::from_toml_str("strategy = oops").is_err());
    }

    #[test]
    fn run_writes_manifest_matrix_and_checkpoint() {
        let c = tiny_config(StrategyKind::Vanilla);
        let dir = tempfile::tempdir().unwrap();
        let m = run(&c, dir.path()).unwrap();
        assert_eq!(m.matrix.rows.len(), 2);
        assert_eq!(m.prefix_series.len(), 2);
        assert!((m.prefix_series[1] - m.avg_metric).abs() < 1e-12);
        let run_dir = dir.path().join(c.run_name());
        assert!(run_dir.join("manifest.json").exists());
        assert!(run_dir.join("matrix_intent.tsv").exists());
        let ckpt = Checkpoint::load(&run_dir.join("model.ckpt")).unwrap();
        assert_eq!(ckpt.config.d_model, 16);
        // reproducibility: same config, identical metrics
        let m2 = run_in_memory(&c).unwrap();
        assert_eq!(m.matrix.rows, m2.matrix.rows);
        assert_eq!(m.config_hash, m2.config_hash);
    }

    #[test]
    fn ablation_requires_replay() {
        let c = tiny_config(StrategyKind::Vanilla);
        assert!(matches!(
            ablate_memory(&c, &[Some(10)], None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn export_plots_shapes_and_mixed_settings() {
        let c = tiny_config(StrategyKind::Vanilla);
        let m = run_in_memory(&c).unwrap();
        let tsv = export_plots(std::slice::from_ref(&m)).unwrap();
        // header + one line per task
        assert_eq!(tsv.lines().count(), 1 + m.prefix_series.len());
        let mut other = m.clone();
        other.config.curriculum.setting = Setting::Dst;
        assert!(export_plots(&[m, other]).is_err());
    }
}
