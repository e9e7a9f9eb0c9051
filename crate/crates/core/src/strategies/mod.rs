//! Continual-learning strategies over a task curriculum: sequential
//! fine-tuning (VANILLA), quadratic regularization (L2/EWC), gradient
//! projection (AGEM), rehearsal (REPLAY), pseudo-rehearsal (LAMOL), the
//! multitask upper bound (MULTI), and per-task adapters with test-time
//! selection (ADAPTER).

pub mod agem;
pub mod eval;
pub mod lamol;
pub mod memory;
pub mod regularize;
pub mod train;

pub use agem::agem_project;
pub use eval::{evaluate_task, EvalOptions, ModelChoice, TaskEval};
pub use lamol::{gen_pair, lamol_generate, pseudo_count, PseudoSamples};
pub use memory::EpisodicMemory;
pub use regularize::{estimate_fisher, fisher_diagonal, RegularizerState};
pub use train::{train_task, StepRule, TrainConfig, TrainLog};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapters::AdapterBank;
use crate::data::{DomainData, Example, Setting, Tokenizer};
use crate::error::{Error, Result};
use crate::metrics::{selection_accuracy, MetricMatrix};
use crate::model::{self, EncodedPair, LmConfig, TrainTarget};
use crate::params::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    #[serde(rename = "VANILLA")]
    Vanilla,
    #[serde(rename = "L2")]
    L2,
    #[serde(rename = "EWC")]
    Ewc,
    #[serde(rename = "AGEM")]
    Agem,
    #[serde(rename = "REPLAY")]
    Replay,
    #[serde(rename = "LAMOL")]
    Lamol,
    #[serde(rename = "MULTI")]
    Multi,
    #[serde(rename = "ADAPTER")]
    Adapter,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 8] = [
        StrategyKind::Vanilla,
        StrategyKind::L2,
        StrategyKind::Ewc,
        StrategyKind::Agem,
        StrategyKind::Replay,
        StrategyKind::Lamol,
        StrategyKind::Multi,
        StrategyKind::Adapter,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            StrategyKind::Vanilla => "VANILLA",
            StrategyKind::L2 => "L2",
            StrategyKind::Ewc => "EWC",
            StrategyKind::Agem => "AGEM",
            StrategyKind::Replay => "REPLAY",
            StrategyKind::Lamol => "LAMOL",
            StrategyKind::Multi => "MULTI",
            StrategyKind::Adapter => "ADAPTER",
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "VANILLA" => Ok(StrategyKind::Vanilla),
            "L2" => Ok(StrategyKind::L2),
            "EWC" => Ok(StrategyKind::Ewc),
            "AGEM" => Ok(StrategyKind::Agem),
            "REPLAY" => Ok(StrategyKind::Replay),
            "LAMOL" => Ok(StrategyKind::Lamol),
            "MULTI" => Ok(StrategyKind::Multi),
            "ADAPTER" => Ok(StrategyKind::Adapter),
            other => Err(Error::Config(format!("unknown strategy `{other}`"))),
        }
    }
}

/// One task of the curriculum: its label and example splits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskData {
    pub label: String,
    pub train: Vec<Example>,
    pub valid: Vec<Example>,
    pub test: Vec<Example>,
}

/// Projects loaded per-domain dialogues into per-task example splits for
/// one setting.
pub fn tasks_from_domain_data(domains: &[DomainData], setting: Setting) -> Result<Vec<TaskData>> {
    let project = |dialogues: &[crate::data::Dialogue]| -> Result<Vec<Example>> {
        let mut out = Vec::new();
        for d in dialogues {
            out.extend(crate::data::build_examples(d, setting)?);
        }
        Ok(out)
    };
    domains
        .iter()
        .map(|d| {
            Ok(TaskData {
                label: d.label.clone(),
                train: project(&d.train)?,
                valid: project(&d.valid)?,
                test: project(&d.test)?,
            })
        })
        .collect()
}

/// Vocabulary over the whole curriculum (all tasks, all splits), frozen
/// before the first task so the embedding table never resizes.
pub fn build_tokenizer(tasks: &[TaskData]) -> Tokenizer {
    let mut texts = Vec::new();
    for t in tasks {
        for ex in t.train.iter().chain(&t.valid).chain(&t.test) {
            texts.push(ex.input_text());
            texts.push(ex.y.clone());
        }
    }
    Tokenizer::build(texts.iter().map(|s| s.as_str()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumConfig {
    pub strategy: StrategyKind,
    pub setting: Setting,
    /// Model shape; vocab_size is overwritten from the built tokenizer.
    pub lm: LmConfig,
    pub train: TrainConfig,
    /// Regularization strength (L2 / EWC).
    pub lambda: f64,
    /// Keep one penalty per past task instead of only the latest.
    pub reg_accumulate: bool,
    /// Examples sampled for the diagonal Fisher estimate.
    pub fisher_samples: usize,
    /// Episodic-memory capacity per task; None = unbounded.
    pub memory_capacity: Option<usize>,
    /// Reference-batch size for gradient projection; 0 = training batch.
    pub agem_batch: usize,
    /// Adapter bottleneck dimension.
    pub bottleneck: usize,
    /// Pseudo-sample ratio: generate ⌈γ·|D_t|⌉ samples per new task.
    pub lamol_gamma: f64,
    pub lamol_top_k: usize,
    pub include_specials_in_ppl: bool,
    pub init_seed: u64,
    /// Cap on training examples per task, applied as a seeded uniform
    /// subsample before the curriculum starts (0 = all). The capped set
    /// is the task dataset everywhere downstream: training, episodic
    /// memory, Fisher estimation.
    pub max_train_examples: usize,
    /// Cap on evaluated test examples per task (0 = all).
    pub max_eval_examples: usize,
    pub max_new_tokens: usize,
}

impl CurriculumConfig {
    /// Working defaults for the builtin benchmark. Adapter training gets
    /// a longer, gentler schedule: it optimizes a doubled objective
    /// (conditional + full-sequence) through a frozen base and converges
    /// more slowly than full fine-tuning.
    pub fn new(strategy: StrategyKind, setting: Setting) -> Self {
        let train = if strategy == StrategyKind::Adapter {
            TrainConfig {
                lr: 3e-3,
                epochs: 150,
                ..TrainConfig::default()
            }
        } else {
            TrainConfig {
                lr: 5e-3,
                epochs: 100,
                ..TrainConfig::default()
            }
        };
        CurriculumConfig {
            strategy,
            setting,
            lm: LmConfig {
                vocab_size: 0,
                d_model: 32,
                n_layers: 2,
                n_heads: 2,
                d_ff: 64,
                max_seq_len: 64,
                dropout: 0.0,
            },
            train,
            lambda: 1.0,
            reg_accumulate: false,
            fisher_samples: 1000,
            memory_capacity: Some(50),
            agem_batch: 0,
            bottleneck: 50,
            lamol_gamma: 0.2,
            lamol_top_k: 20,
            include_specials_in_ppl: true,
            init_seed: 0,
            max_train_examples: 64,
            max_eval_examples: 16,
            max_new_tokens: 24,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bottleneck == 0 {
            return Err(Error::Config("bottleneck must be >= 1".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        if !(self.lamol_gamma >= 0.0) {
            return Err(Error::Config("lamol_gamma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Extra footprint of the chosen strategy, mirroring the run report's
/// accounting columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceReport {
    /// Parameters added on top of the base model (snapshots, Fisher
    /// vectors, adapter weights).
    pub added_params: usize,
    /// Examples held in episodic memory.
    pub memory_examples: usize,
}

#[derive(Debug)]
pub struct CurriculumOutcome {
    pub lm: LmConfig,
    pub tokenizer: Tokenizer,
    pub base: ParamSet,
    pub bank: AdapterBank,
    pub matrix: MetricMatrix,
    pub logs: Vec<TrainLog>,
    /// Final-row per-example detail (one entry per task).
    pub final_evals: Vec<TaskEval>,
    /// Adapter-selection accuracy over the final row (selection mode).
    pub selection_accuracy: Option<f64>,
    pub resources: ResourceReport,
    pub memory: Option<EpisodicMemory>,
    /// Base-parameter hash recorded after each task.
    pub base_hash_after_task: Vec<String>,
    /// Per-adapter parameter hashes recorded after each task.
    pub adapter_hashes_after_task: Vec<Vec<String>>,
    /// LAMOL pseudo-sample bookkeeping: (generated, parsed) per task > 0.
    pub lamol_yield: Vec<(usize, usize)>,
    /// Wall-clock seconds per training event (one per task; one total
    /// for MULTI).
    pub task_secs: Vec<f64>,
}

fn encode_all(tok: &Tokenizer, lm: &LmConfig, exs: &[Example]) -> Vec<EncodedPair> {
    exs.iter()
        .filter_map(|e| model::encode_example(tok, e, lm.max_seq_len))
        .collect()
}

fn eval_row(
    lm: &LmConfig,
    base: &ParamSet,
    choice: ModelChoice,
    tok: &Tokenizer,
    tasks: &[TaskData],
    setting: Setting,
    opts: &EvalOptions,
) -> Result<(Vec<f64>, Vec<TaskEval>)> {
    let evals: Vec<TaskEval> = tasks
        .par_iter()
        .map(|t| evaluate_task(lm, base, choice, tok, &t.test, setting, opts))
        .collect::<Result<Vec<_>>>()?;
    let row = evals.iter().map(|e| e.score).collect();
    Ok((row, evals))
}

fn diverged(e: Error, task_index: usize, task_label: &str) -> Error {
    match e {
        Error::NonFiniteLoss | Error::PoisonedGradient { .. } => Error::Diverged {
            task_index,
            task_label: task_label.to_string(),
        },
        other => other,
    }
}

/// Runs the full curriculum for one strategy: train on each task in
/// order, then after every task evaluate the test sets of ALL tasks,
/// filling one row of the metric matrix.
pub fn train_curriculum(cfg: &CurriculumConfig, tasks: &[TaskData]) -> Result<CurriculumOutcome> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(Error::EmptyData("curriculum".into()));
    }
    for (i, t) in tasks.iter().enumerate() {
        if tasks[..i].iter().any(|u| u.label == t.label) {
            return Err(Error::DuplicateTask(t.label.clone()));
        }
    }

    let tokenizer = build_tokenizer(tasks);
    let mut lm = cfg.lm.clone();
    lm.vocab_size = tokenizer.vocab_size();
    lm.validate()?;

    // Apply the per-task training cap once, up front; every later use of
    // a task's train split (batches, memory, Fisher) sees the capped set.
    let tasks_capped: Vec<TaskData>;
    let tasks: &[TaskData] = if cfg.max_train_examples > 0 {
        tasks_capped = tasks
            .iter()
            .enumerate()
            .map(|(i, t)| {
                use rand::SeedableRng;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(
                    cfg.init_seed.wrapping_add(0x5A).wrapping_add(i as u64),
                );
                let mut idx: Vec<usize> = (0..t.train.len()).collect();
                use rand::seq::SliceRandom;
                idx.shuffle(&mut rng);
                idx.truncate(cfg.max_train_examples);
                idx.sort_unstable();
                TaskData {
                    label: t.label.clone(),
                    train: idx.into_iter().map(|j| t.train[j].clone()).collect(),
                    valid: t.valid.clone(),
                    test: t.test.clone(),
                }
            })
            .collect();
        &tasks_capped
    } else {
        tasks
    };

    let mut base = model::init_params(&lm, cfg.init_seed);
    let labels: Vec<String> = tasks.iter().map(|t| t.label.clone()).collect();
    let mut matrix = MetricMatrix::new(cfg.setting.as_str(), labels);
    let opts = EvalOptions {
        max_examples: cfg.max_eval_examples,
        max_new_tokens: cfg.max_new_tokens,
        include_specials_in_ppl: cfg.include_specials_in_ppl,
    };

    let train_pairs: Vec<Vec<EncodedPair>> = tasks
        .iter()
        .map(|t| encode_all(&tokenizer, &lm, &t.train))
        .collect();
    let valid_pairs: Vec<Vec<EncodedPair>> = tasks
        .iter()
        .map(|t| encode_all(&tokenizer, &lm, &t.valid))
        .collect();

    let mut bank = AdapterBank::new();
    let mut logs = Vec::new();
    let mut base_hash_after_task = Vec::new();
    let mut adapter_hashes_after_task = Vec::new();
    let mut lamol_yield = Vec::new();
    let mut memory = match cfg.strategy {
        StrategyKind::Replay | StrategyKind::Agem => Some(EpisodicMemory::new(
            cfg.memory_capacity,
            cfg.train.seed.wrapping_add(0x11),
        )),
        _ => None,
    };
    let mut reg_states: Vec<RegularizerState> = Vec::new();
    let mut final_evals: Vec<TaskEval> = Vec::new();
    let mut task_secs: Vec<f64> = Vec::new();

    match cfg.strategy {
        StrategyKind::Multi => {
            // single training event over the pooled data; the matrix is T
            // identical rows so downstream consumers see the same shape
            let pooled_train: Vec<EncodedPair> =
                train_pairs.iter().flatten().cloned().collect();
            let pooled_valid: Vec<EncodedPair> =
                valid_pairs.iter().flatten().cloned().collect();
            let started = std::time::Instant::now();
            let log = train_task(
                &lm,
                &mut base,
                None,
                TrainTarget::Base,
                "MULTI",
                &pooled_train,
                &pooled_valid,
                &cfg.train,
                StepRule::Plain,
            )
            .map_err(|e| diverged(e, 0, "MULTI"))?;
            task_secs.push(started.elapsed().as_secs_f64());
            logs.push(log);
            let (row, evals) = eval_row(
                &lm,
                &base,
                ModelChoice::Single(None),
                &tokenizer,
                tasks,
                cfg.setting,
                &opts,
            )?;
            for _ in 0..tasks.len() {
                matrix.push_row(row.clone())?;
                base_hash_after_task.push(base.content_hash());
                adapter_hashes_after_task.push(Vec::new());
            }
            final_evals = evals;
        }
        StrategyKind::Adapter => {
            // Adapters train on the full sequence (input positions
            // unmasked): the frozen base is not a pretrained LM, so the
            // input-text statistics the perplexity selector relies on
            // must be learned by the adapter itself.
            let mix = |ps: &[EncodedPair]| -> Vec<EncodedPair> {
                let mut out: Vec<EncodedPair> = ps.to_vec();
                out.extend(ps.iter().map(|p| EncodedPair {
                    tokens: p.tokens.clone(),
                    input_len: 1,
                }));
                out
            };
            for (t, task) in tasks.iter().enumerate() {
                let seed = cfg.init_seed.wrapping_add(1000 + t as u64);
                bank.spawn_adapter(&task.label, &lm, cfg.bottleneck, seed)?;
                let adapter = bank.get_mut(&task.label)?;
                let started = std::time::Instant::now();
                let log = train_task(
                    &lm,
                    &mut base,
                    Some(adapter),
                    TrainTarget::Adapter,
                    &task.label,
                    &mix(&train_pairs[t]),
                    &mix(&valid_pairs[t]),
                    &cfg.train,
                    StepRule::Plain,
                )
                .map_err(|e| diverged(e, t, &task.label))?;
                task_secs.push(started.elapsed().as_secs_f64());
                logs.push(log);
                let (row, evals) = eval_row(
                    &lm,
                    &base,
                    ModelChoice::Select(&bank),
                    &tokenizer,
                    tasks,
                    cfg.setting,
                    &opts,
                )?;
                matrix.push_row(row)?;
                base_hash_after_task.push(base.content_hash());
                adapter_hashes_after_task
                    .push(bank.adapters.iter().map(|a| a.params.content_hash()).collect());
                final_evals = evals;
            }
        }
        _ => {
            for (t, task) in tasks.iter().enumerate() {
                // assemble this task's training pool per strategy
                let pool: Vec<EncodedPair> = match cfg.strategy {
                    StrategyKind::Replay => {
                        let mem = memory.as_ref().unwrap();
                        let combined = mem.replay_dataset(
                            &task.train,
                            cfg.train.seed.wrapping_add(t as u64),
                        );
                        encode_all(&tokenizer, &lm, &combined)
                    }
                    StrategyKind::Lamol => {
                        let mut pool = train_pairs[t].clone();
                        let real_gen: Vec<EncodedPair> = train_pairs[t]
                            .iter()
                            .filter_map(|p| gen_pair(p, lm.max_seq_len))
                            .collect();
                        pool.extend(real_gen);
                        if t > 0 {
                            let count = pseudo_count(cfg.lamol_gamma, train_pairs[t].len());
                            let pseudo = lamol_generate(
                                &lm,
                                &base,
                                &tokenizer,
                                count,
                                lm.max_seq_len.saturating_sub(2),
                                cfg.lamol_top_k,
                                cfg.train.seed.wrapping_add(0x1A * t as u64),
                            )?;
                            lamol_yield.push((count, pseudo.pairs.len()));
                            pool.extend(pseudo.pairs);
                            pool.extend(pseudo.gen_pairs);
                        }
                        pool
                    }
                    _ => train_pairs[t].clone(),
                };

                let memory_pairs: Vec<EncodedPair> = match cfg.strategy {
                    StrategyKind::Agem => {
                        let mem = memory.as_ref().unwrap();
                        let stored: Vec<Example> = mem.examples().cloned().collect();
                        encode_all(&tokenizer, &lm, &stored)
                    }
                    _ => Vec::new(),
                };
                let rule = match cfg.strategy {
                    StrategyKind::L2 | StrategyKind::Ewc => StepRule::Regularized(&reg_states),
                    StrategyKind::Agem => StepRule::Agem {
                        memory_pairs: &memory_pairs,
                        batch_size: if cfg.agem_batch == 0 {
                            cfg.train.batch_size
                        } else {
                            cfg.agem_batch
                        },
                    },
                    _ => StepRule::Plain,
                };

                let started = std::time::Instant::now();
                let log = train_task(
                    &lm,
                    &mut base,
                    None,
                    TrainTarget::Base,
                    &task.label,
                    &pool,
                    &valid_pairs[t],
                    &cfg.train,
                    rule,
                )
                .map_err(|e| diverged(e, t, &task.label))?;
                task_secs.push(started.elapsed().as_secs_f64());
                logs.push(log);

                // post-task bookkeeping for the next task
                match cfg.strategy {
                    StrategyKind::L2 => {
                        let state = RegularizerState::l2(base.flatten(), cfg.lambda);
                        if !cfg.reg_accumulate {
                            reg_states.clear();
                        }
                        reg_states.push(state);
                    }
                    StrategyKind::Ewc => {
                        let fisher = estimate_fisher(
                            &lm,
                            &mut base,
                            &train_pairs[t],
                            cfg.fisher_samples,
                            cfg.train.seed.wrapping_add(0xF1 * t as u64),
                        )?;
                        let state = RegularizerState::ewc(base.flatten(), fisher, cfg.lambda)?;
                        if !cfg.reg_accumulate {
                            reg_states.clear();
                        }
                        reg_states.push(state);
                    }
                    StrategyKind::Replay | StrategyKind::Agem => {
                        memory.as_mut().unwrap().insert(&task.label, &task.train)?;
                    }
                    _ => {}
                }

                let (row, evals) = eval_row(
                    &lm,
                    &base,
                    ModelChoice::Single(None),
                    &tokenizer,
                    tasks,
                    cfg.setting,
                    &opts,
                )?;
                matrix.push_row(row)?;
                base_hash_after_task.push(base.content_hash());
                adapter_hashes_after_task.push(Vec::new());
                final_evals = evals;
            }
        }
    }

    let selection_accuracy = if cfg.strategy == StrategyKind::Adapter {
        let mut pred = Vec::new();
        let mut gold = Vec::new();
        for (j, ev) in final_evals.iter().enumerate() {
            pred.extend(ev.selections.iter().copied());
            gold.extend(std::iter::repeat(j).take(ev.selections.len()));
        }
        Some(selection_accuracy(&pred, &gold)?)
    } else {
        None
    };

    let base_numel = base.numel();
    let resources = match cfg.strategy {
        StrategyKind::L2 => ResourceReport {
            added_params: base_numel * reg_states.len(),
            memory_examples: 0,
        },
        StrategyKind::Ewc => ResourceReport {
            added_params: 2 * base_numel * reg_states.len(),
            memory_examples: 0,
        },
        StrategyKind::Adapter => ResourceReport {
            added_params: bank.total_params(),
            memory_examples: 0,
        },
        StrategyKind::Replay | StrategyKind::Agem => ResourceReport {
            added_params: 0,
            memory_examples: memory.as_ref().unwrap().total_len(),
        },
        _ => ResourceReport {
            added_params: 0,
            memory_examples: 0,
        },
    };

    Ok(CurriculumOutcome {
        lm,
        tokenizer,
        base,
        bank,
        matrix,
        logs,
        final_evals,
        selection_accuracy,
        resources,
        memory,
        base_hash_after_task,
        adapter_hashes_after_task,
        lamol_yield,
        task_secs,
    })
}
