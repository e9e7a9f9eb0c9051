//! Test-set evaluation of one task under any strategy's model: greedy
//! decoding from the encoded input, setting-specific metrics, and
//! (for the adapter bank) perplexity-based task selection per example.

use crate::adapters::{AdapterBank, AdapterParams};
use crate::data::{specials, ApiCall, Example, Setting, Slot, Tokenizer};
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::{self, LmConfig};
use crate::params::ParamSet;

/// Which parameters answer at test time: a fixed model (optionally with
/// one adapter), or a bank whose adapter is chosen per example by
/// perplexity — the task-id-free regime.
#[derive(Clone, Copy)]
pub enum ModelChoice<'a> {
    Single(Option<&'a AdapterParams>),
    Select(&'a AdapterBank),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    /// Cap on evaluated examples per task (0 = no cap).
    pub max_examples: usize,
    pub max_new_tokens: usize,
    pub include_specials_in_ppl: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            max_examples: 0,
            max_new_tokens: 32,
            include_specials_in_ppl: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TaskEval {
    /// Headline number for the metric matrix, in percent
    /// (INTENT: accuracy, DST: JGA, NLG: BLEU, E2E: mean of JGA and BLEU).
    pub score: f64,
    pub intent: Option<f64>,
    pub jga: Option<f64>,
    pub bleu: Option<f64>,
    pub eer: Option<f64>,
    /// Adapter index chosen per example (selection mode only).
    pub selections: Vec<usize>,
    /// Examples dropped because they did not fit the context window.
    pub skipped: usize,
}

fn is_api_example(ex: &Example) -> bool {
    ex.x_segments.last().map(|s| s.as_str()) == Some("API:")
}

/// Decodes every test example and scores the task for its setting.
pub fn evaluate_task(
    cfg: &LmConfig,
    base: &ParamSet,
    choice: ModelChoice,
    tok: &Tokenizer,
    examples: &[Example],
    setting: Setting,
    opts: &EvalOptions,
) -> Result<TaskEval> {
    if examples.is_empty() {
        return Err(Error::EmptyData("test split".into()));
    }
    let take = if opts.max_examples == 0 {
        examples.len()
    } else {
        opts.max_examples.min(examples.len())
    };

    let mut intent_pairs: Vec<(String, String)> = Vec::new();
    let mut jga_pairs: Vec<(ApiCall, String)> = Vec::new();
    let mut bleu_pairs: Vec<(String, String)> = Vec::new();
    let mut eer_items: Vec<(Vec<Slot>, String)> = Vec::new();
    let mut selections = Vec::new();
    let mut skipped = 0usize;

    for ex in &examples[..take] {
        let Some(pair) = model::encode_example(tok, ex, cfg.max_seq_len) else {
            skipped += 1;
            continue;
        };
        let prefix = &pair.tokens[..pair.input_len];
        let adapter = match choice {
            ModelChoice::Single(a) => a,
            ModelChoice::Select(bank) => {
                let (i, _) =
                    bank.select_adapter(cfg, base, prefix, opts.include_specials_in_ppl)?;
                selections.push(i);
                Some(&bank.adapters[i])
            }
        };
        let budget = opts.max_new_tokens.min(cfg.max_seq_len - prefix.len());
        let dec = model::greedy_decode(cfg, base, adapter, prefix, budget, specials::EOS)?;
        let text = tok.decode(&dec.tokens);

        match setting {
            Setting::Intent => intent_pairs.push((ex.y.clone(), text)),
            Setting::Dst => {
                let gold = ex.gold_api.clone().ok_or_else(|| {
                    Error::DialogueFormat("state-tracking example without gold call".into())
                })?;
                jga_pairs.push((gold, text));
            }
            Setting::Nlg => {
                if let Some(api) = &ex.gold_api {
                    if !api.slots.is_empty() {
                        eer_items.push((api.slots.clone(), text.clone()));
                    }
                }
                bleu_pairs.push((ex.y.clone(), text));
            }
            Setting::E2e => {
                if is_api_example(ex) {
                    let gold = ex.gold_api.clone().ok_or_else(|| {
                        Error::DialogueFormat("api example without gold call".into())
                    })?;
                    jga_pairs.push((gold, text));
                } else {
                    if let Some(api) = &ex.gold_api {
                        if !api.slots.is_empty() {
                            eer_items.push((api.slots.clone(), text.clone()));
                        }
                    }
                    bleu_pairs.push((ex.y.clone(), text));
                }
            }
        }
    }
    if intent_pairs.is_empty() && jga_pairs.is_empty() && bleu_pairs.is_empty() {
        return Err(Error::EmptyData("all test examples skipped".into()));
    }

    let intent = if intent_pairs.is_empty() {
        None
    } else {
        Some(100.0 * metrics::intent_accuracy(&intent_pairs)?)
    };
    let jga = if jga_pairs.is_empty() {
        None
    } else {
        Some(100.0 * metrics::joint_goal_accuracy(&jga_pairs)?)
    };
    let bleu = if bleu_pairs.is_empty() {
        None
    } else {
        Some(metrics::bleu(&bleu_pairs)?)
    };
    let eer = if eer_items.is_empty() {
        None
    } else {
        Some(100.0 * metrics::slot_error_rate(&eer_items)?)
    };

    let score = match setting {
        Setting::Intent => intent.unwrap(),
        Setting::Dst => jga.unwrap(),
        Setting::Nlg => bleu.unwrap(),
        Setting::E2e => {
            let parts: Vec<f64> = [jga, bleu].into_iter().flatten().collect();
            parts.iter().sum::<f64>() / parts.len() as f64
        }
    };
    Ok(TaskEval {
        score,
        intent,
        jga,
        bleu,
        eer,
        selections,
        skipped,
    })
}
