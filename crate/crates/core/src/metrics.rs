//! Evaluation: intent accuracy, joint goal accuracy, slot error rate,
//! corpus BLEU, selection accuracy, and the T×T metric matrix whose
//! final-row mean is the headline number.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::{ApiCall, Slot};
use crate::error::{Error, Result};

fn normalize(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Exact intent match after trim + case-fold.
pub fn intent_accuracy(pairs: &[(String, String)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyData("intent predictions".into()));
    }
    let correct = pairs
        .iter()
        .filter(|(gold, pred)| normalize(gold) == normalize(pred))
        .count();
    Ok(correct as f64 / pairs.len() as f64)
}

/// Per turn: 1 iff the generated text parses and its (intent, slot set)
/// equals gold exactly. Unparseable output scores 0, never errors.
pub fn joint_goal_accuracy(pairs: &[(ApiCall, String)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyData("dst predictions".into()));
    }
    let correct = pairs
        .iter()
        .filter(|(gold, generated)| match ApiCall::parse(generated) {
            // slots are kept sorted with unique names, so Vec equality
            // is set equality
            Ok(pred) => pred == *gold,
            Err(_) => false,
        })
        .count();
    Ok(correct as f64 / pairs.len() as f64)
}

const BINARY_VALUES: [&str; 4] = ["yes", "no", "true", "false"];

/// Fraction of gold slot values (binary-valued slots excluded) whose
/// surface string does not appear in the generated response. Turns with
/// no counted slots are skipped; if every turn is skipped the metric is
/// undefined.
pub fn slot_error_rate(items: &[(Vec<Slot>, String)]) -> Result<f64> {
    let mut counted = 0usize;
    let mut missing = 0usize;
    for (gold_slots, response) in items {
        let resp = normalize(response);
        for slot in gold_slots {
            let value = normalize(&slot.value);
            if BINARY_VALUES.contains(&value.as_str()) {
                continue;
            }
            counted += 1;
            if !resp.contains(&value) {
                missing += 1;
            }
        }
    }
    if counted == 0 {
        return Err(Error::MetricUndefined(
            "no non-binary gold slots to count".into(),
        ));
    }
    Ok(missing as f64 / counted as f64)
}

fn ngram_counts(tokens: &[&str], n: usize) -> HashMap<Vec<String>, usize> {
    let mut map = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *map.entry(w.iter().map(|s| s.to_string()).collect())
                .or_insert(0) += 1;
        }
    }
    map
}

/// Corpus-level BLEU-4 with brevity penalty, whitespace tokenization,
/// and add-one smoothing when an n-gram order has zero matches.
/// Returns a value in [0, 100].
pub fn bleu(pairs: &[(String, String)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyData("bleu pairs".into()));
    }
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    for (reference, hypothesis) in pairs {
        let r: Vec<&str> = reference.split_whitespace().collect();
        let h: Vec<&str> = hypothesis.split_whitespace().collect();
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=4 {
            let rc = ngram_counts(&r, n);
            let hc = ngram_counts(&h, n);
            for (gram, count) in &hc {
                totals[n - 1] += count;
                if let Some(&rcount) = rc.get(gram) {
                    matches[n - 1] += count.min(&rcount);
                }
            }
        }
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let mut log_prec = 0.0;
    for n in 0..4 {
        let (num, den) = if matches[n] == 0 {
            (matches[n] + 1, totals[n] + 1)
        } else {
            (matches[n], totals[n])
        };
        if den == 0 {
            return Ok(0.0);
        }
        log_prec += (num as f64 / den as f64).ln() / 4.0;
    }
    let bp = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(100.0 * bp * log_prec.exp())
}

/// Fraction of inputs whose selected task equals the gold task id.
pub fn selection_accuracy(selected: &[usize], gold: &[usize]) -> Result<f64> {
    if selected.len() != gold.len() {
        return Err(Error::ShapeMismatch {
            op: "selection_accuracy",
            left: vec![selected.len()],
            right: vec![gold.len()],
        });
    }
    if selected.is_empty() {
        return Err(Error::EmptyData("selections".into()));
    }
    let correct = selected.iter().zip(gold).filter(|(s, g)| s == g).count();
    Ok(correct as f64 / selected.len() as f64)
}

/// R[i][j]: test metric on task j after training task i. Row i is pushed
/// when task i finishes; the headline number averages the last row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricMatrix {
    pub metric: String,
    pub task_labels: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl MetricMatrix {
    pub fn new(metric: impl Into<String>, task_labels: Vec<String>) -> Self {
        MetricMatrix {
            metric: metric.into(),
            task_labels,
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.task_labels.len() {
            return Err(Error::IncompleteRow(self.rows.len()));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn n_tasks(&self) -> usize {
        self.task_labels.len()
    }

    /// Mean of the final row.
    pub fn avg_metric(&self) -> Result<f64> {
        let last = self
            .rows
            .last()
            .ok_or(Error::IncompleteRow(0))?;
        if last.len() != self.task_labels.len() {
            return Err(Error::IncompleteRow(self.rows.len() - 1));
        }
        Ok(last.iter().sum::<f64>() / last.len() as f64)
    }

    /// Mean of each row in order: the learning-dynamics series plotted
    /// after each task.
    pub fn prefix_series(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().sum::<f64>() / r.len() as f64)
            .collect()
    }
}
