//! Line-delimited dataset format: one JSON dialogue per line with fields
//! {corpus, domain, split?, turns:[{speaker, utterance, api_call?,
//! api_out?}]}. Dialogues without an explicit split are assigned
//! deterministically 80/10/10 by position within their domain.
//!
//! Real corpora would be converted into this format by emitting one such
//! record per single-domain dialogue (corpus = dataset name, domain = the
//! dialogue's single domain, api_call from the turn-level intent and
//! state annotation, api_out from the system speech-act). The conversion
//! itself is out of scope here.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::data::examples::Dialogue;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct DomainData {
    pub label: String,
    pub train: Vec<Dialogue>,
    pub valid: Vec<Dialogue>,
    pub test: Vec<Dialogue>,
}

pub fn save_dialogues(path: &Path, dialogues: &[Dialogue]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for d in dialogues {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Loads and groups the unified format into per-domain train/valid/test
/// splits. Schema violations report the offending line number.
pub fn load_dataset(path: &Path) -> Result<Vec<DomainData>> {
    let reader = BufReader::new(File::open(path)?);
    let mut by_domain: BTreeMap<String, Vec<Dialogue>> = BTreeMap::new();
    let mut any = false;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        any = true;
        let d: Dialogue = serde_json::from_str(&line).map_err(|e| Error::DatasetLoad {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if d.turns.is_empty() {
            return Err(Error::DatasetLoad {
                line: i + 1,
                msg: "dialogue has no turns".into(),
            });
        }
        by_domain.entry(d.task_label()).or_default().push(d);
    }
    if !any {
        return Err(Error::EmptyData(path.display().to_string()));
    }
    Ok(by_domain
        .into_iter()
        .map(|(label, dialogues)| split_domain(label, dialogues))
        .collect())
}

pub(crate) fn split_domain(label: String, dialogues: Vec<Dialogue>) -> DomainData {
    let mut out = DomainData {
        label,
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
    };
    let n = dialogues.len();
    for (i, d) in dialogues.into_iter().enumerate() {
        let bucket = match d.split.as_deref() {
            Some("train") => &mut out.train,
            Some("valid") => &mut out.valid,
            Some("test") => &mut out.test,
            // deterministic 80/10/10 by position
            _ => {
                if i * 10 < n * 8 {
                    &mut out.train
                } else if i * 10 < n * 9 {
                    &mut out.valid
                } else {
                    &mut out.test
                }
            }
        };
        bucket.push(d);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate_domain, benchmark_domains, BenchmarkSpec};

    #[test]
    fn roundtrip_written_then_loaded() {
        let spec = benchmark_domains(&BenchmarkSpec {
            n_domains: 2,
            dialogues_per_domain: vec![20],
            disjoint: true,
            seed: 3,
        });
        let mut all = Vec::new();
        for (i, s) in spec.iter().enumerate() {
            all.extend(generate_domain(s, 20, i as u64).unwrap());
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        save_dialogues(&path, &all).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        let total: usize = loaded
            .iter()
            .map(|d| d.train.len() + d.valid.len() + d.test.len())
            .sum();
        assert_eq!(total, all.len());
        assert_eq!(loaded[0].train.len(), 16);
        assert_eq!(loaded[0].valid.len(), 2);
        assert_eq!(loaded[0].test.len(), 2);
    }

    #[test]
    fn empty_file_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        File::create(&path).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::EmptyData(_))));
    }

    #[test]
    fn malformed_line_cites_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let good = r#"{"corpus":"c","domain":"d","turns":[{"speaker":"USER","utterance":"hi"}]}"#;
        let mut f = File::create(&path).unwrap();
        for _ in 0..6 {
            writeln!(f, "{good}").unwrap();
        }
        writeln!(f, "{{not json").unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("line 7"), "{err}");
    }
}
