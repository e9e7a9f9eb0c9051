//! Seeded synthetic dialogue-domain generator, the desk-scale stand-in
//! for real annotated corpora.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::api::ApiCall;
use crate::data::examples::{Dialogue, DialogueTurn, Speaker};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainSpec {
    pub corpus: String,
    pub name: String,
    pub intents: Vec<String>,
    /// slot name -> pool of values
    pub slots: BTreeMap<String, Vec<String>>,
    /// Templates may reference `{intent}` and any `{slot}` in the schema.
    pub user_templates: Vec<String>,
    pub system_templates: Vec<String>,
}

fn template_placeholders(t: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = t;
    while let Some(start) = rest.find('{') {
        let Some(end) = rest[start..].find('}') else { break };
        out.push(&rest[start + 1..start + end]);
        rest = &rest[start + end + 1..];
    }
    out
}

fn validate(spec: &DomainSpec) -> Result<()> {
    if spec.intents.is_empty() {
        return Err(Error::DomainSpec(format!(
            "domain `{}` has no intents",
            spec.name
        )));
    }
    for t in spec.user_templates.iter().chain(&spec.system_templates) {
        for ph in template_placeholders(t) {
            if ph != "intent" && !spec.slots.contains_key(ph) {
                return Err(Error::DomainSpec(format!(
                    "template `{t}` references unknown slot `{ph}`"
                )));
            }
        }
    }
    Ok(())
}

fn fill(template: &str, intent: &str, values: &BTreeMap<String, String>) -> String {
    let mut out = template.replace("{intent}", intent);
    for (k, v) in values {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

/// Generates fully annotated single-domain dialogues. Same spec and seed
/// produce identical corpora.
pub fn generate_domain(
    spec: &DomainSpec,
    n_dialogues: usize,
    seed: u64,
) -> Result<Vec<Dialogue>> {
    validate(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_dialogues);
    for _ in 0..n_dialogues {
        let intent = spec.intents.choose(&mut rng).unwrap().clone();
        let mut values = BTreeMap::new();
        for (slot, pool) in &spec.slots {
            values.insert(slot.clone(), pool.choose(&mut rng).unwrap().clone());
        }
        let user_t = spec.user_templates.choose(&mut rng).unwrap();
        let sys_t = spec.system_templates.choose(&mut rng).unwrap();

        // the user mentions exactly the slots their template contains
        let mentioned: Vec<(String, String)> = template_placeholders(user_t)
            .into_iter()
            .filter(|p| *p != "intent")
            .map(|p| (p.to_string(), values[p].clone()))
            .collect();
        let api_call = ApiCall::new(intent.clone(), mentioned.clone());

        // the system confirms a subset of those slots
        let keep = if mentioned.is_empty() {
            0
        } else {
            rng.gen_range(1..=mentioned.len())
        };
        let api_out = ApiCall::new(intent.clone(), mentioned[..keep].to_vec());

        let turns = vec![
            DialogueTurn {
                speaker: Speaker::User,
                utterance: fill(user_t, &intent, &values),
                api_call: Some(api_call),
                api_out: None,
            },
            DialogueTurn {
                speaker: Speaker::System,
                utterance: fill(sys_t, &intent, &values),
                api_call: None,
                api_out: Some(api_out),
            },
        ];
        out.push(Dialogue {
            corpus: spec.corpus.clone(),
            domain: spec.name.clone(),
            split: None,
            turns,
        });
    }
    Ok(out)
}

/// Parameters for the builtin multi-domain benchmark.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub n_domains: usize,
    /// Per-domain dialogue counts; cycled if shorter than n_domains, so
    /// unbalanced task sizes are easy to express.
    pub dialogues_per_domain: Vec<usize>,
    /// When true, every domain gets its own intent/slot/value vocabulary.
    pub disjoint: bool,
    pub seed: u64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            n_domains: 8,
            dialogues_per_domain: vec![200, 100, 400, 150, 2000, 300, 120, 800],
            disjoint: true,
            seed: 13,
        }
    }
}

const DOMAIN_NAMES: [&str; 12] = [
    "taxi", "hotel", "flight", "movie", "music", "pizza", "train", "weather",
    "bank", "doctor", "sport", "coffee",
];

const VALUE_WORDS: [&str; 14] = [
    "north", "south", "east", "west", "red", "blue", "green", "amber",
    "early", "late", "small", "large", "double", "single",
];

/// Builds the domain specs for a synthetic curriculum. With `disjoint`
/// set, value pools and intent names never overlap across domains, which
/// makes tasks well separated for the selector; without it, all domains
/// share the same surface vocabulary.
pub fn benchmark_domains(spec: &BenchmarkSpec) -> Vec<DomainSpec> {
    (0..spec.n_domains)
        .map(|i| {
            let base = DOMAIN_NAMES[i % DOMAIN_NAMES.len()];
            let name = if i < DOMAIN_NAMES.len() {
                base.to_string()
            } else {
                format!("{base}{}", i / DOMAIN_NAMES.len())
            };
            let pfx = |w: &str| {
                if spec.disjoint {
                    format!("{name}_{w}")
                } else {
                    w.to_string()
                }
            };
            let mut slots = BTreeMap::new();
            let n_vals = 4;
            slots.insert(
                "place".to_string(),
                (0..n_vals)
                    .map(|k| pfx(VALUE_WORDS[(i + k) % VALUE_WORDS.len()]))
                    .collect(),
            );
            slots.insert(
                "option".to_string(),
                (0..n_vals)
                    .map(|k| pfx(VALUE_WORDS[(i + k + 7) % VALUE_WORDS.len()]))
                    .collect(),
            );
            DomainSpec {
                corpus: "synth".to_string(),
                name: name.clone(),
                slots,
                intents: vec![pfx("find"), pfx("book"), pfx("cancel")],
                user_templates: vec![
                    "i want to {intent} with {place} and {option} please".to_string(),
                    "please {intent} at {place} option {option}".to_string(),
                    "can you {intent} near {place} choosing {option}".to_string(),
                ],
                system_templates: vec![
                    "sure {intent} at {place} with {option} is confirmed".to_string(),
                    "ok i did {intent} for {place} using {option}".to_string(),
                ],
            }
        })
        .collect()
}

/// Generates the whole benchmark: one dialogue list per domain.
pub fn make_benchmark(spec: &BenchmarkSpec) -> Result<Vec<(DomainSpec, Vec<Dialogue>)>> {
    let domains = benchmark_domains(spec);
    let mut out = Vec::with_capacity(domains.len());
    for (i, d) in domains.into_iter().enumerate() {
        let n = spec.dialogues_per_domain[i % spec.dialogues_per_domain.len()];
        let dialogues = generate_domain(&d, n, spec.seed.wrapping_add(i as u64))?;
        out.push((d, dialogues));
    }
    Ok(out)
}
