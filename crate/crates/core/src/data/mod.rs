//! Dialogue data machinery: the api-call grammar and parser, whitespace
//! tokenizer, construction of input/output pairs for the four settings,
//! the line-delimited dataset format, and a synthetic domain generator.

mod api;
mod examples;
mod io;
mod synth;
mod tokenizer;

pub use api::{ApiCall, Slot};
pub use examples::{
    build_examples, Dialogue, DialogueTurn, Example, Setting, Speaker,
};
pub use io::{load_dataset, save_dialogues, DomainData};
pub(crate) use io::split_domain;
pub use synth::{benchmark_domains, generate_domain, make_benchmark, BenchmarkSpec, DomainSpec};
pub use tokenizer::{Tokenizer, specials};
