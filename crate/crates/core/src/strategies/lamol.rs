//! Pseudo-rehearsal by generation: the model also learns to generate its
//! own training sequences from a generic `GEN` begin token, and before
//! each new task a batch of pseudo-samples is sampled and mixed into the
//! training pool.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{specials, Tokenizer};
use crate::error::Result;
use crate::model::{self, EncodedPair, LmConfig};
use crate::params::ParamSet;

/// Number of pseudo-samples to draw for a task of size `n`: ⌈γ·n⌉.
pub fn pseudo_count(gamma: f64, n: usize) -> usize {
    (gamma * n as f64).ceil() as usize
}

/// Generation-objective twin of a training pair: the same sequence
/// learned unconditionally from `<bos> GEN`. Returns None when the extra
/// token pushes the pair past `max_seq_len`.
pub fn gen_pair(pair: &EncodedPair, max_seq_len: usize) -> Option<EncodedPair> {
    if pair.tokens.len() + 1 > max_seq_len || pair.tokens.is_empty() {
        return None;
    }
    let mut tokens = vec![specials::BOS, specials::GEN];
    tokens.extend_from_slice(&pair.tokens[1..]);
    Some(EncodedPair {
        tokens,
        input_len: 2,
    })
}

/// Splits a generated token sequence into (input, output) lengths.
///
/// Two shapes are recognized: api-call sequences split right after the
/// first `API:` trigger, and speech-act sequences starting with `OUT:`
/// split after the first closing parenthesis. Returns the input length,
/// or None when the sequence fits neither shape or leaves an empty side.
pub fn split_generated(tokens: &[usize], tok: &Tokenizer) -> Option<usize> {
    if let Some(pos) = tokens.iter().position(|&t| t == specials::API) {
        let input_len = pos + 1;
        if input_len > 1 && input_len < tokens.len() {
            return Some(input_len);
        }
        return None;
    }
    if tokens.first() == Some(&specials::OUT) {
        let close = tok.id_of(")");
        if close == specials::UNK {
            return None;
        }
        if let Some(pos) = tokens.iter().position(|&t| t == close) {
            let input_len = pos + 1;
            if input_len < tokens.len() {
                return Some(input_len);
            }
        }
    }
    None
}

#[derive(Debug, Clone)]
pub struct PseudoSamples {
    /// Task-objective pairs recovered from parseable generations.
    pub pairs: Vec<EncodedPair>,
    /// Their generation-objective twins.
    pub gen_pairs: Vec<EncodedPair>,
    /// Generations that did not parse into an (input, output) pair.
    pub dropped: usize,
    /// True when fewer than 10% of requested samples parsed.
    pub degenerate: bool,
}

/// Samples `count` sequences from the `GEN` token by top-k sampling and
/// keeps the ones that parse into training pairs.
pub fn lamol_generate(
    cfg: &LmConfig,
    base: &ParamSet,
    tok: &Tokenizer,
    count: usize,
    max_new: usize,
    top_k: usize,
    seed: u64,
) -> Result<PseudoSamples> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = PseudoSamples {
        pairs: Vec::new(),
        gen_pairs: Vec::new(),
        dropped: 0,
        degenerate: false,
    };
    let prefix = [specials::BOS, specials::GEN];
    for _ in 0..count {
        let dec = model::sample_decode(
            cfg,
            base,
            None,
            &prefix,
            max_new,
            specials::EOS,
            top_k,
            &mut rng,
        )?;
        let Some(split) = split_generated(&dec.tokens, tok) else {
            out.dropped += 1;
            continue;
        };
        let mut tokens = vec![specials::BOS];
        tokens.extend_from_slice(&dec.tokens);
        tokens.push(specials::EOS);
        let pair = EncodedPair {
            tokens,
            input_len: 1 + split,
        };
        if let Some(gp) = gen_pair(&pair, cfg.max_seq_len) {
            out.gen_pairs.push(gp);
        }
        out.pairs.push(pair);
    }
    out.degenerate = count > 0 && out.pairs.len() * 10 < count;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{batch_loss_and_grads, init_params, TrainTarget};
    use crate::optim::Optimizer;

    #[test]
    fn pseudo_count_is_ceiling() {
        assert_eq!(pseudo_count(0.2, 100), 20);
        assert_eq!(pseudo_count(0.2, 101), 21);
        assert_eq!(pseudo_count(0.2, 1), 1);
        assert_eq!(pseudo_count(0.2, 0), 0);
    }

    #[test]
    fn gen_pair_prepends_gen_after_bos() {
        let pair = EncodedPair {
            tokens: vec![specials::BOS, 10, 6, 11, specials::EOS],
            input_len: 3,
        };
        let gp = gen_pair(&pair, 32).unwrap();
        assert_eq!(gp.tokens, vec![specials::BOS, specials::GEN, 10, 6, 11, specials::EOS]);
        assert_eq!(gp.input_len, 2);
        // over budget -> dropped
        assert!(gen_pair(&pair, 5).is_none());
    }

    #[test]
    fn split_recognizes_api_shape() {
        let tok = Tokenizer::build(["hello ( )"]);
        // USER: hello API: hello -> split after API:
        let seq = vec![specials::USER, tok.id_of("hello"), specials::API, tok.id_of("hello")];
        assert_eq!(split_generated(&seq, &tok), Some(3));
        // API: with nothing after it -> reject
        let empty_out = vec![specials::USER, tok.id_of("hello"), specials::API];
        assert_eq!(split_generated(&empty_out, &tok), None);
        // bare API: first -> reject (empty input)
        let empty_in = vec![specials::API, tok.id_of("hello")];
        assert_eq!(split_generated(&empty_in, &tok), None);
    }

    #[test]
    fn split_recognizes_out_shape() {
        let tok = Tokenizer::build(["book ( a = b ) done"]);
        let seq: Vec<usize> = [
            specials::OUT,
            tok.id_of("book"),
            tok.id_of("("),
            tok.id_of(")"),
            tok.id_of("done"),
        ]
        .to_vec();
        assert_eq!(split_generated(&seq, &tok), Some(4));
        // no recognizable shape -> reject
        let plain = vec![tok.id_of("book"), tok.id_of("done")];
        assert_eq!(split_generated(&plain, &tok), None);
    }

    #[test]
    fn count_zero_generates_nothing() {
        let tok = Tokenizer::build(["a"]);
        let cfg = LmConfig::tiny(tok.vocab_size(), 16);
        let ps = init_params(&cfg, 0);
        let out = lamol_generate(&cfg, &ps, &tok, 0, 8, 5, 0).unwrap();
        assert!(out.pairs.is_empty());
        assert!(!out.degenerate);
    }

    #[test]
    fn untrained_model_flags_degenerate_generator() {
        let tok = Tokenizer::build(["aaa bbb ccc"]);
        let mut cfg = LmConfig::tiny(tok.vocab_size(), 24);
        cfg.max_seq_len = 24;
        let mut ps = init_params(&cfg, 0);
        // zero logits: uniform babble almost never parses
        ps.get_mut("embed").data.iter_mut().for_each(|v| *v = 0.0);
        let out = lamol_generate(&cfg, &ps, &tok, 30, 4, tok.vocab_size(), 3).unwrap();
        assert_eq!(out.pairs.len() + out.dropped, 30);
    }

    #[test]
    fn overfit_generator_emits_mostly_parseable_samples() {
        // five short templated sequences; after overfitting the
        // generation objective, at least half of the samples must parse
        let texts: Vec<String> = (0..5)
            .map(|i| format!("USER: word{i} API: intent{i}"))
            .collect();
        let tok = Tokenizer::build(texts.iter().map(|s| s.as_str()));
        let cfg = LmConfig::tiny(tok.vocab_size(), 24);
        let mut ps = init_params(&cfg, 2);
        let pairs: Vec<EncodedPair> = texts
            .iter()
            .map(|t| {
                let mut tokens = vec![specials::BOS, specials::GEN];
                tokens.extend(tok.encode(t));
                tokens.push(specials::EOS);
                EncodedPair {
                    tokens,
                    input_len: 2,
                }
            })
            .collect();
        let refs: Vec<&EncodedPair> = pairs.iter().collect();
        let mut opt = Optimizer::adam(0.01);
        for _ in 0..400 {
            ps.zero_grad();
            batch_loss_and_grads(&cfg, &mut ps, None, &refs, TrainTarget::Base).unwrap();
            opt.step(&mut ps).unwrap();
        }
        let out = lamol_generate(&cfg, &ps, &tok, 20, 12, 3, 9).unwrap();
        assert!(
            out.pairs.len() * 2 >= 20,
            "only {}/20 parsed",
            out.pairs.len()
        );
        assert!(!out.degenerate);
    }
}
