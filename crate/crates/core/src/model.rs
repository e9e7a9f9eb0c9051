//! Decoder-only causal transformer: embedding + learned positions,
//! pre-norm blocks with an optional per-task adapter after each block,
//! tied input/output embeddings, conditional LM loss, perplexity, and
//! greedy decoding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapters::AdapterParams;
use crate::data::{specials, Example, Tokenizer};
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::{Graph, NodeId, Tensor, IGNORE_INDEX};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    /// Reserved; training is dropout-free at this scale.
    #[serde(default)]
    pub dropout: f64,
}

impl LmConfig {
    /// Desk-scale default standing in for a pretrained LM.
    pub fn toy(vocab_size: usize) -> Self {
        LmConfig {
            vocab_size,
            d_model: 128,
            n_layers: 4,
            n_heads: 4,
            d_ff: 512,
            max_seq_len: 256,
            dropout: 0.0,
        }
    }

    /// Smallest config that still has two heads and two layers; used by
    /// gradient checks and fast tests.
    pub fn tiny(vocab_size: usize, max_seq_len: usize) -> Self {
        LmConfig {
            vocab_size,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 16,
            max_seq_len,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size == 0 || self.n_layers == 0 || self.max_seq_len == 0 {
            return Err(Error::Config("zero-sized model dimension".into()));
        }
        Ok(())
    }
}

/// Initializes base transformer weights: N(0, 0.02) for projections,
/// identity layer norms. Flattened ordering follows insertion order
/// below and is stable across runs.
pub fn init_params(cfg: &LmConfig, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = |n: usize, std: f64| -> Vec<f64> {
        (0..n)
            .map(|_| {
                // Box-Muller
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect()
    };
    let (v, d, ff) = (cfg.vocab_size, cfg.d_model, cfg.d_ff);
    let mut ps = ParamSet::new();
    ps.insert("embed", vec![v, d], normal(v * d, 0.02));
    ps.insert("pos", vec![cfg.max_seq_len, d], normal(cfg.max_seq_len * d, 0.02));
    for l in 0..cfg.n_layers {
        ps.insert(format!("layer{l}.ln1.gain"), vec![d], vec![1.0; d]);
        ps.insert(format!("layer{l}.ln1.bias"), vec![d], vec![0.0; d]);
        for w in ["wq", "wk", "wv", "wo"] {
            ps.insert(format!("layer{l}.attn.{w}"), vec![d, d], normal(d * d, 0.02));
        }
        ps.insert(format!("layer{l}.ln2.gain"), vec![d], vec![1.0; d]);
        ps.insert(format!("layer{l}.ln2.bias"), vec![d], vec![0.0; d]);
        ps.insert(format!("layer{l}.ffn.w1"), vec![d, ff], normal(d * ff, 0.02));
        ps.insert(format!("layer{l}.ffn.b1"), vec![ff], vec![0.0; ff]);
        ps.insert(format!("layer{l}.ffn.w2"), vec![ff, d], normal(ff * d, 0.02));
        ps.insert(format!("layer{l}.ffn.b2"), vec![d], vec![0.0; d]);
    }
    ps.insert("final_ln.gain", vec![d], vec![1.0; d]);
    ps.insert("final_ln.bias", vec![d], vec![0.0; d]);
    ps
}

/// Which parameter set receives gradients in a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainTarget {
    None,
    Base,
    Adapter,
}

/// Leaf bookkeeping for harvesting gradients after backward.
pub struct Harvest {
    base: Vec<(String, NodeId)>,
    adapter: Vec<(String, NodeId)>,
}

impl Harvest {
    /// Adds `scale` times each leaf gradient into the owning ParamSet.
    pub fn accumulate(
        &self,
        g: &Graph,
        base: &mut ParamSet,
        adapter: Option<&mut ParamSet>,
        scale: f64,
    ) {
        for (name, id) in &self.base {
            if let Some(grad) = g.grad(*id) {
                for (pg, gv) in base.get_mut(name).grad.iter_mut().zip(grad) {
                    *pg += scale * gv;
                }
            }
        }
        if let Some(ad) = adapter {
            for (name, id) in &self.adapter {
                if let Some(grad) = g.grad(*id) {
                    for (pg, gv) in ad.get_mut(name).grad.iter_mut().zip(grad) {
                        *pg += scale * gv;
                    }
                }
            }
        }
    }
}

fn causal_mask(p: usize) -> Tensor {
    let mut data = vec![0.0; p * p];
    for i in 0..p {
        for j in (i + 1)..p {
            data[i * p + j] = -1e30;
        }
    }
    Tensor::new(vec![p, p], data)
}

/// Builds the forward graph and returns the logits node.
pub fn forward(
    g: &mut Graph,
    cfg: &LmConfig,
    base: &ParamSet,
    adapter: Option<&AdapterParams>,
    tokens: &[usize],
    target: TrainTarget,
) -> Result<(NodeId, Harvest)> {
    cfg.validate()?;
    let p = tokens.len();
    if p > cfg.max_seq_len {
        return Err(Error::SequenceTooLong {
            len: p,
            max: cfg.max_seq_len,
        });
    }
    if p == 0 {
        return Err(Error::Config("empty token sequence".into()));
    }
    if let Some(a) = adapter {
        a.check_compat(cfg)?;
    }

    let base_rg = target == TrainTarget::Base;
    let adpt_rg = target == TrainTarget::Adapter;
    let mut harvest = Harvest {
        base: Vec::new(),
        adapter: Vec::new(),
    };
    let base_leaf = |g: &mut Graph, h: &mut Harvest, name: &str| -> NodeId {
        let par = base.get(name);
        let id = g.leaf(Tensor::new(par.shape.clone(), par.data.clone()), base_rg);
        if base_rg {
            h.base.push((name.to_string(), id));
        }
        id
    };

    let d = cfg.d_model;
    let dh = d / cfg.n_heads;
    let eps = 1e-5;

    let embed = base_leaf(g, &mut harvest, "embed");
    let pos = base_leaf(g, &mut harvest, "pos");
    let tok_emb = g.embedding(embed, tokens)?;
    let pos_emb = g.slice_rows(pos, 0, p)?;
    let mut x = g.add(tok_emb, pos_emb)?;

    let mask = g.constant(causal_mask(p));
    for l in 0..cfg.n_layers {
        let ln1g = base_leaf(g, &mut harvest, &format!("layer{l}.ln1.gain"));
        let ln1b = base_leaf(g, &mut harvest, &format!("layer{l}.ln1.bias"));
        let xn = g.layer_norm(x, ln1g, ln1b, eps)?;
        let wq = base_leaf(g, &mut harvest, &format!("layer{l}.attn.wq"));
        let wk = base_leaf(g, &mut harvest, &format!("layer{l}.attn.wk"));
        let wv = base_leaf(g, &mut harvest, &format!("layer{l}.attn.wv"));
        let wo = base_leaf(g, &mut harvest, &format!("layer{l}.attn.wo"));
        let q = g.matmul(xn, wq)?;
        let k = g.matmul(xn, wk)?;
        let v = g.matmul(xn, wv)?;
        let mut heads = Vec::with_capacity(cfg.n_heads);
        for h in 0..cfg.n_heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let scores = g.matmul_bt(qh, kh)?;
            let scaled = g.scale(scores, 1.0 / (dh as f64).sqrt());
            let masked = g.add(scaled, mask)?;
            let attn = g.softmax_rows(masked);
            heads.push(g.matmul(attn, vh)?);
        }
        let cat = g.concat_cols(&heads)?;
        let proj = g.matmul(cat, wo)?;
        x = g.add(x, proj)?;

        let ln2g = base_leaf(g, &mut harvest, &format!("layer{l}.ln2.gain"));
        let ln2b = base_leaf(g, &mut harvest, &format!("layer{l}.ln2.bias"));
        let xn2 = g.layer_norm(x, ln2g, ln2b, eps)?;
        let w1 = base_leaf(g, &mut harvest, &format!("layer{l}.ffn.w1"));
        let b1 = base_leaf(g, &mut harvest, &format!("layer{l}.ffn.b1"));
        let w2 = base_leaf(g, &mut harvest, &format!("layer{l}.ffn.w2"));
        let b2 = base_leaf(g, &mut harvest, &format!("layer{l}.ffn.b2"));
        let h1 = g.matmul(xn2, w1)?;
        let h1b = g.add_row(h1, b1)?;
        let act = g.relu(h1b);
        let h2 = g.matmul(act, w2)?;
        let h2b = g.add_row(h2, b2)?;
        x = g.add(x, h2b)?;

        if let Some(a) = adapter {
            x = a.apply(g, x, l, adpt_rg, &mut harvest.adapter)?;
        }
    }

    let flng = base_leaf(g, &mut harvest, "final_ln.gain");
    let flnb = base_leaf(g, &mut harvest, "final_ln.bias");
    let hfinal = g.layer_norm(x, flng, flnb, eps)?;
    // tied output projection
    let logits = g.matmul_bt(hfinal, embed)?;
    Ok((logits, harvest))
}

/// Inference-only forward returning the logits tensor.
pub fn logits(
    cfg: &LmConfig,
    base: &ParamSet,
    adapter: Option<&AdapterParams>,
    tokens: &[usize],
) -> Result<Tensor> {
    let mut g = Graph::new();
    let (node, _) = forward(&mut g, cfg, base, adapter, tokens, TrainTarget::None)?;
    Ok(g.value(node).clone())
}

/// Token ids of one training pair: `<bos> X Y <eos>` with the input
/// length recorded so the loss covers only output positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedPair {
    pub tokens: Vec<usize>,
    /// Number of leading positions belonging to `<bos> X`.
    pub input_len: usize,
}

impl EncodedPair {
    /// Shifted next-token targets; positions predicting the input are
    /// ignored.
    pub fn targets(&self) -> Vec<usize> {
        let p = self.tokens.len();
        (1..p)
            .map(|i| {
                if i >= self.input_len {
                    self.tokens[i]
                } else {
                    IGNORE_INDEX
                }
            })
            .collect()
    }
}

/// Encodes an example, dropping oldest history segments until the pair
/// fits `max_seq_len`. Returns None when even the trailer cannot fit
/// (the caller counts drops).
pub fn encode_example(
    tok: &Tokenizer,
    ex: &Example,
    max_seq_len: usize,
) -> Option<EncodedPair> {
    let y_ids = {
        let mut v = tok.encode(&ex.y);
        v.push(specials::EOS);
        v
    };
    let seg_ids: Vec<Vec<usize>> = ex.x_segments.iter().map(|s| tok.encode(s)).collect();
    let mut start = 0;
    loop {
        let x_len: usize = seg_ids[start..].iter().map(|s| s.len()).sum();
        if 1 + x_len + y_ids.len() <= max_seq_len {
            break;
        }
        if start + 1 >= seg_ids.len() {
            return None;
        }
        start += 1;
    }
    let mut tokens = vec![specials::BOS];
    for s in &seg_ids[start..] {
        tokens.extend_from_slice(s);
    }
    let input_len = tokens.len();
    tokens.extend_from_slice(&y_ids);
    if input_len == tokens.len() {
        return None; // empty output
    }
    Some(EncodedPair { tokens, input_len })
}

/// Builds the loss graph for one pair: mean NLL over output positions.
pub fn lm_loss_graph(
    g: &mut Graph,
    cfg: &LmConfig,
    base: &ParamSet,
    adapter: Option<&AdapterParams>,
    pair: &EncodedPair,
    target: TrainTarget,
) -> Result<(NodeId, Harvest)> {
    if pair.input_len >= pair.tokens.len() {
        return Err(Error::AllIgnored);
    }
    let (logits, harvest) = forward(g, cfg, base, adapter, &pair.tokens, target)?;
    let p = pair.tokens.len();
    let pred = g.slice_rows(logits, 0, p - 1)?;
    let loss = g.cross_entropy(pred, &pair.targets())?;
    Ok((loss, harvest))
}

/// Mean NLL over the output positions of one pair, no gradients.
pub fn lm_loss(
    cfg: &LmConfig,
    base: &ParamSet,
    adapter: Option<&AdapterParams>,
    pair: &EncodedPair,
) -> Result<f64> {
    let mut g = Graph::new();
    let (loss, _) = lm_loss_graph(&mut g, cfg, base, adapter, pair, TrainTarget::None)?;
    Ok(g.value(loss).data[0])
}

/// Mean loss over a batch with gradients accumulated into the trainable
/// set, each pair weighted 1/batch.
pub fn batch_loss_and_grads(
    cfg: &LmConfig,
    base: &mut ParamSet,
    adapter: Option<&mut AdapterParams>,
    pairs: &[&EncodedPair],
    target: TrainTarget,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyData("empty batch".into()));
    }
    let scale = 1.0 / pairs.len() as f64;
    let mut total = 0.0;
    let mut adapter = adapter;
    for pair in pairs {
        let mut g = Graph::new();
        let adapter_ref = adapter.as_deref();
        let (loss, harvest) = lm_loss_graph(&mut g, cfg, base, adapter_ref, pair, target)?;
        total += g.value(loss).data[0];
        g.backward(loss);
        harvest.accumulate(&g, base, adapter.as_mut().map(|a| &mut a.params), scale);
    }
    Ok(total * scale)
}

/// Perplexity of a token sequence: exp of the mean NLL over every
/// predicted position. With `include_specials` off, positions whose
/// target is a prompt special (`USER:`, `SYSTEM:`, `API:`, `OUT:`) are
/// excluded from the mean.
pub fn perplexity_opts(
    cfg: &LmConfig,
    base: &ParamSet,
    adapter: Option<&AdapterParams>,
    tokens: &[usize],
    include_specials: bool,
) -> Result<f64> {
    if tokens.len() < 2 {
        return Err(Error::InsufficientContext { len: tokens.len() });
    }
    let mut g = Graph::new();
    let (logits, _) = forward(&mut g, cfg, base, adapter, tokens, TrainTarget::None)?;
    let p = tokens.len();
    let pred = g.slice_rows(logits, 0, p - 1)?;
    let prompt_specials = [
        specials::USER,
        specials::SYSTEM,
        specials::API,
        specials::OUT,
    ];
    let targets: Vec<usize> = (1..p)
        .map(|i| {
            if !include_specials && prompt_specials.contains(&tokens[i]) {
                IGNORE_INDEX
            } else {
                tokens[i]
            }
        })
        .collect();
    let loss = g.cross_entropy(pred, &targets)?;
    Ok(g.value(loss).data[0].exp())
}

pub fn perplexity(
    cfg: &LmConfig,
    base: &ParamSet,
    adapter: Option<&AdapterParams>,
    tokens: &[usize],
) -> Result<f64> {
    perplexity_opts(cfg, base, adapter, tokens, true)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub tokens: Vec<usize>,
    /// True when generation stopped at max_new rather than stop_token.
    pub truncated: bool,
}

/// Deterministic greedy decoding from a non-empty prefix.
pub fn greedy_decode(
    cfg: &LmConfig,
    base: &ParamSet,
    adapter: Option<&AdapterParams>,
    prefix: &[usize],
    max_new: usize,
    stop_token: usize,
) -> Result<Decoded> {
    if prefix.is_empty() {
        return Err(Error::Config("empty decode prefix".into()));
    }
    let mut seq = prefix.to_vec();
    let mut out = Vec::new();
    for _ in 0..max_new {
        if seq.len() >= cfg.max_seq_len {
            return Ok(Decoded {
                tokens: out,
                truncated: true,
            });
        }
        let lg = logits(cfg, base, adapter, &seq)?;
        let v = cfg.vocab_size;
        let last = &lg.data[(seq.len() - 1) * v..seq.len() * v];
        let next = last
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if next == stop_token {
            return Ok(Decoded {
                tokens: out,
                truncated: false,
            });
        }
        out.push(next);
        seq.push(next);
    }
    Ok(Decoded {
        tokens: out,
        truncated: max_new > 0,
    })
}

/// Top-k sampling, used by the pseudo-sample generator.
pub fn sample_decode(
    cfg: &LmConfig,
    base: &ParamSet,
    adapter: Option<&AdapterParams>,
    prefix: &[usize],
    max_new: usize,
    stop_token: usize,
    top_k: usize,
    rng: &mut impl Rng,
) -> Result<Decoded> {
    let mut seq = prefix.to_vec();
    let mut out = Vec::new();
    for _ in 0..max_new {
        if seq.len() >= cfg.max_seq_len {
            return Ok(Decoded {
                tokens: out,
                truncated: true,
            });
        }
        let lg = logits(cfg, base, adapter, &seq)?;
        let v = cfg.vocab_size;
        let last = &lg.data[(seq.len() - 1) * v..seq.len() * v];
        let mut idx: Vec<usize> = (0..v).collect();
        idx.sort_by(|&a, &b| last[b].partial_cmp(&last[a]).unwrap());
        idx.truncate(top_k.max(1));
        let max = last[idx[0]];
        let weights: Vec<f64> = idx.iter().map(|&i| (last[i] - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut draw = rng.gen_range(0.0..total);
        let mut next = idx[0];
        for (i, w) in idx.iter().zip(&weights) {
            if draw < *w {
                next = *i;
                break;
            }
            draw -= w;
        }
        if next == stop_token {
            return Ok(Decoded {
                tokens: out,
                truncated: false,
            });
        }
        out.push(next);
        seq.push(next);
    }
    Ok(Decoded {
        tokens: out,
        truncated: max_new > 0,
    })
}

pub const CHECKPOINT_MAGIC: &str = "DIALOGUE-CL-CKPT v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: LmConfig,
    pub base: ParamSet,
    pub adapters: Vec<AdapterParams>,
    pub tokenizer: Option<Tokenizer>,
}

impl Checkpoint {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut body = String::new();
        body.push_str(CHECKPOINT_MAGIC);
        body.push('\n');
        body.push_str(&serde_json::to_string(self)?);
        std::fs::write(path, body)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Checkpoint> {
        let body = std::fs::read_to_string(path)?;
        let Some((header, json)) = body.split_once('\n') else {
            return Err(Error::Checkpoint("missing header".into()));
        };
        if header != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad magic header `{header}`"
            )));
        }
        let mut ckpt: Checkpoint = serde_json::from_str(json)?;
        ckpt.base.reindex();
        for a in &mut ckpt.adapters {
            a.params.reindex();
        }
        if let Some(t) = &mut ckpt.tokenizer {
            t.reindex();
        }
        Ok(ckpt)
    }
}
