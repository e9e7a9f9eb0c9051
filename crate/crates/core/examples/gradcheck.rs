//! Central-difference verification of the reverse-mode gradients, from a
//! single op up to the whole language-model loss.

use dialogue_cl::gradcheck::{finite_diff, max_rel_err};
use dialogue_cl::model::{self, EncodedPair, LmConfig, TrainTarget};
use dialogue_cl::tensor::{Graph, Tensor};
use dialogue_cl::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    // one op: softmax rows followed by a weighted sum
    let x0: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let f = |x: &[f64]| {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::new(vec![3, 4], x.to_vec()), true);
        let s = g.softmax_rows(a);
        let w = g.constant(Tensor::new(
            vec![3, 4],
            (0..12).map(|i| (i as f64 * 0.31).cos()).collect(),
        ));
        let prod = g.mul(s, w).unwrap();
        let out = g.sum(prod);
        g.value(out).data[0]
    };
    let numeric = finite_diff(&x0, f);
    let mut g = Graph::new();
    let a = g.leaf(Tensor::new(vec![3, 4], x0.clone()), true);
    let s = g.softmax_rows(a);
    let w = g.constant(Tensor::new(
        vec![3, 4],
        (0..12).map(|i| (i as f64 * 0.31).cos()).collect(),
    ));
    let prod = g.mul(s, w)?;
    let out = g.sum(prod);
    g.backward(out);
    let analytic = g.grad(a).unwrap();
    println!(
        "softmax·weights op: max relative error {:.3e}",
        max_rel_err(&analytic, &numeric)
    );

    // whole model: gradient of the LM loss wrt the embedding table
    let cfg = LmConfig::tiny(12, 16);
    let mut ps = model::init_params(&cfg, 0);
    let pair = EncodedPair {
        tokens: vec![1, 5, 7, 9, 4, 2],
        input_len: 3,
    };
    let loss_of = |emb: &[f64], ps: &mut dialogue_cl::params::ParamSet| {
        ps.get_mut("embed").data.copy_from_slice(emb);
        model::lm_loss(&cfg, ps, None, &pair).unwrap()
    };
    let e0 = ps.get("embed").data.clone();
    let mut ps_probe = ps.clone();
    let numeric = finite_diff(&e0, |e| loss_of(e, &mut ps_probe));

    ps.zero_grad();
    model::batch_loss_and_grads(&cfg, &mut ps, None, &[&pair], TrainTarget::Base)?;
    let analytic = ps.get("embed").grad.clone();
    println!(
        "lm loss wrt embedding: max relative error {:.3e}",
        max_rel_err(&analytic, &numeric)
    );
    Ok(())
}
