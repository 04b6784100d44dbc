//! Central-difference verification of LSTM gradients.

use rand::seq::index::sample;
use rand::Rng as _;

use super::lstm::{LstmHyper, LstmModel, LstmParams, LstmSetup};
use super::wide::wide_central_difference;
use crate::error::Result;
use crate::features::{EmbeddingMatrix, TokenSequence, PAD};
use crate::rng::{derive_seed, seeded, tag};

/// A small bidirectional model for gradient checking. Embeddings are drawn
/// U(-1, 1) rather than the training init so that gradients in the lower
/// layer sit well above central-difference round-off.
pub fn probe_model(
    vocab_size: usize,
    n_classes: usize,
    hidden: usize,
    embed_dim: usize,
    seed: u64,
) -> Result<LstmModel> {
    let mut rng = seeded(derive_seed(seed, tag("gradcheck-embed")));
    let mut embeddings = EmbeddingMatrix {
        rows: vocab_size,
        dim: embed_dim,
        data: (0..vocab_size * embed_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
    };
    embeddings.row_mut(PAD).fill(0.0);
    let setup = LstmSetup {
        vocab_size,
        classes: (0..n_classes).collect(),
        embeddings: Some(embeddings),
        vocab_fingerprint: String::new(),
    };
    let hyper = LstmHyper {
        layers: 2,
        hidden,
        embed_dim,
        epochs: 0,
        batch_size: 1,
        seed,
        ..LstmHyper::default()
    };
    LstmModel::initialize(&setup, &hyper)
}

/// `min(subset, n_params)` distinct flat parameter indices, ascending.
pub fn sample_parameter_indices(params: &LstmParams, subset: usize, seed: u64) -> Vec<usize> {
    let n = params.n_params();
    let mut rng = seeded(derive_seed(seed, tag("gradcheck")));
    let mut idx = sample(&mut rng, n, subset.min(n)).into_vec();
    idx.sort_unstable();
    idx
}

/// Compares `analytic` against central differences of the loss at the flat
/// parameter `indices`, the loss being evaluated in double-double precision.
/// Returns the largest `|a - n| / max(|a|, |n|, 1e-12)`, or 0 for no indices.
pub fn check_gradient_at(
    model: &LstmModel,
    seq: &TokenSequence,
    label: usize,
    analytic: &LstmParams,
    h: f64,
    indices: &[usize],
) -> Result<f64> {
    // Validates the sequence and label.
    model.loss(seq, label)?;
    let target = model.classes.binary_search(&label).expect("checked by loss");
    let mut worst: f64 = 0.0;
    for &i in indices {
        let numeric = wide_central_difference(&model.params, seq, target, i, h);
        let a = analytic.get_flat(i);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Max relative error between backpropagated and numeric gradients over
/// `subset` randomly chosen parameters.
pub fn gradient_check(
    model: &LstmModel,
    seq: &TokenSequence,
    label: usize,
    h: f64,
    subset: usize,
    seed: u64,
) -> Result<f64> {
    let (_, analytic) = model.loss_and_grad(seq, label)?;
    let indices = sample_parameter_indices(&model.params, subset, seed);
    check_gradient_at(model, seq, label, &analytic, h, &indices)
}
