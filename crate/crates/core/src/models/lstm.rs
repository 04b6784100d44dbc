//! Stacked bidirectional LSTM classifier with trainable embeddings, trained
//! by backpropagation through time and Adam.
//!
//! Architecture: embedding lookup, then `layers` bidirectional LSTM layers
//! (each position's output is the concatenation of the forward and backward
//! hidden states), then a dense head with one sigmoid unit per class fed by
//! the last forward state and the last backward state of the top layer.
//! Padding positions are never visited.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::FORMAT_VERSION;
use crate::error::{Error, Result};
use crate::features::{EmbeddingMatrix, TokenSequence, PAD};
use crate::rng::{derive_seed, seeded, tag, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LstmHyper {
    /// Bidirectional layers.
    pub layers: usize,
    /// Hidden units per direction.
    pub hidden: usize,
    pub embed_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for LstmHyper {
    fn default() -> Self {
        LstmHyper {
            layers: 2,
            hidden: 100,
            embed_dim: 32,
            epochs: 6,
            batch_size: 32,
            learning_rate: 0.001,
            clip_norm: None,
            seed: 0,
        }
    }
}

impl LstmHyper {
    /// Six epochs, the tuned setting for the sentiment task.
    pub fn sentiment_preset() -> Self {
        LstmHyper {
            epochs: 6,
            ..Self::default()
        }
    }

    /// Seven epochs, the tuned setting for the Bloom task.
    pub fn epistemic_preset() -> Self {
        LstmHyper {
            epochs: 7,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.embed_dim == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "layers, hidden, embed_dim and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Input and recurrent weights plus bias of one gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    /// hidden × input
    pub w: Matrix,
    /// hidden × hidden
    pub u: Matrix,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    pub forget: Gate,
    pub input: Gate,
    pub output: Gate,
    pub candidate: Gate,
}

impl CellParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let gate = || Gate {
            w: Matrix::zeros(hidden, input),
            u: Matrix::zeros(hidden, hidden),
            b: vec![0.0; hidden],
        };
        CellParams {
            forget: gate(),
            input: gate(),
            output: gate(),
            candidate: gate(),
        }
    }

    fn gates(&self) -> [&Gate; 4] {
        [&self.forget, &self.input, &self.output, &self.candidate]
    }

    fn gates_mut(&mut self) -> [&mut Gate; 4] {
        [&mut self.forget, &mut self.input, &mut self.output, &mut self.candidate]
    }

    pub fn hidden(&self) -> usize {
        self.forget.b.len()
    }

    pub fn input_dim(&self) -> usize {
        self.forget.w.cols
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiLayer {
    pub forward: CellParams,
    pub backward: CellParams,
}

/// All trainable parameters. The same shape doubles as a gradient buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub embedding: EmbeddingMatrix,
    pub layers: Vec<BiLayer>,
    /// classes × 2·hidden
    pub head_w: Matrix,
    pub head_b: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(vocab_size: usize, n_classes: usize, hyper: &LstmHyper) -> Self {
        let h = hyper.hidden;
        let layers = (0..hyper.layers)
            .map(|l| {
                let input = if l == 0 { hyper.embed_dim } else { 2 * h };
                BiLayer {
                    forward: CellParams::zeros(input, h),
                    backward: CellParams::zeros(input, h),
                }
            })
            .collect();
        LstmParams {
            embedding: EmbeddingMatrix {
                rows: vocab_size,
                dim: hyper.embed_dim,
                data: vec![0.0; vocab_size * hyper.embed_dim],
            },
            layers,
            head_w: Matrix::zeros(n_classes, 2 * h),
            head_b: vec![0.0; n_classes],
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for s in z.slices_mut() {
            s.fill(0.0);
        }
        z
    }

    /// Every parameter block in a fixed order: embedding, then per layer the
    /// forward and backward cells (gates f, i, o, c; each W, U, b), then head.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.embedding.data];
        for layer in &self.layers {
            for cell in [&layer.forward, &layer.backward] {
                for g in cell.gates() {
                    out.push(&g.w.data);
                    out.push(&g.u.data);
                    out.push(&g.b);
                }
            }
        }
        out.push(&self.head_w.data);
        out.push(&self.head_b);
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![&mut self.embedding.data];
        for layer in &mut self.layers {
            for cell in [&mut layer.forward, &mut layer.backward] {
                for g in cell.gates_mut() {
                    out.push(&mut g.w.data);
                    out.push(&mut g.u.data);
                    out.push(&mut g.b);
                }
            }
        }
        out.push(&mut self.head_w.data);
        out.push(&mut self.head_b);
        out
    }

    pub fn n_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// Reads the scalar at flat index `i` (order of [`LstmParams::slices`]).
    pub fn get_flat(&self, mut i: usize) -> f64 {
        for s in self.slices() {
            if i < s.len() {
                return s[i];
            }
            i -= s.len();
        }
        panic!("flat parameter index out of range")
    }

    pub fn set_flat(&mut self, mut i: usize, value: f64) {
        for s in self.slices_mut() {
            if i < s.len() {
                s[i] = value;
                return;
            }
            i -= s.len();
        }
        panic!("flat parameter index out of range")
    }

    pub fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    fn hidden(&self) -> usize {
        self.layers[0].forward.hidden()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Activations of one cell step, kept for backpropagation.
#[derive(Debug, Clone)]
struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    f: Vec<f64>,
    i: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
    c: Vec<f64>,
}

fn gate_preact(gate: &Gate, x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut a = gate.b.clone();
    gate.w.mul_vec_acc(x, &mut a);
    gate.u.mul_vec_acc(h, &mut a);
    a
}

fn step(cell: &CellParams, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> StepCache {
    let f: Vec<f64> = gate_preact(&cell.forget, x, h_prev).into_iter().map(sigmoid).collect();
    let i: Vec<f64> = gate_preact(&cell.input, x, h_prev).into_iter().map(sigmoid).collect();
    let o: Vec<f64> = gate_preact(&cell.output, x, h_prev).into_iter().map(sigmoid).collect();
    let g: Vec<f64> = gate_preact(&cell.candidate, x, h_prev).into_iter().map(f64::tanh).collect();
    let c: Vec<f64> = (0..f.len()).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = o.iter().zip(&tanh_c).map(|(o, t)| o * t).collect();
    StepCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        f,
        i,
        o,
        g,
        tanh_c,
        h,
        c,
    }
}

/// One LSTM cell update: gates f, i, o (sigmoid) and candidate c̃ (tanh);
/// `c_t = f ⊙ c_prev + i ⊙ c̃`, `h_t = o ⊙ tanh(c_t)`.
pub fn lstm_cell_step(
    cell: &CellParams,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let hidden = cell.hidden();
    for g in cell.gates() {
        if g.w.rows != hidden || g.u.rows != hidden || g.u.cols != hidden || g.b.len() != hidden {
            return Err(Error::Shape("inconsistent gate shapes".into()));
        }
        if g.w.cols != cell.input_dim() {
            return Err(Error::Shape("inconsistent gate input widths".into()));
        }
    }
    if x.len() != cell.input_dim() || h_prev.len() != hidden || c_prev.len() != hidden {
        return Err(Error::Shape(format!(
            "cell expects input {} and state {hidden}, got {}, {}, {}",
            cell.input_dim(),
            x.len(),
            h_prev.len(),
            c_prev.len()
        )));
    }
    let s = step(cell, x, h_prev, c_prev);
    Ok((s.h, s.c))
}

/// Runs one direction over `inputs`; caches are returned by position.
fn run_direction(cell: &CellParams, inputs: &[Vec<f64>], reverse: bool) -> Vec<StepCache> {
    let hidden = cell.hidden();
    let t_len = inputs.len();
    let mut h = vec![0.0; hidden];
    let mut c = vec![0.0; hidden];
    let mut caches: Vec<Option<StepCache>> = vec![None; t_len];
    for k in 0..t_len {
        let t = if reverse { t_len - 1 - k } else { k };
        let s = step(cell, &inputs[t], &h, &c);
        h.clone_from(&s.h);
        c.clone_from(&s.c);
        caches[t] = Some(s);
    }
    caches.into_iter().map(|c| c.expect("visited")).collect()
}

/// Backpropagates one direction. `dh_out[t]` is the loss gradient w.r.t. the
/// hidden state emitted at position `t`; input gradients are added into
/// `d_inputs`.
fn backprop_direction(
    cell: &CellParams,
    grad: &mut CellParams,
    caches: &[StepCache],
    dh_out: &[Vec<f64>],
    reverse: bool,
    d_inputs: &mut [Vec<f64>],
) {
    let hidden = cell.hidden();
    let t_len = caches.len();
    let mut dh_next = vec![0.0; hidden];
    let mut dc_next = vec![0.0; hidden];
    for k in 0..t_len {
        // Reverse of the processing order.
        let t = if reverse { k } else { t_len - 1 - k };
        let s = &caches[t];
        let mut da = [vec![0.0; hidden], vec![0.0; hidden], vec![0.0; hidden], vec![0.0; hidden]];
        for j in 0..hidden {
            let dh = dh_out[t][j] + dh_next[j];
            let d_o = dh * s.tanh_c[j];
            let dc = dc_next[j] + dh * s.o[j] * (1.0 - s.tanh_c[j] * s.tanh_c[j]);
            let df = dc * s.c_prev[j];
            let di = dc * s.g[j];
            let dg = dc * s.i[j];
            dc_next[j] = dc * s.f[j];
            da[0][j] = df * s.f[j] * (1.0 - s.f[j]);
            da[1][j] = di * s.i[j] * (1.0 - s.i[j]);
            da[2][j] = d_o * s.o[j] * (1.0 - s.o[j]);
            da[3][j] = dg * (1.0 - s.g[j] * s.g[j]);
        }
        let mut dh_prev = vec![0.0; hidden];
        for ((gate, g_grad), da_k) in cell.gates().into_iter().zip(grad.gates_mut()).zip(&da) {
            g_grad.w.add_outer(da_k, &s.x);
            g_grad.u.add_outer(da_k, &s.h_prev);
            for (b, d) in g_grad.b.iter_mut().zip(da_k) {
                *b += d;
            }
            gate.w.mul_t_vec_acc(da_k, &mut d_inputs[t]);
            gate.u.mul_t_vec_acc(da_k, &mut dh_prev);
        }
        dh_next = dh_prev;
    }
}

struct LayerTrace {
    inputs: Vec<Vec<f64>>,
    fwd: Vec<StepCache>,
    bwd: Vec<StepCache>,
}

struct Trace {
    ids: Vec<u32>,
    layers: Vec<LayerTrace>,
    features: Vec<f64>,
    scores: Vec<f64>,
    logits: Vec<f64>,
}

fn forward_trace(params: &LstmParams, seq: &TokenSequence) -> Result<Trace> {
    if seq.true_len == 0 {
        return Err(Error::Data("cannot run the LSTM on an empty sequence".into()));
    }
    if seq.true_len > seq.ids.len() {
        return Err(Error::Shape("true_len exceeds sequence length".into()));
    }
    let ids = seq.tokens().to_vec();
    if let Some(&bad) = ids.iter().find(|&&id| id as usize >= params.embedding.rows) {
        return Err(Error::Shape(format!(
            "token id {bad} outside embedding of {} rows",
            params.embedding.rows
        )));
    }
    let mut inputs: Vec<Vec<f64>> = ids.iter().map(|&id| params.embedding.row(id).to_vec()).collect();
    let mut layers = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let fwd = run_direction(&layer.forward, &inputs, false);
        let bwd = run_direction(&layer.backward, &inputs, true);
        let outputs: Vec<Vec<f64>> = fwd
            .iter()
            .zip(&bwd)
            .map(|(f, b)| f.h.iter().chain(&b.h).copied().collect())
            .collect();
        layers.push(LayerTrace { inputs, fwd, bwd });
        inputs = outputs;
    }
    let top = layers.last().expect("at least one layer");
    let t_last = ids.len() - 1;
    let features: Vec<f64> = top.fwd[t_last].h.iter().chain(&top.bwd[0].h).copied().collect();
    let mut logits = params.head_b.clone();
    params.head_w.mul_vec_acc(&features, &mut logits);
    let scores = logits.iter().map(|&l| sigmoid(l)).collect();
    Ok(Trace {
        ids,
        layers,
        features,
        scores,
        logits,
    })
}

/// Summed binary cross-entropy of sigmoid outputs against a one-hot target,
/// computed from logits for stability.
fn bce_from_logits(logits: &[f64], target: usize) -> f64 {
    logits
        .iter()
        .enumerate()
        .map(|(k, &l)| {
            let y = if k == target { 1.0 } else { 0.0 };
            l.max(0.0) - l * y + (-l.abs()).exp().ln_1p()
        })
        .sum()
}

/// Loss of one sample and its gradient added into `grad`.
fn backward(params: &LstmParams, trace: &Trace, target: usize, grad: &mut LstmParams) -> f64 {
    let hidden = params.hidden();
    let loss = bce_from_logits(&trace.logits, target);
    let d_logits: Vec<f64> = trace
        .scores
        .iter()
        .enumerate()
        .map(|(k, &s)| s - if k == target { 1.0 } else { 0.0 })
        .collect();
    grad.head_w.add_outer(&d_logits, &trace.features);
    for (b, d) in grad.head_b.iter_mut().zip(&d_logits) {
        *b += d;
    }
    let mut d_features = vec![0.0; 2 * hidden];
    params.head_w.mul_t_vec_acc(&d_logits, &mut d_features);

    let t_len = trace.ids.len();
    // Gradient w.r.t. each position's concatenated output of the current layer.
    let mut d_out: Vec<Vec<f64>> = vec![vec![0.0; 2 * hidden]; t_len];
    d_out[t_len - 1][..hidden].copy_from_slice(&d_features[..hidden]);
    for (d, v) in d_out[0][hidden..].iter_mut().zip(&d_features[hidden..]) {
        *d += v;
    }
    for (l, layer) in params.layers.iter().enumerate().rev() {
        let lt = &trace.layers[l];
        let in_dim = lt.inputs[0].len();
        let dh_fwd: Vec<Vec<f64>> = d_out.iter().map(|d| d[..hidden].to_vec()).collect();
        let dh_bwd: Vec<Vec<f64>> = d_out.iter().map(|d| d[hidden..].to_vec()).collect();
        let mut d_in = vec![vec![0.0; in_dim]; t_len];
        let g = &mut grad.layers[l];
        backprop_direction(&layer.forward, &mut g.forward, &lt.fwd, &dh_fwd, false, &mut d_in);
        backprop_direction(&layer.backward, &mut g.backward, &lt.bwd, &dh_bwd, true, &mut d_in);
        d_out = d_in;
    }
    for (&id, d) in trace.ids.iter().zip(&d_out) {
        for (e, v) in grad.embedding.row_mut(id).iter_mut().zip(d) {
            *e += v;
        }
    }
    loss
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmModel {
    pub format_version: u32,
    pub classes: Vec<usize>,
    pub vocab_fingerprint: String,
    pub hyper: LstmHyper,
    pub params: LstmParams,
}

/// Everything the trainer needs besides hyperparameters and data.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmSetup {
    /// Total id space (including PAD and UNK).
    pub vocab_size: usize,
    /// Label space, ascending; one output unit each.
    pub classes: Vec<usize>,
    /// Optional warm start for the embedding layer.
    pub embeddings: Option<EmbeddingMatrix>,
    pub vocab_fingerprint: String,
}

fn glorot(rng: &mut Rng, m: &mut Matrix) {
    let limit = (6.0 / (m.rows + m.cols) as f64).sqrt();
    for v in &mut m.data {
        *v = rng.random_range(-limit..limit);
    }
}

impl LstmModel {
    /// Glorot-uniform weights, zero biases with forget bias 1, embeddings
    /// U(-0.05, 0.05) unless warm-started, PAD row zero.
    pub fn initialize(setup: &LstmSetup, hyper: &LstmHyper) -> Result<Self> {
        hyper.validate()?;
        let mut classes = setup.classes.clone();
        classes.sort_unstable();
        classes.dedup();
        if classes.is_empty() {
            return Err(Error::Data("LSTM needs at least one class".into()));
        }
        if setup.vocab_size < 2 {
            return Err(Error::Config("vocabulary must include PAD and UNK".into()));
        }
        let mut rng = seeded(derive_seed(hyper.seed, tag("lstm-init")));
        let mut params = LstmParams::zeros(setup.vocab_size, classes.len(), hyper);
        params.embedding = match &setup.embeddings {
            Some(e) => {
                if e.rows != setup.vocab_size || e.dim != hyper.embed_dim {
                    return Err(Error::Shape(format!(
                        "embedding matrix is {}x{}, model needs {}x{}",
                        e.rows, e.dim, setup.vocab_size, hyper.embed_dim
                    )));
                }
                let mut e = e.clone();
                e.row_mut(PAD).fill(0.0);
                e
            }
            None => EmbeddingMatrix::random(setup.vocab_size, hyper.embed_dim, &mut rng),
        };
        for layer in &mut params.layers {
            for cell in [&mut layer.forward, &mut layer.backward] {
                for g in cell.gates_mut() {
                    glorot(&mut rng, &mut g.w);
                    glorot(&mut rng, &mut g.u);
                }
                cell.forget.b.fill(1.0);
            }
        }
        glorot(&mut rng, &mut params.head_w);
        Ok(LstmModel {
            format_version: FORMAT_VERSION,
            classes,
            vocab_fingerprint: setup.vocab_fingerprint.clone(),
            hyper: hyper.clone(),
            params,
        })
    }

    /// Per-class sigmoid scores, in the order of `classes`.
    pub fn scores(&self, seq: &TokenSequence) -> Result<Vec<f64>> {
        Ok(forward_trace(&self.params, seq)?.scores)
    }

    /// Predicted class (argmax of scores; ties to the smallest class) and scores.
    pub fn predict(&self, seq: &TokenSequence) -> Result<(usize, Vec<f64>)> {
        let scores = self.scores(seq)?;
        Ok((self.classes[argmax(&scores)], scores))
    }

    fn target_index(&self, label: usize) -> Result<usize> {
        self.classes
            .binary_search(&label)
            .map_err(|_| Error::Data(format!("label {label} not in the model's classes")))
    }

    /// Loss of one labeled sequence.
    pub fn loss(&self, seq: &TokenSequence, label: usize) -> Result<f64> {
        let target = self.target_index(label)?;
        let trace = forward_trace(&self.params, seq)?;
        Ok(bce_from_logits(&trace.logits, target))
    }

    /// Loss of one labeled sequence and its full parameter gradient.
    pub fn loss_and_grad(&self, seq: &TokenSequence, label: usize) -> Result<(f64, LstmParams)> {
        let mut grad = self.params.zeros_like();
        let target = self.target_index(label)?;
        let trace = forward_trace(&self.params, seq)?;
        let loss = backward(&self.params, &trace, target, &mut grad);
        Ok((loss, grad))
    }
}

/// Class scores of `model` on `seq`.
pub fn lstm_forward(model: &LstmModel, seq: &TokenSequence) -> Result<Vec<f64>> {
    model.scores(seq)
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// Running accuracy over the epoch's forward passes.
    pub train_accuracy: f64,
    /// `None` when no validation data was supplied.
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub epochs: Vec<EpochStats>,
    pub warnings: Vec<String>,
}

struct Adam {
    m: LstmParams,
    v: LstmParams,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: &LstmParams, lr: f64) -> Self {
        Adam {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut LstmParams, grad: &LstmParams) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let blocks = params
            .slices_mut()
            .into_iter()
            .zip(grad.slices())
            .zip(self.m.slices_mut())
            .zip(self.v.slices_mut());
        for (((p, g), m), v) in blocks {
            for k in 0..p.len() {
                m[k] = Self::BETA1 * m[k] + (1.0 - Self::BETA1) * g[k];
                v[k] = Self::BETA2 * v[k] + (1.0 - Self::BETA2) * g[k] * g[k];
                p[k] -= self.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

fn accuracy(model: &LstmModel, data: &[(TokenSequence, usize)]) -> Result<f64> {
    let mut correct = 0;
    for (seq, label) in data {
        if model.predict(seq)?.0 == *label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Mini-batch BPTT with Adam on summed per-class binary cross-entropy.
/// Training order is reshuffled every epoch from the seeded RNG; the result
/// is bit-reproducible for a fixed seed.
pub fn lstm_fit(
    train: &[(TokenSequence, usize)],
    val: &[(TokenSequence, usize)],
    setup: &LstmSetup,
    hyper: &LstmHyper,
) -> Result<(LstmModel, TrainingCurve)> {
    if train.is_empty() {
        return Err(Error::Data("LSTM training set is empty".into()));
    }
    let mut model = LstmModel::initialize(setup, hyper)?;
    let mut curve = TrainingCurve::default();
    for &c in &model.classes {
        if !train.iter().any(|(_, l)| *l == c) {
            curve
                .warnings
                .push(format!("class {c} is in the label space but absent from training data"));
        }
    }
    let targets: Vec<usize> = train
        .iter()
        .map(|(_, l)| model.target_index(*l))
        .collect::<Result<_>>()?;
    if train.iter().any(|(s, _)| s.true_len == 0) {
        return Err(Error::Data("training sequence with no tokens".into()));
    }

    let mut adam = Adam::new(&model.params, hyper.learning_rate);
    let mut shuffle_rng = seeded(derive_seed(hyper.seed, tag("lstm-shuffle")));
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, batch) in order.chunks(hyper.batch_size).enumerate() {
            let mut grad = model.params.zeros_like();
            for &idx in batch {
                let trace = forward_trace(&model.params, &train[idx].0)?;
                if argmax(&trace.scores) == targets[idx] {
                    correct += 1;
                }
                let loss = backward(&model.params, &trace, targets[idx], &mut grad);
                if !loss.is_finite() {
                    return Err(Error::Diverged(format!(
                        "non-finite loss at epoch {epoch}, batch {}",
                        b + 1
                    )));
                }
                loss_sum += loss;
            }
            let scale = 1.0 / batch.len() as f64;
            let mut sq = 0.0;
            for s in grad.slices_mut() {
                for v in s.iter_mut() {
                    *v *= scale;
                    sq += *v * *v;
                }
            }
            if let Some(max) = hyper.clip_norm {
                let norm = sq.sqrt();
                if norm > max {
                    let k = max / norm;
                    for s in grad.slices_mut() {
                        s.iter_mut().for_each(|v| *v *= k);
                    }
                }
            }
            adam.step(&mut model.params, &grad);
        }
        if !model.params.all_finite() {
            return Err(Error::Diverged(format!("non-finite parameters after epoch {epoch}")));
        }
        let val_accuracy = if val.is_empty() {
            None
        } else {
            Some(accuracy(&model, val)?)
        };
        curve.epochs.push(EpochStats {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_accuracy,
        });
    }
    Ok((model, curve))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_hyper() -> LstmHyper {
        LstmHyper {
            layers: 2,
            hidden: 4,
            embed_dim: 4,
            epochs: 0,
            batch_size: 4,
            learning_rate: 0.01,
            clip_norm: None,
            seed: 11,
        }
    }

    fn setup(vocab: usize, classes: Vec<usize>) -> LstmSetup {
        LstmSetup {
            vocab_size: vocab,
            classes,
            embeddings: None,
            vocab_fingerprint: String::new(),
        }
    }

    fn seq(ids: &[u32], len: usize) -> TokenSequence {
        let mut v = ids.to_vec();
        v.resize(len, PAD);
        TokenSequence { ids: v, true_len: ids.len() }
    }

    #[test]
    fn zero_cell() {
        let cell = CellParams::zeros(3, 2);
        let (h, c) = lstm_cell_step(&cell, &[1.0, -2.0, 0.5], &[0.0; 2], &[0.0; 2]).unwrap();
        assert_eq!(h, vec![0.0; 2]);
        assert_eq!(c, vec![0.0; 2]);
        let s = step(&cell, &[1.0, -2.0, 0.5], &[0.0; 2], &[0.0; 2]);
        assert_eq!(s.f, vec![0.5; 2]);
        assert_eq!(s.i, vec![0.5; 2]);
        assert_eq!(s.o, vec![0.5; 2]);
    }

    #[test]
    fn saturated_forget_gate_keeps_memory() {
        let mut cell = CellParams::zeros(1, 1);
        cell.forget.b = vec![100.0];
        cell.candidate.b = vec![0.3];
        let s = step(&cell, &[0.0], &[0.0], &[2.0]);
        let expected = 2.0 + 0.5 * 0.3f64.tanh();
        assert!((s.c[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let cell = CellParams::zeros(3, 2);
        assert!(lstm_cell_step(&cell, &[1.0], &[0.0; 2], &[0.0; 2]).is_err());
        assert!(lstm_cell_step(&cell, &[1.0; 3], &[0.0; 3], &[0.0; 2]).is_err());
    }

    #[test]
    fn zero_network_scores_half() {
        let hyper = tiny_hyper();
        let model = LstmModel {
            format_version: FORMAT_VERSION,
            classes: vec![0, 1, 2],
            vocab_fingerprint: String::new(),
            hyper: hyper.clone(),
            params: LstmParams::zeros(6, 3, &hyper),
        };
        let (class, scores) = model.predict(&seq(&[2, 3], 4)).unwrap();
        assert_eq!(scores, vec![0.5; 3]);
        assert_eq!(class, 0);
        assert!(model.predict(&seq(&[], 4)).is_err());
    }

    #[test]
    fn scores_in_unit_interval_and_pad_invariant() {
        let model = LstmModel::initialize(&setup(8, vec![0, 1, 2]), &tiny_hyper()).unwrap();
        let single = model.scores(&seq(&[5], 3)).unwrap();
        assert!(single.iter().all(|&s| s > 0.0 && s < 1.0));
        let a = seq(&[2, 3, 4], 6);
        let mut b = a.clone();
        b.ids[4] = 7;
        b.ids[5] = 1;
        assert_eq!(model.scores(&a).unwrap(), model.scores(&b).unwrap());
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let s = setup(6, vec![0, 1]);
        let data = vec![(seq(&[2], 2), 0), (seq(&[3], 2), 1)];
        let (model, curve) = lstm_fit(&data, &[], &s, &tiny_hyper()).unwrap();
        assert_eq!(model, LstmModel::initialize(&s, &tiny_hyper()).unwrap());
        assert!(curve.epochs.is_empty());
    }

    #[test]
    fn absent_class_is_a_warning() {
        let s = setup(6, vec![0, 1, 2]);
        let data = vec![(seq(&[2], 2), 0), (seq(&[3], 2), 1)];
        let hyper = LstmHyper { epochs: 1, ..tiny_hyper() };
        let (_, curve) = lstm_fit(&data, &data, &s, &hyper).unwrap();
        assert_eq!(curve.warnings.len(), 1);
        assert_eq!(curve.epochs.len(), 1);
        assert!(curve.epochs[0].val_accuracy.is_some());
    }

    #[test]
    fn warm_start_shape_checked() {
        let mut s = setup(6, vec![0, 1]);
        s.embeddings = Some(EmbeddingMatrix { rows: 6, dim: 3, data: vec![0.0; 18] });
        assert!(LstmModel::initialize(&s, &tiny_hyper()).is_err());
        s.embeddings = Some(EmbeddingMatrix { rows: 6, dim: 4, data: vec![1.0; 24] });
        let m = LstmModel::initialize(&s, &tiny_hyper()).unwrap();
        assert_eq!(m.params.embedding.row(PAD), &[0.0; 4]);
        assert_eq!(m.params.embedding.row(3), &[1.0; 4]);
    }

    #[test]
    fn f64_loss_agrees_with_double_double() {
        let model = LstmModel::initialize(&setup(8, vec![0, 1, 2]), &tiny_hyper()).unwrap();
        let s = seq(&[2, 7, 4, 3], 5);
        for label in 0..3 {
            let a = model.loss(&s, label).unwrap();
            let b = super::super::wide::wide_loss(&model.params, &s, label);
            assert!((a - b).abs() < 1e-13, "{a} vs {b}");
        }
    }

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn cell_matches_scalar_formulas() {
        let mut rng = seeded(3);
        let mut cell = CellParams::zeros(3, 2);
        for g in cell.gates_mut() {
            for v in g.w.data.iter_mut().chain(g.u.data.iter_mut()).chain(g.b.iter_mut()) {
                *v = rng.random_range(-0.5..0.5);
            }
        }
        let x = [0.3, -0.7, 0.1];
        let hp = [0.2, -0.4];
        let cp = [0.5, 0.05];
        let (h, c) = lstm_cell_step(&cell, &x, &hp, &cp).unwrap();
        for j in 0..2 {
            let pre = |g: &Gate| {
                g.b[j] + (0..3).map(|k| g.w.data[j * 3 + k] * x[k]).sum::<f64>()
                    + (0..2).map(|k| g.u.data[j * 2 + k] * hp[k]).sum::<f64>()
            };
            let f = sig(pre(&cell.forget));
            let i = sig(pre(&cell.input));
            let o = sig(pre(&cell.output));
            let g = pre(&cell.candidate).tanh();
            let c_ref = f * cp[j] + i * g;
            assert!((c[j] - c_ref).abs() < 1e-14);
            assert!((h[j] - o * c_ref.tanh()).abs() < 1e-14);
        }
    }

    fn toy_set() -> Vec<(TokenSequence, usize)> {
        // Class 0 sequences contain token 2, class 1 sequences token 3.
        vec![
            (seq(&[2, 4], 3), 0),
            (seq(&[5, 2], 3), 0),
            (seq(&[2], 3), 0),
            (seq(&[4, 2, 5], 3), 0),
            (seq(&[3, 4], 3), 1),
            (seq(&[5, 3], 3), 1),
            (seq(&[3], 3), 1),
            (seq(&[4, 3, 5], 3), 1),
        ]
    }

    #[test]
    fn overfits_tiny_separable_set() {
        let hyper = LstmHyper {
            layers: 2,
            hidden: 8,
            embed_dim: 8,
            epochs: 50,
            batch_size: 4,
            learning_rate: 0.01,
            clip_norm: None,
            seed: 1,
        };
        let data = toy_set();
        let (model, curve) = lstm_fit(&data, &[], &setup(6, vec![0, 1]), &hyper).unwrap();
        assert_eq!(curve.epochs.len(), 50);
        assert!(curve.epochs.last().unwrap().train_loss < curve.epochs[0].train_loss);
        for (s, l) in &data {
            assert_eq!(model.predict(s).unwrap().0, *l);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let hyper = LstmHyper { epochs: 3, ..tiny_hyper() };
        let s = setup(6, vec![0, 1]);
        let a = lstm_fit(&toy_set(), &[], &s, &hyper).unwrap();
        let b = lstm_fit(&toy_set(), &[], &s, &hyper).unwrap();
        assert_eq!(
            serde_json::to_string(&a.0).unwrap(),
            serde_json::to_string(&b.0).unwrap()
        );
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn model_json_round_trips_exactly() {
        let hyper = LstmHyper { epochs: 1, ..tiny_hyper() };
        let (model, _) = lstm_fit(&toy_set(), &[], &setup(6, vec![0, 1]), &hyper).unwrap();
        let text = serde_json::to_string(&model).unwrap();
        let back: LstmModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn empty_sequence_rejected_in_training() {
        let data = vec![(seq(&[], 2), 0)];
        assert!(lstm_fit(&data, &[], &setup(6, vec![0]), &tiny_hyper()).is_err());
    }
}
