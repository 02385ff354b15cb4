//! Single-layer LSTM with dropout on its output and a two-way softmax head,
//! plus exact backpropagation through time.
//!
//! Gate rows in the stacked LSTM weight matrix are ordered input, forget,
//! cell candidate, output. Each gate block is `hidden × (input + hidden)`,
//! with the input columns first.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ForecastError;
use crate::metrics::FeatureVector;

pub const HIDDEN_DIM: usize = 64;
pub const DROPOUT_RATE: f64 = 0.3;
pub const FORGET_BIAS: f64 = 1.0;
pub const STD_FLOOR: f64 = 1e-8;

/// Whether dropout is active. Training masks are a pure function of the seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train { seed: u64 },
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// `4·hidden × (input + hidden)`
    pub weights: Array2<f64>,
    /// `4·hidden`
    pub bias: Array1<f64>,
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        LstmParams {
            weights: Array2::zeros((4 * hidden_dim, input_dim + hidden_dim)),
            bias: Array1::zeros(4 * hidden_dim),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.bias.len() / 4
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols() - self.hidden_dim()
    }
}

/// Per-feature z-score statistics taken from the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(dim: usize) -> Self {
        Normalization { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    pub fn fit<'a, I>(sequences: I, dim: usize) -> Self
    where
        I: IntoIterator<Item = &'a [FeatureVector]>,
    {
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        let mut n = 0usize;
        for seq in sequences {
            for v in seq {
                for (j, x) in v.as_slice().iter().enumerate().take(dim) {
                    sum[j] += x;
                    sq[j] += x * x;
                }
                n += 1;
            }
        }
        if n == 0 {
            return Self::identity(dim);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n as f64 - m * m).max(0.0).sqrt().max(STD_FLOOR))
            .collect();
        Normalization { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Array1<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

/// Optimizer and schedule settings; stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub hidden_dim: usize,
    pub dropout_rate: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip_norm: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            hidden_dim: HIDDEN_DIM,
            dropout_rate: DROPOUT_RATE,
            epochs: 200,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastModel {
    pub lstm: LstmParams,
    /// `2 × hidden`; row 0 is "retired", row 1 "graduated".
    pub dense_weights: Array2<f64>,
    pub dense_bias: Array1<f64>,
    pub normalization: Normalization,
    pub hyperparams: Hyperparams,
    pub seed: u64,
}

/// Gradients with the same shapes as the model's trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub lstm_weights: Array2<f64>,
    pub lstm_bias: Array1<f64>,
    pub dense_weights: Array2<f64>,
    pub dense_bias: Array1<f64>,
}

impl Gradients {
    pub fn zeros_like(m: &ForecastModel) -> Self {
        Gradients {
            lstm_weights: Array2::zeros(m.lstm.weights.raw_dim()),
            lstm_bias: Array1::zeros(m.lstm.bias.raw_dim()),
            dense_weights: Array2::zeros(m.dense_weights.raw_dim()),
            dense_bias: Array1::zeros(m.dense_bias.raw_dim()),
        }
    }

    pub fn tensors(&self) -> [&[f64]; 4] {
        [
            self.lstm_weights.as_slice().expect("standard layout"),
            self.lstm_bias.as_slice().expect("standard layout"),
            self.dense_weights.as_slice().expect("standard layout"),
            self.dense_bias.as_slice().expect("standard layout"),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.lstm_weights.as_slice_mut().expect("standard layout"),
            self.lstm_bias.as_slice_mut().expect("standard layout"),
            self.dense_weights.as_slice_mut().expect("standard layout"),
            self.dense_bias.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn norm(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.iter()).map(|g| g * g).sum::<f64>().sqrt()
    }
}

impl ForecastModel {
    /// All-zero model with identity normalization.
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        ForecastModel {
            lstm: LstmParams::zeros(input_dim, hidden_dim),
            dense_weights: Array2::zeros((2, hidden_dim)),
            dense_bias: Array1::zeros(2),
            normalization: Normalization::identity(input_dim),
            hyperparams: Hyperparams { hidden_dim, ..Hyperparams::default() },
            seed: 0,
        }
    }

    /// Glorot-uniform weights per gate block and for the dense head; zero
    /// biases except the forget gate.
    pub fn initialize(input_dim: usize, hyperparams: Hyperparams, normalization: Normalization, seed: u64) -> Self {
        let hidden = hyperparams.hidden_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = ForecastModel::zeros(input_dim, hidden);
        let gate_limit = (6.0 / ((input_dim + hidden) + hidden) as f64).sqrt();
        for w in model.lstm.weights.iter_mut() {
            *w = rng.random_range(-gate_limit..gate_limit);
        }
        model.lstm.bias.slice_mut(s![hidden..2 * hidden]).fill(FORGET_BIAS);
        let dense_limit = (6.0 / (hidden + 2) as f64).sqrt();
        for w in model.dense_weights.iter_mut() {
            *w = rng.random_range(-dense_limit..dense_limit);
        }
        model.normalization = normalization;
        model.hyperparams = hyperparams;
        model.seed = seed;
        model
    }

    pub fn input_dim(&self) -> usize {
        self.lstm.input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.lstm.hidden_dim()
    }

    pub fn dropout_rate(&self) -> f64 {
        self.hyperparams.dropout_rate
    }

    pub fn tensors(&self) -> [&[f64]; 4] {
        [
            self.lstm.weights.as_slice().expect("standard layout"),
            self.lstm.bias.as_slice().expect("standard layout"),
            self.dense_weights.as_slice().expect("standard layout"),
            self.dense_bias.as_slice().expect("standard layout"),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.lstm.weights.as_slice_mut().expect("standard layout"),
            self.lstm.bias.as_slice_mut().expect("standard layout"),
            self.dense_weights.as_slice_mut().expect("standard layout"),
            self.dense_bias.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
            && self.normalization.mean.iter().chain(&self.normalization.std).all(|x| x.is_finite())
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

/// Activations of one time step, kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    /// `[x; h_prev]`
    concat: Array1<f64>,
    i: Array1<f64>,
    f: Array1<f64>,
    g: Array1<f64>,
    o: Array1<f64>,
    c_prev: Array1<f64>,
    tanh_c: Array1<f64>,
}

fn step_cached(
    params: &LstmParams,
    x: ArrayView1<f64>,
    h: ArrayView1<f64>,
    c: ArrayView1<f64>,
) -> Result<(Array1<f64>, Array1<f64>, StepCache), ForecastError> {
    let hidden = params.hidden_dim();
    if x.len() != params.input_dim() || h.len() != hidden || c.len() != hidden {
        return Err(ForecastError::Shape(format!(
            "cell expects input {} / hidden {}, got {} / {} / {}",
            params.input_dim(),
            hidden,
            x.len(),
            h.len(),
            c.len()
        )));
    }
    if x.iter().chain(h.iter()).chain(c.iter()).any(|v| !v.is_finite()) {
        return Err(ForecastError::NonFinite("lstm cell input"));
    }
    let mut concat = Array1::zeros(x.len() + hidden);
    concat.slice_mut(s![..x.len()]).assign(&x);
    concat.slice_mut(s![x.len()..]).assign(&h);
    let z = params.weights.dot(&concat) + &params.bias;
    let i = z.slice(s![..hidden]).mapv(sigmoid);
    let f = z.slice(s![hidden..2 * hidden]).mapv(sigmoid);
    let g = z.slice(s![2 * hidden..3 * hidden]).mapv(f64::tanh);
    let o = z.slice(s![3 * hidden..]).mapv(sigmoid);
    let c_new = &f * &c + &i * &g;
    let tanh_c = c_new.mapv(f64::tanh);
    let h_new = &o * &tanh_c;
    let cache = StepCache { concat, i, f, g, o, c_prev: c.to_owned(), tanh_c };
    Ok((h_new, c_new, cache))
}

/// One LSTM step: sigmoid input/forget/output gates, tanh candidate,
/// `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')`.
pub fn lstm_cell_step(
    params: &LstmParams,
    x: ArrayView1<f64>,
    h: ArrayView1<f64>,
    c: ArrayView1<f64>,
) -> Result<(Array1<f64>, Array1<f64>), ForecastError> {
    step_cached(params, x, h, c).map(|(h, c, _)| (h, c))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Inverted-dropout scale for unit `unit` at step `t` of sequence `stream`:
/// `0` when dropped, `1 / (1 - rate)` when kept.
pub fn dropout_scale(seed: u64, stream: u64, t: usize, unit: usize, rate: f64) -> f64 {
    if rate <= 0.0 {
        return 1.0;
    }
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ stream);
    h = splitmix64(h ^ t as u64);
    h = splitmix64(h ^ unit as u64);
    let u = (h >> 11) as f64 / (1u64 << 53) as f64;
    if u < rate {
        0.0
    } else {
        1.0 / (1.0 - rate)
    }
}

fn dropout_mask(mode: Mode, stream: u64, t: usize, hidden: usize, rate: f64) -> Option<Array1<f64>> {
    match mode {
        Mode::Eval => None,
        Mode::Train { seed } => Some((0..hidden).map(|j| dropout_scale(seed, stream, t, j, rate)).collect()),
    }
}

fn log_softmax2(logits: &Array1<f64>) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    [logits[0] - lse, logits[1] - lse]
}

/// Forward pass over one sequence with its caches.
pub(crate) struct Trace {
    pub probs: Vec<[f64; 2]>,
    pub log_probs: Vec<[f64; 2]>,
    steps: Vec<StepCache>,
    dropped: Vec<Array1<f64>>,
    masks: Vec<Option<Array1<f64>>>,
}

pub(crate) fn run_sequence(
    m: &ForecastModel,
    seq: &[FeatureVector],
    mode: Mode,
    stream: u64,
) -> Result<Trace, ForecastError> {
    if seq.is_empty() {
        return Err(ForecastError::EmptySequence);
    }
    let hidden = m.hidden_dim();
    let mut h = Array1::zeros(hidden);
    let mut c = Array1::zeros(hidden);
    let mut trace = Trace {
        probs: Vec::with_capacity(seq.len()),
        log_probs: Vec::with_capacity(seq.len()),
        steps: Vec::with_capacity(seq.len()),
        dropped: Vec::with_capacity(seq.len()),
        masks: Vec::with_capacity(seq.len()),
    };
    for (t, v) in seq.iter().enumerate() {
        let x = m.normalization.apply(&v.as_slice()[..m.input_dim()]);
        let (h_new, c_new, cache) = step_cached(&m.lstm, x.view(), h.view(), c.view())?;
        let mask = dropout_mask(mode, stream, t, hidden, m.dropout_rate());
        let out = match &mask {
            Some(mask) => &h_new * mask,
            None => h_new.clone(),
        };
        let logits = m.dense_weights.dot(&out) + &m.dense_bias;
        let lp = log_softmax2(&logits);
        trace.probs.push([lp[0].exp(), lp[1].exp()]);
        trace.log_probs.push(lp);
        trace.steps.push(cache);
        trace.dropped.push(out);
        trace.masks.push(mask);
        h = h_new;
        c = c_new;
    }
    Ok(trace)
}

/// Per-step `(p_retire, p_graduate)` for a raw (unnormalized) feature sequence.
pub fn forward(m: &ForecastModel, seq: &[FeatureVector], mode: Mode) -> Result<Vec<[f64; 2]>, ForecastError> {
    run_sequence(m, seq, mode, 0).map(|t| t.probs)
}

/// Labeled training sequence; label 1 is graduated, 0 retired.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub features: Vec<FeatureVector>,
    pub label: u8,
}

/// Mean over sequences of the mean per-step cross-entropy against the
/// sequence label, with gradients by backpropagation through time.
pub fn loss_and_gradients(
    m: &ForecastModel,
    batch: &[LabeledSequence],
    mode: Mode,
) -> Result<(f64, Gradients), ForecastError> {
    if batch.is_empty() {
        return Err(ForecastError::EmptyBatch);
    }
    let hidden = m.hidden_dim();
    let input = m.input_dim();
    let mut grads = Gradients::zeros_like(m);
    let mut loss = 0.0;
    for (k, item) in batch.iter().enumerate() {
        if item.label > 1 {
            return Err(ForecastError::BadLabel(item.label));
        }
        let label = item.label as usize;
        let trace = run_sequence(m, &item.features, mode, k as u64)?;
        let steps = item.features.len();
        let scale = 1.0 / (steps as f64 * batch.len() as f64);
        loss += -trace.log_probs.iter().map(|lp| lp[label]).sum::<f64>() / steps as f64;

        let mut dh_next: Array1<f64> = Array1::zeros(hidden);
        let mut dc_next: Array1<f64> = Array1::zeros(hidden);
        for t in (0..steps).rev() {
            let p = trace.probs[t];
            let mut dlogits = Array1::from(vec![p[0] * scale, p[1] * scale]);
            dlogits[label] -= scale;
            let out = &trace.dropped[t];
            for r in 0..2 {
                grads.dense_bias[r] += dlogits[r];
                grads.dense_weights.row_mut(r).scaled_add(dlogits[r], out);
            }
            let mut dh = m.dense_weights.t().dot(&dlogits);
            if let Some(mask) = &trace.masks[t] {
                dh *= mask;
            }
            dh += &dh_next;

            let cache = &trace.steps[t];
            let d_o = &dh * &cache.tanh_c;
            let dc = &dh * &cache.o * &cache.tanh_c.mapv(|v| 1.0 - v * v) + &dc_next;
            let d_i = &dc * &cache.g;
            let d_g = &dc * &cache.i;
            let d_f = &dc * &cache.c_prev;
            dc_next = &dc * &cache.f;

            let mut dz = Array1::zeros(4 * hidden);
            dz.slice_mut(s![..hidden]).assign(&(&d_i * &cache.i.mapv(|v| v * (1.0 - v))));
            dz.slice_mut(s![hidden..2 * hidden]).assign(&(&d_f * &cache.f.mapv(|v| v * (1.0 - v))));
            dz.slice_mut(s![2 * hidden..3 * hidden]).assign(&(&d_g * &cache.g.mapv(|v| 1.0 - v * v)));
            dz.slice_mut(s![3 * hidden..]).assign(&(&d_o * &cache.o.mapv(|v| v * (1.0 - v))));

            grads.lstm_bias += &dz;
            let dz_col = dz.view().insert_axis(Axis(1));
            let concat_row = cache.concat.view().insert_axis(Axis(0));
            grads.lstm_weights += &dz_col.dot(&concat_row);
            let dconcat = m.lstm.weights.t().dot(&dz);
            dh_next = dconcat.slice(s![input..]).to_owned();
        }
    }
    Ok((loss / batch.len() as f64, grads))
}
