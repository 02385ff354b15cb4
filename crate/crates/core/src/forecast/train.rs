use serde::{Deserialize, Serialize};

use super::lstm::{forward, loss_and_gradients, ForecastModel, Hyperparams, LabeledSequence, Mode, Normalization};
use super::ForecastError;
use crate::metrics::FEATURE_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    /// Share of sequences whose final-month eval prediction matches the label.
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }
}

/// Final-step classification accuracy in eval mode.
pub fn accuracy(m: &ForecastModel, data: &[LabeledSequence]) -> Result<f64, ForecastError> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for item in data {
        let probs = forward(m, &item.features, Mode::Eval)?;
        let p = probs.last().expect("non-empty sequence")[1];
        let predicted = u8::from(p >= 0.5);
        hits += usize::from(predicted == item.label);
    }
    Ok(hits as f64 / data.len() as f64)
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    fn new(model: &ForecastModel) -> Self {
        let zeros: Vec<Vec<f64>> = model.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Adam { m: zeros.clone(), v: zeros, step: 0 }
    }

    fn update(&mut self, model: &mut ForecastModel, grads: &[&[f64]; 4], hp: &Hyperparams, clip: f64) {
        self.step += 1;
        let bc1 = 1.0 - hp.beta1.powi(self.step);
        let bc2 = 1.0 - hp.beta2.powi(self.step);
        for (k, params) in model.tensors_mut().into_iter().enumerate() {
            for (j, p) in params.iter_mut().enumerate() {
                let g = grads[k][j] * clip;
                let m = &mut self.m[k][j];
                let v = &mut self.v[k][j];
                *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
                *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= hp.learning_rate * m_hat / (v_hat.sqrt() + hp.epsilon);
            }
        }
    }
}

/// Per-epoch dropout seed derived from the run seed.
fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ (epoch as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Full-batch Adam training with gradient-norm clipping. Normalization stats
/// come from `dataset` only.
pub fn train(
    dataset: &[LabeledSequence],
    hyperparams: &Hyperparams,
    seed: u64,
) -> Result<(ForecastModel, TrainHistory), ForecastError> {
    if dataset.len() < 2 {
        return Err(ForecastError::Dataset(format!(
            "need at least 2 labeled sequences, got {}",
            dataset.len()
        )));
    }
    if let Some(bad) = dataset.iter().find(|s| s.label > 1) {
        return Err(ForecastError::BadLabel(bad.label));
    }
    if dataset.iter().any(|s| s.features.is_empty()) {
        return Err(ForecastError::EmptySequence);
    }
    let positives = dataset.iter().filter(|s| s.label == 1).count();
    if positives == 0 || positives == dataset.len() {
        return Err(ForecastError::Dataset(format!(
            "training set has a single class ({} graduated, {} retired); both labels are required",
            positives,
            dataset.len() - positives
        )));
    }

    let norm = Normalization::fit(dataset.iter().map(|s| s.features.as_slice()), FEATURE_DIM);
    let mut model = ForecastModel::initialize(FEATURE_DIM, hyperparams.clone(), norm, seed);
    let mut adam = Adam::new(&model);
    let mut history = TrainHistory::default();
    for epoch in 0..hyperparams.epochs {
        let mode = Mode::Train { seed: epoch_seed(seed, epoch) };
        let (loss, grads) = loss_and_gradients(&model, dataset, mode)?;
        let norm = grads.norm();
        let clip = if hyperparams.clip_norm > 0.0 && norm > hyperparams.clip_norm {
            hyperparams.clip_norm / norm
        } else {
            1.0
        };
        adam.update(&mut model, &grads.tensors(), hyperparams, clip);
        if !model.is_finite() {
            return Err(ForecastError::NonFinite("parameters after update"));
        }
        history.epochs.push(EpochStats { epoch: epoch + 1, loss, accuracy: accuracy(&model, dataset)? });
        log::debug!("epoch {} loss {:.6} acc {:.3}", epoch + 1, loss, history.epochs[epoch].accuracy);
    }
    Ok((model, history))
}
