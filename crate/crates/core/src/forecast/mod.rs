//! Monthly graduation forecasting: LSTM sequence classifier, training,
//! prefix inference and turning-point detection.

mod checkpoint;
mod lstm;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use lstm::{
    dropout_scale, forward, loss_and_gradients, lstm_cell_step, ForecastModel, Gradients, Hyperparams,
    LabeledSequence, LstmParams, Mode, Normalization, DROPOUT_RATE, HIDDEN_DIM,
};
pub use train::{accuracy, train, EpochStats, TrainHistory};

use crate::metrics::FeatureVector;

pub const DEFAULT_TURN_THRESHOLD: f64 = 0.1;

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("empty feature sequence")]
    EmptySequence,
    #[error("empty training batch")]
    EmptyBatch,
    #[error("label must be 0 or 1, got {0}")]
    BadLabel(u8),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid training set: {0}")]
    Dataset(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSeries {
    pub project_id: String,
    /// Graduation probability per month, month 1 first.
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TurnKind {
    Downturn,
    Upturn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnEvent {
    pub month: u32,
    pub kind: TurnKind,
    pub delta: f64,
}

/// Graduation probability for each month; month `t` only sees months `1..=t`.
pub fn forecast_series(
    m: &ForecastModel,
    project_id: &str,
    seq: &[FeatureVector],
) -> Result<ForecastSeries, ForecastError> {
    let probs = forward(m, seq, Mode::Eval)?;
    Ok(ForecastSeries {
        project_id: project_id.to_owned(),
        probabilities: probs.into_iter().map(|p| p[1]).collect(),
    })
}

/// Month-over-month forecast changes of at least `threshold` in magnitude.
pub fn detect_turns(series: &ForecastSeries, threshold: f64) -> Vec<TurnEvent> {
    assert!(threshold > 0.0, "turn threshold must be positive");
    series
        .probabilities
        .windows(2)
        .enumerate()
        .filter_map(|(i, w)| {
            let delta = w[1] - w[0];
            let kind = if delta <= -threshold {
                TurnKind::Downturn
            } else if delta >= threshold {
                TurnKind::Upturn
            } else {
                return None;
            };
            Some(TurnEvent { month: i as u32 + 2, kind, delta })
        })
        .collect()
}
