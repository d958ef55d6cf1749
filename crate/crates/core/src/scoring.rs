//! Error functions, signal byte schemas and per-agent scores.
//!
//! Scores are `1 / (1 + error)`: positive, at most 1, and strictly
//! decreasing in the error, which makes them safe weights for the
//! score-proportional reward split.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::types::{Address, AgentId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoringError {
    #[error("no signal for tick {0}")]
    MissingTick(u64),
    #[error("nothing to score")]
    NoTicks,
    #[error("no valid challenger datasets")]
    NoValidChallengers,
    #[error("prediction has {got} values, truth has {expected}")]
    SchemaMismatch { expected: usize, got: usize },
}

/// Per-prediction error. Implementations must return a finite value >= 0.
pub trait ErrorMetric {
    fn error(&self, prediction: &[f64], truth: &[f64]) -> Result<f64, ScoringError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BuiltinError {
    #[default]
    MeanSquaredError,
    /// Fraction of components that differ from the truth label.
    ZeroOneLoss,
}

impl ErrorMetric for BuiltinError {
    fn error(&self, prediction: &[f64], truth: &[f64]) -> Result<f64, ScoringError> {
        if prediction.len() != truth.len() {
            return Err(ScoringError::SchemaMismatch { expected: truth.len(), got: prediction.len() });
        }
        if truth.is_empty() {
            return Ok(0.0);
        }
        let n = truth.len() as f64;
        let e = match self {
            BuiltinError::MeanSquaredError => {
                prediction.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n
            }
            BuiltinError::ZeroOneLoss => prediction.iter().zip(truth).filter(|(p, t)| p != t).count() as f64 / n,
        };
        // NaN predictions are as bad as it gets
        Ok(if e.is_finite() { e } else { f64::MAX })
    }
}

pub fn score_from_error(error: f64) -> f64 {
    1.0 / (1.0 + error)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ScoreBreakdown {
    PerTick(BTreeMap<u64, f64>),
    PerChallenger(BTreeMap<Address, f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentScore {
    pub agent: AgentId,
    pub score: f64,
    pub breakdown: ScoreBreakdown,
}

/// Mean error over all truth ticks, mapped to a score.
pub fn real_time_score(
    agent: AgentId,
    signals: &BTreeMap<u64, Vec<f64>>,
    truths: &BTreeMap<u64, Vec<f64>>,
    metric: &dyn ErrorMetric,
) -> Result<AgentScore, ScoringError> {
    if truths.is_empty() {
        return Err(ScoringError::NoTicks);
    }
    let mut per_tick = BTreeMap::new();
    for (tick, truth) in truths {
        let prediction = signals.get(tick).ok_or(ScoringError::MissingTick(*tick))?;
        per_tick.insert(*tick, metric.error(prediction, truth)?);
    }
    let mean = per_tick.values().sum::<f64>() / per_tick.len() as f64;
    Ok(AgentScore { agent, score: score_from_error(mean), breakdown: ScoreBreakdown::PerTick(per_tick) })
}

/// Median of per-challenger scores. A challenger the agent gave no usable
/// answer for contributes a score of 0.
pub fn dataset_score(
    agent: AgentId,
    outputs: &BTreeMap<Address, Vec<f64>>,
    truths: &BTreeMap<Address, Vec<f64>>,
    metric: &dyn ErrorMetric,
) -> Result<AgentScore, ScoringError> {
    if truths.is_empty() {
        return Err(ScoringError::NoValidChallengers);
    }
    let per_challenger: BTreeMap<Address, f64> = truths
        .iter()
        .map(|(ch, truth)| {
            let s = outputs.get(ch).and_then(|out| metric.error(out, truth).ok()).map_or(0.0, score_from_error);
            (*ch, s)
        })
        .collect();
    let mut values: Vec<f64> = per_challenger.values().copied().collect();
    let score = median(&mut values).expect("non-empty");
    Ok(AgentScore { agent, score, breakdown: ScoreBreakdown::PerChallenger(per_challenger) })
}

/// Median; the mean of the two middle values for even counts.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { (values[n / 2 - 1] + values[n / 2]) / 2.0 })
}

/// Byte schemas for signals and datasets: big-endian `f64` vectors.
pub mod codec {
    use crate::types::Address;

    pub fn encode_vector(values: &[f64]) -> Vec<u8> {
        values.iter().flat_map(|v| v.to_be_bytes()).collect()
    }

    pub fn decode_vector(bytes: &[u8]) -> Option<Vec<f64>> {
        if !bytes.len().is_multiple_of(8) {
            return None;
        }
        Some(bytes.chunks_exact(8).map(|c| f64::from_be_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    /// A real-time prediction: exactly `dim` values.
    pub fn decode_prediction(bytes: &[u8], dim: usize) -> Option<Vec<f64>> {
        decode_vector(bytes).filter(|v| v.len() == dim)
    }

    /// Dataset inputs blob: `u32 rows || u32 width || rows*width f64`.
    pub fn encode_matrix(rows: &[Vec<f64>]) -> Vec<u8> {
        let width = rows.first().map_or(0, Vec::len);
        let mut out = Vec::with_capacity(8 + rows.len() * width * 8);
        out.extend_from_slice(&(rows.len() as u32).to_be_bytes());
        out.extend_from_slice(&(width as u32).to_be_bytes());
        for r in rows {
            assert_eq!(r.len(), width, "ragged matrix");
            out.extend(encode_vector(r));
        }
        out
    }

    pub fn decode_matrix(bytes: &[u8]) -> Option<Vec<Vec<f64>>> {
        let rows = u32::from_be_bytes(bytes.get(..4)?.try_into().ok()?) as usize;
        let width = u32::from_be_bytes(bytes.get(4..8)?.try_into().ok()?) as usize;
        let body = decode_vector(&bytes[8..])?;
        if body.len() != rows.checked_mul(width)? {
            return None;
        }
        if width == 0 {
            return Some(vec![Vec::new(); rows]);
        }
        Some(body.chunks_exact(width).map(<[f64]>::to_vec).collect())
    }

    /// Dataset-domain signal: for each challenger, `address || u32 count || count f64`.
    pub fn encode_dataset_answers(answers: &[(Address, Vec<f64>)]) -> Vec<u8> {
        let mut out = Vec::new();
        for (ch, values) in answers {
            out.extend_from_slice(ch.as_bytes());
            out.extend_from_slice(&(values.len() as u32).to_be_bytes());
            out.extend(encode_vector(values));
        }
        out
    }

    pub fn decode_dataset_answers(mut bytes: &[u8]) -> Option<Vec<(Address, Vec<f64>)>> {
        let mut out = Vec::new();
        while !bytes.is_empty() {
            let ch = Address::from_slice(bytes.get(..32)?)?;
            let n = u32::from_be_bytes(bytes.get(32..36)?.try_into().ok()?) as usize;
            let end = 36usize.checked_add(n.checked_mul(8)?)?;
            let values = decode_vector(bytes.get(36..end)?)?;
            out.push((ch, values));
            bytes = &bytes[end..];
        }
        Some(out)
    }
}
