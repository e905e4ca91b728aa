//! QoS-based selection: simple additive weighting over min-max normalized
//! profiles.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matchmaker::MatchResult;
use crate::model::{Direction, QosField, QosProfile};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RankingError {
    #[error("no candidates to normalize")]
    EmptyCandidateList,
    #[error("weights must be finite, non-negative and not all zero")]
    BadWeights,
}

/// Per-field weights, normalized to sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<QosField, f64>", into = "BTreeMap<QosField, f64>")]
pub struct WeightVector {
    weights: [f64; 5],
}

impl Default for WeightVector {
    fn default() -> Self {
        Self { weights: [0.2; 5] }
    }
}

impl WeightVector {
    /// Fields missing from `raw` get weight 0.
    pub fn new(raw: &BTreeMap<QosField, f64>) -> Result<Self, RankingError> {
        let mut weights = [0.0; 5];
        for (i, f) in QosField::ALL.iter().enumerate() {
            let w = raw.get(f).copied().unwrap_or(0.0);
            if !(w.is_finite() && w >= 0.0) {
                return Err(RankingError::BadWeights);
            }
            weights[i] = w;
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(RankingError::BadWeights);
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self { weights })
    }

    pub fn get(&self, field: QosField) -> f64 {
        self.weights[Self::slot(field)]
    }

    fn slot(field: QosField) -> usize {
        QosField::ALL.iter().position(|f| *f == field).unwrap_or(0)
    }
}

impl TryFrom<BTreeMap<QosField, f64>> for WeightVector {
    type Error = RankingError;

    fn try_from(raw: BTreeMap<QosField, f64>) -> Result<Self, Self::Error> {
        Self::new(&raw)
    }
}

impl From<WeightVector> for BTreeMap<QosField, f64> {
    fn from(w: WeightVector) -> Self {
        QosField::ALL.iter().map(|f| (*f, w.get(*f))).collect()
    }
}

/// Min-max normalization per field, oriented so that 1 is best. A field on
/// which every candidate agrees normalizes to 1.
pub fn normalize(candidates: &[QosProfile]) -> Result<Vec<[f64; 5]>, RankingError> {
    if candidates.is_empty() {
        return Err(RankingError::EmptyCandidateList);
    }
    let mut out = vec![[0.0; 5]; candidates.len()];
    for (j, field) in QosField::ALL.into_iter().enumerate() {
        let values: Vec<f64> = candidates.iter().map(|c| c.get(field)).collect();
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (row, v) in out.iter_mut().zip(&values) {
            row[j] = normalize_value(*v, min, max, field.direction());
        }
    }
    Ok(out)
}

pub fn normalize_value(v: f64, min: f64, max: f64, direction: Direction) -> f64 {
    if max == min {
        return 1.0;
    }
    match direction {
        Direction::Benefit => (v - min) / (max - min),
        Direction::Cost => (max - v) / (max - min),
    }
}

pub fn weighted_sum(row: &[f64; 5], w: &WeightVector) -> f64 {
    QosField::ALL
        .iter()
        .zip(row)
        .map(|(f, v)| w.get(*f) * v)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    #[serde(flatten)]
    pub result: MatchResult,
    pub utility: f64,
}

/// Orders candidates by utility, then match score, then id, and keeps `k`.
pub fn select_rank(
    results: &[(MatchResult, QosProfile)],
    w: &WeightVector,
    k: usize,
) -> Vec<Ranked> {
    let profiles: Vec<QosProfile> = results.iter().map(|(_, q)| *q).collect();
    let Ok(rows) = normalize(&profiles) else {
        return Vec::new();
    };
    let mut ranked: Vec<Ranked> = results
        .iter()
        .zip(&rows)
        .map(|((m, _), row)| Ranked {
            result: m.clone(),
            utility: weighted_sum(row, w),
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.utility
            .total_cmp(&a.utility)
            .then(b.result.score.total_cmp(&a.result.score))
            .then(a.result.service_id.cmp(&b.result.service_id))
            .then(a.result.gateway.cmp(&b.result.gateway))
    });
    ranked.truncate(k);
    ranked
}
