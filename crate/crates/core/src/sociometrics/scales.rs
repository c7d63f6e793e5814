use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{mean, sample_variance, SociometricsError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LikertResponse {
    pub item: String,
    pub value: u8,
}

impl LikertResponse {
    pub fn new(item: impl Into<String>, value: u8) -> Self {
        Self { item: item.into(), value }
    }
}

/// Maps `v` to `(points + 1) - v`.
pub fn reverse_code(value: u8, points: u8) -> u8 {
    points + 1 - value
}

/// Mean item score after reverse-coding the items in `reverse_items`.
pub fn score_scale(
    responses: &[LikertResponse],
    reverse_items: &BTreeSet<String>,
    points: u8,
) -> Result<f64, SociometricsError> {
    if responses.is_empty() {
        return Err(SociometricsError::EmptyResponses);
    }
    if let Some(missing) = reverse_items.iter().find(|r| !responses.iter().any(|x| &x.item == *r)) {
        return Err(SociometricsError::MissingReverseItem(missing.clone()));
    }
    let mut values = Vec::with_capacity(responses.len());
    for r in responses {
        if r.value < 1 || r.value > points {
            return Err(SociometricsError::LikertOutOfRange { item: r.item.clone(), value: r.value, points });
        }
        let v = if reverse_items.contains(&r.item) { reverse_code(r.value, points) } else { r.value };
        values.push(v as f64);
    }
    Ok(mean(&values).expect("non-empty"))
}

/// Cronbach's alpha of a respondents x items matrix, using sample variances.
pub fn cronbach_alpha(item_matrix: &[Vec<u8>]) -> Result<f64, SociometricsError> {
    let respondents = item_matrix.len();
    let items = item_matrix.first().map_or(0, Vec::len);
    if respondents < 2 || items < 2 {
        return Err(SociometricsError::TooSmallMatrix { items, respondents });
    }
    if let Some(bad) = item_matrix.iter().position(|row| row.len() != items) {
        return Err(SociometricsError::RaggedMatrix(bad));
    }
    let item_variance_sum: f64 = (0..items)
        .map(|j| {
            let column: Vec<f64> = item_matrix.iter().map(|row| row[j] as f64).collect();
            sample_variance(&column).expect("at least two respondents")
        })
        .sum();
    let totals: Vec<f64> = item_matrix.iter().map(|row| row.iter().map(|&v| v as f64).sum()).collect();
    let total_variance = sample_variance(&totals).expect("at least two respondents");
    if total_variance == 0.0 {
        return Err(SociometricsError::DegenerateScale);
    }
    let k = items as f64;
    Ok(k / (k - 1.0) * (1.0 - item_variance_sum / total_variance))
}
