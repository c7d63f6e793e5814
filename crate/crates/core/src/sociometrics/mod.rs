//! Pure implementations of the team measures: perception accuracy and group
//! climate from the perspective-taking exercise, rank disagreement, allocation
//! compromise, Likert scale scoring and dictionary-based linguistic profiles.
//!
//! Nothing in here touches I/O, clocks or shared state. Every function is a
//! deterministic function of its arguments.

mod accuracy;
mod allocation;
mod liwc;
mod ranking;
mod scales;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use accuracy::{group_climate, perception_accuracy, AccuracyResult, GuessSet};
pub use allocation::{compromise, AllocationVector};
pub use liwc::{liwc_profile, liwc_shift, tokenize, DictionaryError, LiwcDictionary, LiwcProfile, Pattern};
pub use ranking::{footrule_distance, team_disagreement, RankVector};
pub use scales::{cronbach_alpha, reverse_code, score_scale, LikertResponse};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SociometricsError {
    #[error("emotion score {0} outside [-5, 5]")]
    ScoreOutOfRange(i64),
    #[error("no reports")]
    NoReports,
    #[error("ranking is not a permutation of 1..={len}: {ranks:?}")]
    InvalidPermutation { ranks: Vec<u32>, len: usize },
    #[error("rankings cover different proposal sets ({left} vs {right} proposals)")]
    ProposalSetMismatch { left: usize, right: usize },
    #[error("at least 2 rankings are required, got {0}")]
    TooFewRankings(usize),
    #[error("allocation sums to {actual}, expected budget {budget} ({})", describe_gap(*.actual, *.budget))]
    AllocationSum { actual: u64, budget: u64 },
    #[error("budget must be positive")]
    ZeroBudget,
    #[error("allocation vectors disagree on budget or proposal count")]
    BudgetMismatch,
    #[error("no member allocations")]
    NoMembers,
    #[error("empty responses")]
    EmptyResponses,
    #[error("likert value {value} for item {item} outside [1, {points}]")]
    LikertOutOfRange { item: String, value: u8, points: u8 },
    #[error("reverse-coded item {0} missing from responses")]
    MissingReverseItem(String),
    #[error("need at least 2 items and 2 respondents, got {items} items and {respondents} respondents")]
    TooSmallMatrix { items: usize, respondents: usize },
    #[error("respondent {0} answered a different number of items")]
    RaggedMatrix(usize),
    #[error("degenerate scale")]
    DegenerateScale,
    #[error("unknown category {0}")]
    UnknownCategory(String),
}

fn describe_gap(actual: u64, budget: u64) -> String {
    if actual < budget {
        format!("deficit {}", budget - actual)
    } else {
        format!("excess {}", actual - budget)
    }
}

/// Valence of a member's team experience on the integer scale -5..=5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub struct EmotionScore(i8);

impl EmotionScore {
    pub const MIN: i8 = -5;
    pub const MAX: i8 = 5;

    pub fn new(value: i64) -> Result<Self, SociometricsError> {
        if (Self::MIN as i64..=Self::MAX as i64).contains(&value) {
            Ok(Self(value as i8))
        } else {
            Err(SociometricsError::ScoreOutOfRange(value))
        }
    }

    pub fn value(self) -> i8 {
        self.0
    }

    /// Every valid score, most negative first.
    pub fn all() -> impl Iterator<Item = EmotionScore> {
        (Self::MIN..=Self::MAX).map(EmotionScore)
    }
}

impl TryFrom<i64> for EmotionScore {
    type Error = SociometricsError;

    fn try_from(value: i64) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<EmotionScore> for i64 {
    fn from(score: EmotionScore) -> Self {
        score.0 as i64
    }
}

impl fmt::Display for EmotionScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:+}", self.0)
    }
}

/// Arithmetic mean; `None` on empty input.
pub(crate) fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Sample (n - 1) variance; `None` below two values.
pub(crate) fn sample_variance(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let m = mean(values)?;
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    Some(ss / (values.len() - 1) as f64)
}

/// Mean, sample standard deviation and count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Descriptives {
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub n: usize,
}

pub fn describe(values: &[f64]) -> Descriptives {
    Descriptives { mean: mean(values), sd: sample_variance(values).map(f64::sqrt), n: values.len() }
}
