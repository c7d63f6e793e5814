use serde::{Deserialize, Serialize};

use super::SociometricsError;

/// Ranks indexed by proposal position: `ranks()[p]` is the rank (1 = best)
/// given to proposal `p + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct RankVector(Vec<u32>);

impl RankVector {
    pub fn new(ranks: Vec<u32>) -> Result<Self, SociometricsError> {
        let len = ranks.len();
        let mut seen = vec![false; len];
        for &r in &ranks {
            let idx = (r as usize).wrapping_sub(1);
            if idx >= len || seen[idx] {
                return Err(SociometricsError::InvalidPermutation { ranks, len });
            }
            seen[idx] = true;
        }
        if len == 0 {
            return Err(SociometricsError::InvalidPermutation { ranks, len });
        }
        Ok(Self(ranks))
    }

    /// The ranking 1, 2, ..., n.
    pub fn identity(n: usize) -> Self {
        Self((1..=n as u32).collect())
    }

    pub fn ranks(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<u32>> for RankVector {
    type Error = SociometricsError;

    fn try_from(value: Vec<u32>) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<RankVector> for Vec<u32> {
    fn from(value: RankVector) -> Self {
        value.0
    }
}

/// Spearman footrule: the L1 distance between two rank vectors.
pub fn footrule_distance(a: &RankVector, b: &RankVector) -> Result<u32, SociometricsError> {
    if a.len() != b.len() {
        return Err(SociometricsError::ProposalSetMismatch { left: a.len(), right: b.len() });
    }
    Ok(a.0.iter().zip(&b.0).map(|(x, y)| x.abs_diff(*y)).sum())
}

/// Mean footrule distance over every unordered pair of members.
pub fn team_disagreement<'a, I>(rankings: I) -> Result<f64, SociometricsError>
where
    I: IntoIterator<Item = &'a RankVector>,
{
    let rankings: Vec<&RankVector> = rankings.into_iter().collect();
    if rankings.len() < 2 {
        return Err(SociometricsError::TooFewRankings(rankings.len()));
    }
    let mut total = 0u64;
    let mut pairs = 0u64;
    for (i, a) in rankings.iter().enumerate() {
        for b in &rankings[i + 1..] {
            total += footrule_distance(a, b)? as u64;
            pairs += 1;
        }
    }
    Ok(total as f64 / pairs as f64)
}
