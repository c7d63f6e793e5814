use serde::{Deserialize, Serialize};

use super::SociometricsError;

/// Whole-currency amounts per proposal that exactly exhaust a budget.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawAllocation")]
pub struct AllocationVector {
    amounts: Vec<u64>,
    budget: u64,
}

#[derive(Deserialize)]
struct RawAllocation {
    amounts: Vec<u64>,
    budget: u64,
}

impl TryFrom<RawAllocation> for AllocationVector {
    type Error = SociometricsError;

    fn try_from(raw: RawAllocation) -> Result<Self, Self::Error> {
        Self::new(raw.amounts, raw.budget)
    }
}

impl AllocationVector {
    pub fn new(amounts: Vec<u64>, budget: u64) -> Result<Self, SociometricsError> {
        if budget == 0 {
            return Err(SociometricsError::ZeroBudget);
        }
        let actual = amounts.iter().try_fold(0u64, |acc, a| acc.checked_add(*a)).unwrap_or(u64::MAX);
        if actual != budget {
            return Err(SociometricsError::AllocationSum { actual, budget });
        }
        Ok(Self { amounts, budget })
    }

    pub fn amounts(&self) -> &[u64] {
        &self.amounts
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    /// Share of the budget per proposal.
    pub fn proportions(&self) -> Vec<f64> {
        self.amounts.iter().map(|&a| a as f64 / self.budget as f64).collect()
    }
}

/// Mean over members of the root-mean-square difference between the member's
/// and the team's allocation, both expressed as budget proportions.
pub fn compromise(
    member_allocations: &[AllocationVector],
    team_allocation: &AllocationVector,
) -> Result<f64, SociometricsError> {
    if member_allocations.is_empty() {
        return Err(SociometricsError::NoMembers);
    }
    let team = team_allocation.proportions();
    let mut total = 0.0;
    for member in member_allocations {
        if member.budget != team_allocation.budget || member.amounts.len() != team.len() {
            return Err(SociometricsError::BudgetMismatch);
        }
        let squared: f64 = member.proportions().iter().zip(&team).map(|(m, t)| (m - t) * (m - t)).sum();
        total += (squared / team.len() as f64).sqrt();
    }
    Ok(total / member_allocations.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn alloc(amounts: &[u64]) -> AllocationVector {
        AllocationVector::new(amounts.to_vec(), 500_000).unwrap()
    }

    #[test]
    fn allocation_boundaries() {
        assert!(AllocationVector::new(vec![500_000, 0, 0, 0, 0], 500_000).is_ok());
        assert!(AllocationVector::new(vec![100_000; 5], 500_000).is_ok());
        let err = AllocationVector::new(vec![100_000, 100_000, 100_000, 100_000, 99_999], 500_000).unwrap_err();
        assert_eq!(err, SociometricsError::AllocationSum { actual: 499_999, budget: 500_000 });
        assert!(err.to_string().contains("deficit 1"));
    }

    #[test]
    fn identical_allocations_have_zero_compromise() {
        let team = alloc(&[200_000, 100_000, 100_000, 50_000, 50_000]);
        assert_eq!(compromise(&[team.clone(), team.clone()], &team).unwrap(), 0.0);
    }

    #[test]
    fn hand_example() {
        let team = alloc(&[100_000; 5]);
        let odd = alloc(&[200_000, 50_000, 100_000, 100_000, 50_000]);
        let members = [odd, team.clone(), team.clone(), team.clone()];
        let value = compromise(&members, &team).unwrap();
        let single = (0.06f64 / 5.0).sqrt();
        assert!((single - 0.10954).abs() < 1e-5);
        assert!((value - single / 4.0).abs() < 1e-15);
        assert!((value - 0.0274).abs() < 1e-4);
    }

    #[test]
    fn budget_mismatch_is_an_error() {
        let team = alloc(&[100_000; 5]);
        let other = AllocationVector::new(vec![1, 1, 1, 1, 1], 5).unwrap();
        assert_eq!(compromise(&[other], &team), Err(SociometricsError::BudgetMismatch));
        assert_eq!(compromise(&[], &team), Err(SociometricsError::NoMembers));
    }
}
