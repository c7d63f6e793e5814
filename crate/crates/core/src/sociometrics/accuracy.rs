use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EmotionScore, SociometricsError};

/// One member's private guesses about how each teammate feels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuessSet<P: Ord> {
    pub guesser: P,
    pub guesses: BTreeMap<P, EmotionScore>,
}

impl<P: Ord> GuessSet<P> {
    pub fn new(guesser: P, guesses: BTreeMap<P, EmotionScore>) -> Self {
        Self { guesser, guesses }
    }
}

/// Perception accuracy of one member.
///
/// The summed absolute error is kept next to the float so that the displayed
/// percentage can be rounded in integer arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyResult {
    pub accuracy: f64,
    pub evaluated_targets: u32,
    pub absolute_error_sum: u32,
}

impl AccuracyResult {
    fn from_errors(absolute_error_sum: u32, evaluated_targets: u32) -> Self {
        // max(0, 1 - sum / (5 n)) == max(0, 5 n - sum) / (5 n), one correctly rounded division
        let denominator = 5 * evaluated_targets;
        let numerator = denominator.saturating_sub(absolute_error_sum);
        Self { accuracy: numerator as f64 / denominator as f64, evaluated_targets, absolute_error_sum }
    }

    /// Whole-number percentage, rounding halves up.
    pub fn percent(&self) -> u32 {
        let denominator = 5 * self.evaluated_targets;
        let numerator = denominator.saturating_sub(self.absolute_error_sum);
        (200 * numerator + denominator) / (2 * denominator)
    }
}

/// Accuracy of `guesses` against teammates' self-reports.
///
/// Targets without a self-report (and the guesser, should it appear) are left
/// out of both the error sum and the target count. Returns `None` when no
/// target can be evaluated.
pub fn perception_accuracy<P: Ord>(
    guesses: &GuessSet<P>,
    actuals: &BTreeMap<P, EmotionScore>,
) -> Option<AccuracyResult> {
    let mut error_sum = 0u32;
    let mut targets = 0u32;
    for (target, guess) in &guesses.guesses {
        if *target == guesses.guesser {
            continue;
        }
        if let Some(actual) = actuals.get(target) {
            error_sum += (guess.value() as i32 - actual.value() as i32).unsigned_abs();
            targets += 1;
        }
    }
    (targets > 0).then(|| AccuracyResult::from_errors(error_sum, targets))
}

/// Mean of the self-reported scores.
pub fn group_climate(self_reports: &[EmotionScore]) -> Result<f64, SociometricsError> {
    if self_reports.is_empty() {
        return Err(SociometricsError::NoReports);
    }
    let total: i64 = self_reports.iter().map(|s| s.value() as i64).sum();
    Ok(total as f64 / self_reports.len() as f64)
}
