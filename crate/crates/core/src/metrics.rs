//! Confusion-matrix metrics with anomalous as the positive class.

use crate::error::{Error, Result};
use crate::flow::Label;
use crate::math::sqrt;

/// Accuracy, MCC and sensitivity plus the raw confusion counts.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Metrics {
    pub accuracy: f64,
    pub mcc: f64,
    pub sensitivity: f64,
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[cfg_attr(feature = "serde", serde(rename = "fn"))]
    pub fn_: u64,
}

impl Metrics {
    /// Metrics from confusion counts. MCC is 0 when any marginal is 0 and
    /// sensitivity is 0 without positives.
    pub fn from_counts(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        let n = (tp + tn + fp + fn_) as f64;
        let accuracy = if n > 0.0 { (tp + tn) as f64 / n } else { 0.0 };
        let sensitivity = if tp + fn_ > 0 {
            tp as f64 / (tp + fn_) as f64
        } else {
            0.0
        };
        let factors = [tp + fp, tp + fn_, tn + fp, tn + fn_];
        let mcc = if factors.contains(&0) {
            0.0
        } else {
            let denom = sqrt(factors.iter().map(|&f| f as f64).product());
            (tp as f64 * tn as f64 - fp as f64 * fn_ as f64) / denom
        };
        Self {
            accuracy,
            mcc,
            sensitivity,
            tp,
            tn,
            fp,
            fn_,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Compares predictions against ground truth.
pub fn evaluate(predicted: &[Label], truth: &[Label]) -> Result<Metrics> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: truth.len(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for (p, t) in predicted.iter().zip(truth) {
        match (p.is_anomalous(), t.is_anomalous()) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(Metrics::from_counts(tp, tn, fp, fn_))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use Label::{Anomalous as A, Benign as B};

    #[test]
    fn perfect_predictions() {
        let truth = [A, B, B, A];
        let m = evaluate(&truth, &truth).unwrap();
        assert_eq!((m.accuracy, m.mcc, m.sensitivity), (1.0, 1.0, 1.0));
    }

    #[test]
    fn mcc_fixture() {
        // tp=1 fp=1 tn=2 fn=0
        let m = evaluate(&[A, A, B, B], &[A, B, B, B]).unwrap();
        assert_eq!((m.tp, m.fp, m.tn, m.fn_), (1, 1, 2, 0));
        assert!((m.mcc - 2.0 / libm::sqrt(12.0)).abs() < 1e-12);
        assert_eq!(m.sensitivity, 1.0);
        assert_eq!(m.accuracy, 0.75);
    }

    #[test]
    fn all_benign_predictions_have_zero_mcc() {
        let m = evaluate(&[B, B, B], &[A, B, B]).unwrap();
        assert_eq!(m.mcc, 0.0);
        assert_eq!(m.sensitivity, 0.0);
    }

    #[test]
    fn no_positives_gives_zero_sensitivity() {
        let m = evaluate(&[A, B], &[B, B]).unwrap();
        assert_eq!(m.sensitivity, 0.0);
        assert_eq!(m.total(), 2);
    }

    #[test]
    fn errors() {
        assert_eq!(evaluate(&[], &[]), Err(Error::Empty("predictions")));
        assert_eq!(evaluate(&vec![A], &[]), Err(Error::LengthMismatch { left: 1, right: 0 }));
    }
}
