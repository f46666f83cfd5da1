//! Binary classification metrics over specimen-level predictions.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("{pred} predictions but {truth} labels")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("no predictions")]
    EmptyInput,
}

/// Confusion counts and the rates derived from them. A rate whose
/// denominator is zero is reported as 0 and listed in `undefined`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub balanced_accuracy: f64,
    pub undefined: Vec<String>,
}

impl Metrics {
    pub fn from_counts(tp: u64, tn: u64, fp: u64, fn_: u64) -> Metrics {
        let mut undefined = Vec::new();
        let mut rate = |name: &str, num: u64, den: u64| {
            if den == 0 {
                undefined.push(name.to_string());
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let sensitivity = rate("sensitivity", tp, tp + fn_);
        let specificity = rate("specificity", tn, tn + fp);
        let precision = rate("precision", tp, tp + fp);
        Metrics {
            tp,
            tn,
            fp,
            fn_,
            sensitivity,
            specificity,
            precision,
            balanced_accuracy: (sensitivity + specificity) / 2.0,
            undefined,
        }
    }
}

/// Labels equal to `positive_index` count as positive, everything else as negative.
pub fn compute_metrics(pred: &[usize], truth: &[usize], positive_index: usize) -> Result<Metrics, MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p == positive_index, t == positive_index) {
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
    use proptest::prelude::*;

    fn labels(tp: usize, fn_: usize, tn: usize, fp: usize) -> (Vec<usize>, Vec<usize>) {
        let mut pred = Vec::new();
        let mut truth = Vec::new();
        for (n, p, t) in [(tp, 1, 1), (fn_, 0, 1), (tn, 0, 0), (fp, 1, 0)] {
            pred.extend(std::iter::repeat_n(p, n));
            truth.extend(std::iter::repeat_n(t, n));
        }
        (pred, truth)
    }

    #[test]
    fn perfect() {
        let (p, t) = labels(5, 0, 7, 0);
        let m = compute_metrics(&p, &t, 1).unwrap();
        assert_eq!(
            (m.sensitivity, m.specificity, m.precision, m.balanced_accuracy),
            (1.0, 1.0, 1.0, 1.0)
        );
        assert!(m.undefined.is_empty());
    }

    #[test]
    fn hand_counted() {
        let (p, t) = labels(2, 2, 9, 1);
        let m = compute_metrics(&p, &t, 1).unwrap();
        assert_eq!((m.tp, m.fn_, m.tn, m.fp), (2, 2, 9, 1));
        assert_eq!(m.sensitivity, 0.5);
        assert_eq!(m.specificity, 0.9);
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.balanced_accuracy - 0.7).abs() < 1e-15);
    }

    #[test]
    fn zero_denominator_is_flagged() {
        let m = compute_metrics(&[0, 0], &[0, 0], 1).unwrap();
        assert_eq!(m.sensitivity, 0.0);
        assert_eq!(m.undefined, vec!["sensitivity", "precision"]);
    }

    #[test]
    fn errors() {
        assert_eq!(
            compute_metrics(&[1], &[1, 0], 1),
            Err(MetricsError::LengthMismatch { pred: 1, truth: 2 })
        );
        assert_eq!(compute_metrics(&[], &[], 1), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn serializes_fn_field() {
        let v = serde_json::to_value(Metrics::from_counts(1, 2, 3, 4)).unwrap();
        assert_eq!(v["fn"], 4);
    }

    proptest! {
        #[test]
        fn swapping_positive_class(pairs in prop::collection::vec((0usize..2, 0usize..2), 1..200)) {
            let pred: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let truth: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let a = compute_metrics(&pred, &truth, 1).unwrap();
            let b = compute_metrics(&pred, &truth, 0).unwrap();
            prop_assert_eq!(a.balanced_accuracy, (a.sensitivity + a.specificity) / 2.0);
            prop_assert_eq!(a.sensitivity, b.specificity);
            prop_assert_eq!(a.specificity, b.sensitivity);
            prop_assert_eq!(a.balanced_accuracy, b.balanced_accuracy);
        }
    }
}
