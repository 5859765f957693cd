//! Classification metrics.

use super::BenchError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// Accuracy and macro-F1 averaged over the classes that occur in either
/// `predictions` or `labels`. A class with no true positives contributes 0.
pub fn metrics(predictions: &[usize], labels: &[usize]) -> Result<Scores, BenchError> {
    let n_classes = predictions.iter().chain(labels).max().map_or(0, |m| m + 1);
    let mut seen = vec![false; n_classes];
    for &c in predictions.iter().chain(labels) {
        seen[c] = true;
    }
    scores(predictions, labels, n_classes, |c| seen[c])
}

/// Macro-F1 over all of `0..n_classes`; classes absent from both sides
/// contribute 0.
pub fn metrics_with_classes(
    predictions: &[usize],
    labels: &[usize],
    n_classes: usize,
) -> Result<Scores, BenchError> {
    scores(predictions, labels, n_classes, |_| true)
}

fn scores(
    predictions: &[usize],
    labels: &[usize],
    n_classes: usize,
    counted: impl Fn(usize) -> bool,
) -> Result<Scores, BenchError> {
    if predictions.len() != labels.len() {
        return Err(BenchError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(BenchError::EmptyInput);
    }
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    let mut correct = 0;
    for (&p, &l) in predictions.iter().zip(labels) {
        if p >= n_classes || l >= n_classes {
            return Err(BenchError::ClassOutOfRange(p.max(l)));
        }
        if p == l {
            correct += 1;
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[l] += 1;
        }
    }
    let classes: Vec<usize> = (0..n_classes).filter(|&c| counted(c)).collect();
    let f1_sum: f64 = classes
        .iter()
        .map(|&c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if tp[c] == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    Ok(Scores {
        accuracy: correct as f64 / labels.len() as f64,
        macro_f1: f1_sum / classes.len() as f64,
    })
}
