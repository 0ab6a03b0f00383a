use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Top-1 accuracy and macro-averaged F1, both in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// Scores `predictions` against `labels` over `num_classes` classes.
///
/// Per-class F1 is `2PR/(P+R)`, with P or R taken as 0 when its denominator
/// is empty and F1 = 0 when both are 0. Classes that never occur in `labels`
/// are left out of the macro average.
pub fn metrics(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<Metrics> {
    if predictions.is_empty() {
        return Err(Error::Contract("metrics of an empty prediction set".into()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = predictions.iter().chain(labels).find(|&&c| c >= num_classes) {
        return Err(Error::Contract(format!("class {bad} outside 0..{num_classes}")));
    }
    let mut tp = vec![0usize; num_classes];
    let mut predicted = vec![0usize; num_classes];
    let mut actual = vec![0usize; num_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        predicted[p] += 1;
        actual[y] += 1;
        if p == y {
            tp[p] += 1;
        }
    }
    let correct: usize = tp.iter().sum();
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let mut f1_sum = 0.0;
    let mut present = 0usize;
    for c in 0..num_classes {
        if actual[c] == 0 {
            continue;
        }
        present += 1;
        let precision = ratio(tp[c], predicted[c]);
        let recall = ratio(tp[c], actual[c]);
        if precision + recall > 0.0 {
            f1_sum += 2.0 * precision * recall / (precision + recall);
        }
    }
    Ok(Metrics {
        accuracy: correct as f64 / labels.len() as f64,
        macro_f1: f1_sum / present as f64,
    })
}
