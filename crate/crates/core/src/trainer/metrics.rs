//! Classification metrics: accuracy, per-class precision/recall/F1, and the
//! support-weighted F1 used as the headline number.

use serde::Serialize;

use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::models::ModelBundle;
use crate::tensor::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of true instances of this class.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[true_class][predicted_class]`
    pub confusion: Vec<Vec<usize>>,
}

/// Metrics from label index vectors.
///
/// Zero-division conventions: a class never predicted has precision 0, a
/// class with no true instances has recall 0 and weight 0 in the weighted
/// mean (so predicted-but-absent classes cannot move the headline number).
pub fn eval_from_predictions(
    truth: &[usize],
    predictions: &[usize],
    class_count: usize,
) -> Result<EvalReport> {
    if truth.is_empty() {
        return Err(Error::Validation("evaluate: empty dataset".into()));
    }
    if truth.len() != predictions.len() {
        return Err(Error::Validation(format!(
            "{} truths vs {} predictions",
            truth.len(),
            predictions.len()
        )));
    }
    let mut confusion = vec![vec![0usize; class_count]; class_count];
    for (&t, &p) in truth.iter().zip(predictions) {
        if t >= class_count || p >= class_count {
            return Err(Error::Validation(format!(
                "label {} out of range for {class_count} classes",
                t.max(p)
            )));
        }
        confusion[t][p] += 1;
    }

    let total = truth.len();
    let correct: usize = (0..class_count).map(|c| confusion[c][c]).sum();
    let accuracy = correct as f64 / total as f64;

    let mut per_class = Vec::with_capacity(class_count);
    let mut weighted = 0.0f64;
    for c in 0..class_count {
        let tp = confusion[c][c];
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = (0..class_count).map(|t| confusion[t][c]).sum();
        let precision = if predicted > 0 {
            tp as f64 / predicted as f64
        } else {
            0.0
        };
        let recall = if support > 0 {
            tp as f64 / support as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        weighted += support as f64 * f1;
        per_class.push(ClassMetrics {
            precision,
            recall,
            f1,
            support,
        });
    }

    Ok(EvalReport {
        accuracy,
        weighted_f1: weighted / total as f64,
        per_class,
        confusion,
    })
}

/// Evaluate a model on a labeled dataset using argmax predictions.
pub fn evaluate<T: Scalar>(
    model: &ModelBundle<T>,
    dataset: &DomainDataset<T>,
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::Validation("evaluate: empty dataset".into()));
    }
    let truth = dataset.label_indices()?;
    let predictions = model.predict_labels(&dataset.samples)?;
    eval_from_predictions(&truth, &predictions, dataset.class_count)
}
