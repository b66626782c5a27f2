//! Classification metrics: accuracy, per-class precision/recall/F1 and
//! their unweighted macro means over a confusion matrix.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u32,
    pub predicted: u32,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[truth][predicted]`; row sums equal per-class support.
    pub confusion: Vec<Vec<u32>>,
}

fn ratio(num: u32, den: u32) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Compare predictions against ground truth over `n_classes` dense ids.
/// Classes absent from both truth and prediction are excluded from the
/// macro averages, so padding the class space never changes the scores.
pub fn compute_metrics(
    predictions: &[usize],
    truths: &[usize],
    n_classes: usize,
) -> Result<Metrics> {
    if predictions.len() != truths.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truths.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut confusion = vec![vec![0u32; n_classes]; n_classes];
    for (&p, &t) in predictions.iter().zip(truths) {
        if p >= n_classes || t >= n_classes {
            return Err(Error::shape(format!(
                "class id out of range: predicted {p}, truth {t}, {n_classes} classes"
            )));
        }
        confusion[t][p] += 1;
    }
    let mut per_class = Vec::with_capacity(n_classes);
    let mut correct = 0u32;
    for c in 0..n_classes {
        let tp = confusion[c][c];
        correct += tp;
        let support: u32 = confusion[c].iter().sum();
        let predicted: u32 = confusion.iter().map(|row| row[c]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push(ClassMetrics {
            precision,
            recall,
            f1,
            support,
            predicted,
        });
    }
    let seen: Vec<&ClassMetrics> = per_class
        .iter()
        .filter(|m| m.support > 0 || m.predicted > 0)
        .collect();
    let macro_of = |f: fn(&ClassMetrics) -> f64| -> f64 {
        if seen.is_empty() {
            0.0
        } else {
            seen.iter().map(|m| f(m)).sum::<f64>() / seen.len() as f64
        }
    };
    Ok(Metrics {
        accuracy: correct as f64 / predictions.len() as f64,
        macro_precision: macro_of(|m| m.precision),
        macro_recall: macro_of(|m| m.recall),
        macro_f1: macro_of(|m| m.f1),
        per_class,
        confusion,
    })
}
