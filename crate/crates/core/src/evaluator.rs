//! Test-time prediction, metrics and embedding export.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{AspectInstance, Polarity, TokenizedInstance, NUM_CLASSES};
use crate::model::PsiModel;
use crate::nn::ModelError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluation split is empty")]
    EmptySplit,
    #[error("{0} records but {1} encoded instances")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("write failed: {0}")]
    Io(#[from] std::io::Error),
}

/// Index of the largest score; the lowest index wins ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Recall of each class.
    pub per_class_accuracy: BTreeMap<Polarity, f64>,
    pub per_class_f1: BTreeMap<Polarity, f64>,
    /// `confusion[gold][predicted]`.
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
    pub support: usize,
}

impl Metrics {
    /// Classes absent from both gold and predictions score 0 and still count
    /// towards the macro average.
    pub fn from_predictions(gold: &[usize], predicted: &[usize]) -> Result<Self, EvalError> {
        if gold.is_empty() {
            return Err(EvalError::EmptySplit);
        }
        if gold.len() != predicted.len() {
            return Err(EvalError::LengthMismatch(gold.len(), predicted.len()));
        }
        let mut confusion = [[0usize; NUM_CLASSES]; NUM_CLASSES];
        for (&g, &p) in gold.iter().zip(predicted) {
            confusion[g][p] += 1;
        }
        let correct: usize = (0..NUM_CLASSES).map(|c| confusion[c][c]).sum();
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let mut per_class_accuracy = BTreeMap::new();
        let mut per_class_f1 = BTreeMap::new();
        for p in Polarity::ALL {
            let c = p.index();
            let tp = confusion[c][c];
            let support: usize = confusion[c].iter().sum();
            let predicted_c: usize = (0..NUM_CLASSES).map(|g| confusion[g][c]).sum();
            per_class_accuracy.insert(p, ratio(tp, support));
            per_class_f1.insert(p, ratio(2 * tp, support + predicted_c));
        }
        let macro_f1 = per_class_f1.values().sum::<f64>() / NUM_CLASSES as f64;
        Ok(Self {
            accuracy: ratio(correct, gold.len()),
            macro_f1,
            per_class_accuracy,
            per_class_f1,
            confusion,
            support: gold.len(),
        })
    }

    pub fn class_accuracy(&self, p: Polarity) -> f64 {
        self.per_class_accuracy[&p]
    }
}

pub fn predict(model: &PsiModel, instance: &TokenizedInstance) -> Result<usize, EvalError> {
    Ok(argmax(&model.probabilities(instance)?))
}

pub fn predict_all(model: &PsiModel, instances: &[TokenizedInstance]) -> Result<Vec<usize>, EvalError> {
    instances.iter().map(|i| predict(model, i)).collect()
}

pub fn evaluate(model: &PsiModel, instances: &[TokenizedInstance]) -> Result<Metrics, EvalError> {
    if instances.is_empty() {
        return Err(EvalError::EmptySplit);
    }
    let predicted = predict_all(model, instances)?;
    let gold: Vec<usize> = instances.iter().map(|i| i.label).collect();
    Metrics::from_predictions(&gold, &predicted)
}

fn clean(field: &str) -> String {
    field.replace(['\t', '\n', '\r'], " ")
}

/// Writes one TSV row per instance: identifiers, gold label, then the `D`
/// coordinates of `v` with 9 significant digits.
pub fn export_embeddings(
    model: &PsiModel,
    records: &[AspectInstance],
    encoded: &[TokenizedInstance],
    out: &mut impl Write,
) -> Result<usize, EvalError> {
    if records.len() != encoded.len() {
        return Err(EvalError::LengthMismatch(records.len(), encoded.len()));
    }
    let dim = model.encoder.output_dim();
    let mut header = vec!["sentence_id".to_string(), "aspect".into(), "polarity".into(), "split".into()];
    header.extend((0..dim).map(|k| format!("v{k}")));
    writeln!(out, "{}", header.join("\t"))?;
    for (record, inst) in records.iter().zip(encoded) {
        let v = model.vector(inst)?;
        let mut row = vec![
            clean(&record.sentence_id),
            clean(&record.aspect),
            record.polarity.to_string(),
            record.split.to_string(),
        ];
        row.extend(v.iter().map(|x| format!("{x:.8e}")));
        writeln!(out, "{}", row.join("\t"))?;
    }
    Ok(records.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5]), 1);
        assert_eq!(argmax(&[1.0 / 3.0; 3]), 0);
        assert_eq!(argmax(&[0.1, 0.2, 0.7]), 2);
    }

    #[test]
    fn hand_computed_metrics() {
        // gold:      P P P N N G G G G G   (P=positive, N=neutral, G=negative)
        // predicted: P P G N P G G G G N
        let gold = [0, 0, 0, 1, 1, 2, 2, 2, 2, 2];
        let pred = [0, 0, 2, 1, 0, 2, 2, 2, 2, 1];
        let m = Metrics::from_predictions(&gold, &pred).unwrap();
        assert_eq!(m.accuracy, 0.7);
        assert_eq!(m.confusion, [[2, 0, 1], [1, 1, 0], [0, 1, 4]]);
        assert!((m.class_accuracy(Polarity::Positive) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.class_accuracy(Polarity::Neutral), 0.5);
        assert_eq!(m.class_accuracy(Polarity::Negative), 0.8);
        // F1: positive 4/6, neutral 2/4, negative 8/10.
        let expected = (4.0 / 6.0 + 0.5 + 0.8) / 3.0;
        assert!((m.macro_f1 - expected).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictions() {
        let gold = [0, 1, 2, 2];
        let m = Metrics::from_predictions(&gold, &gold).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.macro_f1, 1.0);
    }

    #[test]
    fn absent_class_scores_zero() {
        let m = Metrics::from_predictions(&[0, 2], &[0, 2]).unwrap();
        assert_eq!(m.class_accuracy(Polarity::Neutral), 0.0);
        assert!((m.macro_f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_split_is_an_error() {
        assert!(matches!(Metrics::from_predictions(&[], &[]), Err(EvalError::EmptySplit)));
    }

    #[test]
    fn metrics_serialise_with_polarity_names() {
        let m = Metrics::from_predictions(&[0, 1, 2], &[0, 1, 1]).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"neutral\":1.0"));
        let back: Metrics = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }
}
