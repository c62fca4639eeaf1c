use std::fmt::Write as _;

use serde::Serialize;

use crate::audio::{DatasetManifest, Label};
use crate::error::{Error, Result};
use crate::inference::{predict_batch, Classifier};

fn check_lengths(predictions: &[Label], labels: &[Label]) -> Result<()> {
    if predictions.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::InvalidInput("no samples to score".into()));
    }
    Ok(())
}

/// `100 · (1 − accuracy)`; Other matches only Other.
pub fn error_rate(predictions: &[Label], labels: &[Label]) -> Result<f64> {
    check_lengths(predictions, labels)?;
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(100.0 * (1.0 - correct as f64 / labels.len() as f64))
}

/// Rows are true classes, columns predictions; targets first, Other last.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
    /// Row-normalized counts; rows without support are all zero.
    pub normalized: Vec<Vec<f64>>,
    pub zero_support: Vec<bool>,
}

impl ConfusionMatrix {
    pub fn size(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    /// Error rate recovered from the diagonal of the raw counts.
    pub fn error_rate(&self) -> f64 {
        let diag: usize = (0..self.size()).map(|i| self.counts[i][i]).sum();
        100.0 * (1.0 - diag as f64 / self.total().max(1) as f64)
    }

    pub fn to_csv(&self, names: &[String]) -> String {
        let mut s = format!("true\\pred,{}\n", names.join(","));
        for (name, row) in names.iter().zip(&self.normalized) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(s, "{name},{}", cells.join(","));
        }
        s
    }
}

pub fn confusion_matrix(predictions: &[Label], labels: &[Label], num_languages: usize) -> Result<ConfusionMatrix> {
    check_lengths(predictions, labels)?;
    let k = num_languages + 1;
    let mut counts = vec![vec![0usize; k]; k];
    for (p, l) in predictions.iter().zip(labels) {
        let (r, c) = (l.class_index(num_languages), p.class_index(num_languages));
        if r >= k || c >= k {
            return Err(Error::InvalidInput(format!(
                "label {l} or prediction {p} outside {num_languages} languages"
            )));
        }
        counts[r][c] += 1;
    }
    let zero_support: Vec<bool> = counts.iter().map(|r| r.iter().sum::<usize>() == 0).collect();
    let normalized = counts
        .iter()
        .map(|r| {
            let n: usize = r.iter().sum();
            r.iter().map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 }).collect()
        })
        .collect();
    Ok(ConfusionMatrix {
        counts,
        normalized,
        zero_support,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub err: f64,
    /// Accuracy per true class (targets, then Other); `None` without support.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub confusion: ConfusionMatrix,
    pub n_samples: usize,
    pub class_names: Vec<String>,
}

impl EvalReport {
    pub fn from_predictions(predictions: &[Label], labels: &[Label], languages: &[String]) -> Result<Self> {
        let confusion = confusion_matrix(predictions, labels, languages.len())?;
        let per_class_accuracy = (0..confusion.size())
            .map(|i| (!confusion.zero_support[i]).then(|| confusion.normalized[i][i]))
            .collect();
        let mut class_names = languages.to_vec();
        class_names.push(Label::Other.name(languages));
        Ok(Self {
            err: error_rate(predictions, labels)?,
            per_class_accuracy,
            confusion,
            n_samples: labels.len(),
            class_names,
        })
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("samples  {}\nerr      {:.2}\n\n{:<12} {:>8}\n", self.n_samples, self.err, "class", "acc");
        for (name, acc) in self.class_names.iter().zip(&self.per_class_accuracy) {
            match acc {
                Some(a) => writeln!(s, "{name:<12} {:>8.3}", a),
                None => writeln!(s, "{name:<12} {:>8}", "-"),
            }
            .expect("writing to a string");
        }
        s
    }

    pub fn confusion_csv(&self) -> String {
        self.confusion.to_csv(&self.class_names)
    }
}

/// Predicts every manifest entry and scores the outcomes. Any clip failure is fatal.
pub fn evaluate<C: Classifier + ?Sized>(
    model: &C,
    manifest: &DatasetManifest,
    languages: &[String],
    threshold: f32,
    threads: usize,
) -> Result<EvalReport> {
    let results = predict_batch(model, manifest, threshold, threads)?;
    let mut predictions = Vec::with_capacity(results.len());
    for (_, r) in results {
        predictions.push(r?.outcome);
    }
    let labels: Vec<Label> = manifest.entries.iter().map(|e| e.label).collect();
    EvalReport::from_predictions(&predictions, &labels, languages)
}
