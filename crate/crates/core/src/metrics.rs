use serde::{Deserialize, Serialize};

use crate::losses::LossReport;
use crate::{Error, Result};

fn check_lengths(predictions: &[usize], labels: &[usize]) -> Result<()> {
    if predictions.is_empty() {
        return Err(Error::Config("cannot score an empty prediction set".into()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    Ok(())
}

/// Percentage of correct predictions.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(predictions, labels)?;
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(100.0 * correct as f64 / labels.len() as f64)
}

/// Recall per class; `None` for classes absent from `labels`.
pub fn per_class_recall(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<Vec<Option<f64>>> {
    check_lengths(predictions, labels)?;
    let mut hits = vec![0usize; num_classes];
    let mut totals = vec![0usize; num_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if l >= num_classes {
            return Err(Error::Config(format!("label {l} out of range for {num_classes} classes")));
        }
        totals[l] += 1;
        if p == l {
            hits[l] += 1;
        }
    }
    Ok(hits
        .iter()
        .zip(&totals)
        .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
        .collect())
}

/// Mean per-class recall in percent over the classes present in `labels`.
pub fn balanced_accuracy(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    let recalls: Vec<f64> = per_class_recall(predictions, labels, num_classes)?
        .into_iter()
        .flatten()
        .collect();
    if recalls.is_empty() {
        return Err(Error::Config("no class is present in the labels".into()));
    }
    Ok(100.0 * recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// Mean and sample standard deviation across repeated runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Absent for a single run.
    pub std: Option<f64>,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = (n > 1).then(|| {
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        });
        Some(Self { mean, std })
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.std {
            Some(s) => write!(f, "{:.2}±{:.3}", self.mean, s),
            None => write!(f, "{:.2}", self.mean),
        }
    }
}

/// One line of the per-epoch metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: String,
    pub acc: f64,
    pub bal_acc: f64,
    pub l_attn: f64,
    pub l_cls: f64,
    pub l_re: Option<f64>,
    pub total: f64,
}

impl EpochMetrics {
    pub fn new(epoch: usize, split: &str, acc: f64, bal_acc: f64, loss: &LossReport) -> Self {
        Self {
            epoch,
            split: split.into(),
            acc,
            bal_acc,
            l_attn: loss.l_attn,
            l_cls: loss.l_cls,
            l_re: loss.l_re,
            total: loss.total,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 100.0);
        assert_eq!(accuracy(&[1, 0], &[1, 1]).unwrap(), 50.0);
        // 7 predictions, matches at positions 0, 2, 3, 6
        let preds = [2, 0, 1, 1, 0, 2, 2];
        let labels = [2, 1, 1, 1, 2, 0, 2];
        assert!((accuracy(&preds, &labels).unwrap() - 400.0 / 7.0).abs() < 1e-12);
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn balanced_accuracy_examples() {
        // class 0 recall 1.0, class 1 recall 0.5
        assert_eq!(balanced_accuracy(&[0, 0, 1, 0], &[0, 0, 1, 1], 2).unwrap(), 75.0);
        // 9:1 skew, majority-only predictor
        let labels = [0, 0, 0, 0, 0, 0, 0, 0, 0, 1];
        assert_eq!(balanced_accuracy(&[0; 10], &labels, 2).unwrap(), 50.0);
        assert_eq!(accuracy(&[0; 10], &labels).unwrap(), 90.0);
        // absent class 2 excluded
        assert_eq!(balanced_accuracy(&[0, 1], &[0, 1], 3).unwrap(), 100.0);
    }

    #[test]
    fn balanced_equals_plain_on_balanced_labels() {
        let labels = [0, 0, 1, 1, 2, 2];
        let preds = [0, 1, 1, 1, 0, 2];
        let a = accuracy(&preds, &labels).unwrap();
        let b = balanced_accuracy(&preds, &labels, 3).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn mean_std_format() {
        let m = MeanStd::of(&[70.04, 70.06, 70.08]).unwrap();
        assert_eq!(m.to_string(), "70.06±0.020");
        assert_eq!(MeanStd::of(&[68.71]).unwrap().to_string(), "68.71");
        assert!(MeanStd::of(&[]).is_none());
    }
}
