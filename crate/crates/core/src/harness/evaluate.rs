use std::borrow::Cow;
use std::path::{Path, PathBuf};

use candle_core::DType;
use serde::{Deserialize, Serialize};

use super::augment::fit_to_input;
use super::checkpoint::load_checkpoint;
use super::train::argmax_rows;
use crate::data::{AttentionMap, Dataset};
use crate::losses::{total_loss, LossReport};
use crate::metrics::{accuracy, balanced_accuracy, per_class_recall, MeanStd};
use crate::model::{images_to_tensor, Msabn};
use crate::{Error, Result};

/// Scores and per-sample outputs of one pass over a dataset.
#[derive(Clone, Debug)]
pub struct EvalResult {
    pub ids: Vec<String>,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
    /// Attention maps at the attention-head resolution, when the model has
    /// the branch and they were requested.
    pub attention: Option<Vec<AttentionMap>>,
    pub loss: LossReport,
    pub acc: f64,
    pub bal_acc: f64,
    pub per_class_recall: Vec<Option<f64>>,
}

fn check_classes(model: &Msabn, dataset: &Dataset) -> Result<()> {
    let (m, d) = (model.config().num_classes, dataset.num_classes());
    if m != d {
        return Err(Error::Config(format!(
            "checkpoint predicts {m} classes but the dataset has {d}"
        )));
    }
    Ok(())
}

/// Eval-mode pass without the puzzle term.
pub(crate) fn run_dataset(
    model: &Msabn,
    dataset: &Dataset,
    batch_size: usize,
    weights: Option<&[f64]>,
    keep_attention: bool,
) -> Result<EvalResult> {
    check_classes(model, dataset)?;
    let side = model.config().input_size;
    let k = model.config().num_classes;
    let (mut l_attn, mut l_cls) = (0.0, 0.0);
    let mut ids = Vec::with_capacity(dataset.len());
    let mut predictions = Vec::with_capacity(dataset.len());
    let mut labels = Vec::with_capacity(dataset.len());
    let mut maps = keep_attention.then(Vec::new);
    for batch in dataset.samples().chunks(batch_size.max(1)) {
        let images: Vec<_> = batch
            .iter()
            .map(|s| fit_to_input(Cow::Borrowed(&s.image), side))
            .collect();
        let refs: Vec<_> = images.iter().map(|c| c.as_ref()).collect();
        let y: Vec<usize> = batch.iter().map(|s| s.label).collect();
        let out = model.forward(&images_to_tensor(&refs, model.dtype())?, false)?;
        let (_, r) = total_loss(out.branch.as_ref().map(|b| &b.attn_logits), &out.logits, &y, weights, None)?;
        l_attn += r.l_attn * batch.len() as f64;
        l_cls += r.l_cls * batch.len() as f64;
        predictions.extend(argmax_rows(&out.logits)?);
        if let (Some(maps), Some(branch)) = (maps.as_mut(), out.branch.as_ref()) {
            let batch_ids: Vec<&str> = batch.iter().map(|s| s.id.as_str()).collect();
            maps.extend(branch.attention_maps(&batch_ids)?);
        }
        ids.extend(batch.iter().map(|s| s.id.clone()));
        labels.extend(y);
    }
    let n = dataset.len() as f64;
    let attention = maps.filter(|m| !m.is_empty());
    Ok(EvalResult {
        acc: accuracy(&predictions, &labels)?,
        bal_acc: balanced_accuracy(&predictions, &labels, k)?,
        per_class_recall: per_class_recall(&predictions, &labels, k)?,
        loss: LossReport::new(l_attn / n, l_cls / n, None),
        ids,
        predictions,
        labels,
        attention,
    })
}

pub fn evaluate_dataset(model: &Msabn, dataset: &Dataset, batch_size: usize, weights: Option<&[f64]>) -> Result<EvalResult> {
    run_dataset(model, dataset, batch_size, weights, false)
}

/// Serializable summary of one checkpoint on one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint: PathBuf,
    pub acc: f64,
    pub bal_acc: f64,
    pub per_class_recall: Vec<Option<f64>>,
    pub loss: LossReport,
}

/// Several checkpoints (e.g. seeds) on the same dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub runs: Vec<EvalReport>,
    pub acc: MeanStd,
    pub bal_acc: MeanStd,
}

pub fn evaluate(checkpoint: &Path, dataset: &Dataset, batch_size: usize) -> Result<EvalReport> {
    let (model, _store, _) = load_checkpoint(checkpoint, DType::F32)?;
    let r = evaluate_dataset(&model, dataset, batch_size, None)?;
    Ok(EvalReport {
        checkpoint: checkpoint.to_path_buf(),
        acc: r.acc,
        bal_acc: r.bal_acc,
        per_class_recall: r.per_class_recall,
        loss: r.loss,
    })
}

pub fn evaluate_checkpoints(checkpoints: &[PathBuf], dataset: &Dataset, batch_size: usize) -> Result<AggregateReport> {
    let runs = checkpoints
        .iter()
        .map(|c| evaluate(c, dataset, batch_size))
        .collect::<Result<Vec<_>>>()?;
    let accs: Vec<f64> = runs.iter().map(|r| r.acc).collect();
    let bals: Vec<f64> = runs.iter().map(|r| r.bal_acc).collect();
    Ok(AggregateReport {
        acc: MeanStd::of(&accs).ok_or_else(|| Error::Config("no checkpoints given".into()))?,
        bal_acc: MeanStd::of(&bals).ok_or_else(|| Error::Config("no checkpoints given".into()))?,
        runs,
    })
}
