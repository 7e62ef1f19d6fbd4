use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor, Var};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::augment::{apply_augmentations, fit_to_input, Augmentation};
use super::checkpoint::{save_checkpoint, CheckpointMeta};
use super::config::{OptimizerConfig, TrainConfig};
use super::evaluate::evaluate_dataset;
use super::{seeded_rng, RngStream, TrainItem};
use crate::data::{class_weights, Dataset};
use crate::losses::{total_loss, LossReport};
use crate::metrics::{accuracy, balanced_accuracy, EpochMetrics};
use crate::model::{images_to_tensor, Msabn};
use crate::nn::ParamStore;
use crate::puzzle::puzzle_forward;
use crate::{Error, Result};

/// Stochastic gradient descent with heavy-ball momentum and L2 weight decay
/// folded into the gradient.
#[derive(Debug)]
pub struct Sgd {
    vars: Vec<Var>,
    velocity: Vec<Option<Tensor>>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
}

impl Sgd {
    pub fn new(store: &ParamStore, cfg: &OptimizerConfig) -> Self {
        let vars: Vec<Var> = store.trainable().map(|p| p.var.clone()).collect();
        Self {
            velocity: vec![None; vars.len()],
            vars,
            lr: cfg.base_lr,
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        for (var, vel) in self.vars.iter().zip(self.velocity.iter_mut()) {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let p = var.as_tensor().detach();
            let mut g = g.detach();
            if self.weight_decay != 0.0 {
                g = (g + p.affine(self.weight_decay, 0.0)?)?;
            }
            let v = match vel.take() {
                Some(prev) if self.momentum != 0.0 => (prev.affine(self.momentum, 0.0)? + g)?,
                _ => g,
            };
            var.set(&(p - v.affine(self.lr, 0.0)?)?)?;
            *vel = Some(v);
        }
        Ok(())
    }
}

/// Step decay: the rate is divided by ten at each milestone epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    base_lr: f64,
    milestones: Vec<usize>,
}

impl LrSchedule {
    /// Milestones are fractions of `epochs`, floored to whole epochs. One
    /// that floors to epoch 0 never fires, so short runs keep the base rate.
    pub fn new(base_lr: f64, fractions: &[f64], epochs: usize) -> Self {
        let mut milestones: Vec<usize> = fractions
            .iter()
            .map(|f| (f * epochs as f64).floor() as usize)
            .filter(|&m| m > 0)
            .collect();
        milestones.sort_unstable();
        Self { base_lr, milestones }
    }

    pub fn milestones(&self) -> &[usize] {
        &self.milestones
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.base_lr * 0.1f64.powi(drops as i32)
    }
}

#[derive(Clone, Debug)]
pub struct FitSettings {
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub puzzle: bool,
    pub puzzle_weight: f64,
    pub class_weights: Option<Vec<f64>>,
    pub augmentations: Vec<Augmentation>,
    /// Where `metrics.jsonl` and the `last`/`best` checkpoints go.
    pub out_dir: Option<PathBuf>,
}

impl FitSettings {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self {
            optimizer: cfg.optimizer.clone(),
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            seed: cfg.seed,
            puzzle: cfg.puzzle,
            puzzle_weight: cfg.puzzle_weight,
            class_weights: None,
            augmentations: cfg.augmentations.clone(),
            out_dir: Some(cfg.out_dir.clone()),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitReport {
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: Option<usize>,
    pub best_val_acc: Option<f64>,
    pub last_checkpoint: Option<PathBuf>,
    pub best_checkpoint: Option<PathBuf>,
}

impl FitReport {
    pub fn split(&self, split: &str) -> impl Iterator<Item = &EpochMetrics> {
        let split = split.to_string();
        self.metrics.iter().filter(move |m| m.split == split)
    }

    pub fn final_val(&self) -> Option<&EpochMetrics> {
        self.split("val").last()
    }
}

struct EpochAccumulator {
    l_attn: f64,
    l_cls: f64,
    l_re: Option<f64>,
    seen: usize,
    predictions: Vec<usize>,
    labels: Vec<usize>,
}

impl EpochAccumulator {
    fn new() -> Self {
        Self {
            l_attn: 0.0,
            l_cls: 0.0,
            l_re: None,
            seen: 0,
            predictions: Vec::new(),
            labels: Vec::new(),
        }
    }

    fn add(&mut self, r: &LossReport, n: usize) {
        self.l_attn += r.l_attn * n as f64;
        self.l_cls += r.l_cls * n as f64;
        if let Some(re) = r.l_re {
            self.l_re = Some(self.l_re.unwrap_or(0.0) + re * n as f64);
        }
        self.seen += n;
    }

    fn report(&self) -> LossReport {
        let n = self.seen.max(1) as f64;
        LossReport::new(self.l_attn / n, self.l_cls / n, self.l_re.map(|v| v / n))
    }
}

pub(crate) fn argmax_rows(logits: &Tensor) -> Result<Vec<usize>> {
    Ok(logits
        .argmax(1)?
        .to_dtype(DType::U32)?
        .to_vec1::<u32>()?
        .into_iter()
        .map(|v| v as usize)
        .collect())
}

fn append_jsonl(path: &Path, m: &EpochMetrics) -> Result<()> {
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{}", serde_json::to_string(m)?)?;
    Ok(())
}

/// Runs the optimisation loop. `epoch_items` yields the training items of
/// each epoch, which lets callers swap in augmented sets per epoch. The
/// items are shuffled with the run seed, batches of one are dropped, and
/// after every epoch the model is scored on `val` (when given), metrics are
/// appended to `metrics.jsonl`, and the `last` and `best` checkpoints are
/// written. A non-finite loss aborts the run with the checkpoints of the
/// last good epoch left on disk.
pub fn fit<'a, F>(
    model: &Msabn,
    store: &ParamStore,
    mut epoch_items: F,
    val: Option<&Dataset>,
    settings: &FitSettings,
) -> Result<FitReport>
where
    F: FnMut(usize) -> Result<Vec<TrainItem<'a>>>,
{
    if settings.batch_size < 2 {
        return Err(Error::Config("batch size must be at least 2".into()));
    }
    if settings.puzzle && !model.has_attention_branch() {
        return Err(Error::Config("the puzzle loss needs the attention branch".into()));
    }
    let side = model.config().input_size;
    let k = model.config().num_classes;
    let metrics_path = match &settings.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let p = dir.join("metrics.jsonl");
            File::create(&p)?;
            Some(p)
        }
        None => None,
    };
    let schedule = LrSchedule::new(settings.optimizer.base_lr, &settings.optimizer.lr_milestones, settings.epochs);
    let mut sgd = Sgd::new(store, &settings.optimizer);
    let weights = settings.class_weights.as_deref();
    let mut report = FitReport {
        metrics: Vec::new(),
        best_epoch: None,
        best_val_acc: None,
        last_checkpoint: None,
        best_checkpoint: None,
    };

    for epoch in 0..settings.epochs {
        sgd.set_lr(schedule.lr_at(epoch));
        let mut items = epoch_items(epoch)?;
        if items.is_empty() {
            return Err(Error::EmptyDataset);
        }
        items.shuffle(&mut seeded_rng(settings.seed, epoch as u64, RngStream::Shuffle));
        let mut aug_rng = seeded_rng(settings.seed, epoch as u64, RngStream::Augment);
        let mut acc = EpochAccumulator::new();

        for batch in items.chunks(settings.batch_size) {
            if batch.len() < 2 {
                log::debug!("epoch {epoch}: dropping trailing batch of one");
                continue;
            }
            let images: Vec<_> = batch
                .iter()
                .map(|it| {
                    let img = apply_augmentations(std::borrow::Cow::Borrowed(it.image.as_ref()), &settings.augmentations, &mut aug_rng);
                    fit_to_input(img, side).into_owned()
                })
                .collect();
            let refs: Vec<_> = images.iter().collect();
            let labels: Vec<usize> = batch.iter().map(|it| it.label).collect();
            if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
                return Err(Error::Config(format!("label {bad} out of range for {k} classes")));
            }
            let x = images_to_tensor(&refs, model.dtype())?;
            let (out, l_re) = if settings.puzzle {
                let y = Tensor::from_vec(labels.iter().map(|&l| l as u32).collect::<Vec<_>>(), labels.len(), x.device())?;
                let (out, re) = puzzle_forward(model, &x, &y, true)?;
                let re = if settings.puzzle_weight == 1.0 {
                    re
                } else {
                    re.affine(settings.puzzle_weight, 0.0)?
                };
                (out, Some(re))
            } else {
                (model.forward(&x, true)?, None)
            };
            let attn_logits = out.branch.as_ref().map(|b| &b.attn_logits);
            let (loss, r) = total_loss(attn_logits, &out.logits, &labels, weights, l_re.as_ref())?;
            if !r.is_finite() || r.l_re.is_some_and(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    branch: "total".into(),
                    message: format!("non-finite loss at epoch {epoch}"),
                });
            }
            let grads = loss.backward()?;
            sgd.step(&grads)?;
            acc.add(&r, batch.len());
            acc.predictions.extend(argmax_rows(&out.logits)?);
            acc.labels.extend(labels);
        }
        if acc.seen == 0 {
            return Err(Error::Config("no batch of two or more items in the epoch".into()));
        }

        let train_m = EpochMetrics::new(
            epoch,
            "train",
            accuracy(&acc.predictions, &acc.labels)?,
            balanced_accuracy(&acc.predictions, &acc.labels, k)?,
            &acc.report(),
        );
        log::info!(
            "epoch {epoch} lr {:.4} train acc {:.2} loss {:.4}",
            sgd.lr(),
            train_m.acc,
            train_m.total
        );
        let mut epoch_metrics = vec![train_m];
        let score = match val {
            Some(v) => {
                let r = evaluate_dataset(model, v, settings.batch_size, weights)?;
                let m = EpochMetrics::new(epoch, "val", r.acc, r.bal_acc, &r.loss);
                log::info!("epoch {epoch} val acc {:.2} bal {:.2}", m.acc, m.bal_acc);
                let acc = m.acc;
                epoch_metrics.push(m);
                acc
            }
            None => epoch_metrics[0].acc,
        };
        if let Some(p) = &metrics_path {
            for m in &epoch_metrics {
                append_jsonl(p, m)?;
            }
        }
        let improved = report.best_val_acc.is_none_or(|b| score > b);
        if improved {
            report.best_val_acc = Some(score);
            report.best_epoch = Some(epoch);
        }
        if let Some(dir) = &settings.out_dir {
            let meta = CheckpointMeta {
                config: model.config().clone(),
                epoch,
                metrics: epoch_metrics.clone(),
                seed: settings.seed,
            };
            report.last_checkpoint = Some(save_checkpoint(store, &meta, &dir.join("last"))?);
            if improved {
                report.best_checkpoint = Some(save_checkpoint(store, &meta, &dir.join("best"))?);
            }
        }
        report.metrics.extend(epoch_metrics);
    }
    Ok(report)
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>> {
    let f = File::open(path).map_err(|e| Error::ingest(path, e.to_string()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::ingest(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

pub struct TrainOutcome {
    pub model: Msabn,
    pub store: ParamStore,
    pub report: FitReport,
}

/// Trains on already-loaded datasets.
pub fn train_on(cfg: &TrainConfig, train: &Dataset, val: Option<&Dataset>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.num_classes() != cfg.model.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, model expects {}",
            train.num_classes(),
            cfg.model.num_classes
        )));
    }
    let (model, store) = Msabn::build(cfg.model.clone(), DType::F32, cfg.seed)?;
    let mut settings = FitSettings::from_config(cfg);
    if cfg.class_weighted {
        settings.class_weights = Some(class_weights(train)?);
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
    let report = fit(
        &model,
        &store,
        |_| Ok(train.samples().iter().map(TrainItem::from_sample).collect()),
        val,
        &settings,
    )?;
    Ok(TrainOutcome { model, store, report })
}

/// Loads the configured data, drops excluded classes, carves a validation
/// split when none is configured, and trains.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let source = cfg
        .train_data
        .as_ref()
        .ok_or_else(|| Error::Config("no training data configured".into()))?;
    let k = cfg.model.num_classes;
    let mut full = source.load(k)?;
    if !cfg.excluded_classes.is_empty() {
        full = full.without_classes(&cfg.excluded_classes)?;
    }
    let (train, val) = match &cfg.val_data {
        Some(v) => {
            let mut val = v.load(k)?;
            if !cfg.excluded_classes.is_empty() {
                val = val.without_classes(&cfg.excluded_classes)?;
            }
            (full, val)
        }
        None => full.stratified_split(cfg.val_fraction, cfg.seed)?,
    };
    train_on(cfg, &train, Some(&val))
}
