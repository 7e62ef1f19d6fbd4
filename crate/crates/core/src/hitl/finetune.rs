use std::collections::HashMap;
use std::path::{Path, PathBuf};

use candle_core::DType;
use serde::{Deserialize, Serialize};

use super::{audit_sample, build_augmented_epoch, select_pool, AttentionAudit, AugmentationPool, DEFAULT_THRESHOLD};
use crate::data::{AnnotationRecord, Dataset};
use crate::harness::{fit, load_checkpoint, run_dataset, FitReport, FitSettings, OptimizerConfig, TrainItem};
use crate::model::Msabn;
use crate::nn::ParamStore;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub lambda_out: f64,
    pub threshold: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub puzzle: bool,
    /// Also fine-tune a copy of the checkpoint without copy-replace, with the
    /// same schedule and seed.
    pub control_vanilla: bool,
    pub out_dir: Option<PathBuf>,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            lambda_out: 0.2,
            threshold: DEFAULT_THRESHOLD,
            epochs: 50,
            batch_size: 16,
            optimizer: OptimizerConfig {
                base_lr: 0.1,
                momentum: 0.9,
                weight_decay: 1e-4,
                lr_milestones: vec![0.5, 0.75],
            },
            seed: 0,
            puzzle: false,
            control_vanilla: false,
            out_dir: None,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_out) {
            return Err(Error::Config(format!("lambda_out {} must lie in [0, 1]", self.lambda_out)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} must lie in (0, 1)", self.threshold)));
        }
        if self.epochs == 0 || self.batch_size < 2 {
            return Err(Error::Config("need at least one epoch and batches of two".into()));
        }
        Ok(())
    }

    fn settings(&self, sub: &str) -> FitSettings {
        FitSettings {
            optimizer: self.optimizer.clone(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            puzzle: self.puzzle,
            puzzle_weight: 1.0,
            class_weights: None,
            augmentations: Vec::new(),
            out_dir: self.out_dir.as_ref().map(|d| d.join(sub)),
        }
    }
}

#[derive(Debug)]
pub struct FinetuneRun {
    pub model: Msabn,
    pub store: ParamStore,
    pub report: FitReport,
}

#[derive(Debug)]
pub struct FinetuneOutcome {
    pub audits: Vec<AttentionAudit>,
    pub pool: AugmentationPool,
    pub run: FinetuneRun,
    pub control: Option<FinetuneRun>,
}

/// Audits every sample of `dataset` in order. A box in `overrides` replaces
/// the one shipped with the sample.
pub fn audit_model(
    model: &Msabn,
    dataset: &Dataset,
    overrides: &HashMap<String, AnnotationRecord>,
    threshold: f32,
    batch_size: usize,
) -> Result<Vec<AttentionAudit>> {
    let result = run_dataset(model, dataset, batch_size, None, true)?;
    let maps = result
        .attention
        .ok_or_else(|| Error::Config("auditing needs a model with an attention branch".into()))?;
    dataset
        .samples()
        .iter()
        .zip(&maps)
        .map(|(s, map)| {
            let bbox = overrides.get(&s.id).map(|r| r.bbox).or(s.bbox);
            audit_sample(map, bbox, (s.image.width(), s.image.height()), threshold)
        })
        .collect()
}

/// Audits the checkpoint on `train`, builds the copy-replace pool from the
/// samples whose outside-attention fraction exceeds `lambda_out`, and
/// fine-tunes from the checkpoint with a fresh optimiser. The optional
/// control run starts from the same checkpoint and sees plain epochs.
pub fn hitl_finetune(
    checkpoint: &Path,
    train: &Dataset,
    val: Option<&Dataset>,
    annotations: &HashMap<String, AnnotationRecord>,
    cfg: &FinetuneConfig,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    for record in annotations.values() {
        if train.get(&record.sample_id).is_some() {
            record.validate_against(train)?;
        }
    }
    let (model, store, _) = load_checkpoint(checkpoint, DType::F32)?;
    let mut audits = audit_model(&model, train, annotations, cfg.threshold, cfg.batch_size)?;
    let pool = select_pool(&mut audits, cfg.lambda_out)?;
    log::info!(
        "{} of {} samples in the copy-replace pool (lambda_out {})",
        pool.annotated.len(),
        train.len(),
        cfg.lambda_out
    );
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir)?;
        super::write_audit_csv(&audits, &dir.join("audit.csv"))?;
        std::fs::write(dir.join("pool.json"), serde_json::to_string_pretty(&pool)?)?;
    }

    let report = fit(
        &model,
        &store,
        |epoch| build_augmented_epoch(train, &pool, cfg.seed, epoch),
        val,
        &cfg.settings("hitl"),
    )?;
    let run = FinetuneRun { model, store, report };

    let control = if cfg.control_vanilla {
        let (model, store, _) = load_checkpoint(checkpoint, DType::F32)?;
        let report = fit(
            &model,
            &store,
            |_| Ok(train.samples().iter().map(TrainItem::from_sample).collect()),
            val,
            &cfg.settings("vanilla"),
        )?;
        Some(FinetuneRun { model, store, report })
    } else {
        None
    };
    Ok(FinetuneOutcome {
        audits,
        pool,
        run,
        control,
    })
}
