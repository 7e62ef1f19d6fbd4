use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::augment::Augmentation;
use crate::data::{load_dataset, Dataset, DatasetFormat};
use crate::model::{BackboneKind, ModelConfig};
use crate::{Error, Result};

/// Environment variable that relative dataset paths are resolved against.
pub const DATA_ROOT_ENV: &str = "MSABN_DATA_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSource {
    pub path: PathBuf,
    pub format: DatasetFormat,
}

impl DataSource {
    pub fn new(path: impl Into<PathBuf>, format: DatasetFormat) -> Self {
        Self {
            path: path.into(),
            format,
        }
    }

    pub fn resolved_path(&self) -> PathBuf {
        if self.path.is_relative() {
            if let Ok(root) = std::env::var(DATA_ROOT_ENV) {
                let candidate = Path::new(&root).join(&self.path);
                if candidate.exists() {
                    return candidate;
                }
            }
        }
        self.path.clone()
    }

    pub fn load(&self, num_classes: usize) -> Result<Dataset> {
        load_dataset(&self.resolved_path(), self.format, Some(num_classes))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Fractions of the run after which the rate drops tenfold.
    pub lr_milestones: Vec<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_milestones: vec![0.5, 0.75],
        }
    }
}

fn default_puzzle_weight() -> f64 {
    1.0
}

fn default_val_fraction() -> f64 {
    0.1
}

/// Everything needed to reproduce one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub train_data: Option<DataSource>,
    /// Without a validation source, `val_fraction` of the training set is
    /// held out (stratified).
    #[serde(default)]
    pub val_data: Option<DataSource>,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default)]
    pub excluded_classes: Vec<usize>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub augmentations: Vec<Augmentation>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub puzzle: bool,
    #[serde(default = "default_puzzle_weight")]
    pub puzzle_weight: f64,
    #[serde(default)]
    pub class_weighted: bool,
    pub out_dir: PathBuf,
}

impl TrainConfig {
    fn base(model: ModelConfig, epochs: usize, batch_size: usize, out_dir: PathBuf) -> Self {
        Self {
            model,
            train_data: None,
            val_data: None,
            val_fraction: default_val_fraction(),
            excluded_classes: Vec::new(),
            optimizer: OptimizerConfig::default(),
            epochs,
            batch_size,
            augmentations: Vec::new(),
            seed: 0,
            puzzle: false,
            puzzle_weight: 1.0,
            class_weighted: false,
            out_dir,
        }
    }

    /// 32x32 classification: 300 epochs, batch 256, crop and flip.
    pub fn cifar100(backbone: BackboneKind, out_dir: impl Into<PathBuf>) -> Self {
        let mut c = Self::base(ModelConfig::new(backbone, 100, 32), 300, 256, out_dir.into());
        c.optimizer.weight_decay = 5e-4;
        c.augmentations = vec![
            Augmentation::RandomCrop { size: 32, padding: 4 },
            Augmentation::HorizontalFlip,
        ];
        c
    }

    /// 224x224 natural images: 90 epochs, batch 512, drops at 1/3 and 2/3.
    pub fn imagenet(out_dir: impl Into<PathBuf>) -> Self {
        let mut c = Self::base(ModelConfig::new(BackboneKind::ResNet50, 1000, 224), 90, 512, out_dir.into());
        c.optimizer.lr_milestones = vec![1.0 / 3.0, 2.0 / 3.0];
        c.augmentations = vec![
            Augmentation::RandomCrop { size: 224, padding: 0 },
            Augmentation::HorizontalFlip,
        ];
        c
    }

    /// Histopathology tiles: the natural-image schedule, class-weighted loss
    /// and the stain-robust augmentation set.
    pub fn diagset(num_classes: usize, out_dir: impl Into<PathBuf>) -> Self {
        let mut c = Self::imagenet(out_dir);
        c.model.num_classes = num_classes;
        c.class_weighted = true;
        c.augmentations = vec![
            Augmentation::HorizontalFlip,
            Augmentation::VerticalFlip,
            Augmentation::ColorJitter { brightness: 0.1, contrast: 0.1 },
            Augmentation::GaussianBlur,
            Augmentation::GaussianNoise { std: 4.0 },
            Augmentation::Solarize { threshold: 192 },
        ];
        c
    }

    /// Fine-grained sets at 352x352: 300 epochs, batch 16.
    pub fn fine_grained(num_classes: usize, out_dir: impl Into<PathBuf>) -> Self {
        let mut c = Self::base(
            ModelConfig::new(BackboneKind::ResNet50, num_classes, 352),
            300,
            16,
            out_dir.into(),
        );
        c.augmentations = vec![Augmentation::HorizontalFlip];
        c
    }

    /// A few epochs of a narrow ResNet8 on 32x32 inputs.
    pub fn smoke(num_classes: usize, out_dir: impl Into<PathBuf>) -> Self {
        let model = ModelConfig::new(BackboneKind::ResNet8, num_classes, 32).with_width(8);
        let mut c = Self::base(model, 3, 16, out_dir.into());
        c.optimizer.lr_milestones = vec![0.5, 0.75];
        c
    }

    pub fn preset(name: &str, out_dir: impl Into<PathBuf>) -> Result<Self> {
        Ok(match name {
            "cifar100" => Self::cifar100(BackboneKind::ResNet110, out_dir),
            "imagenet" => Self::imagenet(out_dir),
            "diagset" => Self::diagset(9, out_dir),
            "fine_grained" | "fine-grained" => Self::fine_grained(200, out_dir),
            "smoke" => Self::smoke(3, out_dir),
            other => return Err(Error::Config(format!("unknown preset {other:?}"))),
        })
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::ingest(path, e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| Error::ingest(path, e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch size {} is too small for batch normalisation",
                self.batch_size
            )));
        }
        let o = &self.optimizer;
        if !(o.base_lr > 0.0 && o.base_lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", o.base_lr)));
        }
        if !(0.0..1.0).contains(&o.momentum) || o.weight_decay < 0.0 {
            return Err(Error::Config("momentum must lie in [0, 1) and weight decay be non-negative".into()));
        }
        if o.lr_milestones.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Error::Config("learning-rate milestones are fractions in [0, 1]".into()));
        }
        if self.puzzle && !self.model.attention_branch {
            return Err(Error::Config("the puzzle loss needs the attention branch".into()));
        }
        if self.puzzle && !self.model.input_size.is_multiple_of(2 * self.model.backbone.input_multiple()) {
            return Err(Error::Config(format!(
                "puzzle tiles of a {0}x{0} input are not a valid backbone input",
                self.model.input_size
            )));
        }
        if let Some(&c) = self.excluded_classes.iter().find(|&&c| c >= self.model.num_classes) {
            return Err(Error::Config(format!("excluded class {c} is out of range")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in ["cifar100", "imagenet", "diagset", "fine_grained", "smoke"] {
            TrainConfig::preset(name, "out").unwrap().validate().unwrap();
        }
        assert!(TrainConfig::preset("nope", "out").is_err());
    }

    #[test]
    fn json_round_trip_with_defaults() {
        let c = TrainConfig::smoke(3, "runs/x");
        let back: TrainConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        let minimal = r#"{"model":{"backbone":"resnet8","num_classes":3,"input_size":32},
            "train_data":null,"epochs":1,"batch_size":4,"out_dir":"o"}"#;
        let m: TrainConfig = serde_json::from_str(minimal).unwrap();
        assert_eq!(m.puzzle_weight, 1.0);
        assert!(m.model.multiscale && m.model.attention_branch);
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = TrainConfig::smoke(3, "o");
        c.batch_size = 1;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::smoke(3, "o");
        c.model = c.model.base();
        c.puzzle = true;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::smoke(3, "o");
        c.excluded_classes = vec![3];
        assert!(c.validate().is_err());
    }
}
