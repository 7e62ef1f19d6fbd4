//! The MSABN network: backbone blocks, multi-scale fusion, attention head,
//! attention mechanism and perception branch.

mod attention;
pub mod backbone;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

pub use attention::{allocate_channels, apply_attention, AttentionHead, Mechanism, MultiScaleFusion};
use backbone::{Backbone, CifarResNet, ResNet50};

use crate::data::AttentionMap;
use crate::imaging::Image;
use crate::nn::{ops, Linear, ParamStore};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    /// 6n+2 CIFAR ResNet with n = 1; a desk-scale member of the family.
    ResNet8,
    ResNet20,
    ResNet56,
    ResNet110,
    ResNet50,
}

impl BackboneKind {
    pub const ALL: [BackboneKind; 5] = [
        BackboneKind::ResNet8,
        BackboneKind::ResNet20,
        BackboneKind::ResNet56,
        BackboneKind::ResNet110,
        BackboneKind::ResNet50,
    ];

    fn cifar_depth(self) -> Option<usize> {
        match self {
            BackboneKind::ResNet8 => Some(8),
            BackboneKind::ResNet20 => Some(20),
            BackboneKind::ResNet56 => Some(56),
            BackboneKind::ResNet110 => Some(110),
            BackboneKind::ResNet50 => None,
        }
    }

    pub fn default_width(self) -> usize {
        match self {
            BackboneKind::ResNet50 => 64,
            _ => 16,
        }
    }

    /// Input sides must be a multiple of this so the three blocks sit at
    /// exactly 4:2:1.
    pub fn input_multiple(self) -> usize {
        match self {
            BackboneKind::ResNet50 => 16,
            _ => 4,
        }
    }
}

impl std::str::FromStr for BackboneKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "resnet8" => Ok(Self::ResNet8),
            "resnet20" => Ok(Self::ResNet20),
            "resnet56" => Ok(Self::ResNet56),
            "resnet110" => Ok(Self::ResNet110),
            "resnet50" => Ok(Self::ResNet50),
            other => Err(format!("unknown backbone {other:?}")),
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_in_channels() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneKind,
    pub num_classes: usize,
    #[serde(default)]
    pub mechanism: Mechanism,
    /// `false` feeds block 3 alone to the attention branch (plain ABN).
    #[serde(default = "default_true")]
    pub multiscale: bool,
    /// `false` drops the attention branch entirely (the base network).
    #[serde(default = "default_true")]
    pub attention_branch: bool,
    pub input_size: usize,
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
    /// Backbone base width; the family default when absent.
    #[serde(default)]
    pub width: Option<usize>,
    /// Attention-branch input channels; block-3 channels when absent.
    #[serde(default)]
    pub attn_in_channels: Option<usize>,
}

impl ModelConfig {
    pub fn new(backbone: BackboneKind, num_classes: usize, input_size: usize) -> Self {
        Self {
            backbone,
            num_classes,
            mechanism: Mechanism::Residual,
            multiscale: true,
            attention_branch: true,
            input_size,
            in_channels: 3,
            width: None,
            attn_in_channels: None,
        }
    }

    pub fn abn(mut self) -> Self {
        self.multiscale = false;
        self
    }

    pub fn base(mut self) -> Self {
        self.attention_branch = false;
        self
    }

    pub fn with_width(mut self, width: usize) -> Self {
        self.width = Some(width);
        self
    }

    pub fn with_mechanism(mut self, mechanism: Mechanism) -> Self {
        self.mechanism = mechanism;
        self
    }

    pub fn width(&self) -> usize {
        self.width.unwrap_or(self.backbone.default_width())
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        let m = self.backbone.input_multiple();
        if self.input_size == 0 || !self.input_size.is_multiple_of(m) {
            return Err(Error::Config(format!(
                "input size {} must be a positive multiple of {m} for {:?}",
                self.input_size, self.backbone
            )));
        }
        if self.width() == 0 || self.in_channels == 0 {
            return Err(Error::Config("width and input channels must be positive".into()));
        }
        if let Some(c) = self.attn_in_channels {
            if c < 3 {
                return Err(Error::Config(format!("attn_in_channels must be at least 3, got {c}")));
            }
        }
        Ok(())
    }

    /// Spatial sides `(h1, h2, h3)` of the three exposed blocks.
    pub fn block_sides(&self) -> [usize; 3] {
        let s = match self.backbone {
            BackboneKind::ResNet50 => 4,
            _ => 1,
        };
        let h1 = self.input_size / s;
        [h1, h1 / 2, h1 / 4]
    }

    /// Side of the attention map this configuration produces.
    pub fn attention_side(&self) -> usize {
        let [h1, _, h3] = self.block_sides();
        if self.multiscale {
            h1
        } else {
            h3
        }
    }
}

/// Block outputs of the backbone, batched `(N, C, H, W)`.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    pub f1: Tensor,
    pub f2: Tensor,
    pub f3: Tensor,
}

/// Batched attention-branch outputs.
#[derive(Clone, Debug)]
pub struct AttentionBranchOutput {
    /// `(N, K, h, w)` class response map.
    pub cam: Tensor,
    /// `(N, K)` spatial mean of the CAM.
    pub attn_logits: Tensor,
    /// `(N, 1, h, w)` attention in `[0, 1]`.
    pub attention: Tensor,
}

impl AttentionBranchOutput {
    /// Per-sample attention maps paired with the given ids.
    pub fn attention_maps(&self, ids: &[&str]) -> Result<Vec<AttentionMap>> {
        let (n, _, h, w) = self.attention.dims4()?;
        if n != ids.len() {
            return Err(Error::Shape(format!("{n} attention maps for {} ids", ids.len())));
        }
        let all: Vec<f32> = self.attention.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
        ids.iter()
            .zip(all.chunks_exact(h * w))
            .map(|(id, v)| AttentionMap::new(*id, h, w, v.iter().map(|x| x.clamp(0.0, 1.0)).collect()))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Absent for the base network.
    pub branch: Option<AttentionBranchOutput>,
    /// `(N, K)` perception-branch logits.
    pub logits: Tensor,
}

/// Multi-scale attention branch network.
#[derive(Debug)]
pub struct Msabn {
    config: ModelConfig,
    dtype: DType,
    backbone: Box<dyn Backbone>,
    fusion: Option<MultiScaleFusion>,
    head: Option<AttentionHead>,
    classifier: Linear,
}

impl Msabn {
    /// Builds the network, registering its variables in `store`.
    pub fn new(config: ModelConfig, store: &mut ParamStore) -> Result<Self> {
        config.validate()?;
        let width = config.width();
        let backbone: Box<dyn Backbone> = match config.backbone.cifar_depth() {
            Some(depth) => Box::new(CifarResNet::new(store, depth, width, config.in_channels)?),
            None => Box::new(ResNet50::new(store, width, config.in_channels)?),
        };
        let channels = backbone.block_channels();
        let attn_in = config.attn_in_channels.unwrap_or(channels[2]);
        let (fusion, head) = if config.attention_branch {
            let fusion = if config.multiscale {
                Some(MultiScaleFusion::new(store, channels, attn_in)?)
            } else {
                None
            };
            let head_in = if config.multiscale { attn_in } else { channels[2] };
            (fusion, Some(AttentionHead::new(store, head_in, config.num_classes)?))
        } else {
            (None, None)
        };
        let classifier = Linear::new(store, "perception.fc", backbone.perception_channels(), config.num_classes)?;
        Ok(Self {
            config,
            dtype: store.dtype(),
            backbone,
            fusion,
            head,
            classifier,
        })
    }

    /// Builds a network with a fresh parameter store.
    pub fn build(config: ModelConfig, dtype: DType, seed: u64) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new(dtype, seed);
        let model = Self::new(config, &mut store)?;
        Ok((model, store))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn fusion(&self) -> Option<&MultiScaleFusion> {
        self.fusion.as_ref()
    }

    pub fn has_attention_branch(&self) -> bool {
        self.head.is_some()
    }

    fn check_input(&self, images: &Tensor) -> Result<()> {
        let (_, c, h, w) = images.dims4()?;
        if c != self.config.in_channels {
            return Err(Error::Shape(format!(
                "expected {} input channels, got {c}",
                self.config.in_channels
            )));
        }
        let m = self.config.backbone.input_multiple();
        if h % m != 0 || w % m != 0 {
            return Err(Error::Shape(format!("input {h}x{w} is not a multiple of {m}")));
        }
        Ok(())
    }

    pub fn extract_features(&self, images: &Tensor, train: bool) -> Result<FeaturePyramid> {
        self.check_input(images)?;
        self.backbone.extract(images, train)
    }

    /// The attention-branch input: fused multi-scale features, or block 3
    /// itself when multi-scale fusion is off.
    pub fn fuse_multiscale(&self, pyramid: &FeaturePyramid, train: bool) -> Result<Tensor> {
        match &self.fusion {
            Some(f) => f.forward(pyramid, train),
            None => Ok(pyramid.f3.clone()),
        }
    }

    pub fn attention_head(&self, fused: &Tensor, train: bool) -> Result<AttentionBranchOutput> {
        let head = self
            .head
            .as_ref()
            .ok_or_else(|| Error::Config("model has no attention branch".into()))?;
        head.forward(fused, train)
    }

    /// Remaining backbone stage, global average pooling and the classifier.
    pub fn perceive(&self, attended: &Tensor, train: bool) -> Result<Tensor> {
        let x = self.backbone.remaining_stage(attended, train)?;
        self.classifier.forward(&ops::global_avg_pool(&x)?)
    }

    /// Backbone plus attention branch, without the perception branch.
    pub fn attention_branch(&self, images: &Tensor, train: bool) -> Result<AttentionBranchOutput> {
        let pyramid = self.extract_features(images, train)?;
        let fused = self.fuse_multiscale(&pyramid, train)?;
        self.attention_head(&fused, train)
    }

    pub fn forward(&self, images: &Tensor, train: bool) -> Result<ForwardOutput> {
        let pyramid = self.extract_features(images, train)?;
        if self.head.is_none() {
            let logits = self.perceive(&pyramid.f3, train)?;
            return Ok(ForwardOutput { branch: None, logits });
        }
        let fused = self.fuse_multiscale(&pyramid, train)?;
        let branch = self.attention_head(&fused, train)?;
        let attended = apply_attention(&pyramid.f3, &branch.attention, self.config.mechanism)?;
        let logits = self.perceive(&attended, train)?;
        Ok(ForwardOutput {
            branch: Some(branch),
            logits,
        })
    }
}

/// Per-channel normalisation applied to 8-bit pixels before the network.
pub const PIXEL_MEAN: f64 = 0.5;
pub const PIXEL_STD: f64 = 0.25;

/// Stacks images into an `(N, C, H, W)` tensor scaled to roughly unit range.
pub fn images_to_tensor(images: &[&Image], dtype: DType) -> Result<Tensor> {
    let first = images.first().ok_or(Error::EmptyDataset)?;
    let (w, h, c) = (first.width(), first.height(), first.channels());
    let mut data = Vec::with_capacity(images.len() * w * h * c);
    for img in images {
        if (img.width(), img.height(), img.channels()) != (w, h, c) {
            return Err(Error::Shape(format!(
                "batch mixes {}x{}x{} and {w}x{h}x{c} images",
                img.width(),
                img.height(),
                img.channels()
            )));
        }
        let raw = img.as_raw();
        for ch in 0..c {
            data.extend(
                raw.iter()
                    .skip(ch)
                    .step_by(c)
                    .map(|&v| ((v as f64 / 255.0 - PIXEL_MEAN) / PIXEL_STD) as f32),
            );
        }
    }
    let t = Tensor::from_vec(data, (images.len(), c, h, w), &candle_core::Device::Cpu)?;
    Ok(t.to_dtype(dtype)?)
}
