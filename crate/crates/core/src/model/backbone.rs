//! Residual backbones that expose their first three blocks.
//!
//! New backbone families plug in by implementing [`Backbone`]: return the
//! three block outputs at strides `s, 2s, 4s` and provide the remaining stage
//! that the perception branch runs on the attended block-3 features.

use candle_core::Tensor;

use super::FeaturePyramid;
use crate::nn::{ops, BatchNorm2d, Conv2d, ParamStore};
use crate::Result;

pub trait Backbone: Send + Sync + std::fmt::Debug {
    /// Channels of the three exposed blocks.
    fn block_channels(&self) -> [usize; 3];

    /// Downsampling factor of block 1 relative to the input.
    fn block1_stride(&self) -> usize;

    fn extract(&self, images: &Tensor, train: bool) -> Result<FeaturePyramid>;

    /// Stage(s) after block 3, returning `(N, perception_channels, h, w)`.
    fn remaining_stage(&self, attended: &Tensor, train: bool) -> Result<Tensor>;

    fn perception_channels(&self) -> usize;
}

#[derive(Clone, Debug)]
struct Shortcut {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl Shortcut {
    fn maybe(store: &mut ParamStore, name: &str, cin: usize, cout: usize, stride: usize) -> Result<Option<Self>> {
        if cin == cout && stride == 1 {
            return Ok(None);
        }
        Ok(Some(Self {
            conv: Conv2d::new(store, &format!("{name}.downsample.0"), cin, cout, 1, stride, 0, false)?,
            bn: BatchNorm2d::new(store, &format!("{name}.downsample.1"), cout)?,
        }))
    }

    fn forward(this: &Option<Self>, x: &Tensor, train: bool) -> Result<Tensor> {
        match this {
            Some(s) => s.bn.forward(&s.conv.forward(x)?, train),
            None => Ok(x.clone()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    shortcut: Option<Shortcut>,
}

impl BasicBlock {
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, stride: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), cin, cout, 3, stride, 1, false)?,
            bn1: BatchNorm2d::new(store, &format!("{name}.bn1"), cout)?,
            conv2: Conv2d::new(store, &format!("{name}.conv2"), cout, cout, 3, 1, 1, false)?,
            bn2: BatchNorm2d::new(store, &format!("{name}.bn2"), cout)?,
            shortcut: Shortcut::maybe(store, name, cin, cout, stride)?,
        })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = self.bn1.forward(&self.conv1.forward(x)?, train)?.relu()?;
        let y = self.bn2.forward(&self.conv2.forward(&y)?, train)?;
        Ok((y + Shortcut::forward(&self.shortcut, x, train)?)?.relu()?)
    }
}

#[derive(Clone, Debug)]
pub struct Bottleneck {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    conv3: Conv2d,
    bn3: BatchNorm2d,
    shortcut: Option<Shortcut>,
}

impl Bottleneck {
    const EXPANSION: usize = 4;

    pub fn new(store: &mut ParamStore, name: &str, cin: usize, width: usize, stride: usize) -> Result<Self> {
        let cout = width * Self::EXPANSION;
        Ok(Self {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), cin, width, 1, 1, 0, false)?,
            bn1: BatchNorm2d::new(store, &format!("{name}.bn1"), width)?,
            conv2: Conv2d::new(store, &format!("{name}.conv2"), width, width, 3, stride, 1, false)?,
            bn2: BatchNorm2d::new(store, &format!("{name}.bn2"), width)?,
            conv3: Conv2d::new(store, &format!("{name}.conv3"), width, cout, 1, 1, 0, false)?,
            bn3: BatchNorm2d::new(store, &format!("{name}.bn3"), cout)?,
            shortcut: Shortcut::maybe(store, name, cin, cout, stride)?,
        })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let y = self.bn1.forward(&self.conv1.forward(x)?, train)?.relu()?;
        let y = self.bn2.forward(&self.conv2.forward(&y)?, train)?.relu()?;
        let y = self.bn3.forward(&self.conv3.forward(&y)?, train)?;
        Ok((y + Shortcut::forward(&self.shortcut, x, train)?)?.relu()?)
    }
}

fn run_blocks<B>(blocks: &[B], x: Tensor, train: bool, f: impl Fn(&B, &Tensor, bool) -> Result<Tensor>) -> Result<Tensor> {
    blocks.iter().try_fold(x, |x, b| f(b, &x, train))
}

/// The 6n+2 CIFAR ResNet: a 3x3 stem without downsampling followed by three
/// stages of `n` basic blocks at widths `w, 2w, 4w`. Block 1 keeps the input
/// resolution. The perception stage is one further basic block at `4w`.
#[derive(Debug)]
pub struct CifarResNet {
    stem: Conv2d,
    stem_bn: BatchNorm2d,
    stages: [Vec<BasicBlock>; 3],
    perception: BasicBlock,
    widths: [usize; 3],
}

impl CifarResNet {
    pub fn new(store: &mut ParamStore, depth: usize, width: usize, in_channels: usize) -> Result<Self> {
        let n = (depth - 2) / 6;
        let widths = [width, 2 * width, 4 * width];
        let stem = Conv2d::new(store, "backbone.conv1", in_channels, width, 3, 1, 1, false)?;
        let stem_bn = BatchNorm2d::new(store, "backbone.bn1", width)?;
        let mut cin = width;
        let mut stages: [Vec<BasicBlock>; 3] = Default::default();
        for (s, stage) in stages.iter_mut().enumerate() {
            for b in 0..n {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                let name = format!("backbone.layer{}.{b}", s + 1);
                stage.push(BasicBlock::new(store, &name, cin, widths[s], stride)?);
                cin = widths[s];
            }
        }
        let perception = BasicBlock::new(store, "perception.block", cin, cin, 1)?;
        Ok(Self {
            stem,
            stem_bn,
            stages,
            perception,
            widths,
        })
    }
}

impl Backbone for CifarResNet {
    fn block_channels(&self) -> [usize; 3] {
        self.widths
    }

    fn block1_stride(&self) -> usize {
        1
    }

    fn extract(&self, images: &Tensor, train: bool) -> Result<FeaturePyramid> {
        let x = self.stem_bn.forward(&self.stem.forward(images)?, train)?.relu()?;
        let f1 = run_blocks(&self.stages[0], x, train, BasicBlock::forward)?;
        let f2 = run_blocks(&self.stages[1], f1.clone(), train, BasicBlock::forward)?;
        let f3 = run_blocks(&self.stages[2], f2.clone(), train, BasicBlock::forward)?;
        Ok(FeaturePyramid { f1, f2, f3 })
    }

    fn remaining_stage(&self, attended: &Tensor, train: bool) -> Result<Tensor> {
        self.perception.forward(attended, train)
    }

    fn perception_channels(&self) -> usize {
        self.widths[2]
    }
}

/// ImageNet-style ResNet-50: 7x7/2 stem and 3x3/2 max pool, bottleneck
/// stages of 3, 4, 6 blocks as the exposed blocks (strides 4, 8, 16) and the
/// fourth stage of 3 blocks as the perception stage.
#[derive(Debug)]
pub struct ResNet50 {
    stem: Conv2d,
    stem_bn: BatchNorm2d,
    stages: [Vec<Bottleneck>; 3],
    layer4: Vec<Bottleneck>,
    channels: [usize; 3],
    out_channels: usize,
}

impl ResNet50 {
    pub fn new(store: &mut ParamStore, width: usize, in_channels: usize) -> Result<Self> {
        let stem = Conv2d::new(store, "backbone.conv1", in_channels, width, 7, 2, 3, false)?;
        let stem_bn = BatchNorm2d::new(store, "backbone.bn1", width)?;
        let depths = [3, 4, 6, 3];
        let mut cin = width;
        let mut built: Vec<Vec<Bottleneck>> = Vec::new();
        for (s, &depth) in depths.iter().enumerate() {
            let w = width << s;
            let prefix = if s == 3 { "perception.layer4" } else { "backbone.layer" };
            let mut stage = Vec::with_capacity(depth);
            for b in 0..depth {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                let name = if s == 3 {
                    format!("{prefix}.{b}")
                } else {
                    format!("{prefix}{}.{b}", s + 1)
                };
                stage.push(Bottleneck::new(store, &name, cin, w, stride)?);
                cin = w * Bottleneck::EXPANSION;
            }
            built.push(stage);
        }
        let layer4 = built.pop().unwrap_or_default();
        let mut it = built.into_iter();
        let stages = [
            it.next().unwrap_or_default(),
            it.next().unwrap_or_default(),
            it.next().unwrap_or_default(),
        ];
        let e = Bottleneck::EXPANSION;
        Ok(Self {
            stem,
            stem_bn,
            stages,
            layer4,
            channels: [width * e, 2 * width * e, 4 * width * e],
            out_channels: cin,
        })
    }
}

impl Backbone for ResNet50 {
    fn block_channels(&self) -> [usize; 3] {
        self.channels
    }

    fn block1_stride(&self) -> usize {
        4
    }

    fn extract(&self, images: &Tensor, train: bool) -> Result<FeaturePyramid> {
        let x = self.stem_bn.forward(&self.stem.forward(images)?, train)?.relu()?;
        let x = ops::max_pool_3x3_s2(&x)?;
        let f1 = run_blocks(&self.stages[0], x, train, Bottleneck::forward)?;
        let f2 = run_blocks(&self.stages[1], f1.clone(), train, Bottleneck::forward)?;
        let f3 = run_blocks(&self.stages[2], f2.clone(), train, Bottleneck::forward)?;
        Ok(FeaturePyramid { f1, f2, f3 })
    }

    fn remaining_stage(&self, attended: &Tensor, train: bool) -> Result<Tensor> {
        run_blocks(&self.layer4, attended.clone(), train, Bottleneck::forward)
    }

    fn perception_channels(&self) -> usize {
        self.out_channels
    }
}
