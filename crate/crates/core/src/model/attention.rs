use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::{AttentionBranchOutput, FeaturePyramid};
use crate::nn::{ops, BatchNorm2d, Conv2d, ParamStore};
use crate::{Error, Result};

/// How the attention map is combined with the block-3 features.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    /// `g * A`
    Mul,
    /// `g * (1 + A)`
    #[default]
    Residual,
}

impl std::str::FromStr for Mechanism {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "mul" => Ok(Self::Mul),
            "residual" => Ok(Self::Residual),
            other => Err(format!("unknown attention mechanism {other:?}")),
        }
    }
}

/// Splits `total` output channels over three projections: `total / 3` each,
/// the remainder going to block 1 first, then block 2.
pub fn allocate_channels(total: usize) -> [usize; 3] {
    let base = total / 3;
    let rem = total % 3;
    [base + usize::from(rem >= 1), base + usize::from(rem >= 2), base]
}

#[derive(Clone, Debug)]
struct Projection {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl Projection {
    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        Ok(self.bn.forward(&self.conv.forward(x)?, train)?.relu()?)
    }
}

/// Upsamples blocks 2 and 3 to block-1 resolution, passes each block through
/// a 1x1 conv-BN-ReLU projection and concatenates the results.
#[derive(Clone, Debug)]
pub struct MultiScaleFusion {
    projections: [Projection; 3],
    out_channels: usize,
}

impl MultiScaleFusion {
    pub fn new(store: &mut ParamStore, block_channels: [usize; 3], out_channels: usize) -> Result<Self> {
        if out_channels < 3 {
            return Err(Error::Config(format!(
                "attention branch needs at least 3 input channels, got {out_channels}"
            )));
        }
        let widths = allocate_channels(out_channels);
        let mut make = |i: usize| -> Result<Projection> {
            let name = format!("attention.fuse{}", i + 1);
            Ok(Projection {
                conv: Conv2d::new(store, &format!("{name}.conv"), block_channels[i], widths[i], 1, 1, 0, false)?,
                bn: BatchNorm2d::new(store, &format!("{name}.bn"), widths[i])?,
            })
        };
        Ok(Self {
            projections: [make(0)?, make(1)?, make(2)?],
            out_channels,
        })
    }

    pub fn projection_widths(&self) -> [usize; 3] {
        self.projections.each_ref().map(|p| p.conv.out_channels())
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn forward(&self, p: &FeaturePyramid, train: bool) -> Result<Tensor> {
        let (_, _, h1, w1) = p.f1.dims4()?;
        let sources = [
            p.f1.clone(),
            ops::resize_bilinear(&p.f2, h1, w1)?,
            ops::resize_bilinear(&p.f3, h1, w1)?,
        ];
        let projected = sources
            .iter()
            .zip(&self.projections)
            .map(|(x, proj)| proj.forward(x, train))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::cat(&projected, 1)?)
    }
}

/// Attention-branch head: `BN -> 1x1 conv (K) -> BN -> ReLU` gives the head
/// features; a 1x1 `K -> K` conv turns them into the CAM, whose spatial mean
/// is the attention-branch logit vector; a 1x1 `K -> 1` conv followed by BN
/// and a logistic squashing gives the attention map.
#[derive(Clone, Debug)]
pub struct AttentionHead {
    bn_in: BatchNorm2d,
    conv_features: Conv2d,
    bn_features: BatchNorm2d,
    conv_cam: Conv2d,
    conv_attention: Conv2d,
    bn_attention: BatchNorm2d,
}

impl AttentionHead {
    pub fn new(store: &mut ParamStore, in_channels: usize, num_classes: usize) -> Result<Self> {
        Ok(Self {
            bn_in: BatchNorm2d::new(store, "attention.head.bn_in", in_channels)?,
            conv_features: Conv2d::new(store, "attention.head.conv", in_channels, num_classes, 1, 1, 0, false)?,
            bn_features: BatchNorm2d::new(store, "attention.head.bn", num_classes)?,
            conv_cam: Conv2d::new(store, "attention.head.cam", num_classes, num_classes, 1, 1, 0, false)?,
            conv_attention: Conv2d::new(store, "attention.head.att_conv", num_classes, 1, 1, 1, 0, false)?,
            bn_attention: BatchNorm2d::new(store, "attention.head.att_bn", 1)?,
        })
    }

    pub fn forward(&self, fused: &Tensor, train: bool) -> Result<AttentionBranchOutput> {
        let x = self.bn_in.forward(fused, train)?;
        let features = self
            .bn_features
            .forward(&self.conv_features.forward(&x)?, train)?
            .relu()?;
        let cam = self.conv_cam.forward(&features)?;
        let attn_logits = ops::global_avg_pool(&cam)?;
        let attention = ops::sigmoid(
            &self
                .bn_attention
                .forward(&self.conv_attention.forward(&features)?, train)?,
        )?;
        Ok(AttentionBranchOutput {
            cam,
            attn_logits,
            attention,
        })
    }
}

/// Combines block-3 features `g` with an attention map, bilinearly resizing
/// the map to `g`'s resolution first.
pub fn apply_attention(g: &Tensor, attention: &Tensor, mechanism: Mechanism) -> Result<Tensor> {
    let (_, _, h, w) = g.dims4()?;
    let a = ops::resize_bilinear(attention, h, w)?;
    let weight = match mechanism {
        Mechanism::Mul => a,
        Mechanism::Residual => (a + 1.0)?,
    };
    Ok(g.broadcast_mul(&weight)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn allocation_rule() {
        assert_eq!(allocate_channels(64), [22, 21, 21]);
        assert_eq!(allocate_channels(65), [22, 22, 21]);
        assert_eq!(allocate_channels(63), [21, 21, 21]);
        assert_eq!(allocate_channels(3), [1, 1, 1]);
    }

    #[test]
    fn fusion_rejects_too_few_channels() {
        let mut store = ParamStore::new(DType::F32, 0);
        assert!(matches!(
            MultiScaleFusion::new(&mut store, [4, 8, 16], 2),
            Err(Error::Config(_))
        ));
    }

    fn g() -> Tensor {
        Tensor::randn(0f32, 1.0, (2, 4, 8, 8), &Device::Cpu).unwrap()
    }

    fn flat(t: &Tensor) -> Vec<f32> {
        t.flatten_all().unwrap().to_vec1().unwrap()
    }

    #[test]
    fn mechanism_identities() {
        let g = g();
        let zeros = Tensor::zeros((2, 1, 32, 32), DType::F32, &Device::Cpu).unwrap();
        let ones = Tensor::ones((2, 1, 32, 32), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(flat(&apply_attention(&g, &zeros, Mechanism::Residual).unwrap()), flat(&g));
        assert!(flat(&apply_attention(&g, &zeros, Mechanism::Mul).unwrap())
            .iter()
            .all(|v| *v == 0.0));
        let doubled: Vec<f32> = flat(&g).iter().map(|v| 2.0 * v).collect();
        assert_eq!(flat(&apply_attention(&g, &ones, Mechanism::Residual).unwrap()), doubled);
    }

    #[test]
    fn head_shapes_and_range() {
        let mut store = ParamStore::new(DType::F32, 3);
        let head = AttentionHead::new(&mut store, 64, 10).unwrap();
        let fused = Tensor::randn(0f32, 3.0, (2, 64, 32, 32), &Device::Cpu).unwrap();
        let out = head.forward(&fused, true).unwrap();
        assert_eq!(out.cam.dims(), &[2, 10, 32, 32]);
        assert_eq!(out.attn_logits.dims(), &[2, 10]);
        assert_eq!(out.attention.dims(), &[2, 1, 32, 32]);
        assert!(flat(&out.attention).iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
