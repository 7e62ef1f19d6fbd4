use candle_core::{Tensor, Var, D};

use super::ParamStore;
use crate::Result;

#[derive(Clone, Debug)]
pub struct Conv2d {
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    /// Kaiming-normal (fan-out, ReLU gain) weights; zero bias when enabled.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        let fan_out = out_channels * kernel * kernel;
        let std = (2.0 / fan_out as f64).sqrt();
        let weight = store.normal(
            format!("{name}.weight"),
            &[out_channels, in_channels, kernel, kernel],
            std,
        )?;
        let bias = if bias {
            Some(store.constant(format!("{name}.bias"), &[out_channels], 0.0, true)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn weight(&self) -> &Var {
        &self.weight
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?;
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(&b.reshape((1, (), 1, 1))?)?),
            None => Ok(y),
        }
    }
}

/// Batch normalisation over `(N, H, W)` per channel.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    gamma: Var,
    beta: Var,
    running_mean: Var,
    running_var: Var,
    momentum: f64,
    eps: f64,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.constant(format!("{name}.weight"), &[channels], 1.0, true)?,
            beta: store.constant(format!("{name}.bias"), &[channels], 0.0, true)?,
            running_mean: store.constant(format!("{name}.running_mean"), &[channels], 0.0, false)?,
            running_var: store.constant(format!("{name}.running_var"), &[channels], 1.0, false)?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let (mean, var) = if train {
            // per-channel statistics over (N, H, W)
            let flat = x.transpose(0, 1)?.reshape((c, n * h * w))?;
            let mean = flat.mean_keepdim(D::Minus1)?;
            let centered = flat.broadcast_sub(&mean)?;
            let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
            let count = (n * h * w) as f64;
            let unbiased = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            let m = self.momentum;
            let new_mean = ((self.running_mean.as_tensor() * (1.0 - m))?
                + (mean.detach().flatten_all()? * m)?)?;
            let new_var = ((self.running_var.as_tensor() * (1.0 - m))?
                + (var.detach().flatten_all()? * (m * unbiased))?)?;
            self.running_mean.set(&new_mean)?;
            self.running_var.set(&new_var)?;
            (mean.flatten_all()?, var.flatten_all()?)
        } else {
            (
                self.running_mean.as_tensor().clone(),
                self.running_var.as_tensor().clone(),
            )
        };
        let shape = (1, c, 1, 1);
        let inv_std = (var + self.eps)?.sqrt()?.recip()?;
        let scale = (self.gamma.as_tensor() * inv_std)?;
        let shift = (self.beta.as_tensor() - (&mean * &scale)?)?;
        Ok(x.broadcast_mul(&scale.reshape(shape)?)?
            .broadcast_add(&shift.reshape(shape)?)?)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    weight: Var,
    bias: Var,
}

impl Linear {
    /// Normal(0, 0.01) weights and zero bias.
    pub fn new(store: &mut ParamStore, name: &str, in_features: usize, out_features: usize) -> Result<Self> {
        Ok(Self {
            weight: store.normal(format!("{name}.weight"), &[out_features, in_features], 0.01)?,
            bias: store.constant(format!("{name}.bias"), &[out_features], 0.0, true)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn batchnorm_train_normalises_and_tracks_stats() {
        let mut store = ParamStore::new(DType::F64, 0);
        let bn = BatchNorm2d::new(&mut store, "bn", 2).unwrap();
        let x = Tensor::arange(0f64, 16.0, &Device::Cpu)
            .unwrap()
            .reshape((2, 2, 2, 2))
            .unwrap();
        let y = bn.forward(&x, true).unwrap();
        let per_channel = y.transpose(0, 1).unwrap().reshape((2, 8)).unwrap();
        let means = per_channel.mean(1).unwrap().to_vec1::<f64>().unwrap();
        assert!(means.iter().all(|m| m.abs() < 1e-9));
        // channel 0 holds 0..4 and 8..12: mean 5.5
        let rm = store.get("bn.running_mean").unwrap().var.to_vec1::<f64>().unwrap();
        assert!((rm[0] - 0.55).abs() < 1e-12);
    }

    #[test]
    fn conv_shapes() {
        let mut store = ParamStore::new(DType::F32, 0);
        let conv = Conv2d::new(&mut store, "c", 3, 8, 3, 2, 1, true).unwrap();
        let x = Tensor::zeros((2, 3, 16, 16), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(conv.forward(&x).unwrap().dims(), &[2, 8, 8, 8]);
    }
}
