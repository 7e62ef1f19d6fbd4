use candle_core::{Tensor, D};

use crate::imaging::bilinear_taps;
use crate::Result;

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((x.neg()?.exp()? + 1.0)?.recip()?)
}

/// Numerically stable log-softmax over the last dimension.
pub fn log_softmax(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let shifted = x.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

/// `(N, C, H, W) -> (N, C)` spatial mean.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    Ok(x.mean(D::Minus1)?.mean(D::Minus1)?)
}

/// `(out, in)` interpolation matrix for half-pixel-centred bilinear sampling.
fn interp_matrix(input: usize, output: usize, like: &Tensor) -> Result<Tensor> {
    let mut m = vec![0f64; output * input];
    for (o, t) in bilinear_taps(input, output).iter().enumerate() {
        m[o * input + t.lo] += 1.0 - t.frac;
        m[o * input + t.hi] += t.frac;
    }
    Ok(Tensor::from_vec(m, (output, input), like.device())?.to_dtype(like.dtype())?)
}

/// Differentiable bilinear resize of `(N, C, H, W)` with corner alignment
/// disabled. Returns the input unchanged when the size already matches.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if (h, w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let rw = interp_matrix(w, out_w, x)?.t()?; // (w, out_w)
    let rh = interp_matrix(h, out_h, x)?.t()?; // (h, out_h)
    let y = x.reshape((n * c * h, w))?.matmul(&rw)?; // (n c h, out_w)
    let y = y
        .reshape((n * c, h, out_w))?
        .transpose(1, 2)?
        .contiguous()?
        .reshape((n * c * out_w, h))?
        .matmul(&rh)?; // (n c out_w, out_h)
    Ok(y.reshape((n * c, out_w, out_h))?
        .transpose(1, 2)?
        .contiguous()?
        .reshape((n, c, out_h, out_w))?)
}

/// Max over windows `{2i, 2i+1, 2i+2}` of a zero-padded axis of even length;
/// equivalent to a 3-wide, stride-2, pad-1 max pool on non-negative input.
fn max3_stride2(x: &Tensor, dim: usize) -> Result<Tensor> {
    let len = x.dim(dim)?;
    let out = len.div_ceil(2);
    let padded = x.pad_with_zeros(dim, 1, 2 * out + 1 - len)?;
    let pairs = |start: usize| -> Result<Tensor> {
        let mut shape = padded.dims().to_vec();
        shape[dim] = out;
        shape.insert(dim + 1, 2);
        Ok(padded.narrow(dim, start, 2 * out)?.reshape(shape)?)
    };
    let a = pairs(0)?;
    let b = pairs(1)?;
    let left = a.narrow(dim + 1, 0, 1)?;
    let mid = a.narrow(dim + 1, 1, 1)?;
    let right = b.narrow(dim + 1, 1, 1)?;
    Ok(left.maximum(&mid)?.maximum(&right)?.squeeze(dim + 1)?)
}

/// 3x3, stride-2, padding-1 max pool for post-ReLU (non-negative) maps.
pub fn max_pool_3x3_s2(x: &Tensor) -> Result<Tensor> {
    max3_stride2(&max3_stride2(x, 2)?, 3)
}
