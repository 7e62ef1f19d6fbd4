//! Training objective: attention-branch and perception-branch
//! cross-entropies, plus the puzzle reconstruction term when enabled.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::nn::ops;
use crate::{Error, Result};

/// Scalar values of one loss evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_attn: f64,
    pub l_cls: f64,
    pub l_re: Option<f64>,
    pub total: f64,
}

impl LossReport {
    pub fn new(l_attn: f64, l_cls: f64, l_re: Option<f64>) -> Self {
        Self {
            l_attn,
            l_cls,
            l_re,
            total: l_attn + l_cls + l_re.unwrap_or(0.0),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.l_attn.is_finite() && self.l_cls.is_finite()
    }
}

fn check_finite(logits: &Tensor, branch: &str) -> Result<()> {
    let values: Vec<f64> = logits.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            branch: branch.into(),
            message: format!("non-finite logit {v}"),
        });
    }
    Ok(())
}

/// Mean over the batch of `-w[y] * log softmax(logits)[y]`; `w` defaults to 1.
pub fn cross_entropy(logits: &Tensor, labels: &[usize], weights: Option<&[f64]>) -> Result<Tensor> {
    let (b, k) = logits.dims2()?;
    if labels.len() != b {
        return Err(Error::Shape(format!("{} labels for {b} logits", labels.len())));
    }
    if let Some(w) = weights {
        if w.len() != k || w.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::Config(format!(
                "class weights must be {k} strictly positive values"
            )));
        }
    }
    let mut target = vec![0f64; b * k];
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::Config(format!("label {y} out of range for {k} classes")));
        }
        target[i * k + y] = weights.map_or(1.0, |w| w[y]);
    }
    let target = Tensor::from_vec(target, (b, k), logits.device())?.to_dtype(logits.dtype())?;
    let logp = ops::log_softmax(logits)?;
    Ok((logp * target)?.sum_all()?.neg()?.affine(1.0 / b as f64, 0.0)?)
}

/// Sums the objective terms. Returns the differentiable total and the scalar
/// report, whose `total` is the exact sum of its components.
pub fn total_loss(
    attn_logits: Option<&Tensor>,
    cls_logits: &Tensor,
    labels: &[usize],
    weights: Option<&[f64]>,
    l_re: Option<&Tensor>,
) -> Result<(Tensor, LossReport)> {
    check_finite(cls_logits, "perception")?;
    let l_cls = cross_entropy(cls_logits, labels, weights)?;
    let mut total = l_cls.clone();
    let mut attn_value = 0.0;
    if let Some(a) = attn_logits {
        check_finite(a, "attention")?;
        let l_attn = cross_entropy(a, labels, weights)?;
        attn_value = l_attn.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        total = (total + l_attn)?;
    }
    let re_value = match l_re {
        Some(re) => {
            total = (total + re)?;
            Some(re.to_dtype(DType::F64)?.to_scalar::<f64>()?)
        }
        None => None,
    };
    let cls_value = l_cls.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    Ok((total, LossReport::new(attn_value, cls_value, re_value)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn logits(v: &[f64], k: usize) -> Tensor {
        Tensor::from_vec(v.to_vec(), (v.len() / k, k), &Device::Cpu).unwrap()
    }

    fn scalar(t: &Tensor) -> f64 {
        t.to_scalar::<f64>().unwrap()
    }

    #[test]
    fn additive_report() {
        let r = LossReport::new(0.5, 0.3, Some(0.2));
        assert_eq!(r.total, 0.5 + 0.3 + 0.2);
        assert!((r.total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn weighted_ce_hand_computed() {
        // -2.0 * log(e^0 / (e^1 + e^0)) = 2 * ln(1 + e)
        let ce = cross_entropy(&logits(&[1.0, 0.0], 2), &[1], Some(&[40.0 / 60.0, 2.0])).unwrap();
        let want = 2.0 * (1.0 + 1f64.exp()).ln();
        assert!((scalar(&ce) - want).abs() < 1e-12);
    }

    #[test]
    fn confident_logits_give_near_zero_loss() {
        let l = logits(&[60.0, -60.0, -60.0, 60.0], 2);
        let (_, r) = total_loss(Some(&l), &l, &[0, 1], None, None).unwrap();
        assert!(r.l_attn < 1e-12 && r.l_cls < 1e-12);
    }

    #[test]
    fn uniform_weights_equal_unweighted() {
        let l = logits(&[0.3, -1.2, 2.0, 0.1, 0.0, -0.5], 3);
        let a = scalar(&cross_entropy(&l, &[2, 0], None).unwrap());
        let b = scalar(&cross_entropy(&l, &[2, 0], Some(&[1.0, 1.0, 1.0])).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_logits_name_branch() {
        let good = logits(&[0.0, 1.0], 2);
        let bad = logits(&[f64::NAN, 1.0], 2);
        match total_loss(Some(&bad), &good, &[0], None, None).unwrap_err() {
            Error::Numeric { branch, .. } => assert_eq!(branch, "attention"),
            e => panic!("unexpected {e}"),
        }
        match total_loss(None, &bad, &[0], None, None).unwrap_err() {
            Error::Numeric { branch, .. } => assert_eq!(branch, "perception"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn rejects_bad_weights() {
        let l = logits(&[0.0, 1.0], 2);
        assert!(cross_entropy(&l, &[0], Some(&[1.0, 0.0])).is_err());
        assert!(cross_entropy(&l, &[0], Some(&[1.0])).is_err());
    }
}
