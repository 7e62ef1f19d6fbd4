#![allow(dead_code)]

use msabn::data::synthetic::{generate, SyntheticConfig};
use msabn::data::Dataset;
use msabn::model::{BackboneKind, ModelConfig};

pub fn synthetic(num_classes: usize, per_class: usize, size: usize, correlation: f64, seed: u64, prefix: &str) -> Dataset {
    generate(&SyntheticConfig {
        num_classes,
        per_class,
        image_size: size,
        min_object: size * 5 / 16,
        max_object: size / 2,
        background_correlation: correlation,
        seed,
        id_prefix: prefix.into(),
    })
    .unwrap()
}

/// Narrow ResNet8 that trains in seconds.
pub fn tiny_model(num_classes: usize, input: usize) -> ModelConfig {
    ModelConfig::new(BackboneKind::ResNet8, num_classes, input).with_width(4)
}

use msabn::candle_core::{Tensor, Var};

/// Central difference of `f` with respect to element `index` of `var`.
pub fn finite_difference(var: &Var, index: usize, eps: f64, mut f: impl FnMut() -> f64) -> f64 {
    let original = var.as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap();
    let shape = var.as_tensor().shape().clone();
    let set = |delta: f64| {
        let mut v = original.clone();
        v[index] += delta;
        var.set(&Tensor::from_vec(v, shape.clone(), var.as_tensor().device()).unwrap()).unwrap();
    };
    set(eps);
    let plus = f();
    set(-eps);
    let minus = f();
    set(0.0);
    (plus - minus) / (2.0 * eps)
}

pub fn grad_at(grads: &msabn::candle_core::backprop::GradStore, var: &Var, index: usize) -> f64 {
    match grads.get(var.as_tensor()) {
        Some(g) => g.flatten_all().unwrap().to_vec1::<f64>().unwrap()[index],
        None => 0.0,
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}
