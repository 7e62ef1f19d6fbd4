//! Procedural "object on distractor background" datasets with known boxes.
//!
//! Each class is a shape drawn in a random colour at a random place and
//! scale. Backgrounds are textures whose type can be tied to the class with a
//! configurable probability, which gives a classifier a spurious cue that
//! only the object box can disambiguate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BBox, Dataset, Sample};
use crate::imaging::Image;
use crate::Result;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub per_class: usize,
    pub image_size: usize,
    pub min_object: usize,
    pub max_object: usize,
    /// Probability that the background texture index equals the label.
    /// `1 / num_classes` makes the background uninformative.
    pub background_correlation: f64,
    pub seed: u64,
    pub id_prefix: String,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_classes: 3,
            per_class: 100,
            image_size: 32,
            min_object: 10,
            max_object: 16,
            background_correlation: 1.0 / 3.0,
            seed: 0,
            id_prefix: "syn".into(),
        }
    }
}

const SHAPES: usize = 6;
const TEXTURES: usize = 6;

fn shape_covers(shape: usize, u: f64, v: f64) -> bool {
    // u, v in [0, 1) within the object box
    let (cu, cv) = (u - 0.5, v - 0.5);
    match shape % SHAPES {
        0 => true,
        1 => cu.abs() < 0.17 || cv.abs() < 0.17,
        2 => {
            let r = (cu * cu + cv * cv).sqrt();
            (0.28..0.5).contains(&r)
        }
        3 => v >= 1.0 - 2.0 * (u - 0.5).abs() - 0.05 && v > 0.1,
        4 => (cu - cv).abs() < 0.14 || (cu + cv).abs() < 0.14,
        _ => ((v * 4.0) as usize).is_multiple_of(2),
    }
}

fn texture_at(kind: usize, x: usize, y: usize, period: usize) -> bool {
    match kind % TEXTURES {
        0 => (y / period).is_multiple_of(2),
        1 => (x / period).is_multiple_of(2),
        2 => ((x / period) + (y / period)).is_multiple_of(2),
        3 => ((x + y) / period).is_multiple_of(2),
        4 => ((x + 64 - y % 64) / period).is_multiple_of(2),
        _ => (x % (2 * period) < period / 2 + 1) && (y % (2 * period) < period / 2 + 1),
    }
}

fn random_color(rng: &mut ChaCha8Rng, lo: u8, hi: u8) -> [u8; 3] {
    [
        rng.random_range(lo..=hi),
        rng.random_range(lo..=hi),
        rng.random_range(lo..=hi),
    ]
}

/// Draws one image of class `label` over background texture `texture`.
pub fn render(rng: &mut ChaCha8Rng, cfg: &SyntheticConfig, label: usize, texture: usize) -> (Image, BBox) {
    let size = cfg.image_size;
    let period = rng.random_range(2..=4);
    let fg = random_color(rng, 0, 110);
    let bg = random_color(rng, 60, 150);
    let mut img = Image::new(size, size, 3);
    for y in 0..size {
        for x in 0..size {
            let c = if texture_at(texture, x, y, period) { fg } else { bg };
            img.pixel_mut(x, y).copy_from_slice(&c);
        }
    }
    let side = rng.random_range(cfg.min_object..=cfg.max_object.min(size));
    let x0 = rng.random_range(0..=size - side);
    let y0 = rng.random_range(0..=size - side);
    let object = random_color(rng, 190, 255);
    for y in 0..side {
        for x in 0..side {
            let (u, v) = ((x as f64 + 0.5) / side as f64, (y as f64 + 0.5) / side as f64);
            if shape_covers(label, u, v) {
                img.pixel_mut(x0 + x, y0 + y).copy_from_slice(&object);
            }
        }
    }
    (img, BBox::new(x0 as u32, y0 as u32, (x0 + side) as u32, (y0 + side) as u32))
}

pub fn generate(cfg: &SyntheticConfig) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.num_classes;
    let mut samples = Vec::with_capacity(k * cfg.per_class);
    for i in 0..cfg.per_class {
        for label in 0..k {
            let texture = if rng.random_bool(cfg.background_correlation.clamp(0.0, 1.0)) {
                label
            } else {
                (label + rng.random_range(1..k.max(2))) % k.max(1)
            };
            let (image, bbox) = render(&mut rng, cfg, label, texture);
            samples.push(Sample {
                id: format!("{}_{:05}", cfg.id_prefix, i * k + label),
                image,
                label,
                bbox: Some(bbox),
            });
        }
    }
    Dataset::new(samples, k)
}
