use std::borrow::Cow;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::BBox;
use crate::imaging::{resize_bilinear, Image};

/// Per-sample training augmentations on 8-bit images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Augmentation {
    /// Zero-pad by `padding` then crop `size x size` at a random offset.
    RandomCrop { size: usize, padding: usize },
    HorizontalFlip,
    VerticalFlip,
    /// Brightness and contrast factors drawn from `1 ± strength`.
    ColorJitter { brightness: f64, contrast: f64 },
    /// 3x3 binomial blur with probability 0.5.
    GaussianBlur,
    /// Additive pixel noise with the given standard deviation (in levels).
    GaussianNoise { std: f64 },
    /// Inverts pixels at or above `threshold` with probability 0.5.
    Solarize { threshold: u8 },
}

fn pad_and_crop(img: &Image, size: usize, padding: usize, rng: &mut ChaCha8Rng) -> Image {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let (pw, ph) = (w + 2 * padding, h + 2 * padding);
    let size_w = size.min(pw);
    let size_h = size.min(ph);
    let ox = rng.random_range(0..=pw - size_w);
    let oy = rng.random_range(0..=ph - size_h);
    let mut out = Image::new(size_w, size_h, c);
    for y in 0..size_h {
        for x in 0..size_w {
            let (sx, sy) = ((ox + x) as isize - padding as isize, (oy + y) as isize - padding as isize);
            if sx >= 0 && sy >= 0 && (sx as usize) < w && (sy as usize) < h {
                out.pixel_mut(x, y).copy_from_slice(img.pixel(sx as usize, sy as usize));
            }
        }
    }
    out
}

fn map_pixels(img: &Image, f: impl Fn(u8) -> f64) -> Image {
    let data = img.as_raw().iter().map(|&v| f(v).round().clamp(0.0, 255.0) as u8).collect();
    Image::from_raw(img.width(), img.height(), img.channels(), data).expect("same size")
}

fn blur(img: &Image) -> Image {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let k = [1.0, 2.0, 1.0];
    let mut out = Image::new(w, h, c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                let mut norm = 0.0;
                for (dy, ky) in k.iter().enumerate() {
                    for (dx, kx) in k.iter().enumerate() {
                        let (sx, sy) = (x as isize + dx as isize - 1, y as isize + dy as isize - 1);
                        if sx >= 0 && sy >= 0 && (sx as usize) < w && (sy as usize) < h {
                            acc += kx * ky * img.pixel(sx as usize, sy as usize)[ch] as f64;
                            norm += kx * ky;
                        }
                    }
                }
                out.pixel_mut(x, y)[ch] = (acc / norm).round() as u8;
            }
        }
    }
    out
}

impl Augmentation {
    pub fn apply(&self, img: &Image, rng: &mut ChaCha8Rng) -> Image {
        match *self {
            Augmentation::RandomCrop { size, padding } => pad_and_crop(img, size, padding, rng),
            Augmentation::HorizontalFlip => {
                if rng.random_bool(0.5) {
                    img.flip_horizontal()
                } else {
                    img.clone()
                }
            }
            Augmentation::VerticalFlip => {
                if rng.random_bool(0.5) {
                    img.flip_vertical()
                } else {
                    img.clone()
                }
            }
            Augmentation::ColorJitter { brightness, contrast } => {
                let b = 1.0 + rng.random_range(-brightness..=brightness);
                let c = 1.0 + rng.random_range(-contrast..=contrast);
                let mean = img.as_raw().iter().map(|&v| v as f64).sum::<f64>() / img.as_raw().len().max(1) as f64;
                map_pixels(img, |v| ((v as f64 - mean) * c + mean) * b)
            }
            Augmentation::GaussianBlur => {
                if rng.random_bool(0.5) {
                    blur(img)
                } else {
                    img.clone()
                }
            }
            Augmentation::GaussianNoise { std } => {
                let dist = Normal::new(0.0, std.max(1e-9)).expect("positive std");
                let data = img
                    .as_raw()
                    .iter()
                    .map(|&v| (v as f64 + dist.sample(rng)).round().clamp(0.0, 255.0) as u8)
                    .collect();
                Image::from_raw(img.width(), img.height(), img.channels(), data).expect("same size")
            }
            Augmentation::Solarize { threshold } => {
                if rng.random_bool(0.5) {
                    map_pixels(img, |v| if v >= threshold { 255.0 - v as f64 } else { v as f64 })
                } else {
                    img.clone()
                }
            }
        }
    }
}

/// Applies `augs` in order. Returns the input untouched when the list is
/// empty.
pub fn apply_augmentations<'a>(img: Cow<'a, Image>, augs: &[Augmentation], rng: &mut ChaCha8Rng) -> Cow<'a, Image> {
    augs.iter()
        .fold(img, |acc, a| Cow::Owned(a.apply(&acc, rng)))
}

/// Resizes to `side x side` when needed.
pub fn fit_to_input(img: Cow<'_, Image>, side: usize) -> Cow<'_, Image> {
    if img.width() == side && img.height() == side {
        img
    } else {
        Cow::Owned(resize_bilinear(&img, side, side))
    }
}

/// Scales a box along with an image resize.
pub fn fit_box_to_input(bbox: &BBox, image: (usize, usize), side: usize) -> BBox {
    bbox.rescale(image, (side, side))
}
