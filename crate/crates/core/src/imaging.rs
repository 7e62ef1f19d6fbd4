//! Interleaved 8-bit images and the resampling used by augmentation, audits
//! and overlays.

use std::path::Path;

use crate::data::BBox;
use crate::{Error, Result};

/// An `height x width x channels` image with interleaved 8-bit samples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0; width * height * channels],
        }
    }

    pub fn from_raw(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "image buffer has {} bytes, expected {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, pixel: &[u8]) -> Self {
        let mut data = Vec::with_capacity(width * height * pixel.len());
        for _ in 0..width * height {
            data.extend_from_slice(pixel);
        }
        Self {
            width,
            height,
            channels: pixel.len(),
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    fn offset(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * self.channels
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let o = self.offset(x, y);
        &self.data[o..o + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [u8] {
        let o = self.offset(x, y);
        let c = self.channels;
        &mut self.data[o..o + c]
    }

    /// Copies the region `[x_min, x_max) x [y_min, y_max)`.
    pub fn crop(&self, bbox: &BBox) -> Image {
        let (w, h) = (bbox.width(), bbox.height());
        let mut out = Image::new(w, h, self.channels);
        let row = w * self.channels;
        for y in 0..h {
            let src = self.offset(bbox.x_min as usize, bbox.y_min as usize + y);
            out.data[y * row..(y + 1) * row].copy_from_slice(&self.data[src..src + row]);
        }
        out
    }

    /// Writes `patch` with its top-left corner at `(x, y)`. The patch must fit.
    pub fn paste(&mut self, patch: &Image, x: usize, y: usize) {
        assert_eq!(patch.channels, self.channels, "channel mismatch in paste");
        assert!(x + patch.width <= self.width && y + patch.height <= self.height);
        let row = patch.width * self.channels;
        for py in 0..patch.height {
            let dst = self.offset(x, y + py);
            self.data[dst..dst + row].copy_from_slice(&patch.data[py * row..(py + 1) * row]);
        }
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = Image::new(self.width, self.height, self.channels);
        for y in 0..self.height {
            for x in 0..self.width {
                let src = self.offset(self.width - 1 - x, y);
                let dst = self.offset(x, y);
                let c = self.channels;
                out.data[dst..dst + c].copy_from_slice(&self.data[src..src + c]);
            }
        }
        out
    }

    pub fn flip_vertical(&self) -> Image {
        let mut out = Image::new(self.width, self.height, self.channels);
        let row = self.width * self.channels;
        for y in 0..self.height {
            let src = (self.height - 1 - y) * row;
            out.data[y * row..(y + 1) * row].copy_from_slice(&self.data[src..src + row]);
        }
        out
    }

    pub fn load_png(path: &Path) -> Result<Image> {
        let img = image::open(path).map_err(|e| Error::ingest(path, e.to_string()))?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let (channels, data) = match img {
            image::DynamicImage::ImageLuma8(g) => (1, g.into_raw()),
            other => (3, other.to_rgb8().into_raw()),
        };
        Image::from_raw(w, h, channels, data)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let color = match self.channels {
            1 => image::ExtendedColorType::L8,
            3 => image::ExtendedColorType::Rgb8,
            4 => image::ExtendedColorType::Rgba8,
            c => return Err(Error::Shape(format!("cannot encode {c}-channel image as PNG"))),
        };
        image::save_buffer(
            path,
            &self.data,
            self.width as u32,
            self.height as u32,
            color,
        )?;
        Ok(())
    }
}

/// One output coordinate of a 1-D bilinear resample: the two source taps and
/// the weight of the second one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

/// Half-pixel-centred bilinear taps (corner alignment disabled, no
/// antialiasing) for resampling `input` samples to `output` samples.
pub fn bilinear_taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            Tap {
                lo,
                hi,
                frac: src - lo as f64,
            }
        })
        .collect()
}

/// Bilinear resize of an 8-bit image, rounding to the nearest level.
pub fn resize_bilinear(src: &Image, width: usize, height: usize) -> Image {
    if src.width == width && src.height == height {
        return src.clone();
    }
    let xs = bilinear_taps(src.width, width);
    let ys = bilinear_taps(src.height, height);
    let mut out = Image::new(width, height, src.channels);
    for (y, ty) in ys.iter().enumerate() {
        for (x, tx) in xs.iter().enumerate() {
            for c in 0..src.channels {
                let at = |px: usize, py: usize| src.data[src.offset(px, py) + c] as f64;
                let top = at(tx.lo, ty.lo) * (1.0 - tx.frac) + at(tx.hi, ty.lo) * tx.frac;
                let bottom = at(tx.lo, ty.hi) * (1.0 - tx.frac) + at(tx.hi, ty.hi) * tx.frac;
                let v = top * (1.0 - ty.frac) + bottom * ty.frac;
                let o = out.offset(x, y) + c;
                out.data[o] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    out
}

/// Bilinear resize of a single-channel row-major map.
pub fn resize_map(values: &[f32], height: usize, width: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    assert_eq!(values.len(), height * width);
    if height == out_h && width == out_w {
        return values.to_vec();
    }
    let xs = bilinear_taps(width, out_w);
    let ys = bilinear_taps(height, out_h);
    let mut out = Vec::with_capacity(out_h * out_w);
    for ty in &ys {
        for tx in &xs {
            let at = |px: usize, py: usize| values[py * width + px] as f64;
            let top = at(tx.lo, ty.lo) * (1.0 - tx.frac) + at(tx.hi, ty.lo) * tx.frac;
            let bottom = at(tx.lo, ty.hi) * (1.0 - tx.frac) + at(tx.hi, ty.hi) * tx.frac;
            out.push((top * (1.0 - ty.frac) + bottom * ty.frac) as f32);
        }
    }
    out
}
