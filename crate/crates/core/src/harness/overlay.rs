use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::evaluate::run_dataset;
use crate::data::{AttentionMap, BBox, Dataset};
use crate::hitl::audit_sample;
use crate::imaging::Image;
use crate::model::Msabn;
use crate::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.json";

/// One exported sample, paths relative to the export directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlayEntry {
    pub sample_id: String,
    pub image_path: PathBuf,
    pub overlay_path: PathBuf,
    pub width: usize,
    pub height: usize,
    /// `None` when the sample has no box to audit against.
    pub frac_out: Option<f64>,
    pub predicted: usize,
    pub label: usize,
    #[serde(default)]
    pub bbox: Option<BBox>,
}

impl OverlayEntry {
    pub fn is_wrong(&self) -> bool {
        self.predicted != self.label
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OverlayManifest {
    pub entries: Vec<OverlayEntry>,
}

impl OverlayManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_NAME);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::ingest(&path, e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| Error::ingest(&path, e.to_string()))
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_NAME);
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }

    pub fn get(&self, id: &str) -> Option<&OverlayEntry> {
        self.entries.iter().find(|e| e.sample_id == id)
    }
}

/// Blends a red heat layer over `image` with per-pixel weight
/// `alpha * attention`, after resizing the map to the image. Where the
/// attention is zero the image is unchanged.
pub fn overlay_image(image: &Image, attention: &AttentionMap, alpha: f32) -> Image {
    let (w, h) = (image.width(), image.height());
    let a = attention.resized(h, w);
    let rgb = if image.channels() >= 3 {
        image.clone()
    } else {
        let mut out = Image::new(w, h, 3);
        for y in 0..h {
            for x in 0..w {
                let v = image.pixel(x, y)[0];
                out.pixel_mut(x, y)[..3].copy_from_slice(&[v, v, v]);
            }
        }
        out
    };
    let mut out = rgb.clone();
    let heat = [255.0f32, 64.0, 0.0];
    for y in 0..h {
        for x in 0..w {
            let t = (alpha * a.at(x, y)).clamp(0.0, 1.0);
            if t == 0.0 {
                continue;
            }
            let src = rgb.pixel(x, y);
            let dst = out.pixel_mut(x, y);
            for c in 0..3 {
                dst[c] = ((1.0 - t) * src[c] as f32 + t * heat[c]).round() as u8;
            }
        }
    }
    out
}

/// Writes `<id>.png`, `<id>_overlay.png` and `manifest.json` for every sample
/// of `dataset` into `out_dir`.
pub fn export_overlays(
    model: &Msabn,
    dataset: &Dataset,
    out_dir: &Path,
    threshold: f32,
    batch_size: usize,
) -> Result<OverlayManifest> {
    if !model.has_attention_branch() {
        return Err(Error::Config("overlays need a model with an attention branch".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let result = run_dataset(model, dataset, batch_size, None, true)?;
    let maps = result
        .attention
        .ok_or_else(|| Error::Config("model produced no attention maps".into()))?;
    let mut manifest = OverlayManifest::default();
    for ((sample, map), &predicted) in dataset.samples().iter().zip(&maps).zip(&result.predictions) {
        let image_path = PathBuf::from(format!("{}.png", sample.id));
        let overlay_path = PathBuf::from(format!("{}_overlay.png", sample.id));
        sample.image.save_png(&out_dir.join(&image_path))?;
        overlay_image(&sample.image, map, 0.6).save_png(&out_dir.join(&overlay_path))?;
        let (w, h) = (sample.image.width(), sample.image.height());
        let frac_out = match sample.bbox {
            Some(b) => Some(audit_sample(map, Some(b), (w, h), threshold)?.frac_out),
            None => None,
        };
        manifest.entries.push(OverlayEntry {
            sample_id: sample.id.clone(),
            image_path,
            overlay_path,
            width: w,
            height: h,
            frac_out,
            predicted,
            label: sample.label,
            bbox: sample.bbox,
        });
    }
    manifest.write(out_dir)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_attention_leaves_image() {
        let img = Image::filled(8, 6, &[10, 20, 30]);
        let zero = AttentionMap::new("z", 3, 4, vec![0.0; 12]).unwrap();
        assert_eq!(overlay_image(&img, &zero, 0.6), img);
        let full = AttentionMap::new("f", 3, 4, vec![1.0; 12]).unwrap();
        let hot = overlay_image(&img, &full, 0.6);
        assert!(hot.pixel(0, 0)[0] > 10);
    }
}
