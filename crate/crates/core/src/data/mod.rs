//! Samples, datasets and the bookkeeping shared by training and the HITL loop.

mod annotations;
mod cifar;
mod manifest;
pub mod synthetic;

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::imaging::Image;
use crate::{Error, Result};

pub use annotations::{AnnotationRecord, AnnotationStore};
pub use cifar::{convert_cifar, load_cifar_binary, CifarSplit};
pub use manifest::{load_folder_manifest, write_folder_manifest, MANIFEST_FILE};

/// Axis-aligned box in pixel coordinates covering `[x_min, x_max) x [y_min, y_max)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BBox {
    pub const fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self::new(0, 0, width as u32, height as u32)
    }

    pub fn width(&self) -> usize {
        self.x_max.saturating_sub(self.x_min) as usize
    }

    pub fn height(&self) -> usize {
        self.y_max.saturating_sub(self.y_min) as usize
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x_min as usize..self.x_max as usize).contains(&x)
            && (self.y_min as usize..self.y_max as usize).contains(&y)
    }

    /// Checks the box against an image of the given size. The error names the
    /// offending field.
    pub fn validate(&self, width: usize, height: usize) -> std::result::Result<(), BBoxViolation> {
        if self.x_min >= self.x_max {
            return Err(BBoxViolation::new("x_max", "x_max must be greater than x_min"));
        }
        if self.y_min >= self.y_max {
            return Err(BBoxViolation::new("y_max", "y_max must be greater than y_min"));
        }
        if self.x_max as usize > width {
            return Err(BBoxViolation::new(
                "x_max",
                format!("x_max {} exceeds image width {width}", self.x_max),
            ));
        }
        if self.y_max as usize > height {
            return Err(BBoxViolation::new(
                "y_max",
                format!("y_max {} exceeds image height {height}", self.y_max),
            ));
        }
        Ok(())
    }

    /// Maps the box from an image of `from` (width, height) onto a grid of
    /// `to` (width, height), rounding outward so the scaled box keeps at
    /// least one cell.
    pub fn rescale(&self, from: (usize, usize), to: (usize, usize)) -> BBox {
        let sx = to.0 as f64 / from.0 as f64;
        let sy = to.1 as f64 / from.1 as f64;
        let x_min = (self.x_min as f64 * sx).floor() as u32;
        let y_min = (self.y_min as f64 * sy).floor() as u32;
        let x_max = ((self.x_max as f64 * sx).ceil() as u32).clamp(x_min + 1, to.0 as u32);
        let y_max = ((self.y_max as f64 * sy).ceil() as u32).clamp(y_min + 1, to.1 as u32);
        BBox::new(x_min, y_min, x_max, y_max)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BBoxViolation {
    pub field: &'static str,
    pub message: String,
}

impl BBoxViolation {
    fn new(field: &'static str, message: impl Into<String>) -> Self {
        Self {
            field,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for BBoxViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    pub label: usize,
    pub bbox: Option<BBox>,
}

impl Sample {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.label >= num_classes {
            return Err(Error::validation(
                &self.id,
                format!("label {} out of range for {num_classes} classes", self.label),
            ));
        }
        if let Some(bbox) = &self.bbox {
            bbox.validate(self.image.width(), self.image.height())
                .map_err(|v| Error::validation(&self.id, format!("invalid bbox: {v}")))?;
        }
        Ok(())
    }
}

/// Supported on-disk dataset layouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    CifarBinary,
    FolderManifest,
}

impl std::str::FromStr for DatasetFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "cifar_binary" | "cifar-binary" => Ok(Self::CifarBinary),
            "folder_manifest" | "folder-manifest" => Ok(Self::FolderManifest),
            other => Err(format!("unknown dataset format {other:?}")),
        }
    }
}

/// An ordered, validated collection of samples.
#[derive(Clone, Debug)]
pub struct Dataset {
    samples: Vec<Sample>,
    num_classes: usize,
    class_counts: Vec<usize>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, num_classes: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        let mut seen = HashSet::with_capacity(samples.len());
        let mut class_counts = vec![0; num_classes];
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::validation(&s.id, "duplicate sample id"));
            }
            s.validate(num_classes)?;
            class_counts[s.label] += 1;
        }
        Ok(Self {
            samples,
            num_classes,
            class_counts,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.samples.iter().position(|s| s.id == id)
    }

    /// Keeps the samples whose label is not in `excluded`. Labels are kept as
    /// they are, so the class count does not change.
    pub fn without_classes(&self, excluded: &[usize]) -> Result<Dataset> {
        let drop: BTreeSet<usize> = excluded.iter().copied().collect();
        let kept = self
            .samples
            .iter()
            .filter(|s| !drop.contains(&s.label))
            .cloned()
            .collect();
        Dataset::new(kept, self.num_classes)
    }

    /// Deterministic stratified split; every class with at least two samples
    /// contributes at least one sample to each side.
    pub fn stratified_split(&self, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&val_fraction) || val_fraction == 0.0 {
            return Err(Error::Config(format!(
                "validation fraction {val_fraction} must be in (0, 1)"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); self.num_classes];
        for (i, s) in self.samples.iter().enumerate() {
            by_class[s.label].push(i);
        }
        let mut is_val = vec![false; self.samples.len()];
        for members in &mut by_class {
            members.shuffle(&mut rng);
            let n_val = if members.len() >= 2 {
                ((members.len() as f64 * val_fraction).round() as usize).clamp(1, members.len() - 1)
            } else {
                0
            };
            for &i in &members[..n_val] {
                is_val[i] = true;
            }
        }
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for (s, v) in self.samples.iter().zip(is_val) {
            if v {
                val.push(s.clone());
            } else {
                train.push(s.clone());
            }
        }
        Ok((
            Dataset::new(train, self.num_classes)?,
            Dataset::new(val, self.num_classes)?,
        ))
    }
}

/// Loads a dataset. For [`DatasetFormat::FolderManifest`] the path is either
/// a manifest CSV or a directory holding `manifest.csv`. For
/// [`DatasetFormat::CifarBinary`] it is a `.bin` batch file or a directory of
/// them (the training batches are read). When `num_classes` is `None` it is
/// inferred from the data.
pub fn load_dataset(path: &Path, format: DatasetFormat, num_classes: Option<usize>) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::ingest(path, "no such file or directory"));
    }
    match format {
        DatasetFormat::FolderManifest => load_folder_manifest(path, num_classes),
        DatasetFormat::CifarBinary => load_cifar_binary(path, CifarSplit::Train, num_classes),
    }
}

/// Per-class loss weights `N / (K * count_k)`.
pub fn class_weights(dataset: &Dataset) -> Result<Vec<f64>> {
    class_weights_from_counts(dataset.class_counts())
}

pub fn class_weights_from_counts(counts: &[usize]) -> Result<Vec<f64>> {
    let empty: Vec<usize> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == 0)
        .map(|(k, _)| k)
        .collect();
    if !empty.is_empty() {
        return Err(Error::EmptyClasses(empty));
    }
    let n: usize = counts.iter().sum();
    let k = counts.len() as f64;
    Ok(counts.iter().map(|&c| n as f64 / (k * c as f64)).collect())
}

/// A single-channel attention map with values in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    pub sample_id: String,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl AttentionMap {
    pub fn new(sample_id: impl Into<String>, height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        let sample_id = sample_id.into();
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "attention map for {sample_id} has {} values, expected {height}x{width}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::validation(
                &sample_id,
                format!("attention value {v} outside [0, 1]"),
            ));
        }
        Ok(Self {
            sample_id,
            height,
            width,
            values,
        })
    }

    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// Bilinear resize to `(height, width)`.
    pub fn resized(&self, height: usize, width: usize) -> AttentionMap {
        let values = crate::imaging::resize_map(&self.values, self.height, self.width, height, width)
            .into_iter()
            .map(|v| v.clamp(0.0, 1.0))
            .collect();
        AttentionMap {
            sample_id: self.sample_id.clone(),
            height,
            width,
            values,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str, label: usize) -> Sample {
        Sample {
            id: id.into(),
            image: Image::new(8, 8, 3),
            label,
            bbox: None,
        }
    }

    #[test]
    fn class_weight_examples() {
        assert_eq!(class_weights_from_counts(&[10, 10]).unwrap(), vec![1.0, 1.0]);
        let w = class_weights_from_counts(&[30, 10]).unwrap();
        // 40 / (2 * 30), 40 / (2 * 10)
        approx::assert_abs_diff_eq!(w[0], 40.0 / 60.0, epsilon = 1e-12);
        approx::assert_abs_diff_eq!(w[1], 2.0, epsilon = 1e-12);
        let err = class_weights_from_counts(&[5, 0]).unwrap_err();
        assert_eq!(err.to_string(), "class 1 empty");
    }

    #[test]
    fn dataset_rejects_bad_label_and_duplicates() {
        assert!(matches!(
            Dataset::new(vec![sample("a", 2)], 2),
            Err(Error::Validation { .. })
        ));
        assert!(matches!(
            Dataset::new(vec![sample("a", 0), sample("a", 1)], 2),
            Err(Error::Validation { .. })
        ));
        assert!(matches!(Dataset::new(vec![], 2), Err(Error::EmptyDataset)));
    }

    #[test]
    fn bbox_validation_names_field() {
        assert_eq!(BBox::new(3, 0, 3, 4).validate(8, 8).unwrap_err().field, "x_max");
        assert_eq!(BBox::new(0, 0, 4, 9).validate(8, 8).unwrap_err().field, "y_max");
        assert!(BBox::new(0, 0, 8, 8).validate(8, 8).is_ok());
    }

    #[test]
    fn rescale_keeps_at_least_one_cell() {
        let b = BBox::new(5, 5, 6, 6).rescale((32, 32), (8, 8));
        assert_eq!(b, BBox::new(1, 1, 2, 2));
        assert_eq!(BBox::full(32, 32).rescale((32, 32), (8, 8)), BBox::full(8, 8));
    }

    #[test]
    fn stratified_split_is_deterministic_and_covers() {
        let samples = (0..20).map(|i| sample(&format!("s{i}"), i % 2)).collect();
        let ds = Dataset::new(samples, 2).unwrap();
        let (a1, b1) = ds.stratified_split(0.25, 7).unwrap();
        let (a2, b2) = ds.stratified_split(0.25, 7).unwrap();
        let ids = |d: &Dataset| d.samples().iter().map(|s| s.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a1), ids(&a2));
        assert_eq!(ids(&b1), ids(&b2));
        assert_eq!(a1.len() + b1.len(), 20);
        assert_eq!(b1.class_counts(), &[3, 3]);
    }

    #[test]
    fn attention_map_range_checked() {
        assert!(AttentionMap::new("x", 1, 2, vec![0.0, 1.5]).is_err());
        assert!(AttentionMap::new("x", 1, 2, vec![0.0, 1.0]).is_ok());
    }
}
