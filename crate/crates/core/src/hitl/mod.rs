//! Human-knowledge insertion: audit where the attention falls relative to
//! object boxes, pick the badly localised samples, and fine-tune with
//! copy-replace augmentation on that pool.

mod audit;
mod finetune;

use std::borrow::Cow;
use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use audit::{
    attention_split, audit_sample, binarize_attention, frac_attention_outside, read_audit_csv, write_audit_csv,
    AttentionAudit, BinaryMap, DEFAULT_THRESHOLD,
};
pub use finetune::{audit_model, hitl_finetune, FinetuneConfig, FinetuneOutcome, FinetuneRun};

use crate::data::{BBox, Dataset};
use crate::harness::{seeded_rng, RngStream, TrainItem};
use crate::imaging::{resize_bilinear, Image};
use crate::{Error, Result};

/// Training samples split into the copy-replace pool and the rest.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPool {
    pub annotated: Vec<(String, BBox)>,
    pub plain: Vec<String>,
}

impl AugmentationPool {
    /// Every sample plain.
    pub fn vanilla(dataset: &Dataset) -> Self {
        Self {
            annotated: Vec::new(),
            plain: dataset.samples().iter().map(|s| s.id.clone()).collect(),
        }
    }
}

/// Samples whose outside-attention fraction exceeds `lambda_out` go to the
/// annotated pool (and are marked selected); the rest stay plain.
pub fn select_pool(audits: &mut [AttentionAudit], lambda_out: f64) -> Result<AugmentationPool> {
    let mut pool = AugmentationPool::default();
    let mut missing = Vec::new();
    for a in audits.iter_mut() {
        a.selected = a.frac_out > lambda_out;
        if a.selected {
            match a.bbox {
                Some(b) => pool.annotated.push((a.sample_id.clone(), b)),
                None => missing.push(a.sample_id.clone()),
            }
        } else {
            pool.plain.push(a.sample_id.clone());
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingBBoxes(missing));
    }
    Ok(pool)
}

/// Replaces the `target_box` region of `target` with the `source_box` patch of
/// `source`, bilinearly resized to fit. Pixels outside `target_box` are copied
/// unchanged.
pub fn copy_replace(source: &Image, source_box: &BBox, target: &Image, target_box: &BBox) -> Result<Image> {
    if source.channels() != target.channels() {
        return Err(Error::Shape(format!(
            "cannot paste a {}-channel patch into a {}-channel image",
            source.channels(),
            target.channels()
        )));
    }
    source_box
        .validate(source.width(), source.height())
        .map_err(|v| Error::Shape(format!("source box: {v}")))?;
    target_box
        .validate(target.width(), target.height())
        .map_err(|v| Error::Shape(format!("target box: {v}")))?;
    let patch = resize_bilinear(&source.crop(source_box), target_box.width(), target_box.height());
    let mut out = target.clone();
    out.paste(&patch, target_box.x_min as usize, target_box.y_min as usize);
    Ok(out)
}

/// One epoch of training items in dataset order. Each annotated sample keeps
/// its background but has its object replaced by that of a partner drawn
/// uniformly (with replacement) from the annotated pool; it takes the
/// partner's label, and its box stays where the pasted object now sits.
/// Plain samples pass through untouched.
pub fn build_augmented_epoch<'a>(
    dataset: &'a Dataset,
    pool: &AugmentationPool,
    seed: u64,
    epoch: usize,
) -> Result<Vec<TrainItem<'a>>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let boxes: HashMap<&str, BBox> = pool.annotated.iter().map(|(id, b)| (id.as_str(), *b)).collect();
    let partners: Vec<(&crate::data::Sample, BBox)> = pool
        .annotated
        .iter()
        .map(|(id, b)| {
            dataset
                .get(id)
                .map(|s| (s, *b))
                .ok_or_else(|| Error::UnknownSample(id.clone()))
        })
        .collect::<Result<_>>()?;
    let mut rng = seeded_rng(seed, epoch as u64, RngStream::Pairing);
    dataset
        .samples()
        .iter()
        .map(|s| match boxes.get(s.id.as_str()) {
            Some(target_box) => {
                let (partner, partner_box) = &partners[rng.random_range(0..partners.len())];
                let image = copy_replace(&partner.image, partner_box, &s.image, target_box)?;
                Ok(TrainItem {
                    id: &s.id,
                    image: Cow::Owned(image),
                    label: partner.label,
                    bbox: Some(*target_box),
                })
            }
            None => Ok(TrainItem::from_sample(s)),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;

    fn audit(id: &str, frac: f64, bbox: Option<BBox>) -> AttentionAudit {
        AttentionAudit {
            sample_id: id.into(),
            frac_out: frac,
            total_on_pixels: 10,
            selected: false,
            zero_attention: false,
            bbox,
        }
    }

    #[test]
    fn select_examples() {
        let b = Some(BBox::new(0, 0, 2, 2));
        let mut audits = vec![audit("1", 0.05, b), audit("2", 0.25, b), audit("3", 0.60, b)];
        let pool = select_pool(&mut audits, 0.2).unwrap();
        let ids: Vec<&str> = pool.annotated.iter().map(|(i, _)| i.as_str()).collect();
        assert_eq!(ids, vec!["2", "3"]);
        assert_eq!(pool.plain, vec!["1".to_string()]);
        assert!(audits[1].selected && !audits[0].selected);
        assert!(select_pool(&mut audits, 1.0).unwrap().annotated.is_empty());
    }

    #[test]
    fn selected_without_box_is_error() {
        let mut audits = vec![audit("x", 0.9, None), audit("y", 0.9, None)];
        match select_pool(&mut audits, 0.5).unwrap_err() {
            Error::MissingBBoxes(ids) => assert_eq!(ids, vec!["x", "y"]),
            e => panic!("unexpected {e}"),
        }
    }

    fn img(w: usize, h: usize, seed: u8) -> Image {
        let data = (0..w * h * 3).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)).collect();
        Image::from_raw(w, h, 3, data).unwrap()
    }

    #[test]
    fn identity_paste() {
        let a = img(12, 10, 1);
        let b = BBox::new(2, 3, 9, 8);
        assert_eq!(copy_replace(&a, &b, &a, &b).unwrap(), a);
    }

    #[test]
    fn paste_is_local() {
        let src = img(20, 20, 5);
        let dst = img(40, 40, 9);
        let sb = BBox::new(0, 0, 10, 10);
        let tb = BBox::new(10, 5, 30, 25);
        let out = copy_replace(&src, &sb, &dst, &tb).unwrap();
        for y in 0..40 {
            for x in 0..40 {
                if !tb.contains(x, y) {
                    assert_eq!(out.pixel(x, y), dst.pixel(x, y));
                }
            }
        }
        assert_ne!(out, dst);
    }

    #[test]
    fn epoch_swaps_objects_and_labels() {
        let mk = |id: &str, label: usize, v: u8| Sample {
            id: id.into(),
            image: Image::filled(8, 8, &[v, v, v]),
            label,
            bbox: Some(BBox::new(2, 2, 6, 6)),
        };
        let ds = Dataset::new(vec![mk("a", 0, 10), mk("b", 1, 200), mk("c", 2, 90)], 3).unwrap();
        let pool = AugmentationPool {
            annotated: vec![("a".into(), BBox::new(2, 2, 6, 6)), ("b".into(), BBox::new(2, 2, 6, 6))],
            plain: vec!["c".into()],
        };
        let e1 = build_augmented_epoch(&ds, &pool, 3, 0).unwrap();
        let e2 = build_augmented_epoch(&ds, &pool, 3, 0).unwrap();
        assert_eq!(e1.len(), 3);
        for (x, y) in e1.iter().zip(&e2) {
            assert_eq!(x.image.as_raw(), y.image.as_raw());
            assert_eq!(x.label, y.label);
        }
        for item in &e1[..2] {
            // background kept, object from the partner whose label it carries
            let partner_value = if item.label == 0 { 10 } else { 200 };
            assert_eq!(item.image.pixel(3, 3)[0], partner_value);
            let own = if item.id == "a" { 10 } else { 200 };
            assert_eq!(item.image.pixel(0, 0)[0], own);
        }
        assert!(matches!(e1[2].image, Cow::Borrowed(_)));
        assert_eq!(e1[2].label, 2);
    }
}
