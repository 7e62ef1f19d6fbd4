use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{AttentionMap, BBox};
use crate::{Error, Result};

pub const DEFAULT_THRESHOLD: f32 = 0.2;

/// Row-major 0/1 map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMap {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<u8>,
}

impl BinaryMap {
    pub fn on_pixels(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }
}

/// Pixels at or above `threshold` become 1.
pub fn binarize_attention(attn: &AttentionMap, threshold: f32) -> Result<BinaryMap> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("binarization threshold {threshold} must lie in (0, 1)")));
    }
    Ok(BinaryMap {
        height: attn.height,
        width: attn.width,
        bits: attn.values.iter().map(|&v| u8::from(v >= threshold)).collect(),
    })
}

/// Fractions of the on-pixels outside and inside `bbox`, and the on-pixel
/// count. Both fractions are 0 when nothing is on.
pub fn attention_split(binary: &BinaryMap, bbox: &BBox) -> (f64, f64, usize) {
    let (mut inside, mut total) = (0usize, 0usize);
    for y in 0..binary.height {
        for x in 0..binary.width {
            if binary.bits[y * binary.width + x] == 1 {
                total += 1;
                if bbox.contains(x, y) {
                    inside += 1;
                }
            }
        }
    }
    if total == 0 {
        return (0.0, 0.0, 0);
    }
    let outside = total - inside;
    (outside as f64 / total as f64, inside as f64 / total as f64, total)
}

/// `(on-pixels outside bbox) / (on-pixels)`; 0 for an all-off map.
/// `bbox` must be in the map's coordinates.
pub fn frac_attention_outside(binary: &BinaryMap, bbox: &BBox) -> f64 {
    attention_split(binary, bbox).0
}

/// Outcome of auditing one sample's attention against its object box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionAudit {
    pub sample_id: String,
    pub frac_out: f64,
    pub total_on_pixels: usize,
    pub selected: bool,
    /// Set when no pixel passed the threshold; `frac_out` is then 0.
    #[serde(default)]
    pub zero_attention: bool,
    #[serde(default)]
    pub bbox: Option<BBox>,
}

/// Audits one map against a box given in image pixels: the map is resized
/// to the image size, binarized, then compared with the box.
pub fn audit_sample(
    attn: &AttentionMap,
    bbox: Option<BBox>,
    image_size: (usize, usize),
    threshold: f32,
) -> Result<AttentionAudit> {
    let (w, h) = image_size;
    let upscaled = attn.resized(h, w);
    let binary = binarize_attention(&upscaled, threshold)?;
    let (frac_out, total) = match &bbox {
        Some(b) => {
            b.validate(w, h)
                .map_err(|v| Error::validation(&attn.sample_id, format!("invalid bbox: {v}")))?;
            let (out, _, total) = attention_split(&binary, b);
            (out, total)
        }
        None => (0.0, binary.on_pixels()),
    };
    Ok(AttentionAudit {
        sample_id: attn.sample_id.clone(),
        frac_out,
        total_on_pixels: total,
        selected: false,
        zero_attention: total == 0,
        bbox,
    })
}

/// Writes `sample_id,frac_out,total_on_pixels,selected`.
pub fn write_audit_csv(audits: &[AttentionAudit], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sample_id", "frac_out", "total_on_pixels", "selected"])?;
    for a in audits {
        w.write_record([
            a.sample_id.clone(),
            a.frac_out.to_string(),
            a.total_on_pixels.to_string(),
            a.selected.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_audit_csv(path: &Path) -> Result<Vec<AttentionAudit>> {
    #[derive(Deserialize)]
    struct Row {
        sample_id: String,
        frac_out: f64,
        total_on_pixels: usize,
        selected: bool,
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::ingest(path, e.to_string()))?;
    let mut out = Vec::new();
    for row in r.deserialize::<Row>() {
        let row = row.map_err(|e| Error::ingest(path, e.to_string()))?;
        out.push(AttentionAudit {
            sample_id: row.sample_id,
            frac_out: row.frac_out,
            total_on_pixels: row.total_on_pixels,
            selected: row.selected,
            zero_attention: row.total_on_pixels == 0,
            bbox: None,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, values: Vec<f32>) -> AttentionMap {
        AttentionMap::new("s", h, w, values).unwrap()
    }

    #[test]
    fn binarize_examples() {
        let b = binarize_attention(&map(1, 3, vec![0.1, 0.3, 0.2]), 0.2).unwrap();
        assert_eq!(b.bits, vec![0, 1, 1]);
        let z = binarize_attention(&map(2, 2, vec![0.0; 4]), 0.2).unwrap();
        assert_eq!(z.on_pixels(), 0);
        assert!(binarize_attention(&map(1, 1, vec![0.5]), 0.0).is_err());
        assert!(binarize_attention(&map(1, 1, vec![0.5]), 1.0).is_err());
    }

    #[test]
    fn fraction_examples() {
        // 8x8, ten on-pixels: six inside [0,4)x[0,4), four outside
        let mut bits = vec![0u8; 64];
        for &(x, y) in &[(0, 0), (1, 1), (2, 2), (3, 3), (0, 3), (3, 0), (5, 5), (6, 6), (7, 0), (0, 7)] {
            bits[y * 8 + x] = 1;
        }
        let binary = BinaryMap { height: 8, width: 8, bits };
        let bbox = BBox::new(0, 0, 4, 4);
        assert!((frac_attention_outside(&binary, &bbox) - 0.4).abs() < 1e-15);
        assert_eq!(frac_attention_outside(&binary, &BBox::full(8, 8)), 0.0);
        let (out, inside, total) = attention_split(&binary, &bbox);
        assert_eq!(total, 10);
        assert_eq!(out + inside, 1.0);
    }

    #[test]
    fn zero_attention_flagged() {
        let a = audit_sample(&map(4, 4, vec![0.0; 16]), Some(BBox::new(0, 0, 8, 8)), (16, 16), 0.2).unwrap();
        assert_eq!(a.frac_out, 0.0);
        assert!(a.zero_attention);
    }

    #[test]
    fn audit_upscales_map_to_image() {
        // left half hot on a 2x2 map, box over the left half of a 16x16 image
        let a = audit_sample(&map(2, 2, vec![1.0, 0.0, 1.0, 0.0]), Some(BBox::new(0, 0, 8, 16)), (16, 16), 0.2)
            .unwrap();
        assert!(a.total_on_pixels > 0);
        assert!(a.frac_out < 0.25, "{}", a.frac_out);
    }

    #[test]
    fn csv_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("audit.csv");
        let audits = vec![AttentionAudit {
            sample_id: "a".into(),
            frac_out: 0.25,
            total_on_pixels: 12,
            selected: true,
            zero_attention: false,
            bbox: None,
        }];
        write_audit_csv(&audits, &p).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("sample_id,frac_out,total_on_pixels,selected\n"));
        assert_eq!(read_audit_csv(&p).unwrap(), audits);
    }
}
