use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BBox, Dataset, Sample};
use crate::imaging::Image;
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Deserialize, Serialize)]
struct Row {
    id: String,
    path: String,
    label: String,
    #[serde(default)]
    x_min: Option<String>,
    #[serde(default)]
    y_min: Option<String>,
    #[serde(default)]
    x_max: Option<String>,
    #[serde(default)]
    y_max: Option<String>,
}

fn parse_bbox(row: &Row) -> Result<Option<BBox>> {
    let fields = [&row.x_min, &row.y_min, &row.x_max, &row.y_max];
    let present: Vec<&str> = fields
        .iter()
        .filter_map(|f| f.as_deref().map(str::trim).filter(|s| !s.is_empty()))
        .collect();
    match present.len() {
        0 => Ok(None),
        4 => {
            let mut v = [0u32; 4];
            for (slot, text) in v.iter_mut().zip(&present) {
                *slot = text.parse().map_err(|_| {
                    Error::validation(&row.id, format!("bbox coordinate {text:?} is not a non-negative integer"))
                })?;
            }
            Ok(Some(BBox::new(v[0], v[1], v[2], v[3])))
        }
        n => Err(Error::validation(
            &row.id,
            format!("bbox needs all four coordinates, found {n}"),
        )),
    }
}

/// Reads a folder manifest. `path` may be the CSV itself or its directory.
pub fn load_folder_manifest(path: &Path, num_classes: Option<usize>) -> Result<Dataset> {
    let manifest = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    if !manifest.exists() {
        return Err(Error::ingest(&manifest, "manifest not found"));
    }
    let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(&manifest)
        .map_err(|e| Error::ingest(&manifest, e.to_string()))?;

    let mut samples = Vec::new();
    for row in reader.deserialize::<Row>() {
        let row = row.map_err(|e| Error::ingest(&manifest, e.to_string()))?;
        let label: usize = row
            .label
            .trim()
            .parse()
            .map_err(|_| Error::validation(&row.id, format!("label {:?} is not a class index", row.label)))?;
        let bbox = parse_bbox(&row)?;
        let image_path: PathBuf = base.join(&row.path);
        if !image_path.exists() {
            return Err(Error::ingest(&image_path, format!("image for sample {} not found", row.id)));
        }
        let image = Image::load_png(&image_path)?;
        samples.push(Sample {
            id: row.id,
            image,
            label,
            bbox,
        });
    }
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let k = num_classes.unwrap_or_else(|| samples.iter().map(|s| s.label).max().unwrap_or(0) + 1);
    Dataset::new(samples, k)
}

fn file_stem_for(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

/// Writes every sample as `images/<id>.png` plus `manifest.csv` under `dir`.
pub fn write_folder_manifest(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    let images = dir.join("images");
    fs::create_dir_all(&images)?;
    let manifest = dir.join(MANIFEST_FILE);
    let mut writer = csv::Writer::from_path(&manifest)?;
    writer.write_record(["id", "path", "label", "x_min", "y_min", "x_max", "y_max"])?;
    for s in dataset.samples() {
        let rel = format!("images/{}.png", file_stem_for(&s.id));
        s.image.save_png(&dir.join(&rel))?;
        let coords = match s.bbox {
            Some(b) => [b.x_min, b.y_min, b.x_max, b.y_max].map(|v| v.to_string()),
            None => Default::default(),
        };
        let label = s.label.to_string();
        let mut record = vec![s.id.as_str(), rel.as_str(), label.as_str()];
        record.extend(coords.iter().map(String::as_str));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_fixture(dir: &Path, rows: &[&str]) {
        fs::create_dir_all(dir.join("images")).unwrap();
        for name in ["a", "b", "c"] {
            Image::filled(8, 6, &[10, 20, 30])
                .save_png(&dir.join(format!("images/{name}.png")))
                .unwrap();
        }
        let mut text = String::from("id,path,label,x_min,y_min,x_max,y_max\n");
        for r in rows {
            text.push_str(r);
            text.push('\n');
        }
        fs::write(dir.join(MANIFEST_FILE), text).unwrap();
    }

    #[test]
    fn three_rows_two_classes() {
        let tmp = tempfile::tempdir().unwrap();
        write_fixture(
            tmp.path(),
            &[
                "a,images/a.png,0,1,1,4,4",
                "b,images/b.png,1,,,,",
                "c,images/c.png,0,0,0,8,6",
            ],
        );
        let ds = load_folder_manifest(tmp.path(), Some(2)).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.class_counts(), &[2, 1]);
        assert_eq!(ds.samples()[0].bbox, Some(BBox::new(1, 1, 4, 4)));
        assert_eq!(ds.samples()[1].bbox, None);
        assert_eq!(ds.samples()[2].image.channels(), 3);
    }

    #[test]
    fn empty_manifest_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        write_fixture(tmp.path(), &[]);
        let err = load_folder_manifest(tmp.path(), Some(2)).unwrap_err();
        assert_eq!(err.to_string(), "empty dataset");
    }

    #[test]
    fn degenerate_bbox_names_sample() {
        let tmp = tempfile::tempdir().unwrap();
        write_fixture(tmp.path(), &["a,images/a.png,0,3,1,3,4"]);
        match load_folder_manifest(tmp.path(), Some(2)).unwrap_err() {
            Error::Validation { id, .. } => assert_eq!(id, "a"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn partial_bbox_and_label_range() {
        let tmp = tempfile::tempdir().unwrap();
        write_fixture(tmp.path(), &["b,images/b.png,0,1,1,,"]);
        assert!(matches!(
            load_folder_manifest(tmp.path(), None),
            Err(Error::Validation { ref id, .. }) if id == "b"
        ));
        write_fixture(tmp.path(), &["c,images/c.png,5"]);
        assert!(matches!(
            load_folder_manifest(tmp.path(), Some(2)),
            Err(Error::Validation { ref id, .. }) if id == "c"
        ));
    }

    #[test]
    fn missing_image_names_path() {
        let tmp = tempfile::tempdir().unwrap();
        write_fixture(tmp.path(), &["z,images/zzz.png,0"]);
        let err = load_folder_manifest(tmp.path(), None).unwrap_err();
        assert!(err.to_string().contains("zzz.png"), "{err}");
    }
}
