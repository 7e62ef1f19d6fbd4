//! CIFAR-10/100 "binary version" batches.
//!
//! CIFAR-10 records are one label byte followed by 3072 planar RGB bytes;
//! CIFAR-100 records carry a coarse and a fine label byte (the fine label is
//! used).

use std::fs;
use std::path::{Path, PathBuf};

use super::{write_folder_manifest, Dataset, Sample};
use crate::imaging::Image;
use crate::{Error, Result};

const SIDE: usize = 32;
const PIXELS: usize = SIDE * SIDE * 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CifarSplit {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Layout {
    Cifar10,
    Cifar100,
}

impl Layout {
    fn of(path: &Path) -> Option<Layout> {
        let name = path.file_name()?.to_str()?;
        if name.starts_with("data_batch") || name.starts_with("test_batch") {
            Some(Layout::Cifar10)
        } else if name == "train.bin" || name == "test.bin" {
            Some(Layout::Cifar100)
        } else {
            None
        }
    }

    fn label_bytes(self) -> usize {
        match self {
            Layout::Cifar10 => 1,
            Layout::Cifar100 => 2,
        }
    }

    fn num_classes(self) -> usize {
        match self {
            Layout::Cifar10 => 10,
            Layout::Cifar100 => 100,
        }
    }
}

fn batch_files(dir: &Path, split: CifarSplit) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            match split {
                CifarSplit::Train => name.starts_with("data_batch") || name == "train.bin",
                CifarSplit::Test => name.starts_with("test_batch") || name == "test.bin",
            }
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::ingest(dir, format!("no CIFAR {split:?} batch files")));
    }
    Ok(files)
}

fn read_batch(path: &Path, split_tag: &str, offset: usize, out: &mut Vec<Sample>) -> Result<Layout> {
    let layout = Layout::of(path)
        .ok_or_else(|| Error::ingest(path, "unrecognised CIFAR batch file name"))?;
    let bytes = fs::read(path).map_err(|e| Error::ingest(path, e.to_string()))?;
    let record = layout.label_bytes() + PIXELS;
    if bytes.len() % record != 0 {
        return Err(Error::ingest(
            path,
            format!("size {} is not a multiple of the {record}-byte record", bytes.len()),
        ));
    }
    for (i, rec) in bytes.chunks_exact(record).enumerate() {
        let label = rec[layout.label_bytes() - 1] as usize;
        let planes = &rec[layout.label_bytes()..];
        let mut data = Vec::with_capacity(PIXELS);
        for p in 0..SIDE * SIDE {
            data.extend_from_slice(&[planes[p], planes[SIDE * SIDE + p], planes[2 * SIDE * SIDE + p]]);
        }
        out.push(Sample {
            id: format!("{split_tag}_{:05}", offset + i),
            image: Image::from_raw(SIDE, SIDE, 3, data)?,
            label,
            bbox: None,
        });
    }
    Ok(layout)
}

/// Loads a batch file, or all batches of `split` when `path` is a directory.
pub fn load_cifar_binary(path: &Path, split: CifarSplit, num_classes: Option<usize>) -> Result<Dataset> {
    let files = if path.is_dir() {
        batch_files(path, split)?
    } else {
        vec![path.to_path_buf()]
    };
    let tag = match split {
        CifarSplit::Train => "train",
        CifarSplit::Test => "test",
    };
    let mut samples = Vec::new();
    let mut layout = None;
    for f in &files {
        layout = Some(read_batch(f, tag, samples.len(), &mut samples)?);
    }
    let k = num_classes.unwrap_or_else(|| layout.map_or(10, Layout::num_classes));
    Dataset::new(samples, k)
}

/// Converts CIFAR binary batches into a PNG folder with a manifest.
pub fn convert_cifar(src: &Path, split: CifarSplit, out_dir: &Path) -> Result<(Dataset, PathBuf)> {
    let ds = load_cifar_binary(src, split, None)?;
    let manifest = write_folder_manifest(&ds, out_dir)?;
    Ok((ds, manifest))
}
