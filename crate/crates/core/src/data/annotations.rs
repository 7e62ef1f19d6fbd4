use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{BBox, Dataset};
use crate::{Error, Result};

/// A user-supplied bounding box correction for one sample.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub sample_id: String,
    pub bbox: BBox,
    pub author: String,
    /// UTC seconds since the Unix epoch.
    pub timestamp: u64,
}

impl AnnotationRecord {
    pub fn now(sample_id: impl Into<String>, bbox: BBox, author: impl Into<String>) -> Self {
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            sample_id: sample_id.into(),
            bbox,
            author: author.into(),
            timestamp,
        }
    }

    pub fn validate_against(&self, dataset: &Dataset) -> Result<()> {
        let sample = dataset
            .get(&self.sample_id)
            .ok_or_else(|| Error::UnknownSample(self.sample_id.clone()))?;
        self.bbox
            .validate(sample.image.width(), sample.image.height())
            .map_err(|v| Error::validation(&self.sample_id, format!("invalid bbox: {v}")))
    }
}

/// Append-only newline-delimited JSON store. Writes are serialized through
/// an internal lock; reads see whole lines only.
#[derive(Debug)]
pub struct AnnotationStore {
    path: PathBuf,
    write_lock: Mutex<()>,
}

impl AnnotationStore {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        Ok(Self {
            path,
            write_lock: Mutex::new(()),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, record: &AnnotationRecord) -> Result<()> {
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        let _guard = self.write_lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut file = OpenOptions::new().create(true).append(true).open(&self.path)?;
        file.write_all(line.as_bytes())?;
        file.flush()?;
        Ok(())
    }

    /// All records in append order. A missing file is an empty store.
    pub fn load(&self) -> Result<Vec<AnnotationRecord>> {
        let text = match fs::read_to_string(&self.path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| Error::ingest(&self.path, format!("line {}: {e}", i + 1)))
            })
            .collect()
    }

    /// Latest record per sample (later lines win).
    pub fn latest(&self) -> Result<HashMap<String, AnnotationRecord>> {
        Ok(self
            .load()?
            .into_iter()
            .map(|r| (r.sample_id.clone(), r))
            .collect())
    }

    /// Raw JSONL contents.
    pub fn dump(&self) -> Result<String> {
        match fs::read_to_string(&self.path) {
            Ok(t) => Ok(t),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(String::new()),
            Err(e) => Err(e.into()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn append_then_latest_wins() {
        let tmp = tempfile::tempdir().unwrap();
        let store = AnnotationStore::open(tmp.path().join("ann/store.jsonl")).unwrap();
        assert!(store.load().unwrap().is_empty());
        store
            .append(&AnnotationRecord {
                sample_id: "a".into(),
                bbox: BBox::new(0, 0, 2, 2),
                author: "x".into(),
                timestamp: 1,
            })
            .unwrap();
        store
            .append(&AnnotationRecord {
                sample_id: "a".into(),
                bbox: BBox::new(1, 1, 3, 3),
                author: "y".into(),
                timestamp: 2,
            })
            .unwrap();
        assert_eq!(store.load().unwrap().len(), 2);
        assert_eq!(store.latest().unwrap()["a"].bbox, BBox::new(1, 1, 3, 3));
        assert_eq!(store.dump().unwrap().lines().count(), 2);
    }

    #[test]
    fn corrupt_line_reports_position() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("s.jsonl");
        fs::write(&p, "{not json}\n").unwrap();
        let err = AnnotationStore::open(&p).unwrap().load().unwrap_err();
        assert!(err.to_string().contains("line 1"));
    }
}
