use std::path::{Path, PathBuf};

use candle_core::DType;
use serde::{Deserialize, Serialize};

use crate::metrics::EpochMetrics;
use crate::model::{ModelConfig, Msabn};
use crate::nn::ParamStore;
use crate::{Error, Result};

/// JSON sidecar stored next to the weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub epoch: usize,
    #[serde(default)]
    pub metrics: Vec<EpochMetrics>,
    pub seed: u64,
}

/// `(weights, sidecar)` for a checkpoint given as `dir/stem`, with or without
/// an extension.
pub fn checkpoint_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("safetensors") | Some("json") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let with = |ext: &str| {
        let mut s = stem.clone().into_os_string();
        s.push(".");
        s.push(ext);
        PathBuf::from(s)
    };
    (with("safetensors"), with("json"))
}

/// Writes both files via temporary names and renames, so an interrupted
/// write leaves the previous checkpoint intact. Returns the weights path.
pub fn save_checkpoint(store: &ParamStore, meta: &CheckpointMeta, path: &Path) -> Result<PathBuf> {
    let (weights, sidecar) = checkpoint_paths(path);
    if let Some(dir) = weights.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp_weights = weights.with_extension("safetensors.tmp");
    let tmp_sidecar = sidecar.with_extension("json.tmp");
    store.save_safetensors(&tmp_weights)?;
    std::fs::write(&tmp_sidecar, serde_json::to_string_pretty(meta)?)?;
    std::fs::rename(&tmp_weights, &weights)?;
    std::fs::rename(&tmp_sidecar, &sidecar)?;
    Ok(weights)
}

pub fn read_checkpoint_meta(path: &Path) -> Result<CheckpointMeta> {
    let (_, sidecar) = checkpoint_paths(path);
    let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::ingest(&sidecar, e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| Error::ingest(&sidecar, e.to_string()))
}

/// Rebuilds the model from the sidecar config and loads the weights.
pub fn load_checkpoint(path: &Path, dtype: DType) -> Result<(Msabn, ParamStore, CheckpointMeta)> {
    let meta = read_checkpoint_meta(path)?;
    let (weights, _) = checkpoint_paths(path);
    if !weights.exists() {
        return Err(Error::ingest(&weights, "checkpoint weights not found"));
    }
    let (model, store) = Msabn::build(meta.config.clone(), dtype, meta.seed)?;
    store.load_safetensors(&weights)?;
    Ok((model, store, meta))
}
