//! Training and evaluation orchestration, checkpoints, overlay export and
//! the annotation HTTP service.

mod augment;
mod checkpoint;
mod config;
mod evaluate;
mod overlay;
pub mod service;
mod train;

use std::borrow::Cow;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use augment::{apply_augmentations, fit_box_to_input, fit_to_input, Augmentation};
pub use checkpoint::{checkpoint_paths, load_checkpoint, read_checkpoint_meta, save_checkpoint, CheckpointMeta};
pub use config::{DataSource, DATA_ROOT_ENV, OptimizerConfig, TrainConfig};
pub use evaluate::{evaluate, evaluate_checkpoints, evaluate_dataset, AggregateReport, EvalReport, EvalResult};
pub(crate) use evaluate::run_dataset;
pub use overlay::{export_overlays, overlay_image, OverlayEntry, OverlayManifest};
pub use train::{fit, read_metrics, train, train_on, FitReport, FitSettings, LrSchedule, Sgd, TrainOutcome};

use crate::data::{BBox, Sample};
use crate::imaging::Image;

/// One image/label pair fed to the optimiser.
#[derive(Clone, Debug)]
pub struct TrainItem<'a> {
    pub id: &'a str,
    pub image: Cow<'a, Image>,
    pub label: usize,
    pub bbox: Option<BBox>,
}

impl<'a> TrainItem<'a> {
    pub fn from_sample(s: &'a Sample) -> Self {
        Self {
            id: &s.id,
            image: Cow::Borrowed(&s.image),
            label: s.label,
            bbox: s.bbox,
        }
    }
}

/// Independent random streams derived from one run seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RngStream {
    Shuffle = 1,
    Augment = 2,
    Pairing = 3,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn seeded_rng(seed: u64, index: u64, stream: RngStream) -> ChaCha8Rng {
    let mixed = splitmix(splitmix(seed) ^ splitmix(index.wrapping_mul(31).wrapping_add(stream as u64)));
    ChaCha8Rng::seed_from_u64(mixed)
}
