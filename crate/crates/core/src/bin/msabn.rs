use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use candle_core::DType;
use clap::{Args, Parser, Subcommand};

use msabn::data::{
    convert_cifar, load_dataset, synthetic, write_folder_manifest, AnnotationStore, CifarSplit, Dataset, DatasetFormat,
};
use msabn::harness::{
    evaluate_checkpoints, export_overlays, load_checkpoint, read_checkpoint_meta, service, train, DataSource,
    TrainConfig,
};
use msabn::hitl::{audit_model, hitl_finetune, select_pool, write_audit_csv, FinetuneConfig, DEFAULT_THRESHOLD};
use msabn::model::{BackboneKind, Mechanism};

#[derive(Parser)]
#[command(name = "msabn", version, about = "Train, audit and fine-tune multi-scale attention branch networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Manifest CSV, a directory with manifest.csv, or CIFAR .bin file(s).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "folder_manifest")]
    format: DatasetFormat,
}

impl DataArgs {
    fn load(&self, num_classes: usize) -> Result<Dataset> {
        let src = DataSource::new(&self.data, self.format);
        src.load(num_classes)
            .with_context(|| format!("loading {}", self.data.display()))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a JSON config or a named preset.
    Train {
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        /// cifar100, imagenet, diagset, fine_grained or smoke
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        format: Option<DatasetFormat>,
        #[arg(long)]
        val_data: Option<PathBuf>,
        #[arg(long)]
        num_classes: Option<usize>,
        #[arg(long)]
        backbone: Option<BackboneKind>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        input_size: Option<usize>,
        #[arg(long)]
        mechanism: Option<Mechanism>,
        /// Single-scale attention (f3 only).
        #[arg(long)]
        single_scale: bool,
        #[arg(long)]
        puzzle: bool,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score one or more checkpoints; several give mean±std.
    Evaluate {
        #[arg(long = "ckpt", required = true)]
        checkpoints: Vec<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 64)]
        batch: usize,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Write images, attention overlays and manifest.json for the annotation UI.
    ExportOverlays {
        #[arg(long)]
        ckpt: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f32,
        #[arg(long, default_value_t = 64)]
        batch: usize,
    },
    /// Measure how much attention falls outside each object box.
    Audit {
        #[arg(long)]
        ckpt: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f32,
        #[arg(long, default_value_t = 0.2)]
        lambda_out: f64,
        /// Annotation JSONL whose boxes override the dataset's.
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long, default_value = "audit.csv")]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        batch: usize,
    },
    /// Fine-tune a checkpoint with copy-replace on badly localised samples.
    Finetune {
        #[arg(long)]
        ckpt: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        val_data: Option<PathBuf>,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long, default_value_t = 0.2)]
        lambda_out: f64,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f32,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        puzzle: bool,
        /// Also run plain fine-tuning from the same checkpoint.
        #[arg(long)]
        control_vanilla: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the annotation API over an overlay export.
    Serve {
        #[arg(long)]
        export_dir: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Convert CIFAR binary batches into PNGs plus a manifest.
    ConvertCifar {
        #[arg(long)]
        src: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic shapes-on-textures dataset with boxes.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        /// Probability that the background texture matches the class.
        #[arg(long)]
        correlation: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_overrides(path: Option<&Path>) -> Result<HashMap<String, msabn::data::AnnotationRecord>> {
    match path {
        Some(p) => Ok(AnnotationStore::open(p)?.latest()?),
        None => Ok(HashMap::new()),
    }
}

#[allow(clippy::too_many_arguments)]
fn build_train_config(
    config: Option<PathBuf>,
    preset: Option<String>,
    data: Option<PathBuf>,
    format: Option<DatasetFormat>,
    val_data: Option<PathBuf>,
    num_classes: Option<usize>,
    backbone: Option<BackboneKind>,
    width: Option<usize>,
    input_size: Option<usize>,
    mechanism: Option<Mechanism>,
    single_scale: bool,
    puzzle: bool,
    epochs: Option<usize>,
    batch: Option<usize>,
    lr: Option<f64>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<TrainConfig> {
    let mut cfg = match (config, preset) {
        (Some(path), _) => TrainConfig::from_json_file(&path)?,
        (None, Some(name)) => TrainConfig::preset(&name, "runs/train")?,
        (None, None) => bail!("pass --config or --preset"),
    };
    if let Some(d) = data {
        let fmt = format.or(cfg.train_data.as_ref().map(|s| s.format)).unwrap_or(DatasetFormat::FolderManifest);
        cfg.train_data = Some(DataSource::new(d, fmt));
    }
    if let Some(v) = val_data {
        let fmt = format.or(cfg.train_data.as_ref().map(|s| s.format)).unwrap_or(DatasetFormat::FolderManifest);
        cfg.val_data = Some(DataSource::new(v, fmt));
    }
    if let Some(k) = num_classes {
        cfg.model.num_classes = k;
    }
    if let Some(b) = backbone {
        cfg.model.backbone = b;
    }
    if width.is_some() {
        cfg.model.width = width;
    }
    if let Some(s) = input_size {
        cfg.model.input_size = s;
    }
    if let Some(m) = mechanism {
        cfg.model.mechanism = m;
    }
    if single_scale {
        cfg.model.multiscale = false;
    }
    cfg.puzzle |= puzzle;
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    if let Some(b) = batch {
        cfg.batch_size = b;
    }
    if let Some(lr) = lr {
        cfg.optimizer.base_lr = lr;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.out_dir = o;
    }
    Ok(cfg)
}

fn checkpoint_classes(ckpt: &Path) -> Result<usize> {
    Ok(read_checkpoint_meta(ckpt)
        .with_context(|| format!("reading checkpoint {}", ckpt.display()))?
        .config
        .num_classes)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train {
            config,
            preset,
            data,
            format,
            val_data,
            num_classes,
            backbone,
            width,
            input_size,
            mechanism,
            single_scale,
            puzzle,
            epochs,
            batch,
            lr,
            seed,
            out,
        } => {
            let cfg = build_train_config(
                config, preset, data, format, val_data, num_classes, backbone, width, input_size, mechanism,
                single_scale, puzzle, epochs, batch, lr, seed, out,
            )?;
            let outcome = train(&cfg)?;
            let r = &outcome.report;
            match (r.best_epoch, r.best_val_acc) {
                (Some(e), Some(acc)) => println!("best val acc {acc:.2} at epoch {e}"),
                _ => println!("training finished"),
            }
            println!("checkpoints in {}", cfg.out_dir.display());
        }
        Command::Evaluate {
            checkpoints,
            data,
            batch,
            json,
        } => {
            let k = checkpoint_classes(&checkpoints[0])?;
            let ds = data.load(k)?;
            let report = evaluate_checkpoints(&checkpoints, &ds, batch)?;
            for run in &report.runs {
                println!("{}: acc {:.2} bal_acc {:.2}", run.checkpoint.display(), run.acc, run.bal_acc);
            }
            println!("acc {}  bal_acc {}", report.acc, report.bal_acc);
            if let Some(p) = json {
                std::fs::write(&p, serde_json::to_string_pretty(&report)?)?;
            }
        }
        Command::ExportOverlays {
            ckpt,
            data,
            out,
            threshold,
            batch,
        } => {
            let (model, _store, meta) = load_checkpoint(&ckpt, DType::F32)?;
            let ds = data.load(meta.config.num_classes)?;
            let manifest = export_overlays(&model, &ds, &out, threshold, batch)?;
            println!("exported {} samples to {}", manifest.entries.len(), out.display());
        }
        Command::Audit {
            ckpt,
            data,
            threshold,
            lambda_out,
            annotations,
            out,
            batch,
        } => {
            let (model, _store, meta) = load_checkpoint(&ckpt, DType::F32)?;
            let ds = data.load(meta.config.num_classes)?;
            let overrides = load_overrides(annotations.as_deref())?;
            let mut audits = audit_model(&model, &ds, &overrides, threshold, batch)?;
            let pool = select_pool(&mut audits, lambda_out)?;
            write_audit_csv(&audits, &out)?;
            println!(
                "{} of {} samples exceed lambda_out {lambda_out}; wrote {}",
                pool.annotated.len(),
                audits.len(),
                out.display()
            );
        }
        Command::Finetune {
            ckpt,
            data,
            val_data,
            annotations,
            lambda_out,
            threshold,
            epochs,
            batch,
            lr,
            seed,
            puzzle,
            control_vanilla,
            out,
        } => {
            let k = checkpoint_classes(&ckpt)?;
            let train_ds = data.load(k)?;
            let val_ds = match val_data {
                Some(v) => Some(DataArgs { data: v, format: data.format }.load(k)?),
                None => None,
            };
            let overrides = load_overrides(annotations.as_deref())?;
            let mut cfg = FinetuneConfig {
                lambda_out,
                threshold,
                epochs,
                batch_size: batch,
                seed,
                puzzle,
                control_vanilla,
                out_dir: Some(out.clone()),
                ..FinetuneConfig::default()
            };
            cfg.optimizer.base_lr = lr;
            let outcome = hitl_finetune(&ckpt, &train_ds, val_ds.as_ref(), &overrides, &cfg)?;
            println!("copy-replace pool: {} samples", outcome.pool.annotated.len());
            if let Some(m) = outcome.run.report.final_val() {
                println!("hitl final val acc {:.2}", m.acc);
            }
            if let Some(m) = outcome.control.as_ref().and_then(|c| c.report.final_val()) {
                println!("vanilla final val acc {:.2}", m.acc);
            }
        }
        Command::Serve {
            export_dir,
            annotations,
            addr,
        } => {
            let state = service::AppState::open(&export_dir, &annotations)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(service::serve(state, addr))?;
        }
        Command::ConvertCifar { src, split, out } => {
            let split = match split.as_str() {
                "train" => CifarSplit::Train,
                "test" => CifarSplit::Test,
                other => bail!("split must be train or test, got {other:?}"),
            };
            let (ds, manifest) = convert_cifar(&src, split, &out)?;
            println!("wrote {} samples, manifest {}", ds.len(), manifest.display());
        }
        Command::Synth {
            out,
            classes,
            per_class,
            size,
            correlation,
            seed,
        } => {
            let cfg = synthetic::SyntheticConfig {
                num_classes: classes,
                per_class,
                image_size: size,
                min_object: (size * 5 / 16).max(2),
                max_object: (size / 2).max(3),
                background_correlation: correlation.unwrap_or(1.0 / classes as f64),
                seed,
                id_prefix: "syn".into(),
            };
            let ds = synthetic::generate(&cfg)?;
            let manifest = write_folder_manifest(&ds, &out)?;
            // round-trip so a broken export fails here rather than at training time
            load_dataset(&manifest, DatasetFormat::FolderManifest, Some(classes))?;
            println!("wrote {} samples, manifest {}", ds.len(), manifest.display());
        }
    }
    Ok(())
}
