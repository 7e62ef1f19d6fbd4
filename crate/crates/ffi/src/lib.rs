//! C ABI over the `msabn` crate.
//!
//! Every fallible call returns an [`MsabnStatus`]; on failure the message is
//! available from [`msabn_last_error`] on the same thread until the next
//! failing call. Models are opaque handles released with
//! [`msabn_model_free`]. Images are interleaved 8-bit buffers, row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use msabn::candle_core::DType;
use msabn::data::{AttentionMap, BBox};
use msabn::harness::load_checkpoint;
use msabn::hitl::{binarize_attention, copy_replace, frac_attention_outside};
use msabn::imaging::Image;
use msabn::model::{images_to_tensor, ModelConfig, Msabn};
use msabn::nn::ParamStore;
use msabn::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MsabnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Shape = 4,
    Numeric = 5,
    Internal = 6,
    Panic = 7,
}

/// Opaque model handle.
pub struct MsabnModel {
    model: Msabn,
    _store: ParamStore,
}

/// Box corners in pixels, `[x_min, x_max) x [y_min, y_max)`.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct MsabnBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl From<MsabnBox> for BBox {
    fn from(b: MsabnBox) -> Self {
        BBox::new(b.x_min, b.y_min, b.x_max, b.y_max)
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let msg = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> MsabnStatus {
    match e {
        Error::Ingest { .. } | Error::Io(_) | Error::Json(_) | Error::Csv(_) | Error::Image(_) => MsabnStatus::Io,
        Error::Shape(_) => MsabnStatus::Shape,
        Error::Numeric { .. } => MsabnStatus::Numeric,
        Error::Tensor(_) => MsabnStatus::Internal,
        _ => MsabnStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (MsabnStatus, String)>) -> MsabnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MsabnStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside msabn");
            MsabnStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (MsabnStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (MsabnStatus, String) {
    (MsabnStatus::NullPointer, format!("{name} is null"))
}

fn invalid(msg: impl Into<String>) -> (MsabnStatus, String) {
    (MsabnStatus::InvalidArgument, msg.into())
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, (MsabnStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{name} is not valid UTF-8")))
}

unsafe fn image_arg(
    pixels: *const u8,
    width: usize,
    height: usize,
    channels: usize,
    name: &str,
) -> Result<Image, (MsabnStatus, String)> {
    if pixels.is_null() {
        return Err(null(name));
    }
    if width == 0 || height == 0 || channels == 0 {
        return Err(invalid(format!("{name} has a zero dimension")));
    }
    let data = std::slice::from_raw_parts(pixels, width * height * channels).to_vec();
    Image::from_raw(width, height, channels, data).map_err(lib_err)
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn msabn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a checkpoint (`.safetensors`, `.json` sidecar, or their common stem).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn msabn_model_load(path: *const c_char, out: *mut *mut MsabnModel) -> MsabnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = str_arg(path, "path")?;
        let (model, store, _) = load_checkpoint(Path::new(path), DType::F32).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(MsabnModel { model, _store: store }));
        Ok(())
    })
}

/// Builds a freshly initialised model from a JSON model config.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn msabn_model_new(config_json: *const c_char, seed: u64, out: *mut *mut MsabnModel) -> MsabnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = str_arg(config_json, "config_json")?;
        let config: ModelConfig = serde_json::from_str(text).map_err(|e| invalid(format!("model config: {e}")))?;
        let (model, store) = Msabn::build(config, DType::F32, seed).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(MsabnModel { model, _store: store }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn msabn_model_free(model: *mut MsabnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of classes, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn msabn_model_num_classes(model: *const MsabnModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config().num_classes)
}

/// Side of the square network input, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn msabn_model_input_size(model: *const MsabnModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config().input_size)
}

/// Side of the square attention map, or 0 when the model has no attention
/// branch or the handle is null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn msabn_model_attention_side(model: *const MsabnModel) -> usize {
    model.as_ref().map_or(0, |m| {
        if m.model.has_attention_branch() {
            m.model.config().attention_side()
        } else {
            0
        }
    })
}

/// Runs one image through the model in inference mode. The image must
/// already be `input_size x input_size`. Writes `num_classes` logits, and
/// when `attention_out` is not null, `attention_side^2` attention values.
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn msabn_model_predict(
    model: *const MsabnModel,
    pixels: *const u8,
    width: usize,
    height: usize,
    channels: usize,
    logits_out: *mut f32,
    logits_len: usize,
    attention_out: *mut f32,
    attention_len: usize,
) -> MsabnStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if logits_out.is_null() {
            return Err(null("logits_out"));
        }
        let cfg = m.model.config();
        if logits_len != cfg.num_classes {
            return Err(invalid(format!("logits_len {logits_len}, model has {} classes", cfg.num_classes)));
        }
        if width != cfg.input_size || height != cfg.input_size {
            return Err((
                MsabnStatus::Shape,
                format!("image is {width}x{height}, model expects {0}x{0}", cfg.input_size),
            ));
        }
        let img = image_arg(pixels, width, height, channels, "pixels")?;
        let x = images_to_tensor(&[&img], DType::F32).map_err(lib_err)?;
        let out = m.model.forward(&x, false).map_err(lib_err)?;
        let logits: Vec<f32> = out
            .logits
            .flatten_all()
            .and_then(|t| t.to_vec1())
            .map_err(|e| lib_err(e.into()))?;
        std::slice::from_raw_parts_mut(logits_out, logits_len).copy_from_slice(&logits);
        if !attention_out.is_null() {
            let branch = out
                .branch
                .as_ref()
                .ok_or_else(|| invalid("model has no attention branch"))?;
            let values: Vec<f32> = branch
                .attention
                .flatten_all()
                .and_then(|t| t.to_vec1())
                .map_err(|e| lib_err(e.into()))?;
            if attention_len != values.len() {
                return Err(invalid(format!("attention_len {attention_len}, map has {}", values.len())));
            }
            std::slice::from_raw_parts_mut(attention_out, attention_len).copy_from_slice(&values);
        }
        Ok(())
    })
}

/// Fraction of attention pixels at or above `threshold` that fall outside
/// `bbox`, with the box given in the map's own coordinates.
///
/// # Safety
/// `attention` must hold `height * width` values and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn msabn_frac_attention_outside(
    attention: *const f32,
    height: usize,
    width: usize,
    bbox: MsabnBox,
    threshold: f32,
    out: *mut f64,
) -> MsabnStatus {
    guard(|| {
        if attention.is_null() {
            return Err(null("attention"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let values = std::slice::from_raw_parts(attention, height * width).to_vec();
        let map = AttentionMap::new("ffi", height, width, values).map_err(lib_err)?;
        let bbox = BBox::from(bbox);
        bbox.validate(width, height).map_err(|v| invalid(format!("bbox {v}")))?;
        let binary = binarize_attention(&map, threshold).map_err(lib_err)?;
        *out = frac_attention_outside(&binary, &bbox);
        Ok(())
    })
}

/// Pastes the `source_box` patch of `source`, resized, into `target_box` of
/// `target`; the result (target-sized) goes to `out`.
///
/// # Safety
/// Buffers must hold `w * h * channels` bytes for their images.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn msabn_copy_replace(
    source: *const u8,
    source_width: usize,
    source_height: usize,
    source_box: MsabnBox,
    target: *const u8,
    target_width: usize,
    target_height: usize,
    target_box: MsabnBox,
    channels: usize,
    out: *mut u8,
) -> MsabnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let src = image_arg(source, source_width, source_height, channels, "source")?;
        let dst = image_arg(target, target_width, target_height, channels, "target")?;
        let result = copy_replace(&src, &source_box.into(), &dst, &target_box.into()).map_err(lib_err)?;
        let raw = result.as_raw();
        std::slice::from_raw_parts_mut(out, raw.len()).copy_from_slice(raw);
        Ok(())
    })
}
