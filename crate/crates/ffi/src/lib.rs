//! C ABI over the `mimdepth` library.
//!
//! Every fallible function returns a [`MimdStatus`]; on failure the message
//! is kept per thread and can be read with [`mimd_last_error`]. Models and
//! datasets are opaque handles released with their `_free` functions.
//! Images are interleaved RGB `f64` in `[0, 1]`, row-major `height × width × 3`;
//! depth maps are row-major `height × width`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use mimdepth::data::{DataError, Dataset, SceneSpec};
use mimdepth::geometry::DepthMap;
use mimdepth::image::{Image, ImageError};
use mimdepth::masking::{generate, MaskConfig, MaskStrategy};
use mimdepth::metrics::{depth_metrics, DepthEval};
use mimdepth::model::{DepthPredictor, Model};
use mimdepth::nn::{load_checkpoint, save_checkpoint, ModelConfig, NnError, ParamStore};
use mimdepth::robustness::{attack_iterations, corrupt, CorruptionKind, CorruptionSpec, SeverityTable};
use mimdepth::train::{train, TrainConfig};
use mimdepth::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MimdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Config = 4,
    Data = 5,
    NonFinite = 6,
    BufferTooSmall = 7,
    Internal = 8,
}

/// Depth-quality scores of one prediction.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MimdDepthMetrics {
    pub rmse: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub scale: f64,
    pub pixels: usize,
}

/// Trained or freshly initialised depth and ego-motion networks.
pub struct MimdModel {
    model: Model,
}

/// Synthetic triplet dataset held in memory.
pub struct MimdDataset {
    ds: Dataset,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Failure(MimdStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. }
            | Error::Nn(NnError::Io(_) | NnError::File { .. })
            | Error::Image(ImageError::Io { .. })
            | Error::Data(DataError::Image(ImageError::Io { .. })) => MimdStatus::Io,
            Error::Config(_) => MimdStatus::Config,
            Error::NonFinite { .. } => MimdStatus::NonFinite,
            Error::Data(_) | Error::Image(_) | Error::Nn(NnError::Checkpoint(_)) => MimdStatus::Data,
            _ => MimdStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(MimdStatus::InvalidArgument, msg.into())
}

fn null(what: &str) -> Failure {
    Failure(MimdStatus::NullPointer, format!("`{what}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MimdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            MimdStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MimdStatus::Internal
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("`{what}` is not UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn image(rgb: *const f64, width: usize, height: usize) -> Result<Image, Failure> {
    if width == 0 || height == 0 {
        return Err(invalid("image must be non-empty"));
    }
    let data = slice(rgb, width * height * 3, "rgb")?.to_vec();
    Ok(Image::new(width, height, data))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mimd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn mimd_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Load a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mimd_model_load(path: *const c_char, out: *mut *mut MimdModel) -> MimdStatus {
    guard(|| {
        let path = PathBuf::from(text(path, "path")?);
        let store = load_checkpoint(&path).map_err(Error::from)?;
        put(out, MimdModel { model: Model::new(store) }, "out")
    })
}

/// Randomly initialised toy-config model.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mimd_model_init(seed: u64, out: *mut *mut MimdModel) -> MimdStatus {
    guard(|| {
        let store = ParamStore::init(ModelConfig::default(), seed).map_err(Error::from)?;
        put(out, MimdModel { model: Model::new(store) }, "out")
    })
}

/// # Safety
/// `model` must be a valid handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mimd_model_save(model: *const MimdModel, path: *const c_char) -> MimdStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let path = PathBuf::from(text(path, "path")?);
        save_checkpoint(&m.model.store, &path).map_err(Error::from)?;
        Ok(())
    })
}

/// Input resolution the model expects.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mimd_model_input_size(
    model: *const MimdModel,
    width: *mut usize,
    height: *mut usize,
) -> MimdStatus {
    guard(|| {
        let m = handle(model, "model")?;
        if width.is_null() || height.is_null() {
            return Err(null("width/height"));
        }
        let v = &m.model.config().vit;
        *width = v.image_width;
        *height = v.image_height;
        Ok(())
    })
}

/// Total trainable parameter count.
///
/// # Safety
/// `model` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn mimd_model_num_params(model: *const MimdModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.store.num_params())
}

/// Predict depth for one image; `depth` receives `width × height` values.
///
/// # Safety
/// `rgb` must hold `width·height·3` values and `depth` `width·height`.
#[no_mangle]
pub unsafe extern "C" fn mimd_model_predict(
    model: *const MimdModel,
    rgb: *const f64,
    width: usize,
    height: usize,
    depth: *mut f64,
) -> MimdStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let v = &m.model.config().vit;
        if (width, height) != (v.image_width, v.image_height) {
            return Err(invalid(format!(
                "model expects {}x{} images, got {width}x{height}",
                v.image_width, v.image_height
            )));
        }
        let img = image(rgb, width, height)?;
        let out = slice_mut(depth, width * height, "depth")?;
        let pred = m.model.predict(&[&img])?;
        out.copy_from_slice(&pred[0].values);
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mimd_model_free(model: *mut MimdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Render `triplets` synthetic triplets at `width × height` (focal length
/// scaled with the width).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mimd_dataset_generate(
    seed: u64,
    triplets: usize,
    width: usize,
    height: usize,
    out: *mut *mut MimdDataset,
) -> MimdStatus {
    guard(|| {
        let base = SceneSpec::default();
        let spec = SceneSpec {
            seed,
            width,
            height,
            focal: base.focal * width as f64 / base.width as f64,
            ..base
        };
        let ds = Dataset::generate(&spec, triplets).map_err(Error::from)?;
        put(out, MimdDataset { ds }, "out")
    })
}

/// Load a dataset directory written by `gen-data` or [`mimd_dataset_write`].
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mimd_dataset_load(dir: *const c_char, out: *mut *mut MimdDataset) -> MimdStatus {
    guard(|| {
        let dir = PathBuf::from(text(dir, "dir")?);
        let ds = Dataset::load(&dir).map_err(Error::from)?;
        put(out, MimdDataset { ds }, "out")
    })
}

/// # Safety
/// `ds` must be a valid handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mimd_dataset_write(ds: *const MimdDataset, dir: *const c_char) -> MimdStatus {
    guard(|| {
        let d = handle(ds, "dataset")?;
        let dir = PathBuf::from(text(dir, "dir")?);
        d.ds.write(&dir).map_err(Error::from)?;
        Ok(())
    })
}

/// Number of triplets, 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn mimd_dataset_len(ds: *const MimdDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.ds.len())
}

/// Copy the centre frame (`rgb`, `w·h·3`) and its ground-truth depth
/// (`depth`, `w·h`) of triplet `index`; either output may be null.
///
/// # Safety
/// Non-null outputs must have room for the values above.
#[no_mangle]
pub unsafe extern "C" fn mimd_dataset_triplet(
    ds: *const MimdDataset,
    index: usize,
    rgb: *mut f64,
    depth: *mut f64,
) -> MimdStatus {
    guard(|| {
        let d = handle(ds, "dataset")?;
        if index >= d.ds.len() {
            return Err(invalid(format!("triplet {index} out of range (len {})", d.ds.len())));
        }
        let t = d.ds.triplet(index);
        if !rgb.is_null() {
            slice_mut(rgb, t.frames[1].data.len(), "rgb")?.copy_from_slice(&t.frames[1].data);
        }
        if !depth.is_null() {
            slice_mut(depth, t.depth.values.len(), "depth")?.copy_from_slice(&t.depth.values);
        }
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mimd_dataset_free(ds: *mut MimdDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Train on `ds` with a TOML config (null or empty for defaults; run paths
/// are ignored). The final probe-loss ratio is written to `probe_ratio` if
/// non-null.
///
/// # Safety
/// `config_toml` must be null or NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mimd_train(
    config_toml: *const c_char,
    ds: *const MimdDataset,
    out: *mut *mut MimdModel,
    probe_ratio: *mut f64,
) -> MimdStatus {
    guard(|| {
        let d = handle(ds, "dataset")?;
        let toml = if config_toml.is_null() { "" } else { text(config_toml, "config_toml")? };
        let cfg = TrainConfig::from_toml(toml)?;
        let outcome = train(&cfg, &d.ds, |_| {})?;
        if !probe_ratio.is_null() {
            *probe_ratio = outcome.record.probe_ratio();
        }
        put(out, MimdModel { model: outcome.model }, "out")
    })
}

/// RMSE and δ accuracies of `pred` against `gt` (both `width × height`),
/// clamped to `[0.1, 100]`, optionally median-scaled.
///
/// # Safety
/// `pred` and `gt` must hold `width·height` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mimd_depth_metrics(
    pred: *const f64,
    gt: *const f64,
    width: usize,
    height: usize,
    median_scaling: bool,
    out: *mut MimdDepthMetrics,
) -> MimdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let n = width * height;
        let map = |p, what| -> Result<DepthMap, Failure> {
            let v = slice(p, n, what)?.to_vec();
            DepthMap::new(width, height, v).map_err(|e| invalid(format!("{what}: {e}")))
        };
        let (p, g) = (map(pred, "pred")?, map(gt, "gt")?);
        let eval = DepthEval {
            median_scaling,
            ..DepthEval::default()
        };
        let m = depth_metrics(&p, &g, None, &eval).map_err(Error::from)?;
        *out = MimdDepthMetrics {
            rmse: m.rmse,
            delta1: m.delta1,
            delta2: m.delta2,
            delta3: m.delta3,
            scale: m.scale,
            pixels: m.pixels,
        };
        Ok(())
    })
}

/// Apply corruption `kind` (e.g. "gaussian_noise") at `severity` 1..=5.
///
/// # Safety
/// `rgb_in` and `rgb_out` must hold `width·height·3` values; they may alias.
#[no_mangle]
pub unsafe extern "C" fn mimd_corrupt(
    rgb_in: *const f64,
    width: usize,
    height: usize,
    kind: *const c_char,
    severity: u8,
    seed: u64,
    rgb_out: *mut f64,
) -> MimdStatus {
    guard(|| {
        let img = image(rgb_in, width, height)?;
        let kind: CorruptionKind = text(kind, "kind")?.parse()?;
        let spec = CorruptionSpec::new(kind, severity, seed)?;
        let res = corrupt(&img, &spec, &SeverityTable::default())?;
        slice_mut(rgb_out, res.data.len(), "rgb_out")?.copy_from_slice(&res.data);
        Ok(())
    })
}

/// Mask grid for a `height × width` image with `size`-pixel cells; cells
/// are written row-major to `cells` (1 = masked) and the grid shape to
/// `rows`/`cols`. Fails with `BufferTooSmall` if `capacity` is short.
///
/// # Safety
/// `cells` must have `capacity` writable bytes; `rows`/`cols` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mimd_mask(
    strategy: *const c_char,
    size: usize,
    ratio: f64,
    aspect: f64,
    seed: u64,
    height: usize,
    width: usize,
    cells: *mut u8,
    capacity: usize,
    rows: *mut usize,
    cols: *mut usize,
) -> MimdStatus {
    guard(|| {
        let strategy: MaskStrategy = text(strategy, "strategy")?.parse().map_err(invalid)?;
        let cfg = MaskConfig {
            size,
            ratio,
            aspect,
            seed,
        };
        let grid = generate(strategy, &cfg, height, width).map_err(Error::from)?;
        if rows.is_null() || cols.is_null() {
            return Err(null("rows/cols"));
        }
        *rows = grid.gh;
        *cols = grid.gw;
        if capacity < grid.cells.len() {
            return Err(Failure(
                MimdStatus::BufferTooSmall,
                format!("mask needs {} cells, buffer holds {capacity}", grid.cells.len()),
            ));
        }
        let out = slice_mut(cells, grid.cells.len(), "cells")?;
        for (o, &c) in out.iter_mut().zip(&grid.cells) {
            *o = c as u8;
        }
        Ok(())
    })
}

/// Attack iteration count `min(ε + 4, ⌈1.25 ε⌉)`.
#[no_mangle]
pub extern "C" fn mimd_attack_iterations(epsilon: f64) -> usize {
    attack_iterations(epsilon)
}
