//! C ABI over `dwnet`: load a checkpoint, read a dataset and predict
//! per-path delay or jitter.
//!
//! Handles are opaque and must be released with the matching `*_free`
//! function. Every fallible call returns a [`DwnetStatus`]; on failure
//! [`dwnet_last_error`] describes the problem for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use dwnet::datagen::{read_dataset, Sample};
use dwnet::netgraph::{Link, RoutingScheme, Topology, TrafficMatrix};
use dwnet::training::{load_model, predict, predict_unlabeled, TrainedModel};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DwnetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Model = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

/// A loaded checkpoint.
pub struct DwnetModel {
    inner: TrainedModel,
}

/// A dataset read from a JSON-lines file.
pub struct DwnetDataset {
    samples: Vec<Sample>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).expect("interior NULs removed"));
}

fn guard(f: impl FnOnce() -> Result<(), (DwnetStatus, String)>) -> DwnetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            DwnetStatus::Ok
        }
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DwnetStatus::Panic
        }
    }
}

fn null(what: &str) -> (DwnetStatus, String) {
    (DwnetStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, (DwnetStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (DwnetStatus::InvalidArgument, "path is not valid UTF-8".to_string()))?;
    Ok(PathBuf::from(s))
}

/// # Safety
/// `p` must be null or point to `len` readable values.
unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (DwnetStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message describing the last failure on this thread; empty after a
/// success. Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn dwnet_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dwnet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint written by `dwnet train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn dwnet_model_load(path: *const c_char, out: *mut *mut DwnetModel) -> DwnetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = path_arg(path)?;
        let inner = load_model(&path).map_err(|e| (DwnetStatus::Io, e.to_string()))?;
        *out = Box::into_raw(Box::new(DwnetModel { inner }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`dwnet_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dwnet_model_free(model: *mut DwnetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// 0 when the model predicts delay, 1 for jitter, -1 for a null model.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dwnet_model_target(model: *const DwnetModel) -> i32 {
    match model.as_ref() {
        None => -1,
        Some(m) => match m.inner.config.target {
            dwnet::model::Target::Delay => 0,
            dwnet::model::Target::Jitter => 1,
        },
    }
}

/// Reads a dataset file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn dwnet_dataset_read(path: *const c_char, out: *mut *mut DwnetDataset) -> DwnetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = path_arg(path)?;
        let samples = read_dataset(&path).map_err(|e| (DwnetStatus::Io, e.to_string()))?;
        *out = Box::into_raw(Box::new(DwnetDataset { samples }));
        Ok(())
    })
}

/// Releases a dataset. Null is ignored.
///
/// # Safety
/// `dataset` must come from [`dwnet_dataset_read`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dwnet_dataset_free(dataset: *mut DwnetDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Number of samples; 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dwnet_dataset_len(dataset: *const DwnetDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.samples.len())
}

/// Number of paths in sample `index`.
///
/// # Safety
/// `dataset` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dwnet_dataset_path_count(
    dataset: *const DwnetDataset,
    index: usize,
    out: *mut usize,
) -> DwnetStatus {
    guard(|| {
        let d = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let s = d.samples.get(index).ok_or_else(|| {
            (DwnetStatus::InvalidArgument, format!("sample {index} of {}", d.samples.len()))
        })?;
        *out = s.routing.n_paths();
        Ok(())
    })
}

/// Writes the eval-mode prediction of every path of sample `index` into
/// `out` (capacity `out_len`) and the path count into `written`. Returns
/// `BufferTooSmall` with `written` set when `out_len` is insufficient.
///
/// # Safety
/// Handles must be live; `out` must hold `out_len` doubles; `written`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn dwnet_predict_sample(
    model: *const DwnetModel,
    dataset: *const DwnetDataset,
    index: usize,
    out: *mut f64,
    out_len: usize,
    written: *mut usize,
) -> DwnetStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let d = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let written = written.as_mut().ok_or_else(|| null("written"))?;
        let s = d.samples.get(index).ok_or_else(|| {
            (DwnetStatus::InvalidArgument, format!("sample {index} of {}", d.samples.len()))
        })?;
        let n = s.routing.n_paths();
        *written = n;
        if out_len < n {
            return Err((DwnetStatus::BufferTooSmall, format!("need {n} values, buffer holds {out_len}")));
        }
        let pred = predict(&m.inner, std::slice::from_ref(s)).map_err(|e| (DwnetStatus::Model, e.to_string()))?;
        let dst = std::slice::from_raw_parts_mut(out, n);
        dst.copy_from_slice(&pred[0]);
        Ok(())
    })
}

/// Predicts from raw arrays. Link `i` goes from `link_src[i]` to
/// `link_dst[i]` with capacity `capacity[i]`. Path `p` uses links
/// `path_links[path_offsets[p] .. path_offsets[p + 1]]` in order and
/// carries `demand[p]`. `path_offsets` has `n_paths + 1` entries and `out`
/// receives `n_paths` predictions.
///
/// # Safety
/// Every array must hold the number of elements described above.
#[no_mangle]
pub unsafe extern "C" fn dwnet_predict_raw(
    model: *const DwnetModel,
    node_count: usize,
    n_links: usize,
    link_src: *const usize,
    link_dst: *const usize,
    capacity: *const f64,
    n_paths: usize,
    path_offsets: *const usize,
    path_links: *const usize,
    demand: *const f64,
    out: *mut f64,
) -> DwnetStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let src = slice_arg(link_src, n_links, "link_src")?;
        let dst = slice_arg(link_dst, n_links, "link_dst")?;
        let cap = slice_arg(capacity, n_links, "capacity")?;
        let offsets = slice_arg(path_offsets, n_paths + 1, "path_offsets")?;
        let demand = slice_arg(demand, n_paths, "demand")?;
        if out.is_null() && n_paths > 0 {
            return Err(null("out"));
        }
        let bad = |e: String| (DwnetStatus::InvalidArgument, e);
        if offsets.windows(2).any(|w| w[1] < w[0]) {
            return Err(bad("path_offsets must be non-decreasing".into()));
        }
        let links_flat = slice_arg(path_links, offsets[n_paths], "path_links")?;

        let links: Vec<Link> = (0..n_links)
            .map(|i| Link { link_id: i, src: src[i], dst: dst[i], capacity: cap[i] })
            .collect();
        let topology = Topology::new(node_count, links).map_err(|e| bad(e.to_string()))?;
        let seqs: Vec<Vec<usize>> = offsets.windows(2).map(|w| links_flat[w[0]..w[1]].to_vec()).collect();
        let routing = RoutingScheme::from_link_seqs(&topology, &seqs).map_err(|e| bad(e.to_string()))?;
        let traffic = TrafficMatrix::new(&routing, demand.to_vec()).map_err(|e| bad(e.to_string()))?;
        let pred = predict_unlabeled(&m.inner, &topology, &routing, &traffic)
            .map_err(|e| (DwnetStatus::Model, e.to_string()))?;
        if n_paths > 0 {
            std::slice::from_raw_parts_mut(out, n_paths).copy_from_slice(&pred);
        }
        Ok(())
    })
}
