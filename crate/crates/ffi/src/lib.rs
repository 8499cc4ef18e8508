//! C interface to `lineage-core`.
//!
//! Objects cross the boundary as opaque handles created by `*_load` /
//! `*_create` functions and released with the matching `*_free`. Every
//! fallible function returns a [`LineageStatus`]; on failure the message is
//! available from [`lineage_last_error`] on the same thread until the next
//! call that fails.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use lineage_core::checkpoint::Checkpoint;
use lineage_core::classifiers::Classifier;
use lineage_core::data::{generate_synthetic_lineage, load_matrix, save_matrix, CellType, LabeledDataset, SyntheticConfig};
use lineage_core::embedding::Autoencoder;
use lineage_core::pipeline::{self, RunConfig};
use lineage_core::{Error, Matrix};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LineageStatus {
    Ok = 0,
    /// Bad configuration, input, dimensions or file contents.
    Invalid = 1,
    /// Non-finite values during training.
    Numerical = 2,
    /// Fingerprint or checksum mismatch.
    Integrity = 3,
    Io = 4,
    NullPointer = 5,
    /// A Rust panic was caught at the boundary.
    Panic = 6,
}

impl From<&Error> for LineageStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Numerical(_) => LineageStatus::Numerical,
            Error::Integrity(_) => LineageStatus::Integrity,
            Error::Io(_) => LineageStatus::Io,
            _ => LineageStatus::Invalid,
        }
    }
}

/// Matrix with per-row labels and a population tag.
pub struct LineageDataset {
    inner: LabeledDataset,
}

/// Trained autoencoder, including its preprocessing parameters.
pub struct LineageAutoencoder {
    inner: Autoencoder,
}

/// Trained feed-forward or attention classifier.
pub struct LineageClassifier {
    inner: Classifier,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(LineageStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(LineageStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(LineageStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LineageStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LineageStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("internal panic: {msg}"));
            LineageStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(LineageStatus::Invalid, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn out_arg<'a, T>(p: *mut *mut T, what: &str) -> Result<&'a mut *mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Message of the most recent failure on this thread; empty if none. The
/// pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn lineage_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lineage_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Reads a native matrix file.
#[no_mangle]
pub unsafe extern "C" fn lineage_dataset_load(path: *const c_char, out: *mut *mut LineageDataset) -> LineageStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let ds = load_matrix(path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(LineageDataset { inner: ds }));
        Ok(())
    })
}

/// Copies a row-major `rows × cols` matrix and `rows` labels into a new
/// dataset. `cell_type` is 0 progenitor, 1 monocyte, 2 lymphocyte.
#[no_mangle]
pub unsafe extern "C" fn lineage_dataset_create(
    rows: usize,
    cols: usize,
    values: *const f32,
    labels: *const u32,
    cell_type: u8,
    out: *mut *mut LineageDataset,
) -> LineageStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if rows > 0 && (values.is_null() || labels.is_null()) {
            return Err(null("values or labels"));
        }
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Failure(LineageStatus::Invalid, format!("shape {rows}x{cols} overflows")))?;
        let cell = CellType::from_code(cell_type)
            .ok_or_else(|| Failure(LineageStatus::Invalid, format!("unknown cell type code {cell_type}")))?;
        let (x, y) = if rows == 0 {
            (Vec::new(), Vec::new())
        } else {
            (
                std::slice::from_raw_parts(values, n).to_vec(),
                std::slice::from_raw_parts(labels, rows).iter().map(|&l| l as usize).collect(),
            )
        };
        let ds = LabeledDataset::new(Matrix::from_vec(rows, cols, x)?, y, cell)?;
        *out = Box::into_raw(Box::new(LineageDataset { inner: ds }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lineage_dataset_save(ds: *const LineageDataset, path: *const c_char) -> LineageStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        save_matrix(path_arg(path, "path")?, &ds.inner)?;
        Ok(())
    })
}

/// Writes the row count, column count and cell type code; any output
/// pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn lineage_dataset_shape(
    ds: *const LineageDataset,
    rows: *mut usize,
    cols: *mut usize,
    cell_type: *mut u8,
) -> LineageStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        if let Some(r) = rows.as_mut() {
            *r = ds.inner.len();
        }
        if let Some(c) = cols.as_mut() {
            *c = ds.inner.width();
        }
        if let Some(t) = cell_type.as_mut() {
            *t = ds.inner.cell_type.code();
        }
        Ok(())
    })
}

/// Copies the values (row-major) into `buf`, which must hold `len` floats
/// with `len == rows · cols`.
#[no_mangle]
pub unsafe extern "C" fn lineage_dataset_values(ds: *const LineageDataset, buf: *mut f32, len: usize) -> LineageStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        let src = ds.inner.x.as_slice();
        if len != src.len() {
            return Err(Failure(
                LineageStatus::Invalid,
                format!("buffer holds {len} values, dataset has {}", src.len()),
            ));
        }
        if len > 0 {
            if buf.is_null() {
                return Err(null("buf"));
            }
            std::slice::from_raw_parts_mut(buf, len).copy_from_slice(src);
        }
        Ok(())
    })
}

/// Copies the labels into `buf`, which must hold exactly `rows` entries.
#[no_mangle]
pub unsafe extern "C" fn lineage_dataset_labels(ds: *const LineageDataset, buf: *mut u32, len: usize) -> LineageStatus {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        copy_labels(&ds.inner.labels, buf, len)
    })
}

unsafe fn copy_labels(labels: &[usize], buf: *mut u32, len: usize) -> Result<(), Failure> {
    if len != labels.len() {
        return Err(Failure(
            LineageStatus::Invalid,
            format!("buffer holds {len} labels, expected {}", labels.len()),
        ));
    }
    if len > 0 {
        if buf.is_null() {
            return Err(null("buf"));
        }
        for (d, &l) in std::slice::from_raw_parts_mut(buf, len).iter_mut().zip(labels) {
            *d = l as u32;
        }
    }
    Ok(())
}

#[no_mangle]
pub unsafe extern "C" fn lineage_dataset_free(ds: *mut LineageDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Generates the three synthetic populations. `config_toml` holds the
/// synthetic generator settings as TOML (null for defaults); `out` receives
/// progenitor, monocyte and lymphocyte handles in that order.
#[no_mangle]
pub unsafe extern "C" fn lineage_synthesize(config_toml: *const c_char, out: *mut *mut LineageDataset) -> LineageStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg: SyntheticConfig = if config_toml.is_null() {
            SyntheticConfig::default()
        } else {
            let text = CStr::from_ptr(config_toml)
                .to_str()
                .map_err(|_| Failure(LineageStatus::Invalid, "config is not UTF-8".into()))?;
            toml::from_str(text).map_err(|e| Failure(LineageStatus::Invalid, format!("invalid configuration: {}", e.message())))?
        };
        let datasets = generate_synthetic_lineage(&cfg)?.into_datasets();
        for (i, ds) in datasets.into_iter().enumerate() {
            *out.add(i) = Box::into_raw(Box::new(LineageDataset { inner: ds }));
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lineage_autoencoder_load(path: *const c_char, out: *mut *mut LineageAutoencoder) -> LineageStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let ae = Checkpoint::load(path_arg(path, "path")?)?.into_autoencoder()?;
        *out = Box::into_raw(Box::new(LineageAutoencoder { inner: ae }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lineage_autoencoder_widths(
    ae: *const LineageAutoencoder,
    input_width: *mut usize,
    latent_width: *mut usize,
) -> LineageStatus {
    guard(|| {
        let ae = handle(ae, "autoencoder")?;
        if let Some(g) = input_width.as_mut() {
            *g = ae.inner.input_width();
        }
        if let Some(d) = latent_width.as_mut() {
            *d = ae.inner.latent_width();
        }
        Ok(())
    })
}

/// Embeds raw expression values (preprocessing included) into a new dataset
/// carrying the input's labels and population.
#[no_mangle]
pub unsafe extern "C" fn lineage_autoencoder_embed(
    ae: *const LineageAutoencoder,
    ds: *const LineageDataset,
    out: *mut *mut LineageDataset,
) -> LineageStatus {
    guard(|| {
        let ae = handle(ae, "autoencoder")?;
        let ds = handle(ds, "dataset")?;
        let out = out_arg(out, "out")?;
        let emb = ae.inner.embed(&ds.inner.x, ds.inner.cell_type)?;
        let mut z = LabeledDataset::new(emb.z, ds.inner.labels.clone(), ds.inner.cell_type)?;
        z.manifest
            .insert(pipeline::AE_FINGERPRINT_KEY.into(), emb.autoencoder_fingerprint);
        *out = Box::into_raw(Box::new(LineageDataset { inner: z }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lineage_autoencoder_free(ae: *mut LineageAutoencoder) {
    if !ae.is_null() {
        drop(Box::from_raw(ae));
    }
}

#[no_mangle]
pub unsafe extern "C" fn lineage_classifier_load(path: *const c_char, out: *mut *mut LineageClassifier) -> LineageStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let model = Checkpoint::load(path_arg(path, "path")?)?.into_classifier()?;
        *out = Box::into_raw(Box::new(LineageClassifier { inner: model }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lineage_classifier_num_classes(clf: *const LineageClassifier, out: *mut usize) -> LineageStatus {
    guard(|| {
        let clf = handle(clf, "classifier")?;
        *out.as_mut().ok_or_else(|| null("out"))? = clf.inner.num_classes();
        Ok(())
    })
}

/// Predicted class per row of an embedding dataset; `buf` must hold
/// exactly `rows` entries.
#[no_mangle]
pub unsafe extern "C" fn lineage_classifier_predict(
    clf: *const LineageClassifier,
    ds: *const LineageDataset,
    buf: *mut u32,
    len: usize,
) -> LineageStatus {
    guard(|| {
        let clf = handle(clf, "classifier")?;
        let ds = handle(ds, "dataset")?;
        let pred = clf.inner.predict(&ds.inner.x)?;
        copy_labels(&pred.labels, buf, len)
    })
}

#[no_mangle]
pub unsafe extern "C" fn lineage_classifier_free(clf: *mut LineageClassifier) {
    if !clf.is_null() {
        drop(Box::from_raw(clf));
    }
}

/// Runs every stage into `out_dir`. `config_path` names a TOML run
/// configuration, or is null for defaults.
#[no_mangle]
pub unsafe extern "C" fn lineage_run_pipeline(config_path: *const c_char, out_dir: *const c_char) -> LineageStatus {
    guard(|| {
        let cfg = if config_path.is_null() {
            RunConfig::default()
        } else {
            RunConfig::load(path_arg(config_path, "config_path")?)?
        };
        pipeline::cmd_run(&cfg, &path_arg(out_dir, "out_dir")?)?;
        Ok(())
    })
}
