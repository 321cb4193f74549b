//! C interface over the classification head: opaque handles, status codes,
//! and thread-local error messages.
//!
//! Every function returns [`AgcmStatus`] (zero on success). After a failure,
//! [`agcm_last_error_message`] describes what went wrong on the calling
//! thread. Matrix buffers are row-major `f64`. Returned handles own their
//! data; release them with the matching `_free` function. Pointer arguments
//! only need to stay valid for the duration of the call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use ndarray::Array2;

use agcm::apf::{attention_weights, fuse, FusionConfig};
use agcm::diffcore::SimMetric;
use agcm::error::AgcmError;
use agcm::head::ClassifierHead;
use agcm::margin_loss::{class_cosines, loss_forward, MarginLossConfig};
use agcm::synthdata::{
    generate, kshot_sample, load_csv, save_csv, ConfusablePair, Dataset, DatasetSpec, Label,
    SplitKind,
};
use agcm::trainer::{base_train, few_shot_adapt, StageConfig};

/// Outcome of a call. Zero is success; everything else is a failure whose
/// detail `agcm_last_error_message` reports.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgcmStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A value, shape, or configuration was rejected.
    InvalidArgument = 2,
    /// A numeric guard tripped: degenerate norm or non-finite value.
    NumericFailure = 3,
    /// A file could not be read, written, or parsed.
    IoFailure = 4,
    /// An internal invariant broke; memory is intact but the call did nothing.
    InternalPanic = 5,
}

/// Attention similarity selector: cosine.
pub const AGCM_METRIC_COSINE: u32 = 0;
/// Attention similarity selector: negated Euclidean distance.
pub const AGCM_METRIC_NEG_EUCLIDEAN: u32 = 1;
/// Attention similarity selector: Pearson correlation.
pub const AGCM_METRIC_PEARSON: u32 = 2;

/// Split selector for `agcm_dataset_load_csv`: base-training split.
pub const AGCM_SPLIT_BASE_TRAIN: u32 = 0;
/// Split selector: support pool the shots are drawn from.
pub const AGCM_SPLIT_SUPPORT_POOL: u32 = 1;
/// Split selector: held-out evaluation split.
pub const AGCM_SPLIT_EVAL: u32 = 2;

/// Opaque labeled-embedding collection; see `agcm_dataset_generate`.
pub struct AgcmDataset {
    inner: Dataset,
}

/// Opaque classifier: projection, bias, and one weight row per class with
/// the background last.
pub struct AgcmHead {
    inner: ClassifierHead,
}

/// Two classes pinned at an exact angle by the generator.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AgcmConfusablePair {
    pub a: usize,
    pub b: usize,
    pub angle_deg: f64,
}

/// Generator settings. `confusable` may be null when `confusable_len` is
/// zero. `intra_sigma` is the expected total noise magnitude around a class
/// mean; `background_rate` adds that fraction of unstructured proposals.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AgcmDatasetSpec {
    pub dim: usize,
    pub n_base: usize,
    pub n_novel: usize,
    pub samples_per_class: usize,
    pub eval_per_class: usize,
    pub intra_sigma: f64,
    pub min_angle_deg: f64,
    pub background_rate: f64,
    pub confusable: *const AgcmConfusablePair,
    pub confusable_len: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: AgcmStatus, message: &str) -> AgcmStatus {
    let clean: Vec<u8> = message.bytes().filter(|&b| b != 0).collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(clean).expect("interior NULs stripped");
    });
    status
}

fn fail_err(err: AgcmError) -> AgcmStatus {
    let status = match &err {
        AgcmError::DegenerateNorm { .. }
        | AgcmError::DegenerateVariance { .. }
        | AgcmError::NonFinite { .. } => AgcmStatus::NumericFailure,
        AgcmError::Io { .. } | AgcmError::Parse { .. } => AgcmStatus::IoFailure,
        _ => AgcmStatus::InvalidArgument,
    };
    fail(status, &err.to_string())
}

fn null_arg(name: &str) -> AgcmStatus {
    fail(AgcmStatus::NullArgument, &format!("argument '{name}' is null"))
}

fn guarded(body: impl FnOnce() -> AgcmStatus) -> AgcmStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => fail(AgcmStatus::InternalPanic, "internal panic reached the C boundary"),
    }
}

/// Collects a row-major matrix from a raw buffer, rejecting nulls, empty
/// shapes, and size overflow.
unsafe fn matrix_in(
    name: &str,
    ptr: *const f64,
    rows: usize,
    cols: usize,
) -> Result<Array2<f64>, AgcmStatus> {
    if ptr.is_null() {
        return Err(null_arg(name));
    }
    if rows == 0 || cols == 0 {
        return Err(fail(
            AgcmStatus::InvalidArgument,
            &format!("'{name}' has empty shape {rows}x{cols}"),
        ));
    }
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| fail(AgcmStatus::InvalidArgument, &format!("'{name}' shape overflows")))?;
    let data = std::slice::from_raw_parts(ptr, len);
    Ok(Array2::from_shape_vec((rows, cols), data.to_vec()).expect("length matches shape"))
}

unsafe fn out_slice<'a, T>(
    name: &str,
    ptr: *mut T,
    len: usize,
) -> Result<&'a mut [T], AgcmStatus> {
    if ptr.is_null() {
        return Err(null_arg(name));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn path_in(name: &str, ptr: *const c_char) -> Result<PathBuf, AgcmStatus> {
    if ptr.is_null() {
        return Err(null_arg(name));
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => Err(fail(
            AgcmStatus::InvalidArgument,
            &format!("argument '{name}' is not valid UTF-8"),
        )),
    }
}

fn metric_in(raw: u32) -> Result<SimMetric, AgcmStatus> {
    match raw {
        AGCM_METRIC_COSINE => Ok(SimMetric::Cosine),
        AGCM_METRIC_NEG_EUCLIDEAN => Ok(SimMetric::NegEuclidean),
        AGCM_METRIC_PEARSON => Ok(SimMetric::Pearson),
        other => Err(fail(
            AgcmStatus::InvalidArgument,
            &format!("unknown metric selector {other}"),
        )),
    }
}

fn split_in(raw: u32) -> Result<SplitKind, AgcmStatus> {
    match raw {
        AGCM_SPLIT_BASE_TRAIN => Ok(SplitKind::BaseTrain),
        AGCM_SPLIT_SUPPORT_POOL => Ok(SplitKind::SupportPool),
        AGCM_SPLIT_EVAL => Ok(SplitKind::Eval),
        other => Err(fail(
            AgcmStatus::InvalidArgument,
            &format!("unknown split selector {other}"),
        )),
    }
}

unsafe fn dataset_in<'a>(name: &str, ptr: *const AgcmDataset) -> Result<&'a Dataset, AgcmStatus> {
    ptr.as_ref().map(|h| &h.inner).ok_or_else(|| null_arg(name))
}

unsafe fn head_in<'a>(name: &str, ptr: *const AgcmHead) -> Result<&'a ClassifierHead, AgcmStatus> {
    ptr.as_ref().map(|h| &h.inner).ok_or_else(|| null_arg(name))
}

unsafe fn hand_out<T>(name: &str, ptr: *mut *mut T, value: T) -> Result<(), AgcmStatus> {
    if ptr.is_null() {
        return Err(null_arg(name));
    }
    *ptr = Box::into_raw(Box::new(value));
    Ok(())
}

macro_rules! ffi_try {
    ($expr:expr) => {
        match $expr {
            Ok(v) => v,
            Err(status) => return status,
        }
    };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn agcm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on the calling thread. The pointer
/// stays valid until this thread's next failing call.
#[no_mangle]
pub extern "C" fn agcm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Generates the three experiment splits. Each out-pointer may be null to
/// skip that split; the ones provided receive owned handles.
#[no_mangle]
pub unsafe extern "C" fn agcm_dataset_generate(
    spec: *const AgcmDatasetSpec,
    seed: u64,
    base_train: *mut *mut AgcmDataset,
    support_pool: *mut *mut AgcmDataset,
    eval: *mut *mut AgcmDataset,
) -> AgcmStatus {
    guarded(|| {
        let spec = ffi_try!(spec.as_ref().ok_or_else(|| null_arg("spec")));
        let confusable = if spec.confusable_len == 0 {
            Vec::new()
        } else if spec.confusable.is_null() {
            return null_arg("spec.confusable");
        } else {
            std::slice::from_raw_parts(spec.confusable, spec.confusable_len)
                .iter()
                .map(|p| ConfusablePair { a: p.a, b: p.b, angle_deg: p.angle_deg })
                .collect()
        };
        let spec = DatasetSpec {
            dim: spec.dim,
            n_base: spec.n_base,
            n_novel: spec.n_novel,
            samples_per_class: spec.samples_per_class,
            eval_per_class: spec.eval_per_class,
            intra_sigma: spec.intra_sigma,
            min_angle_deg: spec.min_angle_deg,
            confusable,
            background_rate: spec.background_rate,
        };
        let data = match generate(&spec, seed) {
            Ok(data) => data,
            Err(e) => return fail_err(e),
        };
        if !base_train.is_null() {
            *base_train = Box::into_raw(Box::new(AgcmDataset { inner: data.base_train }));
        }
        if !support_pool.is_null() {
            *support_pool = Box::into_raw(Box::new(AgcmDataset { inner: data.support_pool }));
        }
        if !eval.is_null() {
            *eval = Box::into_raw(Box::new(AgcmDataset { inner: data.eval }));
        }
        AgcmStatus::Ok
    })
}

/// Reads a dataset CSV written by `agcm_dataset_save_csv` (or the CLI).
#[no_mangle]
pub unsafe extern "C" fn agcm_dataset_load_csv(
    path: *const c_char,
    split: u32,
    out: *mut *mut AgcmDataset,
) -> AgcmStatus {
    guarded(|| {
        let path = ffi_try!(path_in("path", path));
        let split = ffi_try!(split_in(split));
        match load_csv(&path, split) {
            Ok(inner) => {
                ffi_try!(hand_out("out", out, AgcmDataset { inner }));
                AgcmStatus::Ok
            }
            Err(e) => fail_err(e),
        }
    })
}

/// Writes a dataset as CSV: a `label,x0,…` header, one row per sample,
/// background labeled `-1`.
#[no_mangle]
pub unsafe extern "C" fn agcm_dataset_save_csv(
    dataset: *const AgcmDataset,
    path: *const c_char,
) -> AgcmStatus {
    guarded(|| {
        let ds = ffi_try!(dataset_in("dataset", dataset));
        let path = ffi_try!(path_in("path", path));
        match save_csv(ds, &path) {
            Ok(()) => AgcmStatus::Ok,
            Err(e) => fail_err(e),
        }
    })
}

/// Reports sample count, embedding dimension, and foreground class count.
/// Out-pointers may be null to skip a field.
#[no_mangle]
pub unsafe extern "C" fn agcm_dataset_shape(
    dataset: *const AgcmDataset,
    rows: *mut usize,
    dim: *mut usize,
    classes: *mut usize,
) -> AgcmStatus {
    guarded(|| {
        let ds = ffi_try!(dataset_in("dataset", dataset));
        if !rows.is_null() {
            *rows = ds.len();
        }
        if !dim.is_null() {
            *dim = ds.dim();
        }
        if !classes.is_null() {
            *classes = ds.n_real_classes;
        }
        AgcmStatus::Ok
    })
}

/// Copies the embeddings out, row-major, into a buffer of
/// `rows × dim` doubles (sizes from `agcm_dataset_shape`).
#[no_mangle]
pub unsafe extern "C" fn agcm_dataset_features(
    dataset: *const AgcmDataset,
    out: *mut f64,
) -> AgcmStatus {
    guarded(|| {
        let ds = ffi_try!(dataset_in("dataset", dataset));
        let dst = ffi_try!(out_slice("out", out, ds.len() * ds.dim()));
        for (dst, v) in dst.iter_mut().zip(ds.features.iter()) {
            *dst = *v;
        }
        AgcmStatus::Ok
    })
}

/// Copies the labels out, one `int64_t` per sample: the class index, or
/// `-1` for background.
#[no_mangle]
pub unsafe extern "C" fn agcm_dataset_labels(
    dataset: *const AgcmDataset,
    out: *mut i64,
) -> AgcmStatus {
    guarded(|| {
        let ds = ffi_try!(dataset_in("dataset", dataset));
        let dst = ffi_try!(out_slice("out", out, ds.len()));
        for (dst, label) in dst.iter_mut().zip(ds.labels.iter()) {
            *dst = match label {
                Label::Class(c) => *c as i64,
                Label::Background => -1,
            };
        }
        AgcmStatus::Ok
    })
}

/// Draws exactly `k` samples per label group from a support pool.
#[no_mangle]
pub unsafe extern "C" fn agcm_kshot_sample(
    pool: *const AgcmDataset,
    k: usize,
    seed: u64,
    out: *mut *mut AgcmDataset,
) -> AgcmStatus {
    guarded(|| {
        let pool = ffi_try!(dataset_in("pool", pool));
        match kshot_sample(pool, k, seed) {
            Ok(inner) => {
                ffi_try!(hand_out("out", out, AgcmDataset { inner }));
                AgcmStatus::Ok
            }
            Err(e) => fail_err(e),
        }
    })
}

/// Releases a dataset handle. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn agcm_dataset_free(dataset: *mut AgcmDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Loads a head checkpoint written by `agcm_head_save` (or the CLI).
#[no_mangle]
pub unsafe extern "C" fn agcm_head_load(
    path: *const c_char,
    out: *mut *mut AgcmHead,
) -> AgcmStatus {
    guarded(|| {
        let path = ffi_try!(path_in("path", path));
        match ClassifierHead::load(&path) {
            Ok(inner) => {
                ffi_try!(hand_out("out", out, AgcmHead { inner }));
                AgcmStatus::Ok
            }
            Err(e) => fail_err(e),
        }
    })
}

/// Writes a binary head checkpoint plus its text sidecar.
#[no_mangle]
pub unsafe extern "C" fn agcm_head_save(
    head: *const AgcmHead,
    path: *const c_char,
) -> AgcmStatus {
    guarded(|| {
        let head = ffi_try!(head_in("head", head));
        let path = ffi_try!(path_in("path", path));
        match head.save(&path) {
            Ok(()) => AgcmStatus::Ok,
            Err(e) => fail_err(e),
        }
    })
}

/// Reports input dimension, feature dimension, and total class count
/// (background included, always the last index). Out-pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn agcm_head_shape(
    head: *const AgcmHead,
    input_dim: *mut usize,
    feature_dim: *mut usize,
    classes: *mut usize,
) -> AgcmStatus {
    guarded(|| {
        let head = ffi_try!(head_in("head", head));
        if !input_dim.is_null() {
            *input_dim = head.d_in();
        }
        if !feature_dim.is_null() {
            *feature_dim = head.d_feat();
        }
        if !classes.is_null() {
            *classes = head.n_classes();
        }
        AgcmStatus::Ok
    })
}

/// Classifies `rows` samples (row-major `rows × input_dim` buffer): nearest
/// class weight by cosine. `classes` receives one index per row; `cosines`
/// may be null or receive the winning cosine per row.
#[no_mangle]
pub unsafe extern "C" fn agcm_head_predict(
    head: *const AgcmHead,
    x: *const f64,
    rows: usize,
    classes: *mut u32,
    cosines: *mut f64,
) -> AgcmStatus {
    guarded(|| {
        let head = ffi_try!(head_in("head", head));
        let x = ffi_try!(matrix_in("x", x, rows, head.d_in()));
        let class_dst = ffi_try!(out_slice("classes", classes, rows));
        let preds = match head.predict(x.view()) {
            Ok(p) => p,
            Err(e) => return fail_err(e),
        };
        for (dst, p) in class_dst.iter_mut().zip(preds.iter()) {
            *dst = p.class_index as u32;
        }
        if !cosines.is_null() {
            let cos_dst = std::slice::from_raw_parts_mut(cosines, rows);
            for (dst, p) in cos_dst.iter_mut().zip(preds.iter()) {
                *dst = p.cosine;
            }
        }
        AgcmStatus::Ok
    })
}

/// Releases a head handle. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn agcm_head_free(head: *mut AgcmHead) {
    if !head.is_null() {
        drop(Box::from_raw(head));
    }
}

/// Row-stochastic neighbor weights with a zero diagonal: softmax over
/// pairwise similarities, self excluded. `out` receives `rows × rows`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn agcm_attention_weights(
    embeddings: *const f64,
    rows: usize,
    cols: usize,
    metric: u32,
    out: *mut f64,
) -> AgcmStatus {
    guarded(|| {
        let e = ffi_try!(matrix_in("embeddings", embeddings, rows, cols));
        let metric = ffi_try!(metric_in(metric));
        let dst = ffi_try!(out_slice("out", out, rows * rows));
        match attention_weights(e.view(), metric) {
            Ok(att) => {
                for (dst, v) in dst.iter_mut().zip(att.weights.iter()) {
                    *dst = *v;
                }
                AgcmStatus::Ok
            }
            Err(e) => fail_err(e),
        }
    })
}

/// Blends each row with its attention-weighted neighbors at self weight
/// `alpha` in `[0.5, 1.0]`. `out` receives `rows × cols` doubles; `alpha`
/// of exactly 1 copies the input through unchanged.
#[no_mangle]
pub unsafe extern "C" fn agcm_fuse(
    embeddings: *const f64,
    rows: usize,
    cols: usize,
    metric: u32,
    alpha: f64,
    out: *mut f64,
) -> AgcmStatus {
    guarded(|| {
        let e = ffi_try!(matrix_in("embeddings", embeddings, rows, cols));
        let metric = ffi_try!(metric_in(metric));
        let dst = ffi_try!(out_slice("out", out, rows * cols));
        let cfg = FusionConfig { alpha, metric, stop_attention_grad: false };
        match fuse(e.view(), &cfg) {
            Ok(fused) => {
                for (dst, v) in dst.iter_mut().zip(fused.iter()) {
                    *dst = *v;
                }
                AgcmStatus::Ok
            }
            Err(e) => fail_err(e),
        }
    })
}

/// Mean cosine-margin cross-entropy of `rows` feature rows against
/// `n_classes` weight rows (both `… × cols`, row-major). `labels` holds one
/// class index per row; the margin is skipped for rows labeled
/// `background_index`.
#[no_mangle]
pub unsafe extern "C" fn agcm_margin_loss(
    features: *const f64,
    rows: usize,
    cols: usize,
    class_weights: *const f64,
    n_classes: usize,
    labels: *const u32,
    margin: f64,
    beta: f64,
    background_index: u32,
    loss: *mut f64,
) -> AgcmStatus {
    guarded(|| {
        let z = ffi_try!(matrix_in("features", features, rows, cols));
        let w = ffi_try!(matrix_in("class_weights", class_weights, n_classes, cols));
        if labels.is_null() {
            return null_arg("labels");
        }
        let labels: Vec<usize> =
            std::slice::from_raw_parts(labels, rows).iter().map(|&l| l as usize).collect();
        let dst = ffi_try!(out_slice("loss", loss, 1));
        let cfg = MarginLossConfig { margin, beta, background_index: background_index as usize };
        if let Err(e) = cfg.validate(n_classes) {
            return fail_err(e);
        }
        let table = match class_cosines(z.view(), w.view()) {
            Ok(t) => t,
            Err(e) => return fail_err(e),
        };
        match loss_forward(&table, &labels, &cfg) {
            Ok(value) => {
                dst[0] = value;
                AgcmStatus::Ok
            }
            Err(e) => fail_err(e),
        }
    })
}

/// Stage one: fits a fresh head on the base classes (fusion off, margin
/// zero). `final_loss` may be null or receive the last step's loss.
#[no_mangle]
pub unsafe extern "C" fn agcm_base_train(
    train: *const AgcmDataset,
    seed: u64,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    final_loss: *mut f64,
    out: *mut *mut AgcmHead,
) -> AgcmStatus {
    guarded(|| {
        let ds = ffi_try!(dataset_in("train", train));
        let mut cfg = StageConfig::base(seed);
        cfg.epochs = epochs;
        cfg.batch_size = batch_size;
        cfg.learning_rate = learning_rate;
        match base_train(ds, &cfg) {
            Ok((head, log)) => {
                if !final_loss.is_null() {
                    *final_loss = log.final_loss();
                }
                ffi_try!(hand_out("out", out, AgcmHead { inner: head }));
                AgcmStatus::Ok
            }
            Err(e) => fail_err(e),
        }
    })
}

/// Stage two: grows the head for the novel classes in `shots` and
/// fine-tunes with fusion and the margin active, projection frozen.
/// `final_loss` may be null or receive the last step's loss.
#[no_mangle]
pub unsafe extern "C" fn agcm_few_shot_adapt(
    base: *const AgcmHead,
    shots: *const AgcmDataset,
    seed: u64,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    alpha: f64,
    margin: f64,
    metric: u32,
    final_loss: *mut f64,
    out: *mut *mut AgcmHead,
) -> AgcmStatus {
    guarded(|| {
        let head = ffi_try!(head_in("base", base));
        let ds = ffi_try!(dataset_in("shots", shots));
        let metric = ffi_try!(metric_in(metric));
        let mut cfg = StageConfig::adapt(seed);
        cfg.epochs = epochs;
        cfg.batch_size = batch_size;
        cfg.learning_rate = learning_rate;
        cfg.fusion = FusionConfig { alpha, metric, stop_attention_grad: false };
        cfg.margin = margin;
        match few_shot_adapt(head, ds, &cfg) {
            Ok((adapted, log)) => {
                if !final_loss.is_null() {
                    *final_loss = log.final_loss();
                }
                ffi_try!(hand_out("out", out, AgcmHead { inner: adapted }));
                AgcmStatus::Ok
            }
            Err(e) => fail_err(e),
        }
    })
}
