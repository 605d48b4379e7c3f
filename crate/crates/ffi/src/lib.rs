//! C ABI over the dbc clustering engine.
//!
//! Objects cross the boundary as opaque handles owned by the caller and
//! released with the matching `*_free` function. Every entry point returns a
//! [`DbcStatus`]; on failure the message is available from
//! [`dbc_last_error_message`] on the same thread until the next call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use dbc::eval::partition_scores;
use dbc::io::{read_features, FeatureFormat};
use dbc::{
    cluster, normalize_rows, pairwise_distances, ClusterState, Criterion, EngineConfig, Error, FeatureStore,
    IntraMode, MergeEvent, StopRule,
};

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DbcStatus {
    Ok = 0,
    NullPointer = 1,
    /// Invalid parameters.
    Config = 2,
    /// Malformed or non-finite input data.
    Data = 3,
    /// Engine or I/O failure.
    Runtime = 4,
    /// Internal panic caught at the boundary.
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DbcCriterion {
    Dispersion = 0,
    DispersionNoReg = 1,
    SingleLinkage = 2,
    SingleLinkageSizeReg = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DbcIntraMode {
    Paper = 0,
    Exact = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DbcFormat {
    Csv = 0,
    Dbcf = 1,
}

/// Clustering parameters. `target_clusters == 0` merges stage by stage
/// while more clusters than one stage's merges remain.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DbcClusterOptions {
    pub criterion: DbcCriterion,
    pub lambda: f64,
    pub merge_percent: f64,
    pub intra_mode: DbcIntraMode,
    pub target_clusters: usize,
}

/// One merge: clusters `a < b` (indices before the merge) became `new_id`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DbcMergeEvent {
    pub stage: usize,
    pub step: usize,
    pub a: usize,
    pub b: usize,
    pub value: f64,
    pub new_id: usize,
    pub n_a: usize,
    pub n_b: usize,
}

/// Feature matrix with optional ground-truth identities.
pub struct DbcStore {
    inner: FeatureStore,
}

/// Finished clustering run.
pub struct DbcClustering {
    state: ClusterState,
    events: Vec<DbcMergeEvent>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DbcStatus {
    match e.exit_code() {
        1 => DbcStatus::Config,
        2 => DbcStatus::Data,
        _ => DbcStatus::Runtime,
    }
}

enum Failure {
    Null(&'static str),
    Engine(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Engine(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DbcStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DbcStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("{what} is null"));
            DbcStatus::NullPointer
        }
        Ok(Err(Failure::Engine(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            DbcStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    out.write(value);
    Ok(())
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call on the same thread.
#[no_mangle]
pub extern "C" fn dbc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dbc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy `n × dim` row-major values into a new store with ids "0".."n-1".
///
/// # Safety
/// `values` must point to `n * dim` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dbc_store_new(values: *const f64, n: usize, dim: usize, out: *mut *mut DbcStore) -> DbcStatus {
    guard(|| {
        let len = n
            .checked_mul(dim)
            .ok_or_else(|| Error::config("n * dim overflows"))?;
        let data = slice(values, len, "values")?.to_vec();
        let inner = FeatureStore::with_index_ids(data, dim)?;
        write_out(out, boxed(DbcStore { inner }), "out")
    })
}

/// Load a store from a CSV or DBCF file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dbc_store_from_file(
    path: *const c_char,
    format: DbcFormat,
    out: *mut *mut DbcStore,
) -> DbcStatus {
    guard(|| {
        let path = CStr::from_ptr(deref(path, "path")?)
            .to_str()
            .map_err(|_| Error::config("path is not valid UTF-8"))?;
        let format = match format {
            DbcFormat::Csv => FeatureFormat::Csv,
            DbcFormat::Dbcf => FeatureFormat::Dbcf,
        };
        let inner = read_features(Path::new(path), format)?;
        write_out(out, boxed(DbcStore { inner }), "out")
    })
}

/// Attach one ground-truth identity per sample.
///
/// # Safety
/// `store` must be a live handle; `labels` must point to `n` readable values.
#[no_mangle]
pub unsafe extern "C" fn dbc_store_set_ground_truth(store: *mut DbcStore, labels: *const i64, n: usize) -> DbcStatus {
    guard(|| {
        let handle = store.as_mut().ok_or(Failure::Null("store"))?;
        let labels = slice(labels, n, "labels")?.to_vec();
        handle.inner = handle.inner.clone().with_ground_truth(labels)?;
        Ok(())
    })
}

/// # Safety
/// `store` must be a live handle; `n` and `dim` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dbc_store_shape(store: *const DbcStore, n: *mut usize, dim: *mut usize) -> DbcStatus {
    guard(|| {
        let s = &deref(store, "store")?.inner;
        write_out(n, s.len(), "n")?;
        write_out(dim, s.dim(), "dim")
    })
}

/// Copy the row-major values into `out`, which must hold `n * dim` doubles.
///
/// # Safety
/// `store` must be a live handle; `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dbc_store_values(store: *const DbcStore, out: *mut f64, len: usize) -> DbcStatus {
    guard(|| {
        let s = &deref(store, "store")?.inner;
        copy_into(s.as_slice(), out, len)
    })
}

/// New store whose rows are scaled to unit norm.
///
/// # Safety
/// `store` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dbc_store_normalize(store: *const DbcStore, out: *mut *mut DbcStore) -> DbcStatus {
    guard(|| {
        let inner = normalize_rows(&deref(store, "store")?.inner)?;
        write_out(out, boxed(DbcStore { inner }), "out")
    })
}

/// # Safety
/// `store` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dbc_store_free(store: *mut DbcStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Defaults: dispersion criterion, λ = 0.5, 5% merges per stage, paper
/// intra updates, stage loop stop.
#[no_mangle]
pub extern "C" fn dbc_cluster_options_default() -> DbcClusterOptions {
    DbcClusterOptions {
        criterion: DbcCriterion::Dispersion,
        lambda: dbc::engine::DEFAULT_LAMBDA,
        merge_percent: dbc::engine::DEFAULT_MERGE_PERCENT,
        intra_mode: DbcIntraMode::Paper,
        target_clusters: 0,
    }
}

fn engine_config(o: &DbcClusterOptions) -> Result<EngineConfig, Error> {
    let criterion = match o.criterion {
        DbcCriterion::Dispersion => Criterion::Dispersion { lambda: o.lambda },
        DbcCriterion::DispersionNoReg => Criterion::DispersionNoReg,
        DbcCriterion::SingleLinkage => Criterion::SingleLinkage,
        DbcCriterion::SingleLinkageSizeReg => Criterion::SingleLinkageSizeReg { lambda: o.lambda },
    };
    criterion.validate()?;
    let mode = match o.intra_mode {
        DbcIntraMode::Paper => IntraMode::PaperEq7,
        DbcIntraMode::Exact => IntraMode::Exact,
    };
    let stop = match o.target_clusters {
        0 => StopRule::PaperLoop,
        t => StopRule::MinClusters(t),
    };
    Ok(EngineConfig::default()
        .with_criterion(criterion)
        .with_merge_percent(o.merge_percent)
        .with_intra_mode(mode)
        .with_stop(stop))
}

fn ffi_event(e: &MergeEvent) -> DbcMergeEvent {
    DbcMergeEvent {
        stage: e.stage,
        step: e.step,
        a: e.a,
        b: e.b,
        value: e.value,
        new_id: e.new_id,
        n_a: e.n_a,
        n_b: e.n_b,
    }
}

/// Cluster the store's features. A null `options` uses the defaults.
///
/// # Safety
/// `store` must be a live handle; `options` null or readable; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dbc_cluster(
    store: *const DbcStore,
    options: *const DbcClusterOptions,
    out: *mut *mut DbcClustering,
) -> DbcStatus {
    guard(|| {
        let s = &deref(store, "store")?.inner;
        let opts = options.as_ref().copied().unwrap_or_else(|| dbc_cluster_options_default());
        let config = engine_config(&opts)?;
        config.merges_per_stage(s.len())?;
        let run = cluster(&pairwise_distances(s)?, &config)?;
        let events = run.events.iter().map(ffi_event).collect();
        write_out(
            out,
            boxed(DbcClustering {
                state: run.state,
                events,
            }),
            "out",
        )
    })
}

/// # Safety
/// `clustering` must be a live handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn dbc_clustering_counts(
    clustering: *const DbcClustering,
    num_samples: *mut usize,
    num_clusters: *mut usize,
    num_merges: *mut usize,
) -> DbcStatus {
    guard(|| {
        let c = deref(clustering, "clustering")?;
        write_out(num_samples, c.state.num_samples(), "num_samples")?;
        write_out(num_clusters, c.state.num_clusters(), "num_clusters")?;
        write_out(num_merges, c.events.len(), "num_merges")
    })
}

/// Copy the dense cluster label of every sample into `out[0..len]`;
/// `len` must equal the sample count.
///
/// # Safety
/// `clustering` must be a live handle; `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn dbc_clustering_labels(clustering: *const DbcClustering, out: *mut usize, len: usize) -> DbcStatus {
    guard(|| copy_into(deref(clustering, "clustering")?.state.labels(), out, len))
}

/// Copy the merge log into `out[0..len]`; `len` must equal the merge count.
///
/// # Safety
/// `clustering` must be a live handle; `out` must hold `len` events.
#[no_mangle]
pub unsafe extern "C" fn dbc_clustering_merges(
    clustering: *const DbcClustering,
    out: *mut DbcMergeEvent,
    len: usize,
) -> DbcStatus {
    guard(|| copy_into(&deref(clustering, "clustering")?.events, out, len))
}

/// # Safety
/// `clustering` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dbc_clustering_free(clustering: *mut DbcClustering) {
    if !clustering.is_null() {
        drop(Box::from_raw(clustering));
    }
}

/// Pairwise F1 and purity of `predicted` against `truth`, both of length `n`.
///
/// # Safety
/// The arrays must hold `n` values; `f1` and `purity` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dbc_partition_scores(
    predicted: *const usize,
    truth: *const i64,
    n: usize,
    f1: *mut f64,
    purity: *mut f64,
) -> DbcStatus {
    guard(|| {
        let p = slice(predicted, n, "predicted")?;
        let t = slice(truth, n, "truth")?;
        let (f, pur) = partition_scores(p, t)?;
        write_out(f1, f, "f1")?;
        write_out(purity, pur, "purity")
    })
}

unsafe fn copy_into<T: Copy>(src: &[T], out: *mut T, len: usize) -> Result<(), Failure> {
    if len != src.len() {
        return Err(Error::config(format!("buffer holds {len} entries, {} needed", src.len())).into());
    }
    if len == 0 {
        return Ok(());
    }
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, len);
    Ok(())
}
