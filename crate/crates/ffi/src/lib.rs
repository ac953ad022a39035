//! C ABI over the fusionrec query path.
//!
//! Every function returns an [`FrStatus`]. On failure a description is kept
//! per thread and can be read with [`fr_last_error_message`]. Handles are
//! opaque; free them with the matching `_free` function. Strings passed in
//! must be NUL-terminated UTF-8. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use fusionrec::pipeline::{make_encoder, ArtifactPaths, Engine, ProviderKind};
use fusionrec::recommender::SeedQuery;
use fusionrec::scoring::Weights;
use fusionrec::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Corrupt = 4,
    Incompatible = 5,
    UnknownSeed = 6,
    MissingEmbedding = 7,
    OutOfRange = 8,
    Internal = 99,
}

/// Loaded catalog, models and index.
pub struct FrEngine {
    engine: Engine,
}

/// Ranked output of one query.
pub struct FrResults {
    ids: Vec<CString>,
    scores: Vec<FrScore>,
}

/// Similarity components of one recommendation.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FrScore {
    pub combined: f64,
    pub fusion: f64,
    pub genre: f64,
    pub tfidf: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> FrStatus {
    match err {
        Error::FileNotFound(_) | Error::Io { .. } => FrStatus::Io,
        Error::Corrupt { .. } | Error::TooManyMalformed { .. } => FrStatus::Corrupt,
        Error::IncompatibleIndex | Error::ProviderMismatch { .. } | Error::ShapeMismatch { .. } => {
            FrStatus::Incompatible
        }
        Error::UnknownSeedId(_) => FrStatus::UnknownSeed,
        Error::MissingEmbedding(_) | Error::MissingEmbeddings(_) => FrStatus::MissingEmbedding,
        Error::InvalidConfig(_) | Error::InvalidWeights(_) | Error::EmptyInput => FrStatus::InvalidArgument,
        _ => FrStatus::Internal,
    }
}

struct Failure(FrStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

/// Runs `f`, recording any error or panic for [`fr_last_error_message`].
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            FrStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("internal error: {msg}"));
            FrStatus::Internal
        }
    }
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(FrStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(FrStatus::InvalidArgument, format!("{name} is not valid UTF-8")))
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, Failure> {
    str_arg(p, name).map(PathBuf::from)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or an empty string.
/// Valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn fr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Opens an engine. `embeddings` may be null to use the built-in hashing
/// encoder; otherwise it names an embedding file. TF-IDF is refit from the
/// catalog and checked against the index.
///
/// # Safety
/// Path arguments must be valid NUL-terminated strings (`embeddings` may be
/// null) and `out` must point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn fr_engine_open(
    catalog: *const c_char,
    genre_model: *const c_char,
    model: *const c_char,
    index: *const c_char,
    embeddings: *const c_char,
    out: *mut *mut FrEngine,
) -> FrStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(FrStatus::NullArgument, "out is null".into()));
        }
        *out = ptr::null_mut();
        let catalog = path_arg(catalog, "catalog")?;
        let genre_model = path_arg(genre_model, "genre_model")?;
        let model = path_arg(model, "model")?;
        let index = path_arg(index, "index")?;
        let embeddings = if embeddings.is_null() {
            None
        } else {
            Some(path_arg(embeddings, "embeddings")?)
        };
        let kind = if embeddings.is_some() {
            ProviderKind::File
        } else {
            ProviderKind::Fallback
        };
        let encoder = make_encoder(kind, embeddings.as_deref())?;
        let paths = ArtifactPaths {
            catalog: &catalog,
            genre_model: &genre_model,
            model: &model,
            index: &index,
        };
        let engine = Engine::open(&paths, encoder)?;
        *out = Box::into_raw(Box::new(FrEngine { engine }));
        Ok(())
    })
}

/// # Safety
/// `engine` must be null or a handle from [`fr_engine_open`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fr_engine_free(engine: *mut FrEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Number of target items in the engine's index.
///
/// # Safety
/// `engine` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fr_engine_index_len(engine: *const FrEngine, out: *mut usize) -> FrStatus {
    guard(|| {
        if engine.is_null() || out.is_null() {
            return Err(Failure(FrStatus::NullArgument, "engine or out is null".into()));
        }
        *out = (&*engine).engine.index.len();
        Ok(())
    })
}

/// Ranks target items for `n_seeds` source item ids. `weights` is null for
/// the engine defaults or points to three values (fusion, genre, tf-idf)
/// that are non-negative and sum to one.
///
/// # Safety
/// `engine` must be a live handle, `seeds` must point to `n_seeds` valid
/// strings, `weights` must be null or point to three doubles and `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn fr_recommend(
    engine: *const FrEngine,
    seeds: *const *const c_char,
    n_seeds: usize,
    k: usize,
    weights: *const f64,
    out: *mut *mut FrResults,
) -> FrStatus {
    guard(|| {
        if engine.is_null() || out.is_null() || (seeds.is_null() && n_seeds > 0) {
            return Err(Failure(FrStatus::NullArgument, "engine, seeds or out is null".into()));
        }
        *out = ptr::null_mut();
        if n_seeds == 0 {
            return Err(Failure(FrStatus::InvalidArgument, "at least one seed is required".into()));
        }
        let seed_ids = std::slice::from_raw_parts(seeds, n_seeds)
            .iter()
            .enumerate()
            .map(|(i, &p)| str_arg(p, &format!("seeds[{i}]")).map(str::to_string))
            .collect::<Result<Vec<_>, _>>()?;
        let weights = if weights.is_null() {
            Weights::default()
        } else {
            let w = std::slice::from_raw_parts(weights, 3);
            Weights::new(w[0], w[1], w[2])?
        };
        let recs = (&*engine)
            .engine
            .recommender()?
            .recommend(&SeedQuery::new(seed_ids, k), weights)?;
        let results = FrResults {
            ids: recs
                .iter()
                .map(|r| CString::new(r.target_id.as_str()).unwrap_or_default())
                .collect(),
            scores: recs
                .iter()
                .map(|r| FrScore {
                    combined: r.breakdown.combined,
                    fusion: r.breakdown.fusion_sim,
                    genre: r.breakdown.genre_sim,
                    tfidf: r.breakdown.tfidf_sim,
                })
                .collect(),
        };
        *out = Box::into_raw(Box::new(results));
        Ok(())
    })
}

/// Number of recommendations, or 0 for a null handle.
///
/// # Safety
/// `results` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fr_results_len(results: *const FrResults) -> usize {
    if results.is_null() {
        0
    } else {
        (&*results).ids.len()
    }
}

/// Target id at rank `i + 1`, owned by `results`; null if out of range.
///
/// # Safety
/// `results` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fr_results_id(results: *const FrResults, i: usize) -> *const c_char {
    if results.is_null() {
        return ptr::null();
    }
    let results = &*results;
    results.ids.get(i).map_or(ptr::null(), |s| s.as_ptr())
}

/// # Safety
/// `results` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fr_results_score(results: *const FrResults, i: usize, out: *mut FrScore) -> FrStatus {
    guard(|| {
        if results.is_null() || out.is_null() {
            return Err(Failure(FrStatus::NullArgument, "results or out is null".into()));
        }
        let results = &*results;
        let s = results
            .scores
            .get(i)
            .ok_or_else(|| Failure(FrStatus::OutOfRange, format!("index {i} out of range")))?;
        *out = *s;
        Ok(())
    })
}

/// # Safety
/// `results` must be null or a handle from [`fr_recommend`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fr_results_free(results: *mut FrResults) {
    if !results.is_null() {
        drop(Box::from_raw(results));
    }
}
