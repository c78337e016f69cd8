//! C interface to infergraph.
//!
//! Graphs and models are opaque handles created by `ig_*_parse` / `ig_*_load`
//! and released with the matching `*_free`. Every fallible call returns an
//! [`IgStatus`]; on failure a message is available from
//! [`ig_last_error_message`] on the same thread until the next call. Strings
//! returned through out-pointers are owned by the caller and must be released
//! with [`ig_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use infergraph::encoders::EncoderModel;
use infergraph::feedback::{detect_overlaps, OverlapConfig};
use infergraph::graph::{parse_graph, serialize_graph, InferenceGraph};
use infergraph::query::DefeasibleQuery;
use infergraph::stats::mcnemar_exact;
use infergraph::train::load_checkpoint;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    FeedbackError = 4,
    IoError = 5,
    ModelError = 6,
    InvalidArgument = 7,
    Panic = 8,
}

/// Opaque inference graph.
pub struct IgGraph(InferenceGraph);

/// Opaque trained encoder.
pub struct IgModel(EncoderModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

type FfiResult<T> = Result<T, (IgStatus, String)>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> IgStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IgStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            IgStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err((IgStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| (IgStatus::InvalidUtf8, format!("{what}: {e}")))
}

fn non_null<T>(p: *const T, what: &str) -> FfiResult<()> {
    if p.is_null() {
        Err((IgStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("no interior nul").into_raw()
}

/// Message describing the last failure on this thread, or null. The pointer
/// stays valid until the next `ig_*` call on the same thread.
#[no_mangle]
pub extern "C" fn ig_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn ig_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a linearized graph (`[C+] text [C-] text ...`).
///
/// # Safety
/// `text` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ig_graph_parse(text: *const c_char, out: *mut *mut IgGraph) -> IgStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let text = read_str(text, "text")?;
        let g = parse_graph(text).map_err(|e| (IgStatus::ParseError, e.to_string()))?;
        *out = Box::into_raw(Box::new(IgGraph(g)));
        Ok(())
    })
}

/// Releases a graph. Null is ignored.
///
/// # Safety
/// `g` must come from [`ig_graph_parse`] and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn ig_graph_free(g: *mut IgGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Canonical linearization of `g`.
///
/// # Safety
/// `g` must be a live graph handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ig_graph_serialize(g: *const IgGraph, out: *mut *mut c_char) -> IgStatus {
    guard(|| {
        non_null(out, "out")?;
        non_null(g, "graph")?;
        *out = to_c_string(serialize_graph(&(*g).0));
        Ok(())
    })
}

/// Repetition feedback for `g` at the given Jaccard threshold. Writes the
/// feedback sentence to `out_message` and the number of overlap groups to
/// `out_groups` (0 when the graph is clean).
///
/// # Safety
/// `g` must be a live graph handle; the out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ig_graph_feedback(
    g: *const IgGraph,
    threshold: f64,
    out_message: *mut *mut c_char,
    out_groups: *mut usize,
) -> IgStatus {
    guard(|| {
        non_null(out_message, "out_message")?;
        non_null(out_groups, "out_groups")?;
        non_null(g, "graph")?;
        let cfg = OverlapConfig::default()
            .with_threshold(threshold)
            .map_err(|e| (IgStatus::InvalidArgument, e.to_string()))?;
        let r = detect_overlaps(&(*g).0, &cfg).map_err(|e| (IgStatus::FeedbackError, e.to_string()))?;
        *out_groups = r.groups().len();
        *out_message = to_c_string(r.message().to_string());
        Ok(())
    })
}

/// Loads a checkpoint written by `infergraph train`.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ig_model_load(path: *const c_char, out: *mut *mut IgModel) -> IgStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let path = read_str(path, "path")?;
        let m = load_checkpoint(Path::new(path)).map_err(|e| {
            let status = match e {
                infergraph::train::TrainError::Io { .. } => IgStatus::IoError,
                _ => IgStatus::ModelError,
            };
            (status, e.to_string())
        })?;
        *out = Box::into_raw(Box::new(IgModel(m)));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `m` must come from [`ig_model_load`] and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn ig_model_free(m: *mut IgModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Encoder kind of `m` (`moe`, `gcn`, `str` or `baseline`).
///
/// # Safety
/// `m` must be a live model handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ig_model_kind(m: *const IgModel, out: *mut *mut c_char) -> IgStatus {
    guard(|| {
        non_null(out, "out")?;
        non_null(m, "model")?;
        *out = to_c_string((*m).0.kind().to_string());
        Ok(())
    })
}

/// Classifies one query. `out_logits` receives two values (strengthens,
/// weakens); `out_class` receives 0 for strengthens and 1 for weakens.
///
/// # Safety
/// `m` and `g` must be live handles, the strings nul-terminated, and
/// `out_logits` must point to at least two doubles.
#[no_mangle]
pub unsafe extern "C" fn ig_model_predict(
    m: *const IgModel,
    premise: *const c_char,
    hypothesis: *const c_char,
    update: *const c_char,
    g: *const IgGraph,
    out_logits: *mut f64,
    out_class: *mut u32,
) -> IgStatus {
    guard(|| {
        non_null(m, "model")?;
        non_null(g, "graph")?;
        non_null(out_logits, "out_logits")?;
        non_null(out_class, "out_class")?;
        let q = DefeasibleQuery::new(
            read_str(premise, "premise")?,
            read_str(hypothesis, "hypothesis")?,
            read_str(update, "update")?,
            None,
        )
        .map_err(|e| (IgStatus::InvalidArgument, e.to_string()))?;
        let model = &(*m).0;
        let err = |e: infergraph::encoders::EncoderError| (IgStatus::ModelError, e.to_string());
        let feats = model.featurize(&q, &(*g).0).map_err(err)?;
        let (logits, _) = model.predict(&feats).map_err(err)?;
        *out_logits = logits[0];
        *out_logits.add(1) = logits[1];
        *out_class = u32::from(logits[1] > logits[0]);
        Ok(())
    })
}

/// Exact two-sided McNemar p-value for discordant counts `n01`, `n10`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ig_mcnemar_exact(n01: u64, n10: u64, out: *mut f64) -> IgStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = mcnemar_exact(n01, n10);
        Ok(())
    })
}
