//! C ABI over `heurlink`: graph and model handles, heuristic scoring,
//! ranking metrics and checkpoint scoring.
//!
//! Every function returns an [`HlStatus`]. On failure a message is kept per
//! thread and can be read with [`hl_last_error`]. Panics never cross the
//! boundary; they are reported as `HL_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use heurlink::eval::{auc_metric, hits_at_k, Metric};
use heurlink::heuristics::{self, HeuristicId};
use heurlink::model::{self, Checkpoint};
use heurlink::{DenseMatrix, Error, PropagationOperators, SparseGraph};

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    OutOfRange = 3,
    DimensionMismatch = 4,
    NonFinite = 5,
    Io = 6,
    Parse = 7,
    LimitExceeded = 8,
    Invariant = 9,
    Version = 10,
    Internal = 11,
}

/// Opaque undirected graph.
pub struct HlGraph {
    graph: SparseGraph,
}

/// Opaque trained model loaded from a checkpoint.
pub struct HlModel {
    checkpoint: Checkpoint,
}

/// Heuristic parameters. A NaN real or a negative order selects the
/// method's default.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct HlHeuristicParams {
    pub gamma: f64,
    pub phi: f64,
    pub alpha: f64,
    pub order: i64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> HlStatus {
    match e {
        Error::NodeOutOfRange { .. } => HlStatus::OutOfRange,
        Error::EmptyGraph | Error::InvalidParameter(_) | Error::Insufficient(_) => HlStatus::InvalidArgument,
        Error::DimensionMismatch(_) => HlStatus::DimensionMismatch,
        Error::NonFinite(_) => HlStatus::NonFinite,
        Error::LimitExceeded(_) => HlStatus::LimitExceeded,
        Error::Parse { .. } | Error::Json(_) => HlStatus::Parse,
        Error::Invariant(_) => HlStatus::Invariant,
        Error::Version { .. } => HlStatus::Version,
        Error::Io(_) => HlStatus::Io,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HlStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            HlStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            HlStatus::Internal
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    // SAFETY: the caller guarantees `p` points to `len` readable elements.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    // SAFETY: the caller guarantees `p` points to `len` writable elements.
    Ok(unsafe { std::slice::from_raw_parts_mut(p, len) })
}

unsafe fn c_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    // SAFETY: the caller guarantees a NUL-terminated string.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|e| Failure::Lib(Error::InvalidParameter(format!("{what} is not UTF-8: {e}"))))
}

fn pairs_of(flat: &[u64]) -> Vec<(usize, usize)> {
    flat.chunks_exact(2).map(|p| (p[0] as usize, p[1] as usize)).collect()
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a graph from `num_edges` pairs stored flat in `edges`
/// (`2 * num_edges` ids).
///
/// # Safety
/// `edges` must hold `2 * num_edges` values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_graph_from_edges(
    num_nodes: u64,
    edges: *const u64,
    num_edges: usize,
    out: *mut *mut HlGraph,
) -> HlStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let flat = unsafe { slice(edges, 2 * num_edges, "edges") }?;
        let graph = SparseGraph::from_edges(num_nodes as usize, &pairs_of(flat))?;
        unsafe { *out = Box::into_raw(Box::new(HlGraph { graph })) };
        Ok(())
    })
}

/// Reads a whitespace-separated edge list; the node count is `1 + max id`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hl_graph_load(path: *const c_char, out: *mut *mut HlGraph) -> HlStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let p = unsafe { c_str(path, "path") }?;
        let graph = SparseGraph::from_edge_list_file(p, None)?;
        unsafe { *out = Box::into_raw(Box::new(HlGraph { graph })) };
        Ok(())
    })
}

/// # Safety
/// `graph` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn hl_graph_num_nodes(graph: *const HlGraph) -> u64 {
    unsafe { graph.as_ref() }.map_or(0, |g| g.graph.num_nodes() as u64)
}

/// # Safety
/// `graph` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn hl_graph_num_edges(graph: *const HlGraph) -> u64 {
    unsafe { graph.as_ref() }.map_or(0, |g| g.graph.num_edges() as u64)
}

/// Frees a graph; NULL is ignored.
///
/// # Safety
/// `graph` must come from this library and be freed at most once.
#[no_mangle]
pub unsafe extern "C" fn hl_graph_free(graph: *mut HlGraph) {
    if !graph.is_null() {
        drop(unsafe { Box::from_raw(graph) });
    }
}

/// Parameters that select every method default.
#[no_mangle]
pub extern "C" fn hl_heuristic_params_default() -> HlHeuristicParams {
    HlHeuristicParams {
        gamma: f64::NAN,
        phi: f64::NAN,
        alpha: f64::NAN,
        order: -1,
    }
}

/// Scores `num_pairs` flat pairs with a named heuristic (`cn`, `llhn`,
/// `ra`, `katz`, `glhn`, `rwr`, `lpi`, `lrw`, `ra_sq`, `ra_sym`). `params`
/// may be NULL for defaults.
///
/// # Safety
/// `pairs` must hold `2 * num_pairs` values and `out` `num_pairs` slots.
#[no_mangle]
pub unsafe extern "C" fn hl_heuristic_score(
    graph: *const HlGraph,
    method: *const c_char,
    params: *const HlHeuristicParams,
    pairs: *const u64,
    num_pairs: usize,
    out: *mut f64,
) -> HlStatus {
    guard(|| {
        let g = unsafe { graph.as_ref() }.ok_or(Failure::Null("graph"))?;
        let m = unsafe { c_str(method, "method") }?;
        let p = unsafe { params.as_ref() }.copied().unwrap_or_else(|| hl_heuristic_params_default());
        let real = |v: f64| (!v.is_nan()).then_some(v);
        let order = (p.order >= 0).then_some(p.order as usize);
        let id = HeuristicId::from_parts(m, real(p.gamma), real(p.phi), real(p.alpha), order)?;
        let pairs = pairs_of(unsafe { slice(pairs, 2 * num_pairs, "pairs") }?);
        let dst = unsafe { slice_mut(out, num_pairs, "out") }?;
        let scores = heuristics::score_pairs(&g.graph, &id, &pairs)?;
        dst.copy_from_slice(&scores);
        Ok(())
    })
}

/// Fraction of positives scoring strictly above the `k`-th largest
/// negative.
///
/// # Safety
/// Arrays must hold the stated number of values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_hits_at_k(
    pos: *const f64,
    num_pos: usize,
    neg: *const f64,
    num_neg: usize,
    k: usize,
    out: *mut f64,
) -> HlStatus {
    guard(|| {
        let (p, n) = unsafe { (slice(pos, num_pos, "pos")?, slice(neg, num_neg, "neg")?) };
        let v = hits_at_k(p, n, k)?;
        unsafe { out.as_mut() }.map(|o| *o = v).ok_or(Failure::Null("out"))
    })
}

/// Mean reciprocal rank of each positive against the shared negatives,
/// ties counting half.
///
/// # Safety
/// Arrays must hold the stated number of values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_mrr(
    pos: *const f64,
    num_pos: usize,
    neg: *const f64,
    num_neg: usize,
    out: *mut f64,
) -> HlStatus {
    guard(|| {
        let (p, n) = unsafe { (slice(pos, num_pos, "pos")?, slice(neg, num_neg, "neg")?) };
        let v = Metric::Mrr.evaluate(p, n)?;
        unsafe { out.as_mut() }.map(|o| *o = v).ok_or(Failure::Null("out"))
    })
}

/// Probability that a random positive outscores a random negative.
///
/// # Safety
/// Arrays must hold the stated number of values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hl_auc(
    pos: *const f64,
    num_pos: usize,
    neg: *const f64,
    num_neg: usize,
    out: *mut f64,
) -> HlStatus {
    guard(|| {
        let (p, n) = unsafe { (slice(pos, num_pos, "pos")?, slice(neg, num_neg, "neg")?) };
        let v = auc_metric(p, n)?;
        unsafe { out.as_mut() }.map(|o| *o = v).ok_or(Failure::Null("out"))
    })
}

/// Loads a JSON checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hl_model_load(path: *const c_char, out: *mut *mut HlModel) -> HlStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let p = unsafe { c_str(path, "path") }?;
        let checkpoint = Checkpoint::load(p)?;
        unsafe { *out = Box::into_raw(Box::new(HlModel { checkpoint })) };
        Ok(())
    })
}

/// Node count the model was trained for.
///
/// # Safety
/// `model` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn hl_model_num_nodes(model: *const HlModel) -> u64 {
    unsafe { model.as_ref() }.map_or(0, |m| m.checkpoint.num_nodes as u64)
}

/// Scores flat pairs with a model on a propagation graph. `features` is a
/// row-major `rows × cols` matrix, or NULL when the model uses embeddings
/// only.
///
/// # Safety
/// Arrays must hold the stated number of values; handles must be live.
#[no_mangle]
pub unsafe extern "C" fn hl_model_score(
    model: *const HlModel,
    graph: *const HlGraph,
    features: *const f64,
    rows: usize,
    cols: usize,
    pairs: *const u64,
    num_pairs: usize,
    out: *mut f64,
) -> HlStatus {
    guard(|| {
        let m = unsafe { model.as_ref() }.ok_or(Failure::Null("model"))?;
        let g = unsafe { graph.as_ref() }.ok_or(Failure::Null("graph"))?;
        let x = if features.is_null() {
            None
        } else {
            let v = unsafe { slice(features, rows * cols, "features") }?;
            Some(DenseMatrix::from_vec(rows, cols, v.to_vec())?)
        };
        let pairs = pairs_of(unsafe { slice(pairs, 2 * num_pairs, "pairs") }?);
        let dst = unsafe { slice_mut(out, num_pairs, "out") }?;
        m.checkpoint.check_graph(&g.graph)?;
        let ops = PropagationOperators::new(&g.graph);
        let z = model::forward(&m.checkpoint.params, &ops, x.as_ref(), model::Mode::Eval)?.z;
        let scores = model::predict_links(&m.checkpoint.params, &z, &pairs)?;
        dst.copy_from_slice(&scores);
        Ok(())
    })
}

/// Frees a model; NULL is ignored.
///
/// # Safety
/// `model` must come from this library and be freed at most once.
#[no_mangle]
pub unsafe extern "C" fn hl_model_free(model: *mut HlModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}
