//! C ABI over `kasgcn`: opaque graph and model handles, status codes and a
//! per-thread last-error message.
//!
//! Every function returns a [`KasgcnStatus`]; on failure the message is
//! available from [`kasgcn_last_error`] until the next failing call on the
//! same thread. Handles are released with their `_free` function.

use kasgcn::cli::{cmd_run, CliError, RunConfig};
use kasgcn::eval::{avg_cosine_similarity, cluster_quality, kmeanspp, EvalError};
use kasgcn::graphstore::{
    graph_stats, load_edge_list, preprocess, Delimiter, EdgeListFormat, GraphError, RawEdge, RawEdgeList, SignedGraph,
};
use kasgcn::kan::save_named;
use kasgcn::tensor::Tensor;
use kasgcn::train::{train, RunArtifacts, TrainError};
use libc::{c_char, c_int, size_t};
use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

/// Result of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KasgcnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Graph = 5,
    Config = 6,
    Train = 7,
    Eval = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Edge-list field separator.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KasgcnDelimiter {
    Auto = 0,
    Comma = 1,
    Tab = 2,
    Space = 3,
}

/// Signed clustering quality of a labelling.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KasgcnClusterQuality {
    pub pos_in: f64,
    pub neg_out: f64,
    pub q: f64,
    /// Nonzero when the graph has no positive edges and `pos_in` is set to 1.
    pub pos_in_vacuous: c_int,
    /// Nonzero when the graph has no negative edges and `neg_out` is set to 1.
    pub neg_out_vacuous: c_int,
}

/// A preprocessed signed graph.
pub struct KasgcnGraph {
    graph: SignedGraph,
}

/// A trained network with its embeddings and loss curve.
pub struct KasgcnModel {
    run: RunArtifacts,
}

struct Failure(KasgcnStatus, String);

type Outcome<T> = Result<T, Failure>;

impl From<GraphError> for Failure {
    fn from(e: GraphError) -> Self {
        let code = match e {
            GraphError::Io { .. } => KasgcnStatus::Io,
            _ => KasgcnStatus::Graph,
        };
        Failure(code, e.to_string())
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        let code = match e {
            TrainError::Io { .. } => KasgcnStatus::Io,
            TrainError::Config(_) => KasgcnStatus::Config,
            _ => KasgcnStatus::Train,
        };
        Failure(code, e.to_string())
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        Failure(KasgcnStatus::Eval, e.to_string())
    }
}

impl From<CliError> for Failure {
    fn from(e: CliError) -> Self {
        let code = match &e {
            CliError::Config(_) => KasgcnStatus::Config,
            CliError::Io { .. } => KasgcnStatus::Io,
            CliError::EmptyDataset { .. } | CliError::Graph(_) => KasgcnStatus::Graph,
            CliError::Eval(_) => KasgcnStatus::Eval,
            _ => KasgcnStatus::Train,
        };
        Failure(code, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `f`, turning errors and panics into a status plus last-error message.
fn guard(f: impl FnOnce() -> Outcome<()>) -> KasgcnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KasgcnStatus::Ok,
        Ok(Err(Failure(code, msg))) => {
            set_last_error(&msg);
            code
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_last_error(&format!("panic: {msg}"));
            KasgcnStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(KasgcnStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(KasgcnStatus::InvalidArgument, msg.into())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Outcome<&'a str> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(KasgcnStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Outcome<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Outcome<&'a T> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Outcome<&'a mut T> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn matrix_arg(p: *const f64, rows: usize, cols: usize, what: &str) -> Outcome<Tensor> {
    let len = rows.checked_mul(cols).ok_or_else(|| invalid(format!("{what} is too large")))?;
    let data = slice_arg(p, len, what)?;
    Tensor::from_vec(rows, cols, data.to_vec()).map_err(|e| invalid(format!("{what}: {e}")))
}

fn copy_out(src: &[f64], dst: *mut f64, len: usize) -> Outcome<()> {
    if len < src.len() {
        return Err(Failure(
            KasgcnStatus::BufferTooSmall,
            format!("buffer holds {len} values, need {}", src.len()),
        ));
    }
    if src.is_empty() {
        return Ok(());
    }
    if dst.is_null() {
        return Err(null("output buffer"));
    }
    // SAFETY: the caller provides `len ≥ src.len()` writable values at `dst`.
    unsafe { std::ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len()) };
    Ok(())
}

fn string_out(s: String, out: *mut *mut c_char) -> Outcome<()> {
    // SAFETY: `out` is checked for null; the caller owns the returned string.
    let slot = unsafe { out_arg(out, "out")? };
    *slot = CString::new(s).map_err(|_| invalid("string contains NUL"))?.into_raw();
    Ok(())
}

/// Flat TOML config text, with `dataset` optional because the graph is
/// supplied directly.
fn in_memory_config(text: &str) -> Outcome<RunConfig> {
    let mut overrides = Vec::new();
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Failure(KasgcnStatus::Config, e.to_string()))?;
    if !table.contains_key("dataset") {
        overrides.push("dataset=\"<memory>\"".to_string());
    }
    Ok(RunConfig::parse(text, &overrides)?)
}

/// Message of the last failure on this thread; empty if none. The pointer
/// stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn kasgcn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn kasgcn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn kasgcn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads and preprocesses an edge list.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kasgcn_graph_load(
    path: *const c_char,
    delimiter: KasgcnDelimiter,
    skip_header: bool,
    out: *mut *mut KasgcnGraph,
) -> KasgcnStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let slot = out_arg(out, "out")?;
        let delimiter = match delimiter {
            KasgcnDelimiter::Auto => Delimiter::Auto,
            KasgcnDelimiter::Comma => Delimiter::Comma,
            KasgcnDelimiter::Tab => Delimiter::Tab,
            KasgcnDelimiter::Space => Delimiter::Space,
        };
        let raw = load_edge_list(Path::new(path), EdgeListFormat { delimiter, skip_header })?;
        *slot = Box::into_raw(Box::new(KasgcnGraph { graph: preprocess(&raw) }));
        Ok(())
    })
}

/// Builds a graph from `count` raw records `(sources[i], targets[i],
/// weights[i])`, preprocessed exactly like a loaded edge list.
///
/// # Safety
/// The three arrays must hold `count` values each; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kasgcn_graph_from_edges(
    sources: *const i64,
    targets: *const i64,
    weights: *const f64,
    count: size_t,
    out: *mut *mut KasgcnGraph,
) -> KasgcnStatus {
    guard(|| {
        let s = slice_arg(sources, count, "sources")?;
        let t = slice_arg(targets, count, "targets")?;
        let w = slice_arg(weights, count, "weights")?;
        let slot = out_arg(out, "out")?;
        if let Some(bad) = w.iter().find(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite weight {bad}")));
        }
        let raw = RawEdgeList {
            records: (0..count)
                .map(|i| RawEdge {
                    source: s[i],
                    target: t[i],
                    weight: w[i],
                })
                .collect(),
        };
        *slot = Box::into_raw(Box::new(KasgcnGraph { graph: preprocess(&raw) }));
        Ok(())
    })
}

/// # Safety
/// `g` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kasgcn_graph_free(g: *mut KasgcnGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Node and edge counts after preprocessing.
///
/// # Safety
/// `g` must be a live handle; `nodes` and `edges` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kasgcn_graph_size(g: *const KasgcnGraph, nodes: *mut size_t, edges: *mut size_t) -> KasgcnStatus {
    guard(|| {
        let g = handle(g, "graph")?;
        *out_arg(nodes, "nodes")? = g.graph.node_count();
        *out_arg(edges, "edges")? = g.graph.edge_count();
        Ok(())
    })
}

/// Original id of each node, in node order. `ids` must hold the node count.
///
/// # Safety
/// `g` must be a live handle; `ids` must hold `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn kasgcn_graph_node_ids(g: *const KasgcnGraph, ids: *mut i64, len: size_t) -> KasgcnStatus {
    guard(|| {
        let g = handle(g, "graph")?;
        let src = g.graph.node_ids();
        if len < src.len() {
            return Err(Failure(
                KasgcnStatus::BufferTooSmall,
                format!("buffer holds {len} ids, need {}", src.len()),
            ));
        }
        if !src.is_empty() {
            std::ptr::copy_nonoverlapping(src.as_ptr(), out_arg(ids, "ids")?, src.len());
        }
        Ok(())
    })
}

/// Graph statistics as a JSON object; free with [`kasgcn_string_free`].
///
/// # Safety
/// `g` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kasgcn_graph_stats_json(g: *const KasgcnGraph, out: *mut *mut c_char) -> KasgcnStatus {
    guard(|| {
        let g = handle(g, "graph")?;
        let stats = graph_stats(&g.graph)?;
        let json = serde_json::to_string(&stats).map_err(|e| invalid(e.to_string()))?;
        string_out(json, out)
    })
}

/// Trains a model on `g`. `config_toml` uses the CLI's flat config keys
/// (`variant`, `epochs`, `seed`, ...); null or empty means all defaults.
///
/// # Safety
/// `g` must be a live handle; `config_toml` null or NUL-terminated; `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn kasgcn_train(
    g: *const KasgcnGraph,
    config_toml: *const c_char,
    out: *mut *mut KasgcnModel,
) -> KasgcnStatus {
    guard(|| {
        let g = handle(g, "graph")?;
        let text = if config_toml.is_null() { "" } else { str_arg(config_toml, "config")? };
        let slot = out_arg(out, "out")?;
        let config = in_memory_config(text)?;
        let run = train(&g.graph, &config.model_config(), &config.train_config())?;
        *slot = Box::into_raw(Box::new(KasgcnModel { run }));
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kasgcn_model_free(m: *mut KasgcnModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Embedding matrix shape: one row per node.
///
/// # Safety
/// `m` must be a live handle; `rows` and `cols` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kasgcn_model_embedding_shape(
    m: *const KasgcnModel,
    rows: *mut size_t,
    cols: *mut size_t,
) -> KasgcnStatus {
    guard(|| {
        let m = handle(m, "model")?;
        let (r, c) = m.run.embeddings.shape();
        *out_arg(rows, "rows")? = r;
        *out_arg(cols, "cols")? = c;
        Ok(())
    })
}

/// Copies the row-major embeddings into `buf` of `len` values.
///
/// # Safety
/// `m` must be a live handle; `buf` must hold `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn kasgcn_model_embeddings(m: *const KasgcnModel, buf: *mut f64, len: size_t) -> KasgcnStatus {
    guard(|| copy_out(handle(m, "model")?.run.embeddings.data(), buf, len))
}

/// Number of recorded losses, one per epoch.
///
/// # Safety
/// `m` must be a live handle; `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kasgcn_model_loss_len(m: *const KasgcnModel, len: *mut size_t) -> KasgcnStatus {
    guard(|| {
        *out_arg(len, "len")? = handle(m, "model")?.run.loss_curve.len();
        Ok(())
    })
}

/// Copies the loss curve into `buf` of `len` values.
///
/// # Safety
/// `m` must be a live handle; `buf` must hold `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn kasgcn_model_loss_curve(m: *const KasgcnModel, buf: *mut f64, len: size_t) -> KasgcnStatus {
    guard(|| copy_out(&handle(m, "model")?.run.loss_curve, buf, len))
}

/// Training wall-clock time in seconds.
///
/// # Safety
/// `m` must be a live handle; `seconds` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kasgcn_model_seconds(m: *const KasgcnModel, seconds: *mut f64) -> KasgcnStatus {
    guard(|| {
        *out_arg(seconds, "seconds")? = handle(m, "model")?.run.wall_clock_seconds;
        Ok(())
    })
}

/// Writes all trained parameters to a checkpoint file.
///
/// # Safety
/// `m` must be a live handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn kasgcn_model_save(m: *const KasgcnModel, path: *const c_char) -> KasgcnStatus {
    guard(|| {
        let m = handle(m, "model")?;
        let path = str_arg(path, "path")?;
        save_named(Path::new(path), &m.run.network.named_tensors())
            .map_err(|e| Failure(KasgcnStatus::Io, e.to_string()))
    })
}

/// k-means++ on a row-major `rows × cols` matrix; writes one label per row.
///
/// # Safety
/// `points` must hold `rows·cols` values and `labels` `rows` writable values.
#[no_mangle]
pub unsafe extern "C" fn kasgcn_kmeans(
    points: *const f64,
    rows: size_t,
    cols: size_t,
    k: size_t,
    seed: u64,
    labels: *mut size_t,
) -> KasgcnStatus {
    guard(|| {
        let x = matrix_arg(points, rows, cols, "points")?;
        let a = kmeanspp(&x, k, seed)?;
        if rows > 0 {
            if labels.is_null() {
                return Err(null("labels"));
            }
            std::ptr::copy_nonoverlapping(a.labels.as_ptr(), labels, rows);
        }
        Ok(())
    })
}

/// Quality of a node labelling of `g`; `len` must equal the node count.
///
/// # Safety
/// `g` must be a live handle; `labels` must hold `len` values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kasgcn_cluster_quality(
    g: *const KasgcnGraph,
    labels: *const size_t,
    len: size_t,
    out: *mut KasgcnClusterQuality,
) -> KasgcnStatus {
    guard(|| {
        let g = handle(g, "graph")?;
        let labels = slice_arg(labels, len, "labels")?;
        let slot = out_arg(out, "out")?;
        let q = cluster_quality(&g.graph, labels)?;
        *slot = KasgcnClusterQuality {
            pos_in: q.pos_in,
            neg_out: q.neg_out,
            q: q.q,
            pos_in_vacuous: c_int::from(q.pos_in_vacuous),
            neg_out_vacuous: c_int::from(q.neg_out_vacuous),
        };
        Ok(())
    })
}

/// Mean row-wise cosine of two row-major `rows × cols` matrices, skipping
/// rows where either side is zero; `skipped` may be null.
///
/// # Safety
/// `a` and `b` must hold `rows·cols` values; `mean` writable; `skipped`
/// null or writable.
#[no_mangle]
pub unsafe extern "C" fn kasgcn_cosine_similarity(
    a: *const f64,
    b: *const f64,
    rows: size_t,
    cols: size_t,
    mean: *mut f64,
    skipped: *mut size_t,
) -> KasgcnStatus {
    guard(|| {
        let a = matrix_arg(a, rows, cols, "a")?;
        let b = matrix_arg(b, rows, cols, "b")?;
        let slot = out_arg(mean, "mean")?;
        let c = avg_cosine_similarity(&a, &b)?;
        *slot = c.mean;
        if let Some(s) = skipped.as_mut() {
            *s = c.skipped;
        }
        Ok(())
    })
}

/// Runs a full CLI configuration (same keys as `kasgcn run`), writing its
/// outputs to `output_dir`. `jobs` repeats run concurrently.
///
/// # Safety
/// `config_toml` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn kasgcn_run(config_toml: *const c_char, jobs: size_t) -> KasgcnStatus {
    guard(|| {
        let config = RunConfig::parse(str_arg(config_toml, "config")?, &[])?;
        cmd_run(&config, jobs)?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn last_error_is_per_call_message() {
        let mut g = std::ptr::null_mut();
        let status = unsafe { kasgcn_graph_load(std::ptr::null(), KasgcnDelimiter::Auto, false, &mut g) };
        assert_eq!(status, KasgcnStatus::NullPointer);
        let msg = unsafe { CStr::from_ptr(kasgcn_last_error()) }.to_str().unwrap();
        assert_eq!(msg, "path is null");
    }

    #[test]
    fn panics_become_status() {
        assert_eq!(guard(|| panic!("boom")), KasgcnStatus::Panic);
        let msg = unsafe { CStr::from_ptr(kasgcn_last_error()) }.to_str().unwrap();
        assert_eq!(msg, "panic: boom");
    }

    #[test]
    fn copy_out_checks_capacity() {
        let mut buf = [0.0; 2];
        assert!(copy_out(&[1.0, 2.0, 3.0], buf.as_mut_ptr(), 2).is_err());
        assert!(copy_out(&[1.0, 2.0], buf.as_mut_ptr(), 2).is_ok());
        assert_eq!(buf, [1.0, 2.0]);
    }
}
