//! C ABI over the `hetmile` library.
//!
//! Every object crosses the boundary as an opaque handle that the caller
//! frees with the matching `*_free` function. Fallible calls return an
//! [`HmStatus`]; the message of the most recent failure on the calling
//! thread is available from [`hm_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use hetmile::coarsen::{CoarsenChain, Strategy};
use hetmile::evaluate::{node_classification, LabelSet};
use hetmile::hetgraph::{load_graph, parse_schema, EmbeddingFormat, EmbeddingMatrix, HeteroGraph};
use hetmile::pipeline::{coarsen_stage, run_pipeline, PipelineConfig};
use hetmile::synth::{generate, SynthConfig};
use hetmile::Error;

/// Result code of every fallible call. The numeric values of the first
/// four match the exit codes of the `hetmile` command line tool.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HmStatus {
    Ok = 0,
    ConfigError = 2,
    DataError = 3,
    NumericError = 4,
    NullPointer = 10,
    InvalidArgument = 11,
    Panic = 12,
}

/// Values accepted in [`HmPipelineOptions::strategy`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HmStrategy {
    JaccMax = 0,
    JaccWrs = 1,
    Lsh = 2,
}

/// A loaded heterogeneous graph.
pub struct HmGraph(HeteroGraph);

/// Node-by-dimension embedding matrix.
pub struct HmEmbedding(EmbeddingMatrix);

/// Coarsening chain `G_0 .. G_m` with its matchings.
pub struct HmChain(CoarsenChain);

/// Class labels for a subset of a graph's nodes.
pub struct HmLabels(LabelSet);

/// Commonly tuned pipeline settings. Start from
/// [`hm_pipeline_options_default`] and change fields as needed; for the full
/// configuration use [`hm_pipeline_run_toml`].
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct HmPipelineOptions {
    pub dim: u32,
    pub levels: u32,
    /// One of the [`HmStrategy`] values.
    pub strategy: u32,
    pub lsh_k: u32,
    pub seed: u64,
    pub walks_per_node: u32,
    pub walk_length: u32,
    pub window: u32,
    pub negatives: u32,
    pub walk_epochs: u32,
    pub refine_layers: u32,
    pub refine_epochs: u32,
    pub refine_learning_rate: f64,
}

/// Settings of the planted-community generator.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct HmSynthOptions {
    pub types: u32,
    pub n_per_type: u32,
    pub communities: u32,
    pub p_in: f64,
    pub p_out: f64,
    pub seed: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

enum Failure {
    Lib(Error),
    Null(&'static str),
    Arg(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HmStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            let status = match e.exit_code() {
                2 => HmStatus::ConfigError,
                4 => HmStatus::NumericError,
                _ => HmStatus::DataError,
            };
            set_error(e.to_string());
            status
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("{what} is null"));
            HmStatus::NullPointer
        }
        Ok(Err(Failure::Arg(msg))) => {
            set_error(msg);
            HmStatus::InvalidArgument
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            HmStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Arg(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn strategy_from(code: u32) -> Result<Strategy, Failure> {
    match code {
        0 => Ok(Strategy::JaccMax),
        1 => Ok(Strategy::JaccWrs),
        2 => Ok(Strategy::Lsh),
        c => Err(Failure::Arg(format!("unknown strategy code {c}"))),
    }
}

fn options_to_config(o: &HmPipelineOptions) -> Result<PipelineConfig, Failure> {
    let mut c = PipelineConfig::default();
    c.model.d = o.dim as usize;
    c.model.seed = o.seed;
    c.coarsen.levels = o.levels as usize;
    c.coarsen.strategy = strategy_from(o.strategy)?;
    c.coarsen.lsh_k = o.lsh_k as usize;
    c.walk.walks_per_node = o.walks_per_node as usize;
    c.walk.walk_length = o.walk_length as usize;
    c.walk.window = o.window as usize;
    c.walk.negatives = o.negatives as usize;
    c.walk.epochs = o.walk_epochs as usize;
    c.refine.layers = o.refine_layers as usize;
    c.refine.epochs = o.refine_epochs as usize;
    c.refine.learning_rate = o.refine_learning_rate;
    c.validate(false)?;
    Ok(c)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Defaults matching the command line tool.
#[no_mangle]
pub extern "C" fn hm_pipeline_options_default() -> HmPipelineOptions {
    let c = PipelineConfig::default();
    HmPipelineOptions {
        dim: c.model.d as u32,
        levels: c.coarsen.levels as u32,
        strategy: HmStrategy::JaccMax as u32,
        lsh_k: c.coarsen.lsh_k as u32,
        seed: c.model.seed,
        walks_per_node: c.walk.walks_per_node as u32,
        walk_length: c.walk.walk_length as u32,
        window: c.walk.window as u32,
        negatives: c.walk.negatives as u32,
        walk_epochs: c.walk.epochs as u32,
        refine_layers: c.refine.layers as u32,
        refine_epochs: c.refine.epochs as u32,
        refine_learning_rate: c.refine.learning_rate,
    }
}

/// Loads a graph from a schema file, an edge TSV and an optional node TSV
/// (`nodes_path` may be null).
///
/// # Safety
/// Path arguments must be null or NUL-terminated strings; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn hm_graph_load(
    schema_path: *const c_char,
    edges_path: *const c_char,
    nodes_path: *const c_char,
    out: *mut *mut HmGraph,
) -> HmStatus {
    guard(|| {
        let schema = parse_schema(&path_arg(schema_path, "schema_path")?)?;
        let edges = path_arg(edges_path, "edges_path")?;
        let nodes = if nodes_path.is_null() {
            None
        } else {
            Some(path_arg(nodes_path, "nodes_path")?)
        };
        let g = load_graph(&edges, &schema, nodes.as_deref())?;
        write_out(out, HmGraph(g))
    })
}

/// Generates a planted-community graph together with its community labels.
/// `labels_out` may be null when the labels are not needed.
///
/// # Safety
/// `options` must point to a valid struct; `graph_out` must be writable and
/// `labels_out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn hm_synth_generate(
    options: *const HmSynthOptions,
    graph_out: *mut *mut HmGraph,
    labels_out: *mut *mut HmLabels,
) -> HmStatus {
    guard(|| {
        let o = deref(options, "options")?;
        let (g, labels) = generate(&SynthConfig {
            types: o.types as usize,
            n_per_type: o.n_per_type as usize,
            communities: o.communities as usize,
            p_in: o.p_in,
            p_out: o.p_out,
            seed: o.seed,
        })?;
        write_out(graph_out, HmGraph(g))?;
        if !labels_out.is_null() {
            write_out(labels_out, HmLabels(labels))?;
        }
        Ok(())
    })
}

/// # Safety
/// `graph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hm_graph_num_nodes(graph: *const HmGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.0.num_nodes())
}

/// Number of edges summed over relations.
///
/// # Safety
/// `graph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hm_graph_num_edges(graph: *const HmGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.0.num_edges())
}

/// # Safety
/// `graph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hm_graph_num_node_types(graph: *const HmGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.0.registry().num_node_types())
}

/// # Safety
/// `graph` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn hm_graph_free(graph: *mut HmGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Loads `node_id <TAB> label` lines for `graph`.
///
/// # Safety
/// `path` must be a NUL-terminated string, `graph` a live handle and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn hm_labels_load(
    path: *const c_char,
    graph: *const HmGraph,
    out: *mut *mut HmLabels,
) -> HmStatus {
    guard(|| {
        let g = deref(graph, "graph")?;
        let labels = LabelSet::load(&path_arg(path, "path")?, &g.0)?;
        write_out(out, HmLabels(labels))
    })
}

/// # Safety
/// `labels` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn hm_labels_free(labels: *mut HmLabels) {
    if !labels.is_null() {
        drop(Box::from_raw(labels));
    }
}

/// Runs coarsening, base embedding and refinement with `options` and
/// returns `E_0`.
///
/// # Safety
/// `graph` and `options` must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hm_pipeline_run(
    graph: *const HmGraph,
    options: *const HmPipelineOptions,
    out: *mut *mut HmEmbedding,
) -> HmStatus {
    guard(|| {
        let g = deref(graph, "graph")?;
        let cfg = options_to_config(deref(options, "options")?)?;
        let res = run_pipeline(&g.0, &cfg)?;
        write_out(out, HmEmbedding(res.embedding))
    })
}

/// Like [`hm_pipeline_run`] with a TOML configuration in the command line
/// tool's format. Data paths in the document are ignored.
///
/// # Safety
/// `graph` must be valid, `toml` a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hm_pipeline_run_toml(
    graph: *const HmGraph,
    toml: *const c_char,
    out: *mut *mut HmEmbedding,
) -> HmStatus {
    guard(|| {
        let g = deref(graph, "graph")?;
        if toml.is_null() {
            return Err(Failure::Null("toml"));
        }
        let text = CStr::from_ptr(toml)
            .to_str()
            .map_err(|_| Failure::Arg("toml is not valid UTF-8".into()))?;
        let cfg = PipelineConfig::from_toml(text)?;
        cfg.validate(false)?;
        let res = run_pipeline(&g.0, &cfg)?;
        write_out(out, HmEmbedding(res.embedding))
    })
}

/// # Safety
/// `emb` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hm_embedding_rows(emb: *const HmEmbedding) -> usize {
    emb.as_ref().map_or(0, |e| e.0.rows())
}

/// # Safety
/// `emb` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hm_embedding_dim(emb: *const HmEmbedding) -> usize {
    emb.as_ref().map_or(0, |e| e.0.dim())
}

/// Copies the matrix row-major into `buf`, which holds `len` doubles and
/// must have room for `rows * dim` of them.
///
/// # Safety
/// `emb` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn hm_embedding_copy(emb: *const HmEmbedding, buf: *mut f64, len: usize) -> HmStatus {
    guard(|| {
        let e = deref(emb, "emb")?;
        if buf.is_null() {
            return Err(Failure::Null("buf"));
        }
        let need = e.0.rows() * e.0.dim();
        if len < need {
            return Err(Failure::Arg(format!("buffer holds {len} values, {need} needed")));
        }
        let dst = std::slice::from_raw_parts_mut(buf, need);
        for (d, s) in dst.iter_mut().zip(e.0.as_array().iter()) {
            *d = *s;
        }
        Ok(())
    })
}

/// Saves the embedding; `binary` selects the binary format over word2vec
/// text. When `graph` is non-null its node ids label the rows.
///
/// # Safety
/// `emb` must be a live handle, `graph` null or live, `path` a
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hm_embedding_save(
    emb: *const HmEmbedding,
    graph: *const HmGraph,
    path: *const c_char,
    binary: bool,
) -> HmStatus {
    guard(|| {
        let e = deref(emb, "emb")?;
        let path = path_arg(path, "path")?;
        let ids = graph.as_ref().and_then(|g| g.0.original_ids().cloned());
        let format = if binary {
            EmbeddingFormat::Binary
        } else {
            EmbeddingFormat::TextWord2vec
        };
        e.0.save(&path, format, ids.as_ref().map(|v| v.as_slice()))?;
        Ok(())
    })
}

/// Loads an embedding file in either format.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hm_embedding_load(path: *const c_char, out: *mut *mut HmEmbedding) -> HmStatus {
    guard(|| {
        let (_, e) = EmbeddingMatrix::load_any(&path_arg(path, "path")?, None)?;
        write_out(out, HmEmbedding(e))
    })
}

/// Micro-F1 of one-vs-rest logistic regression under stratified `folds`-fold
/// cross validation; mean and population std over folds.
///
/// # Safety
/// Handles must be live; `mean` and `std` writable.
#[no_mangle]
pub unsafe extern "C" fn hm_node_classification(
    emb: *const HmEmbedding,
    labels: *const HmLabels,
    folds: u32,
    seed: u64,
    mean: *mut f64,
    std: *mut f64,
) -> HmStatus {
    guard(|| {
        let e = deref(emb, "emb")?;
        let l = deref(labels, "labels")?;
        if mean.is_null() || std.is_null() {
            return Err(Failure::Null("mean/std"));
        }
        let s = node_classification(&e.0, &l.0, folds as usize, seed)?;
        *mean = s.mean;
        *std = s.std;
        Ok(())
    })
}

/// # Safety
/// `emb` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn hm_embedding_free(emb: *mut HmEmbedding) {
    if !emb.is_null() {
        drop(Box::from_raw(emb));
    }
}

/// Coarsens `graph` with the coarsening fields of `options`.
///
/// # Safety
/// `graph` and `options` must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hm_coarsen(
    graph: *const HmGraph,
    options: *const HmPipelineOptions,
    out: *mut *mut HmChain,
) -> HmStatus {
    guard(|| {
        let g = deref(graph, "graph")?;
        let cfg = options_to_config(deref(options, "options")?)?;
        let chain = coarsen_stage(&g.0, &cfg, cfg.model.seed)?;
        write_out(out, HmChain(chain))
    })
}

/// Number of coarse levels actually built (early stopping may cut the
/// requested count short).
///
/// # Safety
/// `chain` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hm_chain_levels(chain: *const HmChain) -> usize {
    chain.as_ref().map_or(0, |c| c.0.levels())
}

/// Node count of `G_level`, or 0 when `level` is out of range.
///
/// # Safety
/// `chain` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hm_chain_num_nodes(chain: *const HmChain, level: usize) -> usize {
    chain
        .as_ref()
        .and_then(|c| c.0.node_counts().get(level).copied())
        .unwrap_or(0)
}

/// Supernode in `G_{level+1}` that node `node` of `G_level` belongs to.
///
/// # Safety
/// `chain` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hm_chain_supernode(chain: *const HmChain, level: usize, node: u32, out: *mut u32) -> HmStatus {
    guard(|| {
        let c = deref(chain, "chain")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        if level >= c.0.levels() {
            return Err(Failure::Arg(format!("level {level} out of range 0..{}", c.0.levels())));
        }
        let m = c.0.matching(level);
        if node as usize >= m.assignment().len() {
            return Err(Failure::Arg(format!("node {node} out of range")));
        }
        *out = m.supernode(node);
        Ok(())
    })
}

/// Writes the chain into directory `dir`.
///
/// # Safety
/// `chain` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hm_chain_save(chain: *const HmChain, dir: *const c_char) -> HmStatus {
    guard(|| {
        let c = deref(chain, "chain")?;
        c.0.save(&path_arg(dir, "dir")?)?;
        Ok(())
    })
}

/// # Safety
/// `chain` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn hm_chain_free(chain: *mut HmChain) {
    if !chain.is_null() {
        drop(Box::from_raw(chain));
    }
}
