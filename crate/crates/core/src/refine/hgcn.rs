use std::ops::Range;

use ndarray::linalg::{general_mat_mul, general_mat_vec_mul};
use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewMut1, ArrayViewMut2, Zip};

use super::params::{Channel, RefinerParams};
use crate::error::{Error, Result};
use crate::hetgraph::{EmbeddingMatrix, HeteroGraph, NodeId, NodeTypeId};

pub const LEAKY_SLOPE: f64 = 0.2;

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

fn leaky_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// Row-normalized adjacency from one node type to a source type. Columns are
/// local indices within the source type block.
#[derive(Clone, Debug)]
pub struct NormalizedBlock {
    offsets: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    source: Range<usize>,
}

impl NormalizedBlock {
    /// Entries of local row `k` as (global source id, weight).
    pub fn row(&self, k: usize) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        let r = self.offsets[k]..self.offsets[k + 1];
        self.cols[r.clone()]
            .iter()
            .zip(&self.vals[r])
            .map(|(&c, &w)| ((c as usize + self.source.start) as NodeId, w))
    }

    pub fn has_row(&self, k: usize) -> bool {
        self.offsets[k + 1] > self.offsets[k]
    }

    fn apply_into(&self, h: &Array2<f64>, out: &mut Array2<f64>) {
        let d = h.ncols();
        let src = &h.as_slice().expect("contiguous")[self.source.start * d..self.source.end * d];
        let out = out.as_slice_mut().expect("contiguous");
        out.fill(0.0);
        for (k, row) in out.chunks_exact_mut(d.max(1)).enumerate() {
            for j in self.offsets[k]..self.offsets[k + 1] {
                let (c, w) = (self.cols[j] as usize, self.vals[j]);
                for (o, &x) in row.iter_mut().zip(&src[c * d..(c + 1) * d]) {
                    *o += w * x;
                }
            }
        }
    }

    /// Adds `blockᵀ · dp` into the source rows of `dh`.
    fn scatter_transpose(&self, dp: ArrayView2<f64>, dh: &mut Array2<f64>) {
        let d = dp.ncols();
        let dp = dp.as_standard_layout();
        let dp = dp.as_slice().expect("standard layout");
        let dst =
            &mut dh.as_slice_mut().expect("owned arrays are contiguous")[self.source.start * d..self.source.end * d];
        for k in 0..self.offsets.len() - 1 {
            let row = &dp[k * d..(k + 1) * d];
            for j in self.offsets[k]..self.offsets[k + 1] {
                let (c, w) = (self.cols[j] as usize, self.vals[j]);
                for (o, &x) in dst[c * d..(c + 1) * d].iter_mut().zip(row) {
                    *o += w * x;
                }
            }
        }
    }
}

/// Per-type normalized blocks for every channel of a graph.
#[derive(Clone, Debug)]
pub struct Propagation {
    ranges: Vec<Range<usize>>,
    // blocks[type][channel]; None for the self channel
    blocks: Vec<Vec<Option<NormalizedBlock>>>,
}

impl Propagation {
    /// Builds `Â` for every (type, relation) pair. For a relation joining a
    /// type to itself, the nodes' coarsening self weights join the diagonal
    /// before rows are scaled to sum to one.
    pub fn new(g: &HeteroGraph, params: &RefinerParams) -> Result<Self> {
        params.check_registry(g.registry())?;
        let nt = g.registry().num_node_types();
        let mut ranges = Vec::with_capacity(nt);
        let mut blocks = Vec::with_capacity(nt);
        for i in 0..nt {
            let t = NodeTypeId(i as u16);
            let range = g.type_range(t);
            let mut per_channel = Vec::new();
            for ch in params.channels(t) {
                per_channel.push(match *ch {
                    Channel::SelfLoop => None,
                    Channel::Relation { relation, source } => {
                        let csr = g.relation_csr(relation);
                        let src = g.type_range(source);
                        let mut offsets = vec![0];
                        let (mut cols, mut vals) = (Vec::new(), Vec::new());
                        let mut entries: Vec<(u32, f64)> = Vec::new();
                        for u in range.clone() {
                            entries.clear();
                            let (ts, ws) = csr.row(u as NodeId);
                            entries.extend(ts.iter().zip(ws).map(|(&v, &w)| ((v as usize - src.start) as u32, w)));
                            if source == t && g.self_weights()[u] > 0.0 {
                                let local = (u - src.start) as u32;
                                let pos = entries.partition_point(|e| e.0 < local);
                                entries.insert(pos, (local, g.self_weights()[u]));
                            }
                            let total: f64 = entries.iter().map(|e| e.1).sum();
                            if total > 0.0 {
                                for &(c, w) in &entries {
                                    cols.push(c);
                                    vals.push(w / total);
                                }
                            }
                            offsets.push(cols.len());
                        }
                        Some(NormalizedBlock {
                            offsets,
                            cols,
                            vals,
                            source: src,
                        })
                    }
                });
            }
            ranges.push(range);
            blocks.push(per_channel);
        }
        Ok(Propagation { ranges, blocks })
    }

    pub fn block(&self, t: NodeTypeId, channel: usize) -> Option<&NormalizedBlock> {
        self.blocks[t.index()][channel].as_ref()
    }

    fn available(&self, t: usize, channel: usize, k: usize) -> bool {
        self.blocks[t][channel].as_ref().is_none_or(|b| b.has_row(k))
    }
}

/// Buffers of one type in one layer.
struct TypeCache {
    // aggregated inputs per channel; None for the self channel
    p: Vec<Option<Array2<f64>>>,
    z: Vec<Array2<f64>>,
    // raw scores q·z per channel and node
    t: Vec<Array1<f64>>,
    a: Vec<Array1<f64>>,
}

struct LayerCache {
    input: Array2<f64>,
    pre: Array2<f64>,
    types: Vec<TypeCache>,
}

/// Activations and gradient scratch for one graph, allocated once and
/// reused across forward and backward passes.
pub(crate) struct Workspace {
    layers: Vec<LayerCache>,
    cached: bool,
    pub(crate) out: Array2<f64>,
    /// Gradient with respect to the network output on entry to [`backward`].
    pub(crate) d_out: Array2<f64>,
    d_in: Array2<f64>,
    dz: Array2<f64>,
    dp: Array2<f64>,
    da: Array2<f64>,
    abar: Array1<f64>,
    dt: Array1<f64>,
}

impl Workspace {
    /// `cached` keeps every layer's activations for [`backward`]; otherwise
    /// one set of buffers is reused layer after layer.
    pub(crate) fn new(prop: &Propagation, params: &RefinerParams, cached: bool) -> Self {
        let d = params.dim();
        let n = prop.ranges.last().map_or(0, |r| r.end);
        let max_m = prop.ranges.iter().map(|r| r.len()).max().unwrap_or(0);
        let max_ch = prop.blocks.iter().map(|b| b.len()).max().unwrap_or(0);
        let kept = if cached {
            params.layers()
        } else {
            params.layers().min(1)
        };
        let layers = (0..kept)
            .map(|_| LayerCache {
                input: Array2::zeros((n, d)),
                pre: Array2::zeros((n, d)),
                types: prop
                    .ranges
                    .iter()
                    .zip(&prop.blocks)
                    .map(|(r, blocks)| {
                        let m = r.len();
                        TypeCache {
                            p: blocks
                                .iter()
                                .map(|b| b.as_ref().map(|_| Array2::zeros((m, d))))
                                .collect(),
                            z: blocks.iter().map(|_| Array2::zeros((m, d))).collect(),
                            t: blocks.iter().map(|_| Array1::zeros(m)).collect(),
                            a: blocks.iter().map(|_| Array1::zeros(m)).collect(),
                        }
                    })
                    .collect(),
            })
            .collect();
        let scratch = |rows| {
            if cached {
                Array2::zeros((rows, d))
            } else {
                Array2::zeros((0, d))
            }
        };
        Workspace {
            layers,
            cached,
            out: Array2::zeros((n, d)),
            d_out: scratch(n),
            d_in: scratch(n),
            dz: scratch(max_m),
            dp: scratch(max_m),
            da: if cached {
                Array2::zeros((max_ch, max_m))
            } else {
                Array2::zeros((0, 0))
            },
            abar: Array1::zeros(if cached { max_m } else { 0 }),
            dt: Array1::zeros(if cached { max_m } else { 0 }),
        }
    }
}

/// Attention weights of every channel for every node of every type, layer by layer.
pub type AttentionTrace = Vec<Vec<Vec<Array1<f64>>>>;

fn layer_forward(prop: &Propagation, params: &RefinerParams, layer: usize, lc: &mut LayerCache, out: &mut Array2<f64>) {
    let d = params.dim();
    let LayerCache { input: h, pre, types } = lc;
    let pre_s = pre.as_slice_mut().expect("contiguous");
    for (ti, range) in prop.ranges.iter().enumerate() {
        let t = NodeTypeId(ti as u16);
        let m = range.len();
        let tc = &mut types[ti];
        let nch = tc.z.len();
        for c in 0..nch {
            let w = params.w(layer, t, c);
            match (&prop.blocks[ti][c], &mut tc.p[c]) {
                (Some(b), Some(p)) => {
                    b.apply_into(h, p);
                    general_mat_mul(1.0, p, &w, 0.0, &mut tc.z[c]);
                }
                _ => general_mat_mul(1.0, &h.slice(s![range.clone(), ..]), &w, 0.0, &mut tc.z[c]),
            }
            general_mat_vec_mul(1.0, &tc.z[c], &params.q(layer, t, c), 0.0, &mut tc.t[c]);
        }
        for k in 0..m {
            let mut max = f64::NEG_INFINITY;
            for c in 0..nch {
                if prop.available(ti, c, k) {
                    max = max.max(leaky(tc.t[c][k]));
                }
            }
            let mut sum = 0.0;
            for c in 0..nch {
                let e = if prop.available(ti, c, k) {
                    (leaky(tc.t[c][k]) - max).exp()
                } else {
                    0.0
                };
                tc.a[c][k] = e;
                sum += e;
            }
            for c in 0..nch {
                tc.a[c][k] /= sum;
            }
        }
        for k in 0..m {
            let row = &mut pre_s[(range.start + k) * d..(range.start + k + 1) * d];
            row.fill(0.0);
            for c in 0..nch {
                let a = tc.a[c][k];
                let z = &tc.z[c].as_slice().expect("contiguous")[k * d..(k + 1) * d];
                for (o, &x) in row.iter_mut().zip(z) {
                    *o += a * x;
                }
            }
        }
    }
    if layer + 1 == params.layers() && params.linear_output() {
        out.assign(pre);
    } else {
        let act = params.activation();
        Zip::from(out).and(&*pre).for_each(|o, &x| *o = act.apply(x));
    }
}

fn check_input(g: &HeteroGraph, h: &Array2<f64>, params: &RefinerParams) -> Result<()> {
    if h.nrows() != g.num_nodes() || h.ncols() != params.dim() {
        return Err(Error::shape(
            format!("{} x {}", g.num_nodes(), params.dim()),
            format!("{} x {}", h.nrows(), h.ncols()),
        ));
    }
    Ok(())
}

/// Runs every layer on `h`; the result is left in `ws.out`.
pub(crate) fn forward(prop: &Propagation, params: &RefinerParams, h: &Array2<f64>, ws: &mut Workspace) {
    if params.layers() == 0 {
        ws.out.assign(h);
        return;
    }
    ws.layers[0].input.assign(h);
    for layer in 0..params.layers() {
        let idx = if ws.cached { layer } else { 0 };
        layer_forward(prop, params, layer, &mut ws.layers[idx], &mut ws.out);
        if layer + 1 < params.layers() {
            let next = if ws.cached { layer + 1 } else { 0 };
            std::mem::swap(&mut ws.layers[next].input, &mut ws.out);
        }
    }
}

pub(crate) fn forward_plain(prop: &Propagation, params: &RefinerParams, h: &Array2<f64>) -> Array2<f64> {
    let mut ws = Workspace::new(prop, params, false);
    forward(prop, params, h, &mut ws);
    ws.out
}

/// Applies every refiner layer to `h` on graph `g`.
pub fn hgcn_forward(g: &HeteroGraph, h: &EmbeddingMatrix, params: &RefinerParams) -> Result<EmbeddingMatrix> {
    check_input(g, h.as_array(), params)?;
    let prop = Propagation::new(g, params)?;
    EmbeddingMatrix::new(forward_plain(&prop, params, h.as_array()))
}

/// Forward pass that also returns the attention weights, for inspection.
pub fn hgcn_forward_traced(
    g: &HeteroGraph,
    h: &EmbeddingMatrix,
    params: &RefinerParams,
) -> Result<(EmbeddingMatrix, AttentionTrace)> {
    check_input(g, h.as_array(), params)?;
    let prop = Propagation::new(g, params)?;
    let mut ws = Workspace::new(&prop, params, true);
    forward(&prop, params, h.as_array(), &mut ws);
    let trace = ws
        .layers
        .iter()
        .map(|lc| lc.types.iter().map(|tc| tc.a.clone()).collect())
        .collect();
    Ok((EmbeddingMatrix::new(ws.out)?, trace))
}

/// Adds the gradient of a loss with respect to every parameter into `grad`,
/// given its gradient with respect to the network output in `ws.d_out`.
/// `ws` must hold the cached activations of the matching [`forward`] call.
pub(crate) fn backward(prop: &Propagation, params: &RefinerParams, ws: &mut Workspace, grad: &mut [f64]) {
    assert!(ws.cached, "backward needs a cached workspace");
    let d = params.dim();
    let act = params.activation();
    let Workspace {
        layers,
        d_out,
        d_in,
        dz,
        dp,
        da,
        abar,
        dt,
        ..
    } = ws;
    for layer in (0..params.layers()).rev() {
        let lc = &layers[layer];
        let last = layer + 1 == params.layers();
        if !(last && params.linear_output()) {
            Zip::from(&mut *d_out)
                .and(&lc.pre)
                .for_each(|g, &x| *g *= act.derivative(x));
        }
        d_in.fill(0.0);
        let d_pre = d_out.as_slice().expect("contiguous");
        for (ti, range) in prop.ranges.iter().enumerate() {
            let t = NodeTypeId(ti as u16);
            let tc = &lc.types[ti];
            let m = range.len();
            let nch = tc.z.len();
            let dp_i = &d_pre[range.start * d..range.end * d];
            // dL/da per channel and the attention-weighted mean over channels
            abar.fill(0.0);
            for c in 0..nch {
                let z = tc.z[c].as_slice().expect("contiguous");
                for k in 0..m {
                    let v: f64 = dp_i[k * d..(k + 1) * d]
                        .iter()
                        .zip(&z[k * d..(k + 1) * d])
                        .map(|(a, b)| a * b)
                        .sum();
                    da[[c, k]] = v;
                    abar[k] += tc.a[c][k] * v;
                }
            }
            for c in 0..nch {
                let q = params.q(layer, t, c);
                let q = q.as_slice().expect("contiguous");
                for k in 0..m {
                    dt[k] = tc.a[c][k] * (da[[c, k]] - abar[k]) * leaky_grad(tc.t[c][k]);
                }
                let mut dz_m = dz.slice_mut(s![..m, ..]);
                {
                    let dzs = dz_m.as_slice_mut().expect("contiguous");
                    for k in 0..m {
                        let (a, g) = (tc.a[c][k], dt[k]);
                        for ((o, &x), &qv) in dzs[k * d..(k + 1) * d].iter_mut().zip(&dp_i[k * d..(k + 1) * d]).zip(q) {
                            *o = a * x + g * qv;
                        }
                    }
                }
                let off = params.offset(layer, t, c);
                let (gw, gq) = grad[off..off + d * d + d].split_at_mut(d * d);
                let mut gq = ArrayViewMut1::from(gq);
                general_mat_vec_mul(1.0, &tc.z[c].t(), &dt.slice(s![..m]), 1.0, &mut gq);
                let mut gw = ArrayViewMut2::from_shape((d, d), gw).expect("d x d block");
                let mut dp_m = dp.slice_mut(s![..m, ..]);
                general_mat_mul(1.0, &dz_m, &params.w(layer, t, c).t(), 0.0, &mut dp_m);
                match &tc.p[c] {
                    None => {
                        general_mat_mul(1.0, &lc.input.slice(s![range.clone(), ..]).t(), &dz_m, 1.0, &mut gw);
                        let mut dh_i = d_in.slice_mut(s![range.clone(), ..]);
                        dh_i += &dp_m;
                    }
                    Some(p) => {
                        general_mat_mul(1.0, &p.t(), &dz_m, 1.0, &mut gw);
                        prop.blocks[ti][c]
                            .as_ref()
                            .expect("relation channel has a block")
                            .scatter_transpose(dp_m.view(), d_in);
                    }
                }
            }
        }
        std::mem::swap(d_out, d_in);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hetgraph::{EdgeTypeId, GraphBuilder, TypeRegistry};
    use crate::refine::params::Activation;
    use std::sync::Arc;

    #[test]
    fn self_only_identity_layer_applies_activation() {
        let mut reg = TypeRegistry::new();
        reg.add_node_type("a").unwrap();
        let g = GraphBuilder::new(Arc::new(reg.clone()), &[3]).build();
        let p = RefinerParams::identity(&reg, 2, 1, Activation::Elu, false);
        let h = EmbeddingMatrix::new(ndarray::array![[1.0, -1.0], [0.5, 2.0], [-3.0, 0.0]]).unwrap();
        let out = hgcn_forward(&g, &h, &p).unwrap();
        let expect = h.as_array().mapv(|x| Activation::Elu.apply(x));
        assert_eq!(out.as_array(), &expect);
    }

    #[test]
    fn rows_normalize() {
        let mut reg = TypeRegistry::new();
        reg.add_node_type("a").unwrap();
        reg.add_node_type("p").unwrap();
        reg.add_relation("w", "a", "p").unwrap();
        let mut b = GraphBuilder::new(Arc::new(reg.clone()), &[2, 2]);
        b.add_edge(EdgeTypeId(0), 0, 2, 2.0).unwrap();
        b.add_edge(EdgeTypeId(0), 0, 3, 2.0).unwrap();
        let g = b.build();
        let p = RefinerParams::identity(&reg, 2, 1, Activation::Elu, true);
        let prop = Propagation::new(&g, &p).unwrap();
        let blk = prop.block(NodeTypeId(0), 1).unwrap();
        assert_eq!(blk.row(0).collect::<Vec<_>>(), vec![(2, 0.5), (3, 0.5)]);
        assert!(!blk.has_row(1));
    }

    #[test]
    fn self_weight_joins_same_type_diagonal() {
        let mut reg = TypeRegistry::new();
        reg.add_node_type("a").unwrap();
        reg.add_relation("co", "a", "a").unwrap();
        let mut b = GraphBuilder::new(Arc::new(reg.clone()), &[2]);
        b.add_edge(EdgeTypeId(0), 0, 1, 1.0).unwrap();
        b.add_self_weight(0, 3.0);
        let g = b.build();
        let p = RefinerParams::identity(&reg, 2, 1, Activation::Elu, true);
        let prop = Propagation::new(&g, &p).unwrap();
        let blk = prop.block(NodeTypeId(0), 1).unwrap();
        assert_eq!(blk.row(0).collect::<Vec<_>>(), vec![(0, 0.75), (1, 0.25)]);
        assert_eq!(blk.row(1).collect::<Vec<_>>(), vec![(0, 1.0)]);
    }
}
