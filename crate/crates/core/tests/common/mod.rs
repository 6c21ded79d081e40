//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use hetmile::hetgraph::{GraphBuilder, HeteroGraph, TypeRegistry};
use hetmile::refine::{Channel, RefinerParams};
use hetmile::{EdgeTypeId, NodeId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random typed graph with `types` node types, every type pair joined by a
/// relation with probability 0.7 (the first pair always), random edge
/// weights and some self weights.
pub fn random_graph(seed: u64, max_nodes: usize, types: usize) -> HeteroGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reg = TypeRegistry::new();
    let names: Vec<String> = (0..types).map(|t| format!("t{t}")).collect();
    for n in &names {
        reg.add_node_type(n).unwrap();
    }
    let mut pairs = Vec::new();
    for a in 0..types {
        for b in a..types {
            let first = pairs.is_empty() && (types == 1 || a != b);
            if first || rng.random_bool(0.7) {
                reg.add_relation(&format!("r{a}{b}"), &names[a], &names[b]).unwrap();
                pairs.push((a, b));
            }
        }
    }
    let per_type = (max_nodes / types).max(1);
    let counts: Vec<usize> = (0..types).map(|_| rng.random_range(1..=per_type)).collect();
    let mut starts = vec![0];
    for c in &counts {
        starts.push(starts.last().unwrap() + c);
    }
    let reg = Arc::new(reg);
    let mut b = GraphBuilder::new(reg.clone(), &counts);
    let total = starts[types];
    let edges = rng.random_range(0..=3 * total);
    for _ in 0..edges {
        let r = rng.random_range(0..pairs.len());
        let (s, t) = pairs[r];
        let u = starts[s] + rng.random_range(0..counts[s]);
        let v = starts[t] + rng.random_range(0..counts[t]);
        let w = rng.random_range(0.1..3.0);
        b.add_edge(EdgeTypeId(r as u16), u as NodeId, v as NodeId, w).unwrap();
    }
    for u in 0..total {
        if rng.random_bool(0.1) {
            b.add_self_weight(u as NodeId, rng.random_range(0.1..2.0));
        }
    }
    b.build()
}

/// Adjacency sets rebuilt from the per-relation edge lists.
pub fn adjacency(g: &HeteroGraph) -> Vec<BTreeSet<NodeId>> {
    let mut adj = vec![BTreeSet::new(); g.num_nodes()];
    for (r, _) in g.registry().relations() {
        for (u, v, _) in g.edges(r) {
            adj[u as usize].insert(v);
            adj[v as usize].insert(u);
        }
    }
    adj
}

/// Nodes reachable in one or two hops, `u` excluded, by breadth-first search.
pub fn bfs_two_hop(adj: &[BTreeSet<NodeId>], u: NodeId) -> BTreeSet<NodeId> {
    let mut seen = BTreeSet::new();
    let mut frontier = vec![u];
    for _ in 0..2 {
        let mut next = Vec::new();
        for x in frontier {
            for &y in &adj[x as usize] {
                if seen.insert(y) {
                    next.push(y);
                }
            }
        }
        frontier = next;
    }
    seen.remove(&u);
    seen
}

pub fn set_jaccard(a: &BTreeSet<NodeId>, b: &BTreeSet<NodeId>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Greedy Jaccard-max matching by brute force: visit by descending degree
/// then id, pair each unmatched node with the best unmatched same-type
/// two-hop neighbor (lowest id on ties). Returns the fine -> supernode
/// assignment with supernodes numbered by their smallest member.
pub fn greedy_oracle(g: &HeteroGraph) -> Vec<u32> {
    let n = g.num_nodes();
    let adj = adjacency(g);
    let hood: Vec<BTreeSet<NodeId>> = (0..n as NodeId).map(|u| bfs_two_hop(&adj, u)).collect();
    let mut order: Vec<NodeId> = (0..n as NodeId).collect();
    order.sort_by(|&a, &b| adj[b as usize].len().cmp(&adj[a as usize].len()).then(a.cmp(&b)));
    let mut partner: Vec<Option<NodeId>> = vec![None; n];
    let mut matched = vec![false; n];
    for u in order {
        if matched[u as usize] {
            continue;
        }
        let mut best: Option<(NodeId, f64)> = None;
        for &v in &hood[u as usize] {
            if matched[v as usize] || g.node_type(v) != g.node_type(u) {
                continue;
            }
            let j = set_jaccard(&hood[u as usize], &hood[v as usize]);
            if best.is_none_or(|(_, bj)| j > bj) {
                best = Some((v, j));
            }
        }
        if let Some((v, _)) = best {
            matched[u as usize] = true;
            matched[v as usize] = true;
            partner[u as usize] = Some(v);
            partner[v as usize] = Some(u);
        }
    }
    let mut assign = vec![u32::MAX; n];
    let mut next = 0;
    for u in 0..n {
        if assign[u] == u32::MAX {
            assign[u] = next;
            if let Some(v) = partner[u] {
                assign[v as usize] = next;
            }
            next += 1;
        }
    }
    assign
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.2 * x
    }
}

/// Dense-matrix forward pass of the refiner network. Returns the output and
/// the attention weights per layer, node and channel (0 for masked channels).
pub fn dense_forward(g: &HeteroGraph, params: &RefinerParams, h0: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let n = g.num_nodes();
    let d = params.dim();
    let mut adj: BTreeMap<u16, Vec<Vec<f64>>> = BTreeMap::new();
    for (r, _) in g.registry().relations() {
        let mut a = vec![vec![0.0; n]; n];
        for (u, v, w) in g.edges(r) {
            a[u as usize][v as usize] += w;
            a[v as usize][u as usize] += w;
        }
        adj.insert(r.0, a);
    }
    let mut h = h0.to_vec();
    let mut attention = Vec::new();
    for layer in 0..params.layers() {
        let mut out = vec![vec![0.0; d]; n];
        let mut att_layer = vec![Vec::new(); n];
        for i in 0..n {
            let t = g.node_type(i as NodeId);
            let mut zs = Vec::new();
            let mut avail = Vec::new();
            for (c, ch) in params.channels(t).iter().enumerate() {
                let agg: Vec<f64> = match *ch {
                    Channel::SelfLoop => h[i].clone(),
                    Channel::Relation { relation, source } => {
                        let mut row = vec![0.0; n];
                        for (j, cell) in row.iter_mut().enumerate() {
                            if g.node_type(j as NodeId) == source {
                                *cell = adj[&relation.0][i][j];
                            }
                        }
                        if source == t {
                            row[i] += g.self_weights()[i];
                        }
                        let s: f64 = row.iter().sum();
                        let mut agg = vec![0.0; d];
                        if s > 0.0 {
                            for (j, &a) in row.iter().enumerate() {
                                for k in 0..d {
                                    agg[k] += a / s * h[j][k];
                                }
                            }
                        }
                        avail.push(s > 0.0);
                        agg
                    }
                };
                if avail.len() == c {
                    avail.push(true);
                }
                let w: Vec<f64> = params.w(layer, t, c).iter().copied().collect();
                zs.push(matvec(&agg, &w, d));
            }
            let scores: Vec<f64> = zs
                .iter()
                .enumerate()
                .map(|(c, z)| {
                    let q = params.q(layer, t, c);
                    leaky(z.iter().zip(q.iter()).map(|(a, b)| a * b).sum())
                })
                .collect();
            let max = scores
                .iter()
                .zip(&avail)
                .filter(|(_, &ok)| ok)
                .map(|(s, _)| *s)
                .fold(f64::NEG_INFINITY, f64::max);
            let ex: Vec<f64> = scores
                .iter()
                .zip(&avail)
                .map(|(s, &ok)| if ok { (s - max).exp() } else { 0.0 })
                .collect();
            let sum: f64 = ex.iter().sum();
            let a: Vec<f64> = ex.iter().map(|e| e / sum).collect();
            for (z, &ac) in zs.iter().zip(&a) {
                for k in 0..d {
                    out[i][k] += ac * z[k];
                }
            }
            att_layer[i] = a;
        }
        let last = layer + 1 == params.layers();
        if !(last && params.linear_output()) {
            for row in out.iter_mut() {
                for x in row.iter_mut() {
                    *x = params.activation().apply(*x);
                }
            }
        }
        attention.push(att_layer);
        h = out;
    }
    (h, attention)
}

/// Row vector times a row-major d x d matrix.
fn matvec(x: &[f64], w: &[f64], d: usize) -> Vec<f64> {
    (0..d).map(|k| (0..d).map(|j| x[j] * w[j * d + k]).sum()).collect()
}

/// Fixed 10-node graph: six `a` nodes, four `b` nodes, an `a-a` and an
/// `a-b` relation, one self weight.
pub fn fixture_graph() -> HeteroGraph {
    let mut reg = TypeRegistry::new();
    reg.add_node_type("a").unwrap();
    reg.add_node_type("b").unwrap();
    let aa = reg.add_relation("aa", "a", "a").unwrap();
    let ab = reg.add_relation("ab", "a", "b").unwrap();
    let mut b = GraphBuilder::new(Arc::new(reg), &[6, 4]);
    for (u, v, w) in [
        (0, 1, 1.0),
        (1, 2, 2.0),
        (2, 3, 1.0),
        (3, 4, 0.5),
        (0, 4, 1.0),
        (4, 5, 1.0),
    ] {
        b.add_edge(aa, u, v, w).unwrap();
    }
    for (u, v, w) in [
        (0, 6, 1.0),
        (1, 6, 1.0),
        (2, 7, 2.0),
        (3, 8, 1.0),
        (5, 8, 1.0),
        (5, 9, 0.5),
        (0, 7, 1.0),
    ] {
        b.add_edge(ab, u, v, w).unwrap();
    }
    b.add_self_weight(2, 1.0);
    b.build()
}
