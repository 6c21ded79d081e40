//! Minhash signatures over two-hop neighborhoods and the LSH matcher.
//!
//! Permutations are simulated by universal hashes `h_i(x) = (a_i x + b_i) mod p`
//! with `p = 2^61 - 1`, so `Pr[min h_i(A) = min h_i(B)]` tracks `J(A, B)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::jaccard::visitation_order;
use super::matching::{Grouping, MatchingMatrix};
use super::{CoarsenConfig, LshMode};
use crate::error::Result;
use crate::hetgraph::{HeteroGraph, NodeId};

pub const MERSENNE_61: u64 = (1 << 61) - 1;

/// Signature component of an empty set. Never produced by a non-empty set
/// because every hash value is below `MERSENNE_61`.
pub const EMPTY_SLOT: u64 = u64::MAX;

#[inline]
fn mulmod61(a: u64, x: u64) -> u64 {
    let p = a as u128 * x as u128;
    let lo = (p as u64) & MERSENNE_61;
    let hi = (p >> 61) as u64;
    let s = lo + hi;
    if s >= MERSENNE_61 {
        s - MERSENNE_61
    } else {
        s
    }
}

/// A seeded family of `k` universal hash functions.
#[derive(Clone, Debug)]
pub struct MinHasher {
    a: Vec<u64>,
    b: Vec<u64>,
}

impl MinHasher {
    pub fn new(k: usize, seed: u64) -> Self {
        assert!(k >= 1, "minhash needs at least one hash function");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Vec::with_capacity(k);
        let mut b = Vec::with_capacity(k);
        for _ in 0..k {
            a.push(rng.random_range(1..MERSENNE_61));
            b.push(rng.random_range(0..MERSENNE_61));
        }
        MinHasher { a, b }
    }

    pub fn k(&self) -> usize {
        self.a.len()
    }

    #[inline]
    pub fn hash(&self, i: usize, x: NodeId) -> u64 {
        let h = mulmod61(self.a[i], x as u64) + self.b[i];
        if h >= MERSENNE_61 {
            h - MERSENNE_61
        } else {
            h
        }
    }

    pub fn signature(&self, set: &[NodeId]) -> Vec<u64> {
        (0..self.k())
            .map(|i| set.iter().map(|&x| self.hash(i, x)).min().unwrap_or(EMPTY_SLOT))
            .collect()
    }
}

/// `k` minhash values of `neighborhood`; the empty set maps to all [`EMPTY_SLOT`].
pub fn minhash_signature(neighborhood: &[NodeId], k: usize, seed: u64) -> Vec<u64> {
    MinHasher::new(k, seed).signature(neighborhood)
}

/// Signatures of `N(u) ∪ {u}` for every non-isolated node, row-major
/// `num_nodes x k`; isolated nodes get [`EMPTY_SLOT`]. Adding `u` makes two
/// nodes with the same neighbors (which sit in each other's two-hop set)
/// hash to identical signatures.
///
/// Avoids materialising two-hop sets: for every node `w` the smallest and
/// second smallest hash over its adjacency is kept, so the minimum over
/// `adj(w) \ {u}` is available in O(1) and a node's signature costs
/// O(deg(u)) per hash function instead of O(|N(u)|).
pub fn graph_signatures(g: &HeteroGraph, hasher: &MinHasher) -> Vec<u64> {
    let n = g.num_nodes();
    let k = hasher.k();
    let all: Vec<NodeId> = (0..n as NodeId).collect();
    let mut cols = vec![0u64; k * n];
    fill_columns(g, hasher, 0, &all, &mut cols);
    let mut sig = vec![0u64; n * k];
    for (i, col) in cols.chunks_exact(n.max(1)).enumerate() {
        for (u, &v) in col.iter().enumerate() {
            sig[u * k + i] = v;
        }
    }
    sig
}

/// Per-worker buffers for one signature column.
struct ColumnScratch {
    hv: Vec<u64>,
    min1: Vec<u64>,
    arg1: Vec<NodeId>,
    min2: Vec<u64>,
}

impl ColumnScratch {
    fn new(n: usize) -> Self {
        ColumnScratch {
            hv: vec![0; n],
            min1: vec![0; n],
            arg1: vec![0; n],
            min2: vec![0; n],
        }
    }
}

/// Writes hash function `i`'s signature value of every node in `nodes` into
/// `out[u]`. Other entries of `out` are left untouched.
fn signature_column(
    g: &HeteroGraph,
    hasher: &MinHasher,
    i: usize,
    nodes: &[NodeId],
    s: &mut ColumnScratch,
    out: &mut [u64],
) {
    let adj = g.combined();
    for (x, h) in s.hv.iter_mut().enumerate() {
        *h = hasher.hash(i, x as NodeId);
    }
    // (min, argmin, second min) of hv over adj(w)
    for w in 0..s.hv.len() {
        let (mut m1, mut a1, mut m2) = (EMPTY_SLOT, NodeId::MAX, EMPTY_SLOT);
        for &x in adj.row(w as NodeId).0 {
            let h = s.hv[x as usize];
            if h < m1 {
                m2 = m1;
                m1 = h;
                a1 = x;
            } else if h < m2 {
                m2 = h;
            }
        }
        s.min1[w] = m1;
        s.arg1[w] = a1;
        s.min2[w] = m2;
    }
    for &u in nodes {
        let row = adj.row(u).0;
        let mut m = if row.is_empty() { EMPTY_SLOT } else { s.hv[u as usize] };
        for &w in row {
            let w = w as usize;
            m = m.min(s.hv[w]).min(if s.arg1[w] == u { s.min2[w] } else { s.min1[w] });
        }
        out[u as usize] = m;
    }
}

/// Fills `cols` (column-major, `n` values per column) with hash functions
/// `first..first + cols.len() / n` for the nodes in `nodes`.
fn fill_columns(g: &HeteroGraph, hasher: &MinHasher, first: usize, nodes: &[NodeId], cols: &mut [u64]) {
    let n = g.num_nodes();
    if n == 0 {
        return;
    }
    cols.par_chunks_mut(n).enumerate().for_each_init(
        || ColumnScratch::new(n),
        |s, (j, col)| signature_column(g, hasher, first + j, nodes, s, col),
    );
}

#[inline]
fn mix(h: u64, v: u64) -> u64 {
    let z = (h ^ v).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z ^ (z >> 29)
}

/// LSH matching.
///
/// Every node with a non-empty neighborhood is bucketed by (node type, band
/// values) for each band in turn; inside a bucket, unmatched members are
/// grouped in visitation order, up to `max_group` per supernode. In
/// full-signature mode there is a single band spanning all `k` values.
/// Signature columns are computed one band at a time, only for nodes still
/// unmatched.
pub fn match_lsh(g: &HeteroGraph, cfg: &CoarsenConfig, seed: u64) -> Result<MatchingMatrix> {
    let (bands, rows) = cfg.banding()?;
    let hasher = MinHasher::new(cfg.lsh_k, seed);
    let n = g.num_nodes();

    let order = visitation_order(g);
    let mut rank = vec![0u32; n];
    for (r, &u) in order.iter().enumerate() {
        rank[u as usize] = r as u32;
    }
    let mut grouping = Grouping::new(n);
    let max_group = cfg.max_group.max(2);
    let mut live: Vec<NodeId> = (0..n as NodeId).filter(|&u| g.degree(u) > 0).collect();
    let mut cols = vec![0u64; rows * n];
    let mut keyed: Vec<(u16, u64, u32, NodeId)> = Vec::with_capacity(live.len());
    let mut buckets: Vec<Vec<NodeId>> = Vec::new();

    for band in 0..bands {
        live.retain(|&u| !grouping.is_matched(u));
        if live.len() < 2 {
            break;
        }
        fill_columns(g, &hasher, band * rows, &live, &mut cols);
        let cols = &cols;
        let same = |a: NodeId, b: NodeId| (0..rows).all(|j| cols[j * n + a as usize] == cols[j * n + b as usize]);
        keyed.clear();
        keyed.extend(live.iter().map(|&u| {
            let h = (0..rows).fold(0u64, |h, j| mix(h, cols[j * n + u as usize]));
            (g.node_type(u).0, h, rank[u as usize], u)
        }));
        keyed.sort_unstable();

        buckets.clear();
        let mut start = 0;
        for i in 1..=keyed.len() {
            if i < keyed.len() && keyed[i].0 == keyed[start].0 && keyed[i].1 == keyed[start].1 {
                continue;
            }
            if i - start >= 2 {
                let run: Vec<NodeId> = keyed[start..i].iter().map(|e| e.3).collect();
                if run.iter().all(|&u| same(run[0], u)) {
                    buckets.push(run);
                } else {
                    // band hash collision: split by exact values, rank order kept
                    let mut rest = run;
                    while !rest.is_empty() {
                        let head = rest[0];
                        let (b, r): (Vec<NodeId>, Vec<NodeId>) = rest.into_iter().partition(|&u| same(head, u));
                        if b.len() >= 2 {
                            buckets.push(b);
                        }
                        rest = r;
                    }
                }
            }
            start = i;
        }
        buckets.sort_by_key(|b| rank[b[0] as usize]);
        let mut group = Vec::with_capacity(max_group);
        for bucket in &buckets {
            group.clear();
            for &u in bucket {
                if grouping.is_matched(u) {
                    continue;
                }
                group.push(u);
                if group.len() == max_group {
                    grouping.merge(&group);
                    group.clear();
                }
            }
            if group.len() >= 2 {
                grouping.merge(&group);
            }
        }
    }
    Ok(grouping.into_matching())
}

impl CoarsenConfig {
    /// `(bands, rows per band)` for the configured LSH mode.
    pub fn banding(&self) -> Result<(usize, usize)> {
        use crate::error::Error;
        let k = self.lsh_k;
        if k == 0 {
            return Err(Error::Config("lsh_k must be at least 1".into()));
        }
        match self.lsh_mode {
            LshMode::FullSignature => Ok((1, k)),
            LshMode::Banded => {
                let (b, r) = match (self.lsh_bands, self.lsh_rows) {
                    (Some(b), Some(r)) => (b, r),
                    (Some(b), None) => (b, k / b.max(1)),
                    (None, Some(r)) => (k / r.max(1), r),
                    (None, None) => {
                        let r = (k / 32).max(1);
                        (k / r, r)
                    }
                };
                if b == 0 || r == 0 || b * r != k {
                    return Err(Error::Config(format!(
                        "lsh bands ({b}) x rows ({r}) must equal lsh_k ({k})"
                    )));
                }
                Ok((b, r))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hetgraph::{EdgeTypeId, GraphBuilder, TypeRegistry};
    use std::sync::Arc;

    #[test]
    fn empty_set_gives_sentinel() {
        let s = minhash_signature(&[], 16, 1);
        assert!(s.iter().all(|&x| x == EMPTY_SLOT));
        let t = minhash_signature(&[5], 16, 1);
        assert!(t.iter().all(|&x| x < MERSENNE_61));
    }

    #[test]
    fn identical_sets_identical_signatures() {
        assert_eq!(
            minhash_signature(&[3, 9, 12], 64, 42),
            minhash_signature(&[3, 9, 12], 64, 42)
        );
    }

    #[test]
    fn mulmod_matches_bigint() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let a = rng.random_range(1..MERSENNE_61);
            let x = rng.random::<u32>() as u64;
            assert_eq!(mulmod61(a, x) as u128, (a as u128 * x as u128) % MERSENNE_61 as u128);
        }
    }

    #[test]
    fn component_agreement_tracks_jaccard() {
        // |A| = |B| = 100 with 67 shared elements: J = 67 / 133
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut pool: Vec<u32> = (0..100_000).collect();
        for i in 0..233 {
            let j = rng.random_range(i..pool.len());
            pool.swap(i, j);
        }
        let shared = &pool[..67];
        let mut a: Vec<u32> = shared.iter().chain(&pool[67..100]).copied().collect();
        let mut b: Vec<u32> = shared.iter().chain(&pool[100..133]).copied().collect();
        a.sort_unstable();
        b.sort_unstable();
        let exact = super::super::jaccard::jaccard_sorted(&a, &b);
        let (sa, sb) = (minhash_signature(&a, 1000, 77), minhash_signature(&b, 1000, 77));
        let agree = sa.iter().zip(&sb).filter(|(x, y)| x == y).count() as f64 / 1000.0;
        assert!((agree - exact).abs() < 0.05, "agreement {agree} vs J {exact}");
    }

    fn random_graph(seed: u64) -> HeteroGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut reg = TypeRegistry::new();
        reg.add_node_type("a").unwrap();
        reg.add_node_type("b").unwrap();
        reg.add_relation("ab", "a", "b").unwrap();
        reg.add_relation("bb", "b", "b").unwrap();
        let (na, nb) = (rng.random_range(1..20), rng.random_range(1..20));
        let mut b = GraphBuilder::new(Arc::new(reg), &[na, nb]);
        for _ in 0..rng.random_range(0..60) {
            let u = rng.random_range(0..na) as u32;
            let v = (na + rng.random_range(0..nb)) as u32;
            b.add_edge(EdgeTypeId(0), u, v, 1.0).unwrap();
            let x = (na + rng.random_range(0..nb)) as u32;
            let y = (na + rng.random_range(0..nb)) as u32;
            if x != y {
                b.add_edge(EdgeTypeId(1), x, y, 1.0).unwrap();
            }
        }
        b.build()
    }

    #[test]
    fn fast_signatures_equal_direct_minhash() {
        for seed in 0..30 {
            let g = random_graph(seed);
            let hasher = MinHasher::new(24, seed);
            let sig = graph_signatures(&g, &hasher);
            for u in 0..g.num_nodes() as NodeId {
                let mut set = g.two_hop_neighborhood(u);
                if g.degree(u) > 0 {
                    set.push(u);
                }
                let direct = hasher.signature(&set);
                assert_eq!(&sig[u as usize * 24..(u as usize + 1) * 24], direct.as_slice());
            }
        }
    }

    #[test]
    fn duplicated_node_always_merged() {
        // authors 0 and 1 write exactly the same papers
        let mut reg = TypeRegistry::new();
        reg.add_node_type("a").unwrap();
        reg.add_node_type("p").unwrap();
        reg.add_relation("w", "a", "p").unwrap();
        let mut b = GraphBuilder::new(Arc::new(reg), &[3, 4]);
        for (a, p) in [(0, 3), (0, 4), (1, 3), (1, 4), (2, 5), (2, 6)] {
            b.add_edge(EdgeTypeId(0), a, p, 1.0).unwrap();
        }
        let g = b.build();
        for seed in 0..20 {
            for mode in [LshMode::Banded, LshMode::FullSignature] {
                let cfg = CoarsenConfig {
                    lsh_mode: mode,
                    ..CoarsenConfig::default()
                };
                let m = match_lsh(&g, &cfg, seed).unwrap();
                assert_eq!(m.supernode(0), m.supernode(1));
                m.validate(&g, 2).unwrap();
            }
        }
    }

    #[test]
    fn banding_defaults() {
        let mut cfg = CoarsenConfig::default();
        assert_eq!(cfg.banding().unwrap(), (32, 4));
        cfg.lsh_k = 256;
        assert_eq!(cfg.banding().unwrap(), (32, 8));
        cfg.lsh_bands = Some(7);
        assert!(cfg.banding().is_err());
    }
}
