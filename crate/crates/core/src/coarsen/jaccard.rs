use std::cmp::Reverse;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::matching::{Grouping, MatchingMatrix};
use crate::hetgraph::{HeteroGraph, NodeId, TwoHopIndex};

/// Exact Jaccard similarity of two sorted, duplicate-free sets. Two empty
/// sets score 0.
pub fn jaccard_sorted(a: &[NodeId], b: &[NodeId]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// J(u, v) over the two-hop neighborhoods of `u` and `v`.
pub fn jaccard(g: &HeteroGraph, u: NodeId, v: NodeId) -> f64 {
    jaccard_sorted(&g.two_hop_neighborhood(u), &g.two_hop_neighborhood(v))
}

/// Order in which matchers visit nodes: descending degree, then ascending id.
pub fn visitation_order(g: &HeteroGraph) -> Vec<NodeId> {
    let mut order: Vec<NodeId> = (0..g.num_nodes() as NodeId).collect();
    order.sort_by_key(|&u| (Reverse(g.degree(u)), u));
    order
}

/// Runs the greedy scan shared by both Jaccard matchers. For each unmatched
/// node in visitation order, `choose` sees the unmatched same-type members
/// of N(u) with their similarity (ascending id) and may name a partner.
fn greedy_scan<F>(g: &HeteroGraph, mut choose: F) -> MatchingMatrix
where
    F: FnMut(&[(NodeId, f64)]) -> Option<NodeId>,
{
    let n = g.num_nodes();
    let index = TwoHopIndex::build(g);
    let mut grouping = Grouping::new(n);
    let mut stamp = vec![u32::MAX; n];
    let mut candidates = Vec::new();
    for u in visitation_order(g) {
        if grouping.is_matched(u) {
            continue;
        }
        let nu = index.get(u);
        let tu = g.node_type(u);
        candidates.clear();
        let mut stamped = false;
        for &v in nu {
            if grouping.is_matched(v) || g.node_type(v) != tu {
                continue;
            }
            if !stamped {
                for &x in nu {
                    stamp[x as usize] = u;
                }
                stamped = true;
            }
            let nv = index.get(v);
            let inter = nv.iter().filter(|&&x| stamp[x as usize] == u).count();
            let union = nu.len() + nv.len() - inter;
            candidates.push((v, inter as f64 / union as f64));
        }
        if candidates.is_empty() {
            continue;
        }
        if let Some(v) = choose(&candidates) {
            grouping.merge(&[u, v]);
        }
    }
    grouping.into_matching()
}

/// Pairs each unmatched node with the unmatched same-type member of N(u)
/// of highest Jaccard similarity, ties going to the lowest id.
pub fn match_jaccard_max(g: &HeteroGraph) -> MatchingMatrix {
    greedy_scan(g, |cands| {
        let mut best = cands[0];
        for &c in &cands[1..] {
            if c.1 > best.1 {
                best = c;
            }
        }
        Some(best.0)
    })
}

/// Like [`match_jaccard_max`], but the partner is drawn with probability
/// proportional to its Jaccard similarity. Zero-similarity candidates are
/// never drawn; a node whose candidates all score zero stays unmatched.
pub fn match_jaccard_wrs(g: &HeteroGraph, seed: u64) -> MatchingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    greedy_scan(g, |cands| sample_proportional(&mut rng, cands))
}

/// Draws one id with probability `J / sum(J)`; `None` if every weight is 0.
pub fn sample_proportional<R: Rng>(rng: &mut R, cands: &[(NodeId, f64)]) -> Option<NodeId> {
    let total: f64 = cands.iter().map(|c| c.1).sum();
    if total <= 0.0 {
        return None;
    }
    let mut r = rng.random::<f64>() * total;
    let mut last = None;
    for &(v, j) in cands {
        if j <= 0.0 {
            continue;
        }
        if r < j {
            return Some(v);
        }
        r -= j;
        last = Some(v);
    }
    last
}
