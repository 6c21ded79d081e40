use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::MetricSummary;
use crate::error::{Error, Result};
use crate::hetgraph::{EdgeTypeId, EmbeddingMatrix, GraphBuilder, HeteroGraph, NodeId, NodeTypeId};

/// Area under the ROC curve as the Mann-Whitney statistic: the chance a
/// random positive outscores a random negative, ties counting one half.
pub fn auroc(pos: &[f64], neg: &[f64]) -> f64 {
    if pos.is_empty() || neg.is_empty() {
        return 0.5;
    }
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // average 1-based ranks across ties
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * all[i..=j].iter().filter(|e| e.1).count() as f64;
        i = j + 1;
    }
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    (rank_sum - np * (np + 1.0) / 2.0) / (np * nn)
}

pub fn sigmoid_dot(emb: &EmbeddingMatrix, u: NodeId, v: NodeId) -> f64 {
    let x = emb.row(u as usize).dot(&emb.row(v as usize));
    1.0 / (1.0 + (-x).exp())
}

/// A held-out edge or sampled non-edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TypedPair {
    pub relation: EdgeTypeId,
    pub u: NodeId,
    pub v: NodeId,
}

/// Residual training graph plus balanced test pairs.
#[derive(Clone, Debug)]
pub struct LinkSplit {
    pub train: HeteroGraph,
    pub positives: Vec<TypedPair>,
    pub negatives: Vec<TypedPair>,
    pub warnings: Vec<String>,
}

fn pair_key(decl_homogeneous: bool, u: NodeId, v: NodeId) -> (NodeId, NodeId) {
    if decl_homogeneous && v < u {
        (v, u)
    } else {
        (u, v)
    }
}

/// Removes a uniform `holdout` share of edges (at least one) and samples one
/// same-relation non-edge of the original graph per removed edge.
///
/// A relation that loses every edge is dropped from scoring with a warning.
pub fn split_edges(g: &HeteroGraph, holdout: f64, seed: u64) -> Result<LinkSplit> {
    if !(holdout > 0.0 && holdout < 1.0) {
        return Err(Error::Config("holdout must lie strictly between 0 and 1".into()));
    }
    let reg = g.registry().clone();
    let mut all: Vec<(EdgeTypeId, NodeId, NodeId, f64)> = Vec::with_capacity(g.num_edges());
    for (r, _) in reg.relations() {
        all.extend(g.edges(r).map(|(u, v, w)| (r, u, v, w)));
    }
    if all.len() < 10 {
        return Err(Error::InvalidInput(format!(
            "link prediction needs at least 10 edges, graph has {}",
            all.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.shuffle(&mut rng);
    let k = ((all.len() as f64 * holdout).round() as usize).max(1);
    let mut held = vec![false; all.len()];
    for &i in &order[..k] {
        held[i] = true;
    }

    let counts: Vec<usize> = (0..reg.num_node_types())
        .map(|t| g.type_count(NodeTypeId(t as u16)))
        .collect();
    let mut b = GraphBuilder::new(reg.clone(), &counts);
    let mut kept_per_rel = vec![0usize; reg.num_relations()];
    for (i, &(r, u, v, w)) in all.iter().enumerate() {
        if !held[i] {
            b.add_edge(r, u, v, w)?;
            kept_per_rel[r.index()] += 1;
        }
    }
    for (u, &s) in g.self_weights().iter().enumerate() {
        if s != 0.0 {
            b.add_self_weight(u as NodeId, s);
        }
    }
    let mut train = b.build();
    if let Some(ids) = g.original_ids() {
        train = train.with_original_ids(ids.clone());
    }

    let mut warnings = Vec::new();
    let mut skipped = HashSet::new();
    for (r, decl) in reg.relations() {
        if g.num_relation_edges(r) > 0 && kept_per_rel[r.index()] == 0 {
            warnings.push(format!(
                "holdout removed every `{}` edge; relation skipped in scoring",
                decl.name
            ));
            skipped.insert(r);
        }
    }

    let mut positives: Vec<TypedPair> = order[..k]
        .iter()
        .map(|&i| TypedPair {
            relation: all[i].0,
            u: all[i].1,
            v: all[i].2,
        })
        .filter(|p| !skipped.contains(&p.relation))
        .collect();
    positives.sort_unstable_by_key(|p| (p.relation, p.u, p.v));

    let mut existing: HashSet<(EdgeTypeId, NodeId, NodeId)> = HashSet::with_capacity(all.len());
    for &(r, u, v, _) in &all {
        existing.insert((r, u, v));
    }
    let mut taken = HashSet::new();
    let mut negatives = Vec::with_capacity(positives.len());
    for p in &positives {
        let decl = reg.relation_decl(p.relation);
        let (su, sv) = (g.type_range(decl.source), g.type_range(decl.target));
        let mut found = None;
        for _ in 0..10_000 {
            let u = rng.random_range(su.clone()) as NodeId;
            let v = rng.random_range(sv.clone()) as NodeId;
            if u == v {
                continue;
            }
            let (a, c) = pair_key(decl.is_homogeneous(), u, v);
            if existing.contains(&(p.relation, a, c)) || !taken.insert((p.relation, a, c)) {
                continue;
            }
            found = Some(TypedPair {
                relation: p.relation,
                u: a,
                v: c,
            });
            break;
        }
        negatives.push(found.ok_or_else(|| {
            Error::InvalidInput(format!("relation `{}` is too dense to sample non-edges", decl.name))
        })?);
    }
    Ok(LinkSplit {
        train,
        positives,
        negatives,
        warnings,
    })
}

/// AUROC of sigmoid-of-dot scores on a split. Ranks use the raw dot
/// product, which orders pairs exactly as the sigmoid does without its
/// floating-point saturation.
pub fn score_split(emb: &EmbeddingMatrix, split: &LinkSplit) -> f64 {
    let dot = |p: &TypedPair| emb.row(p.u as usize).dot(&emb.row(p.v as usize));
    let pos: Vec<f64> = split.positives.iter().map(dot).collect();
    let neg: Vec<f64> = split.negatives.iter().map(dot).collect();
    auroc(&pos, &neg)
}

#[derive(Clone, Debug)]
pub struct LinkPredResult {
    pub auroc: MetricSummary,
    pub warnings: Vec<String>,
}

/// Runs `embed` on `runs` residual graphs (seeds `seed`, `seed + 1`, ...)
/// and summarizes AUROC across runs.
pub fn link_prediction<F>(g: &HeteroGraph, mut embed: F, holdout: f64, runs: usize, seed: u64) -> Result<LinkPredResult>
where
    F: FnMut(&HeteroGraph, u64) -> Result<EmbeddingMatrix>,
{
    if runs == 0 {
        return Err(Error::Config("link prediction needs at least one run".into()));
    }
    let mut values = Vec::with_capacity(runs);
    let mut warnings = Vec::new();
    for i in 0..runs {
        let s = seed.wrapping_add(i as u64);
        let split = split_edges(g, holdout, s)?;
        let emb = embed(&split.train, s)?;
        if emb.rows() != g.num_nodes() {
            return Err(Error::shape(
                format!("{} rows", g.num_nodes()),
                format!("{} rows", emb.rows()),
            ));
        }
        values.push(score_split(&emb, &split));
        warnings.extend(split.warnings);
    }
    warnings.dedup();
    Ok(LinkPredResult {
        auroc: MetricSummary::from_values(values),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hetgraph::TypeRegistry;
    use std::sync::Arc;

    fn brute(pos: &[f64], neg: &[f64]) -> f64 {
        let mut s = 0.0;
        for &p in pos {
            for &n in neg {
                s += if p > n {
                    1.0
                } else if p == n {
                    0.5
                } else {
                    0.0
                };
            }
        }
        s / (pos.len() * neg.len()) as f64
    }

    #[test]
    fn hand_worked_six_scores() {
        // positives 0.9, 0.4, 0.6 vs negatives 0.4, 0.2, 0.7
        // pairs won: 0.9 -> 3, 0.4 -> 1 + tie 0.5, 0.6 -> 2 => 6.5 / 9
        let a = auroc(&[0.9, 0.4, 0.6], &[0.4, 0.2, 0.7]);
        assert!((a - 6.5 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_random() {
        assert_eq!(auroc(&[3.0, 4.0], &[1.0, 2.0]), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p: Vec<f64> = (0..2000).map(|_| rng.random()).collect();
        let n: Vec<f64> = (0..2000).map(|_| rng.random()).collect();
        assert!((auroc(&p, &n) - 0.5).abs() < 0.05);
    }

    #[test]
    fn matches_brute_force_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let p: Vec<f64> = (0..rng.random_range(1..60))
                .map(|_| rng.random_range(0..10) as f64)
                .collect();
            let n: Vec<f64> = (0..rng.random_range(1..60))
                .map(|_| rng.random_range(0..10) as f64)
                .collect();
            assert!((auroc(&p, &n) - brute(&p, &n)).abs() < 1e-12);
        }
    }

    fn bipartite(seed: u64) -> HeteroGraph {
        let mut reg = TypeRegistry::new();
        reg.add_node_type("a").unwrap();
        reg.add_node_type("p").unwrap();
        reg.add_relation("w", "a", "p").unwrap();
        let mut b = GraphBuilder::new(Arc::new(reg), &[30, 40]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..200 {
            let u = rng.random_range(0..30);
            let v = rng.random_range(30..70);
            b.add_edge(EdgeTypeId(0), u, v, 1.0).unwrap();
        }
        b.build()
    }

    #[test]
    fn split_is_disjoint_and_negatives_are_non_edges() {
        let g = bipartite(1);
        let s = split_edges(&g, 0.1, 7).unwrap();
        assert_eq!(s.positives.len(), (g.num_edges() as f64 * 0.1).round() as usize);
        assert_eq!(s.positives.len(), s.negatives.len());
        let train: HashSet<_> = s.train.edges(EdgeTypeId(0)).map(|(u, v, _)| (u, v)).collect();
        let orig: HashSet<_> = g.edges(EdgeTypeId(0)).map(|(u, v, _)| (u, v)).collect();
        for p in &s.positives {
            assert!(!train.contains(&(p.u, p.v)) && orig.contains(&(p.u, p.v)));
        }
        for n in &s.negatives {
            assert!(!orig.contains(&(n.u, n.v)));
            assert!(n.u < 30 && n.v >= 30);
        }
        assert_eq!(train.len() + s.positives.len(), orig.len());
    }

    #[test]
    fn too_few_edges() {
        let mut reg = TypeRegistry::new();
        reg.add_node_type("a").unwrap();
        reg.add_relation("r", "a", "a").unwrap();
        let mut b = GraphBuilder::new(Arc::new(reg), &[5]);
        b.add_edge(EdgeTypeId(0), 0, 1, 1.0).unwrap();
        assert!(split_edges(&b.build(), 0.1, 0).is_err());
    }
}
