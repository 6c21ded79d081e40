//! Typed heterogeneous graph model.
//!
//! Nodes are reindexed so each node type occupies one contiguous id block;
//! the refiner relies on this to slice per-type dense matrices out of a
//! global embedding matrix. Every relation is stored as a symmetric CSR
//! adjacency so an edge is visible from both endpoints.

mod embedding;
mod io;
mod schema;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, TypeMismatch};

pub use embedding::{EmbeddingFormat, EmbeddingMatrix};
pub use io::{load_graph_binary, save_graph_binary};
pub use schema::{load_graph, parse_schema, write_graph_tsv, Schema};

pub type NodeId = u32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeTypeId(pub u16);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeTypeId(pub u16);

impl NodeTypeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl EdgeTypeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// An edge type declared between an ordered pair of node types.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationDecl {
    pub name: String,
    pub source: NodeTypeId,
    pub target: NodeTypeId,
}

impl RelationDecl {
    pub fn is_homogeneous(&self) -> bool {
        self.source == self.target
    }

    /// The type at the other end of the relation, if `t` is one of its endpoints.
    pub fn other_end(&self, t: NodeTypeId) -> Option<NodeTypeId> {
        if self.source == t {
            Some(self.target)
        } else if self.target == t {
            Some(self.source)
        } else {
            None
        }
    }
}

/// Names for node and edge types.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeRegistry {
    node_types: Vec<String>,
    relations: Vec<RelationDecl>,
}

impl TypeRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node_type(&mut self, name: &str) -> Result<NodeTypeId> {
        if self.node_type(name).is_some() {
            return Err(Error::Config(format!("node type `{name}` declared twice")));
        }
        if self.node_types.len() >= u16::MAX as usize {
            return Err(Error::Config("too many node types".into()));
        }
        self.node_types.push(name.to_string());
        Ok(NodeTypeId(self.node_types.len() as u16 - 1))
    }

    pub fn add_relation(&mut self, name: &str, source: &str, target: &str) -> Result<EdgeTypeId> {
        if self.relation(name).is_some() {
            return Err(Error::Config(format!("edge type `{name}` declared twice")));
        }
        let source = self
            .node_type(source)
            .ok_or_else(|| Error::UnknownType(source.to_string()))?;
        let target = self
            .node_type(target)
            .ok_or_else(|| Error::UnknownType(target.to_string()))?;
        self.relations.push(RelationDecl {
            name: name.to_string(),
            source,
            target,
        });
        Ok(EdgeTypeId(self.relations.len() as u16 - 1))
    }

    pub fn node_type(&self, name: &str) -> Option<NodeTypeId> {
        self.node_types
            .iter()
            .position(|n| n == name)
            .map(|i| NodeTypeId(i as u16))
    }

    pub fn relation(&self, name: &str) -> Option<EdgeTypeId> {
        self.relations
            .iter()
            .position(|r| r.name == name)
            .map(|i| EdgeTypeId(i as u16))
    }

    pub fn node_type_name(&self, t: NodeTypeId) -> &str {
        &self.node_types[t.index()]
    }

    pub fn relation_decl(&self, r: EdgeTypeId) -> &RelationDecl {
        &self.relations[r.index()]
    }

    pub fn num_node_types(&self) -> usize {
        self.node_types.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn node_type_names(&self) -> &[String] {
        &self.node_types
    }

    pub fn relations(&self) -> impl Iterator<Item = (EdgeTypeId, &RelationDecl)> {
        self.relations
            .iter()
            .enumerate()
            .map(|(i, r)| (EdgeTypeId(i as u16), r))
    }
}

/// Compressed sparse rows over global node ids. Rows are sorted by target id
/// and contain no duplicates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Csr {
    offsets: Vec<usize>,
    targets: Vec<NodeId>,
    weights: Vec<f64>,
}

impl Csr {
    /// Builds from directed entries; duplicates are summed in ascending
    /// weight order, so both directions of an edge get the same sum.
    fn from_entries(num_nodes: usize, mut entries: Vec<(NodeId, NodeId, f64)>) -> Self {
        entries.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)).then(a.2.total_cmp(&b.2)));
        let mut offsets = vec![0usize; num_nodes + 1];
        let mut targets = Vec::with_capacity(entries.len());
        let mut weights = Vec::with_capacity(entries.len());
        let mut last: Option<(NodeId, NodeId)> = None;
        for (u, v, w) in entries {
            if last == Some((u, v)) {
                *weights.last_mut().unwrap() += w;
                continue;
            }
            last = Some((u, v));
            offsets[u as usize + 1] += 1;
            targets.push(v);
            weights.push(w);
        }
        for i in 0..num_nodes {
            offsets[i + 1] += offsets[i];
        }
        Csr {
            offsets,
            targets,
            weights,
        }
    }

    pub fn row(&self, u: NodeId) -> (&[NodeId], &[f64]) {
        let (a, b) = (self.offsets[u as usize], self.offsets[u as usize + 1]);
        (&self.targets[a..b], &self.weights[a..b])
    }

    pub fn row_range(&self, u: NodeId) -> std::ops::Range<usize> {
        self.offsets[u as usize]..self.offsets[u as usize + 1]
    }

    pub fn targets(&self) -> &[NodeId] {
        &self.targets
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn degree(&self, u: NodeId) -> usize {
        self.offsets[u as usize + 1] - self.offsets[u as usize]
    }

    pub fn nnz(&self) -> usize {
        self.targets.len()
    }
}

/// Typed, weighted, undirected multi-relational graph.
#[derive(Clone, Debug)]
pub struct HeteroGraph {
    registry: Arc<TypeRegistry>,
    node_types: Vec<NodeTypeId>,
    type_offsets: Vec<usize>,
    relations: Vec<Csr>,
    relation_edge_counts: Vec<usize>,
    combined: Csr,
    self_weights: Vec<f64>,
    original_ids: Option<Arc<Vec<String>>>,
}

impl HeteroGraph {
    pub fn registry(&self) -> &Arc<TypeRegistry> {
        &self.registry
    }

    pub fn num_nodes(&self) -> usize {
        self.node_types.len()
    }

    /// Number of stored undirected edges across all relations.
    pub fn num_edges(&self) -> usize {
        self.relation_edge_counts.iter().sum()
    }

    pub fn num_relation_edges(&self, r: EdgeTypeId) -> usize {
        self.relation_edge_counts[r.index()]
    }

    pub fn node_type(&self, u: NodeId) -> NodeTypeId {
        self.node_types[u as usize]
    }

    pub fn node_types(&self) -> &[NodeTypeId] {
        &self.node_types
    }

    /// Global id range occupied by nodes of type `t`.
    pub fn type_range(&self, t: NodeTypeId) -> std::ops::Range<usize> {
        self.type_offsets[t.index()]..self.type_offsets[t.index() + 1]
    }

    pub fn type_count(&self, t: NodeTypeId) -> usize {
        let r = self.type_range(t);
        r.end - r.start
    }

    pub fn relation_csr(&self, r: EdgeTypeId) -> &Csr {
        &self.relations[r.index()]
    }

    /// Union of all relations, parallel edges between the same pair summed.
    pub fn combined(&self) -> &Csr {
        &self.combined
    }

    pub fn self_weights(&self) -> &[f64] {
        &self.self_weights
    }

    pub fn original_ids(&self) -> Option<&Arc<Vec<String>>> {
        self.original_ids.as_ref()
    }

    /// Display id of a node: its original id when known, else the numeric id.
    pub fn display_id(&self, u: NodeId) -> String {
        match &self.original_ids {
            Some(ids) => ids[u as usize].clone(),
            None => u.to_string(),
        }
    }

    pub(crate) fn with_original_ids(mut self, ids: Arc<Vec<String>>) -> Self {
        debug_assert_eq!(ids.len(), self.num_nodes());
        self.original_ids = Some(ids);
        self
    }

    pub fn degree(&self, u: NodeId) -> usize {
        self.combined.degree(u)
    }

    /// Neighbors of `u` in ascending id order, restricted to `relation` when given.
    pub fn neighbors(&self, u: NodeId, relation: Option<EdgeTypeId>) -> Vec<(NodeId, f64)> {
        let csr = match relation {
            Some(r) => &self.relations[r.index()],
            None => &self.combined,
        };
        let (t, w) = csr.row(u);
        t.iter().copied().zip(w.iter().copied()).collect()
    }

    /// Each undirected edge of relation `r` once, oriented (source type, target
    /// type) for heterogeneous relations and `u < v` for homogeneous ones.
    pub fn edges(&self, r: EdgeTypeId) -> impl Iterator<Item = (NodeId, NodeId, f64)> + '_ {
        let decl = self.registry.relation_decl(r);
        let homogeneous = decl.is_homogeneous();
        let src_range = self.type_range(decl.source);
        let csr = &self.relations[r.index()];
        src_range.flat_map(move |u| {
            let u = u as NodeId;
            let (t, w) = csr.row(u);
            t.iter()
                .zip(w.iter())
                .filter(move |(&v, _)| !homogeneous || u < v)
                .map(move |(&v, &w)| (u, v, w))
        })
    }

    /// Sum of all stored edge weights, each undirected edge counted once.
    pub fn total_edge_weight(&self) -> f64 {
        (0..self.registry.num_relations())
            .map(|r| self.edges(EdgeTypeId(r as u16)).map(|e| e.2).sum::<f64>())
            .sum()
    }

    pub fn total_self_weight(&self) -> f64 {
        self.self_weights.iter().sum()
    }

    /// N(u): 1-hop and 2-hop neighbors of `u`, excluding `u`, sorted ascending.
    pub fn two_hop_neighborhood(&self, u: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let (first, _) = self.combined.row(u);
        out.extend_from_slice(first);
        for &w in first {
            out.extend_from_slice(self.combined.row(w).0);
        }
        out.sort_unstable();
        out.dedup();
        if let Ok(pos) = out.binary_search(&u) {
            out.remove(pos);
        }
        out
    }

    pub fn builder(registry: Arc<TypeRegistry>, type_counts: &[usize]) -> GraphBuilder {
        GraphBuilder::new(registry, type_counts)
    }
}

/// Accumulates edges for a [`HeteroGraph`] whose node id blocks are fixed up front.
pub struct GraphBuilder {
    registry: Arc<TypeRegistry>,
    node_types: Vec<NodeTypeId>,
    type_offsets: Vec<usize>,
    edges: Vec<Vec<(NodeId, NodeId, f64)>>,
    self_weights: Vec<f64>,
}

impl GraphBuilder {
    pub fn new(registry: Arc<TypeRegistry>, type_counts: &[usize]) -> Self {
        assert_eq!(type_counts.len(), registry.num_node_types());
        let mut type_offsets = vec![0];
        let mut node_types = Vec::new();
        for (t, &c) in type_counts.iter().enumerate() {
            node_types.extend(std::iter::repeat_n(NodeTypeId(t as u16), c));
            type_offsets.push(type_offsets[t] + c);
        }
        let n = node_types.len();
        GraphBuilder {
            edges: vec![Vec::new(); registry.num_relations()],
            registry,
            node_types,
            type_offsets,
            self_weights: vec![0.0; n],
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.node_types.len()
    }

    pub fn node_type(&self, u: NodeId) -> NodeTypeId {
        self.node_types[u as usize]
    }

    /// Adds weight `w` to edge `(u, v)` of relation `r`. A loop `u == v`
    /// accumulates into the node's self weight instead.
    pub fn add_edge(&mut self, r: EdgeTypeId, u: NodeId, v: NodeId, w: f64) -> Result<()> {
        let n = self.num_nodes();
        if u as usize >= n || v as usize >= n {
            return Err(Error::InvalidInput(format!(
                "edge ({u}, {v}) references a node outside 0..{n}"
            )));
        }
        if !(w.is_finite() && w > 0.0) {
            return Err(Error::InvalidInput(format!(
                "edge ({u}, {v}) has non-positive or non-finite weight {w}"
            )));
        }
        let decl = self
            .registry
            .relations
            .get(r.index())
            .ok_or_else(|| Error::InvalidInput(format!("unknown relation id {}", r.0)))?;
        let (tu, tv) = (self.node_types[u as usize], self.node_types[v as usize]);
        if (tu, tv) != (decl.source, decl.target) {
            let name = |t: NodeTypeId| self.registry.node_type_name(t).to_string();
            return Err(Error::TypeMismatch(Box::new(TypeMismatch {
                relation: decl.name.clone(),
                src: u.to_string(),
                dst: v.to_string(),
                src_type: name(tu),
                dst_type: name(tv),
                expected_src: name(decl.source),
                expected_dst: name(decl.target),
            })));
        }
        if u == v {
            self.self_weights[u as usize] += w;
        } else if decl.is_homogeneous() && u > v {
            self.edges[r.index()].push((v, u, w));
        } else {
            self.edges[r.index()].push((u, v, w));
        }
        Ok(())
    }

    pub fn add_self_weight(&mut self, u: NodeId, w: f64) {
        self.self_weights[u as usize] += w;
    }

    pub fn build(self) -> HeteroGraph {
        let n = self.num_nodes();
        let relations: Vec<Csr> = self
            .edges
            .into_par_iter()
            .map(|canon| {
                let mut entries = Vec::with_capacity(canon.len() * 2);
                for (u, v, w) in canon {
                    entries.push((u, v, w));
                    entries.push((v, u, w));
                }
                Csr::from_entries(n, entries)
            })
            .collect();
        let relation_edge_counts = relations.iter().map(|c| c.nnz() / 2).collect();
        let mut all = Vec::with_capacity(relations.iter().map(Csr::nnz).sum());
        for csr in &relations {
            for u in 0..n {
                let (t, w) = csr.row(u as NodeId);
                all.extend(t.iter().zip(w).map(|(&v, &w)| (u as NodeId, v, w)));
            }
        }
        let combined = Csr::from_entries(n, all);
        HeteroGraph {
            registry: self.registry,
            node_types: self.node_types,
            type_offsets: self.type_offsets,
            relations,
            relation_edge_counts,
            combined,
            self_weights: self.self_weights,
            original_ids: None,
        }
    }
}

/// Precomputed N(u) for every node, stored flat.
pub struct TwoHopIndex {
    offsets: Vec<usize>,
    members: Vec<NodeId>,
}

impl TwoHopIndex {
    /// Builds every neighborhood; rows are computed in parallel.
    pub fn build(g: &HeteroGraph) -> Self {
        let n = g.num_nodes();
        let rows: Vec<Vec<NodeId>> = (0..n as NodeId)
            .into_par_iter()
            .map_init(
                || vec![u32::MAX; n],
                |stamp, u| {
                    let mut out = Vec::new();
                    stamp[u as usize] = u;
                    let first = g.combined.row(u).0;
                    for &w in first {
                        if stamp[w as usize] != u {
                            stamp[w as usize] = u;
                            out.push(w);
                        }
                    }
                    for &w in first {
                        for &x in g.combined.row(w).0 {
                            if stamp[x as usize] != u {
                                stamp[x as usize] = u;
                                out.push(x);
                            }
                        }
                    }
                    out.sort_unstable();
                    out
                },
            )
            .collect();
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        let mut members = Vec::with_capacity(rows.iter().map(Vec::len).sum());
        for r in rows {
            members.extend_from_slice(&r);
            offsets.push(members.len());
        }
        TwoHopIndex { offsets, members }
    }

    pub fn get(&self, u: NodeId) -> &[NodeId] {
        &self.members[self.offsets[u as usize]..self.offsets[u as usize + 1]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn registry_ap() -> Arc<TypeRegistry> {
        let mut reg = TypeRegistry::new();
        reg.add_node_type("author").unwrap();
        reg.add_node_type("paper").unwrap();
        reg.add_relation("writes", "author", "paper").unwrap();
        reg.add_relation("cites", "paper", "paper").unwrap();
        Arc::new(reg)
    }

    #[test]
    fn isolated_node_has_no_neighbors() {
        let g = GraphBuilder::new(registry_ap(), &[1, 1]).build();
        assert!(g.neighbors(0, None).is_empty());
        assert!(g.two_hop_neighborhood(0).is_empty());
    }

    #[test]
    fn star_neighbors_ascending() {
        let mut b = GraphBuilder::new(registry_ap(), &[0, 4]);
        let cites = EdgeTypeId(1);
        b.add_edge(cites, 0, 3, 1.0).unwrap();
        b.add_edge(cites, 0, 1, 1.0).unwrap();
        b.add_edge(cites, 2, 0, 1.0).unwrap();
        let g = b.build();
        let ids: Vec<_> = g.neighbors(0, None).into_iter().map(|x| x.0).collect();
        assert_eq!(ids, vec![1, 2, 3]);
        assert_eq!(g.neighbors(1, Some(cites)), vec![(0, 1.0)]);
        assert!(g.neighbors(1, Some(EdgeTypeId(0))).is_empty());
    }

    #[test]
    fn path_neighborhoods() {
        // u - a - b - c over the homogeneous relation
        let mut b = GraphBuilder::new(registry_ap(), &[0, 4]);
        let cites = EdgeTypeId(1);
        b.add_edge(cites, 0, 1, 1.0).unwrap();
        b.add_edge(cites, 1, 2, 1.0).unwrap();
        b.add_edge(cites, 2, 3, 1.0).unwrap();
        let g = b.build();
        let nb: Vec<_> = g.neighbors(1, None).into_iter().map(|x| x.0).collect();
        assert_eq!(nb, vec![0, 2]);
        assert_eq!(g.two_hop_neighborhood(0), vec![1, 2]);
        assert_eq!(g.two_hop_neighborhood(1), vec![0, 2, 3]);
    }

    #[test]
    fn triangle_excludes_self() {
        let mut b = GraphBuilder::new(registry_ap(), &[0, 3]);
        let cites = EdgeTypeId(1);
        b.add_edge(cites, 0, 1, 1.0).unwrap();
        b.add_edge(cites, 1, 2, 1.0).unwrap();
        b.add_edge(cites, 2, 0, 1.0).unwrap();
        let g = b.build();
        assert_eq!(g.two_hop_neighborhood(0), vec![1, 2]);
    }

    #[test]
    fn duplicate_edges_merge_and_loops_become_self_weight() {
        let mut b = GraphBuilder::new(registry_ap(), &[1, 2]);
        b.add_edge(EdgeTypeId(0), 0, 1, 1.0).unwrap();
        b.add_edge(EdgeTypeId(0), 0, 1, 1.0).unwrap();
        b.add_edge(EdgeTypeId(1), 2, 2, 3.0).unwrap();
        let g = b.build();
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.neighbors(1, None), vec![(0, 2.0)]);
        assert_eq!(g.self_weights(), &[0.0, 0.0, 3.0]);
        assert_eq!(g.total_edge_weight(), 2.0);
    }

    #[test]
    fn edge_type_contradiction_rejected() {
        let mut b = GraphBuilder::new(registry_ap(), &[1, 1]);
        let err = b.add_edge(EdgeTypeId(0), 1, 0, 1.0).unwrap_err();
        assert!(matches!(err, Error::TypeMismatch(_)));
        assert!(b.add_edge(EdgeTypeId(0), 0, 1, 0.0).is_err());
    }

    #[test]
    fn combined_sums_parallel_relations() {
        let mut reg = TypeRegistry::new();
        reg.add_node_type("p").unwrap();
        reg.add_relation("r1", "p", "p").unwrap();
        reg.add_relation("r2", "p", "p").unwrap();
        let mut b = GraphBuilder::new(Arc::new(reg), &[2]);
        b.add_edge(EdgeTypeId(0), 0, 1, 1.5).unwrap();
        b.add_edge(EdgeTypeId(1), 1, 0, 2.0).unwrap();
        let g = b.build();
        assert_eq!(g.neighbors(0, None), vec![(1, 3.5)]);
        assert_eq!(g.num_edges(), 2);
    }
}
