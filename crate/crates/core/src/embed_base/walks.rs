use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hetgraph::{HeteroGraph, NodeId, NodeTypeId, TypeRegistry};

/// Cyclic sequence of node types guiding a walk, e.g. author-paper-author.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaPath {
    types: Vec<NodeTypeId>,
}

impl MetaPath {
    pub fn new(types: Vec<NodeTypeId>, registry: &TypeRegistry) -> Result<Self> {
        if types.len() < 3 {
            return Err(Error::Config("a meta-path needs at least three positions".into()));
        }
        if types.first() != types.last() {
            return Err(Error::Config("a meta-path must start and end on the same type".into()));
        }
        for pair in types.windows(2) {
            if pair.iter().any(|t| t.index() >= registry.num_node_types()) {
                return Err(Error::Config("meta-path references an undeclared node type".into()));
            }
            let linked = registry.relations().any(|(_, r)| r.other_end(pair[0]) == Some(pair[1]));
            if !linked {
                return Err(Error::Config(format!(
                    "no relation links `{}` and `{}`",
                    registry.node_type_name(pair[0]),
                    registry.node_type_name(pair[1])
                )));
            }
        }
        Ok(MetaPath { types })
    }

    /// Parses `"author-paper-author"` against the registry.
    pub fn parse(spec: &str, registry: &TypeRegistry) -> Result<Self> {
        let types = spec
            .split('-')
            .map(|name| {
                registry
                    .node_type(name.trim())
                    .ok_or_else(|| Error::UnknownType(name.trim().to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        MetaPath::new(types, registry)
    }

    pub fn types(&self) -> &[NodeTypeId] {
        &self.types
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn start_type(&self) -> NodeTypeId {
        self.types[0]
    }

    /// Type required at walk position `pos` (0 = start).
    pub fn type_at(&self, pos: usize) -> NodeTypeId {
        if pos == 0 {
            self.types[0]
        } else {
            self.types[(pos - 1) % (self.types.len() - 1) + 1]
        }
    }

    pub fn to_string(&self, registry: &TypeRegistry) -> String {
        self.types
            .iter()
            .map(|&t| registry.node_type_name(t))
            .collect::<Vec<_>>()
            .join("-")
    }
}

/// Walks stored back to back.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WalkCorpus {
    tokens: Vec<NodeId>,
    offsets: Vec<usize>,
}

impl WalkCorpus {
    pub fn new() -> Self {
        WalkCorpus {
            tokens: Vec::new(),
            offsets: vec![0],
        }
    }

    pub fn push(&mut self, walk: &[NodeId]) {
        self.tokens.extend_from_slice(walk);
        self.offsets.push(self.tokens.len());
    }

    pub fn extend(&mut self, other: &WalkCorpus) {
        for w in other.iter() {
            self.push(w);
        }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn walk(&self, i: usize) -> &[NodeId] {
        &self.tokens[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[NodeId]> + '_ {
        (0..self.len()).map(move |i| self.walk(i))
    }

    pub fn tokens(&self) -> &[NodeId] {
        &self.tokens
    }

    /// One walk per line, ids separated by spaces.
    pub fn write_text(&self, path: &Path, g: Option<&HeteroGraph>) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        let res: std::io::Result<()> = (|| {
            for walk in self.iter() {
                let line: Vec<String> = walk
                    .iter()
                    .map(|&u| g.map_or_else(|| u.to_string(), |g| g.display_id(u)))
                    .collect();
                writeln!(w, "{}", line.join(" "))?;
            }
            w.flush()
        })();
        res.map_err(|e| Error::io(path, e))
    }
}

/// Per-row cumulative weights of the combined adjacency, for weighted steps.
pub struct Walker<'g> {
    graph: &'g HeteroGraph,
    cumulative: Vec<f64>,
}

impl<'g> Walker<'g> {
    pub fn new(graph: &'g HeteroGraph) -> Self {
        let adj = graph.combined();
        let mut cumulative = vec![0.0; adj.nnz()];
        for u in 0..graph.num_nodes() as NodeId {
            let mut acc = 0.0;
            for k in adj.row_range(u) {
                acc += adj.weights()[k];
                cumulative[k] = acc;
            }
        }
        Walker { graph, cumulative }
    }

    /// Draws a neighbor of `u` of type `t` with probability proportional to
    /// edge weight, or `None` if `u` has no such neighbor.
    pub fn step<R: Rng>(&self, rng: &mut R, u: NodeId, t: NodeTypeId) -> Option<NodeId> {
        let adj = self.graph.combined();
        let row = adj.row_range(u);
        let targets = &adj.targets()[row.clone()];
        let span = self.graph.type_range(t);
        let lo = row.start + targets.partition_point(|&v| (v as usize) < span.start);
        let hi = row.start + targets.partition_point(|&v| (v as usize) < span.end);
        if lo == hi {
            return None;
        }
        let base = if lo > row.start { self.cumulative[lo - 1] } else { 0.0 };
        let total = self.cumulative[hi - 1] - base;
        let r = base + rng.random::<f64>() * total;
        let pick = lo + self.cumulative[lo..hi].partition_point(|&c| c <= r);
        Some(adj.targets()[pick.min(hi - 1)])
    }

    /// One walk of at most `length` nodes from `start`.
    pub fn walk<R: Rng>(&self, rng: &mut R, start: NodeId, mp: &MetaPath, length: usize, out: &mut Vec<NodeId>) {
        out.clear();
        out.push(start);
        let mut cur = start;
        for pos in 1..length {
            match self.step(rng, cur, mp.type_at(pos)) {
                Some(next) => {
                    out.push(next);
                    cur = next;
                }
                None => break,
            }
        }
    }
}

fn walk_seed(seed: u64, node: NodeId, round: usize) -> u64 {
    // splitmix64 finalizer over the packed triple
    let mut z = seed
        .wrapping_add((node as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((round as u64).wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Meta-path guided walks from every node of the path's start type.
///
/// Each walk draws from its own RNG seeded by `(seed, start node, round)`,
/// so the corpus is identical for any thread count. Walks are ordered by
/// round, then start node.
pub fn generate_walks(
    g: &HeteroGraph,
    mp: &MetaPath,
    walks_per_node: usize,
    walk_length: usize,
    seed: u64,
) -> Result<WalkCorpus> {
    for &t in mp.types() {
        if t.index() >= g.registry().num_node_types() || g.type_count(t) == 0 {
            return Err(Error::InvalidInput(format!(
                "meta-path type `{}` has no nodes in the graph",
                g.registry()
                    .node_type_names()
                    .get(t.index())
                    .map_or("?", String::as_str)
            )));
        }
    }
    let walker = Walker::new(g);
    let starts = g.type_range(mp.start_type());
    let jobs: Vec<(usize, NodeId)> = (0..walks_per_node)
        .flat_map(|r| starts.clone().map(move |u| (r, u as NodeId)))
        .collect();
    let walks: Vec<Vec<NodeId>> = jobs
        .into_par_iter()
        .map(|(r, u)| {
            let mut rng = ChaCha8Rng::seed_from_u64(walk_seed(seed, u, r));
            let mut out = Vec::with_capacity(walk_length);
            walker.walk(&mut rng, u, mp, walk_length, &mut out);
            out
        })
        .collect();
    let mut corpus = WalkCorpus::new();
    for w in &walks {
        corpus.push(w);
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hetgraph::{EdgeTypeId, GraphBuilder};
    use std::sync::Arc;

    fn ap_registry() -> Arc<TypeRegistry> {
        let mut reg = TypeRegistry::new();
        reg.add_node_type("author").unwrap();
        reg.add_node_type("paper").unwrap();
        reg.add_node_type("venue").unwrap();
        reg.add_relation("writes", "author", "paper").unwrap();
        reg.add_relation("at", "paper", "venue").unwrap();
        Arc::new(reg)
    }

    #[test]
    fn meta_path_validation() {
        let reg = ap_registry();
        let mp = MetaPath::parse("author-paper-venue-paper-author", &reg).unwrap();
        assert_eq!(mp.len(), 5);
        let types: Vec<_> = (0..9).map(|i| mp.type_at(i).0).collect();
        assert_eq!(types, vec![0, 1, 2, 1, 0, 1, 2, 1, 0]);
        assert!(MetaPath::parse("author-venue-author", &reg).is_err());
        assert!(MetaPath::parse("author-paper", &reg).is_err());
        assert!(MetaPath::parse("author-paper-paper", &reg).is_err());
        assert!(matches!(
            MetaPath::parse("author-movie-author", &reg),
            Err(Error::UnknownType(_))
        ));
    }

    #[test]
    fn single_pair_alternates() {
        let reg = ap_registry();
        let mut b = GraphBuilder::new(reg.clone(), &[1, 1, 1]);
        b.add_edge(EdgeTypeId(0), 0, 1, 1.0).unwrap();
        let g = b.build();
        let mp = MetaPath::parse("author-paper-author", &reg).unwrap();
        let c = generate_walks(&g, &mp, 2, 7, 1).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.walk(0), &[0, 1, 0, 1, 0, 1, 0]);
    }

    #[test]
    fn author_without_papers_truncates() {
        let reg = ap_registry();
        let mut b = GraphBuilder::new(reg.clone(), &[2, 1, 1]);
        b.add_edge(EdgeTypeId(0), 0, 2, 1.0).unwrap();
        let g = b.build();
        let mp = MetaPath::parse("author-paper-author", &reg).unwrap();
        let c = generate_walks(&g, &mp, 1, 10, 1).unwrap();
        assert_eq!(c.walk(1), &[1]);
    }

    #[test]
    fn missing_type_is_an_error() {
        let reg = ap_registry();
        let g = GraphBuilder::new(reg.clone(), &[1, 1, 0]).build();
        let mp = MetaPath::parse("author-paper-venue-paper-author", &reg).unwrap();
        assert!(generate_walks(&g, &mp, 1, 10, 1).is_err());
    }

    #[test]
    fn weighted_step_ratio() {
        // author 0 -> paper 1 (weight 2), paper 2 (weight 1)
        let reg = ap_registry();
        let mut b = GraphBuilder::new(reg.clone(), &[1, 2, 0]);
        b.add_edge(EdgeTypeId(0), 0, 1, 2.0).unwrap();
        b.add_edge(EdgeTypeId(0), 0, 2, 1.0).unwrap();
        let g = b.build();
        let mp = MetaPath::parse("author-paper-author", &reg).unwrap();
        let c = generate_walks(&g, &mp, 10_000, 2, 3).unwrap();
        let heavy = c.iter().filter(|w| w[1] == 1).count() as f64;
        let ratio = heavy / (10_000.0 - heavy);
        assert!((ratio - 2.0).abs() < 0.1, "ratio {ratio}");
    }
}
