use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::hetgraph::{GraphBuilder, HeteroGraph, NodeId, NodeTypeId};

const MAGIC: &[u8; 4] = b"HMMM";
const VERSION: u32 = 1;

/// Assignment of every fine node to exactly one supernode.
///
/// Supernodes are numbered in order of their smallest member, so a graph
/// whose node types occupy contiguous blocks keeps that layout after
/// coarsening.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchingMatrix {
    coarse_count: usize,
    assignment: Vec<u32>,
}

impl MatchingMatrix {
    pub fn identity(n: usize) -> Self {
        MatchingMatrix {
            coarse_count: n,
            assignment: (0..n as u32).collect(),
        }
    }

    /// Validates that the assignment is onto `0..coarse_count`.
    pub fn from_assignment(assignment: Vec<u32>, coarse_count: usize) -> Result<Self> {
        let mut hit = vec![false; coarse_count];
        for &s in &assignment {
            let slot = hit
                .get_mut(s as usize)
                .ok_or_else(|| Error::InvalidInput(format!("supernode {s} out of range 0..{coarse_count}")))?;
            *slot = true;
        }
        if let Some(empty) = hit.iter().position(|h| !h) {
            return Err(Error::InvalidInput(format!("supernode {empty} has no fine nodes")));
        }
        Ok(MatchingMatrix {
            coarse_count,
            assignment,
        })
    }

    pub fn fine_count(&self) -> usize {
        self.assignment.len()
    }

    pub fn coarse_count(&self) -> usize {
        self.coarse_count
    }

    pub fn assignment(&self) -> &[u32] {
        &self.assignment
    }

    pub fn supernode(&self, u: NodeId) -> u32 {
        self.assignment[u as usize]
    }

    /// Fine members of every supernode, each list ascending.
    pub fn members(&self) -> Vec<Vec<NodeId>> {
        let mut out = vec![Vec::new(); self.coarse_count];
        for (u, &s) in self.assignment.iter().enumerate() {
            out[s as usize].push(u as NodeId);
        }
        out
    }

    /// Checks the structural invariants against the fine graph.
    pub fn validate(&self, fine: &HeteroGraph, max_group: usize) -> Result<()> {
        if self.fine_count() != fine.num_nodes() {
            return Err(Error::shape(fine.num_nodes(), self.fine_count()));
        }
        for (s, members) in self.members().iter().enumerate() {
            if members.is_empty() {
                return Err(Error::InvalidInput(format!("supernode {s} is empty")));
            }
            if members.len() > max_group {
                return Err(Error::InvalidInput(format!(
                    "supernode {s} groups {} nodes, max is {max_group}",
                    members.len()
                )));
            }
            let t = fine.node_type(members[0]);
            if members.iter().any(|&m| fine.node_type(m) != t) {
                return Err(Error::InvalidInput(format!("supernode {s} mixes node types")));
            }
        }
        Ok(())
    }

    pub fn write(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u64::<LittleEndian>(self.fine_count() as u64)?;
        w.write_u64::<LittleEndian>(self.coarse_count as u64)?;
        for &a in &self.assignment {
            w.write_u32::<LittleEndian>(a)?;
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        let trunc = |_| Error::Format("truncated matching file".into());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(trunc)?;
        if &magic != MAGIC {
            return Err(Error::Format("not an HMMM matching file".into()));
        }
        let version = r.read_u32::<LittleEndian>().map_err(trunc)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported HMMM version {version}")));
        }
        let fine = r.read_u64::<LittleEndian>().map_err(trunc)? as usize;
        let coarse = r.read_u64::<LittleEndian>().map_err(trunc)? as usize;
        let mut assignment = vec![0u32; fine];
        r.read_u32_into::<LittleEndian>(&mut assignment).map_err(trunc)?;
        Self::from_assignment(assignment, coarse).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(&mut std::io::BufReader::new(f))
    }
}

/// Collects merge decisions during a matching pass.
pub(crate) struct Grouping {
    rep: Vec<u32>,
    matched: Vec<bool>,
}

impl Grouping {
    pub fn new(n: usize) -> Self {
        Grouping {
            rep: (0..n as u32).collect(),
            matched: vec![false; n],
        }
    }

    pub fn is_matched(&self, u: NodeId) -> bool {
        self.matched[u as usize]
    }

    /// Merges a set of currently unmatched nodes into one supernode.
    pub fn merge(&mut self, nodes: &[NodeId]) {
        debug_assert!(nodes.len() >= 2);
        let min = *nodes.iter().min().unwrap();
        for &u in nodes {
            debug_assert!(!self.matched[u as usize]);
            self.matched[u as usize] = true;
            self.rep[u as usize] = min;
        }
    }

    pub fn into_matching(self) -> MatchingMatrix {
        let n = self.rep.len();
        let mut assignment = vec![0u32; n];
        let mut next = 0u32;
        for u in 0..n {
            let r = self.rep[u] as usize;
            if r == u {
                assignment[u] = next;
                next += 1;
            } else {
                assignment[u] = assignment[r];
            }
        }
        MatchingMatrix {
            coarse_count: next as usize,
            assignment,
        }
    }
}

/// Collapses each supernode's members into one node. Edge weights between
/// supernodes add up; weight on edges inside a supernode, and the members'
/// own self weights, accumulate into the supernode's self weight.
pub fn build_coarse_graph(g: &HeteroGraph, m: &MatchingMatrix) -> Result<HeteroGraph> {
    if m.fine_count() != g.num_nodes() {
        return Err(Error::shape(
            format!("matching over {} nodes", g.num_nodes()),
            format!("matching over {} nodes", m.fine_count()),
        ));
    }
    let reg = g.registry().clone();
    let mut coarse_type: Vec<Option<NodeTypeId>> = vec![None; m.coarse_count()];
    for u in 0..g.num_nodes() as NodeId {
        let t = g.node_type(u);
        let slot = &mut coarse_type[m.supernode(u) as usize];
        match slot {
            None => *slot = Some(t),
            Some(prev) if *prev != t => {
                return Err(Error::InvalidInput(format!(
                    "supernode {} mixes node types",
                    m.supernode(u)
                )))
            }
            _ => {}
        }
    }
    let mut counts = vec![0usize; reg.num_node_types()];
    let mut last = 0usize;
    for t in coarse_type.iter().map(|t| t.expect("assignment is onto").index()) {
        if t < last {
            return Err(Error::InvalidInput("supernode ids break the node type blocks".into()));
        }
        last = t;
        counts[t] += 1;
    }
    let mut b = GraphBuilder::new(reg.clone(), &counts);
    for (r, _) in reg.relations() {
        for (u, v, w) in g.edges(r) {
            b.add_edge(r, m.supernode(u), m.supernode(v), w)?;
        }
    }
    for (u, &s) in g.self_weights().iter().enumerate() {
        if s != 0.0 {
            b.add_self_weight(m.supernode(u as NodeId), s);
        }
    }
    Ok(b.build())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hetgraph::{EdgeTypeId, TypeRegistry};
    use std::sync::Arc;

    fn reg() -> Arc<TypeRegistry> {
        let mut reg = TypeRegistry::new();
        reg.add_node_type("a").unwrap();
        reg.add_node_type("p").unwrap();
        reg.add_relation("w", "a", "p").unwrap();
        reg.add_relation("aa", "a", "a").unwrap();
        Arc::new(reg)
    }

    #[test]
    fn identity_matching_preserves_graph() {
        let mut b = GraphBuilder::new(reg(), &[2, 2]);
        b.add_edge(EdgeTypeId(0), 0, 2, 1.0).unwrap();
        b.add_edge(EdgeTypeId(0), 1, 3, 2.0).unwrap();
        b.add_edge(EdgeTypeId(1), 0, 1, 0.5).unwrap();
        let g = b.build();
        let c = build_coarse_graph(&g, &MatchingMatrix::identity(4)).unwrap();
        for u in 0..4 {
            assert_eq!(c.neighbors(u, None), g.neighbors(u, None));
        }
    }

    #[test]
    fn merged_pair_sums_shared_edges() {
        // authors 0,1 both write paper 2 with weight 1
        let mut b = GraphBuilder::new(reg(), &[2, 1]);
        b.add_edge(EdgeTypeId(0), 0, 2, 1.0).unwrap();
        b.add_edge(EdgeTypeId(0), 1, 2, 1.0).unwrap();
        let g = b.build();
        let m = MatchingMatrix::from_assignment(vec![0, 0, 1], 2).unwrap();
        let c = build_coarse_graph(&g, &m).unwrap();
        assert_eq!(c.neighbors(0, None), vec![(1, 2.0)]);
    }

    #[test]
    fn merged_adjacent_pair_keeps_weight_as_self_weight() {
        let mut b = GraphBuilder::new(reg(), &[2, 0]);
        b.add_edge(EdgeTypeId(1), 0, 1, 3.0).unwrap();
        let g = b.build();
        let m = MatchingMatrix::from_assignment(vec![0, 0], 1).unwrap();
        let c = build_coarse_graph(&g, &m).unwrap();
        assert_eq!(c.self_weights(), &[3.0]);
        assert_eq!(c.num_edges(), 0);
    }

    #[test]
    fn grouping_numbers_supernodes_by_smallest_member() {
        let mut gr = Grouping::new(5);
        gr.merge(&[3, 1]);
        let m = gr.into_matching();
        assert_eq!(m.assignment(), &[0, 1, 2, 1, 3]);
        assert_eq!(m.coarse_count(), 4);
    }

    #[test]
    fn hmmm_round_trip_and_rejects_bad_input() {
        let m = MatchingMatrix::from_assignment(vec![0, 1, 0, 2], 3).unwrap();
        let mut buf = Vec::new();
        m.write(&mut buf).unwrap();
        assert_eq!(MatchingMatrix::read(&mut buf.as_slice()).unwrap(), m);
        assert!(MatchingMatrix::read(&mut &buf[..10]).is_err());
        assert!(MatchingMatrix::from_assignment(vec![0, 2], 3).is_err());
    }

    #[test]
    fn cross_type_supernode_rejected() {
        let g = GraphBuilder::new(reg(), &[1, 1]).build();
        let m = MatchingMatrix::from_assignment(vec![0, 0], 1).unwrap();
        assert!(build_coarse_graph(&g, &m).is_err());
        assert!(m.validate(&g, 2).is_err());
    }
}
