use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::hetgraph::{HeteroGraph, NodeId};

/// Single-label class assignment for a subset of nodes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSet {
    nodes: Vec<NodeId>,
    labels: Vec<usize>,
    classes: Vec<String>,
}

impl LabelSet {
    /// `pairs` of (node, class name); classes are numbered in order of first
    /// appearance. A node listed twice keeps its last label.
    pub fn from_pairs(num_nodes: usize, pairs: impl IntoIterator<Item = (NodeId, String)>) -> Result<Self> {
        let mut class_index: HashMap<String, usize> = HashMap::new();
        let mut classes = Vec::new();
        let mut by_node: HashMap<NodeId, usize> = HashMap::new();
        let mut order = Vec::new();
        for (u, c) in pairs {
            if u as usize >= num_nodes {
                return Err(Error::InvalidInput(format!("labeled node {u} is not in the graph")));
            }
            let k = *class_index.entry(c.clone()).or_insert_with(|| {
                classes.push(c);
                classes.len() - 1
            });
            if by_node.insert(u, k).is_none() {
                order.push(u);
            }
        }
        order.sort_unstable();
        let labels = order.iter().map(|u| by_node[u]).collect();
        Ok(LabelSet {
            nodes: order,
            labels,
            classes,
        })
    }

    /// Reads `node_id <TAB> label` lines, resolving ids through the graph's
    /// original ids (or numeric ids when the graph has none).
    pub fn load(path: &Path, g: &HeteroGraph) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let lookup: Option<HashMap<&str, NodeId>> = g
            .original_ids()
            .map(|ids| ids.iter().enumerate().map(|(i, s)| (s.as_str(), i as NodeId)).collect());
        let mut pairs = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let perr = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let mut parts = line.split('\t');
            let (id, label) = match (parts.next(), parts.next()) {
                (Some(a), Some(b)) => (a.trim(), b.trim()),
                _ => return Err(perr("expected `node_id <TAB> label`".into())),
            };
            let u = match &lookup {
                Some(m) => *m.get(id).ok_or_else(|| Error::DanglingNode(id.to_string()))?,
                None => id.parse::<NodeId>().map_err(|_| Error::DanglingNode(id.to_string()))?,
            };
            pairs.push((u, label.to_string()));
        }
        Self::from_pairs(g.num_nodes(), pairs)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    /// Class index of each entry of [`nodes`](Self::nodes).
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.classes
    }

    /// Share of the most frequent class.
    pub fn majority_rate(&self) -> f64 {
        let mut counts = vec![0usize; self.classes.len()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts.into_iter().max().unwrap_or(0) as f64 / self.len().max(1) as f64
    }

    /// Same nodes with labels reassigned by `perm` (a permutation of entries).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        LabelSet {
            nodes: self.nodes.clone(),
            labels: perm.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes.clone(),
        }
    }
}
