//! Planted-community heterogeneous graphs for desk-scale experiments.

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::LabelSet;
use crate::hetgraph::{write_graph_tsv, EdgeTypeId, GraphBuilder, HeteroGraph, NodeId, TypeRegistry};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub types: usize,
    pub n_per_type: usize,
    pub communities: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            types: 3,
            n_per_type: 1000,
            communities: 2,
            p_in: 0.05,
            p_out: 0.001,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.types == 0 || self.communities == 0 {
            return Err(Error::Config("types and communities must be at least 1".into()));
        }
        if self.n_per_type < self.communities {
            return Err(Error::Config(format!(
                "n_per_type {} is smaller than communities {}",
                self.n_per_type, self.communities
            )));
        }
        for (name, p) in [("p_in", self.p_in), ("p_out", self.p_out)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        Ok(())
    }

    fn type_name(&self, t: usize) -> String {
        if self.types <= 26 {
            ((b'a' + t as u8) as char).to_string()
        } else {
            format!("t{t}")
        }
    }

    /// Node types `a, b, c, ...`; relations link consecutive types in a
    /// ring (a single relation for two types, a self relation for one).
    pub fn registry(&self) -> TypeRegistry {
        let mut reg = TypeRegistry::new();
        for t in 0..self.types {
            reg.add_node_type(&self.type_name(t)).expect("distinct names");
        }
        let pairs: Vec<(usize, usize)> = match self.types {
            1 => vec![(0, 0)],
            2 => vec![(0, 1)],
            n => (0..n).map(|i| (i, (i + 1) % n)).collect(),
        };
        for (s, t) in pairs {
            let (a, b) = (self.type_name(s), self.type_name(t));
            reg.add_relation(&format!("{a}_{b}"), &a, &b)
                .expect("distinct relations");
        }
        reg
    }

    /// Community of the `k`-th node of a type.
    pub fn community(&self, k: usize) -> usize {
        k * self.communities / self.n_per_type
    }
}

/// `count` distinct values from `0..total`.
fn sample_distinct<R: Rng>(rng: &mut R, total: u64, count: u64) -> Vec<u64> {
    if count == 0 {
        return Vec::new();
    }
    if count * 2 > total {
        let mut all: Vec<u64> = (0..total).collect();
        let (picked, _) = all.partial_shuffle(rng, count as usize);
        return picked.to_vec();
    }
    let mut seen = HashSet::with_capacity(count as usize);
    let mut out = Vec::with_capacity(count as usize);
    while (out.len() as u64) < count {
        let x = rng.random_range(0..total);
        if seen.insert(x) {
            out.push(x);
        }
    }
    out
}

/// Decodes a linear index into the `i < j` pair of an `n`-element triangle.
fn triangle_pair(n: u64, mut idx: u64) -> (u64, u64) {
    let mut i = 0;
    loop {
        let row = n - i - 1;
        if idx < row {
            return (i, i + 1 + idx);
        }
        idx -= row;
        i += 1;
    }
}

/// Generates the graph and community labels.
pub fn generate(cfg: &SynthConfig) -> Result<(HeteroGraph, LabelSet)> {
    cfg.validate()?;
    let reg = Arc::new(cfg.registry());
    let n = cfg.n_per_type;
    let counts = vec![n; cfg.types];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bounds: Vec<(usize, usize)> = (0..cfg.communities)
        .map(|c| {
            let lo = (c * n).div_ceil(cfg.communities);
            let hi = ((c + 1) * n).div_ceil(cfg.communities);
            (lo, hi)
        })
        .collect();
    let mut b = GraphBuilder::new(reg.clone(), &counts);
    for (r, decl) in reg.relations() {
        let (s0, t0) = (decl.source.index() * n, decl.target.index() * n);
        for (ci, &(slo, shi)) in bounds.iter().enumerate() {
            for (cj, &(tlo, thi)) in bounds.iter().enumerate() {
                let same_block = decl.is_homogeneous() && ci == cj;
                if decl.is_homogeneous() && cj < ci {
                    continue;
                }
                let p = if ci == cj { cfg.p_in } else { cfg.p_out };
                let (ns, nt) = ((shi - slo) as u64, (thi - tlo) as u64);
                let total = if same_block {
                    ns * ns.saturating_sub(1) / 2
                } else {
                    ns * nt
                };
                if total == 0 || p == 0.0 {
                    continue;
                }
                let count = Binomial::new(total, p)
                    .map_err(|e| Error::Config(format!("edge probability {p}: {e}")))?
                    .sample(&mut rng);
                for idx in sample_distinct(&mut rng, total, count) {
                    let (i, j) = if same_block {
                        triangle_pair(ns, idx)
                    } else {
                        (idx / nt, idx % nt)
                    };
                    let u = (s0 + slo) as u64 + i;
                    let v = (t0 + tlo) as u64 + j;
                    b.add_edge(EdgeTypeId(r.0), u as NodeId, v as NodeId, 1.0)?;
                }
            }
        }
    }
    let ids: Vec<String> = (0..cfg.types)
        .flat_map(|t| (0..n).map(move |k| (t, k)))
        .map(|(t, k)| format!("{}{k}", cfg.type_name(t)))
        .collect();
    let g = b.build().with_original_ids(Arc::new(ids));
    let labels = LabelSet::from_pairs(
        g.num_nodes(),
        (0..g.num_nodes()).map(|u| (u as NodeId, cfg.community(u % n).to_string())),
    )?;
    Ok((g, labels))
}

/// Paths of the files written by [`write_dataset`].
#[derive(Clone, Debug)]
pub struct SynthFiles {
    pub schema: PathBuf,
    pub nodes: PathBuf,
    pub edges: PathBuf,
    pub labels: PathBuf,
}

impl SynthFiles {
    pub fn in_dir(dir: &Path) -> Self {
        SynthFiles {
            schema: dir.join("schema.txt"),
            nodes: dir.join("nodes.tsv"),
            edges: dir.join("edges.tsv"),
            labels: dir.join("labels.tsv"),
        }
    }
}

/// Writes schema, nodes, edges and labels into `dir`.
pub fn write_dataset(cfg: &SynthConfig, dir: &Path) -> Result<SynthFiles> {
    let (g, labels) = generate(cfg)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = SynthFiles::in_dir(dir);
    write_graph_tsv(&g, &files.schema, &files.nodes, &files.edges)?;
    let f = std::fs::File::create(&files.labels).map_err(|e| Error::io(&files.labels, e))?;
    let mut w = std::io::BufWriter::new(f);
    let res: std::io::Result<()> = (|| {
        for (&u, &l) in labels.nodes().iter().zip(labels.labels()) {
            writeln!(w, "{}\t{}", g.display_id(u), labels.class_names()[l])?;
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(&files.labels, e))?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_decoding_covers_all_pairs() {
        let n = 6;
        let pairs: Vec<_> = (0..n * (n - 1) / 2).map(|i| triangle_pair(n, i)).collect();
        let set: HashSet<_> = pairs.iter().copied().collect();
        assert_eq!(set.len(), pairs.len());
        assert!(pairs.iter().all(|&(i, j)| i < j && j < n));
    }

    #[test]
    fn planted_structure_is_modular() {
        let cfg = SynthConfig {
            n_per_type: 200,
            p_in: 0.1,
            p_out: 0.001,
            ..SynthConfig::default()
        };
        let (g, labels) = generate(&cfg).unwrap();
        assert_eq!(g.num_nodes(), 600);
        assert_eq!(g.registry().num_relations(), 3);
        let comm = |u: u32| labels.labels()[u as usize];
        let (mut inside, mut across) = (0, 0);
        for (r, _) in g.registry().relations() {
            for (u, v, _) in g.edges(r) {
                if comm(u) == comm(v) {
                    inside += 1;
                } else {
                    across += 1;
                }
            }
        }
        assert!(inside > 20 * across);
        assert_eq!(g.display_id(201), "b1");
    }

    #[test]
    fn deterministic_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            n_per_type: 50,
            seed: 3,
            ..SynthConfig::default()
        };
        let a = write_dataset(&cfg, &dir.path().join("a")).unwrap();
        let b = write_dataset(&cfg, &dir.path().join("b")).unwrap();
        for (x, y) in [
            (&a.edges, &b.edges),
            (&a.labels, &b.labels),
            (&a.nodes, &b.nodes),
            (&a.schema, &b.schema),
        ] {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
    }

    #[test]
    fn rejects_infeasible_settings() {
        assert!(generate(&SynthConfig {
            p_in: 1.5,
            ..SynthConfig::default()
        })
        .is_err());
        assert!(generate(&SynthConfig {
            n_per_type: 1,
            communities: 2,
            ..SynthConfig::default()
        })
        .is_err());
    }

    #[test]
    fn one_community_gives_one_label() {
        let (_, labels) = generate(&SynthConfig {
            n_per_type: 20,
            communities: 1,
            ..SynthConfig::default()
        })
        .unwrap();
        assert_eq!(labels.num_classes(), 1);
    }
}
