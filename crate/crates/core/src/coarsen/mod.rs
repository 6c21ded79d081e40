//! Coarsening chain `G_0 -> G_1 -> ... -> G_m`.
//!
//! Each level matches same-type nodes with one of three strategies and
//! collapses every match into a supernode.

mod jaccard;
mod matching;
mod minhash;

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hetgraph::{load_graph_binary, save_graph_binary, HeteroGraph};

pub use jaccard::{
    jaccard, jaccard_sorted, match_jaccard_max, match_jaccard_wrs, sample_proportional, visitation_order,
};
pub use matching::{build_coarse_graph, MatchingMatrix};
pub use minhash::{graph_signatures, match_lsh, minhash_signature, MinHasher, EMPTY_SLOT, MERSENNE_61};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    JaccMax,
    JaccWrs,
    Lsh,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::JaccMax => "jacc_max",
            Strategy::JaccWrs => "jacc_wrs",
            Strategy::Lsh => "lsh",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jacc_max" | "jaccard_max" => Ok(Strategy::JaccMax),
            "jacc_wrs" | "jaccard_wrs" => Ok(Strategy::JaccWrs),
            "lsh" => Ok(Strategy::Lsh),
            other => Err(Error::Config(format!("unknown coarsening strategy `{other}`"))),
        }
    }
}

/// How LSH turns signatures into merge candidates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LshMode {
    /// Nodes merge when they agree on every value of some band.
    Banded,
    /// Nodes merge only when their whole signatures agree.
    FullSignature,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoarsenConfig {
    pub strategy: Strategy,
    pub levels: usize,
    pub lsh_k: usize,
    pub lsh_mode: LshMode,
    pub lsh_bands: Option<usize>,
    pub lsh_rows: Option<usize>,
    pub seed: u64,
    /// Upper bound on fine nodes per supernode. Only LSH buckets can use more than 2.
    pub max_group: usize,
}

impl Default for CoarsenConfig {
    fn default() -> Self {
        CoarsenConfig {
            strategy: Strategy::JaccMax,
            levels: 2,
            lsh_k: 128,
            lsh_mode: LshMode::Banded,
            lsh_bands: None,
            lsh_rows: None,
            seed: 0,
            max_group: 2,
        }
    }
}

impl CoarsenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_group < 2 {
            return Err(Error::Config("max_group must be at least 2".into()));
        }
        if self.strategy == Strategy::Lsh {
            self.banding()?;
        }
        Ok(())
    }
}

/// Levels whose node count drops by less than this fraction end the chain.
pub const MIN_LEVEL_REDUCTION: f64 = 0.01;

/// Runs the configured matcher once on `g`.
pub fn match_level(g: &HeteroGraph, cfg: &CoarsenConfig, seed: u64) -> Result<MatchingMatrix> {
    Ok(match cfg.strategy {
        Strategy::JaccMax => match_jaccard_max(g),
        Strategy::JaccWrs => match_jaccard_wrs(g, seed),
        Strategy::Lsh => match_lsh(g, cfg, seed)?,
    })
}

/// Seed used for the matcher at `level` of a chain.
pub fn level_seed(seed: u64, level: usize) -> u64 {
    seed ^ (level as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Graphs `G_0..G_m`, matchings `M_{i,i+1}` and per-level wall-clock seconds.
#[derive(Clone, Debug)]
pub struct CoarsenChain {
    graphs: Vec<HeteroGraph>,
    matchings: Vec<MatchingMatrix>,
    level_seconds: Vec<f64>,
    warnings: Vec<String>,
}

impl CoarsenChain {
    /// A chain of length zero holding only `G_0`.
    pub fn trivial(g0: HeteroGraph) -> Self {
        CoarsenChain {
            graphs: vec![g0],
            matchings: Vec::new(),
            level_seconds: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn from_parts(graphs: Vec<HeteroGraph>, matchings: Vec<MatchingMatrix>) -> Result<Self> {
        if graphs.len() != matchings.len() + 1 {
            return Err(Error::shape(
                format!("{} graphs", matchings.len() + 1),
                format!("{} graphs", graphs.len()),
            ));
        }
        for (i, m) in matchings.iter().enumerate() {
            if m.fine_count() != graphs[i].num_nodes() || m.coarse_count() != graphs[i + 1].num_nodes() {
                return Err(Error::shape(
                    format!(
                        "matching {i} of {} -> {}",
                        graphs[i].num_nodes(),
                        graphs[i + 1].num_nodes()
                    ),
                    format!("{} -> {}", m.fine_count(), m.coarse_count()),
                ));
            }
        }
        let levels = matchings.len();
        Ok(CoarsenChain {
            graphs,
            matchings,
            level_seconds: vec![0.0; levels],
            warnings: Vec::new(),
        })
    }

    pub fn levels(&self) -> usize {
        self.matchings.len()
    }

    pub fn graph(&self, level: usize) -> &HeteroGraph {
        &self.graphs[level]
    }

    pub fn graphs(&self) -> &[HeteroGraph] {
        &self.graphs
    }

    pub fn matching(&self, level: usize) -> &MatchingMatrix {
        &self.matchings[level]
    }

    pub fn matchings(&self) -> &[MatchingMatrix] {
        &self.matchings
    }

    pub fn coarsest(&self) -> &HeteroGraph {
        self.graphs.last().expect("chain holds G_0")
    }

    pub fn level_seconds(&self) -> &[f64] {
        &self.level_seconds
    }

    pub fn total_seconds(&self) -> f64 {
        self.level_seconds.iter().sum()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn node_counts(&self) -> Vec<usize> {
        self.graphs.iter().map(HeteroGraph::num_nodes).collect()
    }

    /// Writes `graph_{i}.hmgr`, `match_{i}.hmmm` and `chain.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, g) in self.graphs.iter().enumerate() {
            save_graph_binary(g, &dir.join(format!("graph_{i}.hmgr")))?;
        }
        for (i, m) in self.matchings.iter().enumerate() {
            m.save(&dir.join(format!("match_{i}.hmmm")))?;
        }
        let meta = ChainMeta {
            levels: self.levels(),
            node_counts: self.node_counts(),
            level_seconds: self.level_seconds.clone(),
            warnings: self.warnings.clone(),
        };
        let p = dir.join("chain.json");
        let body = serde_json::to_string_pretty(&meta).expect("chain metadata serializes");
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join("chain.json");
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let meta: ChainMeta =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
        let mut graphs = Vec::with_capacity(meta.levels + 1);
        for i in 0..=meta.levels {
            graphs.push(load_graph_binary(&dir.join(format!("graph_{i}.hmgr")))?);
        }
        let mut matchings = Vec::with_capacity(meta.levels);
        for i in 0..meta.levels {
            matchings.push(MatchingMatrix::load(&dir.join(format!("match_{i}.hmmm")))?);
        }
        let mut chain = CoarsenChain::from_parts(graphs, matchings)?;
        if meta.level_seconds.len() == meta.levels {
            chain.level_seconds = meta.level_seconds;
        }
        chain.warnings = meta.warnings;
        Ok(chain)
    }
}

#[derive(Serialize, Deserialize)]
struct ChainMeta {
    levels: usize,
    node_counts: Vec<usize>,
    level_seconds: Vec<f64>,
    warnings: Vec<String>,
}

/// Coarsens `g0` up to `cfg.levels` times.
///
/// Stops early, recording a warning, when a level would shrink the graph by
/// less than [`MIN_LEVEL_REDUCTION`]; that level is discarded.
pub fn coarsen_chain(g0: &HeteroGraph, cfg: &CoarsenConfig) -> Result<CoarsenChain> {
    cfg.validate()?;
    let mut chain = CoarsenChain::trivial(g0.clone());
    for level in 0..cfg.levels {
        let start = Instant::now();
        let fine = chain.coarsest();
        let m = match_level(fine, cfg, level_seed(cfg.seed, level))?;
        let reduction = 1.0 - m.coarse_count() as f64 / fine.num_nodes().max(1) as f64;
        if reduction < MIN_LEVEL_REDUCTION {
            let msg = format!(
                "level {} reduced {} nodes by only {:.2}%; stopping at {} levels",
                level + 1,
                fine.num_nodes(),
                100.0 * reduction,
                level
            );
            log::warn!("{msg}");
            chain.warnings.push(msg);
            break;
        }
        let coarse = build_coarse_graph(fine, &m)?;
        chain.level_seconds.push(start.elapsed().as_secs_f64());
        chain.graphs.push(coarse);
        chain.matchings.push(m);
    }
    Ok(chain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hetgraph::{EdgeTypeId, GraphBuilder, TypeRegistry};
    use std::sync::Arc;

    /// Pairs of authors with identical paper sets: every author has a J = 1
    /// partner, as does every paper.
    fn twins(pairs: usize) -> HeteroGraph {
        let mut reg = TypeRegistry::new();
        reg.add_node_type("a").unwrap();
        reg.add_node_type("p").unwrap();
        reg.add_relation("w", "a", "p").unwrap();
        let n = 2 * pairs;
        let mut b = GraphBuilder::new(Arc::new(reg), &[n, n]);
        for i in 0..pairs as u32 {
            for a in [2 * i, 2 * i + 1] {
                for p in [2 * i, 2 * i + 1] {
                    b.add_edge(EdgeTypeId(0), a, n as u32 + p, 1.0).unwrap();
                }
            }
        }
        b.build()
    }

    #[test]
    fn one_level_halves_twin_graph() {
        let g = twins(5);
        for strategy in [Strategy::JaccMax, Strategy::JaccWrs, Strategy::Lsh] {
            let cfg = CoarsenConfig {
                strategy,
                levels: 1,
                ..Default::default()
            };
            let chain = coarsen_chain(&g, &cfg).unwrap();
            assert_eq!(chain.levels(), 1, "{strategy}");
            assert_eq!(chain.coarsest().num_nodes(), 10, "{strategy}");
        }
    }

    #[test]
    fn chain_counts_monotone_and_early_stop() {
        let g = twins(8);
        let cfg = CoarsenConfig {
            levels: 3,
            ..Default::default()
        };
        let chain = coarsen_chain(&g, &cfg).unwrap();
        let counts = chain.node_counts();
        assert!(counts.windows(2).all(|w| w[1] <= w[0]));
        // after one level every component is a single author-paper edge
        assert_eq!(counts, vec![32, 16]);
        assert_eq!(chain.warnings().len(), 1);
    }

    #[test]
    fn chain_save_load() {
        let g = twins(3);
        let chain = coarsen_chain(&g, &CoarsenConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        chain.save(dir.path()).unwrap();
        let back = CoarsenChain::load(dir.path()).unwrap();
        assert_eq!(back.levels(), chain.levels());
        assert_eq!(back.matchings(), chain.matchings());
        assert_eq!(back.node_counts(), chain.node_counts());
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("lsh".parse::<Strategy>().unwrap(), Strategy::Lsh);
        assert_eq!("jacc_wrs".parse::<Strategy>().unwrap(), Strategy::JaccWrs);
        assert!("heavy_edge".parse::<Strategy>().is_err());
    }
}
