//! Base embedding of the coarsest graph: meta-path walks fed to skip-gram.

mod skipgram;
mod walks;

use serde::{Deserialize, Serialize};

pub use skipgram::{sgns_loss, sgns_target, sgns_update, sigmoid, train_skipgram, BaseEmbedding};
pub use walks::{generate_walks, MetaPath, WalkCorpus, Walker};

use crate::error::{Error, Result};
use crate::hetgraph::{HeteroGraph, TypeRegistry};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkConfig {
    pub walks_per_node: usize,
    pub walk_length: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub initial_lr: f64,
    pub type_aware_negatives: bool,
    pub seed: u64,
    /// Training threads; 1 keeps training bit-reproducible.
    pub threads: usize,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            walks_per_node: 10,
            walk_length: 80,
            window: 5,
            negatives: 5,
            epochs: 5,
            initial_lr: 0.025,
            type_aware_negatives: true,
            seed: 0,
            threads: 1,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self, meta_paths: &[MetaPath]) -> Result<()> {
        let counts = [
            ("walks_per_node", self.walks_per_node),
            ("walk_length", self.walk_length),
            ("window", self.window),
            ("negatives", self.negatives),
            ("epochs", self.epochs),
            ("threads", self.threads),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.initial_lr.is_finite() && self.initial_lr > 0.0) {
            return Err(Error::Config("initial_lr must be positive".into()));
        }
        if let Some(mp) = meta_paths.iter().find(|mp| mp.len() > self.walk_length) {
            return Err(Error::Config(format!(
                "walk_length {} is shorter than a meta-path of length {}",
                self.walk_length,
                mp.len()
            )));
        }
        Ok(())
    }
}

/// Anything that can embed a whole graph, used on the coarsest level.
pub trait BaseEmbedder: Send + Sync {
    fn name(&self) -> &str;

    /// Returns exactly `g.num_nodes()` finite rows of width `d`.
    fn embed(&self, g: &HeteroGraph, d: usize, seed: u64) -> Result<BaseEmbedding>;
}

/// Meta-path walks plus skip-gram with negative sampling.
#[derive(Clone, Debug)]
pub struct MetaPathSkipGram {
    pub meta_paths: Vec<MetaPath>,
    pub config: WalkConfig,
}

impl BaseEmbedder for MetaPathSkipGram {
    fn name(&self) -> &str {
        "metapath2vec"
    }

    fn embed(&self, g: &HeteroGraph, d: usize, seed: u64) -> Result<BaseEmbedding> {
        let cfg = WalkConfig {
            seed,
            ..self.config.clone()
        };
        base_embed(g, &self.meta_paths, d, &cfg)
    }
}

/// One `t-u-t` path per node type `t`, where `u` is the other end of the
/// first declared relation touching `t`. Types without relations are skipped.
pub fn default_meta_paths(registry: &TypeRegistry) -> Vec<MetaPath> {
    (0..registry.num_node_types())
        .filter_map(|i| {
            let t = crate::hetgraph::NodeTypeId(i as u16);
            let u = registry.relations().find_map(|(_, r)| r.other_end(t))?;
            MetaPath::new(vec![t, u, t], registry).ok()
        })
        .collect()
}

pub fn parse_meta_paths(specs: &[String], registry: &TypeRegistry) -> Result<Vec<MetaPath>> {
    if specs.is_empty() {
        return Ok(default_meta_paths(registry));
    }
    specs.iter().map(|s| MetaPath::parse(s, registry)).collect()
}

fn path_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64).wrapping_mul(0xA24B_AED4_963E_E407)
}

/// Walks for every meta-path, concatenated in list order.
pub fn build_corpus(g: &HeteroGraph, meta_paths: &[MetaPath], cfg: &WalkConfig) -> Result<WalkCorpus> {
    if meta_paths.is_empty() {
        return Err(Error::Config("at least one meta-path is required".into()));
    }
    cfg.validate(meta_paths)?;
    let mut corpus = WalkCorpus::new();
    for (i, mp) in meta_paths.iter().enumerate() {
        let walks = generate_walks(g, mp, cfg.walks_per_node, cfg.walk_length, path_seed(cfg.seed, i))?;
        corpus.extend(&walks);
    }
    Ok(corpus)
}

/// Walks over all meta-paths, then one skip-gram model over the combined
/// corpus. Nodes that no walk reaches keep their seeded initial vectors and
/// are listed in [`BaseEmbedding::unvisited`].
pub fn base_embed(g: &HeteroGraph, meta_paths: &[MetaPath], d: usize, cfg: &WalkConfig) -> Result<BaseEmbedding> {
    let corpus = build_corpus(g, meta_paths, cfg)?;
    let out = train_skipgram(&corpus, g, d, cfg)?;
    if !out.unvisited.is_empty() {
        log::info!("{} nodes never visited by a walk", out.unvisited.len());
    }
    Ok(out)
}
