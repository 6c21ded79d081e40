//! End-to-end runs: coarsen, embed the coarsest graph, refine back down.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coarsen::{coarsen_chain, CoarsenChain, CoarsenConfig};
use crate::embed_base::{parse_meta_paths, BaseEmbedder, BaseEmbedding, MetaPathSkipGram, WalkConfig};
use crate::error::{Error, Result};
use crate::evaluate::{link_prediction, node_classification, EvalReport, LabelSet, StageTimings};
use crate::hetgraph::{load_graph, parse_schema, EmbeddingFormat, EmbeddingMatrix, HeteroGraph};
use crate::refine::{refine_chain, train_refiner, RefineConfig, TrainedRefiner};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub name: String,
    pub schema: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub nodes: Option<PathBuf>,
    pub labels: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Embedding width.
    pub d: usize,
    /// Master seed; every stage seed is taken from it.
    pub seed: u64,
    /// Meta-paths as type-name strings; empty selects one default per type.
    pub meta_paths: Vec<String>,
    pub output_format: EmbeddingFormat,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 128,
            seed: 0,
            meta_paths: Vec::new(),
            output_format: EmbeddingFormat::Binary,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub node_classification: bool,
    pub folds: usize,
    pub link_prediction: bool,
    pub holdout: f64,
    /// Link-prediction repetitions, seeded `seed + 0, seed + 1, ...`.
    pub runs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            node_classification: true,
            folds: 10,
            link_prediction: false,
            holdout: 0.1,
            runs: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    /// Threads for walks and signatures; 0 uses every core.
    pub threads: usize,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub coarsen: CoarsenConfig,
    pub walk: WalkConfig,
    pub refine: RefineConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            output_dir: PathBuf::from("hetmile-out"),
            threads: 0,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            coarsen: CoarsenConfig::default(),
            walk: WalkConfig::default(),
            refine: RefineConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks settings that do not need the graph. With `check_files`, every
    /// configured input path must exist.
    pub fn validate(&self, check_files: bool) -> Result<()> {
        if self.model.d < 2 {
            return Err(Error::Config("d must be at least 2".into()));
        }
        self.coarsen.validate()?;
        self.refine.validate()?;
        self.walk.validate(&[])?;
        if self.eval.folds < 2 || self.eval.runs == 0 {
            return Err(Error::Config("eval needs at least 2 folds and 1 run".into()));
        }
        if check_files {
            let d = &self.data;
            for p in [&d.schema, &d.edges, &d.nodes, &d.labels].into_iter().flatten() {
                if !p.exists() {
                    return Err(Error::Config(format!("input file {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    /// Stage configs with every seed replaced by `seed`.
    pub fn seeded(&self, seed: u64) -> (CoarsenConfig, WalkConfig, RefineConfig) {
        let mut c = self.coarsen.clone();
        let mut w = self.walk.clone();
        let mut r = self.refine.clone();
        c.seed = seed;
        w.seed = seed;
        r.seed = seed;
        (c, w, r)
    }

    pub fn load_graph(&self) -> Result<HeteroGraph> {
        let schema = self
            .data
            .schema
            .as_deref()
            .ok_or_else(|| Error::Config("data.schema is not set".into()))?;
        let edges = self
            .data
            .edges
            .as_deref()
            .ok_or_else(|| Error::Config("data.edges is not set".into()))?;
        load_graph(edges, &parse_schema(schema)?, self.data.nodes.as_deref())
    }

    pub fn load_labels(&self, g: &HeteroGraph) -> Result<Option<LabelSet>> {
        self.data.labels.as_deref().map(|p| LabelSet::load(p, g)).transpose()
    }

    pub fn embedder(&self, g: &HeteroGraph) -> Result<MetaPathSkipGram> {
        let meta_paths = parse_meta_paths(&self.model.meta_paths, g.registry())?;
        if meta_paths.is_empty() {
            return Err(Error::Config(
                "schema yields no meta-paths; set model.meta_paths".into(),
            ));
        }
        self.walk.validate(&meta_paths)?;
        Ok(MetaPathSkipGram {
            meta_paths,
            config: self.walk.clone(),
        })
    }

    pub fn embedding_file(&self) -> &'static str {
        match self.model.output_format {
            EmbeddingFormat::Binary => "embeddings.bin",
            EmbeddingFormat::TextWord2vec => "embeddings.txt",
        }
    }
}

/// Everything a pipeline run produces.
#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub embedding: EmbeddingMatrix,
    pub chain: CoarsenChain,
    pub base: BaseEmbedding,
    pub refiner: Option<TrainedRefiner>,
    pub timings: StageTimings,
}

pub fn coarsen_stage(g: &HeteroGraph, cfg: &PipelineConfig, seed: u64) -> Result<CoarsenChain> {
    let (c, _, _) = cfg.seeded(seed);
    coarsen_chain(g, &c).map_err(|e| e.in_stage("coarsen"))
}

pub fn embed_stage(g_m: &HeteroGraph, cfg: &PipelineConfig, seed: u64) -> Result<BaseEmbedding> {
    let embedder = cfg.embedder(g_m).map_err(|e| e.in_stage("embed"))?;
    embedder.embed(g_m, cfg.model.d, seed).map_err(|e| e.in_stage("embed"))
}

/// Trains the refiner on the coarsest graph and refines down to `G_0`. A
/// chain without coarse levels passes `e_m` through untouched.
pub fn refine_stage(
    chain: &CoarsenChain,
    e_m: &EmbeddingMatrix,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<(EmbeddingMatrix, Option<TrainedRefiner>)> {
    if chain.levels() == 0 {
        return Ok((e_m.clone(), None));
    }
    let (c, _, r) = cfg.seeded(seed);
    let run = || -> Result<_> {
        let embedder = cfg.embedder(chain.coarsest())?;
        let trained = train_refiner(chain.coarsest(), e_m, &r, &c, Some(&embedder))?;
        let e0 = refine_chain(chain, e_m, &trained.params)?;
        Ok((e0, Some(trained)))
    };
    run().map_err(|e| e.in_stage("refine"))
}

pub fn run_pipeline(g: &HeteroGraph, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    run_pipeline_seeded(g, cfg, cfg.model.seed)
}

/// Coarsen, base-embed `G_m`, train the refiner and refine to `E_0`.
pub fn run_pipeline_seeded(g: &HeteroGraph, cfg: &PipelineConfig, seed: u64) -> Result<PipelineOutput> {
    let total = Instant::now();
    let t = Instant::now();
    let chain = if cfg.coarsen.levels == 0 {
        CoarsenChain::trivial(g.clone())
    } else {
        coarsen_stage(g, cfg, seed)?
    };
    let coarsen_seconds = t.elapsed().as_secs_f64();
    log::info!("coarsened to {:?} nodes in {coarsen_seconds:.2}s", chain.node_counts());

    let t = Instant::now();
    let base = embed_stage(chain.coarsest(), cfg, seed)?;
    let embed_seconds = t.elapsed().as_secs_f64();
    log::info!("base embedding in {embed_seconds:.2}s");

    let t = Instant::now();
    let (embedding, refiner) = refine_stage(&chain, &base.matrix, cfg, seed)?;
    let refine_seconds = t.elapsed().as_secs_f64();
    log::info!("refined in {refine_seconds:.2}s");

    Ok(PipelineOutput {
        embedding,
        chain,
        base,
        refiner,
        timings: StageTimings {
            coarsen_seconds,
            embed_seconds,
            refine_seconds,
            total_seconds: total.elapsed().as_secs_f64(),
        },
    })
}

/// Scores `emb` as saved to disk (32-bit) against the configured tasks.
pub fn evaluate_embedding(
    emb: &EmbeddingMatrix,
    labels: Option<&LabelSet>,
    cfg: &PipelineConfig,
) -> Result<Option<crate::evaluate::MetricSummary>> {
    match labels {
        Some(l) if cfg.eval.node_classification => {
            let saved = emb.to_f32_precision();
            node_classification(&saved, l, cfg.eval.folds, cfg.model.seed)
                .map(Some)
                .map_err(|e| e.in_stage("eval"))
        }
        _ => Ok(None),
    }
}

/// Runs the pipeline and evaluates it. Link prediction, when enabled,
/// reruns the whole pipeline on each residual graph.
pub fn run_and_evaluate(
    g: &HeteroGraph,
    labels: Option<&LabelSet>,
    cfg: &PipelineConfig,
) -> Result<(PipelineOutput, EvalReport)> {
    let out = run_pipeline(g, cfg)?;
    let micro_f1 = evaluate_embedding(&out.embedding, labels, cfg)?;
    let mut warnings: Vec<String> = out.chain.warnings().to_vec();
    let auroc = if cfg.eval.link_prediction {
        let lp = link_prediction(
            g,
            |train, s| Ok(run_pipeline_seeded(train, cfg, s)?.embedding.to_f32_precision()),
            cfg.eval.holdout,
            cfg.eval.runs,
            cfg.model.seed,
        )
        .map_err(|e| e.in_stage("eval"))?;
        warnings.extend(lp.warnings);
        Some(lp.auroc)
    } else {
        None
    };
    let report = EvalReport {
        dataset: cfg.data.name.clone(),
        strategy: cfg.coarsen.strategy.name().to_string(),
        level: out.chain.levels(),
        micro_f1,
        auroc,
        timings: out.timings,
        warnings,
        config: serde_json::to_value(cfg).expect("config serializes"),
    };
    Ok((out, report))
}

/// Git-style content hash: sha256 over `blob <len>\0` followed by the bytes.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

/// Record of a run: the command, its effective config and hashes of every
/// file read or written.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, cfg: &PipelineConfig) -> Self {
        Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::to_value(cfg).expect("config serializes"),
            ..Default::default()
        }
    }

    fn hash_file(path: &Path) -> Result<String> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(blob_hash(&bytes))
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), Self::hash_file(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        self.outputs.insert(path.display().to_string(), Self::hash_file(path)?);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Sets the global worker pool size. `HETMILE_THREADS` wins over
/// `requested`; 0 or unset leaves one worker per core.
pub fn configure_threads(requested: usize) -> Result<usize> {
    let n = match std::env::var("HETMILE_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("HETMILE_THREADS=`{v}` is not a number")))?,
        Err(_) => requested,
    };
    if n > 0 {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}
