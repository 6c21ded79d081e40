use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use hetmile::coarsen::{CoarsenChain, LshMode, Strategy};
use hetmile::embed_base::BaseEmbedding;
use hetmile::evaluate::{benchmark, link_prediction, write_bench_csv, BenchGrid, EvalReport, StageTimings};
use hetmile::hetgraph::{EmbeddingFormat, EmbeddingMatrix, HeteroGraph};
use hetmile::pipeline::{
    coarsen_stage, configure_threads, embed_stage, evaluate_embedding, refine_stage, run_and_evaluate,
    run_pipeline_seeded, Manifest, PipelineConfig,
};
use hetmile::refine::{Activation, TrainingPair};
use hetmile::synth::{write_dataset, SynthConfig};
use hetmile::{Error, Result};

#[derive(Parser)]
#[command(name = "hetmile", version, about = "Multi-level heterogeneous graph embedding")]
struct Cli {
    /// Worker threads for walks and signatures (0 = all cores). HETMILE_THREADS overrides.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Coarsen, embed, refine and evaluate in one go.
    Pipeline(RunArgs),
    /// Build the coarsening chain into <output-dir>/chain.
    Coarsen(RunArgs),
    /// Base-embed the coarsest graph of a saved chain.
    Embed(RunArgs),
    /// Train the refiner and refine a saved base embedding down to G_0.
    Refine(RunArgs),
    /// Score saved embeddings.
    Eval(EvalArgs),
    /// Run a strategy x level grid.
    Bench(BenchArgs),
    /// Write a synthetic planted-community dataset.
    Synth(SynthArgs),
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// TOML config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    edges: Option<PathBuf>,
    #[arg(long)]
    nodes: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Repeatable, e.g. --meta-path author-paper-author
    #[arg(long = "meta-path")]
    meta_paths: Vec<String>,
    #[arg(long)]
    output_format: Option<EmbeddingFormat>,

    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    lsh_k: Option<usize>,
    #[arg(long, value_parser = parse_enum::<LshMode>)]
    lsh_mode: Option<LshMode>,
    #[arg(long)]
    lsh_bands: Option<usize>,
    #[arg(long)]
    lsh_rows: Option<usize>,
    #[arg(long)]
    max_group: Option<usize>,

    #[arg(long)]
    walks_per_node: Option<usize>,
    #[arg(long)]
    walk_length: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    walk_epochs: Option<usize>,
    #[arg(long)]
    walk_lr: Option<f64>,
    #[arg(long)]
    type_aware_negatives: Option<bool>,
    /// Skip-gram training threads; 1 is reproducible.
    #[arg(long)]
    train_threads: Option<usize>,

    #[arg(long)]
    layers: Option<usize>,
    #[arg(long, value_parser = parse_enum::<Activation>)]
    activation: Option<Activation>,
    #[arg(long)]
    refine_epochs: Option<usize>,
    #[arg(long)]
    refine_lr: Option<f64>,
    #[arg(long, value_parser = parse_enum::<TrainingPair>)]
    training_pair: Option<TrainingPair>,

    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    link_prediction: Option<bool>,
    #[arg(long)]
    holdout: Option<f64>,
    #[arg(long)]
    runs: Option<usize>,
}

macro_rules! set {
    ($($flag:expr => $field:expr),* $(,)?) => {
        $(if let Some(v) = $flag.clone() { $field = v; })*
    };
}

impl RunArgs {
    /// Defaults, then the config file, then flags.
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        set! {
            self.dataset => c.data.name,
            self.output_dir => c.output_dir,
            self.d => c.model.d,
            self.seed => c.model.seed,
            self.output_format => c.model.output_format,
            self.strategy => c.coarsen.strategy,
            self.levels => c.coarsen.levels,
            self.lsh_k => c.coarsen.lsh_k,
            self.lsh_mode => c.coarsen.lsh_mode,
            self.max_group => c.coarsen.max_group,
            self.walks_per_node => c.walk.walks_per_node,
            self.walk_length => c.walk.walk_length,
            self.window => c.walk.window,
            self.negatives => c.walk.negatives,
            self.walk_epochs => c.walk.epochs,
            self.walk_lr => c.walk.initial_lr,
            self.type_aware_negatives => c.walk.type_aware_negatives,
            self.train_threads => c.walk.threads,
            self.layers => c.refine.layers,
            self.activation => c.refine.activation,
            self.refine_epochs => c.refine.epochs,
            self.refine_lr => c.refine.learning_rate,
            self.training_pair => c.refine.training_pair,
            self.folds => c.eval.folds,
            self.link_prediction => c.eval.link_prediction,
            self.holdout => c.eval.holdout,
            self.runs => c.eval.runs,
        }
        for (flag, field) in [
            (&self.schema, &mut c.data.schema),
            (&self.edges, &mut c.data.edges),
            (&self.nodes, &mut c.data.nodes),
            (&self.labels, &mut c.data.labels),
        ] {
            if flag.is_some() {
                field.clone_from(flag);
            }
        }
        if self.lsh_bands.is_some() {
            c.coarsen.lsh_bands = self.lsh_bands;
        }
        if self.lsh_rows.is_some() {
            c.coarsen.lsh_rows = self.lsh_rows;
        }
        if !self.meta_paths.is_empty() {
            c.model.meta_paths.clone_from(&self.meta_paths);
        }
        if c.data.name.is_empty() {
            c.data.name = c
                .data
                .edges
                .as_deref()
                .and_then(Path::file_stem)
                .map_or_else(|| "graph".to_string(), |s| s.to_string_lossy().into_owned());
        }
        c.validate(true)?;
        Ok(c)
    }
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Embedding file to score; defaults to the pipeline output in <output-dir>.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_delimiter = ',', default_value = "jacc_max,lsh")]
    strategies: Vec<Strategy>,
    #[arg(long = "grid-levels", value_delimiter = ',', default_value = "0,1,2,3")]
    grid_levels: Vec<usize>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    types: usize,
    #[arg(long, default_value_t = 1000)]
    n_per_type: usize,
    #[arg(long, default_value_t = 2)]
    communities: usize,
    #[arg(long, default_value_t = 0.05)]
    p_in: f64,
    #[arg(long, default_value_t = 0.001)]
    p_out: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output_dir: PathBuf,
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::Io {
        path: p.to_path_buf(),
        source: e,
    })
}

/// Graph plus manifest entries for the configured inputs.
fn load_inputs(cfg: &PipelineConfig, manifest: &mut Manifest) -> Result<HeteroGraph> {
    let d = &cfg.data;
    for p in [&d.schema, &d.edges, &d.nodes, &d.labels].into_iter().flatten() {
        manifest.add_input(p)?;
    }
    cfg.load_graph().map_err(|e| e.in_stage("load"))
}

fn save_embedding(cfg: &PipelineConfig, g: &HeteroGraph, e: &EmbeddingMatrix, path: &Path) -> Result<()> {
    let ids = g.original_ids().map(|v| v.as_slice());
    e.save(path, cfg.model.output_format, ids)
}

fn write_refiner_outputs(
    cfg: &PipelineConfig,
    g: &HeteroGraph,
    e0: &EmbeddingMatrix,
    refiner: Option<&hetmile::refine::TrainedRefiner>,
    manifest: &mut Manifest,
) -> Result<()> {
    let out = &cfg.output_dir;
    let emb_path = out.join(cfg.embedding_file());
    save_embedding(cfg, g, e0, &emb_path)?;
    manifest.add_output(&emb_path)?;
    if let Some(r) = refiner {
        let p = out.join("params.hmrp");
        r.params.save(&p)?;
        manifest.add_output(&p)?;
        let p = out.join("loss.csv");
        r.write_loss_csv(&p)?;
        manifest.add_output(&p)?;
    }
    Ok(())
}

fn finish(manifest: &Manifest, cfg: &PipelineConfig, command: &str) -> Result<()> {
    let p = cfg.output_dir.join(format!("{command}.manifest.json"));
    manifest.save(&p)?;
    println!("wrote {}", p.display());
    Ok(())
}

fn cmd_pipeline(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let mut manifest = Manifest::new("pipeline", &cfg);
    create_dir(&cfg.output_dir)?;
    let g = load_inputs(&cfg, &mut manifest)?;
    let labels = cfg.load_labels(&g)?;
    let (out, report) = run_and_evaluate(&g, labels.as_ref(), &cfg)?;
    write_refiner_outputs(&cfg, &g, &out.embedding, out.refiner.as_ref(), &mut manifest)?;
    let p = cfg.output_dir.join("report.json");
    report.save_json(&p)?;
    manifest.add_output(&p)?;
    println!("{}", serde_json::to_string(&report).expect("report serializes"));
    finish(&manifest, &cfg, "pipeline")
}

fn cmd_coarsen(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let mut manifest = Manifest::new("coarsen", &cfg);
    let g = load_inputs(&cfg, &mut manifest)?;
    let chain = coarsen_stage(&g, &cfg, cfg.model.seed)?;
    let dir = cfg.output_dir.join("chain");
    chain.save(&dir)?;
    for i in 0..=chain.levels() {
        manifest.add_output(&dir.join(format!("graph_{i}.hmgr")))?;
    }
    for i in 0..chain.levels() {
        manifest.add_output(&dir.join(format!("match_{i}.hmmm")))?;
    }
    println!("node counts per level: {:?}", chain.node_counts());
    for w in chain.warnings() {
        eprintln!("warning: {w}");
    }
    finish(&manifest, &cfg, "coarsen")
}

fn load_chain(cfg: &PipelineConfig, manifest: &mut Manifest) -> Result<CoarsenChain> {
    let dir = cfg.output_dir.join("chain");
    let chain = CoarsenChain::load(&dir)?;
    for i in 0..=chain.levels() {
        manifest.add_input(&dir.join(format!("graph_{i}.hmgr")))?;
    }
    Ok(chain)
}

fn cmd_embed(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let mut manifest = Manifest::new("embed", &cfg);
    let chain = load_chain(&cfg, &mut manifest)?;
    let base: BaseEmbedding = embed_stage(chain.coarsest(), &cfg, cfg.model.seed)?;
    let p = cfg.output_dir.join("base.bin");
    base.matrix.save(&p, EmbeddingFormat::Binary, None)?;
    manifest.add_output(&p)?;
    let meta = serde_json::json!({ "tokens": base.tokens, "unvisited": base.unvisited });
    let mp = cfg.output_dir.join("base.json");
    std::fs::write(&mp, meta.to_string()).map_err(|e| Error::Io {
        path: mp.clone(),
        source: e,
    })?;
    manifest.add_output(&mp)?;
    finish(&manifest, &cfg, "embed")
}

fn cmd_refine(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let mut manifest = Manifest::new("refine", &cfg);
    let chain = load_chain(&cfg, &mut manifest)?;
    let bp = cfg.output_dir.join("base.bin");
    let base = EmbeddingMatrix::load_binary(&bp, Some(cfg.model.d))?;
    manifest.add_input(&bp)?;
    let (e0, refiner) = refine_stage(&chain, &base, &cfg, cfg.model.seed)?;
    write_refiner_outputs(&cfg, chain.graph(0), &e0, refiner.as_ref(), &mut manifest)?;
    finish(&manifest, &cfg, "refine")
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let cfg = args.run.resolve()?;
    let mut manifest = Manifest::new("eval", &cfg);
    let g = load_inputs(&cfg, &mut manifest)?;
    let labels = cfg.load_labels(&g)?;
    let path = args
        .embeddings
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join(cfg.embedding_file()));
    let (ids, emb) = EmbeddingMatrix::load_any(&path, None)?;
    manifest.add_input(&path)?;
    if emb.rows() != g.num_nodes() {
        return Err(Error::Shape {
            expected: format!("{} rows", g.num_nodes()),
            found: format!("{} rows", emb.rows()),
        });
    }
    if let (Some(ids), Some(orig)) = (ids, g.original_ids()) {
        if ids.as_slice() != orig.as_slice() {
            return Err(Error::InvalidInput("embedding rows are not in graph node order".into()));
        }
    }
    let micro_f1 = evaluate_embedding(&emb, labels.as_ref(), &cfg)?;
    let auroc = if cfg.eval.link_prediction {
        let lp = link_prediction(
            &g,
            |train, s| Ok(run_pipeline_seeded(train, &cfg, s)?.embedding.to_f32_precision()),
            cfg.eval.holdout,
            cfg.eval.runs,
            cfg.model.seed,
        )?;
        Some(lp.auroc)
    } else {
        None
    };
    let report = EvalReport {
        dataset: cfg.data.name.clone(),
        strategy: cfg.coarsen.strategy.name().to_string(),
        level: cfg.coarsen.levels,
        micro_f1,
        auroc,
        timings: StageTimings::default(),
        warnings: Vec::new(),
        config: serde_json::to_value(&cfg).expect("config serializes"),
    };
    create_dir(&cfg.output_dir)?;
    let p = cfg.output_dir.join("eval_report.json");
    report.save_json(&p)?;
    manifest.add_output(&p)?;
    println!("{}", serde_json::to_string(&report).expect("report serializes"));
    finish(&manifest, &cfg, "eval")
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let cfg = args.run.resolve()?;
    let mut manifest = Manifest::new("bench", &cfg);
    create_dir(&cfg.output_dir)?;
    let g = load_inputs(&cfg, &mut manifest)?;
    let labels = cfg.load_labels(&g)?;
    let grid = BenchGrid {
        strategies: args.strategies.clone(),
        levels: args.grid_levels.clone(),
    };
    let reports = benchmark(&g, labels.as_ref(), &cfg, &grid)?;
    let csv = cfg.output_dir.join("bench.csv");
    write_bench_csv(&reports, &csv)?;
    manifest.add_output(&csv)?;
    let json = cfg.output_dir.join("bench.json");
    std::fs::write(
        &json,
        serde_json::to_string_pretty(&reports).expect("reports serialize"),
    )
    .map_err(|e| Error::Io {
        path: json.clone(),
        source: e,
    })?;
    manifest.add_output(&json)?;
    println!("{} cells written to {}", reports.len(), csv.display());
    finish(&manifest, &cfg, "bench")
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let sc = SynthConfig {
        types: args.types,
        n_per_type: args.n_per_type,
        communities: args.communities,
        p_in: args.p_in,
        p_out: args.p_out,
        seed: args.seed,
    };
    let files = write_dataset(&sc, &args.output_dir)?;
    let cfg = PipelineConfig {
        output_dir: args.output_dir.clone(),
        ..PipelineConfig::default()
    };
    let mut manifest = Manifest::new("synth", &cfg);
    manifest.config = serde_json::to_value(&sc).expect("config serializes");
    for p in [&files.schema, &files.nodes, &files.edges, &files.labels] {
        manifest.add_output(p)?;
    }
    finish(&manifest, &cfg, "synth")
}

fn run(cli: &Cli) -> Result<()> {
    let threads = configure_threads(cli.threads.unwrap_or(0))?;
    log::debug!("{threads} worker threads");
    match &cli.command {
        Command::Pipeline(a) => cmd_pipeline(a),
        Command::Coarsen(a) => cmd_coarsen(a),
        Command::Embed(a) => cmd_embed(a),
        Command::Refine(a) => cmd_refine(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
