use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;

use super::walks::WalkCorpus;
use super::WalkConfig;
use crate::error::{Error, Result};
use crate::hetgraph::{EmbeddingMatrix, HeteroGraph, NodeId};

const MIN_LR_FRACTION: f64 = 1e-4;

pub fn sigmoid<F: Float>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// One (input, output) SGNS term. Accumulates the input-side step into
/// `neu1e` and applies the output-side step in place; both use the values
/// from before the update. Returns the gradient scale `label - sigma(f)`.
pub fn sgns_target<F: Float>(input: &[F], output: &mut [F], neu1e: &mut [F], label: F, lr: F) -> F {
    let f = input
        .iter()
        .zip(output.iter())
        .fold(F::zero(), |acc, (&a, &b)| acc + a * b);
    let g = (label - sigmoid(f)) * lr;
    for ((e, o), &i) in neu1e.iter_mut().zip(output.iter_mut()).zip(input) {
        *e = *e + g * *o;
        *o = *o + g * i;
    }
    g
}

/// One SGNS update of `input` against rows of the `output` table:
/// `targets` lists `(row, label)` with label 1 for the true context.
pub fn sgns_update<F: Float>(input: &mut [F], output: &mut [F], targets: &[(usize, F)], lr: F, neu1e: &mut [F]) {
    let d = input.len();
    neu1e.iter_mut().for_each(|e| *e = F::zero());
    for &(row, label) in targets {
        sgns_target(input, &mut output[row * d..(row + 1) * d], neu1e, label, lr);
    }
    for (x, &e) in input.iter_mut().zip(neu1e.iter()) {
        *x = *x + e;
    }
}

/// Negative log-likelihood of one update's targets.
pub fn sgns_loss<F: Float>(input: &[F], output: &[F], targets: &[(usize, F)]) -> F {
    let d = input.len();
    targets.iter().fold(F::zero(), |acc, &(row, label)| {
        let o = &output[row * d..(row + 1) * d];
        let f = input.iter().zip(o).fold(F::zero(), |s, (&a, &b)| s + a * b);
        let p = if label > F::zero() { sigmoid(f) } else { sigmoid(-f) };
        acc - p.ln()
    })
}

/// Trained skip-gram vectors plus bookkeeping.
#[derive(Clone, Debug)]
pub struct BaseEmbedding {
    pub matrix: EmbeddingMatrix,
    /// Nodes absent from every walk; their rows keep the seeded init.
    pub unvisited: Vec<NodeId>,
    pub tokens: usize,
}

/// Noise distributions over node ids, one per node type or one global.
struct NegativeTable {
    // (ids, alias) per group
    groups: Vec<Option<(Vec<NodeId>, WeightedAliasIndex<f64>)>>,
    group_of: Vec<usize>,
}

impl NegativeTable {
    fn new(g: &HeteroGraph, counts: &[u64], type_aware: bool) -> Result<Self> {
        let n = g.num_nodes();
        let ngroups = if type_aware { g.registry().num_node_types() } else { 1 };
        let group_of: Vec<usize> = if type_aware {
            g.node_types().iter().map(|t| t.index()).collect()
        } else {
            vec![0; n]
        };
        let mut members: Vec<(Vec<NodeId>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); ngroups];
        for u in 0..n {
            if counts[u] > 0 {
                let (ids, w) = &mut members[group_of[u]];
                ids.push(u as NodeId);
                w.push((counts[u] as f64).powf(0.75));
            }
        }
        let groups = members
            .into_iter()
            .map(|(ids, w)| {
                if ids.is_empty() {
                    Ok(None)
                } else {
                    WeightedAliasIndex::new(w)
                        .map(|a| Some((ids, a)))
                        .map_err(|e| Error::Numeric(format!("negative sampling table: {e}")))
                }
            })
            .collect::<Result<_>>()?;
        Ok(NegativeTable { groups, group_of })
    }

    fn sample<R: Rng>(&self, rng: &mut R, context: NodeId) -> NodeId {
        let (ids, alias) = self.groups[self.group_of[context as usize]]
            .as_ref()
            .expect("context node occurs in the corpus");
        ids[alias.sample(rng)]
    }
}

fn init_input(n: usize, d: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * d).map(|_| (rng.random::<f32>() - 0.5) / d as f32).collect()
}

fn learning_rate(cfg: &WalkConfig, done: usize, total: usize) -> f32 {
    let frac = 1.0 - done as f64 / total as f64;
    (cfg.initial_lr * frac.max(MIN_LR_FRACTION)) as f32
}

/// Skip-gram with negative sampling over a walk corpus; returns the
/// input-side vectors.
///
/// With `cfg.threads == 1` the result is bit-reproducible for a seed.
/// More threads update the shared tables without locks, so races between
/// threads make the output nondeterministic.
pub fn train_skipgram(corpus: &WalkCorpus, g: &HeteroGraph, d: usize, cfg: &WalkConfig) -> Result<BaseEmbedding> {
    if d == 0 {
        return Err(Error::Config("embedding dimension must be at least 1".into()));
    }
    if corpus.num_tokens() == 0 {
        return Err(Error::InvalidInput("walk corpus is empty".into()));
    }
    let n = g.num_nodes();
    let mut counts = vec![0u64; n];
    for &u in corpus.tokens() {
        let slot = counts
            .get_mut(u as usize)
            .ok_or_else(|| Error::InvalidInput(format!("walk visits node {u} outside the graph")))?;
        *slot += 1;
    }
    let negatives = NegativeTable::new(g, &counts, cfg.type_aware_negatives)?;
    let mut input = init_input(n, d, cfg.seed);
    let mut output = vec![0f32; n * d];

    if cfg.threads <= 1 {
        train_serial(corpus, &negatives, d, cfg, &mut input, &mut output);
    } else {
        train_hogwild(corpus, &negatives, d, cfg, &mut input, &mut output);
    }

    if input.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("skip-gram training diverged".into()));
    }
    let unvisited = (0..n as NodeId).filter(|&u| counts[u as usize] == 0).collect();
    let data = ndarray::Array2::from_shape_vec((n, d), input.into_iter().map(f64::from).collect())
        .expect("shape matches buffer");
    Ok(BaseEmbedding {
        matrix: EmbeddingMatrix::new(data)?,
        unvisited,
        tokens: corpus.num_tokens(),
    })
}

/// Visits every (center, context) pair of one walk.
fn for_each_pair(walk: &[NodeId], window: usize, mut f: impl FnMut(NodeId, NodeId)) {
    for (i, &center) in walk.iter().enumerate() {
        let lo = i.saturating_sub(window);
        let hi = (i + window + 1).min(walk.len());
        for (j, &context) in walk.iter().enumerate().take(hi).skip(lo) {
            if j != i {
                f(center, context);
            }
        }
    }
}

fn fill_targets<R: Rng>(
    rng: &mut R,
    negatives: &NegativeTable,
    context: NodeId,
    k: usize,
    out: &mut Vec<(usize, f32)>,
) {
    out.clear();
    out.push((context as usize, 1.0));
    for _ in 0..k {
        let neg = negatives.sample(rng, context);
        if neg != context {
            out.push((neg as usize, 0.0));
        }
    }
}

fn train_serial(
    corpus: &WalkCorpus,
    negatives: &NegativeTable,
    d: usize,
    cfg: &WalkConfig,
    input: &mut [f32],
    output: &mut [f32],
) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_5EED);
    let total = cfg.epochs * corpus.num_tokens();
    let mut done = 0usize;
    let mut neu1e = vec![0f32; d];
    let mut targets = Vec::with_capacity(cfg.negatives + 1);
    for _ in 0..cfg.epochs {
        for walk in corpus.iter() {
            let lr = learning_rate(cfg, done, total);
            for_each_pair(walk, cfg.window, |center, context| {
                fill_targets(&mut rng, negatives, context, cfg.negatives, &mut targets);
                let c = center as usize;
                sgns_update(&mut input[c * d..(c + 1) * d], output, &targets, lr, &mut neu1e);
            });
            done += walk.len();
        }
    }
}

fn load_row(table: &[AtomicU32], row: usize, d: usize, out: &mut [f32]) {
    for (o, a) in out.iter_mut().zip(&table[row * d..(row + 1) * d]) {
        *o = f32::from_bits(a.load(Ordering::Relaxed));
    }
}

fn store_row(table: &[AtomicU32], row: usize, d: usize, vals: &[f32]) {
    for (v, a) in vals.iter().zip(&table[row * d..(row + 1) * d]) {
        a.store(v.to_bits(), Ordering::Relaxed);
    }
}

fn train_hogwild(
    corpus: &WalkCorpus,
    negatives: &NegativeTable,
    d: usize,
    cfg: &WalkConfig,
    input: &mut [f32],
    output: &mut [f32],
) {
    let to_atomic = |v: &[f32]| v.iter().map(|x| AtomicU32::new(x.to_bits())).collect::<Vec<_>>();
    let shared_in = to_atomic(input);
    let shared_out = to_atomic(output);
    let total = cfg.epochs * corpus.num_tokens();
    let done = AtomicUsize::new(0);
    let threads = cfg.threads.min(corpus.len().max(1));
    let chunk = corpus.len().div_ceil(threads);
    std::thread::scope(|s| {
        for t in 0..threads {
            let (shared_in, shared_out, done) = (&shared_in, &shared_out, &done);
            s.spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_5EED ^ ((t as u64 + 1) << 32));
                let mut center_row = vec![0f32; d];
                let mut out_row = vec![0f32; d];
                let mut neu1e = vec![0f32; d];
                let mut targets = Vec::with_capacity(cfg.negatives + 1);
                let range = (t * chunk)..((t + 1) * chunk).min(corpus.len());
                for _ in 0..cfg.epochs {
                    for w in range.clone() {
                        let walk = corpus.walk(w);
                        let lr = learning_rate(cfg, done.load(Ordering::Relaxed), total);
                        for_each_pair(walk, cfg.window, |center, context| {
                            fill_targets(&mut rng, negatives, context, cfg.negatives, &mut targets);
                            let c = center as usize;
                            load_row(shared_in, c, d, &mut center_row);
                            neu1e.iter_mut().for_each(|e| *e = 0.0);
                            for &(row, label) in &targets {
                                load_row(shared_out, row, d, &mut out_row);
                                sgns_target(&center_row, &mut out_row, &mut neu1e, label, lr);
                                store_row(shared_out, row, d, &out_row);
                            }
                            for (x, e) in center_row.iter_mut().zip(&neu1e) {
                                *x += e;
                            }
                            store_row(shared_in, c, d, &center_row);
                        });
                        done.fetch_add(walk.len(), Ordering::Relaxed);
                    }
                }
            });
        }
    });
    for (x, a) in input.iter_mut().zip(&shared_in) {
        *x = f32::from_bits(a.load(Ordering::Relaxed));
    }
    for (x, a) in output.iter_mut().zip(&shared_out) {
        *x = f32::from_bits(a.load(Ordering::Relaxed));
    }
}
