//! Refinement: project embeddings from coarse to fine levels and correct
//! them with a relation-typed graph convolution trained once on the
//! coarsest graph.

mod hgcn;
mod params;
mod train;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use hgcn::{hgcn_forward, hgcn_forward_traced, AttentionTrace, NormalizedBlock, Propagation, LEAKY_SLOPE};
pub use params::{channel_layout, Activation, Channel, RefinerParams};
pub use train::{fit_refiner, loss_and_gradient, mse, refiner_loss, TrainedRefiner};

use crate::coarsen::{build_coarse_graph, level_seed, match_level, CoarsenChain, CoarsenConfig, MatchingMatrix};
use crate::embed_base::BaseEmbedder;
use crate::error::{Error, Result};
use crate::hetgraph::{EmbeddingMatrix, HeteroGraph};

/// Where the refiner's training input comes from. The target is always the
/// base embedding `E_m` of the coarsest graph.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingPair {
    /// Coarsen `G_m` once more, average `E_m` over each new supernode and
    /// project the averages back down.
    Pooled,
    /// Coarsen `G_m` once more, base-embed `G_{m+1}` from scratch and
    /// project that embedding down.
    #[default]
    ExtraLevel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub layers: usize,
    pub activation: Activation,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Skip the activation on the last layer.
    pub linear_output: bool,
    /// Standard deviation of the noise added to the identity initialization.
    pub init_scale: f64,
    pub training_pair: TrainingPair,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            layers: 4,
            activation: Activation::Elu,
            epochs: 200,
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            linear_output: true,
            init_scale: 0.01,
            training_pair: TrainingPair::ExtraLevel,
        }
    }
}

impl RefineConfig {
    /// `layers == 0` is accepted and means the identity model.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("refine learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0 && self.init_scale >= 0.0) {
            return Err(Error::Config(
                "epsilon must be positive and init_scale non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// `E_fine = M · E_coarse`: each fine row is a copy of its supernode's row.
pub fn project(m: &MatchingMatrix, coarse: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    if coarse.rows() != m.coarse_count() {
        return Err(Error::shape(
            format!("{} coarse rows", m.coarse_count()),
            format!("{} rows", coarse.rows()),
        ));
    }
    let src = coarse.as_array();
    let mut out = Array2::zeros((m.fine_count(), coarse.dim()));
    for (mut row, &s) in out.outer_iter_mut().zip(m.assignment()) {
        row.assign(&src.row(s as usize));
    }
    EmbeddingMatrix::new(out)
}

/// Mean of the fine rows in each supernode.
pub fn pool_mean(m: &MatchingMatrix, fine: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    if fine.rows() != m.fine_count() {
        return Err(Error::shape(
            format!("{} fine rows", m.fine_count()),
            format!("{} rows", fine.rows()),
        ));
    }
    let src = fine.as_array();
    let mut out = Array2::<f64>::zeros((m.coarse_count(), fine.dim()));
    let mut counts = vec![0usize; m.coarse_count()];
    for (u, &s) in m.assignment().iter().enumerate() {
        out.row_mut(s as usize).scaled_add(1.0, &src.row(u));
        counts[s as usize] += 1;
    }
    for (mut row, &c) in out.outer_iter_mut().zip(&counts) {
        row /= c as f64;
    }
    EmbeddingMatrix::new(out)
}

/// Builds the refiner's training input on `G_m` for target `e_m`.
pub fn training_input(
    g_m: &HeteroGraph,
    e_m: &EmbeddingMatrix,
    cfg: &RefineConfig,
    coarsen_cfg: &CoarsenConfig,
    embedder: Option<&dyn BaseEmbedder>,
) -> Result<EmbeddingMatrix> {
    if e_m.rows() != g_m.num_nodes() {
        return Err(Error::shape(
            format!("{} rows", g_m.num_nodes()),
            format!("{} rows", e_m.rows()),
        ));
    }
    let matching = match_level(g_m, coarsen_cfg, level_seed(coarsen_cfg.seed, usize::from(u16::MAX)))?;
    match cfg.training_pair {
        TrainingPair::Pooled => project(&matching, &pool_mean(&matching, e_m)?),
        TrainingPair::ExtraLevel => {
            let embedder =
                embedder.ok_or_else(|| Error::Config("the extra_level training pair needs a base embedder".into()))?;
            let g_next = build_coarse_graph(g_m, &matching)?;
            let e_next = embedder.embed(&g_next, e_m.dim(), cfg.seed)?.matrix;
            project(&matching, &e_next)
        }
    }
}

/// Builds the training pair on the coarsest graph and fits the refiner.
pub fn train_refiner(
    g_m: &HeteroGraph,
    e_m: &EmbeddingMatrix,
    cfg: &RefineConfig,
    coarsen_cfg: &CoarsenConfig,
    embedder: Option<&dyn BaseEmbedder>,
) -> Result<TrainedRefiner> {
    let input = training_input(g_m, e_m, cfg, coarsen_cfg, embedder)?;
    fit_refiner(g_m, &input, e_m, cfg)
}

/// Walks the chain from `G_m` down to `G_0`, projecting and refining at
/// every level. A chain without coarse levels returns `e_m` unchanged.
pub fn refine_chain(chain: &CoarsenChain, e_m: &EmbeddingMatrix, params: &RefinerParams) -> Result<EmbeddingMatrix> {
    if e_m.rows() != chain.coarsest().num_nodes() {
        return Err(Error::shape(
            format!("{} rows", chain.coarsest().num_nodes()),
            format!("{} rows", e_m.rows()),
        ));
    }
    let mut e = e_m.clone();
    for i in (0..chain.levels()).rev() {
        let projected = project(chain.matching(i), &e)?;
        e = hgcn_forward(chain.graph(i), &projected, params)?;
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hetgraph::{EdgeTypeId, GraphBuilder, TypeRegistry};
    use ndarray::array;
    use std::sync::Arc;

    fn emb(a: Array2<f64>) -> EmbeddingMatrix {
        EmbeddingMatrix::new(a).unwrap()
    }

    #[test]
    fn project_copies_rows() {
        let m = MatchingMatrix::from_assignment(vec![0, 1, 0], 2).unwrap();
        let out = project(&m, &emb(array![[1.0, 2.0], [3.0, 4.0]])).unwrap();
        assert_eq!(out.as_array(), &array![[1.0, 2.0], [3.0, 4.0], [1.0, 2.0]]);
        let id = MatchingMatrix::identity(2);
        assert_eq!(
            project(&id, &emb(array![[1.0, 2.0], [3.0, 4.0]])).unwrap().as_array(),
            &array![[1.0, 2.0], [3.0, 4.0]]
        );
        assert!(project(&m, &emb(array![[1.0, 2.0]])).is_err());
    }

    #[test]
    fn pool_then_project_averages_members() {
        let m = MatchingMatrix::from_assignment(vec![0, 1, 0], 2).unwrap();
        let pooled = pool_mean(&m, &emb(array![[1.0, 0.0], [5.0, 5.0], [3.0, 2.0]])).unwrap();
        assert_eq!(pooled.as_array(), &array![[2.0, 1.0], [5.0, 5.0]]);
    }

    fn ap_graph() -> HeteroGraph {
        let mut reg = TypeRegistry::new();
        reg.add_node_type("a").unwrap();
        reg.add_node_type("p").unwrap();
        reg.add_relation("w", "a", "p").unwrap();
        let mut b = GraphBuilder::new(Arc::new(reg), &[2, 2]);
        b.add_edge(EdgeTypeId(0), 0, 2, 1.0).unwrap();
        b.add_edge(EdgeTypeId(0), 0, 3, 3.0).unwrap();
        b.add_edge(EdgeTypeId(0), 1, 3, 1.0).unwrap();
        b.build()
    }

    #[test]
    fn trivial_chain_returns_input() {
        let g = ap_graph();
        let chain = CoarsenChain::trivial(g.clone());
        let p = RefinerParams::identity(g.registry(), 2, 1, Activation::Elu, true);
        let e = emb(array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, 8.0]]);
        assert_eq!(refine_chain(&chain, &e, &p).unwrap(), e);
    }

    #[test]
    fn one_level_identity_chain_by_hand() {
        // identity matching, identity weights, zero attention: each node
        // averages its own row with the weighted mean of its neighbors
        let g = ap_graph();
        let chain = CoarsenChain::from_parts(vec![g.clone(), g.clone()], vec![MatchingMatrix::identity(4)]).unwrap();
        let p = RefinerParams::identity(g.registry(), 2, 1, Activation::Elu, true);
        let e = emb(array![[1.0, 0.0], [0.0, 1.0], [2.0, 2.0], [4.0, 0.0]]);
        let out = refine_chain(&chain, &e, &p).unwrap();
        let expect = array![
            // a0: (self + (1/4 p2 + 3/4 p3)) / 2
            [(1.0 + 0.25 * 2.0 + 0.75 * 4.0) / 2.0, (0.0 + 0.25 * 2.0) / 2.0],
            [(0.0 + 4.0) / 2.0, (1.0 + 0.0) / 2.0],
            [(2.0 + 1.0) / 2.0, (2.0 + 0.0) / 2.0],
            [(4.0 + 0.75 * 1.0) / 2.0, (0.0 + 0.25 * 1.0) / 2.0],
        ];
        for (a, b) in out.as_array().iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_layers_loss_is_plain_mse() {
        let g = ap_graph();
        let x = emb(array![[1.0, 0.0], [0.0, 1.0], [2.0, 2.0], [4.0, 0.0]]);
        let y = emb(array![[0.0, 0.0], [1.0, 1.0], [2.0, 0.0], [1.0, 1.0]]);
        let cfg = RefineConfig {
            layers: 0,
            epochs: 5,
            ..RefineConfig::default()
        };
        let t = fit_refiner(&g, &x, &y, &cfg).unwrap();
        let direct = (1.0 + 1.0 + 4.0 + 9.0 + 1.0) / 4.0;
        assert!((t.final_loss() - direct).abs() < 1e-12);
        assert!(t.losses.iter().all(|l| (l - direct).abs() < 1e-12));
    }

    #[test]
    fn training_reduces_loss() {
        let g = ap_graph();
        let x = emb(array![[1.0, 0.0], [0.0, 1.0], [2.0, 2.0], [4.0, 0.0]]);
        let y = emb(array![[0.5, 0.0], [1.0, 1.0], [2.0, 0.5], [1.0, 1.0]]);
        let cfg = RefineConfig {
            layers: 2,
            ..RefineConfig::default()
        };
        let t = fit_refiner(&g, &x, &y, &cfg).unwrap();
        assert_eq!(t.losses.len(), 201);
        assert!(t.final_loss() < t.losses[0]);
    }

    #[test]
    fn divergence_is_a_numeric_error() {
        let g = ap_graph();
        let x = emb(array![[1e200, 0.0], [0.0, 1.0], [2.0, 2.0], [4.0, 0.0]]);
        let y = emb(array![[0.0, 0.0], [1.0, 1.0], [2.0, 0.0], [1.0, 1.0]]);
        let err = fit_refiner(&g, &x, &y, &RefineConfig::default()).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }
}
