use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Zip};

use super::hgcn::{backward, forward, forward_plain, Propagation, Workspace};
use super::params::RefinerParams;
use super::RefineConfig;
use crate::error::{Error, Result};
use crate::hetgraph::{EmbeddingMatrix, HeteroGraph};

/// Mean over nodes of the squared Euclidean distance between rows.
pub fn mse(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let n = a.nrows().max(1) as f64;
    (a - b).mapv(|x| x * x).sum() / n
}

/// Refiner loss and its gradient with respect to every parameter.
pub fn loss_and_gradient(
    g: &HeteroGraph,
    input: &EmbeddingMatrix,
    target: &EmbeddingMatrix,
    params: &RefinerParams,
) -> Result<(f64, Vec<f64>)> {
    let prop = Propagation::new(g, params)?;
    let mut ws = Workspace::new(&prop, params, true);
    Ok(loss_grad(&prop, params, input.as_array(), target.as_array(), &mut ws))
}

/// Refiner loss alone.
pub fn refiner_loss(
    g: &HeteroGraph,
    input: &EmbeddingMatrix,
    target: &EmbeddingMatrix,
    params: &RefinerParams,
) -> Result<f64> {
    let prop = Propagation::new(g, params)?;
    Ok(mse(&forward_plain(&prop, params, input.as_array()), target.as_array()))
}

fn loss_grad(
    prop: &Propagation,
    params: &RefinerParams,
    x: &Array2<f64>,
    y: &Array2<f64>,
    ws: &mut Workspace,
) -> (f64, Vec<f64>) {
    forward(prop, params, x, ws);
    let n = x.nrows().max(1) as f64;
    let mut loss = 0.0;
    Zip::from(&mut ws.d_out).and(&ws.out).and(y).for_each(|g, &o, &t| {
        let e = o - t;
        loss += e * e;
        *g = e * (2.0 / n);
    });
    let mut grad = vec![0.0; params.num_params()];
    backward(prop, params, ws, &mut grad);
    (loss / n, grad)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, cfg: &RefineConfig, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step);
        let bc2 = 1.0 - cfg.beta2.powi(self.step);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedRefiner {
    pub params: RefinerParams,
    /// Loss before each epoch's update, then the loss after the last one;
    /// `epochs + 1` entries.
    pub losses: Vec<f64>,
}

impl TrainedRefiner {
    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("at least one loss value")
    }

    pub fn write_loss_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        let res: std::io::Result<()> = (|| {
            writeln!(w, "epoch,loss")?;
            for (e, l) in self.losses.iter().enumerate() {
                writeln!(w, "{e},{l}")?;
            }
            w.flush()
        })();
        res.map_err(|e| Error::io(path, e))
    }
}

/// Full-batch Adam on `mse(hgcn_forward(g, input), target)`.
pub fn fit_refiner(
    g: &HeteroGraph,
    input: &EmbeddingMatrix,
    target: &EmbeddingMatrix,
    cfg: &RefineConfig,
) -> Result<TrainedRefiner> {
    cfg.validate()?;
    if input.rows() != g.num_nodes() || target.rows() != g.num_nodes() || input.dim() != target.dim() {
        return Err(Error::shape(
            format!("{} x {} input and target", g.num_nodes(), target.dim()),
            format!(
                "{} x {} input, {} x {} target",
                input.rows(),
                input.dim(),
                target.rows(),
                target.dim()
            ),
        ));
    }
    let mut params = RefinerParams::perturbed_identity(
        g.registry(),
        input.dim(),
        cfg.layers,
        cfg.activation,
        cfg.linear_output,
        cfg.init_scale,
        cfg.seed,
    );
    let prop = Propagation::new(g, &params)?;
    let (x, y) = (input.as_array(), target.as_array());
    let mut ws = Workspace::new(&prop, &params, true);
    let mut adam = Adam::new(params.num_params());
    let mut losses = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..cfg.epochs {
        let (loss, grad) = loss_grad(&prop, &params, x, y, &mut ws);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "refiner loss diverged at epoch {epoch} (loss {loss}, previous {:?}); try a lower learning rate",
                losses.last()
            )));
        }
        losses.push(loss);
        adam.update(cfg, params.as_mut_slice(), &grad);
    }
    let last = mse(&forward_plain(&prop, &params, x), y);
    if !last.is_finite() || !params.is_finite() {
        return Err(Error::Numeric(format!(
            "refiner loss diverged after the final epoch (loss {last})"
        )));
    }
    losses.push(last);
    log::debug!("refiner loss {:.6} -> {:.6}", losses[0], last);
    Ok(TrainedRefiner { params, losses })
}
