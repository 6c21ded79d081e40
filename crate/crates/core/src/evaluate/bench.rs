use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvalReport, LabelSet, CSV_HEADER};
use crate::coarsen::Strategy;
use crate::error::{Error, Result};
use crate::hetgraph::HeteroGraph;
use crate::pipeline::{run_and_evaluate, PipelineConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchGrid {
    pub strategies: Vec<Strategy>,
    pub levels: Vec<usize>,
}

impl Default for BenchGrid {
    fn default() -> Self {
        BenchGrid {
            strategies: vec![Strategy::JaccMax, Strategy::Lsh],
            levels: vec![0, 1, 2, 3],
        }
    }
}

/// One pipeline run and evaluation per (strategy, level) cell, run one
/// after another so stage timings do not compete for cores.
pub fn benchmark(
    g: &HeteroGraph,
    labels: Option<&LabelSet>,
    base: &PipelineConfig,
    grid: &BenchGrid,
) -> Result<Vec<EvalReport>> {
    let mut out = Vec::with_capacity(grid.strategies.len() * grid.levels.len());
    for &strategy in &grid.strategies {
        for &level in &grid.levels {
            let mut cfg = base.clone();
            cfg.coarsen.strategy = strategy;
            cfg.coarsen.levels = level;
            log::info!("bench cell {strategy} m={level}");
            let (_, report) = run_and_evaluate(g, labels, &cfg)?;
            out.push(report);
        }
    }
    Ok(out)
}

pub fn write_bench_csv(reports: &[EvalReport], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    let res: std::io::Result<()> = (|| {
        writeln!(w, "{CSV_HEADER}")?;
        for r in reports {
            r.csv_row(&mut w)?;
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}
