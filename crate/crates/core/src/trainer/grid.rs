use serde::{Deserialize, Serialize};

use crate::calibrators::{fit_calibrator, CalibratorConfig};
use crate::dataset::Dataset;
use crate::error::{CalibError, Result};
use crate::exec::Execution;
use crate::trainer::SplitPlan;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub weight_decay: f64,
    pub initial_t0: f64,
}

/// Weight decay in {0, 1e-3, 5e-3, 1e-2, 5e-2, 1e-1, 2e-1, 3e-1} crossed with
/// initial temperature in {1, 1.5}, weight decay outermost.
pub fn default_grid() -> Vec<GridCell> {
    const DECAY: [f64; 8] = [0.0, 1e-3, 5e-3, 1e-2, 5e-2, 1e-1, 2e-1, 3e-1];
    DECAY
        .iter()
        .flat_map(|&weight_decay| {
            [1.0, 1.5].into_iter().map(move |initial_t0| GridCell { weight_decay, initial_t0 })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: GridCell,
    /// Mean best monitor NLL over all runs; `None` if any run diverged.
    pub mean_monitor: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub cells: Vec<CellResult>,
    /// Index into `cells` of the selected configuration.
    pub best: usize,
}

impl GridReport {
    pub fn best_cell(&self) -> GridCell {
        self.cells[self.best].cell
    }
}

/// Fits `base` with every cell's overrides on every run of `plan` and selects
/// the cell with the lowest mean monitor NLL (first cell on ties). Runs are
/// averaged in plan order, so the result does not depend on `exec`.
pub fn grid_search(
    dataset: &Dataset,
    base: &CalibratorConfig,
    cells: &[GridCell],
    plan: &SplitPlan,
    exec: Execution,
) -> Result<GridReport> {
    if cells.is_empty() {
        return Err(CalibError::InvalidConfig("empty hyperparameter grid".into()));
    }
    let runs: Vec<_> = plan.runs().map(|(_, _, m)| m.clone()).collect();
    if runs.is_empty() {
        return Err(CalibError::InvalidConfig("split plan has no runs".into()));
    }
    let datasets = runs.iter().map(|m| dataset.with_mask(m.clone())).collect::<Result<Vec<_>>>()?;
    let jobs = cells.len() * datasets.len();
    let fits = exec.map_range(jobs, |j| {
        let cell = cells[j / datasets.len()];
        let cfg = CalibratorConfig {
            weight_decay: cell.weight_decay,
            initial_t0: cell.initial_t0,
            ..*base
        };
        match fit_calibrator(&cfg, &datasets[j % datasets.len()]) {
            Ok(c) => Ok(c.fit.map(|f| f.best_monitor).filter(|m| m.is_finite())),
            Err(CalibError::FitDiverged { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    });
    let fits = fits.into_iter().collect::<Result<Vec<_>>>()?;

    let results: Vec<CellResult> = cells
        .iter()
        .zip(fits.chunks(datasets.len()))
        .map(|(&cell, chunk)| {
            let mean_monitor = chunk
                .iter()
                .try_fold(0.0, |acc, m| m.map(|m| acc + m))
                .map(|s| s / chunk.len() as f64);
            CellResult { cell, mean_monitor }
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in results.iter().enumerate() {
        if let Some(m) = r.mean_monitor {
            if best.is_none_or(|(_, b)| m < b) {
                best = Some((i, m));
            }
        }
    }
    let (best, _) = best.ok_or(CalibError::GridExhausted)?;
    Ok(GridReport { cells: results, best })
}
