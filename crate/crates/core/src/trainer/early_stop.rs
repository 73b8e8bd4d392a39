use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use crate::error::{CalibError, Result};

/// A differentiable training loss plus the held-out loss used for early
/// stopping.
pub trait Objective {
    fn num_params(&self) -> usize;
    fn loss_and_grad(&self, params: &[f64]) -> (f64, Vec<f64>);
    fn monitor(&self, params: &[f64]) -> f64;
    /// Parameters excluded from optimization.
    fn frozen(&self) -> Option<&[bool]> {
        None
    }
    /// Maps parameters back onto the feasible set after each step.
    fn project(&self, _params: &mut [f64]) {}
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule { max_epochs: 2000, patience: 100 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitOutcome {
    pub params: Vec<f64>,
    pub best_monitor: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Monitor value after every epoch, starting with the initial parameters.
    pub monitor_history: Vec<f64>,
}

/// Full-batch Adam on `objective`, keeping the parameters with the lowest
/// monitor value seen so far. Stops once `patience + 1` consecutive epochs
/// bring no strict improvement.
pub fn fit_with_early_stopping<O: Objective + ?Sized>(
    objective: &O,
    init: Vec<f64>,
    schedule: Schedule,
    adam: AdamConfig,
) -> Result<FitOutcome> {
    if init.len() != objective.num_params() {
        return Err(CalibError::ShapeMismatch(format!(
            "{} initial values for {} parameters",
            init.len(),
            objective.num_params()
        )));
    }
    let mut params = init;
    objective.project(&mut params);
    let mut state = AdamState::new(params.len(), adam);
    let first = objective.monitor(&params);
    if !first.is_finite() {
        return Err(CalibError::FitDiverged { epoch: 0, loss: first });
    }
    let mut best = (first, params.clone(), 0usize);
    let mut history = vec![first];
    let mut stale = 0usize;
    let mut epoch = 0;
    while epoch < schedule.max_epochs {
        epoch += 1;
        let (loss, grad) = objective.loss_and_grad(&params);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(CalibError::FitDiverged { epoch, loss });
        }
        state.step(&mut params, &grad, objective.frozen())?;
        objective.project(&mut params);
        let mon = objective.monitor(&params);
        if !mon.is_finite() {
            return Err(CalibError::FitDiverged { epoch, loss: mon });
        }
        history.push(mon);
        if mon < best.0 {
            best = (mon, params.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale > schedule.patience {
                break;
            }
        }
    }
    Ok(FitOutcome {
        params: best.1,
        best_monitor: best.0,
        best_epoch: best.2,
        epochs_run: epoch,
        monitor_history: history,
    })
}
