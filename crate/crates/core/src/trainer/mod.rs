//! Optimization and evaluation protocol: Adam, early stopping, stratified
//! labeled/unlabeled splits with internal cross-validation, and grid search.

mod adam;
mod early_stop;
mod grid;
mod split;

pub use adam::{AdamConfig, AdamState};
pub use early_stop::{fit_with_early_stopping, FitOutcome, Objective, Schedule};
pub use grid::{grid_search, default_grid, CellResult, GridCell, GridReport};
pub use split::{stratified_split, SplitConfig, SplitPlan};
