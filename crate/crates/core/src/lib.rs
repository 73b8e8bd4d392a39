//! Post-hoc calibration for node classification on graphs.
//!
//! The crate ingests logits produced by some upstream model together with the
//! graph they were computed on, fits scaling calibrators (TS, VS, ETS, CaGCN,
//! GATS) on a validation mask, and evaluates them with binned, classwise and
//! kernel-density ECE as well as NLL and Brier score. The [`diagnostics`]
//! module exposes the per-node factors (distance to training nodes, relative
//! confidence, node homophily, entropy, nodewise calibration error) as CSV.

pub mod calibrators;
pub mod commands;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod graph;
pub mod kernels;
pub mod metrics;
pub mod rng;
pub mod synth;
pub mod trainer;

pub use calibrators::{
    apply_calibrator, fit_calibrator, Ablations, CalibratedOutput, Calibrator, CalibratorConfig,
    GatsParams, Method,
};
pub use dataset::Dataset;
pub use error::{CalibError, Result};
pub use exec::Execution;
pub use graph::{Distance, Graph, NodeMask};
pub use kernels::Matrix;
pub use metrics::{BinStats, EvalResult};
