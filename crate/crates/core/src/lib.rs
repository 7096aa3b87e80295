//! Spectral diagnostics for neural-network weight matrices and a layer-wise
//! learning-rate scheduler driven by them.
//!
//! The pipeline: [`weight_store`] snapshots → [`esd`] spectra → [`htsr`]
//! power-law metrics → [`scheduler`] per-layer rates, exercised end to end by
//! the [`train`] engine. [`rmt_lab`] checks the estimator on matrices with
//! known spectra.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod esd;
pub mod htsr;
pub mod rmt_lab;
pub mod scheduler;
pub mod train;
pub mod weight_store;

pub use esd::{compute_esd, orient, Esd, EsdError, OrientedMatrix};
pub use htsr::{
    hill_alpha, layer_metrics, power_iteration_sigma, select_k, HtsrError, LambdaMinPolicy,
    LayerMetrics,
};
pub use scheduler::{
    assign_lars, assign_tempbalance, assign_variant, cal_rate, schedule_epoch, Assignment,
    LayerValues, Metric, ScheduleConfig, ScheduleDecision, ScheduleError, VariantAssignment,
};
pub use weight_store::{read_snapshot, write_snapshot, LayerTensor, SnapshotError, WeightSnapshot};
