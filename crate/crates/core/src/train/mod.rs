//! Deterministic desk-scale training loop driving the layer-wise scheduler.
//!
//! At every scheduling boundary the current weights are snapshotted,
//! analysed layer by layer, and turned into per-layer learning rates that
//! stay in force until the next boundary. Boundaries fall every
//! `update_interval_iters` steps (default: once per epoch); when an epoch
//! starts between boundaries, the cached analysis is re-assigned with the new
//! global rate.

pub mod data;
pub mod model;
pub mod optim;
pub mod telemetry;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::esd::{orient, EsdError};
use crate::htsr::{HtsrError, LambdaMinPolicy};
use crate::scheduler::{
    analyze_snapshot, cal_rate, decide, Assignment, LayerValues, ScheduleConfig, ScheduleDecision,
    ScheduleError,
};
use crate::weight_store::WeightSnapshot;

pub use data::{make_dataset, DataSource, Dataset, DatasetSpec};
pub use model::{Activation, ConvBlock, InitScheme, ModelSpec, Network, Param, ParamKind};
pub use optim::{sgd_step, snr_grad_term, OptimState};
pub use telemetry::{EpochRow, LayerRow, TrainTelemetry};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("model: {0}")]
    Model(String),
    #[error("data: {0}")]
    Data(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("spectral-norm term: {0}")]
    Spectral(#[from] HtsrError),
    #[error("spectral-norm term: {0}")]
    Esd(#[from] EsdError),
    #[error("training diverged: non-finite loss or weights in epoch {epoch}")]
    Diverged { epoch: usize },
}

const INIT_STREAM: u64 = 0;

/// Everything needed to reproduce one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub model: ModelSpec,
    pub data: DatasetSpec,
    pub schedule: ScheduleConfig,
    pub policy: LambdaMinPolicy,
    /// Spectral-norm regularization strength; 0 disables it.
    pub lambda_sr: f64,
    /// Epochs to run; at most `schedule.total_epochs`.
    pub epochs: usize,
    pub seed: u64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl Default for TrainRun {
    fn default() -> Self {
        let schedule = ScheduleConfig::default();
        TrainRun {
            model: ModelSpec::default(),
            data: DatasetSpec::default(),
            epochs: schedule.total_epochs,
            schedule,
            policy: LambdaMinPolicy::Median,
            lambda_sr: 0.0,
            seed: 0,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 128,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub telemetry: TrainTelemetry,
    pub initial_snapshot: WeightSnapshot,
    pub final_snapshot: WeightSnapshot,
    /// The decision in force at the end of each epoch.
    pub decisions: Vec<ScheduleDecision>,
}

impl TrainOutcome {
    pub fn final_eval_acc(&self) -> Option<f64> {
        self.telemetry.epochs.last().map(|e| e.eval_acc)
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn run_training(run: &TrainRun) -> Result<TrainOutcome, TrainError> {
    run.schedule.validate()?;
    if run.epochs > run.schedule.total_epochs {
        return Err(TrainError::Config(format!(
            "epochs {} exceeds schedule length {}",
            run.epochs, run.schedule.total_epochs
        )));
    }
    if run.batch_size == 0 {
        return Err(TrainError::Config("batch_size must be positive".into()));
    }
    if !(run.lambda_sr >= 0.0) {
        return Err(TrainError::Config(format!(
            "lambda_sr must be >= 0, got {}",
            run.lambda_sr
        )));
    }
    if !(0.0..1.0).contains(&run.momentum) || !(run.weight_decay >= 0.0) {
        return Err(TrainError::Config(format!(
            "momentum must be in [0, 1) and weight_decay >= 0 (got {}, {})",
            run.momentum, run.weight_decay
        )));
    }

    let data = make_dataset(&run.data, run.seed)?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(run.seed);
    init_rng.set_stream(INIT_STREAM);
    let mut net = Network::new(&run.model, data.dims, data.classes, &mut init_rng)?;
    let initial_snapshot = net.snapshot(0);

    let mut telemetry = TrainTelemetry::default();
    let mut decisions = Vec::with_capacity(run.epochs);
    let mut optim = OptimState::new(run.momentum, run.weight_decay, run.batch_size);

    let weight_idx: Vec<usize> = net.weight_indices().collect();
    let weight_names = net.weight_names();
    let iters_per_epoch = data.train_len().div_ceil(run.batch_size);
    let interval = run.schedule.update_interval_iters.unwrap_or(iters_per_epoch);

    let mut global_iter = 0usize;
    let mut cached_analysis = None;
    let mut decision: Option<ScheduleDecision> = None;
    // gradient norms accumulated since the last boundary, for the LARS assignment
    let mut window_grad = vec![0.0; weight_idx.len()];
    let mut window_steps = 0usize;

    for epoch in 0..run.epochs {
        let epoch_start = Instant::now();
        let mut analysis_sec = 0.0;
        let eta_t = cal_rate(run.schedule.eta0, epoch, run.schedule.total_epochs)?;
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        let mut grad_sum = vec![0.0; weight_idx.len()];

        for batch in data.batches(epoch, run.batch_size, run.seed) {
            let (x, y) = data.gather(&batch);
            let (loss, mut grads) = net.loss_and_grads(&x, &y);
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            if run.lambda_sr > 0.0 {
                for &pi in &weight_idx {
                    let p = &net.params[pi];
                    let layer = crate::weight_store::LayerTensor {
                        name: p.name.clone(),
                        dims: p.dims.clone(),
                        values: p.values.clone(),
                    };
                    let inc = snr_grad_term(&orient(&layer)?, run.lambda_sr)?;
                    for (g, d) in grads[pi].iter_mut().zip(inc) {
                        *g += d;
                    }
                }
            }
            let norms: Vec<f64> = weight_idx.iter().map(|&pi| l2(&grads[pi])).collect();

            let boundary = global_iter.is_multiple_of(interval);
            if boundary {
                let t0 = Instant::now();
                let snapshot = net.snapshot(epoch as u32);
                let analysis = analyze_snapshot(&snapshot, run.policy);
                let grad_norms = lars_norms(run, &weight_names, &window_grad, window_steps, &norms);
                decision = Some(decide(
                    &run.schedule,
                    epoch,
                    eta_t,
                    &snapshot,
                    analysis.clone(),
                    grad_norms.as_ref(),
                )?);
                cached_analysis = Some((snapshot, analysis));
                window_grad.iter_mut().for_each(|g| *g = 0.0);
                window_steps = 0;
                analysis_sec += t0.elapsed().as_secs_f64();
            } else if decision.as_ref().is_some_and(|d| d.epoch != epoch) {
                let (snapshot, analysis) = cached_analysis.as_ref().expect("analysis cached");
                let grad_norms = lars_norms(run, &weight_names, &window_grad, window_steps, &norms);
                decision = Some(decide(
                    &run.schedule,
                    epoch,
                    eta_t,
                    snapshot,
                    analysis.clone(),
                    grad_norms.as_ref(),
                )?);
            }
            let current = decision.as_ref().expect("first step is a boundary");

            sgd_step(&mut net.params, &grads, &mut optim, &current.per_layer, eta_t)?;
            if net.params.iter().any(|p| p.values.iter().any(|v| !v.is_finite())) {
                return Err(TrainError::Diverged { epoch });
            }
            for ((s, w), n) in grad_sum.iter_mut().zip(window_grad.iter_mut()).zip(&norms) {
                *s += n;
                *w += n;
            }
            window_steps += 1;
            loss_sum += loss;
            steps += 1;
            global_iter += 1;
        }

        let current = decision.clone().expect("at least one step per epoch");
        let eval_acc = net.accuracy(&data.eval_x, &data.eval_y);
        for (name, g) in weight_names.iter().zip(&grad_sum) {
            let m = current.metrics.get(name);
            telemetry.layers.push(LayerRow {
                epoch,
                layer: name.clone(),
                alpha_hill: m.map(|m| m.alpha_hill),
                spectral_norm: m.map(|m| m.spectral_norm),
                lr: current.lr(name),
                grad_l2: g / steps as f64,
            });
        }
        telemetry.epochs.push(EpochRow {
            epoch,
            eta_t,
            train_loss: loss_sum / steps as f64,
            eval_acc,
            analysis_sec,
            epoch_sec: epoch_start.elapsed().as_secs_f64(),
        });
        decisions.push(current);
    }

    Ok(TrainOutcome {
        telemetry,
        final_snapshot: net.snapshot(run.epochs as u32),
        initial_snapshot,
        decisions,
    })
}

fn lars_norms(
    run: &TrainRun,
    names: &[String],
    window: &[f64],
    steps: usize,
    current: &[f64],
) -> Option<LayerValues> {
    if run.schedule.assignment != Assignment::Lars {
        return None;
    }
    let norms: Vec<f64> = if steps == 0 {
        current.to_vec()
    } else {
        window.iter().map(|g| g / steps as f64).collect()
    };
    Some(names.iter().cloned().zip(norms).collect())
}
