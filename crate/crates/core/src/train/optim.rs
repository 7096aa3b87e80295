//! SGD with momentum and weight decay, with a learning rate per layer.

use super::model::{Param, ParamKind};
use super::TrainError;
use crate::esd::OrientedMatrix;
use crate::htsr::power_iteration_sigma;
use crate::scheduler::LayerValues;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// One velocity buffer per parameter tensor, created lazily on the first step.
    pub buffers: Vec<Vec<f64>>,
}

impl Default for OptimState {
    fn default() -> Self {
        OptimState {
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 128,
            buffers: Vec::new(),
        }
    }
}

impl OptimState {
    pub fn new(momentum: f64, weight_decay: f64, batch_size: usize) -> Self {
        OptimState {
            momentum,
            weight_decay,
            batch_size,
            buffers: Vec::new(),
        }
    }
}

/// `v ← μ·v + g + wd·w; w ← w − lr·v`. Weight tensors take their rate from
/// `per_layer_lr`; biases and any unlisted tensor use `global_lr`.
pub fn sgd_step(
    params: &mut [Param],
    grads: &[Vec<f64>],
    optim: &mut OptimState,
    per_layer_lr: &LayerValues,
    global_lr: f64,
) -> Result<(), TrainError> {
    if grads.len() != params.len() {
        return Err(TrainError::Shape(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    if optim.buffers.is_empty() {
        optim.buffers = params.iter().map(|p| vec![0.0; p.values.len()]).collect();
    }
    if optim.buffers.len() != params.len() {
        return Err(TrainError::Shape("momentum buffer count mismatch".into()));
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut optim.buffers) {
        if g.len() != p.values.len() || v.len() != p.values.len() {
            return Err(TrainError::Shape(format!(
                "parameter {} has {} values, gradient {}, buffer {}",
                p.name,
                p.values.len(),
                g.len(),
                v.len()
            )));
        }
        let lr = match p.kind {
            ParamKind::Weight => per_layer_lr.get(&p.name).copied().unwrap_or(global_lr),
            ParamKind::Bias => global_lr,
        };
        for ((w, &gi), vi) in p.values.iter_mut().zip(g).zip(v.iter_mut()) {
            *vi = optim.momentum * *vi + gi + optim.weight_decay * *w;
            *w -= lr * *vi;
        }
    }
    Ok(())
}

pub const SNR_TOL: f64 = 1e-7;
pub const SNR_MAX_ITER: usize = 5000;

/// Gradient of `(λ_sr/2)·σ(W)²`, i.e. `λ_sr·σ·u vᵀ`, returned in the layer's
/// own (un-oriented) row-major layout.
pub fn snr_grad_term(layer: &OrientedMatrix, lambda_sr: f64) -> Result<Vec<f64>, TrainError> {
    if !(lambda_sr >= 0.0) {
        return Err(TrainError::Config(format!(
            "lambda_sr must be >= 0, got {lambda_sr}"
        )));
    }
    let (n, m) = (layer.rows(), layer.cols());
    if lambda_sr == 0.0 {
        return Ok(vec![0.0; n * m]);
    }
    let t = power_iteration_sigma(layer, SNR_TOL, SNR_MAX_ITER)?;
    let scale = lambda_sr * t.sigma;
    let mut inc = vec![0.0; n * m];
    for (r, &ur) in t.u.iter().enumerate() {
        for (c, &vc) in t.v.iter().enumerate() {
            inc[r * m + c] = scale * ur * vc;
        }
    }
    Ok(layer.to_layer_layout(&inc))
}
