//! Layer-wise learning-rate assignment.
//!
//! Each scheduling boundary takes the cosine-annealed global rate `η_t` and
//! spreads it across layers according to a per-layer spectral metric. The
//! default assignment is the linear map
//!
//! ```text
//! f(i) = η_t · [ (α_i − α_min) / (α_max − α_min) · (s2 − s1) + s1 ]
//! ```
//!
//! which keeps every layer inside `[s1·η_t, s2·η_t]` and is invariant under
//! positive rescaling of the metric values.

use indexmap::IndexMap;
use rayon::prelude::*;
use thiserror::Error;

use crate::esd::{layer_esd, EsdError};
use crate::htsr::{layer_metrics, HtsrError, LambdaMinPolicy, LayerMetrics};
use crate::weight_store::WeightSnapshot;

/// Ordered map from layer name to a scalar (metric value or learning rate).
pub type LayerValues = IndexMap<String, f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("no layers to assign")]
    EmptyMetrics,
    #[error("total epochs must be positive")]
    ZeroEpochs,
    #[error("epoch {t} outside [0, {total}]")]
    EpochOutOfRange { t: usize, total: usize },
    #[error("layer {layer:?}: metric value {value} must be positive for this assignment")]
    NonPositive { layer: String, value: f64 },
    #[error("layer {layer:?}: metric value is NaN")]
    NotANumber { layer: String },
    #[error("mean log-metric is zero; log assignment is undefined")]
    DegenerateDenominator,
    #[error("LARS assignment needs gradient norms for layer {0:?}")]
    MissingGradNorm(String),
    #[error("invalid schedule config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Assignment {
    #[default]
    TempBalanceLinear,
    Sqrt,
    Log2,
    Step,
    Lars,
    GlobalOnly,
}

impl Assignment {
    pub fn name(&self) -> &'static str {
        match self {
            Assignment::TempBalanceLinear => "tempbalance",
            Assignment::Sqrt => "sqrt",
            Assignment::Log2 => "log2",
            Assignment::Step => "step",
            Assignment::Lars => "lars",
            Assignment::GlobalOnly => "global_only",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariantAssignment {
    Sqrt,
    Log2,
    Step,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    #[default]
    AlphaHill,
    SpectralNorm,
    AlphaWeighted,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::AlphaHill => "alpha_hill",
            Metric::SpectralNorm => "spectral_norm",
            Metric::AlphaWeighted => "alpha_weighted",
        }
    }

    pub fn value(&self, m: &LayerMetrics) -> f64 {
        match self {
            Metric::AlphaHill => m.alpha_hill,
            Metric::SpectralNorm => m.spectral_norm,
            Metric::AlphaWeighted => m.alpha_weighted,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    pub eta0: f64,
    pub total_epochs: usize,
    pub s1: f64,
    pub s2: f64,
    pub assignment: Assignment,
    pub metric: Metric,
    pub start_epoch: usize,
    /// Iterations between scheduling boundaries; `None` means once per epoch.
    pub update_interval_iters: Option<usize>,
    pub exclude_first_last: bool,
    /// Denominator floor for the LARS trust ratio.
    pub lars_eps: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            eta0: 0.1,
            total_epochs: 200,
            s1: 0.5,
            s2: 1.5,
            assignment: Assignment::TempBalanceLinear,
            metric: Metric::AlphaHill,
            start_epoch: 0,
            update_interval_iters: None,
            exclude_first_last: true,
            lars_eps: 1e-8,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        let bad = |m: String| Err(ScheduleError::InvalidConfig(m));
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return bad(format!("eta0 must be positive, got {}", self.eta0));
        }
        if self.total_epochs == 0 {
            return Err(ScheduleError::ZeroEpochs);
        }
        if !(self.s1 > 0.0 && self.s2.is_finite() && self.s1 <= self.s2) {
            return bad(format!(
                "scaling ratios must satisfy 0 < s1 <= s2, got ({}, {})",
                self.s1, self.s2
            ));
        }
        if self.start_epoch >= self.total_epochs {
            return bad(format!(
                "start_epoch {} must be below total epochs {}",
                self.start_epoch, self.total_epochs
            ));
        }
        if self.update_interval_iters == Some(0) {
            return bad("update_interval_iters must be positive".into());
        }
        if !(self.lars_eps > 0.0) {
            return bad(format!("lars_eps must be positive, got {}", self.lars_eps));
        }
        Ok(())
    }
}

/// Per-layer rates for one scheduling window.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleDecision {
    pub epoch: usize,
    pub eta_t: f64,
    pub per_layer: LayerValues,
    /// Metric values that entered the assignment (excluded and failed layers absent).
    pub alphas_used: LayerValues,
    /// Heavy-tail metrics for every layer that could be analysed.
    pub metrics: IndexMap<String, LayerMetrics>,
    /// Layers that fell back to `eta_t` because their spectrum could not be fitted.
    pub fallbacks: IndexMap<String, String>,
}

impl ScheduleDecision {
    pub fn lr(&self, layer: &str) -> f64 {
        self.per_layer.get(layer).copied().unwrap_or(self.eta_t)
    }
}

/// Cosine annealing: `(η0/2)·(1 + cos(tπ/T))`.
pub fn cal_rate(eta0: f64, t: usize, total: usize) -> Result<f64, ScheduleError> {
    if total == 0 {
        return Err(ScheduleError::ZeroEpochs);
    }
    if t > total {
        return Err(ScheduleError::EpochOutOfRange { t, total });
    }
    let x = t as f64 / total as f64;
    // cos(πx) = sin(π(½ − x)) is exact at x ∈ {0, ½, 1}
    let c = (std::f64::consts::PI * (0.5 - x)).sin();
    Ok(eta0 / 2.0 * (1.0 + c))
}

/// Grid onto which normalized positions are snapped in the linear map.
/// Rescaled metric inputs are themselves rounded, so without snapping the
/// normalized position could move by an ulp under a change of scale.
pub const POSITION_QUANTUM: f64 = 1.0 / (1u64 << 20) as f64;

fn check_values(metrics: &LayerValues) -> Result<(), ScheduleError> {
    if metrics.is_empty() {
        return Err(ScheduleError::EmptyMetrics);
    }
    if let Some((name, _)) = metrics.iter().find(|(_, v)| v.is_nan()) {
        return Err(ScheduleError::NotANumber {
            layer: name.clone(),
        });
    }
    Ok(())
}

/// Replaces `+∞` sentinels with the largest finite value (or leaves all
/// equal when nothing is finite).
fn substitute_sentinels(metrics: &LayerValues) -> Vec<f64> {
    let finite_max = metrics
        .values()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    let fill = if finite_max.is_finite() {
        finite_max
    } else {
        1.0
    };
    metrics
        .values()
        .map(|&v| if v == f64::INFINITY { fill } else { v })
        .collect()
}

pub fn assign_tempbalance(
    eta_t: f64,
    metrics: &LayerValues,
    s1: f64,
    s2: f64,
) -> Result<LayerValues, ScheduleError> {
    check_values(metrics)?;
    let vals = substitute_sentinels(metrics);
    if let Some(i) = vals.iter().position(|v| !v.is_finite()) {
        let (name, &value) = metrics.get_index(i).expect("index in range");
        return Err(ScheduleError::NonPositive {
            layer: name.clone(),
            value,
        });
    }
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (floor, ceil) = (s1 * eta_t, s2 * eta_t);

    let out = metrics
        .keys()
        .zip(&vals)
        .map(|(name, &v)| {
            let lr = if hi == lo {
                eta_t * (s1 + s2) / 2.0
            } else {
                let p = ((v - lo) / (hi - lo) / POSITION_QUANTUM).round() * POSITION_QUANTUM;
                (eta_t * (p * (s2 - s1) + s1)).clamp(floor, ceil)
            };
            (name.clone(), lr)
        })
        .collect();
    Ok(out)
}

pub fn assign_variant(
    eta_t: f64,
    metrics: &LayerValues,
    variant: VariantAssignment,
    s1: f64,
    s2: f64,
) -> Result<LayerValues, ScheduleError> {
    check_values(metrics)?;
    let vals = substitute_sentinels(metrics);
    let names = metrics.keys();
    match variant {
        VariantAssignment::Sqrt | VariantAssignment::Log2 => {
            for (name, &v) in metrics.keys().zip(&vals) {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(ScheduleError::NonPositive {
                        layer: name.clone(),
                        value: v,
                    });
                }
            }
            let transformed: Vec<f64> = if variant == VariantAssignment::Sqrt {
                vals.iter().map(|v| v.sqrt()).collect()
            } else {
                vals.iter().map(|v| v.ln()).collect()
            };
            let mean = transformed.iter().sum::<f64>() / transformed.len() as f64;
            if mean == 0.0 {
                return Err(ScheduleError::DegenerateDenominator);
            }
            Ok(names
                .zip(transformed)
                .map(|(name, x)| (name.clone(), eta_t * x / mean))
                .collect())
        }
        VariantAssignment::Step => {
            let l = vals.len();
            if l == 1 {
                return Ok(names
                    .map(|name| (name.clone(), eta_t * (s1 + s2) / 2.0))
                    .collect());
            }
            let mut order: Vec<usize> = (0..l).collect();
            // stable sort keeps layer order among ties
            order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
            let mut rank = vec![0usize; l];
            for (r, &i) in order.iter().enumerate() {
                rank[i] = r;
            }
            let step = (s2 - s1) / (l - 1) as f64;
            Ok(names
                .zip(rank)
                .map(|(name, r)| (name.clone(), eta_t * (s1 + r as f64 * step)))
                .collect())
        }
    }
}

/// LARS-style trust ratio `η_t·‖w‖ / (‖g‖ + eps)`; zero-norm layers keep `η_t`.
pub fn assign_lars(
    eta_t: f64,
    weight_norms: &LayerValues,
    grad_norms: &LayerValues,
    eps: f64,
) -> Result<LayerValues, ScheduleError> {
    if !(eps > 0.0) {
        return Err(ScheduleError::InvalidConfig(format!(
            "lars eps must be positive, got {eps}"
        )));
    }
    weight_norms
        .iter()
        .map(|(name, &w)| {
            if w == 0.0 {
                return Ok((name.clone(), eta_t));
            }
            let g = grad_norms
                .get(name)
                .copied()
                .ok_or_else(|| ScheduleError::MissingGradNorm(name.clone()))?;
            Ok((name.clone(), eta_t * w / (g + eps)))
        })
        .collect()
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LayerAnalysisError {
    #[error(transparent)]
    Esd(#[from] EsdError),
    #[error(transparent)]
    Htsr(#[from] HtsrError),
}

/// ESD + heavy-tail metrics for every layer, in snapshot order.
pub fn analyze_snapshot(
    snapshot: &WeightSnapshot,
    policy: LambdaMinPolicy,
) -> Vec<(String, Result<LayerMetrics, LayerAnalysisError>)> {
    snapshot
        .layers
        .par_iter()
        .map(|layer| {
            let result = layer_esd(layer)
                .map_err(LayerAnalysisError::from)
                .and_then(|esd| layer_metrics(&esd, policy).map_err(LayerAnalysisError::from));
            (layer.name.clone(), result)
        })
        .collect()
}

pub fn schedule_epoch(
    config: &ScheduleConfig,
    t: usize,
    snapshot: &WeightSnapshot,
    policy: LambdaMinPolicy,
) -> Result<ScheduleDecision, ScheduleError> {
    schedule_epoch_with_grads(config, t, snapshot, policy, None)
}

/// As [`schedule_epoch`], with per-layer gradient norms for the LARS assignment.
pub fn schedule_epoch_with_grads(
    config: &ScheduleConfig,
    t: usize,
    snapshot: &WeightSnapshot,
    policy: LambdaMinPolicy,
    grad_norms: Option<&LayerValues>,
) -> Result<ScheduleDecision, ScheduleError> {
    config.validate()?;
    if t >= config.total_epochs {
        return Err(ScheduleError::EpochOutOfRange {
            t,
            total: config.total_epochs,
        });
    }
    let eta_t = cal_rate(config.eta0, t, config.total_epochs)?;
    let analysed = analyze_snapshot(snapshot, policy);
    decide(config, t, eta_t, snapshot, analysed, grad_norms)
}

pub(crate) fn decide(
    config: &ScheduleConfig,
    t: usize,
    eta_t: f64,
    snapshot: &WeightSnapshot,
    analysed: Vec<(String, Result<LayerMetrics, LayerAnalysisError>)>,
    grad_norms: Option<&LayerValues>,
) -> Result<ScheduleDecision, ScheduleError> {
    let last = snapshot.layers.len().saturating_sub(1);
    let excluded = |i: usize| config.exclude_first_last && last >= 2 && (i == 0 || i == last);

    let mut decision = ScheduleDecision {
        epoch: t,
        eta_t,
        per_layer: snapshot
            .layers
            .iter()
            .map(|l| (l.name.clone(), eta_t))
            .collect(),
        alphas_used: LayerValues::new(),
        metrics: IndexMap::new(),
        fallbacks: IndexMap::new(),
    };

    for (i, (name, result)) in analysed.into_iter().enumerate() {
        match result {
            Ok(m) => {
                if !excluded(i) {
                    decision.alphas_used.insert(name.clone(), config.metric.value(&m));
                }
                decision.metrics.insert(name, m);
            }
            Err(e) => {
                decision.fallbacks.insert(name, e.to_string());
            }
        }
    }

    let active = t >= config.start_epoch && config.assignment != Assignment::GlobalOnly;
    if !active {
        decision.alphas_used.clear();
        return Ok(decision);
    }

    let assigned = match config.assignment {
        Assignment::GlobalOnly => unreachable!("handled above"),
        Assignment::Lars => {
            let grads = grad_norms.ok_or_else(|| {
                ScheduleError::MissingGradNorm(
                    snapshot.layers.first().map(|l| l.name.clone()).unwrap_or_default(),
                )
            })?;
            let weights: LayerValues = snapshot
                .layers
                .iter()
                .enumerate()
                .filter(|(i, _)| !excluded(*i))
                .map(|(_, l)| (l.name.clone(), l.frobenius_sq().sqrt()))
                .collect();
            decision.alphas_used = weights.clone();
            if weights.is_empty() {
                LayerValues::new()
            } else {
                assign_lars(eta_t, &weights, grads, config.lars_eps)?
            }
        }
        _ if decision.alphas_used.is_empty() => LayerValues::new(),
        Assignment::TempBalanceLinear => {
            assign_tempbalance(eta_t, &decision.alphas_used, config.s1, config.s2)?
        }
        Assignment::Sqrt => assign_variant(
            eta_t,
            &decision.alphas_used,
            VariantAssignment::Sqrt,
            config.s1,
            config.s2,
        )?,
        Assignment::Log2 => assign_variant(
            eta_t,
            &decision.alphas_used,
            VariantAssignment::Log2,
            config.s1,
            config.s2,
        )?,
        Assignment::Step => assign_variant(
            eta_t,
            &decision.alphas_used,
            VariantAssignment::Step,
            config.s1,
            config.s2,
        )?,
    };
    for (name, lr) in assigned {
        decision.per_layer.insert(name, lr);
    }
    Ok(decision)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weight_store::LayerTensor;

    fn vals(pairs: &[(&str, f64)]) -> LayerValues {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * b.abs().max(1.0)
    }

    #[test]
    fn cal_points() {
        assert_eq!(cal_rate(0.1, 0, 200).unwrap(), 0.1);
        assert_eq!(cal_rate(0.1, 100, 200).unwrap(), 0.05);
        assert_eq!(cal_rate(0.1, 200, 200).unwrap(), 0.0);
        assert_eq!(cal_rate(0.1, 0, 0), Err(ScheduleError::ZeroEpochs));
        assert!(cal_rate(0.1, 201, 200).is_err());
        let quarter = cal_rate(1.0, 50, 200).unwrap();
        assert!(close(quarter, 0.5 * (1.0 + (std::f64::consts::PI / 4.0).cos())));
    }

    #[test]
    fn linear_map_endpoints() {
        let out = assign_tempbalance(0.1, &vals(&[("A", 2.0), ("B", 3.0), ("C", 4.0)]), 0.5, 1.5)
            .unwrap();
        assert!(close(out["A"], 0.05));
        assert!(close(out["B"], 0.10));
        assert!(close(out["C"], 0.15));
        let scaled =
            assign_tempbalance(0.1, &vals(&[("A", 20.0), ("B", 30.0), ("C", 40.0)]), 0.5, 1.5)
                .unwrap();
        assert_eq!(out, scaled);
    }

    #[test]
    fn linear_map_degenerate_range() {
        let out = assign_tempbalance(0.1, &vals(&[("A", 3.0), ("B", 3.0)]), 0.5, 1.5).unwrap();
        assert!(out.values().all(|&v| close(v, 0.1)));
    }

    #[test]
    fn linear_map_sentinel_takes_finite_max() {
        let out = assign_tempbalance(
            1.0,
            &vals(&[("A", 2.0), ("dead", f64::INFINITY), ("C", 4.0)]),
            0.5,
            1.5,
        )
        .unwrap();
        assert_eq!(out["dead"], out["C"]);
        assert_eq!(out["A"], 0.5);
        let all_dead =
            assign_tempbalance(1.0, &vals(&[("A", f64::INFINITY), ("B", f64::INFINITY)]), 0.5, 1.5)
                .unwrap();
        assert!(all_dead.values().all(|&v| v == 1.0));
    }

    #[test]
    fn linear_map_errors() {
        assert_eq!(
            assign_tempbalance(0.1, &LayerValues::new(), 0.5, 1.5),
            Err(ScheduleError::EmptyMetrics)
        );
        assert!(matches!(
            assign_tempbalance(0.1, &vals(&[("A", f64::NAN)]), 0.5, 1.5),
            Err(ScheduleError::NotANumber { .. })
        ));
    }

    #[test]
    fn sqrt_variant() {
        let out = assign_variant(
            0.1,
            &vals(&[("A", 1.0), ("B", 4.0)]),
            VariantAssignment::Sqrt,
            0.5,
            1.5,
        )
        .unwrap();
        assert!(close(out["A"], 0.1 / 1.5));
        assert!(close(out["B"], 0.2 / 1.5));
    }

    #[test]
    fn log_variant() {
        let out = assign_variant(
            0.1,
            &vals(&[("A", 2.0), ("B", 4.0)]),
            VariantAssignment::Log2,
            0.5,
            1.5,
        )
        .unwrap();
        assert!(close(out["A"], 0.1 / 1.5));
        assert!(close(out["B"], 0.2 / 1.5));
        // base-2 logs give the same ratios
        let (l2a, l2b) = (2f64.log2(), 4f64.log2());
        let mean = (l2a + l2b) / 2.0;
        assert!(close(out["A"], 0.1 * l2a / mean));
        assert!(close(out["B"], 0.1 * l2b / mean));
    }

    #[test]
    fn log_variant_errors() {
        assert_eq!(
            assign_variant(
                0.1,
                &vals(&[("A", 1.0), ("B", 1.0)]),
                VariantAssignment::Log2,
                0.5,
                1.5
            ),
            Err(ScheduleError::DegenerateDenominator)
        );
        assert!(matches!(
            assign_variant(
                0.1,
                &vals(&[("A", -1.0)]),
                VariantAssignment::Sqrt,
                0.5,
                1.5
            ),
            Err(ScheduleError::NonPositive { .. })
        ));
    }

    #[test]
    fn step_variant() {
        let out = assign_variant(
            0.1,
            &vals(&[("A", 9.0), ("B", 1.0), ("C", 5.0)]),
            VariantAssignment::Step,
            0.5,
            1.5,
        )
        .unwrap();
        assert!(close(out["B"], 0.05));
        assert!(close(out["C"], 0.10));
        assert!(close(out["A"], 0.15));
        let ties = assign_variant(
            1.0,
            &vals(&[("x", 2.0), ("y", 2.0)]),
            VariantAssignment::Step,
            0.5,
            1.5,
        )
        .unwrap();
        assert_eq!((ties["x"], ties["y"]), (0.5, 1.5));
        let single =
            assign_variant(1.0, &vals(&[("x", 2.0)]), VariantAssignment::Step, 0.5, 1.5).unwrap();
        assert_eq!(single["x"], 1.0);
    }

    #[test]
    fn lars_rules() {
        let w = vals(&[("a", 2.0), ("z", 0.0), ("g0", 1.0)]);
        let g = vals(&[("a", 1.0), ("z", 5.0), ("g0", 0.0)]);
        let out = assign_lars(0.1, &w, &g, 1e-12).unwrap();
        assert!(close(out["a"], 0.2));
        assert_eq!(out["z"], 0.1);
        let out = assign_lars(0.1, &w, &g, 1e-8).unwrap();
        assert!(close(out["g0"], 0.1 * 1e8));
        assert!(matches!(
            assign_lars(0.1, &w, &vals(&[("z", 1.0)]), 1e-8),
            Err(ScheduleError::MissingGradNorm(_))
        ));
    }

    fn diag_layer(name: &str, diag: &[f64], cols: usize) -> LayerTensor {
        let rows = diag.len();
        let mut v = vec![0.0; rows * cols];
        for (i, d) in diag.iter().enumerate() {
            v[i * cols + i] = *d;
        }
        LayerTensor::new(name, vec![rows, cols], v).unwrap()
    }

    fn three_layer_snapshot() -> WeightSnapshot {
        // singular values 2^(j·p) give alpha = 1 + 4/(p·10·ln 2)·... distinct per layer
        let layer = |name: &str, p: f64| {
            let d: Vec<f64> = (0..8).map(|j| 2f64.powf(p * j as f64 / 2.0)).collect();
            diag_layer(name, &d, 10)
        };
        WeightSnapshot::new(0, vec![layer("a", 1.0), layer("b", 2.0), layer("c", 0.5)]).unwrap()
    }

    #[test]
    fn schedule_global_only_and_late_start() {
        let snap = three_layer_snapshot();
        let mut cfg = ScheduleConfig {
            total_epochs: 10,
            exclude_first_last: false,
            assignment: Assignment::GlobalOnly,
            ..Default::default()
        };
        let d = schedule_epoch(&cfg, 3, &snap, LambdaMinPolicy::Median).unwrap();
        let eta = cal_rate(0.1, 3, 10).unwrap();
        assert!(d.per_layer.values().all(|&v| v == eta));
        assert_eq!(d.metrics.len(), 3);

        cfg.assignment = Assignment::TempBalanceLinear;
        cfg.start_epoch = 2;
        let d = schedule_epoch(&cfg, 0, &snap, LambdaMinPolicy::Median).unwrap();
        assert!(d.per_layer.values().all(|&v| v == 0.1));
        let d = schedule_epoch(&cfg, 2, &snap, LambdaMinPolicy::Median).unwrap();
        assert!(d.per_layer.values().any(|&v| v != d.eta_t));
    }

    #[test]
    fn schedule_tempbalance_orders_by_alpha() {
        let snap = three_layer_snapshot();
        let cfg = ScheduleConfig {
            total_epochs: 10,
            exclude_first_last: false,
            ..Default::default()
        };
        let d = schedule_epoch(&cfg, 0, &snap, LambdaMinPolicy::Median).unwrap();
        // eigenvalues 2^(p·j): Hill with k=4 gives 1 + 4/(10·p·ln 2); smaller p, larger alpha
        for (name, p) in [("a", 1.0), ("b", 2.0), ("c", 0.5)] {
            let expect = 1.0 + 4.0 / (10.0 * p * 2f64.ln());
            assert!(close(d.metrics[name].alpha_hill, expect), "{name}");
        }
        assert!(close(d.per_layer["b"], 0.05));
        assert!(close(d.per_layer["c"], 0.15));
        let mid = 0.1 * (0.5 + (d.alphas_used["a"] - d.alphas_used["b"])
            / (d.alphas_used["c"] - d.alphas_used["b"]));
        assert!((d.per_layer["a"] - mid).abs() < 1e-7);
    }

    #[test]
    fn schedule_excludes_first_last_and_flags_degenerate() {
        let mut snap = three_layer_snapshot();
        snap.layers.push(LayerTensor::zeros("dead", vec![6, 6]).unwrap());
        snap.layers.push(diag_layer("out", &[1.0, 3.0], 4));
        let cfg = ScheduleConfig {
            total_epochs: 10,
            ..Default::default()
        };
        let d = schedule_epoch(&cfg, 1, &snap, LambdaMinPolicy::Median).unwrap();
        assert_eq!(d.per_layer["a"], d.eta_t);
        assert_eq!(d.per_layer["out"], d.eta_t);
        assert_eq!(d.per_layer["dead"], d.eta_t);
        assert!(d.fallbacks.contains_key("dead"));
        assert!(!d.alphas_used.contains_key("a"));
        assert_eq!(d.alphas_used.len(), 2);
        assert!(d.per_layer["b"] < d.per_layer["c"]);
    }

    #[test]
    fn schedule_lars_needs_grads() {
        let snap = three_layer_snapshot();
        let cfg = ScheduleConfig {
            total_epochs: 10,
            exclude_first_last: false,
            assignment: Assignment::Lars,
            ..Default::default()
        };
        assert!(matches!(
            schedule_epoch(&cfg, 0, &snap, LambdaMinPolicy::Median),
            Err(ScheduleError::MissingGradNorm(_))
        ));
        let grads = vals(&[("a", 1.0), ("b", 1.0), ("c", 1.0)]);
        let d = schedule_epoch_with_grads(&cfg, 0, &snap, LambdaMinPolicy::Median, Some(&grads))
            .unwrap();
        let wa = snap.layers[0].frobenius_sq().sqrt();
        assert!(close(d.per_layer["a"], 0.1 * wa / (1.0 + 1e-8)));
    }

    #[test]
    fn config_validation() {
        let mut cfg = ScheduleConfig::default();
        cfg.validate().unwrap();
        cfg.s1 = 2.0;
        assert!(cfg.validate().is_err());
        cfg = ScheduleConfig {
            start_epoch: 200,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let snap = three_layer_snapshot();
        assert!(matches!(
            schedule_epoch(&ScheduleConfig::default(), 200, &snap, LambdaMinPolicy::Median),
            Err(ScheduleError::EpochOutOfRange { .. })
        ));
    }
}
