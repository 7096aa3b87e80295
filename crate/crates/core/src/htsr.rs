//! Heavy-tailed power-law fitting of ESDs.
//!
//! The tail `p(λ) ∝ λ^{-α}` above a threshold `λ_min` is fitted with the Hill
//! estimator on the top `k` eigenvalues. How `k` (equivalently `λ_min`) is
//! chosen is a [`LambdaMinPolicy`]:
//!
//! * `Median`: `k = ⌊n/2⌋`, i.e. the largest half of the spectrum.
//! * `GoodnessOfFit`: the `k` whose fit minimizes the Kolmogorov–Smirnov
//!   distance between the tail ECDF and the continuous power-law CDF.
//! * `FixFinger`: `λ_min` at the mode of a log-spaced histogram of the ESD.
//!
//! `alpha_weighted` is `alpha_hill · log10(λ_max)`. That weighting is an
//! assumption carried over from earlier heavy-tailed diagnostics tooling.

use thiserror::Error;

use crate::esd::{Esd, OrientedMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HtsrError {
    #[error("tail count k={k} outside [1, {}]", n.saturating_sub(1))]
    KOutOfRange { k: usize, n: usize },
    #[error("threshold eigenvalue is zero (k={k}); the tail cannot be fitted")]
    DegenerateThreshold { k: usize },
    #[error("spectrum is degenerate (all eigenvalues zero)")]
    DegenerateSpectrum,
    #[error("spectrum has {n} eigenvalues, need at least {need}")]
    TooFewEigenvalues { n: usize, need: usize },
    #[error("histogram needs at least 2 bins, got {0}")]
    BadBins(usize),
    #[error("power iteration did not converge in {iters} iterations (residual {residual:e})")]
    NoConvergence { iters: usize, residual: f64 },
    #[error("invalid power-iteration parameters: tol={tol}, max_iter={max_iter}")]
    BadIterParams { tol: f64, max_iter: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LambdaMinPolicy {
    #[default]
    Median,
    GoodnessOfFit,
    FixFinger {
        histogram_bins: usize,
    },
}

impl LambdaMinPolicy {
    pub const DEFAULT_BINS: usize = 100;

    pub fn fix_finger() -> Self {
        LambdaMinPolicy::FixFinger {
            histogram_bins: Self::DEFAULT_BINS,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LambdaMinPolicy::Median => "median",
            LambdaMinPolicy::GoodnessOfFit => "ks",
            LambdaMinPolicy::FixFinger { .. } => "fixfinger",
        }
    }
}

/// Per-layer heavy-tail metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMetrics {
    /// Hill tail exponent; `f64::INFINITY` when the fitted tail is perfectly flat.
    pub alpha_hill: f64,
    pub k: usize,
    /// The threshold eigenvalue `λ_{n-k}`.
    pub lambda_min: f64,
    /// Largest ESD eigenvalue.
    pub spectral_norm: f64,
    pub alpha_weighted: f64,
    pub source_name: String,
    pub n: usize,
    pub m: usize,
}

/// Hill estimate `1 + k / Σ_{i=1..k} ln(λ_{n-i+1} / λ_{n-k})` over ascending
/// eigenvalues. A zero log-sum (flat tail) yields `f64::INFINITY`.
pub fn hill_alpha(esd: &Esd, k: usize) -> Result<f64, HtsrError> {
    hill_alpha_sorted(esd.eigenvalues(), k)
}

pub(crate) fn hill_alpha_sorted(eig: &[f64], k: usize) -> Result<f64, HtsrError> {
    let n = eig.len();
    if k == 0 || k >= n {
        return Err(HtsrError::KOutOfRange { k, n });
    }
    let threshold = eig[n - k - 1];
    if threshold <= 0.0 {
        return Err(HtsrError::DegenerateThreshold { k });
    }
    let log_sum: f64 = eig[n - k..].iter().map(|&l| (l / threshold).ln()).sum();
    if log_sum == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(1.0 + k as f64 / log_sum)
}

/// Kolmogorov–Smirnov distance of the top-`k` tail against the continuous
/// power law with exponent `alpha` and threshold `λ_{n-k}`. The ECDF is
/// evaluated at each tail point as `i/k`.
pub fn ks_distance(eig: &[f64], k: usize, alpha: f64) -> f64 {
    let n = eig.len();
    let xmin = eig[n - k - 1];
    let tail = &eig[n - k..];
    tail.iter()
        .enumerate()
        .map(|(i, &x)| {
            let model = 1.0 - (x / xmin).powf(1.0 - alpha);
            let emp = (i + 1) as f64 / k as f64;
            (emp - model).abs()
        })
        .fold(0.0, f64::max)
}

pub fn select_k(esd: &Esd, policy: LambdaMinPolicy) -> Result<usize, HtsrError> {
    let eig = esd.eigenvalues();
    let n = eig.len();
    if esd.lambda_max() <= 0.0 {
        return Err(HtsrError::DegenerateSpectrum);
    }
    match policy {
        LambdaMinPolicy::Median => {
            if n < 2 {
                return Err(HtsrError::TooFewEigenvalues { n, need: 2 });
            }
            Ok(n / 2)
        }
        LambdaMinPolicy::GoodnessOfFit => {
            if n < 4 {
                return Err(HtsrError::TooFewEigenvalues { n, need: 4 });
            }
            let mut best: Option<(usize, f64)> = None;
            for k in 2..n {
                let alpha = match hill_alpha_sorted(eig, k) {
                    Ok(a) if a.is_finite() => a,
                    _ => continue,
                };
                let d = ks_distance(eig, k, alpha);
                // `<=` walks k upward, so ties resolve toward larger k
                if best.is_none_or(|(_, bd)| d <= bd) {
                    best = Some((k, d));
                }
            }
            best.map(|(k, _)| k).ok_or(HtsrError::DegenerateSpectrum)
        }
        LambdaMinPolicy::FixFinger { histogram_bins } => {
            if histogram_bins < 2 {
                return Err(HtsrError::BadBins(histogram_bins));
            }
            if n < 4 {
                return Err(HtsrError::TooFewEigenvalues { n, need: 4 });
            }
            let peak = histogram_peak_edge(eig, histogram_bins);
            let above = eig.iter().filter(|&&l| l > peak).count();
            Ok(above.clamp(2, n - 1))
        }
    }
}

/// Equal-width histogram of `log10(λ)` over the positive eigenvalues.
/// Returns `(edges, counts)` with `edges.len() == bins + 1`.
pub fn log10_histogram(eig: &[f64], bins: usize) -> (Vec<f64>, Vec<usize>) {
    let logs: Vec<f64> = eig.iter().filter(|&&l| l > 0.0).map(|l| l.log10()).collect();
    if logs.is_empty() || bins == 0 {
        return (Vec::new(), Vec::new());
    }
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * width).collect();
    let mut counts = vec![0usize; bins];
    for &x in &logs {
        let idx = (((x - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    (edges, counts)
}

/// Upper edge (in eigenvalue units) of the most populated log-histogram bin;
/// ties go to the bin at smaller λ.
fn histogram_peak_edge(eig: &[f64], bins: usize) -> f64 {
    let (edges, counts) = log10_histogram(eig, bins);
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    10f64.powf(edges[best + 1])
}

pub fn layer_metrics(esd: &Esd, policy: LambdaMinPolicy) -> Result<LayerMetrics, HtsrError> {
    if esd.is_empty() {
        return Err(HtsrError::TooFewEigenvalues { n: 0, need: 2 });
    }
    let k = select_k(esd, policy)?;
    let alpha_hill = hill_alpha(esd, k)?;
    let eig = esd.eigenvalues();
    let spectral_norm = esd.lambda_max();
    // a flat tail at λmax = 1 would otherwise give inf * 0
    let alpha_weighted = if alpha_hill.is_infinite() {
        f64::INFINITY
    } else {
        alpha_hill * spectral_norm.log10()
    };
    Ok(LayerMetrics {
        alpha_hill,
        k,
        lambda_min: eig[eig.len() - k - 1],
        spectral_norm,
        alpha_weighted,
        source_name: esd.source_name.clone(),
        n: esd.n,
        m: esd.m,
    })
}

pub const POWER_ITER_TOL: f64 = 1e-7;
pub const POWER_ITER_MAX: usize = 100;

/// Top singular triplet `(σ, u, v)` with `W v = σ u`.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularTriplet {
    pub sigma: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub iterations: usize,
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Power iteration for the top singular value, started from the normalized
/// all-ones vector. Converged when `‖Wᵀu − σv‖ ≤ tol·σ`; `W v = σ u` holds
/// by construction on return.
pub fn power_iteration_sigma(
    mat: &OrientedMatrix,
    tol: f64,
    max_iter: usize,
) -> Result<SingularTriplet, HtsrError> {
    if !(tol > 0.0) || max_iter == 0 {
        return Err(HtsrError::BadIterParams { tol, max_iter });
    }
    let n = mat.rows();
    let m = mat.cols();
    let mut u = vec![1.0 / (n as f64).sqrt(); n];
    let mut residual = f64::INFINITY;

    for iter in 1..=max_iter {
        let mut v = mat.mul_vec_t(&u);
        let vn = norm(&v);
        if vn == 0.0 {
            // Wᵀu = 0 from the start only happens for a zero matrix, or when u
            // is orthogonal to the row space; restart from a basis vector.
            if mat.values().iter().all(|&x| x == 0.0) {
                let mut v0 = vec![0.0; m];
                v0[0] = 1.0;
                return Ok(SingularTriplet {
                    sigma: 0.0,
                    u,
                    v: v0,
                    iterations: iter,
                });
            }
            u = vec![0.0; n];
            u[(iter - 1) % n] = 1.0;
            continue;
        }
        v.iter_mut().for_each(|x| *x /= vn);
        let mut wu = mat.mul_vec(&v);
        let sigma = norm(&wu);
        wu.iter_mut().for_each(|x| *x /= sigma);
        u = wu;
        // residual of the left relation Wᵀu = σv
        let wtu = mat.mul_vec_t(&u);
        residual = wtu
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - sigma * b).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual <= tol * sigma {
            return Ok(SingularTriplet {
                sigma,
                u,
                v,
                iterations: iter,
            });
        }
    }
    Err(HtsrError::NoConvergence {
        iters: max_iter,
        residual,
    })
}
