//! Synthetic spectra for checking the Hill estimator against known answers.
//!
//! A square matrix whose decaying eigenvalues follow `λ_k = λ_1 k^{-s}` has an
//! ESD with power-law exponent `α = 1 + 1/s`; [`verify_s_alpha`] tabulates how
//! closely the Hill estimate tracks that prediction. [`spike_experiment`] adds
//! a rank-one update to a random bulk and checks whether an outlier eigenvalue
//! separates from it.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::esd::{compute_esd, Esd, EsdError, OrientedMatrix};
use crate::htsr::{hill_alpha, select_k, HtsrError, LambdaMinPolicy};

/// Relative tolerance on `|α̂ − (1 + 1/s)| / (1 + 1/s)` for gated cells.
pub const S_ALPHA_REL_TOL: f64 = 0.15;
/// Cells with smaller matrices are reported but not gated.
pub const MIN_GATED_Q: usize = 64;
/// Top eigenvalue must exceed this multiple of the second to count as a spike.
pub const SPIKE_RATIO: f64 = 3.0;

#[derive(Debug, Error)]
pub enum RmtError {
    #[error("matrix size {0} is below the minimum of 8")]
    TooSmall(usize),
    #[error("decay exponent must be finite and >= 0, got {0}")]
    BadExponent(f64),
    #[error("top eigenvalue must be positive, got {0}")]
    BadLambda1(f64),
    #[error("spike scale must be >= 0, got {0}")]
    BadSpikeScale(f64),
    #[error(transparent)]
    Esd(#[from] EsdError),
    #[error(transparent)]
    Htsr(#[from] HtsrError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlSpectrumSpec {
    pub q: usize,
    pub s: f64,
    pub lambda1: f64,
    pub seed: u64,
}

impl PlSpectrumSpec {
    pub fn new(q: usize, s: f64) -> Self {
        PlSpectrumSpec {
            q,
            s,
            lambda1: 1.0,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<(), RmtError> {
        if self.q < 8 {
            return Err(RmtError::TooSmall(self.q));
        }
        if !(self.s >= 0.0 && self.s.is_finite()) {
            return Err(RmtError::BadExponent(self.s));
        }
        if !(self.lambda1 > 0.0 && self.lambda1.is_finite()) {
            return Err(RmtError::BadLambda1(self.lambda1));
        }
        Ok(())
    }

    /// `λ_1 k^{-s}` for `k = 1..=Q`, descending.
    pub fn target_eigenvalues(&self) -> Vec<f64> {
        (1..=self.q)
            .map(|k| self.lambda1 * (k as f64).powf(-self.s))
            .collect()
    }
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `R`'s diagonal folded into `Q`.
pub fn haar_orthogonal(q: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(q, q, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let r = qr.r();
    let mut q_mat = qr.q();
    for j in 0..q {
        if r[(j, j)] < 0.0 {
            q_mat.column_mut(j).neg_mut();
        }
    }
    q_mat
}

/// The two orthogonal factors of a synthetic matrix, reusable across exponents.
#[derive(Debug, Clone)]
pub struct HaarFactors {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl HaarFactors {
    pub fn new(q: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = haar_orthogonal(q, &mut rng);
        let v = haar_orthogonal(q, &mut rng);
        HaarFactors { u, v }
    }

    pub fn q(&self) -> usize {
        self.u.nrows()
    }

    /// `U · diag(√λ) · Vᵀ`.
    pub fn compose(&self, eigenvalues: &[f64], name: &str) -> Result<OrientedMatrix, RmtError> {
        let root = DVector::from_iterator(eigenvalues.len(), eigenvalues.iter().map(|l| l.sqrt()));
        let mut scaled_u = self.u.clone();
        for (j, mut col) in scaled_u.column_iter_mut().enumerate() {
            col *= root[j];
        }
        let w = scaled_u * self.v.transpose();
        Ok(OrientedMatrix::from_dmatrix(name, &w)?)
    }
}

pub fn synth_pl_matrix(spec: &PlSpectrumSpec) -> Result<OrientedMatrix, RmtError> {
    spec.validate()?;
    let factors = HaarFactors::new(spec.q, spec.seed);
    factors.compose(
        &spec.target_eigenvalues(),
        &format!("pl_q{}_s{}", spec.q, spec.s),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct SAlphaRow {
    pub q: usize,
    pub s: f64,
    pub alpha_hill: f64,
    pub alpha_pred: f64,
    pub rel_err: f64,
}

impl SAlphaRow {
    pub fn gated(&self) -> bool {
        self.q >= MIN_GATED_Q
    }

    pub fn passes(&self) -> bool {
        !self.gated() || self.rel_err <= S_ALPHA_REL_TOL
    }
}

/// Synthesizes one matrix per exponent, fits `α` with `k = ⌊Q/2⌋`, and
/// compares against `1 + 1/s`. All cells share one pair of orthogonal factors.
pub fn verify_s_alpha(q: usize, s_grid: &[f64], seed: u64) -> Result<Vec<SAlphaRow>, RmtError> {
    if q < 8 {
        return Err(RmtError::TooSmall(q));
    }
    if let Some(&bad) = s_grid.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(RmtError::BadExponent(bad));
    }
    let factors = HaarFactors::new(q, seed);
    s_grid
        .par_iter()
        .map(|&s| {
            let spec = PlSpectrumSpec {
                q,
                s,
                lambda1: 1.0,
                seed,
            };
            let w = factors.compose(&spec.target_eigenvalues(), "pl")?;
            let esd = compute_esd(&w)?;
            let k = select_k(&esd, LambdaMinPolicy::Median)?;
            let alpha_hill = hill_alpha(&esd, k)?;
            let alpha_pred = 1.0 + 1.0 / s;
            Ok(SAlphaRow {
                q,
                s,
                alpha_hill,
                alpha_pred,
                rel_err: (alpha_hill - alpha_pred).abs() / alpha_pred,
            })
        })
        .collect()
}

pub fn mean_rel_err(rows: &[SAlphaRow]) -> f64 {
    rows.iter().map(|r| r.rel_err).sum::<f64>() / rows.len().max(1) as f64
}

pub const S_ALPHA_CSV_HEADER: &str = "Q,s,alpha_hill,alpha_pred,rel_err";

pub fn write_s_alpha_csv<W: Write>(rows: &[SAlphaRow], mut out: W) -> io::Result<()> {
    writeln!(out, "{S_ALPHA_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.q, r.s, r.alpha_hill, r.alpha_pred, r.rel_err
        )?;
    }
    Ok(())
}

/// I.i.d. Gaussian `n × m` matrix with the given entry standard deviation.
pub fn gaussian_bulk(n: usize, m: usize, std: f64, seed: u64) -> Result<OrientedMatrix, RmtError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..n * m)
        .map(|_| std * Distribution::<f64>::sample(&StandardNormal, &mut rng))
        .collect();
    Ok(OrientedMatrix::from_row_major("bulk", n, m, values)?)
}

fn unit_vector(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..len).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpikeOutcome {
    pub esd_before: Esd,
    pub esd_after: Esd,
    pub spike_detected: bool,
}

/// Adds `spike_scale · a bᵀ` (seeded unit vectors) to `bulk` and reports
/// whether the top eigenvalue separates by more than [`SPIKE_RATIO`].
pub fn spike_experiment(
    bulk: &OrientedMatrix,
    spike_scale: f64,
    seed: u64,
) -> Result<SpikeOutcome, RmtError> {
    if !(spike_scale >= 0.0 && spike_scale.is_finite()) {
        return Err(RmtError::BadSpikeScale(spike_scale));
    }
    let (n, m) = (bulk.rows(), bulk.cols());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = unit_vector(n, &mut rng);
    let b = unit_vector(m, &mut rng);
    let values: Vec<f64> = bulk
        .values()
        .iter()
        .enumerate()
        .map(|(idx, &w)| w + spike_scale * a[idx / m] * b[idx % m])
        .collect();
    let spiked = OrientedMatrix::from_row_major(bulk.source_name.clone(), n, m, values)?;

    let esd_before = compute_esd(bulk)?;
    let esd_after = if spike_scale == 0.0 {
        esd_before.clone()
    } else {
        compute_esd(&spiked)?
    };
    let eig = esd_after.eigenvalues();
    let top = esd_after.lambda_max();
    let second = if eig.len() >= 2 { eig[eig.len() - 2] } else { 0.0 };
    let spike_detected = top > 0.0 && top > SPIKE_RATIO * second;
    Ok(SpikeOutcome {
        esd_before,
        esd_after,
        spike_detected,
    })
}
