//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Eigenvalues of a symmetric `n × n` row-major matrix by cyclic Jacobi
/// rotations, ascending.
pub fn jacobi_eigenvalues(mut a: Vec<f64>, n: usize) -> Vec<f64> {
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        let diag: f64 = (0..n).map(|i| a[i * n + i] * a[i * n + i]).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    eig.sort_by(f64::total_cmp);
    eig
}

/// Element `(r, c)` of a layer viewed as `dims[0] × prod(dims[1..])`,
/// computed from the multi-index rather than the flat position.
pub fn layer_entry(dims: &[usize], values: &[f64], r: usize, c: usize) -> f64 {
    let mut idx = vec![r];
    let mut rest = c;
    let mut tail = Vec::new();
    for &d in dims[1..].iter().rev() {
        tail.push(rest % d);
        rest /= d;
    }
    idx.extend(tail.into_iter().rev());
    let mut flat = 0;
    for (i, &d) in idx.iter().zip(dims) {
        flat = flat * d + i;
    }
    values[flat]
}

/// ESD oracle: eigenvalues of the smaller Gram matrix of the reshaped layer.
pub fn esd_oracle(dims: &[usize], values: &[f64]) -> Vec<f64> {
    let rows = dims[0];
    let cols: usize = dims[1..].iter().product();
    let get = |r, c| layer_entry(dims, values, r, c);
    let (n, gram) = if rows <= cols {
        let mut g = vec![0.0; rows * rows];
        for i in 0..rows {
            for j in 0..rows {
                g[i * rows + j] = (0..cols).map(|k| get(i, k) * get(j, k)).sum();
            }
        }
        (rows, g)
    } else {
        let mut g = vec![0.0; cols * cols];
        for i in 0..cols {
            for j in 0..cols {
                g[i * cols + j] = (0..rows).map(|k| get(k, i) * get(k, j)).sum();
            }
        }
        (cols, g)
    };
    jacobi_eigenvalues(gram, n)
}

/// The Hill formula written out term by term over an ascending spectrum.
pub fn hill_direct(eig: &[f64], k: usize) -> f64 {
    let n = eig.len();
    let threshold = eig[n - k - 1];
    let mut sum = 0.0;
    for i in 1..=k {
        sum += (eig[n - i] / threshold).ln();
    }
    1.0 + k as f64 / sum
}

/// Central difference of `f` at `x` along coordinate `i`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut p = x.to_vec();
    p[i] += h;
    let mut m = x.to_vec();
    m[i] -= h;
    (f(&p) - f(&m)) / (2.0 * h)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Random ascending positive spectrum with log-uniform magnitudes.
pub fn random_spectrum(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.random_range(-3.0..3.0))).collect();
    v.sort_by(f64::total_cmp);
    v
}

pub fn random_matrix(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Largest singular value of a row-major matrix, from the Jacobi oracle.
pub fn top_singular_value(rows: usize, cols: usize, values: &[f64]) -> f64 {
    esd_oracle(&[rows, cols], values).last().copied().unwrap_or(0.0).max(0.0).sqrt()
}
