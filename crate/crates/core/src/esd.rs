//! Empirical spectral densities of layer weight matrices.
//!
//! A layer is first flattened to 2-D (`out × in·kh·kw` for convolutions) and
//! oriented so that `n ≤ m`. Its ESD is the ascending list of the `n`
//! eigenvalues of `W Wᵀ`, obtained as squared singular values of `W`.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::weight_store::LayerTensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EsdError {
    #[error("layer {name:?}: expected 2 or 4 dims, got {ndims}")]
    BadRank { name: String, ndims: usize },
    #[error("layer {name:?}: zero-sized dimension")]
    ZeroDim { name: String },
    #[error("layer {name:?}: {len} values do not fill a {rows}x{cols} matrix")]
    Shape {
        name: String,
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error("layer {name:?}: non-finite weight at flat index {index}")]
    NonFinite { name: String, index: usize },
    #[error("layer {name:?}: eigenvalue {value} is negative beyond roundoff")]
    Numerical { name: String, value: f64 },
    #[error("layer {name:?}: squared singular values overflow")]
    Overflow { name: String },
}

/// A 2-D weight matrix with `rows ≤ cols`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientedMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    pub source_name: String,
    /// True when the flattened layer had more rows than columns and was transposed.
    pub transposed: bool,
}

impl OrientedMatrix {
    /// Builds an oriented matrix from a row-major `rows × cols` buffer,
    /// transposing when `rows > cols`.
    pub fn from_row_major(
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        values: Vec<f64>,
    ) -> Result<Self, EsdError> {
        let name = name.into();
        if rows == 0 || cols == 0 {
            return Err(EsdError::ZeroDim { name });
        }
        if rows.checked_mul(cols) != Some(values.len()) {
            return Err(EsdError::Shape {
                name,
                rows,
                cols,
                len: values.len(),
            });
        }
        if rows <= cols {
            return Ok(OrientedMatrix {
                rows,
                cols,
                values,
                source_name: name,
                transposed: false,
            });
        }
        let mut t = vec![0.0; values.len()];
        for r in 0..rows {
            for c in 0..cols {
                t[c * rows + r] = values[r * cols + c];
            }
        }
        Ok(OrientedMatrix {
            rows: cols,
            cols: rows,
            values: t,
            source_name: name,
            transposed: true,
        })
    }

    pub fn from_dmatrix(name: impl Into<String>, mat: &DMatrix<f64>) -> Result<Self, EsdError> {
        let (r, c) = mat.shape();
        let values = (0..r)
            .flat_map(|i| (0..c).map(move |j| (i, j)))
            .map(|(i, j)| mat[(i, j)])
            .collect();
        Self::from_row_major(name, r, c, values)
    }

    /// `n`, the smaller dimension.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// `m`, the larger dimension.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.values)
    }

    /// `W x` for `x` of length `m`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.values
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `Wᵀ y` for `y` of length `n`.
    pub fn mul_vec_t(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (row, &yi) in self.values.chunks_exact(self.cols).zip(y) {
            if yi == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * yi;
            }
        }
        out
    }

    pub fn scaled(&self, c: f64) -> Self {
        OrientedMatrix {
            values: self.values.iter().map(|v| v * c).collect(),
            ..self.clone()
        }
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Maps an `n × m` matrix in oriented coordinates back to the flattened
    /// layout of the source layer (row-major over the layer's own dims).
    pub fn to_layer_layout(&self, oriented: &[f64]) -> Vec<f64> {
        debug_assert_eq!(oriented.len(), self.values.len());
        if !self.transposed {
            return oriented.to_vec();
        }
        let (n, m) = (self.rows, self.cols);
        let mut out = vec![0.0; oriented.len()];
        for r in 0..n {
            for c in 0..m {
                out[c * n + r] = oriented[r * m + c];
            }
        }
        out
    }
}

/// Flattens a dense or convolutional layer to 2-D and orients it.
pub fn orient(layer: &LayerTensor) -> Result<OrientedMatrix, EsdError> {
    let (rows, cols) = match layer.dims.as_slice() {
        [r, c] => (*r, *c),
        [out, inp, kh, kw] => (*out, inp * kh * kw),
        other => {
            return Err(EsdError::BadRank {
                name: layer.name.clone(),
                ndims: other.len(),
            })
        }
    };
    if layer.dims.contains(&0) {
        return Err(EsdError::ZeroDim {
            name: layer.name.clone(),
        });
    }
    OrientedMatrix::from_row_major(layer.name.clone(), rows, cols, layer.values.clone())
}

/// Ascending eigenvalues of a layer correlation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Esd {
    eigenvalues: Vec<f64>,
    pub source_name: String,
    pub n: usize,
    pub m: usize,
}

impl Esd {
    /// Wraps an externally computed spectrum. Values are sorted ascending;
    /// negatives and non-finite values are rejected.
    pub fn from_eigenvalues(
        name: impl Into<String>,
        mut eigenvalues: Vec<f64>,
        m: usize,
    ) -> Result<Self, EsdError> {
        let name = name.into();
        if let Some(&bad) = eigenvalues.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(EsdError::Numerical { name, value: bad });
        }
        eigenvalues.sort_by(f64::total_cmp);
        let n = eigenvalues.len();
        Ok(Esd {
            eigenvalues,
            source_name: name,
            n,
            m: m.max(n),
        })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Largest eigenvalue (0 for an empty spectrum).
    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }
}

/// Relative magnitude below which negative eigenvalues count as roundoff.
pub const CLAMP_REL_TOL: f64 = 1e-12;

pub fn compute_esd(mat: &OrientedMatrix) -> Result<Esd, EsdError> {
    if let Some(index) = mat.values.iter().position(|v| !v.is_finite()) {
        return Err(EsdError::NonFinite {
            name: mat.source_name.clone(),
            index,
        });
    }
    let sv = mat.to_dmatrix().singular_values();
    let mut eig: Vec<f64> = sv.iter().map(|s| s * s).collect();
    if eig.iter().any(|v| !v.is_finite()) {
        return Err(EsdError::Overflow {
            name: mat.source_name.clone(),
        });
    }
    clamp_roundoff(&mut eig, &mat.source_name)?;
    eig.sort_by(f64::total_cmp);
    Ok(Esd {
        eigenvalues: eig,
        source_name: mat.source_name.clone(),
        n: mat.rows,
        m: mat.cols,
    })
}

/// Clamps tiny negative eigenvalues to zero; larger negatives are an error.
pub fn clamp_roundoff(eig: &mut [f64], name: &str) -> Result<(), EsdError> {
    let max = eig.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    for v in eig.iter_mut() {
        if *v < 0.0 {
            if v.abs() < CLAMP_REL_TOL * max {
                *v = 0.0;
            } else {
                return Err(EsdError::Numerical {
                    name: name.to_string(),
                    value: *v,
                });
            }
        }
    }
    Ok(())
}

/// Convenience: orient a layer and compute its ESD.
pub fn layer_esd(layer: &LayerTensor) -> Result<Esd, EsdError> {
    compute_esd(&orient(layer)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn huge_weights_overflow() {
        let w = OrientedMatrix::from_row_major("big", 1, 2, vec![1e200, 0.0]).unwrap();
        assert!(matches!(compute_esd(&w), Err(EsdError::Overflow { .. })));
    }

    fn layer(dims: Vec<usize>) -> LayerTensor {
        let len = dims.iter().product::<usize>();
        LayerTensor::new(
            "l",
            dims,
            (0..len).map(|i| ((i * 7919) % 97) as f64 / 97.0 - 0.5).collect(),
        )
        .unwrap()
    }

    #[test]
    fn already_oriented() {
        let m = orient(&layer(vec![10, 72])).unwrap();
        assert_eq!((m.rows(), m.cols(), m.transposed), (10, 72, false));
    }

    #[test]
    fn tall_is_transposed() {
        let l = layer(vec![72, 10]);
        let m = orient(&l).unwrap();
        assert_eq!((m.rows(), m.cols(), m.transposed), (10, 72, true));
        assert_eq!(m.get(3, 5), l.values[5 * 10 + 3]);
        assert_eq!(m.to_layer_layout(m.values()), l.values);
    }

    #[test]
    fn conv_flattening() {
        let m = orient(&layer(vec![4, 2, 3, 3])).unwrap();
        assert_eq!((m.rows(), m.cols(), m.transposed), (4, 18, false));
        let tall = orient(&layer(vec![40, 1, 2, 2])).unwrap();
        assert_eq!((tall.rows(), tall.cols(), tall.transposed), (4, 40, true));
    }

    #[test]
    fn rejects_bad_layers() {
        let bad = LayerTensor {
            name: "x".into(),
            dims: vec![3],
            values: vec![0.0; 3],
        };
        assert!(matches!(orient(&bad), Err(EsdError::BadRank { .. })));
        let zero = LayerTensor {
            name: "z".into(),
            dims: vec![0, 3],
            values: vec![],
        };
        assert!(matches!(orient(&zero), Err(EsdError::ZeroDim { .. })));
    }

    #[test]
    fn diagonal_spectrum() {
        let m =
            OrientedMatrix::from_row_major("d", 2, 3, vec![3.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let esd = compute_esd(&m).unwrap();
        assert_eq!(esd.len(), 2);
        assert!((esd.eigenvalues()[0] - 1.0).abs() < 1e-12);
        assert!((esd.eigenvalues()[1] - 9.0).abs() < 1e-12);
    }

    #[test]
    fn zero_matrix() {
        let m = OrientedMatrix::from_row_major("z", 2, 5, vec![0.0; 10]).unwrap();
        assert_eq!(compute_esd(&m).unwrap().eigenvalues(), &[0.0, 0.0]);
    }

    #[test]
    fn non_finite_rejected() {
        let mut v = vec![1.0; 6];
        v[4] = f64::NAN;
        let m = OrientedMatrix::from_row_major("nan", 2, 3, v).unwrap();
        assert!(matches!(
            compute_esd(&m),
            Err(EsdError::NonFinite { index: 4, .. })
        ));
    }

    #[test]
    fn clamp_rules() {
        let mut ok = vec![-1e-14, 2.0];
        clamp_roundoff(&mut ok, "x").unwrap();
        assert_eq!(ok, vec![0.0, 2.0]);
        let mut bad = vec![-1e-3, 2.0];
        assert!(clamp_roundoff(&mut bad, "x").is_err());
    }
}
