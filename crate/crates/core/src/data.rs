use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{svd_decompose, SvdFactors};

/// Relative tolerance for the numerical rank.
pub const RANK_TOL: f64 = 1e-10;

/// Immutable n×d data matrix with cached spectral information.
///
/// When built with [`DataMatrix::with_bias`] the last column is all ones and
/// bias terms live in the last coordinate of every first-layer weight.
#[derive(Debug, Clone)]
pub struct DataMatrix {
    values: DMatrix<f64>,
    bias_augmented: bool,
    svd: SvdFactors,
}

impl DataMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        Self::build(values, false)
    }

    /// Appends a column of ones to `features`.
    pub fn with_bias(features: DMatrix<f64>) -> Result<Self> {
        let (n, d) = features.shape();
        let mut values = features.resize_horizontally(d + 1, 1.0);
        for i in 0..n {
            values[(i, d)] = 1.0;
        }
        Self::build(values, true)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(matrix_from_rows(rows)?)
    }

    fn build(values: DMatrix<f64>, bias_augmented: bool) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Data("data matrix must be non-empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("data matrix contains NaN or infinite entries".into()));
        }
        let svd = svd_decompose(&values, RANK_TOL)?;
        Ok(Self { values, bias_augmented, svd })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Raw features without the appended ones column.
    pub fn features(&self) -> DMatrix<f64> {
        if self.bias_augmented {
            self.values.columns(0, self.values.ncols() - 1).into_owned()
        } else {
            self.values.clone()
        }
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_bias_augmented(&self) -> bool {
        self.bias_augmented
    }

    pub fn rank(&self) -> usize {
        self.svd.rank
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.svd.sigma
    }

    pub fn svd(&self) -> &SvdFactors {
        &self.svd
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.values.row(i).transpose()
    }

    /// Rows selected by index, keeping the bias flag.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        Self::build(self.values.select_rows(idx), self.bias_augmented)
    }
}

/// Labels as an n×C matrix; scalar regression uses C = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelData {
    values: DMatrix<f64>,
}

impl LabelData {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("labels contain NaN or infinite entries".into()));
        }
        Ok(Self { values })
    }

    pub fn scalar(y: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_column_slice(y.len(), 1, y))
    }

    pub fn from_vector(y: DVector<f64>) -> Result<Self> {
        let n = y.len();
        Self::new(DMatrix::from_column_slice(n, 1, y.as_slice()))
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, j: usize) -> DVector<f64> {
        self.values.column(j).into_owned()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self { values: self.values.select_rows(idx) }
    }

    pub fn check_rows(&self, n: usize) -> Result<()> {
        if self.nrows() != n {
            return Err(Error::Shape(format!(
                "labels have {} rows but data has {n}",
                self.nrows()
            )));
        }
        Ok(())
    }
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("ragged rows".into()));
    }
    Ok(DMatrix::from_fn(n, d, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bias_column_is_appended() {
        let x = DMatrix::from_column_slice(3, 1, &[-1.0, 0.0, 2.0]);
        let data = DataMatrix::with_bias(x.clone()).unwrap();
        assert_eq!(data.ncols(), 2);
        assert!(data.is_bias_augmented());
        assert_eq!(data.values()[(2, 1)], 1.0);
        assert_eq!(data.features(), x);
        assert_eq!(data.rank(), 2);
    }

    #[test]
    fn rejects_nan() {
        let x = DMatrix::from_column_slice(2, 1, &[f64::NAN, 1.0]);
        assert!(DataMatrix::new(x).is_err());
        assert!(LabelData::scalar(&[f64::INFINITY]).is_err());
    }
}
