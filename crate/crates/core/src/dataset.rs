use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// An outcome vector paired with a design matrix.
///
/// The design carries whatever columns the caller wants in the regression —
/// if an intercept is desired it must be present as a column of ones. Column
/// names are kept for reporting; they default to `x1..xK`.
#[derive(Clone, Debug)]
pub struct Dataset {
    y: DVector<f64>,
    x: DMatrix<f64>,
    names: Vec<String>,
}

impl Dataset {
    /// Validates and wraps `(y, X)`. Requires finite entries, `n > K` and
    /// `K ≥ 1`.
    pub fn new(y: DVector<f64>, x: DMatrix<f64>) -> Result<Self> {
        let names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        Self::with_names(y, x, names)
    }

    /// Same as [`Dataset::new`] with explicit column names.
    pub fn with_names(y: DVector<f64>, x: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        let n = x.nrows();
        let k = x.ncols();
        if k == 0 {
            return Err(Error::EmptyInput { context: "design matrix has no columns".into() });
        }
        if y.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "y has {} rows, X has {n}",
                y.len()
            )));
        }
        if n <= k {
            return Err(Error::InvalidConfig(format!(
                "need more observations than regressors, got n = {n}, K = {k}"
            )));
        }
        if names.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "{} column names for {k} columns",
                names.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "outcome vector".into() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "design matrix".into() });
        }
        Ok(Dataset { y, x, names })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// A copy with a different outcome vector over the same design.
    pub fn with_outcome(&self, y: DVector<f64>) -> Result<Self> {
        Self::with_names(y, self.x.clone(), self.names.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes_and_values() {
        let x = DMatrix::from_element(3, 1, 1.0);
        assert!(Dataset::new(DVector::from_vec(vec![1.0, 2.0]), x.clone()).is_err());
        assert!(Dataset::new(DVector::from_vec(vec![1.0, f64::NAN, 2.0]), x.clone()).is_err());
        let bad = DMatrix::from_vec(3, 1, vec![1.0, f64::INFINITY, 1.0]);
        assert!(Dataset::new(DVector::from_vec(vec![1.0, 2.0, 3.0]), bad).is_err());
        // n must exceed K.
        let square = DMatrix::from_vec(2, 2, vec![1.0, 1.0, 0.0, 1.0]);
        assert!(Dataset::new(DVector::from_vec(vec![1.0, 2.0]), square).is_err());
        assert!(Dataset::new(DVector::from_vec(vec![1.0, 2.0, 3.0]), x).is_ok());
    }

    #[test]
    fn default_names_are_generated() {
        let x = DMatrix::from_element(4, 2, 1.0);
        let x = {
            let mut x = x;
            x[(0, 1)] = 0.0;
            x[(2, 1)] = 3.0;
            x
        };
        let d = Dataset::new(DVector::from_element(4, 1.0), x).unwrap();
        assert_eq!(d.names(), &["x1".to_string(), "x2".to_string()]);
    }
}
