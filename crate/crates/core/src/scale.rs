//! Isotropic scale `gamma` or lower-triangular scale matrix `L`.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Lower-triangular matrix with a strictly positive diagonal, so always invertible
/// by back-substitution. A covariance `S` enters through its Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular<T> {
    matrix: Array2<T>,
    inverse: Array2<T>,
}

impl<T: Scalar> LowerTriangular<T> {
    pub fn new(matrix: Array2<T>) -> Result<Self> {
        let (rows, cols) = matrix.dim();
        if rows != cols {
            return Err(Error::DimensionMismatch { expected: rows, got: cols });
        }
        if rows == 0 {
            return Err(Error::NoDimensions);
        }
        for ((i, j), &v) in matrix.indexed_iter() {
            if !v.is_finite() || (j > i && v != T::zero()) || (i == j && !(v > T::zero())) {
                return Err(Error::SingularScaleMatrix);
            }
        }
        let inverse = lower_inverse(&matrix);
        Ok(Self { matrix, inverse })
    }

    pub fn diagonal(values: &[T]) -> Result<Self> {
        Self::new(Array2::from_diag(&Array1::from(values.to_vec())))
    }

    pub fn scaled_identity(n: usize, gamma: T) -> Result<Self> {
        Self::new(Array2::from_diag_elem(n, gamma))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &Array2<T> {
        &self.matrix
    }

    /// `L^{-1}`, itself lower-triangular.
    pub fn inverse(&self) -> &Array2<T> {
        &self.inverse
    }

    pub fn scaled(&self, factor: T) -> Result<Self> {
        Self::new(self.matrix.mapv(|v| v * factor))
    }
}

fn lower_inverse<T: Scalar>(l: &Array2<T>) -> Array2<T> {
    let n = l.nrows();
    let mut inv = Array2::zeros((n, n));
    for col in 0..n {
        // Forward substitution for L y = e_col.
        for i in col..n {
            let mut acc = if i == col { T::one() } else { T::zero() };
            for k in col..i {
                acc -= l[[i, k]] * inv[[k, col]];
            }
            inv[[i, col]] = acc / l[[i, i]];
        }
    }
    inv
}

/// How perturbations are scaled before being added to `x`.
#[derive(Debug, Clone, PartialEq)]
pub enum Scale<T> {
    Scalar(T),
    Matrix(LowerTriangular<T>),
}

impl<T: Scalar> Scale<T> {
    pub fn scalar(gamma: T) -> Result<Self> {
        if gamma.is_finite() && gamma > T::zero() {
            Ok(Scale::Scalar(gamma))
        } else {
            Err(Error::InvalidScale(gamma.to_f64().unwrap_or(f64::NAN)))
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            Scale::Scalar(g) => Scale::scalar(*g).map(|_| ()),
            Scale::Matrix(l) if l.dim() != n => Err(Error::DimensionMismatch { expected: n, got: l.dim() }),
            Scale::Matrix(_) => Ok(()),
        }
    }

    /// Writes `x + scale * eps` into `out`.
    pub fn perturb(&self, x: ArrayView1<T>, eps: ArrayView1<T>, out: &mut [T]) {
        match self {
            Scale::Scalar(g) => {
                for ((o, &xi), &e) in out.iter_mut().zip(x.iter()).zip(eps.iter()) {
                    *o = xi + *g * e;
                }
            }
            Scale::Matrix(l) => {
                let m = l.matrix();
                for (i, o) in out.iter_mut().enumerate() {
                    let mut acc = x[i];
                    for j in 0..=i {
                        acc += m[[i, j]] * eps[j];
                    }
                    *o = acc;
                }
            }
        }
    }

    /// The equivalent matrix scale (`gamma * I` for scalars).
    pub fn to_matrix(&self, n: usize) -> Result<LowerTriangular<T>> {
        match self {
            Scale::Scalar(g) => LowerTriangular::scaled_identity(n, *g),
            Scale::Matrix(l) => Ok(l.clone()),
        }
    }

    pub fn scaled(&self, factor: T) -> Result<Self> {
        match self {
            Scale::Scalar(g) => Scale::scalar(*g * factor),
            Scale::Matrix(l) => Ok(Scale::Matrix(l.scaled(factor)?)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn inverse_is_exact_for_triangular() {
        let l = LowerTriangular::<f64>::new(array![[2.0, 0.0, 0.0], [0.5, 1.0, 0.0], [-1.0, 3.0, 4.0]]).unwrap();
        let prod = l.matrix().dot(l.inverse());
        for ((i, j), v) in prod.indexed_iter() {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_bad_matrices() {
        assert_eq!(LowerTriangular::new(array![[1.0, 0.1], [0.0, 1.0]]), Err(Error::SingularScaleMatrix));
        assert_eq!(LowerTriangular::new(array![[1.0, 0.0], [0.3, 0.0]]), Err(Error::SingularScaleMatrix));
        assert_eq!(LowerTriangular::new(array![[-1.0]]), Err(Error::SingularScaleMatrix));
        assert!(Scale::scalar(0.0).is_err());
        assert!(Scale::scalar(f64::NAN).is_err());
    }

    #[test]
    fn perturb_applies_scale() {
        let x = array![1.0, 2.0];
        let e = array![0.5, -1.0];
        let mut out = [0.0; 2];
        Scale::scalar(2.0).unwrap().perturb(x.view(), e.view(), &mut out);
        assert_eq!(out, [2.0, 0.0]);
        let l = LowerTriangular::<f64>::new(array![[2.0, 0.0], [1.0, 3.0]]).unwrap();
        Scale::Matrix(l).perturb(x.view(), e.view(), &mut out);
        assert_eq!(out, [2.0, -0.5]);
    }
}
