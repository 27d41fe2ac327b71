//! Thin helpers over `faer` shared by the simulators.

use faer::linalg::matmul::matmul;
use faer::{Accum, Col, ColRef, Mat, MatRef, Par, Side};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Relative residual tolerance for every symmetric positive-definite solve.
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;

/// `rows x cols` matrix of i.i.d. `N(0, scale^2)` entries, drawn in row-major
/// order (one row is one sample).
pub fn gaussian_matrix<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    scale: f64,
) -> Mat<f64> {
    let draws: Vec<f64> = (0..rows * cols)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Mat::from_fn(rows, cols, |i, j| draws[i * cols + j])
}

/// Vector of i.i.d. `N(0, scale^2)` entries.
pub fn gaussian_col<R: Rng + ?Sized>(rng: &mut R, len: usize, scale: f64) -> Col<f64> {
    let draws: Vec<f64> = (0..len)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Col::from_fn(len, |i| draws[i])
}

/// `alpha * lhs * rhs`.
pub fn product(lhs: MatRef<'_, f64>, rhs: MatRef<'_, f64>, alpha: f64) -> Mat<f64> {
    let mut out = Mat::zeros(lhs.nrows(), rhs.ncols());
    matmul(out.as_mut(), Accum::Replace, lhs, rhs, alpha, Par::Seq);
    out
}

/// Sample covariance `X^T X / n` of an `n x d` design.
pub fn gram(features: MatRef<'_, f64>) -> Mat<f64> {
    let n = features.nrows() as f64;
    product(features.transpose(), features, 1.0 / n)
}

/// `M v`.
pub fn mat_vec(m: MatRef<'_, f64>, v: ColRef<'_, f64>) -> Col<f64> {
    let out = product(m, v.as_mat(), 1.0);
    out.col(0).to_owned()
}

/// `M^T v`.
pub fn mat_t_vec(m: MatRef<'_, f64>, v: ColRef<'_, f64>) -> Col<f64> {
    let out = product(m.transpose(), v.as_mat(), 1.0);
    out.col(0).to_owned()
}

pub fn dot(a: ColRef<'_, f64>, b: ColRef<'_, f64>) -> f64 {
    debug_assert_eq!(a.nrows(), b.nrows());
    (0..a.nrows()).map(|i| a[i] * b[i]).sum()
}

pub fn norm(a: ColRef<'_, f64>) -> f64 {
    dot(a, a).sqrt()
}

pub fn distance_squared(a: ColRef<'_, f64>, b: ColRef<'_, f64>) -> f64 {
    debug_assert_eq!(a.nrows(), b.nrows());
    (0..a.nrows()).map(|i| (a[i] - b[i]).powi(2)).sum()
}

/// Cholesky factor of a symmetric positive-definite matrix, kept together
/// with the matrix so every solve can be residual-checked.
pub struct SpdSystem {
    matrix: Mat<f64>,
    factor: faer::linalg::solvers::Llt<f64>,
}

impl SpdSystem {
    pub fn new(matrix: Mat<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                actual: matrix.ncols(),
            });
        }
        let factor = matrix
            .llt(Side::Lower)
            .map_err(|e| Error::SingularSystem(format!("Cholesky factorization failed: {e:?}")))?;
        Ok(SpdSystem { matrix, factor })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Solves `A X = B` column by column and checks
    /// `||A x - b|| <= RESIDUAL_TOLERANCE * ||b||` for every column.
    pub fn solve(&self, rhs: MatRef<'_, f64>) -> Result<Mat<f64>> {
        use faer::linalg::solvers::Solve;
        if rhs.nrows() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: rhs.nrows(),
            });
        }
        let solution = self.factor.solve(rhs);
        let applied = product(self.matrix.as_ref(), solution.as_ref(), 1.0);
        for j in 0..rhs.ncols() {
            let scale = norm(rhs.col(j));
            let residual = distance_squared(applied.col(j), rhs.col(j)).sqrt();
            if residual.is_nan() || residual > RESIDUAL_TOLERANCE * scale.max(f64::MIN_POSITIVE) {
                return Err(Error::SingularSystem(format!(
                    "normal-equation residual {residual:.3e} exceeds {RESIDUAL_TOLERANCE:e} x {scale:.3e}"
                )));
            }
        }
        Ok(solution)
    }

    pub fn solve_col(&self, rhs: ColRef<'_, f64>) -> Result<Col<f64>> {
        let solution = self.solve(rhs.as_mat())?;
        Ok(solution.col(0).to_owned())
    }
}

/// `A + shift * I`.
pub fn shifted(a: MatRef<'_, f64>, shift: f64) -> Mat<f64> {
    let mut out = a.to_owned();
    for i in 0..out.nrows() {
        out[(i, i)] += shift;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spd_solve_recovers_known_solution() {
        let a = Mat::from_fn(3, 3, |i, j| if i == j { 4.0 } else { 1.0 });
        let x = Col::from_fn(3, |i| i as f64 + 1.0);
        let b = mat_vec(a.as_ref(), x.as_ref());
        let sys = SpdSystem::new(a).unwrap();
        let got = sys.solve_col(b.as_ref()).unwrap();
        for i in 0..3 {
            assert!((got[i] - x[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let a = Mat::from_fn(2, 2, |i, j| if i == j { 1.0 } else { 2.0 });
        assert!(matches!(SpdSystem::new(a), Err(Error::SingularSystem(_))));
    }

    #[test]
    fn gaussian_matrix_is_row_major_draw_order() {
        use crate::seeding::{stream_rng, Stream};
        let full = gaussian_matrix(&mut stream_rng(3, Stream::Features), 4, 3, 1.0);
        let mut rng = stream_rng(3, Stream::Features);
        let top = gaussian_matrix(&mut rng, 2, 3, 1.0);
        let bottom = gaussian_matrix(&mut rng, 2, 3, 1.0);
        for j in 0..3 {
            for i in 0..2 {
                assert_eq!(full[(i, j)], top[(i, j)]);
                assert_eq!(full[(i + 2, j)], bottom[(i, j)]);
            }
        }
    }
}
