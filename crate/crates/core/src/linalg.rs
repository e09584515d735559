//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

/// Default relative cutoff below which Gram eigenvalues are treated as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Outcome of a spectral solve against a symmetric PSD matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSolve {
    pub solution: DVector<f64>,
    /// Number of eigen-directions kept.
    pub rank: usize,
    /// Ratio of the largest to the smallest kept eigenvalue.
    pub condition: f64,
}

/// Solves `(A + reg I) x = rhs` for symmetric PSD `A` through its eigendecomposition.
///
/// With `reg == 0` this is the pseudo-inverse solution: eigenvalues at or
/// below `rel_tol * max_eigenvalue` are dropped.
pub fn spectral_solve(a: &DMatrix<f64>, rhs: &DVector<f64>, reg: f64, rel_tol: f64) -> SpectralSolve {
    let n = a.nrows();
    if n == 0 {
        return SpectralSolve {
            solution: DVector::zeros(0),
            rank: 0,
            condition: 1.0,
        };
    }
    let eig = SymmetricEigen::new(a.clone());
    let top = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = rel_tol.max(n as f64 * f64::EPSILON) * top;
    let coeffs = eig.eigenvectors.transpose() * rhs;
    let mut scaled = DVector::zeros(n);
    let mut rank = 0;
    let mut smallest = f64::INFINITY;
    for i in 0..n {
        let lam = eig.eigenvalues[i].max(0.0);
        let keep = if reg > 0.0 { true } else { lam > cutoff && lam > 0.0 };
        if keep {
            let shifted = lam + reg;
            scaled[i] = coeffs[i] / shifted;
            rank += 1;
            smallest = smallest.min(shifted);
        }
    }
    let condition = if rank == 0 { f64::INFINITY } else { (top + reg) / smallest };
    SpectralSolve {
        solution: &eig.eigenvectors * scaled,
        rank,
        condition,
    }
}

/// Pseudo-inverse of a symmetric PSD matrix, with the truncation rule of [`spectral_solve`].
pub fn psd_pseudo_inverse(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let n = a.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = SymmetricEigen::new(a.clone());
    let top = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = rel_tol.max(n as f64 * f64::EPSILON) * top;
    let inv = eig.eigenvalues.map(|l| if l > cutoff && l > 0.0 { 1.0 / l } else { 0.0 });
    let scaled = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, j)] * inv[j]);
    scaled * eig.eigenvectors.transpose()
}

/// Eigenvalues of a symmetric matrix in descending order.
pub fn symmetric_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let mut vals: Vec<f64> = SymmetricEigen::new(a.clone()).eigenvalues.iter().cloned().collect();
    vals.sort_by(|x, y| y.total_cmp(x));
    vals
}

/// Operator 2-norm of a symmetric matrix.
pub fn symmetric_op_norm(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(a.clone())
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Matrix with i.i.d. `N(0, scale^2)` entries.
pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Returns `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |acc, x| acc.max(x.abs()))
}
