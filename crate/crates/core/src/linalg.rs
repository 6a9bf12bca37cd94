//! Small dense helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::scalar::Real;

/// Result of validating a symmetric positive-semidefinite matrix.
#[derive(Debug, Clone)]
pub(crate) struct PsdParts<T: Real> {
    /// The (symmetrized, clamped) matrix.
    pub matrix: DMatrix<T>,
    /// Symmetric square root `S` with `S·S = matrix`.
    pub sqrt: DMatrix<T>,
    /// Smallest eigenvalue after clamping.
    pub min_eigenvalue: T,
    /// Largest eigenvalue magnitude before clamping.
    pub norm: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum PsdFailure {
    NotSquare,
    NotSymmetric { asymmetry: f64 },
    Negative { eigenvalue: f64 },
    NonFinite,
}

/// Largest absolute entry.
pub(crate) fn max_abs<T: Real>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, v| acc.max(v.abs()))
}

/// Validates symmetry and semidefiniteness, clamping eigenvalues in
/// `[-tol, 0)` to zero where `tol = 1e-12·‖R‖`.
pub(crate) fn psd_parts<T: Real>(r: &DMatrix<T>) -> Result<PsdParts<T>, PsdFailure> {
    if !r.is_square() {
        return Err(PsdFailure::NotSquare);
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(PsdFailure::NonFinite);
    }
    let scale = max_abs(r);
    let sym_tol = T::tolerance(1e-12, 1.0) * scale.max(T::one());
    let asym = (r - r.transpose()).iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
    if asym > sym_tol {
        return Err(PsdFailure::NotSymmetric {
            asymmetry: asym.to_f64_lossy(),
        });
    }
    let sym = (r + r.transpose()) * T::of(0.5);
    let eig = SymmetricEigen::new(sym.clone());
    let norm = eig.eigenvalues.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
    let tol = T::tolerance(1e-12, 1.0) * norm;
    let mut clamped = false;
    let mut values = eig.eigenvalues.clone();
    for v in values.iter_mut() {
        if *v < -tol {
            return Err(PsdFailure::Negative {
                eigenvalue: v.to_f64_lossy(),
            });
        }
        if *v < T::zero() {
            *v = T::zero();
            clamped = true;
        }
    }
    let vecs = &eig.eigenvectors;
    let matrix = if clamped {
        vecs * DMatrix::from_diagonal(&values) * vecs.transpose()
    } else {
        sym
    };
    let roots = values.map(|v| v.sqrt());
    let sqrt = vecs * DMatrix::from_diagonal(&roots) * vecs.transpose();
    let min_eigenvalue = values.iter().fold(T::max_value().unwrap(), |acc, v| acc.min(*v));
    Ok(PsdParts {
        matrix,
        sqrt,
        min_eigenvalue,
        norm,
    })
}

/// Smallest eigenvalue of a symmetric matrix.
pub(crate) fn min_eigenvalue<T: Real>(sym: &DMatrix<T>) -> T {
    let eig = SymmetricEigen::new(sym.clone());
    eig.eigenvalues
        .iter()
        .fold(T::max_value().unwrap(), |acc, v| acc.min(*v))
}

/// Extreme eigenvalues `(min, max)` of a symmetric matrix.
pub(crate) fn eigen_range<T: Real>(sym: &DMatrix<T>) -> (T, T) {
    let eig = SymmetricEigen::new(sym.clone());
    eig.eigenvalues.iter().fold(
        (T::max_value().unwrap(), T::min_value().unwrap()),
        |(lo, hi), v| (lo.min(*v), hi.max(*v)),
    )
}

pub(crate) fn trace<T: Real>(m: &DMatrix<T>) -> T {
    m.diagonal().iter().fold(T::zero(), |acc, v| acc + *v)
}

pub(crate) fn norm_sq<T: Real>(v: &DVector<T>) -> T {
    v.iter().fold(T::zero(), |acc, x| acc + *x * *x)
}
