//! Small dense linear-algebra helpers shared by the filters and the EM fit.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::scalar::{lit, Real};

/// `(M + Mᵀ) / 2`.
pub fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * lit::<T>(0.5)
}

/// Relative Frobenius asymmetry `‖M − Mᵀ‖ / ‖M‖` (zero for the zero matrix).
pub fn asymmetry<T: Real>(m: &DMatrix<T>) -> T {
    let norm = m.norm();
    if norm == T::zero() {
        return T::zero();
    }
    (m - m.transpose()).norm() / norm
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues<T: Real>(m: &DMatrix<T>) -> Vec<T> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut values: Vec<T> = eig.eigenvalues.iter().copied().collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    values
}

/// PSD test with an eigenvalue floor of `-rel_tol · λ_max`.
pub fn is_psd<T: Real>(m: &DMatrix<T>, rel_tol: T) -> bool {
    let values = sym_eigenvalues(m);
    let Some(&max) = values.last() else {
        return true;
    };
    let floor = -rel_tol * max.abs();
    values.iter().all(|&v| v >= floor)
}

/// Strict positive definiteness via Cholesky.
pub fn is_pd<T: Real>(m: &DMatrix<T>) -> bool {
    m.nrows() > 0 && symmetrize(m).cholesky().is_some()
}

/// Spectral condition number of a symmetric PSD matrix; infinite when singular.
pub fn condition_number<T: Real>(m: &DMatrix<T>) -> T {
    let values = sym_eigenvalues(m);
    match (values.first(), values.last()) {
        (Some(&min), Some(&max)) if min > T::zero() => max / min,
        (Some(_), Some(&max)) if max == T::zero() => T::max_value().unwrap(),
        (Some(_), Some(_)) => T::max_value().unwrap(),
        _ => T::one(),
    }
}

/// Inverse of a symmetric positive-definite matrix.
pub fn spd_inverse<T: Real>(m: &DMatrix<T>) -> Option<DMatrix<T>> {
    symmetrize(m).cholesky().map(|c| symmetrize(&c.inverse()))
}

/// Solves `m · X = rhs` for symmetric `m`, using Cholesky when possible and a
/// pseudo-inverse otherwise.
pub fn sym_solve<T: Real>(m: &DMatrix<T>, rhs: &DMatrix<T>) -> DMatrix<T> {
    if let Some(chol) = symmetrize(m).cholesky() {
        return chol.solve(rhs);
    }
    pseudo_inverse(m) * rhs
}

pub fn pseudo_inverse<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    let svd = m.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let eps = max_sv * lit::<T>(1e-12) * lit::<T>(m.nrows().max(m.ncols()) as f64);
    svd.pseudo_inverse(eps)
        .unwrap_or_else(|_| DMatrix::zeros(m.ncols(), m.nrows()))
}

/// Symmetric square root factor `L` with `L·Lᵀ = m`, tolerating semi-definite input.
pub fn psd_factor<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    if m.nrows() == 0 {
        return m.clone();
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(T::zero()).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals)
}

/// Clips the eigenvalues of a symmetric matrix from below at `floor`.
pub fn clip_eigenvalues<T: Real>(m: &DMatrix<T>, floor: T) -> DMatrix<T> {
    let eig = SymmetricEigen::new(symmetrize(m));
    if eig.eigenvalues.iter().all(|&v| v >= floor) {
        return symmetrize(m);
    }
    let clipped = eig.eigenvalues.map(|v| v.max(floor));
    symmetrize(&(&eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose()))
}

/// `A ⪯ B` in the Loewner order, up to `tol` times the scale of `B`.
pub fn loewner_le<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>, tol: T) -> bool {
    let scale = b.norm().max(a.norm()).max(T::one());
    let diff = b - a;
    sym_eigenvalues(&diff)
        .first()
        .is_none_or(|&min| min >= -tol * scale)
}

/// `ln det` of a symmetric positive-definite matrix.
pub fn spd_log_det<T: Real>(m: &DMatrix<T>) -> Option<T> {
    let chol = symmetrize(m).cholesky()?;
    let l = chol.l();
    Some(l.diagonal().iter().fold(T::zero(), |acc, &d| acc + d.ln()) * lit::<T>(2.0))
}

/// Relative distance `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn rel_diff<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>, floor: T) -> T {
    (a - b).norm() / a.norm().max(b.norm()).max(floor)
}

pub fn rel_diff_vec<T: Real>(a: &DVector<T>, b: &DVector<T>, floor: T) -> T {
    (a - b).norm() / a.norm().max(b.norm()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_floor_accepts_rounding_noise() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-12]);
        assert!(is_psd(&m, 1e-9));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-6]);
        assert!(!is_psd(&m, 1e-9));
    }

    #[test]
    fn factor_reproduces_semidefinite_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let l = psd_factor(&m);
        assert!((&l * l.transpose() - &m).norm() < 1e-12);
    }

    #[test]
    fn condition_of_singular_is_infinite_like() {
        let m = DMatrix::<f64>::zeros(2, 2);
        assert!(condition_number(&m) > 1e300);
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
        assert!((condition_number(&m) - 4.0_f64).abs() < 1e-12);
    }

    #[test]
    fn clipping_only_touches_small_eigenvalues() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1e-20, 2.0]));
        let c = clip_eigenvalues(&m, 1e-6);
        assert!((c[(0, 0)] - 1e-6_f64).abs() < 1e-15);
        assert!((c[(1, 1)] - 2.0_f64).abs() < 1e-12);
    }
}
