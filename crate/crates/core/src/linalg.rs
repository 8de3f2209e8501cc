//! Small dense helpers: symmetric inversion with singularity reporting and PSD checks.

use nalgebra::{DMatrix, Matrix3, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative eigenvalue floor below which a symmetric matrix is treated as singular.
pub const EIGEN_FLOOR: f64 = 1e-15;

fn describe(v: &[f64], labels: Option<&[&str]>) -> String {
    let (i, _) = v
        .iter()
        .enumerate()
        .fold((0, 0.0), |acc, (i, x)| if x.abs() > acc.1 { (i, x.abs()) } else { acc });
    let comps: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    match labels {
        Some(l) if i < l.len() => format!("{} (eigenvector [{}])", l[i], comps.join(", ")),
        _ => format!("eigenvector [{}]", comps.join(", ")),
    }
}

/// Inverts a symmetric matrix through its eigendecomposition.
///
/// Fails when any eigenvalue is below `EIGEN_FLOOR * ||F||`; the error names
/// the dominant component of the deficient eigenvector.
pub fn sym_inverse(m: &DMatrix<f64>, labels: Option<&[&str]>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::DimensionMismatch { expected: n, got: m.ncols() });
    }
    let sym = (m + m.transpose()) * 0.5;
    let norm = sym.norm();
    if !norm.is_finite() {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    let eig = SymmetricEigen::new(sym);
    let floor = EIGEN_FLOOR * norm;
    for (k, &ev) in eig.eigenvalues.iter().enumerate() {
        if !(ev > floor) {
            let v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            return Err(Error::SingularMatrix { direction: describe(&v, labels) });
        }
    }
    let inv_d = DMatrix::from_diagonal(&eig.eigenvalues.map(|x| 1.0 / x));
    Ok(&eig.eigenvectors * inv_d * eig.eigenvectors.transpose())
}

const XYZ: [&str; 3] = ["x", "y", "z"];

pub fn sym_inverse3(m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let d = DMatrix::from_column_slice(3, 3, m.as_slice());
    let inv = sym_inverse(&d, Some(&XYZ))?;
    Ok(Matrix3::from_column_slice(inv.as_slice()))
}

/// Trace of the inverse of a symmetric positive definite 3x3 matrix.
pub fn trace_inverse3(m: &Matrix3<f64>) -> Result<f64> {
    Ok(sym_inverse3(m)?.trace())
}

/// Smallest eigenvalue of the symmetric part.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// True when `m` is symmetric PSD up to `tol * ||m||`.
pub fn is_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    let scale = m.norm().max(f64::MIN_POSITIVE);
    (m - m.transpose()).norm() <= tol * scale && min_eigenvalue(m) >= -tol * scale
}

pub fn to_dmatrix3(m: &Matrix3<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(3, 3, m.as_slice())
}

/// Symmetric square root of a PSD 3x3 matrix (negative eigenvalues clipped).
pub fn sym_sqrt3(m: &Matrix3<f64>) -> Matrix3<f64> {
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let d = Matrix3::from_diagonal(&eig.eigenvalues.map(|x| x.max(0.0).sqrt()));
    eig.eigenvectors * d * eig.eigenvectors.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn inverse_of_diagonal() {
        let m = Matrix3::from_diagonal(&nalgebra::Vector3::new(4.0, 2.0, 0.5));
        let inv = sym_inverse3(&m).unwrap();
        assert_relative_eq!(inv, Matrix3::from_diagonal(&nalgebra::Vector3::new(0.25, 0.5, 2.0)), epsilon = 1e-15);
    }

    #[test]
    fn inverse_matches_lu() {
        let a = Matrix3::new(3.0, 0.4, -0.2, 0.4, 2.0, 0.3, -0.2, 0.3, 1.5);
        let inv = sym_inverse3(&a).unwrap();
        let lu = a.try_inverse().unwrap();
        assert_relative_eq!(inv, lu, epsilon = 1e-13);
    }

    #[test]
    fn singular_reports_direction() {
        let m = Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, 0.0, 2.0));
        match sym_inverse3(&m) {
            Err(Error::SingularMatrix { direction }) => assert!(direction.starts_with('y'), "{direction}"),
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn psd_check() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(!is_psd(&m, 1e-9));
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert!(is_psd(&m, 1e-9));
    }

    #[test]
    fn sqrt_squares_back() {
        let a = Matrix3::new(3.0, 0.4, -0.2, 0.4, 2.0, 0.3, -0.2, 0.3, 1.5);
        let s = sym_sqrt3(&a);
        assert_relative_eq!(s * s, a, epsilon = 1e-12);
    }
}
