//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Largest absolute asymmetry `max |S_ij - S_ji|`.
pub fn max_asymmetry(s: &DMatrix<f64>) -> f64 {
    let n = s.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((s[(i, j)] - s[(j, i)]).abs());
        }
    }
    worst
}

/// `(S + S^T) / 2`.
pub fn symmetric_part(s: &DMatrix<f64>) -> DMatrix<f64> {
    (s + s.transpose()) * 0.5
}

/// Eigendecomposition of the symmetric part.
pub fn sym_eigen(s: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    SymmetricEigen::new(symmetric_part(s))
}

pub fn min_eigenvalue(s: &DMatrix<f64>) -> f64 {
    if s.nrows() == 0 {
        return 0.0;
    }
    sym_eigen(s).eigenvalues.min()
}

/// Nearest PSD matrix in Frobenius norm: clamp negative eigenvalues to zero.
///
/// Inputs whose asymmetry exceeds `1e-10` (relative to the largest entry) are
/// rejected; smaller asymmetry is removed by symmetrising first.
pub fn psd_project(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !s.is_square() {
        return Err(Error::Dimension(format!("{}x{} is not square", s.nrows(), s.ncols())));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("psd_project input".into()));
    }
    let asym = max_asymmetry(s);
    let scale = s.amax().max(1.0);
    if asym > 1e-10 * scale {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(psd_project_sym_part(s))
}

/// Projection of the symmetric part onto the PSD cone. For a non-symmetric
/// input this is still the Frobenius-nearest symmetric PSD matrix.
pub fn psd_project_sym_part(s: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = sym_eigen(s);
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    symmetric_part(&out)
}

/// Solves the symmetric positive definite system `M x = r`, falling back to LU
/// when Cholesky fails.
pub fn solve_spd(m: &DMatrix<f64>, r: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(chol) = m.clone().cholesky() {
        return Ok(chol.solve(r));
    }
    m.clone()
        .lu()
        .solve(r)
        .ok_or_else(|| Error::Singular(format!("{}x{} system", m.nrows(), m.ncols())))
}

/// A factor `L` with `L L^T = S` for a PSD matrix `S`: Cholesky when it
/// succeeds, otherwise the eigen square root `U sqrt(max(Λ, 0))`. Eigenvalues
/// below `-1e-8 * scale` are reported as an error.
pub fn psd_factor(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = symmetric_part(s);
    if let Some(chol) = sym.clone().cholesky() {
        return Ok(chol.l());
    }
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.amax().max(1.0);
    let lo = eig.eigenvalues.min();
    if lo < -1e-8 * scale {
        return Err(Error::NotPsd(lo));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots))
}

/// Stable stream id for an unordered feature pair.
pub fn pair_stream(i: usize, j: usize) -> u64 {
    let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
    (hi as u64) * (hi as u64 + 1) / 2 + lo as u64
}

/// Serde adapters that write matrices as nested row arrays and vectors as
/// flat arrays.
pub mod serde_dense {
    use nalgebra::{DMatrix, DVector, Scalar};
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn rows<T: Scalar + Clone>(m: &DMatrix<T>) -> Vec<Vec<T>> {
        (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)].clone()).collect())
            .collect()
    }

    pub fn from_rows<T: Scalar + Clone>(rows: &[Vec<T>]) -> Option<DMatrix<T>> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return None;
        }
        Some(DMatrix::from_fn(n, d, |i, j| rows[i][j].clone()))
    }

    pub mod matrix {
        use super::*;

        pub fn serialize<T, S>(m: &DMatrix<T>, s: S) -> Result<S::Ok, S::Error>
        where
            T: Scalar + Clone + Serialize,
            S: Serializer,
        {
            rows(m).serialize(s)
        }

        pub fn deserialize<'de, T, D>(d: D) -> Result<DMatrix<T>, D::Error>
        where
            T: Scalar + Clone + Deserialize<'de>,
            D: Deserializer<'de>,
        {
            let r: Vec<Vec<T>> = Vec::deserialize(d)?;
            from_rows(&r).ok_or_else(|| D::Error::custom("ragged matrix rows"))
        }
    }

    pub mod vector {
        use super::*;

        pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
            v.as_slice().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
            let v: Vec<f64> = Vec::deserialize(d)?;
            Ok(DVector::from_vec(v))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn psd_project_cases() {
        let d = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert_relative_eq!(psd_project(&d).unwrap(), DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]), epsilon = 1e-14);

        let off = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert_relative_eq!(psd_project(&off).unwrap(), DMatrix::from_element(2, 2, 0.5), epsilon = 1e-14);

        let spd = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        assert_relative_eq!(psd_project(&spd).unwrap(), spd, epsilon = 1e-12);
    }

    #[test]
    fn psd_project_rejects_asymmetry() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(psd_project(&a), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn psd_factor_handles_semidefinite() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let l = psd_factor(&s).unwrap();
        assert_relative_eq!(&l * l.transpose(), s, epsilon = 1e-12);
        assert!(psd_factor(&DMatrix::from_row_slice(1, 1, &[-1.0])).is_err());
    }

    #[test]
    fn pair_stream_is_unordered_and_injective() {
        let mut seen = std::collections::HashSet::new();
        for i in 0..30 {
            for j in i..30 {
                assert_eq!(pair_stream(i, j), pair_stream(j, i));
                assert!(seen.insert(pair_stream(i, j)));
            }
        }
    }
}
