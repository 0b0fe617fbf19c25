//! Small dense linear-algebra helpers shared by the estimators.
//!
//! Half-vectorisation (`vech`) runs column-major over the lower triangle:
//! (0,0), (1,0), ..., (p-1,0), (1,1), (2,1), ...

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub fn vech_len(p: usize) -> usize {
    p * (p + 1) / 2
}

/// (row, col) pairs with row >= col in vech order.
pub fn vech_pairs(p: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(vech_len(p));
    for j in 0..p {
        for i in j..p {
            out.push((i, j));
        }
    }
    out
}

pub fn vech(m: &DMatrix<f64>) -> DVector<f64> {
    let p = m.nrows();
    DVector::from_iterator(vech_len(p), vech_pairs(p).into_iter().map(|(i, j)| m[(i, j)]))
}

pub fn cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
}

/// ln|A| for a positive definite matrix.
pub fn spd_log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    chol.l_dirty()
        .diagonal()
        .iter()
        .map(|d| 2.0 * d.ln())
        .sum()
}

pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let chol = cholesky(m).ok_or_else(|| Error::Singular(what.to_string()))?;
    Ok(symmetrize(&chol.inverse()))
}

/// Inverse of a symmetric positive semidefinite matrix via eigen-decomposition,
/// failing when the smallest eigenvalue is below `rel_tol` times the largest.
pub fn sym_inverse_checked(m: &DMatrix<f64>, rel_tol: f64, what: &str) -> Result<DMatrix<f64>> {
    if let Some(chol) = cholesky(m) {
        let inv = symmetrize(&chol.inverse());
        if inv.iter().all(|v| v.is_finite()) {
            let (lo, hi) = eigen_extremes(m);
            if hi > 0.0 && lo > rel_tol * hi {
                return Ok(inv);
            }
        }
    }
    Err(Error::Singular(what.to_string()))
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eigen_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 {
        return (0.0, 0.0);
    }
    let eig = m.clone().symmetric_eigen();
    let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted descending.
pub fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = symmetrize(m).symmetric_eigen();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

pub fn cov_to_corr(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = cov.nrows();
    let sd: Vec<f64> = (0..p).map(|i| cov[(i, i)].sqrt()).collect();
    if let Some(i) = sd.iter().position(|s| !(*s > 0.0)) {
        return Err(Error::Singular(format!("variable {i} has zero variance")));
    }
    Ok(DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else {
            cov[(i, j)] / (sd[i] * sd[j])
        }
    }))
}

/// Normal-theory asymptotic covariance of vech(S):
/// Γ[(ij),(kl)] = σ_ik σ_jl + σ_il σ_jk.
pub fn normal_theory_gamma(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let pairs = vech_pairs(sigma.nrows());
    let m = pairs.len();
    DMatrix::from_fn(m, m, |a, b| {
        let (i, j) = pairs[a];
        let (k, l) = pairs[b];
        sigma[(i, k)] * sigma[(j, l)] + sigma[(i, l)] * sigma[(j, k)]
    })
}

/// Normal-theory weight matrix ½·Dᵀ(Σ⁻¹⊗Σ⁻¹)D on vech coordinates, taking Σ⁻¹
/// as input. This is the inverse of [`normal_theory_gamma`] at Σ.
pub fn normal_theory_weight(sigma_inv: &DMatrix<f64>) -> DMatrix<f64> {
    let a = sigma_inv;
    let pairs = vech_pairs(a.nrows());
    let m = pairs.len();
    let mult = |i: usize, j: usize| if i == j { 1.0 } else { 2.0 };
    DMatrix::from_fn(m, m, |r, c| {
        let (i, j) = pairs[r];
        let (k, l) = pairs[c];
        0.25 * mult(i, j) * mult(k, l) * (a[(i, k)] * a[(j, l)] + a[(i, l)] * a[(j, k)])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn vech_order() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 3.0, 4.0]);
        assert_eq!(vech(&m).as_slice(), &[1.0, 3.0, 4.0]);
    }

    #[test]
    fn weight_inverts_gamma() {
        let sigma = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 1.5]);
        let g = normal_theory_gamma(&sigma);
        let w = normal_theory_weight(&spd_inverse(&sigma, "sigma").unwrap());
        let prod = &w * &g;
        assert_relative_eq!(prod, DMatrix::identity(6, 6), epsilon = 1e-12);
    }

    #[test]
    fn sorted_eigen_descending() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]);
        let (vals, vecs) = sorted_symmetric_eigen(&m);
        assert_eq!(vals.as_slice(), &[3.0, 1.0]);
        assert_relative_eq!(vecs[(1, 0)].abs(), 1.0);
    }
}
