//! Normal-theory ML discrepancy, its analytic gradient and the moment Jacobian.

use nalgebra::{DMatrix, DVector};

use super::layout::ParameterLayout;
use super::spec::{FactorModelSpec, ModelMatrices, Slot};
use crate::error::{Error, Result};
use crate::ingest::SampleMoments;
use crate::linalg::{cholesky, normal_theory_weight, spd_log_det, symmetrize, vech_len, vech_pairs};

/// Objective value returned when Σ(θ) is not positive definite, so that a
/// line search backs off.
pub const BARRIER: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discrepancy {
    pub value: f64,
    /// False when Σ was not positive definite and `value` is the barrier.
    pub positive_definite: bool,
}

/// F = ln|Σ| − ln|S| + tr(SΣ⁻¹) − p + (m̄ − μ)ᵀΣ⁻¹(m̄ − μ).
///
/// The mean term is included only when both `mbar` and `mu` are given.
pub fn fml(
    s: &DMatrix<f64>,
    mbar: Option<&DVector<f64>>,
    sigma: &DMatrix<f64>,
    mu: Option<&DVector<f64>>,
) -> Result<Discrepancy> {
    let chol_s = cholesky(s).ok_or_else(|| Error::Singular("sample covariance".into()))?;
    Ok(fml_with_logdet(s, spd_log_det(&chol_s), mbar, sigma, mu))
}

pub(crate) fn fml_with_logdet(
    s: &DMatrix<f64>,
    ln_det_s: f64,
    mbar: Option<&DVector<f64>>,
    sigma: &DMatrix<f64>,
    mu: Option<&DVector<f64>>,
) -> Discrepancy {
    let p = s.nrows();
    let Some(chol) = cholesky(sigma) else {
        return Discrepancy {
            value: BARRIER,
            positive_definite: false,
        };
    };
    let ln_det = spd_log_det(&chol);
    let s_solved = chol.solve(s);
    let mut value = ln_det - ln_det_s + s_solved.trace() - p as f64;
    if let (Some(m), Some(mu)) = (mbar, mu) {
        let d = m - mu;
        value += d.dot(&chol.solve(&d));
    }
    if !value.is_finite() {
        return Discrepancy {
            value: BARRIER,
            positive_definite: false,
        };
    }
    Discrepancy {
        value,
        positive_definite: true,
    }
}

/// Fitted moments for one group.
#[derive(Debug, Clone)]
pub(crate) struct GroupData {
    pub s: DMatrix<f64>,
    pub ln_det_s: f64,
    pub mean: DVector<f64>,
    pub weight: f64,
}

impl GroupData {
    pub fn new(moments: &SampleMoments, s: DMatrix<f64>, weight: f64) -> Result<Self> {
        let chol = cholesky(&s).ok_or_else(|| {
            Error::Singular(format!(
                "sample covariance for items {}.. is not positive definite",
                moments.items.first().cloned().unwrap_or_default()
            ))
        })?;
        Ok(GroupData {
            ln_det_s: spd_log_det(&chol),
            s,
            mean: moments.mean.clone(),
            weight,
        })
    }
}

/// Pooled objective Σ_g w_g F_g / Σ_g w_g over a parameter layout.
pub(crate) struct Objective<'a> {
    pub layout: &'a ParameterLayout,
    pub data: Vec<GroupData>,
    pub total_weight: f64,
}

pub(crate) struct Evaluation {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub positive_definite: bool,
}

impl<'a> Objective<'a> {
    pub fn new(layout: &'a ParameterLayout, data: Vec<GroupData>) -> Self {
        let total_weight = data.iter().map(|d| d.weight).sum();
        Objective {
            layout,
            data,
            total_weight,
        }
    }

    pub fn group_values(&self, theta: &[f64]) -> Vec<Discrepancy> {
        self.data
            .iter()
            .enumerate()
            .map(|(g, d)| {
                let spec = &self.layout.groups[g].spec;
                let m = self.layout.matrices(g, theta);
                let mu = spec.mean_structure.then(|| m.mu());
                let mbar = spec.mean_structure.then_some(&d.mean);
                fml_with_logdet(&d.s, d.ln_det_s, mbar, &m.sigma(), mu.as_ref())
            })
            .collect()
    }

    pub fn evaluate(&self, theta: &[f64]) -> Evaluation {
        let mut value = 0.0;
        let mut gradient = vec![0.0; self.layout.n_free()];
        for (g, d) in self.data.iter().enumerate() {
            let block = &self.layout.groups[g];
            let m = self.layout.matrices(g, theta);
            match group_value_gradient(&block.spec, &block.slots, &m, d) {
                Some((f, grad)) => {
                    value += d.weight * f;
                    for (gl, &k) in grad.iter().zip(&block.global) {
                        gradient[k] += d.weight * gl;
                    }
                }
                None => {
                    return Evaluation {
                        value: BARRIER,
                        gradient: vec![0.0; self.layout.n_free()],
                        positive_definite: false,
                    }
                }
            }
        }
        let w = self.total_weight;
        Evaluation {
            value: value / w,
            gradient: gradient.into_iter().map(|g| g / w).collect(),
            positive_definite: true,
        }
    }

    /// Expected information Σ_g w_g J_gᵀ W_g J_g, with W_g the normal-theory
    /// weight on (vech Σ, μ). None when some Σ_g is not positive definite.
    pub fn information(&self, theta: &[f64]) -> Option<DMatrix<f64>> {
        let k = self.layout.n_free();
        let mut info = DMatrix::zeros(k, k);
        for (g, d) in self.data.iter().enumerate() {
            let block = &self.layout.groups[g];
            let m = self.layout.matrices(g, theta);
            let sigma_inv = symmetrize(&cholesky(&m.sigma())?.inverse());
            let jac = scatter_columns(
                &moment_jacobian(&block.spec, &block.slots, &m),
                &block.global,
                k,
            );
            let w = moment_weight(&sigma_inv, block.spec.mean_structure);
            info += (jac.transpose() * &w * &jac) * d.weight;
        }
        Some(symmetrize(&info))
    }
}

/// Value and gradient of F for one group with respect to its free slots.
fn group_value_gradient(
    spec: &FactorModelSpec,
    slots: &[Slot],
    m: &ModelMatrices,
    d: &GroupData,
) -> Option<(f64, Vec<f64>)> {
    let p = spec.p();
    let sigma = m.sigma();
    let chol = cholesky(&sigma)?;
    let sigma_inv = symmetrize(&chol.inverse());
    let ln_det = spd_log_det(&chol);
    let mut value = ln_det - d.ln_det_s + (&sigma_inv * &d.s).trace() - p as f64;

    // dF = tr(G dΣ) + g_muᵀ dμ
    let mut inner = &sigma - &d.s;
    let mut g_mu = DVector::zeros(p);
    if spec.mean_structure {
        let resid = &d.mean - m.mu();
        let w = &sigma_inv * &resid;
        value += resid.dot(&w);
        inner -= &resid * resid.transpose();
        g_mu = -2.0 * w;
    }
    if !value.is_finite() {
        return None;
    }
    let g = symmetrize(&(&sigma_inv * inner * &sigma_inv));
    let g_lambda_phi = &g * &m.lambda * &m.phi;
    let lt_g_l = m.lambda.transpose() * &g * &m.lambda;
    let lt_gmu = m.lambda.transpose() * &g_mu;

    let grad = slots
        .iter()
        .map(|&slot| match slot {
            Slot::Loading(i, j) => 2.0 * g_lambda_phi[(i, j)] + g_mu[i] * m.kappa[j],
            Slot::FactorCov(a, b) if a == b => lt_g_l[(a, a)],
            Slot::FactorCov(a, b) => 2.0 * lt_g_l[(a, b)],
            Slot::Residual(i) => g[(i, i)],
            Slot::Intercept(i) => g_mu[i],
            Slot::FactorMean(j) => lt_gmu[j],
        })
        .collect();
    Some((value, grad))
}

/// ∂(vech Σ, μ)/∂θ for one group: vech(Σ) rows first, then μ rows when the
/// model has a mean structure. Columns follow `slots`.
pub fn moment_jacobian(spec: &FactorModelSpec, slots: &[Slot], m: &ModelMatrices) -> DMatrix<f64> {
    let p = spec.p();
    let pairs = vech_pairs(p);
    let nv = pairs.len();
    let rows = nv + if spec.mean_structure { p } else { 0 };
    let lambda_phi = &m.lambda * &m.phi;
    let mut jac = DMatrix::zeros(rows, slots.len());
    for (c, &slot) in slots.iter().enumerate() {
        match slot {
            Slot::Loading(i, j) => {
                for (r, &(k, l)) in pairs.iter().enumerate() {
                    let mut v = 0.0;
                    if k == i {
                        v += lambda_phi[(l, j)];
                    }
                    if l == i {
                        v += lambda_phi[(k, j)];
                    }
                    jac[(r, c)] = v;
                }
                if spec.mean_structure {
                    jac[(nv + i, c)] = m.kappa[j];
                }
            }
            Slot::FactorCov(a, b) => {
                for (r, &(k, l)) in pairs.iter().enumerate() {
                    jac[(r, c)] = if a == b {
                        m.lambda[(k, a)] * m.lambda[(l, a)]
                    } else {
                        m.lambda[(k, a)] * m.lambda[(l, b)] + m.lambda[(k, b)] * m.lambda[(l, a)]
                    };
                }
            }
            Slot::Residual(i) => {
                let r = pairs.iter().position(|&x| x == (i, i)).unwrap();
                jac[(r, c)] = 1.0;
            }
            Slot::Intercept(i) => {
                jac[(nv + i, c)] = 1.0;
            }
            Slot::FactorMean(j) => {
                for k in 0..p {
                    jac[(nv + k, c)] = m.lambda[(k, j)];
                }
            }
        }
    }
    jac
}

/// Block-diagonal normal-theory weight on (vech Σ, μ).
pub fn moment_weight(sigma_inv: &DMatrix<f64>, mean_structure: bool) -> DMatrix<f64> {
    let p = sigma_inv.nrows();
    let nv = vech_len(p);
    let w_cov = normal_theory_weight(sigma_inv);
    if !mean_structure {
        return w_cov;
    }
    let mut w = DMatrix::zeros(nv + p, nv + p);
    w.view_mut((0, 0), (nv, nv)).copy_from(&w_cov);
    w.view_mut((nv, nv), (p, p)).copy_from(sigma_inv);
    w
}

/// Places local Jacobian columns into a matrix over the global parameter vector.
pub(crate) fn scatter_columns(local: &DMatrix<f64>, global: &[usize], k: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(local.nrows(), k);
    for (c, &g) in global.iter().enumerate() {
        let mut col = out.column_mut(g);
        col += local.column(c);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn perfect_fit_is_zero() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let m = DVector::from_vec(vec![1.0, 2.0]);
        let d = fml(&s, Some(&m), &s, Some(&m)).unwrap();
        assert!(d.positive_definite);
        assert!(d.value.abs() < 1e-14);
    }

    #[test]
    fn one_by_one_analytic() {
        let s = DMatrix::from_element(1, 1, 2.0);
        let sigma = DMatrix::from_element(1, 1, 1.0);
        let d = fml(&s, None, &sigma, None).unwrap();
        assert_relative_eq!(d.value, 1.0 - 2f64.ln(), epsilon = 1e-14);
        assert_relative_eq!(d.value, 0.30685, epsilon = 1e-5);
    }

    #[test]
    fn non_pd_sigma_hits_barrier() {
        let s = DMatrix::identity(2, 2);
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let d = fml(&s, None, &sigma, None).unwrap();
        assert!(!d.positive_definite);
        assert_eq!(d.value, BARRIER);
    }

    #[test]
    fn singular_sample_is_an_error() {
        let s = DMatrix::from_element(2, 2, 1.0);
        assert!(fml(&s, None, &DMatrix::identity(2, 2), None).is_err());
    }
}
