//! Model fitting, robust statistics and fit-index assembly.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::discrepancy::{moment_jacobian, moment_weight, scatter_columns, GroupData, Objective};
use super::indices::{self, FitIndices, IndexInputs};
use super::layout::{ParameterLayout, ParameterVector};
use super::optimize::{minimize, OptimOptions, Problem};
use super::spec::{FactorModelSpec, ModelMatrices};
use crate::error::{Error, Result};
use crate::ingest::SampleMoments;
use crate::linalg::{cholesky, eigen_extremes, sym_inverse_checked, symmetrize, vech_len};

/// Sample-size multiplier convention for the test statistic.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChisqMultiplier {
    /// T = (n − 1)·F on the n − 1 divisor covariance.
    #[default]
    #[serde(rename = "n-1")]
    NMinusOne,
    /// T = n·F on the n divisor covariance.
    #[serde(rename = "n")]
    N,
}

impl ChisqMultiplier {
    pub fn weight(self, n: usize) -> f64 {
        match self {
            ChisqMultiplier::NMinusOne => n as f64 - 1.0,
            ChisqMultiplier::N => n as f64,
        }
    }

    pub fn sample_cov(self, m: &SampleMoments) -> &DMatrix<f64> {
        match self {
            ChisqMultiplier::NMinusOne => &m.cov,
            ChisqMultiplier::N => &m.cov_ml,
        }
    }
}

impl std::str::FromStr for ChisqMultiplier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n-1" | "n_minus_one" => Ok(ChisqMultiplier::NMinusOne),
            "n" => Ok(ChisqMultiplier::N),
            _ => Err(Error::Config(format!("unknown chi-square multiplier {s:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub multiplier: ChisqMultiplier,
    /// Substitute the scaled statistic into CFI/TLI/RMSEA.
    pub use_scaled: bool,
    /// Compute Satorra-Bentler scaling and sandwich standard errors.
    pub robust: bool,
    pub optim: OptimOptions,
    pub start: Option<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            multiplier: ChisqMultiplier::NMinusOne,
            use_scaled: true,
            robust: true,
            optim: OptimOptions::default(),
            start: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledStatistic {
    pub scale: f64,
    pub chisq_sb: f64,
}

#[derive(Debug, Clone)]
pub struct GroupFit {
    pub label: String,
    pub n: usize,
    pub weight: f64,
    pub fmin: f64,
    pub sigma_hat: DMatrix<f64>,
    pub mu_hat: Option<DVector<f64>>,
    pub srmr: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub layout: ParameterLayout,
    pub theta_hat: ParameterVector,
    /// Inverse expected information.
    pub se_normal: Vec<f64>,
    /// Sandwich standard errors; None when not requested or not computable.
    pub se_robust: Option<Vec<f64>>,
    pub fmin: f64,
    pub f_start: f64,
    pub chisq: f64,
    pub df: i64,
    pub scaled: Option<ScaledStatistic>,
    pub indices: FitIndices,
    pub converged: bool,
    pub n_iterations: usize,
    pub gradient_norm: f64,
    pub identified: bool,
    /// Objective after every accepted optimizer step.
    pub objective_trace: Vec<f64>,
    pub groups: Vec<GroupFit>,
    pub multiplier: ChisqMultiplier,
}

impl FitResult {
    pub fn matrices(&self, group: usize) -> ModelMatrices {
        self.layout.matrices(group, &self.theta_hat.values)
    }

    pub fn spec(&self, group: usize) -> &FactorModelSpec {
        &self.layout.groups[group].spec
    }

    /// Standardised factor covariance matrix.
    pub fn factor_correlations(&self, group: usize) -> DMatrix<f64> {
        let phi = self.matrices(group).phi;
        let q = phi.nrows();
        DMatrix::from_fn(q, q, |a, b| phi[(a, b)] / (phi[(a, a)] * phi[(b, b)]).sqrt())
    }

    pub fn value(&self, label: &str) -> Option<f64> {
        self.theta_hat.get(label)
    }

    fn index_of(&self, label: &str) -> Option<usize> {
        self.theta_hat.labels.iter().position(|l| l == label)
    }

    pub fn se_of(&self, label: &str) -> Option<(f64, Option<f64>)> {
        let k = self.index_of(label)?;
        Some((self.se_normal[k], self.se_robust.as_ref().map(|r| r[k])))
    }
}

/// Fits a single-group model.
pub fn fit_model(
    spec: &FactorModelSpec,
    moments: &SampleMoments,
    options: &FitOptions,
) -> Result<FitResult> {
    spec.validate()?;
    let layout = ParameterLayout::single(spec.clone());
    fit_layout(&layout, &[moments], options)
}

/// Pooled discrepancy Σ_g w_g F_g / Σ_g w_g and its analytic gradient at
/// `theta`. `None` when some implied Σ_g is not positive definite.
pub fn objective_gradient(
    layout: &ParameterLayout,
    moments: &[&SampleMoments],
    multiplier: ChisqMultiplier,
    theta: &[f64],
) -> Result<Option<(f64, Vec<f64>)>> {
    layout.check_moments(moments)?;
    if theta.len() != layout.n_free() {
        return Err(Error::Precondition(format!(
            "parameter vector has length {}, layout has {} free parameters",
            theta.len(),
            layout.n_free()
        )));
    }
    let data = moments
        .iter()
        .map(|m| GroupData::new(m, multiplier.sample_cov(m).clone(), multiplier.weight(m.n)))
        .collect::<Result<Vec<_>>>()?;
    let e = Objective::new(layout, data).evaluate(theta);
    Ok(e.positive_definite.then_some((e.value, e.gradient)))
}

/// Fits any (multigroup) parameter layout by minimising
/// Σ_g w_g F_g / Σ_g w_g; the statistic is T = Σ_g w_g F_g.
pub fn fit_layout(
    layout: &ParameterLayout,
    moments: &[&SampleMoments],
    options: &FitOptions,
) -> Result<FitResult> {
    layout.check_moments(moments)?;
    for b in &layout.groups {
        b.spec.validate()?;
    }
    if layout.df() < 0 {
        return Err(Error::InvalidModel(format!(
            "model is not identified: {} free parameters for {} moments",
            layout.n_free(),
            layout.n_moments()
        )));
    }
    let per_group_free = layout.n_free() / layout.groups.len().max(1);
    for m in moments {
        if m.n <= per_group_free {
            log::warn!(
                "sample size {} does not exceed the number of free parameters per group ({per_group_free})",
                m.n
            );
        }
    }
    let mult = options.multiplier;
    let data = moments
        .iter()
        .map(|m| GroupData::new(m, mult.sample_cov(m).clone(), mult.weight(m.n)))
        .collect::<Result<Vec<_>>>()?;
    let objective = Objective::new(layout, data);

    let start = match &options.start {
        Some(s) if s.len() == layout.n_free() => s.clone(),
        Some(s) => {
            return Err(Error::InvalidModel(format!(
                "start vector has {} entries, model has {}",
                s.len(),
                layout.n_free()
            )))
        }
        None => layout.default_start(moments),
    };

    let eval = |x: &[f64]| {
        let e = objective.evaluate(x);
        (e.value, e.gradient, e.positive_definite)
    };
    let total = objective.total_weight;
    let hess = |x: &[f64]| objective.information(x).map(|a| a * (2.0 / total));
    let problem = Problem {
        eval: &eval,
        hessian: &hess,
        lower: &layout.lower,
    };
    let out = minimize(&problem, &start, &options.optim);
    if !out.converged {
        return Err(Error::NonConvergence {
            iterations: out.iterations,
            gradient_norm: out.gradient_norm,
        });
    }
    let theta = out.x;

    let info = objective
        .information(&theta)
        .ok_or_else(|| Error::Singular("implied covariance at the solution".into()))?;
    let (lo, hi) = eigen_extremes(&info);
    let identified = layout.n_free() == 0 || (hi > 0.0 && lo > 1e-10 * hi);
    if !identified {
        log::warn!("information matrix is rank deficient at the solution; model may not be identified");
    }
    let se_normal = if layout.n_free() == 0 {
        vec![]
    } else if identified {
        let inv = sym_inverse_checked(&info, 1e-14, "information matrix")?;
        inv.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    } else {
        vec![f64::NAN; layout.n_free()]
    };

    let fvals = objective.group_values(&theta);
    let chisq: f64 = objective
        .data
        .iter()
        .zip(&fvals)
        .map(|(d, f)| d.weight * f.value)
        .sum();
    let df = layout.df();

    let mut groups = Vec::with_capacity(layout.groups.len());
    for (g, b) in layout.groups.iter().enumerate() {
        let m = layout.matrices(g, &theta);
        let sigma_hat = m.sigma();
        groups.push(GroupFit {
            label: b.label.clone(),
            n: moments[g].n,
            weight: objective.data[g].weight,
            fmin: fvals[g].value,
            srmr: indices::srmr(&objective.data[g].s, &sigma_hat),
            mu_hat: b.spec.mean_structure.then(|| m.mu()),
            sigma_hat,
        });
    }

    let robust = if options.robust && identified {
        match robust_parts(layout, &theta, moments, mult) {
            Ok(parts) => Some(parts),
            Err(e) => {
                log::warn!("robust statistics unavailable: {e}");
                None
            }
        }
    } else {
        None
    };
    let scaled = robust.as_ref().map(|r| scaled_statistic(chisq, df, r.trace_uo));
    let se_robust = robust.as_ref().map(|r| r.sandwich_se());

    let mut result = FitResult {
        theta_hat: ParameterVector {
            labels: layout.labels.clone(),
            values: theta,
        },
        layout: layout.clone(),
        se_normal,
        se_robust,
        fmin: out.f,
        f_start: out.f_start,
        chisq,
        df,
        scaled,
        indices: FitIndices {
            chisq,
            df,
            pvalue: indices::chisq_pvalue(chisq, df),
            chisq_sb: chisq,
            sb_scale: 1.0,
            scaled: false,
            cfi: f64::NAN,
            tli: f64::NAN,
            rmsea: f64::NAN,
            rmsea_ci90: (f64::NAN, f64::NAN),
            srmr: f64::NAN,
            baseline_chisq: f64::NAN,
            baseline_df: 0,
        },
        converged: out.converged,
        n_iterations: out.iterations,
        gradient_norm: out.gradient_norm,
        identified,
        objective_trace: out.trace,
        groups,
        multiplier: mult,
    };
    result.indices = fit_indices(&result, moments, options.use_scaled && options.robust)?;
    Ok(result)
}

fn scaled_statistic(chisq: f64, df: i64, trace_uo: f64) -> ScaledStatistic {
    if df <= 0 || !(trace_uo > 0.0) {
        return ScaledStatistic {
            scale: 1.0,
            chisq_sb: chisq,
        };
    }
    let scale = trace_uo / df as f64;
    ScaledStatistic {
        scale,
        chisq_sb: chisq / scale,
    }
}

/// Pieces shared by the scaled statistic and the sandwich estimator.
pub(crate) struct RobustParts {
    /// tr(UΩ)
    pub trace_uo: f64,
    /// (Σ_g w_g J_gᵀ W_g J_g)⁻¹
    pub a_inv: DMatrix<f64>,
    /// Σ_g w_g J_gᵀ W_g Ω_g W_g J_g
    pub b: DMatrix<f64>,
}

impl RobustParts {
    pub fn sandwich(&self) -> DMatrix<f64> {
        symmetrize(&(&self.a_inv * &self.b * &self.a_inv))
    }

    pub fn sandwich_se(&self) -> Vec<f64> {
        self.sandwich()
            .diagonal()
            .iter()
            .map(|v| v.max(0.0).sqrt())
            .collect()
    }
}

/// Asymptotic covariance of (vech S, m̄) for one group, in that order.
fn moment_covariance(m: &SampleMoments, mean_structure: bool) -> DMatrix<f64> {
    if !mean_structure {
        return m.gamma.clone();
    }
    let p = m.p();
    let nv = vech_len(p);
    let mut omega = DMatrix::zeros(nv + p, nv + p);
    omega.view_mut((0, 0), (nv, nv)).copy_from(&m.gamma);
    omega
        .view_mut((0, nv), (nv, p))
        .copy_from(&m.third.transpose());
    omega.view_mut((nv, 0), (p, nv)).copy_from(&m.third);
    omega.view_mut((nv, nv), (p, p)).copy_from(&m.cov_ml);
    omega
}

pub(crate) fn robust_parts(
    layout: &ParameterLayout,
    theta: &[f64],
    moments: &[&SampleMoments],
    mult: ChisqMultiplier,
) -> Result<RobustParts> {
    let k = layout.n_free();
    let mut a = DMatrix::zeros(k, k);
    let mut b = DMatrix::zeros(k, k);
    let mut trace_wo = 0.0;
    for (g, block) in layout.groups.iter().enumerate() {
        let m = layout.matrices(g, theta);
        let chol = cholesky(&m.sigma())
            .ok_or_else(|| Error::Singular("implied covariance at the solution".into()))?;
        let sigma_inv = symmetrize(&chol.inverse());
        let w = moment_weight(&sigma_inv, block.spec.mean_structure);
        let omega = moment_covariance(moments[g], block.spec.mean_structure);
        let jac = scatter_columns(&moment_jacobian(&block.spec, &block.slots, &m), &block.global, k);
        let wj = &w * &jac;
        let weight = mult.weight(moments[g].n);
        a += (jac.transpose() * &wj) * weight;
        b += (wj.transpose() * &omega * &wj) * weight;
        trace_wo += (&w * &omega).trace();
    }
    let a_inv = if k == 0 {
        DMatrix::zeros(0, 0)
    } else {
        sym_inverse_checked(&symmetrize(&a), 1e-14, "JᵀWJ")?
    };
    let trace_uo = trace_wo - (&a_inv * &b).trace();
    Ok(RobustParts {
        trace_uo,
        a_inv,
        b: symmetrize(&b),
    })
}

fn fit_moments(fit: &FitResult, moments: &[&SampleMoments]) -> Result<()> {
    fit.layout.check_moments(moments)
}

/// Satorra-Bentler scaling factor c = tr(UΓ)/df and the scaled statistic T/c.
pub fn satorra_bentler(fit: &FitResult, moments: &[&SampleMoments]) -> Result<ScaledStatistic> {
    fit_moments(fit, moments)?;
    if !fit.converged {
        return Err(Error::Precondition("fit did not converge".into()));
    }
    let parts = robust_parts(&fit.layout, &fit.theta_hat.values, moments, fit.multiplier)?;
    Ok(scaled_statistic(fit.chisq, fit.df, parts.trace_uo))
}

/// Sandwich standard errors (JᵀWJ)⁻¹JᵀWΓWJ(JᵀWJ)⁻¹ with the sample-size weights.
pub fn robust_se(fit: &FitResult, moments: &[&SampleMoments]) -> Result<Vec<f64>> {
    fit_moments(fit, moments)?;
    if fit.layout.n_free() == 0 {
        return Ok(vec![]);
    }
    let parts = robust_parts(&fit.layout, &fit.theta_hat.values, moments, fit.multiplier)?;
    Ok(parts.sandwich_se())
}

/// Independence model: closed-form ML with σ_ii = s_ii and μ = m̄.
struct Baseline {
    chisq: f64,
    df: i64,
    scale: Option<f64>,
}

fn baseline(fit: &FitResult, moments: &[&SampleMoments], robust: bool) -> Result<Baseline> {
    let mult = fit.multiplier;
    let groups: Vec<(String, FactorModelSpec)> = fit
        .layout
        .groups
        .iter()
        .map(|b| {
            (
                b.label.clone(),
                FactorModelSpec::independence(b.spec.items.clone(), b.spec.mean_structure),
            )
        })
        .collect();
    let layout = ParameterLayout::multigroup(groups, &BTreeSet::new());
    let mut theta = vec![0.0; layout.n_free()];
    let mut chisq = 0.0;
    for (g, b) in layout.groups.iter().enumerate() {
        let s = mult.sample_cov(moments[g]);
        let chol = cholesky(s).ok_or_else(|| Error::Singular("sample covariance".into()))?;
        let ln_det_s = crate::linalg::spd_log_det(&chol);
        let ln_det_diag: f64 = (0..s.nrows()).map(|i| s[(i, i)].ln()).sum();
        chisq += mult.weight(moments[g].n) * (ln_det_diag - ln_det_s);
        for (&slot, &k) in b.slots.iter().zip(&b.global) {
            theta[k] = match slot {
                super::spec::Slot::Residual(i) => s[(i, i)],
                super::spec::Slot::Intercept(i) => moments[g].mean[i],
                _ => unreachable!("independence model has only variances and means"),
            };
        }
    }
    let df = layout.df();
    let scale = if robust {
        robust_parts(&layout, &theta, moments, mult)
            .ok()
            .map(|p| scaled_statistic(chisq, df, p.trace_uo).scale)
    } else {
        None
    };
    Ok(Baseline { chisq, df, scale })
}

/// Fit-index battery. With `use_scaled` the Satorra-Bentler statistic (for
/// both the model and the independence baseline) enters CFI, TLI and RMSEA.
pub fn fit_indices(
    fit: &FitResult,
    moments: &[&SampleMoments],
    use_scaled: bool,
) -> Result<FitIndices> {
    fit_moments(fit, moments)?;
    let scaled = if use_scaled {
        match fit.scaled {
            Some(s) => Some(s),
            None => satorra_bentler(fit, moments).ok(),
        }
    } else {
        fit.scaled
    };
    let base = baseline(fit, moments, use_scaled)?;
    let use_scaled = use_scaled && scaled.is_some() && base.scale.is_some();
    let (t, t_b) = if use_scaled {
        (
            scaled.unwrap().chisq_sb,
            base.chisq / base.scale.unwrap(),
        )
    } else {
        (fit.chisq, base.chisq)
    };
    let sample_weight: f64 = fit.groups.iter().map(|g| g.weight).sum();
    let inputs = IndexInputs {
        t,
        df: fit.df,
        t_baseline: t_b,
        df_baseline: base.df,
        sample_weight,
        n_groups: fit.groups.len(),
    };
    let (cfi, tli, rmsea, rmsea_ci90) = indices::incremental_and_absolute(&inputs);
    let srmr = fit
        .groups
        .iter()
        .map(|g| g.weight * g.srmr)
        .sum::<f64>()
        / sample_weight;
    let sb = scaled.unwrap_or(ScaledStatistic {
        scale: 1.0,
        chisq_sb: fit.chisq,
    });
    Ok(FitIndices {
        chisq: fit.chisq,
        df: fit.df,
        pvalue: indices::chisq_pvalue(fit.chisq, fit.df),
        chisq_sb: sb.chisq_sb,
        sb_scale: sb.scale,
        scaled: use_scaled,
        cfi,
        tli,
        rmsea,
        rmsea_ci90,
        srmr,
        baseline_chisq: t_b,
        baseline_df: base.df,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::normal_theory_gamma;
    use crate::scale::builtin_mcms;
    use crate::sem::spec::{compile_model, ModelOptions, Slot};
    use approx::assert_relative_eq;

    fn generating_values(spec: &FactorModelSpec) -> Vec<f64> {
        spec.free_slots()
            .iter()
            .map(|s| match *s {
                Slot::Loading(i, _) => 0.7 + 0.02 * i as f64,
                Slot::FactorCov(a, b) if a == b => 1.0 + 0.1 * a as f64,
                Slot::FactorCov(..) => 0.3,
                Slot::Residual(i) => 0.5 + 0.01 * i as f64,
                Slot::Intercept(i) => 3.0 + 0.1 * i as f64,
                Slot::FactorMean(_) => 0.0,
            })
            .collect()
    }

    fn population(spec: &FactorModelSpec, n: usize) -> (Vec<f64>, SampleMoments) {
        let truth = generating_values(spec);
        let m = spec.matrices(&spec.free_slots(), &truth);
        let moments = SampleMoments::from_cov(spec.items.clone(), n, m.mu(), m.sigma()).unwrap();
        (truth, moments)
    }

    #[test]
    fn exact_population_fit_recovers_parameters() {
        let spec = compile_model(&builtin_mcms(), &ModelOptions::with_means()).unwrap();
        let (truth, moments) = population(&spec, 1000);
        let fit = fit_model(&spec, &moments, &FitOptions::default()).unwrap();
        assert!(fit.chisq.abs() < 1e-6, "chisq {}", fit.chisq);
        for (a, b) in fit.theta_hat.values.iter().zip(&truth) {
            assert_relative_eq!(a, b, epsilon = 1e-4);
        }
        assert_eq!(fit.df, 120);
        assert!(fit.identified);
        assert!(fit.objective_trace.windows(2).all(|w| w[1] <= w[0]));
        assert_relative_eq!(fit.indices.cfi, 1.0);
        assert_eq!(fit.indices.rmsea, 0.0);
    }

    #[test]
    fn normal_theory_gamma_gives_unit_scale() {
        let def = builtin_mcms();
        let full = compile_model(&def, &ModelOptions::covariance_only()).unwrap();
        let (_, mut moments) = population(&full, 500);
        // Perturb the covariance so the restricted model misfits.
        moments.cov[(0, 17)] += 0.2;
        moments.cov[(17, 0)] += 0.2;
        moments.cov_ml = &moments.cov * (499.0 / 500.0);
        let restricted = compile_model(&def, &ModelOptions::restricted_mcms(false)).unwrap();
        let fit = fit_model(&restricted, &moments, &FitOptions::default()).unwrap();
        assert!(fit.chisq > 1.0);
        let nt = SampleMoments {
            gamma: normal_theory_gamma(&fit.groups[0].sigma_hat),
            ..moments.clone()
        };
        let sb = satorra_bentler(&fit, &[&nt]).unwrap();
        assert_relative_eq!(sb.scale, 1.0, epsilon = 1e-10);
        let se = robust_se(&fit, &[&nt]).unwrap();
        for (a, b) in se.iter().zip(&fit.se_normal) {
            assert_relative_eq!(a, b, max_relative = 1e-8);
        }
    }

    #[test]
    fn multiplier_convention() {
        let spec = compile_model(&builtin_mcms(), &ModelOptions::covariance_only()).unwrap();
        let (_, mut moments) = population(&spec, 300);
        moments.cov[(2, 5)] += 0.15;
        moments.cov[(5, 2)] += 0.15;
        moments.cov_ml = &moments.cov * (299.0 / 300.0);
        let a = fit_model(&spec, &moments, &FitOptions::default()).unwrap();
        let b = fit_model(
            &spec,
            &moments,
            &FitOptions {
                multiplier: ChisqMultiplier::N,
                ..FitOptions::default()
            },
        )
        .unwrap();
        assert_relative_eq!(a.chisq, 299.0 * a.fmin, max_relative = 1e-12);
        assert_relative_eq!(b.chisq, 300.0 * b.fmin, max_relative = 1e-12);
        // F is scale-free in S up to the multiplier, so the two statistics
        // differ only through the sample-size factor.
        assert_relative_eq!(a.fmin, b.fmin, max_relative = 1e-6);
    }

    #[test]
    fn under_identified_model_is_rejected() {
        let def = crate::scale::ScaleDefinition {
            factors: vec![crate::scale::FactorDef::new("F", &["a", "b", "c"])],
            ..builtin_mcms()
        };
        let spec = compile_model(&def, &ModelOptions::covariance_only()).unwrap();
        // 6 moments and 6 free parameters; freeing the marker makes df negative.
        let mut s2 = spec.clone();
        s2.loadings[0][0] = crate::sem::spec::Param::Free;
        let m = SampleMoments::from_cov(
            spec.items.clone(),
            100,
            nalgebra::DVector::zeros(3),
            DMatrix::from_row_slice(3, 3, &[1.0, 0.4, 0.3, 0.4, 1.0, 0.35, 0.3, 0.35, 1.0]),
        )
        .unwrap();
        assert!(matches!(
            fit_model(&s2, &m, &FitOptions::default()),
            Err(Error::InvalidModel(_))
        ));
        let fit = fit_model(&spec, &m, &FitOptions::default()).unwrap();
        assert_eq!(fit.df, 0);
        assert_eq!((fit.indices.cfi, fit.indices.tli, fit.indices.rmsea), (1.0, 1.0, 0.0));
    }
}
