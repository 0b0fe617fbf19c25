use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::vech_len;
use crate::scale::ScaleDefinition;

/// A pattern entry: estimated, or held at a constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Param {
    Free,
    Fixed(f64),
}

impl Param {
    pub fn is_free(self) -> bool {
        matches!(self, Param::Free)
    }

    /// Fixed value, or zero for free entries.
    pub fn fixed_or_zero(self) -> f64 {
        match self {
            Param::Free => 0.0,
            Param::Fixed(v) => v,
        }
    }

    fn is_nonzero(self) -> bool {
        match self {
            Param::Free => true,
            Param::Fixed(v) => v != 0.0,
        }
    }
}

impl Serialize for Param {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Param::Free => s.serialize_str("free"),
            Param::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Param {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct ParamVisitor;

        impl<'de> Visitor<'de> for ParamVisitor {
            type Value = Param;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("\"free\" or a number")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Param, E> {
                if v.eq_ignore_ascii_case("free") {
                    Ok(Param::Free)
                } else {
                    v.parse::<f64>()
                        .map(Param::Fixed)
                        .map_err(|_| E::custom(format!("bad pattern entry {v:?}")))
                }
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Param, E> {
                Ok(Param::Fixed(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Param, E> {
                Ok(Param::Fixed(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Param, E> {
                Ok(Param::Fixed(v as f64))
            }
        }

        d.deserialize_any(ParamVisitor)
    }
}

/// Confirmatory factor model for one group:
/// Σ = ΛΦΛᵀ + Θ and, with a mean structure, μ = τ + Λκ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModelSpec {
    pub items: Vec<String>,
    pub factors: Vec<String>,
    /// p rows × q columns.
    pub loadings: Vec<Vec<Param>>,
    /// q × q, symmetric.
    pub factor_cov: Vec<Vec<Param>>,
    /// Diagonal of Θ.
    pub residuals: Vec<Param>,
    pub mean_structure: bool,
    pub intercepts: Vec<Param>,
    pub factor_means: Vec<Param>,
}

/// Location of one parameter inside the model matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Slot {
    /// (item, factor)
    Loading(usize, usize),
    /// (row, col) with row >= col
    FactorCov(usize, usize),
    Residual(usize),
    Intercept(usize),
    FactorMean(usize),
}

impl Slot {
    /// Variances are kept strictly positive during estimation.
    pub fn is_variance(self) -> bool {
        matches!(self, Slot::Residual(_)) || matches!(self, Slot::FactorCov(i, j) if i == j)
    }

    pub fn is_covariance_side(self) -> bool {
        matches!(self, Slot::Loading(..) | Slot::FactorCov(..) | Slot::Residual(_))
    }
}

/// Model matrices at a particular parameter value.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMatrices {
    pub lambda: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub theta: DVector<f64>,
    pub tau: DVector<f64>,
    pub kappa: DVector<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelOptions {
    #[serde(default = "yes")]
    pub mean_structure: bool,
    /// Factor pairs whose covariance is fixed at zero.
    #[serde(default)]
    pub zero_covariances: Vec<(String, String)>,
}

fn yes() -> bool {
    true
}

impl ModelOptions {
    pub fn with_means() -> Self {
        ModelOptions {
            mean_structure: true,
            zero_covariances: vec![],
        }
    }

    pub fn covariance_only() -> Self {
        ModelOptions {
            mean_structure: false,
            zero_covariances: vec![],
        }
    }

    /// Intrinsic motivation uncorrelated with both external-regulation factors.
    pub fn restricted_mcms(mean_structure: bool) -> Self {
        ModelOptions {
            mean_structure,
            zero_covariances: vec![
                (
                    "Intrinsic Motivation".into(),
                    "Material External Regulation".into(),
                ),
                (
                    "Intrinsic Motivation".into(),
                    "Social External Regulation".into(),
                ),
            ],
        }
    }
}

/// One factor per scale factor, items loading only on their own factor with
/// the marker fixed at 1, all factor (co)variances free unless overridden,
/// free residual variances, and (with means) free intercepts and zero factor means.
pub fn compile_model(def: &ScaleDefinition, options: &ModelOptions) -> Result<FactorModelSpec> {
    def.validate()?;
    let items = def.items();
    let factors = def.factor_names();
    let (p, q) = (items.len(), factors.len());
    let mut loadings = vec![vec![Param::Fixed(0.0); q]; p];
    for (j, f) in def.factors.iter().enumerate() {
        for it in &f.items {
            let i = items.iter().position(|x| x == it).unwrap();
            loadings[i][j] = if *it == f.marker {
                Param::Fixed(1.0)
            } else {
                Param::Free
            };
        }
    }
    let mut factor_cov = vec![vec![Param::Free; q]; q];
    for (a, b) in &options.zero_covariances {
        let ia = factors
            .iter()
            .position(|f| f == a)
            .ok_or_else(|| Error::InvalidModel(format!("unknown factor {a}")))?;
        let ib = factors
            .iter()
            .position(|f| f == b)
            .ok_or_else(|| Error::InvalidModel(format!("unknown factor {b}")))?;
        if ia == ib {
            return Err(Error::InvalidModel(format!(
                "cannot fix the variance of {a} to zero"
            )));
        }
        factor_cov[ia][ib] = Param::Fixed(0.0);
        factor_cov[ib][ia] = Param::Fixed(0.0);
    }
    let spec = FactorModelSpec {
        items,
        factors,
        loadings,
        factor_cov,
        residuals: vec![Param::Free; p],
        mean_structure: options.mean_structure,
        intercepts: vec![if options.mean_structure {
            Param::Free
        } else {
            Param::Fixed(0.0)
        }; p],
        factor_means: vec![Param::Fixed(0.0); q],
    };
    spec.validate()?;
    Ok(spec)
}

impl FactorModelSpec {
    pub fn p(&self) -> usize {
        self.items.len()
    }

    pub fn q(&self) -> usize {
        self.factors.len()
    }

    /// Independence (baseline) model: free variances, free means when
    /// `mean_structure`, no common factors.
    pub fn independence(items: Vec<String>, mean_structure: bool) -> Self {
        let p = items.len();
        FactorModelSpec {
            items,
            factors: vec![],
            loadings: vec![vec![]; p],
            factor_cov: vec![],
            residuals: vec![Param::Free; p],
            mean_structure,
            intercepts: vec![if mean_structure {
                Param::Free
            } else {
                Param::Fixed(0.0)
            }; p],
            factor_means: vec![],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (p, q) = (self.p(), self.q());
        let bad = |m: String| Err(Error::InvalidModel(m));
        if self.loadings.len() != p || self.loadings.iter().any(|r| r.len() != q) {
            return bad(format!("loading pattern must be {p}×{q}"));
        }
        if self.factor_cov.len() != q || self.factor_cov.iter().any(|r| r.len() != q) {
            return bad(format!("factor covariance pattern must be {q}×{q}"));
        }
        if self.residuals.len() != p || self.intercepts.len() != p || self.factor_means.len() != q
        {
            return bad("residual/intercept/factor-mean pattern lengths disagree".into());
        }
        let unique: BTreeSet<&String> = self.items.iter().collect();
        if unique.len() != p {
            return bad("item codes must be unique".into());
        }
        for a in 0..q {
            for b in 0..q {
                if self.factor_cov[a][b] != self.factor_cov[b][a] {
                    return bad(format!(
                        "factor covariance pattern is not symmetric at ({}, {})",
                        self.factors[a], self.factors[b]
                    ));
                }
            }
        }
        for (i, row) in self.loadings.iter().enumerate() {
            if q > 0 && !row.iter().any(|l| l.is_nonzero()) {
                return bad(format!("item {} loads on no factor", self.items[i]));
            }
        }
        for j in 0..q {
            if self.factor_cov[j][j].is_free() {
                let markers = (0..p)
                    .filter(|&i| self.loadings[i][j] == Param::Fixed(1.0))
                    .count();
                if markers != 1 {
                    return bad(format!(
                        "factor {} has a free variance and {markers} marker loadings (need 1)",
                        self.factors[j]
                    ));
                }
            }
        }
        if !self.mean_structure
            && (self.intercepts.iter().any(|t| t.is_free())
                || self.factor_means.iter().any(|k| k.is_free()))
        {
            return bad("free intercepts or factor means require a mean structure".into());
        }
        Ok(())
    }

    /// Free parameters in canonical order: loadings (item-major), factor
    /// covariances (lower triangle, column-major), residual variances,
    /// intercepts, factor means.
    pub fn free_slots(&self) -> Vec<Slot> {
        let (p, q) = (self.p(), self.q());
        let mut out = Vec::new();
        for i in 0..p {
            for j in 0..q {
                if self.loadings[i][j].is_free() {
                    out.push(Slot::Loading(i, j));
                }
            }
        }
        for b in 0..q {
            for a in b..q {
                if self.factor_cov[a][b].is_free() {
                    out.push(Slot::FactorCov(a, b));
                }
            }
        }
        for i in 0..p {
            if self.residuals[i].is_free() {
                out.push(Slot::Residual(i));
            }
        }
        if self.mean_structure {
            for i in 0..p {
                if self.intercepts[i].is_free() {
                    out.push(Slot::Intercept(i));
                }
            }
            for j in 0..q {
                if self.factor_means[j].is_free() {
                    out.push(Slot::FactorMean(j));
                }
            }
        }
        out
    }

    pub fn n_free(&self) -> usize {
        self.free_slots().len()
    }

    pub fn n_free_covariance_side(&self) -> usize {
        self.free_slots()
            .into_iter()
            .filter(|s| s.is_covariance_side())
            .count()
    }

    /// Number of sample moments the model is fitted to.
    pub fn n_moments(&self) -> usize {
        vech_len(self.p()) + if self.mean_structure { self.p() } else { 0 }
    }

    /// Degrees of freedom; negative when under-identified by counting.
    pub fn df(&self) -> i64 {
        self.n_moments() as i64 - self.n_free() as i64
    }

    pub fn slot_label(&self, slot: Slot) -> String {
        match slot {
            Slot::Loading(i, j) => format!("lambda[{},{}]", self.items[i], self.factors[j]),
            Slot::FactorCov(a, b) => format!("phi[{},{}]", self.factors[a], self.factors[b]),
            Slot::Residual(i) => format!("theta[{}]", self.items[i]),
            Slot::Intercept(i) => format!("tau[{}]", self.items[i]),
            Slot::FactorMean(j) => format!("kappa[{}]", self.factors[j]),
        }
    }

    /// Inverse of [`slot_label`](Self::slot_label); `phi` accepts either factor order.
    pub fn parse_slot_label(&self, label: &str) -> Option<Slot> {
        let open = label.find('[')?;
        if !label.ends_with(']') {
            return None;
        }
        let kind = &label[..open];
        let args: Vec<&str> = label[open + 1..label.len() - 1].split(',').collect();
        let item = |s: &str| self.items.iter().position(|x| x == s);
        let factor = |s: &str| self.factors.iter().position(|x| x == s);
        match (kind, args.as_slice()) {
            ("lambda", [i, f]) => Some(Slot::Loading(item(i)?, factor(f)?)),
            ("phi", [a, b]) => {
                let (a, b) = (factor(a)?, factor(b)?);
                Some(Slot::FactorCov(a.max(b), a.min(b)))
            }
            ("theta", [i]) => Some(Slot::Residual(item(i)?)),
            ("tau", [i]) => Some(Slot::Intercept(item(i)?)),
            ("kappa", [f]) => Some(Slot::FactorMean(factor(f)?)),
            _ => None,
        }
    }

    pub fn pattern_at(&self, slot: Slot) -> Param {
        match slot {
            Slot::Loading(i, j) => self.loadings[i][j],
            Slot::FactorCov(a, b) => self.factor_cov[a][b],
            Slot::Residual(i) => self.residuals[i],
            Slot::Intercept(i) => self.intercepts[i],
            Slot::FactorMean(j) => self.factor_means[j],
        }
    }

    pub fn set_pattern(&mut self, slot: Slot, value: Param) {
        match slot {
            Slot::Loading(i, j) => self.loadings[i][j] = value,
            Slot::FactorCov(a, b) => {
                self.factor_cov[a][b] = value;
                self.factor_cov[b][a] = value;
            }
            Slot::Residual(i) => self.residuals[i] = value,
            Slot::Intercept(i) => self.intercepts[i] = value,
            Slot::FactorMean(j) => self.factor_means[j] = value,
        }
    }

    /// Matrices with fixed entries in place and free entries taken from
    /// `values` (ordered as [`free_slots`](Self::free_slots)).
    pub fn matrices(&self, slots: &[Slot], values: &[f64]) -> ModelMatrices {
        let (p, q) = (self.p(), self.q());
        let mut m = ModelMatrices {
            lambda: DMatrix::from_fn(p, q, |i, j| self.loadings[i][j].fixed_or_zero()),
            phi: DMatrix::from_fn(q, q, |a, b| self.factor_cov[a][b].fixed_or_zero()),
            theta: DVector::from_fn(p, |i, _| self.residuals[i].fixed_or_zero()),
            tau: DVector::from_fn(p, |i, _| self.intercepts[i].fixed_or_zero()),
            kappa: DVector::from_fn(q, |j, _| self.factor_means[j].fixed_or_zero()),
        };
        for (slot, &v) in slots.iter().zip(values) {
            m.set(*slot, v);
        }
        m
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse {
            what: "model specification".into(),
            message: e.to_string(),
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: FactorModelSpec = toml::from_str(text).map_err(|e| Error::Parse {
            what: "model specification".into(),
            message: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Same model with items (rows) reordered by `perm`: new item k is old item perm[k].
    pub fn permute_items(&self, perm: &[usize]) -> FactorModelSpec {
        FactorModelSpec {
            items: perm.iter().map(|&k| self.items[k].clone()).collect(),
            loadings: perm.iter().map(|&k| self.loadings[k].clone()).collect(),
            residuals: perm.iter().map(|&k| self.residuals[k]).collect(),
            intercepts: perm.iter().map(|&k| self.intercepts[k]).collect(),
            ..self.clone()
        }
    }
}

impl ModelMatrices {
    pub fn get(&self, slot: Slot) -> f64 {
        match slot {
            Slot::Loading(i, j) => self.lambda[(i, j)],
            Slot::FactorCov(a, b) => self.phi[(a, b)],
            Slot::Residual(i) => self.theta[i],
            Slot::Intercept(i) => self.tau[i],
            Slot::FactorMean(j) => self.kappa[j],
        }
    }

    pub fn set(&mut self, slot: Slot, v: f64) {
        match slot {
            Slot::Loading(i, j) => self.lambda[(i, j)] = v,
            Slot::FactorCov(a, b) => {
                self.phi[(a, b)] = v;
                self.phi[(b, a)] = v;
            }
            Slot::Residual(i) => self.theta[i] = v,
            Slot::Intercept(i) => self.tau[i] = v,
            Slot::FactorMean(j) => self.kappa[j] = v,
        }
    }

    pub fn sigma(&self) -> DMatrix<f64> {
        let mut s = &self.lambda * &self.phi * self.lambda.transpose();
        for i in 0..s.nrows() {
            s[(i, i)] += self.theta[i];
        }
        crate::linalg::symmetrize(&s)
    }

    pub fn mu(&self) -> DVector<f64> {
        &self.tau + &self.lambda * &self.kappa
    }
}

/// Model-implied covariance and (when the spec has a mean structure) mean vector.
pub fn implied_moments(
    spec: &FactorModelSpec,
    theta: &[f64],
) -> Result<(DMatrix<f64>, Option<DVector<f64>>)> {
    let slots = spec.free_slots();
    if theta.len() != slots.len() {
        return Err(Error::InvalidModel(format!(
            "parameter vector has {} entries, model has {} free parameters",
            theta.len(),
            slots.len()
        )));
    }
    let m = spec.matrices(&slots, theta);
    let mu = spec.mean_structure.then(|| m.mu());
    Ok((m.sigma(), mu))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scale::builtin_mcms;
    use approx::assert_relative_eq;

    #[test]
    fn mcms_parameter_count_and_df() {
        let spec = compile_model(&builtin_mcms(), &ModelOptions::covariance_only()).unwrap();
        let slots = spec.free_slots();
        let count = |f: fn(&Slot) -> bool| slots.iter().filter(|s| f(s)).count();
        assert_eq!(count(|s| matches!(s, Slot::Loading(..))), 12);
        assert_eq!(count(|s| matches!(s, Slot::FactorCov(a, b) if a == b)), 6);
        assert_eq!(count(|s| matches!(s, Slot::FactorCov(a, b) if a != b)), 15);
        assert_eq!(count(|s| matches!(s, Slot::Residual(_))), 18);
        assert_eq!(spec.n_free(), 51);
        assert_eq!(spec.df(), 120);
    }

    #[test]
    fn mean_structure_keeps_df() {
        let spec = compile_model(&builtin_mcms(), &ModelOptions::with_means()).unwrap();
        assert_eq!(spec.n_free(), 69);
        assert_eq!(spec.n_free_covariance_side(), 51);
        assert_eq!(spec.df(), 120);
    }

    #[test]
    fn restricted_variant() {
        let spec = compile_model(&builtin_mcms(), &ModelOptions::restricted_mcms(false)).unwrap();
        assert_eq!(spec.n_free_covariance_side(), 49);
        assert_eq!(spec.df(), 122);
    }

    #[test]
    fn unknown_factor_in_options() {
        let opts = ModelOptions {
            mean_structure: false,
            zero_covariances: vec![("Nope".into(), "Amotivation".into())],
        };
        assert!(compile_model(&builtin_mcms(), &opts).is_err());
    }

    #[test]
    fn labels_round_trip() {
        let spec = compile_model(&builtin_mcms(), &ModelOptions::with_means()).unwrap();
        for slot in spec.free_slots() {
            let label = spec.slot_label(slot);
            assert_eq!(spec.parse_slot_label(&label), Some(slot), "{label}");
        }
        assert_eq!(
            spec.slot_label(Slot::Loading(1, 0)),
            "lambda[Am2,Amotivation]"
        );
        assert_eq!(
            spec.parse_slot_label("phi[Amotivation,Intrinsic Motivation]"),
            Some(Slot::FactorCov(5, 0))
        );
    }

    #[test]
    fn null_model_sigma_is_identity() {
        let mut spec = compile_model(&builtin_mcms(), &ModelOptions::covariance_only()).unwrap();
        for row in spec.loadings.iter_mut() {
            for l in row.iter_mut() {
                if *l == Param::Fixed(1.0) {
                    *l = Param::Free;
                }
            }
        }
        for j in 0..spec.q() {
            spec.factor_cov[j][j] = Param::Fixed(1.0);
        }
        let slots = spec.free_slots();
        let theta: Vec<f64> = slots
            .iter()
            .map(|s| if matches!(s, Slot::Residual(_)) { 1.0 } else { 0.0 })
            .collect();
        let (sigma, mu) = implied_moments(&spec, &theta).unwrap();
        assert_relative_eq!(sigma, DMatrix::identity(18, 18));
        assert!(mu.is_none());
    }

    #[test]
    fn single_factor_by_hand() {
        let spec = FactorModelSpec {
            items: vec!["y1".into(), "y2".into()],
            factors: vec!["f".into()],
            loadings: vec![vec![Param::Fixed(1.0)], vec![Param::Free]],
            factor_cov: vec![vec![Param::Free]],
            residuals: vec![Param::Free; 2],
            mean_structure: false,
            intercepts: vec![Param::Fixed(0.0); 2],
            factor_means: vec![Param::Fixed(0.0)],
        };
        spec.validate().unwrap();
        // slots: lambda[y2], phi, theta1, theta2
        let (sigma, _) = implied_moments(&spec, &[0.5, 2.0, 1.0, 1.0]).unwrap();
        assert_relative_eq!(
            sigma,
            DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 1.5]),
            epsilon = 1e-15
        );
    }

    #[test]
    fn wrong_theta_length() {
        let spec = compile_model(&builtin_mcms(), &ModelOptions::covariance_only()).unwrap();
        assert!(implied_moments(&spec, &[0.0; 3]).is_err());
    }

    #[test]
    fn spec_file_round_trip() {
        let spec = compile_model(&builtin_mcms(), &ModelOptions::restricted_mcms(true)).unwrap();
        let text = spec.to_toml().unwrap();
        assert!(text.contains("\"free\""));
        let back = FactorModelSpec::from_toml(&text).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn validation_catches_missing_marker() {
        let mut spec = compile_model(&builtin_mcms(), &ModelOptions::covariance_only()).unwrap();
        spec.loadings[0][0] = Param::Free;
        assert!(spec.validate().is_err());
    }
}
