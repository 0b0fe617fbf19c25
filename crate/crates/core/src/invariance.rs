//! Multigroup CFA and the configural → metric → scalar invariance ladder.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::SampleMoments;
use crate::sem::{fit_layout, FactorModelSpec, FitOptions, FitResult, Param, ParameterLayout, Slot};

/// Tolerance guarding the 0.010 / 0.015 cut-offs against rounding in deltas
/// computed from rounded published values.
const CUTOFF_EPS: f64 = 1e-12;
pub const CFI_CUTOFF: f64 = 0.010;
pub const RMSEA_CUTOFF: f64 = 0.015;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecisionMode {
    /// Non-invariant iff the CFI drop exceeds 0.010.
    #[default]
    CfiOnly,
    /// Non-invariant iff the CFI drop exceeds 0.010 and the RMSEA rise exceeds 0.015.
    Conjunctive,
}

impl DecisionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DecisionMode::CfiOnly => "cfi-only",
            DecisionMode::Conjunctive => "conjunctive",
        }
    }
}

impl std::str::FromStr for DecisionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cfi-only" => Ok(DecisionMode::CfiOnly),
            "conjunctive" => Ok(DecisionMode::Conjunctive),
            _ => Err(Error::Config(format!("unknown decision mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InvarianceLevel {
    Configural,
    Metric,
    FullScalar,
    PartialScalar,
}

impl InvarianceLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            InvarianceLevel::Configural => "Configural",
            InvarianceLevel::Metric => "Metric",
            InvarianceLevel::FullScalar => "Full Scalar",
            InvarianceLevel::PartialScalar => "Partial Scalar",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub cfi_drop: f64,
    pub rmsea_rise: f64,
    pub invariant: bool,
    pub mode: DecisionMode,
}

/// Decision from precomputed deltas.
pub fn decide(cfi_drop: f64, rmsea_rise: f64, mode: DecisionMode) -> Decision {
    let cfi_bad = cfi_drop > CFI_CUTOFF + CUTOFF_EPS;
    let rmsea_bad = rmsea_rise > RMSEA_CUTOFF + CUTOFF_EPS;
    let non_invariant = match mode {
        DecisionMode::CfiOnly => cfi_bad,
        DecisionMode::Conjunctive => cfi_bad && rmsea_bad,
    };
    Decision {
        cfi_drop,
        rmsea_rise,
        invariant: !non_invariant,
        mode,
    }
}

pub fn invariance_decision(prev: &FitResult, cur: &FitResult, mode: DecisionMode) -> Decision {
    decide(
        prev.indices.cfi - cur.indices.cfi,
        cur.indices.rmsea - prev.indices.rmsea,
        mode,
    )
}

/// Cross-group constraint pattern over a shared base model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultigroupSpec {
    pub base: FactorModelSpec,
    pub groups: Vec<String>,
    pub tie_loadings: bool,
    pub tie_intercepts: bool,
    /// Items whose intercepts stay group-specific when intercepts are tied.
    pub freed_intercepts: BTreeSet<String>,
    /// Group whose factor means stay fixed at zero.
    pub reference_group: String,
}

impl MultigroupSpec {
    pub fn configural(base: FactorModelSpec, groups: Vec<String>, reference_group: String) -> Self {
        MultigroupSpec {
            base,
            groups,
            tie_loadings: false,
            tie_intercepts: false,
            freed_intercepts: BTreeSet::new(),
            reference_group,
        }
    }

    pub fn level(&self) -> InvarianceLevel {
        match (self.tie_loadings, self.tie_intercepts, self.freed_intercepts.is_empty()) {
            (false, _, _) => InvarianceLevel::Configural,
            (true, false, _) => InvarianceLevel::Metric,
            (true, true, true) => InvarianceLevel::FullScalar,
            (true, true, false) => InvarianceLevel::PartialScalar,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups.len() < 2 {
            return Err(Error::Precondition("multigroup analysis needs at least 2 groups".into()));
        }
        let unique: BTreeSet<&String> = self.groups.iter().collect();
        if unique.len() != self.groups.len() {
            return Err(Error::Config("duplicate group labels".into()));
        }
        if !self.groups.contains(&self.reference_group) {
            return Err(Error::Config(format!(
                "reference group {} is not among the groups",
                self.reference_group
            )));
        }
        if let Some(it) = self.freed_intercepts.iter().find(|it| !self.base.items.contains(it)) {
            return Err(Error::Config(format!("freed intercept {it} is not a model item")));
        }
        if self.tie_intercepts && !self.base.mean_structure {
            return Err(Error::InvalidModel("scalar constraints need a mean structure".into()));
        }
        if self.tie_intercepts {
            for (j, f) in self.base.factors.iter().enumerate() {
                let tied = (0..self.base.p())
                    .filter(|&i| self.base.loadings[i][j] != Param::Fixed(0.0))
                    .filter(|&i| !self.freed_intercepts.contains(&self.base.items[i]))
                    .count();
                if tied == 0 {
                    return Err(Error::InvalidModel(format!(
                        "factor {f} has no tied intercept; its mean is not identified"
                    )));
                }
                if tied < 2 {
                    log::warn!("factor {f} keeps only {tied} tied intercept");
                }
            }
        }
        Ok(())
    }

    /// Slot labels shared across groups.
    pub fn equality_sets(&self) -> BTreeSet<String> {
        let mut tied = BTreeSet::new();
        for slot in self.base.free_slots() {
            let share = match slot {
                Slot::Loading(..) => self.tie_loadings,
                Slot::Intercept(i) => {
                    self.tie_intercepts && !self.freed_intercepts.contains(&self.base.items[i])
                }
                _ => false,
            };
            if share {
                tied.insert(self.base.slot_label(slot));
            }
        }
        tied
    }

    pub fn group_spec(&self, group: &str) -> FactorModelSpec {
        let mut spec = self.base.clone();
        if self.tie_intercepts && group != self.reference_group {
            spec.factor_means = vec![Param::Free; spec.q()];
        }
        spec
    }

    pub fn layout(&self) -> ParameterLayout {
        let groups = self
            .groups
            .iter()
            .map(|g| (g.clone(), self.group_spec(g)))
            .collect();
        ParameterLayout::multigroup(groups, &self.equality_sets())
    }
}

/// Moments for one group, in model item order.
#[derive(Debug, Clone)]
pub struct GroupMoments {
    pub label: String,
    pub moments: SampleMoments,
}

#[derive(Debug, Clone)]
pub struct MultigroupFit {
    pub spec: MultigroupSpec,
    pub fit: FitResult,
}

#[derive(Debug, Clone)]
pub struct InvarianceOptions {
    pub fit: FitOptions,
    pub decision_mode: DecisionMode,
    /// Defaults to the lexicographically first label.
    pub reference_group: Option<String>,
    pub max_freed: usize,
}

impl Default for InvarianceOptions {
    fn default() -> Self {
        InvarianceOptions {
            fit: FitOptions::default(),
            decision_mode: DecisionMode::CfiOnly,
            reference_group: None,
            max_freed: 6,
        }
    }
}

fn ordered_moments<'a>(spec: &MultigroupSpec, groups: &'a [GroupMoments]) -> Result<Vec<&'a SampleMoments>> {
    spec.groups
        .iter()
        .map(|label| {
            groups
                .iter()
                .find(|g| &g.label == label)
                .map(|g| &g.moments)
                .ok_or_else(|| Error::Config(format!("no moments for group {label}")))
        })
        .collect()
}

fn fit_spec(
    spec: MultigroupSpec,
    groups: &[GroupMoments],
    options: &FitOptions,
    warm: Option<&MultigroupFit>,
) -> Result<MultigroupFit> {
    spec.validate()?;
    let moments = ordered_moments(&spec, groups)?;
    let layout = spec.layout();
    let mut opts = options.clone();
    if let Some(prev) = warm {
        opts.start = Some(layout.start_from(&prev.fit.layout, &prev.fit.theta_hat.values, &moments));
    }
    let fit = fit_layout(&layout, &moments, &opts)?;
    Ok(MultigroupFit { spec, fit })
}

pub fn reference_group(groups: &[GroupMoments], options: &InvarianceOptions) -> Result<String> {
    match &options.reference_group {
        Some(r) => Ok(r.clone()),
        None => groups
            .iter()
            .map(|g| g.label.clone())
            .min()
            .ok_or_else(|| Error::Precondition("no groups".into())),
    }
}

/// Simultaneous fit with a shared pattern and no cross-group equalities.
pub fn fit_configural(
    base: &FactorModelSpec,
    groups: &[GroupMoments],
    options: &InvarianceOptions,
) -> Result<MultigroupFit> {
    let spec = MultigroupSpec::configural(
        base.clone(),
        groups.iter().map(|g| g.label.clone()).collect(),
        reference_group(groups, options)?,
    );
    fit_spec(spec, groups, &options.fit, None)
}

/// All free loadings tied across groups.
pub fn constrain_metric(
    configural: &MultigroupFit,
    groups: &[GroupMoments],
    options: &InvarianceOptions,
) -> Result<MultigroupFit> {
    let spec = MultigroupSpec {
        tie_loadings: true,
        ..configural.spec.clone()
    };
    fit_spec(spec, groups, &options.fit, Some(configural))
}

/// Intercepts tied except `freed`; factor means free outside the reference group.
pub fn constrain_scalar(
    metric: &MultigroupFit,
    groups: &[GroupMoments],
    freed: &BTreeSet<String>,
    options: &InvarianceOptions,
) -> Result<MultigroupFit> {
    if !metric.spec.tie_loadings {
        return Err(Error::Precondition("scalar constraints build on a metric model".into()));
    }
    let spec = MultigroupSpec {
        tie_intercepts: true,
        freed_intercepts: freed.clone(),
        ..metric.spec.clone()
    };
    fit_spec(spec, groups, &options.fit, Some(metric))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFit {
    pub item: String,
    pub chisq: f64,
    pub cfi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchStep {
    pub freed: String,
    pub chisq: f64,
    pub decision: Decision,
    /// Every single-release refit considered at this step, by item code.
    pub candidates: Vec<CandidateFit>,
}

#[derive(Debug, Clone)]
pub struct PartialSearch {
    pub freed: Vec<String>,
    pub fit: MultigroupFit,
    pub passed: bool,
    pub trace: Vec<SearchStep>,
}

/// Greedy release of intercepts: each step refits every single additional
/// release, keeps the one with the smallest T (ties by item code), and stops
/// once the model passes against `metric` or `options.max_freed` is reached.
pub fn partial_scalar_search(
    metric: &MultigroupFit,
    full_scalar: &MultigroupFit,
    groups: &[GroupMoments],
    options: &InvarianceOptions,
) -> Result<PartialSearch> {
    if invariance_decision(&metric.fit, &full_scalar.fit, options.decision_mode).invariant {
        log::warn!("full scalar model already passes; searching anyway");
    }
    let mut freed: BTreeSet<String> = full_scalar.spec.freed_intercepts.clone();
    let mut current = full_scalar.clone();
    let mut trace = Vec::new();
    let base = &metric.spec.base;
    loop {
        if freed.len() >= options.max_freed {
            log::warn!("partial search stopped after freeing {} intercepts", freed.len());
            return Ok(PartialSearch {
                freed: trace.iter().map(|s: &SearchStep| s.freed.clone()).collect(),
                fit: current,
                passed: false,
                trace,
            });
        }
        let mut candidates: Vec<String> = base
            .items
            .iter()
            .filter(|it| !freed.contains(*it))
            .filter(|it| {
                let mut trial = freed.clone();
                trial.insert((*it).clone());
                MultigroupSpec {
                    freed_intercepts: trial,
                    ..current.spec.clone()
                }
                .validate()
                .is_ok()
            })
            .cloned()
            .collect();
        candidates.sort();
        if candidates.is_empty() {
            return Ok(PartialSearch {
                freed: trace.iter().map(|s| s.freed.clone()).collect(),
                fit: current,
                passed: false,
                trace,
            });
        }
        let fits: Vec<Result<MultigroupFit>> = candidates
            .par_iter()
            .map(|item| {
                let mut trial = freed.clone();
                trial.insert(item.clone());
                let spec = MultigroupSpec {
                    freed_intercepts: trial,
                    ..current.spec.clone()
                };
                fit_spec(spec, groups, &options.fit, Some(&current))
            })
            .collect();
        let mut summaries = Vec::new();
        let mut best: Option<(usize, f64)> = None;
        for (k, (item, f)) in candidates.iter().zip(&fits).enumerate() {
            match f {
                Ok(f) => {
                    summaries.push(CandidateFit {
                        item: item.clone(),
                        chisq: f.fit.chisq,
                        cfi: f.fit.indices.cfi,
                    });
                    if best.is_none_or(|(_, t)| f.fit.chisq < t) {
                        best = Some((k, f.fit.chisq));
                    }
                }
                Err(e) => log::warn!("candidate release of {item} failed: {e}"),
            }
        }
        let Some((k, _)) = best else {
            return Err(Error::Precondition("every candidate refit failed".into()));
        };
        let item = candidates[k].clone();
        let chosen = fits.into_iter().nth(k).unwrap()?;
        let decision = invariance_decision(&metric.fit, &chosen.fit, options.decision_mode);
        freed.insert(item.clone());
        trace.push(SearchStep {
            freed: item,
            chisq: chosen.fit.chisq,
            decision,
            candidates: summaries,
        });
        current = chosen;
        if decision.invariant {
            return Ok(PartialSearch {
                freed: trace.iter().map(|s| s.freed.clone()).collect(),
                fit: current,
                passed: true,
                trace,
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentMean {
    pub factor: String,
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupLatentMeans {
    pub group: String,
    pub reference: bool,
    pub means: Vec<LatentMean>,
}

/// κ̂ per group with robust (if available) standard errors; zeros with SE 0
/// for the reference group.
pub fn latent_means(scalar: &MultigroupFit) -> Result<Vec<GroupLatentMeans>> {
    if !scalar.spec.tie_intercepts {
        return Err(Error::Precondition(
            "latent means require a (partial) scalar model".into(),
        ));
    }
    let fit = &scalar.fit;
    let se = fit.se_robust.as_ref().unwrap_or(&fit.se_normal);
    Ok(fit
        .layout
        .groups
        .iter()
        .enumerate()
        .map(|(g, b)| {
            let m = fit.matrices(g);
            GroupLatentMeans {
                group: b.label.clone(),
                reference: b.label == scalar.spec.reference_group,
                means: b
                    .spec
                    .factors
                    .iter()
                    .enumerate()
                    .map(|(j, f)| LatentMean {
                        factor: f.clone(),
                        estimate: m.kappa[j],
                        se: fit
                            .layout
                            .index_of(g, Slot::FactorMean(j))
                            .map(|k| se[k])
                            .unwrap_or(0.0),
                    })
                    .collect(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: InvarianceLevel,
    pub chisq: f64,
    pub chisq_sb: f64,
    pub df: i64,
    pub n_free: usize,
    pub cfi: f64,
    pub tli: f64,
    pub rmsea: f64,
    pub rmsea_ci90: (f64, f64),
    pub srmr: f64,
    /// Against the previous level (metric for both scalar variants).
    pub decision: Option<Decision>,
    pub freed_intercepts: Vec<String>,
}

impl LevelSummary {
    fn new(level: InvarianceLevel, f: &MultigroupFit, decision: Option<Decision>) -> Self {
        let ix = &f.fit.indices;
        LevelSummary {
            level,
            chisq: ix.chisq,
            chisq_sb: ix.chisq_sb,
            df: ix.df,
            n_free: f.fit.layout.n_free(),
            cfi: ix.cfi,
            tli: ix.tli,
            rmsea: ix.rmsea,
            rmsea_ci90: ix.rmsea_ci90,
            srmr: ix.srmr,
            decision,
            freed_intercepts: f.spec.freed_intercepts.iter().cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub groups: Vec<String>,
    pub reference_group: String,
    pub decision_mode: DecisionMode,
    pub levels: Vec<LevelSummary>,
    pub freed: Vec<String>,
    pub search: Vec<SearchStep>,
    pub partial_passed: Option<bool>,
    pub latent_means: Option<Vec<GroupLatentMeans>>,
}

#[derive(Debug, Clone)]
pub struct InvarianceRun {
    pub report: InvarianceReport,
    pub configural: MultigroupFit,
    pub metric: MultigroupFit,
    pub full_scalar: MultigroupFit,
    pub partial: Option<PartialSearch>,
}

/// Configural, metric and full scalar fits; the partial search runs only
/// when full scalar fails against metric.
pub fn run_invariance(
    base: &FactorModelSpec,
    groups: &[GroupMoments],
    options: &InvarianceOptions,
) -> Result<InvarianceRun> {
    let mode = options.decision_mode;
    let configural = fit_configural(base, groups, options)?;
    let metric = constrain_metric(&configural, groups, options)?;
    let full = constrain_scalar(&metric, groups, &BTreeSet::new(), options)?;
    let metric_decision = invariance_decision(&configural.fit, &metric.fit, mode);
    let scalar_decision = invariance_decision(&metric.fit, &full.fit, mode);
    let mut levels = vec![
        LevelSummary::new(InvarianceLevel::Configural, &configural, None),
        LevelSummary::new(InvarianceLevel::Metric, &metric, Some(metric_decision)),
        LevelSummary::new(InvarianceLevel::FullScalar, &full, Some(scalar_decision)),
    ];
    let (partial, latent) = if scalar_decision.invariant {
        (None, Some(latent_means(&full)?))
    } else {
        let search = partial_scalar_search(&metric, &full, groups, options)?;
        let d = search.trace.last().map(|s| s.decision);
        levels.push(LevelSummary::new(InvarianceLevel::PartialScalar, &search.fit, d));
        let latent = if search.passed {
            Some(latent_means(&search.fit)?)
        } else {
            None
        };
        (Some(search), latent)
    };
    let report = InvarianceReport {
        groups: configural.spec.groups.clone(),
        reference_group: configural.spec.reference_group.clone(),
        decision_mode: mode,
        levels,
        freed: partial.as_ref().map(|p| p.freed.clone()).unwrap_or_default(),
        search: partial.as_ref().map(|p| p.trace.clone()).unwrap_or_default(),
        partial_passed: partial.as_ref().map(|p| p.passed),
        latent_means: latent,
    };
    Ok(InvarianceRun {
        report,
        configural,
        metric,
        full_scalar: full,
        partial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scale::builtin_mcms;
    use crate::sem::{compile_model, ModelOptions};

    #[test]
    fn decision_rules() {
        assert!(!decide(0.011, 0.005, DecisionMode::CfiOnly).invariant);
        assert!(decide(0.008, 0.004, DecisionMode::CfiOnly).invariant);
        assert!(decide(0.011, 0.005, DecisionMode::Conjunctive).invariant);
        assert!(!decide(0.028, 0.016, DecisionMode::Conjunctive).invariant);
        // A drop of exactly 0.010 is not "greater than".
        assert!(decide(0.96 - 0.95, 0.0, DecisionMode::CfiOnly).invariant);
    }

    #[test]
    fn constraint_counting() {
        let base = compile_model(&builtin_mcms(), &ModelOptions::with_means()).unwrap();
        let groups: Vec<String> = ["A", "B", "C"].map(String::from).to_vec();
        let g = groups.len() as i64;
        let conf = MultigroupSpec::configural(base, groups, "A".into());
        let metric = MultigroupSpec {
            tie_loadings: true,
            ..conf.clone()
        };
        let scalar = MultigroupSpec {
            tie_intercepts: true,
            ..metric.clone()
        };
        let partial = MultigroupSpec {
            freed_intercepts: ["Am3".to_string()].into(),
            ..scalar.clone()
        };
        assert_eq!(conf.layout().df(), 120 * g);
        assert_eq!(metric.layout().df() - conf.layout().df(), 12 * (g - 1));
        assert_eq!(scalar.layout().df() - metric.layout().df(), 18 * (g - 1) - 6 * (g - 1));
        assert_eq!(partial.layout().df() - metric.layout().df(), 17 * (g - 1) - 6 * (g - 1));
        assert_eq!(scalar.level(), InvarianceLevel::FullScalar);
        assert_eq!(partial.level(), InvarianceLevel::PartialScalar);
    }

    #[test]
    fn spec_validation() {
        let base = compile_model(&builtin_mcms(), &ModelOptions::with_means()).unwrap();
        let one = MultigroupSpec::configural(base.clone(), vec!["A".into()], "A".into());
        assert!(matches!(one.validate(), Err(Error::Precondition(_))));
        let bad_ref = MultigroupSpec::configural(base.clone(), vec!["A".into(), "B".into()], "Z".into());
        assert!(bad_ref.validate().is_err());
        let all_am = MultigroupSpec {
            tie_loadings: true,
            tie_intercepts: true,
            freed_intercepts: ["Am1", "Am2", "Am3"].map(String::from).into(),
            ..MultigroupSpec::configural(base, vec!["A".into(), "B".into()], "A".into())
        };
        assert!(all_am.validate().is_err());
    }
}
