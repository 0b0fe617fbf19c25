//! End-to-end orchestration: ingest, descriptives, EFA, CFA and invariance.
//!
//! All analysis happens in memory; artifacts are written only after every
//! stage has succeeded, so a failed run leaves no partial output.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::descriptives::{alpha_table, composite_correlations, composite_stats};
use crate::efa::{reduce_item_pool, ReductionPolicy};
use crate::error::{Error, Result};
use crate::ingest::{
    apply_spam_filter, compute_sample_moments, format_rejection_log, parse_response_file, split_groups,
    Rejection, SpamCounts, SpamRules,
};
use crate::invariance::{run_invariance, DecisionMode, GroupMoments, InvarianceOptions};
use crate::report::{
    cfa_group_report, render_report, CorrelationSection, EfaSection, GroupDescriptives, IngestSection,
    InvarianceSection, MasterReport, RenderedReport, ARTIFACTS,
};
use crate::scale::{builtin_mcms, ResponseMatrix, ScaleDefinition};
use crate::sem::{compile_model, fit_model, ChisqMultiplier, FitOptions, ModelOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Scale definition file; the built-in instrument when absent.
    #[serde(default)]
    pub scale: Option<PathBuf>,
    pub responses: Vec<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "SpamRules::default_three")]
    pub spam: SpamRules,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub groups: GroupConfig,
    #[serde(default)]
    pub efa: EfaConfig,
    #[serde(default)]
    pub stages: StageSelection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("mcms-output")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Also fit the variant with intrinsic motivation uncorrelated with both
    /// external-regulation factors.
    pub restricted_correlations: bool,
    pub use_scaled: bool,
    pub chisq_multiplier: ChisqMultiplier,
    pub decision_mode: DecisionMode,
    pub max_freed: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            restricted_correlations: false,
            use_scaled: true,
            chisq_multiplier: ChisqMultiplier::NMinusOne,
            decision_mode: DecisionMode::CfiOnly,
            max_freed: 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupSet {
    Countries,
    Income,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncomeGroup {
    pub label: String,
    pub countries: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroupConfig {
    pub sets: Vec<GroupSet>,
    pub pooled_label: String,
    /// Country labels left out of the pooled group.
    pub exclude_from_all: Vec<String>,
    pub income: Vec<IncomeGroup>,
    pub reference_group: Option<String>,
}

impl Default for GroupConfig {
    fn default() -> Self {
        let income = |label: &str, c: [&str; 3]| IncomeGroup {
            label: label.into(),
            countries: c.iter().map(|s| s.to_string()).collect(),
        };
        GroupConfig {
            sets: vec![GroupSet::Countries, GroupSet::Income, GroupSet::All],
            pooled_label: "ALL".into(),
            exclude_from_all: vec![],
            income: vec![
                income("HIGH", ["USA", "ESP", "DEU"]),
                income("MID", ["BRA", "RUS", "MEX"]),
                income("LOW", ["IND", "IDN", "PHL"]),
            ],
            reference_group: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EfaConfig {
    /// Group the reduction runs on; the pooled group when absent.
    pub group: Option<String>,
    pub policy: ReductionPolicy,
}

impl Default for EfaConfig {
    fn default() -> Self {
        EfaConfig {
            group: None,
            policy: ReductionPolicy::round1(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageSelection {
    pub descriptives: bool,
    pub efa: bool,
    pub cfa: bool,
    pub invariance: bool,
}

impl Default for StageSelection {
    fn default() -> Self {
        StageSelection {
            descriptives: true,
            efa: true,
            cfa: true,
            invariance: true,
        }
    }
}

impl StageSelection {
    pub fn ingest_only() -> Self {
        StageSelection {
            descriptives: false,
            efa: false,
            cfa: false,
            invariance: false,
        }
    }
}

impl PipelineConfig {
    pub fn new(responses: Vec<PathBuf>) -> Self {
        PipelineConfig {
            scale: None,
            responses,
            output_dir: default_output_dir(),
            spam: SpamRules::default_three(),
            model: ModelConfig::default(),
            groups: GroupConfig::default(),
            efa: EfaConfig::default(),
            stages: StageSelection::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative paths are taken against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        cfg.scale = cfg.scale.as_deref().map(resolve);
        cfg.responses = cfg.responses.iter().map(|p| resolve(p)).collect();
        cfg.output_dir = resolve(&cfg.output_dir);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Loads the scale and checks every precondition that does not need the
    /// response data. Nothing is written.
    pub fn validate(&self) -> Result<ScaleDefinition> {
        let def = match &self.scale {
            Some(p) => {
                if !p.is_file() {
                    return Err(Error::Config(format!("scale file {} does not exist", p.display())));
                }
                ScaleDefinition::load(p).map_err(|e| match e {
                    Error::InvalidScale(_) => e,
                    e => Error::Config(format!("scale file {}: {e}", p.display())),
                })?
            }
            None => builtin_mcms(),
        };
        def.validate()?;
        if self.responses.is_empty() {
            return Err(Error::Config("no response files configured".into()));
        }
        for p in &self.responses {
            if !p.is_file() {
                return Err(Error::Config(format!("response file {} does not exist", p.display())));
            }
        }
        self.spam.validate(&def)?;
        if self.groups.sets.is_empty() {
            return Err(Error::Config("group selection is empty".into()));
        }
        if self.groups.sets.contains(&GroupSet::Income) && self.groups.income.is_empty() {
            return Err(Error::Config("income grouping selected but no income groups defined".into()));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(Error::Config("output directory is empty".into()));
        }
        if self.output_dir.is_file() {
            return Err(Error::Config(format!(
                "output path {} is a file",
                self.output_dir.display()
            )));
        }
        self.efa.policy.validate()?;
        if self.model.restricted_correlations {
            compile_model(&def, &ModelOptions::restricted_mcms(true))?;
        }
        Ok(def)
    }

    /// Resolved configuration as embedded in the master report. The output
    /// directory is left out so relocating a run does not change the report.
    pub fn resolved_json(&self) -> Result<serde_json::Value> {
        let mut v = serde_json::to_value(self).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(obj) = v.as_object_mut() {
            obj.remove("output_dir");
        }
        Ok(v)
    }
}

/// Analysis groups in display order: countries, income groups, pooled.
#[derive(Debug, Clone)]
pub struct AnalysisGroups {
    pub countries: Vec<ResponseMatrix>,
    pub income: Vec<ResponseMatrix>,
    pub pooled: Option<ResponseMatrix>,
    pub notes: Vec<String>,
}

impl AnalysisGroups {
    pub fn all(&self) -> impl Iterator<Item = &ResponseMatrix> {
        self.countries.iter().chain(&self.income).chain(&self.pooled)
    }
}

fn build_groups(
    by_country: &BTreeMap<String, ResponseMatrix>,
    cfg: &GroupConfig,
) -> Result<AnalysisGroups> {
    let mut notes = Vec::new();
    let want = |s: GroupSet| cfg.sets.contains(&s);
    let countries = if want(GroupSet::Countries) {
        by_country.values().cloned().collect()
    } else {
        vec![]
    };
    let mut income = Vec::new();
    if want(GroupSet::Income) {
        for g in &cfg.income {
            let parts: Vec<&ResponseMatrix> = g.countries.iter().filter_map(|c| by_country.get(c)).collect();
            let missing: Vec<&str> = g
                .countries
                .iter()
                .filter(|c| !by_country.contains_key(*c))
                .map(String::as_str)
                .collect();
            if !missing.is_empty() {
                notes.push(format!(
                    "income group {} has no clean responses from {}",
                    g.label,
                    missing.join(", ")
                ));
            }
            if !parts.is_empty() {
                income.push(ResponseMatrix::stack(&parts, g.label.clone())?);
            }
        }
    }
    let pooled = if want(GroupSet::All) {
        let parts: Vec<&ResponseMatrix> = by_country
            .iter()
            .filter(|(c, _)| !cfg.exclude_from_all.contains(c))
            .map(|(_, m)| m)
            .collect();
        if parts.is_empty() {
            return Err(Error::InsufficientData("pooled group is empty".into()));
        }
        Some(ResponseMatrix::stack(&parts, cfg.pooled_label.clone())?)
    } else {
        None
    };
    Ok(AnalysisGroups {
        countries,
        income,
        pooled,
        notes,
    })
}

fn counts_of(members: &[&str], per_group: &BTreeMap<String, SpamCounts>) -> SpamCounts {
    let (raw, clean) = members
        .iter()
        .filter_map(|m| per_group.get(*m))
        .fold((0, 0), |(r, c), s| (r + s.n_raw, c + s.n_clean));
    SpamCounts::new(raw, clean)
}

/// In-memory result of a run.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: MasterReport,
    pub rendered: RenderedReport,
    pub rejection_log: String,
}

/// Runs every selected stage without touching the filesystem beyond reading inputs.
pub fn analyze(cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let def = cfg.validate()?;
    let mut report = MasterReport::new(cfg.resolved_json()?);

    // ingest
    let (groups, rejection_log) = (|| -> Result<_> {
        let mut records = Vec::new();
        let mut rejected: Vec<Rejection> = Vec::new();
        for p in &cfg.responses {
            let parsed = parse_response_file(p, &def)?;
            records.extend(parsed.records);
            rejected.extend(parsed.rejected);
        }
        let n_parse_rejected = rejected.len();
        let outcome = apply_spam_filter(records, &cfg.spam)?;
        rejected.extend(outcome.rejected.iter().map(|(r, reason)| Rejection {
            respondent_id: r.respondent_id.clone(),
            reason: reason.clone(),
        }));
        let by_country = split_groups(&outcome.clean, &def)?;
        let groups = build_groups(&by_country, &cfg.groups)?;
        let per = &outcome.summary.per_group;
        let mut counts = BTreeMap::new();
        if cfg.groups.sets.contains(&GroupSet::Countries) {
            counts.extend(per.iter().map(|(k, v)| (k.clone(), v.clone())));
        }
        for g in &groups.income {
            let members: Vec<&str> = cfg
                .groups
                .income
                .iter()
                .find(|i| i.label == g.group)
                .map(|i| i.countries.iter().map(String::as_str).collect())
                .unwrap_or_default();
            counts.insert(g.group.clone(), counts_of(&members, per));
        }
        if groups.pooled.is_some() {
            let members: Vec<&str> = per
                .keys()
                .filter(|c| !cfg.groups.exclude_from_all.contains(c))
                .map(String::as_str)
                .collect();
            counts.insert(cfg.groups.pooled_label.clone(), counts_of(&members, per));
        }
        report.ingest = Some(IngestSection {
            n_parse_rejected,
            spam: outcome.summary.clone(),
            groups: counts,
            random_pass_probability: cfg.spam.random_pass_probability(&def),
        });
        Ok((groups, format_rejection_log(&rejected)))
    })()
    .map_err(|e| e.in_stage("ingest"))?;
    report.notes.extend(groups.notes.iter().cloned());
    report.pooled_group = groups.pooled.as_ref().map(|m| m.group.clone());

    if cfg.stages.descriptives {
        (|| -> Result<()> {
            for m in groups.all() {
                report.descriptives.push(GroupDescriptives {
                    group: m.group.clone(),
                    n: m.n(),
                    composites: composite_stats(m, &def)?.factors,
                    alpha: alpha_table(m, &def)?,
                });
            }
            if let Some(p) = &groups.pooled {
                report.correlations = Some(CorrelationSection {
                    group: p.group.clone(),
                    table: composite_correlations(p, &def)?,
                });
            }
            Ok(())
        })()
        .map_err(|e| e.in_stage("descriptives"))?;
    }

    if cfg.stages.efa {
        (|| -> Result<()> {
            let target = cfg.efa.group.as_deref().or(report.pooled_group.as_deref());
            let m = groups
                .all()
                .find(|m| Some(m.group.as_str()) == target)
                .or_else(|| groups.all().next())
                .ok_or_else(|| Error::InsufficientData("no group available for EFA".into()))?;
            let out = reduce_item_pool(m, &def, &cfg.efa.policy)?;
            let sol = &out.final_solution;
            let cols = &out.factor_columns;
            let pattern = (0..sol.items.len())
                .map(|i| cols.iter().map(|&c| sol.loadings[(i, c)]).collect())
                .collect();
            let phi: &DMatrix<f64> = &sol.factor_correlations;
            report.efa = Some(EfaSection {
                group: m.group.clone(),
                kept: out.kept.clone(),
                removals: out.removals.clone(),
                factors: def.factor_names(),
                pattern,
                factor_correlations: cols.iter().map(|&a| cols.iter().map(|&b| phi[(a, b)]).collect()).collect(),
            });
            if !out.removals.is_empty() {
                report.notes.push(format!(
                    "EFA removed {} item(s); CFA and invariance use the configured scale unchanged",
                    out.removals.len()
                ));
            }
            Ok(())
        })()
        .map_err(|e| e.in_stage("efa"))?;
    }

    let fit_opts = FitOptions {
        multiplier: cfg.model.chisq_multiplier,
        use_scaled: cfg.model.use_scaled,
        ..FitOptions::default()
    };
    let hypothesized = compile_model(&def, &ModelOptions::with_means())?;

    if cfg.stages.cfa {
        (|| -> Result<()> {
            let mut models = vec![("hypothesized", hypothesized.clone())];
            if cfg.model.restricted_correlations {
                models.push(("restricted", compile_model(&def, &ModelOptions::restricted_mcms(true))?));
            }
            for m in groups.all() {
                let moments = compute_sample_moments(m)?;
                for (name, spec) in &models {
                    let fit = fit_model(spec, &moments, &fit_opts)
                        .map_err(|e| Error::Precondition(format!("group {}, {name} model: {e}", m.group)))?;
                    report.cfa.push(cfa_group_report(&m.group, name, &fit));
                }
            }
            Ok(())
        })()
        .map_err(|e| e.in_stage("cfa"))?;
    }

    if cfg.stages.invariance {
        let inv_opts = InvarianceOptions {
            fit: fit_opts.clone(),
            decision_mode: cfg.model.decision_mode,
            reference_group: None,
            max_freed: cfg.model.max_freed,
        };
        let sets = [
            ("income", GroupSet::Income, &groups.income),
            ("countries", GroupSet::Countries, &groups.countries),
        ];
        for (name, set, members) in sets {
            if !cfg.groups.sets.contains(&set) {
                continue;
            }
            if members.len() < 2 {
                report
                    .notes
                    .push(format!("invariance for {name} skipped: fewer than two groups"));
                continue;
            }
            let result = (|| -> Result<_> {
                let gm = members
                    .iter()
                    .map(|m| {
                        Ok(GroupMoments {
                            label: m.group.clone(),
                            moments: compute_sample_moments(m)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let labels: BTreeSet<&str> = gm.iter().map(|g| g.label.as_str()).collect();
                let opts = InvarianceOptions {
                    reference_group: cfg
                        .groups
                        .reference_group
                        .clone()
                        .filter(|r| labels.contains(r.as_str())),
                    ..inv_opts.clone()
                };
                run_invariance(&hypothesized, &gm, &opts)
            })()
            .map_err(|e| e.in_stage(&format!("invariance ({name})")))?;
            report.invariance.push(InvarianceSection {
                set: name.into(),
                result: result.report,
            });
        }
    }

    let rendered = render_report(&report).map_err(|e| e.in_stage("report"))?;
    Ok(PipelineOutput {
        report,
        rendered,
        rejection_log,
    })
}

/// Names of every file a full run writes into the output directory.
pub fn artifact_names() -> Vec<String> {
    let mut v = vec!["report.json".to_string(), "report.md".into(), "rejected.log".into()];
    v.extend(ARTIFACTS.iter().map(|a| format!("{a}.txt")));
    v
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes the master report, the markdown rendering and one text file per table group.
pub fn write_artifacts(out: &PipelineOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files = vec![
        ("report.json".to_string(), out.report.to_json()?),
        ("report.md".to_string(), out.rendered.markdown()),
        ("rejected.log".to_string(), out.rejection_log.clone()),
    ];
    for name in ARTIFACTS {
        if let Some(text) = out.rendered.text(name) {
            files.push((format!("{name}.txt"), text));
        }
    }
    let mut written = Vec::new();
    for (name, text) in files {
        let path = dir.join(name);
        write_file(&path, &text)?;
        written.push(path);
    }
    Ok(written)
}

/// Re-renders text and markdown tables from an existing master report.
pub fn render_from_file(report_path: &Path, dir: &Path) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(report_path).map_err(|source| Error::Io {
        path: report_path.to_path_buf(),
        source,
    })?;
    let report = MasterReport::from_json(&text)?;
    let rendered = render_report(&report)?;
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    let md = dir.join("report.md");
    write_file(&md, &rendered.markdown())?;
    written.push(md);
    for name in ARTIFACTS {
        if let Some(t) = rendered.text(name) {
            let path = dir.join(format!("{name}.txt"));
            write_file(&path, &t)?;
            written.push(path);
        }
    }
    Ok(written)
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<(PipelineOutput, Vec<PathBuf>)> {
    let out = analyze(cfg)?;
    let files = write_artifacts(&out, &cfg.output_dir).map_err(|e| e.in_stage("write"))?;
    Ok((out, files))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = PipelineConfig::new(vec!["a.csv".into()]);
        let back = PipelineConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn minimal_config_parses() {
        let cfg = PipelineConfig::from_toml("responses = [\"x.csv\"]\n[model]\ndecision_mode = \"conjunctive\"\n").unwrap();
        assert_eq!(cfg.model.decision_mode, DecisionMode::Conjunctive);
        assert_eq!(cfg.groups.income.len(), 3);
        assert!(PipelineConfig::from_toml("responses = []\nbogus = 1\n").is_err());
    }

    #[test]
    fn missing_response_file_is_a_config_error() {
        let cfg = PipelineConfig::new(vec!["/nonexistent/responses.csv".into()]);
        let err = analyze(&cfg).unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn resolved_config_omits_output_dir() {
        let cfg = PipelineConfig::new(vec!["a.csv".into()]);
        let v = cfg.resolved_json().unwrap();
        assert!(v.get("output_dir").is_none());
        assert!(v.get("responses").is_some());
    }
}
