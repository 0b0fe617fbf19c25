//! Machine-readable master report and the rendered tables derived from it.
//!
//! Rendered tables are pure functions of [`MasterReport`]; every number they
//! show is stored in the report at full precision.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::descriptives::{AlphaEstimate, CorrelationTable, FactorStats};
use crate::efa::Removal;
use crate::error::{Error, Result};
use crate::ingest::IngestSummary;
use crate::invariance::InvarianceReport;
use crate::sem::{FitIndices, FitResult, Slot};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MasterReport {
    pub schema_version: u32,
    pub tool: String,
    pub tool_version: String,
    /// Resolved configuration the run used.
    pub config: serde_json::Value,
    /// Group whose estimates fill the parameter and factor-correlation tables.
    pub pooled_group: Option<String>,
    pub ingest: Option<IngestSection>,
    pub descriptives: Vec<GroupDescriptives>,
    pub correlations: Option<CorrelationSection>,
    pub efa: Option<EfaSection>,
    pub cfa: Vec<CfaGroupReport>,
    pub invariance: Vec<InvarianceSection>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestSection {
    /// Rows dropped while parsing (missing, unparseable or out-of-range answers).
    pub n_parse_rejected: usize,
    pub spam: IngestSummary,
    /// Per analysis group (countries, income groups, pooled), raw and clean counts.
    pub groups: BTreeMap<String, crate::ingest::SpamCounts>,
    pub random_pass_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupDescriptives {
    pub group: String,
    pub n: usize,
    pub composites: Vec<FactorStats>,
    pub alpha: Vec<AlphaEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelationSection {
    pub group: String,
    pub table: CorrelationTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EfaSection {
    pub group: String,
    pub kept: Vec<String>,
    pub removals: Vec<Removal>,
    pub factors: Vec<String>,
    /// Pattern loadings of the kept items, columns in `factors` order.
    pub pattern: Vec<Vec<f64>>,
    pub factor_correlations: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemEstimate {
    pub item: String,
    pub factor: String,
    pub loading: f64,
    pub loading_se: Option<f64>,
    pub intercept: Option<f64>,
    pub intercept_se: Option<f64>,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterEstimate {
    pub label: String,
    pub estimate: f64,
    pub se: Option<f64>,
    pub robust_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CfaGroupReport {
    pub group: String,
    pub model: String,
    pub n: usize,
    pub converged: bool,
    pub identified: bool,
    pub iterations: usize,
    pub indices: FitIndices,
    pub items: Vec<ItemEstimate>,
    pub factors: Vec<String>,
    pub factor_correlations: Vec<Vec<f64>>,
    pub parameters: Vec<ParameterEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvarianceSection {
    pub set: String,
    pub result: InvarianceReport,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Single-group CFA summary for the report.
pub fn cfa_group_report(group: &str, model: &str, fit: &FitResult) -> CfaGroupReport {
    let spec = fit.spec(0);
    let m = fit.matrices(0);
    let se_of = |slot: Slot| {
        fit.layout
            .index_of(0, slot)
            .and_then(|k| finite(*fit.se_robust.as_ref().unwrap_or(&fit.se_normal).get(k)?))
    };
    let items = spec
        .items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let j = (0..spec.q())
                .find(|&j| spec.loadings[i][j] != crate::sem::Param::Fixed(0.0))
                .unwrap_or(0);
            ItemEstimate {
                item: item.clone(),
                factor: spec.factors.get(j).cloned().unwrap_or_default(),
                loading: m.lambda[(i, j)],
                loading_se: se_of(Slot::Loading(i, j)),
                intercept: spec.mean_structure.then(|| m.tau[i]),
                intercept_se: se_of(Slot::Intercept(i)),
                residual: m.theta[i],
            }
        })
        .collect();
    let corr = fit.factor_correlations(0);
    let q = corr.nrows();
    let parameters = fit
        .theta_hat
        .labels
        .iter()
        .enumerate()
        .map(|(k, label)| ParameterEstimate {
            label: label.clone(),
            estimate: fit.theta_hat.values[k],
            se: fit.se_normal.get(k).copied().and_then(finite),
            robust_se: fit.se_robust.as_ref().and_then(|r| finite(r[k])),
        })
        .collect();
    CfaGroupReport {
        group: group.to_string(),
        model: model.to_string(),
        n: fit.groups[0].n,
        converged: fit.converged,
        identified: fit.identified,
        iterations: fit.n_iterations,
        indices: fit.indices.clone(),
        items,
        factors: spec.factors.clone(),
        factor_correlations: (0..q).map(|a| (0..q).map(|b| corr[(a, b)]).collect()).collect(),
        parameters,
    }
}

impl MasterReport {
    pub fn new(config: serde_json::Value) -> Self {
        MasterReport {
            schema_version: SCHEMA_VERSION,
            tool: "mcms".into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config,
            pooled_group: None,
            ingest: None,
            descriptives: vec![],
            correlations: None,
            efa: None,
            cfa: vec![],
            invariance: vec![],
            notes: vec![],
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Schema(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    /// Parses and validates a master document.
    pub fn from_json(text: &str) -> Result<Self> {
        let r: MasterReport = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "schema version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        for c in &self.cfa {
            let q = c.factors.len();
            if c.factor_correlations.len() != q || c.factor_correlations.iter().any(|r| r.len() != q) {
                return Err(Error::Schema(format!(
                    "cfa {}/{}: factor correlation matrix is not {q} x {q}",
                    c.group, c.model
                )));
            }
        }
        for d in &self.descriptives {
            if d.composites.len() != d.alpha.len() && !d.alpha.is_empty() {
                return Err(Error::Schema(format!(
                    "descriptives {}: composite and alpha rows disagree",
                    d.group
                )));
            }
        }
        for s in &self.invariance {
            if s.result.levels.is_empty() {
                return Err(Error::Schema(format!("invariance set {} has no levels", s.set)));
            }
        }
        Ok(())
    }
}

/// A rendered table with a title and optional footnotes.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub title: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub notes: Vec<String>,
}

impl Table {
    fn new(title: impl Into<String>, headers: &[&str]) -> Self {
        Table {
            title: title.into(),
            headers: headers.iter().map(|s| s.to_string()).collect(),
            rows: vec![],
            notes: vec![],
        }
    }

    fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.headers.iter().map(|h| h.chars().count()).collect();
        for r in &self.rows {
            for (k, c) in r.iter().enumerate() {
                w[k] = w[k].max(c.chars().count());
            }
        }
        w
    }

    pub fn to_text(&self) -> String {
        let w = self.widths();
        let line = |cells: &[String]| {
            cells
                .iter()
                .enumerate()
                .map(|(k, c)| {
                    if k == 0 {
                        format!("{c:<width$}", width = w[k])
                    } else {
                        format!("{c:>width$}", width = w[k])
                    }
                })
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = format!("{}\n", self.title);
        let header = line(&self.headers);
        let _ = writeln!(out, "{header}");
        let _ = writeln!(out, "{}", "-".repeat(header.chars().count()));
        for r in &self.rows {
            let _ = writeln!(out, "{}", line(r));
        }
        for n in &self.notes {
            let _ = writeln!(out, "{n}");
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("### {}\n\n", self.title);
        let _ = writeln!(out, "| {} |", self.headers.join(" | "));
        let sep: Vec<&str> = (0..self.headers.len())
            .map(|k| if k == 0 { ":--" } else { "--:" })
            .collect();
        let _ = writeln!(out, "| {} |", sep.join(" | "));
        for r in &self.rows {
            let _ = writeln!(out, "| {} |", r.join(" | "));
        }
        if !self.notes.is_empty() {
            out.push('\n');
            for n in &self.notes {
                let _ = writeln!(out, "{n}");
            }
        }
        out.push('\n');
        out
    }
}

/// Three-decimal rendering used for fit indices and deltas.
pub fn fmt3(v: f64) -> String {
    format!("{v:.3}")
}

/// Two-decimal rendering used for means, SDs and alpha.
pub fn fmt2(v: f64) -> String {
    format!("{v:.2}")
}

pub fn fmt_ci(ci: (f64, f64)) -> String {
    format!("{} \\; {}", fmt3(ci.0), fmt3(ci.1))
}

fn stars(p: Option<f64>) -> &'static str {
    match p {
        Some(p) if p < 0.001 => "***",
        Some(p) if p < 0.01 => "**",
        Some(p) if p < 0.05 => "*",
        _ => "",
    }
}

/// Rendered artifacts keyed by file stem.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedReport {
    pub sections: Vec<(String, Vec<Table>)>,
}

impl RenderedReport {
    pub fn text(&self, name: &str) -> Option<String> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, tables)| {
            tables
                .iter()
                .map(Table::to_text)
                .collect::<Vec<_>>()
                .join("\n")
        })
    }

    pub fn markdown(&self) -> String {
        let mut out = String::from("# MCMS validation report\n\n");
        for (name, tables) in &self.sections {
            let _ = writeln!(out, "## {}\n", name.replace('_', " "));
            for t in tables {
                out.push_str(&t.to_markdown());
            }
        }
        out
    }
}

fn ingest_tables(r: &MasterReport) -> Vec<Table> {
    let mut t = Table::new("Sample sizes and spam", &["Group", "N raw", "N clean", "Spam %"]);
    if let Some(ing) = &r.ingest {
        for (g, c) in &ing.groups {
            t.rows.push(vec![
                g.clone(),
                c.n_raw.to_string(),
                c.n_clean.to_string(),
                format!("{:.0} %", 100.0 * c.spam_rate),
            ]);
        }
        t.notes.push(format!("Rows rejected while parsing: {}", ing.n_parse_rejected));
        t.notes.push(format!(
            "Probability that a uniform-random respondent passes: {:.6}",
            ing.random_pass_probability
        ));
    } else {
        t.notes.push("No ingest stage was run.".into());
    }
    vec![t]
}

fn descriptive_tables(r: &MasterReport) -> Vec<Table> {
    let factors: Vec<String> = r
        .descriptives
        .first()
        .map(|d| d.composites.iter().map(|c| c.factor.clone()).collect())
        .unwrap_or_default();
    let mut headers = vec!["Group"];
    headers.extend(factors.iter().map(String::as_str));

    let mut means = Table::new("Composite means (SD)", &headers);
    let mut alpha = Table::new("Cronbach's alpha [95% CI]", &headers);
    for d in &r.descriptives {
        let mut row = vec![d.group.clone()];
        row.extend(d.composites.iter().map(|c| format!("{} ({})", fmt2(c.mean), fmt2(c.sd))));
        means.rows.push(row);
        if !d.alpha.is_empty() {
            let mut row = vec![d.group.clone()];
            row.extend(d.alpha.iter().map(|a| {
                format!("{} [{}, {}]", fmt2(a.alpha), fmt2(a.ci_low), fmt2(a.ci_high))
            }));
            alpha.rows.push(row);
        }
    }
    let mut tables = vec![means];
    if let Some(c) = &r.correlations {
        let t = &c.table;
        let q = t.factors.len();
        let mut headers = vec![String::new()];
        headers.extend(t.factors.iter().take(q.saturating_sub(1)).cloned());
        let mut corr = Table {
            title: format!("Composite correlations ({}, n = {})", c.group, t.n),
            headers,
            rows: vec![],
            notes: vec!["* p < 0.05, ** p < 0.01, *** p < 0.001".into()],
        };
        for a in 1..q {
            let mut row = vec![t.factors[a].clone()];
            for b in 0..q - 1 {
                row.push(if b < a {
                    match t.r[a][b] {
                        Some(v) => format!("{}{}", fmt2(v), stars(t.p_values[a][b])),
                        None => "n/a".into(),
                    }
                } else {
                    String::new()
                });
            }
            corr.rows.push(row);
        }
        tables.push(corr);
    }
    tables.push(alpha);
    tables
}

fn cfa_fit_tables(r: &MasterReport) -> Vec<Table> {
    let mut t = Table::new(
        "Goodness of fit",
        &["Group", "Model", "N", "Chi2", "df", "Chi2 (S-B)", "CFI", "TLI", "RMSEA", "RMSEA 90% CI", "SRMR"],
    );
    for c in &r.cfa {
        let ix = &c.indices;
        t.rows.push(vec![
            c.group.clone(),
            c.model.clone(),
            c.n.to_string(),
            format!("{:.2}", ix.chisq),
            ix.df.to_string(),
            format!("{:.2}", ix.chisq_sb),
            fmt3(ix.cfi),
            fmt3(ix.tli),
            fmt3(ix.rmsea),
            fmt_ci(ix.rmsea_ci90),
            fmt3(ix.srmr),
        ]);
    }
    if r.cfa.iter().any(|c| c.indices.scaled) {
        t.notes.push("CFI, TLI and RMSEA use the Satorra-Bentler scaled statistic.".into());
    }
    vec![t]
}

/// Model rows shown in the parameter and correlation tables: the pooled
/// group when present, otherwise the first hypothesized fit.
fn primary_cfa<'a>(r: &'a MasterReport, pooled: Option<&str>) -> Option<&'a CfaGroupReport> {
    let hyp = |c: &&CfaGroupReport| c.model == "hypothesized";
    pooled
        .and_then(|p| r.cfa.iter().filter(hyp).find(|c| c.group == p))
        .or_else(|| r.cfa.iter().find(hyp))
}

fn parameter_tables(r: &MasterReport, pooled: Option<&str>) -> Vec<Table> {
    let Some(c) = primary_cfa(r, pooled) else {
        return vec![];
    };
    let per_factor: Vec<Vec<&ItemEstimate>> = c
        .factors
        .iter()
        .map(|f| c.items.iter().filter(|i| &i.factor == f).collect())
        .collect();
    let mut headers = vec!["".to_string()];
    for f in &c.factors {
        headers.push(format!("{f} lambda"));
        headers.push(format!("{f} tau"));
    }
    let depth = per_factor.iter().map(Vec::len).max().unwrap_or(0);
    let mut t = Table {
        title: format!("Loadings and intercepts ({})", c.group),
        headers,
        rows: vec![],
        notes: vec!["Each factor's first item is its marker (loading fixed at 1).".into()],
    };
    for k in 0..depth {
        let mut row = vec![format!("item {}", k + 1)];
        for items in &per_factor {
            match items.get(k) {
                Some(it) => {
                    row.push(fmt3(it.loading));
                    row.push(it.intercept.map(fmt3).unwrap_or_default());
                }
                None => row.extend([String::new(), String::new()]),
            }
        }
        t.rows.push(row);
    }
    vec![t]
}

fn factor_correlation_tables(r: &MasterReport, pooled: Option<&str>) -> Vec<Table> {
    let Some(c) = primary_cfa(r, pooled) else {
        return vec![];
    };
    let q = c.factors.len();
    let mut headers = vec![String::new()];
    headers.extend(c.factors.iter().take(q.saturating_sub(1)).cloned());
    let mut t = Table {
        title: format!("Estimated factor correlations ({})", c.group),
        headers,
        rows: vec![],
        notes: vec![],
    };
    for a in 1..q {
        let mut row = vec![c.factors[a].clone()];
        for b in 0..q - 1 {
            row.push(if b < a {
                fmt3(c.factor_correlations[a][b])
            } else {
                String::new()
            });
        }
        t.rows.push(row);
    }
    vec![t]
}

fn invariance_tables(r: &MasterReport) -> Vec<Table> {
    if r.invariance.is_empty() {
        let mut t = Table::new("Measurement invariance", &["Level", "CFI", "CFI delta", "RMSEA", "RMSEA delta"]);
        t.notes.push("Invariance section omitted: fewer than two groups were configured.".into());
        return vec![t];
    }
    r.invariance
        .iter()
        .map(|s| {
            let mut t = Table::new(
                format!("Measurement invariance: {}", s.set),
                &["Level", "CFI", "CFI delta", "RMSEA", "RMSEA delta", "Decision"],
            );
            for l in &s.result.levels {
                let (cd, rd, dec) = match &l.decision {
                    Some(d) => (
                        fmt3(d.cfi_drop),
                        fmt3(d.rmsea_rise),
                        if d.invariant { "invariant" } else { "non-invariant" }.to_string(),
                    ),
                    None => ("n/a".into(), "n/a".into(), String::new()),
                };
                let mut level = l.level.as_str().to_string();
                if !l.freed_intercepts.is_empty() {
                    let _ = write!(level, " ({} free: {})", l.freed_intercepts.len(), l.freed_intercepts.join(", "));
                }
                t.rows.push(vec![level, fmt3(l.cfi), cd, fmt3(l.rmsea), rd, dec]);
            }
            t.notes.push(format!(
                "Groups: {}; reference group {}; decision mode {}. Deltas are relative to the previous level (metric for scalar models).",
                s.result.groups.join(", "),
                s.result.reference_group,
                s.result.decision_mode.as_str()
            ));
            if let Some(lm) = &s.result.latent_means {
                for g in lm {
                    let vals: Vec<String> = g
                        .means
                        .iter()
                        .map(|m| {
                            if g.reference {
                                format!("{} 0 (fixed)", m.factor)
                            } else {
                                format!("{} {} ({})", m.factor, fmt3(m.estimate), fmt3(m.se))
                            }
                        })
                        .collect();
                    t.notes.push(format!("Latent means {}: {}", g.group, vals.join("; ")));
                }
            }
            t
        })
        .collect()
}

fn efa_tables(r: &MasterReport) -> Vec<Table> {
    let Some(e) = &r.efa else {
        let mut t = Table::new("Item reduction", &["Iteration", "Item", "Reason"]);
        t.notes.push("EFA stage was not run.".into());
        return vec![t];
    };
    let mut log = Table::new(
        format!("Item reduction ({})", e.group),
        &["Iteration", "Item", "Factor", "Reason", "Primary", "Max cross"],
    );
    for rm in &e.removals {
        log.rows.push(vec![
            rm.iteration.to_string(),
            rm.item.clone(),
            rm.factor.clone(),
            rm.reason.to_string(),
            fmt3(rm.primary_loading),
            fmt3(rm.max_crossloading),
        ]);
    }
    if e.removals.is_empty() {
        log.notes.push("No items were removed.".into());
    }
    let mut headers = vec!["Item"];
    headers.extend(e.factors.iter().map(String::as_str));
    let mut pattern = Table::new("Promax pattern loadings", &headers);
    for (item, row) in e.kept.iter().zip(&e.pattern) {
        let mut cells = vec![item.clone()];
        cells.extend(row.iter().map(|v| fmt3(*v)));
        pattern.rows.push(cells);
    }
    vec![log, pattern]
}

/// Artifact stems in rendering order.
pub const ARTIFACTS: [&str; 7] = [
    "ingest_summary",
    "descriptives",
    "cfa_fit",
    "cfa_parameters",
    "factor_correlations",
    "invariance",
    "efa",
];

/// Renders every table from a validated report.
pub fn render_report(r: &MasterReport) -> Result<RenderedReport> {
    r.validate()?;
    let pooled = r.pooled_group.as_deref();
    let sections = vec![
        ("ingest_summary".to_string(), ingest_tables(r)),
        ("descriptives".to_string(), descriptive_tables(r)),
        ("cfa_fit".to_string(), cfa_fit_tables(r)),
        ("cfa_parameters".to_string(), parameter_tables(r, pooled)),
        ("factor_correlations".to_string(), factor_correlation_tables(r, pooled)),
        ("invariance".to_string(), invariance_tables(r)),
        ("efa".to_string(), efa_tables(r)),
    ];
    Ok(RenderedReport { sections })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_rules() {
        assert_eq!(fmt3(0.96489), "0.965");
        assert_eq!(fmt_ci((0.0441, 0.0479)), "0.044 \\; 0.048");
        assert_eq!(fmt2(0.8449), "0.84");
    }

    #[test]
    fn empty_invariance_is_noted() {
        let r = MasterReport::new(serde_json::json!({}));
        let out = render_report(&r).unwrap();
        assert!(out.text("invariance").unwrap().contains("omitted"));
    }

    #[test]
    fn json_round_trip_and_schema_checks() {
        let r = MasterReport::new(serde_json::json!({"a": 1}));
        let text = r.to_json().unwrap();
        assert_eq!(MasterReport::from_json(&text).unwrap(), r);
        let bumped = text.replace("\"schema_version\": 1", "\"schema_version\": 99");
        assert!(matches!(MasterReport::from_json(&bumped), Err(Error::Schema(_))));
        let extra = text.replacen('{', "{\"surprise\": true,", 1);
        assert!(matches!(MasterReport::from_json(&extra), Err(Error::Schema(_))));
    }

    #[test]
    fn table_layouts() {
        let mut t = Table::new("T", &["A", "B"]);
        t.rows.push(vec!["x".into(), "1.000".into()]);
        assert_eq!(t.to_text(), "T\nA      B\n--------\nx  1.000\n");
        assert!(t.to_markdown().contains("| x | 1.000 |"));
    }
}
