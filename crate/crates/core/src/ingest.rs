//! Response-file ingestion, spam filtering, group splitting and sample moments.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{normal_theory_gamma, vech_len, vech_pairs};
use crate::scale::{AttentionAnswer, ResponseMatrix, ResponseRecord, ScaleDefinition};

pub const ID_COLUMN: &str = "respondent_id";
pub const GROUP_COLUMN: &str = "group";
pub const ATTENTION_COLUMN: &str = "attention";

/// A row that was dropped, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub respondent_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedResponses {
    pub records: Vec<ResponseRecord>,
    pub rejected: Vec<Rejection>,
    /// Test-item columns found in the header, in file order.
    pub test_items: Vec<String>,
}

/// Parses a comma-delimited response file with a mandatory header.
///
/// Rows with an unparseable or out-of-range cell, or any missing item answer,
/// are excluded and reported in `rejected` rather than failing the whole file.
pub fn parse_responses<R: Read>(reader: R, def: &ScaleDefinition) -> Result<ParsedResponses> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse {
            what: "response header".into(),
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();

    let col = |name: &str| header.iter().position(|h| h == name);
    let mut missing = Vec::new();
    let id_col = col(ID_COLUMN);
    let group_col = col(GROUP_COLUMN);
    let attention_col = col(ATTENTION_COLUMN);
    for (name, c) in [
        (ID_COLUMN, id_col),
        (GROUP_COLUMN, group_col),
        (ATTENTION_COLUMN, attention_col),
    ] {
        if c.is_none() {
            missing.push(name.to_string());
        }
    }
    let items = def.items();
    let mut item_cols = Vec::with_capacity(items.len());
    for item in &items {
        match col(item) {
            Some(c) => item_cols.push(c),
            None => missing.push(item.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::HeaderMismatch(format!(
            "missing column(s): {}",
            missing.join(", ")
        )));
    }
    let (id_col, group_col, attention_col) =
        (id_col.unwrap(), group_col.unwrap(), attention_col.unwrap());
    let item_set: BTreeSet<&str> = items.iter().map(String::as_str).collect();
    let test_cols: Vec<(usize, String)> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| {
            !item_set.contains(h.as_str())
                && *h != ID_COLUMN
                && *h != GROUP_COLUMN
                && *h != ATTENTION_COLUMN
        })
        .map(|(i, h)| (i, h.clone()))
        .collect();

    let mut out = ParsedResponses {
        test_items: test_cols.iter().map(|(_, h)| h.clone()).collect(),
        ..Default::default()
    };
    for (row_no, row) in rdr.records().enumerate() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                out.rejected.push(Rejection {
                    respondent_id: format!("row {}", row_no + 1),
                    reason: format!("unreadable row: {e}"),
                });
                continue;
            }
        };
        let cell = |c: usize| row.get(c).unwrap_or("");
        let respondent_id = cell(id_col).to_string();
        let rid = if respondent_id.is_empty() {
            format!("row {}", row_no + 1)
        } else {
            respondent_id.clone()
        };
        let reject = |reason: String| Rejection {
            respondent_id: rid.clone(),
            reason,
        };

        let mut item_answers = BTreeMap::new();
        let mut problem = None;
        for (item, &c) in items.iter().zip(&item_cols) {
            match parse_answer(cell(c), def) {
                Answer::Value(v) => {
                    item_answers.insert(item.clone(), v);
                }
                Answer::Missing => {
                    problem = Some(format!("missing answer for {item}"));
                    break;
                }
                Answer::OutOfRange(v) => {
                    problem = Some(format!("out of range: {item}={v}"));
                    break;
                }
                Answer::Unparseable(s) => {
                    problem = Some(format!("unparseable: {item}={s:?}"));
                    break;
                }
            }
        }
        let mut test_item_answers = BTreeMap::new();
        if problem.is_none() {
            for (c, code) in &test_cols {
                match parse_answer(cell(*c), def) {
                    Answer::Value(v) => {
                        test_item_answers.insert(code.clone(), v);
                    }
                    Answer::Missing => {}
                    Answer::OutOfRange(v) => {
                        problem = Some(format!("out of range: {code}={v}"));
                        break;
                    }
                    Answer::Unparseable(s) => {
                        problem = Some(format!("unparseable: {code}={s:?}"));
                        break;
                    }
                }
            }
        }
        let attention_answer = match cell(attention_col).parse::<AttentionAnswer>() {
            Ok(a) => a,
            Err(_) => {
                problem.get_or_insert_with(|| {
                    format!("unparseable: attention={:?}", cell(attention_col))
                });
                AttentionAnswer::Missing
            }
        };
        if let Some(reason) = problem {
            log::debug!("excluding {rid}: {reason}");
            out.rejected.push(reject(reason));
            continue;
        }
        out.records.push(ResponseRecord {
            respondent_id,
            group: cell(group_col).to_string(),
            item_answers,
            test_item_answers,
            attention_answer,
        });
    }
    Ok(out)
}

pub fn parse_response_file(path: &Path, def: &ScaleDefinition) -> Result<ParsedResponses> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_responses(std::io::BufReader::new(f), def)
}

enum Answer {
    Value(i64),
    Missing,
    OutOfRange(i64),
    Unparseable(String),
}

fn parse_answer(s: &str, def: &ScaleDefinition) -> Answer {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") {
        return Answer::Missing;
    }
    match s.parse::<i64>() {
        Ok(v) if def.in_range(v) => Answer::Value(v),
        Ok(v) => Answer::OutOfRange(v),
        Err(_) => Answer::Unparseable(s.to_string()),
    }
}

/// Writes records in the response file format. Missing answers become empty cells.
pub fn write_responses<W: Write>(
    writer: W,
    def: &ScaleDefinition,
    test_items: &[String],
    records: &[ResponseRecord],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let items = def.items();
    let mut header = vec![ID_COLUMN.to_string(), GROUP_COLUMN.to_string()];
    header.extend(items.iter().cloned());
    header.extend(test_items.iter().cloned());
    header.push(ATTENTION_COLUMN.to_string());
    let csv_err = |e: csv::Error| Error::Parse {
        what: "response output".into(),
        message: e.to_string(),
    };
    w.write_record(&header).map_err(csv_err)?;
    let fmt = |v: Option<&i64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in records {
        let mut row = vec![r.respondent_id.clone(), r.group.clone()];
        row.extend(items.iter().map(|i| fmt(r.item_answers.get(i))));
        row.extend(test_items.iter().map(|t| fmt(r.test_item_answers.get(t))));
        row.push(r.attention_answer.as_str().to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<response output>", e))?;
    Ok(())
}

/// One line per rejection: `respondent_id<TAB>reason`.
pub fn format_rejection_log(rejected: &[Rejection]) -> String {
    rejected
        .iter()
        .map(|r| format!("{}\t{}\n", r.respondent_id, r.reason))
        .collect()
}

/// Quality-control rules: every test item must carry its expected answer and
/// the attention question must be answered with `attention_required`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpamRules {
    pub expected_test_answers: BTreeMap<String, i64>,
    #[serde(default = "default_attention")]
    pub attention_required: AttentionAnswer,
    #[serde(default = "default_attention_options")]
    pub n_attention_options: usize,
}

fn default_attention() -> AttentionAnswer {
    AttentionAnswer::Yes
}

fn default_attention_options() -> usize {
    3
}

impl SpamRules {
    pub fn new(expected: &[(&str, i64)]) -> Self {
        SpamRules {
            expected_test_answers: expected.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            attention_required: AttentionAnswer::Yes,
            n_attention_options: 3,
        }
    }

    /// Three test items with fixed expected answers, as used by the simulator.
    pub fn default_three() -> Self {
        SpamRules::new(&[("Test1", 2), ("Test2", 6), ("Test3", 4)])
    }

    pub fn n_test_items(&self) -> usize {
        self.expected_test_answers.len()
    }

    pub fn test_items(&self) -> Vec<String> {
        self.expected_test_answers.keys().cloned().collect()
    }

    pub fn validate(&self, def: &ScaleDefinition) -> Result<()> {
        if self.expected_test_answers.is_empty() {
            return Err(Error::Config("spam rules need at least one test item".into()));
        }
        if self.n_attention_options == 0 {
            return Err(Error::Config("attention question needs at least one option".into()));
        }
        for (k, v) in &self.expected_test_answers {
            if !def.in_range(*v) {
                return Err(Error::Config(format!(
                    "expected answer {v} for {k} lies outside the response range"
                )));
            }
        }
        Ok(())
    }

    /// Probability that a respondent answering uniformly at random passes:
    /// (1/levels)^n_test_items · 1/n_attention_options.
    pub fn random_pass_probability(&self, def: &ScaleDefinition) -> f64 {
        let levels = (def.response_max - def.response_min + 1) as f64;
        levels.powi(-(self.n_test_items() as i32)) / self.n_attention_options as f64
    }

    /// First failing check, or `None` for a clean record.
    pub fn check(&self, record: &ResponseRecord) -> Option<String> {
        for (item, expected) in &self.expected_test_answers {
            match record.test_item_answers.get(item) {
                None => return Some(format!("missing test answer {item}")),
                Some(v) if v != expected => {
                    return Some(format!("test item {item} answered {v}, expected {expected}"))
                }
                _ => {}
            }
        }
        if record.attention_answer != self.attention_required {
            return Some(format!(
                "attention answer {:?}, expected {:?}",
                record.attention_answer, self.attention_required
            ));
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpamCounts {
    pub n_raw: usize,
    pub n_clean: usize,
    pub spam_rate: f64,
}

impl SpamCounts {
    pub fn new(n_raw: usize, n_clean: usize) -> Self {
        let spam_rate = if n_raw == 0 {
            0.0
        } else {
            1.0 - n_clean as f64 / n_raw as f64
        };
        SpamCounts {
            n_raw,
            n_clean,
            spam_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub total: SpamCounts,
    pub per_group: BTreeMap<String, SpamCounts>,
}

#[derive(Debug, Clone)]
pub struct SpamOutcome {
    pub clean: Vec<ResponseRecord>,
    pub rejected: Vec<(ResponseRecord, String)>,
    pub summary: IngestSummary,
}

pub fn apply_spam_filter(records: Vec<ResponseRecord>, rules: &SpamRules) -> Result<SpamOutcome> {
    if !records.is_empty() {
        for item in rules.expected_test_answers.keys() {
            if !records.iter().any(|r| r.test_item_answers.contains_key(item)) {
                return Err(Error::Precondition(format!(
                    "spam rules reference test item {item}, which no record carries"
                )));
            }
        }
    }
    let mut raw: BTreeMap<String, usize> = BTreeMap::new();
    let mut kept: BTreeMap<String, usize> = BTreeMap::new();
    let mut clean = Vec::new();
    let mut rejected = Vec::new();
    for r in records {
        *raw.entry(r.group.clone()).or_default() += 1;
        match rules.check(&r) {
            None => {
                *kept.entry(r.group.clone()).or_default() += 1;
                clean.push(r);
            }
            Some(reason) => rejected.push((r, reason)),
        }
    }
    let per_group = raw
        .iter()
        .map(|(g, &n)| (g.clone(), SpamCounts::new(n, kept.get(g).copied().unwrap_or(0))))
        .collect();
    let summary = IngestSummary {
        total: SpamCounts::new(clean.len() + rejected.len(), clean.len()),
        per_group,
    };
    Ok(SpamOutcome {
        clean,
        rejected,
        summary,
    })
}

/// Partitions complete records by group label; columns follow the scale order.
pub fn split_groups(
    records: &[ResponseRecord],
    def: &ScaleDefinition,
) -> Result<BTreeMap<String, ResponseMatrix>> {
    let items = def.items();
    let mut by_group: BTreeMap<&str, Vec<&ResponseRecord>> = BTreeMap::new();
    for r in records {
        by_group.entry(r.group.as_str()).or_default().push(r);
    }
    let mut out = BTreeMap::new();
    for (group, recs) in by_group {
        let mut rows = DMatrix::zeros(recs.len(), items.len());
        for (i, r) in recs.iter().enumerate() {
            for (j, item) in items.iter().enumerate() {
                let v = r.item_answers.get(item).ok_or_else(|| {
                    Error::Precondition(format!(
                        "record {} has no answer for {item}",
                        r.respondent_id
                    ))
                })?;
                rows[(i, j)] = *v as f64;
            }
        }
        out.insert(
            group.to_string(),
            ResponseMatrix::new(items.clone(), rows, group)?,
        );
    }
    Ok(out)
}

/// Sufficient statistics for mean-and-covariance structure estimation.
#[derive(Debug, Clone)]
pub struct SampleMoments {
    pub items: Vec<String>,
    pub n: usize,
    pub mean: DVector<f64>,
    /// Unbiased covariance (divisor n − 1).
    pub cov: DMatrix<f64>,
    /// Maximum-likelihood covariance (divisor n).
    pub cov_ml: DMatrix<f64>,
    /// Asymptotic covariance of vech(S): s_ijkl − s_ij·s_kl.
    pub gamma: DMatrix<f64>,
    /// Third central moments E[z_i z_k z_l], p × vech length; the mean/covariance
    /// cross block of the full asymptotic covariance.
    pub third: DMatrix<f64>,
}

impl SampleMoments {
    pub fn p(&self) -> usize {
        self.items.len()
    }

    /// Moments from a known covariance and mean, with normal-theory fourth
    /// and zero third moments. `cov` is taken as the n − 1 divisor matrix.
    pub fn from_cov(
        items: Vec<String>,
        n: usize,
        mean: DVector<f64>,
        cov: DMatrix<f64>,
    ) -> Result<Self> {
        if n < 2 {
            return Err(Error::InsufficientData("need at least 2 observations".into()));
        }
        let p = items.len();
        if cov.nrows() != p || cov.ncols() != p || mean.len() != p {
            return Err(Error::InvalidModel("moment dimensions disagree".into()));
        }
        let cov_ml = &cov * ((n - 1) as f64 / n as f64);
        Ok(SampleMoments {
            items,
            n,
            mean,
            gamma: normal_theory_gamma(&cov_ml),
            third: DMatrix::zeros(p, vech_len(p)),
            cov,
            cov_ml,
        })
    }

    pub fn with_normal_gamma(mut self) -> Self {
        self.gamma = normal_theory_gamma(&self.cov_ml);
        self.third = DMatrix::zeros(self.p(), vech_len(self.p()));
        self
    }

    /// Subset of items, in the given order.
    pub fn select(&self, items: &[String]) -> Result<SampleMoments> {
        let idx = items
            .iter()
            .map(|it| {
                self.items
                    .iter()
                    .position(|x| x == it)
                    .ok_or_else(|| Error::HeaderMismatch(format!("item {it} not in moments")))
            })
            .collect::<Result<Vec<_>>>()?;
        let p = idx.len();
        let old_pairs = vech_pairs(self.p());
        let pos = |i: usize, j: usize| {
            let (a, b) = if i >= j { (i, j) } else { (j, i) };
            old_pairs.iter().position(|&x| x == (a, b)).unwrap()
        };
        let new_pairs: Vec<usize> = vech_pairs(p)
            .into_iter()
            .map(|(i, j)| pos(idx[i], idx[j]))
            .collect();
        let m = new_pairs.len();
        Ok(SampleMoments {
            items: items.to_vec(),
            n: self.n,
            mean: DVector::from_fn(p, |i, _| self.mean[idx[i]]),
            cov: DMatrix::from_fn(p, p, |i, j| self.cov[(idx[i], idx[j])]),
            cov_ml: DMatrix::from_fn(p, p, |i, j| self.cov_ml[(idx[i], idx[j])]),
            gamma: DMatrix::from_fn(m, m, |a, b| self.gamma[(new_pairs[a], new_pairs[b])]),
            third: DMatrix::from_fn(p, m, |i, b| self.third[(idx[i], new_pairs[b])]),
        })
    }
}

pub fn compute_sample_moments(m: &ResponseMatrix) -> Result<SampleMoments> {
    let n = m.n();
    let p = m.p();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "group {} has {n} row(s); at least 2 are required",
            m.group
        )));
    }
    if n < p + 1 {
        log::warn!(
            "group {}: n = {n} < p + 1 = {}; the sample covariance is singular",
            m.group,
            p + 1
        );
    }
    let nf = n as f64;
    let mean = DVector::from_fn(p, |j, _| m.rows.column(j).sum() / nf);
    let mut centered = m.rows.clone();
    for j in 0..p {
        let mu = mean[j];
        centered.column_mut(j).add_scalar_mut(-mu);
    }
    let cross = centered.transpose() * &centered;
    let cov = crate::linalg::symmetrize(&(&cross / (nf - 1.0)));
    let cov_ml = crate::linalg::symmetrize(&(&cross / nf));

    let pairs = vech_pairs(p);
    let k = pairs.len();
    let z = DMatrix::from_fn(n, k, |r, c| {
        let (i, j) = pairs[c];
        centered[(r, i)] * centered[(r, j)]
    });
    let s = DVector::from_iterator(k, pairs.iter().map(|&(i, j)| cov_ml[(i, j)]));
    let mut gamma = z.transpose() * &z / nf;
    gamma -= &s * s.transpose();
    let gamma = crate::linalg::symmetrize(&gamma);
    let third = centered.transpose() * &z / nf;

    Ok(SampleMoments {
        items: m.items.clone(),
        n,
        mean,
        cov,
        cov_ml,
        gamma,
        third,
    })
}
