//! Measurement instruments and the raw-response data model.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A multi-factor Likert instrument. Item codes are the join key between
/// scale definitions, response files and model specifications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleDefinition {
    pub name: String,
    pub stem: String,
    pub response_min: i64,
    pub response_max: i64,
    pub factors: Vec<FactorDef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorDef {
    pub name: String,
    pub items: Vec<String>,
    /// Item whose loading is fixed to one. Defaults to the first item.
    #[serde(default)]
    pub marker: String,
}

impl FactorDef {
    pub fn new(name: impl Into<String>, items: &[&str]) -> Self {
        let items: Vec<String> = items.iter().map(|s| s.to_string()).collect();
        let marker = items.first().cloned().unwrap_or_default();
        FactorDef {
            name: name.into(),
            items,
            marker,
        }
    }
}

/// The built-in six-factor crowdworker motivation scale, three items per factor.
pub fn builtin_mcms() -> ScaleDefinition {
    ScaleDefinition {
        name: "MCMS".to_string(),
        stem: "Why do you or would you put efforts into doing CrowdFlower tasks?".to_string(),
        response_min: 1,
        response_max: 7,
        factors: vec![
            FactorDef::new("Amotivation", &["Am1", "Am2", "Am3"]),
            FactorDef::new(
                "Material External Regulation",
                &["ExMat1", "ExMat2", "ExMat3"],
            ),
            FactorDef::new("Social External Regulation", &["ExSoc1", "ExSoc2", "ExSoc3"]),
            FactorDef::new("Introjected Regulation", &["Introj1", "Introj2", "Introj3"]),
            FactorDef::new("Identified Regulation", &["Ident1", "Ident2", "Ident3"]),
            FactorDef::new("Intrinsic Motivation", &["Intrin1", "Intrin2", "Intrin3"]),
        ],
    }
}

impl ScaleDefinition {
    /// Item codes in factor order.
    pub fn items(&self) -> Vec<String> {
        self.factors
            .iter()
            .flat_map(|f| f.items.iter().cloned())
            .collect()
    }

    pub fn n_items(&self) -> usize {
        self.factors.iter().map(|f| f.items.len()).sum()
    }

    pub fn factor_names(&self) -> Vec<String> {
        self.factors.iter().map(|f| f.name.clone()).collect()
    }

    pub fn factor_of(&self, item: &str) -> Option<usize> {
        self.factors
            .iter()
            .position(|f| f.items.iter().any(|i| i == item))
    }

    pub fn factor(&self, name: &str) -> Option<&FactorDef> {
        self.factors.iter().find(|f| f.name == name)
    }

    pub fn in_range(&self, value: i64) -> bool {
        (self.response_min..=self.response_max).contains(&value)
    }

    pub fn validate(&self) -> Result<()> {
        let violations = validate_scale(self);
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidScale(violations))
        }
    }

    /// Keep only the listed items, dropping factors that end up empty.
    pub fn restricted_to(&self, keep: &[String]) -> ScaleDefinition {
        let keep: BTreeSet<&str> = keep.iter().map(String::as_str).collect();
        let factors = self
            .factors
            .iter()
            .filter_map(|f| {
                let items: Vec<String> = f
                    .items
                    .iter()
                    .filter(|i| keep.contains(i.as_str()))
                    .cloned()
                    .collect();
                if items.is_empty() {
                    return None;
                }
                let marker = if items.contains(&f.marker) {
                    f.marker.clone()
                } else {
                    items[0].clone()
                };
                Some(FactorDef {
                    name: f.name.clone(),
                    items,
                    marker,
                })
            })
            .collect();
        ScaleDefinition {
            factors,
            ..self.clone()
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse {
            what: "scale definition".into(),
            message: e.to_string(),
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let mut def: ScaleDefinition = toml::from_str(text).map_err(|e| Error::Parse {
            what: "scale definition".into(),
            message: e.to_string(),
        })?;
        for f in &mut def.factors {
            if f.marker.is_empty() {
                if let Some(first) = f.items.first() {
                    f.marker = first.clone();
                }
            }
        }
        Ok(def)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }
}

/// Lists every broken invariant of a scale definition. An empty list means valid.
pub fn validate_scale(def: &ScaleDefinition) -> Vec<String> {
    let mut out = Vec::new();
    if def.response_min >= def.response_max {
        out.push(format!(
            "response range [{}, {}] is empty or degenerate",
            def.response_min, def.response_max
        ));
    }
    if def.factors.is_empty() {
        out.push("scale has no factors".to_string());
    }
    let mut factor_names = BTreeSet::new();
    let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
    for f in &def.factors {
        if !factor_names.insert(f.name.as_str()) {
            out.push(format!("factor name {} is used more than once", f.name));
        }
        if f.items.is_empty() {
            out.push(format!("factor {} has no items", f.name));
            continue;
        }
        if f.items.len() < 2 {
            out.push(format!("factor {} has fewer than 2 items", f.name));
        }
        if !f.items.contains(&f.marker) {
            out.push(format!(
                "factor {}: marker {} is not one of its items",
                f.name, f.marker
            ));
        }
        let mut seen = BTreeSet::new();
        for item in &f.items {
            if item.trim().is_empty() {
                out.push(format!("factor {} has an empty item code", f.name));
                continue;
            }
            if !seen.insert(item.as_str()) {
                out.push(format!("factor {}: item {} listed more than once", f.name, item));
                continue;
            }
            if let Some(prev) = owner.insert(item.as_str(), f.name.as_str()) {
                out.push(format!(
                    "item {} appears in factors {} and {}",
                    item, prev, f.name
                ));
            }
        }
    }
    out
}

/// Answer to the drop-down attention question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttentionAnswer {
    No,
    Yes,
    DontKnow,
    Missing,
}

impl AttentionAnswer {
    /// The selectable options (excludes `Missing`).
    pub const OPTIONS: [AttentionAnswer; 3] =
        [AttentionAnswer::No, AttentionAnswer::Yes, AttentionAnswer::DontKnow];

    pub fn as_str(self) -> &'static str {
        match self {
            AttentionAnswer::No => "No",
            AttentionAnswer::Yes => "Yes",
            AttentionAnswer::DontKnow => "DontKnow",
            AttentionAnswer::Missing => "",
        }
    }
}

impl fmt::Display for AttentionAnswer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttentionAnswer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .trim()
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "" | "na" | "missing" => Ok(AttentionAnswer::Missing),
            "yes" => Ok(AttentionAnswer::Yes),
            "no" => Ok(AttentionAnswer::No),
            "dontknow" | "idontknow" => Ok(AttentionAnswer::DontKnow),
            _ => Err(Error::Parse {
                what: "attention answer".into(),
                message: format!("unrecognised value {s:?}"),
            }),
        }
    }
}

/// One respondent's answers.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseRecord {
    pub respondent_id: String,
    pub group: String,
    pub item_answers: BTreeMap<String, i64>,
    pub test_item_answers: BTreeMap<String, i64>,
    pub attention_answer: AttentionAnswer,
}

/// Complete-case numeric responses for one group. Rows are respondents,
/// columns follow `items`.
///
/// Values are stored as reals so that continuous simulated data can flow
/// through the same estimators as integer Likert answers.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    pub items: Vec<String>,
    pub rows: DMatrix<f64>,
    pub group: String,
}

impl ResponseMatrix {
    pub fn new(items: Vec<String>, rows: DMatrix<f64>, group: impl Into<String>) -> Result<Self> {
        if rows.ncols() != items.len() {
            return Err(Error::InvalidModel(format!(
                "matrix has {} columns but {} item codes",
                rows.ncols(),
                items.len()
            )));
        }
        if rows.nrows() == 0 {
            return Err(Error::InsufficientData("response matrix has no rows".into()));
        }
        Ok(ResponseMatrix {
            items,
            rows,
            group: group.into(),
        })
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn p(&self) -> usize {
        self.rows.ncols()
    }

    pub fn column_of(&self, item: &str) -> Option<usize> {
        self.items.iter().position(|i| i == item)
    }

    /// Column subset in the given order.
    pub fn select(&self, items: &[String]) -> Result<ResponseMatrix> {
        let cols = items
            .iter()
            .map(|it| {
                self.column_of(it).ok_or_else(|| {
                    Error::HeaderMismatch(format!("item {it} not present in response matrix"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let rows = DMatrix::from_fn(self.n(), cols.len(), |r, c| self.rows[(r, cols[c])]);
        Ok(ResponseMatrix {
            items: items.to_vec(),
            rows,
            group: self.group.clone(),
        })
    }

    /// Row-wise concatenation of matrices sharing the same item order.
    pub fn stack(parts: &[&ResponseMatrix], group: impl Into<String>) -> Result<ResponseMatrix> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InsufficientData("nothing to stack".into()))?;
        let n: usize = parts.iter().map(|m| m.n()).sum();
        let mut rows = DMatrix::zeros(n, first.p());
        let mut r0 = 0;
        for m in parts {
            if m.items != first.items {
                return Err(Error::HeaderMismatch("item order differs between groups".into()));
            }
            rows.view_mut((r0, 0), (m.n(), m.p())).copy_from(&m.rows);
            r0 += m.n();
        }
        ResponseMatrix::new(first.items.clone(), rows, group)
    }
}
