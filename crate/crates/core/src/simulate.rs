//! Seeded data generation from explicit factor-model parameters.
//!
//! Each group draws from its own ChaCha20 stream (stream id = group index)
//! derived from the configured seed, so output does not depend on thread
//! scheduling and groups can be generated in parallel.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{write_responses, SpamRules};
use crate::linalg::cholesky;
use crate::scale::{builtin_mcms, AttentionAnswer, ResponseMatrix, ResponseRecord, ScaleDefinition};
use crate::sem::ModelMatrices;

/// Identifier of the pseudo-random stream, recorded in output metadata.
pub const RNG_ALGORITHM: &str = "chacha20/rand_chacha-0.9/seed_from_u64+stream=group_index";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    #[default]
    Continuous,
    Likert,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LatentDistribution {
    #[default]
    Normal,
    /// Multivariate t rescaled to covariance Φ; requires df > 2.
    ScaledT { df: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupParameters {
    pub label: String,
    pub n: usize,
    /// p × q loadings, row per item.
    pub lambda: Vec<Vec<f64>>,
    pub phi: Vec<Vec<f64>>,
    pub theta: Vec<f64>,
    pub tau: Vec<f64>,
    pub kappa: Vec<f64>,
}

impl GroupParameters {
    pub fn from_matrices(label: impl Into<String>, n: usize, m: &ModelMatrices) -> Self {
        let rows = |x: &DMatrix<f64>| {
            (0..x.nrows())
                .map(|i| x.row(i).iter().copied().collect())
                .collect()
        };
        GroupParameters {
            label: label.into(),
            n,
            lambda: rows(&m.lambda),
            phi: rows(&m.phi),
            theta: m.theta.iter().copied().collect(),
            tau: m.tau.iter().copied().collect(),
            kappa: m.kappa.iter().copied().collect(),
        }
    }

    pub fn matrices(&self) -> ModelMatrices {
        let p = self.lambda.len();
        let q = self.phi.len();
        ModelMatrices {
            lambda: DMatrix::from_fn(p, q, |i, j| self.lambda[i][j]),
            phi: DMatrix::from_fn(q, q, |a, b| self.phi[a][b]),
            theta: DVector::from_vec(self.theta.clone()),
            tau: DVector::from_vec(self.tau.clone()),
            kappa: DVector::from_vec(self.kappa.clone()),
        }
    }
}

fn default_min() -> i64 {
    1
}

fn default_max() -> i64 {
    7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub items: Vec<String>,
    pub factors: Vec<String>,
    pub seed: u64,
    #[serde(default)]
    pub mode: GenerationMode,
    #[serde(default)]
    pub latent_distribution: LatentDistribution,
    #[serde(default)]
    pub spam_fraction: f64,
    #[serde(default = "default_min")]
    pub response_min: i64,
    #[serde(default = "default_max")]
    pub response_max: i64,
    #[serde(default = "SpamRules::default_three")]
    pub spam_rules: SpamRules,
    pub groups: Vec<GroupParameters>,
}

/// Published MCMS estimates: per factor, (loadings, intercepts) for items 1..3.
const MCMS_LOADINGS: [[f64; 3]; 6] = [
    [1.0, 0.882, 0.955],
    [1.0, 0.708, 0.946],
    [1.0, 0.844, 0.937],
    [1.0, 1.001, 1.08],
    [1.0, 1.098, 1.014],
    [1.0, 0.88, 0.995],
];
const MCMS_INTERCEPTS: [[f64; 3]; 6] = [
    [1.824, 1.683, 2.012],
    [5.987, 6.101, 6.059],
    [2.285, 2.041, 3.086],
    [2.251, 2.309, 2.186],
    [4.274, 3.967, 4.56],
    [5.623, 5.758, 5.637],
];
/// Lower triangle of the published factor correlations, row by row.
const MCMS_CORRELATIONS: [&[f64]; 5] = [
    &[-0.263],
    &[0.051, 0.128],
    &[0.151, 0.108, 0.600],
    &[-0.222, 0.440, 0.458, 0.449],
    &[-0.523, 0.362, 0.283, 0.230, 0.525],
];
/// Residual variance used where no estimate was published.
pub const MCMS_RESIDUAL_VARIANCE: f64 = 0.5;

/// Published MCMS parameters with unit factor variances, Θ = 0.5·I and κ = 0.
pub fn mcms_published_matrices() -> ModelMatrices {
    let (p, q) = (18, 6);
    let mut lambda = DMatrix::zeros(p, q);
    let mut tau = DVector::zeros(p);
    for j in 0..q {
        for k in 0..3 {
            lambda[(3 * j + k, j)] = MCMS_LOADINGS[j][k];
            tau[3 * j + k] = MCMS_INTERCEPTS[j][k];
        }
    }
    let mut phi = DMatrix::identity(q, q);
    for (row, vals) in MCMS_CORRELATIONS.iter().enumerate() {
        for (col, &v) in vals.iter().enumerate() {
            phi[(row + 1, col)] = v;
            phi[(col, row + 1)] = v;
        }
    }
    ModelMatrices {
        lambda,
        phi,
        theta: DVector::from_element(p, MCMS_RESIDUAL_VARIANCE),
        tau,
        kappa: DVector::zeros(q),
    }
}

impl GeneratorConfig {
    /// Equal published parameters in every group.
    pub fn mcms_published(groups: &[(&str, usize)], seed: u64) -> Self {
        let def = builtin_mcms();
        let m = mcms_published_matrices();
        GeneratorConfig {
            items: def.items(),
            factors: def.factor_names(),
            seed,
            mode: GenerationMode::Continuous,
            latent_distribution: LatentDistribution::Normal,
            spam_fraction: 0.0,
            response_min: def.response_min,
            response_max: def.response_max,
            spam_rules: SpamRules::default_three(),
            groups: groups
                .iter()
                .map(|(label, n)| GroupParameters::from_matrices(*label, *n, &m))
                .collect(),
        }
    }

    pub fn group(&self, label: &str) -> Option<&GroupParameters> {
        self.groups.iter().find(|g| g.label == label)
    }

    pub fn validate(&self) -> Result<()> {
        let (p, q) = (self.items.len(), self.factors.len());
        let bad = |msg: String| Err(Error::Config(msg));
        if self.groups.is_empty() {
            return bad("generator needs at least one group".into());
        }
        if !(0.0..1.0).contains(&self.spam_fraction) {
            return bad(format!("spam_fraction {} outside [0, 1)", self.spam_fraction));
        }
        if self.response_min >= self.response_max {
            return bad("response_min must be below response_max".into());
        }
        if let LatentDistribution::ScaledT { df } = self.latent_distribution {
            if !(df > 2.0) {
                return bad(format!("scaled t needs df > 2, got {df}"));
            }
        }
        let mut seen = BTreeSet::new();
        for g in &self.groups {
            if !seen.insert(g.label.as_str()) {
                return bad(format!("duplicate group label {}", g.label));
            }
            if g.n == 0 {
                return bad(format!("group {} has n = 0", g.label));
            }
            let dims_ok = g.lambda.len() == p
                && g.lambda.iter().all(|r| r.len() == q)
                && g.phi.len() == q
                && g.phi.iter().all(|r| r.len() == q)
                && g.theta.len() == p
                && g.tau.len() == p
                && g.kappa.len() == q;
            if !dims_ok {
                return bad(format!(
                    "group {}: parameter dimensions do not match {p} items and {q} factors",
                    g.label
                ));
            }
            for a in 0..q {
                for b in 0..a {
                    if (g.phi[a][b] - g.phi[b][a]).abs() > 1e-12 {
                        return bad(format!("group {}: phi is not symmetric", g.label));
                    }
                }
            }
            if q > 0 && cholesky(&g.matrices().phi).is_none() {
                return Err(Error::InvalidModel(format!(
                    "group {}: phi is not positive definite",
                    g.label
                )));
            }
            if let Some(t) = g.theta.iter().find(|t| !(**t >= 0.0)) {
                return bad(format!("group {}: residual variance {t} is negative", g.label));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse {
            what: "generator config".into(),
            message: e.to_string(),
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: GeneratorConfig = toml::from_str(text).map_err(|e| Error::Parse {
            what: "generator config".into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

/// One group's draws, spammers included.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedGroup {
    pub matrix: ResponseMatrix,
    pub is_spammer: Vec<bool>,
    /// Per respondent, answers to the test items in `GeneratorConfig::spam_rules` order.
    pub test_answers: Vec<Vec<i64>>,
    pub attention: Vec<AttentionAnswer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub test_items: Vec<String>,
    pub groups: BTreeMap<String, SimulatedGroup>,
}

impl SimulatedData {
    /// Records in group order; requires integer (Likert-mode) answers.
    pub fn to_records(&self) -> Result<Vec<ResponseRecord>> {
        let mut out = Vec::new();
        for (label, g) in &self.groups {
            let m = &g.matrix;
            for r in 0..m.n() {
                let mut item_answers = BTreeMap::new();
                for (c, item) in m.items.iter().enumerate() {
                    let v = m.rows[(r, c)];
                    if v.fract() != 0.0 {
                        return Err(Error::Precondition(
                            "continuous-mode data cannot be written as Likert responses".into(),
                        ));
                    }
                    item_answers.insert(item.clone(), v as i64);
                }
                out.push(ResponseRecord {
                    respondent_id: format!("{label}-{:06}", r + 1),
                    group: label.clone(),
                    item_answers,
                    test_item_answers: self
                        .test_items
                        .iter()
                        .cloned()
                        .zip(g.test_answers[r].iter().copied())
                        .collect(),
                    attention_answer: g.attention[r],
                });
            }
        }
        Ok(out)
    }

    /// Non-spammer rows only.
    pub fn clean_matrices(&self) -> Result<BTreeMap<String, ResponseMatrix>> {
        self.groups
            .iter()
            .map(|(label, g)| {
                let keep: Vec<usize> = (0..g.matrix.n()).filter(|&r| !g.is_spammer[r]).collect();
                let rows = g.matrix.rows.select_rows(&keep);
                Ok((label.clone(), ResponseMatrix::new(g.matrix.items.clone(), rows, label.clone())?))
            })
            .collect()
    }

    pub fn write_responses(&self, path: &Path, def: &ScaleDefinition) -> Result<()> {
        let records = self.to_records()?;
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        write_responses(std::io::BufWriter::new(f), def, &self.test_items, &records)
    }
}

fn group_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform-random answers to every item, test item and the attention question.
pub fn spammer_answers<R: Rng + ?Sized>(
    rng: &mut R,
    n_items: usize,
    n_tests: usize,
    min: i64,
    max: i64,
) -> (Vec<i64>, Vec<i64>, AttentionAnswer) {
    let items = (0..n_items).map(|_| rng.random_range(min..=max)).collect();
    let tests = (0..n_tests).map(|_| rng.random_range(min..=max)).collect();
    let attention = AttentionAnswer::OPTIONS[rng.random_range(0..AttentionAnswer::OPTIONS.len())];
    (items, tests, attention)
}

/// `n` uniform-random spammer records, seeded.
pub fn simulate_spammers(
    def: &ScaleDefinition,
    rules: &SpamRules,
    n: usize,
    seed: u64,
) -> Vec<ResponseRecord> {
    let mut rng = group_rng(seed, 0);
    let items = def.items();
    let tests = rules.test_items();
    (0..n)
        .map(|r| {
            let (a, t, att) = spammer_answers(
                &mut rng,
                items.len(),
                tests.len(),
                def.response_min,
                def.response_max,
            );
            ResponseRecord {
                respondent_id: format!("spam-{r}"),
                group: "spam".into(),
                item_answers: items.iter().cloned().zip(a).collect(),
                test_item_answers: tests.iter().cloned().zip(t).collect(),
                attention_answer: att,
            }
        })
        .collect()
}

fn simulate_group(cfg: &GeneratorConfig, index: usize) -> Result<SimulatedGroup> {
    let g = &cfg.groups[index];
    let m = g.matrices();
    let (p, q) = (cfg.items.len(), cfg.factors.len());
    let chol_l = if q > 0 {
        cholesky(&m.phi)
            .ok_or_else(|| Error::InvalidModel(format!("group {}: phi is not positive definite", g.label)))?
            .l()
    } else {
        DMatrix::zeros(0, 0)
    };
    let sd_eps: Vec<f64> = m.theta.iter().map(|t| t.sqrt()).collect();
    let expected: Vec<i64> = cfg.spam_rules.expected_test_answers.values().copied().collect();
    let chi = match cfg.latent_distribution {
        LatentDistribution::ScaledT { df } => {
            Some((ChiSquared::new(df).map_err(|e| Error::Config(e.to_string()))?, df))
        }
        LatentDistribution::Normal => None,
    };
    let (lo, hi) = (cfg.response_min as f64, cfg.response_max as f64);

    let mut rng = group_rng(cfg.seed, index as u64);
    let mut rows = DMatrix::zeros(g.n, p);
    let mut is_spammer = Vec::with_capacity(g.n);
    let mut test_answers = Vec::with_capacity(g.n);
    let mut attention = Vec::with_capacity(g.n);
    let mut z = DVector::zeros(q);
    for r in 0..g.n {
        let spam = cfg.spam_fraction > 0.0 && rng.random::<f64>() < cfg.spam_fraction;
        if spam {
            let (a, t, att) =
                spammer_answers(&mut rng, p, expected.len(), cfg.response_min, cfg.response_max);
            for (c, v) in a.into_iter().enumerate() {
                rows[(r, c)] = v as f64;
            }
            is_spammer.push(true);
            test_answers.push(t);
            attention.push(att);
            continue;
        }
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let mut eta = &chol_l * &z;
        if let Some((dist, df)) = &chi {
            let w: f64 = dist.sample(&mut rng);
            eta *= ((df - 2.0) / w).sqrt();
        }
        eta += &m.kappa;
        let common = &m.lambda * &eta;
        for c in 0..p {
            let e: f64 = rng.sample(StandardNormal);
            let mut y = m.tau[c] + common[c] + sd_eps[c] * e;
            if cfg.mode == GenerationMode::Likert {
                y = y.clamp(lo, hi).round();
            }
            rows[(r, c)] = y;
        }
        is_spammer.push(false);
        test_answers.push(expected.clone());
        attention.push(cfg.spam_rules.attention_required);
    }
    Ok(SimulatedGroup {
        matrix: ResponseMatrix::new(cfg.items.clone(), rows, g.label.clone())?,
        is_spammer,
        test_answers,
        attention,
    })
}

/// Draws η ~ D(κ, Φ) and y = τ + Λη + ε with ε ~ N(0, Θ) per respondent;
/// a `spam_fraction` share of respondents answer uniformly at random instead.
pub fn simulate_responses(cfg: &GeneratorConfig) -> Result<SimulatedData> {
    cfg.validate()?;
    let groups = (0..cfg.groups.len())
        .into_par_iter()
        .map(|i| simulate_group(cfg, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(SimulatedData {
        test_items: cfg.spam_rules.test_items(),
        groups: cfg
            .groups
            .iter()
            .map(|g| g.label.clone())
            .zip(groups)
            .collect(),
    })
}

/// An additive edit to one parameter of one group, addressed by slot label:
/// `lambda[item,factor]`, `phi[factor,factor]`, `theta[item]`, `tau[item]`
/// or `kappa[factor]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterEdit {
    pub group: String,
    pub slot: String,
    pub delta: f64,
}

impl ParameterEdit {
    pub fn new(group: &str, slot: &str, delta: f64) -> Self {
        ParameterEdit {
            group: group.into(),
            slot: slot.into(),
            delta,
        }
    }
}

fn parse_label(label: &str) -> Option<(&str, Vec<&str>)> {
    let open = label.find('[')?;
    let inner = label[open + 1..].strip_suffix(']')?;
    Some((&label[..open], inner.split(',').map(str::trim).collect()))
}

pub fn plant_noninvariance(cfg: &GeneratorConfig, edits: &[ParameterEdit]) -> Result<GeneratorConfig> {
    let mut out = cfg.clone();
    for e in edits {
        let bad = || Error::Config(format!("cannot apply edit to {} in group {}", e.slot, e.group));
        let item = |s: &str| cfg.items.iter().position(|x| x == s);
        let factor = |s: &str| cfg.factors.iter().position(|x| x == s);
        let g = out
            .groups
            .iter_mut()
            .find(|g| g.label == e.group)
            .ok_or_else(bad)?;
        let (kind, args) = parse_label(&e.slot).ok_or_else(bad)?;
        match (kind, args.as_slice()) {
            ("lambda", [i, f]) => {
                g.lambda[item(i).ok_or_else(bad)?][factor(f).ok_or_else(bad)?] += e.delta
            }
            ("phi", [a, b]) => {
                let (a, b) = (factor(a).ok_or_else(bad)?, factor(b).ok_or_else(bad)?);
                g.phi[a][b] += e.delta;
                if a != b {
                    g.phi[b][a] += e.delta;
                }
            }
            ("theta", [i]) => g.theta[item(i).ok_or_else(bad)?] += e.delta,
            ("tau", [i]) => g.tau[item(i).ok_or_else(bad)?] += e.delta,
            ("kappa", [f]) => g.kappa[factor(f).ok_or_else(bad)?] += e.delta,
            _ => return Err(bad()),
        }
    }
    Ok(out)
}
