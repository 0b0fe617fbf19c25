//! Composite scores, composite correlations and Cronbach's alpha.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

use crate::error::{Error, Result};
use crate::scale::{FactorDef, ResponseMatrix, ScaleDefinition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorStats {
    pub factor: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeStats {
    pub group: String,
    pub n: usize,
    pub factors: Vec<FactorStats>,
}

/// Pearson correlations of composites. Entries involving a zero-variance
/// composite are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub factors: Vec<String>,
    pub n: usize,
    pub r: Vec<Vec<Option<f64>>>,
    /// Two-sided p-values against ρ = 0 (t with n − 2 df).
    pub p_values: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaEstimate {
    pub factor: String,
    pub alpha: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub k: usize,
    pub n: usize,
}

fn column_indices(m: &ResponseMatrix, items: &[String]) -> Result<Vec<usize>> {
    items
        .iter()
        .map(|it| {
            m.column_of(it)
                .ok_or_else(|| Error::HeaderMismatch(format!("item {it} missing from response matrix")))
        })
        .collect()
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// n × q matrix of unweighted item means per factor.
pub fn composite_scores(m: &ResponseMatrix, def: &ScaleDefinition) -> Result<DMatrix<f64>> {
    let cols = def
        .factors
        .iter()
        .map(|f| column_indices(m, &f.items))
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_fn(m.n(), cols.len(), |r, j| {
        cols[j].iter().map(|&c| m.rows[(r, c)]).sum::<f64>() / cols[j].len() as f64
    }))
}

pub fn composite_stats(m: &ResponseMatrix, def: &ScaleDefinition) -> Result<CompositeStats> {
    if m.n() == 0 {
        return Err(Error::InsufficientData(format!("group {} has no respondents", m.group)));
    }
    let scores = composite_scores(m, def)?;
    let factors = def
        .factors
        .iter()
        .enumerate()
        .map(|(j, f)| {
            let col: Vec<f64> = scores.column(j).iter().copied().collect();
            let (mean, sd) = mean_sd(&col);
            FactorStats {
                factor: f.name.clone(),
                mean,
                sd,
            }
        })
        .collect();
    Ok(CompositeStats {
        group: m.group.clone(),
        n: m.n(),
        factors,
    })
}

pub fn composite_correlations(m: &ResponseMatrix, def: &ScaleDefinition) -> Result<CorrelationTable> {
    let n = m.n();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "correlations need at least 3 respondents, group {} has {n}",
            m.group
        )));
    }
    let scores = composite_scores(m, def)?;
    let q = scores.ncols();
    let centered: Vec<Vec<f64>> = (0..q)
        .map(|j| {
            let col = scores.column(j);
            let mean = col.sum() / n as f64;
            col.iter().map(|v| v - mean).collect()
        })
        .collect();
    let ss: Vec<f64> = centered.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();
    let t_dist = StudentsT::new(0.0, 1.0, (n - 2) as f64)
        .map_err(|e| Error::InsufficientData(e.to_string()))?;
    let mut r = vec![vec![None; q]; q];
    let mut p = vec![vec![None; q]; q];
    for a in 0..q {
        for b in 0..q {
            if ss[a] <= 0.0 || ss[b] <= 0.0 {
                continue;
            }
            let v = if a == b {
                1.0
            } else {
                let cross: f64 = centered[a].iter().zip(&centered[b]).map(|(x, y)| x * y).sum();
                (cross / (ss[a] * ss[b]).sqrt()).clamp(-1.0, 1.0)
            };
            r[a][b] = Some(v);
            p[a][b] = Some(if a == b || v.abs() >= 1.0 {
                0.0
            } else {
                let t = v * ((n - 2) as f64 / (1.0 - v * v)).sqrt();
                2.0 * t_dist.sf(t.abs())
            });
        }
    }
    for (a, f) in def.factors.iter().enumerate() {
        if ss[a] <= 0.0 {
            log::warn!("composite {} has zero variance; its correlations are undefined", f.name);
        }
    }
    Ok(CorrelationTable {
        factors: def.factor_names(),
        n,
        r,
        p_values: p,
    })
}

/// Cronbach's alpha with a 95% Feldt interval.
pub fn cronbach_alpha(m: &ResponseMatrix, factor: &FactorDef) -> Result<AlphaEstimate> {
    let k = factor.items.len();
    let n = m.n();
    if k < 2 {
        return Err(Error::Precondition(format!(
            "alpha needs at least 2 items, factor {} has {k}",
            factor.name
        )));
    }
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "alpha needs at least 3 respondents, group {} has {n}",
            m.group
        )));
    }
    let cols = column_indices(m, &factor.items)?;
    let item_var: f64 = cols
        .iter()
        .map(|&c| {
            let col: Vec<f64> = m.rows.column(c).iter().copied().collect();
            mean_sd(&col).1.powi(2)
        })
        .sum();
    let totals: Vec<f64> = (0..n)
        .map(|r| cols.iter().map(|&c| m.rows[(r, c)]).sum())
        .collect();
    let total_var = mean_sd(&totals).1.powi(2);
    if total_var <= 0.0 {
        return Err(Error::InsufficientData(format!(
            "factor {} has zero total-score variance",
            factor.name
        )));
    }
    let kf = k as f64;
    let alpha = kf / (kf - 1.0) * (1.0 - item_var / total_var);
    let df1 = (n - 1) as f64;
    let f = FisherSnedecor::new(df1, df1 * (kf - 1.0)).map_err(|e| Error::InsufficientData(e.to_string()))?;
    Ok(AlphaEstimate {
        factor: factor.name.clone(),
        alpha,
        ci_low: 1.0 - (1.0 - alpha) * f.inverse_cdf(0.975),
        ci_high: 1.0 - (1.0 - alpha) * f.inverse_cdf(0.025),
        k,
        n,
    })
}

pub fn alpha_table(m: &ResponseMatrix, def: &ScaleDefinition) -> Result<Vec<AlphaEstimate>> {
    def.factors.iter().map(|f| cronbach_alpha(m, f)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scale::builtin_mcms;
    use approx::assert_relative_eq;

    fn two_item_def() -> ScaleDefinition {
        ScaleDefinition {
            factors: vec![
                FactorDef::new("A", &["a1", "a2"]),
                FactorDef::new("B", &["b1", "b2"]),
            ],
            ..builtin_mcms()
        }
    }

    fn matrix(rows: &[[f64; 4]]) -> ResponseMatrix {
        let items = ["a1", "a2", "b1", "b2"].map(String::from).to_vec();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        ResponseMatrix::new(items, DMatrix::from_row_slice(rows.len(), 4, &flat), "G").unwrap()
    }

    #[test]
    fn constant_respondent() {
        let def = builtin_mcms();
        let m = ResponseMatrix::new(def.items(), DMatrix::from_element(1, 18, 7.0), "G").unwrap();
        let s = composite_stats(&m, &def).unwrap();
        assert!(s.factors.iter().all(|f| f.mean == 7.0 && f.sd == 0.0));
    }

    #[test]
    fn two_respondents_by_hand() {
        let m = matrix(&[[1.0, 1.0, 1.0, 1.0], [3.0, 3.0, 3.0, 3.0]]);
        let s = composite_stats(&m, &two_item_def()).unwrap();
        assert_eq!(s.factors[0].mean, 2.0);
        assert_relative_eq!(s.factors[0].sd, 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn perfectly_related_composites() {
        let m = matrix(&[
            [1.0, 2.0, 2.0, 3.0],
            [4.0, 4.0, 5.0, 5.0],
            [2.0, 3.0, 3.0, 4.0],
            [7.0, 5.0, 7.0, 7.0],
        ]);
        let c = composite_correlations(&m, &two_item_def()).unwrap();
        assert_relative_eq!(c.r[0][1].unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(c.r[0][0], Some(1.0));
    }

    #[test]
    fn zero_variance_composite_is_flagged() {
        let m = matrix(&[
            [1.0, 2.0, 4.0, 4.0],
            [4.0, 4.0, 4.0, 4.0],
            [2.0, 3.0, 4.0, 4.0],
        ]);
        let c = composite_correlations(&m, &two_item_def()).unwrap();
        assert_eq!(c.r[0][1], None);
        assert!(c.r[0][0].is_some());
    }

    #[test]
    fn uncorrelated_items_give_zero_alpha() {
        // Columns are orthogonal contrasts with equal variance.
        let m = matrix(&[
            [1.0, 1.0, 0.0, 0.0],
            [1.0, -1.0, 0.0, 0.0],
            [-1.0, 1.0, 0.0, 0.0],
            [-1.0, -1.0, 0.0, 0.0],
        ]);
        let a = cronbach_alpha(&m, &two_item_def().factors[0]).unwrap();
        assert_relative_eq!(a.alpha, 0.0, epsilon = 1e-15);
        assert!(a.ci_low <= a.alpha && a.alpha <= a.ci_high);
    }

    #[test]
    fn zero_total_variance_errors() {
        let m = matrix(&[[1.0, 1.0, 0.0, 0.0], [1.0, 1.0, 1.0, 0.0], [1.0, 1.0, 0.0, 1.0]]);
        assert!(cronbach_alpha(&m, &two_item_def().factors[0]).is_err());
    }
}
