//! Exploratory factor analysis and iterative item-pool reduction.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{compute_sample_moments, SampleMoments};
use crate::linalg::{cov_to_corr, sorted_symmetric_eigen, sym_inverse_checked};
use crate::scale::{ResponseMatrix, ScaleDefinition};

const PAF_TOL: f64 = 1e-6;
const PAF_MAX_ITER: usize = 200;
// Largest communality change still accepted when the iteration cap is hit.
const PAF_SETTLED: f64 = 1e-3;
const VARIMAX_EPS: f64 = 1e-5;
const VARIMAX_MAX_ITER: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Extraction {
    PrincipalAxis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rotation {
    None,
    Varimax,
    Promax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfaSolution {
    pub items: Vec<String>,
    /// p × q pattern matrix.
    pub loadings: DMatrix<f64>,
    pub factor_correlations: DMatrix<f64>,
    pub communalities: Vec<f64>,
    /// Leading eigenvalues of the final reduced correlation matrix.
    pub eigenvalues: Vec<f64>,
    pub extraction: Extraction,
    pub rotation: Rotation,
    pub iterations: usize,
    /// Items whose communality exceeded 1 and was clamped.
    pub heywood: Vec<String>,
}

impl EfaSolution {
    pub fn n_factors(&self) -> usize {
        self.loadings.ncols()
    }
}

/// Flips column signs so every column has a nonnegative sum.
fn orient_columns(loadings: &mut DMatrix<f64>, phi: &mut DMatrix<f64>) {
    for j in 0..loadings.ncols() {
        if loadings.column(j).sum() < 0.0 {
            loadings.column_mut(j).neg_mut();
            phi.column_mut(j).neg_mut();
            phi.row_mut(j).neg_mut();
        }
    }
}

/// Principal-axis factoring of a correlation matrix, starting from squared
/// multiple correlations.
pub fn extract_factors_from_corr(r: &DMatrix<f64>, items: &[String], q: usize) -> Result<EfaSolution> {
    let p = r.nrows();
    if q == 0 || q > p {
        return Err(Error::Precondition(format!("cannot extract {q} factors from {p} items")));
    }
    let r_inv = sym_inverse_checked(r, 1e-12, "correlation matrix")?;
    let mut h: Vec<f64> = (0..p).map(|i| (1.0 - 1.0 / r_inv[(i, i)]).clamp(0.0, 1.0)).collect();
    let mut heywood = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut reduced = r.clone();
        for i in 0..p {
            reduced[(i, i)] = h[i];
        }
        let (vals, vecs) = sorted_symmetric_eigen(&reduced);
        let mut loadings = DMatrix::from_fn(p, q, |i, j| vecs[(i, j)] * vals[j].max(0.0).sqrt());
        let mut h_new: Vec<f64> = (0..p).map(|i| loadings.row(i).norm_squared()).collect();
        let change = h.iter().zip(&h_new).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let done = change < PAF_TOL;
        if done || iterations >= PAF_MAX_ITER {
            if !done {
                if change > PAF_SETTLED {
                    return Err(Error::NonConvergence {
                        iterations,
                        gradient_norm: change,
                    });
                }
                log::warn!("principal-axis iteration stopped at {iterations} with communality change {change:.2e}");
            }
            for (i, hi) in h_new.iter_mut().enumerate() {
                if *hi > 1.0 {
                    log::warn!("Heywood case: communality of {} is {hi:.4}; clamped to 1", items[i]);
                    heywood.push(items[i].clone());
                    let s = hi.sqrt();
                    loadings.row_mut(i).unscale_mut(s);
                    *hi = 1.0;
                }
            }
            let mut phi = DMatrix::identity(q, q);
            orient_columns(&mut loadings, &mut phi);
            return Ok(EfaSolution {
                items: items.to_vec(),
                loadings,
                factor_correlations: phi,
                communalities: h_new,
                eigenvalues: vals.iter().take(q).copied().collect(),
                extraction: Extraction::PrincipalAxis,
                rotation: Rotation::None,
                iterations,
                heywood,
            });
        }
        for (hi, &hn) in h.iter_mut().zip(&h_new) {
            *hi = hn.min(1.0);
        }
    }
}

pub fn extract_factors(moments: &SampleMoments, q: usize) -> Result<EfaSolution> {
    let r = cov_to_corr(&moments.cov)?;
    extract_factors_from_corr(&r, &moments.items, q)
}

/// Kaiser-normalised varimax. Returns rotated loadings and the orthogonal rotation.
pub fn varimax(loadings: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (p, q) = loadings.shape();
    if q < 2 {
        return (loadings.clone(), DMatrix::identity(q, q));
    }
    let norms: Vec<f64> = (0..p)
        .map(|i| loadings.row(i).norm().max(f64::MIN_POSITIVE))
        .collect();
    let x = DMatrix::from_fn(p, q, |i, j| loadings[(i, j)] / norms[i]);
    let mut t = DMatrix::identity(q, q);
    let mut d = 0.0;
    for _ in 0..VARIMAX_MAX_ITER {
        let z = &x * &t;
        let col_ss: Vec<f64> = (0..q).map(|j| z.column(j).norm_squared()).collect();
        let target = DMatrix::from_fn(p, q, |i, j| z[(i, j)].powi(3) - z[(i, j)] * col_ss[j] / p as f64);
        let b = x.transpose() * target;
        let svd = b.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        t = u * vt;
        let d_past = d;
        d = svd.singular_values.sum();
        if d < d_past * (1.0 + VARIMAX_EPS) {
            break;
        }
    }
    let z = &x * &t;
    let rotated = DMatrix::from_fn(p, q, |i, j| z[(i, j)] * norms[i]);
    (rotated, t)
}

pub fn rotate_varimax(sol: &EfaSolution) -> EfaSolution {
    let (mut loadings, _) = varimax(&sol.loadings);
    let mut phi = DMatrix::identity(sol.n_factors(), sol.n_factors());
    orient_columns(&mut loadings, &mut phi);
    EfaSolution {
        loadings,
        factor_correlations: phi,
        rotation: Rotation::Varimax,
        ..sol.clone()
    }
}

/// Varimax followed by promax with power `kappa`: target |x|^κ·sign(x),
/// least-squares transformation rescaled to unit factor variances.
pub fn rotate_promax(sol: &EfaSolution, kappa: f64) -> Result<EfaSolution> {
    let q = sol.n_factors();
    if q < 2 {
        return Ok(EfaSolution {
            rotation: Rotation::Promax,
            ..sol.clone()
        });
    }
    let (x, _) = varimax(&sol.loadings);
    let target = x.map(|v| v * v.abs().powf(kappa - 1.0));
    let xtx = x.transpose() * &x;
    let xtx_inv = sym_inverse_checked(&xtx, 1e-12, "varimax cross-product")?;
    let mut u = xtx_inv * x.transpose() * target;
    let utu_inv = sym_inverse_checked(&(u.transpose() * &u), 1e-12, "promax transformation")?;
    for j in 0..q {
        let s = utu_inv[(j, j)].sqrt();
        u.column_mut(j).scale_mut(s);
    }
    let mut loadings = &x * &u;
    let mut phi = sym_inverse_checked(&(u.transpose() * &u), 1e-12, "promax transformation")?;
    for a in 0..q {
        for b in 0..a {
            let v = 0.5 * (phi[(a, b)] + phi[(b, a)]);
            phi[(a, b)] = v;
            phi[(b, a)] = v;
        }
        phi[(a, a)] = 1.0;
    }
    orient_columns(&mut loadings, &mut phi);
    Ok(EfaSolution {
        loadings,
        factor_correlations: phi,
        rotation: Rotation::Promax,
        ..sol.clone()
    })
}

/// Thresholds for one reduction round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionPolicy {
    pub min_loading: f64,
    /// Stricter minimum applied while a factor retains more than
    /// `large_factor_size` items.
    pub min_loading_large_factor: Option<f64>,
    pub large_factor_size: usize,
    pub max_crossloading: f64,
    pub enforce_theorized_factor: bool,
    #[serde(default)]
    pub similar_item_pairs: Vec<(String, String)>,
    pub promax_power: f64,
}

impl ReductionPolicy {
    pub fn round1() -> Self {
        ReductionPolicy {
            min_loading: 0.5,
            min_loading_large_factor: None,
            large_factor_size: 3,
            max_crossloading: 0.35,
            enforce_theorized_factor: true,
            similar_item_pairs: vec![],
            promax_power: 4.0,
        }
    }

    pub fn round2() -> Self {
        ReductionPolicy {
            min_loading_large_factor: Some(0.7),
            max_crossloading: 0.3,
            ..Self::round1()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut ts = vec![self.min_loading, self.max_crossloading];
        ts.extend(self.min_loading_large_factor);
        if ts.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(Error::Config("reduction thresholds must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RemovalReason {
    WrongFactor,
    CrossLoading,
    LowLoading,
    SimilarItem,
}

impl RemovalReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RemovalReason::WrongFactor => "wrong factor",
            RemovalReason::CrossLoading => "cross-loading",
            RemovalReason::LowLoading => "low loading",
            RemovalReason::SimilarItem => "similar item",
        }
    }
}

impl std::fmt::Display for RemovalReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub iteration: usize,
    pub item: String,
    pub factor: String,
    pub reason: RemovalReason,
    pub primary_loading: f64,
    pub max_crossloading: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionOutcome {
    pub kept: Vec<String>,
    pub removals: Vec<Removal>,
    /// Rotated solution on the kept items.
    pub final_solution: EfaSolution,
    /// Column of the rotated solution matched to each theorized factor.
    pub factor_columns: Vec<usize>,
}

/// `iteration<TAB>item<TAB>reason<TAB>primary<TAB>max cross`, one line per removal.
pub fn format_removal_log(removals: &[Removal]) -> String {
    removals
        .iter()
        .map(|r| {
            format!(
                "{}\t{}\t{}\t{:.6}\t{:.6}\n",
                r.iteration, r.item, r.reason, r.primary_loading, r.max_crossloading
            )
        })
        .collect()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for k in 0..used.len() {
            if !used[k] {
                used[k] = true;
                prefix.push(k);
                rec(prefix, used, out);
                prefix.pop();
                used[k] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Assigns rotated columns to theorized factors, maximising the summed
/// absolute loading of each item on its theorized factor's column.
pub fn match_factors(loadings: &DMatrix<f64>, theorized: &[usize]) -> Vec<usize> {
    let q = loadings.ncols();
    let mut best = (f64::NEG_INFINITY, (0..q).collect::<Vec<_>>());
    for perm in permutations(q) {
        let score: f64 = theorized
            .iter()
            .enumerate()
            .map(|(i, &f)| loadings[(i, perm[f])].abs())
            .sum();
        if score > best.0 + 1e-12 {
            best = (score, perm);
        }
    }
    best.1
}

struct Candidate {
    reason: RemovalReason,
    primary: f64,
    cross: f64,
    item: usize,
}

/// Repeats EFA → promax → remove the single worst violating item until no
/// item violates `policy`.
pub fn reduce_item_pool(
    m: &ResponseMatrix,
    def: &ScaleDefinition,
    policy: &ReductionPolicy,
) -> Result<ReductionOutcome> {
    policy.validate()?;
    let q = def.factors.len();
    let mut kept: Vec<String> = def
        .items()
        .into_iter()
        .filter(|it| m.column_of(it).is_some())
        .collect();
    if kept.len() != def.n_items() {
        return Err(Error::HeaderMismatch("response matrix lacks scale items".into()));
    }
    let mut removals = Vec::new();
    loop {
        let sub = m.select(&kept)?;
        let moments = compute_sample_moments(&sub)?;
        let unrotated = extract_factors(&moments, q)?;
        let sol = rotate_promax(&unrotated, policy.promax_power)?;
        let theorized: Vec<usize> = kept.iter().map(|it| def.factor_of(it).unwrap()).collect();
        let cols = match_factors(&sol.loadings, &theorized);
        let mut loadings = sol.loadings.clone();
        for (f, &c) in cols.iter().enumerate() {
            let own: f64 = theorized
                .iter()
                .enumerate()
                .filter(|(_, &t)| t == f)
                .map(|(i, _)| loadings[(i, c)])
                .sum();
            if own < 0.0 {
                loadings.column_mut(c).neg_mut();
            }
        }
        let mut sizes = vec![0usize; q];
        for &t in &theorized {
            sizes[t] += 1;
        }

        let mut candidates = Vec::new();
        let mut stats = Vec::with_capacity(kept.len());
        for (i, &f) in theorized.iter().enumerate() {
            let own_col = cols[f];
            let primary = loadings[(i, own_col)];
            let cross = (0..q)
                .filter(|&c| c != own_col)
                .map(|c| loadings[(i, c)].abs())
                .fold(0.0, f64::max);
            stats.push((primary, cross));
            let threshold = match policy.min_loading_large_factor {
                Some(t) if sizes[f] > policy.large_factor_size => t,
                _ => policy.min_loading,
            };
            let reason = if policy.enforce_theorized_factor && cross > primary.abs() {
                Some(RemovalReason::WrongFactor)
            } else if cross > policy.max_crossloading {
                Some(RemovalReason::CrossLoading)
            } else if primary < threshold {
                Some(RemovalReason::LowLoading)
            } else {
                None
            };
            if let Some(reason) = reason {
                candidates.push(Candidate {
                    reason,
                    primary,
                    cross,
                    item: i,
                });
            }
        }
        for (a, b) in &policy.similar_item_pairs {
            let (Some(ia), Some(ib)) = (
                kept.iter().position(|x| x == a),
                kept.iter().position(|x| x == b),
            ) else {
                continue;
            };
            let f = theorized[ia];
            if f != theorized[ib] || sizes[f] <= policy.large_factor_size {
                continue;
            }
            let drop = if (stats[ia].0, &kept[ia]) < (stats[ib].0, &kept[ib]) {
                ia
            } else {
                ib
            };
            candidates.push(Candidate {
                reason: RemovalReason::SimilarItem,
                primary: stats[drop].0,
                cross: stats[drop].1,
                item: drop,
            });
        }

        let worst = candidates.into_iter().min_by(|x, y| {
            x.reason
                .cmp(&y.reason)
                .then(x.primary.total_cmp(&y.primary))
                .then(kept[x.item].cmp(&kept[y.item]))
        });
        let Some(worst) = worst else {
            return Ok(ReductionOutcome {
                kept,
                removals,
                final_solution: EfaSolution { loadings, ..sol },
                factor_columns: cols,
            });
        };
        let f = theorized[worst.item];
        if sizes[f] <= 2 {
            return Err(Error::ReductionAborted(format!(
                "removing {} ({}) would leave factor {} with fewer than 2 items",
                kept[worst.item], worst.reason, def.factors[f].name
            )));
        }
        let item = kept.remove(worst.item);
        log::info!("removing {item}: {}", worst.reason);
        removals.push(Removal {
            iteration: removals.len() + 1,
            item,
            factor: def.factors[f].name.clone(),
            reason: worst.reason,
            primary_loading: worst.primary,
            max_crossloading: worst.cross,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|i| format!("x{i}")).collect()
    }

    fn population_corr(lambda: &DMatrix<f64>, phi: &DMatrix<f64>) -> DMatrix<f64> {
        let mut r = lambda * phi * lambda.transpose();
        for i in 0..r.nrows() {
            r[(i, i)] = 1.0;
        }
        r
    }

    #[test]
    fn identity_has_no_common_variance() {
        let sol = extract_factors_from_corr(&DMatrix::identity(4, 4), &names(4), 1).unwrap();
        assert!(sol.loadings.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn one_factor_population_is_recovered() {
        let lambda = DMatrix::from_element(5, 1, 0.8);
        let r = population_corr(&lambda, &DMatrix::identity(1, 1));
        let sol = extract_factors_from_corr(&r, &names(5), 1).unwrap();
        for v in sol.loadings.iter() {
            assert!((v - 0.8).abs() < 0.01);
        }
        assert_relative_eq!(sol.loadings.column(0).norm_squared(), sol.eigenvalues[0], epsilon = 1e-10);
    }

    #[test]
    fn rotation_preserves_communalities() {
        let lambda = DMatrix::from_row_slice(6, 2, &[0.8, 0.1, 0.7, 0.2, 0.6, 0.0, 0.1, 0.7, 0.0, 0.8, 0.2, 0.6]);
        let phi = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let sol = extract_factors_from_corr(&population_corr(&lambda, &phi), &names(6), 2).unwrap();
        for rot in [rotate_varimax(&sol), rotate_promax(&sol, 4.0).unwrap()] {
            let h = &rot.loadings * &rot.factor_correlations * rot.loadings.transpose();
            for i in 0..6 {
                assert_relative_eq!(h[(i, i)], sol.communalities[i], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn promax_power_one_is_varimax() {
        let lambda = DMatrix::from_row_slice(6, 2, &[0.8, 0.1, 0.7, 0.2, 0.6, 0.0, 0.1, 0.7, 0.0, 0.8, 0.2, 0.6]);
        let sol = extract_factors_from_corr(
            &population_corr(&lambda, &DMatrix::identity(2, 2)),
            &names(6),
            2,
        )
        .unwrap();
        let v = rotate_varimax(&sol);
        let p = rotate_promax(&sol, 1.0).unwrap();
        for (a, b) in v.loadings.iter().zip(p.loadings.iter()) {
            assert_relative_eq!(a.abs(), b.abs(), epsilon = 1e-8);
        }
    }

    #[test]
    fn perfect_clusters_are_recovered() {
        let mut lambda = DMatrix::zeros(9, 3);
        for i in 0..9 {
            lambda[(i, i / 3)] = 0.6 + 0.05 * (i % 3) as f64;
        }
        let sol = extract_factors_from_corr(
            &population_corr(&lambda, &DMatrix::identity(3, 3)),
            &names(9),
            3,
        )
        .unwrap();
        let rot = rotate_promax(&sol, 4.0).unwrap();
        let theorized: Vec<usize> = (0..9).map(|i| i / 3).collect();
        let cols = match_factors(&rot.loadings, &theorized);
        for i in 0..9 {
            for f in 0..3 {
                let v = rot.loadings[(i, cols[f])];
                let expect = lambda[(i, f)];
                assert!((v - expect).abs() < 0.05, "item {i} factor {f}: {v} vs {expect}");
            }
        }
    }

    #[test]
    fn single_factor_rotation_is_identity() {
        let lambda = DMatrix::from_element(4, 1, 0.7);
        let sol = extract_factors_from_corr(
            &population_corr(&lambda, &DMatrix::identity(1, 1)),
            &names(4),
            1,
        )
        .unwrap();
        assert_eq!(rotate_promax(&sol, 4.0).unwrap().loadings, sol.loadings);
    }

    #[test]
    fn priority_order() {
        assert!(RemovalReason::WrongFactor < RemovalReason::CrossLoading);
        assert!(RemovalReason::CrossLoading < RemovalReason::LowLoading);
        assert!(RemovalReason::LowLoading < RemovalReason::SimilarItem);
        assert_eq!(permutations(4).len(), 24);
    }
}
