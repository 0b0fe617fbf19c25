use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::noncentral::solve_ncp;
use crate::linalg::vech_pairs;

/// Root-finding tolerance on the noncentrality parameter.
const NCP_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitIndices {
    /// Normal-theory statistic T = multiplier · F_min.
    pub chisq: f64,
    pub df: i64,
    pub pvalue: f64,
    /// Satorra-Bentler scaled statistic T / c.
    pub chisq_sb: f64,
    pub sb_scale: f64,
    /// Whether the indices below use the scaled statistic.
    pub scaled: bool,
    pub cfi: f64,
    pub tli: f64,
    pub rmsea: f64,
    pub rmsea_ci90: (f64, f64),
    pub srmr: f64,
    pub baseline_chisq: f64,
    pub baseline_df: i64,
}

/// Everything the index formulas need, independent of how T was obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexInputs {
    /// Test statistic entering the indices (scaled or not).
    pub t: f64,
    pub df: i64,
    pub t_baseline: f64,
    pub df_baseline: i64,
    /// Σ_g multiplier_g, i.e. N − G under the n − 1 convention.
    pub sample_weight: f64,
    pub n_groups: usize,
}

/// RMSEA = √(G · max(T − df, 0) / (df · Σ multiplier)); 0 for df = 0.
pub fn rmsea(t: f64, df: i64, sample_weight: f64, n_groups: usize) -> f64 {
    if df <= 0 {
        return 0.0;
    }
    (n_groups as f64 * (t - df as f64).max(0.0) / (df as f64 * sample_weight)).sqrt()
}

/// 90% interval: ncp_low solves CDF(T; df, ncp) = 0.95, ncp_high solves CDF = 0.05.
pub fn rmsea_ci90(t: f64, df: i64, sample_weight: f64, n_groups: usize) -> (f64, f64) {
    if df <= 0 {
        return (0.0, 0.0);
    }
    let d = df as f64;
    let to_rmsea = |ncp: f64| (n_groups as f64 * ncp / (d * sample_weight)).sqrt();
    let low = solve_ncp(t, d, 0.95, NCP_TOL);
    let high = solve_ncp(t, d, 0.05, NCP_TOL);
    (to_rmsea(low), to_rmsea(high))
}

pub fn cfi(t: f64, df: i64, t_baseline: f64, df_baseline: i64) -> f64 {
    let num = (t - df as f64).max(0.0);
    let den = (t_baseline - df_baseline as f64).max(t - df as f64).max(0.0);
    if den <= 0.0 {
        return 1.0;
    }
    1.0 - num / den
}

pub fn tli(t: f64, df: i64, t_baseline: f64, df_baseline: i64) -> f64 {
    if df <= 0 || df_baseline <= 0 {
        return 1.0;
    }
    let rb = t_baseline / df_baseline as f64;
    let rm = t / df as f64;
    if (rb - 1.0).abs() < f64::EPSILON {
        return 1.0;
    }
    (rb - rm) / (rb - 1.0)
}

/// √(mean over lower-triangle cells of ((s_ij − σ̂_ij)/√(s_ii s_jj))²).
pub fn srmr(s: &DMatrix<f64>, sigma_hat: &DMatrix<f64>) -> f64 {
    let pairs = vech_pairs(s.nrows());
    let total: f64 = pairs
        .iter()
        .map(|&(i, j)| {
            let r = (s[(i, j)] - sigma_hat[(i, j)]) / (s[(i, i)] * s[(j, j)]).sqrt();
            r * r
        })
        .sum();
    (total / pairs.len() as f64).sqrt()
}

pub fn chisq_pvalue(t: f64, df: i64) -> f64 {
    if df <= 0 {
        return 1.0;
    }
    match ChiSquared::new(df as f64) {
        Ok(c) => c.sf(t.max(0.0)),
        Err(_) => f64::NAN,
    }
}

/// CFI, TLI and RMSEA (with CI) from a statistic; the remaining fields are
/// filled by the caller.
pub fn incremental_and_absolute(inputs: &IndexInputs) -> (f64, f64, f64, (f64, f64)) {
    let IndexInputs {
        t,
        df,
        t_baseline,
        df_baseline,
        sample_weight,
        n_groups,
    } = *inputs;
    if df <= 0 {
        return (1.0, 1.0, 0.0, (0.0, 0.0));
    }
    (
        cfi(t, df, t_baseline, df_baseline),
        tli(t, df, t_baseline, df_baseline),
        rmsea(t, df, sample_weight, n_groups),
        rmsea_ci90(t, df, sample_weight, n_groups),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rmsea_by_hand() {
        let r = rmsea(1590.49, 120, 5856.0, 1);
        assert_relative_eq!(r, (1470.49f64 / (120.0 * 5856.0)).sqrt(), epsilon = 1e-15);
        assert!((r - 0.046).abs() < 0.001);
    }

    #[test]
    fn boundary_t_equals_df() {
        assert_eq!(rmsea(120.0, 120, 1000.0, 1), 0.0);
        assert_eq!(cfi(120.0, 120, 5000.0, 153), 1.0);
    }

    #[test]
    fn cfi_within_unit_interval() {
        assert_eq!(cfi(10_000.0, 120, 5000.0, 153), 0.0);
        let c = cfi(500.0, 120, 5000.0, 153);
        assert!(c > 0.0 && c < 1.0);
    }

    #[test]
    fn srmr_zero_on_exact_fit() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        assert_eq!(srmr(&s, &s), 0.0);
    }

    #[test]
    fn saturated_model_conventions() {
        let (c, t, r, ci) = incremental_and_absolute(&IndexInputs {
            t: 0.0,
            df: 0,
            t_baseline: 100.0,
            df_baseline: 3,
            sample_weight: 99.0,
            n_groups: 1,
        });
        assert_eq!((c, t, r, ci), (1.0, 1.0, 0.0, (0.0, 0.0)));
    }
}
