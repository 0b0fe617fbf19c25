//! Noncentral chi-squared CDF and the RMSEA confidence-interval inversion.

use statrs::function::gamma::{gamma_lr, ln_gamma};

const TERM_TOL: f64 = 1e-14;

/// P(X ≤ x) for X ~ χ²(df, ncp), as a Poisson(ncp/2) mixture of central
/// χ²(df + 2j) CDFs. Terms are accumulated outward from the Poisson mode
/// until the remaining weight falls below 1e-14.
pub fn noncentral_chisq_cdf(x: f64, df: f64, ncp: f64) -> f64 {
    assert!(df > 0.0, "degrees of freedom must be positive");
    assert!(ncp >= 0.0, "noncentrality must be nonnegative");
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    let hx = 0.5 * x;
    let a0 = 0.5 * df;
    if ncp == 0.0 {
        return gamma_lr(a0, hx);
    }
    let lam = 0.5 * ncp;
    let ln_lam = lam.ln();
    let ln_hx = hx.ln();
    let ln_pois = |j: f64| -lam + j * ln_lam - ln_gamma(j + 1.0);

    let mode = lam.floor();
    let p_mode = gamma_lr(a0 + mode, hx);

    // Upward: P(a+1) = P(a) − x^a e^{−x} / Γ(a+1)
    let mut total = 0.0;
    let mut j = mode;
    let mut p = p_mode;
    loop {
        let w = ln_pois(j).exp();
        total += w * p;
        if (w < TERM_TOL && j > lam) || j - mode > 1e7 {
            break;
        }
        let a = a0 + j;
        p -= (a * ln_hx - hx - ln_gamma(a + 1.0)).exp();
        p = p.clamp(0.0, 1.0);
        j += 1.0;
    }
    // Downward: P(a−1) = P(a) + x^{a−1} e^{−x} / Γ(a)
    let mut j = mode;
    let mut p = p_mode;
    while j >= 1.0 {
        let a = a0 + j;
        p += ((a - 1.0) * ln_hx - hx - ln_gamma(a)).exp();
        p = p.clamp(0.0, 1.0);
        j -= 1.0;
        let w = ln_pois(j).exp();
        total += w * p;
        if w < TERM_TOL {
            break;
        }
    }
    total.clamp(0.0, 1.0)
}

/// Noncentrality λ with CDF(t; df, λ) = target, found by bisection on a
/// bracket that is widened until it contains the root. Returns 0 when even
/// λ = 0 gives CDF ≤ target.
pub fn solve_ncp(t: f64, df: f64, target: f64, tol: f64) -> f64 {
    if noncentral_chisq_cdf(t, df, 0.0) <= target {
        return 0.0;
    }
    let mut lo = 0.0;
    let mut hi = (t - df).max(1.0) + 10.0 * (2.0 * (df + 2.0 * t)).sqrt().max(1.0);
    while noncentral_chisq_cdf(t, df, hi) > target {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if noncentral_chisq_cdf(t, df, mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn exponential_special_case() {
        assert_relative_eq!(noncentral_chisq_cdf(2.0, 2.0, 0.0), 1.0 - (-1f64).exp(), epsilon = 1e-14);
    }

    #[test]
    fn limits() {
        assert_eq!(noncentral_chisq_cdf(0.0, 3.0, 2.0), 0.0);
        assert_eq!(noncentral_chisq_cdf(f64::INFINITY, 3.0, 2.0), 1.0);
        assert!(noncentral_chisq_cdf(1e6, 3.0, 50.0) > 1.0 - 1e-12);
    }

    #[test]
    fn zero_ncp_matches_central() {
        for &df in &[1.0, 2.0, 5.5, 120.0] {
            let chi = ChiSquared::new(df).unwrap();
            for k in 1..40 {
                let x = k as f64 * df / 10.0;
                assert!((noncentral_chisq_cdf(x, df, 0.0) - chi.cdf(x)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn small_ncp_is_continuous_with_central() {
        let a = noncentral_chisq_cdf(130.0, 120.0, 1e-9);
        let b = noncentral_chisq_cdf(130.0, 120.0, 0.0);
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn closed_form_df1() {
        // χ²(1, λ) = (Z + √λ)²  ⇒  CDF(x) = Φ(√x − √λ) − Φ(−√x − √λ)
        use statrs::distribution::Normal;
        let n = Normal::new(0.0, 1.0).unwrap();
        for &(x, lam) in &[(1.0, 0.5), (4.0, 3.0), (10.0, 9.0), (30.0, 25.0)] {
            let expect = n.cdf(f64::sqrt(x) - f64::sqrt(lam)) - n.cdf(-f64::sqrt(x) - f64::sqrt(lam));
            assert_relative_eq!(noncentral_chisq_cdf(x, 1.0, lam), expect, epsilon = 1e-10);
        }
    }

    #[test]
    fn monotone_in_x_and_ncp() {
        let mut prev = 0.0;
        for k in 1..200 {
            let v = noncentral_chisq_cdf(k as f64 * 20.0, 120.0, 1470.0);
            assert!(v >= prev);
            prev = v;
        }
        assert!(noncentral_chisq_cdf(1590.0, 120.0, 1400.0) > noncentral_chisq_cdf(1590.0, 120.0, 1500.0));
    }

    #[test]
    fn solve_inverts_cdf() {
        let ncp = solve_ncp(1590.49, 120.0, 0.95, 1e-8);
        assert!((noncentral_chisq_cdf(1590.49, 120.0, ncp) - 0.95).abs() < 1e-8);
        assert_eq!(solve_ncp(100.0, 120.0, 0.95, 1e-8), 0.0);
    }
}
