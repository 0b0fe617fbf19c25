mod common;

use std::collections::BTreeMap;

use mcms_core::descriptives::{composite_correlations, cronbach_alpha};
use mcms_core::ingest::{apply_spam_filter, compute_sample_moments, SpamRules};
use mcms_core::invariance::{decide, DecisionMode, CFI_CUTOFF};
use mcms_core::scale::{
    builtin_mcms, validate_scale, AttentionAnswer, FactorDef, ResponseMatrix, ResponseRecord, ScaleDefinition,
};
use mcms_core::sem::indices::{cfi, rmsea, tli};
use mcms_core::sem::noncentral::noncentral_chisq_cdf;
use mcms_core::simulate::{simulate_responses, GenerationMode, GeneratorConfig, LatentDistribution};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

fn scale_strategy() -> impl Strategy<Value = ScaleDefinition> {
    (prop::collection::vec(2usize..5, 1..5), 1i64..3, 4i64..10).prop_map(|(sizes, lo, hi)| {
        let factors = sizes
            .iter()
            .enumerate()
            .map(|(f, &k)| {
                let items: Vec<String> = (0..k).map(|i| format!("F{f}i{i}")).collect();
                let refs: Vec<&str> = items.iter().map(String::as_str).collect();
                FactorDef::new(format!("Factor {f}"), &refs)
            })
            .collect();
        ScaleDefinition {
            name: "Generated".into(),
            stem: "How much do you agree?".into(),
            response_min: lo,
            response_max: hi,
            factors,
        }
    })
}

fn data_matrix(n: usize, p: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(1i64..8, n * p).prop_map(move |v| {
        DMatrix::from_iterator(n, p, v.into_iter().map(|x| x as f64))
    })
}

fn record(id: usize, answers: &[i64], tests: [i64; 3], attention: usize) -> ResponseRecord {
    let def = builtin_mcms();
    ResponseRecord {
        respondent_id: format!("r{id}"),
        group: if id % 2 == 0 { "A" } else { "B" }.into(),
        item_answers: def.items().into_iter().zip(answers.iter().copied()).collect(),
        test_item_answers: ["Test1", "Test2", "Test3"]
            .iter()
            .map(|s| s.to_string())
            .zip(tests)
            .collect::<BTreeMap<_, _>>(),
        attention_answer: AttentionAnswer::OPTIONS[attention],
    }
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 64,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn scale_files_round_trip(def in scale_strategy()) {
        prop_assert!(validate_scale(&def).is_empty());
        let text = def.to_toml().unwrap();
        prop_assert_eq!(ScaleDefinition::from_toml(&text).unwrap(), def);
    }

    #[test]
    fn spam_decisions_are_deterministic_and_counted(
        rows in prop::collection::vec(
            (prop::collection::vec(1i64..8, 18), [1i64..8, 1i64..8, 1i64..8], 0usize..3),
            1..40,
        )
    ) {
        let rules = SpamRules::default_three();
        let records: Vec<ResponseRecord> = rows
            .iter()
            .enumerate()
            .map(|(i, (a, t, att))| record(i, a, *t, *att))
            .collect();
        for r in &records {
            prop_assert_eq!(rules.check(r), rules.check(r));
        }
        let out = apply_spam_filter(records.clone(), &rules).unwrap();
        let again = apply_spam_filter(records.clone(), &rules).unwrap();
        prop_assert_eq!(&out.summary, &again.summary);
        prop_assert_eq!(out.clean.len() + out.rejected.len(), records.len());
        let passes = rows.iter().filter(|(_, t, att)| *t == [2, 6, 4] && AttentionAnswer::OPTIONS[*att] == AttentionAnswer::Yes).count();
        prop_assert_eq!(out.clean.len(), passes);
    }

    #[test]
    fn ml_and_unbiased_covariances_agree(x in (3usize..25, 2usize..5).prop_flat_map(|(n, p)| data_matrix(n, p))) {
        let items = (0..x.ncols()).map(|i| format!("x{i}")).collect();
        let m = ResponseMatrix::new(items, x.clone(), "G").unwrap();
        let s = compute_sample_moments(&m).unwrap();
        let n = s.n as f64;
        let scaled = &s.cov_ml * (n / (n - 1.0));
        for (a, b) in scaled.iter().zip(s.cov.iter()) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn alpha_is_shift_invariant_and_bounded(
        x in data_matrix(30, 3),
        shift in -3.0f64..3.0,
        col in 0usize..3,
    ) {
        let items: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
        let f = FactorDef::new("F", &["a", "b", "c"]);
        let m = ResponseMatrix::new(items.clone(), x.clone(), "G").unwrap();
        let Ok(a) = cronbach_alpha(&m, &f) else { return Ok(()); };
        let mut y = x.clone();
        y.column_mut(col).add_scalar_mut(shift);
        let b = cronbach_alpha(&ResponseMatrix::new(items, y, "G").unwrap(), &f).unwrap();
        prop_assert!(a.alpha <= 1.0 + 1e-12);
        prop_assert!((a.alpha - b.alpha).abs() < 1e-9);
        prop_assert!(a.ci_low <= a.alpha && a.alpha <= a.ci_high);
    }

    #[test]
    fn composite_correlations_are_psd(x in data_matrix(25, 18)) {
        let def = builtin_mcms();
        let m = ResponseMatrix::new(def.items(), x, "G").unwrap();
        let c = composite_correlations(&m, &def).unwrap();
        let q = c.factors.len();
        if c.r.iter().flatten().all(Option::is_some) {
            let r = DMatrix::from_fn(q, q, |a, b| c.r[a][b].unwrap());
            let ev = SymmetricEigen::new(r).eigenvalues;
            prop_assert!(ev.min() > -1e-10);
        }
    }

    #[test]
    fn likert_generation_stays_in_range(seed in any::<u64>(), df in 3.0f64..30.0) {
        let mut cfg = GeneratorConfig::mcms_published(&[("A", 40), ("B", 25)], seed);
        cfg.mode = GenerationMode::Likert;
        cfg.latent_distribution = LatentDistribution::ScaledT { df };
        cfg.spam_fraction = 0.3;
        let a = simulate_responses(&cfg).unwrap();
        prop_assert_eq!(&a, &simulate_responses(&cfg).unwrap());
        for g in a.groups.values() {
            prop_assert!(g.matrix.rows.iter().all(|v| (1.0..=7.0).contains(v) && v.fract() == 0.0));
        }
    }

    #[test]
    fn fit_indices_stay_in_range(
        t in 0.0f64..5000.0,
        df in 1i64..300,
        extra in 1.0f64..20000.0,
        n in 50.0f64..20000.0,
    ) {
        let tb = t + extra;
        let dfb = df + 10;
        let c = cfi(t, df, tb, dfb);
        prop_assert!((0.0..=1.0).contains(&c));
        prop_assert!(tli(t, df, tb, dfb) <= 1.0 + (dfb as f64 / df as f64));
        prop_assert!(rmsea(t, df, n, 1) >= 0.0);
    }

    #[test]
    fn noncentral_cdf_is_monotone(x in 0.0f64..200.0, dx in 0.0f64..50.0, df in 1.0f64..150.0, ncp in 0.0f64..100.0) {
        let a = noncentral_chisq_cdf(x, df, ncp);
        let b = noncentral_chisq_cdf(x + dx, df, ncp);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b >= a - 1e-12);
        prop_assert!(noncentral_chisq_cdf(x, df, ncp + 1.0) <= a + 1e-12);
    }

    #[test]
    fn decisions_follow_the_cutoffs(drop in -0.05f64..0.05, rise in -0.05f64..0.05) {
        let cfi_only = decide(drop, rise, DecisionMode::CfiOnly);
        prop_assert_eq!(cfi_only.invariant, drop <= CFI_CUTOFF + 1e-12);
        let conj = decide(drop, rise, DecisionMode::Conjunctive);
        prop_assert!(conj.invariant || !cfi_only.invariant);
    }
}

#[test]
fn builtin_scale_is_valid() {
    assert!(validate_scale(&builtin_mcms()).is_empty());
}

#[test]
fn continuous_means_converge_to_intercepts() {
    let n = 2000;
    let mut good = 0;
    for seed in 0..100 {
        let cfg = GeneratorConfig::mcms_published(&[("G", n)], seed);
        let data = simulate_responses(&cfg).unwrap();
        let s = compute_sample_moments(&data.groups["G"].matrix).unwrap();
        let m = cfg.groups[0].matrices();
        let sigma = m.sigma();
        let ok = (0..s.p()).all(|i| (s.mean[i] - m.tau[i]).abs() < 4.0 * (sigma[(i, i)] / n as f64).sqrt());
        good += ok as usize;
    }
    assert!(good >= 99, "{good}/100");
}
