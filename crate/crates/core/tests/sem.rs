mod common;

use std::collections::BTreeSet;

use common::{mcms_spec, perturbed_theta, published_moments};
use mcms_core::ingest::SampleMoments;
use mcms_core::invariance::{
    constrain_metric, constrain_scalar, fit_configural, GroupMoments, InvarianceOptions,
};
use mcms_core::sem::{
    fit_layout, fit_model, objective_gradient, ChisqMultiplier, FactorModelSpec, FitOptions, Param,
    ParameterLayout,
};
use mcms_core::simulate::{plant_noninvariance, simulate_responses, GeneratorConfig, ParameterEdit};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn central_difference(layout: &ParameterLayout, m: &[&SampleMoments], theta: &[f64]) -> Vec<f64> {
    let f = |t: &[f64]| {
        objective_gradient(layout, m, ChisqMultiplier::NMinusOne, t)
            .unwrap()
            .expect("feasible")
            .0
    };
    (0..theta.len())
        .map(|k| {
            let h = 1e-6 * theta[k].abs().max(1.0);
            let mut up = theta.to_vec();
            let mut dn = theta.to_vec();
            up[k] += h;
            dn[k] -= h;
            (f(&up) - f(&dn)) / (2.0 * h)
        })
        .collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

#[test]
fn multigroup_gradient_matches_finite_differences() {
    let spec = mcms_spec();
    let m1 = published_moments(800, 1);
    let m2 = published_moments(600, 2);
    let tied: BTreeSet<String> = spec
        .free_slots()
        .into_iter()
        .filter(|s| matches!(s, mcms_core::sem::Slot::Loading(..)))
        .map(|s| spec.slot_label(s))
        .collect();
    let layout = ParameterLayout::multigroup(vec![("A".into(), spec.clone()), ("B".into(), spec.clone())], &tied);
    let moments = [&m1, &m2];
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut checked = 0;
    while checked < 20 {
        let (a, b) = (perturbed_theta(&mut rng), perturbed_theta(&mut rng));
        let mut theta = vec![0.0; layout.n_free()];
        for (g, src) in [a, b].iter().enumerate() {
            for (local, &k) in layout.groups[g].global.iter().enumerate() {
                theta[k] = src[local];
            }
        }
        let Some((_, grad)) = objective_gradient(&layout, &moments, ChisqMultiplier::NMinusOne, &theta).unwrap()
        else {
            continue;
        };
        let fd = central_difference(&layout, &moments, &theta);
        let diff: Vec<f64> = grad.iter().zip(&fd).map(|(a, b)| a - b).collect();
        assert!(max_abs(&diff) <= 1e-6 * max_abs(&grad), "{} vs {}", max_abs(&diff), max_abs(&grad));
        checked += 1;
    }
}

#[test]
fn objective_never_increases() {
    let fit = fit_model(&mcms_spec(), &published_moments(1500, 3), &FitOptions::default()).unwrap();
    assert!(fit.converged);
    assert!(fit.fmin <= fit.f_start);
    assert!(fit.objective_trace.windows(2).all(|w| w[1] <= w[0]));
    let ix = &fit.indices;
    assert!((0.0..=1.0).contains(&ix.cfi));
    assert!(ix.srmr >= 0.0);
    assert!(fit.scaled.unwrap().scale > 0.0);
}

#[test]
fn saturated_model_reproduces_sample_exactly() {
    let items: Vec<String> = ["x1", "x2", "x3"].map(String::from).to_vec();
    let spec = FactorModelSpec {
        items: items.clone(),
        factors: vec!["F".into()],
        loadings: vec![vec![Param::Fixed(1.0)], vec![Param::Free], vec![Param::Free]],
        factor_cov: vec![vec![Param::Free]],
        residuals: vec![Param::Free; 3],
        mean_structure: true,
        intercepts: vec![Param::Free; 3],
        factor_means: vec![Param::Fixed(0.0)],
    };
    let cov = DMatrix::from_row_slice(3, 3, &[1.3, 0.5, 0.4, 0.5, 1.1, 0.35, 0.4, 0.35, 0.9]);
    let mean = DVector::from_vec(vec![3.0, 4.0, 2.5]);
    let moments = SampleMoments::from_cov(items, 250, mean, cov.clone()).unwrap();
    let fit = fit_model(&spec, &moments, &FitOptions::default()).unwrap();
    assert_eq!(fit.df, 0);
    assert!(fit.fmin < 1e-10, "{}", fit.fmin);
    let sigma = &fit.groups[0].sigma_hat;
    assert!((sigma - &cov).abs().max() < 1e-5);
}

#[test]
fn item_order_does_not_matter() {
    let spec = mcms_spec();
    let moments = published_moments(1200, 4);
    let perm: Vec<usize> = (0..spec.p()).rev().collect();
    let permuted = spec.permute_items(&perm);
    let pm = moments.select(&permuted.items).unwrap();
    let opts = FitOptions {
        robust: false,
        ..FitOptions::default()
    };
    let a = fit_model(&spec, &moments, &opts).unwrap();
    let b = fit_model(&permuted, &pm, &opts).unwrap();
    assert!((a.fmin - b.fmin).abs() < 1e-8);
    for (label, v) in a.theta_hat.labels.iter().zip(&a.theta_hat.values) {
        let w = b.theta_hat.get(label).unwrap();
        assert!((v - w).abs() < 1e-4, "{label}: {v} vs {w}");
    }
}

fn three_groups(shift: f64, seed: u64) -> Vec<GroupMoments> {
    let base = GeneratorConfig::mcms_published(&[("A", 1500), ("B", 1500), ("C", 1500)], seed);
    let cfg = plant_noninvariance(&base, &[ParameterEdit::new("B", "tau[Am3]", shift)]).unwrap();
    let data = simulate_responses(&cfg).unwrap();
    data.groups
        .iter()
        .map(|(label, g)| GroupMoments {
            label: label.clone(),
            moments: mcms_core::ingest::compute_sample_moments(&g.matrix).unwrap(),
        })
        .collect()
}

#[test]
fn invariance_ladder_is_nested_and_order_free() {
    let groups = three_groups(0.5, 21);
    let opts = InvarianceOptions::default();
    let conf = fit_configural(&mcms_spec(), &groups, &opts).unwrap();
    let metric = constrain_metric(&conf, &groups, &opts).unwrap();
    let scalar = constrain_scalar(&metric, &groups, &BTreeSet::new(), &opts).unwrap();
    let freed: BTreeSet<String> = ["Am3".to_string()].into();
    let partial = constrain_scalar(&metric, &groups, &freed, &opts).unwrap();

    let (tc, tm, ts, tp) = (conf.fit.chisq, metric.fit.chisq, scalar.fit.chisq, partial.fit.chisq);
    assert!(tc <= tm + 1e-6 * tm && tm <= ts + 1e-6 * ts, "{tc} {tm} {ts}");
    assert!(tp <= ts + 1e-6 * ts && tm <= tp + 1e-6 * tp);
    let g = 3;
    assert_eq!(metric.fit.df - conf.fit.df, 12 * (g - 1));
    assert_eq!(scalar.fit.df - metric.fit.df, 12 * (g - 1));
    assert_eq!(scalar.fit.df - partial.fit.df, (g - 1));

    // tied loadings agree across groups after the fit
    let spec = mcms_spec();
    for slot in spec.free_slots() {
        if let mcms_core::sem::Slot::Loading(i, j) = slot {
            let vals: Vec<f64> = (0..3).map(|k| scalar.fit.matrices(k).lambda[(i, j)]).collect();
            assert!(vals.iter().all(|v| (v - vals[0]).abs() < 1e-8));
        }
    }

    let mut reversed = groups.clone();
    reversed.reverse();
    let opts_r = InvarianceOptions {
        reference_group: Some("A".into()),
        ..InvarianceOptions::default()
    };
    let conf_r = fit_configural(&mcms_spec(), &reversed, &opts_r).unwrap();
    let metric_r = constrain_metric(&conf_r, &reversed, &opts_r).unwrap();
    let scalar_r = constrain_scalar(&metric_r, &reversed, &BTreeSet::new(), &opts_r).unwrap();
    for (x, y) in [(&conf, &conf_r), (&metric, &metric_r), (&scalar, &scalar_r)] {
        assert!((x.fit.chisq - y.fit.chisq).abs() < 1e-6 * x.fit.chisq.max(1.0));
        assert!((x.fit.indices.cfi - y.fit.indices.cfi).abs() < 1e-8);
        assert_eq!(x.fit.df, y.fit.df);
    }
}

#[test]
fn layout_fit_matches_single_group_fit() {
    let spec = mcms_spec();
    let m = published_moments(900, 8);
    let a = fit_model(&spec, &m, &FitOptions::default()).unwrap();
    let b = fit_layout(&ParameterLayout::single(spec), &[&m], &FitOptions::default()).unwrap();
    assert_eq!(a.theta_hat.values, b.theta_hat.values);
}
