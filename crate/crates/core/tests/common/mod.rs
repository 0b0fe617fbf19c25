#![allow(dead_code)]

use mcms_core::ingest::{compute_sample_moments, SampleMoments};
use mcms_core::scale::builtin_mcms;
use mcms_core::sem::{compile_model, FactorModelSpec, ModelMatrices, ModelOptions, Slot};
use mcms_core::simulate::{mcms_published_matrices, simulate_responses, GeneratorConfig};
use rand::Rng;

pub fn mcms_spec() -> FactorModelSpec {
    compile_model(&builtin_mcms(), &ModelOptions::with_means()).unwrap()
}

/// Continuous-mode sample from the published parameters, one group.
pub fn published_moments(n: usize, seed: u64) -> SampleMoments {
    let cfg = GeneratorConfig::mcms_published(&[("G", n)], seed);
    let data = simulate_responses(&cfg).unwrap();
    compute_sample_moments(&data.groups["G"].matrix).unwrap()
}

/// Free-parameter values of `spec` read off `m`.
pub fn theta_of(spec: &FactorModelSpec, m: &ModelMatrices) -> Vec<f64> {
    spec.free_slots().into_iter().map(|s| m.get(s)).collect()
}

pub fn published_theta() -> Vec<f64> {
    theta_of(&mcms_spec(), &mcms_published_matrices())
}

/// Random perturbation of the published parameters; may be infeasible.
pub fn perturbed_theta<R: Rng>(rng: &mut R) -> Vec<f64> {
    let spec = mcms_spec();
    let base = mcms_published_matrices();
    spec.free_slots()
        .into_iter()
        .map(|s| {
            let v = base.get(s);
            match s {
                Slot::Loading(..) => v * rng.random_range(0.7..1.3),
                Slot::FactorCov(a, b) if a == b => v * rng.random_range(0.5..2.0),
                Slot::FactorCov(..) => v * rng.random_range(0.3..1.1),
                Slot::Residual(_) => v * rng.random_range(0.5..2.0),
                Slot::Intercept(_) | Slot::FactorMean(_) => v + rng.random_range(-0.5..0.5),
            }
        })
        .collect()
}
