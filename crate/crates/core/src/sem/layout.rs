use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::spec::{FactorModelSpec, ModelMatrices, Slot};
use crate::error::{Error, Result};
use crate::ingest::SampleMoments;

/// Lower bound applied to variance parameters.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// One group's model and the mapping of its free slots onto the global vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupBlock {
    pub label: String,
    pub spec: FactorModelSpec,
    pub slots: Vec<Slot>,
    /// Global parameter index for each entry of `slots`.
    pub global: Vec<usize>,
}

/// The free-parameter vector of a (possibly multigroup) model with a
/// bijection between global indices and the group slots they fill. A global
/// parameter shared by several groups is an equality constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterLayout {
    pub groups: Vec<GroupBlock>,
    pub labels: Vec<String>,
    pub lower: Vec<f64>,
}

/// Estimated parameter values with their labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub labels: Vec<String>,
    pub values: Vec<f64>,
}

impl ParameterVector {
    pub fn get(&self, label: &str) -> Option<f64> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|k| self.values[k])
    }
}

impl ParameterLayout {
    /// Single-group layout; labels are the plain slot labels.
    pub fn single(spec: FactorModelSpec) -> Self {
        Self::multigroup(vec![(String::new(), spec)], &BTreeSet::new())
    }

    /// Groups with parameters named in `tied` (slot labels) shared across all
    /// groups. Untied parameters are labelled `group:slot`.
    pub fn multigroup(groups: Vec<(String, FactorModelSpec)>, tied: &BTreeSet<String>) -> Self {
        let single = groups.len() == 1;
        let mut labels = Vec::new();
        let mut lower = Vec::new();
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        let mut blocks = Vec::with_capacity(groups.len());
        for (label, spec) in groups {
            let slots = spec.free_slots();
            let mut global = Vec::with_capacity(slots.len());
            for &slot in &slots {
                let slot_label = spec.slot_label(slot);
                let key = if single || tied.contains(&slot_label) {
                    slot_label
                } else {
                    format!("{label}:{slot_label}")
                };
                let k = *index.entry(key.clone()).or_insert_with(|| {
                    labels.push(key);
                    lower.push(if slot.is_variance() {
                        VARIANCE_FLOOR
                    } else {
                        f64::NEG_INFINITY
                    });
                    labels.len() - 1
                });
                global.push(k);
            }
            blocks.push(GroupBlock {
                label,
                spec,
                slots,
                global,
            });
        }
        ParameterLayout {
            groups: blocks,
            labels,
            lower,
        }
    }

    pub fn n_free(&self) -> usize {
        self.labels.len()
    }

    pub fn n_moments(&self) -> usize {
        self.groups.iter().map(|g| g.spec.n_moments()).sum()
    }

    pub fn df(&self) -> i64 {
        self.n_moments() as i64 - self.n_free() as i64
    }

    pub fn index_of(&self, group: usize, slot: Slot) -> Option<usize> {
        let g = &self.groups[group];
        g.slots.iter().position(|&s| s == slot).map(|k| g.global[k])
    }

    /// All (group, slot) pairs a global parameter fills.
    pub fn slots_of(&self, global: usize) -> Vec<(usize, Slot)> {
        self.groups
            .iter()
            .enumerate()
            .flat_map(|(g, b)| {
                b.slots
                    .iter()
                    .zip(&b.global)
                    .filter(move |(_, &k)| k == global)
                    .map(move |(&s, _)| (g, s))
            })
            .collect()
    }

    pub fn local_values(&self, group: usize, theta: &[f64]) -> Vec<f64> {
        self.groups[group].global.iter().map(|&k| theta[k]).collect()
    }

    pub fn matrices(&self, group: usize, theta: &[f64]) -> ModelMatrices {
        let b = &self.groups[group];
        b.spec.matrices(&b.slots, &self.local_values(group, theta))
    }

    pub fn project(&self, theta: &mut [f64]) {
        for (t, &lb) in theta.iter_mut().zip(&self.lower) {
            if *t < lb {
                *t = lb;
            }
        }
    }

    /// Default start values: loadings 0.7, factor variances 1, covariances 0,
    /// residuals half the observed variance, intercepts the observed means,
    /// factor means 0. Shared parameters average over their groups.
    pub fn default_start(&self, moments: &[&SampleMoments]) -> Vec<f64> {
        let mut sum = vec![0.0; self.n_free()];
        let mut count = vec![0usize; self.n_free()];
        for (g, b) in self.groups.iter().enumerate() {
            let m = moments[g];
            for (&slot, &k) in b.slots.iter().zip(&b.global) {
                let v = match slot {
                    Slot::Loading(..) => 0.7,
                    Slot::FactorCov(a, c) => {
                        if a == c {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    Slot::Residual(i) => 0.5 * m.cov[(i, i)],
                    Slot::Intercept(i) => m.mean[i],
                    Slot::FactorMean(_) => 0.0,
                };
                sum[k] += v;
                count[k] += 1;
            }
        }
        let mut theta: Vec<f64> = sum
            .iter()
            .zip(&count)
            .map(|(s, &c)| s / c.max(1) as f64)
            .collect();
        self.project(&mut theta);
        theta
    }

    /// Start values carried over from an earlier fit of a related layout,
    /// matching parameters by (group label, slot label). Parameters the
    /// earlier fit did not estimate fall back to [`default_start`](Self::default_start).
    pub fn start_from(
        &self,
        previous: &ParameterLayout,
        previous_theta: &[f64],
        moments: &[&SampleMoments],
    ) -> Vec<f64> {
        let mut lookup: BTreeMap<(String, String), f64> = BTreeMap::new();
        for (g, b) in previous.groups.iter().enumerate() {
            let mats = previous.matrices(g, previous_theta);
            for slot in b.spec.free_slots() {
                lookup.insert((b.label.clone(), b.spec.slot_label(slot)), mats.get(slot));
            }
        }
        let default = self.default_start(moments);
        let mut theta = default.clone();
        for k in 0..self.n_free() {
            let vals: Vec<f64> = self
                .slots_of(k)
                .into_iter()
                .filter_map(|(g, s)| {
                    let b = &self.groups[g];
                    lookup.get(&(b.label.clone(), b.spec.slot_label(s))).copied()
                })
                .collect();
            if !vals.is_empty() {
                theta[k] = vals.iter().sum::<f64>() / vals.len() as f64;
            }
        }
        self.project(&mut theta);
        theta
    }

    pub fn check_moments(&self, moments: &[&SampleMoments]) -> Result<()> {
        if moments.len() != self.groups.len() {
            return Err(Error::InvalidModel(format!(
                "{} groups in the model but {} moment sets",
                self.groups.len(),
                moments.len()
            )));
        }
        for (b, m) in self.groups.iter().zip(moments) {
            if b.spec.items != m.items {
                return Err(Error::HeaderMismatch(format!(
                    "group {}: model items and moment items differ",
                    b.label
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scale::builtin_mcms;
    use crate::sem::spec::{compile_model, ModelOptions};

    #[test]
    fn tied_loadings_share_an_index() {
        let spec = compile_model(&builtin_mcms(), &ModelOptions::with_means()).unwrap();
        let tied: BTreeSet<String> = spec
            .free_slots()
            .into_iter()
            .filter(|s| matches!(s, Slot::Loading(..)))
            .map(|s| spec.slot_label(s))
            .collect();
        let layout = ParameterLayout::multigroup(
            vec![("A".into(), spec.clone()), ("B".into(), spec.clone())],
            &tied,
        );
        assert_eq!(layout.n_free(), 69 * 2 - 12);
        assert_eq!(layout.df(), 120 * 2 + 12);
        let k = layout.index_of(0, Slot::Loading(1, 0)).unwrap();
        assert_eq!(layout.index_of(1, Slot::Loading(1, 0)), Some(k));
        assert_eq!(layout.slots_of(k).len(), 2);
        assert_eq!(layout.labels[k], "lambda[Am2,Amotivation]");
        let r = layout.index_of(1, Slot::Residual(0)).unwrap();
        assert_eq!(layout.labels[r], "B:theta[Am1]");
    }

    #[test]
    fn bijection_onto_free_slots() {
        let spec = compile_model(&builtin_mcms(), &ModelOptions::with_means()).unwrap();
        let layout = ParameterLayout::single(spec);
        for k in 0..layout.n_free() {
            let s = layout.slots_of(k);
            assert_eq!(s.len(), 1);
            assert_eq!(layout.index_of(s[0].0, s[0].1), Some(k));
        }
    }
}
