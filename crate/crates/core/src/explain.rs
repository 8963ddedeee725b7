//! Feature-effect explanations: each feature of an item is positive, negative
//! or ineffective according to the sign and size of its coefficient.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{FeatureUniverse, ItemVector};
use crate::error::{Error, Result};
use crate::prefmodel::PreferenceModel;

pub const DEFAULT_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    Positive,
    Negative,
    Ineffective,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Explanation {
    pub item_id: String,
    pub positive: BTreeSet<usize>,
    pub negative: BTreeSet<usize>,
    pub ineffective: BTreeSet<usize>,
}

impl Explanation {
    pub fn from_effects(item_id: impl Into<String>, effects: impl IntoIterator<Item = (usize, Effect)>) -> Self {
        let mut e = Explanation {
            item_id: item_id.into(),
            positive: BTreeSet::new(),
            negative: BTreeSet::new(),
            ineffective: BTreeSet::new(),
        };
        for (d, eff) in effects {
            match eff {
                Effect::Positive => e.positive.insert(d),
                Effect::Negative => e.negative.insert(d),
                Effect::Ineffective => e.ineffective.insert(d),
            };
        }
        e
    }

    pub fn effect(&self, dim: usize) -> Option<Effect> {
        if self.positive.contains(&dim) {
            Some(Effect::Positive)
        } else if self.negative.contains(&dim) {
            Some(Effect::Negative)
        } else if self.ineffective.contains(&dim) {
            Some(Effect::Ineffective)
        } else {
            None
        }
    }

    pub fn effects(&self) -> BTreeMap<usize, Effect> {
        self.positive
            .iter()
            .map(|&d| (d, Effect::Positive))
            .chain(self.negative.iter().map(|&d| (d, Effect::Negative)))
            .chain(self.ineffective.iter().map(|&d| (d, Effect::Ineffective)))
            .collect()
    }

    pub fn features(&self) -> BTreeSet<usize> {
        self.positive
            .iter()
            .chain(&self.negative)
            .chain(&self.ineffective)
            .copied()
            .collect()
    }

    /// The three sets are pairwise disjoint and cover exactly `item`'s bits.
    pub fn is_partition_of(&self, item: &ItemVector) -> bool {
        let total = self.positive.len() + self.negative.len() + self.ineffective.len();
        let all = self.features();
        total == all.len() && all.len() == item.len() && item.dims().all(|d| all.contains(&d))
    }

    pub fn to_wire(&self, universe: &FeatureUniverse) -> ExplanationWire {
        let names = |s: &BTreeSet<usize>| s.iter().map(|&d| universe.name(d).to_string()).collect();
        ExplanationWire {
            item_id: self.item_id.clone(),
            positive: names(&self.positive),
            negative: names(&self.negative),
            ineffective: names(&self.ineffective),
        }
    }
}

/// Wire form: three arrays of feature ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplanationWire {
    pub item_id: String,
    pub positive: Vec<String>,
    pub negative: Vec<String>,
    pub ineffective: Vec<String>,
}

pub fn explain_item(model: &PreferenceModel, x: &ItemVector, epsilon: f64) -> Result<Explanation> {
    if x.dim != model.dim() {
        return Err(Error::UniverseMismatch {
            expected: model.dim(),
            actual: x.dim,
        });
    }
    let e = Explanation::from_effects(
        x.id.clone(),
        x.dims().map(|d| {
            let c = model.coefficient(d);
            let eff = if model.is_masked(d) || c.abs() < epsilon {
                Effect::Ineffective
            } else if c > 0.0 {
                Effect::Positive
            } else {
                Effect::Negative
            };
            (d, eff)
        }),
    );
    debug_assert!(e.is_partition_of(x));
    Ok(e)
}

/// Fraction of features whose effect class matches the truth.
pub fn explanation_accuracy(predicted: &Explanation, truth: &Explanation) -> Result<f64> {
    let p = predicted.effects();
    let t = truth.effects();
    if p.len() != t.len() || p.keys().ne(t.keys()) {
        return Err(Error::FeatureSetMismatch);
    }
    if t.is_empty() {
        return Err(Error::EmptyInput);
    }
    let hits = p.iter().filter(|(d, e)| t.get(d) == Some(e)).count();
    Ok(hits as f64 / t.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(coefs: &[f64]) -> PreferenceModel {
        let mut m = PreferenceModel::zero(coefs.len());
        m.coefficients = coefs.to_vec();
        m
    }

    #[test]
    fn tomato_onion_pepper() {
        let m = model(&[0.8, -0.3, 0.0005]);
        let x = ItemVector::new("r", [0, 1, 2], 3).unwrap();
        let e = explain_item(&m, &x, 1e-3).unwrap();
        assert_eq!(e.positive, BTreeSet::from([0]));
        assert_eq!(e.negative, BTreeSet::from([1]));
        assert_eq!(e.ineffective, BTreeSet::from([2]));
    }

    #[test]
    fn zero_model_all_ineffective() {
        let x = ItemVector::new("r", [0, 2], 3).unwrap();
        let e = explain_item(&PreferenceModel::zero(3), &x, 1e-3).unwrap();
        assert_eq!(e.ineffective, BTreeSet::from([0, 2]));
    }

    #[test]
    fn masked_is_ineffective_at_any_epsilon() {
        let mut m = model(&[0.0, 1.0]);
        m.mask = vec![0];
        let x = ItemVector::new("r", [0, 1], 2).unwrap();
        let e = explain_item(&m, &x, 0.0).unwrap();
        assert!(e.ineffective.contains(&0));
    }

    #[test]
    fn accuracy_counts() {
        let a = Explanation::from_effects("r", [(0, Effect::Positive), (1, Effect::Negative), (2, Effect::Ineffective)]);
        assert_eq!(explanation_accuracy(&a, &a).unwrap(), 1.0);
        let b = Explanation::from_effects("r", [(0, Effect::Positive), (1, Effect::Ineffective), (2, Effect::Negative)]);
        assert!((explanation_accuracy(&b, &a).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let c = Explanation::from_effects("r", [(0, Effect::Negative), (1, Effect::Ineffective), (2, Effect::Positive)]);
        assert_eq!(explanation_accuracy(&c, &a).unwrap(), 0.0);
        let d = Explanation::from_effects("r", [(0, Effect::Positive)]);
        assert!(matches!(explanation_accuracy(&d, &a), Err(Error::FeatureSetMismatch)));
    }
}
