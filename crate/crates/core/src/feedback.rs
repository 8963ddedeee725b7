//! Turns feature-level user feedback into weighted one-hot synthetic rows and
//! feature masks, and assembles the training set `L ∪ P ∪ S`.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, FeatureUniverse, ItemVector};
use crate::error::{Error, Result};
use crate::explain::Effect;
use crate::prefmodel::{Origin, TrainingSet};

pub const DEFAULT_SYNTHETIC_WEIGHT: f64 = 20.0;

/// The user's true item label plus a verdict for every feature of the item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureFeedback {
    pub item_id: String,
    pub label: u8,
    #[serde(with = "pairs")]
    pub assignments: BTreeMap<usize, Effect>,
}

/// Integer-keyed maps as `[[key, value], ...]`, which survive being nested in
/// internally tagged enums.
mod pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<V: Serialize, S: Serializer>(map: &BTreeMap<usize, V>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(map.iter())
    }

    pub fn deserialize<'de, V: Deserialize<'de>, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<usize, V>, D::Error> {
        Ok(Vec::<(usize, V)>::deserialize(d)?.into_iter().collect())
    }
}

impl FeatureFeedback {
    /// Checks that the assignments cover exactly the item's features.
    pub fn validate(&self, item: &ItemVector) -> Result<()> {
        self.validate_named(item, |d| format!("#{d}"))
    }

    fn validate_named(&self, item: &ItemVector, name: impl Fn(usize) -> String) -> Result<()> {
        let extra: Vec<String> = self
            .assignments
            .keys()
            .filter(|&&d| !item.contains(d))
            .map(|&d| name(d))
            .collect();
        if !extra.is_empty() {
            return Err(Error::ForeignFeedback {
                item: item.id.clone(),
                extra,
            });
        }
        let missing: Vec<String> = item
            .dims()
            .filter(|d| !self.assignments.contains_key(d))
            .map(&name)
            .collect();
        if !missing.is_empty() {
            return Err(Error::IncompleteFeedback {
                item: item.id.clone(),
                missing,
            });
        }
        Ok(())
    }

    pub fn from_wire(wire: &FeedbackWire, universe: &FeatureUniverse) -> Result<Self> {
        if wire.label > 1 {
            return Err(Error::InvalidConfig(format!("label must be 0 or 1, got {}", wire.label)));
        }
        let mut assignments = BTreeMap::new();
        for (names, eff) in [
            (&wire.positive, Effect::Positive),
            (&wire.negative, Effect::Negative),
            (&wire.ineffective, Effect::Ineffective),
        ] {
            for n in names {
                let d = universe.require(n)?;
                if assignments.insert(d, eff).is_some() {
                    return Err(Error::Protocol(format!("feature `{n}` assigned twice")));
                }
            }
        }
        Ok(Self {
            item_id: wire.item_id.clone(),
            label: wire.label,
            assignments,
        })
    }

    pub fn to_wire(&self, universe: &FeatureUniverse) -> FeedbackWire {
        let pick = |eff: Effect| {
            self.assignments
                .iter()
                .filter(|(_, &e)| e == eff)
                .map(|(&d, _)| universe.name(d).to_string())
                .collect()
        };
        FeedbackWire {
            item_id: self.item_id.clone(),
            label: self.label,
            positive: pick(Effect::Positive),
            negative: pick(Effect::Negative),
            ineffective: pick(Effect::Ineffective),
        }
    }
}

/// Wire form: an explanation plus the item label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackWire {
    pub item_id: String,
    pub label: u8,
    #[serde(default)]
    pub positive: Vec<String>,
    #[serde(default)]
    pub negative: Vec<String>,
    #[serde(default)]
    pub ineffective: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSample {
    pub dim: usize,
    pub label: u8,
    pub epoch: usize,
}

/// At most one synthetic sample per dimension; a restated verdict replaces it.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SyntheticSet {
    pub samples: BTreeMap<usize, SyntheticSample>,
}

impl SyntheticSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &SyntheticSample> {
        self.samples.values()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub effect: Effect,
    pub epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MaskLedger {
    pub masked: BTreeSet<usize>,
    /// Latest verdict per dimension.
    pub history: BTreeMap<usize, LedgerEntry>,
}

impl MaskLedger {
    pub fn is_masked(&self, dim: usize) -> bool {
        self.masked.contains(&dim)
    }
}

/// Applies one item's feedback. Validation happens before any mutation.
pub fn apply_feedback(
    fb: &FeatureFeedback,
    item: &ItemVector,
    ledger: &mut MaskLedger,
    synthetic: &mut SyntheticSet,
    epoch: usize,
) -> Result<()> {
    fb.validate(item)?;
    for (&d, &eff) in &fb.assignments {
        if ledger.history.get(&d).map(|e| e.effect) == Some(eff) {
            continue;
        }
        ledger.history.insert(d, LedgerEntry { effect: eff, epoch });
        match eff {
            Effect::Positive | Effect::Negative => {
                ledger.masked.remove(&d);
                let label = (eff == Effect::Positive) as u8;
                synthetic.samples.insert(d, SyntheticSample { dim: d, label, epoch });
            }
            Effect::Ineffective => {
                ledger.masked.insert(d);
                synthetic.samples.remove(&d);
            }
        }
    }
    Ok(())
}

/// `apply_feedback` with feature names in error messages.
pub fn apply_feedback_named(
    fb: &FeatureFeedback,
    item: &ItemVector,
    universe: &FeatureUniverse,
    ledger: &mut MaskLedger,
    synthetic: &mut SyntheticSet,
    epoch: usize,
) -> Result<()> {
    fb.validate_named(item, |d| universe.name(d).to_string())?;
    apply_feedback(fb, item, ledger, synthetic, epoch)
}

/// Builds `L ∪ P ∪ S`: user rows and pseudo rows weigh 1, synthetic rows
/// weigh `k`. Pseudo rows for user-labeled items are dropped.
pub fn assemble_training_set(
    corpus: &Corpus,
    labeled: &[(usize, u8)],
    pseudo: &[(usize, u8)],
    synthetic: &SyntheticSet,
    ledger: &MaskLedger,
    k: f64,
) -> Result<TrainingSet> {
    if labeled.is_empty() {
        return Err(Error::NoLabels);
    }
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::InvalidConfig(format!("synthetic weight {k} must be positive")));
    }
    let mut set = TrainingSet::new(corpus.universe.len());
    let user: HashSet<usize> = labeled.iter().map(|&(i, _)| i).collect();
    for &(i, l) in labeled {
        set.push_item(corpus.item(i), l, 1.0, Origin::User);
    }
    for &(i, l) in pseudo {
        if !user.contains(&i) {
            set.push_item(corpus.item(i), l, 1.0, Origin::Pseudo);
        }
    }
    for s in synthetic.iter() {
        debug_assert!(!ledger.is_masked(s.dim));
        set.push_one_hot(s.dim, s.label, k, Origin::Synthetic);
    }
    set.mask = ledger.masked.clone();
    Ok(set)
}
