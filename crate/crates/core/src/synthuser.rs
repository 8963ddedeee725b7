//! Template-driven synthetic users that answer item and feature queries.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{feature_id, Corpus, FeatureUniverse, ItemVector};
use crate::error::{Error, Result};
use crate::explain::{Effect, Explanation};
use crate::feedback::FeatureFeedback;

pub const LIKE_THRESHOLD: f64 = 5.5;
pub const PROFILE_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// Named, pairwise-disjoint groups of feature values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupTaxonomy {
    /// Feature group the values belong to, e.g. `ingredient`.
    #[serde(default = "default_feature_group")]
    pub feature_group: String,
    pub groups: BTreeMap<String, Vec<String>>,
}

fn default_feature_group() -> String {
    "ingredient".into()
}

impl GroupTaxonomy {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let t: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
        for (g, values) in &self.groups {
            for v in values {
                if let Some(prev) = owner.insert(v, g) {
                    return Err(Error::InvalidConfig(format!("`{v}` is in both `{prev}` and `{g}`")));
                }
            }
        }
        Ok(())
    }

    /// Universe dimensions of each group; values absent from the universe
    /// are skipped.
    pub fn resolve(&self, universe: &FeatureUniverse) -> BTreeMap<String, Vec<usize>> {
        self.groups
            .iter()
            .map(|(g, values)| {
                let dims = values
                    .iter()
                    .filter_map(|v| universe.position(&feature_id(&self.feature_group, v)))
                    .collect();
                (g.clone(), dims)
            })
            .collect()
    }

    /// Dimensions of the taxonomy's feature group that belong to no group.
    pub fn ungrouped(&self, universe: &FeatureUniverse) -> Vec<usize> {
        let grouped: BTreeSet<usize> = self.resolve(universe).into_values().flatten().collect();
        universe
            .group_dims(&self.feature_group)
            .into_iter()
            .filter(|d| !grouped.contains(d))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileTemplate {
    pub name: String,
    /// Group -> inclusive score range within [1, 10].
    #[serde(default)]
    pub ranges: BTreeMap<String, [f64; 2]>,
    #[serde(default = "default_ineffective_range")]
    pub ineffective_fraction: [f64; 2],
}

fn default_ineffective_range() -> [f64; 2] {
    [0.2, 0.3]
}

impl ProfileTemplate {
    pub fn validate(&self) -> Result<()> {
        for (g, &[lo, hi]) in &self.ranges {
            if !(1.0 <= lo && lo <= hi && hi <= 10.0) {
                return Err(Error::InvalidConfig(format!(
                    "template `{}` group `{g}` range [{lo}, {hi}] not within [1, 10]",
                    self.name
                )));
            }
        }
        let [lo, hi] = self.ineffective_fraction;
        if !(0.0 <= lo && lo <= hi && hi < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "template `{}` ineffective fraction [{lo}, {hi}] invalid",
                self.name
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateFile {
    template: Vec<ProfileTemplate>,
}

pub fn templates_from_toml_str(text: &str) -> Result<Vec<ProfileTemplate>> {
    let f: TemplateFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    for t in &f.template {
        t.validate()?;
    }
    Ok(f.template)
}

pub fn load_templates(path: impl AsRef<Path>) -> Result<Vec<ProfileTemplate>> {
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    templates_from_toml_str(&text)
}

/// What a feature's score is compared against when judging its effect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeedbackReference {
    /// The shown item's own score.
    #[default]
    ItemScore,
    /// A fixed value, typically the mean item score over the corpus.
    Fixed { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub template: String,
    pub seed: u64,
    /// Score in [1, 10] for every universe dimension.
    pub scores: Vec<f64>,
    pub ineffective: BTreeSet<usize>,
    pub like_threshold: f64,
    #[serde(default)]
    pub reference: FeedbackReference,
}

impl UserProfile {
    pub fn name(&self) -> String {
        format!("{}-{}", self.template, self.seed)
    }

    /// Mean score of the item's effective features; `None` when every
    /// feature is ineffective.
    pub fn score_item(&self, x: &ItemVector) -> Option<f64> {
        let (sum, n) = x
            .dims()
            .filter(|d| !self.ineffective.contains(d))
            .fold((0.0, 0usize), |(s, n), d| (s + self.scores[d], n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    pub fn answer_label(&self, x: &ItemVector) -> u8 {
        matches!(self.score_item(x), Some(s) if s > self.like_threshold) as u8
    }

    pub fn answer_feedback(&self, x: &ItemVector) -> FeatureFeedback {
        let score = self.score_item(x);
        let reference = match self.reference {
            FeedbackReference::ItemScore => score,
            FeedbackReference::Fixed { value } => Some(value),
        };
        let assignments = x
            .dims()
            .map(|d| {
                let eff = match reference {
                    _ if self.ineffective.contains(&d) => Effect::Ineffective,
                    Some(r) if self.scores[d] > r => Effect::Positive,
                    _ => Effect::Negative,
                };
                (d, eff)
            })
            .collect();
        FeatureFeedback {
            item_id: x.id.clone(),
            label: self.answer_label(x),
            assignments,
        }
    }

    pub fn true_explanation(&self, x: &ItemVector) -> Explanation {
        Explanation::from_effects(x.id.clone(), self.answer_feedback(x).assignments)
    }

    /// Mean score over the corpus items that have one.
    pub fn corpus_mean_score(&self, corpus: &Corpus) -> Option<f64> {
        let s: Vec<f64> = corpus.items.iter().filter_map(|x| self.score_item(x)).collect();
        (!s.is_empty()).then(|| s.iter().sum::<f64>() / s.len() as f64)
    }

    /// Switches feature feedback to compare against the corpus-wide mean.
    pub fn with_corpus_reference(mut self, corpus: &Corpus) -> Self {
        if let Some(value) = self.corpus_mean_score(corpus) {
            self.reference = FeedbackReference::Fixed { value };
        }
        self
    }

    pub fn ineffective_fraction(&self) -> f64 {
        self.ineffective.len() as f64 / self.scores.len() as f64
    }
}

fn template_seed(name: &str, seed: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(name.as_bytes());
    h.update(seed.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn draw(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

pub fn generate_profile(
    template: &ProfileTemplate,
    taxonomy: &GroupTaxonomy,
    universe: &FeatureUniverse,
    seed: u64,
) -> Result<UserProfile> {
    template.validate()?;
    let resolved = taxonomy.resolve(universe);
    let mut range = vec![[1.0, 10.0]; universe.len()];
    for (g, &r) in &template.ranges {
        let dims = resolved.get(g).ok_or_else(|| Error::UnknownGroup {
            template: template.name.clone(),
            group: g.clone(),
        })?;
        for &d in dims {
            range[d] = r;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(template_seed(&template.name, seed));
    let scores: Vec<f64> = range.iter().map(|&[lo, hi]| draw(&mut rng, lo, hi)).collect();

    let n = universe.len();
    let [flo, fhi] = template.ineffective_fraction;
    let f = draw(&mut rng, flo, fhi);
    let (min_k, max_k) = ((flo * n as f64).ceil() as usize, (fhi * n as f64).floor() as usize);
    let mut k = (f * n as f64).round() as usize;
    if min_k <= max_k {
        k = k.clamp(min_k, max_k);
    }
    let ineffective = index::sample(&mut rng, n, k.min(n)).into_iter().collect();
    Ok(UserProfile {
        template: template.name.clone(),
        seed,
        scores,
        ineffective,
        like_threshold: LIKE_THRESHOLD,
        reference: FeedbackReference::ItemScore,
    })
}

/// One profile per (template, seed), templates outermost.
pub fn generate_profiles(
    templates: &[ProfileTemplate],
    taxonomy: &GroupTaxonomy,
    universe: &FeatureUniverse,
    seeds: &[u64],
) -> Result<Vec<UserProfile>> {
    let mut out = Vec::with_capacity(templates.len() * seeds.len());
    for t in templates {
        for &s in seeds {
            out.push(generate_profile(t, taxonomy, universe, s)?);
        }
    }
    Ok(out)
}

pub fn bundled_taxonomy() -> GroupTaxonomy {
    GroupTaxonomy::from_toml_str(crate::bundled::TAXONOMY).expect("bundled taxonomy parses")
}

pub fn bundled_templates() -> Vec<ProfileTemplate> {
    templates_from_toml_str(crate::bundled::TEMPLATES).expect("bundled templates parse")
}
