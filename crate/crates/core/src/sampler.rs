//! Uncertainty metrics, active-learning query strategies and the diverse
//! high-confidence test sampler.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::ItemVector;
use crate::error::{Error, Result};
use crate::kmedoids::{proportional_draw_among, Clustering, DrawMode};
use crate::prefmodel::PreferenceModel;
use crate::similarity::jaccard_bits;

fn check_distribution(probs: &[f64]) -> Result<()> {
    if probs.len() < 2 {
        return Err(Error::InvalidDistribution(format!("need at least 2 classes, got {}", probs.len())));
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidDistribution(format!("probabilities out of range: {probs:?}")));
    }
    let s: f64 = probs.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!("probabilities sum to {s}")));
    }
    Ok(())
}

/// Largest and second-largest probabilities.
fn top_two(probs: &[f64]) -> (f64, f64) {
    let mut a = f64::NEG_INFINITY;
    let mut b = f64::NEG_INFINITY;
    for &p in probs {
        if p > a {
            b = a;
            a = p;
        } else if p > b {
            b = p;
        }
    }
    (a, b)
}

/// `|C| / (|C| - 1) * (1 - P(y1))`.
pub fn least_confidence(probs: &[f64]) -> Result<f64> {
    check_distribution(probs)?;
    let c = probs.len() as f64;
    let (top, _) = top_two(probs);
    Ok(c / (c - 1.0) * (1.0 - top))
}

/// `1 - (P(y1) - P(y2))`.
pub fn margin_score(probs: &[f64]) -> Result<f64> {
    check_distribution(probs)?;
    let (a, b) = top_two(probs);
    Ok(1.0 - (a - b))
}

/// Shannon entropy divided by `log |C|`, with `0 log 0 = 0`.
pub fn normalized_entropy(probs: &[f64]) -> Result<f64> {
    check_distribution(probs)?;
    let h: f64 = probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    Ok(h / (probs.len() as f64).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    LeastConfidence,
    Margin,
    Entropy,
}

impl Metric {
    pub fn score(self, probs: &[f64]) -> Result<f64> {
        match self {
            Metric::LeastConfidence => least_confidence(probs),
            Metric::Margin => margin_score(probs),
            Metric::Entropy => normalized_entropy(probs),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyScore {
    pub index: usize,
    pub metric: Metric,
    pub value: f64,
}

/// Uncertainty of every item under `model`.
pub fn uncertainties(model: &PreferenceModel, items: &[&ItemVector], metric: Metric) -> Result<Vec<f64>> {
    items
        .iter()
        .map(|x| metric.score(&model.predict_proba(x)?))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Most uncertain first.
    Ub,
    /// Cluster-proportional representatives.
    Diversity,
    /// Cluster quotas filled with each cluster's most uncertain members.
    Cu,
    /// Diversity draw from the most uncertain subset.
    Uc,
    /// Whole clusters in order of mean uncertainty.
    Muc,
    Random,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Cu,
        Strategy::Ub,
        Strategy::Uc,
        Strategy::Muc,
        Strategy::Diversity,
        Strategy::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Ub => "ub",
            Strategy::Diversity => "diversity",
            Strategy::Cu => "cu",
            Strategy::Uc => "uc",
            Strategy::Muc => "muc",
            Strategy::Random => "random",
        }
    }

    pub fn needs_clustering(self) -> bool {
        matches!(self, Strategy::Diversity | Strategy::Cu | Strategy::Uc | Strategy::Muc)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::UnknownStrategy(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryBatch {
    pub strategy: Strategy,
    pub indices: Vec<usize>,
    pub epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectParams {
    /// Uncertain-subset multiplier for `uc`.
    pub gamma: usize,
    pub draw_mode: DrawMode,
}

impl Default for SelectParams {
    fn default() -> Self {
        Self {
            gamma: 5,
            draw_mode: DrawMode::Mixed,
        }
    }
}

fn by_uncertainty(pool: &[usize], scores: &[f64]) -> Vec<usize> {
    let mut v = pool.to_vec();
    v.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    v
}

/// Picks `m` items from `pool`. `scores[i]` is the uncertainty of point `i`;
/// cluster-based strategies use `clustering.assignment[i]`.
pub fn select(
    strategy: Strategy,
    pool: &[usize],
    scores: &[f64],
    clustering: Option<&Clustering>,
    m: usize,
    seed: u64,
    params: &SelectParams,
) -> Result<Vec<usize>> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    if m > pool.len() {
        return Err(Error::SampleTooLarge { m, n: pool.len() });
    }
    let cluster = || {
        clustering.ok_or_else(|| Error::InvalidConfig(format!("strategy `{strategy}` needs a clustering")))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = match strategy {
        Strategy::Ub => by_uncertainty(pool, scores).into_iter().take(m).collect(),
        Strategy::Random => index::sample(&mut rng, pool.len(), m).into_iter().map(|i| pool[i]).collect(),
        Strategy::Diversity => proportional_draw_among(cluster()?, pool, m, params.draw_mode, &mut rng)?,
        Strategy::Uc => {
            let subset: Vec<usize> = by_uncertainty(pool, scores)
                .into_iter()
                .take((params.gamma.max(1) * m).min(pool.len()))
                .collect();
            proportional_draw_among(cluster()?, &subset, m, params.draw_mode, &mut rng)?
        }
        Strategy::Cu => clustered_uncertainty(cluster()?, pool, scores, m),
        Strategy::Muc => most_uncertain_cluster(cluster()?, pool, scores, m),
    };
    debug_assert_eq!(out.len(), m);
    Ok(out)
}

fn cluster_groups(clustering: &Clustering, pool: &[usize], scores: &[f64]) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); clustering.k];
    for &p in pool {
        groups[clustering.assignment[p]].push(p);
    }
    groups.into_iter().map(|g| by_uncertainty(&g, scores)).collect()
}

/// Each cluster gets `floor(m * size / n)` of its most uncertain members; the
/// fractional seats go to the most uncertain next-in-line members among
/// clusters with a non-zero remainder, at most one per cluster. With `m = 1`
/// this reduces to picking the single most uncertain item.
fn clustered_uncertainty(clustering: &Clustering, pool: &[usize], scores: &[f64], m: usize) -> Vec<usize> {
    let groups = cluster_groups(clustering, pool, scores);
    let n = pool.len();
    let mut out = Vec::with_capacity(m);
    let mut next_in_line = Vec::new();
    for g in &groups {
        let s = g.len();
        let floor = m * s / n;
        out.extend_from_slice(&g[..floor]);
        if !(m * s).is_multiple_of(n) {
            next_in_line.push(g[floor]);
        }
    }
    let rest = m - out.len();
    out.extend(by_uncertainty(&next_in_line, scores).into_iter().take(rest));
    out
}

fn most_uncertain_cluster(clustering: &Clustering, pool: &[usize], scores: &[f64], m: usize) -> Vec<usize> {
    let groups = cluster_groups(clustering, pool, scores);
    let mut order: Vec<(usize, f64)> = groups
        .iter()
        .enumerate()
        .filter(|(_, g)| !g.is_empty())
        .map(|(c, g)| (c, g.iter().map(|&p| scores[p]).sum::<f64>() / g.len() as f64))
        .collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out = Vec::with_capacity(m);
    for (c, _) in order {
        let take = (m - out.len()).min(groups[c].len());
        out.extend_from_slice(&groups[c][..take]);
        if out.len() == m {
            break;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestSample {
    pub indices: Vec<usize>,
    /// Set when the similarity cap had to be ignored to reach the size.
    pub relaxed: bool,
}

/// Most certain items first, skipping any item whose Jaccard similarity to an
/// already kept item exceeds `sim_cap`.
pub fn test_sample(pool: &[usize], items: &[&ItemVector], scores: &[f64], m: usize, sim_cap: f64) -> TestSample {
    let mut order = pool.to_vec();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::with_capacity(m);
    for &p in &order {
        if kept.len() == m {
            break;
        }
        if kept
            .iter()
            .all(|&q| jaccard_bits(&items[p].bits, &items[q].bits) <= sim_cap)
        {
            kept.push(p);
        }
    }
    let mut relaxed = false;
    if kept.len() < m {
        for &p in &order {
            if kept.len() == m {
                break;
            }
            if !kept.contains(&p) {
                kept.push(p);
                relaxed = true;
            }
        }
    }
    TestSample { indices: kept, relaxed }
}
