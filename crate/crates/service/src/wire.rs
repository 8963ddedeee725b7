//! Request and response payloads.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use xal_core::corpus::{split_feature_id, Corpus, ItemVector};
use xal_core::explain::ExplanationWire;
use xal_core::session::{ExplainedItem, SessionConfig};

use crate::record::{MetricsSummary, Phase};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    /// Must name the loaded corpus when given.
    #[serde(default)]
    pub corpus: Option<String>,
    /// Only `human` is served.
    #[serde(default)]
    pub mode: Option<String>,
    /// Field overrides applied on top of the human-mode defaults.
    #[serde(default)]
    pub config: Option<Value>,
}

/// A recipe as shown to a person: attribute values grouped by field, binned
/// attributes as levels, and the feature ids used in explanations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplayItem {
    pub id: String,
    pub name: String,
    pub attributes: BTreeMap<String, Vec<String>>,
    pub levels: BTreeMap<String, String>,
    pub features: Vec<String>,
}

impl DisplayItem {
    pub fn new(corpus: &Corpus, x: &ItemVector) -> Self {
        let binned = &corpus.meta.config.binned;
        let mut attributes = BTreeMap::new();
        let mut levels = BTreeMap::new();
        for (group, values) in &x.display {
            if group == "name" {
                continue;
            }
            if binned.contains(group) {
                if let Some(v) = values.first() {
                    levels.insert(group.clone(), v.clone());
                }
            } else {
                attributes.insert(group.clone(), values.clone());
            }
        }
        if attributes.is_empty() {
            for f in corpus.decode(x) {
                let (g, v) = split_feature_id(f);
                attributes.entry(g.to_string()).or_insert_with(Vec::new).push(v.to_string());
            }
        }
        Self {
            id: x.id.clone(),
            name: x.display.get("name").and_then(|v| v.first()).cloned().unwrap_or_else(|| x.id.clone()),
            attributes,
            levels,
            features: corpus.decode(x).into_iter().map(String::from).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreatedSession {
    pub session_id: String,
    pub status: Phase,
    pub config: SessionConfig,
    pub items: Vec<DisplayItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelAnswer {
    pub item_id: String,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelSubmission {
    pub labels: Vec<LabelAnswer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinarySubmission {
    pub answers: Vec<LabelAnswer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingAnswer {
    pub item_id: String,
    /// 1 = strongly disagree .. 5 = strongly agree.
    pub rating: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatingSubmission {
    pub answers: Vec<RatingAnswer>,
}

/// An item with the model's prediction and its explanation, which the
/// categorization board uses as the initial chip placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainedView {
    pub item: DisplayItem,
    pub predicted_label: u8,
    pub probability_like: f64,
    pub explanation: ExplanationWire,
}

impl ExplainedView {
    pub fn new(corpus: &Corpus, e: &ExplainedItem) -> Self {
        Self {
            item: DisplayItem::new(corpus, corpus.item(e.index)),
            predicted_label: e.predicted_label,
            probability_like: e.probs[1],
            explanation: e.explanation.to_wire(&corpus.universe),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase2Item {
    /// 1-based position within phase 2.
    pub step: usize,
    pub of: usize,
    #[serde(flatten)]
    pub view: ExplainedView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase2Response {
    pub status: Phase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next: Option<Phase2Item>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub binary_items: Vec<DisplayItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedItem {
    pub item: DisplayItem,
    pub predicted_label: u8,
    pub probability_like: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryResponse {
    pub status: Phase,
    pub f1: Option<f64>,
    pub repeat_mismatches: usize,
    pub inconsistent: bool,
    pub rating_items: Vec<PredictedItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub mode: String,
    pub status: Phase,
    pub epoch: usize,
    pub config: SessionConfig,
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub phase1_items: Vec<DisplayItem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase2_item: Option<Phase2Item>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub binary_items: Vec<DisplayItem>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rating_items: Vec<PredictedItem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<MetricsSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPoint {
    pub epoch: usize,
    pub labeled: usize,
    pub pseudo: usize,
    pub synthetic: usize,
    pub masked: usize,
    pub snapshot_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsView {
    pub session_id: String,
    pub status: Phase,
    pub training: Vec<TrainingPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<MetricsSummary>,
}
