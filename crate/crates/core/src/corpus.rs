//! Item ingestion and binary feature encoding.
//!
//! Records are JSON objects, one per line. Each record carries an `id`, one
//! field per categorical attribute group (a string or an array of strings) and
//! optional numeric attributes. Numeric attributes listed in the ingestion
//! config are binned into `Low`/`Normal`/`High` tertiles of their log values.
//! Every item becomes a sparse binary vector over a universe of `group:value`
//! feature ids.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Ordered set of feature identifiers; position in the list is the dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureUniverse {
    features: Vec<String>,
    index: HashMap<String, usize>,
}

impl FeatureUniverse {
    pub fn new(features: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(features.len());
        for (i, f) in features.iter().enumerate() {
            if index.insert(f.clone(), i).is_some() {
                return Err(Error::InvalidSchema(format!("duplicate feature id `{f}`")));
            }
        }
        Ok(Self { features, index })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn name(&self, dim: usize) -> &str {
        &self.features[dim]
    }

    pub fn position(&self, feature: &str) -> Option<usize> {
        self.index.get(feature).copied()
    }

    pub fn require(&self, feature: &str) -> Result<usize> {
        self.position(feature)
            .ok_or_else(|| Error::UnknownFeature(feature.to_string()))
    }

    /// Stable 16-hex-digit digest of the feature list.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for f in &self.features {
            h.update(f.as_bytes());
            h.update(b"\n");
        }
        hex::encode(&h.finalize()[..8])
    }

    /// Dimensions whose feature id starts with `group:`.
    pub fn group_dims(&self, group: &str) -> Vec<usize> {
        let prefix = format!("{group}:");
        self.features
            .iter()
            .enumerate()
            .filter(|(_, f)| f.starts_with(&prefix))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Canonical `group:value` feature id.
pub fn feature_id(group: &str, value: &str) -> String {
    format!("{group}:{value}")
}

/// Splits a `group:value` id. Ids without a separator belong to no group.
pub fn split_feature_id(id: &str) -> (&str, &str) {
    id.split_once(':').unwrap_or(("", id))
}

/// An item encoded as the set of dimensions that are 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemVector {
    pub id: String,
    /// Sorted, duplicate-free dimension positions.
    pub bits: Vec<u32>,
    /// Size of the universe this vector was encoded against.
    pub dim: usize,
    /// Attribute group -> human-readable values.
    #[serde(default)]
    pub display: BTreeMap<String, Vec<String>>,
}

impl ItemVector {
    pub fn new(id: impl Into<String>, bits: impl IntoIterator<Item = usize>, dim: usize) -> Result<Self> {
        let id = id.into();
        let set: BTreeSet<usize> = bits.into_iter().collect();
        if set.is_empty() {
            return Err(Error::EmptyItem(id));
        }
        if let Some(&max) = set.iter().next_back() {
            if max >= dim {
                return Err(Error::UniverseMismatch {
                    expected: dim,
                    actual: max + 1,
                });
            }
        }
        Ok(Self {
            id,
            bits: set.into_iter().map(|b| b as u32).collect(),
            dim,
            display: BTreeMap::new(),
        })
    }

    pub fn dims(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().map(|&b| b as usize)
    }

    pub fn contains(&self, dim: usize) -> bool {
        self.bits.binary_search(&(dim as u32)).is_ok()
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

/// Nutrition-style level assigned by tertile binning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level {
    Low,
    Normal,
    High,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Low => "Low",
            Level::Normal => "Normal",
            Level::High => "High",
        })
    }
}

/// Ingestion config: which record fields become categorical feature groups
/// and which numeric fields get tertile binning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    #[serde(default = "default_id_field")]
    pub id_field: String,
    /// Optional display-only title field.
    #[serde(default)]
    pub name_field: Option<String>,
    #[serde(default)]
    pub categorical: Vec<String>,
    #[serde(default)]
    pub binned: Vec<String>,
}

fn default_id_field() -> String {
    "id".to_string()
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            id_field: default_id_field(),
            name_field: None,
            categorical: vec!["ingredient".to_string()],
            binned: Vec::new(),
        }
    }
}

impl IngestConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidSchema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.categorical.is_empty() && self.binned.is_empty() {
            return Err(Error::InvalidSchema("no feature groups declared".into()));
        }
        let mut seen = BTreeSet::new();
        for g in self.categorical.iter().chain(&self.binned) {
            if g.contains(':') {
                return Err(Error::InvalidSchema(format!("group `{g}` contains ':'")));
            }
            if !seen.insert(g) {
                return Err(Error::InvalidSchema(format!("group `{g}` declared twice")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub source: String,
    pub config: IngestConfig,
}

/// An immutable set of items sharing one feature universe.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub universe: FeatureUniverse,
    pub items: Vec<ItemVector>,
    pub meta: CorpusMeta,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(universe: FeatureUniverse, items: Vec<ItemVector>, meta: CorpusMeta) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            if item.dim != universe.len() {
                return Err(Error::UniverseMismatch {
                    expected: universe.len(),
                    actual: item.dim,
                });
            }
            if item.is_empty() {
                return Err(Error::EmptyItem(item.id.clone()));
            }
            if by_id.insert(item.id.clone(), i).is_some() {
                return Err(Error::DuplicateItem(item.id.clone()));
            }
        }
        Ok(Self {
            universe,
            items,
            meta,
            by_id,
        })
    }

    /// Builds a corpus from explicit feature-id lists, assigning dimensions in
    /// order of first appearance.
    pub fn from_feature_sets<I, S>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<String>)>,
        S: Into<String>,
    {
        let mut features: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut raw = Vec::new();
        for (id, feats) in items {
            let mut bits = Vec::with_capacity(feats.len());
            for f in feats {
                let next = features.len();
                let d = *index.entry(f.clone()).or_insert_with(|| {
                    features.push(f.clone());
                    next
                });
                bits.push(d);
            }
            raw.push((id.into(), bits));
        }
        let dim = features.len();
        let universe = FeatureUniverse::new(features)?;
        let items = raw
            .into_iter()
            .map(|(id, bits)| ItemVector::new(id, bits, dim))
            .collect::<Result<Vec<_>>>()?;
        Corpus::new(
            universe,
            items,
            CorpusMeta {
                source: "memory".into(),
                config: IngestConfig::default(),
            },
        )
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn require_index(&self, id: &str) -> Result<usize> {
        self.index_of(id).ok_or_else(|| Error::UnknownItem(id.to_string()))
    }

    pub fn item(&self, index: usize) -> &ItemVector {
        &self.items[index]
    }

    /// Feature ids of an item's set bits.
    pub fn decode(&self, item: &ItemVector) -> Vec<&str> {
        item.dims().map(|d| self.universe.name(d)).collect()
    }

    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.universe.fingerprint().as_bytes());
        for item in &self.items {
            h.update(item.id.as_bytes());
            for b in &item.bits {
                h.update(b.to_le_bytes());
            }
        }
        hex::encode(&h.finalize()[..8])
    }

    pub fn to_file(&self) -> CorpusFile {
        CorpusFile {
            source: self.meta.source.clone(),
            config: self.meta.config.clone(),
            universe: self.universe.features().to_vec(),
            items: self
                .items
                .iter()
                .map(|it| CorpusFileItem {
                    id: it.id.clone(),
                    features: self.decode(it).into_iter().map(str::to_string).collect(),
                    display: it.display.clone(),
                })
                .collect(),
        }
    }

    pub fn from_file(file: CorpusFile) -> Result<Self> {
        let universe = FeatureUniverse::new(file.universe)?;
        let dim = universe.len();
        let items = file
            .items
            .into_iter()
            .map(|it| {
                let bits = it
                    .features
                    .iter()
                    .map(|f| universe.require(f))
                    .collect::<Result<Vec<_>>>()?;
                let mut v = ItemVector::new(it.id, bits, dim)?;
                v.display = it.display;
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?;
        Corpus::new(
            universe,
            items,
            CorpusMeta {
                source: file.source,
                config: file.config,
            },
        )
    }

    /// Writes the canonical corpus JSON.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_file()).map_err(|e| Error::Parse(e.to_string()))?;
        std::fs::write(path.as_ref(), text).map_err(|e| Error::io(&path, e))
    }

    /// Reads a canonical corpus JSON written by [`Corpus::save`].
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        let file: CorpusFile = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_file(file)
    }
}

/// Canonical on-disk corpus form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusFile {
    pub source: String,
    pub config: IngestConfig,
    pub universe: Vec<String>,
    pub items: Vec<CorpusFileItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusFileItem {
    pub id: String,
    pub features: Vec<String>,
    #[serde(default)]
    pub display: BTreeMap<String, Vec<String>>,
}

/// Reads a record-per-line file and encodes it.
pub fn ingest(path: impl AsRef<Path>, config: &IngestConfig) -> Result<Corpus> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    ingest_str(&text, config, &path.as_ref().display().to_string())
}

struct RawRecord {
    id: String,
    name: Option<String>,
    categorical: Vec<Vec<String>>,
    numeric: Vec<Option<f64>>,
}

pub fn ingest_str(text: &str, config: &IngestConfig, source: &str) -> Result<Corpus> {
    config.validate()?;
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let rec = parse_record(trimmed, config).map_err(|message| Error::MalformedRecord {
            line: line_no,
            message,
        })?;
        if !seen.insert(rec.id.clone()) {
            return Err(Error::DuplicateItem(rec.id));
        }
        records.push(rec);
    }

    // Corpus-wide tertile levels per binned attribute.
    let mut levels: Vec<Vec<Option<Level>>> = Vec::with_capacity(config.binned.len());
    for (j, attr) in config.binned.iter().enumerate() {
        let present: Vec<(&str, f64)> = records
            .iter()
            .filter_map(|r| r.numeric[j].map(|v| (r.id.as_str(), v)))
            .collect();
        let mut col = vec![None; records.len()];
        if !present.is_empty() {
            let binned = bin_attribute(attr, &present)?;
            let mut it = binned.into_iter();
            for (i, r) in records.iter().enumerate() {
                if r.numeric[j].is_some() {
                    col[i] = it.next();
                }
            }
        }
        levels.push(col);
    }

    let mut features: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut encoded = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let mut bits = Vec::new();
        let mut display = BTreeMap::new();
        let mut push = |fid: String, bits: &mut Vec<usize>| {
            let next = features.len();
            let d = *index.entry(fid.clone()).or_insert_with(|| {
                features.push(fid);
                next
            });
            bits.push(d);
        };
        for (g, values) in config.categorical.iter().zip(&rec.categorical) {
            for v in values {
                push(feature_id(g, v), &mut bits);
            }
            if !values.is_empty() {
                display.insert(g.clone(), values.clone());
            }
        }
        for (j, g) in config.binned.iter().enumerate() {
            if let Some(level) = levels[j][i] {
                push(feature_id(g, &level.to_string()), &mut bits);
                display.insert(g.clone(), vec![level.to_string()]);
            }
        }
        if let Some(name) = &rec.name {
            display.insert("name".to_string(), vec![name.clone()]);
        }
        if bits.is_empty() {
            return Err(Error::EmptyItem(rec.id.clone()));
        }
        encoded.push((rec.id.clone(), bits, display));
    }

    let dim = features.len();
    let universe = FeatureUniverse::new(features)?;
    let items = encoded
        .into_iter()
        .map(|(id, bits, display)| {
            let mut v = ItemVector::new(id, bits, dim)?;
            v.display = display;
            Ok(v)
        })
        .collect::<Result<Vec<_>>>()?;
    Corpus::new(
        universe,
        items,
        CorpusMeta {
            source: source.to_string(),
            config: config.clone(),
        },
    )
}

fn parse_record(line: &str, config: &IngestConfig) -> std::result::Result<RawRecord, String> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let obj = value.as_object().ok_or("record is not an object")?;
    let id = match obj.get(&config.id_field) {
        Some(serde_json::Value::String(s)) if !s.is_empty() => s.clone(),
        Some(serde_json::Value::Number(n)) => n.to_string(),
        _ => return Err(format!("missing or invalid `{}` field", config.id_field)),
    };
    let name = config
        .name_field
        .as_ref()
        .and_then(|f| obj.get(f))
        .and_then(|v| v.as_str())
        .map(str::to_string);
    let mut categorical = Vec::with_capacity(config.categorical.len());
    for g in &config.categorical {
        let mut values: Vec<String> = Vec::new();
        match obj.get(g) {
            None | Some(serde_json::Value::Null) => {}
            Some(serde_json::Value::String(s)) => values.push(s.trim().to_string()),
            Some(serde_json::Value::Array(arr)) => {
                for v in arr {
                    let s = v
                        .as_str()
                        .ok_or_else(|| format!("item `{id}`: field `{g}` must hold strings"))?;
                    values.push(s.trim().to_string());
                }
            }
            Some(_) => return Err(format!("item `{id}`: field `{g}` must be a string or array")),
        }
        let mut dedup = BTreeSet::new();
        values.retain(|v| !v.is_empty() && dedup.insert(v.clone()));
        categorical.push(values);
    }
    let mut numeric = Vec::with_capacity(config.binned.len());
    for g in &config.binned {
        match obj.get(g) {
            None | Some(serde_json::Value::Null) => numeric.push(None),
            Some(v) => {
                let x = v
                    .as_f64()
                    .ok_or_else(|| format!("item `{id}`: field `{g}` must be numeric"))?;
                numeric.push(Some(x));
            }
        }
    }
    Ok(RawRecord {
        id,
        name,
        categorical,
        numeric,
    })
}

/// Empirical quantile of sorted data with linear interpolation between order
/// statistics.
pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Labels each value by the tertile of its log. Values exactly on a cut go to
/// the lower bucket; a distribution with no spread maps entirely to `Normal`.
pub fn bin_tertiles(values: &[f64]) -> Result<Vec<Level>> {
    let ids: Vec<String> = (0..values.len()).map(|i| format!("#{i}")).collect();
    let pairs: Vec<(&str, f64)> = ids.iter().map(String::as_str).zip(values.iter().copied()).collect();
    bin_attribute("value", &pairs)
}

fn bin_attribute(attribute: &str, values: &[(&str, f64)]) -> Result<Vec<Level>> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut logs = Vec::with_capacity(values.len());
    for &(item, v) in values {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::NonPositiveValue {
                item: item.to_string(),
                attribute: attribute.to_string(),
                value: v,
            });
        }
        logs.push(v.ln());
    }
    let mut sorted = logs.clone();
    sorted.sort_by(f64::total_cmp);
    if sorted[0] == sorted[sorted.len() - 1] {
        return Ok(vec![Level::Normal; values.len()]);
    }
    let q1 = quantile_sorted(&sorted, 1.0 / 3.0);
    let q2 = quantile_sorted(&sorted, 2.0 / 3.0);
    Ok(logs
        .into_iter()
        .map(|x| {
            if x <= q1 {
                Level::Low
            } else if x <= q2 {
                Level::Normal
            } else {
                Level::High
            }
        })
        .collect())
}
