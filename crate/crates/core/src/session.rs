//! One user's elicitation loop: pool construction, initial labeling, label
//! spreading, feedback ingestion, retraining and query emission, with an
//! append-only event log that can be replayed.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::explain::{explain_item, Explanation, DEFAULT_EPSILON};
use crate::feedback::{apply_feedback_named, assemble_training_set, FeatureFeedback, MaskLedger, SyntheticSet};
use crate::kmedoids::{self, proportional_draw, Clustering, DrawMode};
use crate::labelspread::{gate_pseudo_labels, spread_on, PseudoLabelSet, SpreadGraph, SpreadParams};
use crate::prefmodel::{train, PreferenceModel, TrainParams};
use crate::sampler::{select, Metric, SelectParams, Strategy};
use crate::similarity::{affinity, AffinityMatrix, OnTheFly};

/// When the model is retrained during the query phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UpdateGranularity {
    /// After the whole pending batch is answered.
    #[default]
    PerBatch,
    /// After every submission, even a partial one.
    PerItem,
}

/// How the working pool and the initial batch are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialSampling {
    #[default]
    Diversity,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub u_prime_size: usize,
    pub step1_clusters: usize,
    pub step2_clusters: usize,
    pub initial_sample: usize,
    pub elicitation_batch: usize,
    pub elicitation_epochs: usize,
    pub recommendation_batch: usize,
    pub recommendation_epochs: usize,
    pub strategy: Strategy,
    pub metric: Metric,
    /// Apply feature-level feedback (synthetic rows and masks).
    pub feature_feedback: bool,
    /// Augment training data with gated pseudo-labels.
    pub use_ssl: bool,
    pub synthetic_weight: f64,
    pub epsilon: f64,
    pub entropy_gate: f64,
    pub initial_sampling: InitialSampling,
    pub update_granularity: UpdateGranularity,
    pub seed: u64,
    pub spread: SpreadParams,
    pub train: TrainParams,
    pub select: SelectParams,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            u_prime_size: 5000,
            step1_clusters: 100,
            step2_clusters: 30,
            initial_sample: 30,
            elicitation_batch: 1,
            elicitation_epochs: 5,
            recommendation_batch: 5,
            recommendation_epochs: 45,
            strategy: Strategy::Cu,
            metric: Metric::LeastConfidence,
            feature_feedback: true,
            use_ssl: true,
            synthetic_weight: crate::feedback::DEFAULT_SYNTHETIC_WEIGHT,
            epsilon: DEFAULT_EPSILON,
            entropy_gate: 0.6,
            initial_sampling: InitialSampling::Diversity,
            update_granularity: UpdateGranularity::PerBatch,
            seed: 0,
            spread: SpreadParams::default(),
            train: TrainParams::default(),
            select: SelectParams::default(),
        }
    }
}

impl SessionConfig {
    /// Interactive defaults: 15 initial items, five single-item rounds,
    /// retraining after every answer.
    pub fn human() -> Self {
        Self {
            initial_sample: 15,
            recommendation_epochs: 0,
            update_granularity: UpdateGranularity::PerItem,
            ..Self::default()
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.elicitation_epochs + self.recommendation_epochs
    }

    /// Batch size for the round that produces `epoch` (1-based), or `None`
    /// once the schedule is complete.
    pub fn batch_size(&self, epoch: usize) -> Option<usize> {
        if epoch == 0 || epoch > self.total_epochs() {
            None
        } else if epoch <= self.elicitation_epochs {
            Some(self.elicitation_batch)
        } else {
            Some(self.recommendation_batch)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.initial_sample == 0 {
            return bad("initial_sample must be at least 1".into());
        }
        if self.initial_sample > self.u_prime_size {
            return bad(format!(
                "initial_sample {} exceeds u_prime_size {}",
                self.initial_sample, self.u_prime_size
            ));
        }
        if self.step1_clusters == 0 || self.step2_clusters == 0 {
            return bad("cluster counts must be at least 1".into());
        }
        if self.elicitation_batch == 0 || self.recommendation_batch == 0 {
            return bad("batch sizes must be at least 1".into());
        }
        if !(self.synthetic_weight > 0.0 && self.synthetic_weight.is_finite()) {
            return bad(format!("synthetic_weight {} must be positive", self.synthetic_weight));
        }
        if !(self.epsilon >= 0.0) {
            return bad(format!("epsilon {} must be non-negative", self.epsilon));
        }
        if !(self.entropy_gate > 0.0 && self.entropy_gate <= 1.0) {
            return bad(format!("entropy_gate {} not in (0,1]", self.entropy_gate));
        }
        if !(self.spread.alpha > 0.0 && self.spread.alpha < 1.0) {
            return bad(format!("spread.alpha {} not in (0,1)", self.spread.alpha));
        }
        if !(self.train.c > 0.0) {
            return bad(format!("train.c {} must be positive", self.train.c));
        }
        if self.select.gamma == 0 {
            return bad("select.gamma must be at least 1".into());
        }
        Ok(())
    }
}

/// Stream-specific seed derived from the session seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TAG_POOL: u64 = 1;
const TAG_STEP2: u64 = 2;
const TAG_INITIAL: u64 = 3;
const TAG_QUERY: u64 = 0x100;

/// Immutable per-pool caches shared by every session over the same corpus,
/// pool seed and sampling mode.
#[derive(Debug)]
pub struct PoolContext {
    pub corpus: Arc<Corpus>,
    /// Corpus indices of the working pool, ascending.
    pub pool: Vec<usize>,
    /// Set when the corpus was too small to subsample.
    pub pool_is_corpus: bool,
    pub affinity: AffinityMatrix,
    pub graph: SpreadGraph,
    /// Clustering of the pool (point ids are pool positions).
    pub clustering: Clustering,
    position: HashMap<usize, usize>,
    fingerprint: String,
}

impl PoolContext {
    pub fn build(corpus: Arc<Corpus>, config: &SessionConfig) -> Result<Self> {
        config.validate()?;
        let n = corpus.len();
        if n < config.initial_sample {
            return Err(Error::SampleTooLarge {
                m: config.initial_sample,
                n,
            });
        }
        let pool_seed = derive_seed(config.seed, TAG_POOL);
        let (mut pool, pool_is_corpus) = if n > config.u_prime_size {
            let picked = match config.initial_sampling {
                InitialSampling::Random => {
                    let mut rng = ChaCha8Rng::seed_from_u64(pool_seed);
                    index::sample(&mut rng, n, config.u_prime_size).into_vec()
                }
                InitialSampling::Diversity => {
                    let dist = OnTheFly::new(corpus.items.iter().collect());
                    let step1 = kmedoids::fit(&dist, config.step1_clusters.min(n), pool_seed)?;
                    proportional_draw(&step1, config.u_prime_size, DrawMode::Mixed, pool_seed)?
                }
            };
            (picked, false)
        } else {
            ((0..n).collect(), true)
        };
        pool.sort_unstable();
        let items: Vec<_> = pool.iter().map(|&i| corpus.item(i)).collect();
        let affinity = affinity(&items)?;
        let graph = SpreadGraph::new(&affinity, config.spread.sparsify_below);
        let clustering = kmedoids::fit(
            &affinity,
            config.step2_clusters.min(pool.len()),
            derive_seed(config.seed, TAG_STEP2),
        )?;
        let position = pool.iter().enumerate().map(|(p, &i)| (i, p)).collect();
        let mut h = Sha256::new();
        h.update(corpus.fingerprint().as_bytes());
        for &i in &pool {
            h.update((i as u64).to_le_bytes());
        }
        for &a in &clustering.assignment {
            h.update((a as u64).to_le_bytes());
        }
        let fingerprint = hex::encode(&h.finalize()[..8]);
        Ok(Self {
            corpus,
            pool,
            pool_is_corpus,
            affinity,
            graph,
            clustering,
            position,
            fingerprint,
        })
    }

    pub fn len(&self) -> usize {
        self.pool.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pool.is_empty()
    }

    /// Pool position of a corpus index.
    pub fn position(&self, corpus_index: usize) -> Option<usize> {
        self.position.get(&corpus_index).copied()
    }

    pub fn id(&self, position: usize) -> &str {
        &self.corpus.item(self.pool[position]).id
    }

    /// Digest of the corpus, pool membership and pool clustering.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    fn position_of_id(&self, id: &str) -> Result<usize> {
        let i = self.corpus.require_index(id)?;
        self.position(i).ok_or_else(|| Error::NotPending(id.to_string()))
    }
}

/// The nested data sets of a session, as corpus indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPartitions {
    pub universe_size: usize,
    pub u_prime: Vec<usize>,
    pub labeled: BTreeMap<usize, u8>,
    pub pseudo: Vec<usize>,
    /// Dimensions carrying a synthetic sample.
    pub synthetic: Vec<usize>,
    pub epoch: usize,
}

impl DataPartitions {
    /// `L ⊆ U′ ⊆ U`, `P ⊆ U′`, `P ∩ L = ∅`.
    pub fn check(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvariantViolation(m));
        if let Some(&i) = self.u_prime.iter().find(|&&i| i >= self.universe_size) {
            return fail(format!("pool index {i} outside corpus of {}", self.universe_size));
        }
        let pool: HashSet<usize> = self.u_prime.iter().copied().collect();
        if pool.len() != self.u_prime.len() {
            return fail("duplicate pool entries".into());
        }
        if let Some(i) = self.labeled.keys().find(|i| !pool.contains(i)) {
            return fail(format!("labeled item {i} outside the pool"));
        }
        for &i in &self.pseudo {
            if !pool.contains(&i) {
                return fail(format!("pseudo-labeled item {i} outside the pool"));
            }
            if self.labeled.contains_key(&i) {
                return fail(format!("item {i} is both labeled and pseudo-labeled"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    AwaitingInitialLabels,
    AwaitingFeedback,
    /// The configured schedule is complete.
    Finished,
    /// Every pool item has been labeled.
    Exhausted,
}

/// One answered query: the item label and optional feature-level feedback.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub item_id: String,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<FeatureFeedback>,
}

impl Answer {
    pub fn label_only(item_id: impl Into<String>, label: u8) -> Self {
        Self {
            item_id: item_id.into(),
            label,
            feedback: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Started {
        config: SessionConfig,
        pool_fingerprint: String,
        pool_size: usize,
        pool_is_corpus: bool,
        initial_batch: Vec<String>,
    },
    InitialLabels {
        labels: Vec<(String, u8)>,
    },
    FeedbackReceived {
        epoch: usize,
        answers: Vec<Answer>,
    },
    ModelTrained {
        epoch: usize,
        snapshot_hash: String,
        labeled: usize,
        pseudo: [usize; 2],
        synthetic: usize,
        masked: usize,
        stub: bool,
    },
    BatchIssued {
        epoch: usize,
        strategy: Strategy,
        items: Vec<String>,
    },
    Finished {
        epoch: usize,
    },
    Exhausted {
        epoch: usize,
    },
    /// Free-form measurements appended by callers; ignored by replay.
    Metrics {
        epoch: usize,
        values: BTreeMap<String, f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Pending {
    epoch: usize,
    items: Vec<usize>,
    remaining: BTreeSet<usize>,
}

/// A queried item with the model's current opinion of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainedItem {
    pub index: usize,
    pub item_id: String,
    pub predicted_label: u8,
    pub probs: [f64; 2],
    pub explanation: Explanation,
}

#[derive(Debug, Clone)]
pub struct Session {
    ctx: Arc<PoolContext>,
    config: SessionConfig,
    /// Pool position -> label.
    labeled: BTreeMap<usize, u8>,
    /// Entries indexed by pool position.
    pseudo: PseudoLabelSet,
    synthetic: SyntheticSet,
    ledger: MaskLedger,
    model: Option<PreferenceModel>,
    epoch: usize,
    pending: Option<Pending>,
    status: Status,
    flags: Vec<String>,
    events: Vec<SessionEvent>,
}

impl Session {
    /// Draws the initial labeling request from the shared pool.
    pub fn start(ctx: Arc<PoolContext>, config: SessionConfig) -> Result<Self> {
        config.validate()?;
        if config.initial_sample > ctx.len() {
            return Err(Error::SampleTooLarge {
                m: config.initial_sample,
                n: ctx.len(),
            });
        }
        let seed = derive_seed(config.seed, TAG_INITIAL);
        let initial: Vec<usize> = match config.initial_sampling {
            InitialSampling::Diversity => proportional_draw(&ctx.clustering, config.initial_sample, DrawMode::Mixed, seed)?,
            InitialSampling::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                index::sample(&mut rng, ctx.len(), config.initial_sample).into_vec()
            }
        };
        let mut flags = Vec::new();
        if ctx.pool_is_corpus {
            flags.push(format!("pool equals corpus ({} items)", ctx.len()));
        }
        let mut s = Self {
            config,
            labeled: BTreeMap::new(),
            pseudo: PseudoLabelSet::default(),
            synthetic: SyntheticSet::default(),
            ledger: MaskLedger::default(),
            model: None,
            epoch: 0,
            pending: Some(Pending {
                epoch: 0,
                remaining: initial.iter().copied().collect(),
                items: initial.clone(),
            }),
            status: Status::AwaitingInitialLabels,
            flags,
            events: Vec::new(),
            ctx,
        };
        s.events.push(SessionEvent::Started {
            config: s.config.clone(),
            pool_fingerprint: s.ctx.fingerprint().to_string(),
            pool_size: s.ctx.len(),
            pool_is_corpus: s.ctx.pool_is_corpus,
            initial_batch: s.ids(&initial),
        });
        Ok(s)
    }

    fn ids(&self, positions: &[usize]) -> Vec<String> {
        positions.iter().map(|&p| self.ctx.id(p).to_string()).collect()
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn context(&self) -> &Arc<PoolContext> {
        &self.ctx
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn model(&self) -> Option<&PreferenceModel> {
        self.model.as_ref()
    }

    pub fn ledger(&self) -> &MaskLedger {
        &self.ledger
    }

    pub fn synthetic(&self) -> &SyntheticSet {
        &self.synthetic
    }

    pub fn flags(&self) -> &[String] {
        &self.flags
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    /// Logs metric values for the current epoch; non-finite values are
    /// dropped since the log is JSON.
    pub fn record_metrics(&mut self, mut values: BTreeMap<String, f64>) {
        values.retain(|_, v| v.is_finite());
        self.events.push(SessionEvent::Metrics {
            epoch: self.epoch,
            values,
        });
    }

    /// Corpus indices still awaiting an answer, in issue order.
    pub fn pending(&self) -> Vec<usize> {
        match &self.pending {
            Some(p) => p
                .items
                .iter()
                .filter(|i| p.remaining.contains(i))
                .map(|&i| self.ctx.pool[i])
                .collect(),
            None => Vec::new(),
        }
    }

    pub fn pending_ids(&self) -> Vec<String> {
        self.pending().iter().map(|&i| self.ctx.corpus.item(i).id.clone()).collect()
    }

    /// Epoch the pending batch will produce once answered.
    pub fn pending_epoch(&self) -> Option<usize> {
        self.pending.as_ref().map(|p| p.epoch)
    }

    /// User labels as corpus index -> label.
    pub fn labeled(&self) -> BTreeMap<usize, u8> {
        self.labeled.iter().map(|(&p, &l)| (self.ctx.pool[p], l)).collect()
    }

    pub fn pseudo_labels(&self) -> Vec<(usize, u8)> {
        self.pseudo
            .entries
            .iter()
            .map(|e| (self.ctx.pool[e.index], e.label))
            .collect()
    }

    pub fn partitions(&self) -> DataPartitions {
        DataPartitions {
            universe_size: self.ctx.corpus.len(),
            u_prime: self.ctx.pool.clone(),
            labeled: self.labeled(),
            pseudo: self.pseudo.entries.iter().map(|e| self.ctx.pool[e.index]).collect(),
            synthetic: self.synthetic.samples.keys().copied().collect(),
            epoch: self.epoch,
        }
    }

    /// Corpus indices of unlabeled pool items, the evaluation set.
    pub fn unlabeled(&self) -> Vec<usize> {
        (0..self.ctx.len())
            .filter(|p| !self.labeled.contains_key(p))
            .map(|p| self.ctx.pool[p])
            .collect()
    }

    /// Checks the set hierarchy plus model/pending consistency.
    pub fn check_invariants(&self) -> Result<()> {
        self.partitions().check()?;
        let fail = |m: String| Err(Error::InvariantViolation(m));
        if let Some(m) = &self.model {
            if m.epoch != self.epoch {
                return fail(format!("model epoch {} != session epoch {}", m.epoch, self.epoch));
            }
            if let Some(d) = m.mask.iter().find(|&&d| m.coefficients[d] != 0.0) {
                return fail(format!("masked dimension {d} has a non-zero coefficient"));
            }
        }
        if let Some(p) = &self.pending {
            if let Some(i) = p.remaining.iter().find(|i| self.labeled.contains_key(i)) {
                return fail(format!("pending item {} already labeled", self.ctx.id(*i)));
            }
        }
        if self.synthetic.samples.keys().any(|d| self.ledger.is_masked(*d)) {
            return fail("synthetic sample on a masked dimension".into());
        }
        Ok(())
    }

    fn require_status(&self, want: Status) -> Result<()> {
        if self.status != want {
            return Err(Error::Protocol(format!("expected status {want:?}, session is {:?}", self.status)));
        }
        Ok(())
    }

    /// Answers for the initial request; trains the first model and issues
    /// the first query batch.
    pub fn submit_initial_labels(&mut self, labels: &[(String, u8)]) -> Result<()> {
        self.require_status(Status::AwaitingInitialLabels)?;
        let pending = self.pending.as_ref().expect("initial batch pending");
        let mut given = BTreeMap::new();
        for (id, l) in labels {
            if *l > 1 {
                return Err(Error::InvalidConfig(format!("label for `{id}` must be 0 or 1, got {l}")));
            }
            let p = self.ctx.position_of_id(id)?;
            if !pending.remaining.contains(&p) {
                return Err(Error::NotPending(id.clone()));
            }
            if given.insert(p, *l).is_some() {
                return Err(Error::Protocol(format!("item `{id}` labeled twice")));
            }
        }
        let missing: Vec<String> = pending
            .items
            .iter()
            .filter(|p| !given.contains_key(p))
            .map(|&p| self.ctx.id(p).to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingLabels(missing));
        }
        self.events.push(SessionEvent::InitialLabels {
            labels: labels.to_vec(),
        });
        self.labeled = given;
        self.pending = None;
        self.retrain()?;
        self.issue_next()?;
        debug_assert!(self.check_invariants().is_ok());
        Ok(())
    }

    /// Answers for (part of) the pending query batch. Under per-batch
    /// updates the answers must cover the whole batch.
    pub fn submit_feedback(&mut self, answers: &[Answer]) -> Result<()> {
        self.require_status(Status::AwaitingFeedback)?;
        let pending = self.pending.as_ref().expect("query batch pending");
        if answers.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut seen = BTreeSet::new();
        let mut resolved = Vec::with_capacity(answers.len());
        for a in answers {
            if a.label > 1 {
                return Err(Error::InvalidConfig(format!("label for `{}` must be 0 or 1, got {}", a.item_id, a.label)));
            }
            let p = self.ctx.position_of_id(&a.item_id)?;
            if !pending.remaining.contains(&p) {
                return Err(Error::NotPending(a.item_id.clone()));
            }
            if !seen.insert(p) {
                return Err(Error::Protocol(format!("item `{}` answered twice", a.item_id)));
            }
            if let Some(fb) = &a.feedback {
                if fb.item_id != a.item_id || fb.label != a.label {
                    return Err(Error::Protocol(format!("feedback for `{}` disagrees with its answer", a.item_id)));
                }
                fb.validate(self.ctx.corpus.item(self.ctx.pool[p])).map_err(|e| match e {
                    Error::IncompleteFeedback { item, missing } => Error::IncompleteFeedback {
                        item,
                        missing: self.names(&missing),
                    },
                    Error::ForeignFeedback { item, extra } => Error::ForeignFeedback {
                        item,
                        extra: self.names(&extra),
                    },
                    other => other,
                })?;
            }
            resolved.push((p, a));
        }
        if self.config.update_granularity == UpdateGranularity::PerBatch && seen != pending.remaining {
            let missing: Vec<String> = pending
                .remaining
                .iter()
                .filter(|p| !seen.contains(p))
                .map(|&p| self.ctx.id(p).to_string())
                .collect();
            return Err(Error::MissingLabels(missing));
        }

        let epoch = self.epoch + 1;
        self.events.push(SessionEvent::FeedbackReceived {
            epoch,
            answers: answers.to_vec(),
        });
        for (p, a) in resolved {
            self.labeled.insert(p, a.label);
            if self.config.feature_feedback {
                if let Some(fb) = &a.feedback {
                    let item = self.ctx.corpus.item(self.ctx.pool[p]);
                    apply_feedback_named(fb, item, &self.ctx.corpus.universe, &mut self.ledger, &mut self.synthetic, epoch)?;
                }
            }
        }
        let pending = self.pending.as_mut().expect("query batch pending");
        pending.remaining.retain(|p| !seen.contains(p));
        let batch_done = pending.remaining.is_empty();
        self.epoch = epoch;
        self.retrain()?;
        if batch_done {
            self.pending = None;
            self.issue_next()?;
        }
        debug_assert!(self.check_invariants().is_ok());
        Ok(())
    }

    // Validation errors carry `#dim` placeholders; swap in feature names.
    fn names(&self, placeholders: &[String]) -> Vec<String> {
        placeholders
            .iter()
            .map(|s| {
                s.strip_prefix('#')
                    .and_then(|d| d.parse::<usize>().ok())
                    .map(|d| self.ctx.corpus.universe.name(d).to_string())
                    .unwrap_or_else(|| s.clone())
            })
            .collect()
    }

    fn labeled_corpus(&self) -> Vec<(usize, u8)> {
        self.labeled.iter().map(|(&p, &l)| (self.ctx.pool[p], l)).collect()
    }

    fn retrain(&mut self) -> Result<()> {
        self.pseudo = if self.config.use_ssl {
            let labels: Vec<(usize, u8)> = self.labeled.iter().map(|(&p, &l)| (p, l)).collect();
            let soft = spread_on(&self.ctx.graph, &labels, &self.config.spread)?;
            if !soft.converged {
                self.flags.push(format!("label spreading did not converge at epoch {}", self.epoch));
            }
            let labeled: HashSet<usize> = self.labeled.keys().copied().collect();
            gate_pseudo_labels(&soft, &labeled, self.config.entropy_gate)
        } else {
            PseudoLabelSet::default()
        };
        let data = assemble_training_set(
            &self.ctx.corpus,
            &self.labeled_corpus(),
            &self.pseudo_labels(),
            &self.synthetic,
            &self.ledger,
            self.config.synthetic_weight,
        )?;
        let mut model = match train(&data, &self.config.train) {
            Ok(m) => m,
            Err(Error::DegenerateLabels) => {
                self.flags.push(format!("single-class training data at epoch {}; using prior stub", self.epoch));
                PreferenceModel::majority_stub(data.dim, &data.mask, data.class_counts())
            }
            Err(e) => return Err(e),
        };
        model.epoch = self.epoch;
        model.universe = self.ctx.corpus.universe.fingerprint();
        self.events.push(SessionEvent::ModelTrained {
            epoch: self.epoch,
            snapshot_hash: model.snapshot_hash(),
            labeled: self.labeled.len(),
            pseudo: self.pseudo.class_counts(),
            synthetic: self.synthetic.len(),
            masked: self.ledger.masked.len(),
            stub: model.stub,
        });
        self.model = Some(model);
        Ok(())
    }

    /// Uncertainty of every pool position under the current model.
    pub fn pool_uncertainty(&self) -> Result<Vec<f64>> {
        let model = self
            .model
            .as_ref()
            .ok_or_else(|| Error::Protocol("no model trained yet".into()))?;
        self.ctx
            .pool
            .iter()
            .map(|&i| self.config.metric.score(&model.predict_proba(self.ctx.corpus.item(i))?))
            .collect()
    }

    fn issue_next(&mut self) -> Result<()> {
        let next = self.epoch + 1;
        let Some(size) = self.config.batch_size(next) else {
            self.status = Status::Finished;
            self.events.push(SessionEvent::Finished { epoch: self.epoch });
            return Ok(());
        };
        let pool: Vec<usize> = (0..self.ctx.len()).filter(|p| !self.labeled.contains_key(p)).collect();
        if pool.is_empty() {
            self.status = Status::Exhausted;
            self.events.push(SessionEvent::Exhausted { epoch: self.epoch });
            return Ok(());
        }
        let m = size.min(pool.len());
        let scores = self.pool_uncertainty()?;
        let batch = select(
            self.config.strategy,
            &pool,
            &scores,
            Some(&self.ctx.clustering),
            m,
            derive_seed(self.config.seed, TAG_QUERY + next as u64),
            &self.config.select,
        )?;
        self.events.push(SessionEvent::BatchIssued {
            epoch: next,
            strategy: self.config.strategy,
            items: self.ids(&batch),
        });
        self.pending = Some(Pending {
            epoch: next,
            remaining: batch.iter().copied().collect(),
            items: batch,
        });
        self.status = Status::AwaitingFeedback;
        Ok(())
    }

    /// Model predictions and explanations for the pending items.
    pub fn explanations_for_pending(&self) -> Result<Vec<ExplainedItem>> {
        self.pending().into_iter().map(|i| self.explain(i)).collect()
    }

    /// Prediction and explanation for any corpus item.
    pub fn explain(&self, corpus_index: usize) -> Result<ExplainedItem> {
        let model = self
            .model
            .as_ref()
            .ok_or_else(|| Error::Protocol("no model trained yet".into()))?;
        let x = self.ctx.corpus.item(corpus_index);
        let probs = model.predict_proba(x)?;
        Ok(ExplainedItem {
            index: corpus_index,
            item_id: x.id.clone(),
            predicted_label: (probs[1] > probs[0]) as u8,
            probs,
            explanation: explain_item(model, x, self.config.epsilon)?,
        })
    }

    /// Rebuilds a session from its event log and checks that every derived
    /// event (batches, model hashes, terminal events) matches.
    pub fn replay(ctx: Arc<PoolContext>, events: &[SessionEvent]) -> Result<Self> {
        let diverge = |index: usize, message: String| Error::ReplayDivergence { index, message };
        let (config, fingerprint) = match events.first() {
            Some(SessionEvent::Started {
                config,
                pool_fingerprint,
                ..
            }) => (config.clone(), pool_fingerprint),
            _ => return Err(diverge(0, "log does not begin with a start event".into())),
        };
        if fingerprint != ctx.fingerprint() {
            return Err(diverge(0, "pool fingerprint differs from the supplied context".into()));
        }
        let mut s = Session::start(ctx, config)?;
        for (k, e) in events.iter().enumerate().skip(1) {
            match e {
                SessionEvent::InitialLabels { labels } => s.submit_initial_labels(labels)?,
                SessionEvent::FeedbackReceived { answers, .. } => s.submit_feedback(answers)?,
                SessionEvent::Metrics { .. } => s.events.push(e.clone()),
                _ => {}
            }
            if let Some(mine) = s.events.get(k) {
                if mine != e {
                    return Err(diverge(k, format!("expected {e:?}, replay produced {mine:?}")));
                }
            } else {
                return Err(diverge(k, format!("replay produced no event for {e:?}")));
            }
        }
        if s.events.len() != events.len() {
            return Err(diverge(events.len(), "replay produced extra events".into()));
        }
        Ok(s)
    }
}

/// Parses a newline-delimited event log.
pub fn read_event_log(text: &str) -> Result<Vec<SessionEvent>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| Error::MalformedRecord {
                line: n + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_event_log(events: &[SessionEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("event serializes"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(n: usize) -> Arc<Corpus> {
        // Items share a "base" feature within blocks of 10 plus two own features.
        let sets = (0..n).map(|i| {
            (
                format!("r{i}"),
                vec![
                    format!("ingredient:base{}", i / 10),
                    format!("ingredient:a{}", i % 7),
                    format!("ingredient:b{}", i % 11),
                ],
            )
        });
        Arc::new(Corpus::from_feature_sets(sets).unwrap())
    }

    fn small_config() -> SessionConfig {
        SessionConfig {
            u_prime_size: 100,
            step1_clusters: 5,
            step2_clusters: 5,
            initial_sample: 10,
            recommendation_epochs: 2,
            ..SessionConfig::default()
        }
    }

    // Likes every item whose `a` feature index is even.
    fn truth(c: &Corpus, i: usize) -> u8 {
        let id: usize = c.items[i].id[1..].parse().unwrap();
        ((id % 7) % 2 == 0) as u8
    }

    #[test]
    fn pool_equals_corpus_when_small() {
        let c = corpus(100);
        let ctx = Arc::new(PoolContext::build(c, &small_config()).unwrap());
        assert!(ctx.pool_is_corpus);
        let s = Session::start(ctx, small_config()).unwrap();
        assert_eq!(s.pending().len(), 10);
        assert!(s.flags()[0].contains("pool equals corpus"));
    }

    #[test]
    fn subsampled_pool() {
        let c = corpus(120);
        let cfg = SessionConfig {
            u_prime_size: 60,
            ..small_config()
        };
        let ctx = PoolContext::build(c, &cfg).unwrap();
        assert_eq!(ctx.len(), 60);
        assert!(!ctx.pool_is_corpus);
    }

    #[test]
    fn start_is_deterministic() {
        let c = corpus(100);
        let a = Session::start(Arc::new(PoolContext::build(c.clone(), &small_config()).unwrap()), small_config()).unwrap();
        let b = Session::start(Arc::new(PoolContext::build(c, &small_config()).unwrap()), small_config()).unwrap();
        assert_eq!(a.pending(), b.pending());
    }

    #[test]
    fn too_small_corpus() {
        let cfg = SessionConfig {
            initial_sample: 50,
            ..small_config()
        };
        assert!(matches!(PoolContext::build(corpus(20), &cfg), Err(Error::SampleTooLarge { .. })));
    }

    #[test]
    fn full_schedule_and_replay() {
        let c = corpus(100);
        let cfg = small_config();
        let ctx = Arc::new(PoolContext::build(c.clone(), &cfg).unwrap());
        let mut s = Session::start(ctx.clone(), cfg.clone()).unwrap();
        let labels: Vec<(String, u8)> = s.pending().iter().map(|&i| (c.items[i].id.clone(), truth(&c, i))).collect();

        let mut short = labels.clone();
        short.pop();
        assert!(matches!(s.submit_initial_labels(&short), Err(Error::MissingLabels(m)) if m.len() == 1));

        s.submit_initial_labels(&labels).unwrap();
        assert_eq!(s.epoch(), 0);
        s.check_invariants().unwrap();
        while s.status() == Status::AwaitingFeedback {
            let answers: Vec<Answer> = s
                .pending()
                .iter()
                .map(|&i| Answer::label_only(c.items[i].id.clone(), truth(&c, i)))
                .collect();
            s.submit_feedback(&answers).unwrap();
            s.check_invariants().unwrap();
        }
        assert_eq!(s.status(), Status::Finished);
        assert_eq!(s.epoch(), 7);
        assert_eq!(s.labeled().len(), 10 + 5 + 2 * 5);

        let log = write_event_log(s.events());
        let back = Session::replay(ctx, &read_event_log(&log).unwrap()).unwrap();
        assert_eq!(back.model().unwrap().snapshot_hash(), s.model().unwrap().snapshot_hash());
    }

    #[test]
    fn phase_order_enforced() {
        let c = corpus(100);
        let ctx = Arc::new(PoolContext::build(c, &small_config()).unwrap());
        let mut s = Session::start(ctx, small_config()).unwrap();
        assert!(matches!(s.submit_feedback(&[Answer::label_only("r0", 1)]), Err(Error::Protocol(_))));
    }

    #[test]
    fn partitions_check_catches_overlap() {
        let p = DataPartitions {
            universe_size: 3,
            u_prime: vec![0, 1],
            labeled: BTreeMap::from([(0, 1)]),
            pseudo: vec![0],
            synthetic: vec![],
            epoch: 0,
        };
        assert!(p.check().is_err());
        let q = DataPartitions {
            labeled: BTreeMap::from([(2, 1)]),
            pseudo: vec![],
            ..p
        };
        assert!(q.check().is_err());
    }
}
