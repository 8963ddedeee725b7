//! One person's pass through the four-phase protocol, recorded as an
//! append-only event log that can be replayed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use xal_core::bench::{mcc, Confusion};
use xal_core::corpus::ItemVector;
use xal_core::feedback::{FeatureFeedback, FeedbackWire};
use xal_core::sampler::test_sample;
use xal_core::session::{derive_seed, Answer, ExplainedItem, PoolContext, Session, SessionConfig, SessionEvent, Status};

use crate::error::ApiError;

pub const PHASE2_ITEMS: usize = 5;
pub const BINARY_NEW: usize = 20;
pub const BINARY_REPEATS: usize = 5;
pub const RATING_ITEMS: usize = 10;
pub const TEST_SIM_CAP: f64 = 0.25;
/// Repeat-item disagreements at or above this exclude the participant.
pub const MAX_MISMATCHES: usize = 2;
const TAG_REPEATS: u64 = 0x200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Phase1,
    Phase2,
    BinaryTest,
    RatingTest,
    Done,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Phase1 => "phase1",
            Phase::Phase2 => "phase2",
            Phase::BinaryTest => "binary_test",
            Phase::RatingTest => "rating_test",
            Phase::Done => "done",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryOutcome {
    /// F1 and MCC of the model's predictions on the new items; absent when
    /// no new item could be sampled.
    pub f1: Option<f64>,
    pub mcc: Option<f64>,
    pub scored: usize,
    pub repeat_mismatches: usize,
    pub inconsistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub binary: BinaryOutcome,
    /// Counts of ratings 1..=5.
    pub rating_histogram: [usize; 5],
    /// Mean rating over items the model predicted as liked / disliked.
    pub mean_rating_predicted_like: Option<f64>,
    pub mean_rating_predicted_dislike: Option<f64>,
    pub excluded: bool,
    pub labeled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecordEvent {
    Created {
        session_id: String,
        corpus: String,
    },
    Core {
        event: SessionEvent,
    },
    TestSets {
        binary: Vec<String>,
        repeats: Vec<String>,
        rating: Vec<String>,
        relaxed: bool,
    },
    BinaryAnswers {
        answers: Vec<(String, u8)>,
        outcome: BinaryOutcome,
    },
    RatingAnswers {
        answers: Vec<(String, u8)>,
    },
    Summary {
        summary: MetricsSummary,
    },
}

#[derive(Debug)]
pub struct HumanRecord {
    id: String,
    phase: Phase,
    session: Session,
    log: Vec<RecordEvent>,
    core_logged: usize,
    persisted: usize,
    phase1: BTreeMap<String, u8>,
    binary: Vec<String>,
    repeats: Vec<String>,
    rating: Vec<String>,
    outcome: Option<BinaryOutcome>,
    summary: Option<MetricsSummary>,
}

impl HumanRecord {
    /// Starts a session; the config must describe the four-phase protocol
    /// (single-item phase-2 steps and no further epochs).
    pub fn create(id: impl Into<String>, ctx: Arc<PoolContext>, config: SessionConfig) -> Result<Self, ApiError> {
        check_protocol(&config)?;
        let corpus = ctx.corpus.fingerprint();
        let session = Session::start(ctx, config)?;
        let id = id.into();
        let mut r = Self {
            log: vec![RecordEvent::Created {
                session_id: id.clone(),
                corpus,
            }],
            id,
            phase: Phase::Phase1,
            session,
            core_logged: 0,
            persisted: 0,
            phase1: BTreeMap::new(),
            binary: Vec::new(),
            repeats: Vec::new(),
            rating: Vec::new(),
            outcome: None,
            summary: None,
        };
        r.sync_core();
        Ok(r)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn log(&self) -> &[RecordEvent] {
        &self.log
    }

    pub fn summary(&self) -> Option<&MetricsSummary> {
        self.summary.as_ref()
    }

    pub fn outcome(&self) -> Option<&BinaryOutcome> {
        self.outcome.as_ref()
    }

    /// Events not yet handed out by this method.
    pub fn take_unpersisted(&mut self) -> &[RecordEvent] {
        let from = self.persisted;
        self.persisted = self.log.len();
        &self.log[from..]
    }

    fn require(&self, want: Phase) -> Result<(), ApiError> {
        if self.phase != want {
            return Err(ApiError::PhaseOrder {
                expected: want,
                actual: self.phase,
            });
        }
        Ok(())
    }

    fn sync_core(&mut self) {
        for e in &self.session.events()[self.core_logged..] {
            self.log.push(RecordEvent::Core { event: e.clone() });
        }
        self.core_logged = self.session.events().len();
    }

    fn item(&self, id: &str) -> Result<&ItemVector, ApiError> {
        let corpus = &self.session.context().corpus;
        corpus
            .index_of(id)
            .map(|i| corpus.item(i))
            .ok_or_else(|| ApiError::UnexpectedItem(id.to_string()))
    }

    pub fn phase1_items(&self) -> Vec<String> {
        match self.phase {
            Phase::Phase1 => self.session.pending_ids(),
            _ => self.phase1.keys().cloned().collect(),
        }
    }

    pub fn submit_phase1(&mut self, labels: &[(String, u8)]) -> Result<(), ApiError> {
        self.require(Phase::Phase1)?;
        let result = self.session.submit_initial_labels(labels);
        self.sync_core();
        result?;
        self.phase1 = labels.iter().cloned().collect();
        self.advance_after_phase2_step()
    }

    /// The item currently awaiting phase-2 feedback.
    pub fn phase2_current(&self) -> Result<(usize, ExplainedItem), ApiError> {
        self.require(Phase::Phase2)?;
        let e = self
            .session
            .explanations_for_pending()?
            .into_iter()
            .next()
            .ok_or_else(|| ApiError::Internal("no phase-2 item pending".into()))?;
        Ok((self.phase2_done() + 1, e))
    }

    pub fn phase2_done(&self) -> usize {
        self.session.epoch()
    }

    pub fn submit_phase2(&mut self, wire: &FeedbackWire) -> Result<(), ApiError> {
        self.require(Phase::Phase2)?;
        let fb = FeatureFeedback::from_wire(wire, &self.session.context().corpus.universe)
            .map_err(|e| ApiError::InvalidFeedback(e.to_string()))?;
        self.submit_phase2_answer(Answer {
            item_id: fb.item_id.clone(),
            label: fb.label,
            feedback: Some(fb),
        })
    }

    fn submit_phase2_answer(&mut self, answer: Answer) -> Result<(), ApiError> {
        self.require(Phase::Phase2)?;
        let result = self.session.submit_feedback(&[answer]);
        self.sync_core();
        result?;
        self.advance_after_phase2_step()
    }

    fn advance_after_phase2_step(&mut self) -> Result<(), ApiError> {
        match self.session.status() {
            Status::AwaitingFeedback => {
                self.phase = Phase::Phase2;
                Ok(())
            }
            Status::Finished | Status::Exhausted => self.build_test_sets(),
            Status::AwaitingInitialLabels => Err(ApiError::Internal("session still awaits initial labels".into())),
        }
    }

    /// Samples the most certain, mutually dissimilar unlabeled items: the
    /// first ones become new binary-test items and the rest rating items.
    /// Phase-1 repeats are mixed into the binary test.
    fn build_test_sets(&mut self) -> Result<(), ApiError> {
        let ctx = self.session.context().clone();
        let labeled = self.session.labeled();
        let pool: Vec<usize> = (0..ctx.len()).filter(|&p| !labeled.contains_key(&ctx.pool[p])).collect();
        let scores = self.session.pool_uncertainty()?;
        let items: Vec<&ItemVector> = ctx.pool.iter().map(|&i| ctx.corpus.item(i)).collect();
        let sample = test_sample(&pool, &items, &scores, (BINARY_NEW + RATING_ITEMS).min(pool.len()), TEST_SIM_CAP);
        let ids: Vec<String> = sample.indices.iter().map(|&p| ctx.id(p).to_string()).collect();
        let split = BINARY_NEW.min(ids.len());
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.session.config().seed, TAG_REPEATS));
        let phase1: Vec<String> = self.phase1.keys().cloned().collect();
        let mut repeats: Vec<String> = phase1
            .choose_multiple(&mut rng, BINARY_REPEATS.min(phase1.len()))
            .cloned()
            .collect();
        repeats.sort();
        let mut binary: Vec<String> = ids[..split].iter().chain(&repeats).cloned().collect();
        binary.shuffle(&mut rng);
        let rating = ids[split..].to_vec();
        self.log.push(RecordEvent::TestSets {
            binary: binary.clone(),
            repeats: repeats.clone(),
            rating: rating.clone(),
            relaxed: sample.relaxed,
        });
        self.binary = binary;
        self.repeats = repeats;
        self.rating = rating;
        self.phase = Phase::BinaryTest;
        Ok(())
    }

    pub fn binary_items(&self) -> &[String] {
        &self.binary
    }

    pub fn rating_items(&self) -> &[String] {
        &self.rating
    }

    pub fn submit_binary(&mut self, answers: &[(String, u8)]) -> Result<BinaryOutcome, ApiError> {
        self.require(Phase::BinaryTest)?;
        let given = complete_answers(&self.binary, answers, |l| {
            (l <= 1).then_some(()).ok_or_else(|| format!("label must be 0 or 1, got {l}"))
        })?;
        let repeats: BTreeSet<&String> = self.repeats.iter().collect();
        let (mut truth, mut predicted) = (Vec::new(), Vec::new());
        for id in self.binary.iter().filter(|id| !repeats.contains(id)) {
            truth.push(given[id]);
            predicted.push(self.predict(id)?.predicted_label);
        }
        let repeat_mismatches = self.repeats.iter().filter(|id| given[*id] != self.phase1[*id]).count();
        let scored = !truth.is_empty();
        let outcome = BinaryOutcome {
            f1: scored.then(|| Confusion::from_labels(&truth, &predicted).map(|c| c.f1())).transpose()?,
            mcc: scored.then(|| mcc(&truth, &predicted)).transpose()?,
            scored: truth.len(),
            repeat_mismatches,
            inconsistent: repeat_mismatches >= MAX_MISMATCHES,
        };
        self.log.push(RecordEvent::BinaryAnswers {
            answers: self.binary.iter().map(|id| (id.clone(), given[id])).collect(),
            outcome: outcome.clone(),
        });
        self.outcome = Some(outcome.clone());
        self.phase = Phase::RatingTest;
        Ok(outcome)
    }

    pub fn submit_rating(&mut self, answers: &[(String, u8)]) -> Result<MetricsSummary, ApiError> {
        self.require(Phase::RatingTest)?;
        let given = complete_answers(&self.rating, answers, |r| {
            (1..=5).contains(&r).then_some(()).ok_or_else(|| format!("rating must be 1..=5, got {r}"))
        })?;
        let mut histogram = [0usize; 5];
        let (mut like, mut dislike) = (Vec::new(), Vec::new());
        for id in &self.rating {
            let r = given[id];
            histogram[r as usize - 1] += 1;
            if self.predict(id)?.predicted_label == 1 {
                like.push(r as f64);
            } else {
                dislike.push(r as f64);
            }
        }
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let binary = self.outcome.clone().expect("binary test precedes rating test");
        let summary = MetricsSummary {
            excluded: binary.inconsistent,
            binary,
            rating_histogram: histogram,
            mean_rating_predicted_like: mean(&like),
            mean_rating_predicted_dislike: mean(&dislike),
            labeled: self.session.labeled().len(),
        };
        self.log.push(RecordEvent::RatingAnswers {
            answers: self.rating.iter().map(|id| (id.clone(), given[id])).collect(),
        });
        self.log.push(RecordEvent::Summary {
            summary: summary.clone(),
        });
        self.summary = Some(summary.clone());
        self.phase = Phase::Done;
        Ok(summary)
    }

    pub fn predict(&self, id: &str) -> Result<ExplainedItem, ApiError> {
        let corpus = &self.session.context().corpus;
        self.item(id)?;
        let index = corpus.index_of(id).expect("checked above");
        Ok(self.session.explain(index)?)
    }

    /// Re-executes every input event of `events` on a fresh session and
    /// requires the regenerated log to match it exactly.
    pub fn replay(ctx: Arc<PoolContext>, events: &[RecordEvent]) -> Result<Self, ApiError> {
        let diverge = |i: usize, m: String| ApiError::Replay(format!("event {i}: {m}"));
        let id = match events.first() {
            Some(RecordEvent::Created { session_id, corpus }) => {
                if *corpus != ctx.corpus.fingerprint() {
                    return Err(diverge(0, "log was written against a different corpus".into()));
                }
                session_id.clone()
            }
            _ => return Err(diverge(0, "log does not start with a creation event".into())),
        };
        let config = match events.get(1) {
            Some(RecordEvent::Core {
                event: SessionEvent::Started { config, .. },
            }) => config.clone(),
            _ => return Err(diverge(1, "missing session start".into())),
        };
        let mut r = Self::create(id, ctx, config)?;
        for (i, e) in events.iter().enumerate() {
            match e {
                RecordEvent::Core {
                    event: SessionEvent::InitialLabels { labels },
                } => r.submit_phase1(labels).map_err(|e| diverge(i, e.to_string()))?,
                RecordEvent::Core {
                    event: SessionEvent::FeedbackReceived { answers, .. },
                } => {
                    for a in answers {
                        r.submit_phase2_answer(a.clone()).map_err(|e| diverge(i, e.to_string()))?;
                    }
                }
                RecordEvent::BinaryAnswers { answers, .. } => {
                    r.submit_binary(answers).map_err(|e| diverge(i, e.to_string()))?;
                }
                RecordEvent::RatingAnswers { answers } => {
                    r.submit_rating(answers).map_err(|e| diverge(i, e.to_string()))?;
                }
                _ => {}
            }
        }
        if r.log.len() != events.len() {
            return Err(diverge(
                r.log.len().min(events.len()),
                format!("replay produced {} events, log has {}", r.log.len(), events.len()),
            ));
        }
        if let Some((i, _)) = r.log.iter().zip(events).enumerate().find(|(_, (a, b))| a != b) {
            return Err(diverge(i, "regenerated event differs from the log".into()));
        }
        r.persisted = r.log.len();
        Ok(r)
    }
}

fn check_protocol(config: &SessionConfig) -> Result<(), ApiError> {
    config.validate()?;
    if config.elicitation_batch != 1 || config.elicitation_epochs != PHASE2_ITEMS || config.recommendation_epochs != 0 {
        return Err(ApiError::InvalidConfig(format!(
            "phase 2 presents {PHASE2_ITEMS} items one at a time: elicitation_batch must be 1, elicitation_epochs {PHASE2_ITEMS} and recommendation_epochs 0"
        )));
    }
    Ok(())
}

fn complete_answers(
    expected: &[String],
    answers: &[(String, u8)],
    check: impl Fn(u8) -> Result<(), String>,
) -> Result<BTreeMap<String, u8>, ApiError> {
    let wanted: BTreeSet<&String> = expected.iter().collect();
    let mut given = BTreeMap::new();
    for (id, v) in answers {
        if !wanted.contains(id) {
            return Err(ApiError::UnexpectedItem(id.clone()));
        }
        check(*v).map_err(|m| ApiError::InvalidAnswer(format!("`{id}`: {m}")))?;
        if given.insert(id.clone(), *v).is_some() {
            return Err(ApiError::InvalidAnswer(format!("`{id}` answered twice")));
        }
    }
    let missing: Vec<String> = expected.iter().filter(|id| !given.contains_key(*id)).cloned().collect();
    if !missing.is_empty() {
        return Err(ApiError::Incomplete { missing });
    }
    Ok(given)
}

pub fn read_log(text: &str) -> Result<Vec<RecordEvent>, ApiError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| ApiError::Replay(format!("line {}: {e}", i + 1))))
        .collect()
}

pub fn write_log(events: &[RecordEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("events serialize"));
        out.push('\n');
    }
    out
}
