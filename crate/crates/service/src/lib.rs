//! HTTP service for the four-phase human elicitation protocol: phase-1 batch
//! labeling, phase-2 explained single items with feature feedback, then a
//! binary and a rating test. Every session is persisted as a JSONL event log
//! and can be rebuilt from it.

pub mod error;
pub mod record;
pub mod wire;

use std::collections::HashMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path as UrlPath, Request, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde_json::Value;
use xal_core::corpus::Corpus;
use xal_core::feedback::FeedbackWire;
use xal_core::session::{PoolContext, SessionConfig, SessionEvent};

pub use error::ApiError;
use record::{read_log, write_log, HumanRecord, Phase, PHASE2_ITEMS};
use wire::*;

/// Shared, read-mostly service state.
pub struct AppState {
    corpus: Arc<Corpus>,
    corpus_id: String,
    log_dir: Option<PathBuf>,
    pools: Mutex<HashMap<String, Arc<PoolContext>>>,
    sessions: RwLock<HashMap<String, Arc<tokio::sync::Mutex<HumanRecord>>>>,
    next_id: AtomicU64,
}

impl AppState {
    /// `corpus_id` is the name clients may pass when creating a session.
    pub fn new(corpus: Arc<Corpus>, corpus_id: impl Into<String>, log_dir: Option<PathBuf>) -> Self {
        Self {
            corpus,
            corpus_id: corpus_id.into(),
            log_dir,
            pools: Mutex::new(HashMap::new()),
            sessions: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn corpus_id(&self) -> &str {
        &self.corpus_id
    }

    /// Pool caches are keyed by everything that shapes the pool.
    fn pool(&self, config: &SessionConfig) -> Result<Arc<PoolContext>, ApiError> {
        let key = serde_json::to_string(&(
            config.u_prime_size,
            config.step1_clusters,
            config.step2_clusters,
            config.initial_sampling,
            config.seed,
            config.spread.sparsify_below,
        ))
        .expect("key serializes");
        if let Some(ctx) = self.pools.lock().expect("pool cache").get(&key) {
            return Ok(ctx.clone());
        }
        let ctx = Arc::new(PoolContext::build(self.corpus.clone(), config)?);
        self.pools.lock().expect("pool cache").insert(key, ctx.clone());
        Ok(ctx)
    }

    fn session(&self, id: &str) -> Result<Arc<tokio::sync::Mutex<HumanRecord>>, ApiError> {
        self.sessions
            .read()
            .expect("session map")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::SessionNotFound(id.to_string()))
    }

    fn log_path(&self, id: &str) -> Option<PathBuf> {
        self.log_dir.as_ref().map(|d| d.join(format!("{id}.jsonl")))
    }

    fn persist(&self, record: &mut HumanRecord) -> Result<(), ApiError> {
        let id = record.id().to_string();
        let fresh = record.take_unpersisted();
        let Some(path) = self.log_path(&id) else {
            return Ok(());
        };
        if fresh.is_empty() {
            return Ok(());
        }
        let io = |e: std::io::Error| ApiError::Internal(format!("writing {}: {e}", path.display()));
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        f.write_all(write_log(fresh).as_bytes()).map_err(io)?;
        Ok(())
    }

    /// Creates a session from human-mode defaults plus `overrides`.
    pub fn create(&self, req: CreateSession) -> Result<(String, Arc<tokio::sync::Mutex<HumanRecord>>), ApiError> {
        if let Some(c) = &req.corpus {
            if *c != self.corpus_id {
                return Err(ApiError::UnknownCorpus(c.clone()));
            }
        }
        if let Some(m) = &req.mode {
            if m != "human" {
                return Err(ApiError::InvalidConfig(format!("mode `{m}` is not served; use `human`")));
            }
        }
        let config = merge_config(SessionConfig::human(), req.config)?;
        let ctx = self.pool(&config)?;
        let id = format!("s{:06}", self.next_id.fetch_add(1, Ordering::SeqCst));
        let mut record = HumanRecord::create(id.clone(), ctx, config)?;
        self.persist(&mut record)?;
        let handle = Arc::new(tokio::sync::Mutex::new(record));
        self.sessions.write().expect("session map").insert(id.clone(), handle.clone());
        Ok((id, handle))
    }

    /// Rebuilds every session log found in the log directory. Returns the
    /// number of sessions restored.
    pub fn restore(&self) -> Result<usize, ApiError> {
        let Some(dir) = &self.log_dir else {
            return Ok(0);
        };
        let io = |e: std::io::Error| ApiError::Internal(format!("reading {}: {e}", dir.display()));
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        for path in &paths {
            let record = self.replay_file(path)?;
            let n: u64 = record.id().trim_start_matches('s').parse().unwrap_or(0);
            self.next_id.fetch_max(n + 1, Ordering::SeqCst);
            self.sessions
                .write()
                .expect("session map")
                .insert(record.id().to_string(), Arc::new(tokio::sync::Mutex::new(record)));
        }
        Ok(paths.len())
    }

    /// Replays one session log against this service's corpus.
    pub fn replay_file(&self, path: &Path) -> Result<HumanRecord, ApiError> {
        let text = std::fs::read_to_string(path).map_err(|e| ApiError::Internal(format!("reading {}: {e}", path.display())))?;
        let events = read_log(&text)?;
        let config = events
            .iter()
            .find_map(|e| match e {
                record::RecordEvent::Core {
                    event: SessionEvent::Started { config, .. },
                } => Some(config.clone()),
                _ => None,
            })
            .ok_or_else(|| ApiError::Replay(format!("{}: no session start", path.display())))?;
        HumanRecord::replay(self.pool(&config)?, &events)
    }
}

fn merge_config(base: SessionConfig, overrides: Option<Value>) -> Result<SessionConfig, ApiError> {
    let Some(overrides) = overrides else {
        return Ok(base);
    };
    let Value::Object(fields) = overrides else {
        return Err(ApiError::InvalidConfig("config must be an object".into()));
    };
    let mut merged = serde_json::to_value(&base).expect("config serializes");
    let target = merged.as_object_mut().expect("config is an object");
    for (k, v) in fields {
        target.insert(k, v);
    }
    let config: SessionConfig = serde_json::from_value(merged).map_err(|e| ApiError::InvalidConfig(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

/// JSON extractor whose rejections use the service error body.
pub struct ApiJson<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for ApiJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        Json::<T>::from_request(req, state)
            .await
            .map(|Json(v)| ApiJson(v))
            .map_err(|e: JsonRejection| ApiError::BadRequest(e.body_text()))
    }
}

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/phase1", post(post_phase1))
        .route("/sessions/{id}/phase2", get(get_phase2).post(post_phase2))
        .route("/sessions/{id}/binary-test", post(post_binary))
        .route("/sessions/{id}/rating-test", post(post_rating))
        .route("/sessions/{id}/metrics", get(get_metrics))
        .with_state(state)
}

/// Binds `addr` and serves until ctrl-c.
pub async fn serve(state: Shared, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

fn display(record: &HumanRecord, ids: &[String]) -> Vec<DisplayItem> {
    let corpus = &record.session().context().corpus;
    ids.iter()
        .filter_map(|id| corpus.index_of(id))
        .map(|i| DisplayItem::new(corpus, corpus.item(i)))
        .collect()
}

fn phase2_item(record: &HumanRecord) -> Result<Phase2Item, ApiError> {
    let (step, e) = record.phase2_current()?;
    Ok(Phase2Item {
        step,
        of: PHASE2_ITEMS,
        view: ExplainedView::new(&record.session().context().corpus, &e),
    })
}

fn rating_items(record: &HumanRecord) -> Result<Vec<PredictedItem>, ApiError> {
    let corpus = &record.session().context().corpus;
    record
        .rating_items()
        .iter()
        .map(|id| {
            let e = record.predict(id)?;
            Ok(PredictedItem {
                item: DisplayItem::new(corpus, corpus.item(e.index)),
                predicted_label: e.predicted_label,
                probability_like: e.probs[1],
            })
        })
        .collect()
}

fn view(record: &HumanRecord) -> Result<SessionView, ApiError> {
    let phase = record.phase();
    Ok(SessionView {
        session_id: record.id().to_string(),
        mode: "human".to_string(),
        status: phase,
        epoch: record.session().epoch(),
        config: record.session().config().clone(),
        flags: record.session().flags().to_vec(),
        phase1_items: if phase == Phase::Phase1 {
            display(record, &record.phase1_items())
        } else {
            Vec::new()
        },
        phase2_item: (phase == Phase::Phase2).then(|| phase2_item(record)).transpose()?,
        binary_items: if phase == Phase::BinaryTest {
            display(record, record.binary_items())
        } else {
            Vec::new()
        },
        rating_items: if phase == Phase::RatingTest {
            rating_items(record)?
        } else {
            Vec::new()
        },
        summary: record.summary().cloned(),
    })
}

async fn create_session(State(state): State<Shared>, body: axum::body::Bytes) -> Result<Response, ApiError> {
    let req: CreateSession = if body.iter().all(u8::is_ascii_whitespace) {
        CreateSession::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::BadRequest(e.to_string()))?
    };
    let (id, handle) = state.create(req)?;
    let record = handle.lock().await;
    let created = CreatedSession {
        session_id: id,
        status: record.phase(),
        config: record.session().config().clone(),
        items: display(&record, &record.phase1_items()),
    };
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

async fn get_session(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Json<SessionView>, ApiError> {
    let handle = state.session(&id)?;
    let record = handle.lock().await;
    Ok(Json(view(&record)?))
}

async fn post_phase1(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
    ApiJson(body): ApiJson<LabelSubmission>,
) -> Result<Json<Phase2Item>, ApiError> {
    let handle = state.session(&id)?;
    let mut record = handle.lock().await;
    let labels: Vec<(String, u8)> = body.labels.into_iter().map(|a| (a.item_id, a.label)).collect();
    let result = record.submit_phase1(&labels);
    state.persist(&mut record)?;
    result?;
    Ok(Json(phase2_item(&record)?))
}

async fn get_phase2(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Json<Phase2Item>, ApiError> {
    let handle = state.session(&id)?;
    let record = handle.lock().await;
    Ok(Json(phase2_item(&record)?))
}

async fn post_phase2(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
    ApiJson(body): ApiJson<FeedbackWire>,
) -> Result<Json<Phase2Response>, ApiError> {
    let handle = state.session(&id)?;
    let mut record = handle.lock().await;
    let result = record.submit_phase2(&body);
    state.persist(&mut record)?;
    result?;
    Ok(Json(match record.phase() {
        Phase::Phase2 => Phase2Response {
            status: Phase::Phase2,
            next: Some(phase2_item(&record)?),
            binary_items: Vec::new(),
        },
        phase => Phase2Response {
            status: phase,
            next: None,
            binary_items: display(&record, record.binary_items()),
        },
    }))
}

async fn post_binary(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
    ApiJson(body): ApiJson<BinarySubmission>,
) -> Result<Json<BinaryResponse>, ApiError> {
    let handle = state.session(&id)?;
    let mut record = handle.lock().await;
    let answers: Vec<(String, u8)> = body.answers.into_iter().map(|a| (a.item_id, a.label)).collect();
    let result = record.submit_binary(&answers);
    state.persist(&mut record)?;
    let outcome = result?;
    Ok(Json(BinaryResponse {
        status: record.phase(),
        f1: outcome.f1,
        repeat_mismatches: outcome.repeat_mismatches,
        inconsistent: outcome.inconsistent,
        rating_items: rating_items(&record)?,
    }))
}

async fn post_rating(
    State(state): State<Shared>,
    UrlPath(id): UrlPath<String>,
    ApiJson(body): ApiJson<RatingSubmission>,
) -> Result<Json<record::MetricsSummary>, ApiError> {
    let handle = state.session(&id)?;
    let mut record = handle.lock().await;
    let answers: Vec<(String, u8)> = body.answers.into_iter().map(|a| (a.item_id, a.rating)).collect();
    let result = record.submit_rating(&answers);
    state.persist(&mut record)?;
    Ok(Json(result?))
}

async fn get_metrics(State(state): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Json<MetricsView>, ApiError> {
    let handle = state.session(&id)?;
    let record = handle.lock().await;
    let training = record
        .session()
        .events()
        .iter()
        .filter_map(|e| match e {
            SessionEvent::ModelTrained {
                epoch,
                snapshot_hash,
                labeled,
                pseudo,
                synthetic,
                masked,
                ..
            } => Some(TrainingPoint {
                epoch: *epoch,
                labeled: *labeled,
                pseudo: pseudo[0] + pseudo[1],
                synthetic: *synthetic,
                masked: *masked,
                snapshot_hash: snapshot_hash.clone(),
            }),
            _ => None,
        })
        .collect();
    Ok(Json(MetricsView {
        session_id: id,
        status: record.phase(),
        training,
        summary: record.summary().cloned(),
    }))
}
