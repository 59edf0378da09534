//! HTTP session service for steering long-term generation one action at a
//! time. Each session owns one pipeline state; the model set is shared.

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use multiact::corpus::{ActionScript, ScriptEntry};
use multiact::kinematics::{Motion, Skeleton};
use multiact::pipeline::{init, run_traced, step, LoggedSegment, PipelineState, SegmentKind};
use multiact::Error;
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex as SessionLock;

use crate::artifacts::ModelSet;
use crate::error::{CliError, CliResult};

/// What a session needs to be rebuilt: its seed and the entries applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub id: String,
    pub seed: u64,
    pub created_at: u64,
    pub model_id: String,
    pub script: Vec<ScriptEntry>,
}

pub struct Session {
    pub record: SessionRecord,
    pub state: Option<PipelineState>,
}

pub struct AppState {
    pub models: Arc<ModelSet>,
    sessions: Mutex<HashMap<String, Arc<SessionLock<Session>>>>,
    /// Directory sessions are written through to, if any.
    store: Option<PathBuf>,
}

impl AppState {
    pub fn new(models: Arc<ModelSet>) -> Self {
        Self {
            models,
            sessions: Mutex::new(HashMap::new()),
            store: None,
        }
    }

    /// Persists sessions under `dir` and replays the ones already there.
    pub fn with_store(models: Arc<ModelSet>, dir: PathBuf) -> CliResult<Self> {
        fs::create_dir_all(&dir)?;
        let state = Self {
            models,
            sessions: Mutex::new(HashMap::new()),
            store: Some(dir.clone()),
        };
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                let record: SessionRecord = serde_json::from_str(&fs::read_to_string(&path)?)?;
                if record.model_id != state.models.model_id {
                    tracing::warn!(id = record.id, "skipping session made with other models");
                    continue;
                }
                let pipeline = if record.script.is_empty() {
                    None
                } else {
                    let script = ActionScript {
                        entries: record.script.clone(),
                    };
                    Some(run_traced(&script, &state.models.models, record.seed)?.0)
                };
                state.insert(Session {
                    record,
                    state: pipeline,
                });
            }
        }
        Ok(state)
    }

    fn insert(&self, session: Session) {
        let id = session.record.id.clone();
        self.lock_map().insert(id, Arc::new(SessionLock::new(session)));
    }

    fn lock_map(&self) -> std::sync::MutexGuard<'_, HashMap<String, Arc<SessionLock<Session>>>> {
        self.sessions.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn get(&self, id: &str) -> Result<Arc<SessionLock<Session>>, ApiError> {
        self.lock_map()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no session '{id}'")))
    }

    fn persist(&self, record: &SessionRecord) -> CliResult<()> {
        if let Some(dir) = &self.store {
            fs::write(
                dir.join(format!("{}.json", record.id)),
                serde_json::to_vec_pretty(record)?,
            )?;
        }
        Ok(())
    }

    pub fn session_count(&self) -> usize {
        self.lock_map().len()
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    valid_labels: Option<Vec<String>>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: error.into(),
                valid_labels: None,
            },
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::UnknownLabel(_)
            | Error::TransitionLabelRejected
            | Error::InvalidArgument(_)
            | Error::LengthOverflow { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl From<CliError> for ApiError {
    fn from(e: CliError) -> Self {
        match e {
            CliError::Core(e) => e.into(),
            other => Self::new(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiSegment {
    pub kind: SegmentKind,
    pub label: String,
    /// Index of the first frame in the session's global motion.
    pub start: usize,
    /// Flattened poses `[r (6), θ (6 per joint), x (3)]`.
    pub frames: Vec<Vec<f64>>,
    pub fps: f64,
    pub joint_names: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiLogEntry {
    pub kind: SegmentKind,
    pub label: String,
    pub label_id: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionResponse {
    pub session_id: String,
    pub seed: u64,
    pub fps: f64,
    pub joint_names: Vec<String>,
    pub frames: Vec<Vec<f64>>,
    pub segment_log: Vec<ApiLogEntry>,
    pub script: Vec<ScriptEntry>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub seed: u64,
    pub model_id: String,
    pub fps: f64,
    pub joint_names: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostAction {
    pub label: String,
    pub transition_len: Option<usize>,
    pub action_len: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ActionsPosted {
    pub step: usize,
    pub total_frames: usize,
    pub segments: Vec<ApiSegment>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ActionInfo {
    pub id: usize,
    pub name: String,
    pub default_transition_len: usize,
    pub default_action_len: usize,
}

fn frames_of(motion: &Motion, start: usize, end: usize) -> Vec<Vec<f64>> {
    motion.frames[start..end].iter().map(|p| p.flatten()).collect()
}

fn label_name(models: &ModelSet, id: usize) -> String {
    models.labels().name(id).unwrap_or("?").to_string()
}

fn api_segment(models: &ModelSet, motion: &Motion, seg: &LoggedSegment) -> ApiSegment {
    ApiSegment {
        kind: seg.kind,
        label: label_name(models, seg.label),
        start: seg.start,
        frames: frames_of(motion, seg.start, seg.end),
        fps: motion.fps,
        joint_names: models.skeleton().names.clone(),
    }
}

async fn healthz(State(app): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "model_id": app.models.model_id }))
}

async fn actions(State(app): State<Arc<AppState>>) -> Json<Vec<ActionInfo>> {
    let labels = app.models.labels();
    Json(
        labels
            .action_ids()
            .map(|id| {
                let (t, a) = app.models.manifest.lengths.default_lengths(id);
                ActionInfo {
                    id,
                    name: label_name(&app.models, id),
                    default_transition_len: t,
                    default_action_len: a,
                }
            })
            .collect(),
    )
}

async fn skeleton(State(app): State<Arc<AppState>>) -> Json<Skeleton> {
    Json(app.models.skeleton().clone())
}

async fn create_session(State(app): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateSession = if body.iter().all(u8::is_ascii_whitespace) {
        CreateSession::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?
    };
    let seed = req.seed.unwrap_or_else(rand::random);
    let id = loop {
        let candidate = format!("{:016x}", rand::random::<u64>());
        if !app.lock_map().contains_key(&candidate) {
            break candidate;
        }
    };
    let record = SessionRecord {
        id: id.clone(),
        seed,
        created_at: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        model_id: app.models.model_id.clone(),
        script: Vec::new(),
    };
    app.persist(&record)?;
    app.insert(Session { record, state: None });
    let body = SessionCreated {
        session_id: id,
        seed,
        model_id: app.models.model_id.clone(),
        fps: app.models.manifest.fps,
        joint_names: app.models.skeleton().names.clone(),
    };
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

fn resolve_entry(models: &ModelSet, req: &PostAction) -> Result<ScriptEntry, ApiError> {
    let labels = models.labels();
    let label = labels.action_id(req.label.trim()).map_err(|e| ApiError {
        status: StatusCode::UNPROCESSABLE_ENTITY,
        body: ErrorBody {
            error: e.to_string(),
            valid_labels: Some(labels.action_ids().map(|id| label_name(models, id)).collect()),
        },
    })?;
    let (t, a) = models.manifest.lengths.default_lengths(label);
    let entry = ScriptEntry {
        label,
        transition_length: req.transition_len.unwrap_or(t),
        action_length: req.action_len.unwrap_or(a),
    };
    if entry.transition_length == 0 || entry.action_length == 0 {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "lengths must be at least 1",
        ));
    }
    Ok(entry)
}

async fn post_action(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<PostAction>,
) -> Result<Json<ActionsPosted>, ApiError> {
    let lock = app.get(&id)?;
    let mut guard = lock.try_lock_owned().map_err(|_| {
        ApiError::new(
            StatusCode::CONFLICT,
            format!("session '{id}' is busy with another request"),
        )
    })?;
    let entry = resolve_entry(&app.models, &req)?;
    let models = app.models.clone();
    let (guard, before) = tokio::task::spawn_blocking(move || -> Result<_, ApiError> {
        let session = &mut *guard;
        let before = match &mut session.state {
            None => {
                session.state = Some(init(&entry, &models.models, session.record.seed)?);
                0
            }
            Some(state) => {
                let before = state.segment_log.len();
                step(state, &entry, &models.models)?;
                before
            }
        };
        session.record.script.push(entry);
        Ok((guard, before))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    app.persist(&guard.record)?;
    let state = guard.state.as_ref().expect("state set by the step above");
    let segments = state.segment_log[before..]
        .iter()
        .map(|seg| api_segment(&app.models, &state.global_motion, seg))
        .collect();
    Ok(Json(ActionsPosted {
        step: state.step,
        total_frames: state.global_motion.len(),
        segments,
    }))
}

async fn get_motion(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<MotionResponse>, ApiError> {
    let lock = app.get(&id)?;
    let session = lock.lock().await;
    let (frames, segment_log) = match &session.state {
        None => (Vec::new(), Vec::new()),
        Some(s) => (
            frames_of(&s.global_motion, 0, s.global_motion.len()),
            s.segment_log
                .iter()
                .map(|seg| ApiLogEntry {
                    kind: seg.kind,
                    label: label_name(&app.models, seg.label),
                    label_id: seg.label,
                    start: seg.start,
                    end: seg.end,
                })
                .collect(),
        ),
    };
    Ok(Json(MotionResponse {
        session_id: id,
        seed: session.record.seed,
        fps: app.models.manifest.fps,
        joint_names: app.models.skeleton().names.clone(),
        frames,
        segment_log,
        script: session.record.script.clone(),
    }))
}

async fn delete_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    if app.lock_map().remove(&id).is_none() {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("no session '{id}'")));
    }
    if let Some(dir) = &app.store {
        let path = dir.join(format!("{id}.json"));
        if path.exists() {
            fs::remove_file(path).map_err(CliError::from)?;
        }
    }
    Ok(StatusCode::NO_CONTENT)
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/actions", get(actions))
        .route("/skeleton", get(skeleton))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/actions", post(post_action))
        .route("/sessions/{id}/motion", get(get_motion))
        .route("/sessions/{id}", axum::routing::delete(delete_session))
        .with_state(app)
}

pub async fn serve(app: Arc<AppState>, addr: std::net::SocketAddr) -> CliResult<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(app)).await?;
    Ok(())
}
