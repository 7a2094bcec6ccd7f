//! HTTP API for a pathologist-versus-algorithm scoring session: case manifests,
//! pre-generated tiles, score capture into an append-only log, and evaluation.

pub mod store;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use her2kit_core::eval::{evaluate_submission, rank, Criterion, EvalOptions, LeaderboardEntry, SubmissionResult};
use her2kit_core::ingest::{read_ground_truth, read_submission_dir, GroundTruthFile, SubmissionFile};
use her2kit_core::pyramid::{list_manifests, tile_path, CaseManifest};
use her2kit_core::types::{check_confidence, check_pcms};
use her2kit_core::{CaseId, Her2Score};
use serde::Serialize;
use serde_json::{json, Value};

/// Startup failures: unreadable inputs, bad tile root, unopenable log.
pub type BoxError = Box<dyn std::error::Error + Send + Sync>;

pub use store::{latest_predictions, read_log, EventStore, LogLine, ScoreEvent, StoreState};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Directory of `{case}/manifest.json` plus `{case}/{stain}/{z}/{x}_{y}.png`; may be absent.
    pub tile_root: Option<PathBuf>,
    pub ground_truth: GroundTruthFile,
    /// Machine-method submissions evaluated once at startup for comparison rows.
    pub machine: Vec<SubmissionFile>,
    pub log_path: PathBuf,
    pub eval: EvalOptions,
}

impl ServiceConfig {
    pub fn from_paths(tile_root: Option<&Path>, gt: &Path, machine_dir: Option<&Path>, log_path: &Path, eval: EvalOptions) -> Result<Self, BoxError> {
        if let Some(root) = tile_root {
            if !root.is_dir() {
                return Err(format!("tile root {} is not a directory", root.display()).into());
            }
        }
        Ok(Self {
            tile_root: tile_root.map(Path::to_path_buf),
            ground_truth: read_ground_truth(gt)?,
            machine: match machine_dir {
                Some(d) => read_submission_dir(d)?,
                None => Vec::new(),
            },
            log_path: log_path.to_path_buf(),
            eval,
        })
    }
}

pub struct AppState {
    pub config: ServiceConfig,
    pub manifests: BTreeMap<String, CaseManifest>,
    pub machine_results: Vec<SubmissionResult>,
    pub store: EventStore,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Result<Self, BoxError> {
        let manifests = match &config.tile_root {
            Some(root) => list_manifests(root)?.into_iter().map(|m| (m.case_id.clone(), m)).collect(),
            None => BTreeMap::new(),
        };
        let machine_results = config
            .machine
            .iter()
            .map(|s| evaluate_submission(&s.team, &config.ground_truth.rows, &s.rows, config.eval))
            .collect::<Result<Vec<_>, _>>()?;
        let store = EventStore::open(&config.log_path)?;
        Ok(Self {
            config,
            manifests,
            machine_results,
            store,
        })
    }

    fn known_case(&self, id: &str) -> bool {
        self.config.ground_truth.rows.iter().any(|r| r.case_id.as_str() == id)
    }

    /// Evaluates a rater's latest scores against the configured ground truth.
    pub fn rater_result(&self, state: &StoreState, rater: &str) -> Result<SubmissionResult, her2kit_core::Error> {
        evaluate_submission(rater, &self.config.ground_truth.rows, &state.latest_predictions(rater), self.config.eval)
    }
}

#[derive(Debug, Serialize)]
pub struct MachineRow {
    pub team: String,
    pub totals: her2kit_core::eval::Totals,
    pub evaluated_case_count: usize,
}

#[derive(Debug, Serialize)]
pub struct RaterResult {
    pub rater: String,
    pub result: SubmissionResult,
    pub machine: Vec<MachineRow>,
}

fn error(status: StatusCode, message: impl Into<String>, field: Option<&str>) -> Response {
    let mut body = json!({ "error": message.into() });
    if let Some(f) = field {
        body["field"] = json!(f);
    }
    (status, Json(body)).into_response()
}

fn withheld() -> Response {
    error(StatusCode::FORBIDDEN, "ground truth withheld until the session is closed", None)
}

async fn list_cases(State(app): State<Arc<AppState>>) -> Json<Vec<CaseManifest>> {
    Json(app.manifests.values().cloned().collect())
}

async fn get_case(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Response {
    match app.manifests.get(&id) {
        Some(m) => Json(m.clone()).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("unknown case {id}"), None),
    }
}

async fn get_tile(
    State(app): State<Arc<AppState>>,
    UrlPath((id, stain, z, x, file)): UrlPath<(String, String, String, String, String)>,
) -> Response {
    let not_found = || error(StatusCode::NOT_FOUND, "no such tile", None);
    let (Some(root), Some(m)) = (&app.config.tile_root, app.manifests.get(&id)) else {
        return not_found();
    };
    let Some(y) = file.strip_suffix(".png") else {
        return not_found();
    };
    let (Ok(z), Ok(x), Ok(y)) = (z.parse::<usize>(), x.parse::<u32>(), y.parse::<u32>()) else {
        return not_found();
    };
    if !m.tile_exists(&stain, z, x, y) {
        return not_found();
    }
    match tokio::fs::read(tile_path(root, &id, &stain, z, x, y)).await {
        Ok(bytes) => (
            [
                (header::CONTENT_TYPE, "image/png"),
                (header::CACHE_CONTROL, "public, max-age=31536000, immutable"),
            ],
            bytes,
        )
            .into_response(),
        Err(_) => not_found(),
    }
}

fn valid_rater(rater: &str) -> bool {
    let r = rater.trim();
    !r.is_empty() && r.len() <= 64 && r == rater && !r.contains(['/', '\\', ',', '"', '\n'])
}

async fn join(State(app): State<Arc<AppState>>, body: Bytes) -> Response {
    let Ok(v) = serde_json::from_slice::<Value>(&body) else {
        return error(StatusCode::BAD_REQUEST, "body is not JSON", None);
    };
    let Some(rater) = v.get("rater").and_then(Value::as_str).filter(|r| valid_rater(r)) else {
        return error(StatusCode::BAD_REQUEST, "rater must be a non-empty name", Some("rater"));
    };
    let rater = rater.to_string();
    match app.store.append_with(|t| LogLine::Joined { rater: rater.clone(), joined_at: t }) {
        Ok(_) => Json(json!({ "rater": rater })).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), None),
    }
}

fn parse_score(v: &Value) -> Option<Her2Score> {
    match v {
        Value::Number(n) => n.as_u64().and_then(|i| Her2Score::from_index(i as usize)),
        Value::String(s) => s.parse().ok(),
        _ => None,
    }
}

async fn post_score(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, body: Bytes) -> Response {
    let Ok(v) = serde_json::from_slice::<Value>(&body) else {
        return error(StatusCode::BAD_REQUEST, "body is not JSON", None);
    };
    let Some(rater) = v.get("rater").and_then(Value::as_str).filter(|r| valid_rater(r)) else {
        return error(StatusCode::BAD_REQUEST, "rater must be a non-empty name", Some("rater"));
    };
    let Some(score) = v.get("score").and_then(parse_score) else {
        return error(StatusCode::BAD_REQUEST, "score must be 0, 1, 2 or 3", Some("score"));
    };
    let confidence = match v.get("confidence").and_then(Value::as_f64).map(check_confidence) {
        Some(Ok(c)) => c,
        _ => return error(StatusCode::BAD_REQUEST, "confidence must be a number in [0, 1]", Some("confidence")),
    };
    let pcms = match v.get("pcms") {
        None | Some(Value::Null) => None,
        Some(p) => match p.as_f64().map(check_pcms) {
            Some(Ok(p)) => Some(p),
            _ => return error(StatusCode::BAD_REQUEST, "pcms must be a number in [0, 100]", Some("pcms")),
        },
    };
    if !app.known_case(&id) {
        return error(StatusCode::NOT_FOUND, format!("unknown case {id}"), None);
    }
    let rater = rater.to_string();
    let appended = app.store.append_with(|timestamp| {
        LogLine::Score(ScoreEvent {
            rater,
            case_id: CaseId::from(id.as_str()),
            score,
            pcms,
            confidence,
            timestamp,
        })
    });
    match appended {
        Ok(LogLine::Score(e)) => Json(json!({ "acknowledged": true, "event": e })).into_response(),
        Ok(_) => unreachable!("score line appended"),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), None),
    }
}

async fn get_result(State(app): State<Arc<AppState>>, UrlPath(rater): UrlPath<String>) -> Response {
    let state = app.store.snapshot();
    if !state.raters.contains(&rater) {
        return error(StatusCode::NOT_FOUND, format!("unknown rater {rater}"), None);
    }
    if !state.closed {
        return withheld();
    }
    match app.rater_result(&state, &rater) {
        Ok(result) => Json(RaterResult {
            rater,
            result,
            machine: app
                .machine_results
                .iter()
                .map(|r| MachineRow {
                    team: r.team.clone(),
                    totals: r.totals.clone(),
                    evaluated_case_count: r.evaluated_case_count,
                })
                .collect(),
        })
        .into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), None),
    }
}

/// All raters and machine methods, ranked under each criterion.
pub fn leaderboards(app: &AppState, state: &StoreState) -> Result<BTreeMap<&'static str, Vec<LeaderboardEntry>>, her2kit_core::Error> {
    let mut all = app.machine_results.clone();
    for rater in &state.raters {
        all.push(app.rater_result(state, rater)?);
    }
    let mut out = BTreeMap::new();
    if all.is_empty() {
        return Ok(out);
    }
    for c in Criterion::ALL {
        out.insert(c.name(), rank(&all, c)?);
    }
    Ok(out)
}

async fn get_leaderboard(State(app): State<Arc<AppState>>) -> Response {
    let state = app.store.snapshot();
    if !state.closed {
        return withheld();
    }
    match leaderboards(&app, &state) {
        Ok(b) => Json(b).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), None),
    }
}

async fn get_session(State(app): State<Arc<AppState>>) -> Json<Value> {
    let state = app.store.snapshot();
    Json(json!({ "closed": state.closed, "raters": state.raters }))
}

async fn close_session(State(app): State<Arc<AppState>>) -> Response {
    if app.store.with_state(|s| s.closed) {
        return Json(json!({ "closed": true })).into_response();
    }
    match app.store.append_with(|t| LogLine::Closed { session_closed_at: t }) {
        Ok(_) => Json(json!({ "closed": true })).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), None),
    }
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/cases", get(list_cases))
        .route("/api/cases/{id}", get(get_case))
        .route("/api/cases/{id}/{stain}/tiles/{z}/{x}/{y}", get(get_tile))
        .route("/api/cases/{id}/score", post(post_score))
        .route("/api/raters", post(join))
        .route("/api/raters/{rater}/result", get(get_result))
        .route("/api/leaderboard", get(get_leaderboard))
        .route("/api/session", get(get_session))
        .route("/api/session/close", post(close_session))
        .with_state(app)
}

pub async fn serve(config: ServiceConfig, addr: SocketAddr) -> Result<(), BoxError> {
    let app = Arc::new(AppState::new(config)?);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(app)).await?;
    Ok(())
}
