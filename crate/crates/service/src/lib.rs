//! HTTP+JSON recommendation service over a trained policy artifact.
//!
//! Every request clones one `Arc` of the loaded artifact under a read lock and
//! is served entirely from it, so a hot swap never mixes versions.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use log::info;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use ttl_itd::deliberation::{DialConfig, Recommendation};
use ttl_itd::exec::derive_seed;
use ttl_itd::harness::{
    fqe_config, frontier, transitions, Evaluator, FrontierRow, ModelConfig, PolicyArtifact,
    RunManifest, ARTIFACT_FILE, MANIFEST_FILE, TEST_EPISODES_FILE,
};
use ttl_itd::trajectory::{ingest, parse_state, DataFormat, Episode, StateDoc};
use ttl_itd::Exec;

/// Default number of episode starts used by interactive frontier requests.
pub const DEFAULT_FRONTIER_CAP: usize = 2000;

/// An artifact together with its manifest and cached evaluation episodes.
pub struct Loaded {
    pub artifact: PolicyArtifact,
    pub version: String,
    pub manifest: Option<RunManifest>,
    pub episodes: Vec<Episode>,
}

impl Loaded {
    pub fn new(
        artifact: PolicyArtifact,
        manifest: Option<RunManifest>,
        episodes: Vec<Episode>,
    ) -> Self {
        Self {
            version: artifact.version(),
            artifact,
            manifest,
            episodes,
        }
    }

    /// Loads an artifact file; the manifest and evaluation episodes are read
    /// from their default names next to it when present.
    pub fn from_paths(artifact: &Path, episodes: Option<&Path>) -> ttl_itd::Result<Self> {
        let art = PolicyArtifact::load(artifact)?;
        let dir = artifact.parent().unwrap_or(Path::new("."));
        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest = if manifest_path.exists() {
            Some(RunManifest::load(&manifest_path)?)
        } else {
            None
        };
        let default_eps = dir.join(TEST_EPISODES_FILE);
        let eps_path = episodes
            .map(Path::to_path_buf)
            .or_else(|| default_eps.exists().then_some(default_eps));
        let episodes = match eps_path {
            Some(p) => {
                let format = DataFormat::from_path(&p).unwrap_or(DataFormat::Jsonl);
                ingest(&p, format, art.action_count)?
            }
            None => Vec::new(),
        };
        Ok(Self::new(art, manifest, episodes))
    }

    pub fn from_dir(dir: &Path) -> ttl_itd::Result<Self> {
        Self::from_paths(&dir.join(ARTIFACT_FILE), None)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditEntry {
    pub request: u64,
    pub version: Option<String>,
    pub previous: DialConfig,
    pub dials: DialConfig,
}

/// Shared session state.
pub struct AppState {
    loaded: RwLock<Option<Arc<Loaded>>>,
    dials: RwLock<DialConfig>,
    requests: AtomicU64,
    audit: Mutex<Vec<AuditEntry>>,
    frontier_cap: usize,
    model: ModelConfig,
}

impl AppState {
    pub fn new(loaded: Option<Loaded>) -> Self {
        let dials = loaded
            .as_ref()
            .map(|l| l.artifact.dials.clone())
            .unwrap_or_default();
        let model = loaded
            .as_ref()
            .and_then(|l| l.manifest.as_ref())
            .map(|m| m.config.model.clone())
            .unwrap_or_default();
        Self {
            loaded: RwLock::new(loaded.map(Arc::new)),
            dials: RwLock::new(dials),
            requests: AtomicU64::new(0),
            audit: Mutex::new(Vec::new()),
            frontier_cap: DEFAULT_FRONTIER_CAP,
            model,
        }
    }

    pub fn with_frontier_cap(mut self, cap: usize) -> Self {
        self.frontier_cap = cap.max(1);
        self
    }

    /// Atomically replaces the served artifact; returns the new version id.
    pub fn swap(&self, loaded: Loaded) -> String {
        let version = loaded.version.clone();
        *self.loaded.write() = Some(Arc::new(loaded));
        info!("artifact swapped in: version {version}");
        version
    }

    pub fn current(&self) -> Option<Arc<Loaded>> {
        self.loaded.read().clone()
    }

    pub fn dials(&self) -> DialConfig {
        self.dials.read().clone()
    }

    pub fn audit_log(&self) -> Vec<AuditEntry> {
        self.audit.lock().clone()
    }

    fn next_request(&self) -> u64 {
        self.requests.fetch_add(1, Ordering::Relaxed)
    }
}

/// JSON error body: `{"error": ..., "field": ...}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    field: Option<String>,
}

impl ApiError {
    fn bad_request(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
            field: Some(field.into()),
        }
    }

    fn unavailable() -> Self {
        Self {
            status: StatusCode::SERVICE_UNAVAILABLE,
            message: "no policy artifact is loaded".into(),
            field: None,
        }
    }

    fn from_core(field: &str, e: ttl_itd::Error) -> Self {
        let status = match e {
            ttl_itd::Error::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self {
            status,
            message: e.to_string(),
            field: Some(field.into()),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self {
            status: r.status(),
            message: r.body_text(),
            field: None,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = match self.field {
            Some(f) => json!({ "error": self.message, "field": f }),
            None => json!({ "error": self.message }),
        };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/recommend", post(recommend))
        .route("/v1/frontier", post(frontier_endpoint))
        .route("/v1/manifest", get(manifest))
        .route("/v1/dials", get(get_dials).put(put_dials))
        .route("/v1/samples", get(samples))
        .route("/v1/artifact", put(put_artifact))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

fn loaded(state: &AppState) -> Result<Arc<Loaded>, ApiError> {
    state.current().ok_or_else(ApiError::unavailable)
}

/// Overlays the fields of `patch` on `base`.
fn merge_dials(
    base: &DialConfig,
    patch: Option<&Value>,
    field: &str,
) -> Result<DialConfig, ApiError> {
    let Some(patch) = patch.filter(|v| !v.is_null()) else {
        return Ok(base.clone());
    };
    let patch = patch
        .as_object()
        .ok_or_else(|| ApiError::bad_request(field, "expected an object of dial values"))?;
    let mut merged = serde_json::to_value(base).expect("dials serialize");
    let obj = merged.as_object_mut().expect("dials are an object");
    for (k, v) in patch {
        if !obj.contains_key(k) {
            return Err(ApiError::bad_request(
                format!("{field}.{k}"),
                format!("unknown dial {k:?}"),
            ));
        }
        obj.insert(k.clone(), v.clone());
    }
    let dials: DialConfig =
        serde_json::from_value(merged).map_err(|e| ApiError::bad_request(field, e.to_string()))?;
    dials
        .validate()
        .map_err(|e| ApiError::bad_request(field, e.to_string()))?;
    Ok(dials)
}

fn object(body: &Value) -> Result<&Map<String, Value>, ApiError> {
    body.as_object()
        .ok_or_else(|| ApiError::bad_request("body", "expected a JSON object"))
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Value> {
    let current = state.current();
    Json(json!({
        "status": "ok",
        "artifact_loaded": current.is_some(),
        "version": current.map(|l| l.version.clone()),
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecommendResponse {
    pub version: String,
    pub request_id: u64,
    pub dials: DialConfig,
    pub recommendation: Recommendation,
    pub action_freq: Vec<f64>,
    pub neighbor_count: usize,
}

/// Validated body of a recommend request.
struct RecommendRequest {
    state_doc: StateDoc,
    t: u64,
    prev_reward: f64,
    dials: Option<Value>,
    seed: Option<u64>,
}

fn parse_recommend(body: &Value) -> Result<RecommendRequest, ApiError> {
    let obj = object(body)?;
    let doc = obj
        .get("state_doc")
        .ok_or_else(|| ApiError::bad_request("state_doc", "missing field"))?;
    let state_doc = parse_state(doc).map_err(|m| {
        let field =
            m.split(':')
                .next()
                .unwrap_or("state_doc")
                .replacen("state_json", "state_doc", 1);
        ApiError::bad_request(field, m.replacen("state_json", "state_doc", 1))
    })?;
    let t = match obj.get("t") {
        None | Some(Value::Null) => 0,
        Some(v) => v
            .as_u64()
            .ok_or_else(|| ApiError::bad_request("t", "expected a non-negative integer"))?,
    };
    let prev_reward = match obj.get("prev_reward") {
        None | Some(Value::Null) => 0.0,
        Some(v) => v
            .as_f64()
            .filter(|r| r.is_finite())
            .ok_or_else(|| ApiError::bad_request("prev_reward", "expected a number"))?,
    };
    let seed = match obj.get("seed") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            v.as_u64()
                .ok_or_else(|| ApiError::bad_request("seed", "expected a non-negative integer"))?,
        ),
    };
    Ok(RecommendRequest {
        state_doc,
        t,
        prev_reward,
        dials: obj.get("dials").cloned(),
        seed,
    })
}

async fn recommend(
    State(state): State<Arc<AppState>>,
    body: Result<Json<Value>, JsonRejection>,
) -> ApiResult<RecommendResponse> {
    let Json(body) = body?;
    let req = parse_recommend(&body)?;
    let current = loaded(&state)?;
    let dials = merge_dials(&state.dials(), req.dials.as_ref(), "dials")?;
    let request_id = state.next_request();
    let seed = req
        .seed
        .unwrap_or_else(|| derive_seed(current.artifact.seed, request_id));
    let x = current
        .artifact
        .featurize(&req.state_doc, req.t, req.prev_reward);
    let (recommendation, local) = current
        .artifact
        .recommend(&x, &dials, seed)
        .map_err(|e| ApiError::from_core("state_doc", e))?;
    Ok(Json(RecommendResponse {
        version: current.version.clone(),
        request_id,
        dials,
        recommendation,
        action_freq: local.action_freq,
        neighbor_count: local.neighbor_ids.len(),
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrontierResponse {
    pub version: String,
    pub sample_size: usize,
    pub cap: usize,
    pub rows: Vec<FrontierRow>,
}

async fn frontier_endpoint(
    State(state): State<Arc<AppState>>,
    body: Result<Json<Value>, JsonRejection>,
) -> ApiResult<FrontierResponse> {
    let Json(body) = body?;
    let obj = object(&body)?;
    let lambdas: Vec<f64> = match obj.get("lambda_costs") {
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| v.as_f64().filter(|l| l.is_finite() && *l >= 0.0))
            .collect::<Option<_>>()
            .ok_or_else(|| {
                ApiError::bad_request("lambda_costs", "expected non-negative numbers")
            })?,
        _ => {
            return Err(ApiError::bad_request(
                "lambda_costs",
                "expected an array of numbers",
            ))
        }
    };
    if lambdas.is_empty() {
        return Err(ApiError::bad_request(
            "lambda_costs",
            "at least one value is required",
        ));
    }
    let requested =
        match obj.get("sample_size") {
            None | Some(Value::Null) => state.frontier_cap,
            Some(v) => v.as_u64().filter(|&n| n > 0).ok_or_else(|| {
                ApiError::bad_request("sample_size", "expected a positive integer")
            })? as usize,
        };
    let current = loaded(&state)?;
    let dials = merge_dials(&state.dials(), obj.get("dials"), "dials")?;
    if current.episodes.is_empty() {
        return Err(ApiError {
            status: StatusCode::CONFLICT,
            message: "the loaded artifact has no evaluation episodes".into(),
            field: None,
        });
    }
    let n = requested
        .min(state.frontier_cap)
        .min(current.episodes.len());
    let model = state.model.clone();
    let version = current.version.clone();
    let rows = tokio::task::spawn_blocking(move || -> ttl_itd::Result<Vec<FrontierRow>> {
        let data = transitions(&current.artifact, &current.episodes[..n]);
        let ev = Evaluator::new(&current.artifact, data, dials.k, Exec::default())?;
        frontier(
            &ev,
            &lambdas,
            &dials,
            &fqe_config(&model, model.fqe_iterations),
            Exec::default(),
        )
    })
    .await
    .map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        message: e.to_string(),
        field: None,
    })?
    .map_err(|e| ApiError::from_core("lambda_costs", e))?;
    Ok(Json(FrontierResponse {
        version,
        sample_size: n,
        cap: state.frontier_cap,
        rows,
    }))
}

async fn manifest(State(state): State<Arc<AppState>>) -> ApiResult<Value> {
    let current = loaded(&state)?;
    Ok(Json(json!({
        "version": current.version,
        "artifact_hash": current.artifact.hash(),
        "config_hash": current.artifact.config_hash,
        "data_hash": current.artifact.data_hash,
        "active_dials": state.dials(),
        "default_dials": current.artifact.dials,
        "manifest": current.manifest,
    })))
}

async fn get_dials(State(state): State<Arc<AppState>>) -> Json<DialConfig> {
    Json(state.dials())
}

async fn put_dials(
    State(state): State<Arc<AppState>>,
    body: Result<Json<Value>, JsonRejection>,
) -> ApiResult<Value> {
    let Json(body) = body?;
    let request = state.next_request();
    let mut guard = state.dials.write();
    let previous = guard.clone();
    let dials = merge_dials(&previous, Some(&body), "dials")?;
    *guard = dials.clone();
    drop(guard);
    let entry = AuditEntry {
        request,
        version: state.current().map(|l| l.version.clone()),
        previous: previous.clone(),
        dials: dials.clone(),
    };
    info!(
        "dials changed (request {request}): {}",
        serde_json::to_string(&entry).expect("audit entries serialize")
    );
    state.audit.lock().push(entry);
    Ok(Json(json!({ "previous": previous, "dials": dials })))
}

#[derive(Debug, Deserialize)]
struct SampleQuery {
    limit: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sample {
    pub member_id: String,
    pub t: u64,
    pub prev_reward: f64,
    pub state_doc: StateDoc,
}

/// First step of each cached evaluation episode.
async fn samples(
    State(state): State<Arc<AppState>>,
    Query(q): Query<SampleQuery>,
) -> ApiResult<Vec<Sample>> {
    let current = loaded(&state)?;
    let limit = q.limit.unwrap_or(20);
    Ok(Json(
        current
            .episodes
            .iter()
            .take(limit)
            .map(|e| Sample {
                member_id: e.member_id.clone(),
                t: e.steps[0].t,
                prev_reward: 0.0,
                state_doc: e.steps[0].state.clone(),
            })
            .collect(),
    ))
}

async fn put_artifact(
    State(state): State<Arc<AppState>>,
    body: Result<Json<Value>, JsonRejection>,
) -> ApiResult<Value> {
    let Json(body) = body?;
    let obj = object(&body)?;
    let path = obj
        .get("artifact_path")
        .and_then(Value::as_str)
        .map(PathBuf::from)
        .ok_or_else(|| ApiError::bad_request("artifact_path", "expected a path string"))?;
    let episodes = obj
        .get("episodes_path")
        .and_then(Value::as_str)
        .map(PathBuf::from);
    let loaded =
        tokio::task::spawn_blocking(move || Loaded::from_paths(&path, episodes.as_deref()))
            .await
            .map_err(|e| ApiError {
                status: StatusCode::INTERNAL_SERVER_ERROR,
                message: e.to_string(),
                field: None,
            })?
            .map_err(|e| ApiError::from_core("artifact_path", e))?;
    let previous = state.current().map(|l| l.version.clone());
    let version = state.swap(loaded);
    Ok(Json(json!({ "previous": previous, "version": version })))
}
