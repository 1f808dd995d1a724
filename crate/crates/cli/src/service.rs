//! HTTP API for the interactive viewer.
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/api/version` | toolkit and format versions |
//! | GET | `/api/cases` | case summaries sorted by id |
//! | GET | `/api/cases/{id}/slice` | PNG slice (`axis`, `index`, `channel=pet\|ct\|overlay`, `window=lo,hi`) |
//! | POST | `/api/cases/{id}/segment` | run the backend on a click list, RLE mask + metrics |
//! | GET/DELETE | `/api/cases/{id}/session` | last click list and mask fingerprint |
//! | GET | `/api/cases/{id}/mask/rowsums` | per-row voxel counts of the last mask slice |
//!
//! Segmentation is recomputed from the full click list on every request;
//! the session only remembers the last request for the overlay.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use lesionprompt_core::harness::{predict, TOOLKIT_VERSION};
use lesionprompt_core::io::prompts_file::{PromptsFile, PROMPTS_FORMAT_VERSION};
use lesionprompt_core::{
    BackendConfig, CaseMetrics, ClickSet, Dataset, EncodingSpec, Error, EvalConfig, LoadedCase, MaskVolume,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::render::{encode_png, grayscale, overlay, slice_values, Axis, Window};
use crate::rle::MaskRle;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, msg: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": msg.into() }),
        }
    }

    fn not_found(msg: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, msg)
    }

    fn bad_request(msg: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, msg)
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Serialize)]
pub struct SessionState {
    pub case_id: String,
    pub clicks: ClickSet,
    pub last_mask_fingerprint: Option<String>,
    pub encoding: EncodingSpec,
    pub backend: BackendConfig,
    #[serde(skip)]
    pub last_mask: Option<Arc<MaskVolume>>,
}

pub struct AppState {
    pub dataset: Dataset,
    pub cfg: EvalConfig,
    cases: Mutex<HashMap<String, Arc<LoadedCase>>>,
    sessions: Mutex<HashMap<String, SessionState>>,
}

impl AppState {
    pub fn new(dataset: Dataset, cfg: EvalConfig) -> Self {
        Self {
            dataset,
            cfg,
            cases: Mutex::new(HashMap::new()),
            sessions: Mutex::new(HashMap::new()),
        }
    }

    /// Loads a case once and shares it read-only afterwards.
    fn case(&self, id: &str) -> ApiResult<Arc<LoadedCase>> {
        if let Some(c) = self.cases.lock().unwrap().get(id) {
            return Ok(c.clone());
        }
        let desc = self
            .dataset
            .get(id)
            .ok_or_else(|| ApiError::not_found(format!("no case {id:?}")))?;
        let loaded = LoadedCase::load(desc, self.cfg.target_spacing, &self.cfg.ct_normalization).map_err(ApiError::internal)?;
        let mut cases = self.cases.lock().unwrap();
        Ok(cases.entry(id.to_string()).or_insert_with(|| Arc::new(loaded)).clone())
    }

    fn session(&self, case_id: &str) -> SessionState {
        self.sessions.lock().unwrap().get(case_id).cloned().unwrap_or_else(|| SessionState {
            case_id: case_id.to_string(),
            clicks: ClickSet::default(),
            last_mask_fingerprint: None,
            encoding: self.cfg.encoding,
            backend: self.cfg.backend.clone(),
            last_mask: None,
        })
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

pub fn router(state: Arc<AppState>, cors_origins: &[String]) -> Router {
    let origins: Vec<HeaderValue> = cors_origins.iter().filter_map(|o| o.parse().ok()).collect();
    let cors = CorsLayer::new()
        .allow_origin(AllowOrigin::list(origins))
        .allow_methods([axum::http::Method::GET, axum::http::Method::POST, axum::http::Method::DELETE])
        .allow_headers([header::CONTENT_TYPE, header::ACCEPT]);
    Router::new()
        .route("/api/version", get(version))
        .route("/api/cases", get(list_cases))
        .route("/api/cases/{id}/slice", get(slice))
        .route("/api/cases/{id}/segment", post(segment))
        .route("/api/cases/{id}/session", get(get_session).delete(reset_session))
        .route("/api/cases/{id}/mask/rowsums", get(row_sums))
        .layer(cors)
        .with_state(state)
}

async fn version() -> Json<Value> {
    Json(json!({
        "name": "lesionprompt",
        "version": TOOLKIT_VERSION,
        "prompts_format_version": PROMPTS_FORMAT_VERSION,
        "report_format_version": lesionprompt_core::harness::REPORT_FORMAT_VERSION,
    }))
}

fn accepts_json(headers: &HeaderMap) -> bool {
    let Some(accept) = headers.get(header::ACCEPT) else {
        return true;
    };
    let Ok(accept) = accept.to_str() else {
        return false;
    };
    accept.split(',').any(|range| {
        let media = range.split(';').next().unwrap_or("").trim().to_ascii_lowercase();
        matches!(media.as_str(), "*/*" | "application/*" | "application/json" | "")
    })
}

#[derive(Debug, Serialize)]
struct CaseSummary {
    id: String,
    shape: [usize; 3],
    spacing: [f64; 3],
    has_gt: bool,
    has_ct: bool,
}

async fn list_cases(State(state): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<Json<Vec<CaseSummary>>> {
    if !accepts_json(&headers) {
        return Err(ApiError::new(StatusCode::NOT_ACCEPTABLE, "only application/json is available"));
    }
    blocking(move || {
        state
            .dataset
            .cases
            .iter()
            .map(|d| {
                let c = state.case(&d.case_id)?;
                Ok(CaseSummary {
                    id: d.case_id.clone(),
                    shape: c.pet.shape().as_array(),
                    spacing: c.pet.spacing().as_array(),
                    has_gt: c.gt.is_some(),
                    has_ct: c.ct.is_some(),
                })
            })
            .collect::<ApiResult<Vec<_>>>()
    })
    .await
    .map(Json)
}

#[derive(Debug, Deserialize)]
struct SliceQuery {
    axis: Option<String>,
    index: Option<usize>,
    channel: Option<String>,
    window: Option<String>,
}

fn parse_axis(axis: Option<&str>) -> ApiResult<Axis> {
    axis.unwrap_or("z").parse().map_err(ApiError::bad_request)
}

async fn slice(State(state): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<SliceQuery>) -> ApiResult<Response> {
    let axis = parse_axis(q.axis.as_deref())?;
    let window = q.window.as_deref().map(Window::parse).transpose().map_err(ApiError::bad_request)?;
    let channel = q.channel.clone().unwrap_or_else(|| "pet".into());
    if !matches!(channel.as_str(), "pet" | "ct" | "overlay") {
        return Err(ApiError::bad_request(format!("unknown channel {channel:?}, expected pet, ct or overlay")));
    }
    let bytes = blocking(move || {
        let case = state.case(&id)?;
        let image = match channel.as_str() {
            "ct" => case.ct.as_ref().ok_or_else(|| ApiError::not_found(format!("case {id:?} has no CT")))?,
            _ => &case.pet,
        };
        let dim = image.shape().as_array()[axis.index()];
        let index = q.index.unwrap_or(dim / 2);
        let values = slice_values(image, axis, index)
            .ok_or_else(|| ApiError::not_found(format!("slice {index} outside 0..{dim} along {axis:?}")))?;
        let gray = grayscale(&values, window.unwrap_or_else(|| Window::full(image.min_max())));
        let (rows, cols) = axis.slice_dims(image.shape());
        let png = if channel == "overlay" {
            let mask = state.session(&id).last_mask;
            let mask_slice = mask.as_ref().and_then(|m| slice_values(m, axis, index));
            encode_png(cols, rows, true, &overlay(&gray, mask_slice.as_deref()))
        } else {
            encode_png(cols, rows, false, &gray)
        };
        png.map_err(ApiError::internal)
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentRequest {
    #[serde(default)]
    clicks: Option<Value>,
    #[serde(default)]
    encoding: Option<Value>,
    #[serde(default)]
    backend: Option<Value>,
    #[serde(default)]
    threshold: Option<f64>,
}

#[derive(Debug, Serialize)]
struct SegmentResponse {
    case_id: String,
    mask_rle: MaskRle,
    foreground_voxels: usize,
    fingerprint: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics: Option<CaseMetrics>,
    clicks: ClickSet,
    encoding: EncodingSpec,
    backend: &'static str,
}

pub fn mask_fingerprint(rle: &MaskRle) -> String {
    let mut h = Sha256::new();
    for d in rle.shape {
        h.update((d as u64).to_le_bytes());
    }
    for c in &rle.counts {
        h.update(c.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn parse_clicks(value: Option<Value>, case_id: &str, case: &LoadedCase) -> ApiResult<ClickSet> {
    let mut value = value.unwrap_or_else(|| json!({}));
    let obj = value
        .as_object_mut()
        .ok_or_else(|| ApiError::bad_request("clicks must be an object"))?;
    obj.entry("format_version").or_insert(json!(PROMPTS_FORMAT_VERSION));
    obj.entry("case_id").or_insert(json!(case_id));
    let file: PromptsFile =
        serde_json::from_value(value).map_err(|e| ApiError::bad_request(format!("clicks: {e}")))?;
    if file.case_id != case_id {
        return Err(ApiError::bad_request(format!(
            "clicks are for case {:?}, request is for {case_id:?}",
            file.case_id
        )));
    }
    file.to_clicks(&case.pet.grid()).map_err(|e| match e {
        Error::ClickOutOfBounds { index, polarity, .. } => ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            body: json!({ "error": e.to_string(), "index": index, "polarity": polarity }),
        },
        Error::Unsupported(m) => ApiError::bad_request(m),
        other => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, other.to_string()),
    })
}

fn parse_backend(value: Option<Value>, default: &BackendConfig) -> ApiResult<BackendConfig> {
    let value = match value {
        None => return Ok(default.clone()),
        Some(Value::String(name)) => json!({ "name": name }),
        Some(v) => v,
    };
    let backend: BackendConfig =
        serde_json::from_value(value).map_err(|e| ApiError::bad_request(format!("backend: {e}")))?;
    if let BackendConfig::Reference(p) = &backend {
        p.validate().map_err(|e| ApiError::bad_request(format!("backend: {e}")))?;
    }
    Ok(backend)
}

async fn segment(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<SegmentResponse>> {
    let req: SegmentRequest = if body.iter().all(u8::is_ascii_whitespace) {
        SegmentRequest {
            clicks: None,
            encoding: None,
            backend: None,
            threshold: None,
        }
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("request body: {e}")))?
    };
    let backend = parse_backend(req.backend, &state.cfg.backend)?;
    let encoding = match req.encoding {
        Some(v) => {
            let e: EncodingSpec = serde_json::from_value(v).map_err(|e| ApiError::bad_request(format!("encoding: {e}")))?;
            e.validate().map_err(|e| ApiError::bad_request(format!("encoding: {e}")))?;
            e
        }
        None => state.cfg.encoding,
    };
    let mut cfg = state.cfg.clone();
    cfg.encoding = encoding;
    cfg.backend = backend.clone();
    if let Some(t) = req.threshold {
        if !(t > 0.0 && t < 1.0) {
            return Err(ApiError::bad_request(format!("threshold must lie in (0, 1), got {t}")));
        }
        cfg.threshold = t;
    }
    let clicks_value = req.clicks;
    let session_backend = backend.clone();
    let st = state.clone();
    let (response, mask) = blocking(move || {
        let case = st.case(&id)?;
        let clicks = parse_clicks(clicks_value, &id, &case)?;
        let segmenter = backend.build().map_err(|e| ApiError::bad_request(format!("backend: {e}")))?;
        let mask = predict(&case, &clicks, &cfg, segmenter.as_ref()).map_err(ApiError::internal)?;
        let metrics = case
            .gt
            .as_ref()
            .map(|gt| CaseMetrics::compute(&mask, gt, cfg.connectivity))
            .transpose()
            .map_err(ApiError::internal)?;
        let rle = MaskRle::encode(&mask);
        let response = SegmentResponse {
            case_id: id,
            fingerprint: mask_fingerprint(&rle),
            foreground_voxels: mask.count(),
            mask_rle: rle,
            metrics,
            clicks,
            encoding: cfg.encoding,
            backend: backend.name(),
        };
        Ok((response, mask))
    })
    .await?;
    state.sessions.lock().unwrap().insert(
        response.case_id.clone(),
        SessionState {
            case_id: response.case_id.clone(),
            clicks: response.clicks.clone(),
            last_mask_fingerprint: Some(response.fingerprint.clone()),
            encoding: response.encoding,
            backend: session_backend,
            last_mask: Some(Arc::new(mask)),
        },
    );
    Ok(Json(response))
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<SessionState>> {
    if state.dataset.get(&id).is_none() {
        return Err(ApiError::not_found(format!("no case {id:?}")));
    }
    Ok(Json(state.session(&id)))
}

async fn reset_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    if state.dataset.get(&id).is_none() {
        return Err(ApiError::not_found(format!("no case {id:?}")));
    }
    state.sessions.lock().unwrap().remove(&id);
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Debug, Deserialize)]
struct RowSumQuery {
    axis: Option<String>,
    index: usize,
}

async fn row_sums(State(state): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<RowSumQuery>) -> ApiResult<Json<Value>> {
    let axis = parse_axis(q.axis.as_deref())?;
    if state.dataset.get(&id).is_none() {
        return Err(ApiError::not_found(format!("no case {id:?}")));
    }
    let session = state.session(&id);
    let mask = session
        .last_mask
        .ok_or_else(|| ApiError::not_found(format!("case {id:?} has no prediction yet")))?;
    let values = slice_values(&mask, axis, q.index).ok_or_else(|| ApiError::not_found(format!("slice {} out of range", q.index)))?;
    let (_, cols) = axis.slice_dims(mask.shape());
    let rows: Vec<usize> = values.chunks(cols).map(|r| r.iter().filter(|&&b| b).count()).collect();
    Ok(Json(json!({
        "axis": q.axis.unwrap_or_else(|| "z".into()),
        "index": q.index,
        "fingerprint": session.last_mask_fingerprint,
        "rows": rows,
    })))
}

/// Binds and serves until the process is stopped.
pub async fn serve(state: Arc<AppState>, addr: &str, cors_origins: &[String]) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state, cors_origins)).await
}
