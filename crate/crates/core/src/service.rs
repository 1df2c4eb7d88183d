//! Local HTTP service over a loaded checkpoint.
//!
//! Routes:
//! - `GET /meta`: scene metadata.
//! - `GET /render?azimuth&elevation&radius&t&w&h&channels`: PNG image.
//! - `POST /select`: click or embedding selection, returns ids, a token and
//!   a base64 PNG mask.
//! - `GET /timeline?selection_token&t`: the mask of a cached selection at
//!   another time.
//!
//! The checkpoint is shared read-only; renders run on blocking threads
//! behind a semaphore that caps how many run at once.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::Semaphore;
use tower_http::cors::CorsLayer;

use crate::error::Error;
use crate::io::{encode_png_mask, encode_png_rgb, Checkpoint};
use crate::raster::{Camera, Orbit, RenderOptions};
use crate::semantics::{
    cosine_similarities, render_segmentation_mask, select_by_click, select_by_embedding, Mask,
    SelectionResult, DEFAULT_MASK_ALPHA, DEFAULT_THETA,
};
use crate::viz::{render_view, Channels};

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    /// Largest accepted `w · h`.
    pub max_pixels: usize,
    /// Renders allowed in flight at once.
    pub workers: usize,
    pub mask_alpha_threshold: f64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            max_pixels: 1024 * 1024,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            mask_alpha_threshold: DEFAULT_MASK_ALPHA,
        }
    }
}

/// Viewing parameters shared by the routes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct View {
    pub azimuth: f64,
    pub elevation: f64,
    pub radius: f64,
    #[serde(default)]
    pub target: [f64; 3],
    #[serde(default = "default_fov")]
    pub fov: f64,
    pub w: usize,
    pub h: usize,
}

fn default_fov() -> f64 {
    45.0
}

impl View {
    pub fn camera(&self) -> crate::Result<Camera> {
        Camera::orbit(
            &Orbit {
                azimuth_deg: self.azimuth,
                elevation_deg: self.elevation,
                radius: self.radius,
                target: self.target,
                fov_y_deg: self.fov,
            },
            self.w,
            self.h,
        )
    }
}

struct CachedSelection {
    ids: Vec<usize>,
    view: Option<View>,
}

pub struct AppState {
    pub checkpoint: Checkpoint,
    /// Dataset cameras reported by `/meta`, if known.
    pub cameras: Vec<Camera>,
    pub config: ServiceConfig,
    pool: Semaphore,
    selections: Mutex<HashMap<String, CachedSelection>>,
}

impl AppState {
    pub fn new(checkpoint: Checkpoint, cameras: Vec<Camera>, config: ServiceConfig) -> Self {
        Self {
            pool: Semaphore::new(config.workers.max(1)),
            selections: Mutex::new(HashMap::new()),
            checkpoint,
            cameras,
            config,
        }
    }
}

/// Hex SHA-256 of the sorted ids (little-endian `u64` each), truncated to
/// 32 characters.
pub fn selection_token(ids: &[usize]) -> String {
    let mut sorted = ids.to_vec();
    sorted.sort_unstable();
    let mut h = Sha256::new();
    for id in sorted {
        h.update((id as u64).to_le_bytes());
    }
    h.finalize()
        .iter()
        .take(16)
        .map(|b| format!("{b:02x}"))
        .collect()
}

struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            kind: "bad_request",
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            kind: "not_found",
            message: message.into(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::EmptyPixel { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            Error::Io(_) | Error::Image(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        Self {
            status,
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.kind, "message": self.message });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

/// Runs `f` on a blocking thread once a pool permit is available.
async fn run_blocking<T, F>(state: &Arc<AppState>, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&AppState) -> ApiResult<T> + Send + 'static,
{
    let _permit = state.pool.acquire().await.map_err(|_| ApiError {
        status: StatusCode::SERVICE_UNAVAILABLE,
        kind: "unavailable",
        message: "worker pool closed".into(),
    })?;
    let st = Arc::clone(state);
    tokio::task::spawn_blocking(move || f(&st))
        .await
        .map_err(|e| ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            kind: "internal",
            message: e.to_string(),
        })?
}

fn param<T: std::str::FromStr>(q: &HashMap<String, String>, key: &str) -> ApiResult<Option<T>> {
    match q.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| ApiError::bad_request(format!("invalid value for '{key}': '{v}'"))),
    }
}

fn required<T: std::str::FromStr>(q: &HashMap<String, String>, key: &str) -> ApiResult<T> {
    param(q, key)?.ok_or_else(|| ApiError::bad_request(format!("missing parameter '{key}'")))
}

fn check_time(t: f64) -> ApiResult<f64> {
    if (0.0..=1.0).contains(&t) {
        Ok(t)
    } else {
        Err(ApiError::bad_request(format!("t = {t} outside [0, 1]")))
    }
}

fn check_view(view: &View, cfg: &ServiceConfig) -> ApiResult<Camera> {
    if view.w == 0 || view.h == 0 {
        return Err(ApiError::bad_request("image size must be positive"));
    }
    if view.w.saturating_mul(view.h) > cfg.max_pixels {
        return Err(ApiError::bad_request(format!(
            "{}x{} exceeds the {} pixel limit",
            view.w, view.h, cfg.max_pixels
        )));
    }
    if !(view.radius > 0.0) {
        return Err(ApiError::bad_request("radius must be positive"));
    }
    Ok(view.camera()?)
}

fn view_from_query(q: &HashMap<String, String>) -> ApiResult<View> {
    Ok(View {
        azimuth: required(q, "azimuth")?,
        elevation: required(q, "elevation")?,
        radius: required(q, "radius")?,
        target: [
            param(q, "tx")?.unwrap_or(0.0),
            param(q, "ty")?.unwrap_or(0.0),
            param(q, "tz")?.unwrap_or(0.0),
        ],
        fov: param(q, "fov")?.unwrap_or_else(default_fov),
        w: required(q, "w")?,
        h: required(q, "h")?,
    })
}

fn png_response(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

fn mask_png_base64(mask: &Mask) -> ApiResult<String> {
    Ok(base64::engine::general_purpose::STANDARD.encode(encode_png_mask(mask)?))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraInfo {
    pub index: usize,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Meta {
    pub num_gaussians: usize,
    pub feature_dim: usize,
    pub time_range: [f64; 2],
    pub iteration: u64,
    pub cameras: Vec<CameraInfo>,
}

async fn meta(State(state): State<Arc<AppState>>) -> Json<Meta> {
    let cameras = state
        .cameras
        .iter()
        .enumerate()
        .map(|(index, c)| CameraInfo {
            index,
            width: c.width,
            height: c.height,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            rotation: std::array::from_fn(|k| c.rotation[(k / 3, k % 3)]),
            translation: c.translation.into(),
        })
        .collect();
    Json(Meta {
        num_gaussians: state.checkpoint.gaussians.len(),
        feature_dim: state.checkpoint.gaussians.feature_dim(),
        time_range: [0.0, 1.0],
        iteration: state.checkpoint.iteration,
        cameras,
    })
}

async fn render_route(
    State(state): State<Arc<AppState>>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let view = view_from_query(&q)?;
    let t = check_time(required(&q, "t")?)?;
    let channels: Channels = match q.get("channels") {
        None => Channels::Color,
        Some(c) => c.parse()?,
    };
    let cam = check_view(&view, &state.config)?;
    let png = run_blocking(&state, move |st| {
        let img = render_view(
            &st.checkpoint.gaussians,
            &st.checkpoint.field,
            &cam,
            t,
            channels,
            &RenderOptions::default(),
        )?;
        Ok(encode_png_rgb(&img)?)
    })
    .await?;
    Ok(png_response(png))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "lowercase")]
enum SelectMode {
    Click,
    Embedding,
}

#[derive(Debug, Clone, Deserialize)]
struct SelectRequest {
    mode: SelectMode,
    #[serde(default)]
    pixel: Option<[usize; 2]>,
    #[serde(default)]
    view: Option<View>,
    #[serde(default)]
    t: f64,
    #[serde(default = "default_theta")]
    theta: f64,
    #[serde(default)]
    embedding: Option<Vec<f64>>,
}

fn default_theta() -> f64 {
    DEFAULT_THETA
}

/// Similarity histogram over `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub const HISTOGRAM_BINS: usize = 20;

fn histogram(sims: &[Option<f64>]) -> Histogram {
    let mut counts = vec![0; HISTOGRAM_BINS];
    for s in sims.iter().flatten() {
        let b = (((s + 1.0) / 2.0) * HISTOGRAM_BINS as f64).floor() as usize;
        counts[b.min(HISTOGRAM_BINS - 1)] += 1;
    }
    Histogram {
        edges: (0..=HISTOGRAM_BINS)
            .map(|k| -1.0 + 2.0 * k as f64 / HISTOGRAM_BINS as f64)
            .collect(),
        counts,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectResponse {
    pub count: usize,
    pub gaussian_ids: Vec<usize>,
    pub selection_token: String,
    pub query_feature: Vec<f64>,
    /// Base64 PNG mask at the request's view and time (absent without a view).
    pub mask: Option<String>,
    pub histogram: Histogram,
}

async fn select_route(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> ApiResult<Json<SelectResponse>> {
    let req: SelectRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request(format!("malformed request: {e}")))?;
    let t = check_time(req.t)?;
    let cam = match &req.view {
        Some(v) => Some(check_view(v, &state.config)?),
        None => None,
    };
    let (result, mask) = run_blocking(&state, move |st| {
        let g = &st.checkpoint.gaussians;
        let field = &st.checkpoint.field;
        let result: SelectionResult = match req.mode {
            SelectMode::Embedding => {
                let q = req
                    .embedding
                    .as_ref()
                    .ok_or_else(|| ApiError::bad_request("embedding mode requires 'embedding'"))?;
                select_by_embedding(g, q, req.theta)?
            }
            SelectMode::Click => {
                let [x, y] = req
                    .pixel
                    .ok_or_else(|| ApiError::bad_request("click mode requires 'pixel'"))?;
                let cam = cam
                    .as_ref()
                    .ok_or_else(|| ApiError::bad_request("click mode requires 'view'"))?;
                select_by_click(g, field, cam, t, (x, y), req.theta)?
            }
        };
        let mask = match &cam {
            Some(c) => Some(render_segmentation_mask(
                g,
                field,
                &result.gaussian_ids,
                c,
                t,
                st.config.mask_alpha_threshold,
            )?),
            None => None,
        };
        Ok((result, mask))
    })
    .await?;
    let token = selection_token(&result.gaussian_ids);
    state.selections.lock().expect("selection cache").insert(
        token.clone(),
        CachedSelection {
            ids: result.gaussian_ids.clone(),
            view: req.view,
        },
    );
    let sims =
        cosine_similarities(&state.checkpoint.gaussians, &result.query_feature).unwrap_or_default();
    Ok(Json(SelectResponse {
        count: result.len(),
        gaussian_ids: result.gaussian_ids,
        selection_token: token,
        query_feature: result.query_feature,
        mask: mask.as_ref().map(mask_png_base64).transpose()?,
        histogram: histogram(&sims),
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimelineResponse {
    pub selection_token: String,
    pub t: f64,
    pub count: usize,
    /// Base64 PNG mask.
    pub mask: String,
}

async fn timeline_route(
    State(state): State<Arc<AppState>>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<TimelineResponse>> {
    let token: String = required(&q, "selection_token")?;
    let t = check_time(required(&q, "t")?)?;
    let (ids, stored_view) = {
        let cache = state.selections.lock().expect("selection cache");
        let sel = cache
            .get(&token)
            .ok_or_else(|| ApiError::not_found(format!("unknown selection token '{token}'")))?;
        (sel.ids.clone(), sel.view)
    };
    let view = if q.contains_key("azimuth") {
        view_from_query(&q)?
    } else {
        stored_view.ok_or_else(|| {
            ApiError::bad_request("selection has no stored view; pass view parameters")
        })?
    };
    let cam = check_view(&view, &state.config)?;
    let count = ids.len();
    let mask = run_blocking(&state, move |st| {
        Ok(render_segmentation_mask(
            &st.checkpoint.gaussians,
            &st.checkpoint.field,
            &ids,
            &cam,
            t,
            st.config.mask_alpha_threshold,
        )?)
    })
    .await?;
    Ok(Json(TimelineResponse {
        selection_token: token,
        t,
        count,
        mask: mask_png_base64(&mask)?,
    }))
}

async fn not_found() -> ApiError {
    ApiError::not_found("no such route")
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/meta", get(meta))
        .route("/render", get(render_route))
        .route("/select", post(select_route))
        .route("/timeline", get(timeline_route))
        .fallback(not_found)
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Serves on `addr` until the process is stopped.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}
