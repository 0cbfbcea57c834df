//! HTTP inference service.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::info;
use plantdoc_core::data::{reference_classes, ClassInfo};
use plantdoc_core::diagnosis::predict_bytes;
use plantdoc_core::model::FrozenModel;
use plantdoc_core::Error;
use serde_json::json;
use tower_http::services::ServeDir;

pub const DEFAULT_MAX_UPLOAD_BYTES: usize = 10 * 1024 * 1024;
pub const DEFAULT_TOP_K: usize = 5;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub addr: SocketAddr,
    pub model_path: PathBuf,
    pub max_upload_bytes: usize,
    pub top_k: usize,
    /// Static frontend files served at `/`.
    pub static_dir: Option<PathBuf>,
}

/// Shared, read-only request state.
#[derive(Clone)]
pub struct AppState {
    model: Option<Arc<FrozenModel>>,
    top_k: usize,
}

impl AppState {
    pub fn new(model: Option<Arc<FrozenModel>>, top_k: usize) -> Self {
        Self { model, top_k }
    }

    fn classes(&self) -> Vec<ClassInfo> {
        match &self.model {
            Some(m) => m.classes().to_vec(),
            None => reference_classes(),
        }
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

/// Routes: `POST /predict`, `GET /classes`, `GET /health`, plus optional
/// static files for everything else.
pub fn router(state: AppState, max_upload_bytes: usize, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/predict", post(handle_predict))
        .route("/classes", get(handle_classes))
        .route("/health", get(handle_health))
        .layer(DefaultBodyLimit::max(max_upload_bytes))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

async fn handle_health(State(state): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "model_loaded": state.model.is_some() }))
}

async fn handle_classes(State(state): State<AppState>) -> Json<Vec<ClassInfo>> {
    Json(state.classes())
}

async fn read_image(req: Request) -> Result<Bytes, ApiError> {
    let is_multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    if !is_multipart {
        return Bytes::from_request(req, &())
            .await
            .map_err(|e| ApiError(e.status(), e.body_text()));
    }
    let mut form = Multipart::from_request(req, &())
        .await
        .map_err(|e| ApiError(e.status(), e.body_text()))?;
    while let Some(field) = form
        .next_field()
        .await
        .map_err(|e| ApiError(e.status(), e.body_text()))?
    {
        if field.name() == Some("image") {
            return field
                .bytes()
                .await
                .map_err(|e| ApiError(e.status(), e.body_text()));
        }
    }
    Err(ApiError(
        StatusCode::BAD_REQUEST,
        "multipart body has no `image` field".into(),
    ))
}

async fn handle_predict(State(state): State<AppState>, req: Request) -> Result<Response, ApiError> {
    let Some(model) = state.model.clone() else {
        return Err(ApiError(
            StatusCode::SERVICE_UNAVAILABLE,
            "no model loaded".into(),
        ));
    };
    let bytes = read_image(req).await?;
    if bytes.is_empty() {
        return Err(ApiError(
            StatusCode::BAD_REQUEST,
            "empty request body".into(),
        ));
    }
    let top_k = state.top_k;
    let result = tokio::task::spawn_blocking(move || predict_bytes(&model, &bytes, top_k))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    match result {
        Ok(p) => Ok(Json(p).into_response()),
        Err(e @ Error::Decode { .. }) => Err(ApiError(StatusCode::BAD_REQUEST, e.to_string())),
        Err(e) => Err(ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
    }
}

/// Load the bundle and serve until interrupted.
pub async fn serve(config: ServiceConfig) -> anyhow::Result<()> {
    let model = plantdoc_core::model::load_frozen(&config.model_path)?;
    info!(
        "loaded {} ({} classes, {} parameters)",
        config.model_path.display(),
        model.classes().len(),
        model.network().param_count()
    );
    let app = router(
        AppState::new(Some(Arc::new(model)), config.top_k),
        config.max_upload_bytes,
        config.static_dir.clone(),
    );
    let listener = tokio::net::TcpListener::bind(config.addr).await?;
    info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
