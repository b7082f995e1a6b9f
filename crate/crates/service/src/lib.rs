//! HTTP front end for interactive region search.
//!
//! | Method | Path | |
//! |---|---|---|
//! | GET | `/api/datasets` | mounted stores |
//! | GET | `/api/datasets/{name}/images?offset&limit` | gallery page, index order |
//! | GET | `/api/datasets/{name}/thumbnail/{image_id}` | PNG, long side <= 256 |
//! | POST | `/api/search` | [`api::SearchRequest`] -> [`api::SearchResponse`] |
//!
//! Errors are JSON `{"code", "message"}` with an HTTP status: 400 malformed
//! request, 404 unknown dataset or image, 422 `empty_mask` /
//! `degenerate_query`.

pub mod api;
pub mod config;
pub mod state;
mod thumbs;

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::http::{HeaderValue, Method};
use axum::routing::{get, post};
use axum::Router;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

pub use config::{MountConfig, ServiceConfig};
pub use state::{AppState, MountError, Mounted};

pub fn router(state: Arc<AppState>, cors_origin: Option<&str>) -> Router {
    let origin = match cors_origin.and_then(|o| HeaderValue::from_str(o).ok()) {
        Some(o) => AllowOrigin::exact(o),
        None => AllowOrigin::from(Any),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers(Any);
    Router::new()
        .route("/api/datasets", get(api::list_datasets))
        .route("/api/datasets/:name/images", get(api::list_images))
        .route("/api/datasets/:name/thumbnail/:image_id", get(api::thumbnail))
        .route("/api/search", post(api::search))
        .layer(cors)
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    state: Arc<AppState>,
    cors_origin: Option<String>,
    addr: SocketAddr,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state, cors_origin.as_deref()))
        .with_graceful_shutdown(shutdown)
        .await
}
