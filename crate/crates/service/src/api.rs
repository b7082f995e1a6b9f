//! JSON request/response types and route handlers.

use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use featsearch_core::{
    downsample_mask, prepare_query, Dims, Error as CoreError, FeatureMap, ImageMask, Matrix,
    SearchHit, StoreManifest,
};
use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};

use crate::state::{AppState, Mounted};
use crate::thumbs;

pub const DEFAULT_K: usize = 6;
pub const MAX_K: usize = 50;
pub const DEFAULT_PAGE: usize = 50;
pub const MAX_PAGE: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    pub model_name: String,
    pub layer_name: String,
    pub dims: Dims,
    pub image_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryImage {
    pub image_id: String,
    pub thumbnail_url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryPage {
    pub dataset: String,
    pub offset: usize,
    pub limit: usize,
    pub total: usize,
    pub images: Vec<GalleryImage>,
}

#[derive(Debug, Deserialize)]
pub struct PageParams {
    #[serde(default)]
    pub offset: usize,
    pub limit: Option<usize>,
}

/// Precomputed query features sent inline instead of a dataset image id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InlineFeatures {
    pub dims: Dims,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRequest {
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_image_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_features: Option<InlineFeatures>,
    /// Full-resolution mask, `{"rows", "cols", "data"}`.
    pub mask: Matrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiHit {
    pub image_id: String,
    pub score: f64,
    pub alpha: usize,
    pub beta: usize,
    pub region_mask: Matrix,
    pub thumbnail_url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub hits: Vec<ApiHit>,
    pub timing_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    fn unknown_dataset(name: &str) -> Self {
        Self::new(
            StatusCode::NOT_FOUND,
            "unknown_dataset",
            format!("no dataset named {name}"),
        )
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::EmptyQuery => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "empty_mask", msg),
            CoreError::DegenerateQuery => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "degenerate_query", msg)
            }
            CoreError::NotFound(_) => Self::new(StatusCode::NOT_FOUND, "unknown_image", msg),
            CoreError::InvalidArgument(_) => Self::bad_request("invalid_argument", msg),
            CoreError::Corruption { .. } | CoreError::CorruptMetadata(_) => {
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "store_corrupt", msg)
            }
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", msg),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code.to_owned(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

pub fn thumbnail_url(dataset: &str, image_id: &str) -> String {
    format!(
        "/api/datasets/{}/thumbnail/{}",
        utf8_percent_encode(dataset, NON_ALPHANUMERIC),
        utf8_percent_encode(image_id, NON_ALPHANUMERIC)
    )
}

/// Wraps library hits with the presentation fields the UI needs.
pub fn api_hits(mount: &Mounted, hits: Vec<SearchHit>) -> Vec<ApiHit> {
    present_hits(&mount.name, mount.store.manifest(), hits)
}

pub fn present_hits(dataset: &str, manifest: &StoreManifest, hits: Vec<SearchHit>) -> Vec<ApiHit> {
    hits.into_iter()
        .map(|h| ApiHit {
            thumbnail_url: thumbnail_url(dataset, &h.image_id),
            label: manifest.label(&h.image_id).map(str::to_owned),
            image_id: h.image_id,
            score: h.score,
            alpha: h.alpha,
            beta: h.beta,
            region_mask: h.region_mask,
        })
        .collect()
}

pub async fn list_datasets(State(state): State<Arc<AppState>>) -> Json<Vec<DatasetInfo>> {
    Json(
        state
            .mounts
            .iter()
            .map(|m| {
                let man = m.store.manifest();
                DatasetInfo {
                    name: m.name.clone(),
                    model_name: man.model_name.clone(),
                    layer_name: man.layer_name.clone(),
                    dims: man.dims,
                    image_count: man.image_count,
                }
            })
            .collect(),
    )
}

pub async fn list_images(
    State(state): State<Arc<AppState>>,
    Path(name): Path<String>,
    Query(page): Query<PageParams>,
) -> Result<Json<GalleryPage>, ApiError> {
    let mount = state.get(&name).ok_or_else(|| ApiError::unknown_dataset(&name))?;
    let limit = page.limit.unwrap_or(DEFAULT_PAGE).min(MAX_PAGE);
    let manifest = mount.store.manifest();
    let images = mount
        .store
        .image_ids()
        .skip(page.offset)
        .take(limit)
        .map(|id| GalleryImage {
            image_id: id.to_owned(),
            thumbnail_url: thumbnail_url(&name, id),
            label: manifest.label(id).map(str::to_owned),
        })
        .collect();
    Ok(Json(GalleryPage {
        dataset: name.clone(),
        offset: page.offset,
        limit,
        total: mount.store.len(),
        images,
    }))
}

fn run_search(state: &AppState, req: SearchRequest) -> Result<SearchResponse, ApiError> {
    let mount = state
        .get(&req.dataset)
        .ok_or_else(|| ApiError::unknown_dataset(&req.dataset))?;
    let k = req.k.unwrap_or(DEFAULT_K);
    if k == 0 || k > MAX_K {
        return Err(ApiError::bad_request(
            "invalid_k",
            format!("k must be in 1..={MAX_K}, got {k}"),
        ));
    }
    let dims = mount.store.dims();
    let mask = ImageMask::try_from(req.mask)
        .map_err(|e| ApiError::bad_request("invalid_mask", e.to_string()))?;

    let query = match (req.query_image_id, req.query_features) {
        (Some(id), None) => {
            if let Some(path) = mount.image_path(&id) {
                if let Ok((width, height)) = image::image_dimensions(&path) {
                    if (height as usize, width as usize) != (mask.rows(), mask.cols()) {
                        return Err(ApiError::bad_request(
                            "mask_dims",
                            format!(
                                "mask is {}x{} but image {id} is {height}x{width}",
                                mask.rows(),
                                mask.cols()
                            ),
                        ));
                    }
                }
            }
            mount.feature_map(&id)?
        }
        (None, Some(inline)) => FeatureMap::new("query", inline.dims, inline.data)?,
        _ => {
            return Err(ApiError::bad_request(
                "invalid_query",
                "exactly one of query_image_id and query_features is required",
            ))
        }
    };
    if query.dims() != dims {
        return Err(ApiError::bad_request(
            "invalid_query",
            format!("query features are {} but dataset holds {dims}", query.dims()),
        ));
    }
    if mask.rows() < dims.rows || mask.cols() < dims.cols {
        return Err(ApiError::bad_request(
            "mask_dims",
            format!(
                "mask {}x{} is smaller than the feature grid {}x{}",
                mask.rows(),
                mask.cols(),
                dims.rows,
                dims.cols
            ),
        ));
    }

    let mask_l = downsample_mask(&mask, dims.rows, dims.cols)?;
    let qf = prepare_query(&query, &mask_l)?;
    let started = Instant::now();
    let hits = mount.search(&qf, k)?;
    let timing_ms = started.elapsed().as_millis() as u64;
    Ok(SearchResponse {
        hits: api_hits(mount, hits),
        timing_ms,
    })
}

pub async fn search(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<Json<SearchResponse>, ApiError> {
    let req: SearchRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request("bad_request", e.to_string()))?;
    let resp = tokio::task::spawn_blocking(move || run_search(&state, req))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(resp))
}

pub async fn thumbnail(
    State(state): State<Arc<AppState>>,
    Path((name, image_id)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let mount = state
        .get(&name)
        .cloned()
        .ok_or_else(|| ApiError::unknown_dataset(&name))?;
    let bytes = tokio::task::spawn_blocking(move || thumbs::thumbnail(&mount, &image_id))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok((
        [
            (header::CONTENT_TYPE, "image/png"),
            (header::CACHE_CONTROL, "public, max-age=86400"),
        ],
        bytes.to_vec(),
    )
        .into_response())
}
