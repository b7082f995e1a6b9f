use std::io::Cursor;
use std::sync::Arc;

use axum::http::StatusCode;
use image::ImageFormat;

use crate::api::ApiError;
use crate::state::Mounted;

pub const MAX_THUMB_SIDE: u32 = 256;

/// PNG thumbnail with the long side at most [`MAX_THUMB_SIDE`]. Encoded once
/// per image and then served from memory.
pub fn thumbnail(mount: &Mounted, image_id: &str) -> Result<Arc<Vec<u8>>, ApiError> {
    if let Some(hit) = mount.thumbnails.lock().unwrap().get(image_id) {
        return Ok(hit.clone());
    }
    let path = mount.image_path(image_id).ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "unknown_image",
            format!("no image file for {image_id}"),
        )
    })?;
    let img = image::ImageReader::open(&path)
        .and_then(|r| r.with_guessed_format())
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .decode()
        .map_err(|e| {
            ApiError::new(
                StatusCode::INTERNAL_SERVER_ERROR,
                "undecodable_image",
                format!("{}: {e}", path.display()),
            )
        })?;
    let img = if img.width().max(img.height()) > MAX_THUMB_SIDE {
        img.thumbnail(MAX_THUMB_SIDE, MAX_THUMB_SIDE)
    } else {
        img
    };
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    let bytes = Arc::new(out.into_inner());
    mount
        .thumbnails
        .lock()
        .unwrap()
        .insert(image_id.to_owned(), bytes.clone());
    Ok(bytes)
}
