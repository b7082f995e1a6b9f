//! Region similarity search.
//!
//! A query is a masked region of one feature map. Every dataset map is
//! scanned at each offset that keeps the mask support inside the map, and
//! each offset gets a cosine score between the query vector and the
//! identically masked region vector. Two scoring paths are provided:
//!
//! * [`oracle_region_scores`] materialises every region vector explicitly.
//! * [`conv_region_scores`] cross-correlates the map with the doubly masked,
//!   cropped query and derives region norms from a second correlation of the
//!   squared map with the squared mask.
//!
//! Both produce the same scores, in the same row-major offset order.

mod conv;
mod oracle;
mod rank;

pub use conv::conv_region_scores;
pub use oracle::{oracle_region_scores, topk_search_oracle};
pub use rank::{
    best_region, rank_all_regions, search, search_batch, topk_search, topk_search_stream, HitOrder,
    Reduction, SearchOptions, TopKCollector,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    apply_mask, build_query_vector, crop_nonzero, BoundingBox, Dims, DownsampledMask, FeatureMap,
    Matrix,
};

/// A query region prepared for the convolution path.
#[derive(Debug, Clone)]
pub struct QueryFilter {
    filter: FeatureMap,
    bbox: BoundingBox,
    mask_crop: Matrix,
    weights: Vec<f64>,
    query_norm: f64,
    source_dims: Dims,
}

impl QueryFilter {
    /// Doubly masked, cropped query tensor (`H' x W' x D`).
    pub fn filter(&self) -> &FeatureMap {
        &self.filter
    }

    pub fn bbox(&self) -> BoundingBox {
        self.bbox
    }

    /// Mask restricted to [`Self::bbox`].
    pub fn mask_crop(&self) -> &Matrix {
        &self.mask_crop
    }

    /// [`Self::filter`] computed in f64, laid out the same way.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Norm of the singly masked query vector.
    pub fn query_norm(&self) -> f64 {
        self.query_norm
    }

    /// Dims of the query feature map; every searched map must match.
    pub fn source_dims(&self) -> Dims {
        self.source_dims
    }

    /// Number of offsets scored per image.
    pub fn offset_count(&self) -> usize {
        (self.source_dims.rows - self.bbox.height() + 1)
            * (self.source_dims.cols - self.bbox.width() + 1)
    }

    /// The query mask translated so its support box starts at `(alpha, beta)`.
    pub fn region_mask(&self, alpha: usize, beta: usize) -> Matrix {
        translated_mask(&self.mask_crop, self.source_dims, alpha, beta)
    }

    pub(crate) fn check_dims(&self, fmap: &FeatureMap) -> Result<()> {
        if fmap.dims() != self.source_dims {
            return Err(Error::invalid(format!(
                "feature map {} has dims {} but the query expects {}",
                fmap.image_id(),
                fmap.dims(),
                self.source_dims
            )));
        }
        Ok(())
    }
}

pub(crate) fn translated_mask(crop: &Matrix, dims: Dims, alpha: usize, beta: usize) -> Matrix {
    let mut out = Matrix::filled(dims.rows, dims.cols, 0.0);
    for u in 0..crop.rows {
        for v in 0..crop.cols {
            out.set(alpha + u, beta + v, crop.get(u, v));
        }
    }
    out
}

/// Score of one offset. `alpha`/`beta` are the row/col where the top-left of
/// the mask's support box lands in the searched map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionScore {
    pub alpha: usize,
    pub beta: usize,
    pub score: f64,
    /// False when the region vector has zero norm and cosine is undefined.
    pub valid: bool,
}

impl RegionScore {
    pub fn invalid(alpha: usize, beta: usize) -> Self {
        Self {
            alpha,
            beta,
            score: 0.0,
            valid: false,
        }
    }
}

/// One ranked result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub image_id: String,
    pub score: f64,
    pub alpha: usize,
    pub beta: usize,
    /// Query mask moved to the matched offset, at feature resolution.
    pub region_mask: Matrix,
}

/// Masks the query map, crops it and measures the query norm.
pub fn prepare_query(fmap: &FeatureMap, mask: &DownsampledMask) -> Result<QueryFilter> {
    let masked = apply_mask(fmap, mask)?;
    let q = build_query_vector(&masked, mask)?;
    let query_norm = norm(&q);
    if query_norm == 0.0 {
        return Err(Error::DegenerateQuery);
    }
    let (filter, bbox) = crop_nonzero(&masked, mask)?;
    let mut mask_crop = Matrix::filled(bbox.height(), bbox.width(), 0.0);
    let mut weights = Vec::with_capacity(filter.data().len());
    for u in 0..bbox.height() {
        for v in 0..bbox.width() {
            let m = mask.get(bbox.row0 + u, bbox.col0 + v);
            mask_crop.set(u, v, m);
            let m = m as f64;
            weights.extend(
                fmap.pixel(bbox.row0 + u, bbox.col0 + v)
                    .iter()
                    .map(|&x| x as f64 * m * m),
            );
        }
    }
    Ok(QueryFilter {
        filter,
        bbox,
        mask_crop,
        weights,
        query_norm,
        source_dims: fmap.dims(),
    })
}

/// Cosine from its parts, clamped to [-1, 1] and rounded to 12 decimals.
///
/// The two scoring paths round differently in the last bits; snapping lets
/// scores that agree up to that noise compare equal and fall through to the
/// id and offset tie rule on both paths.
pub(crate) fn cosine(dot: f64, query_norm: f64, region_norm: f64) -> f64 {
    const GRID: f64 = 1e12;
    let c = (dot / (query_norm * region_norm)).clamp(-1.0, 1.0);
    (c * GRID).round() / GRID
}

pub(crate) fn norm(v: &[f32]) -> f64 {
    v.iter()
        .map(|&x| (x as f64) * (x as f64))
        .sum::<f64>()
        .sqrt()
}
