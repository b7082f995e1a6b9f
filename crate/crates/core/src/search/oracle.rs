//! Brute-force sliding-window scoring. Slow, literal, and the reference the
//! convolution path is audited against.

use std::borrow::Borrow;

use super::rank::{best_region, TopKCollector};
use super::{RegionScore, SearchHit};
use crate::error::{Error, Result};
use crate::tensor::{apply_mask, build_query_vector, DownsampledMask, FeatureMap, Matrix};

/// Mask weight at `(row - shift_rows, col - shift_cols)`, zero outside the grid.
fn shifted_weight(mask: &DownsampledMask, row: isize, col: isize) -> f32 {
    if row < 0 || col < 0 || row >= mask.rows() as isize || col >= mask.cols() as isize {
        0.0
    } else {
        mask.get(row as usize, col as usize)
    }
}

/// Scores every in-bounds offset of the mask over `fmap_search` by building
/// each region vector explicitly. Results are in row-major offset order.
pub fn oracle_region_scores(
    fmap_query: &FeatureMap,
    mask: &DownsampledMask,
    fmap_search: &FeatureMap,
) -> Result<Vec<RegionScore>> {
    let dims = fmap_query.dims();
    if fmap_search.dims() != dims {
        return Err(Error::invalid(format!(
            "feature map {} has dims {} but the query has {}",
            fmap_search.image_id(),
            fmap_search.dims(),
            dims
        )));
    }
    let z = apply_mask(fmap_query, mask)?;
    let q = build_query_vector(&z, mask)?;
    let q_norm = q.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
    let support = mask.support().ok_or(Error::EmptyQuery)?;

    // Offsets relative to the mask's own position; the reported offset is
    // where the support box's top-left lands.
    let (h, w) = (dims.rows as isize, dims.cols as isize);
    let (r0, c0) = (support.row0 as isize, support.col0 as isize);
    let (r1, c1) = (support.row1 as isize, support.col1 as isize);

    let mut scores = Vec::new();
    for shift_r in -r0..=(h - r1) {
        for shift_c in -c0..=(w - c1) {
            let mut region: Vec<f64> = Vec::with_capacity(q.len());
            for i in 0..h {
                for j in 0..w {
                    let m = shifted_weight(mask, i - shift_r, j - shift_c);
                    if m > 0.0 {
                        region.extend(
                            fmap_search
                                .pixel(i as usize, j as usize)
                                .iter()
                                .map(|&s| s as f64 * m as f64),
                        );
                    }
                }
            }
            debug_assert_eq!(region.len(), q.len());
            let dot: f64 = q.iter().zip(&region).map(|(&a, &b)| a as f64 * b).sum();
            let r_norm = region.iter().map(|v| v * v).sum::<f64>().sqrt();
            let alpha = (shift_r + r0) as usize;
            let beta = (shift_c + c0) as usize;
            if r_norm == 0.0 || q_norm == 0.0 {
                scores.push(RegionScore::invalid(alpha, beta));
            } else {
                scores.push(RegionScore {
                    alpha,
                    beta,
                    score: super::cosine(dot, q_norm, r_norm),
                    valid: true,
                });
            }
        }
    }
    Ok(scores)
}

/// Best-region top-k using only the brute-force path.
pub fn topk_search_oracle<I>(
    fmap_query: &FeatureMap,
    mask: &DownsampledMask,
    dataset: I,
    k: usize,
) -> Result<Vec<SearchHit>>
where
    I: IntoIterator,
    I::Item: Borrow<FeatureMap>,
{
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let support = mask.support().ok_or(Error::EmptyQuery)?;
    let dims = fmap_query.dims();
    let mut top = TopKCollector::new(k);
    for fmap in dataset {
        let fmap = fmap.borrow();
        let scores = oracle_region_scores(fmap_query, mask, fmap)?;
        let best = best_region(&scores)?;
        if !best.valid {
            continue;
        }
        let mut region_mask = Matrix::filled(dims.rows, dims.cols, 0.0);
        let shift_r = best.alpha as isize - support.row0 as isize;
        let shift_c = best.beta as isize - support.col0 as isize;
        for i in 0..dims.rows {
            for j in 0..dims.cols {
                let m = shifted_weight(mask, i as isize - shift_r, j as isize - shift_c);
                region_mask.set(i, j, m);
            }
        }
        top.offer(SearchHit {
            image_id: fmap.image_id().to_owned(),
            score: best.score,
            alpha: best.alpha,
            beta: best.beta,
            region_mask,
        });
    }
    Ok(top.into_sorted())
}
