//! Convolution-style scoring: one valid-padding cross-correlation for the
//! dot products and one for the region norms.

use super::{QueryFilter, RegionScore};
use crate::error::Result;
use crate::tensor::FeatureMap;

struct Tap<'a> {
    row: usize,
    col: usize,
    weight_sq: f64,
    filter: &'a [f64],
}

/// Scores every in-bounds offset of `qf` over `fmap_search`, in row-major
/// offset order.
pub fn conv_region_scores(qf: &QueryFilter, fmap_search: &FeatureMap) -> Result<Vec<RegionScore>> {
    qf.check_dims(fmap_search)?;
    let dims = fmap_search.dims();
    let d = dims.channels;
    let mask = qf.mask_crop();
    let weights = qf.weights();

    // Zero mask cells contribute nothing to either correlation.
    let taps: Vec<Tap<'_>> = (0..mask.rows)
        .flat_map(|u| (0..mask.cols).map(move |v| (u, v)))
        .filter(|&(u, v)| mask.get(u, v) > 0.0)
        .map(|(u, v)| {
            let m = mask.get(u, v) as f64;
            Tap {
                row: u,
                col: v,
                weight_sq: m * m,
                filter: &weights[(u * mask.cols + v) * d..][..d],
            }
        })
        .collect();

    // Per-position channel energy: the squared map summed over channels.
    let energy: Vec<f64> = fmap_search
        .data()
        .chunks_exact(d)
        .map(|px| px.iter().map(|&s| (s as f64) * (s as f64)).sum())
        .collect();

    let out_rows = dims.rows - mask.rows + 1;
    let out_cols = dims.cols - mask.cols + 1;
    let mut scores = Vec::with_capacity(out_rows * out_cols);
    for alpha in 0..out_rows {
        for beta in 0..out_cols {
            let mut dot = 0.0f64;
            let mut norm_sq = 0.0f64;
            for tap in &taps {
                let (i, j) = (alpha + tap.row, beta + tap.col);
                dot += dot_f64(fmap_search.pixel(i, j), tap.filter);
                norm_sq += tap.weight_sq * energy[i * dims.cols + j];
            }
            if norm_sq > 0.0 {
                scores.push(RegionScore {
                    alpha,
                    beta,
                    score: super::cosine(dot, qf.query_norm(), norm_sq.sqrt()),
                    valid: true,
                });
            } else {
                scores.push(RegionScore::invalid(alpha, beta));
            }
        }
    }
    Ok(scores)
}

#[inline]
fn dot_f64(a: &[f32], b: &[f64]) -> f64 {
    // Four independent accumulators let the compiler keep the FP pipeline busy.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let o = c * 4;
        acc[0] += a[o] as f64 * b[o];
        acc[1] += a[o + 1] as f64 * b[o + 1];
        acc[2] += a[o + 2] as f64 * b[o + 2];
        acc[3] += a[o + 3] as f64 * b[o + 3];
    }
    let mut tail = 0.0;
    for o in chunks * 4..a.len() {
        tail += a[o] as f64 * b[o];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
