#![allow(dead_code)]

use featsearch_core::{Dims, DownsampledMask, FeatureMap, Matrix};
use rand::Rng;

pub fn random_map(rng: &mut impl Rng, id: impl Into<String>, dims: Dims) -> FeatureMap {
    let data = (0..dims.len())
        .map(|_| rng.gen_range(-1.0f32..1.0))
        .collect();
    FeatureMap::new(id, dims, data).unwrap()
}

/// Post-ReLU style map: roughly half the activations are exactly zero.
pub fn relu_map(rng: &mut impl Rng, id: impl Into<String>, dims: Dims) -> FeatureMap {
    let data = (0..dims.len())
        .map(|_| rng.gen_range(-1.0f32..2.0).max(0.0))
        .collect();
    FeatureMap::new(id, dims, data).unwrap()
}

/// Fractional mask with at least one positive cell. Positive cells cluster
/// inside a random sub-rectangle so supports of every shape get exercised.
pub fn random_mask(rng: &mut impl Rng, rows: usize, cols: usize) -> DownsampledMask {
    let r0 = rng.gen_range(0..rows);
    let c0 = rng.gen_range(0..cols);
    let r1 = rng.gen_range(r0 + 1..=rows);
    let c1 = rng.gen_range(c0 + 1..=cols);
    let density = rng.gen_range(0.2..1.0);
    let mut m = Matrix::filled(rows, cols, 0.0);
    for r in r0..r1 {
        for c in c0..c1 {
            if rng.gen_bool(density) {
                m.set(r, c, rng.gen_range(0.05f32..=1.0));
            }
        }
    }
    m.set(r0, c0, rng.gen_range(0.05f32..=1.0));
    DownsampledMask::new(m).unwrap()
}

pub fn full_mask(rows: usize, cols: usize) -> DownsampledMask {
    DownsampledMask::new(Matrix::filled(rows, cols, 1.0)).unwrap()
}
