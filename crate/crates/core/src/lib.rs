//! Region-based search over CNN feature maps.
//!
//! A user highlights part of a query image; the highlighted features are
//! compared by cosine similarity against every same-shaped region of every
//! map in a dataset, and the best-matching images are returned along with
//! where they matched.
//!
//! * [`tensor`] - feature maps, masks, masking and cropping.
//! * [`search`] - region scoring (brute-force and convolution paths) and top-k.
//! * [`store`] - chunked, compressed on-disk cache of feature maps.
//! * [`metrics`] - result-set analyses.

pub mod error;
pub mod metrics;
pub mod search;
pub mod store;
pub mod tensor;

pub use error::{Error, Result};
pub use search::{
    best_region, conv_region_scores, oracle_region_scores, prepare_query, topk_search, QueryFilter,
    RegionScore, SearchHit,
};
pub use store::{verify_store, Compression, FeatureStore, StoreManifest, StoreWriter};
pub use tensor::{
    apply_mask, build_query_vector, crop_nonzero, downsample_mask, BoundingBox, Dims,
    DownsampledMask, FeatureMap, ImageMask, Matrix,
};
