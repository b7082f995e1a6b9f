//! Dense feature-map and mask primitives.
//!
//! Feature maps are stored row-major with channels fastest: the value at
//! `(row, col, channel)` lives at `(row * cols + col) * channels + channel`.
//! This is the same layout the feature store writes to disk.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial and channel extent of a feature map: `(rows, cols, channels)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct Dims {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
}

impl Dims {
    pub const fn new(rows: usize, cols: usize, channels: usize) -> Self {
        Self {
            rows,
            cols,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn byte_len(&self) -> usize {
        self.len() * std::mem::size_of::<f32>()
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.channels == 0 {
            return Err(Error::invalid(format!("dims must be positive, got {self}")));
        }
        Ok(())
    }
}

impl From<[usize; 3]> for Dims {
    fn from([rows, cols, channels]: [usize; 3]) -> Self {
        Self::new(rows, cols, channels)
    }
}

impl From<Dims> for [usize; 3] {
    fn from(d: Dims) -> Self {
        [d.rows, d.cols, d.channels]
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.rows, self.cols, self.channels)
    }
}

/// Row-major 2-D float matrix. Its JSON form `{"rows", "cols", "data"}` is
/// also the on-disk mask file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!(
                "matrix dims must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, value: f32) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        self.data[row * self.cols + col] = value;
    }

    pub fn positive_count(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.0).count()
    }

    /// Tight box around all strictly positive cells, or `None` if there are none.
    pub fn positive_bbox(&self) -> Option<BoundingBox> {
        let mut bbox: Option<(usize, usize, usize, usize)> = None;
        for row in 0..self.rows {
            for col in 0..self.cols {
                if self.get(row, col) > 0.0 {
                    bbox = Some(match bbox {
                        None => (row, col, row + 1, col + 1),
                        Some((r0, c0, r1, c1)) => {
                            (r0.min(row), c0.min(col), r1.max(row + 1), c1.max(col + 1))
                        }
                    });
                }
            }
        }
        bbox.map(|(row0, col0, row1, col1)| BoundingBox {
            row0,
            col0,
            row1,
            col1,
        })
    }

    fn check_unit_interval(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            Some(idx) => Err(Error::invalid(format!(
                "{what} value {} at index {idx} is outside [0, 1]",
                self.data[idx]
            ))),
            None => Ok(()),
        }
    }
}

/// Axis-aligned box on an integer grid: rows `[row0, row1)`, cols `[col0, col1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
}

impl BoundingBox {
    pub fn new(row0: usize, col0: usize, row1: usize, col1: usize) -> Result<Self> {
        if row0 >= row1 || col0 >= col1 {
            return Err(Error::invalid(format!(
                "empty bounding box rows [{row0},{row1}) cols [{col0},{col1})"
            )));
        }
        Ok(Self {
            row0,
            col0,
            row1,
            col1,
        })
    }

    pub fn height(&self) -> usize {
        self.row1 - self.row0
    }

    pub fn width(&self) -> usize {
        self.col1 - self.col0
    }

    pub fn area(&self) -> usize {
        self.height() * self.width()
    }
}

/// Activations of one image at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    image_id: String,
    dims: Dims,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(image_id: impl Into<String>, dims: Dims, data: Vec<f32>) -> Result<Self> {
        let image_id = image_id.into();
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(Error::invalid(format!(
                "feature map {image_id}: dims {dims} need {} values, got {}",
                dims.len(),
                data.len()
            )));
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "feature map {image_id}: non-finite value at index {idx}"
            )));
        }
        Ok(Self {
            image_id,
            dims,
            data,
        })
    }

    pub fn zeros(image_id: impl Into<String>, dims: Dims) -> Self {
        Self {
            image_id: image_id.into(),
            dims,
            data: vec![0.0; dims.len()],
        }
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn with_id(mut self, image_id: impl Into<String>) -> Self {
        self.image_id = image_id.into();
        self
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.data[(row * self.dims.cols + col) * self.dims.channels + channel]
    }

    /// Channel vector at one spatial position.
    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let d = self.dims.channels;
        let start = (row * self.dims.cols + col) * d;
        &self.data[start..start + d]
    }

    /// Every value multiplied by `factor`.
    pub fn scaled(&self, factor: f32) -> Result<Self> {
        Self::new(
            self.image_id.clone(),
            self.dims,
            self.data.iter().map(|v| v * factor).collect(),
        )
    }
}

/// Full-resolution user highlight, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix", into = "Matrix")]
pub struct ImageMask(Matrix);

impl ImageMask {
    pub fn new(matrix: Matrix) -> Result<Self> {
        matrix.check_unit_interval("mask")?;
        Ok(Self(matrix))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn rows(&self) -> usize {
        self.0.rows
    }

    pub fn cols(&self) -> usize {
        self.0.cols
    }
}

impl TryFrom<Matrix> for ImageMask {
    type Error = Error;

    fn try_from(m: Matrix) -> Result<Self> {
        let m = Matrix::new(m.rows, m.cols, m.data)?;
        Self::new(m)
    }
}

impl From<ImageMask> for Matrix {
    fn from(m: ImageMask) -> Self {
        m.0
    }
}

/// Mask at feature-map resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct DownsampledMask(Matrix);

impl DownsampledMask {
    pub fn new(matrix: Matrix) -> Result<Self> {
        matrix.check_unit_interval("downsampled mask")?;
        Ok(Self(matrix))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn rows(&self) -> usize {
        self.0.rows
    }

    pub fn cols(&self) -> usize {
        self.0.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.0.get(row, col)
    }

    /// Positions with a strictly positive weight, in row-major order.
    pub fn active_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let cols = self.0.cols;
        self.0
            .data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(move |(idx, _)| (idx / cols, idx % cols))
    }

    pub fn support(&self) -> Option<BoundingBox> {
        self.0.positive_bbox()
    }

    fn check_spatial(&self, dims: Dims) -> Result<()> {
        if self.rows() != dims.rows || self.cols() != dims.cols {
            return Err(Error::invalid(format!(
                "mask is {}x{} but feature map is {}x{}",
                self.rows(),
                self.cols(),
                dims.rows,
                dims.cols
            )));
        }
        Ok(())
    }
}

/// For each output index, the source indices its footprint overlaps and the
/// overlap length of each.
fn footprint_weights(source: usize, target: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = source as f64 / target as f64;
    (0..target)
        .map(|t| {
            let lo = t as f64 * scale;
            let hi = if t + 1 == target {
                source as f64
            } else {
                (t + 1) as f64 * scale
            };
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(source);
            (first..last)
                .filter_map(|s| {
                    let overlap = hi.min((s + 1) as f64) - lo.max(s as f64);
                    (overlap > 0.0).then_some((s, overlap))
                })
                .collect()
        })
        .collect()
}

/// Area-average pooling of a full-resolution mask down to the feature grid.
pub fn downsample_mask(
    mask: &ImageMask,
    target_rows: usize,
    target_cols: usize,
) -> Result<DownsampledMask> {
    let src = mask.matrix();
    if target_rows == 0 || target_cols == 0 {
        return Err(Error::invalid("target mask dims must be positive"));
    }
    if target_rows > src.rows || target_cols > src.cols {
        return Err(Error::invalid(format!(
            "cannot downsample a {}x{} mask to {target_rows}x{target_cols}",
            src.rows, src.cols
        )));
    }

    let row_weights = footprint_weights(src.rows, target_rows);
    let col_weights = footprint_weights(src.cols, target_cols);
    let mut out = Matrix::filled(target_rows, target_cols, 0.0);
    for (tr, rw) in row_weights.iter().enumerate() {
        let row_total: f64 = rw.iter().map(|&(_, w)| w).sum();
        for (tc, cw) in col_weights.iter().enumerate() {
            let col_total: f64 = cw.iter().map(|&(_, w)| w).sum();
            let mut acc = 0.0f64;
            for &(r, wr) in rw {
                let mut row_acc = 0.0f64;
                for &(c, wc) in cw {
                    row_acc += wc * src.get(r, c) as f64;
                }
                acc += wr * (row_acc / col_total);
            }
            let value = (acc / row_total) as f32;
            out.set(tr, tc, value.clamp(0.0, 1.0));
        }
    }
    DownsampledMask::new(out)
}

/// Multiplies every channel at `(i, j)` by the mask weight at `(i, j)`.
pub fn apply_mask(fmap: &FeatureMap, mask: &DownsampledMask) -> Result<FeatureMap> {
    mask.check_spatial(fmap.dims)?;
    let d = fmap.dims.channels;
    let data = fmap
        .data
        .chunks_exact(d)
        .zip(&mask.matrix().data)
        .flat_map(|(px, &w)| px.iter().map(move |v| v * w))
        .collect();
    Ok(FeatureMap {
        image_id: fmap.image_id.clone(),
        dims: fmap.dims,
        data,
    })
}

/// Concatenates the channel vectors at every positive mask cell, row-major.
pub fn build_query_vector(masked: &FeatureMap, mask: &DownsampledMask) -> Result<Vec<f32>> {
    mask.check_spatial(masked.dims)?;
    let mut out = Vec::new();
    for (row, col) in mask.active_cells() {
        out.extend_from_slice(masked.pixel(row, col));
    }
    if out.is_empty() {
        return Err(Error::EmptyQuery);
    }
    Ok(out)
}

/// Applies the mask once more to an already-masked map and crops to the
/// tight support of the mask.
pub fn crop_nonzero(
    masked: &FeatureMap,
    mask: &DownsampledMask,
) -> Result<(FeatureMap, BoundingBox)> {
    mask.check_spatial(masked.dims)?;
    let bbox = mask.support().ok_or(Error::EmptyQuery)?;
    let d = masked.dims.channels;
    let mut data = Vec::with_capacity(bbox.area() * d);
    for row in bbox.row0..bbox.row1 {
        for col in bbox.col0..bbox.col1 {
            let w = mask.get(row, col);
            data.extend(masked.pixel(row, col).iter().map(|v| v * w));
        }
    }
    let cropped = FeatureMap {
        image_id: masked.image_id.clone(),
        dims: Dims::new(bbox.height(), bbox.width(), d),
        data,
    };
    Ok((cropped, bbox))
}
