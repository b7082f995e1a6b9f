//! Result-set analyses: class diversity, cross-model overlap, and IoU of
//! neighbour regions against ground-truth boxes binned by box area.
//!
//! Result sets and ground-truth boxes are exchanged as line-delimited JSON:
//!
//! ```text
//! {"query_id": "q1", "hits": [{"image_id": "a", "score": 0.9, "alpha": 0, "beta": 1,
//!                              "region_mask": {"rows": 7, "cols": 7, "data": [...]}}]}
//! {"image_id": "a", "row0": 10, "col0": 20, "row1": 50, "col1": 60,
//!  "image_rows": 224, "image_cols": 224}
//! ```
//!
//! `image_rows`/`image_cols` are optional; a default image size is used when
//! they are absent.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::BufRead;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search::SearchHit;
use crate::tensor::BoundingBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultSet {
    pub query_id: String,
    pub hits: Vec<SearchHit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox")]
pub struct GroundTruthBox {
    pub image_id: String,
    #[serde(flatten)]
    pub bbox: BoundingBox,
    pub area: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_rows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_cols: Option<usize>,
}

#[derive(Deserialize)]
struct RawBox {
    image_id: String,
    row0: usize,
    col0: usize,
    row1: usize,
    col1: usize,
    #[serde(default)]
    image_rows: Option<usize>,
    #[serde(default)]
    image_cols: Option<usize>,
}

impl TryFrom<RawBox> for GroundTruthBox {
    type Error = Error;

    fn try_from(r: RawBox) -> Result<Self> {
        let mut b = GroundTruthBox::new(
            r.image_id,
            BoundingBox::new(r.row0, r.col0, r.row1, r.col1)?,
        );
        b.image_rows = r.image_rows;
        b.image_cols = r.image_cols;
        Ok(b)
    }
}

impl GroundTruthBox {
    pub fn new(image_id: impl Into<String>, bbox: BoundingBox) -> Self {
        Self {
            image_id: image_id.into(),
            bbox,
            area: bbox.area() as f64,
            image_rows: None,
            image_cols: None,
        }
    }
}

/// Number of distinct class labels among the hits.
pub fn unique_class_count(rs: &ResultSet, labels: &BTreeMap<String, String>) -> Result<usize> {
    let mut classes = HashSet::new();
    for hit in &rs.hits {
        let label = labels
            .get(&hit.image_id)
            .ok_or_else(|| Error::invalid(format!("no class label for image {}", hit.image_id)))?;
        classes.insert(label.as_str());
    }
    Ok(classes.len())
}

/// Number of image ids the two result sets share.
pub fn overlap_count(a: &ResultSet, b: &ResultSet) -> usize {
    let ids: HashSet<&str> = a.hits.iter().map(|h| h.image_id.as_str()).collect();
    b.hits
        .iter()
        .map(|h| h.image_id.as_str())
        .collect::<HashSet<_>>()
        .intersection(&ids)
        .count()
}

/// Tight box around the hit's region mask, scaled from feature cells to
/// image pixels and rounded outward.
pub fn neighbor_bbox(hit: &SearchHit, image_rows: usize, image_cols: usize) -> Result<BoundingBox> {
    let mask = &hit.region_mask;
    let cells = mask
        .positive_bbox()
        .ok_or_else(|| Error::invalid(format!("region mask of {} is empty", hit.image_id)))?;
    let down = |v: usize, size: usize, cells: usize| v * size / cells;
    let up = |v: usize, size: usize, cells: usize| (v * size).div_ceil(cells);
    BoundingBox::new(
        down(cells.row0, image_rows, mask.rows),
        down(cells.col0, image_cols, mask.cols),
        up(cells.row1, image_rows, mask.rows),
        up(cells.col1, image_cols, mask.cols),
    )
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let rows = a.row1.min(b.row1).saturating_sub(a.row0.max(b.row0));
    let cols = a.col1.min(b.col1).saturating_sub(a.col0.max(b.col0));
    let inter = (rows * cols) as f64;
    let union = (a.area() + b.area()) as f64 - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AreaBin {
    Small,
    Medium,
    Large,
    Xlarge,
}

impl AreaBin {
    pub const ALL: [AreaBin; 4] = [
        AreaBin::Small,
        AreaBin::Medium,
        AreaBin::Large,
        AreaBin::Xlarge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AreaBin::Small => "small",
            AreaBin::Medium => "medium",
            AreaBin::Large => "large",
            AreaBin::Xlarge => "xlarge",
        }
    }
}

/// Face-size bins in square pixels: `[0,1k)`, `[1k,5k)`, `[5k,20k)`, `[20k,inf)`.
pub fn bin_by_area(area: f64) -> Result<AreaBin> {
    if !(area > 0.0) || !area.is_finite() {
        return Err(Error::invalid(format!("area must be positive, got {area}")));
    }
    Ok(if area < 1_000.0 {
        AreaBin::Small
    } else if area < 5_000.0 {
        AreaBin::Medium
    } else if area < 20_000.0 {
        AreaBin::Large
    } else {
        AreaBin::Xlarge
    })
}

/// Mean and standard error (sample standard deviation over `sqrt(n)`).
pub fn aggregate(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::invalid("cannot aggregate an empty list"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt() / n.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Result<Self> {
        let (mean, stderr) = aggregate(values)?;
        Ok(Self {
            n: values.len(),
            mean,
            stderr,
        })
    }
}

/// Average number of distinct classes per result set.
pub fn class_diversity(sets: &[ResultSet], labels: &BTreeMap<String, String>) -> Result<Summary> {
    let counts = sets
        .iter()
        .map(|rs| unique_class_count(rs, labels).map(|c| c as f64))
        .collect::<Result<Vec<_>>>()?;
    Summary::of(&counts)
}

/// Average overlap between result sets of two models, paired by query id.
/// Queries present in only one side are ignored.
pub fn paired_overlap(a: &[ResultSet], b: &[ResultSet]) -> Result<Summary> {
    let by_query: HashMap<&str, &ResultSet> = b.iter().map(|r| (r.query_id.as_str(), r)).collect();
    let counts: Vec<f64> = a
        .iter()
        .filter_map(|ra| {
            by_query
                .get(ra.query_id.as_str())
                .map(|rb| overlap_count(ra, rb) as f64)
        })
        .collect();
    Summary::of(&counts)
}

/// Which neighbours contribute to a query's IoU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouMode {
    /// The first hit only.
    #[default]
    Top1,
    /// Mean over every returned hit.
    MeanTopK,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryIou {
    pub query_id: String,
    pub query_area: f64,
    pub bin: AreaBin,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinSummary {
    pub bin: AreaBin,
    #[serde(flatten)]
    pub summary: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IouReport {
    pub mode: IouMode,
    pub bins: Vec<BinSummary>,
    pub queries: Vec<QueryIou>,
}

impl IouReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin,n,mean_iou,stderr\n");
        for b in &self.bins {
            match &b.summary {
                Some(s) => out.push_str(&format!(
                    "{},{},{},{}\n",
                    b.bin.name(),
                    s.n,
                    s.mean,
                    s.stderr
                )),
                None => out.push_str(&format!("{},0,,\n", b.bin.name())),
            }
        }
        out
    }
}

/// IoU of each query's neighbour regions against the neighbours' ground-truth
/// boxes, binned by the area of the query's own ground-truth box. A neighbour
/// with no ground-truth box scores 0. Queries without a ground-truth box or
/// without hits are skipped.
pub fn face_iou_report(
    sets: &[ResultSet],
    truth: &[GroundTruthBox],
    default_size: (usize, usize),
    mode: IouMode,
) -> Result<IouReport> {
    let mut boxes: HashMap<&str, Vec<&GroundTruthBox>> = HashMap::new();
    for b in truth {
        boxes.entry(b.image_id.as_str()).or_default().push(b);
    }
    let size_of = |id: &str| {
        boxes
            .get(id)
            .and_then(|bs| bs.iter().find_map(|b| b.image_rows.zip(b.image_cols)))
            .unwrap_or(default_size)
    };
    let hit_iou = |hit: &SearchHit| -> Result<f64> {
        let (rows, cols) = size_of(&hit.image_id);
        let nb = neighbor_bbox(hit, rows, cols)?;
        Ok(boxes
            .get(hit.image_id.as_str())
            .map(|bs| bs.iter().map(|b| iou(&nb, &b.bbox)).fold(0.0, f64::max))
            .unwrap_or(0.0))
    };

    let mut queries = Vec::new();
    for rs in sets {
        let Some(query_box) = boxes
            .get(rs.query_id.as_str())
            .and_then(|bs| bs.iter().max_by(|a, b| a.area.total_cmp(&b.area)))
        else {
            continue;
        };
        if rs.hits.is_empty() {
            continue;
        }
        let value = match mode {
            IouMode::Top1 => hit_iou(&rs.hits[0])?,
            IouMode::MeanTopK => {
                let all = rs.hits.iter().map(hit_iou).collect::<Result<Vec<_>>>()?;
                all.iter().sum::<f64>() / all.len() as f64
            }
        };
        queries.push(QueryIou {
            query_id: rs.query_id.clone(),
            query_area: query_box.area,
            bin: bin_by_area(query_box.area)?,
            iou: value,
        });
    }

    let bins = AreaBin::ALL
        .iter()
        .map(|&bin| {
            let vals: Vec<f64> = queries
                .iter()
                .filter(|q| q.bin == bin)
                .map(|q| q.iou)
                .collect();
            BinSummary {
                bin,
                summary: Summary::of(&vals).ok(),
            }
        })
        .collect();
    Ok(IouReport {
        mode,
        bins,
        queries,
    })
}

/// Parses line-delimited JSON, skipping blank lines. Errors carry the byte
/// offset of the offending line.
pub fn read_jsonl<T: DeserializeOwned>(reader: impl BufRead) -> Result<Vec<T>> {
    let mut out = Vec::new();
    let mut offset = 0u64;
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            let item = serde_json::from_str(&line).map_err(|e| Error::Parse {
                offset,
                message: e.to_string(),
            })?;
            out.push(item);
        }
        offset += line.len() as u64 + 1;
    }
    Ok(out)
}
