use std::borrow::Borrow;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use super::{conv_region_scores, QueryFilter, RegionScore, SearchHit};
use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

/// Images scored per parallel batch when consuming a plain iterator.
const PAR_BATCH: usize = 256;

/// Picks the highest valid score; ties go to the smaller `(alpha, beta)`.
/// Returns an invalid sentinel at `(0, 0)` when nothing is valid.
pub fn best_region(scores: &[RegionScore]) -> Result<RegionScore> {
    if scores.is_empty() {
        return Err(Error::invalid("no region scores to reduce"));
    }
    let best = scores.iter().filter(|s| s.valid).min_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| (a.alpha, a.beta).cmp(&(b.alpha, b.beta)))
    });
    Ok(best.copied().unwrap_or(RegionScore::invalid(0, 0)))
}

/// Total order over hits: score descending, then image id ascending, then
/// row-major offset. `Less` means ranked earlier.
pub struct HitOrder;

impl HitOrder {
    pub fn compare(a: &SearchHit, b: &SearchHit) -> Ordering {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.image_id.cmp(&b.image_id))
            .then_with(|| (a.alpha, a.beta).cmp(&(b.alpha, b.beta)))
    }
}

struct Ranked(SearchHit);

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        HitOrder::compare(&self.0, &other.0)
    }
}

/// Bounded heap keeping the `k` best hits under [`HitOrder`]. The result does
/// not depend on the order hits are offered in.
pub struct TopKCollector {
    k: usize,
    // Max-heap under HitOrder, so the root is the worst retained hit.
    heap: BinaryHeap<Ranked>,
}

impl TopKCollector {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k.saturating_add(1).min(4096)),
        }
    }

    pub fn offer(&mut self, hit: SearchHit) {
        if self.heap.len() < self.k {
            self.heap.push(Ranked(hit));
            return;
        }
        if let Some(worst) = self.heap.peek() {
            if HitOrder::compare(&hit, &worst.0) == Ordering::Less {
                self.heap.pop();
                self.heap.push(Ranked(hit));
            }
        }
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn into_sorted(self) -> Vec<SearchHit> {
        self.heap
            .into_sorted_vec()
            .into_iter()
            .map(|r| r.0)
            .collect()
    }
}

/// How per-offset scores are turned into hits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    /// One hit per image: its best region.
    #[default]
    BestPerImage,
    /// Every valid region is a candidate; an image may appear several times.
    AllRegions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchOptions {
    pub k: usize,
    pub reduction: Reduction,
}

impl SearchOptions {
    pub fn top(k: usize) -> Self {
        Self {
            k,
            reduction: Reduction::BestPerImage,
        }
    }
}

fn score_image(
    qf: &QueryFilter,
    fmap: &FeatureMap,
    reduction: Reduction,
) -> Result<Vec<SearchHit>> {
    let scores = conv_region_scores(qf, fmap)?;
    let to_hit = |s: &RegionScore| SearchHit {
        image_id: fmap.image_id().to_owned(),
        score: s.score,
        alpha: s.alpha,
        beta: s.beta,
        region_mask: qf.region_mask(s.alpha, s.beta),
    };
    Ok(match reduction {
        Reduction::BestPerImage => {
            let best = best_region(&scores)?;
            if best.valid {
                vec![to_hit(&best)]
            } else {
                Vec::new()
            }
        }
        Reduction::AllRegions => scores.iter().filter(|s| s.valid).map(to_hit).collect(),
    })
}

fn score_batch<M>(qf: &QueryFilter, maps: &[M], reduction: Reduction) -> Result<Vec<SearchHit>>
where
    M: Borrow<FeatureMap> + Sync,
{
    // Sequential check so the reported offender does not depend on scheduling.
    for m in maps {
        qf.check_dims(m.borrow())?;
    }
    let per_image: Vec<Vec<SearchHit>> = maps
        .par_iter()
        .map(|m| score_image(qf, m.borrow(), reduction))
        .collect::<Result<_>>()?;
    Ok(per_image.into_iter().flatten().collect())
}

/// Best hit of each image that has at least one valid region, in input order.
pub fn search_batch<M>(qf: &QueryFilter, maps: &[M]) -> Result<Vec<SearchHit>>
where
    M: Borrow<FeatureMap> + Sync,
{
    score_batch(qf, maps, Reduction::BestPerImage)
}

/// General entry point; [`topk_search`] is `search` with [`Reduction::BestPerImage`].
pub fn search<I>(qf: &QueryFilter, dataset: I, options: &SearchOptions) -> Result<Vec<SearchHit>>
where
    I: IntoIterator,
    I::Item: Borrow<FeatureMap> + Sync,
{
    if options.k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let mut top = TopKCollector::new(options.k);
    let mut pending = Vec::with_capacity(PAR_BATCH);
    let flush = |pending: &mut Vec<I::Item>, top: &mut TopKCollector| -> Result<()> {
        for hit in score_batch(qf, pending, options.reduction)? {
            top.offer(hit);
        }
        pending.clear();
        Ok(())
    };
    for item in dataset {
        pending.push(item);
        if pending.len() == PAR_BATCH {
            flush(&mut pending, &mut top)?;
        }
    }
    flush(&mut pending, &mut top)?;
    Ok(top.into_sorted())
}

/// Ranks every image by its best region and returns the `k` best.
pub fn topk_search<I>(qf: &QueryFilter, dataset: I, k: usize) -> Result<Vec<SearchHit>>
where
    I: IntoIterator,
    I::Item: Borrow<FeatureMap> + Sync,
{
    search(qf, dataset, &SearchOptions::top(k))
}

/// Ranks individual regions across the whole dataset. Diagnostic.
pub fn rank_all_regions<I>(qf: &QueryFilter, dataset: I, k: usize) -> Result<Vec<SearchHit>>
where
    I: IntoIterator,
    I::Item: Borrow<FeatureMap> + Sync,
{
    search(
        qf,
        dataset,
        &SearchOptions {
            k,
            reduction: Reduction::AllRegions,
        },
    )
}

/// [`topk_search`] over a fallible stream of batches, e.g. a store being read
/// from disk. Stops at the first error.
pub fn topk_search_stream<I, E>(qf: &QueryFilter, batches: I, k: usize) -> Result<Vec<SearchHit>, E>
where
    I: IntoIterator<Item = Result<Vec<FeatureMap>, E>>,
    E: From<Error>,
{
    if k == 0 {
        return Err(Error::invalid("k must be at least 1").into());
    }
    let mut top = TopKCollector::new(k);
    for batch in batches {
        for hit in search_batch(qf, &batch?)? {
            top.offer(hit);
        }
    }
    Ok(top.into_sorted())
}
