//! Acceptance suite. Runs every primary criterion at its pinned tolerance and
//! prints one PASS/FAIL line per criterion; soft thresholds print WARN.
//! Exits non-zero if any hard check fails.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use featsearch_core::metrics::{
    aggregate, bin_by_area, iou, neighbor_bbox, overlap_count, unique_class_count, AreaBin,
    ResultSet,
};
use featsearch_core::search::{topk_search_oracle, topk_search_stream};
use featsearch_core::{
    conv_region_scores, downsample_mask, oracle_region_scores, prepare_query, topk_search,
    verify_store, BoundingBox, Compression, Dims, DownsampledMask, FeatureMap, FeatureStore,
    ImageMask, Matrix, SearchHit, StoreManifest,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tempfile::TempDir;

#[derive(PartialEq)]
enum Verdict {
    Pass,
    Warn,
    Fail,
}

struct Outcome {
    verdict: Verdict,
    detail: String,
}

fn pass(detail: impl Into<String>) -> Outcome {
    Outcome {
        verdict: Verdict::Pass,
        detail: detail.into(),
    }
}

fn fail(detail: impl Into<String>) -> Outcome {
    Outcome {
        verdict: Verdict::Fail,
        detail: detail.into(),
    }
}

fn check(ok: bool, detail: impl Into<String>) -> Outcome {
    if ok {
        pass(detail)
    } else {
        fail(detail)
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("oracle-equivalence", oracle_equivalence),
        ("offset-count", offset_count),
        ("self-retrieval", self_retrieval),
        ("cosine-properties", cosine_properties),
        ("store-round-trip", store_round_trip),
        ("desk-benchmark", desk_benchmark),
        ("metrics-examples", metrics_examples),
        ("service-conformance", service_conformance),
    ];
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    println!("acceptance criteria");
    for (name, f) in criteria {
        if filter.as_deref().is_some_and(|p| !name.contains(p)) {
            continue;
        }
        let t = Instant::now();
        let out = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            fail(format!("panicked: {msg}"))
        });
        let tag = match out.verdict {
            Verdict::Pass => "PASS",
            Verdict::Warn => "WARN",
            Verdict::Fail => {
                failed += 1;
                "FAIL"
            }
        };
        println!("{tag}  {name:<20} {} [{:.1}s]", out.detail, t.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn random_map(rng: &mut impl Rng, id: impl Into<String>, dims: Dims, relu: bool) -> FeatureMap {
    let data = (0..dims.len())
        .map(|_| {
            let v: f32 = rng.gen_range(-1.0..1.0);
            if relu {
                v.max(0.0)
            } else {
                v
            }
        })
        .collect();
    FeatureMap::new(id, dims, data).unwrap()
}

/// Fractional mask; positive cells sit inside a random sub-rectangle.
fn random_mask(rng: &mut impl Rng, rows: usize, cols: usize) -> DownsampledMask {
    let r0 = rng.gen_range(0..rows);
    let c0 = rng.gen_range(0..cols);
    let r1 = rng.gen_range(r0 + 1..=rows);
    let c1 = rng.gen_range(c0 + 1..=cols);
    let mut m = Matrix::filled(rows, cols, 0.0);
    for r in r0..r1 {
        for c in c0..c1 {
            if rng.gen_bool(0.7) {
                m.set(r, c, rng.gen_range(0.01f32..=1.0));
            }
        }
    }
    m.set(r0, c0, rng.gen_range(0.01f32..=1.0));
    m.set(r1 - 1, c1 - 1, rng.gen_range(0.01f32..=1.0));
    DownsampledMask::new(m).unwrap()
}

fn random_dims(rng: &mut impl Rng) -> Dims {
    Dims::new(rng.gen_range(1..=14), rng.gen_range(1..=14), rng.gen_range(1..=64))
}

fn ranking(hits: &[SearchHit]) -> Vec<(String, usize, usize)> {
    hits.iter()
        .map(|h| (h.image_id.clone(), h.alpha, h.beta))
        .collect()
}

fn oracle_equivalence() -> Outcome {
    const TRIALS: usize = 1000;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xE0);
    let mut max_gap = 0f64;
    let mut offsets = 0usize;
    let mut problems = Vec::new();
    for trial in 0..TRIALS {
        let dims = random_dims(&mut rng);
        let relu = trial % 2 == 0;
        let query = random_map(&mut rng, "q", dims, relu);
        let mask = random_mask(&mut rng, dims.rows, dims.cols);
        let qf = match prepare_query(&query, &mask) {
            Ok(qf) => qf,
            // ReLU queries can be all zero under a small mask.
            Err(featsearch_core::Error::DegenerateQuery) => continue,
            Err(e) => return fail(format!("trial {trial}: {e}")),
        };
        let mut dataset: Vec<FeatureMap> = (0..5)
            .map(|i| random_map(&mut rng, format!("img{i}"), dims, relu))
            .collect();
        dataset.push(query.clone().with_id("self"));
        for m in &dataset {
            let conv = conv_region_scores(&qf, m).unwrap();
            let oracle = oracle_region_scores(&query, &mask, m).unwrap();
            if conv.len() != oracle.len() {
                problems.push(format!("trial {trial}: {} vs {} offsets", conv.len(), oracle.len()));
                continue;
            }
            for (c, o) in conv.iter().zip(&oracle) {
                offsets += 1;
                if (c.alpha, c.beta, c.valid) != (o.alpha, o.beta, o.valid) {
                    problems.push(format!("trial {trial}: offset/validity mismatch"));
                }
                if c.valid {
                    max_gap = max_gap.max((c.score - o.score).abs());
                }
            }
        }
        let k = rng.gen_range(1..=dataset.len());
        let fast = topk_search(&qf, &dataset, k).unwrap();
        let slow = topk_search_oracle(&query, &mask, &dataset, k).unwrap();
        if ranking(&fast) != ranking(&slow) {
            let show = |h: &[SearchHit]| {
                h.iter()
                    .map(|h| format!("{}@({},{})={:.17}", h.image_id, h.alpha, h.beta, h.score))
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            problems.push(format!(
                "trial {trial} ({dims}): ranking differs: conv [{}] oracle [{}]",
                show(&fast),
                show(&slow)
            ));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    let detail = format!(
        "{TRIALS} trials, {offsets} offsets, max |conv - oracle| = {max_gap:.2e} (tol 1e-5), {} mismatches, {secs:.1}s (limit 120s)",
        problems.len()
    );
    if let Some(p) = problems.first() {
        return fail(format!("{detail}; first: {p}"));
    }
    check(max_gap <= 1e-5 && secs < 120.0, detail)
}

/// Support bbox computed directly from the mask cells.
fn support_extent(mask: &DownsampledMask) -> (usize, usize) {
    let m = mask.matrix();
    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
    for r in 0..m.rows {
        for c in 0..m.cols {
            if m.data[r * m.cols + c] > 0.0 {
                r0 = r0.min(r);
                r1 = r1.max(r);
                c0 = c0.min(c);
                c1 = c1.max(c);
            }
        }
    }
    (r1 - r0 + 1, c1 - c0 + 1)
}

fn offset_count() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0C);
    let mut wrong = 0;
    for _ in 0..100 {
        let dims = random_dims(&mut rng);
        let mask = random_mask(&mut rng, dims.rows, dims.cols);
        let query = random_map(&mut rng, "q", dims, false);
        let search = random_map(&mut rng, "s", dims, false);
        let (h, w) = support_extent(&mask);
        let expected = (dims.rows - h + 1) * (dims.cols - w + 1);
        let qf = prepare_query(&query, &mask).unwrap();
        let conv = conv_region_scores(&qf, &search).unwrap().len();
        let oracle = oracle_region_scores(&query, &mask, &search).unwrap().len();
        if conv != expected || oracle != expected || qf.offset_count() != expected {
            wrong += 1;
        }
    }
    check(wrong == 0, format!("100 mask shapes, {wrong} with a wrong region count"))
}

fn self_retrieval() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5E);
    let tmp = TempDir::new().unwrap();
    let mut worst = f64::INFINITY;
    let mut misses = Vec::new();
    for s in 0..50 {
        let dims = Dims::new(rng.gen_range(1..=14), rng.gen_range(1..=14), rng.gen_range(1..=64));
        let n = rng.gen_range(2..=60);
        let maps: Vec<FeatureMap> = (0..n)
            .map(|i| random_map(&mut rng, format!("s{s}_{i}"), dims, s % 2 == 0))
            .filter(|m| m.data().iter().any(|&v| v != 0.0))
            .collect();
        let compression = if s % 2 == 0 { Compression::Deflate } else { Compression::None };
        let root = tmp.path().join(format!("store{s}"));
        let manifest = StoreManifest::new("ds", "m", "l", dims, rng.gen_range(1..=16), compression);
        let mut w = FeatureStore::create(&root, manifest).unwrap();
        w.append(&maps).unwrap();
        drop(w);
        let store = FeatureStore::open(&root).unwrap();
        let query = &maps[rng.gen_range(0..maps.len())];
        let full = downsample_mask(
            &ImageMask::new(Matrix::filled(224, 224, 1.0)).unwrap(),
            dims.rows,
            dims.cols,
        )
        .unwrap();
        let qf = prepare_query(query, &full).unwrap();
        let batch = store.manifest().images_per_chunk as usize;
        let hits = topk_search_stream(&qf, store.iterate_batches(batch).unwrap(), 3).unwrap();
        let top = &hits[0];
        worst = worst.min(top.score);
        if top.image_id != query.image_id() || (top.alpha, top.beta) != (0, 0) || top.score < 1.0 - 1e-6 {
            misses.push(format!("store {s}: top {} ({}, {}) {}", top.image_id, top.alpha, top.beta, top.score));
        }
    }
    match misses.first() {
        None => pass(format!("50 stores, query always first at (0,0), min score {worst:.9} (>= 1 - 1e-6)")),
        Some(m) => fail(format!("{} misses; first: {m}", misses.len())),
    }
}

fn cosine_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0);
    let (lo, hi) = (-1.0 - 1e-6, 1.0 + 1e-6);
    let mut scores = 0usize;
    let mut out_of_range = 0usize;
    let mut max_drift = 0f64;
    let mut reorders = 0usize;
    for trial in 0..200 {
        let dims = random_dims(&mut rng);
        let relu = trial % 3 == 0;
        let query = random_map(&mut rng, "q", dims, relu);
        let mask = random_mask(&mut rng, dims.rows, dims.cols);
        let Ok(qf) = prepare_query(&query, &mask) else {
            continue;
        };
        let dataset: Vec<FeatureMap> = (0..8)
            .map(|i| random_map(&mut rng, format!("img{i}"), dims, relu))
            .collect();
        for m in &dataset {
            for r in conv_region_scores(&qf, m).unwrap().iter().filter(|r| r.valid) {
                scores += 1;
                if !(lo..=hi).contains(&r.score) {
                    out_of_range += 1;
                }
            }
        }
        let base = topk_search(&qf, &dataset, 8).unwrap();
        for c in [0.5f32, 2.0, 10.0] {
            let scaled = prepare_query(&query.scaled(c).unwrap(), &mask).unwrap();
            let hits = topk_search(&scaled, &dataset, 8).unwrap();
            if ranking(&hits) != ranking(&base) {
                reorders += 1;
            }
            for (a, b) in hits.iter().zip(&base) {
                max_drift = max_drift.max((a.score - b.score).abs());
            }
            for m in &dataset {
                let x = conv_region_scores(&scaled, m).unwrap();
                let y = conv_region_scores(&qf, m).unwrap();
                for (a, b) in x.iter().zip(&y) {
                    max_drift = max_drift.max((a.score - b.score).abs());
                }
            }
        }
    }
    check(
        out_of_range == 0 && max_drift <= 1e-6 && reorders == 0,
        format!(
            "{scores} valid scores, {out_of_range} outside [-1-1e-6, 1+1e-6]; scaling by 0.5/2/10: max drift {max_drift:.2e} (tol 1e-6), {reorders} reorderings"
        ),
    )
}

fn store_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x57);
    let tmp = TempDir::new().unwrap();
    let dims = Dims::new(7, 7, 16);
    let maps: Vec<FeatureMap> = (0..1000)
        .map(|i| random_map(&mut rng, format!("n{i:05}"), dims, i % 2 == 0))
        .collect();
    let mut notes = Vec::new();
    for compression in [Compression::None, Compression::Deflate] {
        let root = tmp.path().join(format!("{compression:?}"));
        let manifest = StoreManifest::new("ds", "m", "l", dims, 64, compression);
        let mut w = FeatureStore::create(&root, manifest).unwrap();
        // Several appends, so chunk boundaries do not line up with batches.
        for part in maps.chunks(300) {
            w.append(part).unwrap();
        }
        drop(w);
        let store = FeatureStore::open(&root).unwrap();
        let back = store.load_all().unwrap();
        let identical = back.len() == maps.len()
            && back.iter().zip(&maps).all(|(a, b)| {
                a.image_id() == b.image_id()
                    && a.dims() == b.dims()
                    && a.data().iter().map(|v| v.to_bits()).eq(b.data().iter().map(|v| v.to_bits()))
            });
        if !identical {
            return fail(format!("{compression:?}: read-back differs"));
        }
        let report = verify_store(&root);
        if !report.ok {
            return fail(format!("{compression:?}: verify failed on a pristine store"));
        }

        let data = root.join("data.bin");
        let mut bytes = std::fs::read(&data).unwrap();
        let pos = rng.gen_range(0..bytes.len());
        bytes[pos] ^= 1 << rng.gen_range(0..8);
        std::fs::write(&data, &bytes).unwrap();
        let report = verify_store(&root);
        let failed: Vec<u32> = report.failed_chunks().map(|c| c.ordinal).collect();
        let expected = store
            .index()
            .iter()
            .find(|e| (e.byte_offset..e.end()).contains(&(pos as u64)))
            .map(|e| e.chunk_ordinal);
        if failed.len() != 1 || Some(failed[0]) != expected {
            return fail(format!("{compression:?}: byte {pos} flipped, failing chunks {failed:?}"));
        }
        let out = run(&["verify", "--store", s(&root)]);
        if code(&out) != 2 {
            return fail(format!("{compression:?}: verify exited {}", code(&out)));
        }
        notes.push(format!("{compression:?}: {} chunks, flip -> chunk {} fails, exit 2", store.index().len(), failed[0]));
    }
    pass(format!("1000 maps bit-identical, verify ok; {}", notes.join("; ")))
}

fn desk_benchmark() -> Outcome {
    const N: usize = 5000;
    let dims = Dims::new(7, 7, 512);
    let tmp = TempDir::new().unwrap();
    let root = tmp.path().join("bench");
    let mut rng = ChaCha8Rng::seed_from_u64(0xBE);
    let manifest = StoreManifest::new("bench", "synthetic", "conv5", dims, 100, Compression::None);
    let mut w = FeatureStore::create(&root, manifest).unwrap();
    for start in (0..N).step_by(500) {
        let part: Vec<FeatureMap> = (start..start + 500)
            .map(|i| random_map(&mut rng, format!("b{i:05}"), dims, true))
            .collect();
        w.append(&part).unwrap();
    }
    drop(w);

    // Object-sized brush stroke over the middle of a 224x224 image.
    let mut mask = Matrix::filled(224, 224, 0.0);
    for r in 48..176 {
        for c in 64..160 {
            mask.set(r, c, 1.0);
        }
    }
    let mask_path = write_mask(&tmp.path().join("mask.json"), &mask);

    let store = FeatureStore::open(&root).unwrap();
    let maps = store.load_all().unwrap();
    let mask_l = downsample_mask(&ImageMask::new(mask).unwrap(), 7, 7).unwrap();
    let t = Instant::now();
    let qf = prepare_query(&maps[0], &mask_l).unwrap();
    let hits = topk_search(&qf, &maps, 6).unwrap();
    let in_ram_s = t.elapsed().as_secs_f64();
    drop(maps);
    if hits[0].image_id != "b00000" {
        return fail("query is not its own best match");
    }

    let out = run(&["bench", "--store", s(&root), "--mask", s(&mask_path), "--repeat", "3"]);
    if code(&out) != 0 {
        return fail(format!("bench exited {}: {}", code(&out), String::from_utf8_lossy(&out.stderr)));
    }
    let r: Value = match serde_json::from_slice(&out.stdout) {
        Ok(v) => v,
        Err(e) => return fail(format!("bench output is not JSON: {e}")),
    };
    let schema_ok = r["images"] == N
        && r["dims"] == json!([7, 7, 512])
        && r["streamed_ms"].is_f64()
        && r["in_ram_ms"].is_f64()
        && r["streamed_samples_ms"].as_array().map(Vec::len) == Some(3)
        && r["in_ram_samples_ms"].as_array().map(Vec::len) == Some(3);
    if !schema_ok {
        return fail(format!("bench report schema: {r}"));
    }
    let streamed = r["streamed_ms"].as_f64().unwrap();
    let in_ram = r["in_ram_ms"].as_f64().unwrap();
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let detail = format!(
        "{N} maps of 7x7x512 on {cores} core(s): in-RAM topk_search {in_ram_s:.2}s (soft limit 5s); bench in_ram_ms {in_ram:.0} vs streamed_ms {streamed:.0} (soft: in_ram <= 2x streamed); schema ok"
    );
    if in_ram_s < 5.0 && in_ram <= 2.0 * streamed {
        pass(detail)
    } else {
        Outcome {
            verdict: Verdict::Warn,
            detail,
        }
    }
}

fn hit(id: &str, mask: Matrix) -> SearchHit {
    SearchHit {
        image_id: id.into(),
        score: 0.5,
        alpha: 0,
        beta: 0,
        region_mask: mask,
    }
}

fn result_set(ids: &[&str]) -> ResultSet {
    ResultSet {
        query_id: "q".into(),
        hits: ids.iter().map(|id| hit(id, Matrix::filled(7, 7, 1.0))).collect(),
    }
}

/// IoU by counting covered pixels on a grid.
fn pixel_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (mut inter, mut union) = (0u64, 0u64);
    let rows = a.row1.max(b.row1);
    let cols = a.col1.max(b.col1);
    for r in 0..rows {
        for c in 0..cols {
            let ia = (a.row0..a.row1).contains(&r) && (a.col0..a.col1).contains(&c);
            let ib = (b.row0..b.row1).contains(&r) && (b.col0..b.col1).contains(&c);
            inter += (ia && ib) as u64;
            union += (ia || ib) as u64;
        }
    }
    inter as f64 / union as f64
}

fn metrics_examples() -> Outcome {
    let mut failures: Vec<String> = Vec::new();
    let mut expect = |ok: bool, what: &str| {
        if !ok {
            failures.push(what.to_owned());
        }
    };

    let labels: BTreeMap<String, String> = [("1", "a"), ("2", "a"), ("3", "b"), ("4", "c"), ("5", "c")]
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    expect(unique_class_count(&result_set(&["1", "2", "3", "4", "5"]), &labels).ok() == Some(3), "classes [a,a,b,c,c] = 3");
    expect(unique_class_count(&result_set(&["1", "2"]), &labels).ok() == Some(1), "classes all same = 1");
    expect(unique_class_count(&result_set(&[]), &labels).ok() == Some(0), "classes of empty = 0");
    expect(
        unique_class_count(&result_set(&["1", "zz"]), &labels)
            .err()
            .is_some_and(|e| e.to_string().contains("zz")),
        "missing label names the id",
    );

    let one_to_five = result_set(&["1", "2", "3", "4", "5"]);
    expect(overlap_count(&one_to_five, &result_set(&["4", "5", "6", "7", "8"])) == 2, "overlap {1..5} {4..8} = 2");
    expect(overlap_count(&one_to_five, &one_to_five.clone()) == 5, "overlap identical = 5");
    expect(overlap_count(&one_to_five, &result_set(&["6", "7"])) == 0, "overlap disjoint = 0");

    let cells = |rr: std::ops::RangeInclusive<usize>, cc: std::ops::RangeInclusive<usize>| {
        let mut m = Matrix::filled(7, 7, 0.0);
        for r in rr {
            for c in cc.clone() {
                m.set(r, c, 1.0);
            }
        }
        m
    };
    let nb = |m: Matrix| neighbor_bbox(&hit("n", m), 224, 224).ok();
    expect(nb(Matrix::filled(7, 7, 1.0)) == BoundingBox::new(0, 0, 224, 224).ok(), "full mask -> full image");
    expect(nb(cells(0..=0, 0..=0)) == BoundingBox::new(0, 0, 32, 32).ok(), "cell (0,0) -> [0,32)x[0,32)");
    expect(nb(cells(2..=4, 3..=4)) == BoundingBox::new(64, 96, 160, 160).ok(), "cells (2..4,3..4) -> [64,160)x[96,160)");
    expect(nb(Matrix::filled(7, 7, 0.0)).is_none(), "empty region mask is an error");

    let b = |r0, c0, r1, c1| BoundingBox::new(r0, c0, r1, c1).unwrap();
    let x = b(0, 0, 2, 2);
    let y = b(1, 1, 3, 3);
    let seventh = pixel_iou(&x, &y);
    let iou_gap = (iou(&x, &y) - seventh).abs();
    expect(iou_gap <= 1e-12, "iou (0,0,2,2) vs (1,1,3,3) = 1/7");
    expect(iou(&x, &x) == 1.0, "iou identical = 1");
    expect(iou(&x, &b(5, 5, 9, 9)) == 0.0, "iou disjoint = 0");

    let bins = [
        (900.0, AreaBin::Small),
        (3000.0, AreaBin::Medium),
        (25000.0, AreaBin::Xlarge),
        (999.0, AreaBin::Small),
        (1000.0, AreaBin::Medium),
        (4999.0, AreaBin::Medium),
        (5000.0, AreaBin::Large),
        (19999.0, AreaBin::Large),
        (20000.0, AreaBin::Xlarge),
    ];
    for (area, bin) in bins {
        expect(bin_by_area(area).ok() == Some(bin), &format!("bin_by_area({area}) = {}", bin.name()));
    }
    expect(bin_by_area(0.0).is_err() && bin_by_area(-5.0).is_err(), "nonpositive area is an error");

    expect(aggregate(&[1.0, 1.0, 1.0]).ok() == Some((1.0, 0.0)), "aggregate [1,1,1] = (1, 0)");
    // Sample stddev of [0, 1] is sqrt(0.5); over sqrt(2) that is 0.5.
    let se = (0.5f64).sqrt() / 2f64.sqrt();
    expect(
        aggregate(&[0.0, 1.0]).is_ok_and(|(m, s)| m == 0.5 && (s - se).abs() <= 1e-12),
        "aggregate [0,1] = (0.5, 0.5)",
    );
    expect(aggregate(&[0.37]).ok() == Some((0.37, 0.0)), "aggregate [v] = (v, 0)");
    expect(aggregate(&[]).is_err(), "aggregate [] is an error");

    if failures.is_empty() {
        pass(format!(
            "class count, overlap, neighbour box, IoU (1/7 gap {iou_gap:.1e}), 9 bin cases incl. 999/1000/4999/5000/19999/20000, aggregate: all exact"
        ))
    } else {
        fail(failures.join("; "))
    }
}

fn service_conformance() -> Outcome {
    let tmp = TempDir::new().unwrap();
    let (store_path, _) = ingest_new(tmp.path(), &[64, 66], Dims::new(7, 7, 32), "deflate");
    let cfg = tmp.path().join("service.json");
    std::fs::write(
        &cfg,
        json!({"stores": [{"name": "fixture", "store_path": store_path, "ram_budget_mb": 64}]}).to_string(),
    )
    .unwrap();
    let store = FeatureStore::open(&store_path).unwrap();
    let maps = store.load_all().unwrap();
    if maps.len() != 130 {
        return fail(format!("fixture holds {} maps", maps.len()));
    }

    let (mut child, port) = spawn_server(&cfg);
    let result = conformance_checks(port, &maps);
    let _ = child.kill();
    let _ = child.wait();
    result
}

fn conformance_checks(port: u16, maps: &[FeatureMap]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5C);
    let mut compared = 0;
    for trial in 0..10 {
        let query = &maps[rng.gen_range(0..maps.len())];
        let mut mask = Matrix::filled(224, 224, 0.0);
        let (r0, c0) = (rng.gen_range(0..150), rng.gen_range(0..150));
        for r in r0..r0 + rng.gen_range(20..74) {
            for c in c0..c0 + rng.gen_range(20..74) {
                mask.set(r, c, rng.gen_range(0.1f32..=1.0));
            }
        }
        let k = rng.gen_range(1..=20);
        let body = json!({"dataset": "fixture", "query_image_id": query.image_id(), "mask": mask, "k": k});
        let Some((status, resp)) = http(port, "POST", "/api/search", body.to_string().as_bytes()) else {
            return fail("no response from /api/search");
        };
        if status != 200 {
            return fail(format!("trial {trial}: status {status}: {}", String::from_utf8_lossy(&resp)));
        }
        #[derive(serde::Deserialize)]
        struct Wire {
            hits: Vec<SearchHit>,
        }
        let wire: Wire = serde_json::from_slice(&resp).unwrap();
        let mask_l = downsample_mask(&ImageMask::new(mask).unwrap(), 7, 7).unwrap();
        let qf = prepare_query(query, &mask_l).unwrap();
        let lib = topk_search(&qf, maps, k).unwrap();
        let api_bytes = serde_json::to_string(&wire.hits).unwrap();
        let lib_bytes = serde_json::to_string(&lib).unwrap();
        if api_bytes != lib_bytes {
            return fail(format!("trial {trial}: API hits differ from library topk_search"));
        }
        compared += lib.len();
    }

    let zero = json!({"dataset": "fixture", "query_image_id": maps[0].image_id(), "mask": Matrix::filled(224, 224, 0.0)});
    let (status, resp) = http(port, "POST", "/api/search", zero.to_string().as_bytes()).unwrap();
    let code: Value = serde_json::from_slice(&resp).unwrap_or(Value::Null);
    if status != 422 || code["code"] != "empty_mask" {
        return fail(format!("zero mask -> {status} {code}"));
    }
    let secondary = ["extractor", "webui"]
        .iter()
        .any(|c| Path::new(env!("CARGO_MANIFEST_DIR")).join("..").join(c).exists());
    check(
        !secondary,
        format!("130-image store, 10 requests, {compared} hits byte-identical to topk_search; zero mask -> 422 empty_mask; no secondary component built"),
    )
}
