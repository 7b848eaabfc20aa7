//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.
//!
//! `ACCEPTANCE_ONLY=name1,name2` restricts the run; `ACCEPTANCE_LATENCY_MS`
//! overrides the 50 ms latency threshold.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use image::RgbImage;
use patchsearch::dataset::{generate_synthetic, ClassAxis, SlideStore, SynthSpec};
use patchsearch::embedder::{Embedder, ReferenceEmbedder};
use patchsearch::eval::{
    chi_squared_2x2, chi_squared_df1_sf, confusion_matrix, engine_run_embedded, evaluate,
    per_class_top_k, query_classes, random_run, rubric_score, top_k_score, EvalOptions, LabelAxis,
    MatchMode, RunOptions,
};
use patchsearch::index::{
    decode, encode, load_db, save_db, synthetic::perturbed, IndexEntry, IndexParams, KdTree,
    ShardKind, ShardSet,
};
use patchsearch::pipeline::{
    build_database, write_build_output, BuildConfig, BuildOutput, SplitConfig,
};
use patchsearch::query::{query, query_embedding, QueryResponse, QuerySpec, RegionSpec};
use patchsearch::{
    apply_orientation, Embedding, Gleason, LabelSet, Magnification, Orientation, PatchMeta,
    PatchRecord,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Nine-class dataset: 15 slides of 6000 px, 24 regions each, 40X only.
fn nine_class_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        n_slides: 15,
        slide_width_px: 6000,
        slide_height_px: 6000,
        regions_per_slide: 24,
        levels: vec![Magnification::X40],
        ..SynthSpec::nine_class(seed)
    }
}

struct Fixture {
    store: SlideStore,
    built: BuildOutput,
    records: BTreeMap<u64, PatchRecord>,
    /// R0 embeddings of the query patches, in query order.
    query_embeddings: Vec<Embedding>,
}

fn build_fixture(root: &Path) -> Fixture {
    let data =
        generate_synthetic(&nine_class_spec(2024), root.join("slides")).expect("synthetic slides");
    let cfg = BuildConfig {
        split: Some(SplitConfig {
            axis: ClassAxis::Feature,
            queries_per_class: 100,
            db_per_class: 500,
        }),
        seed: 7,
        ..BuildConfig::default()
    };
    let built =
        build_database(&data.store, &data.annotations, &ReferenceEmbedder, &cfg).expect("build");
    let records = built
        .db_records
        .iter()
        .map(|r| (r.patch_id, r.clone()))
        .collect();
    let query_embeddings = patch_pixels(&data.store, &built.query_records)
        .iter()
        .map(|img| ReferenceEmbedder.embed_raw(img).expect("embed"))
        .collect();
    Fixture {
        store: data.store,
        built,
        records,
        query_embeddings,
    }
}

/// Pixels of each patch, reading each slide level once.
fn patch_pixels(store: &SlideStore, patches: &[PatchRecord]) -> Vec<RgbImage> {
    let mut out: Vec<Option<RgbImage>> = vec![None; patches.len()];
    let mut by_slide: BTreeMap<(u32, Magnification), Vec<usize>> = BTreeMap::new();
    for (i, p) in patches.iter().enumerate() {
        by_slide
            .entry((p.slide_id, p.magnification))
            .or_default()
            .push(i);
    }
    for ((slide, mag), idx) in by_slide {
        let level = store.read_level(slide, mag).expect("level");
        let d = mag.downsample();
        for i in idx {
            let p = &patches[i];
            out[i] = Some(
                image::imageops::crop_imm(&level, p.x / d, p.y / d, p.side_px, p.side_px)
                    .to_image(),
            );
        }
    }
    out.into_iter().map(|o| o.expect("read")).collect()
}

fn oracle_knn(entries: &[IndexEntry], q: &[f32], m: usize) -> Vec<(u64, u8, f64)> {
    let mut all: Vec<(u64, u8, f64)> = entries
        .iter()
        .map(|e| {
            let mut d = 0.0f64;
            for (a, b) in e.embedding.as_slice().iter().zip(q) {
                let t = *a as f64 - *b as f64;
                d += t * t;
            }
            (e.patch.patch_id, e.orientation.code(), d)
        })
        .collect();
    all.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    all.truncate(m);
    all
}

fn meta(i: usize) -> PatchMeta {
    PatchMeta {
        patch_id: (i / 8) as u64,
        slide_id: 0,
        magnification: Magnification::X40,
        x: 0,
        y: 0,
        side_px: 300,
    }
}

/// Twenty seeded datasets of up to 50,000 entries mixing uniform, clustered,
/// coarsely quantized and duplicated vectors.
fn kd_oracle() -> Outcome {
    let start = Instant::now();
    let mut queries = 0;
    let mut mismatches = 0;
    for ds in 0..20u64 {
        let n = 2500 * (ds as usize + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + ds);
        let vectors: Vec<Vec<f32>> = match ds % 4 {
            0 => (0..n)
                .map(|_| (0..128).map(|_| rng.random::<f32>()).collect())
                .collect(),
            1 => {
                let centers: Vec<Vec<f32>> = (0..(n / 200).max(1))
                    .map(|_| (0..128).map(|_| rng.random::<f32>()).collect())
                    .collect();
                perturbed(&centers, 0.1, &mut rng, n)
            }
            2 => (0..n)
                .map(|_| {
                    (0..128)
                        .map(|_| rng.random_range(0..3) as f32 * 0.5)
                        .collect()
                })
                .collect(),
            _ => {
                let base: Vec<Vec<f32>> = (0..n / 16)
                    .map(|_| (0..128).map(|_| rng.random::<f32>()).collect())
                    .collect();
                (0..n).map(|i| base[i % base.len()].clone()).collect()
            }
        };
        let entries: Vec<IndexEntry> = vectors
            .into_iter()
            .enumerate()
            .map(|(i, v)| IndexEntry {
                patch: meta(i),
                orientation: Orientation::ALL[i % 8],
                embedding: Embedding::new(v).unwrap(),
            })
            .collect();
        let tree = KdTree::build(entries.clone(), 6, 40).unwrap();
        for qi in 0..50 {
            let q: Vec<f32> = if qi % 2 == 0 {
                entries[rng.random_range(0..n)]
                    .embedding
                    .as_slice()
                    .to_vec()
            } else if ds % 4 == 2 {
                (0..128)
                    .map(|_| rng.random_range(0..3) as f32 * 0.5)
                    .collect()
            } else {
                (0..128).map(|_| rng.random::<f32>()).collect()
            };
            let m = [1, 5, 10, 50, 200][qi % 5];
            let got: Vec<(u64, u8, f64)> = tree
                .search(&q, m)
                .unwrap()
                .iter()
                .map(|h| (h.patch.patch_id, h.orientation.code(), h.distance_sq))
                .collect();
            let want = oracle_knn(&entries, &q, m);
            let same = got.len() == want.len()
                && got
                    .iter()
                    .zip(&want)
                    .all(|(a, b)| a.0 == b.0 && a.1 == b.1 && a.2.to_bits() == b.2.to_bits());
            if !same {
                mismatches += 1;
            }
            queries += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        mismatches == 0 && secs < 60.0,
        format!("20 datasets, {queries} queries, {mismatches} mismatches, {secs:.1} s"),
    )
}

fn rotation_retrieval(fx: &Fixture) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let picks = rand::seq::index::sample(&mut rng, fx.built.db_records.len(), 1000).into_vec();
    let patches: Vec<PatchRecord> = picks
        .iter()
        .map(|&i| fx.built.db_records[i].clone())
        .collect();
    let pixels = patch_pixels(&fx.store, &patches);
    let mut ok = 0;
    let mut total = 0;
    let mut first_failure = String::new();
    for (p, img) in patches.iter().zip(&pixels) {
        for o in Orientation::ALL {
            let spec = QuerySpec::pixels(apply_orientation(img, o).unwrap());
            let resp = query(&fx.built.db, None, &ReferenceEmbedder, &spec).unwrap();
            let top = &resp.results[0];
            total += 1;
            if top.patch_id == p.patch_id
                && top.distance == Some(0.0)
                && top.best_orientation == Some(o)
            {
                ok += 1;
            } else if first_failure.is_empty() {
                first_failure = format!(
                    "; first miss: patch {} {o} -> patch {} {:?} d={:?}",
                    p.patch_id, top.patch_id, top.best_orientation, top.distance
                );
            }
        }
    }
    outcome(
        ok == total,
        format!("{ok}/{total} oriented queries exact at rank 1{first_failure}"),
    )
}

fn check_separation(resp: &QueryResponse, min: f64) -> bool {
    let r = &resp.results;
    for (i, a) in r.iter().enumerate() {
        if a.rank != i + 1 {
            return false;
        }
        for b in &r[..i] {
            if a.slide_id == b.slide_id {
                let (ca, cb) = (a.meta().base_center(), b.meta().base_center());
                if ((ca.0 - cb.0).powi(2) + (ca.1 - cb.1).powi(2)).sqrt() < min {
                    return false;
                }
            }
        }
    }
    r.windows(2).all(|w| w[0].distance <= w[1].distance)
}

/// 10,000 queries: most use perturbed database embeddings with random query
/// regions and k; 200 go through the full region-read pipeline.
fn diversity_rule(fx: &Fixture) -> Outcome {
    let db = &fx.built.db;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let entries = db.entries();
    let slides = fx.store.slides().len() as u32;
    let mut violations = 0;
    let mut results = 0;
    for i in 0..10_000 {
        let (w, h) = (rng.random_range(200..=400), rng.random_range(200..=400));
        let region = RegionSpec {
            slide_id: rng.random_range(0..slides),
            x: rng.random_range(0..6000 - w),
            y: rng.random_range(0..6000 - h),
            width: w,
            height: h,
            magnification: Magnification::X40,
        };
        let spec = QuerySpec::region(region).with_k(rng.random_range(1..=10));
        let resp = if i < 200 {
            query(db, Some(&fx.store), &ReferenceEmbedder, &spec).unwrap()
        } else {
            let base = &entries[rng.random_range(0..entries.len())].embedding;
            let spread = [0.0, 0.05, 0.2, 1.0][i % 4];
            let v = perturbed(&[base.as_slice().to_vec()], spread, &mut rng, 1).remove(0);
            query_embedding(db, &Embedding::new(v).unwrap(), &spec).unwrap()
        };
        results += resp.results.len();
        if !check_separation(&resp, 1000.0) {
            violations += 1;
        }
    }
    outcome(
        violations == 0,
        format!("10000 queries, {results} results, {violations} violating queries"),
    )
}

fn random_baseline(fx: &Fixture) -> Outcome {
    let trials = 50_000;
    let queries: Vec<PatchRecord> = (0..trials)
        .map(|i| fx.built.query_records[i % fx.built.query_records.len()].clone())
        .collect();
    let run = random_run(
        &fx.built.db,
        &queries,
        &fx.records,
        &RunOptions::default(),
        99,
    )
    .unwrap();
    let score = top_k_score(&run, 5, LabelAxis::Feature, MatchMode::Lenient).unwrap();
    let expected = 1.0 - (8.0f64 / 9.0).powi(5);
    outcome(
        (score - expected).abs() <= 0.01,
        format!("top-5 {score:.4} over {trials} trials, closed form {expected:.4}"),
    )
}

struct Runs {
    engine: patchsearch::eval::RetrievalRun,
    random: patchsearch::eval::RetrievalRun,
}

fn make_runs(fx: &Fixture) -> Runs {
    let embedded: Vec<(PatchRecord, Embedding)> = fx
        .built
        .query_records
        .iter()
        .cloned()
        .zip(fx.query_embeddings.iter().cloned())
        .collect();
    let opts = RunOptions::default();
    Runs {
        engine: engine_run_embedded(&fx.built.db, &embedded, &fx.records, &opts).unwrap(),
        random: random_run(&fx.built.db, &fx.built.query_records, &fx.records, &opts, 5).unwrap(),
    }
}

fn end_to_end(fx: &Fixture, runs: &Runs) -> Outcome {
    let report = evaluate(&runs.engine, &EvalOptions::default(), Some(&runs.random)).unwrap();
    let test = &report.tests[0].result;
    let per_class_db = &fx.built.report.db_per_class;
    let per_class_q = &fx.built.report.query_per_class;
    let sizes_ok = per_class_db.len() == 9
        && per_class_db.values().all(|&n| n >= 500)
        && per_class_q.values().all(|&n| n >= 100);
    outcome(
        sizes_ok
            && report.top_k >= 0.90
            && report.top_k > report.baseline_top_k.unwrap()
            && test.p_value < 0.001,
        format!(
            "engine top-5 {:.4}, random {:.4}, chi2 {:.1}, p {:.2e}, {} queries",
            report.top_k,
            report.baseline_top_k.unwrap(),
            test.statistic,
            test.p_value,
            report.queries
        ),
    )
}

fn confusion_cross_check(runs: &Runs) -> Outcome {
    let mut mismatched = 0;
    let mut checked = 0;
    for run in [&runs.engine, &runs.random] {
        let classes = query_classes(run, LabelAxis::Feature);
        let m = confusion_matrix(run, &classes, 5, LabelAxis::Feature).unwrap();
        let per =
            per_class_top_k(run, &classes, 5, LabelAxis::Feature, MatchMode::Lenient).unwrap();
        for (i, c) in classes.iter().enumerate() {
            checked += 1;
            if m.rows[i][i].to_bits() != per[c].to_bits() {
                mismatched += 1;
            }
        }
    }
    outcome(
        mismatched == 0 && checked == 18,
        format!("{checked} diagonal cells checked on engine and random runs, {mismatched} differ"),
    )
}

/// Rubric over every pair of grade states and feature subsets of {a, b},
/// against literal tables.
fn rubric_totality() -> Outcome {
    // Rows: query state, columns: result state; order NT, GP3, GP4, GP5.
    const DISJOINT: [[u8; 4]; 4] = [
        [75, 0, 0, 0],
        [0, 75, 50, 50],
        [0, 50, 75, 50],
        [0, 50, 50, 75],
    ];
    const OVERLAP: [[u8; 4]; 4] = [
        [100, 25, 25, 25],
        [25, 100, 50, 50],
        [25, 50, 100, 50],
        [25, 50, 50, 100],
    ];
    let subsets: [&[&str]; 4] = [&[], &["a"], &["b"], &["a", "b"]];
    let label = |g: Gleason, f: &[&str]| {
        let mut l = LabelSet::default().with_gleason(g);
        l.histologic_features = f.iter().map(|s| s.to_string()).collect();
        l
    };
    let mut cases = 0;
    let mut wrong = 0;
    for (qi, qg) in Gleason::ALL.into_iter().enumerate() {
        for (ri, rg) in Gleason::ALL.into_iter().enumerate() {
            for qf in subsets {
                for rf in subsets {
                    let overlap = qf.iter().any(|f| rf.contains(f));
                    let want = if overlap {
                        OVERLAP[qi][ri]
                    } else {
                        DISJOINT[qi][ri]
                    };
                    cases += 1;
                    if rubric_score(&label(qg, qf), &label(rg, rf)).ok() != Some(want) {
                        wrong += 1;
                    }
                }
            }
        }
    }
    let no_flag = rubric_score(&LabelSet::default(), &label(Gleason::NT, &[])).is_err();
    let tumor_no_grade = LabelSet {
        tumor_present: Some(true),
        ..LabelSet::default()
    };
    let no_grade = rubric_score(&tumor_no_grade, &label(Gleason::GP3, &[])).is_err();
    outcome(
        wrong == 0 && no_flag && no_grade,
        format!(
            "{cases} label pairs, {wrong} wrong; missing flag/grade rejected: {}",
            no_flag && no_grade
        ),
    )
}

fn chi_squared() -> Outcome {
    let r = chi_squared_2x2(10, 100, 50, 100).unwrap();
    // Expected counts: 30 hits and 70 misses per group.
    let hand = 2.0 * (20.0f64.powi(2) / 30.0 + 20.0f64.powi(2) / 70.0);
    let p = chi_squared_df1_sf(3.841);
    outcome(
        (r.statistic - 38.10).abs() <= 0.01
            && (r.statistic - hand).abs() < 1e-9
            && (p - 0.05).abs() <= 0.001,
        format!(
            "statistic {:.4} (hand {hand:.4}), p(3.841) = {p:.5}",
            r.statistic
        ),
    )
}

fn persistence(fx: &Fixture, dir: &Path) -> Outcome {
    let path = dir.join("persist.smly");
    let db = &fx.built.db;
    save_db(db, &path).unwrap();
    let loaded = load_db(&path, db.params()).unwrap();
    let mut identical = 0;
    let n = 300;
    for (i, q) in fx.built.query_records.iter().enumerate().take(n) {
        let spec = RunOptions::default().spec_for(q);
        let a = query_embedding(db, &fx.query_embeddings[i], &spec).unwrap();
        let b = query_embedding(&loaded, &fx.query_embeddings[i], &spec).unwrap();
        let bits = |r: &QueryResponse| {
            r.results
                .iter()
                .map(|x| (x.patch_id, x.best_orientation, x.distance.map(f64::to_bits)))
                .collect::<Vec<_>>()
        };
        if a == b && bits(&a) == bits(&b) {
            identical += 1;
        }
    }
    let bytes = std::fs::read(&path).unwrap();
    let resaved = encode(loaded.header(), &loaded.entries()).unwrap() == bytes;
    let mut rejected = 0;
    let corruptions: [(usize, u8); 4] = [(0, b'X'), (3, b'z'), (4, 7), (8, 0xff)];
    for (offset, value) in corruptions {
        let mut bad = bytes.clone();
        bad[offset] = value;
        if decode(&bad).is_err() {
            rejected += 1;
        }
    }
    let truncated = decode(&bytes[..bytes.len() - 1]).is_err();
    outcome(
        identical == n && resaved && rejected == corruptions.len() && truncated,
        format!(
            "{identical}/{n} queries bitwise identical, re-save identical: {resaved}, corrupted headers rejected {rejected}/{}, truncation rejected: {truncated}",
            corruptions.len()
        ),
    )
}

/// A million entries scattered around real patch embeddings, 8 hash shards.
fn latency(fx: &Fixture) -> Outcome {
    let threshold: f64 = std::env::var("ACCEPTANCE_LATENCY_MS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(50.0);
    let centers: Vec<Vec<f32>> = fx
        .built
        .db
        .entries()
        .iter()
        .map(|e| e.embedding.as_slice().to_vec())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let n = 1_000_000;
    let mut entries = Vec::with_capacity(n);
    for chunk in 0..n / 10_000 {
        for (j, v) in perturbed(&centers, 0.05, &mut rng, 10_000)
            .into_iter()
            .enumerate()
        {
            let i = chunk * 10_000 + j;
            let patch = i / 8;
            entries.push(IndexEntry {
                patch: PatchMeta {
                    patch_id: patch as u64,
                    slide_id: (patch % 1000) as u32,
                    magnification: Magnification::X40,
                    x: ((patch / 1000) % 20) as u32 * 300,
                    y: ((patch / 1000) / 20) as u32 * 300,
                    side_px: 300,
                },
                orientation: Orientation::ALL[i % 8],
                embedding: Embedding::new(v).unwrap(),
            });
        }
    }
    let params = IndexParams {
        n_shards: 8,
        ..IndexParams::default()
    };
    let t = Instant::now();
    let db = ShardSet::build(ReferenceEmbedder::NAME, 128, entries, &params).unwrap();
    let build_secs = t.elapsed().as_secs_f64();
    let all_hash = db.shard_info().iter().all(|s| s.kind == ShardKind::Hash);
    let images = patch_pixels(&fx.store, &fx.built.query_records[..100]);
    let spec = QuerySpec::pixels(RgbImage::new(300, 300));
    let report =
        patchsearch::query::latency_bench(&db, &ReferenceEmbedder, &images, &spec).unwrap();
    outcome(
        db.len() == n && all_hash && report.median_ms <= threshold,
        format!(
            "{} entries, 8 hash shards: {all_hash}, median {:.2} ms, p95 {:.2} ms over {} queries (threshold {threshold} ms, build {build_secs:.1} s)",
            db.len(),
            report.median_ms,
            report.p95_ms,
            report.queries
        ),
    )
}

/// Small synth -> build -> eval pipeline, run twice with different thread counts.
fn determinism(dir: &Path) -> Outcome {
    let once = |sub: &str, threads: usize| -> (Vec<u8>, String) {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let root = dir.join(sub);
            let spec = SynthSpec {
                n_slides: 3,
                slide_width_px: 3600,
                slide_height_px: 3600,
                regions_per_slide: 9,
                levels: vec![Magnification::X40, Magnification::X20],
                ..SynthSpec::nine_class(77)
            };
            let data = generate_synthetic(&spec, root.join("slides")).unwrap();
            let cfg = BuildConfig {
                magnifications: vec![Magnification::X40],
                split: Some(SplitConfig {
                    axis: ClassAxis::Feature,
                    queries_per_class: 8,
                    db_per_class: 40,
                }),
                index: IndexParams {
                    n_shards: 3,
                    ..IndexParams::default()
                },
                seed: 5,
                ..BuildConfig::default()
            };
            let built =
                build_database(&data.store, &data.annotations, &ReferenceEmbedder, &cfg).unwrap();
            let paths = write_build_output(&built, root.join("db.smly")).unwrap();
            let records = built
                .db_records
                .iter()
                .map(|r| (r.patch_id, r.clone()))
                .collect();
            let engine = patchsearch::eval::engine_run(
                &built.db,
                &data.store,
                &ReferenceEmbedder,
                &built.query_records,
                &records,
                &RunOptions::default(),
            )
            .unwrap();
            let random = random_run(
                &built.db,
                &built.query_records,
                &records,
                &RunOptions::default(),
                3,
            )
            .unwrap();
            let report = evaluate(&engine, &EvalOptions::default(), Some(&random)).unwrap();
            (
                std::fs::read(paths.db).unwrap(),
                serde_json::to_string(&report).unwrap(),
            )
        })
    };
    let (db_a, rep_a) = once("a", 1);
    let (db_b, rep_b) = once("b", 4);
    outcome(
        db_a == db_b && rep_a == rep_b,
        format!(
            "db files {} bytes identical: {}, eval reports identical: {}",
            db_a.len(),
            db_a == db_b,
            rep_a == rep_b
        ),
    )
}

fn main() {
    let only: Option<Vec<String>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').map(|s| s.trim().to_string()).collect());
    let wanted = |name: &str| only.as_ref().is_none_or(|o| o.iter().any(|x| x == name));
    let dir = tempfile::tempdir().unwrap();
    let mut results: Vec<(&str, Outcome, f64)> = Vec::new();
    let mut record = |name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        if !wanted(name) {
            return;
        }
        let t = Instant::now();
        let o = f();
        let secs = t.elapsed().as_secs_f64();
        println!(
            "{} {name}: {} [{secs:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((name, o, secs));
    };

    record("kd_oracle_equivalence", &mut kd_oracle);
    record("rubric_totality", &mut rubric_totality);
    record("chi_squared", &mut chi_squared);

    let needs_fixture = [
        "rotation_retrieval",
        "diversity_rule",
        "random_baseline",
        "end_to_end_separation",
        "confusion_cross_check",
        "persistence",
        "scaled_latency",
    ];
    if needs_fixture.iter().any(|n| wanted(n)) {
        let t = Instant::now();
        let fx = build_fixture(dir.path());
        println!(
            "fixture: {} db patches, {} queries, {} entries [{:.1} s]",
            fx.built.db_records.len(),
            fx.built.query_records.len(),
            fx.built.db.len(),
            t.elapsed().as_secs_f64()
        );
        record("rotation_retrieval", &mut || rotation_retrieval(&fx));
        record("diversity_rule", &mut || diversity_rule(&fx));
        record("random_baseline", &mut || random_baseline(&fx));
        if wanted("end_to_end_separation") || wanted("confusion_cross_check") {
            let runs = make_runs(&fx);
            record("end_to_end_separation", &mut || end_to_end(&fx, &runs));
            record("confusion_cross_check", &mut || {
                confusion_cross_check(&runs)
            });
        }
        record("persistence", &mut || persistence(&fx, dir.path()));
        record("scaled_latency", &mut || latency(&fx));
    }
    record("determinism", &mut || determinism(dir.path()));

    let failed: Vec<&str> = results.iter().filter(|r| !r.1.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!(" ({})", failed.join(", "))
        }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
