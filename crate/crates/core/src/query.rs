//! Query pipeline: read and embed a region, fetch raw hits from every shard,
//! keep one orientation per patch, and spread the survivors across slides.

use std::time::{Duration, Instant};

use base64::Engine as _;
use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{encode_png, SlideStore};
use crate::embedder::{check_query_size, Embedder};
use crate::error::{Error, Result};
use crate::index::{Hit, ShardSet};
use crate::model::{rects_overlap, Embedding, Magnification, Orientation, PatchMeta};

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_OVERSAMPLE: usize = 5;
pub const DEFAULT_MIN_SEPARATION_PX: f64 = 1000.0;

/// A rectangle on a slide: origin in base pixels, size in pixels of the given level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub slide_id: u32,
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
    pub magnification: Magnification,
}

impl RegionSpec {
    /// Footprint `(x, y, w, h)` in base pixels.
    pub fn base_rect(&self) -> (u32, u32, u32, u32) {
        let d = self.magnification.downsample();
        (self.x, self.y, self.width * d, self.height * d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuerySource {
    Region(RegionSpec),
    /// Raw pixels; in JSON a base64-encoded PNG.
    #[serde(rename = "png_base64", with = "png_base64")]
    Pixels(RgbImage),
}

mod png_base64 {
    use super::*;
    use serde::{de, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(img: &RgbImage, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut buf = Vec::new();
        encode_png(&mut buf, img).map_err(serde::ser::Error::custom)?;
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(buf))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<RgbImage, D::Error> {
        let text = String::deserialize(d)?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(text.trim())
            .map_err(de::Error::custom)?;
        image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
            .map(|i| i.to_rgb8())
            .map_err(de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySpec {
    pub source: QuerySource,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_oversample")]
    pub oversample_factor: usize,
    #[serde(default = "default_min_separation")]
    pub min_separation_px: f64,
    /// Drop hits whose footprint overlaps the query region.
    #[serde(default = "default_true")]
    pub exclude_self: bool,
    #[serde(default)]
    pub exclude_query_slide: bool,
    /// When set, must name the embedder the database was built with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedder: Option<String>,
}

fn default_k() -> usize {
    DEFAULT_K
}

fn default_oversample() -> usize {
    DEFAULT_OVERSAMPLE
}

fn default_min_separation() -> f64 {
    DEFAULT_MIN_SEPARATION_PX
}

fn default_true() -> bool {
    true
}

impl QuerySpec {
    pub fn region(region: RegionSpec) -> Self {
        Self::new(QuerySource::Region(region))
    }

    pub fn pixels(img: RgbImage) -> Self {
        Self::new(QuerySource::Pixels(img))
    }

    fn new(source: QuerySource) -> Self {
        QuerySpec {
            source,
            k: DEFAULT_K,
            oversample_factor: DEFAULT_OVERSAMPLE,
            min_separation_px: DEFAULT_MIN_SEPARATION_PX,
            exclude_self: true,
            exclude_query_slide: false,
            embedder: None,
        }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_exclude_self(mut self, exclude: bool) -> Self {
        self.exclude_self = exclude;
        self
    }

    pub fn with_min_separation(mut self, px: f64) -> Self {
        self.min_separation_px = px;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if self.oversample_factor == 0 {
            return Err(Error::InvalidArgument(
                "oversample_factor must be at least 1".into(),
            ));
        }
        if !self.min_separation_px.is_finite() || self.min_separation_px < 0.0 {
            return Err(Error::InvalidArgument(
                "min_separation_px must be a non-negative number".into(),
            ));
        }
        match &self.source {
            QuerySource::Region(r) => check_query_size(r.width, r.height),
            QuerySource::Pixels(img) => check_query_size(img.width(), img.height()),
        }
    }

    fn region_spec(&self) -> Option<&RegionSpec> {
        match &self.source {
            QuerySource::Region(r) => Some(r),
            QuerySource::Pixels(_) => None,
        }
    }

    /// Whether a candidate patch survives the magnification and exclusion rules.
    /// Region queries only match patches at the region's magnification.
    pub fn admits(&self, p: &PatchMeta) -> bool {
        let Some(r) = self.region_spec() else {
            return true;
        };
        if p.magnification != r.magnification {
            return false;
        }
        if p.slide_id != r.slide_id {
            return true;
        }
        if self.exclude_query_slide {
            return false;
        }
        !(self.exclude_self
            && rects_overlap(r.base_rect(), (p.x, p.y, p.base_side(), p.base_side())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Engine,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub rank: usize,
    pub patch_id: u64,
    pub slide_id: u32,
    pub magnification: Magnification,
    pub x: u32,
    pub y: u32,
    pub side_px: u32,
    pub best_orientation: Option<Orientation>,
    pub distance: Option<f64>,
    pub provenance: Provenance,
}

impl QueryResult {
    pub fn meta(&self) -> PatchMeta {
        PatchMeta {
            patch_id: self.patch_id,
            slide_id: self.slide_id,
            magnification: self.magnification,
            x: self.x,
            y: self.y,
            side_px: self.side_px,
        }
    }

    fn from_hit(rank: usize, h: &Hit) -> Self {
        let mut r = Self::from_patch(rank, &h.patch, Provenance::Engine);
        r.best_orientation = Some(h.orientation);
        r.distance = Some(h.distance());
        r
    }

    fn from_patch(rank: usize, p: &PatchMeta, provenance: Provenance) -> Self {
        QueryResult {
            rank,
            patch_id: p.patch_id,
            slide_id: p.slide_id,
            magnification: p.magnification,
            x: p.x,
            y: p.y,
            side_px: p.side_px,
            best_orientation: None,
            distance: None,
            provenance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub results: Vec<QueryResult>,
    /// Set when the whole database was searched and fewer than `k` results survived.
    pub exhausted: bool,
    /// Raw hits fetched by the final round.
    pub raw_fetched: usize,
}

/// Keeps the first (best) hit of every patch; order is otherwise unchanged.
pub fn dedup_orientations(hits: &[Hit]) -> Vec<Hit> {
    let mut seen = std::collections::HashSet::new();
    hits.iter()
        .filter(|h| seen.insert(h.patch.patch_id))
        .copied()
        .collect()
}

/// Greedy in rank order: a patch is kept only if its base center is at least
/// `min_separation_px` from every kept patch on the same slide.
pub fn diversity_filter<T>(
    items: &[T],
    min_separation_px: f64,
    meta: impl Fn(&T) -> PatchMeta,
) -> Vec<T>
where
    T: Clone,
{
    let mut kept: Vec<T> = Vec::new();
    let mut centers: Vec<(u32, (f64, f64))> = Vec::new();
    for item in items {
        let p = meta(item);
        let c = p.base_center();
        let clear = centers
            .iter()
            .filter(|(s, _)| *s == p.slide_id)
            .all(|(_, o)| ((c.0 - o.0).powi(2) + (c.1 - o.1).powi(2)).sqrt() >= min_separation_px);
        if clear {
            centers.push((p.slide_id, c));
            kept.push(item.clone());
        }
    }
    kept
}

/// [`diversity_filter`] over raw hits.
pub fn diversity_filter_hits(hits: &[Hit], min_separation_px: f64) -> Vec<Hit> {
    diversity_filter(hits, min_separation_px, |h| h.patch)
}

/// Exclusions, orientation dedup and the diversity rule applied to sorted raw hits.
pub fn filter_hits(hits: &[Hit], spec: &QuerySpec) -> Vec<Hit> {
    let admitted: Vec<Hit> = hits
        .iter()
        .filter(|h| spec.admits(&h.patch))
        .copied()
        .collect();
    diversity_filter_hits(&dedup_orientations(&admitted), spec.min_separation_px)
}

/// Reads the query pixels for a spec: the region from the store, or the given image.
pub fn query_image(store: Option<&SlideStore>, spec: &QuerySpec) -> Result<RgbImage> {
    match &spec.source {
        QuerySource::Pixels(img) => Ok(img.clone()),
        QuerySource::Region(r) => {
            let store = store
                .ok_or_else(|| Error::InvalidArgument("region query needs a slide store".into()))?;
            let d = r.magnification.downsample();
            store.read_region(
                r.slide_id,
                r.magnification,
                r.x / d,
                r.y / d,
                r.width,
                r.height,
            )
        }
    }
}

fn check_embedder(
    db: &ShardSet,
    embedder: &dyn Embedder,
    spec_embedder: Option<&str>,
) -> Result<()> {
    let name = embedder.descriptor().name;
    if name != db.embedder() || spec_embedder.is_some_and(|s| s != db.embedder()) {
        return Err(Error::EmbedderMismatch {
            database: db.embedder().to_string(),
            query: spec_embedder.map_or(name, str::to_string),
        });
    }
    Ok(())
}

/// Runs the full pipeline for one query.
pub fn query(
    db: &ShardSet,
    store: Option<&SlideStore>,
    embedder: &dyn Embedder,
    spec: &QuerySpec,
) -> Result<QueryResponse> {
    spec.validate()?;
    check_embedder(db, embedder, spec.embedder.as_deref())?;
    let img = query_image(store, spec)?;
    let q = embedder.embed_raw(&img)?;
    query_embedding(db, &q, spec)
}

/// The retrieval part of [`query`] for an already computed R0 embedding.
///
/// Starts from `k * oversample_factor` raw hits and doubles the fetch while
/// filtering leaves fewer than `k` results and unseen entries remain.
pub fn query_embedding(db: &ShardSet, q: &Embedding, spec: &QuerySpec) -> Result<QueryResponse> {
    Ok(query_embedding_timed(db, q, spec)?.0)
}

fn query_embedding_timed(
    db: &ShardSet,
    q: &Embedding,
    spec: &QuerySpec,
) -> Result<(QueryResponse, Vec<Duration>)> {
    spec.validate()?;
    let total = db.len();
    let mut m = spec
        .k
        .saturating_mul(spec.oversample_factor)
        .min(total.max(1));
    let mut shard_times: Vec<Duration> = Vec::new();
    loop {
        let (hits, times) = db.search_timed(q.as_slice(), m)?;
        if shard_times.is_empty() {
            shard_times = times;
        }
        let mut kept = filter_hits(&hits, spec);
        // Hash shards may return fewer than m hits; then the probed buckets are used up.
        let drained = hits.len() < m || m >= total;
        if kept.len() >= spec.k || drained {
            let exhausted = kept.len() < spec.k;
            kept.truncate(spec.k);
            let results = kept
                .iter()
                .enumerate()
                .map(|(i, h)| QueryResult::from_hit(i + 1, h))
                .collect();
            return Ok((
                QueryResponse {
                    results,
                    exhausted,
                    raw_fetched: hits.len(),
                },
                shard_times,
            ));
        }
        m = m.saturating_mul(2).min(total);
    }
}

/// `k` distinct patches drawn uniformly without replacement among those the
/// spec admits, subject to the diversity rule; deterministic per seed.
pub fn random_results(db: &ShardSet, spec: &QuerySpec, seed: u64) -> Result<Vec<QueryResult>> {
    spec.validate()?;
    let candidates: Vec<&PatchMeta> = db.patches().iter().filter(|p| spec.admits(p)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    let mut picked: Vec<PatchMeta> = Vec::with_capacity(spec.k);
    // Lazy Fisher-Yates: position i receives a uniform pick among the rest.
    for i in 0..order.len() {
        if picked.len() == spec.k {
            break;
        }
        let j = rng.random_range(i..order.len());
        order.swap(i, j);
        let p = *candidates[order[i]];
        let c = p.base_center();
        let clear = picked.iter().filter(|o| o.slide_id == p.slide_id).all(|o| {
            let oc = o.base_center();
            ((c.0 - oc.0).powi(2) + (c.1 - oc.1).powi(2)).sqrt() >= spec.min_separation_px
        });
        if clear {
            picked.push(p);
        }
    }
    if picked.len() < spec.k {
        return Err(Error::NotEnoughPatches {
            requested: spec.k,
            available: picked.len(),
        });
    }
    Ok(picked
        .iter()
        .enumerate()
        .map(|(i, p)| QueryResult::from_patch(i + 1, p, Provenance::Random))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub queries: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub mean_ms: f64,
    /// Median per-shard search time of the first fetch round, by shard index.
    pub shard_median_ms: Vec<f64>,
}

pub const MIN_LATENCY_SAMPLES: usize = 100;

/// Nearest-rank percentile of sorted values.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank - 1]
}

/// Times preprocess, embed and retrieval for each query image, cycling
/// through `images` until at least [`MIN_LATENCY_SAMPLES`] runs are measured.
pub fn latency_bench(
    db: &ShardSet,
    embedder: &dyn Embedder,
    images: &[RgbImage],
    spec: &QuerySpec,
) -> Result<LatencyReport> {
    if db.is_empty() {
        return Err(Error::EmptyIndex);
    }
    if images.is_empty() {
        return Err(Error::InvalidArgument("no query images".into()));
    }
    check_embedder(db, embedder, spec.embedder.as_deref())?;
    let runs = images.len().max(MIN_LATENCY_SAMPLES);
    let mut totals = Vec::with_capacity(runs);
    let mut per_shard: Vec<Vec<f64>> = vec![Vec::with_capacity(runs); db.shards().len()];
    for i in 0..runs {
        let img = &images[i % images.len()];
        let start = Instant::now();
        let q = embedder.embed_raw(img)?;
        let (_, shard_times) = query_embedding_timed(db, &q, spec)?;
        totals.push(start.elapsed().as_secs_f64() * 1e3);
        for (s, t) in per_shard.iter_mut().zip(shard_times) {
            s.push(t.as_secs_f64() * 1e3);
        }
    }
    let mut sorted = totals.clone();
    sorted.sort_by(f64::total_cmp);
    let shard_median_ms = per_shard
        .into_iter()
        .map(|mut v| {
            v.sort_by(f64::total_cmp);
            percentile(&v, 50.0)
        })
        .collect();
    Ok(LatencyReport {
        queries: runs,
        median_ms: percentile(&sorted, 50.0),
        p95_ms: percentile(&sorted, 95.0),
        mean_ms: totals.iter().sum::<f64>() / runs as f64,
        shard_median_ms,
    })
}
