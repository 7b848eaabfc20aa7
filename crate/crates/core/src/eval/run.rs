use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::SlideStore;
use crate::embedder::Embedder;
use crate::error::{Error, Result};
use crate::index::ShardSet;
use crate::model::{Embedding, Magnification, PatchRecord};
use crate::query::{
    query_embedding, query_image, random_results, Provenance, QueryResult, QuerySpec, RegionSpec,
    DEFAULT_K, DEFAULT_MIN_SEPARATION_PX, DEFAULT_OVERSAMPLE,
};

/// Query settings shared by every query of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunOptions {
    pub k: usize,
    pub oversample_factor: usize,
    pub min_separation_px: f64,
    pub exclude_self: bool,
    pub exclude_query_slide: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            k: DEFAULT_K,
            oversample_factor: DEFAULT_OVERSAMPLE,
            min_separation_px: DEFAULT_MIN_SEPARATION_PX,
            exclude_self: true,
            exclude_query_slide: false,
        }
    }
}

impl RunOptions {
    /// The region spec that queries the database with patch `q`.
    pub fn spec_for(&self, q: &PatchRecord) -> QuerySpec {
        QuerySpec {
            k: self.k,
            oversample_factor: self.oversample_factor,
            min_separation_px: self.min_separation_px,
            exclude_self: self.exclude_self,
            exclude_query_slide: self.exclude_query_slide,
            ..QuerySpec::region(RegionSpec {
                slide_id: q.slide_id,
                x: q.x,
                y: q.y,
                width: q.side_px,
                height: q.side_px,
                magnification: q.magnification,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub embedder: String,
    pub db_size: usize,
    pub magnification: Option<Magnification>,
    pub k: usize,
    pub provenance: Provenance,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunQuery {
    pub query: PatchRecord,
    pub results: Vec<PatchRecord>,
    pub exhausted: bool,
}

/// Queries with their ranked, labeled results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRun {
    pub config: RunConfig,
    pub queries: Vec<RunQuery>,
}

impl RetrievalRun {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

fn resolve(
    results: &[QueryResult],
    records: &BTreeMap<u64, PatchRecord>,
) -> Result<Vec<PatchRecord>> {
    results
        .iter()
        .map(|r| {
            records.get(&r.patch_id).cloned().ok_or_else(|| {
                Error::InvalidArgument(format!("result patch {} has no label record", r.patch_id))
            })
        })
        .collect()
}

fn common_magnification(queries: &[PatchRecord]) -> Option<Magnification> {
    let first = queries.first()?.magnification;
    queries
        .iter()
        .all(|q| q.magnification == first)
        .then_some(first)
}

/// Engine run where each query's R0 embedding is already known.
pub fn engine_run_embedded(
    db: &ShardSet,
    queries: &[(PatchRecord, Embedding)],
    records: &BTreeMap<u64, PatchRecord>,
    opts: &RunOptions,
) -> Result<RetrievalRun> {
    let out = queries
        .par_iter()
        .map(|(q, e)| {
            let resp = query_embedding(db, e, &opts.spec_for(q))?;
            Ok(RunQuery {
                query: q.clone(),
                results: resolve(&resp.results, records)?,
                exhausted: resp.exhausted,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let plain: Vec<PatchRecord> = queries.iter().map(|(q, _)| q.clone()).collect();
    Ok(RetrievalRun {
        config: RunConfig {
            embedder: db.embedder().to_string(),
            db_size: db.patches().len(),
            magnification: common_magnification(&plain),
            k: opts.k,
            provenance: Provenance::Engine,
            seed: 0,
        },
        queries: out,
    })
}

/// Reads every query region and computes its R0 embedding.
pub fn embed_queries(
    store: &SlideStore,
    embedder: &dyn Embedder,
    queries: &[PatchRecord],
    opts: &RunOptions,
) -> Result<Vec<(PatchRecord, Embedding)>> {
    queries
        .par_iter()
        .map(|q| {
            let img = query_image(Some(store), &opts.spec_for(q))?;
            Ok((q.clone(), embedder.embed_raw(&img)?))
        })
        .collect()
}

/// Reads and embeds every query patch, then runs [`engine_run_embedded`].
pub fn engine_run(
    db: &ShardSet,
    store: &SlideStore,
    embedder: &dyn Embedder,
    queries: &[PatchRecord],
    records: &BTreeMap<u64, PatchRecord>,
    opts: &RunOptions,
) -> Result<RetrievalRun> {
    let name = embedder.descriptor().name;
    if name != db.embedder() {
        return Err(Error::EmbedderMismatch {
            database: db.embedder().to_string(),
            query: name,
        });
    }
    let embedded = embed_queries(store, embedder, queries, opts)?;
    engine_run_embedded(db, &embedded, records, opts)
}

/// Uniform random results per query; query `i` uses seed `seed + i`.
pub fn random_run(
    db: &ShardSet,
    queries: &[PatchRecord],
    records: &BTreeMap<u64, PatchRecord>,
    opts: &RunOptions,
    seed: u64,
) -> Result<RetrievalRun> {
    let out = queries
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            let results = random_results(db, &opts.spec_for(q), seed.wrapping_add(i as u64))?;
            Ok(RunQuery {
                query: q.clone(),
                results: resolve(&results, records)?,
                exhausted: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RetrievalRun {
        config: RunConfig {
            embedder: "random".into(),
            db_size: db.patches().len(),
            magnification: common_magnification(queries),
            k: opts.k,
            provenance: Provenance::Random,
            seed,
        },
        queries: out,
    })
}
