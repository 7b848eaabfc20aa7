use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::entry::{EntryStore, Hit};
use super::hash::{HashIndex, DEFAULT_HASH_BITS, DEFAULT_PROBE_RADIUS};
use super::kd::{KdTree, DEFAULT_LEAF_TARGET, DEFAULT_MAX_DEPTH};
use super::IndexEntry;
use crate::error::{Error, Result};
use crate::model::PatchMeta;

pub const DEFAULT_DENSITY_THRESHOLD: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IndexParams {
    pub n_shards: usize,
    pub max_depth: usize,
    pub leaf_target: usize,
    /// Shards holding more entries than this use hash buckets instead of a k-d tree.
    pub density_threshold: usize,
    pub hash_bits: u32,
    pub probe_radius: u32,
    pub hash_seed: u64,
}

impl Default for IndexParams {
    fn default() -> Self {
        IndexParams {
            n_shards: 1,
            max_depth: DEFAULT_MAX_DEPTH,
            leaf_target: DEFAULT_LEAF_TARGET,
            density_threshold: DEFAULT_DENSITY_THRESHOLD,
            hash_bits: DEFAULT_HASH_BITS,
            probe_radius: DEFAULT_PROBE_RADIUS,
            hash_seed: 0,
        }
    }
}

impl IndexParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.n_shards == 0 || self.n_shards > 4096 {
            return bad("n_shards must be in 1..=4096");
        }
        if self.max_depth > 64 {
            return bad("max_depth must be at most 64");
        }
        if self.leaf_target == 0 {
            return bad("leaf_target must be positive");
        }
        if self.hash_bits == 0 || self.hash_bits > 32 {
            return bad("hash_bits must be in 1..=32");
        }
        if self.probe_radius > self.hash_bits {
            return bad("probe_radius cannot exceed hash_bits");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShardKind {
    Kd,
    Hash,
    Empty,
}

#[derive(Debug, Clone)]
pub enum Shard {
    Kd(KdTree),
    Hash(HashIndex),
    Empty,
}

impl Shard {
    pub fn kind(&self) -> ShardKind {
        match self {
            Shard::Kd(_) => ShardKind::Kd,
            Shard::Hash(_) => ShardKind::Hash,
            Shard::Empty => ShardKind::Empty,
        }
    }

    pub fn len(&self) -> usize {
        self.store().map_or(0, EntryStore::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn store(&self) -> Option<&EntryStore> {
        match self {
            Shard::Kd(t) => Some(t.store()),
            Shard::Hash(h) => Some(h.store()),
            Shard::Empty => None,
        }
    }

    pub fn search(&self, q: &[f32], m: usize) -> Result<Vec<Hit>> {
        match self {
            Shard::Kd(t) => t.search(q, m),
            Shard::Hash(h) => h.search(q, m),
            Shard::Empty => Ok(Vec::new()),
        }
    }
}

/// Per-shard summary recorded alongside the database.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardInfo {
    pub kind: ShardKind,
    pub entries: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DbHeader {
    pub embedder: String,
    pub dim: usize,
    pub count: u64,
}

/// Immutable partition of all entries: entry goes to shard `patch_id % n_shards`.
#[derive(Debug, Clone)]
pub struct ShardSet {
    header: DbHeader,
    params: IndexParams,
    shards: Vec<Shard>,
    patches: Vec<PatchMeta>,
}

impl ShardSet {
    pub fn build(
        embedder: &str,
        dim: usize,
        entries: Vec<IndexEntry>,
        params: &IndexParams,
    ) -> Result<Self> {
        params.validate()?;
        if dim == 0 {
            return Err(Error::InvalidArgument("dim must be positive".into()));
        }
        let count = entries.len() as u64;
        let mut patches: Vec<PatchMeta> = Vec::new();
        let mut parts: Vec<Vec<IndexEntry>> = (0..params.n_shards).map(|_| Vec::new()).collect();
        for e in entries {
            if e.embedding.dim() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    found: e.embedding.dim(),
                });
            }
            patches.push(e.patch);
            parts[(e.patch.patch_id % params.n_shards as u64) as usize].push(e);
        }
        patches.sort();
        patches.dedup();
        if let Some(w) = patches.windows(2).find(|w| w[0].patch_id == w[1].patch_id) {
            return Err(Error::InvalidArgument(format!(
                "patch {} has conflicting metadata across orientations",
                w[0].patch_id
            )));
        }
        let shards = parts
            .into_par_iter()
            .enumerate()
            .map(|(i, part)| build_shard(i, dim, part, params))
            .collect::<Result<Vec<_>>>()?;
        Ok(ShardSet {
            header: DbHeader {
                embedder: embedder.to_string(),
                dim,
                count,
            },
            params: params.clone(),
            shards,
            patches,
        })
    }

    pub fn header(&self) -> &DbHeader {
        &self.header
    }

    pub fn params(&self) -> &IndexParams {
        &self.params
    }

    pub fn embedder(&self) -> &str {
        &self.header.embedder
    }

    pub fn dim(&self) -> usize {
        self.header.dim
    }

    pub fn len(&self) -> usize {
        self.header.count as usize
    }

    pub fn is_empty(&self) -> bool {
        self.header.count == 0
    }

    pub fn shards(&self) -> &[Shard] {
        &self.shards
    }

    pub fn shard_info(&self) -> Vec<ShardInfo> {
        self.shards
            .iter()
            .map(|s| ShardInfo {
                kind: s.kind(),
                entries: s.len(),
            })
            .collect()
    }

    /// Distinct patches, sorted by id.
    pub fn patches(&self) -> &[PatchMeta] {
        &self.patches
    }

    pub fn patch(&self, patch_id: u64) -> Option<&PatchMeta> {
        self.patches
            .binary_search_by_key(&patch_id, |p| p.patch_id)
            .ok()
            .map(|i| &self.patches[i])
    }

    fn check_query(&self, q: &[f32]) -> Result<()> {
        if q.len() != self.header.dim {
            return Err(Error::DimMismatch {
                expected: self.header.dim,
                found: q.len(),
            });
        }
        Ok(())
    }

    /// Fans the query out to every shard and merges under the canonical order.
    pub fn search(&self, q: &[f32], m: usize) -> Result<Vec<Hit>> {
        Ok(self.search_timed(q, m)?.0)
    }

    /// Like [`ShardSet::search`], also returning each shard's search time.
    pub fn search_timed(&self, q: &[f32], m: usize) -> Result<(Vec<Hit>, Vec<Duration>)> {
        self.check_query(q)?;
        let per_shard = self
            .shards
            .par_iter()
            .map(|s| {
                let t = Instant::now();
                s.search(q, m).map(|hits| (hits, t.elapsed()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut times = Vec::with_capacity(per_shard.len());
        let mut merged = Vec::with_capacity(m * per_shard.len());
        for (hits, t) in per_shard {
            merged.extend(hits);
            times.push(t);
        }
        merged.sort_by(Hit::canonical_cmp);
        merged.truncate(m);
        Ok((merged, times))
    }

    /// Exhaustive scan over every shard.
    pub fn brute_force(&self, q: &[f32], m: usize) -> Result<Vec<Hit>> {
        self.check_query(q)?;
        let mut merged = Vec::new();
        for s in self.shards.iter().filter_map(Shard::store) {
            merged.extend(super::entry::brute_force_knn(s, q, m)?);
        }
        merged.sort_by(Hit::canonical_cmp);
        merged.truncate(m);
        Ok(merged)
    }

    /// All entries in (patch id, orientation) order.
    pub fn entries(&self) -> Vec<IndexEntry> {
        let mut refs: Vec<((u64, u8), usize, usize)> = Vec::with_capacity(self.len());
        for (si, store) in self
            .shards
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.store().map(|st| (i, st)))
        {
            for i in 0..store.len() {
                refs.push(((store.meta(i).patch_id, store.orientation(i).code()), si, i));
            }
        }
        refs.sort_unstable();
        refs.into_iter()
            .map(|(_, si, i)| self.shards[si].store().expect("nonempty shard").entry(i))
            .collect()
    }
}

fn build_shard(
    index: usize,
    dim: usize,
    entries: Vec<IndexEntry>,
    params: &IndexParams,
) -> Result<Shard> {
    if entries.is_empty() {
        return Ok(Shard::Empty);
    }
    let hashed = entries.len() > params.density_threshold;
    let store = EntryStore::from_entries(dim, entries)?;
    Ok(if hashed {
        Shard::Hash(
            HashIndex::from_store(store, params.hash_bits, params.hash_seed ^ index as u64)?
                .with_probe_radius(params.probe_radius),
        )
    } else {
        Shard::Kd(KdTree::from_store(
            store,
            params.max_depth,
            params.leaf_target,
        )?)
    })
}

/// Builds a [`ShardSet`] with `n_shards` shards and the given density threshold.
pub fn build_shards(
    embedder: &str,
    dim: usize,
    entries: Vec<IndexEntry>,
    n_shards: usize,
    density_threshold: usize,
) -> Result<ShardSet> {
    let params = IndexParams {
        n_shards,
        density_threshold,
        ..IndexParams::default()
    };
    ShardSet::build(embedder, dim, entries, &params)
}
