use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{squared_l2, Embedding, Orientation, PatchMeta};

/// One (patch, orientation) embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub patch: PatchMeta,
    pub orientation: Orientation,
    pub embedding: Embedding,
}

impl IndexEntry {
    pub fn key(&self) -> (u64, u8) {
        (self.patch.patch_id, self.orientation.code())
    }
}

/// A raw search hit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub patch: PatchMeta,
    pub orientation: Orientation,
    pub distance_sq: f64,
}

impl Hit {
    pub fn distance(&self) -> f64 {
        self.distance_sq.sqrt()
    }

    /// Canonical order: distance, then patch id, then orientation code.
    pub fn canonical_cmp(&self, other: &Hit) -> Ordering {
        self.distance_sq
            .total_cmp(&other.distance_sq)
            .then(self.patch.patch_id.cmp(&other.patch.patch_id))
            .then(self.orientation.cmp(&other.orientation))
    }
}

/// Entries stored column-wise: metadata plus one flat vector buffer.
#[derive(Debug, Clone, Default)]
pub struct EntryStore {
    dim: usize,
    meta: Vec<PatchMeta>,
    orientation: Vec<Orientation>,
    vectors: Vec<f32>,
}

impl EntryStore {
    pub fn with_dim(dim: usize) -> Self {
        EntryStore {
            dim,
            ..Default::default()
        }
    }

    /// Sorts entries by (patch id, orientation) and rejects duplicates and dim mismatches.
    pub fn from_entries(dim: usize, mut entries: Vec<IndexEntry>) -> Result<Self> {
        entries.sort_by_key(IndexEntry::key);
        let mut store = EntryStore::with_dim(dim);
        store.meta.reserve(entries.len());
        store.orientation.reserve(entries.len());
        store.vectors.reserve(entries.len() * dim);
        let mut prev: Option<(u64, u8)> = None;
        for e in entries {
            if prev == Some(e.key()) {
                return Err(Error::DuplicateEntry {
                    patch_id: e.patch.patch_id,
                    orientation: e.orientation.to_string(),
                });
            }
            prev = Some(e.key());
            store.push(e.patch, e.orientation, e.embedding.as_slice())?;
        }
        Ok(store)
    }

    pub fn push(&mut self, meta: PatchMeta, orientation: Orientation, v: &[f32]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: v.len(),
            });
        }
        self.meta.push(meta);
        self.orientation.push(orientation);
        self.vectors.extend_from_slice(v);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    #[inline]
    pub fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn meta(&self, i: usize) -> &PatchMeta {
        &self.meta[i]
    }

    pub fn orientation(&self, i: usize) -> Orientation {
        self.orientation[i]
    }

    pub fn entry(&self, i: usize) -> IndexEntry {
        IndexEntry {
            patch: self.meta[i],
            orientation: self.orientation[i],
            embedding: Embedding::new(self.vector(i).to_vec()).expect("validated on insert"),
        }
    }

    #[inline]
    pub fn hit(&self, i: usize, q: &[f32]) -> Hit {
        Hit {
            patch: self.meta[i],
            orientation: self.orientation[i],
            distance_sq: squared_l2(self.vector(i), q),
        }
    }

    pub(crate) fn check_query(&self, q: &[f32]) -> Result<()> {
        if q.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: q.len(),
            });
        }
        Ok(())
    }
}

struct Ranked(Hit);

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
        self.0.canonical_cmp(&other.0)
    }
}

/// Keeps the `m` best hits under the canonical order.
pub(crate) struct TopM {
    m: usize,
    heap: BinaryHeap<Ranked>,
}

impl TopM {
    pub fn new(m: usize) -> Self {
        TopM {
            m,
            heap: BinaryHeap::with_capacity(m + 1),
        }
    }

    pub fn is_full(&self) -> bool {
        self.heap.len() >= self.m
    }

    /// Squared distance of the current worst kept hit, or infinity while not full.
    pub fn worst(&self) -> f64 {
        if self.is_full() {
            self.heap.peek().map_or(f64::INFINITY, |r| r.0.distance_sq)
        } else {
            f64::INFINITY
        }
    }

    pub fn offer(&mut self, hit: Hit) {
        if self.m == 0 {
            return;
        }
        if !self.is_full() {
            self.heap.push(Ranked(hit));
        } else if let Some(top) = self.heap.peek() {
            if hit.canonical_cmp(&top.0) == Ordering::Less {
                self.heap.pop();
                self.heap.push(Ranked(hit));
            }
        }
    }

    pub fn into_sorted(self) -> Vec<Hit> {
        let mut v: Vec<Hit> = self.heap.into_iter().map(|r| r.0).collect();
        v.sort_by(Hit::canonical_cmp);
        v
    }
}

/// Exhaustive scan; the reference every index is checked against.
pub fn brute_force_knn(store: &EntryStore, q: &[f32], m: usize) -> Result<Vec<Hit>> {
    store.check_query(q)?;
    let mut top = TopM::new(m);
    for i in 0..store.len() {
        top.offer(store.hit(i, q));
    }
    Ok(top.into_sorted())
}
