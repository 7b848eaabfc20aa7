//! Random-hyperplane hash buckets for dense shards.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::entry::{EntryStore, Hit, TopM};
use super::IndexEntry;
use crate::error::{Error, Result};

pub const DEFAULT_HASH_BITS: u32 = 16;
pub const DEFAULT_PROBE_RADIUS: u32 = 1;

/// Hyperplanes pass through the centroid of the indexed entries, so bits
/// split the data rather than the origin.
#[derive(Debug, Clone)]
pub struct HashIndex {
    store: EntryStore,
    bits: u32,
    probe_radius: u32,
    centroid: Vec<f64>,
    /// `bits` unit normals, row-major.
    planes: Vec<f64>,
    buckets: HashMap<u32, Vec<usize>>,
}

impl HashIndex {
    pub fn build(entries: Vec<IndexEntry>, bits: u32, seed: u64) -> Result<Self> {
        let dim = entries
            .first()
            .map(|e| e.embedding.dim())
            .ok_or(Error::EmptyIndex)?;
        Self::from_store(EntryStore::from_entries(dim, entries)?, bits, seed)
    }

    pub fn from_store(store: EntryStore, bits: u32, seed: u64) -> Result<Self> {
        if store.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if bits == 0 || bits > 32 {
            return Err(Error::InvalidArgument(format!(
                "hash bits {bits} outside 1..=32"
            )));
        }
        let dim = store.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut planes = Vec::with_capacity(bits as usize * dim);
        for _ in 0..bits {
            let row: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            planes.extend(row.iter().map(|v| v / norm));
        }
        let mut centroid = vec![0.0f64; dim];
        for i in 0..store.len() {
            for (c, v) in centroid.iter_mut().zip(store.vector(i)) {
                *c += *v as f64;
            }
        }
        let n = store.len() as f64;
        centroid.iter_mut().for_each(|c| *c /= n);

        let mut index = HashIndex {
            store,
            bits,
            probe_radius: DEFAULT_PROBE_RADIUS,
            centroid,
            planes,
            buckets: HashMap::new(),
        };
        for i in 0..index.store.len() {
            let key = index.key(index.store.vector(i));
            index.buckets.entry(key).or_default().push(i);
        }
        Ok(index)
    }

    pub fn with_probe_radius(mut self, radius: u32) -> Self {
        self.probe_radius = radius;
        self
    }

    pub fn probe_radius(&self) -> u32 {
        self.probe_radius
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    pub fn store(&self) -> &EntryStore {
        &self.store
    }

    pub fn bucket_count(&self) -> usize {
        self.buckets.len()
    }

    /// Bucket sizes sorted by key.
    pub fn bucket_sizes(&self) -> Vec<(u32, usize)> {
        let mut v: Vec<(u32, usize)> = self.buckets.iter().map(|(k, b)| (*k, b.len())).collect();
        v.sort_unstable();
        v
    }

    /// Sign pattern of the centered vector against each hyperplane.
    pub fn key(&self, v: &[f32]) -> u32 {
        let dim = self.store.dim();
        let mut key = 0u32;
        for b in 0..self.bits as usize {
            let plane = &self.planes[b * dim..(b + 1) * dim];
            let dot: f64 = plane
                .iter()
                .zip(v)
                .zip(&self.centroid)
                .map(|((p, x), c)| p * (*x as f64 - c))
                .sum();
            if dot >= 0.0 {
                key |= 1 << b;
            }
        }
        key
    }

    pub fn search(&self, q: &[f32], m: usize) -> Result<Vec<Hit>> {
        self.search_with_radius(q, m, self.probe_radius)
    }

    /// Scans every bucket within Hamming distance `radius` of the query's key and
    /// ranks the scanned entries by exact distance.
    pub fn search_with_radius(&self, q: &[f32], m: usize, radius: u32) -> Result<Vec<Hit>> {
        self.store.check_query(q)?;
        let mut top = TopM::new(m);
        if radius >= self.bits {
            for i in 0..self.store.len() {
                top.offer(self.store.hit(i, q));
            }
            return Ok(top.into_sorted());
        }
        let key = self.key(q);
        let mut visit = |k: u32| {
            if let Some(bucket) = self.buckets.get(&k) {
                for &i in bucket {
                    top.offer(self.store.hit(i, q));
                }
            }
        };
        for_each_within(key, self.bits, radius, &mut visit);
        Ok(top.into_sorted())
    }
}

/// Calls `f` on every key within Hamming distance `radius` of `key`.
fn for_each_within(key: u32, bits: u32, radius: u32, f: &mut impl FnMut(u32)) {
    fn rec(key: u32, from: u32, bits: u32, left: u32, f: &mut impl FnMut(u32)) {
        f(key);
        if left == 0 {
            return;
        }
        for b in from..bits {
            rec(key ^ (1 << b), b + 1, bits, left - 1, f);
        }
    }
    rec(key, 0, bits, radius, f);
}
