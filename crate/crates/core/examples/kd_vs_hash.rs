//! Exact k-d tree search against hash-bucket search on the same vectors.
//!
//!     cargo run --release --example kd_vs_hash

use std::collections::BTreeSet;
use std::time::Instant;

use patchsearch::index::synthetic::uniform_entries;
use patchsearch::index::{
    brute_force_knn, EntryStore, HashIndex, Hit, KdTree, DEFAULT_LEAF_TARGET, DEFAULT_MAX_DEPTH,
};

fn main() -> patchsearch::Result<()> {
    let (n, dim, m) = (40_000, 32, 10);
    let entries = uniform_entries(n, dim, 1);
    let queries: Vec<Vec<f32>> = uniform_entries(200, dim, 2)
        .into_iter()
        .map(|e| e.embedding.into_inner())
        .collect();

    let exact = EntryStore::from_entries(dim, entries.clone())?;
    let kd = KdTree::build(entries.clone(), DEFAULT_MAX_DEPTH, DEFAULT_LEAF_TARGET)?;
    let hash = HashIndex::build(entries, 12, 7)?;

    let key = |h: &Hit| (h.patch.patch_id, h.orientation.code());
    let truth: Vec<BTreeSet<_>> = queries
        .iter()
        .map(|q| Ok(brute_force_knn(&exact, q, m)?.iter().map(key).collect()))
        .collect::<patchsearch::Result<_>>()?;
    let report = |name: &str, search: &dyn Fn(&[f32]) -> patchsearch::Result<Vec<Hit>>| {
        let start = Instant::now();
        let results: Vec<Vec<Hit>> = queries
            .iter()
            .map(|q| search(q))
            .collect::<patchsearch::Result<_>>()?;
        let per_query = start.elapsed().as_secs_f64() * 1e3 / queries.len() as f64;
        let found: usize = results
            .iter()
            .zip(&truth)
            .map(|(r, t)| r.iter().filter(|h| t.contains(&key(h))).count())
            .sum();
        println!(
            "{name:<14} recall@{m} {:.3}  {per_query:.3} ms per query",
            found as f64 / (m * queries.len()) as f64
        );
        Ok::<_, patchsearch::Error>(())
    };
    report("brute force", &|q| brute_force_knn(&exact, q, m))?;
    report("k-d tree", &|q| kd.search(q, m))?;
    for radius in 0..=2 {
        report(&format!("hash radius {radius}"), &|q| {
            hash.search_with_radius(q, m, radius)
        })?;
    }
    Ok(())
}
