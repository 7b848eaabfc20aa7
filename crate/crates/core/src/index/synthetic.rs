//! Seeded embedding sets for index tests and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::IndexEntry;
use crate::model::{Embedding, Magnification, Orientation, PatchMeta};

/// Placeholder metadata for entry `i`: eight consecutive entries share a patch.
pub fn synthetic_meta(i: usize) -> (PatchMeta, Orientation) {
    let patch = (i / 8) as u64;
    (
        PatchMeta {
            patch_id: patch,
            slide_id: (patch % 97) as u32,
            magnification: Magnification::X40,
            x: ((patch / 97) % 64) as u32 * 300,
            y: ((patch / 97) / 64) as u32 * 300,
            side_px: 300,
        },
        Orientation::ALL[i % 8],
    )
}

/// `n` entries with i.i.d. uniform `[0, 1)` components.
pub fn uniform_entries(n: usize, dim: usize, seed: u64) -> Vec<IndexEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let (patch, orientation) = synthetic_meta(i);
            let v: Vec<f32> = (0..dim).map(|_| rng.random::<f32>()).collect();
            IndexEntry {
                patch,
                orientation,
                embedding: Embedding::new(v).expect("finite"),
            }
        })
        .collect()
}

fn unit(v: Vec<f64>) -> Vec<f32> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / norm) as f32).collect()
}

/// Unit vectors scattered around `centers` with per-component Gaussian noise
/// of standard deviation `spread / sqrt(dim)`.
pub fn perturbed(
    centers: &[Vec<f32>],
    spread: f64,
    rng: &mut impl Rng,
    count: usize,
) -> Vec<Vec<f32>> {
    let dim = centers[0].len();
    let sigma = spread / (dim as f64).sqrt();
    (0..count)
        .map(|i| {
            let c = &centers[i % centers.len()];
            let v: Vec<f64> = c
                .iter()
                .map(|&x| {
                    let z: f64 = StandardNormal.sample(rng);
                    x as f64 + sigma * z
                })
                .collect();
            unit(v)
        })
        .collect()
}

/// Clustered benchmark: `n` entries in clusters of about 40 around random unit
/// centers (spread 0.05), plus 100 queries drawn around the same centers.
pub fn clustered_entries(n: usize, dim: usize, seed: u64) -> (Vec<IndexEntry>, Vec<Embedding>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clusters = (n / 40).max(1);
    let centers: Vec<Vec<f32>> = (0..clusters)
        .map(|_| unit((0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()))
        .collect();
    let entries = perturbed(&centers, 0.05, &mut rng, n)
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let (patch, orientation) = synthetic_meta(i);
            IndexEntry {
                patch,
                orientation,
                embedding: Embedding::new(v).expect("finite"),
            }
        })
        .collect();
    let mut shuffled = centers.clone();
    for i in (1..shuffled.len()).rev() {
        let j = rng.random_range(0..=i);
        shuffled.swap(i, j);
    }
    let queries = perturbed(&shuffled, 0.05, &mut rng, 100)
        .into_iter()
        .map(|v| Embedding::new(v).expect("finite"))
        .collect();
    (entries, queries)
}
