//! Deterministic hand-crafted embedders.
//!
//! All feature accumulation is integer, so a quarter turn of the input
//! permutes the spatial features exactly and leaves the color histogram
//! unchanged, bit for bit. Mirrors keep the color histogram but move
//! gradients lying exactly on a bin edge into a different bin.

use image::RgbImage;

use super::{Embedder, EmbedderDescriptor, EMBED_INPUT_SIZE};
use crate::error::{Error, Result};
use crate::model::Embedding;

pub const COLOR_BINS: usize = 16;
pub const GRID: usize = 4;
pub const GRADIENT_BINS: usize = 4;

/// Offsets of each block inside a reference embedding.
pub const COLOR_RANGE: std::ops::Range<usize> = 0..3 * COLOR_BINS;
pub const GRADIENT_RANGE: std::ops::Range<usize> = 48..48 + GRID * GRID * GRADIENT_BINS;
pub const LUMINANCE_RANGE: std::ops::Range<usize> = 112..112 + GRID * GRID;

/// 128-d embedding: 48 color-histogram bins, a 4x4x4 gradient-orientation
/// histogram, and a 4x4 grid of mean luminance, L2-normalized.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceEmbedder;

impl ReferenceEmbedder {
    pub const NAME: &'static str = "reference-v1";
}

/// The 48-d color histogram alone; a weak baseline.
#[derive(Debug, Clone, Copy, Default)]
pub struct ColorHistogramEmbedder;

impl ColorHistogramEmbedder {
    pub const NAME: &'static str = "color-histogram-v1";
}

fn check_input(img: &RgbImage) -> Result<()> {
    if img.dimensions() != (EMBED_INPUT_SIZE, EMBED_INPUT_SIZE) {
        return Err(Error::InvalidArgument(format!(
            "embedder input must be {EMBED_INPUT_SIZE}x{EMBED_INPUT_SIZE}, got {:?}",
            img.dimensions()
        )));
    }
    Ok(())
}

fn color_histogram(img: &RgbImage, out: &mut [f64]) {
    let mut counts = [0u32; 3 * COLOR_BINS];
    for px in img.as_raw().chunks_exact(3) {
        for c in 0..3 {
            counts[c * COLOR_BINS + (px[c] >> 4) as usize] += 1;
        }
    }
    let n = (img.width() * img.height()) as f64;
    for (o, c) in out.iter_mut().zip(counts) {
        *o = c as f64 / n;
    }
}

/// Luminance scaled by 1000: 299 R + 587 G + 114 B.
fn luminance(img: &RgbImage) -> Vec<i64> {
    img.as_raw()
        .chunks_exact(3)
        .map(|p| 299 * p[0] as i64 + 587 * p[1] as i64 + 114 * p[2] as i64)
        .collect()
}

/// Unsigned orientation bin of 45 degrees each, using exact comparisons.
#[inline]
fn orientation_bin(mut gx: i64, mut gy: i64) -> usize {
    if gy < 0 || (gy == 0 && gx < 0) {
        gx = -gx;
        gy = -gy;
    }
    if gx > 0 {
        if gy < gx {
            0
        } else {
            1
        }
    } else if gy > -gx {
        2
    } else {
        3
    }
}

fn spatial_features(img: &RgbImage, gradient: &mut [f64], lum_out: &mut [f64]) {
    let n = img.width() as usize;
    let cell = n / GRID;
    let lum = luminance(img);
    let mut grad = [0u64; GRID * GRID * GRADIENT_BINS];
    let mut lum_sum = [0u64; GRID * GRID];
    for y in 0..n {
        for x in 0..n {
            let c = (y / cell) * GRID + x / cell;
            lum_sum[c] += lum[y * n + x] as u64;
            if x == 0 || y == 0 || x == n - 1 || y == n - 1 {
                continue;
            }
            let gx = lum[y * n + x + 1] - lum[y * n + x - 1];
            let gy = lum[(y + 1) * n + x] - lum[(y - 1) * n + x];
            if gx == 0 && gy == 0 {
                continue;
            }
            grad[c * GRADIENT_BINS + orientation_bin(gx, gy)] += (gx.abs() + gy.abs()) as u64;
        }
    }
    let total: u64 = grad.iter().sum();
    for (o, g) in gradient.iter_mut().zip(grad) {
        *o = if total == 0 {
            0.0
        } else {
            g as f64 / total as f64
        };
    }
    let per_cell = (cell * cell) as f64 * 255_000.0;
    for (o, s) in lum_out.iter_mut().zip(lum_sum) {
        *o = s as f64 / per_cell;
    }
}

/// L2-normalizes into f32. The norm sums squares in sorted order so that any
/// permutation of the input yields the same norm. A zero vector maps to e0.
pub fn normalize(values: &[f64]) -> Embedding {
    let mut squares: Vec<f64> = values.iter().map(|v| v * v).collect();
    squares.sort_by(f64::total_cmp);
    let norm = squares.iter().sum::<f64>().sqrt();
    let components = if norm > 0.0 {
        values.iter().map(|v| (v / norm) as f32).collect()
    } else {
        let mut e0 = vec![0.0f32; values.len()];
        e0[0] = 1.0;
        e0
    };
    Embedding::new(components).expect("finite by construction")
}

impl Embedder for ReferenceEmbedder {
    fn descriptor(&self) -> EmbedderDescriptor {
        EmbedderDescriptor {
            name: Self::NAME.into(),
            dim: 128,
            version: "1".into(),
            deterministic: true,
        }
    }

    fn embed(&self, img: &RgbImage) -> Result<Embedding> {
        check_input(img)?;
        let mut v = [0.0f64; 128];
        color_histogram(img, &mut v[COLOR_RANGE]);
        let (head, lum) = v.split_at_mut(LUMINANCE_RANGE.start);
        spatial_features(img, &mut head[GRADIENT_RANGE], lum);
        Ok(normalize(&v))
    }
}

impl Embedder for ColorHistogramEmbedder {
    fn descriptor(&self) -> EmbedderDescriptor {
        EmbedderDescriptor {
            name: Self::NAME.into(),
            dim: 3 * COLOR_BINS,
            version: "1".into(),
            deterministic: true,
        }
    }

    fn embed(&self, img: &RgbImage) -> Result<Embedding> {
        check_input(img)?;
        let mut v = [0.0f64; 3 * COLOR_BINS];
        color_histogram(img, &mut v);
        Ok(normalize(&v))
    }
}
