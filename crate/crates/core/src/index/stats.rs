use serde::{Deserialize, Serialize};

use super::format::{file_size, header_size, RECORD_META_BYTES};
use super::ShardSet;
use crate::dataset::SlideStore;
use crate::error::Result;

/// Storage footprint of an embedding database next to its slide tiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageReport {
    pub entries: u64,
    pub patches: u64,
    pub dim: usize,
    /// Size of the database file on disk.
    pub embedding_bytes: u64,
    /// Vector components only: `entries * dim * 4`.
    pub embedding_payload_bytes: u64,
    pub metadata_bytes: u64,
    pub image_bytes: u64,
    /// `embedding_bytes / image_bytes`, or 0 with no images.
    pub overhead_ratio: f64,
    /// Raw RGB bytes of one patch of the database's side length.
    pub raw_patch_bytes: u64,
    pub embedding_bytes_per_patch: u64,
    /// Raw patch bytes over embedding bytes per patch.
    pub byte_reduction: f64,
    /// Raw patch scalars over embedding scalars per patch.
    pub scalar_reduction: f64,
}

/// Reports database size against the tile store, if one is given.
pub fn storage_stats(db: &ShardSet, store: Option<&SlideStore>) -> Result<StorageReport> {
    let entries = db.len() as u64;
    let dim = db.dim();
    let embedding_bytes = if entries == 0 {
        0
    } else {
        file_size(db.embedder(), dim, entries)
    };
    let embedding_payload_bytes = entries * dim as u64 * 4;
    let metadata_bytes = if entries == 0 {
        0
    } else {
        header_size(db.embedder()) as u64 + entries * RECORD_META_BYTES as u64
    };
    let image_bytes = match store {
        Some(s) => s.image_bytes()?,
        None => 0,
    };
    let side = db.patches().first().map_or(300, |p| p.side_px) as u64;
    let raw_patch_bytes = side * side * 3;
    let embedding_bytes_per_patch = 8 * dim as u64 * 4;
    Ok(StorageReport {
        entries,
        patches: db.patches().len() as u64,
        dim,
        embedding_bytes,
        embedding_payload_bytes,
        metadata_bytes,
        image_bytes,
        overhead_ratio: if image_bytes == 0 {
            0.0
        } else {
            embedding_bytes as f64 / image_bytes as f64
        },
        raw_patch_bytes,
        embedding_bytes_per_patch,
        byte_reduction: raw_patch_bytes as f64 / embedding_bytes_per_patch as f64,
        scalar_reduction: raw_patch_bytes as f64 / (8 * dim) as f64,
    })
}
