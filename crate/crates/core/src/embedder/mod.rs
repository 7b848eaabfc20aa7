//! Embedding providers, query preprocessing and orientation expansion.

mod import;
mod preprocess;
mod reference;

use std::sync::Arc;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use import::{
    export_embeddings, group_entries, import_embeddings, read_embeddings_tsv, sets_to_entries,
    write_embeddings_tsv, TsvRow,
};
pub use preprocess::{
    check_query_size, preprocess_query, resize_bilinear, EMBED_INPUT_SIZE, MAX_QUERY_SIDE,
    MIN_QUERY_SIDE,
};
pub use reference::{
    normalize, ColorHistogramEmbedder, ReferenceEmbedder, COLOR_RANGE, GRADIENT_RANGE,
    LUMINANCE_RANGE,
};

use crate::error::{Error, Result};
use crate::model::{apply_orientation, Embedding, Orientation};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedderDescriptor {
    pub name: String,
    pub dim: usize,
    pub version: String,
    pub deterministic: bool,
}

/// Maps a preprocessed 224x224 RGB image to an embedding.
pub trait Embedder: Send + Sync {
    fn descriptor(&self) -> EmbedderDescriptor;

    fn embed(&self, img: &RgbImage) -> Result<Embedding>;

    /// Preprocesses a raw query region, then embeds it.
    fn embed_raw(&self, img: &RgbImage) -> Result<Embedding> {
        self.embed(&preprocess_query(img)?)
    }
}

/// Looks up a built-in embedder by name.
pub fn embedder_by_name(name: &str) -> Result<Arc<dyn Embedder>> {
    match name {
        ReferenceEmbedder::NAME => Ok(Arc::new(ReferenceEmbedder)),
        ColorHistogramEmbedder::NAME => Ok(Arc::new(ColorHistogramEmbedder)),
        other => Err(Error::UnknownEmbedder(other.to_string())),
    }
}

/// The eight embeddings of one patch, indexed by orientation code.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientedEmbeddingSet {
    pub patch_id: u64,
    pub embeddings: [Embedding; 8],
}

impl OrientedEmbeddingSet {
    pub fn get(&self, o: Orientation) -> &Embedding {
        &self.embeddings[o.code() as usize]
    }

    pub fn dim(&self) -> usize {
        self.embeddings[0].dim()
    }
}

/// Embeds every orientation of a square patch:
/// entry `o` is `embed(preprocess(apply_orientation(img, o)))`.
pub fn embed_all_orientations(
    patch_id: u64,
    img: &RgbImage,
    embedder: &dyn Embedder,
) -> Result<OrientedEmbeddingSet> {
    if img.width() != img.height() {
        return Err(Error::NonSquareImage {
            width: img.width(),
            height: img.height(),
        });
    }
    let dim = embedder.descriptor().dim;
    let mut out = Vec::with_capacity(8);
    for o in Orientation::ALL {
        let e = embedder.embed_raw(&apply_orientation(img, o)?)?;
        if e.dim() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                found: e.dim(),
            });
        }
        out.push(e);
    }
    Ok(OrientedEmbeddingSet {
        patch_id,
        embeddings: out.try_into().expect("eight orientations"),
    })
}

/// Embeds a batch of patches in parallel; output order follows input order.
pub fn embed_batch(
    patches: &[(u64, RgbImage)],
    embedder: &dyn Embedder,
) -> Result<Vec<OrientedEmbeddingSet>> {
    patches
        .par_iter()
        .map(|(id, img)| embed_all_orientations(*id, img, embedder))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(n: u32) -> RgbImage {
        RgbImage::from_fn(n, n, |x, y| {
            image::Rgb([(x * 3 + y) as u8, (y * 5) as u8, ((x * y) % 251) as u8])
        })
    }

    #[test]
    fn constant_patch_gives_identical_embeddings() {
        let img = RgbImage::from_pixel(300, 300, image::Rgb([120, 40, 200]));
        let set = embed_all_orientations(0, &img, &ReferenceEmbedder).unwrap();
        for e in &set.embeddings {
            assert!(e.bits_eq(&set.embeddings[0]));
        }
    }

    #[test]
    fn all_dims_128() {
        let set = embed_all_orientations(1, &textured(300), &ReferenceEmbedder).unwrap();
        assert!(set.embeddings.iter().all(|e| e.dim() == 128));
        assert_eq!(set.dim(), ReferenceEmbedder.descriptor().dim);
    }

    #[test]
    fn entry_equals_embedding_of_reoriented_patch() {
        let img = textured(300);
        let set = embed_all_orientations(1, &img, &ReferenceEmbedder).unwrap();
        for o in Orientation::ALL {
            let direct = ReferenceEmbedder
                .embed(&preprocess_query(&apply_orientation(&img, o).unwrap()).unwrap())
                .unwrap();
            assert!(direct.bits_eq(set.get(o)), "{o}");
        }
    }

    #[test]
    fn set_is_closed_under_reorientation() {
        let img = textured(256);
        let base = embed_all_orientations(0, &img, &ReferenceEmbedder).unwrap();
        let key = |s: &OrientedEmbeddingSet| {
            let mut v: Vec<Vec<u32>> = s
                .embeddings
                .iter()
                .map(|e| e.as_slice().iter().map(|x| x.to_bits()).collect())
                .collect();
            v.sort();
            v
        };
        for g in Orientation::ALL {
            let moved = apply_orientation(&img, g).unwrap();
            let set = embed_all_orientations(0, &moved, &ReferenceEmbedder).unwrap();
            assert_eq!(key(&set), key(&base), "g={g}");
        }
    }

    #[test]
    fn non_square_rejected() {
        let img = RgbImage::new(300, 250);
        assert!(matches!(
            embed_all_orientations(0, &img, &ReferenceEmbedder),
            Err(Error::NonSquareImage { .. })
        ));
    }

    #[test]
    fn lookup() {
        assert_eq!(
            embedder_by_name("reference-v1").unwrap().descriptor().dim,
            128
        );
        assert_eq!(
            embedder_by_name("color-histogram-v1")
                .unwrap()
                .descriptor()
                .dim,
            48
        );
        assert!(matches!(
            embedder_by_name("nope"),
            Err(Error::UnknownEmbedder(_))
        ));
    }
}
