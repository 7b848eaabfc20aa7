//! Content-based retrieval of histology image patches.
//!
//! Slides are tiled pyramids; fixed-size patches are embedded in all eight
//! dihedral orientations and stored in a sharded nearest-neighbour index.
//! A query region is embedded once and matched against every stored
//! orientation, then filtered so that results are distinct patches spread
//! across the slides.

pub mod dataset;
pub mod embedder;
pub mod error;
pub mod eval;
pub mod index;
pub mod model;
pub mod pipeline;
pub mod query;

pub use error::{Error, Result};
pub use model::{
    apply_orientation, compose_orientations, Embedding, Gleason, LabelSet, Magnification,
    Orientation, PatchMeta, PatchRecord, SlideRef,
};
