use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced anywhere in the search pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("image of {width}x{height} must be square for a quarter-turn rotation")]
    NonSquareImage { width: u32, height: u32 },

    #[error("query region {width}x{height} outside the allowed {min}..={max} pixel range")]
    RegionSize {
        width: u32,
        height: u32,
        min: u32,
        max: u32,
    },

    #[error("unknown slide {0}")]
    UnknownSlide(u32),

    #[error("slide {slide_id} has no {magnification} level")]
    MissingLevel {
        slide_id: u32,
        magnification: String,
    },

    #[error("region ({x},{y}) {width}x{height} out of bounds for level of size {level_width}x{level_height}")]
    OutOfBounds {
        x: i64,
        y: i64,
        width: u32,
        height: u32,
        level_width: u32,
        level_height: u32,
    },

    #[error("missing tile file {0}")]
    MissingTile(PathBuf),

    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),

    #[error("invalid synthetic spec: {0}")]
    InvalidSynthSpec(String),

    #[error("class underflow, need {needed} per class: {}", format_counts(.short))]
    ClassUnderflow {
        needed: usize,
        short: Vec<(String, usize)>,
    },

    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("patch {patch_id} is missing orientation {orientation}")]
    MissingOrientation { patch_id: u64, orientation: String },

    #[error("duplicate entry for patch {patch_id} orientation {orientation}")]
    DuplicateEntry { patch_id: u64, orientation: String },

    #[error("embedder mismatch: database built with `{database}`, query uses `{query}`")]
    EmbedderMismatch { database: String, query: String },

    #[error("unknown embedder `{0}`")]
    UnknownEmbedder(String),

    #[error("empty index")]
    EmptyIndex,

    #[error("database format: {0}")]
    Format(String),

    #[error(
        "not enough patches: requested {requested}, only {available} available after filtering"
    )]
    NotEnoughPatches { requested: usize, available: usize },

    #[error("label axis {axis} absent from patch {patch_id}")]
    MissingAxis { axis: String, patch_id: u64 },

    #[error("unknown class `{0}`")]
    UnknownClass(String),

    #[error("labels missing tumor flag")]
    MissingTumorFlag,

    #[error("tumor-present labels missing a grade")]
    MissingGrade,

    #[error("zero expected count in contingency table")]
    ZeroExpectedCount,

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn format_counts(short: &[(String, usize)]) -> String {
    short
        .iter()
        .map(|(class, n)| format!("{class}={n}"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input data rather than a bug or environment failure.
    /// A missing or malformed input file counts as bad input.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::Io { source, .. } => matches!(
                source.kind(),
                io::ErrorKind::NotFound | io::ErrorKind::InvalidData
            ),
            _ => true,
        }
    }
}
