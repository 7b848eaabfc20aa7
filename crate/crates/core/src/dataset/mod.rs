//! Slide stores, annotations, patch extraction and class-balanced sampling.

mod extract;
pub mod polygon;
mod sample;
mod store;
mod synth;

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use extract::{extract_patches, label_inventory, ExtractOptions};
pub use sample::{class_key, sample_balanced, split_balanced, ClassAxis};
pub use store::{encode_png, Manifest, SlideStore, MANIFEST_FILE};
pub use synth::{downsample_2x, generate_synthetic, ClassTexture, SynthSpec, SyntheticDataset};

use crate::error::{Error, Result};
use crate::model::PatchRecord;

pub const ANNOTATIONS_FILE: &str = "annotations.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    HistologicFeature,
    Organ,
    Gleason,
}

/// A labeled polygon outlined on a slide, in base pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRegion {
    pub slide_id: u32,
    pub label: String,
    pub label_kind: LabelKind,
    pub points: Vec<(f64, f64)>,
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotationRegion>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_annotations(root: &Path, annotations: &[AnnotationRegion]) -> Result<()> {
    let path = root.join(ANNOTATIONS_FILE);
    let text = serde_json::to_string(annotations)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Writes patch records as newline-delimited JSON.
pub fn write_patch_table(path: impl AsRef<Path>, patches: &[PatchRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in patches {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_patch_table(path: impl AsRef<Path>) -> Result<Vec<PatchRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
