//! Moving embeddings in and out: database-format files for external models
//! and a TSV dump for visualization tools.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::OrientedEmbeddingSet;
use crate::error::{Error, Result};
use crate::index::{read_db_file, write_db_file, DbHeader, IndexEntry};
use crate::model::{Embedding, LabelSet, Magnification, Orientation, PatchMeta};

/// Groups database records into per-patch sets, requiring all eight
/// orientations, no duplicates and a uniform dimension.
pub fn group_entries(
    entries: Vec<IndexEntry>,
    expected_dim: usize,
) -> Result<Vec<(PatchMeta, OrientedEmbeddingSet)>> {
    let mut by_patch: BTreeMap<u64, (PatchMeta, [Option<Embedding>; 8])> = BTreeMap::new();
    for e in entries {
        if e.embedding.dim() != expected_dim {
            return Err(Error::DimMismatch {
                expected: expected_dim,
                found: e.embedding.dim(),
            });
        }
        let slot = by_patch
            .entry(e.patch.patch_id)
            .or_insert_with(|| (e.patch, Default::default()));
        if slot.0 != e.patch {
            return Err(Error::InvalidArgument(format!(
                "patch {} has conflicting metadata across orientations",
                e.patch.patch_id
            )));
        }
        let cell = &mut slot.1[e.orientation.code() as usize];
        if cell.is_some() {
            return Err(Error::DuplicateEntry {
                patch_id: e.patch.patch_id,
                orientation: e.orientation.to_string(),
            });
        }
        *cell = Some(e.embedding);
    }
    by_patch
        .into_iter()
        .map(|(patch_id, (meta, cells))| {
            let mut embeddings = Vec::with_capacity(8);
            for (o, cell) in Orientation::ALL.into_iter().zip(cells) {
                embeddings.push(cell.ok_or_else(|| Error::MissingOrientation {
                    patch_id,
                    orientation: o.to_string(),
                })?);
            }
            Ok((
                meta,
                OrientedEmbeddingSet {
                    patch_id,
                    embeddings: embeddings.try_into().expect("eight orientations"),
                },
            ))
        })
        .collect()
}

/// Expands per-patch sets into database entries in (patch id, orientation) order.
pub fn sets_to_entries(sets: &[(PatchMeta, OrientedEmbeddingSet)]) -> Vec<IndexEntry> {
    let mut out: Vec<IndexEntry> = sets
        .iter()
        .flat_map(|(meta, set)| {
            Orientation::ALL.into_iter().map(move |o| IndexEntry {
                patch: *meta,
                orientation: o,
                embedding: set.get(o).clone(),
            })
        })
        .collect();
    out.sort_by_key(IndexEntry::key);
    out
}

/// Reads an embedding file in the database format and validates it against `expected_dim`.
pub fn import_embeddings(
    path: impl AsRef<Path>,
    expected_dim: usize,
) -> Result<Vec<(PatchMeta, OrientedEmbeddingSet)>> {
    let (header, entries) = read_db_file(path)?;
    if header.dim != expected_dim {
        return Err(Error::DimMismatch {
            expected: expected_dim,
            found: header.dim,
        });
    }
    group_entries(entries, expected_dim)
}

/// Writes per-patch sets in the database format under the given embedder name.
pub fn export_embeddings(
    path: impl AsRef<Path>,
    embedder: &str,
    sets: &[(PatchMeta, OrientedEmbeddingSet)],
) -> Result<()> {
    let dim = sets
        .first()
        .map(|(_, s)| s.dim())
        .ok_or_else(|| Error::InvalidArgument("nothing to export".into()))?;
    let entries = sets_to_entries(sets);
    let header = DbHeader {
        embedder: embedder.to_string(),
        dim,
        count: entries.len() as u64,
    };
    write_db_file(path, &header, &entries)
}

const TSV_META_COLUMNS: [&str; 8] = [
    "patch_id",
    "slide_id",
    "magnification",
    "orientation",
    "x",
    "y",
    "side_px",
    "labels",
];

/// One TSV row read back by [`read_embeddings_tsv`].
#[derive(Debug, Clone, PartialEq)]
pub struct TsvRow {
    pub entry: IndexEntry,
    pub labels: Vec<String>,
}

fn label_names(labels: Option<&LabelSet>) -> Vec<String> {
    let Some(l) = labels else {
        return Vec::new();
    };
    let mut out: Vec<String> = l.histologic_features.iter().cloned().collect();
    if let Some(o) = &l.organ {
        out.push(format!("organ:{o}"));
    }
    if let Some(g) = l.gleason {
        out.push(format!("gleason:{g}"));
    }
    out
}

/// Writes one row per entry: metadata, `;`-joined labels, then the components.
/// Floats use the shortest representation that parses back to the same value.
pub fn write_embeddings_tsv(
    path: impl AsRef<Path>,
    entries: &[IndexEntry],
    labels: &BTreeMap<u64, LabelSet>,
) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let dim = entries.first().map_or(0, |e| e.embedding.dim());
    let mut header: Vec<String> = TSV_META_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((0..dim).map(|i| format!("e{i}")));
    let mut text = header.join("\t");
    text.push('\n');
    for e in entries {
        let p = &e.patch;
        let mut row = vec![
            p.patch_id.to_string(),
            p.slide_id.to_string(),
            p.magnification.to_string(),
            e.orientation.to_string(),
            p.x.to_string(),
            p.y.to_string(),
            p.side_px.to_string(),
            label_names(labels.get(&p.patch_id)).join(";"),
        ];
        row.extend(e.embedding.as_slice().iter().map(|c| c.to_string()));
        text.push_str(&row.join("\t"));
        text.push('\n');
    }
    w.write_all(text.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_embeddings_tsv(path: impl AsRef<Path>) -> Result<Vec<TsvRow>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(h) => h.map_err(|e| Error::io(path, e))?,
        None => return Ok(Vec::new()),
    };
    let cols = header.split('\t').count();
    if cols < TSV_META_COLUMNS.len() + 1 {
        return Err(Error::Format("TSV header has no embedding columns".into()));
    }
    let bad = |line: usize, what: &str| Error::Format(format!("TSV line {line}: {what}"));
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != cols {
            return Err(bad(n, "wrong column count"));
        }
        let int = |s: &str| s.parse::<u64>().map_err(|_| bad(n, "bad integer"));
        let magnification: Magnification = f[2].parse().map_err(|_| bad(n, "bad magnification"))?;
        let orientation = Orientation::ALL
            .into_iter()
            .find(|o| o.to_string() == f[3])
            .ok_or_else(|| bad(n, "bad orientation"))?;
        let v = f[8..]
            .iter()
            .map(|s| s.parse::<f32>().map_err(|_| bad(n, "bad component")))
            .collect::<Result<Vec<f32>>>()?;
        out.push(TsvRow {
            entry: IndexEntry {
                patch: PatchMeta {
                    patch_id: int(f[0])?,
                    slide_id: int(f[1])? as u32,
                    magnification,
                    x: int(f[4])? as u32,
                    y: int(f[5])? as u32,
                    side_px: int(f[6])? as u32,
                },
                orientation,
                embedding: Embedding::new(v)?,
            },
            labels: f[7]
                .split(';')
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect(),
        });
    }
    Ok(out)
}
