//! Database construction: extract labeled patches, split them into query and
//! database sets, embed every orientation, shard, and write the results.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    class_key, extract_patches, read_patch_table, split_balanced, write_patch_table,
    AnnotationRegion, ClassAxis, ExtractOptions, SlideStore,
};
use crate::embedder::{embed_all_orientations, Embedder};
use crate::error::{Error, Result};
use crate::index::{
    load_db_for, save_db, storage_stats, IndexEntry, IndexParams, ShardInfo, ShardSet,
    StorageReport,
};
use crate::model::{Magnification, Orientation, PatchRecord, DEFAULT_PATCH_SIDE};

/// Class-balanced split into disjoint query and database sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub axis: ClassAxis,
    pub queries_per_class: usize,
    pub db_per_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuildConfig {
    pub embedder: String,
    pub magnifications: Vec<Magnification>,
    pub side_px: u32,
    pub coverage_threshold: f64,
    pub stride_px: Option<u32>,
    /// Without a split every extracted patch goes into the database.
    pub split: Option<SplitConfig>,
    pub index: IndexParams,
    pub seed: u64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            embedder: crate::embedder::ReferenceEmbedder::NAME.to_string(),
            magnifications: vec![Magnification::X40],
            side_px: DEFAULT_PATCH_SIDE,
            coverage_threshold: 0.75,
            stride_px: None,
            split: None,
            index: IndexParams::default(),
            seed: 0,
        }
    }
}

impl BuildConfig {
    fn extract_options(&self) -> ExtractOptions {
        ExtractOptions {
            side_px: self.side_px,
            coverage_threshold: self.coverage_threshold,
            stride_px: self.stride_px,
            keep_unlabeled: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub seed: u64,
    pub embedder: String,
    pub extracted_patches: usize,
    pub db_patches: usize,
    pub query_patches: usize,
    pub entries: usize,
    pub db_per_class: BTreeMap<String, usize>,
    pub query_per_class: BTreeMap<String, usize>,
    pub db_per_magnification: BTreeMap<Magnification, usize>,
    pub shards: Vec<ShardInfo>,
    pub storage: StorageReport,
}

pub struct BuildOutput {
    pub db: ShardSet,
    pub db_records: Vec<PatchRecord>,
    pub query_records: Vec<PatchRecord>,
    pub report: BuildReport,
}

/// Embeds all eight orientations of each patch. Each slide level is decoded
/// once and the patches on it are embedded in parallel.
pub fn embed_patches(
    store: &SlideStore,
    records: &[PatchRecord],
    embedder: &dyn Embedder,
) -> Result<Vec<IndexEntry>> {
    let mut groups: BTreeMap<(u32, Magnification), Vec<&PatchRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.slide_id, r.magnification))
            .or_default()
            .push(r);
    }
    let mut entries = Vec::with_capacity(records.len() * 8);
    for ((slide_id, mag), group) in groups {
        let level = store.read_level(slide_id, mag)?;
        let d = mag.downsample();
        let sets = group
            .par_iter()
            .map(|r| {
                let (lx, ly) = (r.x / d, r.y / d);
                if lx + r.side_px > level.width() || ly + r.side_px > level.height() {
                    return Err(Error::OutOfBounds {
                        x: lx as i64,
                        y: ly as i64,
                        width: r.side_px,
                        height: r.side_px,
                        level_width: level.width(),
                        level_height: level.height(),
                    });
                }
                let crop =
                    image::imageops::crop_imm(&level, lx, ly, r.side_px, r.side_px).to_image();
                embed_all_orientations(r.patch_id, &crop, embedder)
            })
            .collect::<Result<Vec<_>>>()?;
        for (r, set) in group.iter().zip(sets) {
            for o in Orientation::ALL {
                entries.push(IndexEntry {
                    patch: r.meta(),
                    orientation: o,
                    embedding: set.get(o).clone(),
                });
            }
        }
    }
    entries.sort_by_key(IndexEntry::key);
    Ok(entries)
}

fn class_counts(records: &[PatchRecord], axis: ClassAxis) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for r in records {
        if let Some(k) = class_key(r, axis) {
            *out.entry(k).or_insert(0) += 1;
        }
    }
    out
}

pub fn build_database(
    store: &SlideStore,
    annotations: &[AnnotationRegion],
    embedder: &dyn Embedder,
    cfg: &BuildConfig,
) -> Result<BuildOutput> {
    if annotations.is_empty() {
        return Err(Error::InvalidArgument(
            "no annotations to extract patches from".into(),
        ));
    }
    if embedder.descriptor().name != cfg.embedder {
        return Err(Error::EmbedderMismatch {
            database: cfg.embedder.clone(),
            query: embedder.descriptor().name,
        });
    }
    cfg.index.validate()?;
    let extracted = extract_patches(
        store,
        annotations,
        &cfg.magnifications,
        &cfg.extract_options(),
    )?;
    if extracted.is_empty() {
        return Err(Error::InvalidArgument(
            "no labeled patches met the coverage threshold".into(),
        ));
    }
    let (query_records, db_records, axis) = match &cfg.split {
        Some(s) => {
            let (q, d) = split_balanced(
                &extracted,
                s.queries_per_class,
                s.db_per_class,
                s.axis,
                cfg.seed,
            )?;
            (q, d, s.axis)
        }
        None => (Vec::new(), extracted.clone(), ClassAxis::Feature),
    };
    let entries = embed_patches(store, &db_records, embedder)?;
    let dim = embedder.descriptor().dim;
    let n_entries = entries.len();
    let db = ShardSet::build(&cfg.embedder, dim, entries, &cfg.index)?;
    let mut db_per_magnification = BTreeMap::new();
    for r in &db_records {
        *db_per_magnification.entry(r.magnification).or_insert(0) += 1;
    }
    let report = BuildReport {
        seed: cfg.seed,
        embedder: cfg.embedder.clone(),
        extracted_patches: extracted.len(),
        db_patches: db_records.len(),
        query_patches: query_records.len(),
        entries: n_entries,
        db_per_class: class_counts(&db_records, axis),
        query_per_class: class_counts(&query_records, axis),
        db_per_magnification,
        shards: db.shard_info(),
        storage: storage_stats(&db, Some(store))?,
    };
    Ok(BuildOutput {
        db,
        db_records,
        query_records,
        report,
    })
}

/// Files written next to a database file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DbPaths {
    pub db: PathBuf,
    /// Labels of database patches, one JSON object per line.
    pub labels: PathBuf,
    pub queries: PathBuf,
    pub report: PathBuf,
}

impl DbPaths {
    pub fn for_db(db: impl AsRef<Path>) -> Self {
        let db = db.as_ref().to_path_buf();
        let with = |suffix: &str| {
            let mut s = db.clone().into_os_string();
            s.push(suffix);
            PathBuf::from(s)
        };
        DbPaths {
            labels: with(".labels.ndjson"),
            queries: with(".queries.ndjson"),
            report: with(".report.json"),
            db,
        }
    }
}

pub fn write_build_output(out: &BuildOutput, db_path: impl AsRef<Path>) -> Result<DbPaths> {
    let paths = DbPaths::for_db(db_path);
    if let Some(parent) = paths.db.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    save_db(&out.db, &paths.db)?;
    write_patch_table(&paths.labels, &out.db_records)?;
    write_patch_table(&paths.queries, &out.query_records)?;
    let report = serde_json::to_string_pretty(&out.report)?;
    fs::write(&paths.report, report).map_err(|e| Error::io(&paths.report, e))?;
    Ok(paths)
}

/// A database loaded with its label sidecars.
pub struct LoadedDb {
    pub db: ShardSet,
    pub records: BTreeMap<u64, PatchRecord>,
    pub queries: Vec<PatchRecord>,
}

/// Loads a database written by [`write_build_output`]; missing sidecars read as empty.
pub fn load_database(
    db_path: impl AsRef<Path>,
    params: &IndexParams,
    embedder: &dyn Embedder,
) -> Result<LoadedDb> {
    let paths = DbPaths::for_db(db_path);
    let d = embedder.descriptor();
    let db = load_db_for(&paths.db, params, &d.name, d.dim)?;
    let read = |p: &Path| {
        if p.exists() {
            read_patch_table(p)
        } else {
            Ok(Vec::new())
        }
    };
    let records = read(&paths.labels)?
        .into_iter()
        .map(|r| (r.patch_id, r))
        .collect();
    Ok(LoadedDb {
        db,
        records,
        queries: read(&paths.queries)?,
    })
}
