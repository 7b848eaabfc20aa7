#![allow(dead_code)]

use std::path::{Path, PathBuf};

use patchsearch::dataset::{generate_synthetic, ClassAxis, SynthSpec};
use patchsearch::embedder::ReferenceEmbedder;
use patchsearch::pipeline::{build_database, write_build_output, BuildConfig, SplitConfig};
use patchsearch::Magnification;
use patchsearch_server::Config;

pub fn small_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        n_slides: 3,
        slide_width_px: 3600,
        slide_height_px: 3600,
        regions_per_slide: 9,
        levels: vec![Magnification::X40, Magnification::X20],
        ..SynthSpec::nine_class(seed)
    }
}

pub struct Built {
    pub store: PathBuf,
    pub db: PathBuf,
}

/// Synthetic slides plus a database with a small held-out query split, under `root`.
pub fn build_small(root: &Path) -> Built {
    let store = root.join("slides");
    let data = generate_synthetic(&small_spec(11), &store).expect("synthetic slides");
    let cfg = BuildConfig {
        split: Some(SplitConfig {
            axis: ClassAxis::Feature,
            queries_per_class: 3,
            db_per_class: 40,
        }),
        seed: 5,
        ..BuildConfig::default()
    };
    let built =
        build_database(&data.store, &data.annotations, &ReferenceEmbedder, &cfg).expect("build");
    let db = root.join("db").join("small.db");
    write_build_output(&built, &db).expect("write db");
    Built { store, db }
}

pub fn config_for(built: &Built, journal: Option<&Path>) -> Config {
    let mut cfg = Config::default();
    cfg.paths.store = Some(built.store.clone());
    cfg.paths.db = Some(built.db.clone());
    cfg.service.journal_dir = journal.map(Path::to_path_buf);
    cfg
}
