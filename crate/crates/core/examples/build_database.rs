//! Synthetic slides in, a saved sharded database out.
//!
//!     cargo run --release --example build_database -- [OUT_DIR]

use patchsearch::dataset::{generate_synthetic, ClassAxis, SynthSpec};
use patchsearch::embedder::ReferenceEmbedder;
use patchsearch::index::IndexParams;
use patchsearch::pipeline::{
    build_database, load_database, write_build_output, BuildConfig, SplitConfig,
};
use patchsearch::Magnification;

fn main() -> patchsearch::Result<()> {
    let tmp = tempfile::tempdir().expect("temp dir");
    let out = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| tmp.path().to_path_buf());
    let spec = SynthSpec {
        n_slides: 3,
        ..SynthSpec::nine_class(5)
    };
    let data = generate_synthetic(&spec, out.join("slides"))?;

    let cfg = BuildConfig {
        magnifications: vec![Magnification::X40, Magnification::X20],
        split: Some(SplitConfig {
            axis: ClassAxis::Feature,
            queries_per_class: 4,
            db_per_class: 30,
        }),
        index: IndexParams {
            n_shards: 3,
            ..IndexParams::default()
        },
        seed: 5,
        ..BuildConfig::default()
    };
    let built = build_database(&data.store, &data.annotations, &ReferenceEmbedder, &cfg)?;
    let paths = write_build_output(&built, out.join("db/example.db"))?;
    let r = &built.report;
    println!(
        "{} patches extracted, {} in the database ({} entries with orientations), {} held out as queries",
        r.extracted_patches, r.db_patches, r.entries, r.query_patches
    );
    for (mag, n) in &r.db_per_magnification {
        println!("  {mag}: {n} patches");
    }
    for s in &r.shards {
        println!("  shard {:?}", s);
    }
    println!(
        "database file: {} ({} bytes)",
        paths.db.display(),
        std::fs::metadata(&paths.db).map(|m| m.len()).unwrap_or(0)
    );

    let loaded = load_database(&paths.db, &cfg.index, &ReferenceEmbedder)?;
    assert_eq!(loaded.db.len(), r.entries);
    println!(
        "reloaded: {} entries, {} labelled records, {} queries",
        loaded.db.len(),
        loaded.records.len(),
        loaded.queries.len()
    );
    Ok(())
}
