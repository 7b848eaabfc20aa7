//! Query a database with a slide region and print the ranked matches.
//!
//!     cargo run --release --example region_query

use patchsearch::dataset::{generate_synthetic, ClassAxis, SynthSpec};
use patchsearch::embedder::ReferenceEmbedder;
use patchsearch::pipeline::{build_database, BuildConfig, SplitConfig};
use patchsearch::query::{query, QuerySpec, RegionSpec};

fn main() -> patchsearch::Result<()> {
    let tmp = tempfile::tempdir().expect("temp dir");
    let spec = SynthSpec {
        n_slides: 3,
        ..SynthSpec::nine_class(8)
    };
    let data = generate_synthetic(&spec, tmp.path().join("slides"))?;
    let cfg = BuildConfig {
        split: Some(SplitConfig {
            axis: ClassAxis::Feature,
            queries_per_class: 2,
            db_per_class: 40,
        }),
        ..BuildConfig::default()
    };
    let built = build_database(&data.store, &data.annotations, &ReferenceEmbedder, &cfg)?;
    let labels = |id: u64| {
        built
            .db_records
            .iter()
            .find(|r| r.patch_id == id)
            .map(|r| {
                r.labels
                    .histologic_features
                    .iter()
                    .cloned()
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .unwrap_or_default()
    };

    for q in built.query_records.iter().step_by(5).take(3) {
        let spec = QuerySpec {
            k: 5,
            ..QuerySpec::region(RegionSpec {
                slide_id: q.slide_id,
                x: q.x,
                y: q.y,
                width: q.side_px,
                height: q.side_px,
                magnification: q.magnification,
            })
        };
        let resp = query(&built.db, Some(&data.store), &ReferenceEmbedder, &spec)?;
        let want: Vec<_> = q.labels.histologic_features.iter().cloned().collect();
        println!(
            "\nquery slide {} ({}, {}) labelled {}",
            q.slide_id,
            q.x,
            q.y,
            want.join(",")
        );
        for r in &resp.results {
            println!(
                "  #{} patch {:>5} slide {} ({:>5}, {:>5}) {:>6} d={:.4} {}",
                r.rank,
                r.patch_id,
                r.slide_id,
                r.x,
                r.y,
                r.best_orientation
                    .map(|o| o.to_string())
                    .unwrap_or_default(),
                r.distance.unwrap_or(f64::NAN),
                labels(r.patch_id)
            );
        }
        if resp.exhausted {
            println!("  (database exhausted before k results survived filtering)");
        }
    }
    Ok(())
}
