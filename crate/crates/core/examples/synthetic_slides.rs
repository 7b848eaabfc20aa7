//! Generate a small synthetic slide store and look at what was written.
//!
//!     cargo run --release --example synthetic_slides -- [OUT_DIR]

use patchsearch::dataset::{
    extract_patches, generate_synthetic, label_inventory, ExtractOptions, SynthSpec,
};
use patchsearch::Magnification;

fn main() -> patchsearch::Result<()> {
    let tmp = tempfile::tempdir().expect("temp dir");
    let out = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| tmp.path().join("slides"));
    let spec = SynthSpec {
        n_slides: 2,
        ..SynthSpec::nine_class(1)
    };
    let data = generate_synthetic(&spec, &out)?;
    println!("store at {}", out.display());
    for s in data.store.slides() {
        let levels: Vec<String> = s.levels.iter().map(|m| m.to_string()).collect();
        println!(
            "slide {} `{}`: {}x{} px, tiles of {}, levels {}",
            s.slide_id,
            s.name,
            s.base_width_px,
            s.base_height_px,
            s.tile_size_px,
            levels.join(",")
        );
    }
    println!("{} annotated regions", data.annotations.len());

    for mag in [Magnification::X40, Magnification::X10] {
        let patches = extract_patches(
            &data.store,
            &data.annotations,
            &[mag],
            &ExtractOptions::default(),
        )?;
        println!("\n{mag}: {} patches", patches.len());
        for (kind, labels) in label_inventory(&patches) {
            println!(
                "  {kind:?}: {}",
                labels.into_iter().collect::<Vec<_>>().join(", ")
            );
        }
    }
    Ok(())
}
