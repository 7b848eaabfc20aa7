//! Score the engine on held-out queries and test it against random retrieval.
//!
//!     cargo run --release --example evaluate_retrieval

use patchsearch::dataset::{generate_synthetic, ClassAxis, SynthSpec};
use patchsearch::embedder::ReferenceEmbedder;
use patchsearch::eval::{
    engine_run, evaluate, random_run, EvalOptions, LabelAxis, MatchMode, RunOptions,
};
use patchsearch::pipeline::{build_database, BuildConfig, SplitConfig};

fn main() -> patchsearch::Result<()> {
    let tmp = tempfile::tempdir().expect("temp dir");
    let spec = SynthSpec {
        n_slides: 4,
        ..SynthSpec::nine_class(3)
    };
    let data = generate_synthetic(&spec, tmp.path().join("slides"))?;
    let cfg = BuildConfig {
        split: Some(SplitConfig {
            axis: ClassAxis::Feature,
            queries_per_class: 10,
            db_per_class: 40,
        }),
        ..BuildConfig::default()
    };
    let built = build_database(&data.store, &data.annotations, &ReferenceEmbedder, &cfg)?;
    let records = built
        .db_records
        .iter()
        .map(|r| (r.patch_id, r.clone()))
        .collect();

    let run_opts = RunOptions {
        k: 5,
        ..RunOptions::default()
    };
    let engine = engine_run(
        &built.db,
        &data.store,
        &ReferenceEmbedder,
        &built.query_records,
        &records,
        &run_opts,
    )?;
    let random = random_run(&built.db, &built.query_records, &records, &run_opts, 11)?;
    let opts = EvalOptions {
        k: 5,
        axis: LabelAxis::Feature,
        mode: MatchMode::Lenient,
    };
    let report = evaluate(&engine, &opts, Some(&random))?;

    println!(
        "{} queries, top-{} score {:.3} (random {:.3})",
        report.queries,
        opts.k,
        report.top_k,
        report.baseline_top_k.unwrap_or(f64::NAN)
    );
    println!(
        "rank-weighted {:.3}, mean match {:.3}",
        report.rank_weighted, report.mean_match
    );
    for (k, s) in &report.top_k_scores {
        print!("top-{k}={s:.2} ");
    }
    println!();
    for t in &report.tests {
        println!(
            "{}: chi2 {:.2}, p {:.3e}",
            t.name, t.result.statistic, t.result.p_value
        );
    }
    println!("\nper-class top-{}:", opts.k);
    for (c, s) in &report.per_class_top_k {
        println!("  {c:<14} {s:.2}");
    }
    print!("\nconfusion matrix:\n{}", report.confusion.to_csv());
    Ok(())
}
