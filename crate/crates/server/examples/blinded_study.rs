//! A blinded rating study run in-process over the HTTP API. A simulated rater
//! sees only opaque image URLs and scores each result; closing the session
//! reveals which queries were served by the engine and which at random.
//!
//!     cargo run --release -p patchsearch-server --example blinded_study

use std::sync::Arc;

use axum::body::Body;
use axum::http::Request;
use http_body_util::BodyExt;
use patchsearch::dataset::{generate_synthetic, ClassAxis, SynthSpec};
use patchsearch::embedder::ReferenceEmbedder;
use patchsearch::pipeline::{build_database, write_build_output, BuildConfig, SplitConfig};
use patchsearch_server::service::NextResponse;
use patchsearch_server::study::Reveal;
use patchsearch_server::{router, AppState, Config};
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> Vec<u8> {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(|b| Body::from(b.to_string())).unwrap_or_default())
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert!(
        resp.status().is_success(),
        "{method} {uri}: {}",
        resp.status()
    );
    resp.into_body()
        .collect()
        .await
        .unwrap()
        .to_bytes()
        .to_vec()
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let spec = SynthSpec {
        n_slides: 3,
        ..SynthSpec::nine_class(17)
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
    let db_path = tmp.path().join("study.db");
    write_build_output(&built, &db_path)?;

    let mut config = Config::default();
    config.paths.db = Some(db_path);
    config.paths.store = Some(tmp.path().join("slides"));
    config.service.study_random_fraction = 0.5;
    config.service.journal_dir = Some(tmp.path().join("journal"));
    let state = Arc::new(AppState::from_config(config)?);
    let app = router(state.clone());

    let created: Value = serde_json::from_slice(
        &call(
            &app,
            "POST",
            "/api/v1/study/session",
            Some(json!({"rater_id": "demo", "n_queries": 12, "seed": 4})),
        )
        .await,
    )?;
    let id = created["session_id"].as_str().unwrap().to_string();
    println!(
        "session {id}: {} queries, scores {}",
        created["total_queries"], created["allowed_scores"]
    );

    // The simulated rater compares mean colours of the images it is shown.
    let mean = |png: &[u8]| -> [f64; 3] {
        let img = image::load_from_memory(png).unwrap().to_rgb8();
        let mut s = [0.0; 3];
        for p in img.pixels() {
            for c in 0..3 {
                s[c] += p[c] as f64;
            }
        }
        s.map(|v| v / (img.width() * img.height()) as f64)
    };
    loop {
        let next: NextResponse = serde_json::from_slice(
            &call(
                &app,
                "GET",
                &format!("/api/v1/study/next?session_id={id}"),
                None,
            )
            .await,
        )?;
        let Some(q) = next.query else { break };
        let qm = mean(&call(&app, "GET", &q.query_image_url, None).await);
        for r in &q.results {
            let rm = mean(&call(&app, "GET", &r.image_url, None).await);
            let d: f64 = qm.iter().zip(&rm).map(|(a, b)| (a - b).abs()).sum();
            let score = if d < 30.0 { 100 } else { 0 };
            let body = json!({"session_id": id, "query_index": q.query_index, "result_index": r.result_index, "score": score});
            call(&app, "POST", "/api/v1/study/rate", Some(body)).await;
        }
    }

    let reveal: Reveal = serde_json::from_slice(
        &call(
            &app,
            "POST",
            "/api/v1/study/close",
            Some(json!({"session_id": id})),
        )
        .await,
    )?;
    for (arm, s) in &reveal.aggregates {
        println!(
            "{arm:?}: {} queries, {} ratings, mean score {:.1}, full marks {}",
            s.queries,
            s.ratings,
            s.mean_score.unwrap_or(f64::NAN),
            s.full_marks
        );
    }
    if let Some(t) = &reveal.full_marks_engine_vs_random {
        println!(
            "full marks, engine vs random: chi2 {:.2}, p {:.3e}",
            t.statistic, t.p_value
        );
    }
    Ok(())
}
