mod common;

use std::path::Path;
use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use patchsearch::PatchRecord;
use patchsearch_server::service::NextResponse;
use patchsearch_server::{router, AppState, Config};
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;

use common::{build_small, config_for, Built};

fn fixture() -> &'static (TempDir, Built) {
    static F: OnceLock<(TempDir, Built)> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let built = build_small(dir.path());
        (dir, built)
    })
}

fn state_with(f: impl FnOnce(&mut Config)) -> Arc<AppState> {
    let mut cfg = config_for(&fixture().1, None);
    f(&mut cfg);
    Arc::new(AppState::from_config(cfg).expect("state"))
}

fn app(state: &Arc<AppState>) -> Router {
    router(state.clone())
}

struct Reply {
    status: StatusCode,
    headers: axum::http::HeaderMap,
    body: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.body)
            .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.body)))
    }
}

async fn send(app: Router, req: Request<Body>) -> Reply {
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let body = resp
        .into_body()
        .collect()
        .await
        .unwrap()
        .to_bytes()
        .to_vec();
    Reply {
        status,
        headers,
        body,
    }
}

async fn get(app: Router, uri: &str) -> Reply {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post(app: Router, uri: &str, body: Value) -> Reply {
    let req = Request::post(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    send(app, req).await
}

fn region_json(p: &PatchRecord) -> Value {
    json!({"region": {
        "slide_id": p.slide_id, "x": p.x, "y": p.y,
        "width": p.side_px, "height": p.side_px, "magnification": p.magnification,
    }})
}

#[tokio::test]
async fn health_reports_database() {
    let state = state_with(|_| {});
    for uri in ["/health", "/api/v1/health"] {
        let r = get(app(&state), uri).await;
        assert_eq!(r.status, StatusCode::OK);
        let v = r.json();
        assert_eq!(v["status"], "ok");
        assert_eq!(v["entries"].as_u64().unwrap() as usize, state.db.len());
    }
}

#[tokio::test]
async fn query_returns_at_most_k_labelled_results() {
    let state = state_with(|_| {});
    let q = &state.query_pool[0];
    let r = post(
        app(&state),
        "/api/v1/query",
        json!({"source": region_json(q), "k": 5}),
    )
    .await;
    assert_eq!(
        r.status,
        StatusCode::OK,
        "{}",
        String::from_utf8_lossy(&r.body)
    );
    assert!(r.headers.contains_key("x-results-exhausted"));
    let results = r.json();
    let results = results.as_array().unwrap();
    assert!(!results.is_empty() && results.len() <= 5);
    for (i, res) in results.iter().enumerate() {
        assert_eq!(res["rank"].as_u64().unwrap() as usize, i + 1);
        let id = res["patch_id"].as_u64().unwrap();
        assert_eq!(res["thumbnail_url"], format!("/api/v1/patch/{id}.png"));
        assert!(res["labels"].is_object());
        assert!(res["distance"].as_f64().unwrap() >= 0.0);
    }
}

#[tokio::test]
async fn query_defaults_come_from_config() {
    let state = state_with(|c| c.query.k = 2);
    let q = &state.query_pool[1];
    let r = post(
        app(&state),
        "/api/v1/query",
        json!({"source": region_json(q)}),
    )
    .await;
    assert_eq!(r.status, StatusCode::OK);
    assert!(r.json().as_array().unwrap().len() <= 2);
}

#[tokio::test]
async fn query_errors_map_to_statuses() {
    let state = state_with(|_| {});
    let q = state.query_pool[0].clone();
    let mut small = region_json(&q);
    small["region"]["width"] = json!(150);
    small["region"]["height"] = json!(150);
    let r = post(app(&state), "/api/v1/query", json!({"source": small})).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    assert!(r.json()["error"].is_string());

    let mut missing = region_json(&q);
    missing["region"]["slide_id"] = json!(999);
    let r = post(app(&state), "/api/v1/query", json!({"source": missing})).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);

    let r = post(
        app(&state),
        "/api/v1/query",
        json!({"source": region_json(&q), "embedder": "other-v9"}),
    )
    .await;
    assert_eq!(r.status, StatusCode::CONFLICT);

    let r = post(
        app(&state),
        "/api/v1/query",
        json!({"source": region_json(&q), "k": 0}),
    )
    .await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);

    let r = post(
        app(&state),
        "/api/v1/query",
        json!({"source": region_json(&q), "colour": 1}),
    )
    .await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);

    let req = Request::post("/api/v1/query")
        .body(Body::from("{not json"))
        .unwrap();
    assert_eq!(send(app(&state), req).await.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn pixel_queries_are_accepted() {
    let state = state_with(|_| {});
    let q = &state.query_pool[0];
    let img = state
        .store
        .read_region(q.slide_id, q.magnification, q.x, q.y, q.side_px, q.side_px)
        .unwrap();
    let mut png = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)
        .unwrap();
    use base64::Engine;
    let body = json!({"source": {"png_base64": base64::engine::general_purpose::STANDARD.encode(&png)}, "k": 3, "exclude_self": false});
    let r = post(app(&state), "/api/v1/query", body).await;
    assert_eq!(
        r.status,
        StatusCode::OK,
        "{}",
        String::from_utf8_lossy(&r.body)
    );
    let results = r.json();
    // The query patch itself sits in neither set, but its own class should lead.
    let first = results[0]["labels"]["histologic_features"].clone();
    assert_eq!(
        first,
        serde_json::to_value(&q.labels.histologic_features).unwrap()
    );
}

#[tokio::test]
async fn slides_tiles_and_patches() {
    let state = state_with(|_| {});
    let r = get(app(&state), "/api/v1/slides").await;
    assert_eq!(r.status, StatusCode::OK);
    let slides = r.json();
    assert_eq!(slides["slides"].as_array().unwrap().len(), 3);
    let sid = slides["slides"][0]["slide_id"].as_u64().unwrap() as u32;

    for level in [0u32, 1] {
        let r = get(app(&state), &format!("/api/v1/tile/{sid}/{level}/1/0")).await;
        assert_eq!(r.status, StatusCode::OK);
        assert_eq!(r.headers[header::CONTENT_TYPE], "image/png");
        assert_eq!(
            r.body,
            std::fs::read(state.store.tile_path(sid, level, 1, 0)).unwrap()
        );
    }
    assert_eq!(
        get(app(&state), &format!("/api/v1/tile/{sid}/3/0/0"))
            .await
            .status,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        get(app(&state), &format!("/api/v1/tile/{sid}/0/99/0"))
            .await
            .status,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        get(app(&state), "/api/v1/tile/77/0/0/0").await.status,
        StatusCode::NOT_FOUND
    );

    let id = *state.records.keys().next().unwrap();
    let r = get(app(&state), &format!("/api/v1/patch/{id}.png")).await;
    assert_eq!(r.status, StatusCode::OK);
    let img = image::load_from_memory(&r.body).unwrap().to_rgb8();
    let p = &state.records[&id];
    assert_eq!(img.dimensions(), (p.side_px, p.side_px));
    let direct = state
        .store
        .read_region(p.slide_id, p.magnification, p.x, p.y, p.side_px, p.side_px)
        .unwrap();
    assert_eq!(img, direct);
    assert_eq!(
        get(app(&state), "/api/v1/patch/123456789.png").await.status,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        get(app(&state), "/api/v1/patch/abc").await.status,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn bearer_token_guards_api_but_not_health() {
    let state = state_with(|c| c.service.bearer_token = Some("s3cret".into()));
    assert_eq!(get(app(&state), "/health").await.status, StatusCode::OK);
    assert_eq!(
        get(app(&state), "/api/v1/slides").await.status,
        StatusCode::UNAUTHORIZED
    );
    let wrong = Request::get("/api/v1/slides")
        .header(header::AUTHORIZATION, "Bearer nope")
        .body(Body::empty())
        .unwrap();
    assert_eq!(
        send(app(&state), wrong).await.status,
        StatusCode::UNAUTHORIZED
    );
    let right = Request::get("/api/v1/slides")
        .header(header::AUTHORIZATION, "Bearer s3cret")
        .body(Body::empty())
        .unwrap();
    assert_eq!(send(app(&state), right).await.status, StatusCode::OK);
}

async fn new_session(state: &Arc<AppState>, body: Value) -> String {
    let r = post(app(state), "/api/v1/study/session", body).await;
    assert_eq!(
        r.status,
        StatusCode::OK,
        "{}",
        String::from_utf8_lossy(&r.body)
    );
    r.json()["session_id"].as_str().unwrap().to_string()
}

async fn next(state: &Arc<AppState>, id: &str) -> NextResponse {
    let r = get(app(state), &format!("/api/v1/study/next?session_id={id}")).await;
    assert_eq!(r.status, StatusCode::OK);
    serde_json::from_slice(&r.body).unwrap()
}

async fn rate(state: &Arc<AppState>, id: &str, q: usize, r: usize, score: Value) -> StatusCode {
    post(
        app(state),
        "/api/v1/study/rate",
        json!({"session_id": id, "query_index": q, "result_index": r, "score": score}),
    )
    .await
    .status
}

#[tokio::test]
async fn study_session_flow() {
    let state = state_with(|_| {});
    let id = new_session(
        &state,
        json!({"rater_id": "r1", "n_queries": 3, "scale": "organ"}),
    )
    .await;
    let n = next(&state, &id).await;
    assert_eq!(n.total_queries, 3);
    assert_eq!(n.remaining_ratings, 12);
    let q = n.query.unwrap();
    assert_eq!(q.results.len(), 4);

    for img in std::iter::once(&q.query_image_url).chain(q.results.iter().map(|r| &r.image_url)) {
        let r = get(app(&state), img).await;
        assert_eq!(r.status, StatusCode::OK);
        assert!(image::load_from_memory(&r.body).is_ok());
    }
    assert_eq!(
        get(
            app(&state),
            &format!("/api/v1/study/{id}/image/0000000000000000")
        )
        .await
        .status,
        StatusCode::NOT_FOUND
    );

    assert_eq!(
        rate(&state, &id, q.query_index, 0, json!("unclear")).await,
        StatusCode::OK
    );
    assert_eq!(
        rate(&state, &id, q.query_index, 1, json!(100)).await,
        StatusCode::OK
    );
    assert_eq!(
        rate(&state, &id, q.query_index, 2, json!(50)).await,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(
        rate(&state, &id, q.query_index, 4, json!(0)).await,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(
        rate(&state, &id, 9, 0, json!(0)).await,
        StatusCode::BAD_REQUEST
    );
    assert_eq!(
        rate(&state, "session-9999", 0, 0, json!(0)).await,
        StatusCode::NOT_FOUND
    );
    assert_eq!(next(&state, &id).await.remaining_ratings, 10);

    let r = post(
        app(&state),
        "/api/v1/study/close",
        json!({"session_id": id}),
    )
    .await;
    assert_eq!(r.status, StatusCode::OK);
    let reveal = r.json();
    assert_eq!(reveal["queries"].as_array().unwrap().len(), 3);
    for rq in reveal["queries"].as_array().unwrap() {
        assert!(rq["arm"] == "engine" || rq["arm"] == "random");
        assert_eq!(rq["results"].as_array().unwrap().len(), 4);
    }
    // Closing twice returns the same reveal; rating afterwards is refused.
    let again = post(
        app(&state),
        "/api/v1/study/close",
        json!({"session_id": id}),
    )
    .await;
    assert_eq!(again.json(), reveal);
    assert_eq!(
        rate(&state, &id, q.query_index, 3, json!(0)).await,
        StatusCode::FORBIDDEN
    );
}

#[tokio::test]
async fn study_requests_are_validated() {
    let state = state_with(|_| {});
    let bad = [
        json!({"rater_id": ""}),
        json!({"rater_id": "r", "n_queries": 0}),
        json!({"rater_id": "r", "n_queries": 100000}),
        json!({"rater_id": "r", "scale": "stars"}),
        json!({"rater_id": "r", "arm": "engine"}),
    ];
    for body in bad {
        let r = post(app(&state), "/api/v1/study/session", body.clone()).await;
        assert_eq!(r.status, StatusCode::BAD_REQUEST, "{body}");
    }
    assert_eq!(
        get(app(&state), "/api/v1/study/next?session_id=nope")
            .await
            .status,
        StatusCode::NOT_FOUND
    );
}

/// Replaces the token part of study image URLs so two responses can be compared.
fn mask_tokens(mut v: NextResponse) -> NextResponse {
    v.session_id = String::new();
    if let Some(q) = v.query.as_mut() {
        q.query_index = 0;
        q.query_image_url = "Q".into();
        for r in &mut q.results {
            r.image_url = "R".into();
        }
    }
    v
}

#[tokio::test]
async fn engine_and_random_arms_look_identical_to_the_rater() {
    let engine = state_with(|c| c.service.study_random_fraction = 0.0);
    let random = state_with(|c| c.service.study_random_fraction = 1.0);
    let body = json!({"rater_id": "blind", "n_queries": 2, "seed": 3});
    let a = new_session(&engine, body.clone()).await;
    let b = new_session(&random, body).await;
    let arms = |s: &Arc<AppState>, id: &str| -> Vec<String> {
        let p = s.session(id).unwrap().plan;
        p.queries.iter().map(|q| format!("{:?}", q.arm)).collect()
    };
    assert_eq!(arms(&engine, &a), ["Engine", "Engine"]);
    assert_eq!(arms(&random, &b), ["Random", "Random"]);

    let (na, nb) = (next(&engine, &a).await, next(&random, &b).await);
    let raw = serde_json::to_string(&na).unwrap() + &serde_json::to_string(&nb).unwrap();
    for s in [&engine, &random] {
        for id in s.records.keys() {
            assert!(!raw.contains(&format!("/{id}.png")));
        }
    }
    for word in ["arm", "engine", "random", "distance", "rank", "patch"] {
        assert!(!raw.contains(word), "`{word}` leaks into the rating view");
    }
    assert_eq!(mask_tokens(na.clone()), mask_tokens(nb.clone()));

    let (qa, qb) = (na.query.unwrap(), nb.query.unwrap());
    for (ia, ib) in qa.results.iter().zip(&qb.results) {
        let (ra, rb) = (
            get(app(&engine), &ia.image_url).await,
            get(app(&random), &ib.image_url).await,
        );
        assert_eq!(ra.status, rb.status);
        let mut ha: Vec<_> = ra
            .headers
            .iter()
            .filter(|(k, _)| *k != header::CONTENT_LENGTH)
            .collect();
        let mut hb: Vec<_> = rb
            .headers
            .iter()
            .filter(|(k, _)| *k != header::CONTENT_LENGTH)
            .collect();
        ha.sort_by_key(|(k, _)| k.as_str().to_string());
        hb.sort_by_key(|(k, _)| k.as_str().to_string());
        assert_eq!(ha, hb);
        let (da, db) = (
            image::load_from_memory(&ra.body).unwrap(),
            image::load_from_memory(&rb.body).unwrap(),
        );
        assert_eq!((da.width(), da.height()), (db.width(), db.height()));
    }
}

fn journal_state(dir: &Path) -> Arc<AppState> {
    Arc::new(AppState::from_config(config_for(&fixture().1, Some(dir))).expect("state"))
}

#[tokio::test]
async fn journal_replay_restores_sessions() {
    let jdir = tempfile::tempdir().unwrap();
    let state = journal_state(jdir.path());
    let open = new_session(
        &state,
        json!({"rater_id": "a", "n_queries": 2, "scale": "rubric"}),
    )
    .await;
    let closed = new_session(&state, json!({"rater_id": "b", "n_queries": 1})).await;
    let q = next(&state, &open).await.query.unwrap().query_index;
    assert_eq!(rate(&state, &open, q, 0, json!(75)).await, StatusCode::OK);
    assert_eq!(rate(&state, &open, q, 0, json!(25)).await, StatusCode::OK);
    assert_eq!(rate(&state, &open, q, 3, json!(100)).await, StatusCode::OK);
    assert_eq!(
        post(
            app(&state),
            "/api/v1/study/close",
            json!({"session_id": closed})
        )
        .await
        .status,
        StatusCode::OK
    );

    let restored = journal_state(jdir.path());
    for id in [&open, &closed] {
        assert_eq!(restored.session(id), state.session(id));
    }
    let s = restored.session(&open).unwrap();
    assert_eq!(s.ratings.len(), 2);
    assert_eq!(
        rate(&restored, &closed, 0, 0, json!(0)).await,
        StatusCode::FORBIDDEN
    );
    // Numbering continues after the replayed sessions.
    let third = new_session(&restored, json!({"rater_id": "c", "n_queries": 1})).await;
    assert!(third != open && third != closed);
    assert_eq!(third, "session-0003");
}
