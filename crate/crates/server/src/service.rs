//! HTTP API over a loaded database and slide store.

use std::collections::BTreeMap;
use std::future::Future;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use patchsearch::dataset::{encode_png, SlideStore};
use patchsearch::embedder::{embedder_by_name, Embedder};
use patchsearch::index::ShardSet;
use patchsearch::pipeline::load_database;
use patchsearch::query::{query, query_image, random_results, QueryResult, QuerySpec, RegionSpec};
use patchsearch::{LabelSet, Magnification, PatchRecord};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::trace::TraceLayer;

use crate::config::Config;
use crate::study::{
    assign_arms, image_tokens, Arm, ImageRef, Journal, JournalEvent, PlannedQuery, Scale, Score,
    Session, SessionPlan, StudyError, RESULTS_PER_QUERY,
};

/// Error response: a status and a JSON body `{"error": message}`.
#[derive(Debug, thiserror::Error)]
#[error("{status}: {message}")]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<patchsearch::Error> for ApiError {
    fn from(e: patchsearch::Error) -> Self {
        use patchsearch::Error as E;
        let status = match &e {
            E::InvalidArgument(_)
            | E::NonSquareImage { .. }
            | E::RegionSize { .. }
            | E::OutOfBounds { .. }
            | E::DimMismatch { .. }
            | E::Json(_)
            | E::Image(_) => StatusCode::BAD_REQUEST,
            E::UnknownSlide(_) | E::MissingLevel { .. } | E::MissingTile(_) => {
                StatusCode::NOT_FOUND
            }
            E::EmbedderMismatch { .. } | E::UnknownEmbedder(_) => StatusCode::CONFLICT,
            E::NotEnoughPatches { .. } | E::EmptyIndex => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<StudyError> for ApiError {
    fn from(e: StudyError) -> Self {
        let status = match &e {
            StudyError::UnknownSession(_) => StatusCode::NOT_FOUND,
            StudyError::Closed(_) => StatusCode::FORBIDDEN,
            StudyError::Invalid(_) => StatusCode::BAD_REQUEST,
            StudyError::Journal { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

struct SessionSlot {
    session: Session,
    journal: Option<Journal>,
}

/// Everything a request handler can see. The database and store are immutable;
/// each study session sits behind its own lock.
pub struct AppState {
    pub db: ShardSet,
    pub embedder: Arc<dyn Embedder>,
    pub store: SlideStore,
    /// Labels of database patches, when the database has a label sidecar.
    pub records: BTreeMap<u64, PatchRecord>,
    /// Held-out query patches used to draw study plans.
    pub query_pool: Vec<PatchRecord>,
    pub config: Config,
    sessions: RwLock<BTreeMap<String, Arc<Mutex<SessionSlot>>>>,
    session_counter: AtomicU64,
}

impl AppState {
    pub fn new(
        db: ShardSet,
        store: SlideStore,
        records: BTreeMap<u64, PatchRecord>,
        query_pool: Vec<PatchRecord>,
        config: Config,
    ) -> Result<AppState, ApiError> {
        let embedder = embedder_by_name(db.embedder())?;
        let mut sessions = BTreeMap::new();
        if let Some(dir) = &config.service.journal_dir {
            for (id, session) in crate::study::replay_dir(dir)? {
                let journal = Some(Journal::open(dir, &id)?);
                sessions.insert(id, Arc::new(Mutex::new(SessionSlot { session, journal })));
            }
        }
        // Continue numbering after the highest replayed id.
        let counter = sessions
            .keys()
            .filter_map(|id| id.strip_prefix("session-")?.parse::<u64>().ok())
            .max()
            .unwrap_or(0);
        Ok(AppState {
            db,
            embedder,
            store,
            records,
            query_pool,
            config,
            sessions: RwLock::new(sessions),
            session_counter: AtomicU64::new(counter),
        })
    }

    /// Loads the database at `config.paths.db` with its sidecars and opens the store.
    pub fn from_config(config: Config) -> Result<AppState, ApiError> {
        let missing = |what: &str| ApiError::bad_request(format!("config has no paths.{what}"));
        let db_path = config.paths.db.clone().ok_or_else(|| missing("db"))?;
        let store_path = config.paths.store.clone().ok_or_else(|| missing("store"))?;
        let header = patchsearch::index::read_db_header(&db_path)?;
        let embedder = embedder_by_name(&header.embedder)?;
        let loaded = load_database(&db_path, &config.index, embedder.as_ref())?;
        let store = SlideStore::open(&store_path)?;
        AppState::new(loaded.db, store, loaded.records, loaded.queries, config)
    }

    /// Current state of a session, if it exists.
    pub fn session(&self, id: &str) -> Option<Session> {
        let slot = self
            .sessions
            .read()
            .expect("session map")
            .get(id)
            .cloned()?;
        let s = slot.lock().expect("session lock").session.clone();
        Some(s)
    }

    fn slot(&self, id: &str) -> ApiResult<Arc<Mutex<SessionSlot>>> {
        self.sessions
            .read()
            .expect("session map")
            .get(id)
            .cloned()
            .ok_or_else(|| StudyError::UnknownSession(id.to_string()).into())
    }
}

pub type SharedState = Arc<AppState>;

pub fn router(state: SharedState) -> Router {
    let api = Router::new()
        .route("/query", post(post_query))
        .route("/slides", get(get_slides))
        .route("/tile/{slide}/{level}/{tx}/{ty}", get(get_tile))
        .route("/patch/{file}", get(get_patch))
        .route("/study/session", post(post_session))
        .route("/study/next", get(get_next))
        .route("/study/rate", post(post_rate))
        .route("/study/close", post(post_close))
        .route("/study/{session}/image/{token}", get(get_study_image))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new()
        .route("/health", get(health))
        .route("/api/v1/health", get(health))
        .nest("/api/v1", api)
        .layer(TraceLayer::new_for_http())
        .with_state(state)
}

async fn require_token(State(state): State<SharedState>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.config.service.bearer_token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            return ApiError::new(StatusCode::UNAUTHORIZED, "missing or wrong bearer token")
                .into_response();
        }
    }
    next.run(req).await
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> ApiResult<T> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

fn png_response(bytes: Vec<u8>, cache: &'static str) -> Response {
    let mut headers = HeaderMap::new();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("image/png"));
    headers.insert(header::CACHE_CONTROL, HeaderValue::from_static(cache));
    (headers, bytes).into_response()
}

const PUBLIC_CACHE: &str = "public, max-age=3600";
const PRIVATE_CACHE: &str = "private, max-age=3600";

async fn health(State(state): State<SharedState>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "embedder": state.db.embedder(),
        "entries": state.db.len(),
        "patches": state.db.patches().len(),
    }))
}

/// A query result as served: the engine fields plus a thumbnail URL and labels when known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServedResult {
    #[serde(flatten)]
    pub result: QueryResult,
    pub thumbnail_url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<LabelSet>,
}

pub fn thumbnail_url(patch_id: u64) -> String {
    format!("/api/v1/patch/{patch_id}.png")
}

/// Parses a query body; fields it leaves out take the configured defaults.
pub fn parse_query_spec(body: &[u8], config: &Config) -> ApiResult<QuerySpec> {
    let mut v: Value = serde_json::from_slice(body)
        .map_err(|e| ApiError::bad_request(format!("invalid JSON: {e}")))?;
    let obj = v
        .as_object_mut()
        .ok_or_else(|| ApiError::bad_request("query body must be a JSON object"))?;
    obj.entry("k").or_insert(json!(config.query.k));
    obj.entry("oversample_factor")
        .or_insert(json!(config.query.oversample_factor));
    obj.entry("min_separation_px")
        .or_insert(json!(config.query.min_separation_px));
    let spec: QuerySpec = serde_json::from_value(v)
        .map_err(|e| ApiError::bad_request(format!("invalid query spec: {e}")))?;
    spec.validate()?;
    Ok(spec)
}

async fn post_query(State(state): State<SharedState>, body: Bytes) -> ApiResult<Response> {
    let spec = parse_query_spec(&body, &state.config)?;
    blocking(move || {
        let resp = query(
            &state.db,
            Some(&state.store),
            state.embedder.as_ref(),
            &spec,
        )?;
        let served: Vec<ServedResult> = resp
            .results
            .into_iter()
            .map(|r| ServedResult {
                thumbnail_url: thumbnail_url(r.patch_id),
                labels: state.records.get(&r.patch_id).map(|p| p.labels.clone()),
                result: r,
            })
            .collect();
        let mut out = Json(served).into_response();
        out.headers_mut().insert(
            "x-results-exhausted",
            HeaderValue::from_static(if resp.exhausted { "true" } else { "false" }),
        );
        Ok(out)
    })
    .await
}

async fn get_slides(State(state): State<SharedState>) -> Response {
    let mut r = Json(state.store.manifest()).into_response();
    r.headers_mut().insert(
        header::CACHE_CONTROL,
        HeaderValue::from_static(PUBLIC_CACHE),
    );
    r
}

async fn get_tile(
    State(state): State<SharedState>,
    UrlPath((slide, level, tx, ty)): UrlPath<(u32, u32, u32, u32)>,
) -> ApiResult<Response> {
    let s = state.store.slide(slide)?;
    let mag = Magnification::from_level(level)
        .filter(|m| s.has_level(*m))
        .ok_or_else(|| ApiError::not_found(format!("slide {slide} has no level {level}")))?;
    let (cols, rows) = s.tile_grid(mag);
    if tx >= cols || ty >= rows {
        return Err(ApiError::not_found(format!(
            "tile ({tx}, {ty}) outside the {cols}x{rows} grid"
        )));
    }
    let path = state.store.tile_path(slide, level, tx, ty);
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|_| ApiError::not_found(format!("missing tile {}", path.display())))?;
    Ok(png_response(bytes, PUBLIC_CACHE))
}

fn render_patch(state: &AppState, patch_id: u64) -> ApiResult<Vec<u8>> {
    let p = state
        .db
        .patch(patch_id)
        .ok_or_else(|| ApiError::not_found(format!("unknown patch {patch_id}")))?;
    let d = p.magnification.downsample();
    let img = state.store.read_region(
        p.slide_id,
        p.magnification,
        p.x / d,
        p.y / d,
        p.side_px,
        p.side_px,
    )?;
    let mut buf = Vec::new();
    encode_png(&mut buf, &img)?;
    Ok(buf)
}

fn render_query(state: &AppState, spec: &QuerySpec) -> ApiResult<Vec<u8>> {
    let img = query_image(Some(&state.store), spec)?;
    let mut buf = Vec::new();
    encode_png(&mut buf, &img)?;
    Ok(buf)
}

async fn get_patch(
    State(state): State<SharedState>,
    UrlPath(file): UrlPath<String>,
) -> ApiResult<Response> {
    let id: u64 = file
        .strip_suffix(".png")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ApiError::not_found(format!("no such patch image `{file}`")))?;
    let bytes = blocking(move || render_patch(&state, id)).await?;
    Ok(png_response(bytes, PUBLIC_CACHE))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionRequest {
    pub rater_id: String,
    #[serde(default)]
    pub scale: Option<Scale>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Number of queries drawn from the held-out query set.
    #[serde(default)]
    pub n_queries: Option<usize>,
    /// Explicit queries; `k` is forced to four.
    #[serde(default)]
    pub queries: Option<Vec<QuerySpec>>,
}

pub const DEFAULT_STUDY_QUERIES: usize = 20;

fn region_for(p: &PatchRecord) -> QuerySpec {
    QuerySpec::region(RegionSpec {
        slide_id: p.slide_id,
        x: p.x,
        y: p.y,
        width: p.side_px,
        height: p.side_px,
        magnification: p.magnification,
    })
}

/// Draws the query list, assigns arms and fixes every result before the rater sees anything.
pub fn plan_session(
    state: &AppState,
    req: &SessionRequest,
    session_id: String,
    seed: u64,
) -> ApiResult<SessionPlan> {
    if req.rater_id.trim().is_empty() {
        return Err(ApiError::bad_request("rater_id must not be empty"));
    }
    let mut specs = match (&req.queries, req.n_queries) {
        (Some(_), Some(_)) => {
            return Err(ApiError::bad_request(
                "give either queries or n_queries, not both",
            ))
        }
        (Some(q), None) => q.clone(),
        (None, n) => {
            let n = n.unwrap_or(DEFAULT_STUDY_QUERIES);
            if n == 0 || n > state.query_pool.len() {
                return Err(ApiError::bad_request(format!(
                    "n_queries must be in 1..={} (size of the held-out query set)",
                    state.query_pool.len()
                )));
            }
            let mut pool: Vec<&PatchRecord> = state.query_pool.iter().collect();
            pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            pool[..n].iter().map(|p| region_for(p)).collect()
        }
    };
    if specs.is_empty() {
        return Err(ApiError::bad_request("a session needs at least one query"));
    }
    let defaults = &state.config.query;
    for s in &mut specs {
        s.k = RESULTS_PER_QUERY;
        s.oversample_factor = s.oversample_factor.max(defaults.oversample_factor);
        s.validate()?;
    }
    let arms = assign_arms(
        specs.len(),
        state.config.service.study_random_fraction,
        seed,
    );
    let tokens = image_tokens(seed, specs.len() * (RESULTS_PER_QUERY + 1));
    let mut queries = Vec::with_capacity(specs.len());
    for (i, (spec, arm)) in specs.into_iter().zip(arms).enumerate() {
        let results: Vec<u64> = match arm {
            Arm::Engine => query(
                &state.db,
                Some(&state.store),
                state.embedder.as_ref(),
                &spec,
            )?
            .results
            .iter()
            .map(|r| r.patch_id)
            .collect(),
            Arm::Random => random_results(&state.db, &spec, seed.wrapping_add(i as u64))?
                .iter()
                .map(|r| r.patch_id)
                .collect(),
        };
        if results.len() != RESULTS_PER_QUERY {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                format!(
                    "query {i} yields {} results, a study needs {RESULTS_PER_QUERY}",
                    results.len()
                ),
            ));
        }
        let t = &tokens[i * (RESULTS_PER_QUERY + 1)..(i + 1) * (RESULTS_PER_QUERY + 1)];
        queries.push(PlannedQuery {
            spec,
            arm,
            results,
            query_token: t[0].clone(),
            result_tokens: t[1..].to_vec(),
        });
    }
    Ok(SessionPlan {
        session_id,
        rater_id: req.rater_id.clone(),
        scale: req.scale.unwrap_or(state.config.service.study_scale),
        seed,
        queries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub rater_id: String,
    pub scale: Scale,
    pub allowed_scores: Vec<Score>,
    pub total_queries: usize,
    pub results_per_query: usize,
}

async fn post_session(
    State(state): State<SharedState>,
    body: Bytes,
) -> ApiResult<Json<SessionCreated>> {
    let req: SessionRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request(format!("invalid session request: {e}")))?;
    blocking(move || {
        let n = state.session_counter.fetch_add(1, Ordering::SeqCst) + 1;
        let id = format!("session-{n:04}");
        let seed = req
            .seed
            .unwrap_or(state.config.service.study_seed.wrapping_add(n));
        let plan = plan_session(&state, &req, id.clone(), seed)?;
        let created = SessionCreated {
            session_id: id.clone(),
            rater_id: plan.rater_id.clone(),
            scale: plan.scale,
            allowed_scores: plan.scale.allowed(),
            total_queries: plan.queries.len(),
            results_per_query: RESULTS_PER_QUERY,
        };
        let session = Session::new(plan.clone())?;
        let mut journal = match &state.config.service.journal_dir {
            Some(dir) => Some(Journal::open(dir, &id)?),
            None => None,
        };
        if let Some(j) = journal.as_mut() {
            j.append(&JournalEvent::Created { plan })?;
        }
        state
            .sessions
            .write()
            .expect("session map")
            .insert(id, Arc::new(Mutex::new(SessionSlot { session, journal })));
        Ok(Json(created))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct SessionParam {
    session_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyImage {
    pub result_index: usize,
    pub image_url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyQuery {
    pub query_index: usize,
    pub query_image_url: String,
    pub results: Vec<StudyImage>,
}

/// The next item to rate. Carries no arm, patch id, distance or rank information.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextResponse {
    pub session_id: String,
    pub scale: Scale,
    pub allowed_scores: Vec<Score>,
    pub total_queries: usize,
    pub remaining_ratings: usize,
    pub complete: bool,
    pub query: Option<StudyQuery>,
}

fn image_url(session: &str, token: &str) -> String {
    format!("/api/v1/study/{session}/image/{token}")
}

async fn get_next(
    State(state): State<SharedState>,
    Query(p): Query<SessionParam>,
) -> ApiResult<Json<NextResponse>> {
    let slot = state.slot(&p.session_id)?;
    let slot = slot.lock().expect("session lock");
    let s = &slot.session;
    let next = s.next_query()?;
    let query = next.map(|qi| {
        let q = &s.plan.queries[qi];
        StudyQuery {
            query_index: qi,
            query_image_url: image_url(s.id(), &q.query_token),
            results: q
                .result_tokens
                .iter()
                .enumerate()
                .map(|(ri, t)| StudyImage {
                    result_index: ri,
                    image_url: image_url(s.id(), t),
                })
                .collect(),
        }
    });
    Ok(Json(NextResponse {
        session_id: s.id().to_string(),
        scale: s.plan.scale,
        allowed_scores: s.plan.scale.allowed(),
        total_queries: s.plan.queries.len(),
        remaining_ratings: s.remaining(),
        complete: query.is_none(),
        query,
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateRequest {
    pub session_id: String,
    pub query_index: usize,
    pub result_index: usize,
    pub score: Score,
}

async fn post_rate(State(state): State<SharedState>, body: Bytes) -> ApiResult<Json<Value>> {
    let req: RateRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request(format!("invalid rating: {e}")))?;
    let slot = state.slot(&req.session_id)?;
    let mut slot = slot.lock().expect("session lock");
    let event = slot
        .session
        .check_rating(req.query_index, req.result_index, req.score)?;
    if let Some(j) = slot.journal.as_mut() {
        j.append(&event)?;
    }
    slot.session.apply(&event)?;
    Ok(Json(json!({
        "session_id": req.session_id,
        "recorded": true,
        "remaining_ratings": slot.session.remaining(),
    })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CloseRequest {
    session_id: String,
}

async fn post_close(
    State(state): State<SharedState>,
    body: Bytes,
) -> ApiResult<Json<crate::study::Reveal>> {
    let req: CloseRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request(format!("invalid close request: {e}")))?;
    let slot = state.slot(&req.session_id)?;
    let mut slot = slot.lock().expect("session lock");
    if let Some(event) = slot.session.check_close()? {
        if let Some(j) = slot.journal.as_mut() {
            j.append(&event)?;
        }
        slot.session.apply(&event)?;
    }
    Ok(Json(slot.session.reveal()?))
}

enum Owned {
    Query(QuerySpec),
    Patch(u64),
}

async fn get_study_image(
    State(state): State<SharedState>,
    UrlPath((session, token)): UrlPath<(String, String)>,
) -> ApiResult<Response> {
    let target = {
        let slot = state.slot(&session)?;
        let slot = slot.lock().expect("session lock");
        match slot.session.image(&token) {
            Some(ImageRef::Query(spec)) => Owned::Query(spec.clone()),
            Some(ImageRef::Patch(id)) => Owned::Patch(id),
            None => return Err(ApiError::not_found("unknown image")),
        }
    };
    let bytes = blocking(move || match target {
        Owned::Query(spec) => render_query(&state, &spec),
        Owned::Patch(id) => render_patch(&state, id),
    })
    .await?;
    Ok(png_response(bytes, PRIVATE_CACHE))
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve(
    state: SharedState,
    listener: tokio::net::TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

/// Resolves on SIGTERM or Ctrl-C.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutdown signal received, draining requests");
}
