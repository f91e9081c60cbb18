//! JSON session API: collect ratings, train a network, read recommendations.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use immunorec::affinity::agreement_strength;
use immunorec::recommender::recommend_top_n;
use immunorec::{
    AffinityMeasure, AisParams, MeasureKind, MovieId, NetworkError, NetworkState, PersonId,
    Profile, RatingsStore, StopReason, VoteCategory,
};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;

type Network = NetworkState<Arc<RatingsStore>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Collecting,
    Trained,
    Stale,
}

struct Session {
    antigen: Profile,
    status: SessionStatus,
    measure: AffinityMeasure,
    network: Option<Network>,
    created_at: SystemTime,
    updated_at: SystemTime,
}

struct Entry {
    session: Arc<tokio::sync::Mutex<Session>>,
    last_seen: Instant,
}

/// Shared service state: an immutable store and the live sessions.
pub struct AppState {
    store: Arc<RatingsStore>,
    params: AisParams,
    idle_ttl: Duration,
    /// Person id given to every session's antigen; unused by the store.
    session_person: PersonId,
    sessions: Mutex<HashMap<String, Entry>>,
}

impl AppState {
    pub fn new(store: RatingsStore, params: AisParams, idle_ttl: Duration) -> Self {
        let session_person = unused_person_id(&store);
        AppState {
            store: Arc::new(store),
            params,
            idle_ttl,
            session_person,
            sessions: Mutex::new(HashMap::new()),
        }
    }

    pub fn session_count(&self) -> usize {
        let mut sessions = self.sessions.lock().unwrap();
        self.expire(&mut sessions);
        sessions.len()
    }

    fn expire(&self, sessions: &mut HashMap<String, Entry>) {
        let now = Instant::now();
        sessions.retain(|_, e| now.duration_since(e.last_seen) <= self.idle_ttl);
    }

    fn session(&self, id: &str) -> Result<Arc<tokio::sync::Mutex<Session>>, ApiError> {
        let mut sessions = self.sessions.lock().unwrap();
        self.expire(&mut sessions);
        let entry = sessions
            .get_mut(id)
            .ok_or_else(|| ApiError::NotFound(format!("no session {id}")))?;
        entry.last_seen = Instant::now();
        Ok(entry.session.clone())
    }
}

fn unused_person_id(store: &RatingsStore) -> PersonId {
    match store.profiles().map(|p| p.person_id.0).max() {
        None => PersonId(0),
        Some(max) if max < u32::MAX => PersonId(max + 1),
        Some(_) => (0..u32::MAX)
            .map(PersonId)
            .find(|&id| store.profile(id).is_none())
            .expect("store cannot hold every person id"),
    }
}

fn unix_seconds(t: SystemTime) -> u64 {
    t.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    NotFound(String),
    Conflict(String),
    Unprocessable(String),
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, message) = match self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, m),
            ApiError::Unprocessable(m) => (StatusCode::UNPROCESSABLE_ENTITY, m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (status, Json(json!({ "error": message }))).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        match r.status() {
            StatusCode::UNPROCESSABLE_ENTITY => ApiError::Unprocessable(r.body_text()),
            _ => ApiError::BadRequest(r.body_text()),
        }
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        ApiError::BadRequest(r.body_text())
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_view))
        .route("/sessions/{id}/ratings", put(put_rating))
        .route("/sessions/{id}/train", post(train))
        .route("/sessions/{id}/recommendations", get(recommendations))
        .route("/sessions/{id}/antibodies", get(antibodies))
        .route("/movies", get(movies))
        .with_state(state)
}

/// Serves until ctrl-c; idle sessions are swept once a minute.
pub async fn serve(listener: TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    let sweeper = state.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(60));
        loop {
            tick.tick().await;
            sweeper.session_count();
        }
    });
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    measure: Option<String>,
    min_common: Option<usize>,
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    body: Result<Option<Json<CreateSession>>, JsonRejection>,
) -> Result<(StatusCode, Json<serde_json::Value>), ApiError> {
    let req = body?.map(|Json(b)| b).unwrap_or_default();
    let kind: MeasureKind = match req.measure.as_deref() {
        None => MeasureKind::WeightedKappa,
        Some(s) => s.parse().map_err(ApiError::Unprocessable)?,
    };
    let mut measure = AffinityMeasure::new(kind);
    if let Some(m) = req.min_common {
        measure = measure.with_min_common(m);
    }
    let now = SystemTime::now();
    let session = Session {
        antigen: Profile::new(app.session_person),
        status: SessionStatus::Collecting,
        measure,
        network: None,
        created_at: now,
        updated_at: now,
    };
    let id = uuid::Uuid::new_v4().simple().to_string();
    let mut sessions = app.sessions.lock().unwrap();
    app.expire(&mut sessions);
    sessions.insert(
        id.clone(),
        Entry {
            session: Arc::new(tokio::sync::Mutex::new(session)),
            last_seen: Instant::now(),
        },
    );
    Ok((
        StatusCode::CREATED,
        Json(
            json!({ "session_id": id, "measure": kind.short_name(), "status": SessionStatus::Collecting }),
        ),
    ))
}

#[derive(Serialize)]
struct RatingView {
    movie_id: MovieId,
    vote: VoteCategory,
}

async fn session_view(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let session = app.session(&id)?;
    let s = session.lock().await;
    let ratings: Vec<RatingView> = s
        .antigen
        .votes()
        .map(|(movie_id, vote)| RatingView { movie_id, vote })
        .collect();
    Ok(Json(json!({
        "session_id": id,
        "status": s.status,
        "measure": s.measure.kind.short_name(),
        "ratings": ratings,
        "created_at": unix_seconds(s.created_at),
        "updated_at": unix_seconds(s.updated_at),
    })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RatingRequest {
    movie_id: u32,
    /// Category index 1..=6.
    vote: f64,
}

async fn put_rating(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<RatingRequest>, JsonRejection>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let session = app.session(&id)?;
    let Json(req) = body?;
    let vote = (req.vote.fract() == 0.0 && (1.0..=6.0).contains(&req.vote))
        .then(|| VoteCategory::from_index(req.vote as u8))
        .flatten()
        .ok_or_else(|| {
            ApiError::Unprocessable(format!("vote {} is not a category 1..6", req.vote))
        })?;
    let movie = MovieId(req.movie_id);
    if !app.store.knows_movie(movie) {
        return Err(ApiError::NotFound(format!("no movie {movie}")));
    }

    let mut s = session.lock().await;
    let previous = s.antigen.set(movie, vote);
    if s.status == SessionStatus::Trained {
        s.status = SessionStatus::Stale;
    }
    s.updated_at = SystemTime::now();
    Ok(Json(json!({
        "movie_id": movie,
        "vote": vote,
        "previous": previous,
        "status": s.status,
        "rating_count": s.antigen.len(),
    })))
}

#[derive(Serialize)]
struct TrainResponse {
    pool_size: usize,
    steps: usize,
    stop_reason: &'static str,
    deletions: usize,
    status: SessionStatus,
}

async fn train(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<TrainResponse>, ApiError> {
    let session = app.session(&id)?;
    // Held across training so concurrent requests on this session queue behind it.
    let mut s = session.lock_owned().await;
    let antigen = s.antigen.clone();
    let measure = s.measure;
    let store = app.store.clone();
    let params = app.params.clone();
    let trained =
        tokio::task::spawn_blocking(move || -> Result<(Network, StopReason), NetworkError> {
            let mut network = NetworkState::init(antigen, store, measure, params)?;
            let reason = network.run_to_convergence();
            Ok((network, reason))
        })
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?;

    let (network, reason) = match trained {
        Ok(t) => t,
        Err(e @ (NetworkError::IneligibleAntigen { .. } | NetworkError::NoEligibleCandidates)) => {
            return Err(ApiError::Unprocessable(e.to_string()))
        }
        Err(e) => return Err(ApiError::Internal(e.to_string())),
    };
    let response = TrainResponse {
        pool_size: network.pool().len(),
        steps: network.steps_taken(),
        stop_reason: reason.as_str(),
        deletions: network.deletions(),
        status: SessionStatus::Trained,
    };
    s.network = Some(network);
    s.status = SessionStatus::Trained;
    s.updated_at = SystemTime::now();
    Ok(Json(response))
}

fn require_trained(s: &Session) -> Result<&Network, ApiError> {
    match (s.status, &s.network) {
        (SessionStatus::Trained, Some(n)) => Ok(n),
        (SessionStatus::Stale, _) => Err(ApiError::Conflict(
            "ratings changed since training; train again".into(),
        )),
        _ => Err(ApiError::Conflict("session has not been trained".into())),
    }
}

#[derive(Debug, Deserialize)]
struct TopQuery {
    n: Option<usize>,
}

#[derive(Serialize)]
struct RecommendationView<'a> {
    movie_id: MovieId,
    #[serde(skip_serializing_if = "Option::is_none")]
    title: Option<&'a str>,
    score: f64,
    rounded: VoteCategory,
    support: usize,
}

async fn recommendations(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    query: Result<Query<TopQuery>, QueryRejection>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let Query(q) = query?;
    let n = q.n.unwrap_or(10);
    if n == 0 {
        return Err(ApiError::Unprocessable("n must be at least 1".into()));
    }
    let session = app.session(&id)?;
    let s = session.lock().await;
    let network = require_trained(&s)?;
    let predictions = recommend_top_n(network, n, true);
    let views: Vec<RecommendationView> = predictions
        .iter()
        .map(|p| RecommendationView {
            movie_id: p.movie_id,
            title: app.store.title(p.movie_id),
            score: p.score,
            rounded: p.rounded,
            support: p.support,
        })
        .collect();
    Ok(Json(json!(views)))
}

#[derive(Serialize)]
struct AntibodyView {
    person_id: PersonId,
    concentration: f64,
    affinity: f64,
    band: &'static str,
}

async fn antibodies(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<Vec<AntibodyView>>, ApiError> {
    let session = app.session(&id)?;
    let s = session.lock().await;
    let network = require_trained(&s)?;
    let mut views: Vec<AntibodyView> = network
        .pool()
        .iter()
        .map(|a| AntibodyView {
            person_id: a.person_id,
            concentration: a.concentration,
            affinity: a.affinity,
            band: agreement_strength(a.affinity, network.measure().kind).label(),
        })
        .collect();
    views.sort_by(|a, b| {
        b.concentration
            .total_cmp(&a.concentration)
            .then(a.person_id.cmp(&b.person_id))
    });
    Ok(Json(views))
}

#[derive(Debug, Deserialize)]
struct MovieQuery {
    query: Option<String>,
    limit: Option<usize>,
}

#[derive(Serialize)]
struct MovieView<'a> {
    movie_id: MovieId,
    title: Option<&'a str>,
}

async fn movies(
    State(app): State<Arc<AppState>>,
    query: Result<Query<MovieQuery>, QueryRejection>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let Query(q) = query?;
    let needle = q.query.unwrap_or_default().to_lowercase();
    let limit = q.limit.unwrap_or(50);
    let store = &app.store;
    let views: Vec<MovieView> = store
        .known_movies()
        .into_iter()
        .map(|movie_id| MovieView {
            movie_id,
            title: store.title(movie_id),
        })
        .filter(|m| match m.title {
            Some(t) => t.to_lowercase().contains(&needle),
            None => m.movie_id.to_string().contains(&needle),
        })
        .take(limit)
        .collect();
    Ok(Json(json!(views)))
}
