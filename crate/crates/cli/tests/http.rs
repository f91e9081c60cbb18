use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use immunorec::ratings::{generate_synthetic, SyntheticConfig};
use immunorec::{AisParams, MovieId, PersonId, RatingsStore};
use immunorec_cli::server::{router, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

/// Noise-free clusters of 10; movie titles come from the generator.
fn clone_store() -> RatingsStore {
    generate_synthetic(&SyntheticConfig {
        cluster_count: 4,
        users_per_cluster: 10,
        movies: 40,
        votes_per_user: 30,
        noise_categories: 0,
        seed: 19,
    })
    .unwrap()
}

fn app_with(store: RatingsStore, ttl: Duration) -> (Router, Arc<AppState>) {
    let state = Arc::new(AppState::new(store, AisParams::default(), ttl));
    (router(state.clone()), state)
}

fn app() -> Router {
    app_with(clone_store(), Duration::from_secs(3600)).0
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let builder = Request::builder().method(method).uri(uri);
    let request = match body {
        Some(b) => builder
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => builder.body(Body::empty()).unwrap(),
    };
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes)
            .unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

async fn new_session(app: &Router, body: Option<Value>) -> String {
    let (status, v) = call(app, "POST", "/sessions", body).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    v["session_id"].as_str().unwrap().to_string()
}

async fn rate(app: &Router, id: &str, movie: u32, vote: Value) -> (StatusCode, Value) {
    call(
        app,
        "PUT",
        &format!("/sessions/{id}/ratings"),
        Some(json!({ "movie_id": movie, "vote": vote })),
    )
    .await
}

/// Copies the first `count` votes of `person` into the session.
async fn rate_like(app: &Router, id: &str, store: &RatingsStore, person: u32, count: usize) {
    for (movie, vote) in store.profile(PersonId(person)).unwrap().votes().take(count) {
        let (status, v) = rate(app, id, movie.0, json!(vote.index())).await;
        assert_eq!(status, StatusCode::OK, "{v}");
    }
}

#[tokio::test]
async fn create_session_defaults_and_options() {
    let app = app();
    let (status, v) = call(&app, "POST", "/sessions", None).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(v["measure"], "kappa");
    assert_eq!(v["status"], "collecting");

    let (_, v) = call(&app, "POST", "/sessions", Some(json!({ "measure": "tau" }))).await;
    assert_eq!(v["measure"], "tau");

    let (status, _) = call(
        &app,
        "POST",
        "/sessions",
        Some(json!({ "measure": "pearson" })),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn rating_validation() {
    let app = app();
    let id = new_session(&app, None).await;
    for bad in [json!(0), json!(7), json!(2.5), json!(-1)] {
        let (status, v) = rate(&app, &id, 1, bad.clone()).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{bad}: {v}");
        assert!(v["error"].is_string());
    }
    let (status, _) = call(
        &app,
        "PUT",
        &format!("/sessions/{id}/ratings"),
        Some(json!({ "movie_id": 1 })),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = rate(&app, &id, 4000, json!(3)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = rate(&app, "no-such-session", 1, json!(3)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, v) = rate(&app, &id, 1, json!(3)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["previous"], Value::Null);
    assert_eq!(v["rating_count"], 1);
    let (_, v) = rate(&app, &id, 1, json!(6)).await;
    assert_eq!(v["previous"], 3);
    assert_eq!(v["rating_count"], 1);
    assert_eq!(v["status"], "collecting");

    let (_, v) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(v["ratings"], json!([{ "movie_id": 1, "vote": 6 }]));
}

#[tokio::test]
async fn training_an_empty_session_is_unprocessable() {
    let app = app();
    let id = new_session(&app, None).await;
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/train"), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = rate(&app, &id, 1, json!(3)).await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/train"), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn untrained_sessions_do_not_serve_results() {
    let app = app();
    let id = new_session(&app, None).await;
    for path in ["recommendations", "antibodies"] {
        let (status, _) = call(&app, "GET", &format!("/sessions/{id}/{path}"), None).await;
        assert_eq!(status, StatusCode::CONFLICT, "{path}");
    }
    let (status, _) = call(&app, "GET", "/sessions/nope/recommendations", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn full_loop_on_clone_store_returns_cluster_votes() {
    let store = clone_store();
    let app = app();
    let id = new_session(&app, None).await;
    // person 15 belongs to the cluster of persons 11..=20
    rate_like(&app, &id, &store, 15, 20).await;

    let (status, v) = call(&app, "POST", &format!("/sessions/{id}/train"), None).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert!(v["pool_size"].as_u64().unwrap() >= 1);
    assert!(v["steps"].as_u64().unwrap() >= 1);
    assert!(["stable", "exhausted", "max_steps"].contains(&v["stop_reason"].as_str().unwrap()));

    let (_, session) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(session["status"], "trained");
    let rated: Vec<u64> = session["ratings"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["movie_id"].as_u64().unwrap())
        .collect();

    let (status, recs) = call(
        &app,
        "GET",
        &format!("/sessions/{id}/recommendations?n=40"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let recs = recs.as_array().unwrap();
    assert!(!recs.is_empty());
    for r in recs {
        let movie = r["movie_id"].as_u64().unwrap();
        assert!(!rated.contains(&movie));
        let cluster_vote = (11..=20)
            .find_map(|p| {
                store
                    .profile(PersonId(p))
                    .unwrap()
                    .get(MovieId(movie as u32))
            })
            .unwrap();
        assert_eq!(
            r["score"].as_f64().unwrap(),
            cluster_vote.value(),
            "movie {movie}"
        );
        assert_eq!(
            r["rounded"].as_u64().unwrap(),
            u64::from(cluster_vote.index())
        );
        assert_eq!(r["title"], format!("Synthetic movie {movie}"));
        assert!(r["support"].as_u64().unwrap() >= 1);
    }
    let scores: Vec<f64> = recs.iter().map(|r| r["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));

    let (_, top) = call(
        &app,
        "GET",
        &format!("/sessions/{id}/recommendations?n=2"),
        None,
    )
    .await;
    assert_eq!(top.as_array().unwrap().len(), 2.min(recs.len()));
    let (status, _) = call(
        &app,
        "GET",
        &format!("/sessions/{id}/recommendations?n=0"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, abs) = call(&app, "GET", &format!("/sessions/{id}/antibodies"), None).await;
    assert_eq!(status, StatusCode::OK);
    let abs = abs.as_array().unwrap();
    assert_eq!(abs.len() as u64, v["pool_size"].as_u64().unwrap());
    for a in abs {
        let person = a["person_id"].as_u64().unwrap();
        assert!((11..=20).contains(&person), "non-clone {person} survived");
        assert_eq!(a["affinity"], 1.0);
        assert_eq!(a["band"], "very_good");
    }
    let xs: Vec<f64> = abs
        .iter()
        .map(|a| a["concentration"].as_f64().unwrap())
        .collect();
    assert!(xs.windows(2).all(|w| w[0] >= w[1]));
}

#[tokio::test]
async fn rating_after_training_makes_the_session_stale() {
    let store = clone_store();
    let app = app();
    let id = new_session(&app, Some(json!({ "measure": "tau" }))).await;
    rate_like(&app, &id, &store, 3, 15).await;
    let (status, _) = call(&app, "POST", &format!("/sessions/{id}/train"), None).await;
    assert_eq!(status, StatusCode::OK);

    let movie = store
        .profile(PersonId(3))
        .unwrap()
        .votes()
        .next()
        .unwrap()
        .0;
    let (_, v) = rate(&app, &id, movie.0, json!(1)).await;
    assert_eq!(v["status"], "stale");
    for path in ["recommendations", "antibodies"] {
        let (status, _) = call(&app, "GET", &format!("/sessions/{id}/{path}"), None).await;
        assert_eq!(status, StatusCode::CONFLICT);
    }
    let (_, v) = rate(&app, &id, movie.0, json!(2)).await;
    assert_eq!(v["status"], "stale");

    let (status, v) = call(&app, "POST", &format!("/sessions/{id}/train"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["status"], "trained");
    let (status, _) = call(
        &app,
        "GET",
        &format!("/sessions/{id}/recommendations"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn training_is_deterministic_across_sessions() {
    let store = clone_store();
    let app = app();
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let id = new_session(&app, None).await;
        rate_like(&app, &id, &store, 27, 12).await;
        let (_, trained) = call(&app, "POST", &format!("/sessions/{id}/train"), None).await;
        let (_, recs) = call(
            &app,
            "GET",
            &format!("/sessions/{id}/recommendations?n=50"),
            None,
        )
        .await;
        let (_, abs) = call(&app, "GET", &format!("/sessions/{id}/antibodies"), None).await;
        outputs.push((trained, recs, abs));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[tokio::test]
async fn concurrent_requests_on_one_session_serialize() {
    let store = clone_store();
    let app = app();
    let id = new_session(&app, None).await;
    rate_like(&app, &id, &store, 5, 20).await;
    let train_uri = format!("/sessions/{id}/train");
    let (a, b) = tokio::join!(
        call(&app, "POST", &train_uri, None),
        call(&app, "POST", &train_uri, None)
    );
    assert_eq!(a.0, StatusCode::OK);
    assert_eq!(b.0, StatusCode::OK);
    assert_eq!(a.1, b.1);

    let (trained, rated) = tokio::join!(
        call(&app, "POST", &train_uri, None),
        rate(&app, &id, 1, json!(4))
    );
    assert_eq!(trained.0, StatusCode::OK);
    assert_eq!(rated.0, StatusCode::OK);
    // whichever ran last decides the state; both orders are valid transitions
    let (_, session) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    let (status, _) = call(
        &app,
        "GET",
        &format!("/sessions/{id}/recommendations"),
        None,
    )
    .await;
    match session["status"].as_str().unwrap() {
        "trained" => assert_eq!(status, StatusCode::OK),
        "stale" => assert_eq!(status, StatusCode::CONFLICT),
        other => panic!("unexpected status {other}"),
    }
}

#[tokio::test]
async fn idle_sessions_expire() {
    let (app, state) = app_with(clone_store(), Duration::from_millis(50));
    let id = new_session(&app, None).await;
    let (status, _) = rate(&app, &id, 1, json!(2)).await;
    assert_eq!(status, StatusCode::OK);
    tokio::time::sleep(Duration::from_millis(120)).await;
    assert_eq!(state.session_count(), 0);
    let (status, _) = rate(&app, &id, 1, json!(2)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn movie_search() {
    let app = app();
    let (status, v) = call(&app, "GET", "/movies?query=movie%2013", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(
        v,
        json!([{ "movie_id": 13, "title": "Synthetic movie 13" }])
    );

    let (_, v) = call(&app, "GET", "/movies?query=SYNTHETIC&limit=5", None).await;
    let ids: Vec<u64> = v
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["movie_id"].as_u64().unwrap())
        .collect();
    assert_eq!(ids, vec![1, 2, 3, 4, 5]);

    let (_, v) = call(&app, "GET", "/movies", None).await;
    assert_eq!(v.as_array().unwrap().len(), 40);

    let (status, _) = call(&app, "GET", "/movies?limit=many", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn movie_search_without_titles_matches_ids() {
    let mut store = RatingsStore::new();
    for (p, votes) in [(1u32, [(7u32, 2u8), (17, 3)]), (2, [(7, 4), (8, 1)])] {
        let profile = immunorec::Profile::from_votes(
            PersonId(p),
            votes
                .iter()
                .map(|&(m, v)| (MovieId(m), immunorec::VoteCategory::from_index(v).unwrap())),
        )
        .unwrap();
        store.insert_profile(profile).unwrap();
    }
    let (app, _) = app_with(store, Duration::from_secs(60));
    let (_, v) = call(&app, "GET", "/movies?query=7", None).await;
    assert_eq!(
        v,
        json!([{ "movie_id": 7, "title": null }, { "movie_id": 17, "title": null }])
    );
}
