use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use ttl_itd::deliberation::DialConfig;
use ttl_itd::exec::derive_seed;
use ttl_itd::harness::{
    fqe_config, frontier, load_episodes, train_pipeline, transitions, Evaluator, RunConfig,
    SweepConfig, TrainOutput,
};
use ttl_itd::trajectory::SyntheticConfig;
use ttl_itd::Exec;
use ttl_itd_service::{router, AppState, FrontierResponse, Loaded, RecommendResponse, Sample};

const FRONTIER_CAP: usize = 10;

fn trained() -> &'static TrainOutput {
    static OUT: OnceLock<TrainOutput> = OnceLock::new();
    OUT.get_or_init(|| {
        let mut c = RunConfig {
            seed: 21,
            ..RunConfig::default()
        };
        c.data.synthetic = SyntheticConfig {
            n_members: 150,
            mean_len: 12.0,
            seed: 21,
            ..SyntheticConfig::default()
        };
        c.model.ensemble_members = 4;
        c.model.bootstrap_resamples = 200;
        c.model.permutations = 200;
        c.dials.k = 30;
        c.sweep = SweepConfig {
            k: vec![30],
            beta: vec![0.5],
            lambda: vec![1.0],
            lambda_costs: vec![0.0, 1.0],
        };
        let episodes = load_episodes(&c).unwrap();
        train_pipeline(&episodes, &c, Exec::Parallel).unwrap()
    })
}

fn loaded() -> Loaded {
    let out = trained();
    Loaded::new(
        out.artifact.clone(),
        Some(out.manifest.clone()),
        out.test_episodes.clone(),
    )
}

fn state() -> Arc<AppState> {
    Arc::new(AppState::new(Some(loaded())).with_frontier_cap(FRONTIER_CAP))
}

async fn call(
    state: &Arc<AppState>,
    method: &str,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = router(state.clone())
        .oneshot(req.body(body).unwrap())
        .await
        .unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn first_sample(state: &Arc<AppState>) -> Sample {
    let (status, body) = call(state, "GET", "/v1/samples?limit=1", None).await;
    assert_eq!(status, StatusCode::OK);
    let mut samples: Vec<Sample> = serde_json::from_value(body).unwrap();
    samples.remove(0)
}

fn recommend_body(s: &Sample) -> Value {
    json!({ "state_doc": s.state_doc, "t": s.t, "prev_reward": s.prev_reward })
}

#[tokio::test]
async fn health_reports_whether_an_artifact_is_loaded() {
    let empty = Arc::new(AppState::new(None));
    let (status, body) = call(&empty, "GET", "/v1/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["artifact_loaded"], false);
    let (status, _) = call(
        &empty,
        "POST",
        "/v1/recommend",
        Some(json!({ "state_doc": {} })),
    )
    .await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);

    let s = state();
    let (_, body) = call(&s, "GET", "/v1/health", None).await;
    assert_eq!(body["artifact_loaded"], true);
    assert_eq!(body["version"], trained().artifact.version());
}

#[tokio::test]
async fn recommend_matches_the_library_and_scores_recompute() {
    let s = state();
    let sample = first_sample(&s).await;
    let (status, body) = call(&s, "POST", "/v1/recommend", Some(recommend_body(&sample))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let resp: RecommendResponse = serde_json::from_value(body).unwrap();

    let artifact = &trained().artifact;
    let x = artifact.featurize(&sample.state_doc, sample.t, sample.prev_reward);
    let seed = derive_seed(artifact.seed, resp.request_id);
    let (expected, local) = artifact.recommend(&x, &artifact.dials, seed).unwrap();
    assert_eq!(resp.recommendation, expected);
    assert_eq!(resp.action_freq, local.action_freq);
    assert_eq!(resp.neighbor_count, artifact.dials.k);

    let d = &resp.dials;
    for b in &resp.recommendation.breakdown {
        let score = b.q_mean - d.beta * b.q_std - d.lambda * b.p_harm - d.lambda_cost * b.cost;
        assert!((score - b.score).abs() < 1e-9, "{b:?}");
    }
    let total: f64 = resp.recommendation.probabilities.iter().sum();
    assert!((total - 1.0).abs() < 1e-9);
}

#[tokio::test]
async fn identical_seeded_requests_give_identical_responses() {
    let s = state();
    let sample = first_sample(&s).await;
    let mut body = recommend_body(&sample);
    body["seed"] = json!(7);
    body["dials"] = json!({ "selection": "softmax", "temperature": 0.5 });
    let (_, a) = call(&s, "POST", "/v1/recommend", Some(body.clone())).await;
    let (_, b) = call(&s, "POST", "/v1/recommend", Some(body)).await;
    assert_eq!(a["recommendation"], b["recommendation"]);
    assert_eq!(a["recommendation"]["seed"], 7);
    assert_ne!(a["request_id"], b["request_id"]);
}

#[tokio::test]
async fn malformed_requests_name_the_offending_field() {
    let s = state();
    let cases = [
        (json!({ "t": 1 }), "state_doc"),
        (json!({ "state_doc": [1, 2] }), "state_doc"),
        (
            json!({ "state_doc": { "tenure": { "years": 2 } } }),
            "state_doc.tenure",
        ),
        (json!({ "state_doc": {}, "t": -3 }), "t"),
        (
            json!({ "state_doc": {}, "prev_reward": "x" }),
            "prev_reward",
        ),
        (
            json!({ "state_doc": {}, "dials": { "alpha": 2.0 } }),
            "dials",
        ),
        (
            json!({ "state_doc": {}, "dials": { "gamma": 0.9 } }),
            "dials.gamma",
        ),
    ];
    for (body, field) in cases {
        let (status, resp) = call(&s, "POST", "/v1/recommend", Some(body.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert_eq!(resp["field"], field, "{body}: {resp}");
    }
    let req = Request::post("/v1/recommend")
        .header("content-type", "application/json")
        .body(Body::from("{not json"))
        .unwrap();
    let resp = router(s.clone()).oneshot(req).await.unwrap();
    assert!(resp.status().is_client_error());
}

#[tokio::test]
async fn frontier_matches_the_library_and_is_repeatable() {
    let s = state();
    let (status, body) = call(
        &s,
        "POST",
        "/v1/frontier",
        Some(json!({ "lambda_costs": [] })),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["field"], "lambda_costs");

    let request = json!({ "lambda_costs": [2.0, 0.0, 0.5] });
    let (status, body) = call(&s, "POST", "/v1/frontier", Some(request.clone())).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let a: FrontierResponse = serde_json::from_value(body).unwrap();
    let (_, body) = call(&s, "POST", "/v1/frontier", Some(request)).await;
    let b: FrontierResponse = serde_json::from_value(body).unwrap();
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.sample_size, FRONTIER_CAP);
    assert_eq!(
        a.rows.iter().map(|r| r.lambda_cost).collect::<Vec<_>>(),
        vec![0.0, 0.5, 2.0]
    );
    for w in a.rows.windows(2) {
        assert!(
            w[1].expected_cost <= w[0].expected_cost + 1e-12,
            "{:?}",
            a.rows
        );
    }

    let out = trained();
    let model = &out.manifest.config.model;
    let data = transitions(&out.artifact, &out.test_episodes[..FRONTIER_CAP]);
    let ev = Evaluator::new(&out.artifact, data, out.artifact.dials.k, Exec::Sequential).unwrap();
    let direct = frontier(
        &ev,
        &[0.0],
        &out.artifact.dials,
        &fqe_config(model, model.fqe_iterations),
        Exec::Sequential,
    )
    .unwrap();
    assert_eq!(direct[0], a.rows[0]);
}

#[tokio::test]
async fn manifest_reports_hashes_and_active_dials() {
    let s = state();
    let (status, body) = call(&s, "GET", "/v1/manifest", None).await;
    assert_eq!(status, StatusCode::OK);
    let out = trained();
    assert_eq!(body["artifact_hash"], out.artifact.hash());
    assert_eq!(body["artifact_hash"], out.manifest.artifact_hash);
    assert_eq!(body["config_hash"], out.artifact.config_hash);
    assert_eq!(body["data_hash"], out.artifact.data_hash);
    assert_eq!(
        serde_json::from_value::<DialConfig>(body["active_dials"].clone()).unwrap(),
        out.artifact.dials
    );
}

#[tokio::test]
async fn dial_changes_are_validated_and_audited() {
    let s = state();
    let before = s.dials();
    let (status, body) = call(
        &s,
        "PUT",
        "/v1/dials",
        Some(json!({ "beta": 1.25, "lambda_cost": 0.5 })),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let (_, now) = call(&s, "GET", "/v1/dials", None).await;
    assert_eq!(now["beta"], 1.25);
    assert_eq!(now["lambda_cost"], 0.5);

    let log = s.audit_log();
    assert_eq!(log.len(), 1);
    assert_eq!(log[0].previous, before);
    assert_eq!(log[0].dials, s.dials());
    assert_eq!(
        log[0].version.as_deref(),
        Some(trained().artifact.version().as_str())
    );

    let (status, body) = call(&s, "PUT", "/v1/dials", Some(json!({ "warp": 9 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["field"], "dials.warp");
    let (status, _) = call(&s, "PUT", "/v1/dials", Some(json!({ "temperature": 0.0 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(s.audit_log().len(), 1);

    let (_, manifest) = call(&s, "GET", "/v1/manifest", None).await;
    assert_eq!(manifest["active_dials"]["beta"], 1.25);
    assert_ne!(manifest["active_dials"], manifest["default_dials"]);
}

#[tokio::test]
async fn samples_are_first_steps_of_cached_episodes() {
    let s = state();
    let (_, body) = call(&s, "GET", "/v1/samples?limit=3", None).await;
    let samples: Vec<Sample> = serde_json::from_value(body).unwrap();
    assert_eq!(samples.len(), 3);
    for (sample, ep) in samples.iter().zip(&trained().test_episodes) {
        assert_eq!(sample.member_id, ep.member_id);
        assert_eq!(sample.state_doc, ep.steps[0].state);
    }
}

#[tokio::test]
async fn artifact_hot_swap_serves_the_new_version() {
    let s = state();
    let old = trained().artifact.version();
    let mut changed = trained().artifact.clone();
    changed.dials.beta = 0.75;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("artifact.json");
    changed.save(&path).unwrap();

    let (status, body) = call(
        &s,
        "PUT",
        "/v1/artifact",
        Some(json!({ "artifact_path": path })),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["previous"], old);
    assert_eq!(body["version"], changed.version());
    assert_ne!(changed.version(), old);
    let (_, health) = call(&s, "GET", "/v1/health", None).await;
    assert_eq!(health["version"], changed.version());

    let missing = dir.path().join("missing.json");
    let (status, body) = call(
        &s,
        "PUT",
        "/v1/artifact",
        Some(json!({ "artifact_path": missing })),
    )
    .await;
    assert!(status.is_server_error() || status.is_client_error());
    assert_eq!(body["field"], "artifact_path");
    let (_, health) = call(&s, "GET", "/v1/health", None).await;
    assert_eq!(health["version"], changed.version());
}
