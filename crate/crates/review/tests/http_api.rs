use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use gaitlab_review::{create_study, router, AppState, CaseInput, RatingStore, ReviewService};
use serde_json::{json, Value};
use tower::ServiceExt;

const MODELS: [&str; 3] = ["BioGait-VLM", "Qwen-VL", "GPT-4o"];
const TOKEN: &str = "admin-secret";

fn app(n_cases: usize, n_raters: usize, store: RatingStore) -> (Router, Arc<ReviewService>) {
    let cases = (0..n_cases)
        .map(|i| CaseInput {
            case_id: format!("case{i:03}"),
            preview: format!("previews/case{i:03}.skel"),
            rationales: MODELS
                .iter()
                .enumerate()
                .map(|(m, name)| (name.to_string(), format!("report {m} for case {i}")))
                .collect(),
        })
        .collect();
    let raters = (0..n_raters).map(|r| format!("rater{r}")).collect();
    let study = create_study(cases, MODELS.iter().map(|m| m.to_string()).collect(), raters, 13).unwrap();
    let service = Arc::new(ReviewService::new(study, store));
    let state = AppState {
        service: service.clone(),
        admin_token: TOKEN.into(),
    };
    (router(state), service)
}

struct Reply {
    status: StatusCode,
    raw: String,
    json: Value,
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<String>, token: Option<&str>) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header("content-type", "application/json");
    }
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let resp = app
        .clone()
        .oneshot(req.body(body.map(Body::from).unwrap_or_else(Body::empty)).unwrap())
        .await
        .unwrap();
    let status = resp.status();
    let mut raw = format!("{:?}", resp.headers());
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let text = String::from_utf8(bytes.to_vec()).unwrap();
    raw.push_str(&text);
    Reply {
        status,
        json: serde_json::from_str(&text).unwrap_or(Value::Null),
        raw,
    }
}

fn rating(case_id: &str, score: i64, best: &str) -> String {
    let scores: serde_json::Map<String, Value> = ["A", "B", "C"].iter().map(|l| (l.to_string(), json!(vec![score; 4]))).collect();
    json!({"case_id": case_id, "scores": scores, "best": best, "comment": "ok"}).to_string()
}

fn assert_blind(r: &Reply) {
    let lower = r.raw.to_lowercase();
    for m in MODELS {
        assert!(!lower.contains(&m.to_lowercase()), "{m} leaked in {}", r.raw);
    }
}

#[tokio::test]
async fn exhaustive_walk_leaks_no_model_identity() {
    let (app, _) = app(12, 3, RatingStore::in_memory());
    let mut replies = vec![
        call(&app, "GET", "/api/health", None, None).await,
        call(&app, "GET", "/api/summary", None, None).await,
        call(&app, "GET", "/api/summary", None, Some("wrong")).await,
        call(&app, "GET", "/api/raters/ghost/next", None, None).await,
    ];
    for r in 0..3 {
        let rater = format!("rater{r}");
        loop {
            let next = call(&app, "GET", &format!("/api/raters/{rater}/next"), None, None).await;
            let done = next.status == StatusCode::GONE;
            let case_id = next.json["case_id"].as_str().map(str::to_string);
            replies.push(next);
            if done {
                break;
            }
            let case_id = case_id.unwrap();
            let uri = format!("/api/raters/{rater}/ratings");
            replies.push(call(&app, "POST", &uri, Some(rating(&case_id, 9, "A")), None).await);
            replies.push(call(&app, "POST", &uri, Some(rating("case999", 3, "A")), None).await);
            replies.push(call(&app, "POST", &uri, Some("{not json".into()), None).await);
            replies.push(call(&app, "POST", &uri, Some(rating(&case_id, 4, "B")), None).await);
            replies.push(call(&app, "POST", &uri, Some(rating(&case_id, 4, "B")), None).await);
        }
        replies.push(call(&app, "POST", &format!("/api/raters/{rater}/ratings"), Some(rating("case000", 4, "B")), None).await);
    }
    replies.push(call(&app, "GET", "/api/health", None, None).await);
    replies.push(call(&app, "GET", "/api/summary", None, None).await);
    assert!(replies.len() > 70);
    for r in &replies {
        assert_blind(r);
    }

    let summary = call(&app, "GET", "/api/summary", None, Some(TOKEN)).await;
    assert_eq!(summary.status, StatusCode::OK);
    assert!(summary.raw.contains("BioGait-VLM"), "admin summary names models");
    assert_eq!(summary.json["rated"], 12);
}

#[tokio::test]
async fn status_codes_follow_the_contract() {
    let (app, _) = app(4, 1, RatingStore::in_memory());
    assert_eq!(call(&app, "GET", "/api/health", None, None).await.json["status"], "ok");
    let r = call(&app, "GET", "/api/raters/ghost/next", None, None).await;
    assert_eq!((r.status, r.json["error"].as_str()), (StatusCode::NOT_FOUND, Some("UnknownRater")));
    let r = call(&app, "GET", "/api/summary", None, None).await;
    assert_eq!(r.status, StatusCode::FORBIDDEN);
    let r = call(&app, "GET", "/api/summary", None, Some(TOKEN)).await;
    assert_eq!((r.status, r.json["error"].as_str()), (StatusCode::CONFLICT, Some("EmptyStudy")));

    let next = call(&app, "GET", "/api/raters/rater0/next", None, None).await;
    assert_eq!(next.status, StatusCode::OK);
    assert_eq!(next.json["panels"].as_array().unwrap().len(), 3);
    assert_eq!(next.json["schema"]["dimensions"].as_array().unwrap().len(), 4);
    let case_id = next.json["case_id"].as_str().unwrap().to_string();
    let uri = "/api/raters/rater0/ratings";

    let r = call(&app, "POST", uri, Some(rating(&case_id, 6, "A")), None).await;
    assert_eq!((r.status, r.json["error"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("IncompleteScores")));
    let r = call(&app, "POST", uri, Some("[]".into()), None).await;
    assert_eq!((r.status, r.json["error"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("InvalidBody")));
    let r = call(&app, "POST", uri, Some(rating("case999", 3, "A")), None).await;
    assert_eq!((r.status, r.json["error"].as_str()), (StatusCode::CONFLICT, Some("WrongCase")));

    let r = call(&app, "POST", uri, Some(rating(&case_id, 3, "A")), None).await;
    assert_eq!(r.status, StatusCode::CREATED);
    assert_eq!((r.json["rated"].as_u64(), r.json["seq"].as_u64()), (Some(1), Some(0)));
    let r = call(&app, "POST", uri, Some(rating(&case_id, 3, "A")), None).await;
    assert_eq!((r.status, r.json["error"].as_str()), (StatusCode::CONFLICT, Some("DuplicateRating")));

    for _ in 0..3 {
        let c = call(&app, "GET", "/api/raters/rater0/next", None, None).await;
        let id = c.json["case_id"].as_str().unwrap().to_string();
        assert_eq!(call(&app, "POST", uri, Some(rating(&id, 3, "A")), None).await.status, StatusCode::CREATED);
    }
    let r = call(&app, "GET", "/api/raters/rater0/next", None, None).await;
    assert_eq!((r.status, r.json["error"].as_str()), (StatusCode::GONE, Some("StudyComplete")));
    let r = call(&app, "GET", "/api/summary", None, Some(TOKEN)).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!((r.json["rated"].as_u64(), r.json["total"].as_u64()), (Some(4), Some(4)));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_duplicate_posts_store_one_record() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ratings.jsonl");
    let (app, service) = app(3, 1, RatingStore::open(&path).unwrap());
    let next = call(&app, "GET", "/api/raters/rater0/next", None, None).await;
    let body = rating(next.json["case_id"].as_str().unwrap(), 5, "B");
    let tasks: Vec<_> = (0..24)
        .map(|_| {
            let (app, body) = (app.clone(), body.clone());
            tokio::spawn(async move { call(&app, "POST", "/api/raters/rater0/ratings", Some(body), None).await.status })
        })
        .collect();
    let mut statuses = Vec::new();
    for t in tasks {
        statuses.push(t.await.unwrap());
    }
    assert_eq!(statuses.iter().filter(|&&s| s == StatusCode::CREATED).count(), 1);
    assert_eq!(statuses.iter().filter(|&&s| s == StatusCode::CONFLICT).count(), 23);
    assert_eq!(service.store.len(), 1);
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 1);
}
