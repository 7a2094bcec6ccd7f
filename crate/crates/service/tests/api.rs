use std::path::Path;
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{header, Request, StatusCode};
use axum::Router;
use her2kit_core::eval::EvalOptions;
use her2kit_core::ingest::fixtures::load_bundled;
use her2kit_core::pyramid::{tiles_across, write_case_pyramid, TILE_SIZE};
use her2kit_service::{router, AppState, ServiceConfig};
use image::{Rgb, RgbImage};
use serde_json::{json, Value};
use tower::ServiceExt;

fn config(tile_root: Option<&Path>, log: &Path, with_machine: bool) -> ServiceConfig {
    let fx = load_bundled().unwrap();
    ServiceConfig {
        tile_root: tile_root.map(Path::to_path_buf),
        ground_truth: fx.mvm_gt,
        machine: if with_machine {
            fx.mvm_submissions.into_iter().filter(|s| !s.team.starts_with("Expert")).collect()
        } else {
            Vec::new()
        },
        log_path: log.to_path_buf(),
        eval: EvalOptions::default(),
    }
}

fn app(cfg: ServiceConfig) -> Router {
    router(Arc::new(AppState::new(cfg).unwrap()))
}

async fn send(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>, axum::http::HeaderMap) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header(header::CONTENT_TYPE, "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    (status, to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec(), headers)
}

async fn json_of(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b, _) = send(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

fn session_tiles(root: &Path, cases: usize) {
    for k in 0..cases {
        let w = 200 + 97 * k as u32;
        let img = RgbImage::from_fn(w, 300, |x, y| Rgb([(x % 251) as u8, (y % 241) as u8, k as u8]));
        write_case_pyramid(root, &format!("case_{}", k + 1), &[("ihc", &img)], TILE_SIZE).unwrap();
    }
}

#[tokio::test]
async fn manifests_and_exhaustive_tile_crawl() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("tiles");
    session_tiles(&root, 15);
    let app = app(config(Some(&root), &dir.path().join("log.ndjson"), false));
    let (s, cases) = json_of(&app, "GET", "/api/cases", None).await;
    assert_eq!(s, StatusCode::OK);
    let cases = cases.as_array().unwrap().clone();
    assert_eq!(cases.len(), 15);
    let mut fetched = 0;
    for m in &cases {
        let id = m["case_id"].as_str().unwrap();
        let levels: Vec<(u32, u32)> = m["levels"]
            .as_array()
            .unwrap()
            .iter()
            .map(|l| (l[0].as_u64().unwrap() as u32, l[1].as_u64().unwrap() as u32))
            .collect();
        assert_eq!(levels.len() as u64, m["depth"].as_u64().unwrap());
        for w in levels.windows(2) {
            assert_eq!(w[1], (w[0].0.div_ceil(2), w[0].1.div_ceil(2)));
        }
        let (s, one) = json_of(&app, "GET", &format!("/api/cases/{id}"), None).await;
        assert_eq!((s, &one), (StatusCode::OK, m));
        for (z, &(w, h)) in levels.iter().enumerate() {
            for y in 0..tiles_across(h, TILE_SIZE) {
                for x in 0..tiles_across(w, TILE_SIZE) {
                    let uri = format!("/api/cases/{id}/ihc/tiles/{z}/{x}/{y}.png");
                    let (s, body, headers) = send(&app, "GET", &uri, None).await;
                    assert_eq!(s, StatusCode::OK, "{uri}");
                    assert_eq!(headers[header::CONTENT_TYPE], "image/png");
                    assert!(headers[header::CACHE_CONTROL].to_str().unwrap().contains("immutable"));
                    let stored = std::fs::read(root.join(id).join("ihc").join(z.to_string()).join(format!("{x}_{y}.png"))).unwrap();
                    assert_eq!(body, stored);
                    fetched += 1;
                }
            }
            let past = format!("/api/cases/{id}/ihc/tiles/{z}/{}/0.png", tiles_across(w, TILE_SIZE));
            assert_eq!(send(&app, "GET", &past, None).await.0, StatusCode::NOT_FOUND);
        }
    }
    assert!(fetched > 15);
    for bad in ["/api/cases/case_1/ihc/tiles/-1/0/0.png", "/api/cases/case_1/he/tiles/0/0/0.png", "/api/cases/nope/ihc/tiles/0/0/0.png", "/api/cases/case_1/ihc/tiles/0/0/0.jpg"] {
        assert_eq!(send(&app, "GET", bad, None).await.0, StatusCode::NOT_FOUND, "{bad}");
    }
    assert_eq!(json_of(&app, "GET", "/api/cases/nope", None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn single_tile_case_returns_full_image() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("tiles");
    let img = RgbImage::from_fn(256, 256, |x, y| Rgb([x as u8, y as u8, 3]));
    write_case_pyramid(&root, "case_1", &[("ihc", &img)], TILE_SIZE).unwrap();
    let app = app(config(Some(&root), &dir.path().join("log.ndjson"), false));
    let (s, body, _) = send(&app, "GET", "/api/cases/case_1/ihc/tiles/0/0/0.png", None).await;
    assert_eq!(s, StatusCode::OK);
    let decoded = image::load_from_memory(&body).unwrap().to_rgb8();
    assert_eq!(decoded, img);
}

#[tokio::test]
async fn empty_root_lists_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("tiles");
    std::fs::create_dir_all(&root).unwrap();
    let app = app(config(Some(&root), &dir.path().join("log.ndjson"), false));
    assert_eq!(json_of(&app, "GET", "/api/cases", None).await.1, json!([]));
}

#[tokio::test]
async fn missing_root_fails_at_startup() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt.csv");
    std::fs::write(&gt, her2kit_core::ingest::fixtures::MVM_GT_CSV).unwrap();
    let r = ServiceConfig::from_paths(Some(&dir.path().join("absent")), &gt, None, &dir.path().join("log"), EvalOptions::default());
    assert!(r.is_err());
}

#[tokio::test]
async fn score_validation() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(config(None, &dir.path().join("log.ndjson"), false));
    let (s, body) = json_of(&app, "POST", "/api/cases/1/score", Some(json!({"rater": "r", "score": 2, "pcms": 40, "confidence": 1.5}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(body["field"], "confidence");
    let (s, body) = json_of(&app, "POST", "/api/cases/1/score", Some(json!({"rater": "r", "score": 2, "pcms": 140, "confidence": 0.5}))).await;
    assert_eq!((s, body["field"].as_str()), (StatusCode::BAD_REQUEST, Some("pcms")));
    let (s, body) = json_of(&app, "POST", "/api/cases/1/score", Some(json!({"rater": "r", "score": 7, "confidence": 0.5}))).await;
    assert_eq!((s, body["field"].as_str()), (StatusCode::BAD_REQUEST, Some("score")));
    let (s, body) = json_of(&app, "POST", "/api/cases/1/score", Some(json!({"score": 1, "confidence": 0.5}))).await;
    assert_eq!((s, body["field"].as_str()), (StatusCode::BAD_REQUEST, Some("rater")));
    let (s, _) = json_of(&app, "POST", "/api/cases/999/score", Some(json!({"rater": "r", "score": 1, "confidence": 0.5}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, body) = json_of(&app, "POST", "/api/cases/1/score", Some(json!({"rater": "r", "score": "2+", "pcms": 40, "confidence": 0.5}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["event"]["case_id"], "1");
    assert!(body["event"]["timestamp"].as_u64().unwrap() > 0);
}

#[tokio::test]
async fn durable_last_write_wins_and_gt_withheld() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.ndjson");
    let fx = load_bundled().unwrap();
    let gt1 = fx.mvm_gt.rows.iter().find(|r| r.case_id.as_str() == "1").unwrap().score.index();
    {
        let app = app(config(None, &log, false));
        let wrong = (gt1 + 3) % 4;
        json_of(&app, "POST", "/api/cases/1/score", Some(json!({"rater": "r", "score": wrong, "confidence": 0.5}))).await;
        json_of(&app, "POST", "/api/cases/1/score", Some(json!({"rater": "r", "score": gt1, "confidence": 0.5}))).await;
        assert_eq!(json_of(&app, "GET", "/api/raters/r/result", None).await.0, StatusCode::FORBIDDEN);
        assert_eq!(json_of(&app, "GET", "/api/leaderboard", None).await.0, StatusCode::FORBIDDEN);
    }
    let app = app(config(None, &log, false));
    assert_eq!(json_of(&app, "GET", "/api/raters/ghost/result", None).await.0, StatusCode::NOT_FOUND);
    json_of(&app, "POST", "/api/raters", Some(json!({"rater": "idle"}))).await;
    assert_eq!(json_of(&app, "POST", "/api/session/close", None).await.0, StatusCode::OK);
    let (s, r) = json_of(&app, "GET", "/api/raters/r/result", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(r["result"]["totals"]["points"], 15.0);
    assert_eq!(r["result"]["evaluated_case_count"], 1);
    let (_, idle) = json_of(&app, "GET", "/api/raters/idle/result", None).await;
    assert_eq!(idle["result"]["totals"]["points"], 0.0);
    assert_eq!(idle["result"]["totals"]["weighted_confidence"], 0.0);
    let (s, board) = json_of(&app, "GET", "/api/leaderboard", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(board["points"].as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn expert_two_replay_scores_210() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(config(None, &dir.path().join("log.ndjson"), true));
    let fx = load_bundled().unwrap();
    let expert2 = fx.submission("Expert 2").unwrap();
    for p in &expert2.rows {
        let (s, _) = json_of(
            &app,
            "POST",
            &format!("/api/cases/{}/score", p.case_id),
            Some(json!({"rater": "Expert 2", "score": p.score.index(), "pcms": p.pcms, "confidence": p.confidence})),
        )
        .await;
        assert_eq!(s, StatusCode::OK);
    }
    json_of(&app, "POST", "/api/session/close", None).await;
    let (_, r) = json_of(&app, "GET", "/api/raters/Expert%202/result", None).await;
    assert_eq!(r["result"]["totals"]["points"], 210.0);
    let machine: Vec<&str> = r["machine"].as_array().unwrap().iter().map(|m| m["team"].as_str().unwrap()).collect();
    assert_eq!(machine.len(), 3);
    let indus = r["machine"].as_array().unwrap().iter().find(|m| m["team"] == "Team Indus").unwrap();
    let direct = her2kit_core::eval::evaluate_submission("Team Indus", &fx.mvm_gt.rows, &fx.submission("Team Indus").unwrap().rows, EvalOptions::default()).unwrap();
    assert_eq!(indus["totals"]["points"], direct.totals.points.as_f64());
}

#[tokio::test]
async fn concurrent_posts_never_interleave() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.ndjson");
    let app = app(config(None, &log, false));
    let mut handles = Vec::new();
    for r in 0..8 {
        let app = app.clone();
        handles.push(tokio::spawn(async move {
            for case in 1..=15 {
                let (s, _) = json_of(&app, "POST", &format!("/api/cases/{case}/score"), Some(json!({"rater": format!("r{r}"), "score": case % 4, "pcms": 12.5, "confidence": 0.75}))).await;
                assert_eq!(s, StatusCode::OK);
            }
        }));
    }
    for h in handles {
        h.await.unwrap();
    }
    let state = her2kit_service::read_log(&log).unwrap();
    assert_eq!(state.events().count(), 120);
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 120);
}
