use std::path::{Path, PathBuf};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use viewpoint::pipeline::{router, AppState, Pipeline, PipelineConfig};

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/synthetic")
}

fn app() -> Router {
    let config = PipelineConfig::load(&fixture_dir().join("pipeline.toml")).unwrap();
    router(AppState::new(Pipeline::load(config).unwrap()).unwrap())
}

async fn send(req: Request<Body>) -> (StatusCode, Vec<u8>, String) {
    let resp = app().oneshot(req).await.unwrap();
    let status = resp.status();
    let ctype = resp.headers().get("content-type").map(|v| v.to_str().unwrap().to_string()).unwrap_or_default();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, body, ctype)
}

async fn get(uri: &str) -> (StatusCode, Vec<u8>, String) {
    send(Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post_json(uri: &str, body: Value) -> (StatusCode, Value) {
    let req = Request::post(uri).header("content-type", "application/json").body(Body::from(body.to_string())).unwrap();
    let (status, bytes, _) = send(req).await;
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

#[tokio::test]
async fn health_reports_version() {
    let (status, body, _) = get("/health").await;
    assert_eq!(status, StatusCode::OK);
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["status"], "ok");
    assert_eq!(v["version"], env!("CARGO_PKG_VERSION"));
}

#[tokio::test]
async fn radius_query_is_sorted_ascending() {
    let (status, v) = post_json("/query", json!({ "image_id": "img_q", "radius": 1.0 })).await;
    assert_eq!(status, StatusCode::OK);
    let hits = v.as_array().unwrap();
    let ids: Vec<&str> = hits.iter().map(|h| h["image_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["img_q", "img_old", "img_b", "img_a1", "img_c", "img_d", "img_e"]);
    let d: Vec<f64> = hits.iter().map(|h| h["distance"].as_f64().unwrap()).collect();
    assert!(d.windows(2).all(|w| w[0] <= w[1]));
}

#[tokio::test]
async fn query_variants_and_errors() {
    let (status, v) = post_json("/query", json!({ "vector": [0.0, 0.0, 0.0, 0.0], "top": 2 })).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v.as_array().unwrap().len(), 2);
    let (_, v) = post_json("/query", json!({ "image_id": "img_q", "radius": 1.0, "top": 3 })).await;
    assert_eq!(v.as_array().unwrap().len(), 3);
    let (status, _) = post_json("/query", json!({ "image_id": "zzz" })).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = post_json("/query", json!({ "vector": [1.0] })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = post_json("/query", json!({ "image_id": "img_q", "radius": -1.0 })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = post_json("/query", json!({})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn sentiment_is_a_distribution() {
    for body in [
        json!({ "text": "What a beautiful building.", "aspect": "Elbphilharmonie" }),
        json!({ "text": "What a beautiful building." }),
    ] {
        let (status, v) = post_json("/sentiment", body).await;
        assert_eq!(status, StatusCode::OK);
        let p = &v["probabilities"];
        let sum: f64 = ["negative", "neutral", "positive"].iter().map(|k| p[k].as_f64().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }
    let (status, _) = post_json("/sentiment", json!({ "text": "x", "aspect": "  " })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn posts_by_gallery_or_image_id() {
    let (status, body, _) = get("/posts/p02").await;
    assert_eq!(status, StatusCode::OK);
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["image_ids"], json!(["img_a1", "img_a2"]));
    let (_, body, _) = get("/posts/img_a2").await;
    let w: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v, w);
    assert_eq!(get("/posts/p12").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn report_matches_the_batch_pipeline() {
    let (status, body, ctype) = get("/report").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ctype, "application/json");
    let config = PipelineConfig::load(&fixture_dir().join("pipeline.toml")).unwrap();
    let expected = viewpoint::pipeline::report_json(&viewpoint::pipeline::run_pipeline(&config, "img_q").unwrap());
    assert_eq!(String::from_utf8(body).unwrap(), expected);
    let (status, body, _) = get("/report?image_id=img_q&radius=0.4").await;
    assert_eq!(status, StatusCode::OK);
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["retrieved"].as_array().unwrap().len(), 3);
    assert_eq!(get("/report?image_id=nope").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn projection_is_json_lines() {
    let (status, body, ctype) = get("/projection").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ctype, "application/x-ndjson");
    let text = String::from_utf8(body).unwrap();
    let rows: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r["x"].is_f64() && r["y"].is_f64()));
    let q = rows.iter().find(|r| r["image_id"] == "img_q").unwrap();
    assert_eq!(q["class"], "elphi");
}

#[tokio::test]
async fn images_are_served_without_escaping_the_directory() {
    let (status, body, ctype) = get("/images/img_q").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ctype, "image/x-portable-graymap");
    assert!(body.starts_with(b"P5"));
    for bad in ["/images/..%2Fcorpus", "/images/.hidden", "/images/missing", "/images/..", "/images/a%2Fb"] {
        assert_eq!(get(bad).await.0, StatusCode::NOT_FOUND, "{bad}");
    }
}
