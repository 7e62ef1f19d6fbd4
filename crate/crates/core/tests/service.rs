mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use msabn::candle_core::DType;
use msabn::data::{AnnotationStore, BBox};
use msabn::harness::service::{router, AppState, FieldError, SamplePage};
use msabn::harness::{export_overlays, OverlayManifest};
use msabn::hitl::audit_model;
use msabn::model::Msabn;
use tower::ServiceExt;

struct Fixture {
    _dir: tempfile::TempDir,
    state: Arc<AppState>,
    manifest: OverlayManifest,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::synthetic(3, 3, 16, 0.5, 1, "v");
    let (model, _store) = Msabn::build(common::tiny_model(3, 16), DType::F32, 2).unwrap();
    let export = dir.path().join("export");
    let manifest = export_overlays(&model, &ds, &export, 0.2, 4).unwrap();
    let state = AppState::open(&export, dir.path().join("annotations.jsonl")).unwrap();
    Fixture {
        _dir: dir,
        state: Arc::new(state),
        manifest,
    }
}

async fn send(state: &Arc<AppState>, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post_json(uri: &str, body: &str) -> Request<Body> {
    Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

#[tokio::test]
async fn samples_sorted_by_outside_fraction() {
    let f = fixture();
    let (status, body) = send(&f.state, get("/samples")).await;
    assert_eq!(status, StatusCode::OK);
    let page: SamplePage = serde_json::from_slice(&body).unwrap();
    assert_eq!(page.total, 9);
    let fracs: Vec<f64> = page.items.iter().map(|s| s.frac_out.unwrap()).collect();
    assert!(fracs.windows(2).all(|w| w[0] >= w[1]), "{fracs:?}");
    let max = f.manifest.entries.iter().map(|e| e.frac_out.unwrap()).fold(f64::MIN, f64::max);
    assert_eq!(fracs[0], max);
}

#[tokio::test]
async fn wrong_first_and_pagination() {
    let f = fixture();
    let (_, body) = send(&f.state, get("/samples?sort=wrong_first&offset=0&limit=100")).await;
    let page: SamplePage = serde_json::from_slice(&body).unwrap();
    let first_right = page.items.iter().position(|s| !s.wrong).unwrap_or(page.items.len());
    assert!(page.items[first_right..].iter().all(|s| !s.wrong));
    let (_, body) = send(&f.state, get("/samples?offset=7&limit=5")).await;
    let tail: SamplePage = serde_json::from_slice(&body).unwrap();
    assert_eq!(tail.items.len(), 2);
    assert_eq!(tail.offset, 7);
}

#[tokio::test]
async fn overlay_is_png() {
    let f = fixture();
    let id = &f.manifest.entries[0].sample_id;
    let resp = router(f.state.clone()).oneshot(get(&format!("/samples/{id}/overlay"))).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "image/png");
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(&bytes[..8], b"\x89PNG\r\n\x1a\n");
    let (status, _) = send(&f.state, get("/samples/nope/overlay")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn bbox_post_validates_and_appends() {
    let f = fixture();
    let id = f.manifest.entries[0].sample_id.clone();
    let ok = r#"{"x_min":1,"y_min":2,"x_max":9,"y_max":12,"author":"ann"}"#;
    let (status, _) = send(&f.state, post_json(&format!("/samples/{id}/bbox"), ok)).await;
    assert_eq!(status, StatusCode::CREATED);

    let too_wide = r#"{"x_min":1,"y_min":2,"x_max":17,"y_max":12}"#;
    let (status, body) = send(&f.state, post_json(&format!("/samples/{id}/bbox"), too_wide)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let err: FieldError = serde_json::from_slice(&body).unwrap();
    assert_eq!(err.field.as_deref(), Some("x_max"));

    let empty = r#"{"x_min":4,"y_min":2,"x_max":4,"y_max":12}"#;
    let (status, _) = send(&f.state, post_json(&format!("/samples/{id}/bbox"), empty)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let negative = r#"{"x_min":-1,"y_min":2,"x_max":4,"y_max":12}"#;
    let (status, body) = send(&f.state, post_json(&format!("/samples/{id}/bbox"), negative)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let err: FieldError = serde_json::from_slice(&body).unwrap();
    assert_eq!(err.field.as_deref(), Some("x_min"));

    let (status, _) = send(&f.state, post_json("/samples/missing/bbox", ok)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, body) = send(&f.state, get("/annotations")).await;
    assert_eq!(status, StatusCode::OK);
    let text = String::from_utf8(body).unwrap();
    assert_eq!(text.lines().count(), 1);
    let (_, body) = send(&f.state, get("/samples?limit=100")).await;
    let page: SamplePage = serde_json::from_slice(&body).unwrap();
    let card = page.items.iter().find(|s| s.sample_id == id).unwrap();
    assert!(card.annotated);
    assert_eq!(card.bbox, Some(BBox::new(1, 2, 9, 12)));
}

#[tokio::test]
async fn posted_box_reaches_the_audit() {
    let dir = tempfile::tempdir().unwrap();
    let ds = common::synthetic(3, 2, 16, 0.5, 3, "w");
    let (model, _store) = Msabn::build(common::tiny_model(3, 16), DType::F32, 2).unwrap();
    let export = dir.path().join("export");
    export_overlays(&model, &ds, &export, 0.2, 4).unwrap();
    let ann_path = dir.path().join("annotations.jsonl");
    let state = Arc::new(AppState::open(&export, &ann_path).unwrap());
    let id = ds.samples()[0].id.clone();
    let full = r#"{"x_min":0,"y_min":0,"x_max":16,"y_max":16}"#;
    let (status, _) = send(&state, post_json(&format!("/samples/{id}/bbox"), full)).await;
    assert_eq!(status, StatusCode::CREATED);
    let overrides = AnnotationStore::open(&ann_path).unwrap().latest().unwrap();
    let audits = audit_model(&model, &ds, &overrides, 0.2, 4).unwrap();
    let a = audits.iter().find(|a| a.sample_id == id).unwrap();
    assert_eq!(a.bbox, Some(BBox::new(0, 0, 16, 16)));
    assert_eq!(a.frac_out, 0.0);
}
