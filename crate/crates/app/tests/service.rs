mod support;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use http_body_util::BodyExt;
use plantdoc::service::{router, AppState};
use serde_json::Value;
use tower::ServiceExt;

async fn send(app: axum::Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let json = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, json)
}

fn post(body: impl Into<Body>) -> Request<Body> {
    Request::post("/predict")
        .header(header::CONTENT_TYPE, "application/octet-stream")
        .body(body.into())
        .unwrap()
}

fn multipart(field: &str, bytes: &[u8]) -> Request<Body> {
    let boundary = "plantdocboundary";
    let mut body = format!(
        "--{boundary}\r\nContent-Disposition: form-data; name=\"{field}\"; filename=\"leaf.png\"\r\nContent-Type: image/png\r\n\r\n"
    )
    .into_bytes();
    body.extend_from_slice(bytes);
    body.extend_from_slice(format!("\r\n--{boundary}--\r\n").as_bytes());
    Request::post("/predict")
        .header(
            header::CONTENT_TYPE,
            format!("multipart/form-data; boundary={boundary}"),
        )
        .body(Body::from(body))
        .unwrap()
}

#[tokio::test]
async fn health_reports_model_state() {
    let (status, json) = send(
        support::app(None),
        Request::get("/health").body(Body::empty()).unwrap(),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(json["status"], "ok");
    assert_eq!(json["model_loaded"], false);
    let (_, json) = send(
        support::app(Some(support::compact_model(0))),
        Request::get("/health").body(Body::empty()).unwrap(),
    )
    .await;
    assert_eq!(json["model_loaded"], true);
}

#[tokio::test]
async fn classes_lists_all_records() {
    let (status, json) = send(
        support::app(None),
        Request::get("/classes").body(Body::empty()).unwrap(),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let list = json.as_array().unwrap();
    assert_eq!(list.len(), 38);
    assert_eq!(list.iter().filter(|c| c["healthy"] == true).count(), 12);
    for (i, c) in list.iter().enumerate() {
        assert_eq!(c["class_index"], i);
    }
}

#[tokio::test]
async fn predict_returns_full_diagnosis() {
    let app = support::app(Some(support::compact_model(0)));
    let (status, json) = send(app, post(support::leaf_png(3, 80, 1))).await;
    assert_eq!(status, StatusCode::OK, "{json}");
    for key in [
        "class_index",
        "plant",
        "condition",
        "healthy",
        "confidence",
        "plant_emoji",
        "status_emoji",
        "status_color",
        "top_k",
        "probabilities",
    ] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
    let probs: Vec<f64> = json["probabilities"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(probs.len(), 38);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-5);
    assert_eq!(json["top_k"].as_array().unwrap().len(), 5);
}

#[tokio::test]
async fn multipart_and_raw_uploads_agree() {
    let png = support::leaf_png(7, 64, 2);
    let model = support::compact_model(4);
    let (s1, raw) = send(support::app(Some(model.clone())), post(png.clone())).await;
    let (s2, form) = send(support::app(Some(model)), multipart("image", &png)).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(raw, form);
}

#[tokio::test]
async fn identical_requests_give_identical_answers() {
    let app = support::app(Some(support::compact_model(5)));
    let png = support::leaf_png(0, 70, 3);
    let (_, a) = send(app.clone(), post(png.clone())).await;
    let (_, b) = send(app, post(png)).await;
    assert_eq!(a, b);
}

#[tokio::test]
async fn multipart_without_image_field_is_rejected() {
    let app = support::app(Some(support::compact_model(0)));
    let (status, json) = send(app, multipart("file", &support::leaf_png(0, 32, 0))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(json["error"].as_str().unwrap().contains("image"));
}

#[tokio::test]
async fn malformed_and_empty_bodies_are_bad_requests() {
    let app = support::app(Some(support::compact_model(0)));
    let (status, json) = send(app.clone(), post(&b"definitely not an image"[..])).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(json["error"].is_string());
    let (status, _) = send(app, post(Body::empty())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn oversized_upload_is_rejected() {
    let model = std::sync::Arc::new(support::compact_model(0));
    let app = router(AppState::new(Some(model), 5), 1024, None);
    let (status, _) = send(app, post(vec![0u8; 4096])).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
}

#[tokio::test]
async fn predict_without_model_is_unavailable() {
    let (status, json) = send(support::app(None), post(support::leaf_png(0, 32, 0))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert!(json["error"].is_string());
}

#[tokio::test]
async fn rigged_classes_map_to_status_colours() {
    let classes = plantdoc_core::data::reference_classes();
    for class in [0usize, 3, 37] {
        let (_, json) = send(
            support::app(Some(support::rigged_model(class))),
            post(support::leaf_png(1, 40, 0)),
        )
        .await;
        assert_eq!(json["class_index"], class);
        let healthy = classes[class].healthy;
        assert_eq!(json["healthy"], healthy);
        assert_eq!(json["status_color"], if healthy { "green" } else { "red" });
        assert_eq!(json["status_emoji"], if healthy { "🌿" } else { "🦠" });
    }
}
