use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use canine_core::agreement::TablesConfig;
use canine_lab::server::{router, service};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;

fn app(dir: &TempDir) -> Router {
    router(service(dir.path(), TablesConfig::default()).unwrap())
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

fn spec(id: &str, n: usize) -> Value {
    let labels = ["A", "B", "C"];
    json!({
        "study_id": id,
        "space": "three",
        "seed": 17,
        "cases": (0..n).map(|i| json!({"case_id": format!("c{i:02}"), "asset_ref": format!("img/{i}.png")})).collect::<Vec<_>>(),
        "raters": [{"rater_id": "o1", "group": "OS"}, {"rater_id": "g1", "group": "GDP"}],
        "trainer_labels": (0..n)
            .map(|i| (format!("c{i:02}"), json!(labels[i % 3])))
            .collect::<serde_json::Map<_, _>>(),
    })
}

#[tokio::test]
async fn create_and_fetch_first_item() {
    let dir = TempDir::new().unwrap();
    let app = app(&dir);
    let (status, body) = call(&app, "POST", "/studies", Some(spec("s1", 5))).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    assert_eq!(body["manifest"]["study_id"], "s1");

    let (status, body) = call(&app, "GET", "/studies/s1/raters/o1/phases/T0/next", None).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["position"], 1);
    assert_eq!(body["total"], 5);
    assert!(body["asset_ref"].as_str().unwrap().starts_with("img/"));

    let (status, body) = call(&app, "GET", "/studies", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["studies"], json!(["s1"]));
}

#[tokio::test]
async fn duplicate_study_is_a_conflict() {
    let dir = TempDir::new().unwrap();
    let app = app(&dir);
    assert_eq!(call(&app, "POST", "/studies", Some(spec("s1", 3))).await.0, StatusCode::CREATED);
    let (status, body) = call(&app, "POST", "/studies", Some(spec("s1", 3))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "duplicate_study_id");
}

#[tokio::test]
async fn rating_rules() {
    let dir = TempDir::new().unwrap();
    let app = app(&dir);
    call(&app, "POST", "/studies", Some(spec("s1", 4))).await;
    let next = "/studies/s1/raters/o1/phases/T0/next";
    let post = "/studies/s1/raters/o1/phases/T0/ratings";
    let first = call(&app, "GET", next, None).await.1["case"].as_str().unwrap().to_string();

    let (status, _) = call(&app, "POST", post, Some(json!({"case": first, "label": "A"}))).await;
    assert_eq!(status, StatusCode::CREATED);
    let (status, _) = call(&app, "POST", post, Some(json!({"case": first, "label": "A", "elapsed_ms": 900}))).await;
    assert_eq!(status, StatusCode::OK);
    let (status, body) = call(&app, "POST", post, Some(json!({"case": first, "label": "B"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "conflicting_rating");

    let (status, body) = call(&app, "POST", post, Some(json!({"case": first, "label": "S3"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");

    let (status, _) = call(&app, "GET", "/studies/s1/raters/o1/phases/T1/next", None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(&app, "GET", "/studies/s1/raters/zz/phases/T0/next", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "GET", "/studies/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "GET", "/studies/s1/raters/o1/phases/T7/next", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn report_before_ratings() {
    let dir = TempDir::new().unwrap();
    let app = app(&dir);
    call(&app, "POST", "/studies", Some(spec("s1", 4))).await;
    let (status, body) = call(&app, "GET", "/studies/s1/report", None).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert!(body["tables"].is_null());
    assert_eq!(body["status"].as_array().unwrap().len(), 2);
    let (status, body) = call(&app, "GET", "/studies/s1/report?strict=true", None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "incomplete_study");
}

/// Two raters work through both phases in the served order; the study
/// survives a restart of the service from disk.
#[tokio::test]
async fn scripted_session() {
    let dir = TempDir::new().unwrap();
    let n = 20;
    {
        let app = app(&dir);
        call(&app, "POST", "/studies", Some(spec("full", n))).await;
        for rater in ["o1", "g1"] {
            for phase in ["T0", "T1"] {
                let mut seen = Vec::new();
                loop {
                    let (status, item) =
                        call(&app, "GET", &format!("/studies/full/raters/{rater}/phases/{phase}/next"), None).await;
                    assert_eq!(status, StatusCode::OK, "{item}");
                    if item["done"] == true {
                        break;
                    }
                    let case = item["case"].as_str().unwrap().to_string();
                    let i: usize = case[1..].parse().unwrap();
                    let label = ["A", "B", "C"][(i + usize::from(rater == "g1" && i.is_multiple_of(7))) % 3];
                    let (status, body) = call(
                        &app,
                        "POST",
                        &format!("/studies/full/raters/{rater}/phases/{phase}/ratings"),
                        Some(json!({"case": case, "label": label, "elapsed_ms": 1500})),
                    )
                    .await;
                    assert_eq!(status, StatusCode::CREATED, "{body}");
                    seen.push(case);
                }
                assert_eq!(seen.len(), n);
            }
        }
    }
    let app = app(&dir);
    let (status, overview) = call(&app, "GET", "/studies/full", None).await;
    assert_eq!(status, StatusCode::OK);
    for s in overview["status"].as_array().unwrap() {
        assert_eq!(s["T0"], "COMPLETE", "{s}");
        assert_eq!(s["T1"], "COMPLETE", "{s}");
        assert_eq!(s["orderings_differ"], true);
    }
    let (status, report) = call(&app, "GET", "/studies/full/report?strict=true", None).await;
    assert_eq!(status, StatusCode::OK, "{report}");
    let calib = report["tables"]["calibration"].as_array().unwrap();
    let o1 = calib.iter().find(|r| r["rater"] == "o1").unwrap();
    assert_eq!(o1["t0"]["result"]["kappa"], 1.0);
}
