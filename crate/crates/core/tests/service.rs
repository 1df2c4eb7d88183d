mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use base64::Engine;
use http_body_util::BodyExt;
use semsplat::commands::{cmd_segment, QuerySpec, SegmentArgs, ViewSpec};
use semsplat::deformation::{DeformationField, FourierEncodingConfig};
use semsplat::io::{save_checkpoint, Checkpoint};
use semsplat::raster::{render, Camera, Orbit, RenderOptions};
use semsplat::semantics::DEFAULT_MASK_ALPHA;
use semsplat::service::{router, AppState, Meta, SelectResponse, ServiceConfig, TimelineResponse};
use serde_json::json;
use tower::ServiceExt;

const W: usize = 48;

fn orbit() -> Orbit {
    Orbit {
        azimuth_deg: 20.0,
        elevation_deg: 10.0,
        radius: 4.0,
        target: [0.0; 3],
        fov_y_deg: 45.0,
    }
}

fn checkpoint() -> Checkpoint {
    let gaussians = common::random_scene(40, 6, 11);
    let field = DeformationField::new(FourierEncodingConfig::default(), 2, 16, 3).unwrap();
    Checkpoint {
        gaussians,
        field,
        iteration: 42,
    }
}

fn app() -> (axum::Router, Checkpoint) {
    let ckpt = checkpoint();
    let cfg = ServiceConfig {
        workers: 2,
        ..ServiceConfig::default()
    };
    let state = Arc::new(AppState::new(
        ckpt.clone(),
        vec![common::front_camera(32, 24)],
        cfg,
    ));
    (router(state), ckpt)
}

/// The most opaque pixel of the default view.
fn busiest_pixel(ckpt: &Checkpoint) -> [usize; 2] {
    let cam = Camera::orbit(&orbit(), W, W).unwrap();
    let out = render(&ckpt.gaussians, &cam, &RenderOptions::default());
    let k = (0..W * W)
        .max_by(|&a, &b| out.alpha.data[a].total_cmp(&out.alpha.data[b]))
        .unwrap();
    [k % W, k / W]
}

async fn send(app: &axum::Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp
        .into_body()
        .collect()
        .await
        .unwrap()
        .to_bytes()
        .to_vec();
    (status, bytes)
}

async fn get(app: &axum::Router, uri: &str) -> (StatusCode, Vec<u8>) {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post(app: &axum::Router, uri: &str, body: serde_json::Value) -> (StatusCode, Vec<u8>) {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    send(app, req).await
}

fn view_json() -> serde_json::Value {
    json!({"azimuth": 20.0, "elevation": 10.0, "radius": 4.0, "fov": 45.0, "w": W, "h": W})
}

#[tokio::test]
async fn meta_reports_checkpoint_shape() {
    let (app, _) = app();
    let (status, body) = get(&app, "/meta").await;
    assert_eq!(status, StatusCode::OK);
    let meta: Meta = serde_json::from_slice(&body).unwrap();
    assert_eq!(meta.num_gaussians, 40);
    assert_eq!(meta.feature_dim, 6);
    assert_eq!(meta.iteration, 42);
    assert_eq!(meta.time_range, [0.0, 1.0]);
    assert_eq!(meta.cameras.len(), 1);
    assert_eq!((meta.cameras[0].width, meta.cameras[0].height), (32, 24));
}

#[tokio::test]
async fn unknown_route_is_404() {
    let (app, _) = app();
    assert_eq!(get(&app, "/nope").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn render_returns_png_of_requested_size() {
    let (app, _) = app();
    let (status, body) = get(
        &app,
        "/render?azimuth=20&elevation=10&radius=4&w=40&h=30&t=0.5",
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let img = image::load_from_memory(&body).unwrap();
    assert_eq!((img.width(), img.height()), (40, 30));
    let (status, _) = get(
        &app,
        "/render?azimuth=20&elevation=10&radius=4&w=40&h=30&t=0.5&channels=feature-pca",
    )
    .await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn malformed_requests_are_400() {
    let (app, _) = app();
    for uri in [
        "/render?azimuth=0&elevation=0&radius=4&w=0&h=10&t=0",
        "/render?azimuth=0&elevation=0&radius=4&w=10&h=10&t=2",
        "/render?azimuth=x&elevation=0&radius=4&w=10&h=10&t=0",
        "/render?azimuth=0&elevation=0&radius=4&w=10&h=10",
        "/render?azimuth=0&elevation=0&radius=4&w=10&h=10&t=0&channels=depth",
        "/render?azimuth=0&elevation=0&radius=4&w=5000&h=5000&t=0",
    ] {
        assert_eq!(get(&app, uri).await.0, StatusCode::BAD_REQUEST, "{uri}");
    }
    let req = Request::post("/select")
        .body(Body::from("{not json"))
        .unwrap();
    assert_eq!(send(&app, req).await.0, StatusCode::BAD_REQUEST);
    let (status, _) = post(&app, "/select", json!({"mode": "click", "t": 0.0})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = post(
        &app,
        "/select",
        json!({"mode": "embedding", "embedding": vec![0.0; 6]}),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = post(
        &app,
        "/select",
        json!({"mode": "embedding", "embedding": vec![1.0; 3]}),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn click_on_background_is_422() {
    let (app, _) = app();
    let (status, body) = post(
        &app,
        "/select",
        json!({"mode": "click", "pixel": [0, 0], "view": {"azimuth": 0.0, "elevation": 0.0, "radius": 40.0, "w": W, "h": W}, "t": 0.0}),
    )
    .await;
    assert_eq!(
        status,
        StatusCode::UNPROCESSABLE_ENTITY,
        "{}",
        String::from_utf8_lossy(&body)
    );
}

#[tokio::test]
async fn unknown_token_is_404() {
    let (app, _) = app();
    let (status, _) = get(&app, "/timeline?selection_token=deadbeef&t=0.5").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn select_is_idempotent() {
    let (app, ckpt) = app();
    let [x, y] = busiest_pixel(&ckpt);
    let body =
        json!({"mode": "click", "pixel": [x, y], "view": view_json(), "t": 0.3, "theta": 0.5});
    let (s1, b1) = post(&app, "/select", body.clone()).await;
    let (s2, b2) = post(&app, "/select", body).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(b1, b2);
    let r: SelectResponse = serde_json::from_slice(&b1).unwrap();
    assert_eq!(r.count, r.gaussian_ids.len());
    assert!(r.count >= 1);
    assert_eq!(r.histogram.counts.iter().sum::<usize>(), 40);
    assert!(r.mask.is_some());
}

#[tokio::test]
async fn select_and_timeline_match_the_cli() {
    let (app, ckpt) = app();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.dgdc");
    save_checkpoint(&path, &ckpt).unwrap();
    let [x, y] = busiest_pixel(&ckpt);
    let times = vec![0.0, 0.5, 1.0];
    let cli = cmd_segment(&SegmentArgs {
        ckpt: path,
        data: None,
        query: QuerySpec::Click {
            x,
            y,
            view: ViewSpec::Pose {
                orbit: orbit(),
                width: W,
                height: W,
            },
            time: Some(0.0),
        },
        theta: 0.6,
        mask_view: None,
        times: times.clone(),
        out_masks: dir.path().join("masks"),
        mask_alpha: DEFAULT_MASK_ALPHA,
    })
    .unwrap();

    let (status, body) = post(
        &app,
        "/select",
        json!({"mode": "click", "pixel": [x, y], "view": view_json(), "t": 0.0, "theta": 0.6}),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let sel: SelectResponse = serde_json::from_slice(&body).unwrap();
    assert_eq!(sel.gaussian_ids, cli.selection.gaussian_ids);
    assert_eq!(sel.selection_token, cli.selection_token);

    let b64 = base64::engine::general_purpose::STANDARD;
    for (t, file) in &cli.masks {
        let uri = format!("/timeline?selection_token={}&t={t}", sel.selection_token);
        let (status, body) = get(&app, &uri).await;
        assert_eq!(status, StatusCode::OK);
        let tl: TimelineResponse = serde_json::from_slice(&body).unwrap();
        assert_eq!(tl.count, sel.count);
        let served = image::load_from_memory(&b64.decode(&tl.mask).unwrap())
            .unwrap()
            .to_luma8();
        let written = image::open(file).unwrap().to_luma8();
        assert_eq!(served, written, "mask at t={t}");
    }
}

#[tokio::test]
async fn concurrent_requests_all_succeed() {
    let (app, _) = app();
    let reqs = (0..6).map(|k| {
        let app = app.clone();
        async move {
            get(
                &app,
                &format!(
                    "/render?azimuth={}&elevation=5&radius=4&w=24&h=24&t=0.1",
                    10 * k
                ),
            )
            .await
            .0
        }
    });
    for status in futures_join(reqs).await {
        assert_eq!(status, StatusCode::OK);
    }
}

async fn futures_join<F: std::future::Future<Output = StatusCode> + Send + 'static>(
    futs: impl Iterator<Item = F>,
) -> Vec<StatusCode> {
    let handles: Vec<_> = futs.map(tokio::spawn).collect();
    let mut out = Vec::new();
    for h in handles {
        out.push(h.await.unwrap());
    }
    out
}
