//! Serves the viewer API over the generator's ground-truth scene.
//!
//! cargo run --release --example serve_viewer -- [port]
//! curl 'http://127.0.0.1:8080/render?azimuth=0&elevation=15&radius=3&w=256&h=256&t=0.5' > view.png

use std::net::SocketAddr;
use std::sync::Arc;

use semsplat::deformation::{DeformationField, FourierEncodingConfig};
use semsplat::io::Checkpoint;
use semsplat::service::{serve, AppState, ServiceConfig};
use semsplat::synth::{SynthConfig, SyntheticScene};

#[tokio::main]
async fn main() -> std::io::Result<()> {
    let port: u16 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(8080);
    let scene = SyntheticScene::generate(&SynthConfig::two_blob(0));
    let checkpoint = Checkpoint {
        gaussians: scene.gaussians_at(0.0),
        field: DeformationField::zeros(FourierEncodingConfig::default(), 2, 16)
            .expect("valid field"),
        iteration: 0,
    };
    let cameras = scene
        .config
        .train_times()
        .into_iter()
        .map(|t| scene.config.camera_at(t))
        .collect();
    let state = Arc::new(AppState::new(checkpoint, cameras, ServiceConfig::default()));
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    println!("serving on http://{addr} (routes: /meta /render /select /timeline)");
    serve(state, addr).await
}
