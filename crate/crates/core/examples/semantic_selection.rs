//! Selects Gaussians by click and by embedding on a briefly trained scene,
//! then follows the clicked object through time.
//!
//! cargo run --release --example semantic_selection

use semsplat::commands::{cmd_synth, cmd_train, TrainArgs};
use semsplat::io::load_checkpoint;
use semsplat::semantics::{
    render_segmentation_mask, select_by_click, select_by_embedding, DEFAULT_MASK_ALPHA,
};
use semsplat::synth::{SyntheticScene, CLUSTER_A, CLUSTER_B, MANIFEST, TRUTH};

fn main() -> semsplat::Result<()> {
    let dir = std::env::temp_dir().join("semsplat-selection");
    cmd_synth(&dir.join("data"), "two-blob-small", 1)?;
    let done = cmd_train(
        &TrainArgs {
            data: dir.join("data").join(MANIFEST),
            out: dir.join("run"),
            iters: 800,
            warmup: 150,
            mlp_depth: 3,
            mlp_width: 32,
            ..TrainArgs::default()
        },
        |_| {},
    )?;
    let ckpt = load_checkpoint(&done.checkpoint)?;
    let truth = SyntheticScene::load(dir.join("data").join(TRUTH))?;
    let (g, field) = (&ckpt.gaussians, &ckpt.field);

    for theta in [0.3, 0.6, 0.9] {
        let a = select_by_embedding(g, &truth.cluster_means[CLUSTER_A as usize], theta)?;
        let b = select_by_embedding(g, &truth.cluster_means[CLUSTER_B as usize], theta)?;
        println!(
            "theta {theta}: query A selects {}, query B selects {} of {}",
            a.len(),
            b.len(),
            g.len()
        );
    }

    let cam = truth.config.camera_at(0.0);
    let oracle = truth.oracle_mask(CLUSTER_A, &cam, 0.0);
    let pixel = (0..oracle.height)
        .flat_map(|y| (0..oracle.width).map(move |x| (x, y)))
        .find(|&(x, y)| oracle.get(x, y))
        .expect("cluster A is visible");
    let sel = select_by_click(g, field, &cam, 0.0, pixel, 0.7)?;
    println!("click at {pixel:?} selects {} Gaussians", sel.len());
    for t in [0.0, 0.5, 1.0] {
        let view = truth.config.camera_at(t);
        let mask =
            render_segmentation_mask(g, field, &sel.gaussian_ids, &view, t, DEFAULT_MASK_ALPHA)?;
        let iou = mask.iou(&truth.oracle_mask(CLUSTER_A, &view, t))?;
        println!("t={t}: {} mask pixels, IoU vs truth {iou:.3}", mask.count());
    }
    Ok(())
}
