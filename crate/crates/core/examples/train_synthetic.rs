//! Trains on the synthetic scene and reports held-out PSNR.
//!
//! cargo run --release --example train_synthetic -- [iterations] [preset]

use semsplat::commands::{cmd_synth, cmd_train, TrainArgs};
use semsplat::deformation::apply_deformation;
use semsplat::io::{load_checkpoint, load_dataset};
use semsplat::metrics::psnr;
use semsplat::raster::{render, RenderOptions};
use semsplat::synth::{MANIFEST, TEST_MANIFEST};

fn main() -> semsplat::Result<()> {
    let mut args = std::env::args().skip(1);
    let iters: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(1500);
    let preset = args.next().unwrap_or_else(|| "two-blob-small".into());
    let dir = std::env::temp_dir().join(format!("semsplat-train-{preset}"));
    cmd_synth(&dir.join("data"), &preset, 0)?;

    let args = TrainArgs {
        data: dir.join("data").join(MANIFEST),
        out: dir.join("run"),
        iters,
        warmup: iters / 6,
        mlp_depth: 8,
        mlp_width: 128,
        ..TrainArgs::default()
    };
    let every = (iters / 10).max(1);
    let done = cmd_train(&args, |r| {
        if r.iteration % every == 0 {
            println!(
                "iter {:>5}  loss {:.5}  color {:.5}  feature {:.6}  {} Gaussians",
                r.iteration, r.loss, r.color_loss, r.feature_loss, r.num_gaussians
            );
        }
    })?;
    println!("checkpoint: {}", done.checkpoint.display());

    let ckpt = load_checkpoint(&done.checkpoint)?;
    let test = load_dataset(dir.join("data").join(TEST_MANIFEST))?;
    for f in &test.frames {
        let posed = apply_deformation(&ckpt.gaussians, &ckpt.field, f.time)?;
        let out = render(&posed, &f.camera, &RenderOptions::default());
        println!(
            "held-out t={:.3}: {:.2} dB",
            f.time,
            psnr(&out.color, &f.image)?
        );
    }
    Ok(())
}
