//! Writes the synthetic two-blob dataset and prints what the generator
//! knows about it.
//!
//! cargo run --release --example synth_dataset -- [out_dir] [preset] [seed]

use semsplat::commands::cmd_synth;
use semsplat::synth::{SyntheticScene, CLUSTER_A, CLUSTER_B, TRUTH};

fn main() -> semsplat::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "two-blob".into());
    let preset = args.next().unwrap_or_else(|| "two-blob".into());
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);

    let summary = cmd_synth(out.as_ref(), &preset, seed)?;
    println!(
        "{out}: {} training frames, {} held-out frames, {} Gaussians",
        summary.num_frames, summary.num_test_frames, summary.num_gaussians
    );

    let scene = SyntheticScene::load(std::path::Path::new(&out).join(TRUTH))?;
    for (name, c) in [("A (moving)", CLUSTER_A), ("B (static)", CLUSTER_B)] {
        let m = &scene.cluster_means[c as usize];
        println!(
            "cluster {name}: {} Gaussians, feature mean {m:.2?}",
            scene.ids_of(c).len()
        );
    }
    println!(
        "cluster A offset at t=1: {:?}",
        scene.offset_at(1.0).as_slice()
    );
    Ok(())
}
