//! Mean IoU of an embedding query on the ground-truth scene against the
//! generator's masks.
//!
//! cargo run --release --example eval_miou

use semsplat::commands::{cmd_eval_miou, cmd_synth, EvalArgs, QuerySpec};
use semsplat::deformation::{DeformationField, FourierEncodingConfig};
use semsplat::io::{save_checkpoint, write_query_embedding, Checkpoint};
use semsplat::semantics::DEFAULT_MASK_ALPHA;
use semsplat::synth::{SyntheticScene, CLUSTER_B, MANIFEST, TRUTH};

fn main() -> semsplat::Result<()> {
    let dir = std::env::temp_dir().join("semsplat-miou");
    cmd_synth(&dir, "two-blob-small", 0)?;
    let truth = SyntheticScene::load(dir.join(TRUTH))?;
    // Cluster B does not move, so the t = 0 scene with an identity field is exact for it.
    let ckpt = Checkpoint {
        gaussians: truth.gaussians_at(0.0),
        field: DeformationField::zeros(FourierEncodingConfig::default(), 2, 16)?,
        iteration: 0,
    };
    save_checkpoint(dir.join("truth.dgdc"), &ckpt)?;
    write_query_embedding(dir.join("b.dgdq"), &truth.cluster_means[CLUSTER_B as usize])?;

    let table = cmd_eval_miou(&EvalArgs {
        ckpt: dir.join("truth.dgdc"),
        data: dir.join(MANIFEST),
        masks: dir.join("masks"),
        prefix: "b_".into(),
        query: QuerySpec::Embedding(dir.join("b.dgdq")),
        theta: 0.7,
        mask_alpha: DEFAULT_MASK_ALPHA,
        scene: "two-blob-small".into(),
    })?;
    print!("{}", table.to_table());
    Ok(())
}
