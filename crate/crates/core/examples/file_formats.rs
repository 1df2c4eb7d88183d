//! Round trips through every on-disk format.
//!
//! cargo run --release --example file_formats

use semsplat::deformation::{DeformationField, FourierEncodingConfig};
use semsplat::io::{
    encode_checkpoint, load_checkpoint, read_feature_map, read_pointcloud, read_query_embedding,
    save_checkpoint, write_feature_map, write_pointcloud, write_query_embedding, Checkpoint,
    PointCloud,
};
use semsplat::raster::Image;
use semsplat::scene::{init_random, Aabb};

fn main() -> semsplat::Result<()> {
    let dir = std::env::temp_dir().join("semsplat-formats");
    std::fs::create_dir_all(&dir)?;

    let cloud = PointCloud {
        points: vec![[0.0, 0.0, 0.0], [1.0, 0.5, -0.25]],
        colors: vec![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]],
    };
    write_pointcloud(dir.join("points.ply"), &cloud)?;
    println!(
        "PLY: {} points back",
        read_pointcloud(dir.join("points.ply"))?.points.len()
    );

    let map = Image::from_data(4, 2, 3, (0..24).map(|v| v as f64 * 0.125).collect())?;
    write_feature_map(dir.join("f.dgdf"), &map)?;
    println!(
        "feature map equal after round trip: {}",
        read_feature_map(dir.join("f.dgdf"))? == map
    );

    write_query_embedding(dir.join("q.dgdq"), &[0.5, -0.25, 1.0])?;
    println!("query: {:?}", read_query_embedding(dir.join("q.dgdq"))?);

    let ckpt = Checkpoint {
        gaussians: init_random(64, Aabb::unit(), 8, 3)?,
        field: DeformationField::new(FourierEncodingConfig::default(), 4, 32, 3)?,
        iteration: 1234,
    };
    save_checkpoint(dir.join("c.dgdc"), &ckpt)?;
    let back = load_checkpoint(dir.join("c.dgdc"))?;
    println!(
        "checkpoint: {} bytes, re-encodes identically: {}",
        std::fs::metadata(dir.join("c.dgdc"))?.len(),
        encode_checkpoint(&back)? == std::fs::read(dir.join("c.dgdc"))?
    );
    Ok(())
}
