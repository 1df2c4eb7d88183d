//! Render throughput and tiled versus brute-force timing.
//!
//! cargo run --release --example bench_render -- [num_gaussians] [size]

use semsplat::bench::{bench_render, orbit_sequence, time_tiled_vs_brute};
use semsplat::deformation::{DeformationField, FourierEncodingConfig};
use semsplat::raster::RenderOptions;
use semsplat::scene::{init_random, Aabb};

fn main() -> semsplat::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(20_000);
    let size: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(256);
    let g = init_random(n, Aabb::new([-1.0; 3], [1.0; 3]), 8, 0)?;
    let field = DeformationField::new(FourierEncodingConfig::default(), 4, 64, 0)?;
    let views = orbit_sequence(10, 4.0, size, size)?;
    let options = RenderOptions::default();
    print!("{}", bench_render(&g, &field, &views, &options)?.to_table());
    let (tiled, brute) = time_tiled_vs_brute(&g, &views[0].0, &options);
    println!(
        "tiled {:.1} ms, brute force {:.1} ms ({:.1}x)",
        tiled * 1e3,
        brute * 1e3,
        brute / tiled
    );
    Ok(())
}
