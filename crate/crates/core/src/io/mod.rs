//! File formats: dataset manifests, feature maps, query embeddings,
//! checkpoints, point clouds and 8-bit images.
//!
//! All binary formats are little-endian with a four-byte magic and a `u32`
//! version, store values as `f32`, and are rejected if truncated or followed
//! by trailing bytes.

mod binary;
mod dataset;
mod images;
mod ply;

pub use binary::{
    decode_checkpoint, decode_feature_map, decode_query_embedding, encode_checkpoint,
    encode_feature_map, encode_query_embedding, load_checkpoint, read_feature_map,
    read_query_embedding, save_checkpoint, write_feature_map, write_query_embedding, Checkpoint,
    FORMAT_VERSION,
};
pub use dataset::{
    load_dataset, load_manifest, save_manifest, upsample_bilinear, Dataset, DatasetManifest, Frame,
    FrameRecord, Intrinsics,
};
pub use images::{
    encode_png_mask, encode_png_rgb, load_image, load_rgb, read_mask, save_rgb, save_rgba, to_rgb8,
    write_mask,
};
pub use ply::{parse_pointcloud, read_pointcloud, write_pointcloud, PointCloud};
