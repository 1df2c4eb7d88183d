//! Two-blob synthetic scenes with known geometry, motion and semantics.
//!
//! Cluster A translates linearly in time, cluster B is static. Their
//! colors differ and their features are noisy copies of two orthogonal unit
//! vectors. Cameras sweep an arc whose azimuth advances with time, so each
//! time is seen from one view, as in a monocular video. Because the
//! generator is itself a Gaussian scene, ground-truth images, feature maps
//! and object masks at any camera and time come from the rasterizer.

use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{
    save_manifest, save_rgba, write_feature_map, write_mask, write_pointcloud, DatasetManifest,
    FrameRecord, PointCloud,
};
use crate::raster::{render, Camera, Orbit, RenderOptions, RenderOutput};
use crate::scene::{logit, GaussianSet};
use crate::semantics::{Mask, DEFAULT_MASK_ALPHA};

pub const CLUSTER_A: u8 = 0;
pub const CLUSTER_B: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub num_frames: usize,
    pub num_test_frames: usize,
    pub gaussians_per_cluster: usize,
    pub feature_dim: usize,
    pub width: usize,
    pub height: usize,
    /// Displacement of cluster A between `t = 0` and `t = 1`.
    pub velocity: [f64; 3],
    pub center_a: [f64; 3],
    pub center_b: [f64; 3],
    /// Standard deviation of positions around each cluster centre.
    pub cluster_spread: f64,
    /// Standard deviation of the per-component feature noise.
    pub feature_noise: f64,
    /// Standard deviation of the noise added to initial point positions.
    pub init_noise: f64,
    pub orbit_radius: f64,
    pub elevation_deg: f64,
    pub azimuth_start_deg: f64,
    pub azimuth_end_deg: f64,
    pub fov_y_deg: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::two_blob(0)
    }
}

impl SynthConfig {
    /// The `two-blob` preset: 2 × 256 Gaussians, 24 frames, `C = 8`.
    pub fn two_blob(seed: u64) -> Self {
        Self {
            seed,
            num_frames: 24,
            num_test_frames: 6,
            gaussians_per_cluster: 256,
            feature_dim: 8,
            width: 128,
            height: 128,
            velocity: [0.0, 0.0, 0.5],
            center_a: [-0.45, 0.0, -0.2],
            center_b: [0.45, 0.0, 0.0],
            cluster_spread: 0.1,
            feature_noise: 0.01,
            init_noise: 0.01,
            orbit_radius: 3.0,
            elevation_deg: 15.0,
            azimuth_start_deg: -50.0,
            azimuth_end_deg: 50.0,
            fov_y_deg: 40.0,
        }
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "two-blob" => Ok(Self::two_blob(seed)),
            "two-blob-small" => Ok(Self {
                num_frames: 8,
                num_test_frames: 2,
                gaussians_per_cluster: 32,
                width: 48,
                height: 48,
                ..Self::two_blob(seed)
            }),
            other => Err(Error::InvalidArgument(format!(
                "unknown preset '{other}' (expected two-blob or two-blob-small)"
            ))),
        }
    }

    fn azimuth(&self, t: f64) -> f64 {
        self.azimuth_start_deg + (self.azimuth_end_deg - self.azimuth_start_deg) * t
    }

    pub fn orbit_at(&self, t: f64) -> Orbit {
        Orbit {
            azimuth_deg: self.azimuth(t),
            elevation_deg: self.elevation_deg,
            radius: self.orbit_radius,
            target: [0.0; 3],
            fov_y_deg: self.fov_y_deg,
        }
    }

    /// Camera of the monocular sweep at time `t`.
    pub fn camera_at(&self, t: f64) -> Camera {
        Camera::orbit(&self.orbit_at(t), self.width, self.height).expect("preset camera is valid")
    }

    pub fn train_times(&self) -> Vec<f64> {
        let n = self.num_frames;
        (0..n)
            .map(|k| {
                if n == 1 {
                    0.0
                } else {
                    k as f64 / (n - 1) as f64
                }
            })
            .collect()
    }

    /// Held-out times fall halfway between training times, spread over the
    /// sequence.
    pub fn test_times(&self) -> Vec<f64> {
        let n = self.num_frames.max(2);
        let m = self.num_test_frames;
        (0..m)
            .map(|j| {
                let k = ((2 * j + 1) * (n - 1)) / (2 * m).max(1);
                (k.min(n - 2) as f64 + 0.5) / (n - 1) as f64
            })
            .collect()
    }
}

/// Generator truth: canonical Gaussians (at `t = 0`), cluster labels and
/// the linear motion of cluster A.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub config: SynthConfig,
    pub cluster: Vec<u8>,
    pub cluster_means: [Vec<f64>; 2],
    pub positions: Vec<f64>,
    pub rotations: Vec<f64>,
    pub log_scales: Vec<f64>,
    pub opacity_logits: Vec<f64>,
    pub color_logits: Vec<f64>,
    pub features: Vec<f64>,
}

impl SyntheticScene {
    pub fn generate(config: &SynthConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let c = config.feature_dim.max(2);
        let spread = Normal::new(0.0, config.cluster_spread).expect("valid spread");
        let fnoise = Normal::new(0.0, config.feature_noise).expect("valid noise");
        let mut mean_a = vec![0.0; c];
        let mut mean_b = vec![0.0; c];
        mean_a[0] = 1.0;
        mean_b[1] = 1.0;
        let base_colors = [[0.9, 0.25, 0.15], [0.15, 0.45, 0.9]];
        let n = 2 * config.gaussians_per_cluster;
        let mut s = Self {
            config: SynthConfig {
                feature_dim: c,
                ..config.clone()
            },
            cluster: Vec::with_capacity(n),
            cluster_means: [mean_a, mean_b],
            positions: Vec::with_capacity(3 * n),
            rotations: Vec::with_capacity(4 * n),
            log_scales: Vec::with_capacity(3 * n),
            opacity_logits: Vec::with_capacity(n),
            color_logits: Vec::with_capacity(3 * n),
            features: Vec::with_capacity(c * n),
        };
        for k in 0..2u8 {
            let center = if k == CLUSTER_A {
                config.center_a
            } else {
                config.center_b
            };
            for _ in 0..config.gaussians_per_cluster {
                s.cluster.push(k);
                for a in 0..3 {
                    s.positions.push(center[a] + spread.sample(&mut rng));
                }
                let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3);
                s.rotations.extend(q.map(|v| v / qn));
                let base = rng.random_range(0.03f64..0.05).ln();
                for _ in 0..3 {
                    s.log_scales.push(base + rng.random_range(-0.3..0.3));
                }
                s.opacity_logits.push(logit(rng.random_range(0.85..0.95)));
                for ch in 0..3 {
                    let v: f64 = base_colors[k as usize][ch] + rng.random_range(-0.05..0.05);
                    s.color_logits.push(logit(v.clamp(0.02, 0.98)));
                }
                let mean = &s.cluster_means[k as usize];
                for ch in 0..c {
                    s.features.push(mean[ch] + fnoise.sample(&mut rng));
                }
            }
        }
        s
    }

    pub fn len(&self) -> usize {
        self.cluster.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cluster.is_empty()
    }

    pub fn ids_of(&self, cluster: u8) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.cluster[i] == cluster)
            .collect()
    }

    /// Cluster-A displacement at time `t`.
    pub fn offset_at(&self, t: f64) -> Vector3<f64> {
        Vector3::from(self.config.velocity) * t
    }

    /// All generator Gaussians posed at time `t`.
    pub fn gaussians_at(&self, t: f64) -> GaussianSet {
        let mut positions = self.positions.clone();
        let d = self.offset_at(t);
        for (i, k) in self.cluster.iter().enumerate() {
            if *k == CLUSTER_A {
                for a in 0..3 {
                    positions[3 * i + a] += d[a];
                }
            }
        }
        GaussianSet::from_parts(
            positions,
            self.rotations.clone(),
            self.log_scales.clone(),
            self.opacity_logits.clone(),
            self.color_logits.clone(),
            self.features.clone(),
            self.config.feature_dim,
        )
        .expect("generator sizes are consistent")
    }

    pub fn render(&self, camera: &Camera, t: f64) -> RenderOutput {
        render(&self.gaussians_at(t), camera, &RenderOptions::default())
    }

    /// Ground-truth mask of one cluster: its Gaussians alone, posed at `t`,
    /// with accumulated alpha at least [`DEFAULT_MASK_ALPHA`].
    pub fn oracle_mask(&self, cluster: u8, camera: &Camera, t: f64) -> Mask {
        let subset = self.gaussians_at(t).subset(&self.ids_of(cluster));
        let out = render(&subset, camera, &RenderOptions::default());
        Mask {
            width: camera.width,
            height: camera.height,
            data: out
                .alpha
                .data
                .iter()
                .map(|a| *a >= DEFAULT_MASK_ALPHA)
                .collect(),
        }
    }

    /// Noisy copy of the `t = 0` positions with the true colors, used as
    /// the initial point cloud.
    pub fn initial_pointcloud(&self) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x9e37_79b9);
        let noise = Normal::new(0.0, self.config.init_noise.max(1e-12)).expect("valid noise");
        let g = self.gaussians_at(0.0);
        PointCloud {
            points: (0..g.len())
                .map(|i| {
                    let p = g.position(i);
                    [
                        p.x + noise.sample(&mut rng),
                        p.y + noise.sample(&mut rng),
                        p.z + noise.sample(&mut rng),
                    ]
                })
                .collect(),
            colors: (0..g.len()).map(|i| g.color(i).into()).collect(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Parse(e.to_string()))?;
        Ok(fs::write(path, text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        serde_json::from_str(&fs::read_to_string(path)?)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}

/// File names written by [`write_dataset`].
pub const MANIFEST: &str = "manifest.json";
pub const TEST_MANIFEST: &str = "test_manifest.json";
pub const TRUTH: &str = "truth.json";
pub const POINTCLOUD: &str = "points.ply";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthSummary {
    pub num_frames: usize,
    pub num_test_frames: usize,
    pub num_gaussians: usize,
}

fn write_split(
    scene: &SyntheticScene,
    dir: &Path,
    prefix: &str,
    times: &[f64],
) -> Result<Vec<FrameRecord>> {
    let mut records = Vec::with_capacity(times.len());
    for (k, &t) in times.iter().enumerate() {
        let cam = scene.config.camera_at(t);
        let out = scene.render(&cam, t);
        let image = format!("images/{prefix}{k:03}.png");
        let features = format!("features/{prefix}{k:03}.dgdf");
        save_rgba(dir.join(&image), &out.color, &out.alpha)?;
        write_feature_map(dir.join(&features), &out.feature)?;
        for (cluster, tag) in [(CLUSTER_A, "a"), (CLUSTER_B, "b")] {
            let mask = scene.oracle_mask(cluster, &cam, t);
            write_mask(dir.join(format!("masks/{prefix}{tag}_{k:03}.png")), &mask)?;
        }
        records.push(FrameRecord::from_camera(image, Some(features), t, &cam));
    }
    Ok(records)
}

/// Writes training and held-out manifests, images, feature maps, per-cluster
/// masks (`masks/a_000.png`, `masks/b_000.png`, held-out ones prefixed
/// `test_`), the initial point cloud and the truth file.
pub fn write_dataset(scene: &SyntheticScene, dir: impl AsRef<Path>) -> Result<SynthSummary> {
    let dir = dir.as_ref();
    for sub in ["images", "features", "masks"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    let cfg = &scene.config;
    let train = write_split(scene, dir, "", &cfg.train_times())?;
    let test = write_split(scene, dir, "test_", &cfg.test_times())?;
    write_pointcloud(dir.join(POINTCLOUD), &scene.initial_pointcloud())?;
    let (num_frames, num_test_frames) = (train.len(), test.len());
    save_manifest(
        dir.join(MANIFEST),
        &DatasetManifest {
            frames: train,
            pointcloud: Some(POINTCLOUD.into()),
        },
    )?;
    save_manifest(
        dir.join(TEST_MANIFEST),
        &DatasetManifest {
            frames: test,
            pointcloud: None,
        },
    )?;
    scene.save(dir.join(TRUTH))?;
    Ok(SynthSummary {
        num_frames,
        num_test_frames,
        num_gaussians: scene.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{load_dataset, read_mask};

    #[test]
    fn preset_counts() {
        let s = SyntheticScene::generate(&SynthConfig::two_blob(0));
        assert_eq!(s.len(), 512);
        assert_eq!(s.ids_of(CLUSTER_A).len(), 256);
        assert_eq!(s.config.num_frames, 24);
        assert_eq!(s.config.feature_dim, 8);
        assert_eq!(s.config.train_times().len(), 24);
        let tt = s.config.test_times();
        assert_eq!(tt.len(), 6);
        assert!(tt.windows(2).all(|w| w[0] < w[1]));
        assert!(tt.iter().all(|t| *t > 0.0 && *t < 1.0));
    }

    #[test]
    fn features_cluster_around_orthogonal_means() {
        let s = SyntheticScene::generate(&SynthConfig::two_blob(1));
        let g = s.gaussians_at(0.0);
        for i in 0..s.len() {
            let f = g.feature(i);
            let (hi, lo) = if s.cluster[i] == CLUSTER_A {
                (f[0], f[1])
            } else {
                (f[1], f[0])
            };
            assert!(hi > 0.9 && lo.abs() < 0.1);
        }
    }

    #[test]
    fn moving_cluster_masks() {
        let s = SyntheticScene::generate(&SynthConfig::preset("two-blob-small", 2).unwrap());
        let cam = s.config.camera_at(0.0);
        let a0 = s.oracle_mask(CLUSTER_A, &cam, 0.0);
        let a1 = s.oracle_mask(CLUSTER_A, &cam, 1.0);
        let b0 = s.oracle_mask(CLUSTER_B, &cam, 0.0);
        let b1 = s.oracle_mask(CLUSTER_B, &cam, 1.0);
        assert!(a0.count() > 0 && b0.count() > 0);
        assert_ne!(a0, a1);
        assert_eq!(b0, b1);
    }

    #[test]
    fn dataset_is_deterministic_and_loadable() {
        let cfg = SynthConfig::preset("two-blob-small", 3).unwrap();
        let s = SyntheticScene::generate(&cfg);
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let sum = write_dataset(&s, d1.path()).unwrap();
        write_dataset(&SyntheticScene::generate(&cfg), d2.path()).unwrap();
        assert_eq!(sum.num_frames, 8);
        for f in [
            "manifest.json",
            "truth.json",
            "points.ply",
            "images/003.png",
            "features/003.dgdf",
            "masks/a_003.png",
        ] {
            assert_eq!(
                fs::read(d1.path().join(f)).unwrap(),
                fs::read(d2.path().join(f)).unwrap(),
                "{f}"
            );
        }
        let ds = load_dataset(d1.path().join(MANIFEST)).unwrap();
        assert_eq!(ds.frames.len(), 8);
        assert_eq!(ds.feature_dim(), Some(8));
        assert_eq!(ds.pointcloud.as_ref().unwrap().points.len(), 64);
        let back = SyntheticScene::load(d1.path().join(TRUTH)).unwrap();
        assert_eq!(back, s);
        let mask = read_mask(d1.path().join("masks/a_000.png")).unwrap();
        assert_eq!(mask, s.oracle_mask(CLUSTER_A, &cfg.camera_at(0.0), 0.0));
    }
}
