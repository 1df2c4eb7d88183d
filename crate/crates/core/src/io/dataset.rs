use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::binary::read_feature_map;
use super::images::load_image;
use super::ply::{read_pointcloud, PointCloud};
use crate::error::{Error, Result};
use crate::raster::{Camera, Image};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

/// One frame entry. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<String>,
    pub time: f64,
    pub intrinsics: Intrinsics,
    /// World-to-camera rotation, row-major.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl FrameRecord {
    pub fn from_camera(image: String, features: Option<String>, time: f64, cam: &Camera) -> Self {
        let r = cam.rotation;
        Self {
            image,
            features,
            time,
            intrinsics: Intrinsics {
                fx: cam.fx,
                fy: cam.fy,
                cx: cam.cx,
                cy: cam.cy,
                width: cam.width,
                height: cam.height,
            },
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: cam.translation.into(),
        }
    }

    pub fn camera(&self) -> Result<Camera> {
        let k = &self.intrinsics;
        Camera::new(
            k.fx,
            k.fy,
            k.cx,
            k.cy,
            k.width,
            k.height,
            Matrix3::from_row_slice(&self.rotation),
            Vector3::from(self.translation),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub frames: Vec<FrameRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pointcloud: Option<String>,
}

impl DatasetManifest {
    pub fn cameras(&self) -> Result<Vec<Camera>> {
        self.frames.iter().map(FrameRecord::camera).collect()
    }
}

/// A decoded training frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// `H×W×3` in `[0, 1]`, composited over black.
    pub image: Image,
    /// `H×W×1` coverage, for images stored with an alpha channel.
    pub alpha: Option<Image>,
    /// `H×W×C`, already at image resolution.
    pub features: Option<Image>,
    pub camera: Camera,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub frames: Vec<Frame>,
    pub pointcloud: Option<PointCloud>,
    pub manifest: DatasetManifest,
}

impl Dataset {
    /// Feature dimension shared by all frames, if any carry features.
    pub fn feature_dim(&self) -> Option<usize> {
        self.frames
            .iter()
            .find_map(|f| f.features.as_ref().map(|m| m.channels))
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    if manifest.frames.is_empty() {
        return Err(Error::Parse(format!(
            "{}: manifest has no frames",
            path.display()
        )));
    }
    for f in &manifest.frames {
        if !(0.0..=1.0).contains(&f.time) {
            return Err(Error::TimeOutOfRange(f.time));
        }
    }
    Ok(manifest)
}

pub fn save_manifest(path: impl AsRef<Path>, manifest: &DatasetManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest).map_err(|e| Error::Parse(e.to_string()))?;
    Ok(fs::write(path, text)?)
}

fn resolve(base: &Path, rel: &str) -> Result<PathBuf> {
    let p = base.join(rel);
    if p.exists() {
        Ok(p)
    } else {
        Err(Error::MissingFile(p))
    }
}

/// Reads the manifest and every file it references. Feature maps whose
/// size differs from their image are resized with [`upsample_bilinear`].
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    let manifest_path = manifest_path.as_ref();
    let manifest = load_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut frames = Vec::with_capacity(manifest.frames.len());
    let mut channels: Option<usize> = None;
    for rec in &manifest.frames {
        let camera = rec.camera()?;
        let (image, alpha) = load_image(resolve(base, &rec.image)?)?;
        if image.width != camera.width || image.height != camera.height {
            return Err(Error::DimensionMismatch {
                expected: camera.width * camera.height,
                found: image.width * image.height,
            });
        }
        let features = match &rec.features {
            None => None,
            Some(p) => {
                let map = read_feature_map(resolve(base, p)?)?;
                match channels {
                    Some(c) if c != map.channels => {
                        return Err(Error::DimensionMismatch {
                            expected: c,
                            found: map.channels,
                        })
                    }
                    _ => channels = Some(map.channels),
                }
                Some(upsample_bilinear(&map, image.width, image.height))
            }
        };
        frames.push(Frame {
            image,
            alpha,
            features,
            camera,
            time: rec.time,
        });
    }
    let pointcloud = match &manifest.pointcloud {
        Some(p) => Some(read_pointcloud(resolve(base, p)?)?),
        None => None,
    };
    Ok(Dataset {
        frames,
        pointcloud,
        manifest,
    })
}

/// Corner-aligned bilinear resize: output pixel `x` samples source
/// coordinate `x·(w_src − 1)/(w − 1)`, so the four corners are copied
/// exactly. Returns a clone when the size already matches.
pub fn upsample_bilinear(src: &Image, width: usize, height: usize) -> Image {
    if src.width == width && src.height == height {
        return src.clone();
    }
    let c = src.channels;
    let mut out = Image::zeros(width, height, c);
    let scale = |n_src: usize, n: usize| {
        if n <= 1 {
            0.0
        } else {
            (n_src - 1) as f64 / (n - 1) as f64
        }
    };
    let (sx, sy) = (scale(src.width, width), scale(src.height, height));
    for y in 0..height {
        let fy = y as f64 * sy;
        let y0 = (fy.floor() as usize).min(src.height - 1);
        let y1 = (y0 + 1).min(src.height - 1);
        let wy = fy - y0 as f64;
        for x in 0..width {
            let fx = x as f64 * sx;
            let x0 = (fx.floor() as usize).min(src.width - 1);
            let x1 = (x0 + 1).min(src.width - 1);
            let wx = fx - x0 as f64;
            let (p00, p10, p01, p11) = (
                src.pixel(x0, y0),
                src.pixel(x1, y0),
                src.pixel(x0, y1),
                src.pixel(x1, y1),
            );
            let dst = out.pixel_mut(x, y);
            for k in 0..c {
                let top = p00[k] + wx * (p10[k] - p00[k]);
                let bottom = p01[k] + wx * (p11[k] - p01[k]);
                dst[k] = top + wy * (bottom - top);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{save_rgb, write_feature_map};

    #[test]
    fn bilinear_corners_and_midpoints() {
        let src = Image::from_data(2, 2, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let up = upsample_bilinear(&src, 5, 3);
        assert_eq!(up.get(0, 0, 0), 0.0);
        assert_eq!(up.get(4, 0, 0), 1.0);
        assert_eq!(up.get(0, 2, 0), 2.0);
        assert_eq!(up.get(4, 2, 0), 3.0);
        // Centre: average of all four.
        assert!((up.get(2, 1, 0) - 1.5).abs() < 1e-12);
        assert!((up.get(1, 0, 0) - 0.25).abs() < 1e-12);
    }

    fn write_one_frame(dir: &Path, time: f64, feat: (usize, usize, usize)) -> PathBuf {
        let cam = Camera::look_at(
            Vector3::new(0.0, -3.0, 0.0),
            Vector3::zeros(),
            Vector3::z(),
            45.0,
            8,
            4,
        )
        .unwrap();
        let img =
            Image::from_data(8, 4, 3, (0..96).map(|i| (i % 7) as f64 / 6.0).collect()).unwrap();
        save_rgb(dir.join("f0.png"), &img).unwrap();
        let (w, h, c) = feat;
        let map = Image::from_data(w, h, c, (0..w * h * c).map(|i| i as f64).collect()).unwrap();
        write_feature_map(dir.join("f0.dgdf"), &map).unwrap();
        let manifest = DatasetManifest {
            frames: vec![FrameRecord::from_camera(
                "f0.png".into(),
                Some("f0.dgdf".into()),
                time,
                &cam,
            )],
            pointcloud: None,
        };
        let path = dir.join("manifest.json");
        save_manifest(&path, &manifest).unwrap();
        path
    }

    #[test]
    fn minimal_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_one_frame(dir.path(), 0.5, (2, 1, 3));
        let ds = load_dataset(&path).unwrap();
        assert_eq!(ds.frames.len(), 1);
        let f = &ds.frames[0];
        assert_eq!((f.image.width, f.image.height), (8, 4));
        let feat = f.features.as_ref().unwrap();
        assert_eq!((feat.width, feat.height, feat.channels), (8, 4, 3));
        assert_eq!(feat.pixel(7, 3), &[3.0, 4.0, 5.0]);
        assert_eq!(ds.feature_dim(), Some(3));
        assert!((f.image.get(1, 0, 0) - 3.0 / 6.0).abs() < 1.0 / 255.0);
    }

    #[test]
    fn time_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_one_frame(dir.path(), 1.5, (2, 1, 3));
        assert!(matches!(load_dataset(&path), Err(Error::TimeOutOfRange(t)) if t == 1.5));
    }

    #[test]
    fn missing_and_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_one_frame(dir.path(), 0.0, (2, 1, 3));
        fs::remove_file(dir.path().join("f0.dgdf")).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::MissingFile(_))));
        fs::write(&path, "{ not json").unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Parse(_))));
    }

    #[test]
    fn inconsistent_feature_dim() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_one_frame(dir.path(), 0.0, (2, 1, 3));
        let mut m = load_manifest(&path).unwrap();
        let mut second = m.frames[0].clone();
        second.features = Some("f1.dgdf".into());
        m.frames.push(second);
        write_feature_map(dir.path().join("f1.dgdf"), &Image::zeros(2, 1, 4)).unwrap();
        save_manifest(&path, &m).unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(Error::DimensionMismatch {
                expected: 3,
                found: 4
            })
        ));
    }
}
