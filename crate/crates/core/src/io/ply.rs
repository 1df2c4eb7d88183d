use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Points with colors in `[0, 1]` (mid-grey when the file has none).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub colors: Vec<[f64; 3]>,
}

fn perr(msg: impl Into<String>) -> Error {
    Error::Parse(format!("ply: {}", msg.into()))
}

/// Parses an ASCII PLY. Only the `vertex` element is read; its `x`, `y`,
/// `z` properties are required and `red`, `green`, `blue` (0–255) optional.
pub fn parse_pointcloud(text: &str) -> Result<PointCloud> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(perr("missing 'ply' header"));
    }
    let mut count: Option<usize> = None;
    let mut in_vertex = false;
    let mut props: Vec<String> = Vec::new();
    let mut skip_before = 0usize;
    let mut seen_vertex = false;
    loop {
        let line = lines
            .next()
            .ok_or_else(|| perr("missing end_header"))?
            .trim();
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["format", fmt, ..] => {
                if *fmt != "ascii" {
                    return Err(perr(format!("unsupported format '{fmt}'")));
                }
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, n] => {
                let n: usize = n
                    .parse()
                    .map_err(|_| perr(format!("bad element count '{n}'")))?;
                in_vertex = *name == "vertex";
                if in_vertex {
                    count = Some(n);
                    seen_vertex = true;
                } else if !seen_vertex {
                    skip_before += n;
                }
            }
            ["property", "list", ..] => {
                if in_vertex {
                    return Err(perr("list properties on vertices are not supported"));
                }
            }
            ["property", _ty, name] => {
                if in_vertex {
                    props.push(name.to_string());
                }
            }
            _ => return Err(perr(format!("unexpected header line '{line}'"))),
        }
    }
    let n = count.ok_or_else(|| perr("no vertex element"))?;
    let idx = |name: &str| props.iter().position(|p| p == name);
    let (x, y, z) = match (idx("x"), idx("y"), idx("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(perr("vertex element lacks x, y, z")),
    };
    let rgb = match (idx("red"), idx("green"), idx("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };
    let mut body = lines.filter(|l| !l.trim().is_empty()).skip(skip_before);
    let mut cloud = PointCloud {
        points: Vec::with_capacity(n),
        colors: Vec::with_capacity(n),
    };
    for k in 0..n {
        let line = body
            .next()
            .ok_or_else(|| perr(format!("expected {n} vertices, found {k}")))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|w| {
                w.parse::<f64>()
                    .map_err(|_| perr(format!("bad number '{w}'")))
            })
            .collect::<Result<_>>()?;
        if vals.len() != props.len() {
            return Err(perr(format!(
                "vertex {k} has {} values, expected {}",
                vals.len(),
                props.len()
            )));
        }
        cloud.points.push([vals[x], vals[y], vals[z]]);
        cloud.colors.push(match rgb {
            Some([r, g, b]) => [vals[r] / 255.0, vals[g] / 255.0, vals[b] / 255.0],
            None => [0.5; 3],
        });
    }
    Ok(cloud)
}

pub fn read_pointcloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    parse_pointcloud(&fs::read_to_string(path)?)
}

/// ASCII PLY with float positions and 8-bit colors.
pub fn write_pointcloud(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let mut s = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        cloud.points.len()
    );
    for (p, c) in cloud.points.iter().zip(&cloud.colors) {
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        s.push_str(&format!(
            "{} {} {} {} {} {}\n",
            p[0] as f32,
            p[1] as f32,
            p[2] as f32,
            q(c[0]),
            q(c[1]),
            q(c[2])
        ));
    }
    Ok(fs::write(path, s)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_vertices_with_color() {
        let text = "ply\nformat ascii 1.0\ncomment test\nelement vertex 3\nproperty float x\nproperty float y\n\
                    property float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n\
                    0 0 0 255 0 0\n1 2 3 0 255 0\n-1 0.5 2 0 0 51\n";
        let pc = parse_pointcloud(text).unwrap();
        assert_eq!(
            pc.points,
            vec![[0.0, 0.0, 0.0], [1.0, 2.0, 3.0], [-1.0, 0.5, 2.0]]
        );
        assert_eq!(pc.colors[0], [1.0, 0.0, 0.0]);
        assert_eq!(pc.colors[2], [0.0, 0.0, 0.2]);
    }

    #[test]
    fn without_color_and_extra_props() {
        let text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float nx\nproperty float x\n\
                    property float y\nproperty float z\nelement face 0\nproperty list uchar int vertex_indices\n\
                    end_header\n9 1 2 3\n9 4 5 6\n";
        let pc = parse_pointcloud(text).unwrap();
        assert_eq!(pc.points, vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        assert_eq!(pc.colors, vec![[0.5; 3]; 2]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(parse_pointcloud("nope").is_err());
        assert!(parse_pointcloud("ply\nformat binary_little_endian 1.0\nend_header\n").is_err());
        let short = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n\
                     property float z\nend_header\n1 2 3\n";
        assert!(parse_pointcloud(short).is_err());
        let no_z = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n1 2\n";
        assert!(parse_pointcloud(no_z).is_err());
    }

    #[test]
    fn write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pc = PointCloud {
            points: vec![[0.5, -0.25, 1.0], [2.0, 3.0, 4.0]],
            colors: vec![[1.0, 0.0, 0.2], [0.0, 1.0, 0.4]],
        };
        let p = dir.path().join("p.ply");
        write_pointcloud(&p, &pc).unwrap();
        assert_eq!(read_pointcloud(&p).unwrap(), pc);
    }
}
