//! File formats: XYZ point cloud text files and OFF triangle meshes.
//!
//! XYZ: one point per line, three whitespace-separated decimals, optional
//! fourth integer column carrying a part label. OFF: the standard header,
//! counts line, vertex lines, then face lines whose first number is the
//! per-face vertex count (fans are triangulated).

use std::fs;
use std::path::Path;

use crate::geometry::{PointCloud, TriangleMesh, Vec3};
use crate::{Error, Result};

pub fn read_xyz(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path)?;
    parse_xyz(&text, path)
}

pub fn parse_xyz(text: &str, path: &Path) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut labels: Vec<u32> = Vec::new();
    let mut saw_label = false;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 && fields.len() != 4 {
            return Err(err(format!(
                "expected 3 coordinates (plus optional label), got {} fields",
                fields.len()
            )));
        }
        let mut p: Vec3 = [0.0; 3];
        for k in 0..3 {
            p[k] = fields[k]
                .parse::<f64>()
                .map_err(|_| err(format!("invalid coordinate '{}'", fields[k])))?;
            if !p[k].is_finite() {
                return Err(err(format!("non-finite coordinate '{}'", fields[k])));
            }
        }
        if fields.len() == 4 {
            let label = fields[3]
                .parse::<u32>()
                .map_err(|_| err(format!("invalid label '{}'", fields[3])))?;
            if !saw_label && !points.is_empty() {
                return Err(err("label column appears only on some lines".into()));
            }
            saw_label = true;
            labels.push(label);
        } else if saw_label {
            return Err(err("label column appears only on some lines".into()));
        }
        points.push(p);
    }
    if points.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "file contains no points".into(),
        });
    }
    Ok(PointCloud {
        points,
        labels: saw_label.then_some(labels),
    })
}

pub fn write_xyz(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut out = String::new();
    for (i, p) in cloud.points.iter().enumerate() {
        out.push_str(&format!("{:.6} {:.6} {:.6}", p[0], p[1], p[2]));
        if let Some(labels) = &cloud.labels {
            out.push_str(&format!(" {}", labels[i]));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_off(path: &Path) -> Result<TriangleMesh> {
    let text = fs::read_to_string(path)?;
    parse_off(&text, path)
}

pub fn parse_off(text: &str, path: &Path) -> Result<TriangleMesh> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    // (line number, content) with comments and blanks stripped
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (hline, header) = lines
        .next()
        .ok_or_else(|| err(0, "empty OFF file".into()))?;
    // some exporters put the counts on the header line ("OFF 8 6 12")
    let (cline, counts_fields): (usize, Vec<&str>) = if header == "OFF" {
        let (l, c) = lines
            .next()
            .ok_or_else(|| err(hline, "missing counts line".into()))?;
        (l, c.split_whitespace().collect())
    } else if let Some(rest) = header.strip_prefix("OFF") {
        (hline, rest.split_whitespace().collect())
    } else {
        return Err(err(hline, format!("expected OFF header, got '{header}'")));
    };
    if counts_fields.len() < 2 {
        return Err(err(cline, "counts line needs vertex and face counts".into()));
    }
    let n_vertices: usize = counts_fields[0]
        .parse()
        .map_err(|_| err(cline, format!("invalid vertex count '{}'", counts_fields[0])))?;
    let n_faces: usize = counts_fields[1]
        .parse()
        .map_err(|_| err(cline, format!("invalid face count '{}'", counts_fields[1])))?;

    let mut vertices = Vec::with_capacity(n_vertices);
    for _ in 0..n_vertices {
        let (l, line) = lines
            .next()
            .ok_or_else(|| err(cline, "unexpected end of file in vertex list".into()))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 3 {
            return Err(err(l, format!("vertex line has {} fields", fields.len())));
        }
        let mut v: Vec3 = [0.0; 3];
        for k in 0..3 {
            v[k] = fields[k]
                .parse()
                .map_err(|_| err(l, format!("invalid coordinate '{}'", fields[k])))?;
        }
        vertices.push(v);
    }
    let mut faces = Vec::with_capacity(n_faces);
    for _ in 0..n_faces {
        let (l, line) = lines
            .next()
            .ok_or_else(|| err(cline, "unexpected end of file in face list".into()))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let count: usize = fields[0]
            .parse()
            .map_err(|_| err(l, format!("invalid face vertex count '{}'", fields[0])))?;
        if count < 3 || fields.len() < 1 + count {
            return Err(err(l, format!("face line declares {count} vertices but has {} fields", fields.len())));
        }
        let mut idx = Vec::with_capacity(count);
        for f in &fields[1..1 + count] {
            let i: usize = f
                .parse()
                .map_err(|_| err(l, format!("invalid vertex index '{f}'")))?;
            if i >= n_vertices {
                return Err(err(l, format!("vertex index {i} out of range")));
            }
            idx.push(i);
        }
        // triangulate as a fan
        for t in 1..count - 1 {
            faces.push([idx[0], idx[t], idx[t + 1]]);
        }
    }
    Ok(TriangleMesh { vertices, faces })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn p() -> PathBuf {
        PathBuf::from("test.xyz")
    }

    #[test]
    fn parse_two_point_file() {
        let cloud = parse_xyz("0 0 0\n1 0 0", &p()).unwrap();
        assert_eq!(cloud.len(), 2);
        assert!(cloud.labels.is_none());
    }

    #[test]
    fn parse_labeled_file() {
        let cloud = parse_xyz("0 0 0 1\n1 0 0 0", &p()).unwrap();
        assert_eq!(cloud.labels, Some(vec![1, 0]));
    }

    #[test]
    fn parse_error_names_line() {
        let err = parse_xyz("0 0 0\n1 banana 0", &p()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":2:"), "{msg}");
        assert!(msg.contains("banana"), "{msg}");
    }

    #[test]
    fn xyz_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cloud.xyz");
        let cloud = PointCloud::with_labels(
            vec![[0.125, -3.5, 2.0], [1.0, 2.0, 3.0]],
            vec![0, 1],
        );
        write_xyz(&path, &cloud).unwrap();
        let back = read_xyz(&path).unwrap();
        for (a, b) in cloud.points.iter().zip(&back.points) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-6);
            }
        }
        assert_eq!(cloud.labels, back.labels);
    }

    #[test]
    fn parse_cube_off() {
        let text = "OFF\n4 2 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n3 0 1 2\n4 0 1 2 3\n";
        let mesh = parse_off(text, &PathBuf::from("m.off")).unwrap();
        assert_eq!(mesh.vertices.len(), 4);
        // the quad face triangulates into two triangles
        assert_eq!(mesh.faces.len(), 3);
    }

    #[test]
    fn parse_off_header_with_counts() {
        let text = "OFF 3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";
        let mesh = parse_off(text, &PathBuf::from("m.off")).unwrap();
        assert_eq!(mesh.faces.len(), 1);
    }

    #[test]
    fn parse_off_bad_index() {
        let text = "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n";
        assert!(parse_off(text, &PathBuf::from("m.off")).is_err());
    }
}
