//! Dataset assembly: XYZ directory loaders, procedural toy shapes with part
//! labels, deterministic splits and completion pairs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{
    self, normalize_unit_sphere, simulate_plane_cut, standard_normal, PointCloud,
};
use crate::io::read_xyz;
use crate::{Error, Result};

/// One dataset example. Part labels, when present, live on `cloud.labels`.
#[derive(Debug, Clone)]
pub struct Sample {
    pub cloud: PointCloud,
    pub class_label: u32,
    /// Paired complete cloud for completion tasks.
    pub complete: Option<PointCloud>,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeFamily {
    Sphere { radius: f64 },
    Box { half_extents: [f64; 3] },
    Cylinder { radius: f64, half_height: f64 },
    Cone { radius: f64, height: f64 },
    Torus { major: f64, minor: f64 },
}

impl ShapeFamily {
    pub fn name(&self) -> &'static str {
        match self {
            ShapeFamily::Sphere { .. } => "sphere",
            ShapeFamily::Box { .. } => "box",
            ShapeFamily::Cylinder { .. } => "cylinder",
            ShapeFamily::Cone { .. } => "cone",
            ShapeFamily::Torus { .. } => "torus",
        }
    }

    pub fn n_parts(&self) -> usize {
        match self {
            ShapeFamily::Box { .. } => 3,
            _ => 2,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            ShapeFamily::Sphere { radius } => *radius > 0.0,
            ShapeFamily::Box { half_extents } => half_extents.iter().all(|h| *h > 0.0),
            ShapeFamily::Cylinder { radius, half_height } => *radius > 0.0 && *half_height > 0.0,
            ShapeFamily::Cone { radius, height } => *radius > 0.0 && *height > 0.0,
            ShapeFamily::Torus { major, minor } => *major > 0.0 && *minor > 0.0 && minor < major,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "non-positive size parameters for {} shape",
                self.name()
            )))
        }
    }

    /// One surface-uniform point with its part label.
    fn sample_surface(&self, rng: &mut ChaCha8Rng) -> ([f64; 3], u32) {
        match *self {
            ShapeFamily::Sphere { radius } => {
                let p = unit_sphere_dir(rng);
                let label = if p[2] >= 0.0 { 0 } else { 1 };
                ([p[0] * radius, p[1] * radius, p[2] * radius], label)
            }
            ShapeFamily::Box { half_extents: h } => {
                // Face pair areas; part id = axis of the chosen face pair.
                let areas = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
                let total: f64 = areas.iter().sum();
                let mut pick = rng.gen::<f64>() * total;
                let mut axis = 0;
                for (i, a) in areas.iter().enumerate() {
                    if pick < *a || i == 2 {
                        axis = i;
                        break;
                    }
                    pick -= a;
                }
                let side = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let mut p = [0.0; 3];
                for k in 0..3 {
                    p[k] = if k == axis {
                        side * h[k]
                    } else {
                        rng.gen_range(-h[k]..h[k])
                    };
                }
                (p, axis as u32)
            }
            ShapeFamily::Cylinder { radius, half_height } => {
                let side_area = std::f64::consts::TAU * radius * 2.0 * half_height;
                let cap_area = 2.0 * std::f64::consts::PI * radius * radius;
                if rng.gen::<f64>() * (side_area + cap_area) < side_area {
                    let theta = rng.gen::<f64>() * std::f64::consts::TAU;
                    let z = rng.gen_range(-half_height..half_height);
                    ([radius * theta.cos(), radius * theta.sin(), z], 0)
                } else {
                    let z = if rng.gen::<bool>() { half_height } else { -half_height };
                    let (x, y) = uniform_disc(radius, rng);
                    ([x, y, z], 1)
                }
            }
            ShapeFamily::Cone { radius, height } => {
                // Apex at (0,0,height), base disc at z=0.
                let slant = (radius * radius + height * height).sqrt();
                let lateral_area = std::f64::consts::PI * radius * slant;
                let base_area = std::f64::consts::PI * radius * radius;
                if rng.gen::<f64>() * (lateral_area + base_area) < lateral_area {
                    // Uniform on the lateral surface: radial density grows
                    // linearly toward the base, so r = R*sqrt(u).
                    let theta = rng.gen::<f64>() * std::f64::consts::TAU;
                    let r = radius * rng.gen::<f64>().sqrt();
                    let z = height * (1.0 - r / radius);
                    ([r * theta.cos(), r * theta.sin(), z], 0)
                } else {
                    let (x, y) = uniform_disc(radius, rng);
                    ([x, y, 0.0], 1)
                }
            }
            ShapeFamily::Torus { major, minor } => {
                // Rejection in the tube angle for area-correct sampling:
                // surface density is proportional to major + minor*cos(v).
                let u = rng.gen::<f64>() * std::f64::consts::TAU;
                let v = loop {
                    let v = rng.gen::<f64>() * std::f64::consts::TAU;
                    let accept = (major + minor * v.cos()) / (major + minor);
                    if rng.gen::<f64>() < accept {
                        break v;
                    }
                };
                let ring = major + minor * v.cos();
                let p = [ring * u.cos(), ring * u.sin(), minor * v.sin()];
                let label = if v.cos() >= 0.0 { 0 } else { 1 };
                (p, label)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProceduralShapeSpec {
    pub family: ShapeFamily,
    pub points: usize,
    pub jitter_sigma: f64,
}

impl ProceduralShapeSpec {
    pub fn validate(&self) -> Result<()> {
        self.family.validate()?;
        if self.points < 64 {
            return Err(Error::InvalidArgument(format!(
                "procedural clouds need at least 64 points, got {}",
                self.points
            )));
        }
        if self.jitter_sigma < 0.0 {
            return Err(Error::InvalidArgument("jitter sigma must be >= 0".into()));
        }
        Ok(())
    }
}

fn unit_sphere_dir(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let p = [
            standard_normal(rng),
            standard_normal(rng),
            standard_normal(rng),
        ];
        let n = geometry::norm(p);
        if n > 1e-12 {
            return [p[0] / n, p[1] / n, p[2] / n];
        }
    }
}

fn uniform_disc(radius: f64, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let theta = rng.gen::<f64>() * std::f64::consts::TAU;
    let r = radius * rng.gen::<f64>().sqrt();
    (r * theta.cos(), r * theta.sin())
}

/// Generate `n_clouds` jittered, unit-normalized samples of one shape
/// family. Labels ride with point indices through normalization.
pub fn generate_procedural(
    spec: &ProceduralShapeSpec,
    n_clouds: usize,
    class_label: u32,
    seed: u64,
) -> Result<Vec<Sample>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(n_clouds);
    for i in 0..n_clouds {
        // Per-cloud stream so generation order never matters.
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ u64::from(class_label) << 32,
        );
        let mut points = Vec::with_capacity(spec.points);
        let mut labels = Vec::with_capacity(spec.points);
        while points.len() < spec.points {
            let (p, label) = spec.family.sample_surface(&mut rng);
            points.push(p);
            labels.push(label);
            // Spheres get antipodal pairs so the sample centroid sits at the
            // origin and normalization preserves exact unit norms.
            if let ShapeFamily::Sphere { .. } = spec.family {
                if points.len() < spec.points {
                    points.push([-p[0], -p[1], -p[2]]);
                    labels.push(if -p[2] >= 0.0 { 0 } else { 1 });
                }
            }
        }
        for p in points.iter_mut() {
            for c in p.iter_mut() {
                *c += spec.jitter_sigma * standard_normal(&mut rng);
            }
        }
        let cloud = normalize_unit_sphere(&PointCloud::with_labels(points, labels))?.cloud;
        out.push(Sample {
            cloud,
            class_label,
            complete: None,
            name: format!("{}_{i:04}", spec.family.name()),
        });
    }
    Ok(out)
}

/// The default five-family toy corpus behind `toy://shapes5`: class labels
/// follow lexicographic family order.
pub fn toy_families() -> Vec<ShapeFamily> {
    vec![
        ShapeFamily::Box {
            half_extents: [0.6, 0.4, 0.25],
        },
        ShapeFamily::Cone {
            radius: 0.5,
            height: 1.0,
        },
        ShapeFamily::Cylinder {
            radius: 0.35,
            half_height: 0.6,
        },
        ShapeFamily::Sphere { radius: 0.8 },
        ShapeFamily::Torus {
            major: 0.6,
            minor: 0.2,
        },
    ]
}

/// Class names for [`toy_families`], index-aligned with class labels.
pub fn toy_class_names() -> Vec<String> {
    toy_families().iter().map(|f| f.name().to_string()).collect()
}

pub fn generate_toy_dataset(
    n_per_class: usize,
    points: usize,
    jitter_sigma: f64,
    seed: u64,
) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (label, family) in toy_families().into_iter().enumerate() {
        let spec = ProceduralShapeSpec {
            family,
            points,
            jitter_sigma,
        };
        out.extend(generate_procedural(&spec, n_per_class, label as u32, seed)?);
    }
    Ok(out)
}

/// Load a directory-per-class tree of XYZ files. Class labels are assigned
/// from lexicographically sorted directory names; files within a class are
/// also visited in lexicographic order.
pub fn load_xyz_dir(root: &Path) -> Result<(Vec<Sample>, Vec<String>)> {
    let mut classes: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    for entry in std::fs::read_dir(root)? {
        let entry = entry?;
        if !entry.file_type()?.is_dir() {
            continue;
        }
        let class = entry.file_name().to_string_lossy().into_owned();
        let mut files: Vec<PathBuf> = std::fs::read_dir(entry.path())?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().map_or(false, |e| e == "xyz"))
            .collect();
        files.sort();
        classes.insert(class, files);
    }
    let mut samples = Vec::new();
    let mut names = Vec::new();
    for (label, (class, files)) in classes.into_iter().enumerate() {
        for path in files {
            let cloud = read_xyz(&path)?;
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            samples.push(Sample {
                cloud,
                class_label: label as u32,
                complete: None,
                name: format!("{class}/{stem}"),
            });
        }
        names.push(class);
    }
    Ok((samples, names))
}

/// Deterministic shuffled split into train/test.
pub fn split(samples: Vec<Sample>, train_fraction: f64, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must lie in (0,1), got {train_fraction}"
        )));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_train = (samples.len() as f64 * train_fraction).round() as usize;
    let mut slots: Vec<Option<Sample>> = samples.into_iter().map(Some).collect();
    let take = |idx: &[usize], slots: &mut Vec<Option<Sample>>| {
        idx.iter().map(|&i| slots[i].take().unwrap()).collect::<Vec<_>>()
    };
    let train = take(&order[..n_train], &mut slots);
    let test = take(&order[n_train..], &mut slots);
    Ok((train, test))
}

/// Turn complete clouds into (partial, complete) pairs via plane cuts.
pub fn make_completion_pairs(samples: &[Sample], min_points: usize, seed: u64) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let (partial, _plane) = simulate_plane_cut(&s.cloud, min_points, seed.wrapping_add(i as u64))?;
        out.push(Sample {
            cloud: partial,
            class_label: s.class_label,
            complete: Some(s.cloud.clone()),
            name: s.name.clone(),
        });
    }
    Ok(out)
}

/// Load stem-paired `<stem>_partial.xyz` / `<stem>_complete.xyz` files from
/// one directory.
pub fn load_completion_pairs(dir: &Path) -> Result<Vec<Sample>> {
    let mut partials: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_stem()
                .map_or(false, |s| s.to_string_lossy().ends_with("_partial"))
                && p.extension().map_or(false, |e| e == "xyz")
        })
        .collect();
    partials.sort();
    let mut out = Vec::with_capacity(partials.len());
    for path in partials {
        let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
        let base = stem.trim_end_matches("_partial");
        let complete_path = dir.join(format!("{base}_complete.xyz"));
        if !complete_path.exists() {
            return Err(Error::InvalidArgument(format!(
                "missing complete pair for {}: expected {}",
                path.display(),
                complete_path.display()
            )));
        }
        out.push(Sample {
            cloud: read_xyz(&path)?,
            class_label: 0,
            complete: Some(read_xyz(&complete_path)?),
            name: base.to_string(),
        });
    }
    Ok(out)
}
