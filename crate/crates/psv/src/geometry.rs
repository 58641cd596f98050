//! Pure (non-learned) point-cloud math: normalization, farthest point
//! sampling, overlapping ball partitions, plane-cut simulation of partial
//! clouds, mesh surface sampling and the Chamfer metric.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

pub type Vec3 = [f64; 3];

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist_sq(a: Vec3, b: Vec3) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}

/// An ordered list of 3D points, optionally carrying per-point part labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub labels: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self {
            points,
            labels: None,
        }
    }

    pub fn with_labels(points: Vec<Vec3>, labels: Vec<u32>) -> Self {
        assert_eq!(points.len(), labels.len(), "label count must match points");
        Self {
            points,
            labels: Some(labels),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::InvalidArgument("point cloud is empty".into()));
        }
        for (i, p) in self.points.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "point {i} has non-finite coordinate"
                )));
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.points.len() {
                return Err(Error::InvalidArgument(format!(
                    "label count {} does not match point count {}",
                    labels.len(),
                    self.points.len()
                )));
            }
        }
        Ok(())
    }
}

/// A plane through the origin, defined by its (non-zero) normal.
#[derive(Debug, Clone, Copy)]
pub struct Plane {
    pub normal: Vec3,
}

/// One member of an overlapping partition: a ball-query neighborhood stored
/// relative to its centroid.
#[derive(Debug, Clone)]
pub struct LocalPointSet {
    pub centroid: Vec3,
    pub radius: f64,
    pub relative_points: Vec<Vec3>,
    pub source_indices: Vec<usize>,
}

/// A triangle mesh used to generate point clouds by surface sampling.
#[derive(Debug, Clone)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn face_area(&self, face: [usize; 3]) -> f64 {
        let a = self.vertices[face[0]];
        let b = self.vertices[face[1]];
        let c = self.vertices[face[2]];
        let u = sub(b, a);
        let v = sub(c, a);
        let cx = u[1] * v[2] - u[2] * v[1];
        let cy = u[2] * v[0] - u[0] * v[2];
        let cz = u[0] * v[1] - u[1] * v[0];
        0.5 * (cx * cx + cy * cy + cz * cz).sqrt()
    }
}

/// Result of [`normalize_unit_sphere`]; `degenerate` is set when every input
/// point was identical and only centering was applied.
#[derive(Debug, Clone)]
pub struct NormalizedCloud {
    pub cloud: PointCloud,
    pub degenerate: bool,
}

/// Center a cloud at the origin and scale it so the farthest point lies on
/// the unit sphere.
pub fn normalize_unit_sphere(cloud: &PointCloud) -> Result<NormalizedCloud> {
    cloud.validate()?;
    let n = cloud.len() as f64;
    let mut center = [0.0; 3];
    for p in &cloud.points {
        for k in 0..3 {
            center[k] += p[k] / n;
        }
    }
    let centered: Vec<Vec3> = cloud.points.iter().map(|p| sub(*p, center)).collect();
    let max_norm = centered.iter().map(|p| norm(*p)).fold(0.0, f64::max);
    let degenerate = max_norm <= 0.0;
    let scale = if degenerate { 1.0 } else { 1.0 / max_norm };
    let points = centered
        .iter()
        .map(|p| [p[0] * scale, p[1] * scale, p[2] * scale])
        .collect();
    Ok(NormalizedCloud {
        cloud: PointCloud {
            points,
            labels: cloud.labels.clone(),
        },
        degenerate,
    })
}

/// Greedy farthest point sampling. The first index is drawn from the seed;
/// every later pick maximizes its minimum distance to the prefix, breaking
/// ties by lowest index.
pub fn farthest_point_sampling(cloud: &PointCloud, k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = cloud.len();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "fps requires 1 <= k <= {n}, got k={k}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.gen_range(0..n);
    let mut selected = Vec::with_capacity(k);
    selected.push(first);
    // min squared distance from each point to the selected prefix
    let mut min_d: Vec<f64> = cloud
        .points
        .iter()
        .map(|p| dist_sq(*p, cloud.points[first]))
        .collect();
    while selected.len() < k {
        let mut best = usize::MAX;
        let mut best_d = -1.0;
        for (i, d) in min_d.iter().enumerate() {
            if selected.contains(&i) {
                continue;
            }
            if *d > best_d {
                best_d = *d;
                best = i;
            }
        }
        selected.push(best);
        for (i, d) in min_d.iter_mut().enumerate() {
            let nd = dist_sq(cloud.points[i], cloud.points[best]);
            if nd < *d {
                *d = nd;
            }
        }
    }
    Ok(selected)
}

/// Partition a cloud into `n_sets` overlapping ball neighborhoods around FPS
/// centroids. Each set keeps at most `max_points_per_set` members (nearest
/// first); the centroid's own point always belongs.
pub fn build_partition(
    cloud: &PointCloud,
    n_sets: usize,
    radius: f64,
    max_points_per_set: usize,
    seed: u64,
) -> Result<Vec<LocalPointSet>> {
    if radius <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "radius must be positive, got {radius}"
        )));
    }
    if max_points_per_set == 0 {
        return Err(Error::InvalidArgument(
            "max_points_per_set must be positive".into(),
        ));
    }
    let centroids = farthest_point_sampling(cloud, n_sets, seed)?;
    let r_sq = radius * radius;
    let mut sets = Vec::with_capacity(n_sets);
    for &ci in &centroids {
        let centroid = cloud.points[ci];
        let mut members: Vec<(f64, usize)> = cloud
            .points
            .iter()
            .enumerate()
            .filter_map(|(i, p)| {
                let d = dist_sq(*p, centroid);
                (d <= r_sq).then_some((d, i))
            })
            .collect();
        members.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        members.truncate(max_points_per_set);
        if members.is_empty() {
            members.push((0.0, ci));
        }
        let source_indices: Vec<usize> = members.iter().map(|(_, i)| *i).collect();
        let relative_points = source_indices
            .iter()
            .map(|&i| sub(cloud.points[i], centroid))
            .collect();
        sets.push(LocalPointSet {
            centroid,
            radius,
            relative_points,
            source_indices,
        });
    }
    Ok(sets)
}

/// Simulate a partial observation by keeping the points strictly on one side
/// of a random plane through the origin. If the kept side is smaller than
/// `min_points` the normal is flipped, then redrawn up to 10 times.
pub fn simulate_plane_cut(
    cloud: &PointCloud,
    min_points: usize,
    seed: u64,
) -> Result<(PointCloud, Plane)> {
    cloud.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    const MAX_ATTEMPTS: usize = 10;
    for _ in 0..MAX_ATTEMPTS {
        let mut normal = [0.0; 3];
        loop {
            for c in normal.iter_mut() {
                *c = standard_normal(&mut rng);
            }
            let len = norm(normal);
            if len > 1e-12 {
                for c in normal.iter_mut() {
                    *c /= len;
                }
                break;
            }
        }
        for candidate in [normal, [-normal[0], -normal[1], -normal[2]]] {
            let kept: Vec<usize> = (0..cloud.len())
                .filter(|&i| dot(cloud.points[i], candidate) > 0.0)
                .collect();
            if kept.len() >= min_points.min(cloud.len()) && !kept.is_empty() {
                let points = kept.iter().map(|&i| cloud.points[i]).collect();
                let labels = cloud
                    .labels
                    .as_ref()
                    .map(|l| kept.iter().map(|&i| l[i]).collect());
                return Ok((PointCloud { points, labels }, Plane { normal: candidate }));
            }
        }
    }
    Err(Error::PlaneCutFailed {
        min_points,
        attempts: MAX_ATTEMPTS,
    })
}

pub(crate) fn standard_normal(rng: &mut impl Rng) -> f64 {
    // Box-Muller
    loop {
        let u1: f64 = rng.gen::<f64>();
        let u2: f64 = rng.gen::<f64>();
        if u1 > f64::MIN_POSITIVE {
            return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
    }
}

/// Symmetric Chamfer distance: mean squared nearest-neighbor distance from
/// `a` to `b` plus the same from `b` to `a`.
pub fn chamfer_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument(
            "chamfer distance requires non-empty clouds".into(),
        ));
    }
    let tree_b = KdTree::build(&b.points);
    let tree_a = KdTree::build(&a.points);
    let ab: f64 = a
        .points
        .iter()
        .map(|p| tree_b.nearest(*p).1)
        .sum::<f64>()
        / a.len() as f64;
    let ba: f64 = b
        .points
        .iter()
        .map(|p| tree_a.nearest(*p).1)
        .sum::<f64>()
        / b.len() as f64;
    Ok(ab + ba)
}

/// Per-point squared nearest-neighbor indices both ways; used by the
/// differentiable completion loss.
pub fn chamfer_correspondences(a: &[Vec3], b: &[Vec3]) -> (Vec<usize>, Vec<usize>) {
    let tree_b = KdTree::build(b);
    let tree_a = KdTree::build(a);
    let a_to_b = a.iter().map(|p| tree_b.nearest(*p).0).collect();
    let b_to_a = b.iter().map(|p| tree_a.nearest(*p).0).collect();
    (a_to_b, b_to_a)
}

/// Sample `n` points from a mesh surface by area-weighted triangle selection
/// followed by uniform barycentric sampling.
pub fn sample_mesh_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud> {
    for (fi, face) in mesh.faces.iter().enumerate() {
        for &v in face {
            if v >= mesh.vertices.len() {
                return Err(Error::InvalidArgument(format!(
                    "face {fi} references vertex {v} out of range"
                )));
            }
        }
    }
    let areas: Vec<f64> = mesh.faces.iter().map(|f| mesh.face_area(*f)).collect();
    let total: f64 = areas.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateGeometry(
            "mesh has zero total surface area".into(),
        ));
    }
    let mut cumulative = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for a in &areas {
        acc += a;
        cumulative.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let t: f64 = rng.gen::<f64>() * total;
        let fi = cumulative.partition_point(|&c| c < t).min(areas.len() - 1);
        let face = mesh.faces[fi];
        let a = mesh.vertices[face[0]];
        let b = mesh.vertices[face[1]];
        let c = mesh.vertices[face[2]];
        let (mut u, mut v): (f64, f64) = (rng.gen(), rng.gen());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        let w = 1.0 - u - v;
        points.push([
            w * a[0] + u * b[0] + v * c[0],
            w * a[1] + u * b[1] + v * c[1],
            w * a[2] + u * b[2] + v * c[2],
        ]);
    }
    Ok(PointCloud::new(points))
}

/// Static 3D kd-tree over a point slice; exact nearest-neighbor queries.
pub struct KdTree {
    // node layout: balanced median splits, stored as (point index, split axis)
    nodes: Vec<KdNode>,
    points: Vec<Vec3>,
}

struct KdNode {
    point_index: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

impl KdTree {
    pub fn build(points: &[Vec3]) -> Self {
        let mut indices: Vec<usize> = (0..points.len()).collect();
        let mut tree = KdTree {
            nodes: Vec::with_capacity(points.len()),
            points: points.to_vec(),
        };
        tree.build_rec(&mut indices, 0);
        tree
    }

    fn build_rec(&mut self, indices: &mut [usize], depth: usize) -> Option<usize> {
        if indices.is_empty() {
            return None;
        }
        let axis = depth % 3;
        indices.sort_by(|&a, &b| {
            self.points[a][axis]
                .partial_cmp(&self.points[b][axis])
                .unwrap()
                .then(a.cmp(&b))
        });
        let mid = indices.len() / 2;
        let node_id = self.nodes.len();
        self.nodes.push(KdNode {
            point_index: indices[mid],
            axis,
            left: None,
            right: None,
        });
        let (lo, rest) = indices.split_at_mut(mid);
        let hi = &mut rest[1..];
        let left = self.build_rec(lo, depth + 1);
        let right = self.build_rec(hi, depth + 1);
        self.nodes[node_id].left = left;
        self.nodes[node_id].right = right;
        Some(node_id)
    }

    /// Returns (index of nearest point, squared distance).
    pub fn nearest(&self, query: Vec3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        if !self.nodes.is_empty() {
            self.nearest_rec(0, query, &mut best);
        }
        best
    }

    fn nearest_rec(&self, node_id: usize, query: Vec3, best: &mut (usize, f64)) {
        let node = &self.nodes[node_id];
        let p = self.points[node.point_index];
        let d = dist_sq(query, p);
        if d < best.1 || (d == best.1 && node.point_index < best.0) {
            *best = (node.point_index, d);
        }
        let delta = query[node.axis] - p[node.axis];
        let (near, far) = if delta < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if let Some(n) = near {
            self.nearest_rec(n, query, best);
        }
        if let Some(f) = far {
            if delta * delta <= best.1 {
                self.nearest_rec(f, query, best);
            }
        }
    }
}
