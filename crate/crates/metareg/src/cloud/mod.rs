//! Point cloud data model: procedural shape generation, rigid-transform task
//! construction, the three noise protocols, and `.xyz`/manifest file I/O.

pub mod io;
pub mod shapes;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub use shapes::{generate_shape, Category, ALL_CATEGORIES};

/// Ordered collection of 3D points in unitless model space.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub category: Option<Category>,
    pub seed: Option<u64>,
}

impl PointCloud {
    pub fn from_points(points: Vec<[f64; 3]>) -> Self {
        PointCloud {
            points,
            category: None,
            seed: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Row-major flat coordinates, for tensor constants.
    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }
}

/// Per-point displacement vectors aligned by index to a cloud.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlowField {
    pub vectors: Vec<[f64; 3]>,
}

impl FlowField {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.vectors.iter().flatten().copied().collect()
    }
}

/// Euler angles in degrees plus a translation; rotation composes as
/// `R = Rz * Ry * Rx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub angles_deg: [f64; 3],
    pub translation: [f64; 3],
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            angles_deg: [0.0; 3],
            translation: [0.0; 3],
        }
    }

    pub fn rotation_matrix(&self) -> [[f64; 3]; 3] {
        let [rx, ry, rz] = self.angles_deg.map(f64::to_radians);
        let (sx, cx) = rx.sin_cos();
        let (sy, cy) = ry.sin_cos();
        let (sz, cz) = rz.sin_cos();
        let rx_m = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
        let ry_m = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
        let rz_m = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
        mat_mul(&rz_m, &mat_mul(&ry_m, &rx_m))
    }

    pub fn apply_point(&self, p: [f64; 3]) -> [f64; 3] {
        let r = self.rotation_matrix();
        let mut out = self.translation;
        for i in 0..3 {
            for j in 0..3 {
                out[i] += r[i][j] * p[j];
            }
        }
        out
    }
}

fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    None,
    GaussianDrift,
    Incompleteness,
    Outliers,
}

impl NoiseKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            NoiseKind::None => "none",
            NoiseKind::GaussianDrift => "gaussian_drift",
            NoiseKind::Incompleteness => "incompleteness",
            NoiseKind::Outliers => "outliers",
        }
    }
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NoiseKind::None),
            "gaussian_drift" => Ok(NoiseKind::GaussianDrift),
            "incompleteness" => Ok(NoiseKind::Incompleteness),
            "outliers" => Ok(NoiseKind::Outliers),
            other => Err(Error::Usage(format!("unknown noise kind `{other}`"))),
        }
    }
}

/// A registration task: source, target, ground-truth flow and provenance.
/// `gt_flow` is index-aligned with `source`; `mask[i]` is false where no
/// ground-truth correspondence exists (cropped away or appended outlier).
#[derive(Debug, Clone)]
pub struct TaskPair {
    pub source: PointCloud,
    pub target: PointCloud,
    pub gt_flow: FlowField,
    pub mask: Vec<bool>,
    pub noise: NoiseKind,
    pub category: Category,
    pub seed: u64,
}

impl TaskPair {
    pub fn masked_indices(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| if m { Some(i) } else { None })
            .collect()
    }
}

/// Record of the uniform map applied by [`rescale_pair`].
#[derive(Debug, Clone, Copy)]
pub struct ScaleRecord {
    pub scale: f64,
    pub center: [f64; 3],
}

/// Angles i.i.d. uniform on [0, 45] degrees, translations uniform on
/// [-0.5, 0.5]; deterministic given the seed.
pub fn random_rigid_transform(seed: u64) -> RigidTransform {
    let mut rng = rng::rng_from(rng::derive(seed, &[rng::tag::TRANSFORM]));
    let mut angles = [0.0; 3];
    for a in &mut angles {
        *a = rng.gen_range(0.0..45.0);
    }
    let mut t = [0.0; 3];
    for v in &mut t {
        *v = rng.gen_range(-0.5..0.5);
    }
    RigidTransform {
        angles_deg: angles,
        translation: t,
    }
}

/// Transform every point; the ground-truth flow is `target_i - source_i`.
pub fn apply_transform(cloud: &PointCloud, t: &RigidTransform) -> (PointCloud, FlowField) {
    let points: Vec<[f64; 3]> = cloud.points.iter().map(|&p| t.apply_point(p)).collect();
    let vectors: Vec<[f64; 3]> = points
        .iter()
        .zip(&cloud.points)
        .map(|(q, p)| [q[0] - p[0], q[1] - p[1], q[2] - p[2]])
        .collect();
    (
        PointCloud {
            points,
            category: cloud.category,
            seed: cloud.seed,
        },
        FlowField { vectors },
    )
}

/// Map the joint bounding box of both clouds into `[-10, 10]^3` with one
/// uniform scale and translation, exactly touching on the largest axis. The
/// flow scales by the same factor (it is a coordinate difference).
pub fn rescale_pair(
    source: &mut PointCloud,
    target: &mut PointCloud,
    gt_flow: &mut FlowField,
) -> Result<ScaleRecord> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::Precondition {
            op: "rescale_pair",
            msg: "empty cloud".into(),
        });
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in source.points.iter().chain(&target.points) {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0f64, f64::max);
    if extent <= 0.0 {
        return Err(Error::Domain {
            op: "rescale_pair",
            msg: "degenerate joint bounding box".into(),
        });
    }
    let scale = 20.0 / extent;
    let center = [
        (lo[0] + hi[0]) / 2.0,
        (lo[1] + hi[1]) / 2.0,
        (lo[2] + hi[2]) / 2.0,
    ];
    for p in source.points.iter_mut().chain(target.points.iter_mut()) {
        for k in 0..3 {
            p[k] = (p[k] - center[k]) * scale;
        }
    }
    for v in &mut gt_flow.vectors {
        for k in 0..3 {
            v[k] *= scale;
        }
    }
    Ok(ScaleRecord { scale, center })
}

/// I.i.d. Gaussian offsets per coordinate; measurement noise, so the
/// ground-truth flow is untouched.
pub fn add_gaussian_noise(cloud: &PointCloud, sigma: f64, seed: u64) -> PointCloud {
    assert!(sigma >= 0.0);
    let mut rng = rng::rng_from(rng::derive(seed, &[rng::tag::NOISE, 1]));
    let points = cloud
        .points
        .iter()
        .map(|&p| {
            let mut q = p;
            for v in &mut q {
                *v += sigma * standard_normal(&mut rng);
            }
            q
        })
        .collect();
    PointCloud {
        points,
        category: cloud.category,
        seed: cloud.seed,
    }
}

/// Box-Muller; two uniforms per draw keeps the stream deterministic.
pub(crate) fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Keep the `ceil(keep_ratio * n)` points nearest a randomly chosen anchor
/// (ties by index), in their original relative order. Returns the surviving
/// original indices so the flow can be masked.
pub fn crop_incomplete(
    cloud: &PointCloud,
    keep_ratio: f64,
    seed: u64,
) -> Result<(PointCloud, Vec<usize>)> {
    if !(keep_ratio > 0.0 && keep_ratio <= 1.0) {
        return Err(Error::Precondition {
            op: "crop_incomplete",
            msg: format!("keep_ratio {keep_ratio} not in (0, 1]"),
        });
    }
    let n = cloud.len();
    let keep = ((keep_ratio * n as f64).ceil() as usize).min(n);
    let mut rng = rng::rng_from(rng::derive(seed, &[rng::tag::NOISE, 2]));
    let anchor = cloud.points[rng.gen_range(0..n)];
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let da = dist2(cloud.points[a], anchor);
        let db = dist2(cloud.points[b], anchor);
        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
    });
    let mut survivors: Vec<usize> = order[..keep].to_vec();
    survivors.sort_unstable();
    let points = survivors.iter().map(|&i| cloud.points[i]).collect();
    Ok((
        PointCloud {
            points,
            category: cloud.category,
            seed: cloud.seed,
        },
        survivors,
    ))
}

/// Append `count` uniform points in `[-10,10]^3`; the mask marks appended
/// points true.
pub fn add_outliers(cloud: &PointCloud, count: usize, seed: u64) -> (PointCloud, Vec<bool>) {
    let mut rng = rng::rng_from(rng::derive(seed, &[rng::tag::NOISE, 3]));
    let mut points = cloud.points.clone();
    let mut outlier_mask = vec![false; cloud.len()];
    for _ in 0..count {
        let mut p = [0.0; 3];
        for v in &mut p {
            *v = rng.gen_range(-10.0..10.0);
        }
        points.push(p);
        outlier_mask.push(true);
    }
    (
        PointCloud {
            points,
            category: cloud.category,
            seed: cloud.seed,
        },
        outlier_mask,
    )
}

pub(crate) fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[cfg(test)]
mod tests;
