//! Procedural shape categories. Each category samples points uniformly by
//! surface area on a parametric surface whose shape parameters are drawn
//! from the seed, so instances within a category vary.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PointCloud;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Sphere,
    Box,
    Cylinder,
    Cone,
    Torus,
    Plane,
    Helix,
    Cross,
    Pyramid,
    Ellipsoid,
    TwoSpheres,
    LBracket,
}

pub const ALL_CATEGORIES: [Category; 12] = [
    Category::Sphere,
    Category::Box,
    Category::Cylinder,
    Category::Cone,
    Category::Torus,
    Category::Plane,
    Category::Helix,
    Category::Cross,
    Category::Pyramid,
    Category::Ellipsoid,
    Category::TwoSpheres,
    Category::LBracket,
];

impl Category {
    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Sphere => "sphere",
            Category::Box => "box",
            Category::Cylinder => "cylinder",
            Category::Cone => "cone",
            Category::Torus => "torus",
            Category::Plane => "plane",
            Category::Helix => "helix",
            Category::Cross => "cross",
            Category::Pyramid => "pyramid",
            Category::Ellipsoid => "ellipsoid",
            Category::TwoSpheres => "two_spheres",
            Category::LBracket => "l_bracket",
        }
    }
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Category {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ALL_CATEGORIES
            .iter()
            .find(|c| c.as_str() == s)
            .copied()
            .ok_or_else(|| Error::Usage(format!("unknown category `{s}`")))
    }
}

/// Sample `n_points` on the category's surface, uniform by area,
/// deterministic given the seed.
pub fn generate_shape(category: Category, n_points: usize, seed: u64) -> Result<PointCloud> {
    if n_points < 8 {
        return Err(Error::Precondition {
            op: "generate_shape",
            msg: format!("n_points {n_points} < 8"),
        });
    }
    let mut rng = rng::rng_from(rng::derive(seed, &[rng::tag::SHAPE, category as u64]));
    let points = match category {
        Category::Sphere => sphere(n_points, &mut rng),
        Category::Box => boxed(n_points, &mut rng),
        Category::Cylinder => cylinder(n_points, &mut rng),
        Category::Cone => cone(n_points, &mut rng),
        Category::Torus => torus(n_points, &mut rng),
        Category::Plane => plane(n_points, &mut rng),
        Category::Helix => helix(n_points, &mut rng),
        Category::Cross => cross(n_points, &mut rng),
        Category::Pyramid => pyramid(n_points, &mut rng),
        Category::Ellipsoid => ellipsoid(n_points, &mut rng),
        Category::TwoSpheres => two_spheres(n_points, &mut rng),
        Category::LBracket => l_bracket(n_points, &mut rng),
    };
    Ok(PointCloud {
        points,
        category: Some(category),
        seed: Some(seed),
    })
}

fn unit_sphere_dir(rng: &mut ChaCha8Rng) -> [f64; 3] {
    // z uniform in [-1,1], azimuth uniform: area-uniform on the sphere.
    let z: f64 = rng.gen_range(-1.0..1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).max(0.0).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

fn sphere(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let radius: f64 = rng.gen_range(0.5..1.5);
    (0..n)
        .map(|_| {
            let d = unit_sphere_dir(rng);
            [d[0] * radius, d[1] * radius, d[2] * radius]
        })
        .collect()
}

/// Uniform on the surface of an axis-aligned box with half-extents `h`,
/// centered at `c`.
pub(crate) fn box_surface(n: usize, h: [f64; 3], c: [f64; 3], rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let [a, b, d] = [2.0 * h[0], 2.0 * h[1], 2.0 * h[2]];
    // face pair areas: (b*d) x, (a*d) y, (a*b) z
    let areas = [b * d, a * d, a * b];
    let total: f64 = 2.0 * (areas[0] + areas[1] + areas[2]);
    (0..n)
        .map(|_| {
            let mut pick = rng.gen_range(0.0..total);
            let mut axis = 0;
            let mut side = 1.0;
            for (i, &ar) in areas.iter().enumerate() {
                if pick < ar {
                    axis = i;
                    side = 1.0;
                    break;
                }
                pick -= ar;
                if pick < ar {
                    axis = i;
                    side = -1.0;
                    break;
                }
                pick -= ar;
            }
            let mut p = [0.0; 3];
            for k in 0..3 {
                p[k] = if k == axis {
                    side * h[k]
                } else {
                    rng.gen_range(-h[k]..h[k])
                };
            }
            [p[0] + c[0], p[1] + c[1], p[2] + c[2]]
        })
        .collect()
}

fn boxed(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let h = [
        rng.gen_range(0.3..1.0),
        rng.gen_range(0.3..1.0),
        rng.gen_range(0.3..1.0),
    ];
    box_surface(n, h, [0.0; 3], rng)
}

fn cylinder(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let r: f64 = rng.gen_range(0.3..0.8);
    let h: f64 = rng.gen_range(0.8..2.0);
    let side = std::f64::consts::TAU * r * h;
    let cap = std::f64::consts::PI * r * r;
    let total = side + 2.0 * cap;
    (0..n)
        .map(|_| {
            let pick = rng.gen_range(0.0..total);
            if pick < side {
                let phi = rng.gen_range(0.0..std::f64::consts::TAU);
                let z = rng.gen_range(-h / 2.0..h / 2.0);
                [r * phi.cos(), r * phi.sin(), z]
            } else {
                let z = if pick < side + cap { h / 2.0 } else { -h / 2.0 };
                let rr = r * rng.gen_range(0.0f64..1.0).sqrt();
                let phi = rng.gen_range(0.0..std::f64::consts::TAU);
                [rr * phi.cos(), rr * phi.sin(), z]
            }
        })
        .collect()
}

fn cone(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let r: f64 = rng.gen_range(0.4..1.0);
    let h: f64 = rng.gen_range(0.8..2.0);
    let slant = (r * r + h * h).sqrt();
    let lateral = std::f64::consts::PI * r * slant;
    let base = std::f64::consts::PI * r * r;
    let total = lateral + base;
    (0..n)
        .map(|_| {
            let pick = rng.gen_range(0.0..total);
            let phi = rng.gen_range(0.0..std::f64::consts::TAU);
            if pick < lateral {
                // radial coordinate ~ sqrt(u): area density grows linearly
                let t = rng.gen_range(0.0f64..1.0).sqrt();
                [r * t * phi.cos(), r * t * phi.sin(), h * (1.0 - t)]
            } else {
                let rr = r * rng.gen_range(0.0f64..1.0).sqrt();
                [rr * phi.cos(), rr * phi.sin(), 0.0]
            }
        })
        .collect()
}

fn torus(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let big: f64 = rng.gen_range(0.7..1.2);
    let small: f64 = rng.gen_range(0.15..0.45 * big.min(1.0));
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let theta = rng.gen_range(0.0..std::f64::consts::TAU); // around tube
        let phi = rng.gen_range(0.0..std::f64::consts::TAU); // around axis
        // area element proportional to (R + r cos theta); rejection sample
        let w = (big + small * theta.cos()) / (big + small);
        if rng.gen_range(0.0..1.0) < w {
            let rad = big + small * theta.cos();
            out.push([rad * phi.cos(), rad * phi.sin(), small * theta.sin()]);
        }
    }
    out
}

fn plane(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let a: f64 = rng.gen_range(0.6..1.5);
    let b: f64 = rng.gen_range(0.6..1.5);
    (0..n)
        .map(|_| [rng.gen_range(-a..a), rng.gen_range(-b..b), 0.0])
        .collect()
}

fn helix(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    // Tube of radius `tube` around a constant-pitch helix centerline. The
    // centerline has constant speed and constant curvature, so the area
    // element only depends on the tube angle; rejection on that factor.
    let big: f64 = rng.gen_range(0.5..1.0);
    let pitch: f64 = rng.gen_range(0.15..0.4);
    let tube: f64 = rng.gen_range(0.08..0.2);
    let turns: f64 = 2.0;
    let t_max = turns * std::f64::consts::TAU;
    let kappa = big / (big * big + pitch * pitch);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let t = rng.gen_range(0.0..t_max);
        let psi = rng.gen_range(0.0..std::f64::consts::TAU);
        let w = (1.0 - kappa * tube * psi.cos()) / (1.0 + kappa * tube);
        if rng.gen_range(0.0..1.0) >= w {
            continue;
        }
        let (st, ct) = t.sin_cos();
        let center = [big * ct, big * st, pitch * t - pitch * t_max / 2.0];
        // Frenet frame of the helix: normal points inward, binormal fixed mix.
        let speed = (big * big + pitch * pitch).sqrt();
        let normal = [-ct, -st, 0.0];
        let binormal = [pitch * st / speed, -pitch * ct / speed, big / speed];
        let (sp, cp) = psi.sin_cos();
        out.push([
            center[0] + tube * (cp * normal[0] + sp * binormal[0]),
            center[1] + tube * (cp * normal[1] + sp * binormal[1]),
            center[2] + tube * (cp * normal[2] + sp * binormal[2]),
        ]);
    }
    out
}

fn inside_box(p: [f64; 3], h: [f64; 3], c: [f64; 3]) -> bool {
    (0..3).all(|k| (p[k] - c[k]).abs() < h[k] - 1e-12)
}

/// Uniform on the boundary of two overlapping boxes: sample both surfaces
/// by area, reject points interior to the other box.
fn box_union(
    n: usize,
    boxes: [([f64; 3], [f64; 3]); 2],
    rng: &mut ChaCha8Rng,
) -> Vec<[f64; 3]> {
    let area = |h: [f64; 3]| {
        8.0 * (h[0] * h[1] + h[1] * h[2] + h[0] * h[2])
    };
    let a0 = area(boxes[0].0);
    let a1 = area(boxes[1].0);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let pick_second = rng.gen_range(0.0..a0 + a1) >= a0;
        let (h, c) = boxes[if pick_second { 1 } else { 0 }];
        let (oh, oc) = boxes[if pick_second { 0 } else { 1 }];
        let p = box_surface(1, h, c, rng)[0];
        if !inside_box(p, oh, oc) {
            out.push(p);
        }
    }
    out
}

fn cross(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let long: f64 = rng.gen_range(0.9..1.4);
    let thin: f64 = rng.gen_range(0.15..0.35);
    box_union(
        n,
        [
            ([long, thin, thin], [0.0; 3]),
            ([thin, long, thin], [0.0; 3]),
        ],
        rng,
    )
}

fn l_bracket(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let arm: f64 = rng.gen_range(0.8..1.3);
    let thick: f64 = rng.gen_range(0.15..0.3);
    box_union(
        n,
        [
            ([arm, thick, thick], [arm - thick, 0.0, 0.0]),
            ([thick, arm, thick], [0.0, arm - thick, 0.0]),
        ],
        rng,
    )
}

fn pyramid(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let half: f64 = rng.gen_range(0.5..1.0);
    let h: f64 = rng.gen_range(0.7..1.6);
    let apex = [0.0, 0.0, h];
    let corners = [
        [half, half, 0.0],
        [-half, half, 0.0],
        [-half, -half, 0.0],
        [half, -half, 0.0],
    ];
    let tri_area = |a: [f64; 3], b: [f64; 3], c: [f64; 3]| {
        let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let cx = u[1] * v[2] - u[2] * v[1];
        let cy = u[2] * v[0] - u[0] * v[2];
        let cz = u[0] * v[1] - u[1] * v[0];
        0.5 * (cx * cx + cy * cy + cz * cz).sqrt()
    };
    // 4 side triangles plus base split into 2 triangles
    let mut tris: Vec<([f64; 3], [f64; 3], [f64; 3])> = (0..4)
        .map(|i| (corners[i], corners[(i + 1) % 4], apex))
        .collect();
    tris.push((corners[0], corners[1], corners[2]));
    tris.push((corners[0], corners[2], corners[3]));
    let areas: Vec<f64> = tris.iter().map(|t| tri_area(t.0, t.1, t.2)).collect();
    let total: f64 = areas.iter().sum();
    (0..n)
        .map(|_| {
            let mut pick = rng.gen_range(0.0..total);
            let mut idx = 0;
            for (i, &ar) in areas.iter().enumerate() {
                if pick < ar {
                    idx = i;
                    break;
                }
                pick -= ar;
            }
            let (a, b, c) = tris[idx];
            let (mut u, mut v) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            [
                a[0] + u * (b[0] - a[0]) + v * (c[0] - a[0]),
                a[1] + u * (b[1] - a[1]) + v * (c[1] - a[1]),
                a[2] + u * (b[2] - a[2]) + v * (c[2] - a[2]),
            ]
        })
        .collect()
}

fn ellipsoid(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let ax = [
        rng.gen_range(0.5..1.2),
        rng.gen_range(0.5..1.2),
        rng.gen_range(0.5..1.2),
    ];
    // rejection against the area distortion of the sphere->ellipsoid map
    let bound = f64::max(ax[0] * ax[1], ax[1] * ax[2]).max(ax[0] * ax[2]);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let d = unit_sphere_dir(rng);
        let f = ((ax[1] * ax[2] * d[0]).powi(2)
            + (ax[0] * ax[2] * d[1]).powi(2)
            + (ax[0] * ax[1] * d[2]).powi(2))
        .sqrt();
        if rng.gen_range(0.0..1.0) < f / bound {
            out.push([ax[0] * d[0], ax[1] * d[1], ax[2] * d[2]]);
        }
    }
    out
}

fn two_spheres(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let r1: f64 = rng.gen_range(0.3..0.7);
    let r2: f64 = rng.gen_range(0.3..0.7);
    let gap: f64 = rng.gen_range(0.1..0.5);
    let c1 = [-(r1 + gap / 2.0), 0.0, 0.0];
    let c2 = [r2 + gap / 2.0, 0.0, 0.0];
    let a1 = r1 * r1;
    let a2 = r2 * r2; // area ratio, common factor dropped
    (0..n)
        .map(|_| {
            let (r, c) = if rng.gen_range(0.0..a1 + a2) < a1 {
                (r1, c1)
            } else {
                (r2, c2)
            };
            let d = unit_sphere_dir(rng);
            [c[0] + r * d[0], c[1] + r * d[1], c[2] + r * d[2]]
        })
        .collect()
}
