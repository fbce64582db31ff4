//! Deterministic radius-neighborhood queries over an immutable cloud
//! snapshot, via an axis-aligned splitting tree. Results are exact: always
//! identical to a brute-force scan, sorted by (distance, index) and capped
//! at K nearest. An empty radius set falls back to the single globally
//! nearest point so downstream max-pools never see an empty set.

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

const LEAF_SIZE: usize = 16;

enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Immutable spatial index over a cloud snapshot.
pub struct SpatialIndex {
    points: Vec<[f64; 3]>,
    /// permutation: `order[slot]` is the original point index
    order: Vec<usize>,
    nodes: Vec<Node>,
    root: usize,
}

pub fn build_index(cloud: &PointCloud) -> Result<SpatialIndex> {
    build_index_points(&cloud.points)
}

/// Index a bare coordinate list (e.g. mid-graph values for a cycle pass).
pub fn build_index_points(points: &[[f64; 3]]) -> Result<SpatialIndex> {
    if points.is_empty() {
        return Err(Error::Usage("cannot index an empty cloud".into()));
    }
    let points = points.to_vec();
    let mut order: Vec<usize> = (0..points.len()).collect();
    let mut nodes = Vec::new();
    let root = build(&points, &mut order, 0, points.len(), &mut nodes);
    Ok(SpatialIndex {
        points,
        order,
        nodes,
        root,
    })
}

fn build(
    points: &[[f64; 3]],
    order: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let slice = &mut order[start..end];
    if slice.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf { start, end });
        return nodes.len() - 1;
    }
    // split on the widest axis at the median
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in slice.iter() {
        for k in 0..3 {
            lo[k] = lo[k].min(points[i][k]);
            hi[k] = hi[k].max(points[i][k]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).partial_cmp(&(hi[b] - lo[b])).unwrap())
        .unwrap();
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis]
            .partial_cmp(&points[b][axis])
            .unwrap()
            .then(a.cmp(&b))
    });
    let value = points[slice[mid]][axis];
    let left = build(points, order, start, start + mid, nodes);
    let right = build(points, order, start + mid, end, nodes);
    nodes.push(Node::Split {
        axis,
        value,
        left,
        right,
    });
    nodes.len() - 1
}

impl SpatialIndex {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// All points within `r` of `query`, sorted by (distance, index) and
    /// truncated to the nearest `cap`. Falls back to the single globally
    /// nearest point when the radius set is empty.
    pub fn radius_neighbors(&self, query: [f64; 3], r: f64, cap: usize) -> Result<Vec<usize>> {
        if r <= 0.0 || cap == 0 {
            return Err(Error::Precondition {
                op: "radius_neighbors",
                msg: format!("need r > 0 and cap >= 1, got r={r}, cap={cap}"),
            });
        }
        let mut hits: Vec<(f64, usize)> = Vec::new();
        let r2 = r * r;
        self.collect_within(self.root, query, r2, &mut hits);
        if hits.is_empty() {
            return Ok(vec![self.nearest(query).0]);
        }
        hits.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        hits.truncate(cap);
        Ok(hits.into_iter().map(|(_, i)| i).collect())
    }

    fn collect_within(&self, node: usize, q: [f64; 3], r2: f64, out: &mut Vec<(f64, usize)>) {
        match &self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[*start..*end] {
                    let d2 = crate::cloud::dist2(self.points[i], q);
                    if d2 <= r2 {
                        out.push((d2, i));
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let d = q[*axis] - value;
                if d <= 0.0 || d * d <= r2 {
                    self.collect_within(*left, q, r2, out);
                }
                if d >= 0.0 || d * d <= r2 {
                    self.collect_within(*right, q, r2, out);
                }
            }
        }
    }

    /// Globally nearest point (ties toward the lowest index).
    pub fn nearest(&self, query: [f64; 3]) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_rec(self.root, query, &mut best);
        (best.0, best.1.sqrt())
    }

    fn nearest_rec(&self, node: usize, q: [f64; 3], best: &mut (usize, f64)) {
        match &self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[*start..*end] {
                    let d2 = crate::cloud::dist2(self.points[i], q);
                    if d2 < best.1 || (d2 == best.1 && i < best.0) {
                        *best = (i, d2);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let d = q[*axis] - value;
                let (near, far) = if d < 0.0 { (left, right) } else { (right, left) };
                self.nearest_rec(*near, q, best);
                if d * d <= best.1 {
                    self.nearest_rec(*far, q, best);
                }
            }
        }
    }
}

/// O(n^2) reference: same contract as [`SpatialIndex::radius_neighbors`].
pub fn brute_force_radius_neighbors(
    cloud: &PointCloud,
    query: [f64; 3],
    r: f64,
    cap: usize,
) -> Vec<usize> {
    let mut hits: Vec<(f64, usize)> = cloud
        .points
        .iter()
        .enumerate()
        .filter_map(|(i, &p)| {
            let d2 = crate::cloud::dist2(p, query);
            if d2 <= r * r {
                Some((d2, i))
            } else {
                None
            }
        })
        .collect();
    if hits.is_empty() {
        let (best, _) = cloud
            .points
            .iter()
            .enumerate()
            .map(|(i, &p)| (i, crate::cloud::dist2(p, query)))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)))
            .unwrap();
        return vec![best];
    }
    hits.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    hits.truncate(cap);
    hits.into_iter().map(|(_, i)| i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = crate::rng::rng_from(seed);
        PointCloud::from_points(
            (0..n)
                .map(|_| {
                    [
                        rng.gen_range(-10.0..10.0),
                        rng.gen_range(-10.0..10.0),
                        rng.gen_range(-10.0..10.0),
                    ]
                })
                .collect(),
        )
    }

    #[test]
    fn rejects_empty_cloud() {
        assert!(build_index(&PointCloud::from_points(vec![])).is_err());
    }

    #[test]
    fn single_point_cloud() {
        let cloud = PointCloud::from_points(vec![[1.0, 2.0, 3.0]]);
        let idx = build_index(&cloud).unwrap();
        assert_eq!(
            idx.radius_neighbors([1.0, 2.0, 3.0], 0.5, 4).unwrap(),
            vec![0]
        );
        // out of radius: fallback still returns the point
        assert_eq!(
            idx.radius_neighbors([9.0, 9.0, 9.0], 0.5, 4).unwrap(),
            vec![0]
        );
    }

    #[test]
    fn line_example() {
        let cloud =
            PointCloud::from_points(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [5.0, 0.0, 0.0]]);
        let idx = build_index(&cloud).unwrap();
        assert_eq!(
            idx.radius_neighbors([0.0, 0.0, 0.0], 2.0, 16).unwrap(),
            vec![0, 1]
        );
    }

    #[test]
    fn cap_one_returns_single_nearest() {
        let cloud = random_cloud(64, 3);
        let idx = build_index(&cloud).unwrap();
        let got = idx.radius_neighbors([0.0; 3], 5.0, 1).unwrap();
        let want = brute_force_radius_neighbors(&cloud, [0.0; 3], 5.0, 1);
        assert_eq!(got, want);
        assert_eq!(got.len(), 1);
    }

    #[test]
    fn matches_brute_force_on_random_queries() {
        let cloud = random_cloud(256, 1);
        let idx = build_index(&cloud).unwrap();
        let mut rng = crate::rng::rng_from(2);
        for _ in 0..1000 {
            let q = [
                rng.gen_range(-12.0..12.0),
                rng.gen_range(-12.0..12.0),
                rng.gen_range(-12.0..12.0),
            ];
            let r = rng.gen_range(0.01..8.0);
            let cap = rng.gen_range(1..20);
            assert_eq!(
                idx.radius_neighbors(q, r, cap).unwrap(),
                brute_force_radius_neighbors(&cloud, q, r, cap),
                "q={q:?} r={r} cap={cap}"
            );
        }
    }

    #[test]
    fn rebuild_gives_identical_answers() {
        let cloud = random_cloud(100, 7);
        let a = build_index(&cloud).unwrap();
        let b = build_index(&cloud).unwrap();
        for i in 0..10 {
            let q = cloud.points[i * 7];
            assert_eq!(
                a.radius_neighbors(q, 3.0, 8).unwrap(),
                b.radius_neighbors(q, 3.0, 8).unwrap()
            );
        }
    }

    #[test]
    fn output_never_empty_and_radius_monotone() {
        let cloud = random_cloud(64, 9);
        let idx = build_index(&cloud).unwrap();
        let q = [20.0, 20.0, 20.0];
        let tiny = idx.radius_neighbors(q, 1e-6, 16).unwrap();
        assert_eq!(tiny.len(), 1);
        let small = idx.radius_neighbors([0.0; 3], 2.0, 1000).unwrap();
        let large = idx.radius_neighbors([0.0; 3], 4.0, 1000).unwrap();
        for i in &small {
            assert!(large.contains(i), "enlarging r dropped {i}");
        }
    }
}
