use super::*;
use crate::cloud::shapes::box_surface;

#[test]
fn sphere_points_lie_on_sphere() {
    let cloud = generate_shape(Category::Sphere, 8, 11).unwrap();
    assert_eq!(cloud.len(), 8);
    let r0 = (cloud.points[0][0].powi(2) + cloud.points[0][1].powi(2) + cloud.points[0][2].powi(2))
        .sqrt();
    for p in &cloud.points {
        let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        assert!((r - r0).abs() < 1e-9, "radius {r} vs {r0}");
    }
}

#[test]
fn generate_shape_is_deterministic() {
    for &cat in &ALL_CATEGORIES {
        let a = generate_shape(cat, 64, 5).unwrap();
        let b = generate_shape(cat, 64, 5).unwrap();
        assert_eq!(a.points, b.points, "{cat}");
        let c = generate_shape(cat, 64, 6).unwrap();
        assert_ne!(a.points, c.points, "{cat} ignores seed");
    }
}

#[test]
fn generate_shape_rejects_tiny_n() {
    assert!(generate_shape(Category::Sphere, 7, 0).is_err());
}

#[test]
fn box_face_sampling_matches_area_weights() {
    // extents (1,2,3) == half-extents (0.5,1,1.5); x-face pair area fraction
    // is bc/(ab+bc+ca). Binomial 3-sigma bounds over 1e5 samples.
    let n = 100_000;
    let h = [0.5, 1.0, 1.5];
    let mut rng = crate::rng::rng_from(123);
    let pts = box_surface(n, h, [0.0; 3], &mut rng);
    let (a, b, c) = (1.0, 2.0, 3.0);
    let denom = a * b + b * c + c * a;
    let expect = [b * c / denom, a * c / denom, a * b / denom];
    for axis in 0..3 {
        let count = pts
            .iter()
            .filter(|p| (p[axis].abs() - h[axis]).abs() < 1e-12)
            .count();
        let p = expect[axis];
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        let got = count as f64 / n as f64;
        assert!(
            (got - p).abs() < 3.0 * sigma,
            "axis {axis}: {got} vs {p} (3s={})",
            3.0 * sigma
        );
    }
}

#[test]
fn rigid_transform_ranges_and_moments() {
    let n = 10_000;
    let mut sums = [0.0f64; 3];
    for seed in 0..n {
        let t = random_rigid_transform(seed);
        for k in 0..3 {
            assert!((0.0..=45.0).contains(&t.angles_deg[k]));
            assert!((-0.5..=0.5).contains(&t.translation[k]));
            sums[k] += t.angles_deg[k];
        }
    }
    // uniform[0,45]: mean 22.5, sd 45/sqrt(12); 3-sigma band for the mean
    let band = 3.0 * (45.0 / 12f64.sqrt()) / (n as f64).sqrt();
    for s in sums {
        let mean = s / n as f64;
        assert!((mean - 22.5).abs() < band, "mean {mean}");
    }
}

#[test]
fn rigid_transform_deterministic() {
    assert_eq!(random_rigid_transform(9), random_rigid_transform(9));
}

#[test]
fn rotation_matrix_is_orthonormal() {
    for seed in 0..50 {
        let r = random_rigid_transform(seed).rotation_matrix();
        // R^T R == I to 1e-9 and det == +1
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-9);
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        assert!((det - 1.0).abs() < 1e-9);
    }
}

#[test]
fn identity_transform_gives_zero_flow() {
    let cloud = generate_shape(Category::Box, 32, 1).unwrap();
    let (target, flow) = apply_transform(&cloud, &RigidTransform::identity());
    assert_eq!(target.points, cloud.points);
    assert!(flow.vectors.iter().all(|v| *v == [0.0; 3]));
}

#[test]
fn rz_90_rotates_x_to_y() {
    let t = RigidTransform {
        angles_deg: [0.0, 0.0, 90.0],
        translation: [0.0; 3],
    };
    let p = t.apply_point([1.0, 0.0, 0.0]);
    assert!((p[0]).abs() < 1e-12 && (p[1] - 1.0).abs() < 1e-12 && p[2].abs() < 1e-12);
}

#[test]
fn rigid_transform_preserves_pairwise_distances() {
    let cloud = generate_shape(Category::Cone, 32, 3).unwrap();
    let t = random_rigid_transform(17);
    let (target, _) = apply_transform(&cloud, &t);
    for i in 0..cloud.len() {
        for j in i + 1..cloud.len() {
            let d0 = dist2(cloud.points[i], cloud.points[j]).sqrt();
            let d1 = dist2(target.points[i], target.points[j]).sqrt();
            assert!((d0 - d1).abs() < 1e-9);
        }
    }
}

#[test]
fn rescale_identity_when_already_scaled() {
    let mut src = PointCloud::from_points(vec![[-10.0, -10.0, -10.0], [10.0, 10.0, 10.0]]);
    let mut tgt = src.clone();
    let mut flow = FlowField {
        vectors: vec![[1.0, 0.0, 0.0]; 2],
    };
    let rec = rescale_pair(&mut src, &mut tgt, &mut flow).unwrap();
    assert_eq!(rec.scale, 1.0);
    assert_eq!(src.points[1], [10.0, 10.0, 10.0]);
    assert_eq!(flow.vectors[0], [1.0, 0.0, 0.0]);
}

#[test]
fn rescale_unit_box_touches_exactly() {
    let mut src = PointCloud::from_points(vec![[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]);
    let mut tgt = src.clone();
    let mut flow = FlowField {
        vectors: vec![[0.1, 0.0, 0.0]; 2],
    };
    let rec = rescale_pair(&mut src, &mut tgt, &mut flow).unwrap();
    assert_eq!(rec.scale, 20.0);
    assert_eq!(src.points[0], [-10.0, -10.0, -10.0]);
    assert_eq!(src.points[1], [10.0, 10.0, 10.0]);
    // flow norms scale by exactly the spatial factor
    assert_eq!(flow.vectors[0], [2.0, 0.0, 0.0]);
}

#[test]
fn rescale_rejects_degenerate_bbox() {
    let mut src = PointCloud::from_points(vec![[1.0, 1.0, 1.0]; 3]);
    let mut tgt = src.clone();
    let mut flow = FlowField::default();
    assert!(rescale_pair(&mut src, &mut tgt, &mut flow).is_err());
}

#[test]
fn gaussian_noise_sigma_zero_is_identity() {
    let cloud = generate_shape(Category::Plane, 32, 2).unwrap();
    let noisy = add_gaussian_noise(&cloud, 0.0, 99);
    assert_eq!(noisy.points, cloud.points);
}

#[test]
fn gaussian_noise_deterministic() {
    let cloud = generate_shape(Category::Plane, 32, 2).unwrap();
    assert_eq!(
        add_gaussian_noise(&cloud, 0.05, 7).points,
        add_gaussian_noise(&cloud, 0.05, 7).points
    );
}

#[test]
fn gaussian_noise_empirical_std() {
    // chi statistics: std of per-coordinate sample std over m draws is
    // roughly sigma / sqrt(2m).
    let m = 100_000 / 3 + 1;
    let cloud = PointCloud::from_points(vec![[0.0; 3]; m]);
    let noisy = add_gaussian_noise(&cloud, 0.05, 31);
    let offsets: Vec<f64> = noisy.points.iter().flatten().copied().collect();
    let n = offsets.len() as f64;
    let var = offsets.iter().map(|v| v * v).sum::<f64>() / n;
    let std = var.sqrt();
    let band = 3.0 * 0.05 / (2.0 * n).sqrt();
    assert!((std - 0.05).abs() < band, "std {std}");
}

#[test]
fn crop_keep_ratio_one_is_identity() {
    let cloud = generate_shape(Category::Cylinder, 32, 4).unwrap();
    let (out, idx) = crop_incomplete(&cloud, 1.0, 5).unwrap();
    assert_eq!(out.points, cloud.points);
    assert_eq!(idx, (0..32).collect::<Vec<_>>());
}

#[test]
fn crop_collinear_keeps_nearest_to_anchor() {
    // points at x = 0..9; force anchors until one lands at x=0
    let pts: Vec<[f64; 3]> = (0..10).map(|i| [i as f64, 0.0, 0.0]).collect();
    let cloud = PointCloud::from_points(pts);
    for seed in 0..200 {
        let (out, idx) = crop_incomplete(&cloud, 0.5, seed).unwrap();
        assert_eq!(out.len(), 5);
        // survivors are always 5 consecutive points around the anchor
        let lo = idx[0];
        assert_eq!(idx, (lo..lo + 5).collect::<Vec<_>>());
        if lo == 0 {
            let xs: Vec<f64> = out.points.iter().map(|p| p[0]).collect();
            assert_eq!(xs, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
            return;
        }
    }
    panic!("no seed anchored at x=0");
}

#[test]
fn crop_output_size_is_ceil() {
    let cloud = generate_shape(Category::Box, 31, 8).unwrap();
    let (out, _) = crop_incomplete(&cloud, 0.75, 1).unwrap();
    assert_eq!(out.len(), (0.75f64 * 31.0).ceil() as usize);
}

#[test]
fn crop_output_is_subset() {
    let cloud = generate_shape(Category::Torus, 64, 9).unwrap();
    let (out, idx) = crop_incomplete(&cloud, 0.75, 2).unwrap();
    for (k, &i) in idx.iter().enumerate() {
        assert_eq!(out.points[k], cloud.points[i]);
    }
}

#[test]
fn outliers_count_zero_is_identity() {
    let cloud = generate_shape(Category::Helix, 32, 5).unwrap();
    let (out, mask) = add_outliers(&cloud, 0, 3);
    assert_eq!(out.points, cloud.points);
    assert!(mask.iter().all(|m| !m));
}

#[test]
fn outliers_appended_superset_and_mask() {
    let cloud = generate_shape(Category::Helix, 32, 5).unwrap();
    let (out, mask) = add_outliers(&cloud, 4, 3);
    assert_eq!(out.len(), 36);
    assert_eq!(&out.points[..32], &cloud.points[..]);
    assert_eq!(mask.iter().filter(|m| **m).count(), 4);
    for p in &out.points[32..] {
        for v in p {
            assert!((-10.0..=10.0).contains(v));
        }
    }
}

#[test]
fn outliers_uniform_moments() {
    let cloud = PointCloud::from_points(vec![[0.0; 3]; 8]);
    let n = 100_000;
    let (out, _) = add_outliers(&cloud, n, 77);
    for axis in 0..3 {
        let mean: f64 =
            out.points[8..].iter().map(|p| p[axis]).sum::<f64>() / n as f64;
        let band = 3.0 * (20.0 / 12f64.sqrt()) / (n as f64).sqrt();
        assert!(mean.abs() < band, "axis {axis} mean {mean}");
    }
}

mod io_tests {
    use super::super::io::*;
    use super::*;
    use std::str::FromStr;

    #[test]
    fn cloud_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.xyz");
        let cloud = generate_shape(Category::Ellipsoid, 64, 13).unwrap();
        write_cloud(&path, &cloud).unwrap();
        let back = read_cloud(&path).unwrap();
        assert_eq!(back.points, cloud.points);
    }

    #[test]
    fn short_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.xyz");
        std::fs::write(&path, "0 0 0\n1.0 2.0\n").unwrap();
        match read_cloud(&path) {
            Err(crate::Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let mut m = Manifest::new(42);
        for i in 0..3u64 {
            m.tasks.push(ManifestTask {
                source_path: format!("task{i}_source.xyz"),
                target_path: format!("task{i}_target.xyz"),
                flow_path: format!("task{i}_flow.xyz"),
                category: Category::from_str("torus").unwrap(),
                noise: NoiseKind::Incompleteness,
                seed: 100 + i,
                mask_indices: vec![0, 1, 5],
            });
        }
        write_manifest(&path, &m).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn dataset_roundtrip_bit_exact() {
        let cfg = crate::config::RunConfig {
            n_points: 48,
            ..crate::config::RunConfig::default()
        };
        let tasks: Vec<TaskPair> = [Category::Sphere, Category::Torus]
            .iter()
            .enumerate()
            .map(|(i, &cat)| {
                crate::data::build_task(cat, 48, NoiseKind::Incompleteness, &cfg, 900 + i as u64)
                    .unwrap()
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &tasks, 7).unwrap();
        let (back, seed) = load_dataset(dir.path()).unwrap();
        assert_eq!(seed, 7);
        assert_eq!(back.len(), tasks.len());
        for (a, b) in back.iter().zip(&tasks) {
            assert_eq!(a.source.points, b.source.points);
            assert_eq!(a.target.points, b.target.points);
            assert_eq!(a.gt_flow.vectors, b.gt_flow.vectors);
            assert_eq!(a.mask, b.mask);
            assert_eq!(a.category, b.category);
            assert_eq!(a.noise, b.noise);
            assert_eq!(a.seed, b.seed);
        }
    }

    #[test]
    fn load_rejects_out_of_range_mask_index() {
        let cfg = crate::config::RunConfig {
            n_points: 16,
            ..crate::config::RunConfig::default()
        };
        let task =
            crate::data::build_task(Category::Sphere, 16, NoiseKind::None, &cfg, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &[task], 1).unwrap();
        let mpath = dir.path().join("manifest.json");
        let mut m = read_manifest(&mpath).unwrap();
        m.tasks[0].mask_indices = vec![999];
        write_manifest(&mpath, &m).unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }
}
