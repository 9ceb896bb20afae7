use super::*;
use proptest::prelude::*;

#[test]
fn downsample_draws_distinct_indices_and_is_deterministic() {
    let spec = ShapeSpec::new(ShapeKind::SphereShell, 2048, 9);
    let cloud = synth(&spec).unwrap().cloud;
    let a = downsample(&cloud, 1024, 42).unwrap();
    let b = downsample(&cloud, 1024, 42).unwrap();
    assert_eq!(a.len(), 1024);
    assert_eq!(a, b);
    // Distinct original points: every sampled point occurs in the source,
    // and sampling N = input size is the identity subset.
    let full = downsample(&cloud, 2048, 7).unwrap();
    assert_eq!(full.points(), cloud.points());
    let mut seen = std::collections::HashSet::new();
    for p in a.points() {
        assert!(seen.insert(format!("{p:?}")), "duplicate point drawn");
    }
    assert!(downsample(&cloud, 4096, 0).is_err());
}

#[test]
fn normalize_centers_and_scales() {
    // Unit cube corners: centroid (0.5,0.5,0.5), mean centered norm √3/2.
    let corners: Vec<Vec3> = (0..8)
        .map(|i| [(i & 1) as Real, ((i >> 1) & 1) as Real, ((i >> 2) & 1) as Real])
        .collect();
    let cloud = PointCloud::new(corners).unwrap();
    let norm = normalize(&cloud).unwrap();
    for a in 0..3 {
        assert!((norm.centroid[a] - 0.5).abs() < 1e-12);
    }
    assert!((norm.scale - (3.0 as Real).sqrt() / 2.0).abs() < 1e-12);
    let out_centroid = norm.cloud.centroid();
    assert!(linalg::norm(out_centroid) < 1e-9);

    // Round trip: original = output·scale + centroid.
    for (orig, n) in cloud.points().iter().zip(norm.cloud.points()) {
        let back = linalg::add(linalg::scale(*n, norm.scale), norm.centroid);
        assert!(linalg::dist(back, *orig) < 1e-12);
    }

    // Translation invariance of the normalized output.
    let shifted = PointCloud::new(
        cloud.points().iter().map(|p| linalg::add(*p, [3.0, -2.0, 0.5])).collect(),
    )
    .unwrap();
    let norm2 = normalize(&shifted).unwrap();
    for (a, b) in norm.cloud.points().iter().zip(norm2.cloud.points()) {
        assert!(linalg::dist(*a, *b) < 1e-9);
    }

    // Idempotence: normalizing a normalized cloud changes nothing.
    let again = normalize(&norm.cloud).unwrap();
    for (a, b) in norm.cloud.points().iter().zip(again.cloud.points()) {
        assert!(linalg::dist(*a, *b) < 1e-12);
    }

    // Degenerate cloud: scale clamps to 1 and is flagged.
    let dup = PointCloud::new(vec![[1.0, 2.0, 3.0]; 5]).unwrap();
    let n = normalize(&dup).unwrap();
    assert!(n.degenerate);
    assert_eq!(n.scale, 1.0);
}

#[test]
fn knn_tie_breaks_by_smaller_index() {
    // Middle point of three collinear points: both endpoints at distance 1,
    // the smaller index wins.
    let pts = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
    let nn = knn(&pts, 1).unwrap();
    assert_eq!(nn[1], vec![0]);
    assert_eq!(nn[0], vec![1]);
    assert_eq!(nn[2], vec![1]);
    assert!(knn(&pts, 3).is_err());
}

#[test]
fn knn_shape_at_paper_scale() {
    let spec = ShapeSpec::new(ShapeKind::Torus, 96, 3);
    let cloud = synth(&spec).unwrap().cloud;
    let nn = knn(cloud.points(), 16).unwrap();
    assert_eq!(nn.len(), 96);
    assert!(nn.iter().all(|row| row.len() == 16));
}

/// Brute-force oracle: full sort of all pairwise distances.
fn knn_oracle(points: &[Vec3], k: usize) -> Vec<Vec<usize>> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut d: Vec<(Real, usize)> = points
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(j, q)| (linalg::dist2(*p, *q), j))
                .collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            d[..k].iter().map(|&(_, j)| j).collect()
        })
        .collect()
}

#[test]
fn knn_agrees_with_bruteforce_oracle_on_random_clouds() {
    for seed in 0..50u64 {
        let spec = ShapeSpec::new(ShapeKind::SphereShell, 60, seed);
        let cloud = synth(&spec).unwrap().cloud;
        let got = knn(cloud.points(), 8).unwrap();
        let want = knn_oracle(cloud.points(), 8);
        assert_eq!(got, want, "seed {seed}");
    }
}

#[test]
fn synth_poses_are_valid_over_many_seeds() {
    for seed in 0..1000u64 {
        let kind = ShapeKind::ALL[(seed % 7) as usize];
        let spec = ShapeSpec::desk_scale(kind, 48, seed);
        let result = synth(&spec).unwrap();
        result.pose.validate().unwrap_or_else(|e| panic!("seed {seed}: {e}"));
    }
}

#[test]
fn synth_betti_expectations() {
    assert_eq!(synth(&ShapeSpec::new(ShapeKind::CircleRing, 64, 0)).unwrap().betti, (1, 1));
    assert_eq!(synth(&ShapeSpec::new(ShapeKind::Torus, 512, 0)).unwrap().betti, (1, 2));
    assert_eq!(synth(&ShapeSpec::new(ShapeKind::TwoClusters, 64, 0)).unwrap().betti, (2, 0));
}

#[test]
fn xyz_and_ply_round_trip() {
    let dir = std::env::temp_dir().join(format!("topopose-io-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let cloud = synth(&ShapeSpec::new(ShapeKind::Bowl, 32, 5)).unwrap().cloud;

    let xyz = dir.join("cloud.xyz");
    io::write_xyz(&xyz, &cloud).unwrap();
    let back = io::read_xyz(&xyz).unwrap();
    assert_eq!(back.len(), cloud.len());
    for (a, b) in back.points().iter().zip(cloud.points()) {
        assert!(linalg::dist(*a, *b) < 1e-9);
    }

    let ply = dir.join("cloud.ply");
    io::write_ply(&ply, &cloud).unwrap();
    let back = io::read_ply(&ply).unwrap();
    assert_eq!(back.len(), cloud.len());
    for (a, b) in back.points().iter().zip(cloud.points()) {
        // PLY stores f32.
        assert!(linalg::dist(*a, *b) < 1e-6);
    }

    let pose = synth(&ShapeSpec::new(ShapeKind::Bowl, 16, 1)).unwrap().pose;
    let pj = dir.join("pose.json");
    io::write_pose(&pj, &pose).unwrap();
    let back = io::read_pose(&pj).unwrap();
    assert!((back.translation[0] - pose.translation[0]).abs() < 1e-12);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn bad_files_are_reported_with_path() {
    let dir = std::env::temp_dir().join(format!("topopose-io-bad-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let bad = dir.join("bad.xyz");
    std::fs::write(&bad, "1.0 2.0 notanumber\n").unwrap();
    let err = io::read_xyz(&bad).unwrap_err().to_string();
    assert!(err.contains("bad.xyz"), "{err}");
    std::fs::remove_dir_all(&dir).ok();
}

proptest! {
    #[test]
    fn normalize_output_always_centered(seed in 0u64..500) {
        let kind = ShapeKind::ALL[(seed % 7) as usize];
        let spec = ShapeSpec::new(kind, 32, seed);
        let cloud = synth(&spec).unwrap().cloud;
        let norm = normalize(&cloud).unwrap();
        prop_assert!(linalg::norm(norm.cloud.centroid()) < 1e-9);
    }
}
