use ites_core::skillparams::{
    backproject, codebook_index, codebook_triple, fit_hinge, fuse_grasp_type, hand_laterality, project, quantize_direction,
    CameraIntrinsics, GraspDistribution, HingeFitConfig,
};
use ites_core::taskmodel::Hand;
use ites_core::{Point2, Vec3};
use proptest::prelude::*;

fn intrinsics() -> impl Strategy<Value = CameraIntrinsics> {
    (100.0f64..2000.0, 100.0f64..2000.0, 0.0f64..1280.0, 0.0f64..720.0)
        .prop_map(|(fx, fy, cx, cy)| CameraIntrinsics::new(fx, fy, cx, cy).unwrap())
}

fn vector() -> impl Strategy<Value = Vec3> {
    (-10.0f64..10.0, -10.0f64..10.0, -10.0f64..10.0)
        .prop_map(|(x, y, z)| Vec3::new(x, y, z))
        .prop_filter("nonzero", |v| v.norm() > 1e-6)
}

/// Signed permutation as (permutation, signs).
fn symmetry() -> impl Strategy<Value = ([usize; 3], [f64; 3])> {
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    (prop::sample::select(perms.to_vec()), prop::array::uniform3(prop::bool::ANY))
        .prop_map(|(p, s)| (p, s.map(|neg| if neg { -1.0 } else { 1.0 })))
}

fn apply(g: &([usize; 3], [f64; 3]), v: [f64; 3]) -> [f64; 3] {
    [g.1[0] * v[g.0[0]], g.1[1] * v[g.0[1]], g.1[2] * v[g.0[2]]]
}

/// Rotation from a unit quaternion.
fn rotation(q: [f64; 4]) -> [[f64; 3]; 3] {
    let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|c| c / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn rotate(r: &[[f64; 3]; 3], v: Vec3) -> Vec3 {
    let a = v.to_array();
    Vec3::new(
        r[0][0] * a[0] + r[0][1] * a[1] + r[0][2] * a[2],
        r[1][0] * a[0] + r[1][1] * a[1] + r[1][2] * a[2],
        r[2][0] * a[0] + r[2][1] * a[1] + r[2][2] * a[2],
    )
}

fn arc(radius: f64, sweep: f64, n: usize) -> Vec<Vec3> {
    (0..n)
        .map(|i| {
            let t = sweep * i as f64 / (n - 1) as f64;
            Vec3::new(radius * t.cos(), radius * t.sin(), 0.0)
        })
        .collect()
}

fn distribution(values: Vec<f64>) -> GraspDistribution {
    let total: f64 = values.iter().sum();
    values.iter().enumerate().map(|(i, v)| (format!("g{i}"), v / total)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn backproject_round_trips(k in intrinsics(), u in 0.0f64..1280.0, v in 0.0f64..720.0, depth in 100.0f64..10_000.0) {
        let p = backproject(u, v, depth, &k).unwrap();
        let back = project(p, &k).unwrap();
        prop_assert!((back.x - u).abs() < 1e-9 && (back.y - v).abs() < 1e-9);
    }

    #[test]
    fn quantize_ignores_scale(v in vector(), s in 1e-3f64..1e3) {
        prop_assert_eq!(quantize_direction(v).unwrap(), quantize_direction(v * s).unwrap());
    }

    #[test]
    fn quantize_commutes_with_signed_permutations(v in vector(), g in symmetry()) {
        let moved = quantize_direction(Vec3::from_array(apply(&g, v.to_array()))).unwrap();
        let t = codebook_triple(quantize_direction(v).unwrap()).unwrap().map(f64::from);
        let expected = codebook_index(apply(&g, t).map(|c| c as i8)).unwrap();
        // Exact ties between codebook entries may break differently after the move.
        let unit = v.normalized(0.0).unwrap();
        let a = codebook_triple(moved).unwrap().map(f64::from);
        let cos = |t: [f64; 3]| {
            let gt = Vec3::from_array(t);
            Vec3::from_array(apply(&g, unit.to_array())).dot(gt) / gt.norm()
        };
        prop_assert!(moved == expected || (cos(a) - cos(apply(&g, t))).abs() < 1e-12);
    }

    #[test]
    fn laterality_swaps_with_hands(o in (0.0f64..1280.0, 0.0f64..720.0), l in (0.0f64..1280.0, 0.0f64..720.0), r in (0.0f64..1280.0, 0.0f64..720.0)) {
        let (o, l, r) = (Point2::new(o.0, o.1), Point2::new(l.0, l.1), Point2::new(r.0, r.1));
        match (hand_laterality(Some(o), Some(l), Some(r)), hand_laterality(Some(o), Some(r), Some(l))) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b.other()),
            (Err(a), Err(b)) => prop_assert_eq!(a, b),
            other => prop_assert!(false, "asymmetric {:?}", other),
        }
    }

    #[test]
    fn grasp_argmax_ignores_prescaling(
        raw in prop::collection::vec(0.01f64..1.0, 2..6),
        prior_raw in prop::collection::vec(0.01f64..1.0, 6),
        c in 0.01f64..100.0,
    ) {
        let n = raw.len();
        let scores = distribution(raw.clone());
        let prior = distribution(prior_raw[..n].to_vec());
        let scaled_scores = distribution(raw.iter().map(|v| v * c).collect());
        let scaled_prior = distribution(prior_raw[..n].iter().map(|v| v * c).collect());
        let base = fuse_grasp_type(&scores, Some(&prior)).unwrap();
        let mut sorted: Vec<f64> = base.posterior.values().copied().collect();
        sorted.sort_by(|a, b| b.total_cmp(a));
        prop_assume!(sorted[0] - sorted[1] > 1e-9);
        prop_assert_eq!(&fuse_grasp_type(&scaled_scores, Some(&prior)).unwrap().label, &base.label);
        prop_assert_eq!(&fuse_grasp_type(&scores, Some(&scaled_prior)).unwrap().label, &base.label);
    }

    #[test]
    fn hinge_fit_is_rigid_equivariant(
        q in prop::array::uniform4(-1.0f64..1.0),
        t in (-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0),
        radius in 0.1f64..1.5,
        sweep in 0.5f64..3.0,
    ) {
        prop_assume!(q.iter().map(|c| c * c).sum::<f64>() > 0.01);
        let r = rotation(q);
        let shift = Vec3::new(t.0, t.1, t.2);
        let cfg = HingeFitConfig::default();
        let pts = arc(radius, sweep, 25);
        let moved: Vec<Vec3> = pts.iter().map(|p| rotate(&r, *p) + shift).collect();
        let a = fit_hinge(&pts, &cfg).unwrap().params;
        let b = fit_hinge(&moved, &cfg).unwrap().params;
        prop_assert!((rotate(&r, a.center) + shift - b.center).norm() < 1e-6);
        prop_assert!((rotate(&r, a.axis) - b.axis).norm() < 1e-6);
        prop_assert!((a.radius - b.radius).abs() < 1e-6 * radius);
        prop_assert!((a.sweep() - b.sweep()).abs() < 1e-6);
    }
}

#[test]
fn laterality_example_flip() {
    let o = Some(Point2::new(0.0, 0.0));
    let near = Some(Point2::new(1.0, 0.0));
    let far = Some(Point2::new(5.0, 0.0));
    assert_eq!(hand_laterality(o, near, far), Ok(Hand::Left));
    assert_eq!(hand_laterality(o, far, near), Ok(Hand::Right));
}
