mod common;

use capservo::geometry::{articulate, BendPlane, EePose, LimbModel, LimbSpec, RelativePose, SegmentDims, Vec3};
use capservo::LimbSegment;
use proptest::prelude::*;
use rand::Rng;

fn frustum(rb: f64, rt: f64) -> LimbModel {
    LimbModel::straight(LimbSegment::new(Vec3::new(-30.0, 0.0, 0.0), Vec3::x(), 60.0, rb, rt).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn k_star_ignores_lateral_sensor_offset_on_cylinder(
        x in -25.0..25.0f64, y in -15.0..15.0f64, dy in -15.0..15.0f64, z in 4.5..30.0f64, r in 2.0..7.0f64,
    ) {
        let limb = frustum(r, r);
        let a = limb.surface_point_k_star(&Vec3::new(x, y, z), 0.0).unwrap();
        let b = limb.surface_point_k_star(&Vec3::new(x, y + dy, z), 0.0).unwrap();
        prop_assert!((a - b).norm() < 1e-12);
    }

    #[test]
    fn k_star_moves_with_horizontally_translated_scene(seed in any::<u64>(), tx in -50.0..50.0f64, ty in -50.0..50.0f64) {
        let mut rng = common::rng(seed);
        let spec = LimbSpec {
            origin_cm: [0.0, 0.0, 0.0],
            heading_rad: rng.gen_range(0.0..6.28),
            proximal: SegmentDims { length_cm: 30.0, radius_base_cm: 4.5, radius_tip_cm: 3.8 },
            distal: Some(SegmentDims { length_cm: 25.0, radius_base_cm: 3.8, radius_tip_cm: 2.5 }),
            bend_plane: BendPlane::Horizontal,
            preset_yaw_rad: 0.0,
        };
        let angle = rng.gen_range(0.0..2.0);
        let limb = articulate(&spec, angle).unwrap();
        let moved = articulate(&LimbSpec { origin_cm: [tx, ty, 0.0], ..spec }, angle).unwrap();
        let seg = &limb.segments()[rng.gen_range(0..2)];
        let p = common::point_near_segment(seg, rng.gen_range(0.1..0.9), rng.gen_range(-1.0..1.0), rng.gen_range(1.0..12.0));
        let shift = Vec3::new(tx, ty, 0.0);
        let a = limb.surface_point_k_star(&p, 0.0).unwrap();
        let b = moved.surface_point_k_star(&(p + shift), 0.0).unwrap();
        prop_assert!((a + shift - b).norm() < 1e-9);
    }

    #[test]
    fn k_star_lies_in_cross_section_and_on_surface(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let limb = common::random_limb(&mut rng);
        let seg = &limb.segments()[rng.gen_range(0..limb.segments().len())];
        let p = common::point_near_segment(seg, rng.gen_range(0.05..0.95), rng.gen_range(-1.5..1.5), rng.gen_range(0.5..15.0));
        let f = limb.surface_frame(&p, 0.0).unwrap();
        prop_assert!(f.axis.dot(&(f.k_star - f.k0)).abs() < 1e-9);
        let own = &limb.segments()[f.segment];
        prop_assert!(own.signed_distance(&f.k_star).abs() < 1e-6);
        // topmost point of the cross-section circle
        prop_assert!(f.up.z >= 0.0);
        prop_assert!(f.lateral.z.abs() < 1e-12);
    }

    #[test]
    fn place_then_measure_round_trips(
        seed in any::<u64>(),
        dy in -10.0..10.0f64, dz in 0.5..15.0f64,
        ty in -0.39..0.39f64, tz in -0.39..0.39f64, roll in -0.5..0.5f64,
    ) {
        let mut rng = common::rng(seed);
        let limb = common::random_limb(&mut rng);
        let seg = rng.gen_range(0..limb.segments().len());
        let station = limb.segments()[seg].length() * rng.gen_range(0.3..0.7);
        let want = RelativePose::new(dy, dz, ty, tz);
        let ee = limb.place_sensor(seg, station, &want, roll, 0.0).unwrap();
        // only meaningful where the placed sensor is still nearest this segment
        prop_assume!(limb.nearest_segment(&ee.position, 0.0) == seg);
        let f = limb.surface_frame(&ee.position, 0.0).unwrap();
        prop_assume!(f.station > 0.0 && f.station < limb.segments()[seg].length());
        let got = limb.relative_pose(&ee, 0.0).unwrap();
        for (a, b) in got.to_array().iter().zip(want.to_array()) {
            prop_assert!((a - b).abs() < 1e-6, "{:?} vs {:?}", got, want);
        }
    }

    #[test]
    fn level_sensor_over_frustum_reads_negative_slope(
        rb in 3.0..7.0f64, taper in 0.0..0.08f64, x in -20.0..20.0f64, h in 1.0..15.0f64,
    ) {
        let rt = rb - taper * 60.0;
        prop_assume!(rt > 0.5);
        let limb = frustum(rb, rt);
        let k = limb.surface_point_k_star(&Vec3::new(x, 0.0, rb + h), 0.0).unwrap();
        let p = limb.relative_pose(&EePose::new(Vec3::new(x, 0.0, k.z + h), 0.0, 0.0, 0.0), 0.0).unwrap();
        let slope = ((rb - rt) / 60.0).atan();
        prop_assert!((p.theta_y + slope).abs() < 1e-12);
        prop_assert!(p.theta_z.abs() < 1e-12);
    }

    #[test]
    fn clearance_sign_matches_inside_test(seed in any::<u64>(), q in prop::array::uniform3(-60.0..60.0f64)) {
        let mut rng = common::rng(seed);
        let limb = common::random_limb(&mut rng);
        let p = Vec3::from(q) * 0.5 + limb.segments()[0].tip_point();
        let inside = limb.segments().iter().any(|s| common::inside_segment(s, &p));
        let c = limb.signed_clearance(&p, 0.0);
        prop_assert_eq!(inside, c <= 0.0, "clearance {}", c);
    }
}

#[test]
fn bending_preserves_the_proximal_segment_and_joint() {
    let spec = LimbSpec {
        origin_cm: [1.0, 2.0, 3.0],
        heading_rad: 0.7,
        proximal: SegmentDims { length_cm: 40.0, radius_base_cm: 6.4, radius_tip_cm: 5.9 },
        distal: Some(SegmentDims { length_cm: 40.0, radius_base_cm: 5.2, radius_tip_cm: 3.5 }),
        bend_plane: BendPlane::Vertical,
        preset_yaw_rad: 0.0,
    };
    let straight = articulate(&spec, 0.0).unwrap();
    for deg in [30.0f64, 60.0, 90.0, 120.0] {
        let bent = articulate(&spec, deg.to_radians()).unwrap();
        assert_eq!(bent.segments()[0], straight.segments()[0]);
        assert!((bent.joint_point().unwrap() - straight.joint_point().unwrap()).norm() < 1e-9);
        let cos = bent.segments()[0].axis_dir().dot(&bent.segments()[1].axis_dir());
        assert!((cos - deg.to_radians().cos()).abs() < 1e-12);
    }
}
