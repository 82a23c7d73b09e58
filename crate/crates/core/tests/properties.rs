//! Property tests for the numeric invariants the filter relies on.

use proptest::prelude::*;

use osmcl_core::distance_field::DistanceField;
use osmcl_core::map_model::{geo_to_map, map_to_geo, GeoPoint, MapPoint, Segment};
use osmcl_core::measurement_model::{
    downsample_voxel, DistanceFunctionKind, DistanceFunctionSpec, PointClass, SegmentedPoint,
    SegmentedPointCloud,
};
use osmcl_core::motion_model::{normalize_angle, Pose};
use osmcl_core::particle_filter::{initialize, InitSpec};
use osmcl_core::rng::{derive_rng, STREAM_RESAMPLE};

fn kind_strategy() -> impl Strategy<Value = DistanceFunctionKind> {
    prop_oneof![
        Just(DistanceFunctionKind::Gaussian),
        Just(DistanceFunctionKind::Quadratic),
        Just(DistanceFunctionKind::ExpDecay),
        Just(DistanceFunctionKind::MapliteLinear),
    ]
}

proptest! {
    /// Road kernels never increase with distance and stay inside the
    /// clamp band.
    #[test]
    fn kernels_are_monotone_and_clamped(
        kind in kind_strategy(),
        d1 in 0.0f64..150.0,
        d2 in 0.0f64..150.0,
    ) {
        let spec = DistanceFunctionSpec::of_kind(kind);
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let w_lo = spec.eval(lo, PointClass::Road).unwrap();
        let w_hi = spec.eval(hi, PointClass::Road).unwrap();
        prop_assert!(w_lo >= w_hi);
        for w in [w_lo, w_hi] {
            prop_assert!(w >= spec.epsilon && w <= 1.0);
        }
        // Non-road mirrors it: farther from the road is never worse.
        let n_lo = spec.eval(lo, PointClass::NonRoad).unwrap();
        let n_hi = spec.eval(hi, PointClass::NonRoad).unwrap();
        prop_assert!(n_hi >= n_lo);
    }

    /// Pre-clamp road and non-road weights are exact complements.
    #[test]
    fn complement_identity_holds(kind in kind_strategy(), d in 0.0f64..500.0) {
        let spec = DistanceFunctionSpec::of_kind(kind);
        let road = spec.eval_unclamped(d, PointClass::Road).unwrap();
        let nonroad = spec.eval_unclamped(d, PointClass::NonRoad).unwrap();
        prop_assert_eq!(road + nonroad, 1.0);
    }

    #[test]
    fn normalize_angle_lands_in_half_open_interval(theta in -1e4f64..1e4) {
        let n = normalize_angle(theta);
        prop_assert!(n > -std::f64::consts::PI && n <= std::f64::consts::PI);
        // Same direction: unit vectors agree.
        prop_assert!((n.sin() - theta.sin()).abs() < 1e-6);
        prop_assert!((n.cos() - theta.cos()).abs() < 1e-6);
    }

    #[test]
    fn normalize_angle_is_shift_invariant(theta in -6.0f64..6.0, k in -3i32..=3) {
        let shifted = theta + k as f64 * std::f64::consts::TAU;
        let a = normalize_angle(theta);
        let b = normalize_angle(shifted);
        prop_assert!((a - b).abs() < 1e-9 ||
            (a - b).abs() > std::f64::consts::TAU - 1e-9);
    }

    /// Map projection round-trips inside the supported extent.
    #[test]
    fn geo_round_trip(
        dlat in -0.009f64..0.009,
        dlon in -0.012f64..0.012,
    ) {
        let origin = GeoPoint { lat: 41.0, lon: 9.0 };
        let p = GeoPoint { lat: 41.0 + dlat, lon: 9.0 + dlon };
        let m = geo_to_map(p, origin).unwrap();
        let back = map_to_geo(m, origin);
        prop_assert!((back.lat - p.lat).abs() < 1e-12);
        prop_assert!((back.lon - p.lon).abs() < 1e-12);
    }

    /// Segment distance agrees with a dense parameter scan.
    #[test]
    fn segment_distance_matches_dense_scan(
        ax in -50.0f64..50.0, ay in -50.0f64..50.0,
        bx in -50.0f64..50.0, by in -50.0f64..50.0,
        px in -80.0f64..80.0, py in -80.0f64..80.0,
    ) {
        prop_assume!((ax - bx).abs() > 1e-6 || (ay - by).abs() > 1e-6);
        let seg = Segment { a: MapPoint { e: ax, n: ay }, b: MapPoint { e: bx, n: by } };
        let p = MapPoint { e: px, n: py };
        let d = seg.distance_to(p);
        let scan = (0..=200)
            .map(|i| {
                let q = seg.point_at(i as f64 / 200.0);
                ((q.e - p.e).powi(2) + (q.n - p.n).powi(2)).sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        // True minimum is never above any sample, and the scan is within
        // one grid step of it (distance is 1-Lipschitz along the segment).
        prop_assert!(d <= scan + 1e-9);
        prop_assert!(scan <= d + seg.length() / 200.0 + 1e-9);
    }

    /// Voxel downsampling: idempotent, never grows, one point per
    /// (voxel, class) key.
    #[test]
    fn voxel_downsample_properties(
        pts in prop::collection::vec((-40.0f64..40.0, -40.0f64..40.0, 0u8..=1), 0..120),
        voxel in 0.5f64..8.0,
    ) {
        let cloud = SegmentedPointCloud::simulated(
            pts.iter()
                .map(|&(a, b, c)| SegmentedPoint {
                    a,
                    b,
                    class: PointClass::from_u8(c).unwrap(),
                })
                .collect(),
        );
        let once = downsample_voxel(&cloud, voxel);
        prop_assert!(once.points.len() <= cloud.points.len());
        let twice = downsample_voxel(&once, voxel);
        prop_assert_eq!(&once.points, &twice.points);
        let mut keys = std::collections::HashSet::new();
        for p in &once.points {
            let key = (
                (p.a / voxel).floor() as i64,
                (p.b / voxel).floor() as i64,
                p.class,
            );
            prop_assert!(keys.insert(key), "duplicate voxel key {key:?}");
        }
    }

    /// Systematic resampling copy counts stay within one of N*w_i.
    #[test]
    fn systematic_counts_track_weights(
        raw in prop::collection::vec(0.01f64..10.0, 2..40),
        seed in 0u64..1000,
    ) {
        let n = 500usize;
        let groups = raw.len();
        let total: f64 = raw.iter().sum();
        let mut set = initialize(
            &InitSpec::Tracking {
                center: Pose { e: 0.0, n: 0.0, theta: 0.0 },
                radius_m: 1.0,
                count: n,
            },
            seed,
            20,
        )
        .unwrap();
        // Contiguous blocks per group (the +-1 copy guarantee is per
        // contiguous cumulative interval), group weight split evenly
        // over its members.
        let mut members = vec![0usize; groups];
        for i in 0..n {
            members[i * groups / n] += 1;
        }
        for (i, p) in set.particles_mut().iter_mut().enumerate() {
            let g = i * groups / n;
            p.pose.e = g as f64;
            p.log_weight = (raw[g] / total / members[g] as f64).ln();
        }
        let mut rng = derive_rng(seed, STREAM_RESAMPLE, 1, 0);
        set.systematic_resample(&mut rng);
        let mut counts = vec![0usize; groups];
        for p in set.particles() {
            counts[p.pose.e as usize] += 1;
        }
        for (g, &c) in counts.iter().enumerate() {
            let expect = n as f64 * raw[g] / total;
            prop_assert!(
                (c as f64 - expect).abs() <= 1.0 + 1e-9,
                "group {g}: {c} copies vs expected {expect}"
            );
        }
    }

    /// MCDF serialization round-trips at f32 precision.
    #[test]
    fn mcdf_round_trip(
        values in prop::collection::vec(0.0f64..1e4, 1..64),
        width in 1u32..8,
    ) {
        prop_assume!(values.len() as u32 % width == 0);
        let height = values.len() as u32 / width;
        let f32_values: Vec<f64> = values.iter().map(|v| *v as f32 as f64).collect();
        let field = DistanceField::from_parts(
            MapPoint { e: -3.0, n: 7.0 },
            2.0,
            width,
            height,
            f32_values.clone(),
        )
        .unwrap();
        let mut buf = Vec::new();
        field.write_mcdf(&mut buf).unwrap();
        let back = DistanceField::read_mcdf(buf.as_slice()).unwrap();
        prop_assert_eq!(back.values(), f32_values.as_slice());
        prop_assert_eq!(back.width(), width);
        prop_assert_eq!(back.height(), height);
    }

    /// Tracking initialization keeps every particle inside the disk and
    /// every heading in the normalized interval, for any seed.
    #[test]
    fn tracking_init_respects_disk(seed in 0u64..500) {
        let center = Pose { e: 12.0, n: -7.0, theta: 1.0 };
        let set = initialize(
            &InitSpec::Tracking { center, radius_m: 35.0, count: 64 },
            seed,
            20,
        )
        .unwrap();
        for p in set.particles() {
            let d = ((p.pose.e - center.e).powi(2) + (p.pose.n - center.n).powi(2)).sqrt();
            prop_assert!(d <= 35.0 + 1e-9);
            prop_assert!(
                p.pose.theta > -std::f64::consts::PI
                    && p.pose.theta <= std::f64::consts::PI
            );
        }
    }
}
