//! Times one filter step (propagate + score + estimate) at the
//! 10,000-particle / 200-point scale. Run with --release.

use std::time::Instant;

use osmcl_core::distance_field::{build_distance_field, Bounds};
use osmcl_core::map_model::{MapPoint, RoadGraph, Way};
use osmcl_core::measurement_model::{
    DistanceFunctionKind, DistanceFunctionSpec, PointClass, SegmentedPoint, SegmentedPointCloud,
};
use osmcl_core::motion_model::{ControlInput, Pose};
use osmcl_core::particle_filter::{initialize, FilterParams, InitSpec};

fn main() {
    let g = RoadGraph::from_ways(
        [
            (1, MapPoint { e: -1000.0, n: 0.0 }),
            (2, MapPoint { e: 1000.0, n: 0.0 }),
            (3, MapPoint { e: 0.0, n: -1000.0 }),
            (4, MapPoint { e: 0.0, n: 1000.0 }),
        ],
        vec![
            Way { id: 1, highway: "residential".into(), nodes: vec![1, 2] },
            Way { id: 2, highway: "residential".into(), nodes: vec![3, 4] },
        ],
    )
    .unwrap();
    let (min, max) = g.bounds();
    let field = build_distance_field(&g, Bounds { min, max }.padded(250.0), 2.0).unwrap();

    let mut points = Vec::new();
    for i in 0..200 {
        let a = (i as f64) * 0.25;
        points.push(SegmentedPoint {
            a,
            b: if i % 3 == 0 { 12.0 } else { 0.5 },
            class: if i % 3 == 0 { PointClass::NonRoad } else { PointClass::Road },
        });
    }
    let cloud = SegmentedPointCloud::simulated(points);
    let u = ControlInput { de: 2.5, dn: 0.0, dtheta: 0.01 };

    for kind in DistanceFunctionKind::ALL {
        let params = FilterParams::new(7, DistanceFunctionSpec::of_kind(kind));
        let mut set = initialize(
            &InitSpec::Tracking {
                center: Pose { e: 0.0, n: 0.0, theta: 0.0 },
                radius_m: 200.0,
                count: 10_000,
            },
            7,
            20,
        )
        .unwrap();
        // Warm up, then time 10 steps.
        set.step(&u, &cloud, &field, &params);
        let start = Instant::now();
        let steps = 10;
        for _ in 0..steps {
            set.step(&u, &cloud, &field, &params);
        }
        let per_step = start.elapsed().as_secs_f64() / steps as f64;
        let evals = 10_000.0 * cloud.points.len() as f64;
        println!(
            "{:>15}: {:7.2} ms/step  ({:.1} ns/point-eval)",
            kind.name(),
            per_step * 1e3,
            per_step / evals * 1e9
        );
    }
}
