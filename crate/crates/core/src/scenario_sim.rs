//! Synthetic scenario generation: ground-truth trajectories walked along
//! the road graph at constant speed, odometry recovered by inverting the
//! bicycle model, and noisy segmented point clouds standing in for a
//! real sensor and segmentation stack.
//!
//! Everything is a pure function of the config seed; per-step clouds are
//! generated from independent derived streams so they can be produced in
//! parallel without changing the output.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distance_field::SegmentIndex;
use crate::map_model::{MapPoint, RoadGraph};
use crate::measurement_model::{PointClass, SegmentedPoint, SegmentedPointCloud};
use crate::motion_model::{normalize_angle, OdometrySample, Pose};
use crate::particle_filter::{ScenarioReplay, ScenarioStep};
use crate::rng::{derive_rng, STREAM_ODOMETRY, STREAM_ROUTE, STREAM_SCAN};

/// Maximum sensor range for synthesized points.
pub const SENSOR_RANGE_M: f64 = 50.0;

/// Minimum lateral clearance from any edge for a non-road point.
pub const NONROAD_MIN_EDGE_OFFSET_M: f64 = 5.0;

/// Retry budget for rejection sampling a single point.
const SAMPLE_RETRIES: usize = 64;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario config: {0}")]
    BadConfig(String),
    #[error("way {0} not in graph")]
    UnknownWay(i64),
    #[error("route ways {prev} and {next} do not share an endpoint")]
    DisconnectedRoute { prev: i64, next: i64 },
    #[error("route length {len:.1} m is shorter than one step ({need:.1} m)")]
    RouteTooShort { len: f64, need: f64 },
    #[error("auto route walk exceeded the attachment budget")]
    AutoRouteStuck,
}

/// Route selection: an explicit connected way chain, or a seeded random
/// walk from a starting way until a target length is reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteSpec {
    Ways(Vec<i64>),
    Auto { start_way: i64, target_length_m: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub route: RouteSpec,
    #[serde(default = "default_speed")]
    pub speed_mps: f64,
    #[serde(default = "default_step_dt")]
    pub step_dt_s: f64,
    /// Points per synthesized cloud, at the scale a 2 m voxel filter
    /// leaves over a 50 m footprint.
    #[serde(default = "default_points_per_scan")]
    pub points_per_scan: usize,
    /// Lateral spread of road-class points about the edges; models road
    /// half-width.
    #[serde(default = "default_lateral_sigma")]
    pub road_point_lateral_sigma_m: f64,
    /// Fraction of points drawn off-road and labeled non-road.
    #[serde(default = "default_nonroad_fraction")]
    pub nonroad_fraction: f64,
    /// Probability each point's label is flipped, modeling segmentation
    /// error.
    #[serde(default = "default_label_flip_prob")]
    pub label_flip_prob: f64,
    /// Multiplicative speed bias applied to reported odometry.
    #[serde(default = "default_odom_bias")]
    pub odom_bias: f64,
    /// Additive Gaussian noise on reported speed (m/s).
    #[serde(default)]
    pub odom_speed_sigma: f64,
    /// Additive Gaussian noise on reported steering angle (rad).
    #[serde(default)]
    pub odom_steer_sigma: f64,
    #[serde(default = "default_wheelbase")]
    pub wheelbase_m: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_speed() -> f64 {
    10.0
}
fn default_step_dt() -> f64 {
    0.25
}
fn default_points_per_scan() -> usize {
    200
}
fn default_lateral_sigma() -> f64 {
    2.5
}
fn default_nonroad_fraction() -> f64 {
    0.4
}
fn default_label_flip_prob() -> f64 {
    0.06
}
fn default_odom_bias() -> f64 {
    1.0
}
fn default_wheelbase() -> f64 {
    2.8
}

impl ScenarioConfig {
    /// Defaults for everything but the route.
    pub fn with_route(route: RouteSpec) -> ScenarioConfig {
        ScenarioConfig {
            route,
            speed_mps: default_speed(),
            step_dt_s: default_step_dt(),
            points_per_scan: default_points_per_scan(),
            road_point_lateral_sigma_m: default_lateral_sigma(),
            nonroad_fraction: default_nonroad_fraction(),
            label_flip_prob: default_label_flip_prob(),
            odom_bias: default_odom_bias(),
            odom_speed_sigma: 0.0,
            odom_steer_sigma: 0.0,
            wheelbase_m: default_wheelbase(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::BadConfig(m));
        if !(self.speed_mps.is_finite() && self.speed_mps > 0.0) {
            return bad(format!("speed_mps {}", self.speed_mps));
        }
        if !(self.step_dt_s.is_finite() && self.step_dt_s > 0.0) {
            return bad(format!("step_dt_s {}", self.step_dt_s));
        }
        if !(self.road_point_lateral_sigma_m.is_finite() && self.road_point_lateral_sigma_m > 0.0)
        {
            return bad(format!(
                "road_point_lateral_sigma_m {}",
                self.road_point_lateral_sigma_m
            ));
        }
        for (name, p) in [
            ("nonroad_fraction", self.nonroad_fraction),
            ("label_flip_prob", self.label_flip_prob),
        ] {
            if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
                return bad(format!("{name} {p} outside [0,1]"));
            }
        }
        if !(self.odom_bias.is_finite() && self.odom_bias > 0.0) {
            return bad(format!("odom_bias {}", self.odom_bias));
        }
        for (name, s) in [
            ("odom_speed_sigma", self.odom_speed_sigma),
            ("odom_steer_sigma", self.odom_steer_sigma),
        ] {
            if !(s.is_finite() && s >= 0.0) {
                return bad(format!("{name} {s}"));
            }
        }
        if !(self.wheelbase_m.is_finite() && self.wheelbase_m > 0.0) {
            return bad(format!("wheelbase_m {}", self.wheelbase_m));
        }
        match &self.route {
            RouteSpec::Ways(ids) if ids.is_empty() => bad("route has no ways".into()),
            RouteSpec::Auto { target_length_m, .. }
                if !(target_length_m.is_finite() && *target_length_m > 0.0) =>
            {
                bad(format!("target_length_m {target_length_m}"))
            }
            _ => Ok(()),
        }
    }
}

/// Ground truth for a scenario: poses at every step boundary and the
/// (possibly corrupted) odometry reported over each interval.
#[derive(Debug, Clone)]
pub struct GroundTruthTrace {
    /// Poses at steps 0..=N.
    pub poses: Vec<Pose>,
    /// One reported sample per step interval; `odometry[k]` covers
    /// `poses[k] -> poses[k+1]`.
    pub odometry: Vec<OdometrySample>,
}

/// Resolves the route into a polyline of map points.
fn route_polyline(g: &RoadGraph, cfg: &ScenarioConfig) -> Result<Vec<i64>, ScenarioError> {
    match &cfg.route {
        RouteSpec::Ways(ids) => chain_ways(g, ids),
        RouteSpec::Auto {
            start_way,
            target_length_m,
        } => auto_route(g, *start_way, *target_length_m, cfg.seed),
    }
}

/// Chains explicit ways into one node sequence, reversing ways as needed
/// so consecutive ways share an endpoint.
fn chain_ways(g: &RoadGraph, ids: &[i64]) -> Result<Vec<i64>, ScenarioError> {
    let way = |id: i64| g.way_by_id(id).ok_or(ScenarioError::UnknownWay(id));
    let mut chain: Vec<i64> = way(ids[0])?.nodes.clone();
    for (k, &id) in ids.iter().enumerate().skip(1) {
        let nodes = &way(id)?.nodes;
        let tail = *chain.last().unwrap();
        if nodes[0] == tail {
            chain.extend(nodes.iter().skip(1));
        } else if *nodes.last().unwrap() == tail {
            chain.extend(nodes.iter().rev().skip(1));
        } else if k == 1 && (nodes[0] == chain[0] || *nodes.last().unwrap() == chain[0]) {
            // The first way was oriented backwards; flip it and retry.
            chain.reverse();
            let tail = *chain.last().unwrap();
            if nodes[0] == tail {
                chain.extend(nodes.iter().skip(1));
            } else {
                chain.extend(nodes.iter().rev().skip(1));
            }
        } else {
            return Err(ScenarioError::DisconnectedRoute {
                prev: ids[k - 1],
                next: id,
            });
        }
    }
    Ok(chain)
}

/// Seeded random walk over the way graph until the polyline reaches the
/// target length. Prefers not to immediately re-traverse the way it just
/// came from, but will when that is the only continuation.
fn auto_route(
    g: &RoadGraph,
    start_way: i64,
    target_length_m: f64,
    seed: u64,
) -> Result<Vec<i64>, ScenarioError> {
    use std::collections::HashMap;
    let mut incident: HashMap<i64, Vec<usize>> = HashMap::new();
    for (i, w) in g.ways().iter().enumerate() {
        incident.entry(w.nodes[0]).or_default().push(i);
        incident.entry(*w.nodes.last().unwrap()).or_default().push(i);
    }
    let start_idx = g
        .ways()
        .iter()
        .position(|w| w.id == start_way)
        .ok_or(ScenarioError::UnknownWay(start_way))?;

    let mut rng = derive_rng(seed, STREAM_ROUTE, 0, 0);
    let mut chain: Vec<i64> = g.ways()[start_idx].nodes.clone();
    let mut length = polyline_length(g, &chain);
    let mut prev_way = start_idx;
    let mut attachments = 0usize;
    while length < target_length_m {
        attachments += 1;
        if attachments > 100_000 {
            return Err(ScenarioError::AutoRouteStuck);
        }
        let tail = *chain.last().unwrap();
        let all = incident.get(&tail).map(Vec::as_slice).unwrap_or(&[]);
        let forward: Vec<usize> = all.iter().copied().filter(|&i| i != prev_way).collect();
        let pick = if forward.is_empty() {
            // Dead end: go back the way we came.
            prev_way
        } else {
            forward[rng.random_range(0..forward.len())]
        };
        let nodes = &g.ways()[pick].nodes;
        let before = chain.len();
        if nodes[0] == tail {
            chain.extend(nodes.iter().skip(1));
        } else {
            chain.extend(nodes.iter().rev().skip(1));
        }
        length += polyline_length(g, &chain[before - 1..]);
        prev_way = pick;
    }
    Ok(chain)
}

fn polyline_length(g: &RoadGraph, node_ids: &[i64]) -> f64 {
    node_ids
        .windows(2)
        .map(|w| {
            let a = g.nodes()[&w[0]];
            let b = g.nodes()[&w[1]];
            a.distance_to(b)
        })
        .sum()
}

/// Walks the polyline at constant speed and inverts the bicycle model for
/// odometry. Heading at each pose is the direction of the segment under
/// the vehicle.
pub fn generate_trajectory(
    g: &RoadGraph,
    cfg: &ScenarioConfig,
) -> Result<GroundTruthTrace, ScenarioError> {
    cfg.validate()?;
    let chain = route_polyline(g, cfg)?;
    let pts: Vec<MapPoint> = chain.iter().map(|id| g.nodes()[id]).collect();
    let seg_len: Vec<f64> = pts.windows(2).map(|w| w[0].distance_to(w[1])).collect();
    let total: f64 = seg_len.iter().sum();
    let step_arc = cfg.speed_mps * cfg.step_dt_s;
    let n_steps = (total / step_arc).floor() as usize;
    if n_steps == 0 {
        return Err(ScenarioError::RouteTooShort {
            len: total,
            need: step_arc,
        });
    }

    let pose_at = |s: f64| -> Pose {
        let mut remain = s;
        for (i, &len) in seg_len.iter().enumerate() {
            if remain <= len || i == seg_len.len() - 1 {
                let t = (remain / len).min(1.0);
                let a = pts[i];
                let b = pts[i + 1];
                let heading = (b.n - a.n).atan2(b.e - a.e);
                return Pose {
                    e: a.e + t * (b.e - a.e),
                    n: a.n + t * (b.n - a.n),
                    theta: heading,
                };
            }
            remain -= len;
        }
        unreachable!("segment walk covers [0, total]");
    };

    let poses: Vec<Pose> = (0..=n_steps).map(|k| pose_at(k as f64 * step_arc)).collect();

    let mut odometry = Vec::with_capacity(n_steps);
    for k in 0..n_steps {
        let a = poses[k];
        let b = poses[k + 1];
        let chord = a.position_distance_to(&b);
        let dtheta = normalize_angle(b.theta - a.theta);
        let v = chord / cfg.step_dt_s;
        // omega = v tan(delta) / L inverted for the steering angle; a
        // stationary interval reports zero.
        let delta = if v > 0.0 {
            (dtheta * cfg.wheelbase_m / (v * cfg.step_dt_s)).atan()
        } else {
            0.0
        };
        let (v_noise, d_noise) = if cfg.odom_speed_sigma > 0.0 || cfg.odom_steer_sigma > 0.0 {
            let mut rng = derive_rng(cfg.seed, STREAM_ODOMETRY, k as u64, 0);
            let nv: f64 = rng.sample(StandardNormal);
            let nd: f64 = rng.sample(StandardNormal);
            (nv * cfg.odom_speed_sigma, nd * cfg.odom_steer_sigma)
        } else {
            (0.0, 0.0)
        };
        odometry.push(OdometrySample {
            v: v * cfg.odom_bias + v_noise,
            delta: delta + d_noise,
            dt: cfg.step_dt_s,
        });
    }
    Ok(GroundTruthTrace { poses, odometry })
}

/// Draws one segmented cloud around a ground-truth pose. Points are in
/// the pose's sensor frame (a forward, b left). Road points hug the
/// edges; non-road points keep a minimum clearance; labels then flip
/// independently with the configured probability.
pub fn synthesize_scan<R: Rng + ?Sized>(
    gt: Pose,
    index: &SegmentIndex,
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> SegmentedPointCloud {
    let n_nonroad = (cfg.points_per_scan as f64 * cfg.nonroad_fraction).round() as usize;
    let n_road = cfg.points_per_scan - n_nonroad.min(cfg.points_per_scan);
    let (sin_t, cos_t) = gt.theta.sin_cos();
    let here = MapPoint { e: gt.e, n: gt.n };

    let to_body = |p: MapPoint| -> (f64, f64) {
        let de = p.e - gt.e;
        let dn = p.n - gt.n;
        (de * cos_t + dn * sin_t, -de * sin_t + dn * cos_t)
    };

    let candidates = index.segment_indices_within(here, SENSOR_RANGE_M);
    let mut cum = Vec::with_capacity(candidates.len());
    let mut total_len = 0.0;
    for &ci in &candidates {
        total_len += index.segments()[ci as usize].length();
        cum.push(total_len);
    }

    let mut points = Vec::with_capacity(cfg.points_per_scan);
    if !candidates.is_empty() {
        for _ in 0..n_road {
            let mut accepted = None;
            for attempt in 0..SAMPLE_RETRIES {
                let pick = rng.random::<f64>() * total_len;
                let ci = cum.partition_point(|&c| c < pick).min(candidates.len() - 1);
                let seg = &index.segments()[candidates[ci] as usize];
                let t: f64 = rng.random();
                let lateral = loop {
                    let x: f64 = rng.sample(StandardNormal);
                    if x.abs() <= 3.0 {
                        break x * cfg.road_point_lateral_sigma_m;
                    }
                };
                let on = seg.point_at(t);
                let h = seg.heading();
                let world = MapPoint {
                    e: on.e - lateral * h.sin(),
                    n: on.n + lateral * h.cos(),
                };
                let (a, b) = to_body(world);
                let in_front = a >= 0.0 && a * a + b * b <= SENSOR_RANGE_M * SENSOR_RANGE_M;
                if in_front || attempt == SAMPLE_RETRIES - 1 {
                    accepted = Some((a, b));
                    if in_front {
                        break;
                    }
                }
            }
            if let Some((a, b)) = accepted {
                points.push(SegmentedPoint {
                    a,
                    b,
                    class: PointClass::Road,
                });
            }
        }
    }
    for _ in 0..n_nonroad {
        let mut last = (0.0, 0.0);
        for attempt in 0..SAMPLE_RETRIES {
            let r = SENSOR_RANGE_M * rng.random::<f64>().sqrt();
            let phi = (rng.random::<f64>() - 0.5) * std::f64::consts::PI;
            let a = r * phi.cos();
            let b = r * phi.sin();
            let world = MapPoint {
                e: gt.e + a * cos_t - b * sin_t,
                n: gt.n + a * sin_t + b * cos_t,
            };
            last = (a, b);
            if index.nearest_distance(world) >= NONROAD_MIN_EDGE_OFFSET_M
                || attempt == SAMPLE_RETRIES - 1
            {
                break;
            }
        }
        points.push(SegmentedPoint {
            a: last.0,
            b: last.1,
            class: PointClass::NonRoad,
        });
    }

    // Flip pass: exactly one draw per point so clouds with different flip
    // probabilities share positions under the same seed.
    for p in &mut points {
        let u: f64 = rng.random();
        if u < cfg.label_flip_prob {
            p.class = p.class.flipped();
        }
    }
    SegmentedPointCloud::simulated(points)
}

/// A fully generated scenario: config echo, ground truth, and the cloud
/// measured at each step boundary 1..=N.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub trace: GroundTruthTrace,
    pub clouds: Vec<SegmentedPointCloud>,
}

impl Scenario {
    pub fn steps(&self) -> usize {
        self.clouds.len()
    }

    /// Packages the scenario for the filter, integrating each step's
    /// odometry with the filter's assumed wheelbase.
    pub fn to_replay(&self, wheelbase_m: f64) -> ScenarioReplay {
        use crate::motion_model::integrate_odometry;
        let steps = self
            .trace
            .odometry
            .iter()
            .zip(&self.clouds)
            .map(|(sample, cloud)| ScenarioStep {
                control: integrate_odometry(std::slice::from_ref(sample), wheelbase_m)
                    .expect("wheelbase validated by config"),
                cloud: cloud.clone(),
            })
            .collect();
        ScenarioReplay {
            steps,
            ground_truth: self.trace.poses.clone(),
        }
    }
}

/// Generates trajectory and all scans. Scans use per-step derived
/// streams, so the parallel generation is bit-identical to a serial one.
pub fn generate_scenario(g: &RoadGraph, cfg: &ScenarioConfig) -> Result<Scenario, ScenarioError> {
    let trace = generate_trajectory(g, cfg)?;
    let index = SegmentIndex::for_graph(g)
        .map_err(|e| ScenarioError::BadConfig(format!("graph not indexable: {e}")))?;
    let n = trace.poses.len() - 1;
    let clouds: Vec<SegmentedPointCloud> = (1..=n)
        .into_par_iter()
        .map(|k| {
            let mut rng = derive_rng(cfg.seed, STREAM_SCAN, k as u64, 0);
            synthesize_scan(trace.poses[k], &index, cfg, &mut rng)
        })
        .collect();
    Ok(Scenario {
        config: cfg.clone(),
        trace,
        clouds,
    })
}
