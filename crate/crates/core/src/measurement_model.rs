//! Label-conditioned distance weighting and pose scoring.
//!
//! A pose hypothesis is scored by transforming each labeled sensor point
//! into the map frame, looking up its distance to the nearest road edge,
//! and multiplying per-point weights: road points want small distances,
//! non-road points large ones. The product runs in log space; hundreds of
//! sub-unity factors underflow f64 otherwise.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distance_field::DistanceField;
use crate::motion_model::Pose;

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("distance must be finite and non-negative, got {0}")]
    NegativeDistance(f64),
    #[error("invalid distance function spec: {0}")]
    InvalidSpec(String),
}

/// Binary segmentation label carried by each point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PointClass {
    NonRoad,
    Road,
}

impl PointClass {
    pub fn from_u8(v: u8) -> Option<PointClass> {
        match v {
            0 => Some(PointClass::NonRoad),
            1 => Some(PointClass::Road),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            PointClass::NonRoad => 0,
            PointClass::Road => 1,
        }
    }

    pub fn flipped(self) -> PointClass {
        match self {
            PointClass::NonRoad => PointClass::Road,
            PointClass::Road => PointClass::NonRoad,
        }
    }
}

/// One measurement point in the sensor frame: `a` forward, `b` left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentedPoint {
    pub a: f64,
    pub b: f64,
    pub class: PointClass,
}

/// Where a cloud came from; carried for provenance only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudProvenance {
    Simulated,
    Backprojected,
}

/// The measurement: a labeled 2D point cloud in the sensor frame.
#[derive(Debug, Clone)]
pub struct SegmentedPointCloud {
    pub points: Vec<SegmentedPoint>,
    pub provenance: CloudProvenance,
}

impl SegmentedPointCloud {
    pub fn simulated(points: Vec<SegmentedPoint>) -> Self {
        SegmentedPointCloud {
            points,
            provenance: CloudProvenance::Simulated,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceFunctionKind {
    Gaussian,
    Quadratic,
    ExpDecay,
    MapliteLinear,
}

impl DistanceFunctionKind {
    /// All kinds, in the order results are conventionally tabulated.
    pub const ALL: [DistanceFunctionKind; 4] = [
        DistanceFunctionKind::Gaussian,
        DistanceFunctionKind::Quadratic,
        DistanceFunctionKind::ExpDecay,
        DistanceFunctionKind::MapliteLinear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DistanceFunctionKind::Gaussian => "gaussian",
            DistanceFunctionKind::Quadratic => "quadratic",
            DistanceFunctionKind::ExpDecay => "exp_decay",
            DistanceFunctionKind::MapliteLinear => "maplite_linear",
        }
    }
}

fn default_sigma() -> f64 {
    10.0
}
fn default_tau() -> f64 {
    0.1
}
fn default_d_max() -> f64 {
    30.0
}
fn default_epsilon() -> f64 {
    1e-6
}

/// Which distance kernel to use and its shape parameters. Parameters not
/// used by `kind` are carried but ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceFunctionSpec {
    pub kind: DistanceFunctionKind,
    /// Gaussian width, meters.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Exponential decay rate, 1/meters.
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Linear-ramp cutoff distance, meters.
    #[serde(default = "default_d_max")]
    pub d_max: f64,
    /// Weight floor: a single mislabeled point must not veto a pose.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

impl Default for DistanceFunctionSpec {
    fn default() -> Self {
        DistanceFunctionSpec {
            kind: DistanceFunctionKind::Gaussian,
            sigma: default_sigma(),
            tau: default_tau(),
            d_max: default_d_max(),
            epsilon: default_epsilon(),
        }
    }
}

impl DistanceFunctionSpec {
    pub fn of_kind(kind: DistanceFunctionKind) -> Self {
        DistanceFunctionSpec {
            kind,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), MeasureError> {
        let check = |name: &str, v: f64, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(MeasureError::InvalidSpec(format!("{name} = {v}")))
            }
        };
        check("sigma", self.sigma, self.sigma.is_finite() && self.sigma > 0.0)?;
        check("tau", self.tau, self.tau.is_finite() && self.tau > 0.0)?;
        check("d_max", self.d_max, self.d_max.is_finite() && self.d_max > 0.0)?;
        check(
            "epsilon",
            self.epsilon,
            self.epsilon > 0.0 && self.epsilon < 0.5,
        )?;
        Ok(())
    }

    /// Road-class kernel before the floor: 1 at d = 0, non-increasing.
    #[inline]
    fn road_unclamped(&self, d: f64) -> f64 {
        match self.kind {
            DistanceFunctionKind::Gaussian => (-(d * d) / (2.0 * self.sigma * self.sigma)).exp(),
            DistanceFunctionKind::Quadratic => 1.0 / (d * d + 1.0),
            DistanceFunctionKind::ExpDecay => (-d * self.tau).exp(),
            DistanceFunctionKind::MapliteLinear => (1.0 - d / self.d_max).max(0.0),
        }
    }

    #[inline]
    fn nonroad_clamped(&self, d: f64) -> f64 {
        (1.0 - self.road_unclamped(d)).clamp(self.epsilon, 1.0)
    }

    /// Per-point weight before the [epsilon, 1] clamp. The non-road weight
    /// is the literal complement of the road weight.
    pub fn eval_unclamped(&self, d: f64, class: PointClass) -> Result<f64, MeasureError> {
        if !(d.is_finite() && d >= 0.0) {
            return Err(MeasureError::NegativeDistance(d));
        }
        let road = self.road_unclamped(d);
        Ok(match class {
            PointClass::Road => road,
            PointClass::NonRoad => 1.0 - road,
        })
    }

    /// Per-point weight in [epsilon, 1].
    pub fn eval(&self, d: f64, class: PointClass) -> Result<f64, MeasureError> {
        Ok(self
            .eval_unclamped(d, class)?
            .clamp(self.epsilon, 1.0))
    }
}

/// Log of the per-pose weight product over the cloud.
///
/// Each point is rotated by the pose heading and translated to the map
/// frame; its distance comes from one field lookup. Road-class terms use
/// closed-form log kernels (agreeing with ln(eval) to a few ULP, and
/// skipping exp calls for the Gaussian and exponential kinds); non-road
/// terms take the log of the exact same clamped complement `eval`
/// computes, so the log-space score and the literal product never drift
/// apart near the floor, where the complement cancels catastrophically.
///
/// Empty clouds score 0, the neutral element.
pub fn score_pose(
    x: Pose,
    z: &SegmentedPointCloud,
    field: &DistanceField,
    spec: &DistanceFunctionSpec,
) -> f64 {
    #[inline(always)]
    fn accumulate(
        x: Pose,
        z: &SegmentedPointCloud,
        field: &DistanceField,
        ln_eps: f64,
        road_lw: impl Fn(f64) -> f64,
        nonroad_w: impl Fn(f64) -> f64,
    ) -> f64 {
        let (sin_t, cos_t) = x.theta.sin_cos();
        let mut sum = 0.0;
        for p in &z.points {
            let pe = x.e + p.a * cos_t - p.b * sin_t;
            let pn = x.n + p.a * sin_t + p.b * cos_t;
            let d = field.lookup(crate::map_model::MapPoint { e: pe, n: pn });
            sum += match p.class {
                PointClass::Road => road_lw(d).clamp(ln_eps, 0.0),
                PointClass::NonRoad => nonroad_w(d).ln(),
            };
        }
        sum
    }

    let ln_eps = spec.epsilon.ln();
    match spec.kind {
        DistanceFunctionKind::Gaussian => {
            let inv_two_sigma_sq = 1.0 / (2.0 * spec.sigma * spec.sigma);
            accumulate(
                x,
                z,
                field,
                ln_eps,
                |d| -(d * d) * inv_two_sigma_sq,
                |d| spec.nonroad_clamped(d),
            )
        }
        DistanceFunctionKind::Quadratic => accumulate(
            x,
            z,
            field,
            ln_eps,
            |d| -(d * d).ln_1p(),
            |d| spec.nonroad_clamped(d),
        ),
        DistanceFunctionKind::ExpDecay => {
            let tau = spec.tau;
            accumulate(
                x,
                z,
                field,
                ln_eps,
                |d| -d * tau,
                |d| spec.nonroad_clamped(d),
            )
        }
        DistanceFunctionKind::MapliteLinear => accumulate(
            x,
            z,
            field,
            ln_eps,
            |d| spec.road_unclamped(d).ln(),
            |d| spec.nonroad_clamped(d),
        ),
    }
}

/// Keeps at most one point per (2D voxel cell, class) pair, choosing the
/// point nearest the voxel center. Output is ordered by voxel index then
/// class, so the operation is deterministic and idempotent.
pub fn downsample_voxel(z: &SegmentedPointCloud, voxel: f64) -> SegmentedPointCloud {
    assert!(
        voxel.is_finite() && voxel > 0.0,
        "voxel size must be positive, got {voxel}"
    );
    use std::collections::BTreeMap;
    let mut best: BTreeMap<(i64, i64, u8), (usize, f64)> = BTreeMap::new();
    for (i, p) in z.points.iter().enumerate() {
        let ix = (p.a / voxel).floor();
        let iy = (p.b / voxel).floor();
        let key = (ix as i64, iy as i64, p.class.as_u8());
        let ce = (ix + 0.5) * voxel;
        let cn = (iy + 0.5) * voxel;
        let d_sq = (p.a - ce) * (p.a - ce) + (p.b - cn) * (p.b - cn);
        match best.get(&key) {
            Some(&(_, prev)) if prev <= d_sq => {}
            _ => {
                best.insert(key, (i, d_sq));
            }
        }
    }
    SegmentedPointCloud {
        points: best.values().map(|&(i, _)| z.points[i]).collect(),
        provenance: z.provenance,
    }
}
