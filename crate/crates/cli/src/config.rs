//! Run configuration: one JSON file describes a complete experiment
//! (map, field, scenario, initialization, filter parameters, outputs).

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use osmcl_core::measurement_model::DistanceFunctionSpec;
use osmcl_core::motion_model::MotionNoise;
use osmcl_core::particle_filter::Estimator;
use osmcl_core::scenario_sim::ScenarioConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for every filter random stream (scenario generation has its
    /// own seed inside the scenario config).
    #[serde(default)]
    pub seed: u64,
    pub map: PathBuf,
    /// Highway tag values to keep; omitted means the default drivable set.
    #[serde(default)]
    pub highway_filter: Option<Vec<String>>,
    #[serde(default)]
    pub field: FieldSource,
    pub scenario: ScenarioSource,
    pub init: InitConfig,
    #[serde(default)]
    pub distance_fn: DistanceFunctionSpec,
    #[serde(default)]
    pub motion_noise: NoiseConfig,
    #[serde(default = "default_resample_interval")]
    pub resample_interval: u32,
    #[serde(default)]
    pub estimator: Estimator,
    /// Voxel edge for measurement downsampling; null disables.
    #[serde(default = "default_voxel")]
    pub voxel_downsample_m: Option<f64>,
    #[serde(default = "default_wheelbase")]
    pub wheelbase_m: f64,
    pub out_dir: PathBuf,
}

fn default_resample_interval() -> u32 {
    20
}
fn default_voxel() -> Option<f64> {
    Some(2.0)
}
fn default_wheelbase() -> f64 {
    2.8
}

/// Where the distance field comes from: a prebuilt MCDF file or an
/// on-demand build over the map bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldSource {
    Load { path: PathBuf },
    Build {
        #[serde(default = "default_cell_size")]
        cell_size_m: f64,
        #[serde(default = "default_margin")]
        margin_m: f64,
    },
}

pub fn default_cell_size() -> f64 {
    2.0
}
pub fn default_margin() -> f64 {
    100.0
}

impl Default for FieldSource {
    fn default() -> Self {
        FieldSource::Build {
            cell_size_m: default_cell_size(),
            margin_m: default_margin(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioSource {
    /// Replay a persisted scenario directory.
    Replay { dir: PathBuf },
    /// Generate a synthetic scenario from its own config (and seed).
    Generate(ScenarioConfig),
}

/// "truth" centers the prior on the scenario's first ground-truth pose;
/// an explicit [e, n, theta] places it anywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CenterSpec {
    Keyword(String),
    Pose([f64; 3]),
}

impl Default for CenterSpec {
    fn default() -> Self {
        CenterSpec::Keyword("truth".into())
    }
}

/// "map_bounds" spans the road graph's extent; an explicit
/// [min_e, min_n, max_e, max_n] overrides it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RectSpec {
    Keyword(String),
    Rect([f64; 4]),
}

impl Default for RectSpec {
    fn default() -> Self {
        RectSpec::Keyword("map_bounds".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitConfig {
    Tracking {
        #[serde(default)]
        center: CenterSpec,
        #[serde(default = "default_tracking_radius")]
        radius_m: f64,
        #[serde(default = "default_tracking_count")]
        count: usize,
    },
    Global {
        #[serde(default)]
        rect: RectSpec,
        #[serde(default = "default_global_count")]
        count: usize,
    },
}

fn default_tracking_radius() -> f64 {
    200.0
}
fn default_tracking_count() -> usize {
    10_000
}
fn default_global_count() -> usize {
    100_000
}

/// Human-facing noise units (degrees); converted on use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default = "default_sigma_pos")]
    pub sigma_pos_m: f64,
    #[serde(default = "default_sigma_theta")]
    pub sigma_theta_deg: f64,
}

fn default_sigma_pos() -> f64 {
    0.1
}
fn default_sigma_theta() -> f64 {
    3.0
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            sigma_pos_m: default_sigma_pos(),
            sigma_theta_deg: default_sigma_theta(),
        }
    }
}

impl NoiseConfig {
    pub fn to_motion_noise(self) -> MotionNoise {
        MotionNoise {
            sigma_pos: self.sigma_pos_m,
            sigma_theta: self.sigma_theta_deg.to_radians(),
        }
    }
}

impl RunConfig {
    /// Structural validation beyond what serde enforces.
    pub fn validate(&self) -> Result<(), String> {
        if let FieldSource::Build { cell_size_m, margin_m } = self.field {
            if !(cell_size_m.is_finite() && cell_size_m > 0.0) {
                return Err(format!("field.build.cell_size_m {cell_size_m}"));
            }
            if !(margin_m.is_finite() && margin_m >= 0.0) {
                return Err(format!("field.build.margin_m {margin_m}"));
            }
        }
        if let ScenarioSource::Generate(sc) = &self.scenario {
            sc.validate().map_err(|e| e.to_string())?;
        }
        match &self.init {
            InitConfig::Tracking { center, radius_m, count } => {
                if let CenterSpec::Keyword(k) = center {
                    if k != "truth" {
                        return Err(format!(
                            "init.tracking.center must be \"truth\" or [e,n,theta], got {k:?}"
                        ));
                    }
                }
                if !(radius_m.is_finite() && *radius_m > 0.0) {
                    return Err(format!("init.tracking.radius_m {radius_m}"));
                }
                if *count == 0 {
                    return Err("init.tracking.count is zero".into());
                }
            }
            InitConfig::Global { rect, count } => {
                match rect {
                    RectSpec::Keyword(k) if k != "map_bounds" => {
                        return Err(format!(
                            "init.global.rect must be \"map_bounds\" or [min_e,min_n,max_e,max_n], got {k:?}"
                        ));
                    }
                    RectSpec::Rect(r) if !(r[2] > r[0] && r[3] > r[1]) => {
                        return Err(format!("init.global.rect {r:?} is degenerate"));
                    }
                    _ => {}
                }
                if *count == 0 {
                    return Err("init.global.count is zero".into());
                }
            }
        }
        self.distance_fn.validate().map_err(|e| e.to_string())?;
        for (name, v) in [
            ("motion_noise.sigma_pos_m", self.motion_noise.sigma_pos_m),
            ("motion_noise.sigma_theta_deg", self.motion_noise.sigma_theta_deg),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} {v}"));
            }
        }
        if let Some(v) = self.voxel_downsample_m {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("voxel_downsample_m {v}"));
            }
        }
        if !(self.wheelbase_m.is_finite() && self.wheelbase_m > 0.0) {
            return Err(format!("wheelbase_m {}", self.wheelbase_m));
        }
        Ok(())
    }
}
