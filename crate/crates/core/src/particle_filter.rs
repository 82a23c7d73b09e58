//! The localization filter: initialization, the propagate/weight/resample
//! step loop, pose estimation, and scenario replay.
//!
//! Weights live in log space and accumulate across steps; systematic
//! resampling runs on a fixed cadence and resets them. All randomness is
//! derived per (seed, stream, step, particle), so a run is bit-identical
//! for any worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distance_field::DistanceField;
use crate::map_model::MapPoint;
use crate::measurement_model::{
    downsample_voxel, score_pose, DistanceFunctionSpec, SegmentedPointCloud,
};
use crate::motion_model::{normalize_angle, propagate, ControlInput, MotionNoise, Pose};
use crate::rng::{derive_rng, STREAM_INIT, STREAM_PROPAGATE, STREAM_RESAMPLE};

/// Particle spread below which the filter is considered localized.
pub const CONVERGENCE_SPREAD_M: f64 = 25.0;

/// Steps the spread must stay below threshold before convergence is
/// declared at the start of the window.
pub const CONVERGENCE_HOLD_STEPS: usize = 10;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("invalid initialization: {0}")]
    BadInit(String),
    #[error("scenario has no steps")]
    EmptyScenario,
    #[error("ground truth has {gt} poses for {steps} steps (need steps + 1)")]
    BadReplay { gt: usize, steps: usize },
}

/// One pose hypothesis with its cumulative log weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub pose: Pose,
    pub log_weight: f64,
}

/// How the initial particle population is drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitSpec {
    /// Uniform over a disk around a coarse prior pose, headings uniform.
    Tracking {
        center: Pose,
        radius_m: f64,
        count: usize,
    },
    /// Uniform over a map-frame rectangle, headings uniform.
    Global {
        min: MapPoint,
        max: MapPoint,
        count: usize,
    },
}

impl InitSpec {
    fn validate(&self) -> Result<(), FilterError> {
        match *self {
            InitSpec::Tracking { radius_m, count, .. } => {
                if count == 0 {
                    return Err(FilterError::BadInit("particle count is zero".into()));
                }
                if !(radius_m.is_finite() && radius_m > 0.0) {
                    return Err(FilterError::BadInit(format!("radius {radius_m}")));
                }
            }
            InitSpec::Global { min, max, count } => {
                if count == 0 {
                    return Err(FilterError::BadInit("particle count is zero".into()));
                }
                if !(max.e > min.e && max.n > min.n) {
                    return Err(FilterError::BadInit("degenerate rectangle".into()));
                }
            }
        }
        Ok(())
    }
}

/// Pose estimate extraction rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Weighted mean position, weighted circular mean heading.
    #[default]
    WeightedMean,
    /// Pose of the highest-weight particle (first on ties).
    MaxWeight,
}

/// Everything a filter step needs beyond the measurement itself.
#[derive(Debug, Clone)]
pub struct FilterParams {
    pub seed: u64,
    pub resample_interval: u32,
    pub noise: MotionNoise,
    pub distance_fn: DistanceFunctionSpec,
    pub estimator: Estimator,
    /// Voxel edge for measurement downsampling in [`run_scenario`];
    /// None scores clouds as given.
    pub voxel_downsample_m: Option<f64>,
}

impl FilterParams {
    pub fn new(seed: u64, distance_fn: DistanceFunctionSpec) -> Self {
        FilterParams {
            seed,
            resample_interval: 20,
            noise: MotionNoise::default(),
            distance_fn,
            estimator: Estimator::WeightedMean,
            voxel_downsample_m: Some(2.0),
        }
    }
}

/// Result of one filter step.
#[derive(Debug, Clone, Copy)]
pub struct StepResult {
    pub estimate: Pose,
    pub spread_m: f64,
    pub resampled: bool,
    /// True when every particle's weight sat at the floor this step, i.e.
    /// the measurement contradicted the entire population.
    pub degenerate: bool,
}

/// The weighted hypothesis population plus filter bookkeeping.
pub struct ParticleSet {
    particles: Vec<Particle>,
    step_count: u64,
    resample_interval: u32,
    seed: u64,
    /// Log weight every particle would have if all its point evaluations
    /// hit the floor since the last reset; detects degenerate steps.
    floor_accum: f64,
    resample_count: u64,
}

/// Draws the initial population. Each particle's draws come from its own
/// derived stream, so the result is independent of traversal order.
pub fn initialize(
    spec: &InitSpec,
    seed: u64,
    resample_interval: u32,
) -> Result<ParticleSet, FilterError> {
    use rand::Rng;
    spec.validate()?;
    let count = match *spec {
        InitSpec::Tracking { count, .. } | InitSpec::Global { count, .. } => count,
    };
    let mut particles = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = derive_rng(seed, STREAM_INIT, 0, i as u64);
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        let u3: f64 = rng.random();
        let pose = match *spec {
            InitSpec::Tracking { center, radius_m, .. } => {
                let r = radius_m * u1.sqrt();
                let ang = u2 * std::f64::consts::TAU;
                Pose {
                    e: center.e + r * ang.cos(),
                    n: center.n + r * ang.sin(),
                    theta: std::f64::consts::PI - u3 * std::f64::consts::TAU,
                }
            }
            InitSpec::Global { min, max, .. } => Pose {
                e: min.e + u1 * (max.e - min.e),
                n: min.n + u2 * (max.n - min.n),
                theta: std::f64::consts::PI - u3 * std::f64::consts::TAU,
            },
        };
        particles.push(Particle {
            pose,
            log_weight: 0.0,
        });
    }
    Ok(ParticleSet {
        particles,
        step_count: 0,
        resample_interval,
        seed,
        floor_accum: 0.0,
        resample_count: 0,
    })
}

impl ParticleSet {
    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    /// Mutable access for injecting hypotheses or weights from outside
    /// the usual step loop.
    pub fn particles_mut(&mut self) -> &mut [Particle] {
        &mut self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn resample_count(&self) -> u64 {
        self.resample_count
    }

    /// Softmax-normalized weights; sums to 1.
    fn normalized_weights(&self) -> Vec<f64> {
        let max_lw = self
            .particles
            .iter()
            .map(|p| p.log_weight)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut w: Vec<f64> = self
            .particles
            .iter()
            .map(|p| (p.log_weight - max_lw).exp())
            .collect();
        let total: f64 = w.iter().sum();
        for v in &mut w {
            *v /= total;
        }
        w
    }

    fn all_weights_at_floor(&self) -> bool {
        if self.floor_accum >= 0.0 {
            return false;
        }
        let max_lw = self
            .particles
            .iter()
            .map(|p| p.log_weight)
            .fold(f64::NEG_INFINITY, f64::max);
        max_lw <= self.floor_accum + 1e-9 * self.floor_accum.abs()
    }

    /// Current pose estimate and RMS particle spread about it.
    pub fn estimate(&self, estimator: Estimator) -> (Pose, f64) {
        let w = self.normalized_weights();
        let est = match estimator {
            Estimator::WeightedMean => {
                let mut e = 0.0;
                let mut n = 0.0;
                let mut sin_sum = 0.0;
                let mut cos_sum = 0.0;
                for (p, wi) in self.particles.iter().zip(&w) {
                    e += wi * p.pose.e;
                    n += wi * p.pose.n;
                    sin_sum += wi * p.pose.theta.sin();
                    cos_sum += wi * p.pose.theta.cos();
                }
                Pose {
                    e,
                    n,
                    theta: normalize_angle(sin_sum.atan2(cos_sum)),
                }
            }
            Estimator::MaxWeight => {
                let mut best = 0;
                for (i, p) in self.particles.iter().enumerate() {
                    if p.log_weight > self.particles[best].log_weight {
                        best = i;
                    }
                }
                self.particles[best].pose
            }
        };
        let mut var = 0.0;
        for (p, wi) in self.particles.iter().zip(&w) {
            let de = p.pose.e - est.e;
            let dn = p.pose.n - est.n;
            var += wi * (de * de + dn * dn);
        }
        (est, var.sqrt())
    }

    /// Low-variance systematic resampling with a single uniform draw.
    /// Weights reset to zero afterwards; the survivors' multiplicity now
    /// carries the evidence. Returns true when the weights were degenerate
    /// and the draw fell back to uniform.
    pub fn systematic_resample<R: rand::Rng + ?Sized>(&mut self, rng: &mut R) -> bool {
        let n = self.particles.len();
        let degenerate = self.all_weights_at_floor();
        let weights = if degenerate {
            vec![1.0 / n as f64; n]
        } else {
            self.normalized_weights()
        };
        let u0: f64 = rng.random::<f64>() / n as f64;
        let mut out = Vec::with_capacity(n);
        let mut cum = weights[0];
        let mut i = 0usize;
        for k in 0..n {
            let target = u0 + k as f64 / n as f64;
            while cum < target && i < n - 1 {
                i += 1;
                cum += weights[i];
            }
            out.push(Particle {
                pose: self.particles[i].pose,
                log_weight: 0.0,
            });
        }
        self.particles = out;
        self.floor_accum = 0.0;
        self.resample_count += 1;
        degenerate
    }

    /// One filter update: propagate every particle through the motion
    /// model, accumulate measurement log weights, resample on cadence,
    /// and extract the estimate.
    pub fn step(
        &mut self,
        u: &ControlInput,
        z: &SegmentedPointCloud,
        field: &DistanceField,
        params: &FilterParams,
    ) -> StepResult {
        self.step_count += 1;
        let step = self.step_count;
        let seed = self.seed;
        let noise = params.noise;
        let spec = params.distance_fn;
        self.particles
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, p)| {
                let mut rng = derive_rng(seed, STREAM_PROPAGATE, step, i as u64);
                p.pose = propagate(p.pose, *u, noise, &mut rng);
                p.log_weight += score_pose(p.pose, z, field, &spec);
            });
        self.floor_accum += z.points.len() as f64 * spec.epsilon.ln();

        let degenerate = self.all_weights_at_floor();
        let mut resampled = false;
        if self.resample_interval > 0 && step % self.resample_interval as u64 == 0 {
            let mut rng = derive_rng(seed, STREAM_RESAMPLE, step, 0);
            self.systematic_resample(&mut rng);
            resampled = true;
        }
        let (estimate, spread_m) = self.estimate(params.estimator);
        StepResult {
            estimate,
            spread_m,
            resampled,
            degenerate,
        }
    }
}

/// One replayable filter input: the integrated control for the interval
/// and the measurement at its end.
#[derive(Debug, Clone)]
pub struct ScenarioStep {
    pub control: ControlInput,
    pub cloud: SegmentedPointCloud,
}

/// A full scenario: inputs for steps 1..=N plus ground-truth poses for
/// steps 0..=N.
#[derive(Debug, Clone)]
pub struct ScenarioReplay {
    pub steps: Vec<ScenarioStep>,
    pub ground_truth: Vec<Pose>,
}

/// Per-step trace record.
#[derive(Debug, Clone, Copy)]
pub struct StepRecord {
    pub step: u64,
    pub estimate: Pose,
    pub ground_truth: Pose,
    pub error_m: f64,
    pub spread_m: f64,
    pub resampled: bool,
    pub degenerate: bool,
}

/// Trace of a whole run plus derived convergence metrics.
#[derive(Debug, Clone)]
pub struct ScenarioTrace {
    pub records: Vec<StepRecord>,
    /// First step of the earliest window where the spread stays below
    /// [`CONVERGENCE_SPREAD_M`] for [`CONVERGENCE_HOLD_STEPS`] steps.
    pub convergence_step: Option<u64>,
    /// Same rule applied to the error against ground truth; needs ground
    /// truth, logged for comparison only.
    pub convergence_step_error: Option<u64>,
    /// Mean error over records at and after `convergence_step`.
    pub mean_error_post_convergence: Option<f64>,
    pub final_error_m: f64,
    pub resamples: u64,
    pub degenerate_steps: u64,
}

fn sustained_threshold_step(records: &[StepRecord], value: impl Fn(&StepRecord) -> f64) -> Option<u64> {
    let hold = CONVERGENCE_HOLD_STEPS;
    if records.len() < hold {
        return None;
    }
    'outer: for start in 0..=(records.len() - hold) {
        for r in &records[start..start + hold] {
            if value(r) >= CONVERGENCE_SPREAD_M {
                continue 'outer;
            }
        }
        return Some(records[start].step);
    }
    None
}

/// Runs the filter over a recorded scenario and derives the trace metrics.
pub fn run_scenario(
    field: &DistanceField,
    replay: &ScenarioReplay,
    init: &InitSpec,
    params: &FilterParams,
) -> Result<ScenarioTrace, FilterError> {
    if replay.steps.is_empty() {
        return Err(FilterError::EmptyScenario);
    }
    if replay.ground_truth.len() != replay.steps.len() + 1 {
        return Err(FilterError::BadReplay {
            gt: replay.ground_truth.len(),
            steps: replay.steps.len(),
        });
    }
    let mut set = initialize(init, params.seed, params.resample_interval)?;
    let mut records = Vec::with_capacity(replay.steps.len() + 1);

    let (est0, spread0) = set.estimate(params.estimator);
    records.push(StepRecord {
        step: 0,
        estimate: est0,
        ground_truth: replay.ground_truth[0],
        error_m: est0.position_distance_to(&replay.ground_truth[0]),
        spread_m: spread0,
        resampled: false,
        degenerate: false,
    });

    let mut degenerate_steps = 0;
    for (k, s) in replay.steps.iter().enumerate() {
        let cloud;
        let z = match params.voxel_downsample_m {
            Some(v) => {
                cloud = downsample_voxel(&s.cloud, v);
                &cloud
            }
            None => &s.cloud,
        };
        let res = set.step(&s.control, z, field, params);
        if res.degenerate {
            degenerate_steps += 1;
        }
        let gt = replay.ground_truth[k + 1];
        records.push(StepRecord {
            step: (k + 1) as u64,
            estimate: res.estimate,
            ground_truth: gt,
            error_m: res.estimate.position_distance_to(&gt),
            spread_m: res.spread_m,
            resampled: res.resampled,
            degenerate: res.degenerate,
        });
    }

    let convergence_step = sustained_threshold_step(&records, |r| r.spread_m);
    let convergence_step_error = sustained_threshold_step(&records, |r| r.error_m);
    let mean_error_post_convergence = convergence_step.map(|cs| {
        let tail: Vec<f64> = records
            .iter()
            .filter(|r| r.step >= cs)
            .map(|r| r.error_m)
            .collect();
        tail.iter().sum::<f64>() / tail.len() as f64
    });

    Ok(ScenarioTrace {
        final_error_m: records.last().unwrap().error_m,
        resamples: set.resample_count,
        degenerate_steps,
        records,
        convergence_step,
        convergence_step_error,
        mean_error_post_convergence,
    })
}
