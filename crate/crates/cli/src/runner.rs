//! Turns a [`RunConfig`] into live objects (graph, field, replay,
//! initialization) ready for the filter. Shared by the binary and the
//! acceptance suite so both exercise the same code path.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, Context};

use osmcl_core::distance_field::{
    build_distance_field_with_budget, Bounds, DistanceField, DEFAULT_CELL_BUDGET,
};
use osmcl_core::io as core_io;
use osmcl_core::map_model::{default_highway_filter, MapPoint, RoadGraph};
use osmcl_core::motion_model::Pose;
use osmcl_core::particle_filter::{FilterParams, InitSpec, ScenarioReplay};
use osmcl_core::scenario_sim::generate_scenario;

use crate::config::{CenterSpec, FieldSource, InitConfig, RectSpec, RunConfig, ScenarioSource};

/// Error plus the process exit code it maps to.
pub struct Failure {
    pub exit: u8,
    pub error: anyhow::Error,
}

/// Bad input or configuration: exit code 2.
pub fn invalid<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure {
        exit: 2,
        error: e.into(),
    }
}

/// Failure after inputs checked out (mostly output I/O): exit code 1.
pub fn runtime<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure {
        exit: 1,
        error: e.into(),
    }
}

pub fn highway_set(list: &Option<Vec<String>>) -> HashSet<String> {
    match list {
        Some(values) => values.iter().cloned().collect(),
        None => default_highway_filter(),
    }
}

pub fn load_graph(path: &Path, highway: &Option<Vec<String>>) -> Result<RoadGraph, Failure> {
    core_io::load_graph(path, &highway_set(highway))
        .with_context(|| format!("loading map {}", path.display()))
        .map_err(invalid)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(f))
        .with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json_pretty<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Everything a run needs, resolved from config and disk.
pub struct Prepared {
    pub graph: RoadGraph,
    pub field: DistanceField,
    pub replay: ScenarioReplay,
    pub init: InitSpec,
    pub params: FilterParams,
}

pub fn particle_count(init: &InitSpec) -> usize {
    match *init {
        InitSpec::Tracking { count, .. } | InitSpec::Global { count, .. } => count,
    }
}

/// Loads the map, obtains the field and scenario, and resolves the
/// initialization. Timing goes to stderr; nothing here writes files.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared, Failure> {
    cfg.validate()
        .map_err(|e| invalid(anyhow!("invalid config: {e}")))?;
    let graph = load_graph(&cfg.map, &cfg.highway_filter)?;

    let field = match &cfg.field {
        FieldSource::Load { path } => {
            let f = File::open(path)
                .with_context(|| format!("opening field {}", path.display()))
                .map_err(invalid)?;
            DistanceField::read_mcdf(BufReader::new(f))
                .with_context(|| format!("reading field {}", path.display()))
                .map_err(invalid)?
        }
        FieldSource::Build { cell_size_m, margin_m } => {
            let (min, max) = graph.bounds();
            let bounds = Bounds { min, max }.padded(*margin_m);
            let start = Instant::now();
            let field =
                build_distance_field_with_budget(&graph, bounds, *cell_size_m, DEFAULT_CELL_BUDGET)
                    .map_err(invalid)?;
            eprintln!(
                "built {}x{} field in {:.2}s",
                field.width(),
                field.height(),
                start.elapsed().as_secs_f64()
            );
            field
        }
    };

    let replay = match &cfg.scenario {
        ScenarioSource::Replay { dir } => core_io::load_scenario(dir)
            .and_then(|s| s.to_replay(cfg.wheelbase_m))
            .with_context(|| format!("loading scenario {}", dir.display()))
            .map_err(invalid)?,
        ScenarioSource::Generate(sc) => {
            let start = Instant::now();
            let scenario = generate_scenario(&graph, sc).map_err(invalid)?;
            eprintln!(
                "generated {} steps in {:.2}s",
                scenario.steps(),
                start.elapsed().as_secs_f64()
            );
            scenario.to_replay(cfg.wheelbase_m)
        }
    };

    let init = resolve_init(&cfg.init, &graph, &replay)?;
    let params = FilterParams {
        seed: cfg.seed,
        resample_interval: cfg.resample_interval,
        noise: cfg.motion_noise.to_motion_noise(),
        distance_fn: cfg.distance_fn,
        estimator: cfg.estimator,
        voxel_downsample_m: cfg.voxel_downsample_m,
    };
    Ok(Prepared {
        graph,
        field,
        replay,
        init,
        params,
    })
}

fn resolve_init(
    init: &InitConfig,
    graph: &RoadGraph,
    replay: &ScenarioReplay,
) -> Result<InitSpec, Failure> {
    Ok(match init {
        InitConfig::Tracking { center, radius_m, count } => {
            let center = match center {
                CenterSpec::Keyword(_) => *replay
                    .ground_truth
                    .first()
                    .ok_or_else(|| invalid(anyhow!("scenario has no ground truth")))?,
                CenterSpec::Pose(p) => Pose {
                    e: p[0],
                    n: p[1],
                    theta: p[2],
                },
            };
            InitSpec::Tracking {
                center,
                radius_m: *radius_m,
                count: *count,
            }
        }
        InitConfig::Global { rect, count } => {
            let (min, max) = match rect {
                RectSpec::Keyword(_) => graph.bounds(),
                RectSpec::Rect(r) => (
                    MapPoint { e: r[0], n: r[1] },
                    MapPoint { e: r[2], n: r[3] },
                ),
            };
            InitSpec::Global {
                min,
                max,
                count: *count,
            }
        }
    })
}
