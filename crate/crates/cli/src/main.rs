//! Command line front end: build distance fields, generate scenarios, run
//! the localization filter, and project point clouds to range images.
//!
//! Exit codes: 0 on success, 2 for invalid input or configuration, 1 for
//! runtime failures (mostly output I/O). Timing goes to stderr so stdout
//! and every produced file are byte-identical across reruns.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use osmcl::config::{self, RunConfig};
use osmcl::runner::{self, invalid, runtime, Failure};
use osmcl_core::distance_field::{build_distance_field_with_budget, Bounds, DEFAULT_CELL_BUDGET};
use osmcl_core::io as core_io;
use osmcl_core::measurement_model::{DistanceFunctionKind, DistanceFunctionSpec};
use osmcl_core::particle_filter::{run_scenario, FilterParams, ScenarioTrace};
use osmcl_core::range_projection::{project, FovConfig, IMAGE_COLS, IMAGE_ROWS, PIXELS};
use osmcl_core::scenario_sim::generate_scenario;

#[derive(Parser)]
#[command(
    name = "osmcl",
    version,
    about = "Monte Carlo localization on OpenStreetMap road networks"
)]
struct Cli {
    /// Worker threads for parallel sections (default: one per core).
    /// Results are identical for any value.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..=512))]
    workers: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rasterize the nearest-road distance over a map into a .mcdf file.
    BuildField(BuildFieldArgs),
    /// Synthesize a drive (odometry + labeled scans) into a directory.
    GenScenario(GenScenarioArgs),
    /// Run the localization filter over a scenario and write its trace.
    Run(RunArgs),
    /// Project a point cloud CSV/BIN into range/intensity/reflectivity PGMs.
    Project(ProjectArgs),
}

#[derive(Args)]
struct BuildFieldArgs {
    /// OSM XML map file.
    #[arg(long)]
    map: PathBuf,
    /// Output .mcdf path; a .json sidecar records the build inputs.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = config::default_cell_size())]
    cell_size_m: f64,
    /// Padding beyond the road bounding box on all sides.
    #[arg(long, default_value_t = config::default_margin())]
    margin_m: f64,
    /// Maximum width*height cells; exceeding it aborts with exit code 2.
    #[arg(long, default_value_t = DEFAULT_CELL_BUDGET)]
    budget: u64,
    /// Comma-separated highway values to keep (default: drivable set).
    #[arg(long, value_delimiter = ',')]
    highway: Option<Vec<String>>,
}

#[derive(Args)]
struct GenScenarioArgs {
    /// OSM XML map file.
    #[arg(long)]
    map: PathBuf,
    /// Scenario config JSON (route, speed, scan synthesis, seed).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for scenario.json, odometry.csv, ground_truth.csv,
    /// and one scan_NNNNNN.csv per step.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, value_delimiter = ',')]
    highway: Option<Vec<String>>,
}

#[derive(Args)]
struct RunArgs {
    /// Run config JSON; see the bundled configs/ directory for examples.
    #[arg(long)]
    config: PathBuf,
    /// Run all four distance kernels (same seed and scenario) and print a
    /// comparison table. Outputs gain a per-kind suffix.
    #[arg(long)]
    sweep_kinds: bool,
}

#[derive(Args)]
struct ProjectArgs {
    /// Input cloud: .csv (x,y,z,intensity,reflectivity header) or .bin.
    #[arg(long)]
    cloud: PathBuf,
    /// Output prefix; writes <base>_range.pgm, <base>_intensity.pgm,
    /// <base>_reflectivity.pgm.
    #[arg(long)]
    out_base: PathBuf,
    #[arg(long, default_value_t = 180.0)]
    azimuth_span_deg: f64,
    #[arg(long, default_value_t = 0.35)]
    azimuth_res_deg: f64,
    #[arg(long, default_value_t = -22.5)]
    min_alt_deg: f64,
    #[arg(long, default_value_t = 22.5)]
    max_alt_deg: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build_global()
        {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::BuildField(args) => cmd_build_field(&args),
        Command::GenScenario(args) => cmd_gen_scenario(&args),
        Command::Run(args) => cmd_run(&args),
        Command::Project(args) => cmd_project(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.exit)
        }
    }
}

/// Build-input echo stored next to each .mcdf so a field file is
/// self-describing. Deliberately free of timing and host details.
#[derive(serde::Serialize)]
struct FieldSidecar<'a> {
    map: &'a str,
    highway: Vec<String>,
    cell_size_m: f64,
    margin_m: f64,
    width: u32,
    height: u32,
    origin_e: f64,
    origin_n: f64,
}

fn cmd_build_field(args: &BuildFieldArgs) -> Result<(), Failure> {
    let graph = runner::load_graph(&args.map, &args.highway)?;
    let (min, max) = graph.bounds();
    let bounds = Bounds { min, max }.padded(args.margin_m);

    let start = Instant::now();
    let field = build_distance_field_with_budget(&graph, bounds, args.cell_size_m, args.budget)
        .map_err(invalid)?;
    eprintln!(
        "built {}x{} field in {:.2}s",
        field.width(),
        field.height(),
        start.elapsed().as_secs_f64()
    );

    // Write to a sibling temp file and rename so a failed run never leaves
    // a truncated .mcdf behind.
    let tmp = args.out.with_extension("mcdf.tmp");
    let write = (|| -> anyhow::Result<()> {
        if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let mut w = BufWriter::new(File::create(&tmp)?);
        field.write_mcdf(&mut w)?;
        w.flush()?;
        drop(w);
        fs::rename(&tmp, &args.out)?;
        Ok(())
    })();
    if let Err(e) = write {
        let _ = fs::remove_file(&tmp);
        return Err(runtime(e.context(format!("writing {}", args.out.display()))));
    }

    let mut highway: Vec<String> = runner::highway_set(&args.highway).into_iter().collect();
    highway.sort_unstable();
    let sidecar = FieldSidecar {
        map: &args.map.to_string_lossy(),
        highway,
        cell_size_m: args.cell_size_m,
        margin_m: args.margin_m,
        width: field.width(),
        height: field.height(),
        origin_e: field.origin().e,
        origin_n: field.origin().n,
    };
    runner::write_json_pretty(&sidecar_path(&args.out), &sidecar).map_err(runtime)?;

    println!(
        "field {}x{} cells ({}) cell {} m -> {}",
        field.width(),
        field.height(),
        field.width() as u64 * field.height() as u64,
        args.cell_size_m,
        args.out.display()
    );
    Ok(())
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn cmd_gen_scenario(args: &GenScenarioArgs) -> Result<(), Failure> {
    let graph = runner::load_graph(&args.map, &args.highway)?;
    let cfg: osmcl_core::scenario_sim::ScenarioConfig =
        runner::read_json(&args.config).map_err(invalid)?;

    let start = Instant::now();
    let scenario = generate_scenario(&graph, &cfg).map_err(invalid)?;
    eprintln!(
        "generated {} steps in {:.2}s",
        scenario.steps(),
        start.elapsed().as_secs_f64()
    );

    core_io::save_scenario(&args.out_dir, &scenario)
        .with_context(|| format!("writing scenario to {}", args.out_dir.display()))
        .map_err(runtime)?;

    let dist: f64 = scenario
        .trace
        .poses
        .windows(2)
        .map(|w| w[0].position_distance_to(&w[1]))
        .sum();
    println!(
        "scenario: {} steps, {:.1} m driven -> {}",
        scenario.steps(),
        dist,
        args.out_dir.display()
    );
    Ok(())
}

/// Everything that ends up in summary.json. Wall-clock time is deliberately
/// excluded; reruns of the same config must produce identical bytes.
#[derive(serde::Serialize)]
struct RunSummary<'a> {
    steps: usize,
    particles: usize,
    distance_fn: DistanceFunctionSpec,
    convergence_step: Option<u64>,
    convergence_step_error: Option<u64>,
    mean_error_post_convergence: Option<f64>,
    final_error_m: f64,
    resamples: u64,
    degenerate_steps: u64,
    config: &'a RunConfig,
}

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let cfg: RunConfig = runner::read_json(&args.config).map_err(invalid)?;
    let prepared = runner::prepare(&cfg)?;
    let particles = runner::particle_count(&prepared.init);

    fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("creating {}", cfg.out_dir.display()))
        .map_err(runtime)?;

    if args.sweep_kinds {
        println!(
            "{:<16} {:>9} {:>12} {:>12} {:>10}",
            "kind", "converge", "mean_err_m", "final_err_m", "resamples"
        );
        for kind in DistanceFunctionKind::ALL {
            let mut params = prepared.params.clone();
            params.distance_fn.kind = kind;
            let trace = run_one(&prepared, &params)?;
            let suffix = kind.name();
            write_outputs(
                &cfg,
                &trace,
                particles,
                params.distance_fn,
                &cfg.out_dir.join(format!("trace_{suffix}.csv")),
                &cfg.out_dir.join(format!("summary_{suffix}.json")),
            )?;
            println!(
                "{:<16} {:>9} {:>12} {:>12} {:>10}",
                suffix,
                trace
                    .convergence_step
                    .map(|s| s.to_string())
                    .unwrap_or_else(|| "--".into()),
                trace
                    .mean_error_post_convergence
                    .map(|e| format!("{e:.3}"))
                    .unwrap_or_else(|| "--".into()),
                format!("{:.3}", trace.final_error_m),
                trace.resamples
            );
        }
    } else {
        let trace = run_one(&prepared, &prepared.params)?;
        write_outputs(
            &cfg,
            &trace,
            particles,
            prepared.params.distance_fn,
            &cfg.out_dir.join("trace.csv"),
            &cfg.out_dir.join("summary.json"),
        )?;
        println!(
            "steps {}  particles {}  kind {}",
            trace.records.len() - 1,
            particles,
            prepared.params.distance_fn.kind.name()
        );
        println!(
            "convergence_step {}  mean_error_post_convergence_m {}  final_error_m {:.3}",
            trace
                .convergence_step
                .map(|s| s.to_string())
                .unwrap_or_else(|| "--".into()),
            trace
                .mean_error_post_convergence
                .map(|e| format!("{e:.3}"))
                .unwrap_or_else(|| "--".into()),
            trace.final_error_m
        );
        println!("trace -> {}", cfg.out_dir.join("trace.csv").display());
        println!("summary -> {}", cfg.out_dir.join("summary.json").display());
    }
    Ok(())
}

fn run_one(prepared: &runner::Prepared, params: &FilterParams) -> Result<ScenarioTrace, Failure> {
    let start = Instant::now();
    let trace = run_scenario(&prepared.field, &prepared.replay, &prepared.init, params)
        .map_err(invalid)?;
    eprintln!(
        "{}: {} steps in {:.2}s",
        params.distance_fn.kind.name(),
        trace.records.len() - 1,
        start.elapsed().as_secs_f64()
    );
    Ok(trace)
}

fn write_outputs(
    cfg: &RunConfig,
    trace: &ScenarioTrace,
    particles: usize,
    distance_fn: DistanceFunctionSpec,
    trace_path: &Path,
    summary_path: &Path,
) -> Result<(), Failure> {
    let w = BufWriter::new(
        File::create(trace_path)
            .with_context(|| format!("creating {}", trace_path.display()))
            .map_err(runtime)?,
    );
    core_io::write_trace_csv(w, &trace.records)
        .with_context(|| format!("writing {}", trace_path.display()))
        .map_err(runtime)?;

    let summary = RunSummary {
        steps: trace.records.len() - 1,
        particles,
        distance_fn,
        convergence_step: trace.convergence_step,
        convergence_step_error: trace.convergence_step_error,
        mean_error_post_convergence: trace.mean_error_post_convergence,
        final_error_m: trace.final_error_m,
        resamples: trace.resamples,
        degenerate_steps: trace.degenerate_steps,
        config: cfg,
    };
    runner::write_json_pretty(summary_path, &summary).map_err(runtime)
}

fn cmd_project(args: &ProjectArgs) -> Result<(), Failure> {
    let ext = args
        .cloud
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    let cloud = match ext.as_deref() {
        Some("csv") => {
            let f = File::open(&args.cloud)
                .with_context(|| format!("opening {}", args.cloud.display()))
                .map_err(invalid)?;
            core_io::read_cloud_csv(BufReader::new(f))
                .with_context(|| format!("parsing {}", args.cloud.display()))
                .map_err(invalid)?
        }
        Some("bin") => {
            let f = File::open(&args.cloud)
                .with_context(|| format!("opening {}", args.cloud.display()))
                .map_err(invalid)?;
            core_io::read_cloud_bin(BufReader::new(f))
                .with_context(|| format!("parsing {}", args.cloud.display()))
                .map_err(invalid)?
        }
        _ => {
            return Err(invalid(anyhow!(
                "cloud {} must end in .csv or .bin",
                args.cloud.display()
            )))
        }
    };

    let fov = FovConfig {
        azimuth_span_deg: args.azimuth_span_deg,
        azimuth_res_deg: args.azimuth_res_deg,
        min_alt_deg: args.min_alt_deg,
        max_alt_deg: args.max_alt_deg,
    };
    let start = Instant::now();
    let image = project(&cloud, &fov).map_err(invalid)?;
    eprintln!(
        "projected {} points in {:.3}s",
        cloud.len(),
        start.elapsed().as_secs_f64()
    );

    if let Some(parent) = args.out_base.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))
            .map_err(runtime)?;
    }
    let paths = core_io::write_range_image_pgm_set(&args.out_base, &image, &fov)
        .with_context(|| format!("writing {}_*.pgm", args.out_base.display()))
        .map_err(runtime)?;

    let occupied = image.occupied_count();
    println!(
        "{} points -> {}x{} image, {} / {} pixels occupied ({:.2}%)",
        cloud.len(),
        IMAGE_ROWS,
        IMAGE_COLS,
        occupied,
        PIXELS,
        100.0 * occupied as f64 / PIXELS as f64
    );
    for p in &paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}
