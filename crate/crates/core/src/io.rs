//! File formats: point-cloud CSV and binary, segmented-scan CSV, odometry
//! and ground-truth CSV, filter trace CSV, scenario directories, and PGM
//! export of range images. Headers are required verbatim so external logs
//! fail loudly instead of being misread.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::map_model::{parse_osm, MapError, RoadGraph};
use crate::measurement_model::{PointClass, SegmentedPoint, SegmentedPointCloud};
use crate::motion_model::{integrate_odometry, OdometrySample, Pose};
use crate::particle_filter::{ScenarioReplay, ScenarioStep, StepRecord};
use crate::range_projection::{CloudPoint3, FovConfig, RangeImage, IMAGE_COLS, IMAGE_ROWS};
use crate::scenario_sim::{Scenario, ScenarioConfig};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("bad file format: {0}")]
    Format(String),
}

fn require_header(rdr: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<(), IoError> {
    let got = rdr.headers()?;
    if got.iter().ne(expected.iter().copied()) {
        return Err(IoError::Format(format!(
            "expected header {:?}, got {:?}",
            expected.join(","),
            got.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

fn require_finite(name: &str, v: f64) -> Result<(), IoError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(IoError::Format(format!("{name} is not finite: {v}")))
    }
}

// ---------------------------------------------------------------------
// 3D point clouds
// ---------------------------------------------------------------------

pub const CLOUD_CSV_HEADER: [&str; 5] = ["x", "y", "z", "intensity", "reflectivity"];

pub fn read_cloud_csv<R: Read>(r: R) -> Result<Vec<CloudPoint3>, IoError> {
    let mut rdr = csv::Reader::from_reader(r);
    require_header(&mut rdr, &CLOUD_CSV_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.deserialize::<CloudPoint3>() {
        let p = rec?;
        for (name, v) in [
            ("x", p.x),
            ("y", p.y),
            ("z", p.z),
            ("intensity", p.intensity),
            ("reflectivity", p.reflectivity),
        ] {
            require_finite(name, v)?;
        }
        out.push(p);
    }
    Ok(out)
}

pub fn write_cloud_csv<W: Write>(w: W, points: &[CloudPoint3]) -> Result<(), IoError> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wtr.write_record(CLOUD_CSV_HEADER)?;
    for p in points {
        wtr.serialize(p)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Compact binary cloud: point count as u32, then x,y,z,intensity,
/// reflectivity as f32, all little-endian. Trailing bytes are an error.
pub fn write_cloud_bin<W: Write>(mut w: W, points: &[CloudPoint3]) -> Result<(), IoError> {
    let count = u32::try_from(points.len())
        .map_err(|_| IoError::Format(format!("{} points exceed u32", points.len())))?;
    w.write_all(&count.to_le_bytes())?;
    for p in points {
        for v in [p.x, p.y, p.z, p.intensity, p.reflectivity] {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_cloud_bin<R: Read>(mut r: R) -> Result<Vec<CloudPoint3>, IoError> {
    let mut count_buf = [0u8; 4];
    r.read_exact(&mut count_buf)?;
    let count = u32::from_le_bytes(count_buf) as usize;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    let mut buf = [0u8; 4];
    for _ in 0..count {
        let mut vals = [0f64; 5];
        for v in &mut vals {
            r.read_exact(&mut buf)?;
            *v = f32::from_le_bytes(buf) as f64;
            require_finite("cloud value", *v)?;
        }
        out.push(CloudPoint3 {
            x: vals[0],
            y: vals[1],
            z: vals[2],
            intensity: vals[3],
            reflectivity: vals[4],
        });
    }
    if r.read(&mut buf)? != 0 {
        return Err(IoError::Format("trailing bytes after declared count".into()));
    }
    Ok(out)
}

// ---------------------------------------------------------------------
// Segmented 2D scans
// ---------------------------------------------------------------------

pub const SEGMENTED_CSV_HEADER: [&str; 3] = ["a", "b", "c"];

#[derive(Serialize, Deserialize)]
struct SegmentedRow {
    a: f64,
    b: f64,
    c: u8,
}

pub fn read_segmented_csv<R: Read>(r: R) -> Result<Vec<SegmentedPoint>, IoError> {
    let mut rdr = csv::Reader::from_reader(r);
    require_header(&mut rdr, &SEGMENTED_CSV_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.deserialize::<SegmentedRow>() {
        let row = rec?;
        require_finite("a", row.a)?;
        require_finite("b", row.b)?;
        let class = PointClass::from_u8(row.c)
            .ok_or_else(|| IoError::Format(format!("class {} not in {{0,1}}", row.c)))?;
        out.push(SegmentedPoint {
            a: row.a,
            b: row.b,
            class,
        });
    }
    Ok(out)
}

pub fn write_segmented_csv<W: Write>(w: W, points: &[SegmentedPoint]) -> Result<(), IoError> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wtr.write_record(SEGMENTED_CSV_HEADER)?;
    for p in points {
        wtr.serialize(SegmentedRow {
            a: p.a,
            b: p.b,
            c: p.class.as_u8(),
        })?;
    }
    wtr.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------
// Odometry and ground truth
// ---------------------------------------------------------------------

pub const ODOMETRY_CSV_HEADER: [&str; 3] = ["t", "v", "delta"];

#[derive(Serialize, Deserialize)]
struct OdometryRow {
    t: f64,
    v: f64,
    delta: f64,
}

/// Each row's `t` is the end of its sample interval (seconds from the
/// log start), which makes the per-sample dt recoverable exactly.
pub fn write_odometry_csv<W: Write>(w: W, samples: &[OdometrySample]) -> Result<(), IoError> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wtr.write_record(ODOMETRY_CSV_HEADER)?;
    let mut t = 0.0;
    for s in samples {
        t += s.dt;
        wtr.serialize(OdometryRow {
            t,
            v: s.v,
            delta: s.delta,
        })?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_odometry_csv<R: Read>(r: R) -> Result<Vec<OdometrySample>, IoError> {
    let mut rdr = csv::Reader::from_reader(r);
    require_header(&mut rdr, &ODOMETRY_CSV_HEADER)?;
    let mut out = Vec::new();
    let mut prev_t = 0.0;
    for rec in rdr.deserialize::<OdometryRow>() {
        let row = rec?;
        require_finite("t", row.t)?;
        require_finite("v", row.v)?;
        require_finite("delta", row.delta)?;
        let dt = row.t - prev_t;
        if dt <= 0.0 {
            return Err(IoError::Format(format!(
                "timestamps must increase: {} after {prev_t}",
                row.t
            )));
        }
        prev_t = row.t;
        out.push(OdometrySample {
            v: row.v,
            delta: row.delta,
            dt,
        });
    }
    Ok(out)
}

pub const GROUND_TRUTH_CSV_HEADER: [&str; 4] = ["step", "e", "n", "theta"];

#[derive(Serialize, Deserialize)]
struct GroundTruthRow {
    step: u64,
    e: f64,
    n: f64,
    theta: f64,
}

pub fn write_ground_truth_csv<W: Write>(w: W, poses: &[Pose]) -> Result<(), IoError> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wtr.write_record(GROUND_TRUTH_CSV_HEADER)?;
    for (k, p) in poses.iter().enumerate() {
        wtr.serialize(GroundTruthRow {
            step: k as u64,
            e: p.e,
            n: p.n,
            theta: p.theta,
        })?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_ground_truth_csv<R: Read>(r: R) -> Result<Vec<Pose>, IoError> {
    let mut rdr = csv::Reader::from_reader(r);
    require_header(&mut rdr, &GROUND_TRUTH_CSV_HEADER)?;
    let mut out: Vec<Pose> = Vec::new();
    for rec in rdr.deserialize::<GroundTruthRow>() {
        let row = rec?;
        if row.step != out.len() as u64 {
            return Err(IoError::Format(format!(
                "ground truth steps must be 0,1,2,...; got {} at row {}",
                row.step,
                out.len()
            )));
        }
        out.push(Pose {
            e: row.e,
            n: row.n,
            theta: row.theta,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------
// Filter traces
// ---------------------------------------------------------------------

pub const TRACE_CSV_HEADER: [&str; 10] = [
    "step",
    "est_e",
    "est_n",
    "est_theta",
    "gt_e",
    "gt_n",
    "gt_theta",
    "error_m",
    "spread_m",
    "resampled",
];

#[derive(Serialize, Deserialize)]
struct TraceRow {
    step: u64,
    est_e: f64,
    est_n: f64,
    est_theta: f64,
    gt_e: f64,
    gt_n: f64,
    gt_theta: f64,
    error_m: f64,
    spread_m: f64,
    resampled: bool,
}

pub fn write_trace_csv<W: Write>(w: W, records: &[StepRecord]) -> Result<(), IoError> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wtr.write_record(TRACE_CSV_HEADER)?;
    for r in records {
        wtr.serialize(TraceRow {
            step: r.step,
            est_e: r.estimate.e,
            est_n: r.estimate.n,
            est_theta: r.estimate.theta,
            gt_e: r.ground_truth.e,
            gt_n: r.ground_truth.n,
            gt_theta: r.ground_truth.theta,
            error_m: r.error_m,
            spread_m: r.spread_m,
            resampled: r.resampled,
        })?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a trace back; `degenerate` is not persisted and comes back false.
pub fn read_trace_csv<R: Read>(r: R) -> Result<Vec<StepRecord>, IoError> {
    let mut rdr = csv::Reader::from_reader(r);
    require_header(&mut rdr, &TRACE_CSV_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.deserialize::<TraceRow>() {
        let row = rec?;
        out.push(StepRecord {
            step: row.step,
            estimate: Pose {
                e: row.est_e,
                n: row.est_n,
                theta: row.est_theta,
            },
            ground_truth: Pose {
                e: row.gt_e,
                n: row.gt_n,
                theta: row.gt_theta,
            },
            error_m: row.error_m,
            spread_m: row.spread_m,
            resampled: row.resampled,
            degenerate: false,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------
// Scenario directories
// ---------------------------------------------------------------------

pub const SCENARIO_CONFIG_FILE: &str = "scenario.json";
pub const ODOMETRY_FILE: &str = "odometry.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";

pub fn scan_file_name(step: usize) -> String {
    format!("scan_{step:06}.csv")
}

/// A scenario read back from disk. External logs may omit the config
/// echo; everything else is required.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub config: Option<ScenarioConfig>,
    pub odometry: Vec<OdometrySample>,
    pub ground_truth: Vec<Pose>,
    pub clouds: Vec<SegmentedPointCloud>,
}

impl LoadedScenario {
    pub fn steps(&self) -> usize {
        self.odometry.len()
    }

    /// Packages the scenario for the filter; each step's control is the
    /// integral of that step's odometry under the given wheelbase.
    pub fn to_replay(&self, wheelbase_m: f64) -> Result<ScenarioReplay, IoError> {
        let steps = self
            .odometry
            .iter()
            .zip(&self.clouds)
            .map(|(sample, cloud)| {
                integrate_odometry(std::slice::from_ref(sample), wheelbase_m)
                    .map(|control| ScenarioStep {
                        control,
                        cloud: cloud.clone(),
                    })
                    .map_err(|e| IoError::Format(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ScenarioReplay {
            steps,
            ground_truth: self.ground_truth.clone(),
        })
    }
}

/// Writes `scenario.json`, `odometry.csv`, `ground_truth.csv`, and one
/// `scan_NNNNNN.csv` per step (numbered from 1) into `dir`.
pub fn save_scenario(dir: &Path, scenario: &Scenario) -> Result<(), IoError> {
    fs::create_dir_all(dir)?;
    serde_json::to_writer_pretty(
        BufWriter::new(File::create(dir.join(SCENARIO_CONFIG_FILE))?),
        &scenario.config,
    )?;
    write_odometry_csv(
        BufWriter::new(File::create(dir.join(ODOMETRY_FILE))?),
        &scenario.trace.odometry,
    )?;
    write_ground_truth_csv(
        BufWriter::new(File::create(dir.join(GROUND_TRUTH_FILE))?),
        &scenario.trace.poses,
    )?;
    for (i, cloud) in scenario.clouds.iter().enumerate() {
        write_segmented_csv(
            BufWriter::new(File::create(dir.join(scan_file_name(i + 1)))?),
            &cloud.points,
        )?;
    }
    Ok(())
}

pub fn load_scenario(dir: &Path) -> Result<LoadedScenario, IoError> {
    let config = match File::open(dir.join(SCENARIO_CONFIG_FILE)) {
        Ok(f) => Some(serde_json::from_reader(BufReader::new(f))?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e.into()),
    };
    let odometry = read_odometry_csv(BufReader::new(File::open(dir.join(ODOMETRY_FILE))?))?;
    let ground_truth =
        read_ground_truth_csv(BufReader::new(File::open(dir.join(GROUND_TRUTH_FILE))?))?;
    if ground_truth.len() != odometry.len() + 1 {
        return Err(IoError::Format(format!(
            "{} ground truth poses for {} odometry samples (need samples + 1)",
            ground_truth.len(),
            odometry.len()
        )));
    }
    let mut clouds = Vec::with_capacity(odometry.len());
    for step in 1..=odometry.len() {
        let path = dir.join(scan_file_name(step));
        let points = read_segmented_csv(BufReader::new(File::open(&path).map_err(|e| {
            IoError::Format(format!("missing {}: {e}", path.display()))
        })?))?;
        clouds.push(SegmentedPointCloud::simulated(points));
    }
    Ok(LoadedScenario {
        config,
        odometry,
        ground_truth,
        clouds,
    })
}

// ---------------------------------------------------------------------
// Road graphs
// ---------------------------------------------------------------------

pub fn load_graph(
    path: &Path,
    highway_filter: &std::collections::HashSet<String>,
) -> Result<RoadGraph, IoError> {
    let xml = fs::read_to_string(path)?;
    Ok(parse_osm(&xml, highway_filter)?)
}

// ---------------------------------------------------------------------
// PGM export of range images
// ---------------------------------------------------------------------

/// Writes `<base>_range.pgm`, `<base>_intensity.pgm`, and
/// `<base>_reflectivity.pgm` (binary P5, maxval 255). Occupied pixels map
/// to 1..=255 (range scaled by the maximum occupied range, the other
/// channels clamped to [0,1]); empty pixels are 0.
pub fn write_range_image_pgm_set(
    base: &Path,
    img: &RangeImage,
    fov: &FovConfig,
) -> Result<[PathBuf; 3], IoError> {
    let max_range = img
        .range
        .iter()
        .zip(&img.point_index)
        .filter(|(_, idx)| idx.is_some())
        .map(|(r, _)| *r)
        .fold(0.0f64, f64::max);

    let scale = |v: f64, denom: f64, occupied: bool| -> u8 {
        if !occupied {
            return 0;
        }
        let unit = if denom > 0.0 { (v / denom).clamp(0.0, 1.0) } else { 0.0 };
        1 + (unit * 254.0).round() as u8
    };

    let channel = |values: &[f64], denom: Option<f64>| -> Vec<u8> {
        values
            .iter()
            .zip(&img.point_index)
            .map(|(v, idx)| scale(*v, denom.unwrap_or(1.0), idx.is_some()))
            .collect()
    };

    let stem = base
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let named = |suffix: &str| base.with_file_name(format!("{stem}_{suffix}.pgm"));
    let outputs = [
        (named("range"), channel(&img.range, Some(max_range))),
        (named("intensity"), channel(&img.intensity, None)),
        (named("reflectivity"), channel(&img.reflectivity, None)),
    ];
    for (path, bytes) in &outputs {
        let mut f = BufWriter::new(File::create(path)?);
        writeln!(f, "P5")?;
        writeln!(
            f,
            "# azimuth_span_deg {} azimuth_res_deg {} min_alt_deg {} max_alt_deg {}",
            fov.azimuth_span_deg, fov.azimuth_res_deg, fov.min_alt_deg, fov.max_alt_deg
        )?;
        writeln!(f, "# max_range_m {max_range}")?;
        writeln!(f, "{IMAGE_COLS} {IMAGE_ROWS}")?;
        writeln!(f, "255")?;
        f.write_all(bytes)?;
    }
    let [a, b, c] = outputs;
    Ok([a.0, b.0, c.0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::range_projection::project;

    fn sample_points() -> Vec<CloudPoint3> {
        vec![
            CloudPoint3 { x: 1.0, y: 2.0, z: 3.0, intensity: 0.5, reflectivity: 0.25 },
            CloudPoint3 { x: -4.5, y: 0.0, z: 1.5, intensity: 0.0, reflectivity: 1.0 },
            CloudPoint3 { x: 10.0, y: -3.0, z: -0.5, intensity: 0.9, reflectivity: 0.1 },
        ]
    }

    #[test]
    fn cloud_csv_round_trips() {
        let points = sample_points();
        let mut buf = Vec::new();
        write_cloud_csv(&mut buf, &points).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x,y,z,intensity,reflectivity\n"));
        let back = read_cloud_csv(buf.as_slice()).unwrap();
        assert_eq!(points, back);
    }

    #[test]
    fn cloud_csv_requires_exact_header() {
        let bad = "x,y,z,i,r\n1,2,3,4,5\n";
        assert!(matches!(
            read_cloud_csv(bad.as_bytes()),
            Err(IoError::Format(_))
        ));
        let nan = "x,y,z,intensity,reflectivity\n1,NaN,3,0,0\n";
        assert!(read_cloud_csv(nan.as_bytes()).is_err());
    }

    #[test]
    fn cloud_binary_round_trips_at_f32_precision() {
        let points = sample_points();
        let mut buf = Vec::new();
        write_cloud_bin(&mut buf, &points).unwrap();
        assert_eq!(buf.len(), 4 + points.len() * 5 * 4);
        let back = read_cloud_bin(buf.as_slice()).unwrap();
        for (p, q) in points.iter().zip(&back) {
            assert_eq!(p.x as f32, q.x as f32);
            assert_eq!(p.intensity as f32, q.intensity as f32);
        }
    }

    #[test]
    fn cloud_binary_rejects_truncation_and_trailing_bytes() {
        let points = sample_points();
        let mut buf = Vec::new();
        write_cloud_bin(&mut buf, &points).unwrap();
        let truncated = &buf[..buf.len() - 3];
        assert!(read_cloud_bin(truncated).is_err());
        let mut padded = buf.clone();
        padded.push(0);
        assert!(matches!(
            read_cloud_bin(padded.as_slice()),
            Err(IoError::Format(_))
        ));
    }

    #[test]
    fn segmented_csv_round_trips_and_validates_class() {
        let points = vec![
            SegmentedPoint { a: 1.5, b: -2.0, class: PointClass::Road },
            SegmentedPoint { a: 0.0, b: 7.25, class: PointClass::NonRoad },
        ];
        let mut buf = Vec::new();
        write_segmented_csv(&mut buf, &points).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("a,b,c\n"));
        let back = read_segmented_csv(buf.as_slice()).unwrap();
        assert_eq!(points, back);

        let bad_class = "a,b,c\n1.0,2.0,3\n";
        assert!(matches!(
            read_segmented_csv(bad_class.as_bytes()),
            Err(IoError::Format(_))
        ));
    }

    #[test]
    fn odometry_csv_preserves_dt_exactly() {
        let samples = vec![
            OdometrySample { v: 10.0, delta: 0.01, dt: 0.25 },
            OdometrySample { v: 9.5, delta: -0.02, dt: 0.25 },
            OdometrySample { v: 10.5, delta: 0.0, dt: 0.5 },
        ];
        let mut buf = Vec::new();
        write_odometry_csv(&mut buf, &samples).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("t,v,delta\n"));
        let back = read_odometry_csv(buf.as_slice()).unwrap();
        assert_eq!(samples.len(), back.len());
        for (s, b) in samples.iter().zip(&back) {
            assert_eq!(s.v, b.v);
            assert_eq!(s.delta, b.delta);
            assert!((s.dt - b.dt).abs() < 1e-12);
        }
    }

    #[test]
    fn odometry_csv_rejects_nonincreasing_time() {
        let bad = "t,v,delta\n1.0,10,0\n0.5,10,0\n";
        assert!(matches!(
            read_odometry_csv(bad.as_bytes()),
            Err(IoError::Format(_))
        ));
    }

    #[test]
    fn ground_truth_csv_round_trips_and_checks_step_order() {
        let poses = vec![
            Pose { e: 0.0, n: 0.0, theta: 0.0 },
            Pose { e: 2.5, n: -1.0, theta: 0.1 },
        ];
        let mut buf = Vec::new();
        write_ground_truth_csv(&mut buf, &poses).unwrap();
        let back = read_ground_truth_csv(buf.as_slice()).unwrap();
        assert_eq!(poses, back);
        let bad = "step,e,n,theta\n0,0,0,0\n2,1,1,0\n";
        assert!(read_ground_truth_csv(bad.as_bytes()).is_err());
    }

    #[test]
    fn trace_csv_round_trips() {
        let records = vec![StepRecord {
            step: 3,
            estimate: Pose { e: 1.0, n: 2.0, theta: 0.3 },
            ground_truth: Pose { e: 1.5, n: 2.5, theta: 0.25 },
            error_m: 0.7071,
            spread_m: 12.5,
            resampled: true,
            degenerate: false,
        }];
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &records).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(&(TRACE_CSV_HEADER.join(",") + "\n")), "{text}");
        let back = read_trace_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].step, 3);
        assert_eq!(back[0].estimate.e, 1.0);
        assert!(back[0].resampled);
    }

    #[test]
    fn scenario_directory_round_trips() {
        use crate::map_model::{MapPoint, Way};
        use crate::scenario_sim::{generate_scenario, RouteSpec};
        let g = RoadGraph::from_ways(
            [
                (1, MapPoint { e: 0.0, n: 0.0 }),
                (2, MapPoint { e: 500.0, n: 0.0 }),
            ],
            vec![Way { id: 10, highway: "residential".into(), nodes: vec![1, 2] }],
        )
        .unwrap();
        let mut cfg = ScenarioConfig::with_route(RouteSpec::Ways(vec![10]));
        cfg.seed = 5;
        cfg.points_per_scan = 30;
        let scenario = generate_scenario(&g, &cfg).unwrap();

        let dir = tempfile::tempdir().unwrap();
        save_scenario(dir.path(), &scenario).unwrap();
        let loaded = load_scenario(dir.path()).unwrap();
        assert_eq!(loaded.config.as_ref(), Some(&cfg));
        assert_eq!(loaded.steps(), scenario.steps());
        assert_eq!(loaded.ground_truth, scenario.trace.poses);
        for (s, l) in scenario.trace.odometry.iter().zip(&loaded.odometry) {
            assert!((s.v - l.v).abs() < 1e-12);
            assert!((s.dt - l.dt).abs() < 1e-12);
        }
        for (a, b) in scenario.clouds.iter().zip(&loaded.clouds) {
            assert_eq!(a.points, b.points);
        }
        let replay = loaded.to_replay(cfg.wheelbase_m).unwrap();
        assert_eq!(replay.steps.len(), loaded.steps());
        assert_eq!(replay.ground_truth.len(), loaded.steps() + 1);
    }

    #[test]
    fn scenario_without_config_echo_still_loads() {
        use crate::map_model::{MapPoint, Way};
        use crate::scenario_sim::{generate_scenario, RouteSpec};
        let g = RoadGraph::from_ways(
            [
                (1, MapPoint { e: 0.0, n: 0.0 }),
                (2, MapPoint { e: 300.0, n: 0.0 }),
            ],
            vec![Way { id: 10, highway: "residential".into(), nodes: vec![1, 2] }],
        )
        .unwrap();
        let mut cfg = ScenarioConfig::with_route(RouteSpec::Ways(vec![10]));
        cfg.points_per_scan = 10;
        let scenario = generate_scenario(&g, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_scenario(dir.path(), &scenario).unwrap();
        fs::remove_file(dir.path().join(SCENARIO_CONFIG_FILE)).unwrap();
        let loaded = load_scenario(dir.path()).unwrap();
        assert!(loaded.config.is_none());
        assert_eq!(loaded.steps(), scenario.steps());
    }

    #[test]
    fn missing_scan_file_is_reported() {
        use crate::map_model::{MapPoint, Way};
        use crate::scenario_sim::{generate_scenario, RouteSpec};
        let g = RoadGraph::from_ways(
            [
                (1, MapPoint { e: 0.0, n: 0.0 }),
                (2, MapPoint { e: 300.0, n: 0.0 }),
            ],
            vec![Way { id: 10, highway: "residential".into(), nodes: vec![1, 2] }],
        )
        .unwrap();
        let mut cfg = ScenarioConfig::with_route(RouteSpec::Ways(vec![10]));
        cfg.points_per_scan = 10;
        let scenario = generate_scenario(&g, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_scenario(dir.path(), &scenario).unwrap();
        fs::remove_file(dir.path().join(scan_file_name(1))).unwrap();
        assert!(matches!(
            load_scenario(dir.path()),
            Err(IoError::Format(_))
        ));
    }

    #[test]
    fn pgm_set_has_valid_headers_and_payload() {
        let cloud = vec![
            CloudPoint3 { x: 10.0, y: 0.0, z: 0.0, intensity: 0.5, reflectivity: 0.2 },
            CloudPoint3 { x: 5.0, y: 2.0, z: 1.0, intensity: 1.0, reflectivity: 0.9 },
        ];
        let fov = FovConfig::default();
        let img = project(&cloud, &fov).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("demo");
        let paths = write_range_image_pgm_set(&base, &img, &fov).unwrap();
        assert!(paths[0].file_name().unwrap().to_str().unwrap() == "demo_range.pgm");
        for p in &paths {
            let bytes = fs::read(p).unwrap();
            let text = String::from_utf8_lossy(&bytes[..64]);
            assert!(text.starts_with("P5\n"), "{text}");
            // Payload is exactly rows*cols bytes after the maxval line.
            let header_end = bytes
                .windows(4)
                .position(|w| w == b"255\n")
                .map(|i| i + 4)
                .unwrap();
            assert_eq!(bytes.len() - header_end, IMAGE_ROWS * IMAGE_COLS);
        }
        // Occupied pixels are nonzero in the range channel, empty are 0.
        let bytes = fs::read(&paths[0]).unwrap();
        let header_end = bytes.windows(4).position(|w| w == b"255\n").unwrap() + 4;
        let payload = &bytes[header_end..];
        let occupied: usize = payload.iter().filter(|&&b| b > 0).count();
        assert_eq!(occupied, img.occupied_count());
    }

    #[test]
    fn pgm_writes_are_deterministic() {
        let cloud = vec![CloudPoint3 { x: 8.0, y: -1.0, z: 0.5, intensity: 0.3, reflectivity: 0.6 }];
        let fov = FovConfig::default();
        let img = project(&cloud, &fov).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        write_range_image_pgm_set(&a, &img, &fov).unwrap();
        write_range_image_pgm_set(&b, &img, &fov).unwrap();
        assert_eq!(
            fs::read(dir.path().join("a_range.pgm")).unwrap()[3..],
            fs::read(dir.path().join("b_range.pgm")).unwrap()[3..]
        );
    }

    #[test]
    fn graph_loader_reads_osm_files() {
        let xml = r#"<?xml version="1.0"?>
<osm version="0.6">
  <node id="1" lat="41.0" lon="9.0"/>
  <node id="2" lat="41.0" lon="9.001"/>
  <way id="7"><nd ref="1"/><nd ref="2"/><tag k="highway" v="residential"/></way>
</osm>"#;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mini.osm");
        fs::write(&path, xml).unwrap();
        let g = load_graph(&path, &crate::map_model::default_highway_filter()).unwrap();
        assert_eq!(g.nodes().len(), 2);
        assert_eq!(g.segments().len(), 1);
    }
}
