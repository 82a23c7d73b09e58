//! Precomputed distance-to-nearest-road-edge grid.
//!
//! The filter's weighting loop performs one distance query per point per
//! particle, so queries must be a single memory read. The build computes
//! the exact point-to-segment distance for every cell center (accelerated
//! by a coarse tile index over segments, which prunes but never
//! approximates), rather than an approximate two-pass distance transform.
//!
//! Values are kept as f64 in memory; the MCDF file format quantizes to f32
//! on write, which bounds the round-trip error at the f32 relative epsilon
//! times the stored distance.

use std::io::{Read, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::map_model::{MapPoint, RoadGraph, Segment};

/// Grid pitch matching the measurement voxel scale.
pub const DEFAULT_CELL_SIZE_M: f64 = 2.0;

/// Refuse to allocate grids beyond this many cells.
pub const DEFAULT_CELL_BUDGET: u64 = 100_000_000;

const MCDF_MAGIC: [u8; 4] = *b"MCDF";
const MCDF_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("road graph has no segments")]
    EmptyGraph,
    #[error("bounds are degenerate (zero or negative extent)")]
    DegenerateBounds,
    #[error("cell size must be positive and finite, got {0}")]
    BadCellSize(f64),
    #[error("{width}x{height} grid exceeds the cell budget of {budget}")]
    CellBudget { width: u64, height: u64, budget: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad MCDF file: {0}")]
    Format(String),
}

/// Axis-aligned rectangle in the map frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub min: MapPoint,
    pub max: MapPoint,
}

impl Bounds {
    /// Expands the rectangle by `margin` meters on every side.
    pub fn padded(self, margin: f64) -> Bounds {
        Bounds {
            min: MapPoint {
                e: self.min.e - margin,
                n: self.min.n - margin,
            },
            max: MapPoint {
                e: self.max.e + margin,
                n: self.max.n + margin,
            },
        }
    }
}

/// Coarse spatial index over road segments.
///
/// Segments are bucketed into square tiles by their bounding boxes. Nearest
/// queries expand outward ring by ring, pruning tiles that provably cannot
/// beat the best distance found so far; every reported distance is an exact
/// point-to-segment distance, never a tile approximation.
pub struct SegmentIndex {
    segments: Vec<Segment>,
    tile_size: f64,
    tx_min: i64,
    ty_min: i64,
    tx_count: i64,
    ty_count: i64,
    buckets: Vec<Vec<u32>>,
}

impl SegmentIndex {
    pub const DEFAULT_TILE_SIZE_M: f64 = 50.0;

    pub fn new(segments: &[Segment], tile_size: f64) -> Result<SegmentIndex, FieldError> {
        if segments.is_empty() {
            return Err(FieldError::EmptyGraph);
        }
        if !(tile_size.is_finite() && tile_size > 0.0) {
            return Err(FieldError::BadCellSize(tile_size));
        }
        let tile_of = |v: f64| (v / tile_size).floor() as i64;
        let mut tx_min = i64::MAX;
        let mut ty_min = i64::MAX;
        let mut tx_max = i64::MIN;
        let mut ty_max = i64::MIN;
        for s in segments {
            tx_min = tx_min.min(tile_of(s.a.e.min(s.b.e)));
            tx_max = tx_max.max(tile_of(s.a.e.max(s.b.e)));
            ty_min = ty_min.min(tile_of(s.a.n.min(s.b.n)));
            ty_max = ty_max.max(tile_of(s.a.n.max(s.b.n)));
        }
        let tx_count = tx_max - tx_min + 1;
        let ty_count = ty_max - ty_min + 1;
        let mut buckets = vec![Vec::new(); (tx_count * ty_count) as usize];
        for (i, s) in segments.iter().enumerate() {
            for ty in tile_of(s.a.n.min(s.b.n))..=tile_of(s.a.n.max(s.b.n)) {
                for tx in tile_of(s.a.e.min(s.b.e))..=tile_of(s.a.e.max(s.b.e)) {
                    buckets[((ty - ty_min) * tx_count + (tx - tx_min)) as usize].push(i as u32);
                }
            }
        }
        Ok(SegmentIndex {
            segments: segments.to_vec(),
            tile_size,
            tx_min,
            ty_min,
            tx_count,
            ty_count,
            buckets,
        })
    }

    pub fn for_graph(g: &RoadGraph) -> Result<SegmentIndex, FieldError> {
        SegmentIndex::new(g.segments(), Self::DEFAULT_TILE_SIZE_M)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    fn scan_tile(&self, tx: i64, ty: i64, p: MapPoint, best_sq: &mut f64) {
        if tx < self.tx_min
            || ty < self.ty_min
            || tx >= self.tx_min + self.tx_count
            || ty >= self.ty_min + self.ty_count
        {
            return;
        }
        let idx = ((ty - self.ty_min) * self.tx_count + (tx - self.tx_min)) as usize;
        for &si in &self.buckets[idx] {
            let d_sq = self.segments[si as usize].distance_sq_to(p);
            if d_sq < *best_sq {
                *best_sq = d_sq;
            }
        }
    }

    /// Exact Euclidean distance from `p` to the nearest segment.
    pub fn nearest_distance(&self, p: MapPoint) -> f64 {
        self.nearest_distance_sq(p).sqrt()
    }

    pub fn nearest_distance_sq(&self, p: MapPoint) -> f64 {
        let cx = (p.e / self.tile_size).floor() as i64;
        let cy = (p.n / self.tile_size).floor() as i64;
        // The largest ring that can still intersect the indexed tile range.
        let max_ring = (cx - self.tx_min)
            .abs()
            .max((self.tx_min + self.tx_count - 1 - cx).abs())
            .max((cy - self.ty_min).abs())
            .max((self.ty_min + self.ty_count - 1 - cy).abs());
        let mut best_sq = f64::INFINITY;
        for ring in 0..=max_ring {
            // Any segment in ring k is at least (k-1) full tiles away.
            let floor_dist = self.tile_size * (ring - 1).max(0) as f64;
            if floor_dist * floor_dist > best_sq {
                break;
            }
            if ring == 0 {
                self.scan_tile(cx, cy, p, &mut best_sq);
                continue;
            }
            for tx in (cx - ring)..=(cx + ring) {
                self.scan_tile(tx, cy - ring, p, &mut best_sq);
                self.scan_tile(tx, cy + ring, p, &mut best_sq);
            }
            for ty in (cy - ring + 1)..(cy + ring) {
                self.scan_tile(cx - ring, ty, p, &mut best_sq);
                self.scan_tile(cx + ring, ty, p, &mut best_sq);
            }
        }
        best_sq
    }

    /// Indices of segments whose exact distance to `p` is at most `radius`.
    pub fn segment_indices_within(&self, p: MapPoint, radius: f64) -> Vec<u32> {
        let r_sq = radius * radius;
        let tx_lo = ((p.e - radius) / self.tile_size).floor() as i64;
        let tx_hi = ((p.e + radius) / self.tile_size).floor() as i64;
        let ty_lo = ((p.n - radius) / self.tile_size).floor() as i64;
        let ty_hi = ((p.n + radius) / self.tile_size).floor() as i64;
        let mut out = Vec::new();
        for si in 0..self.segments.len() as u32 {
            let s = &self.segments[si as usize];
            let stx_lo = (s.a.e.min(s.b.e) / self.tile_size).floor() as i64;
            let stx_hi = (s.a.e.max(s.b.e) / self.tile_size).floor() as i64;
            let sty_lo = (s.a.n.min(s.b.n) / self.tile_size).floor() as i64;
            let sty_hi = (s.a.n.max(s.b.n) / self.tile_size).floor() as i64;
            if stx_hi < tx_lo || stx_lo > tx_hi || sty_hi < ty_lo || sty_lo > ty_hi {
                continue;
            }
            if s.distance_sq_to(p) <= r_sq {
                out.push(si);
            }
        }
        out
    }
}

/// Dense grid of nearest-edge distances in meters.
///
/// `origin` is the outer corner of cell (0, 0); cell (row, col) covers
/// `[origin + col*cell, origin + (col+1)*cell)` east and the analogous
/// north interval, stored row-major with rows increasing northward.
#[derive(Debug, Clone)]
pub struct DistanceField {
    origin: MapPoint,
    cell_size: f64,
    width: u32,
    height: u32,
    values: Vec<f64>,
}

impl DistanceField {
    /// Assembles a field from raw parts, enforcing the same invariants
    /// the builder and the MCDF reader guarantee.
    pub fn from_parts(
        origin: MapPoint,
        cell_size: f64,
        width: u32,
        height: u32,
        values: Vec<f64>,
    ) -> Result<DistanceField, FieldError> {
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(FieldError::BadCellSize(cell_size));
        }
        if values.len() != width as usize * height as usize || values.is_empty() {
            return Err(FieldError::Format(format!(
                "{} values for {width}x{height} grid",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(FieldError::Format(
                "distances must be finite and non-negative".into(),
            ));
        }
        Ok(DistanceField {
            origin,
            cell_size,
            width,
            height,
            values,
        })
    }

    pub fn origin(&self) -> MapPoint {
        self.origin
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cell_center(&self, row: u32, col: u32) -> MapPoint {
        MapPoint {
            e: self.origin.e + (col as f64 + 0.5) * self.cell_size,
            n: self.origin.n + (row as f64 + 0.5) * self.cell_size,
        }
    }

    /// Nearest-edge distance at `p`. Total: points outside the grid get the
    /// clamped boundary cell's value plus the distance to that cell's
    /// center, a conservative overestimate that keeps far-out particles at
    /// low but finite weight.
    pub fn lookup(&self, p: MapPoint) -> f64 {
        let cf = (p.e - self.origin.e) / self.cell_size;
        let rf = (p.n - self.origin.n) / self.cell_size;
        let col = cf.floor();
        let row = rf.floor();
        if col >= 0.0 && row >= 0.0 && col < self.width as f64 && row < self.height as f64 {
            return self.values[row as usize * self.width as usize + col as usize];
        }
        let col = (col.max(0.0) as u32).min(self.width - 1);
        let row = (row.max(0.0) as u32).min(self.height - 1);
        let center = self.cell_center(row, col);
        self.values[row as usize * self.width as usize + col as usize] + p.distance_to(center)
    }

    pub fn write_mcdf<W: Write>(&self, mut w: W) -> Result<(), FieldError> {
        w.write_all(&MCDF_MAGIC)?;
        w.write_all(&MCDF_VERSION.to_le_bytes())?;
        w.write_all(&self.origin.e.to_le_bytes())?;
        w.write_all(&self.origin.n.to_le_bytes())?;
        w.write_all(&self.cell_size.to_le_bytes())?;
        w.write_all(&self.width.to_le_bytes())?;
        w.write_all(&self.height.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.values.len() * 4);
        for &v in &self.values {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_mcdf<R: Read>(mut r: R) -> Result<DistanceField, FieldError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != MCDF_MAGIC {
            return Err(FieldError::Format("wrong magic bytes".into()));
        }
        let mut u32buf = [0u8; 4];
        let mut f64buf = [0u8; 8];
        r.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != MCDF_VERSION {
            return Err(FieldError::Format(format!(
                "unsupported version {version}"
            )));
        }
        r.read_exact(&mut f64buf)?;
        let e = f64::from_le_bytes(f64buf);
        r.read_exact(&mut f64buf)?;
        let n = f64::from_le_bytes(f64buf);
        r.read_exact(&mut f64buf)?;
        let cell_size = f64::from_le_bytes(f64buf);
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(FieldError::Format(format!("bad cell size {cell_size}")));
        }
        r.read_exact(&mut u32buf)?;
        let width = u32::from_le_bytes(u32buf);
        r.read_exact(&mut u32buf)?;
        let height = u32::from_le_bytes(u32buf);
        let count = width as u64 * height as u64;
        if count == 0 || count > DEFAULT_CELL_BUDGET {
            return Err(FieldError::Format(format!(
                "implausible grid dimensions {width}x{height}"
            )));
        }
        let mut raw = vec![0u8; count as usize * 4];
        r.read_exact(&mut raw)?;
        let mut values = Vec::with_capacity(count as usize);
        for chunk in raw.chunks_exact(4) {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !(v.is_finite() && v >= 0.0) {
                return Err(FieldError::Format(format!("invalid cell value {v}")));
            }
            values.push(v as f64);
        }
        Ok(DistanceField {
            origin: MapPoint { e, n },
            cell_size,
            width,
            height,
            values,
        })
    }
}

/// Rasterizes the exact nearest-edge distance over `bounds` at `cell_size`
/// pitch, with the default cell budget.
pub fn build_distance_field(
    g: &RoadGraph,
    bounds: Bounds,
    cell_size: f64,
) -> Result<DistanceField, FieldError> {
    build_distance_field_with_budget(g, bounds, cell_size, DEFAULT_CELL_BUDGET)
}

pub fn build_distance_field_with_budget(
    g: &RoadGraph,
    bounds: Bounds,
    cell_size: f64,
    cell_budget: u64,
) -> Result<DistanceField, FieldError> {
    if g.segments().is_empty() {
        return Err(FieldError::EmptyGraph);
    }
    if !(cell_size.is_finite() && cell_size > 0.0) {
        return Err(FieldError::BadCellSize(cell_size));
    }
    if !(bounds.max.e > bounds.min.e && bounds.max.n > bounds.min.n) {
        return Err(FieldError::DegenerateBounds);
    }
    let width = ((bounds.max.e - bounds.min.e) / cell_size).ceil().max(1.0) as u64;
    let height = ((bounds.max.n - bounds.min.n) / cell_size).ceil().max(1.0) as u64;
    if width * height > cell_budget {
        return Err(FieldError::CellBudget {
            width,
            height,
            budget: cell_budget,
        });
    }
    let index = SegmentIndex::new(g.segments(), SegmentIndex::DEFAULT_TILE_SIZE_M.max(cell_size))?;
    let origin = bounds.min;
    let width = width as u32;
    let height = height as u32;

    let mut values = vec![0.0f64; width as usize * height as usize];
    values
        .par_chunks_mut(width as usize)
        .enumerate()
        .for_each(|(row, out)| {
            let n = origin.n + (row as f64 + 0.5) * cell_size;
            for (col, slot) in out.iter_mut().enumerate() {
                let e = origin.e + (col as f64 + 0.5) * cell_size;
                *slot = index.nearest_distance(MapPoint { e, n });
            }
        });

    Ok(DistanceField {
        origin,
        cell_size,
        width,
        height,
        values,
    })
}
