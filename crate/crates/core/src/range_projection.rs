//! Spherical front-view range images and label backprojection.
//!
//! A 3D cloud maps to a fixed 128x512 image: azimuth selects the column at
//! 0.35 degrees per bin, inclination selects the row by uniform binning
//! over the sensor's vertical span. Where two points land on one pixel the
//! nearer survives, preserving occluding geometry. Per-pixel labels are
//! mapped back to the surviving source points through the stored back-
//! references.

use thiserror::Error;

use crate::measurement_model::PointClass;

pub const IMAGE_ROWS: usize = 128;
pub const IMAGE_COLS: usize = 512;
pub const PIXELS: usize = IMAGE_ROWS * IMAGE_COLS;

#[derive(Debug, Error)]
pub enum ProjectionError {
    #[error("point at the sensor origin has no direction")]
    DegeneratePoint,
    #[error("mask has {got} entries, image needs {PIXELS}")]
    MaskDimensions { got: usize },
    #[error("invalid field of view: {0}")]
    InvalidFov(String),
}

/// One LIDAR return in the sensor frame (x forward, y left, z up).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CloudPoint3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
    pub reflectivity: f64,
}

/// Spherical coordinates: `theta` is inclination from the +z axis in
/// [0, pi], `phi` azimuth in (-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalCoord {
    pub r: f64,
    pub theta: f64,
    pub phi: f64,
}

/// Sensor geometry for projection. The image size itself is fixed at
/// 128x512; the field of view controls which directions land where.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FovConfig {
    /// Total azimuth coverage, centered on the +x axis, degrees.
    pub azimuth_span_deg: f64,
    /// Degrees of azimuth per column.
    pub azimuth_res_deg: f64,
    /// Lowest beam altitude (negative is below horizontal), degrees.
    pub min_alt_deg: f64,
    /// Highest beam altitude, degrees.
    pub max_alt_deg: f64,
}

impl Default for FovConfig {
    fn default() -> Self {
        FovConfig {
            azimuth_span_deg: 180.0,
            azimuth_res_deg: 0.35,
            min_alt_deg: -22.5,
            max_alt_deg: 22.5,
        }
    }
}

impl FovConfig {
    pub fn validate(&self) -> Result<(), ProjectionError> {
        if !(self.azimuth_span_deg > 0.0 && self.azimuth_span_deg <= 360.0) {
            return Err(ProjectionError::InvalidFov(format!(
                "azimuth span {} deg",
                self.azimuth_span_deg
            )));
        }
        if !(self.azimuth_res_deg > 0.0) {
            return Err(ProjectionError::InvalidFov(format!(
                "azimuth resolution {} deg",
                self.azimuth_res_deg
            )));
        }
        if !(self.max_alt_deg > self.min_alt_deg) {
            return Err(ProjectionError::InvalidFov(format!(
                "vertical span [{}, {}] deg",
                self.min_alt_deg, self.max_alt_deg
            )));
        }
        Ok(())
    }
}

/// Fixed-size multi-channel range image with per-pixel back-references
/// into the source cloud.
#[derive(Debug, Clone)]
pub struct RangeImage {
    pub range: Vec<f64>,
    pub intensity: Vec<f64>,
    pub reflectivity: Vec<f64>,
    pub point_index: Vec<Option<u32>>,
}

impl RangeImage {
    fn empty() -> Self {
        RangeImage {
            range: vec![0.0; PIXELS],
            intensity: vec![0.0; PIXELS],
            reflectivity: vec![0.0; PIXELS],
            point_index: vec![None; PIXELS],
        }
    }

    pub fn occupied(&self, row: usize, col: usize) -> bool {
        self.point_index[row * IMAGE_COLS + col].is_some()
    }

    pub fn occupied_count(&self) -> usize {
        self.point_index.iter().filter(|p| p.is_some()).count()
    }
}

/// Converts a sensor-frame point to spherical coordinates.
pub fn to_spherical(p: CloudPoint3) -> Result<SphericalCoord, ProjectionError> {
    let r = (p.x * p.x + p.y * p.y + p.z * p.z).sqrt();
    if !(r > 0.0) {
        return Err(ProjectionError::DegeneratePoint);
    }
    Ok(SphericalCoord {
        r,
        theta: (p.z / r).clamp(-1.0, 1.0).acos(),
        phi: p.y.atan2(p.x),
    })
}

/// Inverse of [`to_spherical`] on the direction components.
pub fn spherical_to_cartesian(s: SphericalCoord) -> (f64, f64, f64) {
    let (sin_t, cos_t) = s.theta.sin_cos();
    let (sin_p, cos_p) = s.phi.sin_cos();
    (s.r * sin_t * cos_p, s.r * sin_t * sin_p, s.r * cos_t)
}

/// Pixel for a spherical direction, or None when the azimuth falls outside
/// the span. Bins are half-open with the final index clamped, so the span
/// edges remain in-image.
pub fn pixel_for(s: SphericalCoord, fov: &FovConfig) -> Option<(usize, usize)> {
    let half_span = (fov.azimuth_span_deg / 2.0).to_radians();
    if s.phi < -half_span || s.phi > half_span {
        return None;
    }
    let col = ((s.phi + half_span) / fov.azimuth_res_deg.to_radians()).floor();
    let col = (col.max(0.0) as usize).min(IMAGE_COLS - 1);
    let theta_min = (90.0 - fov.max_alt_deg).to_radians();
    let v_res = (fov.max_alt_deg - fov.min_alt_deg).to_radians() / IMAGE_ROWS as f64;
    let row = ((s.theta - theta_min) / v_res).floor();
    let row = (row.max(0.0) as usize).min(IMAGE_ROWS - 1);
    Some((row, col))
}

/// Projects a cloud onto the range image. Zero-range points and points
/// outside the azimuth span are dropped; pixel collisions keep the nearer
/// point.
pub fn project(cloud: &[CloudPoint3], fov: &FovConfig) -> Result<RangeImage, ProjectionError> {
    fov.validate()?;
    let mut img = RangeImage::empty();
    for (i, p) in cloud.iter().enumerate() {
        let Ok(s) = to_spherical(*p) else { continue };
        let Some((row, col)) = pixel_for(s, fov) else {
            continue;
        };
        let at = row * IMAGE_COLS + col;
        if img.point_index[at].is_some() && img.range[at] <= s.r {
            continue;
        }
        img.range[at] = s.r;
        img.intensity[at] = p.intensity;
        img.reflectivity[at] = p.reflectivity;
        img.point_index[at] = Some(i as u32);
    }
    Ok(img)
}

/// Transfers per-pixel mask labels back onto the source points through the
/// back-references. Points that did not survive projection (dropped, or
/// occluded in a collision) get the non-road label.
pub fn backproject_labels(
    img: &RangeImage,
    mask: &[bool],
    cloud_len: usize,
) -> Result<Vec<PointClass>, ProjectionError> {
    if mask.len() != PIXELS {
        return Err(ProjectionError::MaskDimensions { got: mask.len() });
    }
    let mut labels = vec![PointClass::NonRoad; cloud_len];
    for (at, idx) in img.point_index.iter().enumerate() {
        if let Some(i) = idx {
            if mask[at] {
                labels[*i as usize] = PointClass::Road;
            }
        }
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn pt(x: f64, y: f64, z: f64) -> CloudPoint3 {
        CloudPoint3 {
            x,
            y,
            z,
            intensity: 0.5,
            reflectivity: 0.25,
        }
    }

    #[test]
    fn forward_axis_point() {
        let s = to_spherical(pt(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(s.r, 1.0);
        assert_eq!(s.theta, FRAC_PI_2);
        assert_eq!(s.phi, 0.0);
    }

    #[test]
    fn pole_gets_phi_zero() {
        let s = to_spherical(pt(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(s.r, 1.0);
        assert_eq!(s.theta, 0.0);
        assert_eq!(s.phi, 0.0);
    }

    #[test]
    fn three_four_five_triangle() {
        let s = to_spherical(pt(3.0, 4.0, 0.0)).unwrap();
        assert_eq!(s.r, 5.0);
        assert_eq!(s.theta, FRAC_PI_2);
        assert_relative_eq!(s.phi, 0.9272952180016122, max_relative = 1e-15);
    }

    #[test]
    fn origin_point_is_degenerate() {
        assert!(matches!(
            to_spherical(pt(0.0, 0.0, 0.0)),
            Err(ProjectionError::DegeneratePoint)
        ));
    }

    #[test]
    fn spherical_round_trip() {
        let mut state = 11u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..10_000 {
            let p = pt(
                (next() - 0.5) * 200.0,
                (next() - 0.5) * 200.0,
                (next() - 0.5) * 60.0,
            );
            let s = to_spherical(p).unwrap();
            assert!(s.theta >= 0.0 && s.theta <= PI);
            assert!(s.phi > -PI && s.phi <= PI || s.phi == -PI);
            let (x, y, z) = spherical_to_cartesian(s);
            let err = ((x - p.x).powi(2) + (y - p.y).powi(2) + (z - p.z).powi(2)).sqrt();
            assert!(err <= 1e-9 * s.r.max(1.0), "err {err} at r {}", s.r);
        }
    }

    #[test]
    fn empty_cloud_projects_to_empty_image() {
        let img = project(&[], &FovConfig::default()).unwrap();
        assert_eq!(img.occupied_count(), 0);
        assert!(img.range.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn dead_ahead_mid_elevation_pixel() {
        let img = project(&[pt(10.0, 0.0, 0.0)], &FovConfig::default()).unwrap();
        assert_eq!(img.occupied_count(), 1);
        // phi = 0 falls in column floor(90/0.35) = 257; theta = 90 deg
        // falls exactly at row 64.
        assert!(img.occupied(64, 257));
        assert_eq!(img.point_index[64 * IMAGE_COLS + 257], Some(0));
        assert_relative_eq!(img.range[64 * IMAGE_COLS + 257], 10.0);
    }

    #[test]
    fn collision_keeps_nearer_point() {
        // Second point shares the pixel but sits 4 m farther out.
        let phi = 0.1f64.to_radians();
        let far = pt(9.0, 9.0 * phi.tan(), 0.0);
        let near = pt(5.0, 0.0, 0.0);
        let img = project(&[far, near], &FovConfig::default()).unwrap();
        assert_eq!(img.occupied_count(), 1);
        let at = 64 * IMAGE_COLS + 257;
        assert_eq!(img.point_index[at], Some(1));
        assert_relative_eq!(img.range[at], 5.0);
        // Insertion order must not matter.
        let img2 = project(&[near, far], &FovConfig::default()).unwrap();
        assert_eq!(img2.point_index[at], Some(0));
        assert_relative_eq!(img2.range[at], 5.0);
    }

    #[test]
    fn behind_sensor_is_dropped() {
        let img = project(&[pt(-5.0, 0.1, 0.0)], &FovConfig::default()).unwrap();
        assert_eq!(img.occupied_count(), 0);
    }

    #[test]
    fn column_binning_is_monotone_in_phi() {
        let fov = FovConfig::default();
        let mut prev_col = 0usize;
        for i in 0..=1000 {
            let phi = -FRAC_PI_2 + i as f64 / 1000.0 * PI;
            let s = SphericalCoord { r: 1.0, theta: FRAC_PI_2, phi };
            let (_, col) = pixel_for(s, &fov).unwrap();
            assert!(col >= prev_col, "column regressed at phi {phi}");
            prev_col = col;
        }
        assert_eq!(prev_col, IMAGE_COLS - 1);
    }

    #[test]
    fn vertical_span_edges_clamp_into_image() {
        let fov = FovConfig::default();
        // 30 degrees above horizontal is beyond max_alt: clamps to row 0.
        let high = SphericalCoord { r: 1.0, theta: 60f64.to_radians(), phi: 0.0 };
        assert_eq!(pixel_for(high, &fov).unwrap().0, 0);
        let low = SphericalCoord { r: 1.0, theta: 140f64.to_radians(), phi: 0.0 };
        assert_eq!(pixel_for(low, &fov).unwrap().0, IMAGE_ROWS - 1);
    }

    #[test]
    fn backprojection_applies_mask_through_back_references() {
        let cloud = [pt(10.0, 0.0, 0.0), pt(10.0, 3.0, 1.0), pt(-4.0, 0.0, 0.0)];
        let img = project(&cloud, &FovConfig::default()).unwrap();
        assert_eq!(img.occupied_count(), 2);

        let all_road = vec![true; PIXELS];
        let labels = backproject_labels(&img, &all_road, cloud.len()).unwrap();
        assert_eq!(labels[0], PointClass::Road);
        assert_eq!(labels[1], PointClass::Road);
        // Dropped (behind sensor): never referenced, stays non-road.
        assert_eq!(labels[2], PointClass::NonRoad);

        let none_road = vec![false; PIXELS];
        let labels = backproject_labels(&img, &none_road, cloud.len()).unwrap();
        assert!(labels.iter().all(|&c| c == PointClass::NonRoad));
    }

    #[test]
    fn mask_dimension_mismatch_is_error() {
        let img = project(&[], &FovConfig::default()).unwrap();
        assert!(matches!(
            backproject_labels(&img, &[true; 100], 0),
            Err(ProjectionError::MaskDimensions { got: 100 })
        ));
    }

    #[test]
    fn occupancy_never_exceeds_cloud_and_back_references_unique() {
        let mut cloud = Vec::new();
        let mut state = 77u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..5000 {
            cloud.push(pt(
                next() * 60.0 + 0.1,
                (next() - 0.5) * 80.0,
                (next() - 0.5) * 20.0,
            ));
        }
        let img = project(&cloud, &FovConfig::default()).unwrap();
        assert!(img.occupied_count() <= cloud.len());
        let mut seen = std::collections::HashSet::new();
        for idx in img.point_index.iter().flatten() {
            assert!(seen.insert(*idx), "duplicate back-reference {idx}");
            assert!((*idx as usize) < cloud.len());
        }
    }

    #[test]
    fn invalid_fov_is_rejected() {
        let mut fov = FovConfig::default();
        fov.azimuth_res_deg = 0.0;
        assert!(project(&[], &fov).is_err());
        let mut fov = FovConfig::default();
        fov.min_alt_deg = 10.0;
        fov.max_alt_deg = -10.0;
        assert!(project(&[], &fov).is_err());
    }
}
