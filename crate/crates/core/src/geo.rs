//! Geodetic to scene-coordinate conversion and adaptive level-of-detail grids.
//!
//! Axis convention used throughout the crate: east → x, up → y, north → z.

use std::collections::BTreeSet;
use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Extent (m²) above which the great-circle method is used.
pub const DEFAULT_AREA_THRESHOLD_M2: f64 = 1_000_000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} rad outside [-pi/2, pi/2]")]
    Latitude(f64),
    #[error("longitude {0} rad outside [-pi, pi]")]
    Longitude(f64),
    #[error("altitude must be finite")]
    Altitude,
    #[error("earth radius and area threshold must be positive")]
    EarthModel,
    #[error("scale must be positive and finite, got {0}")]
    Scale(f64),
    #[error("critical cell {0:?} lies outside the grid")]
    CriticalOutOfGrid([usize; 3]),
}

/// A geodetic position. Angles in radians, altitude in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
    alt: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64, alt: f64) -> Result<Self, GeoError> {
        if !(lat.abs() <= FRAC_PI_2) {
            return Err(GeoError::Latitude(lat));
        }
        if !(lon.abs() <= PI) {
            return Err(GeoError::Longitude(lon));
        }
        if !alt.is_finite() {
            return Err(GeoError::Altitude);
        }
        Ok(Self { lat, lon, alt })
    }

    pub fn from_degrees(lat_deg: f64, lon_deg: f64, alt: f64) -> Result<Self, GeoError> {
        Self::new(lat_deg.to_radians(), lon_deg.to_radians(), alt)
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }

    pub fn alt(&self) -> f64 {
        self.alt
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarthModel {
    radius: f64,
    area_threshold: f64,
}

impl EarthModel {
    pub fn new(radius: f64, area_threshold: f64) -> Result<Self, GeoError> {
        if !(radius > 0.0 && radius.is_finite() && area_threshold > 0.0) {
            return Err(GeoError::EarthModel);
        }
        Ok(Self {
            radius,
            area_threshold,
        })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn area_threshold(&self) -> f64 {
        self.area_threshold
    }
}

impl Default for EarthModel {
    fn default() -> Self {
        Self {
            radius: EARTH_RADIUS_M,
            area_threshold: DEFAULT_AREA_THRESHOLD_M2,
        }
    }
}

/// Metric offset from a reference point, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalOffset {
    pub east: f64,
    pub up: f64,
    pub north: f64,
}

/// Position in scene units: `u = s * d` componentwise.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SceneCoord {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub scale: f64,
}

impl SceneCoord {
    pub fn from_offset(offset: LocalOffset, scale: f64) -> Self {
        Self {
            x: scale * offset.east,
            y: scale * offset.up,
            z: scale * offset.north,
            scale,
        }
    }
}

/// Which conversion [`gps_to_scene`] picked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConversionMethod {
    GreatCircle,
    TangentPlane,
}

/// Great-circle distance between two points on a sphere of radius `earth.radius()`.
pub fn haversine_distance(a: &GeoPoint, b: &GeoPoint, earth: &EarthModel) -> f64 {
    haversine_raw(a.lat, a.lon, b.lat, b.lon, earth.radius)
}

fn haversine_raw(lat1: f64, lon1: f64, lat2: f64, lon2: f64, radius: f64) -> f64 {
    let half_dlat = (lat2 - lat1) / 2.0;
    let half_dlon = (lon2 - lon1) / 2.0;
    let h = half_dlat.sin().powi(2) + lat1.cos() * lat2.cos() * half_dlon.sin().powi(2);
    // rounding can push h marginally past 1 for antipodal points
    let h = h.clamp(0.0, 1.0);
    2.0 * radius * h.sqrt().atan2((1.0 - h).sqrt())
}

/// Flat-earth offset of `target` relative to `reference`, using the reference
/// latitude for the east scale factor.
pub fn tangent_plane_offset(reference: &GeoPoint, target: &GeoPoint, earth: &EarthModel) -> LocalOffset {
    let r = earth.radius;
    LocalOffset {
        east: r * reference.lat.cos() * (target.lon - reference.lon),
        up: target.alt - reference.alt,
        north: r * (target.lat - reference.lat),
    }
}

/// Per-axis great-circle offset: east distance measured along the reference
/// parallel, north distance along the reference meridian, signs restored from
/// the coordinate differences.
pub fn great_circle_offset(reference: &GeoPoint, target: &GeoPoint, earth: &EarthModel) -> LocalOffset {
    let r = earth.radius;
    let mut east = haversine_raw(reference.lat, reference.lon, reference.lat, target.lon, r);
    let mut north = haversine_raw(reference.lat, reference.lon, target.lat, reference.lon, r);
    if target.lon < reference.lon {
        east = -east;
    }
    if target.lat < reference.lat {
        north = -north;
    }
    LocalOffset {
        east,
        up: target.alt - reference.alt,
        north,
    }
}

/// Picks the conversion method for an operating area of `extent_m2`.
pub fn select_method(extent_m2: f64, earth: &EarthModel) -> ConversionMethod {
    if extent_m2 > earth.area_threshold {
        ConversionMethod::GreatCircle
    } else {
        ConversionMethod::TangentPlane
    }
}

/// Converts a geodetic target into scene coordinates relative to `reference`.
///
/// `extent_m2` is the bounding-box area of the operating region; areas above
/// the earth model's threshold use the great-circle path, smaller ones the
/// tangent plane.
pub fn gps_to_scene(
    reference: &GeoPoint,
    target: &GeoPoint,
    scale: f64,
    earth: &EarthModel,
    extent_m2: f64,
) -> Result<SceneCoord, GeoError> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(GeoError::Scale(scale));
    }
    let offset = match select_method(extent_m2, earth) {
        ConversionMethod::GreatCircle => great_circle_offset(reference, target, earth),
        ConversionMethod::TangentPlane => tangent_plane_offset(reference, target, earth),
    };
    Ok(SceneCoord::from_offset(offset, scale))
}

/// Inverse of the tangent-plane branch of [`gps_to_scene`].
pub fn scene_to_gps_tangent(
    reference: &GeoPoint,
    scene: &SceneCoord,
    earth: &EarthModel,
) -> Result<GeoPoint, GeoError> {
    let r = earth.radius;
    let east = scene.x / scene.scale;
    let north = scene.z / scene.scale;
    let up = scene.y / scene.scale;
    GeoPoint::new(
        reference.lat + north / r,
        reference.lon + east / (r * reference.lat.cos()),
        reference.alt + up,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LodLevel {
    Low,
    Medium,
    High,
}

/// A uniform 3D grid of cubic cells with per-cell level of detail.
#[derive(Debug, Clone, PartialEq)]
pub struct LodGrid {
    dims: [usize; 3],
    cell_size: f64,
    cells: Vec<LodLevel>,
    critical: BTreeSet<[usize; 3]>,
    proximity_threshold: f64,
}

impl LodGrid {
    /// Creates a grid with every cell at [`LodLevel::Low`].
    pub fn new(
        dims: [usize; 3],
        cell_size: f64,
        critical: impl IntoIterator<Item = [usize; 3]>,
        proximity_threshold: f64,
    ) -> Result<Self, GeoError> {
        let critical: BTreeSet<_> = critical.into_iter().collect();
        if let Some(c) = critical
            .iter()
            .find(|c| c[0] >= dims[0] || c[1] >= dims[1] || c[2] >= dims[2])
        {
            return Err(GeoError::CriticalOutOfGrid(*c));
        }
        Ok(Self {
            dims,
            cell_size,
            cells: vec![LodLevel::Low; dims[0] * dims[1] * dims[2]],
            critical,
            proximity_threshold,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn critical(&self) -> &BTreeSet<[usize; 3]> {
        &self.critical
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn proximity_threshold(&self) -> f64 {
        self.proximity_threshold
    }

    pub fn level(&self, idx: [usize; 3]) -> LodLevel {
        self.cells[self.flat(idx)]
    }

    pub fn levels(&self) -> &[LodLevel] {
        &self.cells
    }

    pub fn count(&self, level: LodLevel) -> usize {
        self.cells.iter().filter(|l| **l == level).count()
    }

    fn flat(&self, [x, y, z]: [usize; 3]) -> usize {
        (x * self.dims[1] + y) * self.dims[2] + z
    }

    fn indices(&self) -> impl Iterator<Item = [usize; 3]> {
        let [nx, ny, nz] = self.dims;
        (0..nx).flat_map(move |x| (0..ny).flat_map(move |y| (0..nz).map(move |z| [x, y, z])))
    }
}

/// Euclidean distance in meters between two cell centers.
fn cell_distance(a: [usize; 3], b: [usize; 3], cell_size: f64) -> f64 {
    let d: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(&p, &q)| (p as f64 - q as f64).powi(2))
        .sum();
    d.sqrt() * cell_size
}

/// Assigns High to critical cells, Medium to cells closer than the proximity
/// threshold to any critical cell, and Low elsewhere.
pub fn assign_lod(grid: &LodGrid) -> LodGrid {
    let mut out = grid.clone();
    let critical: Vec<[usize; 3]> = grid.critical.iter().copied().collect();
    for idx in grid.indices() {
        let level = if grid.critical.contains(&idx) {
            LodLevel::High
        } else if critical
            .iter()
            .any(|c| cell_distance(idx, *c, grid.cell_size) < grid.proximity_threshold)
        {
            LodLevel::Medium
        } else {
            LodLevel::Low
        };
        let i = out.flat(idx);
        out.cells[i] = level;
    }
    out
}
