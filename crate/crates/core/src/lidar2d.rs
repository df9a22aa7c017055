//! 3D point cloud → 2D range scan, obstacle flagging and payload sizes.
//!
//! Each azimuth bin keeps the closest return among points inside a height
//! band. Packed formats are little-endian `f32`: a cloud is (r, θ, z) triples
//! (12 bytes per point), a scan is one range per bin (4 bytes per bin) with
//! `f32::MAX` marking bins without a return.

use std::f64::consts::PI;

use thiserror::Error;

pub const NO_RETURN: f32 = f32::MAX;
pub const SCAN_BYTES_PER_BIN: usize = 4;
pub const CLOUD_BYTES_PER_POINT: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LidarError {
    #[error("bin count must be at least 1")]
    NoBins,
    #[error("height band is empty: [{0}, {1}]")]
    EmptyBand(f64, f64),
    #[error("invalid point {index}: {reason}")]
    BadPoint { index: usize, reason: &'static str },
    #[error("packed data length {0} is not a multiple of {1}")]
    BadLength(usize, usize),
    #[error("line {line}: {msg}")]
    Csv { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub r: f64,
    /// Azimuth in [−π, π).
    pub theta: f64,
    pub z: f64,
}

/// Wraps an azimuth into [−π, π).
pub fn wrap_azimuth(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud3D {
    points: Vec<Point>,
}

impl PointCloud3D {
    pub fn new(points: Vec<Point>) -> Result<Self, LidarError> {
        for (index, p) in points.iter().enumerate() {
            if !(p.r.is_finite() && p.theta.is_finite() && p.z.is_finite()) {
                return Err(LidarError::BadPoint { index, reason: "non-finite" });
            }
            if p.r < 0.0 {
                return Err(LidarError::BadPoint { index, reason: "negative range" });
            }
        }
        let points = points
            .into_iter()
            .map(|p| Point {
                theta: wrap_azimuth(p.theta),
                ..p
            })
            .collect();
        Ok(Self { points })
    }

    pub fn from_cartesian(xyz: &[[f64; 3]]) -> Result<Self, LidarError> {
        Self::new(
            xyz.iter()
                .map(|&[x, y, z]| Point {
                    r: x.hypot(y),
                    theta: y.atan2(x),
                    z,
                })
                .collect(),
        )
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Parses `r,theta,z` lines. Blank lines, `#` comments and a non-numeric
    /// header line are skipped.
    pub fn from_csv(text: &str) -> Result<Self, LidarError> {
        let mut points = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed: Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
            match parsed {
                Ok(v) if v.len() == 3 => points.push(Point {
                    r: v[0],
                    theta: v[1],
                    z: v[2],
                }),
                Ok(v) => {
                    return Err(LidarError::Csv {
                        line: i + 1,
                        msg: format!("expected 3 fields, found {}", v.len()),
                    })
                }
                Err(_) if points.is_empty() && i == 0 => continue,
                Err(e) => {
                    return Err(LidarError::Csv {
                        line: i + 1,
                        msg: e.to_string(),
                    })
                }
            }
        }
        Self::new(points)
    }

    pub fn from_packed(bytes: &[u8]) -> Result<Self, LidarError> {
        if bytes.len() % CLOUD_BYTES_PER_POINT != 0 {
            return Err(LidarError::BadLength(bytes.len(), CLOUD_BYTES_PER_POINT));
        }
        let f = |b: &[u8]| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64;
        Self::new(
            bytes
                .chunks_exact(CLOUD_BYTES_PER_POINT)
                .map(|c| Point {
                    r: f(&c[0..4]),
                    theta: f(&c[4..8]),
                    z: f(&c[8..12]),
                })
                .collect(),
        )
    }

    pub fn to_packed(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.points.len() * CLOUD_BYTES_PER_POINT);
        for p in &self.points {
            for v in [p.r, p.theta, p.z] {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scan2D {
    ranges: Vec<Option<f64>>,
    obstacle_threshold: f64,
}

pub const DEFAULT_OBSTACLE_THRESHOLD: f64 = 0.5;

impl Scan2D {
    pub fn new(ranges: Vec<Option<f64>>, obstacle_threshold: f64) -> Result<Self, LidarError> {
        if ranges.is_empty() {
            return Err(LidarError::NoBins);
        }
        Ok(Self {
            ranges,
            obstacle_threshold,
        })
    }

    pub fn with_obstacle_threshold(mut self, threshold: f64) -> Self {
        self.obstacle_threshold = threshold;
        self
    }

    pub fn ranges(&self) -> &[Option<f64>] {
        &self.ranges
    }

    pub fn n_bins(&self) -> usize {
        self.ranges.len()
    }

    pub fn obstacle_threshold(&self) -> f64 {
        self.obstacle_threshold
    }

    pub fn to_packed(&self) -> Vec<u8> {
        self.ranges
            .iter()
            .flat_map(|r| r.map_or(NO_RETURN, |v| v as f32).to_le_bytes())
            .collect()
    }

    pub fn from_packed(bytes: &[u8], obstacle_threshold: f64) -> Result<Self, LidarError> {
        if bytes.len() % SCAN_BYTES_PER_BIN != 0 {
            return Err(LidarError::BadLength(bytes.len(), SCAN_BYTES_PER_BIN));
        }
        let ranges = bytes
            .chunks_exact(SCAN_BYTES_PER_BIN)
            .map(|c| {
                let v = f32::from_le_bytes(c.try_into().expect("4 bytes"));
                (v != NO_RETURN).then_some(v as f64)
            })
            .collect();
        Self::new(ranges, obstacle_threshold)
    }
}

pub fn bin_index(theta: f64, n_bins: usize) -> usize {
    let frac = (wrap_azimuth(theta) + PI) / (2.0 * PI);
    ((frac * n_bins as f64).floor() as usize).min(n_bins - 1)
}

/// Closest return per azimuth bin among points with `z_lo <= z <= z_hi`.
pub fn project(cloud: &PointCloud3D, n_bins: usize, z_band: (f64, f64)) -> Result<Scan2D, LidarError> {
    if n_bins == 0 {
        return Err(LidarError::NoBins);
    }
    let (lo, hi) = z_band;
    if !(lo < hi) {
        return Err(LidarError::EmptyBand(lo, hi));
    }
    let mut ranges: Vec<Option<f64>> = vec![None; n_bins];
    for p in cloud.points().iter().filter(|p| p.z >= lo && p.z <= hi) {
        let slot = &mut ranges[bin_index(p.theta, n_bins)];
        if slot.map_or(true, |r| p.r < r) {
            *slot = Some(p.r);
        }
    }
    Scan2D::new(ranges, DEFAULT_OBSTACLE_THRESHOLD)
}

/// Bins whose range is strictly below the obstacle threshold, by bin index.
pub fn flag_obstacles(scan: &Scan2D) -> Vec<(usize, f64)> {
    scan.ranges
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.filter(|&r| r < scan.obstacle_threshold).map(|r| (i, r)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PayloadSizes {
    pub scan_bytes: usize,
    pub cloud_bytes: usize,
    /// 1 − scan/cloud; `None` when the cloud is empty.
    pub reduction: Option<f64>,
}

pub fn payload_sizes(scan: &Scan2D, cloud: &PointCloud3D) -> PayloadSizes {
    let scan_bytes = scan.n_bins() * SCAN_BYTES_PER_BIN;
    let cloud_bytes = cloud.len() * CLOUD_BYTES_PER_POINT;
    PayloadSizes {
        scan_bytes,
        cloud_bytes,
        reduction: (cloud_bytes > 0).then(|| 1.0 - scan_bytes as f64 / cloud_bytes as f64),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(r: f64, deg: f64, z: f64) -> Point {
        Point {
            r,
            theta: deg.to_radians(),
            z,
        }
    }

    #[test]
    fn singleton_and_min() {
        let cloud = PointCloud3D::new(vec![pt(2.0, 0.0, 0.1)]).unwrap();
        let scan = project(&cloud, 360, (0.0, 1.0)).unwrap();
        let zero = bin_index(0.0, 360);
        assert_eq!(zero, 180);
        assert_eq!(scan.ranges()[zero], Some(2.0));
        assert_eq!(scan.ranges().iter().filter(|r| r.is_some()).count(), 1);

        let cloud = PointCloud3D::new(vec![pt(2.0, 0.0, 0.1), pt(3.0, 0.0, 0.5)]).unwrap();
        assert_eq!(project(&cloud, 360, (0.0, 1.0)).unwrap().ranges()[zero], Some(2.0));
    }

    #[test]
    fn out_of_band_ignored() {
        let cloud = PointCloud3D::new(vec![pt(1.0, 10.0, 2.0), pt(0.2, 10.0, -1.0)]).unwrap();
        let scan = project(&cloud, 36, (0.0, 1.0)).unwrap();
        assert!(scan.ranges().iter().all(Option::is_none));
    }

    #[test]
    fn obstacles_strict_threshold() {
        let mut ranges = vec![None; 8];
        ranges[2] = Some(0.4);
        ranges[5] = Some(0.5);
        ranges[7] = Some(3.0);
        let scan = Scan2D::new(ranges, 0.5).unwrap();
        assert_eq!(flag_obstacles(&scan), vec![(2, 0.4)]);
        let empty = Scan2D::new(vec![None; 4], 0.5).unwrap();
        assert!(flag_obstacles(&empty).is_empty());
    }

    #[test]
    fn payload_arithmetic() {
        let scan = Scan2D::new(vec![None; 360], 0.5).unwrap();
        let cloud = PointCloud3D::new(vec![pt(1.0, 0.0, 0.0); 10_000]).unwrap();
        let s = payload_sizes(&scan, &cloud);
        assert_eq!((s.scan_bytes, s.cloud_bytes), (1440, 120_000));
        assert!((s.reduction.unwrap() - 0.988).abs() < 1e-12);
        let small = PointCloud3D::new(vec![pt(1.0, 0.0, 0.0); 360]).unwrap();
        assert_eq!(payload_sizes(&scan, &small).cloud_bytes, 4320);
        assert_eq!(payload_sizes(&scan, &PointCloud3D::default()).reduction, None);
    }

    #[test]
    fn packed_roundtrips() {
        let cloud = PointCloud3D::new(vec![pt(1.5, 30.0, 0.25), pt(7.0, -170.0, -0.5)]).unwrap();
        let back = PointCloud3D::from_packed(&cloud.to_packed()).unwrap();
        assert_eq!(back.len(), 2);
        assert!((back.points()[0].r - 1.5).abs() < 1e-6);
        let scan = project(&cloud, 12, (-1.0, 1.0)).unwrap();
        let bytes = scan.to_packed();
        assert_eq!(bytes.len(), 48);
        let back = Scan2D::from_packed(&bytes, 0.5).unwrap();
        assert_eq!(back.ranges().iter().filter(|r| r.is_some()).count(), 2);
        assert!(PointCloud3D::from_packed(&[0; 13]).is_err());
    }

    #[test]
    fn csv_input() {
        let cloud = PointCloud3D::from_csv("r,theta,z\n1.0,0.5,0.1\n\n# note\n2.0,-0.5,0.2\n").unwrap();
        assert_eq!(cloud.len(), 2);
        assert!(matches!(PointCloud3D::from_csv("1,2\n"), Err(LidarError::Csv { line: 1, .. })));
        assert!(matches!(PointCloud3D::from_csv("1,2,3\nx,y,z\n"), Err(LidarError::Csv { line: 2, .. })));
        assert!(PointCloud3D::from_csv("-1,0,0\n").is_err());
    }

    #[test]
    fn bins_cover_circle() {
        assert_eq!(bin_index(-PI, 4), 0);
        assert_eq!(bin_index(PI - 1e-12, 4), 3);
        assert_eq!(bin_index(PI, 4), 0);
        assert!(project(&PointCloud3D::default(), 0, (0.0, 1.0)).is_err());
        assert!(project(&PointCloud3D::default(), 4, (1.0, 1.0)).is_err());
    }
}
