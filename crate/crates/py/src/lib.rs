//! Python bindings: scenario runs, geodesy, LiDAR projection, MMCF and envelopes.

use std::collections::BTreeMap;
use std::path::Path;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use twinbridge::bridge::{decode_envelope as decode, encode_envelope as encode, Tier};
use twinbridge::experiment::{self, Mode};
use twinbridge::geo::{haversine_distance, EarthModel, GeoPoint};
use twinbridge::lidar2d::{self, Point, PointCloud3D};
use twinbridge::mmcf::{self, MeasuredMetrics, MetricBounds, MmcfWeights};
use twinbridge::msgbus::{Message, MessageKind, TopicName};
use twinbridge::netsim::SimTime;
use twinbridge::scenario::Scenario;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn tier_from(name: &str) -> PyResult<Tier> {
    Tier::ALL
        .into_iter()
        .find(|t| t.name() == name)
        .ok_or_else(|| err(format!("unknown tier {name:?}")))
}

fn kind_from(name: &str) -> PyResult<MessageKind> {
    MessageKind::ALL
        .into_iter()
        .find(|k| format!("{k:?}").eq_ignore_ascii_case(name.replace('_', "").as_str()))
        .ok_or_else(|| err(format!("unknown message kind {name:?}")))
}

/// Great-circle distance in meters between two points given in degrees.
#[pyfunction]
fn haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> PyResult<f64> {
    let a = GeoPoint::from_degrees(lat1, lon1, 0.0).map_err(err)?;
    let b = GeoPoint::from_degrees(lat2, lon2, 0.0).map_err(err)?;
    Ok(haversine_distance(&a, &b, &EarthModel::default()))
}

/// Runs a scenario file; returns {artifact file name: CSV text}.
#[pyfunction]
#[pyo3(signature = (path, baseline = false, seed = None))]
fn run_scenario(path: &str, baseline: bool, seed: Option<u64>) -> PyResult<BTreeMap<String, String>> {
    let mut sc = Scenario::load(Path::new(path)).map_err(err)?;
    if let Some(s) = seed {
        sc.seed = s;
    }
    let mode = if baseline { Mode::Baseline } else { Mode::Prioritized };
    let report = experiment::run_scenario(&sc, mode).map_err(err)?;
    Ok(report.artifacts().into_iter().collect())
}

/// Closest in-band range per azimuth bin; points are (r, theta, z).
#[pyfunction]
#[pyo3(signature = (points, n_bins = 360, z_lo = -0.5, z_hi = 1.5))]
fn project_scan(points: Vec<(f64, f64, f64)>, n_bins: usize, z_lo: f64, z_hi: f64) -> PyResult<Vec<Option<f64>>> {
    let cloud = PointCloud3D::new(points.into_iter().map(|(r, theta, z)| Point { r, theta, z }).collect()).map_err(err)?;
    Ok(lidar2d::project(&cloud, n_bins, (z_lo, z_hi)).map_err(err)?.ranges().to_vec())
}

/// Weighted cost of (latency s, loss, compute s, bandwidth B/s) under
/// (l_min, l_max, p_min, p_max, tau_max, b_max) and (alpha, beta, gamma, delta).
#[pyfunction]
fn mmcf_cost(metrics: (f64, f64, f64, f64), bounds: (f64, f64, f64, f64, f64, f64), weights: (f64, f64, f64, f64)) -> PyResult<f64> {
    let m = MeasuredMetrics {
        latency: metrics.0,
        loss: metrics.1,
        compute: metrics.2,
        bandwidth: metrics.3,
    };
    let b = MetricBounds::new(bounds.0, bounds.1, bounds.2, bounds.3, bounds.4, bounds.5).map_err(err)?;
    let w = MmcfWeights::new(weights.0, weights.1, weights.2, weights.3).map_err(err)?;
    mmcf::mmcf(&m, &b, &w).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (topic, payload, tier = "standard", seq = 0, kind = "blob", time_us = 0))]
fn encode_envelope<'py>(
    py: Python<'py>,
    topic: &str,
    payload: Vec<u8>,
    tier: &str,
    seq: u64,
    kind: &str,
    time_us: u64,
) -> PyResult<Bound<'py, PyBytes>> {
    let msg = Message {
        topic: TopicName::new(topic).map_err(err)?,
        kind: kind_from(kind)?,
        payload,
        publish_time: SimTime(time_us),
    };
    let bytes = encode(&msg, tier_from(tier)?, seq).map_err(err)?;
    Ok(PyBytes::new(py, &bytes))
}

/// Decodes one frame into (topic, payload, tier, seq); raises on corruption.
#[pyfunction]
fn decode_envelope<'py>(py: Python<'py>, frame: &[u8]) -> PyResult<(String, Bound<'py, PyBytes>, &'static str, u64)> {
    let env = decode(frame).map_err(err)?;
    Ok((env.topic.to_string(), PyBytes::new(py, &env.payload), env.tier.name(), env.seq))
}

#[pymodule]
fn twinbridge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(haversine_m, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(project_scan, m)?)?;
    m.add_function(wrap_pyfunction!(mmcf_cost, m)?)?;
    m.add_function(wrap_pyfunction!(encode_envelope, m)?)?;
    m.add_function(wrap_pyfunction!(decode_envelope, m)?)?;
    Ok(())
}
