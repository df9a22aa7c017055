//! Hand-derived expected values and cross-checks between independent routes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use twinbridge::bridge::Tier;
use twinbridge::experiment::{
    compare, delta_csv, parse_report_csv, run_scenario, sweep_agents, with_agents, Mode, DELTA_CSV_HEADER,
};
use twinbridge::geo::{gps_to_scene, haversine_distance, EarthModel, GeoPoint};
use twinbridge::mmcf::{measure_config, Candidate};
use twinbridge::scenario::Scenario;

fn scenario(name: &str) -> Scenario {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios", name].iter().collect();
    Scenario::load(&path).unwrap()
}

#[test]
fn haversine_hundredth_degree_diagonal() {
    // R·atan2 form evaluated at 40 digits
    let e = EarthModel::default();
    let a = GeoPoint::from_degrees(0.0, 0.0, 0.0).unwrap();
    let b = GeoPoint::from_degrees(0.01, 0.01, 0.0).unwrap();
    let d = haversine_distance(&a, &b, &e);
    assert!((d - 1572.533_729_286_32).abs() < 1e-6, "{d}");
}

#[test]
fn scene_offsets_of_hundredth_degree() {
    // R·(0.01·π/180) on both axes at the equator
    let e = EarthModel::default();
    let a = GeoPoint::from_degrees(0.0, 0.0, 0.0).unwrap();
    let b = GeoPoint::from_degrees(0.01, 0.01, 10.0).unwrap();
    for extent in [1.0, 1e12] {
        let s = gps_to_scene(&a, &b, 1.0, &e, extent).unwrap();
        assert!((s.x - 1111.949_266_445_587).abs() < 1e-6, "{s:?}");
        assert!((s.z - 1111.949_266_445_587).abs() < 1e-6, "{s:?}");
        assert_eq!(s.y, 10.0);
    }
}

#[test]
fn haversine_fixture_within_a_millimetre() {
    let e = EarthModel::default();
    let text = include_str!("data/haversine_oracle.csv");
    let mut n = 0;
    for line in text.lines().skip(1) {
        let f: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        let a = GeoPoint::from_degrees(f[0], f[1], 0.0).unwrap();
        let b = GeoPoint::from_degrees(f[2], f[3], 0.0).unwrap();
        let d = haversine_distance(&a, &b, &e);
        assert!((d - f[4]).abs() < 1e-3, "{line}: {d}");
        n += 1;
    }
    assert_eq!(n, 100);
}

/// Delta table recomputed from the two CSV texts by plain string handling.
#[test]
fn compare_matches_hand_computed_ratios_on_five_agents() {
    let sc = with_agents(&scenario("sweep.toml"), 5, 0);
    let a_csv = run_scenario(&sc, Mode::Prioritized).unwrap().report_csv();
    let b_csv = run_scenario(&sc, Mode::Baseline).unwrap().report_csv();

    let cells = |text: &str| -> BTreeMap<(String, String), f64> {
        text.lines()
            .skip(1)
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                ((f[3].to_string(), f[4].to_string()), f[5].parse().unwrap())
            })
            .collect()
    };
    let (ca, cb) = (cells(&a_csv), cells(&b_csv));

    let rows = compare(&parse_report_csv(&a_csv).unwrap(), &parse_report_csv(&b_csv).unwrap()).unwrap();
    let out = delta_csv(&rows);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some(DELTA_CSV_HEADER));
    let mut checked = 0;
    for l in lines {
        let f: Vec<&str> = l.split(',').collect();
        let key = (f[0].to_string(), f[1].to_string());
        let (x, y) = (ca[&key], cb[&key]);
        assert_eq!(f[2].parse::<f64>().unwrap(), x);
        assert_eq!(f[3].parse::<f64>().unwrap(), y);
        let rel: f64 = f[5].parse().unwrap();
        if x == y {
            assert_eq!(rel, 0.0);
        } else if y == 0.0 {
            assert!(rel.is_infinite() && rel.signum() == (x - y).signum());
        } else {
            let expect = (x - y) / y.abs();
            assert!((rel - expect).abs() <= 1e-12 * expect.abs().max(1.0), "{l}");
        }
        checked += 1;
    }
    assert_eq!(checked, ca.keys().filter(|k| cb.contains_key(*k)).count());

    // headline rows
    let p95 = ("tier:critical".to_string(), "latency_p95_ms".to_string());
    assert!(ca[&p95] < cb[&p95]);
}

#[test]
fn compare_of_identical_reports_is_zero() {
    let sc = with_agents(&scenario("sweep.toml"), 2, 3);
    let t = parse_report_csv(&run_scenario(&sc, Mode::Prioritized).unwrap().report_csv()).unwrap();
    assert!(compare(&t, &t).unwrap().iter().all(|r| r.rel == 0.0 && r.improvement == 0.0));
}

#[test]
fn sweep_is_composed_of_independent_runs() {
    let sc = scenario("sweep.toml");
    let (rows, reports) = sweep_agents(&sc, &[2, 3, 5], &[7]).unwrap();
    assert_eq!(rows.len(), 3);
    let mut offered = Vec::new();
    for ((row, (prio, base)), n) in rows.iter().zip(&reports).zip([2, 3, 5]) {
        let s = with_agents(&sc, n, 7);
        let p = run_scenario(&s, Mode::Prioritized).unwrap();
        let b = run_scenario(&s, Mode::Baseline).unwrap();
        assert_eq!(p.artifacts(), prio.artifacts());
        assert_eq!(b.artifacts(), base.artifacts());
        assert_eq!(row.agents, n);
        assert_eq!(row.p95_critical_prioritized, p.tier(Tier::Critical).latency().p95);
        offered.push(row.offered_bytes);
    }
    assert!(offered.windows(2).all(|w| w[0] < w[1]), "{offered:?}");
    assert!(sweep_agents(&sc, &[3, 2], &[0]).is_err());
}

#[test]
fn more_redundancy_trades_bandwidth_for_loss() {
    let sc = scenario("loss25.toml");
    let base = Candidate {
        redundancy: 1,
        shares_pct: sc.bridge.shares.map(|s| (s * 100.0).round() as u8),
        replay_depth: sc.bridge.replay_depth as u32,
        discovery_period_ms: (sc.discovery.period * 1000.0).round() as u32,
        batch: sc.bridge.batch as u16,
    };
    let r1 = measure_config(&base, &sc).unwrap();
    let r2 = measure_config(&Candidate { redundancy: 2, ..base }, &sc).unwrap();
    assert!(r2.loss <= r1.loss, "{r1:?} {r2:?}");
    assert!(r2.bandwidth >= r1.bandwidth, "{r1:?} {r2:?}");
}

#[test]
fn example_scenarios_load() {
    let dir: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios"].iter().collect();
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().and_then(|e| e.to_str()) == Some("toml") {
            Scenario::load(Path::new(&p)).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            n += 1;
        }
    }
    assert!(n >= 5);
}
