#![allow(dead_code)]

use evpool::battery::{BatteryModel, BatteryParams};
use evpool::demand::{
    availability_requirement, calibrate_lambda, demand_profile, synth_requests, ArrivalProfile,
    CalibrationSetup, Request,
};
use evpool::network::{generate_grid, Arc, Node, NodeId, RoadNetwork, Station, StationId};
use evpool::schedule::AvailabilityFunction;
use evpool::sim::{run, Method, ScenarioConfig};

pub const DAY_START: f64 = 5.0 * 3600.0;
pub const DAY_HOURS: usize = 16;
pub const FLEET: u32 = 20;
pub const EDGE_TIME: f64 = 75.0;
pub const RANGE_KM: f64 = 160.0;

/// Bidirectional path `0 - 1 - ... - n-1`.
pub fn path(n: u32, edge_time: f64, edge_distance: f64) -> RoadNetwork {
    let nodes = (0..n)
        .map(|i| Node {
            id: NodeId(i),
            x: i as f64 * edge_distance,
            y: 0.0,
        })
        .collect();
    let mut arcs = Vec::new();
    for i in 0..n - 1 {
        for (a, b) in [(i, i + 1), (i + 1, i)] {
            arcs.push(Arc {
                from: NodeId(a),
                to: NodeId(b),
                travel_time: edge_time,
                distance: edge_distance,
            });
        }
    }
    RoadNetwork::new(nodes, arcs, Vec::new()).unwrap()
}

/// 10x10 grid with four capacity-5 stations, 500 m blocks driven in `EDGE_TIME`.
pub fn city() -> RoadNetwork {
    let stations = [22, 27, 72, 77]
        .iter()
        .enumerate()
        .map(|(i, &n)| Station {
            id: StationId(i as u32),
            node: NodeId(n),
            capacity: 5,
        })
        .collect();
    generate_grid(10, 10, EDGE_TIME, 500.0)
        .unwrap()
        .with_stations(stations)
        .unwrap()
}

pub fn city_requests(net: &RoadNetwork, seed: u64) -> Vec<Request> {
    synth_requests(
        net,
        &ArrivalProfile::rush_hour(DAY_START, DAY_HOURS, 2000.0),
        seed,
    )
}

pub fn city_base(seed: u64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig {
        seed,
        fleet_size: FLEET,
        vehicle_capacity: 10,
        ..ScenarioConfig::default()
    };
    cfg.battery = BatteryModel::new(BatteryParams {
        range_km: RANGE_KM,
        ..BatteryParams::default()
    })
    .unwrap();
    cfg.pooling.max_riders = 4;
    cfg
}

/// Configuration for `method`, with the discharge estimate taken from the
/// combustion run and lambda calibrated on the day's demand profile.
pub fn city_config(
    net: &RoadNetwork,
    requests: &[Request],
    seed: u64,
    method: Method,
    ice_km: f64,
) -> ScenarioConfig {
    let base = city_base(seed);
    if method == Method::Ice {
        return ScenarioConfig { method, ..base };
    }
    let minutes = DAY_HOURS as f64 * 60.0;
    let q_est = ice_km / FLEET as f64 / minutes / RANGE_KM * 1.1;
    let battery = BatteryModel::new(BatteryParams {
        range_km: RANGE_KM,
        q_est,
        ..BatteryParams::default()
    })
    .unwrap();
    let blocks = DAY_HOURS * 2;
    let profile = demand_profile(requests, |a, b| net.tt(a, b), 1800.0, DAY_START, blocks).unwrap();
    let setup = CalibrationSetup {
        block: 1800.0,
        period: base.period,
        horizon_periods: (DAY_HOURS as f64 * 3600.0 / base.period) as usize,
        availability: AvailabilityFunction::new(base.ramp_slope, base.charge_duration),
    };
    let lambda = calibrate_lambda(
        FLEET,
        &profile,
        &battery,
        net.total_capacity(),
        0.05,
        &setup,
    )
    .unwrap();
    let requirement = availability_requirement(FLEET, &profile, lambda, 1800.0);
    ScenarioConfig {
        method,
        battery,
        requirement: Some(requirement),
        ..base
    }
}

/// Runs every method of the end-to-end comparison on one seed.
pub fn city_runs(
    seed: u64,
) -> (
    RoadNetwork,
    Vec<Request>,
    Vec<(ScenarioConfig, evpool::sim::SimOutput)>,
) {
    let net = city();
    let requests = city_requests(&net, seed);
    let ice_cfg = city_config(&net, &requests, seed, Method::Ice, 0.0);
    let ice = run(&ice_cfg, &net, &requests).unwrap();
    let km = ice.metrics.total_distance_km;
    let mut out = vec![(ice_cfg, ice)];
    for m in [Method::Heuristic, Method::Benchmark] {
        let cfg = city_config(&net, &requests, seed, m, km);
        let o = run(&cfg, &net, &requests).unwrap();
        out.push((cfg, o));
    }
    (net, requests, out)
}
