//! Ride requests, demand profiles and the operator's availability requirement.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::battery::BatteryModel;
use crate::network::{NetworkError, NodeId, RoadNetwork};
use crate::pooling::VehicleId;
use crate::schedule::heuristic::{solve_long_heuristic_with, HeuristicOptions};
use crate::schedule::long::{long_objective, LongInstance, LongVehicle};
use crate::schedule::{AvailabilityFunction, ChargeSchedule};
use crate::Seconds;

/// Length of a demand-profile block.
pub const DEFAULT_BLOCK: Seconds = 1800.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RequestId(pub u64);

impl fmt::Display for RequestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Request {
    pub id: RequestId,
    pub entry_time: Seconds,
    pub origin: NodeId,
    pub destination: NodeId,
}

/// Quality-of-service limits applied to every accepted rider.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QosPolicy {
    /// Longest allowed wait between entry and pickup.
    pub max_wait: Seconds,
    /// Longest allowed excess of (wait + ride) over the direct travel time.
    pub max_delay: Seconds,
}

impl Default for QosPolicy {
    fn default() -> Self {
        QosPolicy {
            max_wait: 300.0,
            max_delay: 600.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum DemandError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("{0}")]
    Validation(String),
    #[error("no requests to build a profile from")]
    EmptyInput,
    #[error("no lambda in [0, 1] admits a feasible charging schedule")]
    Infeasible,
}

#[derive(Debug, Serialize, Deserialize)]
struct RequestRow {
    request_id: u64,
    entry_time_s: f64,
    origin_node: u32,
    destination_node: u32,
}

const REQUEST_HEADER: [&str; 4] = [
    "request_id",
    "entry_time_s",
    "origin_node",
    "destination_node",
];

/// Reads `requests.csv`, validating nodes against `net`, sorted by entry time
/// (stable in file order).
pub fn load_requests(path: &Path, net: &RoadNetwork) -> Result<Vec<Request>, DemandError> {
    if std::fs::metadata(path).map_err(NetworkError::from)?.len() == 0 {
        return Ok(Vec::new());
    }
    let rows = crate::network::read_rows::<RequestRow>(path, &REQUEST_HEADER)?;
    let mut out = Vec::with_capacity(rows.len());
    for r in rows {
        let req = Request {
            id: RequestId(r.request_id),
            entry_time: r.entry_time_s,
            origin: NodeId(r.origin_node),
            destination: NodeId(r.destination_node),
        };
        for n in [req.origin, req.destination] {
            if !net.contains(n) {
                return Err(DemandError::Validation(format!(
                    "request {} references unknown node {n}",
                    req.id
                )));
            }
        }
        if req.origin == req.destination {
            return Err(DemandError::Validation(format!(
                "request {} has origin equal to destination",
                req.id
            )));
        }
        if !(req.entry_time >= 0.0) {
            return Err(DemandError::Validation(format!(
                "request {} has negative entry time",
                req.id
            )));
        }
        out.push(req);
    }
    out.sort_by(|a, b| a.entry_time.total_cmp(&b.entry_time));
    Ok(out)
}

pub fn save_requests(path: &Path, requests: &[Request]) -> Result<(), DemandError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| DemandError::Validation(e.to_string()))?;
    w.write_record(REQUEST_HEADER)
        .map_err(|e| DemandError::Validation(e.to_string()))?;
    for r in requests {
        w.write_record([
            r.id.0.to_string(),
            r.entry_time.to_string(),
            r.origin.0.to_string(),
            r.destination.0.to_string(),
        ])
        .map_err(|e| DemandError::Validation(e.to_string()))?;
    }
    w.flush().map_err(NetworkError::from)?;
    Ok(())
}

/// Piecewise-constant arrival rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalProfile {
    pub start: Seconds,
    pub period: Seconds,
    /// Mean arrivals per minute in each period.
    pub rates_per_minute: Vec<f64>,
}

impl ArrivalProfile {
    /// A morning and evening peak over a `hours`-long day starting at `start`,
    /// scaled so the expected request count is `total`.
    pub fn rush_hour(start: Seconds, hours: usize, total: f64) -> Self {
        let period = 1800.0;
        let n = hours * 2;
        let shape: Vec<f64> = (0..n)
            .map(|i| {
                let h = start / 3600.0 + (i as f64 + 0.5) / 2.0;
                let bump = |c: f64, w: f64| (-(h - c).powi(2) / (2.0 * w * w)).exp();
                0.08 + bump(8.5, 1.0) + bump(17.5, 1.2) + 0.15 * bump(13.0, 1.5)
            })
            .collect();
        let mass: f64 = shape.iter().sum::<f64>() * period / 60.0;
        ArrivalProfile {
            start,
            period,
            rates_per_minute: shape.iter().map(|s| s * total / mass).collect(),
        }
    }
}

/// Poisson arrivals per period with uniform origin/destination pairs.
pub fn synth_requests(net: &RoadNetwork, profile: &ArrivalProfile, seed: u64) -> Vec<Request> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes: Vec<NodeId> = net.nodes().iter().map(|n| n.id).collect();
    nodes.sort();
    let mut raw: Vec<(f64, NodeId, NodeId)> = Vec::new();
    if nodes.len() < 2 {
        return Vec::new();
    }
    for (i, &rate) in profile.rates_per_minute.iter().enumerate() {
        let mean = rate * profile.period / 60.0;
        if !(mean > 0.0) {
            continue;
        }
        let count = Poisson::new(mean).expect("positive mean").sample(&mut rng) as usize;
        let base = profile.start + i as f64 * profile.period;
        for _ in 0..count {
            let t = (base + rng.random::<f64>() * profile.period).floor();
            let o = nodes[rng.random_range(0..nodes.len())];
            let mut d = nodes[rng.random_range(0..nodes.len() - 1)];
            if d >= o {
                d = nodes[nodes.iter().position(|&n| n == d).unwrap() + 1];
            }
            raw.push((t, o, d));
        }
    }
    raw.sort_by(|a, b| a.0.total_cmp(&b.0));
    raw.into_iter()
        .enumerate()
        .map(|(i, (t, o, d))| Request {
            id: RequestId(i as u64),
            entry_time: t,
            origin: o,
            destination: d,
        })
        .collect()
}

/// Normalised count of request intervals `[entry, entry + direct time]`
/// overlapping each block of `[start, start + blocks * block)`.
pub fn demand_profile(
    requests: &[Request],
    travel_time: impl Fn(NodeId, NodeId) -> Seconds,
    block: Seconds,
    start: Seconds,
    blocks: usize,
) -> Result<Vec<f64>, DemandError> {
    if requests.is_empty() {
        return Err(DemandError::EmptyInput);
    }
    if !(block > 0.0) {
        return Err(DemandError::Validation(
            "block length must be positive".into(),
        ));
    }
    let mut counts = vec![0u64; blocks];
    for r in requests {
        let a = r.entry_time;
        let b = a + travel_time(r.origin, r.destination);
        let first = ((a - start) / block).floor().max(0.0) as usize;
        let last = ((b - start) / block).ceil().max(0.0) as usize;
        for (k, c) in counts
            .iter_mut()
            .enumerate()
            .take(last.min(blocks))
            .skip(first)
        {
            let (lo, hi) = (start + k as f64 * block, start + (k + 1) as f64 * block);
            if a < hi && b > lo {
                *c += 1;
            }
        }
    }
    let max = counts.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return Err(DemandError::EmptyInput);
    }
    Ok(counts.into_iter().map(|c| c as f64 / max as f64).collect())
}

/// Minimum count of vehicles that should be in service, per block.
#[derive(Debug, Clone, PartialEq)]
pub struct AvailabilityRequirement {
    pub period_length: Seconds,
    pub values: Vec<u32>,
    pub lambda: f64,
    pub profile: Vec<f64>,
}

impl AvailabilityRequirement {
    /// Requirement in force at `offset` seconds after the profile start.
    pub fn at(&self, offset: Seconds) -> u32 {
        if self.values.is_empty() {
            return 0;
        }
        let i = (offset / self.period_length).floor().max(0.0) as usize;
        self.values[i.min(self.values.len() - 1)]
    }
}

const REQUIREMENT_HEADER: [&str; 4] = ["offset_s", "demand", "lambda", "requirement"];

#[derive(Debug, Serialize, Deserialize)]
struct RequirementRow {
    offset_s: f64,
    demand: f64,
    lambda: f64,
    requirement: u32,
}

/// Writes one `offset_s,demand,lambda,requirement` row per block, offsets
/// measured from the profile start.
pub fn save_requirement(path: &Path, req: &AvailabilityRequirement) -> Result<(), DemandError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| DemandError::Validation(e.to_string()))?;
    let fmt = |e: csv::Error| DemandError::Validation(e.to_string());
    w.write_record(REQUIREMENT_HEADER).map_err(fmt)?;
    for (i, &r) in req.values.iter().enumerate() {
        let d = req.profile.get(i).copied().unwrap_or(f64::NAN);
        w.write_record([
            (i as f64 * req.period_length).to_string(),
            d.to_string(),
            req.lambda.to_string(),
            r.to_string(),
        ])
        .map_err(fmt)?;
    }
    w.flush().map_err(NetworkError::from)?;
    Ok(())
}

/// Reads a file written by [`save_requirement`]. Blocks must start at 0 and
/// be evenly spaced.
pub fn load_requirement(path: &Path) -> Result<AvailabilityRequirement, DemandError> {
    let rows = crate::network::read_rows::<RequirementRow>(path, &REQUIREMENT_HEADER)?;
    if rows.is_empty() {
        return Err(DemandError::EmptyInput);
    }
    let period_length = if rows.len() > 1 {
        rows[1].offset_s - rows[0].offset_s
    } else {
        DEFAULT_BLOCK
    };
    if !(period_length > 0.0) {
        return Err(DemandError::Validation(
            "requirement blocks must have increasing offsets".into(),
        ));
    }
    for (i, r) in rows.iter().enumerate() {
        if (r.offset_s - i as f64 * period_length).abs() > 1e-6 {
            return Err(DemandError::Validation(format!(
                "requirement row {} is off the {period_length} s grid",
                i + 1
            )));
        }
    }
    Ok(AvailabilityRequirement {
        period_length,
        values: rows.iter().map(|r| r.requirement).collect(),
        lambda: rows[0].lambda,
        profile: rows.iter().map(|r| r.demand).collect(),
    })
}

/// `R(t) = floor(|V| (lambda d(t) + 1 - lambda))`.
pub fn availability_requirement(
    fleet_size: u32,
    profile: &[f64],
    lambda: f64,
    period_length: Seconds,
) -> AvailabilityRequirement {
    let values = profile
        .iter()
        .map(|&d| {
            let r = fleet_size as f64 * (lambda * d + (1.0 - lambda));
            ((r + 1e-9).floor().max(0.0) as u32).min(fleet_size)
        })
        .collect();
    AvailabilityRequirement {
        period_length,
        values,
        lambda,
        profile: profile.to_vec(),
    }
}

/// Planning grid used by [`calibrate_lambda`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSetup {
    pub block: Seconds,
    pub period: Seconds,
    pub horizon_periods: usize,
    pub availability: AvailabilityFunction,
}

/// Smallest lambda on a `step` grid for which the long-horizon heuristic
/// plans a full day (fleet fully charged at the start, deadlines from the
/// estimated discharge rate) with no shortfall, no capacity overrun and no
/// vehicle running below zero.
pub fn calibrate_lambda(
    fleet_size: u32,
    profile: &[f64],
    battery: &BatteryModel,
    total_capacity: u32,
    step: f64,
    setup: &CalibrationSetup,
) -> Result<f64, DemandError> {
    if !(step > 0.0) {
        return Err(DemandError::Validation(
            "lambda step must be positive".into(),
        ));
    }
    let steps = (1.0 / step).round() as usize;
    for i in 0..=steps {
        let lambda = (i as f64 * step).min(1.0);
        if lambda_is_feasible(fleet_size, profile, battery, total_capacity, lambda, setup) {
            return Ok(lambda);
        }
    }
    Err(DemandError::Infeasible)
}

/// Whether the full-day heuristic plan meets the requirement built with `lambda`.
pub fn lambda_is_feasible(
    fleet_size: u32,
    profile: &[f64],
    battery: &BatteryModel,
    total_capacity: u32,
    lambda: f64,
    setup: &CalibrationSetup,
) -> bool {
    let req = availability_requirement(fleet_size, profile, lambda, setup.block);
    let instance = LongInstance {
        period_length: setup.period,
        horizon: setup.horizon_periods,
        vehicles: (0..fleet_size)
            .map(|v| LongVehicle {
                id: VehicleId(v),
                release: 0,
                initial_charge: 1.0,
                prior_availability: vec![1.0; setup.horizon_periods],
            })
            .collect(),
        requirement: (0..setup.horizon_periods)
            .map(|t| req.at(t as f64 * setup.period) as f64)
            .collect(),
        total_capacity,
        eta: battery.eta_per(setup.period),
        q_est: battery.q_est_per(setup.period),
        penalty: 1000.0,
        frozen_before: 0,
        availability: setup.availability,
        fixed: ChargeSchedule::default(),
    };
    let (schedule, _) = solve_long_heuristic_with(
        &instance,
        &ChargeSchedule::default(),
        HeuristicOptions { full_day: true },
    );
    match long_objective(&instance, &schedule) {
        Ok(obj) => obj.shortfall <= 1e-9 && obj.negative_charge <= 1e-9,
        Err(_) => false,
    }
}
