//! Deterministic batch simulation of one operating day.
//!
//! Every `batch` seconds the simulator releases the requests that arrived
//! during the last batch, runs the charge planners on their cadence, pools
//! riders into vehicles under the current charge schedule, rebalances idle
//! vehicles and then moves the fleet forward by one batch.

mod events;
mod metrics;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::battery::{BatteryModel, BatteryParams};
use crate::benchmark::{benchmark_step, BenchmarkConfig, StationBook};
use crate::demand::{AvailabilityRequirement, Request, RequestId};
use crate::network::{NodeId, RoadNetwork, StationId};
use crate::pooling::{
    assign_trips_weighted, build_shareability_graph, charge_lead, enumerate_trips, rebalance,
    ArcProgress, ChargeSlot, OnboardRider, PoolingConfig, Position, StopKind, VehicleId,
    VehicleState,
};
use crate::schedule::{
    build_short_instance, check_delta_bound, long_objective, release_date, solve_long_exact,
    solve_long_heuristic, solve_short_exact, solve_short_fallback, AvailabilityFunction,
    ChargeSchedule, LongInstance, LongVehicle, Slot, EXACT_MAX_PERIODS, EXACT_MAX_VEHICLES,
};
use crate::Seconds;

pub use events::{Event, EventKind, EventLog};
pub use metrics::{
    compute_metrics, compute_timeseries, qos_violations, reconstruct_charges, rides,
    save_metrics_csv, save_timeseries_csv, station_capacity_violations, Metrics, Ride,
    TimeseriesRow, BUCKET, METRICS_HEADER, TIME_TOLERANCE,
};

/// Penalty that keeps already accepted riders in the assignment.
const KEEP_PENALTY: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    /// Combustion fleet: no charging at all.
    Ice,
    /// Exact long-horizon planner; small fleets only.
    Milp,
    Heuristic,
    Benchmark,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Ice,
        Method::Milp,
        Method::Heuristic,
        Method::Benchmark,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ice => "ICE",
            Method::Milp => "MILP",
            Method::Heuristic => "HEURISTIC",
            Method::Benchmark => "BENCHMARK",
        }
    }

    fn scheduled(self) -> bool {
        matches!(self, Method::Milp | Method::Heuristic)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| ConfigError::Invalid(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialCharge {
    Full,
    /// Independent draws from `[0, 1)`.
    UniformRandom,
}

impl FromStr for InitialCharge {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(InitialCharge::Full),
            "uniform_random" | "uniform" => Ok(InitialCharge::UniformRandom),
            _ => Err(ConfigError::Invalid(format!(
                "unknown initial charge {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub method: Method,
    /// Batch length.
    pub batch: Seconds,
    /// Short-horizon planning cadence; a multiple of `batch`.
    pub short_cadence: Seconds,
    /// Long-horizon planning cadence; a multiple of `short_cadence`.
    pub long_cadence: Seconds,
    /// Look-ahead for freezing charge times.
    pub t_sl: Seconds,
    /// Extra look-ahead for station assignment.
    pub delta: Seconds,
    /// Accept `delta > 2 * long_cadence`.
    pub allow_delta_override: bool,
    pub battery: BatteryModel,
    pub fleet_size: u32,
    pub vehicle_capacity: u32,
    pub seed: u64,
    pub day_start: Seconds,
    pub day_end: Seconds,
    pub initial_charge: InitialCharge,
    /// Charge-schedule period length.
    pub period: Seconds,
    /// Availability ramp slope, per second.
    pub ramp_slope: f64,
    /// Time a vehicle counts as fully unavailable after a charging period.
    pub charge_duration: Seconds,
    /// Minimum vehicles in service, from `day_start`; none means zero.
    pub requirement: Option<AvailabilityRequirement>,
    /// Weight on negative charge in the long-horizon objective.
    pub long_penalty: f64,
    /// Cap on the long-horizon length in periods; defaults to the rest of the day.
    pub long_horizon: Option<usize>,
    /// Pooling tunables, including the QoS limits and the station buffer.
    pub pooling: PoolingConfig,
    pub benchmark: BenchmarkConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            method: Method::Heuristic,
            batch: 60.0,
            short_cadence: 60.0,
            long_cadence: 300.0,
            t_sl: 2700.0,
            delta: 600.0,
            allow_delta_override: false,
            battery: BatteryModel::new(BatteryParams::default()).expect("default battery is valid"),
            fleet_size: 20,
            vehicle_capacity: 10,
            seed: 0,
            day_start: 5.0 * 3600.0,
            day_end: 21.0 * 3600.0,
            initial_charge: InitialCharge::Full,
            period: 300.0,
            ramp_slope: 1.0 / 900.0,
            charge_duration: 300.0,
            requirement: None,
            long_penalty: 1000.0,
            long_horizon: None,
            pooling: PoolingConfig::default(),
            benchmark: BenchmarkConfig::default(),
        }
    }
}

fn is_multiple(x: Seconds, of: Seconds) -> bool {
    let k = (x / of).round();
    k >= 1.0 && (k * of - x).abs() <= 1e-9 * x.abs().max(1.0)
}

impl ScenarioConfig {
    pub fn validate(&self, net: &RoadNetwork) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(self.batch > 0.0) || !(self.period > 0.0) {
            return bad("batch and period must be positive");
        }
        if !is_multiple(self.short_cadence, self.batch)
            || !is_multiple(self.long_cadence, self.short_cadence)
        {
            return bad("cadences must be multiples: batch | short | long");
        }
        if !(self.day_end > self.day_start) {
            return bad("day_end must be after day_start");
        }
        if self.fleet_size == 0 || self.vehicle_capacity == 0 {
            return bad("fleet size and vehicle capacity must be positive");
        }
        if !(self.t_sl >= 0.0) || !(self.delta >= 0.0) {
            return bad("t_sl and delta must be nonnegative");
        }
        if !self.allow_delta_override && !check_delta_bound(self.long_cadence, self.delta) {
            return bad("delta exceeds twice the long cadence");
        }
        if !(self.ramp_slope > 0.0) || !(self.charge_duration >= 0.0) {
            return bad("ramp slope must be positive and charge duration nonnegative");
        }
        if self.long_horizon == Some(0) {
            return bad("long horizon must be at least one period");
        }
        if self.method != Method::Ice && net.stations().is_empty() {
            return bad("charging methods need at least one station");
        }
        if self.method == Method::Milp {
            if self.fleet_size as usize > EXACT_MAX_VEHICLES {
                return bad("MILP supports at most 4 vehicles");
            }
            match self.long_horizon {
                Some(h) if h <= EXACT_MAX_PERIODS => {}
                _ => return bad("MILP needs long_horizon of at most 12 periods"),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: Seconds,
    pub charges: Vec<f64>,
    pub charging: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub metrics: Metrics,
    pub events: EventLog,
    pub timeseries: Vec<TimeseriesRow>,
    /// Fleet state at every batch boundary.
    pub trace: Vec<Snapshot>,
    /// Charge schedule in periods from `day_start`.
    pub schedule: ChargeSchedule,
    pub fleet: Vec<VehicleState>,
    /// Short-horizon rounds with no capacity-feasible station assignment.
    pub short_infeasible: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct PlannedSlot {
    start: Seconds,
    end: Seconds,
    end_period: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Visit {
    station: StationId,
    slot: Option<PlannedSlot>,
    /// Queue key at the station.
    booked: Seconds,
    arrived: Seconds,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Mode {
    Service,
    ToStation(Visit),
    Waiting(Visit),
    Charging {
        visit: Visit,
        since: Seconds,
        q0: f64,
    },
}

struct Sim<'a> {
    cfg: &'a ScenarioConfig,
    net: &'a RoadNetwork,
    requests: BTreeMap<RequestId, Request>,
    fleet: Vec<VehicleState>,
    mode: Vec<Mode>,
    target: Vec<Option<NodeId>>,
    /// Slots starting before this period have been used.
    floor: Vec<usize>,
    plan: ChargeSchedule,
    book: StationBook,
    log: EventLog,
    batch_events: Vec<Event>,
    trace: Vec<Snapshot>,
    short_infeasible: u32,
}

/// Simulates one day of `cfg.method` over `requests`.
pub fn run(
    cfg: &ScenarioConfig,
    net: &RoadNetwork,
    requests: &[Request],
) -> Result<SimOutput, ConfigError> {
    cfg.validate(net)?;
    if let Some(r) = requests
        .iter()
        .find(|r| !net.contains(r.origin) || !net.contains(r.destination))
    {
        return Err(ConfigError::Invalid(format!(
            "request {} uses a node outside the network",
            r.id
        )));
    }
    let mut sorted: Vec<Request> = requests.to_vec();
    sorted.sort_by(|a, b| a.entry_time.total_cmp(&b.entry_time).then(a.id.cmp(&b.id)));

    let mut sim = Sim::new(cfg, net, &sorted);
    let qos = cfg.pooling.qos;
    let drain_batches =
        ((qos.max_wait + qos.max_delay + net_diameter(net)) / cfg.batch).ceil() as usize + 1;
    let mut next = 0usize;
    let mut k = 0usize;
    let mut drained = 0usize;
    loop {
        let now = cfg.day_start + k as f64 * cfg.batch;
        let open = now <= cfg.day_end + 1e-9;
        sim.snapshot(now);
        if !open {
            let busy = sim.fleet.iter().any(|v| !v.is_empty());
            if !busy || drained >= drain_batches {
                break;
            }
            drained += 1;
        }
        let mut new = Vec::new();
        while open && next < sorted.len() && sorted[next].entry_time <= now {
            new.push(sorted[next]);
            next += 1;
        }
        if open {
            sim.decide(k, now, &new);
        }
        sim.advance(now, now + cfg.batch);
        sim.flush();
        k += 1;
    }
    let last = sim.log.events().last().map_or(cfg.day_end, |e| e.time);
    sim.log.extend_batch(
        sorted[next..]
            .iter()
            .map(|r| Event::new(last, EventKind::Reject).request(r.id))
            .collect(),
    );

    let end = cfg.day_start + k.saturating_sub(1) as f64 * cfg.batch;
    let metrics = compute_metrics(
        &sim.log,
        &sorted,
        cfg.fleet_size,
        cfg.day_end - cfg.day_start,
    );
    let samples: Vec<(Seconds, u32)> = sim.trace.iter().map(|s| (s.time, s.charging)).collect();
    let timeseries = compute_timeseries(
        &sim.log,
        &sorted,
        &samples,
        cfg.day_start,
        end.max(cfg.day_end),
    );
    Ok(SimOutput {
        metrics,
        events: sim.log,
        timeseries,
        trace: sim.trace,
        schedule: sim.plan,
        fleet: sim.fleet,
        short_infeasible: sim.short_infeasible,
    })
}

/// Longest shortest travel time, sampled from every node to node 0 and back.
fn net_diameter(net: &RoadNetwork) -> Seconds {
    let Some(first) = net.nodes().first().map(|n| n.id) else {
        return 0.0;
    };
    net.nodes()
        .iter()
        .map(|n| net.tt(first, n.id) + net.tt(n.id, first))
        .fold(0.0, f64::max)
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a ScenarioConfig, net: &'a RoadNetwork, requests: &[Request]) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut nodes: Vec<NodeId> = net.nodes().iter().map(|n| n.id).collect();
        nodes.sort();
        let n = cfg.fleet_size as usize;
        let mut fleet = Vec::with_capacity(n);
        let mut init = Vec::with_capacity(n);
        for i in 0..n {
            let node = nodes[rng.random_range(0..nodes.len())];
            let q = match cfg.initial_charge {
                InitialCharge::Full => 1.0,
                InitialCharge::UniformRandom => rng.random::<f64>(),
            };
            let id = VehicleId(i as u32);
            fleet.push(VehicleState::idle(id, node, cfg.vehicle_capacity, q));
            init.push(
                Event::new(cfg.day_start, EventKind::Init)
                    .vehicle(id)
                    .value(q),
            );
        }
        let mut log = EventLog::new();
        log.extend_batch(init);
        Sim {
            cfg,
            net,
            requests: requests.iter().map(|r| (r.id, *r)).collect(),
            fleet,
            mode: vec![Mode::Service; n],
            target: vec![None; n],
            floor: vec![0; n],
            plan: ChargeSchedule::new(),
            book: StationBook::new(net),
            log,
            batch_events: Vec::new(),
            trace: Vec::new(),
            short_infeasible: 0,
        }
    }

    fn emit(&mut self, e: Event) {
        self.batch_events.push(e);
    }

    fn flush(&mut self) {
        let batch = std::mem::take(&mut self.batch_events);
        self.log.extend_batch(batch);
    }

    fn snapshot(&mut self, now: Seconds) {
        let charging = self
            .mode
            .iter()
            .filter(|m| matches!(m, Mode::Charging { .. }))
            .count() as u32;
        self.trace.push(Snapshot {
            time: now,
            charges: self.fleet.iter().map(|v| v.charge).collect(),
            charging,
        });
    }

    fn period_start(&self, p: usize) -> Seconds {
        self.cfg.day_start + p as f64 * self.cfg.period
    }

    fn station_node(&self, s: StationId) -> NodeId {
        self.net.station(s).expect("known station").node
    }

    /// Planning, pooling, rebalancing and dispatch at a batch boundary.
    fn decide(&mut self, k: usize, now: Seconds, new: &[Request]) {
        let cfg = self.cfg;
        if cfg.method.scheduled() {
            let per_long = (cfg.long_cadence / cfg.batch).round() as usize;
            let per_short = (cfg.short_cadence / cfg.batch).round() as usize;
            if k.is_multiple_of(per_long) {
                self.long_plan(now);
            }
            if k.is_multiple_of(per_short) {
                self.short_plan(now);
            }
            self.refresh_slots(now);
            self.emergencies(now);
        }
        if cfg.method == Method::Benchmark {
            self.benchmark(now);
        }
        for i in 0..self.fleet.len() {
            let service = self.mode[i] == Mode::Service;
            self.fleet[i].accepting = match cfg.method {
                Method::Ice => true,
                Method::Benchmark => service && self.fleet[i].accepting,
                _ => service && self.fleet[i].charge > 0.0,
            };
        }
        let rejected = self.pool(now, new);
        self.rebalance(now, &rejected);
        if cfg.method.scheduled() {
            self.dispatch(now);
        }
    }

    fn long_plan(&mut self, now: Seconds) {
        let cfg = self.cfg;
        let p = cfg.period;
        let ds = cfg.day_start;
        let base = ((now - ds) / p + 1e-9).floor() as usize;
        let day_periods = ((cfg.day_end - ds) / p - 1e-9).ceil() as usize;
        let mut horizon = day_periods.saturating_sub(base).max(1);
        if let Some(h) = cfg.long_horizon {
            horizon = horizon.min(h);
        }
        let frozen_abs = (((now + cfg.t_sl - ds) / p) - 1e-9).ceil().max(0.0) as usize;
        let availability = AvailabilityFunction::new(cfg.ramp_slope, cfg.charge_duration);
        let reach = availability.reach(p);

        let mut fixed = ChargeSchedule::new();
        let mut fixed_abs: BTreeSet<(VehicleId, usize)> = BTreeSet::new();
        let mut vehicles = Vec::with_capacity(self.fleet.len());
        for i in 0..self.fleet.len() {
            let id = self.fleet[i].id;
            let current = match self.mode[i] {
                Mode::Service => None,
                Mode::ToStation(v) | Mode::Waiting(v) | Mode::Charging { visit: v, .. } => {
                    v.slot.map(|s| s.end_period)
                }
            };
            let mut prior = vec![1.0; horizon];
            for s in self.plan.slots(id) {
                for t in s.start.max(base.saturating_sub(reach))..s.end().min(base) {
                    for (r, a) in prior.iter_mut().enumerate().take(reach + 1) {
                        *a = f64::min(*a, availability.value(((base + r) as f64 - t as f64) * p));
                    }
                }
                let keep = s.end() > base
                    && (s.start < frozen_abs || s.station.is_some() || Some(s.end()) == current);
                if keep {
                    let start = s.start.max(base);
                    let _ = fixed.insert(
                        id,
                        Slot {
                            start: start - base,
                            duration: s.end() - start,
                            station: s.station,
                        },
                    );
                    fixed_abs.insert((id, s.start));
                }
            }
            let (release, initial_charge) = match self.mode[i] {
                Mode::Service => {
                    let v = &self.fleet[i];
                    let rd = release_date(v, self.net, cfg.pooling.buffer_d, now);
                    let rel = (((rd - ds) / p) - 1e-9).ceil().max(base as f64) as usize;
                    let (_, t_c) = v.plan_end(self.net, now);
                    let q_end = v.planned_charge(self.net, &cfg.battery, now);
                    let q =
                        q_end - cfg.battery.q_est * (self.period_start(rel) - t_c).max(0.0) / 60.0;
                    (rel - base, q)
                }
                Mode::ToStation(v) | Mode::Waiting(v) | Mode::Charging { visit: v, .. } => {
                    let end = match v.slot {
                        Some(s) => s.end_period,
                        None => {
                            let need =
                                (1.0 - self.fleet[i].charge).max(0.0) / cfg.battery.eta * 60.0;
                            ((now + need - ds) / p).ceil() as usize
                        }
                    };
                    (end.max(base) - base, 1.0)
                }
            };
            vehicles.push(LongVehicle {
                id,
                release,
                initial_charge,
                prior_availability: prior,
            });
        }
        let requirement = (0..horizon)
            .map(|r| {
                cfg.requirement
                    .as_ref()
                    .map_or(0.0, |req| req.at((base + r) as f64 * p) as f64)
            })
            .collect();
        let instance = LongInstance {
            period_length: p,
            horizon,
            vehicles,
            requirement,
            total_capacity: self.net.total_capacity(),
            eta: cfg.battery.eta_per(p),
            q_est: cfg.battery.q_est_per(p),
            penalty: cfg.long_penalty,
            frozen_before: frozen_abs.saturating_sub(base),
            availability,
            fixed: fixed.clone(),
        };
        let solution = match cfg.method {
            Method::Milp => solve_long_exact(&instance)
                .unwrap_or_else(|_| solve_long_heuristic(&instance, &fixed)),
            _ => solve_long_heuristic(&instance, &fixed),
        };
        if let Ok(obj) = long_objective(&instance, &solution) {
            if obj.shortfall > 1e-9 {
                self.emit(Event::new(now, EventKind::Shortfall).value(obj.shortfall));
            }
        }
        let mut plan = ChargeSchedule::new();
        for (v, s) in self.plan.iter() {
            if s.end() <= base || fixed_abs.contains(&(v, s.start)) {
                let _ = plan.insert(v, *s);
            }
        }
        for (v, s) in solution.iter() {
            if !fixed.slots(v).contains(s) {
                let _ = plan.insert(
                    v,
                    Slot {
                        start: s.start + base,
                        ..*s
                    },
                );
            }
        }
        self.plan = plan;
    }

    /// The schedule without slots already used.
    fn active_plan(&self) -> ChargeSchedule {
        let mut out = ChargeSchedule::new();
        for (v, s) in self.plan.iter() {
            if s.start >= self.floor[v.0 as usize] {
                let _ = out.insert(v, *s);
            }
        }
        out
    }

    fn short_plan(&mut self, now: Seconds) {
        let cfg = self.cfg;
        let active = self.active_plan();
        let mut inst = build_short_instance(
            &active,
            &self.fleet,
            self.net,
            &cfg.battery,
            now,
            cfg.t_sl,
            cfg.delta,
            cfg.period,
            cfg.day_start,
        );
        for job in &mut inst.jobs {
            if self.mode[job.vehicle.0 as usize] != Mode::Service {
                if let Some(pin) = job.pinned {
                    job.cost.retain(|s, _| *s == pin);
                }
            }
        }
        let (assignment, deferred) = match solve_short_exact(&inst) {
            Ok(a) => (a, BTreeSet::new()),
            Err(_) => {
                self.short_infeasible += 1;
                let newest: BTreeSet<VehicleId> = inst
                    .jobs
                    .iter()
                    .filter(|j| j.pinned.is_none())
                    .map(|j| j.vehicle)
                    .collect();
                solve_short_fallback(&inst, &newest)
            }
        };
        for job in &inst.jobs {
            if deferred.contains(&job.vehicle) {
                self.plan.remove(job.vehicle, job.start);
            } else if let Some(&s) = assignment.get(&job.vehicle) {
                self.plan.set_station(job.vehicle, job.start, Some(s));
            }
        }
    }

    fn next_slot(&self, i: usize, now: Seconds) -> Option<Slot> {
        let id = self.fleet[i].id;
        self.plan
            .slots(id)
            .iter()
            .find(|s| s.start >= self.floor[i] && self.period_start(s.end()) > now + 1e-9)
            .copied()
    }

    fn refresh_slots(&mut self, now: Seconds) {
        let p = self.cfg.period;
        for i in 0..self.fleet.len() {
            if self.mode[i] != Mode::Service {
                continue;
            }
            self.fleet[i].charge_slot = self.next_slot(i, now).map(|s| ChargeSlot {
                start: self.period_start(s.start),
                duration: s.duration as f64 * p,
                station: s.station,
            });
        }
    }

    fn head_to_station(
        &mut self,
        i: usize,
        station: StationId,
        slot: Option<PlannedSlot>,
        booked: Seconds,
    ) {
        self.mode[i] = Mode::ToStation(Visit {
            station,
            slot,
            booked,
            arrived: f64::NAN,
        });
        self.target[i] = None;
    }

    fn planned(&self, i: usize) -> Option<(StationId, PlannedSlot)> {
        let cs = self.fleet[i].charge_slot?;
        let station = cs.station?;
        let end = cs.start + cs.duration;
        let end_period = ((end - self.cfg.day_start) / self.cfg.period).round() as usize;
        Some((
            station,
            PlannedSlot {
                start: cs.start,
                end,
                end_period,
            },
        ))
    }

    /// Empty vehicles out of charge go to their planned station, or the nearest one.
    fn emergencies(&mut self, now: Seconds) {
        for i in 0..self.fleet.len() {
            let v = &self.fleet[i];
            if self.mode[i] != Mode::Service || v.charge > 0.0 || !v.is_empty() {
                continue;
            }
            match self.planned(i) {
                Some((s, slot)) => self.head_to_station(i, s, Some(slot), slot.start),
                None => {
                    let (node, _) = v.anchor(now);
                    let (s, _) = self.net.nearest_station(node).expect("stations exist");
                    self.head_to_station(i, s, None, now);
                }
            }
        }
    }

    fn benchmark(&mut self, now: Seconds) {
        let idx: Vec<usize> = (0..self.fleet.len())
            .filter(|&i| self.mode[i] == Mode::Service)
            .collect();
        let mut states: Vec<VehicleState> = idx.iter().map(|&i| self.fleet[i].clone()).collect();
        benchmark_step(
            &self.cfg.benchmark,
            &mut states,
            &mut self.book,
            self.net,
            &self.cfg.battery,
            now,
        );
        for (k, &i) in idx.iter().enumerate() {
            self.fleet[i].accepting = states[k].accepting;
            self.fleet[i].charge_slot = states[k].charge_slot;
            if let (Some(cs), true) = (states[k].charge_slot, states[k].is_empty()) {
                let station = cs.station.expect("benchmark bookings name a station");
                self.head_to_station(i, station, None, cs.start);
            }
        }
    }

    /// Assigns the new requests plus the not yet picked up riders of pooled
    /// vehicles; returns the new requests left unserved.
    fn pool(&mut self, now: Seconds, new: &[Request]) -> Vec<Request> {
        let cfg = self.cfg;
        let idx: Vec<usize> = (0..self.fleet.len())
            .filter(|&i| self.fleet[i].accepting)
            .collect();
        let states: Vec<VehicleState> = idx.iter().map(|&i| self.fleet[i].clone()).collect();
        let mut reqs: Vec<Request> = new.to_vec();
        let mut penalties: Vec<(RequestId, f64)> =
            new.iter().map(|r| (r.id, cfg.pooling.penalty)).collect();
        for v in &states {
            for r in &v.pending {
                reqs.push(*r);
                penalties.push((r.id, KEEP_PENALTY));
            }
        }
        if reqs.is_empty() {
            return Vec::new();
        }
        let graph = build_shareability_graph(self.net, &cfg.pooling, &states, &reqs, now);
        let trips = enumerate_trips(self.net, &cfg.pooling, &graph, &states, &reqs, now);
        let assignment = assign_trips_weighted(&trips, &penalties);
        let chosen: BTreeMap<VehicleId, usize> = assignment
            .chosen
            .iter()
            .map(|&t| (trips[t].vehicle, t))
            .collect();
        for &i in &idx {
            let v = &mut self.fleet[i];
            match chosen.get(&v.id) {
                Some(&t) => {
                    let trip = &trips[t];
                    v.route = trip.route.stops.clone();
                    let onboard: BTreeSet<RequestId> =
                        v.onboard.iter().map(|o| o.request.id).collect();
                    v.pending = trip
                        .riders
                        .iter()
                        .filter(|r| !onboard.contains(r))
                        .map(|r| self.requests[r])
                        .collect();
                    self.target[i] = None;
                }
                None => {
                    v.pending.clear();
                    let onboard: BTreeSet<RequestId> =
                        v.onboard.iter().map(|o| o.request.id).collect();
                    v.route
                        .retain(|s| matches!(s.kind, StopKind::Dropoff(r) if onboard.contains(&r)));
                }
            }
        }
        let fresh: BTreeSet<RequestId> = new.iter().map(|r| r.id).collect();
        let mut rejected = Vec::new();
        for r in &assignment.rejected {
            self.emit(Event::new(now, EventKind::Reject).request(*r));
            if fresh.contains(r) {
                rejected.push(self.requests[r]);
            }
        }
        rejected
    }

    fn rebalance(&mut self, now: Seconds, rejected: &[Request]) {
        let idle: Vec<usize> = (0..self.fleet.len())
            .filter(|&i| {
                self.fleet[i].accepting
                    && self.fleet[i].route.is_empty()
                    && self.fleet[i].is_empty()
            })
            .collect();
        let states: Vec<VehicleState> = idle.iter().map(|&i| self.fleet[i].clone()).collect();
        let by_id: BTreeMap<VehicleId, usize> =
            idle.iter().map(|&i| (self.fleet[i].id, i)).collect();
        for (vid, node) in rebalance(self.net, &states, rejected, now) {
            let i = by_id[&vid];
            let v = &self.fleet[i];
            if let Some(slot) = &v.charge_slot {
                let (a, t) = v.anchor(now);
                let lead = charge_lead(self.net, slot, node, self.cfg.pooling.buffer_d);
                if t + self.net.tt(a, node) + lead + self.cfg.batch > slot.start + 1e-9 {
                    continue;
                }
            }
            self.target[i] = Some(node);
            self.emit(
                Event::new(now, EventKind::Rebalance)
                    .vehicle(vid)
                    .value(node.0 as f64),
            );
        }
    }

    /// Whether an empty vehicle at `node` at `t` must leave now to make its slot.
    fn must_leave(&self, i: usize, node: NodeId, t: Seconds) -> Option<(StationId, PlannedSlot)> {
        let (station, slot) = self.planned(i)?;
        let v = &self.fleet[i];
        if !v.route.is_empty() || !v.is_empty() {
            return None;
        }
        (t + self.cfg.batch + self.net.tt(node, self.station_node(station)) > slot.start - 1e-9)
            .then_some((station, slot))
    }

    fn dispatch(&mut self, now: Seconds) {
        for i in 0..self.fleet.len() {
            if self.mode[i] != Mode::Service {
                continue;
            }
            let (node, t) = self.fleet[i].anchor(now);
            if let Some((s, slot)) = self.must_leave(i, node, t) {
                self.head_to_station(i, s, Some(slot), slot.start);
            }
        }
    }

    fn destination(&self, i: usize) -> Option<NodeId> {
        match self.mode[i] {
            Mode::ToStation(v) => Some(self.station_node(v.station)),
            Mode::Service => self.fleet[i]
                .route
                .first()
                .map(|s| s.node)
                .or(self.target[i]),
            _ => None,
        }
    }

    fn advance(&mut self, now: Seconds, end: Seconds) {
        for i in 0..self.fleet.len() {
            if matches!(self.mode[i], Mode::Service | Mode::ToStation(_)) {
                self.drive(i, now, end);
            }
        }
        if self.cfg.method != Method::Ice {
            self.stations(now, end);
        }
    }

    fn drive(&mut self, i: usize, now: Seconds, end: Seconds) {
        let mut t = now;
        let mut meters = 0.0;
        let mut last = now;
        loop {
            if let Some(a) = self.fleet[i].position.heading {
                let left = end - t;
                if a.remaining_time <= left + 1e-9 {
                    t = (t + a.remaining_time).min(end);
                    meters += a.remaining_distance;
                    self.fleet[i].position = Position {
                        node: a.to,
                        heading: None,
                    };
                    last = t;
                } else {
                    let d = a.remaining_distance * left / a.remaining_time;
                    meters += d;
                    self.fleet[i].position.heading = Some(ArcProgress {
                        to: a.to,
                        remaining_time: a.remaining_time - left,
                        remaining_distance: a.remaining_distance - d,
                    });
                    last = end;
                    break;
                }
            }
            if !self.at_node(i, t) || t >= end {
                break;
            }
            let node = self.fleet[i].position.node;
            let Some(dest) = self.destination(i).filter(|&d| d != node) else {
                break;
            };
            let path = self.net.shortest_path(node, dest).expect("known nodes");
            let arc = self
                .net
                .arc_between(node, path[1])
                .expect("path arcs exist");
            self.fleet[i].position.heading = Some(ArcProgress {
                to: path[1],
                remaining_time: arc.travel_time,
                remaining_distance: arc.distance,
            });
        }
        if meters > 0.0 {
            let id = self.fleet[i].id;
            self.fleet[i].charge = self.cfg.battery.discharge(self.fleet[i].charge, meters);
            self.emit(Event::new(last, EventKind::Drive).vehicle(id).value(meters));
        }
    }

    /// Handles stops at the vehicle's node at time `t`; false once the
    /// vehicle has reached its station.
    fn at_node(&mut self, i: usize, t: Seconds) -> bool {
        let node = self.fleet[i].position.node;
        let id = self.fleet[i].id;
        let mut emptied = false;
        while self.fleet[i].route.first().is_some_and(|s| s.node == node) {
            let stop = self.fleet[i].route.remove(0);
            match stop.kind {
                StopKind::Pickup(r) => {
                    let v = &mut self.fleet[i];
                    if let Some(k) = v.pending.iter().position(|p| p.id == r) {
                        let request = v.pending.remove(k);
                        v.onboard.push(OnboardRider {
                            request,
                            pickup_time: t,
                        });
                        self.emit(
                            Event::new(t, EventKind::Pickup)
                                .vehicle(id)
                                .request(r)
                                .value(t - request.entry_time),
                        );
                    }
                }
                StopKind::Dropoff(r) => {
                    let v = &mut self.fleet[i];
                    if let Some(k) = v.onboard.iter().position(|o| o.request.id == r) {
                        let rider = v.onboard.remove(k);
                        let direct = self.net.tt(rider.request.origin, rider.request.destination);
                        self.emit(
                            Event::new(t, EventKind::Dropoff)
                                .vehicle(id)
                                .request(r)
                                .value(direct),
                        );
                    }
                }
            }
            emptied = true;
        }
        match self.mode[i] {
            Mode::Service => {
                if self.fleet[i].route.is_empty() {
                    if self.target[i] == Some(node) {
                        self.target[i] = None;
                    }
                    if emptied && self.cfg.method.scheduled() {
                        let batch_start = self.cfg.day_start
                            + ((t - self.cfg.day_start) / self.cfg.batch).floor()
                                * self.cfg.batch;
                        if let Some((s, slot)) = self.must_leave(i, node, batch_start) {
                            self.head_to_station(i, s, Some(slot), slot.start);
                            return self.at_node(i, t);
                        }
                    }
                }
                true
            }
            Mode::ToStation(mut visit) if self.station_node(visit.station) == node => {
                visit.arrived = t;
                self.mode[i] = Mode::Waiting(visit);
                self.emit(
                    Event::new(t, EventKind::WaitStart)
                        .vehicle(id)
                        .station(visit.station),
                );
                false
            }
            _ => true,
        }
    }

    fn charge_end(&self, i: usize) -> Seconds {
        match self.mode[i] {
            Mode::Charging { visit, since, q0 } => {
                let full = since + (1.0 - q0).max(0.0) / self.cfg.battery.eta * 60.0;
                let until = visit
                    .slot
                    .map(|s| s.end)
                    .filter(|&e| e > since + 1e-9)
                    .unwrap_or(f64::INFINITY);
                full.min(until)
            }
            _ => f64::INFINITY,
        }
    }

    fn eligible(&self, i: usize) -> Seconds {
        match self.mode[i] {
            Mode::Waiting(v) => v.slot.map_or(v.arrived, |s| v.arrived.max(s.start)),
            _ => f64::INFINITY,
        }
    }

    fn charge_at(&self, i: usize, t: Seconds) -> f64 {
        match self.mode[i] {
            Mode::Charging { since, q0, .. } => {
                (q0 + self.cfg.battery.eta * (t - since) / 60.0).min(1.0)
            }
            _ => self.fleet[i].charge,
        }
    }

    /// Event-driven charger allocation at every station over `[now, end)`.
    fn stations(&mut self, now: Seconds, end: Seconds) {
        for st in self.net.stations() {
            let at = |m: &Mode| match m {
                Mode::Waiting(v) | Mode::Charging { visit: v, .. } => v.station == st.id,
                _ => false,
            };
            let mut charging: Vec<usize> = (0..self.fleet.len())
                .filter(|&i| at(&self.mode[i]) && matches!(self.mode[i], Mode::Charging { .. }))
                .collect();
            let mut waiting: Vec<usize> = (0..self.fleet.len())
                .filter(|&i| at(&self.mode[i]) && matches!(self.mode[i], Mode::Waiting(_)))
                .collect();
            let mut t = now;
            loop {
                let next_end = charging
                    .iter()
                    .map(|&i| (self.charge_end(i), i))
                    .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let next_start = if (charging.len() as u32) < st.capacity {
                    let first = waiting
                        .iter()
                        .map(|&i| self.eligible(i).max(t))
                        .fold(f64::INFINITY, f64::min);
                    waiting
                        .iter()
                        .filter(|&&i| self.eligible(i).max(t) <= first)
                        .map(|&i| {
                            let booked = match self.mode[i] {
                                Mode::Waiting(v) => v.booked,
                                _ => f64::INFINITY,
                            };
                            (first, booked, i)
                        })
                        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.2.cmp(&b.2)))
                } else {
                    None
                };
                match (next_end, next_start) {
                    (Some((te, i)), s) if te <= end && s.is_none_or(|s| te <= s.0) => {
                        self.finish_charge(i, te);
                        charging.retain(|&x| x != i);
                        t = te;
                    }
                    (_, Some((ts, _, i))) if ts < end => {
                        waiting.retain(|&x| x != i);
                        if self.start_charge(i, ts) {
                            charging.push(i);
                        }
                        t = ts;
                    }
                    _ => break,
                }
            }
        }
        for i in 0..self.fleet.len() {
            if matches!(self.mode[i], Mode::Charging { .. }) {
                self.fleet[i].charge = self.charge_at(i, end);
            }
        }
    }

    /// Returns `false` when the vehicle is already full and left without charging.
    fn start_charge(&mut self, i: usize, t: Seconds) -> bool {
        let Mode::Waiting(visit) = self.mode[i] else {
            return false;
        };
        let q0 = self.fleet[i].charge;
        if q0 >= 1.0 {
            self.release(i, visit);
            return false;
        }
        self.mode[i] = Mode::Charging {
            visit,
            since: t,
            q0,
        };
        let id = self.fleet[i].id;
        self.emit(
            Event::new(t, EventKind::ChargeStart)
                .vehicle(id)
                .station(visit.station)
                .value(q0),
        );
        true
    }

    fn finish_charge(&mut self, i: usize, t: Seconds) {
        let Mode::Charging { visit, .. } = self.mode[i] else {
            return;
        };
        let q = self.charge_at(i, t);
        self.fleet[i].charge = q;
        self.release(i, visit);
        let id = self.fleet[i].id;
        self.emit(
            Event::new(t, EventKind::ChargeEnd)
                .vehicle(id)
                .station(visit.station)
                .value(q),
        );
    }

    fn release(&mut self, i: usize, visit: Visit) {
        let v = &mut self.fleet[i];
        v.charge_slot = None;
        v.accepting = true;
        self.mode[i] = Mode::Service;
        if let Some(s) = visit.slot {
            self.floor[i] = self.floor[i].max(s.end_period);
        }
    }
}
