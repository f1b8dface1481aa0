//! Run statistics and consistency checks computed from an event log.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::battery::BatteryModel;
use crate::demand::{QosPolicy, Request, RequestId};
use crate::network::{RoadNetwork, StationId};
use crate::pooling::VehicleId;
use crate::sim::events::{EventKind, EventLog};
use crate::Seconds;

/// Slack for comparing simulated times against limits.
pub const TIME_TOLERANCE: Seconds = 1e-6;

/// Time-series bucket length.
pub const BUCKET: Seconds = 1800.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub service_rate: f64,
    pub mean_wait_s: f64,
    pub mean_ride_s: f64,
    pub mean_delay_s: f64,
    pub abs_utilization: f64,
    pub rider_share_rate: f64,
    pub shared_rate: f64,
    pub total_distance_km: f64,
    pub mean_pre_charge_wait_s: f64,
    pub requests: usize,
    pub served: usize,
}

/// One served rider as seen in the log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ride {
    pub request: RequestId,
    pub vehicle: VehicleId,
    pub pickup: Seconds,
    pub dropoff: Seconds,
    pub direct: Seconds,
}

/// Rides completed in the log, by request id.
pub fn rides(log: &EventLog) -> Vec<Ride> {
    let mut picked: BTreeMap<RequestId, (VehicleId, Seconds)> = BTreeMap::new();
    let mut out = Vec::new();
    for e in log.events() {
        match (e.kind, e.request, e.vehicle) {
            (EventKind::Pickup, Some(r), Some(v)) => {
                picked.insert(r, (v, e.time));
            }
            (EventKind::Dropoff, Some(r), Some(v)) => {
                if let Some((pv, p)) = picked.remove(&r) {
                    if pv == v {
                        out.push(Ride {
                            request: r,
                            vehicle: v,
                            pickup: p,
                            dropoff: e.time,
                            direct: e.value,
                        });
                    }
                }
            }
            _ => {}
        }
    }
    out.sort_by_key(|r| r.request);
    out
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Length of the union of intervals.
fn union_length(mut iv: Vec<(f64, f64)>) -> f64 {
    iv.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut total = 0.0;
    let mut cur: Option<(f64, f64)> = None;
    for (a, b) in iv {
        cur = match cur {
            Some((ca, cb)) if a <= cb => Some((ca, cb.max(b))),
            Some((ca, cb)) => {
                total += cb - ca;
                Some((a, b))
            }
            None => Some((a, b)),
        };
    }
    if let Some((a, b)) = cur {
        total += b - a;
    }
    total
}

/// Statistics of a run; `operating_seconds` is the in-service time of one
/// vehicle, so total vehicle time is `fleet_size * operating_seconds`.
pub fn compute_metrics(
    log: &EventLog,
    requests: &[Request],
    fleet_size: u32,
    operating_seconds: Seconds,
) -> Metrics {
    let entry: BTreeMap<RequestId, Seconds> =
        requests.iter().map(|r| (r.id, r.entry_time)).collect();
    let rides = rides(log);
    let served = rides.len();
    let service_rate = if requests.is_empty() {
        1.0
    } else {
        served as f64 / requests.len() as f64
    };
    let wait = |r: &Ride| r.pickup - entry.get(&r.request).copied().unwrap_or(r.pickup);
    let rider_seconds: f64 = rides.iter().map(|r| r.dropoff - r.pickup).sum();

    let mut by_vehicle: BTreeMap<VehicleId, Vec<&Ride>> = BTreeMap::new();
    for r in &rides {
        by_vehicle.entry(r.vehicle).or_default().push(r);
    }
    let mut busy = 0.0;
    let mut shared = 0usize;
    for list in by_vehicle.values() {
        busy += union_length(list.iter().map(|r| (r.pickup, r.dropoff)).collect());
        let mut sorted: Vec<&&Ride> = list.iter().collect();
        sorted.sort_by(|a, b| {
            a.pickup
                .total_cmp(&b.pickup)
                .then(a.request.cmp(&b.request))
        });
        let mut flag = vec![false; sorted.len()];
        for i in 0..sorted.len() {
            for j in i + 1..sorted.len() {
                if sorted[j].pickup >= sorted[i].dropoff {
                    break;
                }
                if sorted[i].dropoff.min(sorted[j].dropoff) > sorted[j].pickup {
                    flag[i] = true;
                    flag[j] = true;
                }
            }
        }
        shared += flag.iter().filter(|&&f| f).count();
    }

    let total_vehicle = fleet_size as f64 * operating_seconds;
    let meters: f64 = log.of_kind(EventKind::Drive).map(|e| e.value).sum();

    let mut arrived: BTreeMap<VehicleId, Seconds> = BTreeMap::new();
    let mut pre_waits = Vec::new();
    for e in log.events() {
        match (e.kind, e.vehicle) {
            (EventKind::WaitStart, Some(v)) => {
                arrived.insert(v, e.time);
            }
            (EventKind::ChargeStart, Some(v)) => {
                if let Some(a) = arrived.remove(&v) {
                    pre_waits.push(e.time - a);
                }
            }
            _ => {}
        }
    }

    Metrics {
        service_rate,
        mean_wait_s: mean(rides.iter().map(wait)),
        mean_ride_s: mean(rides.iter().map(|r| r.dropoff - r.pickup)),
        mean_delay_s: mean(
            rides
                .iter()
                .map(|r| r.dropoff - entry.get(&r.request).copied().unwrap_or(r.pickup) - r.direct),
        ),
        abs_utilization: if total_vehicle > 0.0 {
            rider_seconds / total_vehicle
        } else {
            0.0
        },
        rider_share_rate: if busy > 0.0 {
            rider_seconds / busy
        } else {
            0.0
        },
        shared_rate: if served == 0 {
            0.0
        } else {
            shared as f64 / served as f64
        },
        total_distance_km: meters / 1000.0,
        mean_pre_charge_wait_s: mean(pre_waits.into_iter()),
        requests: requests.len(),
        served,
    }
}

/// Served requests picked up too late or delivered with too much delay.
pub fn qos_violations(log: &EventLog, requests: &[Request], qos: &QosPolicy) -> Vec<RequestId> {
    let entry: BTreeMap<RequestId, Seconds> =
        requests.iter().map(|r| (r.id, r.entry_time)).collect();
    rides(log)
        .into_iter()
        .filter(|r| {
            let e = entry.get(&r.request).copied().unwrap_or(f64::NEG_INFINITY);
            r.pickup - e > qos.max_wait + TIME_TOLERANCE
                || r.dropoff - e - r.direct > qos.max_delay + TIME_TOLERANCE
        })
        .map(|r| r.request)
        .collect()
}

/// Instants at which a station had more vehicles charging than chargers.
pub fn station_capacity_violations(log: &EventLog, net: &RoadNetwork) -> Vec<(Seconds, StationId)> {
    let mut on: BTreeMap<StationId, BTreeSet<Option<VehicleId>>> = BTreeMap::new();
    let mut out = Vec::new();
    let events = log.events();
    let mut i = 0;
    while i < events.len() {
        let t = events[i].time;
        let mut j = i;
        while j < events.len() && events[j].time == t {
            j += 1;
        }
        // Chargers released at an instant are free for starts at that instant.
        // A session that starts and ends at the same instant occupies nothing.
        let mut instant: BTreeSet<(StationId, Option<VehicleId>)> = BTreeSet::new();
        for e in &events[i..j] {
            if let (EventKind::ChargeEnd, Some(s)) = (e.kind, e.station) {
                if !on.entry(s).or_default().remove(&e.vehicle) {
                    instant.insert((s, e.vehicle));
                }
            }
        }
        for e in &events[i..j] {
            if let (EventKind::ChargeStart, Some(s)) = (e.kind, e.station) {
                if instant.remove(&(s, e.vehicle)) {
                    continue;
                }
                let set = on.entry(s).or_default();
                set.insert(e.vehicle);
                if set.len() > net.station(s).map_or(0, |x| x.capacity as usize) {
                    out.push((t, s));
                }
            }
        }
        i = j;
    }
    out
}

/// Charge of every vehicle at each of `times`, replayed from the log.
pub fn reconstruct_charges(
    log: &EventLog,
    battery: &BatteryModel,
    fleet_size: u32,
    times: &[Seconds],
) -> Vec<Vec<f64>> {
    let n = fleet_size as usize;
    let mut q = vec![0.0; n];
    let mut session: Vec<Option<(Seconds, f64)>> = vec![None; n];
    let at = |q: &[f64], session: &[Option<(Seconds, f64)>], t: Seconds| -> Vec<f64> {
        (0..n)
            .map(|v| match session[v] {
                Some((s, q0)) => (q0 + battery.eta * (t - s) / 60.0).min(1.0),
                None => q[v],
            })
            .collect()
    };
    let mut out = Vec::with_capacity(times.len());
    let mut k = 0;
    for &t in times {
        while k < log.len() && log.events()[k].time <= t {
            let e = log.events()[k];
            k += 1;
            let Some(v) = e.vehicle.map(|v| v.0 as usize).filter(|&v| v < n) else {
                continue;
            };
            match e.kind {
                EventKind::Init => q[v] = e.value,
                EventKind::Drive => q[v] = battery.discharge(q[v], e.value),
                EventKind::ChargeStart => session[v] = Some((e.time, q[v])),
                EventKind::ChargeEnd => {
                    if let Some((s, q0)) = session[v].take() {
                        q[v] = (q0 + battery.eta * (e.time - s) / 60.0).min(1.0);
                    }
                }
                _ => {}
            }
        }
        out.push(at(&q, &session, t));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeseriesRow {
    pub t_s: Seconds,
    /// Mean count of charging vehicles over the bucket's batch boundaries.
    pub charging_count: f64,
    pub distance_km: f64,
    /// Share served of the requests made up to the end of the bucket.
    pub rolling_service_rate: f64,
}

/// Per-bucket series over `[start, end)`; `samples` are `(time, vehicles charging)`.
pub fn compute_timeseries(
    log: &EventLog,
    requests: &[Request],
    samples: &[(Seconds, u32)],
    start: Seconds,
    end: Seconds,
) -> Vec<TimeseriesRow> {
    let buckets = ((end - start) / BUCKET).ceil().max(0.0) as usize;
    let bucket_of = |t: Seconds| ((t - start) / BUCKET).floor();
    let mut charging = vec![(0.0, 0usize); buckets];
    for &(t, c) in samples {
        let b = bucket_of(t);
        if b >= 0.0 && (b as usize) < buckets {
            charging[b as usize].0 += c as f64;
            charging[b as usize].1 += 1;
        }
    }
    let mut meters = vec![0.0; buckets];
    for e in log.of_kind(EventKind::Drive) {
        let b = bucket_of(e.time).max(0.0) as usize;
        meters[b.min(buckets.saturating_sub(1))] += e.value;
    }
    let served: BTreeMap<RequestId, ()> = rides(log).into_iter().map(|r| (r.request, ())).collect();
    (0..buckets)
        .map(|b| {
            let hi = start + (b + 1) as f64 * BUCKET;
            let made: Vec<&Request> = requests.iter().filter(|r| r.entry_time < hi).collect();
            let ok = made.iter().filter(|r| served.contains_key(&r.id)).count();
            TimeseriesRow {
                t_s: start + b as f64 * BUCKET,
                charging_count: if charging[b].1 == 0 {
                    0.0
                } else {
                    charging[b].0 / charging[b].1 as f64
                },
                distance_km: meters[b] / 1000.0,
                rolling_service_rate: if made.is_empty() {
                    1.0
                } else {
                    ok as f64 / made.len() as f64
                },
            }
        })
        .collect()
}

pub const METRICS_HEADER: [&str; 12] = [
    "method",
    "Rate",
    "WT",
    "RT",
    "delay",
    "Abs",
    "rider",
    "shared",
    "distance",
    "pre_charge_wait",
    "requests",
    "served",
];

pub fn save_metrics_csv(path: &Path, rows: &[(String, Metrics)]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for (name, m) in rows {
        w.write_record([
            name.clone(),
            m.service_rate.to_string(),
            m.mean_wait_s.to_string(),
            m.mean_ride_s.to_string(),
            m.mean_delay_s.to_string(),
            m.abs_utilization.to_string(),
            m.rider_share_rate.to_string(),
            m.shared_rate.to_string(),
            m.total_distance_km.to_string(),
            m.mean_pre_charge_wait_s.to_string(),
            m.requests.to_string(),
            m.served.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_timeseries_csv(path: &Path, rows: &[TimeseriesRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "t_s",
        "charging_count",
        "distance_km",
        "rolling_service_rate",
    ])?;
    for r in rows {
        w.write_record([
            r.t_s.to_string(),
            r.charging_count.to_string(),
            r.distance_km.to_string(),
            r.rolling_service_rate.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
