//! Demand-unaware charging baseline: vehicles below a charge threshold stop
//! taking riders and, once empty, book the station where they can start
//! charging soonest.

use thiserror::Error;

use crate::battery::BatteryModel;
use crate::network::{RoadNetwork, StationId};
use crate::pooling::{ChargeSlot, VehicleId, VehicleState};
use crate::Seconds;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkConfig {
    pub threshold: f64,
    /// Longest travel time to a candidate station.
    pub radius: Seconds,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            threshold: 0.05,
            radius: 900.0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BenchmarkError {
    #[error("no station within {0} s")]
    NoStationInRange(Seconds),
}

/// FIFO reservations: the time each charger of each station becomes free.
#[derive(Debug, Clone, PartialEq)]
pub struct StationBook {
    free_at: Vec<(StationId, Vec<Seconds>)>,
}

impl StationBook {
    pub fn new(net: &RoadNetwork) -> Self {
        StationBook {
            free_at: net
                .stations()
                .iter()
                .map(|s| (s.id, vec![f64::NEG_INFINITY; s.capacity as usize]))
                .collect(),
        }
    }

    /// Earliest time any charger of `station` is free.
    pub fn earliest(&self, station: StationId) -> Seconds {
        self.free_at
            .iter()
            .find(|(s, _)| *s == station)
            .map(|(_, f)| f.iter().copied().fold(f64::INFINITY, f64::min))
            .unwrap_or(f64::INFINITY)
    }

    fn reserve(&mut self, station: StationId, start: Seconds, duration: Seconds) {
        if let Some((_, f)) = self.free_at.iter_mut().find(|(s, _)| *s == station) {
            let k = (0..f.len())
                .min_by(|&a, &b| f[a].total_cmp(&f[b]).then(a.cmp(&b)))
                .expect("station has chargers");
            f[k] = start + duration;
        }
    }
}

/// A station booking made during [`benchmark_step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationRequest {
    pub vehicle: VehicleId,
    pub station: StationId,
    pub start: Seconds,
    /// False when no station was within the radius.
    pub in_range: bool,
}

/// Among stations within `radius`, the one minimising
/// `max(arrival, earliest free charger)`; ties go to the smaller id.
pub fn greedy_station_assignment(
    vehicle: &VehicleState,
    book: &StationBook,
    net: &RoadNetwork,
    now: Seconds,
    radius: Seconds,
) -> Result<(StationId, Seconds), BenchmarkError> {
    let (node, t0) = vehicle.plan_end(net, now);
    net.stations()
        .iter()
        .filter_map(|s| {
            let tt = net.tt(node, s.node);
            (tt <= radius).then(|| (s.id, (t0 + tt).max(book.earliest(s.id))))
        })
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .ok_or(BenchmarkError::NoStationInRange(radius))
}

/// Threshold rule for one batch. Vehicles at or below the threshold stop
/// accepting riders; those with no riders left book a station; vehicles
/// above it drop any booking.
pub fn benchmark_step(
    cfg: &BenchmarkConfig,
    fleet: &mut [VehicleState],
    book: &mut StationBook,
    net: &RoadNetwork,
    battery: &BatteryModel,
    now: Seconds,
) -> Vec<StationRequest> {
    let mut out = Vec::new();
    for v in fleet.iter_mut() {
        if v.charge > cfg.threshold {
            v.charge_slot = None;
            v.accepting = true;
            continue;
        }
        v.accepting = false;
        if !v.is_empty() || v.charge_slot.is_some() {
            continue;
        }
        let (station, start, in_range) =
            match greedy_station_assignment(v, book, net, now, cfg.radius) {
                Ok((s, t)) => (s, t, true),
                Err(_) => {
                    let (node, t0) = v.plan_end(net, now);
                    let (s, tt) = net.nearest_station(node).expect("network has stations");
                    (s, (t0 + tt).max(book.earliest(s)), false)
                }
            };
        let (node, _) = v.plan_end(net, now);
        let st_node = net.station(station).expect("known station").node;
        let q_arrive =
            battery.discharge(v.planned_charge(net, battery, now), net.dist(node, st_node));
        let duration = ((1.0 - q_arrive).max(0.0) / battery.eta) * 60.0;
        book.reserve(station, start, duration);
        v.charge_slot = Some(ChargeSlot {
            start,
            duration,
            station: Some(station),
        });
        out.push(StationRequest {
            vehicle: v.id,
            station,
            start,
            in_range,
        });
    }
    out
}
