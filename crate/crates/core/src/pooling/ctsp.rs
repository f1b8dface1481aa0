//! Optimal stop ordering for one vehicle under precedence, capacity,
//! wait/delay limits and the vehicle's next charge slot.

use crate::demand::{QosPolicy, Request};
use crate::network::{NodeId, RoadNetwork};
use crate::pooling::{charge_lead, Stop, StopKind, VehicleState};
use crate::Seconds;

#[derive(Debug, Clone, PartialEq)]
pub struct RoutePlan {
    pub stops: Vec<Stop>,
    /// Arrival time at each stop.
    pub arrivals: Vec<Seconds>,
    /// Travel time from the vehicle's anchor to the last stop.
    pub duration: Seconds,
    /// Extra travel time over the vehicle's route for its onboard riders alone.
    pub cost: Seconds,
}

impl RoutePlan {
    pub fn end(&self) -> Option<(NodeId, Seconds)> {
        Some((self.stops.last()?.node, *self.arrivals.last()?))
    }
}

/// Best route serving the vehicle's onboard riders plus `new_riders`, or
/// `None` when no ordering meets every constraint.
pub fn solve_ctsp(
    net: &RoadNetwork,
    vehicle: &VehicleState,
    new_riders: &[Request],
    qos: &QosPolicy,
    buffer_d: Seconds,
    now: Seconds,
) -> Option<RoutePlan> {
    let baseline = baseline_duration(net, vehicle, qos, buffer_d, now);
    solve_with_baseline(net, vehicle, new_riders, qos, buffer_d, now, baseline)
}

/// Travel time of the best onboard-only route; ignores limits when those
/// cannot be met so the incremental cost stays well defined.
pub(crate) fn baseline_duration(
    net: &RoadNetwork,
    vehicle: &VehicleState,
    qos: &QosPolicy,
    buffer_d: Seconds,
    now: Seconds,
) -> Seconds {
    let mut s = Search::new(net, vehicle, &[], qos, buffer_d, now, true);
    s.run();
    if let Some(b) = s.best {
        return b.0;
    }
    let mut s = Search::new(net, vehicle, &[], qos, buffer_d, now, false);
    s.run();
    s.best.map(|b| b.0).unwrap_or(0.0)
}

pub(crate) fn solve_with_baseline(
    net: &RoadNetwork,
    vehicle: &VehicleState,
    new_riders: &[Request],
    qos: &QosPolicy,
    buffer_d: Seconds,
    now: Seconds,
    baseline: Seconds,
) -> Option<RoutePlan> {
    if new_riders.is_empty() && vehicle.onboard.is_empty() {
        return Some(RoutePlan {
            stops: Vec::new(),
            arrivals: Vec::new(),
            duration: 0.0,
            cost: 0.0,
        });
    }
    let mut s = Search::new(net, vehicle, new_riders, qos, buffer_d, now, true);
    s.run();
    let (duration, order) = s.best?;
    let mut stops = Vec::with_capacity(order.len());
    let mut arrivals = Vec::with_capacity(order.len());
    let mut t = s.t0;
    let mut at = 0usize;
    for &k in &order {
        t += s.dist[at][k + 1];
        at = k + 1;
        stops.push(s.stops[k].stop);
        arrivals.push(t);
    }
    Some(RoutePlan {
        stops,
        arrivals,
        duration,
        cost: (duration - baseline).max(0.0),
    })
}

#[derive(Clone, Copy)]
struct Item {
    stop: Stop,
    deadline: Seconds,
    /// Index of the pickup that must precede this drop-off.
    after: Option<usize>,
    /// Direct travel time origin to destination, for unpicked riders.
    direct: Seconds,
}

struct Search<'a> {
    vehicle: &'a VehicleState,
    stops: Vec<Item>,
    /// Travel times among anchor (0) and stops (1..).
    dist: Vec<Vec<Seconds>>,
    to_station: Vec<Seconds>,
    t0: Seconds,
    buffer_d: Seconds,
    limits: bool,
    best: Option<(Seconds, Vec<usize>)>,
    path: Vec<usize>,
}

impl<'a> Search<'a> {
    fn new(
        net: &RoadNetwork,
        vehicle: &'a VehicleState,
        new_riders: &[Request],
        qos: &QosPolicy,
        buffer_d: Seconds,
        now: Seconds,
        limits: bool,
    ) -> Self {
        let (anchor, t0) = vehicle.anchor(now);
        let mut stops = Vec::new();
        let mut onboard: Vec<&Request> = vehicle.onboard.iter().map(|o| &o.request).collect();
        onboard.sort_by_key(|r| r.id);
        for r in onboard {
            let direct = net.tt(r.origin, r.destination);
            stops.push(Item {
                stop: Stop {
                    node: r.destination,
                    kind: StopKind::Dropoff(r.id),
                },
                deadline: r.entry_time + direct + qos.max_delay,
                after: None,
                direct: 0.0,
            });
        }
        let mut riders: Vec<&Request> = new_riders.iter().collect();
        riders.sort_by_key(|r| r.id);
        for r in riders {
            let direct = net.tt(r.origin, r.destination);
            let p = stops.len();
            stops.push(Item {
                stop: Stop {
                    node: r.origin,
                    kind: StopKind::Pickup(r.id),
                },
                deadline: r.entry_time + qos.max_wait,
                after: None,
                direct,
            });
            stops.push(Item {
                stop: Stop {
                    node: r.destination,
                    kind: StopKind::Dropoff(r.id),
                },
                deadline: r.entry_time + direct + qos.max_delay,
                after: Some(p),
                direct: 0.0,
            });
        }
        let nodes: Vec<NodeId> = std::iter::once(anchor)
            .chain(stops.iter().map(|s| s.stop.node))
            .collect();
        let dist = nodes
            .iter()
            .map(|&a| nodes.iter().map(|&b| net.tt(a, b)).collect())
            .collect();
        let to_station = match &vehicle.charge_slot {
            Some(slot) if limits => nodes
                .iter()
                .map(|&n| charge_lead(net, slot, n, buffer_d))
                .collect(),
            _ => Vec::new(),
        };
        Search {
            vehicle,
            stops,
            dist,
            to_station,
            t0,
            buffer_d,
            limits,
            best: None,
            path: Vec::new(),
        }
    }

    fn run(&mut self) {
        let n = self.stops.len();
        let mut done = vec![false; n];
        let load = self.vehicle.onboard.len() as u32;
        self.dfs(0, self.t0, load, &mut done);
    }

    fn slot_ok(&self, at: usize, t: Seconds) -> bool {
        match (&self.vehicle.charge_slot, self.to_station.get(at)) {
            (Some(slot), Some(lead)) => t + lead <= slot.start + 1e-9,
            _ => true,
        }
    }

    fn dfs(&mut self, at: usize, t: Seconds, load: u32, done: &mut [bool]) {
        let n = self.stops.len();
        let elapsed = t - self.t0;
        if let Some((b, _)) = &self.best {
            if elapsed >= b - 1e-9 {
                return;
            }
        }
        if self.path.len() == n {
            if self.slot_ok(at, t) {
                self.best = Some((elapsed, self.path.clone()));
            }
            return;
        }
        let mut reach_bound: Seconds = 0.0;
        for k in 0..n {
            if done[k] {
                continue;
            }
            let it = self.stops[k];
            let arrive = t + self.dist[at][k + 1];
            reach_bound = reach_bound.max(arrive - t);
            if self.limits {
                let late = match it.after {
                    Some(p) if !done[p] => {
                        t + self.dist[at][p + 1] + self.stops[p].direct > it.deadline + 1e-9
                    }
                    _ => arrive > it.deadline + 1e-9,
                };
                if late {
                    return;
                }
            }
        }
        if let Some((b, _)) = &self.best {
            if elapsed + reach_bound >= b - 1e-9 {
                return;
            }
        }
        if let (Some(slot), true) = (&self.vehicle.charge_slot, self.limits) {
            // Arrival at the station from the route's end is no earlier than
            // arrival from here; the buffer bounds the lead without a station.
            let lead = if slot.station.is_some() {
                self.to_station[at]
            } else {
                self.buffer_d
            };
            if t + lead > slot.start + 1e-9 {
                return;
            }
        }
        for k in 0..n {
            if done[k] {
                continue;
            }
            let it = self.stops[k];
            if let Some(p) = it.after {
                if !done[p] {
                    continue;
                }
            }
            let is_pickup = matches!(it.stop.kind, StopKind::Pickup(_));
            if is_pickup && load >= self.vehicle.capacity {
                continue;
            }
            let arrive = t + self.dist[at][k + 1];
            if self.limits && arrive > it.deadline + 1e-9 {
                continue;
            }
            done[k] = true;
            self.path.push(k);
            let next_load = if is_pickup { load + 1 } else { load - 1 };
            self.dfs(k + 1, arrive, next_load, done);
            self.path.pop();
            done[k] = false;
        }
    }
}
