//! Batch ride assignment: shareability graph, trip enumeration, optimal
//! routing of a vehicle's riders, trip assignment and rebalancing.

mod assign;
mod ctsp;
mod graph;
mod rebalance;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::battery::BatteryModel;
use crate::demand::{QosPolicy, Request, RequestId};
use crate::network::{NodeId, RoadNetwork, StationId};
use crate::Seconds;

pub use assign::{assign_trips, assign_trips_weighted, Assignment};
pub use ctsp::{solve_ctsp, RoutePlan};
pub use graph::{build_shareability_graph, enumerate_trips, ShareabilityGraph, Trip};
pub use rebalance::{min_cost_matching, rebalance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VehicleId(pub u32);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Tunables shared by the pooling stages.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolingConfig {
    pub qos: QosPolicy,
    /// Travel allowance to a charging station not yet chosen.
    pub buffer_d: Seconds,
    /// Vehicles considered per request, nearest first.
    pub nearest_vehicle_cap: usize,
    pub max_riders: usize,
    /// Trips kept per vehicle.
    pub trip_cap: usize,
    /// Cost of leaving a request unserved.
    pub penalty: f64,
}

impl Default for PoolingConfig {
    fn default() -> Self {
        PoolingConfig {
            qos: QosPolicy::default(),
            buffer_d: 600.0,
            nearest_vehicle_cap: 30,
            max_riders: 10,
            trip_cap: 2000,
            penalty: 86_400.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum StopKind {
    Pickup(RequestId),
    Dropoff(RequestId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stop {
    pub node: NodeId,
    pub kind: StopKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnboardRider {
    pub request: Request,
    pub pickup_time: Seconds,
}

/// Next planned charge in wall-clock time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChargeSlot {
    pub start: Seconds,
    pub duration: Seconds,
    pub station: Option<StationId>,
}

/// Where a vehicle is: at `node`, or partway along the arc to `to`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position {
    pub node: NodeId,
    pub heading: Option<ArcProgress>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArcProgress {
    pub to: NodeId,
    pub remaining_time: Seconds,
    pub remaining_distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub id: VehicleId,
    pub position: Position,
    pub charge: f64,
    pub capacity: u32,
    pub onboard: Vec<OnboardRider>,
    /// Riders assigned to this vehicle and not yet picked up.
    pub pending: Vec<Request>,
    pub route: Vec<Stop>,
    pub charge_slot: Option<ChargeSlot>,
    pub accepting: bool,
}

impl VehicleState {
    pub fn idle(id: VehicleId, node: NodeId, capacity: u32, charge: f64) -> Self {
        VehicleState {
            id,
            position: Position {
                node,
                heading: None,
            },
            charge,
            capacity,
            onboard: Vec::new(),
            pending: Vec::new(),
            route: Vec::new(),
            charge_slot: None,
            accepting: true,
        }
    }

    /// First node the vehicle can change course at, and when it gets there.
    pub fn anchor(&self, now: Seconds) -> (NodeId, Seconds) {
        match self.position.heading {
            Some(a) => (a.to, now + a.remaining_time),
            None => (self.position.node, now),
        }
    }

    /// Arrival time at each stop of the current route.
    pub fn route_times(&self, net: &RoadNetwork, now: Seconds) -> Vec<Seconds> {
        let (mut node, mut t) = self.anchor(now);
        self.route
            .iter()
            .map(|s| {
                t += net.tt(node, s.node);
                node = s.node;
                t
            })
            .collect()
    }

    /// Node and time at which the current route ends.
    pub fn plan_end(&self, net: &RoadNetwork, now: Seconds) -> (NodeId, Seconds) {
        match (self.route.last(), self.route_times(net, now).last()) {
            (Some(s), Some(&t)) => (s.node, t),
            _ => self.anchor(now),
        }
    }

    /// Charge predicted at the end of the current route.
    pub fn planned_charge(&self, net: &RoadNetwork, battery: &BatteryModel, _now: Seconds) -> f64 {
        let mut dist = self
            .position
            .heading
            .map(|a| a.remaining_distance)
            .unwrap_or(0.0);
        let (mut node, _) = self.anchor(0.0);
        for s in &self.route {
            dist += net.dist(node, s.node);
            node = s.node;
        }
        battery.discharge(self.charge, dist)
    }

    pub fn is_empty(&self) -> bool {
        self.onboard.is_empty() && self.pending.is_empty()
    }
}

/// Time a route ending at `node` must leave before the charge slot starts:
/// with a station, the travel there; otherwise the larger of the travel to
/// the nearest station and the buffer.
pub(crate) fn charge_lead(
    net: &RoadNetwork,
    slot: &ChargeSlot,
    node: NodeId,
    buffer_d: Seconds,
) -> Seconds {
    match slot.station.and_then(|s| net.station(s)) {
        Some(st) => net.tt(node, st.node),
        None => net
            .nearest_station(node)
            .map(|(_, t)| t)
            .unwrap_or(0.0)
            .max(buffer_d),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::generate_grid;

    #[test]
    fn anchor_and_route_end() {
        let net = generate_grid(2, 3, 60.0, 100.0).unwrap();
        let mut v = VehicleState::idle(VehicleId(0), NodeId(0), 4, 1.0);
        assert_eq!(v.anchor(10.0), (NodeId(0), 10.0));
        v.position.heading = Some(ArcProgress {
            to: NodeId(1),
            remaining_time: 20.0,
            remaining_distance: 33.0,
        });
        assert_eq!(v.anchor(10.0), (NodeId(1), 30.0));
        v.route = vec![
            Stop {
                node: NodeId(2),
                kind: StopKind::Pickup(RequestId(1)),
            },
            Stop {
                node: NodeId(5),
                kind: StopKind::Dropoff(RequestId(1)),
            },
        ];
        assert_eq!(v.route_times(&net, 10.0), vec![90.0, 150.0]);
        assert_eq!(v.plan_end(&net, 10.0), (NodeId(5), 150.0));
        let battery = BatteryModel::new(Default::default()).unwrap();
        let q = v.planned_charge(&net, &battery, 10.0);
        assert!((q - (1.0 - 233.0 / 180_000.0)).abs() < 1e-12);
    }
}
