//! Shareability graph and trip enumeration.

use std::collections::{BTreeMap, BTreeSet};

use crate::demand::{Request, RequestId};
use crate::network::RoadNetwork;
use crate::pooling::ctsp::{baseline_duration, solve_with_baseline};
use crate::pooling::{PoolingConfig, RoutePlan, VehicleId, VehicleState};
use crate::Seconds;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ShareabilityGraph {
    pub rv_edges: BTreeSet<(VehicleId, RequestId)>,
    /// Pairs stored with the smaller id first.
    pub rr_edges: BTreeSet<(RequestId, RequestId)>,
}

impl ShareabilityGraph {
    pub fn shareable(&self, a: RequestId, b: RequestId) -> bool {
        self.rr_edges.contains(&(a.min(b), a.max(b)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trip {
    pub vehicle: VehicleId,
    /// Sorted rider ids.
    pub riders: Vec<RequestId>,
    pub route: RoutePlan,
    pub cost: Seconds,
}

/// Whether a vehicle waiting at either origin at `now` could serve both.
fn ideal_pair(
    net: &RoadNetwork,
    cfg: &PoolingConfig,
    a: &Request,
    b: &Request,
    now: Seconds,
) -> bool {
    [a.origin, b.origin].iter().any(|&o| {
        let v = VehicleState::idle(VehicleId(u32::MAX), o, 2, 1.0);
        solve_with_baseline(net, &v, &[*a, *b], &cfg.qos, cfg.buffer_d, now, 0.0).is_some()
    })
}

/// Vehicles tried for `r`: the nearest by travel time to its origin, plus
/// any vehicle already holding it.
fn candidates<'v>(
    net: &RoadNetwork,
    cfg: &PoolingConfig,
    vehicles: &'v [VehicleState],
    r: &Request,
    now: Seconds,
) -> Vec<&'v VehicleState> {
    let mut near: Vec<(Seconds, &VehicleState)> = vehicles
        .iter()
        .map(|v| {
            let (n, t) = v.anchor(now);
            (t + net.tt(n, r.origin), v)
        })
        .filter(|(t, _)| *t <= r.entry_time + cfg.qos.max_wait + 1e-9)
        .collect();
    near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id)));
    let mut out: Vec<&VehicleState> = near
        .into_iter()
        .take(cfg.nearest_vehicle_cap)
        .map(|x| x.1)
        .collect();
    for v in vehicles {
        if v.pending.iter().any(|p| p.id == r.id) && !out.iter().any(|o| o.id == v.id) {
            out.push(v);
        }
    }
    out
}

pub fn build_shareability_graph(
    net: &RoadNetwork,
    cfg: &PoolingConfig,
    vehicles: &[VehicleState],
    requests: &[Request],
    now: Seconds,
) -> ShareabilityGraph {
    let mut g = ShareabilityGraph::default();
    for (i, a) in requests.iter().enumerate() {
        for b in &requests[i + 1..] {
            if ideal_pair(net, cfg, a, b, now) {
                g.rr_edges.insert((a.id.min(b.id), a.id.max(b.id)));
            }
        }
    }
    let baselines: BTreeMap<VehicleId, Seconds> = vehicles
        .iter()
        .map(|v| (v.id, baseline_duration(net, v, &cfg.qos, cfg.buffer_d, now)))
        .collect();
    for r in requests {
        for v in candidates(net, cfg, vehicles, r, now) {
            if solve_with_baseline(net, v, &[*r], &cfg.qos, cfg.buffer_d, now, baselines[&v.id])
                .is_some()
            {
                g.rv_edges.insert((v.id, r.id));
            }
        }
    }
    g
}

/// Every feasible trip of up to `cfg.max_riders` riders per vehicle, grown
/// one rider at a time from feasible smaller trips, plus each vehicle's
/// current pending set.
pub fn enumerate_trips(
    net: &RoadNetwork,
    cfg: &PoolingConfig,
    graph: &ShareabilityGraph,
    vehicles: &[VehicleState],
    requests: &[Request],
    now: Seconds,
) -> Vec<Trip> {
    let by_id: BTreeMap<RequestId, &Request> = requests.iter().map(|r| (r.id, r)).collect();
    let mut trips = Vec::new();
    for v in vehicles {
        let baseline = baseline_duration(net, v, &cfg.qos, cfg.buffer_d, now);
        let solve = |riders: &[RequestId]| {
            let rs: Vec<Request> = riders.iter().map(|id| *by_id[id]).collect();
            solve_with_baseline(net, v, &rs, &cfg.qos, cfg.buffer_d, now, baseline)
        };
        let reach: Vec<RequestId> = graph
            .rv_edges
            .range((v.id, RequestId(0))..=(v.id, RequestId(u64::MAX)))
            .map(|&(_, r)| r)
            .filter(|r| by_id.contains_key(r))
            .collect();
        let mut mine: Vec<Trip> = Vec::new();
        let mut level: Vec<Vec<RequestId>> = Vec::new();
        for &r in &reach {
            if mine.len() >= cfg.trip_cap {
                break;
            }
            if let Some(route) = solve(&[r]) {
                level.push(vec![r]);
                mine.push(Trip {
                    vehicle: v.id,
                    riders: vec![r],
                    cost: route.cost,
                    route,
                });
            }
        }
        let mut k = 1;
        while k < cfg.max_riders && !level.is_empty() && mine.len() < cfg.trip_cap {
            let known: BTreeSet<&Vec<RequestId>> = level.iter().collect();
            let mut next = Vec::new();
            'outer: for base in &level {
                let last = *base.last().expect("trips are nonempty");
                for &r in reach.iter().filter(|&&r| r > last) {
                    if mine.len() >= cfg.trip_cap {
                        break 'outer;
                    }
                    if !base.iter().all(|&b| graph.shareable(b, r)) {
                        continue;
                    }
                    let mut cand = base.clone();
                    cand.push(r);
                    let subsets_ok = (0..base.len()).all(|skip| {
                        let sub: Vec<RequestId> = cand
                            .iter()
                            .enumerate()
                            .filter(|(i, _)| *i != skip)
                            .map(|(_, &x)| x)
                            .collect();
                        known.contains(&sub)
                    });
                    if !subsets_ok {
                        continue;
                    }
                    if let Some(route) = solve(&cand) {
                        mine.push(Trip {
                            vehicle: v.id,
                            riders: cand.clone(),
                            cost: route.cost,
                            route,
                        });
                        next.push(cand);
                    }
                }
            }
            level = next;
            k += 1;
        }
        let mut pending: Vec<RequestId> = v
            .pending
            .iter()
            .map(|r| r.id)
            .filter(|r| by_id.contains_key(r))
            .collect();
        pending.sort();
        if !pending.is_empty() && !mine.iter().any(|t| t.riders == pending) {
            if let Some(route) = solve(&pending) {
                mine.push(Trip {
                    vehicle: v.id,
                    riders: pending,
                    cost: route.cost,
                    route,
                });
            }
        }
        trips.extend(mine);
    }
    trips
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::QosPolicy;
    use crate::network::{path_network, NodeId};

    fn req(id: u64, o: u32, d: u32) -> Request {
        Request {
            id: RequestId(id),
            entry_time: 0.0,
            origin: NodeId(o),
            destination: NodeId(d),
        }
    }

    #[test]
    fn far_requests_do_not_share() {
        let net = path_network(10, 60.0, 100.0);
        let cfg = PoolingConfig {
            qos: QosPolicy {
                max_wait: 120.0,
                max_delay: 600.0,
            },
            ..PoolingConfig::default()
        };
        let v = vec![VehicleState::idle(VehicleId(0), NodeId(0), 4, 1.0)];
        let rs = vec![req(0, 0, 1), req(1, 5, 6)];
        let g = build_shareability_graph(&net, &cfg, &v, &rs, 0.0);
        assert!(g.rr_edges.is_empty());
        assert!(g.rv_edges.contains(&(VehicleId(0), RequestId(0))));
        assert!(!g.rv_edges.contains(&(VehicleId(0), RequestId(1))));
        let trips = enumerate_trips(&net, &cfg, &g, &v, &rs, 0.0);
        assert_eq!(trips.len(), 1);
    }

    #[test]
    fn triple_trip_enumerated() {
        let net = path_network(6, 60.0, 100.0);
        let cfg = PoolingConfig {
            max_riders: 3,
            ..PoolingConfig::default()
        };
        let v = vec![
            VehicleState::idle(VehicleId(0), NodeId(0), 4, 1.0),
            VehicleState::idle(VehicleId(1), NodeId(1), 4, 1.0),
        ];
        let rs = vec![req(0, 0, 5), req(1, 1, 5), req(2, 1, 4)];
        let g = build_shareability_graph(&net, &cfg, &v, &rs, 0.0);
        let trips = enumerate_trips(&net, &cfg, &g, &v, &rs, 0.0);
        for vid in [0, 1] {
            assert!(trips
                .iter()
                .any(|t| t.vehicle == VehicleId(vid) && t.riders.len() == 3));
        }
        assert_eq!(trips.len(), 14);
        for t in &trips {
            for (i, a) in t.riders.iter().enumerate() {
                for b in &t.riders[i + 1..] {
                    assert!(g.shareable(*a, *b));
                }
            }
        }
    }
}
