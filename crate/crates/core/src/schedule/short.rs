//! Short-horizon station assignment under per-station capacity.

use std::collections::{BTreeMap, BTreeSet};

use crate::battery::BatteryModel;
use crate::network::{RoadNetwork, StationId};
use crate::pooling::{VehicleId, VehicleState};
use crate::schedule::{ChargeSchedule, ScheduleError};
use crate::Seconds;

#[derive(Debug, Clone, PartialEq)]
pub struct ShortJob {
    pub vehicle: VehicleId,
    pub start: usize,
    pub duration: usize,
    /// Stations the vehicle can reach in time, with their travel-time cost.
    pub cost: BTreeMap<StationId, Seconds>,
    pub pinned: Option<StationId>,
}

impl ShortJob {
    pub fn end(&self) -> usize {
        self.start + self.duration
    }

    pub fn reachable(&self) -> impl Iterator<Item = StationId> + '_ {
        self.cost.keys().copied()
    }

    fn covers(&self, t: usize) -> bool {
        self.start <= t && t < self.end()
    }

    /// Reachable stations, cheapest first, ties by id.
    fn by_cost(&self) -> Vec<(StationId, Seconds)> {
        let mut v: Vec<(StationId, Seconds)> = self.cost.iter().map(|(s, c)| (*s, *c)).collect();
        v.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        v
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ShortInstance {
    pub jobs: Vec<ShortJob>,
    pub stations: Vec<(StationId, u32)>,
}

impl ShortInstance {
    fn capacity(&self, s: StationId) -> u32 {
        self.stations
            .iter()
            .find(|(id, _)| *id == s)
            .map(|(_, k)| *k)
            .unwrap_or(0)
    }

    pub fn total_cost(&self, assignment: &BTreeMap<VehicleId, StationId>) -> Seconds {
        self.jobs
            .iter()
            .filter_map(|j| assignment.get(&j.vehicle).and_then(|s| j.cost.get(s)))
            .sum()
    }

    /// Whether every station stays within capacity in every period.
    pub fn respects_capacity(&self, assignment: &BTreeMap<VehicleId, StationId>) -> bool {
        let end = self.jobs.iter().map(|j| j.end()).max().unwrap_or(0);
        (0..end).all(|t| {
            self.stations.iter().all(|&(s, k)| {
                self.jobs
                    .iter()
                    .filter(|j| j.covers(t) && assignment.get(&j.vehicle) == Some(&s))
                    .count() as u32
                    <= k
            })
        })
    }
}

/// One period per maximal clique of the interval graph of `[start, end)`
/// intervals: the last start before an end in sweep order.
pub fn clique_checkpoints(intervals: &[(usize, usize)]) -> Vec<usize> {
    let mut events: Vec<(usize, bool)> = Vec::with_capacity(intervals.len() * 2);
    for &(s, e) in intervals {
        if e > s {
            events.push((s, true));
            events.push((e, false));
        }
    }
    // Ends sort before starts at equal times.
    events.sort();
    let mut out = Vec::new();
    let mut last_start = None;
    for (t, is_start) in events {
        if is_start {
            last_start = Some(t);
        } else if let Some(s) = last_start.take() {
            out.push(s);
        }
    }
    out
}

/// Jobs for every slot starting in `[now, now + t_sl + delta]`, plus slots
/// already under way at a station. Times are on a grid of `period_length`
/// from `origin`.
#[allow(clippy::too_many_arguments)]
pub fn build_short_instance(
    schedule: &ChargeSchedule,
    fleet: &[VehicleState],
    network: &RoadNetwork,
    battery: &BatteryModel,
    now: Seconds,
    t_sl: Seconds,
    delta: Seconds,
    period_length: Seconds,
    origin: Seconds,
) -> ShortInstance {
    let stations: Vec<(StationId, u32)> = network
        .stations()
        .iter()
        .map(|s| (s.id, s.capacity))
        .collect();
    let mut jobs = Vec::new();
    for vs in fleet {
        for slot in schedule.slots(vs.id) {
            let start_s = origin + slot.start as f64 * period_length;
            let end_s = origin + slot.end() as f64 * period_length;
            let under_way = start_s < now && end_s > now && slot.station.is_some();
            if !(under_way || (start_s >= now && start_s <= now + t_sl + delta)) {
                continue;
            }
            let (node, t_c) = vs.plan_end(network, now);
            let q = vs.planned_charge(network, battery, now);
            let mut cost = BTreeMap::new();
            for st in network.stations() {
                let tt = network.tt(node, st.node);
                let left = battery.discharge(q, network.dist(node, st.node));
                if t_c + tt <= start_s + 1e-9 && left >= -battery.q_min {
                    cost.insert(st.id, tt);
                }
            }
            if let Some(p) = slot.station {
                cost.entry(p).or_insert_with(|| {
                    network.tt(node, network.station(p).map(|x| x.node).unwrap_or(node))
                });
                if under_way {
                    cost.retain(|s, _| *s == p);
                }
            }
            jobs.push(ShortJob {
                vehicle: vs.id,
                start: slot.start,
                duration: slot.duration,
                cost,
                pinned: slot.station,
            });
            break;
        }
    }
    ShortInstance { jobs, stations }
}

/// Minimum total-cost assignment with every job at a reachable station and
/// every station within capacity.
pub fn solve_short_exact(
    instance: &ShortInstance,
) -> Result<BTreeMap<VehicleId, StationId>, ScheduleError> {
    let mut order: Vec<usize> = (0..instance.jobs.len()).collect();
    order.sort_by_key(|&i| (instance.jobs[i].cost.len(), instance.jobs[i].vehicle));
    let intervals: Vec<(usize, usize)> = instance.jobs.iter().map(|j| (j.start, j.end())).collect();
    let checkpoints = clique_checkpoints(&intervals);
    let mut search = ShortSearch {
        inst: instance,
        order: &order,
        options: order.iter().map(|&i| instance.jobs[i].by_cost()).collect(),
        covers: order
            .iter()
            .map(|&i| {
                checkpoints
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| instance.jobs[i].covers(c))
                    .map(|(k, _)| k)
                    .collect()
            })
            .collect(),
        load: vec![BTreeMap::new(); checkpoints.len()],
        suffix_min: vec![0.0; order.len() + 1],
        pick: vec![None; order.len()],
        best: f64::INFINITY,
        best_pick: None,
    };
    for k in (0..order.len()).rev() {
        let m = search.options[k]
            .first()
            .map(|x| x.1)
            .unwrap_or(f64::INFINITY);
        search.suffix_min[k] = search.suffix_min[k + 1] + m;
    }
    search.dfs(0, 0.0);
    let pick = search.best_pick.ok_or(ScheduleError::Infeasible)?;
    Ok(order
        .iter()
        .zip(pick)
        .map(|(&i, s)| (instance.jobs[i].vehicle, s))
        .collect())
}

struct ShortSearch<'a> {
    inst: &'a ShortInstance,
    order: &'a [usize],
    options: Vec<Vec<(StationId, Seconds)>>,
    covers: Vec<Vec<usize>>,
    load: Vec<BTreeMap<StationId, u32>>,
    suffix_min: Vec<f64>,
    pick: Vec<Option<StationId>>,
    best: f64,
    best_pick: Option<Vec<StationId>>,
}

impl ShortSearch<'_> {
    fn dfs(&mut self, k: usize, cost: f64) {
        if cost + self.suffix_min[k] >= self.best - 1e-9 {
            return;
        }
        if k == self.order.len() {
            self.best = cost;
            self.best_pick = Some(self.pick.iter().map(|s| s.expect("assigned")).collect());
            return;
        }
        for oi in 0..self.options[k].len() {
            let (s, c) = self.options[k][oi];
            let cap = self.inst.capacity(s);
            if self.covers[k]
                .iter()
                .any(|&q| self.load[q].get(&s).copied().unwrap_or(0) >= cap)
            {
                continue;
            }
            for &q in &self.covers[k] {
                *self.load[q].entry(s).or_insert(0) += 1;
            }
            self.pick[k] = Some(s);
            self.dfs(k + 1, cost + c);
            self.pick[k] = None;
            for &q in &self.covers[k] {
                *self.load[q].get_mut(&s).expect("loaded") -= 1;
            }
        }
    }
}

/// Exact assignment without `newest`, then each of those greedily at its
/// cheapest station with room; vehicles that fit nowhere are deferred.
pub fn solve_short_fallback(
    instance: &ShortInstance,
    newest: &BTreeSet<VehicleId>,
) -> (BTreeMap<VehicleId, StationId>, BTreeSet<VehicleId>) {
    let reduced = ShortInstance {
        jobs: instance
            .jobs
            .iter()
            .filter(|j| !newest.contains(&j.vehicle))
            .cloned()
            .collect(),
        stations: instance.stations.clone(),
    };
    let mut assigned = BTreeMap::new();
    let mut greedy: Vec<&ShortJob> = instance
        .jobs
        .iter()
        .filter(|j| newest.contains(&j.vehicle))
        .collect();
    match solve_short_exact(&reduced) {
        Ok(a) => assigned = a,
        Err(_) => greedy = instance.jobs.iter().collect(),
    }
    greedy.sort_by_key(|j| (j.start, j.vehicle));
    let mut deferred = BTreeSet::new();
    for job in greedy {
        let fits = |s: StationId, assigned: &BTreeMap<VehicleId, StationId>| {
            let k = instance.capacity(s);
            (job.start..job.end()).all(|t| {
                let busy = instance
                    .jobs
                    .iter()
                    .filter(|o| {
                        o.vehicle != job.vehicle
                            && o.covers(t)
                            && assigned.get(&o.vehicle) == Some(&s)
                    })
                    .count();
                (busy as u32) < k
            })
        };
        match job.by_cost().into_iter().find(|(s, _)| fits(*s, &assigned)) {
            Some((s, _)) => {
                assigned.insert(job.vehicle, s);
            }
            None => {
                deferred.insert(job.vehicle);
            }
        }
    }
    (assigned, deferred)
}
