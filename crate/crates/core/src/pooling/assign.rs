//! Choosing at most one trip per vehicle so each request is covered once or
//! rejected at a penalty, by depth-first branch and bound.

use std::collections::{BTreeMap, BTreeSet};

use crate::demand::{Request, RequestId};
use crate::pooling::{Trip, VehicleId};

/// Search nodes explored before the best assignment so far is returned.
const NODE_LIMIT: u64 = 5_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Indices into the trip list.
    pub chosen: Vec<usize>,
    pub rejected: Vec<RequestId>,
    pub objective: f64,
}

/// Minimises total trip cost plus `penalty` per rejected request.
pub fn assign_trips(trips: &[Trip], requests: &[Request], penalty: f64) -> Assignment {
    let pen: Vec<(RequestId, f64)> = requests.iter().map(|r| (r.id, penalty)).collect();
    assign_trips_weighted(trips, &pen)
}

/// As [`assign_trips`] with a penalty per request.
pub fn assign_trips_weighted(trips: &[Trip], penalties: &[(RequestId, f64)]) -> Assignment {
    let index: BTreeMap<RequestId, usize> = penalties
        .iter()
        .enumerate()
        .map(|(i, (r, _))| (*r, i))
        .collect();
    let n = penalties.len();
    let mut usable: Vec<usize> = (0..trips.len())
        .filter(|&t| {
            !trips[t].riders.is_empty() && trips[t].riders.iter().all(|r| index.contains_key(r))
        })
        .collect();
    usable.sort_by(|&a, &b| {
        trips[a]
            .vehicle
            .cmp(&trips[b].vehicle)
            .then(trips[a].riders.cmp(&trips[b].riders))
    });
    let mut by_request: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &t in &usable {
        for r in &trips[t].riders {
            by_request[index[r]].push(t);
        }
    }
    let share: Vec<f64> = (0..n)
        .map(|i| {
            by_request[i]
                .iter()
                .map(|&t| trips[t].cost / trips[t].riders.len() as f64)
                .fold(penalties[i].1, f64::min)
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (by_request[i].len(), penalties[i].0));

    let greedy = greedy_objective(trips, &usable, &index, penalties);
    let mut s = Search {
        trips,
        index: &index,
        penalties,
        by_request: &by_request,
        share: &share,
        order: &order,
        covered: vec![false; n],
        used: BTreeSet::new(),
        picked: Vec::new(),
        best: greedy + 1e-6,
        best_pick: None,
        nodes: 0,
    };
    let rest: f64 = share.iter().sum();
    s.dfs(0, 0.0, rest);
    let mut chosen = s.best_pick.unwrap_or_default();
    chosen.sort_unstable();
    let mut covered = vec![false; n];
    for &t in &chosen {
        for r in &trips[t].riders {
            covered[index[r]] = true;
        }
    }
    let rejected: Vec<RequestId> = (0..n)
        .filter(|&i| !covered[i])
        .map(|i| penalties[i].0)
        .collect();
    let objective = chosen.iter().map(|&t| trips[t].cost).sum::<f64>()
        + (0..n)
            .filter(|&i| !covered[i])
            .map(|i| penalties[i].1)
            .sum::<f64>();
    Assignment {
        chosen,
        rejected,
        objective,
    }
}

fn greedy_objective(
    trips: &[Trip],
    usable: &[usize],
    index: &BTreeMap<RequestId, usize>,
    penalties: &[(RequestId, f64)],
) -> f64 {
    let mut order = usable.to_vec();
    order.sort_by(|&a, &b| {
        let ka = trips[a].cost / trips[a].riders.len() as f64 - trips[a].riders.len() as f64 * 1e6;
        let kb = trips[b].cost / trips[b].riders.len() as f64 - trips[b].riders.len() as f64 * 1e6;
        ka.total_cmp(&kb)
    });
    let mut covered = vec![false; penalties.len()];
    let mut used = BTreeSet::new();
    let mut total = 0.0;
    for t in order {
        let trip = &trips[t];
        if used.contains(&trip.vehicle) || trip.riders.iter().any(|r| covered[index[r]]) {
            continue;
        }
        let gain: f64 = trip
            .riders
            .iter()
            .map(|r| penalties[index[r]].1)
            .sum::<f64>()
            - trip.cost;
        if gain <= 0.0 {
            continue;
        }
        used.insert(trip.vehicle);
        for r in &trip.riders {
            covered[index[r]] = true;
        }
        total += trip.cost;
    }
    total
        + (0..penalties.len())
            .filter(|&i| !covered[i])
            .map(|i| penalties[i].1)
            .sum::<f64>()
}

struct Search<'a> {
    trips: &'a [Trip],
    index: &'a BTreeMap<RequestId, usize>,
    penalties: &'a [(RequestId, f64)],
    by_request: &'a [Vec<usize>],
    share: &'a [f64],
    order: &'a [usize],
    covered: Vec<bool>,
    used: BTreeSet<VehicleId>,
    picked: Vec<usize>,
    best: f64,
    best_pick: Option<Vec<usize>>,
    nodes: u64,
}

impl Search<'_> {
    /// `rest` is the sum of per-request lower bounds over uncovered requests.
    fn dfs(&mut self, k: usize, cost: f64, rest: f64) {
        self.nodes += 1;
        if self.nodes > NODE_LIMIT && self.best_pick.is_some() {
            return;
        }
        if cost + rest >= self.best - 1e-9 {
            return;
        }
        let mut k = k;
        while k < self.order.len() && self.covered[self.order[k]] {
            k += 1;
        }
        if k == self.order.len() {
            self.best = cost;
            self.best_pick = Some(self.picked.clone());
            return;
        }
        let i = self.order[k];
        for ti in 0..self.by_request[i].len() {
            let t = self.by_request[i][ti];
            let trip = &self.trips[t];
            if self.used.contains(&trip.vehicle)
                || trip.riders.iter().any(|r| self.covered[self.index[r]])
            {
                continue;
            }
            let freed: f64 = trip.riders.iter().map(|r| self.share[self.index[r]]).sum();
            for r in &trip.riders {
                self.covered[self.index[r]] = true;
            }
            self.used.insert(trip.vehicle);
            self.picked.push(t);
            self.dfs(k + 1, cost + trip.cost, rest - freed);
            self.picked.pop();
            self.used.remove(&trip.vehicle);
            for r in &trip.riders {
                self.covered[self.index[r]] = false;
            }
        }
        self.covered[i] = true;
        self.dfs(k + 1, cost + self.penalties[i].1, rest - self.share[i]);
        self.covered[i] = false;
    }
}
