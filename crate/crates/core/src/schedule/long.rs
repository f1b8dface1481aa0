//! Long-horizon charge timing: instance, objective, release dates and the
//! exact solver for small instances.

use crate::network::RoadNetwork;
use crate::pooling::{VehicleId, VehicleState};
use crate::schedule::heuristic::solve_long_heuristic;
use crate::schedule::{AvailabilityFunction, ChargeSchedule, ScheduleError, Slot};
use crate::Seconds;

/// Largest instance accepted by [`solve_long_exact`].
pub const EXACT_MAX_VEHICLES: usize = 4;
pub const EXACT_MAX_PERIODS: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct LongVehicle {
    pub id: VehicleId,
    /// First period the vehicle may charge in.
    pub release: usize,
    /// Charge at the release period.
    pub initial_charge: f64,
    /// Upper bound on availability from charges already made, per period.
    pub prior_availability: Vec<f64>,
}

/// A long-horizon planning problem; period 0 is the planning instant.
#[derive(Debug, Clone, PartialEq)]
pub struct LongInstance {
    pub period_length: Seconds,
    pub horizon: usize,
    pub vehicles: Vec<LongVehicle>,
    /// Required available vehicles, per period.
    pub requirement: Vec<f64>,
    pub total_capacity: u32,
    /// Charge gained per charging period.
    pub eta: f64,
    /// Charge lost per non-charging period.
    pub q_est: f64,
    /// Weight on negative charge.
    pub penalty: f64,
    /// Slots starting before this period are never changed.
    pub frozen_before: usize,
    pub availability: AvailabilityFunction,
    /// Slots every solution keeps as they are.
    pub fixed: ChargeSchedule,
}

impl LongInstance {
    pub(crate) fn prior(&self, v: usize, t: usize) -> f64 {
        self.vehicles[v]
            .prior_availability
            .get(t)
            .copied()
            .unwrap_or(1.0)
    }

    pub(crate) fn requirement_at(&self, t: usize) -> f64 {
        self.requirement.get(t).copied().unwrap_or(0.0)
    }

    /// Availability of vehicle `v` at `t` given all its charging periods.
    pub(crate) fn vehicle_availability(&self, v: usize, periods: &[usize], t: usize) -> f64 {
        let p = self.period_length;
        periods.iter().fold(self.prior(v, t), |a, &s| {
            a.min(self.availability.value((t as f64 - s as f64) * p))
        })
    }

    /// Period at which the vehicle is predicted to run empty.
    pub fn deadline(&self, v: usize) -> usize {
        let lv = &self.vehicles[v];
        if lv.initial_charge <= 0.0 {
            return lv.release;
        }
        if self.q_est <= 0.0 {
            return usize::MAX;
        }
        let k = (lv.initial_charge / self.q_est + 1e-9).floor();
        lv.release.saturating_add(k.min(1e12) as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LongObjective {
    pub shortfall: f64,
    pub negative_charge: f64,
    pub total: f64,
}

fn periods_of(schedule: &ChargeSchedule, v: VehicleId) -> Vec<usize> {
    schedule
        .slots(v)
        .iter()
        .flat_map(|s| s.start..s.end())
        .collect()
}

/// Shortfall against the requirement plus the weighted negative charge.
pub fn long_objective(
    instance: &LongInstance,
    schedule: &ChargeSchedule,
) -> Result<LongObjective, ScheduleError> {
    let h = instance.horizon;
    let mut count = vec![0u32; h];
    for (_, s) in schedule.iter() {
        for c in count.iter_mut().take(s.end().min(h)).skip(s.start) {
            *c += 1;
        }
    }
    if let Some((t, &c)) = count
        .iter()
        .enumerate()
        .find(|(_, &c)| c > instance.total_capacity)
    {
        return Err(ScheduleError::CapacityViolation {
            period: t,
            count: c,
            capacity: instance.total_capacity,
        });
    }
    let mut supply = vec![0.0; h];
    let mut negative = 0.0;
    for (i, lv) in instance.vehicles.iter().enumerate() {
        let periods = periods_of(schedule, lv.id);
        for (t, s) in supply.iter_mut().enumerate() {
            *s += instance.vehicle_availability(i, &periods, t);
        }
        negative += negative_charge(instance, i, |t| schedule.is_charging(lv.id, t));
    }
    let shortfall: f64 = supply
        .iter()
        .enumerate()
        .map(|(t, s)| (instance.requirement_at(t) - s).max(0.0))
        .sum();
    Ok(LongObjective {
        shortfall,
        negative_charge: negative,
        total: shortfall + instance.penalty * negative,
    })
}

fn negative_charge(instance: &LongInstance, v: usize, charging: impl Fn(usize) -> bool) -> f64 {
    let lv = &instance.vehicles[v];
    let mut q = lv.initial_charge;
    let mut neg = 0.0;
    for t in lv.release..instance.horizon {
        neg += (-q).max(0.0);
        q = (q + if charging(t) {
            instance.eta
        } else {
            -instance.q_est
        })
        .min(1.0);
    }
    neg
}

/// Earliest time the vehicle can begin charging once its route is done:
/// travel to its assigned station, or otherwise the larger of travel to the
/// nearest station and `buffer_d`.
pub fn release_date(
    vehicle: &VehicleState,
    network: &RoadNetwork,
    buffer_d: Seconds,
    now: Seconds,
) -> Seconds {
    let (node, t_c) = vehicle.plan_end(network, now);
    match vehicle.charge_slot.and_then(|s| s.station) {
        Some(s) => t_c + network.tt(node, network.station(s).map(|x| x.node).unwrap_or(node)),
        None => {
            let nearest = network.nearest_station(node).map(|(_, t)| t).unwrap_or(0.0);
            t_c + nearest.max(buffer_d)
        }
    }
}

/// Globally optimal charging matrix for small instances by depth-first
/// branch and bound over periods; among optimal matrices the
/// lexicographically smallest (period-major, vehicle order) is returned.
pub fn solve_long_exact(instance: &LongInstance) -> Result<ChargeSchedule, ScheduleError> {
    let n = instance.vehicles.len();
    let h = instance.horizon;
    if n > EXACT_MAX_VEHICLES || h > EXACT_MAX_PERIODS {
        return Err(ScheduleError::Scale(format!(
            "{n} vehicles over {h} periods"
        )));
    }
    let mut search = ExactSearch::new(instance);
    if let Some(v) = search
        .fixed_count
        .iter()
        .position(|&c| c > instance.total_capacity)
    {
        return Err(ScheduleError::CapacityViolation {
            period: v,
            count: search.fixed_count[v],
            capacity: instance.total_capacity,
        });
    }
    let heuristic = solve_long_heuristic(instance, &instance.fixed);
    let bound = long_objective(instance, &heuristic)
        .map(|o| o.total + 1e-6)
        .unwrap_or(f64::INFINITY);
    search.best = bound;
    search.dfs(0);
    if search.best_c.is_none() {
        search.best = f64::INFINITY;
        search.dfs(0);
    }
    let c = search
        .best_c
        .expect("the empty matrix is always a solution");
    let mut out = instance.fixed.clone();
    for (v, lv) in instance.vehicles.iter().enumerate() {
        let mut t = 0;
        while t < h {
            if c[t][v] {
                let start = t;
                while t < h && c[t][v] {
                    t += 1;
                }
                out.insert(
                    lv.id,
                    Slot {
                        start,
                        duration: t - start,
                        station: None,
                    },
                )?;
            } else {
                t += 1;
            }
        }
    }
    Ok(out)
}

struct ExactSearch<'a> {
    inst: &'a LongInstance,
    fixed: Vec<Vec<usize>>,
    fixed_at: Vec<Vec<bool>>,
    fixed_count: Vec<u32>,
    eligible: Vec<Vec<usize>>,
    c: Vec<Vec<bool>>,
    best: f64,
    best_c: Option<Vec<Vec<bool>>>,
}

impl<'a> ExactSearch<'a> {
    fn new(inst: &'a LongInstance) -> Self {
        let n = inst.vehicles.len();
        let h = inst.horizon;
        let fixed: Vec<Vec<usize>> = inst
            .vehicles
            .iter()
            .map(|lv| periods_of(&inst.fixed, lv.id))
            .collect();
        let fixed_at: Vec<Vec<bool>> = (0..h)
            .map(|t| (0..n).map(|v| fixed[v].contains(&t)).collect())
            .collect();
        let fixed_count: Vec<u32> = (0..h).map(|t| inst.fixed.charging_count(t)).collect();
        let eligible = (0..h)
            .map(|t| {
                (0..n)
                    .filter(|&v| {
                        t >= inst.vehicles[v].release && t >= inst.frozen_before && !fixed_at[t][v]
                    })
                    .collect()
            })
            .collect();
        ExactSearch {
            inst,
            fixed,
            fixed_at,
            fixed_count,
            eligible,
            c: vec![vec![false; n]; h],
            best: f64::INFINITY,
            best_c: None,
        }
    }

    fn charging(&self, v: usize, t: usize) -> bool {
        self.c[t][v] || self.fixed_at[t][v]
    }

    /// Objective with periods `>= decided` still open: shortfall assuming no
    /// further charging, negative charge assuming every open period charges.
    fn bound(&self, decided: usize) -> f64 {
        let inst = self.inst;
        let h = inst.horizon;
        let mut total = 0.0;
        let mut supply = vec![0.0; h];
        for v in 0..inst.vehicles.len() {
            let mut periods = self.fixed[v].clone();
            periods.extend((0..decided).filter(|&t| self.c[t][v]));
            for (t, s) in supply.iter_mut().enumerate() {
                *s += inst.vehicle_availability(v, &periods, t);
            }
            total += inst.penalty
                * negative_charge(inst, v, |t| {
                    if t < decided {
                        self.charging(v, t)
                    } else {
                        self.fixed_at[t][v] || self.eligible[t].contains(&v)
                    }
                });
        }
        total
            + supply
                .iter()
                .enumerate()
                .map(|(t, s)| (inst.requirement_at(t) - s).max(0.0))
                .sum::<f64>()
    }

    fn dfs(&mut self, t: usize) {
        let lb = self.bound(t);
        if lb >= self.best - 1e-9 {
            return;
        }
        if t == self.inst.horizon {
            self.best = lb;
            self.best_c = Some(self.c.clone());
            return;
        }
        let elig = self.eligible[t].clone();
        let room = self.inst.total_capacity.saturating_sub(self.fixed_count[t]);
        let k = elig.len();
        for mask in 0u32..(1 << k) {
            if mask.count_ones() > room {
                continue;
            }
            for (i, &v) in elig.iter().enumerate() {
                self.c[t][v] = mask & (1 << (k - 1 - i)) != 0;
            }
            self.dfs(t + 1);
        }
        for &v in &elig {
            self.c[t][v] = false;
        }
    }
}
