//! Priority scheduling with recursive push-back for the long horizon.
//!
//! Vehicles are ordered by predicted empty time, latest first, and each is
//! placed at the latest start no later than its deadline where capacity and
//! the availability requirement both still hold. A vehicle that fits nowhere
//! is pushed forward from its earliest period, evicting strictly
//! higher-priority vehicles, which are in turn pushed forward.

use std::collections::BTreeMap;

use crate::pooling::VehicleId;
use crate::schedule::long::LongInstance;
use crate::schedule::{ChargeSchedule, Slot};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HeuristicOptions {
    /// Keep scheduling further charges until no vehicle runs empty within
    /// the horizon, instead of only each vehicle's next charge.
    pub full_day: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HeuristicReport {
    /// Vehicles whose slot starts after their predicted empty time.
    pub late: Vec<VehicleId>,
    /// Vehicles placed while ignoring the availability requirement.
    pub relaxed: Vec<VehicleId>,
    /// Elementary steps spent inside push-back.
    pub push_back_ops: u64,
    /// Elementary steps overall.
    pub total_ops: u64,
}

pub fn solve_long_heuristic(instance: &LongInstance, previous: &ChargeSchedule) -> ChargeSchedule {
    solve_long_heuristic_with(instance, previous, HeuristicOptions::default()).0
}

pub fn solve_long_heuristic_with(
    instance: &LongInstance,
    previous: &ChargeSchedule,
    options: HeuristicOptions,
) -> (ChargeSchedule, HeuristicReport) {
    let mut p = Planner::new(instance, previous);
    let n = instance.vehicles.len();
    let mut todo: Vec<usize> = (0..n)
        .filter(|&i| {
            let lv = &instance.vehicles[i];
            !p.fixed_slots[i].iter().any(|s| s.start >= lv.release)
        })
        .collect();
    let max_rounds = if options.full_day {
        instance.horizon.max(1)
    } else {
        1
    };
    for _ in 0..max_rounds {
        todo.retain(|&i| p.deadline[i] < instance.horizon);
        if todo.is_empty() {
            break;
        }
        p.run_round(&todo);
        if !options.full_day {
            break;
        }
        todo = p.advance_round();
    }
    p.finish()
}

struct Planner<'a> {
    inst: &'a LongInstance,
    reach: usize,
    cap: Vec<u32>,
    occupants: Vec<Vec<usize>>,
    supply: Vec<f64>,
    periods: Vec<Vec<usize>>,
    movable: Vec<Option<Slot>>,
    fixed_slots: Vec<Vec<Slot>>,
    other_fixed: ChargeSchedule,
    priority: Vec<u32>,
    earliest: Vec<usize>,
    deadline: Vec<usize>,
    reference: Vec<(usize, f64)>,
    report: HeuristicReport,
    in_push_back: bool,
}

impl<'a> Planner<'a> {
    fn new(inst: &'a LongInstance, previous: &ChargeSchedule) -> Self {
        let n = inst.vehicles.len();
        let h = inst.horizon;
        let mut kept = inst.fixed.clone();
        for (v, s) in previous.iter() {
            if s.start < inst.frozen_before && !kept.slots(v).contains(s) {
                let _ = kept.insert(v, *s);
            }
        }
        let index: BTreeMap<VehicleId, usize> = inst
            .vehicles
            .iter()
            .enumerate()
            .map(|(i, lv)| (lv.id, i))
            .collect();
        let mut p = Planner {
            inst,
            reach: inst.availability.reach(inst.period_length),
            cap: vec![0; h],
            occupants: vec![Vec::new(); h],
            supply: vec![0.0; h],
            periods: vec![Vec::new(); n],
            movable: vec![None; n],
            fixed_slots: vec![Vec::new(); n],
            other_fixed: ChargeSchedule::new(),
            priority: vec![0; n],
            earliest: inst
                .vehicles
                .iter()
                .map(|lv| lv.release.max(inst.frozen_before))
                .collect(),
            deadline: (0..n).map(|i| inst.deadline(i)).collect(),
            reference: inst
                .vehicles
                .iter()
                .map(|lv| (lv.release, lv.initial_charge))
                .collect(),
            report: HeuristicReport::default(),
            in_push_back: false,
        };
        for (v, s) in kept.iter() {
            p.grow(s.end());
            for t in s.start..s.end() {
                p.cap[t] += 1;
            }
            match index.get(&v) {
                Some(&i) => {
                    p.fixed_slots[i].push(*s);
                    p.periods[i].extend(s.start..s.end());
                }
                None => {
                    let _ = p.other_fixed.insert(v, *s);
                }
            }
        }
        for i in 0..n {
            for t in 0..h {
                p.supply[t] += p.availability(i, t);
            }
        }
        p
    }

    fn tick(&mut self, k: u64) {
        self.report.total_ops += k;
        if self.in_push_back {
            self.report.push_back_ops += k;
        }
    }

    fn grow(&mut self, len: usize) {
        if self.cap.len() < len {
            self.cap.resize(len, 0);
            self.occupants.resize(len, Vec::new());
        }
    }

    fn availability(&self, i: usize, t: usize) -> f64 {
        self.inst.vehicle_availability(i, &self.periods[i], t)
    }

    fn duration(&self, i: usize, s: usize) -> usize {
        let (t0, q0) = self.reference[i];
        let q = q0 - (s as f64 - t0 as f64) * self.inst.q_est;
        (((1.0 - q) / self.inst.eta - 1e-9).ceil().max(1.0)) as usize
    }

    fn window(&self, start: usize, end: usize) -> std::ops::Range<usize> {
        start.saturating_sub(self.reach)..(end + self.reach).min(self.inst.horizon)
    }

    fn place(&mut self, i: usize, slot: Slot) {
        let w = self.window(slot.start, slot.end());
        let before: Vec<f64> = w.clone().map(|t| self.availability(i, t)).collect();
        self.grow(slot.end());
        for t in slot.start..slot.end() {
            self.cap[t] += 1;
            self.occupants[t].push(i);
        }
        self.periods[i].extend(slot.start..slot.end());
        self.movable[i] = Some(slot);
        for (k, t) in w.enumerate() {
            self.supply[t] += self.availability(i, t) - before[k];
        }
    }

    fn unplace(&mut self, i: usize) -> Slot {
        let slot = self.movable[i].take().expect("vehicle has a movable slot");
        let w = self.window(slot.start, slot.end());
        let before: Vec<f64> = w.clone().map(|t| self.availability(i, t)).collect();
        for t in slot.start..slot.end() {
            self.cap[t] -= 1;
            self.occupants[t].retain(|&x| x != i);
        }
        self.periods[i].retain(|t| !slot.covers(*t));
        for (k, t) in w.enumerate() {
            self.supply[t] += self.availability(i, t) - before[k];
        }
        slot
    }

    /// Requirement deficit at `t` if vehicle `i` charged over `[s, e)`.
    fn deficit(&self, i: usize, s: usize, e: usize, t: usize) -> f64 {
        let old = self.availability(i, t);
        let p = self.inst.period_length;
        let new = (s..e).fold(old, |a, x| {
            a.min(self.inst.availability.value((t as f64 - x as f64) * p))
        });
        if new >= old - 1e-12 {
            return 0.0;
        }
        let d = self.inst.requirement_at(t) - (self.supply[t] - old + new);
        if d > 1e-9 {
            d
        } else {
            0.0
        }
    }

    fn fits(&mut self, i: usize, s: usize, dur: usize) -> bool {
        let k = self.inst.total_capacity;
        for t in s..s + dur {
            self.tick(1);
            if self.cap.get(t).copied().unwrap_or(0) >= k {
                return false;
            }
        }
        for t in self.window(s, s + dur) {
            self.tick(1);
            if self.deficit(i, s, s + dur, t) > 0.0 {
                return false;
            }
        }
        true
    }

    fn run_round(&mut self, todo: &[usize]) {
        let mut order = todo.to_vec();
        order.sort_by(|&a, &b| {
            self.deadline[b]
                .cmp(&self.deadline[a])
                .then(self.inst.vehicles[a].id.cmp(&self.inst.vehicles[b].id))
        });
        let n = order.len() as u32;
        for (rank, &i) in order.iter().enumerate() {
            self.priority[i] = n - rank as u32;
        }
        for &i in &order {
            let lo = self.earliest[i];
            let hi = self.deadline[i].max(lo);
            let mut placed = false;
            for s in (lo..=hi).rev() {
                self.tick(1);
                let dur = self.duration(i, s);
                if self.fits(i, s, dur) {
                    self.place(
                        i,
                        Slot {
                            start: s,
                            duration: dur,
                            station: None,
                        },
                    );
                    placed = true;
                    break;
                }
            }
            if !placed {
                self.push_back(vec![(i, lo)]);
            }
        }
    }

    /// Freezes this round's slots and returns vehicles needing another charge.
    fn advance_round(&mut self) -> Vec<usize> {
        let mut next = Vec::new();
        for i in 0..self.inst.vehicles.len() {
            if let Some(slot) = self.movable[i].take() {
                let (t0, q0) = self.reference[i];
                let q_start = q0 - (slot.start as f64 - t0 as f64) * self.inst.q_est;
                let q_end = (q_start + slot.duration as f64 * self.inst.eta).min(1.0);
                self.fixed_slots[i].push(slot);
                for t in slot.start..slot.end() {
                    self.occupants[t].retain(|&x| x != i);
                }
                self.reference[i] = (slot.end(), q_end);
                self.earliest[i] = slot.end();
                self.deadline[i] = if q_end <= 0.0 {
                    slot.end()
                } else {
                    slot.end()
                        .saturating_add((q_end / self.inst.q_est + 1e-9).floor().min(1e12) as usize)
                };
                next.push(i);
            }
        }
        next
    }

    fn push_back(&mut self, initial: Vec<(usize, usize)>) {
        self.in_push_back = true;
        let mut items: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
        for (i, t) in initial {
            items.insert(self.priority[i], (i, t));
        }
        while let Some((_, (i, t))) = items.pop_first() {
            let mut blocked_by_availability = false;
            let limit = self.inst.horizon;
            if !self.scan(
                i,
                t,
                false,
                Some(limit),
                &mut items,
                &mut blocked_by_availability,
            ) {
                if blocked_by_availability {
                    self.report.relaxed.push(self.inst.vehicles[i].id);
                    self.scan(i, t, true, None, &mut items, &mut blocked_by_availability);
                } else {
                    self.scan(
                        i,
                        limit.max(t),
                        false,
                        None,
                        &mut items,
                        &mut blocked_by_availability,
                    );
                }
            }
        }
        self.in_push_back = false;
    }

    /// Scans forward from `t` for a start where `i` fits after evicting
    /// higher-priority vehicles. Stops before `limit` when given.
    fn scan(
        &mut self,
        i: usize,
        t: usize,
        relaxed: bool,
        limit: Option<usize>,
        items: &mut BTreeMap<u32, (usize, usize)>,
        blocked_by_availability: &mut bool,
    ) -> bool {
        let mut s = t;
        loop {
            if limit.is_some_and(|l| s >= l) {
                return false;
            }
            self.tick(1);
            let dur = self.duration(i, s);
            let mut evicted: Vec<(usize, usize, Slot)> = Vec::new();
            let ok = self.clear(i, s, dur, relaxed, &mut evicted, blocked_by_availability);
            if ok {
                self.place(
                    i,
                    Slot {
                        start: s,
                        duration: dur,
                        station: None,
                    },
                );
                for (w, u, _) in evicted {
                    items.insert(self.priority[w], (w, u.max(self.earliest[w])));
                }
                return true;
            }
            for (w, _, slot) in evicted.into_iter().rev() {
                self.tick(1);
                self.place(w, slot);
            }
            s += 1;
        }
    }

    fn clear(
        &mut self,
        i: usize,
        s: usize,
        dur: usize,
        relaxed: bool,
        evicted: &mut Vec<(usize, usize, Slot)>,
        blocked_by_availability: &mut bool,
    ) -> bool {
        let prio = self.priority[i];
        let k = self.inst.total_capacity;
        let mut checks: Vec<usize> = (s..s + dur).collect();
        checks.extend(self.window(s, s + dur).filter(|t| *t < s || *t >= s + dur));
        for u in checks {
            self.tick(1);
            if !relaxed && u < self.inst.horizon {
                let d = self.deficit(i, s, s + dur, u);
                if d > 0.0 {
                    *blocked_by_availability = true;
                    match self.clear_availability(prio, u, d) {
                        Some(ws) => {
                            for w in ws {
                                self.tick(1);
                                let slot = self.unplace(w);
                                evicted.push((w, u, slot));
                            }
                        }
                        None => return false,
                    }
                }
            }
            if (s..s + dur).contains(&u) && self.cap.get(u).copied().unwrap_or(0) >= k {
                match self.clear_capacity(prio, u) {
                    Some(w) => {
                        self.tick(1);
                        let slot = self.unplace(w);
                        evicted.push((w, u, slot));
                    }
                    None => return false,
                }
            }
        }
        true
    }

    fn clear_capacity(&mut self, prio: u32, u: usize) -> Option<usize> {
        let occ = self.occupants.get(u).cloned().unwrap_or_default();
        self.tick(occ.len() as u64);
        occ.into_iter()
            .filter(|&w| self.priority[w] > prio)
            .max_by_key(|&w| self.priority[w])
    }

    fn clear_availability(&mut self, prio: u32, u: usize, deficit: f64) -> Option<Vec<usize>> {
        let lo = u.saturating_sub(self.reach);
        let hi = (u + self.reach + 1).min(self.occupants.len());
        let mut cands: Vec<usize> = (lo..hi)
            .flat_map(|t| self.occupants[t].iter().copied())
            .collect();
        cands.sort_unstable();
        cands.dedup();
        self.tick(cands.len() as u64);
        let mut gains: Vec<(usize, f64)> = cands
            .into_iter()
            .filter(|&w| self.priority[w] > prio)
            .filter_map(|w| {
                let slot = self.movable[w]?;
                let rest: Vec<usize> = self.periods[w]
                    .iter()
                    .copied()
                    .filter(|t| !slot.covers(*t))
                    .collect();
                let without = self.inst.vehicle_availability(w, &rest, u);
                let with = self.availability(w, u);
                (without - with > 1e-12).then_some((w, without - with))
            })
            .collect();
        gains.sort_by(|a, b| self.priority[b.0].cmp(&self.priority[a.0]));
        if let Some(&(w, _)) = gains.iter().find(|(_, g)| *g >= deficit - 1e-9) {
            return Some(vec![w]);
        }
        let mut acc = 0.0;
        let mut set = Vec::new();
        for (w, g) in gains {
            acc += g;
            set.push(w);
            if acc >= deficit - 1e-9 {
                return Some(set);
            }
        }
        None
    }

    fn finish(mut self) -> (ChargeSchedule, HeuristicReport) {
        let mut out = self.other_fixed.clone();
        for (i, lv) in self.inst.vehicles.iter().enumerate() {
            for s in &self.fixed_slots[i] {
                let _ = out.insert(lv.id, *s);
            }
            if let Some(s) = self.movable[i] {
                let _ = out.insert(lv.id, s);
                if s.start > self.deadline[i] {
                    self.report.late.push(lv.id);
                }
            }
        }
        self.report.relaxed.sort();
        self.report.relaxed.dedup();
        (out, self.report)
    }
}
