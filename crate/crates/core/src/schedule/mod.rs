//! Charge scheduling: long-horizon timing and short-horizon station assignment.

pub mod heuristic;
pub mod long;
pub mod short;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{NetworkError, StationId};
use crate::pooling::VehicleId;
use crate::Seconds;

pub use heuristic::{
    solve_long_heuristic, solve_long_heuristic_with, HeuristicOptions, HeuristicReport,
};
pub use long::{
    long_objective, release_date, solve_long_exact, LongInstance, LongObjective, LongVehicle,
    EXACT_MAX_PERIODS, EXACT_MAX_VEHICLES,
};
pub use short::{
    build_short_instance, clique_checkpoints, solve_short_exact, solve_short_fallback,
    ShortInstance, ShortJob,
};

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("instance too large for the exact solver: {0}")]
    Scale(String),
    #[error("{count} vehicles charge in period {period}, capacity is {capacity}")]
    CapacityViolation {
        period: usize,
        count: u32,
        capacity: u32,
    },
    #[error("no feasible station assignment")]
    Infeasible,
    #[error("slot for vehicle {0} overlaps an existing slot")]
    Overlap(VehicleId),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("{0}")]
    Format(String),
}

/// How available a vehicle is around a single-period charge starting at 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AvailabilityFunction {
    /// Ramp rate, per second.
    pub ramp_slope: f64,
    pub charge_duration: Seconds,
}

impl AvailabilityFunction {
    pub fn new(ramp_slope: f64, charge_duration: Seconds) -> Self {
        AvailabilityFunction {
            ramp_slope,
            charge_duration,
        }
    }

    pub fn value(&self, t: Seconds) -> f64 {
        if t <= 0.0 {
            (-self.ramp_slope * t).min(1.0)
        } else if t <= self.charge_duration {
            0.0
        } else {
            (self.ramp_slope * (t - self.charge_duration)).min(1.0)
        }
    }

    /// Periods on either side of a charging period over which `value` is below 1.
    pub fn reach(&self, period: Seconds) -> usize {
        let ramp = if self.ramp_slope > 0.0 {
            1.0 / self.ramp_slope
        } else {
            f64::INFINITY
        };
        ((ramp + self.charge_duration) / period).ceil().min(1e6) as usize + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub start: usize,
    pub duration: usize,
    pub station: Option<StationId>,
}

impl Slot {
    pub fn end(&self) -> usize {
        self.start + self.duration
    }

    pub fn covers(&self, t: usize) -> bool {
        self.start <= t && t < self.end()
    }
}

/// Per-vehicle sorted, disjoint charging slots on a period grid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChargeSchedule {
    slots: BTreeMap<VehicleId, Vec<Slot>>,
}

impl ChargeSchedule {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, v: VehicleId, slot: Slot) -> Result<(), ScheduleError> {
        if slot.duration == 0 {
            return Ok(());
        }
        let list = self.slots.entry(v).or_default();
        if list
            .iter()
            .any(|s| s.start < slot.end() && slot.start < s.end())
        {
            return Err(ScheduleError::Overlap(v));
        }
        let at = list.partition_point(|s| s.start < slot.start);
        list.insert(at, slot);
        Ok(())
    }

    pub fn slots(&self, v: VehicleId) -> &[Slot] {
        self.slots.get(&v).map(|s| s.as_slice()).unwrap_or(&[])
    }

    pub fn vehicles(&self) -> impl Iterator<Item = VehicleId> + '_ {
        self.slots
            .iter()
            .filter(|(_, s)| !s.is_empty())
            .map(|(v, _)| *v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (VehicleId, &Slot)> + '_ {
        self.slots
            .iter()
            .flat_map(|(v, s)| s.iter().map(move |x| (*v, x)))
    }

    pub fn is_empty(&self) -> bool {
        self.slots.values().all(|s| s.is_empty())
    }

    pub fn len(&self) -> usize {
        self.slots.values().map(|s| s.len()).sum()
    }

    pub fn remove(&mut self, v: VehicleId, start: usize) -> Option<Slot> {
        let list = self.slots.get_mut(&v)?;
        let i = list.iter().position(|s| s.start == start)?;
        let s = list.remove(i);
        if list.is_empty() {
            self.slots.remove(&v);
        }
        Some(s)
    }

    pub fn remove_vehicle(&mut self, v: VehicleId) -> Vec<Slot> {
        self.slots.remove(&v).unwrap_or_default()
    }

    pub fn set_station(&mut self, v: VehicleId, start: usize, station: Option<StationId>) -> bool {
        match self
            .slots
            .get_mut(&v)
            .and_then(|l| l.iter_mut().find(|s| s.start == start))
        {
            Some(s) => {
                s.station = station;
                true
            }
            None => false,
        }
    }

    pub fn is_charging(&self, v: VehicleId, t: usize) -> bool {
        self.slots(v).iter().any(|s| s.covers(t))
    }

    pub fn charging_count(&self, t: usize) -> u32 {
        self.iter().filter(|(_, s)| s.covers(t)).count() as u32
    }

    /// Last period covered by any slot, plus one.
    pub fn extent(&self) -> usize {
        self.iter().map(|(_, s)| s.end()).max().unwrap_or(0)
    }

    /// Every period whose charging count exceeds `capacity`.
    pub fn capacity_violations(&self, capacity: u32) -> Vec<usize> {
        let mut count = vec![0u32; self.extent()];
        for (_, s) in self.iter() {
            for c in &mut count[s.start..s.end()] {
                *c += 1;
            }
        }
        count
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > capacity)
            .map(|(t, _)| t)
            .collect()
    }

    /// Writes `vehicle_id,start_s,duration_s,station_id` rows; period `t`
    /// starts at `origin + t * period_length`.
    pub fn save_csv(
        &self,
        path: &Path,
        period_length: Seconds,
        origin: Seconds,
    ) -> Result<(), ScheduleError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)
            .map_err(|e| ScheduleError::Format(e.to_string()))?;
        let fmt = |e: csv::Error| ScheduleError::Format(e.to_string());
        w.write_record(["vehicle_id", "start_s", "duration_s", "station_id"])
            .map_err(fmt)?;
        for (v, s) in self.iter() {
            w.write_record([
                v.0.to_string(),
                (origin + s.start as f64 * period_length).to_string(),
                (s.duration as f64 * period_length).to_string(),
                s.station.map(|x| x.0.to_string()).unwrap_or_default(),
            ])
            .map_err(fmt)?;
        }
        w.flush().map_err(NetworkError::from)?;
        Ok(())
    }

    pub fn load_csv(
        path: &Path,
        period_length: Seconds,
        origin: Seconds,
    ) -> Result<Self, ScheduleError> {
        #[derive(Deserialize, Serialize)]
        struct Row {
            vehicle_id: u32,
            start_s: f64,
            duration_s: f64,
            station_id: Option<u32>,
        }
        let rows = crate::network::read_rows::<Row>(
            path,
            &["vehicle_id", "start_s", "duration_s", "station_id"],
        )?;
        let mut out = ChargeSchedule::new();
        for r in rows {
            let start = (r.start_s - origin) / period_length;
            let duration = r.duration_s / period_length;
            if start < -1e-9
                || (start - start.round()).abs() > 1e-6
                || (duration - duration.round()).abs() > 1e-6
            {
                return Err(ScheduleError::Format(format!(
                    "slot of vehicle {} is off the period grid",
                    r.vehicle_id
                )));
            }
            out.insert(
                VehicleId(r.vehicle_id),
                Slot {
                    start: start.round() as usize,
                    duration: duration.round() as usize,
                    station: r.station_id.map(StationId),
                },
            )?;
        }
        Ok(out)
    }
}

/// Whether the short/long overlap `delta` keeps station assignment feasible.
pub fn check_delta_bound(t_long: Seconds, delta: Seconds) -> bool {
    delta <= 2.0 * t_long
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn availability_shape() {
        let a = AvailabilityFunction::new(1.0 / 900.0, 300.0);
        assert_eq!(a.value(0.0), 0.0);
        assert_eq!(a.value(150.0), 0.0);
        assert_eq!(a.value(300.0), 0.0);
        assert!((a.value(-300.0) - 1.0 / 3.0).abs() < 1e-12);
        assert!((a.value(600.0) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(a.value(-900.0), 1.0);
        assert_eq!(a.value(5000.0), 1.0);
        assert_eq!(a.reach(300.0), 5);
        let mut prev = 1.0;
        for k in -40..=0 {
            let v = a.value(k as f64 * 30.0);
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn overlap_and_order() {
        let mut s = ChargeSchedule::new();
        let v = VehicleId(3);
        s.insert(
            v,
            Slot {
                start: 10,
                duration: 2,
                station: None,
            },
        )
        .unwrap();
        s.insert(
            v,
            Slot {
                start: 2,
                duration: 3,
                station: None,
            },
        )
        .unwrap();
        assert!(matches!(
            s.insert(
                v,
                Slot {
                    start: 11,
                    duration: 1,
                    station: None
                }
            ),
            Err(ScheduleError::Overlap(_))
        ));
        s.insert(
            v,
            Slot {
                start: 12,
                duration: 1,
                station: None,
            },
        )
        .unwrap();
        assert_eq!(
            s.slots(v).iter().map(|x| x.start).collect::<Vec<_>>(),
            vec![2, 10, 12]
        );
        assert!(s.is_charging(v, 4) && !s.is_charging(v, 5));
        assert_eq!(s.capacity_violations(1), Vec::<usize>::new());
        s.insert(
            VehicleId(1),
            Slot {
                start: 3,
                duration: 1,
                station: None,
            },
        )
        .unwrap();
        assert_eq!(s.capacity_violations(1), vec![3]);
    }

    #[test]
    fn csv_round_trip() {
        let mut s = ChargeSchedule::new();
        s.insert(
            VehicleId(0),
            Slot {
                start: 4,
                duration: 2,
                station: Some(StationId(1)),
            },
        )
        .unwrap();
        s.insert(
            VehicleId(2),
            Slot {
                start: 0,
                duration: 1,
                station: None,
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        s.save_csv(&p, 300.0, 18000.0).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with(
            "vehicle_id,start_s,duration_s,station_id\n0,19200,600,1\n2,18000,300,\n"
        ));
        assert_eq!(ChargeSchedule::load_csv(&p, 300.0, 18000.0).unwrap(), s);
    }

    #[test]
    fn delta_bound() {
        assert!(check_delta_bound(300.0, 600.0));
        assert!(!check_delta_bound(300.0, 900.0));
        assert!(check_delta_bound(300.0, 0.0));
    }
}
