//! Append-only event log and its CSV form.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::demand::RequestId;
use crate::network::StationId;
use crate::pooling::VehicleId;
use crate::Seconds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    /// Charge held at the start of the day; `value` is the charge.
    Init,
    Pickup,
    /// `value` is the direct travel time of the request.
    Dropoff,
    Reject,
    /// `value` is the charge when charging begins.
    ChargeStart,
    /// `value` is the charge when charging ends.
    ChargeEnd,
    /// Arrival at a station.
    WaitStart,
    Rebalance,
    /// Planned availability below the requirement; `value` is the shortfall.
    Shortfall,
    /// Meters driven by a vehicle during one batch, stamped when it stopped moving.
    Drive,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Init => "init",
            EventKind::Pickup => "pickup",
            EventKind::Dropoff => "dropoff",
            EventKind::Reject => "reject",
            EventKind::ChargeStart => "charge_start",
            EventKind::ChargeEnd => "charge_end",
            EventKind::WaitStart => "wait_start",
            EventKind::Rebalance => "rebalance",
            EventKind::Shortfall => "shortfall",
            EventKind::Drive => "drive",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "init" => EventKind::Init,
            "pickup" => EventKind::Pickup,
            "dropoff" => EventKind::Dropoff,
            "reject" => EventKind::Reject,
            "charge_start" => EventKind::ChargeStart,
            "charge_end" => EventKind::ChargeEnd,
            "wait_start" => EventKind::WaitStart,
            "rebalance" => EventKind::Rebalance,
            "shortfall" => EventKind::Shortfall,
            "drive" => EventKind::Drive,
            other => return Err(format!("unknown event kind {other:?}")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: Seconds,
    pub kind: EventKind,
    pub vehicle: Option<VehicleId>,
    pub request: Option<RequestId>,
    pub station: Option<StationId>,
    pub value: f64,
}

impl Event {
    pub fn new(time: Seconds, kind: EventKind) -> Self {
        Event {
            time,
            kind,
            vehicle: None,
            request: None,
            station: None,
            value: 0.0,
        }
    }

    pub fn vehicle(mut self, v: VehicleId) -> Self {
        self.vehicle = Some(v);
        self
    }

    pub fn request(mut self, r: RequestId) -> Self {
        self.request = Some(r);
        self
    }

    pub fn station(mut self, s: StationId) -> Self {
        self.station = Some(s);
        self
    }

    pub fn value(mut self, x: f64) -> Self {
        self.value = x;
        self
    }
}

/// Events in nondecreasing time order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    events: Vec<Event>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a batch of events, ordered by time with ties kept in the
    /// order given. Panics if the batch starts before the last logged event.
    pub fn extend_batch(&mut self, mut batch: Vec<Event>) {
        batch.sort_by(|a, b| a.time.total_cmp(&b.time));
        if let (Some(last), Some(first)) = (self.events.last(), batch.first()) {
            assert!(first.time >= last.time, "event log must stay ordered");
        }
        self.events.extend(batch);
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &Event> + '_ {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "time_s",
            "kind",
            "vehicle_id",
            "request_id",
            "station_id",
            "value",
        ])?;
        let opt = |x: Option<String>| x.unwrap_or_default();
        for e in &self.events {
            w.write_record([
                e.time.to_string(),
                e.kind.to_string(),
                opt(e.vehicle.map(|v| v.0.to_string())),
                opt(e.request.map(|r| r.0.to_string())),
                opt(e.station.map(|s| s.0.to_string())),
                e.value.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<Self, String> {
        let mut r = csv::Reader::from_path(path).map_err(|e| e.to_string())?;
        let mut events = Vec::new();
        for row in r.records() {
            let row = row.map_err(|e| e.to_string())?;
            let field = |i: usize| row.get(i).unwrap_or("");
            let num = |i: usize| {
                field(i)
                    .parse::<f64>()
                    .map_err(|e| format!("{}: {e}", field(i)))
            };
            let id = |i: usize| -> Result<Option<u64>, String> {
                match field(i) {
                    "" => Ok(None),
                    s => s.parse::<u64>().map(Some).map_err(|e| format!("{s}: {e}")),
                }
            };
            events.push(Event {
                time: num(0)?,
                kind: field(1).parse()?,
                vehicle: id(2)?.map(|x| VehicleId(x as u32)),
                request: id(3)?.map(RequestId),
                station: id(4)?.map(|x| StationId(x as u32)),
                value: num(5)?,
            });
        }
        Ok(EventLog { events })
    }
}
