//! Flat `key = value` scenario files.
//!
//! Blank lines and `#` comments are ignored. Relative paths resolve against the
//! directory holding the config file. Every key may appear at most once and
//! unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use evpool::battery::{BatteryModel, BatteryParams};
use evpool::demand::{
    availability_requirement, calibrate_lambda, demand_profile, load_requests, load_requirement,
    synth_requests, ArrivalProfile, AvailabilityRequirement, CalibrationSetup, DemandError,
    Request, DEFAULT_BLOCK,
};
use evpool::network::{generate_grid, load_stations, NodeId, RoadNetwork, Station, StationId};
use evpool::schedule::AvailabilityFunction;
use evpool::sim::{InitialCharge, ScenarioConfig};
use evpool::Seconds;

use crate::Infeasible;

/// Where the availability requirement comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum RequirementSource {
    None,
    File(PathBuf),
    Lambda(f64),
    /// Smallest feasible lambda on the `lambda_step` grid.
    Calibrate,
}

pub struct Scenario {
    pub config: ScenarioConfig,
    pub net: RoadNetwork,
    pub requests: Vec<Request>,
    pub requirement: RequirementSource,
    /// Demand-profile block length.
    pub block: Seconds,
    pub lambda_step: f64,
}

struct Raw {
    path: PathBuf,
    dir: PathBuf,
    entries: BTreeMap<String, (usize, String)>,
}

impl Raw {
    fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail!("{}:{}: expected `key = value`", path.display(), i + 1);
            };
            let k = k.trim().to_ascii_lowercase();
            if entries
                .insert(k.clone(), (i + 1, v.trim().to_string()))
                .is_some()
            {
                bail!("{}:{}: duplicate key `{k}`", path.display(), i + 1);
            }
        }
        Ok(Raw {
            path: path.to_path_buf(),
            dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            entries,
        })
    }

    fn take_str(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.remove(key)
    }

    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.take_str(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|e| anyhow!("{}:{line}: bad value for `{key}`: {e}", self.path.display())),
        }
    }

    fn set<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.take(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn take_time(&mut self, key: &str) -> Result<Option<Seconds>> {
        match self.take_str(key) {
            None => Ok(None),
            Some((line, v)) => parse_time(&v).map(Some).ok_or_else(|| {
                anyhow!(
                    "{}:{line}: `{key}` must be seconds or HH:MM",
                    self.path.display()
                )
            }),
        }
    }

    fn take_path(&mut self, key: &str) -> Option<PathBuf> {
        self.take_str(key).map(|(_, v)| self.dir.join(v))
    }

    fn finish(self) -> Result<()> {
        if let Some((k, (line, _))) = self.entries.iter().next() {
            bail!("{}:{line}: unknown key `{k}`", self.path.display());
        }
        Ok(())
    }
}

fn parse_time(v: &str) -> Option<Seconds> {
    if let Some((h, m)) = v.split_once(':') {
        let h: u32 = h.trim().parse().ok()?;
        let m: u32 = m.trim().parse().ok()?;
        (m < 60).then_some(h as f64 * 3600.0 + m as f64 * 60.0)
    } else {
        v.parse().ok().filter(|x: &f64| x.is_finite())
    }
}

fn parse_list<T: FromStr>(v: &str) -> Option<Vec<T>> {
    v.split(',').map(|x| x.trim().parse().ok()).collect()
}

/// Reads the scenario at `path`; `seed` overrides the file's `seed`.
pub fn load(path: &Path, seed: Option<u64>) -> Result<Scenario> {
    let mut raw = Raw::read(path)?;
    let mut cfg = ScenarioConfig::default();

    raw.set("batch", &mut cfg.batch)?;
    raw.set("short_cadence", &mut cfg.short_cadence)?;
    raw.set("long_cadence", &mut cfg.long_cadence)?;
    raw.set("t_sl", &mut cfg.t_sl)?;
    raw.set("delta", &mut cfg.delta)?;
    raw.set("allow_delta_override", &mut cfg.allow_delta_override)?;
    raw.set("fleet_size", &mut cfg.fleet_size)?;
    raw.set("vehicle_capacity", &mut cfg.vehicle_capacity)?;
    raw.set("seed", &mut cfg.seed)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(t) = raw.take_time("day_start")? {
        cfg.day_start = t;
    }
    if let Some(t) = raw.take_time("day_end")? {
        cfg.day_end = t;
    }
    if let Some((line, v)) = raw.take_str("initial_charge") {
        cfg.initial_charge =
            InitialCharge::from_str(&v).map_err(|e| anyhow!("{}:{line}: {e}", path.display()))?;
    }
    raw.set("period", &mut cfg.period)?;
    raw.set("ramp_slope", &mut cfg.ramp_slope)?;
    raw.set("charge_duration", &mut cfg.charge_duration)?;
    raw.set("long_penalty", &mut cfg.long_penalty)?;
    cfg.long_horizon = raw.take("long_horizon")?;

    let qos = &mut cfg.pooling.qos;
    raw.set("max_wait", &mut qos.max_wait)?;
    raw.set("max_delay", &mut qos.max_delay)?;
    let p = &mut cfg.pooling;
    raw.set("buffer_d", &mut p.buffer_d)?;
    raw.set("nearest_vehicle_cap", &mut p.nearest_vehicle_cap)?;
    raw.set("max_riders", &mut p.max_riders)?;
    raw.set("trip_cap", &mut p.trip_cap)?;
    raw.set("unserved_penalty", &mut p.penalty)?;
    raw.set("benchmark_threshold", &mut cfg.benchmark.threshold)?;
    raw.set("benchmark_radius", &mut cfg.benchmark.radius)?;

    let mut bp = BatteryParams::default();
    raw.set("knee_charge", &mut bp.knee_charge)?;
    raw.set("knee_minutes", &mut bp.knee_minutes)?;
    raw.set("full_minutes", &mut bp.full_minutes)?;
    raw.set("eta", &mut bp.eta)?;
    raw.set("q_est", &mut bp.q_est)?;
    raw.set("q_min", &mut bp.q_min)?;
    raw.set("range_km", &mut bp.range_km)?;
    cfg.battery = BatteryModel::new(bp).context("battery parameters")?;

    let net = load_network(&mut raw)?;
    let requests = load_demand(&mut raw, &net, &cfg)?;

    let mut block = DEFAULT_BLOCK;
    raw.set("block", &mut block)?;
    let mut lambda_step = 0.05;
    raw.set("lambda_step", &mut lambda_step)?;
    let requirement = match (raw.take_path("requirement"), raw.take_str("lambda")) {
        (Some(_), Some((line, _))) => bail!(
            "{}:{line}: give either `requirement` or `lambda`, not both",
            path.display()
        ),
        (Some(p), None) => RequirementSource::File(p),
        (None, Some((_, v))) if v.eq_ignore_ascii_case("auto") => RequirementSource::Calibrate,
        (None, Some((line, v))) => match v.parse::<f64>() {
            Ok(l) if (0.0..=1.0).contains(&l) => RequirementSource::Lambda(l),
            _ => bail!(
                "{}:{line}: `lambda` must be `auto` or lie in [0, 1]",
                path.display()
            ),
        },
        (None, None) => RequirementSource::None,
    };
    raw.finish()?;

    Ok(Scenario {
        config: cfg,
        net,
        requests,
        requirement,
        block,
        lambda_step,
    })
}

fn load_network(raw: &mut Raw) -> Result<RoadNetwork> {
    let path = raw.path.display().to_string();
    let net = if let Some((line, v)) = raw.take_str("grid") {
        let dims = v
            .split_once(['x', 'X'])
            .and_then(|(r, c)| Some((r.trim().parse().ok()?, c.trim().parse().ok()?)));
        let Some((rows, cols)) = dims else {
            bail!("{path}:{line}: `grid` must look like `10x10`");
        };
        let mut edge_time = 60.0;
        let mut edge_distance = 500.0;
        raw.set("grid_edge_time", &mut edge_time)?;
        raw.set("grid_edge_distance", &mut edge_distance)?;
        generate_grid(rows, cols, edge_time, edge_distance)?
    } else {
        let (Some(nodes), Some(arcs)) = (raw.take_path("nodes"), raw.take_path("arcs")) else {
            bail!("{path}: the network needs either `grid` or both `nodes` and `arcs`");
        };
        RoadNetwork::load_graph(&nodes, &arcs)
            .with_context(|| format!("loading {} and {}", nodes.display(), arcs.display()))?
    };

    let stations = match (raw.take_path("stations"), raw.take_str("station_nodes")) {
        (Some(_), Some((line, _))) => {
            bail!("{path}:{line}: give either `stations` or `station_nodes`, not both")
        }
        (Some(p), None) => {
            load_stations(&p).with_context(|| format!("loading stations {}", p.display()))?
        }
        (None, Some((line, v))) => {
            let nodes: Vec<u32> = parse_list(&v)
                .ok_or_else(|| anyhow!("{path}:{line}: `station_nodes` must list node ids"))?;
            let mut capacity = 1u32;
            raw.set("station_capacity", &mut capacity)?;
            nodes
                .into_iter()
                .enumerate()
                .map(|(i, n)| Station {
                    id: StationId(i as u32),
                    node: NodeId(n),
                    capacity,
                })
                .collect()
        }
        (None, None) => Vec::new(),
    };
    Ok(net.with_stations(stations)?)
}

fn load_demand(raw: &mut Raw, net: &RoadNetwork, cfg: &ScenarioConfig) -> Result<Vec<Request>> {
    let path = raw.path.display().to_string();
    let synthetic: Option<f64> = raw.take("synthetic_requests")?;
    let synthetic_seed: Option<u64> = raw.take("synthetic_seed")?;
    match (raw.take_path("requests"), synthetic) {
        (Some(_), Some(_)) => {
            bail!("{path}: give either `requests` or `synthetic_requests`, not both")
        }
        (Some(p), None) => {
            if !p.is_file() {
                bail!("request file {} does not exist", p.display());
            }
            load_requests(&p, net).with_context(|| format!("loading requests {}", p.display()))
        }
        (None, Some(total)) => {
            let hours = ((cfg.day_end - cfg.day_start) / 3600.0).ceil().max(1.0) as usize;
            let profile = ArrivalProfile::rush_hour(cfg.day_start, hours, total);
            Ok(synth_requests(
                net,
                &profile,
                synthetic_seed.unwrap_or(cfg.seed),
            ))
        }
        (None, None) => Ok(Vec::new()),
    }
}

impl Scenario {
    /// Normalised demand per block over the operating day.
    pub fn profile(&self) -> Result<Vec<f64>> {
        let day = self.config.day_end - self.config.day_start;
        let blocks = (day / self.block).ceil() as usize;
        match demand_profile(
            &self.requests,
            |a, b| self.net.tt(a, b),
            self.block,
            self.config.day_start,
            blocks,
        ) {
            Err(DemandError::EmptyInput) => {
                bail!("the demand profile needs at least one request")
            }
            r => Ok(r?),
        }
    }

    pub fn calibration_setup(&self) -> CalibrationSetup {
        let c = &self.config;
        CalibrationSetup {
            block: self.block,
            period: c.period,
            horizon_periods: ((c.day_end - c.day_start) / c.period).ceil() as usize,
            availability: AvailabilityFunction::new(c.ramp_slope, c.charge_duration),
        }
    }

    /// Smallest feasible lambda and the requirement it induces.
    pub fn calibrate(&self) -> Result<AvailabilityRequirement> {
        let profile = self.profile()?;
        let c = &self.config;
        let lambda = match calibrate_lambda(
            c.fleet_size,
            &profile,
            &c.battery,
            self.net.total_capacity(),
            self.lambda_step,
            &self.calibration_setup(),
        ) {
            Err(DemandError::Infeasible) => {
                return Err(
                    Infeasible("no lambda in [0, 1] gives a feasible charging plan".into()).into(),
                )
            }
            r => r?,
        };
        Ok(availability_requirement(
            c.fleet_size,
            &profile,
            lambda,
            self.block,
        ))
    }

    /// Resolves the requirement source into the config.
    pub fn resolve_requirement(&mut self) -> Result<()> {
        self.config.requirement = match &self.requirement {
            RequirementSource::None => None,
            RequirementSource::File(p) => Some(
                load_requirement(p)
                    .with_context(|| format!("loading requirement {}", p.display()))?,
            ),
            RequirementSource::Lambda(l) => Some(availability_requirement(
                self.config.fleet_size,
                &self.profile()?,
                *l,
                self.block,
            )),
            RequirementSource::Calibrate => Some(self.calibrate()?),
        };
        Ok(())
    }
}
