//! `evpool`: run fleet scenarios, calibrate the availability requirement and
//! place charging stations.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use evpool::demand::save_requirement;
use evpool::network::{place_stations_greedy, place_stations_kmeans, save_stations};
use evpool::sim::{run, save_metrics_csv, save_timeseries_csv, Method, Metrics};

/// Failure that maps to exit code 1.
#[derive(Debug)]
pub struct Infeasible(pub String);

impl std::fmt::Display for Infeasible {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Infeasible {}

#[derive(Parser)]
#[command(
    name = "evpool",
    version,
    about = "Electric ridepooling fleet simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one day per method and write metrics, time series and events.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated list from ice, milp, heuristic, benchmark.
        #[arg(long, default_value = "ice,heuristic,benchmark")]
        methods: String,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Find the smallest feasible lambda and write the demand profile and requirement.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        /// Output CSV with one row per demand block.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Lambda grid step; overrides the config value.
        #[arg(long)]
        step: Option<f64>,
    },
    /// Choose charging-station sites on the scenario network.
    PlaceStations {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        k: usize,
        /// Charging slots split over the stations (k-means only).
        #[arg(long)]
        total_capacity: Option<u32>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Kmeans,
    Greedy,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            methods,
            out,
            seed,
        } => cmd_run(&config, &methods, &out, seed),
        Command::Calibrate {
            config,
            out,
            seed,
            step,
        } => cmd_calibrate(&config, &out, seed, step),
        Command::PlaceStations {
            config,
            mode,
            k,
            total_capacity,
            seed,
            out,
        } => cmd_place_stations(&config, mode, k, total_capacity, seed, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<Infeasible>().is_some() => {
            eprintln!("infeasible: {e:#}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn parse_methods(list: &str) -> Result<Vec<Method>> {
    let mut out = Vec::new();
    for name in list.split(',').filter(|s| !s.trim().is_empty()) {
        let m = Method::from_str(name)?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        bail!("no methods given");
    }
    Ok(out)
}

fn cmd_run(config: &Path, methods: &str, out: &Path, seed: Option<u64>) -> Result<()> {
    let methods = parse_methods(methods)?;
    let mut scenario = config::load(config, seed)?;
    if methods.iter().any(|m| *m != Method::Ice) {
        scenario.resolve_requirement()?;
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let mut rows = Vec::new();
    let mut infeasible = Vec::new();
    for m in methods {
        let cfg = evpool::sim::ScenarioConfig {
            method: m,
            ..scenario.config.clone()
        };
        let o =
            run(&cfg, &scenario.net, &scenario.requests).with_context(|| format!("method {m}"))?;
        let dir = out.join(m.name().to_ascii_lowercase());
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let name = m.name().to_string();
        let (metrics, series, events) = (
            dir.join("metrics.csv"),
            dir.join("timeseries.csv"),
            dir.join("events.csv"),
        );
        written(
            &metrics,
            save_metrics_csv(&metrics, &[(name.clone(), o.metrics)]),
        )?;
        written(&series, save_timeseries_csv(&series, &o.timeseries))?;
        written(&events, o.events.save_csv(&events))?;
        if o.short_infeasible > 0 {
            infeasible.push(format!(
                "{name}: {} short-horizon rounds without a feasible station assignment",
                o.short_infeasible
            ));
        }
        rows.push((name, o.metrics));
    }
    let summary = out.join("metrics.csv");
    written(&summary, save_metrics_csv(&summary, &rows))?;
    print!("{}", table(&rows));
    if !infeasible.is_empty() {
        return Err(Infeasible(infeasible.join("; ")).into());
    }
    Ok(())
}

fn written<E>(path: &Path, r: std::result::Result<(), E>) -> Result<()>
where
    E: std::error::Error + Send + Sync + 'static,
{
    r.with_context(|| format!("writing {}", path.display()))
}

fn table(rows: &[(String, Metrics)]) -> String {
    let mut s = format!(
        "{:<10} {:>7} {:>7} {:>7} {:>7} {:>6} {:>6} {:>7} {:>10}\n",
        "method", "Rate", "WT", "RT", "delay", "Abs", "rider", "shared", "km"
    );
    for (name, m) in rows {
        s += &format!(
            "{:<10} {:>7.4} {:>7.1} {:>7.1} {:>7.1} {:>6.3} {:>6.3} {:>7.4} {:>10.1}\n",
            name,
            m.service_rate,
            m.mean_wait_s,
            m.mean_ride_s,
            m.mean_delay_s,
            m.abs_utilization,
            m.rider_share_rate,
            m.shared_rate,
            m.total_distance_km
        );
    }
    s
}

fn cmd_calibrate(config: &Path, out: &Path, seed: Option<u64>, step: Option<f64>) -> Result<()> {
    let mut scenario = config::load(config, seed)?;
    if let Some(s) = step {
        scenario.lambda_step = s;
    }
    if scenario.net.stations().is_empty() {
        bail!("calibration needs at least one station");
    }
    let req = scenario.calibrate()?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    save_requirement(out, &req).with_context(|| format!("writing {}", out.display()))?;
    println!("lambda = {}", req.lambda);
    Ok(())
}

fn cmd_place_stations(
    config: &Path,
    mode: Mode,
    k: usize,
    total_capacity: Option<u32>,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let scenario = config::load(config, None)?;
    let stations = match mode {
        Mode::Kmeans => {
            let endpoints: Vec<_> = scenario
                .requests
                .iter()
                .flat_map(|r| [r.origin, r.destination])
                .collect();
            if endpoints.is_empty() {
                bail!("k-means placement needs requests");
            }
            let total = total_capacity.unwrap_or(k as u32);
            place_stations_kmeans(&scenario.net, &endpoints, k, total, seed)?
        }
        Mode::Greedy => place_stations_greedy(&scenario.net, k, seed)?,
    };
    save_stations(out, &stations).with_context(|| format!("writing {}", out.display()))?;
    for s in &stations {
        println!(
            "station {} at node {} capacity {}",
            s.id.0, s.node.0, s.capacity
        );
    }
    Ok(())
}
