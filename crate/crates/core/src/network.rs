//! Road network storage, travel-time queries and charge-station placement.
//!
//! A [`RoadNetwork`] is immutable once built. Travel-time rows are computed
//! with Dijkstra and memoised per source; small networks are precomputed in
//! full at construction so that every query is a table lookup.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Seconds;

/// Networks at or below this size get all-pairs travel times at construction.
pub const ALL_PAIRS_LIMIT: usize = 2_500;

const KMEANS_MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StationId(pub u32);

impl fmt::Display for StationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid network: {0}")]
    Validation(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    /// Planar coordinates in meters; only used for seeding and export.
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub from: NodeId,
    pub to: NodeId,
    pub travel_time: Seconds,
    /// Meters.
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Station {
    pub id: StationId,
    pub node: NodeId,
    /// Number of vehicles that may charge simultaneously.
    pub capacity: u32,
}

#[derive(Debug, Clone)]
pub struct RoadNetwork {
    nodes: Vec<Node>,
    arcs: Vec<Arc>,
    stations: Vec<Station>,
    index: HashMap<NodeId, usize>,
    /// Per node: (head index, arc index), cheapest parallel arc only, sorted by head id.
    out: Vec<Vec<(usize, usize)>>,
    rows: Vec<OnceLock<Box<[Seconds]>>>,
}

#[derive(Debug, Deserialize)]
struct NodeRow {
    node_id: u32,
    x: f64,
    y: f64,
}

#[derive(Debug, Deserialize)]
struct ArcRow {
    from: u32,
    to: u32,
    travel_time_s: f64,
    distance_m: f64,
}

#[derive(Debug, Deserialize)]
struct StationRow {
    station_id: u32,
    node_id: u32,
    capacity: u32,
}

impl RoadNetwork {
    /// Validates and indexes a network.
    pub fn new(
        nodes: Vec<Node>,
        arcs: Vec<Arc>,
        stations: Vec<Station>,
    ) -> Result<Self, NetworkError> {
        if nodes.is_empty() {
            return Err(NetworkError::Validation("network has no nodes".into()));
        }
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id, i).is_some() {
                return Err(NetworkError::Validation(format!("duplicate node {}", n.id)));
            }
        }
        let mut best: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); nodes.len()];
        for (ai, a) in arcs.iter().enumerate() {
            let from = *index.get(&a.from).ok_or_else(|| {
                NetworkError::Validation(format!("arc {} -> {} has undeclared tail", a.from, a.to))
            })?;
            let to = *index.get(&a.to).ok_or_else(|| {
                NetworkError::Validation(format!("arc {} -> {} has undeclared head", a.from, a.to))
            })?;
            if !(a.travel_time > 0.0 && a.travel_time.is_finite()) {
                return Err(NetworkError::Validation(format!(
                    "arc {} -> {} has non-positive travel time {}",
                    a.from, a.to, a.travel_time
                )));
            }
            if !(a.distance >= 0.0 && a.distance.is_finite()) {
                return Err(NetworkError::Validation(format!(
                    "arc {} -> {} has negative distance {}",
                    a.from, a.to, a.distance
                )));
            }
            if from == to {
                continue;
            }
            let slot = best[from].entry(to).or_insert(ai);
            if arcs[*slot].travel_time > a.travel_time {
                *slot = ai;
            }
        }
        let mut out: Vec<Vec<(usize, usize)>> = best
            .into_iter()
            .map(|m| m.into_iter().collect::<Vec<_>>())
            .collect();
        for adj in &mut out {
            adj.sort_by_key(|&(h, _)| nodes[h].id);
        }

        let mut station_nodes = HashSet::new();
        let mut station_ids = HashSet::new();
        for s in &stations {
            if !index.contains_key(&s.node) {
                return Err(NetworkError::Validation(format!(
                    "station {} on undeclared node {}",
                    s.id, s.node
                )));
            }
            if s.capacity == 0 {
                return Err(NetworkError::Validation(format!(
                    "station {} has zero capacity",
                    s.id
                )));
            }
            if !station_nodes.insert(s.node) {
                return Err(NetworkError::Validation(format!(
                    "duplicate station node {}",
                    s.node
                )));
            }
            if !station_ids.insert(s.id) {
                return Err(NetworkError::Validation(format!(
                    "duplicate station id {}",
                    s.id
                )));
            }
        }

        let rows = (0..nodes.len()).map(|_| OnceLock::new()).collect();
        let net = RoadNetwork {
            nodes,
            arcs,
            stations,
            index,
            out,
            rows,
        };
        net.check_strongly_connected()?;
        if net.nodes.len() <= ALL_PAIRS_LIMIT {
            for i in 0..net.nodes.len() {
                net.row(i);
            }
        }
        Ok(net)
    }

    /// Loads `nodes.csv`, `arcs.csv` and `stations.csv`.
    pub fn load(
        node_file: &Path,
        arc_file: &Path,
        station_file: &Path,
    ) -> Result<Self, NetworkError> {
        let (nodes, arcs) = read_graph(node_file, arc_file)?;
        let stations = load_stations(station_file)?;
        RoadNetwork::new(nodes, arcs, stations)
    }

    /// Loads `nodes.csv` and `arcs.csv` into a network without stations.
    pub fn load_graph(node_file: &Path, arc_file: &Path) -> Result<Self, NetworkError> {
        let (nodes, arcs) = read_graph(node_file, arc_file)?;
        RoadNetwork::new(nodes, arcs, Vec::new())
    }

    pub fn save(
        &self,
        node_file: &Path,
        arc_file: &Path,
        station_file: &Path,
    ) -> Result<(), NetworkError> {
        let mut w = csv_writer(node_file)?;
        w.write_record(["node_id", "x", "y"])
            .map_err(|e| csv_err(node_file, e))?;
        for n in &self.nodes {
            w.write_record([n.id.0.to_string(), n.x.to_string(), n.y.to_string()])
                .map_err(|e| csv_err(node_file, e))?;
        }
        w.flush()?;
        let mut w = csv_writer(arc_file)?;
        w.write_record(["from", "to", "travel_time_s", "distance_m"])
            .map_err(|e| csv_err(arc_file, e))?;
        for a in &self.arcs {
            w.write_record([
                a.from.0.to_string(),
                a.to.0.to_string(),
                a.travel_time.to_string(),
                a.distance.to_string(),
            ])
            .map_err(|e| csv_err(arc_file, e))?;
        }
        w.flush()?;
        save_stations(station_file, &self.stations)
    }

    /// Same graph with a different station set.
    pub fn with_stations(&self, stations: Vec<Station>) -> Result<Self, NetworkError> {
        RoadNetwork::new(self.nodes.clone(), self.arcs.clone(), stations)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn stations(&self) -> &[Station] {
        &self.stations
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.index.contains_key(&node)
    }

    pub fn station(&self, id: StationId) -> Option<&Station> {
        self.stations.iter().find(|s| s.id == id)
    }

    /// Sum of station capacities.
    pub fn total_capacity(&self) -> u32 {
        self.stations.iter().map(|s| s.capacity).sum()
    }

    fn idx(&self, node: NodeId) -> Result<usize, NetworkError> {
        self.index
            .get(&node)
            .copied()
            .ok_or(NetworkError::UnknownNode(node))
    }

    /// Minimum travel time from `a` to `b`.
    pub fn shortest_travel_time(&self, a: NodeId, b: NodeId) -> Result<Seconds, NetworkError> {
        let ia = self.idx(a)?;
        let ib = self.idx(b)?;
        Ok(self.row(ia)[ib])
    }

    /// Infallible variant for nodes already known to be in the network.
    ///
    /// Panics on an unknown node.
    pub fn tt(&self, a: NodeId, b: NodeId) -> Seconds {
        self.shortest_travel_time(a, b)
            .expect("node not in network")
    }

    /// Infallible [`RoadNetwork::path_distance`]; panics on an unknown node.
    pub fn dist(&self, a: NodeId, b: NodeId) -> f64 {
        self.path_distance(a, b).expect("node not in network")
    }

    /// Minimum-time path from `a` to `b` as a node sequence including both ends.
    ///
    /// Among equal-time paths the lexicographically smallest node sequence wins.
    pub fn shortest_path(&self, a: NodeId, b: NodeId) -> Result<Vec<NodeId>, NetworkError> {
        let ia = self.idx(a)?;
        let ib = self.idx(b)?;
        let mut path = vec![a];
        let mut u = ia;
        while u != ib {
            let remaining = self.row(u)[ib];
            let tol = 1e-9 * remaining.max(1.0);
            let next = self.out[u]
                .iter()
                .find(|&&(v, arc)| {
                    let via = self.arcs[arc].travel_time + self.row(v)[ib];
                    (via - remaining).abs() <= tol
                })
                .map(|&(v, _)| v)
                .expect("shortest-path successor must exist in a strongly connected graph");
            path.push(self.nodes[next].id);
            u = next;
        }
        Ok(path)
    }

    /// The arc used when stepping from `a` to its neighbour `b`.
    pub fn arc_between(&self, a: NodeId, b: NodeId) -> Option<&Arc> {
        let ia = *self.index.get(&a)?;
        let ib = *self.index.get(&b)?;
        self.out[ia]
            .iter()
            .find(|&&(h, _)| h == ib)
            .map(|&(_, arc)| &self.arcs[arc])
    }

    /// Length in meters of [`RoadNetwork::shortest_path`].
    pub fn path_distance(&self, a: NodeId, b: NodeId) -> Result<f64, NetworkError> {
        let path = self.shortest_path(a, b)?;
        Ok(path
            .windows(2)
            .map(|w| self.arc_between(w[0], w[1]).map_or(0.0, |arc| arc.distance))
            .sum())
    }

    /// Nearest station by travel time from `node`; ties go to the smaller station id.
    pub fn nearest_station(&self, node: NodeId) -> Option<(StationId, Seconds)> {
        let i = self.idx(node).ok()?;
        let row = self.row(i);
        self.stations
            .iter()
            .map(|s| (s.id, row[self.index[&s.node]]))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
    }

    /// Largest travel time from any node to its nearest station.
    pub fn max_nearest_station_time(&self) -> Seconds {
        self.nodes
            .iter()
            .filter_map(|n| self.nearest_station(n.id).map(|(_, t)| t))
            .fold(0.0, f64::max)
    }

    fn row(&self, source: usize) -> &[Seconds] {
        self.rows[source].get_or_init(|| self.dijkstra(source))
    }

    fn dijkstra(&self, source: usize) -> Box<[Seconds]> {
        let mut dist = vec![f64::INFINITY; self.nodes.len()];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(HeapEntry {
            cost: 0.0,
            node: source,
        });
        while let Some(HeapEntry { cost, node }) = heap.pop() {
            if cost > dist[node] {
                continue;
            }
            for &(head, arc) in &self.out[node] {
                let next = cost + self.arcs[arc].travel_time;
                if next < dist[head] {
                    dist[head] = next;
                    heap.push(HeapEntry {
                        cost: next,
                        node: head,
                    });
                }
            }
        }
        dist.into_boxed_slice()
    }

    fn check_strongly_connected(&self) -> Result<(), NetworkError> {
        let n = self.nodes.len();
        let mut rev: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (u, adj) in self.out.iter().enumerate() {
            for &(v, _) in adj {
                rev[v].push(u);
            }
        }
        let reach = |adj: &dyn Fn(usize) -> Vec<usize>| {
            let mut seen = vec![false; n];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(u) = stack.pop() {
                for v in adj(u) {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
            seen
        };
        let fwd = reach(&|u| self.out[u].iter().map(|&(v, _)| v).collect());
        let bwd = reach(&|u| rev[u].clone());
        if let Some(i) = (0..n).find(|&i| !fwd[i] || !bwd[i]) {
            return Err(NetworkError::Validation(format!(
                "graph is not strongly connected (node {} unreachable)",
                self.nodes[i].id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, PartialEq)]
struct HeapEntry {
    cost: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> NetworkError {
    NetworkError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, NetworkError> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| csv_err(path, e))
}

fn read_graph(node_file: &Path, arc_file: &Path) -> Result<(Vec<Node>, Vec<Arc>), NetworkError> {
    let nodes = read_rows::<NodeRow>(node_file, &["node_id", "x", "y"])?
        .into_iter()
        .map(|r| Node {
            id: NodeId(r.node_id),
            x: r.x,
            y: r.y,
        })
        .collect();
    let arcs = read_rows::<ArcRow>(arc_file, &["from", "to", "travel_time_s", "distance_m"])?
        .into_iter()
        .map(|r| Arc {
            from: NodeId(r.from),
            to: NodeId(r.to),
            travel_time: r.travel_time_s,
            distance: r.distance_m,
        })
        .collect();
    Ok((nodes, arcs))
}

/// Reads a headered CSV file, insisting on the exact header list.
pub(crate) fn read_rows<T: serde::de::DeserializeOwned>(
    path: &Path,
    header: &[&str],
) -> Result<Vec<T>, NetworkError> {
    let file = std::fs::File::open(path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let got = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if got.iter().ne(header.iter().copied()) {
        return Err(NetworkError::Parse {
            path: path.display().to_string(),
            message: format!(
                "expected header `{}`, found `{}`",
                header.join(","),
                got.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    rdr.deserialize()
        .map(|r| r.map_err(|e| csv_err(path, e)))
        .collect()
}

pub fn load_stations(path: &Path) -> Result<Vec<Station>, NetworkError> {
    Ok(
        read_rows::<StationRow>(path, &["station_id", "node_id", "capacity"])?
            .into_iter()
            .map(|r| Station {
                id: StationId(r.station_id),
                node: NodeId(r.node_id),
                capacity: r.capacity,
            })
            .collect(),
    )
}

pub fn save_stations(path: &Path, stations: &[Station]) -> Result<(), NetworkError> {
    let mut w = csv_writer(path)?;
    w.write_record(["station_id", "node_id", "capacity"])
        .map_err(|e| csv_err(path, e))?;
    for s in stations {
        w.write_record([
            s.id.0.to_string(),
            s.node.0.to_string(),
            s.capacity.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

/// Bidirectional `rows × cols` grid; node `r * cols + c` sits at `(c, r) * edge_distance`.
pub fn generate_grid(
    rows: u32,
    cols: u32,
    edge_time: Seconds,
    edge_distance: f64,
) -> Result<RoadNetwork, NetworkError> {
    if rows < 2 || cols < 2 {
        return Err(NetworkError::InvalidArgument(format!(
            "grid must be at least 2x2, got {rows}x{cols}"
        )));
    }
    let id = |r: u32, c: u32| NodeId(r * cols + c);
    let mut nodes = Vec::with_capacity((rows * cols) as usize);
    let mut arcs = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            nodes.push(Node {
                id: id(r, c),
                x: c as f64 * edge_distance,
                y: r as f64 * edge_distance,
            });
            let mut link = |a: NodeId, b: NodeId| {
                arcs.push(Arc {
                    from: a,
                    to: b,
                    travel_time: edge_time,
                    distance: edge_distance,
                });
                arcs.push(Arc {
                    from: b,
                    to: a,
                    travel_time: edge_time,
                    distance: edge_distance,
                });
            };
            if c + 1 < cols {
                link(id(r, c), id(r, c + 1));
            }
            if r + 1 < rows {
                link(id(r, c), id(r + 1, c));
            }
        }
    }
    RoadNetwork::new(nodes, arcs, Vec::new())
}

/// Weighted k-medoids over the travel-time metric.
///
/// `endpoints` lists trip origins/destinations with multiplicity; each distinct
/// node weighs its count. Centres are seeded k-means++ style on the node
/// coordinates, then refined Lloyd-style with node-restricted medoid updates.
/// Capacities are split in proportion to cluster weight with largest-remainder
/// rounding, every station getting at least one slot.
pub fn place_stations_kmeans(
    net: &RoadNetwork,
    endpoints: &[NodeId],
    k: usize,
    total_capacity: u32,
    seed: u64,
) -> Result<Vec<Station>, NetworkError> {
    if k == 0 {
        return Err(NetworkError::InvalidArgument("k must be at least 1".into()));
    }
    if (total_capacity as usize) < k {
        return Err(NetworkError::InvalidArgument(format!(
            "total capacity {total_capacity} below k = {k}"
        )));
    }
    if endpoints.is_empty() {
        return Err(NetworkError::InvalidArgument(
            "no endpoints to cluster".into(),
        ));
    }
    let mut weight: BTreeMap<NodeId, f64> = BTreeMap::new();
    for &e in endpoints {
        net.idx(e)?;
        *weight.entry(e).or_default() += 1.0;
    }
    let points: Vec<(NodeId, f64)> = weight.into_iter().collect();
    if points.len() < k {
        return Err(NetworkError::InvalidArgument(format!(
            "k = {k} exceeds {} distinct endpoint nodes",
            points.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coord = |n: NodeId| {
        let node = net.nodes[net.index[&n]];
        (node.x, node.y)
    };
    let mut centers: Vec<usize> = Vec::with_capacity(k);
    centers.push(weighted_pick(
        &mut rng,
        &points.iter().map(|p| p.1).collect::<Vec<_>>(),
    ));
    while centers.len() < k {
        let scores: Vec<f64> = points
            .iter()
            .enumerate()
            .map(|(i, &(n, w))| {
                if centers.contains(&i) {
                    return 0.0;
                }
                let (x, y) = coord(n);
                let d2 = centers
                    .iter()
                    .map(|&c| {
                        let (cx, cy) = coord(points[c].0);
                        (x - cx).powi(2) + (y - cy).powi(2)
                    })
                    .fold(f64::INFINITY, f64::min);
                w * d2
            })
            .collect();
        let pick = if scores.iter().sum::<f64>() > 0.0 {
            weighted_pick(&mut rng, &scores)
        } else {
            let fallback: Vec<f64> = points
                .iter()
                .enumerate()
                .map(|(i, p)| if centers.contains(&i) { 0.0 } else { p.1 })
                .collect();
            weighted_pick(&mut rng, &fallback)
        };
        centers.push(pick);
    }

    let mut assignment = vec![0usize; points.len()];
    for _ in 0..KMEANS_MAX_ITERATIONS {
        for (i, &(n, _)) in points.iter().enumerate() {
            assignment[i] = (0..k)
                .min_by(|&a, &b| {
                    net.tt(n, points[centers[a]].0)
                        .total_cmp(&net.tt(n, points[centers[b]].0))
                })
                .expect("k >= 1");
        }
        let mut changed = false;
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<usize> = (0..points.len()).filter(|&i| assignment[i] == c).collect();
            let medoid = members
                .iter()
                .map(|&m| {
                    let cost: f64 = members
                        .iter()
                        .map(|&i| points[i].1 * net.tt(points[i].0, points[m].0))
                        .sum();
                    (m, cost)
                })
                .min_by(|a, b| a.1.total_cmp(&b.1).then(points[a.0].0.cmp(&points[b.0].0)))
                .map(|(m, _)| m)
                .unwrap_or(*center);
            if medoid != *center {
                *center = medoid;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    for (i, &(n, _)) in points.iter().enumerate() {
        assignment[i] = (0..k)
            .min_by(|&a, &b| {
                net.tt(n, points[centers[a]].0)
                    .total_cmp(&net.tt(n, points[centers[b]].0))
            })
            .expect("k >= 1");
    }

    let cluster_weight: Vec<f64> = (0..k)
        .map(|c| {
            (0..points.len())
                .filter(|&i| assignment[i] == c)
                .map(|i| points[i].1)
                .sum()
        })
        .collect();
    let capacities = largest_remainder(&cluster_weight, total_capacity);

    let mut stations: Vec<(NodeId, u32)> = centers
        .iter()
        .map(|&c| points[c].0)
        .zip(capacities)
        .collect();
    stations.sort_by_key(|s| s.0);
    Ok(stations
        .into_iter()
        .enumerate()
        .map(|(i, (node, capacity))| Station {
            id: StationId(i as u32),
            node,
            capacity,
        })
        .collect())
}

fn weighted_pick(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut target = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            if target < w {
                return i;
            }
            target -= w;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Apportions `total` units proportionally to `weights`, each share at least 1.
pub(crate) fn largest_remainder(weights: &[f64], total: u32) -> Vec<u32> {
    let k = weights.len();
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = if sum > 0.0 {
        weights.iter().map(|w| w / sum * total as f64).collect()
    } else {
        vec![total as f64 / k as f64; k]
    };
    let mut shares: Vec<u32> = quotas.iter().map(|q| q.floor() as u32).collect();
    let assigned: u32 = shares.iter().sum();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        (quotas[b] - quotas[b].floor())
            .total_cmp(&(quotas[a] - quotas[a].floor()))
            .then(a.cmp(&b))
    });
    for &i in order.iter().take((total - assigned) as usize) {
        shares[i] += 1;
    }
    while let Some(zero) = shares.iter().position(|&s| s == 0) {
        let donor = (0..k)
            .max_by(|&a, &b| shares[a].cmp(&shares[b]).then(b.cmp(&a)))
            .expect("k >= 1");
        shares[donor] -= 1;
        shares[zero] += 1;
    }
    shares
}

/// Farthest-point placement of `k` capacity-1 stations.
///
/// The first station lands on a node drawn uniformly with `seed`; every later
/// one goes to the node whose travel time to its nearest placed station is
/// largest, ties going to the smaller node id.
pub fn place_stations_greedy(
    net: &RoadNetwork,
    k: usize,
    seed: u64,
) -> Result<Vec<Station>, NetworkError> {
    if k == 0 || k > net.node_count() {
        return Err(NetworkError::InvalidArgument(format!(
            "k = {k} must lie in 1..={}",
            net.node_count()
        )));
    }
    let mut ids: Vec<NodeId> = net.nodes.iter().map(|n| n.id).collect();
    ids.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut placed = vec![ids[rng.random_range(0..ids.len())]];
    let mut nearest: Vec<f64> = ids.iter().map(|&n| net.tt(n, placed[0])).collect();
    while placed.len() < k {
        let (best, _) = ids
            .iter()
            .enumerate()
            .filter(|(_, n)| !placed.contains(n))
            .fold((usize::MAX, f64::NEG_INFINITY), |acc, (i, _)| {
                if nearest[i] > acc.1 {
                    (i, nearest[i])
                } else {
                    acc
                }
            });
        let node = ids[best];
        placed.push(node);
        for (i, &n) in ids.iter().enumerate() {
            nearest[i] = nearest[i].min(net.tt(n, node));
        }
    }
    Ok(placed
        .into_iter()
        .enumerate()
        .map(|(i, node)| Station {
            id: StationId(i as u32),
            node,
            capacity: 1,
        })
        .collect())
}

/// Bidirectional path `0 - 1 - ... - (n-1)` for tests.
#[cfg(test)]
pub(crate) fn path_network(n: u32, edge_time: Seconds, edge_distance: f64) -> RoadNetwork {
    let nodes = (0..n)
        .map(|i| Node {
            id: NodeId(i),
            x: i as f64 * edge_distance,
            y: 0.0,
        })
        .collect();
    let mut arcs = Vec::new();
    for i in 0..n - 1 {
        arcs.push(Arc {
            from: NodeId(i),
            to: NodeId(i + 1),
            travel_time: edge_time,
            distance: edge_distance,
        });
        arcs.push(Arc {
            from: NodeId(i + 1),
            to: NodeId(i),
            travel_time: edge_time,
            distance: edge_distance,
        });
    }
    RoadNetwork::new(nodes, arcs, vec![]).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p)
            .unwrap()
            .write_all(body.as_bytes())
            .unwrap();
        p
    }

    fn path_graph(n: u32, edge: f64) -> RoadNetwork {
        let nodes = (0..n)
            .map(|i| Node {
                id: NodeId(i),
                x: i as f64,
                y: 0.0,
            })
            .collect();
        let mut arcs = Vec::new();
        for i in 0..n - 1 {
            arcs.push(Arc {
                from: NodeId(i),
                to: NodeId(i + 1),
                travel_time: edge,
                distance: 1.0,
            });
            arcs.push(Arc {
                from: NodeId(i + 1),
                to: NodeId(i),
                travel_time: edge,
                distance: 1.0,
            });
        }
        RoadNetwork::new(nodes, arcs, vec![]).unwrap()
    }

    #[test]
    fn two_node_load() {
        let dir = tempfile::tempdir().unwrap();
        let n = write(dir.path(), "nodes.csv", "node_id,x,y\n0,0,0\n1,500,0\n");
        let a = write(
            dir.path(),
            "arcs.csv",
            "from,to,travel_time_s,distance_m\n0,1,60,500\n1,0,60,500\n",
        );
        let s = write(
            dir.path(),
            "stations.csv",
            "station_id,node_id,capacity\n0,1,2\n",
        );
        let net = RoadNetwork::load(&n, &a, &s).unwrap();
        assert_eq!(
            net.shortest_travel_time(NodeId(0), NodeId(1)).unwrap(),
            60.0
        );
        assert_eq!(net.total_capacity(), 2);
    }

    #[test]
    fn dangling_arc_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let n = write(dir.path(), "nodes.csv", "node_id,x,y\n0,0,0\n1,500,0\n");
        let a = write(
            dir.path(),
            "arcs.csv",
            "from,to,travel_time_s,distance_m\n0,1,60,500\n1,7,60,500\n",
        );
        let s = write(dir.path(), "stations.csv", "station_id,node_id,capacity\n");
        assert!(matches!(
            RoadNetwork::load(&n, &a, &s),
            Err(NetworkError::Validation(_))
        ));
    }

    #[test]
    fn disconnected_and_duplicate_station_rejected() {
        let nodes = vec![
            Node {
                id: NodeId(0),
                x: 0.0,
                y: 0.0,
            },
            Node {
                id: NodeId(1),
                x: 1.0,
                y: 0.0,
            },
        ];
        let one_way = vec![Arc {
            from: NodeId(0),
            to: NodeId(1),
            travel_time: 1.0,
            distance: 1.0,
        }];
        assert!(matches!(
            RoadNetwork::new(nodes.clone(), one_way, vec![]),
            Err(NetworkError::Validation(_))
        ));
        let both = vec![
            Arc {
                from: NodeId(0),
                to: NodeId(1),
                travel_time: 1.0,
                distance: 1.0,
            },
            Arc {
                from: NodeId(1),
                to: NodeId(0),
                travel_time: 1.0,
                distance: 1.0,
            },
        ];
        let dup = vec![
            Station {
                id: StationId(0),
                node: NodeId(0),
                capacity: 1,
            },
            Station {
                id: StationId(1),
                node: NodeId(0),
                capacity: 1,
            },
        ];
        assert!(matches!(
            RoadNetwork::new(nodes, both, dup),
            Err(NetworkError::Validation(_))
        ));
    }

    #[test]
    fn malformed_row_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let n = write(dir.path(), "nodes.csv", "node_id,x,y\n0,0,zero\n");
        let a = write(dir.path(), "arcs.csv", "from,to,travel_time_s,distance_m\n");
        let s = write(dir.path(), "stations.csv", "station_id,node_id,capacity\n");
        assert!(matches!(
            RoadNetwork::load(&n, &a, &s),
            Err(NetworkError::Parse { .. })
        ));
        let bad_header = write(dir.path(), "nodes2.csv", "id,x,y\n0,0,0\n");
        assert!(matches!(
            RoadNetwork::load(&bad_header, &a, &s),
            Err(NetworkError::Parse { .. })
        ));
    }

    #[test]
    fn identity_and_unknown_nodes() {
        let g = generate_grid(3, 3, 60.0, 100.0).unwrap();
        assert_eq!(g.shortest_travel_time(NodeId(4), NodeId(4)).unwrap(), 0.0);
        assert_eq!(
            g.shortest_path(NodeId(4), NodeId(4)).unwrap(),
            vec![NodeId(4)]
        );
        assert!(matches!(
            g.shortest_travel_time(NodeId(0), NodeId(99)),
            Err(NetworkError::UnknownNode(_))
        ));
        assert!(matches!(
            g.shortest_path(NodeId(99), NodeId(0)),
            Err(NetworkError::UnknownNode(_))
        ));
    }

    #[test]
    fn grid_sizes() {
        let g = generate_grid(2, 2, 60.0, 100.0).unwrap();
        assert_eq!((g.node_count(), g.arcs().len()), (4, 8));
        let g = generate_grid(10, 10, 60.0, 100.0).unwrap();
        assert_eq!(
            (g.node_count(), g.arcs().len()),
            (100, 2 * (2 * 100 - 10 - 10))
        );
        assert!(matches!(
            generate_grid(1, 5, 60.0, 1.0),
            Err(NetworkError::InvalidArgument(_))
        ));
    }

    #[test]
    fn equal_cost_paths_take_smallest_sequence() {
        // 0 -> {1, 2} -> 3, both legs equal.
        let g = generate_grid(2, 2, 60.0, 100.0).unwrap();
        assert_eq!(
            g.shortest_path(NodeId(0), NodeId(3)).unwrap(),
            vec![NodeId(0), NodeId(1), NodeId(3)]
        );
        assert_eq!(
            g.shortest_path(NodeId(3), NodeId(0)).unwrap(),
            vec![NodeId(3), NodeId(1), NodeId(0)]
        );
    }

    #[test]
    fn parallel_arcs_keep_cheapest() {
        let nodes = vec![
            Node {
                id: NodeId(0),
                x: 0.0,
                y: 0.0,
            },
            Node {
                id: NodeId(1),
                x: 1.0,
                y: 0.0,
            },
        ];
        let arcs = vec![
            Arc {
                from: NodeId(0),
                to: NodeId(1),
                travel_time: 90.0,
                distance: 1.0,
            },
            Arc {
                from: NodeId(0),
                to: NodeId(1),
                travel_time: 30.0,
                distance: 2.0,
            },
            Arc {
                from: NodeId(1),
                to: NodeId(0),
                travel_time: 10.0,
                distance: 1.0,
            },
        ];
        let g = RoadNetwork::new(nodes, arcs, vec![]).unwrap();
        assert_eq!(g.tt(NodeId(0), NodeId(1)), 30.0);
        assert_eq!(g.path_distance(NodeId(0), NodeId(1)).unwrap(), 2.0);
    }

    #[test]
    fn nearest_station_tie_breaks_on_id() {
        let g = path_graph(3, 10.0)
            .with_stations(vec![
                Station {
                    id: StationId(5),
                    node: NodeId(2),
                    capacity: 1,
                },
                Station {
                    id: StationId(3),
                    node: NodeId(0),
                    capacity: 1,
                },
            ])
            .unwrap();
        assert_eq!(g.nearest_station(NodeId(1)), Some((StationId(3), 10.0)));
        assert_eq!(g.max_nearest_station_time(), 10.0);
    }

    #[test]
    fn kmeans_single_cluster_is_weighted_medoid() {
        let g = path_graph(5, 10.0);
        let ends = [NodeId(0), NodeId(3), NodeId(3), NodeId(4)];
        let st = place_stations_kmeans(&g, &ends, 1, 7, 9).unwrap();
        assert_eq!(
            st,
            vec![Station {
                id: StationId(0),
                node: NodeId(3),
                capacity: 7
            }]
        );
    }

    #[test]
    fn kmeans_errors() {
        let g = path_graph(5, 10.0);
        assert!(place_stations_kmeans(&g, &[NodeId(0), NodeId(0)], 2, 4, 0).is_err());
        assert!(place_stations_kmeans(&g, &[NodeId(0), NodeId(1)], 2, 1, 0).is_err());
        assert!(place_stations_kmeans(&g, &[], 1, 1, 0).is_err());
    }

    #[test]
    fn largest_remainder_sums_and_floors_at_one() {
        assert_eq!(largest_remainder(&[1.0, 1.0, 1.0], 10), vec![4, 3, 3]);
        assert_eq!(largest_remainder(&[100.0, 0.001], 5), vec![4, 1]);
        assert_eq!(largest_remainder(&[0.0, 0.0], 3), vec![2, 1]);
    }

    #[test]
    fn greedy_path_of_three() {
        let g = path_graph(3, 10.0);
        for seed in 0..20 {
            let st = place_stations_greedy(&g, 2, seed).unwrap();
            if st[0].node == NodeId(0) {
                assert_eq!(st[1].node, NodeId(2));
            }
            if st[0].node == NodeId(2) {
                assert_eq!(st[1].node, NodeId(0));
            }
            assert!(st.iter().all(|s| s.capacity == 1));
        }
        assert_eq!(place_stations_greedy(&g, 1, 3).unwrap().len(), 1);
        assert!(place_stations_greedy(&g, 4, 0).is_err());
        assert!(place_stations_greedy(&g, 0, 0).is_err());
    }
}
