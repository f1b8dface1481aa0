//! Sending idle vehicles toward the origins of rejected requests.

use crate::demand::Request;
use crate::network::{NodeId, RoadNetwork};
use crate::pooling::{VehicleId, VehicleState};
use crate::Seconds;

/// Side length above which the greedy matching replaces the exact one.
const EXACT_LIMIT: usize = 200;

/// Minimum total travel-time matching of idle vehicles to rejected origins.
pub fn rebalance(
    net: &RoadNetwork,
    idle: &[VehicleState],
    rejected: &[Request],
    now: Seconds,
) -> Vec<(VehicleId, NodeId)> {
    if idle.is_empty() || rejected.is_empty() {
        return Vec::new();
    }
    let cost: Vec<Vec<f64>> = idle
        .iter()
        .map(|v| {
            let (n, _) = v.anchor(now);
            rejected.iter().map(|r| net.tt(n, r.origin)).collect()
        })
        .collect();
    let mut out: Vec<(VehicleId, NodeId)> = min_cost_matching(&cost)
        .into_iter()
        .map(|(i, j)| (idle[i].id, rejected[j].origin))
        .collect();
    out.sort();
    out
}

/// Pairs `(row, column)` of a minimum-cost matching of size
/// `min(rows, columns)`; exact up to 200 on the shorter side, greedy beyond.
pub fn min_cost_matching(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let n = cost.len();
    let m = cost.first().map_or(0, |r| r.len());
    if n == 0 || m == 0 {
        return Vec::new();
    }
    if n.min(m) > EXACT_LIMIT {
        return greedy(cost);
    }
    if n <= m {
        hungarian(cost)
    } else {
        let t: Vec<Vec<f64>> = (0..m)
            .map(|j| (0..n).map(|i| cost[i][j]).collect())
            .collect();
        let mut p: Vec<(usize, usize)> = hungarian(&t).into_iter().map(|(j, i)| (i, j)).collect();
        p.sort_unstable();
        p
    }
}

fn greedy(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(f64, usize, usize)> = cost
        .iter()
        .enumerate()
        .flat_map(|(i, r)| r.iter().enumerate().map(move |(j, &c)| (c, i, j)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut row = vec![false; cost.len()];
    let mut col = vec![false; cost[0].len()];
    let mut out = Vec::new();
    for (_, i, j) in pairs {
        if !row[i] && !col[j] {
            row[i] = true;
            col[j] = true;
            out.push((i, j));
        }
    }
    out.sort_unstable();
    out
}

/// Shortest augmenting path with potentials; requires rows <= columns.
fn hungarian(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let n = cost.len();
    let m = cost[0].len();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| p[j] != 0)
        .map(|j| (p[j] - 1, j - 1))
        .collect();
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::RequestId;
    use crate::network::path_network;

    fn total(cost: &[Vec<f64>], m: &[(usize, usize)]) -> f64 {
        m.iter().map(|&(i, j)| cost[i][j]).sum()
    }

    #[test]
    fn nearer_origin() {
        let net = path_network(5, 60.0, 100.0);
        let v = [VehicleState::idle(VehicleId(0), NodeId(1), 4, 1.0)];
        let r = |id, o| Request {
            id: RequestId(id),
            entry_time: 0.0,
            origin: NodeId(o),
            destination: NodeId(0),
        };
        assert_eq!(
            rebalance(&net, &v, &[r(0, 4), r(1, 2)], 0.0),
            vec![(VehicleId(0), NodeId(2))]
        );
        assert!(rebalance(&net, &v, &[], 0.0).is_empty());
    }

    #[test]
    fn rectangular_shapes() {
        let c = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0]];
        let m = min_cost_matching(&c);
        assert_eq!(m.len(), 2);
        assert_eq!(total(&c, &m), 3.0);
        let t: Vec<Vec<f64>> = (0..3).map(|j| (0..2).map(|i| c[i][j]).collect()).collect();
        assert_eq!(total(&t, &min_cost_matching(&t)), 3.0);
    }
}
