use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeId = usize;

const UNREACHABLE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub width: usize,
    pub height: usize,
    pub edge_m: f64,
    pub speed_mps: f64,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        LatticeConfig {
            width: 20,
            height: 20,
            edge_m: 100.0,
            speed_mps: 8.0,
        }
    }
}

/// Directed road graph with an exact all-pairs shortest-path oracle.
#[derive(Debug, Clone)]
pub struct RoadNetwork {
    nodes: usize,
    coords: Vec<(f64, f64)>,
    adjacency: Vec<Vec<(NodeId, f64)>>,
    speed_mps: f64,
    dist_m: Vec<f64>,
    next_hop: Vec<u32>,
}

impl RoadNetwork {
    pub fn lattice(config: &LatticeConfig) -> Result<Self> {
        let (w, h) = (config.width, config.height);
        if w == 0 || h == 0 || w * h < 2 {
            return Err(Error::InvalidConfig(
                "lattice needs at least two nodes".into(),
            ));
        }
        let id = |x: usize, y: usize| y * w + x;
        let mut edges = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if x + 1 < w {
                    edges.push((id(x, y), id(x + 1, y), config.edge_m));
                    edges.push((id(x + 1, y), id(x, y), config.edge_m));
                }
                if y + 1 < h {
                    edges.push((id(x, y), id(x, y + 1), config.edge_m));
                    edges.push((id(x, y + 1), id(x, y), config.edge_m));
                }
            }
        }
        let coords = (0..w * h)
            .map(|n| {
                let span_x = (w.max(2) - 1) as f64;
                let span_y = (h.max(2) - 1) as f64;
                ((n % w) as f64 / span_x, (n / w) as f64 / span_y)
            })
            .collect();
        Self::from_edges(coords, &edges, config.speed_mps)
    }

    /// Builds a network from directed `(from, to, length_m)` edges. `coords`
    /// are normalised positions used in observations.
    pub fn from_edges(
        coords: Vec<(f64, f64)>,
        edges: &[(NodeId, NodeId, f64)],
        speed_mps: f64,
    ) -> Result<Self> {
        let n = coords.len();
        if !(speed_mps > 0.0 && speed_mps.is_finite()) {
            return Err(Error::InvalidConfig("speed must be positive".into()));
        }
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b, len) in edges {
            if a >= n || b >= n || a == b || !(len > 0.0 && len.is_finite()) {
                return Err(Error::InvalidConfig(format!("bad edge ({a}, {b}, {len})")));
            }
            adjacency[a].push((b, len));
        }
        let mut dist_m = vec![f64::INFINITY; n * n];
        let mut next_hop = vec![UNREACHABLE; n * n];
        for source in 0..n {
            dijkstra(
                &adjacency,
                source,
                &mut dist_m[source * n..(source + 1) * n],
                &mut next_hop[source * n..(source + 1) * n],
            );
        }
        if dist_m.iter().any(|d| !d.is_finite()) {
            return Err(Error::InvalidConfig(
                "road network is not strongly connected".into(),
            ));
        }
        Ok(RoadNetwork {
            nodes: n,
            coords,
            adjacency,
            speed_mps,
            dist_m,
            next_hop,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn coords(&self, node: NodeId) -> (f64, f64) {
        self.coords[node]
    }

    pub fn speed_mps(&self) -> f64 {
        self.speed_mps
    }

    pub fn neighbours(&self, node: NodeId) -> &[(NodeId, f64)] {
        &self.adjacency[node]
    }

    pub fn distance_m(&self, from: NodeId, to: NodeId) -> f64 {
        self.dist_m[from * self.nodes + to]
    }

    pub fn travel_time_s(&self, from: NodeId, to: NodeId) -> f64 {
        self.distance_m(from, to) / self.speed_mps
    }

    /// First node after `from` on a shortest path to `to`; `None` when equal.
    pub fn next_hop(&self, from: NodeId, to: NodeId) -> Option<NodeId> {
        if from == to {
            return None;
        }
        Some(self.next_hop[from * self.nodes + to] as NodeId)
    }

    /// Nodes of a shortest path, both ends included.
    pub fn path(&self, from: NodeId, to: NodeId) -> Vec<NodeId> {
        let mut path = vec![from];
        let mut at = from;
        while let Some(n) = self.next_hop(at, to) {
            path.push(n);
            at = n;
        }
        path
    }

    /// Length of the direct edge `from -> to`.
    pub fn edge_length(&self, from: NodeId, to: NodeId) -> Option<f64> {
        self.adjacency[from]
            .iter()
            .find(|(n, _)| *n == to)
            .map(|(_, len)| *len)
    }
}

fn dijkstra(adjacency: &[Vec<(NodeId, f64)>], source: NodeId, dist: &mut [f64], first: &mut [u32]) {
    #[derive(PartialEq)]
    struct Key(f64);
    impl Eq for Key {}
    impl PartialOrd for Key {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for Key {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            self.0.total_cmp(&other.0)
        }
    }

    dist[source] = 0.0;
    first[source] = source as u32;
    let mut heap = BinaryHeap::new();
    heap.push(Reverse((Key(0.0), source)));
    while let Some(Reverse((Key(d), node))) = heap.pop() {
        if d > dist[node] {
            continue;
        }
        for &(next, len) in &adjacency[node] {
            let candidate = d + len;
            // Ties keep the first path found, so paths are deterministic.
            if candidate < dist[next] {
                dist[next] = candidate;
                first[next] = if node == source {
                    next as u32
                } else {
                    first[node]
                };
                heap.push(Reverse((Key(candidate), next)));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RoadNetwork {
        RoadNetwork::lattice(&LatticeConfig {
            width: 5,
            height: 4,
            edge_m: 100.0,
            speed_mps: 8.0,
        })
        .unwrap()
    }

    #[test]
    fn lattice_distances_are_manhattan() {
        let net = small();
        for a in 0..net.node_count() {
            for b in 0..net.node_count() {
                let manhattan = ((a % 5) as i64 - (b % 5) as i64).abs()
                    + ((a / 5) as i64 - (b / 5) as i64).abs();
                assert_eq!(net.distance_m(a, b), manhattan as f64 * 100.0);
            }
        }
        assert_eq!(net.travel_time_s(0, 1), 12.5);
        assert_eq!(net.travel_time_s(7, 7), 0.0);
    }

    #[test]
    fn paths_follow_edges_and_have_shortest_length() {
        let net = small();
        for (a, b) in [(0, 19), (19, 0), (3, 16), (8, 8)] {
            let path = net.path(a, b);
            assert_eq!(path.first(), Some(&a));
            assert_eq!(path.last(), Some(&b));
            let len: f64 = path
                .windows(2)
                .map(|w| net.edge_length(w[0], w[1]).unwrap())
                .sum();
            assert_eq!(len, net.distance_m(a, b));
        }
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        let coords = vec![(0.0, 0.0), (1.0, 0.0)];
        assert!(RoadNetwork::from_edges(coords, &[(0, 1, 10.0)], 1.0).is_err());
    }

    #[test]
    fn triangle_inequality_holds_on_irregular_graph() {
        let coords = vec![(0.0, 0.0); 4];
        let edges = [
            (0, 1, 5.0),
            (1, 2, 1.0),
            (2, 3, 2.0),
            (3, 0, 4.0),
            (0, 2, 9.0),
            (2, 0, 3.0),
        ];
        let net = RoadNetwork::from_edges(coords, &edges, 2.0).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    assert!(net.distance_m(a, c) <= net.distance_m(a, b) + net.distance_m(b, c));
                }
            }
        }
        assert_eq!(net.distance_m(0, 2), 6.0);
        assert_eq!(net.path(0, 2), vec![0, 1, 2]);
    }
}
