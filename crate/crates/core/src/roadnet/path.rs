//! Shortest-path queries over the road graph.

use super::net::RoadNetwork;
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PathError {
    #[error("unknown junction {0}")]
    UnknownJunction(u32),
    #[error("no route from {from} to {to}")]
    Unreachable { from: u32, to: u32 },
    #[error("edge cost for edge {0} is negative or not finite")]
    BadCost(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathMetric {
    /// Sum of edge lengths.
    Distance,
    /// Sum of edge travel times; which travel time estimate is used depends
    /// on the caller (free flow on a bare network, live estimates in the
    /// simulator).
    Time,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    /// Junction ids along the route, excluding the start junction. Empty when
    /// origin and destination coincide.
    pub junctions: Vec<u32>,
    /// Edge indices (into the network edge table) forming the route.
    pub edge_indices: Vec<usize>,
    pub cost: f64,
}

/// Dijkstra heap entry ordered for a min-heap; ties break on junction index
/// so the search order is independent of float quirks.
struct HeapItem {
    cost: f64,
    junction: usize,
}

impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapItem {}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.junction.cmp(&self.junction))
    }
}

/// Single-pair Dijkstra with caller-supplied non-negative edge costs.
///
/// The predecessor of a junction is the first edge that settled its final
/// distance (strict improvement only), so routes are deterministic for a
/// given network and cost function.
pub fn shortest_path_with<F>(
    network: &RoadNetwork,
    from: u32,
    to: u32,
    mut edge_cost: F,
) -> Result<PathResult, PathError>
where
    F: FnMut(usize) -> f64,
{
    let start = network
        .junction_index(from)
        .ok_or(PathError::UnknownJunction(from))?;
    let goal = network
        .junction_index(to)
        .ok_or(PathError::UnknownJunction(to))?;

    if start == goal {
        return Ok(PathResult {
            junctions: Vec::new(),
            edge_indices: Vec::new(),
            cost: 0.0,
        });
    }

    let n = network.junction_count();
    let mut dist = vec![f64::INFINITY; n];
    let mut settled = vec![false; n];
    let mut pred: Vec<Option<(usize, usize)>> = vec![None; n]; // (junction, edge index)
    let mut heap = BinaryHeap::new();
    dist[start] = 0.0;
    heap.push(HeapItem { cost: 0.0, junction: start });

    while let Some(HeapItem { cost, junction }) = heap.pop() {
        if settled[junction] {
            continue;
        }
        settled[junction] = true;
        if junction == goal {
            break;
        }
        for &ei in network.outgoing_indices(junction) {
            let edge = network.edge_by_index(ei);
            let w = edge_cost(ei);
            if !w.is_finite() || w < 0.0 {
                return Err(PathError::BadCost(edge.id));
            }
            let next = network
                .junction_index(edge.to)
                .expect("validated edge endpoint");
            let cand = cost + w;
            if cand < dist[next] {
                dist[next] = cand;
                pred[next] = Some((junction, ei));
                heap.push(HeapItem { cost: cand, junction: next });
            }
        }
    }

    if !dist[goal].is_finite() {
        return Err(PathError::Unreachable { from, to });
    }

    let mut junctions = Vec::new();
    let mut edge_indices = Vec::new();
    let mut cur = goal;
    while cur != start {
        let (prev, ei) = pred[cur].expect("reached junction has predecessor");
        junctions.push(network.junction_by_index(cur).id);
        edge_indices.push(ei);
        cur = prev;
    }
    junctions.reverse();
    edge_indices.reverse();
    Ok(PathResult { junctions, edge_indices, cost: dist[goal] })
}

impl RoadNetwork {
    /// Shortest path on the static network. `Time` uses free-flow travel
    /// times; for congestion-aware times query the simulator instead.
    pub fn shortest_path(
        &self,
        from: u32,
        to: u32,
        metric: PathMetric,
    ) -> Result<PathResult, PathError> {
        match metric {
            PathMetric::Distance => {
                shortest_path_with(self, from, to, |ei| self.edge_by_index(ei).length)
            }
            PathMetric::Time => {
                shortest_path_with(self, from, to, |ei| self.edge_by_index(ei).free_flow_time())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roadnet::net::{Edge, Junction, NetworkFile, NETWORK_FORMAT_VERSION};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn grid() -> RoadNetwork {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/grid5_network.json");
        RoadNetwork::from_file(path).unwrap()
    }

    #[test]
    fn same_junction_is_empty_route_with_zero_cost() {
        let net = grid();
        let r = net.shortest_path(7, 7, PathMetric::Distance).unwrap();
        assert!(r.junctions.is_empty());
        assert!(r.edge_indices.is_empty());
        assert_eq!(r.cost, 0.0);
    }

    #[test]
    fn grid_corner_to_corner_distance() {
        // Junction ids are row*5+col with 100 m spacing, so opposite corners
        // are 8 hops / 800 m apart.
        let net = grid();
        let r = net.shortest_path(0, 24, PathMetric::Distance).unwrap();
        assert_eq!(r.junctions.len(), 8);
        assert!((r.cost - 800.0).abs() < 1e-9);
        assert_eq!(*r.junctions.last().unwrap(), 24);
    }

    #[test]
    fn unreachable_destination_is_an_error() {
        let file = NetworkFile {
            format_version: NETWORK_FORMAT_VERSION,
            junctions: vec![
                Junction { id: 0, x: 0.0, y: 0.0 },
                Junction { id: 1, x: 100.0, y: 0.0 },
                Junction { id: 2, x: 200.0, y: 0.0 },
                Junction { id: 3, x: 300.0, y: 0.0 },
            ],
            edges: vec![
                Edge { id: 0, from: 0, to: 1, length: 100.0, max_speed: 10.0, lanes: 1 },
                Edge { id: 1, from: 1, to: 0, length: 100.0, max_speed: 10.0, lanes: 1 },
                Edge { id: 2, from: 2, to: 3, length: 100.0, max_speed: 10.0, lanes: 1 },
                Edge { id: 3, from: 3, to: 2, length: 100.0, max_speed: 10.0, lanes: 1 },
            ],
        };
        let net = RoadNetwork::from_description(file).unwrap();
        match net.shortest_path(0, 3, PathMetric::Time) {
            Err(PathError::Unreachable { from: 0, to: 3 }) => {}
            other => panic!("expected unreachable, got {other:?}"),
        }
    }

    /// Cross-check Dijkstra against Bellman-Ford relaxation on the grid with
    /// randomized positive edge costs.
    #[test]
    fn agrees_with_bellman_ford_on_random_costs() {
        let net = grid();
        let mut rng = ChaCha20Rng::seed_from_u64(41);
        for _ in 0..20 {
            let costs: Vec<f64> = (0..net.edge_count()).map(|_| rng.gen_range(0.5..20.0)).collect();
            let from = rng.gen_range(0..25) as u32;
            let to = rng.gen_range(0..25) as u32;

            let n = net.junction_count();
            let mut dist = vec![f64::INFINITY; n];
            dist[net.junction_index(from).unwrap()] = 0.0;
            for _ in 0..n {
                for (ei, e) in net.edges().iter().enumerate() {
                    let a = net.junction_index(e.from).unwrap();
                    let b = net.junction_index(e.to).unwrap();
                    if dist[a] + costs[ei] < dist[b] {
                        dist[b] = dist[a] + costs[ei];
                    }
                }
            }
            let expect = dist[net.junction_index(to).unwrap()];

            let got = shortest_path_with(&net, from, to, |ei| costs[ei]).unwrap();
            assert!((got.cost - expect).abs() < 1e-9, "from {from} to {to}");
            // The reported route must actually cost what it claims.
            let recomputed: f64 = got.edge_indices.iter().map(|&ei| costs[ei]).sum();
            assert!((recomputed - got.cost).abs() < 1e-9);
        }
    }

    #[test]
    fn route_edges_are_connected() {
        let net = grid();
        let r = net.shortest_path(3, 21, PathMetric::Time).unwrap();
        let mut at = 3;
        for (&ei, &jid) in r.edge_indices.iter().zip(&r.junctions) {
            let e = net.edge_by_index(ei);
            assert_eq!(e.from, at);
            assert_eq!(e.to, jid);
            at = e.to;
        }
        assert_eq!(at, 21);
    }
}
