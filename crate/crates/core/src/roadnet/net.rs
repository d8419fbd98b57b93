//! Static road network: junctions, directed edges, and validated loading.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;
use thiserror::Error;

/// Schema version accepted by [`RoadNetwork::from_file`].
pub const NETWORK_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed network file {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("unsupported network format_version {found} (this build reads {expected})")]
    FormatVersion { found: u32, expected: u32 },
    #[error("network has no junctions")]
    NoJunctions,
    #[error("network has no edges")]
    NoEdges,
    #[error("duplicate junction id {0}")]
    DuplicateJunction(u32),
    #[error("duplicate edge id {0}")]
    DuplicateEdge(u32),
    #[error("edge {edge} references unknown junction {junction}")]
    UnknownJunction { edge: u32, junction: u32 },
    #[error("edge {edge}: {reason}")]
    InvalidEdge { edge: u32, reason: String },
    #[error("junction {0} has incoming edges but no outgoing edge")]
    DeadEnd(u32),
    #[error("junction coordinates for {0} are not finite")]
    BadCoordinate(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Junction {
    pub id: u32,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub id: u32,
    pub from: u32,
    pub to: u32,
    /// Metres.
    pub length: f64,
    /// Metres per second at free flow.
    pub max_speed: f64,
    pub lanes: u32,
}

impl Edge {
    /// Traversal time in seconds with no other vehicles on the edge.
    pub fn free_flow_time(&self) -> f64 {
        self.length / self.max_speed
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkFile {
    pub format_version: u32,
    pub junctions: Vec<Junction>,
    pub edges: Vec<Edge>,
}

/// Validated directed road graph with precomputed adjacency.
///
/// Junctions and edges keep their file ids; lookups go through dense internal
/// indices. Outgoing edges at a junction are ordered by ascending edge id and
/// that order defines the action slots agents choose between.
#[derive(Debug, Clone)]
pub struct RoadNetwork {
    junctions: Vec<Junction>,
    edges: Vec<Edge>,
    junction_idx: HashMap<u32, usize>,
    /// Per junction index: indices into `edges`, sorted by edge id.
    outgoing: Vec<Vec<usize>>,
    m_out: usize,
}

impl RoadNetwork {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, NetworkError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| NetworkError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let file: NetworkFile =
            serde_json::from_str(&text).map_err(|source| NetworkError::Parse {
                path: path.display().to_string(),
                source,
            })?;
        Self::from_description(file)
    }

    pub fn from_description(file: NetworkFile) -> Result<Self, NetworkError> {
        if file.format_version != NETWORK_FORMAT_VERSION {
            return Err(NetworkError::FormatVersion {
                found: file.format_version,
                expected: NETWORK_FORMAT_VERSION,
            });
        }
        if file.junctions.is_empty() {
            return Err(NetworkError::NoJunctions);
        }
        if file.edges.is_empty() {
            return Err(NetworkError::NoEdges);
        }

        let mut junction_idx = HashMap::with_capacity(file.junctions.len());
        for (i, j) in file.junctions.iter().enumerate() {
            if !(j.x.is_finite() && j.y.is_finite()) {
                return Err(NetworkError::BadCoordinate(j.id));
            }
            if junction_idx.insert(j.id, i).is_some() {
                return Err(NetworkError::DuplicateJunction(j.id));
            }
        }

        let mut seen_edge = HashMap::with_capacity(file.edges.len());
        let mut outgoing = vec![Vec::new(); file.junctions.len()];
        let mut has_incoming = vec![false; file.junctions.len()];
        for (i, e) in file.edges.iter().enumerate() {
            if seen_edge.insert(e.id, i).is_some() {
                return Err(NetworkError::DuplicateEdge(e.id));
            }
            let from = *junction_idx
                .get(&e.from)
                .ok_or(NetworkError::UnknownJunction {
                    edge: e.id,
                    junction: e.from,
                })?;
            let to = *junction_idx
                .get(&e.to)
                .ok_or(NetworkError::UnknownJunction {
                    edge: e.id,
                    junction: e.to,
                })?;
            if !e.length.is_finite() || e.length < 0.0 {
                return Err(NetworkError::InvalidEdge {
                    edge: e.id,
                    reason: format!("length {} must be finite and >= 0", e.length),
                });
            }
            if !e.max_speed.is_finite() || e.max_speed <= 0.0 {
                return Err(NetworkError::InvalidEdge {
                    edge: e.id,
                    reason: format!("max_speed {} must be finite and > 0", e.max_speed),
                });
            }
            if e.lanes == 0 {
                return Err(NetworkError::InvalidEdge {
                    edge: e.id,
                    reason: "lanes must be >= 1".into(),
                });
            }
            outgoing[from].push(i);
            has_incoming[to] = true;
        }

        // A junction that can be entered must be leavable, otherwise an agent
        // routed through it would strand there with an empty action set.
        for (idx, j) in file.junctions.iter().enumerate() {
            if has_incoming[idx] && outgoing[idx].is_empty() {
                return Err(NetworkError::DeadEnd(j.id));
            }
        }

        for list in &mut outgoing {
            list.sort_by_key(|&i| file.edges[i].id);
        }
        let m_out = outgoing.iter().map(Vec::len).max().unwrap_or(0);

        Ok(Self {
            junctions: file.junctions,
            edges: file.edges,
            junction_idx,
            outgoing,
            m_out,
        })
    }

    pub fn junction_count(&self) -> usize {
        self.junctions.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Arithmetic mean of the edge lengths: the network's characteristic
    /// distance, used to express map-level distances in hop-sized units.
    pub fn mean_edge_length(&self) -> f64 {
        self.edges.iter().map(|e| e.length).sum::<f64>() / self.edges.len() as f64
    }

    /// Maximum outgoing degree over all junctions; fixes the observation and
    /// action-mask width for every agent on this network.
    pub fn max_out_degree(&self) -> usize {
        self.m_out
    }

    pub fn junctions(&self) -> &[Junction] {
        &self.junctions
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn junction(&self, id: u32) -> Option<&Junction> {
        self.junction_idx.get(&id).map(|&i| &self.junctions[i])
    }

    pub fn contains_junction(&self, id: u32) -> bool {
        self.junction_idx.contains_key(&id)
    }

    pub(crate) fn junction_index(&self, id: u32) -> Option<usize> {
        self.junction_idx.get(&id).copied()
    }

    pub(crate) fn junction_by_index(&self, idx: usize) -> &Junction {
        &self.junctions[idx]
    }

    pub(crate) fn edge_by_index(&self, idx: usize) -> &Edge {
        &self.edges[idx]
    }

    pub(crate) fn outgoing_indices(&self, junction_idx: usize) -> &[usize] {
        &self.outgoing[junction_idx]
    }

    /// Outgoing edges at a junction in action-slot order.
    pub fn outgoing_edges(&self, junction_id: u32) -> impl Iterator<Item = &Edge> {
        let idx = self.junction_index(junction_id);
        idx.into_iter()
            .flat_map(move |i| self.outgoing[i].iter().map(move |&e| &self.edges[e]))
    }

    pub fn euclidean(&self, a: u32, b: u32) -> Option<f64> {
        let ja = self.junction(a)?;
        let jb = self.junction(b)?;
        Some(((ja.x - jb.x).powi(2) + (ja.y - jb.y).powi(2)).sqrt())
    }

    /// Junction closest to a free coordinate; ties break to the lowest id.
    pub fn nearest_junction(&self, x: f64, y: f64) -> u32 {
        let mut best = (f64::INFINITY, u32::MAX);
        for j in &self.junctions {
            let d2 = (j.x - x).powi(2) + (j.y - y).powi(2);
            if d2 < best.0 || (d2 == best.0 && j.id < best.1) {
                best = (d2, j.id);
            }
        }
        best.1
    }

    pub fn to_description(&self) -> NetworkFile {
        NetworkFile {
            format_version: NETWORK_FORMAT_VERSION,
            junctions: self.junctions.clone(),
            edges: self.edges.clone(),
        }
    }
}
