//! Navigation instructions and their compilation to edge sequences.

use crate::roadnet::{NavEnv, OdPair, PathMetric};
use std::fmt;
use thiserror::Error;

/// Default upper bound on the action budget of a single instruction.
pub const DEFAULT_INSTRUCTION_CAP: usize = 200;

/// The navigation interface a planner may call. Movement verbs expand into
/// bounded edge sequences; query verbs answer immediately and cost no
/// actions.
#[derive(Debug, Clone, PartialEq)]
pub enum Verb {
    MoveToByShortestPath { node: u32 },
    MoveToByShortestTime { node: u32 },
    GetOrigin,
    GetDestination,
    GetShortestDist { node: u32 },
    GetShortestTime { node: u32 },
    GetNearestNode { x: f64, y: f64 },
    GetNodeCoord { node: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instruction {
    pub verb: Verb,
}

impl Instruction {
    pub fn is_movement(&self) -> bool {
        matches!(
            self.verb,
            Verb::MoveToByShortestPath { .. } | Verb::MoveToByShortestTime { .. }
        )
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verb::MoveToByShortestPath { node } => {
                write!(f, "move_to_by_shortest_path({node})")
            }
            Verb::MoveToByShortestTime { node } => {
                write!(f, "move_to_by_shortest_time({node})")
            }
            Verb::GetOrigin => write!(f, "get_origin()"),
            Verb::GetDestination => write!(f, "get_destination()"),
            Verb::GetShortestDist { node } => write!(f, "get_shortest_dist({node})"),
            Verb::GetShortestTime { node } => write!(f, "get_shortest_time({node})"),
            Verb::GetNearestNode { x, y } => write!(f, "get_nearest_node({x}, {y})"),
            Verb::GetNodeCoord { node } => write!(f, "get_node_coord({node})"),
        }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.verb.fmt(f)
    }
}

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("unknown junction {0}")]
    UnknownJunction(u32),
    #[error("no route from {from} to {to}")]
    Unreachable { from: u32, to: u32 },
}

/// Answer to a query verb, printable for planner transcripts.
#[derive(Debug, Clone, PartialEq)]
pub enum QueryResult {
    Origin(u32),
    Destination(u32),
    ShortestDist(f64),
    ShortestTime(f64),
    NearestNode(u32),
    NodeCoord { x: f64, y: f64 },
}

impl fmt::Display for QueryResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QueryResult::Origin(n) => write!(f, "{n}"),
            QueryResult::Destination(n) => write!(f, "{n}"),
            QueryResult::ShortestDist(d) => write!(f, "{d:.1}"),
            QueryResult::ShortestTime(t) => write!(f, "{t:.1}"),
            QueryResult::NearestNode(n) => write!(f, "{n}"),
            QueryResult::NodeCoord { x, y } => write!(f, "({x}, {y})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CompileOutcome {
    /// Edge indices to follow, possibly cut to the action budget cap.
    Route { edges: Vec<usize>, truncated: bool },
    Query { result: QueryResult },
}

/// Resolves one instruction against the live environment from the agent's
/// current junction. Movement verbs use current travel-time estimates for
/// the time metric; distances are static. The returned budget never exceeds
/// `cap` edges.
pub fn compile_instruction(
    instruction: &Instruction,
    od: OdPair,
    current_junction: u32,
    env: &NavEnv,
    cap: usize,
) -> Result<CompileOutcome, CompileError> {
    let check = |node: u32| {
        if env.network().contains_junction(node) {
            Ok(())
        } else {
            Err(CompileError::UnknownJunction(node))
        }
    };
    let route = |node: u32, metric: PathMetric| -> Result<CompileOutcome, CompileError> {
        check(node)?;
        let path = env
            .shortest_path(current_junction, node, metric)
            .map_err(|_| CompileError::Unreachable { from: current_junction, to: node })?;
        let truncated = path.edge_indices.len() > cap;
        let mut edges = path.edge_indices;
        edges.truncate(cap);
        Ok(CompileOutcome::Route { edges, truncated })
    };

    match instruction.verb {
        Verb::MoveToByShortestPath { node } => route(node, PathMetric::Distance),
        Verb::MoveToByShortestTime { node } => route(node, PathMetric::Time),
        Verb::GetOrigin => Ok(CompileOutcome::Query { result: QueryResult::Origin(od.origin) }),
        Verb::GetDestination => {
            Ok(CompileOutcome::Query { result: QueryResult::Destination(od.destination) })
        }
        Verb::GetShortestDist { node } => {
            check(node)?;
            let path = env
                .shortest_path(current_junction, node, PathMetric::Distance)
                .map_err(|_| CompileError::Unreachable { from: current_junction, to: node })?;
            Ok(CompileOutcome::Query { result: QueryResult::ShortestDist(path.cost) })
        }
        Verb::GetShortestTime { node } => {
            check(node)?;
            let path = env
                .shortest_path(current_junction, node, PathMetric::Time)
                .map_err(|_| CompileError::Unreachable { from: current_junction, to: node })?;
            Ok(CompileOutcome::Query { result: QueryResult::ShortestTime(path.cost) })
        }
        Verb::GetNearestNode { x, y } => {
            Ok(CompileOutcome::Query { result: QueryResult::NearestNode(env.network().nearest_junction(x, y)) })
        }
        Verb::GetNodeCoord { node } => {
            let j = env
                .network()
                .junction(node)
                .ok_or(CompileError::UnknownJunction(node))?;
            Ok(CompileOutcome::Query { result: QueryResult::NodeCoord { x: j.x, y: j.y } })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roadnet::{NavEnv, OdPair, Regime, RoadNetwork, Scenario, SCENARIO_FORMAT_VERSION};

    fn env() -> NavEnv {
        let net = RoadNetwork::from_file(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/fixtures/grid5_network.json"
        ))
        .unwrap();
        let scenario = Scenario {
            format_version: SCENARIO_FORMAT_VERSION,
            agents: vec![OdPair { origin: 0, destination: 24, departure_step: 0 }],
            background_vehicles: 0,
            regime: Regime::Moderate,
            t_max: 600,
            omega_d: 1.0,
            seed: 1,
        };
        NavEnv::new(net, scenario).unwrap()
    }

    fn od() -> OdPair {
        OdPair { origin: 0, destination: 24, departure_step: 0 }
    }

    #[test]
    fn movement_compiles_to_connected_route() {
        let env = env();
        let out = compile_instruction(
            &Instruction { verb: Verb::MoveToByShortestPath { node: 24 } },
            od(),
            0,
            &env,
            DEFAULT_INSTRUCTION_CAP,
        )
        .unwrap();
        match out {
            CompileOutcome::Route { edges, truncated } => {
                assert_eq!(edges.len(), 8);
                assert!(!truncated);
                let mut at = 0;
                for ei in edges {
                    let e = env.network().edges()[ei];
                    assert_eq!(e.from, at);
                    at = e.to;
                }
                assert_eq!(at, 24);
            }
            other => panic!("expected route, got {other:?}"),
        }
    }

    #[test]
    fn budget_cap_truncates_and_flags() {
        let env = env();
        let out = compile_instruction(
            &Instruction { verb: Verb::MoveToByShortestTime { node: 24 } },
            od(),
            0,
            &env,
            3,
        )
        .unwrap();
        match out {
            CompileOutcome::Route { edges, truncated } => {
                assert_eq!(edges.len(), 3);
                assert!(truncated);
            }
            other => panic!("expected route, got {other:?}"),
        }
    }

    #[test]
    fn already_there_is_an_empty_route() {
        let env = env();
        let out = compile_instruction(
            &Instruction { verb: Verb::MoveToByShortestPath { node: 0 } },
            od(),
            0,
            &env,
            DEFAULT_INSTRUCTION_CAP,
        )
        .unwrap();
        assert_eq!(out, CompileOutcome::Route { edges: vec![], truncated: false });
    }

    #[test]
    fn unknown_target_is_a_compile_error() {
        let env = env();
        match compile_instruction(
            &Instruction { verb: Verb::MoveToByShortestPath { node: 99 } },
            od(),
            0,
            &env,
            DEFAULT_INSTRUCTION_CAP,
        ) {
            Err(CompileError::UnknownJunction(99)) => {}
            other => panic!("expected unknown junction, got {other:?}"),
        }
    }

    #[test]
    fn queries_cost_no_actions() {
        let env = env();
        for (verb, expect) in [
            (Verb::GetOrigin, QueryResult::Origin(0)),
            (Verb::GetDestination, QueryResult::Destination(24)),
            (Verb::GetNearestNode { x: 390.0, y: 390.0 }, QueryResult::NearestNode(24)),
            (Verb::GetNodeCoord { node: 7 }, QueryResult::NodeCoord { x: 200.0, y: 100.0 }),
        ] {
            let out = compile_instruction(
                &Instruction { verb },
                od(),
                0,
                &env,
                DEFAULT_INSTRUCTION_CAP,
            )
            .unwrap();
            assert_eq!(out, CompileOutcome::Query { result: expect });
        }
    }

    #[test]
    fn shortest_dist_query_reports_route_length() {
        let env = env();
        let out = compile_instruction(
            &Instruction { verb: Verb::GetShortestDist { node: 12 } },
            od(),
            0,
            &env,
            DEFAULT_INSTRUCTION_CAP,
        )
        .unwrap();
        assert_eq!(out, CompileOutcome::Query { result: QueryResult::ShortestDist(400.0) });
    }

    #[test]
    fn canonical_text_round_trips_via_display() {
        let cases = [
            Verb::MoveToByShortestPath { node: 17 },
            Verb::GetNearestNode { x: 1.5, y: -2.25 },
            Verb::GetShortestTime { node: 3 },
        ];
        let expect = [
            "move_to_by_shortest_path(17)",
            "get_nearest_node(1.5, -2.25)",
            "get_shortest_time(3)",
        ];
        for (v, e) in cases.iter().zip(expect) {
            assert_eq!(v.to_string(), e);
        }
    }
}
