//! Deterministic stand-in planner for offline runs and tests.

use super::dsl::{parse_program, Diagnostic, InstructionProgram};
use crate::roadnet::{PathMetric, RoadNetwork, Scenario};
use std::fmt::Write as _;

/// Sends every agent to its destination along the free-flow fastest route:
/// one `move_to_by_shortest_time(destination)` per agent. Agents already at
/// their destination get no instructions; an unreachable destination becomes
/// a diagnostic (and one failed unit) instead of a doomed instruction.
pub fn scripted_plan(network: &RoadNetwork, scenario: &Scenario) -> InstructionProgram {
    let mut text = String::new();
    let mut unreachable = Vec::new();
    for (agent, od) in scenario.agents.iter().enumerate() {
        if od.origin == od.destination {
            continue;
        }
        if network.shortest_path(od.origin, od.destination, PathMetric::Time).is_err() {
            unreachable.push((agent, *od));
            continue;
        }
        let _ = writeln!(text, "agent {agent}: move_to_by_shortest_time({})", od.destination);
    }
    let mut program = parse_program(&text);
    for (agent, od) in unreachable {
        program.attempted_units += 1;
        program.diagnostics.push(Diagnostic {
            line: 0,
            column: 0,
            message: format!(
                "agent {agent}: no route from {} to {}",
                od.origin, od.destination
            ),
        });
    }
    program
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roadnet::{
        Edge, Junction, NetworkFile, OdPair, Regime, RoadNetwork, Scenario,
        NETWORK_FORMAT_VERSION, SCENARIO_FORMAT_VERSION,
    };
    use crate::sed::Verb;

    fn grid() -> RoadNetwork {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/grid5_network.json");
        RoadNetwork::from_file(path).unwrap()
    }

    fn scenario(agents: Vec<OdPair>) -> Scenario {
        Scenario {
            format_version: SCENARIO_FORMAT_VERSION,
            agents,
            background_vehicles: 0,
            regime: Regime::Moderate,
            t_max: 600,
            omega_d: 1.0,
            seed: 7,
        }
    }

    #[test]
    fn one_instruction_per_agent() {
        let scenario = scenario(vec![
            OdPair { origin: 0, destination: 24, departure_step: 0 },
            OdPair { origin: 4, destination: 20, departure_step: 0 },
            OdPair { origin: 20, destination: 4, departure_step: 0 },
            OdPair { origin: 24, destination: 0, departure_step: 0 },
        ]);
        let program = scripted_plan(&grid(), &scenario);
        assert!(program.is_clean());
        assert_eq!(program.per_agent.len(), 4);
        for (agent, od) in scenario.agents.iter().enumerate() {
            assert_eq!(
                program.instructions_for(agent),
                &[crate::sed::Instruction {
                    verb: Verb::MoveToByShortestTime { node: od.destination }
                }]
            );
        }
    }

    #[test]
    fn agent_already_home_gets_no_instructions() {
        let mut agents = vec![OdPair { origin: 3, destination: 3, departure_step: 0 }];
        agents.push(OdPair { origin: 0, destination: 1, departure_step: 0 });
        let program = scripted_plan(&grid(), &scenario(agents));
        assert!(program.is_clean());
        assert!(program.instructions_for(0).is_empty());
        assert_eq!(program.instructions_for(1).len(), 1);
    }

    #[test]
    fn output_reparses_cleanly() {
        let scenario = scenario(vec![
            OdPair { origin: 2, destination: 22, departure_step: 0 },
            OdPair { origin: 10, destination: 14, departure_step: 5 },
        ]);
        let program = scripted_plan(&grid(), &scenario);
        let reparsed = parse_program(&super::super::dsl::format_program(&program));
        assert!(reparsed.is_clean());
        assert_eq!(reparsed.per_agent, program.per_agent);
    }

    #[test]
    fn unreachable_destination_becomes_a_diagnostic() {
        // Two disjoint two-junction cycles; every junction keeps an exit so
        // the network validates, but the components never connect.
        let file = NetworkFile {
            format_version: NETWORK_FORMAT_VERSION,
            junctions: vec![
                Junction { id: 0, x: 0.0, y: 0.0 },
                Junction { id: 1, x: 100.0, y: 0.0 },
                Junction { id: 2, x: 0.0, y: 500.0 },
                Junction { id: 3, x: 100.0, y: 500.0 },
            ],
            edges: vec![
                Edge { id: 0, from: 0, to: 1, length: 100.0, max_speed: 10.0, lanes: 1 },
                Edge { id: 1, from: 1, to: 0, length: 100.0, max_speed: 10.0, lanes: 1 },
                Edge { id: 2, from: 2, to: 3, length: 100.0, max_speed: 10.0, lanes: 1 },
                Edge { id: 3, from: 3, to: 2, length: 100.0, max_speed: 10.0, lanes: 1 },
            ],
        };
        let network = RoadNetwork::from_description(file).unwrap();
        let program = scripted_plan(
            &network,
            &scenario(vec![
                OdPair { origin: 0, destination: 2, departure_step: 0 },
                OdPair { origin: 2, destination: 3, departure_step: 0 },
            ]),
        );
        assert_eq!(program.diagnostics.len(), 1);
        assert!(program.diagnostics[0].message.contains("no route from 0 to 2"));
        assert!(program.instructions_for(0).is_empty());
        assert_eq!(program.instructions_for(1).len(), 1);
        assert_eq!(program.attempted_units, 2);
    }
}
