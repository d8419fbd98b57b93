//! Prompt assembly and the bounded conversation context.
//!
//! The system prompt carries everything static: topology, agent ODs, the
//! callable interface, and the reply format. Each demonstration round adds
//! one user turn (the trigger command first, feedback afterwards) and one
//! planner reply. The context keeps its estimated size under a fixed token
//! budget by dropping the oldest turns; the system prompt is never dropped.

use super::http::ChatMessage;
use crate::roadnet::{RoadNetwork, Scenario};
use crate::sed::FeedbackReport;
use std::collections::VecDeque;
use std::fmt::Write as _;

pub const DEFAULT_TOKEN_BUDGET: usize = 10_000;
pub const TRUNCATION_MARKER: &str = "[earlier content dropped to fit the token budget]";

/// Crude but deterministic size estimate: whitespace-delimited words times
/// 1.3, rounded up. The budget mechanism is the contract, not the count.
pub fn estimate_tokens(text: &str) -> usize {
    let words = text.split_whitespace().count();
    (words * 13).div_ceil(10)
}

#[derive(Debug, Clone)]
pub struct PromptContext {
    system: String,
    /// Completed (request, reply) exchanges, oldest first.
    turns: VecDeque<(String, String)>,
    /// Current request still awaiting its reply.
    pending: Option<String>,
    budget: usize,
}

impl PromptContext {
    pub fn new(system: String) -> Self {
        Self::with_budget(system, DEFAULT_TOKEN_BUDGET)
    }

    pub fn with_budget(system: String, budget: usize) -> Self {
        assert!(
            estimate_tokens(&system) <= budget,
            "system prompt alone exceeds the token budget"
        );
        Self { system, turns: VecDeque::new(), pending: None, budget }
    }

    /// Stages the next request and re-balances the context: oldest turns go
    /// first; if the request alone still breaks the budget it is truncated
    /// with an explicit marker.
    pub fn begin_turn(&mut self, request: String) {
        self.pending = Some(request);
        self.enforce_budget();
    }

    /// Files the reply for the staged request into history.
    pub fn complete_turn(&mut self, reply: String) {
        let request = self.pending.take().expect("complete_turn without a staged request");
        self.turns.push_back((request, reply));
        self.enforce_budget();
    }

    pub fn estimated_tokens(&self) -> usize {
        let mut total = estimate_tokens(&self.system);
        for (request, reply) in &self.turns {
            total += estimate_tokens(request) + estimate_tokens(reply);
        }
        if let Some(pending) = &self.pending {
            total += estimate_tokens(pending);
        }
        total
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn system(&self) -> &str {
        &self.system
    }

    pub fn history_len(&self) -> usize {
        self.turns.len()
    }

    pub fn pending(&self) -> Option<&str> {
        self.pending.as_deref()
    }

    /// The message list a chat endpoint receives: system, then the retained
    /// exchanges, then the staged request.
    pub fn messages(&self) -> Vec<ChatMessage> {
        let mut messages = vec![ChatMessage::system(&self.system)];
        for (request, reply) in &self.turns {
            messages.push(ChatMessage::user(request));
            messages.push(ChatMessage::assistant(reply));
        }
        if let Some(pending) = &self.pending {
            messages.push(ChatMessage::user(pending));
        }
        messages
    }

    fn enforce_budget(&mut self) {
        while self.estimated_tokens() > self.budget && !self.turns.is_empty() {
            self.turns.pop_front();
        }
        if self.estimated_tokens() <= self.budget {
            return;
        }
        // Only the system prompt and the staged request remain; cut the
        // request down to the largest word prefix that fits with the marker.
        if let Some(pending) = self.pending.take() {
            let room = self.budget - estimate_tokens(&self.system);
            let marker_words = TRUNCATION_MARKER.split_whitespace().count();
            // estimate(k words) = ceil(1.3 k) <= room  ⇔  13 k <= 10 room - 9
            let max_words = (10 * room).saturating_sub(9) / 13;
            let keep = max_words.saturating_sub(marker_words);
            let truncated = if keep == 0 && marker_words > max_words {
                String::new()
            } else {
                let prefix: Vec<&str> = pending.split_whitespace().take(keep).collect();
                if prefix.is_empty() {
                    TRUNCATION_MARKER.to_string()
                } else {
                    format!("{}\n{}", prefix.join(" "), TRUNCATION_MARKER)
                }
            };
            self.pending = Some(truncated);
        }
        debug_assert!(self.estimated_tokens() <= self.budget);
    }
}

/// Everything the planner must know up front: the network, who travels
/// where, what it may call, and how to answer.
pub fn build_system_prompt(network: &RoadNetwork, scenario: &Scenario) -> String {
    let description = network.to_description();
    let mut out = String::new();
    out.push_str(
        "You route vehicles through a directed road network. Each agent drives from its \
         origin junction to its destination junction, choosing an outgoing edge at every \
         junction it reaches. Travel is slower on crowded edges.\n\n",
    );
    out.push_str("Junctions (id: x, y):\n");
    for j in &description.junctions {
        let _ = writeln!(out, "  {}: ({}, {})", j.id, j.x, j.y);
    }
    out.push_str("\nDirected edges (from -> to, length m, free speed m/s, lanes):\n");
    for e in &description.edges {
        let _ = writeln!(
            out,
            "  {} -> {}, {} m, {} m/s, {} lane{}",
            e.from,
            e.to,
            e.length,
            e.max_speed,
            e.lanes,
            if e.lanes == 1 { "" } else { "s" }
        );
    }
    out.push_str("\nAgents (id: origin -> destination, departure second):\n");
    for (i, od) in scenario.agents.iter().enumerate() {
        let _ = writeln!(out, "  {}: {} -> {}, departs {}", i, od.origin, od.destination, od.departure_step);
    }
    out.push_str(concat!(
        "\nYou may call, per agent and in order:\n",
        "  move_to_by_shortest_path(node) - drive toward node along the fewest metres\n",
        "  move_to_by_shortest_time(node) - drive toward node along the currently fastest route\n",
        "  get_origin() - the agent's origin junction id\n",
        "  get_destination() - the agent's destination junction id\n",
        "  get_shortest_dist(node) - metres from the agent's current junction to node\n",
        "  get_shortest_time(node) - estimated seconds from the agent's current junction to node\n",
        "  get_nearest_node(x, y) - id of the junction closest to the coordinates\n",
        "  get_node_coord(node) - coordinates of a junction\n",
        "\nReply with one line per agent and nothing else, in exactly this form:\n",
        "  agent <id>: <call>[; <call>]...\n",
        "Arguments must be numeric literals. Example:\n",
        "  agent 0: get_shortest_time(24); move_to_by_shortest_time(24)\n",
    ));
    out
}

/// First-round trigger: the system prompt already holds the task.
pub fn initial_request() -> String {
    "Plan the routes now: give every agent an instruction sequence in the reply format."
        .to_string()
}

/// Refinement request built from the last demonstration round, worst
/// problems first, naming each flagged call verbatim.
pub fn feedback_request(report: &FeedbackReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Feedback on demonstration round at epoch {}.", report.epoch);
    for subset in &report.subsets {
        let agents: Vec<String> = subset.agents.iter().map(ToString::to_string).collect();
        let _ = writeln!(out, "\nSteered agents [{}]:", agents.join(", "));
        out.push_str("  Outcomes:\n");
        for outcome in &subset.outcomes {
            let arrival = if outcome.arrived {
                format!("arrived after {} s of driving", outcome.travel_time)
            } else {
                "did not arrive".to_string()
            };
            let _ = writeln!(
                out,
                "    agent {}: {}, episode reward {:.1}",
                outcome.agent, arrival, outcome.episode_reward
            );
            for failure in &outcome.failures {
                let _ = writeln!(out, "      failed call: {failure}");
            }
            if outcome.truncated_instructions > 0 {
                let _ = writeln!(
                    out,
                    "      {} call(s) were cut at the action budget",
                    outcome.truncated_instructions
                );
            }
        }
        if subset.reward_volatility.is_empty() {
            out.push_str("  No bystander disruption beyond the threshold.\n");
        } else {
            let _ = writeln!(
                out,
                "  Bystander disruption (other agents' reward swung past {:.1}), worst first:",
                subset.reward_threshold
            );
            for (rank, r) in subset.reward_volatility.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "    {}. round {}, agent {}, call {} `{}`: bystander reward {:.1}",
                    rank + 1,
                    r.round,
                    r.agent,
                    r.instruction_index,
                    r.instruction,
                    -r.magnitude
                );
            }
        }
        if subset.policy_divergence.is_empty() {
            out.push_str("  No steered agent strayed measurably from its own policy.\n");
        } else {
            out.push_str("  Policy strain (steered far from the agent's own policy), worst first:\n");
            for (rank, p) in subset.policy_divergence.iter().enumerate() {
                let call = match (&p.instruction, p.instruction_index) {
                    (Some(text), Some(index)) => format!("call {index} `{text}`"),
                    _ => "an uninstructed action".to_string(),
                };
                let strain = match p.divergence {
                    Some(d) => format!("divergence {d:.3}"),
                    None => "divergence unbounded (the policy would never act this way)".to_string(),
                };
                let _ = writeln!(
                    out,
                    "    {}. agent {}, round {}, {}: {}",
                    rank + 1,
                    p.agent,
                    p.round,
                    call,
                    strain
                );
            }
        }
        match subset.bound {
            Some(b) => {
                let _ = writeln!(out, "  Objective-shift bound for this subset: {b:.3}");
            }
            None => out.push_str("  Objective-shift bound for this subset: unbounded.\n"),
        }
    }
    out.push_str(concat!(
        "\nRevise the flagged calls first: reroute around crowded edges where bystanders ",
        "were disrupted, and prefer routes the agent's own policy already favours where ",
        "policy strain is high. Keep calls that drew no flags. Reply for every agent in ",
        "the same one-line-per-agent format.\n",
    ));
    out
}
