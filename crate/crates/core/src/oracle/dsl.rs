//! Line-oriented parser for the planner instruction language.
//!
//! The grammar is deliberately small: one line per agent, a colon, then a
//! semicolon-separated list of interface calls with numeric-literal
//! arguments. Parsing is total: a bad line becomes a diagnostic and costs
//! one attempted unit, while the remaining lines survive untouched. The
//! execution-rate metric is computed from exactly these counts.

use crate::sed::{Instruction, Verb};
use std::collections::BTreeMap;
use std::fmt;

/// One rejected line or entry. `line`/`column` are 1-based; line 0 marks
/// diagnostics not tied to any source position (planner-side checks).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}: {}", self.line, self.column, self.message)
    }
}

/// Parse result: whatever survived, plus what did not and why.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InstructionProgram {
    pub source: String,
    /// Instructions in source order, keyed by agent id. Repeated lines for
    /// one agent append.
    pub per_agent: BTreeMap<usize, Vec<Instruction>>,
    pub diagnostics: Vec<Diagnostic>,
    /// Execution-rate denominator: one unit per parsed instruction plus one
    /// per rejected line.
    pub attempted_units: usize,
    /// Where each agent's id first appeared, for validation messages.
    agent_positions: BTreeMap<usize, (usize, usize)>,
}

impl InstructionProgram {
    pub fn instructions_for(&self, agent: usize) -> &[Instruction] {
        self.per_agent.get(&agent).map_or(&[], Vec::as_slice)
    }

    /// Instructions that made it through: the execution-rate numerator
    /// before compile failures are subtracted.
    pub fn parsed_units(&self) -> usize {
        self.per_agent.values().map(Vec::len).sum()
    }

    pub fn is_clean(&self) -> bool {
        self.diagnostics.is_empty()
    }

    /// Drops agents outside `0..n_agents`, converting each dropped entry
    /// into a diagnostic at the position where the id appeared. Returns how
    /// many instructions were discarded.
    pub fn retain_known_agents(&mut self, n_agents: usize) -> usize {
        let strays: Vec<usize> =
            self.per_agent.keys().copied().filter(|&a| a >= n_agents).collect();
        let mut dropped = 0;
        for agent in strays {
            dropped += self.per_agent.remove(&agent).map_or(0, |list| list.len());
            let (line, column) = self.agent_positions.remove(&agent).unwrap_or((0, 0));
            self.diagnostics.push(Diagnostic {
                line,
                column,
                message: format!(
                    "agent {agent} does not exist (the scenario has {n_agents} agents)"
                ),
            });
        }
        dropped
    }
}

/// Parses program text line by line. Blank lines and code-fence markers are
/// skipped; every other line must be a complete agent statement or it is
/// rejected whole.
pub fn parse_program(text: &str) -> InstructionProgram {
    let mut program = InstructionProgram { source: text.to_string(), ..Default::default() };
    for (idx, raw) in text.lines().enumerate() {
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with("```") {
            continue;
        }
        let mut cursor = Cursor { text: raw, pos: 0, line: idx + 1 };
        match cursor.statement() {
            Ok((agent, position, instructions)) => {
                program.attempted_units += instructions.len();
                program.agent_positions.entry(agent).or_insert(position);
                program.per_agent.entry(agent).or_default().extend(instructions);
            }
            Err(diagnostic) => {
                program.attempted_units += 1;
                program.diagnostics.push(diagnostic);
            }
        }
    }
    program
}

/// Canonical text form: ascending agent order, one line per agent, calls
/// joined by `; `. Parsing the output of `format_program` reproduces the
/// same per-agent map with no diagnostics, and formatting is idempotent
/// from then on.
pub fn format_program(program: &InstructionProgram) -> String {
    let mut out = String::new();
    for (agent, instructions) in &program.per_agent {
        if instructions.is_empty() {
            continue;
        }
        let calls: Vec<String> = instructions.iter().map(ToString::to_string).collect();
        out.push_str(&format!("agent {agent}: {}\n", calls.join("; ")));
    }
    out
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn column(&self) -> usize {
        self.text[..self.pos].chars().count() + 1
    }

    fn fail(&self, message: impl Into<String>) -> Diagnostic {
        Diagnostic { line: self.line, column: self.column(), message: message.into() }
    }

    fn fail_at(&self, column: usize, message: impl Into<String>) -> Diagnostic {
        Diagnostic { line: self.line, column, message: message.into() }
    }

    fn peek(&self) -> Option<char> {
        self.text[self.pos..].chars().next()
    }

    fn bump(&mut self) {
        if let Some(c) = self.peek() {
            self.pos += c.len_utf8();
        }
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.bump();
        }
    }

    fn eat(&mut self, expected: char) -> bool {
        if self.peek() == Some(expected) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.text.len()
    }

    /// `[A-Za-z_][A-Za-z0-9_]*`
    fn ident(&mut self) -> Option<&'a str> {
        let start = self.pos;
        if !self.peek().is_some_and(|c| c.is_ascii_alphabetic() || c == '_') {
            return None;
        }
        while self.peek().is_some_and(|c| c.is_ascii_alphanumeric() || c == '_') {
            self.bump();
        }
        Some(&self.text[start..self.pos])
    }

    /// `-?digits(.digits)?` — the only literal form arguments may take.
    fn number(&mut self) -> Option<&'a str> {
        let start = self.pos;
        if self.peek() == Some('-') {
            self.bump();
        }
        if !self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos = start;
            return None;
        }
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.bump();
        }
        if self.peek() == Some('.') {
            let dot = self.pos;
            self.bump();
            if !self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.pos = dot;
                return Some(&self.text[start..self.pos]);
            }
            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.bump();
            }
        }
        Some(&self.text[start..self.pos])
    }

    fn statement(&mut self) -> Result<(usize, (usize, usize), Vec<Instruction>), Diagnostic> {
        self.skip_ws();
        let keyword_col = self.column();
        match self.ident() {
            Some("agent") => {}
            _ => return Err(self.fail_at(keyword_col, "expected `agent`".to_string())),
        }
        self.skip_ws();
        let id_col = self.column();
        let id_token = self.number().ok_or_else(|| self.fail("expected an agent id"))?;
        let agent: usize = id_token
            .parse()
            .map_err(|_| self.fail_at(id_col, format!("`{id_token}` is not a valid agent id")))?;
        self.skip_ws();
        if !self.eat(':') {
            return Err(self.fail("expected `:` after the agent id"));
        }
        let mut instructions = Vec::new();
        loop {
            self.skip_ws();
            instructions.push(self.instruction()?);
            self.skip_ws();
            if self.eat(';') {
                self.skip_ws();
                if self.at_end() {
                    break;
                }
            } else if self.at_end() {
                break;
            } else {
                return Err(self.fail("expected `;` between calls"));
            }
        }
        Ok((agent, (self.line, id_col), instructions))
    }

    fn instruction(&mut self) -> Result<Instruction, Diagnostic> {
        let verb_col = self.column();
        let name = self.ident().ok_or_else(|| self.fail("expected an interface name"))?;
        self.skip_ws();
        if !self.eat('(') {
            return Err(self.fail(format!("expected `(` after `{name}`")));
        }
        let args = self.arguments()?;
        let arity_error = |expected: usize| {
            self.fail_at(
                verb_col,
                format!(
                    "{name} expects {expected} argument{}, got {}",
                    if expected == 1 { "" } else { "s" },
                    args.len()
                ),
            )
        };
        let node_arg = |index: usize| -> Result<u32, Diagnostic> {
            let (col, token) = &args[index];
            token
                .parse::<u32>()
                .map_err(|_| self.fail_at(*col, format!("`{token}` is not a junction id")))
        };
        let float_arg = |index: usize| -> Result<f64, Diagnostic> {
            let (col, token) = &args[index];
            token
                .parse::<f64>()
                .map_err(|_| self.fail_at(*col, format!("`{token}` is not a number")))
        };
        let verb = match name {
            "move_to_by_shortest_path" => {
                if args.len() != 1 {
                    return Err(arity_error(1));
                }
                Verb::MoveToByShortestPath { node: node_arg(0)? }
            }
            "move_to_by_shortest_time" => {
                if args.len() != 1 {
                    return Err(arity_error(1));
                }
                Verb::MoveToByShortestTime { node: node_arg(0)? }
            }
            "get_origin" => {
                if !args.is_empty() {
                    return Err(arity_error(0));
                }
                Verb::GetOrigin
            }
            "get_destination" => {
                if !args.is_empty() {
                    return Err(arity_error(0));
                }
                Verb::GetDestination
            }
            "get_shortest_dist" => {
                if args.len() != 1 {
                    return Err(arity_error(1));
                }
                Verb::GetShortestDist { node: node_arg(0)? }
            }
            "get_shortest_time" => {
                if args.len() != 1 {
                    return Err(arity_error(1));
                }
                Verb::GetShortestTime { node: node_arg(0)? }
            }
            "get_nearest_node" => {
                if args.len() != 2 {
                    return Err(arity_error(2));
                }
                Verb::GetNearestNode { x: float_arg(0)?, y: float_arg(1)? }
            }
            "get_node_coord" => {
                if args.len() != 1 {
                    return Err(arity_error(1));
                }
                Verb::GetNodeCoord { node: node_arg(0)? }
            }
            _ => return Err(self.fail_at(verb_col, format!("unknown interface `{name}`"))),
        };
        Ok(Instruction { verb })
    }

    /// Argument tokens with the column each started at; consumes the
    /// closing parenthesis.
    fn arguments(&mut self) -> Result<Vec<(usize, &'a str)>, Diagnostic> {
        let mut args = Vec::new();
        self.skip_ws();
        if self.eat(')') {
            return Ok(args);
        }
        loop {
            self.skip_ws();
            let col = self.column();
            let token = self.number().ok_or_else(|| self.fail("expected a number argument"))?;
            args.push((col, token));
            self.skip_ws();
            if self.eat(',') {
                continue;
            }
            if self.eat(')') {
                return Ok(args);
            }
            return Err(self.fail("expected `,` or `)`"));
        }
    }
}
