//! Line-oriented rule-set text format.
//!
//! ```text
//! states: S,I
//! vertices: 3
//! # m | base | target | base states | from -> to | rate
//! 1 | 0 | 1 | I | S -> I | 0.5
//! 0 |   | 2 |   | I -> S | 1
//! ```
//!
//! Whitespace is ignored around every field and `#` starts a comment.
//! Vertex ids are 0-based.

use std::fmt::Write as _;

use thiserror::Error;

use crate::rates::{build_rate_system, InteractionRule, RateError, RateSystem, StateSpace};

#[derive(Debug, Error)]
pub enum RuleSetError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Rate(#[from] RateError),
}

fn parse_err(line: usize, message: impl Into<String>) -> RuleSetError {
    RuleSetError::Parse { line, message: message.into() }
}

fn split_list(field: &str) -> impl Iterator<Item = &str> {
    field.split(',').map(str::trim).filter(|s| !s.is_empty())
}

pub fn parse_rule_set(text: &str) -> Result<RateSystem, RuleSetError> {
    let mut states: Option<StateSpace> = None;
    let mut n_vertices: Option<usize> = None;
    let mut rules = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("states:") {
            states = Some(StateSpace::new(split_list(rest).map(str::to_string))?);
            continue;
        }
        if let Some(rest) = line.strip_prefix("vertices:") {
            n_vertices = Some(
                rest.trim().parse().map_err(|_| parse_err(line_no, format!("bad vertex count `{}`", rest.trim())))?,
            );
            continue;
        }
        let space = states.as_ref().ok_or_else(|| parse_err(line_no, "rule before `states:` header"))?;
        let fields: Vec<&str> = line.split('|').map(str::trim).collect();
        if fields.len() != 6 {
            return Err(parse_err(line_no, format!("expected 6 `|`-separated fields, found {}", fields.len())));
        }
        let order: usize = fields[0].parse().map_err(|_| parse_err(line_no, format!("bad order `{}`", fields[0])))?;
        let base = split_list(fields[1])
            .map(|s| s.parse::<usize>().map_err(|_| parse_err(line_no, format!("bad vertex id `{s}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        let target: usize = fields[2].parse().map_err(|_| parse_err(line_no, format!("bad target `{}`", fields[2])))?;
        let base_states = split_list(fields[3]).map(|s| space.require(s)).collect::<Result<Vec<_>, _>>()?;
        let (from, to) =
            fields[4].split_once("->").ok_or_else(|| parse_err(line_no, "transition must read `s' -> s`"))?;
        let from = space.require(from.trim())?;
        let to = space.require(to.trim())?;
        let rate: f64 = fields[5].parse().map_err(|_| parse_err(line_no, format!("bad rate `{}`", fields[5])))?;
        if base.len() != order {
            return Err(parse_err(line_no, format!("order {order} but {} base vertices", base.len())));
        }
        rules.push(InteractionRule { base, target, base_states, from, to, rate });
    }
    let states = states.ok_or_else(|| parse_err(0, "missing `states:` header"))?;
    let n = n_vertices.ok_or_else(|| parse_err(0, "missing `vertices:` header"))?;
    Ok(build_rate_system(states, n, rules)?)
}

pub fn write_rule_set(system: &RateSystem) -> String {
    let space = system.state_space();
    let mut out = String::new();
    let _ = writeln!(out, "states: {}", space.names().join(","));
    let _ = writeln!(out, "vertices: {}", system.n_vertices());
    for r in system.rules() {
        let base: Vec<String> = r.base.iter().map(|j| j.to_string()).collect();
        let bs: Vec<&str> = r.base_states.iter().map(|&s| space.name(s as usize)).collect();
        let _ = writeln!(
            out,
            "{} | {} | {} | {} | {} -> {} | {}",
            r.order(),
            base.join(","),
            r.target,
            bs.join(","),
            space.name(r.from),
            space.name(r.to),
            r.rate
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# two-vertex SIS
states: S, I
vertices: 3

1 | 0 | 1 | I | S -> I | 0.5   # infection
1|1|0|I|S->I|0.5
0 |   | 2 |   | I -> S | 1
2 | 0,1 | 2 | I,I | S -> I | 0.125
";

    #[test]
    fn parses_and_round_trips() {
        let sys = parse_rule_set(SAMPLE).unwrap();
        assert_eq!(sys.n_vertices(), 3);
        assert_eq!(sys.rule_count(), 4);
        assert_eq!(sys.max_order(), 2);
        let text = write_rule_set(&sys);
        let again = parse_rule_set(&text).unwrap();
        assert_eq!(write_rule_set(&again), text);
    }

    #[test]
    fn reports_line_numbers() {
        let err = parse_rule_set("states: S,I\nvertices: 2\n1 | 0 | 1 | I | S => I | 1\n").unwrap_err();
        assert!(matches!(err, RuleSetError::Parse { line: 3, .. }), "{err}");
        let err = parse_rule_set("states: S,I\nvertices: 2\n1 | 0 | 1 | X | S -> I | 1\n").unwrap_err();
        assert!(matches!(err, RuleSetError::Rate(RateError::UnknownState(_))));
        let err = parse_rule_set("vertices: 2\n").unwrap_err();
        assert!(matches!(err, RuleSetError::Parse { .. }));
    }

    #[test]
    fn validation_errors_pass_through() {
        let err = parse_rule_set("states: S,I\nvertices: 3\n2 | 1,0 | 2 | I,I | S -> I | 1\n").unwrap_err();
        assert!(matches!(err, RuleSetError::Rate(RateError::MalformedRule { .. })));
    }
}
