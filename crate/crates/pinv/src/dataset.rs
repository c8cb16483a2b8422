//! Line-oriented text format for sampled data sets.
//!
//! ```text
//! # exact
//! z=0 flip=0 p1=0.5 -> 1.02 / 500
//! # sub
//! z=0 flip=0 p1=0.5 -> z=1 flip=0 p1=0.5 | z=0 flip=1 p1=0.5
//! ```
//!
//! A sub-mode line with nothing after `->` is a guard-false state.

use std::fmt::Write as _;

use pinv_core::sampler::{format_state, ExactDataset, ExactEntry, SubDataset, SubEntry};
use pinv_core::{State, Vars};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
}

pub fn write_exact(vars: &Vars, ds: &ExactDataset) -> String {
    let mut out = String::from("# exact\n");
    for e in &ds.entries {
        writeln!(out, "{} -> {} / {}", format_state(vars, &e.state), e.value, e.trials).unwrap();
    }
    out
}

pub fn write_sub(vars: &Vars, ds: &SubDataset) -> String {
    let mut out = String::from("# sub\n");
    for e in &ds.entries {
        let succ: Vec<String> = e.successors.iter().map(|s| format_state(vars, s)).collect();
        let line = format!("{} -> {}", format_state(vars, &e.state), succ.join(" | "));
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

fn parse_state(vars: &Vars, text: &str, line: usize) -> Result<State, DatasetError> {
    let bad = |msg: String| DatasetError::Malformed { line, msg };
    let mut values = vec![None; vars.state_len()];
    for pair in text.split_whitespace() {
        let (name, value) = pair.split_once('=').ok_or_else(|| bad(format!("expected name=value, got `{pair}`")))?;
        let id = vars.lookup(name).ok_or_else(|| bad(format!("unknown variable `{name}`")))?;
        if id.index() >= values.len() {
            return Err(bad(format!("`{name}` is not a state variable")));
        }
        values[id.index()] = Some(value.parse::<f64>().map_err(|_| bad(format!("bad number `{value}`")))?);
    }
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| v.ok_or_else(|| bad(format!("missing value for `{}`", vars.decls()[i].name))))
        .collect::<Result<_, _>>()
        .map(State)
}

fn body(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn arrow(l: &str, line: usize) -> Result<(&str, &str), DatasetError> {
    l.split_once("->").ok_or_else(|| DatasetError::Malformed { line, msg: "missing `->`".into() })
}

pub fn read_exact(vars: &Vars, text: &str) -> Result<ExactDataset, DatasetError> {
    let mut entries = Vec::new();
    for (line, l) in body(text) {
        let (lhs, rhs) = arrow(l, line)?;
        let bad = || DatasetError::Malformed { line, msg: "expected `value / trials`".into() };
        let (v, t) = rhs.split_once('/').ok_or_else(bad)?;
        entries.push(ExactEntry {
            state: parse_state(vars, lhs, line)?,
            value: v.trim().parse().map_err(|_| bad())?,
            trials: t.trim().parse().map_err(|_| bad())?,
        });
    }
    Ok(ExactDataset { entries })
}

pub fn read_sub(vars: &Vars, text: &str) -> Result<SubDataset, DatasetError> {
    let mut entries = Vec::new();
    for (line, l) in body(text) {
        let (lhs, rhs) = arrow(l, line)?;
        let successors = rhs
            .split('|')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| parse_state(vars, s, line))
            .collect::<Result<_, _>>()?;
        entries.push(SubEntry { state: parse_state(vars, lhs, line)?, successors });
    }
    Ok(SubDataset { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use pinv_core::parse_program;
    use pinv_core::rng::RandomStream;
    use pinv_core::sampler::{sample_states, sample_traces_exact, sample_traces_sub, Domain};

    const GEO0: &str = "var z : int; var flip : bool; var p1 : prob; local d : bool; \
        while (flip == 0) { d ~ bernoulli(p1); if (d) { flip = 1; } else { z = z + 1; } }";

    #[test]
    fn round_trip() {
        let prog = parse_program(GEO0).unwrap();
        let post = pinv_core::parse_expr("z", &prog.vars).unwrap();
        let rng = RandomStream::new(4);
        let states = sample_states(&prog, 20, &Domain::default(), &rng);
        let ex = sample_traces_exact(&prog, &post, &states, 7, 1000, &rng).unwrap();
        assert_eq!(read_exact(&prog.vars, &write_exact(&prog.vars, &ex)).unwrap(), ex);
        let sub = sample_traces_sub(&prog, &states, 3, &rng).unwrap();
        let text = write_sub(&prog.vars, &sub);
        assert_eq!(read_sub(&prog.vars, &text).unwrap(), sub);
    }

    #[test]
    fn errors_name_the_line() {
        let prog = parse_program(GEO0).unwrap();
        let err = read_exact(&prog.vars, "# exact\nz=1 flip=0 p1=0.5 -> 2 / 3\nz=1 flip=0 -> 1 / 1\n").unwrap_err();
        assert!(matches!(err, DatasetError::Malformed { line: 3, .. }), "{err}");
        assert!(read_sub(&prog.vars, "q=1 -> ").is_err());
    }
}
