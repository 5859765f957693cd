//! Plain-text automaton files.
//!
//! ```text
//! # comment
//! vars: tired, blocked, fast
//! states: q0, q1, q2
//! initial: q0
//! accepting: q0, q1
//! order: fast, tired, blocked     # optional compile order
//! q0 -> q1 : tired | blocked
//! ```
//!
//! Header lines (`vars`, `states`, `initial`, `accepting`, `order`) may appear
//! in any order, but `vars` and `states` must precede the first transition.
//! `accepting:` may be empty. Each transition line is
//! `<state> -> <state> : <guard>`, split at the first `:`.

use std::fmt::Write;

use super::{Result, Sfa, SfaError, Transition};
use crate::logic::{parse_formula, Vocabulary};

fn parse_err<T>(line: usize, msg: impl Into<String>) -> Result<T> {
    Err(SfaError::Parse {
        line,
        msg: msg.into(),
    })
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(String::from)
        .collect()
}

#[derive(Default)]
struct Header {
    vars: Option<Vocabulary>,
    states: Option<Vec<String>>,
    initial: Option<(usize, String)>,
    accepting: Option<(usize, Vec<String>)>,
    order: Option<(usize, Vec<String>)>,
}

pub fn parse_sfa(text: &str) -> Result<Sfa> {
    let mut h = Header::default();
    let mut transitions = Vec::new();

    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some((lhs, guard)) = line.split_once(':') {
            let key = lhs.trim();
            if let Some((from, to)) = key.split_once("->") {
                let (Some(vocab), Some(states)) = (&h.vars, &h.states) else {
                    return parse_err(line_no, "transition before `vars` and `states`");
                };
                let lookup = |name: &str| match states.iter().position(|s| s == name) {
                    Some(i) => Ok(i),
                    None => parse_err(line_no, format!("unknown state `{name}`")),
                };
                let from = lookup(from.trim())?;
                let to = lookup(to.trim())?;
                let guard = parse_formula(guard.trim(), vocab).or_else(|e| parse_err(line_no, e.to_string()))?;
                transitions.push((line_no, Transition { from, to, guard }));
                continue;
            }
            let value = guard.trim();
            let dup = || parse_err(line_no, format!("duplicate `{key}`"));
            match key {
                "vars" => {
                    if h.vars.is_some() {
                        return dup();
                    }
                    h.vars = Some(Vocabulary::new(split_list(value)).or_else(|e| parse_err(line_no, e.to_string()))?);
                }
                "states" => {
                    if h.states.is_some() {
                        return dup();
                    }
                    let states = split_list(value);
                    if states.is_empty() {
                        return parse_err(line_no, "no states declared");
                    }
                    h.states = Some(states);
                }
                "initial" => {
                    if h.initial.is_some() {
                        return dup();
                    }
                    if value.is_empty() || value.contains(',') {
                        return parse_err(line_no, "exactly one initial state required");
                    }
                    h.initial = Some((line_no, value.to_string()));
                }
                "accepting" => {
                    if h.accepting.is_some() {
                        return dup();
                    }
                    h.accepting = Some((line_no, split_list(value)));
                }
                "order" => {
                    if h.order.is_some() {
                        return dup();
                    }
                    h.order = Some((line_no, split_list(value)));
                }
                _ => return parse_err(line_no, format!("unknown key `{key}`")),
            }
            continue;
        }
        return parse_err(line_no, "expected `key: value` or `state -> state : guard`");
    }

    let last = text.lines().count().max(1);
    let Some(vocab) = h.vars else {
        return parse_err(last, "missing `vars`");
    };
    let Some(states) = h.states else {
        return parse_err(last, "missing `states`");
    };
    let state_of = |line: usize, name: &str| match states.iter().position(|s| s == name) {
        Some(i) => Ok(i),
        None => parse_err(line, format!("unknown state `{name}`")),
    };
    let Some((init_line, init)) = h.initial else {
        return parse_err(last, "missing `initial`");
    };
    let initial = state_of(init_line, &init)?;
    let Some((acc_line, acc)) = h.accepting else {
        return parse_err(last, "missing `accepting`");
    };
    let accepting = acc
        .iter()
        .map(|s| state_of(acc_line, s))
        .collect::<Result<Vec<_>>>()?;
    let order = match h.order {
        Some((line, names)) => {
            let idx = names
                .iter()
                .map(|n| match vocab.index_of(n) {
                    Some(i) => Ok(i),
                    None => parse_err(line, format!("unknown variable `{n}` in order")),
                })
                .collect::<Result<Vec<_>>>()?;
            Some((line, idx))
        }
        None => None,
    };

    let mut seen = std::collections::HashSet::new();
    for (line, t) in &transitions {
        if !seen.insert((t.from, t.to)) {
            return parse_err(
                *line,
                format!("duplicate transition {} -> {}", states[t.from], states[t.to]),
            );
        }
    }
    let sfa = Sfa::new(
        vocab,
        states,
        initial,
        &accepting,
        transitions.into_iter().map(|(_, t)| t).collect(),
    )?;
    match order {
        Some((line, order)) => sfa
            .with_order(order)
            .or_else(|_| parse_err(line, "order must list every variable exactly once")),
        None => Ok(sfa),
    }
}

/// Renders `sfa` in the format accepted by [`parse_sfa`].
pub fn write_sfa(sfa: &Sfa) -> String {
    let mut out = String::new();
    let vocab = sfa.vocab();
    let _ = writeln!(out, "vars: {}", vocab.names().join(", "));
    let _ = writeln!(out, "states: {}", sfa.states().join(", "));
    let _ = writeln!(out, "initial: {}", sfa.states()[sfa.initial()]);
    let acc: Vec<&str> = sfa.accepting().map(|q| sfa.states()[q].as_str()).collect();
    let _ = writeln!(out, "accepting: {}", acc.join(", "));
    if let Some(order) = sfa.order() {
        let names: Vec<&str> = order.iter().map(|&i| vocab.name(i)).collect();
        let _ = writeln!(out, "order: {}", names.join(", "));
    }
    for t in sfa.transitions() {
        let _ = writeln!(
            out,
            "{} -> {} : {}",
            sfa.states()[t.from],
            sfa.states()[t.to],
            t.guard.display(vocab)
        );
    }
    out
}
