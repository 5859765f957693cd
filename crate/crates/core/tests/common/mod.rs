//! Oracles and random instance generators shared by the integration tests.
//! The oracles only use truth-table evaluation from the logic module.

#![allow(dead_code)]

use nesya::logic::{evaluate, Formula, Interpretation, Vocabulary};
use nesya::sfa::{Sfa, Transition};
use rand::Rng;

pub const DRIVING: &str = include_str!("../../examples/driving.sfa");
pub const CAVIAR: &str = include_str!("../../examples/caviar_events.sfa");

pub fn vocab(n: usize) -> Vocabulary {
    Vocabulary::new((0..n).map(|i| format!("v{i}"))).unwrap()
}

/// `P(ω | p)` for the interpretation with bit pattern `bits`.
pub fn interpretation_weight(bits: u64, p: &[f64]) -> f64 {
    p.iter()
        .enumerate()
        .map(|(i, &pi)| if bits >> i & 1 == 1 { pi } else { 1.0 - pi })
        .product()
}

/// Weighted model count by summing the weight of every satisfying row of the
/// truth table.
pub fn wmc_oracle(f: &Formula, p: &[f64]) -> f64 {
    (0..1u64 << p.len())
        .filter(|&bits| evaluate(f, &Interpretation::from_bits(bits, p.len())).unwrap())
        .map(|bits| interpretation_weight(bits, p))
        .sum()
}

pub fn random_formula<R: Rng>(rng: &mut R, n_vars: usize, depth: usize) -> Formula {
    if depth == 0 || rng.random_bool(0.25) {
        return match rng.random_range(0..12) {
            0 => Formula::True,
            1 => Formula::False,
            _ => Formula::var(rng.random_range(0..n_vars)),
        };
    }
    let arity = rng.random_range(2..=3);
    let kids: Vec<Formula> = (0..arity).map(|_| random_formula(rng, n_vars, depth - 1)).collect();
    match rng.random_range(0..4) {
        0 => Formula::not(kids[0].clone()),
        1 => Formula::and(kids),
        2 => Formula::or(kids),
        _ => Formula::implies(kids[0].clone(), kids[1].clone()),
    }
}

pub fn random_probs<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| match rng.random_range(0..10) {
            0 => 0.0,
            1 => 1.0,
            _ => rng.random::<f64>(),
        })
        .collect()
}

/// Random deterministic automaton. Each state's outgoing guards come either
/// from a decision list of random formulas or from a random assignment of
/// interpretations to targets written as minterm disjunctions. Some
/// interpretations may be left uncovered so completion kicks in.
pub fn random_sfa<R: Rng>(rng: &mut R, max_vars: usize, max_states: usize) -> Sfa {
    let n_vars = rng.random_range(1..=max_vars);
    let n_states = rng.random_range(1..=max_states);
    let mut transitions = Vec::new();
    for from in 0..n_states {
        let mut guards: Vec<Option<Formula>> = vec![None; n_states];
        if rng.random_bool(0.5) {
            let mut previous: Vec<Formula> = Vec::new();
            for _ in 0..rng.random_range(1..=3) {
                let cond = random_formula(rng, n_vars, 2);
                let branch = Formula::and(
                    previous
                        .iter()
                        .map(|c| Formula::not(c.clone()))
                        .chain([cond.clone()]),
                );
                previous.push(cond);
                add_branch(&mut guards, rng.random_range(0..n_states), branch);
            }
            if rng.random_bool(0.5) {
                let rest = Formula::and(previous.into_iter().map(Formula::not));
                add_branch(&mut guards, rng.random_range(0..n_states), rest);
            }
        } else {
            for bits in 0..1u64 << n_vars {
                if rng.random_bool(0.15) {
                    continue;
                }
                let minterm = Formula::and((0..n_vars).map(|i| {
                    if bits >> i & 1 == 1 {
                        Formula::var(i)
                    } else {
                        Formula::not(Formula::var(i))
                    }
                }));
                add_branch(&mut guards, rng.random_range(0..n_states), minterm);
            }
        }
        for (to, g) in guards.into_iter().enumerate() {
            if let Some(guard) = g {
                transitions.push(Transition { from, to, guard });
            }
        }
    }
    let accepting: Vec<usize> = (0..n_states).filter(|_| rng.random_bool(0.5)).collect();
    let states = (0..n_states).map(|i| format!("q{i}")).collect();
    Sfa::new(vocab(n_vars), states, 0, &accepting, transitions).unwrap()
}

fn add_branch(guards: &mut [Option<Formula>], to: usize, branch: Formula) {
    guards[to] = Some(match guards[to].take() {
        Some(g) => Formula::or([g, branch]),
        None => branch,
    });
}

/// `α_t[q]` for `t = 1..=n` by enumerating every trace of each length and
/// summing the probability of those whose run ends in `q`.
pub fn brute_force_alphas(sfa: &Sfa, ps: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = sfa.n_states();
    let width = 1u64 << sfa.vocab().len();
    let mut alphas = vec![vec![0.0; n]; ps.len()];
    // Depth-first over trace prefixes; every prefix is one trace of its length.
    let mut stack = vec![(0usize, sfa.initial(), 1.0)];
    while let Some((t, q, prob)) = stack.pop() {
        if t > 0 {
            alphas[t - 1][q] += prob;
        }
        if t == ps.len() {
            continue;
        }
        for bits in 0..width {
            stack.push((t + 1, sfa.step(q, bits), prob * interpretation_weight(bits, &ps[t])));
        }
    }
    alphas
}

/// Relative error with an absolute floor, as used by the gradient checks.
pub fn close(a: f64, b: f64, rel: f64, floor: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + floor
}
