//! Symbolic finite automata with propositional guards.
//!
//! [`Sfa`] is the authored automaton. [`validate_and_compile`] checks that it
//! is deterministic, completes missing mass with self-loops and compiles each
//! guard, producing a [`CompiledSfa`] that supports probabilistic inference.

mod format;
mod inference;

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

pub use format::{parse_sfa, write_sfa};
pub use inference::{StateDistribution, TransitionMatrix};

use crate::compile::{CompileError, CompiledGuard, Compiler, GuardSet};
use crate::logic::{Formula, Interpretation, LogicError, Trace, Vocabulary, MAX_ENUMERATION_VARIABLES};

/// Tolerance at which a transition-matrix row sum is treated as an internal
/// consistency failure.
pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// A satisfying assignment reported with a validation failure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Witness {
    pub interpretation: Interpretation,
    pub true_vars: Vec<String>,
}

impl Witness {
    fn new(interpretation: Interpretation, vocab: &Vocabulary) -> Self {
        let true_vars = interpretation
            .true_vars()
            .map(|i| vocab.name(i).to_string())
            .collect();
        Witness {
            interpretation,
            true_vars,
        }
    }
}

impl fmt::Display for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.true_vars.join(", "))
    }
}

fn show_witness(w: &Option<Witness>) -> String {
    w.as_ref()
        .map_or_else(|| "<support too large to enumerate>".into(), |w| w.to_string())
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SfaError {
    #[error("automaton has no states")]
    NoStates,
    #[error("duplicate state `{0}`")]
    DuplicateState(String),
    #[error("unknown state `{0}`")]
    UnknownState(String),
    #[error("state index {0} out of range")]
    StateOutOfRange(usize),
    #[error("duplicate transition {from} -> {to}")]
    DuplicateTransition { from: String, to: String },
    #[error(
        "nondeterministic: from `{state}` both `{targets:?}` guards hold under {}",
        show_witness(witness)
    )]
    NonDeterministic {
        state: String,
        targets: (String, String),
        witness: Option<Witness>,
    },
    #[error("incomplete: no guard out of `{state}` holds under {}", show_witness(witness))]
    Incomplete {
        state: String,
        witness: Option<Witness>,
    },
    #[error("row for state `{state}` sums to {sum}; the automaton is not deterministic")]
    Inconsistent { state: String, sum: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("probability {value} at step {step}, index {index} is outside [0, 1]")]
    InvalidProbability { step: usize, index: usize, value: f64 },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Logic(#[from] LogicError),
    #[error(transparent)]
    Compile(#[from] CompileError),
}

pub type Result<T> = std::result::Result<T, SfaError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub from: usize,
    pub to: usize,
    pub guard: Formula,
}

/// `(V, Q, q0, δ, F)`. Absent `(q, q')` pairs carry the guard `false`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sfa {
    vocab: Vocabulary,
    states: Vec<String>,
    initial: usize,
    accepting: Vec<bool>,
    transitions: Vec<Transition>,
    order: Option<Vec<usize>>,
}

impl Sfa {
    pub fn new(
        vocab: Vocabulary,
        states: Vec<String>,
        initial: usize,
        accepting: &[usize],
        transitions: Vec<Transition>,
    ) -> Result<Self> {
        if states.is_empty() {
            return Err(SfaError::NoStates);
        }
        let mut seen = HashSet::new();
        for s in &states {
            if !seen.insert(s.as_str()) {
                return Err(SfaError::DuplicateState(s.clone()));
            }
        }
        let n = states.len();
        if initial >= n {
            return Err(SfaError::StateOutOfRange(initial));
        }
        let mut acc = vec![false; n];
        for &f in accepting {
            if f >= n {
                return Err(SfaError::StateOutOfRange(f));
            }
            acc[f] = true;
        }
        let mut pairs = HashSet::new();
        for t in &transitions {
            if t.from >= n || t.to >= n {
                return Err(SfaError::StateOutOfRange(t.from.max(t.to)));
            }
            if let Some(var) = t.guard.max_var().filter(|&v| v >= vocab.len()) {
                return Err(LogicError::VocabularyMismatch {
                    expected: var + 1,
                    found: vocab.len(),
                }
                .into());
            }
            if !pairs.insert((t.from, t.to)) {
                return Err(SfaError::DuplicateTransition {
                    from: states[t.from].clone(),
                    to: states[t.to].clone(),
                });
            }
        }
        Ok(Sfa {
            vocab,
            states,
            initial,
            accepting: acc,
            transitions,
            order: None,
        })
    }

    /// Overrides the variable order used when compiling guards.
    pub fn with_order(mut self, order: Vec<usize>) -> Result<Self> {
        Compiler::new(self.vocab.len()).with_order(&order)?;
        self.order = Some(order);
        Ok(self)
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s == name)
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn is_accepting(&self, q: usize) -> bool {
        self.accepting[q]
    }

    pub fn accepting(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.states.len()).filter(|&q| self.accepting[q])
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn order(&self) -> Option<&[usize]> {
        self.order.as_deref()
    }

    pub fn guard(&self, from: usize, to: usize) -> Option<&Formula> {
        self.transitions
            .iter()
            .find(|t| t.from == from && t.to == to)
            .map(|t| &t.guard)
    }

    /// Successor of `q` under the interpretation `bits`; stays in `q` when no
    /// declared guard holds.
    pub fn step(&self, q: usize, bits: u64) -> usize {
        self.transitions
            .iter()
            .find(|t| t.from == q && t.guard.eval_bits(bits))
            .map_or(q, |t| t.to)
    }

    /// State reached after reading `trace` from the initial state.
    pub fn run(&self, trace: &Trace) -> Result<usize> {
        let mut q = self.initial;
        for omega in trace.steps() {
            if omega.len() != self.vocab.len() {
                return Err(SfaError::DimensionMismatch {
                    expected: self.vocab.len(),
                    found: omega.len(),
                });
            }
            q = self.step(q, omega.bits());
        }
        Ok(q)
    }

    /// `π ⊨ A` for a boolean trace.
    pub fn accepts(&self, trace: &Trace) -> Result<bool> {
        Ok(self.accepting[self.run(trace)?])
    }

    fn compiler(&self) -> Compiler {
        let c = Compiler::new(self.vocab.len());
        match &self.order {
            Some(order) => c.with_order(order).expect("order checked in with_order"),
            None => c,
        }
    }
}

/// What to do when a state's outgoing guards do not cover every interpretation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Completion {
    /// Uncovered interpretations loop in the current state.
    #[default]
    SelfLoop,
    /// Report [`SfaError::Incomplete`].
    Strict,
}

/// A validated automaton with one compiled circuit per transition.
#[derive(Debug, Clone)]
pub struct CompiledSfa {
    sfa: Sfa,
    guards: Vec<CompiledGuard>,
    /// All guards in one shared circuit, root `k` for transition `k`.
    fused: GuardSet,
    /// `(from, to, root)` per transition, the hot-loop view of `fused`.
    edges: Vec<(usize, usize, usize)>,
    completed: Vec<usize>,
}

impl CompiledSfa {
    /// The automaton after self-loop completion.
    pub fn sfa(&self) -> &Sfa {
        &self.sfa
    }

    pub fn guards(&self) -> &[CompiledGuard] {
        &self.guards
    }

    /// Every guard in a single multi-rooted circuit, in transition order.
    pub fn fused(&self) -> &GuardSet {
        &self.fused
    }

    /// States that received a synthesized self-loop mass.
    pub fn completed_states(&self) -> &[usize] {
        &self.completed
    }

    pub fn n_states(&self) -> usize {
        self.sfa.n_states()
    }

    pub fn n_vars(&self) -> usize {
        self.sfa.vocab.len()
    }
}

/// Validates determinism with self-loop completion and compiles every guard.
pub fn validate_and_compile(sfa: &Sfa) -> Result<CompiledSfa> {
    validate_and_compile_with(sfa, Completion::SelfLoop)
}

pub fn validate_and_compile_with(sfa: &Sfa, completion: Completion) -> Result<CompiledSfa> {
    let compiler = sfa.compiler();
    let mut sfa = sfa.clone();
    let mut completed = Vec::new();

    for q in 0..sfa.n_states() {
        check_disjoint(&sfa, &compiler, q)?;
        let cover = outgoing_cover(&sfa, q);
        if compiler.compile(&cover)?.is_valid() {
            continue;
        }
        let uncovered = Formula::not(cover);
        match completion {
            Completion::Strict => {
                return Err(SfaError::Incomplete {
                    state: sfa.states[q].clone(),
                    witness: find_witness(&uncovered, &sfa.vocab),
                })
            }
            Completion::SelfLoop => {
                match sfa.transitions.iter_mut().find(|t| t.from == q && t.to == q) {
                    Some(t) => t.guard = Formula::or([t.guard.clone(), uncovered]),
                    None => sfa.transitions.push(Transition {
                        from: q,
                        to: q,
                        guard: uncovered,
                    }),
                }
                completed.push(q);
                check_disjoint(&sfa, &compiler, q)?;
                let cover = outgoing_cover(&sfa, q);
                if !compiler.compile(&cover)?.is_valid() {
                    return Err(SfaError::Incomplete {
                        state: sfa.states[q].clone(),
                        witness: find_witness(&Formula::not(cover), &sfa.vocab),
                    });
                }
            }
        }
    }

    let guards = sfa
        .transitions
        .iter()
        .map(|t| compiler.compile(&t.guard))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let formulas: Vec<Formula> = sfa.transitions.iter().map(|t| t.guard.clone()).collect();
    let fused = compiler.compile_all(&formulas)?;
    let edges = sfa
        .transitions
        .iter()
        .zip(fused.roots())
        .map(|(t, &r)| (t.from, t.to, r as usize))
        .collect();
    Ok(CompiledSfa {
        sfa,
        guards,
        fused,
        edges,
        completed,
    })
}

fn outgoing_cover(sfa: &Sfa, q: usize) -> Formula {
    Formula::or(
        sfa.transitions
            .iter()
            .filter(|t| t.from == q)
            .map(|t| t.guard.clone()),
    )
}

fn check_disjoint(sfa: &Sfa, compiler: &Compiler, q: usize) -> Result<()> {
    let out: Vec<&Transition> = sfa.transitions.iter().filter(|t| t.from == q).collect();
    for (i, a) in out.iter().enumerate() {
        for b in &out[i + 1..] {
            let both = Formula::and([a.guard.clone(), b.guard.clone()]);
            if compiler.compile(&both)?.is_satisfiable() {
                return Err(SfaError::NonDeterministic {
                    state: sfa.states[q].clone(),
                    targets: (sfa.states[a.to].clone(), sfa.states[b.to].clone()),
                    witness: find_witness(&both, &sfa.vocab),
                });
            }
        }
    }
    Ok(())
}

/// First model of `f` in increasing bit order over its support, with every
/// other variable false.
fn find_witness(f: &Formula, vocab: &Vocabulary) -> Option<Witness> {
    let support = f.support();
    if support.len() > MAX_ENUMERATION_VARIABLES {
        return None;
    }
    (0..1u64 << support.len())
        .map(|mask| {
            support
                .iter()
                .enumerate()
                .filter(|&(k, _)| mask >> k & 1 == 1)
                .fold(0u64, |bits, (_, &v)| bits | 1 << v)
        })
        .find(|&bits| f.eval_bits(bits))
        .map(|bits| Witness::new(Interpretation::from_bits(bits, vocab.len()), vocab))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::logic::parse_formula;

    pub(crate) fn driving_sfa() -> Sfa {
        let vocab = Vocabulary::new(["tired", "blocked", "fast"]).unwrap();
        let g = |s: &str| parse_formula(s, &vocab).unwrap();
        let transitions = vec![
            Transition { from: 0, to: 0, guard: g("!tired & !blocked") },
            Transition { from: 0, to: 1, guard: g("tired | blocked") },
            Transition { from: 1, to: 1, guard: g("!fast & (tired | blocked)") },
            Transition { from: 1, to: 0, guard: g("!tired & !blocked & !fast") },
            Transition { from: 1, to: 2, guard: g("fast") },
            Transition { from: 2, to: 2, guard: g("true") },
        ];
        let states = ["q0", "q1", "q2"].map(String::from).to_vec();
        Sfa::new(vocab, states, 0, &[0, 1], transitions).unwrap()
    }

    #[test]
    fn driving_sfa_validates_without_completion() {
        let c = validate_and_compile_with(&driving_sfa(), Completion::Strict).unwrap();
        assert!(c.completed_states().is_empty());
        assert_eq!(c.guards().len(), 6);
    }

    #[test]
    fn single_state_true_loop() {
        let vocab = Vocabulary::new(["a"]).unwrap();
        let t = vec![Transition { from: 0, to: 0, guard: Formula::True }];
        let sfa = Sfa::new(vocab, vec!["q".into()], 0, &[0], t).unwrap();
        validate_and_compile(&sfa).unwrap();
    }

    #[test]
    fn overlapping_guards_report_witness() {
        let vocab = Vocabulary::new(["a", "b"]).unwrap();
        let t = vec![
            Transition { from: 0, to: 0, guard: parse_formula("a", &vocab).unwrap() },
            Transition { from: 0, to: 1, guard: parse_formula("a | b", &vocab).unwrap() },
        ];
        let sfa = Sfa::new(vocab, vec!["q0".into(), "q1".into()], 0, &[1], t).unwrap();
        match validate_and_compile(&sfa).unwrap_err() {
            SfaError::NonDeterministic { state, targets, witness } => {
                assert_eq!(state, "q0");
                assert_eq!(targets, ("q0".into(), "q1".into()));
                let w = witness.unwrap();
                assert_eq!(w.true_vars, vec!["a".to_string()]);
                assert_eq!(w.to_string(), "{a}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn completion_adds_self_loop() {
        let vocab = Vocabulary::new(["a", "b"]).unwrap();
        let t = vec![Transition { from: 0, to: 1, guard: parse_formula("a & b", &vocab).unwrap() }];
        let sfa = Sfa::new(vocab, vec!["q0".into(), "q1".into()], 0, &[1], t).unwrap();
        match validate_and_compile_with(&sfa, Completion::Strict).unwrap_err() {
            SfaError::Incomplete { state, witness } => {
                assert_eq!(state, "q0");
                assert_eq!(witness.unwrap().to_string(), "{}");
            }
            other => panic!("unexpected {other:?}"),
        }
        let c = validate_and_compile(&sfa).unwrap();
        assert_eq!(c.completed_states(), &[0, 1]);
        let self0 = c.sfa().guard(0, 0).unwrap();
        assert!(!self0.eval_bits(0b11));
        assert!(self0.eval_bits(0b01));
        assert!(c.sfa().guard(1, 1).unwrap().eval_bits(0b11));
    }

    #[test]
    fn completion_extends_declared_self_loop() {
        let vocab = Vocabulary::new(["a", "b"]).unwrap();
        let t = vec![
            Transition { from: 0, to: 0, guard: parse_formula("!a & b", &vocab).unwrap() },
            Transition { from: 0, to: 1, guard: parse_formula("a", &vocab).unwrap() },
        ];
        let sfa = Sfa::new(vocab, vec!["q0".into(), "q1".into()], 0, &[1], t).unwrap();
        let c = validate_and_compile(&sfa).unwrap();
        let self0 = c.sfa().guard(0, 0).unwrap();
        assert!(self0.eval_bits(0b00) && self0.eval_bits(0b10) && !self0.eval_bits(0b01));
        assert_eq!(c.sfa().transitions().len(), 3);
    }

    #[test]
    fn structural_errors() {
        let vocab = Vocabulary::new(["a"]).unwrap();
        assert_eq!(Sfa::new(vocab.clone(), vec![], 0, &[], vec![]), Err(SfaError::NoStates));
        assert!(matches!(
            Sfa::new(vocab.clone(), vec!["q".into(), "q".into()], 0, &[], vec![]),
            Err(SfaError::DuplicateState(_))
        ));
        assert_eq!(
            Sfa::new(vocab.clone(), vec!["q".into()], 1, &[], vec![]),
            Err(SfaError::StateOutOfRange(1))
        );
        let dup = vec![
            Transition { from: 0, to: 0, guard: Formula::Var(0) },
            Transition { from: 0, to: 0, guard: Formula::not(Formula::Var(0)) },
        ];
        assert!(matches!(
            Sfa::new(vocab.clone(), vec!["q".into()], 0, &[], dup),
            Err(SfaError::DuplicateTransition { .. })
        ));
        let wide = vec![Transition { from: 0, to: 0, guard: Formula::Var(3) }];
        assert!(matches!(
            Sfa::new(vocab, vec!["q".into()], 0, &[], wide),
            Err(SfaError::Logic(_))
        ));
    }

    #[test]
    fn boolean_run_follows_guards() {
        let sfa = driving_sfa();
        let it = |vars: &[usize]| Interpretation::from_true_vars(3, vars.iter().copied());
        // tired, then fast: violates the pattern
        let bad = Trace::new(vec![it(&[0]), it(&[2])]).unwrap();
        assert_eq!(sfa.run(&bad).unwrap(), 2);
        assert!(!sfa.accepts(&bad).unwrap());
        let good = Trace::new(vec![it(&[0]), it(&[1]), it(&[]), it(&[2])]).unwrap();
        assert!(sfa.accepts(&good).unwrap());
        assert!(sfa.accepts(&Trace::default()).unwrap());
    }
}
