//! Synthetic benchmark: pattern automata, dataset generation, the enumerative
//! reference engine and the timing harness.

mod dataset;
mod enumerative;
mod harness;
pub mod metrics;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use dataset::{
    generate_dataset, generate_tagged_dataset, read_jsonl, render_features, sample_trace, write_jsonl,
    DatasetRecord, GenParams, RecordLabel, SyntheticDataset, TraceClass,
};
pub use enumerative::{enumerative_acceptance, Propositionalized, MAX_ENUMERATIVE_VARIABLES};
pub use harness::{reference_extractor, run_benchmark, BenchConfig, BenchReport, BenchRow, Engine};
pub use metrics::{metrics, Scores};

use crate::logic::{Formula, Vocabulary};
use crate::sfa::{parse_sfa, validate_and_compile, Sfa, SfaError, Transition};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BenchError {
    #[error("no {0} trace of the requested length exists")]
    UnsatisfiablePattern(TraceClass),
    #[error("{vars} variables exceed the enumeration limit of {max}")]
    ResourceLimit { vars: usize, max: usize },
    #[error("unknown pattern {0}")]
    UnknownPattern(usize),
    #[error("{predictions} predictions for {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("metrics need at least one example")]
    EmptyInput,
    #[error("class {0} out of range")]
    ClassOutOfRange(usize),
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Sfa(#[from] SfaError),
}

pub type Result<T> = std::result::Result<T, BenchError>;

/// A named benchmark automaton.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternSpec {
    pub name: String,
    pub sfa: Sfa,
}

impl PatternSpec {
    pub fn n_symbols(&self) -> usize {
        self.sfa.vocab().len()
    }

    pub fn n_states(&self) -> usize {
        self.sfa.n_states()
    }
}

/// The driver-monitoring automaton: after `tired | blocked` the next step must
/// not be `fast`.
pub const DRIVING_SFA: &str = "\
vars: tired, blocked, fast
states: q0, q1, q2
initial: q0
accepting: q0, q1
q0 -> q0 : !tired & !blocked
q0 -> q1 : tired | blocked
q1 -> q1 : !fast & (tired | blocked)
q1 -> q0 : !tired & !blocked & !fast
q1 -> q2 : fast
q2 -> q2 : true
";

/// Seeds of the random patterns 2 and 3.
pub const PATTERN_SEEDS: [u64; 2] = [2, 3];

/// Built-in patterns: 1 is the driving automaton (3 states, 3 symbols); 2 and
/// 3 are seeded random automata with 4 states/4 symbols and 6 states/5
/// symbols.
pub fn builtin_pattern(index: usize) -> Result<PatternSpec> {
    let (name, sfa) = match index {
        1 => ("driving".to_string(), parse_sfa(DRIVING_SFA)?),
        2 => ("random-4x4".to_string(), random_pattern(4, 4, PATTERN_SEEDS[0])),
        3 => ("random-6x5".to_string(), random_pattern(6, 5, PATTERN_SEEDS[1])),
        other => return Err(BenchError::UnknownPattern(other)),
    };
    Ok(PatternSpec { name, sfa })
}

/// Lengths at which random patterns must admit both accepted and rejected
/// traces.
const INTERESTING_LENGTHS: [usize; 4] = [3, 10, 20, 30];

/// Random deterministic automaton over `n_vars` symbols.
///
/// Each state's outgoing guards form a decision list: conditions
/// `c_1 … c_{k-1}` (random conjunctions of one or two literals) select
/// branches `c_j ∧ ¬c_1 ∧ … ∧ ¬c_{j-1}`, and the default branch takes
/// `¬c_1 ∧ … ∧ ¬c_{k-1}`. Branches are pairwise exclusive and exhaustive by
/// construction. Candidates are redrawn until every state is reachable and
/// both accepted and rejected traces exist at lengths 3, 10, 20 and 30.
pub fn random_pattern(n_states: usize, n_vars: usize, seed: u64) -> Sfa {
    assert!(n_states >= 2 && n_vars >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let sfa = random_candidate(n_states, n_vars, &mut rng);
        if validate_and_compile(&sfa).is_ok() && is_interesting(&sfa) {
            return sfa;
        }
    }
}

fn random_candidate(n_states: usize, n_vars: usize, rng: &mut ChaCha8Rng) -> Sfa {
    let vocab = Vocabulary::new((0..n_vars).map(|i| format!("s{i}"))).unwrap();
    let mut transitions: Vec<Transition> = Vec::new();
    for q in 0..n_states {
        let branches = rng.random_range(2..=3usize.min(n_states));
        let conditions: Vec<Formula> = (0..branches - 1)
            .map(|_| {
                let width = rng.random_range(1..=2usize.min(n_vars));
                let mut vars: Vec<usize> = (0..n_vars).collect();
                vars.sort_by_key(|_| rng.random::<u32>());
                Formula::and(vars[..width].iter().map(|&v| {
                    if rng.random_bool(0.5) {
                        Formula::Var(v)
                    } else {
                        Formula::not(Formula::Var(v))
                    }
                }))
            })
            .collect();
        for j in 0..branches {
            let mut parts: Vec<Formula> = conditions[..j.min(branches - 1)]
                .iter()
                .map(|c| Formula::not(c.clone()))
                .collect();
            if j < branches - 1 {
                parts.push(conditions[j].clone());
            }
            let guard = Formula::and(parts);
            let to = rng.random_range(0..n_states);
            match transitions.iter_mut().find(|t| t.from == q && t.to == to) {
                Some(t) => t.guard = Formula::or([t.guard.clone(), guard]),
                None => transitions.push(Transition { from: q, to, guard }),
            }
        }
    }
    let n_accepting = rng.random_range(1..n_states);
    let mut states: Vec<usize> = (0..n_states).collect();
    states.sort_by_key(|_| rng.random::<u32>());
    let accepting = &states[..n_accepting];
    let names = (0..n_states).map(|q| format!("q{q}")).collect();
    Sfa::new(vocab, names, 0, accepting, transitions).expect("generated automaton is well formed")
}

fn is_interesting(sfa: &Sfa) -> bool {
    let table = Propositionalized::new(sfa).expect("small vocabulary");
    let n = sfa.n_states();
    let mut reach = vec![false; n];
    reach[sfa.initial()] = true;
    let mut frontier = vec![sfa.initial()];
    while let Some(q) = frontier.pop() {
        for &to in table.successors(q) {
            if !reach[to] {
                reach[to] = true;
                frontier.push(to);
            }
        }
    }
    reach.iter().all(|&r| r)
        && INTERESTING_LENGTHS.iter().all(|&len| {
            let counts = dataset::suffix_counts(sfa, &table, len);
            let acc = counts.accepted[0][sfa.initial()];
            let rej = counts.rejected[0][sfa.initial()];
            acc > 0.0 && rej > 0.0
        })
}
