//! Reference engine without circuits: every symbolic transition is expanded
//! into one explicit edge per model of its guard, and the forward recursion
//! runs over those edges with each edge weighted by the product of its
//! per-symbol probabilities.

use super::{BenchError, Result};
use crate::sfa::{Sfa, SfaError};

pub const MAX_ENUMERATIVE_VARIABLES: usize = 12;

/// Explicit automaton: `successors(q)[ω]` is the target under interpretation
/// bits `ω`. Interpretations no declared guard accepts loop on `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct Propositionalized {
    n_states: usize,
    n_vars: usize,
    initial: usize,
    accepting: Vec<bool>,
    next: Vec<usize>,
}

impl Propositionalized {
    pub fn new(sfa: &Sfa) -> Result<Self> {
        let n_vars = sfa.vocab().len();
        if n_vars > MAX_ENUMERATIVE_VARIABLES {
            return Err(BenchError::ResourceLimit {
                vars: n_vars,
                max: MAX_ENUMERATIVE_VARIABLES,
            });
        }
        let n_states = sfa.n_states();
        let width = 1usize << n_vars;
        let mut next: Vec<Option<usize>> = vec![None; n_states * width];
        for t in sfa.transitions() {
            for bits in 0..width {
                let slot = &mut next[t.from * width + bits];
                if slot.is_none() && t.guard.eval_bits(bits as u64) {
                    *slot = Some(t.to);
                }
            }
        }
        let next = next
            .iter()
            .enumerate()
            .map(|(k, s)| s.unwrap_or(k / width))
            .collect();
        Ok(Propositionalized {
            n_states,
            n_vars,
            initial: sfa.initial(),
            accepting: (0..n_states).map(|q| sfa.is_accepting(q)).collect(),
            next,
        })
    }

    pub fn successors(&self, q: usize) -> &[usize] {
        let width = 1usize << self.n_vars;
        &self.next[q * width..(q + 1) * width]
    }

    pub fn n_edges(&self) -> usize {
        self.next.len()
    }

    pub fn acceptance<P: AsRef<[f64]>>(&self, ps: &[P]) -> Result<f64> {
        let n = self.n_states;
        let mut alpha = vec![0.0; n];
        alpha[self.initial] = 1.0;
        let mut next_alpha = vec![0.0; n];
        for (step, p) in ps.iter().enumerate() {
            let p = p.as_ref();
            if p.len() != self.n_vars {
                return Err(SfaError::DimensionMismatch {
                    expected: self.n_vars,
                    found: p.len(),
                }
                .into());
            }
            if let Some((index, &value)) = p.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
                return Err(SfaError::InvalidProbability { step, index, value }.into());
            }
            next_alpha.fill(0.0);
            for (q, &a) in alpha.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (bits, &to) in self.successors(q).iter().enumerate() {
                    let mut w = a;
                    for (i, &pi) in p.iter().enumerate() {
                        w *= if bits >> i & 1 == 1 { pi } else { 1.0 - pi };
                    }
                    next_alpha[to] += w;
                }
            }
            std::mem::swap(&mut alpha, &mut next_alpha);
        }
        Ok((0..n).filter(|&q| self.accepting[q]).map(|q| alpha[q]).sum())
    }
}

/// Acceptance probability by propositionalizing `a` and enumerating the
/// interpretations at every step.
pub fn enumerative_acceptance<P: AsRef<[f64]>>(a: &Sfa, ps: &[P]) -> Result<f64> {
    Propositionalized::new(a)?.acceptance(ps)
}

#[cfg(test)]
mod tests {
    use super::super::builtin_pattern;
    use super::*;
    use crate::logic::{Interpretation, Trace};

    #[test]
    fn running_example() {
        let pat = builtin_pattern(1).unwrap();
        let acc = enumerative_acceptance(&pat.sfa, &[[0.8, 0.3, 0.6], [0.7, 0.9, 0.3]]).unwrap();
        assert!((acc - 0.742).abs() < 1e-12);
    }

    #[test]
    fn boolean_inputs_give_boolean_run() {
        let pat = builtin_pattern(1).unwrap();
        for seq in 0..64u64 {
            let steps: Vec<u64> = vec![seq & 7, seq >> 3 & 7];
            let ps: Vec<Vec<f64>> = steps
                .iter()
                .map(|b| (0..3).map(|i| (b >> i & 1) as f64).collect())
                .collect();
            let trace = Trace::new(steps.iter().map(|&b| Interpretation::from_bits(b, 3)).collect()).unwrap();
            let expected = pat.sfa.accepts(&trace).unwrap() as u8 as f64;
            assert_eq!(enumerative_acceptance(&pat.sfa, &ps).unwrap(), expected);
        }
    }

    #[test]
    fn vocabulary_limit() {
        let names: Vec<String> = (0..13).map(|i| format!("v{i}")).collect();
        let text = format!("vars: {}\nstates: q\ninitial: q\naccepting: q\n", names.join(", "));
        let sfa = crate::sfa::parse_sfa(&text).unwrap();
        assert_eq!(
            enumerative_acceptance(&sfa, &[vec![0.5; 13]]),
            Err(BenchError::ResourceLimit { vars: 13, max: 12 })
        );
    }
}
