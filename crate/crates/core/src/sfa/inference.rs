//! Exact inference over a compiled automaton: transition matrices, the
//! forward recursion `α_t = α_{t-1} × T(p_t)` and its reverse-mode gradient.

use std::collections::BTreeMap;

use super::{CompiledSfa, Result, SfaError, ROW_SUM_TOLERANCE};

/// Row-stochastic `|Q|×|Q|` matrix with `T[from][to] = P(δ(from, to) | p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    n: usize,
    n_vars: usize,
    data: Vec<f64>,
    gradient: Option<Vec<f64>>,
}

impl TransitionMatrix {
    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.data[from * self.n + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.data[from * self.n..(from + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `∂T[from][to]/∂p`, present when requested.
    pub fn entry_gradient(&self, from: usize, to: usize) -> Option<&[f64]> {
        let k = (from * self.n + to) * self.n_vars;
        self.gradient.as_ref().map(|g| &g[k..k + self.n_vars])
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n).map(<[f64]>::to_vec).collect()
    }
}

/// Distribution over states after some prefix of the input.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDistribution(Vec<f64>);

impl StateDistribution {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl std::ops::Index<usize> for StateDistribution {
    type Output = f64;
    fn index(&self, q: usize) -> &f64 {
        &self.0[q]
    }
}

/// Reusable buffers for the hot inference path.
#[derive(Debug, Default)]
pub(crate) struct Scratch {
    values: Vec<f64>,
    adj: Vec<f64>,
    upstream: Vec<f64>,
}

/// Forward pass record kept for a later reverse sweep.
#[derive(Debug, Clone)]
pub(crate) struct ForwardTape {
    /// `α_0 … α_n`, each of length `|Q|`, concatenated.
    pub alphas: Vec<f64>,
    /// `T(p_1) … T(p_n)`, each `|Q|²`, concatenated.
    pub matrices: Vec<f64>,
    pub steps: usize,
}

impl ForwardTape {
    pub fn alpha(&self, t: usize, n: usize) -> &[f64] {
        &self.alphas[t * n..(t + 1) * n]
    }
}

impl CompiledSfa {
    fn check_probs(&self, step: usize, p: &[f64]) -> Result<()> {
        if p.len() != self.n_vars() {
            return Err(SfaError::DimensionMismatch {
                expected: self.n_vars(),
                found: p.len(),
            });
        }
        if let Some((index, &value)) = p.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(SfaError::InvalidProbability { step, index, value });
        }
        Ok(())
    }

    /// Fills `out` (`|Q|²`, zeroed here) with `T(p)` and checks row sums.
    pub(crate) fn fill_matrix(&self, p: &[f64], out: &mut [f64], scratch: &mut Scratch) -> Result<()> {
        let n = self.n_states();
        out.fill(0.0);
        self.fused.forward(p, &mut scratch.values);
        for &(from, to, root) in &self.edges {
            out[from * n + to] = scratch.values[root];
        }
        let sums: Vec<f64> = out.chunks(n).map(|row| row.iter().sum()).collect();
        self.check_rows(&sums)
    }

    fn check_rows(&self, sums: &[f64]) -> Result<()> {
        match sums.iter().position(|s| (s - 1.0).abs() > ROW_SUM_TOLERANCE) {
            Some(q) => Err(SfaError::Inconsistent {
                state: self.sfa.states[q].clone(),
                sum: sums[q],
            }),
            None => Ok(()),
        }
    }

    /// `T(p)`, optionally with `∂T[q'][q]/∂p` for every entry.
    pub fn transition_matrix<P: AsRef<[f64]>>(&self, p: P, want_gradient: bool) -> Result<TransitionMatrix> {
        let p = p.as_ref();
        self.check_probs(0, p)?;
        let n = self.n_states();
        let n_vars = self.n_vars();
        let mut scratch = Scratch::default();
        let mut data = vec![0.0; n * n];
        self.fill_matrix(p, &mut data, &mut scratch)?;
        let gradient = want_gradient.then(|| {
            let mut g = vec![0.0; n * n * n_vars];
            for (t, guard) in self.sfa.transitions.iter().zip(&self.guards) {
                guard.forward(p, &mut scratch.values);
                let k = (t.from * n + t.to) * n_vars;
                guard.backward(&scratch.values, 1.0, &mut g[k..k + n_vars], &mut scratch.adj);
            }
            g
        });
        Ok(TransitionMatrix {
            n,
            n_vars,
            data,
            gradient,
        })
    }

    pub(crate) fn forward_tape<P: AsRef<[f64]>>(&self, ps: &[P]) -> Result<ForwardTape> {
        let n = self.n_states();
        let mut alphas = vec![0.0; n * (ps.len() + 1)];
        alphas[self.sfa.initial] = 1.0;
        let mut matrices = vec![0.0; n * n * ps.len()];
        let mut scratch = Scratch::default();
        for (t, p) in ps.iter().enumerate() {
            let p = p.as_ref();
            self.check_probs(t, p)?;
            let m = &mut matrices[t * n * n..(t + 1) * n * n];
            self.fill_matrix(p, m, &mut scratch)?;
            let (prev, next) = alphas.split_at_mut((t + 1) * n);
            let prev = &prev[t * n..];
            let next = &mut next[..n];
            for (from, &a) in prev.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (to, slot) in next.iter_mut().enumerate() {
                    *slot += a * m[from * n + to];
                }
            }
        }
        Ok(ForwardTape {
            alphas,
            matrices,
            steps: ps.len(),
        })
    }

    /// `(α_1, …, α_n)` for the probability sequence `ps`.
    pub fn forward<P: AsRef<[f64]>>(&self, ps: &[P]) -> Result<Vec<StateDistribution>> {
        let n = self.n_states();
        let tape = self.forward_tape(ps)?;
        Ok((1..=tape.steps)
            .map(|t| StateDistribution(tape.alpha(t, n).to_vec()))
            .collect())
    }

    /// Probability that the automaton ends in an accepting state.
    pub fn acceptance<P: AsRef<[f64]>>(&self, ps: &[P]) -> Result<f64> {
        let n = self.n_states();
        let mut alpha = vec![0.0; n];
        alpha[self.sfa.initial] = 1.0;
        let mut next = vec![0.0; n];
        let mut row_sums = vec![0.0; n];
        let mut values = Vec::new();
        for (t, p) in ps.iter().enumerate() {
            let p = p.as_ref();
            self.check_probs(t, p)?;
            self.fused.forward(p, &mut values);
            next.fill(0.0);
            row_sums.fill(0.0);
            for &(from, to, root) in &self.edges {
                let w = values[root];
                row_sums[from] += w;
                next[to] += alpha[from] * w;
            }
            self.check_rows(&row_sums)?;
            std::mem::swap(&mut alpha, &mut next);
        }
        Ok(self.accepting_mass(&alpha))
    }

    /// [`CompiledSfa::acceptance`] for many sequences at once. Sequences of
    /// equal length advance in lockstep, sharing each circuit pass.
    pub fn acceptance_batch<S, P>(&self, batch: &[S]) -> Result<Vec<f64>>
    where
        S: AsRef<[P]>,
        P: AsRef<[f64]>,
    {
        let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, seq) in batch.iter().enumerate() {
            by_len.entry(seq.as_ref().len()).or_default().push(i);
        }
        let n = self.n_states();
        let mut out = vec![0.0; batch.len()];
        let mut values = Vec::new();
        let mut inputs: Vec<&[f64]> = Vec::new();
        for (len, members) in by_len {
            let lanes = members.len();
            let mut alpha = vec![0.0; n * lanes];
            alpha[self.sfa.initial * lanes..(self.sfa.initial + 1) * lanes].fill(1.0);
            let mut next = vec![0.0; n * lanes];
            let mut row_sums = vec![0.0; n * lanes];
            for t in 0..len {
                inputs.clear();
                for &i in &members {
                    let p = batch[i].as_ref()[t].as_ref();
                    self.check_probs(t, p)?;
                    inputs.push(p);
                }
                self.fused.forward_lanes(&inputs, &mut values);
                next.fill(0.0);
                row_sums.fill(0.0);
                for &(from, to, root) in &self.edges {
                    let w = &values[root * lanes..(root + 1) * lanes];
                    let a = &alpha[from * lanes..(from + 1) * lanes];
                    let rs = &mut row_sums[from * lanes..(from + 1) * lanes];
                    rs.iter_mut().zip(w).for_each(|(r, w)| *r += w);
                    let nx = &mut next[to * lanes..(to + 1) * lanes];
                    for ((x, a), w) in nx.iter_mut().zip(a).zip(w) {
                        *x += a * w;
                    }
                }
                for (q, sums) in row_sums.chunks(lanes).enumerate() {
                    if let Some(&sum) = sums.iter().find(|s| (*s - 1.0).abs() > ROW_SUM_TOLERANCE) {
                        return Err(SfaError::Inconsistent {
                            state: self.sfa.states[q].clone(),
                            sum,
                        });
                    }
                }
                std::mem::swap(&mut alpha, &mut next);
            }
            for (l, &i) in members.iter().enumerate() {
                out[i] = self.sfa.accepting().map(|q| alpha[q * lanes + l]).sum();
            }
        }
        Ok(out)
    }

    pub(crate) fn accepting_mass(&self, alpha: &[f64]) -> f64 {
        self.sfa.accepting().map(|q| alpha[q]).sum()
    }

    /// Reverse-mode gradient of a loss through the recursion and the guard
    /// circuits. `loss_grad_on_alphas[t]` is `∂loss/∂α_{t+1}`; the result
    /// holds `∂loss/∂p_{t+1}` for each step.
    pub fn forward_backward_grad<P: AsRef<[f64]>, G: AsRef<[f64]>>(
        &self,
        ps: &[P],
        loss_grad_on_alphas: &[G],
    ) -> Result<Vec<Vec<f64>>> {
        if loss_grad_on_alphas.len() != ps.len() {
            return Err(SfaError::DimensionMismatch {
                expected: ps.len(),
                found: loss_grad_on_alphas.len(),
            });
        }
        let n = self.n_states();
        if let Some(g) = loss_grad_on_alphas.iter().find(|g| g.as_ref().len() != n) {
            return Err(SfaError::DimensionMismatch {
                expected: n,
                found: g.as_ref().len(),
            });
        }
        let tape = self.forward_tape(ps)?;
        Ok(self.backward_tape(&tape, ps, |t, adj| {
            for (a, g) in adj.iter_mut().zip(loss_grad_on_alphas[t - 1].as_ref()) {
                *a += g;
            }
        }))
    }

    /// Reverse sweep over a recorded forward pass. `seed(t, adj)` adds the
    /// direct loss gradient on `α_t` (t = n down to 1) into `adj`.
    pub(crate) fn backward_tape<P: AsRef<[f64]>>(
        &self,
        tape: &ForwardTape,
        ps: &[P],
        mut seed: impl FnMut(usize, &mut [f64]),
    ) -> Vec<Vec<f64>> {
        let n = self.n_states();
        let n_vars = self.n_vars();
        let mut scratch = Scratch::default();
        let mut adj = vec![0.0; n];
        let mut prev_adj = vec![0.0; n];
        let mut grads = vec![vec![0.0; n_vars]; tape.steps];
        for t in (1..=tape.steps).rev() {
            seed(t, &mut adj);
            let alpha_prev = tape.alpha(t - 1, n);
            let m = &tape.matrices[(t - 1) * n * n..t * n * n];
            let p = ps[t - 1].as_ref();
            scratch.upstream.clear();
            scratch
                .upstream
                .extend(self.edges.iter().map(|&(from, to, _)| alpha_prev[from] * adj[to]));
            if scratch.upstream.iter().any(|&u| u != 0.0) {
                self.fused.forward(p, &mut scratch.values);
                self.fused
                    .backward(&scratch.values, &scratch.upstream, &mut grads[t - 1], &mut scratch.adj);
            }
            for (from, slot) in prev_adj.iter_mut().enumerate() {
                *slot = m[from * n..(from + 1) * n]
                    .iter()
                    .zip(&adj)
                    .map(|(w, a)| w * a)
                    .sum();
            }
            std::mem::swap(&mut adj, &mut prev_adj);
        }
        grads
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::driving_sfa;
    use super::super::validate_and_compile;
    use super::*;

    const P1: [f64; 3] = [0.8, 0.3, 0.6];
    const P2: [f64; 3] = [0.7, 0.9, 0.3];

    #[test]
    fn running_example_matrices() {
        let c = validate_and_compile(&driving_sfa()).unwrap();
        let t1 = c.transition_matrix(P1, false).unwrap();
        let expected1 = [[0.14, 0.86, 0.0], [0.056, 0.344, 0.6], [0.0, 0.0, 1.0]];
        let t2 = c.transition_matrix(P2, false).unwrap();
        let expected2 = [[0.03, 0.97, 0.0], [0.021, 0.679, 0.3], [0.0, 0.0, 1.0]];
        for (t, e) in [(t1, expected1), (t2, expected2)] {
            for i in 0..3 {
                for j in 0..3 {
                    assert!((t.get(i, j) - e[i][j]).abs() < 1e-12, "{:?}", t.to_rows());
                }
            }
        }
    }

    #[test]
    fn running_example_alpha_and_acceptance() {
        let c = validate_and_compile(&driving_sfa()).unwrap();
        let alphas = c.forward(&[P1, P2]).unwrap();
        assert_eq!(alphas.len(), 2);
        let expected = [0.02226, 0.71974, 0.258];
        for (a, e) in alphas[1].as_slice().iter().zip(expected) {
            assert!((a - e).abs() < 1e-12);
        }
        let acc = c.acceptance(&[P1, P2]).unwrap();
        assert!((acc - 0.742).abs() < 1e-12);
    }

    #[test]
    fn empty_sequence() {
        let c = validate_and_compile(&driving_sfa()).unwrap();
        let none: [[f64; 3]; 0] = [];
        assert!(c.forward(&none).unwrap().is_empty());
        assert_eq!(c.acceptance(&none).unwrap(), 1.0);
        assert!(c.forward_backward_grad(&none, &none).unwrap().is_empty());
    }

    #[test]
    fn matrix_gradient_matches_guard_gradient() {
        let c = validate_and_compile(&driving_sfa()).unwrap();
        let t = c.transition_matrix(P1, true).unwrap();
        let g = t.entry_gradient(1, 1).unwrap();
        let expected = [0.7 * 0.4, 0.2 * 0.4, -(1.0 - 0.2 * 0.7)];
        for (a, b) in g.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(t.entry_gradient(2, 2).unwrap(), &[0.0, 0.0, 0.0]);
        assert!(c.transition_matrix(P1, false).unwrap().entry_gradient(0, 0).is_none());
    }

    #[test]
    fn single_step_gradient_reduces_to_guard_gradient() {
        let vocab = driving_sfa().vocab().clone();
        let src = driving_sfa();
        let sfa = super::super::Sfa::new(
            vocab,
            src.states().to_vec(),
            0,
            &[1],
            src.transitions().to_vec(),
        )
        .unwrap();
        let c = validate_and_compile(&sfa).unwrap();
        let upstream = [[0.0, 1.0, 0.0]];
        let grads = c.forward_backward_grad(&[P1], &upstream).unwrap();
        let guard = c.transition_matrix(P1, true).unwrap();
        let expected = guard.entry_gradient(0, 1).unwrap();
        for (a, b) in grads[0].iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let c = validate_and_compile(&driving_sfa()).unwrap();
        let zeros = [[0.0; 3]; 2];
        let grads = c.forward_backward_grad(&[P1, P2], &zeros).unwrap();
        assert!(grads.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn batch_matches_single_sequences() {
        let c = validate_and_compile(&driving_sfa()).unwrap();
        let batch: Vec<Vec<[f64; 3]>> = vec![vec![P1, P2], vec![P2], vec![], vec![P2, P1], vec![P1, P1, P2]];
        let got = c.acceptance_batch(&batch).unwrap();
        for (seq, g) in batch.iter().zip(got) {
            assert_eq!(g, c.acceptance(seq).unwrap());
        }
        assert!((c.acceptance_batch(&[[P1, P2]]).unwrap()[0] - 0.742).abs() < 1e-12);
        assert!(matches!(
            c.acceptance_batch(&[vec![P1], vec![[0.5, 2.0, 0.5]]]),
            Err(SfaError::InvalidProbability { step: 0, index: 1, .. })
        ));
    }

    #[test]
    fn rejects_bad_dimensions() {
        let c = validate_and_compile(&driving_sfa()).unwrap();
        assert!(matches!(
            c.forward(&[[0.5, 0.5]]),
            Err(SfaError::DimensionMismatch { expected: 3, found: 2 })
        ));
        assert!(matches!(
            c.acceptance(&[[0.5, 1.5, 0.5]]),
            Err(SfaError::InvalidProbability { step: 0, index: 1, .. })
        ));
        assert!(c.forward_backward_grad(&[P1], &[[0.0; 2]]).is_err());
        assert!(c.forward_backward_grad(&[P1], &[[0.0; 3]; 2]).is_err());
    }
}
