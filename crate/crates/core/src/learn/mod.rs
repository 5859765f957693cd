//! Differentiable symbol extraction and the losses used to train it.
//!
//! An [`Extractor`] maps each observation to a probability per symbol. The
//! losses run those probabilities through the automaton's forward recursion
//! and return exact parameter gradients by chaining the reverse sweep of the
//! recursion with the extractor's own backward pass.

mod checkpoint;
mod train;

use rand::Rng;
use thiserror::Error;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{evaluate, train, train_from, EpochRecord, Objective, Optimizer, TrainConfig, TrainOutcome};

use crate::sfa::{CompiledSfa, SfaError};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LearnError {
    #[error(transparent)]
    Sfa(#[from] SfaError),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite feature at step {step}")]
    NonFiniteFeature { step: usize },
    #[error("label {label} out of range for {n_labels} labels")]
    LabelOutOfRange { label: usize, n_labels: usize },
    #[error("state labelling does not cover label {0}")]
    UncoveredLabel(usize),
    #[error("expected {expected} labels, found {found}")]
    WrongLabelKind { expected: &'static str, found: &'static str },
    #[error("training data is empty")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, LearnError>;

/// An observation `o_t ∈ ℝ^m`.
pub type FeatureVector = Vec<f64>;

/// A differentiable map from observations to per-symbol probabilities with a
/// flat parameter vector.
pub trait Extractor {
    fn n_symbols(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    /// Writes `p = f(o)` into `out` (length `n_symbols`).
    fn extract_into(&self, o: &[f64], out: &mut [f64]);

    /// Adds `(∂p/∂θ)ᵀ · grad_p` into `grad_params`, where `p` is the output
    /// previously computed for `o`.
    fn backward(&self, o: &[f64], p: &[f64], grad_p: &[f64], grad_params: &mut [f64]);

    fn n_params(&self) -> usize {
        self.params().len()
    }

    fn extract(&self, o: &[f64]) -> Result<Vec<f64>> {
        if o.len() != self.input_dim() {
            return Err(LearnError::DimensionMismatch {
                expected: self.input_dim(),
                found: o.len(),
            });
        }
        let mut p = vec![0.0; self.n_symbols()];
        self.extract_into(o, &mut p);
        Ok(p)
    }
}

/// Independent logistic unit per symbol: `p_i = σ(W_i · o + b_i)`.
///
/// Parameters are stored as the row-major `|V|×m` weight matrix followed by
/// the `|V|` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearExtractor {
    n_symbols: usize,
    input_dim: usize,
    params: Vec<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl LinearExtractor {
    pub fn zeros(n_symbols: usize, input_dim: usize) -> Self {
        LinearExtractor {
            n_symbols,
            input_dim,
            params: vec![0.0; n_symbols * (input_dim + 1)],
        }
    }

    pub fn from_parts(n_symbols: usize, input_dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != n_symbols * input_dim {
            return Err(LearnError::DimensionMismatch {
                expected: n_symbols * input_dim,
                found: weights.len(),
            });
        }
        if bias.len() != n_symbols {
            return Err(LearnError::DimensionMismatch {
                expected: n_symbols,
                found: bias.len(),
            });
        }
        let mut params = weights;
        params.extend(bias);
        Ok(LinearExtractor {
            n_symbols,
            input_dim,
            params,
        })
    }

    /// Weights and biases drawn uniformly from `[-scale, scale]`.
    pub fn random<R: Rng>(n_symbols: usize, input_dim: usize, scale: f64, rng: &mut R) -> Self {
        let mut e = Self::zeros(n_symbols, input_dim);
        for w in &mut e.params {
            *w = rng.random_range(-scale..=scale);
        }
        e
    }

    pub fn weights(&self) -> &[f64] {
        &self.params[..self.n_symbols * self.input_dim]
    }

    pub fn bias(&self) -> &[f64] {
        &self.params[self.n_symbols * self.input_dim..]
    }

    pub fn weight(&self, symbol: usize, feature: usize) -> f64 {
        self.params[symbol * self.input_dim + feature]
    }

    pub fn set_weight(&mut self, symbol: usize, feature: usize, value: f64) {
        self.params[symbol * self.input_dim + feature] = value;
    }

    pub fn set_bias(&mut self, symbol: usize, value: f64) {
        let k = self.n_symbols * self.input_dim + symbol;
        self.params[k] = value;
    }

    /// `∂p/∂θ` as a dense `|V| × n_params` matrix.
    pub fn jacobian(&self, o: &[f64]) -> Result<Vec<Vec<f64>>> {
        let p = self.extract(o)?;
        Ok((0..self.n_symbols)
            .map(|i| {
                let mut row = vec![0.0; self.params.len()];
                let mut unit = vec![0.0; self.n_symbols];
                unit[i] = 1.0;
                self.backward(o, &p, &unit, &mut row);
                row
            })
            .collect())
    }
}

impl Extractor for LinearExtractor {
    fn n_symbols(&self) -> usize {
        self.n_symbols
    }

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn extract_into(&self, o: &[f64], out: &mut [f64]) {
        let m = self.input_dim;
        let (weights, bias) = self.params.split_at(self.n_symbols * m);
        for (i, slot) in out.iter_mut().enumerate() {
            let z: f64 = weights[i * m..(i + 1) * m].iter().zip(o).map(|(w, x)| w * x).sum();
            *slot = sigmoid(z + bias[i]);
        }
    }

    fn backward(&self, o: &[f64], p: &[f64], grad_p: &[f64], grad_params: &mut [f64]) {
        let m = self.input_dim;
        let (gw, gb) = grad_params.split_at_mut(self.n_symbols * m);
        for i in 0..self.n_symbols {
            let dz = grad_p[i] * p[i] * (1.0 - p[i]);
            if dz == 0.0 {
                continue;
            }
            for (g, x) in gw[i * m..(i + 1) * m].iter_mut().zip(o) {
                *g += dz * x;
            }
            gb[i] += dz;
        }
    }
}

/// Supervision attached to a sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum Label {
    /// Whether the sequence is accepted.
    Binary(bool),
    /// Per-step label index; `None` leaves a step unsupervised.
    Tags(Vec<Option<usize>>),
}

impl Label {
    fn kind(&self) -> &'static str {
        match self {
            Label::Binary(_) => "binary",
            Label::Tags(_) => "per-step",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub observations: Vec<FeatureVector>,
    pub label: Label,
}

impl LabeledSequence {
    pub fn new(observations: Vec<FeatureVector>, label: Label) -> Result<Self> {
        if let Some(dim) = observations.first().map(Vec::len) {
            if let Some(bad) = observations.iter().find(|o| o.len() != dim) {
                return Err(LearnError::DimensionMismatch {
                    expected: dim,
                    found: bad.len(),
                });
            }
        }
        if let Some(step) = observations.iter().position(|o| o.iter().any(|x| !x.is_finite())) {
            return Err(LearnError::NonFiniteFeature { step });
        }
        if let Label::Tags(tags) = &label {
            if tags.len() != observations.len() {
                return Err(LearnError::DimensionMismatch {
                    expected: observations.len(),
                    found: tags.len(),
                });
            }
        }
        Ok(LabeledSequence { observations, label })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// Assignment of a label to every automaton state, covering `0..n_labels`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateLabels {
    labels: Vec<usize>,
    n_labels: usize,
}

impl StateLabels {
    pub fn new(labels: Vec<usize>, n_labels: usize) -> Result<Self> {
        if let Some(&label) = labels.iter().find(|&&l| l >= n_labels) {
            return Err(LearnError::LabelOutOfRange { label, n_labels });
        }
        if let Some(missing) = (0..n_labels).find(|l| !labels.contains(l)) {
            return Err(LearnError::UncoveredLabel(missing));
        }
        Ok(StateLabels { labels, n_labels })
    }

    /// Each state is its own label.
    pub fn identity(n_states: usize) -> Self {
        StateLabels {
            labels: (0..n_states).collect(),
            n_labels: n_states,
        }
    }

    /// Label 1 for accepting states, 0 otherwise.
    pub fn accepting(c: &CompiledSfa) -> Result<Self> {
        let sfa = c.sfa();
        Self::new((0..sfa.n_states()).map(|q| sfa.is_accepting(q) as usize).collect(), 2)
    }

    pub fn label_of(&self, state: usize) -> usize {
        self.labels[state]
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn n_states(&self) -> usize {
        self.labels.len()
    }

    /// Probability mass of each label under the state distribution `alpha`.
    pub fn label_mass(&self, alpha: &[f64]) -> Vec<f64> {
        let mut mass = vec![0.0; self.n_labels];
        for (q, &a) in alpha.iter().enumerate() {
            mass[self.labels[q]] += a;
        }
        mass
    }
}

/// Loss value with `∂loss/∂θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: Vec<f64>,
}

fn clamp_prob(p: f64) -> (f64, bool) {
    if p < PROB_EPS {
        (PROB_EPS, true)
    } else if p > 1.0 - PROB_EPS {
        (1.0 - PROB_EPS, true)
    } else {
        (p, false)
    }
}

fn extract_all<E: Extractor + ?Sized>(f: &E, c: &CompiledSfa, obs: &[FeatureVector]) -> Result<Vec<Vec<f64>>> {
    if f.n_symbols() != c.n_vars() {
        return Err(LearnError::DimensionMismatch {
            expected: c.n_vars(),
            found: f.n_symbols(),
        });
    }
    obs.iter().map(|o| f.extract(o)).collect()
}

fn chain_extractor<E: Extractor + ?Sized>(
    f: &E,
    obs: &[FeatureVector],
    ps: &[Vec<f64>],
    grads_p: &[Vec<f64>],
) -> Vec<f64> {
    let mut grad = vec![0.0; f.n_params()];
    for ((o, p), gp) in obs.iter().zip(ps).zip(grads_p) {
        f.backward(o, p, gp, &mut grad);
    }
    grad
}

/// Acceptance probability of the observation sequence.
pub fn predict_acceptance<E: Extractor + ?Sized>(c: &CompiledSfa, f: &E, obs: &[FeatureVector]) -> Result<f64> {
    let ps = extract_all(f, c, obs)?;
    Ok(c.acceptance(&ps)?)
}

/// Most probable label at every step.
pub fn predict_tags<E: Extractor + ?Sized>(
    c: &CompiledSfa,
    f: &E,
    obs: &[FeatureVector],
    labels: &StateLabels,
) -> Result<Vec<usize>> {
    check_labels(c, labels)?;
    let ps = extract_all(f, c, obs)?;
    Ok(c
        .forward(&ps)?
        .iter()
        .map(|alpha| argmax(&labels.label_mass(alpha.as_slice())))
        .collect())
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Binary cross-entropy between the acceptance probability and `label`.
pub fn sequence_loss<E: Extractor + ?Sized>(
    c: &CompiledSfa,
    f: &E,
    obs: &[FeatureVector],
    label: bool,
) -> Result<LossOutput> {
    let ps = extract_all(f, c, obs)?;
    let tape = c.forward_tape(&ps)?;
    let n = c.n_states();
    // The label's own mass; for `false` this sums the rejecting states rather
    // than forming 1 - P_accept, which loses precision near 1.
    let sfa = c.sfa();
    let target: Vec<usize> = (0..n).filter(|&q| sfa.is_accepting(q) == label).collect();
    let alpha = tape.alpha(tape.steps, n);
    let (pc, clamped) = clamp_prob(target.iter().map(|&q| alpha[q]).sum());
    let loss = -pc.ln();
    if clamped || tape.steps == 0 {
        return Ok(LossOutput {
            loss,
            grad: vec![0.0; f.n_params()],
        });
    }
    let last = tape.steps;
    let grads_p = c.backward_tape(&tape, &ps, |t, adj| {
        if t == last {
            for &q in &target {
                adj[q] -= 1.0 / pc;
            }
        }
    });
    Ok(LossOutput {
        loss,
        grad: chain_extractor(f, obs, &ps, &grads_p),
    })
}

fn check_labels(c: &CompiledSfa, labels: &StateLabels) -> Result<()> {
    if labels.n_states() != c.n_states() {
        return Err(LearnError::DimensionMismatch {
            expected: c.n_states(),
            found: labels.n_states(),
        });
    }
    Ok(())
}

/// `-Σ_t log P(label_t)` where `P(label_t)` sums `α_t` over the states carrying
/// that label. Steps labelled `None` contribute nothing.
pub fn tagging_loss<E: Extractor + ?Sized>(
    c: &CompiledSfa,
    f: &E,
    obs: &[FeatureVector],
    tags: &[Option<usize>],
    labels: &StateLabels,
) -> Result<LossOutput> {
    check_labels(c, labels)?;
    if tags.len() != obs.len() {
        return Err(LearnError::DimensionMismatch {
            expected: obs.len(),
            found: tags.len(),
        });
    }
    if let Some(&label) = tags.iter().flatten().find(|&&l| l >= labels.n_labels()) {
        return Err(LearnError::LabelOutOfRange {
            label,
            n_labels: labels.n_labels(),
        });
    }
    let ps = extract_all(f, c, obs)?;
    let tape = c.forward_tape(&ps)?;
    let n = c.n_states();
    let mut loss = 0.0;
    // ∂loss/∂(label mass) per step, 0 where clamped or unlabelled
    let mut d_mass = vec![0.0; tape.steps];
    for (t, tag) in tags.iter().enumerate() {
        let Some(label) = *tag else { continue };
        let alpha = tape.alpha(t + 1, n);
        let mass: f64 = (0..n).filter(|&q| labels.label_of(q) == label).map(|q| alpha[q]).sum();
        let (pc, clamped) = clamp_prob(mass);
        loss -= pc.ln();
        if !clamped {
            d_mass[t] = -1.0 / pc;
        }
    }
    let grads_p = c.backward_tape(&tape, &ps, |t, adj| {
        if let (Some(label), d) = (tags[t - 1], d_mass[t - 1]) {
            if d != 0.0 {
                for (q, a) in adj.iter_mut().enumerate() {
                    if labels.label_of(q) == label {
                        *a += d;
                    }
                }
            }
        }
    });
    Ok(LossOutput {
        loss,
        grad: chain_extractor(f, obs, &ps, &grads_p),
    })
}

/// Loss for one labelled sequence under `objective`.
pub fn loss_for<E: Extractor + ?Sized>(
    c: &CompiledSfa,
    f: &E,
    s: &LabeledSequence,
    objective: &Objective,
) -> Result<LossOutput> {
    match (objective, &s.label) {
        (Objective::Acceptance, Label::Binary(l)) => sequence_loss(c, f, &s.observations, *l),
        (Objective::Tagging(labels), Label::Tags(tags)) => tagging_loss(c, f, &s.observations, tags, labels),
        (Objective::Acceptance, other) => Err(LearnError::WrongLabelKind {
            expected: "binary",
            found: other.kind(),
        }),
        (Objective::Tagging(_), other) => Err(LearnError::WrongLabelKind {
            expected: "per-step",
            found: other.kind(),
        }),
    }
}
