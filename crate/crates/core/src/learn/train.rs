use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{argmax, loss_for, Extractor, Label, LabeledSequence, LearnError, LinearExtractor, Result, StateLabels};
use crate::bench::metrics::metrics_with_classes;
use crate::sfa::CompiledSfa;

/// Half-width of the uniform weight initialisation.
pub const INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

impl std::str::FromStr for Optimizer {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(format!("unknown optimizer `{other}` (expected sgd or adam)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a new best training loss before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            optimizer: Optimizer::Adam,
            batch_size: 16,
            max_epochs: 100,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(LearnError::InvalidConfig(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(LearnError::InvalidConfig("batch size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(LearnError::InvalidConfig("patience must be at least 1".into()));
        }
        Ok(())
    }
}

/// What the extractor is trained against.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    /// Binary cross-entropy on the acceptance probability.
    Acceptance,
    /// Per-step cross-entropy on the state-label distribution.
    Tagging(StateLabels),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss after the epoch's updates.
    pub loss: f64,
    /// Sequence accuracy (acceptance) or per-step macro-F1 (tagging).
    pub metric: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest training loss.
    pub extractor: LinearExtractor,
    pub trace: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainOutcome {
    /// `epoch,loss,metric` rows with a header.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("epoch,loss,metric\n");
        for r in &self.trace {
            out.push_str(&format!("{},{},{}\n", r.epoch, r.loss, r.metric));
        }
        out
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for (((w, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            *w -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        }
    }
}

/// Trains a fresh [`LinearExtractor`] initialised from `cfg.seed`.
pub fn train(
    c: &CompiledSfa,
    data: &[LabeledSequence],
    cfg: &TrainConfig,
    objective: &Objective,
) -> Result<TrainOutcome> {
    let dim = data
        .iter()
        .find_map(|s| s.observations.first().map(Vec::len))
        .ok_or(LearnError::EmptyDataset)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = LinearExtractor::random(c.n_vars(), dim, INIT_SCALE, &mut rng);
    train_with_rng(c, data, cfg, objective, init, rng)
}

/// Trains starting from `init`; `cfg.seed` drives the batch order.
pub fn train_from(
    c: &CompiledSfa,
    data: &[LabeledSequence],
    cfg: &TrainConfig,
    objective: &Objective,
    init: LinearExtractor,
) -> Result<TrainOutcome> {
    let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    train_with_rng(c, data, cfg, objective, init, rng)
}

fn train_with_rng(
    c: &CompiledSfa,
    data: &[LabeledSequence],
    cfg: &TrainConfig,
    objective: &Objective,
    init: LinearExtractor,
    mut rng: ChaCha8Rng,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    if let Some(bad) = data
        .iter()
        .flat_map(|s| &s.observations)
        .find(|o| o.len() != init.input_dim())
    {
        return Err(LearnError::DimensionMismatch {
            expected: init.input_dim(),
            found: bad.len(),
        });
    }

    let mut f = init;
    let n_params = f.n_params();
    let mut adam = Adam::new(n_params);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::new();
    let mut best = (f64::INFINITY, f.clone(), 0usize);
    let mut stale = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = vec![0.0; n_params];
            for &i in batch {
                let out = loss_for(c, &f, &data[i], objective)?;
                if !out.loss.is_finite() || out.grad.iter().any(|g| !g.is_finite()) {
                    return Err(LearnError::Divergence { epoch, loss: out.loss });
                }
                for (a, g) in grad.iter_mut().zip(&out.grad) {
                    *a += g;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            match cfg.optimizer {
                Optimizer::Sgd => {
                    for (w, g) in f.params_mut().iter_mut().zip(&grad) {
                        *w -= cfg.learning_rate * g;
                    }
                }
                Optimizer::Adam => adam.step(f.params_mut(), &grad, cfg.learning_rate),
            }
        }

        let (loss, metric) = evaluate(c, &f, data, objective)?;
        if !loss.is_finite() {
            return Err(LearnError::Divergence { epoch, loss });
        }
        trace.push(EpochRecord { epoch, loss, metric });
        if loss < best.0 {
            best = (loss, f.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        extractor: best.1,
        trace,
        best_epoch: best.2,
    })
}

/// Mean loss over `data` with accuracy (acceptance) or macro-F1 (tagging).
pub fn evaluate(
    c: &CompiledSfa,
    f: &LinearExtractor,
    data: &[LabeledSequence],
    objective: &Objective,
) -> Result<(f64, f64)> {
    let mut total = 0.0;
    let mut predictions = Vec::new();
    let mut truth = Vec::new();
    for s in data {
        total += loss_for(c, f, s, objective)?.loss;
        match (&s.label, objective) {
            (Label::Binary(l), _) => {
                let p = super::predict_acceptance(c, f, &s.observations)?;
                predictions.push((p > 0.5) as usize);
                truth.push(*l as usize);
            }
            (Label::Tags(tags), Objective::Tagging(labels)) => {
                let ps = s
                    .observations
                    .iter()
                    .map(|o| f.extract(o))
                    .collect::<Result<Vec<_>>>()?;
                for (alpha, tag) in c.forward(&ps)?.iter().zip(tags) {
                    if let Some(tag) = tag {
                        predictions.push(argmax(&labels.label_mass(alpha.as_slice())));
                        truth.push(*tag);
                    }
                }
            }
            (Label::Tags(_), Objective::Acceptance) => unreachable!("rejected by loss_for"),
        }
    }
    let metric = match objective {
        _ if truth.is_empty() => 0.0,
        Objective::Acceptance => metrics_with_classes(&predictions, &truth, 2)
            .expect("labels are binary")
            .accuracy,
        Objective::Tagging(labels) => metrics_with_classes(&predictions, &truth, labels.n_labels())
            .expect("labels validated by loss_for")
            .macro_f1,
    };
    Ok((total / data.len() as f64, metric))
}
