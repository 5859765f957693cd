//! Synthetic sequence datasets.
//!
//! Clean traces are sampled uniformly among the accepted (or rejected) traces
//! of a given length: suffix counts are computed backwards over the
//! propositionalized automaton and each step picks an interpretation with
//! probability proportional to the number of completions it leaves. Each
//! interpretation is then rendered as two features per symbol, `(+1, -1)` for
//! true and `(-1, +1)` for false, plus Gaussian noise.

use std::fmt;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{BenchError, PatternSpec, Propositionalized, Result};
use crate::learn::{Label, LabeledSequence};
use crate::logic::{Interpretation, Trace};
use crate::sfa::Sfa;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceClass {
    Accepted,
    Rejected,
}

impl fmt::Display for TraceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TraceClass::Accepted => "accepted",
            TraceClass::Rejected => "rejected",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenParams {
    pub length: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    pub sigma: f64,
    pub seed: u64,
}

/// Sequence-level or per-step label as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RecordLabel {
    Binary(u8),
    Tags(Vec<Option<usize>>),
}

/// One JSON-lines record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub features: Vec<Vec<f64>>,
    pub label: RecordLabel,
    #[serde(default)]
    pub clean_trace: Vec<Vec<bool>>,
}

impl DatasetRecord {
    pub fn to_sequence(&self) -> Result<LabeledSequence> {
        let label = match &self.label {
            RecordLabel::Binary(0) => Label::Binary(false),
            RecordLabel::Binary(1) => Label::Binary(true),
            RecordLabel::Binary(other) => {
                return Err(BenchError::Dataset(format!("binary label must be 0 or 1, got {other}")))
            }
            RecordLabel::Tags(tags) => Label::Tags(tags.clone()),
        };
        LabeledSequence::new(self.features.clone(), label).map_err(|e| BenchError::Dataset(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub records: Vec<DatasetRecord>,
    pub params: GenParams,
}

impl SyntheticDataset {
    pub fn sequences(&self) -> Result<Vec<LabeledSequence>> {
        self.records.iter().map(DatasetRecord::to_sequence).collect()
    }
}

/// Number of length-`k` suffixes ending in an accepting / rejecting state,
/// indexed `[t][q]` with `k = length - t`. Stored as `f64` weights.
pub(crate) struct SuffixCounts {
    pub accepted: Vec<Vec<f64>>,
    pub rejected: Vec<Vec<f64>>,
}

pub(crate) fn suffix_counts(sfa: &Sfa, table: &Propositionalized, length: usize) -> SuffixCounts {
    let n = sfa.n_states();
    let mut accepted = vec![vec![0.0; n]; length + 1];
    let mut rejected = vec![vec![0.0; n]; length + 1];
    for q in 0..n {
        accepted[length][q] = sfa.is_accepting(q) as u8 as f64;
        rejected[length][q] = (!sfa.is_accepting(q)) as u8 as f64;
    }
    for t in (0..length).rev() {
        for q in 0..n {
            let (mut a, mut r) = (0.0, 0.0);
            for &to in table.successors(q) {
                a += accepted[t + 1][to];
                r += rejected[t + 1][to];
            }
            accepted[t][q] = a;
            rejected[t][q] = r;
        }
    }
    SuffixCounts { accepted, rejected }
}

/// Draws a trace of `length` uniformly among those of the given class.
pub fn sample_trace<R: Rng>(
    sfa: &Sfa,
    table: &Propositionalized,
    length: usize,
    class: TraceClass,
    rng: &mut R,
) -> Result<Trace> {
    let counts = suffix_counts(sfa, table, length);
    sample_with_counts(sfa, table, &counts, length, class, rng)
}

fn sample_with_counts<R: Rng>(
    sfa: &Sfa,
    table: &Propositionalized,
    counts: &SuffixCounts,
    length: usize,
    class: TraceClass,
    rng: &mut R,
) -> Result<Trace> {
    let weights = match class {
        TraceClass::Accepted => &counts.accepted,
        TraceClass::Rejected => &counts.rejected,
    };
    if weights[0][sfa.initial()] <= 0.0 {
        return Err(BenchError::UnsatisfiablePattern(class));
    }
    let n_vars = sfa.vocab().len();
    let mut q = sfa.initial();
    let mut steps = Vec::with_capacity(length);
    for t in 0..length {
        let succ = table.successors(q);
        let total: f64 = succ.iter().map(|&to| weights[t + 1][to]).sum();
        let mut pick = rng.random::<f64>() * total;
        let mut chosen = None;
        for (bits, &to) in succ.iter().enumerate() {
            let w = weights[t + 1][to];
            if w <= 0.0 {
                continue;
            }
            chosen = Some(bits);
            if pick < w {
                break;
            }
            pick -= w;
        }
        let bits = chosen.expect("positive total weight has a positive entry");
        steps.push(Interpretation::from_bits(bits as u64, n_vars));
        q = succ[bits];
    }
    Ok(Trace::new(steps).expect("uniform width"))
}

/// Two noisy features per symbol for each interpretation of `trace`.
pub fn render_features<R: Rng>(trace: &Trace, sigma: f64, rng: &mut R) -> Vec<Vec<f64>> {
    let noise = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    trace
        .steps()
        .iter()
        .map(|omega| {
            let mut x = Vec::with_capacity(2 * omega.len());
            for i in 0..omega.len() {
                let s = if omega.get(i) { 1.0 } else { -1.0 };
                x.push(s + noise.sample(rng));
                x.push(-s + noise.sample(rng));
            }
            x
        })
        .collect()
}

/// `n_pos` accepted and `n_neg` rejected sequences of `length`, positives
/// first.
pub fn generate_dataset(pat: &PatternSpec, params: GenParams) -> Result<SyntheticDataset> {
    let sfa = &pat.sfa;
    let table = Propositionalized::new(sfa)?;
    let counts = suffix_counts(sfa, &table, params.length);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut records = Vec::with_capacity(params.n_pos + params.n_neg);
    for (class, count, label) in [
        (TraceClass::Accepted, params.n_pos, 1),
        (TraceClass::Rejected, params.n_neg, 0),
    ] {
        if count == 0 {
            continue;
        }
        for _ in 0..count {
            let trace = sample_with_counts(sfa, &table, &counts, params.length, class, &mut rng)?;
            records.push(DatasetRecord {
                features: render_features(&trace, params.sigma, &mut rng),
                label: RecordLabel::Binary(label),
                clean_trace: trace.steps().iter().map(Interpretation::to_bools).collect(),
            });
        }
    }
    Ok(SyntheticDataset { records, params })
}

/// `n` sequences with uniformly random interpretations, labelled per step
/// with the state the automaton is in after that step.
pub fn generate_tagged_dataset(pat: &PatternSpec, length: usize, n: usize, sigma: f64, seed: u64) -> Result<SyntheticDataset> {
    let sfa = &pat.sfa;
    let n_vars = sfa.vocab().len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let steps: Vec<Interpretation> = (0..length)
            .map(|_| Interpretation::from_bits(rng.random::<u64>(), n_vars))
            .collect();
        let trace = Trace::new(steps).expect("uniform width");
        let mut q = sfa.initial();
        let tags = trace
            .steps()
            .iter()
            .map(|omega| {
                q = sfa.step(q, omega.bits());
                Some(q)
            })
            .collect();
        records.push(DatasetRecord {
            features: render_features(&trace, sigma, &mut rng),
            label: RecordLabel::Tags(tags),
            clean_trace: trace.steps().iter().map(Interpretation::to_bools).collect(),
        });
    }
    Ok(SyntheticDataset {
        records,
        params: GenParams {
            length,
            n_pos: 0,
            n_neg: 0,
            sigma,
            seed,
        },
    })
}

pub fn write_jsonl<W: Write>(records: &[DatasetRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads records, skipping blank lines. Errors carry the 1-based line.
pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<DatasetRecord>> {
    let mut out = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line = line.map_err(|e| BenchError::Dataset(format!("line {}: {e}", k + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| BenchError::Dataset(format!("line {}: {e}", k + 1)))?;
        out.push(rec);
    }
    Ok(out)
}
