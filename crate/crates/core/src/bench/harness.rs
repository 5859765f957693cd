//! Wall-clock comparison of the compiled and enumerative engines.

use std::fmt;
use std::hint::black_box;
use std::str::FromStr;
use std::time::Instant;

use super::{builtin_pattern, enumerative_acceptance, generate_dataset, GenParams, RecordLabel, Result};
use crate::learn::{Extractor, LinearExtractor};
use crate::sfa::validate_and_compile;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Compiled,
    Enumerative,
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Compiled => "compiled",
            Engine::Enumerative => "enumerative",
        })
    }
}

impl FromStr for Engine {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "compiled" => Ok(Engine::Compiled),
            "enumerative" => Ok(Engine::Enumerative),
            other => Err(format!("unknown engine `{other}` (expected compiled or enumerative)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub patterns: Vec<usize>,
    pub lengths: Vec<usize>,
    pub engines: Vec<Engine>,
    pub batch_size: usize,
    pub repetitions: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            patterns: vec![1, 2, 3],
            lengths: vec![10, 20, 30],
            engines: vec![Engine::Compiled, Engine::Enumerative],
            batch_size: 16,
            repetitions: 21,
            sigma: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub pattern: usize,
    pub states: usize,
    pub symbols: usize,
    pub length: usize,
    pub engine: Engine,
    pub batch_ms_median: f64,
    pub accuracy: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Largest absolute difference between the engines' acceptance outputs
    /// on any sequence where both ran.
    pub max_engine_gap: f64,
}

impl BenchReport {
    pub const CSV_HEADER: &'static str = "pattern,states,symbols,length,engine,batch_ms_median,accuracy,seed";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{:.6},{:.4},{}\n",
                r.pattern, r.states, r.symbols, r.length, r.engine, r.batch_ms_median, r.accuracy, r.seed
            ));
        }
        out
    }

    pub fn row(&self, pattern: usize, length: usize, engine: Engine) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.pattern == pattern && r.length == length && r.engine == engine)
    }
}

/// Extractor that reads each symbol from its feature pair with gain 2, the
/// stand-in for a well-trained perception model.
pub fn reference_extractor(n_symbols: usize) -> LinearExtractor {
    let mut f = LinearExtractor::zeros(n_symbols, 2 * n_symbols);
    for i in 0..n_symbols {
        f.set_weight(i, 2 * i, 2.0);
        f.set_weight(i, 2 * i + 1, -2.0);
    }
    f
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Times acceptance inference for one batch per (pattern, length, engine).
/// Compilation happens once per pattern outside the timed region and the
/// compiled engine evaluates the batch in lockstep; the enumerative engine
/// propositionalizes inside the timed region, once per sequence.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchReport> {
    let mut report = BenchReport::default();
    for &index in &cfg.patterns {
        let pat = builtin_pattern(index)?;
        let compiled = validate_and_compile(&pat.sfa)?;
        let extractor = reference_extractor(pat.n_symbols());
        for &length in &cfg.lengths {
            let n_pos = cfg.batch_size.div_ceil(2);
            let ds = generate_dataset(
                &pat,
                GenParams {
                    length,
                    n_pos,
                    n_neg: cfg.batch_size - n_pos,
                    sigma: cfg.sigma,
                    seed: cfg.seed,
                },
            )?;
            let batch: Vec<Vec<Vec<f64>>> = ds
                .records
                .iter()
                .map(|r| r.features.iter().map(|o| extractor.extract(o).expect("feature width")).collect())
                .collect();
            let labels: Vec<bool> = ds.records.iter().map(|r| r.label == RecordLabel::Binary(1)).collect();

            let mut outputs: Vec<Vec<f64>> = Vec::new();
            for &engine in &cfg.engines {
                let run = || -> Result<Vec<f64>> {
                    match engine {
                        Engine::Compiled => Ok(compiled.acceptance_batch(black_box(&batch))?),
                        Engine::Enumerative => batch
                            .iter()
                            .map(|ps| enumerative_acceptance(&pat.sfa, black_box(ps)))
                            .collect(),
                    }
                };
                let out = run()?;
                let mut times = Vec::with_capacity(cfg.repetitions);
                for _ in 0..cfg.repetitions.max(1) {
                    let start = Instant::now();
                    black_box(run()?);
                    times.push(start.elapsed().as_secs_f64() * 1e3);
                }
                let correct = out.iter().zip(&labels).filter(|(&p, &l)| (p > 0.5) == l).count();
                report.rows.push(BenchRow {
                    pattern: index,
                    states: pat.n_states(),
                    symbols: pat.n_symbols(),
                    length,
                    engine,
                    batch_ms_median: median(times),
                    accuracy: correct as f64 / labels.len().max(1) as f64,
                    seed: cfg.seed,
                });
                outputs.push(out);
            }
            for pair in outputs.windows(2) {
                for (a, b) in pair[0].iter().zip(&pair[1]) {
                    report.max_engine_gap = report.max_engine_gap.max((a - b).abs());
                }
            }
        }
    }
    Ok(report)
}
