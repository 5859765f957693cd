//! Command-line front end. [`run`] parses arguments, executes one subcommand
//! and returns the process exit code: 0 on success, 1 for domain errors
//! (invalid automaton, divergence, dimension mismatch) and 2 for usage, I/O
//! and parse errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::bench::{
    builtin_pattern, generate_dataset, generate_tagged_dataset, read_jsonl, run_benchmark, write_jsonl,
    BenchConfig, BenchError, Engine, GenParams, PatternSpec,
};
use crate::learn::{
    evaluate, load_checkpoint, save_checkpoint, train, Extractor, LabeledSequence, LearnError, Objective,
    Optimizer, StateLabels, TrainConfig,
};
use crate::sfa::{parse_sfa, validate_and_compile_with, CompiledSfa, Completion, Sfa, SfaError};

/// Keys accepted in a `--config` file.
pub const CONFIG_KEYS: &[&str] = &[
    "learning_rate",
    "optimizer",
    "batch_size",
    "max_epochs",
    "patience",
    "seed",
    "objective",
    "pattern",
    "length",
    "n_pos",
    "n_neg",
    "n",
    "sigma",
    "patterns",
    "lengths",
    "engines",
    "repetitions",
];

#[derive(Debug)]
enum CliError {
    /// Exit code 1.
    Domain(String),
    /// Exit code 2.
    Usage(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Usage(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Domain(m) | CliError::Usage(m) => m,
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn io_err(path: &Path, e: impl Display) -> CliError {
    CliError::Usage(format!("{}: {e}", path.display()))
}

impl From<SfaError> for CliError {
    fn from(e: SfaError) -> Self {
        match e {
            SfaError::Parse { .. } => CliError::Usage(e.to_string()),
            other => CliError::Domain(other.to_string()),
        }
    }
}

impl From<LearnError> for CliError {
    fn from(e: LearnError) -> Self {
        match e {
            LearnError::Sfa(inner) => inner.into(),
            LearnError::Checkpoint(m) => CliError::Usage(m),
            LearnError::InvalidConfig(m) => CliError::Usage(m),
            other => CliError::Domain(other.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Sfa(inner) => inner.into(),
            BenchError::Dataset(m) => CliError::Usage(m),
            BenchError::UnknownPattern(_) => CliError::Usage(e.to_string()),
            other => CliError::Domain(other.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "nesya", version, about = "Symbolic automata with compiled guards for neurosymbolic sequence inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check determinism and completeness of an automaton.
    Validate {
        sfa: PathBuf,
        /// Report incompleteness as an error instead of adding self-loops.
        #[arg(long)]
        strict: bool,
    },
    /// Print the compiled circuit of every transition guard.
    Compile { sfa: PathBuf },
    /// Acceptance probabilities or per-step state distributions as CSV.
    Infer {
        sfa: PathBuf,
        /// JSON-lines dataset; only `features` is read.
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Accept)]
        mode: Mode,
        /// Extractor checkpoint. Without it, features are symbol probabilities.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a linear extractor; prints the per-epoch loss CSV.
    Train(TrainArgs),
    /// Sample a synthetic dataset as JSON lines.
    Generate(GenerateArgs),
    /// Time the compiled and enumerative engines; prints CSV.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Accept,
    Tag,
}

#[derive(Debug, Args)]
struct TrainArgs {
    sfa: PathBuf,
    data: PathBuf,
    /// Checkpoint destination.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where to write the loss CSV instead of stdout.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// `acceptance` (binary labels) or `tagging` (per-step state labels).
    #[arg(long)]
    objective: Option<String>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    optimizer: Option<Optimizer>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Built-in pattern number (1, 2 or 3).
    #[arg(long, conflicts_with = "sfa")]
    pattern: Option<usize>,
    /// Automaton file to sample from instead of a built-in pattern.
    #[arg(long)]
    sfa: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    length: Option<usize>,
    #[arg(long)]
    n_pos: Option<usize>,
    #[arg(long)]
    n_neg: Option<usize>,
    /// Emit `n` uniformly random traces labelled with the state after each step.
    #[arg(long)]
    tagged: bool,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated built-in pattern numbers.
    #[arg(long)]
    patterns: Option<String>,
    #[arg(long)]
    lengths: Option<String>,
    #[arg(long)]
    engines: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Flat `key = value` settings; `#` starts a comment.
#[derive(Debug, Default)]
struct ConfigFile(BTreeMap<String, String>);

impl ConfigFile {
    fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::parse(&text).map_err(|m| CliError::Usage(format!("{}: {m}", path.display())))
    }

    fn parse(text: &str) -> Result<Self, String> {
        let mut map = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(format!("line {}: expected `key = value`", k + 1));
            };
            let key = key.trim();
            if !CONFIG_KEYS.contains(&key) {
                return Err(format!("line {}: unknown key `{key}`", k + 1));
            }
            if map.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(format!("line {}: duplicate key `{key}`", k + 1));
            }
        }
        Ok(ConfigFile(map))
    }

    /// `flag`, else the config value, else `default`.
    fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> CliResult<T>
    where
        T::Err: Display,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.0.get(key) {
            Some(raw) => raw
                .parse()
                .map_err(|e| CliError::Usage(format!("config key `{key}`: {e}"))),
            None => Ok(default),
        }
    }

    fn pick_list<T: FromStr>(&self, flag: Option<String>, key: &str, default: Vec<T>) -> CliResult<Vec<T>>
    where
        T::Err: Display,
    {
        match flag.or_else(|| self.0.get(key).cloned()) {
            Some(raw) => parse_list(&raw).map_err(|e| CliError::Usage(format!("`{key}`: {e}"))),
            None => Ok(default),
        }
    }
}

fn parse_list<T: FromStr>(raw: &str) -> Result<Vec<T>, String>
where
    T::Err: Display,
{
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e: T::Err| format!("`{s}`: {e}")))
        .collect()
}

fn read_sfa(path: &Path) -> CliResult<Sfa> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_sfa(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn compile(path: &Path) -> CliResult<CompiledSfa> {
    Ok(validate_and_compile_with(&read_sfa(path)?, Completion::SelfLoop)?)
}

/// Writes to `--out` when given, otherwise to `stdout`.
fn emit(out: Option<&Path>, stdout: &mut dyn Write, body: &[u8]) -> CliResult {
    match out {
        Some(path) => fs::write(path, body).map_err(|e| io_err(path, e)),
        None => Ok(stdout.write_all(body)?),
    }
}

#[derive(Deserialize)]
struct FeatureRecord {
    features: Vec<Vec<f64>>,
}

fn read_features(path: &Path) -> CliResult<Vec<Vec<Vec<f64>>>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| {
            serde_json::from_str::<FeatureRecord>(l)
                .map(|r| r.features)
                .map_err(|e| CliError::Usage(format!("{}: line {}: {e}", path.display(), k + 1)))
        })
        .collect()
}

fn cmd_validate(sfa: &Path, strict: bool, stdout: &mut dyn Write) -> CliResult {
    let sfa = read_sfa(sfa)?;
    let completion = if strict { Completion::Strict } else { Completion::SelfLoop };
    let c = validate_and_compile_with(&sfa, completion)?;
    writeln!(stdout, "valid")?;
    for &q in c.completed_states() {
        writeln!(stdout, "completed `{}` with a self-loop", sfa.states()[q])?;
    }
    Ok(())
}

fn cmd_compile(sfa: &Path, stdout: &mut dyn Write) -> CliResult {
    let c = compile(sfa)?;
    let a = c.sfa();
    for (t, guard) in a.transitions().iter().zip(c.guards()) {
        writeln!(
            stdout,
            "# {} -> {} : {} ({} nodes)",
            a.states()[t.from],
            a.states()[t.to],
            t.guard.display(a.vocab()),
            guard.len()
        )?;
        guard.dump(&mut *stdout)?;
    }
    Ok(())
}

fn cmd_infer(sfa: &Path, data: &Path, mode: Mode, model: Option<&Path>, out: Option<&Path>, stdout: &mut dyn Write) -> CliResult {
    let c = compile(sfa)?;
    let model = model.map(load_checkpoint).transpose()?;
    if let Some(f) = &model {
        if f.n_symbols() != c.n_vars() {
            return Err(CliError::Domain(format!(
                "model predicts {} symbols but the automaton has {}",
                f.n_symbols(),
                c.n_vars()
            )));
        }
    }
    let sequences = read_features(data)?;
    let states = c.sfa().states();
    let mut body = String::new();
    match mode {
        Mode::Accept => body.push_str("sequence,acceptance\n"),
        Mode::Tag => body.push_str(&format!("sequence,step,{}\n", states.join(","))),
    }
    for (i, obs) in sequences.iter().enumerate() {
        let ps = match &model {
            Some(f) => obs.iter().map(|o| f.extract(o)).collect::<Result<Vec<_>, _>>()?,
            None => obs.clone(),
        };
        match mode {
            Mode::Accept => body.push_str(&format!("{i},{}\n", c.acceptance(&ps)?)),
            Mode::Tag => {
                for (t, alpha) in c.forward(&ps)?.iter().enumerate() {
                    let row: Vec<String> = alpha.as_slice().iter().map(f64::to_string).collect();
                    body.push_str(&format!("{i},{},{}\n", t + 1, row.join(",")));
                }
            }
        }
    }
    emit(out, stdout, body.as_bytes())
}

fn load_sequences(path: &Path) -> CliResult<Vec<LabeledSequence>> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let records = read_jsonl(BufReader::new(file)).map_err(|e| io_err(path, e))?;
    records
        .iter()
        .map(|r| r.to_sequence().map_err(|e| io_err(path, e)))
        .collect()
}

fn cmd_train(args: &TrainArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CliResult {
    let cfg_file = ConfigFile::load(args.config.as_deref())?;
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        learning_rate: cfg_file.pick(args.learning_rate, "learning_rate", defaults.learning_rate)?,
        optimizer: cfg_file.pick(args.optimizer, "optimizer", defaults.optimizer)?,
        batch_size: cfg_file.pick(args.batch_size, "batch_size", defaults.batch_size)?,
        max_epochs: cfg_file.pick(args.max_epochs, "max_epochs", defaults.max_epochs)?,
        patience: cfg_file.pick(args.patience, "patience", defaults.patience)?,
        seed: cfg_file.pick(args.seed, "seed", defaults.seed)?,
    };
    cfg.validate()?;
    let objective_name: String = cfg_file.pick(args.objective.clone(), "objective", "acceptance".into())?;

    let c = compile(&args.sfa)?;
    let objective = match objective_name.as_str() {
        "acceptance" => Objective::Acceptance,
        "tagging" => Objective::Tagging(StateLabels::identity(c.n_states())),
        other => {
            return Err(CliError::Usage(format!(
                "unknown objective `{other}` (expected acceptance or tagging)"
            )))
        }
    };
    let data = load_sequences(&args.data)?;
    let outcome = train(&c, &data, &cfg, &objective)?;
    let (loss, metric) = evaluate(&c, &outcome.extractor, &data, &objective)?;
    writeln!(
        stderr,
        "seed {}: best epoch {}, training loss {loss:.6}, training metric {metric:.4}",
        cfg.seed, outcome.best_epoch
    )?;
    if let Some(path) = &args.out {
        save_checkpoint(&outcome.extractor, path)?;
    }
    emit(args.trace_out.as_deref(), stdout, outcome.trace_csv().as_bytes())
}

fn cmd_generate(args: &GenerateArgs, stdout: &mut dyn Write) -> CliResult {
    let cfg = ConfigFile::load(args.config.as_deref())?;
    let pat = match &args.sfa {
        Some(path) => {
            let sfa = compile(path)?.sfa().clone();
            PatternSpec {
                name: path.display().to_string(),
                sfa,
            }
        }
        None => builtin_pattern(cfg.pick(args.pattern, "pattern", 1)?)?,
    };
    let length = cfg.pick(args.length, "length", 10)?;
    let sigma = cfg.pick(args.sigma, "sigma", 0.3)?;
    let seed = cfg.pick(args.seed, "seed", 0)?;
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(CliError::Usage(format!("sigma must be finite and non-negative, got {sigma}")));
    }
    let ds = if args.tagged {
        generate_tagged_dataset(&pat, length, cfg.pick(args.n, "n", 100)?, sigma, seed)?
    } else {
        let params = GenParams {
            length,
            n_pos: cfg.pick(args.n_pos, "n_pos", 100)?,
            n_neg: cfg.pick(args.n_neg, "n_neg", 100)?,
            sigma,
            seed,
        };
        generate_dataset(&pat, params)?
    };
    let mut body = Vec::new();
    write_jsonl(&ds.records, &mut body)?;
    emit(args.out.as_deref(), stdout, &body)
}

fn cmd_bench(args: &BenchArgs, stdout: &mut dyn Write) -> CliResult {
    let file = ConfigFile::load(args.config.as_deref())?;
    let d = BenchConfig::default();
    let engines: Vec<String> = file.pick_list(args.engines.clone(), "engines", vec![])?;
    let cfg = BenchConfig {
        patterns: file.pick_list(args.patterns.clone(), "patterns", d.patterns)?,
        lengths: file.pick_list(args.lengths.clone(), "lengths", d.lengths)?,
        engines: if engines.is_empty() {
            d.engines
        } else {
            engines
                .iter()
                .map(|e| e.parse::<Engine>())
                .collect::<Result<_, _>>()
                .map_err(CliError::Usage)?
        },
        batch_size: file.pick(args.batch_size, "batch_size", d.batch_size)?,
        repetitions: file.pick(args.repetitions, "repetitions", d.repetitions)?,
        sigma: file.pick(args.sigma, "sigma", d.sigma)?,
        seed: file.pick(args.seed, "seed", d.seed)?,
    };
    if cfg.batch_size == 0 {
        return Err(CliError::Usage("batch size must be at least 1".into()));
    }
    let report = run_benchmark(&cfg)?;
    emit(args.out.as_deref(), stdout, report.to_csv().as_bytes())
}

/// Runs the CLI on `args` (including the program name) and returns the exit
/// code. Results go to `stdout`, diagnostics to `stderr`.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = sink.write_all(text.as_bytes());
            return code;
        }
    };
    let result = match &cli.command {
        Command::Validate { sfa, strict } => cmd_validate(sfa, *strict, stdout),
        Command::Compile { sfa } => cmd_compile(sfa, stdout),
        Command::Infer {
            sfa,
            data,
            mode,
            model,
            out,
        } => cmd_infer(sfa, data, *mode, model.as_deref(), out.as_deref(), stdout),
        Command::Train(args) => cmd_train(args, stdout, stderr),
        Command::Generate(args) => cmd_generate(args, stdout),
        Command::Bench(args) => cmd_bench(args, stdout),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message());
            e.code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing() {
        let cfg = ConfigFile::parse("# training\nlearning_rate = 0.05\nseed=3\n\n").unwrap();
        assert_eq!(cfg.pick(None, "learning_rate", 0.01).unwrap(), 0.05);
        assert_eq!(cfg.pick(Some(7u64), "seed", 0).unwrap(), 7);
        assert_eq!(cfg.pick(None, "seed", 0u64).unwrap(), 3);
        assert_eq!(cfg.pick(None, "patience", 10usize).unwrap(), 10);
        assert!(ConfigFile::parse("colour = red").unwrap_err().contains("unknown key"));
        assert!(ConfigFile::parse("seed = 1\nseed = 2").unwrap_err().contains("duplicate"));
        assert!(ConfigFile::parse("seed").unwrap_err().contains("line 1"));
        assert!(cfg.pick(None, "learning_rate", 0usize).is_err());
    }

    #[test]
    fn list_parsing() {
        assert_eq!(parse_list::<usize>("1, 2,3").unwrap(), vec![1, 2, 3]);
        assert!(parse_list::<usize>("1,x").is_err());
    }
}
