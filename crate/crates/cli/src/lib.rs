//! Command-line front end for `coherseg`.
//!
//! Every subcommand resolves one [`RunConfig`] from three layers, later ones
//! winning: built-in defaults, the TOML file given by `--config`, and flags
//! (`--set key=value` first, then named flags). The resolved config is printed
//! to stderr before the command runs, so any output can be reproduced from
//! the log alone.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 runtime failure
//! (I/O, non-finite values, failed gradient checks).

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use coherseg::augment::{augment_document, DonorPool};
use coherseg::corpus::{load_jsonl, synth_corpus, write_jsonl, SynthConfig};
use coherseg::gradcheck::run_gradcheck;
use coherseg::infer::{
    evaluate_predictions, predict_document, score_windowed, sweep_threshold, Mode, Prediction,
    DEFAULT_THRESHOLD,
};
use coherseg::metrics::Aggregation;
use coherseg::pairs::{build_pairs, PairSet};
use coherseg::train::{train, Checkpoint, TrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] coherseg::Error),
    #[error("{}: {source}", path.display())]
    At {
        path: PathBuf,
        source: coherseg::Error,
    },
    #[error("gradient check failed: {0}")]
    ChecksFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_runtime() => 2,
            CliError::Core(_) => 1,
            CliError::At { source, .. } if source.is_runtime() => 2,
            CliError::At { .. } => 1,
            CliError::ChecksFailed(_) => 2,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Attaches `path` to file errors from the core library.
fn at(path: &Path) -> impl FnOnce(coherseg::Error) -> CliError + '_ {
    move |source| CliError::At {
        path: path.to_path_buf(),
        source,
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Parser)]
#[command(name = "coherseg", version, about = "Topic segmentation with coherence auxiliary tasks")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Worker threads. Work runs sequentially, so output never depends on it.
    #[arg(long, global = true, default_value_t = 1,
          value_parser = clap::value_parser!(u32).range(1..))]
    pub threads: u32,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
    /// Dump augmented documents with provenance and relation labels.
    Augment(AugmentArgs),
    /// Dump contrastive pair sets.
    Pairs(PairsArgs),
    /// Train a segmenter and write a checkpoint plus a per-epoch log.
    Train(TrainArgs),
    /// Predict boundaries with a trained checkpoint.
    Segment(SegmentArgs),
    /// Score predictions against a reference corpus.
    Eval(EvalArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub n_docs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(short, long)]
    pub corpus: Option<PathBuf>,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub p1: Option<f64>,
    #[arg(long)]
    pub p2: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PairsArgs {
    #[arg(short, long)]
    pub corpus: Option<PathBuf>,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub k1: Option<usize>,
    #[arg(long)]
    pub k2: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(short, long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(short, long)]
    pub model: Option<PathBuf>,
    /// Per-epoch JSONL log; defaults to the checkpoint path plus `.log.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alpha1: Option<f64>,
    #[arg(long)]
    pub alpha2: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Checkpoint to read.
    #[arg(short, long)]
    pub model: Option<PathBuf>,
    #[arg(short, long)]
    pub corpus: Option<PathBuf>,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<Mode>,
    #[arg(long, allow_negative_numbers = true)]
    pub threshold: Option<f64>,
    /// Pick the threshold on this dev corpus instead.
    #[arg(long)]
    pub sweep_dev: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Reference corpus.
    #[arg(short, long)]
    pub corpus: Option<PathBuf>,
    #[arg(short, long)]
    pub predictions: Option<PathBuf>,
    /// Report file; the report is always printed to stdout as well.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Per-document breakdown, one JSON line per document.
    #[arg(long)]
    pub per_doc: Option<PathBuf>,
    #[arg(long, value_parser = parse_aggregation)]
    pub aggregation: Option<Aggregation>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s {
        "prob" => Ok(Mode::Prob),
        "sim" => Ok(Mode::Sim),
        "ensemble" => Ok(Mode::Ensemble),
        _ => Err(format!("unknown mode {s:?}; expected prob, sim or ensemble")),
    }
}

fn parse_aggregation(s: &str) -> Result<Aggregation, String> {
    match s {
        "macro" => Ok(Aggregation::Macro),
        "micro" => Ok(Aggregation::Micro),
        _ => Err(format!("unknown aggregation {s:?}; expected macro or micro")),
    }
}

/// Input and output locations. Unused entries are ignored by each command.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predictions: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_doc: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentConfig {
    pub mode: Mode,
    pub threshold: f64,
    /// Choose the threshold by sweeping on `io.dev`.
    pub sweep: bool,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig {
            mode: Mode::Prob,
            threshold: DEFAULT_THRESHOLD,
            sweep: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub aggregation: Aggregation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub trials: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig { seed: 0, trials: 100 }
    }
}

/// Everything a command needs. The `augment` and `pairs` commands read
/// `train.augment` and `train.cssl`, so one file drives the whole pipeline.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub io: IoConfig,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub segment: SegmentConfig,
    pub eval: EvalConfig,
    pub gradcheck: GradcheckConfig,
}

impl RunConfig {
    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| usage(format!("cannot serialize config: {e}")))
    }

    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| usage(format!("invalid config: {e}")))
    }
}

type Overrides = Vec<(String, toml::Value)>;

fn value<T: Serialize>(v: T) -> toml::Value {
    toml::Value::try_from(v).expect("flag values are plain scalars")
}

fn push<T: Serialize>(o: &mut Overrides, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        o.push((key.to_string(), value(v)));
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Augment(_) => "augment",
            Command::Pairs(_) => "pairs",
            Command::Train(_) => "train",
            Command::Segment(_) => "segment",
            Command::Eval(_) => "eval",
            Command::Gradcheck(_) => "gradcheck",
        }
    }

    fn overrides(&self) -> Overrides {
        let mut o = Vec::new();
        match self {
            Command::Synth(a) => {
                push(&mut o, "io.out", &a.out);
                push(&mut o, "synth.n_docs", &a.n_docs);
                push(&mut o, "synth.seed", &a.seed);
            }
            Command::Augment(a) => {
                push(&mut o, "io.corpus", &a.corpus);
                push(&mut o, "io.out", &a.out);
                push(&mut o, "train.augment.p1", &a.p1);
                push(&mut o, "train.augment.p2", &a.p2);
                push(&mut o, "train.augment.seed", &a.seed);
            }
            Command::Pairs(a) => {
                push(&mut o, "io.corpus", &a.corpus);
                push(&mut o, "io.out", &a.out);
                push(&mut o, "train.cssl.k1", &a.k1);
                push(&mut o, "train.cssl.k2", &a.k2);
            }
            Command::Train(a) => {
                push(&mut o, "io.corpus", &a.corpus);
                push(&mut o, "io.dev", &a.dev);
                push(&mut o, "io.model", &a.model);
                push(&mut o, "io.log", &a.log);
                push(&mut o, "train.epochs", &a.epochs);
                push(&mut o, "train.seed", &a.seed);
                push(&mut o, "train.alpha1", &a.alpha1);
                push(&mut o, "train.alpha2", &a.alpha2);
                push(&mut o, "train.lr", &a.lr);
            }
            Command::Segment(a) => {
                push(&mut o, "io.model", &a.model);
                push(&mut o, "io.corpus", &a.corpus);
                push(&mut o, "io.out", &a.out);
                push(&mut o, "segment.mode", &a.mode);
                push(&mut o, "segment.threshold", &a.threshold);
                if a.sweep_dev.is_some() {
                    push(&mut o, "io.dev", &a.sweep_dev);
                    push(&mut o, "segment.sweep", &Some(true));
                }
            }
            Command::Eval(a) => {
                push(&mut o, "io.corpus", &a.corpus);
                push(&mut o, "io.predictions", &a.predictions);
                push(&mut o, "io.out", &a.out);
                push(&mut o, "io.per_doc", &a.per_doc);
                push(&mut o, "eval.aggregation", &a.aggregation);
            }
            Command::Gradcheck(a) => {
                push(&mut o, "gradcheck.seed", &a.seed);
                push(&mut o, "gradcheck.trials", &a.trials);
                push(&mut o, "io.out", &a.out);
            }
        }
        o
    }
}

/// Splits `key=value`; the value is read as a TOML literal, falling back to
/// a bare string.
fn parse_set(s: &str) -> CliResult<(String, toml::Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {s:?}")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(usage(format!("--set has an empty key in {s:?}")));
    }
    let raw = raw.trim();
    let v = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.to_string(), v))
}

fn set_key(table: &mut toml::Table, key: &str, v: toml::Value) -> CliResult<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields at least one part");
    let mut t = table;
    for p in parts {
        let entry = t
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| usage(format!("config key {p:?} in {key:?} is not a table")))?;
    }
    t.insert(last.to_string(), v);
    Ok(())
}

/// Resolves the run config for `cli` and returns it with the list of keys
/// set from the command line.
pub fn resolve_config(cli: &Cli) -> CliResult<(RunConfig, Vec<String>)> {
    let mut table = match &cli.config {
        Some(path) => fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?
            .parse::<toml::Table>()
            .map_err(|e| usage(format!("invalid config {}: {e}", path.display())))?,
        None => toml::Table::new(),
    };
    let mut keys = Vec::new();
    let sets = cli.set.iter().map(|s| parse_set(s)).collect::<CliResult<Vec<_>>>()?;
    for (k, v) in sets.into_iter().chain(cli.command.overrides()) {
        set_key(&mut table, &k, v)?;
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let cfg = RunConfig::deserialize(table).map_err(|e| usage(format!("invalid config: {e}")))?;
    Ok((cfg, keys))
}

fn require<'a>(p: &'a Option<PathBuf>, key: &str, flag: &str) -> CliResult<&'a Path> {
    p.as_deref()
        .ok_or_else(|| usage(format!("missing {key}; pass {flag} or set it in the config")))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| at(path)(e.into()))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| at(path)(e.into()))?;
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(&line).map_err(|e| coherseg::Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        records.push(r);
    }
    Ok(records)
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> CliResult<()> {
    let mut text = serde_json::to_string(v).map_err(coherseg::Error::from)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| at(path)(e.into()))?;
    Ok(())
}

/// Parses `args` (including the program name) and runs the command, writing
/// normal output to `out` and the config log and errors to `err`. Returns
/// the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    0
                }
                _ => {
                    let _ = write!(err, "{e}");
                    1
                }
            };
        }
    };
    match execute(&cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::Core(e.into())
}

pub fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let (cfg, keys) = resolve_config(cli)?;
    let seed = match &cli.command {
        Command::Synth(_) => cfg.synth.seed,
        Command::Augment(_) => cfg.train.augment.seed,
        Command::Train(_) => cfg.train.seed,
        Command::Gradcheck(_) => cfg.gradcheck.seed,
        Command::Pairs(_) | Command::Segment(_) | Command::Eval(_) => 0,
    };
    writeln!(err, "# coherseg {} (threads: {}, run sequentially)", cli.command.name(), cli.threads)
        .map_err(io_err)?;
    writeln!(err, "# precedence: defaults < --config file < --set < named flags").map_err(io_err)?;
    if let Some(p) = &cli.config {
        writeln!(err, "# config file: {}", p.display()).map_err(io_err)?;
    }
    if !keys.is_empty() {
        writeln!(err, "# set from flags: {}", keys.join(", ")).map_err(io_err)?;
    }
    writeln!(err, "# seed: {seed}").map_err(io_err)?;
    write!(err, "{}", cfg.to_toml()?).map_err(io_err)?;

    match &cli.command {
        Command::Synth(_) => cmd_synth(&cfg, out),
        Command::Augment(_) => cmd_augment(&cfg, out),
        Command::Pairs(_) => cmd_pairs(&cfg, out),
        Command::Train(_) => cmd_train(&cfg, out),
        Command::Segment(_) => cmd_segment(&cfg, out),
        Command::Eval(_) => cmd_eval(&cfg, out),
        Command::Gradcheck(_) => cmd_gradcheck(&cfg, out),
    }
}

pub fn cmd_synth(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<()> {
    let path = require(&cfg.io.out, "io.out", "--out")?;
    let docs = synth_corpus(&cfg.synth)?;
    write_jsonl(path, &docs).map_err(at(path))?;
    writeln!(out, "wrote {} documents to {}", docs.len(), path.display()).map_err(io_err)
}

pub fn cmd_augment(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<()> {
    let corpus = require(&cfg.io.corpus, "io.corpus", "--corpus")?;
    let path = require(&cfg.io.out, "io.out", "--out")?;
    cfg.train.augment.validate()?;
    let docs = load_jsonl(corpus).map_err(at(corpus))?;
    let pool = DonorPool::new(&docs);
    let augmented = docs
        .iter()
        .map(|d| augment_document(d, &pool, &cfg.train.augment))
        .collect::<coherseg::Result<Vec<_>>>()?;
    write_jsonl(path, &augmented).map_err(at(path))?;
    let total: usize = augmented.iter().map(|a| a.len()).sum();
    let foreign: usize = augmented.iter().map(|a| a.n_foreign_sentences()).sum();
    writeln!(
        out,
        "wrote {} augmented documents to {} ({foreign} of {total} sentences from donors)",
        augmented.len(),
        path.display()
    )
    .map_err(io_err)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PairsRecord {
    pub doc_id: String,
    pub pairs: Vec<PairSet>,
}

pub fn cmd_pairs(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<()> {
    let corpus = require(&cfg.io.corpus, "io.corpus", "--corpus")?;
    let path = require(&cfg.io.out, "io.out", "--out")?;
    cfg.train.cssl.validate()?;
    let records: Vec<PairsRecord> = load_jsonl(corpus).map_err(at(corpus))?
        .iter()
        .map(|d| PairsRecord {
            doc_id: d.doc_id().to_string(),
            pairs: build_pairs(d, &cfg.train.cssl),
        })
        .collect();
    write_jsonl(path, &records).map_err(at(path))?;
    writeln!(out, "wrote pair sets of {} documents to {}", records.len(), path.display())
        .map_err(io_err)
}

fn default_log_path(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".log.jsonl");
    PathBuf::from(s)
}

pub fn cmd_train(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<()> {
    let corpus = require(&cfg.io.corpus, "io.corpus", "--corpus")?;
    let model = require(&cfg.io.model, "io.model", "--model")?;
    let log_path = cfg.io.log.clone().unwrap_or_else(|| default_log_path(model));
    cfg.train.validate()?;
    let train_docs = load_jsonl(corpus).map_err(at(corpus))?;
    let dev_docs = match &cfg.io.dev {
        Some(p) => load_jsonl(p).map_err(at(p))?,
        None => Vec::new(),
    };
    let result = train(&train_docs, &dev_docs, &cfg.train)?;
    if result.skipped_short_docs > 0 {
        writeln!(out, "skipped {} single-sentence documents", result.skipped_short_docs)
            .map_err(io_err)?;
    }
    for e in &result.log {
        write!(
            out,
            "epoch {:>3}  l_ts {:.5}  l_tssp {:.5}  l_cssl {:.5}  l_total {:.5}",
            e.epoch, e.l_ts, e.l_tssp, e.l_cssl, e.l_total
        )
        .map_err(io_err)?;
        if let Some(d) = &e.dev {
            write!(out, "  dev f1 {:.4} pk {:.4} wd {:.4}", d.f1, d.pk, d.wd).map_err(io_err)?;
        }
        writeln!(out).map_err(io_err)?;
    }
    Checkpoint::new(cfg.train.clone(), result.params).save(model).map_err(at(model))?;
    write_jsonl(&log_path, &result.log).map_err(at(&log_path))?;
    writeln!(out, "wrote checkpoint {} and log {}", model.display(), log_path.display())
        .map_err(io_err)
}

pub fn cmd_segment(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<()> {
    let model = require(&cfg.io.model, "io.model", "--model")?;
    let corpus = require(&cfg.io.corpus, "io.corpus", "--corpus")?;
    let path = require(&cfg.io.out, "io.out", "--out")?;
    let mode = cfg.segment.mode;
    mode.check_threshold(cfg.segment.threshold)?;
    let dev = if cfg.segment.sweep {
        Some(require(&cfg.io.dev, "io.dev", "--sweep-dev")?)
    } else {
        None
    };

    let ck = Checkpoint::load(model).map_err(at(model))?;
    let max_sentences = ck.config.max_sentences;
    let threshold = match dev {
        Some(dev) => {
            let scored = load_jsonl(dev).map_err(at(dev))?
                .iter()
                .map(|d| Ok((score_windowed(&ck.params, d, max_sentences)?, d.boundary_labels())))
                .collect::<coherseg::Result<Vec<_>>>()?;
            let (t, f1) = sweep_threshold(&scored, mode)?;
            writeln!(out, "swept threshold {t} (dev f1 {f1:.4})").map_err(io_err)?;
            t
        }
        None => cfg.segment.threshold,
    };
    let preds = load_jsonl(corpus).map_err(at(corpus))?
        .iter()
        .map(|d| predict_document(&ck.params, d, mode, threshold, max_sentences))
        .collect::<coherseg::Result<Vec<_>>>()?;
    write_jsonl(path, &preds).map_err(at(path))?;
    writeln!(out, "wrote {} predictions to {}", preds.len(), path.display()).map_err(io_err)
}

pub fn cmd_eval(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<()> {
    let corpus = require(&cfg.io.corpus, "io.corpus", "--corpus")?;
    let pred_path = require(&cfg.io.predictions, "io.predictions", "--predictions")?;
    let reference = load_jsonl(corpus).map_err(at(corpus))?;
    let mut by_id: HashMap<String, Prediction> = HashMap::new();
    for p in read_jsonl::<Prediction>(pred_path)? {
        let id = p.doc_id.clone();
        if by_id.insert(id.clone(), p).is_some() {
            return Err(coherseg::Error::InvalidInput(format!("duplicate prediction for {id}")).into());
        }
    }
    let mut preds = Vec::with_capacity(reference.len());
    for d in &reference {
        let p = by_id.remove(d.doc_id()).ok_or_else(|| {
            coherseg::Error::InvalidInput(format!("no prediction for document {}", d.doc_id()))
        })?;
        preds.push(p);
    }
    if let Some(extra) = by_id.keys().min() {
        return Err(coherseg::Error::InvalidInput(format!(
            "prediction for {extra}, which is not in the reference corpus"
        ))
        .into());
    }
    let (report, per_doc) = evaluate_predictions(&reference, &preds, cfg.eval.aggregation)?;
    if let Some(p) = &cfg.io.per_doc {
        write_jsonl(p, &per_doc).map_err(at(p))?;
    }
    if let Some(p) = &cfg.io.out {
        write_json(p, &report)?;
    }
    let line = serde_json::to_string(&report).map_err(coherseg::Error::from)?;
    writeln!(out, "{line}").map_err(io_err)
}

pub fn cmd_gradcheck(cfg: &RunConfig, out: &mut dyn Write) -> CliResult<()> {
    let g = &cfg.gradcheck;
    if g.trials < 1 {
        return Err(usage("gradcheck.trials must be ≥ 1"));
    }
    let report = run_gradcheck(g.seed, g.trials);
    for c in &report.checks {
        writeln!(
            out,
            "{:<12} {} max rel error {:.3e} (tolerance {:.0e}, {} trials)",
            c.name,
            if c.passed { "ok  " } else { "FAIL" },
            c.max_rel_error,
            c.tolerance,
            c.trials
        )
        .map_err(io_err)?;
    }
    if let Some(p) = &cfg.io.out {
        write_json(p, &report)?;
    }
    if !report.passed() {
        let failed: Vec<_> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        return Err(CliError::ChecksFailed(failed.join(", ")));
    }
    Ok(())
}
