//! Command-line front end. Every subcommand delegates to one library
//! operation and writes a `.meta.json` sidecar next to each output file.
//!
//! Settings come from flags, then from an optional `--config` file of
//! `key = value` lines whose keys are flag names, then from defaults.

use std::ffi::OsString;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use homonmt_nnet::ModelConfig;
use serde::Serialize;
use serde_json::{json, Value};

use crate::corpus::{load_parallel, ParallelCorpus, DEFAULT_MAX_LEN};
use crate::detector::{
    build_self_supervised_data, default_config, split_holdout, to_mixed, train_detector,
    DetectorModel,
};
use crate::error::{io_err, Error, Result};
use crate::eval::{corpus_sha256, evaluate_system, run_sweep, SweepOptions, System};
use crate::noise::{
    adversarial_corpus, augment_corpus, make_ant, make_smtd, parse_mixed, render_mixed, NoiseMode,
    RatioSampler,
};
use crate::pinyin::{bundled_table, load_table, transcribe, SyllableTable, Token};
use crate::pipeline::{run_pipeline, PipelineConfig};
use crate::sanmt::{
    build_training_set, prepare_corpus, train_nmt, NmtModel, TrainingMode, AUGMENT_COPIES,
};
use crate::train::TrainOptions;
use crate::{fixture, seed};

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "homonmt",
    version,
    about = "Homophone-robust Chinese-English translation toolkit"
)]
pub struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub threads: Option<usize>,
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Character-to-syllable table (TSV); defaults to the bundled table.
    #[arg(long, global = true)]
    pub table: Option<PathBuf>,
    /// File of `key = value` lines supplying flags not given explicitly.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Rewrite every character as its syllable.
    Convert(Io),
    /// Substitute homophones (or syllables) into a text or parallel file.
    InjectNoise(InjectArgs),
    /// Build an augmented training corpus.
    Augment(AugmentArgs),
    /// Train the homophone detector on monolingual text.
    TrainDetector(TrainDetectorArgs),
    /// Score lines with a detector; one JSON record per line.
    Detect(DetectArgs),
    /// Train a translator.
    TrainNmt(TrainNmtArgs),
    /// Translate mixed-transcript lines.
    Translate(TranslateArgs),
    /// BLEU of one system on one parallel corpus.
    Evaluate(EvaluateArgs),
    /// BLEU of several systems over a grid of noise ratios.
    Sweep(SweepArgs),
    /// The full experiment on the bundled fixture.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct Io {
    /// Input file; standard input when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    Homophone,
    SyllableMix,
}

#[derive(Debug, Args, Serialize)]
pub struct InjectArgs {
    #[command(flatten)]
    pub io: Io,
    /// Fraction of eligible characters to replace.
    #[arg(long)]
    pub ratio: f64,
    #[arg(long, value_enum, default_value_t = NoiseKind::Homophone)]
    pub mode: NoiseKind,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Recipe {
    Robust,
    Adversarial,
}

#[derive(Debug, Args, Serialize)]
pub struct AugmentArgs {
    /// Parallel corpus of original text.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = Recipe::Robust)]
    pub recipe: Recipe,
    #[arg(long, default_value_t = AUGMENT_COPIES)]
    pub copies: usize,
    /// Per-sentence ratios, drawn uniformly.
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.2, 0.3, 0.4, 0.5])]
    pub ratios: Vec<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct ModelArgs {
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    #[arg(long)]
    pub encoder_layers: Option<usize>,
    #[arg(long)]
    pub decoder_layers: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
}

impl ModelArgs {
    fn apply(&self, base: ModelConfig) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model.unwrap_or(base.d_model),
            n_heads: self.heads.unwrap_or(base.n_heads),
            d_ff: self.d_ff.unwrap_or(base.d_ff),
            encoder_layers: self.encoder_layers.unwrap_or(base.encoder_layers),
            decoder_layers: self.decoder_layers.unwrap_or(base.decoder_layers),
            max_len: self.max_len.unwrap_or(base.max_len),
            dropout: self.dropout.unwrap_or(base.dropout),
            ..base
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 512)]
    pub batch_tokens: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 100)]
    pub warmup: u64,
    /// Stop after this many epochs without held-out improvement.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Log one line per epoch to standard error.
    #[arg(long)]
    #[serde(skip)]
    pub verbose: bool,
}

impl TrainArgs {
    fn options(&self, seed: u64) -> TrainOptions {
        TrainOptions {
            epochs: self.epochs,
            batch_tokens: self.batch_tokens,
            learning_rate: self.lr,
            warmup_steps: self.warmup,
            seed,
            patience: self.patience,
            verbose: self.verbose,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainDetectorArgs {
    /// Monolingual text, one sentence per line.
    #[arg(long)]
    pub mono: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub output: PathBuf,
    /// Fraction of sentences held out for checkpoint selection.
    #[arg(long, default_value_t = 0.05)]
    pub holdout: f64,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct DetectArgs {
    #[command(flatten)]
    pub io: Io,
    #[arg(long)]
    pub detector: PathBuf,
    /// Flag characters whose probability is below this.
    #[arg(long, default_value_t = crate::detector::DEFAULT_BETA)]
    pub beta: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainNmtArgs {
    /// Parallel corpus of original text.
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub valid: PathBuf,
    #[arg(long, value_parser = parse_mode)]
    pub mode: TrainingMode,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train_opts: TrainArgs,
}

fn parse_mode(s: &str) -> std::result::Result<TrainingMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Args, Serialize)]
pub struct DecodeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Rewrite suspect characters with this detector first.
    #[arg(long)]
    pub detector: Option<PathBuf>,
    #[arg(long, default_value_t = crate::detector::DEFAULT_BETA)]
    pub beta: f64,
    #[arg(long, default_value_t = crate::sanmt::DEFAULT_BEAM)]
    pub beam: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct TranslateArgs {
    #[command(flatten)]
    pub io: Io,
    #[command(flatten)]
    pub decode: DecodeArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub decode: DecodeArgs,
    /// Parallel test corpus.
    #[arg(long)]
    pub test: PathBuf,
    /// JSON report; standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    /// `name=model.ckpt` or `name=model.ckpt,detector.ckpt`; repeatable.
    #[arg(long = "system", required = true)]
    pub systems: Vec<String>,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.2, 0.3, 0.4, 0.5])]
    pub ratios: Vec<f64>,
    #[arg(long, default_value_t = crate::detector::DEFAULT_BETA)]
    pub beta: f64,
    #[arg(long, default_value_t = crate::sanmt::DEFAULT_BEAM)]
    pub beam: usize,
    /// Directory for sweep.json and sweep.tsv.
    #[arg(long)]
    pub output_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PipelineArgs {
    #[arg(long, default_value = "fixture")]
    pub preset: String,
    /// Directory for checkpoints and reports.
    #[arg(long)]
    pub output_dir: PathBuf,
    /// Log training progress to standard error.
    #[arg(long)]
    #[serde(skip)]
    pub verbose: bool,
}

/// Failure class of a run.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }

    /// Single-line JSON for standard error.
    pub fn to_json(&self) -> String {
        let (kind, message) = match self {
            Failure::Usage(m) => ("usage", m),
            Failure::Runtime(m) => ("runtime", m),
        };
        json!({"error": kind, "message": message}).to_string()
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match &e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                Failure::Usage(e.to_string())
            }
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match parse(args) {
        Ok(cli) => cli,
        Err(ParseOutcome::Exit(code)) => return code,
        Err(ParseOutcome::Failed(f)) => {
            eprintln!("{}", f.to_json());
            return f.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("{}", f.to_json());
            f.exit_code()
        }
    }
}

enum ParseOutcome {
    Exit(i32),
    Failed(Failure),
}

fn parse(mut args: Vec<OsString>) -> std::result::Result<Cli, ParseOutcome> {
    if let Some(path) = config_path(&args) {
        let extra = config_args(&path, &args).map_err(ParseOutcome::Failed)?;
        args.extend(extra);
    }
    let matches = match Cli::command().try_get_matches_from(&args) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return Err(ParseOutcome::Exit(0));
            }
            let message = e.render().to_string();
            let first = message
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            return Err(ParseOutcome::Failed(Failure::Usage(first.to_string())));
        }
    };
    Cli::from_arg_matches(&matches).map_err(|e| ParseOutcome::Failed(Failure::Usage(e.to_string())))
}

fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter().map(|a| a.to_string_lossy().into_owned());
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

/// Flags from the config file that the command line does not already set.
fn config_args(path: &Path, args: &[OsString]) -> std::result::Result<Vec<OsString>, Failure> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let command = Cli::command();
    let given: Vec<String> = args
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let sub = given
        .iter()
        .find_map(|a| command.get_subcommands().find(|s| s.get_name() == a))
        .ok_or_else(|| Failure::Usage("no subcommand given".into()))?;
    let accepted: Vec<&clap::Arg> = sub.get_arguments().chain(command.get_arguments()).collect();
    let known = |key: &str| {
        command
            .get_subcommands()
            .flat_map(|s| s.get_arguments())
            .chain(command.get_arguments())
            .any(|a| a.get_long() == Some(key))
    };
    let mut extra = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| {
                Failure::Usage(format!(
                    "{}:{}: expected key = value",
                    path.display(),
                    n + 1
                ))
            })?;
        if key == "config" || !known(key) {
            return Err(Failure::Usage(format!(
                "{}:{}: unknown key {key:?}",
                path.display(),
                n + 1
            )));
        }
        let flag = format!("--{key}");
        let set = given
            .iter()
            .any(|a| *a == flag || a.starts_with(&format!("{flag}=")));
        let Some(arg) = accepted.iter().find(|a| a.get_long() == Some(key)) else {
            continue;
        };
        if set {
            continue;
        }
        if arg.get_action().takes_values() {
            extra.push(OsString::from(format!("{flag}={value}")));
        } else if value == "true" {
            extra.push(OsString::from(flag));
        } else if value != "false" {
            return Err(Failure::Usage(format!(
                "{}:{}: {key} must be true or false",
                path.display(),
                n + 1
            )));
        }
    }
    Ok(extra)
}

fn execute(cli: &Cli) -> std::result::Result<(), Failure> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Failure::Runtime(e.to_string()))?;
    pool.install(|| dispatch(cli)).map_err(Failure::from)
}

fn read_input(path: &Option<PathBuf>) -> Result<String> {
    let bytes = match path {
        Some(p) => fs::read(p).map_err(io_err(p))?,
        None => {
            let mut buf = Vec::new();
            std::io::stdin()
                .read_to_end(&mut buf)
                .map_err(io_err("<stdin>"))?;
            buf
        }
    };
    let text = String::from_utf8(bytes).map_err(|_| Error::Encoding)?;
    if text.contains('\r') {
        return Err(Error::Config("input must use LF line endings".into()));
    }
    Ok(text)
}

fn write_output(path: &Option<PathBuf>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(io_err(p)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(io_err("<stdout>")),
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Effective settings of this run, embedded in every artifact.
fn run_record(cli: &Cli) -> Value {
    json!({
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cli.seed,
        "config": cli,
    })
}

fn write_sidecar(cli: &Cli, output: &Option<PathBuf>, extra: Value) -> Result<()> {
    if let Some(out) = output {
        let mut record = run_record(cli);
        record["output"] = extra;
        let path = sidecar_path(out);
        fs::write(&path, serde_json::to_string_pretty(&record)? + "\n").map_err(io_err(path))?;
    }
    Ok(())
}

fn table(cli: &Cli) -> Result<SyllableTable> {
    match &cli.table {
        Some(p) => load_table(p),
        None => Ok(bundled_table()),
    }
}

/// Splits text into lines, keeping each line's terminator.
fn lines_with_endings(text: &str) -> impl Iterator<Item = (&str, &str)> {
    text.split_inclusive('\n')
        .map(|l| match l.strip_suffix('\n') {
            Some(body) => (body, "\n"),
            None => (l, ""),
        })
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Convert(io) => convert(cli, io),
        Command::InjectNoise(a) => inject_noise(cli, a),
        Command::Augment(a) => augment(cli, a),
        Command::TrainDetector(a) => cmd_train_detector(cli, a),
        Command::Detect(a) => detect(cli, a),
        Command::TrainNmt(a) => cmd_train_nmt(cli, a),
        Command::Translate(a) => cmd_translate(cli, a),
        Command::Evaluate(a) => evaluate(cli, a),
        Command::Sweep(a) => sweep(cli, a),
        Command::Pipeline(a) => pipeline(cli, a),
    }
}

fn convert(cli: &Cli, io: &Io) -> Result<()> {
    let table = table(cli)?;
    let text = read_input(&io.input)?;
    let mut out = String::with_capacity(text.len() * 3);
    for (n, (line, end)) in lines_with_endings(&text).enumerate() {
        let (source, rest) = match line.split_once('\t') {
            Some((s, t)) => (s, Some(t)),
            None => (line, None),
        };
        let syllables =
            transcribe(&table, &parse_mixed(source, &table)).map_err(|e| Error::Parse {
                path: "input".into(),
                line: n + 1,
                message: e.to_string(),
            })?;
        out.push_str(&render_mixed(&syllables));
        if let Some(t) = rest {
            out.push('\t');
            out.push_str(t);
        }
        out.push_str(end);
    }
    write_output(&io.output, &out)?;
    write_sidecar(cli, &io.output, json!({"lines": text.lines().count()}))
}

fn inject_noise(cli: &Cli, a: &InjectArgs) -> Result<()> {
    let table = table(cli)?;
    let mode = match a.mode {
        NoiseKind::Homophone => NoiseMode::Homophone,
        NoiseKind::SyllableMix => NoiseMode::SyllableMix,
    };
    crate::noise::NoiseSpec::new(a.ratio, cli.seed, mode)?;
    let text = read_input(&a.io.input)?;
    let mut out = String::with_capacity(text.len());
    let mut substitutions = Vec::new();
    for (i, (line, end)) in lines_with_endings(&text).enumerate() {
        let (source, rest) = match line.split_once('\t') {
            Some((s, t)) => (s, Some(t)),
            None => (line, None),
        };
        let tokens = parse_mixed(source, &table);
        let mut rng = seed::stream(cli.seed, seed::ANT, i as u64);
        let (noisy, records) = match mode {
            NoiseMode::Homophone => make_ant(&tokens, &table, a.ratio, &mut rng)?,
            NoiseMode::SyllableMix => make_smtd(&tokens, &table, a.ratio, &mut rng)?,
        };
        if records.is_empty() {
            out.push_str(line);
        } else {
            out.push_str(&render_mixed(&noisy));
            if let Some(t) = rest {
                out.push('\t');
                out.push_str(t);
            }
        }
        out.push_str(end);
        substitutions.push(records);
    }
    write_output(&a.io.output, &out)?;
    write_sidecar(
        cli,
        &a.io.output,
        json!({"ratio": a.ratio, "mode": mode, "substitutions": substitutions}),
    )
}

fn load_corpus(path: &Path, table: &SyllableTable) -> Result<ParallelCorpus> {
    let (corpus, stats) = load_parallel(path, table, DEFAULT_MAX_LEN)?;
    if stats.dropped_empty + stats.dropped_too_long > 0 {
        eprintln!(
            "{}: skipped {} empty and {} overlong pairs",
            path.display(),
            stats.dropped_empty,
            stats.dropped_too_long
        );
    }
    Ok(corpus)
}

fn augment(cli: &Cli, a: &AugmentArgs) -> Result<()> {
    let table = table(cli)?;
    let corpus = load_corpus(&a.input, &table)?;
    let sampler = RatioSampler::Choice(a.ratios.clone());
    let (out, skipped) = match a.recipe {
        Recipe::Robust => (
            augment_corpus(&corpus, &table, a.copies, &sampler, cli.seed)?,
            0,
        ),
        Recipe::Adversarial => adversarial_corpus(&corpus, &table, a.copies, &sampler, cli.seed)?,
    };
    let output = Some(a.output.clone());
    write_output(&output, &out.to_text())?;
    write_sidecar(
        cli,
        &output,
        json!({"pairs": out.len(), "skipped_positions": skipped, "substitutions": out.substitutions}),
    )
}

fn cmd_train_detector(cli: &Cli, a: &TrainDetectorArgs) -> Result<()> {
    let table = table(cli)?;
    let text = read_input(&Some(a.mono.clone()))?;
    let sentences: Vec<Vec<Token>> = text.lines().map(|l| parse_mixed(l, &table)).collect();
    let data = build_self_supervised_data(&sentences, &table);
    let (train, valid) = split_holdout(&data.pairs, a.holdout);
    let config = a.model.apply(default_config());
    let (model, report) =
        train_detector(&train, &valid, &table, &config, &a.train.options(cli.seed))?;
    model.save(&a.output, run_record(cli))?;
    write_sidecar(
        cli,
        &Some(a.output.clone()),
        json!({"dropped": data.dropped, "training": report}),
    )
}

fn detect(cli: &Cli, a: &DetectArgs) -> Result<()> {
    let table = table(cli)?;
    let model = DetectorModel::load(&a.detector)?;
    let text = read_input(&a.io.input)?;
    let sentences: Vec<Vec<Token>> = text.lines().map(|l| parse_mixed(l, &table)).collect();
    let reports = crate::detector::score_all(&model, &sentences, &table, a.beta)?;
    let mut out = String::new();
    for (s, r) in sentences.iter().zip(&reports) {
        let record = json!({
            "tokens": s.iter().map(Token::text).collect::<Vec<_>>(),
            "lls": r.positions.iter().map(|p| p.lls.is_finite().then_some(p.lls)).collect::<Vec<_>>(),
            "flagged": r.positions.iter().map(|p| p.flagged).collect::<Vec<_>>(),
            "mixed": render_mixed(&to_mixed(s, r, &table)),
        });
        out.push_str(&record.to_string());
        out.push('\n');
    }
    write_output(&a.io.output, &out)?;
    write_sidecar(cli, &a.io.output, json!({"lines": sentences.len()}))
}

fn cmd_train_nmt(cli: &Cli, a: &TrainNmtArgs) -> Result<()> {
    let table = table(cli)?;
    let train = build_training_set(&load_corpus(&a.train, &table)?, &table, a.mode, cli.seed)?;
    let valid = prepare_corpus(a.mode, &load_corpus(&a.valid, &table)?, &table);
    let config = a.model.apply(ModelConfig::default());
    let (model, report) = train_nmt(
        &train,
        &valid,
        &table,
        a.mode,
        &config,
        &a.train_opts.options(cli.seed),
    )?;
    model.save(&a.output, run_record(cli))?;
    write_sidecar(
        cli,
        &Some(a.output.clone()),
        json!({"training_pairs": train.len(), "training": report}),
    )
}

struct Loaded {
    model: NmtModel,
    detector: Option<DetectorModel>,
}

impl Loaded {
    fn new(d: &DecodeArgs) -> Result<Self> {
        Ok(Self {
            model: NmtModel::load(&d.model)?,
            detector: d.detector.as_deref().map(DetectorModel::load).transpose()?,
        })
    }

    fn system(&self, name: &str) -> System<'_> {
        System {
            name: name.into(),
            model: &self.model,
            detector: self.detector.as_ref(),
        }
    }
}

fn cmd_translate(cli: &Cli, a: &TranslateArgs) -> Result<()> {
    let table = table(cli)?;
    let loaded = Loaded::new(&a.decode)?;
    let text = read_input(&a.io.input)?;
    let sources: Vec<Vec<Token>> = text.lines().map(|l| parse_mixed(l, &table)).collect();
    let (outputs, flagged) = crate::eval::run_system(
        &loaded.system("translate"),
        &sources,
        &table,
        a.decode.beta,
        a.decode.beam,
    )?;
    let mut out = String::new();
    for words in outputs {
        out.push_str(&words.join(" "));
        out.push('\n');
    }
    write_output(&a.io.output, &out)?;
    write_sidecar(
        cli,
        &a.io.output,
        json!({"lines": sources.len(), "flagged": flagged}),
    )
}

fn evaluate(cli: &Cli, a: &EvaluateArgs) -> Result<()> {
    let table = table(cli)?;
    let loaded = Loaded::new(&a.decode)?;
    let test = load_corpus(&a.test, &table)?;
    let (bleu, _) = evaluate_system(
        &loaded.system("evaluate"),
        &test,
        &table,
        a.decode.beta,
        a.decode.beam,
    )?;
    let mut report = run_record(cli);
    report["test_sha256"] = json!(corpus_sha256(&test));
    report["bleu"] = serde_json::to_value(&bleu)?;
    write_output(&a.output, &(serde_json::to_string_pretty(&report)? + "\n"))
}

fn sweep(cli: &Cli, a: &SweepArgs) -> Result<()> {
    let table = table(cli)?;
    let test = load_corpus(&a.test, &table)?;
    let mut loaded = Vec::new();
    for entry in &a.systems {
        let (name, paths) = entry.split_once('=').ok_or_else(|| {
            Error::Config(format!("system {entry:?} is not name=model[,detector]"))
        })?;
        let (model, detector) = match paths.split_once(',') {
            Some((m, d)) => (m, Some(PathBuf::from(d))),
            None => (paths, None),
        };
        let decode = DecodeArgs {
            model: model.into(),
            detector,
            beta: a.beta,
            beam: a.beam,
        };
        loaded.push((name.to_string(), Loaded::new(&decode)?));
    }
    let systems: Vec<System> = loaded.iter().map(|(n, l)| l.system(n)).collect();
    let opts = SweepOptions {
        ratios: a.ratios.clone(),
        seed: cli.seed,
        beta: a.beta,
        beam_size: a.beam,
    };
    let mut report = run_sweep(&systems, &test, &table, &opts)?;
    report.metadata["run"] = run_record(cli);
    fs::create_dir_all(&a.output_dir).map_err(io_err(&a.output_dir))?;
    let json_path = a.output_dir.join("sweep.json");
    fs::write(&json_path, serde_json::to_string_pretty(&report)? + "\n")
        .map_err(io_err(&json_path))?;
    let tsv_path = a.output_dir.join("sweep.tsv");
    fs::write(&tsv_path, report.to_tsv()).map_err(io_err(&tsv_path))?;
    write_output(&None, &report.to_tsv())
}

fn pipeline(cli: &Cli, a: &PipelineArgs) -> Result<()> {
    let mut config = PipelineConfig::preset(&a.preset)?.with_seed(cli.seed);
    config.detector_train.verbose = a.verbose;
    config.nmt_train.verbose = a.verbose;
    let table = table(cli)?;
    let data = fixture::bundled(&table)?;
    let out = run_pipeline(&config, &data, &table)?;
    if a.verbose {
        for (stage, t) in &out.timings {
            eprintln!("{stage}: {:.1}s", t.as_secs_f64());
        }
    }
    out.write(&a.output_dir)?;
    let sidecar = a.output_dir.join("run.meta.json");
    fs::write(
        &sidecar,
        serde_json::to_string_pretty(&run_record(cli))? + "\n",
    )
    .map_err(io_err(&sidecar))?;
    write_output(&None, &out.sweep.to_tsv())
}
