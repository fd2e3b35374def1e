//! `javagen`: corpus preparation, tokenizer training, denoising pretraining,
//! fine-tuning, generation and evaluation for Java text-to-code models.
//!
//! Exit status: 0 success, 2 usage or config error, 3 data error, 4 runtime
//! error. Failures print one JSON line on stderr:
//! `{"error":"<class>","code":<n>,"message":"..."}`.

mod manifest;
mod overrides;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use javagen::corpus::{self, load_code_lines, load_split, write_split, CleaningRules, Dataset, Sample, Split};
use javagen::denoise::{NoiseConfig, Shard};
use javagen::java;
use javagen::metrics::{self, baseline_rows, render_comparison, CodeBleuWeights, ComparisonRow, EvalReport};
use javagen::rng::Rng;
use javagen::tokenizer::{max_pair_length, Vocabulary};
use javagen::train::{self, fit_denoising_example, run_grid, Checkpoint, GridReport, Mode, TrainError};
use serde::Serialize;

use manifest::RunManifest;
use overrides::RunFlags;

#[derive(Debug, Parser)]
#[command(name = "javagen", version, about = "Java text-to-code pretraining, fine-tuning and evaluation")]
struct Cli {
    /// Force bit-reproducible execution. All stages already run on one
    /// thread in a fixed order; the flag is recorded in manifests.
    #[arg(long, global = true)]
    sequential: bool,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct SplitPaths {
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
}

impl SplitPaths {
    fn iter(&self) -> impl Iterator<Item = (Split, &PathBuf)> {
        [(Split::Train, &self.train), (Split::Valid, &self.valid), (Split::Test, &self.test)]
            .into_iter()
            .filter_map(|(s, p)| p.as_ref().map(|p| (s, p)))
    }

    fn load(&self) -> Result<Dataset, CliError> {
        let mut ds = Dataset::new();
        for (split, path) in self.iter() {
            ds.insert(split, load_split(path, split)?);
        }
        if ds.is_empty() {
            return Err(CliError::usage("give at least one of --train, --valid, --test"));
        }
        Ok(ds)
    }
}

#[derive(Debug, Clone, Args)]
struct WeightFlags {
    #[arg(long, default_value_t = 0.25)]
    alpha: f64,
    #[arg(long, default_value_t = 0.25)]
    beta: f64,
    #[arg(long, default_value_t = 0.25)]
    gamma: f64,
    #[arg(long, default_value_t = 0.25)]
    delta: f64,
    #[arg(long, default_value_t = 5.0)]
    keyword_weight: f64,
}

impl WeightFlags {
    fn weights(&self) -> Result<CodeBleuWeights, CliError> {
        let w = CodeBleuWeights { alpha: self.alpha, beta: self.beta, gamma: self.gamma, delta: self.delta, keyword_weight: self.keyword_weight };
        w.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(w)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-split counts and raw length statistics.
    CorpusStats(SplitPaths),
    /// Drop problematic samples; writes cleaned splits, a report and a pretraining pool.
    Clean {
        #[command(flatten)]
        splits: SplitPaths,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        keep_empty: bool,
        #[arg(long)]
        keep_invalid_utf8: bool,
        #[arg(long)]
        keep_lex_failures: bool,
        /// Raw code length cap in characters; 0 disables the check.
        #[arg(long, default_value_t = 100_000)]
        max_code_chars: usize,
    },
    /// Train a byte-level BPE vocabulary on record files or plain text lines.
    TokenizerTrain {
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        #[arg(long)]
        vocab_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Longest encoded input and target over a record file.
    SeqLengths {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Corrupt a code pool into a denoising shard file.
    MakePretrainShards {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        code: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 512)]
        input_len: usize,
        #[arg(long, default_value_t = 512)]
        target_len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.15)]
        noise_rate: f64,
        #[arg(long, default_value_t = 3.0)]
        mean_span: f64,
    },
    /// Denoising pretraining on code-only data.
    Pretrain(RunFlags),
    /// Supervised fine-tuning on NL → code records.
    Finetune(RunFlags),
    /// Greedy predictions, one per line, for the `nl` fields of a record file.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 512)]
        input_len: usize,
        #[arg(long, default_value_t = 512)]
        max_len: usize,
    },
    /// BLEU, EM and CodeBLEU of a predictions file against references.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[command(flatten)]
        weights: WeightFlags,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fine-tune and evaluate every cell of a length × steps grid.
    Grid {
        /// Grid file: run-config keys shared by all cells, `eval`, and `[[cells]]`.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        weights: WeightFlags,
    },
    /// Side-by-side table of saved evaluation reports and published baselines.
    ReportCompare {
        /// `NAME=PATH` of a JSON report; repeatable, rendered in order.
        #[arg(long = "report", required = true)]
        reports: Vec<String>,
        #[arg(long)]
        no_baselines: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump tokens, AST and def-use edges of a Java snippet.
    DebugAst {
        #[arg(long, conflicts_with = "file", required_unless_present = "file")]
        code: Option<String>,
        #[arg(long)]
        file: Option<PathBuf>,
    },
}

#[derive(Debug)]
struct CliError {
    class: &'static str,
    code: u8,
    message: String,
}

impl CliError {
    fn usage(m: impl Into<String>) -> Self {
        CliError { class: "usage", code: 2, message: m.into() }
    }
    fn data(m: impl Into<String>) -> Self {
        CliError { class: "data", code: 3, message: m.into() }
    }
    fn runtime(m: impl Into<String>) -> Self {
        CliError { class: "runtime", code: 4, message: m.into() }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let m = e.to_string();
        match e {
            TrainError::InvalidConfig(_) => CliError::usage(m),
            TrainError::Model(_) | TrainError::Denoise(_) => CliError::runtime(m),
            _ => CliError::data(m),
        }
    }
}

macro_rules! data_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::data(e.to_string())
            }
        }
    )*};
}
data_errors!(corpus::CorpusError, metrics::MetricsError, javagen::tokenizer::TokenizerError, javagen::denoise::ShardError, std::io::Error);

type CliResult = Result<(), CliError>;

fn print_json(v: &impl Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn write_json(path: &Path, v: &impl Serialize) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(v).expect("serializable");
    text.push('\n');
    std::fs::write(path, text)
}

fn parent_dir(path: &Path) -> std::io::Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => std::fs::create_dir_all(p),
        _ => Ok(()),
    }
}

/// Records when the file parses as such, otherwise plain lines.
fn load_texts(path: &Path) -> Result<Vec<String>, CliError> {
    match load_split(path, Split::Train) {
        Ok(samples) if !samples.is_empty() => Ok(samples.into_iter().flat_map(|s| [s.nl, s.code]).filter(|t| !t.is_empty()).collect()),
        Ok(_) => Ok(Vec::new()),
        Err(corpus::CorpusError::MalformedLine(_)) => Ok(load_code_lines(path)?),
        Err(e) => Err(e.into()),
    }
}

fn cmd_clean(splits: &SplitPaths, out_dir: &Path, rules: CleaningRules, seq: bool) -> CliResult {
    let ds = splits.load()?;
    let (cleaned, report) = corpus::clean_dataset(ds, &rules);
    std::fs::create_dir_all(out_dir)?;
    for (split, samples) in &cleaned {
        write_split(&out_dir.join(format!("{}.jsonl", split.name())), samples)?;
    }
    let pool: Vec<Sample> = corpus::build_pretraining_pool(&cleaned)
        .into_iter()
        .enumerate()
        .map(|(id, code)| Sample { id, nl: String::new(), code, split: Split::Train })
        .collect();
    write_split(&out_dir.join("pretrain_pool.jsonl"), &pool)?;
    write_json(&out_dir.join("cleaning_report.json"), &report)?;
    let mut m = RunManifest::new("clean", &rules, None, seq);
    m.inputs(splits.iter().map(|(_, p)| p))?;
    m.write_in(out_dir)?;
    print_json(&report);
    Ok(())
}

fn cmd_tokenizer_train(inputs: &[PathBuf], vocab_size: usize, out: &Path, seq: bool) -> CliResult {
    let mut texts = Vec::new();
    for p in inputs {
        texts.extend(load_texts(p)?);
    }
    let vocab = Vocabulary::train(&texts, vocab_size)?;
    parent_dir(out)?;
    vocab.save(out)?;
    let mut m = RunManifest::new("tokenizer-train", serde_json::json!({ "vocab_size": vocab_size }), None, seq);
    m.inputs(inputs)?;
    m.write_beside(out)?;
    println!("vocabulary of {} ids ({} merges) written to {}; fingerprint {}", vocab.len(), vocab.num_merges(), out.display(), vocab.fingerprint());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_make_shards(vocab: &Path, code: &Path, out: &Path, input_len: usize, target_len: usize, seed: u64, noise: NoiseConfig, seq: bool) -> CliResult {
    noise.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let v = Vocabulary::load(vocab)?;
    let docs = load_code_lines(code)?;
    let examples = docs
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let s = Rng::derive(seed, &[i as u64]).next_u64();
            fit_denoising_example(&v.encode(d), v.len(), &noise, s, input_len, target_len)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let narrow = |n: usize| u32::try_from(n).map_err(|_| CliError::usage(format!("length {n} does not fit the shard format")));
    let shard = Shard { max_input_len: narrow(input_len)?, max_target_len: narrow(target_len)?, examples };
    parent_dir(out)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(out)?);
    shard.write_to(&mut w)?;
    w.flush()?;
    let cfg = serde_json::json!({ "input_len": input_len, "target_len": target_len, "noise": noise });
    let mut m = RunManifest::new("make-pretrain-shards", cfg, Some(seed), seq);
    m.inputs([&vocab.to_path_buf(), &code.to_path_buf()])?;
    m.write_beside(out)?;
    println!("{} denoising examples written to {}", shard.examples.len(), out.display());
    Ok(())
}

fn cmd_train(flags: &RunFlags, mode: Mode, seq: bool) -> CliResult {
    let cfg = flags.resolve(mode)?;
    let out = cfg.output_dir.clone().ok_or_else(|| CliError::usage("output_dir is required"))?;
    let mut m = RunManifest::new(if mode == Mode::Pretrain { "pretrain" } else { "finetune" }, &cfg, Some(cfg.seed), seq);
    let d = &cfg.data;
    m.inputs(d.vocab.iter().chain(&d.train).chain(&d.code).chain(&d.shards).chain(&cfg.init_checkpoint).chain(&cfg.resume))?;
    let art = train::run(&cfg)?;
    m.write_in(&out)?;
    let s = &art.summary;
    println!(
        "{} steps (global step {}) on {} examples; loss {:.4} -> {:.4}; truncated inputs {}, truncated targets {}",
        s.steps_run, s.global_step, s.examples, s.initial_loss, s.final_loss, s.inputs_truncated, s.samples_truncated
    );
    println!("final checkpoint {}", art.final_checkpoint.display());
    Ok(())
}

fn cmd_generate(checkpoint: &Path, vocab: &Path, input: &Path, out: &Path, input_len: usize, max_len: usize, seq: bool) -> CliResult {
    let v = Vocabulary::load(vocab)?;
    let c = Checkpoint::load(checkpoint)?;
    if c.vocab_fingerprint != v.fingerprint() {
        return Err(TrainError::VocabMismatch { expected: c.vocab_fingerprint, found: v.fingerprint() }.into());
    }
    let inputs: Vec<String> = load_split(input, Split::Test)?.into_iter().map(|s| s.nl).collect();
    let preds = train::generate(&c.params, &v, &inputs, input_len, max_len)?;
    parent_dir(out)?;
    let mut text = String::new();
    for p in &preds {
        let _ = writeln!(text, "{p}");
    }
    std::fs::write(out, text)?;
    let cfg = serde_json::json!({ "input_len": input_len, "max_len": max_len });
    let mut m = RunManifest::new("generate", cfg, None, seq);
    m.inputs([&checkpoint.to_path_buf(), &vocab.to_path_buf(), &input.to_path_buf()])?;
    m.write_beside(out)?;
    println!("{} predictions written to {}", preds.len(), out.display());
    Ok(())
}

fn cmd_evaluate(pred: &Path, reference: &Path, w: &CodeBleuWeights, out: Option<&Path>) -> CliResult {
    let report = metrics::evaluate_file(pred, reference, w)?;
    print!("{}", report.render_table());
    if let Some(out) = out {
        parent_dir(out)?;
        write_json(out, &report)?;
    }
    Ok(())
}

fn cmd_grid(config: &Path, out_dir: &Path, w: &CodeBleuWeights, seq: bool) -> CliResult {
    let mut base = overrides::read_table(config)?;
    let cells = match base.remove("cells") {
        Some(toml::Value::Array(a)) if !a.is_empty() => a,
        _ => return Err(CliError::usage("grid file needs a non-empty [[cells]] list")),
    };
    let eval = match base.remove("eval") {
        Some(toml::Value::String(s)) => PathBuf::from(s),
        _ => return Err(CliError::usage("grid file needs `eval = \"<records>\"`")),
    };
    let mut configs = Vec::with_capacity(cells.len());
    for cell in cells {
        let toml::Value::Table(cell) = cell else {
            return Err(CliError::usage("each [[cells]] entry must be a table"));
        };
        let mut t = base.clone();
        t.extend(cell);
        configs.push(overrides::finish(t, Mode::Finetune)?);
    }
    let first = &configs[0];
    let vocab_path = first.data.vocab.clone().ok_or_else(|| CliError::usage("data.vocab is required"))?;
    let train_path = first.data.train.clone().ok_or_else(|| CliError::usage("data.train is required"))?;
    if configs.iter().any(|c| c.data != first.data || c.init_checkpoint != first.init_checkpoint) {
        return Err(CliError::usage("grid cells must share data paths and init_checkpoint"));
    }
    let vocab = Vocabulary::load(&vocab_path)?;
    let train_set = load_split(&train_path, Split::Train)?;
    let eval_set = load_split(&eval, Split::Test)?;
    let init = first.init_checkpoint.as_deref().map(Checkpoint::load).transpose()?;
    let report: GridReport = run_grid(&configs, &vocab, &train_set, &eval_set, init.as_ref(), w)?;
    std::fs::create_dir_all(out_dir)?;
    write_json(&out_dir.join("grid_report.json"), &report)?;
    std::fs::write(out_dir.join("grid.md"), report.render())?;
    let mut m = RunManifest::new("grid", serde_json::json!({ "cells": &configs, "eval": &eval, "weights": w }), Some(first.seed), seq);
    m.inputs([&config.to_path_buf(), &vocab_path, &train_path, &eval])?;
    m.inputs(&first.init_checkpoint)?;
    m.write_in(out_dir)?;
    print!("{}", report.render());
    Ok(())
}

fn cmd_report_compare(reports: &[String], no_baselines: bool, out: Option<&Path>) -> CliResult {
    let mut rows = if no_baselines { Vec::new() } else { baseline_rows() };
    for spec in reports {
        let (name, path) = spec.split_once('=').ok_or_else(|| CliError::usage(format!("expected NAME=PATH, got `{spec}`")))?;
        let path = Path::new(path);
        let text = std::fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let report: EvalReport = serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        rows.push(ComparisonRow::from_report(name, &report));
    }
    let table = render_comparison(&rows);
    print!("{table}");
    if let Some(out) = out {
        parent_dir(out)?;
        std::fs::write(out, &table)?;
    }
    Ok(())
}

fn cmd_debug_ast(code: Option<&str>, file: Option<&Path>) -> CliResult {
    let src = match (code, file) {
        (Some(c), _) => c.to_string(),
        (None, Some(f)) => std::fs::read_to_string(f).map_err(|e| CliError::data(format!("{}: {e}", f.display())))?,
        (None, None) => return Err(CliError::usage("give --code or --file")),
    };
    let tokens = java::lex(&src).map_err(|e| CliError::data(e.to_string()))?;
    println!("tokens:");
    for t in &tokens {
        println!("  {} {:?}", t.kind.name(), t.text);
    }
    let ast = java::parse(&src).map_err(|e| CliError::data(e.to_string()))?;
    println!("ast:");
    for line in ast.pretty().lines() {
        println!("  {line}");
    }
    let subtrees = java::enumerate_subtrees(&ast);
    println!("subtrees: {} ({} distinct)", java::multiset_size(&subtrees), subtrees.len());
    println!("edges:");
    for e in java::extract_dataflow(&ast) {
        println!("  {} <- {} {:?}", e.use_var, e.def_var, e.relation);
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> CliResult {
    let seq = cli.sequential;
    match &cli.command {
        Command::CorpusStats(s) => {
            print_json(&corpus::stats(&s.load()?));
            Ok(())
        }
        Command::Clean { splits, out_dir, keep_empty, keep_invalid_utf8, keep_lex_failures, max_code_chars } => {
            let rules = CleaningRules {
                empty_code: !keep_empty,
                invalid_utf8: !keep_invalid_utf8,
                lex_failure: !keep_lex_failures,
                max_code_chars: (*max_code_chars > 0).then_some(*max_code_chars),
            };
            cmd_clean(splits, out_dir, rules, seq)
        }
        Command::TokenizerTrain { input, vocab_size, out } => cmd_tokenizer_train(input, *vocab_size, out, seq),
        Command::SeqLengths { vocab, data } => {
            let v = Vocabulary::load(vocab)?;
            let profile = max_pair_length(&v, &load_split(data, Split::Train)?)?;
            println!("max_input_len {}", profile.max_input_len);
            println!("max_target_len {}", profile.max_target_len);
            let hist = BTreeMap::from([("input", &profile.input_histogram), ("target", &profile.target_histogram)]);
            println!("histograms {}", serde_json::to_string(&hist).expect("serializable"));
            Ok(())
        }
        Command::MakePretrainShards { vocab, code, out, input_len, target_len, seed, noise_rate, mean_span } => {
            let noise = NoiseConfig { rate: *noise_rate, mean_span: *mean_span };
            cmd_make_shards(vocab, code, out, *input_len, *target_len, *seed, noise, seq)
        }
        Command::Pretrain(flags) => cmd_train(flags, Mode::Pretrain, seq),
        Command::Finetune(flags) => cmd_train(flags, Mode::Finetune, seq),
        Command::Generate { checkpoint, vocab, input, out, input_len, max_len } => cmd_generate(checkpoint, vocab, input, out, *input_len, *max_len, seq),
        Command::Evaluate { pred, reference, weights, out } => cmd_evaluate(pred, reference, &weights.weights()?, out.as_deref()),
        Command::Grid { config, out_dir, weights } => cmd_grid(config, out_dir, &weights.weights()?, seq),
        Command::ReportCompare { reports, no_baselines, out } => cmd_report_compare(reports, *no_baselines, out.as_deref()),
        Command::DebugAst { code, file } => cmd_debug_ast(code.as_deref(), file.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.class, "code": e.code, "message": e.message });
            eprintln!("{line}");
            ExitCode::from(e.code)
        }
    }
}
