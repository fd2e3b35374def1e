//! Step-based pretraining and fine-tuning, checkpoint transfer, generation and
//! the experiment grid.
//!
//! Batches are a pure function of `(seed, step)`: the example stream cycles
//! through the data, reshuffling every epoch with a seed derived from the
//! epoch number, and step `s` takes stream positions `s·B .. s·B+B`. Resuming
//! from any checkpoint therefore replays exactly the batches an uninterrupted
//! run would see.

mod checkpoint;
mod grid;

use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{load_code_lines, load_split, CorpusError, Sample, Split};
use crate::denoise::{corrupt, shift_right, DenoiseError, DenoisingExample, NoiseConfig, Shard, ShardError};
use crate::metrics::MetricsError;
use crate::model::{batch_loss, greedy_decode, init, loss_and_grad, ModelConfig, ModelError, ModelParams};
use crate::rng::Rng;
use crate::tokenizer::{TokenizerError, Vocabulary, EOS_ID, PAD_ID};

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use grid::{run_grid, GridReport, GridRow};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error("vocabulary fingerprint {found} does not match checkpoint fingerprint {expected}")]
    VocabMismatch { expected: String, found: String },
    #[error("model config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("missing file {0}")]
    MissingFile(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Denoise(#[from] DenoiseError),
    #[error(transparent)]
    Shard(#[from] ShardError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Pretrain,
    Finetune,
}

/// Adam with linear warmup over `warmup_fraction` of the run, then
/// inverse-square-root decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub peak_lr: f64,
    pub warmup_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { peak_lr: 1e-2, warmup_fraction: 0.01, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, clip_norm: Some(1.0) }
    }
}

/// Learning rate for update number `step` (1-based) of a `total`-step run.
pub fn learning_rate(cfg: &OptimizerConfig, step: u64, total: u64) -> f64 {
    let warm = ((total as f64 * cfg.warmup_fraction).ceil() as u64).max(1) as f64;
    let s = step.max(1) as f64;
    if s <= warm {
        cfg.peak_lr * s / warm
    } else {
        cfg.peak_lr * (warm / s).sqrt()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub vocab: Option<PathBuf>,
    /// Pretraining pool: one code document per line, or a record file.
    pub code: Option<PathBuf>,
    /// Pretraining alternative: pre-built denoising shards.
    #[serde(default)]
    pub shards: Vec<PathBuf>,
    /// Fine-tuning records (`nl`/`code` JSON lines).
    pub train: Option<PathBuf>,
}

/// One training run. Loaded from TOML; see the README for the schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingRunConfig {
    pub mode: Mode,
    /// Total optimizer updates; a resumed run stops at this global step.
    pub steps: u64,
    pub batch_size: usize,
    pub input_len: usize,
    pub target_len: usize,
    pub seed: u64,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    /// Defaults to the toy preset sized to the vocabulary, or to the
    /// starting checkpoint's config.
    #[serde(default)]
    pub model: Option<ModelConfig>,
    /// Weights to start from; optimizer state and step restart at 0.
    #[serde(default)]
    pub init_checkpoint: Option<PathBuf>,
    /// Checkpoint to continue, keeping optimizer state and step.
    #[serde(default)]
    pub resume: Option<PathBuf>,
    #[serde(default)]
    pub data: DataPaths,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Examples scored for the before/after dataset loss.
    #[serde(default = "default_eval_examples")]
    pub eval_examples: usize,
}

fn default_eval_examples() -> usize {
    256
}

impl TrainingRunConfig {
    pub fn new(mode: Mode, steps: u64, batch_size: usize, input_len: usize, target_len: usize, seed: u64) -> Self {
        TrainingRunConfig {
            mode,
            steps,
            batch_size,
            input_len,
            target_len,
            seed,
            optimizer: OptimizerConfig::default(),
            noise: NoiseConfig::default(),
            model: None,
            init_checkpoint: None,
            resume: None,
            data: DataPaths::default(),
            output_dir: None,
            eval_examples: default_eval_examples(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, TrainError> {
        let cfg: Self = toml::from_str(text).map_err(|e| TrainError::InvalidConfig(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => TrainError::MissingFile(path.display().to_string()),
            _ => TrainError::Io(e),
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.input_len < 2 || self.target_len < 2 {
            return bad(format!("input_len and target_len must be at least 2, got {} and {}", self.input_len, self.target_len));
        }
        let o = &self.optimizer;
        if !(o.peak_lr > 0.0) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.epsilon > 0.0) {
            return bad("optimizer needs peak_lr > 0, betas in [0,1) and epsilon > 0".into());
        }
        if !(0.0..=1.0).contains(&o.warmup_fraction) || o.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return bad("warmup_fraction must be in [0,1] and clip_norm positive".into());
        }
        if self.init_checkpoint.is_some() && self.resume.is_some() {
            return bad("init_checkpoint and resume are mutually exclusive".into());
        }
        self.noise.validate()?;
        if let Some(m) = &self.model {
            m.validate()?;
        }
        Ok(())
    }

    pub fn checkpoint_interval(&self) -> u64 {
        (self.steps / 10).max(1)
    }
}

/// How a run obtains its starting state.
#[derive(Debug, Clone)]
pub enum Start {
    Fresh,
    /// Copy weights; optimizer state and step restart.
    Transfer(Checkpoint),
    /// Continue with optimizer state and step.
    Resume(Checkpoint),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub tokens: usize,
}

pub enum TrainEvent<'a> {
    Step(&'a StepRecord),
    /// Emitted every `checkpoint_interval` steps and at the last step.
    Checkpoint(&'a Checkpoint),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub steps_run: u64,
    pub global_step: u64,
    pub examples: usize,
    /// Mean token loss over the first `eval_examples` examples before and
    /// after training.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub last_step_loss: Option<f64>,
    /// Inputs longer than `input_len` (with end-of-sequence).
    pub inputs_truncated: usize,
    /// Targets with `|encode(code)| + 1 > target_len`.
    pub samples_truncated: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub summary: RunSummary,
}

struct Prepared {
    enc: Vec<u32>,
    dec: Vec<u32>,
    target: Vec<u32>,
}

fn padded(mut ids: Vec<u32>, len: usize) -> Vec<u32> {
    ids.resize(len, PAD_ID);
    ids
}

/// Encoder input for `text`: at most `input_len - 1` tokens plus eos.
/// Returns whether tokens were dropped.
pub fn encode_input(vocab: &Vocabulary, text: &str, input_len: usize) -> (Vec<u32>, bool) {
    let mut ids = vocab.encode(text);
    let cut = ids.len() + 1 > input_len;
    ids.truncate(input_len.saturating_sub(1));
    ids.push(EOS_ID);
    (ids, cut)
}

/// Target for `code`: tokens plus eos, cut to `target_len`. A cut target
/// loses its eos. Returns whether it was cut.
pub fn encode_target(vocab: &Vocabulary, code: &str, target_len: usize) -> (Vec<u32>, bool) {
    let mut ids = vocab.encode(code);
    ids.push(EOS_ID);
    let cut = ids.len() > target_len;
    ids.truncate(target_len);
    (ids, cut)
}

trait ExampleSource {
    fn len(&self) -> usize;
    /// Example `idx` as seen at stream position `pos`.
    fn example(&self, pos: u64, idx: usize) -> Result<Prepared, TrainError>;
}

struct PairSource {
    pairs: Vec<(Vec<u32>, Vec<u32>)>,
    input_len: usize,
    target_len: usize,
}

impl ExampleSource for PairSource {
    fn len(&self) -> usize {
        self.pairs.len()
    }

    fn example(&self, _pos: u64, idx: usize) -> Result<Prepared, TrainError> {
        let (enc, target) = &self.pairs[idx];
        Ok(Prepared {
            enc: padded(enc.clone(), self.input_len),
            dec: padded(shift_right(target)?, self.target_len),
            target: padded(target.clone(), self.target_len),
        })
    }
}

const NOISE_KEY: u64 = 0x6e6f_6973;
const ORDER_KEY: u64 = 0x6f72_6465;

/// Code documents corrupted afresh at every stream position.
struct DocSource {
    docs: Vec<Vec<u32>>,
    vocab_size: usize,
    noise: NoiseConfig,
    seed: u64,
    input_len: usize,
    target_len: usize,
}

impl ExampleSource for DocSource {
    fn len(&self) -> usize {
        self.docs.len()
    }

    fn example(&self, pos: u64, idx: usize) -> Result<Prepared, TrainError> {
        let noise_seed = Rng::derive(self.seed, &[NOISE_KEY, pos]).next_u64();
        let ex = fit_denoising_example(&self.docs[idx], self.vocab_size, &self.noise, noise_seed, self.input_len, self.target_len)?;
        Ok(Prepared {
            enc: padded(ex.encoder_input, self.input_len),
            dec: padded(ex.decoder_input, self.target_len),
            target: padded(ex.target, self.target_len),
        })
    }
}

/// Corrupts at most `input_len - 1` leading tokens of `doc`, dropping more
/// from the end until the target also fits in `target_len`. Output is unpadded.
pub fn fit_denoising_example(
    doc: &[u32],
    vocab_size: usize,
    noise: &NoiseConfig,
    seed: u64,
    input_len: usize,
    target_len: usize,
) -> Result<DenoisingExample, TrainError> {
    if input_len < 2 || target_len < 2 {
        return Err(TrainError::InvalidConfig("input_len and target_len must be at least 2".into()));
    }
    // Encoder input never exceeds raw length + 1.
    let mut raw = &doc[..doc.len().min(input_len - 1)];
    loop {
        let ex = corrupt(raw, vocab_size, noise, seed)?;
        if ex.target.len() <= target_len {
            return Ok(ex);
        }
        let over = ex.target.len() - target_len;
        raw = &raw[..raw.len() - over.max(1).min(raw.len())];
    }
}

/// Pre-built denoising examples, cut to the run's lengths.
struct ShardSource {
    examples: Vec<DenoisingExample>,
    input_len: usize,
    target_len: usize,
}

impl ExampleSource for ShardSource {
    fn len(&self) -> usize {
        self.examples.len()
    }

    fn example(&self, _pos: u64, idx: usize) -> Result<Prepared, TrainError> {
        let ex = &self.examples[idx];
        let mut enc = ex.encoder_input.clone();
        if enc.len() > self.input_len {
            enc.truncate(self.input_len);
            enc[self.input_len - 1] = EOS_ID;
        }
        let mut target = ex.target.clone();
        target.truncate(self.target_len);
        Ok(Prepared {
            enc: padded(enc, self.input_len),
            dec: padded(shift_right(&target)?, self.target_len),
            target: padded(target, self.target_len),
        })
    }
}

fn epoch_permutation(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    Rng::derive(seed, &[ORDER_KEY, epoch]).shuffle(&mut order);
    order
}

fn resolve_start(cfg: &TrainingRunConfig, vocab: &Vocabulary, start: Start) -> Result<Checkpoint, TrainError> {
    let fingerprint = vocab.fingerprint();
    let check_model = |found: &ModelConfig| -> Result<(), TrainError> {
        if found.vocab_size != vocab.len() {
            return Err(TrainError::ConfigMismatch(format!("model vocab_size {} but vocabulary has {} ids", found.vocab_size, vocab.len())));
        }
        match &cfg.model {
            Some(want) if want != found => Err(TrainError::ConfigMismatch(format!("run asks for {want:?}, starting point has {found:?}"))),
            _ => Ok(()),
        }
    };
    let check_vocab = |c: &Checkpoint| -> Result<(), TrainError> {
        if c.vocab_fingerprint != fingerprint {
            return Err(TrainError::VocabMismatch { expected: c.vocab_fingerprint.clone(), found: fingerprint.clone() });
        }
        Ok(())
    };
    match start {
        Start::Fresh => {
            let mc = cfg.model.clone().unwrap_or_else(|| ModelConfig::toy(vocab.len()));
            check_model(&mc)?;
            Ok(Checkpoint::from_params(init(&mc, cfg.seed)?, fingerprint))
        }
        Start::Transfer(c) => {
            check_vocab(&c)?;
            check_model(&c.params.config)?;
            Ok(Checkpoint::from_params(c.params, fingerprint))
        }
        Start::Resume(c) => {
            check_vocab(&c)?;
            check_model(&c.params.config)?;
            Ok(c)
        }
    }
}

fn adam_update(state: &mut Checkpoint, grad: &[f32], lr: f64, o: &OptimizerConfig) {
    let norm = grad.iter().map(|&g| g as f64 * g as f64).sum::<f64>().sqrt();
    let scale = match o.clip_norm {
        Some(c) if norm > c => (c / norm) as f32,
        _ => 1.0,
    };
    let t = (state.global_step + 1) as i32;
    let (b1, b2) = (o.beta1 as f32, o.beta2 as f32);
    let c1 = (1.0 - o.beta1.powi(t)) as f32;
    let c2 = (1.0 - o.beta2.powi(t)) as f32;
    let (lr, eps) = (lr as f32, o.epsilon as f32);
    let p = &mut state.params.data;
    for i in 0..p.len() {
        let g = grad[i] * scale;
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        p[i] -= lr * mh / (vh.sqrt() + eps);
    }
}

fn collect_batch(source: &dyn ExampleSource, positions: impl Iterator<Item = (u64, usize)>) -> Result<[Vec<Vec<u32>>; 3], TrainError> {
    let mut out: [Vec<Vec<u32>>; 3] = Default::default();
    for (pos, idx) in positions {
        let ex = source.example(pos, idx)?;
        out[0].push(ex.enc);
        out[1].push(ex.dec);
        out[2].push(ex.target);
    }
    Ok(out)
}

/// Mean token loss over the first `limit` examples, each taken at stream
/// position equal to its index.
fn dataset_loss(params: &ModelParams<f32>, source: &dyn ExampleSource, limit: usize, batch: usize) -> Result<f64, TrainError> {
    let n = source.len().min(limit);
    let (mut total, mut tokens) = (0.0f64, 0usize);
    let mut start = 0;
    while start < n {
        let end = (start + batch).min(n);
        let [enc, dec, tgt] = collect_batch(source, (start..end).map(|i| (i as u64, i)))?;
        let (sum, count) = batch_loss(params, &enc, &dec, &tgt)?;
        total += sum as f64;
        tokens += count;
        start = end;
    }
    Ok(if tokens == 0 { 0.0 } else { total / tokens as f64 })
}

fn train_loop(
    cfg: &TrainingRunConfig,
    source: &dyn ExampleSource,
    mut state: Checkpoint,
    sink: &mut dyn FnMut(TrainEvent) -> Result<(), TrainError>,
) -> Result<(Checkpoint, u64, Option<f64>), TrainError> {
    let n = source.len();
    if n == 0 && cfg.steps > state.global_step {
        return Err(TrainError::InvalidConfig("no training examples".into()));
    }
    let interval = cfg.checkpoint_interval();
    let b = cfg.batch_size as u64;
    let mut perm: Option<(u64, Vec<usize>)> = None;
    let mut last = None;
    let mut run = 0;
    while state.global_step < cfg.steps {
        let step = state.global_step;
        let mut positions = Vec::with_capacity(cfg.batch_size);
        for pos in step * b..(step + 1) * b {
            let epoch = pos / n as u64;
            if perm.as_ref().map(|(e, _)| *e) != Some(epoch) {
                perm = Some((epoch, epoch_permutation(cfg.seed, epoch, n)));
            }
            let order = &perm.as_ref().expect("set above").1;
            positions.push((pos, order[(pos % n as u64) as usize]));
        }
        let [enc, dec, tgt] = collect_batch(source, positions.into_iter())?;
        let lg = loss_and_grad(&state.params, &enc, &dec, &tgt)?;
        let lr = learning_rate(&cfg.optimizer, step + 1, cfg.steps);
        adam_update(&mut state, &lg.grad, lr, &cfg.optimizer);
        state.global_step += 1;
        run += 1;
        let rec = StepRecord { step: state.global_step, loss: lg.loss as f64, lr, tokens: lg.tokens };
        last = Some(rec.loss);
        sink(TrainEvent::Step(&rec))?;
        if state.global_step.is_multiple_of(interval) || state.global_step == cfg.steps {
            sink(TrainEvent::Checkpoint(&state))?;
        }
    }
    Ok((state, run, last))
}

fn run_with_source(
    cfg: &TrainingRunConfig,
    source: &dyn ExampleSource,
    state: Checkpoint,
    truncation: (usize, usize),
    sink: &mut dyn FnMut(TrainEvent) -> Result<(), TrainError>,
) -> Result<TrainOutcome, TrainError> {
    let eval_batch = cfg.batch_size.max(8);
    let initial_loss = dataset_loss(&state.params, source, cfg.eval_examples, eval_batch)?;
    let (checkpoint, steps_run, last_step_loss) = train_loop(cfg, source, state, sink)?;
    let final_loss = if steps_run == 0 { initial_loss } else { dataset_loss(&checkpoint.params, source, cfg.eval_examples, eval_batch)? };
    let summary = RunSummary {
        mode: cfg.mode,
        steps_run,
        global_step: checkpoint.global_step,
        examples: source.len(),
        initial_loss,
        final_loss,
        last_step_loss,
        inputs_truncated: truncation.0,
        samples_truncated: truncation.1,
    };
    Ok(TrainOutcome { checkpoint, summary })
}

fn expect_mode(cfg: &TrainingRunConfig, mode: Mode) -> Result<(), TrainError> {
    cfg.validate()?;
    if cfg.mode != mode {
        return Err(TrainError::InvalidConfig(format!("config mode is {:?}, expected {mode:?}", cfg.mode)));
    }
    Ok(())
}

/// Denoising pretraining on a code-only pool.
pub fn pretrain(
    cfg: &TrainingRunConfig,
    vocab: &Vocabulary,
    docs: &[String],
    start: Start,
    sink: &mut dyn FnMut(TrainEvent) -> Result<(), TrainError>,
) -> Result<TrainOutcome, TrainError> {
    expect_mode(cfg, Mode::Pretrain)?;
    let state = resolve_start(cfg, vocab, start)?;
    let source = DocSource {
        docs: docs.iter().map(|d| vocab.encode(d)).collect(),
        vocab_size: vocab.len(),
        noise: cfg.noise,
        seed: cfg.seed,
        input_len: cfg.input_len,
        target_len: cfg.target_len,
    };
    let cut = source.docs.iter().filter(|d| d.len() + 1 > cfg.input_len).count();
    run_with_source(cfg, &source, state, (cut, 0), sink)
}

/// Denoising pretraining on pre-built shards.
pub fn pretrain_from_shards(
    cfg: &TrainingRunConfig,
    vocab: &Vocabulary,
    shards: &[Shard],
    start: Start,
    sink: &mut dyn FnMut(TrainEvent) -> Result<(), TrainError>,
) -> Result<TrainOutcome, TrainError> {
    expect_mode(cfg, Mode::Pretrain)?;
    let state = resolve_start(cfg, vocab, start)?;
    let examples: Vec<_> = shards.iter().flat_map(|s| s.examples.iter().cloned()).collect();
    let vocab_size = vocab.len();
    if let Some(&id) = examples.iter().flat_map(|e| e.encoder_input.iter().chain(&e.target)).find(|&&id| id as usize >= vocab_size) {
        return Err(ModelError::IdOutOfRange { id, vocab_size }.into());
    }
    let inputs_cut = examples.iter().filter(|e| e.encoder_input.len() > cfg.input_len).count();
    let targets_cut = examples.iter().filter(|e| e.target.len() > cfg.target_len).count();
    let source = ShardSource { examples, input_len: cfg.input_len, target_len: cfg.target_len };
    run_with_source(cfg, &source, state, (inputs_cut, targets_cut), sink)
}

/// Supervised fine-tuning on `nl → code` pairs.
pub fn finetune(
    cfg: &TrainingRunConfig,
    vocab: &Vocabulary,
    samples: &[Sample],
    start: Start,
    sink: &mut dyn FnMut(TrainEvent) -> Result<(), TrainError>,
) -> Result<TrainOutcome, TrainError> {
    expect_mode(cfg, Mode::Finetune)?;
    let state = resolve_start(cfg, vocab, start)?;
    let (mut inputs_cut, mut targets_cut) = (0, 0);
    let pairs = samples
        .iter()
        .map(|s| {
            let (enc, ci) = encode_input(vocab, &s.nl, cfg.input_len);
            let (tgt, ct) = encode_target(vocab, &s.code, cfg.target_len);
            inputs_cut += ci as usize;
            targets_cut += ct as usize;
            (enc, tgt)
        })
        .collect();
    let source = PairSource { pairs, input_len: cfg.input_len, target_len: cfg.target_len };
    run_with_source(cfg, &source, state, (inputs_cut, targets_cut), sink)
}

/// Greedy predictions for each input text, one line each.
pub fn generate(params: &ModelParams<f32>, vocab: &Vocabulary, inputs: &[String], input_len: usize, max_len: usize) -> Result<Vec<String>, TrainError> {
    if max_len == 0 || input_len < 2 {
        return Err(TrainError::InvalidConfig("generation needs max_len ≥ 1 and input_len ≥ 2".into()));
    }
    inputs
        .iter()
        .map(|text| {
            let (enc, _) = encode_input(vocab, text, input_len);
            let mut ids = greedy_decode(params, &enc, max_len);
            if ids.last() == Some(&EOS_ID) {
                ids.pop();
            }
            let text = vocab.decode(&ids)?;
            Ok(text.replace(['\n', '\r'], " "))
        })
        .collect()
}

/// Ignores every event.
pub fn discard(_: TrainEvent) -> Result<(), TrainError> {
    Ok(())
}

/// Everything a file-driven run wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub final_checkpoint: PathBuf,
    pub periodic_checkpoints: Vec<PathBuf>,
    pub metrics_log: PathBuf,
    pub summary: RunSummary,
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf, TrainError> {
    p.as_ref().ok_or_else(|| TrainError::InvalidConfig(format!("{what} is required")))
}

/// Runs a config end to end: loads data, trains, and writes periodic
/// checkpoints, `final.ckpt`, an append-only `metrics.jsonl` and
/// `summary.json` into `output_dir`.
pub fn run(cfg: &TrainingRunConfig) -> Result<RunArtifacts, TrainError> {
    cfg.validate()?;
    let out = required(&cfg.output_dir, "output_dir")?.clone();
    let vocab = Vocabulary::load(required(&cfg.data.vocab, "data.vocab")?)?;
    let start = match (&cfg.resume, &cfg.init_checkpoint) {
        (Some(p), _) => Start::Resume(Checkpoint::load(p)?),
        (None, Some(p)) => Start::Transfer(Checkpoint::load(p)?),
        (None, None) => Start::Fresh,
    };
    std::fs::create_dir_all(&out)?;
    let metrics_log = out.join("metrics.jsonl");
    let mut log = std::fs::OpenOptions::new().create(true).append(true).open(&metrics_log)?;
    let mut periodic = Vec::new();
    let mut sink = |ev: TrainEvent| -> Result<(), TrainError> {
        match ev {
            TrainEvent::Step(rec) => {
                writeln!(log, "{}", serde_json::to_string(rec).expect("record serializes"))?;
                log::info!("step {} loss {:.4} lr {:.2e}", rec.step, rec.loss, rec.lr);
            }
            TrainEvent::Checkpoint(c) => {
                let path = out.join(format!("ckpt-{:08}.ckpt", c.global_step));
                c.save(&path)?;
                periodic.push(path);
            }
        }
        Ok(())
    };
    let outcome = match cfg.mode {
        Mode::Finetune => {
            let samples = load_split(required(&cfg.data.train, "data.train")?, Split::Train)?;
            finetune(cfg, &vocab, &samples, start, &mut sink)?
        }
        Mode::Pretrain => match (&cfg.data.code, cfg.data.shards.is_empty()) {
            (Some(code), true) => pretrain(cfg, &vocab, &load_code_lines(code)?, start, &mut sink)?,
            (None, false) => {
                let shards = cfg
                    .data
                    .shards
                    .iter()
                    .map(|p| {
                        let mut f = std::io::BufReader::new(std::fs::File::open(p)?);
                        Ok(Shard::read_from(&mut f)?)
                    })
                    .collect::<Result<Vec<_>, TrainError>>()?;
                pretrain_from_shards(cfg, &vocab, &shards, start, &mut sink)?
            }
            _ => return Err(TrainError::InvalidConfig("pretraining needs exactly one of data.code or data.shards".into())),
        },
    };
    let final_checkpoint = out.join("final.ckpt");
    outcome.checkpoint.save(&final_checkpoint)?;
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&outcome.summary).expect("summary serializes"))?;
    Ok(RunArtifacts { final_checkpoint, periodic_checkpoints: periodic, metrics_log, summary: outcome.summary })
}
