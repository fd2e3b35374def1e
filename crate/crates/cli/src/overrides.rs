//! Run-config assembly: a TOML file, then command-line flags on top.
//!
//! Every flag names a config key; a flag that is given replaces the file value.

use std::path::{Path, PathBuf};

use clap::Args;
use javagen::train::{Mode, TrainError, TrainingRunConfig};
use toml::{Table, Value};

#[derive(Debug, Clone, Default, Args)]
pub struct RunFlags {
    /// Run config file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub input_len: Option<usize>,
    #[arg(long)]
    pub target_len: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `optimizer.peak_lr`
    #[arg(long)]
    pub peak_lr: Option<f64>,
    /// `noise.rate`
    #[arg(long)]
    pub noise_rate: Option<f64>,
    /// `noise.mean_span`
    #[arg(long)]
    pub mean_span: Option<f64>,
    #[arg(long)]
    pub init_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub eval_examples: Option<usize>,
    /// `data.vocab`
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// `data.train`
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// `data.code`
    #[arg(long)]
    pub code: Option<PathBuf>,
    /// `data.shards`; repeatable.
    #[arg(long)]
    pub shards: Vec<PathBuf>,
}

fn path_value(p: &Path) -> Value {
    Value::String(p.display().to_string())
}

fn section<'a>(table: &'a mut Table, key: &str) -> Result<&'a mut Table, TrainError> {
    table
        .entry(key)
        .or_insert_with(|| Value::Table(Table::new()))
        .as_table_mut()
        .ok_or_else(|| TrainError::InvalidConfig(format!("`{key}` must be a table")))
}

pub fn read_table(path: &Path) -> Result<Table, TrainError> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => TrainError::MissingFile(path.display().to_string()),
        _ => TrainError::Io(e),
    })?;
    text.parse::<Table>().map_err(|e| TrainError::InvalidConfig(format!("{}: {}", path.display(), e.message())))
}

impl RunFlags {
    /// Writes every given flag into `table`.
    pub fn apply(&self, table: &mut Table) -> Result<(), TrainError> {
        let top = [
            ("steps", self.steps.map(|v| Value::Integer(v as i64))),
            ("batch_size", self.batch_size.map(|v| Value::Integer(v as i64))),
            ("input_len", self.input_len.map(|v| Value::Integer(v as i64))),
            ("target_len", self.target_len.map(|v| Value::Integer(v as i64))),
            ("seed", self.seed.map(|v| Value::Integer(v as i64))),
            ("eval_examples", self.eval_examples.map(|v| Value::Integer(v as i64))),
            ("init_checkpoint", self.init_checkpoint.as_deref().map(path_value)),
            ("resume", self.resume.as_deref().map(path_value)),
            ("output_dir", self.output_dir.as_deref().map(path_value)),
        ];
        for (k, v) in top {
            if let Some(v) = v {
                table.insert(k.into(), v);
            }
        }
        if let Some(lr) = self.peak_lr {
            section(table, "optimizer")?.insert("peak_lr".into(), Value::Float(lr));
        }
        for (k, v) in [("rate", self.noise_rate), ("mean_span", self.mean_span)] {
            if let Some(v) = v {
                section(table, "noise")?.insert(k.into(), Value::Float(v));
            }
        }
        let data = [("vocab", &self.vocab), ("train", &self.train), ("code", &self.code)];
        for (k, v) in data {
            if let Some(p) = v {
                section(table, "data")?.insert(k.into(), path_value(p));
            }
        }
        if !self.shards.is_empty() {
            let list = self.shards.iter().map(|p| path_value(p)).collect();
            section(table, "data")?.insert("shards".into(), Value::Array(list));
        }
        Ok(())
    }

    /// File values, then flags, then the subcommand's mode.
    pub fn resolve(&self, mode: Mode) -> Result<TrainingRunConfig, TrainError> {
        let mut table = match &self.config {
            Some(p) => read_table(p)?,
            None => Table::new(),
        };
        self.apply(&mut table)?;
        finish(table, mode)
    }
}

pub fn finish(mut table: Table, mode: Mode) -> Result<TrainingRunConfig, TrainError> {
    let name = match mode {
        Mode::Pretrain => "pretrain",
        Mode::Finetune => "finetune",
    };
    if let Some(found) = table.get("mode").and_then(Value::as_str) {
        if found != name {
            return Err(TrainError::InvalidConfig(format!("config mode is `{found}` but the subcommand runs `{name}`")));
        }
    }
    table.insert("mode".into(), Value::String(name.into()));
    TrainingRunConfig::from_toml_str(&toml::to_string(&table).expect("table serializes"))
}
