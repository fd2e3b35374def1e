//! Aligned NL/code samples in line-delimited JSON (`{"nl": …, "code": …}`
//! per line), cleaning, summary statistics, and the code-only pretraining
//! pool.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::java;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "dev" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: usize,
    pub nl: String,
    pub code: String,
    pub split: Split,
}

pub type Dataset = BTreeMap<Split, Vec<Sample>>;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("missing file {0}")]
    MissingFile(String),
    #[error("malformed record on line {0}")]
    MalformedLine(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    nl: String,
    code: String,
}

/// Parses one split from JSON-lines text. Blank lines are skipped; line
/// numbers in errors are 1-based.
pub fn parse_split(bytes: &[u8], split: Split) -> Result<Vec<Sample>, CorpusError> {
    let mut out = Vec::new();
    for (i, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        // undecodable bytes survive as U+FFFD so cleaning can see them
        let line = String::from_utf8_lossy(raw);
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(line).map_err(|_| CorpusError::MalformedLine(i + 1))?;
        out.push(Sample {
            id: out.len(),
            nl: rec.nl,
            code: rec.code,
            split,
        });
    }
    Ok(out)
}

pub fn load_split(path: &Path, split: Split) -> Result<Vec<Sample>, CorpusError> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CorpusError::MissingFile(path.display().to_string()),
        _ => CorpusError::Io(e),
    })?;
    parse_split(&bytes, split)
}

pub fn write_split(path: &Path, samples: &[Sample]) -> Result<(), CorpusError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in samples {
        let line = serde_json::to_string(&Record {
            nl: s.nl.clone(),
            code: s.code.clone(),
        })
        .expect("strings always serialize");
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads one `code` per line (plain text), or, when every non-blank line is
/// a record object, the `code` fields of a JSON-lines file.
pub fn load_code_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CorpusError::MissingFile(path.display().to_string()),
        _ => CorpusError::Io(e),
    })?;
    let text = String::from_utf8_lossy(&bytes);
    let mut lines: Vec<&str> = text.split('\n').map(|l| l.trim_end_matches('\r')).collect();
    if lines.last() == Some(&"") {
        lines.pop();
    }
    let records: Option<Vec<String>> = lines
        .iter()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str::<Record>(l).ok().map(|r| r.code))
        .collect();
    match records {
        Some(codes) if !codes.is_empty() => Ok(codes),
        _ => Ok(lines.into_iter().map(str::to_string).collect()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalReason {
    EmptyCode,
    InvalidUtf8,
    LexFailure,
    TooLong,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleaningRules {
    pub empty_code: bool,
    pub invalid_utf8: bool,
    pub lex_failure: bool,
    /// Maximum raw code length in characters; `None` disables the check.
    pub max_code_chars: Option<usize>,
}

impl Default for CleaningRules {
    fn default() -> Self {
        CleaningRules {
            empty_code: true,
            invalid_utf8: true,
            lex_failure: true,
            max_code_chars: Some(100_000),
        }
    }
}

impl CleaningRules {
    /// First failing check, in the fixed order empty, UTF-8, lexer, length.
    pub fn check(&self, s: &Sample) -> Option<RemovalReason> {
        if self.empty_code && s.code.trim().is_empty() {
            return Some(RemovalReason::EmptyCode);
        }
        if self.invalid_utf8 && (s.code.contains('\u{FFFD}') || s.nl.contains('\u{FFFD}')) {
            return Some(RemovalReason::InvalidUtf8);
        }
        if self.lex_failure && java::lex(&s.code).is_err() {
            return Some(RemovalReason::LexFailure);
        }
        if let Some(cap) = self.max_code_chars {
            if s.code.chars().count() > cap {
                return Some(RemovalReason::TooLong);
            }
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub original_total: usize,
    pub removed_per_split: BTreeMap<Split, usize>,
    pub removal_reasons: BTreeMap<RemovalReason, usize>,
    pub retained_total: usize,
}

impl CleaningReport {
    pub fn removed_total(&self) -> usize {
        self.removed_per_split.values().sum()
    }
}

/// Drops samples failing any enabled rule and renumbers survivors densely
/// within each split.
pub fn clean(samples: Vec<Sample>, rules: &CleaningRules) -> (Vec<Sample>, CleaningReport) {
    let original_total = samples.len();
    let mut removed_per_split: BTreeMap<Split, usize> = BTreeMap::new();
    let mut removal_reasons = BTreeMap::new();
    let mut next_id: BTreeMap<Split, usize> = BTreeMap::new();
    let mut kept = Vec::with_capacity(samples.len());
    for mut s in samples {
        removed_per_split.entry(s.split).or_insert(0);
        match rules.check(&s) {
            Some(reason) => {
                *removed_per_split.get_mut(&s.split).unwrap() += 1;
                *removal_reasons.entry(reason).or_insert(0) += 1;
            }
            None => {
                let id = next_id.entry(s.split).or_insert(0);
                s.id = *id;
                *id += 1;
                kept.push(s);
            }
        }
    }
    let report = CleaningReport {
        original_total,
        retained_total: kept.len(),
        removed_per_split,
        removal_reasons,
    };
    (kept, report)
}

pub fn clean_dataset(dataset: Dataset, rules: &CleaningRules) -> (Dataset, CleaningReport) {
    let all: Vec<Sample> = dataset.into_values().flatten().collect();
    let (kept, report) = clean(all, rules);
    let mut out = Dataset::new();
    for s in kept {
        out.entry(s.split).or_default().push(s);
    }
    (out, report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LengthStats {
    pub min: usize,
    pub max: usize,
    pub mean: f64,
}

impl LengthStats {
    fn of(lengths: impl Iterator<Item = usize>) -> Option<Self> {
        let (mut min, mut max, mut sum, mut n) = (usize::MAX, 0, 0usize, 0usize);
        for l in lengths {
            min = min.min(l);
            max = max.max(l);
            sum += l;
            n += 1;
        }
        (n > 0).then(|| LengthStats { min, max, mean: sum as f64 / n as f64 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitLengths {
    pub nl: LengthStats,
    pub code: LengthStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub counts: BTreeMap<Split, usize>,
    pub total: usize,
    /// Raw character lengths; absent for empty splits.
    pub lengths: BTreeMap<Split, Option<SplitLengths>>,
}

pub fn stats(dataset: &Dataset) -> CorpusStats {
    let mut counts = BTreeMap::new();
    let mut lengths = BTreeMap::new();
    for split in Split::ALL {
        let samples = dataset.get(&split).map(Vec::as_slice).unwrap_or(&[]);
        counts.insert(split, samples.len());
        let nl = LengthStats::of(samples.iter().map(|s| s.nl.chars().count()));
        let code = LengthStats::of(samples.iter().map(|s| s.code.chars().count()));
        lengths.insert(split, nl.zip(code).map(|(nl, code)| SplitLengths { nl, code }));
    }
    CorpusStats {
        total: counts.values().sum(),
        counts,
        lengths,
    }
}

/// Code fields of train, then valid, then test, each in file order.
pub fn build_pretraining_pool(dataset: &Dataset) -> Vec<String> {
    Split::ALL
        .iter()
        .flat_map(|split| dataset.get(split).into_iter().flatten())
        .map(|s| s.code.clone())
        .collect()
}
