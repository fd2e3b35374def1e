//! Corpus BLEU, exact match and CodeBLEU over candidate/reference code.
//!
//! Conventions shared by the n-gram scores:
//! - Statistics are pooled over the corpus before dividing.
//! - An order whose pooled denominator is 0 is left out of the geometric
//!   mean. An order with denominator > 0 but numerator 0 contributes
//!   `1/(2·denominator)`.
//! - An empty candidate corpus scores 0.
//! - Reference length is the one closest to the candidate length, shorter on
//!   ties.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{load_code_lines, CorpusError};
use crate::java::{self, enumerate_subtrees, extract_dataflow, multiset_size, FlowEdge};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{candidates} candidates vs {references} references")]
    LengthMismatch { candidates: usize, references: usize },
    #[error("missing file: {0}")]
    MissingFile(String),
    #[error("weights must be non-negative and sum to a positive value")]
    InvalidWeights,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<CorpusError> for MetricsError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::MissingFile(p) => MetricsError::MissingFile(p),
            CorpusError::Io(e) => MetricsError::Io(e),
            other => MetricsError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, other.to_string())),
        }
    }
}

fn check_lengths(candidates: usize, references: usize) -> Result<(), MetricsError> {
    if candidates != references {
        return Err(MetricsError::LengthMismatch { candidates, references });
    }
    Ok(())
}

/// Splits code into the tokens BLEU counts.
pub trait CodeTokenizer {
    fn tokenize(&self, text: &str) -> Vec<String>;
}

/// Java lexemes; falls back to whitespace splitting when the lexer fails.
#[derive(Debug, Clone, Copy, Default)]
pub struct JavaLexemes;

impl CodeTokenizer for JavaLexemes {
    fn tokenize(&self, text: &str) -> Vec<String> {
        match java::lex(text) {
            Ok(tokens) => tokens.into_iter().map(|t| t.text).collect(),
            Err(_) => Whitespace.tokenize(text),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Whitespace;

impl CodeTokenizer for Whitespace {
    fn tokenize(&self, text: &str) -> Vec<String> {
        text.split_whitespace().map(str::to_string).collect()
    }
}

fn ngram_counts<T: Ord>(tokens: &[T], n: usize) -> BTreeMap<&[T], usize> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// Pooled clipped n-gram statistics.
#[derive(Debug, Clone, PartialEq)]
struct Pooled {
    num: Vec<f64>,
    den: Vec<f64>,
    cand_len: usize,
    ref_len: usize,
}

fn closest_ref_len<T>(cand_len: usize, refs: &[Vec<T>]) -> usize {
    refs.iter().map(Vec::len).min_by_key(|&r| (r.abs_diff(cand_len), r)).unwrap_or(0)
}

fn pool<T: Ord>(candidates: &[Vec<T>], references: &[Vec<Vec<T>>], max_n: usize, weight: impl Fn(&[T]) -> f64) -> Pooled {
    let mut p = Pooled { num: vec![0.0; max_n], den: vec![0.0; max_n], cand_len: 0, ref_len: 0 };
    for (cand, refs) in candidates.iter().zip(references) {
        p.cand_len += cand.len();
        p.ref_len += closest_ref_len(cand.len(), refs);
        for n in 1..=max_n {
            let mut max_ref: BTreeMap<&[T], usize> = BTreeMap::new();
            for r in refs {
                for (g, c) in ngram_counts(r, n) {
                    let slot = max_ref.entry(g).or_insert(0);
                    *slot = (*slot).max(c);
                }
            }
            for (g, c) in ngram_counts(cand, n) {
                let w = weight(g);
                let clipped = c.min(max_ref.get(g).copied().unwrap_or(0));
                p.num[n - 1] += w * clipped as f64;
                p.den[n - 1] += w * c as f64;
            }
        }
    }
    p
}

fn combine(p: &Pooled) -> f64 {
    if p.cand_len == 0 {
        return 0.0;
    }
    let logs: Vec<f64> = p
        .num
        .iter()
        .zip(&p.den)
        .filter(|(_, &den)| den > 0.0)
        .map(|(&num, &den)| if num > 0.0 { (num / den).ln() } else { (1.0 / (2.0 * den)).ln() })
        .collect();
    if logs.is_empty() {
        return 0.0;
    }
    let geo = (logs.iter().sum::<f64>() / logs.len() as f64).exp();
    let (c, r) = (p.cand_len as f64, p.ref_len as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    geo * bp
}

/// Corpus BLEU as a percentage, one reference per candidate.
pub fn corpus_bleu<T: Ord + Clone>(candidates: &[Vec<T>], references: &[Vec<T>], max_n: usize) -> Result<f64, MetricsError> {
    check_lengths(candidates.len(), references.len())?;
    let refs: Vec<Vec<Vec<T>>> = references.iter().map(|r| vec![r.clone()]).collect();
    corpus_bleu_multi(candidates, &refs, max_n)
}

/// Corpus BLEU as a percentage with any number of references per candidate.
pub fn corpus_bleu_multi<T: Ord>(candidates: &[Vec<T>], references: &[Vec<Vec<T>>], max_n: usize) -> Result<f64, MetricsError> {
    check_lengths(candidates.len(), references.len())?;
    Ok(100.0 * combine(&pool(candidates, references, max_n, |_| 1.0)))
}

/// BLEU-style score in [0,1] where each n-gram counts with weight
/// `keyword_weight` if its first token is a Java keyword, else 1.
pub fn weighted_ngram_match(candidates: &[Vec<String>], references: &[Vec<Vec<String>>], keyword_weight: f64) -> Result<f64, MetricsError> {
    check_lengths(candidates.len(), references.len())?;
    let w = |g: &[String]| if java::is_keyword(&g[0]) { keyword_weight } else { 1.0 };
    Ok(combine(&pool(candidates, references, 4, w)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactMatch {
    pub score: f64,
    pub matches: usize,
    /// Pairs where the candidate or every reference failed to lex.
    pub lex_failures: usize,
}

fn token_key(text: &str) -> Option<Vec<(java::TokenKind, String)>> {
    java::lex(text).ok().map(|ts| ts.into_iter().map(|t| (t.kind, t.text)).collect())
}

/// Percentage of candidates whose lexed `(kind, text)` sequence equals that
/// of any reference. Lexer failures never match.
pub fn exact_match<S: AsRef<str>>(candidates: &[S], references: &[Vec<S>]) -> Result<ExactMatch, MetricsError> {
    check_lengths(candidates.len(), references.len())?;
    let mut matches = 0;
    let mut lex_failures = 0;
    for (cand, refs) in candidates.iter().zip(references) {
        let ref_keys: Vec<_> = refs.iter().filter_map(|r| token_key(r.as_ref())).collect();
        match token_key(cand.as_ref()) {
            Some(c) if !ref_keys.is_empty() => {
                if ref_keys.contains(&c) {
                    matches += 1;
                }
            }
            _ => lex_failures += 1,
        }
    }
    let score = if candidates.is_empty() { 0.0 } else { 100.0 * matches as f64 / candidates.len() as f64 };
    Ok(ExactMatch { score, matches, lex_failures })
}

/// Clipped subtree-signature overlap with the best reference, divided by that
/// reference's subtree count. `None` when no reference parses; 0 when the
/// candidate does not parse.
pub fn ast_match<S: AsRef<str>>(candidate: &str, references: &[S]) -> Option<f64> {
    let ref_sets: Vec<_> = references
        .iter()
        .filter_map(|r| java::parse(r.as_ref()).ok())
        .map(|t| enumerate_subtrees(&t))
        .filter(|m| multiset_size(m) > 0)
        .collect();
    if ref_sets.is_empty() {
        return None;
    }
    let Ok(tree) = java::parse(candidate) else {
        return Some(0.0);
    };
    let cand = enumerate_subtrees(&tree);
    ref_sets
        .iter()
        .map(|r| {
            let hit: usize = cand.iter().map(|(sig, &c)| c.min(r.get(sig).copied().unwrap_or(0))).sum();
            hit as f64 / multiset_size(r) as f64
        })
        .reduce(f64::max)
}

fn edge_counts(edges: Vec<FlowEdge>) -> BTreeMap<FlowEdge, usize> {
    let mut m = BTreeMap::new();
    for e in edges {
        *m.entry(e).or_insert(0) += 1;
    }
    m
}

fn flow_of(text: &str) -> Option<Vec<FlowEdge>> {
    java::parse(text).ok().map(|t| extract_dataflow(&t))
}

/// Clipped def-use edge overlap with the best reference, divided by that
/// reference's edge count. `None` when no reference has an edge.
pub fn dataflow_match<S: AsRef<str>>(candidate: &str, references: &[S]) -> Option<f64> {
    let ref_edges: Vec<_> = references
        .iter()
        .filter_map(|r| flow_of(r.as_ref()))
        .filter(|e| !e.is_empty())
        .map(edge_counts)
        .collect();
    if ref_edges.is_empty() {
        return None;
    }
    let cand = edge_counts(flow_of(candidate).unwrap_or_default());
    ref_edges
        .iter()
        .map(|r| {
            let total: usize = r.values().sum();
            let hit: usize = r.iter().map(|(e, &c)| c.min(cand.get(e).copied().unwrap_or(0))).sum();
            hit as f64 / total as f64
        })
        .reduce(f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodeBleuWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    #[serde(default = "default_keyword_weight")]
    pub keyword_weight: f64,
}

fn default_keyword_weight() -> f64 {
    5.0
}

impl Default for CodeBleuWeights {
    fn default() -> Self {
        CodeBleuWeights { alpha: 0.25, beta: 0.25, gamma: 0.25, delta: 0.25, keyword_weight: default_keyword_weight() }
    }
}

impl CodeBleuWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64, delta: f64) -> Self {
        CodeBleuWeights { alpha, beta, gamma, delta, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        let ws = [self.alpha, self.beta, self.gamma, self.delta];
        if ws.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || ws.iter().sum::<f64>() <= 0.0 {
            return Err(MetricsError::InvalidWeights);
        }
        Ok(())
    }
}

/// Component fractions in [0,1]. `ast` and `dataflow` are averaged over the
/// samples where they are defined and are `None` when no sample defines them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Components {
    pub ngram: f64,
    pub weighted_ngram: f64,
    pub ast: Option<f64>,
    pub dataflow: Option<f64>,
}

impl Components {
    /// `100 × Σ wᵢcᵢ / Σ wᵢ` over present components.
    pub fn combine(&self, w: &CodeBleuWeights) -> f64 {
        let parts = [
            (w.alpha, Some(self.ngram)),
            (w.beta, Some(self.weighted_ngram)),
            (w.gamma, self.ast),
            (w.delta, self.dataflow),
        ];
        let (mut num, mut den) = (0.0, 0.0);
        for (wi, c) in parts {
            if let Some(c) = c {
                num += wi * c;
                den += wi;
            }
        }
        if den > 0.0 {
            100.0 * num / den
        } else {
            0.0
        }
    }
}

fn mean_present(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = values.flatten().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

/// CodeBLEU percentage and its components.
pub fn codebleu<S: AsRef<str>>(candidates: &[S], references: &[Vec<S>], weights: &CodeBleuWeights, tokenizer: &dyn CodeTokenizer) -> Result<(f64, Components), MetricsError> {
    check_lengths(candidates.len(), references.len())?;
    weights.validate()?;
    let cand_toks: Vec<Vec<String>> = candidates.iter().map(|c| tokenizer.tokenize(c.as_ref())).collect();
    let ref_toks: Vec<Vec<Vec<String>>> = references.iter().map(|rs| rs.iter().map(|r| tokenizer.tokenize(r.as_ref())).collect()).collect();
    let components = Components {
        ngram: combine(&pool(&cand_toks, &ref_toks, 4, |_| 1.0)),
        weighted_ngram: weighted_ngram_match(&cand_toks, &ref_toks, weights.keyword_weight)?,
        ast: mean_present(candidates.iter().zip(references).map(|(c, rs)| ast_match(c.as_ref(), rs))),
        dataflow: mean_present(candidates.iter().zip(references).map(|(c, rs)| dataflow_match(c.as_ref(), rs))),
    };
    Ok((components.combine(weights), components))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprints {
    pub predictions: String,
    pub references: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu: f64,
    pub em: f64,
    pub codebleu: f64,
    pub components: Components,
    pub weights: CodeBleuWeights,
    pub n_samples: usize,
    pub n_empty_predictions: usize,
    /// Non-empty candidates the parser rejects.
    pub n_parse_failures: usize,
    pub n_reference_parse_failures: usize,
    pub n_lex_failures: usize,
    pub fingerprints: Option<Fingerprints>,
}

impl EvalReport {
    /// Fixed-order table: BLEU, EM, CodeBLEU, then components and counts.
    pub fn render_table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
        let mut s = String::new();
        let _ = writeln!(s, "| BLEU | EM | CodeBLEU |");
        let _ = writeln!(s, "|---:|---:|---:|");
        let _ = writeln!(s, "| {:.2} | {:.2} | {:.2} |", self.bleu, self.em, self.codebleu);
        let _ = writeln!(s);
        let _ = writeln!(s, "| n-gram | weighted n-gram | AST | data-flow |");
        let _ = writeln!(s, "|---:|---:|---:|---:|");
        let _ = writeln!(
            s,
            "| {:.4} | {:.4} | {} | {} |",
            self.components.ngram,
            self.components.weighted_ngram,
            opt(self.components.ast),
            opt(self.components.dataflow)
        );
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "samples {}, empty predictions {}, candidate parse failures {}, reference parse failures {}, lex failures {}",
            self.n_samples, self.n_empty_predictions, self.n_parse_failures, self.n_reference_parse_failures, self.n_lex_failures
        );
        s
    }
}

/// All metrics over in-memory texts.
pub fn evaluate<S: AsRef<str>>(candidates: &[S], references: &[Vec<S>], weights: &CodeBleuWeights) -> Result<EvalReport, MetricsError> {
    check_lengths(candidates.len(), references.len())?;
    let tok = JavaLexemes;
    let cand_toks: Vec<Vec<String>> = candidates.iter().map(|c| tok.tokenize(c.as_ref())).collect();
    let ref_toks: Vec<Vec<Vec<String>>> = references.iter().map(|rs| rs.iter().map(|r| tok.tokenize(r.as_ref())).collect()).collect();
    let bleu = corpus_bleu_multi(&cand_toks, &ref_toks, 4)?;
    let em = exact_match(candidates, references)?;
    let (codebleu, components) = codebleu(candidates, references, weights, &tok)?;
    let blank = |s: &S| s.as_ref().trim().is_empty();
    Ok(EvalReport {
        bleu,
        em: em.score,
        codebleu,
        components,
        weights: *weights,
        n_samples: candidates.len(),
        n_empty_predictions: candidates.iter().filter(|c| blank(c)).count(),
        n_parse_failures: candidates.iter().filter(|c| !blank(c) && java::parse(c.as_ref()).is_err()).count(),
        n_reference_parse_failures: references.iter().flatten().filter(|r| java::parse(r.as_ref()).is_err()).count(),
        n_lex_failures: em.lex_failures,
        fingerprints: None,
    })
}

/// One candidate per line; empty lines are kept as empty candidates.
pub fn read_predictions(path: &Path) -> Result<Vec<String>, MetricsError> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => MetricsError::MissingFile(path.display().to_string()),
        _ => MetricsError::Io(e),
    })?;
    let text = String::from_utf8_lossy(&bytes);
    let mut lines: Vec<String> = text.split('\n').map(|l| l.trim_end_matches('\r').to_string()).collect();
    if lines.last().is_some_and(String::is_empty) {
        lines.pop();
    }
    Ok(lines)
}

pub fn file_fingerprint(path: &Path) -> Result<String, MetricsError> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => MetricsError::MissingFile(path.display().to_string()),
        _ => MetricsError::Io(e),
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Scores a predictions file against a record file or a one-code-per-line
/// file.
pub fn evaluate_file(predictions: &Path, references: &Path, weights: &CodeBleuWeights) -> Result<EvalReport, MetricsError> {
    let cands = read_predictions(predictions)?;
    let refs: Vec<Vec<String>> = load_code_lines(references)?.into_iter().map(|r| vec![r]).collect();
    let mut report = evaluate(&cands, &refs, weights)?;
    report.fingerprints = Some(Fingerprints { predictions: file_fingerprint(predictions)?, references: file_fingerprint(references)? });
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub bleu: f64,
    pub em: f64,
    pub codebleu: f64,
}

impl ComparisonRow {
    pub fn from_report(model: &str, r: &EvalReport) -> Self {
        ComparisonRow { model: model.to_string(), bleu: r.bleu, em: r.em, codebleu: r.codebleu }
    }
}

/// Published scores of reference systems on the same task, for side-by-side
/// rendering only.
pub fn baseline_rows() -> Vec<ComparisonRow> {
    serde_json::from_str(include_str!("../data/baselines.json")).expect("bundled baseline table is valid JSON")
}

pub fn render_comparison(rows: &[ComparisonRow]) -> String {
    let width = rows.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
    let mut s = String::new();
    let _ = writeln!(s, "| {:<width$} | BLEU | EM | CodeBLEU |", "Model");
    let _ = writeln!(s, "|{}|---:|---:|---:|", "-".repeat(width + 2));
    for r in rows {
        let _ = writeln!(s, "| {:<width$} | {:.2} | {:.2} | {:.2} |", r.model, r.bleu, r.em, r.codebleu);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    /// Brute force: n-grams as owned vectors, counts by linear scan.
    fn oracle_bleu(cands: &[Vec<u8>], refs: &[Vec<u8>], max_n: usize) -> f64 {
        let grams = |s: &[u8], n: usize| -> Vec<Vec<u8>> { (0..(s.len() + 1).saturating_sub(n)).map(|i| s[i..i + n].to_vec()).collect() };
        let count = |xs: &[Vec<u8>], g: &Vec<u8>| xs.iter().filter(|x| *x == g).count();
        let (mut c, mut r) = (0usize, 0usize);
        let mut num = vec![0usize; max_n];
        let mut den = vec![0usize; max_n];
        for (cand, rf) in cands.iter().zip(refs) {
            c += cand.len();
            r += rf.len();
            for n in 1..=max_n {
                let cg = grams(cand, n);
                let rg = grams(rf, n);
                let mut seen: Vec<Vec<u8>> = Vec::new();
                for g in &cg {
                    if seen.contains(g) {
                        continue;
                    }
                    seen.push(g.clone());
                    num[n - 1] += count(&cg, g).min(count(&rg, g));
                }
                den[n - 1] += cg.len();
            }
        }
        if c == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        let mut k = 0;
        for n in 0..max_n {
            if den[n] == 0 {
                continue;
            }
            let p = if num[n] == 0 { 0.5 / den[n] as f64 } else { num[n] as f64 / den[n] as f64 };
            log_sum += p.ln();
            k += 1;
        }
        let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
        100.0 * (log_sum / k as f64).exp() * bp
    }

    #[test]
    fn identical_corpus_scores_full_marks() {
        let c = vec![toks("public int f ( ) { return 1 ; }"), toks("x")];
        assert_eq!(corpus_bleu(&c, &c, 4).unwrap(), 100.0);
    }

    #[test]
    fn clipped_unigram_example() {
        let v = corpus_bleu(&[toks("a b b")], &[toks("a b")], 1).unwrap();
        assert!((v - 200.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(matches!(corpus_bleu(&[toks("a")], &[], 4), Err(MetricsError::LengthMismatch { .. })));
        assert!(matches!(exact_match(&["a"], &[]), Err(MetricsError::LengthMismatch { .. })));
    }

    #[test]
    fn bleu_matches_brute_force_on_random_pairs() {
        let mut rng = Rng::new(50);
        let mut cands = Vec::new();
        let mut refs = Vec::new();
        for _ in 0..50 {
            let lc = rng.below(21) as usize;
            let lr = 1 + rng.below(20) as usize;
            cands.push((0..lc).map(|_| rng.below(6) as u8).collect::<Vec<_>>());
            refs.push((0..lr).map(|_| rng.below(6) as u8).collect::<Vec<_>>());
        }
        let got = corpus_bleu(&cands, &refs, 4).unwrap();
        assert!((got - oracle_bleu(&cands, &refs, 4)).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn bleu_oracle_small(pairs in proptest::collection::vec((proptest::collection::vec(0u8..10, 0..20), proptest::collection::vec(0u8..10, 0..20)), 1..5)) {
            let (c, r): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let got = corpus_bleu(&c, &r, 4).unwrap();
            prop_assert!((got - oracle_bleu(&c, &r, 4)).abs() < 1e-9);
            prop_assert!((0.0..=100.0).contains(&got));
        }

        #[test]
        fn codebleu_with_ngram_only_weight_equals_bleu(pairs in proptest::collection::vec(("[a-c ;=+]{0,12}", "[a-c ;=+]{1,12}"), 1..4)) {
            let cands: Vec<String> = pairs.iter().map(|p| p.0.clone()).collect();
            let refs: Vec<Vec<String>> = pairs.iter().map(|p| vec![p.1.clone()]).collect();
            let w = CodeBleuWeights::new(1.0, 0.0, 0.0, 0.0);
            let (score, _) = codebleu(&cands, &refs, &w, &JavaLexemes).unwrap();
            let ct: Vec<_> = cands.iter().map(|c| JavaLexemes.tokenize(c)).collect();
            let rt: Vec<_> = refs.iter().map(|r| JavaLexemes.tokenize(&r[0])).collect();
            prop_assert!((score - corpus_bleu(&ct, &rt, 4).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn strict_prefixes_never_match(code in "[a-z]{1,3}( [a-z]{1,3}){1,6}", cut in 0usize..6) {
            let t: Vec<&str> = code.split(' ').collect();
            let cut = cut.min(t.len() - 1);
            let prefix = t[..cut].join(" ");
            prop_assert_eq!(exact_match(&[prefix], &[vec![code.clone()]]).unwrap().score, 0.0);
        }
    }

    #[test]
    fn exact_match_is_token_level() {
        assert_eq!(exact_match(&["x", "y"], &[vec!["x"], vec!["z"]]).unwrap().score, 50.0);
        assert_eq!(exact_match(&["int  x=1;"], &[vec!["int x = 1 ;"]]).unwrap().score, 100.0);
        assert_eq!(exact_match(&["int x=1; // note"], &[vec!["int /* c */ x = 1 ;"]]).unwrap().score, 100.0);
        let m = exact_match(&["\"open"], &[vec!["\"open"]]).unwrap();
        assert_eq!((m.score, m.lex_failures), (0.0, 1));
        assert_eq!(exact_match(&["a", "b"], &[vec!["c", "a"], vec!["a"]]).unwrap().score, 50.0);
    }

    #[test]
    fn bleu_ignores_whitespace_only_changes() {
        let tok = JavaLexemes;
        let a = corpus_bleu(&[tok.tokenize("int x=1;")], &[tok.tokenize("int x = 1 ;")], 4).unwrap();
        assert_eq!(a, 100.0);
    }

    #[test]
    fn keyword_divergence_costs_more_than_identifier_divergence() {
        let r = vec![vec![toks("return a + b")]];
        let kw = weighted_ngram_match(&[toks("throw a + b")], &r, 5.0).unwrap();
        let id = weighted_ngram_match(&[toks("return a + c")], &r, 5.0).unwrap();
        assert!(kw < id, "{kw} vs {id}");
        assert_eq!(weighted_ngram_match(&[toks("return a + b")], &r, 5.0).unwrap(), 1.0);
        // Keyword-led n-grams weigh 5; `throw` starts one n-gram per order.
        // unigram 3/8, bigram 2/7, trigram 1/6, 4-gram 0/5 → 1/10.
        let hand = (3.0 / 8.0 * 2.0 / 7.0 * 1.0 / 6.0 * 1.0 / 10.0f64).powf(0.25);
        assert!((kw - hand).abs() < 1e-12);
        // unigram 7/8, bigram 6/7, trigram 5/6, 4-gram 0/5 → 1/10.
        let hand = (7.0 / 8.0 * 6.0 / 7.0 * 5.0 / 6.0 * 1.0 / 10.0f64).powf(0.25);
        assert!((id - hand).abs() < 1e-12);
    }

    #[test]
    fn ast_match_cases() {
        assert_eq!(ast_match("int f(){return 1;}", &["int f(){return 1;}"]), Some(1.0));
        assert_eq!(ast_match("int f( {", &["int f(){return 1;}"]), Some(0.0));
        assert_eq!(ast_match("int f(){return 1;}", &["int f( {"]), None);
        // Reference subtrees: 2 field declarations, 2 types, 2 declarators.
        // The candidate covers one of each.
        assert_eq!(ast_match("int x=1;", &["int x=1; int y=2;"]), Some(0.5));
        // Best of two references.
        assert_eq!(ast_match("int x=1;", &["int x=1; int y=2;", "int x=1;"]), Some(1.0));
    }

    #[test]
    fn dataflow_match_cases() {
        assert_eq!(dataflow_match("int b=a;", &["int b=c;"]), Some(1.0));
        assert_eq!(dataflow_match("int a=1; int b=a;", &["int a=1; int b=a;"]), Some(1.0));
        assert_eq!(dataflow_match("return 1;", &["return 1;"]), None);
        assert_eq!(dataflow_match("int f( {", &["int b=c;"]), Some(0.0));
        assert_eq!(dataflow_match("int b=1;", &["int b=c;"]), Some(0.0));
    }

    #[test]
    fn codebleu_combination_and_renormalization() {
        let comps = Components { ngram: 1.0, weighted_ngram: 1.0, ast: Some(0.0), dataflow: Some(0.0) };
        assert_eq!(comps.combine(&CodeBleuWeights::default()), 50.0);
        let comps = Components { ngram: 1.0, weighted_ngram: 1.0, ast: Some(1.0), dataflow: Some(1.0) };
        assert_eq!(comps.combine(&CodeBleuWeights::default()), 100.0);
        // Absent data-flow: remaining three weights renormalize to 1/3 each.
        let comps = Components { ngram: 1.0, weighted_ngram: 0.5, ast: Some(0.0), dataflow: None };
        assert!((comps.combine(&CodeBleuWeights::default()) - 50.0).abs() < 1e-12);
        assert!(codebleu(&["a"], &[vec!["a"]], &CodeBleuWeights::new(-1.0, 1.0, 1.0, 1.0), &JavaLexemes).is_err());
    }

    #[test]
    fn identical_inputs_score_maximal() {
        let codes = ["int f(int a){int b=a+1;return b;}", "void g(){x=y;}", "return 1;"];
        let refs: Vec<Vec<&str>> = codes.iter().map(|c| vec![*c]).collect();
        let r = evaluate(&codes, &refs, &CodeBleuWeights::default()).unwrap();
        assert_eq!((r.bleu, r.em, r.codebleu), (100.0, 100.0, 100.0));
        assert_eq!(r.components.ast, Some(1.0));
        assert_eq!(r.components.dataflow, Some(1.0));
        let table = r.render_table();
        assert!(table.find("BLEU").unwrap() < table.find("EM").unwrap());
        assert!(table.find("| EM |").unwrap() < table.find("CodeBLEU").unwrap());
    }

    #[test]
    fn empty_predictions_score_zero() {
        let r = evaluate(&["", ""], &[vec!["int x=1;"], vec!["return a;"]], &CodeBleuWeights::default()).unwrap();
        assert_eq!((r.bleu, r.em, r.n_empty_predictions, r.n_parse_failures), (0.0, 0.0, 2, 0));
        assert_eq!(r.components.ast, Some(0.0));
    }

    #[test]
    fn evaluate_file_reads_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let refs = dir.path().join("test.jsonl");
        std::fs::write(&refs, "{\"nl\":\"a\",\"code\":\"int x = 1 ;\"}\n{\"nl\":\"b\",\"code\":\"return y ;\"}\n").unwrap();
        let pred = dir.path().join("p.txt");
        std::fs::write(&pred, "int x = 1 ;\n\n").unwrap();
        let r = evaluate_file(&pred, &refs, &CodeBleuWeights::default()).unwrap();
        assert_eq!((r.n_samples, r.n_empty_predictions, r.em), (2, 1, 50.0));
        let fp = r.fingerprints.unwrap();
        assert_eq!(fp.references.len(), 64);
        std::fs::write(&pred, "int x = 1 ;\n").unwrap();
        assert!(matches!(evaluate_file(&pred, &refs, &CodeBleuWeights::default()), Err(MetricsError::LengthMismatch { .. })));
        assert!(matches!(evaluate_file(&dir.path().join("nope"), &refs, &CodeBleuWeights::default()), Err(MetricsError::MissingFile(_))));
    }

    #[test]
    fn comparison_renders_every_row() {
        let rows = baseline_rows();
        assert!(rows.len() >= 5);
        let t = render_comparison(&rows);
        assert_eq!(t.lines().count(), rows.len() + 2);
        assert!(rows.iter().all(|r| (0.0..=100.0).contains(&r.bleu)));
    }
}
