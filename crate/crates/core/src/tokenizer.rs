//! Byte-level BPE vocabulary with reserved specials, and the max-length
//! profile used to size encoder and decoder inputs.
//!
//! Id layout: `0 <pad>`, `1 </s>`, `2 <unk>`, then the 256 single-byte
//! pieces, then learned merges, and finally the 100 sentinels
//! `<extra_id_0> … <extra_id_99>` occupying the last ids in ascending order.
//!
//! Text is pre-split into chunks (an optional leading space plus a run of
//! identifier characters, a run of whitespace, or a single other character);
//! merges never cross chunk boundaries.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Sample;

pub const PAD_ID: u32 = 0;
pub const EOS_ID: u32 = 1;
pub const UNK_ID: u32 = 2;
pub const NUM_SENTINELS: usize = 100;
const NUM_LEADING_SPECIALS: usize = 3;
const BYTE_OFFSET: usize = NUM_LEADING_SPECIALS;
/// Smallest vocabulary that still has room for one learned piece.
pub const MIN_VOCAB_SIZE: usize = NUM_LEADING_SPECIALS + 256 + NUM_SENTINELS + 1;

const FORMAT_HEADER: &str = "javagen-vocab v1";

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("vocab size {requested} is too small; need at least {minimum}")]
    VocabTooSmall { requested: usize, minimum: usize },
    #[error("unknown token id {0}")]
    UnknownId(u32),
    #[error("length profile needs at least one sample")]
    EmptyDataset,
    #[error("malformed vocabulary file at line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    /// Byte content of every id; specials have empty byte strings.
    pieces: Vec<Vec<u8>>,
    /// `(left, right)` pair → merged id, in learning order.
    merges: Vec<(u32, u32, u32)>,
    merge_rank: HashMap<(u32, u32), (usize, u32)>,
}

fn split_chunks(text: &str) -> Vec<&str> {
    let is_word = |c: char| c.is_alphanumeric() || c == '_' || c == '$';
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    let mut it = text.char_indices().peekable();
    while let Some((i, c)) = it.next() {
        debug_assert_eq!(i, start);
        let mut end = i + c.len_utf8();
        if is_word(c) || (c == ' ' && it.peek().is_some_and(|&(_, n)| is_word(n))) {
            while let Some(&(j, n)) = it.peek() {
                if !is_word(n) {
                    break;
                }
                end = j + n.len_utf8();
                it.next();
            }
        } else if c.is_whitespace() {
            // keep one trailing space free to attach to the next word
            while let Some(&(j, n)) = it.peek() {
                if !n.is_whitespace() {
                    break;
                }
                let after = text[j + n.len_utf8()..].chars().next();
                if n == ' ' && after.is_some_and(is_word) {
                    break;
                }
                end = j + n.len_utf8();
                it.next();
            }
        }
        out.push(std::str::from_utf8(&bytes[start..end]).expect("char boundary"));
        start = end;
    }
    out
}

impl Vocabulary {
    /// Learns merges until `vocab_size` is reached or no pair occurs twice.
    /// Ties on frequency go to the lexicographically smallest
    /// `(left bytes, right bytes)` pair.
    pub fn train<S: AsRef<str>>(texts: &[S], vocab_size: usize) -> Result<Self, TokenizerError> {
        if vocab_size < MIN_VOCAB_SIZE {
            return Err(TokenizerError::VocabTooSmall {
                requested: vocab_size,
                minimum: MIN_VOCAB_SIZE,
            });
        }
        let budget = vocab_size - NUM_LEADING_SPECIALS - 256 - NUM_SENTINELS;

        let mut chunk_freq: BTreeMap<&str, u64> = BTreeMap::new();
        for t in texts {
            for c in split_chunks(t.as_ref()) {
                *chunk_freq.entry(c).or_insert(0) += 1;
            }
        }
        let mut words: Vec<(Vec<u32>, u64)> = chunk_freq
            .into_iter()
            .map(|(c, f)| (c.bytes().map(|b| b as u32 + BYTE_OFFSET as u32).collect(), f))
            .collect();

        let mut pieces: Vec<Vec<u8>> = vec![Vec::new(); NUM_LEADING_SPECIALS];
        pieces.extend((0..=255u8).map(|b| vec![b]));
        let mut merges = Vec::new();

        for _ in 0..budget {
            let mut counts: HashMap<(u32, u32), u64> = HashMap::new();
            for (w, f) in &words {
                for p in w.windows(2) {
                    *counts.entry((p[0], p[1])).or_insert(0) += f;
                }
            }
            let best = counts
                .into_iter()
                .filter(|&(_, c)| c >= 2)
                .max_by(|(pa, ca), (pb, cb)| {
                    ca.cmp(cb).then_with(|| {
                        let ka = (&pieces[pa.0 as usize], &pieces[pa.1 as usize]);
                        let kb = (&pieces[pb.0 as usize], &pieces[pb.1 as usize]);
                        kb.cmp(&ka)
                    })
                });
            let Some(((l, r), _)) = best else { break };
            let new_id = pieces.len() as u32;
            let mut bytes = pieces[l as usize].clone();
            bytes.extend_from_slice(&pieces[r as usize]);
            pieces.push(bytes);
            merges.push((l, r, new_id));
            for (w, _) in &mut words {
                merge_in_place(w, l, r, new_id);
            }
        }
        pieces.extend(std::iter::repeat_with(Vec::new).take(NUM_SENTINELS));
        Ok(Self::from_parts(pieces, merges))
    }

    fn from_parts(pieces: Vec<Vec<u8>>, merges: Vec<(u32, u32, u32)>) -> Self {
        let merge_rank = merges.iter().enumerate().map(|(rank, &(l, r, m))| ((l, r), (rank, m))).collect();
        Vocabulary { pieces, merges, merge_rank }
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn num_merges(&self) -> usize {
        self.merges.len()
    }

    pub fn sentinel(&self, index: usize) -> u32 {
        assert!(index < NUM_SENTINELS, "sentinel index {index} out of range");
        (self.len() - NUM_SENTINELS + index) as u32
    }

    pub fn sentinel_index(&self, id: u32) -> Option<usize> {
        let first = self.len() - NUM_SENTINELS;
        let id = id as usize;
        (id >= first && id < self.len()).then(|| id - first)
    }

    pub fn is_special(&self, id: u32) -> bool {
        (id as usize) < NUM_LEADING_SPECIALS || self.sentinel_index(id).is_some()
    }

    /// Learned (non-byte, non-special) pieces as strings, in id order.
    pub fn learned_pieces(&self) -> Vec<String> {
        self.pieces[BYTE_OFFSET + 256..self.len() - NUM_SENTINELS]
            .iter()
            .map(|p| String::from_utf8_lossy(p).into_owned())
            .collect()
    }

    pub fn piece(&self, id: u32) -> Result<String, TokenizerError> {
        let i = id as usize;
        if i >= self.len() {
            return Err(TokenizerError::UnknownId(id));
        }
        Ok(match id {
            PAD_ID => "<pad>".into(),
            EOS_ID => "</s>".into(),
            UNK_ID => "<unk>".into(),
            _ => match self.sentinel_index(id) {
                Some(k) => format!("<extra_id_{k}>"),
                None => String::from_utf8_lossy(&self.pieces[i]).into_owned(),
            },
        })
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for chunk in split_chunks(text) {
            let mut ids: Vec<u32> = chunk.bytes().map(|b| b as u32 + BYTE_OFFSET as u32).collect();
            loop {
                let best = ids
                    .windows(2)
                    .filter_map(|p| self.merge_rank.get(&(p[0], p[1])).map(|&(rank, m)| (rank, p[0], p[1], m)))
                    .min();
                let Some((_, l, r, m)) = best else { break };
                merge_in_place(&mut ids, l, r, m);
            }
            out.extend(ids);
        }
        out
    }

    /// Inverse of [`encode`](Self::encode). Special ids render as their
    /// marker strings; invalid UTF-8 from arbitrary id sequences is replaced.
    pub fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let mut bytes = Vec::new();
        for &id in ids {
            if id as usize >= self.len() {
                return Err(TokenizerError::UnknownId(id));
            }
            if self.is_special(id) {
                bytes.extend_from_slice(self.piece(id)?.as_bytes());
            } else {
                bytes.extend_from_slice(&self.pieces[id as usize]);
            }
        }
        Ok(match String::from_utf8(bytes) {
            Ok(s) => s,
            Err(e) => String::from_utf8_lossy(e.as_bytes()).into_owned(),
        })
    }

    /// SHA-256 over the serialized form.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{FORMAT_HEADER}");
        let _ = writeln!(s, "size {} merges {}", self.len(), self.merges.len());
        for &(l, r, m) in &self.merges {
            let _ = writeln!(s, "{l} {r} {m} {}", hex::encode(&self.pieces[m as usize]));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, TokenizerError> {
        let bad = |line: usize, reason: &str| TokenizerError::Format { line, reason: reason.into() };
        let mut lines = text.lines();
        if lines.next() != Some(FORMAT_HEADER) {
            return Err(bad(1, "missing header"));
        }
        let counts: Vec<&str> = lines.next().unwrap_or("").split_whitespace().collect();
        let (size, n_merges) = match counts.as_slice() {
            ["size", s, "merges", m] => (
                s.parse::<usize>().map_err(|_| bad(2, "bad size"))?,
                m.parse::<usize>().map_err(|_| bad(2, "bad merge count"))?,
            ),
            _ => return Err(bad(2, "expected `size N merges M`")),
        };
        if size != NUM_LEADING_SPECIALS + 256 + n_merges + NUM_SENTINELS {
            return Err(bad(2, "size does not match merge count"));
        }
        let mut pieces: Vec<Vec<u8>> = vec![Vec::new(); NUM_LEADING_SPECIALS];
        pieces.extend((0..=255u8).map(|b| vec![b]));
        let mut merges = Vec::with_capacity(n_merges);
        for i in 0..n_merges {
            let line_no = i + 3;
            let line = lines.next().ok_or_else(|| bad(line_no, "truncated merge table"))?;
            let f: Vec<&str> = line.split(' ').collect();
            if f.len() != 4 {
                return Err(bad(line_no, "expected 4 fields"));
            }
            let num = |s: &str| s.parse::<u32>().map_err(|_| bad(line_no, "bad id"));
            let (l, r, m) = (num(f[0])?, num(f[1])?, num(f[2])?);
            if m as usize != pieces.len() || l >= m || r >= m || (l as usize) < BYTE_OFFSET || (r as usize) < BYTE_OFFSET {
                return Err(bad(line_no, "merge ids out of order"));
            }
            let mut bytes = pieces[l as usize].clone();
            bytes.extend_from_slice(&pieces[r as usize]);
            if hex::encode(&bytes) != f[3] {
                return Err(bad(line_no, "piece bytes disagree with merge"));
            }
            pieces.push(bytes);
            merges.push((l, r, m));
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(bad(n_merges + 3, "trailing content"));
        }
        pieces.extend(std::iter::repeat_with(Vec::new).take(NUM_SENTINELS));
        Ok(Self::from_parts(pieces, merges))
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn merge_in_place(ids: &mut Vec<u32>, l: u32, r: u32, merged: u32) {
    let mut out = Vec::with_capacity(ids.len());
    let mut i = 0;
    while i < ids.len() {
        if i + 1 < ids.len() && ids[i] == l && ids[i + 1] == r {
            out.push(merged);
            i += 2;
        } else {
            out.push(ids[i]);
            i += 1;
        }
    }
    *ids = out;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LengthProfile {
    pub max_input_len: usize,
    pub max_target_len: usize,
    /// Target length (with end-of-sequence) → number of samples.
    pub target_histogram: BTreeMap<usize, usize>,
    /// Input length (with end-of-sequence) → number of samples.
    pub input_histogram: BTreeMap<usize, usize>,
}

/// Longest encoded `nl` and `code` over the given samples, each counted with
/// its end-of-sequence token.
pub fn max_pair_length(vocab: &Vocabulary, samples: &[Sample]) -> Result<LengthProfile, TokenizerError> {
    if samples.is_empty() {
        return Err(TokenizerError::EmptyDataset);
    }
    let mut profile = LengthProfile {
        max_input_len: 0,
        max_target_len: 0,
        target_histogram: BTreeMap::new(),
        input_histogram: BTreeMap::new(),
    };
    for s in samples {
        let li = vocab.encode(&s.nl).len() + 1;
        let lt = vocab.encode(&s.code).len() + 1;
        profile.max_input_len = profile.max_input_len.max(li);
        profile.max_target_len = profile.max_target_len.max(lt);
        *profile.input_histogram.entry(li).or_insert(0) += 1;
        *profile.target_histogram.entry(lt).or_insert(0) += 1;
    }
    Ok(profile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use proptest::prelude::*;

    fn sample(nl: &str, code: &str) -> Sample {
        Sample { id: 0, nl: nl.into(), code: code.into(), split: Split::Train }
    }

    /// Independent BPE simulation over strings: repeatedly merge the most
    /// frequent adjacent pair (ties: smallest (left, right) strings).
    fn brute_force_pieces(chunks: &[&str], merges: usize) -> Vec<String> {
        let mut words: Vec<Vec<String>> = chunks.iter().map(|c| c.chars().map(|ch| ch.to_string()).collect()).collect();
        let mut learned = Vec::new();
        for _ in 0..merges {
            let mut best: Option<((String, String), usize)> = None;
            let mut pairs: Vec<(String, String)> = Vec::new();
            for w in &words {
                for i in 0..w.len().saturating_sub(1) {
                    pairs.push((w[i].clone(), w[i + 1].clone()));
                }
            }
            pairs.sort();
            for p in &pairs {
                let c = pairs.iter().filter(|q| *q == p).count();
                if c >= 2 && best.as_ref().is_none_or(|(_, bc)| c > *bc) {
                    best = Some((p.clone(), c));
                }
            }
            let Some(((l, r), _)) = best else { break };
            for w in &mut words {
                let mut i = 0;
                while i + 1 < w.len() {
                    if w[i] == l && w[i + 1] == r {
                        w[i] = format!("{l}{r}");
                        w.remove(i + 1);
                    }
                    i += 1;
                }
            }
            learned.push(format!("{l}{r}"));
        }
        learned
    }

    #[test]
    fn repeated_word_materializes() {
        let v = Vocabulary::train(&["aaab aaab"], 400).unwrap();
        let learned = v.learned_pieces();
        assert!(learned.iter().any(|p| p == "aaab" || p == "aaa"), "{learned:?}");
        let oracle = brute_force_pieces(&split_chunks("aaab aaab"), 40);
        assert_eq!(learned, oracle);
    }

    #[test]
    fn matches_brute_force_on_code() {
        let texts = ["return a + b ;", "return a . size ( ) ;", "int size = a . size ( ) ;"];
        let v = Vocabulary::train(&texts, 380).unwrap();
        let chunks: Vec<&str> = texts.iter().flat_map(|t| split_chunks(t)).collect();
        assert_eq!(v.learned_pieces(), brute_force_pieces(&chunks, 20));
    }

    #[test]
    fn too_small() {
        assert!(matches!(
            Vocabulary::train(&["x"], 300),
            Err(TokenizerError::VocabTooSmall { .. })
        ));
        assert!(Vocabulary::train(&["x"], MIN_VOCAB_SIZE).is_ok());
    }

    #[test]
    fn training_is_deterministic() {
        let texts = ["public int getX ( ) { return x ; }", "void setX ( int x ) { this . x = x ; }"];
        let a = Vocabulary::train(&texts, 420).unwrap();
        let b = Vocabulary::train(&texts, 420).unwrap();
        assert_eq!(a.learned_pieces(), b.learned_pieces());
        assert_eq!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn layout_and_specials() {
        let v = Vocabulary::train(&["abab abab"], 400).unwrap();
        assert_eq!(v.sentinel(0) as usize, v.len() - 100);
        assert_eq!(v.sentinel(99) as usize, v.len() - 1);
        assert_eq!(v.decode(&[v.sentinel(3)]).unwrap(), "<extra_id_3>");
        assert!(matches!(v.decode(&[v.len() as u32]), Err(TokenizerError::UnknownId(_))));
        assert_eq!(v.encode(""), Vec::<u32>::new());
        assert_eq!(v.decode(&[]).unwrap(), "");
    }

    #[test]
    fn text_format_reload_is_exact() {
        let v = Vocabulary::train(&["for ( int index = 0 ; index < count ; index ++ ) { total += index ; } return total ;"], 420).unwrap();
        let text = v.to_text();
        let back = Vocabulary::from_text(&text).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.to_text(), text);
        assert!(v.num_merges() > 2);
        let lines: Vec<&str> = text.lines().collect();
        let truncated = lines[..lines.len() - 1].join("\n");
        assert!(Vocabulary::from_text(&truncated).is_err());
    }

    #[test]
    fn length_profile() {
        let v = Vocabulary::train(&["x"], MIN_VOCAB_SIZE).unwrap();
        // no merges: one id per byte
        let p = max_pair_length(&v, &[sample("ab", "hello")]).unwrap();
        assert_eq!((p.max_input_len, p.max_target_len), (3, 6));
        assert!(matches!(max_pair_length(&v, &[]), Err(TokenizerError::EmptyDataset)));

        let texts = ["get the value", "int get ( ) { return value ; }", "set it", "void set ( int v ) { value = v ; }"];
        let v = Vocabulary::train(&texts, 400).unwrap();
        let samples = vec![
            sample(texts[0], texts[1]),
            sample(texts[2], texts[3]),
            sample("", "int x ;"),
        ];
        let p = max_pair_length(&v, &samples).unwrap();
        let want_in = samples.iter().map(|s| v.encode(&s.nl).len() + 1).max().unwrap();
        let want_tg = samples.iter().map(|s| v.encode(&s.code).len() + 1).max().unwrap();
        assert_eq!((p.max_input_len, p.max_target_len), (want_in, want_tg));
    }

    fn small_vocab() -> Vocabulary {
        Vocabulary::train(
            &["the quick brown fox", "public static void main ( String [ ] args )", "naïve café ☕ 日本語"],
            450,
        )
        .unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn round_trip_is_lossless(s in any::<String>()) {
            let v = small_vocab_cached();
            let ids = v.encode(&s);
            prop_assert!(ids.iter().all(|&id| !v.is_special(id)));
            prop_assert_eq!(v.decode(&ids).unwrap(), s);
        }
    }

    proptest! {
        #[test]
        fn adding_a_sample_never_shrinks_maxima(
            a in "[a-z ]{0,30}", b in "[a-z(){};= ]{1,40}", c in "[a-z ]{0,30}", d in "[a-z(){};= ]{1,40}"
        ) {
            let v = small_vocab_cached();
            let one = max_pair_length(&v, &[sample(&a, &b)]).unwrap();
            let two = max_pair_length(&v, &[sample(&a, &b), sample(&c, &d)]).unwrap();
            prop_assert!(two.max_input_len >= one.max_input_len);
            prop_assert!(two.max_target_len >= one.max_target_len);
        }
    }

    fn small_vocab_cached() -> &'static Vocabulary {
        static V: std::sync::OnceLock<Vocabulary> = std::sync::OnceLock::new();
        V.get_or_init(small_vocab)
    }
}
