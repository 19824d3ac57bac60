//! PMI topic-coherence evaluation against a reference corpus.
//!
//! Co-occurrence is counted over fixed-width token windows slid with stride
//! one (binary presence per window, windows never cross documents). PMI of a
//! word pair is log(c_uv * total / (c_u * c_v)) with the pair count lifted
//! to 1 when zero, and a topic's coherence is the mean PMI over all pairs of
//! its top words.
//!
//! # Index file layout (version 1, all integers little-endian)
//!
//! ```text
//! offset  size  field
//! 0       8     magic "SHDPCIDX"
//! 8       4     version: u32 = 1
//! 12      4     window_size: u32
//! 16      8     total_windows: u64
//! 24      8     word entry count: u64
//! ...           word entries, sorted ascending by name bytes:
//!                 name_len: u32, name: UTF-8 bytes, window_count: u64
//! ...     8     pair entry count: u64
//! ...           pair entries, sorted ascending by (u, v):
//!                 u: u32, v: u32, window_count: u64
//! ```
//!
//! `u` and `v` index the word entry list and satisfy `u < v`.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::tokenize;
use crate::error::{Error, Result};
use crate::model::{top_words, GlobalState};

const MAGIC: &[u8; 8] = b"SHDPCIDX";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceIndex {
    window_size: usize,
    total_windows: u64,
    /// Sorted list of reference-seen target words.
    words: Vec<String>,
    word_counts: Vec<u64>,
    index: HashMap<String, u32>,
    /// Keyed by (u, v) with u < v, indices into `words`.
    pair_counts: HashMap<(u32, u32), u64>,
}

#[derive(Default)]
struct RawCounts {
    total_windows: u64,
    word: HashMap<String, u64>,
    pair: HashMap<(String, String), u64>,
}

impl RawCounts {
    fn merge(mut self, other: RawCounts) -> RawCounts {
        self.total_windows += other.total_windows;
        for (w, c) in other.word {
            *self.word.entry(w).or_insert(0) += c;
        }
        for (p, c) in other.pair {
            *self.pair.entry(p).or_insert(0) += c;
        }
        self
    }
}

fn count_document(text: &str, target: &HashSet<String>, window: usize) -> RawCounts {
    let tokens = tokenize(text);
    let mut counts = RawCounts::default();
    if tokens.is_empty() {
        return counts;
    }
    let spans = if tokens.len() <= window {
        vec![(0, tokens.len())]
    } else {
        (0..=tokens.len() - window).map(|s| (s, s + window)).collect()
    };
    counts.total_windows = spans.len() as u64;
    let mut present: Vec<&String> = Vec::with_capacity(window);
    for (start, end) in spans {
        present.clear();
        for token in &tokens[start..end] {
            if target.contains(token) && !present.iter().any(|p| *p == token) {
                present.push(token);
            }
        }
        present.sort();
        for (i, u) in present.iter().enumerate() {
            *counts.word.entry((*u).clone()).or_insert(0) += 1;
            for v in &present[i + 1..] {
                *counts
                    .pair
                    .entry(((*u).clone(), (*v).clone()))
                    .or_insert(0) += 1;
            }
        }
    }
    counts
}

/// Counts window co-occurrence of `target_vocab` words over the reference
/// texts. Documents are sharded across the worker pool; integer counts make
/// the merged result independent of scheduling.
pub fn build_index(
    reference_docs: &[String],
    target_vocab: &HashSet<String>,
    window: usize,
) -> Result<CoherenceIndex> {
    if window < 2 {
        return Err(Error::Config(format!(
            "window size must be >= 2, got {window}"
        )));
    }
    if reference_docs.is_empty() {
        return Err(Error::Data("reference corpus has no documents".into()));
    }
    let raw = reference_docs
        .par_iter()
        .map(|text| count_document(text, target_vocab, window))
        .reduce(RawCounts::default, RawCounts::merge);
    if raw.total_windows == 0 {
        return Err(Error::Data(
            "reference corpus contains no tokens to window".into(),
        ));
    }
    let mut words: Vec<String> = raw.word.keys().cloned().collect();
    words.sort();
    let index: HashMap<String, u32> = words
        .iter()
        .enumerate()
        .map(|(i, w)| (w.clone(), i as u32))
        .collect();
    let word_counts: Vec<u64> = words.iter().map(|w| raw.word[w]).collect();
    let pair_counts: HashMap<(u32, u32), u64> = raw
        .pair
        .into_iter()
        .map(|((u, v), c)| ((index[&u], index[&v]), c))
        .collect();
    let built = CoherenceIndex {
        window_size: window,
        total_windows: raw.total_windows,
        words,
        word_counts,
        index,
        pair_counts,
    };
    built.check_consistency()?;
    Ok(built)
}

impl CoherenceIndex {
    pub fn window_size(&self) -> usize {
        self.window_size
    }

    pub fn total_windows(&self) -> u64 {
        self.total_windows
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    /// Number of windows containing the word; None if unseen.
    pub fn word_count(&self, word: &str) -> Option<u64> {
        self.index.get(word).map(|&i| self.word_counts[i as usize])
    }

    /// Number of windows containing both words, 0 when both are known but
    /// never co-occur; None if either is unseen.
    pub fn pair_count(&self, u: &str, v: &str) -> Option<u64> {
        let &iu = self.index.get(u)?;
        let &iv = self.index.get(v)?;
        let key = (iu.min(iv), iu.max(iv));
        Some(self.pair_counts.get(&key).copied().unwrap_or(0))
    }

    /// Pointwise mutual information log(c_uv * total / (c_u * c_v)), with
    /// zero pair counts lifted to 1 so the value stays finite.
    pub fn pmi(&self, u: &str, v: &str) -> Result<f64> {
        if u == v {
            return Err(Error::Domain(format!(
                "PMI of word {u:?} with itself is undefined"
            )));
        }
        let c_u = self
            .word_count(u)
            .ok_or_else(|| Error::Data(format!("word {u:?} is not in the reference index")))?;
        let c_v = self
            .word_count(v)
            .ok_or_else(|| Error::Data(format!("word {v:?} is not in the reference index")))?;
        let c_uv = self.pair_count(u, v).unwrap_or(0).max(1);
        Ok(((c_uv as f64 * self.total_windows as f64) / (c_u as f64 * c_v as f64)).ln())
    }

    fn check_consistency(&self) -> Result<()> {
        if self.words.len() != self.word_counts.len() {
            return Err(Error::Data("index word/count lengths differ".into()));
        }
        for (w, &c) in self.words.iter().zip(&self.word_counts) {
            if c == 0 || c > self.total_windows {
                return Err(Error::Data(format!(
                    "index word {w:?} has count {c} outside [1, {}]",
                    self.total_windows
                )));
            }
        }
        for (&(u, v), &c) in &self.pair_counts {
            if u >= v || v as usize >= self.words.len() {
                return Err(Error::Data(format!("index pair ({u}, {v}) is malformed")));
            }
            let cap = self.word_counts[u as usize].min(self.word_counts[v as usize]);
            if c == 0 || c > cap {
                return Err(Error::Data(format!(
                    "index pair ({u}, {v}) count {c} exceeds its marginals"
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.window_size as u32).to_le_bytes());
        buf.extend_from_slice(&self.total_windows.to_le_bytes());
        buf.extend_from_slice(&(self.words.len() as u64).to_le_bytes());
        for (w, &c) in self.words.iter().zip(&self.word_counts) {
            buf.extend_from_slice(&(w.len() as u32).to_le_bytes());
            buf.extend_from_slice(w.as_bytes());
            buf.extend_from_slice(&c.to_le_bytes());
        }
        let mut pairs: Vec<(&(u32, u32), &u64)> = self.pair_counts.iter().collect();
        pairs.sort();
        buf.extend_from_slice(&(pairs.len() as u64).to_le_bytes());
        for (&(u, v), &c) in pairs {
            buf.extend_from_slice(&u.to_le_bytes());
            buf.extend_from_slice(&v.to_le_bytes());
            buf.extend_from_slice(&c.to_le_bytes());
        }
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        file.write_all(&buf)?;
        file.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<CoherenceIndex> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut cursor = 0usize;
        let take = |cursor: &mut usize, n: usize| -> Result<&[u8]> {
            let end = *cursor + n;
            if end > bytes.len() {
                return Err(Error::Data("index file is truncated".into()));
            }
            let slice = &bytes[*cursor..end];
            *cursor = end;
            Ok(slice)
        };
        let u32_at = |cursor: &mut usize| -> Result<u32> {
            Ok(u32::from_le_bytes(take(cursor, 4)?.try_into().unwrap()))
        };
        let u64_at = |cursor: &mut usize| -> Result<u64> {
            Ok(u64::from_le_bytes(take(cursor, 8)?.try_into().unwrap()))
        };
        if take(&mut cursor, 8)? != MAGIC {
            return Err(Error::Data("not a coherence index file".into()));
        }
        let version = u32_at(&mut cursor)?;
        if version != VERSION {
            return Err(Error::Data(format!(
                "unsupported index version {version}"
            )));
        }
        let window_size = u32_at(&mut cursor)? as usize;
        let total_windows = u64_at(&mut cursor)?;
        let n_words = u64_at(&mut cursor)? as usize;
        let mut words = Vec::with_capacity(n_words);
        let mut word_counts = Vec::with_capacity(n_words);
        for _ in 0..n_words {
            let len = u32_at(&mut cursor)? as usize;
            let name = std::str::from_utf8(take(&mut cursor, len)?)
                .map_err(|_| Error::Data("index contains a non-UTF-8 word".into()))?
                .to_string();
            if let Some(last) = words.last() {
                if *last >= name {
                    return Err(Error::Data("index words are not sorted".into()));
                }
            }
            words.push(name);
            word_counts.push(u64_at(&mut cursor)?);
        }
        let n_pairs = u64_at(&mut cursor)? as usize;
        let mut pair_counts = HashMap::with_capacity(n_pairs);
        for _ in 0..n_pairs {
            let u = u32_at(&mut cursor)?;
            let v = u32_at(&mut cursor)?;
            let c = u64_at(&mut cursor)?;
            pair_counts.insert((u, v), c);
        }
        if cursor != bytes.len() {
            return Err(Error::Data("index file has trailing bytes".into()));
        }
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        let loaded = CoherenceIndex {
            window_size,
            total_windows,
            words,
            word_counts,
            index,
            pair_counts,
        };
        loaded.check_consistency()?;
        Ok(loaded)
    }
}

/// Top words of one topic, as scored for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicWordList {
    pub topic_id: usize,
    pub words: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopicCoherence {
    /// Mean pairwise PMI over the scored pairs.
    pub value: f64,
    /// Fraction of word pairs whose members were both found in the index.
    pub coverage: f64,
}

/// Mean pairwise PMI of the topic's words; pairs touching an index-missing
/// word are skipped and reflected in the coverage statistic.
pub fn topic_coherence(index: &CoherenceIndex, topic: &TopicWordList) -> Result<TopicCoherence> {
    let words = &topic.words;
    if words.len() < 2 {
        return Err(Error::Degenerate(format!(
            "topic {} has fewer than two words to score",
            topic.topic_id
        )));
    }
    let unique: HashSet<&String> = words.iter().collect();
    if unique.len() != words.len() {
        return Err(Error::Domain(format!(
            "topic {} word list contains duplicates",
            topic.topic_id
        )));
    }
    let resolvable = words.iter().filter(|w| index.contains(w)).count();
    if resolvable < 2 {
        return Err(Error::Degenerate(format!(
            "topic {} has fewer than two words in the reference index; coherence is undefined",
            topic.topic_id
        )));
    }
    let total_pairs = words.len() * (words.len() - 1) / 2;
    let mut scored = 0usize;
    let mut sum = 0.0;
    for i in 0..words.len() {
        for j in i + 1..words.len() {
            if index.contains(&words[i]) && index.contains(&words[j]) {
                sum += index.pmi(&words[i], &words[j])?;
                scored += 1;
            }
        }
    }
    Ok(TopicCoherence {
        value: sum / scored as f64,
        coverage: scored as f64 / total_pairs as f64,
    })
}

#[derive(Debug, Clone)]
pub struct TopicCoherenceRow {
    pub topic_id: usize,
    pub coherence: f64,
    pub coverage: f64,
    pub words: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ModelCoherence {
    pub average: f64,
    pub per_topic: Vec<TopicCoherenceRow>,
}

/// Scores every active topic (estimated mass above the reporting threshold)
/// by the coherence of its top-N words and averages the results. Topics
/// whose words cannot be resolved in the index are skipped with a warning;
/// failing every topic is an error.
pub fn model_coherence(
    index: &CoherenceIndex,
    state: &GlobalState,
    top_n: usize,
) -> Result<ModelCoherence> {
    if top_n < 2 {
        return Err(Error::Config(format!("top-n must be >= 2, got {top_n}")));
    }
    let active = state.active_topics();
    if active.is_empty() {
        return Err(Error::Degenerate("model has no active topics".into()));
    }
    let mut per_topic = Vec::new();
    for k in active {
        let words: Vec<String> = top_words(state, k, top_n)?
            .into_iter()
            .map(|(w, _)| w)
            .collect();
        let list = TopicWordList { topic_id: k, words };
        match topic_coherence(index, &list) {
            Ok(tc) => per_topic.push(TopicCoherenceRow {
                topic_id: k,
                coherence: tc.value,
                coverage: tc.coverage,
                words: list.words,
            }),
            Err(Error::Degenerate(msg)) => {
                log::warn!("skipping topic {k}: {msg}");
            }
            Err(e) => return Err(e),
        }
    }
    if per_topic.is_empty() {
        return Err(Error::Degenerate(
            "no topic had at least two words resolvable in the reference index".into(),
        ));
    }
    let average = per_topic.iter().map(|r| r.coherence).sum::<f64>() / per_topic.len() as f64;
    Ok(ModelCoherence { average, per_topic })
}
