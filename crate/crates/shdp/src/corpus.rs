//! Corpus construction: tokenization, vocabulary building and minibatching.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::numeric::stable_hash;

/// A document as a sparse bag of vocabulary indices with counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    /// Distinct word indices into `Corpus::vocab`, strictly increasing.
    pub words: Vec<u32>,
    /// Occurrence count for each entry of `words`.
    pub counts: Vec<f64>,
}

impl Document {
    pub fn token_count(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn distinct_words(&self) -> usize {
        self.words.len()
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    /// Lexicographically sorted surviving vocabulary.
    pub vocab: Vec<String>,
    pub docs: Vec<Document>,
}

impl Corpus {
    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn total_tokens(&self) -> f64 {
        self.docs.iter().map(|d| d.token_count()).sum()
    }
}

/// Lowercases with full Unicode rules, splits on non-alphanumeric characters
/// and drops tokens that are entirely digits.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && !t.chars().all(|c| c.is_numeric()))
        .map(str::to_string)
        .collect()
}

/// Reads raw documents: a plain file yields one document per line (ids are
/// 1-based line numbers), a directory yields one document per `.txt` file in
/// name order (ids are file stems).
pub fn read_documents(path: &Path) -> Result<Vec<(String, String)>> {
    if path.is_dir() {
        let mut files: Vec<_> = std::fs::read_dir(path)?
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.extension().map(|e| e == "txt").unwrap_or(false))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Data(format!(
                "no .txt files in directory {}",
                path.display()
            )));
        }
        files
            .into_iter()
            .map(|p| {
                let id = p
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| p.display().to_string());
                let text = std::fs::read_to_string(&p)
                    .map_err(|e| Error::Data(format!("cannot read {}: {e}", p.display())))?;
                Ok((id, text))
            })
            .collect()
    } else {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read corpus {}: {e}", path.display())))?;
        Ok(text
            .lines()
            .enumerate()
            .map(|(i, line)| ((i + 1).to_string(), line.to_string()))
            .collect())
    }
}

/// Stopword list: one word per line, `#` comments allowed.
pub fn parse_stopwords(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

pub fn load_stopwords(path: &Path) -> Result<HashSet<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read stopwords {}: {e}", path.display())))?;
    Ok(parse_stopwords(&text))
}

pub fn default_stopwords() -> HashSet<String> {
    parse_stopwords(include_str!("../data/stopwords_en.txt"))
}

/// Tokenizes raw documents, drops stopwords and words without an embedding,
/// applies the corpus-frequency floor and assembles the index-aligned corpus.
/// Documents that end up empty are dropped with a warning; a corpus with no
/// surviving documents is an error.
pub fn build_corpus(
    raw_docs: &[(String, String)],
    table: &EmbeddingTable,
    stopwords: &HashSet<String>,
    min_count: usize,
) -> Result<Corpus> {
    let mut tokenized: Vec<(&str, Vec<String>)> = Vec::with_capacity(raw_docs.len());
    let mut oov_tokens: u64 = 0;
    let mut corpus_freq: HashMap<String, usize> = HashMap::new();
    for (id, text) in raw_docs {
        let mut kept = Vec::new();
        for token in tokenize(text) {
            if stopwords.contains(&token) {
                continue;
            }
            if !table.contains(&token) {
                oov_tokens += 1;
                continue;
            }
            *corpus_freq.entry(token.clone()).or_insert(0) += 1;
            kept.push(token);
        }
        tokenized.push((id, kept));
    }
    if oov_tokens > 0 {
        log::info!("dropped {oov_tokens} tokens without an embedding");
    }

    let mut vocab: Vec<String> = corpus_freq
        .iter()
        .filter(|&(_, &c)| c >= min_count.max(1))
        .map(|(w, _)| w.clone())
        .collect();
    vocab.sort();
    let vocab_index: HashMap<&str, u32> = vocab
        .iter()
        .enumerate()
        .map(|(i, w)| (w.as_str(), i as u32))
        .collect();

    let mut docs = Vec::with_capacity(tokenized.len());
    let mut dropped_docs = 0usize;
    for (id, tokens) in tokenized {
        let mut counts: HashMap<u32, f64> = HashMap::new();
        for token in &tokens {
            if let Some(&idx) = vocab_index.get(token.as_str()) {
                *counts.entry(idx).or_insert(0.0) += 1.0;
            }
        }
        if counts.is_empty() {
            dropped_docs += 1;
            log::warn!("dropping document {id:?}: no usable tokens");
            continue;
        }
        let mut pairs: Vec<(u32, f64)> = counts.into_iter().collect();
        pairs.sort_by_key(|&(w, _)| w);
        docs.push(Document {
            id: id.to_string(),
            words: pairs.iter().map(|&(w, _)| w).collect(),
            counts: pairs.iter().map(|&(_, c)| c).collect(),
        });
    }
    if dropped_docs > 0 {
        log::warn!("dropped {dropped_docs} documents with no usable tokens");
    }
    if docs.is_empty() {
        return Err(Error::Data(
            "no documents survived filtering; check stopwords, embeddings and min_count".into(),
        ));
    }
    Ok(Corpus { vocab, docs })
}

/// Splits a corpus into (train, heldout) by a stable hash of document ids.
/// `fraction` is the held-out share in [0, 1).
pub fn split_heldout(corpus: Corpus, fraction: f64) -> (Corpus, Vec<Document>) {
    if fraction <= 0.0 {
        return (corpus, Vec::new());
    }
    let threshold = (fraction * 10_000.0) as u64;
    let (mut train, mut heldout) = (Vec::new(), Vec::new());
    for doc in corpus.docs {
        if stable_hash(doc.id.as_bytes()) % 10_000 < threshold {
            heldout.push(doc);
        } else {
            train.push(doc);
        }
    }
    (
        Corpus {
            vocab: corpus.vocab,
            docs: train,
        },
        heldout,
    )
}

/// Deterministic epoch iterator: a fresh seeded permutation of the document
/// indices at each epoch boundary, served in `batch_size` chunks.
#[derive(Debug, Clone)]
pub struct BatchPlan {
    num_docs: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
    cursor: usize,
    perm: Vec<usize>,
}

impl BatchPlan {
    pub fn new(num_docs: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if num_docs == 0 {
            return Err(Error::Config("batch plan over zero documents".into()));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        let mut plan = BatchPlan {
            num_docs,
            batch_size: batch_size.min(num_docs),
            seed,
            epoch: 0,
            cursor: 0,
            perm: Vec::new(),
        };
        plan.reshuffle();
        Ok(plan)
    }

    fn reshuffle(&mut self) {
        let mut seed_bytes = self.seed.to_le_bytes().to_vec();
        seed_bytes.extend_from_slice(&self.epoch.to_le_bytes());
        seed_bytes.extend_from_slice(b"batch");
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&seed_bytes));
        self.perm = (0..self.num_docs).collect();
        self.perm.shuffle(&mut rng);
        self.cursor = 0;
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.num_docs.div_ceil(self.batch_size)
    }

    /// Document indices of the next batch; advances to the next epoch (with
    /// a fresh permutation) when the current one is exhausted.
    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor >= self.num_docs {
            self.epoch += 1;
            self.reshuffle();
        }
        let end = (self.cursor + self.batch_size).min(self.num_docs);
        let batch = self.perm[self.cursor..end].to_vec();
        self.cursor = end;
        batch
    }
}
