//! Word embedding tables in the word2vec text format.
//!
//! A file is one row per word: the word followed by its vector components,
//! space-separated. An optional first line `<count> <dim>` is detected
//! automatically. Vectors are normalized to unit length on load.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::directional::UnitVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    vectors: Vec<UnitVector>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Exact, case-sensitive lookup.
    pub fn lookup(&self, word: &str) -> Option<&UnitVector> {
        self.index.get(word).map(|&i| &self.vectors[i])
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    /// Mean of all vectors, renormalized. Fails when the vectors cancel out.
    pub fn mean_direction(&self) -> Result<UnitVector> {
        let mut mean = vec![0.0; self.dim];
        for v in &self.vectors {
            for (m, x) in mean.iter_mut().zip(v.as_slice()) {
                *m += x;
            }
        }
        for m in mean.iter_mut() {
            *m /= self.vectors.len() as f64;
        }
        UnitVector::from_unnormalized(mean)
            .map_err(|_| Error::Data("embedding vectors cancel out; no mean direction".into()))
    }

    /// Builds a table in memory; used by the synthetic generator and tests.
    pub fn from_entries(entries: Vec<(String, UnitVector)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Data("embedding table has no entries".into()));
        }
        let dim = entries[0].1.dim();
        let mut table = EmbeddingTable {
            dim,
            words: Vec::with_capacity(entries.len()),
            vectors: Vec::with_capacity(entries.len()),
            index: HashMap::with_capacity(entries.len()),
        };
        for (word, vector) in entries {
            if vector.dim() != dim {
                return Err(Error::Data(format!(
                    "vector for {word:?} has dimension {}, expected {dim}",
                    vector.dim()
                )));
            }
            table.push(word, vector);
        }
        Ok(table)
    }

    fn push(&mut self, word: String, vector: UnitVector) {
        if let std::collections::hash_map::Entry::Vacant(e) = self.index.entry(word.clone()) {
            e.insert(self.words.len());
            self.words.push(word);
            self.vectors.push(vector);
        } else {
            log::warn!("duplicate embedding for {word:?}; keeping the first");
        }
    }

    /// Writes the table back out with a header line. Floats are printed as
    /// shortest round-trip decimals, so save -> load reproduces bits.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.words.len(), self.dim);
        for (word, vector) in self.words.iter().zip(&self.vectors) {
            out.push_str(word);
            for x in vector.as_slice() {
                let _ = write!(out, " {x}");
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Loads a word2vec text file. `filter`, when given, keeps only the listed
/// words (useful for large embedding files).
pub fn load_embeddings(path: &Path, filter: Option<&HashSet<String>>) -> Result<EmbeddingTable> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read embeddings {}: {e}", path.display())))?;
    parse_embeddings(&text, filter)
}

fn parse_embeddings(text: &str, filter: Option<&HashSet<String>>) -> Result<EmbeddingTable> {
    let mut lines = text.lines().enumerate().peekable();

    // Header detection: a first line of exactly two positive integers.
    let mut declared_dim = None;
    if let Some((_, first)) = lines.peek() {
        let fields: Vec<&str> = first.split_whitespace().collect();
        if fields.len() == 2 {
            if let (Ok(n), Ok(d)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                if n > 0 && d > 0 {
                    declared_dim = Some(d);
                    lines.next();
                }
            }
        }
    }

    let mut dim = declared_dim;
    let mut entries: Vec<(String, UnitVector)> = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let line_display = lineno + 1;
        let mut fields = line.split_whitespace();
        let word = fields
            .next()
            .ok_or_else(|| Error::Parse {
                line: line_display,
                msg: "empty embedding row".into(),
            })?
            .to_string();
        let raw: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    line: line_display,
                    msg: format!("bad float {f:?}"),
                })
            })
            .collect::<Result<_>>()?;
        let d = *dim.get_or_insert(raw.len());
        if raw.len() != d {
            return Err(Error::Parse {
                line: line_display,
                msg: format!("expected {d} components, found {}", raw.len()),
            });
        }
        if let Some(keep) = filter {
            if !keep.contains(&word) {
                continue;
            }
        }
        let vector = UnitVector::from_unnormalized(raw).map_err(|_| {
            Error::Data(format!(
                "embedding for {word:?} at line {line_display} has zero or non-finite norm"
            ))
        })?;
        entries.push((word, vector));
    }
    if entries.is_empty() {
        return Err(Error::Data("no usable embedding rows".into()));
    }
    EmbeddingTable::from_entries(entries)
}
