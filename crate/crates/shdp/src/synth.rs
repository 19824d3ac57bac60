//! Synthetic data drawn from the model's own generative process, used for
//! recovery benchmarks and ground-truth regression tests.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document};
use crate::directional::{sample_uniform_sphere, sample_vmf, UnitVector, VmfParams};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::numeric::stable_hash;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Number of planted topics K.
    pub num_topics: usize,
    /// Embedding dimension M.
    pub dim: usize,
    /// Shared emission concentration.
    pub kappa: f64,
    pub num_docs: usize,
    /// Tokens per document.
    pub doc_len: usize,
    /// Word types; each type is a vMF draw from its topic's direction.
    pub vocab_size: usize,
    /// Stick-breaking concentration for the planted topic weights.
    pub gamma: f64,
    /// Document Dirichlet concentration around the planted weights.
    pub alpha: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_topics == 0 {
            return Err(Error::Config("need at least one topic".into()));
        }
        if self.dim < 2 {
            return Err(Error::Config(format!(
                "dimension must be >= 2, got {}",
                self.dim
            )));
        }
        if !self.kappa.is_finite() || self.kappa < 0.0 {
            return Err(Error::Config(format!(
                "kappa must be finite and >= 0, got {}",
                self.kappa
            )));
        }
        if self.num_docs == 0 || self.doc_len == 0 {
            return Err(Error::Config("need at least one document and one token".into()));
        }
        if self.vocab_size < self.num_topics {
            return Err(Error::Config(format!(
                "vocabulary size {} is below the topic count {}",
                self.vocab_size, self.num_topics
            )));
        }
        for (name, v) in [("gamma", self.gamma), ("alpha", self.alpha)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Ground truth of a generated corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthTruth {
    pub topic_directions: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
    pub kappa: f64,
    /// Planted topic of each vocabulary word, index-aligned with the vocab.
    pub word_topics: Vec<usize>,
}

#[derive(Debug)]
pub struct SynthOutput {
    pub table: EmbeddingTable,
    pub corpus: Corpus,
    pub truth: SynthTruth,
}

/// Samples a corpus: topic weights by stick-breaking truncated at K, topic
/// directions uniform on the sphere, one vMF draw per vocabulary word from
/// its topic (words are assigned to topics round-robin), then per document a
/// Dirichlet(alpha beta) mixture and token-wise topic/word draws. Byte-level
/// deterministic for a fixed config.
pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut seed_bytes = cfg.seed.to_le_bytes().to_vec();
    seed_bytes.extend_from_slice(b"synth");
    let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&seed_bytes));
    let k = cfg.num_topics;

    let mut beta = vec![0.0; k];
    let mut remaining = 1.0;
    if k > 1 {
        let stick = Beta::new(1.0, cfg.gamma)
            .map_err(|e| Error::Config(format!("stick-breaking prior: {e}")))?;
        for b in beta.iter_mut().take(k - 1) {
            let v: f64 = stick.sample(&mut rng);
            *b = v * remaining;
            remaining *= 1.0 - v;
        }
    }
    beta[k - 1] = remaining;

    let directions: Vec<UnitVector> = (0..k)
        .map(|_| sample_uniform_sphere(&mut rng, cfg.dim))
        .collect::<Result<_>>()?;

    let width = cfg.vocab_size.saturating_sub(1).to_string().len();
    let mut vocab = Vec::with_capacity(cfg.vocab_size);
    let mut vectors = Vec::with_capacity(cfg.vocab_size);
    let mut word_topics = Vec::with_capacity(cfg.vocab_size);
    for j in 0..cfg.vocab_size {
        let topic = j % k;
        let params = VmfParams::new(directions[topic].clone(), cfg.kappa)?;
        vocab.push(format!("w{j:0width$}"));
        vectors.push(sample_vmf(&mut rng, &params)?);
        word_topics.push(topic);
    }
    let pool_size = |topic: usize| {
        cfg.vocab_size / k + usize::from(topic < cfg.vocab_size % k)
    };

    let mut docs = Vec::with_capacity(cfg.num_docs);
    for d in 0..cfg.num_docs {
        let mut weights: Vec<f64> = beta
            .iter()
            .map(|&b| -> Result<f64> {
                let shape = cfg.alpha * b;
                if shape <= 0.0 {
                    return Ok(0.0);
                }
                let gamma_dist = Gamma::new(shape, 1.0)
                    .map_err(|e| Error::Config(format!("document mixture prior: {e}")))?;
                Ok(gamma_dist.sample(&mut rng))
            })
            .collect::<Result<_>>()?;
        let total: f64 = weights.iter().sum();
        if total > 0.0 {
            for w in &mut weights {
                *w /= total;
            }
        } else {
            weights = vec![1.0 / k as f64; k];
        }
        let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
        for _ in 0..cfg.doc_len {
            let mut u = rng.random::<f64>();
            let mut topic = k - 1;
            for (i, &w) in weights.iter().enumerate() {
                u -= w;
                if u <= 0.0 {
                    topic = i;
                    break;
                }
            }
            let pick = rng.random_range(0..pool_size(topic));
            let word = (topic + pick * k) as u32;
            *counts.entry(word).or_insert(0.0) += 1.0;
        }
        let (words, counts): (Vec<u32>, Vec<f64>) = counts.into_iter().unzip();
        docs.push(Document {
            id: (d + 1).to_string(),
            words,
            counts,
        });
    }

    let table = EmbeddingTable::from_entries(
        vocab.iter().cloned().zip(vectors.iter().cloned()).collect(),
    )?;
    Ok(SynthOutput {
        table,
        corpus: Corpus { vocab, docs },
        truth: SynthTruth {
            topic_directions: directions.iter().map(|d| d.as_slice().to_vec()).collect(),
            beta,
            kappa: cfg.kappa,
            word_topics,
        },
    })
}
