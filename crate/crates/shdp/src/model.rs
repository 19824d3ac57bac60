//! Model state and variational updates.
//!
//! Topics are vMF distributions with a shared vMF prior on directions and a
//! log-Normal prior on concentrations; documents mix topics through a
//! truncated hierarchical Dirichlet process. The variational family is
//!
//! ```text
//! q(z) q(beta) q(pi) q(mu) q(kappa)
//! ```
//!
//! with q(beta) a point mass at beta_star, q(pi_d) Dirichlet(theta_d),
//! q(mu_k) = vMF(psi_k, lambda_k) carried by its natural parameter
//! t_k = lambda_k psi_k, and q(kappa_k) an importance-weighted sample cloud
//! from the log-Normal prior.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::corpus::{Corpus, Document};
use crate::directional::{self, UnitVector};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::numeric::{dot, l2_norm, softmax_in_place, stable_hash};

const LOCAL_TOL: f64 = 1e-4;
const LOCAL_MAX_ITERS: usize = 100;
/// Topics whose estimated share of corpus tokens falls below this are
/// reported as unused.
pub const ACTIVE_MASS_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Truncation level T of the topic stick-breaking.
    pub truncation: usize,
    /// GEM concentration of the corpus-level sticks.
    pub gamma: f64,
    /// Concentration of each document's DP around beta_star.
    pub alpha: f64,
    /// Location of the log-Normal prior on kappa.
    pub kappa_prior_m: f64,
    /// Scale of the log-Normal prior on kappa.
    pub kappa_prior_sigma: f64,
    /// Concentration of the vMF prior on topic directions.
    pub c0: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            truncation: 100,
            gamma: 1.0,
            alpha: 1.0,
            kappa_prior_m: 100.0_f64.ln(),
            kappa_prior_sigma: 1.0,
            c0: 0.01,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.truncation < 2 {
            return Err(Error::Config(format!(
                "truncation must be >= 2, got {}",
                self.truncation
            )));
        }
        for (name, v, strictly_positive) in [
            ("gamma", self.gamma, true),
            ("alpha", self.alpha, true),
            ("kappa-prior-sigma", self.kappa_prior_sigma, true),
            ("kappa-prior-m", self.kappa_prior_m, false),
            ("c0", self.c0, false),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite, got {v}")));
            }
            if strictly_positive && v <= 0.0 {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
            if !strictly_positive && name == "c0" && v < 0.0 {
                return Err(Error::Config(format!("c0 must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-topic variational state.
#[derive(Debug, Clone)]
pub struct TopicState {
    /// Natural parameter of q(mu): direction psi = t/||t||, scale lambda = ||t||.
    pub t: Vec<f64>,
    psi: UnitVector,
    lambda: f64,
    /// E[kappa] under the importance-weighted posterior.
    pub kappa_mean: f64,
    /// E[log C_M(kappa)] under the same.
    pub kappa_log_norm_mean: f64,
    /// (value, normalized weight) pairs from the latest kappa update; empty
    /// in states restored from a checkpoint.
    pub kappa_samples: Vec<(f64, f64)>,
    /// Effective sample size of the latest kappa update.
    pub kappa_ess: f64,
}

impl TopicState {
    pub(crate) fn from_t(
        t: Vec<f64>,
        kappa_mean: f64,
        kappa_log_norm_mean: f64,
        kappa_samples: Vec<(f64, f64)>,
        kappa_ess: f64,
    ) -> Result<Self> {
        let lambda = l2_norm(&t);
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Numeric(format!(
                "topic natural parameter has invalid norm {lambda}"
            )));
        }
        let psi = UnitVector::from_unnormalized(t.clone())?;
        Ok(TopicState {
            t,
            psi,
            lambda,
            kappa_mean,
            kappa_log_norm_mean,
            kappa_samples,
            kappa_ess,
        })
    }

    pub fn psi(&self) -> &UnitVector {
        &self.psi
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn set_t(&mut self, t: Vec<f64>) -> Result<()> {
        let lambda = l2_norm(&t);
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Numeric(format!(
                "topic natural parameter has invalid norm {lambda}"
            )));
        }
        self.psi = UnitVector::from_unnormalized(t.clone())?;
        self.lambda = lambda;
        self.t = t;
        Ok(())
    }

    /// E_q[log vMF(x | mu, kappa)] for this topic.
    pub fn expected_log_vmf(&self, x: &UnitVector) -> Result<f64> {
        directional::expected_log_vmf(
            x,
            &self.psi,
            self.lambda,
            self.kappa_mean,
            self.kappa_log_norm_mean,
        )
    }
}

/// Full shared model state.
#[derive(Debug, Clone)]
pub struct GlobalState {
    pub hyper: Hyperparams,
    pub dim: usize,
    /// Number of training documents D (the SVI scale factor numerator).
    pub num_docs: usize,
    pub seed: u64,
    /// Global updates applied so far.
    pub step_count: u64,
    /// Point estimate of the corpus-level stick weights (a simplex).
    pub beta_star: Vec<f64>,
    pub topics: Vec<TopicState>,
    /// Prior mean direction: the normalized mean of the corpus word vectors.
    pub mu0: UnitVector,
    /// Corpus vocabulary, index-aligned with `word_vectors`.
    pub vocab: Vec<String>,
    pub word_vectors: Vec<UnitVector>,
    /// Stochastic estimate of each topic's share of corpus tokens.
    pub topic_mass: Vec<f64>,
}

impl GlobalState {
    pub fn truncation(&self) -> usize {
        self.hyper.truncation
    }

    /// Indices of topics holding enough estimated mass to be reported.
    pub fn active_topics(&self) -> Vec<usize> {
        (0..self.topics.len())
            .filter(|&k| self.topic_mass[k] > ACTIVE_MASS_THRESHOLD)
            .collect()
    }
}

/// Converged per-document variational quantities from a local step.
#[derive(Debug, Clone)]
pub struct DocumentVariational {
    /// Row-major (distinct word, topic) responsibilities; rows sum to one.
    pub phi: Vec<f64>,
    /// Local Dirichlet parameter over topics.
    pub theta: Vec<f64>,
    pub iterations: usize,
}

impl DocumentVariational {
    pub fn phi_at(&self, word_row: usize, topic: usize, truncation: usize) -> f64 {
        self.phi[word_row * truncation + topic]
    }
}

fn derived_rng(seed: u64, parts: &[u64], tag: &str) -> ChaCha8Rng {
    let mut bytes = seed.to_le_bytes().to_vec();
    for p in parts {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    bytes.extend_from_slice(tag.as_bytes());
    ChaCha8Rng::seed_from_u64(stable_hash(&bytes))
}

fn chordal_sq(a: &UnitVector, b: &UnitVector) -> f64 {
    (2.0 - 2.0 * a.dot(b)).max(0.0)
}

/// k-means++ seeding over unit vectors with squared chordal distance.
fn kmeans_pp_indices(rng: &mut ChaCha8Rng, vectors: &[UnitVector], t: usize) -> Vec<usize> {
    let w = vectors.len();
    debug_assert!(t <= w);
    let first = rng.random_range(0..w);
    let mut chosen = vec![first];
    let mut d2: Vec<f64> = vectors.iter().map(|v| chordal_sq(v, &vectors[first])).collect();
    while chosen.len() < t {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = w - 1;
            for (i, &weight) in d2.iter().enumerate() {
                target -= weight;
                if target <= 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // all remaining vectors coincide with a chosen seed
            (0..w).find(|i| !chosen.contains(i)).unwrap_or(first)
        };
        chosen.push(next);
        for (i, v) in vectors.iter().enumerate() {
            d2[i] = d2[i].min(chordal_sq(v, &vectors[next]));
        }
    }
    chosen
}

fn draw_kappa_prior_cloud(
    hyper: &Hyperparams,
    dim: usize,
    seed: u64,
    topic: u64,
    step: u64,
    sample_count: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rng = derived_rng(seed, &[topic, step], "kappa");
    let prior = LogNormal::new(hyper.kappa_prior_m, hyper.kappa_prior_sigma)
        .map_err(|e| Error::Config(format!("kappa prior: {e}")))?;
    let mut samples = Vec::with_capacity(sample_count);
    let mut log_norms = Vec::with_capacity(sample_count);
    for _ in 0..sample_count {
        let kappa: f64 = prior.sample(&mut rng);
        log_norms.push(directional::log_cm(dim, kappa)?);
        samples.push(kappa);
    }
    Ok((samples, log_norms))
}

/// Builds the initial state: uniform beta_star, topic directions seeded by
/// k-means++ over the corpus word vectors with lambda = c0 + 1, and kappa
/// clouds drawn from the prior with uniform weights.
pub fn init_state(
    hyper: &Hyperparams,
    corpus: &Corpus,
    table: &EmbeddingTable,
    seed: u64,
    kappa_sample_count: usize,
) -> Result<GlobalState> {
    hyper.validate()?;
    if kappa_sample_count == 0 {
        return Err(Error::Config("kappa sample count must be >= 1".into()));
    }
    let w = corpus.vocab.len();
    let t = hyper.truncation;
    if t > w {
        return Err(Error::Config(format!(
            "truncation {t} exceeds vocabulary size {w}"
        )));
    }
    if corpus.docs.is_empty() {
        return Err(Error::Data("corpus has no documents".into()));
    }
    let word_vectors: Vec<UnitVector> = corpus
        .vocab
        .iter()
        .map(|word| {
            table
                .lookup(word)
                .cloned()
                .ok_or_else(|| Error::Data(format!("corpus word {word:?} missing an embedding")))
        })
        .collect::<Result<_>>()?;
    let dim = word_vectors[0].dim();

    let mut mean = vec![0.0; dim];
    for v in &word_vectors {
        for (m, x) in mean.iter_mut().zip(v.as_slice()) {
            *m += x;
        }
    }
    let mu0 = UnitVector::from_unnormalized(mean)
        .map_err(|_| Error::Data("corpus word vectors cancel out; no prior direction".into()))?;

    let mut rng = derived_rng(seed, &[], "init");
    let seeds = kmeans_pp_indices(&mut rng, &word_vectors, t);
    let lambda0 = hyper.c0 + 1.0;
    // One prior cloud shared by all topics: they are exchangeable before any
    // data arrives, and independent per-topic draws would hand the topic with
    // the smallest initial E[kappa] a large per-token normalizer advantage
    // that decides the early winner before the directions can.
    let (samples, log_norms) = draw_kappa_prior_cloud(hyper, dim, seed, 0, 0, kappa_sample_count)?;
    let uniform = 1.0 / kappa_sample_count as f64;
    let kappa_mean = samples.iter().sum::<f64>() * uniform;
    let kappa_log_norm_mean = log_norms.iter().sum::<f64>() * uniform;
    let kappa_samples: Vec<(f64, f64)> = samples.into_iter().map(|s| (s, uniform)).collect();
    let mut topics = Vec::with_capacity(t);
    for &word_idx in &seeds {
        let direction = &word_vectors[word_idx];
        let t_vec: Vec<f64> = direction.as_slice().iter().map(|x| lambda0 * x).collect();
        topics.push(TopicState::from_t(
            t_vec,
            kappa_mean,
            kappa_log_norm_mean,
            kappa_samples.clone(),
            kappa_sample_count as f64,
        )?);
    }

    Ok(GlobalState {
        hyper: hyper.clone(),
        dim,
        num_docs: corpus.docs.len(),
        seed,
        step_count: 0,
        beta_star: vec![1.0 / t as f64; t],
        topics,
        mu0,
        vocab: corpus.vocab.clone(),
        word_vectors,
        topic_mass: vec![1.0 / t as f64; t],
    })
}

/// Runs the document-local coordinate ascent: phi and theta alternate until
/// the mean absolute phi change drops below 1e-4 or 100 iterations pass.
/// theta here is the fully converged local value (no stochastic blending).
pub fn local_step(doc: &Document, state: &GlobalState) -> Result<DocumentVariational> {
    local_step_impl(doc, state, None)
}

/// Local inference warm-started from a previous round's theta. Re-solving
/// from the fresh initializer can hop between fixed points of the mean-field
/// subproblem as the topics move; warm-starting keeps every inner update an
/// ascent step on the bound, which full-batch coordinate ascent relies on.
pub fn local_step_warm(
    doc: &Document,
    state: &GlobalState,
    warm_theta: &[f64],
) -> Result<DocumentVariational> {
    if warm_theta.len() != state.truncation() {
        return Err(Error::Config(format!(
            "warm theta has {} entries for truncation {}",
            warm_theta.len(),
            state.truncation()
        )));
    }
    local_step_impl(doc, state, Some(warm_theta))
}

fn local_step_impl(
    doc: &Document,
    state: &GlobalState,
    warm_theta: Option<&[f64]>,
) -> Result<DocumentVariational> {
    let t = state.truncation();
    let w = doc.words.len();
    if w == 0 {
        return Err(Error::Data(format!("document {:?} is empty", doc.id)));
    }
    let mut elv = vec![0.0; w * t];
    for (wi, &word) in doc.words.iter().enumerate() {
        let x = state.word_vectors.get(word as usize).ok_or_else(|| {
            Error::Data(format!(
                "document {:?} references word index {word} outside the vocabulary",
                doc.id
            ))
        })?;
        for (k, topic) in state.topics.iter().enumerate() {
            elv[wi * t + k] = topic.expected_log_vmf(x)?;
        }
    }

    let n_d = doc.token_count();
    let mut theta: Vec<f64> = match warm_theta {
        Some(warm) => warm.to_vec(),
        None => state
            .beta_star
            .iter()
            .map(|&b| state.hyper.alpha * b + n_d / t as f64)
            .collect(),
    };
    let mut phi = vec![0.0; w * t];
    let mut logits = vec![0.0; t];
    let mut iterations = 0;
    for _ in 0..LOCAL_MAX_ITERS {
        iterations += 1;
        let dig: Vec<f64> = theta
            .iter()
            .map(|&th| if th > 0.0 { digamma(th) } else { f64::NEG_INFINITY })
            .collect();
        let mut change = 0.0;
        for wi in 0..w {
            for k in 0..t {
                logits[k] = elv[wi * t + k] + dig[k];
            }
            softmax_in_place(&mut logits);
            for k in 0..t {
                change += (logits[k] - phi[wi * t + k]).abs();
                phi[wi * t + k] = logits[k];
            }
        }
        change /= (w * t) as f64;
        for k in 0..t {
            theta[k] = state.hyper.alpha * state.beta_star[k];
        }
        for wi in 0..w {
            let count = doc.counts[wi];
            for k in 0..t {
                theta[k] += count * phi[wi * t + k];
            }
        }
        if change < LOCAL_TOL {
            break;
        }
    }
    Ok(DocumentVariational {
        phi,
        theta,
        iterations,
    })
}

/// Which per-document theta update the driver applies after each local step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThetaUpdate {
    /// Stochastic blend toward alpha beta_k + D sum_w omega_wj phi_dwk,
    /// exactly as printed (including the D factor).
    Paper,
    /// Keep the converged local theta (classic SVI behavior).
    Standard,
}

impl std::str::FromStr for ThetaUpdate {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(ThetaUpdate::Paper),
            "standard" => Ok(ThetaUpdate::Standard),
            other => Err(Error::Config(format!(
                "theta-update must be 'paper' or 'standard', got {other:?}"
            ))),
        }
    }
}

/// Persistent per-document theta records (kept across epochs).
#[derive(Debug, Clone, Default)]
pub struct ThetaStore {
    records: HashMap<String, Vec<f64>>,
}

impl ThetaStore {
    pub fn init(corpus: &Corpus, state: &GlobalState) -> Self {
        let t = state.truncation();
        let records = corpus
            .docs
            .iter()
            .map(|doc| {
                let n_d = doc.token_count();
                let theta: Vec<f64> = state
                    .beta_star
                    .iter()
                    .map(|&b| state.hyper.alpha * b + n_d / t as f64)
                    .collect();
                (doc.id.clone(), theta)
            })
            .collect();
        ThetaStore { records }
    }

    pub fn get(&self, doc_id: &str) -> Option<&Vec<f64>> {
        self.records.get(doc_id)
    }
}

/// Blends the stored per-document theta toward its stochastic target with
/// step rho (`Paper` mode keeps the printed D factor; `Standard` stores the
/// converged local theta instead). Returns the updated record.
pub fn apply_document_update(
    state: &GlobalState,
    store: &mut ThetaStore,
    doc: &Document,
    local: &DocumentVariational,
    rho: f64,
    mode: ThetaUpdate,
) -> Result<Vec<f64>> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Config(format!("rho must be in (0, 1], got {rho}")));
    }
    let t = state.truncation();
    let stored = store
        .records
        .get_mut(&doc.id)
        .ok_or_else(|| Error::Data(format!("unknown document id {:?}", doc.id)))?;
    match mode {
        ThetaUpdate::Standard => {
            stored.clone_from(&local.theta);
        }
        ThetaUpdate::Paper => {
            let d_factor = state.num_docs as f64;
            for k in 0..t {
                let mut weighted = 0.0;
                for wi in 0..doc.words.len() {
                    weighted += doc.counts[wi] * local.phi[wi * t + k];
                }
                let target = state.hyper.alpha * state.beta_star[k] + d_factor * weighted;
                stored[k] = (1.0 - rho) * stored[k] + rho * target;
            }
        }
    }
    Ok(stored.clone())
}

/// Per-topic sufficient statistics of one minibatch.
#[derive(Debug, Clone)]
pub struct BatchStats {
    /// D / |batch|.
    pub scale: f64,
    /// Per topic: sum_d sum_w omega_wd phi_dwk x_w, unscaled.
    pub weighted_x: Vec<Vec<f64>>,
    /// Per topic: sum_d sum_w omega_wd phi_dwk, unscaled.
    pub phi_mass: Vec<f64>,
    /// Total tokens in the batch.
    pub batch_tokens: f64,
}

fn collect_batch_stats(
    state: &GlobalState,
    batch: &[(&Document, &DocumentVariational)],
) -> Result<BatchStats> {
    let t = state.truncation();
    let dim = state.dim;
    let mut weighted_x = vec![vec![0.0; dim]; t];
    let mut phi_mass = vec![0.0; t];
    let mut batch_tokens = 0.0;
    for (doc, local) in batch {
        if local.phi.len() != doc.words.len() * t {
            return Err(Error::Data(format!(
                "variational state for document {:?} does not match its word count",
                doc.id
            )));
        }
        batch_tokens += doc.token_count();
        for (wi, &word) in doc.words.iter().enumerate() {
            let x = state.word_vectors[word as usize].as_slice();
            let count = doc.counts[wi];
            for k in 0..t {
                let weight = count * local.phi[wi * t + k];
                if weight == 0.0 {
                    continue;
                }
                phi_mass[k] += weight;
                let acc = &mut weighted_x[k];
                for (a, xi) in acc.iter_mut().zip(x) {
                    *a += weight * xi;
                }
            }
        }
    }
    Ok(BatchStats {
        scale: state.num_docs as f64 / batch.len() as f64,
        weighted_x,
        phi_mass,
        batch_tokens,
    })
}

/// Natural-gradient style global update: each topic's natural parameter is
/// blended toward the batch estimate of its conjugate target
/// s_k = c0 mu0 + (D/|batch|) E[kappa_k] sum omega phi x. A topic whose
/// parameter collapses to zero is reseeded from a word vector with
/// lambda = 1. Returns the batch statistics for reuse by the kappa update.
pub fn global_step(
    state: &mut GlobalState,
    batch: &[(&Document, &DocumentVariational)],
    rho: f64,
) -> Result<BatchStats> {
    if batch.is_empty() {
        return Err(Error::Config("global step over an empty batch".into()));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Config(format!("rho must be in (0, 1], got {rho}")));
    }
    let stats = collect_batch_stats(state, batch)?;
    let c0 = state.hyper.c0;
    let w = state.word_vectors.len();
    for k in 0..state.topics.len() {
        let kappa_mean = state.topics[k].kappa_mean;
        let mut t_new: Vec<f64> = state.mu0.as_slice().iter().map(|&m| c0 * m).collect();
        for (ti, &sx) in t_new.iter_mut().zip(&stats.weighted_x[k]) {
            *ti += stats.scale * kappa_mean * sx;
        }
        for (ti, &old) in t_new.iter_mut().zip(&state.topics[k].t) {
            *ti = (1.0 - rho) * old + rho * *ti;
        }
        if l2_norm(&t_new) < 1e-12 {
            let mut bytes = state.step_count.to_le_bytes().to_vec();
            bytes.extend_from_slice(&(k as u64).to_le_bytes());
            bytes.extend_from_slice(b"reinit");
            let idx = (stable_hash(&bytes) % w as u64) as usize;
            log::warn!("topic {k} degenerated; reseeding from word {:?}", state.vocab[idx]);
            t_new = state.word_vectors[idx].as_slice().to_vec();
        }
        state.topics[k].set_t(t_new)?;
    }
    if stats.batch_tokens > 0.0 {
        for k in 0..state.topic_mass.len() {
            let batch_share = stats.phi_mass[k] / stats.batch_tokens;
            state.topic_mass[k] = (1.0 - rho) * state.topic_mass[k] + rho * batch_share;
        }
    }
    Ok(stats)
}

/// Refreshes q(kappa_k) by importance sampling with the log-Normal prior as
/// proposal: log-weights kappa_s A_M(lambda_k) r_k + n_k log C_M(kappa_s)
/// where r_k and n_k are the scaled batch statistics. The sample stream is
/// derived from (run seed, topic, step), so updates are reproducible.
pub fn update_kappa(state: &mut GlobalState, stats: &BatchStats, sample_count: usize) -> Result<()> {
    if sample_count == 0 {
        return Err(Error::Config("kappa sample count must be >= 1".into()));
    }
    let dim = state.dim;
    let step = state.step_count;
    for k in 0..state.topics.len() {
        let (samples, log_norms) = draw_kappa_prior_cloud(
            &state.hyper,
            dim,
            state.seed,
            k as u64,
            step,
            sample_count,
        )?;
        let lambda = state.topics[k].lambda();
        let attenuation = directional::mean_resultant_ratio(dim, lambda)?;
        let r_k = stats.scale * dot(state.topics[k].psi().as_slice(), &stats.weighted_x[k]);
        let n_k = stats.scale * stats.phi_mass[k];
        let mut log_w: Vec<f64> = samples
            .iter()
            .zip(&log_norms)
            .map(|(&kappa, &log_norm)| kappa * attenuation * r_k + n_k * log_norm)
            .collect();
        softmax_in_place(&mut log_w);
        let ess = 1.0 / log_w.iter().map(|&w| w * w).sum::<f64>();
        if ess < sample_count as f64 * 1e-3 {
            log::warn!(
                "kappa importance weights for topic {k} are degenerate (ESS {ess:.1} of {sample_count})"
            );
        }
        let kappa_mean: f64 = samples.iter().zip(&log_w).map(|(&s, &w)| s * w).sum();
        let kappa_log_norm_mean: f64 = log_norms.iter().zip(&log_w).map(|(&l, &w)| l * w).sum();
        let topic = &mut state.topics[k];
        topic.kappa_mean = kappa_mean;
        topic.kappa_log_norm_mean = kappa_log_norm_mean;
        topic.kappa_samples = samples.into_iter().zip(log_w).collect();
        topic.kappa_ess = ess;
    }
    Ok(())
}

/// Log-density of the truncated GEM prior at beta, through its stick
/// representation v_k = beta_k / (1 - sum_{j<k} beta_j):
/// sum_{k<T} log Beta(v_k | 1, gamma), which telescopes to
/// (T-1) log gamma + (gamma-1) log beta_T.
pub fn gem_log_prior(beta: &[f64], gamma: f64) -> f64 {
    let t = beta.len();
    let tail = beta[t - 1].max(1e-300);
    (t as f64 - 1.0) * gamma.ln() + (gamma - 1.0) * tail.ln()
}

/// Result of a beta_star gradient ascent, with the objective value before
/// the first iteration and after each accepted step.
#[derive(Debug, Clone)]
pub struct BetaUpdate {
    pub objective_trace: Vec<f64>,
}

/// Numerical gradient ascent for the point estimate beta_star. The
/// objective is the GEM log-prior plus the beta-dependent part of
/// E_q[log p(pi_d | alpha beta)] summed over the batch and rescaled to the
/// corpus: sum_k (alpha beta_k S_k - D ln Gamma(alpha beta_k)) with
/// S_k = (D/|batch|) sum_d E_q[log pi_dk]. beta is reparameterized through a
/// softmax and the gradient taken by central differences (h = 1e-6);
/// backtracking halvings keep every accepted step non-decreasing.
pub fn update_beta(
    state: &mut GlobalState,
    batch: &[&DocumentVariational],
    step_size: f64,
    iters: usize,
) -> Result<BetaUpdate> {
    if !(step_size >= 0.0) || !step_size.is_finite() {
        return Err(Error::Config(format!(
            "beta step size must be finite and >= 0, got {step_size}"
        )));
    }
    let t = state.truncation();
    let alpha = state.hyper.alpha;
    let gamma = state.hyper.gamma;
    let (s_k, doc_coeff) = if batch.is_empty() {
        (vec![0.0; t], 0.0)
    } else {
        let scale = state.num_docs as f64 / batch.len() as f64;
        let mut s_k = vec![0.0; t];
        for dv in batch {
            let sum_theta: f64 = dv.theta.iter().sum();
            let dig_sum = digamma(sum_theta);
            for k in 0..t {
                s_k[k] += scale * (digamma(dv.theta[k]) - dig_sum);
            }
        }
        (s_k, state.num_docs as f64)
    };

    let objective = |beta: &[f64]| -> f64 {
        let mut obj = gem_log_prior(beta, gamma);
        if doc_coeff > 0.0 {
            for k in 0..t {
                let ab = alpha * beta[k];
                if ab <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                obj += ab * s_k[k] - doc_coeff * ln_gamma(ab);
            }
        }
        obj
    };
    let softmax = |eta: &[f64]| -> Vec<f64> {
        let mut beta = eta.to_vec();
        softmax_in_place(&mut beta);
        beta
    };

    let mut eta: Vec<f64> = state.beta_star.iter().map(|&b| b.max(1e-300).ln()).collect();
    let mut current = objective(&softmax(&eta));
    let mut trace = vec![current];
    if step_size == 0.0 || iters == 0 {
        return Ok(BetaUpdate {
            objective_trace: trace,
        });
    }

    const H: f64 = 1e-6;
    for _ in 0..iters {
        let mut grad = vec![0.0; t];
        for i in 0..t {
            let mut plus = eta.clone();
            plus[i] += H;
            let mut minus = eta.clone();
            minus[i] -= H;
            grad[i] = (objective(&softmax(&plus)) - objective(&softmax(&minus))) / (2.0 * H);
        }
        let mut step = step_size;
        let mut accepted = false;
        for _ in 0..30 {
            let candidate: Vec<f64> = eta.iter().zip(&grad).map(|(e, g)| e + step * g).collect();
            let value = objective(&softmax(&candidate));
            if value >= current {
                eta = candidate;
                current = value;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        trace.push(current);
        if !accepted {
            break;
        }
    }
    state.beta_star = softmax(&eta);
    Ok(BetaUpdate {
        objective_trace: trace,
    })
}

/// Evidence lower bound split into its batch-scaled per-document part and
/// the global (topic and stick) part.
#[derive(Debug, Clone, Copy)]
pub struct ElboParts {
    /// Unscaled sum of per-document terms over the batch.
    pub per_doc: f64,
    /// Topic priors, q(mu) entropy, kappa prior expectation, GEM prior.
    pub global: f64,
    /// D / |batch|.
    pub scale: f64,
}

impl ElboParts {
    pub fn total(&self) -> f64 {
        self.scale * self.per_doc + self.global
    }
}

fn log_lognormal_pdf(x: f64, m: f64, sigma: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let z = (x.ln() - m) / sigma;
    -x.ln() - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * z * z
}

/// Stochastic ELBO estimate on a batch: per-document data, assignment and
/// Dirichlet terms scaled by D/|batch|, plus the global terms (vMF prior on
/// directions, q(mu) entropy, the kappa prior under the importance cloud,
/// and the GEM prior at beta_star).
pub fn elbo(state: &GlobalState, batch: &[(&Document, &DocumentVariational)]) -> Result<ElboParts> {
    if batch.is_empty() {
        return Err(Error::Config("elbo over an empty batch".into()));
    }
    let t = state.truncation();
    let alpha = state.hyper.alpha;
    let mut per_doc = 0.0;
    for (doc, local) in batch {
        if local.phi.len() != doc.words.len() * t {
            return Err(Error::Data(format!(
                "variational state for document {:?} does not match its word count",
                doc.id
            )));
        }
        let sum_theta: f64 = local.theta.iter().sum();
        let dig_sum = digamma(sum_theta);
        let dig: Vec<f64> = local.theta.iter().map(|&th| digamma(th)).collect();
        for (wi, &word) in doc.words.iter().enumerate() {
            let x = &state.word_vectors[word as usize];
            let count = doc.counts[wi];
            for (k, topic) in state.topics.iter().enumerate() {
                let phi = local.phi[wi * t + k];
                if phi == 0.0 {
                    continue;
                }
                let elv = topic.expected_log_vmf(x)?;
                per_doc += count * phi * (elv + dig[k] - dig_sum - phi.ln());
            }
        }
        // E[log p(pi | alpha beta)] - E[log q(pi | theta)]
        per_doc += ln_gamma(alpha);
        for k in 0..t {
            let ab = alpha * state.beta_star[k];
            if ab <= 0.0 {
                return Err(Error::Numeric(
                    "elbo requires strictly positive beta_star".into(),
                ));
            }
            per_doc += -ln_gamma(ab) + (ab - 1.0) * (dig[k] - dig_sum);
        }
        per_doc -= ln_gamma(sum_theta);
        for k in 0..t {
            per_doc += ln_gamma(local.theta[k]) - (local.theta[k] - 1.0) * (dig[k] - dig_sum);
        }
    }

    let mut global = gem_log_prior(&state.beta_star, state.hyper.gamma);
    let c0 = state.hyper.c0;
    let log_c0_norm = directional::log_cm(state.dim, c0)?;
    for topic in &state.topics {
        let a_lambda = directional::mean_resultant_ratio(state.dim, topic.lambda())?;
        global += c0 * a_lambda * state.mu0.dot(topic.psi()) + log_c0_norm;
        global -= topic.lambda() * a_lambda + directional::log_cm(state.dim, topic.lambda())?;
        if topic.kappa_samples.is_empty() {
            global += log_lognormal_pdf(
                topic.kappa_mean,
                state.hyper.kappa_prior_m,
                state.hyper.kappa_prior_sigma,
            );
        } else {
            for &(kappa, weight) in &topic.kappa_samples {
                if weight > 0.0 {
                    global += weight
                        * log_lognormal_pdf(
                            kappa,
                            state.hyper.kappa_prior_m,
                            state.hyper.kappa_prior_sigma,
                        );
                }
            }
        }
    }
    Ok(ElboParts {
        per_doc,
        global,
        scale: state.num_docs as f64 / batch.len() as f64,
    })
}

/// Vocabulary words ranked by this topic's expected log-density, best first.
pub fn top_words(state: &GlobalState, topic: usize, n: usize) -> Result<Vec<(String, f64)>> {
    let topic_state = state
        .topics
        .get(topic)
        .ok_or_else(|| Error::Config(format!("topic index {topic} out of range")))?;
    let mut scored: Vec<(usize, f64)> = state
        .word_vectors
        .iter()
        .enumerate()
        .map(|(i, x)| topic_state.expected_log_vmf(x).map(|s| (i, s)))
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    Ok(scored
        .into_iter()
        .take(n)
        .map(|(i, s)| (state.vocab[i].clone(), s))
        .collect())
}

#[derive(Serialize, Deserialize)]
struct TopicCheckpoint {
    t: Vec<f64>,
    kappa_mean: f64,
    kappa_log_norm_mean: f64,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    seed: u64,
    step_count: u64,
    dim: usize,
    num_docs: usize,
    hyper: Hyperparams,
    beta_star: Vec<f64>,
    topic_mass: Vec<f64>,
    topics: Vec<TopicCheckpoint>,
    mu0: Vec<f64>,
    vocab: Vec<String>,
    word_vectors: Vec<Vec<f64>>,
}

const CHECKPOINT_FORMAT: &str = "shdp-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

/// Serializes the state as self-describing JSON. Reals are written as
/// shortest round-trip decimals, so load followed by save is byte-identical.
pub fn to_checkpoint_json(state: &GlobalState) -> Result<String> {
    let checkpoint = Checkpoint {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        seed: state.seed,
        step_count: state.step_count,
        dim: state.dim,
        num_docs: state.num_docs,
        hyper: state.hyper.clone(),
        beta_star: state.beta_star.clone(),
        topic_mass: state.topic_mass.clone(),
        topics: state
            .topics
            .iter()
            .map(|topic| TopicCheckpoint {
                t: topic.t.clone(),
                kappa_mean: topic.kappa_mean,
                kappa_log_norm_mean: topic.kappa_log_norm_mean,
            })
            .collect(),
        mu0: state.mu0.as_slice().to_vec(),
        vocab: state.vocab.clone(),
        word_vectors: state
            .word_vectors
            .iter()
            .map(|v| v.as_slice().to_vec())
            .collect(),
    };
    serde_json::to_string_pretty(&checkpoint)
        .map_err(|e| Error::Numeric(format!("checkpoint serialization failed: {e}")))
}

/// Parses a checkpoint back into a live state. Kappa sample clouds are not
/// stored; restored topics carry their summary moments only.
pub fn from_checkpoint_json(json: &str) -> Result<GlobalState> {
    let checkpoint: Checkpoint = serde_json::from_str(json)
        .map_err(|e| Error::Data(format!("corrupt checkpoint: {e}")))?;
    if checkpoint.format != CHECKPOINT_FORMAT {
        return Err(Error::Data(format!(
            "not a checkpoint file (format {:?})",
            checkpoint.format
        )));
    }
    if checkpoint.version != CHECKPOINT_VERSION {
        return Err(Error::Data(format!(
            "unsupported checkpoint version {}",
            checkpoint.version
        )));
    }
    checkpoint.hyper.validate()?;
    let t = checkpoint.hyper.truncation;
    if checkpoint.beta_star.len() != t
        || checkpoint.topics.len() != t
        || checkpoint.topic_mass.len() != t
    {
        return Err(Error::Data(
            "corrupt checkpoint: truncation does not match stored arrays".into(),
        ));
    }
    if checkpoint.vocab.len() != checkpoint.word_vectors.len() {
        return Err(Error::Data(
            "corrupt checkpoint: vocabulary and vector table differ in length".into(),
        ));
    }
    let sum_beta: f64 = checkpoint.beta_star.iter().sum();
    if (sum_beta - 1.0).abs() > 1e-6 || checkpoint.beta_star.iter().any(|&b| b < 0.0) {
        return Err(Error::Data(
            "corrupt checkpoint: beta_star is not a probability vector".into(),
        ));
    }
    let word_vectors: Vec<UnitVector> = checkpoint
        .word_vectors
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            if v.len() != checkpoint.dim {
                return Err(Error::Data(format!(
                    "corrupt checkpoint: word vector {i} has wrong dimension"
                )));
            }
            UnitVector::new(v).map_err(|e| Error::Data(format!("corrupt checkpoint: {e}")))
        })
        .collect::<Result<_>>()?;
    let topics: Vec<TopicState> = checkpoint
        .topics
        .into_iter()
        .enumerate()
        .map(|(k, tc)| {
            if tc.t.len() != checkpoint.dim {
                return Err(Error::Data(format!(
                    "corrupt checkpoint: topic {k} parameter has wrong dimension"
                )));
            }
            TopicState::from_t(tc.t, tc.kappa_mean, tc.kappa_log_norm_mean, Vec::new(), f64::NAN)
                .map_err(|e| Error::Data(format!("corrupt checkpoint: {e}")))
        })
        .collect::<Result<_>>()?;
    Ok(GlobalState {
        hyper: checkpoint.hyper,
        dim: checkpoint.dim,
        num_docs: checkpoint.num_docs,
        seed: checkpoint.seed,
        step_count: checkpoint.step_count,
        beta_star: checkpoint.beta_star,
        topics,
        mu0: UnitVector::new(checkpoint.mu0)
            .map_err(|e| Error::Data(format!("corrupt checkpoint: {e}")))?,
        vocab: checkpoint.vocab,
        word_vectors,
        topic_mass: checkpoint.topic_mass,
    })
}
