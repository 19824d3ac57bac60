//! Stochastic variational inference driver: step-size schedule, epoch loop,
//! held-out likelihood tracking and convergence detection.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{split_heldout, BatchPlan, Corpus, Document};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::model::{
    apply_document_update, elbo, global_step, init_state, local_step, to_checkpoint_json,
    update_beta, update_kappa, DocumentVariational, GlobalState, Hyperparams, ThetaStore,
    ThetaUpdate,
};
use crate::numeric::log_sum_exp;

/// How many epochs the smoothed series is averaged over, and how many
/// consecutive small relative changes declare convergence.
const SMOOTH_WINDOW: usize = 3;
const CONVERGED_AFTER: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    /// Delay tau0 >= 0 in the step size (tau0 + t)^(-decay).
    pub tau0: f64,
    /// Forgetting rate in (0.5, 1]; this range makes the step sizes satisfy
    /// sum rho = inf and sum rho^2 < inf.
    pub decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Importance-sample count S for each kappa update.
    pub kappa_sample_count: usize,
    /// Relative-change threshold on the smoothed held-out series.
    pub convergence_tol: f64,
    /// Held-out share in [0, 1), selected by a stable hash of document ids.
    pub heldout_fraction: f64,
    pub theta_update: ThetaUpdate,
    /// Gradient step size for the beta_star update.
    pub beta_step_size: f64,
    /// Ascent iterations per beta_star update.
    pub beta_iters: usize,
    /// Run the beta_star update every this many batches.
    pub beta_every: u64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            tau0: 64.0,
            decay: 0.7,
            batch_size: 32,
            max_epochs: 50,
            seed: 0,
            kappa_sample_count: 1000,
            convergence_tol: 1e-4,
            heldout_fraction: 0.1,
            theta_update: ThetaUpdate::Paper,
            beta_step_size: 0.1,
            beta_iters: 20,
            beta_every: 5,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau0 >= 0.0) || !self.tau0.is_finite() {
            return Err(Error::Config(format!("tau0 must be >= 0, got {}", self.tau0)));
        }
        if !(self.decay > 0.5 && self.decay <= 1.0) {
            return Err(Error::Config(format!(
                "decay must lie in (0.5, 1], got {}",
                self.decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.kappa_sample_count == 0 {
            return Err(Error::Config("kappa sample count must be >= 1".into()));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::Config(format!(
                "convergence tolerance must be > 0, got {}",
                self.convergence_tol
            )));
        }
        if !(0.0..1.0).contains(&self.heldout_fraction) {
            return Err(Error::Config(format!(
                "heldout fraction must lie in [0, 1), got {}",
                self.heldout_fraction
            )));
        }
        if !(self.beta_step_size >= 0.0) || !self.beta_step_size.is_finite() {
            return Err(Error::Config(format!(
                "beta step size must be >= 0, got {}",
                self.beta_step_size
            )));
        }
        if self.beta_every == 0 {
            return Err(Error::Config("beta update cadence must be >= 1".into()));
        }
        Ok(())
    }

    /// Step size rho_t = (tau0 + t)^(-decay) for the t-th global update
    /// (t starts at 1).
    pub fn rho(&self, t: u64) -> f64 {
        (self.tau0 + t as f64).powf(-self.decay)
    }
}

/// One per-epoch row of the training trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    /// Global updates completed when the row was written.
    pub step: u64,
    /// Mean stochastic ELBO estimate over the epoch's batches.
    pub elbo: f64,
    /// Per-token held-out log-likelihood; absent when no held-out split.
    pub heldout_loglik: Option<f64>,
    pub wall_time_s: f64,
    pub active_topics: usize,
}

#[derive(Debug)]
pub struct RunResult {
    pub state: GlobalState,
    pub trace: Vec<TraceRecord>,
    pub theta: ThetaStore,
    pub train_docs: usize,
    pub heldout_docs: usize,
    pub converged: bool,
}

/// Trains a model with minibatch SVI. Each batch runs document-local steps
/// in parallel, applies the per-document theta update, the global-topic
/// update with rho_t, a kappa refresh, and (every `beta_every` batches) the
/// beta_star ascent. One trace row is written per epoch. Stops early when
/// the smoothed held-out series (training ELBO when no split) changes by
/// less than `convergence_tol` relatively for three consecutive epochs.
/// Fully deterministic for fixed inputs and seed.
pub fn run(
    corpus: &Corpus,
    table: &EmbeddingTable,
    hyper: &Hyperparams,
    sched: &ScheduleConfig,
) -> Result<RunResult> {
    sched.validate()?;
    let (train, heldout) = split_heldout(corpus.clone(), sched.heldout_fraction);
    if train.docs.is_empty() {
        return Err(Error::Data(
            "held-out split left no training documents".into(),
        ));
    }
    let mut state = init_state(hyper, &train, table, sched.seed, sched.kappa_sample_count)?;
    let mut theta = ThetaStore::init(&train, &state);
    let mut plan = BatchPlan::new(train.docs.len(), sched.batch_size, sched.seed)?;
    let start = Instant::now();
    let mut trace: Vec<TraceRecord> = Vec::new();
    let mut smoothed: Vec<f64> = Vec::new();
    let mut raw_series: Vec<f64> = Vec::new();
    let mut small_changes = 0usize;
    let mut converged = false;

    for _epoch in 0..sched.max_epochs {
        let mut epoch_elbo = 0.0;
        let batches = plan.batches_per_epoch();
        for _ in 0..batches {
            let indices = plan.next_batch();
            let docs: Vec<&Document> = indices.iter().map(|&i| &train.docs[i]).collect();
            let step = state.step_count + 1;
            let rho = sched.rho(step);
            let locals: Vec<DocumentVariational> = docs
                .par_iter()
                .map(|d| local_step(d, &state))
                .collect::<Result<_>>()?;
            let batch: Vec<(&Document, &DocumentVariational)> =
                docs.iter().copied().zip(locals.iter()).collect();
            let value = elbo(&state, &batch)?.total();
            if !value.is_finite() {
                return Err(Error::NonFiniteElbo {
                    step,
                    checkpoint_json: to_checkpoint_json(&state)?,
                });
            }
            epoch_elbo += value;
            for (doc, local) in &batch {
                apply_document_update(&state, &mut theta, doc, local, rho, sched.theta_update)?;
            }
            let stats = global_step(&mut state, &batch, rho)?;
            state.step_count += 1;
            update_kappa(&mut state, &stats, sched.kappa_sample_count)?;
            if state.step_count % sched.beta_every == 0 {
                let refs: Vec<&DocumentVariational> = locals.iter().collect();
                update_beta(&mut state, &refs, sched.beta_step_size, sched.beta_iters)?;
            }
        }
        let epoch_elbo = epoch_elbo / batches as f64;
        let heldout_value = if heldout.is_empty() {
            None
        } else {
            Some(heldout_loglik(&state, &heldout)?)
        };
        trace.push(TraceRecord {
            step: state.step_count,
            elbo: epoch_elbo,
            heldout_loglik: heldout_value,
            wall_time_s: start.elapsed().as_secs_f64(),
            active_topics: state.active_topics().len(),
        });
        raw_series.push(heldout_value.unwrap_or(epoch_elbo));
        let window = raw_series.len().min(SMOOTH_WINDOW);
        let value =
            raw_series[raw_series.len() - window..].iter().sum::<f64>() / window as f64;
        if let Some(&previous) = smoothed.last() {
            let rel = (value - previous).abs() / previous.abs().max(1e-12);
            if rel < sched.convergence_tol {
                small_changes += 1;
            } else {
                small_changes = 0;
            }
        }
        smoothed.push(value);
        if small_changes >= CONVERGED_AFTER {
            converged = true;
            break;
        }
    }

    if state.step_count > 0 {
        recompute_topic_mass(&mut state, &train)?;
    }
    Ok(RunResult {
        state,
        trace,
        theta,
        train_docs: train.docs.len(),
        heldout_docs: heldout.len(),
        converged,
    })
}

/// Replaces the stochastic topic-mass estimate with the exact shares from a
/// full local pass over the training documents.
fn recompute_topic_mass(state: &mut GlobalState, train: &Corpus) -> Result<()> {
    let t = state.truncation();
    let per_doc: Vec<(Vec<f64>, f64)> = train
        .docs
        .par_iter()
        .map(|doc| -> Result<(Vec<f64>, f64)> {
            let local = local_step(doc, state)?;
            let mut mass = vec![0.0; t];
            for (wi, &count) in doc.counts.iter().enumerate() {
                for k in 0..t {
                    mass[k] += count * local.phi[wi * t + k];
                }
            }
            Ok((mass, doc.token_count()))
        })
        .collect::<Result<_>>()?;
    let mut mass = vec![0.0; t];
    let mut tokens = 0.0;
    for (doc_mass, doc_tokens) in per_doc {
        for k in 0..t {
            mass[k] += doc_mass[k];
        }
        tokens += doc_tokens;
    }
    if tokens > 0.0 {
        for m in &mut mass {
            *m /= tokens;
        }
        state.topic_mass = mass;
    }
    Ok(())
}

/// Per-token held-out log-likelihood: each document is fit by a local step
/// with the global parameters frozen, then scored as
/// sum_w omega_w log sum_k pibar_k exp(E[log vMF_k(x_w)]) with
/// pibar = theta / sum theta, and the total divided by the token count.
pub fn heldout_loglik(state: &GlobalState, docs: &[Document]) -> Result<f64> {
    if docs.is_empty() {
        return Err(Error::Data("held-out likelihood of zero documents".into()));
    }
    let scores: Vec<(f64, f64)> = docs
        .par_iter()
        .map(|doc| -> Result<(f64, f64)> {
            let local = local_step(doc, state)?;
            let total_theta: f64 = local.theta.iter().sum();
            let mut doc_sum = 0.0;
            let mut terms = Vec::with_capacity(state.truncation());
            for (wi, &word) in doc.words.iter().enumerate() {
                let x = &state.word_vectors[word as usize];
                terms.clear();
                for (k, topic) in state.topics.iter().enumerate() {
                    let pibar = local.theta[k] / total_theta;
                    if pibar > 0.0 {
                        terms.push(pibar.ln() + topic.expected_log_vmf(x)?);
                    }
                }
                doc_sum += doc.counts[wi] * log_sum_exp(&terms);
            }
            Ok((doc_sum, doc.token_count()))
        })
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    let mut tokens = 0.0;
    for (s, n) in scores {
        total += s;
        tokens += n;
    }
    Ok(total / tokens)
}

/// Which trace column a normalization reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceField {
    Elbo,
    Heldout,
}

impl std::str::FromStr for TraceField {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "elbo" => Ok(TraceField::Elbo),
            "heldout" => Ok(TraceField::Heldout),
            other => Err(Error::Config(format!(
                "trace field must be 'elbo' or 'heldout', got {other:?}"
            ))),
        }
    }
}

/// Min-max normalization of a trace column: (v - min) / (max - min) per
/// record. Fails on traces with fewer than two records or a constant column.
pub fn normalize_trace(trace: &[TraceRecord], field: TraceField) -> Result<Vec<(u64, f64)>> {
    if trace.len() < 2 {
        return Err(Error::Degenerate(
            "normalization needs at least two trace records".into(),
        ));
    }
    let values: Vec<f64> = trace
        .iter()
        .map(|r| match field {
            TraceField::Elbo => Ok(r.elbo),
            TraceField::Heldout => r.heldout_loglik.ok_or_else(|| {
                Error::Data("trace has no held-out column to normalize".into())
            }),
        })
        .collect::<Result<_>>()?;
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return Err(Error::Degenerate(
            "cannot normalize a constant trace".into(),
        ));
    }
    Ok(trace
        .iter()
        .zip(values)
        .map(|(r, v)| (r.step, (v - min) / (max - min)))
        .collect())
}

pub const TRACE_HEADER: &str = "step,elbo,heldout_loglik,wall_time_s,active_topics";

/// Writes the trace as CSV with LF endings; the held-out column is empty
/// for runs without a held-out split.
pub fn write_trace_csv(path: &Path, trace: &[TraceRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{TRACE_HEADER}")?;
    for r in trace {
        let heldout = r.heldout_loglik.map(|h| format!("{h}")).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{}",
            r.step, r.elbo, heldout, r.wall_time_s, r.active_topics
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRecord>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != TRACE_HEADER {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("expected trace header {TRACE_HEADER:?}"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected 5 comma-separated fields, got {}", fields.len()),
            });
        }
        let parse_f64 = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("bad {what} value {s:?}"),
            })
        };
        rows.push(TraceRecord {
            step: fields[0].parse().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("bad step value {:?}", fields[0]),
            })?,
            elbo: parse_f64(fields[1], "elbo")?,
            heldout_loglik: if fields[2].is_empty() {
                None
            } else {
                Some(parse_f64(fields[2], "heldout")?)
            },
            wall_time_s: parse_f64(fields[3], "wall time")?,
            active_topics: fields[4].parse().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("bad active-topics value {:?}", fields[4]),
            })?,
        });
    }
    Ok(rows)
}
