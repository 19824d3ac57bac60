//! Acceptance gate: ten checks, one test and one PASS/FAIL line each.
//!
//! Each criterion prints `PASS name: detail` or `FAIL name: detail` before
//! asserting, so the verdict of every criterion is visible in the test log
//! (run with `--nocapture` to see the lines of passing criteria too).

use std::collections::HashSet;
use std::path::Path;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

use shdp::coherence::{build_index, model_coherence, topic_coherence, CoherenceIndex, TopicWordList};
use shdp::corpus::{tokenize, Corpus, Document};
use shdp::directional::{log_bessel_i, log_cm, mean_resultant_ratio, UnitVector, VmfParams};
use shdp::inference::{normalize_trace, run, RunResult, ScheduleConfig, TraceField};
use shdp::model::{
    elbo, from_checkpoint_json, global_step, init_state, local_step, local_step_warm,
    update_kappa, BatchStats, Hyperparams, ThetaUpdate,
};
use shdp::synth::{generate, SynthConfig, SynthOutput};

fn report(name: &str, ok: bool, detail: String) {
    println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{name}: {detail}");
}

/// Serializes the compute-heavy criteria so their wall-clock bounds are not
/// distorted by each other.
static HEAVY: Mutex<()> = Mutex::new(());

/// Lock that ignores poisoning: one failed criterion must not cascade into
/// the others.
fn heavy_guard() -> std::sync::MutexGuard<'static, ()> {
    HEAVY.lock().unwrap_or_else(|e| e.into_inner())
}

// ---------------------------------------------------------------------------
// 1. vMF normalization by quadrature over the circle and the sphere
// ---------------------------------------------------------------------------

fn simpson_weights(n: usize, h: f64) -> Vec<f64> {
    assert!(n >= 3 && n % 2 == 1);
    (0..n)
        .map(|i| {
            let w = if i == 0 || i == n - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * h / 3.0
        })
        .collect()
}

fn circle_mass(kappa: f64) -> f64 {
    use std::f64::consts::PI;
    let mu = UnitVector::new(vec![0.7f64.cos(), 0.7f64.sin()]).unwrap();
    let params = VmfParams::new(mu, kappa).unwrap();
    let n = 20000;
    let h = 2.0 * PI / n as f64;
    (0..n)
        .map(|i| {
            let theta = i as f64 * h;
            let x = UnitVector::new(vec![theta.cos(), theta.sin()]).unwrap();
            shdp::directional::vmf_log_pdf(&x, &params).unwrap().exp() * h
        })
        .sum()
}

fn sphere_mass(kappa: f64) -> f64 {
    use std::f64::consts::PI;
    let mu = UnitVector::from_unnormalized(vec![0.3, -0.5, 0.8]).unwrap();
    let params = VmfParams::new(mu, kappa).unwrap();
    let (n_theta, n_phi) = (401, 801);
    let wt = simpson_weights(n_theta, PI / (n_theta - 1) as f64);
    let wp = simpson_weights(n_phi, 2.0 * PI / (n_phi - 1) as f64);
    let mut total = 0.0;
    for (i, &wti) in wt.iter().enumerate() {
        let theta = PI * i as f64 / (n_theta - 1) as f64;
        let (st, ct) = theta.sin_cos();
        let mut ring = 0.0;
        for (j, &wpj) in wp.iter().enumerate() {
            let phi = 2.0 * PI * j as f64 / (n_phi - 1) as f64;
            let x = UnitVector::from_unnormalized(vec![st * phi.cos(), st * phi.sin(), ct])
                .unwrap();
            ring += wpj * shdp::directional::vmf_log_pdf(&x, &params).unwrap().exp();
        }
        total += wti * st * ring;
    }
    total
}

#[test]
fn c01_vmf_normalization() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for kappa in [0.0, 0.5, 2.0, 10.0] {
        worst = worst.max((circle_mass(kappa) - 1.0).abs());
        worst = worst.max((sphere_mass(kappa) - 1.0).abs());
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        "vmf-normalization",
        worst <= 1e-6 && elapsed < 5.0,
        format!(
            "max |quadrature mass - 1| = {worst:.2e} over S1 and S2 at kappa in {{0, 0.5, 2, 10}} ({elapsed:.2}s, bound 5s)"
        ),
    );
}

// ---------------------------------------------------------------------------
// 2. log Bessel I against a cancellation-free series oracle
// ---------------------------------------------------------------------------

/// Ascending series of I_nu(x) summed in log space. Every term is positive,
/// so the only error is accumulation: accurate to ~1e-13 absolute, far below
/// the 1e-10 gate.
fn series_log_bessel(nu: f64, x: f64) -> f64 {
    let lhalf = (x / 2.0).ln();
    let mut terms: Vec<f64> = Vec::new();
    let mut max_c = f64::NEG_INFINITY;
    let mut m = 0.0f64;
    loop {
        let c = (2.0 * m + nu) * lhalf - ln_gamma(m + 1.0) - ln_gamma(m + nu + 1.0);
        terms.push(c);
        if c > max_c {
            max_c = c;
        }
        if m > x / 2.0 + 5.0 && c < max_c - 60.0 {
            break;
        }
        m += 1.0;
        assert!(m < 100_000.0, "series did not terminate for nu={nu}, x={x}");
    }
    let sum: f64 = terms.iter().map(|&c| (c - max_c).exp()).sum();
    max_c + sum.ln()
}

#[test]
fn c02_log_bessel_grid() {
    let start = Instant::now();
    let nus = [
        0.0, 0.5, 1.0, 1.5, 2.0, 3.5, 5.0, 8.0, 12.0, 17.5, 24.0, 30.0, 35.0, 42.5, 50.0, 75.5,
        100.0, 150.0, 200.0, 250.0,
    ];
    let xs: Vec<f64> = (0..21)
        .map(|i| {
            let t = i as f64 / 20.0;
            (1e-3f64.ln() * (1.0 - t) + 500.0f64.ln() * t).exp()
        })
        .collect();
    let mut worst = 0.0f64;
    let mut points = 0;
    for &nu in &nus {
        for &x in &xs {
            let oracle = series_log_bessel(nu, x);
            let mine = log_bessel_i(nu, x).unwrap();
            // near a zero crossing of the log value, relative error is
            // measured against a 0.01 floor (stricter than the gate needs)
            let rel = (mine - oracle).abs() / oracle.abs().max(0.01);
            worst = worst.max(rel);
            points += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        "log-bessel-grid",
        worst <= 1e-10 && points >= 400 && elapsed < 10.0,
        format!(
            "max relative error {worst:.2e} on {points} (nu, x) points incl. nu = 24, x in [1e-3, 500] ({elapsed:.2}s, bound 10s)"
        ),
    );
}

// ---------------------------------------------------------------------------
// 3. closed forms on the 3-d sphere
// ---------------------------------------------------------------------------

fn ref_ln_c3(kappa: f64) -> f64 {
    use std::f64::consts::{LN_2, PI};
    let ln_sinh = kappa + (-(-2.0 * kappa).exp()).ln_1p() - LN_2;
    kappa.ln() - (4.0 * PI).ln() - ln_sinh
}

fn ref_a3(kappa: f64) -> f64 {
    if kappa < 0.02 {
        // Taylor form of coth(k) - 1/k, exact to machine precision here and
        // free of the cancellation the direct difference suffers below 0.02
        let k2 = kappa * kappa;
        kappa / 3.0 - kappa * k2 / 45.0 + 2.0 * kappa * k2 * k2 / 945.0
            - kappa * k2 * k2 * k2 / 4725.0
            + 2.0 * kappa * k2 * k2 * k2 * k2 / 93555.0
    } else {
        1.0 / kappa.tanh() - 1.0 / kappa
    }
}

#[test]
fn c03_closed_form_c3_a3() {
    let mut worst_c = 0.0f64;
    let mut worst_a = 0.0f64;
    for i in 0..=250 {
        let t = i as f64 / 250.0;
        let kappa = (1e-3f64.ln() * (1.0 - t) + 1e3f64.ln() * t).exp();
        let c_rel = (log_cm(3, kappa).unwrap() - ref_ln_c3(kappa)).abs() / ref_ln_c3(kappa).abs();
        let a_ref = ref_a3(kappa);
        let a_rel = (mean_resultant_ratio(3, kappa).unwrap() - a_ref).abs() / a_ref;
        worst_c = worst_c.max(c_rel);
        worst_a = worst_a.max(a_rel);
    }
    report(
        "closed-form-c3-a3",
        worst_c <= 1e-10 && worst_a <= 1e-10,
        format!(
            "251 log-spaced kappa in [1e-3, 1e3]: normalizer rel {worst_c:.2e}, mean-resultant rel {worst_a:.2e}"
        ),
    );
}

// ---------------------------------------------------------------------------
// 4. coordinate-ascent monotonicity of the objective
// ---------------------------------------------------------------------------

#[test]
fn c04_elbo_monotonicity() {
    let start = Instant::now();
    let data = generate(&SynthConfig {
        num_topics: 3,
        dim: 5,
        kappa: 30.0,
        num_docs: 50,
        doc_len: 30,
        vocab_size: 60,
        gamma: 2.0,
        alpha: 0.7,
        seed: 4,
    })
    .unwrap();
    let hyper = Hyperparams {
        truncation: 8,
        kappa_prior_m: 30.0_f64.ln(),
        ..Hyperparams::default()
    };
    let mut state = init_state(&hyper, &data.corpus, &data.table, 0, 400).unwrap();
    let mut values: Vec<f64> = Vec::new();
    let mut worst_drop = 0.0f64;
    let mut locals: Vec<shdp::model::DocumentVariational> = Vec::new();
    for round in 0..20 {
        locals = data
            .corpus
            .docs
            .iter()
            .enumerate()
            .map(|(di, d)| {
                if round == 0 {
                    local_step(d, &state)
                } else {
                    local_step_warm(d, &state, &locals[di].theta)
                }
                .unwrap()
            })
            .collect();
        let batch: Vec<_> = data.corpus.docs.iter().zip(locals.iter()).collect();
        let value = elbo(&state, &batch).unwrap().total();
        if let Some(&prev) = values.last() {
            let drop = (prev - value) / prev.abs().max(1.0);
            worst_drop = worst_drop.max(drop);
        }
        values.push(value);
        global_step(&mut state, &batch, 1.0).unwrap();
        // kappa and the topic weights stay frozen throughout
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        "elbo-monotonicity",
        worst_drop <= 1e-8 && elapsed < 60.0,
        format!(
            "20 full-batch rounds on 50 docs, worst relative decrease {worst_drop:.2e}, objective {:.2} -> {:.2} ({elapsed:.2}s, bound 60s)",
            values[0],
            values[values.len() - 1]
        ),
    );
}

// ---------------------------------------------------------------------------
// 5 + 8. the synthetic benchmark: recovery and convergence speed
// ---------------------------------------------------------------------------

struct Bench {
    data: SynthOutput,
    result: RunResult,
    train_seconds: f64,
}

static BENCH: OnceLock<Bench> = OnceLock::new();

fn bench() -> &'static Bench {
    BENCH.get_or_init(|| {
        let _guard = heavy_guard();
        let data = generate(&SynthConfig {
            num_topics: 5,
            dim: 10,
            kappa: 50.0,
            num_docs: 500,
            doc_len: 100,
            vocab_size: 1000,
            gamma: 3.0,
            alpha: 0.3,
            seed: 1,
        })
        .unwrap();
        // The low kappa prior location is deliberate regularization: topics
        // holding real data have enough tokens for the likelihood to override
        // it, while duplicate topics flatten and starve.
        let hyper = Hyperparams {
            truncation: 20,
            kappa_prior_m: 20.0_f64.ln(),
            ..Hyperparams::default()
        };
        let sched = ScheduleConfig {
            tau0: 1.0,
            decay: 0.6,
            batch_size: 50,
            max_epochs: 50,
            seed: 0,
            kappa_sample_count: 1000,
            convergence_tol: 1e-5,
            heldout_fraction: 0.0,
            theta_update: ThetaUpdate::Paper,
            beta_step_size: 0.1,
            beta_iters: 20,
            beta_every: 1,
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let start = Instant::now();
        let result = pool
            .install(|| run(&data.corpus, &data.table, &hyper, &sched))
            .unwrap();
        let train_seconds = start.elapsed().as_secs_f64();
        Bench {
            data,
            result,
            train_seconds,
        }
    })
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, arr: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == 1 {
            out.push(arr.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, arr, out);
            if k % 2 == 0 {
                arr.swap(i, k - 1);
            } else {
                arr.swap(0, k - 1);
            }
        }
    }
    let mut out = Vec::new();
    let mut arr: Vec<usize> = (0..n).collect();
    heap(n, &mut arr, &mut out);
    out
}

#[test]
fn c05_synthetic_recovery() {
    let bench = bench();
    let state = &bench.result.state;
    let planted = &bench.data.truth.topic_directions;

    let mut order: Vec<usize> = (0..state.truncation()).collect();
    order.sort_by(|&a, &b| state.topic_mass[b].total_cmp(&state.topic_mass[a]));
    let top: Vec<usize> = order[..planted.len()].to_vec();

    let cosine = |learned: usize, truth: usize| -> f64 {
        state.topics[learned]
            .psi()
            .as_slice()
            .iter()
            .zip(&planted[truth])
            .map(|(a, b)| a * b)
            .sum()
    };
    let mut best_min = f64::NEG_INFINITY;
    let mut best: Vec<f64> = Vec::new();
    for perm in permutations(planted.len()) {
        let cosines: Vec<f64> = perm.iter().enumerate().map(|(i, &p)| cosine(top[i], p)).collect();
        let min = cosines.iter().cloned().fold(f64::INFINITY, f64::min);
        if min > best_min {
            best_min = min;
            best = cosines;
        }
    }
    let heavy_topics = state.topic_mass.iter().filter(|&&m| m > 0.01).count();
    let epochs = bench.result.trace.len();

    report(
        "synthetic-recovery",
        best_min >= 0.95 && heavy_topics <= 7 && epochs <= 50 && bench.train_seconds < 300.0,
        format!(
            "aligned cosines {:?} (min {best_min:.4}, need >= 0.95), {heavy_topics} topics above 1% mass (need <= 7), {epochs} epochs, single-threaded {:.1}s (bound 300s)",
            best.iter().map(|c| (c * 1e4).round() / 1e4).collect::<Vec<_>>(),
            bench.train_seconds
        ),
    );
}

#[test]
fn c08_fast_convergence() {
    let bench = bench();
    let normalized = normalize_trace(&bench.result.trace, TraceField::Elbo).unwrap();
    let reached = normalized
        .iter()
        .take(10)
        .enumerate()
        .find(|(_, (_, v))| *v >= 0.95);
    let detail = match reached {
        Some((epoch, (_, v))) => format!(
            "normalized training objective hit {v:.3} at epoch {} (need >= 0.95 within 10 epochs)",
            epoch + 1
        ),
        None => format!(
            "normalized training objective stayed below 0.95 in the first 10 epochs: {:?}",
            normalized
                .iter()
                .take(10)
                .map(|(_, v)| (v * 1e3).round() / 1e3)
                .collect::<Vec<_>>()
        ),
    };
    report("fast-convergence", reached.is_some(), detail);
}

// ---------------------------------------------------------------------------
// 6. the kappa importance sampler against deterministic quadrature
// ---------------------------------------------------------------------------

fn kappa_state(dim: usize, lambda: f64, prior_m: f64) -> shdp::model::GlobalState {
    let mut e1 = vec![0.0; dim];
    e1[0] = 1.0;
    let mut e2 = vec![0.0; dim];
    e2[1] = 1.0;
    let t0: Vec<f64> = e1.iter().map(|&c| lambda * c).collect();
    let t1: Vec<f64> = e2.iter().map(|&c| lambda * c).collect();
    let log_norm = log_cm(dim, 1.0).unwrap();
    let checkpoint = serde_json::json!({
        "format": "shdp-checkpoint",
        "version": 1,
        "seed": 0,
        "step_count": 0,
        "dim": dim,
        "num_docs": 1,
        "hyper": {
            "truncation": 2,
            "gamma": 1.0,
            "alpha": 1.0,
            "kappa_prior_m": prior_m,
            "kappa_prior_sigma": 1.0,
            "c0": 0.01,
        },
        "beta_star": [0.5, 0.5],
        "topic_mass": [0.5, 0.5],
        "topics": [
            {"t": t0, "kappa_mean": 1.0, "kappa_log_norm_mean": log_norm},
            {"t": t1, "kappa_mean": 1.0, "kappa_log_norm_mean": log_norm},
        ],
        "mu0": e1,
        "vocab": ["a", "b"],
        "word_vectors": [e1, e2],
    });
    from_checkpoint_json(&serde_json::to_string(&checkpoint).unwrap()).unwrap()
}

/// Posterior mean of kappa by trapezoid quadrature in log space: the prior
/// is Normal(m, sigma) in u = ln kappa, tilted by the same evidence term the
/// sampler weights with.
fn quadrature_kappa_mean(dim: usize, lambda: f64, m: f64, r: f64, n: f64) -> f64 {
    let attenuation = mean_resultant_ratio(dim, lambda).unwrap();
    let steps = 400_000usize;
    let lo = m - 8.0;
    let h = 16.0 / steps as f64;
    let mut logs = Vec::with_capacity(steps + 1);
    let mut kappas = Vec::with_capacity(steps + 1);
    let mut max_log = f64::NEG_INFINITY;
    for i in 0..=steps {
        let u = lo + i as f64 * h;
        let kappa = u.exp();
        let z = u - m;
        let lw = -0.5 * z * z + kappa * attenuation * r + n * log_cm(dim, kappa).unwrap();
        if lw > max_log {
            max_log = lw;
        }
        logs.push(lw);
        kappas.push(kappa);
    }
    let mut mass = 0.0;
    let mut mean = 0.0;
    for (lw, kappa) in logs.iter().zip(&kappas) {
        let w = (lw - max_log).exp();
        mass += w;
        mean += w * kappa;
    }
    mean / mass
}

#[test]
fn c06_kappa_sampler_vs_quadrature() {
    const DIM: usize = 10;
    const LAMBDA: f64 = 50.0;
    // (tokens, resultant ratio, prior location): diffuse, moderate, massive
    let regimes = [
        (10.0, 0.6, 10.0_f64.ln()),
        (200.0, 0.85, 20.0_f64.ln()),
        (5000.0, 0.97, 38.0_f64.ln()),
    ];
    let mut details = Vec::new();
    let mut ok = true;
    for &(n, ratio, prior_m) in &regimes {
        let r = ratio * n;
        let mut state = kappa_state(DIM, LAMBDA, prior_m);
        let mut wx0 = vec![0.0; DIM];
        wx0[0] = r;
        let mut wx1 = vec![0.0; DIM];
        wx1[1] = r;
        let stats = BatchStats {
            scale: 1.0,
            weighted_x: vec![wx0, wx1],
            phi_mass: vec![n, n],
            batch_tokens: n,
        };
        update_kappa(&mut state, &stats, 10_000).unwrap();
        let oracle = quadrature_kappa_mean(DIM, LAMBDA, prior_m, r, n);
        for topic in 0..2 {
            let sampled = state.topics[topic].kappa_mean;
            let rel = (sampled - oracle).abs() / oracle;
            ok &= rel <= 0.02;
            if topic == 0 {
                details.push(format!(
                    "n={n:.0} r/n={ratio}: sampler {sampled:.3} vs quadrature {oracle:.3} (rel {rel:.4}, ESS {:.0})",
                    state.topics[topic].kappa_ess
                ));
            }
        }
    }
    report(
        "kappa-sampler-vs-quadrature",
        ok,
        format!("S = 10^4 on three regimes: {}", details.join("; ")),
    );
}

// ---------------------------------------------------------------------------
// 7. PMI equals exhaustive window enumeration on a toy corpus
// ---------------------------------------------------------------------------

#[test]
fn c07_pmi_brute_force() {
    let docs = vec![
        "rain falls on the green hills".to_string(),
        "the river runs through green fields".to_string(),
        "sun over the hills and the river".to_string(),
        "rain and sun share the sky".to_string(),
        "green hills drink the rain".to_string(),
    ];
    let window = 4usize;
    let vocab: HashSet<String> = docs.iter().flat_map(|d| tokenize(d)).collect();
    let index = build_index(&docs, &vocab, window).unwrap();

    // independent enumeration: every window as a set of present words
    let mut windows: Vec<HashSet<String>> = Vec::new();
    for doc in &docs {
        let tokens = tokenize(doc);
        if tokens.is_empty() {
            continue;
        }
        let spans: Vec<&[String]> = if tokens.len() <= window {
            vec![&tokens[..]]
        } else {
            (0..=tokens.len() - window)
                .map(|i| &tokens[i..i + window])
                .collect()
        };
        for span in spans {
            windows.push(span.iter().cloned().collect());
        }
    }
    let total = windows.len() as f64;
    let count_single = |w: &str| windows.iter().filter(|set| set.contains(w)).count() as f64;
    let count_pair = |u: &str, v: &str| {
        windows
            .iter()
            .filter(|set| set.contains(u) && set.contains(v))
            .count() as f64
    };

    let words: Vec<&String> = {
        let mut v: Vec<&String> = vocab.iter().collect();
        v.sort();
        v
    };
    let mut worst = 0.0f64;
    let mut pairs = 0;
    for i in 0..words.len() {
        for j in i + 1..words.len() {
            let expected =
                (count_pair(words[i], words[j]).max(1.0) * total
                    / (count_single(words[i]) * count_single(words[j])))
                .ln();
            let got = index.pmi(words[i], words[j]).unwrap();
            worst = worst.max((got - expected).abs());
            pairs += 1;
        }
    }
    report(
        "pmi-brute-force",
        worst <= 1e-12 && index.total_windows() == windows.len() as u64,
        format!(
            "5-doc toy corpus, window 4: {} windows, {pairs} word pairs, max |difference| = {worst:.2e}",
            windows.len()
        ),
    );
}

// ---------------------------------------------------------------------------
// 9. coherence of real topics beats a shuffled-word control
// ---------------------------------------------------------------------------

fn corpus_lines(corpus: &Corpus) -> Vec<String> {
    corpus
        .docs
        .iter()
        .map(|doc: &Document| {
            let mut tokens: Vec<&str> = Vec::new();
            for (wi, &word) in doc.words.iter().enumerate() {
                for _ in 0..doc.counts[wi] as usize {
                    tokens.push(&corpus.vocab[word as usize]);
                }
            }
            tokens.join(" ")
        })
        .collect()
}

/// Mean coherence of the same top words re-dealt into random topics of the
/// same sizes.
fn shuffled_control(index: &CoherenceIndex, lists: &[Vec<String>], seed: u64) -> f64 {
    let sizes: Vec<usize> = lists.iter().map(Vec::len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    'attempt: for _ in 0..200 {
        let mut pool: Vec<String> = lists.iter().flatten().cloned().collect();
        for i in (1..pool.len()).rev() {
            let j = rng.random_range(0..=i);
            pool.swap(i, j);
        }
        let mut dealt: Vec<Vec<String>> = Vec::with_capacity(sizes.len());
        let mut cursor = 0;
        for &size in &sizes {
            let list = pool[cursor..cursor + size].to_vec();
            cursor += size;
            let distinct: HashSet<&String> = list.iter().collect();
            if distinct.len() != list.len() {
                continue 'attempt;
            }
            dealt.push(list);
        }
        let mut total = 0.0;
        for (i, words) in dealt.into_iter().enumerate() {
            total += topic_coherence(
                index,
                &TopicWordList {
                    topic_id: i,
                    words,
                },
            )
            .unwrap()
            .value;
        }
        return total / sizes.len() as f64;
    }
    panic!("could not deal duplicate-free shuffled topics in 200 attempts");
}

#[test]
fn c09_coherence_beats_shuffled() {
    let _guard = heavy_guard();
    let start = Instant::now();
    let data = generate(&SynthConfig {
        num_topics: 10,
        dim: 16,
        kappa: 40.0,
        num_docs: 2000,
        doc_len: 50,
        vocab_size: 600,
        gamma: 3.0,
        alpha: 0.6,
        seed: 99,
    })
    .unwrap();
    let reference = corpus_lines(&data.corpus);
    let vocab: HashSet<String> = data.corpus.vocab.iter().cloned().collect();
    let index = build_index(&reference, &vocab, 20).unwrap();

    let hyper = Hyperparams {
        truncation: 15,
        ..Hyperparams::default()
    };
    let mut wins = 0;
    let mut margins = Vec::new();
    for seed in 0..10u64 {
        let sched = ScheduleConfig {
            tau0: 1.0,
            decay: 0.6,
            batch_size: 100,
            max_epochs: 6,
            seed,
            kappa_sample_count: 500,
            convergence_tol: 1e-9,
            heldout_fraction: 0.0,
            theta_update: ThetaUpdate::Paper,
            beta_step_size: 0.1,
            beta_iters: 20,
            beta_every: 1,
        };
        let result = run(&data.corpus, &data.table, &hyper, &sched).unwrap();
        let scored = model_coherence(&index, &result.state, 10).unwrap();
        let lists: Vec<Vec<String>> = scored
            .per_topic
            .iter()
            .map(|row| row.words.clone())
            .collect();
        let control = shuffled_control(&index, &lists, seed);
        if scored.average > control {
            wins += 1;
        }
        margins.push(format!("{:.2}>{:.2}", scored.average, control));
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        "coherence-beats-shuffled",
        wins == 10 && elapsed < 900.0,
        format!(
            "trained vs shuffled-topic average PMI on a 2000-doc synthetic reference: {wins}/10 seeds ({}) ({elapsed:.1}s, bound 900s)",
            margins.join(", ")
        ),
    );
}

// ---------------------------------------------------------------------------
// 10. training twice gives identical artifacts
// ---------------------------------------------------------------------------

#[test]
fn c10_determinism() {
    let _guard = heavy_guard();
    let sample = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/sample");
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_shdp"))
            .arg("train")
            .arg("--corpus")
            .arg(sample.join("corpus.txt"))
            .arg("--embeddings")
            .arg(sample.join("embeddings.txt"))
            .arg("--out")
            .arg(&out_dir)
            .args([
                "--truncation",
                "12",
                "--max-epochs",
                "3",
                "--batch-size",
                "50",
                "--kappa-samples",
                "200",
                "--seed",
                "7",
            ])
            .output()
            .unwrap();
        assert!(status.status.success());
        let checkpoint = std::fs::read(out_dir.join("checkpoint.json")).unwrap();
        let trace = std::fs::read_to_string(out_dir.join("trace.csv")).unwrap();
        // the wall-clock column is a timestamp and is excluded
        let trace_stable: Vec<String> = trace
            .lines()
            .map(|line| {
                let mut fields: Vec<&str> = line.split(',').collect();
                fields[3] = "";
                fields.join(",")
            })
            .collect();
        outputs.push((checkpoint, trace_stable));
    }
    let checkpoints_match = outputs[0].0 == outputs[1].0;
    let traces_match = outputs[0].1 == outputs[1].1;
    report(
        "determinism",
        checkpoints_match && traces_match,
        format!(
            "two identical train invocations: checkpoints byte-identical = {checkpoints_match}, traces identical outside the wall-clock timestamp column = {traces_match}"
        ),
    );
}
