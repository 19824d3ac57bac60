//! Small numeric helpers shared across modules.

/// log(exp(a) + exp(b)) without intermediate overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// log(sum_i exp(v_i)) over a slice; NEG_INFINITY for an empty slice or
/// when every entry is NEG_INFINITY.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Normalizes log-weights into probabilities in place; returns the
/// log-normalizer. Entries that are NEG_INFINITY become exact zeros.
pub fn softmax_in_place(log_weights: &mut [f64]) -> f64 {
    let norm = log_sum_exp(log_weights);
    for w in log_weights.iter_mut() {
        *w = (*w - norm).exp();
    }
    norm
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// FNV-1a over bytes; used wherever a hash must stay stable across
/// platforms and releases (held-out splits, derived RNG streams).
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
