//! Top-k sampling with temperature.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub k: usize,
    pub temperature: f64,
    pub seed: u64,
    /// Generation stops after this many tokens if `[EOE]` has not appeared.
    pub max_ending_length: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            k: 40,
            temperature: 0.7,
            seed: 42,
            max_ending_length: 60,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.k, self.temperature)?;
        if self.max_ending_length == 0 {
            return Err(Error::Invalid("max_ending_length must be positive".into()));
        }
        Ok(())
    }
}

fn check(k: usize, temperature: f64) -> Result<()> {
    if k == 0 {
        return Err(Error::Invalid("top-k needs k >= 1".into()));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Invalid(format!("temperature must be positive, got {temperature}")));
    }
    Ok(())
}

fn check_probs(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::Empty("distribution"));
    }
    if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::Invalid("probabilities must be finite and non-negative".into()));
    }
    if probs.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Invalid("distribution has no mass".into()));
    }
    Ok(())
}

/// Indices of the `k` most probable entries, ties broken by lower index.
pub fn top_k_indices(probs: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    let k = k.min(probs.len());
    let by_prob = |a: &usize, b: &usize| probs[*b].total_cmp(&probs[*a]).then(a.cmp(b));
    if k < idx.len() {
        idx.select_nth_unstable_by(k, by_prob);
        idx.truncate(k);
    }
    idx.sort_by(by_prob);
    idx
}

/// The distribution actually sampled from: keep the top `k` entries, raise
/// them to `1 / temperature` (temperature on log-probabilities) and
/// renormalize. Everything outside the top `k` gets zero.
pub fn top_k_distribution(probs: &[f64], k: usize, temperature: f64) -> Result<Vec<f64>> {
    check(k, temperature)?;
    check_probs(probs)?;
    let top = top_k_indices(probs, k);
    let max_log = probs[top[0]].ln();
    let mut out = vec![0.0; probs.len()];
    let mut z = 0.0;
    for &i in &top {
        let w = ((probs[i].ln() - max_log) / temperature).exp();
        out[i] = w;
        z += w;
    }
    for &i in &top {
        out[i] /= z;
    }
    Ok(out)
}

/// Draws one index. With `k = 1` this is the argmax (lowest index on ties)
/// and consumes no randomness.
pub fn sample_top_k<R: Rng + ?Sized>(probs: &[f64], k: usize, temperature: f64, rng: &mut R) -> Result<usize> {
    if k == 1 {
        check(k, temperature)?;
        check_probs(probs)?;
        return Ok(argmax(probs));
    }
    let dist = top_k_distribution(probs, k, temperature)?;
    let w = WeightedIndex::new(&dist).map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(w.sample(rng))
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
