use rand::seq::index;

use super::seed::{rng_for, Stream};
use crate::error::{Error, Result};
use crate::nn::ModelParams;

/// Number of participants for `n` clients at rate `r`: `max(1, round(r·n))`.
pub fn participants_per_round(n: usize, r: f64) -> usize {
    ((r * n as f64).round() as usize).clamp(1, n.max(1))
}

/// Uniform sample without replacement, returned in ascending id order.
pub fn sample_clients(n: usize, r: f64, master_seed: u64, round: u64) -> Vec<usize> {
    let k = participants_per_round(n, r);
    if k >= n {
        return (0..n).collect();
    }
    let mut rng = rng_for(master_seed, Stream::Sampling, round, 0);
    let mut ids = index::sample(&mut rng, n, k).into_vec();
    ids.sort_unstable();
    ids
}

/// `sizes_k / Σ sizes` over the given participants.
pub fn aggregation_weights(sizes: &[usize]) -> Result<Vec<f64>> {
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(Error::invalid("aggregation over zero samples"));
    }
    Ok(sizes.iter().map(|&s| s as f64 / total as f64).collect())
}

/// Weighted combination `Σ w_k m_k`, accumulated in list order as
/// `(Σw)·m_0 + Σ w_k (m_k − m_0)`. When the weights are known to sum to one
/// (`normalized`), the leading factor is taken as exactly 1, so identical
/// inputs reproduce the input bit for bit.
fn combine(models: &[&ModelParams], weights: &[f64], normalized: bool) -> Result<ModelParams> {
    let first = *models
        .first()
        .ok_or_else(|| Error::invalid("aggregate needs at least one model"))?;
    if weights.len() != models.len() {
        return Err(Error::shape("aggregate", models.len(), format!("{} weights", weights.len())));
    }
    for m in models {
        first.check_same_shape("aggregate", m)?;
    }
    let mut out = first.clone();
    if !normalized {
        out.scale(weights.iter().sum());
    }
    for (m, &w) in models.iter().zip(weights).skip(1) {
        if w == 0.0 {
            continue;
        }
        for ((o, a), b) in out.tensors_mut().zip(m.tensors()).zip(first.tensors()) {
            for ((oi, &ai), &bi) in o.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
                *oi += w * (ai - bi);
            }
        }
    }
    Ok(out)
}

/// Size-weighted mean renormalized over the supplied models.
pub fn aggregate(models: &[&ModelParams], sizes: &[usize]) -> Result<ModelParams> {
    if sizes.len() != models.len() {
        return Err(Error::shape("aggregate", models.len(), format!("{} sizes", sizes.len())));
    }
    combine(models, &aggregation_weights(sizes)?, true)
}

/// `Σ_k |D_k|/|D| · m_k` with `|D|` the total over all clients, so the
/// weights sum to less than one under partial participation.
pub fn aggregate_literal(models: &[&ModelParams], sizes: &[usize], total: usize) -> Result<ModelParams> {
    if sizes.len() != models.len() {
        return Err(Error::shape("aggregate", models.len(), format!("{} sizes", sizes.len())));
    }
    if total == 0 || sizes.iter().sum::<usize>() > total {
        return Err(Error::invalid("literal aggregation total must cover the participants"));
    }
    let weights: Vec<f64> = sizes.iter().map(|&s| s as f64 / total as f64).collect();
    combine(models, &weights, false)
}
