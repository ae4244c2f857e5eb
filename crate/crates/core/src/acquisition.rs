//! Cost-weighted multi-fidelity max-value entropy search.
//!
//! The information gain about the target-fidelity maximum `f*` from a query
//! at `(x, m)` uses the GIBBON closed form:
//!
//! ```text
//! IG = -1/(2|S|) sum_{f* in S} log(1 - rho^2 r(g) (g + r(g))),   g = (f* - mu_M(x)) / sd_M(x)
//! ```
//!
//! where `r = pdf / cdf` and `rho` is the posterior correlation between
//! `f_m(x)` and `f_M(x)`. The acquisition is `IG / cost_m`.

use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::{Env, Object};
use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::oracles::Cost;
use crate::surrogate::{normalize_fidelity, MfGpModel, VARIANCE_FLOOR};

const LOG_ARG_FLOOR: f64 = 1e-12;
const MILLS_CONTINUED_FRACTION_BELOW: f64 = -6.0;
const CONTINUED_FRACTION_DEPTH: usize = 200;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcqConfig {
    pub n_max_value_samples: usize,
    /// Candidate objects per max-value draw; the whole space is used when it is smaller.
    pub pool_size: usize,
    /// Adds the `1/2 log|R|` batch term during greedy batch selection.
    pub batch_term: bool,
}

impl Default for AcqConfig {
    fn default() -> Self {
        AcqConfig { n_max_value_samples: 10, pool_size: 256, batch_term: false }
    }
}

/// Samples of the target-fidelity maximum in standardized units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxValueSamples {
    pub values: Vec<f64>,
}

impl MaxValueSamples {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySet);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite max-value sample".into()));
        }
        Ok(MaxValueSamples { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// `pdf(g) / cdf(g)`.
pub fn inverse_mills(g: f64) -> f64 {
    mills_terms(g).0
}

/// `(r, g + r)` with `r = pdf(g) / cdf(g)`. In the left tail `r` comes from
/// the continued fraction `r = t + 1/(t + 2/(t + 3/(t + ...)))` with `t = -g`,
/// which also yields `g + r` without cancellation.
fn mills_terms(g: f64) -> (f64, f64) {
    if g < MILLS_CONTINUED_FRACTION_BELOW {
        let t = -g;
        let mut tail = 0.0;
        for k in (1..=CONTINUED_FRACTION_DEPTH).rev() {
            tail = k as f64 / (t + tail);
        }
        (t + tail, tail)
    } else {
        let r = normal_pdf(g) / normal_cdf(g);
        (r, g + r)
    }
}

fn log_term(g: f64, rho: f64) -> f64 {
    let (r, g_plus_r) = mills_terms(g);
    (1.0 - rho * rho * r * g_plus_r).clamp(LOG_ARG_FLOOR, 1.0).ln()
}

/// Pointwise GIBBON information gain for a target posterior `(mean, sd)`.
pub fn gibbon_information_gain(mean: f64, sd: f64, rho: f64, samples: &MaxValueSamples) -> f64 {
    if rho == 0.0 {
        return 0.0;
    }
    let sd = sd.max(VARIANCE_FLOOR.sqrt());
    let total: f64 = samples.values.iter().map(|f| log_term((f - mean) / sd, rho)).sum();
    (-0.5 * total / samples.len() as f64).max(0.0)
}

/// Uniform candidate pool without duplicates, or the whole space when it fits.
fn candidate_pool<R: Rng + ?Sized>(env: &Env, size: usize, rng: &mut R) -> Vec<Object> {
    let count = env.object_count();
    if count <= size as u128 {
        return (0..count).map(|i| env.object_at(i)).collect();
    }
    let mut seen = BTreeSet::new();
    let mut pool = Vec::with_capacity(size);
    while pool.len() < size {
        let x = env.random_object(rng);
        if seen.insert(x.clone()) {
            pool.push(x);
        }
    }
    pool
}

/// Draws `f*` by maximizing joint target-fidelity posterior samples over fresh candidate pools.
pub fn sample_max_values<R: Rng + ?Sized>(
    model: &MfGpModel,
    env: &Env,
    config: &AcqConfig,
    rng: &mut R,
) -> Result<MaxValueSamples> {
    if config.pool_size == 0 || config.n_max_value_samples == 0 {
        return Err(Error::config("acquisition", "pool size and sample count must be positive"));
    }
    let mut values = Vec::with_capacity(config.n_max_value_samples);
    for _ in 0..config.n_max_value_samples {
        let pool = candidate_pool(env, config.pool_size, rng);
        let feats: Vec<Vec<f64>> = pool.iter().map(|x| env.object_features(x)).collect();
        let (mean, cov) = model.target_joint_posterior(&feats);
        let chol = Cholesky::with_jitter(&cov)?;
        let z: Vec<f64> = (0..mean.len()).map(|_| rng.sample(StandardNormal)).collect();
        let draw = chol.mul_lower(&z);
        let max = mean
            .iter()
            .zip(&draw)
            .map(|(m, d)| m + d)
            .fold(f64::NEG_INFINITY, f64::max);
        values.push(max);
    }
    MaxValueSamples::new(values)
}

/// Scores `(x, m)` candidates against a fixed model and max-value sample set.
#[derive(Debug, Clone)]
pub struct Acquisition<'a> {
    model: &'a MfGpModel,
    samples: MaxValueSamples,
    costs: Vec<f64>,
}

impl<'a> Acquisition<'a> {
    pub fn new(model: &'a MfGpModel, samples: MaxValueSamples, costs: &[Cost]) -> Result<Self> {
        if costs.is_empty() || costs.iter().any(|c| c.micros() == 0) {
            return Err(Error::config("costs", "every fidelity needs a positive cost"));
        }
        Ok(Acquisition { model, samples, costs: costs.iter().map(|c| c.as_f64()).collect() })
    }

    pub fn samples(&self) -> &MaxValueSamples {
        &self.samples
    }

    pub fn fidelities(&self) -> usize {
        self.costs.len()
    }

    pub fn model(&self) -> &MfGpModel {
        self.model
    }

    /// Information gain (not cost-weighted) of querying `x` at fidelity `m`.
    pub fn information_gain(&self, x: &[f64], m: u8) -> f64 {
        self.information_gains(x)[m as usize - 1]
    }

    /// Information gain at every fidelity, sharing one posterior solve.
    pub fn information_gains(&self, x: &[f64]) -> Vec<f64> {
        let stats = self.model.object_posterior(x);
        let fids = self.fidelities();
        (1..=fids as u8)
            .map(|m| {
                let m_norm = normalize_fidelity(m, fids);
                let post = stats.at(m_norm);
                let rho = if m as usize == fids { 1.0 - 1e-9 } else { post.correlation() };
                gibbon_information_gain(post.target_mean, post.target_variance.sqrt(), rho, &self.samples)
            })
            .collect()
    }

    /// Cost-weighted acquisition at every fidelity.
    pub fn mf_mes_all(&self, x: &[f64]) -> Vec<f64> {
        self.information_gains(x)
            .into_iter()
            .zip(&self.costs)
            .map(|(ig, c)| ig / c)
            .collect()
    }

    pub fn mf_mes(&self, x: &[f64], m: u8) -> f64 {
        self.information_gain(x, m) / self.costs[m as usize - 1]
    }

    pub fn score_batch(&self, candidates: &[(Vec<f64>, u8)]) -> Vec<f64> {
        candidates.iter().map(|(x, m)| self.mf_mes(x, *m)).collect()
    }

    /// Greedy cost-weighted batch selection with the `1/2 log|R|` redundancy term.
    ///
    /// `candidates` should already be ranked; each step adds the candidate with
    /// the largest gain in batch information per unit cost.
    pub fn greedy_batch(&self, candidates: &[(Vec<f64>, u8)], batch: usize) -> Result<Vec<usize>> {
        let fids = self.fidelities();
        let pointwise: Vec<f64> = candidates.iter().map(|(x, m)| self.information_gain(x, *m)).collect();
        let queries: Vec<(Vec<f64>, f64)> = candidates
            .iter()
            .map(|(x, m)| (x.clone(), normalize_fidelity(*m, fids)))
            .collect();
        let cov = self
            .model
            .posterior_standardized(&queries, true)
            .cross_covariance
            .expect("requested");
        let noise = self.model.params().noise_variance();
        let corr = |i: usize, j: usize| {
            let vi = cov.get(i, i) + noise;
            let vj = cov.get(j, j) + noise;
            let c = if i == j { vi } else { cov.get(i, j) };
            c / (vi * vj).sqrt()
        };
        let mut chosen: Vec<usize> = Vec::new();
        let mut current = 0.0;
        while chosen.len() < batch.min(candidates.len()) {
            let mut best: Option<(f64, usize, f64)> = None;
            for c in 0..candidates.len() {
                if chosen.contains(&c) {
                    continue;
                }
                let mut idx = chosen.clone();
                idx.push(c);
                let r = Matrix::from_fn(idx.len(), idx.len(), |a, b| corr(idx[a], idx[b]));
                let log_det = match Cholesky::with_jitter(&r) {
                    Ok(ch) => ch.log_det(),
                    Err(_) => continue,
                };
                let value = 0.5 * log_det + idx.iter().map(|&i| pointwise[i]).sum::<f64>();
                let gain = (value - current) / self.costs[candidates[c].1 as usize - 1];
                if best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, c, value));
                }
            }
            let Some((_, c, value)) = best else { break };
            chosen.push(c);
            current = value;
        }
        Ok(chosen)
    }
}
