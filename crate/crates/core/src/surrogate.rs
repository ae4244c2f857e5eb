//! Exact multi-fidelity Gaussian-process regression over `(x, m)` pairs.
//!
//! The kernel is a product of a stationary kernel on `x` and the linear
//! downsampling kernel on the normalized fidelity `m in [0, 1]`:
//!
//! ```text
//! K((x1, m1), (x2, m2)) = s2 * k(x1, x2) * (c + (1 - m1)^(1 + delta) (1 - m2)^(1 + delta))
//! ```
//!
//! Targets are standardized before fitting and the prior mean is zero in
//! standardized units. Hyperparameters live in log space and are fitted by
//! Adam ascent on the log marginal likelihood.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Cholesky, Matrix};
use crate::optim::Adam;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StationaryKernel {
    #[default]
    SquaredExponential,
    Matern52,
}

impl StationaryKernel {
    /// Correlation at scaled squared distance `r2`.
    #[inline]
    pub fn eval(self, r2: f64) -> f64 {
        match self {
            StationaryKernel::SquaredExponential => (-0.5 * r2).exp(),
            StationaryKernel::Matern52 => {
                let r = r2.sqrt();
                let s5r = 5f64.sqrt() * r;
                (1.0 + s5r + 5.0 * r2 / 3.0) * (-s5r).exp()
            }
        }
    }

    /// `dk/d(log l_k)` divided by `(x_k - x'_k)^2 / l_k^2`.
    #[inline]
    fn lengthscale_factor(self, r2: f64) -> f64 {
        match self {
            StationaryKernel::SquaredExponential => (-0.5 * r2).exp(),
            StationaryKernel::Matern52 => {
                let s5r = 5f64.sqrt() * r2.sqrt();
                5.0 / 3.0 * (1.0 + s5r) * (-s5r).exp()
            }
        }
    }
}

/// Kernel hyperparameters, stored as logs so every value stays positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfKernelParams {
    pub log_lengthscales: Vec<f64>,
    pub log_signal_variance: f64,
    pub log_c: f64,
    pub log_delta: f64,
    pub log_noise_variance: f64,
}

/// Box constraints applied in log space during fitting.
const LENGTHSCALE_BOUNDS: (f64, f64) = (0.02, 50.0);
const SIGNAL_BOUNDS: (f64, f64) = (1e-2, 1e2);
const C_BOUNDS: (f64, f64) = (1e-3, 1e2);
const DELTA_BOUNDS: (f64, f64) = (1e-3, 10.0);
const NOISE_BOUNDS: (f64, f64) = (1e-6, 1.0);

impl MfKernelParams {
    pub fn new(lengthscales: &[f64], signal_variance: f64, c: f64, delta: f64, noise_variance: f64) -> Result<Self> {
        let scalars = [signal_variance, c, delta, noise_variance];
        if lengthscales.iter().chain(&scalars).any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Numerical("kernel hyperparameters must be strictly positive".into()));
        }
        Ok(MfKernelParams {
            log_lengthscales: lengthscales.iter().map(|v| v.ln()).collect(),
            log_signal_variance: signal_variance.ln(),
            log_c: c.ln(),
            log_delta: delta.ln(),
            log_noise_variance: noise_variance.ln(),
        })
    }

    /// Starting point for fitting on `dims` input features in the unit range.
    pub fn default_for(dims: usize) -> Self {
        let l = 0.3 * (dims.max(1) as f64).sqrt();
        Self::new(&vec![l; dims], 1.0, 1.0, 0.5, 1e-3).expect("positive defaults")
    }

    pub fn dims(&self) -> usize {
        self.log_lengthscales.len()
    }

    pub fn lengthscales(&self) -> Vec<f64> {
        self.log_lengthscales.iter().map(|v| v.exp()).collect()
    }

    pub fn signal_variance(&self) -> f64 {
        self.log_signal_variance.exp()
    }

    pub fn c(&self) -> f64 {
        self.log_c.exp()
    }

    pub fn delta(&self) -> f64 {
        self.log_delta.exp()
    }

    pub fn noise_variance(&self) -> f64 {
        self.log_noise_variance.exp()
    }

    /// Flat layout: `[log l_1..l_d, log s2, log c, log delta, log noise]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.log_lengthscales.clone();
        v.extend([self.log_signal_variance, self.log_c, self.log_delta, self.log_noise_variance]);
        v
    }

    pub fn from_vec(v: &[f64]) -> Self {
        let d = v.len() - 4;
        MfKernelParams {
            log_lengthscales: v[..d].to_vec(),
            log_signal_variance: v[d],
            log_c: v[d + 1],
            log_delta: v[d + 2],
            log_noise_variance: v[d + 3],
        }
    }

    fn clamp(&mut self) {
        let clamp = |v: &mut f64, (lo, hi): (f64, f64)| *v = v.clamp(lo.ln(), hi.ln());
        for l in &mut self.log_lengthscales {
            clamp(l, LENGTHSCALE_BOUNDS);
        }
        clamp(&mut self.log_signal_variance, SIGNAL_BOUNDS);
        clamp(&mut self.log_c, C_BOUNDS);
        clamp(&mut self.log_delta, DELTA_BOUNDS);
        clamp(&mut self.log_noise_variance, NOISE_BOUNDS);
    }
}

/// Maps fidelity index `m in 1..=M` onto `[0, 1]`; a single fidelity maps to 1.
pub fn normalize_fidelity(m: u8, fidelities: usize) -> f64 {
    if fidelities <= 1 {
        1.0
    } else {
        (m as f64 - 1.0) / (fidelities as f64 - 1.0)
    }
}

/// `(1 - m)^(1 + delta)`, zero at `m = 1`.
#[inline]
fn fidelity_factor(m_norm: f64, delta: f64) -> f64 {
    let u = (1.0 - m_norm).max(0.0);
    if u == 0.0 {
        0.0
    } else {
        u.powf(1.0 + delta)
    }
}

#[inline]
fn scaled_sq_dist(a: &[f64], b: &[f64], inv_l2: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(inv_l2)
        .map(|((x, y), w)| (x - y) * (x - y) * w)
        .sum()
}

/// The downsampling fidelity kernel `c + (1 - m1)^(1+delta) (1 - m2)^(1+delta)`.
pub fn fidelity_kernel(m1: f64, m2: f64, c: f64, delta: f64) -> f64 {
    c + fidelity_factor(m1, delta) * fidelity_factor(m2, delta)
}

/// Full product kernel between two `(x, m_norm)` inputs.
pub fn kernel(kind: StationaryKernel, params: &MfKernelParams, z1: (&[f64], f64), z2: (&[f64], f64)) -> f64 {
    let inv_l2: Vec<f64> = params.log_lengthscales.iter().map(|l| (-2.0 * l).exp()).collect();
    let r2 = scaled_sq_dist(z1.0, z2.0, &inv_l2);
    params.signal_variance() * kind.eval(r2) * fidelity_kernel(z1.1, z2.1, params.c(), params.delta())
}

/// Training inputs and raw (sign-adjusted) targets.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GpData {
    pub x: Vec<Vec<f64>>,
    pub m: Vec<f64>,
    pub y: Vec<f64>,
}

impl GpData {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn push(&mut self, x: Vec<f64>, m_norm: f64, y: f64) {
        self.x.push(x);
        self.m.push(m_norm);
        self.y.push(y);
    }

    fn subset(&self, idx: &[usize]) -> GpData {
        GpData {
            x: idx.iter().map(|&i| self.x[i].clone()).collect(),
            m: idx.iter().map(|&i| self.m[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }
}

fn gram(kind: StationaryKernel, params: &MfKernelParams, x: &[Vec<f64>], m: &[f64]) -> Matrix {
    let n = x.len();
    let inv_l2: Vec<f64> = params.log_lengthscales.iter().map(|l| (-2.0 * l).exp()).collect();
    let s2 = params.signal_variance();
    let (c, delta) = (params.c(), params.delta());
    let t: Vec<f64> = m.iter().map(|&mi| fidelity_factor(mi, delta)).collect();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = s2 * kind.eval(scaled_sq_dist(&x[i], &x[j], &inv_l2)) * (c + t[i] * t[j]);
            k.set(i, j, v);
            k.set(j, i, v);
        }
    }
    k
}

/// Log marginal likelihood of standardized targets `y` and its gradient with
/// respect to the flat log-parameter vector (see [`MfKernelParams::to_vec`]).
pub fn log_marginal_likelihood(
    kind: StationaryKernel,
    params: &MfKernelParams,
    x: &[Vec<f64>],
    m: &[f64],
    y: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let n = y.len();
    let d = params.dims();
    let mut k = gram(kind, params, x, m);
    let noise = params.noise_variance();
    k.add_diagonal(noise);
    let chol = Cholesky::with_jitter(&k)?;
    let alpha = chol.solve(y);
    let lml = -0.5 * dot(y, &alpha) - 0.5 * chol.log_det() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

    let kinv = chol.inverse();
    let inv_l2: Vec<f64> = params.log_lengthscales.iter().map(|l| (-2.0 * l).exp()).collect();
    let s2 = params.signal_variance();
    let (c, delta) = (params.c(), params.delta());
    let t: Vec<f64> = m.iter().map(|&mi| fidelity_factor(mi, delta)).collect();
    let u_log: Vec<f64> = m.iter().map(|&mi| (1.0 - mi).max(0.0).ln()).collect();

    let mut grad = vec![0.0; d + 4];
    for i in 0..n {
        for j in 0..=i {
            let w = alpha[i] * alpha[j] - kinv.get(i, j);
            // off-diagonal pairs appear twice in the trace
            let w = if i == j { 0.5 * w } else { w };
            let r2 = scaled_sq_dist(&x[i], &x[j], &inv_l2);
            let k1 = kind.eval(r2);
            let k2 = c + t[i] * t[j];
            let kij = s2 * k1 * k2;
            let lf = s2 * kind.lengthscale_factor(r2) * k2;
            for ((g, (a, b)), il2) in grad[..d].iter_mut().zip(x[i].iter().zip(&x[j])).zip(&inv_l2) {
                *g += w * lf * (a - b) * (a - b) * il2;
            }
            grad[d] += w * kij;
            grad[d + 1] += w * s2 * k1 * c;
            let tt = t[i] * t[j];
            if tt > 0.0 {
                grad[d + 2] += w * s2 * k1 * tt * (u_log[i] + u_log[j]) * delta;
            }
            if i == j {
                grad[d + 3] += w * noise;
            }
        }
    }
    Ok((lml, grad))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpFitConfig {
    pub kernel: StationaryKernel,
    pub steps: usize,
    pub lr: f64,
    pub restarts: usize,
    /// Hyperparameters are fitted on a seeded random subset of at most this many points.
    pub max_points: Option<usize>,
    pub seed: u64,
    /// Warm start for the first restart.
    pub init: Option<MfKernelParams>,
}

impl Default for GpFitConfig {
    fn default() -> Self {
        GpFitConfig {
            kernel: StationaryKernel::SquaredExponential,
            steps: 200,
            lr: 0.05,
            restarts: 2,
            max_points: Some(256),
            seed: 0,
            init: None,
        }
    }
}

/// A fitted (or prior-only) multi-fidelity GP.
#[derive(Debug, Clone)]
pub struct MfGpModel {
    kind: StationaryKernel,
    params: MfKernelParams,
    train_x: Vec<Vec<f64>>,
    train_m: Vec<f64>,
    /// Standardized targets.
    train_y: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    chol: Cholesky,
    alpha: Vec<f64>,
    inv_l2: Vec<f64>,
    train_t: Vec<f64>,
    log_marginal_likelihood: f64,
}

/// Serializable snapshot: hyperparameters plus the raw training set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MfGpSnapshot {
    pub kernel: StationaryKernel,
    pub params: MfKernelParams,
    pub data: GpData,
}

/// Posterior over a list of `(x, m_norm)` queries.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub cross_covariance: Option<Matrix>,
}

/// Per-object summaries that give the posterior at every fidelity in O(1).
#[derive(Debug, Clone, Copy)]
pub struct ObjectPosterior {
    a_alpha: f64,
    b_alpha: f64,
    aa: f64,
    ab: f64,
    bb: f64,
    signal: f64,
    c: f64,
    delta: f64,
}

/// Latent posterior of `f_m(x)` and its covariance with `f_M(x)`, standardized units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FidelityPosterior {
    pub mean: f64,
    pub variance: f64,
    pub target_mean: f64,
    pub target_variance: f64,
    pub cross_covariance: f64,
}

pub const VARIANCE_FLOOR: f64 = 1e-12;
const RHO_LIMIT: f64 = 1.0 - 1e-9;

impl FidelityPosterior {
    pub fn correlation(&self) -> f64 {
        let denom = (self.variance * self.target_variance).sqrt();
        let rho = if denom > 0.0 { self.cross_covariance / denom } else { 1.0 };
        rho.clamp(-RHO_LIMIT, RHO_LIMIT)
    }
}

impl ObjectPosterior {
    pub fn at(&self, m_norm: f64) -> FidelityPosterior {
        let s = fidelity_factor(m_norm, self.delta);
        let c = self.c;
        let mean = c * self.a_alpha + s * self.b_alpha;
        let var = self.signal * (c + s * s) - (c * c * self.aa + 2.0 * c * s * self.ab + s * s * self.bb);
        let target_mean = c * self.a_alpha;
        let target_var = self.signal * c - c * c * self.aa;
        let cross = self.signal * c - c * c * self.aa - c * s * self.ab;
        FidelityPosterior {
            mean,
            variance: var.max(VARIANCE_FLOOR),
            target_mean,
            target_variance: target_var.max(VARIANCE_FLOOR),
            cross_covariance: cross,
        }
    }
}

fn standardize(y: &[f64]) -> (f64, f64) {
    let n = y.len();
    if n == 0 {
        return (0.0, 1.0);
    }
    let mean = y.iter().sum::<f64>() / n as f64;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let scale = if n < 2 || var.sqrt() < 1e-12 { 1.0 } else { var.sqrt() };
    (mean, scale)
}

impl MfGpModel {
    /// Conditions on `data` with fixed hyperparameters.
    pub fn condition(kind: StationaryKernel, params: MfKernelParams, data: &GpData) -> Result<Self> {
        let (y_mean, y_scale) = standardize(&data.y);
        let train_y: Vec<f64> = data.y.iter().map(|v| (v - y_mean) / y_scale).collect();
        let mut k = gram(kind, &params, &data.x, &data.m);
        k.add_diagonal(params.noise_variance());
        let chol = Cholesky::with_jitter(&k)?;
        let alpha = chol.solve(&train_y);
        let n = train_y.len();
        let lml = -0.5 * dot(&train_y, &alpha) - 0.5 * chol.log_det() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        let inv_l2 = params.log_lengthscales.iter().map(|l| (-2.0 * l).exp()).collect();
        let train_t = data.m.iter().map(|&mi| fidelity_factor(mi, params.delta())).collect();
        Ok(MfGpModel {
            kind,
            params,
            train_x: data.x.clone(),
            train_m: data.m.clone(),
            train_y,
            y_mean,
            y_scale,
            chol,
            alpha,
            inv_l2,
            train_t,
            log_marginal_likelihood: lml,
        })
    }

    /// A model with no training data.
    pub fn prior(kind: StationaryKernel, params: MfKernelParams) -> Self {
        Self::condition(kind, params, &GpData::default()).expect("empty factorization")
    }

    /// Fits hyperparameters by maximizing the log marginal likelihood, then conditions on all data.
    pub fn fit(data: &GpData, config: &GpFitConfig) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptySet);
        }
        let dims = data.x[0].len();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let fit_data = match config.max_points {
            Some(cap) if data.len() > cap => {
                let mut idx = sample(&mut rng, data.len(), cap).into_vec();
                idx.sort_unstable();
                data.subset(&idx)
            }
            _ => data.clone(),
        };
        let (mean, scale) = standardize(&fit_data.y);
        let ys: Vec<f64> = fit_data.y.iter().map(|v| (v - mean) / scale).collect();

        let base = config.init.clone().unwrap_or_else(|| MfKernelParams::default_for(dims));
        let mut best: Option<(f64, MfKernelParams)> = None;
        for restart in 0..config.restarts.max(1) {
            let mut start = if restart == 0 { base.clone() } else { MfKernelParams::default_for(dims) };
            if restart > 0 {
                let mut v = start.to_vec();
                for p in &mut v {
                    *p += rng.random_range(-1.0..1.0);
                }
                start = MfKernelParams::from_vec(&v);
            }
            start.clamp();
            if let Some((lml, params)) = optimize(config.kernel, start, &fit_data.x, &fit_data.m, &ys, config.steps, config.lr) {
                if best.as_ref().is_none_or(|(b, _)| lml > *b) {
                    best = Some((lml, params));
                }
            }
        }
        let params = match best {
            Some((_, p)) => p,
            None => return Err(Error::Numerical("hyperparameter fitting failed on every restart".into())),
        };
        Self::condition(config.kernel, params, data)
    }

    pub fn from_snapshot(snapshot: &MfGpSnapshot) -> Result<Self> {
        Self::condition(snapshot.kernel, snapshot.params.clone(), &snapshot.data)
    }

    pub fn snapshot(&self) -> MfGpSnapshot {
        MfGpSnapshot {
            kernel: self.kind,
            params: self.params.clone(),
            data: GpData {
                x: self.train_x.clone(),
                m: self.train_m.clone(),
                y: self.train_y.iter().map(|v| v * self.y_scale + self.y_mean).collect(),
            },
        }
    }

    pub fn params(&self) -> &MfKernelParams {
        &self.params
    }

    pub fn kernel_kind(&self) -> StationaryKernel {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.train_y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_y.is_empty()
    }

    pub fn chol(&self) -> &Cholesky {
        &self.chol
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn standardized_targets(&self) -> &[f64] {
        &self.train_y
    }

    pub fn train_inputs(&self) -> (&[Vec<f64>], &[f64]) {
        (&self.train_x, &self.train_m)
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.log_marginal_likelihood
    }

    pub fn standardize(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_scale
    }

    pub fn destandardize(&self, y: f64) -> f64 {
        y * self.y_scale + self.y_mean
    }

    pub fn y_scale(&self) -> f64 {
        self.y_scale
    }

    fn k1_row(&self, x: &[f64]) -> Vec<f64> {
        let s2 = self.params.signal_variance();
        self.train_x
            .iter()
            .map(|xi| s2 * self.kind.eval(scaled_sq_dist(x, xi, &self.inv_l2)))
            .collect()
    }

    fn cross_kernel(&self, x: &[f64], m_norm: f64) -> Vec<f64> {
        let s = fidelity_factor(m_norm, self.params.delta());
        let c = self.params.c();
        self.k1_row(x)
            .into_iter()
            .zip(&self.train_t)
            .map(|(a, t)| a * (c + s * t))
            .collect()
    }

    fn prior_kernel(&self, z1: (&[f64], f64), z2: (&[f64], f64)) -> f64 {
        let r2 = scaled_sq_dist(z1.0, z2.0, &self.inv_l2);
        self.params.signal_variance() * self.kind.eval(r2) * fidelity_kernel(z1.1, z2.1, self.params.c(), self.params.delta())
    }

    /// Posterior in standardized units over arbitrary `(x, m_norm)` queries.
    pub fn posterior_standardized(&self, queries: &[(Vec<f64>, f64)], with_cross: bool) -> Posterior {
        let q = queries.len();
        let n = self.len();
        let mut kq = Matrix::zeros(n, q);
        let mut mean = Vec::with_capacity(q);
        for (j, (x, m)) in queries.iter().enumerate() {
            let k = self.cross_kernel(x, *m);
            mean.push(dot(&k, &self.alpha));
            for i in 0..n {
                kq.set(i, j, k[i]);
            }
        }
        let v = self.chol.solve_lower_matrix(&kq);
        let mut variance = Vec::with_capacity(q);
        for (j, (x, m)) in queries.iter().enumerate() {
            let prior = self.prior_kernel((x, *m), (x, *m));
            let explained: f64 = (0..n).map(|i| v.get(i, j).powi(2)).sum();
            variance.push((prior - explained).max(VARIANCE_FLOOR));
        }
        let cross_covariance = with_cross.then(|| {
            let mut cov = Matrix::zeros(q, q);
            for a in 0..q {
                for b in 0..=a {
                    let prior = self.prior_kernel((&queries[a].0, queries[a].1), (&queries[b].0, queries[b].1));
                    let explained: f64 = (0..n).map(|i| v.get(i, a) * v.get(i, b)).sum();
                    let val = if a == b { variance[a] } else { prior - explained };
                    cov.set(a, b, val);
                    cov.set(b, a, val);
                }
            }
            cov
        });
        Posterior { mean, variance, cross_covariance }
    }

    /// Posterior de-standardized to raw target units.
    pub fn posterior(&self, queries: &[(Vec<f64>, f64)], with_cross: bool) -> Posterior {
        let mut p = self.posterior_standardized(queries, with_cross);
        let s2 = self.y_scale * self.y_scale;
        for m in &mut p.mean {
            *m = self.destandardize(*m);
        }
        for v in &mut p.variance {
            *v *= s2;
        }
        if let Some(cov) = p.cross_covariance.as_mut() {
            let q = cov.rows();
            for a in 0..q {
                for b in 0..q {
                    cov.set(a, b, cov.get(a, b) * s2);
                }
            }
        }
        p
    }

    /// Sufficient statistics for the posterior of `x` at every fidelity.
    pub fn object_posterior(&self, x: &[f64]) -> ObjectPosterior {
        let a = self.k1_row(x);
        let b: Vec<f64> = a.iter().zip(&self.train_t).map(|(ai, ti)| ai * ti).collect();
        let va = self.chol.solve_lower(&a);
        let vb = self.chol.solve_lower(&b);
        ObjectPosterior {
            a_alpha: dot(&a, &self.alpha),
            b_alpha: dot(&b, &self.alpha),
            aa: dot(&va, &va),
            ab: dot(&va, &vb),
            bb: dot(&vb, &vb),
            signal: self.params.signal_variance(),
            c: self.params.c(),
            delta: self.params.delta(),
        }
    }

    /// Posterior correlation between latent `f_m(x)` and `f_M(x)`.
    pub fn posterior_correlation(&self, x: &[f64], m_norm: f64) -> f64 {
        if m_norm >= 1.0 {
            return RHO_LIMIT;
        }
        self.object_posterior(x).at(m_norm).correlation()
    }

    /// Joint posterior of the target fidelity over `xs`, standardized units.
    pub fn target_joint_posterior(&self, xs: &[Vec<f64>]) -> (Vec<f64>, Matrix) {
        let queries: Vec<(Vec<f64>, f64)> = xs.iter().map(|x| (x.clone(), 1.0)).collect();
        let p = self.posterior_standardized(&queries, true);
        (p.mean, p.cross_covariance.expect("requested"))
    }
}

fn optimize(
    kind: StationaryKernel,
    start: MfKernelParams,
    x: &[Vec<f64>],
    m: &[f64],
    y: &[f64],
    steps: usize,
    lr: f64,
) -> Option<(f64, MfKernelParams)> {
    let mut params = start;
    let mut theta = params.to_vec();
    let mut adam = Adam::new(theta.len(), lr);
    let mut best: Option<(f64, MfKernelParams)> = None;
    for _ in 0..=steps {
        let Ok((lml, grad)) = log_marginal_likelihood(kind, &params, x, m, y) else {
            break;
        };
        if !lml.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            break;
        }
        if best.as_ref().is_none_or(|(b, _)| lml > *b) {
            best = Some((lml, params.clone()));
        }
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        adam.step(&mut theta, &neg);
        params = MfKernelParams::from_vec(&theta);
        params.clamp();
        theta = params.to_vec();
    }
    best
}
