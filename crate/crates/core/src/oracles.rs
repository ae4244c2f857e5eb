//! Synthetic multi-fidelity oracle families and cost accounting.
//!
//! Oracles are indexed by increasing fidelity `m = 1..=M`; `f_M` is the target.
//! Costs are held as integer micro-units so sums over thousands of queries are
//! exact.

use std::f64::consts::PI;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::env::{Env, Object};
use crate::error::{Error, Result};

/// Oracle cost in millionths of a unit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cost(u64);

impl Cost {
    pub const SCALE: u64 = 1_000_000;
    pub const ZERO: Cost = Cost(0);

    /// Converts a decimal cost; it must be a non-negative multiple of 1e-6.
    pub fn from_f64(value: f64) -> Result<Cost> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::config("costs", format!("cost {value} is not a non-negative number")));
        }
        let scaled = value * Cost::SCALE as f64;
        let rounded = scaled.round();
        if (scaled - rounded).abs() > 1e-6 * rounded.max(1.0) {
            return Err(Error::config("costs", format!("cost {value} is not a multiple of 1e-6")));
        }
        Ok(Cost(rounded as u64))
    }

    pub fn from_micros(micros: u64) -> Cost {
        Cost(micros)
    }

    pub fn micros(self) -> u64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / Cost::SCALE as f64
    }
}

impl Add for Cost {
    type Output = Cost;
    fn add(self, rhs: Cost) -> Cost {
        Cost(self.0 + rhs.0)
    }
}

impl AddAssign for Cost {
    fn add_assign(&mut self, rhs: Cost) {
        self.0 += rhs.0;
    }
}

impl Sum for Cost {
    fn sum<I: Iterator<Item = Cost>>(iter: I) -> Cost {
        iter.fold(Cost::ZERO, Add::add)
    }
}

impl fmt::Display for Cost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_f64())
    }
}

/// Branin oracle at fidelity `m` in `{1, 2, 3}` on `[-5, 10] x [0, 15]`.
pub fn branin(m: u8, x: [f64; 2]) -> Result<f64> {
    if !(-5.0..=10.0).contains(&x[0]) || !(0.0..=15.0).contains(&x[1]) {
        return Err(Error::Domain(format!("branin input {x:?} outside [-5,10]x[0,15]")));
    }
    match m {
        1 => Ok(branin_low(x)),
        2 => Ok(branin_mid(x)),
        3 => Ok(branin_true(x)),
        _ => Err(Error::Domain(format!("branin fidelity {m} not in 1..=3"))),
    }
}

fn branin_true(x: [f64; 2]) -> f64 {
    let [x1, x2] = x;
    let t = x2 - 1.25 * x1 * x1 / (PI * PI) + 5.0 * x1 / PI - 6.0;
    t * t + (10.0 - 5.0 / (4.0 * PI)) * x1.cos() + 10.0
}

fn branin_mid(x: [f64; 2]) -> f64 {
    let [x1, x2] = x;
    // the radicand is a sum of a square and a strictly positive term; clamp anyway
    let inner = branin_true([x1 - 2.0, x2 - 2.0]).max(0.0);
    10.0 * inner.sqrt() + 2.0 * (x1 - 0.5) - 3.0 * (3.0 * x2 - 1.0) - 1.0
}

fn branin_low(x: [f64; 2]) -> f64 {
    let [x1, x2] = x;
    branin_mid([1.2 * (x1 + 2.0), 1.2 * (x2 + 2.0)]) - 3.0 * x2 + 1.0
}

const HARTMANN_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];
const HARTMANN_DELTA: [f64; 4] = [0.01, -0.01, -0.1, 0.1];
const HARTMANN_A: [[f64; 6]; 4] = [
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
];
const HARTMANN_P: [[f64; 6]; 4] = [
    [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
    [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
    [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
    [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
];

/// Hartmann-6 (maximization form) at fidelity `m` in `{1, 2, 3}` on `[0, 1]^6`,
/// with `alpha(m) = alpha + (3 - m) * delta`.
pub fn hartmann(m: u8, x: &[f64]) -> Result<f64> {
    if x.len() != 6 || x.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Domain(format!("hartmann input {x:?} outside [0,1]^6")));
    }
    if !(1..=3).contains(&m) {
        return Err(Error::Domain(format!("hartmann fidelity {m} not in 1..=3")));
    }
    let shift = (3 - m) as f64;
    let mut total = 0.0;
    for i in 0..4 {
        let alpha = HARTMANN_ALPHA[i] + shift * HARTMANN_DELTA[i];
        let e: f64 = (0..6)
            .map(|j| HARTMANN_A[i][j] * (x[j] - HARTMANN_P[i][j]).powi(2))
            .sum();
        total += alpha * (-e).exp();
    }
    Ok(total)
}

/// Nucleotide alphabet used by the sequence task; token `t` is `NUCLEOTIDES[t]`.
pub const NUCLEOTIDES: [char; 4] = ['A', 'C', 'G', 'T'];

fn complement(t: u16) -> u16 {
    3 - t
}

/// Toy sequence energy at fidelity `m` in `{1, 2}`.
///
/// The high-fidelity score counts adjacent complementary pairs (`A->T`, `T->A`,
/// `C->G`, `G->C`) plus twice the number of 4-mers equal to their own reverse
/// complement. The low-fidelity score is the same quantity on the first
/// `ceil(2n/3)` tokens.
pub fn toy_sequence_energy(m: u8, seq: &[u16]) -> Result<f64> {
    if let Some((position, &token)) = seq.iter().enumerate().find(|(_, &t)| t > 3) {
        return Err(Error::InvalidToken { token, position });
    }
    let window = match m {
        2 => seq,
        1 => &seq[..(2 * seq.len()).div_ceil(3)],
        _ => return Err(Error::Domain(format!("sequence fidelity {m} not in 1..=2"))),
    };
    let pairs = window.windows(2).filter(|w| w[1] == complement(w[0])).count();
    let palindromes = window
        .windows(4)
        .filter(|w| (0..4).all(|i| w[i] == complement(w[3 - i])))
        .count();
    Ok((pairs + 2 * palindromes) as f64)
}

pub fn parse_sequence(s: &str) -> Result<Vec<u16>> {
    s.chars()
        .enumerate()
        .map(|(i, c)| {
            NUCLEOTIDES
                .iter()
                .position(|&n| n == c.to_ascii_uppercase())
                .map(|t| t as u16)
                .ok_or(Error::InvalidToken { token: c as u16, position: i })
        })
        .collect()
}

pub fn format_sequence(seq: &[u16]) -> String {
    seq.iter().map(|&t| NUCLEOTIDES.get(t as usize).copied().unwrap_or('?')).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Branin,
    Hartmann6,
    SequenceToy,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Branin => "branin",
            Task::Hartmann6 => "hartmann6",
            Task::SequenceToy => "sequence_toy",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Annotation {
    pub x: Object,
    pub y: f64,
    pub m: u8,
    pub cost: Cost,
}

/// A family of oracles over the objects of one environment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleSet {
    task: Task,
    costs: Vec<Cost>,
    /// +1 when larger raw values are better, -1 for minimization tasks.
    score_sign: f64,
    /// Grid side or sequence length.
    resolution: usize,
}

impl OracleSet {
    pub fn branin(side: usize) -> Self {
        OracleSet {
            task: Task::Branin,
            costs: [10_000, 100_000, 1_000_000].map(Cost::from_micros).to_vec(),
            score_sign: -1.0,
            resolution: side,
        }
    }

    pub fn hartmann6(side: usize) -> Self {
        OracleSet {
            task: Task::Hartmann6,
            costs: [125_000, 250_000, 1_000_000].map(Cost::from_micros).to_vec(),
            score_sign: 1.0,
            resolution: side,
        }
    }

    pub fn sequence_toy(length: usize) -> Self {
        OracleSet {
            task: Task::SequenceToy,
            costs: [200_000, 20_000_000].map(Cost::from_micros).to_vec(),
            score_sign: 1.0,
            resolution: length,
        }
    }

    pub fn for_task(task: Task, resolution: usize) -> Self {
        match task {
            Task::Branin => Self::branin(resolution),
            Task::Hartmann6 => Self::hartmann6(resolution),
            Task::SequenceToy => Self::sequence_toy(resolution),
        }
    }

    /// Replaces the costs. They must be positive and non-decreasing in `m`.
    pub fn with_costs(mut self, costs: &[f64]) -> Result<Self> {
        if costs.len() != self.costs.len() {
            return Err(Error::config(
                "costs",
                format!("{} needs {} costs, got {}", self.task.name(), self.costs.len(), costs.len()),
            ));
        }
        let parsed = costs.iter().map(|&c| Cost::from_f64(c)).collect::<Result<Vec<_>>>()?;
        if parsed.iter().any(|c| c.micros() == 0) {
            return Err(Error::config("costs", "costs must be positive"));
        }
        if parsed.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::config("costs", "costs must be non-decreasing in fidelity"));
        }
        self.costs = parsed;
        Ok(self)
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn fidelities(&self) -> usize {
        self.costs.len()
    }

    pub fn target_fidelity(&self) -> u8 {
        self.costs.len() as u8
    }

    pub fn costs(&self) -> &[Cost] {
        &self.costs
    }

    pub fn cost(&self, m: u8) -> Cost {
        self.costs[m as usize - 1]
    }

    pub fn costs_strictly_increasing(&self) -> bool {
        self.costs.windows(2).all(|w| w[0] < w[1])
    }

    pub fn score_sign(&self) -> f64 {
        self.score_sign
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// The multi-fidelity environment whose terminals this set scores.
    pub fn env(&self) -> Env {
        match self.task {
            Task::Branin => Env::grid(2, self.resolution, self.fidelities()),
            Task::Hartmann6 => Env::grid(6, self.resolution, self.fidelities()),
            Task::SequenceToy => Env::sequence(self.resolution, 4, self.fidelities()),
        }
    }

    /// Affine cell-index map `i -> lo + i * (hi - lo) / (L - 1)`.
    pub fn grid_to_domain(&self, x: &[u16]) -> Vec<f64> {
        let (lo, hi): (&[f64], &[f64]) = match self.task {
            Task::Branin => (&[-5.0, 0.0], &[10.0, 15.0]),
            Task::Hartmann6 => (&[0.0; 6], &[1.0; 6]),
            Task::SequenceToy => return x.iter().map(|&t| t as f64).collect(),
        };
        let denom = if self.resolution > 1 { (self.resolution - 1) as f64 } else { 1.0 };
        x.iter()
            .enumerate()
            .map(|(d, &i)| lo[d] + i as f64 * (hi[d] - lo[d]) / denom)
            .collect()
    }

    /// Raw oracle value `f_m(x)`.
    pub fn evaluate(&self, x: &[u16], m: u8) -> Result<f64> {
        if m == 0 || m as usize > self.fidelities() {
            return Err(Error::Domain(format!("fidelity {m} not in 1..={}", self.fidelities())));
        }
        match self.task {
            Task::Branin => {
                if x.len() != 2 || x.iter().any(|&i| i as usize >= self.resolution) {
                    return Err(Error::Domain(format!("grid index {x:?} outside the branin grid")));
                }
                let p = self.grid_to_domain(x);
                branin(m, [p[0], p[1]])
            }
            Task::Hartmann6 => {
                if x.len() != 6 || x.iter().any(|&i| i as usize >= self.resolution) {
                    return Err(Error::Domain(format!("grid index {x:?} outside the hartmann grid")));
                }
                hartmann(m, &self.grid_to_domain(x))
            }
            Task::SequenceToy => {
                if x.len() != self.resolution {
                    return Err(Error::Domain(format!(
                        "sequence length {} differs from {}",
                        x.len(),
                        self.resolution
                    )));
                }
                toy_sequence_energy(m, x)
            }
        }
    }

    /// Target-fidelity value with the score sign applied (larger is better).
    pub fn score(&self, x: &[u16]) -> Result<f64> {
        Ok(self.score_sign * self.evaluate(x, self.target_fidelity())?)
    }

    /// Evaluates queries in order and sums their costs exactly.
    pub fn evaluate_batch(&self, queries: &[(Object, u8)]) -> Result<(Vec<Annotation>, Cost)> {
        let mut out = Vec::with_capacity(queries.len());
        let mut total = Cost::ZERO;
        for (index, (x, m)) in queries.iter().enumerate() {
            let y = self
                .evaluate(x, *m)
                .map_err(|e| Error::Query { index, source: Box::new(e) })?;
            let cost = self.cost(*m);
            total += cost;
            out.push(Annotation { x: x.clone(), y, m: *m, cost });
        }
        Ok((out, total))
    }
}
