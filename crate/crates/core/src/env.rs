//! Compositional environments with a one-shot fidelity action.
//!
//! Two object spaces are supported: a `D`-dimensional hyper-grid of side `L`,
//! built by incrementing one coordinate at a time from the origin, and
//! fixed-length token sequences built by appending tokens. In multi-fidelity
//! mode the action alphabet is extended with `SetFidelity(m)` for
//! `m in 1..=M`, which must be taken exactly once before `Stop`.
//!
//! Action indices are laid out as `[object actions.., SetFidelity(1..=M).., Stop]`.
//! The backward alphabet is the same list without `Stop`, so a non-stop action
//! has the same index in both.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A terminal object: grid coordinates or a token list.
pub type Object = Vec<u16>;

/// Default cap on the number of objects `enumerate_terminals` will materialize.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Space {
    Grid { dims: usize, side: usize },
    Sequence { length: usize, vocab: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FidState {
    pub payload: Vec<u16>,
    /// 0 means unset.
    pub fidelity: u8,
    pub terminal: bool,
}

impl fmt::Display for FidState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:?}, fid {}{})", self.payload, self.fidelity, if self.terminal { ", terminal" } else { "" })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Increment(usize),
    Append(u16),
    SetFidelity(u8),
    Stop,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Increment(d) => write!(f, "Inc({d})"),
            Action::Append(t) => write!(f, "Append({t})"),
            Action::SetFidelity(m) => write!(f, "SetFidelity({m})"),
            Action::Stop => write!(f, "Stop"),
        }
    }
}

/// A complete trajectory from `s0` to a terminal state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<FidState>,
    pub actions: Vec<Action>,
    /// Sum of forward log-probabilities of the recorded actions.
    pub log_pf: f64,
    /// Sum of backward log-probabilities of the recorded transitions.
    pub log_pb: f64,
}

impl Trajectory {
    pub fn terminal(&self) -> &FidState {
        self.states.last().expect("trajectory has at least s0")
    }
}

/// Immutable environment descriptor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Env {
    space: Space,
    fidelities: usize,
    fidelity_action: bool,
    enumeration_cap: u128,
}

impl Env {
    /// Multi-fidelity hyper-grid with `fidelities` oracles.
    pub fn grid(dims: usize, side: usize, fidelities: usize) -> Self {
        assert!(dims >= 1 && side >= 1 && fidelities >= 1);
        assert!(side <= u16::MAX as usize + 1);
        Env {
            space: Space::Grid { dims, side },
            fidelities,
            fidelity_action: true,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        }
    }

    /// Multi-fidelity fixed-length sequences over `vocab` tokens.
    pub fn sequence(length: usize, vocab: usize, fidelities: usize) -> Self {
        assert!(length >= 1 && vocab >= 1 && fidelities >= 1);
        assert!(vocab <= u16::MAX as usize);
        Env {
            space: Space::Sequence { length, vocab },
            fidelities,
            fidelity_action: true,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        }
    }

    /// Same object space without the fidelity action; terminals report fidelity 1.
    pub fn single_fidelity(&self) -> Self {
        Env {
            space: self.space,
            fidelities: 1,
            fidelity_action: false,
            enumeration_cap: self.enumeration_cap,
        }
    }

    pub fn with_enumeration_cap(mut self, cap: u128) -> Self {
        self.enumeration_cap = cap;
        self
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn fidelities(&self) -> usize {
        self.fidelities
    }

    pub fn is_multi_fidelity(&self) -> bool {
        self.fidelity_action
    }

    fn object_actions(&self) -> usize {
        match self.space {
            Space::Grid { dims, .. } => dims,
            Space::Sequence { vocab, .. } => vocab,
        }
    }

    fn fidelity_actions(&self) -> usize {
        if self.fidelity_action {
            self.fidelities
        } else {
            0
        }
    }

    pub fn n_actions(&self) -> usize {
        self.object_actions() + self.fidelity_actions() + 1
    }

    /// Size of the backward alphabet (every action except `Stop`).
    pub fn n_backward_actions(&self) -> usize {
        self.n_actions() - 1
    }

    pub fn stop_index(&self) -> usize {
        self.n_actions() - 1
    }

    pub fn action_index(&self, action: Action) -> usize {
        match action {
            Action::Increment(d) => d,
            Action::Append(t) => t as usize,
            Action::SetFidelity(m) => self.object_actions() + m as usize - 1,
            Action::Stop => self.stop_index(),
        }
    }

    pub fn action_at(&self, index: usize) -> Action {
        let n_obj = self.object_actions();
        if index == self.stop_index() {
            Action::Stop
        } else if index < n_obj {
            match self.space {
                Space::Grid { .. } => Action::Increment(index),
                Space::Sequence { .. } => Action::Append(index as u16),
            }
        } else {
            Action::SetFidelity((index - n_obj + 1) as u8)
        }
    }

    pub fn reset(&self) -> FidState {
        let payload = match self.space {
            Space::Grid { dims, .. } => vec![0; dims],
            Space::Sequence { .. } => Vec::new(),
        };
        FidState {
            payload,
            fidelity: 0,
            terminal: false,
        }
    }

    pub fn is_initial(&self, state: &FidState) -> bool {
        !state.terminal && state.fidelity == 0 && *state == self.reset()
    }

    fn is_complete(&self, payload: &[u16]) -> bool {
        match self.space {
            Space::Grid { .. } => true,
            Space::Sequence { length, .. } => payload.len() == length,
        }
    }

    fn can_stop(&self, state: &FidState) -> bool {
        self.is_complete(&state.payload) && (!self.fidelity_action || state.fidelity >= 1)
    }

    fn is_legal(&self, state: &FidState, action: Action) -> bool {
        if state.terminal {
            return false;
        }
        match (self.space, action) {
            (Space::Grid { dims, side }, Action::Increment(d)) => {
                d < dims && (state.payload[d] as usize) + 1 < side
            }
            (Space::Sequence { length, vocab }, Action::Append(t)) => {
                (t as usize) < vocab && state.payload.len() < length
            }
            (_, Action::SetFidelity(m)) => {
                self.fidelity_action && state.fidelity == 0 && m >= 1 && (m as usize) <= self.fidelities
            }
            (_, Action::Stop) => self.can_stop(state),
            _ => false,
        }
    }

    /// Boolean mask over the forward alphabet. Terminal states get an all-false mask.
    pub fn allowed_actions(&self, state: &FidState) -> Vec<bool> {
        (0..self.n_actions())
            .map(|i| self.is_legal(state, self.action_at(i)))
            .collect()
    }

    pub fn step(&self, state: &FidState, action: Action) -> Result<FidState> {
        if !self.is_legal(state, action) {
            return Err(Error::IllegalAction {
                action: action.to_string(),
                state: state.to_string(),
            });
        }
        let mut next = state.clone();
        match action {
            Action::Increment(d) => next.payload[d] += 1,
            Action::Append(t) => next.payload.push(t),
            Action::SetFidelity(m) => next.fidelity = m,
            Action::Stop => next.terminal = true,
        }
        Ok(next)
    }

    /// All `(parent, action)` pairs with `step(parent, action) == state`.
    pub fn parents(&self, state: &FidState) -> Vec<(FidState, Action)> {
        if state.terminal {
            let mut parent = state.clone();
            parent.terminal = false;
            return vec![(parent, Action::Stop)];
        }
        let mut out = Vec::new();
        match self.space {
            Space::Grid { dims, .. } => {
                for d in 0..dims {
                    if state.payload[d] > 0 {
                        let mut p = state.clone();
                        p.payload[d] -= 1;
                        out.push((p, Action::Increment(d)));
                    }
                }
            }
            Space::Sequence { .. } => {
                if let Some(&last) = state.payload.last() {
                    let mut p = state.clone();
                    p.payload.pop();
                    out.push((p, Action::Append(last)));
                }
            }
        }
        if self.fidelity_action && state.fidelity != 0 {
            let mut p = state.clone();
            p.fidelity = 0;
            out.push((p, Action::SetFidelity(state.fidelity)));
        }
        out
    }

    /// Mask over the backward alphabet: which actions could have produced `state`.
    /// Only meaningful for non-terminal, non-initial states.
    pub fn backward_mask(&self, state: &FidState) -> Vec<bool> {
        let mut mask = vec![false; self.n_backward_actions()];
        for (_, a) in self.parents(state) {
            if a != Action::Stop {
                mask[self.action_index(a)] = true;
            }
        }
        mask
    }

    pub fn encoding_len(&self) -> usize {
        self.fidelity_offset() + self.fidelities + 1
    }

    fn fidelity_offset(&self) -> usize {
        match self.space {
            Space::Grid { dims, side } => dims * side,
            Space::Sequence { length, vocab } => length * (vocab + 1),
        }
    }

    /// Indices of the non-zero (unit) entries of `encode(state)`, ascending.
    pub fn active_features(&self, state: &FidState) -> Vec<usize> {
        let mut idx = Vec::with_capacity(self.encoding_len());
        match self.space {
            Space::Grid { side, .. } => {
                for (d, &c) in state.payload.iter().enumerate() {
                    idx.push(d * side + c as usize);
                }
            }
            Space::Sequence { length, vocab } => {
                for p in 0..length {
                    let token = state.payload.get(p).map_or(vocab, |&t| t as usize);
                    idx.push(p * (vocab + 1) + token);
                }
            }
        }
        idx.push(self.fidelity_offset() + state.fidelity as usize);
        idx
    }

    /// Dense one-hot encoding: per grid dimension (or per sequence position over
    /// vocab + pad) followed by a one-hot fidelity block over `0..=M`.
    pub fn encode(&self, state: &FidState) -> Vec<f64> {
        let mut v = vec![0.0; self.encoding_len()];
        for i in self.active_features(state) {
            v[i] = 1.0;
        }
        v
    }

    /// Number of distinct terminal objects.
    pub fn object_count(&self) -> u128 {
        match self.space {
            Space::Grid { dims, side } => (side as u128).pow(dims as u32),
            Space::Sequence { length, vocab } => (vocab as u128).pow(length as u32),
        }
    }

    /// Terminal objects in mixed-radix order.
    pub fn object_at(&self, mut index: u128) -> Object {
        let (n, radix) = match self.space {
            Space::Grid { dims, side } => (dims, side as u128),
            Space::Sequence { length, vocab } => (length, vocab as u128),
        };
        let mut out = vec![0u16; n];
        for slot in out.iter_mut().rev() {
            *slot = (index % radix) as u16;
            index /= radix;
        }
        out
    }

    pub fn random_object<R: Rng + ?Sized>(&self, rng: &mut R) -> Object {
        match self.space {
            Space::Grid { dims, side } => (0..dims).map(|_| rng.random_range(0..side) as u16).collect(),
            Space::Sequence { length, vocab } => {
                (0..length).map(|_| rng.random_range(0..vocab) as u16).collect()
            }
        }
    }

    /// Every terminal `(x, m)` exactly once. The cap applies to the number of objects.
    pub fn enumerate_terminals(&self) -> Result<Vec<(Object, u8)>> {
        let count = self.object_count();
        if count > self.enumeration_cap {
            return Err(Error::TooLarge {
                size: count * self.fidelities as u128,
                cap: self.enumeration_cap,
            });
        }
        let mut out = Vec::with_capacity(count as usize * self.fidelities);
        for i in 0..count {
            let x = self.object_at(i);
            for m in 1..=self.fidelities as u8 {
                out.push((x.clone(), m));
            }
        }
        Ok(out)
    }

    /// The `(x, m)` pair a terminal state stands for. In single-fidelity mode `m` is 1.
    pub fn terminal_pair(&self, state: &FidState) -> (Object, u8) {
        let m = if self.fidelity_action { state.fidelity } else { 1 };
        (state.payload.clone(), m)
    }

    /// The terminal state for `(x, m)`.
    pub fn terminal_state(&self, x: &[u16], m: u8) -> FidState {
        FidState {
            payload: x.to_vec(),
            fidelity: if self.fidelity_action { m } else { 0 },
            terminal: true,
        }
    }

    /// Continuous features of an object for the surrogate: grid coordinates
    /// scaled to `[0, 1]`, or a flattened one-hot of the tokens.
    pub fn object_features(&self, x: &[u16]) -> Vec<f64> {
        match self.space {
            Space::Grid { side, .. } => {
                let scale = if side > 1 { (side - 1) as f64 } else { 1.0 };
                x.iter().map(|&c| c as f64 / scale).collect()
            }
            Space::Sequence { length, vocab } => {
                let mut v = vec![0.0; length * vocab];
                for (p, &t) in x.iter().enumerate() {
                    v[p * vocab + t as usize] = 1.0;
                }
                v
            }
        }
    }

    pub fn object_feature_len(&self) -> usize {
        match self.space {
            Space::Grid { dims, .. } => dims,
            Space::Sequence { length, vocab } => length * vocab,
        }
    }
}
