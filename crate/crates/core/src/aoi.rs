//! AoI vectors of the receiver buffer and their truncated Markov dynamics.
//!
//! A buffer of size `b` holds the `b` most recently delivered samples, freshest
//! first. Every slot all ages grow by one; a delivery pushes a fresh sample of
//! age 1 to the front and drops the oldest one. Ages saturate at `delta_max`
//! so the state space stays finite.
//!
//! The chain starts at `(1, 2, ..., b)`, i.e. as if `b` consecutive deliveries
//! had just happened. There is no empty-buffer state.

use std::collections::{HashMap, VecDeque};
use std::fmt;

use crate::error::{Error, Result};

/// Default cap on enumerated states.
pub const DEFAULT_STATE_BUDGET: usize = 1_000_000;

/// Ages of the buffered samples, freshest first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AgeVector(Vec<u32>);

impl AgeVector {
    /// Validates `ages` against the truncation cap: every age in
    /// `1..=delta_max`, strictly increasing except for repeats of `delta_max`.
    pub fn new(ages: Vec<u32>, delta_max: u32) -> Result<Self> {
        if ages.is_empty() {
            return Err(Error::InvalidArgument(
                "age vector must be non-empty".into(),
            ));
        }
        if ages.iter().any(|&d| d == 0 || d > delta_max) {
            return Err(Error::InvalidArgument(format!(
                "ages {ages:?} must lie in 1..={delta_max}"
            )));
        }
        for w in ages.windows(2) {
            let ok = w[0] < w[1] || (w[0] == delta_max && w[1] == delta_max);
            if !ok {
                return Err(Error::InvalidArgument(format!(
                    "ages {ages:?} must be strictly increasing below {delta_max}"
                )));
            }
        }
        Ok(Self(ages))
    }

    /// `(1, 2, ..., b)`.
    pub fn initial(buffer: usize) -> Self {
        Self((1..=buffer as u32).collect())
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn buffer(&self) -> usize {
        self.0.len()
    }

    /// Age of the freshest sample.
    pub fn head(&self) -> u32 {
        self.0[0]
    }

    pub fn advance(&self, scheduled: bool, success: bool, delta_max: u32) -> AgeVector {
        advance(self, scheduled, success, delta_max)
    }
}

impl fmt::Display for AgeVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, ")")
    }
}

/// One slot of buffer dynamics.
pub fn advance(state: &AgeVector, scheduled: bool, success: bool, delta_max: u32) -> AgeVector {
    let aged = |d: u32| (d + 1).min(delta_max);
    let ages = &state.0;
    if scheduled && success {
        let mut next = Vec::with_capacity(ages.len());
        next.push(1);
        next.extend(ages[..ages.len() - 1].iter().map(|&d| aged(d)));
        AgeVector(next)
    } else {
        AgeVector(ages.iter().map(|&d| aged(d)).collect())
    }
}

/// All age vectors reachable from the initial state, with dense ids and
/// precomputed successors.
#[derive(Debug, Clone)]
pub struct StateSpace {
    buffer: usize,
    delta_max: u32,
    states: Vec<AgeVector>,
    index: HashMap<AgeVector, usize>,
    idle_next: Vec<usize>,
    delivered_next: Vec<usize>,
}

impl StateSpace {
    pub fn buffer(&self) -> usize {
        self.buffer
    }

    pub fn delta_max(&self) -> u32 {
        self.delta_max
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[AgeVector] {
        &self.states
    }

    pub fn state(&self, id: usize) -> &AgeVector {
        &self.states[id]
    }

    pub fn id_of(&self, state: &AgeVector) -> Option<usize> {
        self.index.get(state).copied()
    }

    pub fn id_of_ages(&self, ages: &[u32]) -> Option<usize> {
        self.index.get(&AgeVector(ages.to_vec())).copied()
    }

    /// Id of `(1, ..., b)`; always 0.
    pub fn initial_id(&self) -> usize {
        0
    }

    /// Successor when nothing is delivered.
    pub fn idle_next(&self, id: usize) -> usize {
        self.idle_next[id]
    }

    /// Successor after a successful delivery.
    pub fn delivered_next(&self, id: usize) -> usize {
        self.delivered_next[id]
    }

    /// `id,ages` legend lines for debug dumps; ages are `;`-separated.
    pub fn legend_csv(&self) -> String {
        let mut out = String::from("state_id,ages\n");
        for (id, s) in self.states.iter().enumerate() {
            let ages: Vec<String> = s.0.iter().map(|d| d.to_string()).collect();
            out.push_str(&format!("{id},{}\n", ages.join(";")));
        }
        out
    }
}

pub fn enumerate_states(buffer: usize, delta_max: u32) -> Result<StateSpace> {
    enumerate_states_with_budget(buffer, delta_max, DEFAULT_STATE_BUDGET)
}

/// Breadth-first closure of the initial state under [`advance`].
pub fn enumerate_states_with_budget(
    buffer: usize,
    delta_max: u32,
    budget: usize,
) -> Result<StateSpace> {
    if buffer == 0 {
        return Err(Error::InvalidArgument(
            "buffer size must be at least 1".into(),
        ));
    }
    if (delta_max as usize) < buffer + 1 {
        return Err(Error::InvalidArgument(format!(
            "delta_max {delta_max} must be at least b + 1 = {}",
            buffer + 1
        )));
    }
    let capacity = || Error::Capacity {
        buffer,
        delta_max,
        budget,
    };

    let mut states = Vec::new();
    let mut index = HashMap::new();
    let mut queue = VecDeque::new();
    let start = AgeVector::initial(buffer);
    index.insert(start.clone(), 0);
    states.push(start.clone());
    queue.push_back(start);

    while let Some(s) = queue.pop_front() {
        for next in [
            advance(&s, false, false, delta_max),
            advance(&s, true, true, delta_max),
        ] {
            if !index.contains_key(&next) {
                if states.len() >= budget {
                    return Err(capacity());
                }
                index.insert(next.clone(), states.len());
                states.push(next.clone());
                queue.push_back(next);
            }
        }
    }

    let idle_next = states
        .iter()
        .map(|s| index[&advance(s, false, false, delta_max)])
        .collect();
    let delivered_next = states
        .iter()
        .map(|s| index[&advance(s, true, true, delta_max)])
        .collect();

    Ok(StateSpace {
        buffer,
        delta_max,
        states,
        index,
        idle_next,
        delivered_next,
    })
}

/// Channel of one sensor: delivery probability and truncation cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionModel {
    success_prob: f64,
    delta_max: u32,
}

impl TransitionModel {
    /// `success_prob` may be 0 here (a dead channel) even though source models
    /// require it to be positive.
    pub fn new(success_prob: f64, delta_max: u32) -> Result<Self> {
        if !(0.0..=1.0).contains(&success_prob) {
            return Err(Error::InvalidArgument(format!(
                "success probability {success_prob} outside [0, 1]"
            )));
        }
        Ok(Self {
            success_prob,
            delta_max,
        })
    }

    pub fn success_prob(&self) -> f64 {
        self.success_prob
    }

    pub fn delta_max(&self) -> u32 {
        self.delta_max
    }
}

/// Next-state distribution under `action` (true = transmit); outcomes that
/// coincide are merged.
pub fn transition_distribution(
    state: &AgeVector,
    action: bool,
    model: &TransitionModel,
) -> Vec<(AgeVector, f64)> {
    let failed = advance(state, action, false, model.delta_max);
    if !action {
        return vec![(failed, 1.0)];
    }
    let p = model.success_prob;
    let delivered = advance(state, true, true, model.delta_max);
    if delivered == failed {
        return vec![(delivered, 1.0)];
    }
    let mut out = Vec::with_capacity(2);
    if p > 0.0 {
        out.push((delivered, p));
    }
    if p < 1.0 {
        out.push((failed, 1.0 - p));
    }
    out
}
