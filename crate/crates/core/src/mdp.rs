//! Per-sensor Lagrangian sub-problem: a discounted MDP over buffer states with
//! stage cost `err(s) + lambda * a`.
//!
//! ```text
//! Q(s, a) = err(s) + lambda * a + gamma * sum_{s'} P^a(s, s') V(s')
//! V(s)    = min_a Q(s, a)
//! ```
//!
//! Sweeps are synchronous (Jacobi): every sweep reads only the previous
//! iterate, so results do not depend on evaluation order.

use crate::aoi::{AgeVector, StateSpace, TransitionModel};
use crate::error::{Error, Result};
use crate::source::ErrorTable;

/// Hard cap on Bellman sweeps.
pub const MAX_SWEEPS: usize = 1_000_000;

/// Tolerance used by [`discounted_usage`].
pub const USAGE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    pub values: Vec<f64>,
    pub lambda: f64,
    pub gamma: f64,
    /// Certified sup-norm distance of `values` to the fixed point.
    pub residual: f64,
    /// Sup-norm change of every sweep, in order.
    pub residual_history: Vec<f64>,
}

impl ValueFunction {
    pub fn at(&self, id: usize) -> f64 {
        self.values[id]
    }
}

/// `q[s] = [Q(s, 0), Q(s, 1)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub q: Vec<[f64; 2]>,
    pub lambda: f64,
}

impl QTable {
    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    /// `Q(s, 0) - Q(s, 1)` by state id.
    pub fn gain_at(&self, id: usize) -> f64 {
        let [q0, q1] = self.q[id];
        q0 - q1
    }
}

/// `action[s]`: true means transmit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubProblemPolicy {
    pub action: Vec<bool>,
}

impl SubProblemPolicy {
    pub fn constant(len: usize, transmit: bool) -> Self {
        Self {
            action: vec![transmit; len],
        }
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!(
            "discount factor must lie in [0, 1) for the discounted formulation, got {gamma}"
        )));
    }
    Ok(())
}

#[inline]
fn bellman_q(
    states: &StateSpace,
    p: f64,
    err: f64,
    lambda: f64,
    gamma: f64,
    values: &[f64],
    id: usize,
) -> [f64; 2] {
    let v_idle = values[states.idle_next(id)];
    let v_delivered = values[states.delivered_next(id)];
    let q0 = err + gamma * v_idle;
    let q1 = err + lambda + gamma * (p * v_delivered + (1.0 - p) * v_idle);
    [q0, q1]
}

/// Value iteration from `V = 0`.
pub fn value_iteration(
    states: &StateSpace,
    trans: &TransitionModel,
    errs: &ErrorTable,
    lambda: f64,
    gamma: f64,
    tol: f64,
) -> Result<(ValueFunction, QTable)> {
    value_iteration_from(states, trans, errs, lambda, gamma, tol, None)
}

/// Value iteration from an arbitrary bounded start.
///
/// Stops once `gamma * ||V_{k+1} - V_k|| <= tol * (1 - gamma)`, or earlier
/// when the MacQueen bounds on the fixed point are already narrower than
/// `2 * tol`, in which case `V` is moved to the centre of the bounds. Either
/// way the returned `V` is within `tol` of the fixed point in sup-norm, and
/// the returned Q-table is the one whose row minima are the returned `V`.
pub fn value_iteration_from(
    states: &StateSpace,
    trans: &TransitionModel,
    errs: &ErrorTable,
    lambda: f64,
    gamma: f64,
    tol: f64,
    start: Option<&[f64]>,
) -> Result<(ValueFunction, QTable)> {
    check_gamma(gamma)?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    let n = states.len();
    if errs.len() != n {
        return Err(Error::InvalidArgument(format!(
            "error table has {} entries for {n} states",
            errs.len()
        )));
    }
    let mut values = match start {
        Some(v) if v.len() == n => v.to_vec(),
        Some(v) => {
            return Err(Error::InvalidArgument(format!(
                "warm start has {} entries for {n} states",
                v.len()
            )))
        }
        None => vec![0.0; n],
    };
    let p = trans.success_prob();
    let mut next = vec![0.0; n];
    let mut q = vec![[0.0; 2]; n];
    let mut history = Vec::new();

    let horizon_factor = gamma / (1.0 - gamma);
    let residual;
    loop {
        let mut change = 0.0f64;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for id in 0..n {
            let row = bellman_q(states, p, errs.get(id), lambda, gamma, &values, id);
            let v = row[0].min(row[1]);
            let d = v - values[id];
            change = change.max(d.abs());
            lo = lo.min(d);
            hi = hi.max(d);
            q[id] = row;
            next[id] = v;
        }
        std::mem::swap(&mut values, &mut next);
        history.push(change);
        if !change.is_finite() {
            return Err(Error::Numerical(
                "value iteration produced non-finite values".into(),
            ));
        }
        if gamma * change <= tol * (1.0 - gamma) {
            residual = change * horizon_factor;
            break;
        }
        // MacQueen bounds: V* lies within [V + f*lo, V + f*hi] componentwise.
        let half_width = 0.5 * horizon_factor * (hi - lo);
        if half_width <= tol {
            let shift = 0.5 * horizon_factor * (hi + lo);
            values.iter_mut().for_each(|v| *v += shift);
            q.iter_mut().for_each(|row| {
                row[0] += shift;
                row[1] += shift;
            });
            residual = half_width;
            break;
        }
        if history.len() >= MAX_SWEEPS {
            return Err(Error::IterationCap(MAX_SWEEPS));
        }
    }

    Ok((
        ValueFunction {
            values,
            lambda,
            gamma,
            residual,
            residual_history: history,
        },
        QTable { q, lambda },
    ))
}

/// Transmit exactly where it is strictly cheaper; ties go to idling.
pub fn greedy_policy(q: &QTable) -> SubProblemPolicy {
    SubProblemPolicy {
        action: q.q.iter().map(|[q0, q1]| q1 < q0).collect(),
    }
}

/// `Q(s, 0) - Q(s, 1)`: positive when transmitting is worth its price.
pub fn gain(q: &QTable, states: &StateSpace, state: &AgeVector) -> Result<f64> {
    let id = states
        .id_of(state)
        .ok_or_else(|| Error::InvalidArgument(format!("state {state} is not enumerated")))?;
    Ok(q.gain_at(id))
}

/// Expected discounted number of transmissions `E[sum_t gamma^t u(t)]` from
/// `initial` under `policy`, by exact policy evaluation.
pub fn discounted_usage(
    policy: &SubProblemPolicy,
    states: &StateSpace,
    trans: &TransitionModel,
    initial: &AgeVector,
    gamma: f64,
) -> Result<f64> {
    let (usage, _) = usage_values(policy, states, trans, gamma, None)?;
    let id = states
        .id_of(initial)
        .ok_or_else(|| Error::InvalidArgument(format!("state {initial} is not enumerated")))?;
    Ok(usage[id])
}

/// Solves `U(s) = u(s) + gamma * sum_{s'} P^{u(s)}(s, s') U(s')` for all states.
/// Returns the solution and the number of sweeps used.
pub fn usage_values(
    policy: &SubProblemPolicy,
    states: &StateSpace,
    trans: &TransitionModel,
    gamma: f64,
    start: Option<&[f64]>,
) -> Result<(Vec<f64>, usize)> {
    check_gamma(gamma)?;
    let n = states.len();
    if policy.action.len() != n {
        return Err(Error::InvalidArgument(format!(
            "policy has {} actions for {n} states",
            policy.action.len()
        )));
    }
    let p = trans.success_prob();
    let mut u = match start {
        Some(s) if s.len() == n => s.to_vec(),
        _ => vec![0.0; n],
    };
    let mut next = vec![0.0; n];
    let horizon_factor = gamma / (1.0 - gamma);
    let mut sweeps = 0;
    loop {
        let mut change = 0.0f64;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for id in 0..n {
            let idle = u[states.idle_next(id)];
            let v = if policy.action[id] {
                1.0 + gamma * (p * u[states.delivered_next(id)] + (1.0 - p) * idle)
            } else {
                gamma * idle
            };
            let d = v - u[id];
            change = change.max(d.abs());
            lo = lo.min(d);
            hi = hi.max(d);
            next[id] = v;
        }
        std::mem::swap(&mut u, &mut next);
        sweeps += 1;
        if gamma * change <= USAGE_TOL * (1.0 - gamma) {
            return Ok((u, sweeps));
        }
        if 0.5 * horizon_factor * (hi - lo) <= USAGE_TOL {
            let shift = 0.5 * horizon_factor * (hi + lo);
            u.iter_mut().for_each(|x| *x += shift);
            return Ok((u, sweeps));
        }
        if sweeps >= MAX_SWEEPS {
            return Err(Error::IterationCap(MAX_SWEEPS));
        }
    }
}
