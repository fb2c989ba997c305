//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::collections::{HashMap, VecDeque};

/// Stationary error of an AR(1) source observed `delta` slots ago.
pub fn ar1_error(a: f64, noise_var: f64, delta: u32) -> f64 {
    noise_var * (1.0 - a.powi(2 * delta as i32)) / (1.0 - a * a)
}

/// Buffer dynamics written out directly on age lists.
pub fn step(ages: &[u32], delivered: bool, dmax: u32) -> Vec<u32> {
    let aged = |d: u32| (d + 1).min(dmax);
    if delivered {
        std::iter::once(1)
            .chain(ages[..ages.len() - 1].iter().map(|&d| aged(d)))
            .collect()
    } else {
        ages.iter().map(|&d| aged(d)).collect()
    }
}

/// Every age list reachable from `(1, 2, ..., b)`.
pub fn reachable(buffer: usize, dmax: u32) -> Vec<Vec<u32>> {
    let start: Vec<u32> = (1..=buffer as u32).map(|d| d.min(dmax)).collect();
    let mut seen = HashMap::new();
    let mut queue = VecDeque::from([start.clone()]);
    seen.insert(start, ());
    let mut out = Vec::new();
    while let Some(s) = queue.pop_front() {
        for delivered in [false, true] {
            let t = step(&s, delivered, dmax);
            if seen.insert(t.clone(), ()).is_none() {
                queue.push_back(t);
            }
        }
        out.push(s);
    }
    out
}

/// Finite-horizon backward induction keyed by age lists, run until
/// `gamma^T < 1e-12`. Returns `[Q(s, idle), Q(s, transmit)]` per state.
pub fn finite_horizon_q(
    buffer: usize,
    dmax: u32,
    p: f64,
    lambda: f64,
    gamma: f64,
    err: &dyn Fn(&[u32]) -> f64,
) -> HashMap<Vec<u32>, [f64; 2]> {
    let states = reachable(buffer, dmax);
    let horizon = if gamma == 0.0 {
        1
    } else {
        (1e-12f64.ln() / gamma.ln()).ceil() as usize + 1
    };
    let mut v: HashMap<Vec<u32>, f64> = states.iter().map(|s| (s.clone(), 0.0)).collect();
    let mut q = HashMap::new();
    for _ in 0..horizon {
        q.clear();
        for s in &states {
            let e = err(s);
            let idle = v[&step(s, false, dmax)];
            let sent = v[&step(s, true, dmax)];
            q.insert(
                s.clone(),
                [
                    e + gamma * idle,
                    e + lambda + gamma * (p * sent + (1.0 - p) * idle),
                ],
            );
        }
        v = q
            .iter()
            .map(|(s, qs)| (s.clone(), qs[0].min(qs[1])))
            .collect();
    }
    q
}

/// Exhaustive search over subsets of at most `channels` sensors with
/// non-negative gains, maximising total gain; ties by summed head age, then
/// lexicographically smallest index list.
pub fn best_subset(gains: &[f64], heads: &[u32], channels: usize) -> Vec<usize> {
    let n = gains.len();
    let mut best: Option<(f64, u64, Vec<usize>)> = None;
    for mask in 0u32..(1 << n) {
        let idx: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        if idx.len() > channels || idx.iter().any(|&i| gains[i] < 0.0) {
            continue;
        }
        let total: f64 = idx.iter().map(|&i| gains[i]).sum();
        let age: u64 = idx.iter().map(|&i| heads[i] as u64).sum();
        let better = match &best {
            None => true,
            Some((bt, ba, bi)) => {
                total > *bt || (total == *bt && (age > *ba || (age == *ba && idx.len() > bi.len())))
            }
        };
        if better {
            best = Some((total, age, idx));
        }
    }
    best.map(|b| b.2).unwrap_or_default()
}
