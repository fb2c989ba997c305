mod common;

use std::sync::Arc;

use aoi_buffer::aoi::{enumerate_states, TransitionModel};
use aoi_buffer::dual::{dual_function, initial_state, sensor_problems};
use aoi_buffer::mdp::{discounted_usage, greedy_policy, value_iteration, SubProblemPolicy};
use aoi_buffer::source::{ArSourceModel, ErrorFunction, ErrorTable, GaussianArError};
use aoi_buffer::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Weighted;

impl ErrorFunction for Weighted {
    fn error(&self, ages: &[u32]) -> Result<f64> {
        Ok(ages
            .iter()
            .enumerate()
            .map(|(i, &d)| (d as f64).sqrt() / (i + 1) as f64)
            .sum())
    }
}

#[test]
fn value_iteration_matches_backward_induction() {
    let gauss =
        GaussianArError::new(ArSourceModel::fourth_order_example(0.5).unwrap(), 20).unwrap();
    for buffer in [1, 2] {
        for dmax in [3, 6, 9] {
            let states = enumerate_states(buffer, dmax).unwrap();
            for p in [0.3, 1.0] {
                let trans = TransitionModel::new(p, dmax).unwrap();
                for (name, f) in [
                    ("gauss", &gauss as &dyn ErrorFunction),
                    ("weighted", &Weighted),
                ] {
                    let errs: Vec<f64> = states
                        .states()
                        .iter()
                        .map(|s| f.error(s.as_slice()).unwrap())
                        .collect();
                    let table = ErrorTable::from_values(errs);
                    for gamma in [0.5, 0.9] {
                        for lambda in [0.0, 0.3, 1.0] {
                            let (v, q) =
                                value_iteration(&states, &trans, &table, lambda, gamma, 1e-9)
                                    .unwrap();
                            let oracle =
                                common::finite_horizon_q(buffer, dmax, p, lambda, gamma, &|a| {
                                    f.error(a).unwrap()
                                });
                            assert_eq!(oracle.len(), states.len());
                            let policy = greedy_policy(&q);
                            for (id, s) in states.states().iter().enumerate() {
                                let o = oracle[s.as_slice()];
                                let ctx = format!(
                                    "{name} b={buffer} D={dmax} p={p} g={gamma} l={lambda} s={s}"
                                );
                                assert!((v.values[id] - o[0].min(o[1])).abs() < 1e-6, "{ctx}");
                                if (o[0] - o[1]).abs() > 1e-5 {
                                    assert_eq!(policy.action[id], o[1] < o[0], "{ctx}");
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn transmissions_fall_as_the_price_rises() {
    let states = Arc::new(enumerate_states(2, 20).unwrap());
    let model = ArSourceModel::fourth_order_example(0.7).unwrap();
    let sensors = sensor_problems(&[model], &states).unwrap();
    let mut last_usage = f64::INFINITY;
    let mut last_value = f64::NEG_INFINITY;
    for i in 0..=15 {
        let lambda = 0.1 * i as f64;
        let ev = dual_function(lambda, &sensors, 1, 0.9, 1e-10).unwrap();
        let usage = ev.solutions[0].usage;
        let value = ev.solutions[0].value.values[states.initial_id()];
        assert!(usage <= last_usage + 1e-9, "usage rose at lambda={lambda}");
        assert!(value >= last_value - 1e-9, "value fell at lambda={lambda}");
        last_usage = usage;
        last_value = value;
    }
}

#[test]
fn discounted_usage_agrees_with_rollouts() {
    let (dmax, gamma, p) = (5u32, 0.9, 0.5);
    let states = enumerate_states(1, dmax).unwrap();
    let trans = TransitionModel::new(p, dmax).unwrap();
    let policy = SubProblemPolicy {
        action: states.states().iter().map(|s| s.head() >= 3).collect(),
    };
    let exact = discounted_usage(&policy, &states, &trans, &initial_state(&states), gamma).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 100_000;
    let horizon = (1e-10f64.ln() / gamma.ln()) as usize;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n {
        let mut age = vec![1u32];
        let mut total = 0.0;
        let mut disc = 1.0;
        for _ in 0..horizon {
            let send = age[0] >= 3;
            if send {
                total += disc;
            }
            let delivered = send && rng.random::<f64>() < p;
            age = common::step(&age, delivered, dmax);
            disc *= gamma;
        }
        sum += total;
        sum_sq += total * total;
    }
    let mean = sum / n as f64;
    let stderr = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();
    assert!(
        (mean - exact).abs() < 3.0 * stderr,
        "exact {exact}, rollouts {mean} ± {stderr}"
    );
}
