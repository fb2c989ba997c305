mod common;

use aoi_buffer::sim::{mgf_select, PolicyKind, SimConfig, Simulator};
use aoi_buffer::source::{mmse_error, yule_walker_autocovariance, ArSourceModel};
use proptest::prelude::*;

fn stable_ar2() -> impl Strategy<Value = ArSourceModel> {
    // AR(2) is stationary inside the triangle |a2| < 1, |a1| < 1 - a2.
    (-0.9f64..0.9, 0.1f64..3.0).prop_flat_map(|(a2, var)| {
        let bound = 0.95 * (1.0 - a2);
        (-bound..bound).prop_map(move |a1| ArSourceModel::new(vec![a1, a2], var, 0.5).unwrap())
    })
}

fn ages() -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(1u32..40, 1..5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn error_lies_between_noise_floor_and_variance(model in stable_ar2(), ages in ages()) {
        let table = yule_walker_autocovariance(&model, 40).unwrap();
        let e = mmse_error(&model, &table, &ages).unwrap();
        prop_assert!(e >= model.noise_var() * (1.0 - 1e-9));
        prop_assert!(e <= table.variance() * (1.0 + 1e-9));
    }

    #[test]
    fn extra_samples_never_hurt(model in stable_ar2(), ages in ages(), extra in 1u32..40) {
        let table = yule_walker_autocovariance(&model, 40).unwrap();
        let base = mmse_error(&model, &table, &ages).unwrap();
        let mut more = ages.clone();
        more.push(extra);
        let richer = mmse_error(&model, &table, &more).unwrap();
        prop_assert!(richer <= base + 1e-9 * base.max(1.0));
    }

    #[test]
    fn sample_order_is_irrelevant(model in stable_ar2(), ages in ages()) {
        let table = yule_walker_autocovariance(&model, 40).unwrap();
        let mut reversed = ages.clone();
        reversed.reverse();
        let a = mmse_error(&model, &table, &ages).unwrap();
        let b = mmse_error(&model, &table, &reversed).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.max(1.0));
    }

    #[test]
    fn mgf_matches_exhaustive_search(
        gains in prop::collection::vec(-1.0f64..1.0, 1..10),
        channels in 1usize..4,
        seed in any::<u64>(),
    ) {
        let heads: Vec<u32> = (0..gains.len()).map(|i| 1 + ((seed >> (i % 60)) % 7) as u32).collect();
        let picked = mgf_select(&gains, &heads, channels);
        let oracle = common::best_subset(&gains, &heads, channels);
        let total = |s: &[usize]| s.iter().map(|&i| gains[i]).sum::<f64>();
        prop_assert!(picked.len() <= channels);
        prop_assert!(picked.scheduled.iter().all(|&i| gains[i] >= 0.0));
        prop_assert!((total(&picked.scheduled) - total(&oracle)).abs() < 1e-12);
    }
}

fn sim_config(seed: u64, replications: usize) -> SimConfig {
    let model = ArSourceModel::fourth_order_example(0.6).unwrap();
    SimConfig {
        sensors: vec![model; 3],
        channels: 2,
        buffer: 2,
        gamma: 0.95,
        horizon: 400,
        replications,
        seed,
        delta_max: 30,
        warmup: None,
    }
}

fn trace(sim: &Simulator, policy: PolicyKind, rep: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut out = Vec::new();
    sim.run_traced(policy, None, rep, &mut |v| {
        out.push((v.decision.scheduled.clone(), v.state_ids.to_vec()));
    })
    .unwrap();
    out
}

#[test]
fn schedules_respect_the_channel_count_and_the_dynamics() {
    let sim = Simulator::new(sim_config(3, 2)).unwrap();
    let states = sim.states().clone();
    for policy in [
        PolicyKind::MaxAgeFirst,
        PolicyKind::RoundRobin,
        PolicyKind::RandomM,
        PolicyKind::NeverTransmit,
    ] {
        let t = trace(&sim, policy, 1);
        assert_eq!(t.len(), 400);
        for w in t.windows(2) {
            let (sched, before) = &w[0];
            let after = &w[1].1;
            assert!(sched.len() <= 2);
            for n in 0..3 {
                let s = states.state(before[n]).as_slice();
                let next = states.state(after[n]).as_slice().to_vec();
                let idle = common::step(s, false, 30);
                let sent = common::step(s, true, 30);
                if sched.contains(&n) {
                    assert!(next == idle || next == sent);
                } else {
                    assert_eq!(next, idle, "{policy:?} moved an idle sensor");
                }
            }
        }
    }
}

#[test]
fn replications_use_their_own_streams() {
    let few = Simulator::new(sim_config(9, 2)).unwrap();
    let many = Simulator::new(sim_config(9, 6)).unwrap();
    for policy in [PolicyKind::MaxAgeFirst, PolicyKind::RandomM] {
        assert_eq!(trace(&few, policy, 1), trace(&many, policy, 1));
        assert_ne!(trace(&few, policy, 0), trace(&few, policy, 1));
    }
}

#[test]
fn channel_outcomes_are_common_across_policies() {
    // Every policy that schedules all sensors every slot sees the same
    // deliveries, whatever it is called.
    let mut cfg = sim_config(5, 1);
    cfg.channels = 3;
    let sim = Simulator::new(cfg).unwrap();
    let maf = trace(&sim, PolicyKind::MaxAgeFirst, 0);
    let rr = trace(&sim, PolicyKind::RoundRobin, 0);
    let rand = trace(&sim, PolicyKind::RandomM, 0);
    let states = |t: &[(Vec<usize>, Vec<usize>)]| t.iter().map(|x| x.1.clone()).collect::<Vec<_>>();
    assert_eq!(states(&maf), states(&rr));
    assert_eq!(states(&maf), states(&rand));
}

#[test]
fn identical_seeds_give_identical_results() {
    let a = Simulator::new(sim_config(42, 4))
        .unwrap()
        .run(PolicyKind::RandomM, None)
        .unwrap();
    let b = Simulator::new(sim_config(42, 4))
        .unwrap()
        .run(PolicyKind::RandomM, None)
        .unwrap();
    assert_eq!(a, b);
    let c = Simulator::new(sim_config(43, 4))
        .unwrap()
        .run(PolicyKind::RandomM, None)
        .unwrap();
    assert_ne!(a.avg_error, c.avg_error);
}
