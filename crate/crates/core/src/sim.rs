//! Multi-sensor scheduling: the Maximum Gain First rule, simple baselines and
//! a slotted Monte-Carlo simulator.
//!
//! Channel outcomes come from one counter-like stream per (replication,
//! sensor) that is advanced once per slot whether or not the sensor is
//! scheduled, so every policy in a comparison sees the same channel
//! realisations.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::aoi::{enumerate_states, StateSpace};
use crate::dual::{sensor_problems, SensorProblem};
use crate::error::{Error, Result};
use crate::mdp::QTable;
use crate::source::{ArSourceModel, ErrorTable};

/// Sensors scheduled in one slot, in priority order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SchedulerDecision {
    pub scheduled: Vec<usize>,
}

impl SchedulerDecision {
    pub fn len(&self) -> usize {
        self.scheduled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scheduled.is_empty()
    }

    pub fn contains(&self, sensor: usize) -> bool {
        self.scheduled.contains(&sensor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    /// Maximum Gain First.
    Mgf,
    /// Largest head age first.
    MaxAgeFirst,
    RoundRobin,
    /// Uniformly random `min(M, N)` sensors.
    RandomM,
    NeverTransmit,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Mgf,
        PolicyKind::MaxAgeFirst,
        PolicyKind::RoundRobin,
        PolicyKind::RandomM,
        PolicyKind::NeverTransmit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Mgf => "mgf",
            PolicyKind::MaxAgeFirst => "maf",
            PolicyKind::RoundRobin => "rr",
            PolicyKind::RandomM => "rand",
            PolicyKind::NeverTransmit => "never",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = PolicyKind::ALL.iter().map(|p| p.name()).collect();
                Error::Config(format!(
                    "unknown policy '{s}'; valid names are {}",
                    names.join(", ")
                ))
            })
    }
}

/// Inputs of the MGF policy: the optimal multiplier and one Q-table per
/// sensor solved at that multiplier.
#[derive(Debug, Clone)]
pub struct MgfInput {
    pub lambda_star: f64,
    pub q_tables: Vec<QTable>,
}

/// Picks at most `channels` sensors with the largest non-negative gains.
/// Ties go to the larger head age, then to the lower index.
pub fn mgf_select(gains: &[f64], head_ages: &[u32], channels: usize) -> SchedulerDecision {
    debug_assert_eq!(gains.len(), head_ages.len());
    let mut candidates: Vec<usize> = (0..gains.len()).filter(|&n| gains[n] >= 0.0).collect();
    candidates.sort_by(|&a, &b| {
        gains[b]
            .total_cmp(&gains[a])
            .then(head_ages[b].cmp(&head_ages[a]))
            .then(a.cmp(&b))
    });
    candidates.truncate(channels);
    SchedulerDecision {
        scheduled: candidates,
    }
}

fn max_age_select(head_ages: &[u32], channels: usize) -> SchedulerDecision {
    let mut order: Vec<usize> = (0..head_ages.len()).collect();
    order.sort_by(|&a, &b| head_ages[b].cmp(&head_ages[a]).then(a.cmp(&b)));
    order.truncate(channels);
    SchedulerDecision { scheduled: order }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub sensors: Vec<ArSourceModel>,
    pub channels: usize,
    pub buffer: usize,
    /// Discount for the reported discounted error.
    pub gamma: f64,
    pub horizon: usize,
    pub replications: usize,
    pub seed: u64,
    pub delta_max: u32,
    /// Slots excluded from time averages; `None` means `10 * buffer`.
    pub warmup: Option<usize>,
}

impl SimConfig {
    pub fn warmup_slots(&self) -> usize {
        self.warmup.unwrap_or(10 * self.buffer)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sensors.is_empty() {
            return Err(Error::Config("at least one sensor is required".into()));
        }
        if self.channels == 0 {
            return Err(Error::Config("channels must be at least 1".into()));
        }
        if self.buffer == 0 {
            return Err(Error::Config("buffer must be at least 1".into()));
        }
        if (self.delta_max as usize) < self.buffer + 1 {
            return Err(Error::Config(format!(
                "delta_max {} must be at least buffer + 1",
                self.delta_max
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "gamma must lie in [0, 1) for the discounted formulation, got {}",
                self.gamma
            )));
        }
        if self.horizon == 0 || self.replications == 0 {
            return Err(Error::Config(
                "horizon and replications must be at least 1".into(),
            ));
        }
        if self.warmup_slots() >= self.horizon {
            return Err(Error::Config(format!(
                "warm-up of {} slots leaves nothing of a {}-slot horizon",
                self.warmup_slots(),
                self.horizon
            )));
        }
        Ok(())
    }
}

/// Replication-level aggregates of one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub policy: PolicyKind,
    pub replications: usize,
    /// Mean over post-warm-up slots and sensors of `err_n(state_n(t))`.
    pub avg_error: f64,
    pub avg_error_stderr: f64,
    /// `sum_t gamma^t sum_n err_n(state_n(t))` over the whole horizon.
    pub discounted_error: f64,
    pub discounted_error_stderr: f64,
    /// Fraction of post-warm-up slots in which each sensor was scheduled.
    pub sched_rates: Vec<f64>,
    /// Largest number of sensors scheduled in any slot.
    pub max_scheduled: usize,
}

impl SimResult {
    pub fn avg_error_ci95(&self) -> f64 {
        1.96 * self.avg_error_stderr
    }

    pub fn discounted_error_ci95(&self) -> f64 {
        1.96 * self.discounted_error_stderr
    }
}

#[derive(Debug, Clone)]
struct ReplicationStats {
    avg_error: f64,
    discounted_error: f64,
    sched_rates: Vec<f64>,
    max_scheduled: usize,
}

/// Splitmix64 finaliser.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn replication_rng(seed: u64, replication: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(replication as u64)));
    rng.set_stream(stream);
    rng
}

/// Per-slot observation handed to a trace callback.
pub struct SlotView<'a> {
    pub slot: usize,
    pub states: &'a StateSpace,
    pub state_ids: &'a [usize],
    pub decision: &'a SchedulerDecision,
}

/// A configured simulation environment: shared state space and one error
/// table per sensor.
pub struct Simulator {
    cfg: SimConfig,
    states: Arc<StateSpace>,
    errors: Vec<Arc<ErrorTable>>,
    success: Vec<f64>,
}

impl Simulator {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let states = Arc::new(enumerate_states(cfg.buffer, cfg.delta_max)?);
        let problems = sensor_problems(&cfg.sensors, &states)?;
        Self::from_problems(cfg, &problems)
    }

    /// Reuses already-built sub-problems (their state space must match `cfg`).
    pub fn from_problems(cfg: SimConfig, problems: &[SensorProblem]) -> Result<Self> {
        cfg.validate()?;
        if problems.len() != cfg.sensors.len() {
            return Err(Error::Config(format!(
                "{} problems for {} sensors",
                problems.len(),
                cfg.sensors.len()
            )));
        }
        let states = Arc::clone(problems[0].states());
        if states.buffer() != cfg.buffer || states.delta_max() != cfg.delta_max {
            return Err(Error::Config(
                "problem state space does not match the configuration".into(),
            ));
        }
        Ok(Self {
            errors: problems.iter().map(|p| Arc::clone(p.errors())).collect(),
            success: problems
                .iter()
                .map(|p| p.transitions().success_prob())
                .collect(),
            states,
            cfg,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn states(&self) -> &Arc<StateSpace> {
        &self.states
    }

    pub fn errors(&self, sensor: usize) -> &ErrorTable {
        &self.errors[sensor]
    }

    fn check_mgf(&self, policy: PolicyKind, mgf: Option<&MgfInput>) -> Result<()> {
        if policy != PolicyKind::Mgf {
            return Ok(());
        }
        let input = mgf.ok_or_else(|| {
            Error::Config("the mgf policy needs lambda_star and per-sensor Q-tables".into())
        })?;
        if input.q_tables.len() != self.cfg.sensors.len() {
            return Err(Error::Config(format!(
                "{} Q-tables for {} sensors",
                input.q_tables.len(),
                self.cfg.sensors.len()
            )));
        }
        for q in &input.q_tables {
            if q.len() != self.states.len() {
                return Err(Error::Config(
                    "Q-table does not match the state space".into(),
                ));
            }
            if q.lambda != input.lambda_star {
                return Err(Error::Config(format!(
                    "Q-table solved at lambda {} but lambda_star is {}",
                    q.lambda, input.lambda_star
                )));
            }
        }
        Ok(())
    }

    pub fn run(&self, policy: PolicyKind, mgf: Option<&MgfInput>) -> Result<SimResult> {
        self.check_mgf(policy, mgf)?;
        let reps: Vec<ReplicationStats> = (0..self.cfg.replications)
            .into_par_iter()
            .map(|r| self.replicate(policy, mgf, r, &mut |_| {}))
            .collect::<Result<_>>()?;
        Ok(aggregate(policy, &reps))
    }

    /// Runs one replication, calling `observe` once per slot after the
    /// scheduling decision.
    pub fn run_traced(
        &self,
        policy: PolicyKind,
        mgf: Option<&MgfInput>,
        replication: usize,
        observe: &mut dyn FnMut(&SlotView<'_>),
    ) -> Result<()> {
        self.check_mgf(policy, mgf)?;
        self.replicate(policy, mgf, replication, observe)
            .map(|_| ())
    }

    fn replicate(
        &self,
        policy: PolicyKind,
        mgf: Option<&MgfInput>,
        replication: usize,
        observe: &mut dyn FnMut(&SlotView<'_>),
    ) -> Result<ReplicationStats> {
        let cfg = &self.cfg;
        let n_sensors = cfg.sensors.len();
        let states = &*self.states;
        let warmup = cfg.warmup_slots();
        let counted = (cfg.horizon - warmup) as f64;

        let mut channel_rngs: Vec<ChaCha8Rng> = (0..n_sensors)
            .map(|n| replication_rng(cfg.seed, replication, n as u64))
            .collect();
        let mut policy_rng = replication_rng(cfg.seed, replication, u64::MAX);

        let mut ids = vec![states.initial_id(); n_sensors];
        let mut heads = vec![0u32; n_sensors];
        let mut gains = vec![0.0f64; n_sensors];
        let mut sched_counts = vec![0usize; n_sensors];
        let mut rr_next = 0usize;
        let mut err_sum = 0.0;
        let mut discounted = 0.0;
        let mut discount = 1.0;
        let mut max_scheduled = 0usize;
        let mut scheduled = vec![false; n_sensors];

        for t in 0..cfg.horizon {
            let slot_err: f64 = (0..n_sensors).map(|n| self.errors[n].get(ids[n])).sum();
            discounted += discount * slot_err;
            discount *= cfg.gamma;
            if t >= warmup {
                err_sum += slot_err;
            }
            for n in 0..n_sensors {
                heads[n] = states.state(ids[n]).head();
            }

            let decision = match policy {
                PolicyKind::Mgf => {
                    let tables = &mgf.expect("checked").q_tables;
                    for n in 0..n_sensors {
                        gains[n] = tables[n].gain_at(ids[n]);
                    }
                    mgf_select(&gains, &heads, cfg.channels)
                }
                PolicyKind::MaxAgeFirst => max_age_select(&heads, cfg.channels),
                PolicyKind::RoundRobin => {
                    let k = cfg.channels.min(n_sensors);
                    let picked = (0..k).map(|i| (rr_next + i) % n_sensors).collect();
                    rr_next = (rr_next + k) % n_sensors;
                    SchedulerDecision { scheduled: picked }
                }
                PolicyKind::RandomM => {
                    let k = cfg.channels.min(n_sensors);
                    let picked = rand::seq::index::sample(&mut policy_rng, n_sensors, k).into_vec();
                    SchedulerDecision { scheduled: picked }
                }
                PolicyKind::NeverTransmit => SchedulerDecision::default(),
            };

            if decision.len() > cfg.channels {
                return Err(Error::Internal(format!(
                    "{} sensors scheduled on {} channels at slot {t}",
                    decision.len(),
                    cfg.channels
                )));
            }
            max_scheduled = max_scheduled.max(decision.len());
            observe(&SlotView {
                slot: t,
                states,
                state_ids: &ids,
                decision: &decision,
            });

            scheduled.iter_mut().for_each(|s| *s = false);
            for &n in &decision.scheduled {
                scheduled[n] = true;
                if t >= warmup {
                    sched_counts[n] += 1;
                }
            }
            for n in 0..n_sensors {
                let draw: f64 = channel_rngs[n].random();
                let delivered = scheduled[n] && draw < self.success[n];
                ids[n] = if delivered {
                    states.delivered_next(ids[n])
                } else {
                    states.idle_next(ids[n])
                };
            }
        }

        Ok(ReplicationStats {
            avg_error: err_sum / (counted * n_sensors as f64),
            discounted_error: discounted,
            sched_rates: sched_counts.iter().map(|&c| c as f64 / counted).collect(),
            max_scheduled,
        })
    }
}

fn mean_stderr(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let first = xs.clone().next().unwrap_or(f64::NAN);
    if n < 2.0 || xs.clone().all(|x| x == first) {
        return (first, 0.0);
    }
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn aggregate(policy: PolicyKind, reps: &[ReplicationStats]) -> SimResult {
    let (avg_error, avg_error_stderr) = mean_stderr(reps.iter().map(|r| r.avg_error));
    let (discounted_error, discounted_error_stderr) =
        mean_stderr(reps.iter().map(|r| r.discounted_error));
    let n_sensors = reps[0].sched_rates.len();
    let sched_rates = (0..n_sensors)
        .map(|n| reps.iter().map(|r| r.sched_rates[n]).sum::<f64>() / reps.len() as f64)
        .collect();
    SimResult {
        policy,
        replications: reps.len(),
        avg_error,
        avg_error_stderr,
        discounted_error,
        discounted_error_stderr,
        sched_rates,
        max_scheduled: reps.iter().map(|r| r.max_scheduled).max().unwrap_or(0),
    }
}

/// Convenience wrapper building a fresh [`Simulator`].
pub fn simulate(
    cfg: &SimConfig,
    policy: PolicyKind,
    lambda_star: Option<f64>,
    q_tables: Option<&[QTable]>,
) -> Result<SimResult> {
    let mgf = match (lambda_star, q_tables) {
        (Some(lambda_star), Some(q)) => Some(MgfInput {
            lambda_star,
            q_tables: q.to_vec(),
        }),
        _ => None,
    };
    Simulator::new(cfg.clone())?.run(policy, mgf.as_ref())
}

/// Runs every policy on the same channel realisations.
pub fn evaluate_policy_suite(
    cfg: &SimConfig,
    policies: &[PolicyKind],
    mgf: Option<&MgfInput>,
) -> Result<Vec<SimResult>> {
    let sim = Simulator::new(cfg.clone())?;
    policies.iter().map(|&p| sim.run(p, mgf)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ar1(a: f64, p: f64) -> ArSourceModel {
        ArSourceModel::new(vec![a], 1.0, p).unwrap()
    }

    fn cfg(sensors: Vec<ArSourceModel>, buffer: usize, delta_max: u32) -> SimConfig {
        SimConfig {
            sensors,
            channels: 1,
            buffer,
            gamma: 0.9,
            horizon: 400,
            replications: 3,
            seed: 7,
            delta_max,
            warmup: None,
        }
    }

    #[test]
    fn mgf_select_examples() {
        assert_eq!(mgf_select(&[0.5, -0.2], &[1, 1], 1).scheduled, vec![0]);
        assert!(mgf_select(&[-0.1, -0.2], &[1, 1], 2).is_empty());
        assert_eq!(
            mgf_select(&[0.5, 0.7, 0.7], &[3, 2, 9], 2).scheduled,
            vec![2, 1]
        );
        // zero gain is eligible; equal gain and age falls back to the index
        assert_eq!(mgf_select(&[0.0, 0.0], &[4, 4], 1).scheduled, vec![0]);
    }

    #[test]
    fn policy_names_round_trip() {
        for p in PolicyKind::ALL {
            assert_eq!(p.name().parse::<PolicyKind>().unwrap(), p);
        }
        let err = "greedy".parse::<PolicyKind>().unwrap_err().to_string();
        assert!(err.contains("mgf, maf, rr, rand, never"), "{err}");
    }

    #[test]
    fn always_transmit_on_a_perfect_channel_stays_fresh() {
        // one sensor, one channel: max-age-first always schedules it
        let c = cfg(vec![ar1(0.5, 1.0)], 2, 10);
        let sim = Simulator::new(c).unwrap();
        let fresh = sim.states().id_of_ages(&[1, 2]).unwrap();
        let r = sim.run(PolicyKind::MaxAgeFirst, None).unwrap();
        assert!((r.avg_error - sim.errors(0).get(fresh)).abs() < 1e-12);
        sim.run_traced(PolicyKind::MaxAgeFirst, None, 0, &mut |v| {
            assert_eq!(v.state_ids[0], fresh);
        })
        .unwrap();
    }

    #[test]
    fn never_transmit_saturates() {
        let mut c = cfg(vec![ar1(0.9, 0.5)], 2, 10);
        c.warmup = Some(20);
        let sim = Simulator::new(c).unwrap();
        let sat = sim.states().id_of_ages(&[10, 10]).unwrap();
        let r = sim.run(PolicyKind::NeverTransmit, None).unwrap();
        assert!((r.avg_error - sim.errors(0).get(sat)).abs() < 1e-12);
        assert_eq!(r.sched_rates, vec![0.0]);
        assert_eq!(r.avg_error_stderr, 0.0);
    }

    #[test]
    fn round_robin_alternates() {
        let c = cfg(vec![ar1(0.5, 1.0), ar1(0.5, 1.0)], 1, 5);
        let sim = Simulator::new(c).unwrap();
        let e1 = sim.errors(0).get(sim.states().id_of_ages(&[1]).unwrap());
        let e2 = sim.errors(0).get(sim.states().id_of_ages(&[2]).unwrap());
        let r = sim.run(PolicyKind::RoundRobin, None).unwrap();
        assert!(
            (r.avg_error - 0.5 * (e1 + e2)).abs() < 1e-12,
            "{}",
            r.avg_error
        );
        assert_eq!(r.sched_rates, vec![0.5, 0.5]);
    }

    #[test]
    fn mgf_requires_tables() {
        let c = cfg(vec![ar1(0.5, 1.0)], 1, 5);
        assert!(matches!(
            simulate(&c, PolicyKind::Mgf, None, None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(vec![ar1(0.5, 1.0)], 1, 5);
        c.warmup = Some(400);
        assert!(c.validate().is_err());
        let mut c = cfg(vec![ar1(0.5, 1.0)], 1, 5);
        c.channels = 0;
        assert!(c.validate().is_err());
        let mut c = cfg(vec![ar1(0.5, 1.0)], 1, 5);
        c.gamma = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn results_are_reproducible_and_feasible() {
        let c = cfg(vec![ar1(0.8, 0.6), ar1(0.3, 0.9), ar1(0.5, 0.4)], 2, 12);
        let a = evaluate_policy_suite(&c, &[PolicyKind::RandomM, PolicyKind::RoundRobin], None)
            .unwrap();
        let b = evaluate_policy_suite(&c, &[PolicyKind::RandomM, PolicyKind::RoundRobin], None)
            .unwrap();
        assert_eq!(a, b);
        for r in &a {
            assert!(r.max_scheduled <= 1);
            assert!(r.sched_rates.iter().sum::<f64>() <= 1.0 + 1e-12);
        }
    }
}
