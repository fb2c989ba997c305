//! Lagrangian dual of the relaxed multi-sensor problem.
//!
//! Pricing channel use at `lambda` per transmission decouples the sensors:
//!
//! ```text
//! q(lambda) = sum_n V_{n,lambda}(s0) - lambda * M / (1 - gamma)
//! ```
//!
//! `q` is concave and piecewise linear; a supergradient at `lambda` is the
//! total expected discounted usage of the per-sensor optimal policies minus
//! the budget `M / (1 - gamma)`.

use std::sync::Arc;

use serde::Serialize;

use crate::aoi::{AgeVector, StateSpace, TransitionModel};
use crate::error::{Error, Result};
use crate::mdp::{
    greedy_policy, usage_values, value_iteration_from, QTable, SubProblemPolicy, ValueFunction,
};
use crate::source::{build_error_table, ArSourceModel, ErrorTable};

/// Default value-iteration tolerance for dual evaluations.
pub const DEFAULT_VI_TOL: f64 = 1e-9;

/// One sensor's sub-problem: its buffer state space, channel and error table.
#[derive(Debug, Clone)]
pub struct SensorProblem {
    states: Arc<StateSpace>,
    transitions: TransitionModel,
    errors: Arc<ErrorTable>,
}

impl SensorProblem {
    pub fn new(model: &ArSourceModel, states: Arc<StateSpace>) -> Result<Self> {
        let errors = build_error_table(model, &states)?;
        let transitions = TransitionModel::new(model.success_prob(), states.delta_max())?;
        Ok(Self {
            states,
            transitions,
            errors: Arc::new(errors),
        })
    }

    /// Assembles a problem from parts, e.g. a custom error function or a dead
    /// channel.
    pub fn from_parts(
        states: Arc<StateSpace>,
        transitions: TransitionModel,
        errors: Arc<ErrorTable>,
    ) -> Result<Self> {
        if errors.len() != states.len() {
            return Err(Error::InvalidArgument(format!(
                "error table has {} entries for {} states",
                errors.len(),
                states.len()
            )));
        }
        Ok(Self {
            states,
            transitions,
            errors,
        })
    }

    pub fn states(&self) -> &Arc<StateSpace> {
        &self.states
    }

    pub fn transitions(&self) -> &TransitionModel {
        &self.transitions
    }

    pub fn errors(&self) -> &Arc<ErrorTable> {
        &self.errors
    }

    fn same_as(&self, other: &SensorProblem) -> bool {
        Arc::ptr_eq(&self.states, &other.states)
            && self.transitions == other.transitions
            && (Arc::ptr_eq(&self.errors, &other.errors) || self.errors == other.errors)
    }
}

/// Solution of one sub-problem at a given price.
#[derive(Debug, Clone)]
pub struct SensorSolution {
    pub value: ValueFunction,
    pub q: QTable,
    pub policy: SubProblemPolicy,
    /// Expected discounted usage from the initial state.
    pub usage: f64,
}

#[derive(Debug, Clone)]
pub struct DualEvaluation {
    pub lambda: f64,
    pub value: f64,
    pub subgradient: f64,
    /// One solution per sensor, in input order.
    pub solutions: Vec<SensorSolution>,
}

impl DualEvaluation {
    pub fn total_usage(&self) -> f64 {
        self.solutions.iter().map(|s| s.usage).sum()
    }
}

/// Evaluates `q(lambda)` repeatedly, solving identical sensors once and
/// warm-starting each solve from the previous one.
pub struct DualEvaluator<'a> {
    sensors: &'a [SensorProblem],
    representative: Vec<usize>,
    channels: usize,
    gamma: f64,
    vi_tol: f64,
    warm_values: Vec<Option<Vec<f64>>>,
    warm_usage: Vec<Option<Vec<f64>>>,
}

impl<'a> DualEvaluator<'a> {
    pub fn new(
        sensors: &'a [SensorProblem],
        channels: usize,
        gamma: f64,
        vi_tol: f64,
    ) -> Result<Self> {
        if sensors.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one sensor is required".into(),
            ));
        }
        if channels == 0 {
            return Err(Error::InvalidArgument(
                "channel count must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!(
                "discount factor must lie in [0, 1) for the discounted formulation, got {gamma}"
            )));
        }
        let representative = (0..sensors.len())
            .map(|i| {
                (0..i)
                    .find(|&j| sensors[j].same_as(&sensors[i]))
                    .unwrap_or(i)
            })
            .collect();
        Ok(Self {
            sensors,
            representative,
            channels,
            gamma,
            vi_tol,
            warm_values: vec![None; sensors.len()],
            warm_usage: vec![None; sensors.len()],
        })
    }

    pub fn budget(&self) -> f64 {
        self.channels as f64 / (1.0 - self.gamma)
    }

    fn solve_sensor(&mut self, i: usize, lambda: f64) -> Result<SensorSolution> {
        let sensor = &self.sensors[i];
        let (value, q) = value_iteration_from(
            &sensor.states,
            &sensor.transitions,
            &sensor.errors,
            lambda,
            self.gamma,
            self.vi_tol,
            self.warm_values[i].as_deref(),
        )?;
        let policy = greedy_policy(&q);
        let (usage_all, _) = usage_values(
            &policy,
            &sensor.states,
            &sensor.transitions,
            self.gamma,
            self.warm_usage[i].as_deref(),
        )?;
        let usage = usage_all[sensor.states.initial_id()];
        self.warm_values[i] = Some(value.values.clone());
        self.warm_usage[i] = Some(usage_all);
        Ok(SensorSolution {
            value,
            q,
            policy,
            usage,
        })
    }

    pub fn evaluate(&mut self, lambda: f64) -> Result<DualEvaluation> {
        let mut solutions: Vec<SensorSolution> = Vec::with_capacity(self.sensors.len());
        for i in 0..self.sensors.len() {
            let rep = self.representative[i];
            let sol = if rep == i {
                self.solve_sensor(i, lambda)?
            } else {
                solutions[rep].clone()
            };
            solutions.push(sol);
        }
        let init = self.sensors[0].states.initial_id();
        let budget = self.budget();
        let value = solutions.iter().map(|s| s.value.at(init)).sum::<f64>() - lambda * budget;
        let subgradient = solutions.iter().map(|s| s.usage).sum::<f64>() - budget;
        Ok(DualEvaluation {
            lambda,
            value,
            subgradient,
            solutions,
        })
    }
}

/// `(q(lambda), supergradient)` for one price.
pub fn dual_function(
    lambda: f64,
    sensors: &[SensorProblem],
    channels: usize,
    gamma: f64,
    vi_tol: f64,
) -> Result<DualEvaluation> {
    DualEvaluator::new(sensors, channels, gamma, vi_tol)?.evaluate(lambda)
}

/// Price above which no sensor ever transmits: a transmission can save at
/// most `gamma * max err / (1 - gamma)`.
pub fn lambda_upper_bound(sensors: &[SensorProblem], gamma: f64) -> f64 {
    let max_err = sensors.iter().map(|s| s.errors.max()).fold(0.0, f64::max);
    gamma * max_err / (1.0 - gamma) + 1.0
}

#[derive(Debug, Clone, Serialize)]
pub struct DualConfig {
    /// Step-size constant; iteration `k` moves by `beta / k` times the supergradient.
    pub beta: f64,
    pub max_iter: usize,
    /// Stop once `|supergradient|` falls to this level. `None` selects
    /// `1e-3 * M / (1 - gamma)`.
    pub residual_tol: Option<f64>,
    pub lambda_init: f64,
    pub vi_tol: f64,
}

impl Default for DualConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            max_iter: 500,
            residual_tol: None,
            lambda_init: 0.0,
            vi_tol: DEFAULT_VI_TOL,
        }
    }
}

impl DualConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if let Some(t) = self.residual_tol {
            if !(t > 0.0) {
                return Err(Error::Config(format!(
                    "residual_tol must be positive, got {t}"
                )));
            }
        }
        if !(self.lambda_init >= 0.0 && self.lambda_init.is_finite()) {
            return Err(Error::Config(format!(
                "lambda_init must be >= 0, got {}",
                self.lambda_init
            )));
        }
        if !(self.vi_tol > 0.0) {
            return Err(Error::Config(format!(
                "vi_tol must be positive, got {}",
                self.vi_tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// `|supergradient| <= residual_tol`.
    Residual,
    /// `lambda = 0` and the budget is not exceeded.
    Slack,
    /// `max_iter` iterations were spent.
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct DualIterate {
    pub k: usize,
    pub lambda: f64,
    pub subgradient: f64,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct DualSolveReport {
    pub lambda_star: f64,
    pub iterates: Vec<DualIterate>,
    pub stop: StopReason,
    pub budget: f64,
    pub final_usage: f64,
    /// Per-sensor solutions at `lambda_star`, in input order.
    pub solutions: Vec<SensorSolution>,
}

impl DualSolveReport {
    pub fn q_tables(&self) -> Vec<QTable> {
        self.solutions.iter().map(|s| s.q.clone()).collect()
    }

    /// `{"lambda_star", "budget", "final_usage", "iterates": [[k, lambda, subgrad], ...]}`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "lambda_star": self.lambda_star,
            "budget": self.budget,
            "final_usage": self.final_usage,
            "iterates": self
                .iterates
                .iter()
                .map(|it| serde_json::json!([it.k, it.lambda, it.subgradient]))
                .collect::<Vec<_>>(),
        })
    }
}

/// Projected supergradient ascent
/// `lambda(k+1) = max(0, lambda(k) + beta / k * g(lambda(k)))`.
///
/// Stops at the first iterate satisfying `|g| <= residual_tol` or
/// `lambda = 0, g <= 0`. When `max_iter` runs out the iterate with the
/// largest dual value is returned.
pub fn dual_ascent(
    sensors: &[SensorProblem],
    channels: usize,
    gamma: f64,
    cfg: &DualConfig,
) -> Result<DualSolveReport> {
    cfg.validate()?;
    let mut eval = DualEvaluator::new(sensors, channels, gamma, cfg.vi_tol)?;
    let budget = eval.budget();
    let residual_tol = cfg.residual_tol.unwrap_or(1e-3 * budget);

    let mut lambda = cfg.lambda_init;
    let mut iterates: Vec<DualIterate> = Vec::new();
    let mut best: Option<DualEvaluation> = None;
    let mut stop = StopReason::IterationLimit;
    let mut chosen: Option<DualEvaluation> = None;

    for k in 1..=cfg.max_iter {
        let ev = eval.evaluate(lambda)?;
        let g = ev.subgradient;
        iterates.push(DualIterate {
            k,
            lambda,
            subgradient: g,
            value: ev.value,
        });
        if !g.is_finite() || !ev.value.is_finite() {
            return Err(Error::DualAborted {
                iteration: k,
                reason: format!("non-finite supergradient {g} at lambda {lambda}"),
                trace: format_trace(&iterates),
            });
        }
        log::debug!("dual iterate {k}: lambda={lambda} q={} g={g}", ev.value);
        if g.abs() <= residual_tol {
            stop = StopReason::Residual;
            chosen = Some(ev);
            break;
        }
        if lambda == 0.0 && g <= 0.0 {
            stop = StopReason::Slack;
            chosen = Some(ev);
            break;
        }
        lambda = (lambda + cfg.beta / k as f64 * g).max(0.0);
        if best.as_ref().is_none_or(|b| ev.value > b.value) {
            best = Some(ev);
        }
    }

    let at_star = match chosen {
        Some(ev) => ev,
        None => best.ok_or_else(|| Error::Internal("dual ascent produced no iterate".into()))?,
    };
    Ok(DualSolveReport {
        lambda_star: at_star.lambda,
        iterates,
        stop,
        budget,
        final_usage: at_star.total_usage(),
        solutions: at_star.solutions,
    })
}

fn format_trace(iterates: &[DualIterate]) -> String {
    iterates
        .iter()
        .map(|it| format!("[{}, {}, {}]", it.k, it.lambda, it.subgradient))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Golden-section maximisation of the concave dual on `[lo, hi]`, using dual
/// values only. Returns the midpoint of the final bracket.
pub fn golden_section_lambda(
    sensors: &[SensorProblem],
    channels: usize,
    gamma: f64,
    lo: f64,
    hi: f64,
    xtol: f64,
    vi_tol: f64,
) -> Result<f64> {
    if !(lo >= 0.0 && hi > lo && xtol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "bad golden-section bracket [{lo}, {hi}] with tolerance {xtol}"
        )));
    }
    let mut eval = DualEvaluator::new(sensors, channels, gamma, vi_tol)?;
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut qc = eval.evaluate(c)?.value;
    let mut qd = eval.evaluate(d)?.value;
    while b - a > xtol {
        if qc >= qd {
            b = d;
            d = c;
            qd = qc;
            c = b - inv_phi * (b - a);
            qc = eval.evaluate(c)?.value;
        } else {
            a = c;
            c = d;
            qc = qd;
            d = a + inv_phi * (b - a);
            qd = eval.evaluate(d)?.value;
        }
    }
    Ok(0.5 * (a + b))
}

/// Builds identical-model problems sharing one state space.
pub fn sensor_problems(
    models: &[ArSourceModel],
    states: &Arc<StateSpace>,
) -> Result<Vec<SensorProblem>> {
    let mut out: Vec<SensorProblem> = Vec::with_capacity(models.len());
    for (i, m) in models.iter().enumerate() {
        match models[..i].iter().position(|other| other == m) {
            Some(j) => out.push(out[j].clone()),
            None => out.push(SensorProblem::new(m, Arc::clone(states))?),
        }
    }
    Ok(out)
}

/// Initial state used for usage and value evaluation.
pub fn initial_state(states: &StateSpace) -> AgeVector {
    states.state(states.initial_id()).clone()
}
