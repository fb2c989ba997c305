//! Experiment pipelines behind the command-line tool: configuration, the
//! `error-curve`, `solve`, `simulate` and `sweep` commands, and their CSV/JSON
//! artifacts.
//!
//! Every CSV has a header row and prints numbers with at most 12 significant
//! digits using `.` as the decimal separator.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aoi::{enumerate_states, StateSpace};
use crate::dual::{
    dual_ascent, sensor_problems, DualConfig, DualEvaluator, DualSolveReport, DEFAULT_VI_TOL,
};
use crate::error::{Error, Result};
use crate::sim::{mix64, MgfInput, PolicyKind, SimConfig, SimResult, Simulator};
use crate::source::{mmse_error, yule_walker_autocovariance, ArSourceModel};

fn default_channels() -> usize {
    1
}
fn default_buffer() -> usize {
    2
}
fn default_gamma() -> f64 {
    0.99
}
fn default_delta_max() -> u32 {
    100
}
fn default_horizon() -> usize {
    100_000
}
fn default_replications() -> usize {
    10
}
fn default_seed() -> u64 {
    1
}
fn default_vi_tol() -> f64 {
    DEFAULT_VI_TOL
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Dual-ascent knobs as they appear in the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DualSection {
    pub beta: f64,
    pub max_iter: usize,
    pub residual_tol: Option<f64>,
    pub lambda_init: f64,
}

impl Default for DualSection {
    fn default() -> Self {
        let d = DualConfig::default();
        Self {
            beta: d.beta,
            max_iter: d.max_iter,
            residual_tol: d.residual_tol,
            lambda_init: d.lambda_init,
        }
    }
}

/// Full experiment configuration. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sensors: Vec<ArSourceModel>,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_buffer")]
    pub buffer: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_delta_max")]
    pub delta_max: u32,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Slots excluded from time averages; defaults to `10 * buffer`.
    #[serde(default)]
    pub warmup: Option<usize>,
    #[serde(default = "default_vi_tol")]
    pub vi_tol: f64,
    #[serde(default)]
    pub dual: DualSection,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// Two fourth-order sources sharing one channel.
    pub fn two_sensor_example(success_prob: f64) -> Result<Self> {
        let m = ArSourceModel::fourth_order_example(success_prob)?;
        Ok(Self {
            sensors: vec![m.clone(), m],
            channels: default_channels(),
            buffer: default_buffer(),
            gamma: default_gamma(),
            delta_max: default_delta_max(),
            horizon: default_horizon(),
            replications: default_replications(),
            seed: default_seed(),
            warmup: None,
            vi_tol: default_vi_tol(),
            dual: DualSection::default(),
            out_dir: default_out_dir(),
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serialises")
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            sensors: self.sensors.clone(),
            channels: self.channels,
            buffer: self.buffer,
            gamma: self.gamma,
            horizon: self.horizon,
            replications: self.replications,
            seed: self.seed,
            delta_max: self.delta_max,
            warmup: self.warmup,
        }
    }

    pub fn dual_config(&self) -> DualConfig {
        DualConfig {
            beta: self.dual.beta,
            max_iter: self.dual.max_iter,
            residual_tol: self.dual.residual_tol,
            lambda_init: self.dual.lambda_init,
            vi_tol: self.vi_tol,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sim_config().validate()?;
        self.dual_config().validate()
    }

    /// Hash of everything the dual solution depends on.
    pub fn solve_fingerprint(&self) -> String {
        let key = serde_json::json!({
            "sensors": self.sensors,
            "channels": self.channels,
            "buffer": self.buffer,
            "gamma": self.gamma,
            "delta_max": self.delta_max,
            "vi_tol": self.vi_tol,
            "dual": self.dual,
        });
        let digest = Sha256::digest(key.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Formats like C's `%.12g`: 12 significant digits, trailing zeros trimmed,
/// scientific notation outside `[1e-5, 1e12)`.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{:.11e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        let fixed = format!("{:.*}", decimals, x);
        trim_zeros(&fixed)
    } else {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

/// Writes through a temporary file in the same directory and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

// ---------------------------------------------------------------- error-curve

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCurveRow {
    pub buffer: usize,
    pub delta_1: u32,
    pub error: f64,
}

/// Error against the freshest age. Always includes the single-packet curve
/// over `1..=delta_max`; for `buffer >= 2` also the curve with the older ages
/// pinned to `fixed_ages`, over every admissible `delta_1`.
pub fn error_curve(
    model: &ArSourceModel,
    buffer: usize,
    delta_max: u32,
    fixed_ages: &[u32],
) -> Result<Vec<ErrorCurveRow>> {
    if buffer == 0 || delta_max == 0 {
        return Err(Error::InvalidArgument(
            "buffer and delta_max must be positive".into(),
        ));
    }
    if fixed_ages.len() != buffer - 1 {
        return Err(Error::InvalidArgument(format!(
            "buffer {buffer} needs exactly {} fixed ages, got {}",
            buffer - 1,
            fixed_ages.len()
        )));
    }
    for w in fixed_ages.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::InvalidArgument(format!(
                "fixed ages {fixed_ages:?} must be strictly increasing"
            )));
        }
    }
    if let Some(&first) = fixed_ages.first() {
        if first < 2 || *fixed_ages.last().unwrap() > delta_max {
            return Err(Error::InvalidArgument(format!(
                "fixed ages {fixed_ages:?} must lie in 2..={delta_max}"
            )));
        }
    }
    let table = yule_walker_autocovariance(model, (delta_max as usize).max(model.order()))?;
    let mut rows = Vec::new();
    for d in 1..=delta_max {
        rows.push(ErrorCurveRow {
            buffer: 1,
            delta_1: d,
            error: mmse_error(model, &table, &[d])?,
        });
    }
    if let Some(&first) = fixed_ages.first() {
        for d in 1..first {
            let mut ages = vec![d];
            ages.extend_from_slice(fixed_ages);
            rows.push(ErrorCurveRow {
                buffer,
                delta_1: d,
                error: mmse_error(model, &table, &ages)?,
            });
        }
    }
    Ok(rows)
}

pub fn error_curve_csv(rows: &[ErrorCurveRow]) -> String {
    let mut out = String::from("buffer,delta_1,error\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{}\n",
            r.buffer,
            r.delta_1,
            fmt_num(r.error)
        ));
    }
    out
}

// ---------------------------------------------------------------------- solve

pub struct SolveOutcome {
    pub states: Arc<StateSpace>,
    pub report: DualSolveReport,
}

pub fn solve(cfg: &ExperimentConfig) -> Result<SolveOutcome> {
    cfg.validate()?;
    let states = Arc::new(enumerate_states(cfg.buffer, cfg.delta_max)?);
    let problems = sensor_problems(&cfg.sensors, &states)?;
    let report = dual_ascent(&problems, cfg.channels, cfg.gamma, &cfg.dual_config())?;
    Ok(SolveOutcome { states, report })
}

/// `state_id,err,V,Q0,Q1,gain` for one sensor.
pub fn sensor_dump_csv(outcome: &SolveOutcome, sensor: usize, errors: &[f64]) -> String {
    let sol = &outcome.report.solutions[sensor];
    let mut out = String::from("state_id,err,V,Q0,Q1,gain\n");
    for (id, err) in errors.iter().enumerate().take(outcome.states.len()) {
        let [q0, q1] = sol.q.q[id];
        out.push_str(&format!(
            "{id},{},{},{},{},{}\n",
            fmt_num(*err),
            fmt_num(sol.value.at(id)),
            fmt_num(q0),
            fmt_num(q1),
            fmt_num(q0 - q1)
        ));
    }
    out
}

pub const SOLVE_REPORT_FILE: &str = "solve_report.json";
const FINGERPRINT_FILE: &str = "solve_report.fingerprint";

/// Runs the dual solve and writes the report, per-sensor dumps and the state
/// legend into `out_dir`.
pub fn run_solve(cfg: &ExperimentConfig, out_dir: &Path) -> Result<SolveOutcome> {
    let outcome = solve(cfg)?;
    let problems = sensor_problems(&cfg.sensors, &outcome.states)?;
    let report = serde_json::to_string_pretty(&outcome.report.to_json())?;
    write_atomic(&out_dir.join(SOLVE_REPORT_FILE), report.as_bytes())?;
    write_atomic(
        &out_dir.join("states.legend.csv"),
        outcome.states.legend_csv().as_bytes(),
    )?;
    for (n, p) in problems.iter().enumerate() {
        let csv = sensor_dump_csv(&outcome, n, p.errors().values());
        write_atomic(
            &out_dir.join(format!("sensor_{}_values.csv", n + 1)),
            csv.as_bytes(),
        )?;
    }
    write_atomic(
        &out_dir.join(FINGERPRINT_FILE),
        cfg.solve_fingerprint().as_bytes(),
    )?;
    Ok(outcome)
}

fn cached_lambda(cfg: &ExperimentConfig, out_dir: &Path) -> Option<f64> {
    let fp = fs::read_to_string(out_dir.join(FINGERPRINT_FILE)).ok()?;
    if fp.trim() != cfg.solve_fingerprint() {
        return None;
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join(SOLVE_REPORT_FILE)).ok()?).ok()?;
    report.get("lambda_star")?.as_f64()
}

// ------------------------------------------------------------------- simulate

pub fn sim_csv_header(n_sensors: usize, with_error: bool) -> String {
    let mut h = String::from("policy,p,buffer,avg_error,stderr,discounted_error");
    for n in 1..=n_sensors {
        h.push_str(&format!(",sched_rate_sensor_{n}"));
    }
    if with_error {
        h.push_str(",error");
    }
    h.push('\n');
    h
}

fn common_p(sensors: &[ArSourceModel]) -> String {
    let p = sensors[0].success_prob();
    if sensors.iter().all(|m| m.success_prob() == p) {
        fmt_num(p)
    } else {
        String::new()
    }
}

pub fn sim_csv_row(result: &SimResult, p: &str, buffer: usize) -> String {
    let mut row = format!(
        "{},{p},{buffer},{},{},{}",
        result.policy,
        fmt_num(result.avg_error),
        fmt_num(result.avg_error_stderr),
        fmt_num(result.discounted_error)
    );
    for r in &result.sched_rates {
        row.push(',');
        row.push_str(&fmt_num(*r));
    }
    row
}

/// Solves (or reuses a cached multiplier) and returns MGF inputs for `cfg`.
pub fn mgf_input(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    problems_states: &Arc<StateSpace>,
) -> Result<MgfInput> {
    let lambda = match cached_lambda(cfg, out_dir) {
        Some(l) => {
            log::info!("reusing cached lambda_star = {l}");
            l
        }
        None => run_solve(cfg, out_dir)?.report.lambda_star,
    };
    let problems = sensor_problems(&cfg.sensors, problems_states)?;
    let mut eval = DualEvaluator::new(&problems, cfg.channels, cfg.gamma, cfg.vi_tol)?;
    let ev = eval.evaluate(lambda)?;
    Ok(MgfInput {
        lambda_star: lambda,
        q_tables: ev.solutions.into_iter().map(|s| s.q).collect(),
    })
}

pub struct SimulateOutcome {
    pub result: SimResult,
    pub csv: String,
    pub path: PathBuf,
}

/// Simulates one policy and writes `simulate_<policy>.csv`.
pub fn run_simulate(
    cfg: &ExperimentConfig,
    policy: PolicyKind,
    out_dir: &Path,
) -> Result<SimulateOutcome> {
    cfg.validate()?;
    let states = Arc::new(enumerate_states(cfg.buffer, cfg.delta_max)?);
    let problems = sensor_problems(&cfg.sensors, &states)?;
    let mgf = if policy == PolicyKind::Mgf {
        Some(mgf_input(cfg, out_dir, &states)?)
    } else {
        None
    };
    let sim = Simulator::from_problems(cfg.sim_config(), &problems)?;
    let result = sim.run(policy, mgf.as_ref())?;
    let mut csv = sim_csv_header(cfg.sensors.len(), false);
    csv.push_str(&sim_csv_row(&result, &common_p(&cfg.sensors), cfg.buffer));
    csv.push('\n');
    let path = out_dir.join(format!("simulate_{}.csv", policy));
    write_atomic(&path, csv.as_bytes())?;
    Ok(SimulateOutcome { result, csv, path })
}

// ---------------------------------------------------------------------- sweep

/// `start:stop:step` grid of success probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl std::str::FromStr for ProbabilityGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::InvalidArgument(format!("p-grid '{s}' must look like start:stop:step"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let nums: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let grid = Self {
            start: nums[0],
            stop: nums[1],
            step: nums[2],
        };
        grid.validate()?;
        Ok(grid)
    }
}

impl ProbabilityGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.start > 0.0 && self.start <= self.stop && self.stop <= 1.0 && self.step > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "p-grid needs 0 < start <= stop <= 1 and step > 0, got {}:{}:{}",
                self.start, self.stop, self.step
            )));
        }
        Ok(())
    }

    /// Grid points, rounded to 12 significant digits.
    pub fn points(&self) -> Vec<f64> {
        let count = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|i| {
                let p = self.start + i as f64 * self.step;
                fmt_num(p).parse::<f64>().expect("formatted number parses")
            })
            .collect()
    }
}

/// Seed of one sweep cell, derived from the master seed and the cell key.
pub fn cell_seed(master: u64, p: f64, buffer: usize) -> u64 {
    mix64(master ^ mix64(p.to_bits() ^ mix64(buffer as u64)))
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub p: f64,
    pub buffer: usize,
    pub lambda_star: Option<f64>,
    pub result: std::result::Result<SimResult, String>,
}

impl SweepRow {
    pub fn csv_row(&self, n_sensors: usize) -> String {
        match &self.result {
            Ok(r) => format!("{},", sim_csv_row(r, &fmt_num(self.p), self.buffer)),
            Err(e) => {
                let blanks = ",".repeat(3 + n_sensors);
                let msg = e.replace([',', '\n', '"'], " ");
                format!("mgf,{},{}{blanks},{msg}", fmt_num(self.p), self.buffer)
            }
        }
    }
}

/// One (p, buffer) cell: re-solve the dual for this channel quality and
/// buffer size, then simulate MGF.
pub fn sweep_cell(cfg: &ExperimentConfig, p: f64, buffer: usize) -> Result<(f64, SimResult)> {
    let sensors = cfg
        .sensors
        .iter()
        .map(|m| m.with_success_prob(p))
        .collect::<Result<Vec<_>>>()?;
    let mut cell = cfg.clone();
    cell.sensors = sensors;
    cell.buffer = buffer;
    cell.seed = cell_seed(cfg.seed, p, buffer);
    cell.validate()?;
    let states = Arc::new(enumerate_states(buffer, cell.delta_max)?);
    let problems = sensor_problems(&cell.sensors, &states)?;
    let report = dual_ascent(&problems, cell.channels, cell.gamma, &cell.dual_config())?;
    let mgf = MgfInput {
        lambda_star: report.lambda_star,
        q_tables: report.q_tables(),
    };
    let sim = Simulator::from_problems(cell.sim_config(), &problems)?;
    let result = sim.run(PolicyKind::Mgf, Some(&mgf))?;
    log::info!(
        "cell p={p} b={buffer}: lambda*={} avg_error={} +- {}",
        report.lambda_star,
        result.avg_error,
        result.avg_error_stderr
    );
    Ok((report.lambda_star, result))
}

/// Runs every (p, buffer) cell in parallel. When `cell_dir` is given each
/// cell's CSV is written there as soon as the cell finishes.
pub fn sweep(
    cfg: &ExperimentConfig,
    grid: &ProbabilityGrid,
    buffers: &[usize],
    cell_dir: Option<&Path>,
) -> Result<Vec<SweepRow>> {
    grid.validate()?;
    if buffers.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one buffer size is required".into(),
        ));
    }
    let cells: Vec<(f64, usize)> = grid
        .points()
        .into_iter()
        .flat_map(|p| buffers.iter().map(move |&b| (p, b)))
        .collect();
    let n = cfg.sensors.len();
    cells
        .par_iter()
        .map(|&(p, buffer)| {
            let row = match sweep_cell(cfg, p, buffer) {
                Ok((lambda, r)) => SweepRow {
                    p,
                    buffer,
                    lambda_star: Some(lambda),
                    result: Ok(r),
                },
                Err(e) => {
                    log::warn!("cell p={p} b={buffer} failed: {e}");
                    SweepRow {
                        p,
                        buffer,
                        lambda_star: None,
                        result: Err(e.to_string()),
                    }
                }
            };
            if let Some(dir) = cell_dir {
                let path = dir.join(format!("p{}_b{}.csv", fmt_num(p), buffer));
                let body = format!("{}{}\n", sim_csv_header(n, true), row.csv_row(n));
                write_atomic(&path, body.as_bytes())?;
            }
            Ok(row)
        })
        .collect()
}

/// Runs the sweep, writing per-cell files under `cells/` and the assembled
/// table to `sweep.csv`.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    grid: &ProbabilityGrid,
    buffers: &[usize],
    out_dir: &Path,
) -> Result<(Vec<SweepRow>, String)> {
    let rows = sweep(cfg, grid, buffers, Some(&out_dir.join("cells")))?;
    let n = cfg.sensors.len();
    let mut csv = sim_csv_header(n, true);
    for row in &rows {
        csv.push_str(&row.csv_row(n));
        csv.push('\n');
    }
    write_atomic(&out_dir.join("sweep.csv"), csv.as_bytes())?;
    Ok((rows, csv))
}
