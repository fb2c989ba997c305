//! Stationary autoregressive sources and the estimation error they induce as a
//! function of the ages of the buffered samples.
//!
//! For a zero-mean Gaussian AR(q) process the minimum mean-squared error of
//! estimating `X_t` from samples `{X_{t-d} : d in ages}` is the conditional
//! variance
//!
//! ```text
//! err(ages) = gamma(0) - c^T Sigma^{-1} c,   c_i = gamma(d_i),  Sigma_ij = gamma(|d_i - d_j|)
//! ```
//!
//! which is exactly the error a Kalman filter attains when its only
//! observations are those samples.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aoi::StateSpace;
use crate::error::{Error, Result};

/// Diagonal jitter added once when the conditioning covariance is not
/// numerically positive definite.
pub const CHOLESKY_JITTER: f64 = 1e-10;

/// A stationary AR(q) source `X_t = sum_i a_i X_{t-i} + W_t`, `W_t ~ N(0, noise_var)`,
/// together with the per-slot delivery probability of its channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel", into = "RawModel")]
pub struct ArSourceModel {
    coeffs: Vec<f64>,
    noise_var: f64,
    success_prob: f64,
    spectral_radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    order: usize,
    coeffs: Vec<f64>,
    noise_var: f64,
    success_prob: f64,
}

impl TryFrom<RawModel> for ArSourceModel {
    type Error = Error;

    fn try_from(raw: RawModel) -> Result<Self> {
        if raw.coeffs.len() != raw.order {
            return Err(Error::InvalidModel(format!(
                "order is {} but {} coefficients were given",
                raw.order,
                raw.coeffs.len()
            )));
        }
        ArSourceModel::new(raw.coeffs, raw.noise_var, raw.success_prob)
    }
}

impl From<ArSourceModel> for RawModel {
    fn from(m: ArSourceModel) -> Self {
        RawModel {
            order: m.order(),
            coeffs: m.coeffs,
            noise_var: m.noise_var,
            success_prob: m.success_prob,
        }
    }
}

impl ArSourceModel {
    /// Builds a model from lag-indexed coefficients (`coeffs[i - 1]` multiplies
    /// `X_{t-i}`). Rejects non-stationary coefficient sets.
    pub fn new(coeffs: Vec<f64>, noise_var: f64, success_prob: f64) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::InvalidModel("order must be at least 1".into()));
        }
        if coeffs.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidModel("coefficients must be finite".into()));
        }
        if !(noise_var.is_finite() && noise_var > 0.0) {
            return Err(Error::InvalidModel(format!(
                "noise_var must be positive, got {noise_var}"
            )));
        }
        if !(success_prob > 0.0 && success_prob <= 1.0) {
            return Err(Error::InvalidModel(format!(
                "success_prob must lie in (0, 1], got {success_prob}"
            )));
        }
        let spectral_radius = companion_spectral_radius(&coeffs);
        if !(spectral_radius < 1.0 - 1e-12) {
            return Err(Error::InvalidModel(format!(
                "non-stationary coefficients: companion spectral radius {spectral_radius} >= 1"
            )));
        }
        Ok(Self {
            coeffs,
            noise_var,
            success_prob,
            spectral_radius,
        })
    }

    /// The evaluation source `X_t = 0.1 X_{t-1} + 0.8 X_{t-4} + W_t` with unit noise.
    pub fn fourth_order_example(success_prob: f64) -> Result<Self> {
        Self::new(vec![0.1, 0.0, 0.0, 0.8], 1.0, success_prob)
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn success_prob(&self) -> f64 {
        self.success_prob
    }

    pub fn spectral_radius(&self) -> f64 {
        self.spectral_radius
    }

    /// Same source, different channel.
    pub fn with_success_prob(&self, success_prob: f64) -> Result<Self> {
        Self::new(self.coeffs.clone(), self.noise_var, success_prob)
    }

    /// Reads a model from a JSON file.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn companion_spectral_radius(coeffs: &[f64]) -> f64 {
    let q = coeffs.len();
    let mut companion = DMatrix::<f64>::zeros(q, q);
    for (j, a) in coeffs.iter().enumerate() {
        companion[(0, j)] = *a;
    }
    for i in 1..q {
        companion[(i, i - 1)] = 1.0;
    }
    companion
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// `gamma[k] = Cov(X_t, X_{t-k})` for `k = 0..=max_lag`.
#[derive(Debug, Clone, PartialEq)]
pub struct AutocovarianceTable {
    gamma: Vec<f64>,
}

impl AutocovarianceTable {
    pub fn max_lag(&self) -> usize {
        self.gamma.len() - 1
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn variance(&self) -> f64 {
        self.gamma[0]
    }

    pub fn at(&self, lag: usize) -> f64 {
        self.gamma[lag]
    }

    /// Extends the table through `max_lag` with the AR recursion
    /// `gamma(k) = sum_i a_i gamma(k - i)`.
    pub fn extend_to(&mut self, model: &ArSourceModel, max_lag: usize) {
        while self.gamma.len() <= max_lag {
            let k = self.gamma.len();
            let next = model
                .coeffs
                .iter()
                .enumerate()
                .map(|(i, a)| a * self.gamma[k - (i + 1)])
                .sum();
            self.gamma.push(next);
        }
    }
}

/// Solves the Yule–Walker equations for `gamma(0..=q)` and extends the result
/// to `max_lag` by the AR recursion.
pub fn yule_walker_autocovariance(
    model: &ArSourceModel,
    max_lag: usize,
) -> Result<AutocovarianceTable> {
    let q = model.order();
    if max_lag < q {
        return Err(Error::InvalidArgument(format!(
            "max_lag {max_lag} is below the model order {q}"
        )));
    }
    // Row k: gamma(k) - sum_i a_i gamma(|k - i|) = [k == 0] sigma^2
    let mut system = DMatrix::<f64>::identity(q + 1, q + 1);
    for k in 0..=q {
        for (i, a) in model.coeffs.iter().enumerate() {
            let lag = (k as isize - (i as isize + 1)).unsigned_abs();
            system[(k, lag)] -= a;
        }
    }
    let mut rhs = DVector::<f64>::zeros(q + 1);
    rhs[0] = model.noise_var;

    let solution = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular Yule-Walker system".into()))?;
    if solution.iter().any(|g| !g.is_finite()) || solution[0] <= 0.0 {
        return Err(Error::Numerical(
            "Yule-Walker solution is not a valid autocovariance".into(),
        ));
    }
    let mut table = AutocovarianceTable {
        gamma: solution.iter().copied().collect(),
    };
    table.extend_to(model, max_lag);
    Ok(table)
}

/// Conditional variance of `X_t` given the samples at the distinct `ages`.
///
/// Ages are deduplicated before conditioning. `table` is extended locally
/// when an age exceeds its `max_lag`.
pub fn mmse_error(model: &ArSourceModel, table: &AutocovarianceTable, ages: &[u32]) -> Result<f64> {
    if ages.contains(&0) {
        return Err(Error::InvalidArgument("ages must be at least 1".into()));
    }
    let mut distinct: Vec<usize> = ages.iter().map(|&d| d as usize).collect();
    distinct.sort_unstable();
    distinct.dedup();

    let needed = distinct.last().copied().unwrap_or(0);
    let extended;
    let table = if needed > table.max_lag() {
        let mut t = table.clone();
        t.extend_to(model, needed);
        extended = t;
        &extended
    } else {
        table
    };

    let prior = table.variance();
    if distinct.is_empty() {
        return Ok(prior);
    }
    let m = distinct.len();
    let cross = DVector::from_iterator(m, distinct.iter().map(|&d| table.at(d)));
    let cov = DMatrix::from_fn(m, m, |i, j| table.at(distinct[i].abs_diff(distinct[j])));

    let chol = match Cholesky::new(cov.clone()) {
        Some(c) => c,
        None => {
            let jittered = cov + DMatrix::identity(m, m) * CHOLESKY_JITTER;
            Cholesky::new(jittered).ok_or_else(|| {
                Error::Numerical(format!(
                    "covariance of samples at ages {distinct:?} is singular"
                ))
            })?
        }
    };
    let weights = chol.solve(&cross);
    let explained = cross.dot(&weights);
    Ok((prior - explained).max(0.0))
}

/// An estimation-error function of the buffered ages.
pub trait ErrorFunction: Sync {
    fn error(&self, ages: &[u32]) -> Result<f64>;
}

/// Linear-Gaussian MMSE error of an AR source, with its autocovariances cached.
#[derive(Debug, Clone)]
pub struct GaussianArError {
    model: ArSourceModel,
    table: AutocovarianceTable,
}

impl GaussianArError {
    pub fn new(model: ArSourceModel, max_lag: usize) -> Result<Self> {
        let table = yule_walker_autocovariance(&model, max_lag.max(model.order()))?;
        Ok(Self { model, table })
    }

    pub fn model(&self) -> &ArSourceModel {
        &self.model
    }

    pub fn table(&self) -> &AutocovarianceTable {
        &self.table
    }
}

impl ErrorFunction for GaussianArError {
    fn error(&self, ages: &[u32]) -> Result<f64> {
        mmse_error(&self.model, &self.table, ages)
    }
}

/// `err(s)` for every state of a [`StateSpace`], indexed by state id.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTable {
    errors: Vec<f64>,
}

impl ErrorTable {
    /// Evaluates `f` on every enumerated state. States are evaluated in
    /// parallel; the result is independent of the worker count.
    pub fn from_fn<F: ErrorFunction>(f: &F, states: &StateSpace) -> Result<Self> {
        let errors = states
            .states()
            .par_iter()
            .map(|s| {
                f.error(s.as_slice()).map_err(|e| Error::AtState {
                    state: s.to_string(),
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { errors })
    }

    pub fn from_values(errors: Vec<f64>) -> Self {
        Self { errors }
    }

    pub fn get(&self, id: usize) -> f64 {
        self.errors[id]
    }

    pub fn values(&self) -> &[f64] {
        &self.errors
    }

    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.errors.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.errors
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// MMSE errors of `model` over all states in `states`.
pub fn build_error_table(model: &ArSourceModel, states: &StateSpace) -> Result<ErrorTable> {
    let err = GaussianArError::new(model.clone(), states.delta_max() as usize)?;
    ErrorTable::from_fn(&err, states)
}

/// Empirical residual MSE of the best linear predictor of `X_t` from the
/// samples at `ages`, fitted on one long simulated path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub estimate: f64,
    /// Batch-means standard error (robust to residual autocorrelation).
    pub stderr: f64,
}

const MC_BATCHES: usize = 100;

/// Simulates the AR path, fits the predictor coefficients by the empirical
/// normal equations and returns the residual MSE with its standard error.
/// This path never touches the autocovariance machinery.
pub fn monte_carlo_error(
    model: &ArSourceModel,
    ages: &[u32],
    n_samples: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    if n_samples < 1000 {
        return Err(Error::InvalidArgument(format!(
            "n_samples must be at least 1000, got {n_samples}"
        )));
    }
    if ages.contains(&0) {
        return Err(Error::InvalidArgument("ages must be at least 1".into()));
    }
    let mut lags: Vec<usize> = ages.iter().map(|&d| d as usize).collect();
    lags.sort_unstable();
    lags.dedup();
    let max_lag = lags.last().copied().unwrap_or(0);

    let rho = model.spectral_radius().max(1e-3);
    let burn_in = ((1e-16f64.ln() / rho.ln()).ceil() as usize).max(1000);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = model.noise_var().sqrt();
    let total = burn_in + max_lag + n_samples;
    let mut path = vec![0.0f64; total];
    for t in 0..total {
        let mut x: f64 = StandardNormal.sample(&mut rng);
        x *= sd;
        for (i, a) in model.coeffs().iter().enumerate() {
            if t > i {
                x += a * path[t - i - 1];
            }
        }
        path[t] = x;
    }
    let start = burn_in + max_lag;
    let m = lags.len();

    let coeffs = if m == 0 {
        DVector::zeros(0)
    } else {
        let mut gram = DMatrix::<f64>::zeros(m, m);
        let mut rhs = DVector::<f64>::zeros(m);
        for t in start..total {
            for i in 0..m {
                let zi = path[t - lags[i]];
                rhs[i] += zi * path[t];
                for j in 0..=i {
                    gram[(i, j)] += zi * path[t - lags[j]];
                }
            }
        }
        for i in 0..m {
            for j in 0..i {
                gram[(j, i)] = gram[(i, j)];
            }
        }
        gram.lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("singular empirical normal equations".into()))?
    };

    let batch_len = n_samples / MC_BATCHES;
    let mut batch_means = Vec::with_capacity(MC_BATCHES);
    let mut total_sq = 0.0;
    let mut acc = 0.0;
    let mut in_batch = 0usize;
    for t in start..total {
        let pred: f64 = lags
            .iter()
            .zip(coeffs.iter())
            .map(|(&l, c)| c * path[t - l])
            .sum();
        let e = path[t] - pred;
        total_sq += e * e;
        acc += e * e;
        in_batch += 1;
        if in_batch == batch_len && batch_means.len() < MC_BATCHES {
            batch_means.push(acc / batch_len as f64);
            acc = 0.0;
            in_batch = 0;
        }
    }
    let estimate = total_sq / n_samples as f64;
    let b = batch_means.len() as f64;
    let mean_b = batch_means.iter().sum::<f64>() / b;
    let var_b = batch_means
        .iter()
        .map(|x| (x - mean_b).powi(2))
        .sum::<f64>()
        / (b - 1.0);
    Ok(MonteCarloEstimate {
        estimate,
        stderr: (var_b / b).sqrt(),
    })
}
