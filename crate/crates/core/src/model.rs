//! Regression layer: standardization, the `(lambda, alpha, gamma)`
//! parameterization, fitting, ridge initialization, adaptive weights,
//! prediction and error metrics.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::admm::{AdmmConfig, AdmmSolver, AdmmState, Lambdas, Solution, SolveReport};
use crate::error::{validation, FsglError, Result};
use crate::linalg::NormalSystem;
use crate::penalty::{norm2, FusionStructure, GroupPartition, PenaltyOperator};

/// Centered, unit-variance design with the statistics needed to map new data
/// onto the same scale.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedDesign {
    pub x_std: DMatrix<f64>,
    pub col_means: Vec<f64>,
    /// Sample standard deviations (divisor `n - 1`).
    pub col_sds: Vec<f64>,
    /// Columns with zero variance; they are zero in `x_std` and their
    /// coefficients are forced to zero.
    pub constant: Vec<bool>,
    pub y_mean: f64,
    pub y_centered: Vec<f64>,
}

impl StandardizedDesign {
    pub fn n(&self) -> usize {
        self.x_std.nrows()
    }

    pub fn p(&self) -> usize {
        self.x_std.ncols()
    }

    /// Standardizes raw rows with this design's column statistics.
    pub fn transform(&self, x_raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x_raw.ncols() != self.p() {
            return validation(format!(
                "new data has {} columns, training design has {}",
                x_raw.ncols(),
                self.p()
            ));
        }
        let mut out = x_raw.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            if self.constant[j] {
                col.fill(0.0);
            } else {
                let (m, s) = (self.col_means[j], self.col_sds[j]);
                col.iter_mut().for_each(|v| *v = (*v - m) / s);
            }
        }
        Ok(out)
    }
}

pub fn standardize(x_raw: &DMatrix<f64>, y_raw: &[f64]) -> Result<StandardizedDesign> {
    let (n, p) = x_raw.shape();
    if n < 2 || p < 1 {
        return validation(format!("need n >= 2 and p >= 1, got n = {n}, p = {p}"));
    }
    if y_raw.len() != n {
        return validation(format!(
            "response has {} entries, design has {n} rows",
            y_raw.len()
        ));
    }
    if x_raw.iter().chain(y_raw).any(|v| !v.is_finite()) {
        return validation("design or response contains NaN or infinite values");
    }
    let mut x_std = x_raw.clone();
    let mut col_means = Vec::with_capacity(p);
    let mut col_sds = Vec::with_capacity(p);
    let mut constant = Vec::with_capacity(p);
    for (j, mut col) in x_std.column_iter_mut().enumerate() {
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        let sd = var.sqrt();
        let is_constant = !(sd > 1e-12 * mean.abs().max(1.0));
        if is_constant {
            warn!("column {j} is constant; its coefficient is fixed at zero");
            col.fill(0.0);
        } else {
            col.iter_mut().for_each(|v| *v = (*v - mean) / sd);
        }
        col_means.push(mean);
        col_sds.push(sd);
        constant.push(is_constant);
    }
    let y_mean = y_raw.iter().sum::<f64>() / n as f64;
    Ok(StandardizedDesign {
        x_std,
        col_means,
        col_sds,
        constant,
        y_mean,
        y_centered: y_raw.iter().map(|v| v - y_mean).collect(),
    })
}

/// Overall level `lambda` split by `alpha` (lasso vs group) and `gamma`
/// (sparsity vs fusion).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningPoint {
    pub lambda: f64,
    pub alpha: f64,
    pub gamma: f64,
}

impl TuningPoint {
    pub fn new(lambda: f64, alpha: f64, gamma: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return validation(format!("lambda must be positive, got {lambda}"));
        }
        if !(0.0..=1.0).contains(&alpha) || !(0.0..=1.0).contains(&gamma) {
            return validation(format!(
                "alpha and gamma must lie in [0, 1], got ({alpha}, {gamma})"
            ));
        }
        Ok(Self {
            lambda,
            alpha,
            gamma,
        })
    }

    /// `(alpha gamma lambda, (1 - gamma) lambda, (1 - alpha) gamma lambda)`.
    pub fn lambdas(&self) -> Lambdas {
        let TuningPoint {
            lambda,
            alpha,
            gamma,
        } = *self;
        Lambdas {
            lasso: alpha * gamma * lambda,
            fusion: (1.0 - gamma) * lambda,
            group: (1.0 - alpha) * gamma * lambda,
        }
    }
}

pub fn map_tuning(lambda: f64, alpha: f64, gamma: f64) -> Result<Lambdas> {
    Ok(TuningPoint::new(lambda, alpha, gamma)?.lambdas())
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub beta_std: Vec<f64>,
    pub beta_orig: Vec<f64>,
    pub intercept_orig: f64,
    pub support: Vec<usize>,
    pub report: SolveReport,
    pub lambdas: Lambdas,
    pub tuning: Option<TuningPoint>,
    /// Final solver state, usable as a warm start.
    pub state: AdmmState,
}

impl FitResult {
    pub(crate) fn from_solution(
        design: &StandardizedDesign,
        solution: Solution,
        lambdas: Lambdas,
        tuning: Option<TuningPoint>,
    ) -> Self {
        let mut beta_std = solution.beta;
        for (b, &c) in beta_std.iter_mut().zip(&design.constant) {
            if c {
                *b = 0.0;
            }
        }
        let beta_orig: Vec<f64> = beta_std
            .iter()
            .zip(&design.col_sds)
            .zip(&design.constant)
            .map(|((b, s), &c)| if c { 0.0 } else { b / s })
            .collect();
        let intercept_orig = design.y_mean
            - beta_orig
                .iter()
                .zip(&design.col_means)
                .map(|(b, m)| b * m)
                .sum::<f64>();
        let support = solution
            .support
            .into_iter()
            .filter(|&j| !design.constant[j])
            .collect();
        Self {
            beta_std,
            beta_orig,
            intercept_orig,
            support,
            report: solution.report,
            lambdas,
            tuning,
            state: solution.state,
        }
    }

    pub fn estimator_name(&self) -> &'static str {
        self.lambdas.estimator_name()
    }

    /// Predictions from raw predictors via the original-scale coefficients.
    pub fn predict_raw(&self, x_raw: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x_raw.ncols() != self.beta_orig.len() {
            return validation(format!(
                "new data has {} columns, model has {}",
                x_raw.ncols(),
                self.beta_orig.len()
            ));
        }
        let yhat = x_raw * DVector::from_column_slice(&self.beta_orig);
        Ok(yhat.iter().map(|v| v + self.intercept_orig).collect())
    }
}

/// Fits at a `(lambda, alpha, gamma)` point.
pub fn fit(
    design: &StandardizedDesign,
    penalty: &PenaltyOperator,
    tuning: &TuningPoint,
    config: &AdmmConfig,
    weights: Option<&[f64]>,
) -> Result<FitResult> {
    fit_lambdas(
        design,
        penalty,
        tuning.lambdas(),
        Some(*tuning),
        config,
        weights,
        None,
    )
}

/// Fits at explicit `(lambda1, lambda2, lambda3)`.
pub fn fit_lambdas(
    design: &StandardizedDesign,
    penalty: &PenaltyOperator,
    lambdas: Lambdas,
    tuning: Option<TuningPoint>,
    config: &AdmmConfig,
    weights: Option<&[f64]>,
    warm_start: Option<&AdmmState>,
) -> Result<FitResult> {
    let reweighted;
    let penalty = match weights {
        Some(w) => {
            reweighted = penalty.with_weights(w)?;
            &reweighted
        }
        None => penalty,
    };
    let system = NormalSystem::new(&design.x_std, penalty)?;
    let solver = AdmmSolver::new(&system, &design.y_centered, penalty, *config)?;
    let solution = solver.solve(&lambdas, warm_start)?;
    Ok(FitResult::from_solution(design, solution, lambdas, tuning))
}

/// `argmin 1/2 ||y - X b||^2 + lambda_ridge ||b||^2`, i.e.
/// `(X^T X + 2 lambda_ridge I)^-1 X^T y`, on the standardized design.
pub fn ridge_fit(design: &StandardizedDesign, lambda_ridge: f64) -> Result<Vec<f64>> {
    ridge_solve(&design.x_std, &design.y_centered, lambda_ridge)
}

pub(crate) fn ridge_solve(x: &DMatrix<f64>, y: &[f64], lambda_ridge: f64) -> Result<Vec<f64>> {
    let (n, p) = x.shape();
    if !(lambda_ridge >= 0.0) || !lambda_ridge.is_finite() {
        return validation(format!(
            "ridge lambda must be finite and >= 0, got {lambda_ridge}"
        ));
    }
    if lambda_ridge == 0.0 && n < p {
        return validation("ridge lambda must be positive when n < p");
    }
    let y = DVector::from_column_slice(y);
    let shift = 2.0 * lambda_ridge;
    let singular = || FsglError::Validation("ridge system is singular".into());
    let beta = if n < p {
        // Dual form: X^T (X X^T + 2 lambda I)^-1 y.
        let mut g = x * x.transpose();
        for i in 0..n {
            g[(i, i)] += shift;
        }
        let a = g.cholesky().ok_or_else(singular)?.solve(&y);
        x.tr_mul(&a)
    } else {
        let mut g = x.tr_mul(x);
        for i in 0..p {
            g[(i, i)] += shift;
        }
        g.cholesky().ok_or_else(singular)?.solve(&x.tr_mul(&y))
    };
    Ok(beta.as_slice().to_vec())
}

/// Default ceiling for adaptive weights.
pub const DEFAULT_WEIGHT_CAP: f64 = 1e8;

/// Reciprocal magnitudes of an initial estimate: `1/|b_j|` per coefficient,
/// `1/|b_a - b_b|` per fusion edge and `1/||b_g||_2` per group, each capped.
pub fn adaptive_weights(
    beta_ridge: &[f64],
    fusion: &FusionStructure,
    groups: &GroupPartition,
    cap: f64,
) -> Result<Vec<f64>> {
    let p = beta_ridge.len();
    if fusion.p() != p || groups.p() != p {
        return validation("initial estimate length does not match fusion/group structure");
    }
    if beta_ridge.iter().any(|b| !b.is_finite()) {
        return validation("initial estimate must be finite");
    }
    let capped = |magnitude: f64| (1.0 / magnitude).min(cap);
    let mut w = Vec::with_capacity(p + fusion.m() + groups.n_groups());
    w.extend(beta_ridge.iter().map(|b| capped(b.abs())));
    w.extend(
        fusion
            .edges()
            .iter()
            .map(|&(a, b)| capped((beta_ridge[a] - beta_ridge[b]).abs())),
    );
    for g in 1..=groups.n_groups() {
        let sub: Vec<f64> = groups.members(g).iter().map(|&j| beta_ridge[j]).collect();
        w.push(capped(norm2(&sub)));
    }
    Ok(w)
}

/// `y_mean + ((X_new - means) / sds) beta_std`.
pub fn predict(
    fit: &FitResult,
    x_new_raw: &DMatrix<f64>,
    train: &StandardizedDesign,
) -> Result<Vec<f64>> {
    if fit.beta_std.len() != train.p() {
        return validation("fit and training design disagree on p");
    }
    let z = train.transform(x_new_raw)?;
    let yhat = z * DVector::from_column_slice(&fit.beta_std);
    Ok(yhat.iter().map(|v| v + train.y_mean).collect())
}

fn mean_squared_difference(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return validation(format!("length mismatch: {} vs {}", a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>() / a.len() as f64)
}

/// `||beta_hat - beta_true||^2 / p`.
pub fn mse_beta(beta_hat: &[f64], beta_true: &[f64]) -> Result<f64> {
    mean_squared_difference(beta_hat, beta_true)
}

/// `||y_hat - y||^2 / n`.
pub fn mse_pred(y_hat: &[f64], y_true: &[f64]) -> Result<f64> {
    mean_squared_difference(y_hat, y_true)
}

/// Squared bias and variance of replicate predictions (rows = replicates)
/// around the true mean function, averaged over test points. The variance
/// uses divisor `R`, so the two terms add up to the mean squared deviation
/// from the mean function.
pub fn bias_variance_decompose(predictions: &DMatrix<f64>, truth: &[f64]) -> Result<(f64, f64)> {
    let (r, n_test) = predictions.shape();
    if r < 2 {
        return validation("bias-variance decomposition needs at least 2 replicates");
    }
    if truth.len() != n_test || n_test == 0 {
        return validation("truth length must match the number of test points");
    }
    let mut bias2 = 0.0;
    let mut var = 0.0;
    for (i, col) in predictions.column_iter().enumerate() {
        let mean = col.iter().sum::<f64>() / r as f64;
        bias2 += (mean - truth[i]).powi(2);
        var += col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / r as f64;
    }
    Ok((bias2 / n_test as f64, var / n_test as f64))
}
