//! ADMM for `1/2 ||y - X beta||^2 + sum_j lambda_j w_j ||K_j beta||_2`.
//!
//! Each iteration solves the coefficient system, soft-thresholds every
//! effective group of `theta = K beta - mu / rho`, takes a dual ascent step on
//! the unscaled multiplier `mu`, and checks the primal residual
//! `r = theta - K beta` and dual residual `s = rho K^T (theta - theta_prev)`
//! against absolute/relative tolerances. The step size is rebalanced when
//! one residual exceeds the other by more than a factor `eta`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{validation, FsglError, Result};
use crate::linalg::{BetaFactor, NormalSystem};
use crate::penalty::{norm2, BlockClass, PenaltyOperator};

/// Regularization levels for the lasso, fusion and group blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lambdas {
    pub lasso: f64,
    pub fusion: f64,
    pub group: f64,
}

impl Lambdas {
    pub fn new(lasso: f64, fusion: f64, group: f64) -> Result<Self> {
        for (name, v) in [("lambda1", lasso), ("lambda2", fusion), ("lambda3", group)] {
            if !(v >= 0.0) || !v.is_finite() {
                return validation(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        Ok(Self {
            lasso,
            fusion,
            group,
        })
    }

    pub fn for_class(&self, class: BlockClass) -> f64 {
        match class {
            BlockClass::Lasso => self.lasso,
            BlockClass::Fusion => self.fusion,
            BlockClass::Group => self.group,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.lasso == 0.0 && self.fusion == 0.0 && self.group == 0.0
    }

    /// Name of the estimator obtained from the nonzero penalty terms.
    pub fn estimator_name(&self) -> &'static str {
        match (self.lasso > 0.0, self.fusion > 0.0, self.group > 0.0) {
            (false, false, false) => "least squares",
            (true, false, false) => "lasso",
            (false, true, false) => "fusion",
            (false, false, true) => "group lasso",
            (true, true, false) => "fused lasso",
            (true, false, true) => "sparse group lasso",
            (false, true, true) => "fused group lasso",
            (true, true, true) => "fused sparse group lasso",
        }
    }
}

/// Scale of the absolute term in the primal tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PrimalScale {
    /// `sqrt(p)`, the coefficient count.
    #[default]
    Coefficients,
    /// `sqrt(dim theta)`, the dimension the primal residual lives in.
    Theta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmConfig {
    pub rho0: f64,
    pub tau: f64,
    pub eta: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    /// Step-size adaptation is attempted every this many iterations.
    pub rho_update_period: usize,
    pub primal_scale: PrimalScale,
    /// Keep a per-iteration trace (with the objective at every iterate).
    /// When off, the objective is evaluated once at the end.
    #[serde(default = "default_true")]
    pub record_trace: bool,
}

fn default_true() -> bool {
    true
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            rho0: 1.0,
            tau: 2.0,
            eta: 10.0,
            eps_abs: 1e-4,
            eps_rel: 1e-3,
            max_iter: 5000,
            rho_update_period: 1,
            primal_scale: PrimalScale::Coefficients,
            record_trace: true,
        }
    }
}

impl AdmmConfig {
    pub fn with_tolerances(mut self, eps_abs: f64, eps_rel: f64) -> Self {
        self.eps_abs = eps_abs;
        self.eps_rel = eps_rel;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho0 > 0.0) || !self.rho0.is_finite() {
            return validation(format!("rho0 must be positive, got {}", self.rho0));
        }
        if !(self.tau > 1.0) || !(self.eta > 1.0) {
            return validation(format!(
                "tau and eta must exceed 1, got tau = {}, eta = {}",
                self.tau, self.eta
            ));
        }
        // Zero tolerances are allowed: the solver then stops only at an exact fixed point.
        if !(self.eps_abs >= 0.0) || !(self.eps_rel >= 0.0) {
            return validation("tolerances must be >= 0");
        }
        if self.max_iter == 0 || self.rho_update_period == 0 {
            return validation("max_iter and rho_update_period must be positive");
        }
        Ok(())
    }
}

/// Iterates of the splitting. `theta` and `mu` are stacked by effective group
/// in the same row order as `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmState {
    pub beta: Vec<f64>,
    pub theta: Vec<f64>,
    pub mu: Vec<f64>,
    pub rho: f64,
    pub iter: usize,
    pub r_norm: f64,
    pub s_norm: f64,
    pub eps_pri: f64,
    pub eps_dual: f64,
}

impl AdmmState {
    /// All-zero iterates with step size `rho`.
    pub fn zeros(penalty: &PenaltyOperator, rho: f64) -> Self {
        Self {
            beta: vec![0.0; penalty.p()],
            theta: vec![0.0; penalty.n_rows()],
            mu: vec![0.0; penalty.n_rows()],
            rho,
            iter: 0,
            r_norm: f64::INFINITY,
            s_norm: f64::INFINITY,
            eps_pri: 0.0,
            eps_dual: 0.0,
        }
    }

    fn check_shape(&self, penalty: &PenaltyOperator) -> Result<()> {
        if self.beta.len() != penalty.p()
            || self.theta.len() != penalty.n_rows()
            || self.mu.len() != penalty.n_rows()
        {
            return validation("warm-start state does not match the penalty dimensions");
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return validation(format!("warm-start rho must be positive, got {}", self.rho));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub r_norm: f64,
    pub s_norm: f64,
    pub eps_pri: f64,
    pub eps_dual: f64,
    pub rho: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    pub r_norm: f64,
    pub s_norm: f64,
    pub eps_pri: f64,
    pub eps_dual: f64,
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Clone)]
pub struct Solution {
    /// Coefficients from the last coefficient update (dense).
    pub beta: Vec<f64>,
    /// Indices whose lasso and group entries of `theta` are both nonzero.
    pub support: Vec<usize>,
    pub state: AdmmState,
    pub report: SolveReport,
}

/// Outcome of a convergence check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopCheck {
    pub stop: bool,
    pub r_norm: f64,
    pub s_norm: f64,
    pub eps_pri: f64,
    pub eps_dual: f64,
}

/// `(1 - kappa / ||a||_2)_+ a`, with `S(0) = 0`.
pub fn soft_threshold_vector(a: &[f64], kappa: f64) -> Vec<f64> {
    let mut out = a.to_vec();
    shrink_in_place(&mut out, kappa);
    out
}

fn shrink_in_place(a: &mut [f64], kappa: f64) {
    let norm = norm2(a);
    if norm <= kappa || norm == 0.0 {
        a.fill(0.0);
    } else {
        let f = 1.0 - kappa / norm;
        a.iter_mut().for_each(|v| *v *= f);
    }
}

#[inline]
fn shrink_scalar(v: f64, kappa: f64) -> f64 {
    if v > kappa {
        v - kappa
    } else if v < -kappa {
        v + kappa
    } else {
        0.0
    }
}

/// New coefficients from the linear system at the state's `rho`.
pub fn beta_update(
    state: &AdmmState,
    factor: &BetaFactor,
    system: &NormalSystem,
    y: &[f64],
    penalty: &PenaltyOperator,
) -> Result<Vec<f64>> {
    let xty = system.x().tr_mul(&DVector::from_column_slice(y));
    let mut ws = Workspace::new(penalty, system.n());
    let mut beta = vec![0.0; penalty.p()];
    beta_update_into(
        state,
        factor,
        system,
        xty.as_slice(),
        penalty,
        &mut ws,
        &mut beta,
    )?;
    Ok(beta)
}

fn beta_update_into(
    state: &AdmmState,
    factor: &BetaFactor,
    system: &NormalSystem,
    xty: &[f64],
    penalty: &PenaltyOperator,
    ws: &mut Workspace,
    beta: &mut [f64],
) -> Result<()> {
    if factor.rho() != state.rho {
        return Err(FsglError::Internal(format!(
            "stale factorization: factored at rho = {}, state has rho = {}",
            factor.rho(),
            state.rho
        )));
    }
    let rho = state.rho;
    for ((t, &m), &th) in ws.rows.iter_mut().zip(&state.mu).zip(&state.theta) {
        *t = m + rho * th;
    }
    penalty.apply_transpose(&ws.rows, &mut ws.rhs);
    for (r, &b) in ws.rhs.iter_mut().zip(xty) {
        *r += b;
    }
    system.solve(factor, &ws.rhs, beta, &mut ws.fitted);
    Ok(())
}

/// Blockwise shrinkage of `K beta - mu / rho` for the state's current `beta`.
pub fn theta_update(state: &mut AdmmState, penalty: &PenaltyOperator, lambdas: &Lambdas) {
    let k_beta = penalty.apply_vec(&state.beta);
    let mut theta = std::mem::take(&mut state.theta);
    theta_update_from(&k_beta, &state.mu, state.rho, penalty, lambdas, &mut theta);
    state.theta = theta;
}

fn theta_update_from(
    k_beta: &[f64],
    mu: &[f64],
    rho: f64,
    penalty: &PenaltyOperator,
    lambdas: &Lambdas,
    theta: &mut [f64],
) {
    let (p, m) = (penalty.p(), penalty.m());
    let weights = penalty.weights();
    let inv_rho = 1.0 / rho;
    for (i, ((t, &kb), &u)) in theta[..p + m].iter_mut().zip(k_beta).zip(mu).enumerate() {
        let lam = if i < p { lambdas.lasso } else { lambdas.fusion };
        *t = shrink_scalar(kb - u * inv_rho, lam * weights[i] * inv_rho);
    }
    for (block, &w) in penalty.blocks()[p + m..].iter().zip(&weights[p + m..]) {
        let rows = block.rows.clone();
        let slot = &mut theta[rows.clone()];
        for ((t, &kb), &u) in slot.iter_mut().zip(&k_beta[rows.clone()]).zip(&mu[rows]) {
            *t = kb - u * inv_rho;
        }
        shrink_in_place(slot, lambdas.group * w * inv_rho);
    }
}

/// Dual ascent `mu += rho (theta - K beta)`.
pub fn mu_update(state: &mut AdmmState, penalty: &PenaltyOperator) {
    let k_beta = penalty.apply_vec(&state.beta);
    mu_update_from(&k_beta, &state.theta, state.rho, &mut state.mu);
}

fn mu_update_from(k_beta: &[f64], theta: &[f64], rho: f64, mu: &mut [f64]) {
    for ((u, &t), &kb) in mu.iter_mut().zip(theta).zip(k_beta) {
        *u += rho * (t - kb);
    }
}

/// Residual norms and tolerances for the current state, given the previous
/// `theta`.
pub fn check_stopping(
    state: &AdmmState,
    theta_prev: &[f64],
    penalty: &PenaltyOperator,
    config: &AdmmConfig,
) -> StopCheck {
    let k_beta = penalty.apply_vec(&state.beta);
    let mut ws = Workspace::new(penalty, 0);
    stopping_from(&k_beta, state, theta_prev, penalty, config, &mut ws)
}

fn stopping_from(
    k_beta: &[f64],
    state: &AdmmState,
    theta_prev: &[f64],
    penalty: &PenaltyOperator,
    config: &AdmmConfig,
    ws: &mut Workspace,
) -> StopCheck {
    let theta = &state.theta;
    let mut r2 = 0.0;
    for (&t, &kb) in theta.iter().zip(k_beta) {
        r2 += (t - kb) * (t - kb);
    }
    for ((d, &t), &tp) in ws.rows.iter_mut().zip(theta).zip(theta_prev) {
        *d = t - tp;
    }
    penalty.apply_transpose(&ws.rows, &mut ws.rhs);
    let s_norm = state.rho * norm2(&ws.rhs);
    penalty.apply_transpose(&state.mu, &mut ws.rhs);
    let kt_mu = norm2(&ws.rhs);

    let abs_dim = match config.primal_scale {
        PrimalScale::Coefficients => penalty.p(),
        PrimalScale::Theta => theta.len(),
    } as f64;
    let eps_pri =
        abs_dim.sqrt() * config.eps_abs + config.eps_rel * norm2(k_beta).max(norm2(theta));
    let eps_dual = (theta.len() as f64).sqrt() * config.eps_abs + config.eps_rel * kt_mu;
    let r_norm = r2.sqrt();
    StopCheck {
        stop: r_norm <= eps_pri && s_norm <= eps_dual,
        r_norm,
        s_norm,
        eps_pri,
        eps_dual,
    }
}

/// Residual balancing: grow `rho` by `tau` when the primal residual exceeds
/// `eta` times the dual residual, shrink it when the dual residual exceeds
/// `eta` times the primal one, otherwise hold. Returns whether `rho` changed.
pub fn adapt_rho(state: &mut AdmmState, config: &AdmmConfig) -> bool {
    let (r, s) = (state.r_norm, state.s_norm);
    if r > config.eta * s {
        state.rho *= config.tau;
        true
    } else if s > config.eta * r {
        state.rho /= config.tau;
        true
    } else {
        false
    }
}

/// Value of the objective at `beta`.
pub fn objective(
    x: &DMatrix<f64>,
    y: &[f64],
    beta: &[f64],
    penalty: &PenaltyOperator,
    lambdas: &Lambdas,
) -> f64 {
    let fitted = x * DVector::from_column_slice(beta);
    let loss: f64 = fitted
        .iter()
        .zip(y)
        .map(|(f, yi)| (yi - f) * (yi - f))
        .sum::<f64>()
        * 0.5;
    loss + penalty.penalty_value(&penalty.apply_vec(beta), lambdas)
}

/// Coefficients whose lasso entry and group entry of `theta` are both nonzero.
pub fn support_from_theta(theta: &[f64], penalty: &PenaltyOperator) -> Vec<usize> {
    (0..penalty.p())
        .filter(|&j| theta[j] != 0.0 && theta[penalty.group_row_of(j)] != 0.0)
        .collect()
}

struct Workspace {
    rows: Vec<f64>,
    rhs: Vec<f64>,
    fitted: DVector<f64>,
}

impl Workspace {
    fn new(penalty: &PenaltyOperator, n: usize) -> Self {
        Self {
            rows: vec![0.0; penalty.n_rows()],
            rhs: vec![0.0; penalty.p()],
            fitted: DVector::zeros(n),
        }
    }
}

/// Solver bound to one design, response and penalty; reusable across
/// regularization levels and warm starts.
pub struct AdmmSolver<'a> {
    system: &'a NormalSystem,
    penalty: &'a PenaltyOperator,
    y: &'a [f64],
    xty: Vec<f64>,
    config: AdmmConfig,
}

impl<'a> AdmmSolver<'a> {
    pub fn new(
        system: &'a NormalSystem,
        y: &'a [f64],
        penalty: &'a PenaltyOperator,
        config: AdmmConfig,
    ) -> Result<Self> {
        config.validate()?;
        if y.len() != system.n() {
            return validation(format!(
                "response has {} entries but design has {} rows",
                y.len(),
                system.n()
            ));
        }
        if system.p() != penalty.p() {
            return validation(format!(
                "design has {} columns but penalty has p = {}",
                system.p(),
                penalty.p()
            ));
        }
        let xty = system.x().tr_mul(&DVector::from_column_slice(y));
        Ok(Self {
            system,
            penalty,
            y,
            xty: xty.as_slice().to_vec(),
            config,
        })
    }

    pub fn config(&self) -> &AdmmConfig {
        &self.config
    }

    fn objective_from(&self, fitted: &DVector<f64>, k_beta: &[f64], lambdas: &Lambdas) -> f64 {
        let loss: f64 = fitted
            .iter()
            .zip(self.y)
            .map(|(f, yi)| (yi - f) * (yi - f))
            .sum::<f64>();
        0.5 * loss + self.penalty.penalty_value(k_beta, lambdas)
    }

    pub fn solve(&self, lambdas: &Lambdas, warm_start: Option<&AdmmState>) -> Result<Solution> {
        let penalty = self.penalty;
        let config = &self.config;
        if lambdas.is_zero() && self.system.n() < penalty.p() {
            return validation(
                "all regularization levels are zero with n < p; the least-squares solution is not unique",
            );
        }
        let mut state = match warm_start {
            Some(s) => {
                s.check_shape(penalty)?;
                s.clone()
            }
            None => AdmmState::zeros(penalty, config.rho0),
        };
        state.iter = 0;

        let mut ws = Workspace::new(penalty, self.system.n());
        let mut k_beta = vec![0.0; penalty.n_rows()];
        let mut theta_prev = vec![0.0; penalty.n_rows()];
        let mut beta = std::mem::take(&mut state.beta);
        let mut factor = self.system.factor(state.rho)?;
        let mut trace = Vec::new();
        let mut converged = false;
        let mut objective = f64::NAN;

        for t in 1..=config.max_iter {
            beta_update_into(
                &state,
                &factor,
                self.system,
                &self.xty,
                penalty,
                &mut ws,
                &mut beta,
            )?;
            penalty.apply(&beta, &mut k_beta);
            theta_prev.copy_from_slice(&state.theta);
            theta_update_from(
                &k_beta,
                &state.mu,
                state.rho,
                penalty,
                lambdas,
                &mut state.theta,
            );
            mu_update_from(&k_beta, &state.theta, state.rho, &mut state.mu);

            let check = stopping_from(&k_beta, &state, &theta_prev, penalty, config, &mut ws);
            state.iter = t;
            state.r_norm = check.r_norm;
            state.s_norm = check.s_norm;
            state.eps_pri = check.eps_pri;
            state.eps_dual = check.eps_dual;

            if !check.r_norm.is_finite() || !check.s_norm.is_finite() {
                return Err(non_finite(t, &state, &factor));
            }
            if config.record_trace {
                objective = self.objective_from(&ws.fitted, &k_beta, lambdas);
                if !objective.is_finite() {
                    return Err(non_finite(t, &state, &factor));
                }
                trace.push(TraceRow {
                    iter: t,
                    r_norm: check.r_norm,
                    s_norm: check.s_norm,
                    eps_pri: check.eps_pri,
                    eps_dual: check.eps_dual,
                    rho: state.rho,
                    objective,
                });
            }
            if check.stop {
                converged = true;
                break;
            }
            if t % config.rho_update_period == 0 && adapt_rho(&mut state, config) {
                factor = self.system.factor(state.rho)?;
            }
        }

        if !config.record_trace {
            objective = self.objective_from(&ws.fitted, &k_beta, lambdas);
        }
        state.beta = beta;
        let support = support_from_theta(&state.theta, penalty);
        let report = SolveReport {
            converged,
            iterations: state.iter,
            objective,
            r_norm: state.r_norm,
            s_norm: state.s_norm,
            eps_pri: state.eps_pri,
            eps_dual: state.eps_dual,
            trace,
        };
        Ok(Solution {
            beta: state.beta.clone(),
            support,
            state,
            report,
        })
    }
}

fn non_finite(t: usize, state: &AdmmState, factor: &BetaFactor) -> FsglError {
    FsglError::Internal(format!(
        "non-finite iterate at iteration {t} (rho = {}, min pivot = {:e})",
        state.rho,
        factor.min_pivot()
    ))
}

/// One-shot solve: builds the linear system for `x` and runs ADMM.
pub fn solve(
    x: &DMatrix<f64>,
    y: &[f64],
    penalty: &PenaltyOperator,
    lambdas: &Lambdas,
    config: &AdmmConfig,
    warm_start: Option<&AdmmState>,
) -> Result<Solution> {
    if x.ncols() != penalty.p() {
        return validation(format!(
            "design has {} columns but penalty has p = {}",
            x.ncols(),
            penalty.p()
        ));
    }
    let system = NormalSystem::new(x, penalty)?;
    AdmmSolver::new(&system, y, penalty, *config)?.solve(lambdas, warm_start)
}
