//! Simulation scenarios on a 20x20 image grid and the replicate experiment.
//!
//! Random numbers come from ChaCha8 (`rand_chacha`) seeded with
//! `seed_from_u64`, one stream per replicate. Normal deviates use the
//! Box-Muller transform on 53-bit uniforms, so datasets can be regenerated
//! bit for bit by any implementation of the same recipe.

use std::fmt;
use std::str::FromStr;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::AdmmConfig;
use crate::error::{validation, FsglError, Result};
use crate::model::{fit, mse_beta, mse_pred, standardize, TuningPoint};
use crate::penalty::{
    build_fusion_matrix, build_penalty_operator, GridSpec, GroupPartition, PenaltyOperator,
};
use crate::tuning::{cross_validate, lambda_grid, make_folds, CvOptions};

pub const SIDE: usize = 20;
pub const P: usize = SIDE * SIDE;
pub const N_GROUPS: usize = 16;
pub const SIGNAL: f64 = 3.0;
pub const NOISE_SD: f64 = 2.0;
pub const N_TRAIN: usize = 50;
pub const N_TEST: usize = 50;
pub const N_BV: usize = 100;
pub const DEFAULT_REPLICATES: usize = 20;

/// Standard normal deviates by Box-Muller, caching the second value of
/// each pair.
pub struct NormalSource<R: RngCore> {
    rng: R,
    spare: Option<f64>,
}

impl<R: RngCore> NormalSource<R> {
    pub fn new(rng: R) -> Self {
        Self { rng, spare: None }
    }

    /// Uniform on `(0, 1]`.
    fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let t = std::f64::consts::TAU * u2;
        self.spare = Some(r * t.sin());
        r * t.cos()
    }

    pub fn rng_mut(&mut self) -> &mut R {
        &mut self.rng
    }
}

/// Seeded ChaCha8 stream.
pub fn stream(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroupLayout {
    /// Each group is one 5x5 square.
    Aggregated,
    /// Each group is one 3x3, three 2x2 and two 1x2 pieces.
    Partial,
    /// No two pixels of a group share an edge.
    Distributed,
}

impl fmt::Display for GroupLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GroupLayout::Aggregated => "aggregated",
            GroupLayout::Partial => "partial",
            GroupLayout::Distributed => "distributed",
        })
    }
}

/// Pieces of each 5x5 block in the partial layout: (row, col, height,
/// width, group offset). The piece in block `b` belongs to group
/// `(b + offset) mod 16`.
const PARTIAL_PIECES: [(usize, usize, usize, usize, usize); 6] = [
    (0, 0, 3, 3, 0),
    (0, 3, 2, 2, 5),
    (3, 0, 2, 2, 10),
    (3, 2, 2, 2, 15),
    (2, 3, 1, 2, 7),
    (3, 4, 2, 1, 13),
];

fn block_of(r: usize, c: usize) -> usize {
    (r / 5) * 4 + c / 5
}

/// 1-based group id of every pixel (row-major) for a layout.
pub fn layout_assignment(layout: GroupLayout) -> Vec<usize> {
    let mut out = vec![0; P];
    for r in 0..SIDE {
        for c in 0..SIDE {
            out[r * SIDE + c] = match layout {
                GroupLayout::Aggregated => block_of(r, c) + 1,
                GroupLayout::Distributed => (r % 4) * 4 + c % 4 + 1,
                GroupLayout::Partial => {
                    let (rr, cc) = (r % 5, c % 5);
                    let piece = PARTIAL_PIECES
                        .iter()
                        .find(|&&(pr, pc, h, w, _)| {
                            (pr..pr + h).contains(&rr) && (pc..pc + w).contains(&cc)
                        })
                        .expect("pieces tile the block");
                    (block_of(r, c) + piece.4) % N_GROUPS + 1
                }
            };
        }
    }
    out
}

/// Pixels of one partial-layout piece kind belonging to `group`.
fn partial_piece_cells(group: usize, piece: usize) -> Vec<usize> {
    let (pr, pc, h, w, off) = PARTIAL_PIECES[piece];
    let block = (group - 1 + N_GROUPS - off) % N_GROUPS;
    let (r0, c0) = ((block / 4) * 5 + pr, (block % 4) * 5 + pc);
    (r0..r0 + h)
        .flat_map(|r| (c0..c0 + w).map(move |c| r * SIDE + c))
        .collect()
}

/// Partial layout with group 1's three 2x2 pieces exchanged for one 2x2
/// piece each of groups 2, 3 and 4.
pub fn misspecified_assignment() -> Vec<usize> {
    let mut out = layout_assignment(GroupLayout::Partial);
    for (k, other) in [(1usize, 2usize), (2, 3), (3, 4)] {
        for cell in partial_piece_cells(1, k) {
            out[cell] = other;
        }
        for cell in partial_piece_cells(other, k) {
            out[cell] = 1;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    S1A,
    S2B,
    S3C,
    S4A,
    S5B,
    S6C,
    S7B,
    S8B,
    S9B,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 9] = [
        ScenarioId::S1A,
        ScenarioId::S2B,
        ScenarioId::S3C,
        ScenarioId::S4A,
        ScenarioId::S5B,
        ScenarioId::S6C,
        ScenarioId::S7B,
        ScenarioId::S8B,
        ScenarioId::S9B,
    ];

    pub fn layout(self) -> GroupLayout {
        use ScenarioId::*;
        match self {
            S1A | S4A => GroupLayout::Aggregated,
            S3C | S6C => GroupLayout::Distributed,
            _ => GroupLayout::Partial,
        }
    }

    /// Fraction of the active group's pixels set to zero.
    pub fn sparsity(self) -> f64 {
        use ScenarioId::*;
        match self {
            S4A | S5B | S6C | S9B => 0.4,
            S7B => 0.8,
            _ => 0.0,
        }
    }

    pub fn misspecified(self) -> bool {
        matches!(self, ScenarioId::S8B | ScenarioId::S9B)
    }

    pub fn as_str(self) -> &'static str {
        use ScenarioId::*;
        match self {
            S1A => "1A",
            S2B => "2B",
            S3C => "3C",
            S4A => "4A",
            S5B => "5B",
            S6C => "6C",
            S7B => "7B",
            S8B => "8B",
            S9B => "9B",
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioId {
    type Err = FsglError;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioId::ALL
            .iter()
            .copied()
            .find(|id| id.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| FsglError::Validation(format!("unknown scenario '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: ScenarioId,
    pub layout: GroupLayout,
    pub beta_true: Vec<f64>,
    pub groups: GroupPartition,
    pub sparsity: f64,
    pub misspecified: bool,
}

impl Scenario {
    pub fn grid() -> GridSpec {
        GridSpec::new(&[SIDE, SIDE]).expect("fixed grid")
    }

    pub fn penalty(&self) -> Result<PenaltyOperator> {
        let fusion = build_fusion_matrix(&Self::grid())?;
        build_penalty_operator(&fusion, &self.groups, None)
    }

    pub fn nonzero(&self) -> Vec<usize> {
        (0..P).filter(|&j| self.beta_true[j] != 0.0).collect()
    }
}

pub fn build_scenario(id: ScenarioId, seed: u64) -> Result<Scenario> {
    let layout = id.layout();
    // The true signal always sits on the unmodified layout's group 1.
    let base = layout_assignment(layout);
    let active: Vec<usize> = (0..P).filter(|&j| base[j] == 1).collect();
    let assignment = if id.misspecified() {
        misspecified_assignment()
    } else {
        base
    };
    let mut beta_true = vec![0.0; P];
    for &j in &active {
        beta_true[j] = SIGNAL;
    }
    let n_zero = (id.sparsity() * active.len() as f64).round() as usize;
    if n_zero > 0 {
        let mut rng = stream(seed, u64::MAX);
        for k in sample(&mut rng, active.len(), n_zero) {
            beta_true[active[k]] = 0.0;
        }
    }
    Ok(Scenario {
        id,
        layout,
        beta_true,
        groups: GroupPartition::new(assignment)?,
        sparsity: id.sparsity(),
        misspecified: id.misspecified(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDataset {
    pub x_train: DMatrix<f64>,
    pub y_train: Vec<f64>,
    pub x_test: DMatrix<f64>,
    pub y_test: Vec<f64>,
    /// Shared across replicates of the same seed.
    pub x_bv: DMatrix<f64>,
    /// `x_bv * beta_true`.
    pub mean_bv: Vec<f64>,
    pub seed: u64,
    pub replicate: u64,
}

fn normal_matrix(src: &mut NormalSource<ChaCha8Rng>, n: usize, p: usize) -> DMatrix<f64> {
    // Row-major draw order.
    let mut m = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            m[(i, j)] = src.next();
        }
    }
    m
}

fn responses(
    src: &mut NormalSource<ChaCha8Rng>,
    x: &DMatrix<f64>,
    beta: &[f64],
    sd: f64,
) -> Vec<f64> {
    let mean = x * DVector::from_column_slice(beta);
    mean.iter().map(|m| m + sd * src.next()).collect()
}

/// Training and test samples for one replicate (stream `replicate + 1`) and
/// the bias-variance design (stream 0).
pub fn generate_dataset(scenario: &Scenario, seed: u64, replicate: u64) -> SimDataset {
    let p = scenario.beta_true.len();
    let mut src = NormalSource::new(stream(seed, replicate + 1));
    let x_train = normal_matrix(&mut src, N_TRAIN, p);
    let y_train = responses(&mut src, &x_train, &scenario.beta_true, NOISE_SD);
    let x_test = normal_matrix(&mut src, N_TEST, p);
    let y_test = responses(&mut src, &x_test, &scenario.beta_true, NOISE_SD);
    let mut bv = NormalSource::new(stream(seed, 0));
    let x_bv = normal_matrix(&mut bv, N_BV, p);
    let mean_bv = (&x_bv * DVector::from_column_slice(&scenario.beta_true))
        .iter()
        .copied()
        .collect();
    SimDataset {
        x_train,
        y_train,
        x_test,
        y_test,
        x_bv,
        mean_bv,
        seed,
        replicate,
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSettings {
    pub n_replicates: usize,
    pub pairs: Vec<(f64, f64)>,
    /// `(x_min, x_max, count)` for `10^x`.
    pub lambda_grid: (f64, f64, usize),
    pub folds: usize,
    pub config: AdmmConfig,
    pub seed: u64,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            n_replicates: DEFAULT_REPLICATES,
            pairs: crate::tuning::alpha_gamma_grid(
                &crate::tuning::DEFAULT_LEVELS,
                &crate::tuning::DEFAULT_LEVELS,
            ),
            lambda_grid: (-3.0, 3.0, 50),
            folds: 5,
            config: AdmmConfig::default(),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub alpha: f64,
    pub gamma: f64,
    pub lambda_opt: f64,
    pub cv_mse: f64,
    pub mse_beta: f64,
    pub mse_pred: f64,
    #[serde(skip)]
    pub bv_predictions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    /// One entry per pair that produced a converged CV cell, in grid order.
    pub cells: Vec<CellOutcome>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criterion {
    CvError,
    MseBeta,
    MsePred,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::CvError, Criterion::MseBeta, Criterion::MsePred];

    pub fn value(self, c: &CellOutcome) -> f64 {
        match self {
            Criterion::CvError => c.cv_mse,
            Criterion::MseBeta => c.mse_beta,
            Criterion::MsePred => c.mse_pred,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Criterion::CvError => "mean_cve",
            Criterion::MseBeta => "mse_beta",
            Criterion::MsePred => "mse_pred",
        }
    }
}

impl ReplicateResult {
    /// Cell minimizing a criterion; ties go to larger gamma, then smaller
    /// alpha.
    pub fn best(&self, criterion: Criterion) -> Option<&CellOutcome> {
        self.cells.iter().min_by(|a, b| {
            criterion
                .value(a)
                .total_cmp(&criterion.value(b))
                .then(b.gamma.total_cmp(&a.gamma))
                .then(a.alpha.total_cmp(&b.alpha))
        })
    }

    /// Whether the lowest-CV-error cell is also the lowest test-error cell.
    pub fn cv_matches_test(&self) -> bool {
        match (self.best(Criterion::CvError), self.best(Criterion::MsePred)) {
            (Some(a), Some(b)) => (a.alpha, a.gamma) == (b.alpha, b.gamma),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasVariance {
    pub alpha: f64,
    pub gamma: f64,
    pub squared_bias: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: ScenarioId,
    pub pairs: Vec<(f64, f64)>,
    pub replicates: Vec<ReplicateResult>,
    pub bias_variance: Vec<BiasVariance>,
}

impl ExperimentReport {
    /// How often each pair is optimal under a criterion, in pair order.
    pub fn frequencies(&self, criterion: Criterion) -> Vec<usize> {
        let mut counts = vec![0; self.pairs.len()];
        for r in &self.replicates {
            if let Some(best) = r.best(criterion) {
                if let Some(i) = self
                    .pairs
                    .iter()
                    .position(|&p| p == (best.alpha, best.gamma))
                {
                    counts[i] += 1;
                }
            }
        }
        counts
    }

    /// Most frequent optimal pair; ties go to the earlier pair in the grid.
    pub fn modal(&self, criterion: Criterion) -> Option<(f64, f64)> {
        let counts = self.frequencies(criterion);
        let max = *counts.iter().max()?;
        if max == 0 {
            return None;
        }
        counts.iter().position(|&c| c == max).map(|i| self.pairs[i])
    }

    /// Per-replicate values of a criterion at one pair.
    pub fn values(&self, pair: (f64, f64), criterion: Criterion) -> Vec<f64> {
        self.replicates
            .iter()
            .filter_map(|r| r.cells.iter().find(|c| (c.alpha, c.gamma) == pair))
            .map(|c| criterion.value(c))
            .collect()
    }

    pub fn median(&self, pair: (f64, f64), criterion: Criterion) -> Option<f64> {
        median(&self.values(pair, criterion))
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

fn fold_seed(seed: u64, replicate: usize) -> u64 {
    seed ^ (replicate as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// CV over the grid, then a full-training refit of every pair at its
/// selected lambda, scored on the test and bias-variance samples.
pub fn run_replicate(
    scenario: &Scenario,
    penalty: &PenaltyOperator,
    settings: &ExperimentSettings,
    replicate: usize,
) -> Result<ReplicateResult> {
    let data = generate_dataset(scenario, settings.seed, replicate as u64);
    let (x_min, x_max, count) = settings.lambda_grid;
    let lambdas = lambda_grid(x_min, x_max, count)?;
    let plan = make_folds(
        &data.y_train,
        settings.folds,
        false,
        fold_seed(settings.seed, replicate),
    )?;
    let surface = cross_validate(
        &data.x_train,
        &data.y_train,
        penalty,
        &settings.pairs,
        &lambdas,
        &plan,
        &settings.config,
        &CvOptions::default(),
    )?;
    let design = standardize(&data.x_train, &data.y_train)?;

    // Pairs with identical penalties at the selected lambda share a refit.
    let mut jobs: Vec<(TuningPoint, f64)> = Vec::new();
    let mut job_of = Vec::with_capacity(settings.pairs.len());
    for (pi, &(alpha, gamma)) in settings.pairs.iter().enumerate() {
        let Some(sel) = surface.selected(pi) else {
            warn!("replicate {replicate}: no converged lambda for (alpha {alpha}, gamma {gamma})");
            job_of.push(None);
            continue;
        };
        let tp = TuningPoint::new(sel.lambda, alpha, gamma)?;
        let idx = jobs
            .iter()
            .position(|(t, _)| t.lambdas() == tp.lambdas())
            .unwrap_or_else(|| {
                jobs.push((tp, sel.mean_mse));
                jobs.len() - 1
            });
        job_of.push(Some((idx, sel.mean_mse, sel.lambda)));
    }
    let fits = jobs
        .par_iter()
        .map(|(tp, _)| {
            let config = AdmmConfig {
                record_trace: false,
                ..settings.config
            };
            fit(&design, penalty, tp, &config, None)
        })
        .collect::<Result<Vec<_>>>()?;
    let scored = fits
        .iter()
        .map(|f| -> Result<(f64, f64, Vec<f64>)> {
            let mb = mse_beta(&f.beta_orig, &scenario.beta_true)?;
            let mp = mse_pred(&f.predict_raw(&data.x_test)?, &data.y_test)?;
            Ok((mb, mp, f.predict_raw(&data.x_bv)?))
        })
        .collect::<Result<Vec<_>>>()?;

    let cells = settings
        .pairs
        .iter()
        .zip(&job_of)
        .filter_map(|(&(alpha, gamma), job)| {
            job.map(|(idx, cv_mse, lambda_opt)| CellOutcome {
                alpha,
                gamma,
                lambda_opt,
                cv_mse,
                mse_beta: scored[idx].0,
                mse_pred: scored[idx].1,
                bv_predictions: scored[idx].2.clone(),
            })
        })
        .collect();
    Ok(ReplicateResult { replicate, cells })
}

pub fn run_experiment(
    scenario: &Scenario,
    settings: &ExperimentSettings,
) -> Result<ExperimentReport> {
    if settings.n_replicates < 1 {
        return validation("need at least one replicate");
    }
    if settings.pairs.is_empty() {
        return validation("alpha/gamma grid must be nonempty");
    }
    let penalty = scenario.penalty()?;
    let outcomes: Vec<Result<ReplicateResult>> = (0..settings.n_replicates)
        .into_par_iter()
        .map(|r| run_replicate(scenario, &penalty, settings, r))
        .collect();
    let mut replicates = Vec::with_capacity(outcomes.len());
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(rep) if !rep.cells.is_empty() => replicates.push(rep),
            Ok(_) => warn!("replicate {r} excluded: every cell failed"),
            Err(FsglError::Internal(msg)) => warn!("replicate {r} excluded: {msg}"),
            Err(e) => return Err(e),
        }
    }
    if replicates.is_empty() {
        return Err(FsglError::Internal("every replicate failed".into()));
    }
    let truth = generate_dataset(scenario, settings.seed, 0).mean_bv;
    let mut bias_variance = Vec::new();
    if replicates.len() >= 2 {
        for &(alpha, gamma) in &settings.pairs {
            let preds: Vec<&Vec<f64>> = replicates
                .iter()
                .filter_map(|r| {
                    r.cells
                        .iter()
                        .find(|c| (c.alpha, c.gamma) == (alpha, gamma))
                })
                .map(|c| &c.bv_predictions)
                .collect();
            if preds.len() < 2 {
                continue;
            }
            let m = DMatrix::from_fn(preds.len(), truth.len(), |i, j| preds[i][j]);
            let (squared_bias, variance) = crate::model::bias_variance_decompose(&m, &truth)?;
            bias_variance.push(BiasVariance {
                alpha,
                gamma,
                squared_bias,
                variance,
            });
        }
    }
    Ok(ExperimentReport {
        scenario: scenario.id,
        pairs: settings.pairs.clone(),
        replicates,
        bias_variance,
    })
}
