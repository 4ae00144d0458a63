//! Fold construction, regularization grids and cross-validated selection of
//! `(alpha, gamma, lambda)`.

use std::cmp::Ordering;

use log::warn;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::{AdmmConfig, AdmmSolver, AdmmState, Lambdas};
use crate::error::{validation, FsglError, Result};
use crate::linalg::NormalSystem;
use crate::model::{adaptive_weights, ridge_solve, standardize, StandardizedDesign, TuningPoint};
use crate::penalty::{FusionStructure, PenaltyOperator};

/// Assignment of observations to `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvPlan {
    pub k: usize,
    pub fold_assignment: Vec<usize>,
    pub stratified: bool,
    pub seed: u64,
}

impl CvPlan {
    pub fn n(&self) -> usize {
        self.fold_assignment.len()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.fold_assignment[i] != fold)
            .collect()
    }

    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.fold_assignment[i] == fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_assignment {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Random folds of near-equal size. In stratified mode observations are
/// sorted by `y`, cut into consecutive blocks of `k`, and each block sends
/// one member to each fold in random order.
pub fn make_folds(y: &[f64], k: usize, stratified: bool, seed: u64) -> Result<CvPlan> {
    let n = y.len();
    if k < 2 || k > n {
        return validation(format!("need 2 <= k <= n, got k = {k}, n = {n}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_assignment = vec![0; n];
    if stratified {
        if y.iter().any(|v| v.is_nan()) {
            return validation("response contains NaN");
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
        let mut folds: Vec<usize> = (0..k).collect();
        for block in order.chunks(k) {
            folds.shuffle(&mut rng);
            for (&i, &f) in block.iter().zip(&folds) {
                fold_assignment[i] = f;
            }
        }
    } else {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        for (pos, &i) in perm.iter().enumerate() {
            fold_assignment[i] = pos % k;
        }
    }
    Ok(CvPlan {
        k,
        fold_assignment,
        stratified,
        seed,
    })
}

/// `count` values `10^x` with `x` evenly spaced on `[x_min, x_max]`,
/// largest first.
pub fn lambda_grid(x_min: f64, x_max: f64, count: usize) -> Result<Vec<f64>> {
    if count < 2 || !(x_min < x_max) || !x_min.is_finite() || !x_max.is_finite() {
        return validation(format!(
            "lambda grid needs count >= 2 and x_min < x_max, got ({x_min}, {x_max}, {count})"
        ));
    }
    let step = (x_max - x_min) / (count - 1) as f64;
    Ok((0..count)
        .rev()
        .map(|i| 10f64.powf(x_min + i as f64 * step))
        .collect())
}

/// The `{0, 0.2, 0.5, 0.8, 1}` levels used for both `alpha` and `gamma`.
pub const DEFAULT_LEVELS: [f64; 5] = [0.0, 0.2, 0.5, 0.8, 1.0];

/// Cartesian product of alpha and gamma levels, alpha-major.
pub fn alpha_gamma_grid(alphas: &[f64], gammas: &[f64]) -> Vec<(f64, f64)> {
    alphas
        .iter()
        .flat_map(|&a| gammas.iter().map(move |&g| (a, g)))
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct CvOptions {
    /// Standardize once on all rows before splitting instead of per fold.
    pub global_standardize: bool,
    /// Per-block penalty weights; `None` keeps the operator's own.
    pub weights: Option<Vec<f64>>,
    /// Recompute adaptive weights inside each fold from a ridge fit on the
    /// fold's training rows. Takes precedence over `weights`.
    pub fold_adaptive: Option<FoldAdaptive>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoldAdaptive {
    pub ridge_lambda: f64,
    pub cap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCell {
    pub alpha: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub fold_mse: Vec<f64>,
    pub mean_mse: f64,
    /// Every fold's solve converged.
    pub converged: bool,
    pub selected: bool,
    pub iterations: usize,
}

/// Cells ordered pair-major, lambda-minor (lambda in grid order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSurface {
    pub pairs: Vec<(f64, f64)>,
    pub lambdas: Vec<f64>,
    pub k: usize,
    pub cells: Vec<CvCell>,
}

impl CvSurface {
    pub fn cell(&self, pair: usize, lambda: usize) -> &CvCell {
        &self.cells[pair * self.lambdas.len() + lambda]
    }

    pub fn pair_cells(&self, pair: usize) -> &[CvCell] {
        let l = self.lambdas.len();
        &self.cells[pair * l..(pair + 1) * l]
    }

    /// The selected cell for one `(alpha, gamma)` pair, if any converged.
    pub fn selected(&self, pair: usize) -> Option<&CvCell> {
        self.pair_cells(pair).iter().find(|c| c.selected)
    }

    /// Index of the pair whose selected cell has the lowest mean CV error,
    /// using the same tie-breaks as [`select_model`].
    pub fn best_pair(&self) -> Option<usize> {
        (0..self.pairs.len())
            .filter_map(|i| self.selected(i).map(|c| (i, c)))
            .min_by(|a, b| global_order(a.1, b.1))
            .map(|(i, _)| i)
    }
}

/// Lower mean wins; ties go to larger lambda, then larger gamma, then
/// smaller alpha.
fn global_order(a: &CvCell, b: &CvCell) -> Ordering {
    a.mean_mse
        .total_cmp(&b.mean_mse)
        .then(b.lambda.total_cmp(&a.lambda))
        .then(b.gamma.total_cmp(&a.gamma))
        .then(a.alpha.total_cmp(&b.alpha))
}

fn rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    x.select_rows(idx)
}

fn pick(v: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| v[i]).collect()
}

/// Training design and standardized validation rows for one fold.
struct FoldData {
    train: StandardizedDesign,
    val_x: DMatrix<f64>,
    val_y: Vec<f64>,
}

fn fold_data(
    x_raw: &DMatrix<f64>,
    y_raw: &[f64],
    plan: &CvPlan,
    global: Option<&StandardizedDesign>,
) -> Result<Vec<FoldData>> {
    (0..plan.k)
        .map(|f| {
            let tr = plan.train_indices(f);
            let te = plan.test_indices(f);
            match global {
                None => {
                    let train = standardize(&rows(x_raw, &tr), &pick(y_raw, &tr))?;
                    let val_x = train.transform(&rows(x_raw, &te))?;
                    let val_y = pick(y_raw, &te);
                    Ok(FoldData {
                        train,
                        val_x,
                        val_y,
                    })
                }
                Some(g) => {
                    // Columns are already standardized; only the response is
                    // centered on the training rows.
                    let y_tr = pick(&g.y_centered, &tr);
                    let y_mean = y_tr.iter().sum::<f64>() / tr.len() as f64;
                    let p = g.p();
                    let train = StandardizedDesign {
                        x_std: rows(&g.x_std, &tr),
                        col_means: vec![0.0; p],
                        col_sds: vec![1.0; p],
                        constant: g.constant.clone(),
                        y_mean,
                        y_centered: y_tr.iter().map(|v| v - y_mean).collect(),
                    };
                    Ok(FoldData {
                        train,
                        val_x: rows(&g.x_std, &te),
                        val_y: pick(&g.y_centered, &te),
                    })
                }
            }
        })
        .collect()
}

/// Lambda triples for every pair, with pairs that produce bit-identical
/// triples along the whole grid sharing one computation.
fn distinct_streams(
    pairs: &[(f64, f64)],
    lambdas: &[f64],
) -> Result<(Vec<Vec<Lambdas>>, Vec<usize>)> {
    let mut streams: Vec<Vec<Lambdas>> = Vec::new();
    let mut owner = Vec::with_capacity(pairs.len());
    for &(alpha, gamma) in pairs {
        let path = lambdas
            .iter()
            .map(|&l| TuningPoint::new(l, alpha, gamma).map(|t| t.lambdas()))
            .collect::<Result<Vec<_>>>()?;
        match streams.iter().position(|s| *s == path) {
            Some(i) => owner.push(i),
            None => {
                owner.push(streams.len());
                streams.push(path);
            }
        }
    }
    Ok((streams, owner))
}

struct PathPoint {
    mse: f64,
    converged: bool,
    iterations: usize,
}

fn validation_mse(fold: &FoldData, beta: &[f64]) -> f64 {
    let n = fold.val_y.len();
    let mut sse = 0.0;
    for i in 0..n {
        let mut yhat = fold.train.y_mean;
        for (j, b) in beta.iter().enumerate() {
            if *b != 0.0 && !fold.train.constant[j] {
                yhat += fold.val_x[(i, j)] * b;
            }
        }
        sse += (fold.val_y[i] - yhat).powi(2);
    }
    sse / n as f64
}

fn run_path(
    fold: &FoldData,
    system: &NormalSystem,
    penalty: &PenaltyOperator,
    path: &[Lambdas],
    config: &AdmmConfig,
) -> Result<Vec<PathPoint>> {
    let config = AdmmConfig {
        record_trace: false,
        ..*config
    };
    let solver = AdmmSolver::new(system, &fold.train.y_centered, penalty, config)?;
    let mut warm: Option<AdmmState> = None;
    let mut out = Vec::with_capacity(path.len());
    for lambdas in path {
        let sol = solver.solve(lambdas, warm.as_ref())?;
        out.push(PathPoint {
            mse: validation_mse(fold, &sol.beta),
            converged: sol.report.converged,
            iterations: sol.report.iterations,
        });
        warm = Some(sol.state);
    }
    Ok(out)
}

/// K-fold cross-validation over every `(alpha, gamma)` pair and `lambda`.
/// Fits along each pair's lambda path are warm-started in grid order, so
/// `lambdas` should be descending (as [`lambda_grid`] returns them).
pub fn cross_validate(
    x_raw: &DMatrix<f64>,
    y_raw: &[f64],
    penalty: &PenaltyOperator,
    pairs: &[(f64, f64)],
    lambdas: &[f64],
    plan: &CvPlan,
    config: &AdmmConfig,
    options: &CvOptions,
) -> Result<CvSurface> {
    if pairs.is_empty() || lambdas.is_empty() {
        return validation("alpha/gamma and lambda grids must be nonempty");
    }
    if plan.n() != y_raw.len() || x_raw.nrows() != y_raw.len() {
        return validation("fold plan, design and response disagree on n");
    }
    if x_raw.ncols() != penalty.p() {
        return validation(format!(
            "design has {} columns but penalty has p = {}",
            x_raw.ncols(),
            penalty.p()
        ));
    }
    config.validate()?;
    let reweighted;
    let penalty = match &options.weights {
        Some(w) => {
            reweighted = penalty.with_weights(w)?;
            &reweighted
        }
        None => penalty,
    };
    let global = if options.global_standardize {
        Some(standardize(x_raw, y_raw)?)
    } else {
        None
    };
    let folds = fold_data(x_raw, y_raw, plan, global.as_ref())?;
    let fold_penalties: Vec<PenaltyOperator> = match options.fold_adaptive {
        Some(a) => {
            let fusion = FusionStructure::from_edges(penalty.p(), penalty.edges().to_vec())?;
            folds
                .iter()
                .map(|f| {
                    let b = ridge_solve(&f.train.x_std, &f.train.y_centered, a.ridge_lambda)?;
                    penalty.with_weights(&adaptive_weights(&b, &fusion, penalty.groups(), a.cap)?)
                })
                .collect::<Result<_>>()?
        }
        None => vec![penalty.clone(); plan.k],
    };
    let systems = folds
        .par_iter()
        .zip(&fold_penalties)
        .map(|(f, pen)| NormalSystem::new(&f.train.x_std, pen))
        .collect::<Result<Vec<_>>>()?;
    let (streams, owner) = distinct_streams(pairs, lambdas)?;

    let tasks: Vec<(usize, usize)> = (0..streams.len())
        .flat_map(|s| (0..plan.k).map(move |f| (s, f)))
        .collect();
    let results = tasks
        .par_iter()
        .map(|&(s, f)| {
            run_path(
                &folds[f],
                &systems[f],
                &fold_penalties[f],
                &streams[s],
                config,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let mut cells = Vec::with_capacity(pairs.len() * lambdas.len());
    for (pi, &(alpha, gamma)) in pairs.iter().enumerate() {
        let s = owner[pi];
        for (li, &lambda) in lambdas.iter().enumerate() {
            let points: Vec<&PathPoint> =
                (0..plan.k).map(|f| &results[s * plan.k + f][li]).collect();
            let fold_mse: Vec<f64> = points.iter().map(|p| p.mse).collect();
            let converged = points.iter().all(|p| p.converged);
            if !converged {
                warn!("cell (alpha {alpha}, gamma {gamma}, lambda {lambda:e}) did not converge in every fold");
            }
            cells.push(CvCell {
                alpha,
                gamma,
                lambda,
                mean_mse: fold_mse.iter().sum::<f64>() / plan.k as f64,
                fold_mse,
                converged,
                selected: false,
                iterations: points.iter().map(|p| p.iterations).sum(),
            });
        }
    }
    let l = lambdas.len();
    for pi in 0..pairs.len() {
        let best = cells[pi * l..(pi + 1) * l]
            .iter()
            .enumerate()
            .filter(|(_, c)| c.converged)
            .min_by(|a, b| {
                a.1.mean_mse
                    .total_cmp(&b.1.mean_mse)
                    .then(b.1.lambda.total_cmp(&a.1.lambda))
            })
            .map(|(i, _)| i);
        if let Some(i) = best {
            cells[pi * l + i].selected = true;
        }
    }
    Ok(CvSurface {
        pairs: pairs.to_vec(),
        lambdas: lambdas.to_vec(),
        k: plan.k,
        cells,
    })
}

/// Global minimizer of mean CV error over converged cells.
pub fn select_model(surface: &CvSurface) -> Result<TuningPoint> {
    let best = surface
        .cells
        .iter()
        .filter(|c| c.converged)
        .min_by(|a, b| global_order(a, b))
        .ok_or_else(|| FsglError::Validation("no converged cell in the CV surface".into()))?;
    Ok(TuningPoint {
        lambda: best.lambda,
        alpha: best.alpha,
        gamma: best.gamma,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeCv {
    pub lambda: f64,
    pub lambdas: Vec<f64>,
    pub mean_mse: Vec<f64>,
}

/// Chooses the ridge level by K-fold CV with fold-local standardization.
pub fn ridge_cross_validate(
    x_raw: &DMatrix<f64>,
    y_raw: &[f64],
    lambdas: &[f64],
    plan: &CvPlan,
) -> Result<RidgeCv> {
    if lambdas.is_empty() {
        return validation("ridge grid must be nonempty");
    }
    let folds = fold_data(x_raw, y_raw, plan, None)?;
    let per_fold = folds
        .par_iter()
        .map(|f| {
            lambdas
                .iter()
                .map(|&l| {
                    ridge_solve(&f.train.x_std, &f.train.y_centered, l)
                        .map(|b| validation_mse(f, &b))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_mse: Vec<f64> = (0..lambdas.len())
        .map(|i| per_fold.iter().map(|f| f[i]).sum::<f64>() / plan.k as f64)
        .collect();
    let best = (0..lambdas.len())
        .min_by(|&a, &b| {
            mean_mse[a]
                .total_cmp(&mean_mse[b])
                .then(lambdas[b].total_cmp(&lambdas[a]))
        })
        .unwrap_or(0);
    Ok(RidgeCv {
        lambda: lambdas[best],
        lambdas: lambdas.to_vec(),
        mean_mse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penalty::{build_fusion_matrix, build_penalty_operator, GridSpec, GroupPartition};
    use rand::Rng;

    fn problem(seed: u64, n: usize, p: usize) -> (DMatrix<f64>, Vec<f64>, PenaltyOperator) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.gen_range(-1.0..1.0));
        let y: Vec<f64> = (0..n)
            .map(|i| 2.0 * x[(i, 0)] + 2.0 * x[(i, 1)] + rng.gen_range(-0.3..0.3))
            .collect();
        let f = build_fusion_matrix(&GridSpec::new(&[p]).unwrap()).unwrap();
        let g = GroupPartition::new((0..p).map(|j| j / 3 + 1).collect()).unwrap();
        (x, y, build_penalty_operator(&f, &g, None).unwrap())
    }

    #[test]
    fn fold_sizes() {
        let y: Vec<f64> = (0..10).map(f64::from).collect();
        assert_eq!(
            make_folds(&y, 5, false, 1).unwrap().fold_sizes(),
            vec![2; 5]
        );
        let y11: Vec<f64> = (0..11).map(f64::from).collect();
        let mut s = make_folds(&y11, 5, false, 1).unwrap().fold_sizes();
        s.sort();
        assert_eq!(s, vec![2, 2, 2, 2, 3]);
        assert!(make_folds(&y, 11, false, 1).is_err());
        assert!(make_folds(&y, 1, false, 1).is_err());
    }

    #[test]
    fn stratified_blocks() {
        let y: Vec<f64> = (1..=10).map(f64::from).collect();
        for seed in 0..20 {
            let plan = make_folds(&y, 5, true, seed).unwrap();
            for f in 0..5 {
                let members = plan.test_indices(f);
                assert_eq!(members.len(), 2);
                assert_eq!(members.iter().filter(|&&i| i < 5).count(), 1);
            }
        }
        let a = make_folds(&y, 5, true, 3).unwrap();
        assert_eq!(a, make_folds(&y, 5, true, 3).unwrap());
    }

    #[test]
    fn grid_examples() {
        let g = lambda_grid(-3.0, 3.0, 50).unwrap();
        assert_eq!(g.len(), 50);
        assert!((g[0] - 1000.0).abs() < 1e-9 && (g[49] - 0.001).abs() < 1e-15);
        let g = lambda_grid(-1.0, 1.0, 3).unwrap();
        assert_eq!(g, vec![10.0, 1.0, 0.1]);
        assert!(lambda_grid(0.0, 0.0, 2).is_err());
        assert!(lambda_grid(0.0, 1.0, 1).is_err());
        assert_eq!(alpha_gamma_grid(&DEFAULT_LEVELS, &DEFAULT_LEVELS).len(), 25);
    }

    #[test]
    fn single_cell_surface() {
        let (x, y, op) = problem(1, 20, 6);
        let plan = make_folds(&y, 4, false, 2).unwrap();
        let s = cross_validate(
            &x,
            &y,
            &op,
            &[(0.5, 0.5)],
            &[0.1],
            &plan,
            &AdmmConfig::default(),
            &CvOptions::default(),
        )
        .unwrap();
        assert_eq!(s.cells.len(), 1);
        assert!(s.cells[0].selected);
        let mean = s.cells[0].fold_mse.iter().sum::<f64>() / 4.0;
        assert_eq!(s.cells[0].mean_mse, mean);
        let t = select_model(&s).unwrap();
        assert_eq!((t.alpha, t.gamma, t.lambda), (0.5, 0.5, 0.1));
    }

    #[test]
    fn duplicated_folds_give_identical_errors() {
        // Two copies of the same 10 rows, each copy forming its own folds' mirror.
        let (x, y, op) = problem(4, 10, 5);
        let x2 = DMatrix::from_fn(20, 5, |i, j| x[(i % 10, j)]);
        let y2: Vec<f64> = (0..20).map(|i| y[i % 10]).collect();
        let plan = CvPlan {
            k: 2,
            fold_assignment: (0..20).map(|i| i / 10).collect(),
            stratified: false,
            seed: 0,
        };
        let s = cross_validate(
            &x2,
            &y2,
            &op,
            &[(1.0, 1.0)],
            &[1.0, 0.1],
            &plan,
            &AdmmConfig::default(),
            &CvOptions::default(),
        )
        .unwrap();
        for c in &s.cells {
            assert_eq!(c.fold_mse[0], c.fold_mse[1]);
        }
    }

    #[test]
    fn determinism_and_gamma_zero_sharing() {
        let (x, y, op) = problem(7, 24, 8);
        let plan = make_folds(&y, 3, false, 11).unwrap();
        let pairs = alpha_gamma_grid(&[0.0, 1.0], &[0.0, 0.5]);
        let grid = lambda_grid(-2.0, 1.0, 6).unwrap();
        let cfg = AdmmConfig::default();
        let a = cross_validate(
            &x,
            &y,
            &op,
            &pairs,
            &grid,
            &plan,
            &cfg,
            &CvOptions::default(),
        )
        .unwrap();
        let b = cross_validate(
            &x,
            &y,
            &op,
            &pairs,
            &grid,
            &plan,
            &cfg,
            &CvOptions::default(),
        )
        .unwrap();
        assert_eq!(a, b);
        // (0, 0) and (1, 0) are the same estimator.
        for li in 0..grid.len() {
            assert_eq!(a.cell(0, li).fold_mse, a.cell(2, li).fold_mse);
        }
        for pi in 0..pairs.len() {
            assert_eq!(a.pair_cells(pi).iter().filter(|c| c.selected).count(), 1);
        }
        // The tie between (0, 0) and (1, 0) resolves to smaller alpha when
        // they are the global optimum.
        let t = select_model(&a).unwrap();
        assert!(!(t.gamma == 0.0 && t.alpha == 1.0));
    }

    #[test]
    fn selection_tie_breaks() {
        let cell = |alpha, gamma, lambda, mse| CvCell {
            alpha,
            gamma,
            lambda,
            fold_mse: vec![mse],
            mean_mse: mse,
            converged: true,
            selected: false,
            iterations: 1,
        };
        let mut s = CvSurface {
            pairs: vec![(0.0, 0.2), (1.0, 0.2), (0.0, 0.8)],
            lambdas: vec![2.0, 1.0],
            k: 1,
            cells: vec![
                cell(0.0, 0.2, 2.0, 1.0),
                cell(0.0, 0.2, 1.0, 0.5),
                cell(1.0, 0.2, 2.0, 3.0),
                cell(1.0, 0.2, 1.0, 3.0),
                cell(0.0, 0.8, 2.0, 4.0),
                cell(0.0, 0.8, 1.0, 4.0),
            ],
        };
        let t = select_model(&s).unwrap();
        assert_eq!((t.alpha, t.gamma, t.lambda), (0.0, 0.2, 1.0));

        // Lambda tie within a pair: larger lambda wins.
        s.cells[1].mean_mse = 1.0;
        assert_eq!(select_model(&s).unwrap().lambda, 2.0);

        // Tie across pairs at equal lambda: larger gamma, then smaller alpha.
        for c in s.cells.iter_mut() {
            c.mean_mse = 1.0;
        }
        let t = select_model(&s).unwrap();
        assert_eq!((t.alpha, t.gamma, t.lambda), (0.0, 0.8, 2.0));
        s.cells.truncate(4);
        s.pairs.truncate(2);
        let t = select_model(&s).unwrap();
        assert_eq!((t.alpha, t.gamma), (0.0, 0.2));

        for c in s.cells.iter_mut() {
            c.converged = false;
        }
        assert!(select_model(&s).is_err());
    }

    #[test]
    fn no_leakage_from_validation_rows() {
        let (x, y, op) = problem(9, 20, 6);
        let plan = make_folds(&y, 4, false, 5).unwrap();
        let folds = fold_data(&x, &y, &plan, None).unwrap();
        let mut x_bad = x.clone();
        let mut y_bad = y.clone();
        let held = plan.test_indices(0)[0];
        x_bad.row_mut(held).fill(1e6);
        y_bad[held] = -1e6;
        let folds_bad = fold_data(&x_bad, &y_bad, &plan, None).unwrap();
        assert_eq!(folds[0].train, folds_bad[0].train);
        let cfg = AdmmConfig::default();
        let tp = TuningPoint::new(0.5, 0.5, 0.5).unwrap();
        let a = crate::model::fit(&folds[0].train, &op, &tp, &cfg, None).unwrap();
        let b = crate::model::fit(&folds_bad[0].train, &op, &tp, &cfg, None).unwrap();
        assert_eq!(a.beta_std, b.beta_std);
    }

    #[test]
    fn warm_and_cold_paths_select_the_same_lambda() {
        let (x, y, op) = problem(13, 30, 9);
        let plan = make_folds(&y, 3, false, 1).unwrap();
        let grid = lambda_grid(-2.0, 1.0, 8).unwrap();
        let cfg = AdmmConfig::default().with_tolerances(1e-8, 1e-8);
        let warm = cross_validate(
            &x,
            &y,
            &op,
            &[(0.5, 0.8)],
            &grid,
            &plan,
            &cfg,
            &CvOptions::default(),
        )
        .unwrap();
        // Cold: one lambda at a time.
        let cold: Vec<f64> = grid
            .iter()
            .map(|&l| {
                cross_validate(
                    &x,
                    &y,
                    &op,
                    &[(0.5, 0.8)],
                    &[l],
                    &plan,
                    &cfg,
                    &CvOptions::default(),
                )
                .unwrap()
                .cells[0]
                    .mean_mse
            })
            .collect();
        for (w, c) in warm.cells.iter().zip(&cold) {
            assert!((w.mean_mse - c).abs() < 1e-6);
        }
        let cold_best = (0..grid.len())
            .min_by(|&a, &b| cold[a].total_cmp(&cold[b]))
            .unwrap();
        assert!(warm.cells[cold_best].selected);
    }

    #[test]
    fn fold_adaptive_weights_differ_from_fixed_weights() {
        let (x, y, op) = problem(4, 24, 6);
        let plan = make_folds(&y, 3, false, 2).unwrap();
        let cfg = AdmmConfig::default();
        let run = |opts: &CvOptions| {
            cross_validate(&x, &y, &op, &[(0.5, 0.5)], &[1.0, 0.1], &plan, &cfg, opts).unwrap()
        };
        let nested = run(&CvOptions {
            fold_adaptive: Some(FoldAdaptive {
                ridge_lambda: 0.1,
                cap: 1e8,
            }),
            ..CvOptions::default()
        });
        assert!(nested.cells.iter().all(|c| c.mean_mse.is_finite()));
        assert_ne!(nested.cells, run(&CvOptions::default()).cells);
        assert_eq!(
            nested,
            run(&CvOptions {
                fold_adaptive: Some(FoldAdaptive {
                    ridge_lambda: 0.1,
                    cap: 1e8,
                }),
                ..CvOptions::default()
            })
        );
    }

    #[test]
    fn global_standardize_mode_runs() {
        let (x, y, op) = problem(2, 20, 6);
        let plan = make_folds(&y, 4, true, 5).unwrap();
        let opts = CvOptions {
            global_standardize: true,
            ..CvOptions::default()
        };
        let s = cross_validate(
            &x,
            &y,
            &op,
            &[(1.0, 1.0)],
            &[1.0, 0.1],
            &plan,
            &AdmmConfig::default(),
            &opts,
        )
        .unwrap();
        assert!(s.cells.iter().all(|c| c.mean_mse.is_finite()));
        assert!(s.best_pair().is_some());
    }

    #[test]
    fn ridge_cv_picks_a_grid_value() {
        let (x, y, _) = problem(3, 30, 40);
        let plan = make_folds(&y, 5, false, 1).unwrap();
        let grid = lambda_grid(-3.0, 3.0, 13).unwrap();
        let r = ridge_cross_validate(&x, &y, &grid, &plan).unwrap();
        assert!(grid.contains(&r.lambda));
        let best = r.mean_mse.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(
            r.mean_mse[grid.iter().position(|&l| l == r.lambda).unwrap()],
            best
        );
    }
}
