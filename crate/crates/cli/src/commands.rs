use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fsgl::admm::PrimalScale;
use fsgl::io;
use fsgl::model::{adaptive_weights, fit_lambdas, ridge_fit, standardize, StandardizedDesign};
use fsgl::sim::{build_scenario, generate_dataset, run_experiment, ExperimentSettings, ScenarioId};
use fsgl::tuning::{
    alpha_gamma_grid, cross_validate, lambda_grid, make_folds, ridge_cross_validate, select_model,
    CvOptions, CvPlan, FoldAdaptive,
};
use fsgl::{
    build_fusion_matrix, build_penalty_operator, AdmmConfig, FsglError, FusionStructure, GridSpec,
    GroupPartition, Lambdas, PenaltyOperator, TuningPoint,
};
use nalgebra::DMatrix;
use serde_json::json;

use crate::args::{
    AdaptiveArgs, CoefColumn, CvArgs, DataArgs, FitArgs, FoldArgs, GenerateArgs, HeatmapArgs,
    LambdaGridArgs, PrimalScaleArg, SimulateArgs, SolverArgs,
};
use crate::config::write_resolved;
use crate::Outcome;

struct Problem {
    x: DMatrix<f64>,
    y: Vec<f64>,
    fusion: FusionStructure,
    groups: GroupPartition,
    penalty: PenaltyOperator,
}

fn grid_from(spec: &str, mask: Option<&PathBuf>) -> Result<GridSpec> {
    let grid: GridSpec = spec.parse()?;
    Ok(match mask {
        Some(m) => grid.with_mask(io::read_mask_file(m)?)?,
        None => grid,
    })
}

fn load_problem(a: &DataArgs) -> Result<Problem> {
    let x = io::read_matrix_file(&a.design)?;
    let y = io::read_vector_file(&a.response)?;
    let grid = grid_from(&a.grid, a.mask.as_ref())?;
    let p = grid.n_included();
    if x.ncols() != p {
        return Err(FsglError::Validation(format!(
            "design has {} columns but the grid has {p} included cells",
            x.ncols()
        ))
        .into());
    }
    if x.nrows() != y.len() {
        return Err(FsglError::Validation(format!(
            "design has {} rows but the response has {} values",
            x.nrows(),
            y.len()
        ))
        .into());
    }
    let fusion = build_fusion_matrix(&grid)?;
    let groups = match &a.groups {
        Some(g) => io::read_groups_file(g, p)?,
        None => GroupPartition::single(p),
    };
    let penalty = build_penalty_operator(&fusion, &groups, None)?;
    Ok(Problem {
        x,
        y,
        fusion,
        groups,
        penalty,
    })
}

fn solver_config(a: &SolverArgs) -> Result<AdmmConfig> {
    let cfg = AdmmConfig {
        rho0: a.rho0,
        eps_abs: a.eps_abs,
        eps_rel: a.eps_rel,
        max_iter: a.max_iter,
        rho_update_period: a.rho_update_period,
        primal_scale: match a.primal_scale {
            PrimalScaleArg::Coefficients => PrimalScale::Coefficients,
            PrimalScaleArg::Theta => PrimalScale::Theta,
        },
        ..AdmmConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> fsgl::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn out_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

/// Ridge step of the adaptive procedure: CV for the ridge level on the raw
/// data, a ridge fit on the standardized data, then reciprocal weights.
fn adaptive_step(
    prob: &Problem,
    design: &StandardizedDesign,
    adaptive: &AdaptiveArgs,
    grid: &LambdaGridArgs,
    plan: &CvPlan,
    out: &Path,
) -> Result<Option<(Vec<f64>, f64)>> {
    if !adaptive.adaptive {
        return Ok(None);
    }
    let lambdas = lambda_grid(grid.lambda_min, grid.lambda_max, grid.lambda_count)?;
    let rcv = ridge_cross_validate(&prob.x, &prob.y, &lambdas, plan)?;
    let beta = ridge_fit(design, rcv.lambda)?;
    let weights = adaptive_weights(&beta, &prob.fusion, &prob.groups, adaptive.weight_cap)?;
    write_with(&out.join("ridge_cv.csv"), |w| {
        writeln!(w, "lambda,mean_cv_mse")?;
        for (l, m) in rcv.lambdas.iter().zip(&rcv.mean_mse) {
            writeln!(w, "{},{}", io::fmt_f64(*l), io::fmt_f64(*m))?;
        }
        Ok(())
    })?;
    write_with(&out.join("weights.csv"), |w| {
        writeln!(w, "block,class,weight")?;
        for (k, (b, wt)) in prob.penalty.blocks().iter().zip(&weights).enumerate() {
            writeln!(w, "{k},{},{}", b.class, io::fmt_f64(*wt))?;
        }
        Ok(())
    })?;
    Ok(Some((weights, rcv.lambda)))
}

fn fold_plan(y: &[f64], f: &FoldArgs) -> Result<CvPlan> {
    Ok(make_folds(y, f.folds, f.stratified, f.seed)?)
}

fn fit_lambdas_from(a: &FitArgs) -> Result<(Lambdas, Option<TuningPoint>)> {
    match (a.lambda, a.alpha, a.gamma) {
        (Some(l), Some(al), Some(g)) => {
            let tp = TuningPoint::new(l, al, g)?;
            Ok((tp.lambdas(), Some(tp)))
        }
        (None, None, None) => {
            if a.lambda1.is_none() && a.lambda2.is_none() && a.lambda3.is_none() {
                bail!(FsglError::Validation(
                    "give --lambda, --alpha and --gamma, or --lambda1/--lambda2/--lambda3".into()
                ));
            }
            let l = Lambdas::new(
                a.lambda1.unwrap_or(0.0),
                a.lambda2.unwrap_or(0.0),
                a.lambda3.unwrap_or(0.0),
            )?;
            Ok((l, None))
        }
        _ => bail!(FsglError::Validation(
            "--lambda, --alpha and --gamma must be given together".into()
        )),
    }
}

pub fn fit(a: &FitArgs) -> Result<Outcome> {
    let (lambdas, tuning) = fit_lambdas_from(a)?;
    let cfg = solver_config(&a.solver)?;
    let prob = load_problem(&a.data)?;
    let design = standardize(&prob.x, &prob.y)?;
    out_dir(&a.out)?;
    let plan = fold_plan(&prob.y, &a.folds)?;
    let adaptive = adaptive_step(&prob, &design, &a.adaptive, &a.grid, &plan, &a.out)?;
    let weights = adaptive.as_ref().map(|(w, _)| w.as_slice());
    let result = fit_lambdas(&design, &prob.penalty, lambdas, tuning, &cfg, weights, None)?;

    write_with(&a.out.join("coefficients.csv"), |w| {
        io::write_coefficients(w, &result)
    })?;
    write_with(&a.out.join("trace.csv"), |w| {
        io::write_trace(w, &result.report.trace)
    })?;
    let mut summary = io::fit_summary(&result);
    summary["adaptive"] = json!(adaptive.is_some());
    if let Some((_, l)) = &adaptive {
        summary["ridge_lambda"] = json!(l);
    }
    fs::write(
        a.out.join("fit.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    write_resolved(&a.out.join("config.txt"), "fit", a)?;
    println!(
        "{}: converged = {}, iterations = {}, support = {}, objective = {}",
        result.estimator_name(),
        result.report.converged,
        result.report.iterations,
        result.support.len(),
        result.report.objective
    );
    Ok(if result.report.converged {
        Outcome::Converged
    } else {
        Outcome::MaxIter
    })
}

fn check_levels(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() || v.iter().any(|x| !(0.0..=1.0).contains(x)) {
        bail!(FsglError::Validation(format!(
            "--{name} needs values in [0, 1]"
        )));
    }
    Ok(())
}

pub fn cv(a: &CvArgs) -> Result<Outcome> {
    check_levels("alphas", &a.alphas)?;
    check_levels("gammas", &a.gammas)?;
    let cfg = solver_config(&a.solver)?;
    let prob = load_problem(&a.data)?;
    let design = standardize(&prob.x, &prob.y)?;
    out_dir(&a.out)?;
    let pairs = alpha_gamma_grid(&a.alphas, &a.gammas);
    let lambdas = lambda_grid(a.grid.lambda_min, a.grid.lambda_max, a.grid.lambda_count)?;
    let plan = fold_plan(&prob.y, &a.folds)?;
    let adaptive = adaptive_step(&prob, &design, &a.adaptive, &a.grid, &plan, &a.out)?;
    let options = CvOptions {
        global_standardize: a.global_standardize,
        fold_adaptive: adaptive.as_ref().map(|(_, l)| FoldAdaptive {
            ridge_lambda: *l,
            cap: a.adaptive.weight_cap,
        }),
        ..CvOptions::default()
    };
    let surface = cross_validate(
        &prob.x,
        &prob.y,
        &prob.penalty,
        &pairs,
        &lambdas,
        &plan,
        &cfg,
        &options,
    )?;
    write_with(&a.out.join("cv_surface.csv"), |w| {
        io::write_cv_surface(w, &surface)
    })?;
    write_with(&a.out.join("cv_summary.csv"), |w| {
        io::write_cv_summary(w, &surface)
    })?;

    let best = select_model(&surface)?;
    let weights = adaptive.as_ref().map(|(w, _)| w.as_slice());
    let refit = fit_lambdas(
        &design,
        &prob.penalty,
        best.lambdas(),
        Some(best),
        &cfg,
        weights,
        None,
    )?;
    write_with(&a.out.join("coefficients.csv"), |w| {
        io::write_coefficients(w, &refit)
    })?;

    let per_pair: Vec<_> = (0..pairs.len())
        .filter_map(|i| surface.selected(i))
        .map(|c| json!({"alpha": c.alpha, "gamma": c.gamma, "lambda": c.lambda, "mean_cv_mse": c.mean_mse}))
        .collect();
    let best_mse = surface
        .cells
        .iter()
        .find(|c| (c.alpha, c.gamma, c.lambda) == (best.alpha, best.gamma, best.lambda))
        .map(|c| c.mean_mse);
    let unconverged = surface.cells.iter().filter(|c| !c.converged).count();
    let selected = json!({
        "selected": {"alpha": best.alpha, "gamma": best.gamma, "lambda": best.lambda, "mean_cv_mse": best_mse},
        "per_pair": per_pair,
        "unconverged_cells": unconverged,
        "folds": plan.k,
        "fit": io::fit_summary(&refit),
    });
    fs::write(
        a.out.join("selected.json"),
        serde_json::to_string_pretty(&selected)? + "\n",
    )?;
    write_resolved(&a.out.join("config.txt"), "cv", a)?;
    println!(
        "selected alpha = {}, gamma = {}, lambda = {} ({})",
        best.alpha,
        best.gamma,
        best.lambda,
        refit.estimator_name()
    );
    Ok(if refit.report.converged {
        Outcome::Converged
    } else {
        Outcome::MaxIter
    })
}

fn scenario_ids(list: &[String]) -> Result<Vec<ScenarioId>> {
    if list.iter().any(|s| s.eq_ignore_ascii_case("all")) {
        return Ok(ScenarioId::ALL.to_vec());
    }
    Ok(list
        .iter()
        .map(|s| s.parse())
        .collect::<fsgl::Result<Vec<_>>>()?)
}

pub fn simulate(a: &SimulateArgs) -> Result<Outcome> {
    let ids = scenario_ids(&a.scenario)?;
    check_levels("alphas", &a.alphas)?;
    check_levels("gammas", &a.gammas)?;
    if a.replicates == 0 {
        bail!(FsglError::Validation(
            "--replicates must be at least 1".into()
        ));
    }
    let settings = ExperimentSettings {
        n_replicates: a.replicates,
        pairs: alpha_gamma_grid(&a.alphas, &a.gammas),
        lambda_grid: (a.grid.lambda_min, a.grid.lambda_max, a.grid.lambda_count),
        folds: a.folds,
        config: solver_config(&a.solver)?,
        seed: a.seed,
    };
    out_dir(&a.out)?;
    let mut reports = Vec::new();
    for id in ids {
        let scenario = build_scenario(id, a.seed)?;
        let report = run_experiment(&scenario, &settings)?;
        write_with(&a.out.join(format!("layout_{id}.csv")), |w| {
            io::write_layout(w, &scenario)
        })?;
        write_with(&a.out.join(format!("replicates_{id}.csv")), |w| {
            io::write_replicates(w, &report)
        })?;
        write_with(&a.out.join(format!("bias_variance_{id}.csv")), |w| {
            io::write_bias_variance(w, &report)
        })?;
        eprintln!("scenario {id}: {} replicates done", report.replicates.len());
        reports.push(report);
    }
    write_with(&a.out.join("modal_table.csv"), |w| {
        io::write_modal_table(w, &reports)
    })?;
    let summary = io::format_summary(&reports);
    fs::write(a.out.join("summary.txt"), &summary)?;
    write_resolved(&a.out.join("config.txt"), "simulate", a)?;
    print!("{summary}");
    Ok(Outcome::Converged)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn write_png(path: &Path, h: &io::Heatmap) -> Result<()> {
    let w = create(path)?;
    let mut enc = png::Encoder::new(w, h.width as u32, h.height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    writer.write_image_data(&h.pixels)?;
    Ok(())
}

pub fn heatmap(a: &HeatmapArgs) -> Result<Outcome> {
    let grid = grid_from(&a.grid, a.mask.as_ref())?;
    let (std, orig) = io::read_coefficients_file(&a.coefficients)?;
    let coefs = match a.column {
        CoefColumn::BetaOrig if !orig.is_empty() => orig,
        _ => std,
    };
    let h = io::render_heatmap(&coefs, &grid, a.slice)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        out_dir(dir)?;
    }
    write_with(&a.out, |w| io::write_pgm(w, &h))?;
    write_with(&with_suffix(&a.out, ".scale.csv"), |w| {
        io::write_scale(w, &h)
    })?;
    if let Some(p) = &a.png {
        write_png(p, &h)?;
    }
    write_resolved(&with_suffix(&a.out, ".config.txt"), "heatmap", a)?;
    Ok(Outcome::Converged)
}

pub fn generate(a: &GenerateArgs) -> Result<Outcome> {
    let id: ScenarioId = a.scenario.parse()?;
    let scenario = build_scenario(id, a.seed)?;
    let data = generate_dataset(&scenario, a.seed, a.replicate);
    out_dir(&a.out)?;
    write_with(&a.out.join("X.csv"), |w| io::write_matrix(w, &data.x_train))?;
    write_with(&a.out.join("y.csv"), |w| io::write_vector(w, &data.y_train))?;
    write_with(&a.out.join("X_test.csv"), |w| {
        io::write_matrix(w, &data.x_test)
    })?;
    write_with(&a.out.join("y_test.csv"), |w| {
        io::write_vector(w, &data.y_test)
    })?;
    write_with(&a.out.join("X_bv.csv"), |w| io::write_matrix(w, &data.x_bv))?;
    write_with(&a.out.join("beta_true.csv"), |w| {
        io::write_vector(w, &scenario.beta_true)
    })?;
    write_with(&a.out.join("groups.csv"), |w| {
        io::write_groups(w, &scenario.groups)
    })?;
    write_with(&a.out.join("layout.csv"), |w| {
        io::write_layout(w, &scenario)
    })?;
    write_resolved(&a.out.join("config.txt"), "generate", a)?;
    Ok(Outcome::Converged)
}
