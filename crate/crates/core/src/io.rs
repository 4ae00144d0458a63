//! CSV, JSON and raster input/output.
//!
//! Matrices are headerless numeric CSV, one row per subject. Floating-point
//! output uses 17 significant digits so values read back bit for bit.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde_json::{json, Value};

use crate::admm::TraceRow;
use crate::error::{FsglError, Result};
use crate::model::FitResult;
use crate::penalty::{GridSpec, GroupPartition};
use crate::sim::{Criterion, ExperimentReport, Scenario, SIDE};
use crate::tuning::CvSurface;

/// Round-trip-safe decimal form of a float.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| FsglError::Parse(format!("line {line}: `{}` is not a number", s.trim())))
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| FsglError::Parse(format!("{}: {e}", path.display())))
}

fn csv_error(e: csv::Error) -> FsglError {
    FsglError::Parse(e.to_string())
}

fn reader<R: Read>(r: R, headers: bool) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(headers)
        .trim(csv::Trim::All)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(r)
}

/// Reads a headerless numeric table; every row must have the same width.
pub fn read_matrix<R: Read>(r: R) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader(r, false).records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let row = rec
            .iter()
            .map(|f| parse_f64(f, i + 1))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(FsglError::Parse(format!(
                    "line {}: expected {} fields, found {}",
                    i + 1,
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(FsglError::Parse("empty matrix".into()));
    }
    let (n, p) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
}

pub fn read_matrix_file(path: &Path) -> Result<DMatrix<f64>> {
    read_matrix(open(path)?)
}

/// Reads a vector stored as one column or one row.
pub fn read_vector<R: Read>(r: R) -> Result<Vec<f64>> {
    let m = read_matrix(r)?;
    if m.ncols() == 1 || m.nrows() == 1 {
        Ok(m.iter().copied().collect())
    } else {
        Err(FsglError::Parse(format!(
            "expected a single row or column, found {}x{}",
            m.nrows(),
            m.ncols()
        )))
    }
}

pub fn read_vector_file(path: &Path) -> Result<Vec<f64>> {
    read_vector(open(path)?)
}

/// Group file: either an `index,group` table (0-based coefficient index,
/// 1-based group id) or one group id per line in coefficient order.
pub fn read_groups<R: Read>(r: R, p: usize) -> Result<GroupPartition> {
    let mut text = String::new();
    let mut r = r;
    r.read_to_string(&mut text)?;
    let first = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .unwrap_or("");
    let has_header = first.parse::<f64>().is_err() && first.contains("group");
    let mut rdr = reader(text.as_bytes(), has_header);
    let parse_id = |s: &str, line: usize| -> Result<usize> {
        s.parse::<usize>()
            .map_err(|_| FsglError::Parse(format!("line {line}: `{s}` is not a group id")))
    };
    if has_header {
        let mut pairs = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_error)?;
            if rec.len() < 2 {
                return Err(FsglError::Parse(format!(
                    "line {}: expected index,group",
                    i + 2
                )));
            }
            pairs.push((parse_id(&rec[0], i + 2)?, parse_id(&rec[1], i + 2)?));
        }
        GroupPartition::from_pairs(p, &pairs)
    } else {
        let mut ids = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_error)?;
            for f in rec.iter().filter(|f| !f.is_empty()) {
                ids.push(parse_id(f, i + 1)?);
            }
        }
        if ids.len() != p {
            return Err(FsglError::Validation(format!(
                "group file lists {} coefficients, expected {p}",
                ids.len()
            )));
        }
        GroupPartition::new(ids)
    }
}

pub fn read_groups_file(path: &Path, p: usize) -> Result<GroupPartition> {
    read_groups(open(path)?, p)
}

/// Mask of 0/1 values in cell order (any row layout).
pub fn read_mask<R: Read>(r: R) -> Result<Vec<bool>> {
    let m = read_matrix(r)?;
    // Row-major reading order.
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(match m[(i, j)] {
                v if v == 0.0 => false,
                v if v == 1.0 => true,
                v => {
                    return Err(FsglError::Parse(format!(
                        "mask entries must be 0 or 1, found {v}"
                    )))
                }
            });
        }
    }
    Ok(out)
}

pub fn read_mask_file(path: &Path) -> Result<Vec<bool>> {
    read_mask(open(path)?)
}

pub fn write_matrix<W: Write>(w: &mut W, m: &DMatrix<f64>) -> Result<()> {
    for row in m.row_iter() {
        let fields: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

pub fn write_vector<W: Write>(w: &mut W, v: &[f64]) -> Result<()> {
    for &x in v {
        writeln!(w, "{}", fmt_f64(x))?;
    }
    Ok(())
}

/// `index,group` table.
pub fn write_groups<W: Write>(w: &mut W, groups: &GroupPartition) -> Result<()> {
    writeln!(w, "index,group")?;
    for (j, g) in groups.assignment().iter().enumerate() {
        writeln!(w, "{j},{g}")?;
    }
    Ok(())
}

/// `index,beta_std,beta_orig`.
pub fn write_coefficients<W: Write>(w: &mut W, fit: &FitResult) -> Result<()> {
    writeln!(w, "index,beta_std,beta_orig")?;
    for (j, (s, o)) in fit.beta_std.iter().zip(&fit.beta_orig).enumerate() {
        writeln!(w, "{j},{},{}", fmt_f64(*s), fmt_f64(*o))?;
    }
    Ok(())
}

/// Reads a coefficient table back as `(beta_std, beta_orig)`. A plain
/// one-column file is accepted as `beta_std` with no original-scale values.
pub fn read_coefficients<R: Read>(r: R) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut text = String::new();
    let mut r = r;
    r.read_to_string(&mut text)?;
    if !text.contains("beta_std") {
        let v = read_vector(text.as_bytes())?;
        return Ok((v, Vec::new()));
    }
    let mut rdr = reader(text.as_bytes(), true);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (is, io) = (col("beta_std"), col("beta_orig"));
    let mut std = Vec::new();
    let mut orig = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        if let Some(k) = is {
            std.push(parse_f64(&rec[k], i + 2)?);
        }
        if let Some(k) = io {
            orig.push(parse_f64(&rec[k], i + 2)?);
        }
    }
    Ok((std, orig))
}

pub fn read_coefficients_file(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    read_coefficients(open(path)?)
}

/// `iter,r_norm,s_norm,eps_pri,eps_dual,rho,objective`.
pub fn write_trace<W: Write>(w: &mut W, trace: &[TraceRow]) -> Result<()> {
    writeln!(w, "iter,r_norm,s_norm,eps_pri,eps_dual,rho,objective")?;
    for t in trace {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            t.iter,
            fmt_f64(t.r_norm),
            fmt_f64(t.s_norm),
            fmt_f64(t.eps_pri),
            fmt_f64(t.eps_dual),
            fmt_f64(t.rho),
            fmt_f64(t.objective)
        )?;
    }
    Ok(())
}

/// Summary of a fit for JSON output.
pub fn fit_summary(fit: &FitResult) -> Value {
    json!({
        "estimator": fit.estimator_name(),
        "tuning": fit.tuning.map(|t| json!({"lambda": t.lambda, "alpha": t.alpha, "gamma": t.gamma})),
        "lambdas": {"lasso": fit.lambdas.lasso, "fusion": fit.lambdas.fusion, "group": fit.lambdas.group},
        "objective": fit.report.objective,
        "converged": fit.report.converged,
        "iterations": fit.report.iterations,
        "r_norm": fit.report.r_norm,
        "s_norm": fit.report.s_norm,
        "eps_pri": fit.report.eps_pri,
        "eps_dual": fit.report.eps_dual,
        "final_rho": fit.state.rho,
        "support_size": fit.support.len(),
        "intercept": fit.intercept_orig,
    })
}

/// `alpha,gamma,lambda,fold,mse`, one line per cell and fold.
pub fn write_cv_surface<W: Write>(w: &mut W, s: &CvSurface) -> Result<()> {
    writeln!(w, "alpha,gamma,lambda,fold,mse")?;
    for c in &s.cells {
        for (f, mse) in c.fold_mse.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{f},{}",
                c.alpha,
                c.gamma,
                fmt_f64(c.lambda),
                fmt_f64(*mse)
            )?;
        }
    }
    Ok(())
}

/// `alpha,gamma,lambda_opt,mean_cv_mse`, one line per pair with a
/// selected cell.
pub fn write_cv_summary<W: Write>(w: &mut W, s: &CvSurface) -> Result<()> {
    writeln!(w, "alpha,gamma,lambda_opt,mean_cv_mse")?;
    for (i, &(a, g)) in s.pairs.iter().enumerate() {
        if let Some(c) = s.selected(i) {
            writeln!(w, "{a},{g},{},{}", fmt_f64(c.lambda), fmt_f64(c.mean_mse))?;
        }
    }
    Ok(())
}

/// `replicate,alpha,gamma,lambda_opt,cv_mse,mse_beta,mse_pred`.
pub fn write_replicates<W: Write>(w: &mut W, report: &ExperimentReport) -> Result<()> {
    writeln!(
        w,
        "replicate,alpha,gamma,lambda_opt,cv_mse,mse_beta,mse_pred"
    )?;
    for r in &report.replicates {
        for c in &r.cells {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.replicate,
                c.alpha,
                c.gamma,
                fmt_f64(c.lambda_opt),
                fmt_f64(c.cv_mse),
                fmt_f64(c.mse_beta),
                fmt_f64(c.mse_pred)
            )?;
        }
    }
    Ok(())
}

fn pair_label(p: Option<(f64, f64)>) -> String {
    match p {
        Some((a, g)) => format!("({a:.1}, {g:.1})"),
        None => "NA".into(),
    }
}

/// One row per scenario: the modal optimal pair for each criterion with
/// its frequency.
pub fn write_modal_table<W: Write>(w: &mut W, reports: &[ExperimentReport]) -> Result<()> {
    writeln!(w, "scenario,replicates,criterion,alpha,gamma,frequency")?;
    for r in reports {
        for c in Criterion::ALL {
            let counts = r.frequencies(c);
            match r.modal(c) {
                Some((a, g)) => {
                    let i = r.pairs.iter().position(|&p| p == (a, g)).unwrap_or(0);
                    writeln!(
                        w,
                        "{},{},{},{a},{g},{}",
                        r.scenario,
                        r.replicates.len(),
                        c.name(),
                        counts[i]
                    )?;
                }
                None => writeln!(w, "{},{},{},,,0", r.scenario, r.replicates.len(), c.name())?,
            }
        }
    }
    Ok(())
}

/// Human-readable table of modal cells per scenario and criterion.
pub fn format_summary(reports: &[ExperimentReport]) -> String {
    let mut out = format!(
        "{:<9}{:<16}{:<16}{:<16}\n",
        "scenario", "mean CVE", "MSE(beta)", "MSE(y_test)"
    );
    for r in reports {
        out.push_str(&format!(
            "{:<9}{:<16}{:<16}{:<16}\n",
            r.scenario.as_str(),
            pair_label(r.modal(Criterion::CvError)),
            pair_label(r.modal(Criterion::MseBeta)),
            pair_label(r.modal(Criterion::MsePred)),
        ));
    }
    out
}

/// `alpha,gamma,squared_bias,variance`.
pub fn write_bias_variance<W: Write>(w: &mut W, report: &ExperimentReport) -> Result<()> {
    writeln!(w, "alpha,gamma,squared_bias,variance")?;
    for b in &report.bias_variance {
        writeln!(
            w,
            "{},{},{},{}",
            b.alpha,
            b.gamma,
            fmt_f64(b.squared_bias),
            fmt_f64(b.variance)
        )?;
    }
    Ok(())
}

/// `index,row,col,group,beta_true` for a scenario.
pub fn write_layout<W: Write>(w: &mut W, s: &Scenario) -> Result<()> {
    writeln!(w, "index,row,col,group,beta_true")?;
    for (j, g) in s.groups.assignment().iter().enumerate() {
        writeln!(w, "{j},{},{},{g},{}", j / SIDE, j % SIDE, s.beta_true[j])?;
    }
    Ok(())
}

/// 8-bit grayscale raster on a diverging scale: level 128 is zero, 255 the
/// largest positive magnitude, 1 the largest negative one.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    /// Magnitude mapped to levels 1 and 255.
    pub scale: f64,
}

pub const MID_LEVEL: u8 = 128;

impl Heatmap {
    /// Coefficient value represented by a gray level.
    pub fn level_value(&self, level: u8) -> f64 {
        (level as f64 - MID_LEVEL as f64) / 127.0 * self.scale
    }
}

/// Lays coefficients (one per included cell) out on the grid. 3-D grids
/// need a slice index along the last axis.
pub fn render_heatmap(coefs: &[f64], grid: &GridSpec, slice: Option<usize>) -> Result<Heatmap> {
    let index = grid.coefficient_index();
    if coefs.len() != grid.n_included() {
        return Err(FsglError::Validation(format!(
            "{} coefficients for {} included cells",
            coefs.len(),
            grid.n_included()
        )));
    }
    let dims = grid.dims();
    let (height, width, offset) = match (dims.len(), slice) {
        (1, _) => (1, dims[0], 0),
        (2, _) => (dims[0], dims[1], 0),
        (_, None) => {
            return Err(FsglError::Validation(
                "3-D grid: choose a plane along the last axis with --slice k".into(),
            ))
        }
        (_, Some(k)) if k >= dims[2] => {
            return Err(FsglError::Validation(format!(
                "slice {k} out of range for a last axis of length {}",
                dims[2]
            )))
        }
        (_, Some(k)) => (dims[0], dims[1], k * dims[0] * dims[1]),
    };
    let scale = coefs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let mut pixels = vec![MID_LEVEL; width * height];
    for (cell, px) in pixels.iter_mut().enumerate() {
        if let Some(j) = index[offset + cell] {
            let level = MID_LEVEL as f64 + (127.0 * coefs[j] / scale).round();
            *px = level.clamp(1.0, 255.0) as u8;
        }
    }
    Ok(Heatmap {
        width,
        height,
        pixels,
        scale,
    })
}

/// Binary PGM (P5).
pub fn write_pgm<W: Write>(w: &mut W, h: &Heatmap) -> Result<()> {
    write!(w, "P5\n{} {}\n255\n", h.width, h.height)?;
    w.write_all(&h.pixels)?;
    Ok(())
}

/// `level,value` for all 256 gray levels.
pub fn write_scale<W: Write>(w: &mut W, h: &Heatmap) -> Result<()> {
    writeln!(w, "level,value")?;
    writeln!(w, "0,unused")?;
    for level in 1..=255u8 {
        writeln!(w, "{level},{}", fmt_f64(h.level_value(level)))?;
    }
    Ok(())
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            FsglError::Parse(format!("config line {}: expected key = value", i + 1))
        })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(FsglError::Parse(format!(
                "config line {}: empty key",
                i + 1
            )));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn write_config<W: Write>(w: &mut W, entries: &[(String, String)]) -> Result<()> {
    for (k, v) in entries {
        writeln!(w, "{k} = {v}")?;
    }
    Ok(())
}
