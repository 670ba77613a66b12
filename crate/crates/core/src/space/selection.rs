use log::warn;
use serde::{Deserialize, Serialize};

use super::activations::ActivationMatrix;
use crate::error::{Error, Result};
use crate::linalg::{pca_variances, project_onto_basis, reduced_svd_via_gram, trace_variance};

/// Components explaining at most this fraction of the variance are treated
/// as numerically zero and never selected.
pub const NEGLIGIBLE_RATIO: f64 = 1e-12;

/// Outcome of the core/residual analysis of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub layer: usize,
    /// Core (frozen) and residual filter counts.
    pub f: usize,
    pub r: usize,
    pub v_t: f64,
    pub v_f: f64,
    pub v_r: f64,
    /// Residual variance explained by the core basis.
    pub v_r_proj: f64,
    /// Residual variance left after subtracting the projection.
    pub v_r_new: f64,
    /// Component variances of the analysed residual, as fractions of `v_r`
    /// (of `v_t` when `f = 0`), descending.
    pub residual_ratios: Vec<f64>,
    /// Accumulator start: `v_r_proj / v_r` with projection-subtraction, 0
    /// otherwise.
    pub x_start: f64,
    /// Filters the threshold loop asked for, before capping.
    pub accumulated: usize,
    /// Filters to add: `accumulated` capped to `r - 1` (but at least 1 when
    /// `f = 0`).
    pub selected: usize,
    pub capped: bool,
    pub projection_subtraction: bool,
}

fn check_threshold(x: f64) -> Result<f64> {
    if x > 0.0 && x <= 100.0 {
        Ok(x / 100.0)
    } else {
        Err(Error::BadThreshold(x))
    }
}

/// Slack on the accumulator comparison so that rounding in the running sum
/// cannot tip an exactly-met threshold (e.g. 19 of 20 equal components at
/// 95%) into one extra component.
pub const SCAN_TOLERANCE: f64 = 1e-12;

/// Adds components in order while the accumulator is below `target`.
fn scan(start: f64, ratios: &[f64], target: f64) -> usize {
    let (mut acc, mut count) = (start, 0);
    for &p in ratios {
        if acc >= target - SCAN_TOLERANCE {
            break;
        }
        if p <= NEGLIGIBLE_RATIO {
            break;
        }
        acc += p;
        count += 1;
    }
    count
}

/// Number of principal components of `a` needed to explain `x`% of its
/// variance, in `[1, n_filters]`. A dead (all-constant) layer yields 1.
pub fn count_filters_first_task(a: &ActivationMatrix, x: f64) -> Result<usize> {
    Ok(first_task_analysis(a, x)?.1)
}

fn first_task_analysis(a: &ActivationMatrix, x: f64) -> Result<(Vec<f64>, usize, f64)> {
    let target = check_threshold(x)?;
    let lambdas = pca_variances(&a.centered)?;
    let total: f64 = lambdas.iter().sum();
    if total <= 0.0 {
        warn!("layer {}: all-constant activations, keeping one filter", a.layer);
        return Ok((vec![0.0; lambdas.len()], 1, 0.0));
    }
    let ratios: Vec<f64> = lambdas.iter().map(|l| l / total).collect();
    Ok((ratios.clone(), scan(0.0, &ratios, target).max(1), total))
}

/// Core/residual analysis of a layer with `f` frozen filters.
///
/// The residual block is stripped of its projection onto the column span of
/// the core block and only the variance left over is counted, starting the
/// accumulator at the fraction the core already explains. `f = 0` reduces
/// to [`count_filters_first_task`]. A layer without residual filters is
/// reported as [`Error::ResourceExhausted`].
pub fn projection_subtraction_pca(a: &ActivationMatrix, f: usize, x: f64) -> Result<ProjectionReport> {
    analyse(a, f, x, true)
}

/// Ablation: plain PCA on the residual block, accumulator starting at 0.
pub fn plain_residual_pca(a: &ActivationMatrix, f: usize, x: f64) -> Result<ProjectionReport> {
    analyse(a, f, x, false)
}

fn analyse(a: &ActivationMatrix, f: usize, x: f64, subtract: bool) -> Result<ProjectionReport> {
    let target = check_threshold(x)?;
    let n_o = a.n_filters();
    if f >= n_o {
        return Err(Error::ResourceExhausted { layer: a.layer });
    }
    let r = n_o - f;
    let n = a.n_samples();
    let v_t = trace_variance(&a.centered, n)?;

    if f == 0 {
        let (ratios, count, _) = first_task_analysis(a, x)?;
        return Ok(finish(a.layer, 0, r, (v_t, 0.0, v_t, 0.0, v_t), ratios, 0.0, count, subtract));
    }

    let a_f = a.centered.columns(0..f)?;
    let a_r = a.centered.columns(f..n_o)?;
    let v_f = trace_variance(&a_f, n)?;
    let v_r = trace_variance(&a_r, n)?;
    let svd = reduced_svd_via_gram(&a_f)?;
    let (v_r_proj, a_r_new) = match &svd.left_basis {
        Some(u) => {
            let proj = project_onto_basis(u, &a_r)?;
            (trace_variance(&proj, n)?, a_r.sub(&proj)?)
        }
        None => (0.0, a_r.clone()),
    };
    let v_r_new = trace_variance(&a_r_new, n)?;

    if v_r <= 0.0 {
        warn!("layer {}: residual filters carry no variance, adding none", a.layer);
        return Ok(finish(a.layer, f, r, (v_t, v_f, v_r, v_r_proj, v_r_new), vec![0.0; r], 0.0, 0, subtract));
    }
    let analysed = if subtract { &a_r_new } else { &a_r };
    let ratios: Vec<f64> = pca_variances(analysed)?.iter().map(|l| l / v_r).collect();
    let start = if subtract { v_r_proj / v_r } else { 0.0 };
    let count = scan(start, &ratios, target);
    Ok(finish(a.layer, f, r, (v_t, v_f, v_r, v_r_proj, v_r_new), ratios, start, count, subtract))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    layer: usize,
    f: usize,
    r: usize,
    (v_t, v_f, v_r, v_r_proj, v_r_new): (f64, f64, f64, f64, f64),
    residual_ratios: Vec<f64>,
    x_start: f64,
    accumulated: usize,
    projection_subtraction: bool,
) -> ProjectionReport {
    // a first task keeps at least one filter even in a width-1 layer
    let selected = if f == 0 { accumulated.min(r - 1).max(1) } else { accumulated.min(r - 1) };
    ProjectionReport {
        layer,
        f,
        r,
        v_t,
        v_f,
        v_r,
        v_r_proj,
        v_r_new,
        residual_ratios,
        x_start,
        accumulated,
        selected,
        capped: selected < accumulated,
        projection_subtraction,
    }
}
