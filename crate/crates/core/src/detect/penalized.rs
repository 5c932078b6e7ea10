// SPDX-License-Identifier: MIT OR Apache-2.0

//! Detectors built on a penalized fit of the cumulative block design.

use nalgebra::DVector;

use crate::cusum::{cusum_test, CusumWindow};
use crate::data::{Algorithm, Dataset, DetectionResult, Diagnostics, Segmentation};
use crate::error::Result;
use crate::ols::chi2_quantile;
use crate::solver::{
    lambda_grid, lambda_max, select_lambda_bic_with, solve_group_penalized, support_refit, BicRss, PenaltyKind,
    PenaltySpec, SegmentedDesign, SolveReport,
};

use super::least_squares::detect_lsmcpda;
use super::{
    assemble, clip_window, finish, prepare, screen_boundaries, DetectorConfig, Hit, Prepared, Stages, Step4Skip,
    TestBackend,
};

const CUSUM_MIN_LEN: usize = 17;

/// Adaptive weights from least-squares locations: boundaries attributed to a
/// detected change get `1 / (c q)^nu`, all others `(sqrt(m) / q)^nu`. The
/// first group gets `group0_weight`, or `1 / q` by default.
pub fn almcpda_initial_weights(
    seg: &Segmentation,
    ls_locations: &[usize],
    q: usize,
    config: &DetectorConfig,
) -> Result<Vec<f64>> {
    let qf = q as f64;
    let mut w = vec![((seg.m as f64).sqrt() / qf).powf(config.nu); seg.p_n + 1];
    w[0] = config.group0_weight.unwrap_or(1.0 / qf);
    for &a in ls_locations {
        if let Some(r) = nearest_boundary(seg, a) {
            w[r] = 1.0 / (config.c * qf).powf(config.nu);
        }
    }
    Ok(w)
}

/// Boundary whose block end is closest to `a`; ties go to the lower one.
fn nearest_boundary(seg: &Segmentation, a: usize) -> Option<usize> {
    (1..=seg.p_n).min_by_key(|&r| seg.boundary_location(r).abs_diff(a))
}

fn group_deltas(rep: &SolveReport, q: usize, p_n: usize) -> Vec<DVector<f64>> {
    (1..=p_n).map(|g| DVector::from_column_slice(rep.group(g, q))).collect()
}

fn screen_only(
    data: &Dataset,
    algorithm: Algorithm,
    seg: &Segmentation,
    deltas: &[DVector<f64>],
    diag: Diagnostics,
) -> Result<DetectionResult> {
    let active: Vec<usize> = deltas
        .iter()
        .enumerate()
        .filter(|(_, d)| d.amax() > 0.0)
        .map(|(l, _)| l + 1)
        .collect();
    let locations = active.iter().map(|&r| seg.boundary_location(r)).collect();
    assemble(data, algorithm, active, locations, diag)
}

/// Screens the jump estimates, confirms survivors with `backend` and
/// returns the hits to refine.
fn confirm(
    data: &Dataset,
    prep: &Prepared,
    deltas: &[DVector<f64>],
    backend: TestBackend,
    config: &DetectorConfig,
    diag: &mut Diagnostics,
) -> Result<Vec<Hit>> {
    let seg = &prep.seg;
    let q = data.q();
    let screen = screen_boundaries(deltas, config.step3_lambda, config.gamma_scad);
    diag.screened_boundaries = screen.selected.clone();
    let sel = &screen.selected;
    let critical = chi2_quantile(config.alpha, q)?;
    let m = seg.m as isize;
    let mut hits = Vec::new();
    let mut idx = 0;
    while idx < sel.len() {
        let s = sel[idx];
        let adjacent = sel.get(idx + 1) == Some(&(s + 1));
        let skip_next = match config.step4_skip {
            Step4Skip::Verbatim => true,
            Step4Skip::Adjacent => adjacent,
        };
        let end = seg.boundary_location(s) as isize;
        let last = if adjacent && skip_next {
            seg.boundary_location(s + 1) as isize
        } else {
            end
        };
        let window = clip_window(end - m, last + m, seg.n);
        let significant = match backend {
            TestBackend::ChiSquare => {
                if prep.est.fits[s].rank_deficient {
                    diag.unresolvable_boundaries.push(s);
                    false
                } else {
                    let d = &deltas[s - 1];
                    let quad = d.dot(&(prep.est.gram(s + 1) * d));
                    let stat = (seg.p_n - s) as f64 * quad / (q as f64 * prep.sigma2);
                    stat >= critical
                }
            }
            TestBackend::Cusum => {
                let w = CusumWindow::new(window.0 + 1, window.1);
                if w.len() < CUSUM_MIN_LEN.max(2 * q + 2) {
                    diag.cusum_fallbacks += 1;
                    true
                } else {
                    cusum_test(data, w, config.alpha)?.reject
                }
            }
        };
        if !significant {
            idx += 1;
            continue;
        }
        hits.push(Hit { boundary: s, window });
        idx += if skip_next { 2 } else { 1 };
    }
    Ok(hits)
}

fn adaptive(
    data: &Dataset,
    config: &DetectorConfig,
    algorithm: Algorithm,
    default: TestBackend,
    on_weights: &mut dyn FnMut(&[f64]),
) -> Result<DetectionResult> {
    let mut diag = Diagnostics::default();
    let prep = prepare(data, config, &mut diag)?;
    let ls_config = DetectorConfig {
        stages: Stages::Full,
        test_backend: None,
        ..config.clone()
    };
    let ls = detect_lsmcpda(data, &ls_config)?;
    let weights = almcpda_initial_weights(&prep.seg, &ls.locations, data.q(), config)?;
    on_weights(&weights);
    let design = SegmentedDesign::new(data, &prep.seg)?;
    let grid = lambda_grid(
        lambda_max(&design, &weights),
        config.lambda_grid_size,
        config.lambda_min_ratio,
    );
    let (lambda, rep) = select_lambda_bic_with(&design, &grid, &weights, config.nu, &config.solver, config.bic_rss)?;
    diag.lambda = Some(lambda);
    diag.solver_iterations = rep.iterations;
    let mut deltas = group_deltas(&rep, data.q(), prep.seg.p_n);
    if config.bic_rss == BicRss::Refit {
        if let Some(theta) = support_refit(&design, &rep.active_groups) {
            let refit = SolveReport {
                theta_hat: theta,
                ..rep
            };
            deltas = group_deltas(&refit, data.q(), prep.seg.p_n);
        }
    }
    if config.stages == Stages::ScreenOnly {
        return screen_only(data, algorithm, &prep.seg, &deltas, diag);
    }
    let backend = config.test_backend.unwrap_or(default);
    let hits = confirm(data, &prep, &deltas, backend, config, &mut diag)?;
    finish(data, algorithm, &prep.seg, &hits, config, diag)
}

/// Adaptive-lasso detector with chi-square confirmation.
pub fn detect_almcpda(data: &Dataset, config: &DetectorConfig) -> Result<DetectionResult> {
    adaptive(data, config, Algorithm::Al, TestBackend::ChiSquare, &mut |_| {})
}

/// [`detect_almcpda`] that reports the initial group weights to `on_weights`.
pub fn detect_almcpda_observed(
    data: &Dataset,
    config: &DetectorConfig,
    on_weights: &mut dyn FnMut(&[f64]),
) -> Result<DetectionResult> {
    adaptive(data, config, Algorithm::Al, TestBackend::ChiSquare, on_weights)
}

/// Adaptive-lasso detector with CUSUM confirmation.
pub fn detect_calmcpda(data: &Dataset, config: &DetectorConfig) -> Result<DetectionResult> {
    adaptive(data, config, Algorithm::Cal, TestBackend::Cusum, &mut |_| {})
}

/// Jump estimates from the SCAD or MCP fit at `λ = σ̂ sqrt(2 ln p_n / n)`.
pub(crate) fn concave_deltas(
    data: &Dataset,
    prep: &Prepared,
    config: &DetectorConfig,
    kind: PenaltyKind,
    diag: &mut Diagnostics,
) -> Result<Vec<DVector<f64>>> {
    let spec = match kind {
        PenaltyKind::Mcp => PenaltySpec::mcp,
        _ => PenaltySpec::scad,
    };
    let gamma = if kind == PenaltyKind::Mcp {
        config.gamma_mcp
    } else {
        config.gamma_scad
    };
    let (n, p_n) = (data.n() as f64, prep.seg.p_n as f64);
    let lambda = config
        .penalty_lambda
        .unwrap_or_else(|| prep.sigma2.sqrt() * (2.0 * p_n.ln() / n).sqrt());
    let design = SegmentedDesign::new(data, &prep.seg)?;
    let rep = solve_group_penalized(&design, &spec(lambda, gamma), &config.solver)?;
    diag.lambda = Some(lambda);
    diag.solver_iterations = rep.iterations;
    Ok(group_deltas(&rep, data.q(), prep.seg.p_n))
}

/// SCAD or MCP detector with CUSUM confirmation.
pub fn detect_penalized(data: &Dataset, config: &DetectorConfig, kind: PenaltyKind) -> Result<DetectionResult> {
    let algorithm = if kind == PenaltyKind::Mcp {
        Algorithm::Mcp
    } else {
        Algorithm::Scad
    };
    let mut diag = Diagnostics::default();
    let prep = prepare(data, config, &mut diag)?;
    let deltas = concave_deltas(data, &prep, config, kind, &mut diag)?;
    if config.stages == Stages::ScreenOnly {
        return screen_only(data, algorithm, &prep.seg, &deltas, diag);
    }
    let backend = config.test_backend.unwrap_or(TestBackend::Cusum);
    let hits = confirm(data, &prep, &deltas, backend, config, &mut diag)?;
    finish(data, algorithm, &prep.seg, &hits, config, diag)
}
