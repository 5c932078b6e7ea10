// SPDX-License-Identifier: MIT OR Apache-2.0

//! The detection algorithms and their shared configuration.

mod least_squares;
mod penalized;
mod select;

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::cusum::refine_changepoint;
use crate::data::{make_segmentation, Algorithm, Dataset, DetectionResult, Diagnostics, Segmentation};
use crate::error::{Result, SeglineError};
use crate::ols::{estimate_deltas, segment_ols, DeltaEstimates, WaldNormalization};
use crate::penalty::scad_threshold_scalar;
use crate::solver::{BicRss, SolverOptions};

pub use least_squares::{detect_clsmcpda, detect_lsmcpda};
pub use penalized::{
    almcpda_initial_weights, detect_almcpda, detect_almcpda_observed, detect_calmcpda, detect_penalized,
};
pub use select::{select_pn, PnSelection};

/// Boundary test used to confirm candidates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestBackend {
    ChiSquare,
    Cusum,
}

/// Branching of the least-squares scan.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Step2Logic {
    /// A significant single test advances the scan; otherwise the pair test
    /// decides whether to flag.
    #[default]
    Verbatim,
    /// The pair test runs only after a significant single test.
    Inverted,
}

/// How far the confirmation loop jumps after accepting a boundary.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Step4Skip {
    /// Always skip the next selected boundary.
    Verbatim,
    /// Skip the next selected boundary only when it is adjacent.
    #[default]
    Adjacent,
}

/// How much of an algorithm to run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stages {
    #[default]
    Full,
    /// Stop after the estimation step and report flagged block ends unrefined.
    ScreenOnly,
}

/// Number of boundaries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PnChoice {
    Fixed(usize),
    /// `floor(n / 50)`, at least 1.
    #[default]
    Auto,
}

impl PnChoice {
    pub fn resolve(self, n: usize) -> usize {
        match self {
            PnChoice::Fixed(p) => p,
            PnChoice::Auto => (n / 50).max(1),
        }
    }
}

/// Tuning shared by all detectors. Missing fields deserialize to defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub alpha: f64,
    pub p_n: PnChoice,
    /// Initial-estimate scale at boundaries flagged by the least-squares pass.
    pub c: f64,
    pub nu: f64,
    pub gamma_scad: f64,
    pub gamma_mcp: f64,
    /// Threshold of the scalar SCAD screen.
    pub step3_lambda: f64,
    /// Overrides the algorithm's own test when set.
    pub test_backend: Option<TestBackend>,
    pub wald_normalization: WaldNormalization,
    pub step2_logic: Step2Logic,
    pub step4_skip: Step4Skip,
    pub stages: Stages,
    /// Maximum number of reported changes; defaults to `p_n`.
    pub k_upper: Option<usize>,
    /// Weight of the first-block coefficients; defaults to `1 / q`.
    pub group0_weight: Option<f64>,
    pub lambda_grid_size: usize,
    pub lambda_min_ratio: f64,
    /// Fit scored when choosing the adaptive-lasso `λ`.
    pub bic_rss: BicRss,
    /// Overrides `sigma * sqrt(2 log p_n / n)` for SCAD and MCP.
    pub penalty_lambda: Option<f64>,
    #[serde(skip)]
    pub solver: SolverOptions,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            p_n: PnChoice::Auto,
            c: 1.0,
            nu: 1.0,
            gamma_scad: 3.7,
            gamma_mcp: 2.4,
            step3_lambda: 0.02,
            test_backend: None,
            wald_normalization: WaldNormalization::Verbatim,
            step2_logic: Step2Logic::Verbatim,
            step4_skip: Step4Skip::Adjacent,
            stages: Stages::Full,
            k_upper: None,
            group0_weight: None,
            lambda_grid_size: 50,
            lambda_min_ratio: 1e-4,
            bic_rss: BicRss::default(),
            penalty_lambda: None,
            solver: SolverOptions::default(),
        }
    }
}

impl DetectorConfig {
    pub fn with_pn(mut self, p_n: usize) -> Self {
        self.p_n = PnChoice::Fixed(p_n);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(SeglineError::invalid_input(format!(
                "alpha must lie in (0, 1); got {}",
                self.alpha
            )));
        }
        if !(self.c > 0.0) || !(self.nu > 0.0) {
            return Err(SeglineError::invalid_input("c and nu must be positive"));
        }
        if !(self.gamma_scad > 2.0) || !(self.gamma_mcp > 1.0) {
            return Err(SeglineError::invalid_input(
                "gamma_scad must exceed 2 and gamma_mcp must exceed 1",
            ));
        }
        if !(self.step3_lambda > 0.0) {
            return Err(SeglineError::invalid_input("step3_lambda must be positive"));
        }
        if self.lambda_grid_size == 0 || !(self.lambda_min_ratio > 0.0 && self.lambda_min_ratio < 1.0) {
            return Err(SeglineError::invalid_input("invalid lambda grid settings"));
        }
        if let PnChoice::Fixed(0) = self.p_n {
            return Err(SeglineError::invalid_input("p_n must be >= 1"));
        }
        Ok(())
    }
}

/// Scalar SCAD screen of the jump estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryScreen {
    /// `z_l = |d_l|_inf`, one per boundary.
    pub z: Vec<f64>,
    pub mu_tilde: Vec<f64>,
    /// 1-based boundaries with a nonzero thresholded value, increasing.
    pub selected: Vec<usize>,
}

/// Thresholds `|d_l|_inf` with the scalar SCAD rule.
pub fn screen_boundaries(deltas: &[DVector<f64>], lambda: f64, gamma: f64) -> BoundaryScreen {
    let z: Vec<f64> = deltas.iter().map(|d| d.amax()).collect();
    let mu_tilde: Vec<f64> = z.iter().map(|&v| scad_threshold_scalar(v, lambda, gamma)).collect();
    let selected = mu_tilde
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(l, _)| l + 1)
        .collect();
    BoundaryScreen { z, mu_tilde, selected }
}

/// Segmentation and least-squares quantities shared by every algorithm.
pub(crate) struct Prepared {
    pub seg: Segmentation,
    pub est: DeltaEstimates,
    /// Noise variance, floored away from zero for exact data.
    pub sigma2: f64,
}

pub(crate) fn prepare(data: &Dataset, config: &DetectorConfig, diag: &mut Diagnostics) -> Result<Prepared> {
    config.validate()?;
    let p_n = config.p_n.resolve(data.n());
    let seg = make_segmentation(data.n(), p_n, data.q())?;
    let est = estimate_deltas(data, &seg)?;
    diag.rank_deficient_blocks = est.rank_deficient_blocks();
    let scale = data.responses().iter().map(|v| v * v).sum::<f64>() / data.n() as f64;
    let floor = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let sigma2 = if est.sigma2_hat < floor {
        diag.notes
            .push("noise variance estimate floored (near-exact fit)".into());
        floor
    } else {
        est.sigma2_hat
    };
    Ok(Prepared { seg, est, sigma2 })
}

/// A flagged boundary and the window searched to refine it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Hit {
    pub boundary: usize,
    pub window: (usize, usize),
}

/// Window `[lo, hi]` clipped to `[1, n]`.
pub(crate) fn clip_window(lo: isize, hi: isize, n: usize) -> (usize, usize) {
    (lo.max(1) as usize, (hi.min(n as isize)).max(1) as usize)
}

/// Refines every hit, merges results closer than `m`, caps the count and
/// assembles the final result.
pub(crate) fn finish(
    data: &Dataset,
    algorithm: Algorithm,
    seg: &Segmentation,
    hits: &[Hit],
    config: &DetectorConfig,
    mut diag: Diagnostics,
) -> Result<DetectionResult> {
    let q = data.q();
    let mut refined: Vec<(usize, (usize, usize))> = Vec::new();
    for h in hits {
        let (lo, hi) = h.window;
        if hi < lo || hi + 1 - lo < 2 * (q + 1) {
            diag.unresolvable_boundaries.push(h.boundary);
            continue;
        }
        refined.push((refine_changepoint(data, h.window)?, h.window));
    }
    refined.sort();
    let mut merged: Vec<(usize, (usize, usize))> = Vec::new();
    for cand in refined {
        match merged.last_mut() {
            Some(prev) if cand.0 < prev.0 + seg.m => {
                diag.merged_hits += 1;
                let span = (prev.1 .0.min(cand.1 .0), prev.1 .1.max(cand.1 .1));
                let keep_prev = split_rss(data, span, prev.0)? <= split_rss(data, span, cand.0)?;
                *prev = if keep_prev { (prev.0, span) } else { (cand.0, span) };
            }
            _ => merged.push(cand),
        }
    }
    let mut locations: Vec<usize> = merged.into_iter().map(|(l, _)| l).collect();
    let k_upper = config.k_upper.unwrap_or(seg.p_n);
    if locations.len() > k_upper {
        diag.notes
            .push(format!("{} changes truncated to k_upper={k_upper}", locations.len()));
        locations.truncate(k_upper);
    }
    assemble(
        data,
        algorithm,
        hits.iter().map(|h| h.boundary).collect(),
        locations,
        diag,
    )
}

/// Builds a result from final locations.
pub(crate) fn assemble(
    data: &Dataset,
    algorithm: Algorithm,
    mut boundary_hits: Vec<usize>,
    locations: Vec<usize>,
    diag: Diagnostics,
) -> Result<DetectionResult> {
    boundary_hits.sort_unstable();
    boundary_hits.dedup();
    Ok(DetectionResult {
        algorithm,
        k_hat: locations.len(),
        rss: refit_rss(data, &locations)?,
        locations,
        boundary_hits,
        runtime_s: 0.0,
        diagnostics: diag,
    })
}

fn split_rss(data: &Dataset, span: (usize, usize), k: usize) -> Result<f64> {
    Ok(segment_ols(data, (span.0, k))?.rss + segment_ols(data, (k + 1, span.1))?.rss)
}

/// RSS of separate OLS fits on the regimes delimited by `locations`.
pub fn refit_rss(data: &Dataset, locations: &[usize]) -> Result<f64> {
    let mut start = 1;
    let mut total = 0.0;
    for &a in locations.iter().chain(std::iter::once(&data.n())) {
        if a < start {
            return Err(SeglineError::invalid_input("locations must be strictly increasing"));
        }
        total += segment_ols(data, (start, a))?.rss;
        start = a + 1;
    }
    Ok(total)
}

/// Runs `algorithm` and records its wall-clock time.
pub fn detect(data: &Dataset, algorithm: Algorithm, config: &DetectorConfig) -> Result<DetectionResult> {
    let t0 = Instant::now();
    let mut result = match algorithm {
        Algorithm::Ls => detect_lsmcpda(data, config),
        Algorithm::Cls => detect_clsmcpda(data, config),
        Algorithm::Al => detect_almcpda(data, config),
        Algorithm::Cal => detect_calmcpda(data, config),
        Algorithm::Scad => detect_penalized(data, config, crate::solver::PenaltyKind::Scad),
        Algorithm::Mcp => detect_penalized(data, config, crate::solver::PenaltyKind::Mcp),
    }?;
    result.runtime_s = t0.elapsed().as_secs_f64();
    Ok(result)
}
